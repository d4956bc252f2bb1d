//! Experiment orchestration: configuration, the per-slot simulation loop,
//! steady-state metrics, load sweeps, CSV artifacts and the energy/CO₂
//! calculator.
//!
//! One slot runs: propagate → snapshot → forward (service) → admit (landed
//! and new packets) → end-of-slot hooks (frame history, training).

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::agent::{AgentConfig, Policy, PolicyKind, TrainStats};
use crate::constellation::{
    build_constellation, snapshot, ConstellationConfig, NodeId, Roster, SatellitePosition, TopologySnapshot,
};
use crate::error::{Error, Result};
use crate::pomdp_env::{ObservationScales, RewardWeights};
use crate::traffic::{Packet, PacketIds, TrafficConfig, TrafficGenerator};
use crate::transport::{DecisionView, LinkConfig, Network, PacketEvent, Router};

/// Upper bound on training episodes per run.
pub const MAX_EPISODES: usize = 1300;
pub const DEFAULT_LOADS_MBPS: [f64; 3] = [120.0, 180.0, 240.0];

const TRAINING_TRAFFIC_SALT: u64 = 0x5EED_7EA1_0000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub seed: Option<u64>,
    pub episodes: usize,
    pub slots_per_episode: u64,
    /// Evaluation length; defaults to `slots_per_episode`.
    pub eval_slots: Option<u64>,
    pub warmup_fraction: f64,
    pub out_dir: Option<PathBuf>,
    /// Also write per-slot queue counters and arrival counts.
    pub per_slot_log: bool,
    /// Initial parameters for learning policies.
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Proposed,
            seed: None,
            episodes: 10,
            slots_per_episode: 500,
            eval_slots: None,
            warmup_fraction: 0.1,
            out_dir: None,
            per_slot_log: false,
            checkpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub constellation: ConstellationConfig,
    pub traffic: TrafficConfig,
    pub link: LinkConfig,
    pub reward: RewardWeights,
    pub agent: AgentConfig,
    pub run: RunConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|source| Error::ConfigParse {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn seed(&self) -> Result<u64> {
        self.run
            .seed
            .ok_or_else(|| Error::config("run.seed", "a seed is required"))
    }

    pub fn eval_slots(&self) -> u64 {
        self.run.eval_slots.unwrap_or(self.run.slots_per_episode)
    }

    pub fn validate(&self) -> Result<()> {
        self.constellation.validate()?;
        self.traffic.validate(self.constellation.num_satellites)?;
        self.link.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        self.seed()?;
        if self.run.episodes > MAX_EPISODES {
            return Err(Error::config("run.episodes", format!("must be <= {MAX_EPISODES}")));
        }
        if self.run.slots_per_episode == 0 {
            return Err(Error::config("run.slots_per_episode", "must be > 0"));
        }
        if self.eval_slots() == 0 {
            return Err(Error::config("run.eval_slots", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.run.warmup_fraction) {
            return Err(Error::config("run.warmup_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Nominal aggregate offered load in Mbps, hotspots excluded.
    pub fn offered_load_mbps(&self) -> f64 {
        match self.traffic.base_rate_lambda0 {
            Some(l) => {
                l * self.traffic.packet_bits() * self.constellation.num_satellites as f64
                    / self.constellation.slot_duration_s
                    / 1e6
            }
            None => self.traffic.offered_load_mbps,
        }
    }
}

/// Steady-state results of one evaluation episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub throughput_mbps: f64,
    /// Realized injection rate over the same window.
    pub offered_mbps: f64,
    /// `None` when nothing was delivered.
    pub mean_delay_ms: Option<f64>,
    pub loss_rate: f64,
    pub mean_queue: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub measured_slots: u64,
    pub disconnected_slots: u64,
    pub conservation_holds: bool,
}

/// What happened to one packet created at `created_slot`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fate {
    Delivered { delay_s: f64 },
    Dropped,
}

/// Raw evaluation log from which [`RunMetrics`] are computed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub slot_duration_s: f64,
    pub packet_bits: f64,
    /// Number of leading slots excluded from averages.
    pub warmup_slots: u64,
    /// Packets generated per slot.
    pub generated: Vec<u64>,
    /// Mean queue length across nodes at the end of each slot.
    pub mean_queue: Vec<f64>,
    /// Terminal events as (created slot, fate).
    pub fates: Vec<(u64, Fate)>,
    pub disconnected_slots: u64,
    pub conservation_holds: bool,
}

impl MetricsLog {
    fn record_events(&mut self, events: &[PacketEvent]) {
        for e in events {
            match e {
                PacketEvent::Delivered { packet, delay_s, .. } => self
                    .fates
                    .push((packet.created_slot, Fate::Delivered { delay_s: *delay_s })),
                PacketEvent::Dropped { packet, .. } => self.fates.push((packet.created_slot, Fate::Dropped)),
            }
        }
    }
}

/// Averages over packets created, and slots elapsed, after the warm-up.
pub fn compute_metrics(log: &MetricsLog) -> RunMetrics {
    let total = log.generated.len() as u64;
    let warm = log.warmup_slots.min(total);
    let measured = total - warm;
    let generated: u64 = log.generated[warm as usize..].iter().sum();
    let mut delivered = 0u64;
    let mut dropped = 0u64;
    let mut delay_sum = 0.0;
    for &(created, fate) in &log.fates {
        if created < warm {
            continue;
        }
        match fate {
            Fate::Delivered { delay_s } => {
                delivered += 1;
                delay_sum += delay_s;
            }
            Fate::Dropped => dropped += 1,
        }
    }
    let seconds = measured as f64 * log.slot_duration_s;
    let rate = |count: u64| {
        if seconds > 0.0 {
            count as f64 * log.packet_bits / seconds / 1e6
        } else {
            0.0
        }
    };
    let queues = &log.mean_queue[warm as usize..];
    RunMetrics {
        throughput_mbps: rate(delivered),
        offered_mbps: rate(generated),
        mean_delay_ms: (delivered > 0).then(|| delay_sum / delivered as f64 * 1e3),
        loss_rate: if generated > 0 {
            dropped as f64 / generated as f64
        } else {
            0.0
        },
        mean_queue: if queues.is_empty() {
            0.0
        } else {
            queues.iter().sum::<f64>() / queues.len() as f64
        },
        generated,
        delivered,
        dropped,
        measured_slots: measured,
        disconnected_slots: log.disconnected_slots,
        conservation_holds: log.conservation_holds,
    }
}

/// Everything observable about one simulated slot.
#[derive(Debug, Clone)]
pub struct SlotRecord {
    pub slot: u64,
    pub events: Vec<PacketEvent>,
    /// New packets per source node.
    pub arrivals: Vec<u64>,
    pub connected: bool,
    pub train: Option<TrainStats>,
}

/// Times each routing call; used to estimate per-decision compute.
struct Timed<'a, R: ?Sized> {
    inner: &'a mut R,
    elapsed: &'a mut Duration,
    calls: &'a mut u64,
}

impl<R: Router + ?Sized> Router for Timed<'_, R> {
    fn next_hop(&mut self, view: &DecisionView<'_>, packet: &Packet) -> Option<NodeId> {
        let start = Instant::now();
        let hop = self.inner.next_hop(view, packet);
        *self.elapsed += start.elapsed();
        *self.calls += 1;
        hop
    }
}

/// A configured network, traffic source and policy, stepped one slot at a time.
pub struct Simulation {
    config: ExperimentConfig,
    roster: Roster,
    network: Network,
    traffic: TrafficGenerator,
    ids: PacketIds,
    policy: Policy,
    fixed: Option<(Arc<[SatellitePosition]>, TopologySnapshot)>,
    decision_time: Duration,
    decisions: u64,
}

impl Simulation {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let seed = config.seed()?;
        let c = &config.constellation;
        let roster = build_constellation(c)?;
        let n = roster.len();
        let network = Network::new(n, &config.link, c.slot_duration_s, config.traffic.packet_bits());
        let traffic = TrafficGenerator::new(&config.traffic, n, c.slot_duration_s, seed ^ TRAINING_TRAFFIC_SALT)?;
        let scales = ObservationScales {
            altitude_km: c.altitude_km,
            orbit_radius_km: c.orbit_radius_km(),
        };
        let mut policy = Policy::build(config.run.policy, &config.agent, &config.reward, scales, n, seed)?;
        if let (Some(path), Some(agent)) = (&config.run.checkpoint, policy.agent_mut()) {
            let net = crate::neural::QNetwork::load(fs::File::open(path)?)?;
            if net.shapes() != agent.online().shapes() {
                return Err(Error::Checkpoint(format!(
                    "{} does not match the configured architecture",
                    path.display()
                )));
            }
            agent.set_online(net);
        }
        let fixed = if c.static_topology {
            let pos: Arc<[SatellitePosition]> = roster.propagate(0).into();
            let snap = snapshot(0, &pos, c);
            Some((pos, snap))
        } else {
            None
        };
        Ok(Self {
            config: config.clone(),
            roster,
            network,
            traffic,
            ids: PacketIds::default(),
            policy,
            fixed,
            decision_time: Duration::ZERO,
            decisions: 0,
        })
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut Policy {
        &mut self.policy
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    /// Mean wall-clock time per routing call, milliseconds.
    pub fn time_per_decision_ms(&self) -> Option<f64> {
        (self.decisions > 0).then(|| self.decision_time.as_secs_f64() * 1e3 / self.decisions as f64)
    }

    pub fn decisions(&self) -> u64 {
        self.decisions
    }

    /// Empties the network and episode state, keeping learned parameters.
    pub fn reset_episode(&mut self) {
        self.network.reset();
        self.policy.reset_episode();
    }

    /// Restarts traffic from the evaluation stream and freezes learning.
    pub fn begin_evaluation(&mut self) -> Result<()> {
        let c = &self.config.constellation;
        self.traffic = TrafficGenerator::new(
            &self.config.traffic,
            self.roster.len(),
            c.slot_duration_s,
            self.config.seed()?,
        )?;
        self.policy.set_training(false);
        self.reset_episode();
        self.decision_time = Duration::ZERO;
        self.decisions = 0;
        Ok(())
    }

    pub fn topology(&self, t: u64) -> (Arc<[SatellitePosition]>, TopologySnapshot) {
        match &self.fixed {
            Some((pos, snap)) => {
                let mut snap = snap.clone();
                snap.slot = t;
                (Arc::clone(pos), snap)
            }
            None => {
                let pos: Arc<[SatellitePosition]> = self.roster.propagate(t).into();
                let snap = snapshot(t, &pos, &self.config.constellation);
                (pos, snap)
            }
        }
    }

    /// Runs slot `t` (topology time and traffic phase).
    pub fn step(&mut self, t: u64) -> Result<SlotRecord> {
        let (positions, snap) = self.topology(t);
        self.policy.begin_slot(&positions);
        let mut timed = Timed {
            inner: &mut self.policy,
            elapsed: &mut self.decision_time,
            calls: &mut self.decisions,
        };
        let mut events = self.network.forward(t, &snap, &positions, &mut timed)?;
        let (packets, arrivals) = self.traffic.generate(t, &mut self.ids);
        let admitted = self.network.admit(t, packets, &snap, &positions, &mut timed)?;
        self.policy.on_events(&events);
        self.policy.on_events(&admitted);
        events.extend(admitted);
        let train = self.policy.end_slot(t, &snap, &self.network)?;
        Ok(SlotRecord {
            slot: t,
            events,
            arrivals,
            connected: snap.is_connected(),
            train,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub step: u64,
    pub epsilon: f64,
    pub loss: f64,
    pub mean_reward: f64,
    pub buffer_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub policy: String,
    pub load_mbps: f64,
    pub seed: u64,
    pub throughput_mbps: f64,
    pub delay_ms: Option<f64>,
    pub loss_rate: f64,
    pub mean_queue: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotQueueRow {
    pub slot: u64,
    pub node: NodeId,
    pub queue_len: usize,
    pub delivered: u64,
    pub dropped_overflow: u64,
    pub dropped_ttl: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalRow {
    pub slot: u64,
    pub node: NodeId,
    pub arrivals: u64,
}

pub struct RunOutcome {
    pub metrics: RunMetrics,
    pub summary: SummaryRow,
    pub training_log: Vec<TrainLogRow>,
    pub slot_rows: Vec<SlotQueueRow>,
    pub arrival_rows: Vec<ArrivalRow>,
    /// Mean wall-clock time per evaluation routing call.
    pub time_per_decision_ms: Option<f64>,
    pub eval_decisions: u64,
    pub policy: Policy,
}

/// Trains (learning policies only), then evaluates greedily; no files written.
pub fn simulate(config: &ExperimentConfig) -> Result<RunOutcome> {
    let mut sim = Simulation::new(config)?;
    let mut training_log = Vec::new();
    if config.run.policy.is_learning() {
        let mut clock = 0u64;
        for _ in 0..config.run.episodes {
            sim.reset_episode();
            for _ in 0..config.run.slots_per_episode {
                let rec = sim.step(clock)?;
                clock += 1;
                if let (Some(stats), Some(agent)) = (rec.train, sim.policy().agent()) {
                    training_log.push(TrainLogRow {
                        step: agent.step(),
                        epsilon: agent.config().epsilon.epsilon(agent.step()),
                        loss: stats.loss,
                        mean_reward: stats.mean_reward,
                        buffer_size: agent.buffer().len(),
                    });
                }
            }
        }
    }

    sim.begin_evaluation()?;
    let slots = config.eval_slots();
    let mut log = MetricsLog {
        slot_duration_s: config.constellation.slot_duration_s,
        packet_bits: config.traffic.packet_bits(),
        warmup_slots: (slots as f64 * config.run.warmup_fraction).ceil() as u64,
        conservation_holds: true,
        ..MetricsLog::default()
    };
    let mut slot_rows = Vec::new();
    let mut arrival_rows = Vec::new();
    for t in 0..slots {
        let rec = sim.step(t)?;
        log.generated.push(rec.arrivals.iter().sum());
        log.record_events(&rec.events);
        if !rec.connected {
            log.disconnected_slots += 1;
        }
        let nodes = sim.network().nodes();
        log.mean_queue
            .push(nodes.iter().map(|n| n.queue_len() as f64).sum::<f64>() / nodes.len() as f64);
        log.conservation_holds &= sim.network().conservation_holds();
        if config.run.per_slot_log {
            for n in nodes {
                slot_rows.push(SlotQueueRow {
                    slot: t,
                    node: n.id,
                    queue_len: n.queue_len(),
                    delivered: n.counters.delivered,
                    dropped_overflow: n.counters.dropped_overflow,
                    dropped_ttl: n.counters.dropped_ttl,
                });
            }
            for (node, &arrivals) in rec.arrivals.iter().enumerate() {
                arrival_rows.push(ArrivalRow {
                    slot: t,
                    node,
                    arrivals,
                });
            }
        }
    }
    let metrics = compute_metrics(&log);
    let summary = SummaryRow {
        policy: config.run.policy.name().to_string(),
        load_mbps: config.offered_load_mbps(),
        seed: config.seed()?,
        throughput_mbps: metrics.throughput_mbps,
        delay_ms: metrics.mean_delay_ms,
        loss_rate: metrics.loss_rate,
        mean_queue: metrics.mean_queue,
    };
    Ok(RunOutcome {
        metrics,
        summary,
        training_log,
        slot_rows,
        arrival_rows,
        time_per_decision_ms: sim.time_per_decision_ms(),
        eval_decisions: sim.decisions(),
        policy: sim.policy,
    })
}

pub const SUMMARY_FILE: &str = "summary.csv";
pub const TRAINING_LOG_FILE: &str = "training_log.csv";
pub const PER_SLOT_FILE: &str = "per_slot.csv";
pub const ARRIVALS_FILE: &str = "arrivals.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// [`simulate`], then writes artifacts under `run.out_dir` when set.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutcome> {
    let outcome = simulate(config)?;
    if let Some(dir) = &config.run.out_dir {
        write_artifacts(dir, config, &outcome)?;
    }
    Ok(outcome)
}

pub fn write_artifacts(dir: &Path, config: &ExperimentConfig, outcome: &RunOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_csv(&dir.join(SUMMARY_FILE), std::slice::from_ref(&outcome.summary))?;
    if config.run.policy.is_learning() {
        write_csv(&dir.join(TRAINING_LOG_FILE), &outcome.training_log)?;
        if let Some(agent) = outcome.policy.agent() {
            agent
                .online()
                .save(std::io::BufWriter::new(fs::File::create(dir.join(CHECKPOINT_FILE))?))?;
        }
    }
    if config.run.per_slot_log {
        write_csv(&dir.join(PER_SLOT_FILE), &outcome.slot_rows)?;
        write_csv(&dir.join(ARRIVALS_FILE), &outcome.arrival_rows)?;
    }
    Ok(())
}

/// Writes rows with a header line, even when `rows` is empty.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    if let Some(first) = rows.first() {
        w.write_record(header_of(first)?)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn header_of<T: Serialize>(row: &T) -> Result<Vec<String>> {
    let mut probe = csv::Writer::from_writer(Vec::new());
    probe.serialize(row)?;
    let bytes = probe.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    let text = String::from_utf8_lossy(&bytes);
    Ok(text
        .lines()
        .next()
        .unwrap_or_default()
        .split(',')
        .map(str::to_string)
        .collect())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Runs one cell per load with the same seed and constellation; writes a
/// combined `summary.csv` under `run.out_dir` when set.
pub fn load_sweep(config: &ExperimentConfig, loads: &[f64]) -> Result<Vec<SummaryRow>> {
    let cells: Vec<ExperimentConfig> = loads
        .iter()
        .map(|&load| {
            let mut c = config.clone();
            c.traffic.offered_load_mbps = load;
            c.traffic.base_rate_lambda0 = None;
            c.run.out_dir = config.run.out_dir.as_ref().map(|d| d.join(format!("load_{load}")));
            c
        })
        .collect();
    let results: Vec<Result<SummaryRow>> = std::thread::scope(|s| {
        let handles: Vec<_> = cells
            .iter()
            .map(|c| s.spawn(move || run_experiment(c).map(|o| o.summary)))
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Shape("sweep cell panicked".into())))
            })
            .collect()
    });
    let rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(dir) = &config.run.out_dir {
        fs::create_dir_all(dir)?;
        write_csv(&dir.join(SUMMARY_FILE), &rows)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GreenReport {
    pub n_decisions: u64,
    pub time_per_decision_ms: f64,
    pub tdp_w: f64,
    pub carbon_intensity_g_per_kwh: f64,
    pub energy_kwh: f64,
    pub co2_g: f64,
}

/// Energy = decisions × time × TDP; CO₂ = energy × grid intensity.
pub fn green_report(
    n_decisions: u64,
    time_per_decision_ms: f64,
    tdp_w: f64,
    intensity_g_per_kwh: f64,
) -> Result<GreenReport> {
    for (name, v) in [
        ("time_per_decision_ms", time_per_decision_ms),
        ("tdp_w", tdp_w),
        ("carbon_intensity", intensity_g_per_kwh),
    ] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::config(name, "must be a finite value >= 0"));
        }
    }
    let hours = n_decisions as f64 * time_per_decision_ms / 1e3 / 3600.0;
    let energy_kwh = hours * tdp_w / 1e3;
    Ok(GreenReport {
        n_decisions,
        time_per_decision_ms,
        tdp_w,
        carbon_intensity_g_per_kwh: intensity_g_per_kwh,
        energy_kwh,
        co2_g: energy_kwh * intensity_g_per_kwh,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn green_rows() {
        let r = green_report(10_000, 2.70, 30.0, 495.0).unwrap();
        assert!((r.energy_kwh - 2.25e-4).abs() < 1e-12);
        assert!((r.co2_g - 0.111375).abs() < 1e-12);
        let r = green_report(10_000, 0.58, 30.0, 495.0).unwrap();
        assert!((r.energy_kwh - 4.8333e-5).abs() < 1e-9);
        assert!((r.co2_g - 0.024).abs() < 5e-4);
        let r = green_report(0, 2.70, 30.0, 495.0).unwrap();
        assert_eq!((r.energy_kwh, r.co2_g), (0.0, 0.0));
        assert!(green_report(1, -1.0, 30.0, 495.0).is_err());
    }

    fn log(generated: Vec<u64>, fates: Vec<(u64, Fate)>) -> MetricsLog {
        MetricsLog {
            slot_duration_s: 0.01,
            packet_bits: 12_000.0,
            warmup_slots: 0,
            mean_queue: vec![0.0; generated.len()],
            generated,
            fates,
            disconnected_slots: 0,
            conservation_holds: true,
        }
    }

    #[test]
    fn loss_and_delay_examples() {
        let mut fates = vec![(0, Fate::Delivered { delay_s: 0.005 }); 900];
        fates.extend(vec![(0, Fate::Dropped); 100]);
        let m = compute_metrics(&log(vec![1000], fates));
        assert!((m.loss_rate - 0.1).abs() < 1e-15);
        assert!((m.mean_delay_ms.unwrap() - 5.0).abs() < 1e-12);
        // 900 x 12 kbit in 10 ms
        assert!((m.throughput_mbps - 1080.0).abs() < 1e-9);
        let m = compute_metrics(&log(vec![10], vec![]));
        assert_eq!(m.mean_delay_ms, None);
        assert_eq!(m.throughput_mbps, 0.0);
    }

    #[test]
    fn warmup_excluded() {
        let mut l = log(
            vec![5, 5],
            vec![(0, Fate::Dropped), (1, Fate::Delivered { delay_s: 0.02 })],
        );
        l.warmup_slots = 1;
        l.mean_queue = vec![100.0, 2.0];
        let m = compute_metrics(&l);
        assert_eq!((m.generated, m.delivered, m.dropped), (5, 1, 0));
        assert_eq!(m.loss_rate, 0.0);
        assert_eq!(m.mean_queue, 2.0);
        assert_eq!(m.measured_slots, 1);
    }

    #[test]
    fn seed_is_mandatory() {
        let c = ExperimentConfig::default();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { ref field, .. }) if field == "run.seed"));
    }

    #[test]
    fn config_round_trips_through_toml() {
        let mut c = ExperimentConfig::default();
        c.run.seed = Some(4);
        let back = ExperimentConfig::from_toml_str(&c.to_toml(), Path::new("mem")).unwrap();
        assert_eq!(back, c);
        let bad = ExperimentConfig::from_toml_str("[constellation]\nnum_planez = 3\n", Path::new("bad.toml"));
        assert!(matches!(bad, Err(Error::ConfigParse { .. })));
    }
}
