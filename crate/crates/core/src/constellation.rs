//! Walker-delta constellation layout, circular-orbit propagation, and the
//! per-slot +grid inter-satellite link topology.
//!
//! Satellite `plane * sats_per_plane + index` sits in orbital plane `plane`
//! at in-plane position `index`. Each satellite links to its two intra-plane
//! neighbors and, while both endpoints stay equatorward of the polar cutoff,
//! to one satellite in each adjacent plane.

use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const EARTH_MU_KM3_PER_S2: f64 = 398_600.441_8;
/// Upper bound on node degree under the +grid pattern.
pub const MAX_DEGREE: usize = 4;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstellationConfig {
    pub num_satellites: usize,
    pub num_planes: usize,
    pub sats_per_plane: usize,
    pub inclination_deg: f64,
    pub altitude_km: f64,
    /// Extra in-plane anomaly applied per plane index.
    pub phasing_offset_deg: f64,
    pub slot_duration_s: f64,
    /// Inter-plane links are severed while either endpoint is above this |latitude|.
    pub polar_cutoff_deg: f64,
    /// Freeze the topology at slot 0 for the whole run.
    pub static_topology: bool,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        Self {
            num_satellites: 45,
            num_planes: 5,
            sats_per_plane: 9,
            inclination_deg: 70.0,
            altitude_km: 570.0,
            phasing_offset_deg: 8.0,
            slot_duration_s: 0.010,
            polar_cutoff_deg: 65.0,
            static_topology: false,
        }
    }
}

impl ConstellationConfig {
    /// A `planes x per_plane` layout with every other field at its default.
    pub fn grid(planes: usize, per_plane: usize) -> Self {
        Self {
            num_satellites: planes * per_plane,
            num_planes: planes,
            sats_per_plane: per_plane,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_planes == 0 || self.sats_per_plane == 0 {
            return Err(Error::config(
                "constellation.num_planes",
                "num_planes and sats_per_plane must be positive",
            ));
        }
        if self.num_planes * self.sats_per_plane != self.num_satellites {
            return Err(Error::config(
                "constellation.num_satellites",
                format!(
                    "{} planes x {} per plane != {} satellites",
                    self.num_planes, self.sats_per_plane, self.num_satellites
                ),
            ));
        }
        if !(self.altitude_km > 0.0) {
            return Err(Error::config("constellation.altitude_km", "must be > 0"));
        }
        if !(0.0..=180.0).contains(&self.inclination_deg) {
            return Err(Error::config("constellation.inclination_deg", "must lie in [0, 180]"));
        }
        if !(self.slot_duration_s > 0.0) {
            return Err(Error::config("constellation.slot_duration_s", "must be > 0"));
        }
        if !self.phasing_offset_deg.is_finite() || !self.polar_cutoff_deg.is_finite() {
            return Err(Error::config(
                "constellation.phasing_offset_deg",
                "angles must be finite",
            ));
        }
        Ok(())
    }

    pub fn orbit_radius_km(&self) -> f64 {
        EARTH_RADIUS_KM + self.altitude_km
    }
}

/// Orbital phase assignment for one satellite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitalSlot {
    pub sat_id: NodeId,
    pub plane: usize,
    pub index: usize,
    /// Right ascension of the ascending node, radians.
    pub raan: f64,
    /// Argument of latitude at t = 0, radians.
    pub anomaly: f64,
}

#[derive(Debug, Clone)]
pub struct Roster {
    config: ConstellationConfig,
    slots: Vec<OrbitalSlot>,
    mean_motion: f64,
}

pub fn build_constellation(config: &ConstellationConfig) -> Result<Roster> {
    config.validate()?;
    let planes = config.num_planes;
    let per_plane = config.sats_per_plane;
    let phasing = config.phasing_offset_deg.to_radians();
    let slots = (0..planes)
        .flat_map(|p| {
            (0..per_plane).map(move |s| OrbitalSlot {
                sat_id: p * per_plane + s,
                plane: p,
                index: s,
                raan: TAU * p as f64 / planes as f64,
                anomaly: TAU * s as f64 / per_plane as f64 + p as f64 * phasing,
            })
        })
        .collect();
    let a = config.orbit_radius_km();
    Ok(Roster {
        config: config.clone(),
        slots,
        mean_motion: (EARTH_MU_KM3_PER_S2 / (a * a * a)).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatellitePosition {
    pub sat_id: NodeId,
    /// Earth-centered inertial coordinates, km.
    pub coords: [f64; 3],
}

impl SatellitePosition {
    pub fn latitude_deg(&self) -> f64 {
        let [x, y, z] = self.coords;
        z.atan2((x * x + y * y).sqrt()).to_degrees()
    }

    pub fn distance_to(&self, other: &SatellitePosition) -> f64 {
        distance(&self.coords, &other.coords)
    }
}

pub(crate) fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

impl Roster {
    pub fn config(&self) -> &ConstellationConfig {
        &self.config
    }

    pub fn slots(&self) -> &[OrbitalSlot] {
        &self.slots
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Mean motion in rad/s.
    pub fn mean_motion(&self) -> f64 {
        self.mean_motion
    }

    pub fn period_s(&self) -> f64 {
        TAU / self.mean_motion
    }

    /// Positions at the start of slot `t`.
    pub fn propagate(&self, t: u64) -> Vec<SatellitePosition> {
        self.propagate_at(t as f64 * self.config.slot_duration_s)
    }

    /// Positions `seconds` after epoch.
    pub fn propagate_at(&self, seconds: f64) -> Vec<SatellitePosition> {
        let r = self.config.orbit_radius_km();
        let (sin_i, cos_i) = self.config.inclination_deg.to_radians().sin_cos();
        let advance = self.mean_motion * seconds;
        self.slots
            .iter()
            .map(|s| {
                let u = s.anomaly + advance;
                let (sin_u, cos_u) = u.sin_cos();
                let (sin_o, cos_o) = s.raan.sin_cos();
                SatellitePosition {
                    sat_id: s.sat_id,
                    coords: [
                        r * (cos_o * cos_u - sin_o * sin_u * cos_i),
                        r * (sin_o * cos_u + cos_o * sin_u * cos_i),
                        r * (sin_u * sin_i),
                    ],
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub distance_km: f64,
}

/// The graph at one slot: undirected edges plus ascending neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct TopologySnapshot {
    pub slot: u64,
    pub edges: Vec<Edge>,
    neighbors: Vec<Vec<NodeId>>,
    neighbor_distances: Vec<Vec<f64>>,
}

impl TopologySnapshot {
    /// Builds a snapshot from an explicit edge list. Duplicate and reversed
    /// pairs collapse to one edge; self-loops are rejected.
    pub fn from_edges(slot: u64, num_nodes: usize, edges: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let mut unique = BTreeSet::new();
        let mut kept = Vec::new();
        for &(a, b, d) in edges {
            if a == b || a >= num_nodes || b >= num_nodes {
                return Err(Error::Shape(format!("bad edge ({a}, {b}) for {num_nodes} nodes")));
            }
            let key = (a.min(b), a.max(b));
            if unique.insert(key) {
                kept.push(Edge {
                    a: key.0,
                    b: key.1,
                    distance_km: d,
                });
            }
        }
        let mut neighbors = vec![Vec::new(); num_nodes];
        for e in &kept {
            neighbors[e.a].push((e.b, e.distance_km));
            neighbors[e.b].push((e.a, e.distance_km));
        }
        let mut ids = Vec::with_capacity(num_nodes);
        let mut dists = Vec::with_capacity(num_nodes);
        for mut list in neighbors {
            list.sort_by_key(|&(n, _)| n);
            ids.push(list.iter().map(|&(n, _)| n).collect());
            dists.push(list.iter().map(|&(_, d)| d).collect());
        }
        Ok(Self {
            slot,
            edges: kept,
            neighbors: ids,
            neighbor_distances: dists,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    /// Neighbor ids in ascending order.
    pub fn neighbors(&self, node: NodeId) -> &[NodeId] {
        &self.neighbors[node]
    }

    /// Distances aligned with [`Self::neighbors`].
    pub fn neighbor_distances(&self, node: NodeId) -> &[f64] {
        &self.neighbor_distances[node]
    }

    pub fn degree(&self, node: NodeId) -> usize {
        self.neighbors[node].len()
    }

    pub fn distance(&self, a: NodeId, b: NodeId) -> Option<f64> {
        let pos = self.neighbors[a].iter().position(|&n| n == b)?;
        Some(self.neighbor_distances[a][pos])
    }

    pub fn is_neighbor(&self, a: NodeId, b: NodeId) -> bool {
        self.neighbors[a].binary_search(&b).is_ok()
    }

    /// Flood fill from node 0.
    pub fn is_connected(&self) -> bool {
        let n = self.num_nodes();
        if n == 0 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Checks symmetry, the degree bound, and positive distances.
    pub fn check_invariants(&self) -> Result<()> {
        for (i, list) in self.neighbors.iter().enumerate() {
            if list.len() > MAX_DEGREE {
                return Err(Error::Shape(format!("node {i} has degree {}", list.len())));
            }
            for (k, &j) in list.iter().enumerate() {
                if !self.is_neighbor(j, i) {
                    return Err(Error::Shape(format!("edge {i}->{j} is not symmetric")));
                }
                let d = self.neighbor_distances[i][k];
                if !(d > 0.0) {
                    return Err(Error::Shape(format!("edge {i}-{j} has distance {d}")));
                }
            }
        }
        Ok(())
    }
}

/// Builds the +grid topology for one slot.
pub fn snapshot(slot: u64, positions: &[SatellitePosition], config: &ConstellationConfig) -> TopologySnapshot {
    let planes = config.num_planes;
    let per_plane = config.sats_per_plane;
    let id = |p: usize, s: usize| p * per_plane + s;
    let dist = |a: NodeId, b: NodeId| positions[a].distance_to(&positions[b]);
    let mut edges = Vec::new();

    if per_plane > 1 {
        for p in 0..planes {
            for s in 0..per_plane {
                let (a, b) = (id(p, s), id(p, (s + 1) % per_plane));
                edges.push((a, b, dist(a, b)));
            }
        }
    }

    let plane_pairs: Vec<(usize, usize)> = match planes {
        0 | 1 => Vec::new(),
        2 => vec![(0, 1)],
        _ => (0..planes).map(|p| (p, (p + 1) % planes)).collect(),
    };
    let below_cutoff: Vec<bool> = positions
        .iter()
        .map(|p| p.latitude_deg().abs() <= config.polar_cutoff_deg)
        .collect();
    for (p, q) in plane_pairs {
        // A single phase shift pairs the two planes one-to-one, which keeps the
        // inter-plane degree at one per adjacent plane.
        let shift = (0..per_plane)
            .map(|k| {
                let total: f64 = (0..per_plane).map(|s| dist(id(p, s), id(q, (s + k) % per_plane))).sum();
                (k, total)
            })
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
            .0;
        for s in 0..per_plane {
            let (a, b) = (id(p, s), id(q, (s + shift) % per_plane));
            if below_cutoff[a] && below_cutoff[b] {
                edges.push((a, b, dist(a, b)));
            }
        }
    }

    TopologySnapshot::from_edges(slot, positions.len(), &edges)
        .expect("constellation edges reference valid, distinct nodes")
}

pub fn write_positions_csv(path: &Path, positions: &[SatellitePosition]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sat_id", "x_km", "y_km", "z_km"])?;
    for p in positions {
        w.write_record([
            p.sat_id.to_string(),
            p.coords[0].to_string(),
            p.coords[1].to_string(),
            p.coords[2].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_edges_csv(path: &Path, snapshot: &TopologySnapshot) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["src", "dst", "distance_km"])?;
    for e in &snapshot.edges {
        w.write_record([e.a.to_string(), e.b.to_string(), e.distance_km.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
