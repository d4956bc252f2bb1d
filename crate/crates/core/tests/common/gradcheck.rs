use leo_routing::neural::{Aggregation, ArchConfig, EncoderKind, GraphFrame, NetInput, Parameters, QNetwork};
use leo_routing::rng_stream;
use rand::Rng;

const FRAME_DIM: usize = 5;
const FLAT_DIM: usize = 7;
const ACTIONS: usize = 4;

pub fn arch(encoder: EncoderKind, aggregation: Aggregation) -> ArchConfig {
    ArchConfig {
        encoder,
        gat_heads: 2,
        gat_hidden: 6,
        gat_leak: 0.2,
        aggregation,
        lstm_hidden: 4,
        head_hidden: 5,
        dense_hidden: 5,
    }
}

fn uniform(n: usize, rng: &mut impl Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn input(rng: &mut impl Rng) -> NetInput {
    let mut frames: Vec<Option<GraphFrame>> = vec![None];
    for _ in 0..3 {
        let mask: Vec<bool> = (0..ACTIONS).map(|k| k == 0 || rng.random_bool(0.6)).collect();
        frames.push(Some(GraphFrame {
            self_feat: uniform(FRAME_DIM, rng),
            neighbor_feats: uniform(FRAME_DIM * ACTIONS, rng),
            mask,
        }));
    }
    let mask = frames.last().unwrap().as_ref().unwrap().mask.clone();
    NetInput {
        frames,
        flat: uniform(FLAT_DIM, rng),
        mask,
    }
}

/// Scalar loss Σ_k c_k Q_k over valid actions.
fn loss(net: &QNetwork, x: &NetInput, c: &[f64]) -> f64 {
    let q = net.q_values(x).unwrap();
    q.iter()
        .zip(c)
        .zip(&x.mask)
        .filter(|(_, &m)| m)
        .map(|((q, c), _)| q * c)
        .sum()
}

/// Largest relative error between backprop and central differences over every parameter.
pub fn worst_relative_error(encoder: EncoderKind, aggregation: Aggregation, seed: u64, eps: f64) -> f64 {
    let mut rng = rng_stream(seed, 77);
    let net = QNetwork::new(&arch(encoder, aggregation), FRAME_DIM, FLAT_DIM, ACTIONS, &mut rng).unwrap();
    let x = input(&mut rng);
    let c = uniform(ACTIONS, &mut rng);

    let (_, cache) = net.forward(&x).unwrap();
    let mut grad = net.zeros_like();
    net.backward(&x, &cache, &c, &mut grad);
    let analytic: Vec<f64> = grad.tensors().iter().flat_map(|t| t.data().to_vec()).collect();

    let mut worst: f64 = 0.0;
    let mut idx = 0;
    let n_tensors = net.tensors().len();
    for t in 0..n_tensors {
        for i in 0..net.tensors()[t].len() {
            let mut plus = net.clone();
            plus.tensors_mut()[t].data_mut()[i] += eps;
            let mut minus = net.clone();
            minus.tensors_mut()[t].data_mut()[i] -= eps;
            let numeric = (loss(&plus, &x, &c) - loss(&minus, &x, &c)) / (2.0 * eps);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            idx += 1;
        }
    }
    assert_eq!(idx, analytic.len());
    worst
}
