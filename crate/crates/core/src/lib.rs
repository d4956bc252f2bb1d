//! Discrete-time LEO satellite network simulator with a spatial-temporal
//! deep Q-learning router (graph attention, LSTM, DQN), baseline policies,
//! and an experiment harness.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod constellation;
pub mod error;
pub mod harness;
pub mod neural;
pub mod pomdp_env;
pub mod traffic;
pub mod transport;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// An independent random stream derived from a run seed.
pub fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
