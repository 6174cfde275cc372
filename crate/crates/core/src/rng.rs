//! Deterministic RNG plumbing. One master seed; replications get independent
//! counter-indexed streams so results never depend on thread scheduling.

use rand_chacha::rand_core::SeedableRng;

pub type Stream = rand_chacha::ChaCha8Rng;

pub fn master(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Stream for replication `rep` under `seed`. Distinct reps never share state.
pub fn replication(seed: u64, rep: u64) -> Stream {
    let mut s = Stream::seed_from_u64(seed);
    s.set_stream(rep.wrapping_add(1));
    s
}
