//! Dense linear algebra, reverse-mode autodiff and seeded randomness.

mod matrix;
mod rng;
mod tape;

pub use matrix::{softmax_rows, Matrix};
pub use rng::{fnv1a64, mix64, Dist, Purpose, SeedStream};
pub use tape::{NodeId, Tape};
