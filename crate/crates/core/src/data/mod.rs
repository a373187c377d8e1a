//! Problem data: seeded synthetic generators and LIBSVM text files.

mod libsvm;
mod synthetic;

pub use libsvm::{parse_libsvm, read_libsvm, write_libsvm, LabelMapping, SparseDataset};
pub use synthetic::{generate_synthetic, gumbel_inverse_cdf, Noise, SyntheticSpec, Task};

/// Seed reserved for evaluation datasets; run seeds start at 1.
pub const EVALUATION_SEED: u64 = 0;
