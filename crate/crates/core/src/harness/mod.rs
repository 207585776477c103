//! Benchmark harness: data generators, CSV ingestion and the experiment runner.

pub mod data;
pub mod experiment;
pub mod synth;

pub use data::{contaminate_csv, read_numeric_csv, read_regression_csv, CsvRegression, CsvTable};
pub use experiment::{
    run_experiment, run_replication, CellOutcome, ExperimentContext, ExperimentSpec, Generator, Method, ResultRow,
    ResultTable, Task,
};
pub use synth::{
    gen_density_synth, gen_reg_heterogeneous, gen_reg_synth, gen_reg_toy, gen_reg_toy_clean, toy_true_params,
    ContaminationMode, SynthRegression,
};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent seed for a sub-stream of `seed`.
pub fn stream_seed(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// FNV-1a hash of a label, used as a stream key.
pub(crate) fn label_tag(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}
