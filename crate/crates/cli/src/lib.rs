//! Configuration, orchestration and exporters behind the `latticeopt`
//! binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod error;
pub mod export;
pub mod voxel;

pub use config::RunConfig;
pub use error::{CliError, CliResult};

/// Caps the global rayon pool at `LATTICEOPT_THREADS` when set.
pub fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("LATTICEOPT_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Config(format!("LATTICEOPT_THREADS must be a positive integer, got '{v}'")))?;
    // a pool that already exists keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}
