//! Library surface of the pipeline binary; the integration tests drive the
//! same command implementations the CLI dispatches to.

pub mod commands;
pub mod kvconfig;

use horizon_core::HorizonError;

/// Process exit code policy: 0 success, 2 usage/input problems, 3 numerical
/// failure, 4 undefined metric.
pub fn exit_code(err: &HorizonError) -> i32 {
    match err {
        HorizonError::NanLoss { .. } => 3,
        HorizonError::UndefinedMetric(_) => 4,
        _ => 2,
    }
}

/// Caps the worker pool from `HORIZON_FORGE_THREADS` when set.
pub fn configure_threads() {
    if let Ok(v) = std::env::var("HORIZON_FORGE_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
