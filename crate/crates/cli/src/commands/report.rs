//! `report`: aggregate run directories into the summary table.

use std::path::{Path, PathBuf};

use horizon_core::reporting::{aggregate, save_summary};
use horizon_core::Result;

pub fn run(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let rows = aggregate(run_dirs)?;
    save_summary(&rows, out)?;
    println!("report: {} summary rows -> {}", rows.len(), out.display());
    Ok(())
}
