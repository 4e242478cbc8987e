//! `merge`: set union of two filtered point clouds.

use std::path::Path;

use horizon_core::postprocess::fuse_orthogonal;
use horizon_core::volume::{load_point_cloud, save_point_cloud};
use horizon_core::Result;

use super::require_file;

pub fn run(a_path: &Path, b_path: &Path, out: &Path) -> Result<()> {
    require_file(a_path, "first cloud")?;
    require_file(b_path, "second cloud")?;
    let a = load_point_cloud(a_path)?;
    let b = load_point_cloud(b_path)?;
    let merged = fuse_orthogonal(&a, &b)?;
    println!(
        "merge: |A|={} |B|={} |A∪B|={}",
        a.len(),
        b.len(),
        merged.len()
    );
    save_point_cloud(&merged, out)?;
    Ok(())
}
