//! `filter`: threshold a probability volume, cluster, keep the main body.

use std::path::Path;

use horizon_core::postprocess::{
    dbscan, extract_point_cloud, retain_largest_cluster, CloudSource, DbscanParams,
};
use horizon_core::volume::{load_volume, save_point_cloud, ProbVolume};
use horizon_core::Result;

use super::require_file;

pub fn run(
    prob_path: &Path,
    params: &DbscanParams,
    source: CloudSource,
    out: &Path,
) -> Result<()> {
    require_file(prob_path, "probability volume")?;
    params.validate()?;
    let prob = ProbVolume::new(load_volume(prob_path)?)?;
    println!(
        "filter: eps={} minpts={} zfactor={} tau={:e}",
        params.epsilon, params.min_pts, params.z_factor, params.tau
    );
    let cloud = extract_point_cloud(&prob, params.tau, source);
    let labeling = dbscan(&cloud, params);
    let (kept, no_clusters) = retain_largest_cluster(&cloud, &labeling);
    println!(
        "filter: {} suprathreshold points, {} clusters, retained {}",
        cloud.len(),
        labeling.n_clusters,
        kept.len()
    );
    if no_clusters {
        println!("warning: no clusters found; writing an empty cloud");
    }
    save_point_cloud(&kept, out)?;
    Ok(())
}
