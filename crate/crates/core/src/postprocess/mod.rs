//! Probability-volume refinement: thresholding into a point cloud, density
//! clustering, largest-cluster retention, and orthogonal-direction fusion.

mod dbscan;

pub use dbscan::{dbscan, dbscan_reference, ClusterLabeling, NOISE};

use std::collections::BTreeMap;

use crate::error::{HorizonError, Result};
use crate::volume::ProbVolume;

/// Which prediction pass produced a cloud.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CloudSource {
    Inline,
    Crossline,
    Merged,
}

impl CloudSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CloudSource::Inline => "inline",
            CloudSource::Crossline => "crossline",
            CloudSource::Merged => "merged",
        }
    }

    pub fn parse(s: &str) -> Result<CloudSource> {
        match s {
            "inline" => Ok(CloudSource::Inline),
            "crossline" => Ok(CloudSource::Crossline),
            "merged" => Ok(CloudSource::Merged),
            _ => Err(HorizonError::Argument(format!(
                "unknown cloud source '{s}'"
            ))),
        }
    }
}

/// One suprathreshold voxel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CloudPoint {
    pub il: u32,
    pub xl: u32,
    pub t: u32,
    pub prob: f32,
}

/// Set of suprathreshold voxels with the dims of the originating volume.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub dims: (usize, usize, usize),
    pub dt_ms: f32,
    pub source: CloudSource,
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn new(
        dims: (usize, usize, usize),
        dt_ms: f32,
        source: CloudSource,
        points: Vec<CloudPoint>,
    ) -> Result<Self> {
        let (n_il, n_xl, n_t) = dims;
        let mut seen = std::collections::HashSet::with_capacity(points.len());
        for p in &points {
            if p.il as usize >= n_il || p.xl as usize >= n_xl || p.t as usize >= n_t {
                return Err(HorizonError::Validation(format!(
                    "point ({}, {}, {}) outside volume {n_il}x{n_xl}x{n_t}",
                    p.il, p.xl, p.t
                )));
            }
            if !(p.prob > 0.0 && p.prob <= 1.0) {
                return Err(HorizonError::Validation(format!(
                    "point probability {} outside (0, 1]",
                    p.prob
                )));
            }
            if !seen.insert((p.il, p.xl, p.t)) {
                return Err(HorizonError::Validation(format!(
                    "duplicate point ({}, {}, {})",
                    p.il, p.xl, p.t
                )));
            }
        }
        Ok(PointCloud {
            dims,
            dt_ms,
            source,
            points,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Clustering parameters. The time axis is divided by `z_factor` before
/// distances are taken, and `epsilon` applies to those scaled coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbscanParams {
    pub epsilon: f64,
    pub min_pts: usize,
    pub z_factor: f64,
    pub tau: f64,
}

impl Default for DbscanParams {
    fn default() -> Self {
        DbscanParams {
            epsilon: 6.0,
            min_pts: 25,
            z_factor: 3.0,
            tau: 1e-5,
        }
    }
}

impl DbscanParams {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(HorizonError::Argument("epsilon must be positive".into()));
        }
        if self.min_pts < 1 {
            return Err(HorizonError::Argument("min_pts must be >= 1".into()));
        }
        if self.z_factor <= 0.0 {
            return Err(HorizonError::Argument("z_factor must be positive".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(HorizonError::Argument("tau must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// All voxels with probability strictly above `tau`, in (il, xl, t) order.
pub fn extract_point_cloud(prob: &ProbVolume, tau: f64, source: CloudSource) -> PointCloud {
    let v = prob.as_volume();
    let tau = tau as f32;
    let mut points = Vec::new();
    for il in 0..v.n_il {
        for xl in 0..v.n_xl {
            for (t, &p) in v.trace(il, xl).iter().enumerate() {
                if p > tau {
                    points.push(CloudPoint {
                        il: il as u32,
                        xl: xl as u32,
                        t: t as u32,
                        prob: p,
                    });
                }
            }
        }
    }
    PointCloud {
        dims: v.dims(),
        dt_ms: v.dt_ms,
        source,
        points,
    }
}

/// Keeps the most populous cluster (lowest canonical id on ties) and drops
/// everything else. The flag is true when there was no cluster at all.
pub fn retain_largest_cluster(cloud: &PointCloud, labeling: &ClusterLabeling) -> (PointCloud, bool) {
    assert_eq!(
        labeling.labels.len(),
        cloud.points.len(),
        "labeling does not cover the cloud"
    );
    if labeling.n_clusters == 0 {
        return (
            PointCloud {
                dims: cloud.dims,
                dt_ms: cloud.dt_ms,
                source: cloud.source,
                points: Vec::new(),
            },
            true,
        );
    }
    let mut sizes = vec![0usize; labeling.n_clusters];
    for l in labeling.labels.iter().flatten() {
        sizes[*l as usize] += 1;
    }
    // Max size, ties to the lowest canonical id.
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .map(|(i, _)| i as u32)
        .expect("at least one cluster");
    let points = cloud
        .points
        .iter()
        .zip(&labeling.labels)
        .filter(|(_, l)| **l == Some(best))
        .map(|(p, _)| *p)
        .collect();
    (
        PointCloud {
            dims: cloud.dims,
            dt_ms: cloud.dt_ms,
            source: cloud.source,
            points,
        },
        false,
    )
}

/// Set union on (il, xl, t); a triple present in both keeps the larger
/// probability. Output points are sorted by (il, xl, t).
pub fn fuse_orthogonal(a: &PointCloud, b: &PointCloud) -> Result<PointCloud> {
    if a.dims != b.dims {
        return Err(HorizonError::Argument(format!(
            "cannot fuse clouds over different volumes: {:?} vs {:?}",
            a.dims, b.dims
        )));
    }
    if a.dt_ms != b.dt_ms {
        return Err(HorizonError::Argument(
            "cannot fuse clouds with different sample intervals".into(),
        ));
    }
    let mut merged: BTreeMap<(u32, u32, u32), f32> = BTreeMap::new();
    for p in a.points.iter().chain(&b.points) {
        merged
            .entry((p.il, p.xl, p.t))
            .and_modify(|q| *q = q.max(p.prob))
            .or_insert(p.prob);
    }
    let points = merged
        .into_iter()
        .map(|((il, xl, t), prob)| CloudPoint { il, xl, t, prob })
        .collect();
    Ok(PointCloud {
        dims: a.dims,
        dt_ms: a.dt_ms,
        source: CloudSource::Merged,
        points,
    })
}
