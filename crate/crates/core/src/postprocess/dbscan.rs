//! Density clustering over voxel point clouds.
//!
//! Conventions shared by the grid-indexed implementation and the quadratic
//! reference (they must agree exactly):
//!   - distances are Euclidean over (il, xl, t / z_factor);
//!   - the neighborhood is the closed ball of radius epsilon;
//!   - a point is core when its ball holds at least `min_pts` points,
//!     counting itself;
//!   - clusters are the connected components of core points; a border point
//!     joins the cluster of the lowest-index core point that reaches it;
//!   - cluster ids are assigned by ascending minimum member index.

use std::collections::HashMap;

use rayon::prelude::*;

use super::{DbscanParams, PointCloud};

/// Label value for points in no cluster.
pub const NOISE: Option<u32> = None;

/// Per-point cluster assignment.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClusterLabeling {
    /// `Some(cluster id)` or `None` for noise, parallel to the input points.
    pub labels: Vec<Option<u32>>,
    pub core: Vec<bool>,
    pub n_clusters: usize,
}

impl ClusterLabeling {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_clusters];
        for l in self.labels.iter().flatten() {
            sizes[*l as usize] += 1;
        }
        sizes
    }
}

fn scaled_coords(cloud: &PointCloud, z_factor: f64) -> Vec<[f64; 3]> {
    cloud
        .points
        .iter()
        .map(|p| [p.il as f64, p.xl as f64, p.t as f64 / z_factor])
        .collect()
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, i: u32) -> u32 {
        let mut root = i;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        let mut cur = i;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // Smaller index wins so roots are order-independent.
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Uniform-grid spatial index with cell edge = epsilon; any point within
/// epsilon of a query lies in one of the 27 surrounding cells.
struct CellIndex {
    cells: HashMap<(i64, i64, i64), Vec<u32>>,
    inv_eps: f64,
}

impl CellIndex {
    fn build(coords: &[[f64; 3]], epsilon: f64) -> Self {
        let inv_eps = 1.0 / epsilon;
        let mut cells: HashMap<(i64, i64, i64), Vec<u32>> = HashMap::new();
        for (i, c) in coords.iter().enumerate() {
            cells
                .entry(Self::key_of(c, inv_eps))
                .or_default()
                .push(i as u32);
        }
        CellIndex { cells, inv_eps }
    }

    #[inline]
    fn key_of(c: &[f64; 3], inv_eps: f64) -> (i64, i64, i64) {
        (
            (c[0] * inv_eps).floor() as i64,
            (c[1] * inv_eps).floor() as i64,
            (c[2] * inv_eps).floor() as i64,
        )
    }

    /// Calls `visit` for every point in the 27-cell neighborhood of `c`
    /// (including the query point itself).
    #[inline]
    fn for_candidates(&self, c: &[f64; 3], mut visit: impl FnMut(u32)) {
        let key = Self::key_of(c, self.inv_eps);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(v) = self.cells.get(&(key.0 + dx, key.1 + dy, key.2 + dz)) {
                        for &j in v {
                            visit(j);
                        }
                    }
                }
            }
        }
    }
}

/// Grid-indexed clustering; behaviorally identical to [`dbscan_reference`].
pub fn dbscan(cloud: &PointCloud, params: &DbscanParams) -> ClusterLabeling {
    let n = cloud.points.len();
    if n == 0 {
        return ClusterLabeling {
            labels: Vec::new(),
            core: Vec::new(),
            n_clusters: 0,
        };
    }
    let coords = scaled_coords(cloud, params.z_factor);
    let eps2 = params.epsilon * params.epsilon;
    let index = CellIndex::build(&coords, params.epsilon);

    // Core classification: self-inclusive neighbor counts.
    let core: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut count = 0usize;
            index.for_candidates(&coords[i], |j| {
                if dist2(&coords[i], &coords[j as usize]) <= eps2 {
                    count += 1;
                }
            });
            count >= params.min_pts
        })
        .collect();

    // Core connectivity.
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if !core[i] {
            continue;
        }
        index.for_candidates(&coords[i], |j| {
            let j = j as usize;
            if j > i && core[j] && dist2(&coords[i], &coords[j]) <= eps2 {
                uf.union(i as u32, j as u32);
            }
        });
    }

    // Border attachment: lowest-index core point within reach.
    let attach: Vec<Option<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            if core[i] {
                return None;
            }
            let mut best: Option<u32> = None;
            index.for_candidates(&coords[i], |j| {
                if core[j as usize] && dist2(&coords[i], &coords[j as usize]) <= eps2 {
                    best = Some(best.map_or(j, |b| b.min(j)));
                }
            });
            best
        })
        .collect();

    finalize(n, &core, &attach, &mut uf)
}

/// Quadratic reference with the same conventions; the validation baseline
/// for the indexed implementation.
pub fn dbscan_reference(cloud: &PointCloud, params: &DbscanParams) -> ClusterLabeling {
    let n = cloud.points.len();
    if n == 0 {
        return ClusterLabeling {
            labels: Vec::new(),
            core: Vec::new(),
            n_clusters: 0,
        };
    }
    let coords = scaled_coords(cloud, params.z_factor);
    let eps2 = params.epsilon * params.epsilon;

    let core: Vec<bool> = (0..n)
        .map(|i| {
            let count = (0..n)
                .filter(|&j| dist2(&coords[i], &coords[j]) <= eps2)
                .count();
            count >= params.min_pts
        })
        .collect();

    let mut uf = UnionFind::new(n);
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for j in (i + 1)..n {
            if core[j] && dist2(&coords[i], &coords[j]) <= eps2 {
                uf.union(i as u32, j as u32);
            }
        }
    }

    let attach: Vec<Option<u32>> = (0..n)
        .map(|i| {
            if core[i] {
                return None;
            }
            (0..n)
                .filter(|&j| core[j] && dist2(&coords[i], &coords[j]) <= eps2)
                .map(|j| j as u32)
                .min()
        })
        .collect();

    finalize(n, &core, &attach, &mut uf)
}

/// Shared tail: resolves union-find roots, attaches borders, and assigns
/// canonical ids by ascending minimum member index.
fn finalize(
    n: usize,
    core: &[bool],
    attach: &[Option<u32>],
    uf: &mut UnionFind,
) -> ClusterLabeling {
    // Root of each point's cluster (cores via union-find, borders via their
    // attachment core), or None for noise.
    let mut root_of: Vec<Option<u32>> = vec![None; n];
    for i in 0..n {
        if core[i] {
            root_of[i] = Some(uf.find(i as u32));
        } else if let Some(c) = attach[i] {
            root_of[i] = Some(uf.find(c));
        }
    }

    // Canonical ids: clusters ordered by their minimum member index.
    let mut min_member: HashMap<u32, usize> = HashMap::new();
    for (i, r) in root_of.iter().enumerate() {
        if let Some(r) = r {
            min_member
                .entry(*r)
                .and_modify(|m| *m = (*m).min(i))
                .or_insert(i);
        }
    }
    let mut order: Vec<(usize, u32)> = min_member.iter().map(|(&r, &m)| (m, r)).collect();
    order.sort_unstable();
    let id_of: HashMap<u32, u32> = order
        .iter()
        .enumerate()
        .map(|(id, &(_, root))| (root, id as u32))
        .collect();

    ClusterLabeling {
        labels: root_of
            .into_iter()
            .map(|r| r.map(|r| id_of[&r]))
            .collect(),
        core: core.to_vec(),
        n_clusters: order.len(),
    }
}
