//! Spatial acceleration structures over point clouds.
//!
//! [`VoxelIndex`] hashes points into cubic voxels and answers exact l∞
//! neighborhood queries and k-nearest-neighbor queries. [`ColumnIndex`]
//! answers the wide, flat box queries the pose search issues: every map
//! point within the full translation range of a rotated scan point, but only
//! within ε vertically.

use std::collections::HashMap;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{MapCloud, Point3, UnitNormal3};

type VoxelKey = [i64; 3];

/// Hash grid of point indices keyed by integer voxel coordinates.
#[derive(Debug, Clone)]
pub struct VoxelIndex {
    voxel_size: f64,
    points: Vec<Point3>,
    buckets: HashMap<VoxelKey, Vec<u32>>,
    key_min: VoxelKey,
    key_max: VoxelKey,
}

/// Builds a [`VoxelIndex`] over the map points.
pub fn build_index(map: &MapCloud, voxel_size: f64) -> Result<VoxelIndex> {
    VoxelIndex::from_points(&map.points, voxel_size)
}

impl VoxelIndex {
    pub fn from_points(points: &[Point3], voxel_size: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyMap);
        }
        if !(voxel_size > 0.0 && voxel_size.is_finite()) {
            return Err(Error::InvalidSpec(format!(
                "voxel_size must be positive, got {voxel_size}"
            )));
        }
        let mut buckets: HashMap<VoxelKey, Vec<u32>> = HashMap::new();
        let mut key_min = [i64::MAX; 3];
        let mut key_max = [i64::MIN; 3];
        for (idx, p) in points.iter().enumerate() {
            let key = voxel_key(p, voxel_size);
            for a in 0..3 {
                key_min[a] = key_min[a].min(key[a]);
                key_max[a] = key_max[a].max(key[a]);
            }
            buckets.entry(key).or_default().push(idx as u32);
        }
        Ok(Self {
            voxel_size,
            points: points.to_vec(),
            buckets,
            key_min,
            key_max,
        })
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn bucket_count(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, p: &Point3) -> &[u32] {
        self.buckets
            .get(&voxel_key(p, self.voxel_size))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    pub fn buckets(&self) -> impl Iterator<Item = &[u32]> {
        self.buckets.values().map(Vec::as_slice)
    }

    /// Indices of all points with `max(|Δx|, |Δy|, |Δz|) ≤ eps`, in ascending order.
    pub fn query_linf(&self, p: &Point3, eps: f64) -> Vec<usize> {
        let lo = voxel_key(&Point3::new(p.x - eps, p.y - eps, p.z - eps), self.voxel_size);
        let hi = voxel_key(&Point3::new(p.x + eps, p.y + eps, p.z + eps), self.voxel_size);
        let mut out = Vec::new();
        for kx in lo[0]..=hi[0] {
            for ky in lo[1]..=hi[1] {
                for kz in lo[2]..=hi[2] {
                    if let Some(bucket) = self.buckets.get(&[kx, ky, kz]) {
                        out.extend(
                            bucket
                                .iter()
                                .map(|&j| j as usize)
                                .filter(|&j| self.points[j].dist_linf(p) <= eps),
                        );
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// The `k` nearest points by Euclidean distance, closest first; ties go to
    /// the lower index.
    pub fn knn(&self, p: &Point3, k: usize) -> Result<Vec<usize>> {
        if self.points.len() < k {
            return Err(Error::InsufficientPoints {
                needed: k,
                available: self.points.len(),
            });
        }
        Ok(self.nearest(p, k, f64::INFINITY).into_iter().map(|(j, _)| j).collect())
    }

    /// Nearest point within `radius` (Euclidean), with its squared distance.
    pub fn nearest_within(&self, p: &Point3, radius: f64) -> Option<(usize, f64)> {
        self.nearest(p, 1, radius).into_iter().next()
    }

    fn nearest(&self, p: &Point3, k: usize, radius: f64) -> Vec<(usize, f64)> {
        if k == 0 {
            return Vec::new();
        }
        let center = voxel_key(p, self.voxel_size);
        let r_sq = radius * radius;
        let mut found: Vec<(usize, f64)> = Vec::new();
        let mut shell: i64 = 0;
        loop {
            self.visit_shell(center, shell, |j| {
                let d = self.points[j].dist_sq(p);
                if d <= r_sq {
                    found.push((j, d));
                }
            });
            // points in shells beyond `shell` are at least shell·voxel away
            let reach = shell as f64 * self.voxel_size;
            if found.len() >= k {
                found.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                if found[k - 1].1 <= reach * reach {
                    found.truncate(k);
                    return found;
                }
            }
            if reach > radius || self.shell_outside(center, shell) {
                found.sort_unstable_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                found.truncate(k);
                return found;
            }
            shell += 1;
        }
    }

    fn shell_outside(&self, center: VoxelKey, shell: i64) -> bool {
        (0..3).all(|a| center[a] - shell <= self.key_min[a] && center[a] + shell >= self.key_max[a])
    }

    fn visit_shell(&self, c: VoxelKey, s: i64, mut f: impl FnMut(usize)) {
        let mut visit = |key: VoxelKey| {
            if let Some(bucket) = self.buckets.get(&key) {
                bucket.iter().for_each(|&j| f(j as usize));
            }
        };
        if s == 0 {
            visit(c);
            return;
        }
        for dx in -s..=s {
            for dy in -s..=s {
                if dx.abs() == s || dy.abs() == s {
                    for dz in -s..=s {
                        visit([c[0] + dx, c[1] + dy, c[2] + dz]);
                    }
                } else {
                    visit([c[0] + dx, c[1] + dy, c[2] - s]);
                    visit([c[0] + dx, c[1] + dy, c[2] + s]);
                }
            }
        }
    }
}

fn voxel_key(p: &Point3, size: f64) -> VoxelKey {
    [
        (p.x / size).floor() as i64,
        (p.y / size).floor() as i64,
        (p.z / size).floor() as i64,
    ]
}

/// Axis-aligned box, closed on every side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Point3,
    pub max: Point3,
}

impl Aabb {
    pub fn new(min: Point3, max: Point3) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: &Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Largest number of (x, z) columns before the column width is coarsened.
const MAX_COLUMNS: usize = 1 << 24;

/// Points bucketed into a dense grid of (x, z) columns, sorted by y inside
/// each column. Points are stored in column order for sequential scans.
#[derive(Debug, Clone)]
pub struct ColumnIndex {
    column_width: f64,
    slab_height: f64,
    x0: i64,
    z0: i64,
    nx: usize,
    nz: usize,
    /// `starts[c]..starts[c + 1]` is the range of column `c = kz * nx + kx`.
    starts: Vec<u32>,
    sorted: Vec<Point3>,
    ids: Vec<u32>,
}

impl ColumnIndex {
    pub fn new(points: &[Point3], column_width: f64, slab_height: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyMap);
        }
        if !(column_width > 0.0 && slab_height > 0.0) {
            return Err(Error::InvalidSpec("column sizes must be positive".into()));
        }
        let fold = |f: fn(&Point3) -> f64| {
            points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (xmin, xmax) = fold(|p| p.x);
        let (zmin, zmax) = fold(|p| p.z);
        let mut column_width = column_width;
        let z0 = (zmin / slab_height).floor() as i64;
        let nz = ((zmax / slab_height).floor() as i64 - z0 + 1) as usize;
        let (x0, nx) = loop {
            let x0 = (xmin / column_width).floor() as i64;
            let nx = ((xmax / column_width).floor() as i64 - x0 + 1) as usize;
            if nx.saturating_mul(nz) <= MAX_COLUMNS {
                break (x0, nx);
            }
            column_width *= 2.0;
        };
        let column = |p: &Point3| {
            let kx = (p.x / column_width).floor() as i64 - x0;
            let kz = (p.z / slab_height).floor() as i64 - z0;
            kz as usize * nx + kx as usize
        };
        let mut order: Vec<(usize, f64, u32)> =
            points.iter().enumerate().map(|(i, p)| (column(p), p.y, i as u32)).collect();
        order.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut starts = vec![0u32; nx * nz + 1];
        for &(c, _, _) in &order {
            starts[c + 1] += 1;
        }
        for c in 0..nx * nz {
            starts[c + 1] += starts[c];
        }
        Ok(Self {
            column_width,
            slab_height,
            x0,
            z0,
            nx,
            nz,
            starts,
            sorted: order.iter().map(|&(_, _, i)| points[i as usize]).collect(),
            ids: order.iter().map(|&(_, _, i)| i).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Calls `f` with the original index and position of every point inside
    /// `bounds` (inclusive).
    pub fn for_each_in(&self, bounds: &Aabb, mut f: impl FnMut(usize, &Point3)) {
        self.for_each_run(bounds, |points, ids| {
            for (p, &id) in points.iter().zip(ids) {
                if bounds.contains(p) {
                    f(id as usize, p);
                }
            }
        });
    }

    /// Calls `f` with runs of points (and their original indices) that cover
    /// every point inside `bounds`. Runs are already trimmed to the y-range
    /// of `bounds`; x and z still need checking near the box edges.
    #[inline]
    pub fn for_each_run(&self, bounds: &Aabb, mut f: impl FnMut(&[Point3], &[u32])) {
        let clamp = |k: i64, n: usize| k.clamp(0, n as i64 - 1) as usize;
        let kx_lo = (bounds.min.x / self.column_width).floor() as i64 - self.x0;
        let kx_hi = (bounds.max.x / self.column_width).floor() as i64 - self.x0;
        let kz_lo = (bounds.min.z / self.slab_height).floor() as i64 - self.z0;
        let kz_hi = (bounds.max.z / self.slab_height).floor() as i64 - self.z0;
        if kx_hi < 0 || kz_hi < 0 || kx_lo >= self.nx as i64 || kz_lo >= self.nz as i64 {
            return;
        }
        let (x_lo, x_hi) = (clamp(kx_lo, self.nx), clamp(kx_hi, self.nx));
        for kz in clamp(kz_lo, self.nz)..=clamp(kz_hi, self.nz) {
            let row = kz * self.nx;
            for c in row + x_lo..=row + x_hi {
                let (start, end) = (self.starts[c] as usize, self.starts[c + 1] as usize);
                if start == end {
                    continue;
                }
                let col = &self.sorted[start..end];
                let first = col.partition_point(|p| p.y < bounds.min.y);
                let last = first + col[first..].partition_point(|p| p.y <= bounds.max.y);
                if first < last {
                    f(&col[first..last], &self.ids[start + first..start + last]);
                }
            }
        }
    }
}

/// Smallest-to-largest eigenvalue ratio below which a neighborhood covariance
/// counts as rank-deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// PCA normal of a neighborhood, or `None` when its covariance has rank < 2.
///
/// The sign is canonical (largest-magnitude component positive); callers orient
/// it afterwards.
pub fn pca_normal(neighborhood: impl IntoIterator<Item = Point3>) -> Option<UnitNormal3> {
    let pts: Vec<Vector3<f64>> = neighborhood
        .into_iter()
        .map(|p| Vector3::new(p.x, p.y, p.z))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let mean = pts.iter().sum::<Vector3<f64>>() / pts.len() as f64;
    let cov = pts.iter().fold(Matrix3::zeros(), |acc, p| {
        let d = p - mean;
        acc + d * d.transpose()
    }) / pts.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if l_max <= 0.0 || l_mid <= RANK_TOLERANCE * l_max {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let n = UnitNormal3::new(v[0], v[1], v[2])?;
    let comps = [n.nx(), n.ny(), n.nz()];
    let dominant = comps
        .iter()
        .copied()
        .max_by(|a, b| a.abs().total_cmp(&b.abs()))
        .unwrap_or(1.0);
    Some(if dominant < 0.0 { n.flipped() } else { n })
}

/// Per-point PCA normals over the `k` nearest neighbors (the point included).
///
/// Entries are `None` where the neighborhood is degenerate.
pub fn estimate_normals(points: &[Point3], k: usize) -> Result<Vec<Option<UnitNormal3>>> {
    if k < 3 || points.len() < k {
        return Err(Error::InsufficientPoints {
            needed: k.max(3),
            available: points.len(),
        });
    }
    let index = VoxelIndex::from_points(points, neighborhood_voxel_size(points, k))?;
    points
        .par_iter()
        .map(|p| {
            let nbrs = index.knn(p, k)?;
            Ok(pca_normal(nbrs.into_iter().map(|j| points[j])))
        })
        .collect()
}

/// Flips each normal so it faces `viewpoint`.
pub fn orient_toward(points: &[Point3], normals: &mut [Option<UnitNormal3>], viewpoint: &Point3) {
    for (p, n) in points.iter().zip(normals.iter_mut()) {
        if let Some(normal) = n {
            let [dx, dy, dz] = viewpoint.sub(p);
            if normal.nx() * dx + normal.ny() * dy + normal.nz() * dz < 0.0 {
                *normal = normal.flipped();
            }
        }
    }
}

/// Voxel edge that holds roughly `k` points for a surface-like cloud.
fn neighborhood_voxel_size(points: &[Point3], k: usize) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for p in points {
        for (a, v) in [p.x, p.y, p.z].into_iter().enumerate() {
            lo[a] = lo[a].min(v);
            hi[a] = hi[a].max(v);
        }
    }
    let mut ext: Vec<f64> = (0..3).map(|a| hi[a] - lo[a]).collect();
    ext.sort_by(|a, b| b.total_cmp(a));
    let n = points.len() as f64;
    let size = if ext[1] > 0.0 {
        (ext[0] * ext[1] * k as f64 / n).sqrt()
    } else {
        ext[0] * k as f64 / n
    };
    if size.is_finite() && size > 0.0 {
        size
    } else {
        1.0
    }
}
