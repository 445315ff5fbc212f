//! Points, normals, planar poses and the discretized pose search space.
//!
//! Poses have three degrees of freedom: a translation in the xy-plane and a
//! heading about the vertical axis. The z coordinate of a point passes
//! through every pose transform unchanged.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn sub(&self, other: &Point3) -> [f64; 3] {
        [self.x - other.x, self.y - other.y, self.z - other.z]
    }

    pub fn dist_sq(&self, other: &Point3) -> f64 {
        let [dx, dy, dz] = self.sub(other);
        dx * dx + dy * dy + dz * dz
    }

    /// Chebyshev (l∞) distance.
    pub fn dist_linf(&self, other: &Point3) -> f64 {
        let [dx, dy, dz] = self.sub(other);
        dx.abs().max(dy.abs()).max(dz.abs())
    }
}

/// A direction of unit Euclidean length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitNormal3 {
    nx: f64,
    ny: f64,
    nz: f64,
}

impl UnitNormal3 {
    /// Normalizes `(x, y, z)`. Returns `None` for zero-length or non-finite input.
    pub fn new(x: f64, y: f64, z: f64) -> Option<Self> {
        let len = (x * x + y * y + z * z).sqrt();
        if !len.is_finite() || len < 1e-12 {
            return None;
        }
        Some(Self {
            nx: x / len,
            ny: y / len,
            nz: z / len,
        })
    }

    pub const PLUS_X: Self = Self { nx: 1.0, ny: 0.0, nz: 0.0 };
    pub const MINUS_X: Self = Self { nx: -1.0, ny: 0.0, nz: 0.0 };
    pub const PLUS_Y: Self = Self { nx: 0.0, ny: 1.0, nz: 0.0 };
    pub const MINUS_Y: Self = Self { nx: 0.0, ny: -1.0, nz: 0.0 };
    pub const PLUS_Z: Self = Self { nx: 0.0, ny: 0.0, nz: 1.0 };
    pub const MINUS_Z: Self = Self { nx: 0.0, ny: 0.0, nz: -1.0 };

    pub fn nx(&self) -> f64 {
        self.nx
    }

    pub fn ny(&self) -> f64 {
        self.ny
    }

    pub fn nz(&self) -> f64 {
        self.nz
    }

    pub fn dot(&self, other: &UnitNormal3) -> f64 {
        self.nx * other.nx + self.ny * other.ny + self.nz * other.nz
    }

    pub fn flipped(&self) -> Self {
        Self {
            nx: -self.nx,
            ny: -self.ny,
            nz: -self.nz,
        }
    }

    /// Rotates about the vertical axis.
    pub fn rotated(&self, theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Self {
            nx: c * self.nx - s * self.ny,
            ny: s * self.nx + c * self.ny,
            nz: self.nz,
        }
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let wrapped = (theta + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2π
    if wrapped >= PI {
        wrapped - 2.0 * PI
    } else {
        wrapped
    }
}

/// Planar rigid transform: translation `(tx, ty)` and heading `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub tx: f64,
    pub ty: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(tx: f64, ty: f64, theta: f64) -> Self {
        Self {
            tx,
            ty,
            theta: wrap_angle(theta),
        }
    }

    pub fn identity() -> Self {
        Self::default()
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(-(c * self.tx + s * self.ty), s * self.tx - c * self.ty, -self.theta)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Pose2) -> Self {
        let (s, c) = self.theta.sin_cos();
        Self::new(
            c * other.tx - s * other.ty + self.tx,
            s * other.tx + c * other.ty + self.ty,
            self.theta + other.theta,
        )
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        se2_apply(self, p)
    }
}

/// Applies `pose` to `p`: `(cosθ·x − sinθ·y + tx, sinθ·x + cosθ·y + ty, z)`.
pub fn se2_apply(pose: &Pose2, p: &Point3) -> Point3 {
    let (s, c) = pose.theta.sin_cos();
    Point3 {
        x: c * p.x - s * p.y + pose.tx,
        y: s * p.x + c * p.y + pose.ty,
        z: p.z,
    }
}

/// LiDAR points in the sensor frame, optionally with per-point normals.
///
/// A normal entry of `None` marks a degenerate neighborhood.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScanCloud {
    pub points: Vec<Point3>,
    pub normals: Option<Vec<Option<UnitNormal3>>>,
}

impl ScanCloud {
    pub fn new(points: Vec<Point3>, normals: Option<Vec<Option<UnitNormal3>>>) -> Result<Self> {
        if let Some(n) = &normals {
            if n.len() != points.len() {
                return Err(Error::NormalCountMismatch {
                    points: points.len(),
                    normals: n.len(),
                });
            }
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn normal(&self, i: usize) -> Option<UnitNormal3> {
        self.normals.as_ref().and_then(|n| n[i])
    }
}

/// Globally referenced map points, each with a unit normal.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MapCloud {
    pub points: Vec<Point3>,
    pub normals: Vec<UnitNormal3>,
}

impl MapCloud {
    pub fn new(points: Vec<Point3>, normals: Vec<UnitNormal3>) -> Result<Self> {
        if points.len() != normals.len() {
            return Err(Error::NormalCountMismatch {
                points: points.len(),
                normals: normals.len(),
            });
        }
        Ok(Self { points, normals })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn push(&mut self, p: Point3, n: UnitNormal3) {
        self.points.push(p);
        self.normals.push(n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MatchMode {
    /// Every (scan point, map point) pair within ε counts.
    #[default]
    AllPairs,
    /// Each scan point contributes at most one match per cell.
    OnePerScanPoint,
}

/// Discretization of the pose search space around an initial pose.
///
/// Cell `i` along an axis is centered on the offset `(i − n/2) · cell_size`,
/// so the cell at index `n/2` is centered on the initial pose. Index `i`
/// runs along x and `j` along y.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpec {
    pub half_extent_xy: f64,
    pub cell_size: f64,
    pub heading_half_range: f64,
    pub heading_step: f64,
    pub epsilon: f64,
    pub match_mode: MatchMode,
}

impl Default for SearchSpec {
    fn default() -> Self {
        Self {
            half_extent_xy: 3.0,
            cell_size: 0.06,
            heading_half_range: 2f64.to_radians(),
            heading_step: 0.5f64.to_radians(),
            epsilon: 0.06,
            match_mode: MatchMode::AllPairs,
        }
    }
}

impl SearchSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(msg));
        let finite = [
            self.half_extent_xy,
            self.cell_size,
            self.heading_half_range,
            self.heading_step,
            self.epsilon,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return bad("non-finite parameter".into());
        }
        if self.cell_size <= 0.0 {
            return bad(format!("cell_size must be positive, got {}", self.cell_size));
        }
        if self.epsilon <= 0.0 {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.heading_step <= 0.0 {
            return bad(format!("heading_step must be positive, got {}", self.heading_step));
        }
        if self.half_extent_xy <= 0.0 || self.heading_half_range < 0.0 {
            return bad("extents must be positive".into());
        }
        let cells = 2.0 * self.half_extent_xy / self.cell_size;
        if (cells - cells.round()).abs() > 1e-6 || cells.round() < 1.0 {
            return bad(format!(
                "2 * half_extent_xy / cell_size = {cells} is not a positive integer"
            ));
        }
        let steps = self.heading_half_range / self.heading_step;
        if (steps - steps.round()).abs() > 1e-6 {
            return bad(format!(
                "heading_half_range / heading_step = {steps} is not an integer"
            ));
        }
        Ok(())
    }

    /// Number of cells along each axis.
    pub fn grid_size(&self) -> usize {
        (2.0 * self.half_extent_xy / self.cell_size).round() as usize
    }

    /// Number of discrete headings; always odd, both range endpoints included.
    pub fn heading_count(&self) -> usize {
        2 * (self.heading_half_range / self.heading_step).round() as usize + 1
    }

    /// Heading offset of heading index `h`.
    pub fn heading_angle(&self, h: usize) -> f64 {
        let mid = (self.heading_count() / 2) as f64;
        (h as f64 - mid) * self.heading_step
    }

    pub fn center_index(&self) -> usize {
        self.grid_size() / 2
    }

    /// Translation offset of the center of cell `i` along one axis.
    pub fn cell_offset(&self, i: usize) -> f64 {
        (i as f64 - self.center_index() as f64) * self.cell_size
    }

    /// Inverse of [`SearchSpec::cell_offset`] for a 2-D offset, `None` when out of range.
    pub fn cell_of(&self, tx: f64, ty: f64) -> Option<(usize, usize)> {
        Some((self.axis_cell(tx)?, self.axis_cell(ty)?))
    }

    fn axis_cell(&self, t: f64) -> Option<usize> {
        if !t.is_finite() || t.abs() > self.half_extent_xy {
            return None;
        }
        let k = (t / self.cell_size + 0.5).floor() + self.center_index() as f64;
        if k < 0.0 || k >= self.grid_size() as f64 {
            return None;
        }
        Some(k as usize)
    }

    /// Pose offset (relative to the initial pose) addressed by `idx`.
    pub fn offset_pose(&self, idx: GridIndex) -> Pose2 {
        Pose2::new(
            self.cell_offset(idx.i),
            self.cell_offset(idx.j),
            self.heading_angle(idx.h),
        )
    }
}

/// Address of one cell in one heading layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GridIndex {
    pub i: usize,
    pub j: usize,
    pub h: usize,
}

impl GridIndex {
    pub fn new(i: usize, j: usize, h: usize) -> Self {
        Self { i, j, h }
    }

    /// Chebyshev distance in the translation plane, ignoring heading.
    pub fn cell_distance(&self, other: &GridIndex) -> usize {
        self.i.abs_diff(other.i).max(self.j.abs_diff(other.j))
    }
}
