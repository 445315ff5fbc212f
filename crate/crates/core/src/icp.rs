//! Point-to-plane ICP baseline and the grid-initialization convergence study.

use std::collections::HashSet;
use std::num::NonZero;

use kiddo::{ImmutableKdTree, SquaredEuclidean};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, MapCloud, Point3, Pose2, ScanCloud};
use crate::objectives::DET_FLOOR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpParams {
    /// Correspondences farther than this (meters) are rejected.
    pub max_correspondence_distance: f64,
    /// Scan points are thinned to one per voxel of this edge length (meters)
    /// before matching; zero keeps every point.
    pub scan_voxel: f64,
    pub max_iterations: usize,
    pub translation_tolerance: f64,
    pub rotation_tolerance: f64,
    /// A run reached the truth if it ends within this xy distance (meters)...
    pub truth_translation_tolerance: f64,
    /// ...and this heading difference (radians).
    pub truth_rotation_tolerance: f64,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_correspondence_distance: 3.0,
            scan_voxel: 0.2,
            max_iterations: 50,
            translation_tolerance: 1e-4,
            rotation_tolerance: 1e-5,
            truth_translation_tolerance: 0.10,
            truth_rotation_tolerance: 0.5f64.to_radians(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub final_pose: Pose2,
    pub iterations: usize,
    /// The update fell below tolerance before `max_iterations`.
    pub converged: bool,
    /// Set by callers that know the true pose.
    pub reached_truth: bool,
    pub final_rms: f64,
}

/// Map cloud indexed for nearest-neighbor correspondence search.
pub struct IcpMap<'m> {
    map: &'m MapCloud,
    tree: ImmutableKdTree<f64, 3>,
}

impl<'m> IcpMap<'m> {
    pub fn new(map: &'m MapCloud) -> Result<Self> {
        if map.is_empty() {
            return Err(Error::EmptyMap);
        }
        let coords: Vec<[f64; 3]> = map.points.iter().map(|p| [p.x, p.y, p.z]).collect();
        let tree = ImmutableKdTree::new_from_slice(&coords);
        Ok(Self { map, tree })
    }

    fn nearest_within(&self, p: &Point3, radius: f64) -> Option<usize> {
        let one = NonZero::new(1).expect("one is nonzero");
        self.tree
            .nearest_n_within::<SquaredEuclidean>(&[p.x, p.y, p.z], radius * radius, one, false)
            .first()
            .map(|hit| hit.item as usize)
    }
}

/// Keeps the first point of every occupied voxel, in input order.
pub fn voxel_thin(points: &[Point3], voxel: f64) -> Vec<Point3> {
    if voxel <= 0.0 {
        return points.to_vec();
    }
    let mut seen = HashSet::with_capacity(points.len());
    points
        .iter()
        .filter(|p| seen.insert([p.x, p.y, p.z].map(|c| (c / voxel).floor() as i64)))
        .copied()
        .collect()
}

/// Point-to-plane ICP over `(tx, ty, θ)` starting from `init`.
///
/// Each iteration pairs every transformed scan point `s'` with its nearest
/// map point `m` within the rejection radius and solves the linearized least
/// squares problem on `⟨m − s', n_m⟩`, rotating about the current sensor
/// position.
pub fn icp_point_to_plane(scan: &ScanCloud, map: &IcpMap<'_>, init: &Pose2, params: &IcpParams) -> Result<IcpResult> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let points = voxel_thin(&scan.points, params.scan_voxel);
    let mut pose = *init;
    let mut rms = f64::INFINITY;
    for iter in 0..params.max_iterations {
        let mut ata = Matrix3::<f64>::zeros();
        let mut atb = Vector3::<f64>::zeros();
        let mut sq_sum = 0.0;
        let mut pairs = 0usize;
        for p in &points {
            let s = pose.apply(p);
            let Some(j) = map.nearest_within(&s, params.max_correspondence_distance) else {
                continue;
            };
            let m = &map.map.points[j];
            let n = &map.map.normals[j];
            let (lx, ly) = (s.x - pose.tx, s.y - pose.ty);
            let a = Vector3::new(n.nx(), n.ny(), n.nx() * -ly + n.ny() * lx);
            let [dx, dy, dz] = m.sub(&s);
            let b = dx * n.nx() + dy * n.ny() + dz * n.nz();
            ata += a * a.transpose();
            atb += a * b;
            sq_sum += b * b;
            pairs += 1;
        }
        if pairs > 0 {
            rms = (sq_sum / pairs as f64).sqrt();
        }
        let det = ata.determinant();
        if pairs < 3 || det.abs() <= DET_FLOOR {
            return Ok(IcpResult {
                final_pose: pose,
                iterations: iter,
                converged: false,
                reached_truth: false,
                final_rms: if rms.is_finite() { rms } else { 0.0 },
            });
        }
        let Some(delta) = ata.cholesky().map(|c| c.solve(&atb)) else {
            return Ok(IcpResult {
                final_pose: pose,
                iterations: iter,
                converged: false,
                reached_truth: false,
                final_rms: rms,
            });
        };
        pose = Pose2::new(pose.tx + delta[0], pose.ty + delta[1], pose.theta + delta[2]);
        if delta[0].hypot(delta[1]) < params.translation_tolerance && delta[2].abs() < params.rotation_tolerance {
            return Ok(IcpResult {
                final_pose: pose,
                iterations: iter + 1,
                converged: true,
                reached_truth: false,
                final_rms: rms,
            });
        }
    }
    Ok(IcpResult {
        final_pose: pose,
        iterations: params.max_iterations,
        converged: false,
        reached_truth: false,
        final_rms: rms,
    })
}

/// Whether `pose` lies within the truth tolerances of `truth`.
pub fn is_at_truth(pose: &Pose2, truth: &Pose2, params: &IcpParams) -> bool {
    let dxy = (pose.tx - truth.tx).hypot(pose.ty - truth.ty);
    let dth = wrap_angle(pose.theta - truth.theta).abs();
    dxy <= params.truth_translation_tolerance && dth <= params.truth_rotation_tolerance
}

/// Offsets of the 5×5 initialization grid (1 m spacing).
pub const STUDY_OFFSETS: [f64; 5] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRun {
    pub offset: (f64, f64),
    pub result: IcpResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceStudy {
    pub runs: Vec<StudyRun>,
    /// True when at least one initialization missed the truth.
    pub epoch_failed: bool,
}

impl ConvergenceStudy {
    pub fn failed_runs(&self) -> usize {
        self.runs.iter().filter(|r| !r.result.reached_truth).count()
    }
}

/// Runs ICP from 25 initializations around `truth` (truth heading) and
/// checks where each one ends up. Runs are ordered by y offset, then x.
pub fn grid_convergence_study(
    scan: &ScanCloud,
    map: &IcpMap<'_>,
    truth: &Pose2,
    params: &IcpParams,
) -> Result<ConvergenceStudy> {
    let inits: Vec<(f64, f64)> = STUDY_OFFSETS
        .iter()
        .flat_map(|&dy| STUDY_OFFSETS.iter().map(move |&dx| (dx, dy)))
        .collect();
    let runs = inits
        .par_iter()
        .map(|&(dx, dy)| {
            let init = Pose2::new(truth.tx + dx, truth.ty + dy, truth.theta);
            let mut result = icp_point_to_plane(scan, map, &init, params)?;
            result.reached_truth = is_at_truth(&result.final_pose, truth, params);
            Ok(StudyRun { offset: (dx, dy), result })
        })
        .collect::<Result<Vec<_>>>()?;
    let epoch_failed = runs.iter().any(|r| !r.result.reached_truth);
    Ok(ConvergenceStudy { runs, epoch_failed })
}
