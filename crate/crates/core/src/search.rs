//! Exhaustive maximum consensus search over the discretized pose space.
//!
//! Each rotated scan point retrieves every map point it could match for any
//! translation in the grid (a box of `half_extent + ε` horizontally, `ε`
//! vertically) and splats the pair's stencil. Work is split into fixed-size
//! scan chunks whose partial grids are summed in chunk order, so serial and
//! parallel runs produce identical grids.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{GridIndex, MapCloud, MatchMode, Point3, Pose2, ScanCloud, SearchSpec, UnitNormal3};
use crate::index::{Aabb, ColumnIndex};
use crate::objectives::{
    match_weight, pair_matches, splat_stencil, Accumulator, CellAxis, Grid, HeadingLayer, NormalEquations2,
    Objective, Stencil,
};

const CHUNK: usize = 256;
const COLUMN_WIDTH: f64 = 0.25;

/// Oracle size limits.
pub const ORACLE_MAX_SCAN: usize = 500;
pub const ORACLE_MAX_MAP: usize = 5000;
pub const ORACLE_MAX_CELLS: usize = 21;
pub const ORACLE_MAX_HEADINGS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Serial,
    #[default]
    Parallel,
}

/// Map cloud prepared for repeated searches with one [`SearchSpec`].
#[derive(Debug, Clone)]
pub struct SearchIndex<'m> {
    map: &'m MapCloud,
    columns: ColumnIndex,
    axis: CellAxis,
    spec: SearchSpec,
}

impl<'m> SearchIndex<'m> {
    pub fn new(map: &'m MapCloud, spec: SearchSpec) -> Result<Self> {
        spec.validate()?;
        if map.is_empty() {
            return Err(Error::EmptyMap);
        }
        let columns = ColumnIndex::new(&map.points, COLUMN_WIDTH.max(spec.epsilon), spec.epsilon)?;
        Ok(Self {
            map,
            columns,
            axis: CellAxis::new(&spec),
            spec,
        })
    }

    pub fn spec(&self) -> &SearchSpec {
        &self.spec
    }

    pub fn map(&self) -> &MapCloud {
        self.map
    }

    /// Every map point that can match `r` somewhere in the grid.
    #[inline]
    fn candidates(&self, r: &Point3, mut f: impl FnMut(usize, &Point3)) {
        let s = &self.spec;
        let lo = s.cell_offset(0) - s.epsilon;
        let hi = s.cell_offset(s.grid_size() - 1) + s.epsilon;
        // slack only widens retrieval; the stencil test is exact
        let m = 1e-9 * (1.0 + r.x.abs().max(r.y.abs()).max(r.z.abs()));
        let bounds = Aabb::new(
            Point3::new(r.x + lo - m, r.y + lo - m, r.z - s.epsilon - m),
            Point3::new(r.x + hi + m, r.y + hi + m, r.z + s.epsilon + m),
        );
        // the z test is exact in the stencil; x needs the box test
        self.columns.for_each_run(&bounds, |points, ids| {
            for (q, &j) in points.iter().zip(ids) {
                if q.x >= bounds.min.x && q.x <= bounds.max.x {
                    f(j as usize, q);
                }
            }
        });
    }
}

/// Outcome of one exhaustive search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub objective: Objective,
    pub initial_pose: Pose2,
    /// Offset of the best cell relative to the initial pose.
    pub best_pose: Pose2,
    pub best_index: GridIndex,
    pub best_value: f64,
    pub accumulator: Accumulator,
    pub elapsed_secs: f64,
}

impl LocalizationResult {
    pub fn world_pose(&self) -> Pose2 {
        Pose2::new(
            self.initial_pose.tx + self.best_pose.tx,
            self.initial_pose.ty + self.best_pose.ty,
            self.initial_pose.theta + self.best_pose.theta,
        )
    }

    pub fn score_grids(&self) -> Vec<Grid<f64>> {
        self.accumulator.score_grids()
    }
}

/// Scan rotated into the world at heading `initial.theta + theta` with zero
/// translation offset. Normals rotate with the points.
fn rotate_scan(scan: &ScanCloud, initial: &Pose2, theta: f64) -> (Vec<Point3>, Vec<Option<UnitNormal3>>) {
    let pose = Pose2::new(initial.tx, initial.ty, initial.theta + theta);
    let pts = scan.points.iter().map(|p| pose.apply(p)).collect();
    let normals = (0..scan.len())
        .map(|i| scan.normal(i).map(|n| n.rotated(pose.theta)))
        .collect();
    (pts, normals)
}

/// Objective grid of one heading offset `theta` for a scan in the sensor frame.
pub fn evaluate_heading(
    scan: &ScanCloud,
    index: &SearchIndex<'_>,
    initial: &Pose2,
    theta: f64,
    objective: Objective,
    exec: Execution,
) -> HeadingLayer {
    let (rotated, normals) = rotate_scan(scan, initial, theta);
    let n_chunks = rotated.len().div_ceil(CHUNK);
    let work = |c: usize| {
        let range = c * CHUNK..((c + 1) * CHUNK).min(rotated.len());
        accumulate_chunk(index, &rotated[range.clone()], &normals[range], objective)
    };
    let partials: Vec<HeadingLayer> = match exec {
        Execution::Serial => (0..n_chunks).map(work).collect(),
        Execution::Parallel => (0..n_chunks).into_par_iter().map(work).collect(),
    };
    let mut layer = HeadingLayer::new(objective, index.spec.grid_size());
    for p in &partials {
        layer.merge(p);
    }
    layer
}

fn accumulate_chunk(
    index: &SearchIndex<'_>,
    rotated: &[Point3],
    normals: &[Option<UnitNormal3>],
    objective: Objective,
) -> HeadingLayer {
    let map = index.map;
    let axis = &index.axis;
    let weight_of = |n_scan: &Option<UnitNormal3>, j: usize| match objective {
        Objective::Count => 1.0,
        Objective::Helmert => match_weight(n_scan.as_ref(), &map.normals[j]),
    };
    let mut layer = HeadingLayer::new(objective, index.spec.grid_size());
    match index.spec.match_mode {
        MatchMode::AllPairs => {
            for (r, n_scan) in rotated.iter().zip(normals) {
                index.candidates(r, |j, q| {
                    let w = weight_of(n_scan, j);
                    if w <= 0.0 {
                        return;
                    }
                    if let Some(st) = Stencil::on_axis(axis, r, q) {
                        splat_stencil(&st, w, &map.normals[j], &mut layer);
                    }
                });
            }
        }
        MatchMode::OnePerScanPoint => {
            let mut dedup = BestMatch::new(index.spec.grid_size());
            for (r, n_scan) in rotated.iter().zip(normals) {
                index.candidates(r, |j, q| {
                    if let Some(st) = Stencil::on_axis(axis, r, q) {
                        dedup.offer(&st, weight_of(n_scan, j), j as u32);
                    }
                });
                dedup.flush(&mut layer, map);
            }
        }
    }
    layer
}

/// Per-cell best match of the current scan point: highest weight, then lowest
/// map index.
struct BestMatch {
    size: usize,
    best: Vec<Option<(f64, u32)>>,
    touched: Vec<usize>,
}

impl BestMatch {
    fn new(size: usize) -> Self {
        Self {
            size,
            best: vec![None; size * size],
            touched: Vec::new(),
        }
    }

    fn offer(&mut self, st: &Stencil, w: f64, idx: u32) {
        for (i, j) in st.cells() {
            let cell = j * self.size + i;
            match &mut self.best[cell] {
                slot @ None => {
                    *slot = Some((w, idx));
                    self.touched.push(cell);
                }
                Some(b) => {
                    if w > b.0 || (w == b.0 && idx < b.1) {
                        *b = (w, idx);
                    }
                }
            }
        }
    }

    fn flush(&mut self, layer: &mut HeadingLayer, map: &MapCloud) {
        for &cell in &self.touched {
            let (w, idx) = self.best[cell].take().expect("touched cell has a match");
            let (i, j) = (cell % self.size, cell / self.size);
            match layer {
                HeadingLayer::Count(g) => *g.get_mut(i, j) += 1,
                HeadingLayer::Helmert(g) => {
                    let n = &map.normals[idx as usize];
                    g.get_mut(i, j).add(w, n.nx(), n.ny());
                }
            }
        }
        self.touched.clear();
    }
}

/// Exhaustive search over all cells and headings.
///
/// Ties resolve to the lowest heading index, then lowest `j`, then lowest `i`.
/// Fails with [`Error::EmptyConsensus`] when no pose has a single match with
/// positive weight. A Helmert search whose matches all share one normal
/// direction succeeds with an all-zero score grid.
pub fn maximum_consensus(
    scan: &ScanCloud,
    map: &MapCloud,
    initial: &Pose2,
    spec: &SearchSpec,
    objective: Objective,
) -> Result<LocalizationResult> {
    let index = SearchIndex::new(map, *spec)?;
    search(scan, &index, initial, objective, Execution::Parallel)
}

/// [`maximum_consensus`] against a prepared index.
pub fn search(
    scan: &ScanCloud,
    index: &SearchIndex<'_>,
    initial: &Pose2,
    objective: Objective,
    exec: Execution,
) -> Result<LocalizationResult> {
    if scan.is_empty() {
        return Err(Error::EmptyScan);
    }
    let start = Instant::now();
    let spec = index.spec;
    let eval = |h: usize| evaluate_heading(scan, index, initial, spec.heading_angle(h), objective, exec);
    let layers: Vec<HeadingLayer> = match exec {
        Execution::Serial => (0..spec.heading_count()).map(eval).collect(),
        Execution::Parallel => (0..spec.heading_count()).into_par_iter().map(eval).collect(),
    };
    let accumulator = Accumulator { objective, layers };
    if !accumulator.layers.iter().any(HeadingLayer::has_matches) {
        return Err(Error::EmptyConsensus);
    }
    let (best_index, best_value) = argmax(&accumulator).ok_or(Error::EmptyConsensus)?;
    Ok(LocalizationResult {
        objective,
        initial_pose: *initial,
        best_pose: spec.offset_pose(best_index),
        best_index,
        best_value,
        accumulator,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

/// Global maximum with lexicographic (h, j, i) tie-breaking.
pub fn argmax(acc: &Accumulator) -> Option<(GridIndex, f64)> {
    let mut best: Option<(GridIndex, f64)> = None;
    for (h, layer) in acc.layers.iter().enumerate() {
        let n = layer.size();
        for j in 0..n {
            for i in 0..n {
                let v = layer.value(i, j);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((GridIndex::new(i, j, h), v));
                }
            }
        }
    }
    best
}

/// Direct per-pose evaluation of the objective over every cell, scan point
/// and map point. Only for small instances.
pub fn brute_force_oracle(
    scan: &ScanCloud,
    map: &MapCloud,
    initial: &Pose2,
    spec: &SearchSpec,
    objective: Objective,
) -> Result<Accumulator> {
    spec.validate()?;
    if scan.len() > ORACLE_MAX_SCAN
        || map.len() > ORACLE_MAX_MAP
        || spec.grid_size() > ORACLE_MAX_CELLS
        || spec.heading_count() > ORACLE_MAX_HEADINGS
    {
        return Err(Error::InstanceTooLarge(format!(
            "{} scan x {} map points, {}x{}x{} poses",
            scan.len(),
            map.len(),
            spec.grid_size(),
            spec.grid_size(),
            spec.heading_count()
        )));
    }
    let n = spec.grid_size();
    let mut acc = Accumulator::new(objective, spec);
    for (h, layer) in acc.layers.iter_mut().enumerate() {
        let (rotated, normals) = rotate_scan(scan, initial, spec.heading_angle(h));
        for j in 0..n {
            for i in 0..n {
                let (tx, ty) = (spec.cell_offset(i), spec.cell_offset(j));
                let mut count = 0u64;
                let mut ne = NormalEquations2::default();
                for (r, n_scan) in rotated.iter().zip(&normals) {
                    let mut best: Option<(f64, usize)> = None;
                    for (k, q) in map.points.iter().enumerate() {
                        if !pair_matches(r, tx, ty, q, spec.epsilon) {
                            continue;
                        }
                        let w = match objective {
                            Objective::Count => 1.0,
                            Objective::Helmert => match_weight(n_scan.as_ref(), &map.normals[k]),
                        };
                        match spec.match_mode {
                            MatchMode::AllPairs => {
                                count += 1;
                                ne.add(w, map.normals[k].nx(), map.normals[k].ny());
                            }
                            MatchMode::OnePerScanPoint => {
                                if best.is_none_or(|(bw, _)| w > bw) {
                                    best = Some((w, k));
                                }
                            }
                        }
                    }
                    if let Some((w, k)) = best {
                        count += 1;
                        ne.add(w, map.normals[k].nx(), map.normals[k].ny());
                    }
                }
                match layer {
                    HeadingLayer::Count(g) => *g.get_mut(i, j) = count,
                    HeadingLayer::Helmert(g) => *g.get_mut(i, j) = ne,
                }
            }
        }
    }
    Ok(acc)
}
