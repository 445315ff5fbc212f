//! Consensus objectives: the match count and the Helmert point-error score.
//!
//! For a fixed scan–map pair, the translations `t` satisfying
//! `‖(R_θ p + t) − q‖∞ ≤ ε` form an axis-aligned square of side `2ε`
//! centered at `q − R_θ p`. Both objectives are evaluated by splatting that
//! square into per-heading accumulator grids. The count objective adds one
//! per pair; the Helmert objective adds the pair's contribution to the 2×2
//! point-to-plane normal equations `N = AᵀPA` of the translation, and the
//! cell score is `1 / tr(N⁻¹) = det(N) / tr(N)`.

use std::ops::AddAssign;

use nalgebra::{Matrix2, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, SearchSpec, UnitNormal3};

/// Determinant (and trace) floor below which the translation is unconstrained.
pub const DET_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    Count,
    Helmert,
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Count => "count",
            Objective::Helmert => "helmert",
        }
    }
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Correspondence weight `max(0, ⟨n_scan, n_map⟩)`; an invalid scan normal weighs 0.
pub fn match_weight(n_scan: Option<&UnitNormal3>, n_map: &UnitNormal3) -> f64 {
    n_scan.map_or(0.0, |n| n.dot(n_map).max(0.0))
}

/// Accumulated weighted normal moments of the translation-only
/// point-to-plane adjustment.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NormalEquations2 {
    pub sxx: f64,
    pub sxy: f64,
    pub syy: f64,
    pub n_obs: u32,
}

impl NormalEquations2 {
    pub fn from_moments(sxx: f64, sxy: f64, syy: f64) -> Self {
        Self {
            sxx,
            sxy,
            syy,
            n_obs: 0,
        }
    }

    /// Adds one observation row `(nx, ny)` with weight `w`. Zero weights are dropped.
    #[inline]
    pub fn add(&mut self, w: f64, nx: f64, ny: f64) {
        if w > 0.0 {
            self.sxx += w * nx * nx;
            self.sxy += w * nx * ny;
            self.syy += w * ny * ny;
            self.n_obs += 1;
        }
    }

    pub fn det(&self) -> f64 {
        self.sxx * self.syy - self.sxy * self.sxy
    }

    pub fn trace(&self) -> f64 {
        self.sxx + self.syy
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.sxx, self.sxy, self.sxy, self.syy)
    }
}

impl AddAssign for NormalEquations2 {
    fn add_assign(&mut self, rhs: Self) {
        self.sxx += rhs.sxx;
        self.sxy += rhs.sxy;
        self.syy += rhs.syy;
        self.n_obs += rhs.n_obs;
    }
}

/// Inverse Helmert point error `1 / tr(Q_tt)`, computed as `det(N) / tr(N)`.
///
/// Rank-deficient systems score 0.
pub fn helmert_score(ne: &NormalEquations2) -> f64 {
    let det = ne.det();
    let tr = ne.trace();
    if det <= DET_FLOOR || tr <= DET_FLOOR {
        0.0
    } else {
        det / tr
    }
}

/// Same score via explicit inversion `Q_tt = N⁻¹` and its eigenvalues.
pub fn helmert_score_reference(ne: &NormalEquations2) -> Result<f64> {
    let det = ne.det();
    if det <= DET_FLOOR {
        return Err(Error::Singular { det });
    }
    let q = ne.matrix().try_inverse().ok_or(Error::Singular { det })?;
    let eig = SymmetricEigen::new(q);
    Ok(1.0 / (eig.eigenvalues[0] + eig.eigenvalues[1]))
}

/// Square grid stored row-major: index `(i, j)` maps to `j * size + i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid<T> {
    size: usize,
    data: Vec<T>,
}

impl<T: Clone + Default> Grid<T> {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![T::default(); size * size],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(size: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), size * size, "grid data length");
        Self { size, data }
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> &T {
        &self.data[j * self.size + i]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut T {
        &mut self.data[j * self.size + i]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            size: self.size,
            data: self.data.iter().map(f).collect(),
        }
    }
}

/// One heading's accumulated objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadingLayer {
    Count(Grid<u64>),
    Helmert(Grid<NormalEquations2>),
}

impl HeadingLayer {
    pub fn new(objective: Objective, size: usize) -> Self {
        match objective {
            Objective::Count => HeadingLayer::Count(Grid::new(size)),
            Objective::Helmert => HeadingLayer::Helmert(Grid::new(size)),
        }
    }

    pub fn size(&self) -> usize {
        match self {
            HeadingLayer::Count(g) => g.size(),
            HeadingLayer::Helmert(g) => g.size(),
        }
    }

    pub fn objective(&self) -> Objective {
        match self {
            HeadingLayer::Count(_) => Objective::Count,
            HeadingLayer::Helmert(_) => Objective::Helmert,
        }
    }

    /// Objective value of a cell: the raw count, or the Helmert score.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        match self {
            HeadingLayer::Count(g) => count_score(*g.get(i, j)) as f64,
            HeadingLayer::Helmert(g) => helmert_score(g.get(i, j)),
        }
    }

    pub fn score_grid(&self) -> Grid<f64> {
        match self {
            HeadingLayer::Count(g) => g.map(|&c| count_score(c) as f64),
            HeadingLayer::Helmert(g) => g.map(helmert_score),
        }
    }

    /// Whether any cell holds at least one match with positive weight.
    pub fn has_matches(&self) -> bool {
        match self {
            HeadingLayer::Count(g) => g.as_slice().iter().any(|&c| c > 0),
            HeadingLayer::Helmert(g) => g.as_slice().iter().any(|ne| ne.n_obs > 0),
        }
    }

    /// Adds `other` cell by cell. Both layers must share objective and size.
    pub fn merge(&mut self, other: &HeadingLayer) {
        match (self, other) {
            (HeadingLayer::Count(a), HeadingLayer::Count(b)) => {
                assert_eq!(a.size(), b.size());
                a.as_mut_slice()
                    .iter_mut()
                    .zip(b.as_slice())
                    .for_each(|(x, y)| *x += y);
            }
            (HeadingLayer::Helmert(a), HeadingLayer::Helmert(b)) => {
                assert_eq!(a.size(), b.size());
                a.as_mut_slice()
                    .iter_mut()
                    .zip(b.as_slice())
                    .for_each(|(x, y)| *x += *y);
            }
            _ => panic!("cannot merge layers of different objectives"),
        }
    }
}

/// Per-heading accumulator grids of one objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    pub objective: Objective,
    pub layers: Vec<HeadingLayer>,
}

impl Accumulator {
    pub fn new(objective: Objective, spec: &SearchSpec) -> Self {
        Self {
            objective,
            layers: (0..spec.heading_count())
                .map(|_| HeadingLayer::new(objective, spec.grid_size()))
                .collect(),
        }
    }

    pub fn grid_size(&self) -> usize {
        self.layers.first().map_or(0, HeadingLayer::size)
    }

    pub fn score_grids(&self) -> Vec<Grid<f64>> {
        self.layers.iter().map(HeadingLayer::score_grid).collect()
    }
}

/// The count objective of a cell.
#[inline]
pub fn count_score(count: u64) -> u64 {
    count
}

/// l∞ match test along one horizontal axis for rotated scan coordinate `r`,
/// translation `t` and map coordinate `q`.
#[inline]
pub fn axis_match(r: f64, t: f64, q: f64, eps: f64) -> bool {
    ((r + t) - q).abs() <= eps
}

/// Full match test `‖(r + t) − q‖∞ ≤ ε` for a translation without z part.
#[inline]
pub fn pair_matches(r: &Point3, tx: f64, ty: f64, q: &Point3, eps: f64) -> bool {
    axis_match(r.x, tx, q.x, eps) && axis_match(r.y, ty, q.y, eps) && (r.z - q.z).abs() <= eps
}

/// Cell-center offsets of one grid axis, precomputed for the search loop.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAxis {
    offsets: Vec<f64>,
    center: f64,
    inv_cell: f64,
    epsilon: f64,
}

impl CellAxis {
    pub fn new(spec: &SearchSpec) -> Self {
        Self {
            offsets: (0..spec.grid_size()).map(|i| spec.cell_offset(i)).collect(),
            center: spec.center_index() as f64,
            inv_cell: 1.0 / spec.cell_size,
            epsilon: spec.epsilon,
        }
    }

    /// Inclusive range of cell indices whose center offset satisfies
    /// [`axis_match`] for scan coordinate `r` and map coordinate `q`.
    #[inline(always)]
    pub fn range(&self, r: f64, q: f64) -> Option<(usize, usize)> {
        let n = self.offsets.len();
        let last = (n - 1) as f64;
        let d = q - r;
        // Estimated bounds with one cell of slack on each side, trimmed below
        // with the exact test. Clamping first keeps the truncating casts
        // within range.
        let lo = ((d - self.epsilon) * self.inv_cell + self.center).clamp(-2.0, last + 2.0);
        let hi = ((d + self.epsilon) * self.inv_cell + self.center).clamp(-2.0, last + 2.0);
        if !(lo <= hi) || hi < -1.0 || lo > last + 1.0 {
            return None;
        }
        // truncation equals floor for the positive shifted values; the
        // small bias moves near-integer lower bounds one cell down
        let floor = |v: f64| (v + 3.0) as i64 - 3;
        let clamp = |k: i64| k.clamp(0, n as i64 - 1) as usize;
        let mut a = clamp(floor(lo - 1e-6));
        let mut b = clamp(floor(hi) + 1);
        let hit = |i: usize| axis_match(r, self.offsets[i], q, self.epsilon);
        while a <= b && !hit(a) {
            a += 1;
        }
        while b > a && !hit(b) {
            b -= 1;
        }
        (a <= b && hit(a)).then_some((a, b))
    }
}

/// Inclusive range of cell indices along one axis whose center offset
/// satisfies [`axis_match`].
pub fn stencil_range(spec: &SearchSpec, r: f64, q: f64) -> Option<(usize, usize)> {
    CellAxis::new(spec).range(r, q)
}

/// The square of cells a matched pair covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stencil {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Stencil {
    /// Stencil of rotated scan point `r` against map point `q`, or `None`
    /// when no cell of the grid matches.
    pub fn of(spec: &SearchSpec, r: &Point3, q: &Point3) -> Option<Self> {
        Self::on_axis(&CellAxis::new(spec), r, q)
    }

    /// [`Stencil::of`] with a precomputed axis.
    #[inline(always)]
    pub fn on_axis(axis: &CellAxis, r: &Point3, q: &Point3) -> Option<Self> {
        if (r.z - q.z).abs() > axis.epsilon {
            return None;
        }
        let (i0, i1) = axis.range(r.x, q.x)?;
        let (j0, j1) = axis.range(r.y, q.y)?;
        Some(Self { i0, i1, j0, j1 })
    }

    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.j0..=self.j1).flat_map(move |j| (self.i0..=self.i1).map(move |i| (i, j)))
    }

    pub fn len(&self) -> usize {
        (self.i1 - self.i0 + 1) * (self.j1 - self.j0 + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A matched scan–map pair ready to be splatted.
#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    /// Scan point rotated by the candidate heading (zero translation offset).
    pub rotated: &'a Point3,
    pub map_point: &'a Point3,
    pub map_normal: &'a UnitNormal3,
    pub weight: f64,
}

/// Adds one pair to every cell whose center satisfies the l∞ match test.
///
/// Count layers gain 1 per cell; Helmert layers gain
/// `(w·nx², w·nx·ny, w·ny²)` of the map normal.
pub fn splat(pair: &Pair<'_>, spec: &SearchSpec, layer: &mut HeadingLayer) {
    if let Some(stencil) = Stencil::of(spec, pair.rotated, pair.map_point) {
        splat_stencil(&stencil, pair.weight, pair.map_normal, layer);
    }
}

/// Adds one pair with a known stencil; see [`splat`].
#[inline]
pub fn splat_stencil(stencil: &Stencil, weight: f64, map_normal: &UnitNormal3, layer: &mut HeadingLayer) {
    match layer {
        HeadingLayer::Count(g) => {
            let n = g.size();
            for j in stencil.j0..=stencil.j1 {
                for v in &mut g.as_mut_slice()[j * n + stencil.i0..=j * n + stencil.i1] {
                    *v += 1;
                }
            }
        }
        HeadingLayer::Helmert(g) => {
            if weight <= 0.0 {
                return;
            }
            let (nx, ny) = (map_normal.nx(), map_normal.ny());
            let n = g.size();
            for j in stencil.j0..=stencil.j1 {
                for ne in &mut g.as_mut_slice()[j * n + stencil.i0..=j * n + stencil.i1] {
                    ne.add(weight, nx, ny);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn equations(n1: u32, n2: u32) -> NormalEquations2 {
        let mut ne = NormalEquations2::default();
        for _ in 0..n1 {
            ne.add(1.0, 1.0, 0.0);
        }
        for _ in 0..n2 {
            ne.add(1.0, 0.0, 1.0);
        }
        ne
    }

    #[test]
    fn weight_examples() {
        let a = UnitNormal3::PLUS_X;
        assert_eq!(match_weight(Some(&a), &a), 1.0);
        assert_eq!(match_weight(Some(&a.flipped()), &a), 0.0);
        let b = UnitNormal3::new(0.5, 3f64.sqrt() / 2.0, 0.0).unwrap();
        assert!((match_weight(Some(&b), &a) - 0.5).abs() < 1e-12);
        assert_eq!(match_weight(None, &a), 0.0);
    }

    #[test]
    fn orthogonal_observation_counts() {
        for n in [1u32, 10, 1000] {
            let s = helmert_score(&equations(n, n));
            assert!((s - n as f64 / 2.0).abs() < 1e-9);
        }
        let s = helmert_score(&equations(1, 1000));
        assert!((s - 1000.0 / 1001.0).abs() < 1e-12);
        assert!(s < 1.0);
        let s = helmert_score(&equations(3, 7));
        assert!((s - 1.0 / (1.0 / 3.0 + 1.0 / 7.0)).abs() < 1e-9);
    }

    #[test]
    fn parallel_normals_score_zero() {
        assert_eq!(helmert_score(&equations(0, 500)), 0.0);
        let mut ne = NormalEquations2::default();
        let n = UnitNormal3::new(1.0, 2.0, 0.0).unwrap();
        for _ in 0..100 {
            ne.add(0.7, n.nx(), n.ny());
        }
        assert_eq!(helmert_score(&ne), 0.0);
        assert!(helmert_score_reference(&ne).is_err());
    }

    #[test]
    fn reference_examples() {
        let id = NormalEquations2::from_moments(1.0, 0.0, 1.0);
        assert!((helmert_score_reference(&id).unwrap() - 0.5).abs() < 1e-12);
        let diag = NormalEquations2::from_moments(4.0, 0.0, 1.0);
        assert!((helmert_score_reference(&diag).unwrap() - 0.8).abs() < 1e-12);
        assert!((helmert_score(&diag) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn zero_weight_adds_nothing() {
        let mut ne = NormalEquations2::default();
        ne.add(0.0, 1.0, 0.0);
        assert_eq!(ne, NormalEquations2::default());
    }

    #[test]
    fn splat_at_cell_center_covers_three_by_three() {
        // binary-exact cell size so the inclusive boundary is hit exactly
        let spec = SearchSpec {
            half_extent_xy: 3.125,
            cell_size: 0.0625,
            epsilon: 0.0625,
            ..SearchSpec::default()
        };
        let r = Point3::new(1.0, 2.0, 0.5);
        // d = q − r sits exactly on the center of cell (53, 45)
        let q = Point3::new(1.0 + spec.cell_offset(53), 2.0 + spec.cell_offset(45), 0.5);
        let mut layer = HeadingLayer::new(Objective::Count, spec.grid_size());
        let n = UnitNormal3::PLUS_X;
        splat(
            &Pair { rotated: &r, map_point: &q, map_normal: &n, weight: 1.0 },
            &spec,
            &mut layer,
        );
        // enumerate every cell center directly
        let mut expected = Vec::new();
        for j in 0..spec.grid_size() {
            for i in 0..spec.grid_size() {
                if pair_matches(&r, spec.cell_offset(i), spec.cell_offset(j), &q, spec.epsilon) {
                    expected.push((i, j));
                }
            }
        }
        assert_eq!(expected.len(), 9);
        let HeadingLayer::Count(g) = &layer else { unreachable!() };
        for j in 0..spec.grid_size() {
            for i in 0..spec.grid_size() {
                let want = u64::from(expected.contains(&(i, j)));
                assert_eq!(*g.get(i, j), want, "cell ({i},{j})");
            }
        }
    }

    #[test]
    fn zero_weight_pair_leaves_helmert_grid() {
        let spec = SearchSpec::default();
        let r = Point3::default();
        let q = Point3::new(0.01, 0.02, 0.0);
        let mut layer = HeadingLayer::new(Objective::Helmert, spec.grid_size());
        let before = layer.clone();
        let n = UnitNormal3::PLUS_Y;
        splat(&Pair { rotated: &r, map_point: &q, map_normal: &n, weight: 0.0 }, &spec, &mut layer);
        assert_eq!(layer, before);
    }

    #[test]
    fn stencil_outside_grid_is_none() {
        let spec = SearchSpec::default();
        assert_eq!(stencil_range(&spec, 0.0, 10.0), None);
        assert_eq!(stencil_range(&spec, 0.0, -3.2), None);
        // just inside the lower edge: only cell 0 matches
        assert_eq!(stencil_range(&spec, 0.0, -3.05), Some((0, 0)));
        let far_z = Stencil::of(&spec, &Point3::default(), &Point3::new(0.0, 0.0, 0.07));
        assert_eq!(far_z, None);
    }

    proptest! {
        #[test]
        fn stencil_equals_per_cell_enumeration(
            rx in -5.0..5.0f64, ry in -5.0..5.0f64,
            dx in -3.3..3.3f64, dy in -3.3..3.3f64, dz in -0.08..0.08f64,
        ) {
            let spec = SearchSpec::default();
            let r = Point3::new(rx, ry, 1.0);
            let q = Point3::new(rx + dx, ry + dy, 1.0 + dz);
            let mut cells = Vec::new();
            for j in 0..spec.grid_size() {
                for i in 0..spec.grid_size() {
                    if pair_matches(&r, spec.cell_offset(i), spec.cell_offset(j), &q, spec.epsilon) {
                        cells.push((i, j));
                    }
                }
            }
            let got: Vec<(usize, usize)> = Stencil::of(&spec, &r, &q)
                .map(|s| s.cells().collect())
                .unwrap_or_default();
            prop_assert_eq!(got, cells);
        }

        #[test]
        fn score_matches_reference_on_spd(
            a in 0.01..100.0f64, b in 0.01..100.0f64, phi in 0.0..std::f64::consts::PI,
        ) {
            // N = R diag(a, b) Rᵀ
            let (s, c) = phi.sin_cos();
            let ne = NormalEquations2::from_moments(
                c * c * a + s * s * b,
                c * s * (a - b),
                s * s * a + c * c * b,
            );
            let fast = helmert_score(&ne);
            let slow = helmert_score_reference(&ne).unwrap();
            prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs());
        }

        #[test]
        fn score_is_rotation_invariant(
            normals in prop::collection::vec((0.0..std::f64::consts::TAU, 0.0..1.0f64), 2..40),
            phi in 0.0..std::f64::consts::TAU,
        ) {
            let mut a = NormalEquations2::default();
            let mut b = NormalEquations2::default();
            for (ang, w) in &normals {
                a.add(*w, ang.cos(), ang.sin());
                b.add(*w, (ang + phi).cos(), (ang + phi).sin());
            }
            let (sa, sb) = (helmert_score(&a), helmert_score(&b));
            if sa > 1e-3 {
                prop_assert!((sa - sb).abs() <= 1e-9 * sa);
            }
        }

        #[test]
        fn adding_an_observation_never_lowers_the_score(
            normals in prop::collection::vec((0.0..std::f64::consts::TAU, 0.0..2.0f64), 0..30),
            extra in (0.0..std::f64::consts::TAU, 0.001..2.0f64),
        ) {
            let mut ne = NormalEquations2::default();
            for (ang, w) in &normals {
                ne.add(*w, ang.cos(), ang.sin());
            }
            let before = helmert_score(&ne);
            ne.add(extra.1, extra.0.cos(), extra.0.sin());
            prop_assert!(helmert_score(&ne) >= before * (1.0 - 1e-12));
        }
    }
}
