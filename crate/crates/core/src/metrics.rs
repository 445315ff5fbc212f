//! Distinctness measures of an accumulator: how clearly one pose stands out.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::GridIndex;
use crate::objectives::Grid;

/// Probability floor applied before taking logarithms.
pub const PROBABILITY_FLOOR: f64 = 1e-12;
/// Fraction of the maximum a cell must reach to join the significant ray.
pub const RAY_SUPPORT_FRACTION: f64 = 0.5;
pub const PLATEAU_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Second-highest over highest value, in `[0, 1]`; lower is more distinct.
    pub peak_ratio: f64,
    /// Non-excess kurtosis along the significant ray; `None` when undefined.
    pub kurtosis: Option<f64>,
    /// KL divergence to a Laplace peak, in nats.
    pub kl_divergence: f64,
    /// Chebyshev cell distance to the farthest cell reaching 90 % of the max.
    pub plateau_distance: usize,
    pub ray_direction: [f64; 2],
}

/// Global argmax over heading layers with (h, j, i) tie-breaking.
pub fn grid_argmax(grids: &[Grid<f64>]) -> Option<(GridIndex, f64)> {
    let mut best: Option<(GridIndex, f64)> = None;
    for (h, g) in grids.iter().enumerate() {
        let n = g.size();
        for j in 0..n {
            for i in 0..n {
                let v = *g.get(i, j);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((GridIndex::new(i, j, h), v));
                }
            }
        }
    }
    best
}

fn positive_argmax(grids: &[Grid<f64>]) -> Result<(GridIndex, f64)> {
    match grid_argmax(grids) {
        Some((idx, v)) if v > 0.0 => Ok((idx, v)),
        _ => Err(Error::UndefinedMetric("all cells are zero")),
    }
}

/// Ratio of the second-highest value to the highest.
///
/// The second peak is searched outside the immediate neighborhood of the
/// argmax (adjacent cells and adjacent headings).
pub fn peak_ratio(grids: &[Grid<f64>]) -> Result<f64> {
    let (best, max) = positive_argmax(grids)?;
    let mut second = 0.0f64;
    for (h, g) in grids.iter().enumerate() {
        let n = g.size();
        for j in 0..n {
            for i in 0..n {
                let idx = GridIndex::new(i, j, h);
                if idx.cell_distance(&best) <= 1 && h.abs_diff(best.h) <= 1 {
                    continue;
                }
                second = second.max(*g.get(i, j));
            }
        }
    }
    Ok((second / max).clamp(0.0, 1.0))
}

/// Dominant high-consensus line through the argmax of one grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub anchor: (usize, usize),
    /// Unit direction in (i, j) cell coordinates.
    pub direction: [f64; 2],
}

/// Principal axis of the value-weighted coordinates of cells at or above half
/// the maximum, anchored at the argmax.
pub fn significant_ray(grid: &Grid<f64>) -> Result<Ray> {
    let (best, max) = positive_argmax(std::slice::from_ref(grid))?;
    let anchor = (best.i, best.j);
    let n = grid.size();
    let threshold = RAY_SUPPORT_FRACTION * max;
    let support: Vec<(f64, f64, f64)> = (0..n)
        .flat_map(|j| (0..n).map(move |i| (i, j)))
        .filter_map(|(i, j)| {
            let v = *grid.get(i, j);
            (v >= threshold).then_some((i as f64, j as f64, v))
        })
        .collect();
    if support.len() < 2 {
        return Ok(Ray { anchor, direction: [1.0, 0.0] });
    }
    let w: f64 = support.iter().map(|s| s.2).sum();
    let mx = support.iter().map(|s| s.0 * s.2).sum::<f64>() / w;
    let my = support.iter().map(|s| s.1 * s.2).sum::<f64>() / w;
    let (mut cxx, mut cxy, mut cyy) = (0.0, 0.0, 0.0);
    for &(x, y, v) in &support {
        cxx += v * (x - mx) * (x - mx);
        cxy += v * (x - mx) * (y - my);
        cyy += v * (y - my) * (y - my);
    }
    // major axis angle of the 2×2 covariance
    let angle = 0.5 * (2.0 * cxy).atan2(cxx - cyy);
    let mut direction = [angle.cos(), angle.sin()];
    if direction[0] < 0.0 || (direction[0] == 0.0 && direction[1] < 0.0) {
        direction = [-direction[0], -direction[1]];
    }
    Ok(Ray { anchor, direction })
}

/// Values sampled at unit steps along the ray (nearest cell), ordered by position.
pub fn ray_profile(grid: &Grid<f64>, ray: &Ray) -> Vec<(f64, f64)> {
    let n = grid.size() as f64;
    let at = |s: f64| {
        let x = (ray.anchor.0 as f64 + s * ray.direction[0]).round();
        let y = (ray.anchor.1 as f64 + s * ray.direction[1]).round();
        (x >= 0.0 && y >= 0.0 && x < n && y < n).then(|| *grid.get(x as usize, y as usize))
    };
    let mut back = Vec::new();
    let mut s = -1.0;
    while let Some(v) = at(s) {
        back.push((s, v));
        s -= 1.0;
    }
    back.reverse();
    let mut s = 0.0;
    while let Some(v) = at(s) {
        back.push((s, v));
        s += 1.0;
    }
    back
}

/// Pearson (non-excess) kurtosis `μ₄ / μ₂²` of the ray profile treated as a
/// distribution over position.
pub fn kurtosis_along_ray(grid: &Grid<f64>, ray: &Ray) -> Result<f64> {
    let profile = ray_profile(grid, ray);
    if profile.len() < 5 {
        return Err(Error::UndefinedMetric("ray covers fewer than 5 cells"));
    }
    profile_kurtosis(&profile)
}

fn profile_kurtosis(profile: &[(f64, f64)]) -> Result<f64> {
    let mass: f64 = profile.iter().map(|&(_, v)| v.max(0.0)).sum();
    if mass <= 0.0 {
        return Err(Error::UndefinedMetric("ray profile has zero mass"));
    }
    let mean = profile.iter().map(|&(s, v)| s * v.max(0.0)).sum::<f64>() / mass;
    let (mut m2, mut m4) = (0.0, 0.0);
    for &(s, v) in profile {
        let p = v.max(0.0) / mass;
        let d2 = (s - mean) * (s - mean);
        m2 += p * d2;
        m4 += p * d2 * d2;
    }
    if m2 <= 0.0 {
        return Err(Error::UndefinedMetric("ray profile has zero variance"));
    }
    Ok(m4 / (m2 * m2))
}

/// KL divergence `Σ p ln(p/q)` of the normalized grid `p` from a separable
/// Laplace peak `q ∝ exp(−(|i−i*| + |j−j*|)/b)` centered at the argmax.
pub fn kl_vs_laplace(grid: &Grid<f64>, scale_cells: f64) -> Result<f64> {
    let (best, _) = positive_argmax(std::slice::from_ref(grid))?;
    let n = grid.size();
    let mass: f64 = grid.as_slice().iter().map(|v| v.max(0.0)).sum();
    let floored: Vec<f64> = grid
        .as_slice()
        .iter()
        .map(|v| (v.max(0.0) / mass).max(PROBABILITY_FLOOR))
        .collect();
    let p_mass: f64 = floored.iter().sum();
    let laplace = |k: usize, c: usize| (-(k.abs_diff(c) as f64) / scale_cells).exp();
    let q_axis_i: f64 = (0..n).map(|i| laplace(i, best.i)).sum();
    let q_axis_j: f64 = (0..n).map(|j| laplace(j, best.j)).sum();
    let q_mass = q_axis_i * q_axis_j;
    let mut kl = 0.0;
    for j in 0..n {
        for i in 0..n {
            let p = floored[j * n + i] / p_mass;
            let q = laplace(i, best.i) * laplace(j, best.j) / q_mass;
            kl += p * (p / q).ln();
        }
    }
    Ok(kl.max(0.0))
}

/// Largest Chebyshev cell distance from the global argmax to any cell (any
/// heading) reaching `fraction` of the maximum.
pub fn plateau_distance(grids: &[Grid<f64>], fraction: f64) -> Result<usize> {
    let (best, max) = positive_argmax(grids)?;
    let threshold = fraction * max;
    let mut dist = 0;
    for (h, g) in grids.iter().enumerate() {
        let n = g.size();
        for j in 0..n {
            for i in 0..n {
                if *g.get(i, j) >= threshold {
                    dist = dist.max(GridIndex::new(i, j, h).cell_distance(&best));
                }
            }
        }
    }
    Ok(dist)
}

/// All metrics for one objective's per-heading score grids.
pub fn epoch_metrics(grids: &[Grid<f64>]) -> Result<EpochMetrics> {
    let (best, _) = positive_argmax(grids)?;
    let grid = &grids[best.h];
    let ray = significant_ray(grid)?;
    Ok(EpochMetrics {
        peak_ratio: peak_ratio(grids)?,
        kurtosis: kurtosis_along_ray(grid, &ray).ok(),
        kl_divergence: kl_vs_laplace(grid, 1.0)?,
        plateau_distance: plateau_distance(grids, PLATEAU_FRACTION)?,
        ray_direction: ray.direction,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_from(n: usize, f: impl Fn(usize, usize) -> f64) -> Grid<f64> {
        let mut g = Grid::new(n);
        for j in 0..n {
            for i in 0..n {
                *g.get_mut(i, j) = f(i, j);
            }
        }
        g
    }

    fn ridge_x(n: usize) -> Grid<f64> {
        grid_from(n, |i, j| {
            let dj = j.abs_diff(n / 2) as f64;
            let di = i.abs_diff(n / 2) as f64;
            (10.0 - 0.01 * di) * (-dj).exp()
        })
    }

    #[test]
    fn single_cell_peak_ratio_zero() {
        let g = grid_from(20, |i, j| if (i, j) == (5, 7) { 3.0 } else { 0.0 });
        assert_eq!(peak_ratio(&[g]).unwrap(), 0.0);
    }

    #[test]
    fn twin_peaks_ratio_one() {
        let g = grid_from(20, |i, j| if (i, j) == (2, 2) || (i, j) == (15, 15) { 3.0 } else { 0.0 });
        assert_eq!(peak_ratio(&[g]).unwrap(), 1.0);
    }

    #[test]
    fn zero_grid_is_undefined() {
        let g = Grid::<f64>::new(10);
        assert!(peak_ratio(std::slice::from_ref(&g)).is_err());
        assert!(kl_vs_laplace(&g, 1.0).is_err());
        assert!(plateau_distance(&[g], 0.9).is_err());
    }

    #[test]
    fn peak_ratio_ignores_adjacent_headings_and_cells() {
        let peak = grid_from(10, |i, j| if (i, j) == (5, 5) { 4.0 } else if (i, j) == (6, 5) { 3.9 } else { 0.0 });
        let neighbor = grid_from(10, |i, j| if (i, j) == (5, 5) { 3.9 } else { 0.0 });
        assert_eq!(peak_ratio(&[neighbor.clone(), peak.clone()]).unwrap(), 0.0);
        // two headings away counts as a separate peak
        let empty = Grid::new(10);
        let r = peak_ratio(&[neighbor, empty, peak]).unwrap();
        assert!((r - 3.9 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn attenuating_second_peak_lowers_ratio() {
        let mut last = f64::INFINITY;
        for k in 0..10 {
            let second = 5.0 - k as f64 * 0.5;
            let g = grid_from(20, |i, j| match (i, j) {
                (3, 3) => 5.0,
                (15, 12) => second,
                _ => 0.1,
            });
            let r = peak_ratio(&[g]).unwrap();
            assert!(r <= last);
            last = r;
        }
    }

    #[test]
    fn ridge_direction_along_x() {
        let ray = significant_ray(&ridge_x(41)).unwrap();
        let angle = ray.direction[1].atan2(ray.direction[0]).to_degrees().abs();
        assert!(angle < 5.0, "angle {angle}");
        assert_eq!(ray.anchor, (20, 20));
    }

    #[test]
    fn single_cell_ray_defaults_to_x() {
        let g = grid_from(9, |i, j| if (i, j) == (4, 4) { 1.0 } else { 0.0 });
        assert_eq!(significant_ray(&g).unwrap().direction, [1.0, 0.0]);
    }

    #[test]
    fn crossing_rays_pick_the_stronger() {
        let n = 41;
        let c = n / 2;
        // strong ray along j (vertical), weaker ray along i
        let g = grid_from(n, |i, j| {
            if i == c && j == c {
                2.0
            } else if i == c {
                1.0
            } else if j == c {
                0.6
            } else {
                0.0
            }
        });
        let d = significant_ray(&g).unwrap().direction;
        assert!(d[1].abs() > 0.99, "{d:?}");
    }

    #[test]
    fn uniform_profile_kurtosis() {
        let g = grid_from(400, |_, j| if j == 200 { 1.0 } else { 0.0 });
        let ray = Ray { anchor: (200, 200), direction: [1.0, 0.0] };
        let k = kurtosis_along_ray(&g, &ray).unwrap();
        // discrete uniform on N points: 3(3N² − 7) / (5(N² − 1))
        let n = 400.0f64;
        let exact = 3.0 * (3.0 * n * n - 7.0) / (5.0 * (n * n - 1.0));
        assert!((k - exact).abs() < 1e-9);
        assert!((k - 1.8).abs() < 1e-4);
    }

    #[test]
    fn spike_profile_kurtosis_is_large() {
        let g = grid_from(101, |i, _| if i == 50 { 1.0 } else { 1e-6 });
        let ray = Ray { anchor: (50, 50), direction: [1.0, 0.0] };
        assert!(kurtosis_along_ray(&g, &ray).unwrap() > 30.0);
        let spike = grid_from(101, |i, _| if i == 50 { 1.0 } else { 0.0 });
        assert!(kurtosis_along_ray(&spike, &ray).is_err());
    }

    #[test]
    fn short_ray_is_undefined() {
        let g = grid_from(4, |_, _| 1.0);
        let ray = Ray { anchor: (0, 0), direction: [1.0, 0.0] };
        assert!(kurtosis_along_ray(&g, &ray).is_err());
    }

    #[test]
    fn isotropic_peak_kurtosis_is_direction_insensitive() {
        let n = 101;
        let g = grid_from(n, |i, j| {
            let r = ((i as f64 - 50.0).powi(2) + (j as f64 - 50.0).powi(2)).sqrt();
            (-r / 5.0).exp()
        });
        let along = |deg: f64| {
            let a = deg.to_radians();
            kurtosis_along_ray(&g, &Ray { anchor: (50, 50), direction: [a.cos(), a.sin()] }).unwrap()
        };
        let k0 = along(0.0);
        for deg in [20.0, 45.0, 70.0, 90.0] {
            let k = along(deg);
            assert!((k - k0).abs() <= 0.1 * k0, "{deg}: {k} vs {k0}");
        }
    }

    #[test]
    fn laplace_shaped_grid_has_zero_divergence() {
        let g = grid_from(30, |i, j| 7.0 * (-((i.abs_diff(12) + j.abs_diff(17)) as f64)).exp());
        assert!(kl_vs_laplace(&g, 1.0).unwrap() < 1e-9);
    }

    #[test]
    fn uniform_grid_divergence_closed_form() {
        let n = 25usize;
        // argmax of a uniform grid is (0, 0)
        let g = grid_from(n, |_, _| 1.0);
        let kl = kl_vs_laplace(&g, 1.0).unwrap();
        // KL(U‖q) = −ln N² − mean ln q; with q separable and centered at 0:
        // ln q(i, j) = −i − j − 2 ln Z, Z = Σ_k e^{−k}
        let z: f64 = (0..n).map(|k| (-(k as f64)).exp()).sum();
        let mean_dist = 2.0 * (n as f64 - 1.0) / 2.0;
        let expected = -((n * n) as f64).ln() + mean_dist + 2.0 * z.ln();
        assert!((kl - expected).abs() < 1e-9, "{kl} vs {expected}");
    }

    #[test]
    fn plateau_examples() {
        let g = grid_from(30, |i, j| if (i, j) == (10, 10) { 1.0 } else { 0.5 });
        assert_eq!(plateau_distance(&[g], 0.9).unwrap(), 0);
        // 20-cell ridge of near-max cells
        let ridge = grid_from(40, |i, j| if j == 20 && (10..30).contains(&i) { 1.0 - 0.001 * i as f64 } else { 0.0 });
        assert!(plateau_distance(&[ridge], 0.9).unwrap() >= 10);
    }

    #[test]
    fn plateau_spans_headings() {
        let a = grid_from(30, |i, j| if (i, j) == (10, 10) { 1.0 } else { 0.0 });
        let b = grid_from(30, |i, j| if (i, j) == (20, 10) { 0.95 } else { 0.0 });
        assert_eq!(plateau_distance(&[a, b], 0.9).unwrap(), 10);
    }

    proptest! {
        #[test]
        fn metrics_are_scale_invariant(
            vals in prop::collection::vec(0.0..10.0f64, 144),
            c in 0.001..1000.0f64,
        ) {
            let g = Grid::from_vec(12, vals);
            prop_assume!(g.as_slice().iter().any(|&v| v > 0.0));
            let scaled = g.map(|v| v * c);
            let a = epoch_metrics(std::slice::from_ref(&g)).unwrap();
            let b = epoch_metrics(std::slice::from_ref(&scaled)).unwrap();
            prop_assert!((a.peak_ratio - b.peak_ratio).abs() < 1e-9);
            prop_assert!((a.kl_divergence - b.kl_divergence).abs() < 1e-9);
            prop_assert_eq!(a.plateau_distance, b.plateau_distance);
            match (a.kurtosis, b.kurtosis) {
                (Some(x), Some(y)) => prop_assert!((x - y).abs() < 1e-9 * x.max(1.0)),
                (None, None) => {}
                _ => prop_assert!(false, "kurtosis definedness changed"),
            }
        }

        #[test]
        fn divergence_is_non_negative(vals in prop::collection::vec(0.0..1.0f64, 100)) {
            let g = Grid::from_vec(10, vals);
            prop_assume!(g.as_slice().iter().any(|&v| v > 0.0));
            prop_assert!(kl_vs_laplace(&g, 1.0).unwrap() >= 0.0);
        }
    }
}
