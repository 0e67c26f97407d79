//! Classical baselines: peak-cell midpoint, local search around the peak,
//! coordinate transform, and the mean localization error metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namf::{BinEvaluator, HeatmapGrid, HeatmapSample};
use crate::scenario::RadarReturnSet;
use crate::steering::SteeringProvider;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    NamfPeak,
    LocalSearch,
    Cnn,
}

/// A single target estimate in polar and Cartesian coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub range_m: f64,
    pub azimuth_deg: f64,
    pub velocity_mps: Option<f64>,
    pub x_m: f64,
    pub y_m: f64,
    pub method: Method,
    /// Set when the heatmap had no unique peak (all-equal tensor).
    pub degenerate: bool,
}

impl Estimate {
    pub fn new(
        range_m: f64,
        azimuth_deg: f64,
        velocity_mps: Option<f64>,
        method: Method,
    ) -> Self {
        let (x_m, y_m) = polar_to_cartesian(range_m, azimuth_deg);
        Self {
            range_m,
            azimuth_deg,
            velocity_mps,
            x_m,
            y_m,
            method,
            degenerate: false,
        }
    }
}

/// x east = r·sinθ, y north = r·cosθ (azimuth from the y-axis, clockwise).
pub fn polar_to_cartesian(range_m: f64, azimuth_deg: f64) -> (f64, f64) {
    let theta = azimuth_deg.to_radians();
    (range_m * theta.sin(), range_m * theta.cos())
}

pub fn cartesian_to_polar(x_m: f64, y_m: f64) -> (f64, f64) {
    ((x_m * x_m + y_m * y_m).sqrt(), x_m.atan2(y_m).to_degrees())
}

/// Argmax heatmap cell, mapped to its midpoint coordinates.
///
/// Ties break toward the lexicographically smallest (bin, azimuth,
/// velocity) index; an all-equal tensor returns the first cell with the
/// degenerate flag set.
pub fn peak_cell_midpoint(sample: &HeatmapSample, grid: &HeatmapGrid) -> Estimate {
    let mut best = 0usize;
    let mut best_val = f64::NEG_INFINITY;
    let mut all_equal = true;
    for (i, &v) in sample.values.iter().enumerate() {
        if v > best_val {
            best_val = v;
            best = i;
        }
        if v != sample.values[0] {
            all_equal = false;
        }
    }
    let nv = sample.n_velocity;
    let na = sample.n_azimuth;
    let bin = best / (na * nv);
    let az = (best / nv) % na;
    let vel = best % nv;
    let velocity = grid.velocity.map(|_| grid.velocity_at(vel));
    let mut est = Estimate::new(grid.range_at(bin), grid.azimuth_at(az), velocity, Method::NamfPeak);
    est.degenerate = all_equal && sample.values.len() > 1;
    est
}

/// Golden-section maximization over a bracketed interval.
fn golden_section_max(
    eval: &mut dyn FnMut(f64) -> Result<f64>,
    mut lo: f64,
    mut hi: f64,
    tol: f64,
) -> Result<(f64, f64)> {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = eval(x1)?;
    let mut f2 = eval(x2)?;
    while hi - lo > tol {
        if f1 < f2 {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = eval(x2)?;
        } else {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = eval(x1)?;
        }
    }
    let mid = (lo + hi) / 2.0;
    Ok((mid, eval(mid)?))
}

/// Coordinate-wise local refinement of a peak-cell estimate against an
/// arbitrary continuous statistic.
///
/// Azimuth (and velocity, when the grid has one) are maximized by
/// golden-section search over ±1 grid cell around the start, clipped to the
/// grid extent, two passes per coordinate; the range bin stays fixed. The
/// returned statistic never falls below the statistic at the start.
pub fn local_search_with(
    eval: &mut dyn FnMut(f64, f64) -> Result<f64>,
    start: &Estimate,
    grid: &HeatmapGrid,
) -> Result<Estimate> {
    let (az_lo_ext, az_hi_ext) = grid.azimuth_extent();
    let mut theta = start.azimuth_deg;
    let mut vel = start.velocity_mps.unwrap_or(0.0);
    let start_stat = eval(theta, vel)?;
    let mut best_stat = start_stat;
    let tol_theta = 1e-4 * grid.delta_theta_deg;

    for _pass in 0..2 {
        let lo = (theta - grid.delta_theta_deg).max(az_lo_ext);
        let hi = (theta + grid.delta_theta_deg).min(az_hi_ext);
        let v = vel;
        let (t, f) = golden_section_max(&mut |x| eval(x, v), lo, hi, tol_theta)?;
        if f >= best_stat {
            theta = t;
            best_stat = f;
        }
        if let Some(vg) = grid.velocity {
            let (v_lo_ext, v_hi_ext) = grid.velocity_extent().unwrap();
            let lo = (vel - vg.delta_v_mps).max(v_lo_ext);
            let hi = (vel + vg.delta_v_mps).min(v_hi_ext);
            let th = theta;
            let tol_v = 1e-4 * vg.delta_v_mps;
            let (v, f) = golden_section_max(&mut |x| eval(th, x), lo, hi, tol_v)?;
            if f >= best_stat {
                vel = v;
                best_stat = f;
            }
        }
    }
    let velocity = grid.velocity.map(|_| vel);
    let mut est = Estimate::new(start.range_m, theta, velocity, Method::LocalSearch);
    est.degenerate = start.degenerate;
    Ok(est)
}

/// Local search over the NAMF statistic at the peak estimate's range bin.
pub fn local_search(
    returns: &RadarReturnSet,
    start: &Estimate,
    grid: &HeatmapGrid,
    provider: &SteeringProvider,
) -> Result<Estimate> {
    let bin = ((start.range_m - grid.r_min_m) / grid.delta_r_m).round() as usize;
    let bin = bin.min(grid.kappa - 1);
    let evaluator = BinEvaluator::new(returns, bin, *provider)?;
    local_search_with(&mut |t, v| evaluator.evaluate(t, v), start, grid)
}

/// Mean Euclidean error (1/N)·Σ‖s* − ŝ‖₂ over (truth, estimate) pairs.
pub fn mean_error(pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::DimensionMismatch("empty pair list".into()));
    }
    let mut acc = 0.0;
    for (truth, est) in pairs {
        if truth.len() != est.len() {
            return Err(Error::DimensionMismatch(format!(
                "truth dim {} vs estimate dim {}",
                truth.len(),
                est.len()
            )));
        }
        acc += truth
            .iter()
            .zip(est.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
    }
    Ok(acc / pairs.len() as f64)
}

/// Baseline-over-CNN error ratio.
pub fn gain_factor(err_baseline: f64, err_cnn: f64) -> Result<f64> {
    if err_cnn <= 0.0 {
        return Err(Error::DegenerateZeroError);
    }
    Ok(err_baseline / err_cnn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::namf::HeatmapMeta;
    use crate::scenario::{RadarSiteConfig, ScenarioId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn matched_grid() -> HeatmapGrid {
        HeatmapGrid::matched(&RadarSiteConfig::original(), 0.4)
    }

    fn sample_from(values: Vec<f64>, grid: &HeatmapGrid) -> HeatmapSample {
        HeatmapSample {
            values,
            kappa: grid.kappa,
            n_azimuth: grid.n_azimuth,
            n_velocity: grid.n_velocity(),
            label_range_m: grid.r_min_m,
            label_azimuth_deg: grid.theta_min_deg,
            label_velocity_mps: None,
            meta: HeatmapMeta {
                scenario_id: ScenarioId::O,
                mean_output_scnr_db: 0.0,
                seed: 0,
            },
        }
    }

    #[test]
    fn peak_midpoint_index_arithmetic() {
        let grid = matched_grid();
        let mut values = vec![0.0; grid.cells()];
        values[2 * 26 + 13] = 1.0;
        let est = peak_cell_midpoint(&sample_from(values, &grid), &grid);
        assert_eq!(est.range_m, 14613.0);
        assert!((est.azimuth_deg - 25.2).abs() < 1e-12);
        assert!(!est.degenerate);
    }

    #[test]
    fn all_zero_tensor_is_degenerate_first_cell() {
        let grid = matched_grid();
        let est = peak_cell_midpoint(&sample_from(vec![0.0; grid.cells()], &grid), &grid);
        assert_eq!(est.range_m, 14553.0);
        assert_eq!(est.azimuth_deg, 20.0);
        assert!(est.degenerate);
    }

    #[test]
    fn peak_matches_exhaustive_scan() {
        let grid = matched_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let values: Vec<f64> = (0..grid.cells()).map(|_| rng.gen_range(0.0..1.0)).collect();
            let est = peak_cell_midpoint(&sample_from(values.clone(), &grid), &grid);
            let mut best = 0;
            for i in 1..values.len() {
                if values[i] > values[best] {
                    best = i;
                }
            }
            let bin = best / grid.n_azimuth;
            let az = best % grid.n_azimuth;
            assert_eq!(est.range_m, grid.range_at(bin));
            assert_eq!(est.azimuth_deg, grid.azimuth_at(az));
        }
    }

    #[test]
    fn permuting_non_max_cells_keeps_peak() {
        let grid = matched_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut values: Vec<f64> = (0..grid.cells()).map(|_| rng.gen_range(0.0..0.9)).collect();
        values[40] = 2.0;
        let est1 = peak_cell_midpoint(&sample_from(values.clone(), &grid), &grid);
        values.swap(3, 77);
        values.swap(10, 101);
        let est2 = peak_cell_midpoint(&sample_from(values, &grid), &grid);
        assert_eq!(est1.range_m, est2.range_m);
        assert_eq!(est1.azimuth_deg, est2.azimuth_deg);
    }

    #[test]
    fn local_search_finds_grid_point_peak() {
        let grid = matched_grid();
        let peak_theta = grid.azimuth_at(10);
        let start = Estimate::new(grid.range_at(2), peak_theta, None, Method::NamfPeak);
        let mut eval = |t: f64, _v: f64| Ok(-(t - peak_theta).powi(2));
        let refined = local_search_with(&mut eval, &start, &grid).unwrap();
        assert!((refined.azimuth_deg - peak_theta).abs() < 1e-3 * grid.delta_theta_deg);
    }

    #[test]
    fn local_search_monotone_statistic_hits_bracket_edge() {
        let grid = matched_grid();
        let start_theta = grid.azimuth_at(10);
        let start = Estimate::new(grid.range_at(2), start_theta, None, Method::NamfPeak);
        let mut eval = |t: f64, _v: f64| Ok(t);
        let refined = local_search_with(&mut eval, &start, &grid).unwrap();
        // Two passes each move up to one cell toward the boundary.
        assert!(
            (refined.azimuth_deg - (start_theta + 2.0 * grid.delta_theta_deg)).abs()
                < 1e-3 * grid.delta_theta_deg
        );
    }

    #[test]
    fn local_search_clips_to_grid_extent() {
        let grid = matched_grid();
        let start = Estimate::new(grid.range_at(0), grid.theta_max_deg(), None, Method::NamfPeak);
        let mut eval = |t: f64, _v: f64| Ok(t);
        let refined = local_search_with(&mut eval, &start, &grid).unwrap();
        assert!(refined.azimuth_deg <= grid.theta_max_deg() + 1e-12);
    }

    #[test]
    fn local_search_never_decreases_statistic() {
        let grid = matched_grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = rng.gen_range(-2.0..2.0);
            let b = rng.gen_range(-2.0..2.0);
            let c = rng.gen_range(20.0..30.0);
            let start_theta = grid.azimuth_at(rng.gen_range(0..grid.n_azimuth));
            let start = Estimate::new(grid.range_at(1), start_theta, None, Method::NamfPeak);
            let f = move |t: f64| a * (t - c).powi(2) + b * t;
            let start_val = f(start_theta);
            let mut eval = |t: f64, _v: f64| Ok(f(t));
            let refined = local_search_with(&mut eval, &start, &grid).unwrap();
            assert!(f(refined.azimuth_deg) >= start_val - 1e-12);
        }
    }

    #[test]
    fn cartesian_convention() {
        let (x, y) = polar_to_cartesian(100.0, 0.0);
        assert!((x - 0.0).abs() < 1e-12 && (y - 100.0).abs() < 1e-12);
        let (x, y) = polar_to_cartesian(100.0, 90.0);
        assert!((x - 100.0).abs() < 1e-9 && y.abs() < 1e-9);
    }

    #[test]
    fn polar_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let r = rng.gen_range(1.0..20000.0);
            let th = rng.gen_range(-89.0..89.0);
            let (x, y) = polar_to_cartesian(r, th);
            let (r2, th2) = cartesian_to_polar(x, y);
            assert!((r - r2).abs() < 1e-9);
            assert!((th - th2).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_error_cases() {
        let pairs = vec![(vec![1.0, 2.0], vec![1.0, 2.0])];
        assert_eq!(mean_error(&pairs).unwrap(), 0.0);

        let pairs = vec![(vec![0.0, 0.0], vec![3.0, 4.0])];
        assert_eq!(mean_error(&pairs).unwrap(), 5.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..100)
            .map(|_| {
                (
                    vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
                    vec![rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)],
                )
            })
            .collect();
        let mut oracle = 0.0;
        for (t, e) in &pairs {
            oracle += ((t[0] - e[0]).powi(2) + (t[1] - e[1]).powi(2)).sqrt();
        }
        oracle /= pairs.len() as f64;
        let got = mean_error(&pairs).unwrap();
        assert!((got - oracle).abs() / oracle < 1e-12);
    }

    #[test]
    fn mean_error_translation_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..20)
            .map(|_| {
                (
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                    vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)],
                )
            })
            .collect();
        let base = mean_error(&pairs).unwrap();
        let shifted: Vec<(Vec<f64>, Vec<f64>)> = pairs
            .iter()
            .map(|(t, e)| {
                (
                    t.iter().map(|v| v + 123.45).collect(),
                    e.iter().map(|v| v + 123.45).collect(),
                )
            })
            .collect();
        let moved = mean_error(&shifted).unwrap();
        assert!((base - moved).abs() < 1e-12);
    }

    #[test]
    fn mean_error_dimension_mismatch() {
        let pairs = vec![(vec![1.0, 2.0], vec![1.0])];
        assert!(mean_error(&pairs).is_err());
    }

    #[test]
    fn gain_factor_cases() {
        assert_eq!(gain_factor(10.0, 5.0).unwrap(), 2.0);
        assert_eq!(gain_factor(7.0, 7.0).unwrap(), 1.0);
        assert!(matches!(gain_factor(1.0, 0.0), Err(Error::DegenerateZeroError)));
    }
}
