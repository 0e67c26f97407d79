//! Sample covariance estimation, the NAMF test statistic, heatmap
//! generation, output SCNR, and the asymptotic breakdown threshold.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{RadarReturnSet, RadarSiteConfig, ScenarioId, TargetSpec};
use crate::steering::{SpaceTimeSteeringVector, SteeringProvider};

/// Relative eigenvalue floor below which a sample covariance is treated as
/// singular.
const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Sample clutter-plus-noise covariance Σ̂ = Z·Z^H / K.
pub fn sample_covariance(z: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let k = z.ncols() as f64;
    let mut cov = z * z.adjoint();
    cov.scale_mut(1.0 / k);
    cov
}

/// Cached Hermitian eigendecomposition of a covariance matrix.
///
/// Built once per range bin and reused across an entire grid sweep; the
/// explicit inverse is never formed.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    eigenvectors: DMatrix<Complex64>,
    inv_eigenvalues: DVector<f64>,
}

impl CovarianceFactor {
    pub fn new(cov: &DMatrix<Complex64>) -> Result<Self> {
        if cov.nrows() != cov.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "covariance must be square, got {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let eig = nalgebra::SymmetricEigen::new(cov.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= EIGENVALUE_FLOOR * max {
            return Err(Error::SingularCovariance);
        }
        Ok(Self {
            eigenvectors: eig.eigenvectors,
            inv_eigenvalues: eig.eigenvalues.map(|l| 1.0 / l),
        })
    }

    pub fn dim(&self) -> usize {
        self.inv_eigenvalues.len()
    }

    /// Σ̂⁻¹·x.
    pub fn solve(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut w = self.eigenvectors.adjoint() * x;
        for (i, e) in w.iter_mut().enumerate() {
            *e *= self.inv_eigenvalues[i];
        }
        &self.eigenvectors * w
    }

    /// Σ̂⁻¹·M, column by column.
    pub fn solve_matrix(&self, m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
        let mut w = self.eigenvectors.adjoint() * m;
        for c in 0..w.ncols() {
            for r in 0..w.nrows() {
                w[(r, c)] *= self.inv_eigenvalues[r];
            }
        }
        &self.eigenvectors * w
    }

    /// Real quadratic form a^H Σ̂⁻¹ a (nonnegative).
    pub fn quadratic_form(&self, a: &DVector<Complex64>) -> f64 {
        let w = self.eigenvectors.adjoint() * a;
        w.iter()
            .zip(self.inv_eigenvalues.iter())
            .map(|(e, inv)| e.norm_sqr() * inv)
            .sum()
    }

    /// Σ̂^{-1/2}·x (used by the whitening-consistency checks).
    pub fn whiten(&self, x: &DVector<Complex64>) -> DVector<Complex64> {
        let mut w = self.eigenvectors.adjoint() * x;
        for (i, e) in w.iter_mut().enumerate() {
            *e *= self.inv_eigenvalues[i].sqrt();
        }
        &self.eigenvectors * w
    }
}

/// Euclidean norm of the K diagonal entries of Y^H Σ̂⁻¹ Y, given
/// B = Σ̂⁻¹·Y.
fn diag_quadratic_norm(y: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    let mut acc = 0.0;
    for c in 0..y.ncols() {
        let mut d = 0.0;
        for r in 0..y.nrows() {
            d += (y[(r, c)].conj() * b[(r, c)]).re;
        }
        acc += d * d;
    }
    acc.sqrt()
}

fn namf_from_solved(
    y: &DMatrix<Complex64>,
    b: &DMatrix<Complex64>,
    factor: &CovarianceFactor,
    steer: &DVector<Complex64>,
    diag_norm: f64,
) -> Result<f64> {
    let mut numerator = 0.0;
    for c in 0..b.ncols() {
        let mut s = Complex64::new(0.0, 0.0);
        for r in 0..b.nrows() {
            s += steer[r].conj() * b[(r, c)];
        }
        numerator += s.norm_sqr();
    }
    let quad = factor.quadratic_form(steer);
    let denom = quad * diag_norm;
    if denom <= 0.0 || !denom.is_finite() {
        return Err(Error::NumericalDivergence(
            "NAMF denominator is zero or non-finite".into(),
        ));
    }
    let gamma = numerator / denom;
    if !gamma.is_finite() {
        return Err(Error::NumericalDivergence("NAMF statistic non-finite".into()));
    }
    let _ = y;
    Ok(gamma)
}

/// NAMF test statistic ‖ã^H Σ̂⁻¹ Y‖² / ((ã^H Σ̂⁻¹ ã)·‖diag(Y^H Σ̂⁻¹ Y)‖₂).
pub fn namf_statistic(
    y: &DMatrix<Complex64>,
    factor: &CovarianceFactor,
    steer: &SpaceTimeSteeringVector,
) -> Result<f64> {
    if y.nrows() != factor.dim() || steer.values.len() != factor.dim() {
        return Err(Error::DimensionMismatch(format!(
            "NAMF dims: Y {}x{}, covariance {}, steering {}",
            y.nrows(),
            y.ncols(),
            factor.dim(),
            steer.values.len()
        )));
    }
    let b = factor.solve_matrix(y);
    let diag_norm = diag_quadratic_norm(y, &b);
    namf_from_solved(y, &b, factor, &steer.values, diag_norm)
}

/// Output SCNR 10·log10(Tr(X^H Σ̂⁻¹ X) / Tr(Z^H Σ̂⁻¹ Z)) in dB.
pub fn output_scnr(
    x: &DMatrix<Complex64>,
    z: &DMatrix<Complex64>,
    factor: &CovarianceFactor,
) -> Result<f64> {
    let trace = |m: &DMatrix<Complex64>| -> f64 {
        let b = factor.solve_matrix(m);
        let mut acc = 0.0;
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                acc += (m[(r, c)].conj() * b[(r, c)]).re;
            }
        }
        acc
    };
    let denom = trace(z);
    if denom <= 0.0 {
        return Err(Error::ZeroDenominatorTrace);
    }
    Ok(10.0 * (trace(x) / denom).log10())
}

/// Asymptotic breakdown threshold SCNR, 10·log10(√(Λ·L/K)) dB.
pub fn breakdown_threshold(n_pulses: usize, l: usize, k: usize) -> f64 {
    10.0 * ((n_pulses * l) as f64 / k as f64).sqrt().log10()
}

/// Velocity axis of a Doppler heatmap grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocityGrid {
    pub v_min_mps: f64,
    pub delta_v_mps: f64,
    pub n_velocity: usize,
}

/// Range × azimuth (× velocity) sweep grid.
///
/// Azimuth samples sit at θ_min + j·Δθ inclusive of both endpoints; range
/// labels sit at bin midpoints r_min + i·Δr.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub r_min_m: f64,
    pub delta_r_m: f64,
    pub kappa: usize,
    pub theta_min_deg: f64,
    pub delta_theta_deg: f64,
    pub n_azimuth: usize,
    pub velocity: Option<VelocityGrid>,
}

fn inclusive_count(extent: f64, step: f64) -> usize {
    (extent / step + 1e-9).floor() as usize + 1
}

impl HeatmapGrid {
    pub fn matched(config: &RadarSiteConfig, delta_theta_deg: f64) -> Self {
        Self {
            r_min_m: config.r_min_m,
            delta_r_m: config.delta_r(),
            kappa: config.kappa,
            theta_min_deg: config.theta_min_deg,
            delta_theta_deg,
            n_azimuth: inclusive_count(
                config.theta_max_deg - config.theta_min_deg,
                delta_theta_deg,
            ),
            velocity: None,
        }
    }

    pub fn doppler(
        config: &RadarSiteConfig,
        delta_theta_deg: f64,
        v_min_mps: f64,
        v_max_mps: f64,
        delta_v_mps: f64,
    ) -> Self {
        let mut grid = Self::matched(config, delta_theta_deg);
        grid.velocity = Some(VelocityGrid {
            v_min_mps,
            delta_v_mps,
            n_velocity: inclusive_count(v_max_mps - v_min_mps, delta_v_mps),
        });
        grid
    }

    pub fn n_velocity(&self) -> usize {
        self.velocity.map(|v| v.n_velocity).unwrap_or(1)
    }

    pub fn azimuth_at(&self, j: usize) -> f64 {
        self.theta_min_deg + j as f64 * self.delta_theta_deg
    }

    pub fn range_at(&self, i: usize) -> f64 {
        self.r_min_m + i as f64 * self.delta_r_m
    }

    pub fn velocity_at(&self, k: usize) -> f64 {
        match self.velocity {
            Some(v) => v.v_min_mps + k as f64 * v.delta_v_mps,
            None => 0.0,
        }
    }

    pub fn theta_max_deg(&self) -> f64 {
        self.azimuth_at(self.n_azimuth - 1)
    }

    /// Coordinate extents used for label normalization: range spans the full
    /// bin coverage, azimuth and velocity span the grid endpoints.
    pub fn range_extent(&self) -> (f64, f64) {
        (
            self.r_min_m - self.delta_r_m / 2.0,
            self.r_min_m + (self.kappa as f64 - 0.5) * self.delta_r_m,
        )
    }

    pub fn azimuth_extent(&self) -> (f64, f64) {
        (self.theta_min_deg, self.theta_max_deg())
    }

    pub fn velocity_extent(&self) -> Option<(f64, f64)> {
        self.velocity.map(|v| {
            (
                v.v_min_mps,
                v.v_min_mps + (v.n_velocity - 1) as f64 * v.delta_v_mps,
            )
        })
    }

    pub fn cells(&self) -> usize {
        self.kappa * self.n_azimuth * self.n_velocity()
    }
}

/// Provenance carried with each heatmap sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMeta {
    pub scenario_id: ScenarioId,
    pub mean_output_scnr_db: f64,
    pub seed: u64,
}

/// A κ×A (or κ×A×V) tensor of NAMF statistics with its ground-truth label.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSample {
    pub values: Vec<f64>,
    pub kappa: usize,
    pub n_azimuth: usize,
    pub n_velocity: usize,
    pub label_range_m: f64,
    pub label_azimuth_deg: f64,
    pub label_velocity_mps: Option<f64>,
    pub meta: HeatmapMeta,
}

impl HeatmapSample {
    pub fn at(&self, bin: usize, az: usize, vel: usize) -> f64 {
        self.values[(bin * self.n_azimuth + az) * self.n_velocity + vel]
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.kappa, self.n_azimuth, self.n_velocity)
    }

    pub fn label(&self) -> (f64, f64, Option<f64>) {
        (
            self.label_range_m,
            self.label_azimuth_deg,
            self.label_velocity_mps,
        )
    }
}

/// Sweeps the NAMF statistic over the grid for every range bin.
///
/// The covariance factorization and Σ̂⁻¹·Y are computed once per bin and
/// reused across all grid points; the steering vectors are computed once
/// and shared by all bins.
pub fn heatmap(
    returns: &RadarReturnSet,
    grid: &HeatmapGrid,
    provider: &SteeringProvider,
    target: &TargetSpec,
    meta: HeatmapMeta,
) -> Result<HeatmapSample> {
    if returns.bins.len() != grid.kappa {
        return Err(Error::DimensionMismatch(format!(
            "returns have {} bins, grid expects {}",
            returns.bins.len(),
            grid.kappa
        )));
    }
    let n_vel = grid.n_velocity();
    let mut steers = Vec::with_capacity(grid.n_azimuth * n_vel);
    for j in 0..grid.n_azimuth {
        for k in 0..n_vel {
            steers.push(provider.steer(grid.azimuth_at(j), grid.velocity_at(k))?.values);
        }
    }

    let mut values = vec![0.0; grid.cells()];
    for (bin, ret) in returns.bins.iter().enumerate() {
        let cov = sample_covariance(&ret.z);
        let factor = CovarianceFactor::new(&cov)?;
        let b = factor.solve_matrix(&ret.y);
        let diag_norm = diag_quadratic_norm(&ret.y, &b);
        let base = bin * grid.n_azimuth * n_vel;
        for (p, steer) in steers.iter().enumerate() {
            values[base + p] = namf_from_solved(&ret.y, &b, &factor, steer, diag_norm)?;
        }
    }
    Ok(HeatmapSample {
        values,
        kappa: grid.kappa,
        n_azimuth: grid.n_azimuth,
        n_velocity: n_vel,
        label_range_m: target.range_m,
        label_azimuth_deg: target.azimuth_deg,
        label_velocity_mps: grid.velocity.map(|_| target.velocity_mps),
        meta,
    })
}

/// Continuous NAMF evaluator for one range bin, used by the local search.
pub struct BinEvaluator<'a> {
    y: &'a DMatrix<Complex64>,
    b: DMatrix<Complex64>,
    factor: CovarianceFactor,
    diag_norm: f64,
    provider: SteeringProvider,
}

impl<'a> BinEvaluator<'a> {
    pub fn new(returns: &'a RadarReturnSet, bin: usize, provider: SteeringProvider) -> Result<Self> {
        let ret = &returns.bins[bin];
        let cov = sample_covariance(&ret.z);
        let factor = CovarianceFactor::new(&cov)?;
        let b = factor.solve_matrix(&ret.y);
        let diag_norm = diag_quadratic_norm(&ret.y, &b);
        Ok(Self {
            y: &ret.y,
            b,
            factor,
            diag_norm,
            provider,
        })
    }

    pub fn evaluate(&self, theta_deg: f64, velocity_mps: f64) -> Result<f64> {
        let steer = self.provider.steer(theta_deg, velocity_mps)?;
        namf_from_solved(self.y, &self.b, &self.factor, &steer.values, self.diag_norm)
    }
}
