//! Array geometry, subarray beamforming, and space-time steering vectors.
//!
//! The receiver is a uniform rectangular array that is beamformed into L
//! condensed horizontal elements. The effective space-time steering vector
//! is the Kronecker product of the Doppler phase vector across pulses and
//! the condensed spatial steering vector.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::SPEED_OF_LIGHT;

/// Uniform rectangular receive array.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayGeometry {
    pub n_horizontal: usize,
    pub n_vertical: usize,
    pub spacing_m: f64,
    pub wavelength_m: f64,
}

impl ArrayGeometry {
    pub fn new(n_horizontal: usize, n_vertical: usize, spacing_m: f64, carrier_hz: f64) -> Self {
        Self {
            n_horizontal,
            n_vertical,
            spacing_m,
            wavelength_m: SPEED_OF_LIGHT / carrier_hz,
        }
    }
}

/// Kronecker-structured steering vector of length Λ·L with its look
/// coordinates attached.
#[derive(Debug, Clone)]
pub struct SpaceTimeSteeringVector {
    pub values: DVector<Complex64>,
    pub theta_deg: f64,
    pub phi_deg: f64,
    pub velocity_mps: f64,
}

/// Beamforms the full array into L condensed elements at look direction
/// (θ, φ).
///
/// Element phases follow the narrowband plane-wave model with the phase
/// reference at the array center (horizontal phase ∝ sinθ·cosφ, vertical
/// ∝ sinφ). Each (n_horizontal/L × n_vertical) subarray is summed with
/// uniform weights and the condensed entry renormalized to unit magnitude.
pub fn condensed_spatial_steering(
    geom: &ArrayGeometry,
    l: usize,
    theta_deg: f64,
    phi_deg: f64,
) -> Result<DVector<Complex64>> {
    if l == 0 || geom.n_horizontal % l != 0 {
        return Err(Error::InvalidCondensation {
            horizontal: geom.n_horizontal,
            l,
        });
    }
    if theta_deg.abs() >= 90.0 {
        return Err(Error::InvalidConfig(format!(
            "azimuth {theta_deg} deg outside (-90, 90)"
        )));
    }
    let theta = theta_deg.to_radians();
    let phi = phi_deg.to_radians();
    let k_wave = 2.0 * std::f64::consts::PI / geom.wavelength_m;
    let psi_h = k_wave * geom.spacing_m * theta.sin() * phi.cos();
    let psi_v = k_wave * geom.spacing_m * phi.sin();
    let h_center = (geom.n_horizontal as f64 - 1.0) / 2.0;
    let v_center = (geom.n_vertical as f64 - 1.0) / 2.0;

    let sub = geom.n_horizontal / l;
    let mut out = DVector::zeros(l);
    for g in 0..l {
        let mut acc = Complex64::new(0.0, 0.0);
        for h in g * sub..(g + 1) * sub {
            for v in 0..geom.n_vertical {
                let phase = psi_h * (h as f64 - h_center) + psi_v * (v as f64 - v_center);
                acc += Complex64::from_polar(1.0, phase);
            }
        }
        let norm = acc.norm();
        if norm < 1e-12 {
            return Err(Error::NumericalDivergence(format!(
                "subarray beam null at theta={theta_deg} deg"
            )));
        }
        out[g] = acc / norm;
    }
    Ok(out)
}

/// Doppler phase vector across Λ pulses for a target moving at `v_mps`.
///
/// Uses the two-way monostatic shift f_d = 2·v·f_c/c; entry m is
/// exp(−i·2π·m·f_d/f_p). Doppler ambiguity (phase wrap) is accepted.
pub fn doppler_vector(
    v_mps: f64,
    n_pulses: usize,
    prf_hz: f64,
    carrier_hz: f64,
) -> DVector<Complex64> {
    let f_d = 2.0 * v_mps * carrier_hz / SPEED_OF_LIGHT;
    let step = -2.0 * std::f64::consts::PI * f_d / prf_hz;
    DVector::from_fn(n_pulses, |m, _| Complex64::from_polar(1.0, step * m as f64))
}

/// Kronecker product d ⊗ a: entry (m·L + ℓ) = d_m · a_ℓ.
pub fn space_time_steering(
    a: &DVector<Complex64>,
    d: &DVector<Complex64>,
    theta_deg: f64,
    phi_deg: f64,
    velocity_mps: f64,
) -> SpaceTimeSteeringVector {
    let l = a.len();
    let values = DVector::from_fn(d.len() * l, |i, _| d[i / l] * a[i % l]);
    SpaceTimeSteeringVector {
        values,
        theta_deg,
        phi_deg,
        velocity_mps,
    }
}

/// Bundles the fixed array/radar parameters so the rest of the pipeline can
/// ask for ã(θ, 0, v) without re-threading geometry everywhere.
#[derive(Debug, Clone, Copy)]
pub struct SteeringProvider {
    pub geom: ArrayGeometry,
    pub l: usize,
    pub n_pulses: usize,
    pub prf_hz: f64,
    pub carrier_hz: f64,
}

impl SteeringProvider {
    pub fn steer(&self, theta_deg: f64, velocity_mps: f64) -> Result<SpaceTimeSteeringVector> {
        let a = condensed_spatial_steering(&self.geom, self.l, theta_deg, 0.0)?;
        let d = doppler_vector(velocity_mps, self.n_pulses, self.prf_hz, self.carrier_hz);
        Ok(space_time_steering(&a, &d, theta_deg, 0.0, velocity_mps))
    }

    pub fn dim(&self) -> usize {
        self.l * self.n_pulses
    }
}
