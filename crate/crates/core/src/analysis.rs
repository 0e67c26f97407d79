//! Clutter-subspace extraction and chordal distance between scenarios.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::scenario::{RadarSiteConfig, ScenarioId, SceneSynthesizer};

/// Orthonormal basis of a clutter subspace.
#[derive(Debug, Clone)]
pub struct SubspaceBasis {
    pub columns: DMatrix<Complex64>,
    pub source_scenario: ScenarioId,
}

impl SubspaceBasis {
    pub fn rank(&self) -> usize {
        self.columns.ncols()
    }

    pub fn ambient_dim(&self) -> usize {
        self.columns.nrows()
    }
}

/// Eigenvectors of a Hermitian covariance whose eigenvalues exceed 3× the
/// noise power, sorted by descending eigenvalue.
pub fn clutter_subspace(
    covariance: &DMatrix<Complex64>,
    noise_power: f64,
    source_scenario: ScenarioId,
) -> Result<SubspaceBasis> {
    let eig = nalgebra::SymmetricEigen::new(covariance.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let kept: Vec<usize> = order
        .into_iter()
        .filter(|&i| eig.eigenvalues[i] > 3.0 * noise_power)
        .collect();
    if kept.is_empty() {
        return Err(Error::NoClutterSubspace);
    }
    let mut columns = DMatrix::zeros(covariance.nrows(), kept.len());
    for (j, &i) in kept.iter().enumerate() {
        columns.set_column(j, &eig.eigenvectors.column(i));
    }
    Ok(SubspaceBasis {
        columns,
        source_scenario,
    })
}

/// Pooled analytic clutter covariance for a scene: the per-bin closed-form
/// covariances averaged across the κ range bins.
pub fn pooled_scene_covariance(
    synth: &SceneSynthesizer<'_>,
    config: &RadarSiteConfig,
) -> DMatrix<Complex64> {
    let mut cov = synth.analytic_covariance(0);
    for bin in 1..config.kappa {
        cov += synth.analytic_covariance(bin);
    }
    cov.scale_mut(1.0 / config.kappa as f64);
    cov
}

/// Chordal distance Σᵢ (1 − sᵢ²) over the min(rank) singular values of
/// U^H V, i.e. the sum of the squared sines of the principal angles.
pub fn chordal_distance(u: &SubspaceBasis, v: &SubspaceBasis) -> Result<f64> {
    if u.ambient_dim() != v.ambient_dim() {
        return Err(Error::AmbientMismatch(u.ambient_dim(), v.ambient_dim()));
    }
    let product = u.columns.adjoint() * &v.columns;
    let svd = nalgebra::SVD::new(product, false, false);
    let k = u.rank().min(v.rank());
    let mut sv: Vec<f64> = svd.singular_values.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    Ok(sv
        .iter()
        .take(k)
        .map(|s| {
            let s = s.min(1.0);
            1.0 - s * s
        })
        .sum())
}

/// One row of the mismatch report.
#[derive(Debug, Clone)]
pub struct MismatchRow {
    pub scenario: ScenarioId,
    pub err_cnn: f64,
    pub err_baseline: f64,
    pub gain_factor: f64,
    pub chordal_distance: f64,
}

/// Mismatch table plus the rank-correlation diagnostic between gain factor
/// and chordal distance (reported, never asserted).
#[derive(Debug, Clone)]
pub struct MismatchReport {
    pub rows: Vec<MismatchRow>,
    pub rank_correlation: f64,
}

/// Spearman rank correlation of two equal-length sequences.
pub fn spearman_rank_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ranks = |v: &[f64]| -> Vec<f64> {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap());
        let mut r = vec![0.0; v.len()];
        for (rank, &i) in idx.iter().enumerate() {
            r[i] = rank as f64;
        }
        r
    };
    let ra = ranks(a);
    let rb = ranks(b);
    let mean = (n as f64 - 1.0) / 2.0;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for i in 0..n {
        num += (ra[i] - mean) * (rb[i] - mean);
        da += (ra[i] - mean).powi(2);
        db += (rb[i] - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        0.0
    } else {
        num / (da * db).sqrt()
    }
}

/// Builds the per-scenario table pairing gain factors with chordal
/// distances.
pub fn mismatch_report(
    scenarios: &[ScenarioId],
    errors_cnn: &[(ScenarioId, f64)],
    errors_baseline: &[(ScenarioId, f64)],
    distances: &[(ScenarioId, f64)],
) -> Result<MismatchReport> {
    let lookup = |table: &[(ScenarioId, f64)], id: ScenarioId| -> Result<f64> {
        table
            .iter()
            .find(|(s, _)| *s == id)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::MissingScenario(id.to_string()))
    };
    let mut rows = Vec::with_capacity(scenarios.len());
    for &id in scenarios {
        let err_cnn = lookup(errors_cnn, id)?;
        let err_baseline = lookup(errors_baseline, id)?;
        rows.push(MismatchRow {
            scenario: id,
            err_cnn,
            err_baseline,
            gain_factor: crate::estimators::gain_factor(err_baseline, err_cnn)?,
            chordal_distance: lookup(distances, id)?,
        });
    }
    let gains: Vec<f64> = rows.iter().map(|r| r.gain_factor).collect();
    let dists: Vec<f64> = rows.iter().map(|r| r.chordal_distance).collect();
    Ok(MismatchReport {
        rank_correlation: spearman_rank_correlation(&gains, &dists),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_phasor_vector(dim: usize, rng: &mut impl Rng) -> DVector<Complex64> {
        DVector::from_fn(dim, |_, _| Complex64::from_polar(1.0, rng.gen_range(0.0..6.28)))
    }

    fn orthonormal_columns(dim: usize, k: usize, rng: &mut impl Rng) -> DMatrix<Complex64> {
        // Gram-Schmidt on random complex columns.
        let mut cols: Vec<DVector<Complex64>> = Vec::with_capacity(k);
        while cols.len() < k {
            let mut v = DVector::from_fn(dim, |_, _| {
                Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            });
            for c in &cols {
                let proj = c.dotc(&v);
                v -= c * proj;
            }
            let n = v.norm();
            if n > 1e-6 {
                cols.push(v / Complex64::new(n, 0.0));
            }
        }
        DMatrix::from_columns(&cols)
    }

    fn basis(m: DMatrix<Complex64>) -> SubspaceBasis {
        SubspaceBasis {
            columns: m,
            source_scenario: ScenarioId::O,
        }
    }

    #[test]
    fn rank_one_construction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let dim = 8;
        let a = unit_phasor_vector(dim, &mut rng);
        let sigma2 = 100.0;
        let noise = 1.0;
        let mut cov = DMatrix::from_diagonal_element(dim, dim, Complex64::new(noise, 0.0));
        for r in 0..dim {
            for c in 0..dim {
                cov[(r, c)] += Complex64::new(sigma2, 0.0) * a[r] * a[c].conj();
            }
        }
        let sub = clutter_subspace(&cov, noise, ScenarioId::O).unwrap();
        assert_eq!(sub.rank(), 1);
        let cos = sub.columns.column(0).dotc(&a).norm() / a.norm();
        assert!(cos > 1.0 - 1e-9, "cos angle {cos}");
    }

    #[test]
    fn identity_covariance_has_no_subspace() {
        let cov = DMatrix::<Complex64>::identity(6, 6);
        assert!(matches!(
            clutter_subspace(&cov, 1.0, ScenarioId::O),
            Err(Error::NoClutterSubspace)
        ));
    }

    #[test]
    fn subspace_rank_matches_patch_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = 10;
        let noise = 1.0;
        let mut cov = DMatrix::from_diagonal_element(dim, dim, Complex64::new(noise, 0.0));
        // Three independent strong patches.
        for _ in 0..3 {
            let a = unit_phasor_vector(dim, &mut rng);
            for r in 0..dim {
                for c in 0..dim {
                    cov[(r, c)] += Complex64::new(500.0, 0.0) * a[r] * a[c].conj();
                }
            }
        }
        let sub = clutter_subspace(&cov, noise, ScenarioId::O).unwrap();
        assert_eq!(sub.rank(), 3);
        // Basis orthonormality.
        let gram = sub.columns.adjoint() * &sub.columns;
        for r in 0..3 {
            for c in 0..3 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((gram[(r, c)] - Complex64::new(want, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn chordal_distance_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = basis(orthonormal_columns(8, 3, &mut rng));
        assert!(chordal_distance(&u, &u).unwrap().abs() < 1e-10);

        // Orthogonal k-dim subspaces: distance k exactly.
        let mut e1 = DMatrix::zeros(6, 2);
        e1[(0, 0)] = Complex64::new(1.0, 0.0);
        e1[(1, 1)] = Complex64::new(1.0, 0.0);
        let mut e2 = DMatrix::zeros(6, 2);
        e2[(2, 0)] = Complex64::new(1.0, 0.0);
        e2[(3, 1)] = Complex64::new(1.0, 0.0);
        let d = chordal_distance(&basis(e1), &basis(e2)).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chordal_distance_matches_principal_angle_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let u = basis(orthonormal_columns(8, 3, &mut rng));
            let v = basis(orthonormal_columns(8, 3, &mut rng));
            let got = chordal_distance(&u, &v).unwrap();
            // Oracle: explicit principal angles from arccos of singular values.
            let svd = nalgebra::SVD::new(u.columns.adjoint() * &v.columns, false, false);
            let oracle: f64 = svd
                .singular_values
                .iter()
                .map(|s| s.clamp(-1.0, 1.0).acos().sin().powi(2))
                .sum();
            assert!((got - oracle).abs() < 1e-10, "{got} vs {oracle}");
        }
    }

    #[test]
    fn chordal_distance_symmetry_and_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let ku = rng.gen_range(1..=4);
            let kv = rng.gen_range(1..=4);
            let u = basis(orthonormal_columns(9, ku, &mut rng));
            let v = basis(orthonormal_columns(9, kv, &mut rng));
            let duv = chordal_distance(&u, &v).unwrap();
            let dvu = chordal_distance(&v, &u).unwrap();
            assert!((duv - dvu).abs() < 1e-12);
            assert!(duv >= 0.0 && duv <= ku.min(kv) as f64 + 1e-12);
        }
    }

    #[test]
    fn chordal_distance_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = orthonormal_columns(8, 8, &mut rng);
        let u = orthonormal_columns(8, 3, &mut rng);
        let v = orthonormal_columns(8, 3, &mut rng);
        let d1 = chordal_distance(&basis(u.clone()), &basis(v.clone())).unwrap();
        let d2 = chordal_distance(&basis(&q * u), &basis(&q * v)).unwrap();
        assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn ambient_mismatch_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = basis(orthonormal_columns(8, 2, &mut rng));
        let v = basis(orthonormal_columns(6, 2, &mut rng));
        assert!(matches!(
            chordal_distance(&u, &v),
            Err(Error::AmbientMismatch(8, 6))
        ));
    }

    #[test]
    fn report_rows_and_diagnostic() {
        let scenarios = ScenarioId::ALL;
        let cnn: Vec<(ScenarioId, f64)> =
            scenarios.iter().map(|&s| (s, 10.0 + s.as_u8() as f64)).collect();
        let base: Vec<(ScenarioId, f64)> = scenarios.iter().map(|&s| (s, 40.0)).collect();
        let dist: Vec<(ScenarioId, f64)> =
            scenarios.iter().map(|&s| (s, s.as_u8() as f64 * 0.3)).collect();
        let report = mismatch_report(&scenarios, &cnn, &base, &dist).unwrap();
        assert_eq!(report.rows.len(), 5);
        assert_eq!(report.rows[0].chordal_distance, 0.0);
        assert!(report.rows.iter().all(|r| r.chordal_distance >= 0.0));
        // Gain decreases as distance grows here, so correlation is -1.
        assert!((report.rank_correlation + 1.0).abs() < 1e-12);
    }

    #[test]
    fn equal_errors_give_equal_gain() {
        let scenarios = [ScenarioId::N, ScenarioId::S];
        let cnn = vec![(ScenarioId::N, 5.0), (ScenarioId::S, 5.0)];
        let base = vec![(ScenarioId::N, 15.0), (ScenarioId::S, 15.0)];
        let dist = vec![(ScenarioId::N, 0.1), (ScenarioId::S, 0.2)];
        let report = mismatch_report(&scenarios, &cnn, &base, &dist).unwrap();
        assert_eq!(report.rows[0].gain_factor, report.rows[1].gain_factor);
    }

    #[test]
    fn missing_scenario_key_rejected() {
        let scenarios = [ScenarioId::N];
        let cnn = vec![(ScenarioId::S, 5.0)];
        let base = vec![(ScenarioId::N, 15.0)];
        let dist = vec![(ScenarioId::N, 0.1)];
        assert!(mismatch_report(&scenarios, &cnn, &base, &dist).is_err());
    }
}
