//! End-to-end checks of the classical pipeline: heatmap peak detection at
//! high SCNR, and local-search refinement of the peak estimate.

use radloc_core::estimators::{local_search, peak_cell_midpoint};
use radloc_core::experiments::ExperimentConfig;

#[test]
fn peak_cell_hits_truth_at_high_scnr() {
    let cfg = ExperimentConfig::default();
    let mut recipe = cfg.matched_recipe(400, 20.0, 41);
    recipe.train_fraction = 0.0;
    let prepared = recipe.prepare().expect("prepare scene");
    let ds = prepared.generate().expect("generate dataset");
    let grid = recipe.grid();

    let mut bin_hits = 0usize;
    let mut cell_hits = 0usize;
    for s in &ds.samples {
        let est = peak_cell_midpoint(s, &grid);
        let r_ok = (est.range_m - s.label_range_m).abs() <= grid.delta_r_m / 2.0;
        let az_ok = (est.azimuth_deg - s.label_azimuth_deg).abs() <= grid.delta_theta_deg / 2.0;
        if r_ok {
            bin_hits += 1;
        }
        if r_ok && az_ok {
            cell_hits += 1;
        }
    }
    let bin_rate = bin_hits as f64 / ds.samples.len() as f64;
    assert!(
        bin_rate >= 0.95,
        "peak range bin matched the target in only {:.1}% of {} trials",
        100.0 * bin_rate,
        ds.samples.len()
    );
    // The exact azimuth cell is a noisier call from a single snapshot; most
    // misses land in a neighboring cell.
    let cell_rate = cell_hits as f64 / ds.samples.len() as f64;
    assert!(
        cell_rate >= 0.85,
        "peak cell contained the target in only {:.1}% of {} trials",
        100.0 * cell_rate,
        ds.samples.len()
    );
}

#[test]
fn local_search_refines_peak_estimate() {
    let cfg = ExperimentConfig::default();
    let mut recipe = cfg.matched_recipe(200, 20.0, 42);
    recipe.train_fraction = 0.0;
    let prepared = recipe.prepare().expect("prepare scene");
    let ds = prepared.generate().expect("generate dataset");
    let grid = recipe.grid();
    let provider = recipe.provider();
    let synth = prepared.synthesizer().expect("synthesizer");

    let mut improved = 0usize;
    for (i, s) in ds.samples.iter().enumerate() {
        let (_, returns) = prepared.returns_for(&synth, i).expect("regenerate returns");
        let peak = peak_cell_midpoint(s, &grid);
        let refined = local_search(&returns, &peak, &grid, &provider).expect("local search");
        let err_peak = (peak.azimuth_deg - s.label_azimuth_deg).abs();
        let err_ls = (refined.azimuth_deg - s.label_azimuth_deg).abs();
        if err_ls <= err_peak {
            improved += 1;
        }
    }
    let rate = improved as f64 / ds.samples.len() as f64;
    assert!(
        rate >= 0.85,
        "local search improved azimuth error in only {:.1}% of {} trials",
        100.0 * rate,
        ds.samples.len()
    );
}
