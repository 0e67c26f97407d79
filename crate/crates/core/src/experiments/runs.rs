//! The experiment runners behind the CLI subcommands.
//!
//! Each runner is a pure function of its [`ExperimentConfig`]; reports
//! carry structured rows and can render themselves as CSV (header row,
//! fixed column order, 6 significant digits).

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    chordal_distance, clutter_subspace, mismatch_report, pooled_scene_covariance, SubspaceBasis,
};
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::estimators::{local_search, mean_error, peak_cell_midpoint, polar_to_cartesian};
use crate::namf::{breakdown_threshold, HeatmapGrid, HeatmapSample};
use crate::nn::layers::Mode;
use crate::nn::train::{train, TrainConfig, TrainReport};
use crate::nn::{batch_from_samples, CnnModel, LabelScale, ModelKind};
use crate::scenario::{displace_scenario, ScenarioId};

use super::{Dataset, ExperimentConfig, PreparedScene};

// Seed streams for the different runners; sample indices use 0..N, so
// these stay far outside that range.
const STREAM_THRESHOLD: u64 = 1 << 40;
const STREAM_SCNR: u64 = 2 << 40;
const STREAM_SIZE: u64 = 3 << 40;
const STREAM_MISMATCH: u64 = 4 << 40;
const STREAM_MODEL: u64 = 5 << 40;
const STREAM_FSL: u64 = 6 << 40;
const STREAM_DOPPLER: u64 = 7 << 40;

/// 6-significant-digit rendering used in every CSV cell.
pub fn sig6(x: f64) -> String {
    format!("{x:.5e}")
}

fn write_csv_rows<W: Write>(
    w: &mut W,
    header: &[&str],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header)?;
    for row in rows {
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}

fn truth_xy(s: &HeatmapSample) -> Vec<f64> {
    let (x, y) = polar_to_cartesian(s.label_range_m, s.label_azimuth_deg);
    vec![x, y]
}

/// Mean Cartesian localization error of the peak-cell-midpoint estimator.
pub fn peak_location_error(samples: &[&HeatmapSample], grid: &HeatmapGrid) -> Result<f64> {
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = samples
        .iter()
        .map(|s| {
            let est = peak_cell_midpoint(s, grid);
            (truth_xy(s), vec![est.x_m, est.y_m])
        })
        .collect();
    mean_error(&pairs)
}

/// Local-search errors over regenerated returns for the given generation
/// indices: mean |θ* − θ̂| and, on Doppler grids, mean |v* − v̂|.
pub fn local_search_errors(
    prepared: &PreparedScene,
    samples: &[(usize, &HeatmapSample)],
    grid: &HeatmapGrid,
) -> Result<(f64, Option<f64>)> {
    let provider = prepared.recipe.provider();
    let synth = prepared.synthesizer()?;
    let mut theta_pairs = Vec::with_capacity(samples.len());
    let mut vel_pairs = Vec::with_capacity(samples.len());
    for &(index, sample) in samples {
        let (target, returns) = prepared.returns_for(&synth, index)?;
        let start = peak_cell_midpoint(sample, grid);
        let est = local_search(&returns, &start, grid, &provider)?;
        theta_pairs.push((vec![target.azimuth_deg], vec![est.azimuth_deg]));
        if let Some(v) = est.velocity_mps {
            vel_pairs.push((vec![target.velocity_mps], vec![v]));
        }
    }
    let theta_err = mean_error(&theta_pairs)?;
    let vel_err = if vel_pairs.is_empty() {
        None
    } else {
        Some(mean_error(&vel_pairs)?)
    };
    Ok((theta_err, vel_err))
}

/// Mean Cartesian localization error of a CNN. Predictions are
/// denormalized with `scale` — for mismatched scenarios this is the
/// displaced grid's extent, which is exactly the coordinate remap.
pub fn cnn_location_error(
    model: &mut CnnModel,
    samples: &[&HeatmapSample],
    scale: &LabelScale,
) -> Result<f64> {
    let mut pairs = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(128) {
        let (input, _) = batch_from_samples(chunk, scale)?;
        let out = model.forward(&input, Mode::Infer)?;
        for (bi, s) in chunk.iter().enumerate() {
            let norm = &out.data[bi * model.outputs..(bi + 1) * model.outputs];
            let coords = scale.denormalize(norm)?;
            let (x, y) = polar_to_cartesian(coords[0], coords[1]);
            pairs.push((truth_xy(s), vec![x, y]));
        }
    }
    mean_error(&pairs)
}

/// Builds and trains a model on the dataset's 90/10 split.
pub fn train_model(
    kind: ModelKind,
    ds: &Dataset,
    grid: &HeatmapGrid,
    train_cfg: &TrainConfig,
    model_seed: u64,
) -> Result<CnnModel> {
    train_model_with_report(kind, ds, grid, train_cfg, model_seed).map(|(m, _)| m)
}

/// Like [`train_model`] but also returns the epoch-by-epoch training report.
pub fn train_model_with_report(
    kind: ModelKind,
    ds: &Dataset,
    grid: &HeatmapGrid,
    train_cfg: &TrainConfig,
    model_seed: u64,
) -> Result<(CnnModel, TrainReport)> {
    let (kappa, n_az, n_vel) = ds.dims();
    let scale = LabelScale::from_grid(grid);
    let mut rng = ChaCha8Rng::seed_from_u64(model_seed);
    let mut model = CnnModel::new(kind, [kappa, n_vel, n_az], scale, &mut rng)?;
    let cfg = TrainConfig {
        seed: derive_seed(model_seed, 1),
        ..train_cfg.clone()
    };
    let report = train(&mut model, &ds.train_refs(), &ds.validation_refs(), &cfg)?;
    Ok((model, report))
}

fn indexed_validation(ds: &Dataset) -> Vec<(usize, &HeatmapSample)> {
    ds.validation_indices().map(|i| (i, &ds.samples[i])).collect()
}

// ---------------------------------------------------------------------
// Threshold experiment
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ThresholdRow {
    pub k: usize,
    pub scnr_db: f64,
    pub err_namf_m: f64,
    pub threshold_db: f64,
}

#[derive(Debug, Clone)]
pub struct ThresholdReport {
    pub rows: Vec<ThresholdRow>,
}

impl ThresholdReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv_rows(
            w,
            &["k", "mean_output_scnr_db", "err_namf_m", "threshold_db"],
            self.rows.iter().map(|r| {
                vec![
                    r.k.to_string(),
                    sig6(r.scnr_db),
                    sig6(r.err_namf_m),
                    sig6(r.threshold_db),
                ]
            }),
        )
    }
}

/// Peak-estimator error versus mean output SCNR, for each configured K,
/// with the asymptotic breakdown prediction alongside.
pub fn run_threshold_experiment(cfg: &ExperimentConfig) -> Result<ThresholdReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (ki, &k) in cfg.threshold_ks.iter().enumerate() {
        let threshold_db = breakdown_threshold(cfg.n_pulses, cfg.l, k);
        for (pi, &scnr_db) in cfg.scnr_grid_db.iter().enumerate() {
            let seed = derive_seed(cfg.seed, STREAM_THRESHOLD + (ki as u64) * 4096 + pi as u64);
            let mut recipe = cfg.matched_recipe(cfg.threshold_n_val, scnr_db, seed);
            recipe.k = k;
            recipe.train_fraction = 0.0;
            // Fixed RCS for the threshold study: spreading the per-target
            // RCS smears the per-sample SCNR and blurs the knee the study
            // is trying to locate.
            recipe.rcs_spread_dbsm = 0.0;
            let ds = recipe.prepare()?.generate()?;
            let grid = recipe.grid();
            let err_namf_m = peak_location_error(&ds.validation_refs(), &grid)?;
            rows.push(ThresholdRow {
                k,
                scnr_db,
                err_namf_m,
                threshold_db,
            });
        }
    }
    Ok(ThresholdReport { rows })
}

// ---------------------------------------------------------------------
// SCNR sweep
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ScnrRow {
    pub scnr_db: f64,
    pub err_namf_m: f64,
    pub err_ls_theta_deg: f64,
    pub err_cnn_m: f64,
}

#[derive(Debug, Clone)]
pub struct ScnrSweepReport {
    pub rows: Vec<ScnrRow>,
}

impl ScnrSweepReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv_rows(
            w,
            &[
                "mean_output_scnr_db",
                "err_namf_m",
                "err_ls_theta_deg",
                "err_cnn_m",
            ],
            self.rows.iter().map(|r| {
                vec![
                    sig6(r.scnr_db),
                    sig6(r.err_namf_m),
                    sig6(r.err_ls_theta_deg),
                    sig6(r.err_cnn_m),
                ]
            }),
        )
    }
}

/// All three estimators across the SCNR grid; the CNN is retrained per
/// point on that point's 90% split.
pub fn run_scnr_sweep(cfg: &ExperimentConfig) -> Result<ScnrSweepReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (pi, &scnr_db) in cfg.scnr_grid_db.iter().enumerate() {
        let seed = derive_seed(cfg.seed, STREAM_SCNR + pi as u64);
        let recipe = cfg.matched_recipe(cfg.n_samples, scnr_db, seed);
        let prepared = recipe.prepare()?;
        let ds = prepared.generate()?;
        let grid = recipe.grid();
        let mut model = train_model(
            ModelKind::Matched,
            &ds,
            &grid,
            &cfg.train,
            derive_seed(cfg.seed, STREAM_MODEL + pi as u64),
        )?;
        let val = ds.validation_refs();
        let scale = model.scale.clone();
        rows.push(ScnrRow {
            scnr_db,
            err_namf_m: peak_location_error(&val, &grid)?,
            err_ls_theta_deg: local_search_errors(&prepared, &indexed_validation(&ds), &grid)?.0,
            err_cnn_m: cnn_location_error(&mut model, &val, &scale)?,
        });
    }
    Ok(ScnrSweepReport { rows })
}

// ---------------------------------------------------------------------
// Size sweep
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SizeRow {
    pub n_samples: usize,
    pub err_cnn_m: f64,
    pub err_namf_m: f64,
}

#[derive(Debug, Clone)]
pub struct SizeSweepReport {
    pub rows: Vec<SizeRow>,
}

impl SizeSweepReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv_rows(
            w,
            &["n_samples", "err_cnn_m", "err_namf_m"],
            self.rows.iter().map(|r| {
                vec![
                    r.n_samples.to_string(),
                    sig6(r.err_cnn_m),
                    sig6(r.err_namf_m),
                ]
            }),
        )
    }
}

/// CNN error as the training-set size grows. All sizes share one master
/// dataset (the largest size) and a common validation split, so rows
/// differ only in how much of the training split the model sees.
pub fn run_size_sweep(cfg: &ExperimentConfig) -> Result<SizeSweepReport> {
    cfg.validate()?;
    let n_max = *cfg.size_grid.iter().max().unwrap();
    let seed = derive_seed(cfg.seed, STREAM_SIZE);
    let recipe = cfg.matched_recipe(n_max, cfg.scnr_db, seed);
    let master = recipe.prepare()?.generate()?;
    let grid = recipe.grid();
    let val = master.validation_refs();
    let err_namf_m = peak_location_error(&val, &grid)?;

    let mut rows = Vec::new();
    for (ni, &n) in cfg.size_grid.iter().enumerate() {
        let train_count = (n as f64 * 0.9).round() as usize;
        let subset = Dataset {
            scenario_id: master.scenario_id,
            global_seed: master.global_seed,
            train_count: train_count.min(master.train_count),
            samples: master.samples.clone(),
        };
        // Validation stays the master's split; only the training prefix
        // shrinks.
        let train_refs: Vec<&HeatmapSample> =
            master.samples[..subset.train_count].iter().collect();
        let scale = LabelScale::from_grid(&grid);
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_SIZE + 1 + ni as u64));
        let (kappa, n_az, n_vel) = master.dims();
        let mut model = CnnModel::new(ModelKind::Matched, [kappa, n_vel, n_az], scale, &mut rng)?;
        let tc = TrainConfig {
            seed: derive_seed(cfg.seed, STREAM_SIZE + 100 + ni as u64),
            ..cfg.train.clone()
        };
        train(&mut model, &train_refs, &val, &tc)?;
        let scale = model.scale.clone();
        rows.push(SizeRow {
            n_samples: n,
            err_cnn_m: cnn_location_error(&mut model, &val, &scale)?,
            err_namf_m,
        });
    }
    Ok(SizeSweepReport { rows })
}

// ---------------------------------------------------------------------
// Mismatch and few-shot fine-tuning
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct MismatchCsvRow {
    pub scenario: ScenarioId,
    pub err_cnn_m: f64,
    pub err_namf_m: f64,
    pub err_ls_theta_deg: f64,
    pub gain_factor: f64,
    pub chordal_distance: f64,
}

#[derive(Debug, Clone)]
pub struct MismatchCsvReport {
    pub rows: Vec<MismatchCsvRow>,
    pub rank_correlation: f64,
}

impl MismatchCsvReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv_rows(
            w,
            &[
                "scenario",
                "err_cnn_m",
                "err_namf_m",
                "err_ls_theta_deg",
                "gain_factor",
                "chordal_distance",
                "rank_correlation",
            ],
            self.rows.iter().map(|r| {
                vec![
                    r.scenario.to_string(),
                    sig6(r.err_cnn_m),
                    sig6(r.err_namf_m),
                    sig6(r.err_ls_theta_deg),
                    sig6(r.gain_factor),
                    sig6(r.chordal_distance),
                    sig6(self.rank_correlation),
                ]
            }),
        )
    }
}

/// Model trained on the original scenario plus everything needed to test
/// it against the displaced scenarios.
pub struct MismatchContext {
    pub model: CnnModel,
    pub original: PreparedScene,
    pub original_dataset: Dataset,
    pub grid: HeatmapGrid,
    pub original_subspace: SubspaceBasis,
}

pub fn build_mismatch_context(cfg: &ExperimentConfig) -> Result<MismatchContext> {
    cfg.validate()?;
    let recipe = cfg.matched_recipe(cfg.n_samples, cfg.scnr_db, derive_seed(cfg.seed, STREAM_MISMATCH));
    let prepared = recipe.prepare()?;
    let ds = prepared.generate()?;
    let grid = recipe.grid();
    let model = train_model(
        ModelKind::Matched,
        &ds,
        &grid,
        &cfg.train,
        derive_seed(cfg.seed, STREAM_MISMATCH + 1),
    )?;
    let synth = prepared.synthesizer()?;
    let pooled = pooled_scene_covariance(&synth, &prepared.recipe.site);
    let original_subspace = clutter_subspace(&pooled, prepared.scene.noise_power, ScenarioId::O)?;
    Ok(MismatchContext {
        model,
        original: prepared,
        original_dataset: ds,
        grid,
        original_subspace,
    })
}

/// One displaced scenario's test dataset plus its mismatch measures.
pub struct DisplacedCase {
    pub scenario: ScenarioId,
    pub prepared: PreparedScene,
    pub dataset: Dataset,
    pub grid: HeatmapGrid,
    pub scale: LabelScale,
    pub err_namf_m: f64,
    pub err_ls_theta_deg: f64,
    pub chordal: f64,
}

pub fn build_displaced_case(
    cfg: &ExperimentConfig,
    ctx: &MismatchContext,
    direction: ScenarioId,
    index: usize,
) -> Result<DisplacedCase> {
    let site = displace_scenario(&cfg.site, direction)?;
    let n_test = (cfg.n_samples / 10).max(1);
    let mut recipe = cfg.matched_recipe(
        n_test,
        cfg.scnr_db,
        derive_seed(cfg.seed, STREAM_MISMATCH + 16 + index as u64),
    );
    recipe.site = site;
    recipe.train_fraction = 0.0;
    let prepared = recipe.prepare()?;
    let dataset = prepared.generate()?;
    let grid = recipe.grid();
    let scale = LabelScale::from_grid(&grid);
    let err_namf_m = peak_location_error(&dataset.validation_refs(), &grid)?;
    let err_ls_theta_deg =
        local_search_errors(&prepared, &indexed_validation(&dataset), &grid)?.0;
    let synth = prepared.synthesizer()?;
    let pooled = pooled_scene_covariance(&synth, &prepared.recipe.site);
    let displaced = clutter_subspace(&pooled, prepared.scene.noise_power, direction)?;
    let chordal = chordal_distance(&ctx.original_subspace, &displaced)?;
    Ok(DisplacedCase {
        scenario: direction,
        prepared,
        dataset,
        grid,
        scale,
        err_namf_m,
        err_ls_theta_deg,
        chordal,
    })
}

fn assemble_rows(
    per_scenario: Vec<(ScenarioId, f64, f64, f64, f64)>,
) -> Result<MismatchCsvReport> {
    let scenarios: Vec<ScenarioId> = per_scenario.iter().map(|r| r.0).collect();
    let errors_cnn: Vec<(ScenarioId, f64)> = per_scenario.iter().map(|r| (r.0, r.1)).collect();
    let errors_baseline: Vec<(ScenarioId, f64)> =
        per_scenario.iter().map(|r| (r.0, r.2)).collect();
    let distances: Vec<(ScenarioId, f64)> = per_scenario.iter().map(|r| (r.0, r.4)).collect();
    let report = mismatch_report(&scenarios, &errors_cnn, &errors_baseline, &distances)?;
    let rows = report
        .rows
        .iter()
        .zip(per_scenario.iter())
        .map(|(r, src)| MismatchCsvRow {
            scenario: r.scenario,
            err_cnn_m: r.err_cnn,
            err_namf_m: r.err_baseline,
            err_ls_theta_deg: src.3,
            gain_factor: r.gain_factor,
            chordal_distance: r.chordal_distance,
        })
        .collect();
    Ok(MismatchCsvReport {
        rows,
        rank_correlation: report.rank_correlation,
    })
}

/// Train once on the original scenario, test unadapted on each displaced
/// scenario. CNN predictions are remapped by denormalizing with the
/// displaced grid's extents.
pub fn run_mismatch_experiment(cfg: &ExperimentConfig) -> Result<MismatchCsvReport> {
    let mut ctx = build_mismatch_context(cfg)?;
    let mut per_scenario = Vec::new();

    let val = ctx.original_dataset.validation_refs();
    let scale_o = ctx.model.scale.clone();
    let err_cnn_o = cnn_location_error(&mut ctx.model, &val, &scale_o)?;
    let err_namf_o = peak_location_error(&val, &ctx.grid)?;
    let err_ls_o = local_search_errors(
        &ctx.original,
        &indexed_validation(&ctx.original_dataset),
        &ctx.grid,
    )?
    .0;
    let self_dist = chordal_distance(&ctx.original_subspace, &ctx.original_subspace)?;
    per_scenario.push((ScenarioId::O, err_cnn_o, err_namf_o, err_ls_o, self_dist));

    for (i, &dir) in ScenarioId::DISPLACED.iter().enumerate() {
        let case = build_displaced_case(cfg, &ctx, dir, i)?;
        let err_cnn = cnn_location_error(
            &mut ctx.model,
            &case.dataset.validation_refs(),
            &case.scale,
        )?;
        per_scenario.push((
            dir,
            err_cnn,
            case.err_namf_m,
            case.err_ls_theta_deg,
            case.chordal,
        ));
    }
    assemble_rows(per_scenario)
}

/// Fine-tunes a copy of the context model on a fresh few-shot set for one
/// displaced scenario; only the dense head moves.
pub fn fine_tune_for_case(
    cfg: &ExperimentConfig,
    ctx: &MismatchContext,
    case: &DisplacedCase,
    index: usize,
) -> Result<CnnModel> {
    let mut fsl_recipe = cfg.matched_recipe(
        cfg.fsl_samples,
        cfg.scnr_db,
        derive_seed(cfg.seed, STREAM_FSL + index as u64),
    );
    fsl_recipe.site = case.prepared.recipe.site.clone();
    fsl_recipe.train_fraction = 1.0;
    let fsl_ds = fsl_recipe.prepare()?.generate()?;
    if fsl_ds.samples.len() != cfg.fsl_samples {
        return Err(Error::InvalidConfig("few-shot set has wrong size".into()));
    }
    let mut model = ctx.model.clone();
    model.scale = case.scale.clone();
    model.freeze_feature_layers();
    let refs = fsl_ds.train_refs();
    let tc = TrainConfig {
        seed: derive_seed(cfg.seed, STREAM_FSL + 100 + index as u64),
        ..cfg.train.clone()
    };
    // With only 64 samples there is no held-out split; the few-shot set
    // doubles as the early-stopping monitor.
    train(&mut model, &refs, &refs, &tc)?;
    Ok(model)
}

/// Mismatch evaluation repeated after few-shot fine-tuning on 64 samples
/// per displaced scenario.
pub fn run_fsl_experiment(cfg: &ExperimentConfig) -> Result<MismatchCsvReport> {
    let mut ctx = build_mismatch_context(cfg)?;
    let mut per_scenario = Vec::new();

    let val = ctx.original_dataset.validation_refs();
    let scale_o = ctx.model.scale.clone();
    let err_cnn_o = cnn_location_error(&mut ctx.model, &val, &scale_o)?;
    let err_namf_o = peak_location_error(&val, &ctx.grid)?;
    let err_ls_o = local_search_errors(
        &ctx.original,
        &indexed_validation(&ctx.original_dataset),
        &ctx.grid,
    )?
    .0;
    per_scenario.push((ScenarioId::O, err_cnn_o, err_namf_o, err_ls_o, 0.0));

    for (i, &dir) in ScenarioId::DISPLACED.iter().enumerate() {
        let case = build_displaced_case(cfg, &ctx, dir, i)?;
        let mut tuned = fine_tune_for_case(cfg, &ctx, &case, i)?;
        let err_cnn = cnn_location_error(
            &mut tuned,
            &case.dataset.validation_refs(),
            &case.scale,
        )?;
        per_scenario.push((
            dir,
            err_cnn,
            case.err_namf_m,
            case.err_ls_theta_deg,
            case.chordal,
        ));
    }
    assemble_rows(per_scenario)
}

// ---------------------------------------------------------------------
// Doppler experiment
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DopplerRow {
    pub scnr_db: f64,
    pub err_cnn_m: f64,
    pub err_namf_m: f64,
    pub err_ls_v_mps: f64,
}

#[derive(Debug, Clone)]
pub struct DopplerReport {
    pub rows: Vec<DopplerRow>,
}

impl DopplerReport {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        write_csv_rows(
            w,
            &[
                "mean_output_scnr_db",
                "err_cnn_m",
                "err_namf_m",
                "err_ls_v_mps",
            ],
            self.rows.iter().map(|r| {
                vec![
                    sig6(r.scnr_db),
                    sig6(r.err_cnn_m),
                    sig6(r.err_namf_m),
                    sig6(r.err_ls_v_mps),
                ]
            }),
        )
    }
}

/// Doppler CNN on range × velocity × azimuth volumes across the Doppler
/// SCNR grid.
pub fn run_doppler_experiment(cfg: &ExperimentConfig) -> Result<DopplerReport> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (pi, &scnr_db) in cfg.doppler_scnr_grid_db.iter().enumerate() {
        let seed = derive_seed(cfg.seed, STREAM_DOPPLER + pi as u64);
        let recipe = cfg.doppler_recipe(cfg.doppler_n_samples, scnr_db, seed);
        let prepared = recipe.prepare()?;
        let ds = prepared.generate()?;
        let grid = recipe.grid();
        let mut model = train_model(
            ModelKind::Doppler,
            &ds,
            &grid,
            &cfg.train,
            derive_seed(cfg.seed, STREAM_DOPPLER + 100 + pi as u64),
        )?;
        let val = ds.validation_refs();
        let scale = model.scale.clone();
        let (_, vel_err) = local_search_errors(&prepared, &indexed_validation(&ds), &grid)?;
        rows.push(DopplerRow {
            scnr_db,
            err_cnn_m: cnn_location_error(&mut model, &val, &scale)?,
            err_namf_m: peak_location_error(&val, &grid)?,
            err_ls_v_mps: vel_err.ok_or_else(|| {
                Error::InvalidConfig("Doppler grid produced no velocity estimates".into())
            })?,
        });
    }
    Ok(DopplerReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shrunken config so the end-to-end runners stay fast in unit tests.
    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            n_samples: 60,
            threshold_n_val: 20,
            scnr_grid_db: vec![-20.0, 20.0],
            threshold_ks: vec![100],
            size_grid: vec![20, 60],
            patches_per_bin: 8,
            calibration_trials: 100,
            doppler_n_samples: 0, // unused here; set per test
            train: TrainConfig {
                max_epochs: 4,
                batch_size: 16,
                patience: 4,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn threshold_rows_and_columns() {
        let mut cfg = tiny_config();
        cfg.doppler_n_samples = 1;
        let report = run_threshold_experiment(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        for r in &report.rows {
            assert_eq!(r.k, 100);
            assert!((r.threshold_db - breakdown_threshold(1, 16, 100)).abs() < 1e-12);
            assert!(r.err_namf_m >= 0.0);
        }
        // Error at +20 dB should beat error at −20 dB even at tiny N.
        assert!(report.rows[1].err_namf_m < report.rows[0].err_namf_m);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.starts_with("k,mean_output_scnr_db,err_namf_m,threshold_db"));
    }

    #[test]
    fn threshold_is_deterministic() {
        let mut cfg = tiny_config();
        cfg.doppler_n_samples = 1;
        cfg.scnr_grid_db = vec![0.0];
        let a = run_threshold_experiment(&cfg).unwrap();
        let b = run_threshold_experiment(&cfg).unwrap();
        let mut ca = Vec::new();
        let mut cb = Vec::new();
        a.write_csv(&mut ca).unwrap();
        b.write_csv(&mut cb).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn size_sweep_shares_validation_split() {
        let mut cfg = tiny_config();
        cfg.doppler_n_samples = 1;
        let report = run_size_sweep(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        // NAMF error is size-independent by construction.
        assert_eq!(report.rows[0].err_namf_m, report.rows[1].err_namf_m);
    }

    #[test]
    fn sig6_renders_six_significant_digits() {
        assert_eq!(sig6(12345.678), "1.23457e4");
        assert_eq!(sig6(-0.000123456), "-1.23456e-4");
    }
}
