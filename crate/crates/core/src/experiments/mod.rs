//! Experiment orchestration: dataset generation, the sweep/mismatch runs,
//! and the on-disk formats behind the CLI.
//!
//! Every run is a pure function of its config (seed included): per-sample
//! seeds are derived from the global seed and the sample index, so
//! identical configs reproduce identical datasets, models, and CSVs.

pub mod dataset;
pub mod runs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::derive_seed;
use crate::error::{Error, Result};
use crate::namf::{heatmap, HeatmapGrid, HeatmapMeta};
use crate::nn::train::TrainConfig;
use crate::scenario::{
    build_clutter_scene, calibrate_rcs_gain, sample_target, scene_seed, ClutterScene,
    RadarReturnSet, RadarSiteConfig, SceneSynthesizer, TargetSpec,
};
use crate::steering::SteeringProvider;
pub use dataset::Dataset;

/// Seed stream index reserved for gain calibration (sample indices use
/// 0..N, so any huge constant stays out of their way).
const CALIBRATION_STREAM: u64 = u64::MAX;

/// Velocity span of a Doppler sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VelocitySpan {
    pub v_min_mps: f64,
    pub v_max_mps: f64,
    pub delta_v_mps: f64,
}

impl Default for VelocitySpan {
    fn default() -> Self {
        Self {
            v_min_mps: 175.0,
            v_max_mps: 190.0,
            delta_v_mps: 0.5,
        }
    }
}

/// Everything needed to deterministically generate one dataset.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRecipe {
    pub site: RadarSiteConfig,
    pub n_pulses: usize,
    pub l: usize,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Mean output SCNR the RCS gain is calibrated to.
    pub scnr_db: f64,
    pub rcs_spread_dbsm: f64,
    pub delta_theta_deg: f64,
    pub velocity: Option<VelocitySpan>,
    pub patches_per_bin: usize,
    pub calibration_trials: usize,
    /// Fraction of samples assigned to the training split (rest validate).
    pub train_fraction: f64,
}

impl DatasetRecipe {
    pub fn grid(&self) -> HeatmapGrid {
        match self.velocity {
            Some(v) => HeatmapGrid::doppler(
                &self.site,
                self.delta_theta_deg,
                v.v_min_mps,
                v.v_max_mps,
                v.delta_v_mps,
            ),
            None => HeatmapGrid::matched(&self.site, self.delta_theta_deg),
        }
    }

    pub fn provider(&self) -> SteeringProvider {
        self.site.steering_provider(self.l, self.n_pulses)
    }

    fn vel_range(&self) -> Option<(f64, f64)> {
        self.velocity.map(|v| (v.v_min_mps, v.v_max_mps))
    }

    /// Builds the clutter scene and calibrates the RCS gain.
    pub fn prepare(&self) -> Result<PreparedScene> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.train_fraction) {
            return Err(Error::InvalidConfig("train_fraction outside [0, 1]".into()));
        }
        let scene = build_clutter_scene(
            &self.site,
            self.patches_per_bin,
            scene_seed(self.seed, self.site.scenario_id),
        )?;
        let mut cal_rng =
            ChaCha8Rng::seed_from_u64(derive_seed(self.seed, CALIBRATION_STREAM));
        let gain = calibrate_rcs_gain(
            &scene,
            &self.site,
            self.n_pulses,
            self.l,
            self.k,
            self.scnr_db,
            0.0,
            self.rcs_spread_dbsm,
            self.vel_range(),
            self.calibration_trials,
            &mut cal_rng,
        )?;
        Ok(PreparedScene {
            recipe: self.clone(),
            scene,
            gain,
        })
    }
}

/// A recipe with its realized clutter scene and calibrated gain.
#[derive(Debug, Clone)]
pub struct PreparedScene {
    pub recipe: DatasetRecipe,
    pub scene: ClutterScene,
    pub gain: f64,
}

impl PreparedScene {
    pub fn synthesizer(&self) -> Result<SceneSynthesizer<'_>> {
        SceneSynthesizer::new(&self.scene, &self.recipe.site, self.recipe.provider())
    }

    /// Re-creates the target placement and raw returns for one sample
    /// index. The heatmap in the dataset and the returns here come from
    /// the same derived seed, so they describe the same realization.
    pub fn returns_for(
        &self,
        synth: &SceneSynthesizer<'_>,
        index: usize,
    ) -> Result<(TargetSpec, RadarReturnSet)> {
        let r = &self.recipe;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(r.seed, index as u64));
        let target = sample_target(
            &r.site,
            0.0,
            r.rcs_spread_dbsm,
            r.vel_range(),
            &mut rng,
        )?;
        let returns = synth.synthesize(&target, r.k, self.gain, &mut rng)?;
        Ok((target, returns))
    }

    /// Generates the full dataset: N independent placements → returns →
    /// heatmaps, split per the recipe's train fraction.
    pub fn generate(&self) -> Result<Dataset> {
        let r = &self.recipe;
        let grid = r.grid();
        let provider = r.provider();
        let synth = self.synthesizer()?;
        let mut samples = Vec::with_capacity(r.n_samples);
        for i in 0..r.n_samples {
            let wrap = |e: Error| Error::Sample {
                index: i,
                source: Box::new(e),
            };
            let (target, returns) = self.returns_for(&synth, i).map_err(wrap)?;
            let meta = HeatmapMeta {
                scenario_id: r.site.scenario_id,
                mean_output_scnr_db: r.scnr_db,
                seed: derive_seed(r.seed, i as u64),
            };
            samples.push(heatmap(&returns, &grid, &provider, &target, meta).map_err(wrap)?);
        }
        Ok(Dataset {
            scenario_id: r.site.scenario_id,
            global_seed: r.seed,
            train_count: (r.n_samples as f64 * r.train_fraction).round() as usize,
            samples,
        })
    }
}

/// Full configuration for the experiment runners; every field has a
/// desk-scale default, so a JSON config only needs the overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub site: RadarSiteConfig,
    pub n_pulses: usize,
    pub l: usize,
    pub k: usize,
    pub n_samples: usize,
    pub seed: u64,
    /// Mean output SCNR used by the fixed-SCNR experiments.
    pub scnr_db: f64,
    /// SCNR grid for the threshold and SCNR sweeps.
    pub scnr_grid_db: Vec<f64>,
    /// K values swept by the threshold experiment.
    pub threshold_ks: Vec<usize>,
    /// Validation samples per threshold grid point.
    pub threshold_n_val: usize,
    /// Dataset sizes for the size sweep.
    pub size_grid: Vec<usize>,
    pub rcs_spread_dbsm: f64,
    pub delta_theta_deg: f64,
    pub patches_per_bin: usize,
    pub calibration_trials: usize,
    /// Fine-tuning sample count for the few-shot run.
    pub fsl_samples: usize,
    pub velocity: VelocitySpan,
    pub doppler_n_pulses: usize,
    pub doppler_k: usize,
    pub doppler_n_samples: usize,
    pub doppler_scnr_grid_db: Vec<f64>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            site: RadarSiteConfig::original(),
            n_pulses: 1,
            l: 16,
            k: 100,
            n_samples: 10_000,
            seed: 0,
            scnr_db: 20.0,
            scnr_grid_db: (0..9).map(|i| -20.0 + 5.0 * i as f64).collect(),
            threshold_ks: vec![100, 500],
            threshold_n_val: 500,
            size_grid: vec![1_000, 2_000, 5_000, 10_000],
            rcs_spread_dbsm: 10.0,
            delta_theta_deg: 0.4,
            patches_per_bin: 36,
            calibration_trials: 200,
            fsl_samples: 64,
            velocity: VelocitySpan::default(),
            doppler_n_pulses: 4,
            doppler_k: 400,
            doppler_n_samples: 300,
            doppler_scnr_grid_db: vec![0.0, 20.0],
            train: TrainConfig {
                // Decaying step lets the regression settle well below the
                // heatmap-cell quantization floor.
                lr_decay: 0.92,
                lr_hold: 40,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.site.validate()?;
        if self.n_samples == 0
            || self.threshold_n_val == 0
            || self.fsl_samples == 0
            || self.doppler_n_samples == 0
        {
            return Err(Error::InvalidConfig("sample counts must be positive".into()));
        }
        if self.scnr_grid_db.is_empty() || self.doppler_scnr_grid_db.is_empty() {
            return Err(Error::InvalidConfig("SCNR grids must be nonempty".into()));
        }
        if self.size_grid.is_empty() || self.size_grid.contains(&0) {
            return Err(Error::InvalidConfig("size grid must be nonempty and positive".into()));
        }
        if self.threshold_ks.is_empty() || self.threshold_ks.contains(&0) {
            return Err(Error::InvalidConfig("threshold K list must be nonempty and positive".into()));
        }
        Ok(())
    }

    /// Matched-case recipe for the given size, SCNR, and seed.
    pub fn matched_recipe(&self, n_samples: usize, scnr_db: f64, seed: u64) -> DatasetRecipe {
        DatasetRecipe {
            site: self.site.clone(),
            n_pulses: self.n_pulses,
            l: self.l,
            k: self.k,
            n_samples,
            seed,
            scnr_db,
            rcs_spread_dbsm: self.rcs_spread_dbsm,
            delta_theta_deg: self.delta_theta_deg,
            velocity: None,
            patches_per_bin: self.patches_per_bin,
            calibration_trials: self.calibration_trials,
            train_fraction: 0.9,
        }
    }

    /// Doppler-case recipe.
    pub fn doppler_recipe(&self, n_samples: usize, scnr_db: f64, seed: u64) -> DatasetRecipe {
        DatasetRecipe {
            n_pulses: self.doppler_n_pulses,
            k: self.doppler_k,
            velocity: Some(self.velocity),
            ..self.matched_recipe(n_samples, scnr_db, seed)
        }
    }
}
