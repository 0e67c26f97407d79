//! `radloc` — dataset generation, model training, and the experiment
//! sweeps behind one binary.
//!
//! Every subcommand is deterministic given `--config`/`--seed`; reruns
//! produce bit-identical datasets, checkpoints, and CSVs.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use radloc_core::derive_seed;
use radloc_core::experiments::runs::{self, cnn_location_error, peak_location_error, sig6};
use radloc_core::experiments::{Dataset, ExperimentConfig};
use radloc_core::nn::{checkpoint, CnnModel, LabelScale, ModelKind};

#[derive(Parser)]
#[command(name = "radloc", version, about = "Radar heatmap localization experiments")]
struct Cli {
    /// JSON experiment config; unspecified fields take the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for datasets, checkpoints, and CSVs.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Force single-threaded execution (already the default execution
    /// model; accepted so scripted runs can pin it explicitly).
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a heatmap dataset file (RLHM).
    Generate {
        /// Build range × velocity × azimuth volumes instead of matched maps.
        #[arg(long)]
        doppler: bool,
    },
    /// Train a model on a dataset file and write a checkpoint (RLNN).
    Train {
        /// Dataset file produced by `generate`.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Evaluate a checkpoint and the classical estimators on a dataset's
    /// validation split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Peak-estimator error vs mean output SCNR with the breakdown line.
    Threshold,
    /// All three estimators across the SCNR grid.
    SweepScnr,
    /// CNN error as the training set grows.
    SweepSize,
    /// Train on the original scenario, test on the displaced ones.
    Mismatch,
    /// Mismatch evaluation after few-shot fine-tuning.
    Fsl,
    /// Doppler-grid experiment with velocity estimation.
    Doppler,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, radloc_core::Error> {
    let mut cfg: ExperimentConfig = match &cli.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf, radloc_core::Error> {
    fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}

fn write_report<F>(dir: &Path, name: &str, write: F) -> Result<(), radloc_core::Error>
where
    F: FnOnce(&mut fs::File) -> Result<(), radloc_core::Error>,
{
    let path = out_file(dir, name)?;
    let mut file = fs::File::create(&path)?;
    write(&mut file)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<(), radloc_core::Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate { doppler } => {
            let recipe = if *doppler {
                cfg.doppler_recipe(cfg.doppler_n_samples, cfg.scnr_db, cfg.seed)
            } else {
                cfg.matched_recipe(cfg.n_samples, cfg.scnr_db, cfg.seed)
            };
            let ds = recipe.prepare()?.generate()?;
            let name = if *doppler { "dataset-doppler.rlhm" } else { "dataset.rlhm" };
            let path = out_file(&cli.out, name)?;
            ds.write_to_path(&path)?;
            println!(
                "wrote {} ({} samples, dims {:?})",
                path.display(),
                ds.samples.len(),
                ds.dims()
            );
        }
        Command::Train { dataset } => {
            let ds = Dataset::read_from_path(dataset)?;
            let (kappa, n_az, n_vel) = ds.dims();
            let kind = if n_vel > 1 { ModelKind::Doppler } else { ModelKind::Matched };
            // Rebuild the label scale from the samples' own grid; the grid
            // parameters are implied by the recorded scenario.
            let grid = grid_for(&cfg, &ds)?;
            let mut model = {
                let scale = LabelScale::from_grid(&grid);
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x4D4F44454C));
                CnnModel::new(kind, [kappa, n_vel, n_az], scale, &mut rng)?
            };
            let report = radloc_core::nn::train::train(
                &mut model,
                &ds.train_refs(),
                &ds.validation_refs(),
                &cfg.train,
            )?;
            let path = out_file(&cli.out, "model.rlnn")?;
            checkpoint::save_to_path(&model, &path)?;
            println!(
                "wrote {} (best val loss {} at epoch {})",
                path.display(),
                sig6(report.best_val_loss),
                report.best_epoch
            );
        }
        Command::Evaluate { dataset, model } => {
            let ds = Dataset::read_from_path(dataset)?;
            let mut model = checkpoint::load_from_path(model)?;
            let grid = grid_for(&cfg, &ds)?;
            let val = ds.validation_refs();
            let scale = model.scale.clone();
            let err_cnn = cnn_location_error(&mut model, &val, &scale)?;
            let err_namf = peak_location_error(&val, &grid)?;
            println!("err_cnn_m,{}", sig6(err_cnn));
            println!("err_namf_m,{}", sig6(err_namf));
        }
        Command::Threshold => {
            let report = runs::run_threshold_experiment(&cfg)?;
            write_report(&cli.out, "threshold.csv", |f| report.write_csv(f))?;
        }
        Command::SweepScnr => {
            let report = runs::run_scnr_sweep(&cfg)?;
            write_report(&cli.out, "sweep-scnr.csv", |f| report.write_csv(f))?;
        }
        Command::SweepSize => {
            let report = runs::run_size_sweep(&cfg)?;
            write_report(&cli.out, "sweep-size.csv", |f| report.write_csv(f))?;
        }
        Command::Mismatch => {
            let report = runs::run_mismatch_experiment(&cfg)?;
            write_report(&cli.out, "mismatch.csv", |f| report.write_csv(f))?;
        }
        Command::Fsl => {
            let report = runs::run_fsl_experiment(&cfg)?;
            write_report(&cli.out, "fsl.csv", |f| report.write_csv(f))?;
        }
        Command::Doppler => {
            let report = runs::run_doppler_experiment(&cfg)?;
            write_report(&cli.out, "doppler.csv", |f| report.write_csv(f))?;
        }
    }
    Ok(())
}

/// Rebuilds the sweep grid a dataset was generated with. The dataset
/// records its scenario; the azimuth step and velocity span come from the
/// config, matching generation.
fn grid_for(
    cfg: &ExperimentConfig,
    ds: &Dataset,
) -> Result<radloc_core::HeatmapGrid, radloc_core::Error> {
    let site = if ds.scenario_id == cfg.site.scenario_id {
        cfg.site.clone()
    } else {
        radloc_core::scenario::displace_scenario(&cfg.site, ds.scenario_id)?
    };
    let (_, n_az, n_vel) = ds.dims();
    let grid = if n_vel > 1 {
        radloc_core::HeatmapGrid::doppler(
            &site,
            cfg.delta_theta_deg,
            cfg.velocity.v_min_mps,
            cfg.velocity.v_max_mps,
            cfg.velocity.delta_v_mps,
        )
    } else {
        radloc_core::HeatmapGrid::matched(&site, cfg.delta_theta_deg)
    };
    if grid.n_azimuth != n_az || grid.n_velocity() != n_vel {
        return Err(radloc_core::Error::DimensionMismatch(format!(
            "dataset dims {:?} do not match the config's grid ({} az × {} vel)",
            ds.dims(),
            grid.n_azimuth,
            grid.n_velocity()
        )));
    }
    Ok(grid)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
