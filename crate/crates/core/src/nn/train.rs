//! Adam optimizer and the supervised training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Mode, Param};
use super::{batch_from_samples, weighted_euclidean_loss, CnnModel};
use crate::error::{Error, Result};
use crate::namf::HeatmapSample;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Coupled L2 penalty: the gradient sees `grad + weight_decay · w`.
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Per-epoch multiplicative learning-rate decay; 1.0 keeps the rate
    /// constant. Shrinking the step late in training lowers the jitter
    /// floor of the non-smooth Euclidean loss.
    pub lr_decay: f64,
    /// Epochs trained at the full rate before `lr_decay` starts applying.
    pub lr_hold: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 128,
            max_epochs: 100,
            patience: 10,
            lr_decay: 1.0,
            lr_hold: 0,
            seed: 0,
        }
    }
}

/// One Adam update of a single parameter tensor. `t` is the 1-based step
/// count used for bias correction.
pub fn adam_update(param: &mut Param, cfg: &TrainConfig, t: u64) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..param.data.len() {
        let g = param.grad[i] + cfg.weight_decay * param.data[i];
        param.adam_m[i] = cfg.beta1 * param.adam_m[i] + (1.0 - cfg.beta1) * g;
        param.adam_v[i] = cfg.beta2 * param.adam_v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = param.adam_m[i] / bc1;
        let v_hat = param.adam_v[i] / bc2;
        param.data[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Adam over every unfrozen layer of a model.
#[derive(Debug, Clone)]
pub struct Adam {
    pub cfg: TrainConfig,
    t: u64,
}

impl Adam {
    pub fn new(cfg: TrainConfig) -> Self {
        Self { cfg, t: 0 }
    }

    pub fn step(&mut self, model: &mut CnnModel) {
        self.t += 1;
        for layer in model.layers.iter_mut() {
            if layer.is_frozen() {
                continue;
            }
            for p in layer.params_mut() {
                adam_update(p, &self.cfg, self.t);
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

/// Mean extent-weighted euclidean loss (normalized label space, weights
/// from [`super::LabelScale::loss_weights`]) over a sample set, using
/// running batch-norm statistics.
pub fn evaluate_loss(model: &mut CnnModel, set: &[&HeatmapSample]) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::InvalidConfig("empty evaluation set".into()));
    }
    let scale = model.scale.clone();
    let weights = scale.loss_weights();
    let mut total = 0.0;
    for chunk in set.chunks(128) {
        let (input, target) = batch_from_samples(chunk, &scale)?;
        let out = model.forward(&input, Mode::Infer)?;
        let (loss, _) = weighted_euclidean_loss(&out, &target, &weights)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Minibatch training with early stopping. On return the model holds the
/// weights of the best-validation epoch.
pub fn train(
    model: &mut CnnModel,
    train_set: &[&HeatmapSample],
    val_set: &[&HeatmapSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidConfig(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let scale = model.scale.clone();
    let weights = scale.loss_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Adam::new(cfg.clone());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = model.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut train_losses = Vec::new();
    let mut val_losses = Vec::new();
    let mut epochs_run = 0;

    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let decay_epochs = epoch.saturating_sub(cfg.lr_hold);
        optimizer.cfg.learning_rate =
            cfg.learning_rate * cfg.lr_decay.powi(decay_epochs as i32);
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&HeatmapSample> = chunk.iter().map(|&i| train_set[i]).collect();
            let (input, target) = batch_from_samples(&batch, &scale)?;
            model.zero_grads();
            let out = model.forward(&input, Mode::Train)?;
            let (loss, grad) = weighted_euclidean_loss(&out, &target, &weights)?;
            if !loss.is_finite() {
                return Err(Error::NumericalDivergence(format!(
                    "training loss became {loss} at epoch {epoch}"
                )));
            }
            model.backward(&grad)?;
            optimizer.step(model);
            epoch_loss += loss * batch.len() as f64;
        }
        train_losses.push(epoch_loss / train_set.len() as f64);

        let val = evaluate_loss(model, val_set)?;
        val_losses.push(val);
        if val < best_val {
            best_val = val;
            best_epoch = epoch;
            best = model.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }

    *model = best;
    Ok(TrainReport {
        epochs_run,
        best_epoch,
        best_val_loss: best_val,
        train_losses,
        val_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::namf::HeatmapMeta;
    use crate::nn::{LabelScale, ModelKind};
    use crate::scenario::ScenarioId;
    use rand::Rng;

    #[test]
    fn adam_first_step_is_signed_learning_rate() {
        let cfg = TrainConfig {
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = Param::zeros(vec![3]);
        p.data = vec![1.0, -2.0, 0.5];
        p.grad = vec![0.3, -0.7, 0.0];
        let before = p.data.clone();
        adam_update(&mut p, &cfg, 1);
        // With zero moments, m̂ = g and v̂ = g², so the step is
        // lr · g/(|g| + eps) ≈ lr · sign(g).
        assert!((p.data[0] - (before[0] - cfg.learning_rate)).abs() < 1e-9);
        assert!((p.data[1] - (before[1] + cfg.learning_rate)).abs() < 1e-9);
        assert_eq!(p.data[2], before[2]);
    }

    #[test]
    fn adam_weight_decay_pulls_toward_zero() {
        let cfg = TrainConfig {
            weight_decay: 1e-2,
            ..TrainConfig::default()
        };
        let mut p = Param::zeros(vec![1]);
        p.data = vec![5.0];
        // Zero loss gradient: only the decay term acts.
        adam_update(&mut p, &cfg, 1);
        assert!(p.data[0] < 5.0);
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let cfg = TrainConfig {
            learning_rate: 5e-2,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let mut p = Param::zeros(vec![1]);
        p.data = vec![-4.0];
        for t in 1..=2000 {
            p.grad = vec![2.0 * (p.data[0] - 3.0)];
            adam_update(&mut p, &cfg, t);
        }
        assert!((p.data[0] - 3.0).abs() < 1e-3, "got {}", p.data[0]);
    }

    fn synthetic_samples(n: usize, seed: u64) -> Vec<HeatmapSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let az = rng.gen_range(20.0..30.0);
                let r = rng.gen_range(14_540.0..14_680.0);
                // Values carry the label so a tiny net can actually learn.
                let values: Vec<f64> = (0..2 * 15)
                    .map(|j| {
                        let jf = j as f64 / 29.0;
                        (az - 20.0) / 10.0 * jf + (r - 14_540.0) / 140.0 * (1.0 - jf)
                    })
                    .collect();
                HeatmapSample {
                    values,
                    kappa: 2,
                    n_azimuth: 15,
                    n_velocity: 1,
                    label_range_m: r,
                    label_azimuth_deg: az,
                    label_velocity_mps: None,
                    meta: HeatmapMeta {
                        scenario_id: ScenarioId::O,
                        mean_output_scnr_db: 0.0,
                        seed: i as u64,
                    },
                }
            })
            .collect()
    }

    fn scale() -> LabelScale {
        LabelScale {
            mins: vec![14_538.0, 20.0],
            maxs: vec![14_688.0, 30.0],
        }
    }

    #[test]
    fn training_reduces_loss_and_returns_best_snapshot() {
        let samples = synthetic_samples(64, 5);
        let refs: Vec<&HeatmapSample> = samples.iter().collect();
        let (train_set, val_set) = refs.split_at(56);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut model = CnnModel::new(ModelKind::Matched, [2, 1, 15], scale(), &mut rng).unwrap();
        let initial = evaluate_loss(&mut model, val_set).unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            max_epochs: 120,
            patience: 30,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train(&mut model, train_set, val_set, &cfg).unwrap();
        assert!(report.best_val_loss < initial * 0.5, "val {initial} -> {}", report.best_val_loss);
        // The returned weights reproduce the reported best validation loss.
        let val_now = evaluate_loss(&mut model, val_set).unwrap();
        assert!((val_now - report.best_val_loss).abs() < 1e-12);
        assert_eq!(report.train_losses.len(), report.epochs_run);
    }

    #[test]
    fn training_is_deterministic() {
        let samples = synthetic_samples(32, 9);
        let refs: Vec<&HeatmapSample> = samples.iter().collect();
        let (train_set, val_set) = refs.split_at(28);
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 10,
            seed: 3,
            ..TrainConfig::default()
        };
        let run = |mseed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(mseed);
            let mut model =
                CnnModel::new(ModelKind::Matched, [2, 1, 15], scale(), &mut rng).unwrap();
            train(&mut model, train_set, val_set, &cfg).unwrap();
            model
        };
        let a = run(7);
        let b = run(7);
        for (la, lb) in a.layers.iter().zip(b.layers.iter()) {
            for (pa, pb) in la.params().iter().zip(lb.params().iter()) {
                assert_eq!(pa.data, pb.data);
            }
        }
    }

    #[test]
    fn frozen_features_do_not_move_during_fine_tuning() {
        let samples = synthetic_samples(32, 13);
        let refs: Vec<&HeatmapSample> = samples.iter().collect();
        let (train_set, val_set) = refs.split_at(28);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut model = CnnModel::new(ModelKind::Matched, [2, 1, 15], scale(), &mut rng).unwrap();
        model.freeze_feature_layers();
        let frozen_before: Vec<Vec<f64>> = model
            .layers
            .iter()
            .filter(|l| l.is_frozen())
            .flat_map(|l| l.params())
            .map(|p| p.data.clone())
            .collect();
        let cfg = TrainConfig {
            batch_size: 8,
            max_epochs: 5,
            seed: 4,
            ..TrainConfig::default()
        };
        train(&mut model, train_set, val_set, &cfg).unwrap();
        let frozen_after: Vec<Vec<f64>> = model
            .layers
            .iter()
            .filter(|l| l.is_frozen())
            .flat_map(|l| l.params())
            .map(|p| p.data.clone())
            .collect();
        assert_eq!(frozen_before, frozen_after);
    }
}
