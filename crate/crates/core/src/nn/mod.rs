//! From-scratch regression CNN used to read target coordinates off NAMF
//! heatmaps.
//!
//! Two architectures share the same layer stack
//! (conv → relu → batch-norm → max-pool, twice, then two dense layers):
//! the matched net consumes range × azimuth maps with 1×3 kernels, the
//! Doppler net consumes range × velocity × azimuth volumes with 3×3
//! kernels. All arithmetic is f64; gradients are exact (verified against
//! finite differences in the tests).

pub mod checkpoint;
pub mod layers;
pub mod tensor;
pub mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::namf::{HeatmapGrid, HeatmapSample};
use layers::{
    BatchNormLayer, ConvLayer, DenseLayer, FlattenLayer, Layer, MaxPoolLayer, Mode, ReluLayer,
};
use tensor::Tensor;

/// Which heatmap family a model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    /// Range × azimuth maps, two outputs (range, azimuth).
    Matched,
    /// Range × velocity × azimuth volumes, three outputs.
    Doppler,
}

/// Reference parameter budgets; the dense hidden width is chosen so the
/// total trainable count lands as close as possible to these.
const MATCHED_PARAM_BUDGET: usize = 13_374;
const DOPPLER_PARAM_BUDGET: usize = 143_299;

fn select_hidden(fixed: usize, per_hidden: usize, budget: usize) -> usize {
    (1..=256)
        .min_by_key(|h| (fixed + per_hidden * h).abs_diff(budget))
        .unwrap()
}

/// Affine map between physical labels and the [0, 1] training targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScale {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

impl LabelScale {
    pub fn from_grid(grid: &HeatmapGrid) -> Self {
        let (r_lo, r_hi) = grid.range_extent();
        let (a_lo, a_hi) = grid.azimuth_extent();
        let mut mins = vec![r_lo, a_lo];
        let mut maxs = vec![r_hi, a_hi];
        if let Some((v_lo, v_hi)) = grid.velocity_extent() {
            mins.push(v_lo);
            maxs.push(v_hi);
        }
        Self { mins, maxs }
    }

    pub fn dim(&self) -> usize {
        self.mins.len()
    }

    /// Per-coordinate loss weights that bias the normalized-space loss
    /// toward the Cartesian-meter error metric.
    ///
    /// The azimuth extent expressed as cross-range meters at mid-range
    /// (extent in degrees × π/180 × mid range) is ~20× the range extent,
    /// so a loss on normalized labels over-invests in range precision.
    /// Weighting strictly by the extent ratio over-corrects the other way:
    /// early in training the narrow hidden bottleneck allocates every unit
    /// to azimuth and the range head degenerates to predicting the mean, a
    /// plateau that also trips early stopping. The square root of the ratio
    /// is therefore floored at 0.5, which keeps roughly a fifth of the
    /// gradient energy on range — enough to train it reliably across
    /// initializations — while still letting azimuth dominate the
    /// objective. Velocity, when present, is judged in its own units and
    /// keeps weight 1.
    pub fn loss_weights(&self) -> Vec<f64> {
        let r_extent = self.maxs[0] - self.mins[0];
        let r_mid = 0.5 * (self.maxs[0] + self.mins[0]);
        let az_extent_m = (self.maxs[1] - self.mins[1]).to_radians() * r_mid;
        let denom = r_extent.max(az_extent_m).max(f64::MIN_POSITIVE);
        let mut w = vec![
            (r_extent / denom).sqrt().max(0.5).min(1.0),
            (az_extent_m / denom).sqrt().max(0.5).min(1.0),
        ];
        if self.dim() > 2 {
            w.push(1.0);
        }
        w
    }

    pub fn normalize(&self, label: &[f64]) -> Result<Vec<f64>> {
        if label.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "label has {} coordinates, scale expects {}",
                label.len(),
                self.dim()
            )));
        }
        Ok(label
            .iter()
            .zip(self.mins.iter().zip(self.maxs.iter()))
            .map(|(&x, (&lo, &hi))| (x - lo) / (hi - lo))
            .collect())
    }

    pub fn denormalize(&self, norm: &[f64]) -> Result<Vec<f64>> {
        if norm.len() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "prediction has {} coordinates, scale expects {}",
                norm.len(),
                self.dim()
            )));
        }
        Ok(norm
            .iter()
            .zip(self.mins.iter().zip(self.maxs.iter()))
            .map(|(&t, (&lo, &hi))| lo + t * (hi - lo))
            .collect())
    }
}

/// The regression network.
#[derive(Debug, Clone)]
pub struct CnnModel {
    pub kind: ModelKind,
    /// Input feature-map dims as (range, velocity, azimuth).
    pub input_dims: [usize; 3],
    pub hidden: usize,
    pub outputs: usize,
    pub scale: LabelScale,
    pub layers: Vec<Layer>,
}

struct Arch {
    k_vel: usize,
    k_az: usize,
    p_vel: usize,
    p_az: usize,
    outputs: usize,
    budget: usize,
}

impl ModelKind {
    fn arch(self) -> Arch {
        match self {
            ModelKind::Matched => Arch {
                k_vel: 1,
                k_az: 3,
                p_vel: 1,
                p_az: 2,
                outputs: 2,
                budget: MATCHED_PARAM_BUDGET,
            },
            ModelKind::Doppler => Arch {
                k_vel: 3,
                k_az: 3,
                p_vel: 2,
                p_az: 2,
                outputs: 3,
                budget: DOPPLER_PARAM_BUDGET,
            },
        }
    }
}

impl CnnModel {
    pub fn new(
        kind: ModelKind,
        input_dims: [usize; 3],
        scale: LabelScale,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let arch = kind.arch();
        if scale.dim() != arch.outputs {
            return Err(Error::InvalidConfig(format!(
                "label scale has {} coordinates, architecture outputs {}",
                scale.dim(),
                arch.outputs
            )));
        }
        let shrink = |d: [usize; 3]| -> Result<[usize; 3]> {
            if d[1] < arch.k_vel || d[2] < arch.k_az {
                return Err(Error::InvalidConfig(format!(
                    "input dims {input_dims:?} too small for the architecture"
                )));
            }
            Ok([
                d[0],
                (d[1] - arch.k_vel + 1) / arch.p_vel,
                (d[2] - arch.k_az + 1) / arch.p_az,
            ])
        };
        let d1 = shrink(input_dims)?;
        let d2 = shrink(d1)?;
        if d2.iter().any(|&d| d == 0) {
            return Err(Error::InvalidConfig(format!(
                "input dims {input_dims:?} collapse to zero after pooling"
            )));
        }
        let fc_in = 64 * d2[0] * d2[1] * d2[2];
        let conv1 = 32 * (arch.k_vel * arch.k_az) + 32;
        let conv2 = 64 * (32 * arch.k_vel * arch.k_az) + 64;
        let fixed = conv1 + 2 * 32 + conv2 + 2 * 64 + arch.outputs;
        let per_hidden = fc_in + 1 + arch.outputs;
        let hidden = select_hidden(fixed, per_hidden, arch.budget);

        let layers = vec![
            Layer::Conv(ConvLayer::new(1, 32, arch.k_vel, arch.k_az, rng)),
            Layer::Relu(ReluLayer::default()),
            Layer::BatchNorm(BatchNormLayer::new(32)),
            Layer::MaxPool(MaxPoolLayer::new(arch.p_vel, arch.p_az)),
            Layer::Conv(ConvLayer::new(32, 64, arch.k_vel, arch.k_az, rng)),
            Layer::Relu(ReluLayer::default()),
            Layer::BatchNorm(BatchNormLayer::new(64)),
            Layer::MaxPool(MaxPoolLayer::new(arch.p_vel, arch.p_az)),
            Layer::Flatten(FlattenLayer::default()),
            Layer::Dense(DenseLayer::new(fc_in, hidden, rng)),
            Layer::Relu(ReluLayer::default()),
            Layer::Dense(DenseLayer::new(hidden, arch.outputs, rng)),
        ];
        Ok(Self {
            kind,
            input_dims,
            hidden,
            outputs: arch.outputs,
            scale,
            layers,
        })
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in self.layers.iter_mut() {
            x = layer.forward(&x, mode)?;
        }
        Ok(x)
    }

    pub fn backward(&mut self, grad_out: &Tensor) -> Result<()> {
        let mut g = grad_out.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for layer in self.layers.iter_mut() {
            for p in layer.params_mut() {
                p.clear_grad();
            }
        }
    }

    /// Total parameter count, frozen layers included.
    pub fn count_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|p| p.len())
            .sum()
    }

    /// Parameter count over layers that still receive updates.
    pub fn count_trainable(&self) -> usize {
        self.layers
            .iter()
            .filter(|l| !l.is_frozen())
            .flat_map(|l| l.params())
            .map(|p| p.len())
            .sum()
    }

    /// Freeze every convolution and batch-norm layer (weights and running
    /// statistics); only the dense head keeps training.
    pub fn freeze_feature_layers(&mut self) {
        for layer in self.layers.iter_mut() {
            if matches!(layer, Layer::Conv(_) | Layer::BatchNorm(_)) {
                layer.set_frozen(true);
            }
        }
    }

    /// Inference pass; batch-norm uses running statistics.
    pub fn predict(&mut self, input: &Tensor) -> Result<Tensor> {
        self.forward(input, Mode::Infer)
    }

    /// Inference followed by the affine map back to physical coordinates.
    /// Returns one coordinate vector per batch row.
    pub fn predict_denormalized(&mut self, input: &Tensor) -> Result<Vec<Vec<f64>>> {
        let out = self.predict(input)?;
        let b = out.shape[0];
        (0..b)
            .map(|bi| self.scale.denormalize(&out.data[bi * self.outputs..(bi + 1) * self.outputs]))
            .collect()
    }
}

/// Mean euclidean-distance loss with its gradient:
/// L = (1/B) Σ_b ‖pred_b − truth_b‖₂. The subgradient at an exact hit is 0.
pub fn euclidean_loss(pred: &Tensor, truth: &Tensor) -> Result<(f64, Tensor)> {
    let d = if pred.shape.len() == 2 { pred.shape[1] } else { 0 };
    weighted_euclidean_loss(pred, truth, &vec![1.0; d])
}

/// Euclidean loss with per-coordinate weights:
/// L = (1/B) Σ_b ‖w ⊙ (pred_b − truth_b)‖₂.
///
/// The labels are normalized per coordinate, which erases the physical
/// scale differences between them; weighting the residuals restores the
/// proportions of the metric the estimates are judged by.
pub fn weighted_euclidean_loss(
    pred: &Tensor,
    truth: &Tensor,
    weights: &[f64],
) -> Result<(f64, Tensor)> {
    if pred.shape != truth.shape || pred.shape.len() != 2 {
        return Err(Error::DimensionMismatch(format!(
            "loss expects matching [B, D] tensors, got {:?} and {:?}",
            pred.shape, truth.shape
        )));
    }
    let (b, d) = (pred.shape[0], pred.shape[1]);
    if weights.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "loss weights have {} coordinates, predictions {}",
            weights.len(),
            d
        )));
    }
    let mut grad = Tensor::zeros(pred.shape.clone());
    let mut loss = 0.0;
    for bi in 0..b {
        let p = &pred.data[bi * d..(bi + 1) * d];
        let t = &truth.data[bi * d..(bi + 1) * d];
        let norm = p
            .iter()
            .zip(t.iter())
            .zip(weights.iter())
            .map(|((a, b), w)| (w * (a - b)).powi(2))
            .sum::<f64>()
            .sqrt();
        loss += norm;
        if norm > 0.0 {
            let g = &mut grad.data[bi * d..(bi + 1) * d];
            for i in 0..d {
                g[i] = weights[i] * weights[i] * (p[i] - t[i]) / (norm * b as f64);
            }
        }
    }
    Ok((loss / b as f64, grad))
}

/// Pack heatmap samples into an input batch and a normalized target batch.
///
/// Samples store velocity innermost; the network wants azimuth innermost,
/// so this transposes the trailing axes.
pub fn batch_from_samples(
    samples: &[&HeatmapSample],
    scale: &LabelScale,
) -> Result<(Tensor, Tensor)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidConfig("empty batch".into()))?;
    let (kappa, n_az, n_vel) = first.dims();
    let b = samples.len();
    let mut input = Tensor::zeros(vec![b, 1, kappa, n_vel, n_az]);
    let mut target = Tensor::zeros(vec![b, scale.dim()]);
    for (bi, s) in samples.iter().enumerate() {
        if s.dims() != (kappa, n_az, n_vel) {
            return Err(Error::DimensionMismatch(format!(
                "sample {bi} has dims {:?}, expected {:?}",
                s.dims(),
                (kappa, n_az, n_vel)
            )));
        }
        let base = bi * kappa * n_vel * n_az;
        for bin in 0..kappa {
            for v in 0..n_vel {
                for az in 0..n_az {
                    input.data[base + (bin * n_vel + v) * n_az + az] = s.at(bin, az, v);
                }
            }
        }
        let (r, a, vel) = s.label();
        let mut label = vec![r, a];
        if let Some(vm) = vel {
            label.push(vm);
        }
        let norm = scale.normalize(&label)?;
        target.data[bi * scale.dim()..(bi + 1) * scale.dim()].copy_from_slice(&norm);
    }
    Ok((input, target))
}
