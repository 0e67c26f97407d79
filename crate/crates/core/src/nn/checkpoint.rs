//! Binary checkpoint format for trained models.
//!
//! Layout (all little-endian):
//! magic `RLNN`, u32 version, u8 model kind, 3 × u32 input dims,
//! u32 hidden width, u32 outputs, label scale (u32 dim, then mins
//! and maxs as f64), u32 layer count, then one record per layer. Each
//! record starts with a u8 tag; parameterized layers carry a frozen flag
//! and their tensors as raw f64. Optimizer moments are not persisted —
//! resumed training restarts Adam fresh.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::layers::{
    BatchNormLayer, ConvLayer, DenseLayer, FlattenLayer, Layer, MaxPoolLayer, ReluLayer,
};
use super::{CnnModel, LabelScale, ModelKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"RLNN";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::BadCheckpointFile(msg.into())
}

fn write_f64s(w: &mut impl Write, data: &[f64]) -> Result<()> {
    for &v in data {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut out)?;
    Ok(out)
}

pub fn save<W: Write>(model: &CnnModel, w: &mut W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u8(match model.kind {
        ModelKind::Matched => 0,
        ModelKind::Doppler => 1,
    })?;
    for d in model.input_dims {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    w.write_u32::<LittleEndian>(model.hidden as u32)?;
    w.write_u32::<LittleEndian>(model.outputs as u32)?;
    w.write_u32::<LittleEndian>(model.scale.dim() as u32)?;
    write_f64s(w, &model.scale.mins)?;
    write_f64s(w, &model.scale.maxs)?;
    w.write_u32::<LittleEndian>(model.layers.len() as u32)?;
    for layer in &model.layers {
        match layer {
            Layer::Conv(l) => {
                w.write_u8(0)?;
                w.write_u8(l.frozen as u8)?;
                for d in [l.in_channels, l.out_channels, l.k_vel, l.k_az] {
                    w.write_u32::<LittleEndian>(d as u32)?;
                }
                write_f64s(w, &l.weight.data)?;
                write_f64s(w, &l.bias.data)?;
            }
            Layer::Relu(_) => w.write_u8(1)?,
            Layer::BatchNorm(l) => {
                w.write_u8(2)?;
                w.write_u8(l.frozen as u8)?;
                w.write_u32::<LittleEndian>(l.channels as u32)?;
                w.write_f64::<LittleEndian>(l.momentum)?;
                w.write_f64::<LittleEndian>(l.eps)?;
                write_f64s(w, &l.gamma.data)?;
                write_f64s(w, &l.beta.data)?;
                write_f64s(w, &l.running_mean)?;
                write_f64s(w, &l.running_var)?;
            }
            Layer::MaxPool(l) => {
                w.write_u8(3)?;
                w.write_u32::<LittleEndian>(l.p_vel as u32)?;
                w.write_u32::<LittleEndian>(l.p_az as u32)?;
            }
            Layer::Flatten(_) => w.write_u8(4)?,
            Layer::Dense(l) => {
                w.write_u8(5)?;
                w.write_u8(l.frozen as u8)?;
                w.write_u32::<LittleEndian>(l.in_features as u32)?;
                w.write_u32::<LittleEndian>(l.out_features as u32)?;
                write_f64s(w, &l.weight.data)?;
                write_f64s(w, &l.bias.data)?;
            }
        }
    }
    Ok(())
}

pub fn load<R: Read>(r: &mut R) -> Result<CnnModel> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic bytes"));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let kind = match r.read_u8()? {
        0 => ModelKind::Matched,
        1 => ModelKind::Doppler,
        k => return Err(bad(format!("unknown model kind {k}"))),
    };
    let mut input_dims = [0usize; 3];
    for d in input_dims.iter_mut() {
        *d = r.read_u32::<LittleEndian>()? as usize;
    }
    let hidden = r.read_u32::<LittleEndian>()? as usize;
    let outputs = r.read_u32::<LittleEndian>()? as usize;
    let scale_dim = r.read_u32::<LittleEndian>()? as usize;
    let scale = LabelScale {
        mins: read_f64s(r, scale_dim)?,
        maxs: read_f64s(r, scale_dim)?,
    };
    let n_layers = r.read_u32::<LittleEndian>()? as usize;
    if n_layers > 64 {
        return Err(bad(format!("implausible layer count {n_layers}")));
    }
    // Seeded construction just shapes the layers; every parameter is
    // overwritten from the file below.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.read_u8()?;
        layers.push(match tag {
            0 => {
                let frozen = r.read_u8()? != 0;
                let ic = r.read_u32::<LittleEndian>()? as usize;
                let oc = r.read_u32::<LittleEndian>()? as usize;
                let kv = r.read_u32::<LittleEndian>()? as usize;
                let ka = r.read_u32::<LittleEndian>()? as usize;
                let mut l = ConvLayer::new(ic, oc, kv, ka, &mut rng);
                l.frozen = frozen;
                l.weight.data = read_f64s(r, oc * ic * kv * ka)?;
                l.bias.data = read_f64s(r, oc)?;
                Layer::Conv(l)
            }
            1 => Layer::Relu(ReluLayer::default()),
            2 => {
                let frozen = r.read_u8()? != 0;
                let c = r.read_u32::<LittleEndian>()? as usize;
                let mut l = BatchNormLayer::new(c);
                l.frozen = frozen;
                l.momentum = r.read_f64::<LittleEndian>()?;
                l.eps = r.read_f64::<LittleEndian>()?;
                l.gamma.data = read_f64s(r, c)?;
                l.beta.data = read_f64s(r, c)?;
                l.running_mean = read_f64s(r, c)?;
                l.running_var = read_f64s(r, c)?;
                Layer::BatchNorm(l)
            }
            3 => {
                let pv = r.read_u32::<LittleEndian>()? as usize;
                let pa = r.read_u32::<LittleEndian>()? as usize;
                Layer::MaxPool(MaxPoolLayer::new(pv, pa))
            }
            4 => Layer::Flatten(FlattenLayer::default()),
            5 => {
                let frozen = r.read_u8()? != 0;
                let fin = r.read_u32::<LittleEndian>()? as usize;
                let fout = r.read_u32::<LittleEndian>()? as usize;
                let mut l = DenseLayer::new(fin, fout, &mut rng);
                l.frozen = frozen;
                l.weight.data = read_f64s(r, fout * fin)?;
                l.bias.data = read_f64s(r, fout)?;
                Layer::Dense(l)
            }
            t => return Err(bad(format!("unknown layer tag {t}"))),
        });
    }
    Ok(CnnModel {
        kind,
        input_dims,
        hidden,
        outputs,
        scale,
        layers,
    })
}

pub fn save_to_path(model: &CnnModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    save(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_from_path(path: &Path) -> Result<CnnModel> {
    let mut r = BufReader::new(File::open(path)?);
    load(&mut r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Mode;
    use crate::nn::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model() -> CnnModel {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let scale = LabelScale {
            mins: vec![14_538.0, 20.0],
            maxs: vec![14_688.0, 30.0],
        };
        let mut m = CnnModel::new(ModelKind::Matched, [5, 1, 26], scale, &mut rng).unwrap();
        // Touch the batch-norm running stats so they are non-trivial.
        let mut input = Tensor::zeros(vec![2, 1, 5, 1, 26]);
        for v in input.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let _ = m.forward(&input, Mode::Train).unwrap();
        m
    }

    #[test]
    fn round_trip_preserves_predictions_exactly() {
        let mut m = model();
        let mut bytes = Vec::new();
        save(&m, &mut bytes).unwrap();
        let mut back = load(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.kind, m.kind);
        assert_eq!(back.hidden, m.hidden);
        assert_eq!(back.scale, m.scale);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut input = Tensor::zeros(vec![3, 1, 5, 1, 26]);
        for v in input.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        let a = m.predict(&input).unwrap();
        let b = back.predict(&input).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn serialization_is_byte_stable() {
        let m = model();
        let mut a = Vec::new();
        let mut b = Vec::new();
        save(&m, &mut a).unwrap();
        save(&m, &mut b).unwrap();
        assert_eq!(a, b);
        // Save → load → save reproduces the same bytes.
        let back = load(&mut a.as_slice()).unwrap();
        let mut c = Vec::new();
        save(&back, &mut c).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn frozen_flags_survive_the_round_trip() {
        let mut m = model();
        m.freeze_feature_layers();
        let mut bytes = Vec::new();
        save(&m, &mut bytes).unwrap();
        let back = load(&mut bytes.as_slice()).unwrap();
        assert_eq!(back.count_trainable(), m.count_trainable());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = model();
        let mut bytes = Vec::new();
        save(&m, &mut bytes).unwrap();
        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(load(&mut corrupt.as_slice()).is_err());
        let truncated = &bytes[..bytes.len() / 2];
        assert!(load(&mut &truncated[..]).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.rlnn");
        let m = model();
        save_to_path(&m, &path).unwrap();
        let back = load_from_path(&path).unwrap();
        assert_eq!(back.count_params(), m.count_params());
    }
}
