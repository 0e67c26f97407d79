//! On-disk dataset format.
//!
//! Layout (little-endian): magic `RLHM`, u32 version, u8 label dim,
//! u8 scenario tag, u64 global seed, u32 sample count, u32 train count,
//! three u32 tensor dims (κ, azimuth, velocity), then one record per
//! sample: u8 scenario, f64 mean output SCNR, u64 sample seed, the label
//! as f64, and the tensor values as f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::namf::{HeatmapMeta, HeatmapSample};
use crate::scenario::ScenarioId;

const MAGIC: &[u8; 4] = b"RLHM";
const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::BadDatasetFile(msg.into())
}

/// An in-memory dataset with its 90/10 split point.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub scenario_id: ScenarioId,
    pub global_seed: u64,
    /// Samples `0..train_count` are the training split.
    pub train_count: usize,
    pub samples: Vec<HeatmapSample>,
}

impl Dataset {
    pub fn dims(&self) -> (usize, usize, usize) {
        self.samples
            .first()
            .map(|s| s.dims())
            .unwrap_or((0, 0, 0))
    }

    pub fn label_dim(&self) -> usize {
        match self.samples.first() {
            Some(s) if s.label_velocity_mps.is_some() => 3,
            Some(_) => 2,
            None => 0,
        }
    }

    pub fn train_refs(&self) -> Vec<&HeatmapSample> {
        self.samples[..self.train_count].iter().collect()
    }

    pub fn validation_refs(&self) -> Vec<&HeatmapSample> {
        self.samples[self.train_count..].iter().collect()
    }

    /// Indices of the validation split within `samples` (these equal the
    /// generation indices, so returns can be re-synthesized from them).
    pub fn validation_indices(&self) -> std::ops::Range<usize> {
        self.train_count..self.samples.len()
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let (kappa, n_az, n_vel) = self.dims();
        let label_dim = self.label_dim();
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u8(label_dim as u8)?;
        w.write_u8(self.scenario_id.as_u8())?;
        w.write_u64::<LittleEndian>(self.global_seed)?;
        w.write_u32::<LittleEndian>(self.samples.len() as u32)?;
        w.write_u32::<LittleEndian>(self.train_count as u32)?;
        for d in [kappa, n_az, n_vel] {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for (i, s) in self.samples.iter().enumerate() {
            if s.dims() != (kappa, n_az, n_vel) {
                return Err(bad(format!("sample {i} dims differ from header")));
            }
            w.write_u8(s.meta.scenario_id.as_u8())?;
            w.write_f64::<LittleEndian>(s.meta.mean_output_scnr_db)?;
            w.write_u64::<LittleEndian>(s.meta.seed)?;
            w.write_f64::<LittleEndian>(s.label_range_m)?;
            w.write_f64::<LittleEndian>(s.label_azimuth_deg)?;
            if label_dim == 3 {
                let v = s
                    .label_velocity_mps
                    .ok_or_else(|| bad(format!("sample {i} missing velocity label")))?;
                w.write_f64::<LittleEndian>(v)?;
            }
            for &v in &s.values {
                w.write_f32::<LittleEndian>(v as f32)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
        if &magic != MAGIC {
            return Err(bad("bad magic bytes"));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let label_dim = r.read_u8()? as usize;
        if label_dim != 2 && label_dim != 3 {
            return Err(bad(format!("label dim {label_dim} not in {{2, 3}}")));
        }
        let scenario_id = ScenarioId::from_u8(r.read_u8()?)
            .ok_or_else(|| bad("unknown scenario tag"))?;
        let global_seed = r.read_u64::<LittleEndian>()?;
        let n_samples = r.read_u32::<LittleEndian>()? as usize;
        let train_count = r.read_u32::<LittleEndian>()? as usize;
        if train_count > n_samples {
            return Err(bad("train count exceeds sample count"));
        }
        let kappa = r.read_u32::<LittleEndian>()? as usize;
        let n_az = r.read_u32::<LittleEndian>()? as usize;
        let n_vel = r.read_u32::<LittleEndian>()? as usize;
        let cells = kappa
            .checked_mul(n_az)
            .and_then(|x| x.checked_mul(n_vel))
            .filter(|&c| c > 0 && c < (1 << 28))
            .ok_or_else(|| bad("implausible tensor dims"))?;
        if (label_dim == 3) != (n_vel > 1) {
            return Err(bad("label dim inconsistent with velocity dim"));
        }

        let mut samples = Vec::with_capacity(n_samples.min(1 << 20));
        for i in 0..n_samples {
            let trunc = |_| bad(format!("truncated at sample {i}"));
            let scen = ScenarioId::from_u8(r.read_u8().map_err(trunc)?)
                .ok_or_else(|| bad(format!("sample {i}: unknown scenario tag")))?;
            let scnr = r.read_f64::<LittleEndian>().map_err(trunc)?;
            let seed = r.read_u64::<LittleEndian>().map_err(trunc)?;
            let label_range_m = r.read_f64::<LittleEndian>().map_err(trunc)?;
            let label_azimuth_deg = r.read_f64::<LittleEndian>().map_err(trunc)?;
            let label_velocity_mps = if label_dim == 3 {
                Some(r.read_f64::<LittleEndian>().map_err(trunc)?)
            } else {
                None
            };
            let mut raw = vec![0.0f32; cells];
            r.read_f32_into::<LittleEndian>(&mut raw).map_err(trunc)?;
            samples.push(HeatmapSample {
                values: raw.into_iter().map(f64::from).collect(),
                kappa,
                n_azimuth: n_az,
                n_velocity: n_vel,
                label_range_m,
                label_azimuth_deg,
                label_velocity_mps,
                meta: HeatmapMeta {
                    scenario_id: scen,
                    mean_output_scnr_db: scnr,
                    seed,
                },
            });
        }
        let mut trailer = [0u8; 1];
        if r.read(&mut trailer)? != 0 {
            return Err(bad("trailing bytes after declared sample count"));
        }
        Ok(Self {
            scenario_id,
            global_seed,
            train_count,
            samples,
        })
    }

    pub fn write_to_path(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from_path(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}
