//! Synthetic labelled I/Q datasets over a (scheme, SNR) grid.

mod channel;
mod format;
mod modulation;

pub use channel::{apply_channel, to_frame, ChannelParams};
pub use format::{
    decode_dataset, encode_dataset, read_dataset, write_dataset, AMRD_MAGIC, AMRD_VERSION,
};
pub use modulation::{modulate, ModulationScheme, PulseShape, Waveform, FSK_INDEX, GFSK_BT};

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::parallel::par_map;
use crate::pet::IQFrame;
use crate::rng::{substream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainModel {
    Constant,
    /// Rayleigh amplitude with unit mean power, drawn once per frame.
    Rayleigh,
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schemes: Vec<ModulationScheme>,
    pub length: usize,
    pub snr_db: Vec<i16>,
    pub frames_per_cell: usize,
    pub seed: u64,
    pub waveform: Waveform,
    /// Frequency offsets are drawn from `[-omega_max, omega_max]`.
    pub omega_max: f64,
    /// Draw a uniform phase offset in `[-pi, pi)` per frame.
    pub random_phase: bool,
    pub gain: GainModel,
}

impl Default for DatasetManifest {
    fn default() -> Self {
        DatasetManifest {
            schemes: ModulationScheme::ALL.to_vec(),
            length: 128,
            snr_db: (-20..=18).step_by(2).collect(),
            frames_per_cell: 200,
            seed: 0,
            waveform: Waveform::default(),
            omega_max: 0.01,
            random_phase: true,
            gain: GainModel::Constant,
        }
    }
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() || self.snr_db.is_empty() || self.frames_per_cell == 0 {
            return Err(Error::config("dataset must request at least one frame"));
        }
        let mut seen = self.schemes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.schemes.len() {
            return Err(Error::config("duplicate modulation scheme"));
        }
        if self.schemes.len() > u16::MAX as usize {
            return Err(Error::config("too many classes"));
        }
        if self.length == 0 {
            return Err(Error::config("frame length must be positive"));
        }
        if !(self.omega_max >= 0.0 && self.omega_max.is_finite()) {
            return Err(Error::config("omega_max must be finite and non-negative"));
        }
        self.waveform.validate()
    }

    pub fn num_classes(&self) -> usize {
        self.schemes.len()
    }

    pub fn total_frames(&self) -> usize {
        self.schemes.len() * self.snr_db.len() * self.frames_per_cell
    }

    pub fn class_names(&self) -> Vec<String> {
        self.schemes.iter().map(|s| s.name().to_string()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub iq: IQFrame<f32>,
    pub class_id: u16,
    pub snr_db: i16,
    /// Channel draw, known for freshly generated frames only.
    pub channel: Option<ChannelParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub frames: Vec<Frame>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.num_classes()
    }

    pub fn length(&self) -> usize {
        self.manifest.length
    }

    /// Frame count per (class, SNR) cell.
    pub fn histogram(&self) -> BTreeMap<(u16, i16), usize> {
        let mut h = BTreeMap::new();
        for f in &self.frames {
            *h.entry((f.class_id, f.snr_db)).or_insert(0) += 1;
        }
        h
    }

    /// Frames agree with the manifest grid and frame length.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if self.frames.len() != m.total_frames() {
            return Err(Error::input(format!(
                "dataset holds {} frames, manifest expects {}",
                self.frames.len(),
                m.total_frames()
            )));
        }
        for f in &self.frames {
            if f.iq.len() != m.length || f.class_id as usize >= m.num_classes() {
                return Err(Error::input("frame does not match the manifest"));
            }
        }
        let h = self.histogram();
        for c in 0..m.num_classes() as u16 {
            for &s in &m.snr_db {
                if h.get(&(c, s)).copied().unwrap_or(0) != m.frames_per_cell {
                    return Err(Error::input(format!(
                        "cell (class {c}, {s} dB) does not hold {} frames",
                        m.frames_per_cell
                    )));
                }
            }
        }
        Ok(())
    }

    /// Stack selected frames into a `[n, 2, L]` batch with their labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor<f32>, Vec<usize>)> {
        let l = self.length();
        let mut data = Vec::with_capacity(indices.len() * 2 * l);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let f = self
                .frames
                .get(i)
                .ok_or_else(|| Error::input(format!("frame index {i} out of range")))?;
            data.extend_from_slice(f.iq.samples().data());
            labels.push(f.class_id as usize);
        }
        Ok((Tensor::from_vec(&[indices.len(), 2, l], data)?, labels))
    }
}

/// Position of frame `index` in the (class, SNR, repeat) grid.
fn cell_of(m: &DatasetManifest, index: usize) -> (usize, usize) {
    let per_class = m.snr_db.len() * m.frames_per_cell;
    (index / per_class, (index % per_class) / m.frames_per_cell)
}

/// Generate frame `index` of the manifest grid. Each frame draws from its
/// own substream, so frames do not depend on generation order.
pub fn synth_frame(m: &DatasetManifest, index: usize) -> Result<Frame> {
    let (class, snr_idx) = cell_of(m, index);
    let scheme = m.schemes[class];
    let snr = m.snr_db[snr_idx];
    let mut rng = substream(m.seed, Stream::Datagen, index as u64);
    let n_sym = m.waveform.symbols_for(scheme, m.length);
    let symbols: Vec<usize> = (0..n_sym)
        .map(|_| rng.random_range(0..scheme.order()))
        .collect();
    let x = modulate(scheme, &symbols, &m.waveform, m.length)?;
    let phi = if m.random_phase {
        rng.random_range(-PI..PI)
    } else {
        0.0
    };
    let omega = if m.omega_max > 0.0 {
        rng.random_range(-m.omega_max..=m.omega_max)
    } else {
        0.0
    };
    let gain = match m.gain {
        GainModel::Constant => 1.0,
        GainModel::Rayleigh => {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            (0.5 * (a * a + b * b)).sqrt().max(f64::MIN_POSITIVE)
        }
    };
    let channel = ChannelParams {
        gain,
        omega,
        phi,
        snr_db: Some(snr as f64),
    };
    let y = apply_channel(&x, &channel, &mut rng)?;
    Ok(Frame {
        iq: to_frame(&y)?,
        class_id: class as u16,
        snr_db: snr,
        channel: Some(channel),
    })
}

/// Every frame of the manifest grid, ordered class-major, then SNR, then
/// repeat.
pub fn synth_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let frames = par_map(manifest.total_frames(), |i| synth_frame(manifest, i))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        manifest: manifest.clone(),
        frames,
    })
}
