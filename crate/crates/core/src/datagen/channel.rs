//! Baseband channel: gain, carrier frequency and phase offset, AWGN.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pet::IQFrame;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Constant amplitude gain.
    pub gain: f64,
    /// Frequency offset in radians per sample.
    pub omega: f64,
    /// Phase offset in radians.
    pub phi: f64,
    /// Signal-to-noise ratio in dB; `None` is noiseless.
    pub snr_db: Option<f64>,
}

impl ChannelParams {
    pub fn identity() -> Self {
        ChannelParams {
            gain: 1.0,
            omega: 0.0,
            phi: 0.0,
            snr_db: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::input(format!(
                "channel gain {} must be positive",
                self.gain
            )));
        }
        if !self.omega.is_finite() || !self.phi.is_finite() {
            return Err(Error::input("channel offsets must be finite"));
        }
        if self.snr_db.is_some_and(|s| !s.is_finite()) {
            return Err(Error::input("SNR must be finite"));
        }
        Ok(())
    }
}

/// `y[l] = A e^{j(omega l + phi)} x[l] + n[l]` for `l = 0..L`, with complex
/// white Gaussian noise scaled to the measured power of the faded signal.
pub fn apply_channel<R: Rng + ?Sized>(
    x: &[Complex64],
    ch: &ChannelParams,
    rng: &mut R,
) -> Result<Vec<Complex64>> {
    ch.validate()?;
    if x.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
        return Err(Error::input("signal contains non-finite samples"));
    }
    let mut y: Vec<Complex64> = x
        .iter()
        .enumerate()
        .map(|(l, &s)| Complex64::from_polar(ch.gain, ch.omega * l as f64 + ch.phi) * s)
        .collect();
    if let Some(snr_db) = ch.snr_db {
        let power = y.iter().map(|c| c.norm_sqr()).sum::<f64>() / y.len().max(1) as f64;
        let sigma = (power * 10f64.powf(-snr_db / 10.0) / 2.0).sqrt();
        for c in &mut y {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            *c += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(y)
}

/// Split complex samples into a `2 x L` frame.
pub fn to_frame(samples: &[Complex64]) -> Result<IQFrame<f32>> {
    let i: Vec<f32> = samples.iter().map(|c| c.re as f32).collect();
    let q: Vec<f32> = samples.iter().map(|c| c.im as f32).collect();
    IQFrame::from_iq(&i, &q)
}
