//! Baseband modulators: Gray-mapped linear constellations with rectangular
//! or root-raised-cosine pulses, and continuous-phase binary FSK.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModulationScheme {
    #[serde(rename = "BPSK")]
    Bpsk,
    #[serde(rename = "QPSK")]
    Qpsk,
    #[serde(rename = "8PSK")]
    Psk8,
    #[serde(rename = "PAM4")]
    Pam4,
    #[serde(rename = "QAM16")]
    Qam16,
    #[serde(rename = "QAM64")]
    Qam64,
    #[serde(rename = "GFSK")]
    Gfsk,
    #[serde(rename = "CPFSK")]
    Cpfsk,
}

/// Modulation index shared by both FSK schemes.
pub const FSK_INDEX: f64 = 0.5;
/// Bandwidth-time product of the GFSK Gaussian filter.
pub const GFSK_BT: f64 = 0.35;
/// Gaussian filter span in symbols.
const GFSK_SPAN: usize = 4;

impl ModulationScheme {
    pub const ALL: [ModulationScheme; 8] = [
        ModulationScheme::Bpsk,
        ModulationScheme::Qpsk,
        ModulationScheme::Psk8,
        ModulationScheme::Pam4,
        ModulationScheme::Qam16,
        ModulationScheme::Qam64,
        ModulationScheme::Gfsk,
        ModulationScheme::Cpfsk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModulationScheme::Bpsk => "BPSK",
            ModulationScheme::Qpsk => "QPSK",
            ModulationScheme::Psk8 => "8PSK",
            ModulationScheme::Pam4 => "PAM4",
            ModulationScheme::Qam16 => "QAM16",
            ModulationScheme::Qam64 => "QAM64",
            ModulationScheme::Gfsk => "GFSK",
            ModulationScheme::Cpfsk => "CPFSK",
        }
    }

    /// Alphabet size.
    pub fn order(self) -> usize {
        match self {
            ModulationScheme::Bpsk | ModulationScheme::Gfsk | ModulationScheme::Cpfsk => 2,
            ModulationScheme::Qpsk | ModulationScheme::Pam4 => 4,
            ModulationScheme::Psk8 => 8,
            ModulationScheme::Qam16 => 16,
            ModulationScheme::Qam64 => 64,
        }
    }

    pub fn is_linear(self) -> bool {
        !matches!(self, ModulationScheme::Gfsk | ModulationScheme::Cpfsk)
    }

    /// Unit-average-power constellation indexed by symbol value, or `None`
    /// for the FSK schemes.
    pub fn constellation(self) -> Option<Vec<Complex64>> {
        let points = match self {
            ModulationScheme::Bpsk => vec![Complex64::new(1.0, 0.0), Complex64::new(-1.0, 0.0)],
            ModulationScheme::Qpsk => (0..4)
                .map(|s| {
                    let re = if s & 1 == 0 { 1.0 } else { -1.0 };
                    let im = if s & 2 == 0 { 1.0 } else { -1.0 };
                    Complex64::new(re, im) / SQRT_2
                })
                .collect(),
            ModulationScheme::Psk8 => {
                let mut pts = vec![Complex64::default(); 8];
                for pos in 0..8 {
                    pts[gray(pos)] = Complex64::from_polar(1.0, 2.0 * PI * pos as f64 / 8.0);
                }
                pts
            }
            ModulationScheme::Pam4 => {
                let levels = gray_levels(4);
                let norm = 5f64.sqrt();
                levels
                    .iter()
                    .map(|&a| Complex64::new(a / norm, 0.0))
                    .collect()
            }
            ModulationScheme::Qam16 => square_qam(4),
            ModulationScheme::Qam64 => square_qam(8),
            ModulationScheme::Gfsk | ModulationScheme::Cpfsk => return None,
        };
        Some(points)
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModulationScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        ModulationScheme::ALL
            .into_iter()
            .find(|m| m.name() == up || (up == "PSK8" && *m == ModulationScheme::Psk8))
            .ok_or_else(|| Error::config(format!("unknown modulation scheme `{s}`")))
    }
}

fn gray(n: usize) -> usize {
    n ^ (n >> 1)
}

/// Amplitude levels `-(m-1), ..., m-1` indexed by Gray label.
fn gray_levels(m: usize) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for pos in 0..m {
        out[gray(pos)] = (2 * pos) as f64 - (m - 1) as f64;
    }
    out
}

fn square_qam(side: usize) -> Vec<Complex64> {
    let levels = gray_levels(side);
    let bits = side.trailing_zeros();
    // mean of a^2 over the levels, for each axis
    let axis_power = levels.iter().map(|a| a * a).sum::<f64>() / side as f64;
    let norm = (2.0 * axis_power).sqrt();
    (0..side * side)
        .map(|s| Complex64::new(levels[s & (side - 1)], levels[s >> bits]) / norm)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PulseShape {
    Rect,
    /// Root-raised cosine spanning `span` symbols.
    Rrc {
        rolloff: f64,
        span: usize,
    },
}

/// Pulse shape and oversampling shared by every scheme in a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples_per_symbol: usize,
    pub pulse: PulseShape,
}

impl Default for Waveform {
    fn default() -> Self {
        Waveform {
            samples_per_symbol: 4,
            pulse: PulseShape::Rect,
        }
    }
}

impl Waveform {
    /// Root-raised cosine, roll-off 0.35, 8 samples per symbol.
    pub fn rrc() -> Self {
        Waveform {
            samples_per_symbol: 8,
            pulse: PulseShape::Rrc {
                rolloff: 0.35,
                span: 8,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples_per_symbol == 0 {
            return Err(Error::config("samples per symbol must be at least 1"));
        }
        if let PulseShape::Rrc { rolloff, span } = self.pulse {
            if !(rolloff > 0.0 && rolloff <= 1.0) || span == 0 {
                return Err(Error::config(
                    "RRC needs roll-off in (0, 1] and a nonzero span",
                ));
            }
        }
        Ok(())
    }

    /// Filter transient, in samples, discarded before the output window.
    fn delay(&self, scheme: ModulationScheme) -> usize {
        let sps = self.samples_per_symbol;
        match (scheme.is_linear(), self.pulse) {
            (true, PulseShape::Rect) => 0,
            (true, PulseShape::Rrc { span, .. }) => span * sps,
            (false, _) if scheme == ModulationScheme::Gfsk => GFSK_SPAN * sps,
            (false, _) => 0,
        }
    }

    /// Symbols needed to produce `length` output samples.
    pub fn symbols_for(&self, scheme: ModulationScheme, length: usize) -> usize {
        (length + self.delay(scheme)).div_ceil(self.samples_per_symbol)
    }
}

/// Map symbols to `length` complex baseband samples.
pub fn modulate(
    scheme: ModulationScheme,
    symbols: &[usize],
    waveform: &Waveform,
    length: usize,
) -> Result<Vec<Complex64>> {
    waveform.validate()?;
    let order = scheme.order();
    if let Some(&bad) = symbols.iter().find(|&&s| s >= order) {
        return Err(Error::input(format!(
            "symbol {bad} out of range for {scheme} (order {order})"
        )));
    }
    let needed = waveform.symbols_for(scheme, length);
    if symbols.len() < needed {
        return Err(Error::input(format!(
            "{scheme} needs {needed} symbols for {length} samples, got {}",
            symbols.len()
        )));
    }
    let sps = waveform.samples_per_symbol;
    let delay = waveform.delay(scheme);
    let out = match scheme.constellation() {
        Some(points) => {
            let pts: Vec<Complex64> = symbols.iter().map(|&s| points[s]).collect();
            match waveform.pulse {
                PulseShape::Rect => pts
                    .iter()
                    .flat_map(|&p| std::iter::repeat_n(p, sps))
                    .collect::<Vec<_>>(),
                PulseShape::Rrc { rolloff, span } => {
                    let taps = rrc_taps(rolloff, span, sps);
                    let mut up = vec![Complex64::default(); pts.len() * sps];
                    for (k, &p) in pts.iter().enumerate() {
                        up[k * sps] = p;
                    }
                    convolve(&up, &taps, delay + length)
                }
            }
        }
        None => {
            let nrz: Vec<f64> = symbols
                .iter()
                .flat_map(|&s| std::iter::repeat_n(if s == 0 { 1.0 } else { -1.0 }, sps))
                .collect();
            let freq = if scheme == ModulationScheme::Gfsk {
                let taps = gaussian_taps(GFSK_BT, GFSK_SPAN, sps);
                convolve_real(&nrz, &taps, delay + length)
            } else {
                nrz
            };
            let step = PI * FSK_INDEX / sps as f64;
            let mut theta = 0.0;
            freq.iter()
                .map(|&f| {
                    let s = Complex64::from_polar(1.0, theta);
                    theta += step * f;
                    s
                })
                .collect()
        }
    };
    Ok(out[delay..delay + length].to_vec())
}

/// Root-raised-cosine taps over `span` symbols, scaled so that unit-power
/// symbols give unit-power output.
fn rrc_taps(beta: f64, span: usize, sps: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (span * sps) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            if t.abs() < 1e-12 {
                1.0 - beta + 4.0 * beta / PI
            } else if (t.abs() - 1.0 / (4.0 * beta)).abs() < 1e-12 {
                beta / SQRT_2
                    * ((1.0 + 2.0 / PI) * (PI / (4.0 * beta)).sin()
                        + (1.0 - 2.0 / PI) * (PI / (4.0 * beta)).cos())
            } else {
                let num =
                    (PI * t * (1.0 - beta)).sin() + 4.0 * beta * t * (PI * t * (1.0 + beta)).cos();
                num / (PI * t * (1.0 - (4.0 * beta * t).powi(2)))
            }
        })
        .collect();
    let energy: f64 = taps.iter().map(|h| h * h).sum();
    let scale = (sps as f64 / energy).sqrt();
    taps.iter_mut().for_each(|h| *h *= scale);
    taps
}

/// Gaussian frequency-shaping filter normalized to unit DC gain.
fn gaussian_taps(bt: f64, span: usize, sps: usize) -> Vec<f64> {
    let n = span * sps + 1;
    let mid = (span * sps) as f64 / 2.0;
    let a = 2.0 * PI * PI * bt * bt / 2f64.ln();
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let t = (i as f64 - mid) / sps as f64;
            (-a * t * t).exp()
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|h| *h /= sum);
    taps
}

/// First `len` samples of the full convolution.
fn convolve(x: &[Complex64], h: &[f64], len: usize) -> Vec<Complex64> {
    (0..len)
        .map(|n| {
            let lo = (n + 1).saturating_sub(h.len());
            (lo..=n.min(x.len().saturating_sub(1)))
                .map(|k| x[k] * h[n - k])
                .sum()
        })
        .collect()
}

fn convolve_real(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| {
            let lo = (n + 1).saturating_sub(h.len());
            (lo..=n.min(x.len().saturating_sub(1)))
                .map(|k| x[k] * h[n - k])
                .sum()
        })
        .collect()
}
