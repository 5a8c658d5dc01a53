//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;

use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};
use crate::rng::{substream, Stream};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Perturbation size `h`.
    pub step: f64,
    /// Entries checked per tensor; `0` checks all of them. Larger tensors
    /// are sampled without replacement.
    pub max_entries: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-3,
            max_entries: 0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Probes dropped because `w + h` or `w - h` left the linear piece of
    /// the base point (piecewise checks only).
    pub skipped: usize,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)` over the
    /// checked entries.
    pub rel_error: f64,
    /// Largest single-entry absolute difference.
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheckReport {
    /// Worst relative error over all tensors.
    pub fn max_rel_error(&self) -> f64 {
        self.tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max)
    }
}

/// Compare the gradients already stored in `params` against
/// `(f(w + h) - f(w - h)) / 2h`, one entry at a time. Values are restored
/// after each probe.
pub fn finite_difference_gradcheck<T: Real, R: Real, F>(
    mut f: F,
    params: &mut ParamStore<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<T>) -> Result<R>,
{
    run(|p| Ok((f(p)?, ())), params, opts)
}

/// Like [`finite_difference_gradcheck`] for piecewise-smooth functions. `f`
/// also returns a pattern identifying the smooth piece (for instance the
/// ReLU activation states); probes whose `w + h` or `w - h` pattern differs
/// from the base point straddle a kink and are skipped.
pub fn finite_difference_gradcheck_piecewise<T: Real, R: Real, P: PartialEq, F>(
    f: F,
    params: &mut ParamStore<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<T>) -> Result<(R, P)>,
{
    run(f, params, opts)
}

fn run<T: Real, R: Real, P: PartialEq, F>(
    mut f: F,
    params: &mut ParamStore<T>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<T>) -> Result<(R, P)>,
{
    if opts.step.is_nan() || opts.step <= 0.0 {
        return Err(Error::input(format!(
            "finite-difference step must be positive, got {}",
            opts.step
        )));
    }
    let h = T::lit(opts.step);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    let mut tensors = Vec::with_capacity(names.len());
    if names.is_empty() {
        return Ok(GradCheckReport { tensors });
    }
    let (_, base) = f(params)?;
    for (ti, name) in names.iter().enumerate() {
        let n = params.get(name)?.value.len();
        let idx: Vec<usize> = if opts.max_entries == 0 || opts.max_entries >= n {
            (0..n).collect()
        } else {
            let mut rng = substream(opts.seed, Stream::GradCheck, ti as u64);
            let mut v = sample(&mut rng, n, opts.max_entries).into_vec();
            v.sort_unstable();
            v
        };
        let (mut diff2, mut ana2, mut num2, mut max_abs) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
        let (mut checked, mut skipped) = (0, 0);
        for &i in &idx {
            let orig = params.get(name)?.value.data()[i];
            params.get_mut(name)?.value.data_mut()[i] = orig + h;
            let (plus, plus_piece) = f(params)?;
            params.get_mut(name)?.value.data_mut()[i] = orig - h;
            let (minus, minus_piece) = f(params)?;
            params.get_mut(name)?.value.data_mut()[i] = orig;
            if plus_piece != base || minus_piece != base {
                skipped += 1;
                continue;
            }
            let numeric = (plus.as_f64() - minus.as_f64()) / (2.0 * opts.step);
            let analytic = params.get(name)?.grad.data()[i].as_f64();
            let d = analytic - numeric;
            diff2 += d * d;
            ana2 += analytic * analytic;
            num2 += numeric * numeric;
            max_abs = max_abs.max(d.abs());
            checked += 1;
        }
        let scale = ana2.sqrt().max(num2.sqrt());
        let rel_error = if scale == 0.0 {
            0.0
        } else {
            diff2.sqrt() / scale
        };
        tensors.push(TensorCheck {
            name: name.clone(),
            checked,
            skipped,
            rel_error,
            max_abs_diff: max_abs,
        });
    }
    Ok(GradCheckReport { tensors })
}
