use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::model::{Model, Variant};
use crate::parallel::par_map;
use crate::rng::{substream, Stream};

/// k-means restarts per frame.
pub const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 100;

/// Lowest mean squared distance to the nearest of `k` centres over
/// `restarts` k-means++ initialisations.
pub fn cluster_tightness(points: &[[f64; 2]], k: usize, restarts: usize, seed: u64) -> Result<f64> {
    if points.is_empty() || k == 0 || restarts == 0 {
        return Err(Error::input("k-means needs points, k >= 1 and a restart"));
    }
    let k = k.min(points.len());
    let mut best = f64::INFINITY;
    for r in 0..restarts {
        let mut rng = substream(seed, Stream::Cluster, r as u64);
        best = best.min(kmeans(points, k, &mut rng));
    }
    Ok(best)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn nearest(p: [f64; 2], centres: &[[f64; 2]]) -> (usize, f64) {
    centres
        .iter()
        .enumerate()
        .map(|(j, &c)| (j, dist2(p, c)))
        .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a })
}

fn kmeans<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> f64 {
    // k-means++ seeding
    let mut centres = vec![points[rng.random_range(0..points.len())]];
    let mut d2: Vec<f64> = points.iter().map(|&p| dist2(p, centres[0])).collect();
    while centres.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut chosen = points.len() - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    chosen = i;
                    break;
                }
                u -= d;
            }
            chosen
        } else {
            rng.random_range(0..points.len())
        };
        centres.push(points[pick]);
        for (d, &p) in d2.iter_mut().zip(points) {
            *d = d.min(dist2(p, points[pick]));
        }
    }
    let mut assign = vec![usize::MAX; points.len()];
    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (a, &p) in assign.iter_mut().zip(points) {
            let (j, _) = nearest(p, &centres);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![[0.0f64; 3]; k];
        for (&a, &p) in assign.iter().zip(points) {
            sums[a][0] += p[0];
            sums[a][1] += p[1];
            sums[a][2] += 1.0;
        }
        for (c, s) in centres.iter_mut().zip(&sums) {
            if s[2] > 0.0 {
                *c = [s[0] / s[2], s[1] / s[2]];
            }
        }
    }
    points.iter().map(|&p| nearest(p, &centres).1).sum::<f64>() / points.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameTightness {
    pub frame_id: usize,
    pub class_id: u16,
    pub snr_db: i16,
    pub phi_hat: f64,
    pub tightness_in: f64,
    pub tightness_out: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConstellationReport {
    pub frames: Vec<FrameTightness>,
    pub mean_in: f64,
    pub mean_out: f64,
}

/// Phase-corrected output for the frames `idx`, written as CSV
/// rows `(frame_id, sample_index, I_in, Q_in, I_out, Q_out, phi_hat)`,
/// with per-frame cluster tightness before and after the rotation.
pub fn export_constellation(
    model: &Model,
    data: &Dataset,
    idx: &[usize],
    path: Option<&Path>,
) -> Result<ConstellationReport> {
    if model.spec.variant != Variant::Full {
        return Err(Error::config(
            "constellation export needs the full model with a phase estimator",
        ));
    }
    if idx.is_empty() {
        return Err(Error::input("no frames selected"));
    }
    let (x, _) = data.batch(idx)?;
    let out = model.forward(&x)?;
    let l = data.length();
    let mut csv = String::from("frame_id,sample_index,i_in,q_in,i_out,q_out,phi_hat\n");
    let rows = par_map(idx.len(), |n| -> Result<FrameTightness> {
        let frame = &data.frames[idx[n]];
        let input = &x.data()[n * 2 * l..(n + 1) * 2 * l];
        let output = &out.transformed.data()[n * 2 * l..(n + 1) * 2 * l];
        let pts = |v: &[f32]| -> Vec<[f64; 2]> {
            (0..l).map(|s| [v[s] as f64, v[l + s] as f64]).collect()
        };
        let k = data.manifest.schemes[frame.class_id as usize].order();
        let seed = idx[n] as u64;
        Ok(FrameTightness {
            frame_id: idx[n],
            class_id: frame.class_id,
            snr_db: frame.snr_db,
            phi_hat: out.phi.data()[n] as f64,
            tightness_in: cluster_tightness(&pts(input), k, KMEANS_RESTARTS, seed)?,
            tightness_out: cluster_tightness(&pts(output), k, KMEANS_RESTARTS, seed)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    if let Some(path) = path {
        for (n, row) in rows.iter().enumerate() {
            let input = &x.data()[n * 2 * l..(n + 1) * 2 * l];
            let output = &out.transformed.data()[n * 2 * l..(n + 1) * 2 * l];
            for s in 0..l {
                writeln!(
                    csv,
                    "{},{},{},{},{},{},{}",
                    row.frame_id,
                    s,
                    input[s],
                    input[l + s],
                    output[s],
                    output[l + s],
                    out.phi.data()[n]
                )
                .expect("write to string");
            }
        }
        std::fs::write(path, csv)?;
    }
    let count = rows.len() as f64;
    let mean_in = rows.iter().map(|r| r.tightness_in).sum::<f64>() / count;
    let mean_out = rows.iter().map(|r| r.tightness_out).sum::<f64>() / count;
    Ok(ConstellationReport {
        frames: rows,
        mean_in,
        mean_out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tight_clusters_score_zero() {
        let pts = vec![[1.0, 1.0], [1.0, 1.0], [-1.0, -1.0], [-1.0, -1.0]];
        assert_eq!(cluster_tightness(&pts, 2, 3, 0).unwrap(), 0.0);
    }

    #[test]
    fn single_cluster_is_variance() {
        let pts = vec![[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]];
        assert!((cluster_tightness(&pts, 1, 1, 0).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn qpsk_corners_found() {
        let mut pts = Vec::new();
        for (cx, cy) in [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)] {
            for d in [-0.1, 0.1] {
                pts.push([cx + d, cy]);
                pts.push([cx, cy + d]);
            }
        }
        let t = cluster_tightness(&pts, 4, KMEANS_RESTARTS, 1).unwrap();
        assert!((t - 0.01).abs() < 1e-12, "{t}");
    }
}
