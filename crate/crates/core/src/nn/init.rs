//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use super::tensor::{Real, Tensor};

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new(-limit, limit).expect("positive limit");
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::lit(dist.sample(rng))).collect();
    Tensor::from_vec(shape, data).expect("shape/product agree")
}

/// Orthogonal `rows x cols` matrix. The smaller dimension gets orthonormal
/// vectors: columns when rows >= cols, rows otherwise.
pub fn orthogonal<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    let (tall, short) = if rows >= cols {
        (rows, cols)
    } else {
        (cols, rows)
    };
    // column-major tall x short gaussian matrix
    let mut q: Vec<Vec<f64>> = (0..short)
        .map(|_| (0..tall).map(|_| StandardNormal.sample(rng)).collect())
        .collect();
    // Modified Gram-Schmidt. The sign convention (positive diagonal of R)
    // falls out of normalizing each column by its positive norm.
    for j in 0..short {
        for i in 0..j {
            let (done, rest) = q.split_at_mut(j);
            let dot: f64 = done[i].iter().zip(&rest[0]).map(|(a, b)| a * b).sum();
            for (v, u) in rest[0].iter_mut().zip(&done[i]) {
                *v -= dot * u;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in q[j].iter_mut() {
            *v /= norm;
        }
    }
    let mut data = vec![T::zero(); rows * cols];
    for (j, col) in q.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            if rows >= cols {
                data[i * cols + j] = T::lit(v);
            } else {
                data[j * cols + i] = T::lit(v);
            }
        }
    }
    Tensor::from_vec(&[rows, cols], data).expect("shape/product agree")
}
