use super::dense::softmax_in_place;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Mean categorical cross-entropy of `softmax(logits)` against one-hot
/// labels, and its gradient w.r.t. the logits. The loss is evaluated in
/// `f64` whatever the logit precision.
pub fn softmax_cross_entropy<T: Real>(
    logits: &Tensor<T>,
    labels: &Tensor<T>,
) -> Result<(f64, Tensor<T>)> {
    if logits.rank() != 2 {
        return Err(Error::dim(format!(
            "logits must be [batch, C], got {:?}",
            logits.shape()
        )));
    }
    labels.expect_shape(logits.shape(), "labels")?;
    let (batch, classes) = (logits.shape()[0], logits.shape()[1]);
    let mut grad = logits.clone();
    let mut loss = 0.0f64;
    let scale = T::one() / T::lit(batch as f64);
    for (row, (g, y)) in grad
        .data_mut()
        .chunks_mut(classes)
        .zip(labels.data().chunks(classes))
        .enumerate()
    {
        let ones = y.iter().filter(|&&v| v == T::one()).count();
        let zeros = y.iter().filter(|&&v| v == T::zero()).count();
        if ones != 1 || ones + zeros != classes {
            return Err(Error::input(format!("label row {row} is not one-hot")));
        }
        let hot = y
            .iter()
            .position(|&v| v == T::one())
            .expect("one hot entry");
        // log-softmax via log-sum-exp for the loss
        let max = g
            .iter()
            .map(|v| v.as_f64())
            .fold(f64::NEG_INFINITY, f64::max);
        let lse = max + g.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - g[hot].as_f64();
        softmax_in_place(g);
        for (gv, &yv) in g.iter_mut().zip(y) {
            *gv = (*gv - yv) * scale;
        }
    }
    Ok((loss / batch as f64, grad))
}

/// One-hot rows for class indices.
pub fn one_hot<T: Real>(classes: &[usize], num_classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); classes.len() * num_classes];
    for (i, &c) in classes.iter().enumerate() {
        if c >= num_classes {
            return Err(Error::input(format!(
                "class {c} out of range for {num_classes} classes"
            )));
        }
        data[i * num_classes + c] = T::one();
    }
    Tensor::from_vec(&[classes.len(), num_classes], data)
}
