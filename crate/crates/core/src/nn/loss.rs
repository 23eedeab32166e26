use super::tensor::Tensor;
use crate::error::{shape_err, Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    let k = logits.cols();
    if k == 0 {
        return out;
    }
    for r in 0..logits.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, k) = (logits.rows(), logits.cols());
    if batch == 0 {
        return Err(Error::Empty("cross-entropy over an empty batch".into()));
    }
    if labels.len() != batch {
        return Err(shape_err("cross-entropy labels", batch, labels.len()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let mut grad = logits.clone();
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for (r, &y) in labels.iter().enumerate() {
        let row = grad.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        // -log softmax[y] = log(sum) - (z_y - max)
        loss += sum.ln() - (logits.row(r)[y] - max);
        for v in row.iter_mut() {
            *v = *v / sum * scale;
        }
        row[y] -= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean squared error over every element and its gradient.
pub fn mean_squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(shape_err(
            "mse operands",
            format!("{:?}", target.shape()),
            format!("{:?}", pred.shape()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::Empty("mse over zero elements".into()));
    }
    let n = pred.len() as f64;
    let mut grad = pred.clone();
    let mut loss = 0.0;
    for (g, t) in grad.data_mut().iter_mut().zip(target.data()) {
        let d = *g - t;
        loss += d * d;
        *g = 2.0 * d / n;
    }
    Ok((loss / n, grad))
}
