use super::{NnError, Real, Result};

/// Row-wise softmax of a `batch x classes` matrix, stabilized by
/// subtracting each row's maximum.
pub fn softmax<T: Real>(logits: &[T], classes: usize) -> Vec<T> {
    let mut p = logits.to_vec();
    for row in p.chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum = sum + *v;
        }
        for v in row.iter_mut() {
            *v = *v / sum;
        }
    }
    p
}

/// Mean cross-entropy (nats) over the batch and its gradient with respect
/// to the logits, `(softmax - onehot) / batch`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], labels: &[usize], classes: usize) -> Result<(T, Vec<T>)> {
    if classes == 0 || logits.len() != labels.len() * classes {
        return Err(NnError::Shape {
            layer: "softmax".into(),
            expected: format!("{} x {classes} logits", labels.len()),
            actual: format!("{} values", logits.len()),
        });
    }
    let batch = labels.len();
    let inv = T::one() / T::of(batch as f64);
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(NnError::LabelOutOfRange { label, classes });
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let sum: T = row.iter().fold(T::zero(), |s, &v| s + (v - max).exp());
        let log_sum = sum.ln();
        // -log p[label] = log(sum) - (z_label - max)
        total += (log_sum - (row[label] - max)).f64();
        let g = &mut grad[b * classes..(b + 1) * classes];
        for (c, gv) in g.iter_mut().enumerate() {
            let p = (row[c] - max).exp() / sum;
            let target = if c == label { T::one() } else { T::zero() };
            *gv = (p - target) * inv;
        }
    }
    Ok((T::of(total / batch as f64), grad))
}
