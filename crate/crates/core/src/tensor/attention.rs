//! Scaled dot-product attention with Q = K = V.
//!
//! No learned projections: the input rows are used directly as queries,
//! keys, and values, and the key dimension is the row width.

/// `x` is an N×d matrix in row-major order. Returns the N×d attention
/// output where row i is the softmax(x·xᵀ/√d)-weighted sum of rows.
pub fn scaled_dot_attention(x: &[f64], n: usize, d: usize) -> Vec<f64> {
    scaled_dot_attention_with_weights(x, n, d).0
}

/// Variant that also returns the N×N row-stochastic weight matrix.
pub fn scaled_dot_attention_with_weights(x: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1 && d >= 1, "attention input must be at least 1x1");
    assert_eq!(x.len(), n * d);
    let scale = 1.0 / (d as f64).sqrt();

    let mut weights = vec![0.0; n * n];
    let mut out = vec![0.0; n * d];
    let mut logits = vec![0.0; n];
    for i in 0..n {
        let q = &x[i * d..(i + 1) * d];
        let mut max_logit = f64::NEG_INFINITY;
        for j in 0..n {
            let k = &x[j * d..(j + 1) * d];
            let dot: f64 = q.iter().zip(k).map(|(a, b)| a * b).sum();
            let l = dot * scale;
            logits[j] = l;
            if l > max_logit {
                max_logit = l;
            }
        }
        // softmax with max subtraction for overflow safety
        let mut denom = 0.0;
        for j in 0..n {
            let e = (logits[j] - max_logit).exp();
            weights[i * n + j] = e;
            denom += e;
        }
        for j in 0..n {
            let w = weights[i * n + j] / denom;
            weights[i * n + j] = w;
            let v = &x[j * d..(j + 1) * d];
            for (o, vv) in out[i * d..(i + 1) * d].iter_mut().zip(v) {
                *o += w * vv;
            }
        }
    }
    (out, weights)
}
