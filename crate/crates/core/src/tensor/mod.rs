//! Dense C×H×W value grids with validity masks, plus the small set of
//! neural ops the fusion networks need: convolution, inference-mode batch
//! normalization, ReLU/Sigmoid, and scaled dot-product attention.
//!
//! Everything here is double precision and pure; single precision appears
//! only at serialization time (see the `wire` module).

mod attention;
pub mod tape;

pub use attention::{scaled_dot_attention, scaled_dot_attention_with_weights};

use crate::error::{CoreError, Result};

/// Dense C×H×W map with a per-cell validity mask.
///
/// Values are row-major in (channel, row, column) order. A cell's validity
/// is shared by all channels: `true` means the cell carries sensor-derived
/// data, `false` means padding (e.g. out-of-range cells after warping).
#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
    validity: Vec<bool>,
}

impl GridMap {
    /// All-zero map, every cell valid.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        GridMap {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
            validity: vec![true; height * width],
        }
    }

    pub fn from_values(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(CoreError::rejected(format!(
                "value buffer length {} does not match {channels}x{height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::rejected("non-finite value in grid map"));
        }
        Ok(GridMap {
            channels,
            height,
            width,
            values,
            validity: vec![true; height * width],
        })
    }

    pub fn with_validity(mut self, validity: Vec<bool>) -> Result<Self> {
        if validity.len() != self.height * self.width {
            return Err(CoreError::rejected(format!(
                "validity length {} does not match {}x{}",
                validity.len(),
                self.height,
                self.width
            )));
        }
        self.validity = validity;
        Ok(self)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cell_count(&self) -> usize {
        self.height * self.width
    }

    pub fn same_shape(&self, other: &GridMap) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn value(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.values[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, v: f64) {
        let i = self.index(channel, row, col);
        self.values[i] = v;
    }

    #[inline]
    pub fn is_valid(&self, row: usize, col: usize) -> bool {
        self.validity[row * self.width + col]
    }

    pub fn set_valid(&mut self, row: usize, col: usize, valid: bool) {
        self.validity[row * self.width + col] = valid;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn validity(&self) -> &[bool] {
        &self.validity
    }

    /// Number of valid cells.
    pub fn valid_count(&self) -> usize {
        self.validity.iter().filter(|v| **v).count()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Parameters of a same-padding 2D convolution.
///
/// Weight layout is `[out][in][ky][kx]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvParams {
    pub fn new(
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
        weights: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel != 1 && kernel != 3 {
            return Err(CoreError::rejected(format!(
                "kernel size {kernel} unsupported (expected 1 or 3)"
            )));
        }
        if weights.len() != out_channels * in_channels * kernel * kernel {
            return Err(CoreError::rejected(format!(
                "weight length {} does not match {out_channels}x{in_channels}x{kernel}x{kernel}",
                weights.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(CoreError::rejected(format!(
                "bias length {} does not match {out_channels} output channels",
                bias.len()
            )));
        }
        if weights.iter().chain(bias.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::rejected("non-finite convolution parameter"));
        }
        Ok(ConvParams {
            kernel,
            in_channels,
            out_channels,
            weights,
            bias,
        })
    }

    /// Zero-weight, zero-bias parameters.
    pub fn zeros(kernel: usize, in_channels: usize, out_channels: usize) -> Result<Self> {
        ConvParams::new(
            kernel,
            in_channels,
            out_channels,
            vec![0.0; out_channels * in_channels * kernel * kernel],
            vec![0.0; out_channels],
        )
    }

    #[inline]
    pub fn weight_index(&self, out: usize, inp: usize, ky: usize, kx: usize) -> usize {
        ((out * self.in_channels + inp) * self.kernel + ky) * self.kernel + kx
    }
}

/// Inference-mode batch normalization parameters (per channel).
#[derive(Debug, Clone, PartialEq)]
pub struct BNParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub epsilon: f64,
}

impl BNParams {
    pub fn new(
        gamma: Vec<f64>,
        beta: Vec<f64>,
        mean: Vec<f64>,
        variance: Vec<f64>,
        epsilon: f64,
    ) -> Result<Self> {
        let c = gamma.len();
        if beta.len() != c || mean.len() != c || variance.len() != c {
            return Err(CoreError::rejected(
                "batch norm parameter arrays must all have the channel length",
            ));
        }
        if variance.iter().any(|v| *v < 0.0) {
            return Err(CoreError::rejected("negative batch norm variance"));
        }
        if epsilon <= 0.0 {
            return Err(CoreError::rejected("batch norm epsilon must be positive"));
        }
        Ok(BNParams {
            gamma,
            beta,
            mean,
            variance,
            epsilon,
        })
    }

    /// Identity transform: gamma 1, beta 0, mean 0, variance 1.
    pub fn identity(channels: usize, epsilon: f64) -> Self {
        BNParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            variance: vec![1.0; channels],
            epsilon,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Same-padding cross-correlation. Output shape is `out_channels`×H×W;
/// the validity mask is passed through unchanged.
pub fn conv2d(input: &GridMap, p: &ConvParams) -> Result<GridMap> {
    if input.channels != p.in_channels {
        return Err(CoreError::rejected(format!(
            "conv2d input has {} channels, params expect {}",
            input.channels, p.in_channels
        )));
    }
    let (h, w) = (input.height, input.width);
    let mut values = vec![0.0; p.out_channels * h * w];
    conv2d_raw(
        &input.values, h, w, p, &mut values,
    );
    Ok(GridMap {
        channels: p.out_channels,
        height: h,
        width: w,
        values,
        validity: input.validity.clone(),
    })
}

/// Flat-buffer core of `conv2d`, shared with the autodiff tape.
pub(crate) fn conv2d_raw(input: &[f64], h: usize, w: usize, p: &ConvParams, out: &mut [f64]) {
    let pad = p.kernel / 2;
    for o in 0..p.out_channels {
        for r in 0..h {
            for c in 0..w {
                let mut acc = p.bias[o];
                for i in 0..p.in_channels {
                    for ky in 0..p.kernel {
                        let rr = r as isize + ky as isize - pad as isize;
                        if rr < 0 || rr >= h as isize {
                            continue;
                        }
                        for kx in 0..p.kernel {
                            let cc = c as isize + kx as isize - pad as isize;
                            if cc < 0 || cc >= w as isize {
                                continue;
                            }
                            acc += p.weights[p.weight_index(o, i, ky, kx)]
                                * input[(i * h + rr as usize) * w + cc as usize];
                        }
                    }
                }
                out[(o * h + r) * w + c] = acc;
            }
        }
    }
}

/// Per-channel affine normalization: `(x - mean) / sqrt(var + eps) * gamma + beta`.
pub fn batchnorm_infer(input: &GridMap, p: &BNParams) -> Result<GridMap> {
    if input.channels != p.channels() {
        return Err(CoreError::rejected(format!(
            "batchnorm input has {} channels, params expect {}",
            input.channels,
            p.channels()
        )));
    }
    let mut out = input.clone();
    let hw = input.height * input.width;
    for c in 0..input.channels {
        let inv = 1.0 / (p.variance[c] + p.epsilon).sqrt();
        for i in 0..hw {
            let x = input.values[c * hw + i];
            out.values[c * hw + i] = (x - p.mean[c]) * inv * p.gamma[c] + p.beta[c];
        }
    }
    Ok(out)
}

pub fn relu(input: &GridMap) -> GridMap {
    let mut out = input.clone();
    for v in &mut out.values {
        *v = v.max(0.0);
    }
    out
}

pub fn sigmoid(input: &GridMap) -> GridMap {
    let mut out = input.clone();
    for v in &mut out.values {
        *v = sigmoid_scalar(*v);
    }
    out
}

/// Overflow-safe logistic function.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn random_map(rng: &mut DetRng, c: usize, h: usize, w: usize) -> GridMap {
        let values = (0..c * h * w).map(|_| rng.range_f64(-2.0, 2.0)).collect();
        GridMap::from_values(c, h, w, values).unwrap()
    }

    /// Literal quadruple-nested-loop reference convolution.
    fn conv_oracle(input: &GridMap, p: &ConvParams) -> Vec<f64> {
        let (h, w) = (input.height(), input.width());
        let pad = p.kernel as isize / 2;
        let mut out = vec![0.0; p.out_channels * h * w];
        for o in 0..p.out_channels {
            for r in 0..h as isize {
                for c in 0..w as isize {
                    let mut s = p.bias[o];
                    for i in 0..p.in_channels {
                        for ky in 0..p.kernel as isize {
                            for kx in 0..p.kernel as isize {
                                let rr = r + ky - pad;
                                let cc = c + kx - pad;
                                if rr >= 0 && rr < h as isize && cc >= 0 && cc < w as isize {
                                    s += p.weights[((o * p.in_channels + i) * p.kernel
                                        + ky as usize)
                                        * p.kernel
                                        + kx as usize]
                                        * input.value(i, rr as usize, cc as usize);
                                }
                            }
                        }
                    }
                    out[(o * h + r as usize) * w + c as usize] = s;
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_1x1() {
        let mut rng = DetRng::new(1);
        let input = random_map(&mut rng, 3, 5, 4);
        // 1x1 kernel, weights = identity across channels
        let mut weights = vec![0.0; 9];
        for c in 0..3 {
            weights[c * 3 + c] = 1.0;
        }
        let p = ConvParams::new(1, 3, 3, weights, vec![0.0; 3]).unwrap();
        let out = conv2d(&input, &p).unwrap();
        assert_eq!(out.values(), input.values());
    }

    #[test]
    fn conv_zero_weights_gives_bias() {
        let mut rng = DetRng::new(2);
        let input = random_map(&mut rng, 2, 4, 4);
        let p = ConvParams::new(3, 2, 3, vec![0.0; 3 * 2 * 9], vec![0.5, -1.25, 2.0]).unwrap();
        let out = conv2d(&input, &p).unwrap();
        for o in 0..3 {
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(out.value(o, r, c), p.bias[o]);
                }
            }
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = DetRng::new(3);
        for _ in 0..20 {
            let input = random_map(&mut rng, 2, 4, 4);
            let weights = (0..3 * 2 * 9).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            let bias = (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            let p = ConvParams::new(3, 2, 3, weights, bias).unwrap();
            let out = conv2d(&input, &p).unwrap();
            let expect = conv_oracle(&input, &p);
            for (a, b) in out.values().iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn conv_shape_mismatch_rejected() {
        let input = GridMap::zeros(2, 4, 4);
        let p = ConvParams::zeros(1, 3, 1).unwrap();
        assert!(conv2d(&input, &p).is_err());
    }

    #[test]
    fn conv_is_linear_without_bias() {
        let mut rng = DetRng::new(4);
        let x = random_map(&mut rng, 2, 5, 5);
        let y = random_map(&mut rng, 2, 5, 5);
        let weights = (0..2 * 2 * 9).map(|_| rng.range_f64(-1.0, 1.0)).collect();
        let p = ConvParams::new(3, 2, 2, weights, vec![0.0; 2]).unwrap();
        let (a, b) = (1.75, -0.4);
        let mixed_values: Vec<f64> = x
            .values()
            .iter()
            .zip(y.values())
            .map(|(xv, yv)| a * xv + b * yv)
            .collect();
        let mixed = GridMap::from_values(2, 5, 5, mixed_values).unwrap();
        let lhs = conv2d(&mixed, &p).unwrap();
        let cx = conv2d(&x, &p).unwrap();
        let cy = conv2d(&y, &p).unwrap();
        for i in 0..lhs.values().len() {
            let rhs = a * cx.values()[i] + b * cy.values()[i];
            assert!((lhs.values()[i] - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn batchnorm_identity() {
        let mut rng = DetRng::new(5);
        let input = random_map(&mut rng, 3, 4, 4);
        let mut p = BNParams::identity(3, 1e-12);
        p.epsilon = f64::MIN_POSITIVE; // effectively zero
        let out = batchnorm_infer(&input, &p).unwrap();
        for (a, b) in out.values().iter().zip(input.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn batchnorm_constant_input_gives_beta() {
        let p = BNParams::new(
            vec![2.0, 3.0],
            vec![0.5, -1.0],
            vec![1.5, -0.25],
            vec![4.0, 0.5],
            1e-5,
        )
        .unwrap();
        let mut input = GridMap::zeros(2, 3, 3);
        for c in 0..2 {
            for r in 0..3 {
                for col in 0..3 {
                    input.set(c, r, col, p.mean[c]);
                }
            }
        }
        let out = batchnorm_infer(&input, &p).unwrap();
        for c in 0..2 {
            for r in 0..3 {
                for col in 0..3 {
                    assert!((out.value(c, r, col) - p.beta[c]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_matches_scalar_oracle() {
        let mut rng = DetRng::new(6);
        let input = random_map(&mut rng, 3, 4, 5);
        let p = BNParams::new(
            (0..3).map(|_| rng.range_f64(0.5, 2.0)).collect(),
            (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
            (0..3).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
            (0..3).map(|_| rng.range_f64(0.1, 3.0)).collect(),
            1e-5,
        )
        .unwrap();
        let out = batchnorm_infer(&input, &p).unwrap();
        for c in 0..3 {
            for r in 0..4 {
                for col in 0..5 {
                    let x = input.value(c, r, col);
                    let expect =
                        (x - p.mean[c]) / (p.variance[c] + p.epsilon).sqrt() * p.gamma[c]
                            + p.beta[c];
                    assert!((out.value(c, r, col) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn batchnorm_negative_variance_rejected() {
        assert!(BNParams::new(vec![1.0], vec![0.0], vec![0.0], vec![-0.1], 1e-5).is_err());
    }

    #[test]
    fn activations() {
        let input = GridMap::from_values(1, 1, 3, vec![-1.0, 0.0, 2.0]).unwrap();
        let r = relu(&input);
        assert_eq!(r.values(), &[0.0, 0.0, 2.0]);
        let s = sigmoid(&input);
        assert!((s.value(0, 0, 1) - 0.5).abs() < 1e-15);
        // sigmoid(ln 3) = 1 / (1 + 1/3) = 0.75
        assert!((sigmoid_scalar(3.0f64.ln()) - 0.75).abs() < 1e-15);
        // extremes stay in (0, 1) without overflow
        assert!(sigmoid_scalar(-800.0) >= 0.0);
        assert!(sigmoid_scalar(800.0) <= 1.0);
    }
}
