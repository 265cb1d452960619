//! Reverse-mode autodiff over a recorded op graph.
//!
//! Define-by-run: each forward call appends a node holding the computed
//! values; `backward` replays the tape in reverse and accumulates
//! gradients for every node, including parameter leaves. Shapes are
//! (channels, height, width); scalars are (1, 1, 1).

use crate::error::{CoreError, Result};
use crate::tensor::{conv2d_raw, sigmoid_scalar, ConvParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Conv2d {
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    },
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        variance: NodeId,
        epsilon: f64,
    },
    Relu {
        input: NodeId,
    },
    Sigmoid {
        input: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// y = mul * x + add; only the slope matters to the gradient.
    Affine {
        input: NodeId,
        mul: f64,
    },
    /// y[c,r,w] = map[r,w] * x[c,r,w]; map is a single-channel node.
    MulBroadcast {
        map: NodeId,
        input: NodeId,
    },
    /// y[c,r,w] = mask[r,w] * x[c,r,w]; mask is a constant.
    MulMask {
        input: NodeId,
        mask: Vec<f64>,
    },
    /// y = x + constant vector (no gradient to the constant).
    AddConst {
        input: NodeId,
    },
    ConcatChannels {
        a: NodeId,
        b: NodeId,
    },
    /// Min-max normalization over the included cells of a single-channel
    /// map; excluded cells output 0. Argmin/argmax recorded at forward.
    MinMaxNorm {
        input: NodeId,
        include: Vec<bool>,
        lo_idx: usize,
        hi_idx: usize,
        range: f64,
        degenerate: bool,
    },
    /// Weighted smooth-L1 against a constant target, normalized by the
    /// weight sum. Produces a scalar.
    SmoothL1 {
        pred: NodeId,
        target: Vec<f64>,
        weights: Vec<f64>,
        beta: f64,
        denom: f64,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: (usize, usize, usize),
    values: Vec<f64>,
    op: Op,
}

impl Node {
    fn len(&self) -> usize {
        self.shape.0 * self.shape.1 * self.shape.2
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by `Tape::backward`.
pub struct Gradients {
    grads: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> &[f64] {
        &self.grads[id.0]
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, shape: (usize, usize, usize), values: Vec<f64>, op: Op) -> NodeId {
        debug_assert_eq!(values.len(), shape.0 * shape.1 * shape.2);
        self.nodes.push(Node { shape, values, op });
        NodeId(self.nodes.len() - 1)
    }

    fn node(&self, id: NodeId) -> Result<&Node> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| CoreError::usage(format!("node {} not recorded on this tape", id.0)))
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize, usize) {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].values
    }

    pub fn scalar(&self, id: NodeId) -> Result<f64> {
        let n = self.node(id)?;
        if n.len() != 1 {
            return Err(CoreError::usage("node is not a scalar"));
        }
        Ok(n.values[0])
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: (usize, usize, usize)) -> NodeId {
        self.push(shape, values, Op::Leaf)
    }

    /// Flat parameter vector leaf (shape len×1×1).
    pub fn param(&mut self, values: Vec<f64>) -> NodeId {
        let len = values.len();
        self.push((len, 1, 1), values, Op::Leaf)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        weights: NodeId,
        bias: NodeId,
        kernel: usize,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<NodeId> {
        let (c, h, w) = self.node(input)?.shape;
        if c != in_channels {
            return Err(CoreError::rejected(format!(
                "conv2d input has {c} channels, expected {in_channels}"
            )));
        }
        let p = ConvParams::new(
            kernel,
            in_channels,
            out_channels,
            self.node(weights)?.values.clone(),
            self.node(bias)?.values.clone(),
        )?;
        let mut out = vec![0.0; out_channels * h * w];
        conv2d_raw(&self.nodes[input.0].values, h, w, &p, &mut out);
        Ok(self.push(
            (out_channels, h, w),
            out,
            Op::Conv2d {
                input,
                weights,
                bias,
                kernel,
                in_channels,
                out_channels,
            },
        ))
    }

    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: NodeId,
        variance: NodeId,
        epsilon: f64,
    ) -> Result<NodeId> {
        let (c, h, w) = self.node(input)?.shape;
        for p in [gamma, beta, mean, variance] {
            if self.node(p)?.len() != c {
                return Err(CoreError::rejected(
                    "batch norm parameter length does not match channel count",
                ));
            }
        }
        if self.node(variance)?.values.iter().any(|v| *v + epsilon <= 0.0) {
            return Err(CoreError::rejected("batch norm variance + epsilon not positive"));
        }
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            let g = self.nodes[gamma.0].values[ch];
            let b = self.nodes[beta.0].values[ch];
            let m = self.nodes[mean.0].values[ch];
            let inv = 1.0 / (self.nodes[variance.0].values[ch] + epsilon).sqrt();
            for i in 0..hw {
                out[ch * hw + i] = (self.nodes[input.0].values[ch * hw + i] - m) * inv * g + b;
            }
        }
        Ok(self.push(
            (c, h, w),
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                mean,
                variance,
                epsilon,
            },
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.node(input)?;
        let shape = n.shape;
        let out = n.values.iter().map(|v| v.max(0.0)).collect();
        Ok(self.push(shape, out, Op::Relu { input }))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> Result<NodeId> {
        let n = self.node(input)?;
        let shape = n.shape;
        let out = n.values.iter().map(|v| sigmoid_scalar(*v)).collect();
        Ok(self.push(shape, out, Op::Sigmoid { input }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.node(a)?.shape, self.node(b)?.shape);
        if sa != sb {
            return Err(CoreError::rejected("add: shape mismatch"));
        }
        let out = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, y)| x + y)
            .collect();
        Ok(self.push(sa, out, Op::Add { a, b }))
    }

    pub fn affine(&mut self, input: NodeId, mul: f64, add: f64) -> Result<NodeId> {
        let n = self.node(input)?;
        let shape = n.shape;
        let out = n.values.iter().map(|v| mul * v + add).collect();
        Ok(self.push(shape, out, Op::Affine { input, mul }))
    }

    pub fn mul_broadcast(&mut self, map: NodeId, input: NodeId) -> Result<NodeId> {
        let (mc, mh, mw) = self.node(map)?.shape;
        let (c, h, w) = self.node(input)?.shape;
        if mc != 1 || mh != h || mw != w {
            return Err(CoreError::rejected("mul_broadcast: map must be 1xHxW"));
        }
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for i in 0..hw {
                out[ch * hw + i] =
                    self.nodes[map.0].values[i] * self.nodes[input.0].values[ch * hw + i];
            }
        }
        Ok(self.push((c, h, w), out, Op::MulBroadcast { map, input }))
    }

    pub fn mul_mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let (c, h, w) = self.node(input)?.shape;
        if mask.len() != h * w {
            return Err(CoreError::rejected("mul_mask: mask length must be H*W"));
        }
        let hw = h * w;
        let mut out = vec![0.0; c * hw];
        for ch in 0..c {
            for i in 0..hw {
                out[ch * hw + i] = mask[i] * self.nodes[input.0].values[ch * hw + i];
            }
        }
        Ok(self.push((c, h, w), out, Op::MulMask { input, mask }))
    }

    pub fn add_const(&mut self, input: NodeId, constant: &[f64]) -> Result<NodeId> {
        let n = self.node(input)?;
        if constant.len() != n.len() {
            return Err(CoreError::rejected("add_const: length mismatch"));
        }
        let shape = n.shape;
        let out = n.values.iter().zip(constant).map(|(x, k)| x + k).collect();
        Ok(self.push(shape, out, Op::AddConst { input }))
    }

    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ca, ha, wa) = self.node(a)?.shape;
        let (cb, hb, wb) = self.node(b)?.shape;
        if ha != hb || wa != wb {
            return Err(CoreError::rejected("concat: spatial shape mismatch"));
        }
        let mut out = Vec::with_capacity((ca + cb) * ha * wa);
        out.extend_from_slice(&self.nodes[a.0].values);
        out.extend_from_slice(&self.nodes[b.0].values);
        Ok(self.push((ca + cb, ha, wa), out, Op::ConcatChannels { a, b }))
    }

    /// Min-max normalize a single-channel map over the `include`d cells;
    /// excluded cells output 0. When all included values are equal the
    /// output is 0.5 on included cells (locally constant, zero gradient).
    pub fn minmax_norm(&mut self, input: NodeId, include: Vec<bool>) -> Result<NodeId> {
        let (c, h, w) = self.node(input)?.shape;
        if c != 1 {
            return Err(CoreError::rejected("minmax_norm: input must be single-channel"));
        }
        if include.len() != h * w {
            return Err(CoreError::rejected("minmax_norm: include length must be H*W"));
        }
        let vals = &self.nodes[input.0].values;
        let mut lo_idx = usize::MAX;
        let mut hi_idx = usize::MAX;
        for (i, inc) in include.iter().enumerate() {
            if !inc {
                continue;
            }
            if lo_idx == usize::MAX || vals[i] < vals[lo_idx] {
                lo_idx = i;
            }
            if hi_idx == usize::MAX || vals[i] > vals[hi_idx] {
                hi_idx = i;
            }
        }
        let mut out = vec![0.0; h * w];
        let (range, degenerate);
        if lo_idx == usize::MAX {
            // nothing included
            range = 0.0;
            degenerate = true;
        } else {
            let r = vals[hi_idx] - vals[lo_idx];
            if r <= 0.0 {
                range = 0.0;
                degenerate = true;
                for (i, inc) in include.iter().enumerate() {
                    if *inc {
                        out[i] = 0.5;
                    }
                }
            } else {
                range = r;
                degenerate = false;
                for (i, inc) in include.iter().enumerate() {
                    if *inc {
                        out[i] = (vals[i] - vals[lo_idx]) / r;
                    }
                }
            }
        }
        Ok(self.push(
            (1, h, w),
            out,
            Op::MinMaxNorm {
                input,
                include,
                lo_idx,
                hi_idx,
                range,
                degenerate,
            },
        ))
    }

    pub fn smooth_l1(
        &mut self,
        pred: NodeId,
        target: Vec<f64>,
        weights: Vec<f64>,
        beta: f64,
    ) -> Result<NodeId> {
        let n = self.node(pred)?;
        if target.len() != n.len() || weights.len() != n.len() {
            return Err(CoreError::rejected("smooth_l1: length mismatch"));
        }
        if beta <= 0.0 {
            return Err(CoreError::rejected("smooth_l1: beta must be positive"));
        }
        let weight_sum: f64 = weights.iter().sum();
        let denom = if weight_sum > 0.0 { weight_sum } else { 1.0 };
        let mut loss = 0.0;
        for i in 0..n.len() {
            let d = n.values[i] - target[i];
            let phi = if d.abs() < beta {
                d * d / (2.0 * beta)
            } else {
                d.abs() - beta / 2.0
            };
            loss += weights[i] * phi;
        }
        loss /= denom;
        Ok(self.push(
            (1, 1, 1),
            vec![loss],
            Op::SmoothL1 {
                pred,
                target,
                weights,
                beta,
                denom,
            },
        ))
    }

    /// Gradients of a scalar loss with respect to every node on the tape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let loss_node = self.node(loss)?;
        if loss_node.len() != 1 {
            return Err(CoreError::usage("backward requires a scalar loss node"));
        }
        if !loss_node.values[0].is_finite() {
            return Err(CoreError::usage("backward requires a finite loss"));
        }
        let mut grads: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.len()]).collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            // take the output gradient to appease the borrow checker
            let g_out = std::mem::take(&mut grads[idx]);
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    input,
                    weights,
                    bias,
                    kernel,
                    in_channels,
                    out_channels,
                } => {
                    let (_, h, w) = self.nodes[input.0].shape;
                    let pad = kernel / 2;
                    let in_vals = &self.nodes[input.0].values;
                    let w_vals = &self.nodes[weights.0].values;
                    let widx = |o: usize, i: usize, ky: usize, kx: usize| {
                        ((o * in_channels + i) * kernel + ky) * kernel + kx
                    };
                    let (mut g_in, mut g_w, mut g_b) = (
                        vec![0.0; in_channels * h * w],
                        vec![0.0; w_vals.len()],
                        vec![0.0; *out_channels],
                    );
                    for o in 0..*out_channels {
                        for r in 0..h {
                            for c in 0..w {
                                let g = g_out[(o * h + r) * w + c];
                                if g == 0.0 {
                                    continue;
                                }
                                g_b[o] += g;
                                for i in 0..*in_channels {
                                    for ky in 0..*kernel {
                                        let rr = r as isize + ky as isize - pad as isize;
                                        if rr < 0 || rr >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..*kernel {
                                            let cc = c as isize + kx as isize - pad as isize;
                                            if cc < 0 || cc >= w as isize {
                                                continue;
                                            }
                                            let ii = (i * h + rr as usize) * w + cc as usize;
                                            g_w[widx(o, i, ky, kx)] += g * in_vals[ii];
                                            g_in[ii] += g * w_vals[widx(o, i, ky, kx)];
                                        }
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], &g_in);
                    accumulate(&mut grads[weights.0], &g_w);
                    accumulate(&mut grads[bias.0], &g_b);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    mean,
                    variance,
                    epsilon,
                } => {
                    let (c, h, w) = self.nodes[input.0].shape;
                    let hw = h * w;
                    let in_vals = &self.nodes[input.0].values;
                    for ch in 0..c {
                        let g_ch = self.nodes[gamma.0].values[ch];
                        let m = self.nodes[mean.0].values[ch];
                        let ve = self.nodes[variance.0].values[ch] + epsilon;
                        let inv = 1.0 / ve.sqrt();
                        let mut acc_gamma = 0.0;
                        let mut acc_beta = 0.0;
                        let mut acc_mean = 0.0;
                        let mut acc_var = 0.0;
                        for i in 0..hw {
                            let g = g_out[ch * hw + i];
                            if g == 0.0 {
                                continue;
                            }
                            let xm = in_vals[ch * hw + i] - m;
                            grads[input.0][ch * hw + i] += g * g_ch * inv;
                            acc_gamma += g * xm * inv;
                            acc_beta += g;
                            acc_mean += -g * g_ch * inv;
                            acc_var += g * g_ch * xm * (-0.5) * inv / ve;
                        }
                        grads[gamma.0][ch] += acc_gamma;
                        grads[beta.0][ch] += acc_beta;
                        grads[mean.0][ch] += acc_mean;
                        grads[variance.0][ch] += acc_var;
                    }
                }
                Op::Relu { input } => {
                    for (i, g) in g_out.iter().enumerate() {
                        if self.nodes[input.0].values[i] > 0.0 {
                            grads[input.0][i] += g;
                        }
                    }
                }
                Op::Sigmoid { input } => {
                    for (i, g) in g_out.iter().enumerate() {
                        let s = node.values[i];
                        grads[input.0][i] += g * s * (1.0 - s);
                    }
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads[a.0], &g_out);
                    accumulate(&mut grads[b.0], &g_out);
                }
                Op::Affine { input, mul } => {
                    for (i, g) in g_out.iter().enumerate() {
                        grads[input.0][i] += mul * g;
                    }
                }
                Op::MulBroadcast { map, input } => {
                    let (c, h, w) = self.nodes[input.0].shape;
                    let hw = h * w;
                    for ch in 0..c {
                        for i in 0..hw {
                            let g = g_out[ch * hw + i];
                            if g == 0.0 {
                                continue;
                            }
                            grads[map.0][i] += g * self.nodes[input.0].values[ch * hw + i];
                            grads[input.0][ch * hw + i] += g * self.nodes[map.0].values[i];
                        }
                    }
                }
                Op::MulMask { input, mask } => {
                    let (c, h, w) = self.nodes[input.0].shape;
                    let hw = h * w;
                    for ch in 0..c {
                        for i in 0..hw {
                            grads[input.0][ch * hw + i] += g_out[ch * hw + i] * mask[i];
                        }
                    }
                }
                Op::AddConst { input } => {
                    accumulate(&mut grads[input.0], &g_out);
                }
                Op::ConcatChannels { a, b } => {
                    let na = self.nodes[a.0].len();
                    accumulate(&mut grads[a.0], &g_out[..na]);
                    accumulate(&mut grads[b.0], &g_out[na..]);
                }
                Op::MinMaxNorm {
                    input,
                    include,
                    lo_idx,
                    hi_idx,
                    range,
                    degenerate,
                } => {
                    if !*degenerate {
                        let mut g_lo = 0.0;
                        let mut g_hi = 0.0;
                        for (i, inc) in include.iter().enumerate() {
                            if !inc {
                                continue;
                            }
                            let g = g_out[i];
                            if g == 0.0 {
                                continue;
                            }
                            let y = node.values[i];
                            grads[input.0][i] += g / range;
                            g_lo += g * (y - 1.0) / range;
                            g_hi += g * (-y) / range;
                        }
                        grads[input.0][*lo_idx] += g_lo;
                        grads[input.0][*hi_idx] += g_hi;
                    }
                }
                Op::SmoothL1 {
                    pred,
                    target,
                    weights,
                    beta,
                    denom,
                } => {
                    let g = g_out[0];
                    for i in 0..target.len() {
                        if weights[i] == 0.0 {
                            continue;
                        }
                        let d = self.nodes[pred.0].values[i] - target[i];
                        let dphi = if d.abs() < *beta {
                            d / beta
                        } else {
                            d.signum()
                        };
                        grads[pred.0][i] += g * weights[i] * dphi / denom;
                    }
                }
            }
            grads[idx] = g_out;
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    /// Central finite differences over one leaf of a rebuilt graph.
    ///
    /// `build` must construct the same graph from scratch given the leaf
    /// values, returning the loss node.
    fn fd_check<F>(leaf_values: &[f64], analytic: &[f64], build: F, tol: f64)
    where
        F: Fn(&[f64]) -> f64,
    {
        let step = 1e-5;
        for i in 0..leaf_values.len() {
            let mut plus = leaf_values.to_vec();
            plus[i] += step;
            let mut minus = leaf_values.to_vec();
            minus[i] -= step;
            let fd = (build(&plus) - build(&minus)) / (2.0 * step);
            let a = analytic[i];
            let denom = a.abs().max(fd.abs()).max(1e-6);
            assert!(
                (a - fd).abs() / denom < tol,
                "param {i}: analytic {a} vs fd {fd}"
            );
        }
    }

    #[test]
    fn bias_gradient_of_summed_identity_conv() {
        // loss = sum(|conv1x1_identity(x)|)/n with x far into the linear
        // region, so d loss / d bias_c = (H*W)/n = 1/2.
        let (h, w) = (3, 4);
        let mut tape = Tape::new();
        let x = tape.leaf(vec![100.0; 2 * h * w], (2, h, w));
        let mut wts = vec![0.0; 4];
        wts[0] = 1.0;
        wts[3] = 1.0;
        let wn = tape.param(wts);
        let bn = tape.param(vec![0.0, 0.0]);
        let y = tape.conv2d(x, wn, bn, 1, 2, 2).unwrap();
        let n = 2 * h * w;
        let loss = tape.smooth_l1(y, vec![0.0; n], vec![1.0; n], 1.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        // d loss / d bias_c = (H*W) * 1 / n = 1/2
        for g in grads.get(bn) {
            assert!((g - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn relu_gradient_is_indicator() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![2.0, -3.0, 5.0, 0.5], (1, 2, 2));
        let y = tape.relu(x).unwrap();
        let loss = tape
            .smooth_l1(y, vec![-10.0; 4], vec![1.0; 4], 1.0)
            .unwrap();
        // all positive y are > beta away from target: dphi = +1
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x);
        assert!((gx[0] - 0.25).abs() < 1e-12);
        assert_eq!(gx[1], 0.0);
        assert!((gx[2] - 0.25).abs() < 1e-12);
        assert!((gx[3] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::new();
        let x = tape.leaf(vec![1.0, 2.0], (1, 1, 2));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_rejects_foreign_node() {
        let mut other = Tape::new();
        let x = other.leaf(vec![1.0], (1, 1, 1));
        let tape = Tape::new();
        assert!(tape.backward(x).is_err());
    }

    /// Randomized deep graphs: every leaf gradient matches central finite
    /// differences with relative error < 1e-4.
    #[test]
    fn random_network_gradients_match_finite_differences() {
        for seed in 0..6u64 {
            let mut rng = DetRng::new(seed + 100);
            let (h, w) = (3 + rng.next_usize(3), 3 + rng.next_usize(3));
            let c_in = 1 + rng.next_usize(2);
            let hw = h * w;
            let x0: Vec<f64> = (0..c_in * hw).map(|_| rng.range_f64(-1.5, 1.5)).collect();
            let wts: Vec<f64> = (0..c_in * 9).map(|_| rng.range_f64(-0.8, 0.8)).collect();
            let bias: Vec<f64> = vec![rng.range_f64(-0.3, 0.3)];
            let gamma = vec![rng.range_f64(0.5, 1.5)];
            let beta = vec![rng.range_f64(-0.5, 0.5)];
            let mean = vec![rng.range_f64(-0.5, 0.5)];
            let var = vec![rng.range_f64(0.3, 2.0)];
            let target: Vec<f64> = (0..hw).map(|_| rng.range_f64(-1.0, 1.0)).collect();
            let mask: Vec<f64> = (0..hw).map(|_| f64::from(rng.next_f64() < 0.7)).collect();
            let include: Vec<bool> = (0..hw).map(|i| mask[i] > 0.0).collect();

            // run(values of one chosen leaf) -> loss; here we differentiate the
            // conv weights, conv bias, and all four bn parameter vectors
            let run = |wv: &[f64],
                       bv: &[f64],
                       gv: &[f64],
                       bev: &[f64],
                       mv: &[f64],
                       vv: &[f64]|
             -> (Tape, NodeId, [NodeId; 6]) {
                let mut t = Tape::new();
                let x = t.leaf(x0.clone(), (c_in, h, w));
                let wn = t.param(wv.to_vec());
                let bn = t.param(bv.to_vec());
                let gn = t.param(gv.to_vec());
                let ben = t.param(bev.to_vec());
                let mn = t.param(mv.to_vec());
                let vn = t.param(vv.to_vec());
                let y = t.conv2d(x, wn, bn, 3, c_in, 1).unwrap();
                let y = t.batchnorm(y, gn, ben, mn, vn, 1e-5).unwrap();
                let a = t.relu(y).unwrap();
                let b = t.sigmoid(y).unwrap();
                let y = t.add(a, b).unwrap();
                let m = t.minmax_norm(y, include.clone()).unwrap();
                let y = t.mul_broadcast(m, y).unwrap();
                let y = t.affine(y, 1.3, -0.2).unwrap();
                let loss = t
                    .smooth_l1(y, target.clone(), mask.clone(), 1.0)
                    .unwrap();
                (t, loss, [wn, bn, gn, ben, mn, vn])
            };

            let (tape, loss, ids) = run(&wts, &bias, &gamma, &beta, &mean, &var);
            let grads = tape.backward(loss).unwrap();

            let leaves: [&[f64]; 6] = [&wts, &bias, &gamma, &beta, &mean, &var];
            for (k, leaf) in leaves.iter().enumerate() {
                let analytic = grads.get(ids[k]).to_vec();
                fd_check(
                    leaf,
                    &analytic,
                    |perturbed| {
                        let mut args: Vec<Vec<f64>> =
                            leaves.iter().map(|l| l.to_vec()).collect();
                        args[k] = perturbed.to_vec();
                        let (t, l, _) =
                            run(&args[0], &args[1], &args[2], &args[3], &args[4], &args[5]);
                        t.scalar(l).unwrap()
                    },
                    1e-4,
                );
            }
        }
    }
}
