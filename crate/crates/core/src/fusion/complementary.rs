//! Learned complementary regression fusion.
//!
//! Pipeline: a 1x1 convolution collapses the concatenated ego/sender maps
//! to a single-channel delta map; two 3x3 conv + BN stages with ReLU and
//! Sigmoid produce a residual that is added back onto delta; the result is
//! min-max normalized into a weight map M in [0, 1], forced to zero
//! outside the region where both maps are valid; the fused map is a 1x1
//! convolution over (M * ego) concatenated with ((1 - M) * sender).
//! Outside the overlap the ego map is passed through untouched.

use crate::error::{CoreError, Result};
use crate::heads::RegressionMap;
use crate::rng::DetRng;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::{BNParams, ConvParams, GridMap};

pub const BN_EPSILON: f64 = 1e-5;

const CKPT_MAGIC: &[u8; 8] = b"HEADCKPT";
const CKPT_VERSION: u16 = 1;

/// All learnable parameters of the complementary fusion network.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplementaryParams {
    pub conv_delta: ConvParams,
    pub conv_a: ConvParams,
    pub bn_a: BNParams,
    pub conv_b: ConvParams,
    pub bn_b: BNParams,
    pub conv_out: ConvParams,
}

impl ComplementaryParams {
    /// Seeded initialization: conv weights uniform in +-1/sqrt(fan-in),
    /// biases zero, batch norm at identity.
    pub fn init(reg_channels: usize, seed: u64) -> Result<Self> {
        if reg_channels == 0 {
            return Err(CoreError::rejected("regression channel count must be positive"));
        }
        let mut rng = DetRng::from_key(&[0x4845_4144, seed]);
        let mut conv = |kernel: usize, c_in: usize, c_out: usize| -> Result<ConvParams> {
            let fan_in = (c_in * kernel * kernel) as f64;
            let bound = 1.0 / fan_in.sqrt();
            let weights = (0..c_out * c_in * kernel * kernel)
                .map(|_| rng.range_f64(-bound, bound))
                .collect();
            ConvParams::new(kernel, c_in, c_out, weights, vec![0.0; c_out])
        };
        Ok(ComplementaryParams {
            conv_delta: conv(1, 2 * reg_channels, 1)?,
            conv_a: conv(3, 1, 1)?,
            bn_a: BNParams::identity(1, BN_EPSILON),
            conv_b: conv(3, 1, 1)?,
            bn_b: BNParams::identity(1, BN_EPSILON),
            conv_out: conv(1, 2 * reg_channels, reg_channels)?,
        })
    }

    pub fn reg_channels(&self) -> usize {
        self.conv_out.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.reg_channels();
        let ok = self.conv_delta.kernel == 1
            && self.conv_delta.in_channels == 2 * c
            && self.conv_delta.out_channels == 1
            && self.conv_a.kernel == 3
            && self.conv_a.in_channels == 1
            && self.conv_a.out_channels == 1
            && self.bn_a.channels() == 1
            && self.conv_b.kernel == 3
            && self.conv_b.in_channels == 1
            && self.conv_b.out_channels == 1
            && self.bn_b.channels() == 1
            && self.conv_out.kernel == 1
            && self.conv_out.in_channels == 2 * c;
        if ok {
            Ok(())
        } else {
            Err(CoreError::rejected("complementary parameter shapes inconsistent"))
        }
    }

    /// Flat parameter vector in declaration order; see `from_flat`.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.conv_delta.weights);
        out.extend_from_slice(&self.conv_delta.bias);
        out.extend_from_slice(&self.conv_a.weights);
        out.extend_from_slice(&self.conv_a.bias);
        out.extend_from_slice(&self.bn_a.gamma);
        out.extend_from_slice(&self.bn_a.beta);
        out.extend_from_slice(&self.bn_a.mean);
        out.extend_from_slice(&self.bn_a.variance);
        out.extend_from_slice(&self.conv_b.weights);
        out.extend_from_slice(&self.conv_b.bias);
        out.extend_from_slice(&self.bn_b.gamma);
        out.extend_from_slice(&self.bn_b.beta);
        out.extend_from_slice(&self.bn_b.mean);
        out.extend_from_slice(&self.bn_b.variance);
        out.extend_from_slice(&self.conv_out.weights);
        out.extend_from_slice(&self.conv_out.bias);
        out
    }

    /// Segment lengths of the flat layout for `reg_channels` = c.
    pub fn segment_lengths(c: usize) -> [usize; 16] {
        [
            2 * c, // conv_delta weights
            1,     // conv_delta bias
            9,     // conv_a weights
            1,     // conv_a bias
            1,     // bn_a gamma
            1,     // bn_a beta
            1,     // bn_a mean
            1,     // bn_a variance
            9,     // conv_b weights
            1,     // conv_b bias
            1,     // bn_b gamma
            1,     // bn_b beta
            1,     // bn_b mean
            1,     // bn_b variance
            2 * c * c, // conv_out weights
            c,     // conv_out bias
        ]
    }

    pub fn flat_len(c: usize) -> usize {
        Self::segment_lengths(c).iter().sum()
    }

    /// Flat indices holding batch norm variances (clamped to >= 0 during
    /// gradient training).
    pub fn variance_indices(c: usize) -> [usize; 2] {
        let lens = Self::segment_lengths(c);
        let offset = |upto: usize| lens[..upto].iter().sum::<usize>();
        [offset(7), offset(13)]
    }

    pub fn from_flat(reg_channels: usize, flat: &[f64]) -> Result<Self> {
        let lens = Self::segment_lengths(reg_channels);
        if flat.len() != lens.iter().sum::<usize>() {
            return Err(CoreError::rejected(format!(
                "flat parameter vector length {} does not match {} channels",
                flat.len(),
                reg_channels
            )));
        }
        let mut pos = 0usize;
        let mut take = |n: usize| -> Vec<f64> {
            let s = flat[pos..pos + n].to_vec();
            pos += n;
            s
        };
        let c = reg_channels;
        Ok(ComplementaryParams {
            conv_delta: ConvParams::new(1, 2 * c, 1, take(lens[0]), take(lens[1]))?,
            conv_a: ConvParams::new(3, 1, 1, take(lens[2]), take(lens[3]))?,
            bn_a: BNParams::new(take(lens[4]), take(lens[5]), take(lens[6]), take(lens[7]), BN_EPSILON)?,
            conv_b: ConvParams::new(3, 1, 1, take(lens[8]), take(lens[9]))?,
            bn_b: BNParams::new(
                take(lens[10]),
                take(lens[11]),
                take(lens[12]),
                take(lens[13]),
                BN_EPSILON,
            )?,
            conv_out: ConvParams::new(1, 2 * c, c, take(lens[14]), take(lens[15]))?,
        })
    }

    /// Versioned little-endian checkpoint.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.reg_channels() as u16).to_le_bytes());
        out.extend_from_slice(&BN_EPSILON.to_le_bytes());
        for v in self.flatten() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(8)?;
        if magic != CKPT_MAGIC {
            return Err(CoreError::Parse {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let version = r.u16()?;
        if version != CKPT_VERSION {
            return Err(CoreError::Parse {
                offset: 8,
                message: format!("unsupported checkpoint version {version}"),
            });
        }
        let c = r.u16()? as usize;
        if c == 0 {
            return Err(CoreError::Parse {
                offset: 10,
                message: "zero channel count".into(),
            });
        }
        let _epsilon = r.f64()?;
        let n = Self::flat_len(c);
        let mut flat = Vec::with_capacity(n);
        for _ in 0..n {
            flat.push(r.f64()?);
        }
        r.expect_end()?;
        Self::from_flat(c, &flat)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(CoreError::Parse {
                offset: self.pos,
                message: format!("truncated: needed {n} bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn expect_end(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(CoreError::Parse {
                offset: self.pos,
                message: format!("{} trailing bytes", self.buf.len() - self.pos),
            });
        }
        Ok(())
    }
}

/// Tape node handles for one recorded forward pass.
pub(crate) struct ForwardGraph {
    pub fused: NodeId,
    pub weight_map: NodeId,
    /// Parameter leaves in flat layout order.
    pub param_nodes: [NodeId; 16],
}

/// Record the full fusion pipeline on `tape`. The fused node equals the
/// masked Eq.-7 output plus the ego bypass on non-overlap cells.
pub(crate) fn forward_on_tape(
    tape: &mut Tape,
    reg_ego: &GridMap,
    reg_j: &GridMap,
    params: &ComplementaryParams,
    forced_weight: Option<f64>,
) -> Result<ForwardGraph> {
    params.validate()?;
    if !reg_ego.same_shape(reg_j) {
        return Err(CoreError::rejected("regression map shape mismatch"));
    }
    let c = params.reg_channels();
    if reg_ego.channels() != c {
        return Err(CoreError::rejected(format!(
            "regression maps have {} channels, params expect {c}",
            reg_ego.channels()
        )));
    }
    let (h, w) = (reg_ego.height(), reg_ego.width());
    let hw = h * w;

    let overlap: Vec<bool> = (0..hw)
        .map(|i| reg_ego.validity()[i] && reg_j.validity()[i])
        .collect();
    let overlap_f: Vec<f64> = overlap.iter().map(|b| f64::from(*b)).collect();

    let n_ego = tape.leaf(reg_ego.values().to_vec(), (c, h, w));
    let n_j = tape.leaf(reg_j.values().to_vec(), (c, h, w));

    let p = [
        tape.param(params.conv_delta.weights.clone()),
        tape.param(params.conv_delta.bias.clone()),
        tape.param(params.conv_a.weights.clone()),
        tape.param(params.conv_a.bias.clone()),
        tape.param(params.bn_a.gamma.clone()),
        tape.param(params.bn_a.beta.clone()),
        tape.param(params.bn_a.mean.clone()),
        tape.param(params.bn_a.variance.clone()),
        tape.param(params.conv_b.weights.clone()),
        tape.param(params.conv_b.bias.clone()),
        tape.param(params.bn_b.gamma.clone()),
        tape.param(params.bn_b.beta.clone()),
        tape.param(params.bn_b.mean.clone()),
        tape.param(params.bn_b.variance.clone()),
        tape.param(params.conv_out.weights.clone()),
        tape.param(params.conv_out.bias.clone()),
    ];

    let cat = tape.concat_channels(n_ego, n_j)?;
    let delta = tape.conv2d(cat, p[0], p[1], 1, 2 * c, 1)?;
    let t = tape.conv2d(delta, p[2], p[3], 3, 1, 1)?;
    let t = tape.batchnorm(t, p[4], p[5], p[6], p[7], BN_EPSILON)?;
    let t = tape.relu(t)?;
    let t = tape.conv2d(t, p[8], p[9], 3, 1, 1)?;
    let t = tape.batchnorm(t, p[10], p[11], p[12], p[13], BN_EPSILON)?;
    let t = tape.sigmoid(t)?;
    let mtilde = tape.add(delta, t)?;

    let weight_map = match forced_weight {
        None => tape.minmax_norm(mtilde, overlap.clone())?,
        Some(m) => {
            if !(0.0..=1.0).contains(&m) {
                return Err(CoreError::rejected("forced weight must be in [0, 1]"));
            }
            let vals: Vec<f64> = overlap.iter().map(|b| if *b { m } else { 0.0 }).collect();
            tape.leaf(vals, (1, h, w))
        }
    };

    let weighted_ego = tape.mul_broadcast(weight_map, n_ego)?;
    let inv_weight = tape.affine(weight_map, -1.0, 1.0)?;
    let weighted_j = tape.mul_broadcast(inv_weight, n_j)?;
    let cat2 = tape.concat_channels(weighted_ego, weighted_j)?;
    let eq_out = tape.conv2d(cat2, p[14], p[15], 1, 2 * c, c)?;
    let masked = tape.mul_mask(eq_out, overlap_f)?;

    // ego passthrough on non-overlap cells
    let mut bypass = vec![0.0; c * hw];
    for ch in 0..c {
        for i in 0..hw {
            if !overlap[i] {
                bypass[ch * hw + i] = reg_ego.values()[ch * hw + i];
            }
        }
    }
    let fused = tape.add_const(masked, &bypass)?;

    Ok(ForwardGraph {
        fused,
        weight_map,
        param_nodes: p,
    })
}

/// Result of complementary fusion: the fused regression map and the
/// weight map M (zero outside the overlap region).
#[derive(Debug, Clone)]
pub struct ComplementaryFusion {
    pub fused: RegressionMap,
    pub weight_map: GridMap,
}

fn run(
    reg_ego: &RegressionMap,
    reg_j: &RegressionMap,
    params: &ComplementaryParams,
    forced_weight: Option<f64>,
) -> Result<ComplementaryFusion> {
    let ego = reg_ego.as_grid();
    let other = reg_j.as_grid();
    let mut tape = Tape::new();
    let graph = forward_on_tape(&mut tape, ego, other, params, forced_weight)?;

    let (c, h, w) = (ego.channels(), ego.height(), ego.width());
    let hw = h * w;
    let tape_fused = tape.value(graph.fused);
    // Re-select non-overlap cells from the ego buffer so the bypass is
    // bit-identical, not merely numerically equal.
    let mut values = tape_fused.to_vec();
    for i in 0..hw {
        if !(ego.validity()[i] && other.validity()[i]) {
            for ch in 0..c {
                values[ch * hw + i] = ego.values()[ch * hw + i];
            }
        }
    }
    let union: Vec<bool> = (0..hw)
        .map(|i| ego.validity()[i] || other.validity()[i])
        .collect();
    let fused_grid = GridMap::from_values(c, h, w, values)?.with_validity(union)?;

    let weight_values = tape.value(graph.weight_map).to_vec();
    let weight_map = GridMap::from_values(1, h, w, weight_values)?;

    Ok(ComplementaryFusion {
        fused: RegressionMap::from_grid(fused_grid)?,
        weight_map,
    })
}

/// Fuse the ego and (warped) sender regression maps with the learned
/// complementary network.
pub fn fuse_reg_complementary(
    reg_ego: &RegressionMap,
    reg_j: &RegressionMap,
    params: &ComplementaryParams,
) -> Result<ComplementaryFusion> {
    run(reg_ego, reg_j, params, None)
}

/// Diagnostic variant that bypasses the weight-map network and uses a
/// constant M on the overlap region.
pub fn fuse_reg_complementary_forced(
    reg_ego: &RegressionMap,
    reg_j: &RegressionMap,
    params: &ComplementaryParams,
    forced_weight: f64,
) -> Result<ComplementaryFusion> {
    run(reg_ego, reg_j, params, Some(forced_weight))
}
