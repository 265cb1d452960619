//! Training loop for the complementary fusion network: Adam, batch size 1,
//! smooth-L1 loss on positive-anchor cells.

use super::complementary::{forward_on_tape, ComplementaryParams};
use crate::error::{CoreError, Result};
use crate::heads::{ClassificationMap, RegressionMap, REG_TARGETS};
use crate::tensor::tape::Tape;

/// One training example: ego and warped sender maps plus the ground-truth
/// regression map, with per-anchor positive flags derived from the
/// ground-truth classification map.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub reg_ego: RegressionMap,
    pub reg_j: RegressionMap,
    pub reg_gt: RegressionMap,
    /// Anchor-major positive flags, length anchors * H * W.
    pub positive: Vec<bool>,
}

impl TrainSample {
    pub fn new(
        reg_ego: RegressionMap,
        reg_j: RegressionMap,
        reg_gt: RegressionMap,
        cls_gt: &ClassificationMap,
    ) -> Result<Self> {
        if !reg_ego.as_grid().same_shape(reg_j.as_grid())
            || !reg_ego.as_grid().same_shape(reg_gt.as_grid())
        {
            return Err(CoreError::rejected("training sample map shapes differ"));
        }
        if cls_gt.anchors() != reg_ego.anchors() {
            return Err(CoreError::rejected(
                "classification map anchor count does not match regression maps",
            ));
        }
        let g = cls_gt.as_grid();
        let positive = g.values().iter().map(|v| *v >= 0.5).collect();
        Ok(TrainSample {
            reg_ego,
            reg_j,
            reg_gt,
            positive,
        })
    }

    /// Expand the per-anchor flags into per-channel smooth-L1 weights.
    fn loss_weights(&self) -> Vec<f64> {
        let g = self.reg_ego.as_grid();
        let hw = g.height() * g.width();
        let anchors = self.reg_ego.anchors();
        let mut weights = vec![0.0; g.channels() * hw];
        for a in 0..anchors {
            for i in 0..hw {
                if self.positive[a * hw + i] {
                    for k in 0..REG_TARGETS {
                        weights[(a * REG_TARGETS + k) * hw + i] = 1.0;
                    }
                }
            }
        }
        weights
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Adam {
    cfg: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(cfg: AdamConfig, n: usize) -> Self {
        Adam {
            cfg,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let b1t = 1.0 - self.cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.cfg.beta1 * self.m[i] + (1.0 - self.cfg.beta1) * grads[i];
            self.v[i] = self.cfg.beta2 * self.v[i] + (1.0 - self.cfg.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.epsilon);
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Mean per-sample loss of each epoch, evaluated as samples are visited.
    pub epoch_losses: Vec<f64>,
}

pub const SMOOTH_L1_BETA: f64 = 1.0;

fn sample_loss_and_grad(
    params: &ComplementaryParams,
    sample: &TrainSample,
    want_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let mut tape = Tape::new();
    let graph = forward_on_tape(
        &mut tape,
        sample.reg_ego.as_grid(),
        sample.reg_j.as_grid(),
        params,
        None,
    )?;
    let loss_node = tape.smooth_l1(
        graph.fused,
        sample.reg_gt.as_grid().values().to_vec(),
        sample.loss_weights(),
        SMOOTH_L1_BETA,
    )?;
    let loss = tape.scalar(loss_node)?;
    if !loss.is_finite() {
        return Err(CoreError::TrainingDiverged(format!("loss = {loss}")));
    }
    if !want_grad {
        return Ok((loss, None));
    }
    let grads = tape.backward(loss_node)?;
    let mut flat = Vec::with_capacity(ComplementaryParams::flat_len(params.reg_channels()));
    for node in graph.param_nodes {
        flat.extend_from_slice(grads.get(node));
    }
    Ok((loss, Some(flat)))
}

/// Mean loss over a dataset without updating parameters.
pub fn dataset_loss(params: &ComplementaryParams, dataset: &[TrainSample]) -> Result<f64> {
    let mut total = 0.0;
    for s in dataset {
        total += sample_loss_and_grad(params, s, false)?.0;
    }
    Ok(total / dataset.len() as f64)
}

/// Smooth-L1 loss of one sample.
pub fn sample_loss(params: &ComplementaryParams, sample: &TrainSample) -> Result<f64> {
    Ok(sample_loss_and_grad(params, sample, false)?.0)
}

/// Loss and its gradient with respect to the flat parameter vector (the
/// `ComplementaryParams::flatten` layout).
pub fn sample_gradient(
    params: &ComplementaryParams,
    sample: &TrainSample,
) -> Result<(f64, Vec<f64>)> {
    let (loss, grad) = sample_loss_and_grad(params, sample, true)?;
    Ok((loss, grad.expect("gradient requested")))
}

/// Train the complementary fusion parameters with Adam at batch size 1.
///
/// Batch norm running statistics are treated as ordinary trainable
/// parameters; variances are clamped to stay non-negative after each step.
pub fn train_complementary(
    params: &ComplementaryParams,
    dataset: &[TrainSample],
    epochs: usize,
    lr: f64,
) -> Result<(ComplementaryParams, TrainReport)> {
    if dataset.is_empty() {
        return Err(CoreError::usage("training dataset is empty"));
    }
    if lr <= 0.0 {
        return Err(CoreError::usage("learning rate must be positive"));
    }
    params.validate()?;
    let c = params.reg_channels();
    for s in dataset {
        if s.reg_ego.as_grid().channels() != c {
            return Err(CoreError::rejected(
                "training sample channel count does not match parameters",
            ));
        }
    }

    let initial_loss = dataset_loss(params, dataset)?;
    let mut flat = params.flatten();
    let mut adam = Adam::new(AdamConfig::with_lr(lr), flat.len());
    let var_idx = ComplementaryParams::variance_indices(c);
    let mut epoch_losses = Vec::with_capacity(epochs);
    let mut current = params.clone();

    for _ in 0..epochs {
        let mut epoch_total = 0.0;
        for sample in dataset {
            let (loss, grad) = sample_loss_and_grad(&current, sample, true)?;
            epoch_total += loss;
            adam.step(&mut flat, &grad.expect("gradient requested"));
            for idx in var_idx {
                if flat[idx] < 0.0 {
                    flat[idx] = 0.0;
                }
            }
            current = ComplementaryParams::from_flat(c, &flat)?;
        }
        epoch_losses.push(epoch_total / dataset.len() as f64);
    }

    let final_loss = dataset_loss(&current, dataset)?;
    Ok((
        current,
        TrainReport {
            initial_loss,
            final_loss,
            epoch_losses,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;
    use crate::tensor::GridMap;

    fn reg_from(values: Vec<f64>, c: usize, h: usize, w: usize, validity: Vec<bool>) -> RegressionMap {
        RegressionMap::from_grid(
            GridMap::from_values(c, h, w, values)
                .unwrap()
                .with_validity(validity)
                .unwrap(),
        )
        .unwrap()
    }

    fn random_sample(rng: &mut DetRng, h: usize, w: usize) -> TrainSample {
        let c = REG_TARGETS; // one anchor
        let hw = h * w;
        let values = |rng: &mut DetRng| (0..c * hw).map(|_| rng.range_f64(-0.4, 0.4)).collect();
        let reg_ego = reg_from(values(rng), c, h, w, vec![true; hw]);
        let reg_j = reg_from(values(rng), c, h, w, vec![true; hw]);
        let reg_gt = reg_from(values(rng), c, h, w, vec![true; hw]);
        let mut cls = GridMap::zeros(1, h, w);
        for _ in 0..4 {
            cls.set(0, rng.next_usize(h), rng.next_usize(w), 1.0);
        }
        TrainSample::new(
            reg_ego,
            reg_j,
            reg_gt,
            &crate::heads::ClassificationMap::from_grid(cls).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn bypass_only_dataset_keeps_params_and_zero_loss() {
        let mut rng = DetRng::new(51);
        let c = REG_TARGETS;
        let hw = 16;
        let values: Vec<f64> = (0..c * hw).map(|_| rng.range_f64(-0.5, 0.5)).collect();
        let reg_ego = reg_from(values.clone(), c, 4, 4, vec![true; hw]);
        // sender map entirely invalid: overlap empty
        let reg_j = reg_from(vec![0.0; c * hw], c, 4, 4, vec![false; hw]);
        let reg_gt = reg_from(values, c, 4, 4, vec![true; hw]);
        let mut cls = GridMap::zeros(1, 4, 4);
        cls.set(0, 1, 1, 1.0);
        cls.set(0, 2, 3, 1.0);
        let sample = TrainSample::new(
            reg_ego,
            reg_j,
            reg_gt,
            &crate::heads::ClassificationMap::from_grid(cls).unwrap(),
        )
        .unwrap();
        let params = ComplementaryParams::init(c, 7).unwrap();
        let (trained, report) = train_complementary(&params, &[sample], 5, 1e-3).unwrap();
        assert_eq!(report.initial_loss, 0.0);
        assert_eq!(report.final_loss, 0.0);
        assert_eq!(trained, params);
    }

    #[test]
    fn single_sample_converges() {
        let mut rng = DetRng::new(52);
        let sample = random_sample(&mut rng, 6, 6);
        let params = ComplementaryParams::init(REG_TARGETS, 3).unwrap();
        let (_, report) = train_complementary(&params, &[sample], 200, 1e-3).unwrap();
        assert!(report.initial_loss > 0.0);
        assert!(
            report.final_loss < 0.5 * report.initial_loss,
            "loss {} -> {}",
            report.initial_loss,
            report.final_loss
        );
    }

    #[test]
    fn final_loss_not_above_initial_on_small_set() {
        let mut rng = DetRng::new(53);
        let dataset: Vec<TrainSample> = (0..3).map(|_| random_sample(&mut rng, 5, 5)).collect();
        let params = ComplementaryParams::init(REG_TARGETS, 4).unwrap();
        let (_, report) = train_complementary(&params, &dataset, 40, 1e-3).unwrap();
        assert!(report.final_loss <= report.initial_loss);
    }

    #[test]
    fn empty_dataset_rejected() {
        let params = ComplementaryParams::init(7, 1).unwrap();
        assert!(train_complementary(&params, &[], 1, 1e-3).is_err());
        let mut rng = DetRng::new(54);
        let sample = random_sample(&mut rng, 4, 4);
        assert!(train_complementary(&params, &[sample], 1, 0.0).is_err());
    }

    /// Every parameter gradient matches central finite differences.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = DetRng::new(55);
        for trial in 0..3 {
            let sample = random_sample(&mut rng, 4, 5);
            let mut params = ComplementaryParams::init(REG_TARGETS, 60 + trial).unwrap();
            params.bn_a.mean[0] = 0.1;
            params.bn_b.variance[0] = 0.8;
            let (_, grad) = sample_loss_and_grad(&params, &sample, true).unwrap();
            let grad = grad.unwrap();
            let flat = params.flatten();
            let step = 1e-5;
            for i in 0..flat.len() {
                let mut plus = flat.clone();
                plus[i] += step;
                let mut minus = flat.clone();
                minus[i] -= step;
                let lp = sample_loss_and_grad(
                    &ComplementaryParams::from_flat(REG_TARGETS, &plus).unwrap(),
                    &sample,
                    false,
                )
                .unwrap()
                .0;
                let lm = sample_loss_and_grad(
                    &ComplementaryParams::from_flat(REG_TARGETS, &minus).unwrap(),
                    &sample,
                    false,
                )
                .unwrap()
                .0;
                let fd = (lp - lm) / (2.0 * step);
                let a = grad[i];
                let denom = a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    (a - fd).abs() / denom < 1e-4,
                    "param {i}: analytic {a} vs fd {fd}"
                );
            }
        }
    }
}
