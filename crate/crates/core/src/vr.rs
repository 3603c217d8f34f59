//! Input reprogramming patterns and the interleaved training loop.
//!
//! Each epoch: (1) run the frozen model on reprogrammed inputs, (2) fit or
//! refresh the label mapping, (3) predict through the mapping, (4) take one
//! full-batch gradient step on the pattern under mean cross-entropy.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::{
    self, build_aggregation, build_frequency, greedy_assignment, rlm_fit, top_k_from_alpha,
    LogitsTable, MappingMatrix, Method,
};
use crate::model::SimPretrainedModel;
use crate::numerics::{argmax, cross_entropy, softmax, DenseTable};
use crate::parallel::Workers;
use crate::synth::{central_window, Dataset};

/// Std-dev of the learned linear mapping's Gaussian initialization.
pub const DENSE_INIT_STD: f64 = 1e-3;

pub const DEFAULT_OMEGA_LR: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VrKind {
    Padding,
    Watermark,
    None,
}

impl FromStr for VrKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "padding" => Ok(VrKind::Padding),
            "watermark" => Ok(VrKind::Watermark),
            "none" => Ok(VrKind::None),
            _ => Err(Error::invalid(format!("unknown reprogramming kind '{s}'"))),
        }
    }
}

fn square_side(d: usize, what: &str) -> Result<usize> {
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(Error::invalid(format!("{what} = {d} is not a square image size")));
    }
    Ok(side)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PatternFile {
    kind: VrKind,
    d_s: usize,
    d_t: usize,
    theta: Vec<f64>,
    mask: Vec<u8>,
}

/// A trainable additive perturbation restricted to a binary mask.
///
/// * `Padding` places the downstream image at the centre of the source frame
///   and trains only the surrounding border.
/// * `Watermark` nearest-neighbour resizes the downstream image to the
///   source size and trains every pixel.
/// * `None` passes inputs through unchanged (`d_t` must equal `d_s`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PatternFile", into = "PatternFile")]
pub struct VrPattern {
    kind: VrKind,
    d_s: usize,
    d_t: usize,
    theta: Vec<f64>,
    mask: Vec<bool>,
    // Padding: downstream index -> source index. Watermark/None: source
    // index -> downstream index.
    placement: Vec<usize>,
}

impl VrPattern {
    /// A zero pattern for the given geometry.
    pub fn new(kind: VrKind, d_s: usize, d_t: usize) -> Result<Self> {
        if d_s == 0 || d_t == 0 {
            return Err(Error::invalid("image sizes must be positive"));
        }
        let (mask, placement) = match kind {
            VrKind::Padding => {
                let side_s = square_side(d_s, "d_s")?;
                let side_t = square_side(d_t, "d_t")?;
                if side_t > side_s {
                    return Err(Error::invalid("padding needs d_t <= d_s"));
                }
                let window = central_window(side_s, side_t);
                let mut mask = vec![true; d_s];
                window.iter().for_each(|&j| mask[j] = false);
                (mask, window)
            }
            VrKind::Watermark => {
                let side_s = square_side(d_s, "d_s")?;
                let side_t = square_side(d_t, "d_t")?;
                let placement = (0..d_s)
                    .map(|j| {
                        let (r, c) = (j / side_s, j % side_s);
                        (r * side_t / side_s) * side_t + c * side_t / side_s
                    })
                    .collect();
                (vec![true; d_s], placement)
            }
            VrKind::None => {
                if d_s != d_t {
                    return Err(Error::DimensionMismatch {
                        what: "unreprogrammed input size",
                        expected: d_s,
                        got: d_t,
                    });
                }
                (vec![false; d_s], (0..d_s).collect())
            }
        };
        Ok(Self {
            kind,
            d_s,
            d_t,
            theta: vec![0.0; d_s],
            mask,
            placement,
        })
    }

    pub fn kind(&self) -> VrKind {
        self.kind
    }

    pub fn d_s(&self) -> usize {
        self.d_s
    }

    pub fn d_t(&self) -> usize {
        self.d_t
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Replaces θ; entries outside the mask must be zero.
    pub fn set_theta(&mut self, theta: Vec<f64>) -> Result<()> {
        if theta.len() != self.d_s {
            return Err(Error::DimensionMismatch {
                what: "theta",
                expected: self.d_s,
                got: theta.len(),
            });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if theta.iter().zip(&self.mask).any(|(&v, &m)| !m && v != 0.0) {
            return Err(Error::invalid("theta is nonzero outside the trainable mask"));
        }
        self.theta = theta;
        Ok(())
    }

    pub fn apply(&self, x_t: &[f64]) -> Result<Vec<f64>> {
        if x_t.len() != self.d_t {
            return Err(Error::DimensionMismatch {
                what: "downstream input",
                expected: self.d_t,
                got: x_t.len(),
            });
        }
        Ok(match self.kind {
            VrKind::Padding => {
                let mut out: Vec<f64> = self
                    .theta
                    .iter()
                    .zip(&self.mask)
                    .map(|(&t, &m)| if m { t } else { 0.0 })
                    .collect();
                for (&j, &x) in self.placement.iter().zip(x_t) {
                    out[j] += x;
                }
                out
            }
            VrKind::Watermark => self
                .placement
                .iter()
                .zip(&self.theta)
                .map(|(&i, &t)| x_t[i] + t)
                .collect(),
            VrKind::None => x_t.to_vec(),
        })
    }

    /// Gradient with respect to θ given the gradient with respect to the
    /// reprogrammed input.
    pub fn theta_grad(&self, input_grad: &[f64]) -> Result<Vec<f64>> {
        if input_grad.len() != self.d_s {
            return Err(Error::DimensionMismatch {
                what: "input gradient",
                expected: self.d_s,
                got: input_grad.len(),
            });
        }
        Ok(input_grad
            .iter()
            .zip(&self.mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect())
    }

    fn descend(&mut self, grad: &[f64], lr: f64) {
        for ((t, &g), &m) in self.theta.iter_mut().zip(grad).zip(&self.mask) {
            if m {
                *t -= lr * g;
            }
        }
    }
}

impl TryFrom<PatternFile> for VrPattern {
    type Error = Error;

    fn try_from(f: PatternFile) -> Result<Self> {
        let mut p = VrPattern::new(f.kind, f.d_s, f.d_t)?;
        let mask: Vec<bool> = f.mask.iter().map(|&b| b != 0).collect();
        if mask != p.mask || f.mask.iter().any(|&b| b > 1) {
            return Err(Error::invalid("pattern mask does not match its kind and geometry"));
        }
        p.set_theta(f.theta)?;
        Ok(p)
    }
}

impl From<VrPattern> for PatternFile {
    fn from(p: VrPattern) -> Self {
        PatternFile {
            kind: p.kind,
            d_s: p.d_s,
            d_t: p.d_t,
            mask: p.mask.iter().map(|&m| u8::from(m)).collect(),
            theta: p.theta,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefitMode {
    /// Refit from the logits computed during the previous epoch.
    #[default]
    Quick,
    /// Refit from logits of the current pattern.
    Exact,
}

impl FromStr for RefitMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "quick" => Ok(RefitMode::Quick),
            "exact" => Ok(RefitMode::Exact),
            _ => Err(Error::invalid(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Ablation {
    /// Fit the mapping once in the first epoch and keep it.
    pub no_iter: bool,
    /// Aggregate all `k_s` probabilities instead of the top K.
    pub no_topk: bool,
    /// Replace the Bayesian fit with greedy one-to-one matching.
    pub no_bayes: bool,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let flags: Vec<&str> = [
            (self.no_iter, "no-iter"),
            (self.no_topk, "no-topk"),
            (self.no_bayes, "no-bayes"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, name)| *name)
        .collect();
        if flags.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&flags.join(","))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub milestones: Vec<usize>,
    /// Step size for the learned linear mapping. Its gradient is orders of
    /// magnitude smaller than a unit step, so it does not share `lr`.
    pub omega_lr: f64,
    pub lambda: f64,
    pub alpha: f64,
    pub lm_method: Method,
    pub vr_kind: VrKind,
    pub seed: u64,
    pub mode: RefitMode,
    pub ablation: Ablation,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            lr: 0.01,
            lr_decay: 0.1,
            milestones: vec![100, 145],
            omega_lr: DEFAULT_OMEGA_LR,
            lambda: mapping::DEFAULT_LAMBDA,
            alpha: mapping::DEFAULT_ALPHA,
            lm_method: Method::Blm,
            vr_kind: VrKind::Padding,
            seed: 0,
            mode: RefitMode::Quick,
            ablation: Ablation::default(),
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        // lr = 0 is allowed: it freezes the pattern, which is how the
        // refit paths are compared in isolation.
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::invalid(format!("learning rate must be >= 0, got {}", self.lr)));
        }
        if !self.omega_lr.is_finite() || self.omega_lr < 0.0 {
            return Err(Error::invalid("omega lr must be finite and >= 0"));
        }
        if !self.lr_decay.is_finite() || self.lr_decay < 0.0 {
            return Err(Error::invalid("lr decay must be finite and >= 0"));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::invalid("lambda must be finite and >= 0"));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be finite and >= 0"));
        }
        Ok(())
    }

    fn decay_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| m < epoch).count();
        self.lr_decay.powi(decays as i32)
    }

    /// Step-decayed learning rate for a 1-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.decay_at(epoch)
    }

    /// Step-decayed mapping learning rate. `lr = 0` freezes every
    /// parameter, including the mapping.
    pub fn omega_lr_at(&self, epoch: usize) -> f64 {
        if self.lr == 0.0 {
            0.0
        } else {
            self.omega_lr * self.decay_at(epoch)
        }
    }

    fn refits_at(&self, epoch: usize) -> bool {
        if epoch == 1 {
            return true;
        }
        match self.lm_method {
            Method::Rlm | Method::Flm | Method::Dense => false,
            Method::Ilm => true,
            Method::Blm | Method::BlmPlus => !self.ablation.no_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    /// Frobenius norm of the change in the mapping during this epoch.
    pub omega_delta: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub pattern: VrPattern,
    pub mapping: MappingMatrix,
    pub records: Vec<EpochRecord>,
}

/// Runs the frozen model on every reprogrammed input.
pub fn forward_batch(
    model: &SimPretrainedModel,
    pattern: &VrPattern,
    data: &Dataset,
    workers: &Workers,
) -> Result<LogitsTable> {
    check_geometry(model, pattern, data)?;
    let rows = workers.map(data.n(), |i| model.forward(&pattern.apply(data.input(i))?))?;
    let logits = DenseTable::new(data.n(), model.k_s(), rows.concat())?;
    LogitsTable::new(logits, data.labels().to_vec())
}

fn check_geometry(model: &SimPretrainedModel, pattern: &VrPattern, data: &Dataset) -> Result<()> {
    if pattern.d_s() != model.d_s() {
        return Err(Error::DimensionMismatch {
            what: "pattern output vs model input",
            expected: model.d_s(),
            got: pattern.d_s(),
        });
    }
    if pattern.d_t() != data.d_t() {
        return Err(Error::DimensionMismatch {
            what: "pattern input vs dataset width",
            expected: data.d_t(),
            got: pattern.d_t(),
        });
    }
    Ok(())
}

/// Mean cross-entropy of the mapped logits and its gradients.
#[derive(Debug, Clone)]
pub struct LossGrads {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub theta_grad: Vec<f64>,
    /// Only populated when requested (learned linear mapping).
    pub omega_grad: Option<DenseTable>,
}

struct SampleTerms {
    loss: f64,
    pred: usize,
    theta_grad: Vec<f64>,
    omega_grad: Option<Vec<f64>>,
}

/// Loss and gradients at the pattern that produced `logits`.
pub fn loss_and_grads(
    model: &SimPretrainedModel,
    pattern: &VrPattern,
    data: &Dataset,
    logits: &LogitsTable,
    omega: &DenseTable,
    with_omega_grad: bool,
    workers: &Workers,
) -> Result<LossGrads> {
    check_geometry(model, pattern, data)?;
    let n = data.n();
    if n == 0 {
        return Err(Error::EmptyVector);
    }
    if omega.rows() != model.k_s() || omega.cols() < data.k_t() {
        return Err(Error::DimensionMismatch {
            what: "mapping rows vs model outputs",
            expected: model.k_s(),
            got: omega.rows(),
        });
    }
    let inv_n = 1.0 / n as f64;
    let terms = workers.map(n, |i| {
        let f = logits.row(i);
        let y = data.labels()[i];
        let mapped = omega.left_mul(f)?;
        let loss = cross_entropy(&mapped, y)?;
        let pred = argmax(&mapped)?;
        let mut g = softmax(&mapped)?;
        g[y] -= 1.0;
        g.iter_mut().for_each(|v| *v *= inv_n);
        let upstream = omega.right_mul(&g)?;
        let x_s = pattern.apply(data.input(i))?;
        let theta_grad = pattern.theta_grad(&model.input_grad(&x_s, &upstream)?)?;
        let omega_grad = with_omega_grad.then(|| {
            f.iter()
                .flat_map(|&fs| g.iter().map(move |&gt| fs * gt))
                .collect()
        });
        Ok(SampleTerms {
            loss,
            pred,
            theta_grad,
            omega_grad,
        })
    })?;

    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(n);
    let mut theta_grad = vec![0.0; pattern.d_s()];
    let mut omega_acc = with_omega_grad.then(|| vec![0.0; omega.rows() * omega.cols()]);
    for t in terms {
        loss += t.loss;
        predictions.push(t.pred);
        theta_grad.iter_mut().zip(&t.theta_grad).for_each(|(a, b)| *a += b);
        if let (Some(acc), Some(g)) = (omega_acc.as_mut(), t.omega_grad.as_ref()) {
            acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
    }
    let omega_grad = omega_acc
        .map(|v| DenseTable::new(omega.rows(), omega.cols(), v))
        .transpose()?;
    Ok(LossGrads {
        loss: loss * inv_n,
        predictions,
        theta_grad,
        omega_grad,
    })
}

/// Convenience wrapper: forward pass plus [`loss_and_grads`].
pub fn objective(
    model: &SimPretrainedModel,
    pattern: &VrPattern,
    data: &Dataset,
    omega: &DenseTable,
    with_omega_grad: bool,
) -> Result<LossGrads> {
    let workers = Workers::sequential();
    let logits = forward_batch(model, pattern, data, &workers)?;
    loss_and_grads(model, pattern, data, &logits, omega, with_omega_grad, &workers)
}

/// Predictions and accuracy of a trained pattern + mapping on `data`.
pub fn evaluate(
    model: &SimPretrainedModel,
    pattern: &VrPattern,
    mapping: &MappingMatrix,
    data: &Dataset,
    workers: &Workers,
) -> Result<(Vec<usize>, f64)> {
    let logits = forward_batch(model, pattern, data, workers)?;
    mapping::predict(&logits, mapping)
}

/// Fits the configured gradient-free mapping on a logits table.
pub fn fit_mapping(lt: &LogitsTable, k_t: usize, cfg: &TrainConfig) -> Result<MappingMatrix> {
    let greedy = |table: &DenseTable, method: Method| -> Result<MappingMatrix> {
        let assignment = greedy_assignment(table)?;
        let mut m = MappingMatrix::one_to_one(Method::Flm, lt.k_s(), &assignment)?;
        m.method = method;
        Ok(m)
    };
    match cfg.lm_method {
        Method::Rlm => rlm_fit(lt.k_s(), k_t, cfg.seed),
        Method::Flm | Method::Ilm => greedy(&build_frequency(lt, k_t)?.table, cfg.lm_method),
        Method::Blm => {
            let fm = build_frequency(lt, k_t)?;
            if cfg.ablation.no_bayes {
                greedy(&fm.table, Method::Blm)
            } else {
                mapping::blm_fit(&fm, cfg.lambda)
            }
        }
        Method::BlmPlus => {
            let k_top = if cfg.ablation.no_topk {
                lt.k_s()
            } else {
                top_k_from_alpha(cfg.alpha, k_t, lt.k_s())
            };
            let am = build_aggregation(lt, k_t, k_top)?;
            let mut m = if cfg.ablation.no_bayes {
                greedy(&am.table, Method::BlmPlus)?
            } else {
                mapping::blm_plus_fit(&am, cfg.lambda)?
            };
            m.alpha = Some(cfg.alpha);
            Ok(m)
        }
        Method::Dense => Err(Error::invalid(
            "the dense mapping is learned by gradient descent, not fitted",
        )),
    }
}

fn diverged(err: Error, epoch: usize, records: &[EpochRecord]) -> Error {
    match err {
        Error::NonFinite => Error::NonFiniteLoss {
            epoch,
            records: records.to_vec(),
        },
        other => other,
    }
}

fn check_inputs(train: &Dataset, test: &Dataset, model: &SimPretrainedModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    if train.n() == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if train.k_t() != test.k_t() || train.d_t() != test.d_t() {
        return Err(Error::invalid("train and test sets disagree on shape"));
    }
    if train.k_t() > model.k_s() && cfg.lm_method != Method::Dense {
        return Err(Error::InsufficientLabels {
            k_s: model.k_s(),
            k_t: train.k_t(),
        });
    }
    Ok(())
}

/// Interleaved pattern training with a gradient-free mapping.
pub fn run_training(
    train: &Dataset,
    test: &Dataset,
    model: &SimPretrainedModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if cfg.lm_method == Method::Dense {
        return run_dense_baseline(train, test, model, cfg);
    }
    check_inputs(train, test, model, cfg)?;
    let workers = Workers::new(cfg.threads);
    let k_t = train.k_t();
    let mut pattern = VrPattern::new(cfg.vr_kind, model.d_s(), train.d_t())?;
    let mut mapping: Option<MappingMatrix> = None;
    let mut previous_logits: Option<LogitsTable> = None;
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut step = || -> Result<EpochRecord> {
            let logits = forward_batch(model, &pattern, train, &workers)?;
            let mut delta = 0.0;
            if cfg.refits_at(epoch) {
                let source = match (cfg.mode, &previous_logits) {
                    (RefitMode::Quick, Some(prev)) => prev,
                    _ => &logits,
                };
                let fitted = fit_mapping(source, k_t, cfg)?;
                delta = match &mapping {
                    Some(old) => fitted.omega().frobenius_distance(old.omega())?,
                    None => fitted.omega().frobenius_distance(&DenseTable::zeros(model.k_s(), k_t))?,
                };
                mapping = Some(fitted);
            }
            let current = mapping.as_ref().expect("fitted in the first epoch");
            let lg = loss_and_grads(model, &pattern, train, &logits, current.omega(), false, &workers)?;
            if !lg.loss.is_finite() {
                return Err(Error::NonFinite);
            }
            let train_acc = mapping::accuracy(&lg.predictions, train.labels());
            pattern.descend(&lg.theta_grad, cfg.lr_at(epoch));
            if pattern.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let (_, test_acc) = evaluate(model, &pattern, current, test, &workers)?;
            previous_logits = Some(logits);
            Ok(EpochRecord {
                epoch,
                loss: lg.loss,
                train_acc,
                test_acc,
                omega_delta: delta,
            })
        };
        let record = step().map_err(|e| diverged(e, epoch, &records))?;
        records.push(record);
    }

    Ok(TrainOutcome {
        pattern,
        mapping: mapping.expect("at least one epoch"),
        records,
    })
}

/// Seeded initial table for the learned linear mapping.
pub fn dense_init(k_s: usize, k_t: usize, seed: u64) -> DenseTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..k_s * k_t)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            DENSE_INIT_STD * z
        })
        .collect();
    DenseTable::new(k_s, k_t, values).expect("finite init")
}

/// Baseline where the mapping is an unconstrained linear layer trained
/// jointly with the pattern.
pub fn run_dense_baseline(
    train: &Dataset,
    test: &Dataset,
    model: &SimPretrainedModel,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    check_inputs(train, test, model, cfg)?;
    let workers = Workers::new(cfg.threads);
    let k_t = train.k_t();
    let mut pattern = VrPattern::new(cfg.vr_kind, model.d_s(), train.d_t())?;
    let mut omega = dense_init(model.k_s(), k_t, cfg.seed);
    let mut records = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let mut step = || -> Result<EpochRecord> {
            let logits = forward_batch(model, &pattern, train, &workers)?;
            let lg = loss_and_grads(model, &pattern, train, &logits, &omega, true, &workers)?;
            if !lg.loss.is_finite() {
                return Err(Error::NonFinite);
            }
            let train_acc = mapping::accuracy(&lg.predictions, train.labels());
            pattern.descend(&lg.theta_grad, cfg.lr_at(epoch));
            let omega_lr = cfg.omega_lr_at(epoch);
            let grad = lg.omega_grad.expect("requested omega gradient");
            let updated: Vec<f64> = omega
                .values()
                .iter()
                .zip(grad.values())
                .map(|(w, g)| w - omega_lr * g)
                .collect();
            let updated = DenseTable::new(omega.rows(), omega.cols(), updated)?;
            if pattern.theta.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let delta = updated.frobenius_distance(&omega)?;
            omega = updated;
            let current = MappingMatrix::dense(omega.clone());
            let (_, test_acc) = evaluate(model, &pattern, &current, test, &workers)?;
            Ok(EpochRecord {
                epoch,
                loss: lg.loss,
                train_acc,
                test_acc,
                omega_delta: delta,
            })
        };
        let record = step().map_err(|e| diverged(e, epoch, &records))?;
        records.push(record);
    }

    Ok(TrainOutcome {
        pattern,
        mapping: MappingMatrix::dense(omega),
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::synth::{generate_task, SubclassTaskSpec};

    #[test]
    fn zero_padding_embeds() {
        let p = VrPattern::new(VrKind::Padding, 16, 4).unwrap();
        let out = p.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut want = vec![0.0; 16];
        want[5] = 1.0;
        want[6] = 2.0;
        want[9] = 3.0;
        want[10] = 4.0;
        assert_eq!(out, want);
        assert_eq!(p.mask().iter().filter(|&&m| m).count(), 12);
    }

    #[test]
    fn watermark_same_size_adds_constant() {
        let mut p = VrPattern::new(VrKind::Watermark, 4, 4).unwrap();
        p.set_theta(vec![0.5; 4]).unwrap();
        assert_eq!(p.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap(), vec![1.5, 2.5, 3.5, 4.5]);
        let g = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(p.theta_grad(&g).unwrap(), g.to_vec());
    }

    #[test]
    fn watermark_nearest_neighbour_resize() {
        let p = VrPattern::new(VrKind::Watermark, 16, 4).unwrap();
        let out = p.apply(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(
            out,
            vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn full_frame_padding_is_identity() {
        let mut p = VrPattern::new(VrKind::Padding, 9, 9).unwrap();
        assert!(p.mask().iter().all(|&m| !m));
        assert!(p.set_theta(vec![1.0; 9]).is_err());
        let x: Vec<f64> = (0..9).map(f64::from).collect();
        assert_eq!(p.apply(&x).unwrap(), x);
    }

    #[test]
    fn padding_grad_zero_in_centre() {
        let p = VrPattern::new(VrKind::Padding, 16, 4).unwrap();
        let g = p.theta_grad(&[1.0; 16]).unwrap();
        for j in [5, 6, 9, 10] {
            assert_eq!(g[j], 0.0);
        }
        assert_eq!(g.iter().sum::<f64>(), 12.0);
    }

    #[test]
    fn pattern_geometry_errors() {
        assert!(VrPattern::new(VrKind::Padding, 15, 4).is_err());
        assert!(VrPattern::new(VrKind::Padding, 4, 16).is_err());
        assert!(VrPattern::new(VrKind::None, 4, 9).is_err());
        let p = VrPattern::new(VrKind::Padding, 16, 4).unwrap();
        assert!(p.apply(&[1.0; 3]).is_err());
        assert!(p.theta_grad(&[1.0; 4]).is_err());
    }

    #[test]
    fn pattern_json() {
        let mut p = VrPattern::new(VrKind::Padding, 16, 4).unwrap();
        let mut theta = vec![0.25; 16];
        for j in [5, 6, 9, 10] {
            theta[j] = 0.0;
        }
        p.set_theta(theta).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.starts_with(r#"{"kind":"padding","d_s":16,"d_t":4,"theta":["#));
        let back: VrPattern = serde_json::from_str(&s).unwrap();
        assert_eq!(back, p);
        let tampered = s.replacen("\"mask\":[1", "\"mask\":[0", 1);
        assert!(serde_json::from_str::<VrPattern>(&tampered).is_err());
    }

    #[test]
    fn lr_schedule() {
        let cfg = TrainConfig::default();
        assert_eq!(cfg.lr_at(1), 0.01);
        assert_eq!(cfg.lr_at(100), 0.01);
        assert!((cfg.lr_at(101) - 0.001).abs() < 1e-18);
        assert!((cfg.lr_at(146) - 0.0001).abs() < 1e-18);
    }

    fn small_task() -> (Dataset, Dataset, SimPretrainedModel) {
        let spec = SubclassTaskSpec {
            k_s: 12,
            k_t: 3,
            m: 2,
            side_s: 6,
            side_t: 4,
            n_train: 30,
            n_test: 12,
            seed: 5,
            ..Default::default()
        };
        let t = generate_task(&spec).unwrap();
        (t.train, t.test, t.model)
    }

    #[test]
    fn zero_lr_single_epoch_matches_direct_fit() {
        let (train, test, model) = small_task();
        let cfg = TrainConfig { epochs: 1, lr: 0.0, ..Default::default() };
        let out = run_training(&train, &test, &model, &cfg).unwrap();
        assert!(out.pattern.theta().iter().all(|&t| t == 0.0));
        let zero = VrPattern::new(VrKind::Padding, model.d_s(), train.d_t()).unwrap();
        let lt = forward_batch(&model, &zero, &train, &Workers::sequential()).unwrap();
        let direct = mapping::blm_fit(&build_frequency(&lt, 3).unwrap(), 1.0).unwrap();
        assert_eq!(out.mapping, direct);
    }

    #[test]
    fn one_to_one_methods_stay_fixed() {
        let (train, test, model) = small_task();
        for method in [Method::Rlm, Method::Flm] {
            let one = TrainConfig { epochs: 1, lm_method: method, lr: 0.5, ..Default::default() };
            let many = TrainConfig { epochs: 15, ..one.clone() };
            let a = run_training(&train, &test, &model, &one).unwrap();
            let b = run_training(&train, &test, &model, &many).unwrap();
            assert_eq!(a.mapping, b.mapping);
            assert!(b.records[1..].iter().all(|r| r.omega_delta == 0.0));
        }
    }

    #[test]
    fn masked_theta_stays_zero() {
        let (train, test, model) = small_task();
        let cfg = TrainConfig { epochs: 20, lr: 1.0, ..Default::default() };
        let out = run_training(&train, &test, &model, &cfg).unwrap();
        for (&t, &m) in out.pattern.theta().iter().zip(out.pattern.mask()) {
            if !m {
                assert_eq!(t.to_bits(), 0.0f64.to_bits());
            }
        }
        assert!(out.pattern.theta().iter().any(|&t| t != 0.0));
    }

    #[test]
    fn divergence_reports_partial_records() {
        let (train, test, model) = small_task();
        // Huge weights keep the first forward pass finite but overflow as
        // soon as the pattern moves.
        let w = &model.weights()[0];
        let scaled = w.values().iter().map(|v| v * 1e300).collect();
        let weights = vec![DenseTable::new(w.rows(), w.cols(), scaled).unwrap()];
        let model = SimPretrainedModel::from_parts(Arch::Linear, 0, weights, vec![vec![0.0; 12]]).unwrap();
        let cfg = TrainConfig { epochs: 10, lr: 1e-290, vr_kind: VrKind::Watermark, ..Default::default() };
        match run_training(&train, &test, &model, &cfg) {
            Err(Error::NonFiniteLoss { epoch, records }) => {
                assert_eq!(epoch, 1);
                assert!(records.is_empty());
            }
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn threads_do_not_change_results() {
        let (train, test, model) = small_task();
        let base = TrainConfig { epochs: 5, lr: 0.3, mode: RefitMode::Exact, ..Default::default() };
        let a = run_training(&train, &test, &model, &base).unwrap();
        let b = run_training(&train, &test, &model, &TrainConfig { threads: 3, ..base }).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.mapping, b.mapping);
        assert_eq!(a.pattern, b.pattern);
    }

    #[test]
    fn dense_zero_lr_keeps_init() {
        let (train, test, model) = small_task();
        let cfg = TrainConfig { epochs: 3, lr: 0.0, lm_method: Method::Dense, ..Default::default() };
        let out = run_training(&train, &test, &model, &cfg).unwrap();
        assert_eq!(out.mapping.omega(), &dense_init(model.k_s(), 3, cfg.seed));
        assert_eq!(out.mapping.method, Method::Dense);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: -1.0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..Default::default() }.validate().is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }

    #[test]
    fn mlp_model_trains() {
        let (train, test, _) = small_task();
        let model = SimPretrainedModel::make(Arch::Mlp1, 36, 12, 2, None).unwrap();
        let cfg = TrainConfig { epochs: 3, lm_method: Method::BlmPlus, ..Default::default() };
        let out = run_training(&train, &test, &model, &cfg).unwrap();
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.mapping.alpha, Some(0.15));
    }
}
