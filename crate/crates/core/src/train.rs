//! Local objectives, analytic gradients and the per-client fitting loop.
//!
//! Both learners minimise mean softmax cross-entropy plus `λ·Σ W²` over the
//! weight matrices; biases are not penalised. Fitting is full-batch gradient
//! descent with step halving, repeated for `local_epochs` passes.

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, Activation, LrParams, MlpParams, ModelKind, ParamVec, Params};
use crate::rng::Stream;

/// Maximum number of step halvings tried before a step is abandoned.
pub const MAX_HALVINGS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub local_epochs: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub max_inner_iters: usize,
    pub grad_tolerance: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            local_epochs: 2,
            learning_rate: 0.5,
            l2_lambda: 1e-4,
            max_inner_iters: 50,
            grad_tolerance: 1e-6,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Param("local_epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Param("learning_rate must be positive".into()));
        }
        if !(self.l2_lambda >= 0.0 && self.l2_lambda.is_finite()) {
            return Err(Error::Param("l2_lambda must be non-negative".into()));
        }
        if self.max_inner_iters == 0 {
            return Err(Error::Param("max_inner_iters must be >= 1".into()));
        }
        if !(self.grad_tolerance > 0.0) {
            return Err(Error::Param("grad_tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// Architecture needed to create fresh parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl ModelSpec {
    /// Zeros for LR, Glorot-uniform for MLP.
    pub fn init(&self, seed: u64) -> Params {
        match self.kind {
            ModelKind::Lr => Params::Lr(LrParams::zeros(self.num_classes, self.feature_dim)),
            ModelKind::Mlp => {
                let mut rng = Stream::seed_from_u64(seed);
                Params::Mlp(MlpParams::glorot(
                    self.feature_dim,
                    &self.hidden,
                    self.num_classes,
                    self.activation,
                    &mut rng,
                ))
            }
        }
    }
}

/// Starting point for [`fit_local`].
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    From(&'a Params),
    Fresh(&'a ModelSpec),
}

fn check_batch(x: ArrayView2<f64>, y: &[usize], num_classes: usize) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Param("empty shard".into()));
    }
    if x.nrows() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.nrows(), y.len())));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= num_classes) {
        return Err(Error::Param(format!("label {bad} outside [0, {num_classes})")));
    }
    Ok(())
}

/// Mean cross-entropy of `logits` against `y`, and `(softmax − onehot)/n`.
fn cross_entropy(logits: &Array2<f64>, y: &[usize]) -> (f64, Array2<f64>) {
    let n = y.len() as f64;
    let mut probs = logits.clone();
    let mut total = 0.0;
    for (mut row, &label) in probs.axis_iter_mut(Axis(0)).zip(y) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[label];
        row.mapv_inplace(|v| (v - lse).exp());
        row[label] -= 1.0;
        row /= n;
    }
    (total / n, probs)
}

fn sq_norm(w: &Array2<f64>) -> f64 {
    w.iter().map(|v| v * v).sum()
}

pub fn lr_loss_grad(params: &LrParams, x: ArrayView2<f64>, y: &[usize], l2_lambda: f64) -> Result<(f64, ParamVec)> {
    check_batch(x, y, params.num_classes())?;
    let logits = model::lr_logits(params, x)?;
    let (ce, g) = cross_entropy(&logits, y);
    let loss = ce + l2_lambda * sq_norm(&params.weights);
    let dw = g.t().dot(&x) + &(&params.weights * (2.0 * l2_lambda));
    let db = g.sum_axis(Axis(0));
    let mut values = Vec::with_capacity(dw.len() + db.len());
    values.extend(dw.iter());
    values.extend(db.iter());
    let layout = Params::Lr(params.clone()).layout();
    Ok((loss, ParamVec { values, layout }))
}

pub fn mlp_loss_grad(params: &MlpParams, x: ArrayView2<f64>, y: &[usize], l2_lambda: f64) -> Result<(f64, ParamVec)> {
    check_batch(x, y, params.num_classes())?;
    let trace = model::mlp_trace(params, x)?;
    let (ce, mut delta) = cross_entropy(&trace.output, y);
    let penalty: f64 = params.weights.iter().map(sq_norm).sum();
    let loss = ce + l2_lambda * penalty;

    let layers = params.num_layers();
    let mut grads_w = vec![Array2::zeros((0, 0)); layers];
    let mut grads_b = vec![ndarray::Array1::zeros(0); layers];
    for l in (0..layers).rev() {
        let input = if l == 0 { x } else { trace.post[l - 1].view() };
        grads_w[l] = input.t().dot(&delta) + &(&params.weights[l] * (2.0 * l2_lambda));
        grads_b[l] = delta.sum_axis(Axis(0));
        if l > 0 {
            let mut back = delta.dot(&params.weights[l].t());
            let act = params.activation;
            ndarray::Zip::from(&mut back)
                .and(&trace.pre[l - 1])
                .and(&trace.post[l - 1])
                .for_each(|d, &t, &h| *d *= act.derivative(t, h));
            delta = back;
        }
    }
    let mut values = Vec::with_capacity(params.weights.iter().map(|w| w.len() + w.ncols()).sum());
    for (w, b) in grads_w.iter().zip(&grads_b) {
        values.extend(w.iter());
        values.extend(b.iter());
    }
    let layout = Params::Mlp(params.clone()).layout();
    Ok((loss, ParamVec { values, layout }))
}

pub fn loss_grad(params: &Params, x: ArrayView2<f64>, y: &[usize], l2_lambda: f64) -> Result<(f64, ParamVec)> {
    match params {
        Params::Lr(p) => lr_loss_grad(p, x, y, l2_lambda),
        Params::Mlp(p) => mlp_loss_grad(p, x, y, l2_lambda),
    }
}

/// Objective value only.
pub fn loss(params: &Params, x: ArrayView2<f64>, y: &[usize], l2_lambda: f64) -> Result<f64> {
    check_batch(x, y, params.num_classes())?;
    let logits = params.logits(x)?;
    let (ce, _) = cross_entropy(&logits, y);
    let penalty: f64 = match params {
        Params::Lr(p) => sq_norm(&p.weights),
        Params::Mlp(p) => p.weights.iter().map(sq_norm).sum(),
    };
    Ok(ce + l2_lambda * penalty)
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub params: Params,
    /// Objective at the start and after every accepted step.
    pub losses: Vec<f64>,
    pub steps: usize,
}

/// Full-batch gradient descent, `local_epochs` passes of at most
/// `max_inner_iters` steps each. A pass ends early once the gradient's
/// infinity norm drops below `grad_tolerance`. A step that would raise the
/// loss is halved, up to [`MAX_HALVINGS`] times; if none is accepted,
/// training stops. `seed` only matters for a fresh MLP initialisation.
pub fn fit_local(
    init: Init<'_>,
    x: ArrayView2<f64>,
    y: &[usize],
    config: &TrainConfig,
    seed: u64,
    client: usize,
) -> Result<FitReport> {
    config.validate()?;
    let start = match init {
        Init::From(p) => p.clone(),
        Init::Fresh(spec) => spec.init(seed),
    };
    let diverged = || Error::Diverged { client };
    let (mut current, mut grad) = match loss_grad(&start, x, y, config.l2_lambda) {
        Ok((l, g)) if l.is_finite() => (l, g),
        Ok(_) | Err(Error::NonFinite(_)) => return Err(diverged()),
        Err(e) => return Err(e),
    };
    let mut flat = start.flatten();
    let mut params = start;
    let mut losses = vec![current];
    let mut steps = 0;

    'epochs: for _ in 0..config.local_epochs {
        for _ in 0..config.max_inner_iters {
            let inf_norm = grad.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if inf_norm < config.grad_tolerance {
                break;
            }
            let mut step = config.learning_rate;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let values: Vec<f64> = flat.values.iter().zip(&grad.values).map(|(p, g)| p - step * g).collect();
                let cand_flat = flat.with_values(values)?;
                let cand = Params::unflatten(&cand_flat)?;
                match loss_grad(&cand, x, y, config.l2_lambda) {
                    Ok((l, g)) if l.is_finite() && l <= current => {
                        accepted = Some((cand_flat, cand, l, g));
                        break;
                    }
                    Ok(_) | Err(Error::NonFinite(_)) => step *= 0.5,
                    Err(e) => return Err(e),
                }
            }
            let Some((f, p, l, g)) = accepted else {
                break 'epochs;
            };
            flat = f;
            params = p;
            current = l;
            grad = g;
            losses.push(l);
            steps += 1;
        }
    }
    if !flat.is_finite() {
        return Err(diverged());
    }
    Ok(FitReport { params, losses, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_blobs, Dataset};
    use ndarray::array;

    #[test]
    fn zero_lr_loss_is_ln_c() {
        let p = LrParams::zeros(3, 2);
        let x = array![[1.0, 2.0], [-1.0, 0.5], [0.0, 0.0]];
        let (l, _) = lr_loss_grad(&p, x.view(), &[0, 1, 2], 0.3).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn saturated_margin_loss_vanishes() {
        let p = LrParams {
            weights: array![[100.0], [-100.0]],
            bias: array![0.0, 0.0],
        };
        let (l, _) = lr_loss_grad(&p, array![[1.0]].view(), &[0], 0.0).unwrap();
        assert!(l < 1e-80);
    }

    #[test]
    fn zero_mlp_output_bias_gradient() {
        let p = MlpParams::zeros(2, &[3], 3, Activation::Tanh);
        let x = array![[1.0, 2.0], [0.5, -1.0], [3.0, 0.0], [1.0, 1.0]];
        let y = [0, 0, 2, 1];
        let (l, g) = mlp_loss_grad(&p, x.view(), &y, 0.0).unwrap();
        assert!((l - 3f64.ln()).abs() < 1e-15);
        let b_out = &g.values[g.len() - 3..];
        let expected = [1.0 / 3.0 - 0.5, 1.0 / 3.0 - 0.25, 1.0 / 3.0 - 0.25];
        for (a, e) in b_out.iter().zip(expected) {
            assert!((a - e).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_shard_is_an_error() {
        let p = LrParams::zeros(2, 1);
        let x = Array2::<f64>::zeros((0, 1));
        assert!(lr_loss_grad(&p, x.view(), &[], 0.0).is_err());
    }

    #[test]
    fn tiny_learning_rate_leaves_params() {
        let ds = generate_blobs(2, 3, 5, 2.0, 1).unwrap();
        let init = Params::Lr(LrParams::zeros(2, 3));
        let cfg = TrainConfig {
            learning_rate: 1e-14,
            grad_tolerance: 1e-20,
            max_inner_iters: 5,
            ..TrainConfig::default()
        };
        let rep = fit_local(Init::From(&init), ds.features().view(), ds.labels(), &cfg, 0, 0).unwrap();
        assert!((rep.losses.last().unwrap() - rep.losses[0]).abs() < 1e-9);
        let moved = rep
            .params
            .flatten()
            .values
            .iter()
            .zip(init.flatten().values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved < 1e-9);
    }

    /// Two clusters split by the plane x0 = 0 with margin at least 1.
    fn separable(n_per_class: usize, seed: u64) -> Dataset {
        let raw = generate_blobs(2, 3, n_per_class, 0.0, seed).unwrap();
        let mut x = raw.features().clone();
        for (mut row, &y) in x.outer_iter_mut().zip(raw.labels()) {
            let side = if y == 0 { -1.0 } else { 1.0 };
            row[0] = side * (1.0 + row[0].abs());
        }
        Dataset::new(x, raw.labels().to_vec(), 2).unwrap()
    }

    #[test]
    fn separable_blobs_fit_perfectly() {
        let ds = separable(10, 4);
        for spec in [
            ModelSpec { kind: ModelKind::Lr, feature_dim: 3, num_classes: 2, hidden: vec![], activation: Activation::Relu },
            ModelSpec { kind: ModelKind::Mlp, feature_dim: 3, num_classes: 2, hidden: vec![8], activation: Activation::Tanh },
        ] {
            let rep = fit_local(Init::Fresh(&spec), ds.features().view(), ds.labels(), &TrainConfig::default(), 5, 0).unwrap();
            let pred = rep.params.predict(ds.features().view()).unwrap();
            assert_eq!(pred, ds.labels());
        }
    }

    #[test]
    fn loss_trace_is_monotone_and_deterministic() {
        let ds = generate_blobs(3, 4, 6, 1.0, 2).unwrap();
        let spec = ModelSpec { kind: ModelKind::Mlp, feature_dim: 4, num_classes: 3, hidden: vec![5], activation: Activation::Relu };
        let cfg = TrainConfig { learning_rate: 5.0, ..TrainConfig::default() };
        let a = fit_local(Init::Fresh(&spec), ds.features().view(), ds.labels(), &cfg, 11, 0).unwrap();
        assert!(a.losses.windows(2).all(|w| w[1] <= w[0]));
        let b = fit_local(Init::Fresh(&spec), ds.features().view(), ds.labels(), &cfg, 11, 0).unwrap();
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn large_lambda_shrinks_weights_only() {
        // Imbalanced labels give the bias a non-zero optimum even when W is pinned at 0.
        let x = ndarray::array![[1.0, 0.0], [0.5, 1.0], [-1.0, 0.3], [0.2, -0.7], [-0.4, -1.0]];
        let y = [0, 0, 0, 0, 1];
        let spec = ModelSpec { kind: ModelKind::Lr, feature_dim: 2, num_classes: 2, hidden: vec![], activation: Activation::Relu };
        let strong = TrainConfig { l2_lambda: 1e3, learning_rate: 1e-4, max_inner_iters: 500, ..TrainConfig::default() };
        let weak = TrainConfig { l2_lambda: 0.0, ..TrainConfig::default() };
        let parts = |p: &Params| match p {
            Params::Lr(p) => (p.weights.iter().map(|v| v * v).sum::<f64>().sqrt(), p.bias[0] - p.bias[1]),
            _ => unreachable!(),
        };
        let s = fit_local(Init::Fresh(&spec), x.view(), &y, &strong, 0, 0).unwrap();
        let w = fit_local(Init::Fresh(&spec), x.view(), &y, &weak, 0, 0).unwrap();
        let (sw, sb) = parts(&s.params);
        let (ww, _) = parts(&w.params);
        assert!(sw < 1e-3, "{sw}");
        assert!(sw < ww / 100.0);
        assert!(sb > 0.01, "bias gap {sb}");
    }

    #[test]
    fn divergent_start_reports_client() {
        let init = Params::Mlp(MlpParams {
            weights: vec![array![[f64::MAX]], array![[f64::MAX, 0.0]]],
            biases: vec![array![0.0], array![0.0, 0.0]],
            activation: Activation::Relu,
        });
        let err = fit_local(Init::From(&init), array![[10.0], [1.0]].view(), &[0, 1], &TrainConfig::default(), 0, 7).unwrap_err();
        assert!(matches!(err, Error::Diverged { client: 7 }));
    }
}
