//! Softmax regression and MLP parameter containers, forward passes, and the
//! flat parameter-vector view shared by aggregation, clipping, noise and masking.
//!
//! Flat layout: LR stores `W` (C×d, row-major) then `b`. An MLP stores, for each
//! layer in order, `W` (n_in×n_out, row-major) then `b`.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    /// `1 / (1 + e^-t)`
    Logistic,
}

impl Activation {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::Relu => t.max(0.0),
            Activation::Tanh => t.tanh(),
            Activation::Logistic => 1.0 / (1.0 + (-t).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `t` and output `h = φ(t)`.
    /// The relu subgradient at 0 is 0.
    #[inline]
    pub fn derivative(self, t: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
            Activation::Logistic => h * (1.0 - h),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Logistic => "logistic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Lr,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Mlp => "mlp",
        }
    }
}

/// Multinomial logistic regression: `logits = x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrParams {
    /// C×d
    pub weights: Array2<f64>,
    /// length C
    pub bias: Array1<f64>,
}

impl LrParams {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            weights: Array2::zeros((num_classes, feature_dim)),
            bias: Array1::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.bias.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Layer ℓ is `n_{ℓ-1} × n_ℓ`; the first input width is d, the last output width C.
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub activation: Activation,
}

impl MlpParams {
    /// Glorot-uniform weights in `±sqrt(6 / (n_in + n_out))`, zero biases.
    pub fn glorot<R: Rng + ?Sized>(
        feature_dim: usize,
        hidden: &[usize],
        num_classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let widths = layer_widths(feature_dim, hidden, num_classes);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (n_in, n_out) = (pair[0], pair[1]);
            let bound = (6.0 / (n_in + n_out) as f64).sqrt();
            weights.push(Array2::from_shape_simple_fn((n_in, n_out), || {
                bound * (2.0 * rng.random::<f64>() - 1.0)
            }));
            biases.push(Array1::zeros(n_out));
        }
        Self {
            weights,
            biases,
            activation,
        }
    }

    pub fn zeros(feature_dim: usize, hidden: &[usize], num_classes: usize, activation: Activation) -> Self {
        let widths = layer_widths(feature_dim, hidden, num_classes);
        Self {
            weights: widths.windows(2).map(|p| Array2::zeros((p[0], p[1]))).collect(),
            biases: widths[1..].iter().map(|&n| Array1::zeros(n)).collect(),
            activation,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn num_classes(&self) -> usize {
        self.biases.last().map_or(0, |b| b.len())
    }

    pub fn feature_dim(&self) -> usize {
        self.weights.first().map_or(0, |w| w.nrows())
    }

    fn check_shapes(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::Shape("mlp needs matching, non-empty weight and bias lists".into()));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.ncols() != b.len() {
                return Err(Error::Shape(format!("layer {}: weight width {} vs bias {}", l + 1, w.ncols(), b.len())));
            }
            if l > 0 && self.weights[l - 1].ncols() != w.nrows() {
                return Err(Error::Shape(format!("layer {} input width mismatch", l + 1)));
            }
        }
        Ok(())
    }
}

pub fn layer_widths(feature_dim: usize, hidden: &[usize], num_classes: usize) -> Vec<usize> {
    let mut w = Vec::with_capacity(hidden.len() + 2);
    w.push(feature_dim);
    w.extend_from_slice(hidden);
    w.push(num_classes);
    w
}

/// Either learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Params {
    Lr(LrParams),
    Mlp(MlpParams),
}

impl Params {
    pub fn kind(&self) -> ModelKind {
        match self {
            Params::Lr(_) => ModelKind::Lr,
            Params::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Params::Lr(p) => p.num_classes(),
            Params::Mlp(p) => p.num_classes(),
        }
    }

    /// Pre-softmax outputs, n×C.
    pub fn logits(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Params::Lr(p) => lr_logits(p, x),
            Params::Mlp(p) => mlp_forward(p, x),
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<usize>> {
        Ok(predict(&self.logits(x)?))
    }

    pub fn param_count(&self) -> usize {
        self.layout().len()
    }

    pub fn layout(&self) -> Layout {
        match self {
            Params::Lr(p) => Layout {
                arch: Arch::Lr,
                tensors: vec![
                    TensorSpec::new("W", &[p.num_classes(), p.feature_dim()]),
                    TensorSpec::new("b", &[p.num_classes()]),
                ],
            },
            Params::Mlp(p) => {
                let mut tensors = Vec::with_capacity(2 * p.num_layers());
                for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
                    tensors.push(TensorSpec::new(&format!("W{}", l + 1), &[w.nrows(), w.ncols()]));
                    tensors.push(TensorSpec::new(&format!("b{}", l + 1), &[b.len()]));
                }
                Layout {
                    arch: Arch::Mlp(p.activation),
                    tensors,
                }
            }
        }
    }

    pub fn flatten(&self) -> ParamVec {
        let mut values = Vec::with_capacity(self.param_count());
        match self {
            Params::Lr(p) => {
                values.extend(p.weights.iter());
                values.extend(p.bias.iter());
            }
            Params::Mlp(p) => {
                for (w, b) in p.weights.iter().zip(&p.biases) {
                    values.extend(w.iter());
                    values.extend(b.iter());
                }
            }
        }
        ParamVec {
            values,
            layout: self.layout(),
        }
    }

    pub fn unflatten(vec: &ParamVec) -> Result<Self> {
        let layout = &vec.layout;
        if vec.values.len() != layout.len() {
            return Err(Error::Shape(format!(
                "layout describes {} values, vector holds {}",
                layout.len(),
                vec.values.len()
            )));
        }
        let mut offset = 0;
        let mut take = |spec: &TensorSpec| {
            let n = spec.len();
            let slice = &vec.values[offset..offset + n];
            offset += n;
            slice
        };
        let matrix = |spec: &TensorSpec, data: &[f64]| -> Result<Array2<f64>> {
            match spec.shape.as_slice() {
                &[r, c] => Ok(Array2::from_shape_vec((r, c), data.to_vec()).expect("length checked")),
                _ => Err(Error::Shape(format!("{} is not a matrix", spec.name))),
            }
        };
        match layout.arch {
            Arch::Lr => {
                if layout.tensors.len() != 2 {
                    return Err(Error::Shape("lr layout needs exactly W and b".into()));
                }
                let w = matrix(&layout.tensors[0], take(&layout.tensors[0]))?;
                let b = Array1::from(take(&layout.tensors[1]).to_vec());
                let p = LrParams { weights: w, bias: b };
                if p.weights.nrows() != p.bias.len() {
                    return Err(Error::Shape("lr W rows must equal b length".into()));
                }
                Ok(Params::Lr(p))
            }
            Arch::Mlp(activation) => {
                if layout.tensors.is_empty() || !layout.tensors.len().is_multiple_of(2) {
                    return Err(Error::Shape("mlp layout needs (W, b) pairs".into()));
                }
                let mut weights = Vec::new();
                let mut biases = Vec::new();
                for pair in layout.tensors.chunks(2) {
                    weights.push(matrix(&pair[0], take(&pair[0]))?);
                    biases.push(Array1::from(take(&pair[1]).to_vec()));
                }
                let p = MlpParams {
                    weights,
                    biases,
                    activation,
                };
                p.check_shapes()?;
                Ok(Params::Mlp(p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arch {
    Lr,
    Mlp(Activation),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Ordered tensor records describing how a flat vector maps back to parameters.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub arch: Arch,
    pub tensors: Vec<TensorSpec>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.tensors.iter().map(TensorSpec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Flat index ranges of every weight matrix (biases excluded).
    pub fn weight_ranges(&self) -> Vec<std::ops::Range<usize>> {
        let mut out = Vec::new();
        let mut offset = 0;
        for t in &self.tensors {
            if t.shape.len() == 2 {
                out.push(offset..offset + t.len());
            }
            offset += t.len();
        }
        out
    }
}

/// Flat parameter vector plus the layout needed to rebuild the source params.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVec {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl ParamVec {
    pub fn zeros_like(&self) -> Self {
        Self {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::Shape(format!("expected {} values, got {}", self.values.len(), values.len())));
        }
        Ok(Self {
            values,
            layout: self.layout.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

pub fn flatten(params: &Params) -> ParamVec {
    params.flatten()
}

pub fn unflatten(vec: &ParamVec) -> Result<Params> {
    Params::unflatten(vec)
}

pub fn lr_logits(params: &LrParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            params.feature_dim()
        )));
    }
    if params.weights.nrows() != params.bias.len() {
        return Err(Error::Shape("W rows must equal b length".into()));
    }
    Ok(x.dot(&params.weights.t()) + &params.bias)
}

/// Hidden activations (pre- and post-φ) for every hidden layer plus the
/// affine output. Shared with backprop.
pub(crate) struct ForwardTrace {
    pub pre: Vec<Array2<f64>>,
    pub post: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

pub(crate) fn mlp_trace(params: &MlpParams, x: ArrayView2<f64>) -> Result<ForwardTrace> {
    params.check_shapes()?;
    if x.ncols() != params.feature_dim() {
        return Err(Error::Shape(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            params.feature_dim()
        )));
    }
    let last = params.num_layers() - 1;
    let mut pre = Vec::with_capacity(last);
    let mut post: Vec<Array2<f64>> = Vec::with_capacity(last);
    for l in 0..last {
        let input = if l == 0 { x } else { post[l - 1].view() };
        let z = input.dot(&params.weights[l]) + &params.biases[l];
        let h = z.mapv(|t| params.activation.apply(t));
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(l + 1));
        }
        pre.push(z);
        post.push(h);
    }
    let input = if last == 0 { x } else { post[last - 1].view() };
    let output = input.dot(&params.weights[last]) + &params.biases[last];
    if output.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(last + 1));
    }
    Ok(ForwardTrace { pre, post, output })
}

/// Hidden layers apply φ; the output layer is affine. Returns pre-softmax outputs.
pub fn mlp_forward(params: &MlpParams, x: ArrayView2<f64>) -> Result<Array2<f64>> {
    Ok(mlp_trace(params, x)?.output)
}

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    out
}

/// Row-wise argmax; ties go to the lowest class index.
pub fn predict(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .outer_iter()
        .map(|row| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
