//! The classifier: an MLP feature extractor followed by a linear scoring
//! head, with manual forward and backward passes.
//!
//! The extractor maps inputs to feature vectors `phi`; the head assigns one
//! score per class, `s_j(phi) = w_j . phi + b_j`, with `w_j` stored as row
//! `j` of `W`. All of the margin geometry in this crate lives at the head,
//! so the extractor stays deliberately small: dense layers with relu or
//! identity activations.
//!
//! The relu derivative at exactly zero is taken to be zero. Gradient checks
//! exclude points with pre-activations inside 1e-6 of the kink.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{matmul, Matrix, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// One dense extractor layer: `act(x W^T + bias)`, weight is `out x in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

/// Feature extractor `phi = F(x)`: a chain of dense layers. An empty chain
/// is the identity, for models that classify raw inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extractor {
    pub layers: Vec<Layer>,
}

impl Extractor {
    pub fn identity() -> Extractor {
        Extractor { layers: Vec::new() }
    }

    /// Output feature dimension for the given input dimension.
    pub fn out_dim(&self, input_dim: usize) -> usize {
        self.layers.last().map_or(input_dim, |l| l.weight.rows())
    }
}

/// Linear scoring head. Row `j` of `w` scores class `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl LinearHead {
    pub fn new(w: Matrix, b: Vec<f64>) -> Result<LinearHead> {
        if w.rows() != b.len() {
            return Err(Error::dim(format!("head: {} weight rows, {} biases", w.rows(), b.len())));
        }
        Ok(LinearHead { w, b })
    }

    pub fn n_classes(&self) -> usize {
        self.w.rows()
    }

    pub fn feat_dim(&self) -> usize {
        self.w.cols()
    }

    /// Scores for a batch of feature rows: `phi W^T + b` broadcast.
    pub fn scores(&self, features: &Matrix) -> Result<Matrix> {
        let mut s = matmul(features, &self.w.transpose())?;
        for i in 0..s.rows() {
            for (j, v) in s.row_mut(i).iter_mut().enumerate() {
                *v += self.b[j];
            }
        }
        Ok(s)
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub input: Matrix,
    /// Per-layer pre-activations, in layer order.
    pub pre_activations: Vec<Matrix>,
    /// Per-layer activations, in layer order.
    pub activations: Vec<Matrix>,
    /// Final features `phi`, batch x feat_dim.
    pub features: Matrix,
    /// Head scores, batch x n_classes.
    pub scores: Matrix,
}

impl ForwardCache {
    /// Cache restricted to the given batch rows. Row-local computation makes
    /// this bit-identical to a fresh forward pass over the subset.
    pub fn select_rows(&self, indices: &[usize]) -> ForwardCache {
        ForwardCache {
            input: self.input.select_rows(indices),
            pre_activations: self.pre_activations.iter().map(|m| m.select_rows(indices)).collect(),
            activations: self.activations.iter().map(|m| m.select_rows(indices)).collect(),
            features: self.features.select_rows(indices),
            scores: self.scores.select_rows(indices),
        }
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }
}

/// Parameter gradients, shaped exactly like the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub layer_weights: Vec<Matrix>,
    pub layer_biases: Vec<Vec<f64>>,
    pub head_w: Matrix,
    pub head_b: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Gradients {
        Gradients {
            layer_weights: model
                .extractor
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.weight.rows(), l.weight.cols()))
                .collect(),
            layer_biases: model.extractor.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            head_w: Matrix::zeros(model.head.w.rows(), model.head.w.cols()),
            head_b: vec![0.0; model.head.b.len()],
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.layer_weights {
            w.scale(s);
        }
        for b in &mut self.layer_biases {
            for v in b {
                *v *= s;
            }
        }
        self.head_w.scale(s);
        for v in &mut self.head_b {
            *v *= s;
        }
    }

    pub fn add_scaled(&mut self, other: &Gradients, s: f64) -> Result<()> {
        for (a, b) in self.layer_weights.iter_mut().zip(&other.layer_weights) {
            a.add_scaled(b, s)?;
        }
        for (a, b) in self.layer_biases.iter_mut().zip(&other.layer_biases) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        self.head_w.add_scaled(&other.head_w, s)?;
        for (x, y) in self.head_b.iter_mut().zip(&other.head_b) {
            *x += s * y;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.layer_weights.iter().all(Matrix::is_finite)
            && self.layer_biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self.head_w.is_finite()
            && self.head_b.iter().all(|v| v.is_finite())
    }
}

/// Extractor plus head; the unit the trainer owns and updates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub extractor: Extractor,
    pub head: LinearHead,
    pub input_dim: usize,
}

/// Build a model with uniform Glorot-style weights in
/// `[-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]` and zero biases.
///
/// `layer_dims[0]` is the input dimension; each further entry adds a relu
/// layer. A single-entry list gives the identity extractor, so the head
/// classifies raw inputs.
pub fn init_model(layer_dims: &[usize], n_classes: usize, seed: u64) -> Result<Model> {
    if layer_dims.is_empty() {
        return Err(Error::invalid("init_model: layer_dims is empty".to_string()));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::invalid("init_model: zero layer dimension".to_string()));
    }
    if n_classes < 2 {
        return Err(Error::invalid(format!("init_model: n_classes = {n_classes}")));
    }
    let mut rng = Rng::new(seed);
    let mut layers = Vec::new();
    for win in layer_dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        layers.push(Layer {
            weight: glorot(&mut rng, fan_out, fan_in),
            bias: vec![0.0; fan_out],
            activation: Activation::Relu,
        });
    }
    let feat_dim = *layer_dims.last().unwrap();
    let head = LinearHead { w: glorot(&mut rng, n_classes, feat_dim), b: vec![0.0; n_classes] };
    Ok(Model { extractor: Extractor { layers }, head, input_dim: layer_dims[0] })
}

fn glorot(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Matrix::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.uniform_in(-bound, bound);
    }
    m
}

impl Model {
    pub fn feat_dim(&self) -> usize {
        self.extractor.out_dim(self.input_dim)
    }

    pub fn n_classes(&self) -> usize {
        self.head.n_classes()
    }

    /// Forward pass over a batch, retaining every intermediate.
    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim {
            return Err(Error::dim(format!(
                "forward: input has {} columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        let mut pre_activations = Vec::with_capacity(self.extractor.layers.len());
        let mut activations = Vec::with_capacity(self.extractor.layers.len());
        let mut current = x.clone();
        for layer in &self.extractor.layers {
            let mut pre = matmul(&current, &layer.weight.transpose())?;
            for i in 0..pre.rows() {
                for (j, v) in pre.row_mut(i).iter_mut().enumerate() {
                    *v += layer.bias[j];
                }
            }
            let mut act = pre.clone();
            for v in act.data_mut() {
                *v = layer.activation.apply(*v);
            }
            pre_activations.push(pre);
            activations.push(act.clone());
            current = act;
        }
        let scores = self.head.scores(&current)?;
        Ok(ForwardCache {
            input: x.clone(),
            pre_activations,
            activations,
            features: current,
            scores,
        })
    }

    /// Backward pass. `dl_dscores` is the loss gradient at the scores;
    /// `extra_head_grad` is added to the head weight gradient as-is (the
    /// regularizer's direct contribution; pass zeros when disabled).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        dl_dscores: &Matrix,
        extra_head_grad: &Matrix,
    ) -> Result<Gradients> {
        self.backward_impl(cache, dl_dscores, extra_head_grad, None)
    }

    /// As [`Model::backward`], with an optional direct gradient on the
    /// features (used when the regularizer's feature-norm path is enabled).
    pub fn backward_impl(
        &self,
        cache: &ForwardCache,
        dl_dscores: &Matrix,
        extra_head_grad: &Matrix,
        extra_feature_grad: Option<&Matrix>,
    ) -> Result<Gradients> {
        if dl_dscores.rows() != cache.scores.rows() || dl_dscores.cols() != cache.scores.cols() {
            return Err(Error::dim(format!(
                "backward: dl_dscores {}x{}, scores {}x{}",
                dl_dscores.rows(),
                dl_dscores.cols(),
                cache.scores.rows(),
                cache.scores.cols()
            )));
        }
        if extra_head_grad.rows() != self.head.w.rows()
            || extra_head_grad.cols() != self.head.w.cols()
        {
            return Err(Error::dim(format!(
                "backward: extra_head_grad {}x{}, head {}x{}",
                extra_head_grad.rows(),
                extra_head_grad.cols(),
                self.head.w.rows(),
                self.head.w.cols()
            )));
        }
        let mut grads = Gradients::zeros_like(self);

        // head: dW = dS^T phi + extra, db = column sums of dS
        grads.head_w = matmul(&dl_dscores.transpose(), &cache.features)?;
        grads.head_w.add_scaled(extra_head_grad, 1.0)?;
        for i in 0..dl_dscores.rows() {
            for (j, v) in dl_dscores.row(i).iter().enumerate() {
                grads.head_b[j] += v;
            }
        }

        // features: dphi = dS W (+ optional direct term)
        let mut d_act = matmul(dl_dscores, &self.head.w)?;
        if let Some(extra) = extra_feature_grad {
            d_act.add_scaled(extra, 1.0)?;
        }

        for (k, layer) in self.extractor.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[k];
            let mut d_pre = d_act.clone();
            for i in 0..d_pre.rows() {
                for (j, v) in d_pre.row_mut(i).iter_mut().enumerate() {
                    *v *= layer.activation.derivative(pre.get(i, j));
                }
            }
            let layer_input = if k == 0 { &cache.input } else { &cache.activations[k - 1] };
            grads.layer_weights[k] = matmul(&d_pre.transpose(), layer_input)?;
            for i in 0..d_pre.rows() {
                for (j, v) in d_pre.row(i).iter().enumerate() {
                    grads.layer_biases[k][j] += v;
                }
            }
            d_act = matmul(&d_pre, &layer.weight)?;
        }
        Ok(grads)
    }

    /// Serialize as a JSON checkpoint. Floats print at full precision, so a
    /// write/read round-trip reproduces parameters bit-exactly.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self)
            .map_err(|e| Error::Json { context: "model checkpoint".to_string(), source: e })
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let model: Model = serde_json::from_str(text)
            .map_err(|e| Error::Json { context: "model checkpoint".to_string(), source: e })?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)
            .map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn load(path: &std::path::Path) -> Result<Model> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Model::from_json(&text)
    }

    fn validate(&self) -> Result<()> {
        let mut dim = self.input_dim;
        for (k, layer) in self.extractor.layers.iter().enumerate() {
            if layer.weight.cols() != dim {
                return Err(Error::dim(format!(
                    "layer {k}: weight cols {} do not chain with {}",
                    layer.weight.cols(),
                    dim
                )));
            }
            if layer.bias.len() != layer.weight.rows() {
                return Err(Error::dim(format!("layer {k}: bias/weight row mismatch")));
            }
            dim = layer.weight.rows();
        }
        if self.head.w.cols() != dim {
            return Err(Error::dim(format!(
                "head: feat_dim {} does not chain with extractor output {}",
                self.head.w.cols(),
                dim
            )));
        }
        if self.head.b.len() != self.head.w.rows() {
            return Err(Error::dim("head: bias/weight row mismatch".to_string()));
        }
        Ok(())
    }
}
