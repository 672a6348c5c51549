//! The per-client recommender: embeddings, score function, losses, analytic
//! gradients and plain SGD updates.
//!
//! Two backbones are supported. `Mlp` concatenates the user embedding with
//! one item-embedding row and pushes the 2d vector through ReLU hidden
//! layers to a sigmoid output (the usual neural collaborative filtering
//! wiring). `DotProduct` scores with `sigmoid(p . q_m)` and carries no
//! score-function weights. Gradients are hand-derived for both; there is no
//! autodiff machinery here.

use ndarray::{Array1, Array2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingBatch;
use crate::error::{Error, Result};
use crate::rng;
use crate::Embedding;

/// Clamp applied to predictions before logarithms in the BCE loss.
pub const BCE_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Mlp,
    DotProduct,
}

/// Architecture of the personalized score function. Hidden activations are
/// ReLU and the output is a sigmoid; `hidden_sizes` is ignored by the
/// dot-product kind.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScoreFunctionSpec {
    pub kind: ScoreKind,
    pub hidden_sizes: Vec<usize>,
}

impl ScoreFunctionSpec {
    pub fn mlp(hidden_sizes: Vec<usize>) -> Self {
        ScoreFunctionSpec {
            kind: ScoreKind::Mlp,
            hidden_sizes,
        }
    }

    pub fn dot_product() -> Self {
        ScoreFunctionSpec {
            kind: ScoreKind::DotProduct,
            hidden_sizes: Vec::new(),
        }
    }

    /// Full layer-width chain, input to scalar output.
    pub fn dims(&self, d: usize) -> Vec<usize> {
        match self.kind {
            ScoreKind::DotProduct => Vec::new(),
            ScoreKind::Mlp => {
                let mut dims = Vec::with_capacity(self.hidden_sizes.len() + 2);
                dims.push(2 * d);
                dims.extend_from_slice(&self.hidden_sizes);
                dims.push(1);
                dims
            }
        }
    }
}

/// One dense layer; `weights` has shape (out, in).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// One client's full parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientModel {
    pub kind: ScoreKind,
    pub user_embedding: Array1<f64>,
    pub item_embedding: Embedding,
    pub layers: Vec<DenseLayer>,
}

impl ClientModel {
    pub fn dim(&self) -> usize {
        self.user_embedding.len()
    }

    pub fn n_items(&self) -> usize {
        self.item_embedding.nrows()
    }

    pub fn all_finite(&self) -> bool {
        self.user_embedding.iter().all(|v| v.is_finite())
            && self.item_embedding.iter().all(|v| v.is_finite())
            && self
                .layers
                .iter()
                .all(|l| l.weights.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite()))
    }
}

/// Parameter-shaped gradient accumulator.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub user_embedding: Array1<f64>,
    pub item_embedding: Array2<f64>,
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    pub fn zeros_like(model: &ClientModel) -> Self {
        Gradients {
            user_embedding: Array1::zeros(model.user_embedding.len()),
            item_embedding: Array2::zeros(model.item_embedding.dim()),
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }
}

/// Initialize a client model: embeddings ~ N(0, 0.01), layer weights
/// ~ N(0, sqrt(2/fan_in)), biases zero. Deterministic under the stream.
pub fn init_model(
    spec: &ScoreFunctionSpec,
    d: usize,
    n_items: usize,
    rng: &mut ChaCha8Rng,
) -> ClientModel {
    assert!(d >= 1 && n_items >= 1);
    let user_embedding = Array1::from_iter((0..d).map(|_| rng::normal(rng, 0.01)));
    let item_embedding =
        Array2::from_shape_fn((n_items, d), |_| rng::normal(rng, 0.01));
    let dims = spec.dims(d);
    let layers = dims
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let std = (2.0 / fan_in as f64).sqrt();
            DenseLayer {
                weights: Array2::from_shape_fn((fan_out, fan_in), |_| rng::normal(rng, std)),
                bias: Array1::zeros(fan_out),
            }
        })
        .collect();
    ClientModel {
        kind: spec.kind,
        user_embedding,
        item_embedding,
        layers,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pre-activation score for one item, plus cached activations when the
/// caller needs them for backprop. `activations[0]` is the MLP input.
fn forward(model: &ClientModel, item: usize, cache: Option<&mut Vec<Vec<f64>>>) -> f64 {
    let q_row = model.item_embedding.row(item);
    match model.kind {
        ScoreKind::DotProduct => model.user_embedding.dot(&q_row),
        ScoreKind::Mlp => {
            let mut z: Vec<f64> = model
                .user_embedding
                .iter()
                .chain(q_row.iter())
                .copied()
                .collect();
            let mut acts = cache;
            if let Some(acts) = acts.as_deref_mut() {
                acts.clear();
                acts.push(z.clone());
            }
            let last = model.layers.len() - 1;
            for (k, layer) in model.layers.iter().enumerate() {
                let mut next = vec![0.0; layer.bias.len()];
                let w = layer.weights.as_slice().expect("standard layout");
                let n_in = z.len();
                for (o, out) in next.iter_mut().enumerate() {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    let mut acc = layer.bias[o];
                    for (wi, zi) in row.iter().zip(&z) {
                        acc += wi * zi;
                    }
                    *out = acc;
                }
                if k < last {
                    for v in next.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                if let Some(acts) = acts.as_deref_mut() {
                    acts.push(next.clone());
                }
                z = next;
            }
            z[0]
        }
    }
}

/// Predicted interaction probability for one item.
pub fn predict(model: &ClientModel, item: usize) -> Result<f64> {
    if item >= model.n_items() {
        return Err(Error::ItemOutOfRange {
            item,
            n_items: model.n_items(),
        });
    }
    Ok(sigmoid(forward(model, item, None)))
}

/// Summed binary cross-entropy over the batch, predictions clamped to
/// `[BCE_EPSILON, 1 - BCE_EPSILON]` before the logs.
pub fn bce_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::LengthMismatch {
            predictions: 0,
            labels: 0,
        });
    }
    let mut loss = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        loss -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
    }
    Ok(loss)
}

/// Mean squared difference over all elements of the two matrices.
pub fn reg_loss(q: &Embedding, r: &Embedding) -> Result<f64> {
    if q.dim() != r.dim() {
        return Err(Error::ShapeMismatch {
            context: format!("reg_loss: {:?} vs {:?}", q.dim(), r.dim()),
        });
    }
    let n = (q.nrows() * q.ncols()) as f64;
    let mut acc = 0.0;
    for (a, b) in q.iter().zip(r.iter()) {
        let d = a - b;
        acc += d * d;
    }
    Ok(acc / n)
}

/// Total loss and exact analytic gradients for one mini-batch:
/// `bce_loss` over the batch plus `lambda * reg_loss(q, r)`. The regularizer
/// gradient `(2 lambda / (M d)) (q - r)` lands on every item row, batch or
/// not.
pub fn backward(
    model: &ClientModel,
    batch: &TrainingBatch,
    r: &Embedding,
    lambda: f64,
) -> Result<(f64, Gradients)> {
    if batch.is_empty() {
        return Err(Error::LengthMismatch {
            predictions: 0,
            labels: 0,
        });
    }
    if lambda > 0.0 && model.item_embedding.dim() != r.dim() {
        return Err(Error::ShapeMismatch {
            context: format!(
                "backward: item embedding {:?} vs target {:?}",
                model.item_embedding.dim(),
                r.dim()
            ),
        });
    }
    let mut grads = Gradients::zeros_like(model);
    let mut loss = 0.0;
    let d = model.dim();
    let mut acts: Vec<Vec<f64>> = Vec::new();

    for (&item, &label) in batch.items.iter().zip(&batch.labels) {
        let item = item as usize;
        if item >= model.n_items() {
            return Err(Error::ItemOutOfRange {
                item,
                n_items: model.n_items(),
            });
        }
        let logit = forward(model, item, Some(&mut acts));
        let y_hat = sigmoid(logit);
        let p = y_hat.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
        loss -= label * p.ln() + (1.0 - label) * (1.0 - p).ln();
        let delta_out = y_hat - label;

        match model.kind {
            ScoreKind::DotProduct => {
                let q_row = model.item_embedding.row(item);
                for ((gp, gq), (p_i, q_i)) in grads
                    .user_embedding
                    .iter_mut()
                    .zip(grads.item_embedding.row_mut(item))
                    .zip(model.user_embedding.iter().zip(q_row.iter()))
                {
                    *gp += delta_out * q_i;
                    *gq += delta_out * p_i;
                }
            }
            ScoreKind::Mlp => {
                // acts[k] holds the input of layer k; acts[last+1] the logit.
                let mut delta = vec![delta_out];
                for (k, layer) in model.layers.iter().enumerate().rev() {
                    let input = &acts[k];
                    let (gw, gb) = &mut grads.layers[k];
                    let gw = gw.as_slice_mut().expect("standard layout");
                    let n_in = input.len();
                    for (o, &del) in delta.iter().enumerate() {
                        gb[o] += del;
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for (g, z) in row.iter_mut().zip(input) {
                            *g += del * z;
                        }
                    }
                    // Propagate to the layer input; gate by ReLU except at
                    // the MLP input itself.
                    let w = layer.weights.as_slice().expect("standard layout");
                    let mut prev = vec![0.0; n_in];
                    for (o, &del) in delta.iter().enumerate() {
                        let row = &w[o * n_in..(o + 1) * n_in];
                        for (p, wi) in prev.iter_mut().zip(row) {
                            *p += del * wi;
                        }
                    }
                    if k > 0 {
                        for (p, &a) in prev.iter_mut().zip(&acts[k]) {
                            if a <= 0.0 {
                                *p = 0.0;
                            }
                        }
                    }
                    delta = prev;
                }
                for (gp, &dv) in grads.user_embedding.iter_mut().zip(&delta[..d]) {
                    *gp += dv;
                }
                for (gq, &dv) in grads
                    .item_embedding
                    .row_mut(item)
                    .iter_mut()
                    .zip(&delta[d..])
                {
                    *gq += dv;
                }
            }
        }
    }

    if lambda > 0.0 {
        loss += lambda * reg_loss(&model.item_embedding, r)?;
        let scale = 2.0 * lambda / (model.item_embedding.nrows() * d) as f64;
        for ((g, q), rv) in grads
            .item_embedding
            .iter_mut()
            .zip(model.item_embedding.iter())
            .zip(r.iter())
        {
            *g += scale * (q - rv);
        }
    }

    Ok((loss, grads))
}

/// Per-parameter-group step sizes for [`grouped_step`]. Item-embedding rows
/// are touched at most a few times per epoch while score weights accumulate
/// a contribution from every sample, so the groups move at different rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupRates {
    pub score: f64,
    pub user: f64,
    pub item: f64,
}

impl GroupRates {
    pub fn uniform(eta: f64) -> Self {
        GroupRates {
            score: eta,
            user: eta,
            item: eta,
        }
    }
}

/// One plain SGD step: every parameter moves by `-eta * gradient`.
pub fn sgd_step(model: &mut ClientModel, grads: &Gradients, eta: f64) {
    assert!(eta > 0.0, "learning rate must be positive");
    grouped_step(model, grads, &GroupRates::uniform(eta));
}

/// SGD step with one rate per parameter group.
pub fn grouped_step(model: &mut ClientModel, grads: &Gradients, rates: &GroupRates) {
    for (p, g) in model
        .user_embedding
        .iter_mut()
        .zip(grads.user_embedding.iter())
    {
        *p -= rates.user * g;
    }
    for (p, g) in model
        .item_embedding
        .iter_mut()
        .zip(grads.item_embedding.iter())
    {
        *p -= rates.item * g;
    }
    for (layer, (gw, gb)) in model.layers.iter_mut().zip(&grads.layers) {
        for (p, g) in layer.weights.iter_mut().zip(gw.iter()) {
            *p -= rates.score * g;
        }
        for (p, g) in layer.bias.iter_mut().zip(gb.iter()) {
            *p -= rates.score * g;
        }
    }
}

const CHECKPOINT_FORMAT: &str = "gpfedrec-model-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointBlob {
    format: String,
    kind: ScoreKind,
    dim: usize,
    n_items: usize,
    user_embedding: Vec<f64>,
    /// Row-major (n_items x dim).
    item_embedding: Vec<f64>,
    layers: Vec<LayerBlob>,
}

#[derive(Serialize, Deserialize)]
struct LayerBlob {
    out_dim: usize,
    in_dim: usize,
    /// Row-major (out_dim x in_dim).
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Serialize a model checkpoint as a versioned JSON blob.
pub fn to_checkpoint_json(model: &ClientModel) -> String {
    let blob = CheckpointBlob {
        format: CHECKPOINT_FORMAT.to_string(),
        kind: model.kind,
        dim: model.dim(),
        n_items: model.n_items(),
        user_embedding: model.user_embedding.to_vec(),
        item_embedding: model.item_embedding.iter().copied().collect(),
        layers: model
            .layers
            .iter()
            .map(|l| LayerBlob {
                out_dim: l.weights.nrows(),
                in_dim: l.weights.ncols(),
                weights: l.weights.iter().copied().collect(),
                bias: l.bias.to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&blob).expect("checkpoint serialization")
}

pub fn from_checkpoint_json(text: &str) -> Result<ClientModel> {
    let blob: CheckpointBlob = serde_json::from_str(text)?;
    if blob.format != CHECKPOINT_FORMAT {
        return Err(Error::InvalidConfig(format!(
            "unsupported checkpoint format '{}'",
            blob.format
        )));
    }
    let item_embedding = Array2::from_shape_vec((blob.n_items, blob.dim), blob.item_embedding)
        .map_err(|e| Error::ShapeMismatch {
            context: format!("checkpoint item embedding: {e}"),
        })?;
    let mut layers = Vec::with_capacity(blob.layers.len());
    for l in blob.layers {
        let weights = Array2::from_shape_vec((l.out_dim, l.in_dim), l.weights).map_err(|e| {
            Error::ShapeMismatch {
                context: format!("checkpoint layer: {e}"),
            }
        })?;
        layers.push(DenseLayer {
            weights,
            bias: Array1::from_vec(l.bias),
        });
    }
    Ok(ClientModel {
        kind: blob.kind,
        user_embedding: Array1::from_vec(blob.user_embedding),
        item_embedding,
        layers,
    })
}
