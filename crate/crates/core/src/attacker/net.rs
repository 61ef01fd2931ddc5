use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Activation, MlpSpec, Norm};
use crate::error::{Error, Result};
use crate::rng::{self, standard_normal};
use crate::seed_of;
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const RMSNORM_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;
const LEAKY_SLOPE: f64 = 0.01;

/// `gain_k * x_k / sqrt(mean(x^2) + eps)`
pub fn rmsnorm(x: &[f64], gain: &[f64], eps: f64) -> Vec<f64> {
    assert_eq!(x.len(), gain.len());
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let denom = (ms + eps).sqrt();
    if denom == 0.0 {
        return vec![0.0; x.len()];
    }
    x.iter().zip(gain).map(|(v, g)| g * v / denom).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Layer {
    /// `[fan_in, fan_out]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Present on hidden layers when a norm is configured.
    pub gain: Option<Array1<f64>>,
}

/// Attacker parameters. The same structure also carries gradients and
/// optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    pub(crate) layers: Vec<Layer>,
}

struct Cache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Normalized pre-gain values and per-row inverse scale, per hidden layer.
    normed: Vec<Option<(Array2<f64>, Array1<f64>)>>,
    /// Activation inputs per hidden layer.
    pre_act: Vec<Array2<f64>>,
    logits: Array1<f64>,
}

impl Mlp {
    /// Weights i.i.d. N(0, 0.02^2), biases zero, gains one.
    pub fn build(spec: &MlpSpec, seed: u64) -> Result<Self> {
        let dims = spec.layer_dims()?;
        let mut r = rng::seeded(seed_of!(seed, "init"));
        let hidden = dims.len() - 1;
        let layers = dims
            .iter()
            .enumerate()
            .map(|(l, &(fan_in, fan_out))| Layer {
                weight: Array2::from_shape_fn((fan_in, fan_out), |_| INIT_STD * standard_normal(&mut r)),
                bias: Array1::zeros(fan_out),
                gain: (l < hidden && spec.effective_norm() != Norm::None).then(|| Array1::ones(fan_out)),
            })
            .collect();
        Ok(Mlp {
            spec: spec.clone(),
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// `(fan_in, fan_out)` per linear layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| l.weight.dim()).collect()
    }

    pub fn weight(&self, layer: usize) -> &Array2<f64> {
        &self.layers[layer].weight
    }

    pub fn bias(&self, layer: usize) -> &Array1<f64> {
        &self.layers[layer].bias
    }

    pub fn gain(&self, layer: usize) -> Option<&Array1<f64>> {
        self.layers[layer].gain.as_ref()
    }

    pub fn weight_mut(&mut self, layer: usize) -> &mut Array2<f64> {
        &mut self.layers[layer].weight
    }

    pub fn bias_mut(&mut self, layer: usize) -> &mut Array1<f64> {
        &mut self.layers[layer].bias
    }

    pub fn gain_mut(&mut self, layer: usize) -> Option<&mut Array1<f64>> {
        self.layers[layer].gain.as_mut()
    }

    /// A same-shaped container of zeros.
    pub fn zeros_like(&self) -> Mlp {
        Mlp {
            spec: self.spec.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.len()),
                    gain: l.gain.as_ref().map(|g| Array1::zeros(g.len())),
                })
                .collect(),
        }
    }

    /// Every parameter tensor as a flat slice, tagged by kind, in a fixed order.
    pub fn params(&self) -> Vec<(ParamKind, &[f64])> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push((ParamKind::Weight, l.weight.as_slice().expect("standard layout")));
            out.push((ParamKind::Bias, l.bias.as_slice().expect("standard layout")));
            if let Some(g) = &l.gain {
                out.push((ParamKind::Gain, g.as_slice().expect("standard layout")));
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<(ParamKind, &mut [f64])> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push((ParamKind::Weight, l.weight.as_slice_mut().expect("standard layout")));
            out.push((ParamKind::Bias, l.bias.as_slice_mut().expect("standard layout")));
            if let Some(g) = &mut l.gain {
                out.push((ParamKind::Gain, g.as_slice_mut().expect("standard layout")));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.spec.in_dim {
            return Err(Error::Dimension(format!(
                "attacker expects {} input features, got {}",
                self.spec.in_dim,
                x.ncols()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: ArrayView2<'_, f64>) -> Cache {
        let act = self.spec.effective_activation();
        let norm = self.spec.effective_norm();
        let hidden = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut normed = Vec::with_capacity(hidden);
        let mut pre_act = Vec::with_capacity(hidden);
        let mut a = x.to_owned();
        for layer in &self.layers[..hidden] {
            let mut z = a.dot(&layer.weight);
            z += &layer.bias;
            let u = match (&layer.gain, norm) {
                (Some(gain), Norm::Rmsnorm | Norm::Layernorm) => {
                    let (xhat, inv) = normalize_rows(&z, norm);
                    let u = &xhat * gain;
                    normed.push(Some((xhat, inv)));
                    u
                }
                _ => {
                    normed.push(None);
                    z
                }
            };
            let h = u.mapv(|v| activate(act, v));
            inputs.push(a);
            pre_act.push(u);
            a = h;
        }
        let out = &self.layers[hidden];
        let logits = a.dot(&out.weight).column(0).to_owned() + out.bias[0];
        inputs.push(a);
        Cache {
            inputs,
            normed,
            pre_act,
            logits,
        }
    }

    /// Output logits for a batch of rows.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        self.check_input(&x)?;
        Ok(self.forward_cached(x).logits)
    }

    /// Membership probabilities for a batch of rows.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.logits(x)?.mapv(sigmoid))
    }

    /// Membership probability of one feature vector, in (0, 1).
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.predict(view)?[0])
    }

    /// Activation inputs of every hidden layer (used to detect kinks in
    /// finite-difference checks).
    pub fn hidden_pre_activations(&self, x: ArrayView2<'_, f64>) -> Result<Vec<Array2<f64>>> {
        self.check_input(&x)?;
        Ok(self.forward_cached(x).pre_act)
    }

    /// Mean binary cross-entropy of the batch.
    pub fn loss(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<f64> {
        self.check_batch(&x, y)?;
        let logits = self.forward_cached(x).logits;
        mean_bce(&logits, y)
    }

    fn check_batch(&self, x: &ArrayView2<'_, f64>, y: &[f64]) -> Result<()> {
        self.check_input(x)?;
        if x.nrows() == 0 {
            return Err(Error::Parameter("empty batch".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::Dimension(format!("{} rows but {} labels", x.nrows(), y.len())));
        }
        Ok(())
    }

    /// Mean BCE and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Mlp)> {
        self.loss_grad_logits(x, y).map(|(loss, grads, _)| (loss, grads))
    }

    /// `loss_and_grad` plus the batch logits of the same forward pass.
    pub(crate) fn loss_grad_logits(&self, x: ArrayView2<'_, f64>, y: &[f64]) -> Result<(f64, Mlp, Array1<f64>)> {
        self.check_batch(&x, y)?;
        let act = self.spec.effective_activation();
        let norm = self.spec.effective_norm();
        let cache = self.forward_cached(x);
        let loss = mean_bce(&cache.logits, y)?;
        let b = y.len() as f64;
        let hidden = self.layers.len() - 1;
        let mut grads = self.zeros_like();

        // d loss / d logit = (sigmoid(z) - y) / B
        let dlogit: Array1<f64> = cache
            .logits
            .iter()
            .zip(y)
            .map(|(&z, &t)| (sigmoid(z) - t) / b)
            .collect();
        let dlogit = dlogit.insert_axis(Axis(1));
        let out = &self.layers[hidden];
        grads.layers[hidden].weight = cache.inputs[hidden].t().dot(&dlogit).as_standard_layout().into_owned();
        grads.layers[hidden].bias = dlogit.sum_axis(Axis(0));
        let mut da = dlogit.dot(&out.weight.t());

        for l in (0..hidden).rev() {
            let layer = &self.layers[l];
            let u = &cache.pre_act[l];
            let mut du = da;
            ndarray::Zip::from(&mut du).and(u).for_each(|g, &v| *g *= activate_grad(act, v));
            let dz = match (&cache.normed[l], &layer.gain) {
                (Some((xhat, inv)), Some(gain)) => {
                    grads.layers[l].gain = Some((&du * xhat).sum_axis(Axis(0)));
                    let dxhat = &du * gain;
                    normalize_rows_backward(&dxhat, xhat, inv, norm)
                }
                _ => du,
            };
            grads.layers[l].weight = cache.inputs[l].t().dot(&dz).as_standard_layout().into_owned();
            grads.layers[l].bias = dz.sum_axis(Axis(0));
            da = dz.dot(&layer.weight.t());
        }
        Ok((loss, grads, cache.logits))
    }

    /// Writes `spec.json` plus one PCTF per parameter tensor (cast to f32).
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("spec.json");
        let text = serde_json::to_string_pretty(&SavedSpec {
            spec: self.spec.clone(),
            layers: self.layer_shapes(),
        })
        .expect("spec serializes");
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        for (l, layer) in self.layers.iter().enumerate() {
            let (i, o) = layer.weight.dim();
            let w = Tensor::from_f64(vec![i, o], layer.weight.as_slice().expect("standard layout"))?;
            write_tensor(&w, dir.join(format!("layer{l}_weight.pctf")))?;
            let b = Tensor::from_f64(vec![o], layer.bias.as_slice().expect("standard layout"))?;
            write_tensor(&b, dir.join(format!("layer{l}_bias.pctf")))?;
            if let Some(g) = &layer.gain {
                let g = Tensor::from_f64(vec![o], g.as_slice().expect("standard layout"))?;
                write_tensor(&g, dir.join(format!("layer{l}_gain.pctf")))?;
            }
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("spec.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let saved: SavedSpec = serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
        let mut mlp = Mlp::build(&saved.spec, 0)?;
        if mlp.layer_shapes() != saved.layers {
            return Err(Error::Spec(format!(
                "saved layer shapes {:?} do not match spec {:?}",
                saved.layers,
                mlp.layer_shapes()
            )));
        }
        let load = |name: String, shape: &[usize]| -> Result<Vec<f64>> {
            let t = read_tensor(dir.join(&name))?;
            if t.shape() != shape {
                return Err(Error::Spec(format!("{name} has shape {:?}, expected {shape:?}", t.shape())));
            }
            Ok(t.data().iter().map(|&v| f64::from(v)).collect())
        };
        for (l, layer) in mlp.layers.iter_mut().enumerate() {
            let (i, o) = layer.weight.dim();
            layer.weight = Array2::from_shape_vec((i, o), load(format!("layer{l}_weight.pctf"), &[i, o])?)
                .expect("shape checked");
            layer.bias = Array1::from(load(format!("layer{l}_bias.pctf"), &[o])?);
            if let Some(g) = &mut layer.gain {
                *g = Array1::from(load(format!("layer{l}_gain.pctf"), &[o])?);
            }
        }
        Ok(mlp)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SavedSpec {
    spec: MlpSpec,
    layers: Vec<(usize, usize)>,
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `label`, computed stably.
pub fn bce_with_logits(logit: f64, label: f64) -> f64 {
    logit.max(0.0) - logit * label + (-logit.abs()).exp().ln_1p()
}

fn mean_bce(logits: &Array1<f64>, y: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, (&z, &t)) in logits.iter().zip(y).enumerate() {
        let l = bce_with_logits(z, t);
        if !l.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at sample {i} (logit {z})")));
        }
        total += l;
    }
    Ok(total / y.len() as f64)
}

fn activate(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => v.max(0.0),
        Activation::Tanh => v.tanh(),
        Activation::LeakyRelu => {
            if v > 0.0 {
                v
            } else {
                LEAKY_SLOPE * v
            }
        }
        Activation::Silu => v * sigmoid(v),
    }
}

fn activate_grad(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => {
            if v > 0.0 {
                1.0
            } else {
                0.0
            }
        }
        Activation::Tanh => {
            let t = v.tanh();
            1.0 - t * t
        }
        Activation::LeakyRelu => {
            if v > 0.0 {
                1.0
            } else {
                LEAKY_SLOPE
            }
        }
        Activation::Silu => {
            let s = sigmoid(v);
            s * (1.0 + v * (1.0 - s))
        }
    }
}

/// Row-wise RMS or layer normalization without gain. Returns the normalized
/// rows and each row's inverse scale.
fn normalize_rows(z: &Array2<f64>, norm: Norm) -> (Array2<f64>, Array1<f64>) {
    let n = z.ncols() as f64;
    let mut out = z.clone();
    let mut inv = Array1::zeros(z.nrows());
    for (mut row, s) in out.rows_mut().into_iter().zip(inv.iter_mut()) {
        if norm == Norm::Layernorm {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
        }
        let ms = row.iter().map(|v| v * v).sum::<f64>() / n;
        *s = 1.0 / (ms + RMSNORM_EPS).sqrt();
        let k = *s;
        row.mapv_inplace(|v| v * k);
    }
    (out, inv)
}

fn normalize_rows_backward(dxhat: &Array2<f64>, xhat: &Array2<f64>, inv: &Array1<f64>, norm: Norm) -> Array2<f64> {
    let n = dxhat.ncols() as f64;
    let mut dz = dxhat.clone();
    for ((mut g, xh), &s) in dz.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
        let proj = g.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
        let mean = if norm == Norm::Layernorm { g.sum() / n } else { 0.0 };
        ndarray::Zip::from(&mut g).and(&xh).for_each(|gv, &xv| {
            *gv = s * (*gv - mean - xv * proj);
        });
    }
    dz
}
