#![allow(dead_code)]

use ndarray::Array2;
use partcrop::attacker::{Activation, Mlp, MlpSpec, Norm, Variant};
use partcrop::rng::{seeded, standard_normal, Rng};

pub const FD_EPS: f64 = 1e-3;

/// Forward pass written out with plain loops, independent of the crate's
/// matrix code.
pub fn straight_line_forward(mlp: &Mlp, x: &[f64]) -> f64 {
    let spec = mlp.spec();
    let (act, norm) = (spec.effective_activation(), spec.effective_norm());
    let mut a = x.to_vec();
    let last = mlp.num_layers() - 1;
    for l in 0..=last {
        let w = mlp.weight(l);
        let b = mlp.bias(l);
        let (fan_in, fan_out) = w.dim();
        let mut z = vec![0.0; fan_out];
        for j in 0..fan_out {
            let mut s = b[j];
            for i in 0..fan_in {
                s += a[i] * w[[i, j]];
            }
            z[j] = s;
        }
        if l == last {
            return 1.0 / (1.0 + (-z[0]).exp());
        }
        if norm != Norm::None {
            let g = mlp.gain(l).expect("gain on normalized layer");
            let n = fan_out as f64;
            let mu = if norm == Norm::Layernorm { z.iter().sum::<f64>() / n } else { 0.0 };
            let ms = z.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let denom = (ms + 1e-6).sqrt();
            for j in 0..fan_out {
                z[j] = g[j] * (z[j] - mu) / denom;
            }
        }
        a = z
            .iter()
            .map(|&v| match act {
                Activation::Relu => v.max(0.0),
                Activation::Tanh => v.tanh(),
                Activation::LeakyRelu => {
                    if v > 0.0 {
                        v
                    } else {
                        0.01 * v
                    }
                }
                Activation::Silu => v / (1.0 + (-v).exp()),
            })
            .collect();
    }
    unreachable!()
}

pub fn small_spec(variant: Variant, activation: Activation, norm: Norm) -> MlpSpec {
    MlpSpec {
        in_dim: 6,
        width: 64,
        variant,
        activation,
        norm,
        v2: false,
    }
}

/// Parameters at a scale where every layer matters (the training init is
/// too small for a sharp check).
pub fn random_params(spec: &MlpSpec, r: &mut Rng) -> Mlp {
    let mut mlp = Mlp::build(spec, 0).unwrap();
    for l in 0..mlp.num_layers() {
        let fan_in = mlp.weight(l).nrows() as f64;
        let std = 1.0 / fan_in.sqrt();
        for w in mlp.weight_mut(l).iter_mut() {
            *w = std * standard_normal(r);
        }
        for b in mlp.bias_mut(l).iter_mut() {
            *b = 0.1 * standard_normal(r);
        }
        if let Some(g) = mlp.gain_mut(l) {
            for v in g.iter_mut() {
                *v = 1.0 + 0.2 * standard_normal(r);
            }
        }
    }
    mlp
}

pub fn random_batch(rows: usize, cols: usize, r: &mut Rng) -> (Array2<f64>, Vec<f64>) {
    let x = Array2::from_shape_fn((rows, cols), |_| standard_normal(r));
    let y = (0..rows).map(|i| (i % 2) as f64).collect();
    (x, y)
}

fn kink_pattern(mlp: &Mlp, x: &Array2<f64>) -> Vec<bool> {
    mlp.hidden_pre_activations(x.view())
        .unwrap()
        .iter()
        .flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
        .collect()
}

/// Mean BCE and kink pattern from one pass, for piecewise-linear activations.
fn loss_and_pattern(mlp: &Mlp, x: &Array2<f64>, y: &[f64]) -> (f64, Vec<bool>) {
    let pre = mlp.hidden_pre_activations(x.view()).unwrap();
    let slope = if mlp.spec().effective_activation() == Activation::LeakyRelu { 0.01 } else { 0.0 };
    let last = mlp.num_layers() - 1;
    let (w, b) = (mlp.weight(last), mlp.bias(last)[0]);
    let top = pre.last().unwrap();
    let mut loss = 0.0;
    for (row, &t) in top.rows().into_iter().zip(y) {
        let z = b + row.iter().zip(w.column(0)).map(|(&u, &w)| if u > 0.0 { u } else { slope * u } * w).sum::<f64>();
        loss += z.max(0.0) - t * z + (-z.abs()).exp().ln_1p();
    }
    let pattern = pre.iter().flat_map(|a| a.iter().map(|&v| v > 0.0).collect::<Vec<_>>()).collect();
    (loss / y.len() as f64, pattern)
}

/// Sets flat parameter `k` (in `params()` order).
fn set_param(mlp: &mut Mlp, mut k: usize, value: f64) {
    for (_, s) in mlp.params_mut() {
        if k < s.len() {
            s[k] = value;
            return;
        }
        k -= s.len();
    }
    panic!("parameter index out of range")
}

/// Largest relative deviation between the analytic gradient and central
/// differences, `max|g - fd| / max(max|g|, max|fd|)`, over every parameter.
/// Coordinates whose perturbation moves a piecewise-linear activation across
/// its kink are skipped. Returns (error, checked, skipped).
pub fn gradient_error(mlp: &Mlp, x: &Array2<f64>, y: &[f64]) -> (f64, usize, usize) {
    let (_, grads) = mlp.loss_and_grad(x.view(), y).unwrap();
    let analytic: Vec<f64> = grads.params().iter().flat_map(|(_, g)| g.to_vec()).collect();
    let act = mlp.spec().effective_activation();
    let piecewise = matches!(act, Activation::Relu | Activation::LeakyRelu);
    let base_pattern = piecewise.then(|| kink_pattern(mlp, x));
    let mut numeric = Vec::with_capacity(analytic.len());
    let mut keep = Vec::with_capacity(analytic.len());
    let total = analytic.len();
    let values: Vec<f64> = mlp.params().iter().flat_map(|(_, p)| p.to_vec()).collect();
    let mut work = mlp.clone();
    let mut evaluate = |k: usize, delta: f64| {
        set_param(&mut work, k, values[k] + delta);
        let (loss, same) = match &base_pattern {
            Some(b) => {
                let (loss, pattern) = loss_and_pattern(&work, x, y);
                (loss, pattern == *b)
            }
            None => (work.loss(x.view(), y).unwrap(), true),
        };
        set_param(&mut work, k, values[k]);
        (loss, same)
    };
    for k in 0..total {
        let (lp, same_p) = evaluate(k, FD_EPS);
        let (lm, same_m) = evaluate(k, -FD_EPS);
        keep.push(same_p && same_m);
        numeric.push((lp - lm) / (2.0 * FD_EPS));
    }
    let mut scale = 0.0f64;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for k in 0..total {
        if !keep[k] {
            continue;
        }
        checked += 1;
        scale = scale.max(analytic[k].abs()).max(numeric[k].abs());
        worst = worst.max((analytic[k] - numeric[k]).abs());
    }
    let err = if scale == 0.0 { 0.0 } else { worst / scale };
    (err, checked, total - checked)
}

/// Worst gradient error over `draws` random parameter sets and batches.
pub fn worst_gradient_error(spec: &MlpSpec, draws: usize, seed: u64) -> f64 {
    let mut r = seeded(seed);
    (0..draws)
        .map(|_| {
            let mlp = random_params(spec, &mut r);
            let (x, y) = random_batch(5, spec.in_dim, &mut r);
            let (err, checked, _) = gradient_error(&mlp, &x, &y);
            assert!(checked > 0, "every coordinate skipped for {spec:?}");
            err
        })
        .fold(0.0, f64::max)
}
