//! Independent oracles used by the test suites: direct-summation convolution,
//! central finite differences and seeded random tensors.
//!
//! Nothing here calls into the GEMM kernels or the reverse sweep, so these can
//! check them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{Graph, NodeId, ParamStore, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Triple-loop `y[b,o,t] = bias[o] + sum_{c,k} w[o,c,k] x_pad[b,c,t*stride+k]`.
pub fn direct_conv1d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: &[f64],
    stride: usize,
    pad: usize,
) -> Tensor<f64> {
    let (batch, cin, len) = x.dims3().unwrap();
    let (cout, _, kernel) = w.dims3().unwrap();
    let out = (len + 2 * pad - kernel) / stride + 1;
    let mut y = vec![0.0; batch * cout * out];
    for b in 0..batch {
        for o in 0..cout {
            for t in 0..out {
                let mut acc = bias[o];
                for c in 0..cin {
                    for k in 0..kernel {
                        let p = (t * stride + k) as isize - pad as isize;
                        if p >= 0 && (p as usize) < len {
                            acc += w.at3(o, c, k) * x.at3(b, c, p as usize);
                        }
                    }
                }
                y[(b * cout + o) * out + t] = acc;
            }
        }
    }
    Tensor::new(vec![batch, cout, out], y).unwrap()
}

/// Scatter form of the transposed convolution, weights `[Cin, Cout, K]`.
pub fn direct_tconv1d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: &[f64],
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> Tensor<f64> {
    let (batch, cin, len) = x.dims3().unwrap();
    let (_, cout, kernel) = w.dims3().unwrap();
    let out = (len - 1) * stride + kernel + out_pad - 2 * pad;
    let mut y = vec![0.0; batch * cout * out];
    for b in 0..batch {
        for o in 0..cout {
            for t in 0..out {
                y[(b * cout + o) * out + t] = bias[o];
            }
        }
        for c in 0..cin {
            for t in 0..len {
                for o in 0..cout {
                    for k in 0..kernel {
                        let p = (t * stride + k) as isize - pad as isize;
                        if p >= 0 && (p as usize) < out {
                            y[(b * cout + o) * out + p as usize] += x.at3(b, c, t) * w.at3(c, o, k);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![batch, cout, out], y).unwrap()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Clone, Debug, Default)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_err: f64,
    /// (label, flat index, analytic, numeric) of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

impl GradReport {
    fn record(&mut self, label: &str, idx: usize, analytic: f64, numeric: f64, floor: f64) {
        let e = rel_err(analytic, numeric, floor);
        self.checked += 1;
        if self.worst.is_none() || e > self.max_rel_err {
            self.max_rel_err = e;
            self.worst = Some((label.to_string(), idx, analytic, numeric));
        }
    }
}

/// Compares reverse-mode gradients of a scalar-valued graph with respect to
/// each input tensor against central differences with step `h`.
pub fn check_input_gradients<F>(inputs: &[Tensor<f64>], h: f64, floor: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut store = ParamStore::new();
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let loss = build(&mut g, &ids)?;
    let grads = g.backward(loss, &mut store)?;
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| grads.wrt(id).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss)?.item()
    };

    let mut report = GradReport::default();
    for (which, input) in inputs.iter().enumerate() {
        for idx in 0..input.numel() {
            let mut plus = inputs.to_vec();
            let mut minus = inputs.to_vec();
            let v = input.data()[idx];
            plus[which].data_mut()[idx] = v + h;
            minus[which].data_mut()[idx] = v - h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let a = analytic[which].get(idx).copied().unwrap_or(0.0);
            report.record(&format!("input{which}"), idx, a, numeric, floor);
        }
    }
    Ok(report)
}

/// Difference scheme for [`check_param_gradients`]. The step for entry
/// `theta` is `rel_step * max(1, |theta|)`.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub rel_step: f64,
    /// Fourth-order five-point rule instead of the two-point central one.
    pub five_point: bool,
    pub floor: f64,
}

impl Stencil {
    pub fn central(rel_step: f64, floor: f64) -> Self {
        Self {
            rel_step,
            five_point: false,
            floor,
        }
    }

    pub fn five_point(rel_step: f64, floor: f64) -> Self {
        Self {
            rel_step,
            five_point: true,
            floor,
        }
    }
}

/// Finite-difference check of parameter gradients. `forward` must build the
/// loss from the store's current values. `pick` selects which flat indices of
/// each parameter are checked (all of them when it returns `None`).
pub fn check_param_gradients<F, P>(
    store: &mut ParamStore<f64>,
    stencil: Stencil,
    forward: F,
    mut pick: P,
) -> Result<GradReport>
where
    F: Fn(&ParamStore<f64>, &mut Graph<f64>) -> Result<NodeId>,
    P: FnMut(&str, usize) -> Option<Vec<usize>>,
{
    store.zero_grad();
    let mut g = Graph::new();
    let loss = forward(store, &mut g)?;
    g.backward(loss, store)?;
    drop(g);

    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    let mut report = GradReport::default();
    for id in ids {
        let (name, numel, analytic) = {
            let p = store.get(id);
            (p.name().to_string(), p.value().numel(), p.grad().to_vec())
        };
        let indices = pick(&name, numel).unwrap_or_else(|| (0..numel).collect());
        for idx in indices {
            let original = store.get(id).value().clone();
            let theta = original.data()[idx];
            let h = stencil.rel_step * theta.abs().max(1.0);
            let mut eval_at = |v: f64| -> Result<f64> {
                let mut t = original.clone();
                t.data_mut()[idx] = v;
                store.set_value(id, t)?;
                let mut g = Graph::new();
                let loss = forward(store, &mut g)?;
                g.value(loss)?.item()
            };
            let numeric = if stencil.five_point {
                let near = eval_at(theta + h)? - eval_at(theta - h)?;
                let far = eval_at(theta + 2.0 * h)? - eval_at(theta - 2.0 * h)?;
                (8.0 * near - far) / (12.0 * h)
            } else {
                (eval_at(theta + h)? - eval_at(theta - h)?) / (2.0 * h)
            };
            store.set_value(id, original)?;
            report.record(&name, idx, analytic[idx], numeric, stencil.floor);
        }
    }
    Ok(report)
}
