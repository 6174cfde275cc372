//! MLPs with diagonal-Gaussian output heads, Glorot initialization, and the
//! Adam optimizer shared by every training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};
use crate::rng::Stream;

pub const LOG_STD_LO: f64 = -10.0;
pub const LOG_STD_HI: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LinearLayer {
    pub weight: Tensor, // [in, out], row-major
    pub bias: Tensor,   // [out]
}

/// Plain MLP parameters. Hidden layers share one activation; the final layer
/// is always linear.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<LinearLayer>,
    pub activation: Activation,
}

/// Glorot-uniform weights, zero biases. `dims` chains layer sizes, so
/// `[d, 128, 128, 2k]` builds three layers.
pub fn init_params(dims: &[usize], activation: Activation, rng: &mut Stream) -> MlpParams {
    assert!(dims.len() >= 2, "need at least one layer");
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| rng.random_range(-bound..bound)).collect();
        layers.push(LinearLayer {
            weight: Tensor::matrix(fan_in, fan_out, data).unwrap(),
            bias: Tensor::zeros(&[fan_out]),
        });
    }
    MlpParams { layers, activation }
}

impl MlpParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weight.shape()[1]
    }

    /// Register all parameters as tape leaves.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Result<BoundMlp> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = tape.leaf(l.weight.clone(), trainable)?;
            let b = tape.leaf(l.bias.clone(), trainable)?;
            layers.push((w, b));
        }
        Ok(BoundMlp { layers, activation: self.activation })
    }

    /// Plain forward pass of a single input row, no tape involved.
    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.input_dim(), "eval: input length mismatch");
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let (din, dout) = (l.weight.shape()[0], l.weight.shape()[1]);
            let mut out = l.bias.data().to_vec();
            for (r, &hv) in h.iter().enumerate().take(din) {
                let row = &l.weight.data()[r * dout..(r + 1) * dout];
                for (o, &w) in out.iter_mut().zip(row) {
                    *o += hv * w;
                }
            }
            if i < last && self.activation == Activation::Tanh {
                for v in &mut out {
                    *v = v.tanh();
                }
            }
            h = out;
        }
        h
    }

    /// Named views of all parameters, used to pair gradients with Adam slots.
    /// `prefix` keeps names unique across the nets of one model.
    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(2 * self.layers.len());
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}.w{i}"), &mut l.weight));
            out.push((format!("{prefix}.b{i}"), &mut l.bias));
        }
        out
    }
}

/// Tape-bound MLP: parameter node ids in layer order.
pub struct BoundMlp {
    pub layers: Vec<(NodeId, NodeId)>,
    activation: Activation,
}

impl BoundMlp {
    /// Gradient node ids in the same order as `named_params_mut`.
    pub fn param_ids(&self) -> Vec<NodeId> {
        self.layers.iter().flat_map(|&(w, b)| [w, b]).collect()
    }
}

/// Forward pass of `x` ([batch, in]) through a bound MLP.
pub fn mlp_forward(tape: &mut Tape, mlp: &BoundMlp, x: NodeId) -> Result<NodeId> {
    let last = mlp.layers.len() - 1;
    let mut h = x;
    for (i, &(w, b)) in mlp.layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        let z = tape.broadcast_add(z, b)?;
        h = if i < last {
            match mlp.activation {
                Activation::Tanh => tape.tanh(z)?,
                Activation::Identity => z,
            }
        } else {
            z
        };
    }
    Ok(h)
}

/// Mean and clamped log-std halves of a width-2k head output.
pub struct GaussianHead {
    pub mean: NodeId,
    pub log_std: NodeId,
}

pub fn gaussian_head(tape: &mut Tape, raw: NodeId) -> Result<GaussianHead> {
    let width = tape.value(raw).cols();
    if width % 2 != 0 {
        return Err(Error::InvalidArgument {
            context: "gaussian_head",
            message: format!("head width must be even, got {width}"),
        });
    }
    let k = width / 2;
    let mean = tape.slice_cols(raw, 0, k)?;
    let log_std = tape.slice_cols(raw, k, width)?;
    let log_std = tape.clamp(log_std, LOG_STD_LO, LOG_STD_HI)?;
    Ok(GaussianHead { mean, log_std })
}

/// Adam with bias correction. Slots are keyed by position, so callers must
/// pass parameters in a fixed order across steps; updates themselves are
/// elementwise and do not depend on that order.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![], v: vec![] }
    }

    pub fn step(&mut self, params: &mut [(String, &mut Tensor)], grads: &[&Tensor]) -> Result<()> {
        assert_eq!(params.len(), grads.len());
        if self.m.is_empty() {
            self.m = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
            self.v = params.iter().map(|(_, p)| Tensor::zeros(p.shape())).collect();
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() || !g.all_finite() {
                return Err(Error::NonFiniteGradient { param: name.clone() });
            }
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, ((_, p), g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            for (j, pj) in p.data_mut().iter_mut().enumerate() {
                let gj = g.data()[j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * gj;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *pj -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn forward_host(params: &MlpParams, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, false).unwrap();
        let xid = tape.constant(x.clone()).unwrap();
        let out = mlp_forward(&mut tape, &bound, xid).unwrap();
        tape.value(out).clone()
    }

    #[test]
    fn zero_weights_yield_bias() {
        let mut p = init_params(&[3, 2], Activation::Tanh, &mut rng::master(0));
        for v in p.layers[0].weight.data_mut() {
            *v = 0.0;
        }
        p.layers[0].bias = Tensor::vector(vec![0.5, -1.5]);
        let y = forward_host(&p, &Tensor::matrix(2, 3, vec![9.0, -3.0, 1.0, 0.0, 2.0, 7.0]).unwrap());
        assert_eq!(y.data(), &[0.5, -1.5, 0.5, -1.5]);
    }

    #[test]
    fn identity_single_layer_passes_input_through() {
        let mut p = init_params(&[2, 2], Activation::Tanh, &mut rng::master(0));
        p.layers[0].weight = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let x = Tensor::matrix(1, 2, vec![0.3, -0.7]).unwrap();
        assert_eq!(forward_host(&p, &x).data(), x.data());
    }

    #[test]
    fn eval_matches_tape_forward() {
        // The tape path uses a blocked GEMM, so agreement is to rounding,
        // not bitwise.
        let p = init_params(&[3, 5, 4], Activation::Tanh, &mut rng::master(11));
        let x = vec![0.4, -1.2, 2.0];
        let tape_out = forward_host(&p, &Tensor::matrix(1, 3, x.clone()).unwrap());
        for (a, b) in tape_out.data().iter().zip(&p.eval(&x)) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn glorot_bound_and_determinism() {
        let p = init_params(&[2, 2], Activation::Tanh, &mut rng::master(5));
        let bound = (6.0f64 / 4.0).sqrt();
        assert!(p.layers[0].weight.data().iter().all(|w| w.abs() < bound));
        assert!(p.layers[0].bias.data().iter().all(|&b| b == 0.0));
        let q = init_params(&[2, 2], Activation::Tanh, &mut rng::master(5));
        assert_eq!(p.layers[0].weight.data(), q.layers[0].weight.data());
    }

    #[test]
    fn glorot_empirical_variance() {
        let p = init_params(&[100, 100], Activation::Tanh, &mut rng::master(1));
        let w = p.layers[0].weight.data();
        let var: f64 = w.iter().map(|v| v * v).sum::<f64>() / w.len() as f64;
        let expect = (6.0 / 200.0f64) / 3.0; // Var U(-a,a) = a²/3
        assert!((var - expect).abs() < 0.1 * expect, "var {var} vs {expect}");
    }

    #[test]
    fn gaussian_head_zero_raw_is_standard() {
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::matrix(1, 4, vec![0.0; 4]).unwrap()).unwrap();
        let head = gaussian_head(&mut tape, raw).unwrap();
        assert_eq!(tape.value(head.mean).data(), &[0.0, 0.0]);
        assert_eq!(tape.value(head.log_std).data(), &[0.0, 0.0]);
    }

    #[test]
    fn gaussian_head_clamps_extreme_log_std() {
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::matrix(1, 2, vec![0.0, 50.0]).unwrap()).unwrap();
        let head = gaussian_head(&mut tape, raw).unwrap();
        assert_eq!(tape.value(head.log_std).data(), &[10.0]);
    }

    #[test]
    fn gaussian_head_rejects_odd_width() {
        let mut tape = Tape::new();
        let raw = tape.constant(Tensor::matrix(1, 3, vec![0.0; 3]).unwrap()).unwrap();
        assert!(gaussian_head(&mut tape, raw).is_err());
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Tensor::vector(vec![1.0, -2.0]);
        let g = Tensor::zeros(&[2]);
        let mut opt = Adam::new(1e-3);
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &[&g]).unwrap();
        assert_eq!(p.data(), &[1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        let mut p = Tensor::vector(vec![0.0]);
        let g = Tensor::vector(vec![3.7]);
        let mut opt = Adam::new(1e-3);
        let mut params = vec![("p".to_string(), &mut p)];
        opt.step(&mut params, &[&g]).unwrap();
        assert!((p.data()[0] + 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adam_rejects_non_finite_gradient_with_name() {
        let mut p = Tensor::vector(vec![0.0]);
        let g = Tensor::vector(vec![f64::NAN]);
        let mut opt = Adam::new(1e-3);
        let mut params = vec![("enc.w0".to_string(), &mut p)];
        let err = opt.step(&mut params, &[&g]).unwrap_err();
        assert!(err.to_string().contains("enc.w0"));
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        let mut x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let mut opt = Adam::new(0.05);
        for _ in 0..500 {
            let g = x.clone();
            let mut params = vec![("x".to_string(), &mut x)];
            opt.step(&mut params, &[&g]).unwrap();
        }
        let norm: f64 = x.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm <= 1e-3, "‖x‖ = {norm}");
    }

    #[test]
    fn adam_updates_do_not_depend_on_registration_order() {
        let g1 = Tensor::vector(vec![0.3]);
        let g2 = Tensor::vector(vec![-0.9]);
        let run = |flip: bool| {
            let mut a = Tensor::vector(vec![1.0]);
            let mut b = Tensor::vector(vec![2.0]);
            let mut opt = Adam::new(0.01);
            for _ in 0..3 {
                if flip {
                    let mut params = vec![("b".to_string(), &mut b), ("a".to_string(), &mut a)];
                    opt.step(&mut params, &[&g2, &g1]).unwrap();
                } else {
                    let mut params = vec![("a".to_string(), &mut a), ("b".to_string(), &mut b)];
                    opt.step(&mut params, &[&g1, &g2]).unwrap();
                }
            }
            (a.data()[0], b.data()[0])
        };
        assert_eq!(run(false), run(true));
    }

    #[test]
    fn two_layer_net_fits_square_function() {
        let mut stream = rng::master(2);
        let mut net = init_params(&[1, 16, 1], Activation::Tanh, &mut stream);
        let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let x = Tensor::matrix(64, 1, xs).unwrap();
        let y = Tensor::matrix(64, 1, ys).unwrap();
        let mut opt = Adam::new(1e-2);
        let mut last_mse = f64::INFINITY;
        for _ in 0..2000 {
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true).unwrap();
            let xid = tape.constant(x.clone()).unwrap();
            let yid = tape.constant(y.clone()).unwrap();
            let pred = mlp_forward(&mut tape, &bound, xid).unwrap();
            let diff = tape.sub(pred, yid).unwrap();
            let sq = tape.square(diff).unwrap();
            let loss = tape.mean_all(sq).unwrap();
            last_mse = tape.value(loss).item();
            let grads = tape.backward(loss).unwrap();
            let ids = bound.param_ids();
            let gs: Vec<&Tensor> = ids.iter().map(|id| grads.wrt(*id).unwrap()).collect();
            let mut params = net.named_params_mut("net");
            opt.step(&mut params, &gs).unwrap();
        }
        assert!(last_mse <= 1e-3, "MSE {last_mse}");
    }
}
