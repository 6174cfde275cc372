//! Weighted-ELBO VAE with a mixture prior over encoded pseudo-inputs.
//!
//! The model approximates an unnormalized target g* from samples of f with
//! importance weights w = g̃*/f̃. Training maximizes a weighted ELBO; the
//! prior is a uniform mixture of encoder posteriors at K learned
//! pseudo-inputs, which are themselves pre-trained onto heavy-weight data
//! points to avoid posterior collapse.

mod proposal;

pub use proposal::{build_proposal, naive_marginal_estimate, FiniteMixtureProposal};

use crate::autodiff::{NodeId, Tape, Tensor};
use crate::dists::{logsumexp, DiagGaussian, LN_2PI};
use crate::error::{Error, Result};
use crate::nets::{
    gaussian_head, init_params, mlp_forward, Activation, Adam, MlpParams, LOG_STD_HI, LOG_STD_LO,
};
use crate::rng::Stream;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Floor on per-coordinate data scale so constant coordinates stay usable.
const SCALE_FLOOR: f64 = 1e-6;
/// Pseudo-input fit tolerance (max over k of ‖VP(e_k) − x_k‖, normalized).
const VP_FIT_TOL: f64 = 1e-3;
/// Early-exit tolerance for the same fit, tighter so the final check holds.
const VP_EXIT_TOL: f64 = 5e-4;

// ── dataset ─────────────────────────────────────────────────────────────

/// Samples from f with unnormalized log-weights log g̃*(x) − log f̃(x).
#[derive(Clone, Debug)]
pub struct WeightedDataset {
    points: Vec<f64>,
    d: usize,
    log_w: Vec<f64>,
}

impl WeightedDataset {
    /// `points` is row-major n×d. Log-weights may be −∞ (zero weight) but
    /// not +∞ or NaN, and at least one must be finite.
    pub fn new(points: Vec<f64>, d: usize, log_w: Vec<f64>) -> Result<Self> {
        let n = log_w.len();
        if d == 0 || n == 0 || points.len() != n * d {
            return Err(Error::InvalidArgument {
                context: "WeightedDataset",
                message: format!("points len {} != n {} × d {}", points.len(), n, d),
            });
        }
        if !points.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument {
                context: "WeightedDataset",
                message: "non-finite data point".into(),
            });
        }
        let ok = log_w.iter().all(|&lw| lw.is_finite() || lw == f64::NEG_INFINITY);
        if !ok || log_w.iter().all(|&lw| lw == f64::NEG_INFINITY) {
            return Err(Error::InvalidArgument {
                context: "WeightedDataset",
                message: "log-weights must be finite or −∞, with at least one finite".into(),
            });
        }
        Ok(Self { points, d, log_w })
    }

    pub fn n(&self) -> usize {
        self.log_w.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.points[i * self.d..(i + 1) * self.d]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_w
    }

    /// Weights scaled to mean 1. Invariant under any global shift of the
    /// log-weights, which absorbs the unknown normalizing constants of f̃
    /// and g̃*. Shifting by the max log-weight before exponentiating keeps
    /// equal log-weights at exactly 1.0 and never overflows.
    pub fn normalized_weights(&self) -> Vec<f64> {
        let mx = self.log_w.iter().copied().filter(|l| l.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        let mut w: Vec<f64> = self
            .log_w
            .iter()
            .map(|&lw| if lw == f64::NEG_INFINITY { 0.0 } else { (lw - mx).exp() })
            .collect();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        for v in &mut w {
            *v /= mean;
        }
        w
    }

    /// Effective sample size (Σw)²/Σw² of the normalized weights.
    pub fn ess(&self) -> f64 {
        let w = self.normalized_weights();
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        s * s / s2
    }

    /// Weighted per-coordinate mean and std; std floored at 1e-6.
    pub fn normalization(&self) -> (Vec<f64>, Vec<f64>) {
        let w = self.normalized_weights();
        let n = self.n() as f64;
        let d = self.d;
        let mut mean = vec![0.0; d];
        for (i, &wi) in w.iter().enumerate() {
            for (j, &x) in self.row(i).iter().enumerate() {
                mean[j] += wi * x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for (i, &wi) in w.iter().enumerate() {
            for (j, &x) in self.row(i).iter().enumerate() {
                let c = x - mean[j];
                var[j] += wi * c * c;
            }
        }
        let scale = var.iter().map(|v| (v / n).sqrt().max(SCALE_FLOOR)).collect();
        (mean, scale)
    }
}

// ── model ───────────────────────────────────────────────────────────────

/// Trained VAE: encoder φ, decoder θ, pseudo-input net λ, plus the affine
/// normalization of the training data. Nets operate in normalized
/// coordinates y = (x − shift)/scale; user-facing densities are in x-space.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VaeModel {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub vpnet: MlpParams,
    pub d_z: usize,
    pub k: usize,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl VaeModel {
    /// Fresh untrained model with the 2-hidden-layer tanh architecture.
    pub fn init(
        d: usize,
        d_z: usize,
        k: usize,
        hidden: usize,
        shift: Vec<f64>,
        scale: Vec<f64>,
        rng: &mut Stream,
    ) -> Result<Self> {
        if d_z == 0 || d_z >= d || k == 0 || shift.len() != d || scale.len() != d {
            return Err(Error::InvalidArgument {
                context: "VaeModel::init",
                message: format!("need 1 ≤ d_z < d and k ≥ 1, got d {d}, d_z {d_z}, k {k}"),
            });
        }
        if !scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument {
                context: "VaeModel::init",
                message: "scale must be positive".into(),
            });
        }
        Ok(Self {
            encoder: init_params(&[d, hidden, hidden, 2 * d_z], Activation::Tanh, rng),
            decoder: init_params(&[d_z, hidden, hidden, 2 * d], Activation::Tanh, rng),
            vpnet: init_params(&[k, d], Activation::Identity, rng),
            d_z,
            k,
            shift,
            scale,
        })
    }

    pub fn dim(&self) -> usize {
        self.shift.len()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).zip(&self.scale).map(|((&x, &m), &s)| (x - m) / s).collect()
    }

    /// Pseudo-inputs u_k = VP(e_k) in normalized coordinates, row-major k×d.
    pub fn pseudo_inputs(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.k * self.dim());
        let mut e = vec![0.0; self.k];
        for kk in 0..self.k {
            e[kk] = 1.0;
            out.extend(self.vpnet.eval(&e));
            e[kk] = 0.0;
        }
        out
    }

    /// Latent posteriors q(·|u_k) at the pseudo-inputs: the prior mixture's
    /// components. O(K) encoder passes per call, so cache at call sites that
    /// evaluate many points.
    pub fn pseudo_posteriors(&self) -> Vec<DiagGaussian> {
        let d = self.dim();
        let u = self.pseudo_inputs();
        (0..self.k).map(|kk| encode_normalized(self, &u[kk * d..(kk + 1) * d])).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(std::fs::write(path, serde_json::to_string(self)?)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Posterior q(z|x) for raw-coordinate x.
pub fn encode(model: &VaeModel, x: &[f64]) -> DiagGaussian {
    encode_normalized(model, &model.normalize(x))
}

/// Posterior for an already-normalized point (pseudo-inputs live here).
pub fn encode_normalized(model: &VaeModel, y: &[f64]) -> DiagGaussian {
    let raw = model.encoder.eval(y);
    let (mu, s) = raw.split_at(model.d_z);
    let std = s.iter().map(|&v| v.clamp(LOG_STD_LO, LOG_STD_HI).exp()).collect();
    DiagGaussian::new(mu.to_vec(), std).expect("encoder output is finite")
}

/// Likelihood g(x|z) as an x-space diagonal Gaussian: decoder output
/// de-normalized through the model's affine.
pub fn decode(model: &VaeModel, z: &[f64]) -> DiagGaussian {
    let d = model.dim();
    let raw = model.decoder.eval(z);
    let (mu_y, s_y) = raw.split_at(d);
    let mean = mu_y.iter().zip(&model.shift).zip(&model.scale).map(|((&m, &b), &s)| b + s * m).collect();
    let std = s_y
        .iter()
        .zip(&model.scale)
        .map(|(&v, &s)| v.clamp(LOG_STD_LO, LOG_STD_HI).exp() * s)
        .collect();
    DiagGaussian::new(mean, std).expect("decoder output is finite")
}

/// log p^VP(z) = log (1/K) Σ_k q(z|u_k). Recomputes the K posteriors; use
/// `pseudo_posteriors` directly when evaluating many z.
pub fn vampprior_logpdf(model: &VaeModel, z: &[f64]) -> f64 {
    let comps = model.pseudo_posteriors();
    let logs: Vec<f64> = comps.iter().map(|c| c.logpdf(z)).collect();
    logsumexp(&logs) - (model.k as f64).ln()
}

/// n draws from the prior mixture, row-major n×d_z.
pub fn vampprior_sample(model: &VaeModel, n: usize, rng: &mut Stream) -> Vec<f64> {
    let comps = model.pseudo_posteriors();
    let mut out = vec![0.0; n * model.d_z];
    for i in 0..n {
        let kk = rng.random_range(0..model.k);
        comps[kk].sample_into(rng, &mut out[i * model.d_z..(i + 1) * model.d_z]);
    }
    out
}

// ── weighted ELBO step ──────────────────────────────────────────────────

/// One minibatch loss graph, ready for `tape.backward(loss)`.
pub struct WelboStep {
    pub tape: Tape,
    /// Scalar node: negative (weighted) ELBO estimate over the batch.
    pub loss: NodeId,
    /// Parameter node ids in `model_params_mut` order (enc, dec, vp).
    pub param_ids: Vec<NodeId>,
    /// Weighted batch mean of the reconstruction term log g(x|z).
    pub mean_recon: f64,
    /// Weighted batch mean of the single-sample KL term log q − log p.
    pub mean_kl: f64,
}

/// Loss = −(1/B) Σ_n w_n [log g(x_n|z_n) − (log q(z_n|x_n) − log p^VP(z_n))]
/// with one shared reparameterized z_n per point. Weights must be the
/// dataset's mean-1 normalized weights. Reconstruction is reported in
/// x-space, so the affine Jacobian Σ log scale enters as a constant.
pub fn welbo_minibatch(
    model: &VaeModel,
    points: &[f64],
    weights: &[f64],
    rng: &mut Stream,
) -> Result<WelboStep> {
    let eps = draw_eps(points.len() / model.dim().max(1), model.d_z, rng);
    welbo_graph(model, points, Some(weights), &eps)
}

/// Unweighted ELBO loss: the classical estimator, identical graph and RNG
/// consumption except for the weight product.
pub fn elbo_minibatch(model: &VaeModel, points: &[f64], rng: &mut Stream) -> Result<WelboStep> {
    let eps = draw_eps(points.len() / model.dim().max(1), model.d_z, rng);
    welbo_graph(model, points, None, &eps)
}

fn draw_eps(b: usize, d_z: usize, rng: &mut Stream) -> Vec<f64> {
    (0..b * d_z).map(|_| rng.sample(StandardNormal)).collect()
}

fn welbo_graph(
    model: &VaeModel,
    points: &[f64],
    weights: Option<&[f64]>,
    eps: &[f64],
) -> Result<WelboStep> {
    let d = model.dim();
    let d_z = model.d_z;
    let k = model.k;
    if points.is_empty() || points.len() % d != 0 {
        return Err(Error::InvalidArgument {
            context: "welbo_minibatch",
            message: format!("batch len {} not a nonempty multiple of d {}", points.len(), d),
        });
    }
    let b = points.len() / d;
    if let Some(w) = weights {
        if w.len() != b {
            return Err(Error::InvalidArgument {
                context: "welbo_minibatch",
                message: format!("{} weights for {} points", w.len(), b),
            });
        }
    }

    let mut y = Vec::with_capacity(b * d);
    for i in 0..b {
        y.extend(model.normalize(&points[i * d..(i + 1) * d]));
    }
    let log_jac: f64 = model.scale.iter().map(|s| s.ln()).sum();

    let mut tape = Tape::new();
    let enc = model.encoder.bind(&mut tape, true)?;
    let dec = model.decoder.bind(&mut tape, true)?;
    let vp = model.vpnet.bind(&mut tape, true)?;
    let mut param_ids = enc.param_ids();
    param_ids.extend(dec.param_ids());
    param_ids.extend(vp.param_ids());

    let yc = tape.constant(Tensor::matrix(b, d, y)?)?;
    let epsc = tape.constant(Tensor::matrix(b, d_z, eps.to_vec())?)?;
    let eps2c = tape.constant(Tensor::matrix(b, d_z, eps.iter().map(|e| e * e).collect())?)?;

    // Posterior and shared reparameterized sample z = μ + e^s ⊙ ε.
    let enc_raw = mlp_forward(&mut tape, &enc, yc)?;
    let enc_head = gaussian_head(&mut tape, enc_raw)?;
    let sig_z = tape.exp(enc_head.log_std)?;
    let z = {
        let se = tape.mul(sig_z, epsc)?;
        tape.add(enc_head.mean, se)?
    };

    // log q(z|x) at z = μ+σε collapses to −½ Σ_j (ε² + 2s + ln 2π); the s
    // term keeps the full gradient, ε being constant.
    let logq = {
        let two_s = tape.scale(enc_head.log_std, 2.0)?;
        let el = tape.add(eps2c, two_s)?;
        let el = tape.add_scalar(el, LN_2PI)?;
        let row = tape.sum_axis(el, 1)?;
        tape.scale(row, -0.5)?
    };

    // Prior mixture at the K encoded pseudo-inputs.
    let logp = {
        let eye = tape.constant(eye_tensor(k))?;
        let u = mlp_forward(&mut tape, &vp, eye)?;
        let u_raw = mlp_forward(&mut tape, &enc, u)?;
        let u_head = gaussian_head(&mut tape, u_raw)?;
        let pairwise = tape.gauss_pairwise_logpdf(z, u_head.mean, u_head.log_std)?;
        let lse = tape.logsumexp_axis(pairwise, 1)?;
        tape.add_scalar(lse, -(k as f64).ln())?
    };

    // x-space reconstruction term log g(x|z).
    let logg = {
        let dec_raw = mlp_forward(&mut tape, &dec, z)?;
        let dec_head = gaussian_head(&mut tape, dec_raw)?;
        let diff = tape.sub(yc, dec_head.mean)?;
        let neg_s = tape.neg(dec_head.log_std)?;
        let inv = tape.exp(neg_s)?;
        let t = tape.mul(diff, inv)?;
        let t2 = tape.square(t)?;
        let two_s = tape.scale(dec_head.log_std, 2.0)?;
        let el = tape.add(t2, two_s)?;
        let el = tape.add_scalar(el, LN_2PI)?;
        let row = tape.sum_axis(el, 1)?;
        let row = tape.scale(row, -0.5)?;
        tape.add_scalar(row, -log_jac)?
    };

    let kl = tape.sub(logq, logp)?;
    let elbo = tape.sub(logg, kl)?;
    let contrib = match weights {
        Some(w) => {
            let wc = tape.constant(Tensor::vector(w.to_vec()))?;
            tape.mul(wc, elbo)?
        }
        None => elbo,
    };
    let mean = tape.mean_all(contrib)?;
    let loss = tape.neg(mean)?;

    let wsum: f64 = match weights {
        Some(w) => w.iter().sum(),
        None => b as f64,
    };
    let wavg = |v: &[f64]| -> f64 {
        match weights {
            Some(w) => v.iter().zip(w).map(|(&t, &wi)| wi * t).sum::<f64>() / wsum.max(1e-300),
            None => v.iter().sum::<f64>() / b as f64,
        }
    };
    let mean_recon = wavg(tape.value(logg).data());
    let mean_kl = wavg(tape.value(kl).data());

    Ok(WelboStep { tape, loss, param_ids, mean_recon, mean_kl })
}

fn eye_tensor(k: usize) -> Tensor {
    let mut data = vec![0.0; k * k];
    for i in 0..k {
        data[i * k + i] = 1.0;
    }
    Tensor::matrix(k, k, data).expect("square identity")
}

// ── pre-training ────────────────────────────────────────────────────────

/// K indices drawn without replacement with probability ∝ weight, via
/// exponential race keys Exp(1)/w_i (k smallest win).
pub(crate) fn weighted_indices_without_replacement(
    weights: &[f64],
    k: usize,
    rng: &mut Stream,
) -> Result<Vec<usize>> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .filter(|&(_, &w)| w > 0.0)
        .map(|(i, &w)| {
            let e: f64 = rng.sample(Exp1);
            (e / w, i)
        })
        .collect();
    if keyed.len() < k {
        return Err(Error::InvalidArgument {
            context: "pretrain_vpnet",
            message: format!("need {k} positive-weight points, have {}", keyed.len()),
        });
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.truncate(k);
    Ok(keyed.into_iter().map(|(_, i)| i).collect())
}

pub struct VpPretrain {
    pub vpnet: MlpParams,
    /// Dataset indices s(k) chosen as pseudo-input targets.
    pub selected: Vec<usize>,
    /// Final max_k ‖VP(e_k) − x_{s(k)}‖ in normalized coordinates.
    pub max_err: f64,
}

/// Fit the linear pseudo-input net so VP(e_k) lands on K weight-sampled
/// data points (normalized coordinates), to within 1e-3 max row error.
pub fn pretrain_vpnet(
    dataset: &WeightedDataset,
    k: usize,
    steps: usize,
    rng: &mut Stream,
) -> Result<VpPretrain> {
    let weights = dataset.normalized_weights();
    let selected = weighted_indices_without_replacement(&weights, k, rng)?;
    let (shift, scale) = dataset.normalization();
    let d = dataset.dim();
    let mut targets = Vec::with_capacity(k * d);
    for &i in &selected {
        for (j, &x) in dataset.row(i).iter().enumerate() {
            targets.push((x - shift[j]) / scale[j]);
        }
    }

    let mut vpnet = init_params(&[k, d], Activation::Identity, rng);
    let budget = steps.max(100);
    // Decaying-lr segments; a second budget with smaller steps if the first
    // misses the early-exit tolerance.
    let plan = [(0.05, 6 * budget / 10), (0.005, 3 * budget / 10), (5e-4, budget / 10)];
    let rescue = [(0.01, 6 * budget / 10), (1e-3, 3 * budget / 10), (1e-4, budget / 10)];
    let mut max_err = f64::INFINITY;
    'outer: for phase in [plan, rescue] {
        for (lr, len) in phase {
            let mut adam = Adam::new(lr);
            for step in 0..len {
                let mut tape = Tape::new();
                let bound = vpnet.bind(&mut tape, true)?;
                let eye = tape.constant(eye_tensor(k))?;
                let u = mlp_forward(&mut tape, &bound, eye)?;
                let tc = tape.constant(Tensor::matrix(k, d, targets.clone())?)?;
                let diff = tape.sub(u, tc)?;
                let sq = tape.square(diff)?;
                let row = tape.sum_axis(sq, 1)?;
                let loss = tape.mean_all(row)?;
                let grads = tape.backward(loss)?;
                let ids = bound.param_ids();
                apply_adam(&mut adam, &mut vpnet.named_params_mut("vp"), &ids, &grads)?;
                if step % 25 == 24 {
                    max_err = vp_max_err(&vpnet, &targets, k, d);
                    if max_err <= VP_EXIT_TOL {
                        break 'outer;
                    }
                }
            }
        }
        max_err = vp_max_err(&vpnet, &targets, k, d);
        if max_err <= VP_EXIT_TOL {
            break;
        }
    }
    if max_err > VP_FIT_TOL {
        return Err(Error::InvalidArgument {
            context: "pretrain_vpnet",
            message: format!("pseudo-input fit stalled at max error {max_err:.2e}"),
        });
    }
    Ok(VpPretrain { vpnet, selected, max_err })
}

fn vp_max_err(vpnet: &MlpParams, targets: &[f64], k: usize, d: usize) -> f64 {
    let mut e = vec![0.0; k];
    let mut worst = 0.0f64;
    for kk in 0..k {
        e[kk] = 1.0;
        let u = vpnet.eval(&e);
        e[kk] = 0.0;
        let err: f64 =
            u.iter().zip(&targets[kk * d..(kk + 1) * d]).map(|(&a, &b)| (a - b) * (a - b)).sum();
        worst = worst.max(err.sqrt());
    }
    worst
}

fn apply_adam(
    adam: &mut Adam,
    params: &mut [(String, &mut Tensor)],
    ids: &[NodeId],
    grads: &crate::autodiff::Gradients,
) -> Result<()> {
    let gs: Vec<&Tensor> = ids
        .iter()
        .map(|&id| grads.wrt(id).expect("trainable leaf has a gradient"))
        .collect();
    adam.step(params, &gs)
}

/// Deterministic-autoencoder pre-training: weighted mean reconstruction MSE
/// in normalized coordinates plus (4/d_z)Σ_j s_j² pushing encoder stds to 1.
/// Trains encoder and decoder in place; the decoder's log-std head is left
/// at initialization. Returns the last minibatch loss.
pub fn pretrain_autoencoder(
    dataset: &WeightedDataset,
    model: &mut VaeModel,
    steps: usize,
    lr: f64,
    batch_size: usize,
    rng: &mut Stream,
) -> Result<f64> {
    let d = model.dim();
    let d_z = model.d_z;
    let weights = dataset.normalized_weights();
    let n = dataset.n();
    let mut adam = Adam::new(lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut last = f64::NAN;
    for _ in 0..steps {
        let bsz = batch_size.min(n);
        let mut y = Vec::with_capacity(bsz * d);
        let mut w = Vec::with_capacity(bsz);
        for _ in 0..bsz {
            if cursor == n {
                order.shuffle(rng);
                cursor = 0;
            }
            let i = order[cursor];
            cursor += 1;
            y.extend(model.normalize(dataset.row(i)));
            w.push(weights[i]);
        }

        let mut tape = Tape::new();
        let enc = model.encoder.bind(&mut tape, true)?;
        let dec = model.decoder.bind(&mut tape, true)?;
        let mut ids = enc.param_ids();
        ids.extend(dec.param_ids());

        let yc = tape.constant(Tensor::matrix(bsz, d, y)?)?;
        let enc_raw = mlp_forward(&mut tape, &enc, yc)?;
        let enc_head = gaussian_head(&mut tape, enc_raw)?;
        let dec_raw = mlp_forward(&mut tape, &dec, enc_head.mean)?;
        let dec_head = gaussian_head(&mut tape, dec_raw)?;
        let diff = tape.sub(yc, dec_head.mean)?;
        let sq = tape.square(diff)?;
        let recon = tape.sum_axis(sq, 1)?;
        let s2 = tape.square(enc_head.log_std)?;
        let s2row = tape.sum_axis(s2, 1)?;
        let pen = tape.scale(s2row, 4.0 / d_z as f64)?;
        let per = tape.add(recon, pen)?;
        let wc = tape.constant(Tensor::vector(w))?;
        let weighted = tape.mul(wc, per)?;
        let loss = tape.mean_all(weighted)?;
        last = tape.value(loss).item();

        let grads = tape.backward(loss)?;
        let mut params = model.encoder.named_params_mut("enc");
        params.extend(model.decoder.named_params_mut("dec"));
        apply_adam(&mut adam, &mut params, &ids, &grads)?;
    }
    Ok(last)
}

// ── full training ───────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d_z: usize,
    pub k: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub pretrain_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { d_z: 4, k: 75, hidden: 128, epochs: 30, batch_size: 256, lr: 1e-3, pretrain_steps: 500 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub mean_kl: f64,
    pub mean_recon: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
    /// False when the final epoch loss failed to improve on the first.
    pub improved: bool,
    pub vp_max_err: f64,
    pub selected: Vec<usize>,
    pub ess: f64,
}

impl TrainTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,mean_kl,mean_recon\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.loss, e.mean_kl, e.mean_recon));
        }
        out
    }
}

/// Full pipeline: weight-sample K pseudo-input targets, pre-train the
/// pseudo-input net, pre-train the autoencoder, then maximize the weighted
/// ELBO. Aborts with a structured error when the weights are degenerate.
pub fn train_vae(
    dataset: &WeightedDataset,
    cfg: &TrainConfig,
    rng: &mut Stream,
) -> Result<(VaeModel, TrainTrace)> {
    let ess = dataset.ess();
    if ess < 2.0 {
        return Err(Error::DegenerateWeights { ess });
    }
    let (shift, scale) = dataset.normalization();
    let mut model =
        VaeModel::init(dataset.dim(), cfg.d_z, cfg.k, cfg.hidden, shift, scale, rng)?;

    let vp = pretrain_vpnet(dataset, cfg.k, cfg.pretrain_steps, rng)?;
    model.vpnet = vp.vpnet;
    pretrain_autoencoder(dataset, &mut model, cfg.pretrain_steps, cfg.lr, cfg.batch_size, rng)?;

    let mut trace = welbo_phase(&mut model, dataset, cfg, rng)?;
    trace.vp_max_err = vp.max_err;
    trace.selected = vp.selected;
    trace.ess = ess;
    Ok((model, trace))
}

/// The main weighted-ELBO phase alone, for warm starts on an existing
/// model. Keeps the model's normalization affine; only the weights are
/// taken from the new dataset.
pub fn welbo_phase(
    model: &mut VaeModel,
    dataset: &WeightedDataset,
    cfg: &TrainConfig,
    rng: &mut Stream,
) -> Result<TrainTrace> {
    if dataset.dim() != model.dim() {
        return Err(Error::InvalidArgument {
            context: "welbo_phase",
            message: format!("dataset dim {} vs model dim {}", dataset.dim(), model.dim()),
        });
    }
    let ess = dataset.ess();
    if ess < 2.0 {
        return Err(Error::DegenerateWeights { ess });
    }
    let weights = dataset.normalized_weights();
    let n = dataset.n();
    let d = dataset.dim();
    let mut adam = Adam::new(cfg.lr);
    let mut order: Vec<usize> = (0..n).collect();
    let mut trace = TrainTrace { improved: true, ess, ..Default::default() };
    for epoch in 0..cfg.epochs {
        order.shuffle(rng);
        let (mut lsum, mut klsum, mut rsum, mut wsum, mut bsum) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size.min(n).max(1)) {
            let mut pts = Vec::with_capacity(chunk.len() * d);
            let mut w = Vec::with_capacity(chunk.len());
            for &i in chunk {
                pts.extend_from_slice(dataset.row(i));
                w.push(weights[i]);
            }
            let mut step = welbo_minibatch(model, &pts, &w, rng)?;
            let grads = step.tape.backward(step.loss)?;
            let mut params = model.encoder.named_params_mut("enc");
            params.extend(model.decoder.named_params_mut("dec"));
            params.extend(model.vpnet.named_params_mut("vp"));
            apply_adam(&mut adam, &mut params, &step.param_ids, &grads)?;

            let bw: f64 = w.iter().sum();
            lsum += step.tape.value(step.loss).item() * chunk.len() as f64;
            klsum += step.mean_kl * bw;
            rsum += step.mean_recon * bw;
            wsum += bw;
            bsum += chunk.len() as f64;
        }
        trace.epochs.push(EpochStats {
            epoch,
            loss: lsum / bsum,
            mean_kl: klsum / wsum.max(1e-300),
            mean_recon: rsum / wsum.max(1e-300),
        });
    }
    if let (Some(first), Some(last)) = (trace.epochs.first(), trace.epochs.last()) {
        trace.improved = last.loss <= first.loss;
    }
    Ok(trace)
}
