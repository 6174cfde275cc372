//! Finite-mixture proposal with an exact probability density.
//!
//! M draws from the trained prior are decoded once; the resulting uniform
//! mixture of x-space Gaussians both generates samples and returns exact
//! log-densities, which keeps downstream importance-sampling estimators
//! unbiased. The naive per-sample density estimator is kept only to
//! demonstrate the bias it introduces.

use super::{vampprior_sample, VaeModel};
use crate::dists::{logsumexp, LN_2PI};
use crate::error::{Error, Result};
use crate::nets::{LOG_STD_HI, LOG_STD_LO};
use crate::rng::Stream;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Uniform mixture of M diagonal Gaussians in x-space, each the decoder
/// output at one latent anchor Z^(m). Log-pdf is exact, not estimated.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "ProposalSerde", into = "ProposalSerde")]
pub struct FiniteMixtureProposal {
    anchors: Vec<f64>,
    means: Vec<f64>,
    log_stds: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    d: usize,
    d_z: usize,
    inv_std: Vec<f64>,
    row_const: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProposalSerde {
    anchors: Vec<f64>,
    means: Vec<f64>,
    log_stds: Vec<f64>,
    shift: Vec<f64>,
    scale: Vec<f64>,
    d: usize,
    d_z: usize,
}

impl From<FiniteMixtureProposal> for ProposalSerde {
    fn from(p: FiniteMixtureProposal) -> Self {
        Self {
            anchors: p.anchors,
            means: p.means,
            log_stds: p.log_stds,
            shift: p.shift,
            scale: p.scale,
            d: p.d,
            d_z: p.d_z,
        }
    }
}

impl TryFrom<ProposalSerde> for FiniteMixtureProposal {
    type Error = Error;

    fn try_from(s: ProposalSerde) -> Result<Self> {
        FiniteMixtureProposal::from_parts(
            s.anchors, s.means, s.log_stds, s.shift, s.scale, s.d, s.d_z,
        )
    }
}

impl FiniteMixtureProposal {
    fn from_parts(
        anchors: Vec<f64>,
        means: Vec<f64>,
        log_stds: Vec<f64>,
        shift: Vec<f64>,
        scale: Vec<f64>,
        d: usize,
        d_z: usize,
    ) -> Result<Self> {
        let m = if d == 0 { 0 } else { means.len() / d };
        let ok = d > 0
            && m > 0
            && means.len() == m * d
            && log_stds.len() == m * d
            && anchors.len() == m * d_z
            && shift.len() == d
            && scale.len() == d
            && means.iter().chain(&log_stds).all(|v| v.is_finite());
        if !ok {
            return Err(Error::InvalidArgument {
                context: "FiniteMixtureProposal",
                message: "inconsistent component arrays".into(),
            });
        }
        let inv_std = log_stds.iter().map(|&s| (-s).exp()).collect();
        let row_const = (0..m).map(|i| log_stds[i * d..(i + 1) * d].iter().sum()).collect();
        Ok(Self { anchors, means, log_stds, shift, scale, d, d_z, inv_std, row_const })
    }

    pub fn m(&self) -> usize {
        self.row_const.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Latent anchors Z^(m), row-major m×d_z.
    pub fn anchors(&self) -> &[f64] {
        &self.anchors
    }

    /// Exact log g^M(x) = logsumexp_m log N(x; μ_m, σ_m²) − log M.
    pub fn logpdf(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.d, "logpdf: dimension mismatch");
        let m = self.m();
        let mut logs = Vec::with_capacity(m);
        for i in 0..m {
            let mu = &self.means[i * self.d..(i + 1) * self.d];
            let inv = &self.inv_std[i * self.d..(i + 1) * self.d];
            let mut q = 0.0;
            for j in 0..self.d {
                let t = (x[j] - mu[j]) * inv[j];
                q += t * t;
            }
            logs.push(-0.5 * (q + self.d as f64 * LN_2PI) - self.row_const[i]);
        }
        logsumexp(&logs) - (m as f64).ln()
    }

    /// n draws, row-major n×d: uniform component, then its Gaussian.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let m = self.m();
        let mut out = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let i = rng.random_range(0..m);
            let mu = &self.means[i * self.d..(i + 1) * self.d];
            let inv = &self.inv_std[i * self.d..(i + 1) * self.d];
            for j in 0..self.d {
                let e: f64 = rng.sample(StandardNormal);
                out.push(mu[j] + e / inv[j]);
            }
        }
        out
    }
}

/// Decode M fresh prior draws into the exact-pdf mixture proposal.
pub fn build_proposal(model: &VaeModel, m: usize, rng: &mut Stream) -> Result<FiniteMixtureProposal> {
    if m == 0 {
        return Err(Error::InvalidArgument {
            context: "build_proposal",
            message: "need at least one component".into(),
        });
    }
    let d = model.dim();
    let anchors = vampprior_sample(model, m, rng);
    let mut means = Vec::with_capacity(m * d);
    let mut log_stds = Vec::with_capacity(m * d);
    for i in 0..m {
        let raw = model.decoder.eval(&anchors[i * model.d_z..(i + 1) * model.d_z]);
        let (mu_y, s_y) = raw.split_at(d);
        for j in 0..d {
            means.push(model.shift[j] + model.scale[j] * mu_y[j]);
            log_stds.push(s_y[j].clamp(LOG_STD_LO, LOG_STD_HI) + model.scale[j].ln());
        }
    }
    FiniteMixtureProposal::from_parts(
        anchors,
        means,
        log_stds,
        model.shift.clone(),
        model.scale.clone(),
        d,
        model.d_z,
    )
}

/// Per-point log of the naive marginal estimate (1/N) Σ_k g(x_n | z_k) over
/// a paired joint sample. Biased when used as IS densities for the same
/// points the z_k generated, because each x_n sees its own component.
pub fn naive_marginal_estimate(model: &VaeModel, xs: &[f64], zs: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    let d_z = model.d_z;
    if xs.is_empty() || xs.len() % d != 0 || zs.len() % d_z != 0 {
        return Err(Error::InvalidArgument {
            context: "naive_marginal_estimate",
            message: "paired sample shapes inconsistent".into(),
        });
    }
    let n = xs.len() / d;
    let k = zs.len() / d_z;
    if k == 0 {
        return Err(Error::InvalidArgument {
            context: "naive_marginal_estimate",
            message: "need at least one latent point".into(),
        });
    }
    let comps: Vec<crate::dists::DiagGaussian> =
        (0..k).map(|i| super::decode(model, &zs[i * d_z..(i + 1) * d_z])).collect();
    let mut out = Vec::with_capacity(n);
    let mut logs = vec![0.0; k];
    for i in 0..n {
        let x = &xs[i * d..(i + 1) * d];
        for (l, c) in logs.iter_mut().zip(&comps) {
            *l = c.logpdf(x);
        }
        out.push(logsumexp(&logs) - (k as f64).ln());
    }
    Ok(out)
}
