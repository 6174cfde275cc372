//! Adaptive importance sampling and multi-level cross entropy.
//!
//! Both drivers share the same plumbing: a [`Proposal`] is any fitted
//! distribution with an exact log-pdf and a sampler, and a
//! [`ProposalFamily`] turns a weighted sample into the next proposal.
//! Weights are self-normalized before every fit, so targets known only up
//! to a constant are handled transparently.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dists::{
    gm_fit_weighted_em, DiagGaussian, FullGaussian, GaussianMixture, UnnormalizedTarget,
};
use crate::error::{Error, Result};
use crate::problems::PerformanceProblem;
use crate::rng::Stream;
use crate::vae::{build_proposal, train_vae, FiniteMixtureProposal, TrainConfig, WeightedDataset};

// ── estimator plumbing ───────────────────────────────────────────────────

/// Effective sample size 1/Σŵ² of the normalized weights ŵ = w/Σw.
/// Computed as (Σw)²/Σw², which is identical for already-normalized input
/// and exact under global rescaling.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let invalid = |message: &str| Error::InvalidArgument {
        context: "ess",
        message: message.into(),
    };
    if weights.is_empty() {
        return Err(invalid("empty weight vector"));
    }
    if weights.iter().any(|&w| !(w >= 0.0) || w == f64::INFINITY) {
        return Err(invalid("weights must be finite and non-negative"));
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|&w| w * w).sum();
    if s2 == 0.0 {
        return Err(invalid("all weights are zero"));
    }
    Ok(s * s / s2)
}

/// Linear-interpolation empirical quantile (the order statistic at rank
/// (n−1)·q, interpolated between neighbors). Infinities are legal values
/// (blow-up scores rank as +inf); NaN is rejected.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let invalid = |message: String| Error::InvalidArgument {
        context: "quantile",
        message,
    };
    if values.is_empty() {
        return Err(invalid("empty input".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(invalid(format!("q must lie in [0, 1]; got {q}")));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(invalid("values must not contain NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || v[lo] == v[lo + 1] {
        return Ok(v[lo]);
    }
    let x = v[lo] + frac * (v[lo + 1] - v[lo]);
    // A -inf order statistic makes interpolation indeterminate (inf - inf);
    // the upper order statistic is the only value consistent with the rank.
    Ok(if x.is_nan() { v[lo + 1] } else { x })
}

/// Plain importance-sampling estimate of E_f[ψ] from a fixed proposal:
/// p̂ = (1/N) Σ ψ·exp(log f − log g), with the sample standard error of the
/// summands. The proposal log-pdfs must be exact, not estimated.
pub fn is_estimate(log_f: &[f64], log_g: &[f64], indicator: &[f64]) -> Result<(f64, f64)> {
    let n = log_f.len();
    if n == 0 || log_g.len() != n || indicator.len() != n {
        return Err(Error::InvalidArgument {
            context: "is_estimate",
            message: format!(
                "need equal nonempty lengths; got {n}, {}, {}",
                log_g.len(),
                indicator.len()
            ),
        });
    }
    let mut summands = Vec::with_capacity(n);
    for i in 0..n {
        let w = (log_f[i] - log_g[i]).exp();
        if !w.is_finite() {
            return Err(Error::NonFinite {
                op: "is_estimate",
                detail: Some(format!("importance weight at index {i}")),
            });
        }
        summands.push(indicator[i] * w);
    }
    let p = summands.iter().sum::<f64>() / n as f64;
    let se = if n > 1 {
        let var = summands.iter().map(|s| (s - p) * (s - p)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok((p, se))
}

/// Normalized weights (sum 1) from log-weights, shifted by the maximum so
/// the result is invariant under adding a constant to every log-weight.
/// −∞ entries map to exact zeros; all-zero weight vectors are an error.
fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let mx = log_w.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return Err(Error::InvalidArgument {
            context: "normalize_log_weights",
            message: "all importance weights are zero".into(),
        });
    }
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&lw| if lw == f64::NEG_INFINITY { 0.0 } else { (lw - mx).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

// ── proposals ────────────────────────────────────────────────────────────

/// A fitted proposal: exact log-pdf everywhere plus a sampler.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum Proposal {
    Diag(DiagGaussian),
    Full(FullGaussian),
    Mixture(GaussianMixture),
    Vae(FiniteMixtureProposal),
}

impl Proposal {
    pub fn dim(&self) -> usize {
        match self {
            Proposal::Diag(g) => g.dim(),
            Proposal::Full(g) => g.dim(),
            Proposal::Mixture(g) => g.dim(),
            Proposal::Vae(p) => p.dim(),
        }
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        match self {
            Proposal::Diag(g) => g.logpdf(x),
            Proposal::Full(g) => g.logpdf(x),
            Proposal::Mixture(g) => g.logpdf(x),
            Proposal::Vae(p) => p.logpdf(x),
        }
    }

    /// n points, flat row-major.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        match self {
            Proposal::Diag(g) => g.sample(n, rng),
            Proposal::Full(g) => g.sample(n, rng),
            Proposal::Mixture(g) => g.sample(n, rng),
            Proposal::Vae(p) => p.sample(n, rng),
        }
    }
}

const COV_RIDGE: f64 = 1e-6;

fn fit_single_gaussian(points: &[f64], weights: &[f64], d: usize) -> Result<FullGaussian> {
    let wsum: f64 = weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (row, &w) in points.chunks(d).zip(weights) {
        for (m, &x) in mean.iter_mut().zip(row) {
            *m += w * x;
        }
    }
    for m in &mut mean {
        *m /= wsum;
    }
    let mut cov = vec![0.0; d * d];
    let mut diff = vec![0.0; d];
    for (row, &w) in points.chunks(d).zip(weights) {
        for (v, (&x, &m)) in diff.iter_mut().zip(row.iter().zip(&mean)) {
            *v = x - m;
        }
        for i in 0..d {
            let wi = w * diff[i];
            for k in i..d {
                cov[i * d + k] += wi * diff[k];
            }
        }
    }
    for i in 0..d {
        for k in i..d {
            let v = cov[i * d + k] / wsum;
            cov[i * d + k] = v;
            cov[k * d + i] = v;
        }
        cov[i * d + i] += COV_RIDGE;
    }
    FullGaussian::new(mean, cov)
}

/// How the drivers turn a weighted sample into the next proposal.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum ProposalFamily {
    /// Weighted mean and full covariance (ridge-regularized).
    SingleGaussian,
    /// J-component full-covariance mixture fitted by weighted EM.
    GaussianMixture { j: usize },
    /// VAE trained from scratch on the weighted sample; the proposal is the
    /// finite mixture of `m` decoded prior draws, so its pdf is exact.
    Vae { cfg: TrainConfig, m: usize },
}

impl ProposalFamily {
    /// Fits `points` (flat row-major, `points.len()/weights.len()` columns)
    /// with non-negative weights. Weight scale is irrelevant: every fit
    /// self-normalizes.
    pub fn fit(&self, points: &[f64], weights: &[f64], rng: &mut Stream) -> Result<Proposal> {
        let invalid = |message: String| Error::InvalidArgument {
            context: "ProposalFamily::fit",
            message,
        };
        let n = weights.len();
        if n == 0 || points.len() % n != 0 || points.is_empty() {
            return Err(invalid("points length must be a nonzero multiple of weights length".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0) || w == f64::INFINITY) {
            return Err(invalid("weights must be finite and non-negative".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(invalid("all weights are zero".into()));
        }
        let d = points.len() / n;
        match self {
            ProposalFamily::SingleGaussian => {
                Ok(Proposal::Full(fit_single_gaussian(points, weights, d)?))
            }
            ProposalFamily::GaussianMixture { j } => {
                Ok(Proposal::Mixture(gm_fit_weighted_em(points, weights, *j, rng)?))
            }
            ProposalFamily::Vae { cfg, m } => {
                let log_w: Vec<f64> = weights.iter().map(|&w| w.ln()).collect();
                let dataset = WeightedDataset::new(points.to_vec(), d, log_w)?;
                let (model, _) = train_vae(&dataset, cfg, rng)?;
                Ok(Proposal::Vae(build_proposal(&model, *m, rng)?))
            }
        }
    }
}

// ── adaptive importance sampling ─────────────────────────────────────────

/// One AIS iteration: the proposal that was sampled from, and the ESS of
/// the normalized weights of its batch.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AisIterationTrace {
    pub iteration: usize,
    pub ess: f64,
    pub elapsed_secs: f64,
    pub proposal: Option<Proposal>,
}

/// Final weighted sample of an AIS run plus the per-iteration trace.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AisResult {
    pub d: usize,
    /// N×d, flat row-major: the sample drawn at the last iteration.
    pub points: Vec<f64>,
    /// Normalized importance weights (non-negative, sum 1).
    pub weights: Vec<f64>,
    pub trace: Vec<AisIterationTrace>,
}

/// Classical adaptive IS: per iteration draw N points from the current
/// proposal, weight them by target/proposal, and refit the family on the
/// weighted sample. Only the last iteration's weighted sample is returned.
/// The proposal fitted at the final iteration would never be sampled, so
/// the last refit is skipped.
pub fn ais_run(
    target: &dyn UnnormalizedTarget,
    family: &ProposalFamily,
    start: Proposal,
    iterations: usize,
    n_per_iter: usize,
    rng: &mut Stream,
) -> Result<AisResult> {
    let d = target.dim();
    let invalid = |message: String| Error::InvalidArgument {
        context: "ais_run",
        message,
    };
    if iterations == 0 {
        return Err(invalid("need at least one iteration".into()));
    }
    if n_per_iter < 2 {
        return Err(invalid("need at least two points per iteration".into()));
    }
    if start.dim() != d {
        return Err(invalid(format!("start proposal dim {} ≠ target dim {d}", start.dim())));
    }

    let mut current = start;
    let mut trace: Vec<AisIterationTrace> = Vec::with_capacity(iterations);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for iteration in 1..=iterations {
        let t0 = Instant::now();
        points = current.sample(n_per_iter, rng);
        let mut log_w = Vec::with_capacity(n_per_iter);
        for row in points.chunks(d) {
            let lw = target.log_unnorm(row) - current.logpdf(row);
            if lw.is_nan() || lw == f64::INFINITY {
                return Err(Error::NonFinite {
                    op: "ais_run",
                    detail: Some(format!("log-weight at iteration {iteration}")),
                });
            }
            log_w.push(lw);
        }
        let abort = |reason: String, trace: Vec<AisIterationTrace>| Error::AisAborted {
            iteration,
            reason,
            trace,
        };
        weights = match normalize_log_weights(&log_w) {
            Ok(w) => w,
            Err(_) => return Err(abort("all importance weights are zero".into(), trace)),
        };
        let e = ess(&weights)?;
        trace.push(AisIterationTrace {
            iteration,
            ess: e,
            elapsed_secs: t0.elapsed().as_secs_f64(),
            proposal: Some(current.clone()),
        });
        if e < 2.0 {
            return Err(abort(format!("effective sample size {e:.3} < 2"), trace));
        }
        if iteration < iterations {
            current = family.fit(&points, &weights, rng)?;
        }
    }
    Ok(AisResult { d, points, weights, trace })
}

// ── multi-level cross entropy ────────────────────────────────────────────

/// One CE level: the frozen proposal sampled from, the threshold drawn
/// from its batch, and the ESS/count of the elite fitting weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CeLevelTrace {
    pub level: usize,
    pub gamma: f64,
    /// ESS of the normalized f/g weights over the elite subset {S ≥ γ}.
    pub ess: f64,
    pub n_elite: usize,
    /// IS estimate of the target-level probability from this level's batch.
    pub p_hat_running: f64,
    pub elapsed_secs: f64,
    pub proposal: Option<Proposal>,
}

/// Result of a multi-level cross-entropy run.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CeResult {
    pub p_hat: f64,
    pub se: f64,
    /// γ_1 ≤ … ≤ γ_J with γ_J = t iff converged.
    pub thresholds: Vec<f64>,
    /// Total score evaluations: levels × N_it.
    pub n_tot: usize,
    pub converged: bool,
    pub levels: Vec<CeLevelTrace>,
    pub d: usize,
    /// The estimation level's batch (N_it×d, flat row-major) and the exact
    /// log-pdf of the frozen proposal at each of its rows, kept so the
    /// estimate can be audited against the serialized proposal snapshot.
    pub final_points: Vec<f64>,
    pub final_log_g: Vec<f64>,
}

/// Multi-level cross entropy for p_t = P(S(X) ≥ t) under X ~ N(0, I_d):
/// each level draws N_it points from the current proposal, sets
/// γ_j = min(t, (1−ρ)-quantile of the scores), and refits the family to
/// the weights 1{S ≥ γ_j}·f/proposal until γ reaches t; the level that
/// reaches t doubles as the estimation sample. Runs that exhaust
/// `max_levels` return flagged (`converged = false`) rather than erroring.
pub fn ce_run(
    problem: &dyn PerformanceProblem,
    family: &ProposalFamily,
    rho: f64,
    n_it: usize,
    max_levels: usize,
    rng: &mut Stream,
) -> Result<CeResult> {
    let invalid = |message: String| Error::InvalidArgument {
        context: "ce_run",
        message,
    };
    if !(0.0 < rho && rho < 1.0) {
        return Err(invalid(format!("rho must lie in (0, 1); got {rho}")));
    }
    if n_it < 2 {
        return Err(invalid("need at least two points per level".into()));
    }
    if max_levels == 0 {
        return Err(invalid("need at least one level".into()));
    }
    let d = problem.dim();
    let t = problem.threshold();
    let f = DiagGaussian::standard(d);
    let mut current = Proposal::Diag(f.clone());
    let mut thresholds = Vec::new();
    let mut levels = Vec::new();

    for level in 1..=max_levels {
        let t0 = Instant::now();
        let points = current.sample(n_it, rng);
        let mut scores = Vec::with_capacity(n_it);
        for row in points.chunks(d) {
            let s = problem.score(row);
            // +inf is a legal score (integrator blow-up counts as failure).
            if s.is_nan() {
                return Err(Error::NonFinite {
                    op: "ce_run",
                    detail: Some(format!("NaN score at level {level}")),
                });
            }
            scores.push(s);
        }
        let gamma = t.min(quantile(&scores, 1.0 - rho)?);
        assert!(
            thresholds.last().is_none_or(|&prev| gamma >= prev),
            "intermediate thresholds must be non-decreasing"
        );
        thresholds.push(gamma);

        let log_f: Vec<f64> = points.chunks(d).map(|row| f.logpdf(row)).collect();
        let log_g: Vec<f64> = points.chunks(d).map(|row| current.logpdf(row)).collect();
        let indicator_t: Vec<f64> =
            scores.iter().map(|&s| if s >= t { 1.0 } else { 0.0 }).collect();
        let (p_run, se_run) = is_estimate(&log_f, &log_g, &indicator_t)?;

        let elite: Vec<usize> = (0..n_it).filter(|&i| scores[i] >= gamma).collect();
        let elite_log_w: Vec<f64> = elite.iter().map(|&i| log_f[i] - log_g[i]).collect();
        let elite_ess = match normalize_log_weights(&elite_log_w) {
            Ok(w) => ess(&w)?,
            Err(_) => 0.0,
        };

        let converged = gamma == t;
        let last = level == max_levels || elite.is_empty();
        levels.push(CeLevelTrace {
            level,
            gamma,
            ess: elite_ess,
            n_elite: elite.len(),
            p_hat_running: p_run,
            elapsed_secs: t0.elapsed().as_secs_f64(),
            proposal: Some(current.clone()),
        });
        if converged || last {
            return Ok(CeResult {
                p_hat: p_run,
                se: se_run,
                thresholds,
                n_tot: level * n_it,
                converged,
                levels,
                d,
                final_points: points,
                final_log_g: log_g,
            });
        }

        let mut elite_points = Vec::with_capacity(elite.len() * d);
        for &i in &elite {
            elite_points.extend_from_slice(&points[i * d..(i + 1) * d]);
        }
        let elite_w = normalize_log_weights(&elite_log_w)?;
        current = family.fit(&elite_points, &elite_w, rng)?;
        levels.last_mut().expect("level just pushed").elapsed_secs =
            t0.elapsed().as_secs_f64();
    }
    unreachable!("loop returns at the last level")
}
