//! Weighted expectation-maximization for full-covariance Gaussian mixtures.

#[cfg(test)]
use rand::Rng;

use super::{categorical, cholesky, logsumexp, FullGaussian, GaussianMixture};
use crate::error::{Error, Result};
use crate::rng::Stream;

const MAX_SWEEPS: usize = 100;
const REL_GAIN_TOL: f64 = 1e-8;
const COV_REG: f64 = 1e-6;

/// Fit result plus the per-sweep weighted log-likelihood trace.
#[derive(Clone, Debug)]
pub struct EmFit {
    pub mixture: GaussianMixture,
    pub loglik_trace: Vec<f64>,
}

/// Fits a J-component mixture to weighted points by EM; `points` is flat
/// row-major with `points.len() / weights.len()` columns.
pub fn gm_fit_weighted_em(
    points: &[f64],
    weights: &[f64],
    j: usize,
    rng: &mut Stream,
) -> Result<GaussianMixture> {
    Ok(gm_fit_weighted_em_traced(points, weights, j, rng)?.mixture)
}

pub fn gm_fit_weighted_em_traced(
    points: &[f64],
    weights: &[f64],
    j: usize,
    rng: &mut Stream,
) -> Result<EmFit> {
    let n = weights.len();
    let invalid = |message: String| Error::InvalidArgument { context: "gm_fit_weighted_em", message };
    if n == 0 || points.len() % n != 0 {
        return Err(invalid("points length must be a multiple of weights length".into()));
    }
    let d = points.len() / n;
    if d == 0 || n <= j || j == 0 {
        return Err(invalid(format!("need n > J ≥ 1 and d ≥ 1; got n={n}, J={j}, d={d}")));
    }
    if weights.iter().any(|&w| !(w >= 0.0)) {
        return Err(invalid("weights must be non-negative and finite".into()));
    }
    let total_w: f64 = weights.iter().sum();
    if total_w <= 0.0 {
        return Err(invalid("weights must not all be zero".into()));
    }

    let point = |i: usize| &points[i * d..(i + 1) * d];
    let heaviest = weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();

    // Global weighted moments: shared initial covariance and reseed fallback.
    let mut gmean = vec![0.0; d];
    for i in 0..n {
        for (g, &x) in gmean.iter_mut().zip(point(i)) {
            *g += weights[i] * x;
        }
    }
    for g in &mut gmean {
        *g /= total_w;
    }
    let mut gcov = vec![0.0; d * d];
    for i in 0..n {
        let x = point(i);
        for r in 0..d {
            let dr = x[r] - gmean[r];
            for c in 0..=r {
                gcov[r * d + c] += weights[i] * dr * (x[c] - gmean[c]);
            }
        }
    }
    for r in 0..d {
        for c in 0..=r {
            gcov[r * d + c] /= total_w;
            gcov[c * d + r] = gcov[r * d + c];
        }
        gcov[r * d + r] += COV_REG;
    }

    // Weighted k-means++ seeding: weight × squared-distance-to-nearest-center.
    let mut centers: Vec<usize> = vec![categorical(weights, rng)];
    let mut d2 = vec![f64::INFINITY; n];
    while centers.len() < j {
        let last = point(*centers.last().unwrap());
        let mut scores = vec![0.0; n];
        for i in 0..n {
            let dist2: f64 =
                point(i).iter().zip(last).map(|(a, b)| (a - b) * (a - b)).sum();
            d2[i] = d2[i].min(dist2);
            scores[i] = weights[i] * d2[i];
        }
        let pick = if scores.iter().sum::<f64>() > 0.0 {
            categorical(&scores, rng)
        } else {
            categorical(weights, rng)
        };
        centers.push(pick);
    }

    let mut pis = vec![1.0 / j as f64; j];
    let mut means: Vec<Vec<f64>> = centers.iter().map(|&i| point(i).to_vec()).collect();
    let mut covs: Vec<Vec<f64>> = vec![gcov.clone(); j];

    let mut resp = vec![0.0; n * j]; // responsibilities, row per point
    let mut trace = Vec::new();
    let mut prev_ll = f64::NEG_INFINITY;

    for _sweep in 0..MAX_SWEEPS {
        let comps: Vec<FullGaussian> = means
            .iter()
            .zip(&covs)
            .map(|(m, c)| FullGaussian::new(m.clone(), c.clone()))
            .collect::<Result<_>>()?;

        // E-step in log space; weighted log-likelihood accumulates row LSEs.
        let mut ll = 0.0;
        let mut row = vec![0.0; j];
        for i in 0..n {
            let x = point(i);
            for (k, comp) in comps.iter().enumerate() {
                row[k] = if pis[k] > 0.0 { pis[k].ln() + comp.logpdf(x) } else { f64::NEG_INFINITY };
            }
            let lse = logsumexp(&row);
            ll += weights[i] * lse;
            for k in 0..j {
                resp[i * j + k] = (row[k] - lse).exp();
            }
        }
        // The +εI applied after the exact M-step can shave O(ε/λ)·mass off
        // the raw likelihood; allow that much while still catching descent.
        let slack = (1e-9 * ll.abs()).max(1e-4 * total_w);
        assert!(
            ll + slack >= prev_ll,
            "EM weighted log-likelihood decreased: {prev_ll} -> {ll}"
        );
        trace.push(ll);
        if prev_ll.is_finite() && (ll - prev_ll).abs() <= REL_GAIN_TOL * prev_ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;

        // M-step with empty-component reseeding at the heaviest point.
        let mut masses = vec![0.0; j];
        for k in 0..j {
            masses[k] = (0..n).map(|i| weights[i] * resp[i * j + k]).sum();
        }
        for k in 0..j {
            if masses[k] <= 1e-12 * total_w {
                means[k] = point(heaviest).to_vec();
                covs[k] = gcov.clone();
                masses[k] = total_w / n as f64;
                continue;
            }
            let mut mu = vec![0.0; d];
            for i in 0..n {
                let wk = weights[i] * resp[i * j + k];
                for (m, &x) in mu.iter_mut().zip(point(i)) {
                    *m += wk * x;
                }
            }
            for m in &mut mu {
                *m /= masses[k];
            }
            let mut cov = vec![0.0; d * d];
            for i in 0..n {
                let wk = weights[i] * resp[i * j + k];
                let x = point(i);
                for r in 0..d {
                    let dr = x[r] - mu[r];
                    for c in 0..=r {
                        cov[r * d + c] += wk * dr * (x[c] - mu[c]);
                    }
                }
            }
            for r in 0..d {
                for c in 0..=r {
                    cov[r * d + c] /= masses[k];
                    cov[c * d + r] = cov[r * d + c];
                }
                cov[r * d + r] += COV_REG;
            }
            // Escalate regularization until the factorization succeeds.
            let mut reg = COV_REG;
            while cholesky(d, &cov).is_none() {
                reg *= 10.0;
                for r in 0..d {
                    cov[r * d + r] += reg;
                }
            }
            means[k] = mu;
            covs[k] = cov;
        }
        let mass_sum: f64 = masses.iter().sum();
        for k in 0..j {
            pis[k] = masses[k] / mass_sum;
        }
    }

    let comps: Vec<FullGaussian> = means
        .into_iter()
        .zip(covs)
        .map(|(m, c)| FullGaussian::new(m, c))
        .collect::<Result<_>>()?;
    let total_pi: f64 = pis.iter().sum();
    for p in &mut pis {
        *p /= total_pi;
    }
    Ok(EmFit { mixture: GaussianMixture::new(pis, comps)?, loglik_trace: trace })
}

/// Draws `n` points from a 50/50 two-cluster Gaussian blend; test helper for
/// recovery checks.
#[cfg(test)]
fn two_cluster_sample(n: usize, center: f64, rng: &mut Stream) -> Vec<f64> {
    use rand_distr::StandardNormal;
    let mut out = vec![0.0; n * 2];
    for row in out.chunks_mut(2) {
        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
        for v in row.iter_mut() {
            let eps: f64 = rng.sample(StandardNormal);
            *v = sign * center + eps;
        }
    }
    out
}
