//! Distributions: diagonal and full-covariance Gaussians, weighted-EM
//! Gaussian mixtures, and the unnormalized sampling-experiment targets.
//!
//! Points are flat row-major slices (`n·d` values); every log-density is
//! computed in log space.

mod copula;
mod em;

pub use copula::{CopulaTarget, Marginal};
pub use em::{gm_fit_weighted_em, gm_fit_weighted_em_traced, EmFit};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;

pub(crate) const LN_2PI: f64 = 1.8378770664093453;

pub fn std_normal_cdf(x: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::standard().cdf(x)
}

pub fn std_normal_quantile(u: f64) -> f64 {
    use statrs::distribution::ContinuousCDF;
    statrs::distribution::Normal::standard().inverse_cdf(u)
}

/// Density known only up to a constant; `log_unnorm` returns a finite value
/// or −∞ outside the support.
pub trait UnnormalizedTarget: Sync {
    fn dim(&self) -> usize;
    fn log_unnorm(&self, x: &[f64]) -> f64;
}

// ── diagonal Gaussian ────────────────────────────────────────────────────

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument {
                context: "DiagGaussian::new",
                message: "std must be positive and match mean length".into(),
            });
        }
        Ok(Self { mean, std })
    }

    pub fn standard(d: usize) -> Self {
        Self { mean: vec![0.0; d], std: vec![1.0; d] }
    }

    /// N(0, c·I) where `c` is the variance multiplier.
    pub fn isotropic(d: usize, variance: f64) -> Self {
        Self { mean: vec![0.0; d], std: vec![variance.sqrt(); d] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut acc = 0.0;
        for ((&xi, &mi), &si) in x.iter().zip(&self.mean).zip(&self.std) {
            let z = (xi - mi) / si;
            acc += z * z + 2.0 * si.ln() + LN_2PI;
        }
        -0.5 * acc
    }

    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim());
        for ((o, &m), &s) in out.iter_mut().zip(&self.mean).zip(&self.std) {
            let eps: f64 = rng.sample(StandardNormal);
            *o = m + s * eps;
        }
    }

    /// `n` draws, flat row-major.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_mut(d) {
            self.sample_into(rng, row);
        }
        out
    }
}

/// Closed-form KL(q ‖ p) between diagonal Gaussians.
pub fn kl_diag_gaussians(q: &DiagGaussian, p: &DiagGaussian) -> f64 {
    debug_assert_eq!(q.dim(), p.dim());
    let mut acc = 0.0;
    for i in 0..q.dim() {
        let (mq, sq) = (q.mean[i], q.std[i]);
        let (mp, sp) = (p.mean[i], p.std[i]);
        acc += (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5;
    }
    acc
}

// ── full-covariance Gaussian ─────────────────────────────────────────────

/// Gaussian with full covariance, factored once at construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "FullGaussianSerde", into = "FullGaussianSerde")]
pub struct FullGaussian {
    mean: Vec<f64>,
    cov: Vec<f64>,  // d×d row-major
    chol: Vec<f64>, // lower-triangular L with cov = L·Lᵀ
    log_det: f64,
}

#[derive(Serialize, Deserialize, Clone)]
struct FullGaussianSerde {
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl TryFrom<FullGaussianSerde> for FullGaussian {
    type Error = Error;
    fn try_from(s: FullGaussianSerde) -> Result<Self> {
        FullGaussian::new(s.mean, s.cov)
    }
}

impl From<FullGaussian> for FullGaussianSerde {
    fn from(g: FullGaussian) -> Self {
        Self { mean: g.mean, cov: g.cov }
    }
}

impl FullGaussian {
    pub fn new(mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.len() != d * d {
            return Err(Error::InvalidArgument {
                context: "FullGaussian::new",
                message: format!("covariance must be {d}×{d}"),
            });
        }
        let chol = cholesky(d, &cov).ok_or(Error::InvalidArgument {
            context: "FullGaussian::new",
            message: "covariance not positive definite".into(),
        })?;
        let log_det = 2.0 * (0..d).map(|i| chol[i * d + i].ln()).sum::<f64>();
        Ok(Self { mean, cov, chol, log_det })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let mut diff: Vec<f64> = x.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        solve_lower_inplace(d, &self.chol, &mut diff);
        let maha: f64 = diff.iter().map(|v| v * v).sum();
        -0.5 * (d as f64 * LN_2PI + self.log_det + maha)
    }

    pub fn sample_into(&self, rng: &mut Stream, out: &mut [f64]) {
        let d = self.dim();
        let xi: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for i in 0..d {
            let mut acc = self.mean[i];
            for j in 0..=i {
                acc += self.chol[i * d + j] * xi[j];
            }
            out[i] = acc;
        }
    }

    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_mut(d) {
            self.sample_into(rng, row);
        }
        out
    }
}

/// Lower-triangular Cholesky of a d×d row-major matrix; `None` when the
/// matrix is not positive definite.
pub(crate) fn cholesky(d: usize, a: &[f64]) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

/// Solves L·y = b in place for lower-triangular L.
pub(crate) fn solve_lower_inplace(d: usize, l: &[f64], b: &mut [f64]) {
    for i in 0..d {
        let mut s = b[i];
        for j in 0..i {
            s -= l[i * d + j] * b[j];
        }
        b[i] = s / l[i * d + i];
    }
}

// ── Gaussian mixture ─────────────────────────────────────────────────────

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub components: Vec<FullGaussian>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<FullGaussian>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        let ok = weights.len() == components.len()
            && !components.is_empty()
            && weights.iter().all(|&w| w >= 0.0)
            && (total - 1.0).abs() <= 1e-12;
        if !ok {
            return Err(Error::InvalidArgument {
                context: "GaussianMixture::new",
                message: "weights must be a simplex matching the component count".into(),
            });
        }
        Ok(Self { weights, components })
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn logpdf(&self, x: &[f64]) -> f64 {
        let mut terms: Vec<f64> = Vec::with_capacity(self.components.len());
        for (w, c) in self.weights.iter().zip(&self.components) {
            terms.push(if *w > 0.0 { w.ln() + c.logpdf(x) } else { f64::NEG_INFINITY });
        }
        logsumexp(&terms)
    }

    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; n * d];
        for row in out.chunks_mut(d) {
            let j = categorical(&self.weights, rng);
            self.components[j].sample_into(rng, row);
        }
        out
    }
}

pub(crate) fn logsumexp(v: &[f64]) -> f64 {
    let mx = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if mx == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    mx + v.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}

/// Index draw proportional to non-negative weights.
pub(crate) fn categorical(weights: &[f64], rng: &mut Stream) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u: f64 = rng.random_range(0.0..total);
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

// ── sampling-experiment targets ─────────────────────────────────────────

/// Unnormalized two-mode target: sum of N(+center, I) and N(−center, I)
/// densities (normalizes to 2).
#[derive(Clone, Debug)]
pub struct BimodalGaussianTarget {
    pub center: Vec<f64>,
}

impl BimodalGaussianTarget {
    /// The d=10 target with modes at ±2.5·1.
    pub fn standard_d10() -> Self {
        Self { center: vec![2.5; 10] }
    }
}

impl UnnormalizedTarget for BimodalGaussianTarget {
    fn dim(&self) -> usize {
        self.center.len()
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        let d = self.center.len() as f64;
        let (mut qp, mut qm) = (0.0, 0.0);
        for (&xi, &ci) in x.iter().zip(&self.center) {
            qp += (xi - ci) * (xi - ci);
            qm += (xi + ci) * (xi + ci);
        }
        let base = -0.5 * d * LN_2PI;
        logsumexp(&[base - 0.5 * qp, base - 0.5 * qm])
    }
}

pub fn target_g1_log_unnorm(x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), 10);
    BimodalGaussianTarget::standard_d10().log_unnorm(x)
}

/// Any exactly known density used as a target (e.g. for custom runs).
#[derive(Clone, Debug)]
pub struct DiagGaussianTarget(pub DiagGaussian);

impl UnnormalizedTarget for DiagGaussianTarget {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        self.0.logpdf(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    #[test]
    fn diag_logpdf_standard_at_zero() {
        let g = DiagGaussian::standard(1);
        assert_relative_eq!(g.logpdf(&[0.0]), -0.5 * LN_2PI, max_relative = 1e-15);
    }

    #[test]
    fn diag_logpdf_shift_invariance() {
        let g = DiagGaussian::new(vec![1.7, -0.3], vec![0.6, 2.2]).unwrap();
        let g0 = DiagGaussian::new(vec![0.0, 0.0], vec![0.6, 2.2]).unwrap();
        let x = [0.4, 1.9];
        let shifted = [x[0] - 1.7, x[1] + 0.3];
        assert_eq!(g.logpdf(&x), g0.logpdf(&shifted));
    }

    #[test]
    fn diag_pdf_integrates_to_one() {
        // Simpson's rule on [-8σ, 8σ], d=1.
        let g = DiagGaussian::new(vec![0.7], vec![1.3]).unwrap();
        let (a, b, n) = (0.7 - 8.0 * 1.3, 0.7 + 8.0 * 1.3, 4000);
        let h = (b - a) / n as f64;
        let f = |x: f64| g.logpdf(&[x]).exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let mass = s * h / 3.0;
        assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
    }

    #[test]
    fn diag_rejects_nonpositive_std() {
        assert!(DiagGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(DiagGaussian::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn diag_sample_tiny_std_sticks_to_mean() {
        let g = DiagGaussian::new(vec![3.0, -4.0], vec![1e-12, 1e-12]).unwrap();
        let s = g.sample(10, &mut rng::master(0));
        for row in s.chunks(2) {
            assert!((row[0] - 3.0).abs() < 1e-10 && (row[1] + 4.0).abs() < 1e-10);
        }
    }

    #[test]
    fn diag_sample_clt_mean() {
        let g = DiagGaussian::new(vec![2.0], vec![3.0]).unwrap();
        let n = 100_000;
        let s = g.sample(n, &mut rng::master(1));
        let mean: f64 = s.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 4.0 * 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn diag_sample_seed_determinism() {
        let g = DiagGaussian::standard(3);
        assert_eq!(g.sample(7, &mut rng::master(9)), g.sample(7, &mut rng::master(9)));
    }

    #[test]
    fn kl_identities() {
        let q = DiagGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let p = DiagGaussian::standard(1);
        assert_eq!(kl_diag_gaussians(&q, &q), 0.0);
        assert_relative_eq!(kl_diag_gaussians(&q, &p), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn kl_matches_monte_carlo() {
        let q = DiagGaussian::new(vec![0.8, -0.4], vec![1.4, 0.5]).unwrap();
        let p = DiagGaussian::new(vec![0.0, 0.3], vec![1.0, 1.1]).unwrap();
        let n = 1_000_000;
        let mut stream = rng::master(3);
        let draws = q.sample(n, &mut stream);
        let vals: Vec<f64> =
            draws.chunks(2).map(|x| q.logpdf(x) - p.logpdf(x)).collect();
        let mean: f64 = vals.iter().sum::<f64>() / n as f64;
        let var: f64 =
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se = (var / n as f64).sqrt();
        let exact = kl_diag_gaussians(&q, &p);
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} vs exact {exact} (se {se})");
    }

    #[test]
    fn full_gaussian_matches_diag_when_diagonal() {
        let fg = FullGaussian::new(vec![1.0, -2.0], vec![4.0, 0.0, 0.0, 0.25]).unwrap();
        let dg = DiagGaussian::new(vec![1.0, -2.0], vec![2.0, 0.5]).unwrap();
        for x in [[0.0, 0.0], [1.5, -2.5], [-3.0, 4.0]] {
            assert_relative_eq!(fg.logpdf(&x), dg.logpdf(&x), max_relative = 1e-12);
        }
    }

    #[test]
    fn full_gaussian_rejects_non_pd() {
        assert!(FullGaussian::new(vec![0.0, 0.0], vec![1.0, 2.0, 2.0, 1.0]).is_err());
    }

    #[test]
    fn full_gaussian_sample_covariance() {
        let fg = FullGaussian::new(vec![0.0, 0.0], vec![2.0, 0.8, 0.8, 1.0]).unwrap();
        let n = 200_000;
        let s = fg.sample(n, &mut rng::master(4));
        let mut c = [0.0; 3];
        for row in s.chunks(2) {
            c[0] += row[0] * row[0];
            c[1] += row[0] * row[1];
            c[2] += row[1] * row[1];
        }
        for v in &mut c {
            *v /= n as f64;
        }
        assert!((c[0] - 2.0).abs() < 0.05 && (c[1] - 0.8).abs() < 0.03 && (c[2] - 1.0).abs() < 0.03);
    }

    #[test]
    fn full_gaussian_serde_round_trip_is_bit_exact() {
        let fg = FullGaussian::new(vec![0.3, -0.9], vec![1.5, 0.2, 0.2, 0.7]).unwrap();
        let json = serde_json::to_string(&fg).unwrap();
        let back: FullGaussian = serde_json::from_str(&json).unwrap();
        let x = [0.11, -2.3];
        assert!(fg.logpdf(&x).to_bits() == back.logpdf(&x).to_bits());
    }

    #[test]
    fn gm_single_component_reduces_to_gaussian() {
        let c = FullGaussian::new(vec![0.5], vec![2.0]).unwrap();
        let gm = GaussianMixture::new(vec![1.0], vec![c.clone()]).unwrap();
        assert_relative_eq!(gm.logpdf(&[1.2]), c.logpdf(&[1.2]), max_relative = 1e-15);
    }

    #[test]
    fn gm_symmetric_mixture_is_even() {
        let a = FullGaussian::new(vec![2.0], vec![1.0]).unwrap();
        let b = FullGaussian::new(vec![-2.0], vec![1.0]).unwrap();
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![a, b]).unwrap();
        for x in [0.1, 0.7, 3.3] {
            assert_relative_eq!(gm.logpdf(&[x]), gm.logpdf(&[-x]), max_relative = 1e-12);
        }
    }

    #[test]
    fn gm_logpdf_matches_linear_sum() {
        let a = FullGaussian::new(vec![1.0], vec![1.0]).unwrap();
        let b = FullGaussian::new(vec![-1.0], vec![4.0]).unwrap();
        let gm = GaussianMixture::new(vec![0.3, 0.7], vec![a.clone(), b.clone()]).unwrap();
        for x in [0.0, 0.9, -2.0] {
            let linear = 0.3 * a.logpdf(&[x]).exp() + 0.7 * b.logpdf(&[x]).exp();
            assert_relative_eq!(gm.logpdf(&[x]).exp(), linear, max_relative = 1e-12);
        }
    }

    #[test]
    fn gm_rejects_bad_simplex() {
        let c = FullGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![c.clone(), c]).is_err());
    }

    #[test]
    fn target_g1_symmetry_and_mode_value() {
        let x = [0.4, -1.0, 2.0, 0.0, 3.0, -0.5, 1.1, 0.2, -2.0, 0.8];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert_eq!(target_g1_log_unnorm(&x), target_g1_log_unnorm(&neg));

        let mode = [2.5; 10];
        let d = 10.0;
        // At a mode the two terms are exp(0) and exp(-½‖5·1‖²) = e^{-125}.
        let expect = -0.5 * d * LN_2PI + (1.0f64 + (-125.0f64).exp()).ln();
        assert_relative_eq!(target_g1_log_unnorm(&mode), expect, max_relative = 1e-12);
    }

    #[test]
    fn bimodal_normalizes_to_two_in_1d() {
        let t = BimodalGaussianTarget { center: vec![2.5] };
        let (a, b, n) = (-12.0, 12.0, 9600);
        let h = (b - a) / n as f64;
        let f = |x: f64| t.log_unnorm(&[x]).exp();
        let mut s = f(a) + f(b);
        for i in 1..n {
            s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let mass = s * h / 3.0;
        assert!((mass - 2.0).abs() < 1e-8, "mass {mass}");
    }

    #[test]
    fn sampler_pdf_smoke_identity() {
        // w = pdf/pdf ≡ 1 and the self-normalized mean is 1 for each family.
        let mut stream = rng::master(8);
        let dg = DiagGaussian::new(vec![0.2, 0.5], vec![1.0, 2.0]).unwrap();
        let fg = FullGaussian::new(vec![0.0, 0.0], vec![1.0, 0.3, 0.3, 2.0]).unwrap();
        let gm = GaussianMixture::new(vec![0.5, 0.5], vec![fg.clone(), fg.clone()]).unwrap();
        for x in dg.sample(50, &mut stream).chunks(2) {
            assert_eq!((dg.logpdf(x) - dg.logpdf(x)).exp(), 1.0);
        }
        for x in fg.sample(50, &mut stream).chunks(2) {
            assert_eq!((fg.logpdf(x) - fg.logpdf(x)).exp(), 1.0);
        }
        for x in gm.sample(50, &mut stream).chunks(2) {
            assert_eq!((gm.logpdf(x) - gm.logpdf(x)).exp(), 1.0);
        }
    }

    #[test]
    fn no_underflow_within_40_sigma() {
        let g = DiagGaussian::standard(5);
        let x = [40.0; 5];
        assert!(g.logpdf(&x).is_finite());
        let fg = FullGaussian::new(vec![0.0], vec![1.0]).unwrap();
        assert!(fg.logpdf(&[40.0]).is_finite());
    }
}
