//! Normal-copula target: arbitrary marginals tied by a Gaussian dependence
//! structure. Marginal CDFs map each coordinate to a latent normal score;
//! the joint density multiplies the marginals by the copula correction.

use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{Continuous, ContinuousCDF};

use super::{cholesky, solve_lower_inplace, std_normal_quantile, UnnormalizedTarget};
use crate::error::{Error, Result};
use crate::rng::Stream;

const INVERT_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Marginal {
    Student { nu: f64, loc: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
    Triangular { min: f64, mode: f64, max: f64 },
    Normal { mean: f64, std: f64 },
}

impl Marginal {
    /// −∞ outside the support.
    pub fn logpdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Student { nu, loc, scale } => {
                statrs::distribution::StudentsT::new(loc, scale, nu).unwrap().ln_pdf(x)
            }
            Marginal::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    statrs::distribution::LogNormal::new(mu, sigma).unwrap().ln_pdf(x)
                }
            }
            Marginal::Triangular { min, mode, max } => {
                if x < min || x > max {
                    f64::NEG_INFINITY
                } else {
                    statrs::distribution::Triangular::new(min, max, mode).unwrap().ln_pdf(x)
                }
            }
            Marginal::Normal { mean, std } => {
                statrs::distribution::Normal::new(mean, std).unwrap().ln_pdf(x)
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.logpdf(x).exp()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Marginal::Student { nu, loc, scale } => {
                statrs::distribution::StudentsT::new(loc, scale, nu).unwrap().cdf(x)
            }
            Marginal::LogNormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    statrs::distribution::LogNormal::new(mu, sigma).unwrap().cdf(x)
                }
            }
            Marginal::Triangular { min, mode, max } => {
                if x <= min {
                    0.0
                } else if x >= max {
                    1.0
                } else {
                    statrs::distribution::Triangular::new(min, max, mode).unwrap().cdf(x)
                }
            }
            Marginal::Normal { mean, std } => {
                statrs::distribution::Normal::new(mean, std).unwrap().cdf(x)
            }
        }
    }

    /// Quantile at u ∈ (0,1): closed form for Normal/LogNormal, bracketed
    /// bisection-plus-Newton on the CDF for Student/Triangular.
    pub fn inverse_cdf(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::InvalidArgument {
                context: "Marginal::inverse_cdf",
                message: format!("u must lie in (0,1); got {u}"),
            });
        }
        Ok(match *self {
            Marginal::Normal { mean, std } => mean + std * std_normal_quantile(u),
            Marginal::LogNormal { mu, sigma } => (mu + sigma * std_normal_quantile(u)).exp(),
            Marginal::Student { loc, scale, .. } => {
                // Expand the bracket outward until it straddles u.
                let mut step = scale;
                let mut lo = loc - step;
                while self.cdf(lo) > u && lo.is_finite() {
                    step *= 2.0;
                    lo = loc - step;
                }
                let mut step = scale;
                let mut hi = loc + step;
                while self.cdf(hi) < u && hi.is_finite() {
                    step *= 2.0;
                    hi = loc + step;
                }
                invert_monotone(|x| self.cdf(x), |x| self.pdf(x), lo, hi, u)
            }
            Marginal::Triangular { min, max, .. } => {
                invert_monotone(|x| self.cdf(x), |x| self.pdf(x), min, max, u)
            }
        })
    }
}

/// Solves cdf(x) = u on [lo, hi] by Newton steps guarded by bisection.
fn invert_monotone(
    cdf: impl Fn(f64) -> f64,
    pdf: impl Fn(f64) -> f64,
    mut lo: f64,
    mut hi: f64,
    u: f64,
) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - u;
        if f.abs() <= INVERT_TOL {
            return x;
        }
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let slope = pdf(x);
        let newton = x - f / slope;
        x = if slope > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= f64::EPSILON * (1.0 + x.abs()) {
            return x;
        }
    }
    x
}

/// Joint density with given marginals and a Normal copula with correlation R.
#[derive(Clone, Debug)]
pub struct CopulaTarget {
    marginals: Vec<Marginal>,
    r_chol: Vec<f64>,
    log_det_r: f64,
}

impl CopulaTarget {
    pub fn new(marginals: Vec<Marginal>, r: Vec<f64>) -> Result<Self> {
        let d = marginals.len();
        if r.len() != d * d {
            return Err(Error::InvalidArgument {
                context: "CopulaTarget::new",
                message: format!("correlation matrix must be {d}×{d}"),
            });
        }
        let r_chol = cholesky(d, &r).ok_or(Error::InvalidArgument {
            context: "CopulaTarget::new",
            message: "correlation matrix not positive definite".into(),
        })?;
        let log_det_r = 2.0 * (0..d).map(|i| r_chol[i * d + i].ln()).sum::<f64>();
        Ok(Self { marginals, r_chol, log_det_r })
    }

    /// The d=20 target: Student(4,−2,1), LogNormal(0,1), Triangular(1,3,5),
    /// then 17 copies of Normal(2,1); R tridiagonal with 0.25 off-diagonal.
    pub fn standard_d20() -> Self {
        let mut marginals = vec![
            Marginal::Student { nu: 4.0, loc: -2.0, scale: 1.0 },
            Marginal::LogNormal { mu: 0.0, sigma: 1.0 },
            Marginal::Triangular { min: 1.0, mode: 3.0, max: 5.0 },
        ];
        marginals.extend(std::iter::repeat(Marginal::Normal { mean: 2.0, std: 1.0 }).take(17));
        let d = 20;
        let mut r = vec![0.0; d * d];
        for i in 0..d {
            r[i * d + i] = 1.0;
            if i + 1 < d {
                r[i * d + i + 1] = 0.25;
                r[(i + 1) * d + i] = 0.25;
            }
        }
        Self::new(marginals, r).unwrap()
    }

    pub fn marginals(&self) -> &[Marginal] {
        &self.marginals
    }

    /// `n` draws: correlated normals → Φ → marginal quantiles.
    pub fn sample(&self, n: usize, rng: &mut Stream) -> Vec<f64> {
        let d = self.marginals.len();
        let mut out = vec![0.0; n * d];
        let mut xi = vec![0.0; d];
        for row in out.chunks_mut(d) {
            for v in xi.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            for i in 0..d {
                let mut z = 0.0;
                for j in 0..=i {
                    z += self.r_chol[i * d + j] * xi[j];
                }
                let u = super::std_normal_cdf(z).clamp(1e-300, 1.0 - 1e-15);
                row[i] = self.marginals[i].inverse_cdf(u).expect("u clamped into (0,1)");
            }
        }
        out
    }
}

impl UnnormalizedTarget for CopulaTarget {
    fn dim(&self) -> usize {
        self.marginals.len()
    }

    fn log_unnorm(&self, x: &[f64]) -> f64 {
        let d = self.marginals.len();
        let mut z = vec![0.0; d];
        let mut marg = 0.0;
        for i in 0..d {
            let lp = self.marginals[i].logpdf(x[i]);
            if lp == f64::NEG_INFINITY {
                return f64::NEG_INFINITY;
            }
            marg += lp;
            let u = self.marginals[i].cdf(x[i]);
            if u <= 0.0 || u >= 1.0 {
                return f64::NEG_INFINITY;
            }
            z[i] = std_normal_quantile(u);
        }
        // Copula correction: −½·log|R| − ½·(zᵀR⁻¹z − zᵀz).
        let zz: f64 = z.iter().map(|v| v * v).sum();
        solve_lower_inplace(d, &self.r_chol, &mut z);
        let quad: f64 = z.iter().map(|v| v * v).sum();
        marg - 0.5 * self.log_det_r - 0.5 * (quad - zz)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_relative_eq;

    const STUDENT: Marginal = Marginal::Student { nu: 4.0, loc: -2.0, scale: 1.0 };
    const LOGNORM: Marginal = Marginal::LogNormal { mu: 0.0, sigma: 1.0 };
    const TRIANG: Marginal = Marginal::Triangular { min: 1.0, mode: 3.0, max: 5.0 };
    const NORM21: Marginal = Marginal::Normal { mean: 2.0, std: 1.0 };

    #[test]
    fn triangular_cdf_at_mode_midpoint() {
        assert_relative_eq!(TRIANG.cdf(3.0), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn quantile_medians() {
        assert_relative_eq!(TRIANG.inverse_cdf(0.5).unwrap(), 3.0, epsilon = 1e-10);
        assert_relative_eq!(LOGNORM.inverse_cdf(0.5).unwrap(), 1.0, epsilon = 1e-10);
        assert_relative_eq!(NORM21.inverse_cdf(0.5).unwrap(), 2.0, epsilon = 1e-10);
        assert_relative_eq!(STUDENT.inverse_cdf(0.5).unwrap(), -2.0, epsilon = 1e-10);
    }

    #[test]
    fn student_round_trip_on_grid() {
        for k in 1..1000 {
            let u = k as f64 / 1000.0;
            let x = STUDENT.inverse_cdf(u).unwrap();
            assert!((STUDENT.cdf(x) - u).abs() <= 1e-10, "u={u}");
        }
    }

    #[test]
    fn triangular_round_trip_on_grid() {
        for k in 1..200 {
            let u = k as f64 / 200.0;
            let x = TRIANG.inverse_cdf(u).unwrap();
            assert!((TRIANG.cdf(x) - u).abs() <= 1e-10, "u={u}");
        }
    }

    #[test]
    fn quantiles_are_monotone_in_u() {
        for m in [STUDENT, LOGNORM, TRIANG, NORM21] {
            let mut prev = f64::NEG_INFINITY;
            for k in 1..100 {
                let x = m.inverse_cdf(k as f64 / 100.0).unwrap();
                assert!(x > prev);
                prev = x;
            }
        }
    }

    #[test]
    fn quantile_rejects_u_outside_unit_interval() {
        for u in [0.0, 1.0, -0.2, 1.4, f64::NAN] {
            assert!(STUDENT.inverse_cdf(u).is_err(), "u={u}");
        }
    }

    #[test]
    fn extreme_tail_quantiles_stay_finite() {
        let lo = STUDENT.inverse_cdf(1e-12).unwrap();
        let hi = STUDENT.inverse_cdf(1.0 - 1e-12).unwrap();
        assert!(lo.is_finite() && hi.is_finite() && lo < -100.0 && hi > 100.0);
    }

    #[test]
    fn identity_copula_is_product_of_marginals() {
        let marginals = vec![STUDENT, LOGNORM, TRIANG, NORM21];
        let mut r = vec![0.0; 16];
        for i in 0..4 {
            r[i * 4 + i] = 1.0;
        }
        let t = CopulaTarget::new(marginals.clone(), r).unwrap();
        for x in [[-1.5, 0.8, 2.0, 1.0], [0.0, 2.5, 4.5, 3.0]] {
            let product: f64 = marginals.iter().zip(&x).map(|(m, &xi)| m.logpdf(xi)).sum();
            assert_relative_eq!(t.log_unnorm(&x), product, max_relative = 1e-9);
        }
    }

    #[test]
    fn outside_support_is_neg_infinity() {
        let t = CopulaTarget::standard_d20();
        let mut x = vec![2.0; 20];
        x[0] = -2.0;
        x[1] = 1.0;
        x[2] = 3.0;
        assert!(t.log_unnorm(&x).is_finite());
        let mut bad = x.clone();
        bad[1] = -1.0; // log-normal support is x > 0
        assert_eq!(t.log_unnorm(&bad), f64::NEG_INFINITY);
        let mut bad = x.clone();
        bad[2] = 0.5; // triangular support is [1, 5]
        assert_eq!(t.log_unnorm(&bad), f64::NEG_INFINITY);
        let mut boundary = x;
        boundary[2] = 1.0;
        assert_eq!(t.log_unnorm(&boundary), f64::NEG_INFINITY);
    }

    #[test]
    fn copula_correction_vanishes_at_independent_scores() {
        // z = 0 ⇒ quadratic term zero; only −½log|R| remains.
        let t = CopulaTarget::standard_d20();
        let x: Vec<f64> = t
            .marginals()
            .iter()
            .map(|m| m.inverse_cdf(0.5).unwrap())
            .collect();
        let marg: f64 = t.marginals().iter().zip(&x).map(|(m, &xi)| m.logpdf(xi)).sum();
        let got = t.log_unnorm(&x);
        assert_relative_eq!(got - marg, -0.5 * t.log_det_r, epsilon = 1e-7);
    }

    fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            let mut r = vec![0.0; v.len()];
            for (pos, &i) in idx.iter().enumerate() {
                r[i] = pos as f64;
            }
            r
        };
        let (rx, ry) = (rank(xs), rank(ys));
        let n = xs.len() as f64;
        let mean = (n - 1.0) / 2.0;
        let (mut num, mut dx, mut dy) = (0.0, 0.0, 0.0);
        for (a, b) in rx.iter().zip(&ry) {
            num += (a - mean) * (b - mean);
            dx += (a - mean) * (a - mean);
            dy += (b - mean) * (b - mean);
        }
        num / (dx * dy).sqrt()
    }

    #[test]
    fn adjacent_rank_correlation_matches_copula_formula() {
        let t = CopulaTarget::standard_d20();
        let n = 100_000;
        let s = t.sample(n, &mut rng::master(13));
        let xs: Vec<f64> = s.chunks(20).map(|r| r[0]).collect();
        let ys: Vec<f64> = s.chunks(20).map(|r| r[1]).collect();
        let got = spearman(&xs, &ys);
        let expect = (6.0 / std::f64::consts::PI) * (0.25f64 / 2.0).asin();
        assert!((got - expect).abs() < 0.02, "spearman {got} vs {expect}");
    }

    #[test]
    fn non_adjacent_coordinates_nearly_uncorrelated() {
        let t = CopulaTarget::standard_d20();
        let n = 50_000;
        let s = t.sample(n, &mut rng::master(14));
        let xs: Vec<f64> = s.chunks(20).map(|r| r[4]).collect();
        let ys: Vec<f64> = s.chunks(20).map(|r| r[9]).collect();
        assert!(spearman(&xs, &ys).abs() < 0.02);
    }
}
