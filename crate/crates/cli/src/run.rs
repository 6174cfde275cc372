//! Experiment execution: builds the selected experiment, runs replications on
//! a bounded worker pool, and writes the artifacts. Replication `r` always
//! draws from counter stream `r` of the master seed, so the worker count
//! changes scheduling but never results; all writes happen on the caller's
//! thread after the pool drains.

use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use vais_core::dists::{BimodalGaussianTarget, CopulaTarget, DiagGaussianTarget, Marginal};
use vais_core::metrics::marginal_wasserstein1;
use vais_core::rng::{self, Stream};
use vais_core::{
    ais_run, bimodal_success, ce_run, DiagGaussian, DuffingProblem, FourBranches,
    PerformanceProblem, Proposal, ProposalFamily, UnnormalizedTarget,
};

use crate::config::{Config, ExperimentId, FamilySpec};
use crate::results::{
    summarize, summary_csv, write_atomic, IterStat, LevelStat, RepOutcome, RepRecord, ResultsFile,
    HISTOGRAMS_FILE, MANIFEST_FILE, RESULTS_FILE, SAMPLES_FILE, SUMMARY_FILE,
};
use crate::CliError;

const HIST_BINS: usize = 60;
const HIST_HALF_WIDTH_STDS: f64 = 5.0;
const RESAMPLE_N: usize = 2_000;

enum Job {
    Ce(Box<dyn PerformanceProblem>),
    Ais { target: Box<dyn UnnormalizedTarget>, start: Proposal, extra: AisExtra },
}

enum AisExtra {
    None,
    /// Two-mode coverage of the resampled output.
    ModeCoverage { center: Vec<f64> },
    /// Worst marginal W1 against a fresh sample of the exact target.
    MarginalW1 { target: CopulaTarget },
}

fn build_job(cfg: &Config) -> Result<(Job, usize), CliError> {
    match cfg.experiment {
        ExperimentId::CeFourBranchesD100 => {
            let p = FourBranches::new(100).expect("even dimension");
            Ok((Job::Ce(Box::new(p)), 100))
        }
        ExperimentId::CeDuffingD200 => Ok((Job::Ce(Box::new(DuffingProblem::standard())), 200)),
        ExperimentId::AisBimodalD10 => {
            let target = BimodalGaussianTarget::standard_d10();
            let center = target.center.clone();
            Ok((
                Job::Ais {
                    target: Box::new(target),
                    start: Proposal::Diag(DiagGaussian::standard(10)),
                    extra: AisExtra::ModeCoverage { center },
                },
                10,
            ))
        }
        ExperimentId::AisCopulaD20 => {
            let target = CopulaTarget::standard_d20();
            Ok((
                Job::Ais {
                    target: Box::new(target.clone()),
                    start: Proposal::Diag(DiagGaussian::isotropic(20, 2.0)),
                    extra: AisExtra::MarginalW1 { target },
                },
                20,
            ))
        }
        ExperimentId::Custom => {
            let d = cfg.custom.mean.len();
            let g = DiagGaussian::new(cfg.custom.mean.clone(), cfg.custom.std.clone())
                .map_err(|e| CliError::Config(format!("custom: {e}")))?;
            Ok((
                Job::Ais {
                    target: Box::new(DiagGaussianTarget(g)),
                    start: Proposal::Diag(DiagGaussian::standard(d)),
                    extra: AisExtra::None,
                },
                d,
            ))
        }
    }
}

fn build_family(cfg: &Config) -> ProposalFamily {
    match cfg.family {
        FamilySpec::Vae => ProposalFamily::Vae { cfg: cfg.vae.train_config(), m: cfg.vae.m },
        FamilySpec::SingleGaussian => ProposalFamily::SingleGaussian,
        FamilySpec::Gm(j) => ProposalFamily::GaussianMixture { j },
    }
}

/// Final weighted sample of one replication, kept for the plot-data exports.
struct RepSample {
    rep: u64,
    points: Vec<f64>,
    weights: Vec<f64>,
}

fn run_replication(
    cfg: &Config,
    job: &Job,
    family: &ProposalFamily,
    d: usize,
    rep: u64,
) -> (RepRecord, Option<RepSample>) {
    let t0 = Instant::now();
    let mut rng = rng::replication(cfg.seed, rep);
    let run = execute(cfg, job, family, d, rep, &mut rng);
    let wall_secs = t0.elapsed().as_secs_f64();
    match run {
        Ok((outcome, sample)) => {
            (RepRecord { rep, wall_secs, error: None, outcome: Some(outcome) }, Some(sample))
        }
        Err(e) => {
            (RepRecord { rep, wall_secs, error: Some(e.to_string()), outcome: None }, None)
        }
    }
}

fn execute(
    cfg: &Config,
    job: &Job,
    family: &ProposalFamily,
    d: usize,
    rep: u64,
    rng: &mut Stream,
) -> vais_core::Result<(RepOutcome, RepSample)> {
    match job {
        Job::Ce(problem) => {
            let res = ce_run(problem.as_ref(), family, cfg.rho, cfg.n, cfg.iterations, rng)?;
            let f = DiagGaussian::standard(d);
            let weights: Vec<f64> = res
                .final_points
                .chunks(d)
                .zip(&res.final_log_g)
                .map(|(row, &lg)| (f.logpdf(row) - lg).exp())
                .collect();
            let levels = res
                .levels
                .iter()
                .map(|l| LevelStat {
                    level: l.level,
                    gamma: l.gamma,
                    ess: l.ess,
                    n_elite: l.n_elite,
                    p_hat_running: l.p_hat_running,
                    secs: l.elapsed_secs,
                })
                .collect();
            let outcome = RepOutcome::Ce {
                p_hat: res.p_hat,
                se: res.se,
                n_tot: res.n_tot,
                converged: res.converged,
                thresholds: res.thresholds,
                levels,
            };
            Ok((outcome, RepSample { rep, points: res.final_points, weights }))
        }
        Job::Ais { target, start, extra } => {
            let res = ais_run(target.as_ref(), family, start.clone(), cfg.iterations, cfg.n, rng)?;
            let iterations: Vec<IterStat> = res
                .trace
                .iter()
                .map(|t| IterStat { iteration: t.iteration, ess: t.ess, secs: t.elapsed_secs })
                .collect();
            let final_ess = iterations.last().map_or(0.0, |t| t.ess);
            let (mut mode_coverage, mut max_marginal_w1) = (None, None);
            match extra {
                AisExtra::None => {}
                AisExtra::ModeCoverage { center } => {
                    let rs = systematic_resample(&res.points, &res.weights, d, RESAMPLE_N, rng);
                    mode_coverage = Some(bimodal_success(&rs, center)?);
                }
                AisExtra::MarginalW1 { target } => {
                    let rs = systematic_resample(&res.points, &res.weights, d, RESAMPLE_N, rng);
                    let fresh = target.sample(RESAMPLE_N, rng);
                    let w1 = marginal_wasserstein1(&rs, &fresh, d)?;
                    max_marginal_w1 = w1.into_iter().max_by(f64::total_cmp);
                }
            }
            let outcome = RepOutcome::Ais {
                n_tot: cfg.iterations * cfg.n,
                final_ess,
                iterations,
                mode_coverage,
                max_marginal_w1,
            };
            Ok((outcome, RepSample { rep, points: res.points, weights: res.weights }))
        }
    }
}

/// Systematic resampling to `n_out` equally weighted rows; weight scale is
/// irrelevant.
fn systematic_resample(
    points: &[f64],
    weights: &[f64],
    d: usize,
    n_out: usize,
    rng: &mut Stream,
) -> Vec<f64> {
    use rand::Rng;
    let total: f64 = weights.iter().sum();
    let u0: f64 = rng.random();
    let mut out = Vec::with_capacity(n_out * d);
    let mut cum = weights[0];
    let mut i = 0;
    for j in 0..n_out {
        let u = (j as f64 + u0) / n_out as f64 * total;
        while cum < u && i + 1 < weights.len() {
            i += 1;
            cum += weights[i];
        }
        out.extend_from_slice(&points[i * d..(i + 1) * d]);
    }
    out
}

/// Runs every replication and writes the artifacts; returns the console
/// summary. All replications failing is reported as an error after the
/// results and manifest are on disk.
pub fn run(cfg: &Config) -> Result<String, CliError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Other(format!("cannot create {}: {e}", cfg.out.display())))?;
    let (job, d) = build_job(cfg)?;
    let family = build_family(cfg);
    let t0 = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CliError::Other(format!("cannot build worker pool: {e}")))?;
    let outcomes: Vec<(RepRecord, Option<RepSample>)> = pool.install(|| {
        (0..cfg.n_rep as u64)
            .into_par_iter()
            .map(|rep| run_replication(cfg, &job, &family, d, rep))
            .collect()
    });
    let total_secs = t0.elapsed().as_secs_f64();

    let mut replications = Vec::with_capacity(outcomes.len());
    let mut representative = None;
    for (record, sample) in outcomes {
        if representative.is_none() {
            representative = sample;
        }
        replications.push(record);
    }
    let rf = ResultsFile { config: cfg.clone(), replications };

    let io_err = |e: std::io::Error| CliError::Other(format!("cannot write artifacts: {e}"));
    let mut json = serde_json::to_string_pretty(&rf).expect("results are plain data");
    json.push('\n');
    write_atomic(&cfg.out.join(RESULTS_FILE), json.as_bytes()).map_err(io_err)?;
    write_atomic(&cfg.out.join(MANIFEST_FILE), manifest_text(&rf, total_secs).as_bytes())
        .map_err(io_err)?;
    let row = summarize(&rf);
    write_atomic(&cfg.out.join(SUMMARY_FILE), summary_csv(&row).as_bytes()).map_err(io_err)?;
    if let Some(sample) = &representative {
        write_atomic(&cfg.out.join(SAMPLES_FILE), samples_csv(d, sample).as_bytes())
            .map_err(io_err)?;
        let hist = histograms_csv(&marginal_specs(cfg, d), d, sample);
        write_atomic(&cfg.out.join(HISTOGRAMS_FILE), hist.as_bytes()).map_err(io_err)?;
    }
    if row.n_ok == 0 {
        return Err(CliError::AllReplicationsFailed);
    }
    Ok(crate::results::console_table(&row))
}

fn manifest_text(rf: &ResultsFile, total_secs: f64) -> String {
    let cfg = &rf.config;
    let mut s = String::new();
    let _ = writeln!(s, "tool: vais {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "experiment: {}", cfg.experiment);
    let _ = writeln!(s, "family: {}", cfg.family);
    let _ = writeln!(s, "seed: {}", cfg.seed);
    let _ = writeln!(s, "n_rep: {}", cfg.n_rep);
    let _ = writeln!(s, "threads: {}", cfg.threads);
    let _ = writeln!(s, "n: {}", cfg.n);
    let _ = writeln!(s, "iterations: {}", cfg.iterations);
    let _ = writeln!(s, "rho: {}", cfg.rho);
    let v = &cfg.vae;
    let _ = writeln!(
        s,
        "vae: d_z={} k={} m={} hidden={} epochs={} batch_size={} lr={} pretrain_steps={}",
        v.d_z, v.k, v.m, v.hidden, v.epochs, v.batch_size, v.lr, v.pretrain_steps
    );
    if cfg.experiment == ExperimentId::Custom {
        let _ = writeln!(s, "custom: mean={:?} std={:?}", cfg.custom.mean, cfg.custom.std);
    }
    for r in &rf.replications {
        match &r.error {
            None => {
                let _ = writeln!(s, "rep {}: ok ({:.3}s)", r.rep, r.wall_secs);
            }
            Some(e) => {
                let _ = writeln!(s, "rep {}: failed: {e} ({:.3}s)", r.rep, r.wall_secs);
            }
        }
    }
    let _ = writeln!(s, "total_secs: {total_secs:.3}");
    s
}

fn samples_csv(d: usize, sample: &RepSample) -> String {
    let mut s = String::from("rep");
    for i in 1..=d {
        let _ = write!(s, ",x{i}");
    }
    s.push_str(",weight\n");
    for (row, w) in sample.points.chunks(d).zip(&sample.weights) {
        let _ = write!(s, "{}", sample.rep);
        for x in row {
            let _ = write!(s, ",{x}");
        }
        let _ = writeln!(s, ",{w}");
    }
    s
}

// ── histogram export ──────────────────────────────────────────────────────

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

enum Pdf {
    Normal { mean: f64, std: f64 },
    /// Equal mixture of N(±c, 1) along one coordinate.
    TwoMode { c: f64 },
    Exact(Marginal),
}

impl Pdf {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            Pdf::Normal { mean, std } => std_normal_pdf((x - mean) / std) / std,
            Pdf::TwoMode { c } => 0.5 * (std_normal_pdf(x - c) + std_normal_pdf(x + c)),
            Pdf::Exact(m) => m.pdf(x),
        }
    }
}

/// Bin placement and the analytic overlay for one coordinate of the target.
struct MarginalSpec {
    mean: f64,
    std: f64,
    pdf: Pdf,
}

fn marginal_specs(cfg: &Config, d: usize) -> Vec<MarginalSpec> {
    match cfg.experiment {
        // The rare-event inputs are standard normal in every coordinate.
        ExperimentId::CeFourBranchesD100 | ExperimentId::CeDuffingD200 => (0..d)
            .map(|_| MarginalSpec { mean: 0.0, std: 1.0, pdf: Pdf::Normal { mean: 0.0, std: 1.0 } })
            .collect(),
        ExperimentId::AisBimodalD10 => {
            let target = BimodalGaussianTarget::standard_d10();
            target
                .center
                .iter()
                .map(|&c| MarginalSpec {
                    mean: 0.0,
                    std: (1.0 + c * c).sqrt(),
                    pdf: Pdf::TwoMode { c },
                })
                .collect()
        }
        ExperimentId::AisCopulaD20 => CopulaTarget::standard_d20()
            .marginals()
            .iter()
            .map(|&m| {
                let (mean, std) = marginal_mean_std(&m);
                MarginalSpec { mean, std, pdf: Pdf::Exact(m) }
            })
            .collect(),
        ExperimentId::Custom => cfg
            .custom
            .mean
            .iter()
            .zip(&cfg.custom.std)
            .map(|(&mean, &std)| MarginalSpec { mean, std, pdf: Pdf::Normal { mean, std } })
            .collect(),
    }
}

fn marginal_mean_std(m: &Marginal) -> (f64, f64) {
    match *m {
        Marginal::Student { nu, loc, scale } => {
            // Infinite-variance regimes only need a plot range; use a wide one.
            let std = if nu > 2.0 { scale * (nu / (nu - 2.0)).sqrt() } else { 3.0 * scale };
            (loc, std)
        }
        Marginal::LogNormal { mu, sigma } => {
            let mean = (mu + 0.5 * sigma * sigma).exp();
            (mean, mean * (sigma * sigma).exp_m1().sqrt())
        }
        Marginal::Triangular { min, mode, max } => {
            let mean = (min + mode + max) / 3.0;
            let var = (min * min + mode * mode + max * max - min * mode - min * max - mode * max)
                / 18.0;
            (mean, var.sqrt())
        }
        Marginal::Normal { mean, std } => (mean, std),
    }
}

/// Per-marginal weighted histogram of the final sample (60 bins spanning
/// ±5 target std) with the analytic target-marginal pdf for overlay.
fn histograms_csv(specs: &[MarginalSpec], d: usize, sample: &RepSample) -> String {
    let wsum: f64 = sample.weights.iter().sum();
    let mut s = String::from("marginal,bin_left,bin_right,bin_center,density,target_pdf\n");
    for (i, spec) in specs.iter().enumerate() {
        let lo = spec.mean - HIST_HALF_WIDTH_STDS * spec.std;
        let hi = spec.mean + HIST_HALF_WIDTH_STDS * spec.std;
        let width = (hi - lo) / HIST_BINS as f64;
        let mut mass = [0.0; HIST_BINS];
        for (row, &w) in sample.points.chunks(d).zip(&sample.weights) {
            let b = ((row[i] - lo) / width).floor();
            if (0.0..HIST_BINS as f64).contains(&b) {
                mass[b as usize] += w / wsum;
            }
        }
        for (b, &m) in mass.iter().enumerate() {
            let left = lo + b as f64 * width;
            let center = left + 0.5 * width;
            let _ = writeln!(
                s,
                "{},{left},{},{center},{},{}",
                i + 1,
                left + width,
                m / width,
                spec.pdf.eval(center)
            );
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_concentrates_on_heavy_weight() {
        let points = [0.0, 1.0, 2.0, 3.0];
        let weights = [0.0, 1.0, 0.0, 0.0];
        let mut rng = rng::master(5);
        let out = systematic_resample(&points, &weights, 1, 8, &mut rng);
        assert!(out.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn resample_is_proportional_for_uniform_weights() {
        let points: Vec<f64> = (0..4).map(|i| i as f64).collect();
        let weights = [1.0; 4];
        let mut rng = rng::master(6);
        let out = systematic_resample(&points, &weights, 1, 8, &mut rng);
        for v in 0..4 {
            assert_eq!(out.iter().filter(|&&x| x == v as f64).count(), 2);
        }
    }

    #[test]
    fn marginal_moments_match_simple_cases() {
        let (m, s) = marginal_mean_std(&Marginal::Normal { mean: 2.0, std: 1.5 });
        assert_eq!((m, s), (2.0, 1.5));
        let (m, s) = marginal_mean_std(&Marginal::Triangular { min: 1.0, mode: 3.0, max: 5.0 });
        assert!((m - 3.0).abs() < 1e-12 && (s - (2.0 / 3.0f64).sqrt()).abs() < 1e-12);
        let (m, _) = marginal_mean_std(&Marginal::LogNormal { mu: 0.0, sigma: 1.0 });
        assert!((m - 0.5f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn histogram_mass_sums_to_one_over_bins() {
        let spec = MarginalSpec { mean: 0.0, std: 1.0, pdf: Pdf::Normal { mean: 0.0, std: 1.0 } };
        let sample = RepSample {
            rep: 0,
            points: vec![-0.5, 0.0, 0.5, 1.0],
            weights: vec![1.0, 2.0, 3.0, 4.0],
        };
        let csv = histograms_csv(&[spec], 1, &sample);
        let width = 10.0 / HIST_BINS as f64;
        let total: f64 = csv
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(4).unwrap().parse::<f64>().unwrap() * width)
            .sum();
        assert!((total - 1.0).abs() < 1e-12, "mass {total}");
    }
}
