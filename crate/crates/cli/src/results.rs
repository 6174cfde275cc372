//! Persisted run artifacts: the JSON results model, the summary table
//! derived from it, and the `report` command that recomputes the table from
//! raw results. Formatting is fixed so identical results give identical bytes.

use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use vais_core::{cov_of, nu_mc, ModeCoverage};

use crate::config::Config;
use crate::CliError;

pub const RESULTS_FILE: &str = "results.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SAMPLES_FILE: &str = "samples.csv";
pub const HISTOGRAMS_FILE: &str = "histograms.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultsFile {
    pub config: Config,
    pub replications: Vec<RepRecord>,
}

/// One replication: either an outcome or a recorded error, never both.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub wall_secs: f64,
    pub error: Option<String>,
    pub outcome: Option<RepOutcome>,
}

impl RepRecord {
    pub fn is_ok(&self) -> bool {
        self.outcome.is_some()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RepOutcome {
    Ce {
        p_hat: f64,
        se: f64,
        n_tot: usize,
        converged: bool,
        thresholds: Vec<f64>,
        levels: Vec<LevelStat>,
    },
    Ais {
        n_tot: usize,
        final_ess: f64,
        iterations: Vec<IterStat>,
        /// Mode coverage of the resampled output (two-mode targets only).
        mode_coverage: Option<ModeCoverage>,
        /// Worst per-coordinate 1-Wasserstein distance to a fresh target
        /// sample (targets with an exact sampler only).
        max_marginal_w1: Option<f64>,
    },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LevelStat {
    pub level: usize,
    pub gamma: f64,
    pub ess: f64,
    pub n_elite: usize,
    pub p_hat_running: f64,
    pub secs: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterStat {
    pub iteration: usize,
    pub ess: f64,
    pub secs: f64,
}

/// Aggregate table row; `None` renders as NA (e.g. COV of a single run).
#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub experiment: String,
    pub family: String,
    pub n_rep: usize,
    pub n_ok: usize,
    pub n_tot_mean: Option<f64>,
    pub p_hat_mean: Option<f64>,
    pub cov: Option<f64>,
    pub nu_mc: Option<f64>,
    pub ess_mean: Option<f64>,
}

pub fn summarize(rf: &ResultsFile) -> SummaryRow {
    let ok: Vec<&RepOutcome> = rf.replications.iter().filter_map(|r| r.outcome.as_ref()).collect();
    let n_ok = ok.len();
    let mut row = SummaryRow {
        experiment: rf.config.experiment.to_string(),
        family: rf.config.family.to_string(),
        n_rep: rf.replications.len(),
        n_ok,
        n_tot_mean: None,
        p_hat_mean: None,
        cov: None,
        nu_mc: None,
        ess_mean: None,
    };
    if n_ok == 0 {
        return row;
    }
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let n_tots: Vec<f64> = ok
        .iter()
        .map(|o| match o {
            RepOutcome::Ce { n_tot, .. } | RepOutcome::Ais { n_tot, .. } => *n_tot as f64,
        })
        .collect();
    row.n_tot_mean = Some(mean(&n_tots));
    let p_hats: Vec<f64> = ok
        .iter()
        .filter_map(|o| match o {
            RepOutcome::Ce { p_hat, .. } => Some(*p_hat),
            RepOutcome::Ais { .. } => None,
        })
        .collect();
    if p_hats.len() == n_ok {
        let p_mean = mean(&p_hats);
        row.p_hat_mean = Some(p_mean);
        row.cov = cov_of(&p_hats).ok();
        row.nu_mc = row
            .cov
            .and_then(|cov| nu_mc(p_mean, cov, row.n_tot_mean.unwrap()).ok());
    }
    let esses: Vec<f64> = ok
        .iter()
        .filter_map(|o| match o {
            RepOutcome::Ais { final_ess, .. } => Some(*final_ess),
            RepOutcome::Ce { .. } => None,
        })
        .collect();
    if esses.len() == n_ok {
        row.ess_mean = Some(mean(&esses));
    }
    row
}

fn na(v: Option<f64>) -> String {
    // `{}` prints the shortest round-trip form, so equal values give equal bytes.
    v.map_or_else(|| "NA".to_string(), |x| format!("{x}"))
}

pub fn summary_csv(row: &SummaryRow) -> String {
    let mut s = String::from("experiment,family,n_rep,n_ok,n_tot_mean,p_hat_mean,cov,nu_mc,ess_mean\n");
    s.push_str(&format!(
        "{},{},{},{},{},{},{},{},{}\n",
        row.experiment,
        row.family,
        row.n_rep,
        row.n_ok,
        na(row.n_tot_mean),
        na(row.p_hat_mean),
        na(row.cov),
        na(row.nu_mc),
        na(row.ess_mean),
    ));
    s
}

pub fn console_table(row: &SummaryRow) -> String {
    let fmt_p = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.4e}"));
    let fmt_cov = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{:.2}%", 100.0 * x));
    let fmt_f = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"));
    let fmt_n = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.0}"));
    let mut s = String::new();
    s.push_str(&format!(
        "{:<22} {:<16} {:>5} {:>5} {:>10} {:>12} {:>8} {:>10} {:>10}\n",
        "experiment", "family", "n_rep", "n_ok", "N_tot", "p_mean", "COV", "nu_MC", "ESS_mean"
    ));
    s.push_str(&format!(
        "{:<22} {:<16} {:>5} {:>5} {:>10} {:>12} {:>8} {:>10} {:>10}\n",
        row.experiment,
        row.family,
        row.n_rep,
        row.n_ok,
        fmt_n(row.n_tot_mean),
        fmt_p(row.p_hat_mean),
        fmt_cov(row.cov),
        fmt_f(row.nu_mc),
        fmt_f(row.ess_mean),
    ));
    s
}

/// Writes via a temp file in the same directory so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}

pub fn read_results(dir: &Path) -> Result<ResultsFile, CliError> {
    let path = dir.join(RESULTS_FILE);
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Other(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Other(format!("{}: malformed results: {e}", path.display())))
}

/// Recomputes the summary from raw results, rewrites `summary.csv`, and
/// returns the console table.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let rf = read_results(dir)?;
    let row = summarize(&rf);
    write_atomic(&dir.join(SUMMARY_FILE), summary_csv(&row).as_bytes())
        .map_err(|e| CliError::Other(format!("cannot write summary: {e}")))?;
    Ok(console_table(&row))
}
