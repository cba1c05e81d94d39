//! Budgeted comparison of auditors over repeated seeded runs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::auditor::{oracle_audit, OracleAuditConfig};
use crate::baselines::{iid_audit, phased_cal_audit, CalMode, IidOptions, DEFAULT_MAX_ATTEMPTS};
use crate::classfile::load_class;
use crate::domain::HypothesisClass;
use crate::error::{AuditError, Result};
use crate::harness::evaluate::{avg_error, mp_diameter};
use crate::harness::generate::{gen_gaussian_dataset, gen_random_class, gen_shattered, gen_threshold_class};
use crate::harness::ingest::ingest_csv;
use crate::minimax::{minimax_audit, CostTable};
use crate::oracle::AuditResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassSource {
    File(PathBuf),
    Shattered { n: usize },
    Random { m: usize, k: usize, seed: u64 },
    /// Hyperplanes over a synthetic two-group Gaussian dataset.
    Threshold { rows: usize, dim: usize, k: usize, seed: u64 },
    /// Hyperplanes over the rows of a CSV file.
    ThresholdCsv { path: PathBuf, group_column: String, feature_columns: Vec<String>, k: usize, seed: u64 },
}

impl ClassSource {
    /// Relative paths resolve against `base`.
    pub fn load(&self, base: &Path) -> Result<HypothesisClass> {
        match self {
            Self::File(p) => load_class(base.join(p)),
            Self::Shattered { n } => Ok(gen_shattered(*n)?.0),
            Self::Random { m, k, seed } => gen_random_class(*m, *k, *seed),
            Self::Threshold { rows, dim, k, seed } => gen_threshold_class(&gen_gaussian_dataset(*rows, *dim, *seed)?, *k, *seed),
            Self::ThresholdCsv { path, group_column, feature_columns, k, seed } => {
                gen_threshold_class(&ingest_csv(base.join(path), group_column, feature_columns)?, *k, *seed)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Iid,
    Cal,
    CalChecked,
    Oracle,
    Minimax,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Iid => "iid",
            Self::Cal => "cal",
            Self::CalChecked => "cal-checked",
            Self::Oracle => "oracle",
            Self::Minimax => "minimax",
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub class: ClassSource,
    pub methods: Vec<Method>,
    pub budgets: Vec<usize>,
    pub repeats: usize,
    pub eps: f64,
    pub delta: f64,
    pub seed: u64,
    /// Fixed target index; drawn uniformly per repeat when absent.
    #[serde(default)]
    pub target: Option<usize>,
    pub output: PathBuf,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(AuditError::InvalidInput("no methods".into()));
        }
        if self.budgets.is_empty() || self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(AuditError::InvalidInput("budgets must be nonempty and strictly increasing".into()));
        }
        if self.repeats == 0 {
            return Err(AuditError::InvalidInput("repeats must be at least 1".into()));
        }
        if !(self.eps > 0.0 && self.eps < 1.0) || !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(AuditError::InvalidInput("eps and delta must lie in (0,1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunRow {
    pub method: Method,
    pub budget: usize,
    pub repeat: usize,
    pub seed: u64,
    pub target: usize,
    pub queries: usize,
    pub estimate: Option<f64>,
    pub true_mu: f64,
    pub diameter: Option<f64>,
    pub avg_error: Option<f64>,
    pub error: Option<String>,
}

impl RunRow {
    pub fn abs_error(&self) -> Option<f64> {
        self.estimate.map(|e| (e - self.true_mu).abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub budget: usize,
    pub runs: usize,
    pub median_diameter: f64,
    pub mean_diameter: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_abs_error: f64,
    pub mean_avg_error: f64,
    pub mean_queries: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentResults {
    pub rows: Vec<RunRow>,
    pub summary: Vec<SummaryRow>,
}

/// Seeds and targets of the repeats, drawn from one stream.
fn repeat_plan(cfg: &ExperimentConfig, class_size: usize) -> Vec<(u64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.repeats)
        .map(|_| {
            let seed = rng.random::<u64>();
            let target = cfg.target.unwrap_or_else(|| rng.random_range(0..class_size));
            (seed, target)
        })
        .collect()
}

fn run_cell(
    method: Method,
    budget: usize,
    repeat: usize,
    (seed, target): (u64, usize),
    class: &HypothesisClass,
    cfg: &ExperimentConfig,
    table: Option<&mut CostTable>,
) -> RunRow {
    let h = class.hypothesis(target).clone();
    let outcome: Result<AuditResult> = match method {
        Method::Iid => iid_audit(h, class.domain(), cfg.eps, cfg.delta, seed, IidOptions { samples_per_group: None, budget: Some(budget) }),
        Method::Cal => phased_cal_audit(h, class, cfg.eps, seed, CalMode::Sampled, Some(budget)).map(|r| r.result),
        Method::CalChecked => {
            phased_cal_audit(h, class, cfg.eps, seed, CalMode::Checked { max_attempts: DEFAULT_MAX_ATTEMPTS }, Some(budget))
                .map(|r| r.result)
        }
        Method::Oracle => {
            let oc = OracleAuditConfig { eps: cfg.eps, delta: cfg.delta, seed, budget: Some(budget) };
            oracle_audit(h, class, &oc).map(|r| r.result)
        }
        Method::Minimax => minimax_audit(h, class, cfg.eps, Some(budget), table.expect("minimax runs get the table")),
    };
    let true_mu = class.mu_of(target);
    let mut row = RunRow { method, budget, repeat, seed, target, queries: 0, estimate: None, true_mu, diameter: None, avg_error: None, error: None };
    match outcome {
        Ok(r) => {
            row.queries = r.queries;
            row.estimate = r.estimate;
            match (mp_diameter(class, &r.transcript), avg_error(class, &r.transcript, true_mu)) {
                (Ok(d), Ok(a)) => {
                    row.diameter = Some(d);
                    row.avg_error = Some(a);
                }
                (Err(e), _) | (_, Err(e)) => row.error = Some(e.to_string()),
            }
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Normal-approximation 95% interval for the mean.
fn ci95(v: &[f64]) -> (f64, f64) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, m);
    }
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    let half = 1.96 * (var / v.len() as f64).sqrt();
    (m - half, m + half)
}

pub fn summarize(rows: &[RunRow], methods: &[Method], budgets: &[usize]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &method in methods {
        for &budget in budgets {
            let cell: Vec<&RunRow> = rows.iter().filter(|r| r.method == method && r.budget == budget).collect();
            let mut diam: Vec<f64> = cell.iter().filter_map(|r| r.diameter).collect();
            let abs: Vec<f64> = cell.iter().filter_map(|r| r.abs_error()).collect();
            let avg: Vec<f64> = cell.iter().filter_map(|r| r.avg_error).collect();
            let queries: Vec<f64> = cell.iter().map(|r| r.queries as f64).collect();
            let (ci_low, ci_high) = ci95(&diam);
            let mean_diameter = mean(&diam);
            out.push(SummaryRow {
                method,
                budget,
                runs: cell.len(),
                median_diameter: median(&mut diam),
                mean_diameter,
                ci_low,
                ci_high,
                mean_abs_error: mean(&abs),
                mean_avg_error: mean(&avg),
                mean_queries: mean(&queries),
            });
        }
    }
    out
}

/// Runs every `(method, budget, repeat)` cell. A repeat uses the same seed
/// and target for every method and budget, so budgeted transcripts of one
/// method are prefixes of each other. Rows come out sorted by method order,
/// budget, then repeat, independent of scheduling.
pub fn run_experiment_on(class: &HypothesisClass, cfg: &ExperimentConfig) -> Result<ExperimentResults> {
    cfg.validate()?;
    if let Some(t) = cfg.target {
        if t >= class.len() {
            return Err(AuditError::InvalidInput(format!("target {t} out of range for {} hypotheses", class.len())));
        }
    }
    let plan = repeat_plan(cfg, class.len());
    let mut cells = Vec::new();
    for &method in &cfg.methods {
        for &budget in &cfg.budgets {
            for repeat in 0..plan.len() {
                cells.push((method, budget, repeat));
            }
        }
    }
    let (mm, rest): (Vec<_>, Vec<_>) = cells.into_iter().partition(|c| c.0 == Method::Minimax);
    let mut rows: Vec<RunRow> =
        rest.par_iter().map(|&(m, b, k)| run_cell(m, b, k, plan[k], class, cfg, None)).collect();
    // the minimax memo is shared, so those cells run in order
    let mut table = CostTable::new(cfg.eps);
    rows.extend(mm.iter().map(|&(m, b, k)| run_cell(m, b, k, plan[k], class, cfg, Some(&mut table))));
    let method_pos = |m: Method| cfg.methods.iter().position(|&x| x == m).unwrap_or(usize::MAX);
    rows.sort_by_key(|r| (method_pos(r.method), r.budget, r.repeat));
    let summary = summarize(&rows, &cfg.methods, &cfg.budgets);
    Ok(ExperimentResults { rows, summary })
}

/// Loads the class and runs the experiment; relative paths in the config
/// resolve against `base`.
pub fn run_experiment(cfg: &ExperimentConfig, base: &Path) -> Result<ExperimentResults> {
    let class = cfg.class.load(base)?;
    run_experiment_on(&class, cfg)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub const RESULTS_HEADER: &str = "method,budget,seed,queries,estimate,true_mu,abs_error,diameter,avg_error,error";
pub const SUMMARY_HEADER: &str =
    "method,budget,runs,median_diameter,mean_diameter,ci_low,ci_high,mean_abs_error,mean_avg_error,mean_queries";

impl ExperimentResults {
    pub fn results_csv(&self) -> String {
        let mut s = String::from(RESULTS_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.budget,
                r.seed,
                r.queries,
                opt(r.estimate),
                r.true_mu,
                opt(r.abs_error()),
                opt(r.diameter),
                opt(r.avg_error),
                csv_field(r.error.as_deref().unwrap_or("")),
            );
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from(SUMMARY_HEADER);
        s.push('\n');
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method.name(),
                r.budget,
                r.runs,
                r.median_diameter,
                r.mean_diameter,
                r.ci_low,
                r.ci_high,
                r.mean_abs_error,
                r.mean_avg_error,
                r.mean_queries
            );
        }
        s
    }

    /// Writes the per-run table to `path` and the summary next to it.
    pub fn write(&self, path: &Path) -> Result<PathBuf> {
        std::fs::write(path, self.results_csv())?;
        let summary = summary_path(path);
        std::fs::write(&summary, self.summary_csv())?;
        Ok(summary)
    }
}

/// `results.csv` -> `results.summary.csv`.
pub fn summary_path(path: &Path) -> PathBuf {
    path.with_extension("summary.csv")
}
