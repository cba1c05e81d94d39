use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use fairaudit::auditor::{online_specifying_set, oracle_audit, threshold_rate, OracleAuditConfig, SetCoverState};
use fairaudit::baselines::{iid_audit, phased_cal_audit, CalMode, IidOptions, DEFAULT_MAX_ATTEMPTS};
use fairaudit::classfile::{class_hash, load_class};
use fairaudit::gaussian::{
    estimate_positive, gaussian_audit, random_model, standard_gamma, GaussianPopulations, LinearModel, Orientation,
    SignOracle,
};
use fairaudit::harness::evaluate::mp_diameter;
use fairaudit::harness::experiment::{run_experiment, ExperimentConfig};
use fairaudit::harness::remote::{serve_blocking, RemoteOracle, ServedModel};
use fairaudit::minimax::{best_query, cost, min_specifying_set, minimax_audit, xtd, CostTable, SpecMode};
use fairaudit::{AuditResult, Hypothesis, HypothesisClass, LabelOracle};

const DEFAULT_SEED: u64 = 0x00C0_FFEE;

#[derive(Parser)]
#[command(name = "fairaudit", version, about = "Query-efficient black-box auditing of demographic parity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Audit a model drawn from a finite hypothesis class.
    Audit(AuditArgs),
    /// Minimax query cost of a class.
    Cost(CostArgs),
    /// Specifying set for one labeling.
    Specset(SpecsetArgs),
    /// Audit a linear classifier under Gaussian populations.
    Gaussian(GaussianArgs),
    /// Run a budgeted comparison described by a JSON config.
    Experiment(ExperimentArgs),
    /// Serve a model over HTTP as a label oracle.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum AuditMethod {
    Iid,
    Cal,
    CalChecked,
    Minimax,
    Oracle,
}

#[derive(clap::Args)]
struct AuditArgs {
    #[arg(long, value_enum)]
    method: AuditMethod,
    #[arg(long)]
    class: PathBuf,
    /// Index of the audited hypothesis in the class.
    #[arg(long, conflicts_with = "remote")]
    target: Option<usize>,
    /// Base URL of a model server to audit instead of a local target.
    #[arg(long)]
    remote: Option<String>,
    #[arg(long)]
    eps: f64,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    budget: Option<usize>,
    /// Integer seed, or `random`.
    #[arg(long)]
    seed: Option<String>,
    /// Print one JSON line per oracle-auditor round.
    #[arg(long)]
    trace: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct CostArgs {
    #[arg(long)]
    class: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Also compute the extended teaching dimension.
    #[arg(long)]
    xtd: bool,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SpecModeArg {
    Exact,
    Greedy,
    Online,
}

#[derive(clap::Args)]
struct SpecsetArgs {
    #[arg(long)]
    class: PathBuf,
    #[arg(long)]
    eps: f64,
    /// Hypothesis index, or a file holding a JSON array of +1/-1 labels.
    #[arg(long = "h")]
    h: String,
    #[arg(long, value_enum)]
    mode: SpecModeArg,
    #[arg(long, default_value_t = 0.1)]
    delta: f64,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct GaussianArgs {
    #[arg(long)]
    dim: usize,
    #[arg(long)]
    eps: f64,
    /// Comma-separated weights followed by the bias: `a1,...,ad,b`.
    #[arg(long, allow_hyphen_values = true, conflicts_with_all = ["random", "remote"])]
    model: Option<String>,
    /// Number of random models to audit.
    #[arg(long, conflicts_with = "remote")]
    random: Option<usize>,
    /// Base URL of a linear model server.
    #[arg(long)]
    remote: Option<String>,
    /// JSON file with group means and covariances (`m0`, `m1`, `s0`, `s1`).
    #[arg(long)]
    populations: Option<PathBuf>,
    /// Report group 0 minus group 1.
    #[arg(long)]
    zero_minus_one: bool,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the output path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<String>,
}

#[derive(clap::Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "model")]
    class: Option<PathBuf>,
    #[arg(long, requires = "class")]
    target: Option<usize>,
    /// Serve a linear model `a1,...,ad,b` instead of a class member.
    #[arg(long, allow_hyphen_values = true, conflicts_with = "class")]
    model: Option<String>,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    port: u16,
    #[arg(long)]
    seed: Option<String>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Self::Runtime(e)
    }
}

impl From<fairaudit::AuditError> for Failure {
    fn from(e: fairaudit::AuditError) -> Self {
        Self::Runtime(e.into())
    }
}

type Outcome = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn resolve_seed(raw: Option<&str>, default: u64) -> Result<u64, Failure> {
    let seed = match raw {
        None => default,
        Some("random") => rand::random::<u64>(),
        Some(s) => s.parse().map_err(|_| usage(format!("--seed: expected an integer or `random`, got `{s}`")))?,
    };
    println!("seed = {seed}");
    Ok(seed)
}

fn check_unit(flag: &str, v: f64) -> Result<(), Failure> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("{flag}: must lie in (0,1), got {v}")))
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    if let Some(p) = path {
        std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn load(path: &Path) -> Result<HypothesisClass, Failure> {
    load_class(path).with_context(|| format!("loading class {}", path.display())).map_err(Failure::Runtime)
}

fn parse_model(raw: &str, dim: Option<usize>) -> Result<LinearModel, Failure> {
    let values = raw
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<f64>, _>>()
        .map_err(|_| usage(format!("--model: expected comma-separated numbers, got `{raw}`")))?;
    if values.len() < 2 || dim.is_some_and(|d| values.len() != d + 1) {
        return Err(usage(format!("--model: expected {} values (weights then bias)", dim.map_or("d+1".into(), |d| (d + 1).to_string()))));
    }
    let (a, b) = values.split_at(values.len() - 1);
    LinearModel::new(a.to_vec(), b[0]).map_err(|e| usage(format!("--model: {e}")))
}

fn result_json(r: &AuditResult, class: &HypothesisClass, target: Option<usize>) -> serde_json::Value {
    json!({
        "estimate": r.estimate,
        "queries": r.queries,
        "truncated": r.truncated,
        "transcript": r.transcript,
        "diameter": mp_diameter(class, &r.transcript).ok(),
        "true_mu": target.map(|t| class.mu_of(t)),
    })
}

fn cmd_audit(a: AuditArgs) -> Outcome {
    let seed = resolve_seed(a.seed.as_deref(), DEFAULT_SEED)?;
    check_unit("--eps", a.eps)?;
    check_unit("--delta", a.delta)?;
    let class = load(&a.class)?;
    let oracle: Box<dyn LabelOracle> = match (a.target, &a.remote) {
        (Some(t), None) => {
            if t >= class.len() {
                return Err(usage(format!("--target: {t} out of range for {} hypotheses", class.len())));
            }
            Box::new(class.hypothesis(t).clone())
        }
        (None, Some(url)) => Box::new(RemoteOracle::connect(url)?),
        _ => return Err(usage("one of --target or --remote is required")),
    };
    let mut trace = Vec::new();
    let result = match a.method {
        AuditMethod::Iid => iid_audit(oracle, class.domain(), a.eps, a.delta, seed, IidOptions { samples_per_group: None, budget: a.budget })?,
        AuditMethod::Cal => phased_cal_audit(oracle, &class, a.eps, seed, CalMode::Sampled, a.budget)?.result,
        AuditMethod::CalChecked => {
            phased_cal_audit(oracle, &class, a.eps, seed, CalMode::Checked { max_attempts: DEFAULT_MAX_ATTEMPTS }, a.budget)?.result
        }
        AuditMethod::Minimax => {
            let mut table = CostTable::new(a.eps);
            minimax_audit(oracle, &class, a.eps, a.budget, &mut table)?
        }
        AuditMethod::Oracle => {
            let cfg = OracleAuditConfig { eps: a.eps, delta: a.delta, seed, budget: a.budget };
            let report = oracle_audit(oracle, &class, &cfg)?;
            trace = report.trace_lines();
            report.result
        }
    };
    match result.estimate {
        Some(e) => println!("estimate = {e}"),
        None => println!("estimate = none"),
    }
    println!("queries = {}", result.queries);
    if result.truncated {
        println!("truncated = true");
    }
    if let Ok(d) = mp_diameter(&class, &result.transcript) {
        println!("diameter = {d}");
    }
    if let Some(t) = a.target {
        println!("true_mu = {}", class.mu_of(t));
    }
    if a.trace {
        for line in &trace {
            println!("{line}");
        }
    }
    let mut doc = result_json(&result, &class, a.target);
    doc["seed"] = json!(seed);
    if !trace.is_empty() {
        doc["trace"] = json!(trace.iter().map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()).collect::<Vec<_>>());
    }
    write_out(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}

fn cache_file(class: &HypothesisClass, eps: f64) -> Option<(PathBuf, String)> {
    let dir = std::env::var_os("FAIRAUDIT_CACHE_DIR")?;
    let hash = class_hash(class);
    Some((PathBuf::from(dir).join(format!("cost-{}-{}.json", &hash[..16], eps)), hash))
}

fn cmd_cost(a: CostArgs) -> Outcome {
    resolve_seed(a.seed.as_deref(), DEFAULT_SEED)?;
    if !(a.eps > 0.0) {
        return Err(usage(format!("--eps: must be positive, got {}", a.eps)));
    }
    let class = load(&a.class)?;
    let cache = cache_file(&class, a.eps);
    let mut table = match &cache {
        Some((path, hash)) if path.exists() => CostTable::load(path, hash, a.eps).ok().flatten().unwrap_or_else(|| CostTable::new(a.eps)),
        _ => CostTable::new(a.eps),
    };
    let full = class.full_space();
    let c = cost(&full, a.eps, &class, &mut table)?;
    println!("Cost(H) = {c}");
    let first = best_query(&full, a.eps, &class, &mut table).ok();
    if let Some(x) = first {
        println!("best first query = {x}");
    }
    let x = if a.xtd {
        let v = xtd(&class, a.eps)?;
        println!("XTD = {v}");
        Some(v)
    } else {
        None
    };
    if let Some((path, hash)) = &cache {
        if let Err(e) = table.save(path, hash) {
            log::warn!("could not write cost cache {}: {e}", path.display());
        }
    }
    let doc = json!({"cost": c, "best_query": first, "xtd": x, "eps": a.eps, "hypotheses": class.len(), "examples": class.num_examples()});
    write_out(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}

fn reference_labeling(raw: &str, class: &HypothesisClass) -> Result<Hypothesis, Failure> {
    if let Ok(i) = raw.parse::<usize>() {
        if i >= class.len() {
            return Err(usage(format!("--h: {i} out of range for {} hypotheses", class.len())));
        }
        return Ok(class.hypothesis(i).clone());
    }
    let text = std::fs::read_to_string(raw).map_err(|e| usage(format!("--h: `{raw}` is neither an index nor a readable file ({e})")))?;
    let signs: Vec<i8> = serde_json::from_str(&text).context("parsing labeling file")?;
    let h = Hypothesis::from_signs(&signs)?;
    if h.len() != class.num_examples() {
        return Err(usage(format!("--h: labeling has {} entries, class has {} examples", h.len(), class.num_examples())));
    }
    Ok(h)
}

fn cmd_specset(a: SpecsetArgs) -> Outcome {
    let seed = resolve_seed(a.seed.as_deref(), DEFAULT_SEED)?;
    if !(a.eps > 0.0) {
        return Err(usage(format!("--eps: must be positive, got {}", a.eps)));
    }
    check_unit("--delta", a.delta)?;
    let class = load(&a.class)?;
    let h = reference_labeling(&a.h, &class)?;
    let set = match a.mode {
        SpecModeArg::Exact => min_specifying_set(&h, &class, a.eps, SpecMode::Exact)?,
        SpecModeArg::Greedy => min_specifying_set(&h, &class, a.eps, SpecMode::Greedy)?,
        SpecModeArg::Online => {
            let mut state = SetCoverState::seeded(class.num_examples(), threshold_rate(class.len(), a.delta), seed);
            online_specifying_set(&h, &class, a.eps, &mut state);
            let mut s = state.selected().to_vec();
            s.sort_unstable();
            s
        }
    };
    println!("size = {}", set.len());
    println!("set = {set:?}");
    let doc = json!({"size": set.len(), "set": set});
    write_out(a.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc).unwrap()))
}

fn cmd_gaussian(a: GaussianArgs) -> Outcome {
    let seed = resolve_seed(a.seed.as_deref(), DEFAULT_SEED)?;
    if a.dim == 0 {
        return Err(usage("--dim: must be positive"));
    }
    if !(a.eps > 0.0 && a.eps < 0.5) {
        return Err(usage(format!("--eps: must lie in (0, 1/2), got {}", a.eps)));
    }
    let orientation = if a.zero_minus_one { Orientation::GroupZeroMinusOne } else { Orientation::GroupOneMinusZero };
    let pops = match &a.populations {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let pops = GaussianPopulations::from_json(&text)?;
            if pops.dim() != a.dim {
                return Err(usage(format!("--populations: dimension {} does not match --dim {}", pops.dim(), a.dim)));
            }
            Some(pops)
        }
        None => None,
    };
    let mut rows = String::from(if pops.is_some() {
        "d,eps,seed,mu_true,mu_hat,abs_err,queries\n"
    } else {
        "d,eps,seed,gamma_true,gamma_hat,abs_err,queries,branch\n"
    });
    if let Some(url) = &a.remote {
        let oracle = RemoteOracle::connect(url)?;
        if oracle.dim() != a.dim {
            return Err(usage(format!("--remote: server dimension {} does not match --dim {}", oracle.dim(), a.dim)));
        }
        match &pops {
            Some(p) => {
                let r = gaussian_audit(oracle, p, a.eps, orientation)?;
                println!("mu_hat = {}", r.estimate);
                println!("queries = {}", r.queries);
                rows.push_str(&format!("{},{},{},,{},,{}\n", a.dim, a.eps, seed, r.estimate, r.queries));
            }
            None => {
                let g = estimate_positive(oracle, a.eps)?;
                println!("gamma_hat = {}", g.gamma_hat);
                println!("queries = {}", g.queries);
                rows.push_str(&format!("{},{},{},,{},,{},{}\n", a.dim, a.eps, seed, g.gamma_hat, g.queries, branch_name(&g)));
            }
        }
        return write_out(a.out.as_deref(), &rows);
    }
    let models: Vec<(u64, LinearModel)> = match (&a.model, a.random) {
        (Some(m), _) => vec![(seed, parse_model(m, Some(a.dim))?)],
        (None, Some(n)) => (0..n as u64).map(|k| (seed.wrapping_add(k), random_model(a.dim, seed.wrapping_add(k)))).collect(),
        (None, None) => return Err(usage("one of --model, --random or --remote is required")),
    };
    let mut worst: f64 = 0.0;
    for (s, model) in &models {
        match &pops {
            Some(p) => {
                let r = gaussian_audit(model.clone(), p, a.eps, orientation)?;
                let truth = p.true_mu(model, orientation);
                let err = (r.estimate - truth).abs();
                worst = worst.max(err);
                rows.push_str(&format!("{},{},{},{},{},{},{}\n", a.dim, a.eps, s, truth, r.estimate, err, r.queries));
                if models.len() == 1 {
                    println!("mu_true = {truth}");
                    println!("mu_hat = {}", r.estimate);
                    println!("abs_err = {err}");
                    println!("queries = {}", r.queries);
                }
            }
            None => {
                let g = estimate_positive(model.clone(), a.eps)?;
                let truth = standard_gamma(model);
                let err = (g.gamma_hat - truth).abs();
                worst = worst.max(err);
                rows.push_str(&format!("{},{},{},{},{},{},{},{}\n", a.dim, a.eps, s, truth, g.gamma_hat, err, g.queries, branch_name(&g)));
                if models.len() == 1 {
                    println!("gamma_true = {truth}");
                    println!("gamma_hat = {}", g.gamma_hat);
                    println!("abs_err = {err}");
                    println!("queries = {}", g.queries);
                    println!("branch = {}", branch_name(&g));
                }
            }
        }
    }
    if models.len() > 1 {
        println!("trials = {}", models.len());
        println!("max_abs_err = {worst}");
    }
    write_out(a.out.as_deref(), &rows)
}

fn branch_name(g: &fairaudit::gaussian::GammaEstimate) -> &'static str {
    match g.branch {
        fairaudit::gaussian::Branch::EarlyReturn => "early-return",
        fairaudit::gaussian::Branch::Full => "full",
    }
}

fn cmd_experiment(a: ExperimentArgs) -> Outcome {
    let text = std::fs::read_to_string(&a.config).map_err(|e| usage(format!("--config: cannot read {}: {e}", a.config.display())))?;
    let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| usage(format!("--config: {e}")))?;
    cfg.seed = resolve_seed(a.seed.as_deref(), cfg.seed)?;
    if let Some(out) = a.out {
        cfg.output = out;
    }
    cfg.validate().map_err(|e| usage(format!("--config: {e}")))?;
    let base = a.config.parent().map(Path::to_path_buf).unwrap_or_default();
    let results = run_experiment(&cfg, &base)?;
    let summary = results.write(&cfg.output).with_context(|| format!("writing {}", cfg.output.display()))?;
    println!("method,budget,median_diameter,ci_low,ci_high,mean_queries");
    for r in &results.summary {
        println!("{},{},{:.4},{:.4},{:.4},{:.1}", r.method.name(), r.budget, r.median_diameter, r.ci_low, r.ci_high, r.mean_queries);
    }
    let failed = results.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        println!("runs with errors = {failed}");
    }
    println!("results = {}", cfg.output.display());
    println!("summary = {}", summary.display());
    Ok(())
}

fn cmd_serve(a: ServeArgs) -> Outcome {
    resolve_seed(a.seed.as_deref(), DEFAULT_SEED)?;
    let model = match (&a.class, a.target, &a.model) {
        (Some(c), Some(t), None) => {
            let class = load(c)?;
            if t >= class.len() {
                return Err(usage(format!("--target: {t} out of range for {} hypotheses", class.len())));
            }
            ServedModel::Finite(class.hypothesis(t).clone())
        }
        (None, None, Some(m)) => ServedModel::Linear(parse_model(m, None)?),
        _ => return Err(usage("serve needs --class with --target, or --model")),
    };
    let listener = std::net::TcpListener::bind((a.host.as_str(), a.port)).with_context(|| format!("binding {}:{}", a.host, a.port))?;
    println!("listening on http://{}", listener.local_addr().context("local address")?);
    serve_blocking(model, listener)?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let outcome = match cli.command {
        Command::Audit(a) => cmd_audit(a),
        Command::Cost(a) => cmd_cost(a),
        Command::Specset(a) => cmd_specset(a),
        Command::Gaussian(a) => cmd_gaussian(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Serve(a) => cmd_serve(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
