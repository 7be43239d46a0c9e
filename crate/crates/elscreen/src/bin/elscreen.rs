//! Command-line driver for the screening toolkit.
//!
//! Subcommands:
//! * `screen`    — rank the predictors of a dataset and select a model;
//! * `simulate`  — run seeded replications of a simulation scenario;
//! * `replicate` — run one of the bundled study presets (table1..table8);
//! * `diagnose`  — screening-condition ratios and the Taylor cross-check;
//! * `two-stage` — screen, then fit per-response lasso models.
//!
//! Reports embed the scientific configuration, the master seed and the
//! crate version — never timestamps, paths picked at runtime, or thread
//! counts — so an identical command line writes byte-identical output on
//! any machine and any `--threads` setting. All predictor indices, on
//! flags and in reports, are 0-based column positions of the X matrix.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde_json::json;

use elscreen::conditional::{self, ConditioningConfig, ConditioningSpec};
use elscreen::dataset::Dataset;
use elscreen::el::EstimatingMatrix;
use elscreen::evalkit::{self, DiagnosticsInput, EvaluationReport, PropositionDiagnostics};
use elscreen::pipeline::{self, LoadOptions};
use elscreen::screening::{self, Method, ScreeningResult, ThresholdRecord, ThresholdSpec};
use elscreen::simgen::{self, ErrorCase, ModelId, SimulationScenario};
use elscreen::study::{self, RuleDef, SpecDef, SpecKind, StudyOutcome, StudyRun, TableFilter};
use elscreen::{Error, Result};

const VERSION: &str = env!("CARGO_PKG_VERSION");

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Screen(args) => run_screen(args),
        Command::Simulate(args) => run_simulate(args),
        Command::Replicate(args) => run_replicate(args),
        Command::Diagnose(args) => match args.kind {
            DiagnoseKind::Condition(c) => run_condition(c),
            DiagnoseKind::Taylor(t) => run_taylor(t),
        },
        Command::TwoStage(args) => run_two_stage(args),
    }
}

/// Installs the global worker pool. `ELSCREEN_THREADS` overrides the
/// `--threads` flag; 0 keeps the library default (all cores).
fn configure_threads(flag: usize) -> Result<()> {
    let wanted = match std::env::var("ELSCREEN_THREADS") {
        Ok(raw) => raw.trim().parse::<usize>().map_err(|_| {
            Error::InvalidInput(format!("ELSCREEN_THREADS must be an integer, got {raw:?}"))
        })?,
        Err(_) => flag,
    };
    if wanted > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(wanted)
            .build_global()
            .map_err(|err| Error::InvalidInput(format!("cannot size the worker pool: {err}")))?;
    }
    Ok(())
}

#[derive(Parser)]
#[command(
    name = "elscreen",
    version,
    about = "Empirical-likelihood feature screening for multi-response regression"
)]
struct Cli {
    /// Worker threads (0 = all cores). The ELSCREEN_THREADS environment
    /// variable takes precedence. Reports never depend on this value.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rank the predictors of a dataset and select a model.
    Screen(ScreenArgs),
    /// Run seeded replications of a simulation scenario.
    Simulate(SimulateArgs),
    /// Run a bundled study preset.
    Replicate(ReplicateArgs),
    /// Screening-condition diagnostics and the Taylor cross-check.
    Diagnose(DiagnoseArgs),
    /// Screen, then fit per-response lasso models on the survivors.
    TwoStage(TwoStageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    /// Cumulative-sum responses Y_k = X_1 + ... + X_k + e_k.
    VariedQ,
    /// Five active predictors, four responses, iid predictors.
    Ex41,
    /// Random coefficients on five equicorrelated (0.3) predictors.
    Ex42,
    /// Hidden-variable design: equicorrelation 0.5 with X_5 independent.
    Ex43,
    /// Two responses on three predictors at equicorrelation 0.9 with
    /// E[X_3 y] = 0 (hidden variable).
    Case1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CaseArg {
    /// Homoscedastic errors.
    A,
    /// Heteroscedastic errors (model-specific sigma(X) factors).
    B,
}

impl From<CaseArg> for ErrorCase {
    fn from(case: CaseArg) -> Self {
        match case {
            CaseArg::A => ErrorCase::A,
            CaseArg::B => ErrorCase::B,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    /// Joint multivariate-moment screen.
    Melsis,
    /// Mean of the per-response univariate statistics.
    ElsisAvg,
    /// Maximum of the per-response univariate statistics.
    ElsisMax,
    /// Combined per-response reading (simulate only; no statistic vector).
    ElsisCom,
    /// Conditional screen; requires --cond.
    Cmelsis,
}

impl MethodArg {
    fn label(&self) -> &'static str {
        match self {
            MethodArg::Melsis => "melsis",
            MethodArg::ElsisAvg => "elsis_avg",
            MethodArg::ElsisMax => "elsis_max",
            MethodArg::ElsisCom => "elsis_com",
            MethodArg::Cmelsis => "cmelsis",
        }
    }

    fn plain(&self) -> Result<Method> {
        match self {
            MethodArg::Melsis => Ok(Method::Melsis),
            MethodArg::ElsisAvg => Ok(Method::ElsisAvg),
            MethodArg::ElsisMax => Ok(Method::ElsisMax),
            MethodArg::ElsisCom => Err(Error::InvalidInput(
                "elsis-com is a study row without a statistic vector; use `simulate`".into(),
            )),
            MethodArg::Cmelsis => Err(Error::InvalidInput(
                "cmelsis is handled by the conditional path".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

/// Threshold flags shared by the commands that select models.
#[derive(Args, Debug, Clone, Copy)]
struct ThresholdArgs {
    /// Hard rule: total model size round(C * floor(n / ln n)).
    #[arg(long, value_name = "C", conflicts_with = "soft")]
    hard: Option<f64>,
    /// Soft rule: permutation-quantile threshold at level TAU.
    #[arg(long, value_name = "TAU")]
    soft: Option<f64>,
}

impl ThresholdArgs {
    fn rule(&self) -> Result<RuleDef> {
        match (self.hard, self.soft) {
            (Some(c), None) => {
                if !(c.is_finite() && c > 0.0) {
                    return Err(Error::InvalidInput(format!(
                        "hard-rule constant must be positive, got {c}"
                    )));
                }
                Ok(RuleDef::Hard { c })
            }
            (None, Some(tau)) => {
                if !(0.0 < tau && tau <= 1.0) {
                    return Err(Error::InvalidInput(format!(
                        "quantile level must lie in (0, 1], got {tau}"
                    )));
                }
                Ok(RuleDef::Soft { tau })
            }
            (None, None) => Ok(RuleDef::None),
            (Some(_), Some(_)) => unreachable!("clap rejects --hard with --soft"),
        }
    }
}

/// Tuning knobs for the conditional screen.
#[derive(Args, Debug, Clone, Copy)]
struct ConditionalOpts {
    /// Slices used by the inverse-regression direction estimate.
    #[arg(long, default_value_t = 9)]
    slices: usize,
    /// Eigenvalue share kept when choosing the number of directions.
    #[arg(long, default_value_t = 0.8)]
    direction_share: f64,
    /// Condition on the raw X_C block instead of estimated directions.
    #[arg(long)]
    shared_basis: bool,
}

impl ConditionalOpts {
    fn config(&self) -> ConditioningConfig {
        ConditioningConfig {
            n_slices: self.slices,
            direction_share: self.direction_share,
            shared_basis: self.shared_basis,
        }
    }
}

/// Data source: a CSV pair or a generated scenario.
#[derive(Args, Debug, Clone)]
struct InputArgs {
    /// Predictor matrix CSV (rows = observations).
    #[arg(long, value_name = "PATH", requires = "y", conflicts_with = "model")]
    x: Option<PathBuf>,
    /// Response matrix CSV (rows = observations).
    #[arg(long, value_name = "PATH", requires = "x")]
    y: Option<PathBuf>,
    /// Generate the dataset from a bundled scenario instead.
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Observations for --model (default 100).
    #[arg(long)]
    n: Option<usize>,
    /// Predictors for --model (default 1000).
    #[arg(long)]
    p: Option<usize>,
    /// Response dimension (varied-q model only; default 3).
    #[arg(long)]
    q: Option<usize>,
    /// Noise correlation across responses (ex41/ex42/ex43 only).
    #[arg(long)]
    rho: Option<f64>,
    /// Error-variance case for --model.
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Seed for the generated dataset (default 0).
    #[arg(long)]
    data_seed: Option<u64>,
}

impl InputArgs {
    fn resolve(&self) -> Result<(Dataset, serde_json::Value)> {
        match (&self.x, &self.y, self.model) {
            (Some(x), Some(y), None) => {
                for (flag, given) in [
                    ("--n", self.n.is_some()),
                    ("--p", self.p.is_some()),
                    ("--q", self.q.is_some()),
                    ("--rho", self.rho.is_some()),
                    ("--case", self.case.is_some()),
                    ("--data-seed", self.data_seed.is_some()),
                ] {
                    if given {
                        return Err(Error::InvalidInput(format!(
                            "{flag} applies to --model, not to CSV input"
                        )));
                    }
                }
                let data = pipeline::load_csv(x, y, LoadOptions { standardize: false })?;
                let echo = json!({ "x": x.display().to_string(), "y": y.display().to_string() });
                Ok((data, echo))
            }
            (None, None, Some(model)) => {
                let scenario = scenario_from_parts(
                    model,
                    self.n,
                    self.p,
                    self.q,
                    self.rho,
                    self.case,
                    self.data_seed.unwrap_or(0),
                )?;
                let data = simgen::generate(&scenario)?;
                let echo = serde_json::to_value(&scenario)?;
                Ok((data, echo))
            }
            _ => Err(Error::InvalidInput(
                "provide either --x with --y, or --model".into(),
            )),
        }
    }
}

fn scenario_from_parts(
    model: ModelArg,
    n: Option<usize>,
    p: Option<usize>,
    q: Option<usize>,
    rho: Option<f64>,
    case: Option<CaseArg>,
    seed: u64,
) -> Result<SimulationScenario> {
    let n = n.unwrap_or(100);
    let p = p.unwrap_or(1000);
    let reject = |flag: &str, given: bool| {
        if given {
            Err(Error::InvalidInput(format!(
                "{flag} does not apply to this model"
            )))
        } else {
            Ok(())
        }
    };
    match model {
        ModelArg::VariedQ => {
            reject("--rho", rho.is_some())?;
            reject("--case", case.is_some())?;
            SimulationScenario::varied_q(n, p, q.unwrap_or(3), seed)
        }
        ModelArg::Ex41 => {
            reject("--q", q.is_some())?;
            SimulationScenario::ex41(
                n,
                p,
                rho.unwrap_or(0.0),
                case.map_or(ErrorCase::A, ErrorCase::from),
                seed,
            )
        }
        ModelArg::Ex42 => {
            reject("--q", q.is_some())?;
            SimulationScenario::ex42(
                n,
                p,
                rho.unwrap_or(0.0),
                case.map_or(ErrorCase::A, ErrorCase::from),
                seed,
            )
        }
        ModelArg::Ex43 => {
            reject("--q", q.is_some())?;
            SimulationScenario::ex43(
                n,
                p,
                rho.unwrap_or(0.0),
                case.map_or(ErrorCase::A, ErrorCase::from),
                seed,
            )
        }
        ModelArg::Case1 => {
            reject("--q", q.is_some())?;
            reject("--rho", rho.is_some())?;
            reject("--case", case.is_some())?;
            SimulationScenario::case1(n, p, seed)
        }
    }
}

// ---------------------------------------------------------------------
// screen
// ---------------------------------------------------------------------

#[derive(Args)]
struct ScreenArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Melsis)]
    method: MethodArg,
    /// Conditioning set for cmelsis: 0-based predictor indices.
    #[arg(long, value_delimiter = ',')]
    cond: Vec<usize>,
    #[command(flatten)]
    threshold: ThresholdArgs,
    /// Seed of the permutation behind the soft rule.
    #[arg(long, default_value_t = 0)]
    perm_seed: u64,
    #[command(flatten)]
    conditional: ConditionalOpts,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_screen(args: ScreenArgs) -> Result<()> {
    let (data, input_echo) = args.input.resolve()?;
    let rule = args.threshold.rule()?;
    let result = match args.method {
        MethodArg::Cmelsis => screen_conditional(&data, &args, rule)?,
        other => {
            if !args.cond.is_empty() {
                return Err(Error::InvalidInput(
                    "--cond applies to --method cmelsis".into(),
                ));
            }
            let method = other.plain()?;
            let spec = match rule {
                RuleDef::Hard { c } => ThresholdSpec::Hard { c },
                RuleDef::Soft { tau } => ThresholdSpec::Soft {
                    tau,
                    seed: args.perm_seed,
                },
                RuleDef::None => ThresholdSpec::None,
            };
            screening::screen(&data, method, &spec)?
        }
    };
    let document = json!({
        "version": VERSION,
        "command": "screen",
        "config": {
            "input": input_echo,
            "method": args.method.label(),
            "cond": if args.cond.is_empty() { serde_json::Value::Null } else { json!(sorted_set(&args.cond)) },
            "threshold": rule,
            "perm_seed": args.perm_seed,
        },
        "result": result,
    });
    emit_json(args.output.as_deref(), &document)
}

/// Conditional screen with the hard rule budgeting the *total* model size
/// (conditioning set plus top-ranked targets), mirroring the study rows.
fn screen_conditional(data: &Dataset, args: &ScreenArgs, rule: RuleDef) -> Result<ScreeningResult> {
    if args.cond.is_empty() {
        return Err(Error::InvalidInput(
            "--method cmelsis requires --cond".into(),
        ));
    }
    let cond = sorted_set(&args.cond);
    let cspec = ConditioningSpec::with_config(cond.clone(), args.conditional.config());
    cspec.validate(data.p())?;
    let screen = conditional::cmelsis_statistics(data, &cspec)?;
    let ranking = screen.ranking();
    let (selected, record) = match rule {
        RuleDef::Hard { c } => {
            let d = screening::hard_threshold_size(data.n(), c);
            let keep = d.saturating_sub(cond.len());
            let mut sel: Vec<usize> = ranking.iter().take(keep).copied().collect();
            sel.extend(cond.iter().copied());
            sel.sort_unstable();
            (sel, ThresholdRecord::Hard { c, d })
        }
        RuleDef::Soft { tau } => {
            let soft = conditional::cmelsis_soft_threshold(data, &cspec, tau, args.perm_seed)?;
            let mut sel = soft.selected;
            sel.extend(cond.iter().copied());
            sel.sort_unstable();
            (
                sel,
                ThresholdRecord::Soft {
                    tau,
                    gamma: soft.gamma,
                    seed: args.perm_seed,
                },
            )
        }
        RuleDef::None => (Vec::new(), ThresholdRecord::None),
    };
    Ok(ScreeningResult {
        method: Method::Cmelsis,
        universe: screen.targets.clone(),
        statistics: screen.statistics.clone(),
        ranking,
        selected,
        threshold: record,
        failures: screen.failures.clone(),
    })
}

// ---------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// Scenario family.
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    p: Option<usize>,
    /// Response dimension (varied-q model only).
    #[arg(long)]
    q: Option<usize>,
    /// Noise correlation across responses (ex41/ex42/ex43 only).
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Method rows evaluated on each replication.
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = vec![MethodArg::Melsis])]
    methods: Vec<MethodArg>,
    /// Conditioning set for cmelsis rows (0-based indices).
    #[arg(long, value_delimiter = ',')]
    cond: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Master seed; replication r uses a derived stream.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    threshold: ThresholdArgs,
    #[command(flatten)]
    conditional: ConditionalOpts,
    /// Write each replication's dataset as x_RR_NNNN.csv / y_RR_NNNN.csv
    /// in this directory before evaluating it.
    #[arg(long, value_name = "DIR")]
    export_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_simulate(args: SimulateArgs) -> Result<()> {
    let scenario = scenario_from_parts(
        args.model, args.n, args.p, args.q, args.rho, args.case, args.seed,
    )?;
    let rule = args.threshold.rule()?;
    if args.methods.is_empty() {
        return Err(Error::InvalidInput("--methods must not be empty".into()));
    }
    let mut seen = Vec::new();
    let mut specs = Vec::new();
    for method in &args.methods {
        if seen.contains(method) {
            return Err(Error::InvalidInput(format!(
                "duplicate method {}",
                method.label()
            )));
        }
        seen.push(*method);
        let spec = match method {
            MethodArg::Melsis => SpecDef::plain("melsis", Method::Melsis, rule),
            MethodArg::ElsisAvg => SpecDef::plain("elsis_avg", Method::ElsisAvg, rule),
            MethodArg::ElsisMax => SpecDef::plain("elsis_max", Method::ElsisMax, rule),
            MethodArg::ElsisCom => SpecDef::union("elsis_com", rule),
            MethodArg::Cmelsis => {
                if args.cond.is_empty() {
                    return Err(Error::InvalidInput("cmelsis requires --cond".into()));
                }
                SpecDef {
                    label: "cmelsis".into(),
                    kind: SpecKind::Conditional {
                        cond: sorted_set(&args.cond),
                        config: args.conditional.config(),
                    },
                    rule,
                }
            }
        };
        specs.push(spec);
    }
    if !args.methods.contains(&MethodArg::Cmelsis) && !args.cond.is_empty() {
        return Err(Error::InvalidInput(
            "--cond applies to cmelsis rows only".into(),
        ));
    }
    if let Some(dir) = &args.export_dir {
        fs::create_dir_all(dir)?;
    }
    let runs = vec![StudyRun {
        tag: "simulate".into(),
        scenario: scenario.clone(),
        specs,
    }];
    let outcome = study::run_study(&runs, args.reps, args.export_dir.as_deref())?;
    let config = json!({
        "scenario": scenario,
        "methods": args.methods.iter().map(|m| m.label()).collect::<Vec<_>>(),
        "threshold": rule,
        "cond": if args.cond.is_empty() { serde_json::Value::Null } else { json!(sorted_set(&args.cond)) },
    });
    finish_study(
        "simulate",
        config,
        args.seed,
        args.reps,
        args.format,
        args.output.as_deref(),
        outcome,
    )
}

// ---------------------------------------------------------------------
// replicate
// ---------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TableArg {
    Table1,
    Table2,
    Table3,
    Table4,
    Table6,
    Table8,
}

impl From<TableArg> for study::StudyTable {
    fn from(table: TableArg) -> Self {
        match table {
            TableArg::Table1 => study::StudyTable::Table1,
            TableArg::Table2 => study::StudyTable::Table2,
            TableArg::Table3 => study::StudyTable::Table3,
            TableArg::Table4 => study::StudyTable::Table4,
            TableArg::Table6 => study::StudyTable::Table6,
            TableArg::Table8 => study::StudyTable::Table8,
        }
    }
}

#[derive(Args)]
struct ReplicateArgs {
    /// Bundled preset to run.
    #[arg(value_enum)]
    table: TableArg,
    /// Replications per scenario (100 at desk scale; 400 for the full
    /// studies).
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict table1 to one response dimension.
    #[arg(long)]
    q: Option<usize>,
    /// Restrict table2/table3/table4 to one noise correlation.
    #[arg(long)]
    rho: Option<f64>,
    /// Restrict the preset to one error case.
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_replicate(args: ReplicateArgs) -> Result<()> {
    let table: study::StudyTable = args.table.into();
    let filter = TableFilter {
        q: args.q,
        rho: args.rho,
        case: args.case.map(ErrorCase::from),
    };
    let runs = study::table_runs(table, &filter, args.seed)?;
    let outcome = study::run_study(&runs, args.reps, None)?;
    let config = json!({
        "table": table.label(),
        "q": args.q,
        "rho": args.rho,
        "case": args.case.map(|c| match c { CaseArg::A => "a", CaseArg::B => "b" }),
    });
    finish_study(
        "replicate",
        config,
        args.seed,
        args.reps,
        args.format,
        args.output.as_deref(),
        outcome,
    )
}

/// Serializes a study outcome (JSON or CSV), writes it, and converts a
/// partial outcome into a nonzero exit after flushing the report.
fn finish_study(
    command: &str,
    config: serde_json::Value,
    master_seed: u64,
    replications: usize,
    format: FormatArg,
    output: Option<&Path>,
    outcome: StudyOutcome,
) -> Result<()> {
    let content = match format {
        FormatArg::Json => {
            let document = json!({
                "version": VERSION,
                "command": command,
                "config": config,
                "master_seed": master_seed,
                "replications": replications,
                "partial": outcome.is_partial(),
                "errors": outcome.errors,
                "reports": outcome.reports,
            });
            format!("{}\n", serde_json::to_string_pretty(&document)?)
        }
        FormatArg::Csv => study_csv(&outcome),
    };
    write_output(output, &content)?;
    if outcome.is_partial() {
        for line in &outcome.errors {
            eprintln!("replication failure: {line}");
        }
        return Err(Error::NumericalFailure(format!(
            "{} replication failure(s); first: {}",
            outcome.errors.len(),
            outcome.errors[0]
        )));
    }
    Ok(())
}

fn model_label(model: ModelId) -> &'static str {
    match model {
        ModelId::VariedQ => "varied_q",
        ModelId::Ex41 => "ex41",
        ModelId::Ex42 => "ex42",
        ModelId::Ex43 => "ex43",
        ModelId::Case1 => "case1",
    }
}

fn case_label(case: ErrorCase) -> &'static str {
    match case {
        ErrorCase::A => "a",
        ErrorCase::B => "b",
    }
}

fn rule_label(record: &ThresholdRecord) -> String {
    match record {
        ThresholdRecord::Hard { c, d } => format!("hard(c={c};d={d})"),
        ThresholdRecord::Soft { tau, gamma, seed } => {
            format!("soft(tau={tau};gamma={gamma};seed={seed})")
        }
        ThresholdRecord::None => "none".into(),
    }
}

fn study_csv(outcome: &StudyOutcome) -> String {
    let mut out = String::new();
    if outcome.is_partial() {
        out.push_str(&format!("# partial: true ({})\n", outcome.errors[0]));
    }
    out.push_str("model,n,p,q,rho,case,scenario_seed,conditioning,rule,");
    out.push_str(EvaluationReport::csv_header());
    out.push('\n');
    for labeled in &outcome.reports {
        let s = &labeled.scenario;
        let conditioning = labeled
            .conditioning
            .as_ref()
            .map(|c| {
                c.iter()
                    .map(|j| j.to_string())
                    .collect::<Vec<_>>()
                    .join(";")
            })
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            model_label(s.model_id),
            s.n,
            s.p,
            s.q,
            s.rho,
            case_label(s.error_case),
            s.seed,
            conditioning,
            rule_label(&labeled.report.model_size_rule),
            labeled.report.csv_row(),
        ));
    }
    out
}

// ---------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------

#[derive(Args)]
struct DiagnoseArgs {
    #[command(subcommand)]
    kind: DiagnoseKind,
}

#[derive(Subcommand)]
enum DiagnoseKind {
    /// Ranking-condition ratios, marginal vs centralized.
    Condition(ConditionArgs),
    /// EL ratio against its quadratic-form expansions.
    Taylor(TaylorArgs),
}

#[derive(Args)]
struct ConditionArgs {
    /// Scenario whose active set anchors the ratios.
    #[arg(long, value_enum, default_value_t = ModelArg::Case1)]
    model: ModelArg,
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    p: usize,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, value_enum)]
    case: Option<CaseArg>,
    /// Simulated datasets to average over.
    #[arg(long, default_value_t = 100)]
    sims: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed conditioning set (0-based). Default: each simulation
    /// conditions on its own top floor(n / ln n) marginally ranked
    /// predictors.
    #[arg(long, value_delimiter = ',')]
    cond: Vec<usize>,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_condition(args: ConditionArgs) -> Result<()> {
    if args.sims == 0 {
        return Err(Error::InvalidInput("--sims must be positive".into()));
    }
    let scenario = scenario_from_parts(
        args.model, Some(args.n), Some(args.p), args.q, args.rho, args.case, args.seed,
    )?;
    let active = scenario.active_set();
    let inactive = scenario.inactive_set();
    let fixed: Option<Vec<usize>> = if args.cond.is_empty() {
        None
    } else {
        Some(sorted_set(&args.cond))
    };
    let d = screening::hard_threshold_size(args.n, 1.0);

    let outcomes: Vec<Result<PropositionDiagnostics>> = (0..args.sims)
        .into_par_iter()
        .map(|i| {
            let mut sc = scenario.clone();
            sc.seed = simgen::derive_seed(args.seed, i as u64);
            let data = simgen::generate(&sc)?;
            let input = DiagnosticsInput::from_dataset(&data)?;
            let cond = match &fixed {
                Some(c) => c.clone(),
                None => {
                    let stats = screening::melsis_statistics(&data)?;
                    let mut top: Vec<usize> = screening::rank_predictors(&stats.values)
                        .into_iter()
                        .take(d)
                        .collect();
                    top.sort_unstable();
                    top
                }
            };
            // A conditioning set covering every active predictor leaves
            // nothing to bound; report the marginal side alone.
            let covers_all = active.iter().all(|j| cond.contains(j));
            let cond_ref = if covers_all { None } else { Some(&cond[..]) };
            evalkit::proposition_diagnostics(&input, &active, &inactive, cond_ref)
        })
        .collect();

    let mut diagnostics = Vec::new();
    let mut errors = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(diag) => diagnostics.push(diag),
            Err(err) => errors.push(format!("simulation {i}: {err}")),
        }
    }

    let unconditional = summarize_parts(diagnostics.iter().map(|d| &d.unconditional));
    let conditional = summarize_parts(diagnostics.iter().filter_map(|d| d.conditional.as_ref()));
    let separation = match (
        unconditional["mean_raw_ratio"].as_f64(),
        conditional["mean_raw_ratio"].as_f64(),
    ) {
        (Some(u), Some(c)) if c > 0.0 => Some(u / c),
        _ => None,
    };
    let document = json!({
        "version": VERSION,
        "command": "diagnose-condition",
        "config": {
            "scenario": scenario,
            "sims": args.sims,
            "cond": fixed,
            "marginal_top_d": if args.cond.is_empty() { Some(d) } else { None },
        },
        "partial": !errors.is_empty(),
        "errors": errors,
        "summary": {
            "simulations": diagnostics.len(),
            "unconditional": unconditional,
            "conditional": conditional,
            "separation": separation,
        },
        "simulations": diagnostics,
    });
    emit_json(args.output.as_deref(), &document)?;
    if document["partial"].as_bool() == Some(true) {
        let errs = document["errors"].as_array().map_or(0, |a| a.len());
        return Err(Error::NumericalFailure(format!(
            "{errs} simulation failure(s)"
        )));
    }
    Ok(())
}

/// Means over the finite ratios plus counts of the edge outcomes.
fn summarize_parts<'a, I>(parts: I) -> serde_json::Value
where
    I: Iterator<Item = &'a evalkit::DiagnosticsPart>,
{
    let mut evaluated = 0usize;
    let mut raw_sum = 0.0;
    let mut raw_count = 0usize;
    let mut scaled_sum = 0.0;
    let mut scaled_count = 0usize;
    let mut infinite = 0usize;
    let mut holds = 0usize;
    for part in parts {
        evaluated += 1;
        match part.raw_ratio {
            Some(v) => {
                raw_sum += v;
                raw_count += 1;
            }
            None => infinite += 1,
        }
        if let Some(v) = part.scaled_ratio {
            scaled_sum += v;
            scaled_count += 1;
        }
        if part.condition_holds {
            holds += 1;
        }
    }
    json!({
        "evaluated": evaluated,
        "mean_raw_ratio": (raw_count > 0).then(|| raw_sum / raw_count as f64),
        "mean_scaled_ratio": (scaled_count > 0).then(|| scaled_sum / scaled_count as f64),
        "infinite": infinite,
        "condition_holds": holds,
    })
}

#[derive(Args)]
struct TaylorArgs {
    /// Rows per draw.
    #[arg(long, default_value_t = 500)]
    n: usize,
    /// Estimating-equation dimension.
    #[arg(long, default_value_t = 4)]
    q: usize,
    /// Seeded draws to compare.
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_taylor(args: TaylorArgs) -> Result<()> {
    if args.draws == 0 {
        return Err(Error::InvalidInput("--draws must be positive".into()));
    }
    let identity = DMatrix::<f64>::identity(args.q, args.q);
    let outcomes: Vec<Result<evalkit::TaylorComparison>> = (0..args.draws)
        .into_par_iter()
        .map(|i| {
            let rows = simgen::mvn_sample(&identity, args.n, simgen::derive_seed(args.seed, i as u64))?;
            let g = EstimatingMatrix::new(rows)?;
            evalkit::taylor_comparator(&g)
        })
        .collect();

    let mut draws = Vec::new();
    let mut errors = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(cmp) => draws.push(cmp),
            Err(err) => errors.push(format!("draw {i}: {err}")),
        }
    }
    let rel_gap =
        |c: &evalkit::TaylorComparison| (c.el_ratio - c.hotelling).abs() / c.hotelling.max(1.0);
    let within = draws.iter().filter(|c| rel_gap(c) <= 0.05).count();
    let max_gap = draws.iter().map(|c| rel_gap(c)).fold(0.0f64, f64::max);
    let document = json!({
        "version": VERSION,
        "command": "diagnose-taylor",
        "config": { "n": args.n, "q": args.q, "draws": args.draws, "seed": args.seed },
        "partial": !errors.is_empty(),
        "errors": errors,
        "summary": {
            "draws": draws.len(),
            "within_5pct": within,
            "share_within_5pct": within as f64 / draws.len().max(1) as f64,
            "max_relative_gap": max_gap,
        },
        "draws": draws,
    });
    emit_json(args.output.as_deref(), &document)?;
    if document["partial"].as_bool() == Some(true) {
        let errs = document["errors"].as_array().map_or(0, |a| a.len());
        return Err(Error::NumericalFailure(format!("{errs} draw failure(s)")));
    }
    Ok(())
}

// ---------------------------------------------------------------------
// two-stage
// ---------------------------------------------------------------------

#[derive(Args)]
struct TwoStageArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_enum, default_value_t = MethodArg::Melsis)]
    method: MethodArg,
    /// Survivors kept by the screening stage (default floor(n / ln n),
    /// capped at p).
    #[arg(long)]
    size: Option<usize>,
    /// Report file (default: stdout).
    #[arg(long, value_name = "PATH")]
    output: Option<PathBuf>,
}

fn run_two_stage(args: TwoStageArgs) -> Result<()> {
    let (data, input_echo) = args.input.resolve()?;
    let method = args.method.plain()?;
    let size = args
        .size
        .unwrap_or_else(|| screening::hard_threshold_size(data.n(), 1.0).min(data.p()));
    let result = pipeline::two_stage(&data, method, size)?;
    let document = json!({
        "version": VERSION,
        "command": "two-stage",
        "config": {
            "input": input_echo,
            "method": args.method.label(),
            "size": size,
        },
        "result": result,
    });
    emit_json(args.output.as_deref(), &document)
}

// ---------------------------------------------------------------------
// shared helpers
// ---------------------------------------------------------------------

fn sorted_set(indices: &[usize]) -> Vec<usize> {
    let mut set = indices.to_vec();
    set.sort_unstable();
    set.dedup();
    set
}

fn emit_json(path: Option<&Path>, document: &serde_json::Value) -> Result<()> {
    let content = format!("{}\n", serde_json::to_string_pretty(document)?);
    write_output(path, &content)
}

fn write_output(path: Option<&Path>, content: &str) -> Result<()> {
    match path {
        Some(p) => {
            fs::write(p, content)?;
            Ok(())
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}
