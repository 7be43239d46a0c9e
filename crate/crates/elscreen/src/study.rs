//! Monte Carlo study harness behind the `simulate` and `replicate`
//! commands.
//!
//! A study is a list of [`StudyRun`]s, each pairing one simulation
//! scenario with the method rows to evaluate on it. Per replication the
//! dataset is generated from a seed derived from the run seed and the
//! replication index, every row is evaluated on that same dataset, and
//! the outcomes are merged in replication order — so a study's reports
//! are a pure function of (runs, replications) and never depend on the
//! thread count.
//!
//! Replication failures do not abort the study: the failing replication
//! is recorded in [`StudyOutcome::errors`] and the aggregates cover the
//! replications that completed, letting callers flush partial results.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditional::{self, ConditioningConfig, ConditioningSpec};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evalkit::{self, EvaluationReport};
use crate::pipeline;
use crate::screening::{self, Method, ThresholdRecord, ThresholdSpec};
use crate::simgen::{self, ErrorCase, SimulationScenario};

/// Selection rule requested for a study row.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RuleDef {
    /// Keep a model of total size round(c * floor(n / ln n)).
    Hard { c: f64 },
    /// Permutation-quantile threshold at level tau; the permutation seed
    /// is derived per replication.
    Soft { tau: f64 },
    /// Rank only; nothing is selected.
    None,
}

/// What a study row computes on each replication.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpecKind {
    /// A marginal screen (melsis / elsis_avg / elsis_max).
    Plain { method: Method },
    /// The combined per-response reading: the model size at which every
    /// active predictor appears in the top d of at least one response's
    /// univariate ranking. Under a hard rule the selected set is the
    /// union of the per-response top-d prefixes; soft rules select
    /// nothing for this row.
    Union,
    /// The conditional screen given a fixed conditioning set (0-based
    /// predictor indices). A hard rule budgets the *total* model size, so
    /// the row selects the conditioning set plus the top (d - |C|)
    /// targets; the minimal model size is measured over the active
    /// predictors outside C on the conditional ranking.
    Conditional {
        cond: Vec<usize>,
        config: ConditioningConfig,
    },
    /// The two-step screen: the top d1 marginal predictors become the
    /// conditioning set, then the conditional screen ranks the rest and
    /// the top d2 join the model. The minimal model size is measured on
    /// the concatenation of the stage-one prefix and the stage-two
    /// ranking.
    TwoStep {
        d1: usize,
        d2: usize,
        config: ConditioningConfig,
    },
}

/// One row of a study: a label, the quantity to compute, and the
/// selection rule applied to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpecDef {
    pub label: String,
    pub kind: SpecKind,
    pub rule: RuleDef,
}

impl SpecDef {
    pub fn plain(label: impl Into<String>, method: Method, rule: RuleDef) -> Self {
        SpecDef {
            label: label.into(),
            kind: SpecKind::Plain { method },
            rule,
        }
    }

    pub fn union(label: impl Into<String>, rule: RuleDef) -> Self {
        SpecDef {
            label: label.into(),
            kind: SpecKind::Union,
            rule,
        }
    }

    pub fn conditional(label: impl Into<String>, cond: Vec<usize>, rule: RuleDef) -> Self {
        let mut cond = cond;
        cond.sort_unstable();
        cond.dedup();
        SpecDef {
            label: label.into(),
            kind: SpecKind::Conditional {
                cond,
                config: ConditioningConfig::default(),
            },
            rule,
        }
    }
}

/// One scenario together with the rows evaluated on it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyRun {
    /// Short tag used in error messages ("table2 rho=0.5 case=a").
    pub tag: String,
    /// Scenario template; its seed is the run's master seed and each
    /// replication derives its own dataset seed from it.
    pub scenario: SimulationScenario,
    pub specs: Vec<SpecDef>,
}

/// An aggregated report plus the scenario it came from.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabeledReport {
    pub scenario: SimulationScenario,
    /// Conditioning set of conditional rows (0-based), echoed for
    /// regenerability.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conditioning: Option<Vec<usize>>,
    pub report: EvaluationReport,
}

/// All reports of a study plus the replication-level failures.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyOutcome {
    pub reports: Vec<LabeledReport>,
    /// Human-readable failure records, in (run, replication) order. A
    /// non-empty list marks the outcome as partial.
    pub errors: Vec<String>,
}

impl StudyOutcome {
    pub fn is_partial(&self) -> bool {
        !self.errors.is_empty()
    }
}

/// Per-replication outcome of one row.
struct RepEval {
    mms: usize,
    selected: Vec<usize>,
    union: Option<usize>,
    gamma: Option<f64>,
}

/// Runs every replication of every run and aggregates per-row reports.
///
/// When `export_dir` is set, each replication's dataset is written as
/// `x_RR_NNNN.csv` / `y_RR_NNNN.csv` (RR = run index, NNNN = replication
/// index) before evaluation.
pub fn run_study(
    runs: &[StudyRun],
    replications: usize,
    export_dir: Option<&Path>,
) -> Result<StudyOutcome> {
    if replications == 0 {
        return Err(Error::InvalidInput(
            "a study needs at least one replication".into(),
        ));
    }
    if runs.is_empty() {
        return Err(Error::InvalidInput("a study needs at least one run".into()));
    }
    for run in runs {
        validate_run(run)?;
    }

    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for (run_idx, run) in runs.iter().enumerate() {
        let outcomes: Vec<Result<Vec<RepEval>>> = (0..replications)
            .into_par_iter()
            .map(|rep| evaluate_replication(run, run_idx, rep, export_dir))
            .collect();

        let mut per_spec: Vec<Vec<RepEval>> = run.specs.iter().map(|_| Vec::new()).collect();
        for (rep, outcome) in outcomes.into_iter().enumerate() {
            match outcome {
                Ok(evals) => {
                    for (k, eval) in evals.into_iter().enumerate() {
                        per_spec[k].push(eval);
                    }
                }
                Err(err) => errors.push(format!("{} replication {rep}: {err}", run.tag)),
            }
        }

        let active = run.scenario.active_set();
        for (spec, evals) in run.specs.iter().zip(per_spec) {
            if evals.is_empty() {
                errors.push(format!(
                    "{} {}: no replication completed",
                    run.tag, spec.label
                ));
                continue;
            }
            match aggregate_spec(run, spec, &active, &evals) {
                Ok(report) => reports.push(report),
                Err(err) => errors.push(format!("{} {}: {err}", run.tag, spec.label)),
            }
        }
    }
    Ok(StudyOutcome { reports, errors })
}

fn validate_run(run: &StudyRun) -> Result<()> {
    run.scenario.validate()?;
    let p = run.scenario.p;
    if run.specs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{}: a run needs at least one row",
            run.tag
        )));
    }
    for spec in &run.specs {
        match &spec.kind {
            SpecKind::Plain { .. } | SpecKind::Union => {}
            SpecKind::Conditional { cond, config } => {
                ConditioningSpec::with_config(cond.clone(), *config).validate(p)?;
            }
            SpecKind::TwoStep { d1, d2, .. } => {
                if *d1 == 0 {
                    return Err(Error::InvalidInput(format!(
                        "{} {}: stage-one size must be positive",
                        run.tag, spec.label
                    )));
                }
                if d1 + d2 > p {
                    return Err(Error::InvalidInput(format!(
                        "{} {}: stage sizes {d1}+{d2} exceed {p} predictors",
                        run.tag, spec.label
                    )));
                }
            }
        }
        if let RuleDef::Soft { tau } = spec.rule {
            if !(0.0 < tau && tau <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "{} {}: quantile level must lie in (0, 1], got {tau}",
                    run.tag, spec.label
                )));
            }
        }
    }
    Ok(())
}

fn evaluate_replication(
    run: &StudyRun,
    run_idx: usize,
    rep: usize,
    export_dir: Option<&Path>,
) -> Result<Vec<RepEval>> {
    let mut scenario = run.scenario.clone();
    scenario.seed = simgen::derive_seed(run.scenario.seed, rep as u64);
    let data = simgen::generate(&scenario)?;
    if let Some(dir) = export_dir {
        let x_path = dir.join(format!("x_{run_idx:02}_{rep:04}.csv"));
        let y_path = dir.join(format!("y_{run_idx:02}_{rep:04}.csv"));
        pipeline::write_dataset_csv(&data, &x_path, &y_path)?;
    }
    let active = scenario.active_set();
    // Distinct stream for the permutation used by soft rules.
    let perm_seed = simgen::derive_seed(scenario.seed, 1);
    run.specs
        .iter()
        .map(|spec| evaluate_spec(&data, &active, spec, perm_seed))
        .collect()
}

fn evaluate_spec(
    data: &Dataset,
    active: &[usize],
    spec: &SpecDef,
    perm_seed: u64,
) -> Result<RepEval> {
    match &spec.kind {
        SpecKind::Plain { method } => {
            let threshold = match spec.rule {
                RuleDef::Hard { c } => ThresholdSpec::Hard { c },
                RuleDef::Soft { tau } => ThresholdSpec::Soft {
                    tau,
                    seed: perm_seed,
                },
                RuleDef::None => ThresholdSpec::None,
            };
            let result = screening::screen(data, *method, &threshold)?;
            let mms = evalkit::minimal_model_size(&result.ranking, active)?;
            let gamma = match result.threshold {
                ThresholdRecord::Soft { gamma, .. } => Some(gamma),
                _ => None,
            };
            Ok(RepEval {
                mms,
                selected: result.selected,
                union: None,
                gamma,
            })
        }
        SpecKind::Union => {
            let (by_response, _) = screening::response_statistics(data)?;
            let rankings: Vec<Vec<usize>> = by_response
                .iter()
                .map(|values| screening::rank_predictors(values))
                .collect();
            let union = evalkit::union_model_size(&rankings, active)?;
            let selected = match spec.rule {
                RuleDef::Hard { c } => {
                    let d = screening::hard_threshold_size(data.n(), c);
                    let mut set: Vec<usize> = rankings
                        .iter()
                        .flat_map(|r| r.iter().take(d).copied())
                        .collect();
                    set.sort_unstable();
                    set.dedup();
                    set
                }
                _ => Vec::new(),
            };
            Ok(RepEval {
                mms: union,
                selected,
                union: Some(union),
                gamma: None,
            })
        }
        SpecKind::Conditional { cond, config } => {
            let cspec = ConditioningSpec::with_config(cond.clone(), *config);
            let screen = conditional::cmelsis_statistics(data, &cspec)?;
            let ranking = screen.ranking();
            let remaining: Vec<usize> = active
                .iter()
                .copied()
                .filter(|j| !cond.contains(j))
                .collect();
            let mms = if remaining.is_empty() {
                0
            } else {
                evalkit::minimal_model_size(&ranking, &remaining)?
            };
            let (targets, gamma) = match spec.rule {
                RuleDef::Hard { c } => {
                    let d = screening::hard_threshold_size(data.n(), c);
                    let keep = d.saturating_sub(cond.len());
                    (ranking.into_iter().take(keep).collect::<Vec<_>>(), None)
                }
                RuleDef::Soft { tau } => {
                    let soft = conditional::cmelsis_soft_threshold(data, &cspec, tau, perm_seed)?;
                    (soft.selected, Some(soft.gamma))
                }
                RuleDef::None => (Vec::new(), None),
            };
            let selected = match spec.rule {
                RuleDef::None => Vec::new(),
                _ => {
                    let mut s = targets;
                    s.extend(cond.iter().copied());
                    s.sort_unstable();
                    s.dedup();
                    s
                }
            };
            Ok(RepEval {
                mms,
                selected,
                union: None,
                gamma,
            })
        }
        SpecKind::TwoStep { d1, d2, config } => {
            let result = conditional::two_step_screen(data, *d1, *d2, config)?;
            let mut combined: Vec<usize> = result.stage_one.ranking[..*d1].to_vec();
            match &result.stage_two {
                Some(stage) => combined.extend(stage.ranking()),
                None => combined.extend(result.stage_one.ranking[*d1..].iter().copied()),
            }
            let mms = evalkit::minimal_model_size(&combined, active)?;
            Ok(RepEval {
                mms,
                selected: result.selected,
                union: None,
                gamma: None,
            })
        }
    }
}

fn aggregate_spec(
    run: &StudyRun,
    spec: &SpecDef,
    active: &[usize],
    evals: &[RepEval],
) -> Result<LabeledReport> {
    let mms: Vec<usize> = evals.iter().map(|e| e.mms).collect();
    let selections: Vec<Vec<usize>> = evals.iter().map(|e| e.selected.clone()).collect();
    let unions: Option<Vec<usize>> = if evals.iter().all(|e| e.union.is_some()) {
        Some(evals.iter().map(|e| e.union.unwrap()).collect())
    } else {
        None
    };
    let record = threshold_record(&spec.rule, run.scenario.n, run.scenario.seed, evals)?;
    let report = EvaluationReport::summarize(
        spec.label.clone(),
        record,
        &mms,
        &selections,
        active,
        unions.as_deref(),
    )?;
    let conditioning = match &spec.kind {
        SpecKind::Conditional { cond, .. } => Some(cond.clone()),
        _ => None,
    };
    Ok(LabeledReport {
        scenario: run.scenario.clone(),
        conditioning,
        report,
    })
}

/// Aggregate threshold record: hard rules echo the fixed size; soft rules
/// echo the requested level, the median cutoff across replications, and
/// the run seed the per-replication permutation seeds derive from.
fn threshold_record(
    rule: &RuleDef,
    n: usize,
    run_seed: u64,
    evals: &[RepEval],
) -> Result<ThresholdRecord> {
    Ok(match *rule {
        RuleDef::Hard { c } => ThresholdRecord::Hard {
            c,
            d: screening::hard_threshold_size(n, c),
        },
        RuleDef::Soft { tau } => {
            let gammas: Vec<f64> = evals.iter().filter_map(|e| e.gamma).collect();
            if gammas.is_empty() {
                // Rows that cannot apply a soft rule (the union reading)
                // record no threshold.
                ThresholdRecord::None
            } else {
                let gamma = evalkit::quantile_summary(&gammas, &[0.5])?[0];
                ThresholdRecord::Soft {
                    tau,
                    gamma,
                    seed: run_seed,
                }
            }
        }
        RuleDef::None => ThresholdRecord::None,
    })
}

/// Bundled study presets, named after the summary tables they regenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyTable {
    /// Varied response dimension q in {5, 10, 15} on the cumulative-sum
    /// design, (n, p) = (100, 1000), hard rule c = 1.
    Table1,
    /// Selection proportions for the five-active design at
    /// (n, p) = (100, 2000), noise correlation in {0, 0.5, 0.8}, both
    /// error cases, hard rule c = 1.
    Table2,
    /// Model-size quantiles for the same design, correlation in {0, 0.5}.
    Table3,
    /// Soft-rule study: the marginal screen on the five-active design and
    /// the conditional screen on the hidden-variable design, tau in
    /// {0.99, 0.98}.
    Table4,
    /// Model-size quantiles on the hidden-variable design at
    /// (n, p) = (100, 1000): marginal screen vs the conditional screen
    /// under four conditioning sets.
    Table6,
    /// Two-step screen on the hidden-variable design, homoscedastic case:
    /// stage-one sizes {3, 5, 7, 9} by total model sizes {21, 32, 42}.
    Table8,
}

impl StudyTable {
    pub fn label(&self) -> &'static str {
        match self {
            StudyTable::Table1 => "table1",
            StudyTable::Table2 => "table2",
            StudyTable::Table3 => "table3",
            StudyTable::Table4 => "table4",
            StudyTable::Table6 => "table6",
            StudyTable::Table8 => "table8",
        }
    }
}

/// Optional restrictions of a preset's scenario grid.
#[derive(Debug, Clone, Copy, Default)]
pub struct TableFilter {
    /// Keep only this response dimension (table1).
    pub q: Option<usize>,
    /// Keep only this noise correlation (table2/table3/table4).
    pub rho: Option<f64>,
    /// Keep only this error case (table2/table3/table4/table6).
    pub case: Option<ErrorCase>,
}

/// Conditioning sets used by the hidden-variable studies (0-based
/// predictor indices; the design's active set is {0,..,4} with predictor
/// 4 hidden).
pub const HIDDEN_COND_SETS: [(&str, [usize; 3]); 4] = [
    ("c1", [1, 2, 3]),
    ("c2", [0, 1, 2]),
    ("c3", [0, 1, 9]),
    ("c4", [0, 8, 9]),
];

fn case_label(case: ErrorCase) -> &'static str {
    match case {
        ErrorCase::A => "a",
        ErrorCase::B => "b",
    }
}

fn filter_rhos(grid: &[f64], wanted: Option<f64>, table: &str) -> Result<Vec<f64>> {
    match wanted {
        None => Ok(grid.to_vec()),
        Some(r) => {
            if let Some(&hit) = grid.iter().find(|&&g| (g - r).abs() < 1e-9) {
                Ok(vec![hit])
            } else {
                Err(Error::InvalidInput(format!(
                    "{table} bundles rho in {grid:?}, got {r}"
                )))
            }
        }
    }
}

fn filter_cases(wanted: Option<ErrorCase>) -> Vec<ErrorCase> {
    match wanted {
        None => vec![ErrorCase::A, ErrorCase::B],
        Some(c) => vec![c],
    }
}

fn reject_filter(cond: bool, table: &str, flag: &str) -> Result<()> {
    if cond {
        Err(Error::InvalidInput(format!(
            "{table} has no {flag} parameter"
        )))
    } else {
        Ok(())
    }
}

/// Builds the runs of a bundled preset. Each run's seed derives from the
/// master seed and the run's position in the full (unfiltered) grid, so a
/// filtered rerun reproduces the corresponding slice of the full study.
pub fn table_runs(
    table: StudyTable,
    filter: &TableFilter,
    master_seed: u64,
) -> Result<Vec<StudyRun>> {
    let hard = RuleDef::Hard { c: 1.0 };
    let mut runs = Vec::new();
    match table {
        StudyTable::Table1 => {
            reject_filter(filter.rho.is_some(), "table1", "--rho")?;
            reject_filter(filter.case.is_some(), "table1", "--case")?;
            let grid = [5usize, 10, 15];
            let qs: Vec<usize> = match filter.q {
                None => grid.to_vec(),
                Some(q) if grid.contains(&q) => vec![q],
                Some(q) => {
                    return Err(Error::InvalidInput(format!(
                        "table1 bundles q in {grid:?}, got {q}"
                    )))
                }
            };
            for q in qs {
                let ordinal = grid.iter().position(|&g| g == q).unwrap() as u64;
                let seed = simgen::derive_seed(master_seed, ordinal);
                runs.push(StudyRun {
                    tag: format!("table1 q={q}"),
                    scenario: SimulationScenario::varied_q(100, 1000, q, seed)?,
                    specs: vec![
                        SpecDef::plain("melsis", Method::Melsis, hard),
                        SpecDef::union("elsis_com", hard),
                        SpecDef::plain("elsis_avg", Method::ElsisAvg, hard),
                        SpecDef::plain("elsis_max", Method::ElsisMax, hard),
                    ],
                });
            }
        }
        StudyTable::Table2 | StudyTable::Table3 => {
            let name = if table == StudyTable::Table2 {
                "table2"
            } else {
                "table3"
            };
            reject_filter(filter.q.is_some(), name, "--q")?;
            let grid: &[f64] = if table == StudyTable::Table2 {
                &[0.0, 0.5, 0.8]
            } else {
                &[0.0, 0.5]
            };
            let rhos = filter_rhos(grid, filter.rho, name)?;
            let cases = filter_cases(filter.case);
            for &rho in &rhos {
                for &case in &cases {
                    let row = grid.iter().position(|&g| (g - rho).abs() < 1e-9).unwrap();
                    let col = usize::from(case == ErrorCase::B);
                    let ordinal = (row * 2 + col) as u64;
                    let seed = simgen::derive_seed(master_seed, ordinal);
                    runs.push(StudyRun {
                        tag: format!("{name} rho={rho} case={}", case_label(case)),
                        scenario: SimulationScenario::ex41(100, 2000, rho, case, seed)?,
                        specs: vec![
                            SpecDef::plain("melsis", Method::Melsis, hard),
                            SpecDef::plain("elsis_avg", Method::ElsisAvg, hard),
                            SpecDef::plain("elsis_max", Method::ElsisMax, hard),
                        ],
                    });
                }
            }
        }
        StudyTable::Table4 => {
            reject_filter(filter.q.is_some(), "table4", "--q")?;
            let taus = [0.99, 0.98];
            let rhos = filter_rhos(&[0.0, 0.5], filter.rho, "table4")?;
            let cases = filter_cases(filter.case);
            for &rho in &rhos {
                for &case in &cases {
                    let row = usize::from((rho - 0.5).abs() < 1e-9);
                    let col = usize::from(case == ErrorCase::B);
                    let ordinal = (row * 2 + col) as u64;
                    let seed = simgen::derive_seed(master_seed, ordinal);
                    let specs = taus
                        .iter()
                        .map(|&tau| SpecDef::plain("melsis", Method::Melsis, RuleDef::Soft { tau }))
                        .collect();
                    runs.push(StudyRun {
                        tag: format!("table4 marginal rho={rho} case={}", case_label(case)),
                        scenario: SimulationScenario::ex41(100, 2000, rho, case, seed)?,
                        specs,
                    });
                }
            }
            // The conditional half ignores the rho filter: its design has
            // a fixed predictor correlation and independent noise.
            for &case in &filter_cases(filter.case) {
                let ordinal = 4 + u64::from(case == ErrorCase::B);
                let seed = simgen::derive_seed(master_seed, ordinal);
                let mut specs = Vec::new();
                for (name, cond) in HIDDEN_COND_SETS {
                    for &tau in &taus {
                        specs.push(SpecDef::conditional(
                            format!("cmelsis_{name}"),
                            cond.to_vec(),
                            RuleDef::Soft { tau },
                        ));
                    }
                }
                runs.push(StudyRun {
                    tag: format!("table4 conditional case={}", case_label(case)),
                    scenario: SimulationScenario::ex43(100, 1000, 0.0, case, seed)?,
                    specs,
                });
            }
        }
        StudyTable::Table6 => {
            reject_filter(filter.q.is_some(), "table6", "--q")?;
            reject_filter(filter.rho.is_some(), "table6", "--rho")?;
            for &case in &filter_cases(filter.case) {
                let ordinal = u64::from(case == ErrorCase::B);
                let seed = simgen::derive_seed(master_seed, ordinal);
                let mut specs = vec![SpecDef::plain("melsis", Method::Melsis, hard)];
                for (name, cond) in HIDDEN_COND_SETS {
                    specs.push(SpecDef::conditional(
                        format!("cmelsis_{name}"),
                        cond.to_vec(),
                        hard,
                    ));
                }
                runs.push(StudyRun {
                    tag: format!("table6 case={}", case_label(case)),
                    scenario: SimulationScenario::ex43(100, 1000, 0.0, case, seed)?,
                    specs,
                });
            }
        }
        StudyTable::Table8 => {
            reject_filter(filter.q.is_some(), "table8", "--q")?;
            reject_filter(filter.rho.is_some(), "table8", "--rho")?;
            if filter.case == Some(ErrorCase::B) {
                return Err(Error::InvalidInput(
                    "table8 bundles the homoscedastic case only".into(),
                ));
            }
            let seed = simgen::derive_seed(master_seed, 0);
            let mut specs = Vec::new();
            for &d1 in &[3usize, 5, 7, 9] {
                for &c in &[1.0f64, 1.5, 2.0] {
                    let d_total = screening::hard_threshold_size(100, c);
                    specs.push(SpecDef {
                        label: format!("two_step_d1_{d1}"),
                        kind: SpecKind::TwoStep {
                            d1,
                            d2: d_total - d1,
                            config: ConditioningConfig::default(),
                        },
                        rule: RuleDef::Hard { c },
                    });
                }
            }
            runs.push(StudyRun {
                tag: "table8 case=a".into(),
                scenario: SimulationScenario::ex43(100, 1000, 0.0, ErrorCase::A, seed)?,
                specs,
            });
        }
    }
    Ok(runs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_have_expected_shapes() {
        let filter = TableFilter::default();
        let t1 = table_runs(StudyTable::Table1, &filter, 3).unwrap();
        assert_eq!(t1.len(), 3);
        assert!(t1.iter().all(|r| r.specs.len() == 4));
        assert_eq!(t1[0].scenario.q, 5);
        assert_eq!(t1[2].scenario.q, 15);

        let t2 = table_runs(StudyTable::Table2, &filter, 3).unwrap();
        assert_eq!(t2.len(), 6);
        assert!(t2.iter().all(|r| r.scenario.p == 2000));

        let t3 = table_runs(StudyTable::Table3, &filter, 3).unwrap();
        assert_eq!(t3.len(), 4);

        let t4 = table_runs(StudyTable::Table4, &filter, 3).unwrap();
        assert_eq!(t4.len(), 6);
        assert_eq!(t4[4].specs.len(), 8);

        let t6 = table_runs(StudyTable::Table6, &filter, 3).unwrap();
        assert_eq!(t6.len(), 2);
        assert!(t6.iter().all(|r| r.specs.len() == 5));

        let t8 = table_runs(StudyTable::Table8, &filter, 3).unwrap();
        assert_eq!(t8.len(), 1);
        assert_eq!(t8[0].specs.len(), 12);
        let sizes: Vec<usize> = t8[0]
            .specs
            .iter()
            .map(|s| match s.kind {
                SpecKind::TwoStep { d1, d2, .. } => d1 + d2,
                _ => 0,
            })
            .collect();
        assert_eq!(&sizes[..3], &[21, 32, 42]);
    }

    #[test]
    fn filters_restrict_and_reject() {
        let mut filter = TableFilter {
            q: Some(10),
            ..TableFilter::default()
        };
        let t1 = table_runs(StudyTable::Table1, &filter, 0).unwrap();
        assert_eq!(t1.len(), 1);
        assert_eq!(t1[0].scenario.q, 10);

        filter.q = Some(7);
        assert!(table_runs(StudyTable::Table1, &filter, 0).is_err());

        let filter = TableFilter {
            rho: Some(0.8),
            ..TableFilter::default()
        };
        assert!(table_runs(StudyTable::Table3, &filter, 0).is_err());
        assert_eq!(
            table_runs(StudyTable::Table2, &filter, 0).unwrap().len(),
            2
        );

        let filter = TableFilter {
            case: Some(ErrorCase::B),
            ..TableFilter::default()
        };
        assert!(table_runs(StudyTable::Table8, &filter, 0).is_err());
    }

    #[test]
    fn filtered_run_keeps_its_grid_seed() {
        let full = table_runs(StudyTable::Table2, &TableFilter::default(), 9).unwrap();
        let filter = TableFilter {
            rho: Some(0.5),
            case: Some(ErrorCase::B),
            ..TableFilter::default()
        };
        let slice = table_runs(StudyTable::Table2, &filter, 9).unwrap();
        assert_eq!(slice.len(), 1);
        let matching = full
            .iter()
            .find(|r| (r.scenario.rho - 0.5).abs() < 1e-12 && r.scenario.error_case == ErrorCase::B)
            .unwrap();
        assert_eq!(slice[0].scenario.seed, matching.scenario.seed);
    }

    #[test]
    fn small_study_is_deterministic_and_partial_free() {
        let runs = vec![StudyRun {
            tag: "unit".into(),
            scenario: SimulationScenario::varied_q(40, 30, 2, 11).unwrap(),
            specs: vec![
                SpecDef::plain("melsis", Method::Melsis, RuleDef::Hard { c: 1.0 }),
                SpecDef::union("elsis_com", RuleDef::Hard { c: 1.0 }),
                SpecDef::conditional("cmelsis_c1", vec![0], RuleDef::Soft { tau: 0.95 }),
            ],
        }];
        let a = run_study(&runs, 3, None).unwrap();
        let b = run_study(&runs, 3, None).unwrap();
        assert!(!a.is_partial());
        assert_eq!(
            serde_json::to_string(&a.reports).unwrap(),
            serde_json::to_string(&b.reports).unwrap()
        );
        assert_eq!(a.reports.len(), 3);
        // The union row records no soft cutoff and carries union quantiles.
        let com = &a.reports[1].report;
        assert!(com.union_coverage.is_some());
        let cond = &a.reports[2].report;
        assert!(matches!(
            cond.model_size_rule,
            ThresholdRecord::Soft { tau, .. } if (tau - 0.95).abs() < 1e-12
        ));
        assert_eq!(a.reports[2].conditioning.as_deref(), Some(&[0usize][..]));
    }

    #[test]
    fn two_step_rows_aggregate() {
        let runs = vec![StudyRun {
            tag: "unit two-step".into(),
            scenario: SimulationScenario::ex43(60, 40, 0.0, ErrorCase::A, 5).unwrap(),
            specs: vec![SpecDef {
                label: "two_step_d1_3".into(),
                kind: SpecKind::TwoStep {
                    d1: 3,
                    d2: 9,
                    config: ConditioningConfig::default(),
                },
                rule: RuleDef::Hard { c: 1.0 },
            }],
        }];
        let out = run_study(&runs, 2, None).unwrap();
        assert!(out.errors.is_empty(), "{:?}", out.errors);
        let report = &out.reports[0].report;
        assert_eq!(report.replications, 2);
        // Every selected model has exactly d1 + d2 members.
        assert!(report.p_a >= 0.0);
        assert!(report.mms_quantiles[4] <= 40.0);
    }
}
