//! Replications, sweeps and their CSV outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use bbs_core::baselines::{
    effort_cost, multiple_winners, offline_proportional_share, offline_reverse_auction, winner_take_all,
    BaselineOutcome, ContestParams, MechanismKind, OfflineSubmission, ReverseAuction,
};
use bbs_core::coverage::CoverageError;
use bbs_core::mechanism::{run_bbs, Arrival, MechanismError, MechanismOutcome, StageRecord};
use bbs_core::scenario::{Scenario, ScenarioError, SensingField};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::ExperimentConfig;
use crate::seeds::{child_seed, SCENARIO_TAG};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Mechanism(#[from] MechanismError),
    #[error(transparent)]
    Coverage(#[from] CoverageError),
}

impl HarnessError {
    /// Short machine-readable class.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Io(_) => "io",
            HarnessError::Scenario(_) => "scenario",
            HarnessError::Mechanism(_) => "mechanism",
            HarnessError::Coverage(_) => "coverage",
        }
    }
}

fn mechanism_tag(kind: MechanismKind) -> u8 {
    1 + MechanismKind::ALL.iter().position(|&k| k == kind).expect("known mechanism") as u8
}

/// Metrics of one mechanism in one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub mechanism: MechanismKind,
    pub utility: f64,
    pub participation: f64,
    pub payments: f64,
    /// Mean error over winners; absent without winners.
    pub quality_error: Option<f64>,
    /// Last learned effort threshold; BBS only.
    pub final_e_star: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub sweep_index: usize,
    pub sweep_value: f64,
    pub replication: usize,
    pub scenario_seed: u64,
    pub metrics: Vec<RunMetrics>,
    pub stages: Vec<StageRecord>,
}

impl RunRecord {
    pub fn metric(&self, kind: MechanismKind) -> Option<&RunMetrics> {
        self.metrics.iter().find(|m| m.mechanism == kind)
    }
}

/// Mean of `errors`; absent when empty.
pub fn mean_error(errors: &[f64]) -> Option<f64> {
    (!errors.is_empty()).then(|| errors.iter().sum::<f64>() / errors.len() as f64)
}

/// Mean winner quality error of each outcome under the scenario's error model.
pub fn quality_error_report(outcomes: &[BaselineOutcome], scenario: &Scenario) -> Vec<(MechanismKind, Option<f64>)> {
    outcomes
        .iter()
        .map(|o| {
            let errors: Vec<f64> = o
                .winners
                .iter()
                .map(|u| scenario.quality_error(*u, o.efforts.get(u).copied().unwrap_or(0.0)))
                .collect();
            (o.mechanism, mean_error(&errors))
        })
        .collect()
}

/// Every outcome of one replication, before reduction to metrics.
#[derive(Clone, Debug)]
pub struct Replication {
    pub scenario: Scenario,
    pub bbs: Option<MechanismOutcome>,
    pub outcomes: Vec<BaselineOutcome>,
}

/// Runs the selected mechanisms on one generated world.
pub fn simulate(
    cfg: &ExperimentConfig,
    sweep_index: usize,
    replication: usize,
    field: Arc<SensingField>,
) -> Result<Replication, HarnessError> {
    let points = cfg.sweep.points();
    let value = points[sweep_index];
    let master = cfg.experiment.master_seed;
    let (s, r) = (sweep_index as u32, replication as u32);
    let scfg = cfg.scenario_at(value);
    let scenario = Scenario::generate_in(&scfg, child_seed(master, s, r, SCENARIO_TAG), field)?;
    let arrivals = scenario.arrivals();
    let grid = scenario.grid();
    let budget = cfg.budget_at(value);
    let wanted = |k: MechanismKind| cfg.experiment.mechanisms.contains(&k);

    let mcfg = cfg.mechanism_config(budget, scfg.arrival_rate, child_seed(master, s, r, mechanism_tag(MechanismKind::Bbs)));
    let offline_needed = [MechanismKind::FullKnowledge, MechanismKind::IncentiveCompatible, MechanismKind::ProportionalShare]
        .into_iter()
        .any(wanted);
    // the offline mechanisms reuse the submissions made under BBS
    let bbs = if wanted(MechanismKind::Bbs) || offline_needed {
        Some(run_bbs(&arrivals, &mcfg, grid, &scenario)?)
    } else {
        None
    };

    let mut outcomes = Vec::new();
    if let Some(b) = bbs.as_ref().filter(|_| wanted(MechanismKind::Bbs)) {
        outcomes.push(BaselineOutcome::from_bbs(b));
    }
    let params = ContestParams { budget, ability_exponent: scfg.ability_exponent, v_bar_mode: cfg.mechanism.v_bar_mode };
    // contests also run when only the full-knowledge menu needs their efforts
    let mut contests = Vec::new();
    if wanted(MechanismKind::WinnerTakeAll) || wanted(MechanismKind::FullKnowledge) {
        contests.push(winner_take_all(&arrivals, &params, grid, &scenario)?);
    }
    if wanted(MechanismKind::MultipleWinners) || wanted(MechanismKind::FullKnowledge) {
        contests.push(multiple_winners(&arrivals, cfg.experiment.multiple_winners, &params, grid, &scenario)?);
    }
    outcomes.extend(contests.iter().filter(|o| wanted(o.mechanism)).cloned());

    if let Some(b) = bbs.as_ref().filter(|_| offline_needed) {
        let submission = |a: &Arrival, effort: f64| OfflineSubmission {
            user: a.user,
            profile: scenario.profile(a.user, effort),
            effort,
            cost: effort_cost(effort, a.ability),
        };
        let subs: Vec<OfflineSubmission> = arrivals.iter().map(|a| submission(a, b.efforts[&a.user])).collect();
        let m = grid.len();
        if wanted(MechanismKind::FullKnowledge) {
            // every effort a user exerted anywhere in this world is on the menu
            let mut menu = subs.clone();
            for a in &arrivals {
                let mut seen = vec![b.efforts[&a.user]];
                for o in &contests {
                    let e = o.efforts[&a.user];
                    if !seen.contains(&e) {
                        seen.push(e);
                        menu.push(submission(a, e));
                    }
                }
            }
            outcomes.push(offline_reverse_auction(&menu, m, budget, ReverseAuction::FullKnowledge, &mcfg.prize_policy)?);
        }
        if wanted(MechanismKind::IncentiveCompatible) {
            outcomes.push(offline_reverse_auction(
                &subs,
                m,
                budget,
                ReverseAuction::IncentiveCompatible,
                &mcfg.prize_policy,
            )?);
        }
        if wanted(MechanismKind::ProportionalShare) {
            outcomes.push(offline_proportional_share(&subs, m, budget));
        }
    }
    Ok(Replication { scenario, bbs, outcomes })
}

/// One replication at one sweep point, reduced to metrics.
pub fn run_replication(
    cfg: &ExperimentConfig,
    sweep_index: usize,
    replication: usize,
    field: Arc<SensingField>,
) -> Result<RunRecord, HarnessError> {
    let rep = simulate(cfg, sweep_index, replication, field)?;
    let errors = quality_error_report(&rep.outcomes, &rep.scenario);
    let final_e_star = rep.bbs.as_ref().and_then(|b| b.threshold_series().last().copied());
    let metrics = rep
        .outcomes
        .iter()
        .zip(errors)
        .map(|(o, (_, err))| RunMetrics {
            mechanism: o.mechanism,
            utility: o.total_utility as f64,
            participation: o.participation() as f64,
            payments: o.total_paid(),
            quality_error: err,
            final_e_star: if o.mechanism == MechanismKind::Bbs { final_e_star } else { None },
        })
        .collect();
    Ok(RunRecord {
        sweep_index,
        sweep_value: cfg.sweep.points()[sweep_index],
        replication,
        scenario_seed: rep.scenario.seed,
        metrics,
        stages: rep.bbs.map(|b| b.stages).unwrap_or_default(),
    })
}

/// Mean and sample standard deviation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Some(Summary { mean, std: var.sqrt() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub sweep_value: f64,
    pub mechanism: MechanismKind,
    pub runs: usize,
    pub utility: Summary,
    pub participation: Summary,
    pub payments: Summary,
    pub quality_error: Option<Summary>,
    pub final_e_star: Option<Summary>,
}

pub const METRIC_HEADER: &str = "sweep_value,mechanism,runs,utility_mean,utility_std,participation_mean,participation_std,payments_mean,payments_std,quality_error_mean,quality_error_std,final_e_star_mean,final_e_star_std";

fn opt(s: Option<Summary>) -> String {
    match s {
        Some(s) => format!("{:.6},{:.6}", s.mean, s.std),
        None => "NA,NA".to_string(),
    }
}

impl MetricRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{:.4},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
            self.sweep_value,
            self.mechanism,
            self.runs,
            self.utility.mean,
            self.utility.std,
            self.participation.mean,
            self.participation.std,
            self.payments.mean,
            self.payments.std,
            opt(self.quality_error),
            opt(self.final_e_star),
        )
    }
}

/// Groups runs by sweep point and mechanism, in sweep then mechanism order.
pub fn aggregate(records: &[RunRecord]) -> Vec<MetricRow> {
    let mut groups: BTreeMap<(usize, MechanismKind), (f64, Vec<&RunMetrics>)> = BTreeMap::new();
    for r in records {
        for m in &r.metrics {
            groups.entry((r.sweep_index, m.mechanism)).or_insert((r.sweep_value, Vec::new())).1.push(m);
        }
    }
    groups
        .into_iter()
        .map(|((_, mechanism), (value, ms))| {
            let col = |f: fn(&RunMetrics) -> Option<f64>| ms.iter().filter_map(|m| f(m)).collect::<Vec<f64>>();
            MetricRow {
                sweep_value: value,
                mechanism,
                runs: ms.len(),
                utility: Summary::of(&col(|m| Some(m.utility))).expect("nonempty group"),
                participation: Summary::of(&col(|m| Some(m.participation))).expect("nonempty group"),
                payments: Summary::of(&col(|m| Some(m.payments))).expect("nonempty group"),
                quality_error: Summary::of(&col(|m| m.quality_error)),
                final_e_star: Summary::of(&col(|m| m.final_e_star)),
            }
        })
        .collect()
}

/// Fails early when `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::File::create(&probe)?.write_all(b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

/// Runs every (sweep point, replication) in parallel; the result is in
/// (sweep, replication) order.
pub fn run_records(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>, HarnessError> {
    cfg.validate()?;
    let field = Scenario::field_for(&cfg.scenario)?;
    let tasks: Vec<(usize, usize)> = (0..cfg.sweep.points().len())
        .flat_map(|s| (0..cfg.experiment.replications).map(move |r| (s, r)))
        .collect();
    tasks.par_iter().map(|&(s, r)| run_replication(cfg, s, r, field.clone())).collect()
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<MetricRow>,
    pub records: Vec<RunRecord>,
}

/// Full sweep: writes `metrics.csv`, `runs.csv`, `thresholds.csv` and
/// `manifest.json` into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    ensure_writable(out)?;
    let records = run_records(cfg)?;
    let rows = aggregate(&records);

    let mut metrics = String::new();
    writeln!(metrics, "{METRIC_HEADER}").unwrap();
    for r in &rows {
        writeln!(metrics, "{}", r.csv_line()).unwrap();
    }
    fs::write(out.join("metrics.csv"), metrics)?;
    fs::write(out.join("runs.csv"), runs_csv(&records))?;
    fs::write(out.join("thresholds.csv"), thresholds_csv(&records))?;
    write_manifest(cfg, out, &["metrics.csv", "runs.csv", "thresholds.csv"])?;
    Ok(ExperimentOutput { rows, records })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("sweep_value,replication,scenario_seed,mechanism,utility,participation,payments,quality_error,final_e_star\n");
    for r in records {
        for m in &r.metrics {
            writeln!(
                s,
                "{:.4},{},{},{},{:.0},{:.0},{:.6},{},{}",
                r.sweep_value,
                r.replication,
                r.scenario_seed,
                m.mechanism,
                m.utility,
                m.participation,
                m.payments,
                fmt_opt(m.quality_error),
                fmt_opt(m.final_e_star)
            )
            .unwrap();
        }
    }
    s
}

pub fn thresholds_csv(records: &[RunRecord]) -> String {
    let mut s = String::from("sweep_value,replication,stage,time,e_star,m_star,winners,utility,kept_previous\n");
    for r in records {
        for st in &r.stages {
            writeln!(
                s,
                "{:.4},{},{},{},{:.9},{:.9},{},{},{}",
                r.sweep_value,
                r.replication,
                st.stage,
                st.time,
                st.threshold.effort_threshold,
                st.threshold.min_prize,
                st.winners,
                st.utility,
                st.kept_previous as u8
            )
            .unwrap();
        }
    }
    s
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    master_seed: u64,
    seed_scheme: &'static str,
    rng: &'static str,
    files: &'a [&'a str],
    config: &'a ExperimentConfig,
}

pub fn write_manifest(cfg: &ExperimentConfig, out: &Path, files: &[&str]) -> Result<(), HarnessError> {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: bbs_core::VERSION,
        master_seed: cfg.experiment.master_seed,
        seed_scheme: "splitmix64(splitmix64(master) ^ (sweep << 32 | replication << 8 | tag))",
        rng: "ChaCha8",
        files,
        config: cfg,
    };
    let text = serde_json::to_string_pretty(&m).map_err(|e| HarnessError::Config(e.to_string()))?;
    fs::write(out.join("manifest.json"), text + "\n")?;
    Ok(())
}

/// Per-run e* series with its last-two-stage relative change.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ThresholdSeries {
    pub sweep_value: f64,
    pub replication: usize,
    pub series: Vec<f64>,
    pub stabilization: Option<f64>,
}

/// `|e_k - e_{k-1}| / e_{k-1}` over the last two stages.
pub fn stabilization(series: &[f64]) -> Option<f64> {
    match series {
        [.., prev, last] if *prev > 0.0 => Some((last - prev).abs() / prev),
        _ => None,
    }
}

/// Runs BBS only and returns the e* series of every run.
pub fn threshold_trace(cfg: &ExperimentConfig) -> Result<Vec<ThresholdSeries>, HarnessError> {
    let mut only_bbs = cfg.clone();
    only_bbs.experiment.mechanisms = vec![MechanismKind::Bbs];
    let records = run_records(&only_bbs)?;
    Ok(records
        .into_iter()
        .map(|r| {
            let series: Vec<f64> = r.stages.iter().map(|s| s.threshold.effort_threshold).collect();
            ThresholdSeries {
                sweep_value: r.sweep_value,
                replication: r.replication,
                stabilization: stabilization(&series),
                series,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_error_examples() {
        assert_eq!(mean_error(&[0.0, 0.0, 0.0]), Some(0.0));
        assert_eq!(mean_error(&[0.4]), Some(0.4));
        assert_eq!(mean_error(&[]), None);
    }

    #[test]
    fn summary_std() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[7.0]).unwrap().std, 0.0);
    }

    #[test]
    fn stabilization_metric() {
        assert_eq!(stabilization(&[0.5]), None);
        assert!((stabilization(&[1.0, 2.0, 2.2]).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(stabilization(&[0.0, 3.0]), None);
    }
}
