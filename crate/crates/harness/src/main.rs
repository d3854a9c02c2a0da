use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbs_core::baselines::{write_outcomes_csv, MechanismKind};
use bbs_core::scenario::Scenario;
use bbs_harness::config::{ExperimentConfig, SweepAxis};
use bbs_harness::experiment::{
    ensure_writable, run_experiment, simulate, threshold_trace, write_manifest, HarnessError,
};
use bbs_harness::seeds::{child_seed, SCENARIO_TAG};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bbs", version, about = "Budgeted online incentive mechanism experiments")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
    /// TOML experiment config; defaults apply to missing keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Comma-separated mechanisms: bbs,wta,mw,fk,ic,ps.
    #[arg(long, global = true, value_delimiter = ',')]
    mechanisms: Option<Vec<String>>,
    /// Sweep axis override.
    #[arg(long, global = true)]
    sweep: Option<Axis>,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the grid as an `id,x,y` table.
    Grid,
    /// Generate one scenario and write it as TOML.
    Scenario,
    /// One replication at the first sweep point, with event and stage traces.
    Run,
    /// Every sweep point and replication, aggregated.
    Sweep,
    /// Effort-threshold series of every run.
    Trace,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Budget,
    Lambda,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.experiment.master_seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.experiment.out_dir = o.clone();
    }
    if let Some(list) = &cli.mechanisms {
        cfg.experiment.mechanisms = list
            .iter()
            .map(|m| MechanismKind::parse(m.trim()).ok_or_else(|| HarnessError::Config(format!("unknown mechanism {m:?}"))))
            .collect::<Result<_, _>>()?;
    }
    if let Some(a) = cli.sweep {
        cfg.sweep.axis = match a {
            Axis::Budget => SweepAxis::Budget,
            Axis::Lambda => SweepAxis::Lambda,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_with<F>(path: &Path, f: F) -> Result<(), HarnessError>
where
    F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn execute(cli: &Cli) -> Result<(), HarnessError> {
    let cfg = load(cli)?;
    let out = cfg.experiment.out_dir.clone();
    ensure_writable(&out)?;
    match cli.verb {
        Verb::Grid => {
            let grid = cfg.scenario.grid.build()?;
            write_with(&out.join("grid.csv"), |w| grid.write_table(w).map_err(std::io::Error::other))?;
            write_manifest(&cfg, &out, &["grid.csv"])?;
            println!("{} points", grid.len());
        }
        Verb::Scenario => {
            let value = cfg.sweep.points()[0];
            let seed = child_seed(cfg.experiment.master_seed, 0, 0, SCENARIO_TAG);
            let s = Scenario::generate(&cfg.scenario_at(value), seed)?;
            fs::write(out.join("scenario.toml"), s.to_toml()?)?;
            write_manifest(&cfg, &out, &["scenario.toml"])?;
            println!("{} users", s.users.len());
        }
        Verb::Run => {
            let field = Scenario::field_for(&cfg.scenario)?;
            let rep = simulate(&cfg, 0, 0, field)?;
            let mut files = vec!["outcomes.csv"];
            write_with(&out.join("outcomes.csv"), |w| write_outcomes_csv(&rep.outcomes, w))?;
            if let Some(b) = &rep.bbs {
                write_with(&out.join("events.csv"), |w| b.write_events(w))?;
                write_with(&out.join("stages.csv"), |w| b.write_stages(w))?;
                files.extend(["events.csv", "stages.csv"]);
            }
            write_manifest(&cfg, &out, &files)?;
            for o in &rep.outcomes {
                println!("{} utility={} paid={:.6} winners={}", o.mechanism, o.total_utility, o.total_paid(), o.winners.len());
            }
        }
        Verb::Sweep => {
            let res = run_experiment(&cfg, &out)?;
            println!("{} rows", res.rows.len());
        }
        Verb::Trace => {
            let series = threshold_trace(&cfg)?;
            let mut s = String::from("sweep_value,replication,stage,e_star\n");
            let mut stab = String::from("sweep_value,replication,stabilization\n");
            for t in &series {
                for (k, e) in t.series.iter().enumerate() {
                    s.push_str(&format!("{:.4},{},{},{:.9}\n", t.sweep_value, t.replication, k, e));
                }
                let v = t.stabilization.map_or_else(|| "NA".to_string(), |x| format!("{x:.9}"));
                stab.push_str(&format!("{:.4},{},{}\n", t.sweep_value, t.replication, v));
            }
            fs::write(out.join("trace.csv"), s)?;
            fs::write(out.join("stabilization.csv"), stab)?;
            write_manifest(&cfg, &out, &["trace.csv", "stabilization.csv"])?;
            println!("{} runs", series.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{line}");
            ExitCode::FAILURE
        }
    }
}
