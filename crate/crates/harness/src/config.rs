//! Experiment configuration, read from TOML.
//!
//! ```toml
//! [experiment]
//! master_seed = 7
//! replications = 30
//! out_dir = "out"
//! mechanisms = ["bbs", "wta", "mw", "fk", "ic", "ps"]
//! multiple_winners = 5
//!
//! [scenario]
//! users = 200
//! arrival_rate = 2.0
//! horizon = 256
//!
//! [scenario.grid]
//! avenues = 3
//!
//! [mechanism]
//! budget = 100.0
//! routing = "per_user"
//!
//! [mechanism.prize_policy]
//! kind = "grid_search"
//! max_prizes = 10
//!
//! [sweep]
//! axis = "budget"
//! budgets = [25.0, 50.0, 100.0, 200.0, 400.0]
//! ```
//!
//! Every key is optional; missing keys take the defaults below.

use std::path::{Path, PathBuf};

use bbs_core::baselines::MechanismKind;
use bbs_core::bidding::VBarMode;
use bbs_core::mechanism::{MechanismConfig, RoutingMode, SecretarySample};
use bbs_core::scenario::ScenarioConfig;
use bbs_core::threshold::PrizePolicy;
use serde::{Deserialize, Serialize};

use crate::experiment::HarnessError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub master_seed: u64,
    pub replications: usize,
    pub out_dir: PathBuf,
    pub mechanisms: Vec<MechanismKind>,
    /// Prize count of the multiple-winners baseline.
    pub multiple_winners: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            master_seed: 1,
            replications: 30,
            out_dir: PathBuf::from("out"),
            mechanisms: MechanismKind::ALL.to_vec(),
            multiple_winners: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MechanismSection {
    pub budget: f64,
    pub initial_effort_threshold: f64,
    pub initial_min_prize: f64,
    pub threshold_branch_probability: f64,
    pub routing: RoutingMode,
    pub secretary_sample: SecretarySample,
    pub prize_policy: PrizePolicy,
    pub v_bar_mode: VBarMode,
}

impl Default for MechanismSection {
    fn default() -> Self {
        let m = MechanismConfig::default();
        MechanismSection {
            budget: m.total_budget,
            initial_effort_threshold: m.initial_effort_threshold,
            initial_min_prize: m.initial_min_prize,
            threshold_branch_probability: m.threshold_branch_probability,
            routing: m.routing,
            secretary_sample: m.secretary_sample,
            prize_policy: m.prize_policy,
            v_bar_mode: m.v_bar_mode,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    Budget,
    Lambda,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Budget => "budget",
            SweepAxis::Lambda => "lambda",
        }
    }
}

/// Inclusive arithmetic range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Range {
    pub fn points(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.stop < self.start {
            return Vec::new();
        }
        let count = ((self.stop - self.start) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|k| self.start + k as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub budgets: Vec<f64>,
    pub lambdas: Range,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            axis: SweepAxis::Budget,
            budgets: vec![25.0, 50.0, 100.0, 200.0, 400.0],
            lambdas: Range { start: 0.3, stop: 8.0, step: 0.1 },
        }
    }
}

impl SweepConfig {
    pub fn points(&self) -> Vec<f64> {
        match self.axis {
            SweepAxis::Budget => self.budgets.clone(),
            SweepAxis::Lambda => self.lambdas.points(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub scenario: ScenarioConfig,
    pub mechanism: MechanismSection,
    pub sweep: SweepConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.experiment.replications < 1 {
            return Err(HarnessError::Config("replications must be at least 1".into()));
        }
        if self.sweep.points().is_empty() {
            return Err(HarnessError::Config(format!("the {} sweep is empty", self.sweep.axis.name())));
        }
        if self.experiment.multiple_winners < 2 {
            return Err(HarnessError::Config("multiple_winners must be at least 2".into()));
        }
        self.scenario.validate()?;
        let bad_budget = self.sweep.axis == SweepAxis::Budget && self.sweep.budgets.iter().any(|b| !(*b > 0.0));
        let bad_rate = self.sweep.axis == SweepAxis::Lambda && self.sweep.points().iter().any(|l| !(*l > 0.0));
        if bad_budget || bad_rate {
            return Err(HarnessError::Config("sweep values must be positive".into()));
        }
        self.mechanism_config(self.mechanism.budget, self.scenario.arrival_rate, 0).validate()?;
        Ok(())
    }

    /// Scenario at one sweep point.
    pub fn scenario_at(&self, value: f64) -> ScenarioConfig {
        let mut s = self.scenario.clone();
        if self.sweep.axis == SweepAxis::Lambda {
            s.arrival_rate = value;
        }
        s
    }

    pub fn budget_at(&self, value: f64) -> f64 {
        match self.sweep.axis {
            SweepAxis::Budget => value,
            SweepAxis::Lambda => self.mechanism.budget,
        }
    }

    /// Bidder count each arrival assumes: `min(users, round(lambda * T))`.
    pub fn expected_bidders(&self, rate: f64) -> usize {
        let expected = (rate * self.scenario.horizon as f64).round() as usize;
        expected.min(self.scenario.users).max(1)
    }

    pub fn mechanism_config(&self, budget: f64, rate: f64, seed: u64) -> MechanismConfig {
        let m = &self.mechanism;
        MechanismConfig {
            total_budget: budget,
            horizon: self.scenario.horizon,
            initial_effort_threshold: m.initial_effort_threshold,
            initial_min_prize: m.initial_min_prize,
            threshold_branch_probability: m.threshold_branch_probability,
            routing: m.routing,
            secretary_sample: m.secretary_sample,
            prize_policy: m.prize_policy.clone(),
            ability_exponent: self.scenario.ability_exponent,
            v_bar_mode: m.v_bar_mode,
            expected_bidders: self.expected_bidders(rate),
            seed,
        }
    }
}
