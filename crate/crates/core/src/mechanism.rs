//! The budgeted behavior-based online mechanism.
//!
//! Time runs over `1..=T` split into doubling stages. The first stage gets
//! `B / 2^k` of the budget with `k = floor(log2 T)`; at every stage end the
//! threshold `(e*, M*)` is re-learned from all sampled submissions and the
//! stage budget and stage end double. Each arrival is routed either to the
//! threshold branch, where it is paid `e* * U_i(S')` when that lies between
//! `M*` and the unspent stage budget and always joins the sample, or to a
//! Dynkin-style secretary branch that may hand the remaining budget to a
//! single standout user.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{AbilityDistribution, BidError, BidHistory, Contest, PrizeStructure, VBarMode};
use crate::coverage::{AoiGrid, CoveredSet, SensingProfile, UserId};
use crate::threshold::{
    get_effort_threshold, PrizePolicy, SampleEntry, SamplePool, ThresholdError, ThresholdOutcome, ThresholdState,
};

#[derive(Debug, Error)]
pub enum MechanismError {
    #[error("invalid mechanism config: {0}")]
    Config(String),
    #[error("user {user} arrives at step {time}, after the horizon {horizon}")]
    ArrivalAfterHorizon { user: UserId, time: u64, horizon: u64 },
    #[error("arrivals are not sorted by time at user {0}")]
    Unsorted(UserId),
    #[error(transparent)]
    Bid(#[from] BidError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error("trace output: {0}")]
    Io(#[from] std::io::Error),
}

/// Turns an effort into the data a user submits.
pub trait SubmissionModel {
    fn realize(&self, user: UserId, effort: f64) -> SensingProfile;
}

impl<F: Fn(UserId, f64) -> SensingProfile> SubmissionModel for F {
    fn realize(&self, user: UserId, effort: f64) -> SensingProfile {
        self(user, effort)
    }
}

impl SubmissionModel for crate::scenario::Scenario {
    fn realize(&self, user: UserId, effort: f64) -> SensingProfile {
        self.profile(user, effort)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub user: UserId,
    pub time: u64,
    pub ability: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    /// Independent coin per arrival.
    #[default]
    PerUser,
    /// One coin for the whole run.
    PerRun,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecretarySample {
    /// Reject the first `floor(expected / e)` secretary arrivals.
    #[default]
    OneOverE,
    /// Reject every secretary arrival up to the first stage boundary.
    FirstStage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Threshold,
    Secretary,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Threshold => "threshold",
            Branch::Secretary => "secretary",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MechanismConfig {
    pub total_budget: f64,
    pub horizon: u64,
    pub initial_effort_threshold: f64,
    pub initial_min_prize: f64,
    pub threshold_branch_probability: f64,
    pub routing: RoutingMode,
    pub secretary_sample: SecretarySample,
    pub prize_policy: PrizePolicy,
    pub ability_exponent: f64,
    pub v_bar_mode: VBarMode,
    /// Bidder count `n` each arrival assumes; usually the expected number of arrivals.
    pub expected_bidders: usize,
    pub seed: u64,
}

impl Default for MechanismConfig {
    fn default() -> Self {
        MechanismConfig {
            total_budget: 100.0,
            horizon: 256,
            initial_effort_threshold: 0.1,
            initial_min_prize: 0.1,
            threshold_branch_probability: 1.0 / 3.0,
            routing: RoutingMode::PerUser,
            secretary_sample: SecretarySample::OneOverE,
            prize_policy: PrizePolicy::default(),
            ability_exponent: 0.5,
            v_bar_mode: VBarMode::FixedPoint,
            expected_bidders: 200,
            seed: 0,
        }
    }
}

impl MechanismConfig {
    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |m: String| Err(MechanismError::Config(m));
        if !(self.total_budget > 0.0) || !self.total_budget.is_finite() {
            return bad(format!("budget {} must be positive", self.total_budget));
        }
        if self.horizon < 1 {
            return bad("horizon must be at least 1".into());
        }
        let p = self.threshold_branch_probability;
        if !(p > 0.0 && p <= 1.0) {
            return bad(format!("threshold branch probability {p} outside (0, 1]"));
        }
        if !(self.initial_effort_threshold > 0.0) || !(self.initial_min_prize >= 0.0) {
            return bad("initial threshold must be positive".into());
        }
        AbilityDistribution::new(self.ability_exponent)?;
        Ok(())
    }

    /// Number of doublings `floor(log2 T)`.
    pub fn doublings(&self) -> u32 {
        63 - self.horizon.max(1).leading_zeros()
    }

    pub fn initial_stage_budget(&self) -> f64 {
        self.total_budget / (1u64 << self.doublings()) as f64
    }

    pub fn initial_stage_end(&self) -> f64 {
        self.horizon as f64 / (1u64 << self.doublings()) as f64
    }

    /// Time steps at which the threshold is recomputed.
    pub fn stage_boundaries(&self) -> Vec<u64> {
        let mut end = self.initial_stage_end();
        (0..=self.doublings())
            .map(|_| {
                let t = end.floor() as u64;
                end *= 2.0;
                t
            })
            .collect()
    }
}

/// Assigns arrivals to branches.
#[derive(Clone, Debug)]
pub struct Router {
    mode: RoutingMode,
    probability: f64,
    fixed: Option<Branch>,
}

impl Router {
    pub fn new<R: Rng + ?Sized>(mode: RoutingMode, probability: f64, rng: &mut R) -> Self {
        let fixed = match mode {
            RoutingMode::PerRun => Some(coin(probability, rng)),
            RoutingMode::PerUser => None,
        };
        Router { mode, probability, fixed }
    }

    pub fn mode(&self) -> RoutingMode {
        self.mode
    }

    pub fn route<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Branch {
        self.fixed.unwrap_or_else(|| coin(self.probability, rng))
    }
}

fn coin<R: Rng + ?Sized>(p: f64, rng: &mut R) -> Branch {
    if rng.random::<f64>() < p {
        Branch::Threshold
    } else {
        Branch::Secretary
    }
}

/// Classical stopping rule: watch `sample_size` values, then accept the
/// first value strictly above the best one watched.
#[derive(Clone, Debug)]
pub struct DynkinRule {
    sample_size: usize,
    seen: usize,
    best: Option<f64>,
    selected: bool,
}

impl DynkinRule {
    pub fn new(sample_size: usize) -> Self {
        DynkinRule { sample_size, seen: 0, best: None, selected: false }
    }

    pub fn in_sample_phase(&self) -> bool {
        self.seen < self.sample_size
    }

    /// Ends the sample phase early (stage-aligned sampling).
    pub fn close_sample(&mut self) {
        self.sample_size = self.seen;
    }

    pub fn has_selected(&self) -> bool {
        self.selected
    }

    /// Feeds one value; true when it is the selection.
    pub fn observe(&mut self, value: f64) -> bool {
        if self.selected {
            return false;
        }
        let sampling = self.in_sample_phase();
        self.seen += 1;
        if sampling {
            self.best = Some(self.best.map_or(value, |b| b.max(value)));
            return false;
        }
        if self.best.is_none_or(|b| value > b) {
            self.selected = true;
            return true;
        }
        false
    }
}

/// Runs the stopping rule over `values`; returns the selected user and its index.
pub fn secretary_branch(values: &[(UserId, f64)], sample_size: usize) -> Option<(UserId, usize)> {
    let mut rule = DynkinRule::new(sample_size);
    values.iter().enumerate().find_map(|(k, &(u, v))| rule.observe(v).then_some((u, k)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub index: usize,
    pub stage_budget: f64,
    pub stage_end: f64,
    pub spent: f64,
    pub threshold: ThresholdState,
    pub prizes: PrizeStructure,
}

/// What happened at one stage boundary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub time: u64,
    pub sample_size: usize,
    /// Budget handed to the threshold learner.
    pub threshold_budget: f64,
    pub threshold: ThresholdState,
    pub winners: usize,
    pub utility: usize,
    /// True when the sample could not support a new threshold.
    pub kept_previous: bool,
}

/// Re-learns the threshold at a stage end and doubles the stage.
///
/// The learner gets `2B'`; neither it nor the next stage budget exceed the
/// total budget.
pub fn stage_boundary(
    state: &StageState,
    pool: &SamplePool,
    total_budget: f64,
    policy: &PrizePolicy,
) -> Result<(StageState, StageRecord), MechanismError> {
    let budget = (2.0 * state.stage_budget).min(total_budget);
    let outcome = get_effort_threshold(pool, budget, policy)?;
    let (threshold, prizes, winners, utility, kept) = match outcome {
        ThresholdOutcome::Updated(c) => (c.state, c.prizes, c.winners.len(), c.utility, false),
        ThresholdOutcome::KeepPrevious => (state.threshold, state.prizes.clone(), 0, 0, true),
    };
    let next = StageState {
        index: state.index + 1,
        stage_budget: budget,
        stage_end: state.stage_end * 2.0,
        spent: state.spent,
        threshold,
        prizes,
    };
    let record = StageRecord {
        stage: state.index,
        time: state.stage_end.floor() as u64,
        sample_size: pool.len(),
        threshold_budget: budget,
        threshold,
        winners,
        utility,
        kept_previous: kept,
    };
    Ok((next, record))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    /// Threshold-branch submission, paid or not.
    Submit,
    /// Secretary-branch arrival that was not selected.
    Observe,
    /// Secretary selection.
    Select,
    /// Stage boundary.
    Stage,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventKind::Submit => "submit",
            EventKind::Observe => "observe",
            EventKind::Select => "select",
            EventKind::Stage => "stage",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: u64,
    pub kind: EventKind,
    pub user: Option<UserId>,
    pub branch: Option<Branch>,
    pub effort: f64,
    pub marginal_utility: usize,
    pub payment: f64,
    /// Global budget left after the event.
    pub budget_remaining: f64,
    /// Stage budget in force at the event.
    pub stage_budget: f64,
    /// Total paid before the event.
    pub spent_before: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SecretaryRecord {
    pub user: UserId,
    pub payment: f64,
    pub time: u64,
    pub value: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MechanismOutcome {
    pub payments: BTreeMap<UserId, f64>,
    pub efforts: BTreeMap<UserId, f64>,
    pub branches: BTreeMap<UserId, Branch>,
    /// Paid users in payment order.
    pub winners: Vec<UserId>,
    /// Coverage of the paid users.
    pub total_utility: usize,
    /// Coverage of the threshold-branch sample.
    pub sample_utility: usize,
    pub total_paid: f64,
    pub stages: Vec<StageRecord>,
    pub secretary: Option<SecretaryRecord>,
    pub events: Vec<Event>,
    /// Arrivals whose expected-prize iteration did not converge.
    pub unconverged_bids: usize,
}

impl MechanismOutcome {
    /// Number of arrivals that exerted positive effort.
    pub fn participation(&self) -> usize {
        self.efforts.values().filter(|&&e| e > 0.0).count()
    }

    /// `e*` after each stage boundary.
    pub fn threshold_series(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.threshold.effort_threshold).collect()
    }

    /// Writes `t,event_kind,user,branch,effort,marginal_utility,payment,budget_remaining`.
    pub fn write_events<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,event_kind,user,branch,effort,marginal_utility,payment,budget_remaining")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{},{:.9},{},{:.9},{:.9}",
                e.time,
                e.kind,
                e.user.map(|u| u.to_string()).unwrap_or_default(),
                e.branch.map(|b| b.to_string()).unwrap_or_default(),
                e.effort,
                e.marginal_utility,
                e.payment,
                e.budget_remaining,
            )?;
        }
        Ok(())
    }

    /// Writes `stage,e_star,m_star,winners,utility`.
    pub fn write_stages<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "stage,e_star,m_star,winners,utility")?;
        for s in &self.stages {
            writeln!(
                w,
                "{},{:.9},{:.9},{},{}",
                s.stage, s.threshold.effort_threshold, s.threshold.min_prize, s.winners, s.utility
            )?;
        }
        Ok(())
    }
}

const ROUTING_STREAM: u64 = 11;

/// Largest payment `p <= cap - spent` with `spent + p <= cap` in floating point.
fn fit_remaining(spent: f64, cap: f64) -> f64 {
    let mut p = (cap - spent).max(0.0);
    while p > 0.0 && spent + p > cap {
        p = f64::from_bits(p.to_bits() - 1);
    }
    p
}

/// Runs the online mechanism over `arrivals`, which must be sorted by time.
pub fn run_bbs<M: SubmissionModel + ?Sized>(
    arrivals: &[Arrival],
    config: &MechanismConfig,
    grid: &AoiGrid,
    model: &M,
) -> Result<MechanismOutcome, MechanismError> {
    config.validate()?;
    for (k, a) in arrivals.iter().enumerate() {
        if a.time > config.horizon {
            return Err(MechanismError::ArrivalAfterHorizon { user: a.user, time: a.time, horizon: config.horizon });
        }
        if k > 0 && arrivals[k - 1].time > a.time {
            return Err(MechanismError::Unsorted(a.user));
        }
    }

    let total = config.total_budget;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(ROUTING_STREAM);
    let mut router = Router::new(config.routing, config.threshold_branch_probability, &mut rng);
    let dist = AbilityDistribution::new(config.ability_exponent)?;
    let bidders = config.expected_bidders.max(1);

    let secretary_expected = match (config.routing, router.fixed) {
        (RoutingMode::PerRun, Some(Branch::Secretary)) => bidders as f64,
        (RoutingMode::PerRun, _) => 0.0,
        (RoutingMode::PerUser, _) => bidders as f64 * (1.0 - config.threshold_branch_probability),
    };
    let mut dynkin = match config.secretary_sample {
        SecretarySample::OneOverE => {
            DynkinRule::new(((secretary_expected / std::f64::consts::E).floor() as usize).max(1))
        }
        SecretarySample::FirstStage => DynkinRule::new(usize::MAX),
    };
    let first_boundary = config.initial_stage_end().floor() as u64;

    let initial_budget = config.initial_stage_budget();
    let mut state = StageState {
        index: 0,
        stage_budget: initial_budget,
        stage_end: config.initial_stage_end(),
        spent: 0.0,
        threshold: ThresholdState {
            effort_threshold: config.initial_effort_threshold,
            min_prize: config.initial_min_prize,
        },
        prizes: PrizeStructure::winner_take_all(initial_budget)?,
    };

    let mut pool = SamplePool::new(grid.len());
    let mut sampled = CoveredSet::new(grid.len());
    let mut paid_cover = CoveredSet::new(grid.len());
    let mut history = BidHistory::new();
    let mut out = MechanismOutcome {
        payments: BTreeMap::new(),
        efforts: BTreeMap::new(),
        branches: BTreeMap::new(),
        winners: Vec::new(),
        total_utility: 0,
        sample_utility: 0,
        total_paid: 0.0,
        stages: Vec::new(),
        secretary: None,
        events: Vec::new(),
        unconverged_bids: 0,
    };

    let mut next = 0;
    for t in 1..=config.horizon {
        if config.secretary_sample == SecretarySample::FirstStage && t == first_boundary + 1 {
            dynkin.close_sample();
        }
        while next < arrivals.len() && arrivals[next].time == t {
            let a = arrivals[next];
            next += 1;
            let branch = router.route(&mut rng);
            let contest = Contest {
                dist,
                prizes: state.prizes.clone(),
                bidders,
                v_bar_mode: config.v_bar_mode,
            };
            let bid = contest.bid(history.len() + 1, a.ability, &history);
            if !bid.converged {
                out.unconverged_bids += 1;
            }
            history.push(a.user, bid.effort);
            out.efforts.insert(a.user, bid.effort);
            out.branches.insert(a.user, branch);
            let profile = model.realize(a.user, bid.effort);
            let marginal = sampled.marginal(&profile);
            let spent_before = state.spent;

            match branch {
                Branch::Threshold => {
                    let offer = state.threshold.effort_threshold * marginal as f64;
                    let cap = state.stage_budget.min(total);
                    let fits = offer <= cap - state.spent && state.spent + offer <= cap;
                    let payment = if marginal > 0 && state.threshold.min_prize <= offer && fits {
                        offer
                    } else {
                        0.0
                    };
                    if payment > 0.0 {
                        state.spent += payment;
                        out.payments.insert(a.user, payment);
                        out.winners.push(a.user);
                        paid_cover.insert(&profile);
                    }
                    sampled.insert(&profile);
                    pool.push(SampleEntry { user: a.user, profile, effort: bid.effort })?;
                    out.events.push(Event {
                        time: t,
                        kind: EventKind::Submit,
                        user: Some(a.user),
                        branch: Some(branch),
                        effort: bid.effort,
                        marginal_utility: marginal,
                        payment,
                        budget_remaining: total - state.spent,
                        stage_budget: state.stage_budget,
                        spent_before,
                    });
                }
                Branch::Secretary => {
                    let selected = dynkin.observe(marginal as f64);
                    let payment = if selected { fit_remaining(state.spent, total) } else { 0.0 };
                    if selected {
                        state.spent += payment;
                        if payment > 0.0 {
                            out.payments.insert(a.user, payment);
                            out.winners.push(a.user);
                            paid_cover.insert(&profile);
                        }
                        out.secretary = Some(SecretaryRecord { user: a.user, payment, time: t, value: marginal });
                    }
                    out.events.push(Event {
                        time: t,
                        kind: if selected { EventKind::Select } else { EventKind::Observe },
                        user: Some(a.user),
                        branch: Some(branch),
                        effort: bid.effort,
                        marginal_utility: marginal,
                        payment,
                        budget_remaining: total - state.spent,
                        stage_budget: state.stage_budget,
                        spent_before,
                    });
                }
            }
        }

        if t == state.stage_end.floor() as u64 {
            let (next_state, record) = stage_boundary(&state, &pool, total, &config.prize_policy)?;
            out.events.push(Event {
                time: t,
                kind: EventKind::Stage,
                user: None,
                branch: None,
                effort: 0.0,
                marginal_utility: record.utility,
                payment: 0.0,
                budget_remaining: total - state.spent,
                stage_budget: next_state.stage_budget,
                spent_before: state.spent,
            });
            out.stages.push(record);
            state = next_state;
        }
    }

    out.total_paid = state.spent;
    out.total_utility = paid_cover.count();
    out.sample_utility = sampled.count();
    Ok(out)
}
