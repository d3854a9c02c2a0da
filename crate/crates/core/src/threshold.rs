//! Effort-threshold learning from a sample of submissions.
//!
//! Sampled users are ranked greedily by marginal coverage per prize and
//! admitted under a proportional-share budget bound. The admitted set `J`
//! fixes the payment rate `e* = B' / U(J)` and the minimal prize
//! `M* = M_L` that gate later online payments.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bidding::{BidError, PrizeStructure};
use crate::coverage::{CoveredSet, SensingProfile, UserId};

#[derive(Debug, Error, PartialEq)]
pub enum ThresholdError {
    #[error("budget must be positive, got {0}")]
    InvalidBudget(f64),
    #[error("user {0} appears twice in the sample")]
    DuplicateUser(UserId),
    #[error("invalid prize policy: {0}")]
    Policy(String),
    #[error(transparent)]
    Prizes(#[from] BidError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub user: UserId,
    pub profile: SensingProfile,
    pub effort: f64,
}

/// Submissions gathered so far, over a grid of `universe` points.
#[derive(Clone, Debug, Default)]
pub struct SamplePool {
    entries: Vec<SampleEntry>,
    ids: HashSet<UserId>,
    universe: usize,
}

impl SamplePool {
    pub fn new(universe: usize) -> Self {
        SamplePool { entries: Vec::new(), ids: HashSet::new(), universe }
    }

    pub fn push(&mut self, entry: SampleEntry) -> Result<(), ThresholdError> {
        if !self.ids.insert(entry.user) {
            return Err(ThresholdError::DuplicateUser(entry.user));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[SampleEntry] {
        &self.entries
    }

    pub fn universe(&self) -> usize {
        self.universe
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// How the number of prizes and their amounts are chosen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PrizePolicy {
    EqualSplit { prizes: usize },
    /// `M_{l+1} = ratio * M_l`, scaled to spend the whole budget.
    Geometric { ratio: f64, prizes: usize },
    /// Equal split with `L` in `1..=max_prizes` chosen to maximize the
    /// greedily admitted sample utility; ties go to the smaller `L`.
    GridSearch { max_prizes: usize },
    /// Fixed amounts.
    Explicit { amounts: Vec<f64> },
}

impl Default for PrizePolicy {
    fn default() -> Self {
        PrizePolicy::GridSearch { max_prizes: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    /// Payment per unit of marginal utility, `e*`.
    pub effort_threshold: f64,
    /// Smallest prize `M*` a payment must reach.
    pub min_prize: f64,
}

/// One pick of the greedy ranking.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GreedyStep {
    pub user: UserId,
    pub marginal: usize,
    pub prize: f64,
    pub ratio: f64,
}

/// Record of an admitted user, kept so the admission bound can be audited.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admission {
    pub user: UserId,
    pub marginal: usize,
    pub prize: f64,
    pub ratio: f64,
    /// `U(J + i)` at admission.
    pub utility_after: usize,
    /// `U_i * B' / U(J + i)`.
    pub bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdComputation {
    pub state: ThresholdState,
    pub prizes: PrizeStructure,
    pub winners: Vec<UserId>,
    pub admissions: Vec<Admission>,
    /// `U(J)`.
    pub utility: usize,
    pub budget: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdOutcome {
    Updated(ThresholdComputation),
    /// The admitted set has no coverage; the caller keeps its previous threshold.
    KeepPrevious,
}

#[derive(PartialEq, Eq)]
struct Candidate {
    bound: usize,
    user: UserId,
    idx: usize,
}

impl Candidate {
    fn key(&self) -> (usize, Reverse<UserId>) {
        (self.bound, Reverse(self.user))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Lazy greedy over a pool: yields the candidate with the largest marginal
/// utility against the committed set, ties to the smaller user id.
/// Stale heap keys are upper bounds because coverage is submodular.
struct LazyGreedy<'a> {
    pool: &'a SamplePool,
    heap: BinaryHeap<Candidate>,
    covered: CoveredSet,
}

impl<'a> LazyGreedy<'a> {
    fn new(pool: &'a SamplePool) -> Self {
        let covered = CoveredSet::new(pool.universe());
        let heap = pool
            .entries()
            .iter()
            .enumerate()
            .map(|(idx, e)| Candidate { bound: covered.marginal(&e.profile), user: e.user, idx })
            .collect();
        LazyGreedy { pool, heap, covered }
    }

    /// Removes and returns the current argmax with its fresh marginal.
    fn pop_best(&mut self) -> Option<(usize, usize)> {
        loop {
            let mut top = self.heap.pop()?;
            let fresh = self.covered.marginal(&self.pool.entries()[top.idx].profile);
            top.bound = fresh;
            match self.heap.peek() {
                Some(next) if next.key() > top.key() => self.heap.push(top),
                _ => return Some((top.idx, fresh)),
            }
        }
    }

    fn commit(&mut self, idx: usize) {
        self.covered.insert(&self.pool.entries()[idx].profile);
    }

    fn utility(&self) -> usize {
        self.covered.count()
    }
}

/// Greedy ranking by current marginal utility over the prize of the
/// position being filled, `U_k / M_k`; at most `L` picks.
pub fn proportional_share_sorted(pool: &SamplePool, prizes: &PrizeStructure) -> Vec<GreedyStep> {
    let mut greedy = LazyGreedy::new(pool);
    let mut out = Vec::new();
    for &prize in prizes.prizes() {
        let Some((idx, marginal)) = greedy.pop_best() else { break };
        greedy.commit(idx);
        out.push(GreedyStep {
            user: pool.entries()[idx].user,
            marginal,
            prize,
            ratio: marginal as f64 / prize,
        });
    }
    out
}

fn admit(pool: &SamplePool, prizes: &PrizeStructure, budget: f64) -> (Vec<Admission>, usize) {
    let mut greedy = LazyGreedy::new(pool);
    let mut admitted = Vec::new();
    for &prize in prizes.prizes() {
        let Some((idx, marginal)) = greedy.pop_best() else { break };
        let utility_after = greedy.utility() + marginal;
        if utility_after == 0 {
            break;
        }
        let bound = marginal as f64 * budget / utility_after as f64;
        if prize > bound {
            break;
        }
        greedy.commit(idx);
        admitted.push(Admission {
            user: pool.entries()[idx].user,
            marginal,
            prize,
            ratio: marginal as f64 / prize,
            utility_after,
            bound,
        });
    }
    (admitted, greedy.utility())
}

/// Chooses `L` and the prize amounts for a stage budget.
pub fn optimal_prize_structure(
    pool: &SamplePool,
    budget: f64,
    policy: &PrizePolicy,
) -> Result<PrizeStructure, ThresholdError> {
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(ThresholdError::InvalidBudget(budget));
    }
    if pool.is_empty() {
        return Ok(PrizeStructure::winner_take_all(budget)?);
    }
    match policy {
        PrizePolicy::EqualSplit { prizes } => Ok(PrizeStructure::equal_split(budget, *prizes)?),
        PrizePolicy::Geometric { ratio, prizes } => {
            if !(*ratio > 0.0 && *ratio <= 1.0) || *prizes == 0 {
                return Err(ThresholdError::Policy(format!("geometric ratio {ratio} with {prizes} prizes")));
            }
            let weights: Vec<f64> = (0..*prizes).map(|k| ratio.powi(k as i32)).collect();
            let top = budget / weights.iter().sum::<f64>();
            Ok(PrizeStructure::new(weights.iter().map(|w| top * w).collect(), budget)?)
        }
        PrizePolicy::Explicit { amounts } => Ok(PrizeStructure::new(amounts.clone(), budget)?),
        PrizePolicy::GridSearch { max_prizes } => {
            if *max_prizes == 0 {
                return Err(ThresholdError::Policy("grid search needs max_prizes >= 1".into()));
            }
            let mut best: Option<(usize, PrizeStructure)> = None;
            for count in 1..=*max_prizes {
                let ps = PrizeStructure::equal_split(budget, count)?;
                let (_, score) = admit(pool, &ps, budget);
                if best.as_ref().is_none_or(|(s, _)| score > *s) {
                    best = Some((score, ps));
                }
            }
            Ok(best.expect("max_prizes >= 1").1)
        }
    }
}

/// Learns `(e*, M*)` from the sample with stage budget `budget`.
pub fn get_effort_threshold(
    pool: &SamplePool,
    budget: f64,
    policy: &PrizePolicy,
) -> Result<ThresholdOutcome, ThresholdError> {
    let prizes = optimal_prize_structure(pool, budget, policy)?;
    let (admissions, utility) = admit(pool, &prizes, budget);
    if utility == 0 {
        return Ok(ThresholdOutcome::KeepPrevious);
    }
    Ok(ThresholdOutcome::Updated(ThresholdComputation {
        state: ThresholdState { effort_threshold: budget / utility as f64, min_prize: prizes.smallest() },
        winners: admissions.iter().map(|a| a.user).collect(),
        prizes,
        admissions,
        utility,
        budget,
    }))
}
