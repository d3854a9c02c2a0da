//! Comparison mechanisms.
//!
//! The two contests (winner-take-all and equal-split multiple winners) let
//! every user bid against their own prize structure. The offline mechanisms
//! see the whole submission stream at once: a full-knowledge reverse auction
//! that pays declared costs, the incentive-compatible variant that runs the
//! threshold learner on the full pool, and a cost-based proportional-share
//! rule.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bidding::{AbilityDistribution, BidHistory, Contest, PrizeStructure, VBarMode};
use crate::coverage::{AoiGrid, CoveredSet, SensingProfile, UserId};
use crate::mechanism::{Arrival, MechanismError, MechanismOutcome, SubmissionModel};
use crate::threshold::{get_effort_threshold, PrizePolicy, SampleEntry, SamplePool, ThresholdOutcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Bbs,
    WinnerTakeAll,
    MultipleWinners,
    FullKnowledge,
    IncentiveCompatible,
    ProportionalShare,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 6] = [
        MechanismKind::Bbs,
        MechanismKind::WinnerTakeAll,
        MechanismKind::MultipleWinners,
        MechanismKind::FullKnowledge,
        MechanismKind::IncentiveCompatible,
        MechanismKind::ProportionalShare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MechanismKind::Bbs => "bbs",
            MechanismKind::WinnerTakeAll => "wta",
            MechanismKind::MultipleWinners => "mw",
            MechanismKind::FullKnowledge => "fk",
            MechanismKind::IncentiveCompatible => "ic",
            MechanismKind::ProportionalShare => "ps",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Who exerted what effort and who got paid, for any mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineOutcome {
    pub mechanism: MechanismKind,
    pub payments: BTreeMap<UserId, f64>,
    pub efforts: BTreeMap<UserId, f64>,
    /// Paid users, in selection order.
    pub winners: Vec<UserId>,
    /// Coverage of the winners.
    pub total_utility: usize,
}

impl BaselineOutcome {
    pub fn from_bbs(out: &MechanismOutcome) -> Self {
        BaselineOutcome {
            mechanism: MechanismKind::Bbs,
            payments: out.payments.clone(),
            efforts: out.efforts.clone(),
            winners: out.winners.clone(),
            total_utility: out.total_utility,
        }
    }

    pub fn total_paid(&self) -> f64 {
        self.payments.values().sum()
    }

    /// Users with positive effort.
    pub fn participation(&self) -> usize {
        self.efforts.values().filter(|&&e| e > 0.0).count()
    }
}

/// Writes `mechanism,user,effort,payment,winner` rows for several outcomes.
pub fn write_outcomes_csv<W: Write>(outcomes: &[BaselineOutcome], mut w: W) -> std::io::Result<()> {
    writeln!(w, "mechanism,user,effort,payment,winner")?;
    for o in outcomes {
        for (user, effort) in &o.efforts {
            let pay = o.payments.get(user).copied().unwrap_or(0.0);
            let won = o.winners.contains(user);
            writeln!(w, "{},{},{:.9},{:.9},{}", o.mechanism, user, effort, pay, won as u8)?;
        }
    }
    Ok(())
}

/// Parameters every contest baseline shares.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContestParams {
    pub budget: f64,
    pub ability_exponent: f64,
    pub v_bar_mode: VBarMode,
}

/// Sequential all-pay contest over `arrivals`; rank `r` gets prize `r`.
/// Ties rank the smaller id first.
fn run_contest<M: SubmissionModel + ?Sized>(
    kind: MechanismKind,
    arrivals: &[Arrival],
    prizes: PrizeStructure,
    params: &ContestParams,
    grid: &AoiGrid,
    model: &M,
) -> Result<BaselineOutcome, MechanismError> {
    let contest = Contest {
        dist: AbilityDistribution::new(params.ability_exponent)?,
        prizes: prizes.clone(),
        bidders: arrivals.len().max(1),
        v_bar_mode: params.v_bar_mode,
    };
    let mut history = BidHistory::new();
    let mut efforts = BTreeMap::new();
    let mut ranked = Vec::with_capacity(arrivals.len());
    for (k, a) in arrivals.iter().enumerate() {
        let bid = contest.bid(k + 1, a.ability, &history);
        history.push(a.user, bid.effort);
        efforts.insert(a.user, bid.effort);
        ranked.push((a.user, bid.effort));
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut payments = BTreeMap::new();
    let mut winners = Vec::new();
    let mut cover = CoveredSet::new(grid.len());
    for (&(user, effort), &prize) in ranked.iter().zip(prizes.prizes()) {
        payments.insert(user, prize);
        winners.push(user);
        cover.insert(&model.realize(user, effort));
    }
    Ok(BaselineOutcome { mechanism: kind, payments, efforts, winners, total_utility: cover.count() })
}

/// One prize of the whole budget.
pub fn winner_take_all<M: SubmissionModel + ?Sized>(
    arrivals: &[Arrival],
    params: &ContestParams,
    grid: &AoiGrid,
    model: &M,
) -> Result<BaselineOutcome, MechanismError> {
    let prizes = PrizeStructure::winner_take_all(params.budget)?;
    run_contest(MechanismKind::WinnerTakeAll, arrivals, prizes, params, grid, model)
}

/// `winners` equal prizes; the count is clamped to the number of users.
pub fn multiple_winners<M: SubmissionModel + ?Sized>(
    arrivals: &[Arrival],
    winners: usize,
    params: &ContestParams,
    grid: &AoiGrid,
    model: &M,
) -> Result<BaselineOutcome, MechanismError> {
    let l = winners.clamp(1, arrivals.len().max(1));
    let prizes = PrizeStructure::equal_split(params.budget, l)?;
    run_contest(MechanismKind::MultipleWinners, arrivals, prizes, params, grid, model)
}

/// A submission seen by an offline mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineSubmission {
    pub user: UserId,
    pub profile: SensingProfile,
    pub effort: f64,
    /// Declared cost of the effort.
    pub cost: f64,
}

/// Cost of effort `e` for ability `theta`: `e / theta`.
pub fn effort_cost(effort: f64, ability: f64) -> f64 {
    if effort <= 0.0 {
        0.0
    } else if ability > 0.0 {
        effort / ability
    } else {
        f64::INFINITY
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReverseAuction {
    FullKnowledge,
    IncentiveCompatible,
}

fn better_ratio(marginal: usize, cost: f64, best_marginal: usize, best_cost: f64) -> bool {
    // compare marginal / cost without dividing, so zero costs rank first
    (marginal as f64) * best_cost > (best_marginal as f64) * cost
        || (cost == 0.0 && best_cost == 0.0 && marginal > best_marginal)
}

/// Offline reverse auction on the full submission set.
///
/// Full knowledge: `subs` may list several efforts per user (nested
/// profiles, cost rising with effort). Greedy by marginal coverage per unit
/// of incremental cost, where a pick either hires a user or raises an
/// already hired user to a higher listed effort, paying costs while the
/// budget lasts; the better of that set and the best single affordable
/// option wins. Incentive compatible: the winners and payments of the
/// threshold learner run once on the whole pool, one entry per user.
pub fn offline_reverse_auction(
    subs: &[OfflineSubmission],
    universe: usize,
    budget: f64,
    variant: ReverseAuction,
    policy: &PrizePolicy,
) -> Result<BaselineOutcome, MechanismError> {
    let mut efforts: BTreeMap<UserId, f64> = BTreeMap::new();
    for s in subs {
        efforts.entry(s.user).or_insert(s.effort);
    }
    match variant {
        ReverseAuction::FullKnowledge => Ok(full_knowledge(subs, universe, budget, efforts)),
        ReverseAuction::IncentiveCompatible => {
            let mut pool = SamplePool::new(universe);
            for s in subs {
                pool.push(SampleEntry { user: s.user, profile: s.profile.clone(), effort: s.effort })?;
            }
            let mut payments = BTreeMap::new();
            let mut winners = Vec::new();
            let mut utility = 0;
            if let ThresholdOutcome::Updated(c) = get_effort_threshold(&pool, budget, policy)? {
                for a in &c.admissions {
                    payments.insert(a.user, c.state.effort_threshold * a.marginal as f64);
                }
                winners = c.winners;
                utility = c.utility;
            }
            Ok(BaselineOutcome {
                mechanism: MechanismKind::IncentiveCompatible,
                payments,
                efforts,
                winners,
                total_utility: utility,
            })
        }
    }
}

fn full_knowledge(
    subs: &[OfflineSubmission],
    universe: usize,
    budget: f64,
    mut efforts: BTreeMap<UserId, f64>,
) -> BaselineOutcome {
    let mut menus: BTreeMap<UserId, Vec<&OfflineSubmission>> = BTreeMap::new();
    for s in subs.iter().filter(|s| s.cost.is_finite()) {
        menus.entry(s.user).or_default().push(s);
    }
    for menu in menus.values_mut() {
        menu.sort_by(|a, b| a.effort.total_cmp(&b.effort));
    }
    let mut cover = CoveredSet::new(universe);
    let mut held: BTreeMap<UserId, &OfflineSubmission> = BTreeMap::new();
    let mut remaining = budget;
    let mut order = Vec::new();
    loop {
        // (user, option, gain, incremental cost)
        let mut best: Option<(UserId, &OfflineSubmission, usize, f64)> = None;
        for (&user, menu) in &menus {
            let (floor_effort, paid) = held.get(&user).map_or((f64::NEG_INFINITY, 0.0), |h| (h.effort, h.cost));
            for &opt in menu.iter().filter(|o| o.effort > floor_effort) {
                let extra = (opt.cost - paid).max(0.0);
                if extra > remaining {
                    continue;
                }
                let gain = cover.marginal(&opt.profile);
                if gain == 0 {
                    continue;
                }
                match best {
                    Some((_, _, bg, bc)) if !better_ratio(gain, extra, bg, bc) => {}
                    _ => best = Some((user, opt, gain, extra)),
                }
            }
        }
        let Some((user, opt, _, extra)) = best else { break };
        cover.insert(&opt.profile);
        remaining -= extra;
        if held.insert(user, opt).is_none() {
            order.push(user);
        }
    }
    let single = subs
        .iter()
        .filter(|s| s.cost <= budget)
        .max_by(|a, b| a.profile.len().cmp(&b.profile.len()).then(b.user.cmp(&a.user)));
    if let Some(s) = single.filter(|s| s.profile.len() > cover.count()) {
        efforts.insert(s.user, s.effort);
        return BaselineOutcome {
            mechanism: MechanismKind::FullKnowledge,
            payments: BTreeMap::from([(s.user, s.cost)]),
            efforts,
            winners: vec![s.user],
            total_utility: s.profile.len(),
        };
    }
    for (&u, h) in &held {
        efforts.insert(u, h.effort);
    }
    BaselineOutcome {
        mechanism: MechanismKind::FullKnowledge,
        payments: held.iter().map(|(&u, h)| (u, h.cost)).collect(),
        efforts,
        winners: order,
        total_utility: cover.count(),
    }
}

/// Cost-based proportional share: greedy by marginal per unit cost, admit
/// while `c_i <= U_i * B / U(J + i)`, then split the budget in proportion
/// to each winner's marginal coverage.
pub fn offline_proportional_share(subs: &[OfflineSubmission], universe: usize, budget: f64) -> BaselineOutcome {
    let efforts: BTreeMap<UserId, f64> = subs.iter().map(|s| (s.user, s.effort)).collect();
    let mut cover = CoveredSet::new(universe);
    let mut left: Vec<&OfflineSubmission> = subs.iter().collect();
    left.sort_by_key(|s| s.user);
    let mut admitted: Vec<(UserId, usize)> = Vec::new();
    loop {
        let mut best: Option<(usize, usize)> = None;
        for (k, s) in left.iter().enumerate() {
            let m = cover.marginal(&s.profile);
            if m == 0 || !s.cost.is_finite() {
                continue;
            }
            match best {
                Some((bk, bm)) if !better_ratio(m, s.cost, bm, left[bk].cost) => {}
                _ => best = Some((k, m)),
            }
        }
        let Some((k, m)) = best else { break };
        let s = left[k];
        let after = cover.count() + m;
        if s.cost > m as f64 * budget / after as f64 {
            break;
        }
        cover.insert(&s.profile);
        admitted.push((s.user, m));
        left.remove(k);
    }
    let total = cover.count();
    let payments = admitted.iter().map(|&(u, m)| (u, budget * m as f64 / total as f64)).collect();
    BaselineOutcome {
        mechanism: MechanismKind::ProportionalShare,
        payments,
        efforts,
        winners: admitted.into_iter().map(|(u, _)| u).collect(),
        total_utility: total,
    }
}
