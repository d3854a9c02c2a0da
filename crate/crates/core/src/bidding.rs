//! Equilibrium effort bids in a sequential all-pay contest.
//!
//! Users arrive one at a time, observe all earlier submissions and choose an
//! effort `e`. A submission of quality `e` costs `e / theta` where `theta` is
//! the user's ability, drawn from `F(x) = x^c` on `(0, 1]`. Backward
//! induction over the `n - i` users still to come gives the probability that
//! all of them bid zero as `(e / V)^(1 - d_i)` with `d_i = (1 - c)^(n - i)`,
//! and the interior best response `V * (theta * (1 - d_i))^(1 / d_i)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coverage::UserId;

#[derive(Debug, Error, PartialEq)]
pub enum BidError {
    #[error("value {value} outside the domain of {what}")]
    Domain { what: &'static str, value: f64 },
    #[error("rank {j} outside 1..={n}")]
    Rank { j: usize, n: usize },
    #[error("expected {expected} win probabilities, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid prize structure: {0}")]
    Prizes(String),
    /// The last bidder has no followers; the interior formula degenerates
    /// and the boundary rule applies instead.
    #[error("interior bid is degenerate for the last bidder")]
    LastBidder,
}

/// Ability distribution `F(x) = x^c` on `[0, 1]` with `0 < c < 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbilityDistribution {
    c: f64,
}

impl AbilityDistribution {
    pub fn new(c: f64) -> Result<Self, BidError> {
        if !(c > 0.0 && c < 1.0) {
            return Err(BidError::Domain { what: "ability exponent c", value: c });
        }
        Ok(AbilityDistribution { c })
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn cdf(&self, x: f64) -> Result<f64, BidError> {
        if !(0.0..=1.0).contains(&x) {
            return Err(BidError::Domain { what: "ability", value: x });
        }
        Ok(x.powf(self.c))
    }

    /// Inverse CDF: `u^(1/c)`.
    pub fn quantile(&self, u: f64) -> f64 {
        u.clamp(0.0, 1.0).powf(1.0 / self.c)
    }
}

/// Rank-ordered prizes `M_1 >= ... >= M_L > 0`, with `M_{L+1} = 0` implied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrizeStructure {
    prizes: Vec<f64>,
    budget: f64,
}

impl PrizeStructure {
    pub fn new(prizes: Vec<f64>, budget: f64) -> Result<Self, BidError> {
        if prizes.is_empty() {
            return Err(BidError::Prizes("at least one prize is required".into()));
        }
        if prizes.iter().any(|&m| !(m > 0.0) || !m.is_finite()) {
            return Err(BidError::Prizes("prizes must be positive".into()));
        }
        if prizes.windows(2).any(|w| w[0] < w[1]) {
            return Err(BidError::Prizes("prizes must be non-increasing".into()));
        }
        let total: f64 = prizes.iter().sum();
        if total > budget * (1.0 + 1e-12) {
            return Err(BidError::Prizes(format!("prizes sum {total} exceeds budget {budget}")));
        }
        Ok(PrizeStructure { prizes, budget })
    }

    /// A single prize of the whole budget.
    pub fn winner_take_all(budget: f64) -> Result<Self, BidError> {
        Self::new(vec![budget], budget)
    }

    /// `count` equal prizes of `budget / count`.
    pub fn equal_split(budget: f64, count: usize) -> Result<Self, BidError> {
        if count == 0 {
            return Err(BidError::Prizes("at least one prize is required".into()));
        }
        Self::new(vec![budget / count as f64; count], budget)
    }

    pub fn prizes(&self) -> &[f64] {
        &self.prizes
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Number of positive prizes `L`.
    pub fn len(&self) -> usize {
        self.prizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prizes.is_empty()
    }

    pub fn top(&self) -> f64 {
        self.prizes[0]
    }

    /// Smallest positive prize `M_L`.
    pub fn smallest(&self) -> f64 {
        *self.prizes.last().unwrap()
    }

    /// `M_l - M_{l+1}` for 1-based `l`.
    pub fn spread(&self, l: usize) -> f64 {
        let cur = self.prizes[l - 1];
        let next = self.prizes.get(l).copied().unwrap_or(0.0);
        cur - next
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedBid {
    pub user: UserId,
    pub effort: f64,
    pub order: usize,
}

/// Efforts observed so far in a contest, in arrival order.
#[derive(Clone, Debug, Default)]
pub struct BidHistory {
    bids: Vec<ObservedBid>,
    // descending
    ranked: Vec<f64>,
}

impl BidHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, user: UserId, effort: f64) {
        let order = self.bids.len();
        self.bids.push(ObservedBid { user, effort, order });
        let at = self.ranked.partition_point(|&e| e >= effort);
        self.ranked.insert(at, effort);
    }

    pub fn bids(&self) -> &[ObservedBid] {
        &self.bids
    }

    pub fn len(&self) -> usize {
        self.bids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty()
    }

    /// The `j`-th largest observed effort (1-based), or 0 when fewer than `j` bids exist.
    pub fn jth_best(&self, j: usize) -> f64 {
        if j == 0 {
            return f64::INFINITY;
        }
        self.ranked.get(j - 1).copied().unwrap_or(0.0)
    }
}

/// `P(j-th best of n_opponents <= level)` when each opponent independently
/// falls at or below the level with probability `p`: the binomial tail
/// `sum_{k = n-j+1}^{n} C(n, k) p^k (1-p)^(n-k)`.
pub fn order_stat_cdf(j: usize, n_opponents: usize, p: f64) -> Result<f64, BidError> {
    if j == 0 || j > n_opponents {
        return Err(BidError::Rank { j, n: n_opponents });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(BidError::Domain { what: "probability", value: p });
    }
    let n = n_opponents;
    if j == 1 {
        return Ok(p.powi(n as i32));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    if p == 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let lo = n - j + 1;
    // ln C(n, lo) accumulated directly, then stepped upward.
    let mut ln_choose: f64 = (0..lo).map(|k| ((n - k) as f64).ln() - ((k + 1) as f64).ln()).sum();
    let mut total = 0.0;
    for k in lo..=n {
        total += (ln_choose + k as f64 * lp + (n - k) as f64 * lq).exp();
        if k < n {
            ln_choose += ((n - k) as f64).ln() - ((k + 1) as f64).ln();
        }
    }
    Ok(total.min(1.0))
}

/// `V = sum_l Phi_l * (M_l - M_{l+1})`.
pub fn expected_prize_value(prizes: &PrizeStructure, win_probs: &[f64]) -> Result<f64, BidError> {
    if win_probs.len() != prizes.len() {
        return Err(BidError::LengthMismatch { expected: prizes.len(), got: win_probs.len() });
    }
    let mut v = 0.0;
    for (l, &phi) in win_probs.iter().enumerate() {
        if !(0.0..=1.0).contains(&phi) {
            return Err(BidError::Domain { what: "win probability", value: phi });
        }
        v += phi * prizes.spread(l + 1);
    }
    Ok(v)
}

/// `d_i = (1 - c)^(n - i)`.
pub fn follower_exponent(n: usize, i: usize, c: f64) -> f64 {
    (1.0 - c).powi(n.saturating_sub(i) as i32)
}

/// Probability that every later bidder `i+1..=n` bids zero when bidder `i`
/// submits `e` with `e_over_v = e / V`: `(e/V)^(1 - (1-c)^(n-i))`.
pub fn zero_bid_mass_product(n: usize, i: usize, c: f64, e_over_v: f64) -> Result<f64, BidError> {
    if i == 0 || i > n {
        return Err(BidError::Rank { j: i, n });
    }
    if !(0.0..=1.0).contains(&e_over_v) {
        return Err(BidError::Domain { what: "bid-to-value ratio", value: e_over_v });
    }
    Ok(e_over_v.powf(1.0 - follower_exponent(n, i, c)))
}

/// Closed-form interior best response `V * (theta * (1 - d_i))^(1 / d_i)`.
pub fn interior_bid(n: usize, i: usize, c: f64, v_bar: f64, theta: f64) -> Result<f64, BidError> {
    if i == 0 || i > n {
        return Err(BidError::Rank { j: i, n });
    }
    if i == n {
        return Err(BidError::LastBidder);
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(BidError::Domain { what: "ability", value: theta });
    }
    if !(v_bar >= 0.0) {
        return Err(BidError::Domain { what: "expected prize value", value: v_bar });
    }
    Ok(v_bar * interior_fraction(follower_exponent(n, i, c), theta))
}

/// `(theta * (1 - d))^(1/d)`, robust to `d` underflowing.
fn interior_fraction(d: f64, theta: f64) -> f64 {
    let base = theta * (1.0 - d);
    if base <= 0.0 {
        return 0.0;
    }
    if base >= 1.0 {
        return 1.0;
    }
    if d <= 0.0 {
        return 0.0;
    }
    (base.ln() / d).exp()
}

/// Ability at which the interior map produces effort `e`.
fn invert_interior(d: f64, v_bar: f64, e: f64) -> f64 {
    if e <= 0.0 || v_bar <= 0.0 {
        return 0.0;
    }
    ((e / v_bar).powf(d) / (1.0 - d)).clamp(0.0, 1.0)
}

/// `[1 - d](e/V)^(-d) - 1/theta`; zero at an interior optimum.
pub fn first_order_residual(n: usize, i: usize, c: f64, v_bar: f64, theta: f64, effort: f64) -> f64 {
    let d = follower_exponent(n, i, c);
    (1.0 - d) * (effort / v_bar).powf(-d) - 1.0 / theta
}

/// Which piece of the best-response function produced a bid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BidBranch {
    /// Ability below the matching threshold.
    Zero,
    /// Ties the `rank`-th best observed effort.
    Match { rank: usize },
    /// Closed-form interior solution.
    Interior,
    /// Last bidder: ties the `L`-th best effort when affordable.
    Last,
}

/// Parameters a bidder needs to compute its best response.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BidSituation {
    /// Total number of bidders.
    pub n: usize,
    /// 1-based arrival position.
    pub i: usize,
    pub c: f64,
    pub v_bar: f64,
    /// Number of positive prizes.
    pub prizes: usize,
}

impl BidSituation {
    fn d(&self) -> f64 {
        follower_exponent(self.n, self.i, self.c)
    }

    /// Payoff of bidding `e` under the zero-bid-mass objective.
    pub fn payoff(&self, theta: f64, e: f64) -> f64 {
        if theta <= 0.0 {
            return if e > 0.0 { f64::NEG_INFINITY } else { 0.0 };
        }
        let ratio = (e / self.v_bar).clamp(0.0, 1.0);
        self.v_bar * ratio.powf(1.0 - self.d()) - e / theta
    }

    /// Lower ability threshold: below it even matching the `L`-th best effort loses money.
    pub fn lower_threshold(&self, history: &BidHistory) -> f64 {
        let e = history.jth_best(self.prizes);
        if e <= 0.0 {
            0.0
        } else {
            (e / self.v_bar).powf(self.d())
        }
    }

    /// Upper ability threshold: at or above it the interior solution applies.
    pub fn upper_threshold(&self, history: &BidHistory) -> f64 {
        let e = history.jth_best(1);
        if e <= 0.0 {
            0.0
        } else {
            (e / self.v_bar).powf(self.d()) / self.c
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bid {
    pub effort: f64,
    pub branch: BidBranch,
}

/// Piecewise best-response effort with zero reserve.
///
/// Observed efforts enter through the two ability thresholds, which are the
/// closed-form `[(1 - d_j) theta_j]^(d_i / d_j)` expressions rewritten in
/// terms of the efforts `e_j = V [(1 - d_j) theta_j]^(1 / d_j)` they stand for.
pub fn best_response_bid(s: &BidSituation, theta: f64, history: &BidHistory) -> Bid {
    let zero = Bid { effort: 0.0, branch: BidBranch::Zero };
    if theta <= 0.0 || s.v_bar <= 0.0 || s.n == 0 {
        return zero;
    }
    let e_last = history.jth_best(s.prizes);
    if s.i >= s.n {
        return if theta * s.v_bar >= e_last {
            Bid { effort: e_last.min(s.v_bar), branch: BidBranch::Last }
        } else {
            zero
        };
    }
    if theta < s.lower_threshold(history) {
        return zero;
    }
    if theta >= s.upper_threshold(history) {
        let e = s.v_bar * interior_fraction(s.d(), theta);
        return Bid { effort: e.max(e_last).min(s.v_bar), branch: BidBranch::Interior };
    }
    // Tie the cheapest observed top-L effort that still pays off.
    for rank in (1..=s.prizes).rev() {
        let e = history.jth_best(rank);
        if e > 0.0 && s.payoff(theta, e) > 0.0 {
            return Bid { effort: e, branch: BidBranch::Match { rank } };
        }
    }
    zero
}

/// How the expected prize value is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VBarMode {
    /// `V = M_1`.
    TopPrize,
    /// Iterate bid -> rank probabilities -> `V` to a fixed point.
    #[default]
    FixedPoint,
}

/// A contest a bidder faces: ability law, prizes, bidder count.
#[derive(Clone, Debug)]
pub struct Contest {
    pub dist: AbilityDistribution,
    pub prizes: PrizeStructure,
    pub bidders: usize,
    pub v_bar_mode: VBarMode,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContestBid {
    pub effort: f64,
    pub branch: BidBranch,
    pub v_bar: f64,
    pub iterations: usize,
    /// False when the fixed-point iteration hit its cap.
    pub converged: bool,
}

const V_BAR_TOL: f64 = 1e-9;
const V_BAR_MAX_ITER: usize = 100;

impl Contest {
    fn situation(&self, position: usize, v_bar: f64) -> BidSituation {
        BidSituation {
            n: self.bidders,
            i: position.clamp(1, self.bidders.max(1)),
            c: self.dist.c(),
            v_bar,
            prizes: self.prizes.len(),
        }
    }

    /// Expected prize value for a bid whose opponents fall below it with probability `p`.
    pub fn v_bar_at(&self, p: f64) -> f64 {
        let opponents = self.bidders.saturating_sub(1);
        let probs: Vec<f64> = (1..=self.prizes.len())
            .map(|l| if l > opponents { 1.0 } else { order_stat_cdf(l, opponents, p).unwrap_or(0.0) })
            .collect();
        expected_prize_value(&self.prizes, &probs).unwrap_or(0.0)
    }

    /// Per-opponent probability of lying below the level of `bid`.
    fn level_probability(&self, s: &BidSituation, theta: f64, bid: &Bid) -> f64 {
        let ability = match bid.branch {
            BidBranch::Zero => 0.0,
            BidBranch::Interior => theta,
            BidBranch::Match { .. } => invert_interior(s.d(), s.v_bar, bid.effort),
            BidBranch::Last => {
                if s.v_bar > 0.0 {
                    (bid.effort / s.v_bar).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            }
        };
        self.dist.cdf(ability.clamp(0.0, 1.0)).unwrap_or(0.0)
    }

    /// Best response of the bidder at 1-based `position` with ability `theta`.
    pub fn bid(&self, position: usize, theta: f64, history: &BidHistory) -> ContestBid {
        let mut v_bar = self.prizes.top();
        let mut s = self.situation(position, v_bar);
        let mut bid = best_response_bid(&s, theta, history);
        if self.v_bar_mode == VBarMode::TopPrize {
            return ContestBid { effort: bid.effort, branch: bid.branch, v_bar, iterations: 0, converged: true };
        }
        for it in 1..=V_BAR_MAX_ITER {
            let next = self.v_bar_at(self.level_probability(&s, theta, &bid));
            let done = (next - v_bar).abs() <= V_BAR_TOL * v_bar.abs().max(f64::MIN_POSITIVE);
            v_bar = next;
            s = self.situation(position, v_bar);
            bid = best_response_bid(&s, theta, history);
            if done || v_bar <= 0.0 {
                return ContestBid { effort: bid.effort, branch: bid.branch, v_bar, iterations: it, converged: true };
            }
        }
        ContestBid { effort: bid.effort, branch: bid.branch, v_bar, iterations: V_BAR_MAX_ITER, converged: false }
    }
}

/// Numeric maximizer of the zero-bid-mass objective, used to check the
/// closed forms. It searches `[e_L, V]` on a log-spaced grid and refines
/// with golden-section search; it never calls the closed-form bid.
pub mod oracle {
    use super::{BidHistory, BidSituation};

    /// Objective `V * prod_{j>i} F_j(e_j = 0) - e / theta`, with the product
    /// built factor by factor from the later bidders' zero-bid masses.
    pub fn objective(s: &BidSituation, theta: f64, e: f64) -> f64 {
        let ratio = (e / s.v_bar).clamp(0.0, 1.0);
        let mut ln_mass = 0.0;
        let mut weight = s.c;
        for _ in s.i + 1..=s.n {
            ln_mass += weight * ratio.ln();
            weight *= 1.0 - s.c;
        }
        let mass = if s.i >= s.n { 1.0 } else { ln_mass.exp() };
        s.v_bar * mass - e / theta
    }

    fn golden<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, iters: usize) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - r * (b - a);
        let mut x2 = a + r * (b - a);
        let (mut f1, mut f2) = (f(x1), f(x2));
        for _ in 0..iters {
            if f1 < f2 {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + r * (b - a);
                f2 = f(x2);
            } else {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - r * (b - a);
                f1 = f(x1);
            }
        }
        0.5 * (a + b)
    }

    /// Constrained maximizer over `e >= e_L`; returns 0 when the best payoff is negative.
    pub fn numeric_best_response(s: &BidSituation, theta: f64, history: &BidHistory) -> f64 {
        if theta <= 0.0 || s.v_bar <= 0.0 {
            return 0.0;
        }
        let lo = history.jth_best(s.prizes);
        if lo > s.v_bar {
            return 0.0;
        }
        let f = |e: f64| objective(s, theta, e);
        let log_lo = if lo > 0.0 { lo.ln() } else { s.v_bar.ln() - 700.0 };
        let log_hi = s.v_bar.ln();
        let mut best_e = lo;
        let mut best = f(lo);
        if log_hi > log_lo {
            const GRID: usize = 2000;
            let step = (log_hi - log_lo) / GRID as f64;
            let g = |u: f64| f(u.exp());
            let mut best_k = 0;
            let mut best_val = f64::NEG_INFINITY;
            for k in 0..=GRID {
                let v = g(log_lo + step * k as f64);
                if v > best_val {
                    best_val = v;
                    best_k = k;
                }
            }
            let a = log_lo + step * best_k.saturating_sub(1) as f64;
            let b = (log_lo + step * (best_k + 1) as f64).min(log_hi);
            let u = golden(g, a, b, 200);
            for cand in [u.exp(), (log_lo + step * best_k as f64).exp()] {
                let v = f(cand);
                if v > best {
                    best = v;
                    best_e = cand;
                }
            }
        }
        if best < 0.0 {
            0.0
        } else {
            best_e
        }
    }
}
