use bbs_core::baselines::{
    effort_cost, multiple_winners, offline_reverse_auction, winner_take_all, ContestParams, OfflineSubmission,
    ReverseAuction,
};
use bbs_core::bidding::VBarMode;
use bbs_core::coverage::{build_manhattan_grid, SensingProfile, UserId};
use bbs_core::mechanism::{run_bbs, Arrival, MechanismConfig};
use bbs_core::scenario::{Scenario, ScenarioConfig};
use bbs_core::threshold::PrizePolicy;

fn params(budget: f64) -> ContestParams {
    ContestParams { budget, ability_exponent: 0.5, v_bar_mode: VBarMode::FixedPoint }
}

#[test]
fn full_knowledge_hand_greedy() {
    // disjoint unit-cost users of sizes 3, 7, 5, 1 with budget 3
    let sizes = [3u32, 7, 5, 1];
    let mut start = 0;
    let subs: Vec<OfflineSubmission> = sizes
        .iter()
        .enumerate()
        .map(|(k, &len)| {
            let profile = SensingProfile::new(start..start + len);
            start += len;
            OfflineSubmission { user: UserId(k as u32), profile, effort: 1.0, cost: 1.0 }
        })
        .collect();
    let out = offline_reverse_auction(&subs, 16, 3.0, ReverseAuction::FullKnowledge, &PrizePolicy::default()).unwrap();
    assert_eq!(out.winners, vec![UserId(1), UserId(2), UserId(0)]);
    assert_eq!(out.total_paid(), 3.0);
    assert_eq!(out.total_utility, 15);
}

#[test]
fn single_user_wins_everything() {
    let grid = build_manhattan_grid(1, 0, 10.0, 0.0, 1.0).unwrap();
    let model = |_: UserId, _: f64| SensingProfile::new([1, 2]);
    let one = [Arrival { user: UserId(4), time: 1, ability: 0.3 }];
    let out = winner_take_all(&one, &params(9.0), &grid, &model).unwrap();
    assert_eq!(out.winners, vec![UserId(4)]);
    assert_eq!(out.payments[&UserId(4)], 9.0);
}

#[test]
fn equal_abilities_all_paid_when_everyone_ranks() {
    let grid = build_manhattan_grid(1, 0, 10.0, 0.0, 1.0).unwrap();
    let model = |u: UserId, _: f64| SensingProfile::new([u.0]);
    let arrivals: Vec<Arrival> = (0..6).map(|k| Arrival { user: UserId(k), time: 1, ability: 0.7 }).collect();
    let out = multiple_winners(&arrivals, 6, &params(12.0), &grid, &model).unwrap();
    assert_eq!(out.winners.len(), 6);
    assert!(out.payments.values().all(|&p| p == 2.0));
}

/// World with BBS submissions, reused by the offline comparisons.
fn world(seed: u64, users: usize) -> (Scenario, Vec<OfflineSubmission>) {
    let s = Scenario::generate(&ScenarioConfig { users, ..ScenarioConfig::default() }, seed).unwrap();
    let cfg = MechanismConfig { expected_bidders: users, seed, ..Default::default() };
    let out = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
    let subs = s
        .arrivals()
        .iter()
        .map(|a| {
            let effort = out.efforts[&a.user];
            OfflineSubmission {
                user: a.user,
                profile: s.profile(a.user, effort),
                effort,
                cost: effort_cost(effort, a.ability),
            }
        })
        .collect();
    (s, subs)
}

#[test]
fn full_knowledge_dominates_incentive_compatible() {
    for seed in 0..100 {
        let (s, subs) = world(seed, 40);
        let m = s.grid().len();
        let policy = PrizePolicy::default();
        let fk = offline_reverse_auction(&subs, m, 50.0, ReverseAuction::FullKnowledge, &policy).unwrap();
        let ic = offline_reverse_auction(&subs, m, 50.0, ReverseAuction::IncentiveCompatible, &policy).unwrap();
        assert!(fk.total_utility >= ic.total_utility, "seed {seed}");
        assert!(fk.total_paid() <= 50.0 && ic.total_paid() <= 50.0 + 1e-9);
    }
}

#[test]
fn more_prizes_lower_the_top_effort_and_widen_participation() {
    let mut wider = 0;
    let (mut wta_total, mut mw_total) = (0, 0);
    let (mut wta_top, mut mw_top) = (0.0, 0.0);
    for seed in 0..30 {
        let s = Scenario::generate(&ScenarioConfig { users: 50, ..ScenarioConfig::default() }, seed).unwrap();
        let arrivals = s.arrivals();
        let wta = winner_take_all(&arrivals, &params(100.0), s.grid(), &s).unwrap();
        let mw = multiple_winners(&arrivals, 5, &params(100.0), s.grid(), &s).unwrap();
        let top = arrivals.iter().max_by(|a, b| a.ability.total_cmp(&b.ability)).unwrap().user;
        wta_top += wta.efforts[&top];
        mw_top += mw.efforts[&top];
        wider += (mw.participation() >= wta.participation()) as usize;
        wta_total += wta.participation();
        mw_total += mw.participation();
    }
    // a late top bidder can match a higher observed effort under five prizes,
    // so the effort direction is checked in aggregate
    assert!(mw_top < wta_top, "{mw_top} vs {wta_top}");
    assert!(wider >= 24, "{wider}");
    assert!(mw_total > wta_total);
}
