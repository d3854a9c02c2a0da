use std::collections::BTreeSet;

use bbs_core::mechanism::{run_bbs, Branch, EventKind, MechanismConfig, RoutingMode};
use bbs_core::scenario::{Scenario, ScenarioConfig};

fn config(seed: u64, budget: f64, routing: RoutingMode, bidders: usize) -> MechanismConfig {
    MechanismConfig { total_budget: budget, horizon: 256, routing, expected_bidders: bidders, seed, ..Default::default() }
}

#[test]
fn budget_and_stage_gates_hold_on_every_event() {
    let base = ScenarioConfig::default();
    let field = Scenario::field_for(&base).unwrap();
    for seed in 0..24u64 {
        let lambda = [0.5, 2.0, 8.0][seed as usize % 3];
        let scfg = ScenarioConfig { arrival_rate: lambda, ..base.clone() };
        let s = Scenario::generate_in(&scfg, seed, field.clone()).unwrap();
        let routing = if seed % 2 == 0 { RoutingMode::PerUser } else { RoutingMode::PerRun };
        let budget = 10.0 + 37.0 * seed as f64;
        let cfg = config(seed, budget, routing, s.users.len());
        let out = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
        let mut spent = 0.0;
        let mut paid = BTreeSet::new();
        for e in &out.events {
            if e.payment > 0.0 {
                assert!(paid.insert(e.user.unwrap()), "user paid twice");
                if e.branch == Some(Branch::Threshold) {
                    assert!(e.payment <= e.stage_budget - e.spent_before);
                    assert!(e.spent_before + e.payment <= e.stage_budget);
                }
            }
            spent += e.payment;
            assert!(spent <= budget);
        }
        assert_eq!(spent, out.total_paid);
        assert_eq!(paid.len(), out.winners.len());
    }
}

#[test]
fn same_seed_same_outcome() {
    let s = Scenario::generate(&ScenarioConfig::default(), 3).unwrap();
    let cfg = config(8, 60.0, RoutingMode::PerUser, s.users.len());
    let a = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
    let b = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
    assert_eq!(a, b);
    let mut ta = Vec::new();
    let mut tb = Vec::new();
    a.write_events(&mut ta).unwrap();
    b.write_events(&mut tb).unwrap();
    assert_eq!(ta, tb);
}

#[test]
fn stage_count_follows_the_horizon() {
    for (horizon, stages) in [(2u64, 2usize), (32, 6), (256, 9), (300, 9)] {
        let scfg = ScenarioConfig { horizon, users: 30, ..ScenarioConfig::default() };
        let s = Scenario::generate(&scfg, horizon).unwrap();
        let cfg = MechanismConfig { horizon, expected_bidders: 30, ..Default::default() };
        let out = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
        assert_eq!(out.stages.len(), stages);
        assert_eq!(out.events.iter().filter(|e| e.kind == EventKind::Stage).count(), stages);
        assert_eq!(out.stages.last().unwrap().threshold_budget, cfg.total_budget);
    }
}

#[test]
fn threshold_branch_samples_every_arrival() {
    let s = Scenario::generate(&ScenarioConfig { users: 40, ..ScenarioConfig::default() }, 12).unwrap();
    let cfg = MechanismConfig { threshold_branch_probability: 1.0, expected_bidders: 40, ..Default::default() };
    let out = run_bbs(&s.arrivals(), &cfg, s.grid(), &s).unwrap();
    assert!(out.secretary.is_none());
    assert_eq!(out.events.iter().filter(|e| e.kind == EventKind::Submit).count(), 40);
    let last = out.stages.last().unwrap();
    assert_eq!(last.sample_size, 40);
}
