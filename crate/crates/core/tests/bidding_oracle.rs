use bbs_core::bidding::oracle::{numeric_best_response, objective};
use bbs_core::bidding::{
    best_response_bid, first_order_residual, follower_exponent, interior_bid, order_stat_cdf, zero_bid_mass_product,
    AbilityDistribution, BidBranch, BidHistory, BidSituation, Contest, PrizeStructure, VBarMode,
};
use bbs_core::coverage::UserId;
use bbs_core::scenario::sample_abilities;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn situation(n: usize, i: usize, c: f64, v_bar: f64, prizes: usize) -> BidSituation {
    BidSituation { n, i, c, v_bar, prizes }
}

#[test]
fn interior_bids_match_numeric_oracle() {
    let empty = BidHistory::new();
    let mut positive = 0;
    for n in 2..=6 {
        for &c in &[0.3, 0.5, 0.7] {
            for i in 1..n {
                for &v in &[1.0, 2.5] {
                    let s = situation(n, i, c, v, 1);
                    for k in 1..=100 {
                        let theta = k as f64 / 100.0;
                        let closed = interior_bid(n, i, c, v, theta).unwrap();
                        let bid = best_response_bid(&s, theta, &empty);
                        assert_eq!(bid.branch, BidBranch::Interior);
                        assert_eq!(bid.effort, closed);
                        let numeric = numeric_best_response(&s, theta, &empty);
                        let err = (closed - numeric).abs();
                        assert!(err <= 1e-4 * closed.abs() || err <= 1e-8, "n={n} i={i} c={c} theta={theta}: {closed} vs {numeric}");
                        // bids below the smallest double round to zero and have no residual
                        if closed > 0.0 {
                            let r = first_order_residual(n, i, c, v, theta, closed);
                            assert!(r.abs() <= 1e-6, "residual {r} at n={n} i={i} c={c} theta={theta}");
                            positive += 1;
                        }
                    }
                }
            }
        }
    }
    assert!(positive > 5000, "{positive}");
}

#[test]
fn zero_bid_product_matches_factors() {
    for n in 2..=10 {
        for i in 1..n {
            for step in 1..=9 {
                let c = step as f64 / 10.0;
                for &r in &[1e-6f64, 0.01, 0.2, 0.5, 0.77, 1.0] {
                    let mut product = 1.0;
                    let mut weight = c;
                    for _ in i + 1..=n {
                        product *= r.powf(weight);
                        weight *= 1.0 - c;
                    }
                    let closed = zero_bid_mass_product(n, i, c, r).unwrap();
                    assert!((closed - product).abs() <= 1e-12, "n={n} i={i} c={c} r={r}");
                }
            }
        }
    }
}

#[test]
fn objective_is_built_from_the_same_factors() {
    let s = situation(5, 2, 0.4, 3.0, 1);
    let e = 0.7;
    let expected = 3.0 * zero_bid_mass_product(5, 2, 0.4, e / 3.0).unwrap() - e / 0.9;
    assert!((objective(&s, 0.9, e) - expected).abs() < 1e-12);
}

#[test]
fn order_statistic_against_enumeration() {
    for n_opp in 0..=6usize {
        for &p in &[0.0f64, 0.13, 0.5, 0.9, 1.0] {
            for j in 1..=n_opp.max(1) {
                if j > n_opp {
                    continue;
                }
                // P(at most j - 1 opponents above) by brute force over outcomes
                let mut total = 0.0;
                for mask in 0u32..(1 << n_opp) {
                    let above = mask.count_ones() as usize;
                    let prob = (1.0 - p).powi(above as i32) * p.powi((n_opp - above) as i32);
                    if above < j {
                        total += prob;
                    }
                }
                let got = order_stat_cdf(j, n_opp, p).unwrap();
                assert!((got - total).abs() < 1e-12, "j={j} n={n_opp} p={p}: {got} vs {total}");
            }
        }
    }
}

#[test]
fn zero_branch_agrees_with_oracle() {
    // e_L = 0.5 of V = 1 with n=4, i=2, c=0.5: d = 0.25, low = 0.5^0.25
    let mut h = BidHistory::new();
    h.push(UserId(0), 0.5);
    let s = situation(4, 2, 0.5, 1.0, 1);
    let low = s.lower_threshold(&h);
    assert!((low - 0.5f64.powf(0.25)).abs() < 1e-12);
    for k in 1..=20 {
        let theta = low * k as f64 / 21.0;
        let bid = best_response_bid(&s, theta, &h);
        assert_eq!(bid.effort, 0.0);
        assert_eq!(numeric_best_response(&s, theta, &h), 0.0);
    }
}

#[test]
fn binding_middle_branch_agrees_with_oracle() {
    // the unconstrained optimum lies below e_L, so the best feasible bid is e_L
    let mut h = BidHistory::new();
    h.push(UserId(0), 0.3);
    let s = situation(4, 2, 0.5, 1.0, 1);
    let (low, high) = (s.lower_threshold(&h), s.upper_threshold(&h));
    assert!(low < high);
    let mut checked = 0;
    for k in 1..200 {
        let theta = low + (high - low) * k as f64 / 200.0;
        if theta > 1.0 {
            break;
        }
        let bid = best_response_bid(&s, theta, &h);
        let free = interior_bid(4, 2, 0.5, 1.0, theta).unwrap();
        if free <= 0.3 {
            assert_eq!(bid.branch, BidBranch::Match { rank: 1 });
            assert_eq!(bid.effort, 0.3);
            let numeric = numeric_best_response(&s, theta, &h);
            assert!((numeric - 0.3).abs() <= 1e-4 * 0.3, "theta={theta}: {numeric}");
            checked += 1;
        }
    }
    assert!(checked > 10);
}

#[test]
fn last_bidder_matches_or_drops() {
    let mut h = BidHistory::new();
    h.push(UserId(0), 0.4);
    h.push(UserId(1), 0.1);
    let s = situation(3, 3, 0.5, 1.0, 1);
    assert_eq!(best_response_bid(&s, 0.5, &h).effort, 0.4);
    assert_eq!(best_response_bid(&s, 0.3, &h).effort, 0.0);
    assert_eq!(follower_exponent(3, 3, 0.5), 1.0);
}

#[test]
fn fixed_point_prize_value_is_consistent() {
    let contest = Contest {
        dist: AbilityDistribution::new(0.5).unwrap(),
        prizes: PrizeStructure::equal_split(10.0, 3).unwrap(),
        bidders: 6,
        v_bar_mode: VBarMode::FixedPoint,
    };
    let h = BidHistory::new();
    for k in 1..=10 {
        let theta = k as f64 / 10.0;
        let bid = contest.bid(1, theta, &h);
        assert!(bid.converged);
        assert!(bid.v_bar > 0.0 && bid.v_bar <= 10.0 / 3.0 + 1e-12);
        assert!(bid.effort <= bid.v_bar);
    }
}

#[test]
fn ability_samples_follow_the_power_law() {
    let n = 100_000;
    let c = 0.5;
    let mut xs = sample_abilities(n, c, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
    xs.sort_by(f64::total_cmp);
    let dist = AbilityDistribution::new(c).unwrap();
    let mut d = 0.0f64;
    for (k, &x) in xs.iter().enumerate() {
        let f = dist.cdf(x).unwrap();
        d = d.max((f - k as f64 / n as f64).abs()).max(((k + 1) as f64 / n as f64 - f).abs());
    }
    // 1% critical value of the one-sample KS statistic
    assert!(d < 1.628 / (n as f64).sqrt(), "KS statistic {d}");
}
