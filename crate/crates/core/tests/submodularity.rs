use bbs_core::coverage::{build_manhattan_grid, marginal_utility, utility, CoveredSet, Selection, SensingProfile, UserId};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Union size of the users in `mask`, computed on bit masks.
fn oracle(profiles: &[u64], mask: u32) -> u32 {
    let mut u = 0u64;
    for (k, p) in profiles.iter().enumerate() {
        if mask >> k & 1 == 1 {
            u |= p;
        }
    }
    u.count_ones()
}

fn to_profile(bits: u64) -> SensingProfile {
    SensingProfile::new((0..64).filter(|b| bits >> b & 1 == 1))
}

fn selection(profiles: &[u64], mask: u32) -> Selection {
    let mut s = Selection::new();
    for (k, &p) in profiles.iter().enumerate() {
        if mask >> k & 1 == 1 {
            s.insert(UserId(k as u32), to_profile(p)).unwrap();
        }
    }
    s
}

#[test]
fn exhaustive_small_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for m in 1..=10u32 {
        let grid = build_manhattan_grid(1, 0, m as f64, 0.0, 1.0).unwrap();
        assert_eq!(grid.len(), m as usize);
        for n in 1..=5usize {
            for _ in 0..8 {
                let profiles: Vec<u64> = (0..n).map(|_| rng.random::<u64>() & ((1u64 << m) - 1)).collect();
                let full = (1u32 << n) - 1;
                let utilities: Vec<usize> = (0..=full).map(|s| utility(&selection(&profiles, s), &grid).unwrap()).collect();
                for s in 0..=full {
                    assert_eq!(utilities[s as usize] as u32, oracle(&profiles, s));
                }
                for big in 0..=full {
                    // every subset of `big`
                    let mut small = big;
                    loop {
                        assert!(utilities[small as usize] <= utilities[big as usize]);
                        for k in 0..n {
                            if big >> k & 1 == 1 {
                                continue;
                            }
                            let with = |s: u32| utilities[(s | 1 << k) as usize] - utilities[s as usize];
                            assert!(with(small) >= with(big));
                            let lib = marginal_utility(UserId(k as u32), &to_profile(profiles[k]), &selection(&profiles, small), &grid)
                                .unwrap();
                            assert_eq!(lib, with(small));
                        }
                        if small == 0 {
                            break;
                        }
                        small = (small - 1) & big;
                    }
                }
            }
        }
    }
}

fn instance() -> impl Strategy<Value = (usize, Vec<Vec<u32>>, u32, u32, usize)> {
    (1usize..=50, 2usize..=12).prop_flat_map(|(m, n)| {
        (
            Just(m),
            prop::collection::vec(prop::collection::vec(0..m as u32, 0..=m), n),
            any::<u32>(),
            any::<u32>(),
            0..n,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10_000, ..ProptestConfig::default() })]

    #[test]
    fn randomized_triples((m, raw, a, b, k) in instance()) {
        let n = raw.len();
        let profiles: Vec<SensingProfile> = raw.into_iter().map(SensingProfile::new).collect();
        let mask = (1u32 << n) - 1;
        let big = (a & mask) & !(1 << k);
        let small = big & b;
        let cover = |s: u32| {
            let mut c = CoveredSet::new(m);
            for (j, p) in profiles.iter().enumerate() {
                if s >> j & 1 == 1 {
                    c.insert(p);
                }
            }
            c
        };
        let (cs, cb) = (cover(small), cover(big));
        prop_assert!(cs.count() <= cb.count());
        prop_assert!(cs.marginal(&profiles[k]) >= cb.marginal(&profiles[k]));
    }
}
