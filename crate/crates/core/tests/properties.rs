use std::cell::RefCell;

use proptest::prelude::*;

use fairaudit::auditor::{oracle_audit, OracleAuditConfig};
use fairaudit::baselines::{phased_cal_audit, CalMode};
use fairaudit::domain::{diam_mu, disagreement_mass, disagreement_region, mu, restrict, version_space, within_tolerance};
use fairaudit::gaussian::{estimate_positive, inverse_root_sum, random_model};
use fairaudit::harness::evaluate::mp_diameter;
use fairaudit::harness::generate::gen_random_class;
use fairaudit::minimax::{best_query, cost, minimax_audit, CostTable};
use fairaudit::oracle::{CountingOracle, FnOracle};
use fairaudit::{HypothesisClass, Label, LabelOracle, Transcript, VersionSpace};

fn class_strategy(max_m: usize, max_k: usize) -> impl Strategy<Value = HypothesisClass> {
    (2..=max_m, 2..=max_k, any::<u64>()).prop_filter_map("degenerate", |(m, k, s)| gen_random_class(m, k, s).ok())
}

fn subset(class: &HypothesisClass, mask: u64) -> VersionSpace {
    VersionSpace::from_members(class.len(), (0..class.len()).filter(|i| mask >> (i % 64) & 1 == 1))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn negation_flips_mu(class in class_strategy(10, 12), i in any::<prop::sample::Index>()) {
        let h = class.hypothesis(i.index(class.len()));
        let d = class.domain();
        prop_assert!((mu(h, d).unwrap() + mu(&h.negate(), d).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn restriction_shrinks(class in class_strategy(10, 16), x in 0usize..10, pos in any::<bool>(), mask in any::<u64>()) {
        let x = x % class.num_examples();
        let y = if pos { Label::Pos } else { Label::Neg };
        let v = subset(&class, mask);
        let r = restrict(&v, x, y, &class);
        prop_assert!(r.is_subset(&v));
        let t = Transcript::from_entries([(x, y)]).unwrap();
        prop_assert!(version_space(&class, &t).is_subset(&class.full_space()));
        if !r.is_empty() {
            prop_assert!(diam_mu(&r, &class).unwrap().value <= diam_mu(&v, &class).unwrap().value);
        }
    }

    #[test]
    fn mu_gap_bounded_by_disagreement(class in class_strategy(10, 16)) {
        let d = class.domain();
        for i in 0..class.len() {
            for j in 0..class.len() {
                let gap = (class.mu_of(i) - class.mu_of(j)).abs();
                let dis = disagreement_mass(class.hypothesis(i), class.hypothesis(j), d).unwrap();
                prop_assert!(gap <= dis / d.min_group_prob() + 1e-12);
            }
        }
    }

    #[test]
    fn cost_structure(class in class_strategy(7, 12), eps in prop::sample::select(vec![0.1, 0.25]), mask in any::<u64>()) {
        let mut table = CostTable::new(eps);
        let full = class.full_space();
        let c_full = cost(&full, eps, &class, &mut table).unwrap();
        let v = subset(&class, mask);
        prop_assume!(!v.is_empty());
        let c = cost(&v, eps, &class, &mut table).unwrap();
        prop_assert!(c <= c_full);
        let dis = disagreement_region(&v, &class).unwrap();
        prop_assert!(c as usize <= dis.count());
        if c >= 1 {
            let best = best_query(&v, eps, &class, &mut table).unwrap();
            for x in dis.iter() {
                let worst = [Label::Pos, Label::Neg]
                    .iter()
                    .map(|&y| restrict(&v, x, y, &class))
                    .filter(|r| !r.is_empty())
                    .map(|r| cost(&r, eps, &class, &mut table).unwrap())
                    .max()
                    .unwrap();
                prop_assert!(worst + 1 >= c);
                if x == best {
                    prop_assert_eq!(worst + 1, c);
                }
            }
        } else {
            prop_assert!(within_tolerance(diam_mu(&v, &class).unwrap().value, eps));
        }
    }

    #[test]
    fn adversary_forces_full_cost(class in class_strategy(7, 12), eps in prop::sample::select(vec![0.1, 0.25])) {
        let mut table = CostTable::new(eps);
        let c = cost(&class.full_space(), eps, &class, &mut table).unwrap();
        let state = RefCell::new((class.full_space(), CostTable::new(eps)));
        let adversary = FnOracle(|x: usize| {
            let (v, t) = &mut *state.borrow_mut();
            let mut pick = (None, Label::Pos);
            for y in [Label::Pos, Label::Neg] {
                let r = restrict(v, x, y, &class);
                if r.is_empty() {
                    continue;
                }
                let cr = cost(&r, eps, &class, t).unwrap();
                if pick.0.is_none_or(|best| cr > best) {
                    pick = (Some(cr), y);
                }
            }
            *v = restrict(v, x, pick.1, &class);
            Ok(pick.1)
        });
        let r = minimax_audit(adversary, &class, eps, None, &mut table).unwrap();
        prop_assert_eq!(r.queries, c as usize);
    }

    #[test]
    fn replayed_transcript_matches_model(class in class_strategy(10, 16), xs in prop::collection::vec(0usize..10, 0..30), i in any::<prop::sample::Index>()) {
        let mut target = class.hypothesis(i.index(class.len())).clone();
        let mut o = CountingOracle::new(target.clone());
        for &x in &xs {
            o.query(x % class.num_examples()).unwrap();
        }
        let distinct: std::collections::HashSet<usize> = xs.iter().map(|x| x % class.num_examples()).collect();
        prop_assert_eq!(o.queries(), distinct.len());
        for &(x, y) in o.transcript().entries() {
            prop_assert_eq!(target.query(x).unwrap(), y);
        }
    }

    #[test]
    fn inverse_root_sum_is_lipschitz(
        u in prop::collection::vec(-50.0f64..50.0, 1..8),
        noise in prop::collection::vec(-1.0f64..1.0, 8),
    ) {
        let v: Vec<f64> = u.iter().zip(&noise).map(|(a, b)| a + b).collect();
        let sup = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!((inverse_root_sum(&u) - inverse_root_sum(&v)).abs() <= sup + 1e-9);
    }

    #[test]
    fn same_sign_tests_bound_the_crossing(d in 1usize..6, seed in any::<u64>(), eps in prop::sample::select(vec![0.05, 0.02])) {
        let model = random_model(d, seed);
        let g = estimate_positive(model.clone(), eps).unwrap();
        for t in &g.tests {
            if t.same_sign {
                prop_assert!(model.crossing(t.coord).abs() >= t.radius);
            }
        }
    }

    #[test]
    fn budgeted_diameters_shrink(class in class_strategy(8, 16), seed in any::<u64>(), i in any::<prop::sample::Index>()) {
        let eps = 0.1;
        let h = class.hypothesis(i.index(class.len())).clone();
        let mut last = [f64::INFINITY; 3];
        let mut table = CostTable::new(eps);
        for budget in 0..6 {
            let runs = [
                minimax_audit(h.clone(), &class, eps, Some(budget), &mut table).unwrap().transcript,
                oracle_audit(h.clone(), &class, &OracleAuditConfig { eps, delta: 0.1, seed, budget: Some(budget) }).unwrap().result.transcript,
                phased_cal_audit(h.clone(), &class, eps, seed, CalMode::Sampled, Some(budget)).unwrap().result.transcript,
            ];
            for (k, t) in runs.iter().enumerate() {
                let d = mp_diameter(&class, t).unwrap();
                prop_assert!(d <= last[k] + 1e-12, "method {k} budget {budget}");
                last[k] = d;
            }
        }
    }
}

/// For any coordinates off S at least beta away and estimates on S within
/// eps, the restricted estimate is within 2 eps of the full value.
#[test]
fn truncated_crossings_estimate_r() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    for _ in 0..2000 {
        let d = rng.random_range(1..=6usize);
        let eps: f64 = [0.05, 0.02, 0.01][rng.random_range(0..3)];
        let alpha = fairaudit::gaussian::alpha(d, eps);
        let beta = fairaudit::gaussian::beta(d, eps);
        let mut m = Vec::new();
        let mut hat = Vec::new();
        for _ in 0..d {
            if rng.random_bool(0.5) {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                m.push(sign * rng.random_range(beta..10.0 * beta));
            } else {
                let v = rng.random_range(-alpha..alpha);
                m.push(v);
                hat.push(v + rng.random_range(-eps..eps));
            }
        }
        let r = inverse_root_sum(&m);
        if r > alpha || hat.is_empty() {
            continue;
        }
        assert!((inverse_root_sum(&hat) - r).abs() <= 2.0 * eps + 1e-12, "m = {m:?} hat = {hat:?}");
    }
}
