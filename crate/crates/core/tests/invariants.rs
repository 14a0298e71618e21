//! Property tests for the distribution layer, stage plans, walk bounds, and
//! the tight two-point construction, plus a Monte Carlo floor for the blind
//! matcher. These pin the structural invariants the policies rely on.

use perish_core::bounds::{walk_limit, walk_reach_prob};
use perish_core::dist::{random_mhr_explicit, HorizonDistribution, ValueDistribution};
use perish_core::policies::{blind_match, two_point_optimal_single};
use perish_core::prophet::Instance;
use perish_core::simulator::{monte_carlo, Policy};
use perish_core::stages::{build_stage_plan, expected_remaining, StageKind};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn uniform_values(lo: u64, hi: u64) -> ValueDistribution {
    let n = (hi - lo + 1) as f64;
    ValueDistribution::DiscreteAtoms { atoms: (lo..=hi).map(|v| (v as f64, 1.0 / n)).collect() }
}

/// Any of the four named horizon families with small parameters.
fn named_horizon() -> impl Strategy<Value = HorizonDistribution> {
    prop_oneof![
        (1.0f64..=20.0).prop_map(|mean| HorizonDistribution::Geometric { mean }),
        (1u64..=30).prop_map(|n| HorizonDistribution::Deterministic { n }),
        (1u64..=10)
            .prop_flat_map(|lo| (Just(lo), lo..=lo + 20))
            .prop_map(|(lo, hi)| HorizonDistribution::UniformRange { lo, hi }),
        ((1.0f64..=20.0), (1u64..=50))
            .prop_map(|(mean, cap)| HorizonDistribution::TruncatedGeometric { mean, cap }),
    ]
}

/// A discrete value distribution over a few distinct non-negative atoms.
fn discrete_values() -> impl Strategy<Value = ValueDistribution> {
    proptest::collection::btree_set(0u32..=40, 1..=4)
        .prop_flat_map(|vals| {
            let n = vals.len();
            (Just(vals), proptest::collection::vec(1u32..=9, n))
        })
        .prop_map(|(vals, weights)| {
            let total: f64 = weights.iter().map(|&w| w as f64).sum();
            let atoms = vals
                .into_iter()
                .zip(weights)
                .map(|(v, w)| (v as f64 / 2.0, w as f64 / total))
                .collect();
            ValueDistribution::DiscreteAtoms { atoms }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// The named families all have monotone hazards, unit mass, and
    /// non-increasing survival starting at 1.
    #[test]
    fn named_families_are_mhr(d in named_horizon()) {
        let d = d.validated().unwrap();
        prop_assert!(d.is_mhr());
        prop_assert_eq!(d.survival(1), 1.0);
        let mut prev = 1.0;
        for t in 1..=80u64 {
            let s = d.survival(t);
            prop_assert!(s <= prev + 1e-12, "survival rose at {}", t);
            prev = s;
        }
        if let Some(n) = d.support_max() {
            let mass: f64 = (1..=n).map(|t| d.pmf(t)).sum();
            prop_assert!((mass - 1.0).abs() < 1e-9, "pmf mass {}", mass);
            prop_assert_eq!(d.survival(n + 1), 0.0);
        }
    }

    /// Randomly generated explicit MHR pmfs classify as MHR and are
    /// second-order dominated by the same-mean geometric.
    #[test]
    fn random_mhr_pmfs_dominate_geometric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = random_mhr_explicit(&mut rng, 30);
        prop_assert!(d.is_mhr());
        let (holds, witness) = d.sosd_vs_geometric(150);
        prop_assert!(holds, "dominance failed at threshold {:?}", witness);
    }

    /// Stage plans: contiguous stages, geometric cap decay, boundaries that
    /// are exactly the first steps meeting their targets, and a final phase
    /// holding at most 10 items in expectation.
    #[test]
    fn stage_plan_invariants(
        m in 1usize..=60,
        mean in 1.0f64..=12.0,
        rho in 0.2f64..=0.8,
    ) {
        let inst = Instance::iid(
            m,
            HorizonDistribution::Geometric { mean },
            uniform_values(1, 4),
            4_000,
        ).unwrap();
        let plan = build_stage_plan(&inst, rho).unwrap();
        prop_assert_eq!(plan.stages.len(), plan.s as usize);
        let mf = m as f64;
        prop_assert!(mf * rho.powi(plan.s as i32) <= 10.0 + 1e-9);
        if plan.s > 0 {
            prop_assert!(mf * rho.powi(plan.s as i32 - 1) > 10.0);
        }
        let mut expect_start = 1u64;
        for stage in &plan.stages {
            prop_assert_eq!(stage.start, expect_start);
            prop_assert!(stage.end >= stage.start);
            let cap = mf * rho.powi(stage.k as i32);
            prop_assert!((stage.cap - cap).abs() <= 1e-9 * cap);
            // end = t + 1 for the minimal t with E[remaining at t] <= cap.
            prop_assert!(expected_remaining(&inst.horizons, stage.end - 1) <= stage.cap + 1e-9);
            if stage.end >= 2 {
                prop_assert!(
                    expected_remaining(&inst.horizons, stage.end - 2) > stage.cap,
                    "boundary not minimal at stage {}", stage.k
                );
            }
            let expected_kind = match stage.end - stage.start {
                0 => StageKind::Empty,
                1 => StageKind::Short,
                _ => StageKind::Long,
            };
            prop_assert_eq!(stage.kind, expected_kind);
            expect_start = stage.end;
        }
        prop_assert_eq!(plan.final_start, expect_start);
        prop_assert!(
            expected_remaining(&inst.horizons, plan.final_start - 1) <= 10.0 + 1e-9
        );
    }

    /// Ruin probabilities are probabilities, grow with the step budget, and
    /// never exceed the infinite-horizon limit.
    #[test]
    fn walk_probabilities_are_monotone(j in 1u32..=16, x in 0.0f64..=1.0) {
        let f = walk_reach_prob(j, x);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(walk_reach_prob(j + 1, x) >= f - 1e-15);
        prop_assert!(f <= walk_limit(x) + 1e-12);
    }

    /// The two-point construction stays within its designed envelope: the
    /// prophet dominates, and the ratio never exceeds 2 - 1/mu.
    #[test]
    fn two_point_ratio_is_enveloped(mu in 1.0f64..=30.0, p in 1e-6f64..=0.5) {
        let out = two_point_optimal_single(mu, p).unwrap();
        prop_assert!(out.v_high >= 1.0);
        prop_assert!(out.pro >= out.alg_star - 1e-12);
        prop_assert!(out.ratio <= 2.0 - 1.0 / mu + 1e-9, "ratio {}", out.ratio);
    }

    /// Quantile rules hit their acceptance targets exactly (randomized
    /// tie-breaking fills the atom gap), and the conditional mean they
    /// accept is at least the distribution's mean.
    #[test]
    fn threshold_rules_meet_targets(v in discrete_values(), q in 0.01f64..=1.0) {
        let rule = v.threshold_for_acceptance(q).unwrap();
        prop_assert!((v.acceptance_probability(&rule) - q).abs() < 1e-9);
        let cond = v.cond_exp_accepted(&rule).unwrap();
        prop_assert!(cond >= v.mean() - 1e-9, "cond {} below mean {}", cond, v.mean());
    }
}

/// Monte Carlo floor for the blind matcher: on 40 fast-departing items its
/// welfare covers the short-stage total `E[V] * (#Short stages)` up to the
/// 2.3 approximation factor.
#[test]
fn blind_match_covers_short_stages() {
    let inst = Instance::iid(
        40,
        HorizonDistribution::Geometric { mean: 2.0 },
        uniform_values(1, 100),
        80,
    )
    .unwrap();
    let plan = build_stage_plan(&inst, 0.5).unwrap();
    let shorts = plan.stages.iter().filter(|s| s.kind == StageKind::Short).count();
    assert!(shorts >= 1, "expected at least one short stage, got plan {plan:?}");
    let mean_value = 50.5;
    let floor = mean_value * shorts as f64 / 2.3;

    let factory = |_t: u64, _rng: ChaCha8Rng| Box::new(blind_match(&inst)) as Box<dyn Policy>;
    let rep = monte_carlo(&inst, &factory, 10_000, 424242, true).unwrap();
    assert!(
        rep.alg.mean >= floor - 3.0 * rep.alg.stderr,
        "blind welfare {} +- {} below floor {floor}",
        rep.alg.mean,
        rep.alg.stderr
    );
}
