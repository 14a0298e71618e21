//! Doubling stage plans over the expected number of surviving items.
//!
//! Time is cut into stages at the steps where the expected count of items
//! still on the shelf crosses the geometric targets `m*rho^k`. Stage `k`
//! spans `[l_k, r_k)` with `l_1 = 1`, `l_{k+1} = r_k`, and
//! `r_k = min { t+1 : sum_i Pr[h_i > t] <= m*rho^k }`. The plan stops at the
//! smallest `s` with `m*rho^s <= 10`; everything from `r_s` on is the final
//! phase, handled by single-item policies.

use serde::{Deserialize, Serialize};

use crate::dist::HorizonDistribution;
use crate::error::{Error, Result};
use crate::prophet::Instance;

/// How many priceable steps a stage contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    /// `r_k - l_k >= 2`: room for at least one posted price.
    Long,
    /// `r_k - l_k == 1`: a single step, too short to price within.
    Short,
    /// `r_k == l_k`: the survivor count crossed two targets at one step.
    Empty,
}

/// One stage `[start, end)` of the plan (1-based steps, `end` exclusive).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub k: u32,
    pub start: u64,
    pub end: u64,
    pub kind: StageKind,
    /// Target expected survivor count at the stage's right boundary:
    /// `m * rho^k`.
    pub cap: f64,
}

impl Stage {
    /// Stage length `r_k - l_k` in steps.
    pub fn len(&self) -> u64 {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }
}

/// A full stage plan for an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StagePlan {
    pub m: usize,
    pub rho: f64,
    /// Number of stages: smallest `s` with `m * rho^s <= 10`.
    pub s: u32,
    pub stages: Vec<Stage>,
    /// First step of the final phase, `r_s` (1 when `s == 0`).
    pub final_start: u64,
}

impl StagePlan {
    /// Target expected survivor count entering stage `k` (`m * rho^{k-1}`).
    pub fn entry_cap(&self, k: u32) -> f64 {
        if k <= 1 {
            self.m as f64
        } else {
            self.stages[(k - 2) as usize].cap
        }
    }
}

/// Expected number of items whose horizon exceeds `t`:
/// `sum_i Pr[h_i > t] = sum_i survival_i(t + 1)`.
pub fn expected_remaining(horizons: &[HorizonDistribution], t: u64) -> f64 {
    horizons.iter().map(|d| d.survival(t + 1)).sum()
}

/// Scan budget: boundary searches give up past this step count.
const SCAN_LIMIT: u64 = 10_000_000;

/// Smallest `t` with `expected_remaining(t) <= thresh`, starting the scan at
/// `lo` (callers pass the previous boundary; the expectation is
/// non-increasing in `t`).
fn boundary_scan(horizons: &[HorizonDistribution], thresh: f64, lo: u64) -> Result<u64> {
    let mut t = lo;
    while expected_remaining(horizons, t) > thresh {
        t += 1;
        if t > SCAN_LIMIT {
            return Err(Error::NoConvergence(format!(
                "stage boundary scan passed step {SCAN_LIMIT} without reaching target {thresh}"
            )));
        }
    }
    Ok(t)
}

/// For a homogeneous geometric instance the survivor expectation is
/// `m * q^t`, so the boundary has the closed form
/// `t = ceil(ln(thresh/m) / ln q)`; a local fix-up pins down the exact
/// minimal `t` under the same float comparisons as the scan.
fn boundary_geometric(
    horizons: &[HorizonDistribution],
    q: f64,
    m: f64,
    thresh: f64,
    lo: u64,
) -> Result<u64> {
    if q <= 0.0 {
        // Mean-1 horizons: everything departs after step 1.
        return boundary_scan(horizons, thresh, lo);
    }
    let guess = ((thresh / m).ln() / q.ln()).ceil();
    let mut t = if guess.is_finite() && guess > 0.0 { guess as u64 } else { 0 };
    t = t.max(lo);
    while t > lo && expected_remaining(horizons, t - 1) <= thresh {
        t -= 1;
    }
    boundary_scan(horizons, thresh, t)
}

/// Builds the stage plan. `rho` is the per-stage decay target in `(0, 1)`;
/// 1/2 is the conventional choice.
pub fn build_stage_plan(inst: &Instance, rho: f64) -> Result<StagePlan> {
    build_stage_plan_impl(inst, rho, true)
}

fn build_stage_plan_impl(inst: &Instance, rho: f64, allow_shortcut: bool) -> Result<StagePlan> {
    if !(rho > 0.0 && rho < 1.0) || !rho.is_finite() {
        return Err(Error::InvalidParameter(format!("rho must lie in (0,1), got {rho}")));
    }
    let m = inst.m();
    let mf = m as f64;

    // Smallest s with m * rho^s <= 10, by the same repeated multiplication
    // used for the per-stage targets below.
    let mut s = 0u32;
    let mut thresh = mf;
    while thresh > 10.0 {
        s += 1;
        thresh *= rho;
        if s > 10_000 {
            return Err(Error::NoConvergence("stage count did not converge".into()));
        }
    }

    // Homogeneous-geometric shortcut applies when every horizon is the same
    // geometric distribution.
    let geom_q = match &inst.horizons[0] {
        HorizonDistribution::Geometric { mean } if allow_shortcut => {
            let all_same = inst
                .horizons
                .iter()
                .all(|d| matches!(d, HorizonDistribution::Geometric { mean: m2 } if m2 == mean));
            if all_same {
                Some(1.0 - 1.0 / mean)
            } else {
                None
            }
        }
        _ => None,
    };

    let mut stages = Vec::with_capacity(s as usize);
    let mut start = 1u64;
    let mut target = mf;
    let mut prev_t = 0u64;
    for k in 1..=s {
        target *= rho;
        let t = match geom_q {
            Some(q) => boundary_geometric(&inst.horizons, q, mf, target, prev_t)?,
            None => boundary_scan(&inst.horizons, target, prev_t)?,
        };
        let end = t + 1;
        debug_assert!(end >= start);
        let kind = match end - start {
            0 => StageKind::Empty,
            1 => StageKind::Short,
            _ => StageKind::Long,
        };
        stages.push(Stage { k, start, end, kind, cap: target });
        start = end;
        prev_t = t;
    }

    Ok(StagePlan { m, rho, s, stages, final_start: start })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::HorizonDistribution as H;
    use crate::dist::ValueDistribution as V;
    use crate::prophet::ValueProcess;
    use rand::Rng;
    use rand::SeedableRng;

    fn unit_value() -> V {
        V::DiscreteAtoms { atoms: vec![(1.0, 1.0)] }
    }

    fn iid_inst(m: usize, h: H) -> Instance {
        Instance::new(vec![h; m], ValueProcess::Iid(unit_value()), 1 << 40).unwrap()
    }

    fn mixed_inst(hs: Vec<H>) -> Instance {
        Instance::new(hs, ValueProcess::Iid(unit_value()), 1 << 40).unwrap()
    }

    /// Minimality: every boundary satisfies its target and is the first step
    /// to do so.
    fn assert_plan_invariants(inst: &Instance, plan: &StagePlan) {
        let mf = plan.m as f64;
        assert_eq!(plan.s as usize, plan.stages.len());
        assert!(mf * plan.rho.powi(plan.s as i32) <= 10.0 + 1e-9);
        if plan.s > 0 {
            assert!(mf * plan.rho.powi(plan.s as i32 - 1) > 10.0);
        }
        let mut start = 1u64;
        for st in &plan.stages {
            assert_eq!(st.start, start);
            assert!(st.end >= st.start, "stage boundaries out of order");
            let t = st.end - 1;
            assert!(
                expected_remaining(&inst.horizons, t) <= st.cap,
                "boundary misses target at stage {}",
                st.k
            );
            if t > 0 {
                assert!(
                    expected_remaining(&inst.horizons, t - 1) > st.cap,
                    "boundary not minimal at stage {}",
                    st.k
                );
            }
            start = st.end;
        }
        assert_eq!(plan.final_start, start);
    }

    #[test]
    fn expected_remaining_mixed_families() {
        let hs = [
            H::Deterministic { n: 2 },
            H::Deterministic { n: 5 },
            H::Geometric { mean: 4.0 },
        ];
        // At t=2: 0 + 1 + (3/4)^2.
        let got = expected_remaining(&hs, 2);
        assert!((got - (1.0 + 0.5625)).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn geometric_mean_two_gives_two_short_stages() {
        let inst = iid_inst(40, H::Geometric { mean: 2.0 });
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.s, 2);
        assert_eq!(plan.stages.len(), 2);
        assert_eq!((plan.stages[0].start, plan.stages[0].end), (1, 2));
        assert_eq!((plan.stages[1].start, plan.stages[1].end), (2, 3));
        assert!(plan.stages.iter().all(|s| s.kind == StageKind::Short));
        assert_eq!(plan.final_start, 3);
        assert_plan_invariants(&inst, &plan);
    }

    #[test]
    fn geometric_mean_eight_gives_long_stages() {
        // 40 * (7/8)^t <= 20 first at t=6 (40*q^5=20.51, 40*q^6=17.9), and
        // <= 10 first at t=11.
        let inst = iid_inst(40, H::Geometric { mean: 8.0 });
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.s, 2);
        assert_eq!((plan.stages[0].start, plan.stages[0].end), (1, 7));
        assert_eq!((plan.stages[1].start, plan.stages[1].end), (7, 12));
        assert!(plan.stages.iter().all(|s| s.kind == StageKind::Long));
        assert_eq!(plan.final_start, 12);
        assert_plan_invariants(&inst, &plan);
    }

    #[test]
    fn small_market_has_no_stages() {
        let inst = iid_inst(8, H::Geometric { mean: 3.0 });
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.s, 0);
        assert!(plan.stages.is_empty());
        assert_eq!(plan.final_start, 1);
    }

    #[test]
    fn deterministic_horizons_produce_empty_stage() {
        // All mass at h=5: the survivor count drops from 40 to 0 at t=5, so
        // both targets are crossed at the same boundary.
        let inst = iid_inst(40, H::Deterministic { n: 5 });
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.s, 2);
        assert_eq!((plan.stages[0].start, plan.stages[0].end), (1, 6));
        assert_eq!(plan.stages[0].kind, StageKind::Long);
        assert_eq!((plan.stages[1].start, plan.stages[1].end), (6, 6));
        assert_eq!(plan.stages[1].kind, StageKind::Empty);
        assert_eq!(plan.final_start, 6);
        assert_plan_invariants(&inst, &plan);
    }

    #[test]
    fn rho_other_than_half() {
        let inst = iid_inst(100, H::Geometric { mean: 5.0 });
        let plan = build_stage_plan(&inst, 0.3).unwrap();
        // 100 * 0.3 = 30 > 10, 100 * 0.09 = 9 <= 10.
        assert_eq!(plan.s, 2);
        assert_plan_invariants(&inst, &plan);
        assert!(build_stage_plan(&inst, 0.0).is_err());
        assert!(build_stage_plan(&inst, 1.0).is_err());
    }

    #[test]
    fn entry_cap_walks_targets() {
        let inst = iid_inst(40, H::Geometric { mean: 8.0 });
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.entry_cap(1), 40.0);
        assert_eq!(plan.entry_cap(2), 20.0);
    }

    #[test]
    fn plan_is_permutation_invariant() {
        let mut hs = vec![
            H::Geometric { mean: 6.0 },
            H::Deterministic { n: 9 },
            H::UniformRange { lo: 2, hi: 14 },
        ];
        let mut all = Vec::new();
        for _ in 0..10 {
            all.extend(hs.iter().cloned());
        }
        let plan_a = build_stage_plan(&mixed_inst(all.clone()), 0.5).unwrap();
        hs.rotate_left(1);
        let mut rotated = Vec::new();
        for _ in 0..10 {
            rotated.extend(hs.iter().cloned());
        }
        let plan_b = build_stage_plan(&mixed_inst(rotated), 0.5).unwrap();
        assert_eq!(plan_a.stages, plan_b.stages);
        assert_plan_invariants(&mixed_inst(all), &plan_a);
    }

    #[test]
    fn geometric_shortcut_agrees_with_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xabcdef);
        for _ in 0..200 {
            let m = rng.gen_range(11..=500usize);
            let mean = 1.0 + rng.gen::<f64>() * 49.0;
            let inst = iid_inst(m, H::Geometric { mean });
            let fast = build_stage_plan_impl(&inst, 0.5, true).unwrap();
            let slow = build_stage_plan_impl(&inst, 0.5, false).unwrap();
            assert_eq!(fast, slow, "m={m} mean={mean}");
        }
        // Mean 1 exercises the q=0 branch of the shortcut.
        let inst = iid_inst(64, H::Geometric { mean: 1.0 });
        let fast = build_stage_plan_impl(&inst, 0.5, true).unwrap();
        let slow = build_stage_plan_impl(&inst, 0.5, false).unwrap();
        assert_eq!(fast, slow);
        assert_plan_invariants(&inst, &fast);
    }

    #[test]
    fn mixed_families_large_market() {
        let mut hs = Vec::new();
        for i in 0..60u64 {
            hs.push(match i % 4 {
                0 => H::Geometric { mean: 3.0 },
                1 => H::Deterministic { n: 4 + (i % 7) },
                2 => H::UniformRange { lo: 1, hi: 9 },
                _ => H::TruncatedGeometric { mean: 6.0, cap: 30 },
            });
        }
        let inst = mixed_inst(hs);
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_plan_invariants(&inst, &plan);
        // Boundaries never decrease.
        for w in plan.stages.windows(2) {
            assert!(w[1].end >= w[0].end);
        }
    }
}
