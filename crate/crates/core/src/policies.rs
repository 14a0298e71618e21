//! Online pricing policies.
//!
//! Every policy here decides from public information only: the current
//! step, which items are still on the shelf, and departure notifications.
//! Realized horizons and future values are never visible. Matching
//! tie-breaks are always lowest-index, which keeps traces reproducible
//! without affecting any guarantee.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{ThresholdRule, ValueDistribution};
use crate::error::{Error, Result};
use crate::prophet::Instance;
use crate::simulator::{MarketView, Policy, PolicyEvent};
use crate::stages::StagePlan;

/// Which alternating half of the stage sequence a DepartureSimulation
/// instance serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Odd,
    Even,
}

impl Parity {
    /// Stage indices `k` of this parity, in order.
    pub fn stage_ks(self, s: u32) -> impl Iterator<Item = u32> {
        let first = match self {
            Parity::Odd => 1u32,
            Parity::Even => 2u32,
        };
        (first..=s).step_by(2)
    }
}

fn iid_values(inst: &Instance) -> Result<&ValueDistribution> {
    inst.values.iid().ok_or_else(|| {
        Error::InvalidParameter("this policy requires i.i.d. buyer values".into())
    })
}

/// Lowest-index-on-shelf scan with a monotone cursor (items never return).
#[derive(Debug, Default, Clone)]
struct LowestCursor(usize);

impl LowestCursor {
    fn find(&mut self, on_shelf: &[bool]) -> Option<usize> {
        while self.0 < on_shelf.len() && !on_shelf[self.0] {
            self.0 += 1;
        }
        (self.0 < on_shelf.len()).then_some(self.0)
    }
}

// ---------------------------------------------------------------------------
// Fixed-rule policies
// ---------------------------------------------------------------------------

/// Posts one fixed threshold rule forever; lowest-index matching.
pub struct FixedPrice {
    rule: ThresholdRule,
    cursor: LowestCursor,
}

impl FixedPrice {
    pub fn rule(&self) -> ThresholdRule {
        self.rule
    }
}

impl Policy for FixedPrice {
    fn post(&mut self, _view: &MarketView) -> ThresholdRule {
        self.rule
    }

    fn select_item(&mut self, view: &MarketView, _value: f64) -> Option<usize> {
        self.cursor.find(view.on_shelf)
    }
}

/// Single-item fixed pricing: the rule is calibrated so a buyer accepts
/// with probability exactly `1/mu` where `mu` is the item's mean horizon.
pub fn single_fixed_price(inst: &Instance) -> Result<FixedPrice> {
    if inst.m() != 1 {
        return Err(Error::InvalidParameter(format!(
            "single-item pricing needs m = 1, got m = {}",
            inst.m()
        )));
    }
    let v = iid_values(inst)?;
    let mu = inst.horizons[0].mean();
    let rule = v.threshold_for_acceptance(1.0 / mu)?;
    Ok(FixedPrice { rule, cursor: LowestCursor::default() })
}

/// Posts the caller's rule at every step over any number of items.
pub fn fixed_price_multi(_inst: &Instance, rule: ThresholdRule) -> FixedPrice {
    FixedPrice { rule, cursor: LowestCursor::default() }
}

/// Accepts every buyer and hands over the lowest-index item on the shelf.
pub fn blind_match(inst: &Instance) -> FixedPrice {
    fixed_price_multi(inst, ThresholdRule::accept_all())
}

// ---------------------------------------------------------------------------
// Balancing dynamic pricing (homogeneous geometric)
// ---------------------------------------------------------------------------

/// Dynamic pricing that equates acceptance and departure rates: with `k`
/// items left it posts the rule with acceptance probability `k * lambda`.
pub struct BalancingDynamic {
    /// `rules[k-1]` serves states with `k` available items.
    rules: Vec<ThresholdRule>,
    cursor: LowestCursor,
}

impl BalancingDynamic {
    pub fn rules(&self) -> &[ThresholdRule] {
        &self.rules
    }
}

impl Policy for BalancingDynamic {
    fn post(&mut self, view: &MarketView) -> ThresholdRule {
        self.rules[view.available - 1]
    }

    fn select_item(&mut self, view: &MarketView, _value: f64) -> Option<usize> {
        self.cursor.find(view.on_shelf)
    }
}

/// Builds the balancing policy; requires i.i.d. geometric horizons with a
/// common rate `lambda = 1/mean` and `m * lambda <= 1`.
pub fn balancing_dynamic_geometric(inst: &Instance) -> Result<BalancingDynamic> {
    let v = iid_values(inst)?;
    let mean = match &inst.horizons[0] {
        crate::dist::HorizonDistribution::Geometric { mean } => *mean,
        other => {
            return Err(Error::InvalidParameter(format!(
                "balancing policy requires geometric horizons, found {other:?}"
            )));
        }
    };
    if !inst.horizons.iter().all(
        |d| matches!(d, crate::dist::HorizonDistribution::Geometric { mean: m2 } if *m2 == mean),
    ) {
        return Err(Error::InvalidParameter(
            "balancing policy requires identical geometric horizons".into(),
        ));
    }
    let lambda = 1.0 / mean;
    let m = inst.m();
    if m as f64 * lambda > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "balancing policy requires m*lambda <= 1, got {}",
            m as f64 * lambda
        )));
    }
    let rules = (1..=m)
        .map(|k| v.threshold_for_acceptance((k as f64 * lambda).min(1.0)))
        .collect::<Result<Vec<_>>>()?;
    Ok(BalancingDynamic { rules, cursor: LowestCursor::default() })
}

// ---------------------------------------------------------------------------
// DepartureSimulation
// ---------------------------------------------------------------------------

/// One parity stage of the compressed schedule. Real-time steps
/// `start..=end` form the matching window (empty when `end < start`). The
/// candidate set is sampled at `start` with the per-item probabilities
/// below; `rule` is posted inside the window (`None` for stages too short
/// to price).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DsStageInfo {
    pub stage_k: u32,
    pub start: u64,
    pub end: u64,
    pub rule: Option<ThresholdRule>,
    /// Per item: probability of entering the candidate set, i.e. the chance
    /// it would depart during the *next* stage given survival so far:
    /// `Pr[h_i < r_{k+1} | h_i >= l_{k+1} - 1]` (1 when the next stage is
    /// the final phase).
    pub sampling: Vec<f64>,
}

/// Compressed schedule for one parity: stage `k` of the given parity
/// contributes a window of `(r_k - l_k - 1)^+` steps, laid back-to-back
/// from step 1.
pub fn departure_schedule(
    inst: &Instance,
    plan: &StagePlan,
    parity: Parity,
) -> Result<Vec<DsStageInfo>> {
    let v = iid_values(inst)?;
    let mut out = Vec::new();
    let mut cum = 0u64;
    for k in parity.stage_ks(plan.s) {
        let stage = &plan.stages[(k - 1) as usize];
        let full_len = stage.len();
        let window_len = full_len.saturating_sub(1);
        let start = cum + 1;
        let end = cum + window_len;
        cum = end;

        let rule = if full_len >= 2 {
            let target = (plan.entry_cap(k) / full_len as f64).min(1.0);
            Some(v.threshold_for_acceptance(target)?)
        } else {
            None
        };

        // Sampling probability: the chance of departing within stage k+1
        // conditioned on being alive entering it.
        let l_next = stage.end;
        let r_next = if k < plan.s {
            Some(plan.stages[k as usize].end)
        } else {
            None // next stage is the final phase: r = infinity
        };
        let sampling = inst
            .horizons
            .iter()
            .map(|d| match r_next {
                None => 1.0,
                Some(r) => {
                    let base = d.survival(l_next.saturating_sub(1).max(1));
                    if base <= 0.0 {
                        0.0
                    } else {
                        ((base - d.survival(r)) / base).clamp(0.0, 1.0)
                    }
                }
            })
            .collect();

        out.push(DsStageInfo { stage_k: k, start, end, rule, sampling });
    }
    Ok(out)
}

/// The departure-simulation policy: decouples matching from true departures
/// by *sampling* the items that would depart in the subsequent stage and
/// serving only those, on a schedule compressed to this parity's stages.
pub struct DepartureSimulation {
    segments: Vec<DsStageInfo>,
    next_init: usize,
    active: usize,
    /// Items never claimed by any candidate set and not departed.
    a: Vec<bool>,
    /// Current candidate set.
    c: Vec<bool>,
    c_cursor: usize,
    rng: ChaCha8Rng,
    events: Vec<PolicyEvent>,
}

/// Builds the policy for one parity; `rng` drives the candidate-set coins.
pub fn departure_simulation(
    inst: &Instance,
    plan: &StagePlan,
    parity: Parity,
    rng: ChaCha8Rng,
) -> Result<DepartureSimulation> {
    let segments = departure_schedule(inst, plan, parity)?;
    Ok(DepartureSimulation {
        segments,
        next_init: 0,
        active: 0,
        a: vec![true; inst.m()],
        c: vec![false; inst.m()],
        c_cursor: 0,
        rng,
        events: Vec::new(),
    })
}

impl DepartureSimulation {
    pub fn segments(&self) -> &[DsStageInfo] {
        &self.segments
    }

    /// Initializes every segment whose window has started and aligns the
    /// active-segment pointer with `step`.
    fn sync(&mut self, view: &MarketView) {
        while self.next_init < self.segments.len()
            && self.segments[self.next_init].start <= view.step
        {
            let seg = &self.segments[self.next_init];
            // A fresh candidate set replaces the previous one; items left in
            // the old set are spent (they were removed from A at sampling).
            self.c.fill(false);
            self.c_cursor = 0;
            let mut members = Vec::new();
            for i in 0..self.a.len() {
                if self.a[i] && view.on_shelf[i] && self.rng.gen::<f64>() < seg.sampling[i] {
                    self.a[i] = false;
                    self.c[i] = true;
                    members.push(i as u32);
                }
            }
            self.events.push(PolicyEvent::CandidateSetSampled {
                stage: seg.stage_k,
                step: view.step,
                members,
                window_end: seg.end,
            });
            self.next_init += 1;
        }
        while self.active < self.segments.len() && self.segments[self.active].end < view.step {
            self.active += 1;
        }
    }

    fn active_segment(&self, step: u64) -> Option<&DsStageInfo> {
        self.segments
            .get(self.active)
            .filter(|seg| seg.start <= step && step <= seg.end)
    }
}

impl Policy for DepartureSimulation {
    fn post(&mut self, view: &MarketView) -> ThresholdRule {
        self.sync(view);
        match self.active_segment(view.step).and_then(|seg| seg.rule) {
            Some(rule) => rule,
            None => ThresholdRule::reject_all(),
        }
    }

    fn select_item(&mut self, view: &MarketView, _value: f64) -> Option<usize> {
        if self.active_segment(view.step).is_none() {
            return None;
        }
        while self.c_cursor < self.c.len()
            && !(self.c[self.c_cursor] && view.on_shelf[self.c_cursor])
        {
            self.c_cursor += 1;
        }
        if self.c_cursor < self.c.len() {
            // Spend the candidate now; the runner records the match.
            self.c[self.c_cursor] = false;
            Some(self.c_cursor)
        } else {
            None
        }
    }

    fn note_departures(&mut self, _step: u64, departed: &[usize]) {
        for &i in departed {
            self.a[i] = false;
            self.c[i] = false;
        }
    }

    fn drain_events(&mut self) -> Vec<PolicyEvent> {
        std::mem::take(&mut self.events)
    }
}

/// Exact expectation of the candidate-survivor count `M_k`: members of the
/// stage-`k` candidate set still alive at the window's last step. Windows of
/// zero length are omitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MkExpectation {
    pub stage_k: u32,
    pub window_end: u64,
    pub expected: f64,
    /// The concentration target `(1/4) * m * rho^k`.
    pub threshold: f64,
}

pub fn departure_sim_expected_mk(
    inst: &Instance,
    plan: &StagePlan,
    parity: Parity,
) -> Result<Vec<MkExpectation>> {
    let segments = departure_schedule(inst, plan, parity)?;
    let m = inst.m();
    // Per item, probability it is still unclaimed entering each segment.
    let mut unclaimed = vec![1.0f64; m];
    let mut out = Vec::new();
    for seg in &segments {
        if seg.end >= seg.start {
            let mut expected = 0.0;
            for (i, d) in inst.horizons.iter().enumerate() {
                expected += d.survival(seg.end) * unclaimed[i] * seg.sampling[i];
            }
            let k = seg.stage_k;
            out.push(MkExpectation {
                stage_k: k,
                window_end: seg.end,
                expected,
                threshold: plan.stages[(k - 1) as usize].cap / 4.0,
            });
        }
        for i in 0..m {
            unclaimed[i] *= 1.0 - seg.sampling[i];
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// SingleItemSampling
// ---------------------------------------------------------------------------

/// Commits to one item sampled proportionally to its probability of
/// reaching the final phase, then runs single-item fixed pricing on it.
pub struct SingleItemSampling {
    target: usize,
    rule: ThresholdRule,
    events: Vec<PolicyEvent>,
}

impl SingleItemSampling {
    pub fn target(&self) -> usize {
        self.target
    }

    pub fn rule(&self) -> ThresholdRule {
        self.rule
    }
}

/// Builds the policy: `q_i = Pr[h_i >= final_start]`, target drawn with
/// probability `q_i / sum q_j`, reserve price calibrated to acceptance
/// probability `1/mean(H_target)`.
pub fn single_item_sampling(
    inst: &Instance,
    plan: &StagePlan,
    rng: &mut ChaCha8Rng,
) -> Result<SingleItemSampling> {
    let v = iid_values(inst)?;
    let weights: Vec<f64> = inst
        .horizons
        .iter()
        .map(|d| d.survival(plan.final_start))
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSampling(
            "no item survives into the final phase with positive probability".into(),
        ));
    }
    let mut draw = rng.gen::<f64>() * total;
    let mut target = weights.len() - 1;
    for (i, w) in weights.iter().enumerate() {
        if draw < *w {
            target = i;
            break;
        }
        draw -= w;
    }
    let mu = inst.horizons[target].mean();
    let rule = v.threshold_for_acceptance(1.0 / mu)?;
    Ok(SingleItemSampling {
        target,
        rule,
        events: vec![PolicyEvent::TargetSampled { item: target as u32 }],
    })
}

impl Policy for SingleItemSampling {
    fn post(&mut self, view: &MarketView) -> ThresholdRule {
        if view.on_shelf[self.target] {
            self.rule
        } else {
            ThresholdRule::reject_all()
        }
    }

    fn select_item(&mut self, view: &MarketView, _value: f64) -> Option<usize> {
        view.on_shelf[self.target].then_some(self.target)
    }

    fn drain_events(&mut self) -> Vec<PolicyEvent> {
        std::mem::take(&mut self.events)
    }
}

// ---------------------------------------------------------------------------
// MultipleMHR mixture
// ---------------------------------------------------------------------------

/// Mixture weights of the four sub-policies, in branch order
/// (DepartureSimulation-odd, DepartureSimulation-even, BlindMatch,
/// SingleItemSampling). Their sum is the approximation factor.
pub const MHR_MIX_WEIGHTS: [f64; 4] = [15.1, 15.1, 2.3, 20.0];

/// Total mixture mass: the constant-factor guarantee of the combined policy.
pub const MHR_MIX_TOTAL: f64 = 52.5;

/// Branch names in draw order.
pub const MHR_BRANCH_NAMES: [&str; 4] =
    ["departure_simulation_odd", "departure_simulation_even", "blind_match", "single_item"];

/// The randomized combination achieving a constant-factor approximation on
/// MHR instances: draws one sub-policy per episode with the fixed weights.
pub struct MultipleMhr {
    inner: Box<dyn Policy>,
    branch: &'static str,
    events: Vec<PolicyEvent>,
}

impl MultipleMhr {
    pub fn branch(&self) -> &'static str {
        self.branch
    }
}

/// Validates an instance for the mixture: MHR horizons, i.i.d. values, and
/// a non-degenerate final phase.
pub fn multiple_mhr_validate(inst: &Instance, plan: &StagePlan) -> Result<()> {
    iid_values(inst)?;
    for (i, d) in inst.horizons.iter().enumerate() {
        if !d.is_mhr() {
            return Err(Error::InvalidParameter(format!(
                "item {i} has a non-MHR horizon distribution"
            )));
        }
    }
    let total: f64 = inst
        .horizons
        .iter()
        .map(|d| d.survival(plan.final_start))
        .sum();
    if !(total > 0.0) {
        return Err(Error::DegenerateSampling(
            "no item can reach the final phase".into(),
        ));
    }
    Ok(())
}

/// Draws the branch and builds the sub-policy; the same RNG then serves the
/// sub-policy's internal randomness.
pub fn multiple_mhr(
    inst: &Instance,
    plan: &StagePlan,
    mut rng: ChaCha8Rng,
) -> Result<MultipleMhr> {
    multiple_mhr_validate(inst, plan)?;
    let draw = rng.gen::<f64>() * MHR_MIX_TOTAL;
    let mut acc = 0.0;
    let mut idx = MHR_MIX_WEIGHTS.len() - 1;
    for (b, w) in MHR_MIX_WEIGHTS.iter().enumerate() {
        acc += w;
        if draw < acc {
            idx = b;
            break;
        }
    }
    let inner: Box<dyn Policy> = match idx {
        0 => Box::new(departure_simulation(inst, plan, Parity::Odd, rng)?),
        1 => Box::new(departure_simulation(inst, plan, Parity::Even, rng)?),
        2 => Box::new(blind_match(inst)),
        _ => Box::new(single_item_sampling(inst, plan, &mut rng)?),
    };
    let branch = MHR_BRANCH_NAMES[idx];
    Ok(MultipleMhr {
        inner,
        branch,
        events: vec![PolicyEvent::BranchChosen { name: branch }],
    })
}

impl Policy for MultipleMhr {
    fn post(&mut self, view: &MarketView) -> ThresholdRule {
        self.inner.post(view)
    }

    fn select_item(&mut self, view: &MarketView, value: f64) -> Option<usize> {
        self.inner.select_item(view, value)
    }

    fn note_departures(&mut self, step: u64, departed: &[usize]) {
        self.inner.note_departures(step, departed);
    }

    fn drain_events(&mut self) -> Vec<PolicyEvent> {
        let mut ev = std::mem::take(&mut self.events);
        ev.extend(self.inner.drain_events());
        ev
    }
}

// ---------------------------------------------------------------------------
// Two-point tight example
// ---------------------------------------------------------------------------

/// Closed-form outcome of the two-point single-item construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPointOutcome {
    pub v_low: f64,
    pub v_high: f64,
    pub p: f64,
    pub alg_star: f64,
    pub pro: f64,
    pub ratio: f64,
}

/// The tight single-item construction: values are `1` w.p. `1-p` and `v_H`
/// w.p. `p`, with `v_H` set at the indifference point of the two candidate
/// fixed prices. Returns the exact optimal fixed-price welfare and the
/// prophet's welfare; their ratio tends to `2 - 1/mu` as `p -> 0`.
pub fn two_point_optimal_single(mu: f64, p: f64) -> Result<TwoPointOutcome> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!("mean must be >= 1, got {mu}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidParameter(format!("p must lie in (0,1), got {p}")));
    }
    let q = 1.0 - 1.0 / mu;
    if q == 0.0 {
        // One-shot horizon: every price sells immediately or never; the
        // construction degenerates to ratio 1.
        return Ok(TwoPointOutcome { v_low: 1.0, v_high: 1.0, p, alg_star: 1.0, pro: 1.0, ratio: 1.0 });
    }
    let d = 1.0 - q * (1.0 - p);
    let v_high = d / (p * q);
    let sell_high = p / d; // Pr[some buyer beats the high price before departure]
    let alg_low = (1.0 - p) + v_high * p; // sells at step 1 at E[v]
    let alg_high = v_high * sell_high;
    let alg_star = alg_low.max(alg_high);
    let pro = v_high * sell_high + (1.0 - sell_high);
    Ok(TwoPointOutcome { v_low: 1.0, v_high, p, alg_star, pro, ratio: pro / alg_star })
}

/// Materializes the two-point construction as a simulatable instance.
pub fn two_point_instance(mu: f64, p: f64, time_cap: u64) -> Result<(Instance, TwoPointOutcome)> {
    let out = two_point_optimal_single(mu, p)?;
    let values = ValueDistribution::DiscreteAtoms {
        atoms: vec![(out.v_low, 1.0 - p), (out.v_high, p)],
    };
    let inst = Instance::iid(
        1,
        crate::dist::HorizonDistribution::Geometric { mean: mu },
        values,
        time_cap,
    )?;
    Ok((inst, out))
}

// ---------------------------------------------------------------------------
// Name-based construction (CLI plumbing)
// ---------------------------------------------------------------------------

/// Builds a policy from its CLI name: `multiple_mhr`, `single_fixed`,
/// `balancing`, `blind`, `departure_simulation_odd`,
/// `departure_simulation_even`, `single_item`, or `fixed:<price>`.
pub fn policy_from_name(
    name: &str,
    inst: &Instance,
    plan: &StagePlan,
    mut rng: ChaCha8Rng,
) -> Result<Box<dyn Policy>> {
    match name {
        "multiple_mhr" => Ok(Box::new(multiple_mhr(inst, plan, rng)?)),
        "single_fixed" => Ok(Box::new(single_fixed_price(inst)?)),
        "balancing" => Ok(Box::new(balancing_dynamic_geometric(inst)?)),
        "blind" => Ok(Box::new(blind_match(inst))),
        "departure_simulation_odd" => {
            Ok(Box::new(departure_simulation(inst, plan, Parity::Odd, rng)?))
        }
        "departure_simulation_even" => {
            Ok(Box::new(departure_simulation(inst, plan, Parity::Even, rng)?))
        }
        "single_item" => Ok(Box::new(single_item_sampling(inst, plan, &mut rng)?)),
        other => {
            if let Some(price) = other.strip_prefix("fixed:") {
                let price: f64 = price.parse().map_err(|_| {
                    Error::InvalidParameter(format!("bad fixed price {price:?}"))
                })?;
                let rule = ThresholdRule { price, accept_prob_at_price: 1.0, target: f64::NAN };
                Ok(Box::new(fixed_price_multi(inst, rule)))
            } else {
                Err(Error::InvalidParameter(format!("unknown policy {other:?}")))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::HorizonDistribution as H;
    use crate::dist::ValueDistribution as V;
    use crate::prophet::{realize, Realization};
    use crate::rng::{stream_rng, STREAM_ACCEPTANCE, STREAM_POLICY, STREAM_REALIZATION};
    use crate::simulator::run_episode;
    use crate::stages::build_stage_plan;
    use rand::SeedableRng;

    fn uniform_atoms(lo: u64, hi: u64) -> V {
        let n = (hi - lo + 1) as f64;
        V::DiscreteAtoms { atoms: (lo..=hi).map(|v| (v as f64, 1.0 / n)).collect() }
    }

    #[test]
    fn parity_enumerates_stages() {
        assert_eq!(Parity::Odd.stage_ks(5).collect::<Vec<_>>(), vec![1, 3, 5]);
        assert_eq!(Parity::Even.stage_ks(5).collect::<Vec<_>>(), vec![2, 4]);
        assert_eq!(Parity::Odd.stage_ks(0).count(), 0);
        assert_eq!(Parity::Even.stage_ks(1).count(), 0);
    }

    #[test]
    fn blind_match_hand_trace() {
        let inst = Instance::iid(2, H::UniformRange { lo: 1, hi: 3 }, uniform_atoms(1, 9), 3)
            .unwrap();
        let r = Realization { horizons: vec![3, 1], buyer_values: vec![2.0, 5.0, 7.0] };
        let mut p = blind_match(&inst);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = run_episode(&inst, &r, &mut p, &mut rng).unwrap();
        assert_eq!(out.welfare, 2.0);
        assert_eq!(out.matched_steps, vec![Some(1), None]);
    }

    #[test]
    fn single_fixed_price_validation_and_rule() {
        let inst2 = Instance::iid(2, H::Geometric { mean: 2.0 }, uniform_atoms(1, 4), 1 << 32)
            .unwrap();
        assert!(single_fixed_price(&inst2).is_err());
        let inst = Instance::iid(1, H::Geometric { mean: 2.0 }, uniform_atoms(1, 4), 1 << 32)
            .unwrap();
        let p = single_fixed_price(&inst).unwrap();
        assert!((p.rule().target - 0.5).abs() < 1e-12);
        assert_eq!(p.rule().price, 3.0);
    }

    #[test]
    fn balancing_rules_and_validation() {
        let inst = Instance::iid(3, H::Geometric { mean: 100.0 }, uniform_atoms(1, 4), 1 << 40)
            .unwrap();
        let p = balancing_dynamic_geometric(&inst).unwrap();
        assert_eq!(p.rules().len(), 3);
        assert!((p.rules()[2].target - 0.03).abs() < 1e-12);
        assert!((p.rules()[0].target - 0.01).abs() < 1e-12);

        // m*lambda > 1 rejected.
        let bad = Instance::iid(3, H::Geometric { mean: 2.0 }, uniform_atoms(1, 4), 1 << 40)
            .unwrap();
        assert!(balancing_dynamic_geometric(&bad).is_err());
        // Non-geometric rejected.
        let bad = Instance::iid(2, H::Deterministic { n: 4 }, uniform_atoms(1, 4), 1 << 40)
            .unwrap();
        assert!(balancing_dynamic_geometric(&bad).is_err());
    }

    #[test]
    fn ds_schedule_geometric_mean_eight() {
        let inst = Instance::iid(40, H::Geometric { mean: 8.0 }, uniform_atoms(1, 100), 1 << 40)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        // Stages: [1,7) and [7,12); odd parity compresses stage 1 into
        // window [1..=5], even parity compresses stage 2 into [1..=4].
        let odd = departure_schedule(&inst, &plan, Parity::Odd).unwrap();
        assert_eq!(odd.len(), 1);
        assert_eq!((odd[0].start, odd[0].end), (1, 5));
        // Stage 1 target: min(1, 40/6) = 1 -> accept-all.
        assert_eq!(odd[0].rule.unwrap().target, 1.0);
        // Sampling: Pr[h < 12 | h >= 6] = 1 - (7/8)^6.
        let q: f64 = 7.0 / 8.0;
        let want = 1.0 - q.powi(6);
        assert!((odd[0].sampling[0] - want).abs() < 1e-12, "{}", odd[0].sampling[0]);

        let even = departure_schedule(&inst, &plan, Parity::Even).unwrap();
        assert_eq!(even.len(), 1);
        assert_eq!((even[0].start, even[0].end), (1, 4));
        // Last stage: the next stage is the final phase, so sampling is 1.
        assert!(even[0].sampling.iter().all(|&s| s == 1.0));
    }

    #[test]
    fn ds_sampling_probability_example() {
        // Geometric continuation q = 0.9 (mean 10), l_{k+1} = 5, r_{k+1} = 9:
        // Pr[h < 9 | h >= 4] = 1 - q^5 = 0.40951.
        let inst = Instance::iid(
            12,
            H::Geometric { mean: 10.0 },
            uniform_atoms(1, 4),
            1 << 40,
        )
        .unwrap();
        let d = &inst.horizons[0];
        let base = d.survival(4);
        let got = (base - d.survival(9)) / base;
        assert!((got - 0.40951).abs() < 1e-9, "got {got}");
    }

    #[test]
    fn ds_real_price_when_stage_longer_than_cap() {
        let inst = Instance::iid(20, H::Geometric { mean: 100.0 }, uniform_atoms(1, 4), 1 << 40)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        let odd = departure_schedule(&inst, &plan, Parity::Odd).unwrap();
        let stage1_len = plan.stages[0].len() as f64;
        assert!(stage1_len > 20.0, "stage 1 length {stage1_len}");
        let rule = odd[0].rule.unwrap();
        assert!((rule.target - 20.0 / stage1_len).abs() < 1e-12);
        assert!(rule.price >= 1.0 && rule.price <= 4.0);
    }

    /// Empirical candidate-survivor counts match their exact expectations,
    /// and the candidate sets honor A-set semantics.
    #[test]
    fn ds_candidate_sets_match_expectation() {
        let inst = Instance::iid(40, H::Geometric { mean: 8.0 }, uniform_atoms(1, 100), 1 << 40)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        for parity in [Parity::Odd, Parity::Even] {
            let expectations = departure_sim_expected_mk(&inst, &plan, parity).unwrap();
            assert_eq!(expectations.len(), 1);
            let trials = 1500u64;
            let mut sum_mk = 0.0;
            let mut sumsq = 0.0;
            for trial in 0..trials {
                let mut rng_r = stream_rng(77, trial, STREAM_REALIZATION);
                let r = realize(&inst, &mut rng_r).unwrap();
                let mut policy =
                    departure_simulation(&inst, &plan, parity, stream_rng(77, trial, STREAM_POLICY))
                        .unwrap();
                let mut rng_a = stream_rng(77, trial, STREAM_ACCEPTANCE);
                let out = run_episode(&inst, &r, &mut policy, &mut rng_a).unwrap();
                let mut mk = 0.0;
                for ev in &out.events {
                    if let PolicyEvent::CandidateSetSampled { members, window_end, .. } = ev {
                        mk += members
                            .iter()
                            .filter(|&&i| r.horizons[i as usize] >= *window_end)
                            .count() as f64;
                    }
                }
                sum_mk += mk;
                sumsq += mk * mk;
            }
            let mean = sum_mk / trials as f64;
            let var = (sumsq / trials as f64 - mean * mean).max(0.0);
            let stderr = (var / trials as f64).sqrt();
            let want = expectations[0].expected;
            assert!(
                (mean - want).abs() < 4.0 * stderr.max(0.05),
                "parity {parity:?}: empirical {mean} vs exact {want} (stderr {stderr})"
            );
        }
    }

    #[test]
    fn single_item_sampling_frequencies_and_rule() {
        // 6 items die at 2, 6 live to 8: only the long-lived can be targets.
        let mut horizons = vec![H::Deterministic { n: 2 }; 6];
        horizons.extend(vec![H::Deterministic { n: 8 }; 6]);
        let inst = Instance::new(
            horizons,
            crate::prophet::ValueProcess::Iid(uniform_atoms(1, 8)),
            1 << 20,
        )
        .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert_eq!(plan.final_start, 3);
        let mut counts = vec![0u32; 12];
        for trial in 0..6000u64 {
            let mut rng = stream_rng(5, trial, STREAM_POLICY);
            let p = single_item_sampling(&inst, &plan, &mut rng).unwrap();
            counts[p.target()] += 1;
            assert!((p.rule().target - 0.125).abs() < 1e-12);
        }
        for i in 0..6 {
            assert_eq!(counts[i], 0, "short-lived item {i} was sampled");
        }
        for i in 6..12 {
            let freq = counts[i] as f64 / 6000.0;
            // Each eligible item has weight 1/6; 3 sigma ~ 0.0145.
            assert!((freq - 1.0 / 6.0).abs() < 0.02, "item {i} frequency {freq}");
        }

        // All items gone before the final phase: degenerate.
        let dead = Instance::iid(12, H::Deterministic { n: 2 }, uniform_atoms(1, 8), 1 << 20)
            .unwrap();
        let dead_plan = build_stage_plan(&dead, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            single_item_sampling(&dead, &dead_plan, &mut rng),
            Err(Error::DegenerateSampling(_))
        ));
    }

    #[test]
    fn multiple_mhr_branch_frequencies() {
        let inst = Instance::iid(40, H::Geometric { mean: 8.0 }, uniform_atoms(1, 100), 1 << 40)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        let mut counts = std::collections::HashMap::new();
        let trials = 6000u64;
        for trial in 0..trials {
            let p = multiple_mhr(&inst, &plan, stream_rng(3, trial, STREAM_POLICY)).unwrap();
            *counts.entry(p.branch()).or_insert(0u32) += 1;
        }
        for (idx, name) in MHR_BRANCH_NAMES.iter().enumerate() {
            let want = MHR_MIX_WEIGHTS[idx] / MHR_MIX_TOTAL;
            let got = *counts.get(name).unwrap_or(&0) as f64 / trials as f64;
            let sigma = (want * (1.0 - want) / trials as f64).sqrt();
            assert!(
                (got - want).abs() < 4.0 * sigma,
                "branch {name}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn multiple_mhr_rejects_non_mhr() {
        let not_mhr = H::ExplicitPmf {
            pmf: vec![(1, 0.5), (2, 0.1), (3, 0.4)],
        }
        .validated()
        .unwrap();
        assert!(!not_mhr.is_mhr());
        let inst = Instance::new(
            vec![not_mhr, H::Geometric { mean: 2.0 }],
            crate::prophet::ValueProcess::Iid(uniform_atoms(1, 4)),
            1 << 32,
        )
        .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        assert!(multiple_mhr_validate(&inst, &plan).is_err());
    }

    #[test]
    fn mixture_welfare_positive_and_audited() {
        let inst = Instance::iid(40, H::Geometric { mean: 8.0 }, uniform_atoms(1, 100), 1 << 40)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        let mut total = 0.0;
        for trial in 0..300u64 {
            let mut rng_r = stream_rng(21, trial, STREAM_REALIZATION);
            let r = realize(&inst, &mut rng_r).unwrap();
            let mut p = multiple_mhr(&inst, &plan, stream_rng(21, trial, STREAM_POLICY)).unwrap();
            let mut rng_a = stream_rng(21, trial, STREAM_ACCEPTANCE);
            let out = run_episode(&inst, &r, &mut p, &mut rng_a).unwrap();
            total += out.welfare;
        }
        assert!(total > 0.0);
    }

    #[test]
    fn two_point_examples() {
        let out = two_point_optimal_single(2.0, 0.1).unwrap();
        assert!((out.v_high - 11.0).abs() < 1e-12);
        assert!((out.alg_star - 2.0).abs() < 1e-12);
        assert!((out.pro - 2.0 - 9.0 / 11.0).abs() < 1e-12);
        assert!((out.ratio - (2.0 + 9.0 / 11.0) / 2.0).abs() < 1e-12);

        // mu = 1 degenerates to ratio 1.
        let out = two_point_optimal_single(1.0, 0.3).unwrap();
        assert_eq!(out.ratio, 1.0);

        // Small p approaches 2 - 1/mu.
        let out = two_point_optimal_single(2.0, 1e-4).unwrap();
        assert!(out.ratio > 1.497 && out.ratio <= 1.5, "ratio {}", out.ratio);
        let out = two_point_optimal_single(5.0, 1e-5).unwrap();
        assert!((out.ratio - 1.8).abs() < 1e-3, "ratio {}", out.ratio);
    }

    #[test]
    fn policy_names_resolve() {
        let inst = Instance::iid(1, H::Geometric { mean: 2.0 }, uniform_atoms(1, 4), 1 << 32)
            .unwrap();
        let plan = build_stage_plan(&inst, 0.5).unwrap();
        for name in [
            "multiple_mhr",
            "single_fixed",
            "balancing",
            "blind",
            "departure_simulation_odd",
            "departure_simulation_even",
            "single_item",
            "fixed:2.5",
        ] {
            let rng = ChaCha8Rng::seed_from_u64(0);
            policy_from_name(name, &inst, &plan, rng)
                .unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        let rng = ChaCha8Rng::seed_from_u64(0);
        assert!(policy_from_name("nope", &inst, &plan, rng).is_err());
    }
}
