//! Closed-form upper/lower bounds and analytic quantities.
//!
//! Everything here is deterministic arithmetic: prophet upper bounds built
//! from stage plans, the single-item MHR ratio, the low-rate alternative
//! process sums, the finite-m integral lower bound, and the random-walk
//! hitting probabilities used in the large-m analysis.

use serde::{Deserialize, Serialize};

use crate::dist::{HorizonDistribution, ValueDistribution};
use crate::error::{Error, Result};
use crate::prophet::Instance;
use crate::stages::StagePlan;

/// Decomposed prophet upper bound: one term per stage plus the final phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageBound {
    pub per_stage: Vec<f64>,
    pub final_bound: f64,
    pub total: f64,
}

impl StageBound {
    pub fn new(per_stage: Vec<f64>, final_bound: f64) -> Self {
        let total = per_stage.iter().sum::<f64>() + final_bound;
        Self { per_stage, final_bound, total }
    }
}

/// Upper bound on the prophet's value for a single item with mean horizon
/// `mu`: the conditional mean `E[X | accepted]` of the rule calibrated to
/// acceptance probability `1/mu`.
pub fn pro_single_upper(v: &ValueDistribution, mu: f64) -> Result<f64> {
    if !(mu >= 1.0) || !mu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mean horizon must be a finite real >= 1, got {mu}"
        )));
    }
    let rule = v.threshold_for_acceptance(1.0 / mu)?;
    v.cond_exp_accepted(&rule)
}

/// Single-item competitive ratio of the fixed rule with target `1/mu`:
/// `1 / E_h[1 - (1 - 1/mu)^h]`. Equals `2 - 1/mu` exactly for geometric
/// horizons and is at most that for every MHR horizon.
pub fn single_mhr_ratio(d: &HorizonDistribution) -> f64 {
    let mu = d.mean();
    1.0 / d.expected_one_minus_pow(1.0 - 1.0 / mu)
}

/// Per-stage prophet upper bounds: stage `k` contributes
/// `min(r_k - l_k, m*rho^{k-1}) * E[v | v >= p_k]` where the price targets
/// acceptance probability `min(1, m*rho^{k-1} / (r_k - l_k))`. Empty stages
/// contribute zero.
pub fn pro_stage_upper(plan: &StagePlan, v: &ValueDistribution) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(plan.stages.len());
    for stage in &plan.stages {
        let len = stage.len() as f64;
        if len == 0.0 {
            out.push(0.0);
            continue;
        }
        let cap = plan.entry_cap(stage.k);
        let rule = v.threshold_for_acceptance((cap / len).min(1.0))?;
        out.push(len.min(cap) * v.cond_exp_accepted(&rule)?);
    }
    Ok(out)
}

/// Upper bound on the final phase: each item contributes its probability of
/// surviving into the phase times its single-item upper bound.
pub fn pro_final_upper(inst: &Instance, plan: &StagePlan) -> Result<f64> {
    let v = inst.values.iid().ok_or_else(|| {
        Error::InvalidParameter("final-phase bound requires i.i.d. buyer values".into())
    })?;
    let mut total = 0.0;
    for d in &inst.horizons {
        total += d.survival(plan.final_start) * pro_single_upper(v, d.mean())?;
    }
    Ok(total)
}

/// Full decomposed prophet upper bound for an i.i.d.-value instance.
pub fn prophet_upper_bound(inst: &Instance, plan: &StagePlan) -> Result<StageBound> {
    let v = inst.values.iid().ok_or_else(|| {
        Error::InvalidParameter("stage bounds require i.i.d. buyer values".into())
    })?;
    let per_stage = pro_stage_upper(plan, v)?;
    let final_bound = pro_final_upper(inst, plan)?;
    Ok(StageBound::new(per_stage, final_bound))
}

/// Prophet upper bound in the low-rate alternative process: the `k`-th
/// remaining item is served by a rule with acceptance probability `k*lambda`,
/// contributing `E[X | X >= p_k]`.
pub fn pro_prime_upper_geometric(m: usize, lambda: f64, v: &ValueDistribution) -> Result<f64> {
    check_low_rate(m, lambda)?;
    let mut total = 0.0;
    for k in 1..=m {
        let target = (k as f64 * lambda).min(1.0);
        let rule = v.threshold_for_acceptance(target)?;
        total += v.cond_exp_accepted(&rule)?;
    }
    Ok(total)
}

/// Closed-form welfare of the balancing policy in the alternative process
/// with Pareto(alpha) values: `sum_k (k*lambda)^{-1/alpha} (alpha-1)^{-1/alpha}`.
pub fn alg_prime_pareto(m: usize, lambda: f64, alpha: f64) -> Result<f64> {
    check_low_rate(m, lambda)?;
    check_alpha(alpha)?;
    let e = -1.0 / alpha;
    let scale = (alpha - 1.0).powf(e);
    Ok((1..=m).map(|k| (k as f64 * lambda).powf(e) * scale).sum())
}

pub(crate) fn check_low_rate(m: usize, lambda: f64) -> Result<()> {
    if m < 1 {
        return Err(Error::InvalidParameter("need at least one item".into()));
    }
    if !(lambda > 0.0) || m as f64 * lambda > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "need 0 < lambda and m*lambda <= 1, got m={m}, lambda={lambda}"
        )));
    }
    Ok(())
}

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 1.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!("alpha must exceed 1, got {alpha}")));
    }
    Ok(())
}

/// Absolute tolerance for the finite-m quadrature.
pub const QUAD_TOL: f64 = 1e-8;

/// Lower bound on the prophet's value in the alternative process with
/// Pareto(alpha) values: `sum_k [1 + Int_1^inf (1-r) v^-a / (v^-a + r - r v^-a) dv]`
/// with `r = k*lambda`. The integrand simplifies to `1 / (1 + (v/v*)^alpha)`
/// with knee `v* = ((1-r)/r)^{1/alpha}`.
pub fn pro_prime_finite_m_lb(m: usize, lambda: f64, alpha: f64) -> Result<f64> {
    check_low_rate(m, lambda)?;
    check_alpha(alpha)?;
    let mut total = 0.0;
    for k in 1..=m {
        let r = (k as f64 * lambda).min(1.0);
        total += 1.0 + knee_integral(r, alpha, QUAD_TOL)?;
    }
    Ok(total)
}

/// `Int_1^inf dv / (1 + (v/v_star)^alpha)` with `v_star = ((1-r)/r)^{1/alpha}`,
/// or zero when `r = 1`.
fn knee_integral(r: f64, alpha: f64, tol: f64) -> Result<f64> {
    if r >= 1.0 {
        return Ok(0.0);
    }
    let v_star = ((1.0 - r) / r).powf(1.0 / alpha);
    // Work in x = v / v_star: integral = v_star * Int_{a}^{inf} dx/(1+x^alpha).
    let a = 1.0 / v_star;
    let f = |x: f64| 1.0 / (1.0 + x.powf(alpha));
    // Truncate where the analytic tail majorant x^{1-alpha}/(alpha-1) drops
    // below half the tolerance (in v units).
    let x_hi = (2.0 * v_star / (tol * (alpha - 1.0)))
        .powf(1.0 / (alpha - 1.0))
        .max(a * 2.0)
        .max(2.0);
    let inner_tol = tol / (2.0 * v_star);

    // Piecewise: [a, knee at 1] if applicable, then dyadic segments to x_hi;
    // per-segment budgets sum to the inner tolerance.
    let mut cuts = vec![a];
    if a < 1.0 {
        cuts.push(1.0);
    }
    let mut edge: f64 = cuts[cuts.len() - 1] * 2.0;
    while edge < x_hi {
        cuts.push(edge);
        edge *= 2.0;
    }
    cuts.push(x_hi);
    let seg_tol = inner_tol / cuts.len() as f64;
    let mut sum = 0.0;
    for w in cuts.windows(2) {
        sum += adaptive_simpson(&f, w[0], w[1], seg_tol)?;
    }
    Ok(v_star * sum)
}

/// Adaptive Simpson quadrature with the standard Richardson correction
/// `(S_halves - S_whole)/15`; errors out instead of looping past depth 60.
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    fn simpson<F: Fn(f64) -> f64>(f: &F, lo: f64, mid: f64, hi: f64) -> f64 {
        (hi - lo) / 6.0 * (f(lo) + 4.0 * f(mid) + f(hi))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        lo: f64,
        mid: f64,
        hi: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let lm = 0.5 * (lo + mid);
        let rm = 0.5 * (mid + hi);
        let left = simpson(f, lo, lm, mid);
        let right = simpson(f, mid, rm, hi);
        let err = left + right - whole;
        if err.abs() <= 15.0 * tol {
            return Ok(left + right + err / 15.0);
        }
        if depth == 0 {
            return Err(Error::NoConvergence(format!(
                "quadrature failed to converge on [{lo}, {hi}]"
            )));
        }
        Ok(recurse(f, lo, lm, mid, left, 0.5 * tol, depth - 1)?
            + recurse(f, mid, rm, hi, right, 0.5 * tol, depth - 1)?)
    }
    if !(hi > lo) {
        return Ok(0.0);
    }
    let mid = 0.5 * (lo + hi);
    recurse(f, lo, mid, hi, simpson(f, lo, mid, hi), tol, 60)
}

/// The two asymptotic competitive-ratio lower bounds as functions of the
/// Pareto shape: `finite_m = (pi/alpha)/sin(pi/alpha) * (alpha-1)^{1/alpha}`
/// and `large_m = alpha/(alpha-1) * (alpha-1)^{1/alpha}`.
pub fn ratio_lb_alpha(alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    let s = (alpha - 1.0).powf(1.0 / alpha);
    let t = std::f64::consts::PI / alpha;
    Ok((t / t.sin() * s, alpha / (alpha - 1.0) * s))
}

/// Probability that a walk started at 1, stepping down with probability `x`
/// and up otherwise, hits 0 within `j` steps. Dynamic program over
/// (steps remaining, position); positions above `j + 1` can never return in
/// budget and are capped.
pub fn walk_reach_prob(j: u32, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return f64::NAN;
    }
    let top = (j + 1) as usize;
    // reach[pos]: probability of hitting 0 within `s` remaining steps.
    let mut reach = vec![0.0f64; top + 1];
    reach[0] = 1.0;
    let mut next = reach.clone();
    for _s in 1..=j {
        for pos in 1..=top {
            let up = if pos + 1 > top { 0.0 } else { reach[pos + 1] };
            next[pos] = x * reach[pos - 1] + (1.0 - x) * up;
        }
        std::mem::swap(&mut reach, &mut next);
    }
    reach[1.min(top)]
}

/// Limit of `walk_reach_prob` as the budget grows: `min(1, x/(1-x))`, with
/// the convention `f(1) = 1`.
pub fn walk_limit(x: f64) -> f64 {
    if x >= 0.5 {
        1.0
    } else {
        x / (1.0 - x)
    }
}

/// Max over a log-spaced grid on (0, 1] of `1 - f_j(x)/f(x)`: the uniform
/// gap between the j-step hitting probability and its limit.
pub fn walk_uniform_gap(j: u32, grid: usize) -> f64 {
    assert!(j >= 1 && grid >= 2, "need j >= 1 and at least two grid points");
    let mut worst = 0.0f64;
    for i in 1..=grid {
        // x from 1e-6 up to 1, log-spaced.
        let x = 10f64.powf(-6.0 * (1.0 - i as f64 / grid as f64));
        let gap = 1.0 - walk_reach_prob(j, x) / walk_limit(x);
        worst = worst.max(gap);
    }
    worst
}
