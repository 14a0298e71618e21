//! Horizon and value distributions.
//!
//! Horizons are positive integers counted in steps: an item with horizon `h`
//! is matchable at steps `1..=h` and departs at the end of step `h`. The
//! geometric family is parameterized by its mean `mu >= 1`, i.e.
//! `Pr[h = t] = (1 - s)^(t-1) * s` with `s = 1/mu`, so the per-step
//! continuation probability is `q = 1 - 1/mu` and `Pr[h >= t] = q^(t-1)`.
//!
//! A distribution has a monotone hazard rate (MHR) when the continuation
//! probability `Pr[h >= t+1 | h >= t]` is non-increasing in `t`. The
//! geometric distribution is the extreme member of that class: it is
//! second-order stochastically dominated by every MHR distribution with the
//! same mean, which [`HorizonDistribution::sosd_vs_geometric`] checks
//! empirically through the test functions `phi_c(x) = max(0, c - x)`.
//!
//! Buyer values are either finite atom lists or a Pareto tail
//! `Pr[v >= x] = x^(-alpha)` on `[1, cap]` with the truncated tail mass
//! collapsed into an atom at `cap`. Posted prices are [`ThresholdRule`]s:
//! accept strictly above the price always, accept exactly at the price with a
//! calibrated probability, so that any target acceptance probability is hit
//! exactly even on discrete supports.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability-mass normalization checks.
const MASS_TOL: f64 = 1e-9;
/// Tolerance when checking monotonicity of hazards or dominance sums.
const MONO_TOL: f64 = 1e-12;

/// `base^exp` for u64 exponents (safe where `powi(i32)` would overflow).
#[inline]
fn pow_u(base: f64, exp: u64) -> f64 {
    base.powf(exp as f64)
}

// ---------------------------------------------------------------------------
// Horizon distributions
// ---------------------------------------------------------------------------

/// Distribution of an item's on-shelf horizon (support in `{1, 2, ...}`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum HorizonDistribution {
    /// Geometric with the given mean `mu >= 1`; unbounded support.
    Geometric { mean: f64 },
    /// Point mass at `n >= 1`.
    Deterministic { n: u64 },
    /// Uniform on `{lo, ..., hi}`, `1 <= lo <= hi`.
    UniformRange { lo: u64, hi: u64 },
    /// Arbitrary finite pmf: strictly increasing supports with positive
    /// masses summing to one.
    ExplicitPmf { pmf: Vec<(u64, f64)> },
    /// Geometric with parameter mean `mean`, truncated by moving all mass
    /// from `{cap+1, ...}` onto `cap`. Note the truncated distribution's
    /// actual mean (`(1 - q^cap) / (1 - q)`) is below `mean`.
    TruncatedGeometric { mean: f64, cap: u64 },
}

impl HorizonDistribution {
    /// Validates family parameters (means at least one, ordered supports,
    /// normalized masses). Returns the distribution itself so constructors
    /// can chain.
    pub fn validated(self) -> Result<Self> {
        match &self {
            Self::Geometric { mean } => {
                if !mean.is_finite() || *mean < 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "geometric horizon mean must be finite and >= 1, got {mean}"
                    )));
                }
            }
            Self::Deterministic { n } => {
                if *n < 1 {
                    return Err(Error::InvalidParameter(
                        "deterministic horizon must be >= 1".into(),
                    ));
                }
            }
            Self::UniformRange { lo, hi } => {
                if *lo < 1 || lo > hi {
                    return Err(Error::InvalidParameter(format!(
                        "uniform horizon range needs 1 <= lo <= hi, got [{lo}, {hi}]"
                    )));
                }
            }
            Self::ExplicitPmf { pmf } => {
                if pmf.is_empty() {
                    return Err(Error::InvalidParameter("empty horizon pmf".into()));
                }
                let mut total = 0.0;
                let mut prev = 0u64;
                for &(t, mass) in pmf {
                    if t < 1 || t <= prev && prev != 0 {
                        return Err(Error::InvalidParameter(
                            "horizon pmf supports must be strictly increasing and >= 1".into(),
                        ));
                    }
                    if !(mass > 0.0) || !mass.is_finite() {
                        return Err(Error::InvalidParameter(
                            "horizon pmf masses must be positive and finite".into(),
                        ));
                    }
                    prev = t;
                    total += mass;
                }
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "horizon pmf masses sum to {total}, expected 1"
                    )));
                }
            }
            Self::TruncatedGeometric { mean, cap } => {
                if !mean.is_finite() || *mean < 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "truncated geometric mean must be finite and >= 1, got {mean}"
                    )));
                }
                if *cap < 1 {
                    return Err(Error::InvalidParameter(
                        "truncation cap must be >= 1".into(),
                    ));
                }
            }
        }
        Ok(self)
    }

    /// Per-step continuation probability of the underlying geometric family
    /// (`1 - 1/mean`); only meaningful for the geometric variants.
    fn geo_q(mean: f64) -> f64 {
        1.0 - 1.0 / mean
    }

    /// `Pr[h >= t]` for `t >= 1`.
    pub fn survival(&self, t: u64) -> f64 {
        assert!(t >= 1, "survival is defined for t >= 1");
        match self {
            Self::Geometric { mean } => pow_u(Self::geo_q(*mean), t - 1),
            Self::Deterministic { n } => {
                if t <= *n {
                    1.0
                } else {
                    0.0
                }
            }
            Self::UniformRange { lo, hi } => {
                if t <= *lo {
                    1.0
                } else if t > *hi {
                    0.0
                } else {
                    (hi - t + 1) as f64 / (hi - lo + 1) as f64
                }
            }
            Self::ExplicitPmf { pmf } => {
                let tail: f64 = pmf.iter().filter(|&&(x, _)| x >= t).map(|&(_, m)| m).sum();
                if t <= pmf[0].0 {
                    1.0
                } else {
                    tail
                }
            }
            Self::TruncatedGeometric { mean, cap } => {
                if t > *cap {
                    0.0
                } else {
                    pow_u(Self::geo_q(*mean), t - 1)
                }
            }
        }
    }

    /// `Pr[h = t]`.
    pub fn pmf(&self, t: u64) -> f64 {
        match self {
            Self::ExplicitPmf { pmf } => pmf
                .iter()
                .find(|&&(x, _)| x == t)
                .map(|&(_, m)| m)
                .unwrap_or(0.0),
            _ => {
                let s = self.survival(t);
                let next = match self.support_max() {
                    Some(mx) if t >= mx => 0.0,
                    _ => self.survival(t + 1),
                };
                (s - next).max(0.0)
            }
        }
    }

    /// `Pr[h >= t+1 | h >= t]`; errors when `Pr[h >= t] = 0`.
    pub fn hazard_continue(&self, t: u64) -> Result<f64> {
        let s = self.survival(t);
        if s <= 0.0 {
            return Err(Error::UndefinedHazard { t });
        }
        // Closed forms avoid 0/0 drift for the geometric families.
        Ok(match self {
            Self::Geometric { mean } => Self::geo_q(*mean),
            Self::TruncatedGeometric { mean, cap } => {
                if t >= *cap {
                    0.0
                } else {
                    Self::geo_q(*mean)
                }
            }
            _ => self.survival(t + 1) / s,
        })
    }

    /// Expected horizon.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Geometric { mean } => *mean,
            Self::Deterministic { n } => *n as f64,
            Self::UniformRange { lo, hi } => (*lo + *hi) as f64 / 2.0,
            Self::ExplicitPmf { pmf } => pmf.iter().map(|&(t, m)| t as f64 * m).sum(),
            Self::TruncatedGeometric { mean, cap } => {
                // sum_{t=1..cap} q^(t-1)
                let q = Self::geo_q(*mean);
                if q == 0.0 {
                    1.0
                } else {
                    (1.0 - pow_u(q, *cap)) / (1.0 - q)
                }
            }
        }
    }

    /// Largest support point, or `None` for unbounded support.
    pub fn support_max(&self) -> Option<u64> {
        match self {
            Self::Geometric { mean } => {
                if *mean <= 1.0 {
                    Some(1)
                } else {
                    None
                }
            }
            Self::Deterministic { n } => Some(*n),
            Self::UniformRange { hi, .. } => Some(*hi),
            Self::ExplicitPmf { pmf } => Some(pmf.last().unwrap().0),
            Self::TruncatedGeometric { cap, .. } => Some(*cap),
        }
    }

    /// Whether the continuation probability is non-increasing over the whole
    /// support. Closed-form families are MHR by construction; explicit pmfs
    /// are scanned.
    pub fn is_mhr(&self) -> bool {
        match self {
            Self::Geometric { .. }
            | Self::Deterministic { .. }
            | Self::UniformRange { .. }
            | Self::TruncatedGeometric { .. } => true,
            Self::ExplicitPmf { pmf } => {
                // Continuation probabilities equal 1 strictly between mass
                // points and dip below 1 exactly at them, so a gap inside the
                // support (a dip followed by a 1) breaks monotonicity. MHR
                // therefore requires a contiguous support, then a
                // non-increasing scan of the continuation ratios at the mass
                // points. Tail masses are accumulated from the back so the
                // ratios stay accurate even where the tail is vanishingly
                // small (forward subtraction would lose all relative
                // precision there).
                let lo = pmf[0].0;
                let hi = pmf.last().unwrap().0;
                if pmf.len() as u64 != hi - lo + 1 {
                    return false;
                }
                let mut suffix = vec![0.0f64; pmf.len() + 1];
                for (k, &(_, mass)) in pmf.iter().enumerate().rev() {
                    suffix[k] = suffix[k + 1] + mass;
                }
                let mut prev = f64::INFINITY;
                for k in 0..pmf.len() {
                    if suffix[k] <= 0.0 {
                        break;
                    }
                    let c = suffix[k + 1] / suffix[k];
                    if c > prev + MONO_TOL {
                        return false;
                    }
                    prev = c;
                }
                true
            }
        }
    }

    /// Checks that this distribution second-order stochastically dominates
    /// the geometric distribution with the same mean, by comparing
    /// `E[max(0, c - h)]` for every threshold `c in 1..=c_max` (the
    /// geometric's expectation must be the larger one). Returns
    /// `(holds, first violating c)`.
    pub fn sosd_vs_geometric(&self, c_max: u64) -> (bool, Option<u64>) {
        let mu = self.mean();
        let q = Self::geo_q(mu);
        // E[max(0, c - h)] = sum_{t=1..c-1} Pr[h <= t], accumulated
        // incrementally for both distributions.
        let mut e_self = 0.0;
        let mut e_geo = 0.0;
        for c in 1..=c_max {
            if e_self > e_geo + MONO_TOL {
                return (false, Some(c));
            }
            // Advance both sums by Pr[h <= c] for the next threshold.
            e_self += 1.0 - self.survival(c + 1);
            e_geo += 1.0 - pow_u(q, c);
        }
        (true, None)
    }

    /// `E[1 - beta^h]` for `beta in [0, 1]`; closed-form where available.
    pub fn expected_one_minus_pow(&self, beta: f64) -> f64 {
        assert!((0.0..=1.0).contains(&beta));
        if beta == 1.0 {
            return 0.0;
        }
        match self {
            Self::Geometric { mean } => {
                let q = Self::geo_q(*mean);
                1.0 - beta * (1.0 - q) / (1.0 - q * beta)
            }
            Self::Deterministic { n } => 1.0 - pow_u(beta, *n),
            Self::UniformRange { lo, hi } => {
                let len = (hi - lo + 1) as f64;
                let sum = pow_u(beta, *lo) * (1.0 - pow_u(beta, hi - lo + 1)) / (1.0 - beta);
                1.0 - sum / len
            }
            Self::ExplicitPmf { pmf } => {
                1.0 - pmf.iter().map(|&(t, m)| m * pow_u(beta, t)).sum::<f64>()
            }
            Self::TruncatedGeometric { mean, cap } => {
                let q = Self::geo_q(*mean);
                let body = if *cap > 1 {
                    (1.0 - q) * beta * (1.0 - pow_u(q * beta, *cap - 1)) / (1.0 - q * beta)
                } else {
                    0.0
                };
                let top = pow_u(q, *cap - 1) * pow_u(beta, *cap);
                1.0 - body - top
            }
        }
    }

    /// Samples one horizon.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        match self {
            Self::Geometric { mean } => sample_geometric(Self::geo_q(*mean), rng),
            Self::Deterministic { n } => *n,
            Self::UniformRange { lo, hi } => rng.gen_range(*lo..=*hi),
            Self::ExplicitPmf { pmf } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(t, m) in pmf {
                    acc += m;
                    if u < acc {
                        return t;
                    }
                }
                pmf.last().unwrap().0
            }
            Self::TruncatedGeometric { mean, cap } => {
                sample_geometric(Self::geo_q(*mean), rng).min(*cap)
            }
        }
    }
}

/// Inverse-CDF geometric sample with continuation probability `q`.
fn sample_geometric<R: Rng + ?Sized>(q: f64, rng: &mut R) -> u64 {
    if q <= 0.0 {
        return 1;
    }
    let x = 1.0 - rng.gen::<f64>(); // in (0, 1]
    let h = (x.ln() / q.ln()).ceil();
    if h < 1.0 {
        1
    } else {
        h as u64
    }
}

/// Builds a random MHR pmf by drawing a non-increasing sequence of
/// continuation probabilities, forcing termination at a random support size.
/// Useful for property tests and exploration.
pub fn random_mhr_explicit<R: Rng + ?Sized>(rng: &mut R, max_support: u64) -> HorizonDistribution {
    let len = rng.gen_range(1..=max_support.max(1));
    let mut conts: Vec<f64> = (0..len - 1).map(|_| rng.gen_range(0.0..1.0)).collect();
    conts.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut pmf = Vec::new();
    let mut surv = 1.0;
    for (idx, &c) in conts.iter().enumerate() {
        let mass = surv * (1.0 - c);
        if mass > 0.0 {
            pmf.push((idx as u64 + 1, mass));
        }
        surv *= c;
    }
    pmf.push((len, surv));
    HorizonDistribution::ExplicitPmf { pmf }
        .validated()
        .expect("constructed pmf is valid")
}

// ---------------------------------------------------------------------------
// Value distributions
// ---------------------------------------------------------------------------

/// Distribution of a buyer's valuation (non-negative reals).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ValueDistribution {
    /// Finite atom list, values strictly increasing and non-negative, masses
    /// positive and summing to one.
    DiscreteAtoms { atoms: Vec<(f64, f64)> },
    /// `Pr[v >= x] = x^(-alpha)` on `[1, cap]`, `alpha > 1`, with the
    /// truncated tail mass `cap^(-alpha)` as an atom at `cap`.
    Pareto { alpha: f64, cap: f64 },
}

impl ValueDistribution {
    pub fn validated(self) -> Result<Self> {
        match &self {
            Self::DiscreteAtoms { atoms } => {
                if atoms.is_empty() {
                    return Err(Error::InvalidParameter("empty value atom list".into()));
                }
                let mut total = 0.0;
                let mut prev = f64::NEG_INFINITY;
                for &(v, m) in atoms {
                    if !v.is_finite() || v < 0.0 || v <= prev {
                        return Err(Error::InvalidParameter(
                            "value atoms must be non-negative, finite, strictly increasing".into(),
                        ));
                    }
                    if !(m > 0.0) || !m.is_finite() {
                        return Err(Error::InvalidParameter(
                            "value atom masses must be positive and finite".into(),
                        ));
                    }
                    prev = v;
                    total += m;
                }
                if (total - 1.0).abs() > MASS_TOL {
                    return Err(Error::InvalidParameter(format!(
                        "value atom masses sum to {total}, expected 1"
                    )));
                }
            }
            Self::Pareto { alpha, cap } => {
                if !(*alpha > 1.0) || !alpha.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "pareto tail index must be > 1, got {alpha}"
                    )));
                }
                if !(*cap >= 1.0) || !cap.is_finite() {
                    return Err(Error::InvalidParameter(format!(
                        "pareto cap must be finite and >= 1, got {cap}"
                    )));
                }
            }
        }
        Ok(self)
    }

    /// `Pr[v >= x]`.
    pub fn tail(&self, x: f64) -> f64 {
        match self {
            Self::DiscreteAtoms { atoms } => {
                atoms.iter().filter(|&&(v, _)| v >= x).map(|&(_, m)| m).sum()
            }
            Self::Pareto { alpha, cap } => {
                if x <= 1.0 {
                    1.0
                } else if x > *cap {
                    0.0
                } else {
                    x.powf(-alpha)
                }
            }
        }
    }

    /// The value at upper-tail mass `s`: the largest support point `x`
    /// with `Pr[v >= x] >= s`. Equivalently the `(1-s)`-quantile; `s >= 1`
    /// returns the smallest support point. Useful for sampling maxima of
    /// many i.i.d. draws without materializing them.
    pub fn tail_quantile(&self, s: f64) -> f64 {
        match self {
            Self::DiscreteAtoms { atoms } => {
                let mut acc = 0.0;
                for &(v, m) in atoms.iter().rev() {
                    acc += m;
                    if acc >= s {
                        return v;
                    }
                }
                atoms[0].0
            }
            Self::Pareto { alpha, cap } => {
                if s >= 1.0 {
                    1.0
                } else if s <= cap.powf(-alpha) {
                    *cap
                } else {
                    s.powf(-1.0 / alpha)
                }
            }
        }
    }

    /// Expected value.
    pub fn mean(&self) -> f64 {
        match self {
            Self::DiscreteAtoms { atoms } => atoms.iter().map(|&(v, m)| v * m).sum(),
            Self::Pareto { alpha, cap } => {
                alpha / (alpha - 1.0) - cap.powf(1.0 - alpha) / (alpha - 1.0)
            }
        }
    }

    /// For the Pareto family: the mean lost to truncation, reported as
    /// `alpha/(alpha-1) * cap^(1-alpha)` (an upper bound on the exact loss).
    pub fn truncation_bias_bound(&self) -> f64 {
        match self {
            Self::DiscreteAtoms { .. } => 0.0,
            Self::Pareto { alpha, cap } => alpha / (alpha - 1.0) * cap.powf(1.0 - alpha),
        }
    }

    /// Builds the rule accepting with probability exactly `q`: accept
    /// strictly above the returned price always, and exactly at the price
    /// with the returned atom probability.
    pub fn threshold_for_acceptance(&self, q: f64) -> Result<ThresholdRule> {
        if !(0.0..=1.0).contains(&q) || q.is_nan() {
            return Err(Error::InvalidParameter(format!(
                "target acceptance probability must lie in [0,1], got {q}"
            )));
        }
        if q == 0.0 {
            return Ok(ThresholdRule::reject_all());
        }
        if q == 1.0 {
            return Ok(ThresholdRule::accept_all());
        }
        match self {
            Self::DiscreteAtoms { atoms } => {
                // Walk atoms from the top until the inclusive tail reaches q.
                let mut tail_excl = 0.0; // Pr[v > current atom]
                for (idx, &(v, m)) in atoms.iter().enumerate().rev() {
                    let tail_incl = if idx == 0 { 1.0 } else { tail_excl + m };
                    if tail_incl >= q {
                        let atom_prob = ((q - tail_excl) / m).clamp(0.0, 1.0);
                        return Ok(ThresholdRule {
                            price: v,
                            accept_prob_at_price: atom_prob,
                            target: q,
                        });
                    }
                    tail_excl = tail_incl;
                }
                unreachable!("inclusive tail reaches 1 at the lowest atom");
            }
            Self::Pareto { alpha, cap } => {
                let cap_mass = cap.powf(-alpha);
                if q <= cap_mass {
                    Ok(ThresholdRule {
                        price: *cap,
                        accept_prob_at_price: (q / cap_mass).clamp(0.0, 1.0),
                        target: q,
                    })
                } else {
                    Ok(ThresholdRule {
                        price: q.powf(-1.0 / alpha),
                        accept_prob_at_price: 1.0,
                        target: q,
                    })
                }
            }
        }
    }

    /// `E[v | rule accepts v]`; errors if the rule never accepts.
    pub fn cond_exp_accepted(&self, rule: &ThresholdRule) -> Result<f64> {
        let (prob, ev) = self.acceptance_moments(rule);
        if prob <= 0.0 {
            return Err(Error::DegenerateRule);
        }
        Ok(ev / prob)
    }

    /// Exact acceptance probability of a rule under this distribution.
    pub fn acceptance_probability(&self, rule: &ThresholdRule) -> f64 {
        self.acceptance_moments(rule).0
    }

    /// `(Pr[accept], E[v * accept])`.
    fn acceptance_moments(&self, rule: &ThresholdRule) -> (f64, f64) {
        let p = rule.price;
        let a = rule.accept_prob_at_price;
        match self {
            Self::DiscreteAtoms { atoms } => {
                let mut prob = 0.0;
                let mut ev = 0.0;
                for &(v, m) in atoms {
                    if v > p {
                        prob += m;
                        ev += v * m;
                    } else if v == p {
                        prob += m * a;
                        ev += v * m * a;
                    }
                }
                (prob, ev)
            }
            Self::Pareto { alpha, cap } => {
                if p > *cap {
                    (0.0, 0.0)
                } else if p == *cap {
                    let mass = cap.powf(-alpha) * a;
                    (mass, cap * mass)
                } else {
                    // Continuous part on [max(p,1), cap) plus the cap atom;
                    // an atom exactly at a continuous point carries no mass,
                    // so `a` is irrelevant below the cap.
                    let lo = p.max(1.0);
                    let prob = lo.powf(-alpha);
                    let ev = alpha / (alpha - 1.0)
                        * (lo.powf(1.0 - alpha) - cap.powf(1.0 - alpha))
                        + cap.powf(1.0 - alpha);
                    (prob, ev)
                }
            }
        }
    }

    /// Samples one valuation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::DiscreteAtoms { atoms } => {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                for &(v, m) in atoms {
                    acc += m;
                    if u < acc {
                        return v;
                    }
                }
                atoms.last().unwrap().0
            }
            Self::Pareto { alpha, cap } => {
                let u = 1.0 - rng.gen::<f64>(); // (0, 1]
                u.powf(-1.0 / alpha).min(*cap)
            }
        }
    }
}

/// Precomputed sampler for hot Monte Carlo loops; also reports the atom
/// index for finite supports.
#[derive(Debug, Clone)]
pub enum ValueSampler {
    Atoms { values: Vec<f64>, cum: Vec<f64> },
    Pareto { inv_alpha: f64, cap: f64 },
}

impl ValueSampler {
    pub fn new(dist: &ValueDistribution) -> Self {
        match dist {
            ValueDistribution::DiscreteAtoms { atoms } => {
                let values = atoms.iter().map(|&(v, _)| v).collect();
                let mut cum = Vec::with_capacity(atoms.len());
                let mut acc = 0.0;
                for &(_, m) in atoms {
                    acc += m;
                    cum.push(acc);
                }
                if let Some(last) = cum.last_mut() {
                    *last = 1.0;
                }
                Self::Atoms { values, cum }
            }
            ValueDistribution::Pareto { alpha, cap } => Self::Pareto {
                inv_alpha: 1.0 / alpha,
                cap: *cap,
            },
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Atoms { values, cum } => {
                let u: f64 = rng.gen();
                let idx = cum.partition_point(|&c| c <= u).min(values.len() - 1);
                values[idx]
            }
            Self::Pareto { inv_alpha, cap } => {
                let u = 1.0 - rng.gen::<f64>();
                u.powf(-inv_alpha).min(*cap)
            }
        }
    }

    /// Samples and returns `(value, atom index)`; panics for Pareto.
    #[inline]
    pub fn sample_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, usize) {
        match self {
            Self::Atoms { values, cum } => {
                let u: f64 = rng.gen();
                let idx = cum.partition_point(|&c| c <= u).min(values.len() - 1);
                (values[idx], idx)
            }
            Self::Pareto { .. } => panic!("atom sampling requires a finite support"),
        }
    }
}

// ---------------------------------------------------------------------------
// Threshold rules
// ---------------------------------------------------------------------------

/// A posted price with atom randomization: values strictly above `price`
/// always accept; a value exactly equal to `price` accepts with probability
/// `accept_prob_at_price`; everything below rejects. `target` records the
/// overall acceptance probability the rule was calibrated to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRule {
    pub price: f64,
    pub accept_prob_at_price: f64,
    pub target: f64,
}

impl ThresholdRule {
    /// Accepts every value.
    pub fn accept_all() -> Self {
        Self {
            price: f64::NEG_INFINITY,
            accept_prob_at_price: 1.0,
            target: 1.0,
        }
    }

    /// Rejects every value.
    pub fn reject_all() -> Self {
        Self {
            price: f64::INFINITY,
            accept_prob_at_price: 0.0,
            target: 0.0,
        }
    }

    /// Whether a buyer with valuation `value` purchases; draws the
    /// randomization coin only on exact price ties.
    #[inline]
    pub fn accepts<R: Rng + ?Sized>(&self, value: f64, rng: &mut R) -> bool {
        if value > self.price {
            true
        } else if value == self.price {
            self.accept_prob_at_price >= 1.0 || rng.gen::<f64>() < self.accept_prob_at_price
        } else {
            false
        }
    }
}
