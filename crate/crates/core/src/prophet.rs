//! Instances, realizations, and the omniscient benchmark.
//!
//! The prophet sees every realized horizon and buyer value and picks a
//! maximum-weight matching: buyer `t` can serve item `i` iff `t <= h_i`.
//! Because eligibility sets are nested by deadline, a greedy pass over items
//! in ascending-horizon order, each taking the highest-valued eligible
//! unmatched buyer, is optimal; [`matching_bruteforce`] provides an
//! independent exhaustive oracle for small realizations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::{HorizonDistribution, ValueDistribution, ValueSampler};
use crate::error::{Error, Result};
use crate::rng::{map_trials, stream_rng, STREAM_REALIZATION};
use crate::simulator::WelfareEstimate;

/// Buyer valuations: one shared distribution, or one distribution per step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueProcess {
    /// Every buyer draws i.i.d. from the same distribution.
    Iid(ValueDistribution),
    /// Buyer at step `t` draws from the `t`-th distribution (1-based).
    PerStep(Vec<ValueDistribution>),
}

impl ValueProcess {
    pub fn validated(self) -> Result<Self> {
        match self {
            Self::Iid(d) => Ok(Self::Iid(d.validated()?)),
            Self::PerStep(ds) => {
                if ds.is_empty() {
                    return Err(Error::InvalidParameter(
                        "per-step value process needs at least one distribution".into(),
                    ));
                }
                Ok(Self::PerStep(
                    ds.into_iter()
                        .map(|d| d.validated())
                        .collect::<Result<_>>()?,
                ))
            }
        }
    }

    /// Distribution of the buyer arriving at `step` (1-based).
    pub fn dist_at(&self, step: u64) -> &ValueDistribution {
        match self {
            Self::Iid(d) => d,
            Self::PerStep(ds) => &ds[(step - 1) as usize],
        }
    }

    /// For i.i.d. processes, the shared distribution.
    pub fn iid(&self) -> Option<&ValueDistribution> {
        match self {
            Self::Iid(d) => Some(d),
            Self::PerStep(_) => None,
        }
    }

    /// Number of steps the process defines values for (`None` = unbounded).
    pub fn defined_steps(&self) -> Option<u64> {
        match self {
            Self::Iid(_) => None,
            Self::PerStep(ds) => Some(ds.len() as u64),
        }
    }
}

/// A market: `m` items with independent horizon distributions and a buyer
/// value process. `time_cap` is a simulation safety bound — sampling a
/// horizon above it is an error rather than a silent truncation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instance {
    pub horizons: Vec<HorizonDistribution>,
    pub values: ValueProcess,
    pub time_cap: u64,
}

impl Instance {
    pub fn new(
        horizons: Vec<HorizonDistribution>,
        values: ValueProcess,
        time_cap: u64,
    ) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::InvalidParameter("instance needs at least one item".into()));
        }
        if time_cap < 1 {
            return Err(Error::InvalidParameter("time cap must be >= 1".into()));
        }
        let horizons = horizons
            .into_iter()
            .map(|d| d.validated())
            .collect::<Result<Vec<_>>>()?;
        for d in &horizons {
            if let Some(mx) = d.support_max() {
                if mx > time_cap {
                    return Err(Error::InvalidParameter(format!(
                        "horizon support extends to {mx}, beyond time cap {time_cap}"
                    )));
                }
            }
        }
        let values = values.validated()?;
        if let Some(n) = values.defined_steps() {
            if time_cap > n {
                return Err(Error::InvalidParameter(format!(
                    "time cap {time_cap} exceeds the {n} per-step value distributions"
                )));
            }
        }
        Ok(Self { horizons, values, time_cap })
    }

    /// Number of items.
    pub fn m(&self) -> usize {
        self.horizons.len()
    }

    /// Convenience constructor: `m` i.i.d. horizons with i.i.d. values.
    pub fn iid(
        m: usize,
        horizon: HorizonDistribution,
        values: ValueDistribution,
        time_cap: u64,
    ) -> Result<Self> {
        Self::new(vec![horizon; m], ValueProcess::Iid(values), time_cap)
    }
}

/// One sampled market: realized horizons and the buyer values for steps
/// `1..=T` where `T = max(h_i)` (no buyer after the last shelf expiry can
/// ever be matched).
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub horizons: Vec<u64>,
    pub buyer_values: Vec<f64>,
}

impl Realization {
    pub fn t_max(&self) -> u64 {
        self.buyer_values.len() as u64
    }
}

/// Samples a realization: horizons in item order first, then buyer values in
/// step order (the consumption order is part of the determinism contract).
pub fn realize<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Result<Realization> {
    let mut horizons = Vec::with_capacity(inst.m());
    for d in &inst.horizons {
        let h = d.sample(rng);
        if h > inst.time_cap {
            return Err(Error::CapExceeded { horizon: h, cap: inst.time_cap });
        }
        horizons.push(h);
    }
    let t_max = *horizons.iter().max().unwrap();
    let mut buyer_values = Vec::with_capacity(t_max as usize);
    match &inst.values {
        ValueProcess::Iid(d) => {
            let sampler = ValueSampler::new(d);
            for _ in 0..t_max {
                buyer_values.push(sampler.sample(rng));
            }
        }
        ValueProcess::PerStep(ds) => {
            for t in 1..=t_max {
                buyer_values.push(ds[(t - 1) as usize].sample(rng));
            }
        }
    }
    Ok(Realization { horizons, buyer_values })
}

/// An offline matching: total welfare and, per item, the step of the buyer
/// it was matched to.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingResult {
    pub welfare: f64,
    pub assignment: Vec<Option<u64>>,
}

/// Max-heap key: highest value first, ties broken towards the earliest step.
#[derive(PartialEq)]
struct BuyerKey(f64, std::cmp::Reverse<u64>);

impl Eq for BuyerKey {}

impl PartialOrd for BuyerKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for BuyerKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

/// Optimal offline matching, greedily: items in ascending-horizon order
/// (ties by index) each take the highest-valued unmatched buyer arriving at
/// or before their deadline (ties by earliest step).
pub fn prophet_offline(r: &Realization) -> MatchingResult {
    let m = r.horizons.len();
    let mut assignment = vec![None; m];

    if m == 1 {
        // Single item: take the running max over its window.
        let h = r.horizons[0] as usize;
        let mut best = f64::NEG_INFINITY;
        let mut best_step = 0u64;
        for (idx, &v) in r.buyer_values[..h.min(r.buyer_values.len())].iter().enumerate() {
            if v > best {
                best = v;
                best_step = idx as u64 + 1;
            }
        }
        if best_step > 0 {
            assignment[0] = Some(best_step);
            return MatchingResult { welfare: best, assignment };
        }
        return MatchingResult { welfare: 0.0, assignment };
    }

    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by_key(|&i| (r.horizons[i], i));

    let mut heap = std::collections::BinaryHeap::new();
    let mut next_step = 1u64;
    let mut welfare = 0.0;
    for &i in &order {
        let h = r.horizons[i];
        while next_step <= h && next_step <= r.t_max() {
            heap.push(BuyerKey(
                r.buyer_values[(next_step - 1) as usize],
                std::cmp::Reverse(next_step),
            ));
            next_step += 1;
        }
        if let Some(BuyerKey(v, std::cmp::Reverse(step))) = heap.pop() {
            welfare += v;
            assignment[i] = Some(step);
        }
    }
    MatchingResult { welfare, assignment }
}

/// Exhaustive maximum-weight matching over item subsets; guards `m <= 8`,
/// `T <= 12`. Independent oracle for [`prophet_offline`].
pub fn matching_bruteforce(r: &Realization) -> Result<MatchingResult> {
    let m = r.horizons.len();
    let t = r.t_max() as usize;
    if m > 8 || t > 12 {
        return Err(Error::TooLarge(format!(
            "brute-force matching supports m <= 8 and T <= 12, got m={m}, T={t}"
        )));
    }
    let full = 1usize << m;
    let neg = f64::NEG_INFINITY;
    // dp[step][mask]: best welfare using the first `step` buyers with
    // matched-item set exactly `mask`.
    let mut dp = vec![vec![neg; full]; t + 1];
    dp[0][0] = 0.0;
    for step in 1..=t {
        let v = r.buyer_values[step - 1];
        for mask in 0..full {
            let mut best = dp[step - 1][mask];
            for i in 0..m {
                if mask & (1 << i) != 0 && r.horizons[i] >= step as u64 {
                    let from = dp[step - 1][mask & !(1 << i)];
                    if from != neg && from + v > best {
                        best = from + v;
                    }
                }
            }
            dp[step][mask] = best;
        }
    }
    let (mut best_mask, mut best) = (0usize, 0.0f64);
    for mask in 0..full {
        if dp[t][mask] > best {
            best = dp[t][mask];
            best_mask = mask;
        }
    }
    // Backtrack one optimal assignment; branch equalities are exact because
    // each candidate was computed by the identical float expression.
    let mut assignment = vec![None; m];
    let mut mask = best_mask;
    for step in (1..=t).rev() {
        if mask == 0 {
            break;
        }
        if dp[step][mask] == dp[step - 1][mask] {
            continue;
        }
        let v = r.buyer_values[step - 1];
        for i in 0..m {
            if mask & (1 << i) != 0
                && r.horizons[i] >= step as u64
                && dp[step - 1][mask & !(1 << i)] != neg
                && dp[step - 1][mask & !(1 << i)] + v == dp[step][mask]
            {
                assignment[i] = Some(step as u64);
                mask &= !(1 << i);
                break;
            }
        }
    }
    Ok(MatchingResult { welfare: best, assignment })
}

/// Monte Carlo estimate of the prophet's expected welfare.
pub fn estimate_pro(inst: &Instance, trials: u64, seed: u64) -> Result<WelfareEstimate> {
    let samples = map_trials(trials, |trial| {
        let mut rng = stream_rng(seed, trial, STREAM_REALIZATION);
        let r = realize(inst, &mut rng)?;
        Ok(prophet_offline(&r).welfare)
    })?;
    Ok(WelfareEstimate::from_samples(&samples))
}
