//! The value-revealing assignment relaxation (VPro) and its derived policies.
//!
//! With buyer arrivals truncated at a finite step `n`, an upper bound on any
//! online policy's welfare is the small linear program over assignment
//! variables `y_{ivh}`: routing buyer `h` with value `v` to item `i` earns
//! `v` discounted by the chance `Pr[Z_i >= h]` that the item is still on the
//! shelf. Capacity rows keep each `(h, v)` pair's total routing consistent
//! with the value distribution, item rows sell each item at most once, and
//! optional monotone rows force the per-value routing rates to grow with the
//! value — the shape a truthful menu-pricing scheme needs.
//!
//! From a solved LP the module derives two online policies: a randomized
//! candidate-set assignment that recovers at least one eighth of the LP
//! optimum, and a nested-menu pricing scheme with the same guarantee against
//! the monotone LP. A backward-induction oracle computes the exact optimal
//! policy value on desk-sized instances for end-to-end verification.

use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::dist::{HorizonDistribution, ThresholdRule, ValueDistribution};
use crate::error::{Error, Result};
use crate::prophet::{Instance, ValueProcess};
use crate::simulator::{MarketView, Policy, PolicyFactory};

/// Hard cap on LP columns; beyond this the dense solver is the wrong tool.
pub const MAX_LP_COLUMNS: usize = 10_000;

/// Residual tolerance for solutions: every constraint must hold within this
/// slack, re-checked independently of the solver's own arithmetic.
pub const LP_RESIDUAL_TOL: f64 = 1e-9;

/// Reduced costs below this are treated as non-improving.
const RC_TOL: f64 = 1e-9;

/// Pivot elements at or below this magnitude are rejected as unstable.
const PIVOT_FLOOR: f64 = 1e-12;

/// Simplex pivot budget; Bland's rule terminates long before this on
/// desk-sized programs, so hitting it signals a numerical pathology.
const ITERATION_CAP: u64 = 200_000;

/// Menu increments below `-NEG_INCREMENT_TOL` mean the supplied solution
/// does not satisfy the monotone rows; smaller dips are clamped to zero.
const NEG_INCREMENT_TOL: f64 = 1e-9;

// ---------------------------------------------------------------------------
// Finite instances
// ---------------------------------------------------------------------------

/// A finite market for the assignment LP: `m` items whose horizons live on
/// `{1, ..., n}` and one finite-atom value distribution per buyer step.
#[derive(Debug, Clone)]
pub struct FiniteInstance {
    pub horizons: Vec<HorizonDistribution>,
    /// Value distribution of the buyer arriving at step `h` (1-based).
    pub step_values: Vec<ValueDistribution>,
}

impl FiniteInstance {
    pub fn new(
        horizons: Vec<HorizonDistribution>,
        step_values: Vec<ValueDistribution>,
    ) -> Result<Self> {
        if horizons.is_empty() {
            return Err(Error::InvalidParameter(
                "finite instance needs at least one item".into(),
            ));
        }
        if step_values.is_empty() {
            return Err(Error::InvalidParameter(
                "finite instance needs at least one buyer step".into(),
            ));
        }
        let n = step_values.len() as u64;
        let horizons = horizons
            .into_iter()
            .map(|d| d.validated())
            .collect::<Result<Vec<_>>>()?;
        for d in &horizons {
            match d.support_max() {
                Some(mx) if mx <= n => {}
                Some(mx) => {
                    return Err(Error::InvalidParameter(format!(
                        "horizon support reaches {mx}, beyond the {n} buyer steps"
                    )));
                }
                None => {
                    return Err(Error::InvalidParameter(
                        "finite instance needs bounded horizon supports; truncate first".into(),
                    ));
                }
            }
        }
        let step_values = step_values
            .into_iter()
            .map(|d| match d.validated()? {
                d @ ValueDistribution::DiscreteAtoms { .. } => Ok(d),
                ValueDistribution::Pareto { .. } => Err(Error::InvalidParameter(
                    "assignment LP needs finite-atom value distributions".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { horizons, step_values })
    }

    /// Number of items.
    pub fn m(&self) -> usize {
        self.horizons.len()
    }

    /// Number of buyer steps.
    pub fn n(&self) -> u64 {
        self.step_values.len() as u64
    }

    /// Value atoms `(value, mass)` of the buyer at `step` (1-based).
    fn atoms_at(&self, step: u64) -> &[(f64, f64)] {
        match &self.step_values[(step - 1) as usize] {
            ValueDistribution::DiscreteAtoms { atoms } => atoms,
            ValueDistribution::Pareto { .. } => {
                panic!("finite instance holds a non-atomic value distribution")
            }
        }
    }

    /// The same market as a simulator instance; buyers stop at step `n`.
    pub fn to_instance(&self) -> Result<Instance> {
        Instance::new(
            self.horizons.clone(),
            ValueProcess::PerStep(self.step_values.clone()),
            self.n(),
        )
    }
}

/// Value grid the random instance generator draws atoms from.
const VALUE_GRID: [f64; 7] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 5.0];

/// Draws a small random finite instance: 1–3 items over 1–5 buyer steps,
/// bounded horizon families, and 1–3 value atoms per step. Every draw
/// passes [`FiniteInstance::new`] validation.
pub fn random_finite_instance<R: Rng + ?Sized>(rng: &mut R) -> FiniteInstance {
    let m = rng.gen_range(1..=3usize);
    let n = rng.gen_range(1..=5u64);
    let mut horizons = Vec::with_capacity(m);
    for _ in 0..m {
        let d = match rng.gen_range(0..4u8) {
            0 => HorizonDistribution::Deterministic { n: rng.gen_range(1..=n) },
            1 => {
                let lo = rng.gen_range(1..=n);
                let hi = rng.gen_range(lo..=n);
                HorizonDistribution::UniformRange { lo, hi }
            }
            2 => HorizonDistribution::TruncatedGeometric {
                mean: 1.0 + 5.0 * rng.gen::<f64>(),
                cap: n,
            },
            _ => {
                let k = rng.gen_range(1..=n);
                let mut supports: Vec<u64> = Vec::with_capacity(k as usize);
                while (supports.len() as u64) < k {
                    let t = rng.gen_range(1..=n);
                    if !supports.contains(&t) {
                        supports.push(t);
                    }
                }
                supports.sort_unstable();
                let raw: Vec<f64> =
                    (0..supports.len()).map(|_| rng.gen_range(1..=4) as f64).collect();
                let total: f64 = raw.iter().sum();
                HorizonDistribution::ExplicitPmf {
                    pmf: supports.iter().zip(&raw).map(|(&t, &w)| (t, w / total)).collect(),
                }
            }
        };
        horizons.push(d);
    }
    let mut step_values = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let k = rng.gen_range(1..=3usize);
        let mut picks: Vec<usize> = Vec::with_capacity(k);
        while picks.len() < k {
            let j = rng.gen_range(0..VALUE_GRID.len());
            if !picks.contains(&j) {
                picks.push(j);
            }
        }
        picks.sort_unstable();
        let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(1..=4) as f64).collect();
        let total: f64 = raw.iter().sum();
        step_values.push(ValueDistribution::DiscreteAtoms {
            atoms: picks.iter().zip(&raw).map(|(&j, &w)| (VALUE_GRID[j], w / total)).collect(),
        });
    }
    FiniteInstance::new(horizons, step_values).expect("generator draws are valid by construction")
}

// ---------------------------------------------------------------------------
// LP build
// ---------------------------------------------------------------------------

/// One LP column: the routing variable of `(item, step, value atom)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LpColumn {
    pub item: usize,
    pub step: u64,
    /// Atom index within the step's value distribution.
    pub atom: usize,
    /// The atom's value and probability mass.
    pub value: f64,
    pub mass: f64,
    /// `Pr[Z_item >= step]`.
    pub survival: f64,
}

/// Dense `max c'y  s.t.  Ay <= b, y >= 0` with named rows and columns.
/// Every right-hand side is nonnegative, so the all-slack basis is feasible
/// and the solver needs no phase one.
#[derive(Debug, Clone)]
pub struct VproLp {
    pub cols: Vec<LpColumn>,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub row_names: Vec<String>,
    pub monotone: bool,
    index: HashMap<(usize, u64, usize), usize>,
}

impl VproLp {
    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn n_rows(&self) -> usize {
        self.a.len()
    }

    /// Column index of `(item, step, atom)`, if present.
    pub fn column(&self, item: usize, step: u64, atom: usize) -> Option<usize> {
        self.index.get(&(item, step, atom)).copied()
    }
}

/// Builds the assignment LP for a finite instance. With `monotone` the
/// program also carries, for every item and step, the ordering rows
/// `y_{iv1h} / Pr[X_h=v1] <= y_{iv2h} / Pr[X_h=v2]` between consecutive
/// value atoms `v1 < v2` (cleared of denominators).
pub fn build_vpro_lp(fi: &FiniteInstance, monotone: bool) -> Result<VproLp> {
    let m = fi.m();
    let n = fi.n();
    let total_atoms: usize = (1..=n).map(|h| fi.atoms_at(h).len()).sum();
    let n_cols = m * total_atoms;
    if n_cols > MAX_LP_COLUMNS {
        return Err(Error::TooLarge(format!(
            "assignment LP would have {n_cols} columns, cap is {MAX_LP_COLUMNS}"
        )));
    }

    let mut cols = Vec::with_capacity(n_cols);
    let mut index = HashMap::with_capacity(n_cols);
    for i in 0..m {
        for h in 1..=n {
            let survival = fi.horizons[i].survival(h);
            for (j, &(value, mass)) in fi.atoms_at(h).iter().enumerate() {
                index.insert((i, h, j), cols.len());
                cols.push(LpColumn { item: i, step: h, atom: j, value, mass, survival });
            }
        }
    }
    let c: Vec<f64> = cols.iter().map(|col| col.survival * col.value).collect();

    let mut a: Vec<Vec<f64>> = Vec::new();
    let mut b: Vec<f64> = Vec::new();
    let mut row_names: Vec<String> = Vec::new();

    // Capacity: the survival-weighted routing of each (step, value) pair
    // cannot exceed the chance the buyer has that value.
    for h in 1..=n {
        for (j, &(_, mass)) in fi.atoms_at(h).iter().enumerate() {
            let mut row = vec![0.0; n_cols];
            for i in 0..m {
                let col = index[&(i, h, j)];
                row[col] = cols[col].survival;
            }
            a.push(row);
            b.push(mass);
            row_names.push(format!("cap_h{h}_a{j}"));
        }
    }

    // Each item is sold at most once.
    for i in 0..m {
        let mut row = vec![0.0; n_cols];
        for (col, lc) in cols.iter().enumerate() {
            if lc.item == i {
                row[col] = 1.0;
            }
        }
        a.push(row);
        b.push(1.0);
        row_names.push(format!("item_{i}"));
    }

    if monotone {
        for i in 0..m {
            for h in 1..=n {
                let atoms = fi.atoms_at(h);
                for j in 0..atoms.len().saturating_sub(1) {
                    let lo = index[&(i, h, j)];
                    let hi = index[&(i, h, j + 1)];
                    let mut row = vec![0.0; n_cols];
                    row[lo] = cols[hi].mass;
                    row[hi] = -cols[lo].mass;
                    a.push(row);
                    b.push(0.0);
                    row_names.push(format!("mono_i{i}_h{h}_a{j}"));
                }
            }
        }
    }

    Ok(VproLp { cols, a, b, c, row_names, monotone, index })
}

// ---------------------------------------------------------------------------
// Simplex
// ---------------------------------------------------------------------------

/// A solved LP: column values, objective, pivot count, and the largest
/// constraint violation measured directly against the original data.
#[derive(Debug, Clone)]
pub struct LpSolution {
    pub y: Vec<f64>,
    pub objective: f64,
    pub pivots: u64,
    pub max_residual: f64,
}

/// Maximizes the LP by a dense tableau simplex with Bland's anti-cycling
/// rule (lowest improving column enters; ratio-test ties break toward the
/// lowest basic variable). The all-slack basis is feasible because every
/// right-hand side is nonnegative.
pub fn solve_lp(lp: &VproLp) -> Result<LpSolution> {
    let n_cols = lp.n_cols();
    let n_rows = lp.n_rows();
    let width = n_cols + n_rows; // structural + slack variables
    for (r, row) in lp.a.iter().enumerate() {
        if row.len() != n_cols || !lp.b[r].is_finite() || lp.b[r] < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "malformed LP row {r}: expected {n_cols} finite coefficients and b >= 0"
            )));
        }
    }

    let mut tab: Vec<Vec<f64>> = Vec::with_capacity(n_rows);
    for r in 0..n_rows {
        let mut row = Vec::with_capacity(width + 1);
        row.extend_from_slice(&lp.a[r]);
        row.extend((0..n_rows).map(|s| if s == r { 1.0 } else { 0.0 }));
        row.push(lp.b[r]);
        tab.push(row);
    }
    let mut cost: Vec<f64> = Vec::with_capacity(width + 1);
    cost.extend_from_slice(&lp.c);
    cost.extend(std::iter::repeat(0.0).take(n_rows + 1));
    let mut basis: Vec<usize> = (n_cols..width).collect();

    let mut pivots = 0u64;
    loop {
        let Some(enter) = (0..width).find(|&j| cost[j] > RC_TOL) else {
            break;
        };
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for r in 0..n_rows {
            let coeff = tab[r][enter];
            if coeff <= PIVOT_FLOOR {
                continue;
            }
            let ratio = tab[r][width] / coeff;
            match leave {
                None => {
                    best_ratio = ratio;
                    leave = Some(r);
                }
                Some(l) => {
                    if ratio < best_ratio || (ratio == best_ratio && basis[r] < basis[l]) {
                        best_ratio = ratio;
                        leave = Some(r);
                    }
                }
            }
        }
        let Some(lr) = leave else {
            return Err(Error::LpUnbounded);
        };

        let piv = tab[lr][enter];
        for x in tab[lr].iter_mut() {
            *x /= piv;
        }
        let pivot_row = tab[lr].clone();
        for (r, row) in tab.iter_mut().enumerate() {
            if r == lr {
                continue;
            }
            let f = row[enter];
            if f != 0.0 {
                for (x, &p) in row.iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
            }
        }
        let f = cost[enter];
        if f != 0.0 {
            for (x, &p) in cost.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
        }
        basis[lr] = enter;
        pivots += 1;
        if pivots > ITERATION_CAP {
            return Err(Error::LpIterationLimit(pivots));
        }
    }

    let mut x = vec![0.0; width];
    for (r, &bv) in basis.iter().enumerate() {
        x[bv] = tab[r][width];
    }
    let y: Vec<f64> = x[..n_cols].to_vec();
    let objective: f64 = lp.c.iter().zip(&y).map(|(&ci, &yi)| ci * yi).sum();

    let mut max_residual = 0.0f64;
    for (row, &bound) in lp.a.iter().zip(&lp.b) {
        let lhs: f64 = row.iter().zip(&y).map(|(&ar, &yi)| ar * yi).sum();
        max_residual = max_residual.max(lhs - bound);
    }
    for &yi in &y {
        max_residual = max_residual.max(-yi);
    }
    if max_residual > LP_RESIDUAL_TOL {
        return Err(Error::NoConvergence(format!(
            "simplex solution violates a constraint by {max_residual:.3e}"
        )));
    }

    Ok(LpSolution { y, objective, pivots, max_residual })
}

/// Renders the program in the line-oriented LP text format so external
/// solvers can cross-check the optimum. Zero coefficients are omitted.
pub fn write_lp_text(lp: &VproLp) -> String {
    let var = |col: &LpColumn| format!("y_i{}_h{}_a{}", col.item, col.step, col.atom);
    let mut out = String::from("Maximize\n obj:");
    let mut any = false;
    for (j, col) in lp.cols.iter().enumerate() {
        if lp.c[j] != 0.0 {
            out.push_str(&format!(" {} {} {}", if any { "+" } else { "" }, lp.c[j], var(col)));
            any = true;
        }
    }
    if !any {
        out.push_str(&format!(" 0 {}", var(&lp.cols[0])));
    }
    out.push_str("\nSubject To\n");
    for (r, row) in lp.a.iter().enumerate() {
        out.push_str(&format!(" {}:", lp.row_names[r]));
        let mut first = true;
        for (j, &coeff) in row.iter().enumerate() {
            if coeff == 0.0 {
                continue;
            }
            if coeff < 0.0 {
                out.push_str(&format!(" - {} {}", -coeff, var(&lp.cols[j])));
            } else {
                out.push_str(&format!(" {} {} {}", if first { "" } else { "+" }, coeff, var(&lp.cols[j])));
            }
            first = false;
        }
        if first {
            out.push_str(&format!(" 0 {}", var(&lp.cols[0])));
        }
        out.push_str(&format!(" <= {}\n", lp.b[r]));
    }
    out.push_str("End\n");
    out
}

// ---------------------------------------------------------------------------
// Candidate tables shared by the two derived policies
// ---------------------------------------------------------------------------

/// Per-step candidate-set probabilities derived from an LP solution: for
/// each buyer step and each value atom, the per-item inclusion probability
/// `min(1, y / (2 Pr[X_h = v]))` (cumulative across atoms for nested menus).
#[derive(Debug, Clone)]
struct CandidateTable {
    /// step (0-based) -> atom values, ascending.
    values: Vec<Vec<f64>>,
    /// step -> atom -> item -> inclusion probability.
    probs: Vec<Vec<Vec<f64>>>,
}

impl CandidateTable {
    fn atom_index(&self, step: usize, value: f64) -> Option<usize> {
        let vals = self.values.get(step)?;
        if let Some(j) = vals.iter().position(|&v| v == value) {
            return Some(j);
        }
        vals.iter().position(|&v| (v - value).abs() <= 1e-9 * v.abs().max(1.0))
    }
}

/// Raw inclusion ratio of one column, clamped into `[0, 1]`.
fn inclusion_prob(lp: &VproLp, sol: &LpSolution, item: usize, step: u64, atom: usize) -> f64 {
    let y = lp
        .column(item, step, atom)
        .map(|col| sol.y[col])
        .unwrap_or(0.0);
    let mass = lp
        .column(item, step, atom)
        .map(|col| lp.cols[col].mass)
        .unwrap_or(1.0);
    (y / (2.0 * mass)).clamp(0.0, 1.0)
}

fn candidate_table(lp: &VproLp, sol: &LpSolution, fi: &FiniteInstance) -> CandidateTable {
    let m = fi.m();
    let mut values = Vec::with_capacity(fi.n() as usize);
    let mut probs = Vec::with_capacity(fi.n() as usize);
    for h in 1..=fi.n() {
        let atoms = fi.atoms_at(h);
        values.push(atoms.iter().map(|&(v, _)| v).collect::<Vec<_>>());
        let mut per_atom = Vec::with_capacity(atoms.len());
        for j in 0..atoms.len() {
            per_atom.push((0..m).map(|i| inclusion_prob(lp, sol, i, h, j)).collect::<Vec<_>>());
        }
        probs.push(per_atom);
    }
    CandidateTable { values, probs }
}

/// Cumulative (nested) variant: entry `j` holds the probability that the
/// item belongs to the menu of atom `j` or any lower atom's menu. Requires
/// the monotone rows to hold; a materially negative increment is an error.
fn nested_table(lp: &VproLp, sol: &LpSolution, fi: &FiniteInstance) -> Result<CandidateTable> {
    let m = fi.m();
    let mut table = candidate_table(lp, sol, fi);
    for h in 1..=fi.n() {
        let step = (h - 1) as usize;
        for i in 0..m {
            let mut prev_raw = f64::NEG_INFINITY;
            let mut prev_cum = 0.0f64;
            for j in 0..table.values[step].len() {
                let col = lp
                    .column(i, h, j)
                    .expect("every (item, step, atom) has a column");
                let raw = sol.y[col] / (2.0 * lp.cols[col].mass);
                if prev_raw.is_finite() && raw - prev_raw < -NEG_INCREMENT_TOL {
                    return Err(Error::NegativeIncrement {
                        item: i,
                        step: h,
                        value: raw - prev_raw,
                    });
                }
                prev_raw = raw;
                let cum = prev_cum.max(table.probs[step][j][i]);
                table.probs[step][j][i] = cum;
                prev_cum = cum;
            }
        }
    }
    Ok(table)
}

/// Half-occupancy audit of an LP solution: the largest, over `(step, value)`
/// pairs, expected number of still-present items in the sampled candidate
/// set, `sum_i min(1, y/(2 Pr[X_h=v])) * Pr[Z_i >= h]`. Feasible solutions
/// keep this at or below one half.
pub fn assignment_expected_load(lp: &VproLp, sol: &LpSolution) -> f64 {
    let mut loads: HashMap<(u64, usize), f64> = HashMap::new();
    for (j, col) in lp.cols.iter().enumerate() {
        let q = (sol.y[j] / (2.0 * col.mass)).clamp(0.0, 1.0);
        *loads.entry((col.step, col.atom)).or_insert(0.0) += q * col.survival;
    }
    loads.into_values().fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Randomized assignment policy
// ---------------------------------------------------------------------------

/// The candidate-set assignment policy: accept every buyer, sample the set
/// `S_{hv}` by independent coins `min(1, y/(2 Pr[X_h=v]))`, and hand over
/// the lowest-index sampled item still on the shelf (forfeiting the sale if
/// the set holds none). Recovers at least one eighth of the LP optimum.
pub struct VproAssignment {
    table: CandidateTable,
    m: usize,
    rng: ChaCha8Rng,
}

/// Builds one assignment policy instance around its own randomness stream.
pub fn vpro_assignment_policy(
    lp: &VproLp,
    sol: &LpSolution,
    fi: &FiniteInstance,
    rng: ChaCha8Rng,
) -> VproAssignment {
    VproAssignment { table: candidate_table(lp, sol, fi), m: fi.m(), rng }
}

/// Factory form for Monte Carlo runs: one fresh policy per trial.
pub fn vpro_assignment_factory(
    lp: &VproLp,
    sol: &LpSolution,
    fi: &FiniteInstance,
) -> impl PolicyFactory {
    let table = candidate_table(lp, sol, fi);
    let m = fi.m();
    move |_trial: u64, rng: ChaCha8Rng| {
        Box::new(VproAssignment { table: table.clone(), m, rng }) as Box<dyn Policy>
    }
}

impl Policy for VproAssignment {
    fn post(&mut self, _view: &MarketView) -> ThresholdRule {
        ThresholdRule::accept_all()
    }

    fn select_item(&mut self, view: &MarketView, value: f64) -> Option<usize> {
        let step = (view.step - 1) as usize;
        let j = self.table.atom_index(step, value)?;
        let probs = &self.table.probs[step][j];
        let mut chosen = None;
        // Flip every item's coin so the randomness layout does not depend
        // on shelf state, then take the lowest sampled item still present.
        for (i, &q) in probs.iter().enumerate().take(self.m) {
            let hit = self.rng.gen::<f64>() < q;
            if hit && chosen.is_none() && view.on_shelf[i] {
                chosen = Some(i);
            }
        }
        chosen
    }
}

// ---------------------------------------------------------------------------
// Truthful nested-menu pricing
// ---------------------------------------------------------------------------

/// The nested-menu pricing scheme: at each step, one uniform draw per item
/// places it in the menus of all atoms at or above a cutoff (nesting follows
/// from the monotone rows). The policy posts the lowest atom value whose
/// menu holds an available item and hands exactly that item to an accepting
/// buyer. Buyers optimize their own surplus, so posting plain prices is
/// enough — no value announcement is needed.
pub struct TruthfulPricing {
    /// Cumulative per-atom inclusion probabilities (nested menus).
    table: CandidateTable,
    m: usize,
    rng: ChaCha8Rng,
    pending: Option<usize>,
}

/// Builds one pricing policy from a monotone-LP solution. Fails with
/// [`Error::NegativeIncrement`] if the solution violates the monotone rows.
pub fn truthful_pricing_policy(
    lp: &VproLp,
    sol: &LpSolution,
    fi: &FiniteInstance,
    rng: ChaCha8Rng,
) -> Result<TruthfulPricing> {
    Ok(TruthfulPricing { table: nested_table(lp, sol, fi)?, m: fi.m(), rng, pending: None })
}

/// Factory form for Monte Carlo runs: one fresh policy per trial.
pub fn truthful_pricing_factory(
    lp: &VproLp,
    sol: &LpSolution,
    fi: &FiniteInstance,
) -> Result<impl PolicyFactory> {
    let table = nested_table(lp, sol, fi)?;
    let m = fi.m();
    Ok(move |_trial: u64, rng: ChaCha8Rng| {
        Box::new(TruthfulPricing { table: table.clone(), m, rng, pending: None })
            as Box<dyn Policy>
    })
}

impl Policy for TruthfulPricing {
    fn post(&mut self, view: &MarketView) -> ThresholdRule {
        self.pending = None;
        let step = (view.step - 1) as usize;
        let Some(vals) = self.table.values.get(step) else {
            return ThresholdRule::reject_all();
        };
        let coins: Vec<f64> = (0..self.m).map(|_| self.rng.gen::<f64>()).collect();
        for (j, &price) in vals.iter().enumerate() {
            let menu = &self.table.probs[step][j];
            for i in 0..self.m {
                if coins[i] < menu[i] && view.on_shelf[i] {
                    self.pending = Some(i);
                    return ThresholdRule {
                        price,
                        accept_prob_at_price: 1.0,
                        target: f64::NAN,
                    };
                }
            }
        }
        ThresholdRule::reject_all()
    }

    fn select_item(&mut self, _view: &MarketView, _value: f64) -> Option<usize> {
        self.pending.take()
    }
}

// ---------------------------------------------------------------------------
// Exact optimum by backward induction
// ---------------------------------------------------------------------------

/// Exact expected welfare of the optimal non-anticipating policy, by
/// backward induction over `(step, set of items still on the shelf)`. The
/// policy sees departures as they happen and the current buyer's value, but
/// never future horizons — given the state, the best action is to match the
/// buyer to the presence-set maximizer of `value + continuation`, or to
/// pass. Guarded to `m <= 3`, `n <= 5`, and at most 3 atoms per step.
pub fn exact_optimal_policy_value(fi: &FiniteInstance) -> Result<f64> {
    let m = fi.m();
    let n = fi.n();
    if m > 3 || n > 5 {
        return Err(Error::TooLarge(format!(
            "exact optimum enumerates m <= 3 items over n <= 5 steps, got m={m}, n={n}"
        )));
    }
    for h in 1..=n {
        let k = fi.atoms_at(h).len();
        if k > 3 {
            return Err(Error::TooLarge(format!(
                "exact optimum allows at most 3 value atoms per step, step {h} has {k}"
            )));
        }
    }

    let full = (1usize << m) - 1;
    // next[s] = value-to-go from the start of step h+1 with shelf set s.
    let mut next = vec![0.0f64; full + 1];
    for h in (1..=n).rev() {
        // Conditional per-item survival from step h to h+1.
        let stay: Vec<f64> = (0..m)
            .map(|i| {
                let alive = fi.horizons[i].survival(h);
                if alive <= 0.0 {
                    0.0
                } else {
                    fi.horizons[i].survival(h + 1) / alive
                }
            })
            .collect();

        // cont[s] = E[next state value] if the shelf holds s after step h's
        // match decision, averaging over end-of-step departures.
        let mut cont = vec![0.0f64; full + 1];
        for (s, slot) in cont.iter_mut().enumerate() {
            let mut acc = 0.0;
            let mut kept = s;
            loop {
                let mut p = 1.0;
                for i in 0..m {
                    let bit = 1usize << i;
                    if s & bit != 0 {
                        p *= if kept & bit != 0 { stay[i] } else { 1.0 - stay[i] };
                    }
                }
                acc += p * next[kept];
                if kept == 0 {
                    break;
                }
                kept = (kept - 1) & s;
            }
            *slot = acc;
        }

        let atoms = fi.atoms_at(h);
        let mut cur = vec![0.0f64; full + 1];
        for (s, slot) in cur.iter_mut().enumerate() {
            let mut w = 0.0;
            for &(v, mass) in atoms {
                let mut best = cont[s];
                for i in 0..m {
                    let bit = 1usize << i;
                    if s & bit != 0 {
                        best = best.max(v + cont[s & !bit]);
                    }
                }
                w += mass * best;
            }
            *slot = w;
        }
        next = cur;
    }
    Ok(next[full])
}
