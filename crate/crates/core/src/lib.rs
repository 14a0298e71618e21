//! Simulation laboratory and policy library for online posted pricing of
//! perishable items with stochastic horizons.
//!
//! A platform holds `m` perishable items. Item `i` remains on the shelf for a
//! random number of steps `h_i` (its *horizon*) drawn from a known
//! distribution; it can be sold at any step `t <= h_i` and departs at the end
//! of step `h_i`. An infinite stream of buyers arrives, one per step, with
//! i.i.d. (or per-step) random valuations. An online policy posts a price
//! each step; the arriving buyer purchases some available item iff her value
//! clears the price. Welfare is the sum of matched buyer values, and policies
//! are measured against the omniscient prophet who sees all realizations and
//! picks a maximum-weight matching.
//!
//! The crate provides:
//!
//! * [`dist`] — horizon and value distribution families, hazard / survival
//!   queries, monotone-hazard-rate (MHR) checks, threshold rules with atom
//!   randomization, and second-order stochastic dominance checks against the
//!   geometric benchmark;
//! * [`prophet`] — instances, realizations, the offline prophet matching and
//!   a brute-force matching oracle;
//! * [`stages`] — the half-life stage decomposition of an instance's expected
//!   inventory decay;
//! * [`bounds`] — closed-form and quadrature upper/lower bounds on prophet
//!   and policy welfare (single-item ratios, per-stage caps, low-rate
//!   asymptotics, bounded-horizon random-walk quantities);
//! * [`policies`] — posted-price policies: fixed price, blind matching,
//!   departure simulation over stage parities, single-item sampling, their
//!   constant-competitive mixture, and inventory-balancing for geometric
//!   horizons;
//! * [`simulator`] — deterministic seeded episode runner and Monte Carlo
//!   harness with common-random-number coupling against the prophet;
//! * [`lowerbounds`] — hard-instance generators and evaluators (Pareto values
//!   with low-rate geometric horizons, the log-log-gap construction, the
//!   general-horizon gap construction);
//! * [`vpro`] — the virtual-prophet LP relaxation for known finite horizons,
//!   a dense simplex solver, LP-guided assignment and truthful pricing
//!   policies, and an exact dynamic-programming optimum for tiny instances.

pub mod bounds;
pub mod dist;
pub mod error;
pub mod lowerbounds;
pub mod policies;
pub mod prophet;
pub mod rng;
pub mod simulator;
pub mod stages;
pub mod vpro;

pub use error::{Error, Result};
