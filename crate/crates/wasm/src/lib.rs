//! Browser bindings for a few closed forms from `perish-core`, used by the
//! static demo page in `www/`. Everything here is deterministic arithmetic —
//! no simulation, no randomness — so the page stays instant.
//!
//! Build with `wasm-pack build crates/wasm --target web` (see the README);
//! the crate also compiles as a normal rlib so the workspace test suite
//! covers it without a wasm toolchain.
//!
//! Invalid inputs yield `NaN`s of the expected shape instead of errors; the
//! page treats them as "nothing to draw".

use perish_core::bounds::{ratio_lb_alpha, walk_limit, walk_reach_prob};
use perish_core::policies::two_point_optimal_single;
use wasm_bindgen::prelude::*;

/// Ruin probabilities `f_j(x)` of the biased walk at each `x`, i.e. the
/// chance that a walk started at 1 (down with probability `x`) hits 0
/// within `j` steps.
#[wasm_bindgen]
pub fn walk_curve(j: u32, xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| {
            if (0.0..=1.0).contains(&x) {
                walk_reach_prob(j, x)
            } else {
                f64::NAN
            }
        })
        .collect()
}

/// The `j -> inf` limit `min(1, x / (1 - x))` at each `x`.
#[wasm_bindgen]
pub fn walk_limit_curve(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .map(|&x| if (0.0..1.0).contains(&x) { walk_limit(x) } else { f64::NAN })
        .collect()
}

/// Low-rate prophet/policy ratio limits for Pareto tail index `alpha`:
/// returns `[small_m_limit, large_m_limit]` (NaNs when `alpha <= 1`).
#[wasm_bindgen]
pub fn low_rate_limits(alpha: f64) -> Vec<f64> {
    match ratio_lb_alpha(alpha) {
        Ok((small, large)) => vec![small, large],
        Err(_) => vec![f64::NAN, f64::NAN],
    }
}

/// The two-point single-item construction at geometric mean `mu` and
/// high-value probability `p`: returns `[v_high, alg_star, pro, ratio]`
/// (NaNs when the parameters are out of range).
#[wasm_bindgen]
pub fn two_point(mu: f64, p: f64) -> Vec<f64> {
    match two_point_optimal_single(mu, p) {
        Ok(out) => vec![out.v_high, out.alg_star, out.pro, out.ratio],
        Err(_) => vec![f64::NAN; 4],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn walk_curves_match_closed_forms() {
        let xs = [0.3, 0.5, 1.5];
        let f1 = walk_curve(1, &xs);
        assert_eq!(f1[0], 0.3);
        assert_eq!(f1[1], 0.5);
        assert!(f1[2].is_nan());
        let f3 = walk_curve(3, &xs);
        assert_eq!(f3[1], 0.625);
        let lim = walk_limit_curve(&xs);
        assert!((lim[0] - 0.3 / 0.7).abs() < 1e-12);
        assert_eq!(lim[1], 1.0);
        assert!(lim[2].is_nan());
    }

    #[test]
    fn low_rate_limits_pin_alpha_two() {
        let v = low_rate_limits(2.0);
        assert!((v[0] - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(v[1], 2.0);
        assert!(low_rate_limits(1.0).iter().all(|x| x.is_nan()));
    }

    #[test]
    fn two_point_pins_known_case() {
        let v = two_point(2.0, 0.1);
        assert!((v[0] - 11.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-12);
        assert!((v[2] - (2.0 + 9.0 / 11.0)).abs() < 1e-12);
        assert!(two_point(0.5, 0.1).iter().all(|x| x.is_nan()));
        assert!(two_point(2.0, 0.0).iter().all(|x| x.is_nan()));
    }
}
