//! Strictly feasible starting frame: maximizes the smallest normalized row
//! slack `(rhs_i - Re(c_i^H x)) / ||c_i||` subject to the energy ball.
//!
//! For a slack level `delta` the cheapest frame meeting every row with that
//! margin is the per-slot minimum-norm point of the tightened polyhedra; its
//! energy grows monotonically with `delta`, so the optimum is found by
//! bisection on `delta`.

use num_complex::Complex64;

use crate::error::{IsacError, Result};
use crate::linalg::{CMat, CVec};

use super::constraints::ConstraintSet;
use super::subproblem::SlotSystems;

/// Minimum raw slack required of a phase-1 point.
pub const MIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Phase1Outcome {
    /// Frame attaining (up to bisection accuracy) the best normalized slack.
    pub x: CMat,
    /// Optimal normalized slack; negative when the set is empty.
    pub slack: f64,
    pub feasible: bool,
}

fn min_norm(sys: &SlotSystems, set: &ConstraintSet, delta: f64) -> (Vec<CVec>, f64) {
    let rhs = sys.tightened_rhs(set, delta);
    let zeros: Vec<CVec> = (0..set.n_slots).map(|_| CVec::zeros(set.n_tx)).collect();
    let (xs, _, energy) = sys.project_all(&zeros, &rhs);
    (xs, energy)
}

fn assemble(xs: &[CVec], n_tx: usize) -> CMat {
    CMat::from_fn(n_tx, xs.len(), |i, l| xs[l][i])
}

/// Solves the max-min-slack problem without judging feasibility.
pub fn max_min_slack(set: &ConstraintSet) -> Phase1Outcome {
    let sys = SlotSystems::new(set);
    if set.n_rows() == 0 {
        return Phase1Outcome {
            x: CMat::zeros(set.n_tx, set.n_slots),
            slack: f64::INFINITY,
            feasible: true,
        };
    }
    let budget = set.energy_budget;
    // at delta_lo the origin already satisfies every tightened row
    let mut delta_lo = set
        .slots
        .iter()
        .zip(&sys.systems)
        .flat_map(|(rows, s)| rows.iter().zip(s.norms()).map(|(r, n)| r.rhs / n))
        .fold(0.0f64, f64::min);
    let (mut x_lo, _) = min_norm(&sys, set, delta_lo);

    let mut delta_hi = delta_lo.abs().max(1.0);
    let mut found_hi = false;
    for _ in 0..200 {
        let (xs, e) = min_norm(&sys, set, delta_hi);
        if e > budget {
            found_hi = true;
            break;
        }
        delta_lo = delta_hi;
        x_lo = xs;
        delta_hi *= 2.0;
    }
    if found_hi {
        for _ in 0..200 {
            if delta_hi - delta_lo <= 1e-13 * delta_hi.abs().max(delta_lo.abs()).max(1e-300) {
                break;
            }
            let mid = 0.5 * (delta_lo + delta_hi);
            let (xs, e) = min_norm(&sys, set, mid);
            if e <= budget {
                delta_lo = mid;
                x_lo = xs;
            } else {
                delta_hi = mid;
            }
        }
    }
    let x = assemble(&x_lo, set.n_tx);
    let raw_min = set.min_slack(&x);
    Phase1Outcome {
        feasible: delta_lo > 0.0 && raw_min >= MIN_SLACK && x.norm_squared() <= budget * (1.0 + 1e-12),
        slack: delta_lo,
        x,
    }
}

/// A strictly feasible frame, or an infeasibility error carrying the best
/// achievable normalized slack.
pub fn phase1_feasible(set: &ConstraintSet) -> Result<CMat> {
    let out = max_min_slack(set);
    if out.feasible {
        // keep the point inside the ball as well
        let e = out.x.norm_squared();
        if e > set.energy_budget {
            let s = (set.energy_budget / e).sqrt();
            return Ok(out.x * Complex64::new(s, 0.0));
        }
        Ok(out.x)
    } else {
        Err(IsacError::Infeasible(format!(
            "best normalized slack {:.6e} is not positive",
            out.slack
        )))
    }
}
