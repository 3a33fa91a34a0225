//! Linear minimization over the per-slot polyhedra intersected with the
//! frame energy ball.
//!
//! For a fixed ball multiplier `nu > 0` the Lagrangian separates by slot and
//! each slot's minimizer is the Euclidean projection of `-g_l / (2 nu)` onto
//! its polyhedron. The projection is computed exactly by a non-negative
//! dual active-set method on the (small) Gram matrix of that slot's rows; the
//! multiplier is then found by bracketing and bisection on the monotone map
//! `t = 1/(2 nu) -> sum_l ||x_l(t)||^2`.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{re_inner, re_trace_inner, CMat, CVec, RMat};

use super::constraints::{ConstraintSet, LinearRow};

const MAX_BISECTIONS: usize = 200;
const MAX_DOUBLINGS: usize = 400;

/// Rows of one slot in a form ready for repeated projections.
#[derive(Debug, Clone)]
pub(crate) struct SlotSystem {
    coeffs: Vec<CVec>,
    norms: Vec<f64>,
    gram: RMat,
}

/// Exact projection of a point onto a slot polyhedron.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub x: CVec,
    pub lambda: Vec<f64>,
}

impl SlotSystem {
    pub fn new(rows: &[LinearRow]) -> Self {
        let coeffs: Vec<CVec> = rows.iter().map(|r| r.coeff.clone()).collect();
        let m = coeffs.len();
        let gram = DMatrix::from_fn(m, m, |i, j| re_inner(coeffs[i].iter(), coeffs[j].iter()));
        let norms = coeffs.iter().map(|c| c.norm()).collect();
        Self { coeffs, norms, gram }
    }

    pub fn n_rows(&self) -> usize {
        self.coeffs.len()
    }

    pub fn norms(&self) -> &[f64] {
        &self.norms
    }

    /// Projects `y` onto `{x : Re(c_i^H x) <= rhs_i}`.
    pub fn project(&self, y: &CVec, rhs: &[f64]) -> Projection {
        let m = self.n_rows();
        if m == 0 {
            return Projection {
                x: y.clone(),
                lambda: Vec::new(),
            };
        }
        let d: Vec<f64> = (0..m)
            .map(|i| re_inner(self.coeffs[i].iter(), y.iter()) - rhs[i])
            .collect();
        let scale: Vec<f64> = (0..m).map(|i| 1.0 + rhs[i].abs() + self.norms[i] * y.norm()).collect();
        let lambda = nonneg_qp(&self.gram, &d, &scale);
        let mut x = y.clone();
        for (c, &l) in self.coeffs.iter().zip(&lambda) {
            if l != 0.0 {
                x -= c * Complex64::new(l, 0.0);
            }
        }
        Projection { x, lambda }
    }
}

impl SlotSystem {
    /// Whether `x` minimizes `Re(g^H x)` over the polyhedron alone, i.e.
    /// `-g` lies in the cone spanned by the rows active at `x`.
    fn is_minimizer(&self, g: &CVec, x: &CVec, rhs: &[f64]) -> bool {
        let gn = g.norm();
        if gn == 0.0 {
            return true;
        }
        let active: Vec<usize> = (0..self.n_rows())
            .filter(|&i| {
                let slack = rhs[i] - re_inner(self.coeffs[i].iter(), x.iter());
                slack.abs() <= 1e-9 * (1.0 + rhs[i].abs() + self.norms[i] * x.norm())
            })
            .collect();
        if active.is_empty() {
            return false;
        }
        let q = DMatrix::from_fn(active.len(), active.len(), |a, b| self.gram[(active[a], active[b])]);
        let d: Vec<f64> = active
            .iter()
            .map(|&i| -re_inner(self.coeffs[i].iter(), g.iter()))
            .collect();
        let scale: Vec<f64> = active.iter().map(|&i| self.norms[i] * gn).collect();
        let mu = nonneg_qp(&q, &d, &scale);
        let mut r = g.clone();
        for (&i, &m) in active.iter().zip(&mu) {
            r += &self.coeffs[i] * Complex64::new(m, 0.0);
        }
        r.norm() <= 1e-12 * gn
    }
}

/// Solves `min 0.5 l^T Q l - l^T d` over `l >= 0` by the Lawson-Hanson
/// active-set scheme. `scale[i]` sets the absolute tolerance on the
/// violation of row `i`.
fn nonneg_qp(q: &RMat, d: &[f64], scale: &[f64]) -> Vec<f64> {
    let m = d.len();
    let mut lambda = vec![0.0; m];
    let mut passive: Vec<usize> = Vec::new();
    let mut blocked = vec![false; m];
    let max_outer = 3 * m + 20;

    let solve_passive = |passive: &[usize]| -> Option<Vec<f64>> {
        let k = passive.len();
        let sub = DMatrix::from_fn(k, k, |a, b| q[(passive[a], passive[b])]);
        let rhs = DVector::from_fn(k, |a, _| d[passive[a]]);
        let chol = Cholesky::new(sub)?;
        let z = chol.solve(&rhs);
        // reject numerically dependent row sets
        let diag_min = chol.l().diagonal().iter().fold(f64::INFINITY, |a, &b| a.min(b.abs()));
        let diag_max = chol.l().diagonal().iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        if diag_min <= 1e-10 * diag_max {
            return None;
        }
        Some(z.iter().copied().collect())
    };

    for _ in 0..max_outer {
        // violation of each row at the current primal point
        let mut best: Option<(usize, f64)> = None;
        for i in 0..m {
            if passive.contains(&i) || blocked[i] {
                continue;
            }
            let qi: f64 = (0..m).map(|j| q[(i, j)] * lambda[j]).sum();
            let w = d[i] - qi;
            if w > 1e-13 * scale[i] && best.map_or(true, |(_, bw)| w / scale[i] > bw) {
                best = Some((i, w / scale[i]));
            }
        }
        let Some((t, _)) = best else { break };
        passive.push(t);

        loop {
            let Some(z) = solve_passive(&passive) else {
                passive.retain(|&i| i != t);
                blocked[t] = true;
                break;
            };
            if z.iter().all(|&v| v > 0.0) {
                for (&i, &v) in passive.iter().zip(&z) {
                    lambda[i] = v;
                }
                blocked.iter_mut().for_each(|b| *b = false);
                break;
            }
            let mut alpha = f64::INFINITY;
            for (&i, &v) in passive.iter().zip(&z) {
                if v <= 0.0 {
                    let denom = lambda[i] - v;
                    if denom > 0.0 {
                        alpha = alpha.min(lambda[i] / denom);
                    } else {
                        alpha = 0.0;
                    }
                }
            }
            let alpha = alpha.clamp(0.0, 1.0);
            for (&i, &v) in passive.iter().zip(&z) {
                lambda[i] += alpha * (v - lambda[i]);
            }
            let before = passive.len();
            passive.retain(|&i| lambda[i] > 0.0 && lambda[i] > 1e-15 * (1.0 + lambda[i].abs()));
            for i in 0..m {
                if !passive.contains(&i) {
                    lambda[i] = 0.0;
                }
            }
            if passive.len() == before {
                // alpha hit zero on a degenerate index; drop the most negative
                if let Some((pos, _)) = z
                    .iter()
                    .enumerate()
                    .filter(|(_, &v)| v <= 0.0)
                    .min_by(|a, b| a.1.total_cmp(b.1))
                {
                    let idx = passive[pos];
                    lambda[idx] = 0.0;
                    passive.remove(pos);
                }
            }
            if passive.is_empty() {
                break;
            }
        }
    }
    lambda
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubproblemStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct SubproblemSolution {
    pub x: CMat,
    /// `Re tr(G^H X)`.
    pub objective: f64,
    /// Largest constraint violation (absolute).
    pub primal_residual: f64,
    /// Duality gap relative to `1 + |objective|`.
    pub dual_gap: f64,
    /// Largest relative KKT residual (stationarity, complementarity, feasibility).
    pub kkt_residual: f64,
    /// Multiplier of the energy-ball constraint.
    pub ball_multiplier: f64,
    pub status: SubproblemStatus,
}

struct Evaluation {
    xs: Vec<CVec>,
    lambdas: Vec<Vec<f64>>,
    energy: f64,
}

/// Per-slot rows, with right-hand sides optionally tightened by
/// `delta * ||c_i||` (phase 1).
pub(crate) struct SlotSystems {
    pub systems: Vec<SlotSystem>,
    pub rhs: Vec<Vec<f64>>,
}

impl SlotSystems {
    pub fn new(set: &ConstraintSet) -> Self {
        let systems: Vec<SlotSystem> = set.slots.iter().map(|rows| SlotSystem::new(rows)).collect();
        let rhs = set
            .slots
            .iter()
            .map(|rows| rows.iter().map(|r| r.rhs).collect())
            .collect();
        Self { systems, rhs }
    }

    pub fn tightened_rhs(&self, set: &ConstraintSet, delta: f64) -> Vec<Vec<f64>> {
        set.slots
            .iter()
            .zip(&self.systems)
            .map(|(rows, sys)| rows.iter().zip(sys.norms()).map(|(r, n)| r.rhs - delta * n).collect())
            .collect()
    }

    pub fn project_all(&self, targets: &[CVec], rhs: &[Vec<f64>]) -> (Vec<CVec>, Vec<Vec<f64>>, f64) {
        let mut xs = Vec::with_capacity(targets.len());
        let mut lambdas = Vec::with_capacity(targets.len());
        let mut energy = 0.0;
        for ((sys, y), b) in self.systems.iter().zip(targets).zip(rhs) {
            let p = sys.project(y, b);
            energy += p.x.norm_squared();
            xs.push(p.x);
            lambdas.push(p.lambda);
        }
        (xs, lambdas, energy)
    }
}

fn columns(m: &CMat) -> Vec<CVec> {
    (0..m.ncols()).map(|l| m.column(l).into_owned()).collect()
}

fn assemble(xs: &[CVec], n_tx: usize) -> CMat {
    CMat::from_fn(n_tx, xs.len(), |i, l| xs[l][i])
}

/// Minimizes `Re tr(G^H X)` over the constraint set.
pub fn solve_subproblem(g: &CMat, set: &ConstraintSet) -> Result<SubproblemSolution> {
    let sys = SlotSystems::new(set);
    let g_cols = columns(g);
    let budget = set.energy_budget;

    let eval = |t: f64| -> Evaluation {
        let targets: Vec<CVec> = g_cols.iter().map(|c| c * Complex64::new(-t, 0.0)).collect();
        let (xs, lambdas, energy) = sys.project_all(&targets, &sys.rhs);
        Evaluation { xs, lambdas, energy }
    };

    let at_zero = eval(0.0);
    if at_zero.energy > budget * (1.0 + 1e-12) + 1e-300 {
        let x = assemble(&at_zero.xs, set.n_tx);
        return Ok(SubproblemSolution {
            objective: re_trace_inner(g, &x),
            primal_residual: at_zero.energy - budget,
            dual_gap: f64::INFINITY,
            kkt_residual: f64::INFINITY,
            ball_multiplier: 0.0,
            status: SubproblemStatus::Infeasible,
            x,
        });
    }

    let gnorm = g.norm();
    if gnorm == 0.0 || budget == 0.0 {
        let x = assemble(&at_zero.xs, set.n_tx);
        let primal_residual = set.max_violation(&x);
        return Ok(SubproblemSolution {
            objective: re_trace_inner(g, &x),
            primal_residual,
            dual_gap: 0.0,
            kkt_residual: primal_residual / set.rhs_scale(),
            ball_multiplier: 0.0,
            status: SubproblemStatus::Optimal,
            x,
        });
    }

    // bracket the step t where the energy reaches the budget
    let mut lo = (0.0, at_zero);
    let mut t_hi = budget.sqrt() / gnorm;
    let mut hi = eval(t_hi);
    let mut bounded = true;
    for _ in 0..MAX_DOUBLINGS {
        if hi.energy >= budget {
            break;
        }
        // once the projection stops moving it is the LP minimizer
        let moved = hi
            .xs
            .iter()
            .zip(&lo.1.xs)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        let settled = lo.0 > 0.0
            && moved <= 1e-12 * (1.0 + hi.energy.sqrt())
            && sys
                .systems
                .iter()
                .enumerate()
                .all(|(l, s)| s.is_minimizer(&g_cols[l], &hi.xs[l], &sys.rhs[l]));
        lo = (t_hi, hi);
        if settled {
            t_hi = lo.0;
            hi = eval(t_hi);
            break;
        }
        t_hi *= 2.0;
        hi = eval(t_hi);
        if !t_hi.is_finite() {
            break;
        }
    }
    if hi.energy < budget {
        // the linear program attains its minimum strictly inside the ball
        bounded = false;
        lo = (t_hi, hi);
    } else {
        let mut t_lo = lo.0;
        for _ in 0..MAX_BISECTIONS {
            if t_hi - t_lo <= 1e-15 * t_hi {
                break;
            }
            let mid = 0.5 * (t_lo + t_hi);
            if mid <= t_lo || mid >= t_hi {
                break;
            }
            let e = eval(mid);
            if e.energy <= budget {
                t_lo = mid;
                lo = (mid, e);
            } else {
                t_hi = mid;
            }
        }
    }

    let (t, ev) = lo;
    let x = assemble(&ev.xs, set.n_tx);
    let objective = re_trace_inner(g, &x);
    let nu = if bounded && t > 0.0 { 1.0 / (2.0 * t) } else { 0.0 };

    // KKT bookkeeping; row multipliers are lambda / t
    let mut stationarity = CMat::zeros(set.n_tx, set.n_slots);
    let mut compl: f64 = 0.0;
    let mut row_gap = 0.0;
    for (l, rows) in set.slots.iter().enumerate() {
        let mut s: CVec = g.column(l).into_owned() + &ev.xs[l] * Complex64::new(2.0 * nu, 0.0);
        for (row, &lam) in rows.iter().zip(&ev.lambdas[l]) {
            if lam == 0.0 || t == 0.0 {
                continue;
            }
            let mu = lam / t;
            s += &row.coeff * Complex64::new(mu, 0.0);
            let slack = row.slack(&ev.xs[l]);
            compl = compl.max((mu * slack).abs());
            row_gap += mu * slack;
        }
        stationarity.set_column(l, &s);
    }
    let ball_gap = nu * (budget - ev.energy).max(0.0);
    let obj_scale = 1.0 + objective.abs();
    let stat_rel = if bounded { stationarity.norm() / gnorm } else { 0.0 };
    let primal_residual = set.max_violation(&x);
    let dual_gap = (ball_gap + row_gap.abs()) / obj_scale;
    let kkt_residual = stat_rel
        .max(primal_residual / set.rhs_scale())
        .max(compl / obj_scale)
        .max(ball_gap / obj_scale);

    Ok(SubproblemSolution {
        x,
        objective,
        primal_residual,
        dual_gap,
        kkt_residual,
        ball_multiplier: nu,
        status: SubproblemStatus::Optimal,
    })
}
