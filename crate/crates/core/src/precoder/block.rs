//! Block-level benchmark: a linear precoder `W` (one column per user) with
//! conventional SINR constraints, `R = W W^H`, transmitted as `X = W S`.
//!
//! The SINR constraints are written in the phase-rotated second-order cone
//! form and the destructive-zone rows stay linear in `W` once the symbols
//! are fixed, so every linearized subproblem is an SOCP solved with Clarabel.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::array_model::{CommChannelSet, SystemConfig};
use crate::bfim::BcrbObjective;
use crate::error::{IsacError, Result};
use crate::linalg::{db_to_linear, CMat, CVec};

use super::constraints::{DiZone, LinearRow, RowOrigin, SymbolFrame};
use super::sca::{sca_loop, DesignProblem, ScaOptions, ScaTrace};

/// Relative margin added to every SINR threshold so that interior-point
/// tolerances never leave a constraint marginally violated.
const SINR_MARGIN: f64 = 1e-7;

#[derive(Debug, Clone)]
pub struct BlockDesign {
    /// `n_tx x K` precoder.
    pub w: CMat,
    /// `W S` for the supplied symbol frame.
    pub x: CMat,
    /// BCRB of the designed covariance `W W^H`.
    pub bcrb: f64,
    /// Destructive zone of the winning case.
    pub zone: DiZone,
    pub trace: ScaTrace,
    /// Traces of every feasible case, winner included, in zone order.
    pub case_traces: Vec<(DiZone, ScaTrace)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BlockReport {
    pub bcrb: f64,
    pub sinr: Vec<f64>,
    pub trace: ScaTrace,
}

/// `SINR_k = |h_k^H w_k|^2 / (sum_{i != k} |h_k^H w_i|^2 + sigma_k^2)`.
pub fn block_sinr(w: &CMat, channels: &CommChannelSet, cfg: &SystemConfig) -> Vec<f64> {
    (0..channels.n_users())
        .map(|k| {
            let hk = &channels.h[k];
            let mut signal = 0.0;
            let mut interference = 0.0;
            for i in 0..w.ncols() {
                let p = hk.dotc(&w.column(i)).norm_sqr();
                if i == k {
                    signal = p;
                } else {
                    interference += p;
                }
            }
            signal / (interference + cfg.noise_cu(k))
        })
        .collect()
}

#[derive(Clone, Copy)]
enum Part {
    Real,
    Imag,
}

#[derive(Default)]
struct Triplets {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Triplets {
    fn push(&mut self, r: usize, c: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(r);
            self.cols.push(c);
            self.vals.push(v);
        }
    }

    /// Row `-scale * Re(c^H w_col)` (or `Im`), the sign matching `s = b - A z`.
    fn put(&mut self, row: usize, c: &CVec, col: usize, n_tx: usize, part: Part, scale: f64) {
        for i in 0..n_tx {
            let v = 2 * (col * n_tx + i);
            let (re, im) = match part {
                Part::Real => (c[i].re, c[i].im),
                Part::Imag => (-c[i].im, c[i].re),
            };
            self.push(row, v, -scale * re);
            self.push(row, v + 1, -scale * im);
        }
    }
}

/// The fixed cone constraints of the block-level problem.
struct SinrCones {
    a: CscMatrix<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    n_tx: usize,
    n_users: usize,
}

impl SinrCones {
    fn var(&self, i: usize, k: usize) -> usize {
        2 * (k * self.n_tx + i)
    }

    fn n_vars(&self) -> usize {
        2 * self.n_tx * self.n_users
    }

    fn build(
        cfg: &SystemConfig,
        channels: &CommChannelSet,
        gammas_db: &[f64],
        power: f64,
        destructive: &[&LinearRow],
        symbols: &SymbolFrame,
    ) -> Result<Self> {
        let n_tx = cfg.n_tx;
        let k_users = channels.n_users();
        if gammas_db.len() != k_users {
            return Err(IsacError::Dimension(format!(
                "{} SINR targets for {k_users} users",
                gammas_db.len()
            )));
        }
        if k_users > n_tx {
            return Err(IsacError::Config(format!(
                "block-level design needs n_users <= n_tx, got {k_users} > {n_tx}"
            )));
        }
        let mut me = Self {
            a: CscMatrix::zeros((0, 0)),
            b: Vec::new(),
            cones: Vec::new(),
            n_tx,
            n_users: k_users,
        };
        let mut t = Triplets::default();
        let mut row = 0usize;
        for k in 0..k_users {
            t.put(row, &channels.h[k], k, n_tx, Part::Imag, 1.0);
            me.b.push(0.0);
            row += 1;
        }
        me.cones.push(SupportedConeT::ZeroConeT(k_users));
        for k in 0..k_users {
            let gamma = db_to_linear(gammas_db[k]) * (1.0 + SINR_MARGIN);
            let hk = &channels.h[k];
            t.put(row, hk, k, n_tx, Part::Real, 1.0 / gamma.sqrt());
            me.b.push(0.0);
            row += 1;
            for i in (0..k_users).filter(|&i| i != k) {
                for part in [Part::Real, Part::Imag] {
                    t.put(row, hk, i, n_tx, part, 1.0);
                    me.b.push(0.0);
                    row += 1;
                }
            }
            me.b.push(cfg.noise_cu(k).sqrt());
            row += 1;
            me.cones.push(SupportedConeT::SecondOrderConeT(2 * k_users));
        }
        me.b.push(power.sqrt());
        row += 1;
        for v in 0..me.n_vars() {
            t.push(row, v, -1.0);
            me.b.push(0.0);
            row += 1;
        }
        me.cones.push(SupportedConeT::SecondOrderConeT(1 + me.n_vars()));
        // Re(c^H W s_l) = sum_k Re((c conj(s_kl))^H w_k)
        for r in destructive {
            for k in 0..k_users {
                let c = &r.coeff * symbols.symbol(k, r.slot).conj();
                t.put(row, &c, k, n_tx, Part::Real, -1.0);
            }
            me.b.push(r.rhs);
            row += 1;
        }
        if !destructive.is_empty() {
            me.cones.push(SupportedConeT::NonnegativeConeT(destructive.len()));
        }
        me.a = CscMatrix::new_from_triplets(row, me.n_vars(), t.rows, t.cols, t.vals);
        Ok(me)
    }

    fn solve(&self, p: &CscMatrix<f64>, q: &[f64]) -> Result<CMat> {
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .build()
            .map_err(|e| IsacError::Numerical(format!("solver settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(p, q, &self.a, &self.b, &self.cones, settings)
            .map_err(|e| IsacError::Numerical(format!("SOCP setup failed: {e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => {}
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                return Err(IsacError::Infeasible(
                    "SINR and destructive-zone targets are not achievable within the power budget".into(),
                ));
            }
            s => return Err(IsacError::Numerical(format!("SOCP solver stopped with status {s:?}"))),
        }
        let z = &solver.solution.x;
        Ok(CMat::from_fn(self.n_tx, self.n_users, |i, k| {
            let v = self.var(i, k);
            Complex64::new(z[v], z[v + 1])
        }))
    }

    fn min_power(&self) -> Result<CMat> {
        let n = self.n_vars();
        let mut p = CscMatrix::identity(n);
        p.nzval.iter_mut().for_each(|v| *v = 2.0);
        self.solve(&p, &vec![0.0; n])
    }

    fn linear(&self, g: &CMat) -> Result<CMat> {
        let n = self.n_vars();
        let mut q = vec![0.0; n];
        for k in 0..self.n_users {
            for i in 0..self.n_tx {
                let v = self.var(i, k);
                q[v] = g[(i, k)].re;
                q[v + 1] = g[(i, k)].im;
            }
        }
        self.solve(&CscMatrix::zeros((n, n)), &q)
    }
}

fn design_zone(
    problem: &DesignProblem<'_>,
    objective: &BcrbObjective,
    zone: DiZone,
    opts: &ScaOptions,
) -> Result<BlockDesign> {
    let set = problem.constraints(zone)?;
    let destructive: Vec<&LinearRow> = set
        .rows()
        .filter(|r| matches!(r.origin, RowOrigin::Destructive { .. }))
        .collect();
    let cfg = problem.cfg;
    let cones = SinrCones::build(
        cfg,
        problem.channels,
        problem.gammas_db,
        cfg.power_budget(),
        &destructive,
        problem.symbols,
    )?;
    let w0 = cones.min_power()?;
    let (w, trace) = sca_loop(
        w0,
        |w| objective.value_cov(&(w * w.adjoint())),
        |w| objective.gradient_precoder(w),
        |g| Ok((cones.linear(g)?, 0.0)),
        opts,
    )?;
    let bcrb = *trace.objective_trace.last().expect("trace holds the start value");
    let x = &w * problem.symbols.matrix();
    Ok(BlockDesign {
        w,
        x,
        bcrb,
        zone,
        trace,
        case_traces: Vec::new(),
    })
}

/// Minimizes the BCRB of `R = W W^H` subject to per-user SINR targets,
/// `||W||_F^2 <= P_T` and, for each of the three destructive zones in turn,
/// the zone constraints on `X = W S`. Each case starts from its
/// minimum-power solution; the case with the smallest final bound wins.
pub fn block_level_design(
    problem: &DesignProblem<'_>,
    objective: &BcrbObjective,
    opts: &ScaOptions,
) -> Result<BlockDesign> {
    if problem.symbols.n_users() != problem.channels.n_users() {
        return Err(IsacError::Dimension(
            "symbol frame and channel set disagree on users".into(),
        ));
    }
    let cases: Vec<Result<BlockDesign>> = DiZone::ALL
        .par_iter()
        .map(|&zone| design_zone(problem, objective, zone, opts))
        .collect();
    let mut best: Option<BlockDesign> = None;
    let mut failure: Option<IsacError> = None;
    let mut traces = Vec::new();
    for case in cases {
        match case {
            Ok(d) => {
                traces.push((d.zone, d.trace.clone()));
                if best.as_ref().is_none_or(|b| d.bcrb < b.bcrb) {
                    best = Some(d);
                }
            }
            Err(e @ IsacError::Infeasible(_)) => {
                failure.get_or_insert(e);
            }
            Err(e) => failure = Some(e),
        }
    }
    let mut best = best.ok_or_else(|| failure.expect("three cases were attempted"))?;
    best.case_traces = traces;
    Ok(best)
}
