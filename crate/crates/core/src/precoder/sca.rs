//! Successive convex approximation of the BCRB design: linearize the
//! objective at the current frame, minimize the linearization over the
//! convex feasible set of one destructive zone, and move toward the
//! minimizer with a line search. The three zones are solved independently
//! and the best final bound wins.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array_model::{CommChannelSet, SystemConfig};
use crate::bfim::BcrbObjective;
use crate::error::{IsacError, Result};
use crate::linalg::{re_trace_inner, CMat};
use crate::priors::TargetPriorSet;

use super::constraints::{ConstraintSet, DiZone, SymbolFrame};
use super::line_search::{line_search, ArmijoParams, LineSearchKind};
use super::phase1::max_min_slack;
use super::subproblem::{solve_subproblem, SubproblemStatus};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScaOptions {
    /// Stop once the linearized decrease `g(X*)` exceeds `-epsilon * f(X)`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub line_search: LineSearchKind,
    #[serde(default)]
    pub armijo: ArmijoParams,
}

fn default_epsilon() -> f64 {
    1e-5
}

fn default_max_iter() -> usize {
    50
}

impl Default for ScaOptions {
    fn default() -> Self {
        Self {
            epsilon: default_epsilon(),
            max_iter: default_max_iter(),
            line_search: LineSearchKind::default(),
            armijo: ArmijoParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The linearized decrease fell below the tolerance.
    Stationary,
    MaxIterations,
    Infeasible,
    /// Backtracking could not find an acceptable step.
    LineSearchStalled,
}

/// Iteration history of one SCA run.
#[derive(Debug, Clone, Serialize)]
pub struct ScaTrace {
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    /// Last linearized decrease `Re tr(G^H (X* - X))`.
    pub last_gap: f64,
    /// Worst relative KKT residual reported by the subproblem solver.
    pub worst_kkt: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CaseReport {
    pub case: u8,
    pub zone: DiZone,
    /// Optimal normalized slack of the phase-1 problem.
    pub phase1_slack: f64,
    pub initial_bcrb: Option<f64>,
    pub final_bcrb: Option<f64>,
    pub warm_started: bool,
    pub trace: Option<ScaTrace>,
    pub termination: Termination,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub case: u8,
    pub zone: DiZone,
    pub bcrb: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
    pub cases: Vec<CaseReport>,
}

/// Everything fixed during one design: geometry, channels, data and QoS.
#[derive(Debug, Clone, Copy)]
pub struct DesignProblem<'a> {
    pub cfg: &'a SystemConfig,
    pub channels: &'a CommChannelSet,
    pub symbols: &'a SymbolFrame,
    pub priors: &'a TargetPriorSet,
    pub gammas_db: &'a [f64],
    pub taus_db: &'a [f64],
}

impl DesignProblem<'_> {
    pub fn constraints(&self, zone: DiZone) -> Result<ConstraintSet> {
        ConstraintSet::for_design(
            self.cfg,
            self.channels,
            self.symbols,
            self.priors,
            self.gammas_db,
            self.taus_db,
            zone,
        )
    }
}

/// Generic SCA loop: `solve` returns the minimizer of the linearization for
/// a given gradient over a fixed convex set containing `x0`.
pub fn sca_loop<V, G, S>(x0: CMat, value: V, gradient: G, mut solve: S, opts: &ScaOptions) -> Result<(CMat, ScaTrace)>
where
    V: Fn(&CMat) -> Result<f64>,
    G: Fn(&CMat) -> Result<CMat>,
    S: FnMut(&CMat) -> Result<(CMat, f64)>,
{
    let mut x = x0;
    let mut f = value(&x)?;
    let mut trace = vec![f];
    let mut termination = Termination::MaxIterations;
    let mut last_gap = f64::NAN;
    let mut worst_kkt: f64 = 0.0;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let g = gradient(&x)?;
        let (x_star, kkt) = solve(&g)?;
        worst_kkt = worst_kkt.max(kkt);
        let gap = re_trace_inner(&g, &(&x_star - &x));
        last_gap = gap;
        if gap > -opts.epsilon * f.abs() {
            termination = Termination::Stationary;
            break;
        }
        iterations += 1;
        match line_search(&value, &x, &x_star, &g, f, opts.line_search, &opts.armijo)? {
            Some(step) => {
                x = &x + (&x_star - &x) * Complex64::new(step.step, 0.0);
                f = step.value;
                trace.push(f);
            }
            None => {
                termination = Termination::LineSearchStalled;
                break;
            }
        }
    }
    Ok((
        x,
        ScaTrace {
            objective_trace: trace,
            iterations,
            termination,
            last_gap,
            worst_kkt,
        },
    ))
}

/// Runs SCA on one zone from phase 1, or from `warm` when it is feasible
/// and no worse.
pub fn run_case(
    set: &ConstraintSet,
    objective: &BcrbObjective,
    opts: &ScaOptions,
    warm: Option<&CMat>,
) -> Result<(Option<CMat>, CaseReport)> {
    let zone = set.zone.unwrap_or(DiZone::Inner);
    let p1 = max_min_slack(set);
    let warm = warm.filter(|w| set.is_feasible(w, 1e-9));
    let start = match (p1.feasible, warm) {
        (true, Some(w)) => {
            if objective.value(w)? <= objective.value(&p1.x)? {
                Some((w.clone(), true))
            } else {
                Some((p1.x.clone(), false))
            }
        }
        (true, None) => Some((p1.x.clone(), false)),
        (false, Some(w)) => Some((w.clone(), true)),
        (false, None) => None,
    };
    let Some((x0, warm_started)) = start else {
        return Ok((
            None,
            CaseReport {
                case: zone.id(),
                zone,
                phase1_slack: p1.slack,
                initial_bcrb: None,
                final_bcrb: None,
                warm_started: false,
                trace: None,
                termination: Termination::Infeasible,
            },
        ));
    };
    let initial = objective.value(&x0)?;
    let (x, trace) = sca_loop(
        x0,
        |x| objective.value(x),
        |x| objective.gradient(x),
        |g| {
            let sol = solve_subproblem(g, set)?;
            if sol.status == SubproblemStatus::Infeasible {
                return Err(IsacError::Infeasible("subproblem lost feasibility".into()));
            }
            Ok((sol.x, sol.kkt_residual))
        },
        opts,
    )?;
    let final_bcrb = *trace.objective_trace.last().unwrap_or(&initial);
    Ok((
        Some(x),
        CaseReport {
            case: zone.id(),
            zone,
            phase1_slack: p1.slack,
            initial_bcrb: Some(initial),
            final_bcrb: Some(final_bcrb),
            warm_started,
            termination: trace.termination,
            trace: Some(trace),
        },
    ))
}

/// Per-zone designs, indexed like [`DiZone::ALL`].
#[derive(Debug, Clone)]
pub struct ZoneDesigns {
    pub frames: [Option<CMat>; 3],
    pub report: SolveReport,
}

impl ZoneDesigns {
    pub fn best(&self) -> &CMat {
        let idx = DiZone::ALL.iter().position(|&z| z == self.report.zone).unwrap_or(0);
        self.frames[idx].as_ref().expect("winning zone has a frame")
    }
}

/// Designs all three zones, optionally warm-started per zone, and selects
/// the minimum final BCRB.
pub fn sca_design_zones(
    problem: &DesignProblem<'_>,
    objective: &BcrbObjective,
    opts: &ScaOptions,
    warm: &[Option<CMat>; 3],
) -> Result<ZoneDesigns> {
    let results: Vec<Result<(Option<CMat>, CaseReport)>> = DiZone::ALL
        .par_iter()
        .zip(warm.par_iter())
        .map(|(&zone, w)| {
            let set = problem.constraints(zone)?;
            run_case(&set, objective, opts, w.as_ref())
        })
        .collect();
    let mut frames: [Option<CMat>; 3] = [None, None, None];
    let mut cases = Vec::with_capacity(3);
    for (i, r) in results.into_iter().enumerate() {
        let (x, rep) = r?;
        frames[i] = x;
        cases.push(rep);
    }
    let winner = cases
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.final_bcrb.map(|b| (i, b)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((wi, bcrb)) = winner else {
        let slacks: Vec<String> = cases
            .iter()
            .map(|c| format!("case {}: {:.3e}", c.case, c.phase1_slack))
            .collect();
        return Err(IsacError::Infeasible(format!(
            "all three destructive-region cases are infeasible ({})",
            slacks.join(", ")
        )));
    };
    let trace = cases[wi].trace.clone().expect("feasible case has a trace");
    let report = SolveReport {
        case: cases[wi].case,
        zone: cases[wi].zone,
        bcrb,
        objective_trace: trace.objective_trace,
        iterations: trace.iterations,
        termination: trace.termination,
        cases,
    };
    Ok(ZoneDesigns { frames, report })
}

/// Full design from phase-1 starts.
pub fn sca_design(
    problem: &DesignProblem<'_>,
    objective: &BcrbObjective,
    opts: &ScaOptions,
) -> Result<(CMat, SolveReport)> {
    let d = sca_design_zones(problem, objective, opts, &[None, None, None])?;
    Ok((d.best().clone(), d.report))
}
