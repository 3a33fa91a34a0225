//! Step-size rules along a feasible descent direction `X* - X`.

use serde::{Deserialize, Serialize};

use crate::error::{IsacError, Result};
use crate::linalg::{re_trace_inner, CMat};
use num_complex::Complex64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmijoParams {
    pub c1: f64,
    pub shrink: f64,
    pub initial: f64,
    pub min_step: f64,
}

impl Default for ArmijoParams {
    fn default() -> Self {
        Self {
            c1: 1e-4,
            shrink: 0.5,
            initial: 1.0,
            min_step: 1e-12,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LineSearchKind {
    #[default]
    Armijo,
    /// Golden-section minimization on `[0, 1]`, falling back to Armijo when
    /// the result does not meet the sufficient-decrease condition.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub step: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Backtracking on `phi(step) = f(X + step * D)` with directional slope
/// `slope < 0`. Returns `Ok(None)` when the step underflows `min_step`.
pub fn armijo<F>(mut phi: F, f0: f64, slope: f64, params: &ArmijoParams) -> Result<Option<StepOutcome>>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !(slope < 0.0) {
        return Err(IsacError::NonDescent(slope));
    }
    let mut step = params.initial;
    let mut evaluations = 0;
    while step >= params.min_step {
        let v = phi(step)?;
        evaluations += 1;
        if v <= f0 + params.c1 * step * slope {
            return Ok(Some(StepOutcome {
                step,
                value: v,
                evaluations,
            }));
        }
        step *= params.shrink;
    }
    Ok(None)
}

fn golden_section<F>(phi: &mut F, iters: usize) -> Result<(f64, f64, usize)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (0.0, 1.0);
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let mut fc = phi(c)?;
    let mut fd = phi(d)?;
    let mut evals = 2;
    for _ in 0..iters {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = phi(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = phi(d)?;
        }
        evals += 1;
    }
    let f1 = phi(1.0)?;
    evals += 1;
    let (s, v) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(if f1 <= v { (1.0, f1, evals) } else { (s, v, evals) })
}

/// Step along `X* - X_prev` for the objective `f` with gradient `grad` at `X_prev`.
pub fn line_search<F>(
    f: F,
    x_prev: &CMat,
    x_star: &CMat,
    grad: &CMat,
    f_prev: f64,
    kind: LineSearchKind,
    params: &ArmijoParams,
) -> Result<Option<StepOutcome>>
where
    F: Fn(&CMat) -> Result<f64>,
{
    let dir = x_star - x_prev;
    let slope = re_trace_inner(grad, &dir);
    if !(slope < 0.0) {
        return Err(IsacError::NonDescent(slope));
    }
    let mut phi = |s: f64| f(&(x_prev + &dir * Complex64::new(s, 0.0)));
    if kind == LineSearchKind::Exact {
        let (s, v, evals) = golden_section(&mut phi, 40)?;
        if v <= f_prev + params.c1 * s * slope {
            return Ok(Some(StepOutcome {
                step: s,
                value: v,
                evaluations: evals,
            }));
        }
    }
    armijo(phi, f_prev, slope, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_step_satisfies_armijo() {
        // f(s) = (s - 0.3)^2 along the direction, slope at 0 is -0.6
        let f0 = 0.09;
        let out = armijo(|s| Ok((s - 0.3f64).powi(2)), f0, -0.6, &ArmijoParams::default())
            .unwrap()
            .unwrap();
        assert!(out.value <= f0 + 1e-4 * out.step * -0.6);
        assert!(out.step <= 0.5);
    }

    #[test]
    fn monotone_decrease_takes_full_step() {
        let out = armijo(|s| Ok(1.0 - s), 1.0, -1.0, &ArmijoParams::default())
            .unwrap()
            .unwrap();
        assert_eq!(out.step, 1.0);
        assert_eq!(out.evaluations, 1);
    }

    #[test]
    fn ascent_direction_is_an_error() {
        let r = armijo(|s| Ok(s), 0.0, 1.0, &ArmijoParams::default());
        assert!(matches!(r, Err(IsacError::NonDescent(_))));
    }

    #[test]
    fn exact_search_finds_interior_minimum() {
        let x0 = CMat::from_element(1, 1, Complex64::new(0.0, 0.0));
        let xs = CMat::from_element(1, 1, Complex64::new(1.0, 0.0));
        let grad = CMat::from_element(1, 1, Complex64::new(-0.8, 0.0));
        let f = |x: &CMat| Ok((x[(0, 0)].re - 0.4).powi(2));
        let out = line_search(
            f,
            &x0,
            &xs,
            &grad,
            0.16,
            LineSearchKind::Exact,
            &ArmijoParams::default(),
        )
        .unwrap()
        .unwrap();
        assert!((out.step - 0.4).abs() < 1e-6);
    }
}
