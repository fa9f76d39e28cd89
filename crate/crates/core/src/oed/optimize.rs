use std::collections::VecDeque;

use super::objective::{DesignObjective, Evaluation};
use crate::error::{check_len, Error, Result};
use crate::inversion::DesignWeights;

#[derive(Debug, Clone, Copy)]
pub struct OptimizeOptions {
    pub alpha: f64,
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when `|P(w - g) - w|_inf <= pgtol * (1 + |f|)`.
    pub pgtol: f64,
    /// Stop when the objective decrease is below `ftol * max(1, |f|)`.
    pub ftol: f64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            memory: 10,
            max_iter: 500,
            pgtol: 1e-6,
            ftol: 1e-13,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub w: DesignWeights,
    pub value: f64,
    pub data: f64,
    /// Objective after every accepted iterate, starting with `w0`.
    pub history: Vec<f64>,
    pub iterations: usize,
    pub projected_gradient: f64,
    pub converged: bool,
    /// Set when the line search could not decrease the objective; the best
    /// iterate is returned.
    pub line_search_failed: bool,
}

fn project(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

fn projected_gradient_norm(w: &[f64], g: &[f64]) -> f64 {
    w.iter()
        .zip(g)
        .map(|(wi, gi)| (project(wi - gi) - wi).abs())
        .fold(0.0, f64::max)
}

/// Coordinates held at a bound by the sign of the gradient.
fn is_fixed(w: f64, g: f64) -> bool {
    (w <= 0.0 && g > 0.0) || (w >= 1.0 && g < 0.0)
}

/// Box-constrained limited-memory BFGS on `[0, 1]^q`.
///
/// Each iteration takes a two-loop quasi-Newton direction on the free
/// coordinates and backtracks along the projected path until the Armijo
/// condition holds; a steepest-descent path is tried when that fails.
pub fn optimize_design(
    objective: &dyn DesignObjective,
    w0: &DesignWeights,
    opts: OptimizeOptions,
) -> Result<OptimizeResult> {
    let q = objective.q();
    check_len("initial design", q, w0.len())?;
    if !(opts.alpha >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be non-negative, got {}", opts.alpha)));
    }
    let mut w = w0.as_slice().to_vec();
    let mut cur: Evaluation = objective.evaluate(&w, opts.alpha)?;
    let mut history = vec![cur.value()];
    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut converged = false;
    let mut line_search_failed = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let f = cur.value();
        if projected_gradient_norm(&w, &cur.grad) <= opts.pgtol * (1.0 + f.abs()) {
            converged = true;
            break;
        }
        let free: Vec<bool> = w.iter().zip(&cur.grad).map(|(&wi, &gi)| !is_fixed(wi, gi)).collect();
        let mut d = two_loop(&cur.grad, &free, &mem);
        let slope: f64 = d.iter().zip(&cur.grad).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = steepest(&cur.grad, &free);
        }
        let step0 = if mem.is_empty() {
            1.0 / cur.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(1e-300)
        } else {
            1.0
        };
        let accepted = match line_search(objective, &w, &cur, &d, step0, opts.alpha)? {
            Some(next) => Some(next),
            None if !mem.is_empty() => {
                mem.clear();
                let d = steepest(&cur.grad, &free);
                let step = 1.0 / cur.grad.iter().fold(0.0_f64, |m, g| m.max(g.abs())).max(1e-300);
                line_search(objective, &w, &cur, &d, step, opts.alpha)?
            }
            None => None,
        };
        let Some((w_new, next)) = accepted else {
            line_search_failed = true;
            break;
        };
        iterations += 1;
        let s: Vec<f64> = w_new.iter().zip(&w).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.grad.iter().zip(&cur.grad).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > 1e-10 * (ss * yy).sqrt() && sy > 0.0 {
            if mem.len() == opts.memory {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - next.value();
        w = w_new;
        cur = next;
        history.push(cur.value());
        if decrease <= opts.ftol * f.abs().max(1.0) {
            converged = projected_gradient_norm(&w, &cur.grad) <= opts.pgtol * (1.0 + cur.value().abs());
            break;
        }
    }
    let projected_gradient = projected_gradient_norm(&w, &cur.grad);
    if !converged {
        converged = projected_gradient <= opts.pgtol * (1.0 + cur.value().abs());
    }
    Ok(OptimizeResult {
        value: cur.value(),
        data: cur.data,
        w: DesignWeights::new(w)?,
        history,
        iterations,
        projected_gradient,
        converged,
        line_search_failed,
    })
}

fn steepest(g: &[f64], free: &[bool]) -> Vec<f64> {
    g.iter().zip(free).map(|(gi, &f)| if f { -gi } else { 0.0 }).collect()
}

fn two_loop(g: &[f64], free: &[bool], mem: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> {
        v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect()
    };
    let dotm = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
    };
    let mut r = mask(g);
    let mut alphas = Vec::with_capacity(mem.len());
    for (s, y, _) in mem.iter().rev() {
        let sy = dotm(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dotm(s, &r) / sy;
        for ((ri, yi), &f) in r.iter_mut().zip(y).zip(free) {
            if f {
                *ri -= a * yi;
            }
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = mem.back() {
        let sy = dotm(s, y);
        let yy = dotm(y, y);
        if sy > 0.0 && yy > 0.0 {
            let gamma = sy / yy;
            r.iter_mut().for_each(|v| *v *= gamma);
        }
    }
    for ((s, y, _), a) in mem.iter().zip(alphas.iter().rev()) {
        let sy = dotm(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dotm(y, &r) / sy;
        for ((ri, si), &f) in r.iter_mut().zip(s).zip(free) {
            if f {
                *ri += (a - b) * si;
            }
        }
    }
    r.iter().map(|v| -v).collect()
}

/// Backtracking along `P(w + t d)` with the Armijo condition
/// `f(w_t) <= f(w) + 1e-4 g^T (w_t - w)`.
fn line_search(
    objective: &dyn DesignObjective,
    w: &[f64],
    cur: &Evaluation,
    d: &[f64],
    step0: f64,
    alpha: f64,
) -> Result<Option<(Vec<f64>, Evaluation)>> {
    let f = cur.value();
    let mut t = step0;
    for _ in 0..40 {
        let trial: Vec<f64> = w.iter().zip(d).map(|(wi, di)| project(wi + t * di)).collect();
        let decrease: f64 = cur
            .grad
            .iter()
            .zip(trial.iter().zip(w))
            .map(|(g, (a, b))| g * (a - b))
            .sum();
        if decrease < 0.0 {
            let next = objective.evaluate(&trial, alpha)?;
            if next.value() <= f + 1e-4 * decrease && next.value() < f {
                return Ok(Some((trial, next)));
            }
        }
        t *= 0.5;
    }
    Ok(None)
}

/// `w_i >= threshold -> 1`, else 0.
pub fn threshold_design(w: &DesignWeights, threshold: f64) -> Result<DesignWeights> {
    w.threshold(threshold)
}
