//! Box-constrained descent with backtracking line search.
//!
//! Search directions come from a limited-memory BFGS two-loop recursion on
//! the free variables, falling back to steepest descent whenever the
//! quasi-Newton direction fails the Armijo test. Iterates are clamped to the
//! box after every trial step.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    GradientTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub(crate) struct BoxOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub grad_tol: f64,
    pub max_iter: usize,
    pub memory: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub projected_grad_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
    /// Indices of coordinates sitting on a bound at the solution.
    pub active_bounds: Vec<usize>,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi > 0.0) || (xi >= h && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub(crate) fn minimize<F>(mut objective: F, x0: Vec<f64>, opts: &BoxOptions) -> Result<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let clamp = |x: &mut [f64]| {
        for ((xi, &l), &h) in x.iter_mut().zip(&opts.lower).zip(&opts.upper) {
            *xi = xi.clamp(l, h);
        }
    };
    let mut x = x0;
    clamp(&mut x);
    let (mut f, mut g) = objective(&x);
    if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            iteration: 0,
            detail: format!("objective {f} at the initial point"),
        });
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut stop = StopReason::MaxIterations;

    while iterations < opts.max_iter {
        let pg = projected_gradient(&x, &g, &opts.lower, &opts.upper);
        if inf_norm(&pg) <= opts.grad_tol {
            stop = StopReason::GradientTolerance;
            break;
        }
        iterations += 1;

        let mut accepted = None;
        for use_memory in [true, false] {
            let dir = if use_memory && !s_hist.is_empty() {
                let d = two_loop(&pg, &s_hist, &y_hist);
                let d: Vec<f64> = d
                    .iter()
                    .zip(&pg)
                    .map(|(&di, &p)| if p == 0.0 { 0.0 } else { di })
                    .collect();
                if dot(&d, &pg) < 0.0 {
                    d
                } else {
                    pg.iter().map(|v| -v).collect()
                }
            } else {
                pg.iter().map(|v| -v).collect::<Vec<_>>()
            };
            let mut step = if s_hist.is_empty() {
                (1.0 / inf_norm(&dir)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
                clamp(&mut trial);
                let moved: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                let decrease = dot(&g, &moved);
                if decrease < 0.0 {
                    let (ft, gt) = objective(&trial);
                    if ft.is_finite() && gt.iter().all(|v| v.is_finite()) && ft <= f + ARMIJO * decrease {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                }
                step *= 0.5;
            }
            if accepted.is_some() || s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &y) > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
            s_hist.push(s);
            y_hist.push(y);
        }
        x = x_new;
        f = f_new;
        g = g_new;
    }

    let pg = projected_gradient(&x, &g, &opts.lower, &opts.upper);
    if stop == StopReason::MaxIterations && inf_norm(&pg) <= opts.grad_tol {
        stop = StopReason::GradientTolerance;
    }
    let active_bounds = x
        .iter()
        .enumerate()
        .filter(|(i, &xi)| xi <= opts.lower[*i] || xi >= opts.upper[*i])
        .map(|(i, _)| i)
        .collect();
    Ok(Minimum {
        projected_grad_norm: inf_norm(&pg),
        x,
        value: f,
        iterations,
        stop,
        active_bounds,
    })
}

fn two_loop(grad: &[f64], s_hist: &[Vec<f64>], y_hist: &[Vec<f64>]) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alphas = vec![0.0; s_hist.len()];
    for i in (0..s_hist.len()).rev() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        alphas[i] = rho * dot(&s_hist[i], &q);
        for (qj, yj) in q.iter_mut().zip(&y_hist[i]) {
            *qj -= alphas[i] * yj;
        }
    }
    let last = s_hist.len() - 1;
    let gamma = dot(&s_hist[last], &y_hist[last]) / dot(&y_hist[last], &y_hist[last]);
    q.iter_mut().for_each(|v| *v *= gamma);
    for i in 0..s_hist.len() {
        let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
        let beta = rho * dot(&y_hist[i], &q);
        for (qj, sj) in q.iter_mut().zip(&s_hist[i]) {
            *qj += (alphas[i] - beta) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
