//! Small dense optimizers: L-BFGS with Armijo backtracking, projected gradient
//! on a box, and bisection on monotone slopes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimOptions {
    /// Stop once ‖∇‖_∞ falls below this.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// L-BFGS memory.
    pub history: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions {
            grad_tol: 1e-8,
            max_iters: 50_000,
            history: 10,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

const C1: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;
/// Consecutive rounding-level steps tolerated before giving up.
const MAX_FLAT_RUN: usize = 50;
/// Iterations without a 10% gradient-norm improvement before giving up.
const MAX_STALL: usize = 500;

/// Minimizes `f`, which writes its gradient into the second argument.
///
/// Errors raised at trial points of the line search shrink the step; errors at
/// accepted iterates are returned tagged with the iteration index.
pub fn lbfgs<F>(mut f: F, x0: Vec<f64>, opts: &OptimOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g).map_err(|e| e.at_iteration(0))?;
    if !fx.is_finite() {
        return Err(Error::Numeric("objective is not finite at the initial point".into()));
    }
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut trace = vec![fx];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut iterations = 0;
    let mut flat_run = 0;
    let (mut best_norm, mut best_at) = (inf_norm(&g), 0);

    while iterations < opts.max_iters && flat_run < MAX_FLAT_RUN && iterations - best_at < MAX_STALL {
        if inf_norm(&g) <= opts.grad_tol {
            break;
        }
        // two-loop recursion
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let m = s_hist.len();
        let mut alpha = vec![0.0; m];
        for i in (0..m).rev() {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            alpha[i] = rho * dot(&s_hist[i], &d);
            for (dj, yj) in d.iter_mut().zip(&y_hist[i]) {
                *dj -= alpha[i] * yj;
            }
        }
        if m > 0 {
            let gamma = dot(&s_hist[m - 1], &y_hist[m - 1]) / dot(&y_hist[m - 1], &y_hist[m - 1]);
            d.iter_mut().for_each(|v| *v *= gamma);
        }
        for i in 0..m {
            let rho = 1.0 / dot(&y_hist[i], &s_hist[i]);
            let beta = rho * dot(&y_hist[i], &d);
            for (dj, sj) in d.iter_mut().zip(&s_hist[i]) {
                *dj += (alpha[i] - beta) * sj;
            }
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            s_hist.clear();
            y_hist.clear();
        }
        let mut t = if s_hist.is_empty() {
            (1.0 / inf_norm(&g)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for i in 0..n {
                x_new[i] = x[i] + t * d[i];
            }
            if let Ok(v) = f(&x_new, &mut g_new) {
                // near the optimum f stops resolving the decrease; fall back on
                // gradient progress when the change is at rounding level
                let noise = 8.0 * f64::EPSILON * (1.0 + fx.abs());
                let armijo = v <= fx + C1 * t * slope;
                let flat = v <= fx + noise && inf_norm(&g_new) < inf_norm(&g);
                if v.is_finite() && (armijo || flat) {
                    accepted = true;
                    flat_run = if armijo { 0 } else { flat_run + 1 };
                    let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
                        s_hist.push(s);
                        y_hist.push(y);
                        if s_hist.len() > opts.history {
                            s_hist.remove(0);
                            y_hist.remove(0);
                        }
                    }
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    fx = v;
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            if s_hist.is_empty() {
                break;
            }
            s_hist.clear();
            y_hist.clear();
            continue;
        }
        trace.push(fx);
        let gn = inf_norm(&g);
        if gn < 0.9 * best_norm {
            best_norm = gn;
            best_at = iterations;
        }
    }
    let grad_norm = inf_norm(&g);
    Ok(Minimum {
        x,
        value: fx,
        grad: g,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.grad_tol,
        trace,
    })
}

/// Projected gradient descent on the box [lo, hi]ⁿ with Barzilai-Borwein
/// steps and a sufficient-decrease safeguard.
pub fn minimize_box<F>(mut f: F, x0: Vec<f64>, lo: f64, hi: f64, opts: &OptimOptions) -> Result<Minimum>
where
    F: FnMut(&[f64], &mut [f64]) -> Result<f64>,
{
    let n = x0.len();
    let proj = |v: f64| v.clamp(lo, hi);
    let mut x: Vec<f64> = x0.into_iter().map(proj).collect();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g).map_err(|e| e.at_iteration(0))?;
    let mut trace = vec![fx];
    let mut step = 1.0;
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let pg_norm = |x: &[f64], g: &[f64]| {
        x.iter()
            .zip(g)
            .map(|(xi, gi)| (proj(xi - gi) - xi).abs())
            .fold(0.0, f64::max)
    };
    let mut iterations = 0;
    while iterations < opts.max_iters && pg_norm(&x, &g) > opts.grad_tol {
        let mut accepted = false;
        let mut t = step;
        for _ in 0..MAX_HALVINGS {
            for i in 0..n {
                x_new[i] = proj(x[i] - t * g[i]);
            }
            let dx: f64 = x_new.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let lin: f64 = x_new.iter().zip(&x).zip(&g).map(|((a, b), gi)| (a - b) * gi).sum();
            if let Ok(v) = f(&x_new, &mut g_new) {
                let noise = 8.0 * f64::EPSILON * (1.0 + fx.abs());
                let flat = v <= fx + noise && pg_norm(&x_new, &g_new) < pg_norm(&x, &g);
                if v.is_finite() && (v <= fx + C1 * lin.min(-dx / t) || flat) {
                    let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
                    let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
                    let sy = dot(&s, &y);
                    step = if sy > 0.0 {
                        (dot(&s, &s) / sy).clamp(1e-10, 1e10)
                    } else {
                        t * 2.0
                    };
                    std::mem::swap(&mut x, &mut x_new);
                    std::mem::swap(&mut g, &mut g_new);
                    fx = v;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        iterations += 1;
        if !accepted {
            break;
        }
        trace.push(fx);
    }
    let grad_norm = pg_norm(&x, &g);
    Ok(Minimum {
        x,
        value: fx,
        grad: g,
        grad_norm,
        iterations,
        converged: grad_norm <= opts.grad_tol,
        trace,
    })
}

/// Smallest v in [lo, hi] with `slope(v) ≥ 0` for a nondecreasing slope.
///
/// Returns `lo` when the slope is already nonnegative there and `hi` when it
/// never becomes nonnegative.
pub fn bisect_increasing<F>(mut slope: F, mut lo: f64, mut hi: f64) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if slope(lo)? >= 0.0 {
        return Ok(lo);
    }
    if slope(hi)? < 0.0 {
        return Ok(hi);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid)? >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-13 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}
