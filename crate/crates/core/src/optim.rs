//! First-order minimizers for smooth objectives on a flat vector of unknowns:
//! Barzilai–Borwein gradient descent and limited-memory BFGS, both with
//! backtracking line searches.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Objective with gradient. `eval` fills `grad` and returns the value together
/// with two auxiliary numbers that are recorded in the history.
pub trait Objective {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> (f64, [f64; 2]);
    /// Norm used for the stopping test.
    fn grad_norm(&self, grad: &[f64]) -> f64 {
        grad.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bb,
    Lbfgs,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptOptions {
    pub method: Method,
    pub max_iter: usize,
    pub tol: f64,
    /// Window of the nonmonotone reference value; 1 gives a monotone search.
    pub nonmonotone: usize,
    /// Number of stored pairs for L-BFGS.
    pub memory: usize,
}

impl Default for OptOptions {
    fn default() -> Self {
        OptOptions { method: Method::Bb, max_iter: 20_000, tol: 1e-6, nonmonotone: 1, memory: 8 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    LineSearchStalled,
}

#[derive(Clone, Debug)]
pub struct OptReport {
    pub x: Vec<f64>,
    pub f: f64,
    pub aux: [f64; 2],
    pub iterations: usize,
    /// `(f, aux)` after every accepted step, starting with the initial point.
    pub history: Vec<(f64, [f64; 2])>,
    pub grad_norms: Vec<f64>,
    pub stop: StopReason,
}

const ARMIJO: f64 = 1e-4;
/// Absolute slack of the sufficient-decrease test. Near convergence the
/// predicted decrease falls below the rounding error of the objective, and the
/// slack lets the iteration keep reducing the gradient there.
pub const LS_TOL: f64 = 1e-12;
const MAX_BACKTRACK: usize = 60;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn minimize<O: Objective>(obj: &O, x0: Vec<f64>, opts: &OptOptions) -> OptReport {
    let n = obj.dim();
    assert_eq!(x0.len(), n);
    let mut x = x0;
    let mut g = vec![0.0; n];
    let (mut f, mut aux) = obj.eval(&x, &mut g);
    let mut gn = obj.grad_norm(&g);
    let mut history = vec![(f, aux)];
    let mut grad_norms = vec![gn];
    let mut recent: VecDeque<f64> = VecDeque::from([f]);

    let mut xt = vec![0.0; n];
    let mut gt = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut bb_step = 1.0 / g.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    for it in 0..opts.max_iter {
        if gn <= opts.tol {
            stop = StopReason::Converged;
            break;
        }
        let mut step = match opts.method {
            Method::Bb => {
                for i in 0..n {
                    d[i] = -g[i];
                }
                bb_step
            }
            Method::Lbfgs => {
                lbfgs_direction(&g, &pairs, &mut d);
                if dot(&d, &g) >= 0.0 {
                    pairs.clear();
                    for i in 0..n {
                        d[i] = -g[i];
                    }
                    bb_step
                } else if pairs.is_empty() {
                    bb_step
                } else {
                    1.0
                }
            }
        };
        let slope = dot(&g, &d);
        let f_ref = recent.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                xt[i] = x[i] + step * d[i];
            }
            let (ft, at) = obj.eval(&xt, &mut gt);
            // The second condition keeps the recorded history monotone even
            // when the nonmonotone reference is above the current value.
            if ft.is_finite()
                && ft <= f_ref + ARMIJO * step * slope + LS_TOL
                && (opts.nonmonotone > 1 || ft <= f + LS_TOL)
            {
                accepted = Some((ft, at));
                break;
            }
            step *= 0.5;
        }
        let Some((ft, at)) = accepted else {
            stop = StopReason::LineSearchStalled;
            break;
        };
        // s = xt − x, y = gt − g.
        let mut s = vec![0.0; n];
        let mut y = vec![0.0; n];
        for i in 0..n {
            s[i] = xt[i] - x[i];
            y[i] = gt[i] - g[i];
        }
        let sy = dot(&s, &y);
        if sy > 0.0 {
            let ss = dot(&s, &s);
            let yy = dot(&y, &y);
            bb_step = if it % 2 == 0 { ss / sy } else { sy / yy };
            if opts.method == Method::Lbfgs {
                pairs.push_back((s, y, 1.0 / sy));
                if pairs.len() > opts.memory {
                    pairs.pop_front();
                }
            }
        } else {
            bb_step = step * 2.0;
        }
        std::mem::swap(&mut x, &mut xt);
        std::mem::swap(&mut g, &mut gt);
        f = ft;
        aux = at;
        gn = obj.grad_norm(&g);
        history.push((f, aux));
        grad_norms.push(gn);
        recent.push_back(f);
        while recent.len() > opts.nonmonotone.max(1) {
            recent.pop_front();
        }
        iterations = it + 1;
    }
    if stop == StopReason::MaxIterations && gn <= opts.tol {
        stop = StopReason::Converged;
    }
    OptReport { x, f, aux, iterations, history, grad_norms, stop }
}

fn lbfgs_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, d: &mut [f64]) {
    let mut q: Vec<f64> = g.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot(s, &q);
        alpha[k] = a;
        for i in 0..q.len() {
            q[i] -= a * y[i];
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for v in q.iter_mut() {
            *v *= gamma;
        }
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot(y, &q);
        for i in 0..q.len() {
            q[i] += (alpha[k] - b) * s[i];
        }
    }
    for i in 0..d.len() {
        d[i] = -q[i];
    }
}
