//! Discrete energy
//!
//! ```text
//! F_eps(u) = h² Σ_k [ eps H(∇²u)_k + eps⁻¹ (1 − |∇u|²_k)² ]
//! ```
//!
//! summed over non-exterior nodes with centered differences, together with its
//! exact gradient and the minimization driver. `H` is either the smoothed
//! Hessian norm (`hessian_power = 1`) or the squared Frobenius norm
//! (`hessian_power = 2`). Collar values are pinned; only interior nodes move.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{exact_limit_field, Domain, Grid, NodeClass};
use crate::error::{Error, Result};
use crate::fields::{smoothed_norm, w11_distance, Region, ScalarField};
use crate::optim::{self, Method, Objective, OptOptions, StopReason};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergySplit {
    pub hessian_term: f64,
    pub potential_term: f64,
    pub total: f64,
}

/// Parameters of the discrete energy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub eps: f64,
    pub eta: f64,
    pub hessian_power: u8,
}

impl EnergyParams {
    pub fn new(eps: f64, eta: f64, hessian_power: u8) -> Self {
        EnergyParams { eps, eta, hessian_power }
    }
}

#[inline]
fn hessian_density(hess: [f64; 3], p: &EnergyParams) -> f64 {
    if p.hessian_power == 2 {
        hess[0] * hess[0] + hess[1] * hess[1] + 2.0 * hess[2] * hess[2]
    } else {
        smoothed_norm(hess, p.eta)
    }
}

fn check_params(grid: &Grid, p: &EnergyParams) -> Result<()> {
    if !(p.eps > 0.0) || !(p.eta >= 0.0) || !(p.hessian_power == 1 || p.hessian_power == 2) {
        return Err(Error::InvalidArgument(format!(
            "eps = {}, eta = {}, hessian_power = {}",
            p.eps, p.eta, p.hessian_power
        )));
    }
    // The energy stencils must not reach the box edge.
    for k in 0..grid.len() {
        if grid.class(k) != NodeClass::Exterior {
            let (i, j) = grid.ij(k);
            if i == 0 || j == 0 || i + 1 == grid.nx || j + 1 == grid.ny {
                return Err(Error::InvalidArgument("non-exterior node on the box edge".into()));
            }
        }
    }
    Ok(())
}

/// Per-node (hessian, potential) densities, zero at exterior nodes.
fn densities(u: &ScalarField, p: &EnergyParams) -> Vec<[f64; 2]> {
    let g = &*u.grid;
    (0..g.len())
        .into_par_iter()
        .map(|k| {
            if g.class(k) == NodeClass::Exterior {
                return [0.0, 0.0];
            }
            let gr = u.gradient_at(k);
            let defect = 1.0 - gr[0] * gr[0] - gr[1] * gr[1];
            [hessian_density(u.hessian_at(k), p), defect * defect]
        })
        .collect()
}

pub fn energy(u: &ScalarField, params: &EnergyParams) -> Result<EnergySplit> {
    check_params(&u.grid, params)?;
    energy_unchecked(u, params)
}

fn energy_unchecked(u: &ScalarField, p: &EnergyParams) -> Result<EnergySplit> {
    let dens = densities(u, p);
    let mut hs = 0.0;
    let mut ps = 0.0;
    for (k, d) in dens.iter().enumerate() {
        if !(d[0].is_finite() && d[1].is_finite()) {
            return Err(Error::NonFiniteEnergy { node: k });
        }
        hs += d[0];
        ps += d[1];
    }
    let h2 = u.grid.h * u.grid.h;
    let hessian_term = p.eps * h2 * hs;
    let potential_term = h2 * ps / p.eps;
    Ok(EnergySplit { hessian_term, potential_term, total: hessian_term + potential_term })
}

/// Value and gradient with respect to every node; entries at non-interior
/// nodes are zero.
fn energy_and_gradient(u: &ScalarField, p: &EnergyParams) -> (EnergySplit, Vec<f64>) {
    let g = &*u.grid;
    let (nx, h) = (g.nx, g.h);
    let h2 = h * h;
    // Partial derivatives of the nodal density with respect to the stencil
    // quantities, pre-scaled by the stencil weights.
    let partials: Vec<[f64; 7]> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            if g.class(k) == NodeClass::Exterior {
                return [0.0; 7];
            }
            let gr = u.gradient_at(k);
            let hs = u.hessian_at(k);
            let defect = 1.0 - gr[0] * gr[0] - gr[1] * gr[1];
            let dp = -4.0 * defect / p.eps;
            let (dxx, dyy, dxy, hd) = if p.hessian_power == 2 {
                let q = hs[0] * hs[0] + hs[1] * hs[1] + 2.0 * hs[2] * hs[2];
                (2.0 * hs[0], 2.0 * hs[1], 4.0 * hs[2], q)
            } else {
                let q = hs[0] * hs[0] + hs[1] * hs[1] + 2.0 * hs[2] * hs[2];
                let s = (q + p.eta * p.eta).sqrt();
                if s == 0.0 {
                    (0.0, 0.0, 0.0, 0.0)
                } else {
                    (hs[0] / s, hs[1] / s, 2.0 * hs[2] / s, smoothed_norm(hs, p.eta))
                }
            };
            [
                dp * gr[0] / (2.0 * h),
                dp * gr[1] / (2.0 * h),
                p.eps * dxx / h2,
                p.eps * dyy / h2,
                p.eps * dxy / (4.0 * h2),
                hd,
                defect * defect,
            ]
        })
        .collect();
    let grad: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            if g.class(k) != NodeClass::Interior {
                return 0.0;
            }
            let a = |o: usize, c: usize| partials[o][c];
            let v = a(k - 1, 0) - a(k + 1, 0) + a(k - nx, 1) - a(k + nx, 1)
                + a(k + 1, 2) - 2.0 * a(k, 2) + a(k - 1, 2)
                + a(k + nx, 3) - 2.0 * a(k, 3) + a(k - nx, 3)
                + a(k - nx - 1, 4) - a(k - nx + 1, 4) - a(k + nx - 1, 4) + a(k + nx + 1, 4);
            h2 * v
        })
        .collect();
    let mut hs = 0.0;
    let mut ps = 0.0;
    for pk in &partials {
        hs += pk[5];
        ps += pk[6];
    }
    let hessian_term = p.eps * h2 * hs;
    let potential_term = h2 * ps / p.eps;
    (EnergySplit { hessian_term, potential_term, total: hessian_term + potential_term }, grad)
}

/// Exact gradient of the discrete energy with respect to the interior values.
pub fn energy_gradient(u: &ScalarField, params: &EnergyParams) -> Result<ScalarField> {
    check_params(&u.grid, params)?;
    if params.hessian_power == 1 && params.eta <= 0.0 {
        return Err(Error::InvalidArgument("the first-power energy needs eta > 0 for a gradient".into()));
    }
    let (_, grad) = energy_and_gradient(u, params);
    Ok(ScalarField::from_vec(u.grid.clone(), grad))
}

/// Discrete `L²` norm of the functional derivative, `‖∇E‖ / h`.
pub fn grad_norm(grad: &ScalarField) -> f64 {
    grad.values.iter().map(|v| v * v).sum::<f64>().sqrt() / grad.grid.h
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeOptions {
    pub optimizer: Method,
    pub max_iter: usize,
    pub tol: f64,
    pub hessian_power: u8,
    pub eta0: f64,
    /// `None` means `1e-4 / h`.
    pub eta_min: Option<f64>,
    pub nonmonotone: usize,
    pub memory: usize,
    /// Width of the Gaussian used to mollify the initial guess, in units of `h`.
    pub blur: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            optimizer: Method::Bb,
            max_iter: 20_000,
            tol: 1e-6,
            hessian_power: 2,
            eta0: 1.0,
            eta_min: None,
            nonmonotone: 1,
            memory: 8,
            blur: 2.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MinimizeResult {
    #[serde(skip)]
    pub u: ScalarField,
    pub energy_history: Vec<EnergySplit>,
    pub grad_norm_history: Vec<f64>,
    pub eps: f64,
    pub eta_final: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub final_energy: EnergySplit,
}

impl MinimizeResult {
    /// Turn a non-converged run into [`Error::NotConverged`].
    pub fn check(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::NotConverged {
                iterations: self.iterations,
                grad_norm: self.grad_norm_history.last().copied().unwrap_or(f64::NAN),
            })
        }
    }
}

struct Problem<'a> {
    base: &'a ScalarField,
    free: &'a [usize],
    params: EnergyParams,
}

impl Problem<'_> {
    fn expand(&self, x: &[f64]) -> ScalarField {
        let mut u = self.base.clone();
        for (&k, &v) in self.free.iter().zip(x) {
            u.values[k] = v;
        }
        u
    }
}

impl Objective for Problem<'_> {
    fn dim(&self) -> usize {
        self.free.len()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> (f64, [f64; 2]) {
        let u = self.expand(x);
        let (e, g) = energy_and_gradient(&u, &self.params);
        for (gi, &k) in grad.iter_mut().zip(self.free) {
            *gi = g[k];
        }
        (e.total, [e.hessian_term, e.potential_term])
    }

    fn grad_norm(&self, grad: &[f64]) -> f64 {
        grad.iter().map(|v| v * v).sum::<f64>().sqrt() / self.base.grid.h
    }
}

/// `ū^δ` with interior values replaced by a Gaussian blur of width `sigma`.
pub fn mollified_limit(domain: &Domain, grid: &Arc<Grid>, sigma: f64) -> Result<ScalarField> {
    let (u, _) = exact_limit_field(domain, grid)?;
    Ok(blur_interior(&u, sigma))
}

fn blur_interior(u: &ScalarField, sigma: f64) -> ScalarField {
    let g = &*u.grid;
    if sigma <= 0.0 {
        return u.clone();
    }
    let r = (3.0 * sigma / g.h).ceil() as isize;
    let w: Vec<f64> = (-r..=r).map(|o| (-0.5 * (o as f64 * g.h / sigma).powi(2)).exp()).collect();
    let sum: f64 = w.iter().sum();
    let w: Vec<f64> = w.iter().map(|v| v / sum).collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        (0..g.len())
            .into_par_iter()
            .map(|k| {
                let (i, j) = g.ij(k);
                let mut acc = 0.0;
                for (t, wt) in w.iter().enumerate() {
                    let o = t as isize - r;
                    let (ii, jj) = if horizontal {
                        ((i as isize + o).clamp(0, g.nx as isize - 1) as usize, j)
                    } else {
                        (i, (j as isize + o).clamp(0, g.ny as isize - 1) as usize)
                    };
                    acc += wt * src[g.index(ii, jj)];
                }
                acc
            })
            .collect()
    };
    let tmp = pass(&u.values, true);
    let blurred = pass(&tmp, false);
    let values = (0..g.len())
        .map(|k| if g.class(k) == NodeClass::Interior { blurred[k] } else { u.values[k] })
        .collect();
    ScalarField::from_vec(u.grid.clone(), values)
}

/// Minimize the energy at fixed `eps` with collar values pinned to those of
/// `ū^δ`. Starts from the mollified limit field unless `warm_start` is given.
///
/// For `hessian_power = 1` the smoothing parameter follows
/// `η_k = max(η_min, η₀ 2^{−k})`, re-converging at each level.
pub fn minimize(
    domain: &Domain,
    grid: &Arc<Grid>,
    eps: f64,
    opts: &MinimizeOptions,
    warm_start: Option<&ScalarField>,
) -> Result<MinimizeResult> {
    let (exact, _) = exact_limit_field(domain, grid)?;
    let mut u = match warm_start {
        Some(w) => {
            if !w.grid.same_shape(grid) {
                return Err(Error::GridMismatch);
            }
            let mut u = exact.clone();
            for k in 0..grid.len() {
                if grid.class(k) == NodeClass::Interior {
                    u.values[k] = w.values[k];
                }
            }
            u
        }
        None => blur_interior(&exact, opts.blur * grid.h),
    };
    let free: Vec<usize> = (0..grid.len()).filter(|&k| grid.class(k) == NodeClass::Interior).collect();

    let etas: Vec<f64> = if opts.hessian_power == 1 {
        let eta_min = opts.eta_min.unwrap_or(1e-4 / grid.h);
        let mut v = vec![opts.eta0.max(eta_min)];
        while *v.last().unwrap() > eta_min {
            v.push((v.last().unwrap() * 0.5).max(eta_min));
        }
        v
    } else {
        vec![0.0]
    };

    let opt = OptOptions {
        method: opts.optimizer,
        max_iter: opts.max_iter,
        tol: opts.tol,
        nonmonotone: opts.nonmonotone,
        memory: opts.memory,
    };
    let mut energy_history = Vec::new();
    let mut grad_norm_history = Vec::new();
    let mut iterations = 0;
    let mut stop = StopReason::Converged;
    let mut params = EnergyParams::new(eps, etas[0], opts.hessian_power);
    check_params(grid, &params)?;
    for (level, &eta) in etas.iter().enumerate() {
        params.eta = eta;
        let problem = Problem { base: &u, free: &free, params };
        let x0: Vec<f64> = free.iter().map(|&k| u.values[k]).collect();
        let report = optim::minimize(&problem, x0, &opt);
        if report.history.len() == 1 && report.stop == StopReason::LineSearchStalled && level == 0 {
            return Err(Error::LineSearchFailure { iteration: 0 });
        }
        let skip = usize::from(level > 0);
        energy_history.extend(report.history.iter().skip(skip).map(|(f, a)| EnergySplit {
            hessian_term: a[0],
            potential_term: a[1],
            total: *f,
        }));
        grad_norm_history.extend(report.grad_norms.iter().skip(skip));
        iterations += report.iterations;
        stop = report.stop;
        u = problem.expand(&report.x);
    }
    let final_energy = energy_unchecked(&u, &params)?;
    Ok(MinimizeResult {
        u,
        energy_history,
        grad_norm_history,
        eps,
        eta_final: params.eta,
        iterations,
        converged: stop == StopReason::Converged,
        stop,
        final_energy,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitRow {
    pub eps: f64,
    pub total: f64,
    pub hessian: f64,
    pub potential: f64,
    pub w11: f64,
    /// `|F_eps − F_0| / F_0`.
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct LimitTable {
    pub f0: f64,
    pub rows: Vec<LimitRow>,
    /// W^{1,1} column strictly decreasing.
    pub w11_strictly_decreasing: bool,
    /// W^{1,1} column non-increasing up to 5% slack.
    pub w11_monotone: bool,
    /// Gap column non-increasing up to 5% slack.
    pub gap_monotone: bool,
}

const SLACK: f64 = 0.05;

/// Minimize along a decreasing list of `eps`, each run warm-started from the
/// previous minimizer, and tabulate energies and distances to `ū^δ`.
pub fn energy_limit_table(
    domain: &Domain,
    grid: &Arc<Grid>,
    eps_list: &[f64],
    opts: &MinimizeOptions,
) -> Result<(LimitTable, Vec<MinimizeResult>)> {
    energy_limit_table_from(domain, grid, eps_list, opts, None)
}

/// [`energy_limit_table`] with an explicit initial guess for the first `eps`.
pub fn energy_limit_table_from(
    domain: &Domain,
    grid: &Arc<Grid>,
    eps_list: &[f64],
    opts: &MinimizeOptions,
    initial: Option<&ScalarField>,
) -> Result<(LimitTable, Vec<MinimizeResult>)> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("eps_list must be strictly decreasing".into()));
    }
    let f0 = crate::entropy::f0_jump(&domain.ridge())?;
    let (exact, _) = exact_limit_field(domain, grid)?;
    let mut rows = Vec::new();
    let mut runs: Vec<MinimizeResult> = Vec::new();
    for &eps in eps_list {
        let warm = runs.last().map(|r| &r.u).or(initial);
        let res = minimize(domain, grid, eps, opts, warm)?;
        let e = res.final_energy;
        rows.push(LimitRow {
            eps,
            total: e.total,
            hessian: e.hessian_term,
            potential: e.potential_term,
            w11: w11_distance(&res.u, &exact, Region::Interior)?,
            gap: if f0 > 0.0 { (e.total - f0).abs() / f0 } else { e.total },
            iterations: res.iterations,
            converged: res.converged,
        });
        runs.push(res);
    }
    let mono = |col: &dyn Fn(&LimitRow) -> f64| rows.windows(2).all(|w| col(&w[1]) <= col(&w[0]) * (1.0 + SLACK));
    let table = LimitTable {
        f0,
        w11_strictly_decreasing: rows.windows(2).all(|w| w[1].w11 < w[0].w11),
        w11_monotone: mono(&|r| r.w11),
        gap_monotone: mono(&|r| r.gap),
        rows,
    };
    Ok((table, runs))
}
