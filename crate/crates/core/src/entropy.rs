//! Entropies of the eikonal equation: the cubic frame family, entropies built
//! from trigonometric generators, entropy productions on grids and the jump
//! energy of the limit field.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Domain, Grid, NodeClass, RidgeSet};
use crate::error::{Error, Result};
use crate::fields::{weak_divergence, CellMeasure, Region, VectorField};
use crate::geom::{self, Vec2};
use crate::quad::adaptive_simpson_pieces;

/// A map `Φ` on the unit circle with `dΦ/ds(e^{is}) · e^{is} = 0`.
pub trait Entropy: Sync {
    fn eval(&self, z: Vec2) -> Vec2;
}

/// Orthonormal pair `α1 = e^{iθ}`, `α2 = e^{i(θ + π/2)}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub theta: f64,
}

impl Frame {
    pub const E: Frame = Frame { theta: 0.0 };
    /// The frame rotated by π/4.
    pub const EPS: Frame = Frame { theta: std::f64::consts::FRAC_PI_4 };

    pub fn new(theta: f64) -> Self {
        Frame { theta }
    }

    pub fn alpha1(&self) -> Vec2 {
        geom::unit(self.theta)
    }

    pub fn alpha2(&self) -> Vec2 {
        geom::unit(self.theta + FRAC_PI_2)
    }

    /// Generator `ψ(t) = sin(2(t − θ))` whose entropy is this frame's `Σ`.
    pub fn generator(&self) -> EntropyGenerator {
        let (s, c) = (2.0 * self.theta).sin_cos();
        // sin(2t − 2θ) = cos 2θ sin 2t − sin 2θ cos 2t
        EntropyGenerator::new(vec![0.0, 0.0, -s], vec![0.0, 0.0, c])
    }
}

/// `Σ_{α1,α2}(z) = (4/3)((z·α2)³ α1 + (z·α1)³ α2)`.
pub fn sigma_frame(frame: Frame, z: Vec2) -> Vec2 {
    let a1 = frame.alpha1();
    let a2 = frame.alpha2();
    let p = geom::dot(z, a2).powi(3);
    let q = geom::dot(z, a1).powi(3);
    geom::scale(geom::add(geom::scale(a1, p), geom::scale(a2, q)), 4.0 / 3.0)
}

impl Entropy for Frame {
    fn eval(&self, z: Vec2) -> Vec2 {
        sigma_frame(*self, z)
    }
}

/// Real trigonometric polynomial `ψ(t) = Σ_k a_k cos kt + b_k sin kt`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyGenerator {
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl EntropyGenerator {
    pub fn new(mut cos: Vec<f64>, mut sin: Vec<f64>) -> Self {
        let n = cos.len().max(sin.len());
        cos.resize(n, 0.0);
        sin.resize(n, 0.0);
        EntropyGenerator { cos, sin }
    }

    /// `ψ(t) = cos(kt)`.
    pub fn cos_k(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Self::new(c, vec![])
    }

    /// `ψ(t) = sin(kt)`.
    pub fn sin_k(k: usize) -> Self {
        let mut s = vec![0.0; k + 1];
        s[k] = 1.0;
        Self::new(vec![], s)
    }

    pub fn degree(&self) -> usize {
        self.cos.len().saturating_sub(1)
    }

    /// Only even harmonics present.
    pub fn pi_periodic(&self) -> bool {
        (1..self.cos.len()).step_by(2).all(|k| self.cos[k] == 0.0 && self.sin[k] == 0.0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        (0..self.cos.len())
            .map(|k| {
                let (s, c) = (k as f64 * t).sin_cos();
                self.cos[k] * c + self.sin[k] * s
            })
            .sum()
    }

    pub fn derivative(&self, t: f64) -> f64 {
        (0..self.cos.len())
            .map(|k| {
                let kf = k as f64;
                let (s, c) = (kf * t).sin_cos();
                kf * (self.sin[k] * c - self.cos[k] * s)
            })
            .sum()
    }

    /// Complex coefficient `ψ̂_k` for `k ∈ [−n, n]`.
    fn hat(&self, k: i64) -> Complex64 {
        let a = k.unsigned_abs() as usize;
        if a >= self.cos.len() {
            return Complex64::new(0.0, 0.0);
        }
        if k == 0 {
            Complex64::new(self.cos[0], 0.0)
        } else if k > 0 {
            Complex64::new(0.5 * self.cos[a], -0.5 * self.sin[a])
        } else {
            Complex64::new(0.5 * self.cos[a], 0.5 * self.sin[a])
        }
    }

    /// Least-squares generator of the entropy `f` sampled on the circle, up to
    /// `max_harmonic`. The constant part of `f` is discarded.
    pub fn fit<F: Fn(f64) -> Vec2>(f: F, max_harmonic: usize) -> Self {
        let n = 4 * (max_harmonic + 2);
        let samples: Vec<Complex64> = (0..n)
            .map(|j| {
                let v = f(TAU * j as f64 / n as f64);
                Complex64::new(v[0], v[1])
            })
            .collect();
        let phi_hat = |m: i64| -> Complex64 {
            samples
                .iter()
                .enumerate()
                .map(|(j, v)| v * Complex64::from_polar(1.0, -(m as f64) * TAU * j as f64 / n as f64))
                .sum::<Complex64>()
                / n as f64
        };
        // ψ̂_k = Φ̂_{k+1} (k+1) / (2 i^k); ψ real forces ψ̂_{−k} = conj ψ̂_k, so
        // average the two estimates.
        let mut cos = vec![0.0; max_harmonic + 1];
        let mut sin = vec![0.0; max_harmonic + 1];
        let psi_hat = |k: i64| phi_hat(k + 1) * (k + 1) as f64 / (2.0 * Complex64::i().powi(k as i32));
        for k in 0..=max_harmonic as i64 {
            let pk = if k == 0 { psi_hat(0) } else { 0.5 * (psi_hat(k) + psi_hat(-k).conj()) };
            if k == 0 {
                cos[0] = pk.re;
            } else {
                cos[k as usize] = 2.0 * pk.re;
                sin[k as usize] = -2.0 * pk.im;
            }
        }
        EntropyGenerator::new(cos, sin)
    }
}

/// `Φ(e^{is}) = Σ_k Φ̂_k e^{iks}` with `Φ = Φ₁ + iΦ₂`.
#[derive(Clone, Debug, Serialize)]
pub struct EntropyMap {
    /// Coefficients for harmonics `−offset ..= len − 1 − offset`.
    #[serde(skip)]
    coeffs: Vec<Complex64>,
    offset: i64,
}

impl EntropyMap {
    /// `Φ(e^{is}) = Σ_k Φ̂_k e^{iks}` evaluated on the circle.
    pub fn on_circle(&self, s: f64) -> Vec2 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, c) in self.coeffs.iter().enumerate() {
            if *c != Complex64::new(0.0, 0.0) {
                acc += c * Complex64::from_polar(1.0, (j as i64 - self.offset) as f64 * s);
            }
        }
        [acc.re, acc.im]
    }

    /// `dΦ/ds(e^{is})`.
    pub fn derivative(&self, s: f64) -> Vec2 {
        let mut acc = Complex64::new(0.0, 0.0);
        for (j, c) in self.coeffs.iter().enumerate() {
            let k = (j as i64 - self.offset) as f64;
            acc += c * Complex64::new(0.0, k) * Complex64::from_polar(1.0, k * s);
        }
        [acc.re, acc.im]
    }

    /// Largest `|dΦ/ds(e^{is}) · e^{is}|` over `n` equispaced angles.
    pub fn tangency_defect(&self, n: usize) -> f64 {
        (0..n)
            .map(|j| {
                let s = TAU * j as f64 / n as f64;
                geom::dot(self.derivative(s), geom::unit(s)).abs()
            })
            .fold(0.0, f64::max)
    }
}

impl Entropy for EntropyMap {
    /// Evaluates at `z / |z|`; zero at the origin.
    fn eval(&self, z: Vec2) -> Vec2 {
        if z == [0.0, 0.0] {
            return [0.0, 0.0];
        }
        self.on_circle(z[1].atan2(z[0]))
    }
}

/// Integrate `dΦ/ds(e^{is}) = 2ψ(s + π/2) e^{i(s+π/2)}` in Fourier space; the
/// mean of `Φ` is set to zero. The first harmonic of `ψ` produces a constant
/// derivative and therefore no closed curve.
pub fn entropy_from_generator(gen: &EntropyGenerator) -> Result<EntropyMap> {
    let n = gen.degree() as i64;
    let residual = TAU * 2.0 * gen.hat(-1).norm();
    if residual > 1e-12 {
        return Err(Error::NonClosed { residual });
    }
    // Harmonics of Φ run from 1 − n to n + 1.
    let offset = n - 1;
    let mut coeffs = vec![Complex64::new(0.0, 0.0); (2 * n + 1) as usize];
    for k in -n..=n {
        if k == -1 {
            continue;
        }
        let c = 2.0 * gen.hat(k) * Complex64::i().powi(k as i32) / (k + 1) as f64;
        coeffs[(k + 1 + offset) as usize] = c;
    }
    Ok(EntropyMap { coeffs, offset })
}

/// `div Φ(m)` as a cell measure.
pub fn entropy_production<E: Entropy + ?Sized>(m: &VectorField, phi: &E) -> CellMeasure {
    let f = m.map(|z| phi.eval(z));
    weak_divergence(&f)
}

/// Nodes where `||m| − 1| > 0.1`, outside which the production of a
/// circle-valued entropy is not meaningful.
pub fn non_unit_nodes(m: &VectorField) -> Vec<usize> {
    (0..m.grid.len())
        .filter(|&k| m.grid.class(k) != NodeClass::Exterior && (geom::norm(m.values[k]) - 1.0).abs() > 0.1)
        .collect()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct TwoFrameValue {
    pub tv_e: f64,
    pub tv_eps: f64,
    pub value: f64,
}

/// `sqrt(|div Σ_e(m)|(Ω_δ)² + |div Σ_ε(m)|(Ω_δ)²)`.
pub fn f0_tilde_two_frames(m: &VectorField) -> TwoFrameValue {
    let tv_e = entropy_production(m, &Frame::E).tv(Region::NonExterior);
    let tv_eps = entropy_production(m, &Frame::EPS).tv(Region::NonExterior);
    TwoFrameValue { tv_e, tv_eps, value: tv_e.hypot(tv_eps) }
}

/// Cellwise maximum over the frames `θ_k = kπ/(2n)`, summed over `Ω_δ`.
pub fn f0_tilde_sup(m: &VectorField, n_frames: usize) -> f64 {
    let frames: Vec<Frame> = (0..n_frames.max(1)).map(|k| Frame::new(k as f64 * PI / (2 * n_frames.max(1)) as f64)).collect();
    f0_tilde_sup_frames(m, &frames)
}

/// Cellwise maximum of `|div Σ_α(m)|` over an explicit frame set.
pub fn f0_tilde_sup_frames(m: &VectorField, frames: &[Frame]) -> f64 {
    let prods: Vec<CellMeasure> = frames.par_iter().map(|f| entropy_production(m, f)).collect();
    let g = &*m.grid;
    (0..g.len())
        .filter(|&k| g.class(k) != NodeClass::Exterior)
        .map(|k| prods.iter().map(|p| p.mass[k].abs()).fold(0.0, f64::max))
        .sum()
}

/// `(1/3) ∫_J |m⁺ − m⁻|³ dH¹` along the ridge of the limit field.
pub fn f0_jump(ridge: &RidgeSet) -> Result<f64> {
    if ridge.is_degenerate() {
        return Ok(0.0);
    }
    let (x0, x1) = (ridge.p_minus[0], ridge.p_plus[0]);
    let density = |x: f64| ridge.point(x).map_or(0.0, |p| p.jump_magnitude().powi(3) / 3.0);
    let mid = 0.5 * (x0 + x1);
    let breaks = [x0, 0.5 * (x0 + mid), mid, 0.5 * (mid + x1), x1];
    let value = adaptive_simpson_pieces(density, &breaks, 1e-10)?;
    Ok(value)
}

/// `∫_{∂Ω_δ} Φ(m̄) · n dH¹` on the outer boundary of the collar.
pub fn boundary_flux<E: Entropy + ?Sized>(domain: &Domain, phi: &E, n: usize) -> Result<f64> {
    let nodes = domain.offset_quadrature(domain.delta, n);
    let mut total = 0.0;
    for b in nodes {
        let m = domain.limit_m(b.x)?;
        total += b.weight * geom::dot(phi.eval(m), b.normal);
    }
    Ok(total)
}

/// `n · (Φ(m⁺) − Φ(m⁻))`.
pub fn jump_bracket<E: Entropy + ?Sized>(phi: &E, normal: Vec2, m_plus: Vec2, m_minus: Vec2) -> f64 {
    geom::dot(normal, geom::sub(phi.eval(m_plus), phi.eval(m_minus)))
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameReport {
    pub frame_theta: f64,
    pub tv_interior: f64,
    pub tv_near_ridge: f64,
    pub flux_boundary: f64,
}

/// Total variations of `div Σ_α(m̄)` over `Ω_δ`, the part within `3h` of the
/// ridge, and the boundary flux.
pub fn frame_report(domain: &Domain, m: &VectorField, frame: Frame) -> Result<FrameReport> {
    let g: &Grid = &m.grid;
    let prod = entropy_production(m, &frame);
    let ridge = domain.ridge();
    let band = 3.0 * g.h;
    Ok(FrameReport {
        frame_theta: frame.theta,
        tv_interior: prod.tv(Region::NonExterior),
        tv_near_ridge: prod.tv_where(|k| g.class(k) != NodeClass::Exterior && ridge.distance(g.node(k)) <= band),
        flux_boundary: boundary_flux(domain, &frame, 4096)?,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RidgeRow {
    pub x1: f64,
    pub beta: f64,
    pub s_bar: f64,
    pub jump_density: f64,
}

/// Ridge samples with the `Σ_e` jump density.
pub fn ridge_report(ridge: &RidgeSet, n: usize) -> Vec<RidgeRow> {
    ridge
        .sample(n)
        .into_iter()
        .map(|p| RidgeRow {
            x1: p.x[0],
            beta: p.beta,
            s_bar: p.s_bar,
            jump_density: jump_bracket(&Frame::E, p.normal, p.m_plus, p.m_minus),
        })
        .collect()
}
