//! Characteristic curves of the limit field and Monte Carlo checks of their
//! superposition.
//!
//! Between ridge hits a characteristic moves in a straight line with constant
//! angle. At the ridge it either passes through (when `χ` stays 1 on the far
//! side) or is mirrored across the ridge line, which records an angular jump.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Domain, RidgeSet};
use crate::error::{Error, Result};
use crate::geom::{self, Vec2};
use crate::kinetic::CHI_TIE;
use crate::quad::{ks_statistic, ks_two_sample_p};

/// Crossing and exit times are resolved to this accuracy.
pub const EVENT_TOL: f64 = 1e-10;

/// A field `m` on a convex tracing region `Ω'` with an optional horizontal
/// ridge segment across which `m` jumps.
pub trait TraceField: Sync {
    /// `m(x)` off the ridge.
    fn m(&self, x: Vec2) -> Vec2;
    /// Positive inside `Ω'`, negative outside.
    fn level(&self, x: Vec2) -> f64;
    /// `(y, x1_min, x1_max)` of the ridge segment.
    fn ridge_line(&self) -> Option<(f64, f64, f64)>;
    /// Upper and lower traces at `(x1, y)`.
    fn traces(&self, x1: f64) -> Option<(Vec2, Vec2)>;
    fn ridge_distance(&self, x: Vec2) -> f64;
    fn area(&self) -> f64;
    fn boundary_length(&self) -> f64;
    /// Axis-aligned box containing `Ω'`.
    fn bounds(&self) -> (Vec2, Vec2);
    /// Uniform point of `∂Ω'` by arclength with the inward unit normal.
    fn sample_boundary(&self, rng: &mut ChaCha8Rng) -> (Vec2, Vec2);
}

/// `m̄ = ∇⊥ū` on the inset `Ω' = {ū > −(δ − inset)}`.
pub struct LimitTrace {
    pub domain: Domain,
    ridge: RidgeSet,
    /// Offset of `∂Ω'` outside `∂Ω`.
    pub offset: f64,
    polyline: Vec<Vec2>,
    cumulative: Vec<f64>,
    area: f64,
    length: f64,
}

const POLYLINE_NODES: usize = 1 << 14;

impl LimitTrace {
    /// Tracing region inset by `inset` from the outer boundary of the collar.
    pub fn new(domain: Domain, inset: f64) -> Result<Self> {
        let offset = domain.delta - inset;
        if !(offset >= 0.0) {
            return Err(Error::InvalidArgument(format!("inset {inset} exceeds the collar width {}", domain.delta)));
        }
        let nodes = domain.offset_quadrature(offset, POLYLINE_NODES);
        let length: f64 = nodes.iter().map(|b| b.weight).sum();
        let perimeter: f64 = domain.offset_quadrature(0.0, POLYLINE_NODES).iter().map(|b| b.weight).sum();
        let area = domain.area() + perimeter * offset + PI * offset * offset;
        let mut polyline: Vec<Vec2> = nodes.iter().map(|b| b.x).collect();
        polyline.push(polyline[0]);
        let mut cumulative = vec![0.0];
        for w in polyline.windows(2) {
            let last = *cumulative.last().unwrap_or(&0.0);
            cumulative.push(last + geom::norm(geom::sub(w[1], w[0])));
        }
        Ok(LimitTrace { domain, ridge: domain.ridge(), offset, polyline, cumulative, area, length })
    }
}

impl TraceField for LimitTrace {
    fn m(&self, x: Vec2) -> Vec2 {
        self.domain.limit_m(x).unwrap_or([0.0, 0.0])
    }

    fn level(&self, x: Vec2) -> f64 {
        self.domain.signed_distance(x).map_or(f64::NEG_INFINITY, |d| d + self.offset)
    }

    fn ridge_line(&self) -> Option<(f64, f64, f64)> {
        if self.ridge.is_degenerate() {
            None
        } else {
            Some((self.ridge.p_minus[1], self.ridge.p_minus[0], self.ridge.p_plus[0]))
        }
    }

    fn traces(&self, x1: f64) -> Option<(Vec2, Vec2)> {
        self.ridge.point(x1).map(|p| (p.m_plus, p.m_minus))
    }

    fn ridge_distance(&self, x: Vec2) -> f64 {
        self.ridge.distance(x)
    }

    fn area(&self) -> f64 {
        self.area
    }

    fn boundary_length(&self) -> f64 {
        self.length
    }

    fn bounds(&self) -> (Vec2, Vec2) {
        let c = self.domain.center();
        let h = self.domain.half_extents();
        let r = [h[0] + self.offset, h[1] + self.offset];
        (geom::sub(c, r), geom::add(c, r))
    }

    fn sample_boundary(&self, rng: &mut ChaCha8Rng) -> (Vec2, Vec2) {
        let total = *self.cumulative.last().unwrap_or(&0.0);
        let target = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= target).clamp(1, self.polyline.len() - 1);
        let seg = self.cumulative[i] - self.cumulative[i - 1];
        let f = if seg > 0.0 { (target - self.cumulative[i - 1]) / seg } else { 0.0 };
        let guess = geom::add(self.polyline[i - 1], geom::scale(geom::sub(self.polyline[i], self.polyline[i - 1]), f));
        // Snap onto the parallel curve along the normal of the projection.
        match self.domain.closest(guess) {
            Ok(p) => (geom::add(p.point, geom::scale(p.normal, self.offset)), geom::scale(p.normal, -1.0)),
            Err(_) => (guess, [0.0, 0.0]),
        }
    }
}

/// Constant field on the square `[−half, half]²`.
pub struct ConstantSquare {
    pub m: Vec2,
    pub half: f64,
}

impl TraceField for ConstantSquare {
    fn m(&self, _x: Vec2) -> Vec2 {
        self.m
    }

    fn level(&self, x: Vec2) -> f64 {
        self.half - x[0].abs().max(x[1].abs())
    }

    fn ridge_line(&self) -> Option<(f64, f64, f64)> {
        None
    }

    fn traces(&self, _x1: f64) -> Option<(Vec2, Vec2)> {
        None
    }

    fn ridge_distance(&self, _x: Vec2) -> f64 {
        f64::INFINITY
    }

    fn area(&self) -> f64 {
        4.0 * self.half * self.half
    }

    fn boundary_length(&self) -> f64 {
        8.0 * self.half
    }

    fn bounds(&self) -> (Vec2, Vec2) {
        ([-self.half, -self.half], [self.half, self.half])
    }

    fn sample_boundary(&self, rng: &mut ChaCha8Rng) -> (Vec2, Vec2) {
        let u = rng.random::<f64>() * 4.0;
        let side = (u.floor() as usize).min(3);
        let t = (u - side as f64) * 2.0 * self.half - self.half;
        let h = self.half;
        match side {
            0 => ([t, -h], [0.0, 1.0]),
            1 => ([h, t], [-1.0, 0.0]),
            2 => ([t, h], [0.0, -1.0]),
            _ => ([-h, t], [1.0, 0.0]),
        }
    }
}

/// Angular jump at a ridge hit. The arc runs counter-clockwise from
/// `s_minus` to `s_plus` when `arc_sign = 1` and clockwise when `−1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Jump {
    pub t: f64,
    pub x: Vec2,
    pub s_minus: f64,
    pub s_plus: f64,
    pub arc_sign: f64,
}

impl Jump {
    /// Length of the arc, at most `π`.
    pub fn arc_length(&self) -> f64 {
        let ccw = geom::wrap_angle(self.s_plus - self.s_minus);
        if self.arc_sign > 0.0 {
            ccw
        } else {
            TAU - ccw
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    /// Reached `∂Ω'`.
    Exit,
    /// Reached the end of the time window.
    Window,
}

/// A characteristic `(γ_x, γ_s)` on `[t_minus, t_plus]`. Positions are stored
/// at the start, at every ridge hit and at the end; motion in between is
/// straight at unit speed.
#[derive(Clone, Debug, Serialize)]
pub struct Characteristic {
    pub t_minus: f64,
    pub t_plus: f64,
    pub x_path: Vec<(f64, Vec2)>,
    /// `(t, s)`: the angle is `s` from time `t` on.
    pub s_path: Vec<(f64, f64)>,
    pub jumps: Vec<Jump>,
    pub stop: StopKind,
}

impl Characteristic {
    /// Right-continuous angle at time `t`.
    pub fn angle(&self, t: f64) -> f64 {
        let i = self.s_path.partition_point(|&(ti, _)| ti <= t);
        self.s_path[i.saturating_sub(1)].1
    }

    pub fn position(&self, t: f64) -> Vec2 {
        if self.x_path.len() < 2 {
            return self.x_path[0].1;
        }
        let i = self.x_path.partition_point(|&(ti, _)| ti <= t).clamp(1, self.x_path.len() - 1);
        let (t0, x0) = self.x_path[i - 1];
        let (t1, x1) = self.x_path[i];
        if t1 <= t0 {
            return x1;
        }
        let f = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        geom::add(x0, geom::scale(geom::sub(x1, x0), f))
    }

    pub fn alive(&self, t: f64) -> bool {
        t >= self.t_minus && t < self.t_plus
    }

    /// `Tot.Var. γ_s` (sum of jump arcs; the angle is constant in between).
    pub fn angle_variation(&self) -> f64 {
        self.jumps.iter().map(Jump::arc_length).sum()
    }

    /// Path as CSV rows `t,x1,x2,s` followed by the jump table.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x1,x2,s")?;
        for &(t, x) in &self.x_path {
            // At a jump vertex report the post-jump angle, matching right continuity.
            writeln!(w, "{t},{},{},{}", x[0], x[1], self.angle(t))?;
        }
        writeln!(w)?;
        writeln!(w, "t,x1,x2,s_minus,s_plus,arc_sign")?;
        for j in &self.jumps {
            writeln!(w, "{},{},{},{},{},{}", j.t, j.x[0], j.x[1], j.s_minus, j.s_plus, j.arc_sign)?;
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(f)
    }
}

/// `χ(x, s) = 1` for the field.
fn chi<F: TraceField + ?Sized>(field: &F, x: Vec2, s: f64) -> bool {
    geom::dot(geom::unit(s), field.m(x)) > CHI_TIE
}

/// First root of `f` on `[0, hi]` given `f(0) > 0 ≥ f(hi)`.
fn bisect<F: Fn(f64) -> f64>(f: F, hi: f64) -> f64 {
    let (mut lo, mut hi) = (0.0, hi);
    while hi - lo > EVENT_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Mirror of the direction `s` across a horizontal line: `2·(π/2) − s + π`.
pub fn mirror(s: f64) -> f64 {
    geom::wrap_angle(2.0 * FRAC_PI_2 - s + PI)
}

/// Trace from `(x, s)` at time `t0` until `t_end` or the exit from `Ω'`,
/// testing for events every `dt`.
pub fn trace_characteristic<F: TraceField + ?Sized>(field: &F, x: Vec2, s: f64, t0: f64, t_end: f64, dt: f64) -> Result<Characteristic> {
    if !(dt > 0.0) || !(t_end >= t0) {
        return Err(Error::InvalidArgument(format!("time window [{t0}, {t_end}] with step {dt}")));
    }
    if !chi(field, x, s) {
        return Err(Error::InvalidArgument(format!("χ = 0 at the start ({}, {}), s = {s}", x[0], x[1])));
    }
    let ridge = field.ridge_line();
    let mut x = x;
    let mut s = geom::wrap_angle(s);
    let mut t = t0;
    let mut side = match ridge {
        Some((y, _, _)) if x[1] - y < 0.0 => -1.0,
        _ => 1.0,
    };
    let mut x_path = vec![(t, x)];
    let mut s_path = vec![(t, s)];
    let mut jumps = Vec::new();
    let stop;
    let max_iter = 4 * ((t_end - t0) / dt).ceil() as usize + 1000;
    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(Error::NoConvergence { x: x[0], y: x[1], iterations: iter });
        }
        if t_end - t <= 0.0 {
            stop = StopKind::Window;
            break;
        }
        let step = dt.min(t_end - t);
        let e = geom::unit(s);
        let at = |tau: f64| geom::add(x, geom::scale(e, tau));
        let end = at(step);
        let exit = if field.level(end) <= 0.0 { Some(bisect(|tau| field.level(at(tau)), step)) } else { None };
        let mut crossing = None;
        if let Some((y, lo, hi)) = ridge {
            if (end[1] - y) * side < 0.0 {
                let tau = bisect(|tau| (at(tau)[1] - y) * side, step);
                let p = at(tau);
                crossing = Some((tau, p, p[0] > lo && p[0] < hi));
            }
        }
        match (exit, crossing) {
            (Some(te), c) if c.is_none_or(|(tc, _, _)| te <= tc) => {
                t += te;
                x = at(te);
                x_path.push((t, x));
                stop = StopKind::Exit;
                break;
            }
            (_, Some((tc, p, true))) => {
                t += tc;
                x = p;
                let (up, low) = field.traces(p[0]).ok_or(Error::InvalidArgument("ridge traces unavailable".into()))?;
                let (near, far) = if side > 0.0 { (up, low) } else { (low, up) };
                x_path.push((t, x));
                if geom::dot(e, far) > CHI_TIE {
                    side = -side;
                    continue;
                }
                let s_new = mirror(s);
                if geom::dot(geom::unit(s_new), near) <= CHI_TIE {
                    return Err(Error::StuckAtRidge { t });
                }
                let ccw = geom::wrap_angle(s_new - s);
                jumps.push(Jump { t, x, s_minus: s, s_plus: s_new, arc_sign: if ccw <= PI { 1.0 } else { -1.0 } });
                s = s_new;
                s_path.push((t, s));
            }
            (_, Some((tc, p, false))) => {
                // Crossing the ridge line outside the segment: no jump.
                t += tc;
                x = p;
                side = -side;
            }
            _ => {
                t += step;
                x = end;
            }
        }
    }
    if x_path.last().map(|v| v.0) != Some(t) {
        x_path.push((t, x));
    }
    Ok(Characteristic { t_minus: t0, t_plus: t, x_path, s_path, jumps, stop })
}

/// Angular arc `[start, start + length]` (counter-clockwise) carried by a
/// characteristic at time `t` and position `x`, with sign.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SignedArc {
    pub t: f64,
    pub x: Vec2,
    pub start: f64,
    pub length: f64,
    pub sign: f64,
}

/// `σ_γ`: the angle is piecewise constant, so only the jump arcs remain.
pub fn sigma_gamma(c: &Characteristic) -> Vec<SignedArc> {
    c.jumps
        .iter()
        .map(|j| {
            let length = j.arc_length();
            let start = if j.arc_sign > 0.0 { j.s_minus } else { j.s_plus };
            SignedArc { t: j.t, x: j.x, start, length, sign: j.arc_sign }
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleOptions {
    pub n: usize,
    pub window: f64,
    pub dt: f64,
    /// Grid scale used for the concentration band (`2h`).
    pub h: f64,
    pub seed: u64,
    pub probes: usize,
    /// Side of the square spatial bins of the pushforward histogram.
    pub spatial_bin: f64,
    pub angle_bins: usize,
    /// Bins along the ridge and on the circle for the arc histogram.
    pub ridge_bins: usize,
    pub arc_bins: usize,
    /// Include curves entering through `∂Ω'` during the window.
    pub inflow: bool,
}

impl Default for EnsembleOptions {
    fn default() -> Self {
        EnsembleOptions {
            n: 100_000,
            window: 1.0,
            dt: 1.0 / 256.0,
            h: 1.0 / 256.0,
            seed: 1,
            probes: 4,
            spatial_bin: 0.125,
            angle_bins: 4,
            ridge_bins: 32,
            arc_bins: 64,
            inflow: true,
        }
    }
}

/// Weighted family of characteristics on the window `[0, T]`.
#[derive(Clone, Debug, Serialize)]
pub struct Ensemble {
    pub curves: Vec<(Characteristic, f64)>,
    pub total_weight: f64,
    pub seed: u64,
    pub n: usize,
    /// Curves sampled in the bulk at time 0; the rest enter through `∂Ω'`.
    pub bulk: usize,
    pub stuck: usize,
}

/// Sample and trace the ensemble. Bulk curves start at time 0 uniformly on
/// `{χ = 1}` over `Ω'`; inflow curves enter through `∂Ω'` at uniform times
/// with direction density `(e^{is}·ν_in)⁺ χ`, in proportion to the inflow
/// mass over the window. All curves carry the same weight.
pub fn sample_ensemble<F: TraceField + ?Sized>(field: &F, opts: &EnsembleOptions) -> Result<Ensemble> {
    if opts.n == 0 {
        return Err(Error::InvalidArgument("empty ensemble".into()));
    }
    let bulk_mass = field.area() * PI;
    // Inflow per unit time and length: ∫ (e·ν_in)⁺ 1{e·m > 0} ds = 1 when m is tangent.
    let inflow_mass = if opts.inflow { field.boundary_length() * opts.window * inflow_density(field) } else { 0.0 };
    let bulk = ((opts.n as f64) * bulk_mass / (bulk_mass + inflow_mass)).round() as usize;
    let weight = bulk_mass / bulk.max(1) as f64;
    let (lo, hi) = field.bounds();
    let traced: Vec<Option<(Characteristic, f64)>> = (0..opts.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let (x, s, t0) = if i < bulk {
                let x = loop {
                    let x = [lo[0] + rng.random::<f64>() * (hi[0] - lo[0]), lo[1] + rng.random::<f64>() * (hi[1] - lo[1])];
                    if field.level(x) > 0.0 {
                        break x;
                    }
                };
                let s = geom::angle_of(field.m(x)) + (rng.random::<f64>() - 0.5) * PI;
                (x, s, 0.0)
            } else {
                let t0 = rng.random::<f64>() * opts.window;
                let (x, nu) = field.sample_boundary(&mut rng);
                // Direction at angle φ from ν_in with density cos φ on the χ side.
                let phi = rng.random::<f64>().asin();
                let m_side = geom::dot(geom::perp(nu), field.m(x)).signum();
                (x, geom::angle_of(nu) + m_side * phi, t0)
            };
            match trace_characteristic(field, x, s, t0, opts.window, opts.dt) {
                Ok(c) => Ok(Some((c, weight))),
                Err(Error::StuckAtRidge { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let stuck = traced.iter().filter(|c| c.is_none()).count();
    let curves: Vec<(Characteristic, f64)> = traced.into_iter().flatten().collect();
    let total_weight = curves.iter().map(|c| c.1).sum();
    Ok(Ensemble { curves, total_weight, seed: opts.seed, n: opts.n, bulk, stuck })
}

/// Inflow mass per unit time and boundary length; equals 1 when `m` is
/// tangent to `∂Ω'`, which holds for both tracing regions here.
fn inflow_density<F: TraceField + ?Sized>(_field: &F) -> f64 {
    1.0
}

#[derive(Clone, Debug, Serialize)]
pub struct ProbeStat {
    pub t: f64,
    pub bins: usize,
    pub chi2: f64,
    /// `(χ² − bins)/sqrt(2 bins)`.
    pub z: f64,
    /// Fraction of bins with `|O − E| ≤ 4 sqrt(E)`.
    pub within_4sigma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct EnsembleReport {
    pub seed: u64,
    pub n: usize,
    pub bulk: usize,
    pub stuck: usize,
    pub weight: f64,
    pub probes: Vec<ProbeStat>,
    pub max_abs_z: f64,
    pub min_within_4sigma: f64,
    pub jumps: usize,
    /// `Σ w TV(σ_γ)`.
    pub arc_mass: f64,
    /// Share of the arc mass within `2h` of the ridge.
    pub concentration: f64,
    /// `TV(σ̂_ω) / Σ w TV(σ_γ)` on the (ridge cell, angle) histogram.
    pub cancellation_ratio: f64,
    pub ks_statistic: f64,
    pub ks_p: f64,
    pub window_jumps: [usize; 2],
}

/// Statistics of an ensemble: pushforward histograms at probe times,
/// concentration and cancellation of the arc measure, and a two-window
/// Kolmogorov–Smirnov test on the pre-jump angles.
pub fn ensemble_report<F: TraceField + ?Sized>(field: &F, ens: &Ensemble, opts: &EnsembleOptions) -> EnsembleReport {
    let weight = ens.curves.first().map_or(0.0, |c| c.1);
    let (lo, hi) = field.bounds();
    let b = opts.spatial_bin;
    let nbx = ((hi[0] - lo[0]) / b).ceil() as usize;
    let nby = ((hi[1] - lo[1]) / b).ceil() as usize;
    // Only cells inside Ω' (convex, so the corners decide) enter the test.
    let cell_inside: Vec<bool> = (0..nbx * nby)
        .map(|c| {
            let (i, j) = (c % nbx, c / nbx);
            let x0 = [lo[0] + i as f64 * b, lo[1] + j as f64 * b];
            [[0.0, 0.0], [b, 0.0], [0.0, b], [b, b]].iter().all(|d| field.level(geom::add(x0, *d)) > 0.0)
        })
        .collect();
    let na = opts.angle_bins.max(1);
    let expected = if weight > 0.0 { b * b * (PI / na as f64) / weight } else { 0.0 };
    let probes: Vec<ProbeStat> = (0..opts.probes)
        .map(|k| {
            let t = opts.window * (k as f64 + 0.5) / opts.probes as f64;
            let mut counts = vec![0usize; nbx * nby * na];
            for (c, _) in &ens.curves {
                if !c.alive(t) {
                    continue;
                }
                let x = c.position(t);
                let (i, j) = (((x[0] - lo[0]) / b).floor(), ((x[1] - lo[1]) / b).floor());
                if i < 0.0 || j < 0.0 || i as usize >= nbx || j as usize >= nby {
                    continue;
                }
                let cell = j as usize * nbx + i as usize;
                if !cell_inside[cell] {
                    continue;
                }
                let u = geom::wrap_angle(c.angle(t) - geom::angle_of(field.m(x)) + PI) - PI;
                let a = (((u + FRAC_PI_2) / PI * na as f64).floor() as isize).clamp(0, na as isize - 1) as usize;
                counts[cell * na + a] += 1;
            }
            let mut chi2 = 0.0;
            let mut bins = 0;
            let mut ok = 0;
            for (idx, &o) in counts.iter().enumerate() {
                if !cell_inside[idx / na] {
                    continue;
                }
                bins += 1;
                let d = o as f64 - expected;
                chi2 += d * d / expected;
                if d.abs() <= 4.0 * expected.sqrt() {
                    ok += 1;
                }
            }
            let dof = bins.max(1) as f64;
            ProbeStat { t, bins, chi2, z: (chi2 - dof) / (2.0 * dof).sqrt(), within_4sigma: ok as f64 / dof }
        })
        .collect();

    let arcs: Vec<(SignedArc, f64)> = ens.curves.iter().flat_map(|(c, w)| sigma_gamma(c).into_iter().map(move |a| (a, *w))).collect();
    let arc_mass: f64 = arcs.iter().map(|(a, w)| w * a.length).sum();
    let near: f64 = arcs.iter().filter(|(a, _)| field.ridge_distance(a.x) <= 2.0 * opts.h).map(|(a, w)| w * a.length).sum();
    let concentration = if arc_mass > 0.0 { near / arc_mass } else { 1.0 };

    let (r0, r1) = field.ridge_line().map_or((lo[0], hi[0]), |(_, a, b)| (a, b));
    let nr = opts.ridge_bins.max(1);
    let ns = opts.arc_bins.max(1);
    let mut hist = vec![0.0; nr * ns];
    let ds = TAU / ns as f64;
    for (a, w) in &arcs {
        let r = ((((a.x[0] - r0) / (r1 - r0)) * nr as f64).floor() as isize).clamp(0, nr as isize - 1) as usize;
        // Spread the arc over angle bins on the unrolled circle.
        let end = a.start + a.length;
        let first = (a.start / ds).floor() as isize;
        let last = (end / ds).floor() as isize;
        for k in first..=last {
            let overlap = (end.min((k + 1) as f64 * ds) - a.start.max(k as f64 * ds)).max(0.0);
            hist[r * ns + k.rem_euclid(ns as isize) as usize] += w * a.sign * overlap;
        }
    }
    let tv_hist: f64 = hist.iter().map(|v| v.abs()).sum();
    let cancellation_ratio = if arc_mass > 0.0 { tv_hist / arc_mass } else { 1.0 };

    let half = 0.5 * opts.window;
    let first: Vec<f64> = arcs.iter().filter(|(a, _)| a.t < half).map(|(a, _)| pre_angle(a)).collect();
    let second: Vec<f64> = arcs.iter().filter(|(a, _)| a.t >= half).map(|(a, _)| pre_angle(a)).collect();
    let d = ks_statistic(&first, &second);
    let ks_p = ks_two_sample_p(d, first.len(), second.len());

    EnsembleReport {
        seed: ens.seed,
        n: ens.n,
        bulk: ens.bulk,
        stuck: ens.stuck,
        weight,
        max_abs_z: probes.iter().map(|p| p.z.abs()).fold(0.0, f64::max),
        min_within_4sigma: probes.iter().map(|p| p.within_4sigma).fold(1.0, f64::min),
        probes,
        jumps: arcs.len(),
        arc_mass,
        concentration,
        cancellation_ratio,
        ks_statistic: d,
        ks_p,
        window_jumps: [first.len(), second.len()],
    }
}

fn pre_angle(a: &SignedArc) -> f64 {
    if a.sign > 0.0 {
        a.start
    } else {
        geom::wrap_angle(a.start + a.length)
    }
}

/// Sample, trace and summarize in one call.
pub fn ensemble_representation_check<F: TraceField + ?Sized>(field: &F, opts: &EnsembleOptions) -> Result<(Ensemble, EnsembleReport)> {
    let ens = sample_ensemble(field, opts)?;
    let report = ensemble_report(field, &ens, opts);
    Ok((ens, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ellipse_field() -> LimitTrace {
        LimitTrace::new(Domain::ellipse(1.0, 0.5).unwrap(), 2.0 / 256.0).unwrap()
    }

    #[test]
    fn upward_start_never_jumps() {
        let f = ellipse_field();
        // χ needs e^{is}·m̄ > 0; m̄(0, 0.2) = (1, 0), so tilt slightly right.
        let c = trace_characteristic(&f, [0.0, 0.2], FRAC_PI_2 - 0.01, 0.0, 2.0, 1.0 / 256.0).unwrap();
        assert!(c.jumps.is_empty());
        assert_eq!(c.stop, StopKind::Exit);
        let end = c.x_path.last().unwrap().1;
        assert!(end[1] > 0.5, "{end:?}");
        assert!((f.level(end)).abs() < 1e-9);
    }

    #[test]
    fn downward_start_reflects_at_the_ridge() {
        let f = ellipse_field();
        let s = 3.0 * FRAC_PI_2 + 0.3;
        // Mirroring the direction across the axis turns it by π − 2·0.3.
        let c = trace_characteristic(&f, [0.0, 0.2], s, 0.0, 2.0, 1.0 / 256.0).unwrap();
        assert_eq!(c.jumps.len(), 1);
        let j = c.jumps[0];
        // Time to reach the axis along direction s from height 0.2.
        let t_hit = 0.2 / -s.sin();
        assert!((j.t - t_hit).abs() < 1e-9);
        assert!(j.x[1].abs() <= 1.0 / 256.0);
        assert!((j.s_plus - mirror(s)).abs() < 1e-15);
        assert!((j.s_plus - (TAU - s)).abs() < 1e-12);
        assert!(j.arc_length() <= PI);
        assert!((j.arc_length() - (PI - 0.6)).abs() < 1e-12);
        // After the jump the curve moves back up.
        assert!(c.position(j.t + 0.1)[1] > 0.0);
    }

    #[test]
    fn constant_field_moves_straight() {
        let f = ConstantSquare { m: [1.0, 0.0], half: 0.5 };
        for s in [-1.2, -0.3, 0.0, 0.7, 1.5] {
            let c = trace_characteristic(&f, [0.1, -0.2], s, 0.0, 10.0, 0.01).unwrap();
            assert!(c.jumps.is_empty());
            let (t1, x1) = *c.x_path.last().unwrap();
            let d = geom::norm(geom::sub(x1, [0.1, -0.2]));
            assert!((d - t1).abs() < 1e-12);
        }
        assert!(trace_characteristic(&f, [0.0, 0.0], PI, 0.0, 1.0, 0.01).is_err());
    }

    #[test]
    fn sigma_gamma_bookkeeping() {
        let f = ellipse_field();
        let c = trace_characteristic(&f, [0.0, 0.2], FRAC_PI_2 - 0.01, 0.0, 2.0, 0.01).unwrap();
        assert!(sigma_gamma(&c).is_empty());
        assert_eq!(c.angle_variation(), 0.0);
        // Heading 0.6 below the horizontal, the mirrored heading is 0.6 above.
        // The ridge ends at x1 = 0.75, the crossing is near x1 = 0.44.
        let c = trace_characteristic(&f, [0.0, 0.3], TAU - 0.6, 0.0, 2.0, 0.01).unwrap();
        let arcs = sigma_gamma(&c);
        assert_eq!(arcs.len(), 1);
        assert!((arcs[0].length - 1.2).abs() < 1e-12);
        let tv: f64 = arcs.iter().map(|a| a.length).sum();
        assert_eq!(tv, c.angle_variation());
    }

    #[test]
    fn curve_csv_has_both_tables() {
        let f = ellipse_field();
        let c = trace_characteristic(&f, [0.2, 0.3], 3.0 * FRAC_PI_2 + 0.4, 0.0, 2.0, 0.01).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x1,x2,s\n"));
        assert!(text.contains("\n\nt,x1,x2,s_minus,s_plus,arc_sign\n"));
        assert_eq!(text.lines().count(), 1 + c.x_path.len() + 1 + 1 + 1);
    }

    #[test]
    fn small_ensemble_is_reproducible() {
        let f = ellipse_field();
        let opts = EnsembleOptions { n: 2000, seed: 7, ..Default::default() };
        let (_, a) = ensemble_representation_check(&f, &opts).unwrap();
        let (_, b) = ensemble_representation_check(&f, &opts).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_eq!(a.stuck, 0);
        assert_eq!(a.concentration, 1.0);
    }

    #[test]
    fn pushforward_detects_missing_inflow() {
        let f = ellipse_field();
        let opts = EnsembleOptions { n: 20_000, seed: 5, ..Default::default() };
        let (_, with) = ensemble_representation_check(&f, &opts).unwrap();
        assert!(with.max_abs_z < 4.0, "{with:?}");
        let (_, without) = ensemble_representation_check(&f, &EnsembleOptions { inflow: false, ..opts }).unwrap();
        assert!(without.max_abs_z > 4.0, "{without:?}");
    }

    #[test]
    fn boundary_samples_lie_on_the_parallel_curve() {
        let f = ellipse_field();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (x, nu) = f.sample_boundary(&mut rng);
            assert!(f.level(x).abs() < 1e-12);
            assert!((geom::norm(nu) - 1.0).abs() < 1e-12);
            // m̄ is tangent to the parallel curve.
            assert!(geom::dot(nu, f.m(x)).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn unit_speed_and_jumps_on_ridge(x1 in -0.7f64..0.7, x2 in -0.3f64..0.3, u in -1.5f64..1.5) {
            let f = ellipse_field();
            prop_assume!(x2.abs() > 1e-6);
            let s = geom::angle_of(f.m([x1, x2])) + u;
            let dt = 1.0 / 128.0;
            match trace_characteristic(&f, [x1, x2], s, 0.0, 1.5, dt) {
                Ok(c) => {
                    for w in c.x_path.windows(2) {
                        let d = geom::norm(geom::sub(w[1].1, w[0].1));
                        prop_assert!((d - (w[1].0 - w[0].0)).abs() < 1e-12);
                    }
                    for j in &c.jumps {
                        prop_assert!(j.x[1].abs() <= dt);
                        prop_assert!(j.arc_length() <= PI);
                    }
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
