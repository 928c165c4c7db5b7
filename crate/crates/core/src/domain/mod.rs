//! Ellipse and stadium geometry: signed distance, closest points, the ridge
//! (medial axis) and the limit field of the sharp-interface problem.

mod grid;

pub use grid::{Grid, NodeClass};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{ScalarField, VectorField};
use crate::geom::{self, Vec2};
use crate::quad::gauss_legendre;

/// Points with `|x₂|` below this are treated as lying on the major axis.
pub const RIDGE_TOL: f64 = 1e-12;

const PROJ_TOL: f64 = 1e-12;
const PROJ_MAX_ITER: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainKind {
    /// `(x/a)² + (y/b)² < 1` with `a ≥ b`.
    Ellipse { a: f64, b: f64 },
    /// Points within `radius` of the segment `[0, length] × {0}`.
    Stadium { length: f64, radius: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub kind: DomainKind,
    /// Width of the collar where competitors are pinned.
    pub delta: f64,
}

/// Result of a closest-point query.
#[derive(Clone, Copy, Debug)]
pub struct Projection {
    pub point: Vec2,
    /// Outward unit normal of the boundary at `point`.
    pub normal: Vec2,
    /// Signed distance, positive inside.
    pub signed_distance: f64,
    /// True when the query lies on the ridge; `point` is then the closest point
    /// on the query's own side (upper side when `x₂ = 0`).
    pub on_ridge: bool,
}

impl Domain {
    pub fn new(kind: DomainKind, delta: f64) -> Result<Self> {
        let d = Domain { kind, delta };
        d.validate()?;
        Ok(d)
    }

    /// Ellipse with the default collar `0.1 b`.
    pub fn ellipse(a: f64, b: f64) -> Result<Self> {
        Self::new(DomainKind::Ellipse { a, b }, 0.1 * b)
    }

    /// Stadium with the default collar `0.1 R`.
    pub fn stadium(length: f64, radius: f64) -> Result<Self> {
        Self::new(DomainKind::Stadium { length, radius }, 0.1 * radius)
    }

    pub fn with_delta(self, delta: f64) -> Result<Self> {
        Self::new(self.kind, delta)
    }

    pub fn validate(&self) -> Result<()> {
        let cap = match self.kind {
            DomainKind::Ellipse { a, b } => {
                if !(b > 0.0 && a >= b && a.is_finite()) {
                    return Err(Error::InvalidDomain(format!(
                        "ellipse needs a >= b > 0, got a = {a}, b = {b}"
                    )));
                }
                b / 2.0
            }
            DomainKind::Stadium { length, radius } => {
                if !(length > 0.0 && radius > 0.0 && length.is_finite() && radius.is_finite()) {
                    return Err(Error::InvalidDomain(format!(
                        "stadium needs L > 0 and R > 0, got L = {length}, R = {radius}"
                    )));
                }
                radius / 2.0
            }
        };
        if !(self.delta > 0.0 && self.delta <= cap) {
            return Err(Error::InvalidDomain(format!(
                "collar width {} outside (0, {cap}]",
                self.delta
            )));
        }
        Ok(())
    }

    /// Center of symmetry.
    pub fn center(&self) -> Vec2 {
        match self.kind {
            DomainKind::Ellipse { .. } => [0.0, 0.0],
            DomainKind::Stadium { length, .. } => [0.5 * length, 0.0],
        }
    }

    /// Half extents of the bounding box of `Ω` around [`Domain::center`].
    pub fn half_extents(&self) -> Vec2 {
        match self.kind {
            DomainKind::Ellipse { a, b } => [a, b],
            DomainKind::Stadium { length, radius } => [0.5 * length + radius, radius],
        }
    }

    pub fn contains(&self, x: Vec2) -> bool {
        match self.kind {
            DomainKind::Ellipse { a, b } => (x[0] / a).powi(2) + (x[1] / b).powi(2) < 1.0,
            DomainKind::Stadium { length, radius } => {
                let q = [x[0].clamp(0.0, length), 0.0];
                geom::norm(geom::sub(x, q)) < radius
            }
        }
    }

    pub fn area(&self) -> f64 {
        match self.kind {
            DomainKind::Ellipse { a, b } => std::f64::consts::PI * a * b,
            DomainKind::Stadium { length, radius } => {
                2.0 * radius * length + std::f64::consts::PI * radius * radius
            }
        }
    }

    /// Closest boundary point with side information. Points on the ridge get
    /// the projection from their own side instead of an error.
    pub fn closest(&self, x: Vec2) -> Result<Projection> {
        match self.kind {
            DomainKind::Ellipse { a, b } => ellipse_closest(a, b, x),
            DomainKind::Stadium { length, radius } => Ok(stadium_closest(length, radius, x)),
        }
    }

    /// `dist(x, ∂Ω)` inside, `−dist(x, ∂Ω)` outside.
    pub fn signed_distance(&self, x: Vec2) -> Result<f64> {
        Ok(self.closest(x)?.signed_distance)
    }

    /// Unique closest point on `∂Ω`.
    pub fn project_to_boundary(&self, x: Vec2) -> Result<Vec2> {
        let p = self.closest(x)?;
        if p.on_ridge {
            return Err(Error::AmbiguousProjection { x: x[0], y: x[1] });
        }
        Ok(p.point)
    }

    /// `∇ū(x)`, which equals minus the outward normal at the projection, both
    /// inside and outside.
    pub fn limit_gradient(&self, x: Vec2) -> Result<Vec2> {
        let p = self.closest(x)?;
        Ok(geom::scale(p.normal, -1.0))
    }

    /// `m̄(x) = ∇⊥ū(x)`.
    pub fn limit_m(&self, x: Vec2) -> Result<Vec2> {
        Ok(geom::perp(self.limit_gradient(x)?))
    }

    pub fn ridge(&self) -> RidgeSet {
        RidgeSet::new(*self)
    }

    /// Quadrature on the parallel curve `{dist(·, Ω) = offset}` (outside `Ω`
    /// for `offset > 0`). Returns nodes with outward normals and arclength
    /// weights.
    pub fn offset_quadrature(&self, offset: f64, n: usize) -> Vec<BoundaryNode> {
        match self.kind {
            DomainKind::Ellipse { a, b } => {
                let n = n.max(8);
                let dt = std::f64::consts::TAU / n as f64;
                (0..n)
                    .map(|k| {
                        let t = k as f64 * dt;
                        let (s, c) = t.sin_cos();
                        let speed = (a * a * s * s + b * b * c * c).sqrt();
                        let normal = [b * c / speed, a * s / speed];
                        let kappa = a * b / speed.powi(3);
                        BoundaryNode {
                            x: [a * c + offset * normal[0], b * s + offset * normal[1]],
                            normal,
                            weight: speed * (1.0 + offset * kappa) * dt,
                        }
                    })
                    .collect()
            }
            DomainKind::Stadium { length, radius } => {
                let r = radius + offset;
                let panels_per_piece = (n / 64).max(2);
                let (gx, gw) = gauss_legendre(16);
                let mut out = Vec::new();
                let mut push_panel = |f: &dyn Fn(f64) -> (Vec2, Vec2), t0: f64, t1: f64, speed: f64| {
                    let half = 0.5 * (t1 - t0);
                    let mid = 0.5 * (t0 + t1);
                    for (xi, wi) in gx.iter().zip(&gw) {
                        let (x, normal) = f(mid + half * xi);
                        out.push(BoundaryNode { x, normal, weight: wi * half * speed });
                    }
                };
                let pieces: [(Box<dyn Fn(f64) -> (Vec2, Vec2)>, f64, f64, f64); 4] = [
                    (Box::new(move |t| ([t, -r], [0.0, -1.0])), 0.0, length, 1.0),
                    (
                        Box::new(move |t: f64| {
                            let (s, c) = t.sin_cos();
                            ([length + r * c, r * s], [c, s])
                        }),
                        -std::f64::consts::FRAC_PI_2,
                        std::f64::consts::FRAC_PI_2,
                        r,
                    ),
                    (Box::new(move |t| ([length - t, r], [0.0, 1.0])), 0.0, length, 1.0),
                    (
                        Box::new(move |t: f64| {
                            let (s, c) = t.sin_cos();
                            ([r * c, r * s], [c, s])
                        }),
                        std::f64::consts::FRAC_PI_2,
                        3.0 * std::f64::consts::FRAC_PI_2,
                        r,
                    ),
                ];
                for (f, t0, t1, speed) in pieces.iter() {
                    let dt = (t1 - t0) / panels_per_piece as f64;
                    for k in 0..panels_per_piece {
                        let a0 = t0 + k as f64 * dt;
                        push_panel(f.as_ref(), a0, a0 + dt, *speed);
                    }
                }
                out
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundaryNode {
    pub x: Vec2,
    pub normal: Vec2,
    pub weight: f64,
}

fn ellipse_closest(a: f64, b: f64, x: Vec2) -> Result<Projection> {
    let sx = if x[0] < 0.0 { -1.0 } else { 1.0 };
    let sy = if x[1] < 0.0 { -1.0 } else { 1.0 };
    let y1 = x[0].abs();
    let y2 = x[1].abs();
    let e = a * a - b * b;
    let inside = (y1 / a).powi(2) + (y2 / b).powi(2) < 1.0;

    let (p1, p2, on_ridge) = if y2 <= RIDGE_TOL {
        if a == b && y1 <= RIDGE_TOL {
            (0.0, b, true)
        } else if y1 < e / a {
            let p1 = a * a * y1 / e;
            let p2 = b * (1.0 - (p1 / a).powi(2)).max(0.0).sqrt();
            (p1, p2, true)
        } else {
            (a, 0.0, false)
        }
    } else {
        let tau = ellipse_root(a, b, y1, y2).ok_or(Error::NoConvergence {
            x: x[0],
            y: x[1],
            iterations: PROJ_MAX_ITER,
        })?;
        (a * a * y1 / (tau + e), b * b * y2 / tau, false)
    };

    let nrm = [p1 / (a * a), p2 / (b * b)];
    let len = geom::norm(nrm);
    let dist = (y1 - p1).hypot(y2 - p2);
    Ok(Projection {
        point: [sx * p1, sy * p2],
        normal: [sx * nrm[0] / len, sy * nrm[1] / len],
        signed_distance: if inside { dist } else { -dist },
        on_ridge,
    })
}

/// Root `τ = t + b²` of the Lagrange condition
/// `(a y₁ / (τ + a² − b²))² + (b y₂ / τ)² = 1` for `y₂ > 0`, `y₁ ≥ 0`.
///
/// The left-hand side is convex and decreasing in `τ`, so Newton started at a
/// lower bound increases monotonically to the root; bisection guards the bracket.
fn ellipse_root(a: f64, b: f64, y1: f64, y2: f64) -> Option<f64> {
    let e = a * a - b * b;
    let ay = a * y1;
    let by = b * y2;
    let f = |t: f64| (ay / (t + e)).powi(2) + (by / t).powi(2) - 1.0;
    let df = |t: f64| -2.0 * ay * ay / (t + e).powi(3) - 2.0 * by * by / t.powi(3);
    let mut lo = by.max(ay - e);
    let mut hi = ay.hypot(by);
    if hi <= lo {
        return Some(lo);
    }
    let mut t = lo;
    for _ in 0..PROJ_MAX_ITER {
        let ft = f(t);
        if ft == 0.0 {
            return Some(t);
        }
        if ft > 0.0 {
            lo = t;
        } else {
            hi = t;
        }
        let mut next = t - ft / df(t);
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() <= PROJ_TOL * 1e-3 * t.max(1e-300) || hi - lo <= PROJ_TOL * 1e-3 * t {
            return Some(next);
        }
        t = next;
    }
    None
}

fn stadium_closest(length: f64, radius: f64, x: Vec2) -> Projection {
    let q = [x[0].clamp(0.0, length), 0.0];
    let v = geom::sub(x, q);
    let d = geom::norm(v);
    let on_segment = x[0] >= 0.0 && x[0] <= length;
    let (normal, on_ridge) = if x[1].abs() <= RIDGE_TOL && (on_segment || d <= RIDGE_TOL) {
        ([0.0, if x[1] < 0.0 { -1.0 } else { 1.0 }], true)
    } else {
        (geom::scale(v, 1.0 / d), false)
    };
    Projection {
        point: geom::add(q, geom::scale(normal, radius)),
        normal,
        signed_distance: radius - d,
        on_ridge,
    }
}

/// Traces of the limit field at a point of the ridge.
///
/// With `n = (0, 1)` pointing to the upper side, `m⁺` is the upper trace and
/// the pair is written `m± = e^{i(s̄ ± β)}` with `β ∈ (0, π)`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct RidgePoint {
    pub x: Vec2,
    pub normal: Vec2,
    pub m_plus: Vec2,
    pub m_minus: Vec2,
    pub beta: f64,
    pub s_bar: f64,
}

impl RidgePoint {
    /// Build from the two traces; `β` is half the counter-clockwise angle from
    /// `m⁻` to `m⁺`.
    pub fn from_traces(x: Vec2, normal: Vec2, m_plus: Vec2, m_minus: Vec2) -> Self {
        let a_plus = geom::angle_of(m_plus);
        let a_minus = geom::angle_of(m_minus);
        let beta = 0.5 * geom::wrap_angle(a_plus - a_minus);
        RidgePoint {
            x,
            normal,
            m_plus,
            m_minus,
            beta,
            s_bar: geom::wrap_angle(a_minus + beta),
        }
    }

    /// Half the angle between the two traces, in `(0, π/2]`.
    pub fn half_angle(&self) -> f64 {
        self.beta.min(std::f64::consts::PI - self.beta)
    }

    /// `|m⁺ − m⁻| = 2 sin β`.
    pub fn jump_magnitude(&self) -> f64 {
        geom::norm(geom::sub(self.m_plus, self.m_minus))
    }
}

/// The jump set of `∇ū`: a horizontal segment on the major axis.
#[derive(Clone, Copy, Debug)]
pub struct RidgeSet {
    domain: Domain,
    pub p_minus: Vec2,
    pub p_plus: Vec2,
}

impl RidgeSet {
    pub fn new(domain: Domain) -> Self {
        let (p_minus, p_plus) = match domain.kind {
            DomainKind::Ellipse { a, b } => {
                let c = (a * a - b * b) / a;
                ([-c, 0.0], [c, 0.0])
            }
            DomainKind::Stadium { length, .. } => ([0.0, 0.0], [length, 0.0]),
        };
        RidgeSet { domain, p_minus, p_plus }
    }

    pub fn length(&self) -> f64 {
        self.p_plus[0] - self.p_minus[0]
    }

    pub fn is_degenerate(&self) -> bool {
        self.length() <= 0.0
    }

    /// Distance from `x` to the closed segment.
    pub fn distance(&self, x: Vec2) -> f64 {
        let q = [x[0].clamp(self.p_minus[0], self.p_plus[0]), 0.0];
        geom::norm(geom::sub(x, q))
    }

    /// Traces at `(x1, 0)` for `x1` in the open segment.
    pub fn point(&self, x1: f64) -> Option<RidgePoint> {
        if !(x1 > self.p_minus[0] && x1 < self.p_plus[0]) {
            return None;
        }
        let x = [x1, 0.0];
        let up = self.domain.closest([x1, 0.0]).ok()?;
        let down = self.domain.closest([x1, -f64::MIN_POSITIVE]).ok()?;
        let m_plus = geom::perp(geom::scale(up.normal, -1.0));
        let m_minus = geom::perp(geom::scale(down.normal, -1.0));
        Some(RidgePoint::from_traces(x, [0.0, 1.0], m_plus, m_minus))
    }

    /// Sample `n` points at the midpoints of a uniform partition.
    pub fn sample(&self, n: usize) -> Vec<RidgePoint> {
        let len = self.length();
        (0..n)
            .filter_map(|k| self.point(self.p_minus[0] + (k as f64 + 0.5) / n as f64 * len))
            .collect()
    }
}

/// `ū^δ` and `m̄ = ∇⊥ū^δ` at every node of the grid (ridge nodes take the value
/// from their own side, upper on the axis).
pub fn exact_limit_field(domain: &Domain, grid: &std::sync::Arc<Grid>) -> Result<(ScalarField, VectorField)> {
    use rayon::prelude::*;
    let vals: Vec<(f64, Vec2)> = (0..grid.len())
        .into_par_iter()
        .map(|k| {
            let p = domain.closest(grid.node(k))?;
            Ok((p.signed_distance, geom::perp(geom::scale(p.normal, -1.0))))
        })
        .collect::<Result<_>>()?;
    let u = ScalarField::from_vec(grid.clone(), vals.iter().map(|v| v.0).collect());
    let m = VectorField::from_vec(grid.clone(), vals.iter().map(|v| v.1).collect());
    Ok((u, m))
}
