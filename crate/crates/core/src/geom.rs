//! Small helpers for planar vectors stored as `[f64; 2]`.

use std::f64::consts::TAU;

pub type Vec2 = [f64; 2];

#[inline]
pub fn add(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] + b[0], a[1] + b[1]]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn scale(a: Vec2, k: f64) -> Vec2 {
    [a[0] * k, a[1] * k]
}

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// Counter-clockwise rotation by pi/2, so that `perp(∇u) = ∇⊥u = (−∂₂u, ∂₁u)`.
#[inline]
pub fn perp(a: Vec2) -> Vec2 {
    [-a[1], a[0]]
}

#[inline]
pub fn unit(angle: f64) -> Vec2 {
    [angle.cos(), angle.sin()]
}

#[inline]
pub fn rotate(a: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    [c * a[0] - s * a[1], s * a[0] + c * a[1]]
}

/// Angle in `[0, 2pi)`.
#[inline]
pub fn wrap_angle(s: f64) -> f64 {
    let r = s.rem_euclid(TAU);
    if r >= TAU {
        0.0
    } else {
        r
    }
}

#[inline]
pub fn angle_of(a: Vec2) -> f64 {
    wrap_angle(a[1].atan2(a[0]))
}
