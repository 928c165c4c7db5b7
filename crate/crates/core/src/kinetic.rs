//! Kinetic description of unit divergence-free fields: the indicator `χ`, the
//! explicit densities `g_β` and `ḡ_β`, measures on the circle, minimal
//! disintegrations along the ridge and the weak kinetic residual.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Domain, Grid, RidgeSet};
use crate::entropy::{entropy_from_generator, jump_bracket, Entropy, EntropyGenerator, Frame};
use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::geom::{self, Vec2};
use crate::quad::{adaptive_simpson_pieces, GaussRule};

/// `|e^{is}·m|` at or below this counts as a tie and gives `χ = 0`.
pub const CHI_TIE: f64 = 1e-14;

const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// `χ(x, s) = 1{e^{is}·m(x) > 0}` sampled at `s_j = 2πj/N_s`.
#[derive(Clone, Debug)]
pub struct KineticSample {
    pub grid: Arc<Grid>,
    pub n_s: usize,
    bits: Vec<bool>,
    ties: Vec<bool>,
}

impl KineticSample {
    pub fn angle(&self, j: usize) -> f64 {
        TAU * j as f64 / self.n_s as f64
    }

    pub fn chi(&self, k: usize, j: usize) -> bool {
        self.bits[k * self.n_s + j]
    }

    pub fn is_tie(&self, k: usize, j: usize) -> bool {
        self.ties[k * self.n_s + j]
    }

    /// `L¹({s: χ(x_k, s) = 1})` by counting samples.
    pub fn measure(&self, k: usize) -> f64 {
        let ones = (0..self.n_s).filter(|&j| self.chi(k, j)).count();
        TAU * ones as f64 / self.n_s as f64
    }

    /// Number of samples where neither `s` nor `s + π` is a tie and
    /// `χ(s) + χ(s + π) ≠ 1`.
    pub fn antipodal_violations(&self) -> usize {
        let half = self.n_s / 2;
        (0..self.grid.len())
            .map(|k| {
                (0..half)
                    .filter(|&j| {
                        !self.is_tie(k, j)
                            && !self.is_tie(k, j + half)
                            && (self.chi(k, j) as u8 + self.chi(k, j + half) as u8) != 1
                    })
                    .count()
            })
            .sum()
    }
}

/// Threshold `e^{is}·m` on `n_s` equispaced angles.
pub fn chi_sample(m: &VectorField, n_s: usize) -> Result<KineticSample> {
    if n_s == 0 || n_s % 2 != 0 {
        return Err(Error::InvalidArgument(format!("angle count {n_s} must be even and positive")));
    }
    let dirs: Vec<Vec2> = (0..n_s).map(|j| geom::unit(TAU * j as f64 / n_s as f64)).collect();
    let per_node: Vec<(Vec<bool>, Vec<bool>)> = m
        .values
        .par_iter()
        .map(|&v| {
            let dots: Vec<f64> = dirs.iter().map(|&e| geom::dot(e, v)).collect();
            (dots.iter().map(|&d| d > CHI_TIE).collect(), dots.iter().map(|&d| d.abs() <= CHI_TIE).collect())
        })
        .collect();
    let mut bits = Vec::with_capacity(m.values.len() * n_s);
    let mut ties = Vec::with_capacity(m.values.len() * n_s);
    for (b, t) in per_node {
        bits.extend(b);
        ties.extend(t);
    }
    Ok(KineticSample { grid: m.grid.clone(), n_s, bits, ties })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < PI {
        Ok(())
    } else {
        Err(Error::BetaOutOfRange(beta))
    }
}

/// `g_β(s) = (sin s − cos β) 1_{[π/2−β, π/2+β]}(s) − (2/π)(sin β − β cos β)`
/// on `[0, π]`, extended π-periodically.
pub fn g_beta(beta: f64, s: f64) -> Result<f64> {
    check_beta(beta)?;
    let t = s.rem_euclid(PI);
    let bump = if (t - FRAC_PI_2).abs() <= beta { t.sin() - beta.cos() } else { 0.0 };
    Ok(bump - 2.0 / PI * (beta.sin() - beta * beta.cos()))
}

/// `sin t − cos β` written as a product, free of cancellation near `t = π/2`.
fn bump_value(beta: f64, t: f64) -> f64 {
    let u = t - FRAC_PI_2;
    2.0 * (0.5 * (beta + u)).sin() * (0.5 * (beta - u)).sin()
}

/// Unnormalized `ḡ_β / c(β)` on `[0, π]` for `β ∈ (0, π/2]`.
fn gbar_shape(beta: f64, t: f64) -> f64 {
    let bump = if (t - FRAC_PI_2).abs() <= beta { bump_value(beta, t) } else { 0.0 };
    if beta <= FRAC_PI_4 {
        bump
    } else {
        bump + beta.cos() - SQRT_HALF
    }
}

/// Reduce `β ∈ (0, π)` to the representative in `(0, π/2]`.
fn fold_beta(beta: f64) -> f64 {
    if beta > FRAC_PI_2 {
        PI - beta
    } else {
        beta
    }
}

/// `c(β)` from `∫₀^{2π} |ḡ_β| = 1` by adaptive quadrature.
pub fn c_beta(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    Ok(1.0 / shape_mass(fold_beta(beta))?)
}

/// `∫₀^{2π} |ḡ_β / c(β)|` for `β ∈ (0, π/2]`.
fn shape_mass(b: f64) -> Result<f64> {
    let mut breaks = vec![0.0, FRAC_PI_4, FRAC_PI_2 - b, FRAC_PI_2, FRAC_PI_2 + b, 3.0 * FRAC_PI_4, PI];
    breaks.iter_mut().for_each(|x| *x = x.clamp(0.0, PI));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let scale = b.powi(3).max(1e-300);
    let half = adaptive_simpson_pieces(|t| gbar_shape(b, t).abs(), &breaks, 1e-14 * scale)?;
    Ok(2.0 * half)
}

/// Tabulated `k(β)/β³` with `k = 1/c`, on `[0, π/4]` and `[π/4, π/2]`.
struct CTable {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

const C_TABLE_INTERVALS: usize = 2048;

fn c_table() -> &'static CTable {
    static TABLE: OnceLock<CTable> = OnceLock::new();
    TABLE.get_or_init(|| {
        let step = FRAC_PI_4 / C_TABLE_INTERVALS as f64;
        let node = |b: f64| {
            if b == 0.0 {
                4.0 / 3.0
            } else {
                shape_mass(b).map(|k| k / b.powi(3)).unwrap_or(f64::NAN)
            }
        };
        let lower = (0..=C_TABLE_INTERVALS).map(|i| node(i as f64 * step)).collect();
        let upper = (0..=C_TABLE_INTERVALS).map(|i| node(FRAC_PI_4 + i as f64 * step)).collect();
        CTable { lower, upper }
    })
}

/// Cubic Lagrange interpolation through the four nodes nearest to `t` (in
/// units of the table step).
fn cubic(values: &[f64], t: f64) -> f64 {
    let n = values.len() - 1;
    let i = (t.floor() as isize).clamp(1, n as isize - 2) as usize;
    let x = t - i as f64;
    let (p0, p1, p2, p3) = (values[i - 1], values[i], values[i + 1], values[i + 2]);
    p0 * (-x * (x - 1.0) * (x - 2.0) / 6.0)
        + p1 * ((x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0)
        + p2 * (-(x + 1.0) * x * (x - 2.0) / 2.0)
        + p3 * ((x + 1.0) * x * (x - 1.0) / 6.0)
}

/// `c(β)` from the cached table; for evaluation at many ridge points.
pub fn c_beta_interp(beta: f64) -> Result<f64> {
    check_beta(beta)?;
    let b = fold_beta(beta);
    let table = c_table();
    let step = FRAC_PI_4 / C_TABLE_INTERVALS as f64;
    let q = if b <= FRAC_PI_4 { cubic(&table.lower, b / step) } else { cubic(&table.upper, (b - FRAC_PI_4) / step) };
    Ok(1.0 / (q * b.powi(3)))
}

/// Density `amp · sin(s − phase) + offset` on `[s0, s1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Piece {
    pub s0: f64,
    pub s1: f64,
    pub amp: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Piece {
    pub fn value(&self, s: f64) -> f64 {
        self.amp * (s - self.phase).sin() + self.offset
    }

    pub fn slope(&self, s: f64) -> f64 {
        self.amp * (s - self.phase).cos()
    }

    fn antiderivative(&self, s: f64) -> f64 {
        -self.amp * (s - self.phase).cos() + self.offset * s
    }

    /// `∫_{s0}^{s1} |density|`, split at the zeros of the sinusoid.
    fn abs_integral(&self) -> f64 {
        let mut cuts = vec![self.s0];
        if self.amp != 0.0 {
            let r = -self.offset / self.amp;
            if r.abs() <= 1.0 {
                let a0 = r.asin();
                for base in [self.phase + a0, self.phase + PI - a0] {
                    let k0 = ((self.s0 - base) / TAU).floor() as i64;
                    let k1 = ((self.s1 - base) / TAU).ceil() as i64;
                    for k in k0..=k1 {
                        let z = base + TAU * k as f64;
                        if z > self.s0 && z < self.s1 {
                            cuts.push(z);
                        }
                    }
                }
            }
        }
        cuts.push(self.s1);
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2).map(|w| (self.antiderivative(w[1]) - self.antiderivative(w[0])).abs()).sum()
    }

    /// Minimum of the slope over `[a, b] ⊂ [s0, s1]`.
    fn min_slope(&self, a: f64, b: f64) -> f64 {
        let mut m = self.slope(a).min(self.slope(b));
        if self.amp != 0.0 {
            // Extremes of cos(s − phase) sit at phase + kπ.
            let k0 = ((a - self.phase) / PI).ceil() as i64;
            let k1 = ((b - self.phase) / PI).floor() as i64;
            for k in k0..=k1 {
                m = m.min(self.slope(self.phase + PI * k as f64));
            }
        }
        m
    }
}

/// Signed measure on `ℝ/2πℤ`: atoms plus a piecewise sinusoidal density whose
/// pieces partition `[0, 2π)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(into = "CircleMeasureJson", try_from = "CircleMeasureJson")]
pub struct CircleMeasure {
    pub atoms: Vec<(f64, f64)>,
    pub pieces: Vec<Piece>,
}

#[derive(Serialize, Deserialize)]
struct PieceJson {
    s0: f64,
    s1: f64,
    kind: String,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CircleMeasureJson {
    atoms: Vec<[f64; 2]>,
    pieces: Vec<PieceJson>,
}

impl From<CircleMeasure> for CircleMeasureJson {
    fn from(m: CircleMeasure) -> Self {
        CircleMeasureJson {
            atoms: m.atoms.iter().map(|&(s, w)| [s, w]).collect(),
            pieces: m
                .pieces
                .iter()
                .map(|p| {
                    if p.amp == 0.0 {
                        PieceJson { s0: p.s0, s1: p.s1, kind: "constant".into(), params: vec![p.offset] }
                    } else {
                        PieceJson { s0: p.s0, s1: p.s1, kind: "sinusoid".into(), params: vec![p.amp, p.phase, p.offset] }
                    }
                })
                .collect(),
        }
    }
}

impl TryFrom<CircleMeasureJson> for CircleMeasure {
    type Error = String;

    fn try_from(j: CircleMeasureJson) -> std::result::Result<Self, String> {
        let pieces = j
            .pieces
            .into_iter()
            .map(|p| match (p.kind.as_str(), p.params.as_slice()) {
                ("constant", [c]) => Ok(Piece { s0: p.s0, s1: p.s1, amp: 0.0, phase: 0.0, offset: *c }),
                ("sinusoid", [a, ph, c]) => Ok(Piece { s0: p.s0, s1: p.s1, amp: *a, phase: *ph, offset: *c }),
                (k, v) => Err(format!("piece kind {k:?} with {} parameters", v.len())),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        if pieces.windows(2).any(|w| w[0].s1 != w[1].s0 || w[0].s0 > w[0].s1) {
            return Err("pieces must be sorted and contiguous".into());
        }
        Ok(CircleMeasure { atoms: j.atoms.iter().map(|a| (a[0], a[1])).collect(), pieces })
    }
}

impl CircleMeasure {
    pub fn zero() -> Self {
        CircleMeasure { atoms: vec![], pieces: vec![] }
    }

    /// Constant density `value · L¹`.
    pub fn uniform(value: f64) -> Self {
        CircleMeasure { atoms: vec![], pieces: vec![Piece { s0: 0.0, s1: TAU, amp: 0.0, phase: 0.0, offset: value }] }
    }

    pub fn from_atoms(atoms: Vec<(f64, f64)>) -> Self {
        let mut atoms: Vec<(f64, f64)> = atoms.into_iter().map(|(s, w)| (geom::wrap_angle(s), w)).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        CircleMeasure { atoms, pieces: vec![] }
    }

    /// Density with breakpoints `breaks` (any order, reduced mod 2π); the
    /// parameters `(amp, phase, offset)` of each interval come from `params`
    /// evaluated at its midpoint.
    fn from_breaks<F: Fn(f64) -> (f64, f64, f64)>(breaks: &[f64], params: F) -> Self {
        let mut cuts: Vec<f64> = breaks.iter().map(|&b| geom::wrap_angle(b)).collect();
        cuts.push(0.0);
        cuts.push(TAU);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
        let pieces = cuts
            .windows(2)
            .map(|w| {
                let (amp, phase, offset) = params(0.5 * (w[0] + w[1]));
                Piece { s0: w[0], s1: w[1], amp, phase, offset }
            })
            .collect();
        CircleMeasure { atoms: vec![], pieces }
    }

    /// Density at `s`; atoms are ignored.
    pub fn density(&self, s: f64) -> f64 {
        let s = geom::wrap_angle(s);
        let i = self.pieces.partition_point(|p| p.s1 <= s);
        self.pieces.get(i).map_or(0.0, |p| p.value(s))
    }

    /// Total variation: atom weights plus `∫|density|`.
    pub fn tv(&self) -> f64 {
        let mut atoms = self.atoms.clone();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::new();
        for (s, w) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == s => last.1 += w,
                _ => merged.push((s, w)),
            }
        }
        merged.iter().map(|a| a.1.abs()).sum::<f64>() + self.pieces.iter().map(Piece::abs_integral).sum::<f64>()
    }

    /// Total mass `μ(ℝ/2πℤ)`.
    pub fn total(&self) -> f64 {
        self.integrate(|_| 1.0)
    }

    /// `∫ f dμ` for smooth `f` (Gauss–Legendre on each piece).
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let rule = gauss_rule();
        let atoms: f64 = self.atoms.iter().map(|&(s, w)| w * f(s)).sum();
        atoms + self.pieces.iter().map(|p| rule.integrate(|s| f(s) * p.value(s), p.s0, p.s1)).sum::<f64>()
    }

    /// `μ + α L¹`.
    pub fn add_constant(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        if out.pieces.is_empty() {
            out.pieces = CircleMeasure::uniform(0.0).pieces;
        }
        out.pieces.iter_mut().for_each(|p| p.offset += alpha);
        out
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        out.atoms.iter_mut().for_each(|a| a.1 *= k);
        out.pieces.iter_mut().for_each(|p| {
            p.amp *= k;
            p.offset *= k;
        });
        out
    }

    /// Nonnegativity margin of `∂_s μ` on the open arc `(a, a + len)`: the
    /// minimum slope of the density there, and the number of singular
    /// violations (atoms or downward density jumps strictly inside the arc).
    pub fn slope_margin(&self, a: f64, len: f64) -> (f64, usize) {
        let mut margin = f64::INFINITY;
        let mut violations = 0;
        // Work on the unrolled circle [0, 4π) so the arc never wraps.
        let a = geom::wrap_angle(a);
        let b = a + len;
        let inside = |s: f64| (s > a && s < b) || (s + TAU > a && s + TAU < b);
        for turn in [0.0, TAU] {
            for p in &self.pieces {
                let lo = (p.s0 + turn).max(a);
                let hi = (p.s1 + turn).min(b);
                if lo < hi {
                    let shifted = Piece { phase: p.phase + turn, ..*p };
                    margin = margin.min(shifted.min_slope(lo, hi));
                }
            }
        }
        for w in self.pieces.windows(2) {
            let s = w[0].s1;
            if inside(s) && w[1].value(s) - w[0].value(s) < -1e-12 {
                violations += 1;
            }
        }
        if let (Some(first), Some(last)) = (self.pieces.first(), self.pieces.last()) {
            if inside(0.0) && first.value(0.0) - last.value(TAU) < -1e-12 {
                violations += 1;
            }
        }
        violations += self.atoms.iter().filter(|&&(s, w)| w != 0.0 && inside(s)).count();
        (margin, violations)
    }
}

fn gauss_rule() -> &'static GaussRule {
    static RULE: OnceLock<GaussRule> = OnceLock::new();
    RULE.get_or_init(|| GaussRule::new(32))
}

/// `ḡ_β(· − s̄)` with a given normalization constant.
fn gbar_shifted(beta: f64, s_bar: f64, c: f64) -> CircleMeasure {
    let b = fold_beta(beta);
    let background = if b <= FRAC_PI_4 { 0.0 } else { c * (b.cos() - SQRT_HALF) };
    let breaks: Vec<f64> = [FRAC_PI_2 - b, FRAC_PI_2 + b, 3.0 * FRAC_PI_2 - b, 3.0 * FRAC_PI_2 + b]
        .iter()
        .map(|t| t + s_bar)
        .collect();
    CircleMeasure::from_breaks(&breaks, |mid| {
        let u = geom::wrap_angle(mid - s_bar);
        let t = u.rem_euclid(PI);
        if (t - FRAC_PI_2).abs() <= b {
            // sin(u) on [0, π) and sin(u − π) = −sin(u) on [π, 2π).
            let amp = if u < PI { c } else { -c };
            (amp, s_bar, background - c * b.cos())
        } else {
            (0.0, 0.0, background)
        }
    })
}

/// `ḡ_β` as a density on the circle, normalized by quadrature.
pub fn gbar_beta(beta: f64) -> Result<CircleMeasure> {
    Ok(gbar_shifted(beta, 0.0, c_beta(beta)?))
}

/// Pointwise `ḡ_β(s)`.
pub fn gbar_beta_value(beta: f64, s: f64) -> Result<f64> {
    let b = fold_beta(beta);
    Ok(c_beta(beta)? * gbar_shape(b, s.rem_euclid(PI)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disintegration {
    Jump { beta: f64, s_bar: f64 },
    NonJump { s_bar: f64, sign: f64 },
}

/// Minimal disintegration: `ḡ_β(s − s̄) L¹` at a jump, the pair of atoms
/// `±(1/2)(δ_{s̄−π/2} + δ_{s̄+π/2})` elsewhere.
pub fn minimal_disintegration(kind: Disintegration) -> Result<CircleMeasure> {
    match kind {
        Disintegration::Jump { beta, s_bar } => Ok(gbar_shifted(beta, s_bar, c_beta(beta)?)),
        Disintegration::NonJump { s_bar, sign } => {
            let w = 0.5 * sign.signum();
            Ok(CircleMeasure::from_atoms(vec![(s_bar - FRAC_PI_2, w), (s_bar + FRAC_PI_2, w)]))
        }
    }
}

/// The factorized variant `±(1/4)(δ_{s̄} + δ_{s̄+π} − (1/π) L¹)`.
pub fn factorized_variant(s_bar: f64, sign: f64) -> CircleMeasure {
    let w = 0.25 * sign.signum();
    let mut m = CircleMeasure::from_atoms(vec![(s_bar, w), (s_bar + PI, w)]);
    m.pieces = CircleMeasure::uniform(-w / PI).pieces;
    m
}

/// Additive constants tried by [`minimality_check`] by default.
pub const DEFAULT_ALPHAS: [f64; 8] = [0.001, -0.001, 0.01, -0.01, 0.1, -0.1, 1.0, -1.0];

/// `‖μ + αL¹‖ ≥ ‖μ‖ − 1e−10` for every sampled `α`.
pub fn minimality_check(mu: &CircleMeasure, alphas: &[f64]) -> bool {
    let base = mu.tv();
    alphas.iter().all(|&a| mu.add_constant(a).tv() >= base - 1e-10)
}

/// `e₁·(Φ(e^{iβ}) − Φ(e^{−iβ}))` from the generated entropy and
/// `−∫₀^{2π} g_β ψ'` by adaptive quadrature.
pub fn jump_identity_check(beta: f64, gen: &EntropyGenerator) -> Result<(f64, f64)> {
    if !(0.0..=FRAC_PI_2).contains(&beta) {
        return Err(Error::BetaOutOfRange(beta));
    }
    if !gen.pi_periodic() {
        return Err(Error::InvalidArgument("generator must be π-periodic".into()));
    }
    let phi = entropy_from_generator(gen)?;
    let lhs = phi.on_circle(beta)[0] - phi.on_circle(-beta)[0];
    if beta == 0.0 {
        return Ok((lhs, 0.0));
    }
    let mut breaks = vec![0.0, PI, TAU, FRAC_PI_2 - beta, FRAC_PI_2 + beta, 3.0 * FRAC_PI_2 - beta, 3.0 * FRAC_PI_2 + beta];
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let integrand = |s: f64| g_beta(beta, s).unwrap_or(f64::NAN) * gen.derivative(s);
    let rhs = -adaptive_simpson_pieces(integrand, &breaks, 1e-13)?;
    Ok((lhs, rhs))
}

/// One node of a kinetic field: `weight · mass · measure` carried by the
/// ridge segment inside the node's cell.
#[derive(Clone, Debug, Serialize)]
pub struct KineticEntry {
    pub node: usize,
    /// Point of the ridge where the traces are taken.
    pub x: Vec2,
    /// Length of ridge inside the cell.
    pub mass: f64,
    /// Signed scale per unit length, calibrated on the `Σ_e` bracket.
    pub weight: f64,
    pub normal: Vec2,
    pub beta: f64,
    pub s_bar: f64,
    pub measure: CircleMeasure,
}

impl KineticEntry {
    /// `∫ ψ' dσ_x` per unit length, including the weight.
    pub fn pairing(&self, gen: &EntropyGenerator) -> f64 {
        self.weight * self.measure.integrate(|s| gen.derivative(s))
    }
}

/// Node-indexed kinetic measure; nodes without an entry carry zero.
#[derive(Clone, Debug, Serialize)]
pub struct KineticField {
    pub entries: Vec<KineticEntry>,
}

impl KineticField {
    pub fn empty() -> Self {
        KineticField { entries: vec![] }
    }

    /// Minimal disintegrations along the ridge of the limit field: the grid
    /// row nearest the ridge line carries, in each cell, the ridge length
    /// inside it times `ḡ_β(· − s̄)`, scaled so that the `Σ_e` pairing
    /// reproduces `n·(Σ_e(m⁺) − Σ_e(m⁻))`.
    pub fn ridge(domain: &Domain, grid: &Grid) -> Result<Self> {
        let ridge: RidgeSet = domain.ridge();
        if ridge.is_degenerate() {
            return Ok(Self::empty());
        }
        let h = grid.h;
        let j0 = ((ridge.p_minus[1] - grid.origin[1]) / h).round();
        if j0 < 0.0 || j0 as usize >= grid.ny {
            return Err(Error::InvalidArgument("grid does not reach the ridge".into()));
        }
        let j0 = j0 as usize;
        let e_gen = Frame::E.generator();
        let entries = (0..grid.nx)
            .into_par_iter()
            .filter_map(|i| {
                let x1 = grid.origin[0] + i as f64 * h;
                let lo = (x1 - 0.5 * h).max(ridge.p_minus[0]);
                let hi = (x1 + 0.5 * h).min(ridge.p_plus[0]);
                if hi <= lo {
                    return None;
                }
                let p = ridge.point(0.5 * (lo + hi))?;
                Some((i, lo, hi, p))
            })
            .map(|(i, lo, hi, p)| {
                let c = c_beta_interp(p.beta)?;
                let measure = gbar_shifted(p.beta, p.s_bar, c);
                let bracket = jump_bracket(&Frame::E, p.normal, p.m_plus, p.m_minus);
                let pairing = measure.integrate(|s| e_gen.derivative(s));
                let weight = if pairing.abs() > 1e-300 { -bracket / pairing } else { 0.0 };
                Ok(KineticEntry {
                    node: grid.index(i, j0),
                    x: p.x,
                    mass: hi - lo,
                    weight,
                    normal: p.normal,
                    beta: p.beta,
                    s_bar: p.s_bar,
                    measure,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(KineticField { entries })
    }
}

/// Compactly supported test function `(1 − r²/R²)³`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec2,
    pub radius: f64,
}

impl Bump {
    pub fn value(&self, x: Vec2) -> f64 {
        let q = 1.0 - geom::dot(geom::sub(x, self.center), geom::sub(x, self.center)) / (self.radius * self.radius);
        if q > 0.0 {
            q.powi(3)
        } else {
            0.0
        }
    }

    pub fn gradient(&self, x: Vec2) -> Vec2 {
        let d = geom::sub(x, self.center);
        let r2 = self.radius * self.radius;
        let q = 1.0 - geom::dot(d, d) / r2;
        if q > 0.0 {
            geom::scale(d, -6.0 * q * q / r2)
        } else {
            [0.0, 0.0]
        }
    }
}

/// Pairs of spatial bumps and angular generators.
#[derive(Clone, Debug, Serialize)]
pub struct TestBank {
    pub bumps: Vec<Bump>,
    pub generators: Vec<EntropyGenerator>,
}

impl TestBank {
    /// `cos 2s, sin 2s, cos 4s, sin 4s`.
    pub fn low_even_generators() -> Vec<EntropyGenerator> {
        vec![EntropyGenerator::cos_k(2), EntropyGenerator::sin_k(2), EntropyGenerator::cos_k(4), EntropyGenerator::sin_k(4)]
    }

    /// Bumps centered on the ridge at 25%, 50% and 80% of its length with
    /// radius half the smaller half-extent; falls back to the domain center.
    pub fn ridge_default(domain: &Domain) -> Self {
        let ridge = domain.ridge();
        let half = domain.half_extents();
        let radius = 0.5 * half[0].min(half[1]);
        let bumps = if ridge.is_degenerate() {
            vec![Bump { center: domain.center(), radius }]
        } else {
            [0.25, 0.5, 0.8]
                .iter()
                .map(|f| Bump { center: [ridge.p_minus[0] + f * ridge.length(), ridge.p_minus[1]], radius })
                .collect()
        };
        TestBank { bumps, generators: Self::low_even_generators() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualEntry {
    pub bump: usize,
    pub generator: usize,
    /// `∫ Φ(m)·∇ζ dx`.
    pub flux_term: f64,
    /// `∫ ζ ψ' dσ`.
    pub kinetic_term: f64,
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResidualReport {
    pub h: f64,
    pub max: f64,
    pub entries: Vec<ResidualEntry>,
}

/// `max |∫Φ(m)·∇ζ − ∫ζ ψ' dσ|` over the bank, with `Φ` generated by `ψ`.
/// The flux term uses nodal quadrature over all grid nodes.
pub fn kinetic_residual(m: &VectorField, sigma: &KineticField, bank: &TestBank) -> Result<ResidualReport> {
    let g = &*m.grid;
    let h2 = g.h * g.h;
    let maps = bank.generators.iter().map(entropy_from_generator).collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for (bi, bump) in bank.bumps.iter().enumerate() {
        for (gi, (gen, phi)) in bank.generators.iter().zip(&maps).enumerate() {
            let per_node: Vec<f64> = (0..g.len())
                .into_par_iter()
                .map(|k| {
                    let x = g.node(k);
                    let grad = bump.gradient(x);
                    if grad == [0.0, 0.0] {
                        0.0
                    } else {
                        geom::dot(phi.eval(m.values[k]), grad)
                    }
                })
                .collect();
            let flux_term = h2 * per_node.iter().sum::<f64>();
            let kinetic_term: f64 = sigma.entries.iter().map(|e| e.mass * bump.value(e.x) * e.pairing(gen)).sum();
            entries.push(ResidualEntry {
                bump: bi,
                generator: gi,
                flux_term,
                kinetic_term,
                residual: (flux_term - kinetic_term).abs(),
            });
        }
    }
    let max = entries.iter().map(|e| e.residual).fold(0.0, f64::max);
    Ok(ResidualReport { h: g.h, max, entries })
}

/// Normals within this angle of a coordinate axis count as axis-aligned.
pub const AXIS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, Serialize)]
pub struct SignStructureReport {
    /// Minimum slope of the signed density on `(0, π/2) ∪ (π, 3π/2)`.
    pub margin_absolute: f64,
    /// Minimum slope of the unweighted profile on `(s̄, s̄ + π/2) ∪ (s̄ + π, s̄ + 3π/2)`.
    pub margin_shifted: f64,
    /// Atoms or downward jumps inside the absolute arcs.
    pub singular_violations: usize,
    pub entries: usize,
    pub axis_fraction: f64,
    pub vertical_fraction: f64,
}

impl SignStructureReport {
    pub fn nonnegative(&self, tol: f64) -> bool {
        self.margin_absolute >= -tol && self.singular_violations == 0
    }
}

fn arcs_margin(mu: &CircleMeasure, start: f64) -> (f64, usize) {
    let (m1, v1) = mu.slope_margin(start, FRAC_PI_2);
    let (m2, v2) = mu.slope_margin(start + PI, FRAC_PI_2);
    (m1.min(m2), v1 + v2)
}

/// Sign of `∂_s σ` on the quadrant arcs, and the axis census of the normals.
pub fn sign_structure_report(sigma: &KineticField) -> SignStructureReport {
    let mut margin_absolute = f64::INFINITY;
    let mut margin_shifted = f64::INFINITY;
    let mut singular_violations = 0;
    let mut axis = 0;
    let mut vertical = 0;
    for e in &sigma.entries {
        let signed = e.measure.scaled(e.weight);
        let (m, v) = arcs_margin(&signed, 0.0);
        margin_absolute = margin_absolute.min(m);
        singular_violations += v;
        margin_shifted = margin_shifted.min(arcs_margin(&e.measure, e.s_bar).0);
        let a = geom::angle_of(e.normal);
        let off_axis = (a - FRAC_PI_2 * (a / FRAC_PI_2).round()).abs();
        if off_axis <= AXIS_TOL {
            axis += 1;
            if e.normal[0].abs() < e.normal[1].abs() {
                vertical += 1;
            }
        }
    }
    let n = sigma.entries.len().max(1) as f64;
    SignStructureReport {
        margin_absolute,
        margin_shifted,
        singular_violations,
        entries: sigma.entries.len(),
        axis_fraction: axis as f64 / n,
        vertical_fraction: vertical as f64 / n,
    }
}

/// A single-entry field carrying `ḡ_β(· − s̄)` with unit weight at a jump whose
/// normal is `e^{is̄}`; with `s̄ = π/4` it models a jump off the axes.
pub fn tilted_jump_field(beta: f64, s_bar: f64) -> Result<KineticField> {
    Ok(KineticField {
        entries: vec![KineticEntry {
            node: 0,
            x: [0.0, 0.0],
            mass: 1.0,
            weight: 1.0,
            normal: geom::unit(s_bar),
            beta,
            s_bar,
            measure: minimal_disintegration(Disintegration::Jump { beta, s_bar })?,
        }],
    })
}
