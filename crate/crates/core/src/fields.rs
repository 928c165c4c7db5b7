//! Node-indexed fields on a [`Grid`] and the finite-difference calculus on them.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{Grid, NodeClass};
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Node subsets used for restrictions and sums.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Region {
    Interior,
    NonExterior,
    All,
}

impl Region {
    #[inline]
    pub fn contains(self, class: NodeClass) -> bool {
        match self {
            Region::Interior => class == NodeClass::Interior,
            Region::NonExterior => class != NodeClass::Exterior,
            Region::All => true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct VectorField {
    pub grid: Arc<Grid>,
    pub values: Vec<Vec2>,
}

/// Signed mass attached to the dual cell of every node.
#[derive(Clone, Debug)]
pub struct CellMeasure {
    pub grid: Arc<Grid>,
    pub mass: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Arc<Grid>) -> Self {
        let n = grid.len();
        ScalarField { grid, values: vec![0.0; n] }
    }

    pub fn from_vec(grid: Arc<Grid>, values: Vec<f64>) -> Self {
        assert_eq!(grid.len(), values.len(), "field length does not match grid");
        ScalarField { grid, values }
    }

    pub fn from_fn<F: Fn(Vec2) -> f64 + Sync>(grid: Arc<Grid>, f: F) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|k| f(grid.node(k))).collect();
        ScalarField { grid, values }
    }

    /// First derivatives at node `k`: centered, one-sided second order on
    /// the box edges.
    #[inline]
    pub fn gradient_at(&self, k: usize) -> Vec2 {
        let g = &*self.grid;
        let (i, j) = g.ij(k);
        let u = &self.values;
        [
            diff1(i, g.nx, g.h, |ii| u[j * g.nx + ii]),
            diff1(j, g.ny, g.h, |jj| u[jj * g.nx + i]),
        ]
    }

    /// Second derivatives `(u_xx, u_yy, u_xy)` at node `k`; zero on the box edges.
    #[inline]
    pub fn hessian_at(&self, k: usize) -> [f64; 3] {
        let g = &*self.grid;
        let (i, j) = g.ij(k);
        if i == 0 || j == 0 || i + 1 == g.nx || j + 1 == g.ny {
            return [0.0; 3];
        }
        let u = &self.values;
        let nx = g.nx;
        let h2 = g.h * g.h;
        let c = u[k];
        [
            (u[k + 1] - 2.0 * c + u[k - 1]) / h2,
            (u[k + nx] - 2.0 * c + u[k - nx]) / h2,
            (u[k + nx + 1] - u[k + nx - 1] - u[k - nx + 1] + u[k - nx - 1]) / (4.0 * h2),
        ]
    }

    pub fn sub(&self, other: &ScalarField) -> Result<ScalarField> {
        check_grid(&self.grid, &other.grid)?;
        Ok(ScalarField {
            grid: self.grid.clone(),
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        })
    }

    /// Write `i j x y value` lines in row-major order.
    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = self.grid.ij(k);
            let x = self.grid.node(k);
            writeln!(w, "{i} {j} {:.12e} {:.12e} {:.15e}", x[0], x[1], v)?;
        }
        Ok(())
    }

    /// Dump to `path` plus a JSON sidecar `path.json`.
    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.dump(f)?;
        write_sidecar(&self.grid, path, "scalar")
    }

    /// Read a dump written by [`ScalarField::dump`] onto `grid`.
    pub fn read_dump(grid: Arc<Grid>, path: &Path) -> Result<ScalarField> {
        let text = std::fs::read_to_string(path)?;
        let mut values = vec![f64::NAN; grid.len()];
        let mut seen = 0;
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.is_empty() {
                continue;
            }
            let bad = || Error::InvalidArgument(format!("{}:{}: expected `i j x y value`", path.display(), n + 1));
            if cols.len() != 5 {
                return Err(bad());
            }
            let i: usize = cols[0].parse().map_err(|_| bad())?;
            let j: usize = cols[1].parse().map_err(|_| bad())?;
            let v: f64 = cols[4].parse().map_err(|_| bad())?;
            if i >= grid.nx || j >= grid.ny {
                return Err(Error::GridMismatch);
            }
            values[grid.index(i, j)] = v;
            seen += 1;
        }
        if seen != grid.len() || values.iter().any(|v| v.is_nan()) {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField { grid, values })
    }
}

impl VectorField {
    pub fn from_vec(grid: Arc<Grid>, values: Vec<Vec2>) -> Self {
        assert_eq!(grid.len(), values.len(), "field length does not match grid");
        VectorField { grid, values }
    }

    pub fn from_fn<F: Fn(Vec2) -> Vec2 + Sync>(grid: Arc<Grid>, f: F) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|k| f(grid.node(k))).collect();
        VectorField { grid, values }
    }

    /// Pointwise image under `f`.
    pub fn map<F: Fn(Vec2) -> Vec2 + Sync>(&self, f: F) -> VectorField {
        VectorField {
            grid: self.grid.clone(),
            values: self.values.par_iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = self.grid.ij(k);
            let x = self.grid.node(k);
            writeln!(w, "{i} {j} {:.12e} {:.12e} {:.15e} {:.15e}", x[0], x[1], v[0], v[1])?;
        }
        Ok(())
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.dump(f)?;
        write_sidecar(&self.grid, path, "vector")
    }
}

impl CellMeasure {
    pub fn total(&self, region: Region) -> f64 {
        self.sum_where(|k| region.contains(self.grid.class(k)), |m| m)
    }

    /// Total variation `Σ |mass|` over the region.
    pub fn tv(&self, region: Region) -> f64 {
        self.sum_where(|k| region.contains(self.grid.class(k)), f64::abs)
    }

    /// Total variation over nodes selected by `keep`.
    pub fn tv_where<P: Fn(usize) -> bool>(&self, keep: P) -> f64 {
        self.sum_where(keep, f64::abs)
    }

    fn sum_where<P: Fn(usize) -> bool, G: Fn(f64) -> f64>(&self, keep: P, g: G) -> f64 {
        self.mass
            .iter()
            .enumerate()
            .filter(|(k, _)| keep(*k))
            .map(|(_, &m)| g(m))
            .sum()
    }

    pub fn dump<W: Write>(&self, mut w: W) -> Result<()> {
        for (k, v) in self.mass.iter().enumerate() {
            let (i, j) = self.grid.ij(k);
            let x = self.grid.node(k);
            writeln!(w, "{i} {j} {:.12e} {:.12e} {:.15e}", x[0], x[1], v)?;
        }
        Ok(())
    }

    pub fn write_dump(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.dump(f)?;
        write_sidecar(&self.grid, path, "cell_measure")
    }
}

fn write_sidecar(grid: &Grid, path: &Path, kind: &str) -> Result<()> {
    #[derive(Serialize)]
    struct Sidecar<'a> {
        kind: &'a str,
        nx: usize,
        ny: usize,
        h: f64,
        origin: Vec2,
        order: &'a str,
        domain: Option<crate::domain::Domain>,
    }
    let side = Sidecar {
        kind,
        nx: grid.nx,
        ny: grid.ny,
        h: grid.h,
        origin: grid.origin,
        order: "row-major, i fastest",
        domain: grid.domain().copied(),
    };
    let mut p = path.as_os_str().to_owned();
    p.push(".json");
    std::fs::write(p, serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

fn check_grid(a: &Arc<Grid>, b: &Arc<Grid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.same_shape(b) {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// Second-order first derivative along one axis of length `n` at index `i`.
#[inline]
fn diff1<F: Fn(usize) -> f64>(i: usize, n: usize, h: f64, u: F) -> f64 {
    if n < 3 {
        return 0.0;
    }
    if i == 0 {
        (-3.0 * u(0) + 4.0 * u(1) - u(2)) / (2.0 * h)
    } else if i + 1 == n {
        (3.0 * u(i) - 4.0 * u(i - 1) + u(i - 2)) / (2.0 * h)
    } else {
        (u(i + 1) - u(i - 1)) / (2.0 * h)
    }
}

pub fn fd_gradient(u: &ScalarField) -> VectorField {
    let values = (0..u.grid.len()).into_par_iter().map(|k| u.gradient_at(k)).collect();
    VectorField { grid: u.grid.clone(), values }
}

/// `∇⊥u = (−∂₂u, ∂₁u)`.
pub fn fd_perp_gradient(u: &ScalarField) -> VectorField {
    let values = (0..u.grid.len())
        .into_par_iter()
        .map(|k| crate::geom::perp(u.gradient_at(k)))
        .collect();
    VectorField { grid: u.grid.clone(), values }
}

/// Smoothed Frobenius norm `sqrt(|∇²u|² + η²) − η`.
#[inline]
pub fn smoothed_norm(hess: [f64; 3], eta: f64) -> f64 {
    let q = hess[0] * hess[0] + hess[1] * hess[1] + 2.0 * hess[2] * hess[2];
    if eta == 0.0 {
        q.sqrt()
    } else {
        // Written as q / (sqrt(q + η²) + η) to avoid cancellation for small q.
        q / ((q + eta * eta).sqrt() + eta)
    }
}

pub fn fd_hessian_norm(u: &ScalarField, eta: f64) -> ScalarField {
    let values = (0..u.grid.len())
        .into_par_iter()
        .map(|k| smoothed_norm(u.hessian_at(k), eta))
        .collect();
    ScalarField { grid: u.grid.clone(), values }
}

/// `h² Σ_region (|u − v| + |∇u − ∇v|)`.
pub fn w11_distance(u: &ScalarField, v: &ScalarField, region: Region) -> Result<f64> {
    let d = u.sub(v)?;
    let g = &*d.grid;
    let terms: Vec<f64> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            if region.contains(g.class(k)) {
                let gr = d.gradient_at(k);
                d.values[k].abs() + gr[0].hypot(gr[1])
            } else {
                0.0
            }
        })
        .collect();
    Ok(g.h * g.h * terms.iter().sum::<f64>())
}

// 1D element integrals on a cell of unit length: ∫φ_a φ_b' = ±1/2 by the sign
// of b, ∫φ_a φ_b = 1/3 (a = b) or 1/6.
const DM: [f64; 2] = [-0.5, 0.5];
const MM: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];

/// Distributional divergence of the bilinear interpolant of `f`: the mass at
/// node `p` is `−∫ F_h · ∇φ_p` with `φ_p` the bilinear hat function.
///
/// For affine `F` this is exactly `h² div F` at nodes away from the box edge;
/// the masses of the whole grid always sum to zero.
pub fn weak_divergence(f: &VectorField) -> CellMeasure {
    let g = &*f.grid;
    let (nx, ny, h) = (g.nx, g.ny, g.h);
    let mass = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let (i, j) = g.ij(k);
            let mut acc = 0.0;
            // Cells with lower-left corner (ci, cj) containing node (i, j).
            for (ci, pa) in [(i.wrapping_sub(1), 1usize), (i, 0usize)] {
                if ci >= nx - 1 {
                    continue;
                }
                for (cj, pb) in [(j.wrapping_sub(1), 1usize), (j, 0usize)] {
                    if cj >= ny - 1 {
                        continue;
                    }
                    for qb in 0..2 {
                        for qa in 0..2 {
                            let fq = f.values[(cj + qb) * nx + ci + qa];
                            acc += fq[0] * DM[pa] * MM[qb][pb] + fq[1] * MM[qa][pa] * DM[pb];
                        }
                    }
                }
            }
            -h * acc
        })
        .collect();
    CellMeasure { grid: f.grid.clone(), mass }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{exact_limit_field, Domain};
    use proptest::prelude::*;

    fn ellipse_grid(h: f64) -> (Domain, Arc<Grid>) {
        let d = Domain::ellipse(1.0, 0.5).unwrap();
        let g = Arc::new(Grid::covering(&d, h).unwrap());
        (d, g)
    }

    fn interior_nodes(g: &Grid) -> impl Iterator<Item = usize> + '_ {
        (0..g.len()).filter(move |&k| {
            let (i, j) = g.ij(k);
            i > 0 && j > 0 && i + 1 < g.nx && j + 1 < g.ny
        })
    }

    #[test]
    fn dump_reads_back() {
        let (_, g) = ellipse_grid(1.0 / 16.0);
        let (u, _) = exact_limit_field(&Domain::ellipse(1.0, 0.5).unwrap(), &g).unwrap();
        let path = std::env::temp_dir().join(format!("aglab_dump_{}.txt", std::process::id()));
        u.write_dump(&path).unwrap();
        let back = ScalarField::read_dump(g.clone(), &path).unwrap();
        for (a, b) in u.values.iter().zip(&back.values) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
        let other = Arc::new(Grid::covering(&Domain::ellipse(1.0, 0.5).unwrap(), 1.0 / 8.0).unwrap());
        assert!(matches!(ScalarField::read_dump(other, &path), Err(Error::GridMismatch)));
        let mut side = path.clone().into_os_string();
        side.push(".json");
        std::fs::remove_file(&path).unwrap();
        std::fs::remove_file(side).unwrap();
    }

    #[test]
    fn gradient_of_linear_is_exact() {
        let g = Arc::new(Grid::unit_square(12, 2));
        let u = ScalarField::from_fn(g.clone(), |x| x[0]);
        let gr = fd_gradient(&u);
        let pg = fd_perp_gradient(&u);
        for k in 0..g.len() {
            assert!((gr.values[k][0] - 1.0).abs() < 1e-12 && gr.values[k][1].abs() < 1e-12);
            assert!(pg.values[k][0].abs() < 1e-12 && (pg.values[k][1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_of_quadratic_is_exact() {
        let g = Arc::new(Grid::unit_square(10, 2));
        let u = ScalarField::from_fn(g.clone(), |x| 3.0 * x[0] * x[0] - x[0] * x[1] + 2.0 * x[1] * x[1]);
        let gr = fd_gradient(&u);
        for k in 0..g.len() {
            let x = g.node(k);
            let e = [6.0 * x[0] - x[1], -x[0] + 4.0 * x[1]];
            assert!((gr.values[k][0] - e[0]).abs() < 1e-10 && (gr.values[k][1] - e[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn hessian_norm_examples() {
        let g = Arc::new(Grid::unit_square(8, 2));
        let affine = ScalarField::from_fn(g.clone(), |x| 2.0 * x[0] - x[1] + 0.3);
        let quad = ScalarField::from_fn(g.clone(), |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let saddle = ScalarField::from_fn(g.clone(), |x| x[0] * x[1]);
        let ha = fd_hessian_norm(&affine, 0.7);
        let hq = fd_hessian_norm(&quad, 0.0);
        let hs = fd_hessian_norm(&saddle, 1.0);
        for k in interior_nodes(&g) {
            assert!(ha.values[k].abs() < 1e-9);
            assert!((hq.values[k] - 2f64.sqrt()).abs() < 1e-9);
            assert!((hs.values[k] - 0.7320508075688772).abs() < 1e-9);
        }
    }

    #[test]
    fn limit_field_gradient_consistency() {
        // Away from the ridge and the boundary curvature singularities the
        // centered gradient of the distance has unit norm to O(h²).
        let mut errs = Vec::new();
        for h in [1.0 / 32.0, 1.0 / 64.0] {
            let (d, g) = ellipse_grid(h);
            let (u, _) = exact_limit_field(&d, &g).unwrap();
            let gr = fd_gradient(&u);
            let r = d.ridge();
            let e = (0..g.len())
                .filter(|&k| g.class(k) == NodeClass::Interior && r.distance(g.node(k)) > 0.1)
                .map(|k| (gr.values[k][0].hypot(gr.values[k][1]) - 1.0).abs())
                .fold(0.0, f64::max);
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 1.7, "errors {errs:?}");
    }

    #[test]
    fn weak_divergence_constant_and_linear() {
        let g = Arc::new(Grid::unit_square(16, 2));
        let c = VectorField::from_fn(g.clone(), |_| [0.3, -1.2]);
        let mc = weak_divergence(&c);
        let lin = VectorField::from_fn(g.clone(), |x| x);
        let ml = weak_divergence(&lin);
        for k in interior_nodes(&g) {
            assert!(mc.mass[k].abs() < 1e-15);
            assert!((ml.mass[k] - 2.0 * g.h * g.h).abs() < 1e-14);
        }
        assert!(ml.total(Region::All).abs() < 1e-13);
    }

    #[test]
    fn weak_divergence_of_position_over_disk() {
        let d = Domain::ellipse(1.0, 1.0).unwrap();
        let g = Arc::new(Grid::covering(&d, 1.0 / 64.0).unwrap());
        let f = VectorField::from_fn(g.clone(), |x| x);
        let m = weak_divergence(&f);
        let r = 0.6;
        let total: f64 = (0..g.len())
            .filter(|&k| crate::geom::norm(g.node(k)) < r)
            .map(|k| m.mass[k])
            .sum();
        // Nodal counting of the disk area converges at O(h^{3/2}) or better.
        assert!((total - 2.0 * std::f64::consts::PI * r * r).abs() < 0.02);
    }

    #[test]
    fn w11_examples() {
        let (d, g) = ellipse_grid(1.0 / 64.0);
        let (u, _) = exact_limit_field(&d, &g).unwrap();
        assert_eq!(w11_distance(&u, &u, Region::Interior).unwrap(), 0.0);
        let shifted = ScalarField::from_vec(g.clone(), u.values.iter().map(|v| v + 0.2).collect());
        let w = w11_distance(&shifted, &u, Region::Interior).unwrap();
        assert!((w - 0.2 * d.area()).abs() < 0.2 * d.area() * 0.02);
    }

    #[test]
    fn w11_matches_quadrature_oracle() {
        let (d, g) = ellipse_grid(1.0 / 128.0);
        let (u, _) = exact_limit_field(&d, &g).unwrap();
        let bump = |x: Vec2| {
            let r2 = (x[0] / 0.8).powi(2) + (x[1] / 0.4).powi(2);
            if r2 < 1.0 { (1.0 - r2).powi(3) } else { 0.0 }
        };
        let pert = |x: Vec2| 0.01 * (std::f64::consts::PI * x[0]).sin() * bump(x);
        let v = ScalarField::from_vec(
            g.clone(),
            (0..g.len()).map(|k| u.values[k] + pert(g.node(k))).collect(),
        );
        let w = w11_distance(&v, &u, Region::Interior).unwrap();
        // Oracle: Gauss–Legendre tensor quadrature on the support ellipse.
        let rule = crate::quad::GaussRule::new(64);
        let hh = 1e-6;
        let integrand = |x: Vec2| {
            let gx = (pert([x[0] + hh, x[1]]) - pert([x[0] - hh, x[1]])) / (2.0 * hh);
            let gy = (pert([x[0], x[1] + hh]) - pert([x[0], x[1] - hh])) / (2.0 * hh);
            pert(x).abs() + gx.hypot(gy)
        };
        let mut exact = 0.0;
        for p in 0..8 {
            let x0 = -0.8 + 0.2 * p as f64;
            exact += rule.integrate(
                |x| {
                    let ymax = 0.4 * (1.0 - (x / 0.8).powi(2)).max(0.0).sqrt();
                    rule.integrate(|y| integrand([x, y]), -ymax, ymax)
                },
                x0,
                x0 + 0.2,
            );
        }
        assert!((w - exact).abs() < 0.01 * exact, "{w} vs {exact}");
    }

    proptest! {
        #[test]
        fn w11_is_a_metric(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Arc::new(Grid::unit_square(6, 2));
            let mut rand_field = || ScalarField::from_vec(g.clone(), (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect());
            let (a, b, c) = (rand_field(), rand_field(), rand_field());
            let ab = w11_distance(&a, &b, Region::Interior).unwrap();
            let ba = w11_distance(&b, &a, Region::Interior).unwrap();
            let bc = w11_distance(&b, &c, Region::Interior).unwrap();
            let ac = w11_distance(&a, &c, Region::Interior).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ac <= ab + bc + 1e-12);
            prop_assert!(ab >= 0.0);
        }

        #[test]
        fn weak_divergence_is_linear_and_conservative(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = Arc::new(Grid::unit_square(5, 2));
            let f1 = VectorField::from_vec(g.clone(), (0..g.len()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
            let f2 = VectorField::from_vec(g.clone(), (0..g.len()).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect());
            let sum = VectorField::from_vec(g.clone(), (0..g.len()).map(|k| [f1.values[k][0] + 2.0 * f2.values[k][0], f1.values[k][1] + 2.0 * f2.values[k][1]]).collect());
            let (m1, m2, ms) = (weak_divergence(&f1), weak_divergence(&f2), weak_divergence(&sum));
            for k in 0..g.len() {
                prop_assert!((ms.mass[k] - m1.mass[k] - 2.0 * m2.mass[k]).abs() < 1e-13);
            }
            prop_assert!(m1.total(Region::All).abs() < 1e-13);
        }
    }
}
