//! Uniform node grids covering the extended domain.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Domain, RidgeSet};
use crate::error::{Error, Result};
use crate::geom::Vec2;

/// Nodes within this distance outside `∂Ω` still count as interior.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeClass {
    /// Node in the closed domain; its value is free.
    Interior,
    /// Node in the open collar `S_δ`; its value is pinned.
    Collar,
    /// Node outside `Ω_δ`.
    Exterior,
}

/// Uniform grid with node `(i, j)` at `origin + h (i, j)`, stored row-major.
#[derive(Clone, Debug)]
pub struct Grid {
    pub origin: Vec2,
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    class: Vec<NodeClass>,
    ridge_near: Vec<bool>,
    domain: Option<Domain>,
}

impl Grid {
    /// Grid with spacing `h` covering `Ω_δ`, centered on the domain so that
    /// the major axis and the center are grid lines, with at least two
    /// exterior layers on every side.
    pub fn covering(domain: &Domain, h: f64) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidArgument(format!("grid spacing {h}")));
        }
        let c = domain.center();
        let half = domain.half_extents();
        let nxh = ((half[0] + domain.delta) / h).ceil() as usize + 3;
        let nyh = ((half[1] + domain.delta) / h).ceil() as usize + 3;
        let nx = 2 * nxh + 1;
        let ny = 2 * nyh + 1;
        let origin = [c[0] - nxh as f64 * h, c[1] - nyh as f64 * h];
        let ridge = RidgeSet::new(*domain);
        let class_ridge: Vec<(NodeClass, bool)> = (0..nx * ny)
            .into_par_iter()
            .map(|k| {
                let x = [origin[0] + (k % nx) as f64 * h, origin[1] + (k / nx) as f64 * h];
                let sd = domain.signed_distance(x)?;
                let class = if sd >= -BOUNDARY_TOL {
                    NodeClass::Interior
                } else if sd > -domain.delta {
                    NodeClass::Collar
                } else {
                    NodeClass::Exterior
                };
                Ok((class, ridge.distance(x) <= 0.5 * h))
            })
            .collect::<Result<_>>()?;
        Ok(Grid {
            origin,
            h,
            nx,
            ny,
            class: class_ridge.iter().map(|c| c.0).collect(),
            ridge_near: class_ridge.iter().map(|c| c.1).collect(),
            domain: Some(*domain),
        })
    }

    /// Grid with `n` cells across the longest side of the bounding box of `Ω_δ`.
    pub fn with_resolution(domain: &Domain, n: usize) -> Result<Self> {
        let half = domain.half_extents();
        let extent = 2.0 * (half[0].max(half[1]) + domain.delta);
        Self::covering(domain, extent / n.max(1) as f64)
    }

    /// Grid with an explicit class mask and no attached domain.
    pub fn from_mask(origin: Vec2, h: f64, nx: usize, ny: usize, class: Vec<NodeClass>) -> Result<Self> {
        if class.len() != nx * ny {
            return Err(Error::InvalidArgument(format!(
                "mask has {} entries for a {nx}x{ny} grid",
                class.len()
            )));
        }
        Ok(Grid {
            origin,
            h,
            nx,
            ny,
            ridge_near: vec![false; class.len()],
            class,
            domain: None,
        })
    }

    /// The unit square `[0,1]²` sampled at the `n × n` cell centers, all
    /// interior, surrounded by `ghost` exterior layers.
    pub fn unit_square(n: usize, ghost: usize) -> Self {
        let h = 1.0 / n as f64;
        let nx = n + 2 * ghost;
        let mut class = vec![NodeClass::Exterior; nx * nx];
        for j in ghost..ghost + n {
            for i in ghost..ghost + n {
                class[j * nx + i] = NodeClass::Interior;
            }
        }
        let o = (0.5 - ghost as f64) * h;
        Grid::from_mask([o, o], h, nx, nx, class).expect("consistent mask")
    }

    pub fn domain(&self) -> Option<&Domain> {
        self.domain.as_ref()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }

    #[inline]
    pub fn node(&self, k: usize) -> Vec2 {
        let (i, j) = self.ij(k);
        [self.origin[0] + i as f64 * self.h, self.origin[1] + j as f64 * self.h]
    }

    #[inline]
    pub fn class(&self, k: usize) -> NodeClass {
        self.class[k]
    }

    pub fn classes(&self) -> &[NodeClass] {
        &self.class
    }

    /// Node within `h/2` of the ridge segment.
    #[inline]
    pub fn ridge_near(&self, k: usize) -> bool {
        self.ridge_near[k]
    }

    pub fn count(&self, class: NodeClass) -> usize {
        self.class.iter().filter(|&&c| c == class).count()
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.nx == other.nx && self.ny == other.ny && self.h == other.h && self.origin == other.origin
    }

    /// Number of consecutive exterior rows/columns on the thinnest side.
    pub fn ghost_layers(&self) -> usize {
        let ext = |i: usize, j: usize| self.class[self.index(i, j)] == NodeClass::Exterior;
        let row_ext = |j: usize| (0..self.nx).all(|i| ext(i, j));
        let col_ext = |i: usize| (0..self.ny).all(|j| ext(i, j));
        let bottom = (0..self.ny).take_while(|&j| row_ext(j)).count();
        let top = (0..self.ny).rev().take_while(|&j| row_ext(j)).count();
        let left = (0..self.nx).take_while(|&i| col_ext(i)).count();
        let right = (0..self.nx).rev().take_while(|&i| col_ext(i)).count();
        bottom.min(top).min(left).min(right)
    }
}
