//! The W1-TV and L2-TV models as saddle-point problems.
//!
//! Both models minimize over measure-valued images `u` (rows in the weighted
//! simplex) a data term plus `λ·TV_KR(u)`. The TV term is the maximum of
//! `⟨Du, p⟩_b` over dual fields `p` whose stencil gradients `g = G p` lie in
//! the `λ`-ball of the Jacobian norm; the W1 data term is the maximum of
//! `⟨u - f, p0⟩_b` over `p0` with stencil gradients in the unit ball. The
//! equality constraints `A_j g_j = B_j P_j p` are enforced by multipliers
//! `w` (and `w0`), which become additional primal variables:
//!
//! ```text
//! min_{u, w, w0} max_{p, g, p0, g0}  ⟨Du, p⟩_b + ⟨u - f, p0⟩_b
//!     + Σ ⟨w_j, A_j g_j - B_j P_j p⟩ + Σ ⟨w0_j, A_j g0_j - B_j P_j p0⟩
//! ```
//!
//! Array layouts (row-major, voxel outermost): `u, p0: [n][l]`,
//! `p: [n][l][d]`, `w, g: [n][m][s][d]`, `w0, g0: [n][m][s]`.

mod kernels;
pub mod kr;

use std::sync::{Arc, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_grid::Grid;
use crate::metric_space::MetricSpace;
use crate::proximal::{project_weighted_simplex_in_place, JacobianNorm};
use crate::real::Real;
use kernels::{Kernels, Tables};

pub use kr::{KrBracket, KrOptions, StencilLaplacian};

/// Tolerance on the unit-mass and nonnegativity of stored image rows.
pub const SIMPLEX_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    W1Tv,
    L2Tv,
}

impl std::str::FromStr for Model {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w1tv" => Ok(Self::W1Tv),
            "l2tv" => Ok(Self::L2Tv),
            other => Err(Error::InvalidArgument(format!("unknown model {other:?}"))),
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Model::W1Tv => "w1tv",
            Model::L2Tv => "l2tv",
        })
    }
}

/// A measure-valued image: per-voxel densities with respect to the cell
/// volumes, `values[i * l + k]`.
#[derive(Debug, Clone)]
pub struct MeasureImage<T = f64> {
    grid: Grid<T>,
    space: Arc<MetricSpace<T>>,
    values: Vec<T>,
}

impl<T: Real> MeasureImage<T> {
    /// Validates that every row is a probability density within [`SIMPLEX_TOL`].
    pub fn new(grid: Grid<T>, space: Arc<MetricSpace<T>>, values: Vec<T>) -> Result<Self> {
        let img = Self::new_unchecked(grid, space, values)?;
        img.check_rows(T::lit(SIMPLEX_TOL))?;
        Ok(img)
    }

    /// Checks only the array length.
    pub fn new_unchecked(grid: Grid<T>, space: Arc<MetricSpace<T>>, values: Vec<T>) -> Result<Self> {
        let want = grid.len() * space.len();
        if values.len() != want {
            return Err(Error::shape(want, values.len()));
        }
        Ok(Self { grid, space, values })
    }

    /// Every voxel carries the same density `row`.
    pub fn constant(grid: Grid<T>, space: Arc<MetricSpace<T>>, row: &[T]) -> Result<Self> {
        if row.len() != space.len() {
            return Err(Error::shape(space.len(), row.len()));
        }
        let values = row.iter().copied().cycle().take(grid.len() * row.len()).collect();
        Self::new(grid, space, values)
    }

    /// Every voxel carries the normalized volume measure.
    pub fn uniform(grid: Grid<T>, space: Arc<MetricSpace<T>>) -> Self {
        let v = T::one() / space.total_volume();
        let values = vec![v; grid.len() * space.len()];
        Self { grid, space, values }
    }

    pub fn check_rows(&self, tol: T) -> Result<()> {
        let l = self.space.len();
        for (i, row) in self.values.chunks(l).enumerate() {
            let mut mass = T::zero();
            for (k, (&x, &b)) in row.iter().zip(self.space.volumes()).enumerate() {
                if !x.is_finite() || x < -tol {
                    return Err(Error::NegativeDensity {
                        cell: i * l + k,
                        value: x.to_f64_lossy(),
                    });
                }
                mass += b * x;
            }
            if (mass - T::one()).abs() > tol {
                return Err(Error::Infeasible(format!(
                    "voxel {i} has mass {mass}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> &Grid<T> {
        &self.grid
    }

    pub fn space(&self) -> &Arc<MetricSpace<T>> {
        &self.space
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn row(&self, i: usize) -> &[T] {
        let l = self.space.len();
        &self.values[i * l..(i + 1) * l]
    }

    pub fn num_voxels(&self) -> usize {
        self.grid.len()
    }

    /// Same grid and space, new values.
    pub fn with_values(&self, values: Vec<T>) -> Result<Self> {
        Self::new(self.grid.clone(), self.space.clone(), values)
    }
}

/// `⟨u, p⟩_b = Σ_{i,k} b_k u_k^i p_k^i`.
pub fn pair_b<T: Real>(space: &MetricSpace<T>, u: &[T], p: &[T]) -> Result<T> {
    if u.len() != p.len() {
        return Err(Error::shape(u.len(), p.len()));
    }
    let l = space.len();
    if l == 0 || u.len() % l != 0 {
        return Err(Error::shape(format!("multiple of {l}"), u.len()));
    }
    let b = space.volumes();
    Ok(u
        .chunks(l)
        .zip(p.chunks(l))
        .map(|(ur, pr)| {
            ur.iter()
                .zip(pr)
                .zip(b)
                .fold(T::zero(), |acc, ((&x, &y), &bk)| acc + bk * x * y)
        })
        .fold(T::zero(), |a, x| a + x))
}

/// Block dimensions of a problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    /// Voxels.
    pub n: usize,
    /// Cells of the metric space.
    pub l: usize,
    /// Spatial dimension.
    pub d: usize,
    /// Stencils.
    pub m: usize,
    /// Tangent dimension.
    pub s: usize,
    /// Stencil size.
    pub r: usize,
}

/// Primal variables `(u, w, w0)`; `w0` is empty for L2-TV.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalVars<T> {
    pub u: Vec<T>,
    pub w: Vec<T>,
    pub w0: Vec<T>,
}

/// Dual variables `(p, g, p0, g0)`; `p0` and `g0` are empty for L2-TV.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVars<T> {
    pub p: Vec<T>,
    pub g: Vec<T>,
    pub p0: Vec<T>,
    pub g0: Vec<T>,
}

impl<T: Real> PrimalVars<T> {
    pub fn blocks(&self) -> [&[T]; 3] {
        [&self.u, &self.w, &self.w0]
    }
    pub fn blocks_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.u, &mut self.w, &mut self.w0]
    }
}

impl<T: Real> DualVars<T> {
    pub fn blocks(&self) -> [&[T]; 4] {
        [&self.p, &self.g, &self.p0, &self.g0]
    }
    pub fn blocks_mut(&mut self) -> [&mut [T]; 4] {
        [&mut self.p, &mut self.g, &mut self.p0, &mut self.g0]
    }
}

/// The entries of [`PrimalVars`] belonging to one voxel.
#[derive(Debug)]
pub struct PrimalRow<'a, T> {
    pub u: &'a mut [T],
    pub w: &'a mut [T],
    pub w0: &'a mut [T],
}

/// The entries of [`DualVars`] belonging to one voxel.
#[derive(Debug)]
pub struct DualRow<'a, T> {
    pub p: &'a mut [T],
    pub g: &'a mut [T],
    pub p0: &'a mut [T],
    pub g0: &'a mut [T],
}

fn split_rows<T>(v: &mut [T], n: usize) -> Vec<&mut [T]> {
    if v.is_empty() {
        return (0..n).map(|_| Default::default()).collect();
    }
    let per = v.len() / n;
    v.chunks_mut(per).collect()
}

impl<T: Real> PrimalVars<T> {
    /// Per-voxel views.
    pub fn rows_mut(&mut self, dims: &Dims) -> Vec<PrimalRow<'_, T>> {
        let n = dims.n;
        split_rows(&mut self.u, n)
            .into_iter()
            .zip(split_rows(&mut self.w, n))
            .zip(split_rows(&mut self.w0, n))
            .map(|((u, w), w0)| PrimalRow { u, w, w0 })
            .collect()
    }
}

impl<T: Real> DualVars<T> {
    /// Per-voxel views.
    pub fn rows_mut(&mut self, dims: &Dims) -> Vec<DualRow<'_, T>> {
        let n = dims.n;
        split_rows(&mut self.p, n)
            .into_iter()
            .zip(split_rows(&mut self.g, n))
            .zip(split_rows(&mut self.p0, n))
            .zip(split_rows(&mut self.g0, n))
            .map(|(((p, g), p0), g0)| DualRow { p, g, p0, g0 })
            .collect()
    }
}

pub const PRIMAL_BLOCKS: [&str; 3] = ["u", "w", "w0"];
pub const DUAL_BLOCKS: [&str; 4] = ["p", "g", "p0", "g0"];

/// Primal and dual objective values at a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub primal: f64,
    pub dual: f64,
    /// `(primal - dual) / max(|primal|, |dual|, 1)`.
    pub gap_rel: f64,
}

impl Energy {
    pub fn new(primal: f64, dual: f64) -> Self {
        let scale = primal.abs().max(dual.abs()).max(1.0);
        Self {
            primal,
            dual,
            gap_rel: ((primal - dual) / scale).max(0.0),
        }
    }
}

/// A W1-TV or L2-TV instance.
#[derive(Debug)]
pub struct SaddleProblem<T = f64> {
    model: Model,
    lambda: T,
    norm: JacobianNorm,
    data: MeasureImage<T>,
    dims: Dims,
    kernels: Kernels<T>,
    kernels1: Kernels<T>,
    laplacian: OnceLock<std::result::Result<StencilLaplacian<T>, String>>,
}

impl<T: Real> SaddleProblem<T> {
    pub fn new(model: Model, data: MeasureImage<T>, lambda: T, norm: JacobianNorm) -> Result<Self> {
        if !(lambda > T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "regularization weight must be positive, got {lambda}"
            )));
        }
        let space = data.space();
        let dims = Dims {
            n: data.grid().len(),
            l: space.len(),
            d: data.grid().dim(),
            m: space.num_stencils(),
            s: space.tangent_dim(),
            r: space.stencil_size(),
        };
        Ok(Self {
            model,
            lambda,
            norm,
            data,
            dims,
            kernels: Kernels::select(dims.s, dims.d, dims.r),
            kernels1: Kernels::select(dims.s, 1, dims.r),
            laplacian: OnceLock::new(),
        })
    }

    pub fn model(&self) -> Model {
        self.model
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn norm(&self) -> JacobianNorm {
        self.norm
    }

    pub fn data(&self) -> &MeasureImage<T> {
        &self.data
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn space(&self) -> &MetricSpace<T> {
        self.data.space()
    }

    pub fn grid(&self) -> &Grid<T> {
        self.data.grid()
    }

    fn tables(&self) -> Tables<'_, T> {
        let space = self.space();
        Tables {
            nb: space.stencil_neighbors(),
            a: space.stencil_a_all(),
            b: space.stencil_b_all(),
            m: self.dims.m,
            s: self.dims.s,
            r: self.dims.r,
        }
    }

    fn has_data_duals(&self) -> bool {
        self.model == Model::W1Tv
    }

    pub fn laplacian(&self) -> Result<&StencilLaplacian<T>> {
        self.laplacian
            .get_or_init(|| StencilLaplacian::new(self.space()).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Singular(e.clone()))
    }

    /// Zero primal variables with `u` uniform.
    pub fn initial_primal(&self) -> PrimalVars<T> {
        let Dims { n, m, s, d, .. } = self.dims;
        let w0_len = if self.has_data_duals() { n * m * s } else { 0 };
        PrimalVars {
            u: MeasureImage::uniform(self.grid().clone(), self.data.space().clone()).into_values(),
            w: vec![T::zero(); n * m * s * d],
            w0: vec![T::zero(); w0_len],
        }
    }

    pub fn zero_primal(&self) -> PrimalVars<T> {
        let mut x = self.initial_primal();
        x.u.iter_mut().for_each(|v| *v = T::zero());
        x
    }

    pub fn zero_dual(&self) -> DualVars<T> {
        let Dims { n, l, m, s, d, .. } = self.dims;
        let data = self.has_data_duals();
        DualVars {
            p: vec![T::zero(); n * l * d],
            g: vec![T::zero(); n * m * s * d],
            p0: vec![T::zero(); if data { n * l } else { 0 }],
            g0: vec![T::zero(); if data { n * m * s } else { 0 }],
        }
    }

    /// Rows of `K x` belonging to voxel `i`.
    pub(crate) fn k_voxel(&self, i: usize, x: &PrimalVars<T>, out: DualRow<'_, T>) {
        let tab = self.tables();
        let Dims { l, d, m, s, .. } = self.dims;
        let grid = self.grid();
        let b = self.space().volumes();
        let inv_h = T::one() / grid.spacing();
        let ui = &x.u[i * l..(i + 1) * l];
        for t in 0..d {
            if grid.has_forward(i, t) {
                let next = i + grid.strides()[t];
                let un = &x.u[next * l..(next + 1) * l];
                for k in 0..l {
                    out.p[k * d + t] = b[k] * (un[k] - ui[k]) * inv_h;
                }
            } else {
                for k in 0..l {
                    out.p[k * d + t] = T::zero();
                }
            }
        }
        let msd = m * s * d;
        let wi = &x.w[i * msd..(i + 1) * msd];
        (self.kernels.scatter_bt)(&tab, wi, d, out.p);
        (self.kernels.apply_a)(&tab, wi, d, out.g);
        if self.has_data_duals() {
            let ms = m * s;
            let w0 = &x.w0[i * ms..(i + 1) * ms];
            for k in 0..l {
                out.p0[k] = b[k] * ui[k];
            }
            (self.kernels1.scatter_bt)(&tab, w0, 1, out.p0);
            (self.kernels1.apply_a)(&tab, w0, 1, out.g0);
        }
    }

    /// Rows of `Kᵀ y` belonging to voxel `i`.
    pub(crate) fn kt_voxel(&self, i: usize, y: &DualVars<T>, out: PrimalRow<'_, T>) {
        let tab = self.tables();
        let Dims { l, d, m, s, .. } = self.dims;
        let grid = self.grid();
        let b = self.space().volumes();
        let inv_h = T::one() / grid.spacing();
        let data = self.has_data_duals();
        let pi = &y.p[i * l * d..(i + 1) * l * d];
        out.u.fill(T::zero());
        for t in 0..d {
            if grid.has_backward(i, t) {
                let prev = i - grid.strides()[t];
                let pp = &y.p[prev * l * d..(prev + 1) * l * d];
                for k in 0..l {
                    out.u[k] += pp[k * d + t];
                }
            }
            if grid.has_forward(i, t) {
                for k in 0..l {
                    out.u[k] -= pi[k * d + t];
                }
            }
        }
        for k in 0..l {
            let extra = if data { y.p0[i * l + k] } else { T::zero() };
            out.u[k] = b[k] * (out.u[k] * inv_h + extra);
        }
        let msd = m * s * d;
        (self.kernels.apply_a)(&tab, &y.g[i * msd..(i + 1) * msd], d, out.w);
        (self.kernels.gather_b)(&tab, pi, d, out.w);
        if data {
            let ms = m * s;
            (self.kernels1.apply_a)(&tab, &y.g0[i * ms..(i + 1) * ms], 1, out.w0);
            (self.kernels1.gather_b)(&tab, &y.p0[i * l..(i + 1) * l], 1, out.w0);
        }
    }

    /// `out = K x`.
    pub fn apply_k(&self, x: &PrimalVars<T>, out: &mut DualVars<T>) {
        out.rows_mut(&self.dims)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, row)| self.k_voxel(i, x, row));
    }

    /// `out = Kᵀ y`.
    pub fn apply_kt(&self, y: &DualVars<T>, out: &mut PrimalVars<T>) {
        out.rows_mut(&self.dims)
            .into_par_iter()
            .enumerate()
            .for_each(|(i, row)| self.kt_voxel(i, y, row));
    }

    /// Per-voxel scale factors `1 / max(1, max_j ‖G_j p^i‖ / radius)` that
    /// make a dual field feasible.
    fn feasibility_scales(&self, p: &[T], d: usize, radius: T, norm: JacobianNorm) -> Vec<T> {
        let l = self.dims.l;
        let space = self.space();
        p.par_chunks(l * d)
            .map_init(kr::KrScratch::default, |scratch, pi| {
                let ratio = kr::constraint_ratio(space, norm, pi, d, radius, scratch);
                T::one() / ratio.max(T::one())
            })
            .collect()
    }

    /// Exact dual objective at `(p, p0)`, both assumed feasible.
    fn dual_objective(&self, p: &[T], p0: &[T]) -> T {
        let Dims { l, .. } = self.dims;
        let space = self.space();
        let b = space.volumes();
        let q = self
            .grid()
            .neg_div(p, l)
            .expect("dual field matches the grid");
        let f = self.data.values();
        let per_voxel: Vec<T> = match self.model {
            Model::W1Tv => (0..self.dims.n)
                .into_par_iter()
                .map(|i| {
                    let mut best = T::infinity();
                    let mut pair = T::zero();
                    for k in 0..l {
                        let idx = i * l + k;
                        best = best.min(q[idx] + p0[idx]);
                        pair += b[k] * f[idx] * p0[idx];
                    }
                    best - pair
                })
                .collect(),
            Model::L2Tv => (0..self.dims.n)
                .into_par_iter()
                .map(|i| {
                    let half = T::lit(0.5);
                    let mut u: Vec<T> = (0..l).map(|k| f[i * l + k] - half * q[i * l + k]).collect();
                    project_weighted_simplex_in_place(&mut u, b);
                    (0..l).fold(T::zero(), |acc, k| {
                        let idx = i * l + k;
                        let diff = u[k] - f[idx];
                        acc + b[k] * (diff * diff + u[k] * q[idx])
                    })
                })
                .collect(),
        };
        per_voxel.into_iter().fold(T::zero(), |a, x| a + x)
    }

    /// Dual objective of explicitly feasible duals: `g = G p` and the ball
    /// constraints must hold to `1e-8`.
    pub fn dual_energy(&self, y: &DualVars<T>) -> Result<T> {
        let Dims { l, d, m, s, .. } = self.dims;
        let tol = T::lit(1e-8);
        let space = self.space();
        let check = |p: &[T], g: &[T], dd: usize, radius: T, name: &str| -> Result<()> {
            let mut gp = vec![T::zero(); m * s * dd];
            for (i, pi) in p.chunks(l * dd).enumerate() {
                kr::apply_stencil_grad(space, pi, dd, &mut gp);
                let gi = &g[i * m * s * dd..(i + 1) * m * s * dd];
                for j in 0..m {
                    let blk = j * s * dd..(j + 1) * s * dd;
                    let mismatch = gp[blk.clone()]
                        .iter()
                        .zip(&gi[blk.clone()])
                        .fold(T::zero(), |a, (&x, &y)| a.max((x - y).abs()));
                    let nrm = crate::proximal::jacobian_norm(self.norm, &gp[blk], s, dd);
                    if mismatch > tol || nrm > radius * (T::one() + tol) + tol {
                        return Err(Error::Infeasible(format!(
                            "dual block {name} violates its constraint at voxel {i}, stencil {j}"
                        )));
                    }
                }
            }
            Ok(())
        };
        check(&y.p, &y.g, d, self.lambda, "p")?;
        if self.has_data_duals() {
            check(&y.p0, &y.g0, 1, T::one(), "p0")?;
        }
        Ok(self.dual_objective(&y.p, &y.p0))
    }

    /// Lower bound on the optimal energy from arbitrary duals: each voxel's
    /// `p` and `p0` are scaled into their constraint sets (`g` is implied).
    pub fn dual_lower_bound(&self, y: &DualVars<T>) -> T {
        let Dims { l, d, .. } = self.dims;
        let scales = self.feasibility_scales(&y.p, d, self.lambda, self.norm);
        let mut p = y.p.clone();
        for (pi, &sc) in p.chunks_mut(l * d).zip(&scales) {
            pi.iter_mut().for_each(|x| *x *= sc);
        }
        let mut p0 = y.p0.clone();
        if self.has_data_duals() {
            let scales0 = self.feasibility_scales(&y.p0, 1, T::one(), JacobianNorm::Spectral);
            for (pi, &sc) in p0.chunks_mut(l).zip(&scales0) {
                pi.iter_mut().for_each(|x| *x *= sc);
            }
        }
        self.dual_objective(&p, &p0)
    }

    fn tv_sources(&self, u: &[T]) -> Vec<T> {
        let Dims { l, d, .. } = self.dims;
        let b = self.space().volumes();
        let mut c = self.grid().grad(u, l).expect("image matches the grid");
        for ci in c.chunks_mut(l * d) {
            for k in 0..l {
                for t in 0..d {
                    ci[k * d + t] *= b[k];
                }
            }
        }
        c
    }

    fn exact_kr_available(&self, d: usize) -> bool {
        let space = self.space();
        space.edge_stencils() && (d == 1 || space.num_stencils() + 1 == space.len())
    }

    /// Upper bound on the primal energy of `x.u` from the multipliers: the
    /// multipliers are corrected to satisfy the flow constraints exactly.
    pub fn primal_upper_bound(&self, x: &PrimalVars<T>) -> Result<T> {
        let tab = self.tables();
        let Dims { l, d, m, s, .. } = self.dims;
        let space = self.space();
        let lap = self.laplacian()?;
        let b = space.volumes();
        let c = self.tv_sources(&x.u);
        let lambda = self.lambda;
        let norm = self.norm;
        let exact_tv = self.exact_kr_available(d);
        let exact_data = self.exact_kr_available(1);
        let f = self.data.values();
        let opts = KrOptions::default();
        let per_voxel: Vec<Result<T>> = (0..self.dims.n)
            .into_par_iter()
            .map_init(
                || (kr::KrScratch::default(), Vec::new(), Vec::new()),
                |(scratch, omega, c0), i| {
                    let ci = &c[i * l * d..(i + 1) * l * d];
                    let tv = if exact_tv {
                        kr::kr_norm(space, lap, norm, ci, d, lambda, &opts)?.upper
                    } else {
                        omega.resize(m * s * d, T::zero());
                        (self.kernels.apply_a)(&tab, &x.w[i * m * s * d..(i + 1) * m * s * d], d, omega);
                        kr::corrected_upper_bound(space, lap, norm, ci, omega, d, lambda, scratch)
                    };
                    let data = match self.model {
                        Model::L2Tv => (0..l).fold(T::zero(), |a, k| {
                            let diff = x.u[i * l + k] - f[i * l + k];
                            a + b[k] * diff * diff
                        }),
                        Model::W1Tv => {
                            c0.clear();
                            c0.extend((0..l).map(|k| b[k] * (x.u[i * l + k] - f[i * l + k])));
                            if exact_data {
                                kr::kr_norm(space, lap, norm, c0, 1, T::one(), &opts)?.upper
                            } else {
                                omega.resize(m * s, T::zero());
                                (self.kernels1.apply_a)(&tab, &x.w0[i * m * s..(i + 1) * m * s], 1, omega);
                                kr::corrected_upper_bound(
                                    space,
                                    lap,
                                    JacobianNorm::Spectral,
                                    c0,
                                    &omega[..m * s],
                                    1,
                                    T::one(),
                                    scratch,
                                )
                            }
                        }
                    };
                    Ok(tv + data)
                },
            )
            .collect();
        let mut total = T::zero();
        for v in per_voxel {
            total += v?;
        }
        Ok(total)
    }

    /// Primal energy `data(u) + λ·TV_KR(u)` with every inner maximization
    /// solved to `opts.tol`; returns a certified bracket.
    pub fn primal_energy_bracket(&self, u: &[T], opts: &KrOptions) -> Result<KrBracket<T>> {
        let Dims { n, l, d, .. } = self.dims;
        if u.len() != n * l {
            return Err(Error::shape(n * l, u.len()));
        }
        let img = MeasureImage::new_unchecked(self.grid().clone(), self.data.space().clone(), u.to_vec())?;
        img.check_rows(T::lit(SIMPLEX_TOL))?;
        let space = self.space();
        let lap = self.laplacian()?;
        let b = space.volumes();
        let f = self.data.values();
        let c = self.tv_sources(u);
        let per_voxel: Vec<Result<(T, T)>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let tv = kr::kr_norm(space, lap, self.norm, &c[i * l * d..(i + 1) * l * d], d, self.lambda, opts)?;
                let (lo, hi) = match self.model {
                    Model::L2Tv => {
                        let v = (0..l).fold(T::zero(), |a, k| {
                            let diff = u[i * l + k] - f[i * l + k];
                            a + b[k] * diff * diff
                        });
                        (v, v)
                    }
                    Model::W1Tv => {
                        let c0: Vec<T> = (0..l).map(|k| b[k] * (u[i * l + k] - f[i * l + k])).collect();
                        let w = kr::kr_norm(space, lap, self.norm, &c0, 1, T::one(), opts)?;
                        (w.lower, w.upper)
                    }
                };
                Ok((tv.lower + lo, tv.upper + hi))
            })
            .collect();
        let mut out = KrBracket::exact(T::zero());
        for v in per_voxel {
            let (lo, hi) = v?;
            out.lower += lo;
            out.upper += hi;
        }
        Ok(out)
    }

    /// Primal energy of `u` (midpoint of the certified bracket).
    pub fn primal_energy(&self, u: &[T]) -> Result<T> {
        Ok(self.primal_energy_bracket(u, &KrOptions::default())?.mid())
    }

    /// Checkpoint energies for a primal-dual pair.
    pub fn energy(&self, x: &PrimalVars<T>, y: &DualVars<T>) -> Result<Energy> {
        let primal = self.primal_upper_bound(x)?.to_f64_lossy();
        let dual = self.dual_lower_bound(y).to_f64_lossy();
        Ok(Energy::new(primal, dual))
    }

    /// Row sums of `|K|` (dual layout) and column sums of `|K|` (primal
    /// layout), the ingredients of diagonal step preconditioning.
    pub fn abs_sums(&self) -> (PrimalVars<T>, DualVars<T>) {
        let Dims { n, l, d, m, s, r } = self.dims;
        let space = self.space();
        let grid = self.grid();
        let b = space.volumes();
        let inv_h = T::one() / grid.spacing();
        let data = self.has_data_duals();
        let mut bsum = vec![T::zero(); l];
        let mut a_rows = vec![T::zero(); m * s];
        let mut w_cols = vec![T::zero(); m * s];
        for j in 0..m {
            let st = space.stencil(j);
            for a in 0..s {
                for q in 0..r {
                    bsum[st.neighbors[q]] += st.b[a * r + q].abs();
                    w_cols[j * s + a] += st.b[a * r + q].abs();
                }
                for c in 0..s {
                    a_rows[j * s + a] += st.a[a * s + c].abs();
                    w_cols[j * s + c] += st.a[a * s + c].abs();
                }
            }
        }
        let mut cols = self.zero_primal();
        let mut rows = self.zero_dual();
        for i in 0..n {
            let mut faces = T::zero();
            for t in 0..d {
                let st = grid.strides()[t];
                if (i / st) % grid.shape()[t] > 0 {
                    faces += inv_h;
                }
                if grid.has_forward(i, t) {
                    faces += inv_h;
                }
            }
            for k in 0..l {
                let extra = if data { T::one() } else { T::zero() };
                cols.u[i * l + k] = b[k] * (faces + extra);
                for t in 0..d {
                    let dpart = if grid.has_forward(i, t) { inv_h + inv_h } else { T::zero() };
                    rows.p[(i * l + k) * d + t] = b[k] * dpart + bsum[k];
                }
                if data {
                    rows.p0[i * l + k] = b[k] + bsum[k];
                }
            }
            for js in 0..m * s {
                for t in 0..d {
                    rows.g[(i * m * s + js) * d + t] = a_rows[js];
                    cols.w[(i * m * s + js) * d + t] = w_cols[js];
                }
                if data {
                    rows.g0[i * m * s + js] = a_rows[js];
                    cols.w0[i * m * s + js] = w_cols[js];
                }
            }
        }
        (cols, rows)
    }

    /// Largest `‖A_j g_j - B_j P_j p‖` over voxels and stencils.
    pub fn equality_residual(&self, y: &DualVars<T>) -> T {
        let tab = self.tables();
        let Dims { l, d, m, s, .. } = self.dims;
        let mut worst = T::zero();
        let mut blk = vec![T::zero(); m * s * d];
        for (i, pi) in y.p.chunks(l * d).enumerate() {
            (self.kernels.apply_a)(&tab, &y.g[i * m * s * d..(i + 1) * m * s * d], d, &mut blk);
            (self.kernels.gather_b)(&tab, pi, d, &mut blk);
            for chunk in blk.chunks(s * d.max(1)) {
                worst = worst.max(crate::proximal::frobenius_norm(chunk));
            }
        }
        worst
    }
}

/// Builds the W1-TV problem for data `f`.
pub fn build_w1tv<T: Real>(f: MeasureImage<T>, lambda: T, norm: JacobianNorm) -> Result<SaddleProblem<T>> {
    SaddleProblem::new(Model::W1Tv, f, lambda, norm)
}

/// Builds the L2-TV problem for data `f`.
pub fn build_l2tv<T: Real>(f: MeasureImage<T>, lambda: T, norm: JacobianNorm) -> Result<SaddleProblem<T>> {
    SaddleProblem::new(Model::L2Tv, f, lambda, norm)
}

/// `TV_KR(u)` of an image (weight `λ = 1`), as a certified bracket.
pub fn tv_kr<T: Real>(image: &MeasureImage<T>, norm: JacobianNorm, opts: &KrOptions) -> Result<KrBracket<T>> {
    let problem = SaddleProblem::new(Model::L2Tv, image.clone(), T::one(), norm)?;
    let mut b = problem.primal_energy_bracket(image.values(), opts)?;
    // The L2 data term vanishes at u = f.
    b.lower = b.lower.max(T::zero());
    Ok(b)
}

#[cfg(test)]
mod tests;
