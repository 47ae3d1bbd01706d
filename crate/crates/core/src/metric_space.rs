//! Discretizations of compact metric spaces: the geodesic icosphere for S²,
//! the uniform circle for S¹, and explicit finite metric spaces.
//!
//! Every discretization carries cell volumes `b`, the dense distance matrix,
//! and a list of gradient stencils. A stencil `j` couples `r` cells `N_j` and
//! describes the tangent gradient estimate `g` of a function `p` sampled at
//! those cells through `A g = B p|_{N_j}`. On manifolds `A` and `B` come from
//! the least-squares fit over inverse-exponential coordinates; on finite
//! spaces every Lipschitz edge `(a, b)` is a stencil with `A = [d_ab]` and
//! `B = [1, -1]`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::real::Real;

/// Largest icosphere level accepted; level 5 already needs a dense
/// 10242 x 10242 distance matrix.
pub const MAX_ICOSPHERE_LEVEL: u32 = 5;

/// Construction tag. Geometry is always rebuilt from this, never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceTag {
    Icosphere {
        level: u32,
    },
    Circle {
        l: usize,
    },
    Finite {
        distances: Vec<Vec<f64>>,
        edges: Vec<[usize; 2]>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    Icosphere(u32),
    Circle(usize),
    Finite,
}

/// Point descriptors `z^k`.
#[derive(Debug, Clone)]
pub enum Points<T> {
    /// Unit vectors on S².
    Sphere(Vec<[T; 3]>),
    /// Angles in `[0, 2π)`.
    Circle(Vec<T>),
    /// Opaque ids `0..l`.
    Finite(usize),
}

/// Staggered gradient point `y^j`.
#[derive(Debug, Clone, Copy)]
pub enum GradPoint<T> {
    Sphere {
        y: [T; 3],
        /// Orthonormal tangent basis at `y`.
        basis: [[T; 3]; 2],
    },
    Circle {
        angle: T,
    },
    /// Lipschitz edge between two cells of a finite space.
    Edge,
}

/// Coordinates of a tangent vector in the stored orthonormal basis.
pub type TangentVector<T> = Vec<T>;

/// One gradient stencil, borrowed from a [`MetricSpace`].
#[derive(Debug, Clone, Copy)]
pub struct Stencil<'a, T> {
    /// Cell indices `N_j`, length `r`.
    pub neighbors: &'a [usize],
    /// `A^j`, `s x s` row-major.
    pub a: &'a [T],
    /// `B^j`, `s x r` row-major.
    pub b: &'a [T],
    /// `G^j = (A^j)^{-1} B^j`, `s x r` row-major.
    pub g: &'a [T],
}

/// A discretized compact metric space with its gradient stencils.
#[derive(Debug, Clone)]
pub struct MetricSpace<T = f64> {
    kind: SpaceKind,
    tag: SpaceTag,
    points: Points<T>,
    volumes: Vec<T>,
    distances: Vec<T>,
    s: usize,
    r: usize,
    grad_points: Vec<GradPoint<T>>,
    neighbors: Vec<usize>,
    a: Vec<T>,
    b: Vec<T>,
    g: Vec<T>,
    adjacency: Vec<Vec<usize>>,
}

impl<T: Real> MetricSpace<T> {
    /// Rebuilds a discretization from its tag.
    pub fn from_tag(tag: &SpaceTag) -> Result<Self> {
        match tag {
            SpaceTag::Icosphere { level } => Self::icosphere(*level),
            SpaceTag::Circle { l } => Self::circle(*l),
            SpaceTag::Finite { distances, edges } => {
                let l = distances.len();
                let mut flat = Vec::with_capacity(l * l);
                for row in distances {
                    if row.len() != l {
                        return Err(Error::shape(format!("{l}x{l} distance matrix"), row.len()));
                    }
                    flat.extend(row.iter().map(|&x| T::lit(x)));
                }
                Self::finite(&flat, l, edges)
            }
        }
    }

    /// The `level`-times subdivided icosahedron projected onto the unit sphere.
    pub fn icosphere(level: u32) -> Result<Self> {
        if level > MAX_ICOSPHERE_LEVEL {
            return Err(Error::Capacity(format!(
                "icosphere level {level} exceeds the maximum {MAX_ICOSPHERE_LEVEL} \
                 (dense distance matrix would have {} entries)",
                (10usize * 4usize.pow(level) + 2).pow(2)
            )));
        }
        let (verts, faces) = icosphere_mesh::<T>(level);
        let l = verts.len();

        let mut volumes = vec![T::zero(); l];
        let third = T::one() / T::lit(3.0);
        for f in &faces {
            let area = spherical_triangle_area(&verts[f[0]], &verts[f[1]], &verts[f[2]]);
            for &k in f {
                volumes[k] += area * third;
            }
        }

        let mut distances = vec![T::zero(); l * l];
        for i in 0..l {
            for k in (i + 1)..l {
                let d = sphere_distance(&verts[i], &verts[k]);
                distances[i * l + k] = d;
                distances[k * l + i] = d;
            }
        }

        let mut adjacency = vec![Vec::new(); l];
        for f in &faces {
            for e in 0..3 {
                let (x, y) = (f[e], f[(e + 1) % 3]);
                if !adjacency[x].contains(&y) {
                    adjacency[x].push(y);
                    adjacency[y].push(x);
                }
            }
        }
        adjacency.iter_mut().for_each(|n| n.sort_unstable());

        let grad_points: Vec<GradPoint<T>> = faces
            .iter()
            .map(|f| {
                let mut y = [T::zero(); 3];
                for &k in f {
                    for c in 0..3 {
                        y[c] += verts[k][c];
                    }
                }
                let y = normalize3(y);
                GradPoint::Sphere {
                    y,
                    basis: tangent_basis(&y),
                }
            })
            .collect();
        let neighbors: Vec<usize> = faces.iter().flat_map(|f| f.iter().copied()).collect();

        let mut space = Self {
            kind: SpaceKind::Icosphere(level),
            tag: SpaceTag::Icosphere { level },
            points: Points::Sphere(verts),
            volumes,
            distances,
            s: 2,
            r: 3,
            grad_points,
            neighbors,
            a: Vec::new(),
            b: Vec::new(),
            g: Vec::new(),
            adjacency,
        };
        space.build_lsq_gradient()?;
        Ok(space)
    }

    /// `l` equispaced points on the unit circle.
    pub fn circle(l: usize) -> Result<Self> {
        if l < 3 {
            return Err(Error::InvalidArgument(format!(
                "a circle discretization needs at least 3 points, got {l}"
            )));
        }
        let h = T::TAU() / T::from_usize_lossy(l);
        let half = T::lit(0.5);
        let angles: Vec<T> = (0..l).map(|k| h * T::from_usize_lossy(k)).collect();
        let mut distances = vec![T::zero(); l * l];
        for i in 0..l {
            for k in 0..l {
                let steps = i.abs_diff(k).min(l - i.abs_diff(k));
                distances[i * l + k] = h * T::from_usize_lossy(steps);
            }
        }
        let grad_points = (0..l)
            .map(|j| GradPoint::Circle {
                angle: h * (T::from_usize_lossy(j) + half),
            })
            .collect();
        let neighbors = (0..l).flat_map(|j| [j, (j + 1) % l]).collect();
        let adjacency = (0..l).map(|k| vec![(k + l - 1) % l, (k + 1) % l]).collect();
        let mut space = Self {
            kind: SpaceKind::Circle(l),
            tag: SpaceTag::Circle { l },
            points: Points::Circle(angles),
            volumes: vec![h; l],
            distances,
            s: 1,
            r: 2,
            grad_points,
            neighbors,
            a: Vec::new(),
            b: Vec::new(),
            g: Vec::new(),
            adjacency,
        };
        space.build_lsq_gradient()?;
        Ok(space)
    }

    /// A finite metric space with unit cell volumes whose Lipschitz structure
    /// is the given edge list.
    pub fn finite(dist: &[T], l: usize, edges: &[[usize; 2]]) -> Result<Self> {
        if dist.len() != l * l {
            return Err(Error::shape(format!("{l}x{l} distance matrix"), dist.len()));
        }
        if l == 0 {
            return Err(Error::InvalidArgument("finite space needs at least one point".into()));
        }
        validate_metric(dist, l)?;
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        let mut a = Vec::with_capacity(edges.len());
        let mut b = Vec::with_capacity(2 * edges.len());
        let mut g = Vec::with_capacity(2 * edges.len());
        let mut adjacency = vec![Vec::new(); l];
        for (j, &[p, q]) in edges.iter().enumerate() {
            if p >= l || q >= l || p == q {
                return Err(Error::InvalidArgument(format!(
                    "edge {j} = ({p}, {q}) is not a pair of distinct points in 0..{l}"
                )));
            }
            let d = dist[p * l + q];
            if !(d > T::zero()) {
                return Err(Error::MetricAxiom(format!(
                    "distinct points {p} and {q} joined by edge {j} have distance {d}"
                )));
            }
            neighbors.extend([p, q]);
            a.push(d);
            b.extend([T::one(), -T::one()]);
            g.extend([T::one() / d, -T::one() / d]);
            if !adjacency[p].contains(&q) {
                adjacency[p].push(q);
                adjacency[q].push(p);
            }
        }
        let distances_f64 = (0..l)
            .map(|i| (0..l).map(|k| dist[i * l + k].to_f64_lossy()).collect())
            .collect();
        Ok(Self {
            kind: SpaceKind::Finite,
            tag: SpaceTag::Finite {
                distances: distances_f64,
                edges: edges.to_vec(),
            },
            points: Points::Finite(l),
            volumes: vec![T::one(); l],
            distances: dist.to_vec(),
            s: 1,
            r: 2,
            grad_points: vec![GradPoint::Edge; edges.len()],
            neighbors,
            a,
            b,
            g,
            adjacency,
        })
    }

    /// A finite space with every pair of points joined by a Lipschitz edge.
    pub fn finite_complete(dist: &[T], l: usize) -> Result<Self> {
        let edges: Vec<[usize; 2]> = (0..l)
            .flat_map(|p| ((p + 1)..l).map(move |q| [p, q]))
            .collect();
        Self::finite(dist, l, &edges)
    }

    /// Two points at distance `d`, joined by one edge.
    pub fn two_point(d: T) -> Result<Self> {
        Self::finite(&[T::zero(), d, d, T::zero()], 2, &[[0, 1]])
    }

    /// Least-squares tangent-gradient matrices for every stencil: with `M`
    /// holding the inverse-exponential coordinates of the neighbors as rows
    /// and `E = I - ee^T/r`, `A = MᵀEM` and `B = MᵀE`.
    fn build_lsq_gradient(&mut self) -> Result<()> {
        let (s, r) = (self.s, self.r);
        let m = self.grad_points.len();
        let mut a_all = Vec::with_capacity(m * s * s);
        let mut b_all = Vec::with_capacity(m * s * r);
        let mut g_all = Vec::with_capacity(m * s * r);
        let inv_r = T::one() / T::from_usize_lossy(r);
        for j in 0..m {
            let mut mat = Vec::with_capacity(r * s);
            for &k in &self.neighbors[j * r..(j + 1) * r] {
                mat.extend(self.inverse_exp(j, k)?);
            }
            let mut centered = mat.clone();
            for c in 0..s {
                let mean = (0..r).map(|row| mat[row * s + c]).sum::<T>() * inv_r;
                for row in 0..r {
                    centered[row * s + c] -= mean;
                }
            }
            let mt = linalg::transpose(&mat, r, s);
            let a = linalg::matmul(&mt, &centered, s, r, s);
            // MᵀE has the same entries as (EM)ᵀ since E is symmetric.
            let b = linalg::transpose(&centered, r, s);
            let a_inv = linalg::inverse_spd(&a, s).map_err(|_| {
                Error::Singular(format!("gradient stencil {j} has collinear neighbors"))
            })?;
            let g = linalg::matmul(&a_inv, &b, s, s, r);
            a_all.extend(a);
            b_all.extend(b);
            g_all.extend(g);
        }
        self.a = a_all;
        self.b = b_all;
        self.g = g_all;
        Ok(())
    }

    /// Inverse exponential map `exp⁻¹_{y^j}(z^k)` in the tangent basis at `y^j`.
    pub fn inverse_exp(&self, j: usize, k: usize) -> Result<TangentVector<T>> {
        match (&self.grad_points[j], &self.points) {
            (GradPoint::Sphere { y, basis }, Points::Sphere(z)) => {
                let v = sphere_inverse_exp(y, &z[k])?;
                Ok(vec![dot3(&v, &basis[0]), dot3(&v, &basis[1])])
            }
            (GradPoint::Circle { angle }, Points::Circle(z)) => {
                Ok(vec![circle_inverse_exp(*angle, z[k])?])
            }
            _ => Err(Error::InvalidArgument(
                "finite spaces have no tangent spaces".into(),
            )),
        }
    }

    pub fn kind(&self) -> SpaceKind {
        self.kind
    }

    pub fn tag(&self) -> &SpaceTag {
        &self.tag
    }

    pub fn points(&self) -> &Points<T> {
        &self.points
    }

    /// Number of cells `l`.
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    /// Cell volumes `b`.
    pub fn volumes(&self) -> &[T] {
        &self.volumes
    }

    pub fn total_volume(&self) -> T {
        self.volumes.iter().copied().sum()
    }

    /// Dense `l x l` distance matrix, row-major.
    pub fn distances(&self) -> &[T] {
        &self.distances
    }

    #[inline]
    pub fn distance(&self, a: usize, b: usize) -> T {
        self.distances[a * self.len() + b]
    }

    /// Tangent dimension `s` (1 for finite-space edges).
    pub fn tangent_dim(&self) -> usize {
        self.s
    }

    /// Stencil size `r`.
    pub fn stencil_size(&self) -> usize {
        self.r
    }

    /// Number of stencils `m`.
    pub fn num_stencils(&self) -> usize {
        self.grad_points.len()
    }

    pub fn grad_points(&self) -> &[GradPoint<T>] {
        &self.grad_points
    }

    #[inline]
    pub fn stencil(&self, j: usize) -> Stencil<'_, T> {
        let (s, r) = (self.s, self.r);
        Stencil {
            neighbors: &self.neighbors[j * r..(j + 1) * r],
            a: &self.a[j * s * s..(j + 1) * s * s],
            b: &self.b[j * s * r..(j + 1) * s * r],
            g: &self.g[j * s * r..(j + 1) * s * r],
        }
    }

    /// All `A^j` blocks, concatenated.
    pub fn stencil_a_all(&self) -> &[T] {
        &self.a
    }

    /// All `B^j` blocks, concatenated.
    pub fn stencil_b_all(&self) -> &[T] {
        &self.b
    }

    /// All stencil neighborhoods, `m x r` row-major.
    pub fn stencil_neighbors(&self) -> &[usize] {
        &self.neighbors
    }

    /// Mesh 1-ring of every cell (edge neighbors for finite spaces).
    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adjacency
    }

    /// True when every stencil is a two-cell difference (circle, finite).
    pub fn edge_stencils(&self) -> bool {
        self.r == 2 && self.s == 1
    }

    /// Longest distance between adjacent cells.
    pub fn max_edge_length(&self) -> T {
        let mut best = T::zero();
        for (k, nbrs) in self.adjacency.iter().enumerate() {
            for &q in nbrs {
                best = best.max(self.distance(k, q));
            }
        }
        best
    }

    /// Unit 3-vector of cell `k` (circles embed in the xy-plane).
    pub fn point3(&self, k: usize) -> Option<[T; 3]> {
        match &self.points {
            Points::Sphere(z) => Some(z[k]),
            Points::Circle(a) => Some([a[k].cos(), a[k].sin(), T::zero()]),
            Points::Finite(_) => None,
        }
    }

    /// Index of the cell whose point is closest to `dir`.
    pub fn nearest_point(&self, dir: &[T; 3]) -> Option<usize> {
        let mut best = None;
        let mut best_dot = -T::infinity();
        for k in 0..self.len() {
            let p = self.point3(k)?;
            let c = dot3(&p, dir);
            if c > best_dot {
                best_dot = c;
                best = Some(k);
            }
        }
        best
    }
}

pub fn dot3<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn cross3<T: Real>(a: &[T; 3], b: &[T; 3]) -> [T; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub fn normalize3<T: Real>(v: [T; 3]) -> [T; 3] {
    let n = dot3(&v, &v).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Great-circle distance between unit vectors.
pub fn sphere_distance<T: Real>(a: &[T; 3], b: &[T; 3]) -> T {
    let c = cross3(a, b);
    dot3(&c, &c).sqrt().atan2(dot3(a, b))
}

/// Inverse exponential map on S² in ambient coordinates.
pub fn sphere_inverse_exp<T: Real>(y: &[T; 3], z: &[T; 3]) -> Result<[T; 3]> {
    let c = dot3(y, z);
    let w = [z[0] - c * y[0], z[1] - c * y[1], z[2] - c * y[2]];
    let wn = dot3(&w, &w).sqrt();
    if wn == T::zero() {
        if c > T::zero() {
            return Ok([T::zero(); 3]);
        }
        return Err(Error::Singular(
            "inverse exponential map is undefined at the antipode".into(),
        ));
    }
    let theta = wn.atan2(c);
    let scale = theta / wn;
    Ok([w[0] * scale, w[1] * scale, w[2] * scale])
}

/// Signed angle from `y` to `z` in `(-π, π)`.
pub fn circle_inverse_exp<T: Real>(y: T, z: T) -> Result<T> {
    let tau = T::TAU();
    let mut d = (z - y) % tau;
    if d > T::PI() {
        d -= tau;
    } else if d < -T::PI() {
        d += tau;
    }
    if d.abs() == T::PI() {
        return Err(Error::Singular(
            "inverse exponential map is undefined at the antipode".into(),
        ));
    }
    Ok(d)
}

/// Orthonormal basis of the tangent plane at `y`, from Gram–Schmidt on the
/// coordinate axis most orthogonal to `y`.
pub fn tangent_basis<T: Real>(y: &[T; 3]) -> [[T; 3]; 2] {
    let mut axis = 0;
    for c in 1..3 {
        if y[c].abs() < y[axis].abs() {
            axis = c;
        }
    }
    let mut e = [T::zero(); 3];
    e[axis] = T::one();
    let c = y[axis];
    let t1 = normalize3([e[0] - c * y[0], e[1] - c * y[1], e[2] - c * y[2]]);
    let t2 = cross3(y, &t1);
    [t1, t2]
}

/// Area of the spherical triangle with unit-vector corners.
pub fn spherical_triangle_area<T: Real>(a: &[T; 3], b: &[T; 3], c: &[T; 3]) -> T {
    let triple = dot3(a, &cross3(b, c)).abs();
    let denom = T::one() + dot3(a, b) + dot3(b, c) + dot3(c, a);
    T::lit(2.0) * triple.atan2(denom)
}

fn icosahedron<T: Real>() -> (Vec<[T; 3]>, Vec<[usize; 3]>) {
    let phi = (T::one() + T::lit(5.0).sqrt()) / T::lit(2.0);
    let (o, z) = (T::one(), T::zero());
    let verts = vec![
        [-o, phi, z],
        [o, phi, z],
        [-o, -phi, z],
        [o, -phi, z],
        [z, -o, phi],
        [z, o, phi],
        [z, -o, -phi],
        [z, o, -phi],
        [phi, z, -o],
        [phi, z, o],
        [-phi, z, -o],
        [-phi, z, o],
    ]
    .into_iter()
    .map(normalize3)
    .collect();
    let faces = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    (verts, faces)
}

fn icosphere_mesh<T: Real>(level: u32) -> (Vec<[T; 3]>, Vec<[usize; 3]>) {
    let (mut verts, mut faces) = icosahedron::<T>();
    for _ in 0..level {
        let mut cache: HashMap<(usize, usize), usize> = HashMap::new();
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<[T; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *cache.entry(key).or_insert_with(|| {
                let (p, q) = (verts[a], verts[b]);
                verts.push(normalize3([p[0] + q[0], p[1] + q[1], p[2] + q[2]]));
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut verts);
            let bc = midpoint(b, c, &mut verts);
            let ca = midpoint(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (verts, faces)
}

fn validate_metric<T: Real>(dist: &[T], l: usize) -> Result<()> {
    let scale = dist.iter().fold(T::zero(), |m, &d| m.max(d.abs()));
    let tol = T::lit(1e-12) * scale.max(T::one());
    for a in 0..l {
        if dist[a * l + a] != T::zero() {
            return Err(Error::MetricAxiom(format!(
                "d({a},{a}) = {} is not zero",
                dist[a * l + a]
            )));
        }
        for b in 0..l {
            let d = dist[a * l + b];
            if !d.is_finite() || d < T::zero() {
                return Err(Error::MetricAxiom(format!("d({a},{b}) = {d} is not a distance")));
            }
            if (d - dist[b * l + a]).abs() > tol {
                return Err(Error::MetricAxiom(format!(
                    "d({a},{b}) = {d} differs from d({b},{a}) = {}",
                    dist[b * l + a]
                )));
            }
        }
    }
    for a in 0..l {
        for b in 0..l {
            for c in 0..l {
                let lhs = dist[a * l + c];
                let rhs = dist[a * l + b] + dist[b * l + c];
                if lhs > rhs + tol {
                    return Err(Error::MetricAxiom(format!(
                        "triangle inequality fails for ({a}, {b}, {c}): \
                         d({a},{c}) = {lhs} > d({a},{b}) + d({b},{c}) = {rhs}"
                    )));
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn rodrigues_exp(y: &[f64; 3], v: &[f64; 3]) -> [f64; 3] {
        let theta = dot3(v, v).sqrt();
        if theta == 0.0 {
            return *y;
        }
        let axis = normalize3(cross3(y, v));
        let (s, c) = theta.sin_cos();
        let kxy = cross3(&axis, y);
        let kdy = dot3(&axis, y);
        [0, 1, 2].map(|i| y[i] * c + kxy[i] * s + axis[i] * kdy * (1.0 - c))
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
        loop {
            let v = [0; 3].map(|_| rng.random_range(-1.0..1.0));
            let n = dot3(&v, &v);
            if n > 1e-3 && n <= 1.0 {
                return normalize3(v);
            }
        }
    }

    #[test]
    fn icosphere_counts_follow_closed_forms() {
        for level in 0..=4 {
            let s = MetricSpace::<f64>::icosphere(level).unwrap();
            let p = 4usize.pow(level);
            assert_eq!(s.len(), 10 * p + 2);
            assert_eq!(s.num_stencils(), 20 * p);
            assert_eq!(s.stencil_size(), 3);
            assert!((s.total_volume() - 4.0 * PI).abs() <= 1e-12 * 4.0 * PI);
        }
    }

    #[test]
    fn icosphere_level_guard() {
        assert!(matches!(
            MetricSpace::<f64>::icosphere(MAX_ICOSPHERE_LEVEL + 1),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn icosphere_distances_are_metric_and_antipodes_exact() {
        let s = MetricSpace::<f64>::icosphere(1).unwrap();
        let l = s.len();
        validate_metric(s.distances(), l).unwrap();
        for k in 0..l {
            let far = (0..l).map(|q| s.distance(k, q)).fold(0.0, f64::max);
            assert_eq!(far, PI);
        }
    }

    #[test]
    fn stencil_matrices_are_positive_definite() {
        let s = MetricSpace::<f64>::icosphere(2).unwrap();
        for j in 0..s.num_stencils() {
            assert!(linalg::min_eigenvalue(s.stencil(j).a, 2) > 0.0);
        }
    }

    #[test]
    fn tangent_bases_are_orthonormal() {
        let s = MetricSpace::<f64>::icosphere(2).unwrap();
        for gp in s.grad_points() {
            let GradPoint::Sphere { y, basis } = gp else { unreachable!() };
            for a in 0..2 {
                assert!(dot3(&basis[a], y).abs() < 1e-12);
                for b in 0..2 {
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot3(&basis[a], &basis[b]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn inverse_exp_examples() {
        let y = [0.0_f64, 0.0, 1.0];
        assert_eq!(sphere_inverse_exp(&y, &y).unwrap(), [0.0; 3]);
        let v = sphere_inverse_exp(&y, &[1.0, 0.0, 0.0]).unwrap();
        assert!((dot3(&v, &v).sqrt() - PI / 2.0).abs() < 1e-15);
        assert!(sphere_inverse_exp(&y, &[0.0, 0.0, -1.0]).is_err());
    }

    #[test]
    fn inverse_exp_inverts_rodrigues_exponential() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let y = random_unit(&mut rng);
            let z = random_unit(&mut rng);
            if dot3(&y, &z) < -0.999 {
                continue;
            }
            let v = sphere_inverse_exp(&y, &z).unwrap();
            let back = rodrigues_exp(&y, &v);
            for c in 0..3 {
                assert!((back[c] - z[c]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_exp_norm_is_distance_for_stored_pairs() {
        let s = MetricSpace::<f64>::icosphere(2).unwrap();
        let Points::Sphere(z) = s.points() else { unreachable!() };
        for (j, gp) in s.grad_points().iter().enumerate() {
            let GradPoint::Sphere { y, .. } = gp else { unreachable!() };
            for &k in s.stencil(j).neighbors {
                let v = s.inverse_exp(j, k).unwrap();
                let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
                assert!((n - sphere_distance(y, &z[k])).abs() < 1e-12);
            }
        }
    }

    fn apply_g(st: &Stencil<'_, f64>, s: usize, p: &[f64]) -> Vec<f64> {
        let r = st.neighbors.len();
        (0..s)
            .map(|t| (0..r).map(|q| st.g[t * r + q] * p[st.neighbors[q]]).sum())
            .collect()
    }

    #[test]
    fn gradient_of_constants_vanishes_and_planted_fields_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for space in [
            MetricSpace::<f64>::icosphere(1).unwrap(),
            MetricSpace::<f64>::circle(9).unwrap(),
        ] {
            let s = space.tangent_dim();
            let p = vec![2.5; space.len()];
            for j in 0..space.num_stencils() {
                let g = apply_g(&space.stencil(j), s, &p);
                assert!(g.iter().all(|x| x.abs() < 1e-12));
                let planted: Vec<f64> = (0..s).map(|_| rng.random_range(-2.0..2.0)).collect();
                let c = rng.random_range(-1.0..1.0);
                let mut p = vec![f64::NAN; space.len()];
                for &k in space.stencil(j).neighbors {
                    let v = space.inverse_exp(j, k).unwrap();
                    p[k] = c + v.iter().zip(&planted).map(|(a, b)| a * b).sum::<f64>();
                }
                let g = apply_g(&space.stencil(j), s, &p);
                for t in 0..s {
                    assert!((g[t] - planted[t]).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn gradient_matches_dense_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let space = MetricSpace::<f64>::icosphere(1).unwrap();
        let p: Vec<f64> = (0..space.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        for j in 0..space.num_stencils() {
            let st = space.stencil(j);
            let mut design = DMatrix::zeros(3, 3);
            let mut rhs = DVector::zeros(3);
            for (row, &k) in st.neighbors.iter().enumerate() {
                let v = space.inverse_exp(j, k).unwrap();
                design[(row, 0)] = 1.0;
                design[(row, 1)] = v[0];
                design[(row, 2)] = v[1];
                rhs[row] = p[k];
            }
            let sol = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
            let g = apply_g(&st, 2, &p);
            assert!((g[0] - sol[1]).abs() < 1e-8 && (g[1] - sol[2]).abs() < 1e-8);
        }
    }

    #[test]
    fn circle_examples() {
        let c4 = MetricSpace::<f64>::circle(4).unwrap();
        assert!((c4.distance(0, 2) - PI).abs() < 1e-15);
        assert!(c4.volumes().iter().all(|&b| (b - PI / 2.0).abs() < 1e-15));
        assert!((c4.total_volume() - 2.0 * PI).abs() < 1e-12);
        let c3 = MetricSpace::<f64>::circle(3).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                if a != b {
                    assert!((c3.distance(a, b) - 2.0 * PI / 3.0).abs() < 1e-15);
                }
            }
        }
        assert!(MetricSpace::<f64>::circle(2).is_err());
        let h = 2.0 * PI / 4.0;
        let st = c4.stencil(0);
        assert!((st.g[0] + 1.0 / h).abs() < 1e-14 && (st.g[1] - 1.0 / h).abs() < 1e-14);
    }

    #[test]
    fn finite_examples() {
        let two = MetricSpace::<f64>::two_point(1.0).unwrap();
        assert_eq!(two.len(), 2);
        assert_eq!(two.num_stencils(), 1);
        assert_eq!(two.kind(), SpaceKind::Finite);
        let bad = [0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0];
        let err = MetricSpace::<f64>::finite(&bad, 3, &[]).unwrap_err();
        assert!(err.to_string().contains("(0, 1, 2)"), "{err}");
        let single = MetricSpace::<f64>::finite(&[0.0], 1, &[]).unwrap();
        assert_eq!(single.num_stencils(), 0);
    }

    #[test]
    fn tag_round_trip_rebuilds_identical_geometry() {
        let spaces = [
            MetricSpace::<f64>::icosphere(1).unwrap(),
            MetricSpace::<f64>::circle(5).unwrap(),
            MetricSpace::<f64>::finite_complete(&[0.0, 2.0, 2.0, 0.0], 2).unwrap(),
        ];
        for s in spaces {
            let json = serde_json::to_string(s.tag()).unwrap();
            let back = MetricSpace::<f64>::from_tag(&serde_json::from_str(&json).unwrap()).unwrap();
            assert_eq!(back.distances(), s.distances());
            assert_eq!(back.volumes(), s.volumes());
        }
    }

    #[test]
    fn single_precision_builds() {
        let s = MetricSpace::<f32>::icosphere(2).unwrap();
        assert!((s.total_volume() - 4.0 * std::f32::consts::PI).abs() < 1e-4);
    }
}
