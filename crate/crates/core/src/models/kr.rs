//! The discretized Kantorovich–Rubinstein norm of a vector-valued signed
//! measure, the inner maximization behind every TV and W1 data term:
//!
//! `N_λ(c) = max ⟨c, p⟩  s.t.  ‖G_j p‖ ≤ λ for every stencil j`
//!         `= min λ Σ_j ‖ω_j‖_*  s.t.  Σ_j P_jᵀ G_jᵀ ω_j = c`,
//!
//! with `c, p ∈ R^{l×d}` and `ω_j ∈ R^{s×d}`. The norm on `G_j p` is the
//! chosen Jacobian norm and `‖·‖_*` its dual.

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::metric_space::MetricSpace;
use crate::network_simplex::NetworkSimplex;
use crate::proximal::{jacobian_dual_norm, jacobian_norm, project_jacobian_ball_in_place, JacobianNorm};
use crate::real::Real;

/// `out_j = G_j P_j p` for a field `p ∈ R^{l×d}`; `out` has `m·s·d` entries.
pub fn apply_stencil_grad<T: Real>(space: &MetricSpace<T>, p: &[T], d: usize, out: &mut [T]) {
    let (s, r) = (space.tangent_dim(), space.stencil_size());
    for j in 0..space.num_stencils() {
        let st = space.stencil(j);
        let block = &mut out[j * s * d..(j + 1) * s * d];
        for a in 0..s {
            for t in 0..d {
                let mut acc = T::zero();
                for q in 0..r {
                    acc += st.g[a * r + q] * p[st.neighbors[q] * d + t];
                }
                block[a * d + t] = acc;
            }
        }
    }
}

/// `out = Σ_j P_jᵀ G_jᵀ ω_j`; `out` has `l·d` entries and is overwritten.
pub fn apply_stencil_grad_adjoint<T: Real>(space: &MetricSpace<T>, omega: &[T], d: usize, out: &mut [T]) {
    let (s, r) = (space.tangent_dim(), space.stencil_size());
    out.iter_mut().for_each(|x| *x = T::zero());
    for j in 0..space.num_stencils() {
        let st = space.stencil(j);
        let block = &omega[j * s * d..(j + 1) * s * d];
        for q in 0..r {
            let k = st.neighbors[q];
            for t in 0..d {
                let mut acc = T::zero();
                for a in 0..s {
                    acc += st.g[a * r + q] * block[a * d + t];
                }
                out[k * d + t] += acc;
            }
        }
    }
}

/// Solver for `L x = r` with `L = Σ_j P_jᵀ G_jᵀ G_j P_j`, restricted to the
/// complement of the component-wise constants in its kernel.
#[derive(Debug, Clone)]
pub struct StencilLaplacian<T> {
    chol: Cholesky<T>,
    components: Vec<Vec<usize>>,
}

impl<T: Real> StencilLaplacian<T> {
    pub fn new(space: &MetricSpace<T>) -> Result<Self> {
        let l = space.len();
        let (s, r) = (space.tangent_dim(), space.stencil_size());
        let mut lap = vec![T::zero(); l * l];
        let mut parent: Vec<usize> = (0..l).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for j in 0..space.num_stencils() {
            let st = space.stencil(j);
            for q1 in 0..r {
                for q2 in 0..r {
                    let mut acc = T::zero();
                    for a in 0..s {
                        acc += st.g[a * r + q1] * st.g[a * r + q2];
                    }
                    lap[st.neighbors[q1] * l + st.neighbors[q2]] += acc;
                }
                let (x, y) = (find(&mut parent, st.neighbors[0]), find(&mut parent, st.neighbors[q1]));
                parent[x] = y;
            }
        }
        let mut by_root: Vec<Vec<usize>> = vec![Vec::new(); l];
        for k in 0..l {
            let root = find(&mut parent, k);
            by_root[root].push(k);
        }
        let components: Vec<Vec<usize>> = by_root.into_iter().filter(|c| !c.is_empty()).collect();
        for comp in &components {
            let w = T::one() / T::from_usize_lossy(comp.len());
            for &a in comp {
                for &b in comp {
                    lap[a * l + b] += w;
                }
            }
        }
        let chol = Cholesky::factor(&lap, l)
            .map_err(|e| Error::Singular(format!("stencil Laplacian: {e}")))?;
        Ok(Self { chol, components })
    }

    /// Largest component-wise sum of `r` relative to its magnitude; zero when
    /// `r` lies in the range of `L`.
    pub fn range_defect(&self, r: &[T]) -> T {
        let mut worst = T::zero();
        for comp in &self.components {
            let sum = comp.iter().fold(T::zero(), |a, &k| a + r[k]);
            worst = worst.max(sum.abs());
        }
        worst
    }

    /// Solves `L x = r` in place for an `r` in the range of `L`.
    pub fn solve_in_place(&self, r: &mut [T]) {
        self.chol.solve_in_place(r);
    }
}

/// Smallest `λ Σ‖ω̃_j‖_*` over the feasible correction
/// `ω̃ = ω + G L⁺ (c - Gᵀω)` of an approximate multiplier `ω`.
///
/// Returns infinity when `c` has mass on a component of the stencil graph.
pub fn corrected_upper_bound<T: Real>(
    space: &MetricSpace<T>,
    lap: &StencilLaplacian<T>,
    norm: JacobianNorm,
    c: &[T],
    omega: &[T],
    d: usize,
    lambda: T,
    scratch: &mut KrScratch<T>,
) -> T {
    let (l, s, m) = (space.len(), space.tangent_dim(), space.num_stencils());
    scratch.ensure(l, m, s, d);
    apply_stencil_grad_adjoint(space, omega, d, &mut scratch.field);
    let scale = c.iter().fold(T::one(), |a, x| a.max(x.abs()));
    for t in 0..d {
        for k in 0..l {
            scratch.column[k] = c[k * d + t] - scratch.field[k * d + t];
        }
        if lap.range_defect(&scratch.column) > T::lit(1e-9) * scale * T::from_usize_lossy(l) {
            return T::infinity();
        }
        lap.solve_in_place(&mut scratch.column);
        for k in 0..l {
            scratch.field[k * d + t] = scratch.column[k];
        }
    }
    apply_stencil_grad(space, &scratch.field, d, &mut scratch.blocks);
    let mut total = T::zero();
    for j in 0..m {
        let range = j * s * d..(j + 1) * s * d;
        for (x, &o) in scratch.blocks[range.clone()].iter_mut().zip(&omega[range.clone()]) {
            *x += o;
        }
        total += jacobian_dual_norm(norm, &scratch.blocks[range], s, d);
    }
    lambda * total
}

/// Largest stencil-block norm of `G p`, relative to `lambda`.
pub fn constraint_ratio<T: Real>(
    space: &MetricSpace<T>,
    norm: JacobianNorm,
    p: &[T],
    d: usize,
    lambda: T,
    scratch: &mut KrScratch<T>,
) -> T {
    let (l, s, m) = (space.len(), space.tangent_dim(), space.num_stencils());
    scratch.ensure(l, m, s, d);
    apply_stencil_grad(space, p, d, &mut scratch.blocks);
    let mut worst = T::zero();
    for j in 0..m {
        worst = worst.max(jacobian_norm(norm, &scratch.blocks[j * s * d..(j + 1) * s * d], s, d));
    }
    worst / lambda
}

/// Reusable buffers for the KR-norm routines.
#[derive(Debug, Clone, Default)]
pub struct KrScratch<T> {
    field: Vec<T>,
    column: Vec<T>,
    blocks: Vec<T>,
}

impl<T: Real> KrScratch<T> {
    fn ensure(&mut self, l: usize, m: usize, s: usize, d: usize) {
        self.field.resize(l * d, T::zero());
        self.column.resize(l, T::zero());
        self.blocks.resize(m * s * d, T::zero());
    }
}

/// Certified enclosure `lower ≤ N_λ(c) ≤ upper`.
#[derive(Debug, Clone, Copy)]
pub struct KrBracket<T> {
    pub lower: T,
    pub upper: T,
    pub iterations: usize,
}

impl<T: Real> KrBracket<T> {
    pub fn exact(v: T) -> Self {
        Self {
            lower: v,
            upper: v,
            iterations: 0,
        }
    }

    pub fn mid(&self) -> T {
        if self.upper.is_infinite() {
            return self.upper;
        }
        (self.lower + self.upper) / T::lit(2.0)
    }
}

/// Tolerances for the iterative inner solve.
#[derive(Debug, Clone, Copy)]
pub struct KrOptions {
    /// Stop when `upper - lower ≤ tol · max(1, |upper|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub check_every: usize,
}

impl Default for KrOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200_000,
            check_every: 50,
        }
    }
}

/// Evaluates `N_λ(c)`. Exact for edge stencils with `d = 1` (min-cost flow)
/// and for tree-shaped edge graphs (unique flow); otherwise an inner
/// primal-dual iteration produces a certified bracket.
pub fn kr_norm<T: Real>(
    space: &MetricSpace<T>,
    lap: &StencilLaplacian<T>,
    norm: JacobianNorm,
    c: &[T],
    d: usize,
    lambda: T,
    opts: &KrOptions,
) -> Result<KrBracket<T>> {
    let l = space.len();
    if c.len() != l * d {
        return Err(Error::shape(l * d, c.len()));
    }
    if c.iter().all(|&x| x == T::zero()) {
        return Ok(KrBracket::exact(T::zero()));
    }
    if space.edge_stencils() {
        if space.num_stencils() + 1 == l && lap.components.len() == 1 {
            return Ok(KrBracket::exact(tree_flow_cost(space, c, d, lambda)));
        }
        if d == 1 {
            return Ok(KrBracket::exact(edge_flow_cost(space, c, lambda)?));
        }
    }
    Ok(kr_norm_pdhg(space, lap, norm, c, d, lambda, opts))
}

/// Edge length `δ_j` of an edge stencil, with `G_j = ±[1/δ_j, -1/δ_j]`.
fn edge_length<T: Real>(space: &MetricSpace<T>, j: usize) -> T {
    T::one() / space.stencil(j).g[0].abs()
}

fn edge_flow_cost<T: Real>(space: &MetricSpace<T>, c: &[T], lambda: T) -> Result<T> {
    let mut ns = NetworkSimplex::new(c.to_vec());
    for j in 0..space.num_stencils() {
        let st = space.stencil(j);
        let w = lambda * edge_length(space, j);
        ns.add_arc(st.neighbors[0], st.neighbors[1], w);
        ns.add_arc(st.neighbors[1], st.neighbors[0], w);
    }
    match ns.solve() {
        Ok(sol) => Ok(sol.cost),
        Err(Error::Infeasible(_)) => Ok(T::infinity()),
        Err(e) => Err(e),
    }
}

fn tree_flow_cost<T: Real>(space: &MetricSpace<T>, c: &[T], d: usize, lambda: T) -> T {
    let l = space.len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); l];
    for j in 0..space.num_stencils() {
        let st = space.stencil(j);
        incident[st.neighbors[0]].push(j);
        incident[st.neighbors[1]].push(j);
    }
    let mut excess = c.to_vec();
    let mut degree: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut used = vec![false; space.num_stencils()];
    let mut stack: Vec<usize> = (0..l).filter(|&k| degree[k] == 1).collect();
    let mut total = T::zero();
    while let Some(k) = stack.pop() {
        let Some(&j) = incident[k].iter().find(|&&j| !used[j]) else { continue };
        used[j] = true;
        let st = space.stencil(j);
        let other = if st.neighbors[0] == k { st.neighbors[1] } else { st.neighbors[0] };
        let mut sq = T::zero();
        for t in 0..d {
            let f = excess[k * d + t];
            sq += f * f;
            excess[other * d + t] += f;
            excess[k * d + t] = T::zero();
        }
        total += lambda * edge_length(space, j) * sq.sqrt();
        degree[other] -= 1;
        if degree[other] == 1 {
            stack.push(other);
        }
    }
    total
}

/// Inner primal-dual iteration on `min_p max_ω -⟨c,p⟩ + ⟨ω, Gp⟩ - λΣ‖ω_j‖_*`.
fn kr_norm_pdhg<T: Real>(
    space: &MetricSpace<T>,
    lap: &StencilLaplacian<T>,
    norm: JacobianNorm,
    c: &[T],
    d: usize,
    lambda: T,
    opts: &KrOptions,
) -> KrBracket<T> {
    let (l, s, m) = (space.len(), space.tangent_dim(), space.num_stencils());
    let op_norm = stencil_grad_norm(space, d);
    let step = T::lit(0.99) / op_norm;
    let (tau, sigma) = (step, step);
    let mut p = vec![T::zero(); l * d];
    let mut p_prev = p.clone();
    let mut bar = p.clone();
    let mut omega = vec![T::zero(); m * s * d];
    let mut g_bar = omega.clone();
    let mut gt = p.clone();
    let mut scratch = KrScratch::default();
    let mut best = KrBracket {
        lower: -T::infinity(),
        upper: T::infinity(),
        iterations: 0,
    };
    let tol = T::lit(opts.tol);
    let sd = s * d;
    for it in 1..=opts.max_iter {
        apply_stencil_grad(space, &bar, d, &mut g_bar);
        for (o, &gb) in omega.iter_mut().zip(&g_bar) {
            *o += sigma * gb;
        }
        // prox of σλ‖·‖_* via Moreau: x - σ P_{B_λ}(x / σ).
        for j in 0..m {
            let blk = &mut omega[j * sd..(j + 1) * sd];
            let mut buf = [T::zero(); 9];
            let proj = &mut buf[..sd];
            for (pr, &x) in proj.iter_mut().zip(blk.iter()) {
                *pr = x / sigma;
            }
            project_jacobian_ball_in_place(norm, proj, s, d, lambda);
            for (x, &pr) in blk.iter_mut().zip(proj.iter()) {
                *x -= sigma * pr;
            }
        }
        apply_stencil_grad_adjoint(space, &omega, d, &mut gt);
        p_prev.copy_from_slice(&p);
        for ((pk, &g), &ck) in p.iter_mut().zip(&gt).zip(c) {
            *pk -= tau * (g - ck);
        }
        for ((b, &pn), &po) in bar.iter_mut().zip(&p).zip(&p_prev) {
            *b = pn + pn - po;
        }
        if it % opts.check_every == 0 || it == opts.max_iter {
            let ratio = constraint_ratio(space, norm, &p, d, lambda, &mut scratch);
            let lower = crate::real::dot(c, &p) / ratio.max(T::one());
            let upper = corrected_upper_bound(space, lap, norm, c, &omega, d, lambda, &mut scratch);
            best.lower = best.lower.max(lower);
            best.upper = best.upper.min(upper);
            best.iterations = it;
            if best.upper - best.lower <= tol * best.upper.abs().max(T::one()) {
                break;
            }
        }
    }
    best
}

/// Power-iteration estimate of `‖G‖` for fields with `d` columns (the
/// columns decouple, so one column suffices).
pub fn stencil_grad_norm<T: Real>(space: &MetricSpace<T>, _d: usize) -> T {
    let (l, s, m) = (space.len(), space.tangent_dim(), space.num_stencils());
    let mut x: Vec<T> = (0..l)
        .map(|k| T::lit(((k * 7919 + 13) % 101) as f64 / 101.0 - 0.5))
        .collect();
    let mut gx = vec![T::zero(); m * s];
    let mut y = vec![T::zero(); l];
    let mut est = T::zero();
    for _ in 0..500 {
        let nx = crate::real::norm2(&x);
        if nx == T::zero() {
            return T::zero();
        }
        x.iter_mut().for_each(|v| *v /= nx);
        apply_stencil_grad(space, &x, 1, &mut gx);
        apply_stencil_grad_adjoint(space, &gx, 1, &mut y);
        let next = crate::real::dot(&x, &y).max(T::zero()).sqrt();
        let done = (next - est).abs() <= T::lit(1e-10) * next;
        est = next;
        std::mem::swap(&mut x, &mut y);
        if done {
            break;
        }
    }
    est * T::lit(1.001)
}
