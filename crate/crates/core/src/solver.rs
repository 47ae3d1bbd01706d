//! First-order primal-dual iteration for [`SaddleProblem`]s with adaptive,
//! residual-balanced step sizes.
//!
//! Each iteration performs one dual ascent step (projections onto the
//! Jacobian-norm balls), one primal descent step (weighted-simplex
//! projection, plus the quadratic prox for L2-TV) and an over-relaxation of
//! the primal variable. `K x` is cached, so an iteration costs one
//! application of `K` and one of `Kᵀ`. Every `check_every` iterations the
//! primal and dual bounds of [`SaddleProblem::energy`] are evaluated.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Dims, DualRow, DualVars, Energy, Model, PrimalRow, PrimalVars, SaddleProblem, DUAL_BLOCKS, PRIMAL_BLOCKS};
use crate::proximal::{project_jacobian_ball_in_place, project_simplex_metric_in_place, JacobianNorm};
use crate::real::Real;

/// Fraction of the admissible step product `1 / ‖K‖²` used by default.
const STEP_SAFETY: f64 = 0.99;
const REDUCE_CHUNK: usize = 8192;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub max_iter: usize,
    /// Relative primal-dual gap at which the run counts as converged.
    pub gap_tol: f64,
    pub check_every: usize,
    /// Initial primal step; derived from the operator norm when absent.
    pub tau: Option<f64>,
    /// Initial dual step; derived from the operator norm when absent.
    pub sigma: Option<f64>,
    pub adaptive: bool,
    pub alpha0: f64,
    /// Decay of the adaptation strength after every adaptation.
    pub eta: f64,
    /// Target ratio of primal to dual residual.
    pub balance: f64,
    /// Tolerated deviation from the target ratio before adapting.
    pub delta: f64,
    /// Adaptation stops once its strength falls below this value.
    pub alpha_floor: f64,
    /// Per-entry step sizes from the absolute row and column sums of `K`.
    pub diagonal_preconditioning: bool,
    pub seed: u64,
    /// Emit `key=value` progress lines on standard error at checkpoints.
    pub progress: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 200_000,
            gap_tol: 1e-5,
            check_every: 5000,
            tau: None,
            sigma: None,
            adaptive: true,
            alpha0: 0.5,
            eta: 0.95,
            balance: 1.0,
            delta: 1.5,
            alpha_floor: 1e-4,
            diagonal_preconditioning: false,
            seed: 0,
            progress: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.max_iter == 0 {
            return bad("max_iter must be at least 1".into());
        }
        if !(self.gap_tol > 0.0) {
            return bad(format!("gap_tol must be positive, got {}", self.gap_tol));
        }
        if self.check_every == 0 {
            return bad("check_every must be at least 1".into());
        }
        for (name, v) in [("tau", self.tau), ("sigma", self.sigma)] {
            if let Some(v) = v {
                if !(v > 0.0) || !v.is_finite() {
                    return bad(format!("{name} must be positive, got {v}"));
                }
            }
        }
        if !(self.alpha0 > 0.0 && self.alpha0 < 1.0) {
            return bad(format!("alpha0 must lie in (0, 1), got {}", self.alpha0));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return bad(format!("eta must lie in (0, 1), got {}", self.eta));
        }
        if !(self.balance > 0.0) || !(self.delta > 1.0) {
            return bad("balance must be positive and delta greater than 1".into());
        }
        if self.alpha_floor < 0.0 {
            return bad("alpha_floor must be nonnegative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    pub gap_rel: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub iteration: usize,
    pub tau: f64,
    pub sigma: f64,
}

/// Outcome of [`solve`].
#[derive(Debug, Clone)]
pub struct SolverReport<T = f64> {
    pub u: Vec<T>,
    pub primal: PrimalVars<T>,
    pub dual: DualVars<T>,
    pub iterations: usize,
    pub gap_trace: Vec<GapRecord>,
    pub steps: Vec<StepRecord>,
    pub termination: Termination,
    pub wall_time_secs: f64,
    /// Norm of the step-scaled operator used for the step-size rule.
    pub operator_norm: f64,
}

/// The array-free part of a [`SolverReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub model: Model,
    pub lambda: f64,
    pub norm: JacobianNorm,
    pub iterations: usize,
    pub termination: Termination,
    pub wall_time_secs: f64,
    pub operator_norm: f64,
    pub final_energy: Option<Energy>,
    pub gap_trace: Vec<GapRecord>,
    pub steps: Vec<StepRecord>,
}

impl<T: Real> SolverReport<T> {
    pub fn final_gap(&self) -> Option<&GapRecord> {
        self.gap_trace.last()
    }

    pub fn summary(&self, problem: &SaddleProblem<T>) -> ReportSummary {
        ReportSummary {
            model: problem.model(),
            lambda: problem.lambda().to_f64_lossy(),
            norm: problem.norm(),
            iterations: self.iterations,
            termination: self.termination,
            wall_time_secs: self.wall_time_secs,
            operator_norm: self.operator_norm,
            final_energy: self.final_gap().map(|g| Energy::new(g.primal, g.dual)),
            gap_trace: self.gap_trace.clone(),
            steps: self.steps.clone(),
        }
    }
}

/// Sum of `term(e)` over `0..len` with a reduction order that does not
/// depend on the number of worker threads.
fn det_sum<T: Real>(len: usize, term: impl Fn(usize) -> T + Sync) -> T {
    let parts: Vec<T> = (0..len.div_ceil(REDUCE_CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = T::zero();
            for e in c * REDUCE_CHUNK..((c + 1) * REDUCE_CHUNK).min(len) {
                acc += term(e);
            }
            acc
        })
        .collect();
    parts.into_iter().fold(T::zero(), |a, x| a + x)
}

fn primal_dot<T: Real>(a: &PrimalVars<T>, b: &PrimalVars<T>) -> T {
    a.blocks()
        .iter()
        .zip(b.blocks())
        .fold(T::zero(), |acc, (x, y)| acc + det_sum(x.len(), |e| x[e] * y[e]))
}

/// Largest eigenvalue of a symmetric tridiagonal matrix by Sturm-sequence
/// bisection.
fn tridiagonal_max_eigenvalue(alpha: &[f64], beta: &[f64]) -> f64 {
    let k = alpha.len();
    let mut hi = f64::MIN;
    let mut lo = f64::MAX;
    for i in 0..k {
        let off = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < k { beta[i].abs() } else { 0.0 };
        hi = hi.max(alpha[i] + off);
        lo = lo.min(alpha[i] - off);
    }
    // Number of eigenvalues below x.
    let count_below = |x: f64| {
        let mut count = 0;
        let mut q = 1.0;
        for i in 0..k {
            let b2 = if i > 0 { beta[i - 1] * beta[i - 1] } else { 0.0 };
            q = alpha[i] - x - if i > 0 { b2 / q } else { 0.0 };
            if q == 0.0 {
                q = -f64::EPSILON * (x.abs() + 1.0);
            }
            if q < 0.0 {
                count += 1;
            }
        }
        count
    };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(mid) == k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn scale_primal<T: Real>(x: &mut PrimalVars<T>, w: &PrimalVars<T>) {
    for (xb, wb) in x.blocks_mut().into_iter().zip(w.blocks()) {
        xb.par_iter_mut().zip(wb.par_iter()).for_each(|(v, &t)| *v *= t);
    }
}

/// Largest singular value of `S^{1/2} K T^{1/2}`, from Lanczos iterations on
/// `T^{1/2} Kᵀ S K T^{1/2}` started at a seeded random vector.
fn scaled_operator_norm<T: Real>(
    problem: &SaddleProblem<T>,
    tw: &PrimalVars<T>,
    sw: &DualVars<T>,
    seed: u64,
) -> T {
    const MAX_STEPS: usize = 400;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sqrt_tw = tw.clone();
    sqrt_tw.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|v| *v = v.sqrt()));
    let mut q = problem.zero_primal();
    for blk in q.blocks_mut() {
        blk.iter_mut().for_each(|v| *v = T::lit(rng.random_range(-1.0..1.0)));
    }
    let nq = primal_dot(&q, &q).sqrt();
    q.blocks_mut().into_iter().for_each(|b| b.iter_mut().for_each(|v| *v /= nq));
    let mut q_prev = problem.zero_primal();
    let mut w = problem.zero_primal();
    let mut y = problem.zero_dual();
    let (mut alpha, mut beta) = (Vec::new(), Vec::new());
    let mut est = 0.0;
    for step in 0..MAX_STEPS {
        w.blocks_mut().into_iter().zip(q.blocks()).for_each(|(o, i)| o.copy_from_slice(i));
        scale_primal(&mut w, &sqrt_tw);
        problem.apply_k(&w, &mut y);
        for (yb, sb) in y.blocks_mut().into_iter().zip(sw.blocks()) {
            yb.par_iter_mut().zip(sb.par_iter()).for_each(|(v, &s)| *v *= s);
        }
        problem.apply_kt(&y, &mut w);
        scale_primal(&mut w, &sqrt_tw);
        let a = primal_dot(&q, &w);
        let b_prev = beta.last().copied().unwrap_or(T::zero());
        for ((wb, qb), pb) in w.blocks_mut().into_iter().zip(q.blocks()).zip(q_prev.blocks()) {
            wb.par_iter_mut()
                .zip(qb.par_iter().zip(pb.par_iter()))
                .for_each(|(v, (&qv, &pv))| *v -= a * qv + b_prev * pv);
        }
        alpha.push(a.to_f64_lossy());
        let b = primal_dot(&w, &w).sqrt();
        let alphas: Vec<f64> = alpha.clone();
        let betas: Vec<f64> = beta.iter().map(|v: &T| v.to_f64_lossy()).collect();
        let next = tridiagonal_max_eigenvalue(&alphas, &betas);
        let settled = step > 3 && (next - est).abs() <= 1e-12 * next;
        est = next;
        if settled || b <= T::lit(1e-13) * T::lit(next.abs().max(1e-300)).sqrt() || next == 0.0 {
            break;
        }
        beta.push(b);
        std::mem::swap(&mut q_prev, &mut q);
        std::mem::swap(&mut q, &mut w);
        q.blocks_mut().into_iter().for_each(|blk| blk.iter_mut().for_each(|v| *v /= b));
    }
    T::lit(est.max(0.0).sqrt())
}

/// Estimate of `‖K‖`, deterministic under `seed`.
pub fn estimate_operator_norm<T: Real>(problem: &SaddleProblem<T>, seed: u64) -> T {
    let mut tw = problem.zero_primal();
    let mut sw = problem.zero_dual();
    tw.blocks_mut().into_iter().for_each(|b| b.fill(T::one()));
    sw.blocks_mut().into_iter().for_each(|b| b.fill(T::one()));
    scaled_operator_norm(problem, &tw, &sw, seed)
}

fn reciprocal<T: Real>(v: &mut [T]) {
    v.iter_mut()
        .for_each(|x| *x = if *x > T::zero() { T::one() / *x } else { T::one() });
}

fn fill_mean<T: Real>(v: &mut [T]) {
    if v.is_empty() {
        return;
    }
    let mean = v.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(v.len());
    v.fill(mean);
}

/// Per-entry step weights `(T, S)`. Entries sharing a ball projection share
/// a weight, and the `u` weights keep the `1/b` profile that turns the
/// primal prox into a volume-weighted simplex projection.
fn step_weights<T: Real>(problem: &SaddleProblem<T>, diagonal: bool) -> (PrimalVars<T>, DualVars<T>) {
    let (mut tw, mut sw) = problem.abs_sums();
    tw.blocks_mut().into_iter().for_each(|b| reciprocal(b));
    sw.blocks_mut().into_iter().for_each(|b| reciprocal(b));
    let dims = problem.dims();
    let (s, d) = (dims.s, dims.d);
    if diagonal {
        sw.g.chunks_mut(s * d).for_each(fill_mean);
        sw.g0.chunks_mut(s).for_each(fill_mean);
        return (tw, sw);
    }
    let b = problem.space().volumes();
    let l = dims.l;
    let scaled = tw
        .u
        .iter()
        .enumerate()
        .fold(T::zero(), |a, (e, &t)| a + t * b[e % l]);
    let c = scaled / T::from_usize_lossy(tw.u.len().max(1));
    for (e, t) in tw.u.iter_mut().enumerate() {
        *t = c / b[e % l];
    }
    fill_mean(&mut tw.w);
    fill_mean(&mut tw.w0);
    sw.blocks_mut().into_iter().for_each(fill_mean);
    (tw, sw)
}

#[derive(Clone, Copy)]
enum Wt<'a, T> {
    Scalar(T),
    Slice(&'a [T]),
}

impl<T: Real> Wt<'_, T> {
    #[inline]
    fn at(&self, e: usize) -> T {
        match self {
            Wt::Scalar(v) => *v,
            Wt::Slice(s) => s[e],
        }
    }
}

/// Step weights with per-voxel access.
struct Weights<T> {
    tw: PrimalVars<T>,
    sw: DualVars<T>,
    inv_tw_u: Vec<T>,
    uniform: bool,
    n: usize,
}

impl<T: Real> Weights<T> {
    fn new(tw: PrimalVars<T>, sw: DualVars<T>, uniform: bool, n: usize) -> Self {
        let inv_tw_u = tw.u.iter().map(|&t| T::one() / t).collect();
        Self {
            tw,
            sw,
            inv_tw_u,
            uniform,
            n,
        }
    }

    fn block<'a>(&self, v: &'a [T], i: usize) -> Wt<'a, T> {
        if v.is_empty() {
            return Wt::Scalar(T::one());
        }
        if self.uniform {
            return Wt::Scalar(v[0]);
        }
        let per = v.len() / self.n;
        Wt::Slice(&v[i * per..(i + 1) * per])
    }

    fn primal(&self, i: usize) -> [Wt<'_, T>; 3] {
        let per = self.tw.u.len() / self.n;
        [
            Wt::Slice(&self.tw.u[i * per..(i + 1) * per]),
            self.block(&self.tw.w, i),
            self.block(&self.tw.w0, i),
        ]
    }

    fn dual(&self, i: usize) -> [Wt<'_, T>; 4] {
        [
            self.block(&self.sw.p, i),
            self.block(&self.sw.g, i),
            self.block(&self.sw.p0, i),
            self.block(&self.sw.g0, i),
        ]
    }
}

/// Voxel-sized scratch rows.
struct RowBufs<T> {
    blocks: [Vec<T>; 4],
    saved: [Vec<T>; 4],
}

impl<T: Real> RowBufs<T> {
    fn dual(dims: &Dims, data: bool) -> Self {
        let Dims { l, d, m, s, .. } = *dims;
        let sizes = [l * d, m * s * d, if data { l } else { 0 }, if data { m * s } else { 0 }];
        Self {
            blocks: sizes.map(|n| vec![T::zero(); n]),
            saved: sizes.map(|n| vec![T::zero(); n]),
        }
    }

    fn primal(dims: &Dims, data: bool) -> Self {
        let Dims { l, d, m, s, .. } = *dims;
        let sizes = [l, m * s * d, if data { m * s } else { 0 }, l];
        Self {
            blocks: sizes.map(|n| vec![T::zero(); n]),
            saved: sizes.map(|n| vec![T::zero(); n]),
        }
    }

    fn as_dual(&mut self) -> DualRow<'_, T> {
        let [p, g, p0, g0] = &mut self.blocks;
        DualRow { p, g, p0, g0 }
    }

    fn as_primal(&mut self) -> PrimalRow<'_, T> {
        let [u, w, w0, _] = &mut self.blocks;
        PrimalRow { u, w, w0 }
    }
}

/// Everything the fused passes share.
struct Pass<'a, T> {
    problem: &'a SaddleProblem<T>,
    weights: &'a Weights<T>,
    dims: Dims,
}

impl<T: Real> Pass<'_, T> {
    /// Computes the voxel's rows of `K x`, forms `K x̄ = 2 K x_new - K x_old`,
    /// takes the dual step and returns the dual residual of the previous
    /// iteration (when `track`). `rd` carries `(y_old - y_new)/(σS) + K x̄`
    /// from one iteration to the next.
    #[allow(clippy::too_many_arguments)]
    fn dual_voxel(
        &self,
        i: usize,
        x: &PrimalVars<T>,
        y: DualRow<'_, T>,
        kx: DualRow<'_, T>,
        rd: DualRow<'_, T>,
        buf: &mut RowBufs<T>,
        sigma: T,
        track: bool,
    ) -> T {
        let problem = self.problem;
        problem.k_voxel(i, x, buf.as_dual());
        let sw = self.weights.dual(i);
        let Dims { l, d, s, .. } = self.dims;
        let b = problem.space().volumes();
        let f = &problem.data().values()[i * l..(i + 1) * l];
        let mut residual = T::zero();
        let ys = [&mut *y.p, &mut *y.g, &mut *y.p0, &mut *y.g0];
        let kxs = [&mut *kx.p, &mut *kx.g, &mut *kx.p0, &mut *kx.g0];
        let rds = [&mut *rd.p, &mut *rd.g, &mut *rd.p0, &mut *rd.g0];
        for (blk, ((yb, kb), rb)) in ys.into_iter().zip(kxs).zip(rds).enumerate() {
            let kn = &buf.blocks[blk];
            let saved = &mut buf.saved[blk];
            let w = sw[blk];
            for e in 0..yb.len() {
                let new = kn[e];
                let we = w.at(e);
                if track {
                    let r = rb[e] - new;
                    residual += we * r * r;
                }
                let bar = new + new - kb[e];
                kb[e] = new;
                rb[e] = bar;
                saved[e] = yb[e];
                let shift = if blk == 2 { b[e] * f[e] } else { T::zero() };
                yb[e] += sigma * we * (bar - shift);
            }
            match blk {
                1 => {
                    let (lambda, norm) = (problem.lambda(), problem.norm());
                    for g in yb.chunks_mut(s * d) {
                        project_jacobian_ball_in_place(norm, g, s, d, lambda);
                    }
                }
                3 => {
                    for g in yb.chunks_mut(s) {
                        project_jacobian_ball_in_place(JacobianNorm::Frobenius, g, s, 1, T::one());
                    }
                }
                _ => {}
            }
            for e in 0..yb.len() {
                rb[e] += (saved[e] - yb[e]) / (sigma * w.at(e));
            }
        }
        residual
    }

    /// Computes the voxel's rows of `Kᵀ y`, takes the primal step and returns
    /// the primal residual.
    fn primal_voxel(&self, i: usize, y: &DualVars<T>, x: PrimalRow<'_, T>, buf: &mut RowBufs<T>, tau: T) -> T {
        let problem = self.problem;
        problem.kt_voxel(i, y, buf.as_primal());
        let tw = self.weights.primal(i);
        let l = self.dims.l;
        let b = problem.space().volumes();
        let f = &problem.data().values()[i * l..(i + 1) * l];
        let inv_t = &self.weights.inv_tw_u[i * l..(i + 1) * l];
        let mut residual = T::zero();
        let [kt_u, kt_w, kt_w0, scratch] = &mut buf.blocks;
        let saved = &mut buf.saved[0];
        saved.copy_from_slice(x.u);
        for k in 0..l {
            x.u[k] -= tau * tw[0].at(k) * kt_u[k];
        }
        match problem.model() {
            Model::W1Tv => project_simplex_metric_in_place(x.u, b, inv_t),
            Model::L2Tv => {
                // argmin Σ b(z - f)² + Σ (z - v)² / (2τT) over the simplex.
                let two = T::lit(2.0);
                for k in 0..l {
                    let wk = inv_t[k] / tau;
                    scratch[k] = wk + two * b[k];
                    x.u[k] = (wk * x.u[k] + two * b[k] * f[k]) / scratch[k];
                }
                project_simplex_metric_in_place(x.u, b, scratch);
            }
        }
        for k in 0..l {
            let dx = saved[k] - x.u[k];
            residual += dx * dx * inv_t[k] / (tau * tau);
        }
        for (xb, (kb, w)) in [x.w, x.w0].into_iter().zip([(&*kt_w, tw[1]), (&*kt_w0, tw[2])]) {
            for e in 0..xb.len() {
                let we = w.at(e);
                xb[e] -= tau * we * kb[e];
                residual += we * kb[e] * kb[e];
            }
        }
        residual
    }
}

/// First block, in update order, holding a non-finite entry.
fn non_finite<T: Real>(iteration: usize, x: &PrimalVars<T>, y: &DualVars<T>) -> Option<Error> {
    let dual = DUAL_BLOCKS.iter().zip(y.blocks());
    let primal = PRIMAL_BLOCKS.iter().zip(x.blocks());
    dual.chain(primal)
        .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
        .map(|(&block, _)| Error::NonFinite { iteration, block })
}

/// Runs the primal-dual iteration from `u` uniform and zero duals.
pub fn solve<T: Real>(problem: &SaddleProblem<T>, config: &SolverConfig) -> Result<SolverReport<T>> {
    config.validate()?;
    let start = Instant::now();
    let dims = problem.dims();
    let data = problem.model() == Model::W1Tv;
    let (tw, sw) = step_weights(problem, config.diagonal_preconditioning);
    let knorm = scaled_operator_norm(problem, &tw, &sw, config.seed);
    let weights = Weights::new(tw, sw, !config.diagonal_preconditioning, dims.n);
    let k2 = knorm * knorm;
    let budget = if k2 > T::zero() { T::lit(STEP_SAFETY) / k2 } else { T::one() };
    let (mut tau, mut sigma) = match (config.tau, config.sigma) {
        (Some(t), Some(s)) => {
            let (t, s) = (T::lit(t), T::lit(s));
            if t * s * k2 > T::one() {
                return Err(Error::InvalidArgument(format!(
                    "step sizes violate tau * sigma * |K|^2 <= 1 (|K| = {knorm})"
                )));
            }
            (t, s)
        }
        (Some(t), None) => (T::lit(t), budget / T::lit(t)),
        (None, Some(s)) => (budget / T::lit(s), T::lit(s)),
        (None, None) => (budget.sqrt(), budget.sqrt()),
    };

    let mut x = problem.initial_primal();
    let mut y = problem.zero_dual();
    let mut kx = problem.zero_dual();
    problem.apply_k(&x, &mut kx);
    let mut rd = problem.zero_dual();
    let pass = Pass {
        problem,
        weights: &weights,
        dims,
    };

    let mut alpha = config.alpha0;
    let (balance, delta) = (T::lit(config.balance), T::lit(config.delta));
    let mut last_primal_res = T::zero();
    let mut gap_trace = Vec::new();
    let mut steps = vec![StepRecord {
        iteration: 0,
        tau: tau.to_f64_lossy(),
        sigma: sigma.to_f64_lossy(),
    }];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    for it in 1..=config.max_iter {
        iterations = it;
        let track = it > 1;
        let dual_parts: Vec<T> = y
            .rows_mut(&dims)
            .into_par_iter()
            .zip(kx.rows_mut(&dims))
            .zip(rd.rows_mut(&dims))
            .enumerate()
            .map_init(
                || RowBufs::dual(&dims, data),
                |buf, (i, ((yr, kr), rr))| pass.dual_voxel(i, &x, yr, kr, rr, buf, sigma, track),
            )
            .collect();
        let primal_parts: Vec<T> = x
            .rows_mut(&dims)
            .into_par_iter()
            .enumerate()
            .map_init(
                || RowBufs::primal(&dims, data),
                |buf, (i, xr)| pass.primal_voxel(i, &y, xr, buf, tau),
            )
            .collect();
        let dual_res = dual_parts.into_iter().fold(T::zero(), |a, v| a + v);
        let primal_res = primal_parts.into_iter().fold(T::zero(), |a, v| a + v);
        if !dual_res.is_finite() || !primal_res.is_finite() {
            let block = if primal_res.is_finite() { "p" } else { "u" };
            return Err(non_finite(it, &x, &y).unwrap_or(Error::NonFinite { iteration: it, block }));
        }

        // The dual residual of an iteration is only known once the next
        // iteration has applied K, so both residuals lag by one iteration.
        if track && config.adaptive && alpha >= config.alpha_floor {
            let (pr, dr) = (last_primal_res.sqrt(), dual_res.sqrt());
            let shrink = T::one() - T::lit(alpha);
            let adapted = if pr > balance * dr * delta {
                tau /= shrink;
                sigma *= shrink;
                true
            } else if pr < balance * dr / delta {
                tau *= shrink;
                sigma /= shrink;
                true
            } else {
                false
            };
            if adapted {
                alpha *= config.eta;
                steps.push(StepRecord {
                    iteration: it,
                    tau: tau.to_f64_lossy(),
                    sigma: sigma.to_f64_lossy(),
                });
            }
        }
        last_primal_res = primal_res;

        if it % config.check_every == 0 || it == config.max_iter {
            let energy = problem.energy(&x, &y)?;
            if energy.primal.is_nan() || energy.dual.is_nan() {
                return Err(Error::NonFinite { iteration: it, block: "energy" });
            }
            gap_trace.push(GapRecord {
                iteration: it,
                primal: energy.primal,
                dual: energy.dual,
                gap_rel: energy.gap_rel,
            });
            if config.progress {
                eprintln!(
                    "iter={it} primal={:.12e} dual={:.12e} gap={:.6e} tau={:.6e} sigma={:.6e}",
                    energy.primal,
                    energy.dual,
                    energy.gap_rel,
                    tau.to_f64_lossy(),
                    sigma.to_f64_lossy()
                );
            }
            if energy.gap_rel <= config.gap_tol {
                termination = Termination::Converged;
                break;
            }
        }
    }
    Ok(SolverReport {
        u: x.u.clone(),
        primal: x,
        dual: y,
        iterations,
        gap_trace,
        steps,
        termination,
        wall_time_secs: start.elapsed().as_secs_f64(),
        operator_norm: knorm.to_f64_lossy(),
    })
}
