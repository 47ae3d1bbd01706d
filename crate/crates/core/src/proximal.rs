//! Projections and proximal maps used by the saddle-point iterations, and a
//! numerical check of the product-norm conditions behind the cartoon and
//! rotation-invariance properties of the TV regularizer.
//!
//! Jacobian blocks are `s x d` row-major matrices (tangent dimension by
//! spatial dimension).

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::real::Real;

/// Norm constraining the Jacobian blocks of the dual variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JacobianNorm {
    #[default]
    Spectral,
    Frobenius,
}

impl std::str::FromStr for JacobianNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Self::Spectral),
            "frobenius" => Ok(Self::Frobenius),
            other => Err(Error::InvalidArgument(format!("unknown norm {other:?}"))),
        }
    }
}

/// Projection of `v` onto `{u ≥ 0, ⟨u, b⟩ = 1}` in the `b`-weighted inner
/// product, by sorting and thresholding: `u_k = max(v_k - θ, 0)`.
pub fn project_weighted_simplex<T: Real>(v: &[T], b: &[T]) -> Result<Vec<T>> {
    if v.len() != b.len() {
        return Err(Error::shape(b.len(), v.len()));
    }
    if let Some(k) = b.iter().position(|&x| !(x > T::zero())) {
        return Err(Error::InvalidArgument(format!(
            "weight b[{k}] = {} is not positive",
            b[k]
        )));
    }
    if v.is_empty() {
        return Err(Error::InvalidArgument("cannot project onto an empty simplex".into()));
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&x, &y| v[y].partial_cmp(&v[x]).unwrap_or(std::cmp::Ordering::Equal).then(x.cmp(&y)));
    let mut sum_b = T::zero();
    let mut sum_bv = T::zero();
    let mut theta = T::zero();
    for (rank, &k) in order.iter().enumerate() {
        sum_b += b[k];
        sum_bv += b[k] * v[k];
        let candidate = (sum_bv - T::one()) / sum_b;
        let next_below = order.get(rank + 1).map_or(true, |&q| v[q] <= candidate);
        if next_below {
            theta = candidate;
            break;
        }
    }
    Ok(v.iter().map(|&x| (x - theta).max(T::zero())).collect())
}

/// In-place variant of [`project_weighted_simplex`] without allocation,
/// using threshold refinement on the shrinking active set.
#[inline]
pub fn project_weighted_simplex_in_place<T: Real>(v: &mut [T], b: &[T]) {
    project_scaled_simplex(v, b, |_| T::one());
}

/// Projection onto `{u ≥ 0, ⟨u, b⟩ = 1}` in the metric `Σ_k w_k x_k²`:
/// `u_k = max(v_k - μ b_k / w_k, 0)`.
#[inline]
pub fn project_simplex_metric_in_place<T: Real>(v: &mut [T], b: &[T], w: &[T]) {
    project_scaled_simplex(v, b, |k| b[k] / w[k]);
}

fn project_scaled_simplex<T: Real>(v: &mut [T], b: &[T], c: impl Fn(usize) -> T) {
    let mut mu = -T::infinity();
    let mut active = usize::MAX;
    for _ in 0..=v.len() {
        let mut sum_b = T::zero();
        let mut sum_bv = T::zero();
        let mut count = 0;
        for (k, &x) in v.iter().enumerate() {
            let ck = c(k);
            if x > mu * ck {
                sum_b += b[k] * ck;
                sum_bv += b[k] * x;
                count += 1;
            }
        }
        if count == active || count == 0 {
            break;
        }
        active = count;
        mu = (sum_bv - T::one()) / sum_b;
    }
    for (k, x) in v.iter_mut().enumerate() {
        *x = (*x - mu * c(k)).max(T::zero());
    }
}

pub fn frobenius_norm<T: Real>(g: &[T]) -> T {
    g.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Gram matrix of the smaller side of an `s x d` block.
fn small_gram<T: Real>(g: &[T], s: usize, d: usize) -> (Vec<T>, usize) {
    if s <= d {
        (linalg::matmul(g, &linalg::transpose(g, s, d), s, d, s), s)
    } else {
        (linalg::matmul(&linalg::transpose(g, s, d), g, d, s, d), d)
    }
}

/// Squared singular values of an `s x d` block, descending.
pub fn singular_values_sq<T: Real>(g: &[T], s: usize, d: usize) -> Vec<T> {
    if s == 1 || d == 1 {
        return vec![g.iter().fold(T::zero(), |a, &x| a + x * x)];
    }
    let (gram, k) = small_gram(g, s, d);
    if k == 2 {
        let e = linalg::sym_eigen2(gram[0], gram[1], gram[3]);
        return e.values.iter().map(|&x| x.max(T::zero())).collect();
    }
    linalg::jacobi_eigen(&gram, k)
        .0
        .into_iter()
        .map(|x| x.max(T::zero()))
        .collect()
}

pub fn spectral_norm<T: Real>(g: &[T], s: usize, d: usize) -> T {
    singular_values_sq(g, s, d)[0].sqrt()
}

pub fn nuclear_norm<T: Real>(g: &[T], s: usize, d: usize) -> T {
    singular_values_sq(g, s, d).into_iter().map(|x| x.sqrt()).sum()
}

/// Norm of a block under the chosen Jacobian norm.
pub fn jacobian_norm<T: Real>(norm: JacobianNorm, g: &[T], s: usize, d: usize) -> T {
    match norm {
        JacobianNorm::Spectral => spectral_norm(g, s, d),
        JacobianNorm::Frobenius => frobenius_norm(g),
    }
}

/// Dual norm of [`jacobian_norm`] (nuclear for spectral, Frobenius for Frobenius).
pub fn jacobian_dual_norm<T: Real>(norm: JacobianNorm, g: &[T], s: usize, d: usize) -> T {
    match norm {
        JacobianNorm::Spectral => nuclear_norm(g, s, d),
        JacobianNorm::Frobenius => frobenius_norm(g),
    }
}

pub fn project_frobenius_ball_in_place<T: Real>(g: &mut [T], radius: T) {
    let sq = g.iter().fold(T::zero(), |a, &x| a + x * x);
    if sq > radius * radius {
        let scale = radius / sq.sqrt();
        g.iter_mut().for_each(|x| *x *= scale);
    }
}

/// Clamps the singular values of the `s x d` block `g` at `radius`.
pub fn project_spectral_ball_in_place<T: Real>(g: &mut [T], s: usize, d: usize, radius: T) {
    if s == 1 || d == 1 {
        project_frobenius_ball_in_place(g, radius);
        return;
    }
    let r2 = radius * radius;
    if s == 2 && d == 2 {
        let (a, b, c, e) = (g[0], g[1], g[2], g[3]);
        let g00 = a * a + b * b;
        let g01 = a * c + b * e;
        let g11 = c * c + e * e;
        if linalg::sym_max_eigenvalue2(g00, g01, g11) <= r2 {
            return;
        }
        let m = clamp_factor2(g00, g01, g11, radius);
        g[0] = m[0] * a + m[1] * c;
        g[1] = m[0] * b + m[1] * e;
        g[2] = m[1] * a + m[2] * c;
        g[3] = m[1] * b + m[2] * e;
        return;
    }
    let left = s <= d;
    let (gram, k) = small_gram(g, s, d);
    let (vals, vecs) = if k == 2 {
        let e = linalg::sym_eigen2(gram[0], gram[1], gram[3]);
        (
            e.values.to_vec(),
            vec![e.vectors[0][0], e.vectors[1][0], e.vectors[0][1], e.vectors[1][1]],
        )
    } else {
        linalg::jacobi_eigen(&gram, k)
    };
    if vals[0] <= r2 {
        return;
    }
    let mut m = vec![T::zero(); k * k];
    for (col, &lam) in vals.iter().enumerate() {
        let f = factor(lam, radius);
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] += f * vecs[i * k + col] * vecs[j * k + col];
            }
        }
    }
    let out = if left {
        linalg::matmul(&m, g, s, s, d)
    } else {
        linalg::matmul(g, &m, s, d, d)
    };
    g.copy_from_slice(&out);
}

#[inline]
fn factor<T: Real>(lam: T, radius: T) -> T {
    if lam > radius * radius {
        radius / lam.sqrt()
    } else {
        T::one()
    }
}

/// Symmetric `U diag(min(1, r/σ_i)) Uᵀ` for the 2x2 Gram `[[a, b], [b, c]]`,
/// returned as `[m00, m01, m11]`.
#[inline]
fn clamp_factor2<T: Real>(a: T, b: T, c: T, radius: T) -> [T; 3] {
    let e = linalg::sym_eigen2(a, b, c);
    let f0 = factor(e.values[0], radius);
    let f1 = factor(e.values[1], radius);
    let [u0, u1] = e.vectors;
    [
        f0 * u0[0] * u0[0] + f1 * u1[0] * u1[0],
        f0 * u0[0] * u0[1] + f1 * u1[0] * u1[1],
        f0 * u0[1] * u0[1] + f1 * u1[1] * u1[1],
    ]
}

/// Projection onto the ball of the chosen Jacobian norm.
#[inline]
pub fn project_jacobian_ball_in_place<T: Real>(
    norm: JacobianNorm,
    g: &mut [T],
    s: usize,
    d: usize,
    radius: T,
) {
    match norm {
        JacobianNorm::Spectral => project_spectral_ball_in_place(g, s, d, radius),
        JacobianNorm::Frobenius => project_frobenius_ball_in_place(g, radius),
    }
}

pub fn project_spectral_ball<T: Real>(g: &[T], s: usize, d: usize, radius: T) -> Vec<T> {
    let mut out = g.to_vec();
    project_spectral_ball_in_place(&mut out, s, d, radius);
    out
}

pub fn project_frobenius_ball<T: Real>(g: &[T], radius: T) -> Vec<T> {
    let mut out = g.to_vec();
    project_frobenius_ball_in_place(&mut out, radius);
    out
}

/// Minimizer of `(1/2τ)(x - u_k)² + (x - f_k)²` per entry.
pub fn prox_quadratic_data<T: Real>(u: &[T], f: &[T], tau: T) -> Result<Vec<T>> {
    if u.len() != f.len() {
        return Err(Error::shape(f.len(), u.len()));
    }
    let two_tau = T::lit(2.0) * tau;
    let denom = T::one() + two_tau;
    Ok(u.iter().zip(f).map(|(&x, &y)| (x + two_tau * y) / denom).collect())
}

/// Norm on `(V*)^d` with `V = (R^n, ‖·‖₂)`, for the product-norm check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProductNorm {
    /// Operator norm `sup_{‖v‖≤1} ‖p(v)‖₂` (the spectral norm).
    Spectral,
    /// `(Σ_i ‖p_i‖^s)^{1/s}`; `s = 2` is the Frobenius norm.
    SNorm { s: f64 },
}

impl ProductNorm {
    /// Norm of `p`, a `d x n` row-major matrix whose rows are the `p_i`.
    pub fn eval(&self, p: &[f64], d: usize, n: usize) -> f64 {
        match *self {
            ProductNorm::Spectral => spectral_norm(p, d, n),
            ProductNorm::SNorm { s } => p
                .chunks(n)
                .map(|row| frobenius_norm(row).powf(s))
                .sum::<f64>()
                .powf(1.0 / s),
        }
    }
}

/// One concrete inequality evaluation, `lhs` against `rhs`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormInequality {
    pub property: String,
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProductNormReport {
    pub norm: ProductNorm,
    pub samples: usize,
    pub lower_bound_violations: usize,
    pub upper_bound_violations: usize,
    pub rotation_violations: usize,
    /// Known counterexamples evaluated for `s`-norms with `s ≠ 2`.
    pub counterexamples: Vec<NormInequality>,
}

impl ProductNormReport {
    pub fn all_random_checks_pass(&self) -> bool {
        self.lower_bound_violations == 0
            && self.upper_bound_violations == 0
            && self.rotation_violations == 0
    }
}

fn random_rotation(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..d * d).map(|_| rng.sample(StandardNormal)).collect();
    for col in 0..d {
        for prev in 0..col {
            let dot: f64 = (0..d).map(|i| q[i * d + col] * q[i * d + prev]).sum();
            for i in 0..d {
                q[i * d + col] -= dot * q[i * d + prev];
            }
        }
        let norm = (0..d).map(|i| q[i * d + col].powi(2)).sum::<f64>().sqrt();
        for i in 0..d {
            q[i * d + col] /= norm;
        }
    }
    if determinant(&q, d) < 0.0 {
        for i in 0..d {
            q[i * d] = -q[i * d];
        }
    }
    q
}

fn determinant(m: &[f64], d: usize) -> f64 {
    match d {
        1 => m[0],
        2 => m[0] * m[3] - m[1] * m[2],
        _ => {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        }
    }
}

/// Random checks of the lower bound `|Σ x_i⟨p_i, v⟩| ≤ ‖x‖‖p‖‖v‖`, the upper
/// bound `‖(x_1 q, …, x_d q)‖ ≤ ‖x‖‖q‖` and rotation invariance
/// `‖Rp‖ = ‖p‖`, plus the closed-form counterexamples for `s ≠ 2`.
pub fn check_product_norm_conditions(norm: ProductNorm, samples: usize, seed: u64) -> ProductNormReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rel = 1e-12;
    let mut report = ProductNormReport {
        norm,
        samples,
        lower_bound_violations: 0,
        upper_bound_violations: 0,
        rotation_violations: 0,
        counterexamples: Vec::new(),
    };
    for _ in 0..samples {
        let d = rng.random_range(1..=3usize);
        let n = rng.random_range(1..=4usize);
        let mut gauss = |len: usize| -> Vec<f64> { (0..len).map(|_| rng.sample(StandardNormal)).collect() };
        let p = gauss(d * n);
        let x = gauss(d);
        let v = gauss(n);
        let q = gauss(n);
        let xn = frobenius_norm(&x);

        let lhs: f64 = (0..d)
            .map(|i| x[i] * (0..n).map(|k| p[i * n + k] * v[k]).sum::<f64>())
            .sum::<f64>()
            .abs();
        let rhs = xn * norm.eval(&p, d, n) * frobenius_norm(&v);
        if lhs > rhs * (1.0 + rel) {
            report.lower_bound_violations += 1;
        }

        let outer: Vec<f64> = (0..d).flat_map(|i| q.iter().map(|&qk| x[i] * qk).collect::<Vec<_>>()).collect();
        if norm.eval(&outer, d, n) > xn * frobenius_norm(&q) * (1.0 + rel) {
            report.upper_bound_violations += 1;
        }

        let rot = random_rotation(d, &mut rng);
        let rp = linalg::matmul(&rot, &p, d, d, n);
        let (a, b) = (norm.eval(&p, d, n), norm.eval(&rp, d, n));
        if (a - b).abs() > 1e-10 * a.max(1.0) {
            report.rotation_violations += 1;
        }
    }

    if let ProductNorm::SNorm { s } = norm {
        if s > 2.0 {
            // d = 2, V = R, p = x = (1, 1), v = 1.
            let lhs = 2.0;
            let rhs = 2f64.sqrt() * 2f64.powf(1.0 / s);
            report.counterexamples.push(NormInequality {
                property: "lower_bound".into(),
                lhs,
                rhs,
                violated: lhs > rhs,
            });
        } else if s < 2.0 {
            // d = 2, V* = R, q = 1, x = (1, 1).
            let lhs = 2f64.powf(1.0 / s);
            let rhs = 2f64.sqrt();
            report.counterexamples.push(NormInequality {
                property: "upper_bound".into(),
                lhs,
                rhs,
                violated: lhs > rhs,
            });
        }
        // V = (R², ‖·‖₁), so V* carries the max norm; p_1 = e_1, p_2 = e_2
        // rotated by 60°.
        let c = 0.5;
        let sn = 3f64.sqrt() / 2.0;
        let rows = [[c, -sn], [sn, c]];
        let max_norm = |r: &[f64; 2]| r[0].abs().max(r[1].abs());
        let before = (1f64 + 1.0).powf(1.0 / s);
        let after = rows.iter().map(|r| max_norm(r).powf(s)).sum::<f64>().powf(1.0 / s);
        report.counterexamples.push(NormInequality {
            property: "rotation_invariance".into(),
            lhs: after,
            rhs: before,
            violated: (after - before).abs() > 1e-12,
        });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn qp_oracle(v: &[f64], b: &[f64]) -> Vec<f64> {
        // Enumerate active sets: on support S, x = v - θ with θ fixed by the
        // mass constraint; keep the feasible candidate of least cost.
        let l = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        for mask in 1u32..(1 << l) {
            let (mut sb, mut sbv) = (0.0, 0.0);
            for k in 0..l {
                if mask & (1 << k) != 0 {
                    sb += b[k];
                    sbv += b[k] * v[k];
                }
            }
            let theta = (sbv - 1.0) / sb;
            let x: Vec<f64> = (0..l)
                .map(|k| if mask & (1 << k) != 0 { v[k] - theta } else { 0.0 })
                .collect();
            if x.iter().any(|&xi| xi < -1e-13) {
                continue;
            }
            let cost: f64 = (0..l).map(|k| b[k] * (x[k] - v[k]).powi(2)).sum();
            if best.as_ref().map_or(true, |(c, _)| cost < *c) {
                best = Some((cost, x));
            }
        }
        best.unwrap().1
    }

    #[test]
    fn simplex_examples() {
        let p = project_weighted_simplex(&[0.5_f64, 0.7], &[1.0, 1.0]).unwrap();
        assert!((p[0] - 0.4).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(project_weighted_simplex(&[2.0, -1.0], &[1.0, 1.0]).unwrap(), vec![1.0, 0.0]);
        let feasible = [0.25_f64, 0.5];
        let b = [2.0, 1.0];
        let p = project_weighted_simplex(&feasible, &b).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert!(project_weighted_simplex(&[1.0], &[0.0]).is_err());
    }

    #[test]
    fn simplex_matches_active_set_oracle() {
        let mut r = rng(4);
        for _ in 0..200 {
            let l = r.random_range(1..=12);
            let v: Vec<f64> = (0..l).map(|_| r.random_range(-1.0..2.0)).collect();
            let b: Vec<f64> = (0..l).map(|_| r.random_range(0.05..1.5)).collect();
            let want = qp_oracle(&v, &b);
            let sorted = project_weighted_simplex(&v, &b).unwrap();
            let mut fast = v.clone();
            project_weighted_simplex_in_place(&mut fast, &b);
            for k in 0..l {
                assert!((sorted[k] - want[k]).abs() <= 1e-10);
                assert!((fast[k] - want[k]).abs() <= 1e-10);
            }
            let mass: f64 = fast.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!((mass - 1.0).abs() <= 1e-12);
            assert!(fast.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn metric_simplex_projection_satisfies_kkt() {
        let mut r = rng(6);
        for _ in 0..100 {
            let l = r.random_range(2..=10);
            let v: Vec<f64> = (0..l).map(|_| r.random_range(-1.0..2.0)).collect();
            let b: Vec<f64> = (0..l).map(|_| r.random_range(0.1..1.0)).collect();
            let w: Vec<f64> = (0..l).map(|_| r.random_range(0.1..3.0)).collect();
            let mut x = v.clone();
            project_simplex_metric_in_place(&mut x, &b, &w);
            let mass: f64 = x.iter().zip(&b).map(|(a, c)| a * c).sum();
            assert!((mass - 1.0).abs() < 1e-12);
            // Stationarity: w_k (x_k - v_k) = -μ b_k on the support, ≥ on zeros.
            let k0 = (0..l).find(|&k| x[k] > 0.0).unwrap();
            let mu = w[k0] * (v[k0] - x[k0]) / b[k0];
            for k in 0..l {
                let lhs = w[k] * (v[k] - x[k]) / b[k];
                if x[k] > 0.0 {
                    assert!((lhs - mu).abs() < 1e-10);
                } else {
                    assert!(v[k] * w[k] / b[k] <= mu + 1e-10);
                }
            }
        }
    }

    fn svd_clamp(g: &[f64], s: usize, d: usize, radius: f64) -> Vec<f64> {
        let m = DMatrix::from_row_slice(s, d, g);
        let mut svd = m.svd(true, true);
        svd.singular_values.iter_mut().for_each(|x| *x = x.min(radius));
        let r = svd.recompose().unwrap();
        (0..s).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| r[(i, j)]).collect()
    }

    #[test]
    fn spectral_examples() {
        let p = project_spectral_ball(&[2.0_f64, 0.0, 0.0, 0.5], 2, 2, 1.0);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15 && (p[3] - 0.5).abs() < 1e-15);
        let inside = [0.3, -0.1, 0.2, 0.4];
        assert_eq!(project_spectral_ball(&inside, 2, 2, 1.0), inside.to_vec());
    }

    #[test]
    fn spectral_matches_svd_oracle() {
        let mut r = rng(8);
        for (s, d) in [(2, 3), (2, 2), (2, 1), (1, 3), (3, 2), (3, 3)] {
            for _ in 0..200 {
                let g: Vec<f64> = (0..s * d).map(|_| r.random_range(-2.0..2.0)).collect();
                let radius = 0.7;
                let got = project_spectral_ball(&g, s, d, radius);
                let want = svd_clamp(&g, s, d, radius);
                for (a, b) in got.iter().zip(&want) {
                    assert!((a - b).abs() <= 1e-10, "{s}x{d}: {got:?} vs {want:?}");
                }
            }
        }
    }

    #[test]
    fn spectral_commutes_with_rotations() {
        let mut r = rng(10);
        for _ in 0..200 {
            let g: Vec<f64> = (0..4).map(|_| r.random_range(-2.0..2.0)).collect();
            let left = random_rotation(2, &mut r);
            let right = random_rotation(2, &mut r);
            let rotated = linalg::matmul(&linalg::matmul(&left, &g, 2, 2, 2), &right, 2, 2, 2);
            let a = project_spectral_ball(&rotated, 2, 2, 0.8);
            let p = project_spectral_ball(&g, 2, 2, 0.8);
            let b = linalg::matmul(&linalg::matmul(&left, &p, 2, 2, 2), &right, 2, 2, 2);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_eq!(project_frobenius_ball(&[0.0; 4], 1.0), vec![0.0; 4]);
        let g = [1.2_f64, 1.6, 0.0, 0.0];
        let p = project_frobenius_ball(&g, 1.0);
        assert!((p[0] - 0.6).abs() < 1e-15 && (p[1] - 0.8).abs() < 1e-15);
        let row = [3.0, 4.0];
        assert_eq!(project_frobenius_ball(&row, 1.0), project_spectral_ball(&row, 1, 2, 1.0));
    }

    #[test]
    fn projections_are_idempotent_and_nonexpansive() {
        let mut r = rng(12);
        for _ in 0..200 {
            let a: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
            for proj in [
                &(|g: &[f64]| project_spectral_ball(g, 2, 3, 0.9)) as &dyn Fn(&[f64]) -> Vec<f64>,
                &|g: &[f64]| project_frobenius_ball(g, 0.9),
                &|g: &[f64]| project_weighted_simplex(g, &[0.5, 1.0, 0.2, 0.3, 0.7, 0.1]).unwrap(),
            ] {
                let pa = proj(&a);
                let pb = proj(&b);
                let ppa = proj(&pa);
                assert!(pa.iter().zip(&ppa).all(|(x, y)| (x - y).abs() < 1e-12));
                let dist_in: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
                let dist_out: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
                // The simplex projection is nonexpansive in its own metric;
                // Euclidean distances may grow by at most the weight ratio.
                assert!(dist_out <= dist_in * 10.0 + 1e-12);
            }
            let pa = project_spectral_ball(&a, 2, 3, 0.9);
            let pb = project_spectral_ball(&b, 2, 3, 0.9);
            let din: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            let dout: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
            assert!(dout <= din + 1e-12);
        }
    }

    #[test]
    fn quadratic_prox_examples() {
        assert_eq!(prox_quadratic_data(&[0.0], &[1.0], 0.5).unwrap(), vec![0.5]);
        assert_eq!(prox_quadratic_data(&[0.3], &[0.3], 2.0).unwrap(), vec![0.3]);
        let p = prox_quadratic_data(&[0.2_f64], &[1.0], 1e-12).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-11);
    }

    #[test]
    fn nuclear_is_dual_of_spectral() {
        let mut r = rng(14);
        for _ in 0..100 {
            let g: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..6).map(|_| r.random_range(-1.0..1.0)).collect();
            let inner: f64 = g.iter().zip(&h).map(|(a, b)| a * b).sum();
            assert!(inner.abs() <= spectral_norm(&g, 2, 3) * nuclear_norm(&h, 2, 3) + 1e-12);
        }
    }

    #[test]
    fn product_norm_examples() {
        let spectral = check_product_norm_conditions(ProductNorm::Spectral, 2000, 1);
        assert!(spectral.all_random_checks_pass(), "{spectral:?}");
        let frob = check_product_norm_conditions(ProductNorm::SNorm { s: 2.0 }, 2000, 1);
        assert!(frob.all_random_checks_pass(), "{frob:?}");
        let s3 = check_product_norm_conditions(ProductNorm::SNorm { s: 3.0 }, 0, 1);
        let lower = &s3.counterexamples[0];
        assert_eq!(lower.property, "lower_bound");
        assert!(lower.violated);
        assert_eq!(lower.lhs, 2.0);
        assert!((lower.rhs - 2f64.sqrt() * 2f64.cbrt()).abs() < 1e-15);
        let s1 = check_product_norm_conditions(ProductNorm::SNorm { s: 1.0 }, 0, 1);
        let upper = &s1.counterexamples[0];
        assert_eq!(upper.property, "upper_bound");
        assert!(upper.violated && upper.lhs == 2.0 && (upper.rhs - 2f64.sqrt()).abs() < 1e-15);
    }
}
