//! Exact Wasserstein-1 distances between discrete measures.
//!
//! Measures are given as densities `u` with respect to the cell volumes `b`
//! of a [`MetricSpace`], so cell `k` carries mass `b_k u_k`.

use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};

use crate::error::{Error, Result};
use crate::metric_space::MetricSpace;
use crate::network_simplex::NetworkSimplex;
use crate::real::Real;

/// Allowed difference in total mass between two measures.
pub const MASS_TOL: f64 = 1e-9;

/// Largest space accepted by [`wasserstein_median_bruteforce`].
pub const MEDIAN_MAX_POINTS: usize = 42;

/// Checks that `u` is a nonnegative density on `space`; returns its mass.
pub fn check_density<T: Real>(u: &[T], space: &MetricSpace<T>) -> Result<T> {
    if u.len() != space.len() {
        return Err(Error::shape(space.len(), u.len()));
    }
    let mut mass = T::zero();
    for (k, (&x, &b)) in u.iter().zip(space.volumes()).enumerate() {
        if !(x >= T::zero()) || !x.is_finite() {
            return Err(Error::NegativeDensity {
                cell: k,
                value: x.to_f64_lossy(),
            });
        }
        mass += b * x;
    }
    Ok(mass)
}

fn signed_masses<T: Real>(mu: &[T], nu: &[T], space: &MetricSpace<T>) -> Result<Vec<T>> {
    let m1 = check_density(mu, space)?;
    let m2 = check_density(nu, space)?;
    if (m1 - m2).abs() > T::lit(MASS_TOL) {
        return Err(Error::MassMismatch {
            left: m1.to_f64_lossy(),
            right: m2.to_f64_lossy(),
            tol: MASS_TOL,
        });
    }
    Ok(mu
        .iter()
        .zip(nu)
        .zip(space.volumes())
        .map(|((&a, &c), &b)| b * (a - c))
        .collect())
}

/// Optimal transport plan between two measures.
#[derive(Debug, Clone)]
pub struct TransportPlan<T> {
    pub cost: T,
    /// `(from, to, mass)` triples with positive mass.
    pub moves: Vec<(usize, usize, T)>,
}

/// Exact W1 distance by network simplex on the bipartite graph from cells
/// with excess mass to cells with deficit.
pub fn w1_lp<T: Real>(mu: &[T], nu: &[T], space: &MetricSpace<T>) -> Result<T> {
    Ok(w1_plan(mu, nu, space)?.cost)
}

pub fn w1_plan<T: Real>(mu: &[T], nu: &[T], space: &MetricSpace<T>) -> Result<TransportPlan<T>> {
    let diff = signed_masses(mu, nu, space)?;
    let sources: Vec<usize> = (0..diff.len()).filter(|&k| diff[k] > T::zero()).collect();
    let sinks: Vec<usize> = (0..diff.len()).filter(|&k| diff[k] < T::zero()).collect();
    if sources.is_empty() || sinks.is_empty() {
        return Ok(TransportPlan {
            cost: T::zero(),
            moves: Vec::new(),
        });
    }
    // The two masses agree only up to MASS_TOL; push the rounding residue
    // onto the largest sink so the flow problem is exactly balanced.
    let mut supply: Vec<T> = sources.iter().chain(&sinks).map(|&k| diff[k]).collect();
    let residue: T = supply.iter().copied().sum();
    let largest_sink = (sources.len()..supply.len())
        .min_by(|&a, &b| supply[a].partial_cmp(&supply[b]).unwrap())
        .unwrap();
    supply[largest_sink] -= residue;
    let mut ns = NetworkSimplex::new(supply);
    let mut arcs = Vec::with_capacity(sources.len() * sinks.len());
    for (si, &a) in sources.iter().enumerate() {
        for (ti, &b) in sinks.iter().enumerate() {
            ns.add_arc(si, sources.len() + ti, space.distance(a, b));
            arcs.push((a, b));
        }
    }
    let sol = ns.solve()?;
    let moves = arcs
        .into_iter()
        .zip(sol.flow)
        .filter(|(_, f)| *f > T::zero())
        .map(|((a, b), f)| (a, b, f))
        .collect();
    Ok(TransportPlan {
        cost: sol.cost,
        moves,
    })
}

/// Dual solution of the W1 problem.
#[derive(Debug, Clone)]
pub struct W1Dual {
    pub value: f64,
    /// 1-Lipschitz potential attaining the supremum, pinned to zero at cell 0.
    pub potential: Vec<f64>,
}

/// W1 distance as the supremum of `⟨p, mu - nu⟩_b` over potentials with
/// `p_a - p_b ≤ d(a, b)` for all pairs, solved as a dense LP.
pub fn w1_dual<T: Real>(mu: &[T], nu: &[T], space: &MetricSpace<T>) -> Result<W1Dual> {
    let diff = signed_masses(mu, nu, space)?;
    let l = diff.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let vars: Vec<_> = (0..l)
        .map(|k| {
            let bounds = if k == 0 {
                (0.0, 0.0)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            lp.add_var(diff[k].to_f64_lossy(), bounds)
        })
        .collect();
    for a in 0..l {
        for b in 0..l {
            if a != b {
                let mut e = LinearExpr::empty();
                e.add(vars[a], 1.0);
                e.add(vars[b], -1.0);
                lp.add_constraint(e, ComparisonOp::Le, space.distance(a, b).to_f64_lossy());
            }
        }
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::LinearProgram(e.to_string()))?;
    Ok(W1Dual {
        value: sol.objective(),
        potential: vars.iter().map(|&v| sol[v]).collect(),
    })
}

/// A measure minimizing `Σ_i W1(f_i, u)`, by one joint transport LP.
pub fn wasserstein_median_bruteforce<T: Real>(
    measures: &[&[T]],
    space: &MetricSpace<T>,
) -> Result<Vec<T>> {
    let l = space.len();
    if l > MEDIAN_MAX_POINTS {
        return Err(Error::Capacity(format!(
            "median oracle supports at most {MEDIAN_MAX_POINTS} points, space has {l}"
        )));
    }
    if measures.is_empty() {
        return Err(Error::InvalidArgument("median of an empty set".into()));
    }
    let mut total = None;
    for f in measures {
        let mass = check_density(f, space)?;
        let first = *total.get_or_insert(mass);
        if (mass - first).abs() > T::lit(MASS_TOL) {
            return Err(Error::MassMismatch {
                left: first.to_f64_lossy(),
                right: mass.to_f64_lossy(),
                tol: MASS_TOL,
            });
        }
    }
    let total = total.unwrap().to_f64_lossy();
    let b: Vec<f64> = space.volumes().iter().map(|x| x.to_f64_lossy()).collect();

    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let median: Vec<_> = (0..l).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
    let mut sum = LinearExpr::empty();
    for &m in &median {
        sum.add(m, 1.0);
    }
    lp.add_constraint(sum, ComparisonOp::Eq, total);
    for f in measures {
        let plan: Vec<Vec<_>> = (0..l)
            .map(|a| {
                (0..l)
                    .map(|c| lp.add_var(space.distance(a, c).to_f64_lossy(), (0.0, f64::INFINITY)))
                    .collect()
            })
            .collect();
        for a in 0..l {
            let mut row = LinearExpr::empty();
            for c in 0..l {
                row.add(plan[a][c], 1.0);
            }
            lp.add_constraint(row, ComparisonOp::Eq, b[a] * f[a].to_f64_lossy());
        }
        for c in 0..l {
            let mut col = LinearExpr::empty();
            for a in 0..l {
                col.add(plan[a][c], 1.0);
            }
            col.add(median[c], -1.0);
            lp.add_constraint(col, ComparisonOp::Eq, 0.0);
        }
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::LinearProgram(e.to_string()))?;
    Ok(median
        .iter()
        .zip(&b)
        .map(|(&m, &bk)| T::lit(sol[m].max(0.0) / bk))
        .collect())
}

/// Weighted L1 distance `Σ_k b_k |u_k - v_k|`.
pub fn l1_distance<T: Real>(u: &[T], v: &[T], space: &MetricSpace<T>) -> T {
    u.iter()
        .zip(v)
        .zip(space.volumes())
        .fold(T::zero(), |acc, ((&a, &c), &b)| acc + b * (a - c).abs())
}

/// Density of a unit point mass at cell `k`.
pub fn dirac<T: Real>(space: &MetricSpace<T>, k: usize) -> Vec<T> {
    let mut u = vec![T::zero(); space.len()];
    u[k] = T::one() / space.volumes()[k];
    u
}
