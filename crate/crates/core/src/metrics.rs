//! Evaluation of reconstructed orientation images: peaks, angular errors,
//! per-voxel W1 error maps and distance profiles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric_space::{MetricSpace, Points};
use crate::models::MeasureImage;
use crate::real::Real;
use crate::synth::{make_unimodal, planar_direction};
use crate::transport::{l1_distance, w1_lp};

pub const DEFAULT_REL_THRESHOLD: f64 = 0.5;
/// Error assigned to a ground-truth direction without an estimated partner.
pub const UNMATCHED_PENALTY_DEG: f64 = 90.0;
/// Peaks closer than this many mesh edges (up to sign) are merged.
pub const PEAK_MERGE_EDGES: f64 = 2.0;
const FLAT_RANGE: f64 = 1e-12;

/// Local maxima of `mu` over the mesh 1-ring, as unit vectors sorted by
/// density (descending). Antipodal copies and near duplicates are merged and
/// only peaks of at least `rel_threshold` times the global max are kept.
pub fn extract_peaks<T: Real>(mu: &[T], space: &MetricSpace<T>, rel_threshold: f64) -> Result<Vec<[f64; 3]>> {
    let Points::Sphere(points) = space.points() else {
        return Err(Error::InvalidArgument("peak extraction needs a sphere space".into()));
    };
    if mu.len() != space.len() {
        return Err(Error::shape(space.len(), mu.len()));
    }
    let vals: Vec<f64> = mu.iter().map(|v| v.to_f64_lossy()).collect();
    let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max - min > FLAT_RANGE) {
        return Ok(Vec::new());
    }
    let adjacency = space.adjacency();
    // ties on a plateau go to the lowest index
    let mut cands: Vec<usize> = (0..vals.len())
        .filter(|&k| {
            vals[k] >= rel_threshold * max
                && adjacency[k]
                    .iter()
                    .all(|&q| vals[k] > vals[q] || (vals[k] == vals[q] && k < q))
        })
        .collect();
    cands.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]).then(a.cmp(&b)));

    let merge = (PEAK_MERGE_EDGES * space.max_edge_length().to_f64_lossy()).cos();
    let mut peaks: Vec<[f64; 3]> = Vec::new();
    for k in cands {
        let p = points[k].map(|c| c.to_f64_lossy());
        if peaks.iter().all(|q| abs_cos(&p, q) < merge) {
            peaks.push(p);
        }
    }
    Ok(peaks)
}

fn abs_cos(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    ((a[0] * b[0] + a[1] * b[1] + a[2] * b[2]) / (na * nb)).abs().min(1.0)
}

/// Angle between two axes in degrees, in `[0, 90]`.
pub fn axis_angle_deg(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    abs_cos(a, b).acos().to_degrees()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngularErrorReport {
    /// Mean over voxels with ground truth, degrees.
    pub mean: f64,
    pub stddev: f64,
    /// Mean error per voxel; `None` where the ground truth is empty.
    pub per_voxel: Vec<Option<f64>>,
    /// Matched estimate/ground-truth pairs per voxel.
    pub matched: Vec<usize>,
    pub ground_truth_peaks: usize,
    pub unmatched_penalty: f64,
}

/// Greedy matching by smallest angle, one voxel at a time.
/// Returns the per-direction errors of `gt` and the match count.
pub fn match_voxel(est: &[[f64; 3]], gt: &[[f64; 3]], unmatched_penalty: f64) -> (Vec<f64>, usize) {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(est.len() * gt.len());
    for (a, e) in est.iter().enumerate() {
        for (b, g) in gt.iter().enumerate() {
            pairs.push((axis_angle_deg(e, g), a, b));
        }
    }
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0).then((x.1, x.2).cmp(&(y.1, y.2))));
    let mut used_e = vec![false; est.len()];
    let mut errors = vec![unmatched_penalty; gt.len()];
    let mut done = vec![false; gt.len()];
    let mut matched = 0;
    for (angle, a, b) in pairs {
        if used_e[a] || done[b] {
            continue;
        }
        used_e[a] = true;
        done[b] = true;
        errors[b] = angle;
        matched += 1;
    }
    (errors, matched)
}

pub fn angular_error(est: &[Vec<[f64; 3]>], gt: &[Vec<[f64; 3]>], unmatched_penalty: f64) -> Result<AngularErrorReport> {
    if est.len() != gt.len() {
        return Err(Error::shape(format!("{} voxels", gt.len()), format!("{} voxels", est.len())));
    }
    let mut per_voxel = Vec::with_capacity(gt.len());
    let mut matched = Vec::with_capacity(gt.len());
    let mut gt_peaks = 0;
    for (e, g) in est.iter().zip(gt) {
        if g.is_empty() {
            per_voxel.push(None);
            matched.push(0);
            continue;
        }
        let (errs, m) = match_voxel(e, g, unmatched_penalty);
        gt_peaks += g.len();
        per_voxel.push(Some(errs.iter().sum::<f64>() / errs.len() as f64));
        matched.push(m);
    }
    let vals: Vec<f64> = per_voxel.iter().flatten().copied().collect();
    let (mean, stddev) = mean_std(&vals);
    Ok(AngularErrorReport {
        mean,
        stddev,
        per_voxel,
        matched,
        ground_truth_peaks: gt_peaks,
        unmatched_penalty,
    })
}

/// Population mean and standard deviation; zeros for an empty slice.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Peaks of every voxel of `image`.
pub fn image_peaks<T: Real>(image: &MeasureImage<T>, rel_threshold: f64) -> Result<Vec<Vec<[f64; 3]>>> {
    (0..image.num_voxels())
        .into_par_iter()
        .map(|i| extract_peaks(image.row(i), image.space(), rel_threshold))
        .collect()
}

/// Exact per-voxel W1 distance between two images on the same grid and space.
pub fn w1_error_map<T: Real>(u: &MeasureImage<T>, reference: &MeasureImage<T>) -> Result<Vec<T>> {
    if u.grid().shape() != reference.grid().shape() {
        return Err(Error::shape(
            format!("{:?}", reference.grid().shape()),
            format!("{:?}", u.grid().shape()),
        ));
    }
    if u.space().tag() != reference.space().tag() {
        return Err(Error::shape(
            format!("{:?}", reference.space().tag()),
            format!("{:?}", u.space().tag()),
        ));
    }
    let space = u.space();
    (0..u.num_voxels())
        .into_par_iter()
        .map(|i| w1_lp(u.row(i), reference.row(i), space))
        .collect()
}

/// Mass of `u` on cells within `radius` of the support of `target`
/// (cells where `target` exceeds `support_tol`).
pub fn mass_near_support<T: Real>(u: &[T], target: &[T], space: &MetricSpace<T>, radius: T, support_tol: T) -> Result<T> {
    let l = space.len();
    if u.len() != l || target.len() != l {
        return Err(Error::shape(l, format!("{} and {}", u.len(), target.len())));
    }
    let support: Vec<usize> = (0..l).filter(|&k| target[k] > support_tol).collect();
    let vol = space.volumes();
    Ok((0..l)
        .filter(|&k| support.iter().any(|&q| space.distance(k, q) <= radius))
        .map(|k| vol[k] * u[k])
        .sum())
}

/// Largest cell mass `b_k u_k` of a row.
pub fn peak_mass<T: Real>(u: &[T], space: &MetricSpace<T>) -> T {
    u.iter()
        .zip(space.volumes())
        .map(|(&x, &b)| x * b)
        .fold(T::zero(), T::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceSample {
    pub angle_deg: f64,
    pub l1: f64,
    pub w1: f64,
}

/// L1 and W1 distances between a unimodal density at 0° and its copy rotated
/// in the xy-plane by each of `angles_deg`.
pub fn distance_curve<T: Real>(space: &MetricSpace<T>, kappa: f64, angles_deg: &[f64]) -> Result<Vec<DistanceSample>> {
    let f = make_unimodal(planar_direction(0.0), kappa, space)?;
    angles_deg
        .iter()
        .map(|&a| {
            let g = make_unimodal(planar_direction(a), kappa, space)?;
            Ok(DistanceSample {
                angle_deg: a,
                l1: l1_distance(&f, &g, space).to_f64_lossy(),
                w1: w1_lp(&f, &g, space)?.to_f64_lossy(),
            })
        })
        .collect()
}

/// Pearson correlation; `None` when either series is constant.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (mx, _) = mean_std(x);
    let (my, _) = mean_std(y);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
