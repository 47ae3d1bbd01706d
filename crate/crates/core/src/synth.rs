//! Synthetic measure-valued images: rotating unimodal rows, a crossing-fiber
//! phantom, two-point cartoons, and multiplicative noise.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image_grid::Grid;
use crate::metric_space::{MetricSpace, SpaceKind};
use crate::models::MeasureImage;
use crate::real::Real;
use crate::transport::dirac;

pub const DEFAULT_KAPPA: f64 = 20.0;

/// Side length of the crossing-fiber phantom.
pub const CROSSING_SIZE: usize = 15;
/// Half-width of both fiber bundles, in voxels.
pub const BUNDLE_HALF_WIDTH: f64 = 1.5;
/// Radius of the curved bundle.
pub const ARC_RADIUS: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PhantomKind {
    /// `1 × n` row whose main direction turns linearly in the xy-plane from
    /// 0 to `angle_range` degrees.
    RotatingRow { n: usize, angle_range: f64 },
    /// Square image with a straight horizontal bundle and a circular arc
    /// bundle crossing it in the center at 60°.
    CrossingFibers { size: usize },
    /// `1_U δ_0 + (1 - 1_U) δ_1` for the region mask `U`.
    TwoPointCartoon { shape: Vec<usize>, region: Vec<bool> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    #[serde(flatten)]
    pub kind: PhantomKind,
    pub kappa: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn rotating_row(n: usize, angle_range: f64) -> Self {
        Self {
            kind: PhantomKind::RotatingRow { n, angle_range },
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }

    pub fn crossing_fibers() -> Self {
        Self {
            kind: PhantomKind::CrossingFibers { size: CROSSING_SIZE },
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }

    /// 1D cartoon of length `n` with `U` the middle `n / 2` voxels.
    pub fn two_point_interval(n: usize) -> Self {
        let region = (0..n).map(|i| i >= n / 4 && i < n / 4 + n / 2).collect();
        Self {
            kind: PhantomKind::TwoPointCartoon { shape: vec![n], region },
            kappa: DEFAULT_KAPPA,
            seed: 0,
        }
    }

    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        match &self.kind {
            PhantomKind::RotatingRow { n, .. } => vec![*n],
            PhantomKind::CrossingFibers { size } => vec![*size, *size],
            PhantomKind::TwoPointCartoon { shape, .. } => shape.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0) || !self.kappa.is_finite() {
            return Err(Error::InvalidArgument(format!("kappa must be positive, got {}", self.kappa)));
        }
        let shape = self.grid_shape();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidArgument(format!("shape must be positive, got {shape:?}")));
        }
        if let PhantomKind::TwoPointCartoon { region, .. } = &self.kind {
            let n: usize = shape.iter().product();
            if region.len() != n {
                return Err(Error::shape(n, region.len()));
            }
        }
        Ok(())
    }
}

/// Ground-truth fiber directions and bundle labels, stored as a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub shape: Vec<usize>,
    /// Unit vectors per voxel (0, 1 or 2).
    pub directions: Vec<Vec<[f64; 3]>>,
    /// Per-voxel bundle membership bitmask (bit 0 straight, bit 1 arc).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub bundles: Vec<u8>,
}

impl GroundTruth {
    /// Voxels carrying at least one fiber.
    pub fn fiber_voxels(&self) -> Vec<usize> {
        (0..self.directions.len())
            .filter(|&i| !self.directions[i].is_empty())
            .collect()
    }
}

/// Antipodally symmetric von Mises–Fisher density around `direction`,
/// normalized against the cell volumes.
pub fn make_unimodal<T: Real>(direction: [f64; 3], kappa: f64, space: &MetricSpace<T>) -> Result<Vec<T>> {
    if !(kappa > 0.0) {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    let norm = (direction[0].powi(2) + direction[1].powi(2) + direction[2].powi(2)).sqrt();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::InvalidArgument("direction must be a nonzero vector".into()));
    }
    let dir = direction.map(|x| x / norm);
    let mut u = Vec::with_capacity(space.len());
    for k in 0..space.len() {
        let z = space
            .point3(k)
            .ok_or_else(|| Error::InvalidArgument("unimodal densities need a sphere or circle".into()))?;
        let c = (0..3).map(|a| dir[a] * z[a].to_f64_lossy()).sum::<f64>();
        u.push((kappa * (c - 1.0)).exp() + (kappa * (-c - 1.0)).exp());
    }
    let mass: f64 = u.iter().zip(space.volumes()).map(|(x, b)| x * b.to_f64_lossy()).sum();
    Ok(u.into_iter().map(|x| T::lit(x / mass)).collect())
}

/// Equal-weight mixture of unimodal densities.
pub fn make_mixture<T: Real>(directions: &[[f64; 3]], kappa: f64, space: &MetricSpace<T>) -> Result<Vec<T>> {
    if directions.is_empty() {
        let v = T::one() / space.total_volume();
        return Ok(vec![v; space.len()]);
    }
    let w = T::one() / T::from_usize_lossy(directions.len());
    let mut out = vec![T::zero(); space.len()];
    for dir in directions {
        for (o, x) in out.iter_mut().zip(make_unimodal(*dir, kappa, space)?) {
            *o += w * x;
        }
    }
    Ok(out)
}

/// In-plane unit vector at `deg` degrees from the x-axis.
pub fn planar_direction(deg: f64) -> [f64; 3] {
    let a = deg.to_radians();
    [a.cos(), a.sin(), 0.0]
}

/// Geometry of the crossing phantom: directions and bundle bits of the voxel
/// at row `r` (y) and column `c` (x).
fn crossing_voxel(size: usize, r: usize, c: usize) -> (Vec<[f64; 3]>, u8) {
    let mid = (size as f64 - 1.0) / 2.0;
    let (x, y) = (c as f64, r as f64);
    let mut dirs = Vec::new();
    let mut bits = 0;
    if (y - mid).abs() <= BUNDLE_HALF_WIDTH {
        dirs.push([1.0, 0.0, 0.0]);
        bits |= 1;
    }
    // Circle through the center whose tangent there is at 60°.
    let (sin30, cos30) = (0.5, 3f64.sqrt() / 2.0);
    let (cx, cy) = (mid - ARC_RADIUS * cos30, mid + ARC_RADIUS * sin30);
    let (dx, dy) = (x - cx, y - cy);
    let dist = (dx * dx + dy * dy).sqrt();
    if (dist - ARC_RADIUS).abs() <= BUNDLE_HALF_WIDTH {
        dirs.push([-dy / dist, dx / dist, 0.0]);
        bits |= 2;
    }
    (dirs, bits)
}

/// Builds the phantom on `grid`, which must have the shape `spec.grid_shape()`.
pub fn make_phantom<T: Real>(
    spec: &PhantomSpec,
    space: Arc<MetricSpace<T>>,
    grid: Grid<T>,
) -> Result<(MeasureImage<T>, GroundTruth)> {
    spec.validate()?;
    let shape = spec.grid_shape();
    if grid.shape() != shape.as_slice() {
        return Err(Error::shape(format!("{shape:?}"), format!("{:?}", grid.shape())));
    }
    let n = grid.len();
    let mut values = Vec::with_capacity(n * space.len());
    let mut directions = Vec::with_capacity(n);
    let mut bundles = Vec::new();
    match &spec.kind {
        PhantomKind::RotatingRow { n, angle_range } => {
            for i in 0..*n {
                let deg = if *n > 1 { angle_range * i as f64 / (*n - 1) as f64 } else { 0.0 };
                let dir = planar_direction(deg);
                values.extend(make_unimodal(dir, spec.kappa, &space)?);
                directions.push(vec![dir]);
            }
        }
        PhantomKind::CrossingFibers { size } => {
            for r in 0..*size {
                for c in 0..*size {
                    let (dirs, bits) = crossing_voxel(*size, r, c);
                    values.extend(make_mixture(&dirs, spec.kappa, &space)?);
                    directions.push(dirs);
                    bundles.push(bits);
                }
            }
        }
        PhantomKind::TwoPointCartoon { region, .. } => {
            if space.len() != 2 || space.kind() != SpaceKind::Finite {
                return Err(Error::InvalidArgument("two-point cartoons need the two-point space".into()));
            }
            let (inside, outside) = (dirac(&space, 0), dirac(&space, 1));
            for &in_u in region {
                values.extend_from_slice(if in_u { &inside } else { &outside });
                directions.push(Vec::new());
            }
        }
    }
    let image = MeasureImage::new(grid, space, values)?;
    Ok((
        image,
        GroundTruth {
            shape,
            directions,
            bundles,
        },
    ))
}

/// Multiplicative Gaussian noise of standard deviation `1 / snr` per entry,
/// clipped at zero and renormalized per voxel.
pub fn add_noise<T: Real>(image: &MeasureImage<T>, snr: f64, seed: u64) -> Result<MeasureImage<T>> {
    if !(snr > 0.0) {
        return Err(Error::InvalidArgument(format!("snr must be positive, got {snr}")));
    }
    let normal = Normal::new(0.0, 1.0 / snr).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let space = image.space();
    let l = space.len();
    let b = space.volumes();
    let mut values = image.values().to_vec();
    for row in values.chunks_mut(l) {
        let original = row.to_vec();
        for x in row.iter_mut() {
            let eps: f64 = normal.sample(&mut rng);
            *x = (*x * T::lit(1.0 + eps)).max(T::zero());
        }
        let mass = row.iter().zip(b).fold(T::zero(), |a, (&x, &bk)| a + x * bk);
        if mass > T::zero() {
            row.iter_mut().for_each(|x| *x /= mass);
        } else {
            row.copy_from_slice(&original);
        }
    }
    image.with_values(values)
}
