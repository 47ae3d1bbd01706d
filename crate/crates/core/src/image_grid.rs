//! Voxel grids with forward differences, Neumann boundary conditions and the
//! matching negative divergence.
//!
//! Fields are stored voxel-major with the grid row-major (last axis fastest).
//! A field may carry several channels per voxel: a scalar field with `c`
//! channels has entry `(i, k)` at `i * c + k`, and its gradient has entry
//! `(i, k, t)` at `(i * c + k) * d + t`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

/// Voxels per parallel work item in the difference operators.
const PAR_MIN_VOXELS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub shape: Vec<usize>,
    #[serde(default = "default_spacing")]
    pub spacing: f64,
}

fn default_spacing() -> f64 {
    1.0
}

impl GridSpec {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            spacing: 1.0,
        }
    }
}

/// A validated `d`-dimensional voxel grid, `d ∈ {1, 2, 3}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T = f64> {
    shape: Vec<usize>,
    spacing: T,
    strides: Vec<usize>,
    /// Bit `t` set when the voxel has a successor along axis `t`.
    forward: Vec<u8>,
}

impl<T: Real> Grid<T> {
    pub fn new(shape: &[usize]) -> Result<Self> {
        Self::with_spacing(shape, T::one())
    }

    pub fn with_spacing(shape: &[usize], spacing: T) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::InvalidArgument(format!(
                "grid dimension must be 1, 2 or 3, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "grid shape {shape:?} has an empty axis"
            )));
        }
        if !(spacing > T::zero()) || !spacing.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "grid spacing must be positive, got {spacing}"
            )));
        }
        let d = shape.len();
        let mut strides = vec![1; d];
        for t in (0..d - 1).rev() {
            strides[t] = strides[t + 1] * shape[t + 1];
        }
        let n: usize = shape.iter().product();
        let forward = (0..n)
            .map(|i| {
                let mut mask = 0u8;
                for t in 0..d {
                    if (i / strides[t]) % shape[t] + 1 < shape[t] {
                        mask |= 1 << t;
                    }
                }
                mask
            })
            .collect();
        Ok(Self {
            shape: shape.to_vec(),
            spacing,
            strides,
            forward,
        })
    }

    pub fn from_spec(spec: &GridSpec) -> Result<Self> {
        Self::with_spacing(&spec.shape, T::lit(spec.spacing))
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            shape: self.shape.clone(),
            spacing: self.spacing.to_f64_lossy(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn spacing(&self) -> T {
        self.spacing
    }

    /// Spatial dimension `d`.
    pub fn dim(&self) -> usize {
        self.shape.len()
    }

    /// Number of voxels `n`.
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    /// Flat index of grid coordinates.
    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    pub fn coords(&self, i: usize) -> Vec<usize> {
        (0..self.dim())
            .map(|t| (i / self.strides[t]) % self.shape[t])
            .collect()
    }

    #[inline]
    pub fn has_forward(&self, i: usize, t: usize) -> bool {
        self.forward[i] & (1 << t) != 0
    }

    /// Whether voxel `i` has a neighbor before it along axis `t`.
    #[inline]
    pub fn has_backward(&self, i: usize, t: usize) -> bool {
        (i / self.strides[t]) % self.shape[t] > 0
    }

    /// Number of interior voxel faces, i.e. nonzero entries of a scalar gradient.
    pub fn num_faces(&self) -> usize {
        self.forward.iter().map(|m| m.count_ones() as usize).sum()
    }

    /// Forward differences of a `channels`-channel field into `out`.
    pub fn grad_into(&self, u: &[T], channels: usize, out: &mut [T]) -> Result<()> {
        let (n, d, c) = (self.len(), self.dim(), channels);
        check_len(u.len(), n * c)?;
        check_len(out.len(), n * c * d)?;
        let inv_h = T::one() / self.spacing;
        out.par_chunks_mut(c * d)
            .with_min_len(PAR_MIN_VOXELS)
            .enumerate()
            .for_each(|(i, o)| {
                for t in 0..d {
                    if self.has_forward(i, t) {
                        let next = i + self.strides[t];
                        for k in 0..c {
                            o[k * d + t] = (u[next * c + k] - u[i * c + k]) * inv_h;
                        }
                    } else {
                        for k in 0..c {
                            o[k * d + t] = T::zero();
                        }
                    }
                }
            });
        Ok(())
    }

    pub fn grad(&self, u: &[T], channels: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); u.len() * self.dim()];
        self.grad_into(u, channels, &mut out)?;
        Ok(out)
    }

    /// Negative divergence, the exact adjoint of [`Grid::grad_into`] under the
    /// unweighted Euclidean pairing.
    pub fn neg_div_into(&self, p: &[T], channels: usize, out: &mut [T]) -> Result<()> {
        let (n, d, c) = (self.len(), self.dim(), channels);
        check_len(p.len(), n * c * d)?;
        check_len(out.len(), n * c)?;
        let inv_h = T::one() / self.spacing;
        out.par_chunks_mut(c)
            .with_min_len(PAR_MIN_VOXELS)
            .enumerate()
            .for_each(|(i, o)| {
                for (k, ok) in o.iter_mut().enumerate() {
                    let mut acc = T::zero();
                    for t in 0..d {
                        let st = self.strides[t];
                        if (i / st) % self.shape[t] > 0 {
                            acc += p[((i - st) * c + k) * d + t];
                        }
                        if self.has_forward(i, t) {
                            acc -= p[(i * c + k) * d + t];
                        }
                    }
                    *ok = acc * inv_h;
                }
            });
        Ok(())
    }

    pub fn neg_div(&self, p: &[T], channels: usize) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); p.len() / self.dim().max(1)];
        self.neg_div_into(p, channels, &mut out)?;
        Ok(out)
    }

    /// Rotates a 2D `channels`-channel field by 90° counter-clockwise in the
    /// index plane: voxel `(r, c)` moves to `(n_c - 1 - c, r)`.
    pub fn rotate90(&self, u: &[T], channels: usize) -> Result<(Self, Vec<T>)> {
        if self.dim() != 2 {
            return Err(Error::InvalidArgument("rotation needs a 2D grid".into()));
        }
        check_len(u.len(), self.len() * channels)?;
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let rotated = Self::with_spacing(&[cols, rows], self.spacing)?;
        let mut out = vec![T::zero(); u.len()];
        for r in 0..rows {
            for c in 0..cols {
                let src = r * cols + c;
                let dst = rotated.index(&[cols - 1 - c, r]);
                out[dst * channels..(dst + 1) * channels]
                    .copy_from_slice(&u[src * channels..(src + 1) * channels]);
            }
        }
        Ok((rotated, out))
    }

    /// Swaps the two axes of a 2D `channels`-channel field.
    pub fn transpose(&self, u: &[T], channels: usize) -> Result<(Self, Vec<T>)> {
        if self.dim() != 2 {
            return Err(Error::InvalidArgument("transpose needs a 2D grid".into()));
        }
        check_len(u.len(), self.len() * channels)?;
        let (rows, cols) = (self.shape[0], self.shape[1]);
        let flipped = Self::with_spacing(&[cols, rows], self.spacing)?;
        let mut out = vec![T::zero(); u.len()];
        for r in 0..rows {
            for c in 0..cols {
                let src = r * cols + c;
                let dst = c * rows + r;
                out[dst * channels..(dst + 1) * channels]
                    .copy_from_slice(&u[src * channels..(src + 1) * channels]);
            }
        }
        Ok((flipped, out))
    }
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::shape(expected, actual));
    }
    Ok(())
}
