//! Per-voxel stencil kernels behind `K` and `Kᵀ`, with fixed-size variants
//! for the common `(s, d, r)` shapes.

use crate::real::Real;

/// Stencil data of one space, laid out for the kernels.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Tables<'a, T> {
    pub nb: &'a [usize],
    pub a: &'a [T],
    pub b: &'a [T],
    pub m: usize,
    pub s: usize,
    pub r: usize,
}

/// `out_j = A_j v_j` for every stencil; blocks are `s x d`.
pub(crate) type ApplyA<T> = fn(&Tables<'_, T>, &[T], usize, &mut [T]);
/// `field -= Σ_j P_jᵀ B_jᵀ v_j`.
pub(crate) type ScatterBt<T> = fn(&Tables<'_, T>, &[T], usize, &mut [T]);
/// `out_j -= B_j P_j field`.
pub(crate) type GatherB<T> = fn(&Tables<'_, T>, &[T], usize, &mut [T]);

#[derive(Clone, Copy)]
pub(crate) struct Kernels<T> {
    pub apply_a: ApplyA<T>,
    pub scatter_bt: ScatterBt<T>,
    pub gather_b: GatherB<T>,
}

impl<T> std::fmt::Debug for Kernels<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Kernels")
    }
}

impl<T: Real> Kernels<T> {
    pub fn select(s: usize, d: usize, r: usize) -> Self {
        macro_rules! fixed {
            ($s:literal, $d:literal, $r:literal) => {
                Self {
                    apply_a: apply_a_fixed::<T, $s, $d>,
                    scatter_bt: scatter_bt_fixed::<T, $s, $d, $r>,
                    gather_b: gather_b_fixed::<T, $s, $d, $r>,
                }
            };
        }
        match (s, d, r) {
            (2, 1, 3) => fixed!(2, 1, 3),
            (2, 2, 3) => fixed!(2, 2, 3),
            (2, 3, 3) => fixed!(2, 3, 3),
            (1, 1, 2) => fixed!(1, 1, 2),
            (1, 2, 2) => fixed!(1, 2, 2),
            (1, 3, 2) => fixed!(1, 3, 2),
            _ => Self {
                apply_a: apply_a_dyn::<T>,
                scatter_bt: scatter_bt_dyn::<T>,
                gather_b: gather_b_dyn::<T>,
            },
        }
    }
}

fn apply_a_dyn<T: Real>(t: &Tables<'_, T>, v: &[T], d: usize, out: &mut [T]) {
    let (s, sd) = (t.s, t.s * d);
    for j in 0..t.m {
        let a = &t.a[j * s * s..(j + 1) * s * s];
        let vj = &v[j * sd..(j + 1) * sd];
        let oj = &mut out[j * sd..(j + 1) * sd];
        for row in 0..s {
            for c in 0..d {
                let mut acc = T::zero();
                for k in 0..s {
                    acc += a[row * s + k] * vj[k * d + c];
                }
                oj[row * d + c] = acc;
            }
        }
    }
}

fn scatter_bt_dyn<T: Real>(t: &Tables<'_, T>, v: &[T], d: usize, field: &mut [T]) {
    let (s, r, sd) = (t.s, t.r, t.s * d);
    for j in 0..t.m {
        let b = &t.b[j * s * r..(j + 1) * s * r];
        let vj = &v[j * sd..(j + 1) * sd];
        for q in 0..r {
            let k = t.nb[j * r + q];
            for c in 0..d {
                let mut acc = T::zero();
                for a in 0..s {
                    acc += b[a * r + q] * vj[a * d + c];
                }
                field[k * d + c] -= acc;
            }
        }
    }
}

fn gather_b_dyn<T: Real>(t: &Tables<'_, T>, field: &[T], d: usize, out: &mut [T]) {
    let (s, r, sd) = (t.s, t.r, t.s * d);
    for j in 0..t.m {
        let b = &t.b[j * s * r..(j + 1) * s * r];
        let oj = &mut out[j * sd..(j + 1) * sd];
        for a in 0..s {
            for c in 0..d {
                let mut acc = T::zero();
                for q in 0..r {
                    acc += b[a * r + q] * field[t.nb[j * r + q] * d + c];
                }
                oj[a * d + c] -= acc;
            }
        }
    }
}

fn apply_a_fixed<T: Real, const S: usize, const D: usize>(t: &Tables<'_, T>, v: &[T], _d: usize, out: &mut [T]) {
    let blocks = t.a.chunks_exact(S * S).zip(v.chunks_exact(S * D)).zip(out.chunks_exact_mut(S * D));
    for ((a, vj), oj) in blocks.take(t.m) {
        for row in 0..S {
            for c in 0..D {
                let mut acc = T::zero();
                for k in 0..S {
                    acc += a[row * S + k] * vj[k * D + c];
                }
                oj[row * D + c] = acc;
            }
        }
    }
}

fn scatter_bt_fixed<T: Real, const S: usize, const D: usize, const R: usize>(
    t: &Tables<'_, T>,
    v: &[T],
    _d: usize,
    field: &mut [T],
) {
    let blocks = t.b.chunks_exact(S * R).zip(v.chunks_exact(S * D)).zip(t.nb.chunks_exact(R));
    for ((b, vj), nb) in blocks.take(t.m) {
        for q in 0..R {
            let base = nb[q] * D;
            let dst = &mut field[base..base + D];
            for c in 0..D {
                let mut acc = T::zero();
                for a in 0..S {
                    acc += b[a * R + q] * vj[a * D + c];
                }
                dst[c] -= acc;
            }
        }
    }
}

fn gather_b_fixed<T: Real, const S: usize, const D: usize, const R: usize>(
    t: &Tables<'_, T>,
    field: &[T],
    _d: usize,
    out: &mut [T],
) {
    let blocks = t.b.chunks_exact(S * R).zip(out.chunks_exact_mut(S * D)).zip(t.nb.chunks_exact(R));
    for ((b, oj), nb) in blocks.take(t.m) {
        let mut vals = [[T::zero(); D]; R];
        for q in 0..R {
            let base = nb[q] * D;
            vals[q].copy_from_slice(&field[base..base + D]);
        }
        for a in 0..S {
            for c in 0..D {
                let mut acc = T::zero();
                for q in 0..R {
                    acc += b[a * R + q] * vals[q][c];
                }
                oj[a * D + c] -= acc;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_space::MetricSpace;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_kernels_match_dynamic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for (space, d) in [
            (MetricSpace::<f64>::icosphere(1).unwrap(), 1),
            (MetricSpace::<f64>::icosphere(1).unwrap(), 2),
            (MetricSpace::<f64>::icosphere(1).unwrap(), 3),
            (MetricSpace::<f64>::circle(6).unwrap(), 2),
        ] {
            let t = Tables {
                nb: space.stencil_neighbors(),
                a: space.stencil_a_all(),
                b: space.stencil_b_all(),
                m: space.num_stencils(),
                s: space.tangent_dim(),
                r: space.stencil_size(),
            };
            let k = Kernels::<f64>::select(t.s, d, t.r);
            let msd = t.m * t.s * d;
            let v: Vec<f64> = (0..msd).map(|_| rng.random_range(-1.0..1.0)).collect();
            let field: Vec<f64> = (0..space.len() * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (mut o1, mut o2) = (vec![0.0; msd], vec![0.0; msd]);
            (k.apply_a)(&t, &v, d, &mut o1);
            apply_a_dyn(&t, &v, d, &mut o2);
            assert_eq!(o1, o2);
            (k.gather_b)(&t, &field, d, &mut o1);
            gather_b_dyn(&t, &field, d, &mut o2);
            assert!(o1.iter().zip(&o2).all(|(a, b)| (a - b).abs() < 1e-14));
            let (mut f1, mut f2) = (field.clone(), field.clone());
            (k.scatter_bt)(&t, &v, d, &mut f1);
            scatter_bt_dyn(&t, &v, d, &mut f2);
            assert!(f1.iter().zip(&f2).all(|(a, b)| (a - b).abs() < 1e-14));
        }
    }
}
