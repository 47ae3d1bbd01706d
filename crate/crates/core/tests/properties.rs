use std::sync::Arc;

use mvtv::image_grid::Grid;
use mvtv::io::{decode_mvi, encode_mvi};
use mvtv::metric_space::MetricSpace;
use mvtv::metrics::{axis_angle_deg, extract_peaks, pearson};
use mvtv::models::MeasureImage;
use mvtv::proximal::{project_spectral_ball, project_weighted_simplex, spectral_norm};
use mvtv::transport::{dirac, l1_distance, w1_lp};
use proptest::prelude::*;

/// Nonnegative weights normalized to a density on `space`.
fn density(raw: &[f64], space: &MetricSpace<f64>) -> Vec<f64> {
    let mass: f64 = raw.iter().zip(space.volumes()).map(|(x, b)| x * b).sum();
    raw.iter().map(|x| x / mass).collect()
}

fn weights(l: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, l)
}

fn unit3() -> impl Strategy<Value = [f64; 3]> {
    prop::array::uniform3(-1.0f64..1.0)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(|v| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            [v[0] / n, v[1] / n, v[2] / n]
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn w1_is_a_metric_on_the_circle(a in weights(12), b in weights(12), c in weights(12)) {
        let space = MetricSpace::<f64>::circle(12).unwrap();
        let (a, b, c) = (density(&a, &space), density(&b, &space), density(&c, &space));
        let ab = w1_lp(&a, &b, &space).unwrap();
        let ba = w1_lp(&b, &a, &space).unwrap();
        let ac = w1_lp(&a, &c, &space).unwrap();
        let cb = w1_lp(&c, &b, &space).unwrap();
        prop_assert!(w1_lp(&a, &a, &space).unwrap().abs() < 1e-12);
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= ac + cb + 1e-12);
        // antipodal distance is π on the unit circle
        prop_assert!(ab <= std::f64::consts::PI * l1_distance(&a, &b, &space) / 2.0 + 1e-12);
    }

    #[test]
    fn w1_between_diracs_is_the_ground_distance(j in 0usize..42, k in 0usize..42) {
        let space = MetricSpace::<f64>::icosphere(1).unwrap();
        let w = w1_lp(&dirac(&space, j), &dirac(&space, k), &space).unwrap();
        prop_assert!((w - space.distance(j, k)).abs() < 1e-10);
    }

    #[test]
    fn simplex_projection_is_a_projection(
        v in prop::collection::vec(-2.0f64..2.0, 1..20),
        seed in prop::collection::vec(0.1f64..1.0, 20),
        q in prop::collection::vec(0.0f64..1.0, 20),
    ) {
        let l = v.len();
        let b = &seed[..l];
        let p = project_weighted_simplex(&v, b).unwrap();
        let mass: f64 = p.iter().zip(b).map(|(x, w)| x * w).sum();
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let again = project_weighted_simplex(&p, b).unwrap();
        for (x, y) in p.iter().zip(&again) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        // obtuse angle against any other point of the simplex
        let qm: f64 = q[..l].iter().zip(b).map(|(x, w)| x * w).sum();
        if qm > 1e-9 {
            let inner: f64 = (0..l).map(|k| b[k] * (v[k] - p[k]) * (q[k] / qm - p[k])).sum();
            prop_assert!(inner <= 1e-10);
        }
    }

    #[test]
    fn spectral_ball_projection_lands_in_the_ball(g in prop::collection::vec(-3.0f64..3.0, 6), r in 0.1f64..2.0) {
        let p = project_spectral_ball(&g, 3, 2, r);
        prop_assert!(spectral_norm(&p, 3, 2) <= r * (1.0 + 1e-10));
        let again = project_spectral_ball(&p, 3, 2, r);
        for (x, y) in p.iter().zip(&again) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        if spectral_norm(&g, 3, 2) <= r {
            for (x, y) in g.iter().zip(&p) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn grad_and_neg_div_are_adjoint(
        nx in 1usize..6,
        ny in 1usize..6,
        channels in 1usize..4,
        seed in prop::collection::vec(-1.0f64..1.0, 5 * 5 * 3 * 2),
    ) {
        let grid = Grid::<f64>::new(&[nx, ny]).unwrap();
        let n = nx * ny * channels;
        let u = &seed[..n];
        let p: Vec<f64> = seed.iter().rev().take(2 * n).copied().collect();
        let gu = grid.grad(u, channels).unwrap();
        let dp = grid.neg_div(&p, channels).unwrap();
        let lhs: f64 = gu.iter().zip(&p).map(|(a, b)| a * b).sum();
        let rhs: f64 = u.iter().zip(&dp).map(|(a, b)| a * b).sum();
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn axis_angle_ignores_sign(a in unit3(), b in unit3()) {
        let t = axis_angle_deg(&a, &b);
        let neg = [-a[0], -a[1], -a[2]];
        prop_assert!((0.0..=90.0 + 1e-9).contains(&t));
        prop_assert!((t - axis_angle_deg(&neg, &b)).abs() < 1e-9);
        prop_assert!((t - axis_angle_deg(&b, &a)).abs() < 1e-9);
        prop_assert!(axis_angle_deg(&a, &a) < 1e-5);
    }

    #[test]
    fn single_dirac_has_one_peak_at_its_cell(k in 0usize..42) {
        let space = MetricSpace::<f64>::icosphere(1).unwrap();
        let peaks = extract_peaks(&dirac(&space, k), &space, 0.5).unwrap();
        prop_assert_eq!(peaks.len(), 1);
        let p = space.point3(k).unwrap();
        prop_assert!(axis_angle_deg(&peaks[0], &p) < 1e-6);
    }

    #[test]
    fn mvi_round_trip_is_bit_exact(nx in 1usize..5, ny in 1usize..5, raw in prop::collection::vec(0.01f64..1.0, 4 * 4 * 9)) {
        let space = Arc::new(MetricSpace::<f64>::circle(9).unwrap());
        let grid = Grid::<f64>::new(&[nx, ny]).unwrap();
        let values: Vec<f64> = raw[..nx * ny * 9].chunks(9).flat_map(|row| density(row, &space)).collect();
        let img = MeasureImage::new(grid, space, values).unwrap();
        let back: MeasureImage<f64> = decode_mvi(&encode_mvi(&img).unwrap()).unwrap();
        prop_assert_eq!(back.grid().shape(), img.grid().shape());
        prop_assert_eq!(back.values(), img.values());
        prop_assert_eq!(back.space().tag(), img.space().tag());
    }

    #[test]
    fn pearson_is_scale_invariant(x in prop::collection::vec(-5.0f64..5.0, 3..30), s in 0.1f64..10.0, o in -3.0f64..3.0) {
        let y: Vec<f64> = x.iter().map(|v| s * v + o).collect();
        if let Some(r) = pearson(&x, &y) {
            prop_assert!((r - 1.0).abs() < 1e-9);
        }
    }
}
