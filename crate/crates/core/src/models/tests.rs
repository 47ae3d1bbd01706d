use super::*;
use crate::transport::dirac;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(grid: Grid<f64>, space: Arc<MetricSpace<f64>>, seed: u64) -> MeasureImage<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = space.len();
    let mut values = Vec::with_capacity(grid.len() * l);
    for _ in 0..grid.len() {
        let row: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..1.0)).collect();
        let mass: f64 = row.iter().zip(space.volumes()).map(|(a, b)| a * b).sum();
        values.extend(row.iter().map(|x| x / mass));
    }
    MeasureImage::new(grid, space, values).unwrap()
}

fn random_vars(problem: &SaddleProblem<f64>, seed: u64) -> (PrimalVars<f64>, DualVars<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = problem.zero_primal();
    let mut y = problem.zero_dual();
    for blk in x.blocks_mut() {
        blk.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    for blk in y.blocks_mut() {
        blk.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    }
    (x, y)
}

fn inner(a: &[&[f64]], b: &[&[f64]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(*y).map(|(p, q)| p * q).sum::<f64>())
        .sum()
}

#[test]
fn operator_and_adjoint_agree() {
    for (space, model) in [
        (MetricSpace::<f64>::icosphere(1).unwrap(), Model::W1Tv),
        (MetricSpace::<f64>::circle(7).unwrap(), Model::L2Tv),
        (MetricSpace::<f64>::two_point(2.0).unwrap(), Model::W1Tv),
    ] {
        let space = Arc::new(space);
        let f = random_image(Grid::new(&[3, 4]).unwrap(), space, 1);
        let problem = SaddleProblem::new(model, f, 0.7, JacobianNorm::Spectral).unwrap();
        let (x, y) = random_vars(&problem, 2);
        let mut kx = problem.zero_dual();
        let mut kty = problem.zero_primal();
        problem.apply_k(&x, &mut kx);
        problem.apply_kt(&y, &mut kty);
        let lhs = inner(&kx.blocks(), &y.blocks());
        let rhs = inner(&x.blocks(), &kty.blocks());
        assert!((lhs - rhs).abs() < 1e-11 * lhs.abs().max(1.0), "{lhs} vs {rhs}");
    }
}

#[test]
fn operator_matches_definition_on_single_voxel() {
    // One voxel: Du = 0, so the p row is -Σ P_jᵀ B_jᵀ w_j.
    let space = Arc::new(MetricSpace::<f64>::circle(5).unwrap());
    let f = random_image(Grid::new(&[1]).unwrap(), space.clone(), 4);
    let problem = build_w1tv(f, 1.0, JacobianNorm::Spectral).unwrap();
    let (x, _) = random_vars(&problem, 5);
    let mut kx = problem.zero_dual();
    problem.apply_k(&x, &mut kx);
    let mut want = vec![0.0; 5];
    for j in 0..space.num_stencils() {
        let st = space.stencil(j);
        for q in 0..2 {
            want[st.neighbors[q]] -= st.b[q] * x.w[j];
        }
        assert!((kx.g[j] - st.a[0] * x.w[j]).abs() < 1e-15);
    }
    for k in 0..5 {
        assert!((kx.p[k] - want[k]).abs() < 1e-14);
    }
}

#[test]
fn weak_duality_holds() {
    let space = Arc::new(MetricSpace::<f64>::icosphere(1).unwrap());
    for model in [Model::W1Tv, Model::L2Tv] {
        let f = random_image(Grid::new(&[2, 3]).unwrap(), space.clone(), 7);
        let problem = SaddleProblem::new(model, f, 0.5, JacobianNorm::Spectral).unwrap();
        let (mut x, y) = random_vars(&problem, 8);
        x.u = random_image(problem.grid().clone(), space.clone(), 9).into_values();
        let lower = problem.dual_lower_bound(&y);
        let upper = problem.primal_upper_bound(&x).unwrap();
        let exact = problem.primal_energy_bracket(&x.u, &KrOptions::default()).unwrap();
        assert!(lower <= exact.upper + 1e-9, "{model}: {lower} > {exact:?}");
        assert!(exact.lower <= upper + 1e-9, "{model}: {exact:?} > {upper}");
    }
}

#[test]
fn l2_energy_of_constant_data_is_zero() {
    let space = Arc::new(MetricSpace::<f64>::circle(6).unwrap());
    let f = MeasureImage::constant(Grid::new(&[4]).unwrap(), space.clone(), &dirac(&space, 2)).unwrap();
    let problem = build_l2tv(f.clone(), 1.0, JacobianNorm::Spectral).unwrap();
    assert_eq!(problem.primal_energy(f.values()).unwrap(), 0.0);
    let y = problem.zero_dual();
    // With p = 0 the dual is min_u ‖u - f‖², attained at f.
    assert!(problem.dual_lower_bound(&y).abs() < 1e-14);
}

#[test]
fn two_point_energy_matches_closed_form() {
    // 1D signal with a single jump between δ0 and δ1: TV = d.
    let space = Arc::new(MetricSpace::<f64>::two_point(1.0).unwrap());
    let n = 6;
    let mut values = Vec::new();
    for i in 0..n {
        values.extend(if i < 3 { [1.0, 0.0] } else { [0.0, 1.0] });
    }
    let f = MeasureImage::new(Grid::new(&[n]).unwrap(), space, values).unwrap();
    let tv = tv_kr(&f, JacobianNorm::Spectral, &KrOptions::default()).unwrap();
    assert!((tv.mid() - 1.0).abs() < 1e-12, "{tv:?}");
    let problem = build_w1tv(f.clone(), 0.3, JacobianNorm::Spectral).unwrap();
    assert!((problem.primal_energy(f.values()).unwrap() - 0.3).abs() < 1e-12);
}

#[test]
fn dual_energy_rejects_infeasible_duals() {
    let space = Arc::new(MetricSpace::<f64>::circle(4).unwrap());
    let f = random_image(Grid::new(&[2]).unwrap(), space, 3);
    let problem = build_w1tv(f, 1.0, JacobianNorm::Spectral).unwrap();
    let mut y = problem.zero_dual();
    assert!(problem.dual_energy(&y).is_ok());
    y.p[0] = 100.0;
    assert!(matches!(problem.dual_energy(&y), Err(Error::Infeasible(_))));
}

#[test]
fn rejects_nonpositive_lambda_and_bad_rows() {
    let space = Arc::new(MetricSpace::<f64>::circle(4).unwrap());
    let f = random_image(Grid::new(&[2]).unwrap(), space.clone(), 3);
    assert!(build_w1tv(f.clone(), 0.0, JacobianNorm::Spectral).is_err());
    assert!(build_w1tv(f, -1.0, JacobianNorm::Spectral).is_err());
    let bad = vec![1.0; 8];
    assert!(MeasureImage::new(Grid::new(&[2]).unwrap(), space, bad).is_err());
}

#[test]
fn energy_gap_is_relative() {
    let e = Energy::new(10.0, 9.0);
    assert!((e.gap_rel - 0.1).abs() < 1e-15);
    let e = Energy::new(0.1, 0.05);
    assert!((e.gap_rel - 0.05).abs() < 1e-15);
}
