use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Serialize;

use mvtv::image_grid::Grid;
use mvtv::io::{ground_truth_path, read_json, read_mvi, write_json, write_mvi};
use mvtv::metric_space::MetricSpace;
use mvtv::metrics::{self, AngularErrorReport, axis_angle_deg, image_peaks, w1_error_map};
use mvtv::models::kr::KrOptions;
use mvtv::models::{tv_kr, SaddleProblem};
use mvtv::proximal::{check_product_norm_conditions, ProductNorm, ProductNormReport};
use mvtv::solver::{solve, ReportSummary, SolverConfig, Termination};
use mvtv::synth::{add_noise, make_phantom, GroundTruth, PhantomSpec};
use mvtv::transport::{l1_distance, w1_lp};
use mvtv::Image;

use crate::args::*;
use crate::Failure;

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn print_json<V: Serialize>(value: &V) -> Result<()> {
    let mut out = std::io::stdout().lock();
    let res = serde_json::to_writer_pretty(&mut out, value)
        .map_err(std::io::Error::from)
        .and_then(|()| writeln!(out));
    match res {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
        other => Ok(other?),
    }
}

fn emit_json<V: Serialize>(value: &V, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => Ok(write_json(value, path)?),
        None => print_json(value),
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| mvtv::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::Writer::from_writer(file))
}

#[derive(Serialize)]
struct SpaceInfo {
    tag: mvtv::metric_space::SpaceTag,
    cells: usize,
    tangent_dim: usize,
    stencils: usize,
    stencil_size: usize,
    edge_stencils: bool,
    total_volume: f64,
    max_edge_length: f64,
    diameter: f64,
}

pub fn space_info(args: SpaceInfoArgs) -> Result<()> {
    let space = args.space.build()?;
    let diameter = space.distances().iter().cloned().fold(0.0, f64::max);
    print_json(&SpaceInfo {
        tag: space.tag().clone(),
        cells: space.len(),
        tangent_dim: space.tangent_dim(),
        stencils: space.num_stencils(),
        stencil_size: space.stencil_size(),
        edge_stencils: space.edge_stencils(),
        total_volume: space.total_volume(),
        max_edge_length: space.max_edge_length(),
        diameter,
    })
}

pub fn phantom(args: PhantomArgs) -> Result<()> {
    if let Some(snr) = args.snr {
        if !(snr > 0.0) {
            return Err(usage(format!("--snr must be positive, got {snr}")));
        }
    }
    let (spec, space) = match args.kind {
        PhantomKindArg::Rotating => (
            PhantomSpec::rotating_row(args.n.unwrap_or(12), args.angle_range),
            MetricSpace::icosphere(args.level)?,
        ),
        PhantomKindArg::Crossing => (
            PhantomSpec {
                kind: mvtv::synth::PhantomKind::CrossingFibers { size: args.size },
                ..PhantomSpec::crossing_fibers()
            },
            MetricSpace::icosphere(args.level)?,
        ),
        PhantomKindArg::Twopoint => (
            PhantomSpec::two_point_interval(args.n.unwrap_or(16)),
            MetricSpace::two_point(1.0)?,
        ),
    };
    let spec = PhantomSpec {
        seed: args.seed,
        ..spec.with_kappa(args.kappa)
    };
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let grid = Grid::new(&spec.grid_shape())?;
    let (mut img, gt) = make_phantom(&spec, Arc::new(space), grid)?;
    if let Some(snr) = args.snr {
        img = add_noise(&img, snr, args.seed)?;
    }
    write_mvi(&img, &args.out)?;
    write_json(&gt, ground_truth_path(&args.out))?;
    log::info!("wrote {} ({} voxels, {} cells)", args.out.display(), img.num_voxels(), img.space().len());
    Ok(())
}

pub fn noise(args: NoiseArgs) -> Result<()> {
    if !(args.snr > 0.0) {
        return Err(usage(format!("--snr must be positive, got {}", args.snr)));
    }
    let img: Image = read_mvi(&args.input)?;
    write_mvi(&add_noise(&img, args.snr, args.seed)?, &args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct DenoiseReport<'a> {
    input: &'a Path,
    output: &'a Path,
    config: &'a SolverConfig,
    #[serde(flatten)]
    summary: ReportSummary,
}

pub fn denoise(args: DenoiseArgs, quiet: bool) -> Result<()> {
    if !(args.lambda > 0.0) || !args.lambda.is_finite() {
        return Err(usage(format!("--lambda must be positive, got {}", args.lambda)));
    }
    let config = SolverConfig {
        max_iter: args.max_iter,
        gap_tol: args.gap_tol,
        check_every: args.check_every,
        tau: args.tau,
        sigma: args.sigma,
        adaptive: !args.fixed_steps,
        diagonal_preconditioning: args.diagonal_preconditioning,
        seed: args.seed,
        progress: !quiet,
        ..SolverConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let img: Image = read_mvi(&args.input)?;
    let problem = SaddleProblem::new(args.model, img, args.lambda, args.norm)?;
    let report = solve(&problem, &config)?;
    let out = problem.data().with_values(report.u.clone())?;
    write_mvi(&out, &args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| args.out.with_extension("report.json"));
    write_json(
        &DenoiseReport {
            input: &args.input,
            output: &args.out,
            config: &config,
            summary: report.summary(&problem),
        },
        &report_path,
    )?;
    log::info!(
        "{:?} after {} iterations, gap {:.3e}",
        report.termination,
        report.iterations,
        report.final_gap().map_or(f64::NAN, |g| g.gap_rel)
    );
    match report.termination {
        Termination::Converged => Ok(()),
        Termination::MaxIter => Err(Failure::NotConverged(report.iterations).into()),
    }
}

#[derive(Serialize)]
struct W1Summary {
    total: f64,
    mean: f64,
    max: f64,
}

fn w1_summary(map: &[f64]) -> W1Summary {
    let total: f64 = map.iter().sum();
    W1Summary {
        total,
        mean: total / map.len().max(1) as f64,
        max: map.iter().cloned().fold(0.0, f64::max),
    }
}

#[derive(Serialize)]
struct EvalReport {
    angular_error: AngularErrorReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    w1_error: Option<W1Summary>,
}

pub fn eval(args: EvalArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&args.threshold) {
        return Err(usage(format!("--threshold must lie in [0, 1], got {}", args.threshold)));
    }
    let img: Image = read_mvi(&args.input)?;
    let gt: GroundTruth = read_json(&args.gt)?;
    if gt.directions.len() != img.num_voxels() {
        return Err(usage(format!(
            "ground truth has {} voxels, image has {}",
            gt.directions.len(),
            img.num_voxels()
        )));
    }
    let peaks = image_peaks(&img, args.threshold)?;
    let angular_error = metrics::angular_error(&peaks, &gt.directions, args.unmatched_penalty)?;
    let w1_error = match &args.reference {
        Some(path) => {
            let reference: Image = read_mvi(path)?;
            Some(w1_summary(&w1_error_map(&img, &reference)?))
        }
        None => None,
    };
    emit_json(&EvalReport { angular_error, w1_error }, args.out.as_deref())
}

pub fn w1(args: W1Args) -> Result<()> {
    let a: Image = read_mvi(&args.first)?;
    let b: Image = read_mvi(&args.second)?;
    let map = w1_error_map(&a, &b)?;
    if let Some(path) = &args.out {
        let mut w = csv_writer(path)?;
        w.write_record(["voxel", "w1"])?;
        for (i, v) in map.iter().enumerate() {
            w.serialize((i, v))?;
        }
        w.flush()?;
    }
    print_json(&w1_summary(&map))
}

#[derive(Serialize)]
struct TvValue {
    value: f64,
    lower: f64,
    upper: f64,
    inner_iterations: usize,
}

pub fn tv(args: TvArgs) -> Result<()> {
    if !(args.tol > 0.0) {
        return Err(usage(format!("--tol must be positive, got {}", args.tol)));
    }
    let img: Image = read_mvi(&args.input)?;
    let opts = KrOptions {
        tol: args.tol,
        ..KrOptions::default()
    };
    let b = tv_kr(&img, args.norm, &opts)?;
    print_json(&TvValue {
        value: b.mid(),
        lower: b.lower,
        upper: b.upper,
        inner_iterations: b.iterations,
    })
}

#[derive(Serialize)]
struct NormChecks {
    all_passed: bool,
    reports: Vec<ProductNormReport>,
}

pub fn check_norms(args: CheckNormsArgs) -> Result<()> {
    if args.samples == 0 {
        return Err(usage("--samples must be positive"));
    }
    let norms = [
        ProductNorm::Spectral,
        ProductNorm::SNorm { s: 2.0 },
        ProductNorm::SNorm { s: 1.0 },
        ProductNorm::SNorm { s: 3.0 },
    ];
    let reports: Vec<ProductNormReport> = norms
        .iter()
        .map(|&n| check_product_norm_conditions(n, args.samples, args.seed))
        .collect();
    // spectral and s = 2 must pass; s = 1 and s = 3 must show their counterexamples
    let all_passed = reports[..2].iter().all(|r| r.all_random_checks_pass())
        && reports[2..].iter().all(|r| r.counterexamples.iter().any(|c| c.violated));
    emit_json(&NormChecks { all_passed, reports }, args.out.as_deref())
}

pub fn export_plot(args: ExportPlotArgs) -> Result<()> {
    if args.inputs.is_empty() {
        return Err(usage("no inputs given"));
    }
    match args.what {
        PlotKind::OdfProfile => odf_profile(&args.inputs, &args.out),
        PlotKind::DistanceCurve => distance_curve(&args.inputs, &args.out),
        PlotKind::GapTrace => gap_trace(&args.inputs, &args.out),
    }
}

fn odf_profile(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut w = csv_writer(out)?;
    w.write_record(["source", "voxel", "cell", "x", "y", "z", "density"])?;
    for path in inputs {
        let img: Image = read_mvi(path)?;
        let space = img.space();
        let name = path.display().to_string();
        for i in 0..img.num_voxels() {
            for (k, &v) in img.row(i).iter().enumerate() {
                let p = space.point3(k);
                let c = |t: usize| p.map(|p| p[t]);
                w.serialize((&name, i, k, c(0), c(1), c(2), v))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Distances of every voxel to voxel 0, against the angle between their
/// ground-truth directions.
fn distance_curve(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut w = csv_writer(out)?;
    w.write_record(["source", "voxel", "angle_deg", "l1", "w1"])?;
    for path in inputs {
        let img: Image = read_mvi(path)?;
        let gt_path = ground_truth_path(path);
        let gt: GroundTruth = read_json(&gt_path).with_context(|| {
            format!("distance-curve needs the ground-truth sidecar {}", gt_path.display())
        })?;
        let Some(&d0) = gt.directions.first().and_then(|d| d.first()) else {
            return Err(usage(format!("{} has no direction in voxel 0", gt_path.display())));
        };
        let name = path.display().to_string();
        let space = img.space();
        for i in 0..img.num_voxels() {
            let Some(&di) = gt.directions.get(i).and_then(|d| d.first()) else {
                continue;
            };
            let (f, g) = (img.row(0), img.row(i));
            w.serialize((&name, i, axis_angle_deg(&d0, &di), l1_distance(f, g, space), w1_lp(f, g, space)?))?;
        }
    }
    w.flush()?;
    Ok(())
}

fn gap_trace(inputs: &[std::path::PathBuf], out: &Path) -> Result<()> {
    let mut w = csv_writer(out)?;
    w.write_record(["source", "iteration", "primal", "dual", "gap_rel"])?;
    for path in inputs {
        let report: serde_json::Value = read_json(path)?;
        let trace: Vec<mvtv::solver::GapRecord> = report
            .get("gap_trace")
            .cloned()
            .map(serde_json::from_value)
            .transpose()?
            .ok_or_else(|| usage(format!("{} has no gap_trace", path.display())))?;
        let name = path.display().to_string();
        for r in trace {
            w.serialize((&name, r.iteration, r.primal, r.dual, r.gap_rel))?;
        }
    }
    w.flush()?;
    Ok(())
}
