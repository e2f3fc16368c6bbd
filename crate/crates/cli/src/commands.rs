use std::path::Path;
use std::time::Instant;

use chrono::Utc;
use serde::Serialize;

use cathtrack::config::RunConfig;
use cathtrack::estimator::{estimate_cold, PoseEstimate};
use cathtrack::imaging::{read_pgm, write_pgm};
use cathtrack::io;
use cathtrack::pipeline::{detect_markers, render, simulate, StageTiming};
use cathtrack::reconstruction::{reconstruct, OrderedMarkerSet, Reconstruction};
use cathtrack::studies::{run_study, StudyConfig, StudyKind};
use cathtrack::{Error, Result};

use crate::manifest::OutputDir;
use crate::{Cli, Command, Common};

/// Effective configuration: file or defaults, then command-line overrides.
pub fn load_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            require(path)?;
            RunConfig::load(path)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.study.seed = seed;
    }
    Ok(cfg)
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("input file not found: {}", path.display()),
        )))
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io(e)
}

pub fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.common.jobs {
        if jobs == 0 {
            return Err(Error::Config {
                field: "jobs".into(),
                message: "must be at least 1".into(),
            });
        }
        // only fails if a pool already exists, in which case it is kept
        let _ = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global();
    }
    let mut cfg = load_config(&cli.common)?;
    match &cli.command {
        Command::Simulate { noise: Some(n), .. } => cfg.noise = *n,
        Command::Study {
            kind,
            configurations,
            orders,
        } => apply_study_overrides(&mut cfg.study, *kind, *configurations, orders),
        _ => {}
    }
    cfg.validate()?;
    let config_text = cfg.to_toml()?;

    if let Command::Config = cli.command {
        print!("{config_text}");
        return Ok(());
    }

    let started = Utc::now();
    let mut out = OutputDir::create(&cli.common.out).map_err(io_err)?;
    let result = match &cli.command {
        Command::Simulate { render: r, .. } => cmd_simulate(&cfg, *r, &mut out),
        Command::Segment { image } => cmd_segment(&cfg, image, &mut out),
        Command::Reconstruct { front, side } => cmd_reconstruct(&cfg, front, side, &mut out),
        Command::Estimate { markers, orders } => cmd_estimate(&cfg, markers, orders, &mut out),
        Command::Study { .. } => cmd_study(&cfg, &mut out),
        Command::Pipeline { front, side, orders } => cmd_pipeline(&cfg, front, side, orders, &mut out),
        Command::Config => unreachable!("handled above"),
    };
    // partial outputs of a failed run are still inventoried
    out.finish(cli.command.name(), &config_text, cfg.seed, started)
        .map_err(io_err)?;
    result
}

fn apply_study_overrides(study: &mut StudyConfig, kind: Option<StudyKind>, configurations: Option<usize>, orders: &[usize]) {
    if let Some(kind) = kind {
        let default_orders = StudyConfig::default().orders;
        study.kind = kind;
        if study.orders == default_orders {
            study.orders = StudyConfig::for_kind(kind).orders;
        }
    }
    if let Some(n) = configurations {
        study.configurations = n;
    }
    if !orders.is_empty() {
        study.orders = orders.to_vec();
    }
}

fn cmd_simulate(cfg: &RunConfig, render_images: bool, out: &mut OutputDir) -> Result<()> {
    let sim = simulate(cfg)?;
    io::write_observation(&out.file("markers_front.csv"), &sim.front, cathtrack::biplane::Plane::Front)?;
    io::write_observation(&out.file("markers_side.csv"), &sim.side, cathtrack::biplane::Plane::Side)?;
    io::write_world_markers(&out.file("markers_world.csv"), &sim.markers)?;
    io::write_backbone(&out.file("backbone.csv"), &sim.backbone)?;
    io::write_json(&out.file("truth.json"), &sim.truth)?;
    if render_images {
        let (front, side) = render(&sim, cfg)?;
        write_pgm(&out.file("front.pgm"), &front)?;
        write_pgm(&out.file("side.pgm"), &side)?;
    }
    log::info!("simulated bend {:.1} deg", sim.truth.bend.to_degrees());
    Ok(())
}

fn cmd_segment(cfg: &RunConfig, image: &Path, out: &mut OutputDir) -> Result<()> {
    require(image)?;
    let design = cfg.design.build()?;
    let img = read_pgm(image)?;
    let det = detect_markers(&img, &design, cfg)?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    io::write_detections(&out.file(&format!("detections_{stem}.csv")), &det)?;
    Ok(())
}

#[derive(Serialize)]
struct CorrespondenceReport<'a> {
    primary: cathtrack::biplane::Plane,
    pairs: &'a [(usize, usize)],
    unmatched_primary: &'a [usize],
    unmatched_secondary: &'a [usize],
    ambiguous: &'a [usize],
    /// Design indices (from 1) not reconstructed.
    missing: Vec<usize>,
}

fn write_reconstruction(rec: &Reconstruction, out: &mut OutputDir) -> Result<()> {
    io::write_marker_set(&out.file("reconstruction.csv"), &rec.markers)?;
    let c = &rec.correspondence;
    io::write_json(
        &out.file("correspondence.json"),
        &CorrespondenceReport {
            primary: rec.primary,
            pairs: &c.pairs,
            unmatched_primary: &c.unmatched_primary,
            unmatched_secondary: &c.unmatched_secondary,
            ambiguous: &c.ambiguous,
            missing: missing(&rec.markers),
        },
    )
}

fn missing(m: &OrderedMarkerSet) -> Vec<usize> {
    m.intermediates
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i + 1)
        .collect()
}

fn cmd_reconstruct(cfg: &RunConfig, front: &Path, side: &Path, out: &mut OutputDir) -> Result<()> {
    require(front)?;
    require(side)?;
    let design = cfg.design.build()?;
    let f = io::read_observation(front)?;
    let s = io::read_observation(side)?;
    let rec = reconstruct(&f, &s, &cfg.geometry, &design, cfg.noise, &cfg.reconstruction)?;
    write_reconstruction(&rec, out)
}

#[derive(Serialize)]
struct EstimateReport<'a> {
    order: usize,
    #[serde(flatten)]
    estimate: &'a PoseEstimate,
    roll_deg: f64,
}

fn orders_or_default(orders: &[usize], cfg: &RunConfig) -> Vec<usize> {
    if orders.is_empty() {
        vec![cfg.order]
    } else {
        orders.to_vec()
    }
}

fn estimate_orders(
    cfg: &RunConfig,
    markers: &OrderedMarkerSet,
    orders: &[usize],
    out: &mut OutputDir,
    timings: &mut Vec<StageTiming>,
) -> Result<Vec<PoseEstimate>> {
    let design = cfg.design.build()?;
    let base = markers.base_pose()?;
    let mut all = Vec::new();
    for &order in orders {
        let start = Instant::now();
        let est = estimate_cold(markers, &design, order, &cfg.estimator)?;
        timings.push(StageTiming {
            stage: format!("estimate_m{order}"),
            millis: start.elapsed().as_secs_f64() * 1e3,
        });
        io::write_json(
            &out.file(&format!("estimate_m{order}.json")),
            &EstimateReport {
                order,
                estimate: &est,
                roll_deg: est.roll.to_degrees(),
            },
        )?;
        let backbone = cfg.estimator.integrator.propagate(&est.coefficients, &base, design.length())?;
        io::write_backbone(&out.file(&format!("backbone_m{order}.csv")), &backbone)?;
        all.push(est);
    }
    Ok(all)
}

fn cmd_estimate(cfg: &RunConfig, markers: &Path, orders: &[usize], out: &mut OutputDir) -> Result<()> {
    require(markers)?;
    let m = io::read_marker_set(markers)?;
    estimate_orders(cfg, &m, &orders_or_default(orders, cfg), out, &mut Vec::new())?;
    Ok(())
}

fn cmd_study(cfg: &RunConfig, out: &mut OutputDir) -> Result<()> {
    let result = run_study(&cfg.study)?;
    io::write_json(&out.file("summary.json"), &result)?;
    io::write_trials(&out.file("trials.csv"), &result.trials)?;
    io::write_plot_data(&out.file("plot.csv"), &result)?;
    for row in &result.dropped_table {
        println!(
            "m={} control {:.2}% {:.2} deg, dropped {:.2}% {:.2} deg",
            row.order, row.control_shape_pct, row.control_roll_deg, row.dropped_shape_pct, row.dropped_roll_deg
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct PipelineSummary {
    front_detections: usize,
    side_detections: usize,
    primary: cathtrack::biplane::Plane,
    missing: Vec<usize>,
    orders: Vec<usize>,
    final_costs: Vec<f64>,
    tip_residuals: Vec<f64>,
    timings: Vec<StageTiming>,
}

fn cmd_pipeline(cfg: &RunConfig, front: &Path, side: &Path, orders: &[usize], out: &mut OutputDir) -> Result<()> {
    require(front)?;
    require(side)?;
    let design = cfg.design.build()?;
    let orders = orders_or_default(orders, cfg);
    let mut timings = Vec::new();
    let stage = |name: &str, t: Instant, timings: &mut Vec<StageTiming>| {
        timings.push(StageTiming {
            stage: name.to_owned(),
            millis: t.elapsed().as_secs_f64() * 1e3,
        })
    };

    let t = Instant::now();
    let segment_one = |path: &Path, out: &mut OutputDir| -> Result<_> {
        let img = read_pgm(path)?;
        let det = detect_markers(&img, &design, cfg)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
        io::write_detections(&out.file(&format!("detections_{stem}.csv")), &det)?;
        Ok((det, img.pixel_scale))
    };
    let (front_det, scale) = segment_one(front, out).map_err(|e| e.at_stage("segment"))?;
    let (side_det, _) = segment_one(side, out).map_err(|e| e.at_stage("segment"))?;
    stage("segment", t, &mut timings);

    let t = Instant::now();
    let rec = (|| {
        let f = front_det.to_observation()?;
        let s = side_det.to_observation()?;
        reconstruct(&f, &s, &cfg.geometry, &design, cfg.noise.max(scale), &cfg.reconstruction)
    })()
    .map_err(|e| e.at_stage("reconstruct"))?;
    write_reconstruction(&rec, out)?;
    stage("reconstruct", t, &mut timings);

    let estimates =
        estimate_orders(cfg, &rec.markers, &orders, out, &mut timings).map_err(|e| e.at_stage("estimate"))?;
    let summary = PipelineSummary {
        front_detections: front_det.len(),
        side_detections: side_det.len(),
        primary: rec.primary,
        missing: missing(&rec.markers),
        orders,
        final_costs: estimates.iter().map(|e| e.final_cost).collect(),
        tip_residuals: estimates.iter().map(|e| e.tip_residual).collect(),
        timings,
    };
    io::write_json(&out.file("report.json"), &summary)?;
    for t in &summary.timings {
        println!("{:<14} {:8.2} ms", t.stage, t.millis);
    }
    Ok(())
}
