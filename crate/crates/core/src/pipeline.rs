//! Forward simulation and the image-to-estimate pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::biplane::Plane;
use crate::config::RunConfig;
use crate::design::CatheterDesign;
use crate::error::{Error, Result};
use crate::estimator::{estimate_cold, PoseEstimate};
use crate::imaging::{classify, render_biplane, segment, ExpectedAreas, GrayImage, MarkerDetections, Scene};
use crate::kinematics::{BackbonePath, Integrator, MarkerPositions, ModalCoefficients, Pose};
use crate::reconstruction::{reconstruct, PlanarObservation, Reconstruction};
use crate::rng::{self, Purpose};
use crate::studies::{bend_angle, sample_configuration, simulate_observations};

/// Ground truth of a simulated frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub seed: u64,
    pub coefficients: ModalCoefficients,
    /// rad
    pub roll: f64,
    /// Angle between base and tip tangents, rad.
    pub bend: f64,
    pub noise: f64,
}

/// A simulated biplane frame.
#[derive(Debug, Clone)]
pub struct Simulation {
    pub design: CatheterDesign,
    pub truth: Truth,
    pub markers: MarkerPositions,
    pub backbone: BackbonePath,
    pub front: PlanarObservation,
    pub side: PlanarObservation,
}

/// Simulates one frame from the configured pose, or from a random
/// configuration drawn with the master seed. The base frame is the world
/// frame.
pub fn simulate(cfg: &RunConfig) -> Result<Simulation> {
    let design = cfg.design.build()?;
    let integrator = cfg.estimator.integrator;
    let (coefficients, roll) = match &cfg.pose.coefficients {
        Some(c) => (c.clone(), cfg.pose.roll),
        None => {
            let mut r = rng::stream(cfg.seed, &[Purpose::Configuration as u64]);
            sample_configuration(&mut r, &cfg.study.bounds, cfg.pose.order, design.length())?
        }
    };
    let base = Pose::identity();
    let markers = integrator.marker_positions(&design, &coefficients, roll, &base)?;
    let backbone = integrator.propagate(&coefficients, &base, design.length())?;
    let mut front_rng = rng::stream(cfg.seed, &[Purpose::FrontNoise as u64]);
    let mut side_rng = rng::stream(cfg.seed, &[Purpose::SideNoise as u64]);
    let mut shuffle_rng = rng::stream(cfg.seed, &[Purpose::Shuffle as u64]);
    let (front, side) = simulate_observations(
        &markers,
        &cfg.geometry,
        cfg.noise,
        &mut front_rng,
        &mut side_rng,
        &mut shuffle_rng,
    );
    Ok(Simulation {
        truth: Truth {
            seed: cfg.seed,
            bend: bend_angle(&coefficients, design.length(), &integrator)?,
            coefficients,
            roll,
            noise: cfg.noise,
        },
        design,
        markers,
        backbone,
        front,
        side,
    })
}

/// Renders the simulated frame as a front/side image pair.
pub fn render(sim: &Simulation, cfg: &RunConfig) -> Result<(GrayImage, GrayImage)> {
    let scene = Scene::from_model(
        &sim.design,
        &sim.truth.coefficients,
        sim.truth.roll,
        &Pose::identity(),
        &cfg.estimator.integrator,
    )?;
    render_biplane(&scene, &cfg.geometry, &cfg.imaging, cfg.seed)
}

/// Segments and labels one frame.
pub fn detect_markers(img: &GrayImage, design: &CatheterDesign, cfg: &RunConfig) -> Result<MarkerDetections> {
    let raw = segment(img, &cfg.segmentation);
    classify(&raw, &ExpectedAreas::for_design(design, img.pixel_scale))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub millis: f64,
}

/// Summary of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub primary: Plane,
    pub front_detections: usize,
    pub side_detections: usize,
    /// Design indices (from 1) of markers that were not reconstructed.
    pub missing: Vec<usize>,
    pub unmatched_primary: usize,
    pub unmatched_secondary: usize,
    pub estimates: Vec<PoseEstimate>,
    pub timings: Vec<StageTiming>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub front: MarkerDetections,
    pub side: MarkerDetections,
    pub reconstruction: Reconstruction,
    pub report: PipelineReport,
}

fn timed<T>(timings: &mut Vec<StageTiming>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let start = Instant::now();
    let out = f().map_err(|e| e.at_stage(stage));
    timings.push(StageTiming {
        stage: stage.to_owned(),
        millis: start.elapsed().as_secs_f64() * 1e3,
    });
    out
}

/// Segmentation, correspondence, reconstruction and a cold-start
/// estimate per requested modal order.
pub fn run_pipeline(
    front: &GrayImage,
    side: &GrayImage,
    design: &CatheterDesign,
    cfg: &RunConfig,
    orders: &[usize],
) -> Result<PipelineOutput> {
    if orders.is_empty() {
        return Err(Error::config("order", "at least one modal order is required"));
    }
    let mut timings = Vec::new();
    let front_det = timed(&mut timings, "segment", || detect_markers(front, design, cfg))?;
    let side_det = timed(&mut timings, "segment", || detect_markers(side, design, cfg))?;
    let rec = timed(&mut timings, "reconstruct", || {
        let f = front_det.to_observation()?;
        let s = side_det.to_observation()?;
        let uncertainty = cfg.noise.max(front.pixel_scale);
        reconstruct(&f, &s, &cfg.geometry, design, uncertainty, &cfg.reconstruction)
    })?;
    let mut estimates = Vec::with_capacity(orders.len());
    for &order in orders {
        let est = timed(&mut timings, "estimate", || {
            estimate_cold(&rec.markers, design, order, &cfg.estimator)
        })?;
        estimates.push(est);
    }
    let missing = rec
        .markers
        .intermediates
        .iter()
        .enumerate()
        .filter(|(_, p)| p.is_none())
        .map(|(i, _)| i + 1)
        .collect();
    let report = PipelineReport {
        primary: rec.primary,
        front_detections: front_det.len(),
        side_detections: side_det.len(),
        missing,
        unmatched_primary: rec.correspondence.unmatched_primary.len(),
        unmatched_secondary: rec.correspondence.unmatched_secondary.len(),
        estimates,
        timings,
    };
    Ok(PipelineOutput {
        front: front_det,
        side: side_det,
        reconstruction: rec,
        report,
    })
}

/// Backbone of an estimate grown from a base pose.
pub fn estimated_backbone(est: &PoseEstimate, base: &Pose, length: f64, integrator: &Integrator) -> Result<BackbonePath> {
    integrator.propagate(&est.coefficients, base, length)
}
