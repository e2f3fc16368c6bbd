//! Monte-Carlo design studies: random configurations, simulated noisy
//! biplane observations, reconstruction, cold-start estimation and error
//! statistics.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2};
use rand::seq::SliceRandom;
use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::biplane::{perturb_with, project_point, BiplaneGeometry, Plane};
use crate::design::{build_helical_design, marker_spacing, spacing_factor, CatheterDesign, HelixSpec};
use crate::error::{Error, Result};
use crate::estimator::{estimate_cold, EstimatorConfig, PoseEstimate};
use crate::kinematics::{Integrator, MarkerPositions, ModalCoefficients, Pose};
use crate::reconstruction::{reconstruct, PlanarObservation, ReconstructionConfig};
use crate::rng::{self, Purpose};

/// Maximum number of rejected draws in [`sample_configuration`].
pub const MAX_REJECTIONS: usize = 10_000;

/// Backbone samples used by the error metrics.
pub const ERROR_SAMPLES: usize = 101;

/// Limits on randomly drawn configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurvatureBounds {
    /// Largest admissible angle between base and tip tangents, rad.
    pub max_bend: f64,
    /// Magnitude bound per modal order, 1/mm. Shorter lists repeat the last
    /// entry; empty means `pi / L` for every order.
    pub coefficient_bounds: Vec<f64>,
}

impl Default for CurvatureBounds {
    fn default() -> Self {
        Self {
            max_bend: PI,
            coefficient_bounds: Vec::new(),
        }
    }
}

impl CurvatureBounds {
    pub fn zero() -> Self {
        Self {
            max_bend: PI,
            coefficient_bounds: vec![0.0],
        }
    }

    fn bound(&self, k: usize, length: f64) -> f64 {
        match self.coefficient_bounds.get(k).or(self.coefficient_bounds.last()) {
            Some(b) => *b,
            None => PI / length,
        }
    }
}

/// Angle between base and tip tangents for a configuration.
pub fn bend_angle(c: &ModalCoefficients, length: f64, integrator: &Integrator) -> Result<f64> {
    let tip = integrator.frames_at(c, &Pose::identity(), length, &[length])?[0];
    Ok(tip.tangent().z.clamp(-1.0, 1.0).acos())
}

/// Uniform coefficients within the per-order bounds, rejected until the
/// tip bend is within bounds, and a uniform roll in (-pi, pi].
pub fn sample_configuration<R: Rng + ?Sized>(
    rng: &mut R,
    bounds: &CurvatureBounds,
    order: usize,
    length: f64,
) -> Result<(ModalCoefficients, f64)> {
    if order == 0 {
        return Err(Error::Domain("modal order must be positive".into()));
    }
    let integrator = Integrator::default();
    for _ in 0..MAX_REJECTIONS {
        let draw = |k: usize, rng: &mut R| {
            let b = bounds.bound(k, length);
            if b > 0.0 {
                rng.random_range(-b..=b)
            } else {
                0.0
            }
        };
        let cx: Vec<f64> = (0..order).map(|k| draw(k, rng)).collect();
        let cy: Vec<f64> = (0..order).map(|k| draw(k, rng)).collect();
        let c = ModalCoefficients::new(cx, cy)?;
        if bend_angle(&c, length, &integrator)? <= bounds.max_bend {
            let sigma = PI - 2.0 * PI * rng.random::<f64>();
            return Ok((c, sigma));
        }
    }
    Err(Error::RejectionOverflow(MAX_REJECTIONS))
}

/// Root-mean-square distance between corresponding backbone samples.
pub fn shape_error(estimated: &[Pose], truth: &[Pose]) -> Result<f64> {
    check_lengths(estimated, truth)?;
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(a, b)| (a.position - b.position).norm_squared())
        .sum();
    Ok((sum / estimated.len() as f64).sqrt())
}

/// Angle about the true tangent separating two material frames, rad.
pub fn twist_angle(estimated: &Matrix3<f64>, truth: &Matrix3<f64>) -> f64 {
    let rel = truth.transpose() * estimated;
    (rel[(1, 0)] - rel[(0, 1)]).atan2(rel[(0, 0)] + rel[(1, 1)])
}

/// Root-mean-square twist between corresponding material frames, degrees.
pub fn roll_error(estimated: &[Pose], truth: &[Pose]) -> Result<f64> {
    check_lengths(estimated, truth)?;
    let sum: f64 = estimated
        .iter()
        .zip(truth)
        .map(|(a, b)| twist_angle(&a.rotation, &b.rotation).powi(2))
        .sum();
    Ok((sum / estimated.len() as f64).sqrt().to_degrees())
}

fn check_lengths(a: &[Pose], b: &[Pose]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(())
}

/// Material frames (section frames rolled by `sigma`) at `k` equally
/// spaced arc-lengths.
pub fn material_frames(
    c: &ModalCoefficients,
    sigma: f64,
    base: &Pose,
    length: f64,
    k: usize,
    integrator: &Integrator,
) -> Result<Vec<Pose>> {
    let queries: Vec<f64> = (0..k).map(|i| length * i as f64 / (k - 1) as f64).collect();
    Ok(integrator
        .frames_at(c, base, length, &queries)?
        .into_iter()
        .map(|p| p.rolled(sigma))
        .collect())
}

/// Noisy planar views of a marker set. Intermediate detections are
/// shuffled so no ordering leaks to reconstruction.
pub fn simulate_observations<R: Rng + ?Sized>(
    markers: &MarkerPositions,
    geom: &BiplaneGeometry,
    noise: f64,
    front_rng: &mut R,
    side_rng: &mut R,
    shuffle_rng: &mut R,
) -> (PlanarObservation, PlanarObservation) {
    let mut view = |plane: Plane, rng: &mut R| {
        let world = markers.to_vec();
        let clean: Vec<Vector2<f64>> = world.iter().map(|p| project_point(p, plane, geom)).collect();
        let noisy = perturb_with(&clean, noise, rng);
        let n = noisy.len();
        let mut inter = noisy[2..n - 1].to_vec();
        inter.shuffle(shuffle_rng);
        PlanarObservation {
            base_prime: noisy[0],
            base: noisy[1],
            tip: noisy[n - 1],
            intermediates: inter,
        }
    };
    let front = view(Plane::Front, front_rng);
    let side = view(Plane::Side, side_rng);
    (front, side)
}

/// Errors of one estimate against the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialErrors {
    /// RMS backbone position error, mm.
    pub shape: f64,
    /// RMS roll error, degrees.
    pub roll: f64,
}

/// Compares the estimated backbone (grown from the reconstructed base
/// frame) with the true one.
pub fn evaluate(
    estimate: &PoseEstimate,
    estimated_base: &Pose,
    truth_c: &ModalCoefficients,
    truth_sigma: f64,
    truth_base: &Pose,
    length: f64,
    integrator: &Integrator,
) -> Result<TrialErrors> {
    let est = material_frames(
        &estimate.coefficients,
        estimate.roll,
        estimated_base,
        length,
        ERROR_SAMPLES,
        integrator,
    )?;
    let truth = material_frames(truth_c, truth_sigma, truth_base, length, ERROR_SAMPLES, integrator)?;
    Ok(TrialErrors {
        shape: shape_error(&est, &truth)?,
        roll: roll_error(&est, &truth)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Spacing,
    Slenderness,
    Dropped,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spacing" => Ok(Self::Spacing),
            "slenderness" => Ok(Self::Slenderness),
            "dropped" => Ok(Self::Dropped),
            other => Err(Error::config("study.kind", format!("unknown study kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub kind: StudyKind,
    pub configurations: usize,
    /// Planar uncertainty radius, mm.
    pub noise: f64,
    pub seed: u64,
    pub orders: Vec<usize>,
    pub bounds: CurvatureBounds,
    pub length: f64,
    /// Catheter radius for the spacing and dropped studies, mm.
    pub radius: f64,
    /// Helix turns over the marker run.
    pub turns: f64,
    /// Angle between consecutive markers of the spacing sweep, rad; when
    /// set it replaces `turns` there, so denser designs wind more.
    pub angular_spacing: Option<f64>,
    /// Marker counts of the spacing sweep.
    pub marker_counts: Vec<usize>,
    /// Radii of the slenderness sweep, mm.
    pub radii: Vec<f64>,
    /// Marker count of the slenderness sweep.
    pub slenderness_markers: usize,
    /// Marker count of the dropped-marker study.
    pub dropped_markers: usize,
    pub geometry: BiplaneGeometry,
    pub reconstruction: ReconstructionConfig,
    pub estimator: EstimatorConfig,
}

/// Default angle between consecutive markers of the spacing sweep, rad.
/// At r = 1 mm, L = 25 mm and N = 0.5 mm the densest design (71 markers)
/// then sits at a spacing factor of 1.5.
pub const SPACING_SWEEP_STEP: f64 = 0.677_676;

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            kind: StudyKind::Spacing,
            configurations: 25,
            noise: 0.5,
            seed: 1,
            orders: vec![3],
            bounds: CurvatureBounds::default(),
            length: 25.0,
            radius: 1.0,
            turns: 2.0,
            angular_spacing: Some(SPACING_SWEEP_STEP),
            marker_counts: log_spaced_counts(1, 71, 15),
            radii: log_spaced(0.2, 4.0, 20),
            slenderness_markers: 25,
            dropped_markers: 21,
            geometry: BiplaneGeometry::default(),
            reconstruction: ReconstructionConfig {
                spacing_noise_factor: 2.0 * std::f64::consts::SQRT_2,
                ..Default::default()
            },
            estimator: EstimatorConfig::default(),
        }
    }
}

/// `k` log-spaced values from `lo` to `hi` inclusive.
pub fn log_spaced(lo: f64, hi: f64, k: usize) -> Vec<f64> {
    if k == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..k)
        .map(|i| (a + (b - a) * i as f64 / (k - 1) as f64).exp())
        .collect()
}

/// Log-spaced integer counts, rounded and deduplicated.
pub fn log_spaced_counts(lo: usize, hi: usize, k: usize) -> Vec<usize> {
    let mut v: Vec<usize> = log_spaced(lo as f64, hi as f64, k)
        .into_iter()
        .map(|x| x.round() as usize)
        .collect();
    v.dedup();
    v
}

impl StudyConfig {
    pub fn for_kind(kind: StudyKind) -> Self {
        let orders = match kind {
            StudyKind::Dropped => vec![2, 3, 4],
            _ => vec![3],
        };
        Self {
            kind,
            orders,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.configurations == 0 {
            return Err(Error::config("study.configurations", "must be at least 1"));
        }
        if self.orders.is_empty() || self.orders.contains(&0) {
            return Err(Error::config("study.orders", "need at least one positive modal order"));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::config("study.noise", "must be non-negative"));
        }
        if !(self.length > 0.0) || !(self.radius > 0.0) || !(self.turns > 0.0) {
            return Err(Error::config("study", "length, radius and turns must be positive"));
        }
        if matches!(self.angular_spacing, Some(a) if !(a > 0.0 && a.is_finite())) {
            return Err(Error::config("study.angular_spacing", "must be positive"));
        }
        match self.kind {
            StudyKind::Spacing if self.marker_counts.is_empty() || self.marker_counts.contains(&0) => {
                Err(Error::config("study.marker_counts", "need at least one positive marker count"))
            }
            StudyKind::Slenderness if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0)) => {
                Err(Error::config("study.radii", "need at least one positive radius"))
            }
            _ => self.estimator.validate(),
        }
    }

    /// Designs of the sweep with their abscissa (spacing factor or
    /// slenderness).
    pub fn designs(&self) -> Result<Vec<(CatheterDesign, f64)>> {
        let helical = |n: usize, r: f64| -> Result<(CatheterDesign, HelixSpec)> {
            let h = HelixSpec::spanning(self.length, n, self.turns)?;
            Ok((build_helical_design(self.length, r, n, &h)?, h))
        };
        let kappa = |r: f64, h: &HelixSpec| -> f64 {
            spacing_factor(marker_spacing(r, h), self.noise).unwrap_or(f64::INFINITY)
        };
        match self.kind {
            StudyKind::Spacing => self
                .marker_counts
                .iter()
                .map(|&n| {
                    let (d, h) = match self.angular_spacing {
                        Some(step) => {
                            let turns = n as f64 * step / std::f64::consts::TAU;
                            let h = HelixSpec::spanning(self.length, n, turns)?;
                            (build_helical_design(self.length, self.radius, n, &h)?, h)
                        }
                        None => helical(n, self.radius)?,
                    };
                    Ok((d, kappa(self.radius, &h)))
                })
                .collect(),
            StudyKind::Slenderness => self
                .radii
                .iter()
                .map(|&r| {
                    let (d, _) = helical(self.slenderness_markers, r)?;
                    let x = d.slenderness();
                    Ok((d, x))
                })
                .collect(),
            StudyKind::Dropped => {
                let (d, h) = helical(self.dropped_markers, self.radius)?;
                Ok(vec![(d, kappa(self.radius, &h))])
            }
        }
    }
}

/// Whether markers were withheld from one view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Control,
    Dropped,
}

/// One simulated trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub design: usize,
    pub configuration: usize,
    pub order: usize,
    pub variant: Variant,
    pub x: f64,
    /// RMS shape error as a percentage of the length.
    pub shape_error_pct: Option<f64>,
    pub roll_error_deg: Option<f64>,
    pub converged: bool,
    pub outer_iterations: usize,
    pub monotone: bool,
    pub dropped: usize,
    pub error: Option<String>,
}

/// Aggregated statistics at one design point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPointSummary {
    pub design: usize,
    pub order: usize,
    pub variant: Variant,
    /// Spacing factor or slenderness.
    pub x: f64,
    pub marker_count: usize,
    pub radius: f64,
    pub shape_mean_pct: f64,
    pub shape_sd_pct: f64,
    pub roll_mean_deg: f64,
    pub roll_sd_deg: f64,
    pub trials: usize,
    pub failures: usize,
    /// More than a fifth of the trials failed.
    pub flagged: bool,
}

/// Control and dropped statistics for one modal order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedRow {
    pub order: usize,
    pub control_shape_pct: f64,
    pub control_roll_deg: f64,
    pub dropped_shape_pct: f64,
    pub dropped_roll_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub kind: StudyKind,
    pub seed: u64,
    pub points: Vec<DesignPointSummary>,
    pub dropped_table: Vec<DroppedRow>,
    #[serde(skip)]
    pub trials: Vec<TrialRecord>,
}

impl StudyResult {
    /// Successful trials at one design point.
    pub fn samples(&self, design: usize, order: usize, variant: Variant) -> (Vec<f64>, Vec<f64>) {
        let mut shape = Vec::new();
        let mut roll = Vec::new();
        for t in &self.trials {
            if t.design == design && t.order == order && t.variant == variant {
                if let (Some(s), Some(r)) = (t.shape_error_pct, t.roll_error_deg) {
                    shape.push(s);
                    roll.push(r);
                }
            }
        }
        (shape, roll)
    }

    pub fn point(&self, design: usize, order: usize, variant: Variant) -> Option<&DesignPointSummary> {
        self.points
            .iter()
            .find(|p| p.design == design && p.order == order && p.variant == variant)
    }
}

/// Inputs of a single trial.
#[derive(Debug, Clone)]
pub struct TrialSpec<'a> {
    pub design: &'a CatheterDesign,
    pub design_index: usize,
    pub configuration: usize,
    pub order: usize,
    pub variant: Variant,
}

/// Simulates, reconstructs and estimates one trial.
///
/// The configuration, noise and dropout draws are keyed by design and
/// configuration index only, so control and dropped variants and
/// different modal orders see the same scenes.
pub fn run_trial(cfg: &StudyConfig, spec: &TrialSpec<'_>, x: f64) -> TrialRecord {
    let keys = |p: Purpose| [spec.design_index as u64, spec.configuration as u64, p as u64];
    let mut record = TrialRecord {
        design: spec.design_index,
        configuration: spec.configuration,
        order: spec.order,
        variant: spec.variant,
        x,
        shape_error_pct: None,
        roll_error_deg: None,
        converged: false,
        outer_iterations: 0,
        monotone: true,
        dropped: 0,
        error: None,
    };
    let result = (|| -> Result<()> {
        let design = spec.design;
        let length = design.length();
        let mut cfg_rng = rng::stream(cfg.seed, &keys(Purpose::Configuration));
        // truth drawn at the largest studied order so it is shared across orders
        let truth_order = cfg.orders.iter().copied().max().unwrap_or(spec.order).max(3);
        let (c, sigma) = sample_configuration(&mut cfg_rng, &cfg.bounds, truth_order, length)?;
        let base = Pose::identity();
        let integrator = cfg.estimator.integrator;
        let markers = integrator.marker_positions(design, &c, sigma, &base)?;

        let mut front_rng = rng::stream(cfg.seed, &keys(Purpose::FrontNoise));
        let mut side_rng = rng::stream(cfg.seed, &keys(Purpose::SideNoise));
        let mut shuffle_rng = rng::stream(cfg.seed, &keys(Purpose::Shuffle));
        let (mut front, mut side) = simulate_observations(
            &markers,
            &cfg.geometry,
            cfg.noise,
            &mut front_rng,
            &mut side_rng,
            &mut shuffle_rng,
        );

        if spec.variant == Variant::Dropped {
            let n = design.marker_count();
            let mut drop_rng = rng::stream(cfg.seed, &keys(Purpose::Dropout));
            let plane = if drop_rng.random_bool(0.5) { Plane::Front } else { Plane::Side };
            if n >= 2 {
                let k = drop_rng.random_range(1..=n / 2);
                let view = match plane {
                    Plane::Front => &mut front,
                    Plane::Side => &mut side,
                };
                // observations are already shuffled, so dropping the tail is uniform
                view.intermediates.truncate(n - k);
                record.dropped = k;
            }
        }

        let rec = reconstruct(&front, &side, &cfg.geometry, design, cfg.noise, &cfg.reconstruction)?;
        let est = estimate_cold(&rec.markers, design, spec.order, &cfg.estimator)?;
        record.converged = est.converged;
        record.outer_iterations = est.outer_iterations;
        record.monotone = est.is_monotone(1e-12);
        let errors = evaluate(&est, &rec.markers.base_pose()?, &c, sigma, &base, length, &integrator)?;
        record.shape_error_pct = Some(100.0 * errors.shape / length);
        record.roll_error_deg = Some(errors.roll);
        Ok(())
    })();
    if let Err(e) = result {
        record.error = Some(e.to_string());
    }
    record
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every trial of the study in parallel and aggregates by design
/// point. Results do not depend on the number of worker threads.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let designs = cfg.designs()?;
    let variants: &[Variant] = match cfg.kind {
        StudyKind::Dropped => &[Variant::Control, Variant::Dropped],
        _ => &[Variant::Control],
    };
    let mut jobs = Vec::new();
    for (di, (d, x)) in designs.iter().enumerate() {
        for &order in &cfg.orders {
            for &variant in variants {
                for ci in 0..cfg.configurations {
                    jobs.push((
                        TrialSpec {
                            design: d,
                            design_index: di,
                            configuration: ci,
                            order,
                            variant,
                        },
                        *x,
                    ));
                }
            }
        }
    }
    let trials: Vec<TrialRecord> = jobs.par_iter().map(|(spec, x)| run_trial(cfg, spec, *x)).collect();

    let mut points = Vec::new();
    for (di, (d, x)) in designs.iter().enumerate() {
        for &order in &cfg.orders {
            for &variant in variants {
                let group: Vec<&TrialRecord> = trials
                    .iter()
                    .filter(|t| t.design == di && t.order == order && t.variant == variant)
                    .collect();
                let shape: Vec<f64> = group.iter().filter_map(|t| t.shape_error_pct).collect();
                let roll: Vec<f64> = group.iter().filter_map(|t| t.roll_error_deg).collect();
                let failures = group.len() - shape.len();
                let (sm, ss) = mean_sd(&shape);
                let (rm, rs) = mean_sd(&roll);
                if 5 * failures > group.len() {
                    log::warn!("design point {di} (order {order}, {variant:?}): {failures}/{} trials failed", group.len());
                }
                points.push(DesignPointSummary {
                    design: di,
                    order,
                    variant,
                    x: *x,
                    marker_count: d.marker_count(),
                    radius: d.radius(),
                    shape_mean_pct: sm,
                    shape_sd_pct: ss,
                    roll_mean_deg: rm,
                    roll_sd_deg: rs,
                    trials: group.len(),
                    failures,
                    flagged: 5 * failures > group.len(),
                });
            }
        }
    }

    let dropped_table = if cfg.kind == StudyKind::Dropped {
        cfg.orders
            .iter()
            .filter_map(|&order| {
                let c = points.iter().find(|p| p.order == order && p.variant == Variant::Control)?;
                let d = points.iter().find(|p| p.order == order && p.variant == Variant::Dropped)?;
                Some(DroppedRow {
                    order,
                    control_shape_pct: c.shape_mean_pct,
                    control_roll_deg: c.roll_mean_deg,
                    dropped_shape_pct: d.shape_mean_pct,
                    dropped_roll_deg: d.roll_mean_deg,
                })
            })
            .collect()
    } else {
        Vec::new()
    };

    Ok(StudyResult {
        kind: cfg.kind,
        seed: cfg.seed,
        points,
        dropped_table,
        trials,
    })
}

/// Welch's unequal-variance t-test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchTest {
    pub t: f64,
    pub dof: f64,
    /// One-sided p-value for `mean(a) > mean(b)`.
    pub p_greater: f64,
}

pub fn welch_test(a: &[f64], b: &[f64]) -> Result<WelchTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::Domain("Welch test needs at least two samples per group".into()));
    }
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let va = sa * sa / a.len() as f64;
    let vb = sb * sb / b.len() as f64;
    let se = (va + vb).sqrt();
    if se == 0.0 {
        let p = if ma > mb { 0.0 } else { 1.0 };
        return Ok(WelchTest {
            t: f64::INFINITY * (ma - mb).signum(),
            dof: f64::INFINITY,
            p_greater: p,
        });
    }
    let t = (ma - mb) / se;
    let dof = (va + vb).powi(2)
        / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::Domain(e.to_string()))?;
    Ok(WelchTest {
        t,
        dof,
        p_greater: 1.0 - dist.cdf(t),
    })
}

/// Index of the design point whose abscissa is closest to `target` on a
/// log scale.
pub fn nearest_point(xs: &[f64], target: f64) -> Option<usize> {
    xs.iter()
        .enumerate()
        .min_by(|a, b| {
            (a.1.ln() - target.ln())
                .abs()
                .total_cmp(&(b.1.ln() - target.ln()).abs())
        })
        .map(|(i, _)| i)
}
