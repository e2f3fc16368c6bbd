//! Property tests for the invariants of each module.

use std::collections::HashSet;

use nalgebra::{Matrix3, Vector2, Vector3};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand::rngs::ChaCha8Rng;

use cathtrack::biplane::{epipolar_distance, project_point, triangulate, BiplaneGeometry, Plane};
use cathtrack::config::RunConfig;
use cathtrack::design::{build_helical_design, CatheterDesign, HelixSpec};
use cathtrack::estimator::{estimate_cold, EstimatorConfig};
use cathtrack::imaging::{render_dots, segment, ImageParams, SegmentationParams};
use cathtrack::kinematics::{Integrator, ModalCoefficients, Pose};
use cathtrack::reconstruction::{
    correspond, correspond_ordered, detect_missing, reconstruct, refine_chain, sort_primary, OrderedMarkerSet,
    ReconstructionConfig,
};
use cathtrack::studies::{run_study, sample_configuration, simulate_observations, CurvatureBounds, StudyConfig, StudyKind};

const LENGTH: f64 = 25.0;

fn helical(n: usize, turns: f64) -> CatheterDesign {
    let h = HelixSpec::spanning(LENGTH, n, turns).unwrap();
    build_helical_design(LENGTH, 1.0, n, &h).unwrap()
}

fn coefficients(order: usize, bound: f64) -> impl Strategy<Value = ModalCoefficients> {
    (
        prop::collection::vec(-bound..bound, order),
        prop::collection::vec(-bound..bound, order),
    )
        .prop_map(|(cx, cy)| ModalCoefficients::new(cx, cy).unwrap())
}

fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

fn world_point() -> impl Strategy<Value = Vector3<f64>> {
    (-50.0..50.0, -50.0..50.0, -50.0..50.0).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn frames_stay_orthonormal(c in coefficients(4, 0.12), steps in 10usize..2000) {
        let path = Integrator::with_step(LENGTH / steps as f64).propagate(&c, &Pose::identity(), LENGTH).unwrap();
        for f in &path.samples {
            prop_assert!(orthonormality_defect(&f.rotation) < 1e-9);
        }
    }

    #[test]
    fn backbone_is_inextensible(c in coefficients(3, 0.12)) {
        let path = Integrator::default().propagate(&c, &Pose::identity(), LENGTH).unwrap();
        for w in path.samples.windows(2) {
            let ds = w[1].s - w[0].s;
            prop_assert!((w[1].position - w[0].position).norm() <= ds * (1.0 + 1e-9));
        }
    }

    #[test]
    fn markers_sit_one_radius_off_the_backbone(c in coefficients(3, 0.1), sigma in -3.1..3.1f64, n in 1usize..30) {
        let d = helical(n, 2.0);
        let integ = Integrator::default();
        let m = integ.marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let frames = integ.frames_at(&c, &Pose::identity(), LENGTH, d.arc_lengths()).unwrap();
        for (p, f) in m.intermediates.iter().zip(&frames) {
            prop_assert!(((p - f.position).norm() - d.radius()).abs() < 1e-9);
        }
    }

    #[test]
    fn roll_equals_angle_offset(c in coefficients(3, 0.1), sigma in -3.1..3.1f64) {
        let d = helical(12, 2.0);
        let integ = Integrator::default();
        let rolled = integ.marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let shifted = integ.marker_positions(&d.with_angle_offset(sigma), &c, 0.0, &Pose::identity()).unwrap();
        for (a, b) in rolled.intermediates.iter().zip(&shifted.intermediates) {
            prop_assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn triangulation_round_trip(p in world_point(), angle in -1.2..1.2f64) {
        let g = BiplaneGeometry::with_side_angle(0.1, angle).unwrap();
        let (f, s) = (project_point(&p, Plane::Front, &g), project_point(&p, Plane::Side, &g));
        prop_assert!((triangulate(&f, &s, &g).unwrap() - p).norm() < 1e-9);
        prop_assert!(epipolar_distance(&s, &f, Plane::Front, &g) < 1e-9);
        prop_assert!(epipolar_distance(&f, &s, Plane::Side, &g) < 1e-9);
    }

    #[test]
    fn correspondence_is_a_partial_injection(
        pts in prop::collection::vec(world_point(), 1..30),
        keep in prop::collection::vec(any::<bool>(), 30),
        gate in 0.1..20.0f64,
        seed in any::<u64>(),
    ) {
        let g = BiplaneGeometry::canonical(0.1);
        let f: Vec<_> = pts.iter().map(|p| project_point(p, Plane::Front, &g)).collect();
        let mut s: Vec<_> = pts.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| project_point(p, Plane::Side, &g)).collect();
        s.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let tip = Vector2::new(0.0, 60.0);
        let chain = sort_primary(&s, &tip);
        for corr in [
            correspond(&f, &s, Plane::Front, &g, gate, 0.1),
            correspond_ordered(&f, &s, &chain, Plane::Front, &g, gate),
        ] {
            let mut seen_p = HashSet::new();
            let mut seen_s = HashSet::new();
            for &(pi, si) in &corr.pairs {
                prop_assert!(seen_p.insert(pi) && seen_s.insert(si));
                prop_assert!(epipolar_distance(&s[si], &f[pi], Plane::Front, &g) <= gate);
            }
            prop_assert_eq!(corr.pairs.len() + corr.unmatched_primary.len(), f.len());
            prop_assert_eq!(corr.pairs.len() + corr.unmatched_secondary.len(), s.len());
        }
    }

    #[test]
    fn refined_chain_is_a_shorter_permutation(
        pts in prop::collection::vec((-10.0..10.0f64, -10.0..10.0f64), 1..40),
        seed in any::<u64>(),
    ) {
        let pts: Vec<Vector2<f64>> = pts.into_iter().map(|(x, y)| Vector2::new(x, y)).collect();
        let (tip, base) = (Vector2::new(12.0, 0.0), Vector2::new(-12.0, 0.0));
        let mut order: Vec<usize> = (0..pts.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let length = |o: &[usize]| {
            let mut total = 0.0;
            let mut at = tip;
            for &i in o {
                total += (pts[i] - at).norm();
                at = pts[i];
            }
            total + (base - at).norm()
        };
        let refined = refine_chain(&pts, &order, &tip, &base);
        let mut sorted = refined.clone();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..pts.len()).collect::<Vec<_>>());
        prop_assert!(length(&refined) <= length(&order) + 1e-9);
    }

    #[test]
    fn segmentation_is_translation_equivariant(seed in any::<u64>(), di in -20i32..20, dj in -20i32..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 0.1;
        let pts = cathtrack::imaging::random_dot_scene(&mut rng, 6, 18.0, 2.0);
        let params = ImageParams { width: 512, height: 512, front_origin: [0.0, 0.0], ..Default::default() };
        let shift = Vector2::new(di as f64 * scale, -(dj as f64) * scale);
        let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
        let seg = SegmentationParams::default();
        let a = segment(&render_dots(&pts, 0.8, scale, &params, 1).unwrap(), &seg);
        let b = segment(&render_dots(&moved, 0.8, scale, &params, 1).unwrap(), &seg);
        prop_assert_eq!(a.len(), pts.len());
        prop_assert_eq!(b.len(), pts.len());
        for p in &a.centroids {
            let q = p + shift;
            prop_assert!(b.centroids.iter().any(|c| (c - q).norm() < 1e-9));
        }
    }

    #[test]
    fn config_round_trips(seed in any::<u64>(), noise in 0.0..2.0f64, order in 1usize..6, markers in 1usize..40) {
        let mut cfg = RunConfig { seed, noise, order, ..Default::default() };
        cfg.design = cathtrack::config::DesignSpec::Helical {
            length: 30.0,
            radius: 1.2,
            markers,
            turns: 1.5,
            start_angle: 0.25,
            widths: Default::default(),
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

/// Random configurations of the reference design within the default
/// workspace bounds.
fn configuration(seed: u64) -> (ModalCoefficients, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_configuration(&mut rng, &CurvatureBounds::default(), 3, LENGTH).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn dropout_mask_is_recovered(seed in any::<u64>(), drop_seed in any::<u64>()) {
        // 21 markers over two turns: spacing factor 2.56 at N = 0.5 mm
        let d = helical(21, 2.0);
        let (c, sigma) = configuration(seed);
        let m = Integrator::default().marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(drop_seed);
        let k = rng.random_range(1..=d.marker_count() / 2);
        let mut dropped: Vec<usize> = (0..d.marker_count()).collect();
        dropped.shuffle(&mut rng);
        dropped.truncate(k);
        let kept: Vec<Vector3<f64>> = (0..d.marker_count()).filter(|i| !dropped.contains(i)).map(|i| m.intermediates[i]).collect();
        let a = detect_missing(&kept, &m.base, &m.tip, &d, 0.35, 0.0).unwrap();
        let want: Vec<bool> = (0..d.marker_count()).map(|i| !dropped.contains(&i)).collect();
        prop_assert_eq!(a.mask, want);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { max_global_rejects: 20_000, ..ProptestConfig::with_cases(100) })]

    #[test]
    fn reconstruction_preserves_design_order(seed in any::<u64>(), noise in 0.0..0.3f64) {
        // marker spacing 1.28 mm exceeds twice the noise radius
        let d = helical(21, 2.0);
        let (c, sigma) = configuration(seed);
        let g = BiplaneGeometry::canonical(0.1);
        let m = Integrator::default().marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let stream = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
        let (mut a, mut b, mut sh) = (stream(1), stream(2), stream(3));
        let (f, s) = simulate_observations(&m, &g, noise, &mut a, &mut b, &mut sh);
        // markers within twice the noise radius in height share an epipolar
        // band; apart from neighbours, which may trade partners, every pair
        // must be separable
        let cfg = ReconstructionConfig::default();
        let z: Vec<f64> = m.intermediates.iter().map(|p| p.z).collect();
        let separable = z
            .iter()
            .enumerate()
            .all(|(i, a)| z.iter().skip(i + 2).all(|b| (a - b).abs() > cfg.consistency_bound(noise)));
        prop_assume!(separable);
        let rec = reconstruct(&f, &s, &g, &d, noise, &cfg).unwrap();
        prop_assert!(rec.markers.present_count() >= d.marker_count() - 1);
        for (i, p) in rec.markers.intermediates.iter().enumerate() {
            let Some(p) = p else { continue };
            let nearest = m
                .intermediates
                .iter()
                .enumerate()
                .min_by(|x, y| (x.1 - p).norm().total_cmp(&(y.1 - p).norm()))
                .unwrap()
                .0;
            prop_assert!(nearest.abs_diff(i) <= 1, "slot {} holds marker {}", i, nearest);
        }
    }

    #[test]
    fn noiseless_reconstruction_is_exact(seed in any::<u64>()) {
        let d = helical(21, 2.0);
        let (c, sigma) = configuration(seed);
        let g = BiplaneGeometry::canonical(0.1);
        let m = Integrator::default().marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let stream = |k: u64| ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
        let (mut a, mut b, mut sh) = (stream(1), stream(2), stream(3));
        // two markers at the same height are indistinguishable along the
        // epipolar line, so exact recovery needs every pair apart by the gate
        let cfg = ReconstructionConfig::default();
        let z: Vec<f64> = m.intermediates.iter().map(|p| p.z).collect();
        let separated = z.iter().enumerate().all(|(i, a)| z[i + 1..].iter().all(|b| (a - b).abs() > cfg.gate(0.0)));
        prop_assume!(separated);
        let (f, s) = simulate_observations(&m, &g, 0.0, &mut a, &mut b, &mut sh);
        let rec = reconstruct(&f, &s, &g, &d, 0.0, &cfg).unwrap();
        for (got, want) in rec.markers.intermediates.iter().zip(&m.intermediates) {
            prop_assert!((got.expect("present") - want).norm() < 1e-9);
        }
    }

    #[test]
    fn alternation_never_increases_cost(seed in any::<u64>(), order in 2usize..5) {
        let d = helical(21, 2.0);
        let (c, sigma) = configuration(seed);
        let m = Integrator::default().marker_positions(&d, &c, sigma, &Pose::identity()).unwrap();
        let est = estimate_cold(&OrderedMarkerSet::from_positions(&m), &d, order, &EstimatorConfig::default()).unwrap();
        for w in est.cost_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-12, "{:?}", est.cost_trace);
        }
    }
}

#[test]
fn studies_are_deterministic() {
    let cfg = StudyConfig {
        kind: StudyKind::Dropped,
        configurations: 3,
        orders: vec![2, 3],
        ..StudyConfig::for_kind(StudyKind::Dropped)
    };
    let a = run_study(&cfg).unwrap();
    let b = run_study(&cfg).unwrap();
    assert_eq!(a, b);
    let one_thread = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let c = one_thread.install(|| run_study(&cfg).unwrap());
    assert_eq!(a, c);
}
