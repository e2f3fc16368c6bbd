//! From per-plane detections to an ordered set of world-frame markers.
//!
//! The primary plane's intermediate detections are chained from the tip by
//! nearest neighbour (optionally shortened into a tip-to-base path), each
//! is paired with a secondary detection through the epipolar constraint,
//! matched pairs are triangulated and re-chained in 3D, and the resulting
//! chain is aligned to the design to find which markers are missing. When
//! enabled, alternative primary planes and matching rules are tried and the
//! reconstruction that best fits the design spacing is kept.

use nalgebra::{SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::biplane::{epipolar_distance, triangulate, BiplaneGeometry, Plane};
use crate::design::CatheterDesign;
use crate::error::{Error, Result};
use crate::kinematics::{MarkerPositions, Pose};

/// Detections from one image plane, mm. Bands are labeled; intermediate
/// markers carry no order.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarObservation {
    pub base_prime: Vector2<f64>,
    pub base: Vector2<f64>,
    pub tip: Vector2<f64>,
    pub intermediates: Vec<Vector2<f64>>,
}

impl PlanarObservation {
    /// Area of the bounding box of every detection.
    pub fn coverage_area(&self) -> f64 {
        let mut lo = self.tip;
        let mut hi = self.tip;
        for p in self
            .intermediates
            .iter()
            .chain([&self.base_prime, &self.base])
        {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let span = hi - lo;
        span.x * span.y
    }
}

/// Reconstructed markers in design order `[b', b, 1..n, e]`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedMarkerSet {
    pub base_prime: Vector3<f64>,
    pub base: Vector3<f64>,
    pub intermediates: Vec<Option<Vector3<f64>>>,
    pub tip: Vector3<f64>,
}

impl OrderedMarkerSet {
    /// Every marker present, taken from model positions.
    pub fn from_positions(m: &MarkerPositions) -> Self {
        Self {
            base_prime: m.base_prime,
            base: m.base,
            intermediates: m.intermediates.iter().copied().map(Some).collect(),
            tip: m.tip,
        }
    }

    pub fn present_mask(&self) -> Vec<bool> {
        self.intermediates.iter().map(Option::is_some).collect()
    }

    pub fn present_count(&self) -> usize {
        self.intermediates.iter().filter(|p| p.is_some()).count()
    }

    /// Drops the intermediate markers at the given design indices.
    pub fn without(mut self, indices: &[usize]) -> Self {
        for &i in indices {
            if let Some(slot) = self.intermediates.get_mut(i) {
                *slot = None;
            }
        }
        self
    }

    /// Unit vector from the proximal band to the base band.
    pub fn base_tangent(&self) -> Result<Vector3<f64>> {
        let d = self.base - self.base_prime;
        let n = d.norm();
        if !(n > 1e-9) {
            return Err(Error::DegenerateBase);
        }
        Ok(d / n)
    }

    /// Base frame estimate with zero roll.
    pub fn base_pose(&self) -> Result<Pose> {
        Pose::from_tangent(self.base, &self.base_tangent()?)
    }
}

/// Nearest-neighbour chain through `points` starting from `tip`; returns
/// indices into `points` in tip-to-base order.
pub fn sort_primary<const D: usize>(points: &[SVector<f64, D>], tip: &SVector<f64, D>) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..points.len()).collect();
    let mut order = Vec::with_capacity(points.len());
    let mut cursor = *tip;
    while !remaining.is_empty() {
        let (pos, _) = remaining
            .iter()
            .enumerate()
            .map(|(pos, &i)| (pos, (points[i] - cursor).norm_squared()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("non-empty");
        let idx = remaining.remove(pos);
        cursor = points[idx];
        order.push(idx);
    }
    order
}

/// Shortens a tip-to-base chain with 2-opt reversals and moves of short
/// segments, keeping the tip at the start and `base` past the end.
///
/// A nearest-neighbour chain on a curled projection tends to consist of
/// correctly ordered runs joined in the wrong sequence; both moves repair
/// exactly that. Returns a permutation of `order`.
pub fn refine_chain<const D: usize>(
    points: &[SVector<f64, D>],
    order: &[usize],
    tip: &SVector<f64, D>,
    base: &SVector<f64, D>,
) -> Vec<usize> {
    let n = order.len();
    if n < 2 {
        return order.to_vec();
    }
    // path[0] = tip, path[1..=n] = points, path[n + 1] = base
    let mut path: Vec<SVector<f64, D>> = Vec::with_capacity(n + 2);
    path.push(*tip);
    path.extend(order.iter().map(|&i| points[i]));
    path.push(*base);
    let mut ids: Vec<usize> = order.to_vec();
    let dist = |a: &SVector<f64, D>, b: &SVector<f64, D>| (a - b).norm();
    const EPS: f64 = 1e-12;
    // each accepted move strictly shortens the path, so this only bounds
    // pathological floating-point cycling
    for _ in 0..(50 * n) {
        let mut improved = false;
        // 2-opt: reverse path[i..=k]
        for i in 1..=n {
            for k in (i + 1)..=n {
                let delta = dist(&path[i - 1], &path[k]) + dist(&path[i], &path[k + 1])
                    - dist(&path[i - 1], &path[i])
                    - dist(&path[k], &path[k + 1]);
                if delta < -EPS {
                    path[i..=k].reverse();
                    ids[i - 1..k].reverse();
                    improved = true;
                }
            }
        }
        // or-opt: move path[i..i + len] between path[j] and path[j + 1]
        'outer: for len in 1..=3.min(n - 1) {
            for i in 1..=(n + 1 - len) {
                let (first, last) = (i, i + len - 1);
                let removed = dist(&path[first - 1], &path[first]) + dist(&path[last], &path[last + 1])
                    - dist(&path[first - 1], &path[last + 1]);
                for j in 0..=n {
                    if j + 1 >= first && j <= last {
                        continue;
                    }
                    let (a, b) = (&path[j], &path[j + 1]);
                    let forward = dist(a, &path[first]) + dist(&path[last], b);
                    let backward = dist(a, &path[last]) + dist(&path[first], b);
                    let insert = forward.min(backward) - dist(a, b);
                    if insert - removed < -EPS {
                        let mut seg: Vec<(SVector<f64, D>, usize)> =
                            (first..=last).map(|p| (path[p], ids[p - 1])).collect();
                        if backward < forward {
                            seg.reverse();
                        }
                        let mut rest: Vec<(SVector<f64, D>, usize)> = (1..=n)
                            .filter(|p| *p < first || *p > last)
                            .map(|p| (path[p], ids[p - 1]))
                            .collect();
                        // position in `rest` after which the segment goes
                        let at = if j < first { j } else { j - len };
                        rest.splice(at..at, seg);
                        for (p, (v, id)) in rest.into_iter().enumerate() {
                            path[p + 1] = v;
                            ids[p] = id;
                        }
                        improved = true;
                        break 'outer;
                    }
                }
            }
        }
        if !improved {
            break;
        }
    }
    ids
}

/// Cross-plane matching rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matching {
    /// Each primary point claims the nearest unclaimed epipolar candidate.
    Greedy,
    /// Order-preserving alignment of both chains.
    #[default]
    Ordered,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructionConfig {
    pub matching: Matching,
    /// Epipolar gate in units of the planar uncertainty.
    pub gate_factor: f64,
    /// Lower bound on the gate, mm (keeps noiseless matching tolerant of
    /// rounding).
    pub min_gate: f64,
    /// Relative spacing tolerance for missing-marker alignment.
    pub spacing_tolerance: f64,
    /// Absolute spacing allowance added to the relative tolerance, in units
    /// of the planar uncertainty.
    pub spacing_noise_factor: f64,
    /// Relative distance below which two candidates are reported ambiguous.
    pub ambiguity_ratio: f64,
    /// Re-chain triangulated markers from the tip in 3D instead of keeping
    /// the planar chain order.
    pub spatial_order: bool,
    /// Fall back to the least-cost marker alignment when no alignment fits
    /// the spacing tolerance.
    pub relaxed_assignment: bool,
    /// Shorten nearest-neighbour chains into a tip-to-base path with
    /// [`refine_chain`].
    pub refine_chains: bool,
    /// Also reconstruct from the other primary plane and with the other
    /// matching rule, keeping the result that best fits the design spacing.
    pub select_by_spacing: bool,
    /// Largest epipolar distance of a true pair, in units of the planar
    /// uncertainty; pairs beyond it are repaired with [`repair_pairs`].
    pub consistency_factor: f64,
}

impl Default for ReconstructionConfig {
    fn default() -> Self {
        Self {
            matching: Matching::Ordered,
            gate_factor: 3.0,
            min_gate: 0.05,
            spacing_tolerance: 0.35,
            spacing_noise_factor: 0.0,
            ambiguity_ratio: 0.1,
            spatial_order: true,
            relaxed_assignment: true,
            refine_chains: true,
            select_by_spacing: true,
            consistency_factor: 2.0,
        }
    }
}

impl ReconstructionConfig {
    pub fn gate(&self, uncertainty: f64) -> f64 {
        (self.gate_factor * uncertainty).max(self.min_gate)
    }

    /// Epipolar distance no correctly paired detections can exceed.
    pub fn consistency_bound(&self, uncertainty: f64) -> f64 {
        self.consistency_factor * uncertainty + CONSISTENCY_SLACK
    }

    /// Tip-to-base order of `points`, refined when configured.
    pub fn chain<const D: usize>(&self, points: &[SVector<f64, D>], tip: &SVector<f64, D>, base: &SVector<f64, D>) -> Vec<usize> {
        let order = sort_primary(points, tip);
        if self.refine_chains {
            refine_chain(points, &order, tip, base)
        } else {
            order
        }
    }
}

/// Round-off allowance of [`ReconstructionConfig::consistency_bound`], mm.
pub const CONSISTENCY_SLACK: f64 = 1e-9;

/// Result of epipolar matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Correspondence {
    /// `(primary index, secondary index)` in primary order.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_primary: Vec<usize>,
    pub unmatched_secondary: Vec<usize>,
    /// Primary indices whose two best candidates were nearly equidistant.
    pub ambiguous: Vec<usize>,
}

/// Greedy epipolar matching: each primary point, in order, claims the
/// closest unclaimed secondary point within `gate`.
pub fn correspond(
    ordered_primary: &[Vector2<f64>],
    secondary: &[Vector2<f64>],
    primary: Plane,
    geom: &BiplaneGeometry,
    gate: f64,
    ambiguity_ratio: f64,
) -> Correspondence {
    let mut claimed = vec![false; secondary.len()];
    let mut out = Correspondence::default();
    for (pi, p) in ordered_primary.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        let mut second = f64::INFINITY;
        for (si, q) in secondary.iter().enumerate() {
            if claimed[si] {
                continue;
            }
            let d = epipolar_distance(q, p, primary, geom);
            match best {
                Some((_, bd)) if d >= bd => second = second.min(d),
                _ => {
                    if let Some((_, bd)) = best {
                        second = second.min(bd);
                    }
                    best = Some((si, d));
                }
            }
        }
        match best {
            Some((si, d)) if d <= gate => {
                if second <= gate && second <= d * (1.0 + ambiguity_ratio) + 1e-12 {
                    log::warn!("ambiguous epipolar match for primary marker {pi}: {d:.3} vs {second:.3} mm");
                    out.ambiguous.push(pi);
                }
                claimed[si] = true;
                out.pairs.push((pi, si));
            }
            _ => out.unmatched_primary.push(pi),
        }
    }
    out.unmatched_secondary = (0..secondary.len()).filter(|&i| !claimed[i]).collect();
    out
}

/// Order-preserving epipolar matching between the primary chain and the
/// secondary detections taken in `secondary_chain` order (indices into
/// `secondary`, tip to base).
///
/// Pairs are aligned by dynamic programming so that matched indices
/// increase along both chains, except that two neighbours may swap places;
/// a pair costs its epipolar distance and must lie within `gate`, and
/// leaving a point unmatched costs `gate`.
pub fn correspond_ordered(
    ordered_primary: &[Vector2<f64>],
    secondary: &[Vector2<f64>],
    secondary_chain: &[usize],
    primary: Plane,
    geom: &BiplaneGeometry,
    gate: f64,
) -> Correspondence {
    let chain = secondary_chain;
    let (np, ns) = (ordered_primary.len(), chain.len());
    let skip = gate.max(1e-12);
    // cost[i][j]: best alignment of the first i primary and j secondary points
    let mut cost = vec![vec![f64::INFINITY; ns + 1]; np + 1];
    let mut step = vec![vec![0u8; ns + 1]; np + 1];
    cost[0][0] = 0.0;
    for i in 0..=np {
        for j in 0..=ns {
            let here = cost[i][j];
            if !here.is_finite() {
                continue;
            }
            if i < np && here + skip < cost[i + 1][j] {
                cost[i + 1][j] = here + skip;
                step[i + 1][j] = 1;
            }
            if j < ns && here + skip < cost[i][j + 1] {
                cost[i][j + 1] = here + skip;
                step[i][j + 1] = 2;
            }
            if i < np && j < ns {
                let d = epipolar_distance(&secondary[chain[j]], &ordered_primary[i], primary, geom);
                if d <= gate && here + d < cost[i + 1][j + 1] {
                    cost[i + 1][j + 1] = here + d;
                    step[i + 1][j + 1] = 3;
                }
            }
            // neighbours swapped between the two chains
            if i + 1 < np && j + 1 < ns {
                let a = epipolar_distance(&secondary[chain[j + 1]], &ordered_primary[i], primary, geom);
                let b = epipolar_distance(&secondary[chain[j]], &ordered_primary[i + 1], primary, geom);
                if a <= gate && b <= gate && here + a + b < cost[i + 2][j + 2] {
                    cost[i + 2][j + 2] = here + a + b;
                    step[i + 2][j + 2] = 4;
                }
            }
        }
    }
    let mut out = Correspondence::default();
    let (mut i, mut j) = (np, ns);
    let mut claimed = vec![false; ns];
    while i > 0 || j > 0 {
        match step[i][j] {
            3 => {
                out.pairs.push((i - 1, chain[j - 1]));
                claimed[j - 1] = true;
                i -= 1;
                j -= 1;
            }
            4 => {
                out.pairs.push((i - 1, chain[j - 2]));
                out.pairs.push((i - 2, chain[j - 1]));
                claimed[j - 1] = true;
                claimed[j - 2] = true;
                i -= 2;
                j -= 2;
            }
            1 => {
                out.unmatched_primary.push(i - 1);
                i -= 1;
            }
            _ => j -= 1,
        }
    }
    out.pairs.reverse();
    out.unmatched_primary.reverse();

    // leftovers that are each other's nearest epipolar partner within the
    // gate; their chain positions disagreed, so they are placed by position
    let free: Vec<usize> = (0..ns).filter(|&k| !claimed[k]).collect();
    let nearest = |q: &Vector2<f64>, cands: &mut dyn Iterator<Item = (usize, Vector2<f64>)>| {
        cands
            .map(|(k, c)| (k, epipolar_distance(&c, q, primary, geom)))
            .filter(|(_, d)| *d <= gate)
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    };
    let mut rescued = Vec::new();
    for &i in &out.unmatched_primary {
        let Some(k) = nearest(&ordered_primary[i], &mut free.iter().map(|&k| (k, secondary[chain[k]]))) else {
            continue;
        };
        // mutual check: the secondary point's best primary among the leftovers
        let back = out
            .unmatched_primary
            .iter()
            .map(|&p| (p, epipolar_distance(&secondary[chain[k]], &ordered_primary[p], primary, geom)))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(p, _)| p);
        if back == Some(i) && !claimed[k] {
            claimed[k] = true;
            rescued.push((i, chain[k]));
        }
    }
    if !rescued.is_empty() {
        out.unmatched_primary.retain(|i| !rescued.iter().any(|(r, _)| r == i));
        out.pairs.extend(rescued);
        out.pairs.sort_unstable();
    }
    out.unmatched_secondary = (0..ns).filter(|&k| !claimed[k]).map(|k| chain[k]).collect();
    out.unmatched_secondary.sort_unstable();
    out
}

/// Assignment of reconstructed candidates to design slots.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerAssignment {
    /// Design index of each candidate, strictly increasing.
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
}

/// Aligns base-to-tip ordered candidates with the design by comparing each
/// consecutive gap (including the gaps from the base band and to the tip
/// band) with the straight-configuration distance between the assigned
/// design slots. A gap spanning `k` design spacings implies `k - 1` missing
/// markers. Among feasible alignments the one with the smallest summed
/// squared relative gap error wins.
pub fn detect_missing(
    ordered: &[Vector3<f64>],
    base: &Vector3<f64>,
    tip: &Vector3<f64>,
    design: &CatheterDesign,
    tolerance: f64,
    slack: f64,
) -> Result<MarkerAssignment> {
    let n = design.marker_count();
    let k = ordered.len();
    if k > n {
        return Err(Error::Assignment(format!("{k} candidates for {n} design markers")));
    }
    if k == n {
        return Ok(MarkerAssignment {
            indices: (0..n).collect(),
            mask: vec![true; n],
        });
    }
    if k == 0 {
        return Ok(MarkerAssignment {
            indices: vec![],
            mask: vec![false; n],
        });
    }

    // layout slots: 0 = base, 1..=n markers, n + 1 = tip
    let layout = design.straight_layout();
    let gap_cost = |observed: f64, a: usize, b: usize| -> Option<f64> {
        let expected = (layout[b] - layout[a]).norm();
        let err = (observed - expected).abs();
        if expected <= 0.0 || err > tolerance * expected + slack {
            return None;
        }
        Some((err / expected).powi(2))
    };

    const INF: f64 = f64::INFINITY;
    // cost[c][j]: candidates 0..=c placed, candidate c at slot j (1..=n)
    let mut cost = vec![vec![INF; n + 2]; k];
    let mut back = vec![vec![usize::MAX; n + 2]; k];
    let first_gap = (ordered[0] - base).norm();
    for j in 1..=n {
        if let Some(c) = gap_cost(first_gap, 0, j) {
            cost[0][j] = c;
        }
    }
    for c in 1..k {
        let gap = (ordered[c] - ordered[c - 1]).norm();
        for j in (c + 1)..=n {
            for jp in c..j {
                let prev = cost[c - 1][jp];
                if !prev.is_finite() {
                    continue;
                }
                if let Some(g) = gap_cost(gap, jp, j) {
                    if prev + g < cost[c][j] {
                        cost[c][j] = prev + g;
                        back[c][j] = jp;
                    }
                }
            }
        }
    }
    let last_gap = (tip - ordered[k - 1]).norm();
    let mut best = (INF, usize::MAX);
    for j in k..=n {
        if !cost[k - 1][j].is_finite() {
            continue;
        }
        if let Some(g) = gap_cost(last_gap, j, n + 1) {
            let total = cost[k - 1][j] + g;
            if total < best.0 {
                best = (total, j);
            }
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Assignment(format!(
            "no alignment of {k} candidates to {n} design markers fits within {:.0}% spacing tolerance",
            tolerance * 100.0
        )));
    }
    let mut slots = vec![0usize; k];
    let mut j = best.1;
    for c in (0..k).rev() {
        slots[c] = j;
        j = back[c][j];
    }
    let indices: Vec<usize> = slots.iter().map(|s| s - 1).collect();
    let mut mask = vec![false; n];
    for &i in &indices {
        mask[i] = true;
    }
    Ok(MarkerAssignment { indices, mask })
}

/// Triangulates ordered pairs and bands into an [`OrderedMarkerSet`].
///
/// `pairs` holds `(front, side)` planar points ordered from base to tip.
/// With `relaxed`, a frame whose gaps fit no alignment within the
/// tolerance gets the least-cost alignment instead of an error.
pub fn reconstruct_markers(
    pairs: &[(Vector2<f64>, Vector2<f64>)],
    bands: &BandPairs,
    geom: &BiplaneGeometry,
    design: &CatheterDesign,
    tolerance: f64,
    slack: f64,
    relaxed: bool,
) -> Result<OrderedMarkerSet> {
    let base_prime = triangulate(&bands.base_prime.0, &bands.base_prime.1, geom)?;
    let base = triangulate(&bands.base.0, &bands.base.1, geom)?;
    let tip = triangulate(&bands.tip.0, &bands.tip.1, geom)?;
    if (base - base_prime).norm() <= 1e-9 {
        return Err(Error::DegenerateBase);
    }
    let points = pairs
        .iter()
        .map(|(f, s)| triangulate(f, s, geom))
        .collect::<Result<Vec<_>>>()?;
    let assignment = match detect_missing(&points, &base, &tip, design, tolerance, slack) {
        Err(Error::Assignment(msg)) if relaxed && points.len() <= design.marker_count() => {
            log::warn!("{msg}; using the least-cost alignment");
            detect_missing(&points, &base, &tip, design, f64::INFINITY, 0.0)?
        }
        other => other?,
    };
    let mut intermediates = vec![None; design.marker_count()];
    for (p, &i) in points.iter().zip(&assignment.indices) {
        intermediates[i] = Some(*p);
    }
    Ok(OrderedMarkerSet {
        base_prime,
        base,
        intermediates,
        tip,
    })
}

/// Band detections as `(front, side)` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandPairs {
    pub base_prime: (Vector2<f64>, Vector2<f64>),
    pub base: (Vector2<f64>, Vector2<f64>),
    pub tip: (Vector2<f64>, Vector2<f64>),
}

/// Full reconstruction output with diagnostics.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub markers: OrderedMarkerSet,
    pub primary: Plane,
    pub correspondence: Correspondence,
    /// Epipolar distance of each correspondence pair, mm.
    pub pair_distances: Vec<f64>,
}

impl Reconstruction {
    /// Pairs farther from their epipolar line than `bound`.
    pub fn inconsistent_pairs(&self, bound: f64) -> usize {
        self.pair_distances.iter().filter(|d| **d > bound).count()
    }
}

/// Chooses the plane with the larger detection bounding box; ties go to
/// the front plane.
pub fn choose_primary(front: &PlanarObservation, side: &PlanarObservation) -> Plane {
    if side.coverage_area() > front.coverage_area() {
        Plane::Side
    } else {
        Plane::Front
    }
}

/// Disagreement of a reconstruction with the design spacing: the summed
/// squared relative error of each gap between consecutive present slots
/// (base band and tip band included), plus one per missing marker.
pub fn spacing_misfit(markers: &OrderedMarkerSet, design: &CatheterDesign) -> f64 {
    let layout = design.straight_layout();
    let n = design.marker_count();
    let mut misfit = 0.0;
    let mut prev = (0usize, markers.base);
    let slots = markers
        .intermediates
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.map(|p| (i + 1, p)))
        .chain([(n + 1, markers.tip)]);
    for (slot, p) in slots {
        let expected = (layout[slot] - layout[prev.0]).norm();
        if expected > 0.0 {
            misfit += (((p - prev.1).norm() - expected) / expected).powi(2);
        }
        prev = (slot, p);
    }
    misfit + (n - markers.present_count()) as f64
}

/// Reorders a complete marker set to fit the design spacing.
///
/// Segment reversals and single-marker moves are applied while they lower
/// [`spacing_misfit`]. Sets with a missing marker are left unchanged.
pub fn refine_by_spacing(markers: &mut OrderedMarkerSet, design: &CatheterDesign) {
    let n = markers.intermediates.len();
    if n < 2 || markers.present_count() != n {
        return;
    }
    const EPS: f64 = 1e-12;
    let mut best = spacing_misfit(markers, design);
    let mut trial = markers.clone();
    // every accepted move strictly lowers the misfit; the cap only guards
    // against floating-point cycling
    for _ in 0..(10 * n) {
        let mut improved = false;
        for i in 0..n {
            for k in (i + 1)..n {
                trial.intermediates.copy_from_slice(&markers.intermediates);
                trial.intermediates[i..=k].reverse();
                let misfit = spacing_misfit(&trial, design);
                if misfit < best - EPS {
                    best = misfit;
                    markers.intermediates.copy_from_slice(&trial.intermediates);
                    improved = true;
                }
            }
        }
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                trial.intermediates.copy_from_slice(&markers.intermediates);
                let moved = trial.intermediates.remove(i);
                trial.intermediates.insert(j, moved);
                let misfit = spacing_misfit(&trial, design);
                if misfit < best - EPS {
                    best = misfit;
                    markers.intermediates.copy_from_slice(&trial.intermediates);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

/// Runs ordering, correspondence, triangulation and missing-marker
/// detection on one biplane frame.
///
/// The primary plane is the one with the larger bounding box and matching
/// follows `cfg.matching`. With `cfg.select_by_spacing` the frame is also
/// reconstructed from the other plane, with the other matching rule and
/// without pair repair. The result with the lowest [`spacing_misfit`] plus
/// one per pair beyond the consistency bound is kept; this recovers frames
/// where one projection crosses itself.
pub fn reconstruct(
    front: &PlanarObservation,
    side: &PlanarObservation,
    geom: &BiplaneGeometry,
    design: &CatheterDesign,
    uncertainty: f64,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let primary = choose_primary(front, side);
    let first = reconstruct_from(primary, front, side, geom, design, uncertainty, cfg);
    if !cfg.select_by_spacing {
        return first;
    }
    let other_plane = primary.other();
    let other_matching = match cfg.matching {
        Matching::Greedy => Matching::Ordered,
        Matching::Ordered => Matching::Greedy,
    };
    // a pair no bounded noise explains counts like a missing marker
    let bound = cfg.consistency_bound(uncertainty);
    let score = |r: &Reconstruction| spacing_misfit(&r.markers, design) + r.inconsistent_pairs(bound) as f64;
    let mut best = first;
    let mut best_score = best.as_ref().map_or(f64::INFINITY, score);
    let planes_and_rules = [
        (primary, cfg.matching),
        (other_plane, cfg.matching),
        (primary, other_matching),
        (other_plane, other_matching),
    ];
    // each combination also without pair repair
    let candidates = planes_and_rules
        .iter()
        .skip(1)
        .map(|&(plane, matching)| (plane, ReconstructionConfig { matching, ..*cfg }))
        .chain(planes_and_rules.iter().map(|&(plane, matching)| {
            (
                plane,
                ReconstructionConfig {
                    matching,
                    consistency_factor: f64::INFINITY,
                    ..*cfg
                },
            )
        }));
    for (plane, alt) in candidates {
        if let Ok(r) = reconstruct_from(plane, front, side, geom, design, uncertainty, &alt) {
            let sc = score(&r);
            if sc < best_score {
                best_score = sc;
                best = Ok(r);
            }
        }
    }
    best
}

/// Exchanges partners of pairs whose epipolar distance exceeds `bound`.
/// A pair over the bound swaps secondary points with another pair, or
/// takes an unmatched one, when that brings every pair involved within the
/// bound.
pub fn repair_pairs(
    c: &mut Correspondence,
    ordered_primary: &[Vector2<f64>],
    secondary: &[Vector2<f64>],
    primary: Plane,
    geom: &BiplaneGeometry,
    bound: f64,
) {
    let dist = |pi: usize, si: usize| epipolar_distance(&secondary[si], &ordered_primary[pi], primary, geom);
    for _ in 0..c.pairs.len() {
        let mut changed = false;
        for a in 0..c.pairs.len() {
            let (pa, sa) = c.pairs[a];
            if dist(pa, sa) <= bound {
                continue;
            }
            let swap = (0..c.pairs.len())
                .filter(|&b| b != a)
                .map(|b| {
                    let (pb, sb) = c.pairs[b];
                    (b, dist(pa, sb), dist(pb, sa))
                })
                .filter(|&(_, x, y)| x <= bound && y <= bound)
                .min_by(|x, y| (x.1 + x.2).total_cmp(&(y.1 + y.2)));
            let free = c
                .unmatched_secondary
                .iter()
                .enumerate()
                .map(|(k, &si)| (k, dist(pa, si)))
                .filter(|&(_, d)| d <= bound)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            if let Some((b, _, _)) = swap {
                let sb = c.pairs[b].1;
                c.pairs[a].1 = sb;
                c.pairs[b].1 = sa;
                changed = true;
            } else if let Some((k, _)) = free {
                c.pairs[a].1 = c.unmatched_secondary[k];
                c.unmatched_secondary[k] = sa;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    c.unmatched_secondary.sort_unstable();
}

/// [`reconstruct`] with the given primary plane.
pub fn reconstruct_from(
    primary: Plane,
    front: &PlanarObservation,
    side: &PlanarObservation,
    geom: &BiplaneGeometry,
    design: &CatheterDesign,
    uncertainty: f64,
    cfg: &ReconstructionConfig,
) -> Result<Reconstruction> {
    let (prim, sec) = match primary {
        Plane::Front => (front, side),
        Plane::Side => (side, front),
    };
    let chain = cfg.chain(&prim.intermediates, &prim.tip, &prim.base);
    let ordered: Vec<Vector2<f64>> = chain.iter().map(|&i| prim.intermediates[i]).collect();
    let correspondence = match cfg.matching {
        Matching::Greedy => correspond(
            &ordered,
            &sec.intermediates,
            primary,
            geom,
            cfg.gate(uncertainty),
            cfg.ambiguity_ratio,
        ),
        Matching::Ordered => {
            // a looped pose can bring the tip next to the base in one view and
            // flip that chain, so both directions are aligned
            let forward = cfg.chain(&sec.intermediates, &sec.tip, &sec.base);
            let backward: Vec<usize> = forward.iter().rev().copied().collect();
            let align = |chain: &[usize]| {
                let c = correspond_ordered(&ordered, &sec.intermediates, chain, primary, geom, cfg.gate(uncertainty));
                let spread: f64 = c
                    .pairs
                    .iter()
                    .map(|&(pi, si)| epipolar_distance(&sec.intermediates[si], &ordered[pi], primary, geom))
                    .sum();
                (c, spread)
            };
            let (a, spread_a) = align(&forward);
            let (b, spread_b) = align(&backward);
            if b.pairs.len() > a.pairs.len() || (b.pairs.len() == a.pairs.len() && spread_b < spread_a) {
                b
            } else {
                a
            }
        }
    };

    let mut correspondence = correspondence;
    repair_pairs(
        &mut correspondence,
        &ordered,
        &sec.intermediates,
        primary,
        geom,
        cfg.consistency_bound(uncertainty),
    );

    // tip-to-base chain order reversed into base-to-tip
    let mut pairs: Vec<(Vector2<f64>, Vector2<f64>)> = correspondence
        .pairs
        .iter()
        .map(|&(pi, si)| {
            let p = ordered[pi];
            let s = sec.intermediates[si];
            match primary {
                Plane::Front => (p, s),
                Plane::Side => (s, p),
            }
        })
        .collect();
    pairs.reverse();
    let planar = pairs.clone();
    if cfg.spatial_order && pairs.len() > 1 {
        let tip = triangulate(&front.tip, &side.tip, geom)?;
        let base = triangulate(&front.base, &side.base, geom)?;
        let points = pairs
            .iter()
            .map(|(f, s)| triangulate(f, s, geom))
            .collect::<Result<Vec<_>>>()?;
        let mut chain = cfg.chain(&points, &tip, &base);
        chain.reverse();
        pairs = chain.into_iter().map(|i| pairs[i]).collect();
    }

    let bands = BandPairs {
        base_prime: (front.base_prime, side.base_prime),
        base: (front.base, side.base),
        tip: (front.tip, side.tip),
    };
    let slack = cfg.spacing_noise_factor * uncertainty;
    let assign = |pairs: &[(Vector2<f64>, Vector2<f64>)]| {
        reconstruct_markers(
            pairs,
            &bands,
            geom,
            design,
            cfg.spacing_tolerance,
            slack,
            cfg.relaxed_assignment,
        )
    };
    let mut markers = assign(&pairs)?;
    // where the catheter passes close to itself the shortest path can cut
    // across or run backwards, so the reversed path and the planar order
    // are also fitted to the design
    if pairs.len() > 1 {
        let reversed: Vec<_> = pairs.iter().rev().copied().collect();
        let mut best = spacing_misfit(&markers, design);
        for alt in [reversed, planar] {
            if let Ok(alt) = assign(&alt) {
                let misfit = spacing_misfit(&alt, design);
                if misfit < best {
                    best = misfit;
                    markers = alt;
                }
            }
        }
    }
    refine_by_spacing(&mut markers, design);
    let pair_distances = correspondence
        .pairs
        .iter()
        .map(|&(pi, si)| epipolar_distance(&sec.intermediates[si], &ordered[pi], primary, geom))
        .collect();
    Ok(Reconstruction {
        markers,
        primary,
        correspondence,
        pair_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biplane::project_point;
    use crate::design::{build_helical_design, HelixSpec};
    use crate::kinematics::{marker_world_positions, ModalCoefficients};
    use approx::assert_abs_diff_eq;

    fn design(n: usize) -> CatheterDesign {
        let h = HelixSpec::spanning(25.0, n, 2.0).unwrap();
        build_helical_design(25.0, 1.0, n, &h).unwrap()
    }

    fn observe(points: &MarkerPositions, plane: Plane, g: &BiplaneGeometry) -> PlanarObservation {
        let pr = |p: &Vector3<f64>| project_point(p, plane, g);
        let mut inter: Vec<_> = points.intermediates.iter().map(pr).collect();
        inter.reverse();
        PlanarObservation {
            base_prime: pr(&points.base_prime),
            base: pr(&points.base),
            tip: pr(&points.tip),
            intermediates: inter,
        }
    }

    #[test]
    fn sort_collinear_and_singleton() {
        let pts: Vec<_> = [3.0, 1.0, 4.0, 2.0].iter().map(|&x| Vector2::new(x, 0.0)).collect();
        let order = sort_primary(&pts, &Vector2::new(5.0, 0.0));
        assert_eq!(order, vec![2, 0, 3, 1]);
        assert_eq!(sort_primary(&pts[..1], &Vector2::zeros()), vec![0]);
    }

    #[test]
    fn sort_follows_helix_projection() {
        let d = design(12);
        let c = ModalCoefficients::new(vec![0.05, 0.02], vec![-0.03, 0.01]).unwrap();
        let m = marker_world_positions(&d, &c, 0.3, &Pose::identity()).unwrap();
        let g = BiplaneGeometry::canonical(0.1);
        let pts: Vec<_> = m.intermediates.iter().map(|p| project_point(p, Plane::Side, &g)).collect();
        let tip = project_point(&m.tip, Plane::Side, &g);
        let order = sort_primary(&pts, &tip);
        assert_eq!(order, (0..12).rev().collect::<Vec<_>>());
    }

    #[test]
    fn correspondence_noiseless_and_missing() {
        let d = design(10);
        let c = ModalCoefficients::new(vec![0.06], vec![0.02]).unwrap();
        let m = marker_world_positions(&d, &c, 0.0, &Pose::identity()).unwrap();
        let g = BiplaneGeometry::canonical(0.1);
        let f: Vec<_> = m.intermediates.iter().map(|p| project_point(p, Plane::Front, &g)).collect();
        let mut s: Vec<_> = m.intermediates.iter().map(|p| project_point(p, Plane::Side, &g)).collect();
        s.reverse();
        let corr = correspond(&f, &s, Plane::Front, &g, 0.05, 0.1);
        assert!(corr.pairs.iter().all(|&(pi, si)| si == 9 - pi));
        assert!(corr.unmatched_primary.is_empty());

        s.remove(9 - 4);
        let corr = correspond(&f, &s, Plane::Front, &g, 0.05, 0.1);
        assert_eq!(corr.unmatched_primary, vec![4]);
        let mut seen = std::collections::HashSet::new();
        assert!(corr.pairs.iter().all(|&(_, si)| seen.insert(si)));
    }

    #[test]
    fn equidistant_candidates_flagged() {
        let g = BiplaneGeometry::canonical(0.1);
        let p = vec![Vector2::new(0.0, 5.0)];
        let s = vec![Vector2::new(1.0, 5.5), Vector2::new(-1.0, 4.5)];
        let corr = correspond(&p, &s, Plane::Front, &g, 1.5, 0.1);
        assert_eq!(corr.ambiguous, vec![0]);
        assert_eq!(corr.pairs.len(), 1);
    }

    #[test]
    fn missing_marker_masks() {
        let d = design(7);
        let c = ModalCoefficients::new(vec![0.05, -0.02], vec![0.03, 0.0]).unwrap();
        let m = marker_world_positions(&d, &c, 0.2, &Pose::identity()).unwrap();
        let full = detect_missing(&m.intermediates, &m.base, &m.tip, &d, 0.35, 0.0).unwrap();
        assert_eq!(full.mask, vec![true; 7]);

        let mut dropped = m.intermediates.clone();
        dropped.remove(3);
        let a = detect_missing(&dropped, &m.base, &m.tip, &d, 0.35, 0.0).unwrap();
        assert_eq!(a.mask, vec![true, true, true, false, true, true, true]);

        let alternating: Vec<_> = m.intermediates.iter().step_by(2).copied().collect();
        let a = detect_missing(&alternating, &m.base, &m.tip, &d, 0.35, 0.0).unwrap();
        assert_eq!(a.mask, vec![true, false, true, false, true, false, true]);
    }

    #[test]
    fn impossible_alignment_fails() {
        let d = design(5);
        let pts = vec![Vector3::new(0.0, 0.0, 0.1), Vector3::new(0.0, 0.0, 0.2)];
        let err = detect_missing(&pts, &Vector3::zeros(), &Vector3::new(0.0, 0.0, 25.0), &d, 0.35, 0.0);
        assert!(matches!(err, Err(Error::Assignment(_))));
    }

    #[test]
    fn noiseless_reconstruction_matches_kinematics() {
        let d = design(15);
        let c = ModalCoefficients::new(vec![0.08, 0.03], vec![-0.04, 0.02]).unwrap();
        let m = marker_world_positions(&d, &c, 1.1, &Pose::identity()).unwrap();
        let g = BiplaneGeometry::canonical(0.1);
        let rec = reconstruct(
            &observe(&m, Plane::Front, &g),
            &observe(&m, Plane::Side, &g),
            &g,
            &d,
            0.0,
            &ReconstructionConfig::default(),
        )
        .unwrap();
        for (got, want) in rec.markers.intermediates.iter().zip(&m.intermediates) {
            assert_abs_diff_eq!(got.unwrap(), *want, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(rec.markers.tip, m.tip, epsilon = 1e-6);
        assert_abs_diff_eq!(rec.markers.base_tangent().unwrap(), Vector3::z(), epsilon = 1e-12);
    }

    #[test]
    fn coincident_base_bands_rejected() {
        let g = BiplaneGeometry::canonical(0.1);
        let q = (Vector2::new(0.0, 0.0), Vector2::new(0.0, 0.0));
        let bands = BandPairs {
            base_prime: q,
            base: q,
            tip: (Vector2::new(0.0, 25.0), Vector2::new(0.0, 25.0)),
        };
        let err = reconstruct_markers(&[], &bands, &g, &design(3), 0.35, 0.0, true);
        assert!(matches!(err, Err(Error::DegenerateBase)));
    }

    /// Points with distinct heights so that epipolar lines separate them.
    fn staircase(n: usize) -> Vec<Vector3<f64>> {
        (0..n).map(|i| Vector3::new((i % 2) as f64, 0.5 * (i % 3) as f64, i as f64)).collect()
    }

    fn chains(points: &[Vector3<f64>], g: &BiplaneGeometry) -> (Vec<Vector2<f64>>, Vec<Vector2<f64>>) {
        let f = points.iter().map(|p| project_point(p, Plane::Front, g)).collect();
        let s = points.iter().map(|p| project_point(p, Plane::Side, g)).collect();
        (f, s)
    }

    #[test]
    fn ordered_matching_accepts_swapped_neighbours() {
        let g = BiplaneGeometry::canonical(0.1);
        let (f, s) = chains(&staircase(6), &g);
        let corr = correspond_ordered(&f, &s, &[0, 1, 3, 2, 4, 5], Plane::Front, &g, 0.1);
        assert_eq!(corr.pairs, (0..6).map(|i| (i, i)).collect::<Vec<_>>());
        assert!(corr.unmatched_primary.is_empty() && corr.unmatched_secondary.is_empty());
    }

    #[test]
    fn ordered_matching_rescues_displaced_point() {
        let g = BiplaneGeometry::canonical(0.1);
        let (f, s) = chains(&staircase(6), &g);
        // secondary point 0 sits at the wrong end of its chain
        let corr = correspond_ordered(&f, &s, &[1, 2, 3, 4, 5, 0], Plane::Front, &g, 0.1);
        assert_eq!(corr.pairs, (0..6).map(|i| (i, i)).collect::<Vec<_>>());
        assert!(corr.unmatched_primary.is_empty() && corr.unmatched_secondary.is_empty());
    }

    #[test]
    fn repair_undoes_inconsistent_pairs() {
        let g = BiplaneGeometry::canonical(0.1);
        let (f, s) = chains(&staircase(4), &g);
        let mut corr = Correspondence {
            pairs: vec![(0, 1), (1, 0), (2, 3)],
            unmatched_primary: vec![3],
            unmatched_secondary: vec![2],
            ..Default::default()
        };
        repair_pairs(&mut corr, &f, &s, Plane::Front, &g, CONSISTENCY_SLACK);
        assert_eq!(corr.pairs, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(corr.unmatched_secondary, vec![3]);
    }

    #[test]
    fn repair_keeps_pairs_within_the_bound() {
        let g = BiplaneGeometry::canonical(0.1);
        let (f, s) = chains(&staircase(4), &g);
        let mut corr = Correspondence {
            pairs: vec![(0, 1), (1, 0)],
            ..Default::default()
        };
        let before = corr.clone();
        repair_pairs(&mut corr, &f, &s, Plane::Front, &g, 10.0);
        assert_eq!(corr, before);
    }

    #[test]
    fn refine_joins_runs_in_order() {
        let pts: Vec<_> = (1..=6).map(|x| Vector2::new(x as f64, 0.0)).collect();
        let (tip, base) = (Vector2::new(7.0, 0.0), Vector2::new(0.0, 0.0));
        assert_eq!(refine_chain(&pts, &[2, 1, 0, 5, 4, 3], &tip, &base), vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(refine_chain(&pts, &[5, 4, 0, 3, 2, 1], &tip, &base), vec![5, 4, 3, 2, 1, 0]);
        assert_eq!(refine_chain(&pts[..1], &[0], &tip, &base), vec![0]);
    }

    #[test]
    fn spacing_misfit_counts_missing_markers() {
        let d = design(6);
        let m = marker_world_positions(&d, &ModalCoefficients::zeros(2), 0.0, &Pose::identity()).unwrap();
        let full = OrderedMarkerSet::from_positions(&m);
        assert_abs_diff_eq!(spacing_misfit(&full, &d), 0.0, epsilon = 1e-20);
        // dropping a marker merges two gaps into one exact gap
        assert_abs_diff_eq!(spacing_misfit(&full.without(&[2]), &d), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn spacing_refinement_restores_design_order() {
        let d = design(8);
        let m = marker_world_positions(&d, &ModalCoefficients::zeros(2), 0.0, &Pose::identity()).unwrap();
        let full = OrderedMarkerSet::from_positions(&m);
        let mut scrambled = full.clone();
        scrambled.intermediates[2..6].reverse();
        scrambled.intermediates.swap(0, 7);
        refine_by_spacing(&mut scrambled, &d);
        assert_eq!(scrambled, full);
        // incomplete sets are left alone
        let mut partial = full.without(&[3]);
        partial.intermediates.swap(0, 1);
        let before = partial.clone();
        refine_by_spacing(&mut partial, &d);
        assert_eq!(partial, before);
    }

    #[test]
    fn relaxed_assignment_falls_back_to_least_cost() {
        let g = BiplaneGeometry::canonical(0.1);
        let d = design(4);
        let m = marker_world_positions(&d, &ModalCoefficients::zeros(2), 0.0, &Pose::identity()).unwrap();
        let pr = |p: &Vector3<f64>| (project_point(p, Plane::Front, &g), project_point(p, Plane::Side, &g));
        let bands = BandPairs {
            base_prime: pr(&m.base_prime),
            base: pr(&m.base),
            tip: pr(&m.tip),
        };
        // three markers crowded near the base fit no alignment within 35%
        let pairs: Vec<_> = [1.0, 2.0, 3.0].iter().map(|z| pr(&Vector3::new(0.0, 0.0, *z))).collect();
        let strict = reconstruct_markers(&pairs, &bands, &g, &d, 0.35, 0.0, false);
        assert!(matches!(strict, Err(Error::Assignment(_))));
        let relaxed = reconstruct_markers(&pairs, &bands, &g, &d, 0.35, 0.0, true).unwrap();
        assert_eq!(relaxed.present_count(), 3);
    }
}
