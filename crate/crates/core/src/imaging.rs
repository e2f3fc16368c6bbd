//! Synthetic biplane frames and marker segmentation.
//!
//! Rendering draws anti-aliased dark dots for intermediate markers and
//! projected cylinders for the bands on a light background. Segmentation
//! finds dark connected regions that stay stable across a small sweep of
//! thresholds and reports darkness-weighted centroids in millimetres.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::RngExt;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::biplane::{project_point, BiplaneGeometry, Plane};
use crate::design::CatheterDesign;
use crate::error::{Error, Result};
use crate::kinematics::{Integrator, ModalCoefficients, Pose};
use crate::reconstruction::PlanarObservation;
use crate::rng::{self, Purpose};

/// 8-bit grayscale frame with its placement in the image plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    /// Row-major intensities, row 0 at the top.
    pub pixels: Vec<u8>,
    /// mm per pixel.
    pub pixel_scale: f64,
    /// Plane coordinates of the image centre, mm.
    pub origin: Vector2<f64>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8, pixel_scale: f64, origin: Vector2<f64>) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
            pixel_scale,
            origin,
        }
    }

    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.pixels[j * self.width + i]
    }

    /// Plane coordinates of the centre of pixel column `i`, row `j`.
    pub fn pixel_to_plane(&self, i: f64, j: f64) -> Vector2<f64> {
        Vector2::new(
            self.origin.x + (i + 0.5 - self.width as f64 / 2.0) * self.pixel_scale,
            self.origin.y + (self.height as f64 / 2.0 - (j + 0.5)) * self.pixel_scale,
        )
    }

    /// Fractional pixel coordinates of a plane point.
    pub fn plane_to_pixel(&self, p: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(
            (p.x - self.origin.x) / self.pixel_scale + self.width as f64 / 2.0 - 0.5,
            self.height as f64 / 2.0 - 0.5 - (p.y - self.origin.y) / self.pixel_scale,
        )
    }

    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let q = self.plane_to_pixel(p);
        q.x >= -0.5 && q.y >= -0.5 && q.x <= self.width as f64 - 0.5 && q.y <= self.height as f64 - 0.5
    }
}

/// Cylindrical radiopaque band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub center: Vector3<f64>,
    /// Unit axis.
    pub axis: Vector3<f64>,
    pub width: f64,
    pub radius: f64,
}

/// Everything that casts a shadow in a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    /// `[b', b, e]`
    pub bands: [Band; 3],
    pub dots: Vec<Vector3<f64>>,
    pub dot_diameter: f64,
}

impl Scene {
    /// Scene of a catheter in configuration `(c, sigma)` grown from `base`.
    pub fn from_model(
        design: &CatheterDesign,
        c: &ModalCoefficients,
        sigma: f64,
        base: &Pose,
        integrator: &Integrator,
    ) -> Result<Self> {
        let markers = integrator.marker_positions(design, c, sigma, base)?;
        let tip = integrator.frames_at(c, base, design.length(), &[design.length()])?[0];
        let w = design.widths();
        let r = design.radius();
        let band = |center, axis, width| Band {
            center,
            axis,
            width,
            radius: r,
        };
        Ok(Self {
            bands: [
                band(markers.base_prime, base.tangent(), w.base),
                band(markers.base, base.tangent(), w.base),
                band(markers.tip, tip.tangent(), w.tip),
            ],
            dots: markers.intermediates,
            dot_diameter: w.dot_diameter,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImageParams {
    pub width: usize,
    pub height: usize,
    pub background: u8,
    /// Intensity drop inside a marker.
    pub contrast: f64,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise_sd: f64,
    /// Sub-samples per pixel side for anti-aliasing.
    pub supersample: usize,
    pub front_origin: [f64; 2],
    pub side_origin: [f64; 2],
}

impl Default for ImageParams {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
            background: 220,
            contrast: 160.0,
            noise_sd: 0.0,
            supersample: 4,
            front_origin: [0.0, 12.5],
            side_origin: [0.0, 12.5],
        }
    }
}

impl ImageParams {
    pub fn origin(&self, plane: Plane) -> Vector2<f64> {
        let o = match plane {
            Plane::Front => self.front_origin,
            Plane::Side => self.side_origin,
        };
        Vector2::new(o[0], o[1])
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("imaging.width", "image dimensions must be positive"));
        }
        if self.supersample == 0 {
            return Err(Error::config("imaging.supersample", "must be at least 1"));
        }
        if !(self.contrast > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::config("imaging.contrast", "contrast must be positive and noise non-negative"));
        }
        Ok(())
    }
}

/// Projected shape test in plane coordinates.
enum Shape {
    Disk {
        center: Vector2<f64>,
        radius: f64,
    },
    /// Projected cylinder: a rectangle along the projected axis capped by
    /// the projected end ellipses.
    Cylinder {
        center: Vector2<f64>,
        along: Vector2<f64>,
        half_length: f64,
        radius: f64,
        cap: f64,
    },
}

impl Shape {
    fn band(b: &Band, plane: Plane, geom: &BiplaneGeometry) -> Shape {
        let center = project_point(&b.center, plane, geom);
        let tip = project_point(&(b.center + b.axis), plane, geom) - center;
        let len = tip.norm();
        let cos_view = b.axis.dot(&geom.normal(plane)).abs();
        let along = if len > 1e-9 { tip / len } else { Vector2::x() };
        Shape::Cylinder {
            center,
            along,
            half_length: 0.5 * b.width * len,
            radius: b.radius,
            cap: b.radius * cos_view,
        }
    }

    fn contains(&self, p: &Vector2<f64>) -> bool {
        match self {
            Shape::Disk { center, radius } => (p - center).norm_squared() <= radius * radius,
            Shape::Cylinder {
                center,
                along,
                half_length,
                radius,
                cap,
            } => {
                let d = p - center;
                let a = d.dot(along);
                let b = d.x * along.y - d.y * along.x;
                if b.abs() > *radius {
                    return false;
                }
                let lim = half_length + cap * (1.0 - (b / radius).powi(2)).max(0.0).sqrt();
                a.abs() <= lim
            }
        }
    }

    /// Half-extent of an axis-aligned box containing the shape.
    fn reach(&self) -> (Vector2<f64>, f64) {
        match self {
            Shape::Disk { center, radius } => (*center, *radius),
            Shape::Cylinder {
                center,
                half_length,
                radius,
                cap,
                ..
            } => (*center, half_length + cap + radius),
        }
    }
}

/// Renders one plane of the scene.
/// Pixel noise is drawn from the `seed` stream of the plane.
pub fn render_plane(scene: &Scene, plane: Plane, geom: &BiplaneGeometry, params: &ImageParams, seed: u64) -> Result<GrayImage> {
    params.validate()?;
    let mut img = GrayImage::filled(
        params.width,
        params.height,
        params.background,
        geom.pixel_scale(),
        params.origin(plane),
    );

    let mut shapes: Vec<Shape> = scene.bands.iter().map(|b| Shape::band(b, plane, geom)).collect();
    shapes.extend(scene.dots.iter().map(|p| Shape::Disk {
        center: project_point(p, plane, geom),
        radius: 0.5 * scene.dot_diameter,
    }));
    let outside: Vec<usize> = shapes
        .iter()
        .enumerate()
        .filter(|(_, s)| !img.contains(&s.reach().0))
        .map(|(i, _)| i)
        .collect();
    if !outside.is_empty() {
        return Err(Error::OutOfBounds(outside));
    }

    let mut cover = vec![0.0f64; params.width * params.height];
    let ss = params.supersample;
    let inv = 1.0 / (ss * ss) as f64;
    for shape in &shapes {
        let (c, reach) = shape.reach();
        let q = img.plane_to_pixel(&c);
        let rp = reach / img.pixel_scale + 1.0;
        let i0 = (q.x - rp).floor().max(0.0) as usize;
        let i1 = ((q.x + rp).ceil() as usize).min(params.width - 1);
        let j0 = (q.y - rp).floor().max(0.0) as usize;
        let j1 = ((q.y + rp).ceil() as usize).min(params.height - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let mut hits = 0usize;
                for sj in 0..ss {
                    for si in 0..ss {
                        let fi = i as f64 - 0.5 + (si as f64 + 0.5) / ss as f64;
                        let fj = j as f64 - 0.5 + (sj as f64 + 0.5) / ss as f64;
                        if shape.contains(&img.pixel_to_plane(fi, fj)) {
                            hits += 1;
                        }
                    }
                }
                let k = j * params.width + i;
                cover[k] = cover[k].max(hits as f64 * inv);
            }
        }
    }

    let purpose = match plane {
        Plane::Front => Purpose::FrontNoise,
        Plane::Side => Purpose::SideNoise,
    };
    let mut noise_rng = rng::stream(seed, &[Purpose::Render as u64, purpose as u64]);
    let normal = Normal::new(0.0, params.noise_sd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Domain(e.to_string()))?;
    for (px, c) in img.pixels.iter_mut().zip(&cover) {
        let mut v = params.background as f64 - params.contrast * c;
        if params.noise_sd > 0.0 {
            v += normal.sample(&mut noise_rng);
        }
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
    Ok(img)
}

/// Renders both planes.
pub fn render_biplane(scene: &Scene, geom: &BiplaneGeometry, params: &ImageParams, seed: u64) -> Result<(GrayImage, GrayImage)> {
    Ok((
        render_plane(scene, Plane::Front, geom, params, seed)?,
        render_plane(scene, Plane::Side, geom, params, seed)?,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationParams {
    /// Darkness (background minus intensity) at which regions are cut.
    pub threshold: u8,
    pub background: u8,
    /// Accepted region areas at the threshold, px^2.
    pub min_area: usize,
    pub max_area: usize,
    /// Threshold shift of the stability test.
    pub stability_delta: u8,
    /// Largest relative area change across the threshold shift.
    pub max_variation: f64,
}

impl Default for SegmentationParams {
    fn default() -> Self {
        Self {
            threshold: 80,
            background: 220,
            min_area: 12,
            max_area: 20_000,
            stability_delta: 20,
            max_variation: 1.0,
        }
    }
}

impl SegmentationParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_area >= self.max_area {
            return Err(Error::config("segmentation.min_area", "must be below max_area"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarkerLabel {
    BasePrime,
    Base,
    Tip,
    Intermediate,
    Unknown,
}

impl MarkerLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkerLabel::BasePrime => "base_prime",
            MarkerLabel::Base => "base",
            MarkerLabel::Tip => "tip",
            MarkerLabel::Intermediate => "intermediate",
            MarkerLabel::Unknown => "unknown",
        }
    }
}

impl std::str::FromStr for MarkerLabel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "base_prime" => MarkerLabel::BasePrime,
            "base" => MarkerLabel::Base,
            "tip" => MarkerLabel::Tip,
            "intermediate" => MarkerLabel::Intermediate,
            "unknown" => MarkerLabel::Unknown,
            other => return Err(Error::Parse(format!("unknown marker label `{other}`"))),
        })
    }
}

/// Segmented markers of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MarkerDetections {
    /// Centroids in plane coordinates, mm.
    pub centroids: Vec<Vector2<f64>>,
    /// Region areas at the cut threshold, px^2.
    pub areas: Vec<f64>,
    pub labels: Vec<MarkerLabel>,
}

impl MarkerDetections {
    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    fn find(&self, label: MarkerLabel) -> Option<Vector2<f64>> {
        self.labels
            .iter()
            .position(|l| *l == label)
            .map(|i| self.centroids[i])
    }

    /// Converts labeled detections into a planar observation.
    pub fn to_observation(&self) -> Result<PlanarObservation> {
        let need = |l: MarkerLabel| {
            self.find(l)
                .ok_or_else(|| Error::Labeling(format!("no {} detection", l.as_str())))
        };
        Ok(PlanarObservation {
            base_prime: need(MarkerLabel::BasePrime)?,
            base: need(MarkerLabel::Base)?,
            tip: need(MarkerLabel::Tip)?,
            intermediates: self
                .labels
                .iter()
                .zip(&self.centroids)
                .filter(|(l, _)| **l == MarkerLabel::Intermediate)
                .map(|(_, c)| *c)
                .collect(),
        })
    }
}

/// 8-connected components of `mask`; returns per-pixel labels (0 for
/// background) and the component count.
fn components(mask: &[bool], width: usize, height: usize) -> (Vec<u32>, usize) {
    let mut labels = vec![0u32; mask.len()];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(k) = stack.pop() {
            let (i, j) = ((k % width) as isize, (k / width) as isize);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (ni, nj) = (i + di, j + dj);
                    if ni < 0 || nj < 0 || ni >= width as isize || nj >= height as isize {
                        continue;
                    }
                    let nk = nj as usize * width + ni as usize;
                    if mask[nk] && labels[nk] == 0 {
                        labels[nk] = next;
                        stack.push(nk);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Dark-region detection with an area-stability test.
///
/// Regions are cut at `threshold`; a region is kept when its area is in
/// range and the area it grows to at `threshold - delta` minus the area it
/// shrinks to at `threshold + delta` is at most `max_variation` times its
/// own area. Centroids are darkness-weighted over the grown region.
pub fn segment(img: &GrayImage, params: &SegmentationParams) -> MarkerDetections {
    let (w, h) = (img.width, img.height);
    let darkness: Vec<u8> = img
        .pixels
        .iter()
        .map(|&v| params.background.saturating_sub(v))
        .collect();
    let t = params.threshold.max(1);
    let lo = t.saturating_sub(params.stability_delta).max(1);
    let hi = t.saturating_add(params.stability_delta);

    let (mid_labels, mid_count) = components(&darkness.iter().map(|&d| d >= t).collect::<Vec<_>>(), w, h);
    let (lo_labels, lo_count) = components(&darkness.iter().map(|&d| d >= lo).collect::<Vec<_>>(), w, h);

    let mut mid_area = vec![0usize; mid_count + 1];
    let mut mid_core = vec![0usize; mid_count + 1];
    let mut mid_parent = vec![0u32; mid_count + 1];
    let mut lo_area = vec![0usize; lo_count + 1];
    let mut lo_children = vec![0usize; lo_count + 1];
    let mut lo_sum = vec![(0.0f64, 0.0f64, 0.0f64); lo_count + 1];
    for k in 0..darkness.len() {
        let l = lo_labels[k] as usize;
        if l == 0 {
            continue;
        }
        lo_area[l] += 1;
        let wgt = darkness[k] as f64;
        let s = &mut lo_sum[l];
        s.0 += wgt;
        s.1 += wgt * (k % w) as f64;
        s.2 += wgt * (k / w) as f64;
        let m = mid_labels[k] as usize;
        if m != 0 {
            if mid_area[m] == 0 {
                mid_parent[m] = l as u32;
                lo_children[l] += 1;
            }
            mid_area[m] += 1;
            if darkness[k] >= hi {
                mid_core[m] += 1;
            }
        }
    }

    // per-mid-region weighted sums for regions sharing a grown parent
    let mut mid_sum = vec![(0.0f64, 0.0f64, 0.0f64); mid_count + 1];
    if lo_children.iter().any(|&c| c > 1) {
        for k in 0..darkness.len() {
            let m = mid_labels[k] as usize;
            if m != 0 && lo_children[mid_parent[m] as usize] > 1 {
                let wgt = (darkness[k] - lo) as f64 + 1.0;
                let s = &mut mid_sum[m];
                s.0 += wgt;
                s.1 += wgt * (k % w) as f64;
                s.2 += wgt * (k / w) as f64;
            }
        }
    }

    let mut out = MarkerDetections::default();
    for m in 1..=mid_count {
        let area = mid_area[m];
        if area < params.min_area || area > params.max_area {
            continue;
        }
        let parent = mid_parent[m] as usize;
        let variation = (lo_area[parent] as f64 - mid_core[m] as f64) / area as f64;
        let shared = lo_children[parent] > 1;
        if !shared && variation > params.max_variation {
            continue;
        }
        let s = if shared { mid_sum[m] } else { lo_sum[parent] };
        let c = img.pixel_to_plane(s.1 / s.0, s.2 / s.0);
        out.centroids.push(c);
        out.areas.push(area as f64);
        out.labels.push(MarkerLabel::Unknown);
    }
    out
}

/// Expected region areas used to tell bands from dots, px^2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedAreas {
    pub dot: f64,
    pub band: f64,
}

impl ExpectedAreas {
    /// Face-on areas of the design's dots and bands at `pixel_scale`.
    pub fn for_design(design: &CatheterDesign, pixel_scale: f64) -> Self {
        let w = design.widths();
        let px2 = pixel_scale * pixel_scale;
        Self {
            dot: std::f64::consts::PI * (0.5 * w.dot_diameter).powi(2) / px2,
            band: w.base.min(w.tip) * 2.0 * design.radius() / px2,
        }
    }

    /// Area separating dots from bands (geometric mean).
    pub fn threshold(&self) -> f64 {
        (self.dot * self.band).sqrt()
    }
}

/// Labels band-sized regions as base', base and tip, and the rest as
/// intermediate markers.
///
/// Of the three band-sized regions whose areas best match the expected
/// band area, the closest pair is the base
/// pair and the remaining one the tip; within the pair the region farther
/// from the tip is base'. With only two band-sized regions the tip is
/// taken as hidden and the pair is labeled base'/base, base' being the one
/// farther from the intermediate markers.
pub fn classify(det: &MarkerDetections, expected: &ExpectedAreas) -> Result<MarkerDetections> {
    let cut = expected.threshold();
    let mut bands: Vec<usize> = (0..det.len()).filter(|&i| det.areas[i] >= cut).collect();
    if bands.len() < 2 {
        return Err(Error::Labeling(format!(
            "found {} band-sized regions, need at least 2",
            bands.len()
        )));
    }
    // merged dot clusters can outgrow a band, so rank by closeness to the
    // expected band area
    let misfit = |i: usize| (det.areas[i] / expected.band).ln().abs();
    bands.sort_by(|&a, &b| misfit(a).total_cmp(&misfit(b)));
    bands.truncate(3);
    let mut labels = vec![MarkerLabel::Intermediate; det.len()];
    for i in 0..det.len() {
        if det.areas[i] >= cut && !bands.contains(&i) {
            labels[i] = MarkerLabel::Unknown;
        }
    }
    let c = &det.centroids;
    if bands.len() == 3 {
        let pairs = [(0, 1, 2), (0, 2, 1), (1, 2, 0)];
        let &(a, b, t) = pairs
            .iter()
            .min_by(|x, y| {
                (c[bands[x.0]] - c[bands[x.1]])
                    .norm()
                    .total_cmp(&(c[bands[y.0]] - c[bands[y.1]]).norm())
            })
            .expect("three pairs");
        let (a, b, t) = (bands[a], bands[b], bands[t]);
        let (bp, base) = if (c[a] - c[t]).norm() >= (c[b] - c[t]).norm() { (a, b) } else { (b, a) };
        labels[bp] = MarkerLabel::BasePrime;
        labels[base] = MarkerLabel::Base;
        labels[t] = MarkerLabel::Tip;
    } else {
        let dots: Vec<Vector2<f64>> = (0..det.len())
            .filter(|i| labels[*i] == MarkerLabel::Intermediate && !bands.contains(i))
            .map(|i| c[i])
            .collect();
        let (a, b) = (bands[0], bands[1]);
        let (bp, base) = if dots.is_empty() {
            (a, b)
        } else {
            let mean = dots.iter().sum::<Vector2<f64>>() / dots.len() as f64;
            if (c[a] - mean).norm() >= (c[b] - mean).norm() {
                (a, b)
            } else {
                (b, a)
            }
        };
        labels[bp] = MarkerLabel::BasePrime;
        labels[base] = MarkerLabel::Base;
    }
    Ok(MarkerDetections {
        centroids: det.centroids.clone(),
        areas: det.areas.clone(),
        labels,
    })
}

/// Writes a binary PGM with scale and origin comments.
pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write!(
        f,
        "P5\n# pixel_scale_mm {}\n# origin_mm {} {}\n{} {}\n255\n",
        img.pixel_scale, img.origin.x, img.origin.y, img.width, img.height
    )?;
    f.write_all(&img.pixels)?;
    f.flush()?;
    Ok(())
}

/// Reads a binary PGM written by [`write_pgm`]; missing comments default
/// to a scale of 1 mm and a zero origin.
pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let mut r = BufReader::new(fs::File::open(path)?);
    let mut tokens: Vec<String> = Vec::new();
    let mut scale = 1.0;
    let mut origin = Vector2::zeros();
    let parse = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("PGM header: {e}")));
    while tokens.len() < 4 {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Parse("truncated PGM header".into()));
        }
        let line = line.trim();
        if let Some(comment) = line.strip_prefix('#') {
            let parts: Vec<&str> = comment.split_whitespace().collect();
            match parts.as_slice() {
                ["pixel_scale_mm", v] => scale = parse(v)?,
                ["origin_mm", x, y] => origin = Vector2::new(parse(x)?, parse(y)?),
                _ => {}
            }
            continue;
        }
        tokens.extend(line.split_whitespace().map(str::to_owned));
    }
    if tokens[0] != "P5" {
        return Err(Error::Parse(format!("unsupported image format `{}`", tokens[0])));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("PGM header: {e}")));
    let (width, height, maxval) = (dim(&tokens[1])?, dim(&tokens[2])?, dim(&tokens[3])?);
    if maxval != 255 {
        return Err(Error::Parse("only 8-bit PGM files are supported".into()));
    }
    let mut pixels = vec![0u8; width * height];
    r.read_exact(&mut pixels)?;
    Ok(GrayImage {
        width,
        height,
        pixels,
        pixel_scale: scale,
        origin,
    })
}

/// Scatters `count` dots at random non-overlapping positions, for
/// segmentation benchmarks.
pub fn random_dot_scene<R: rand::Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    extent: f64,
    min_separation: f64,
) -> Vec<Vector2<f64>> {
    let mut pts: Vec<Vector2<f64>> = Vec::with_capacity(count);
    while pts.len() < count {
        let p = Vector2::new(rng.random_range(-extent..extent), rng.random_range(-extent..extent));
        if pts.iter().all(|q| (p - q).norm() >= min_separation) {
            pts.push(p);
        }
    }
    pts
}

/// Renders dots given directly in plane coordinates.
pub fn render_dots(
    points: &[Vector2<f64>],
    diameter: f64,
    pixel_scale: f64,
    params: &ImageParams,
    seed: u64,
) -> Result<GrayImage> {
    params.validate()?;
    let mut img = GrayImage::filled(
        params.width,
        params.height,
        params.background,
        pixel_scale,
        Vector2::new(params.front_origin[0], params.front_origin[1]),
    );
    let outside: Vec<usize> = (0..points.len()).filter(|&i| !img.contains(&points[i])).collect();
    if !outside.is_empty() {
        return Err(Error::OutOfBounds(outside));
    }
    let ss = params.supersample;
    let radius = 0.5 * diameter;
    let mut cover = vec![0.0f64; img.pixels.len()];
    for p in points {
        let q = img.plane_to_pixel(p);
        let rp = radius / pixel_scale + 1.0;
        let i0 = (q.x - rp).floor().max(0.0) as usize;
        let i1 = ((q.x + rp).ceil() as usize).min(params.width - 1);
        let j0 = (q.y - rp).floor().max(0.0) as usize;
        let j1 = ((q.y + rp).ceil() as usize).min(params.height - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let mut hits = 0;
                for sj in 0..ss {
                    for si in 0..ss {
                        let fi = i as f64 - 0.5 + (si as f64 + 0.5) / ss as f64;
                        let fj = j as f64 - 0.5 + (sj as f64 + 0.5) / ss as f64;
                        if (img.pixel_to_plane(fi, fj) - p).norm_squared() <= radius * radius {
                            hits += 1;
                        }
                    }
                }
                let k = j * params.width + i;
                cover[k] = cover[k].max(hits as f64 / (ss * ss) as f64);
            }
        }
    }
    let mut noise_rng = rng::stream(seed, &[Purpose::Render as u64]);
    let normal = Normal::new(0.0, params.noise_sd.max(f64::MIN_POSITIVE)).map_err(|e| Error::Domain(e.to_string()))?;
    for (px, c) in img.pixels.iter_mut().zip(&cover) {
        let mut v = params.background as f64 - params.contrast * c;
        if params.noise_sd > 0.0 {
            v += normal.sample(&mut noise_rng);
        }
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{build_helical_design, HelixSpec};
    use approx::assert_abs_diff_eq;

    fn small(w: usize) -> ImageParams {
        ImageParams {
            width: w,
            height: w,
            front_origin: [0.0, 0.0],
            side_origin: [0.0, 0.0],
            ..Default::default()
        }
    }

    #[test]
    fn pixel_mapping_round_trip() {
        let img = GrayImage::filled(64, 32, 0, 0.2, Vector2::new(1.0, -2.0));
        let p = img.pixel_to_plane(10.0, 7.0);
        let q = img.plane_to_pixel(&p);
        assert_abs_diff_eq!(q, Vector2::new(10.0, 7.0), epsilon = 1e-12);
        // image centre falls between the middle pixels
        assert_abs_diff_eq!(img.plane_to_pixel(&Vector2::new(1.0, -2.0)), Vector2::new(31.5, 15.5), epsilon = 1e-12);
    }

    #[test]
    fn blank_and_single_dot() {
        let params = small(65);
        let blank = render_dots(&[], 1.0, 0.1, &params, 0).unwrap();
        assert!(blank.pixels.iter().all(|&v| v == params.background));
        assert!(segment(&blank, &SegmentationParams::default()).is_empty());

        let img = render_dots(&[Vector2::zeros()], 1.0, 0.1, &params, 0).unwrap();
        let darkest = *img.pixels.iter().min().unwrap();
        assert_eq!(img.get(32, 32), darkest);
        assert_eq!(img.get(0, 0), params.background);
    }

    #[test]
    fn two_disks_within_half_pixel() {
        // radius 4 px disks, area about 50 px^2
        let params = small(96);
        let pts = [Vector2::new(-2.03, 1.17), Vector2::new(2.41, -1.52)];
        let img = render_dots(&pts, 0.8, 0.1, &params, 0).unwrap();
        let seg = SegmentationParams {
            min_area: 20,
            max_area: 100,
            ..Default::default()
        };
        let det = segment(&img, &seg);
        assert_eq!(det.len(), 2);
        for p in &pts {
            let best = det.centroids.iter().map(|c| (c - p).norm()).fold(f64::INFINITY, f64::min);
            assert!(best < 0.05, "{best}");
        }
    }

    #[test]
    fn small_disk_filtered() {
        let params = small(64);
        // area about 10 px^2
        let img = render_dots(&[Vector2::zeros()], 0.36, 0.1, &params, 0).unwrap();
        let seg = SegmentationParams {
            min_area: 20,
            ..Default::default()
        };
        assert!(segment(&img, &seg).is_empty());
    }

    #[test]
    fn translation_equivariant() {
        let params = small(96);
        let pts = [Vector2::new(-1.03, 0.57), Vector2::new(1.21, -0.82)];
        let shift = Vector2::new(0.3, -0.5);
        let moved: Vec<_> = pts.iter().map(|p| p + shift).collect();
        let seg = SegmentationParams::default();
        let a = segment(&render_dots(&pts, 1.0, 0.1, &params, 0).unwrap(), &seg);
        let b = segment(&render_dots(&moved, 1.0, 0.1, &params, 0).unwrap(), &seg);
        assert_eq!(a.len(), b.len());
        for (ca, cb) in a.centroids.iter().zip(&b.centroids) {
            assert_abs_diff_eq!(cb - ca, shift, epsilon = 1e-9);
        }
    }

    #[test]
    fn labels_from_rendered_catheter() {
        let h = HelixSpec::spanning(25.0, 5, 1.0).unwrap();
        let d = build_helical_design(25.0, 1.0, 5, &h).unwrap();
        let c = ModalCoefficients::constant(2, 0.03, 0.01);
        let scene = Scene::from_model(&d, &c, 0.2, &Pose::identity(), &Integrator::default()).unwrap();
        let geom = BiplaneGeometry::canonical(0.1);
        let params = ImageParams {
            height: 400,
            width: 300,
            front_origin: [0.0, 12.0],
            side_origin: [0.0, 12.0],
            ..Default::default()
        };
        let truth = Integrator::default().marker_positions(&d, &c, 0.2, &Pose::identity()).unwrap();
        for plane in [Plane::Front, Plane::Side] {
            let img = render_plane(&scene, plane, &geom, &params, 0).unwrap();
            let det = classify(&segment(&img, &SegmentationParams::default()), &ExpectedAreas::for_design(&d, 0.1)).unwrap();
            let obs = det.to_observation().unwrap();
            assert_eq!(obs.intermediates.len(), 5);
            let near = |a: Vector2<f64>, p: &Vector3<f64>| (a - project_point(p, plane, &geom)).norm() < 0.1;
            assert!(near(obs.base, &truth.base));
            assert!(near(obs.base_prime, &truth.base_prime));
            assert!(near(obs.tip, &truth.tip));
        }
    }

    #[test]
    fn equal_areas_fail_labeling() {
        let det = MarkerDetections {
            centroids: vec![Vector2::zeros(), Vector2::x(), Vector2::y()],
            areas: vec![30.0; 3],
            labels: vec![MarkerLabel::Unknown; 3],
        };
        let exp = ExpectedAreas { dot: 30.0, band: 400.0 };
        assert!(matches!(classify(&det, &exp), Err(Error::Labeling(_))));
    }

    #[test]
    fn bands_only() {
        let det = MarkerDetections {
            centroids: vec![Vector2::new(0.0, 0.0), Vector2::new(0.0, 3.0), Vector2::new(0.0, 25.0)],
            areas: vec![400.0, 410.0, 390.0],
            labels: vec![MarkerLabel::Unknown; 3],
        };
        let out = classify(&det, &ExpectedAreas { dot: 78.0, band: 400.0 }).unwrap();
        assert_eq!(out.labels, vec![MarkerLabel::BasePrime, MarkerLabel::Base, MarkerLabel::Tip]);
        assert!(out.to_observation().unwrap().intermediates.is_empty());
    }

    #[test]
    fn out_of_bounds_reported() {
        let params = small(32);
        let err = render_dots(&[Vector2::zeros(), Vector2::new(50.0, 0.0)], 1.0, 0.1, &params, 0);
        assert!(matches!(err, Err(Error::OutOfBounds(v)) if v == vec![1]));
    }

    #[test]
    fn pgm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.pgm");
        let mut img = GrayImage::filled(7, 5, 200, 0.25, Vector2::new(1.5, -3.0));
        img.pixels[12] = 3;
        write_pgm(&path, &img).unwrap();
        assert_eq!(read_pgm(&path).unwrap(), img);
    }
}
