//! CSV and JSON readers and writers for markers, detections, backbones and
//! study outputs.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::biplane::Plane;
use crate::error::{Error, Result};
use crate::imaging::{MarkerDetections, MarkerLabel};
use crate::kinematics::{BackbonePath, MarkerPositions};
use crate::reconstruction::{OrderedMarkerSet, PlanarObservation};
use crate::studies::{StudyResult, TrialRecord, Variant};

const BASE_PRIME: &str = "base_prime";
const BASE: &str = "base";
const TIP: &str = "tip";

#[derive(Debug, Serialize, Deserialize)]
struct PlanarRow {
    id: String,
    plane: Plane,
    x_mm: f64,
    y_mm: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetectionRow {
    label: MarkerLabel,
    x_mm: f64,
    y_mm: f64,
    area_px2: f64,
}

/// Writes one plane's observation (`id, plane, x_mm, y_mm`). Intermediate
/// markers get ids `m0`, `m1`, ... in observation order.
pub fn write_observation(path: &Path, obs: &PlanarObservation, plane: Plane) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut row = |id: String, p: &Vector2<f64>| {
        w.serialize(PlanarRow {
            id,
            plane,
            x_mm: p.x,
            y_mm: p.y,
        })
    };
    row(BASE_PRIME.into(), &obs.base_prime)?;
    row(BASE.into(), &obs.base)?;
    for (i, p) in obs.intermediates.iter().enumerate() {
        row(format!("m{i}"), p)?;
    }
    row(TIP.into(), &obs.tip)?;
    w.flush()?;
    Ok(())
}

/// Reads an observation from either a marker CSV (`id, plane, x_mm, y_mm`)
/// or a labeled detection CSV (`label, x_mm, y_mm, area_px2`).
pub fn read_observation(path: &Path) -> Result<PlanarObservation> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().any(|h| h == "label") {
        return read_detections_from(r)?.to_observation();
    }
    let mut base_prime = None;
    let mut base = None;
    let mut tip = None;
    let mut intermediates = Vec::new();
    for row in r.deserialize() {
        let row: PlanarRow = row?;
        let p = Vector2::new(row.x_mm, row.y_mm);
        match row.id.as_str() {
            BASE_PRIME => base_prime = Some(p),
            BASE => base = Some(p),
            TIP => tip = Some(p),
            _ => intermediates.push(p),
        }
    }
    let need = |v: Option<Vector2<f64>>, id: &str| {
        v.ok_or_else(|| Error::Parse(format!("{}: no `{id}` row", path.display())))
    };
    Ok(PlanarObservation {
        base_prime: need(base_prime, BASE_PRIME)?,
        base: need(base, BASE)?,
        tip: need(tip, TIP)?,
        intermediates,
    })
}

pub fn write_detections(path: &Path, det: &MarkerDetections) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for i in 0..det.len() {
        w.serialize(DetectionRow {
            label: det.labels[i],
            x_mm: det.centroids[i].x,
            y_mm: det.centroids[i].y,
            area_px2: det.areas[i],
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: &Path) -> Result<MarkerDetections> {
    read_detections_from(csv::Reader::from_path(path)?)
}

fn read_detections_from<R: std::io::Read>(mut r: csv::Reader<R>) -> Result<MarkerDetections> {
    let mut det = MarkerDetections::default();
    for row in r.deserialize() {
        let row: DetectionRow = row?;
        det.centroids.push(Vector2::new(row.x_mm, row.y_mm));
        det.areas.push(row.area_px2);
        det.labels.push(row.label);
    }
    Ok(det)
}

#[derive(Debug, Serialize, Deserialize)]
struct SpatialRow {
    id: String,
    #[serde(rename = "X")]
    x: f64,
    #[serde(rename = "Y")]
    y: f64,
    #[serde(rename = "Z")]
    z: f64,
}

/// Writes true marker positions (`id, X, Y, Z`); intermediates are
/// numbered from 1 in design order.
pub fn write_world_markers(path: &Path, m: &MarkerPositions) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut row = |id: String, p: &Vector3<f64>| {
        w.serialize(SpatialRow {
            id,
            x: p.x,
            y: p.y,
            z: p.z,
        })
    };
    row(BASE_PRIME.into(), &m.base_prime)?;
    row(BASE.into(), &m.base)?;
    for (i, p) in m.intermediates.iter().enumerate() {
        row((i + 1).to_string(), p)?;
    }
    row(TIP.into(), &m.tip)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ReconstructedRow {
    #[serde(alias = "id")]
    index: String,
    #[serde(default = "present_by_default")]
    present: bool,
    #[serde(rename = "X")]
    x: Option<f64>,
    #[serde(rename = "Y")]
    y: Option<f64>,
    #[serde(rename = "Z")]
    z: Option<f64>,
}

fn present_by_default() -> bool {
    true
}

/// Writes a reconstruction (`index, present, X, Y, Z`); absent markers
/// have empty coordinates.
pub fn write_marker_set(path: &Path, m: &OrderedMarkerSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut row = |index: String, p: Option<&Vector3<f64>>| {
        w.serialize(ReconstructedRow {
            index,
            present: p.is_some(),
            x: p.map(|p| p.x),
            y: p.map(|p| p.y),
            z: p.map(|p| p.z),
        })
    };
    row(BASE_PRIME.into(), Some(&m.base_prime))?;
    row(BASE.into(), Some(&m.base))?;
    for (i, p) in m.intermediates.iter().enumerate() {
        row((i + 1).to_string(), p.as_ref())?;
    }
    row(TIP.into(), Some(&m.tip))?;
    w.flush()?;
    Ok(())
}

/// Reads a reconstruction written by [`write_marker_set`], or true marker
/// positions written by [`write_world_markers`].
pub fn read_marker_set(path: &Path) -> Result<OrderedMarkerSet> {
    let mut r = csv::Reader::from_path(path)?;
    let mut bands: [Option<Vector3<f64>>; 3] = [None; 3];
    let mut inter: Vec<(usize, Option<Vector3<f64>>)> = Vec::new();
    for row in r.deserialize() {
        let row: ReconstructedRow = row?;
        let p = match (row.present, row.x, row.y, row.z) {
            (true, Some(x), Some(y), Some(z)) => Some(Vector3::new(x, y, z)),
            (true, ..) => return Err(Error::Parse(format!("marker `{}` is present without coordinates", row.index))),
            (false, ..) => None,
        };
        let band = |slot: &mut Option<Vector3<f64>>| -> Result<()> {
            *slot = Some(p.ok_or_else(|| Error::Parse(format!("band `{}` must be present", row.index)))?);
            Ok(())
        };
        match row.index.as_str() {
            BASE_PRIME => band(&mut bands[0])?,
            BASE => band(&mut bands[1])?,
            TIP => band(&mut bands[2])?,
            other => {
                let i: usize = other
                    .parse()
                    .map_err(|_| Error::Parse(format!("unknown marker index `{other}`")))?;
                inter.push((i, p));
            }
        }
    }
    inter.sort_by_key(|(i, _)| *i);
    if inter.iter().enumerate().any(|(k, (i, _))| *i != k + 1) {
        return Err(Error::Parse("intermediate indices must run 1..n without gaps".into()));
    }
    let [Some(base_prime), Some(base), Some(tip)] = bands else {
        return Err(Error::Parse(format!("{}: missing band rows", path.display())));
    };
    Ok(OrderedMarkerSet {
        base_prime,
        base,
        intermediates: inter.into_iter().map(|(_, p)| p).collect(),
        tip,
    })
}

#[derive(Debug, Serialize)]
struct BackboneRow {
    s_mm: f64,
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
}

/// Writes backbone samples (`s_mm, x_mm, y_mm, z_mm`).
pub fn write_backbone(path: &Path, path_samples: &BackbonePath) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for f in &path_samples.samples {
        w.serialize(BackboneRow {
            s_mm: f.s,
            x_mm: f.position.x,
            y_mm: f.position.y,
            z_mm: f.position.z,
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct TrialRow<'a> {
    design: usize,
    configuration: usize,
    order: usize,
    variant: Variant,
    x: f64,
    shape_error_pct: Option<f64>,
    roll_error_deg: Option<f64>,
    converged: bool,
    outer_iterations: usize,
    monotone: bool,
    dropped: usize,
    error: Option<&'a str>,
}

/// Raw per-trial table.
pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for t in trials {
        w.serialize(TrialRow {
            design: t.design,
            configuration: t.configuration,
            order: t.order,
            variant: t.variant,
            x: t.x,
            shape_error_pct: t.shape_error_pct,
            roll_error_deg: t.roll_error_deg,
            converged: t.converged,
            outer_iterations: t.outer_iterations,
            monotone: t.monotone,
            dropped: t.dropped,
            error: t.error.as_deref(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct PlotRow {
    order: usize,
    variant: Variant,
    x: f64,
    mean: f64,
    sd: f64,
    roll_mean: f64,
    roll_sd: f64,
}

/// Curve data per design point (`x, mean, sd` of the shape error in % of
/// L, plus the roll statistics in degrees).
pub fn write_plot_data(path: &Path, result: &StudyResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in &result.points {
        w.serialize(PlotRow {
            order: p.order,
            variant: p.variant,
            x: p.x,
            mean: p.shape_mean_pct,
            sd: p.shape_sd_pct,
            roll_mean: p.roll_mean_deg,
            roll_sd: p.roll_sd_deg,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}
