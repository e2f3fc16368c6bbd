//! Marker layouts on the catheter surface and the spacing measures used to
//! compare them.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default separation between the base band and the proximal band, mm.
pub const DEFAULT_BASE_BAND_OFFSET: f64 = 3.0;

/// Geometry of the tracked segment and its markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDesign", into = "RawDesign")]
pub struct CatheterDesign {
    length: f64,
    radius: f64,
    arc_lengths: Vec<f64>,
    angles: Vec<f64>,
    base_band_offset: f64,
    widths: BandWidths,
}

/// Rendering metadata for the radiopaque features, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandWidths {
    pub tip: f64,
    pub base: f64,
    pub dot_diameter: f64,
}

impl Default for BandWidths {
    fn default() -> Self {
        Self {
            tip: 2.0,
            base: 2.0,
            dot_diameter: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawDesign {
    length: f64,
    radius: f64,
    arc_lengths: Vec<f64>,
    angles: Vec<f64>,
    #[serde(default = "default_offset")]
    base_band_offset: f64,
    #[serde(default)]
    widths: BandWidths,
}

fn default_offset() -> f64 {
    DEFAULT_BASE_BAND_OFFSET
}

impl TryFrom<RawDesign> for CatheterDesign {
    type Error = Error;

    fn try_from(raw: RawDesign) -> Result<Self> {
        CatheterDesign::new(raw.length, raw.radius, raw.arc_lengths, raw.angles)?
            .with_base_band_offset(raw.base_band_offset)
            .map(|d| d.with_widths(raw.widths))
    }
}

impl From<CatheterDesign> for RawDesign {
    fn from(d: CatheterDesign) -> Self {
        RawDesign {
            length: d.length,
            radius: d.radius,
            arc_lengths: d.arc_lengths,
            angles: d.angles,
            base_band_offset: d.base_band_offset,
            widths: d.widths,
        }
    }
}

impl CatheterDesign {
    /// Validates an explicit `(s_d, beta_d)` layout.
    pub fn new(length: f64, radius: f64, arc_lengths: Vec<f64>, angles: Vec<f64>) -> Result<Self> {
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::InvalidDesign(format!("length {length} must be positive")));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidDesign(format!("radius {radius} must be positive")));
        }
        if arc_lengths.len() != angles.len() {
            return Err(Error::InvalidDesign(format!(
                "{} arc-lengths but {} angles",
                arc_lengths.len(),
                angles.len()
            )));
        }
        if let Some(&first) = arc_lengths.first() {
            if !(first > 0.0) {
                return Err(Error::InvalidDesign(format!("first marker at s={first} is not inside (0, L)")));
            }
        }
        if let Some(&last) = arc_lengths.last() {
            if !(last < length) {
                return Err(Error::InvalidDesign(format!("last marker at s={last} is not inside (0, L)")));
            }
        }
        if let Some(i) = arc_lengths.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidDesign(format!(
                "arc-lengths must increase strictly (markers {} and {})",
                i,
                i + 1
            )));
        }
        if angles.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidDesign("non-finite marker angle".into()));
        }
        Ok(Self {
            length,
            radius,
            arc_lengths,
            angles,
            base_band_offset: DEFAULT_BASE_BAND_OFFSET,
            widths: BandWidths::default(),
        })
    }

    pub fn with_base_band_offset(mut self, offset: f64) -> Result<Self> {
        if !(offset > 0.0) || !offset.is_finite() {
            return Err(Error::InvalidDesign(format!("base band offset {offset} must be positive")));
        }
        self.base_band_offset = offset;
        Ok(self)
    }

    pub fn with_widths(mut self, widths: BandWidths) -> Self {
        self.widths = widths;
        self
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn marker_count(&self) -> usize {
        self.arc_lengths.len()
    }

    pub fn arc_lengths(&self) -> &[f64] {
        &self.arc_lengths
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn base_band_offset(&self) -> f64 {
        self.base_band_offset
    }

    pub fn widths(&self) -> BandWidths {
        self.widths
    }

    pub fn slenderness(&self) -> f64 {
        self.length / self.radius
    }

    /// Copy with every marker angle shifted by `delta`.
    pub fn with_angle_offset(&self, delta: f64) -> Self {
        let mut d = self.clone();
        for a in &mut d.angles {
            *a += delta;
        }
        d
    }

    /// Marker positions with the catheter straight along +z from the origin,
    /// indexed `[base, 1..n, tip]`.
    pub fn straight_layout(&self) -> Vec<Vector3<f64>> {
        let r = self.radius;
        let mut out = Vec::with_capacity(self.marker_count() + 2);
        out.push(Vector3::zeros());
        out.extend(
            self.arc_lengths
                .iter()
                .zip(&self.angles)
                .map(|(s, b)| Vector3::new(r * b.cos(), r * b.sin(), *s)),
        );
        out.push(Vector3::new(0.0, 0.0, self.length));
        out
    }
}

/// Equally spaced helical marker run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HelixSpec {
    /// Axial advance per radian of turn, mm/rad.
    pub pitch: f64,
    /// Angle between consecutive markers, rad.
    pub angular_spacing: f64,
    #[serde(default)]
    pub start_angle: f64,
}

impl HelixSpec {
    /// Helix whose `n` markers divide `length` into `n + 1` equal gaps while
    /// completing `turns` revolutions.
    pub fn spanning(length: f64, n: usize, turns: f64) -> Result<Self> {
        if n == 0 || !(turns > 0.0) {
            return Err(Error::InvalidDesign("need at least one marker and a positive turn count".into()));
        }
        let angular_spacing = 2.0 * PI * turns / n as f64;
        let axial = length / (n + 1) as f64;
        Ok(Self {
            pitch: axial / angular_spacing,
            angular_spacing,
            start_angle: 0.0,
        })
    }

    pub fn axial_spacing(&self) -> f64 {
        self.pitch * self.angular_spacing
    }
}

/// Places `n` helical markers centered in the segment.
pub fn build_helical_design(length: f64, radius: f64, n: usize, helix: &HelixSpec) -> Result<CatheterDesign> {
    if n == 0 {
        return Err(Error::InvalidDesign("a helical design needs at least one marker".into()));
    }
    if helix.angular_spacing == 0.0 || !helix.angular_spacing.is_finite() {
        return Err(Error::InvalidDesign("helix angular spacing must be non-zero".into()));
    }
    let gap = helix.axial_spacing();
    let span = gap * (n - 1) as f64;
    let first = 0.5 * (length - span);
    let arc_lengths: Vec<f64> = (0..n).map(|i| first + gap * i as f64).collect();
    let angles = (0..n)
        .map(|i| helix.start_angle + helix.angular_spacing * i as f64)
        .collect();
    CatheterDesign::new(length, radius, arc_lengths, angles)
}

/// Distance between consecutive markers of a straight helix.
pub fn marker_spacing(radius: f64, helix: &HelixSpec) -> f64 {
    let half = 0.5 * helix.angular_spacing;
    let chord = 2.0 * radius * half.sin();
    let axial = helix.pitch * helix.angular_spacing;
    (chord * chord + axial * axial).sqrt()
}

/// Marker spacing factor `d / N`.
pub fn spacing_factor(spacing: f64, uncertainty: f64) -> Result<f64> {
    if uncertainty == 0.0 {
        return Err(Error::Domain("spacing factor undefined for zero uncertainty".into()));
    }
    Ok(spacing / uncertainty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_marker_sits_mid_segment() {
        let h = HelixSpec {
            pitch: 1.0,
            angular_spacing: 0.3,
            start_angle: 0.4,
        };
        let d = build_helical_design(25.0, 1.0, 1, &h).unwrap();
        assert_eq!(d.arc_lengths(), &[12.5]);
        assert_eq!(d.angles(), &[0.4]);
    }

    #[test]
    fn zero_pitch_rejected() {
        let h = HelixSpec {
            pitch: 0.0,
            angular_spacing: PI / 2.0,
            start_angle: 0.0,
        };
        assert!(matches!(build_helical_design(25.0, 1.0, 4, &h), Err(Error::InvalidDesign(_))));
    }

    #[test]
    fn overlong_helix_rejected() {
        let h = HelixSpec {
            pitch: 2.0,
            angular_spacing: 1.0,
            start_angle: 0.0,
        };
        assert!(build_helical_design(25.0, 1.0, 20, &h).is_err());
    }

    #[test]
    fn helical_gaps_equal() {
        let h = HelixSpec::spanning(25.0, 25, 2.0).unwrap();
        let d = build_helical_design(25.0, 1.0, 25, &h).unwrap();
        let gap = h.pitch * h.angular_spacing;
        for w in d.arc_lengths().windows(2) {
            assert_abs_diff_eq!(w[1] - w[0], gap, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(d.arc_lengths()[0], 25.0 / 26.0, epsilon = 1e-12);
    }

    #[test]
    fn placement_ignores_start_angle() {
        let mut h = HelixSpec::spanning(25.0, 9, 1.5).unwrap();
        let a = build_helical_design(25.0, 1.0, 9, &h).unwrap();
        h.start_angle = 2.2;
        let b = build_helical_design(25.0, 1.0, 9, &h).unwrap();
        assert_eq!(a.arc_lengths(), b.arc_lengths());
    }

    #[test]
    fn spacing_reductions() {
        let h0 = HelixSpec {
            pitch: 0.0,
            angular_spacing: 1.2,
            start_angle: 0.0,
        };
        assert_abs_diff_eq!(marker_spacing(0.8, &h0), 2.0 * 0.8 * 0.6_f64.sin(), epsilon = 1e-15);
        let h1 = HelixSpec {
            pitch: 0.7,
            angular_spacing: 1.2,
            start_angle: 0.0,
        };
        assert_abs_diff_eq!(marker_spacing(0.0, &h1), 0.84, epsilon = 1e-15);
        let h2 = HelixSpec {
            pitch: 1.0,
            angular_spacing: PI / 2.0,
            start_angle: 0.0,
        };
        let d = marker_spacing(1.0, &h2);
        assert_abs_diff_eq!(d, (2.0 + PI * PI / 4.0).sqrt(), epsilon = 1e-14);
        assert_abs_diff_eq!(d, 2.1136, epsilon = 1e-4);
    }

    #[test]
    fn spacing_factor_examples() {
        assert_eq!(spacing_factor(1.0, 0.5).unwrap(), 2.0);
        assert_eq!(spacing_factor(0.3, 0.3).unwrap(), 1.0);
        assert_abs_diff_eq!(spacing_factor(2.1136, 0.5).unwrap(), 4.2272, epsilon = 1e-12);
        assert!(spacing_factor(1.0, 0.0).is_err());
    }

    #[test]
    fn invalid_designs() {
        assert!(CatheterDesign::new(25.0, 1.0, vec![0.0], vec![0.0]).is_err());
        assert!(CatheterDesign::new(25.0, 1.0, vec![25.0], vec![0.0]).is_err());
        assert!(CatheterDesign::new(25.0, 1.0, vec![3.0, 2.0], vec![0.0, 0.0]).is_err());
        assert!(CatheterDesign::new(25.0, 0.0, vec![3.0], vec![0.0]).is_err());
        assert!(CatheterDesign::new(-1.0, 1.0, vec![], vec![]).is_err());
        let d = CatheterDesign::new(25.0, 1.0, vec![3.0], vec![0.0]).unwrap();
        assert!(d.with_base_band_offset(0.0).is_err());
    }

    #[test]
    fn design_toml_round_trip() {
        let h = HelixSpec::spanning(25.0, 5, 2.0).unwrap();
        let d = build_helical_design(25.0, 1.0, 5, &h).unwrap();
        let text = toml::to_string(&d).unwrap();
        let back: CatheterDesign = toml::from_str(&text).unwrap();
        assert_eq!(d, back);
        let bad = text.replace("radius = 1.0", "radius = -1.0");
        assert!(toml::from_str::<CatheterDesign>(&bad).is_err());
    }
}
