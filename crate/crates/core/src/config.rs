//! Run configuration shared by every command.
//!
//! One TOML document holds the design, geometry, noise, estimator,
//! imaging and study settings. Lengths are in millimetres and angles in
//! radians. Every section is optional and falls back to its default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::biplane::BiplaneGeometry;
use crate::design::{build_helical_design, BandWidths, CatheterDesign, HelixSpec};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::imaging::{ImageParams, SegmentationParams};
use crate::kinematics::ModalCoefficients;
use crate::reconstruction::ReconstructionConfig;
use crate::studies::StudyConfig;

/// Catheter design, either a helical run or explicit marker lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpec {
    Helical {
        length: f64,
        radius: f64,
        markers: usize,
        /// Revolutions completed over the marker run.
        turns: f64,
        #[serde(default)]
        start_angle: f64,
        #[serde(default)]
        widths: BandWidths,
    },
    Explicit(CatheterDesign),
}

impl Default for DesignSpec {
    fn default() -> Self {
        DesignSpec::Helical {
            length: 25.0,
            radius: 1.0,
            markers: 21,
            turns: 2.0,
            start_angle: 0.0,
            widths: BandWidths::default(),
        }
    }
}

impl DesignSpec {
    pub fn build(&self) -> Result<CatheterDesign> {
        match self {
            DesignSpec::Helical {
                length,
                radius,
                markers,
                turns,
                start_angle,
                widths,
            } => {
                let mut helix = HelixSpec::spanning(*length, *markers, *turns)?;
                helix.start_angle = *start_angle;
                Ok(build_helical_design(*length, *radius, *markers, &helix)?.with_widths(*widths))
            }
            DesignSpec::Explicit(d) => Ok(d.clone()),
        }
    }
}

/// Ground-truth configuration for simulation. Without coefficients a
/// random configuration of `order` is drawn from the study bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseSpec {
    pub order: usize,
    pub coefficients: Option<ModalCoefficients>,
    /// Roll, rad. Ignored for random configurations.
    pub roll: f64,
}

impl Default for PoseSpec {
    fn default() -> Self {
        Self {
            order: 3,
            coefficients: None,
            roll: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Master seed of every stochastic step.
    pub seed: u64,
    /// Planar uncertainty radius, mm.
    pub noise: f64,
    /// Modal order fitted by `estimate` and `pipeline`.
    pub order: usize,
    pub design: DesignSpec,
    pub geometry: BiplaneGeometry,
    pub pose: PoseSpec,
    pub reconstruction: ReconstructionConfig,
    pub estimator: EstimatorConfig,
    pub imaging: ImageParams,
    pub segmentation: SegmentationParams,
    pub study: StudyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            noise: 0.0,
            order: 3,
            design: DesignSpec::default(),
            geometry: BiplaneGeometry::default(),
            pose: PoseSpec::default(),
            reconstruction: ReconstructionConfig::default(),
            estimator: EstimatorConfig::default(),
            imaging: ImageParams::default(),
            segmentation: SegmentationParams::default(),
            study: StudyConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map_or_else(|| "config".to_owned(), |_| field_of(&e));
            Error::config(field, e.message().trim())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("config", e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0) {
            return Err(Error::config("noise", "must be non-negative"));
        }
        if self.order == 0 || self.pose.order == 0 {
            return Err(Error::config("order", "modal order must be positive"));
        }
        self.design
            .build()
            .map_err(|e| Error::config("design", e.to_string()))?;
        self.estimator.validate()?;
        self.imaging.validate()?;
        self.segmentation.validate()?;
        self.study.validate()?;
        Ok(())
    }
}

/// Best-effort dotted key path of a parse error, taken from the message.
fn field_of(e: &toml::de::Error) -> String {
    let msg = e.to_string();
    msg.lines()
        .find_map(|l| l.trim().strip_prefix("in `").and_then(|r| r.strip_suffix('`')))
        .map(str::to_owned)
        .unwrap_or_else(|| "config".to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::studies::StudyKind;

    #[test]
    fn default_round_trip() {
        let cfg = RunConfig::default();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn explicit_design_round_trip() {
        let d = CatheterDesign::new(20.0, 0.8, vec![5.0, 10.0, 15.0], vec![0.0, 2.0, 4.0]).unwrap();
        let cfg = RunConfig {
            design: DesignSpec::Explicit(d.clone()),
            pose: PoseSpec {
                order: 2,
                coefficients: Some(ModalCoefficients::new(vec![0.01, 0.0], vec![0.0, -0.02]).unwrap()),
                roll: 0.3,
            },
            ..Default::default()
        };
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.design.build().unwrap(), d);
    }

    #[test]
    fn partial_document_uses_defaults() {
        let cfg = RunConfig::from_toml("seed = 9\nnoise = 0.5\n[study]\nkind = \"dropped\"\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.study.kind, StudyKind::Dropped);
        assert_eq!(cfg.design.build().unwrap().marker_count(), 21);
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_toml("noise = -1.0\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "noise"), "{err}");
        let err = RunConfig::from_toml("[design]\nkind = \"helical\"\nlength = 25.0\nradius = 1.0\nmarkers = 0\nturns = 2.0\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "design"), "{err}");
        assert!(matches!(RunConfig::from_toml("seed = \"x\"\n"), Err(Error::Config { .. })));
    }
}
