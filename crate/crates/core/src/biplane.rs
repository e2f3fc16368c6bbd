//! Orthographic biplane imaging geometry.
//!
//! Each imaging plane is described by a world-to-plane rotation whose first
//! two rows span the image plane and whose third row is the plane normal.
//! Projection drops the normal component; reconstruction solves the stacked
//! projector system of both planes in the least-squares sense.

use nalgebra::{Matrix3, OMatrix, Vector2, Vector3, Vector6, U3, U6};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Plane {
    Front,
    Side,
}

impl Plane {
    pub fn other(self) -> Plane {
        match self {
            Plane::Front => Plane::Side,
            Plane::Side => Plane::Front,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Plane::Front => "front",
            Plane::Side => "side",
        }
    }
}

impl std::str::FromStr for Plane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "front" | "f" | "ap" => Ok(Plane::Front),
            "side" | "s" | "lateral" => Ok(Plane::Side),
            other => Err(Error::Parse(format!("unknown plane {other:?}"))),
        }
    }
}

/// Two imaging planes and the detector pixel scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGeometry", into = "RawGeometry")]
pub struct BiplaneGeometry {
    front: Matrix3<f64>,
    side: Matrix3<f64>,
    pixel_scale: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawGeometry {
    front_rows: [[f64; 3]; 3],
    side_rows: [[f64; 3]; 3],
    pixel_scale: f64,
}

impl TryFrom<RawGeometry> for BiplaneGeometry {
    type Error = Error;

    fn try_from(raw: RawGeometry) -> Result<Self> {
        let m = |r: [[f64; 3]; 3]| Matrix3::from_row_slice(&[r[0], r[1], r[2]].concat());
        BiplaneGeometry::new(m(raw.front_rows), m(raw.side_rows), raw.pixel_scale)
    }
}

impl From<BiplaneGeometry> for RawGeometry {
    fn from(g: BiplaneGeometry) -> Self {
        let rows = |m: &Matrix3<f64>| {
            [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ]
        };
        RawGeometry {
            front_rows: rows(&g.front),
            side_rows: rows(&g.side),
            pixel_scale: g.pixel_scale,
        }
    }
}

impl Default for BiplaneGeometry {
    fn default() -> Self {
        Self::canonical(0.1)
    }
}

fn orthonormal(m: &Matrix3<f64>) -> bool {
    (m.transpose() * m - Matrix3::identity()).norm() < 1e-9 && (m.determinant() - 1.0).abs() < 1e-9
}

impl BiplaneGeometry {
    pub fn new(front: Matrix3<f64>, side: Matrix3<f64>, pixel_scale: f64) -> Result<Self> {
        if !orthonormal(&front) {
            return Err(Error::config("geometry.front_rows", "not a proper rotation"));
        }
        if !orthonormal(&side) {
            return Err(Error::config("geometry.side_rows", "not a proper rotation"));
        }
        if !(pixel_scale > 0.0) {
            return Err(Error::config("geometry.pixel_scale", "must be positive"));
        }
        let g = Self {
            front,
            side,
            pixel_scale,
        };
        if g.normal(Plane::Front).dot(&g.normal(Plane::Side)).abs() >= 0.999 {
            return Err(Error::config("geometry", "imaging planes are (nearly) parallel"));
        }
        Ok(g)
    }

    /// Orthogonal AP/lateral pair sharing the world z-axis as the vertical
    /// image axis: front normal is world y, side normal is world x.
    pub fn canonical(pixel_scale: f64) -> Self {
        let front = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0);
        let side = Matrix3::new(0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0);
        Self {
            front,
            side,
            pixel_scale,
        }
    }

    /// Canonical pair with the side plane rotated about world z by `angle`
    /// (oblique setups).
    pub fn with_side_angle(pixel_scale: f64, angle: f64) -> Result<Self> {
        let base = Self::canonical(pixel_scale);
        let rz = crate::kinematics::rot_z(angle);
        Self::new(base.front, base.side * rz.transpose(), pixel_scale)
    }

    pub fn rotation(&self, plane: Plane) -> &Matrix3<f64> {
        match plane {
            Plane::Front => &self.front,
            Plane::Side => &self.side,
        }
    }

    pub fn normal(&self, plane: Plane) -> Vector3<f64> {
        self.rotation(plane).row(2).transpose()
    }

    pub fn pixel_scale(&self) -> f64 {
        self.pixel_scale
    }

    /// Orthographic projector `I - n n^T` of a plane.
    pub fn projector(&self, plane: Plane) -> Matrix3<f64> {
        let n = self.normal(plane);
        Matrix3::identity() - n * n.transpose()
    }

    /// World point embedded in the plane at zero depth.
    pub fn lift(&self, q: &Vector2<f64>, plane: Plane) -> Vector3<f64> {
        self.rotation(plane).transpose() * Vector3::new(q.x, q.y, 0.0)
    }
}

/// In-plane coordinates of a world point.
pub fn project_point(p: &Vector3<f64>, plane: Plane, geom: &BiplaneGeometry) -> Vector2<f64> {
    let q = geom.rotation(plane) * p;
    Vector2::new(q.x, q.y)
}

/// Bounded planar segmentation noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Maximum displacement in the front plane, mm.
    pub front: f64,
    /// Maximum displacement in the side plane, mm.
    pub side: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            front: 0.0,
            side: 0.0,
            seed: 0,
        }
    }

    pub fn uniform(radius: f64, seed: u64) -> Self {
        Self {
            front: radius,
            side: radius,
            seed,
        }
    }

    pub fn radius(&self, plane: Plane) -> f64 {
        match plane {
            Plane::Front => self.front,
            Plane::Side => self.side,
        }
    }

    /// Larger of the two plane bounds.
    pub fn max_radius(&self) -> f64 {
        self.front.max(self.side)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.front >= 0.0) || !(self.side >= 0.0) {
            return Err(Error::config("noise", "uncertainty radii must be non-negative"));
        }
        Ok(())
    }
}

/// Displacement drawn uniformly from the disk of the given radius.
pub fn disk_sample<R: Rng + ?Sized>(radius: f64, rng: &mut R) -> Vector2<f64> {
    let rho = radius * rng.random::<f64>().sqrt();
    let theta = std::f64::consts::TAU * rng.random::<f64>();
    Vector2::new(rho * theta.cos(), rho * theta.sin())
}

/// Adds uniform-disk noise using an explicit generator.
pub fn perturb_with<R: Rng + ?Sized>(points: &[Vector2<f64>], radius: f64, rng: &mut R) -> Vec<Vector2<f64>> {
    if radius == 0.0 {
        return points.to_vec();
    }
    points.iter().map(|p| p + disk_sample(radius, rng)).collect()
}

/// Adds uniform-disk noise from the plane's own substream of `noise.seed`.
pub fn perturb(points: &[Vector2<f64>], noise: &NoiseModel, plane: Plane) -> Vec<Vector2<f64>> {
    let purpose = match plane {
        Plane::Front => Purpose::FrontNoise,
        Plane::Side => Purpose::SideNoise,
    };
    let mut rng = rng::stream(noise.seed, &[purpose as u64]);
    perturb_with(points, noise.radius(plane), &mut rng)
}

/// Least-squares world point from a front/side correspondence.
pub fn triangulate(p_front: &Vector2<f64>, p_side: &Vector2<f64>, geom: &BiplaneGeometry) -> Result<Vector3<f64>> {
    let mut a = OMatrix::<f64, U6, U3>::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&geom.projector(Plane::Front));
    a.fixed_view_mut::<3, 3>(3, 0).copy_from(&geom.projector(Plane::Side));
    let lf = geom.lift(p_front, Plane::Front);
    let ls = geom.lift(p_side, Plane::Side);
    let b = Vector6::new(lf.x, lf.y, lf.z, ls.x, ls.y, ls.z);

    let svd = a.svd(true, true);
    let rank = svd.rank(1e-9);
    if rank < 3 {
        return Err(Error::RankDeficient { rank });
    }
    let pinv = svd
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::Domain(e.to_string()))?;
    Ok(pinv * b)
}

/// Squared residual of the stacked system at `p`, used by tests and
/// diagnostics.
pub fn stacked_residual(p: &Vector3<f64>, p_front: &Vector2<f64>, p_side: &Vector2<f64>, geom: &BiplaneGeometry) -> f64 {
    let rf = geom.projector(Plane::Front) * p - geom.lift(p_front, Plane::Front);
    let rs = geom.projector(Plane::Side) * p - geom.lift(p_side, Plane::Side);
    rf.norm_squared() + rs.norm_squared()
}

/// Distance from `q` (in the plane opposite `primary`) to the epipolar line
/// of `p` (in `primary`).
pub fn epipolar_distance(q: &Vector2<f64>, p: &Vector2<f64>, primary: Plane, geom: &BiplaneGeometry) -> f64 {
    let secondary = primary.other();
    let origin = project_point(&geom.lift(p, primary), secondary, geom);
    let dir = project_point(&geom.normal(primary), secondary, geom);
    let d = q - origin;
    let len = dir.norm();
    if len < 1e-12 {
        return d.norm();
    }
    (d.x * dir.y - d.y * dir.x).abs() / len
}
