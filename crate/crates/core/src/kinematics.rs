//! Forward kinematics of the tracked catheter segment.
//!
//! The bending strain along the backbone is a Chebyshev expansion in
//! arc-length. Frames are obtained by chaining closed-form SE(3)
//! exponentials of the body twist `(v, u) = (e_z, u(s))`, so every
//! rotation stays orthonormal to machine precision regardless of the
//! number of steps.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::design::CatheterDesign;
use crate::error::{Error, Result};

/// Tolerance on the Chebyshev argument before a domain error is raised.
const CHEBYSHEV_SLACK: f64 = 1e-12;

/// Below this rotation angle the exponential falls back to series terms.
const SMALL_ANGLE: f64 = 1e-8;

/// Evaluates `[T_0(x), ..., T_{m-1}(x)]` by the three-term recurrence.
pub fn chebyshev_basis(x: f64, m: usize) -> Result<Vec<f64>> {
    if !(x.abs() <= 1.0 + CHEBYSHEV_SLACK) {
        return Err(Error::Domain(format!("chebyshev argument {x} outside [-1, 1]")));
    }
    if m == 0 {
        return Err(Error::Domain("basis order must be positive".into()));
    }
    let x = x.clamp(-1.0, 1.0);
    let mut out = Vec::with_capacity(m);
    out.push(1.0);
    if m > 1 {
        out.push(x);
    }
    for k in 2..m {
        let next = 2.0 * x * out[k - 1] - out[k - 2];
        out.push(next);
    }
    Ok(out)
}

/// `sum_k a_k T_k(x)` without allocating the basis.
fn chebyshev_dot(x: f64, coeffs: &[f64]) -> f64 {
    let mut t_prev = 1.0;
    let mut t_cur = x;
    let mut acc = 0.0;
    for (k, a) in coeffs.iter().enumerate() {
        let t = match k {
            0 => 1.0,
            1 => x,
            _ => {
                let t_next = 2.0 * x * t_cur - t_prev;
                t_prev = t_cur;
                t_cur = t_next;
                t_next
            }
        };
        acc += a * t;
    }
    acc
}

/// Modal coefficients of the two bending strains. Torsion is not modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalCoefficients {
    cx: Vec<f64>,
    cy: Vec<f64>,
}

impl ModalCoefficients {
    pub fn new(cx: Vec<f64>, cy: Vec<f64>) -> Result<Self> {
        if cx.is_empty() || cx.len() != cy.len() {
            return Err(Error::Domain(format!(
                "coefficient vectors must share a positive length (got {} and {})",
                cx.len(),
                cy.len()
            )));
        }
        Ok(Self { cx, cy })
    }

    pub fn zeros(order: usize) -> Self {
        assert!(order >= 1, "modal order must be positive");
        Self {
            cx: vec![0.0; order],
            cy: vec![0.0; order],
        }
    }

    /// Constant curvature `kx` about the local x-axis and `ky` about y.
    pub fn constant(order: usize, kx: f64, ky: f64) -> Self {
        let mut c = Self::zeros(order);
        c.cx[0] = kx;
        c.cy[0] = ky;
        c
    }

    /// Builds coefficients from the stacked `[cx, cy]` vector.
    pub fn from_stacked(order: usize, stacked: &[f64]) -> Result<Self> {
        if stacked.len() != 2 * order || order == 0 {
            return Err(Error::LengthMismatch {
                left: stacked.len(),
                right: 2 * order,
            });
        }
        Ok(Self {
            cx: stacked[..order].to_vec(),
            cy: stacked[order..].to_vec(),
        })
    }

    pub fn order(&self) -> usize {
        self.cx.len()
    }

    pub fn cx(&self) -> &[f64] {
        &self.cx
    }

    pub fn cy(&self) -> &[f64] {
        &self.cy
    }

    pub fn stacked(&self) -> Vec<f64> {
        self.cx.iter().chain(self.cy.iter()).copied().collect()
    }

    pub fn norm(&self) -> f64 {
        self.cx.iter().chain(self.cy.iter()).map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rotates every strain vector by `angle` about the local z-axis.
    pub fn rotated(&self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        let cx = self
            .cx
            .iter()
            .zip(&self.cy)
            .map(|(x, y)| c * x - s * y)
            .collect();
        let cy = self
            .cx
            .iter()
            .zip(&self.cy)
            .map(|(x, y)| s * x + c * y)
            .collect();
        Self { cx, cy }
    }

    /// Strain at normalized coordinate `x` in [-1, 1] (no bounds check).
    fn strain_normalized(&self, x: f64) -> Vector3<f64> {
        Vector3::new(chebyshev_dot(x, &self.cx), chebyshev_dot(x, &self.cy), 0.0)
    }
}

/// Maps arc-length onto the Chebyshev domain.
#[inline]
pub fn arc_to_unit(s: f64, length: f64) -> f64 {
    (2.0 * s / length - 1.0).clamp(-1.0, 1.0)
}

/// Body-frame bending strain `(u_x, u_y, 0)` at arc-length `s`.
pub fn strain_at(s: f64, c: &ModalCoefficients, length: f64) -> Result<Vector3<f64>> {
    let slack = CHEBYSHEV_SLACK * length.max(1.0);
    if !(length > 0.0) || s < -slack || s > length + slack {
        return Err(Error::Domain(format!("arc-length {s} outside [0, {length}]")));
    }
    Ok(c.strain_normalized(arc_to_unit(s, length)))
}

/// Rigid transform with the rotation kept as an explicit matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, position: Vector3<f64>) -> Self {
        Self { rotation, position }
    }

    /// `self * other`
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.position + self.rotation * other.position,
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.position + self.rotation * p
    }

    /// Local z-axis (the backbone tangent for section frames).
    pub fn tangent(&self) -> Vector3<f64> {
        self.rotation.column(2).into_owned()
    }

    /// Right-multiplies a rotation of `angle` about the local z-axis.
    pub fn rolled(&self, angle: f64) -> Pose {
        Pose {
            rotation: self.rotation * rot_z(angle),
            position: self.position,
        }
    }

    /// Canonical frame at `origin` whose z-axis is `tangent`.
    ///
    /// The x-axis is world x projected off the tangent, or world y when the
    /// tangent is within ~25 degrees of world x. Roll angles are measured from
    /// this frame.
    pub fn from_tangent(origin: Vector3<f64>, tangent: &Vector3<f64>) -> Result<Pose> {
        let norm = tangent.norm();
        if !(norm > 1e-12) {
            return Err(Error::DegenerateBase);
        }
        let z = tangent / norm;
        let reference = if z.x.abs() < 0.9 {
            Vector3::x()
        } else {
            Vector3::y()
        };
        let x = (reference - z * z.dot(&reference)).normalize();
        let y = z.cross(&x);
        Ok(Pose {
            rotation: Matrix3::from_columns(&[x, y, z]),
            position: origin,
        })
    }
}

pub fn rot_z(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Closed-form `exp(h * xi^)` for the body twist with unit tangential
/// velocity and angular rate `u`.
pub fn twist_exp(u: &Vector3<f64>, h: f64) -> Pose {
    let w = u * h;
    let theta = w.norm();
    let k = hat(&w);
    let k2 = k * k;
    let (a, b, c) = if theta < SMALL_ANGLE {
        (1.0, 0.5, 1.0 / 6.0)
    } else {
        let half = 0.5 * theta;
        let one_minus_cos = 2.0 * half.sin() * half.sin();
        (
            theta.sin() / theta,
            one_minus_cos / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    };
    let rotation = Matrix3::identity() + k * a + k2 * b;
    let v = Vector3::new(0.0, 0.0, h);
    let left_jacobian = Matrix3::identity() + k * b + k2 * c;
    Pose {
        rotation,
        position: left_jacobian * v,
    }
}

/// Where within a step the strain is sampled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrainSampling {
    /// Strain at the start of each step (first order in the step size).
    LeftEndpoint,
    /// Strain at the middle of each step (second order).
    #[default]
    Midpoint,
}

/// Product-of-exponentials integrator settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Integrator {
    /// Arc-length step in mm; `None` uses `L / 100`.
    pub step: Option<f64>,
    pub sampling: StrainSampling,
}

/// One section frame along the backbone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSample {
    pub s: f64,
    pub rotation: Matrix3<f64>,
    pub position: Vector3<f64>,
}

impl FrameSample {
    pub fn pose(&self) -> Pose {
        Pose::new(self.rotation, self.position)
    }
}

/// Frames at uniform arc-length steps from `s = 0` to `s = L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BackbonePath {
    pub samples: Vec<FrameSample>,
    pub step: f64,
}

impl BackbonePath {
    pub fn base(&self) -> &FrameSample {
        &self.samples[0]
    }

    pub fn tip(&self) -> &FrameSample {
        self.samples.last().expect("path has at least two samples")
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Right-multiplies every rotation by a roll about the local tangent.
    pub fn rolled(mut self, angle: f64) -> Self {
        let r = rot_z(angle);
        for f in &mut self.samples {
            f.rotation *= r;
        }
        self
    }
}

impl Integrator {
    pub fn with_step(step: f64) -> Self {
        Self {
            step: Some(step),
            ..Self::default()
        }
    }

    pub fn step_for(&self, length: f64) -> f64 {
        self.step.unwrap_or(length / 100.0)
    }

    fn step_pose(&self, c: &ModalCoefficients, length: f64, s0: f64, h: f64) -> Pose {
        let s_eval = match self.sampling {
            StrainSampling::LeftEndpoint => s0,
            StrainSampling::Midpoint => s0 + 0.5 * h,
        };
        let u = c.strain_normalized(arc_to_unit(s_eval, length));
        twist_exp(&u, h)
    }

    fn check(&self, length: f64) -> Result<f64> {
        let step = self.step_for(length);
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::Domain(format!("segment length {length} must be positive")));
        }
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Domain(format!("integration step {step} must be positive")));
        }
        Ok(step)
    }

    /// Number of steps; the last one is shortened to land on `L`.
    fn step_count(length: f64, step: f64) -> usize {
        let ratio = length / step;
        ((ratio - 1e-9).ceil() as usize).max(1)
    }

    /// Integrates the full uniform frame field.
    pub fn propagate(&self, c: &ModalCoefficients, base: &Pose, length: f64) -> Result<BackbonePath> {
        let step = self.check(length)?;
        let n = Self::step_count(length, step);
        let mut samples = Vec::with_capacity(n + 1);
        let mut pose = *base;
        samples.push(FrameSample {
            s: 0.0,
            rotation: pose.rotation,
            position: pose.position,
        });
        for j in 1..=n {
            let s0 = (j - 1) as f64 * step;
            let s1 = if j == n { length } else { j as f64 * step };
            pose = pose.compose(&self.step_pose(c, length, s0, s1 - s0));
            samples.push(FrameSample {
                s: s1,
                rotation: pose.rotation,
                position: pose.position,
            });
        }
        Ok(BackbonePath { samples, step })
    }

    /// Frames at arbitrary arc-lengths, consistent with [`Self::propagate`]:
    /// each query continues from the preceding grid frame with one partial
    /// step.
    pub fn frames_at(
        &self,
        c: &ModalCoefficients,
        base: &Pose,
        length: f64,
        queries: &[f64],
    ) -> Result<Vec<Pose>> {
        let step = self.check(length)?;
        let n = Self::step_count(length, step);
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.sort_by(|&a, &b| queries[a].total_cmp(&queries[b]));
        let mut out = vec![Pose::identity(); queries.len()];

        let mut grid_index = 0usize;
        let mut grid_pose = *base;
        for &qi in &order {
            let s = queries[qi];
            if !(-1e-12..=length + 1e-9).contains(&s) {
                return Err(Error::Domain(format!("query arc-length {s} outside [0, {length}]")));
            }
            let s = s.clamp(0.0, length);
            // advance whole grid steps while the next grid node is at or before s
            while grid_index < n {
                let next_s = if grid_index + 1 == n {
                    length
                } else {
                    (grid_index + 1) as f64 * step
                };
                if next_s > s {
                    break;
                }
                let s0 = grid_index as f64 * step;
                grid_pose = grid_pose.compose(&self.step_pose(c, length, s0, next_s - s0));
                grid_index += 1;
            }
            let s0 = grid_index as f64 * step;
            let h = s - s0;
            out[qi] = if h > 0.0 {
                grid_pose.compose(&self.step_pose(c, length, s0, h))
            } else {
                grid_pose
            };
        }
        Ok(out)
    }

    /// World positions of all markers ordered `[b', b, 1..n, e]`.
    ///
    /// The roll `sigma` rotates each intermediate marker about the local
    /// tangent; the backbone itself does not depend on it.
    pub fn marker_positions(
        &self,
        design: &CatheterDesign,
        c: &ModalCoefficients,
        sigma: f64,
        base: &Pose,
    ) -> Result<MarkerPositions> {
        let mut queries = design.arc_lengths().to_vec();
        queries.push(design.length());
        let frames = self.frames_at(c, base, design.length(), &queries)?;
        let n = design.marker_count();
        let r = design.radius();
        let intermediates = frames[..n]
            .iter()
            .zip(design.angles())
            .map(|(f, beta)| {
                let a = beta + sigma;
                f.position + f.rotation * Vector3::new(r * a.cos(), r * a.sin(), 0.0)
            })
            .collect();
        Ok(MarkerPositions {
            base_prime: base.position - base.tangent() * design.base_band_offset(),
            base: base.position,
            intermediates,
            tip: frames[n].position,
        })
    }
}

/// Model marker positions in design order.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkerPositions {
    pub base_prime: Vector3<f64>,
    pub base: Vector3<f64>,
    pub intermediates: Vec<Vector3<f64>>,
    pub tip: Vector3<f64>,
}

impl MarkerPositions {
    /// Flattened `[b', b, 1..n, e]`.
    pub fn to_vec(&self) -> Vec<Vector3<f64>> {
        let mut v = Vec::with_capacity(self.intermediates.len() + 3);
        v.push(self.base_prime);
        v.push(self.base);
        v.extend_from_slice(&self.intermediates);
        v.push(self.tip);
        v
    }
}

/// Backbone frames with the default integrator.
pub fn propagate(c: &ModalCoefficients, base: &Pose, length: f64, step: f64) -> Result<BackbonePath> {
    Integrator::with_step(step).propagate(c, base, length)
}

/// Marker positions with the default integrator.
pub fn marker_world_positions(
    design: &CatheterDesign,
    c: &ModalCoefficients,
    sigma: f64,
    base: &Pose,
) -> Result<MarkerPositions> {
    Integrator::default().marker_positions(design, c, sigma, base)
}

/// Angle between the base and tip tangents.
pub fn tip_bend_angle(path: &BackbonePath) -> f64 {
    let a = path.base().pose().tangent();
    let b = path.tip().pose().tangent();
    a.dot(&b).clamp(-1.0, 1.0).acos()
}
