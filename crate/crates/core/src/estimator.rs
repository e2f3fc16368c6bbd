//! Shape and roll estimation from reconstructed markers.
//!
//! The cost is half the weighted squared distance between reconstructed
//! and modeled markers plus optional damping toward prior coefficients
//! and roll. Shape and roll are solved alternately: a damped least-squares
//! solve over the coefficients with roll held fixed, then a one-dimensional
//! Newton solve over roll with the backbone held fixed.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::design::CatheterDesign;
use crate::error::{Error, Result};
use crate::kinematics::{Integrator, ModalCoefficients, Pose};
use crate::reconstruction::OrderedMarkerSet;

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Inner least-squares solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InnerSolver {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Forward-difference step for the Jacobian, in coefficient units.
    pub jacobian_step: f64,
}

impl Default for InnerSolver {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-12,
            jacobian_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub tip_weight: f64,
    pub intermediate_weight: f64,
    pub shape_damping: f64,
    pub roll_damping: f64,
    pub prior_coefficients: Option<ModalCoefficients>,
    pub prior_roll: f64,
    pub shape_tolerance: f64,
    pub roll_tolerance: f64,
    pub max_outer_iterations: usize,
    /// Number of equispaced roll seeds tried on the first outer iteration
    /// of a cold start.
    pub roll_starts: usize,
    /// Stages of the base-to-tip continuation guess tried on a cold
    /// start; values below 2 disable it.
    pub continuation_stages: usize,
    /// Damping toward zero coefficients within continuation stages.
    pub continuation_damping: f64,
    pub inner: InnerSolver,
    pub integrator: Integrator,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            tip_weight: 10.0,
            intermediate_weight: 1.0,
            shape_damping: 0.0,
            roll_damping: 0.0,
            prior_coefficients: None,
            prior_roll: 0.0,
            shape_tolerance: 1e-6,
            roll_tolerance: 1e-6,
            max_outer_iterations: 50,
            roll_starts: 8,
            continuation_stages: 4,
            continuation_damping: 10.0,
            inner: InnerSolver::default(),
            integrator: Integrator::default(),
        }
    }
}

/// Damping applied once priors from earlier frames exist.
pub const PRIOR_DAMPING: f64 = 1e-3;

/// Frames averaged into the damping priors.
pub const PRIOR_WINDOW: usize = 5;

impl EstimatorConfig {
    /// Damps toward the given priors with the default damping factors.
    pub fn with_prior(mut self, coefficients: ModalCoefficients, roll: f64) -> Self {
        self.prior_coefficients = Some(coefficients);
        self.prior_roll = roll;
        self.shape_damping = PRIOR_DAMPING;
        self.roll_damping = PRIOR_DAMPING;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.tip_weight) {
            return Err(Error::config("estimator.tip_weight", "must be positive"));
        }
        if !positive(self.intermediate_weight) {
            return Err(Error::config("estimator.intermediate_weight", "must be positive"));
        }
        if !(self.shape_damping >= 0.0) || !(self.roll_damping >= 0.0) {
            return Err(Error::config("estimator.damping", "must be non-negative"));
        }
        if !positive(self.shape_tolerance) || !positive(self.roll_tolerance) {
            return Err(Error::config("estimator.tolerance", "must be positive"));
        }
        if self.max_outer_iterations == 0 {
            return Err(Error::config("estimator.max_outer_iterations", "must be at least 1"));
        }
        if !positive(self.inner.jacobian_step) {
            return Err(Error::config("estimator.inner.jacobian_step", "must be positive"));
        }
        Ok(())
    }
}

/// Moving average of recent estimates used as damping priors.
#[derive(Debug, Clone)]
pub struct PriorWindow {
    capacity: usize,
    history: std::collections::VecDeque<(Vec<f64>, f64)>,
}

impl PriorWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            history: Default::default(),
        }
    }

    pub fn push(&mut self, estimate: &PoseEstimate) {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history
            .push_back((estimate.coefficients.stacked(), estimate.roll));
    }

    /// Mean coefficients and circular-mean roll, if any frames were seen.
    pub fn prior(&self) -> Option<(ModalCoefficients, f64)> {
        let (first, _) = self.history.front()?;
        let k = self.history.len() as f64;
        let mut mean = vec![0.0; first.len()];
        let (mut sx, mut sy) = (0.0, 0.0);
        for (c, r) in &self.history {
            for (m, v) in mean.iter_mut().zip(c) {
                *m += v / k;
            }
            sx += r.cos();
            sy += r.sin();
        }
        let c = ModalCoefficients::from_stacked(first.len() / 2, &mean).ok()?;
        Some((c, sy.atan2(sx)))
    }

    /// Configuration for the next frame: damped when priors exist.
    pub fn configure(&self, base: &EstimatorConfig) -> EstimatorConfig {
        match self.prior() {
            Some((c, r)) => base.clone().with_prior(c, r),
            None => base.clone(),
        }
    }
}

impl Default for PriorWindow {
    fn default() -> Self {
        Self::new(PRIOR_WINDOW)
    }
}

/// Stacked weighted residual vector and the corresponding cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    /// Rows: present intermediates (3 each), tip (3), then damping rows.
    pub vector: Vec<f64>,
    pub cost: f64,
}

/// Precomputed view of one estimation problem.
struct Problem<'a> {
    markers: &'a OrderedMarkerSet,
    design: &'a CatheterDesign,
    cfg: &'a EstimatorConfig,
    base: Pose,
    present: Vec<usize>,
    queries: Vec<f64>,
    with_tip: bool,
}

impl<'a> Problem<'a> {
    fn new(markers: &'a OrderedMarkerSet, design: &'a CatheterDesign, cfg: &'a EstimatorConfig) -> Result<Self> {
        if markers.intermediates.len() != design.marker_count() {
            return Err(Error::LengthMismatch {
                left: markers.intermediates.len(),
                right: design.marker_count(),
            });
        }
        let present: Vec<usize> = (0..design.marker_count())
            .filter(|&i| markers.intermediates[i].is_some())
            .collect();
        let mut queries: Vec<f64> = present.iter().map(|&i| design.arc_lengths()[i]).collect();
        queries.push(design.length());
        Ok(Self {
            markers,
            design,
            cfg,
            base: markers.base_pose()?,
            present,
            queries,
            with_tip: true,
        })
    }

    /// Sub-problem over the markers up to arc-length `s_max`, without the
    /// tip, under a different configuration.
    fn truncated<'b>(&self, s_max: f64, cfg: &'b EstimatorConfig) -> Problem<'b>
    where
        'a: 'b,
    {
        let present: Vec<usize> = self
            .present
            .iter()
            .copied()
            .filter(|&i| self.design.arc_lengths()[i] <= s_max)
            .collect();
        let mut queries: Vec<f64> = present.iter().map(|&i| self.design.arc_lengths()[i]).collect();
        queries.push(self.design.length());
        Problem {
            present,
            queries,
            with_tip: false,
            markers: self.markers,
            design: self.design,
            cfg,
            base: self.base,
        }
    }

    fn marker_rows(&self) -> usize {
        3 * (self.present.len() + usize::from(self.with_tip))
    }

    fn prior_c(&self, order: usize) -> Vec<f64> {
        match &self.cfg.prior_coefficients {
            Some(p) if p.order() == order => p.stacked(),
            _ => vec![0.0; 2 * order],
        }
    }

    fn frames(&self, c: &ModalCoefficients) -> Result<Vec<Pose>> {
        self.cfg
            .integrator
            .frames_at(c, &self.base, self.design.length(), &self.queries)
    }

    fn offset(&self, frame: &Pose, beta: f64, sigma: f64) -> Vector3<f64> {
        let r = self.design.radius();
        let a = beta + sigma;
        frame.rotation * Vector3::new(r * a.cos(), r * a.sin(), 0.0)
    }

    /// Weighted marker residual rows `sqrt(w) (p_hat - p_model)`.
    fn marker_residuals(&self, c: &ModalCoefficients, sigma: f64, out: &mut Vec<f64>) -> Result<()> {
        let frames = self.frames(c)?;
        let wi = self.cfg.intermediate_weight.sqrt();
        for (k, &i) in self.present.iter().enumerate() {
            let f = &frames[k];
            let model = f.position + self.offset(f, self.design.angles()[i], sigma);
            let e = self.markers.intermediates[i].expect("present") - model;
            out.extend(e.iter().map(|v| wi * v));
        }
        if self.with_tip {
            let wt = self.cfg.tip_weight.sqrt();
            let e = self.markers.tip - frames[self.present.len()].position;
            out.extend(e.iter().map(|v| wt * v));
        }
        Ok(())
    }

    fn damping_residuals(&self, c: &ModalCoefficients, sigma: f64, out: &mut Vec<f64>) {
        let zc = self.cfg.shape_damping.sqrt();
        let prior = self.prior_c(c.order());
        out.extend(c.stacked().iter().zip(&prior).map(|(v, p)| zc * (v - p)));
        out.push(self.cfg.roll_damping.sqrt() * wrap_angle(sigma - self.cfg.prior_roll));
    }

    fn residuals(&self, c: &ModalCoefficients, sigma: f64) -> Result<Residuals> {
        let mut v = Vec::with_capacity(self.marker_rows() + 2 * c.order() + 1);
        self.marker_residuals(c, sigma, &mut v)?;
        self.damping_residuals(c, sigma, &mut v);
        let cost = 0.5 * v.iter().map(|x| x * x).sum::<f64>();
        Ok(Residuals { vector: v, cost })
    }

    fn cost(&self, c: &ModalCoefficients, sigma: f64) -> Result<f64> {
        Ok(self.residuals(c, sigma)?.cost)
    }
}

/// Stacked residuals and cost of `(c, sigma)` against `markers`.
pub fn residuals(
    c: &ModalCoefficients,
    sigma: f64,
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    cfg: &EstimatorConfig,
) -> Result<Residuals> {
    Problem::new(markers, design, cfg)?.residuals(c, sigma)
}

/// Analytic gradient of the damping terms with respect to `[c, sigma]`.
pub fn damping_gradient(c: &ModalCoefficients, sigma: f64, cfg: &EstimatorConfig) -> Vec<f64> {
    let prior = match &cfg.prior_coefficients {
        Some(p) if p.order() == c.order() => p.stacked(),
        _ => vec![0.0; 2 * c.order()],
    };
    let mut g: Vec<f64> = c
        .stacked()
        .iter()
        .zip(&prior)
        .map(|(v, p)| cfg.shape_damping * (v - p))
        .collect();
    g.push(cfg.roll_damping * wrap_angle(sigma - cfg.prior_roll));
    g
}

/// Gradient of the full cost with respect to `[c, sigma]`: central
/// differences for the marker terms plus the analytic damping gradient.
pub fn cost_gradient(
    c: &ModalCoefficients,
    sigma: f64,
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    cfg: &EstimatorConfig,
    step: f64,
) -> Result<Vec<f64>> {
    let undamped = EstimatorConfig {
        shape_damping: 0.0,
        roll_damping: 0.0,
        ..cfg.clone()
    };
    let p = Problem::new(markers, design, &undamped)?;
    let x = c.stacked();
    let order = c.order();
    let mut g = Vec::with_capacity(x.len() + 1);
    for j in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[j] += step;
        lo[j] -= step;
        let fh = p.cost(&ModalCoefficients::from_stacked(order, &hi)?, sigma)?;
        let fl = p.cost(&ModalCoefficients::from_stacked(order, &lo)?, sigma)?;
        g.push((fh - fl) / (2.0 * step));
    }
    g.push((p.cost(c, sigma + step)? - p.cost(c, sigma - step)?) / (2.0 * step));
    for (gi, di) in g.iter_mut().zip(damping_gradient(c, sigma, cfg)) {
        *gi += di;
    }
    Ok(g)
}

/// Outcome of one inner shape solve.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSolve {
    pub coefficients: ModalCoefficients,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn check_identifiable(p: &Problem<'_>, order: usize) -> Result<()> {
    let rows = p.marker_rows();
    if rows < 2 * order {
        return Err(Error::NotIdentifiable {
            rows,
            params: 2 * order,
        });
    }
    Ok(())
}

fn shape_solve(p: &Problem<'_>, sigma: f64, c0: &ModalCoefficients) -> Result<ShapeSolve> {
    let order = c0.order();
    check_identifiable(p, order)?;
    let settings = p.cfg.inner;
    let n = 2 * order;
    let eval = |x: &[f64]| -> Result<Residuals> { p.residuals(&ModalCoefficients::from_stacked(order, x)?, sigma) };

    let mut x = c0.stacked();
    let mut r = eval(&x)?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < settings.max_iterations {
        iterations += 1;
        let m = r.vector.len();
        let mut jac = DMatrix::<f64>::zeros(m, n);
        for j in 0..n {
            let mut xp = x.clone();
            let h = settings.jacobian_step;
            xp[j] += h;
            let rp = eval(&xp)?;
            for i in 0..m {
                jac[(i, j)] = (rp.vector[i] - r.vector[i]) / h;
            }
        }
        let rv = DVector::from_column_slice(&r.vector);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * &rv;
        if grad.amax() <= settings.gradient_tolerance {
            converged = true;
            break;
        }
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = jtj.clone();
            for d in 0..n {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-9);
            }
            let Some(chol) = a.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let delta = chol.solve(&(-&grad));
            let xn: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            let rn = eval(&xn)?;
            if rn.cost < r.cost {
                let small = delta.norm() <= 1e-12 * (1e-12 + DVector::from_column_slice(&x).norm());
                let flat = r.cost - rn.cost <= 1e-15 * r.cost.max(1e-300);
                x = xn;
                r = rn;
                lambda = (lambda / 3.0).max(1e-12);
                accepted = true;
                if small || flat {
                    converged = true;
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            // no descent direction left at machine precision
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    Ok(ShapeSolve {
        coefficients: ModalCoefficients::from_stacked(order, &x)?,
        cost: r.cost,
        iterations,
        converged,
    })
}

/// Minimizes the cost over the coefficients with roll held fixed.
pub fn solve_shape(
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    sigma: f64,
    cfg: &EstimatorConfig,
    c0: &ModalCoefficients,
) -> Result<ShapeSolve> {
    shape_solve(&Problem::new(markers, design, cfg)?, sigma, c0)
}

/// Roll subproblem with the backbone frames fixed.
struct RollProblem {
    /// `(frame rotation, measured minus backbone position, helix angle)`
    terms: Vec<(Matrix3<f64>, Vector3<f64>, f64)>,
    radius: f64,
    weight: f64,
    damping: f64,
    prior: f64,
}

impl RollProblem {
    fn new(p: &Problem<'_>, c: &ModalCoefficients) -> Result<Self> {
        if p.present.is_empty() {
            return Err(Error::RollUnobservable);
        }
        let frames = p.frames(c)?;
        let terms = p
            .present
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let f = &frames[k];
                let d = p.markers.intermediates[i].expect("present") - f.position;
                (f.rotation, d, p.design.angles()[i])
            })
            .collect();
        Ok(Self {
            terms,
            radius: p.design.radius(),
            weight: p.cfg.intermediate_weight,
            damping: p.cfg.roll_damping,
            prior: p.cfg.prior_roll,
        })
    }

    /// Cost (up to a constant), first and second derivative.
    fn eval(&self, sigma: f64) -> (f64, f64, f64) {
        let r = self.radius;
        let (mut f, mut g, mut h) = (0.0, 0.0, 0.0);
        for (rot, d, beta) in &self.terms {
            let (s, c) = (beta + sigma).sin_cos();
            let q = rot * Vector3::new(r * c, r * s, 0.0);
            let dq = rot * Vector3::new(-r * s, r * c, 0.0);
            let e = d - q;
            f += 0.5 * self.weight * e.norm_squared();
            g -= self.weight * e.dot(&dq);
            // d2q = -q
            h += self.weight * (dq.norm_squared() + e.dot(&q));
        }
        let delta = wrap_angle(sigma - self.prior);
        f += 0.5 * self.damping * delta * delta;
        g += self.damping * delta;
        h += self.damping;
        (f, g, h)
    }

    /// Damped Newton from `sigma0`; never increases the cost.
    fn descend(&self, sigma0: f64) -> (f64, f64) {
        let mut sigma = sigma0;
        let (mut f, mut g, mut h) = self.eval(sigma);
        let gn = self.weight * self.terms.len() as f64 * self.radius * self.radius + self.damping;
        for _ in 0..100 {
            let curvature = if h > 1e-12 { h } else { gn.max(1e-12) };
            let mut step = -g / curvature;
            step = step.clamp(-0.5, 0.5);
            let mut moved = false;
            for _ in 0..40 {
                let trial = sigma + step;
                let (ft, gt, ht) = self.eval(trial);
                if ft <= f {
                    let done = step.abs() < 1e-13 || (f - ft) <= 1e-16 * f.max(1e-300) && step.abs() < 1e-9;
                    sigma = trial;
                    f = ft;
                    g = gt;
                    h = ht;
                    moved = true;
                    if done {
                        return (wrap_angle(sigma), f);
                    }
                    break;
                }
                step *= 0.5;
            }
            if !moved {
                break;
            }
        }
        (wrap_angle(sigma), f)
    }
}

/// Outcome of one roll solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RollSolve {
    pub roll: f64,
    /// Roll-dependent part of the cost at the solution.
    pub partial_cost: f64,
}

fn roll_solve(p: &Problem<'_>, c: &ModalCoefficients, sigma0: f64, starts: usize) -> Result<RollSolve> {
    let rp = RollProblem::new(p, c)?;
    let mut best = rp.descend(sigma0);
    for k in 0..starts {
        let seed = -PI + 2.0 * PI * (k as f64 + 0.5) / starts as f64;
        let cand = rp.descend(seed);
        if cand.1 < best.1 {
            best = cand;
        }
    }
    Ok(RollSolve {
        roll: best.0,
        partial_cost: best.1,
    })
}

/// Minimizes the cost over roll with the coefficients held fixed.
/// `starts` extra equispaced seeds are tried in addition to `sigma0`.
pub fn solve_roll(
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    c: &ModalCoefficients,
    cfg: &EstimatorConfig,
    sigma0: f64,
    starts: usize,
) -> Result<RollSolve> {
    roll_solve(&Problem::new(markers, design, cfg)?, c, sigma0, starts)
}

/// Result of the alternating estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseEstimate {
    pub coefficients: ModalCoefficients,
    /// Roll in (-pi, pi].
    pub roll: f64,
    pub final_cost: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Distance between each reconstructed and modeled intermediate
    /// marker, mm (`None` for missing markers).
    pub marker_residuals: Vec<Option<f64>>,
    pub tip_residual: f64,
    /// Cost at the start and after every shape and roll solve.
    pub cost_trace: Vec<f64>,
}

impl PoseEstimate {
    /// True when no solve raised the cost by more than `tol`.
    pub fn is_monotone(&self, tol: f64) -> bool {
        self.cost_trace.windows(2).all(|w| w[1] <= w[0] + tol)
    }
}

struct Alternation {
    c: ModalCoefficients,
    sigma: f64,
    trace: Vec<f64>,
    outer: usize,
    converged: bool,
}

fn alternate(p: &Problem<'_>, c0: &ModalCoefficients, sigma0: f64, first_starts: usize) -> Result<Alternation> {
    let cfg = p.cfg;
    let mut c = c0.clone();
    let mut sigma = wrap_angle(sigma0);
    let mut trace = vec![p.cost(&c, sigma)?];
    let mut converged = false;
    let mut outer = 0;
    while outer < cfg.max_outer_iterations {
        let starts = if outer == 0 { first_starts } else { 0 };
        outer += 1;
        let shape = shape_solve(p, sigma, &c)?;
        trace.push(shape.cost);
        let roll = roll_solve(p, &shape.coefficients, sigma, starts)?;
        let dc = DVector::from_vec(shape.coefficients.stacked()) - DVector::from_vec(c.stacked());
        let ds = wrap_angle(roll.roll - sigma).abs();
        c = shape.coefficients;
        sigma = roll.roll;
        trace.push(p.cost(&c, sigma)?);
        if dc.norm() <= cfg.shape_tolerance && ds <= cfg.roll_tolerance {
            converged = true;
            break;
        }
    }
    Ok(Alternation {
        c,
        sigma,
        trace,
        outer,
        converged,
    })
}

/// Initial guess grown from the base: shape and roll are fitted to the
/// markers within a window that extends toward the tip in equal steps,
/// each stage starting from the previous one.
fn continuation_start(p: &Problem<'_>, order: usize, starts: usize) -> Result<(ModalCoefficients, f64)> {
    let stages = p.cfg.continuation_stages;
    // partial windows leave distal modes weakly determined
    let stage_cfg = EstimatorConfig {
        shape_damping: p.cfg.continuation_damping,
        roll_damping: 0.0,
        prior_coefficients: None,
        ..p.cfg.clone()
    };
    let mut c = ModalCoefficients::zeros(order);
    let mut sigma = 0.0;
    let mut seeded = false;
    for k in 1..stages {
        let sub = p.truncated(p.design.length() * k as f64 / stages as f64, &stage_cfg);
        if sub.present.is_empty() || sub.marker_rows() < 2 * order {
            continue;
        }
        c = shape_solve(&sub, sigma, &c)?.coefficients;
        sigma = roll_solve(&sub, &c, sigma, if seeded { 0 } else { starts })?.roll;
        seeded = true;
    }
    Ok((c, sigma))
}

/// Alternates shape and roll solves from `(c0, sigma0)`.
///
/// Without a roll prior, equispaced roll seeds are tried on the first
/// outer iteration since the roll cost is periodic. A cold start from zero
/// coefficients additionally runs the alternation from a base-to-tip
/// continuation guess and keeps whichever run ends at the lower cost.
pub fn estimate(
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    cfg: &EstimatorConfig,
    c0: &ModalCoefficients,
    sigma0: f64,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let p = Problem::new(markers, design, cfg)?;
    check_identifiable(&p, c0.order())?;
    if p.present.is_empty() {
        return Err(Error::RollUnobservable);
    }
    let cold = cfg.roll_damping == 0.0;
    let starts = if cold { cfg.roll_starts } else { 0 };
    let mut best = alternate(&p, c0, sigma0, starts)?;
    if cold && c0.norm() == 0.0 && cfg.continuation_stages > 1 {
        let (c1, s1) = continuation_start(&p, c0.order(), starts)?;
        let run = alternate(&p, &c1, s1, starts)?;
        if run.trace.last() < best.trace.last() {
            best = run;
        }
    }
    let Alternation {
        c,
        sigma,
        trace,
        outer,
        converged,
    } = best;

    let frames = p.frames(&c)?;
    let mut marker_residuals = vec![None; design.marker_count()];
    for (k, &i) in p.present.iter().enumerate() {
        let f = &frames[k];
        let model = f.position + p.offset(f, design.angles()[i], sigma);
        marker_residuals[i] = Some((markers.intermediates[i].expect("present") - model).norm());
    }
    let tip_residual = (markers.tip - frames[p.present.len()].position).norm();
    Ok(PoseEstimate {
        coefficients: c,
        roll: sigma,
        final_cost: *trace.last().expect("non-empty"),
        outer_iterations: outer,
        converged,
        marker_residuals,
        tip_residual,
        cost_trace: trace,
    })
}

/// Cold-start estimate from zero coefficients and zero roll.
pub fn estimate_cold(
    markers: &OrderedMarkerSet,
    design: &CatheterDesign,
    order: usize,
    cfg: &EstimatorConfig,
) -> Result<PoseEstimate> {
    estimate(markers, design, cfg, &ModalCoefficients::zeros(order), 0.0)
}
