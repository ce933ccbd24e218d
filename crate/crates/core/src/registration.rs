//! Diffeomorphic registration of a source tree onto a target tree.
//!
//! The unknowns are the initial momenta attached to every source point. The
//! objective is `J(p) = p^T K(q0) p + lambda * A(q(1), target)` where `q(1)`
//! is obtained by geodesic shooting and `A` is the varifold attachment. The
//! gradient is exact for the discretized map: RK4 adjoint composed with the
//! analytic attachment gradient. Optimization runs L-BFGS once per
//! attachment width, coarse to fine, each stage starting from the previous
//! stage's momenta.
//!
//! Coordinates are normalized per registration: the union of both point
//! sets is centered on its centroid and scaled to a unit bounding box.
//! Momenta, kernel width and deformed points are mapped back to world units
//! in the result; energies and attachment values are reported in normalized
//! units.

use alloc::vec;
use alloc::vec::Vec;

use crate::attachment::{attachment_gradient, current_from_points, AttachmentSpec, CurrentRepresentation};
use crate::error::{check_len, Error, Result};
use crate::geometry::{bounding_box, flatten, unflatten, Point3, Vec3};
use crate::kernel::{KernelSpec, DEFAULT_SCALE_DIVISORS};
use crate::lbfgs::{minimize, LbfgsConfig, Termination};
use crate::shooting::{path_energy, shoot, shoot_vjp, IntegratorConfig, MomentaField};
use crate::tree::VascularTree;

pub const DEFAULT_ATTACHMENT_WEIGHT: f64 = 100.0;
pub const DEFAULT_STAGES: [f64; 2] = [1.0, 0.25];

/// Deformation kernel settings. `sigma0 = None` means half the largest
/// bounding-box side of the pair being registered.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelConfig {
    pub sigma0: Option<f64>,
    pub scale_divisors: Vec<f64>,
}

impl Default for KernelConfig {
    fn default() -> Self {
        KernelConfig { sigma0: None, scale_divisors: DEFAULT_SCALE_DIVISORS.to_vec() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationConfig {
    pub kernel: KernelConfig,
    pub integrator: IntegratorConfig,
    /// Weight `lambda` of the attachment term.
    pub attachment_weight: f64,
    /// Attachment widths as fractions of `sigma0`, coarse to fine.
    pub stages: Vec<f64>,
    pub lbfgs: LbfgsConfig,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        RegistrationConfig {
            kernel: KernelConfig::default(),
            integrator: IntegratorConfig::default(),
            attachment_weight: DEFAULT_ATTACHMENT_WEIGHT,
            stages: DEFAULT_STAGES.to_vec(),
            lbfgs: LbfgsConfig::default(),
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.attachment_weight > 0.0 && self.attachment_weight.is_finite()) {
            return Err(Error::InvalidConfig("attachment weight must be positive"));
        }
        if self.stages.is_empty() {
            return Err(Error::InvalidConfig("at least one attachment stage is required"));
        }
        if self.stages.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("attachment stage widths must be positive"));
        }
        if self.stages.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidConfig("attachment stages must be strictly decreasing"));
        }
        if self.integrator.steps == 0 {
            return Err(Error::InvalidConfig("integrator needs at least one step"));
        }
        if self.lbfgs.memory == 0 {
            return Err(Error::InvalidConfig("L-BFGS memory must be positive"));
        }
        let l = &self.lbfgs;
        if [l.grad_rtol, l.grad_atol, l.ftol].iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return Err(Error::InvalidConfig("L-BFGS tolerances must be non-negative"));
        }
        if !(0.0 < l.c1 && l.c1 < l.c2 && l.c2 < 1.0) {
            return Err(Error::InvalidConfig("line search needs 0 < c1 < c2 < 1"));
        }
        if l.max_line_search == 0 {
            return Err(Error::InvalidConfig("line search needs at least one evaluation"));
        }
        if let Some(s) = self.kernel.sigma0 {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig("sigma0 must be positive"));
            }
        }
        KernelSpec::new(1.0, self.kernel.scale_divisors.clone())?;
        Ok(())
    }
}

/// Similarity normalizing world coordinates: `x_n = (x - center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub center: Vec3,
    pub scale: f64,
}

impl Frame {
    /// Centroid and largest bounding-box side of the union of the inputs.
    pub fn enclosing<'a>(trees: impl IntoIterator<Item = &'a VascularTree>) -> Result<Frame> {
        let mut sum = Vec3::ZERO;
        let mut count = 0usize;
        let mut bbox: Option<(Vec3, Vec3)> = None;
        for t in trees {
            for b in t.branches() {
                for p in &b.points {
                    sum += *p;
                    count += 1;
                }
                if let Some((lo, hi)) = bounding_box(&b.points) {
                    bbox = Some(match bbox {
                        None => (lo, hi),
                        Some((l, h)) => (l.component_min(lo), h.component_max(hi)),
                    });
                }
            }
        }
        let (lo, hi) = bbox.ok_or(Error::EmptyInput("no points to frame"))?;
        let scale = (hi - lo).max_component();
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidConfig("degenerate bounding box"));
        }
        Ok(Frame { center: sum * (1.0 / count as f64), scale })
    }

    pub fn to_local(&self, p: Point3) -> Point3 {
        (p - self.center) * (1.0 / self.scale)
    }

    pub fn to_world(&self, p: Point3) -> Point3 {
        p * self.scale + self.center
    }

    /// Kernel in normalized units.
    pub fn local_kernel(&self, cfg: &KernelConfig) -> Result<KernelSpec> {
        let sigma = cfg.sigma0.map_or(0.5, |s| s / self.scale);
        KernelSpec::new(sigma, cfg.scale_divisors.clone())
    }

    /// Kernel in world units.
    pub fn world_kernel(&self, cfg: &KernelConfig) -> Result<KernelSpec> {
        let sigma = cfg.sigma0.unwrap_or(0.5 * self.scale);
        KernelSpec::new(sigma, cfg.scale_divisors.clone())
    }
}

/// Objective terms at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub value: f64,
    pub energy: f64,
    pub attachment: f64,
    pub gradient: Vec<Vec3>,
    pub deformed: Vec<Point3>,
}

/// One attachment stage of a registration in normalized coordinates.
#[derive(Debug, Clone)]
pub struct RegistrationProblem {
    kernel: KernelSpec,
    integrator: IntegratorConfig,
    points: Vec<Point3>,
    segments: Vec<(usize, usize)>,
    target: CurrentRepresentation,
    attachment: AttachmentSpec,
    weight: f64,
}

impl RegistrationProblem {
    /// Builds the problem from raw normalized data.
    pub fn new(
        kernel: KernelSpec,
        integrator: IntegratorConfig,
        points: Vec<Point3>,
        segments: Vec<(usize, usize)>,
        target: CurrentRepresentation,
        attachment: AttachmentSpec,
        weight: f64,
    ) -> Result<Self> {
        current_from_points(&points, &segments)?;
        if target.is_empty() {
            return Err(Error::EmptyInput("target has no segments"));
        }
        Ok(RegistrationProblem { kernel, integrator, points, segments, target, attachment, weight })
    }

    /// Problem for `source -> target` at stage width `stage * sigma0`, in
    /// `frame` coordinates.
    pub fn from_trees(
        source: &VascularTree,
        target: &VascularTree,
        cfg: &RegistrationConfig,
        frame: &Frame,
        stage: f64,
    ) -> Result<Self> {
        let kernel = frame.local_kernel(&cfg.kernel)?;
        let points: Vec<Point3> = source.points().into_iter().map(|p| frame.to_local(p)).collect();
        let tpoints: Vec<Point3> = target.points().into_iter().map(|p| frame.to_local(p)).collect();
        let target_current = current_from_points(&tpoints, &target.segments())?;
        let attachment = AttachmentSpec::new(stage * kernel.sigma0())?;
        Self::new(kernel, cfg.integrator, points, source.segments(), target_current, attachment, cfg.attachment_weight)
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    /// `J(p)` and `dJ/dp`.
    pub fn evaluate(&self, momenta: &[Vec3]) -> Result<Evaluation> {
        check_len(self.points.len(), momenta.len())?;
        let energy = path_energy(&self.kernel, &self.points, momenta)?;
        let shot = shoot(&self.kernel, &self.points, momenta, &self.integrator)?;
        let deformed = shot.final_positions().to_vec();
        let (attachment, ga) = attachment_gradient(&self.attachment, &deformed, &self.segments, &self.target)?;
        let cot_q: Vec<Vec3> = ga.iter().map(|g| *g * self.weight).collect();
        let (_, gp) = shoot_vjp(&self.kernel, &shot, &cot_q, &vec![Vec3::ZERO; momenta.len()])?;
        let kp = self.kernel.self_matvec(&self.points, momenta)?;
        let gradient = kp.iter().zip(&gp).map(|(k, g)| *k * 2.0 + *g).collect();
        Ok(Evaluation { value: energy + self.weight * attachment, energy, attachment, gradient, deformed })
    }
}

/// Objective and gradient for `source -> target` at stage index `stage`,
/// with momenta expressed in the pair's normalized frame.
pub fn objective_and_gradient(
    source: &VascularTree,
    target: &VascularTree,
    momenta: &MomentaField,
    cfg: &RegistrationConfig,
    stage: usize,
) -> Result<(f64, Vec<Vec3>)> {
    cfg.validate()?;
    let width = *cfg.stages.get(stage).ok_or(Error::IndexOutOfRange { index: stage, len: cfg.stages.len() })?;
    let frame = Frame::enclosing([source, target])?;
    let problem = RegistrationProblem::from_trees(source, target, cfg, &frame, width)?;
    let e = problem.evaluate(&momenta.momenta)?;
    Ok((e.value, e.gradient))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub width: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistrationResult {
    /// Initial momenta in world units, aligned with the source points.
    pub momenta: MomentaField,
    /// Initial momenta in the normalized frame.
    pub local_momenta: MomentaField,
    /// Deformation kernel in world units.
    pub kernel: KernelSpec,
    pub frame: Frame,
    pub deformed_source: VascularTree,
    /// Objective values of all stages, start point and accepted steps.
    pub objective_trace: Vec<f64>,
    pub final_objective: f64,
    pub final_energy: f64,
    pub final_attachment: f64,
    pub stages: Vec<StageReport>,
    /// Set when some stage stopped on a failed line search.
    pub line_search_failed: bool,
}

/// Registers `source` onto `target` in the frame enclosing both.
pub fn register(source: &VascularTree, target: &VascularTree, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    let frame = Frame::enclosing([source, target])?;
    register_in_frame(source, target, cfg, &frame)
}

/// Registers in a caller-provided frame so that momenta of several
/// registrations share one kernel and can be averaged.
pub fn register_in_frame(
    source: &VascularTree,
    target: &VascularTree,
    cfg: &RegistrationConfig,
    frame: &Frame,
) -> Result<RegistrationResult> {
    cfg.validate()?;
    let n = source.point_count();
    let mut x = vec![0.0; 3 * n];
    let mut trace = Vec::new();
    let mut reports = Vec::with_capacity(cfg.stages.len());
    let mut last: Option<Evaluation> = None;
    for &width in &cfg.stages {
        let problem = RegistrationProblem::from_trees(source, target, cfg, frame, width)?;
        let objective = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
            let e = problem.evaluate(&unflatten(flat))?;
            Ok((e.value, flatten(&e.gradient)))
        };
        let out = minimize(objective, x, &cfg.lbfgs)?;
        if !out.value.is_finite() {
            return Err(Error::NonFinite { step: 0 });
        }
        trace.extend_from_slice(&out.trace);
        reports.push(StageReport {
            width,
            iterations: out.iterations,
            evaluations: out.evaluations,
            termination: out.termination,
            objective: out.value,
        });
        x = out.x;
        if cfg.stages.last() == Some(&width) {
            last = Some(problem.evaluate(&unflatten(&x))?);
        }
    }
    let last = last.expect("at least one stage");
    let local = MomentaField::new(unflatten(&x));
    let world_points: Vec<Point3> = last.deformed.iter().map(|p| frame.to_world(*p)).collect();
    let deformed_source = source.with_points_snapped(&world_points)?;
    Ok(RegistrationResult {
        momenta: local.scaled(frame.scale),
        local_momenta: local,
        kernel: frame.world_kernel(&cfg.kernel)?,
        frame: *frame,
        deformed_source,
        objective_trace: trace,
        final_objective: last.value,
        final_energy: last.energy,
        final_attachment: last.attachment,
        line_search_failed: reports.iter().any(|r| r.termination == Termination::LineSearchFailed),
        stages: reports,
    })
}

/// Deforms every point of `tree` by shooting along `momenta` (world units).
/// Topology and labels are kept.
pub fn deform_tree(
    tree: &VascularTree,
    kernel: &KernelSpec,
    momenta: &MomentaField,
    integrator: &IntegratorConfig,
) -> Result<VascularTree> {
    let shot = shoot(kernel, &tree.points(), &momenta.momenta, integrator)?;
    Ok(tree.with_points_snapped(shot.final_positions())?)
}
