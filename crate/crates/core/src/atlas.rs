//! Iterated atlas construction.
//!
//! One iteration registers the current atlas tree onto every target in a
//! shared frame, averages the initial momenta and shoots the atlas tree
//! along the mean. Iteration 0 is the reference itself.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::labeling::{precision, Labeling};
use crate::pipeline::{collect_ok, label_all, mean, Assignment, Method, PipelineConfig};
use crate::registration::{register_in_frame, Frame, RegistrationConfig};
use crate::shooting::{shoot, MomentaField};
use crate::kernel::KernelSpec;
use crate::tree::VascularTree;

#[derive(Debug, Clone, PartialEq)]
pub struct Atlas {
    pub reference: VascularTree,
    /// Mean initial momenta of the last iteration, world units, aligned with
    /// the points of the previous atlas tree (same layout as `reference`).
    pub mean_momenta: MomentaField,
    /// Atlas tree after `iteration` averaging steps; labels of `reference`.
    pub mean_tree: VascularTree,
    pub iteration: usize,
    /// Frame shared by all registrations, fixed at the first iteration.
    pub frame: Option<Frame>,
    /// Deformation kernel in world units.
    pub kernel: Option<KernelSpec>,
}

impl Atlas {
    /// The reference used directly as the atlas.
    pub fn from_reference(reference: VascularTree) -> Self {
        Atlas {
            mean_momenta: MomentaField::zeros(reference.point_count()),
            mean_tree: reference.clone(),
            reference,
            iteration: 0,
            frame: None,
            kernel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFit {
    pub objective: f64,
    pub energy: f64,
    pub attachment: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationReport {
    pub iteration: usize,
    pub fits: Vec<TargetFit>,
    pub mean_momenta_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AtlasBuildReport {
    /// Whether the reference was found among the targets.
    pub reference_in_targets: bool,
    pub iterations: Vec<IterationReport>,
}

/// A failed build: the error and everything completed before it.
#[derive(Debug, Clone, PartialEq)]
pub struct AtlasFailure {
    pub error: Error,
    pub partial: AtlasBuildReport,
    pub last_atlas: Atlas,
}

/// Componentwise mean. Each component is summed in sorted order so the
/// result does not depend on the order of `fields`.
pub fn average_momenta(fields: &[MomentaField]) -> Result<MomentaField> {
    let first = fields.first().ok_or(Error::EmptyInput("no momenta to average"))?;
    let n = first.len();
    for f in fields {
        crate::error::check_len(n, f.len())?;
    }
    let count = fields.len() as f64;
    let mut column = Vec::with_capacity(fields.len());
    let mut avg = |get: &dyn Fn(&MomentaField) -> f64| {
        column.clear();
        column.extend(fields.iter().map(get));
        column.sort_by(f64::total_cmp);
        column.iter().sum::<f64>() / count
    };
    let momenta = (0..n)
        .map(|i| {
            crate::geometry::Vec3::new(
                avg(&|f| f.momenta[i].x),
                avg(&|f| f.momenta[i].y),
                avg(&|f| f.momenta[i].z),
            )
        })
        .collect();
    Ok(MomentaField::new(momenta))
}

/// One averaging step from `atlas`.
pub fn iterate_atlas<E: Executor>(
    atlas: &Atlas,
    targets: &[VascularTree],
    cfg: &RegistrationConfig,
    exec: &E,
) -> Result<(Atlas, IterationReport)> {
    if targets.is_empty() {
        return Err(Error::EmptyInput("atlas construction needs targets"));
    }
    let frame = match atlas.frame {
        Some(f) => f,
        None => Frame::enclosing(core::iter::once(&atlas.reference).chain(targets))?,
    };
    let results = collect_ok(exec.map(targets, |_, t| register_in_frame(&atlas.mean_tree, t, cfg, &frame)))?;
    let local: Vec<MomentaField> = results.iter().map(|r| r.local_momenta.clone()).collect();
    let mean_local = average_momenta(&local)?;
    let kernel_local = frame.local_kernel(&cfg.kernel)?;
    let points: Vec<_> = atlas.mean_tree.points().into_iter().map(|p| frame.to_local(p)).collect();
    let shot = shoot(&kernel_local, &points, &mean_local.momenta, &cfg.integrator)?;
    let world: Vec<_> = shot.final_positions().iter().map(|p| frame.to_world(*p)).collect();
    let mean_tree = atlas.mean_tree.with_points_snapped(&world)?;
    let iteration = atlas.iteration + 1;
    let report = IterationReport {
        iteration,
        fits: results
            .iter()
            .map(|r| TargetFit {
                objective: r.final_objective,
                energy: r.final_energy,
                attachment: r.final_attachment,
                line_search_failed: r.line_search_failed,
            })
            .collect(),
        mean_momenta_norm: mean_local.norm(),
    };
    let next = Atlas {
        reference: atlas.reference.clone(),
        mean_momenta: mean_local.scaled(frame.scale),
        mean_tree,
        iteration,
        frame: Some(frame),
        kernel: Some(frame.world_kernel(&cfg.kernel)?),
    };
    Ok((next, report))
}

/// Builds the iteration-`k` atlas from `reference` over `targets`.
pub fn build_atlas<E: Executor>(
    reference: &VascularTree,
    targets: &[VascularTree],
    k: usize,
    cfg: &RegistrationConfig,
    exec: &E,
) -> core::result::Result<(Atlas, AtlasBuildReport), AtlasFailure> {
    let mut report = AtlasBuildReport { reference_in_targets: targets.contains(reference), iterations: Vec::new() };
    let mut atlas = Atlas::from_reference(reference.clone());
    for _ in 0..k {
        match iterate_atlas(&atlas, targets, cfg, exec) {
            Ok((next, it)) => {
                atlas = next;
                report.iterations.push(it);
            }
            Err(error) => return Err(AtlasFailure { error, partial: report, last_atlas: atlas }),
        }
    }
    Ok((atlas, report))
}

/// Labeling procedure used to score reference candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectionStrategy {
    pub method: Method,
    pub assignment: Assignment,
}

impl Default for SelectionStrategy {
    fn default() -> Self {
        SelectionStrategy { method: Method::Lddmm, assignment: Assignment::BottomUp }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSelection {
    pub index: usize,
    /// Mean precision of each candidate over the other trees.
    pub scores: Vec<f64>,
    /// Every pair failed; the index is a fallback.
    pub degraded: bool,
}

/// Leave-one-in selection: each annotated tree labels all the others with
/// the candidate itself as atlas; the best mean precision wins, lowest index
/// on ties. Pairs whose registration fails score 0.
pub fn select_reference<E: Executor>(
    annotated: &[VascularTree],
    strategy: SelectionStrategy,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<ReferenceSelection> {
    let n = annotated.len();
    if n < 2 {
        return Err(Error::EmptyInput("reference selection needs at least two annotated trees"));
    }
    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|c| (0..n).filter(move |&t| t != c).map(move |t| (c, t))).collect();
    let outcomes = exec.map(&pairs, |_, &(c, t)| -> Result<Option<f64>> {
        let set = label_all(&annotated[c], &annotated[t], strategy.method.registers(), cfg)?;
        if set.degraded {
            return Ok(None);
        }
        let labels = set.get(strategy.method, strategy.assignment);
        Ok(Some(precision(labels, &Labeling::of_tree(&annotated[t]))?))
    });
    let outcomes = collect_ok(outcomes)?;
    let degraded = outcomes.iter().all(Option::is_none);
    let scores: Vec<f64> = (0..n)
        .map(|c| {
            let mine: Vec<f64> = pairs
                .iter()
                .zip(&outcomes)
                .filter(|((cand, _), _)| *cand == c)
                .map(|(_, o)| o.unwrap_or(0.0))
                .collect();
            mean(&mine)
        })
        .collect();
    let mut index = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s > scores[index] {
            index = i;
        }
    }
    Ok(ReferenceSelection { index, scores, degraded })
}
