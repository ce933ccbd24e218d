//! Labeling methods composed end to end: optional registration of the atlas
//! onto the target, probability estimation, then assignment.

use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::labeling::{
    assignment_probabilities, bottom_up_assign, direct_assign, ot_match, vote_labels, LabelProbabilityTable, Labeling,
    DEFAULT_RESAMPLE_COUNT,
};
use crate::registration::{register, RegistrationConfig, RegistrationResult};
use crate::tree::VascularTree;

/// How label probabilities are estimated from the (possibly deformed) atlas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Branch matching on the undeformed atlas.
    Ot,
    /// Registration, then closest-point voting.
    Lddmm,
    /// Registration, then branch matching.
    LddmmOt,
}

impl Method {
    pub fn registers(self) -> bool {
        !matches!(self, Method::Ot)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Ot => "ot",
            Method::Lddmm => "lddmm",
            Method::LddmmOt => "lddmm+ot",
        })
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ot" => Ok(Method::Ot),
            "lddmm" => Ok(Method::Lddmm),
            "lddmm+ot" | "lddmm-ot" => Ok(Method::LddmmOt),
            _ => Err(Error::InvalidConfig("unknown method (expected ot, lddmm, lddmm+ot)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Assignment {
    Direct,
    BottomUp,
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Assignment::Direct => "direct",
            Assignment::BottomUp => "bottom-up",
        })
    }
}

impl FromStr for Assignment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Assignment::Direct),
            "bottom-up" | "bottomup" | "bottom_up" => Ok(Assignment::BottomUp),
            _ => Err(Error::InvalidConfig("unknown assignment (expected direct, bottom-up)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub registration: RegistrationConfig,
    /// Points per branch for branch matching.
    pub resample_count: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig { registration: RegistrationConfig::default(), resample_count: DEFAULT_RESAMPLE_COUNT }
    }
}

pub fn assign(table: &LabelProbabilityTable, target: &VascularTree, assignment: Assignment) -> Result<Labeling> {
    match assignment {
        Assignment::Direct => Ok(direct_assign(table)),
        Assignment::BottomUp => bottom_up_assign(table, target),
    }
}

/// Labelings of one target under every estimator and assignment, sharing a
/// single registration.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelingSet {
    pub vote_direct: Labeling,
    pub vote_bottom_up: Labeling,
    pub match_direct: Labeling,
    pub match_bottom_up: Labeling,
    /// Registration failed and the undeformed atlas was used.
    pub degraded: bool,
    pub registration: Option<RegistrationResult>,
}

impl LabelingSet {
    /// Labels produced by `method`/`assignment`. The caller decides whether
    /// the set was built with registration; `Ot` reads the matching labels.
    pub fn get(&self, method: Method, assignment: Assignment) -> &Labeling {
        match (method, assignment) {
            (Method::Lddmm, Assignment::Direct) => &self.vote_direct,
            (Method::Lddmm, Assignment::BottomUp) => &self.vote_bottom_up,
            (_, Assignment::Direct) => &self.match_direct,
            (_, Assignment::BottomUp) => &self.match_bottom_up,
        }
    }
}

fn labelings_from(atlas: &VascularTree, target: &VascularTree, count: usize) -> Result<[Labeling; 4]> {
    let votes = vote_labels(atlas, target)?;
    let matching = assignment_probabilities(&ot_match(atlas, target, count)?, atlas)?;
    Ok([
        direct_assign(&votes),
        bottom_up_assign(&votes, target)?,
        direct_assign(&matching),
        bottom_up_assign(&matching, target)?,
    ])
}

/// Labels `target` with every estimator/assignment pair. With `deform`, the
/// atlas is first registered onto the target; a failed registration falls
/// back to the undeformed atlas and sets `degraded`.
pub fn label_all(atlas: &VascularTree, target: &VascularTree, deform: bool, cfg: &PipelineConfig) -> Result<LabelingSet> {
    let (registration, degraded) = if deform {
        match register(atlas, target, &cfg.registration) {
            Ok(r) => (Some(r), false),
            Err(Error::InvalidConfig(m)) => return Err(Error::InvalidConfig(m)),
            Err(_) => (None, true),
        }
    } else {
        (None, false)
    };
    let moved = registration.as_ref().map_or(atlas, |r| &r.deformed_source);
    let [vote_direct, vote_bottom_up, match_direct, match_bottom_up] =
        labelings_from(moved, target, cfg.resample_count)?;
    Ok(LabelingSet { vote_direct, vote_bottom_up, match_direct, match_bottom_up, degraded, registration })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutcome {
    pub labeling: Labeling,
    pub degraded: bool,
}

/// Labels `target` from a labeled atlas tree with one method.
pub fn run_method(
    atlas: &VascularTree,
    target: &VascularTree,
    method: Method,
    assignment: Assignment,
    cfg: &PipelineConfig,
) -> Result<MethodOutcome> {
    let set = label_all(atlas, target, method.registers(), cfg)?;
    Ok(MethodOutcome { labeling: set.get(method, assignment).clone(), degraded: set.degraded })
}

/// Mean of a non-empty slice.
pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn std_dev(values: &[f64]) -> f64 {
    let m = mean(values);
    let v: f64 = values.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / values.len() as f64;
    num_traits::Float::sqrt(v)
}

pub(crate) fn collect_ok<T>(items: Vec<Result<T>>) -> Result<Vec<T>> {
    items.into_iter().collect()
}
