//! Evaluation protocols: cross-validated precision against training size,
//! and precision of one atlas across averaging iterations.
//!
//! Reports carry no timing data so that the files written from them are
//! reproducible byte for byte; durations go to the log.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use vesselatlas_core::atlas::{build_atlas, iterate_atlas, select_reference, Atlas, SelectionStrategy};
use vesselatlas_core::exec::Executor;
use vesselatlas_core::labeling::{bottom_up_violations, precision, Labeling};
use vesselatlas_core::pipeline::{label_all, mean, std_dev, Assignment, LabelingSet, Method, PipelineConfig};
use vesselatlas_core::{Error, VascularTree};

use crate::io::RegistrationConfigDoc;

pub const DEFAULT_FRACTIONS: [f64; 5] = [0.02, 0.1, 0.2, 0.4, 0.8];
pub const DEFAULT_REPETITIONS: usize = 10;

/// `OT`, `LDDMM-k` or `LDDMM-k+OT`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct MethodSpec {
    pub method: Method,
    /// Atlas averaging iterations; 0 for `OT`.
    pub k: usize,
}

impl MethodSpec {
    pub const OT: MethodSpec = MethodSpec { method: Method::Ot, k: 0 };

    pub fn lddmm(k: usize) -> Self {
        MethodSpec { method: Method::Lddmm, k }
    }

    pub fn lddmm_ot(k: usize) -> Self {
        MethodSpec { method: Method::LddmmOt, k }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.method {
            Method::Ot => f.write_str("OT"),
            Method::Lddmm => write!(f, "LDDMM-{}", self.k),
            Method::LddmmOt => write!(f, "LDDMM-{}+OT", self.k),
        }
    }
}

impl FromStr for MethodSpec {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let upper = s.trim().to_ascii_uppercase();
        if upper == "OT" {
            return Ok(MethodSpec::OT);
        }
        let bad = || format!("unknown method `{s}` (expected OT, LDDMM-k or LDDMM-k+OT)");
        let rest = upper.strip_prefix("LDDMM-").ok_or_else(bad)?;
        let (digits, method) = match rest.strip_suffix("+OT") {
            Some(d) => (d, Method::LddmmOt),
            None => (rest, Method::Lddmm),
        };
        let k = digits.parse().map_err(|_| bad())?;
        Ok(MethodSpec { method, k })
    }
}

impl TryFrom<String> for MethodSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<MethodSpec> for String {
    fn from(m: MethodSpec) -> String {
        m.to_string()
    }
}

/// `direct` or `bottom-up`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct AssignmentSpec(pub Assignment);

impl TryFrom<String> for AssignmentSpec {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse().map(AssignmentSpec).map_err(|e: Error| e.to_string())
    }
}

impl From<AssignmentSpec> for String {
    fn from(a: AssignmentSpec) -> String {
        a.0.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AtlasScope {
    /// Atlas averaged over the training trees only.
    Train,
    /// Atlas averaged over the whole dataset, test trees included.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceRule {
    /// Best training tree at labeling the other training trees.
    LeaveOneIn,
    /// First training tree (lowest dataset index).
    First,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    CrossValidation,
    /// Precision of one atlas for `k = 0..=k_max`.
    Iterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSpec {
    pub protocol: Protocol,
    pub method: MethodSpec,
    pub assignment: AssignmentSpec,
    pub fractions: Vec<f64>,
    pub repetitions: usize,
    pub seed: u64,
    pub atlas_scope: AtlasScope,
    pub reference: ReferenceRule,
    /// Method used to score reference candidates.
    pub selection_method: MethodSpec,
    /// Iteration protocol only.
    pub reference_index: usize,
    /// Iteration protocol only.
    pub k_max: usize,
    pub resample_count: usize,
    pub registration: RegistrationConfigDoc,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            protocol: Protocol::CrossValidation,
            method: MethodSpec::lddmm_ot(1),
            assignment: AssignmentSpec(Assignment::BottomUp),
            fractions: DEFAULT_FRACTIONS.to_vec(),
            repetitions: DEFAULT_REPETITIONS,
            seed: 0,
            atlas_scope: AtlasScope::Train,
            reference: ReferenceRule::LeaveOneIn,
            selection_method: MethodSpec::lddmm(0),
            reference_index: 0,
            k_max: 1,
            resample_count: vesselatlas_core::labeling::DEFAULT_RESAMPLE_COUNT,
            registration: RegistrationConfigDoc::default(),
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<(), Error> {
        if self.fractions.is_empty() || self.fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return Err(Error::InvalidConfig("training fractions must lie in (0, 1]"));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1"));
        }
        if self.resample_count < 2 {
            return Err(Error::InvalidConfig("resample count must be at least 2"));
        }
        self.registration.to_config()?;
        Ok(())
    }

    pub fn pipeline(&self) -> Result<PipelineConfig, Error> {
        Ok(PipelineConfig { registration: self.registration.to_config()?, resample_count: self.resample_count })
    }
}

/// One (fraction, repetition) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub fraction: f64,
    pub repetition: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub reference: Option<usize>,
    /// Precision per test tree, aligned with `test`.
    pub precisions: Vec<f64>,
    pub mean_precision: Option<f64>,
    pub std_precision: Option<f64>,
    /// Test trees labeled from the undeformed atlas after a failed registration.
    pub degraded: usize,
    /// Interior branches breaking the bottom-up rule in bottom-up outputs.
    pub violations: usize,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub method: MethodSpec,
    pub assignment: AssignmentSpec,
    pub cells: Vec<CellReport>,
}

impl ExperimentReport {
    /// Mean over cells of a fraction, of the per-tree precisions pooled.
    pub fn pooled_mean(&self, fraction: f64) -> Option<f64> {
        let all: Vec<f64> =
            self.cells.iter().filter(|c| c.fraction == fraction).flat_map(|c| c.precisions.clone()).collect();
        (!all.is_empty()).then(|| mean(&all))
    }

    pub fn total_violations(&self) -> usize {
        self.cells.iter().map(|c| c.violations).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "method,assignment,fraction,repetition,train_size,test_size,reference,mean_precision,std_precision,degraded,violations,status,per_tree\n",
        );
        for c in &self.cells {
            let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
            let per_tree: Vec<String> = c.test.iter().zip(&c.precisions).map(|(t, p)| format!("{t}:{p}")).collect();
            let status = c.failure.as_deref().map_or("ok".to_string(), |f| format!("failed: {}", f.replace([',', '\n'], ";")));
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.method,
                String::from(self.assignment),
                c.fraction,
                c.repetition,
                c.train.len(),
                c.test.len(),
                c.reference.map_or(String::new(), |r| r.to_string()),
                opt(c.mean_precision),
                opt(c.std_precision),
                c.degraded,
                c.violations,
                status,
                per_tree.join(";"),
            );
        }
        out
    }
}

fn structural_violations(labeling: &Labeling, tree: &VascularTree, assignment: Assignment) -> usize {
    match assignment {
        Assignment::BottomUp => bottom_up_violations(labeling, tree).len(),
        Assignment::Direct => 0,
    }
}

/// Splits `n` trees for one cell; the split depends only on the seed and
/// the cell index.
pub fn split(n: usize, fraction: f64, seed: u64, cell: usize) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let m = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut train = idx[..m].to_vec();
    let mut test = idx[m..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

fn pick(dataset: &[VascularTree], idx: &[usize]) -> Vec<VascularTree> {
    idx.iter().map(|&i| dataset[i].clone()).collect()
}

fn run_cell<E: Executor>(
    dataset: &[VascularTree],
    spec: &ExperimentSpec,
    cfg: &PipelineConfig,
    fraction: f64,
    repetition: usize,
    cell: usize,
    exec: &E,
) -> CellReport {
    let (train, test) = split(dataset.len(), fraction, spec.seed, cell);
    let mut report = CellReport {
        fraction,
        repetition,
        train: train.clone(),
        test: test.clone(),
        reference: None,
        precisions: Vec::new(),
        mean_precision: None,
        std_precision: None,
        degraded: 0,
        violations: 0,
        failure: None,
    };
    let start = Instant::now();
    let outcome = (|| -> Result<(), Error> {
        let train_trees = pick(dataset, &train);
        let reference = match spec.reference {
            ReferenceRule::LeaveOneIn if train.len() > 1 => {
                let strategy =
                    SelectionStrategy { method: spec.selection_method.method, assignment: spec.assignment.0 };
                let sel = select_reference(&train_trees, strategy, cfg, exec)?;
                if sel.degraded {
                    log::warn!("cell {cell}: every candidate registration failed; using first training tree");
                }
                train[sel.index]
            }
            _ => train[0],
        };
        report.reference = Some(reference);
        let targets = match spec.atlas_scope {
            AtlasScope::Train => train_trees,
            AtlasScope::All => dataset.to_vec(),
        };
        let k = if spec.method.method.registers() { spec.method.k } else { 0 };
        let (atlas, _) = build_atlas(&dataset[reference], &targets, k, &cfg.registration, exec)
            .map_err(|f| f.error)?;
        let labeled = exec.map(&test, |_, &t| -> Result<(f64, bool, usize), Error> {
            let set = label_all(&atlas.mean_tree, &dataset[t], spec.method.method.registers(), cfg)?;
            let out = set.get(spec.method.method, spec.assignment.0);
            let p = precision(out, &Labeling::of_tree(&dataset[t]))?;
            Ok((p, set.degraded, structural_violations(out, &dataset[t], spec.assignment.0)))
        });
        for r in labeled {
            let (p, degraded, violations) = r?;
            report.precisions.push(p);
            report.degraded += usize::from(degraded);
            report.violations += violations;
        }
        report.mean_precision = Some(mean(&report.precisions));
        report.std_precision = Some(std_dev(&report.precisions));
        Ok(())
    })();
    if let Err(e) = outcome {
        log::warn!("cell {cell} (fraction {fraction}, repetition {repetition}) failed: {e}");
        report.failure = Some(e.to_string());
        report.precisions.clear();
    }
    log::info!("cell {cell} done in {:.1}s", start.elapsed().as_secs_f64());
    report
}

/// Repeated random train/test splits per training fraction.
pub fn cross_validate<E: Executor>(
    dataset: &[VascularTree],
    spec: &ExperimentSpec,
    exec: &E,
) -> Result<ExperimentReport, Error> {
    spec.validate()?;
    if dataset.len() < 2 {
        return Err(Error::EmptyInput("cross-validation needs at least two trees"));
    }
    let cfg = spec.pipeline()?;
    let cells: Vec<(f64, usize)> =
        spec.fractions.iter().flat_map(|&f| (0..spec.repetitions).map(move |r| (f, r))).collect();
    let start = Instant::now();
    let cells = exec.map(&cells, |i, &(f, r)| run_cell(dataset, spec, &cfg, f, r, i, exec));
    log::info!("cross-validation finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(ExperimentReport { method: spec.method, assignment: spec.assignment, cells })
}

/// Per-tree precisions of every labeling variant for the trees labeled at
/// one atlas iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantPrecisions {
    pub vote_direct: Vec<f64>,
    pub vote_bottom_up: Vec<f64>,
    pub match_direct: Vec<f64>,
    pub match_bottom_up: Vec<f64>,
    pub degraded: usize,
    pub violations: usize,
}

impl VariantPrecisions {
    fn from_sets(sets: &[(LabelingSet, &VascularTree)]) -> Result<Self, Error> {
        let mut out = VariantPrecisions {
            vote_direct: Vec::new(),
            vote_bottom_up: Vec::new(),
            match_direct: Vec::new(),
            match_bottom_up: Vec::new(),
            degraded: 0,
            violations: 0,
        };
        for (set, tree) in sets {
            let truth = Labeling::of_tree(tree);
            out.vote_direct.push(precision(&set.vote_direct, &truth)?);
            out.vote_bottom_up.push(precision(&set.vote_bottom_up, &truth)?);
            out.match_direct.push(precision(&set.match_direct, &truth)?);
            out.match_bottom_up.push(precision(&set.match_bottom_up, &truth)?);
            out.degraded += usize::from(set.degraded);
            out.violations += bottom_up_violations(&set.vote_bottom_up, tree).len()
                + bottom_up_violations(&set.match_bottom_up, tree).len();
        }
        Ok(out)
    }

    pub fn get(&self, method: Method, assignment: Assignment) -> &[f64] {
        match (method, assignment) {
            (Method::Lddmm, Assignment::Direct) => &self.vote_direct,
            (Method::Lddmm, Assignment::BottomUp) => &self.vote_bottom_up,
            (_, Assignment::Direct) => &self.match_direct,
            (_, Assignment::BottomUp) => &self.match_bottom_up,
        }
    }
}

/// One atlas followed across iterations, labeling every non-reference tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStudy {
    pub reference: usize,
    pub labeled: Vec<usize>,
    /// Branch matching on the undeformed reference.
    pub ot: VariantPrecisions,
    /// Entry `k`: registration-based variants with the iteration-`k` atlas.
    pub iterations: Vec<VariantPrecisions>,
}

/// Builds the atlas over the whole dataset (reference included) and labels
/// the other trees at every iteration `0..=k_max`.
pub fn iteration_study<E: Executor>(
    dataset: &[VascularTree],
    reference: usize,
    k_max: usize,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<IterationStudy, Error> {
    if reference >= dataset.len() {
        return Err(Error::IndexOutOfRange { index: reference, len: dataset.len() });
    }
    let labeled: Vec<usize> = (0..dataset.len()).filter(|&i| i != reference).collect();
    if labeled.is_empty() {
        return Err(Error::EmptyInput("no trees to label besides the reference"));
    }
    let label_with = |atlas: &VascularTree, deform: bool| -> Result<VariantPrecisions, Error> {
        let sets = exec.map(&labeled, |_, &t| label_all(atlas, &dataset[t], deform, cfg).map(|s| (s, &dataset[t])));
        let sets = sets.into_iter().collect::<Result<Vec<_>, _>>()?;
        VariantPrecisions::from_sets(&sets)
    };
    let ot = label_with(&dataset[reference], false)?;
    let mut atlas = Atlas::from_reference(dataset[reference].clone());
    let mut iterations = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let start = Instant::now();
        if k > 0 {
            atlas = iterate_atlas(&atlas, dataset, &cfg.registration, exec)?.0;
        }
        iterations.push(label_with(&atlas.mean_tree, true)?);
        log::info!("atlas iteration {k} labeled in {:.1}s", start.elapsed().as_secs_f64());
    }
    Ok(IterationStudy { reference, labeled, ot, iterations })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationPoint {
    pub k: usize,
    pub mean_precision: f64,
    pub std_precision: f64,
    pub precisions: Vec<f64>,
}

/// Precision of the iteration-`k` atlas for `k = 0..=k_max`.
pub fn precision_vs_iteration<E: Executor>(
    dataset: &[VascularTree],
    reference: usize,
    k_max: usize,
    method: Method,
    assignment: Assignment,
    cfg: &PipelineConfig,
    exec: &E,
) -> Result<Vec<IterationPoint>, Error> {
    if !method.registers() {
        return Err(Error::InvalidConfig("iteration series needs a registration-based method"));
    }
    let study = iteration_study(dataset, reference, k_max, cfg, exec)?;
    Ok(iteration_series(&study, method, assignment))
}

pub fn iteration_series(study: &IterationStudy, method: Method, assignment: Assignment) -> Vec<IterationPoint> {
    study
        .iterations
        .iter()
        .enumerate()
        .map(|(k, v)| {
            let p = v.get(method, assignment).to_vec();
            IterationPoint { k, mean_precision: mean(&p), std_precision: std_dev(&p), precisions: p }
        })
        .collect()
}

pub fn iteration_csv(study: &IterationStudy, series: &[IterationPoint]) -> String {
    let mut out = String::from("k,mean_precision,std_precision,per_tree\n");
    for pt in series {
        let per: Vec<String> = study.labeled.iter().zip(&pt.precisions).map(|(t, p)| format!("{t}:{p}")).collect();
        let _ = writeln!(out, "{},{},{},{}", pt.k, pt.mean_precision, pt.std_precision, per.join(";"));
    }
    out
}
