//! JSON documents: trees, registration configs and results, atlases and
//! labelings.
//!
//! Every float is written with 17 significant digits so that a value read
//! back is bitwise identical to the value written.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};
use vesselatlas_core::atlas::{Atlas, AtlasBuildReport};
use vesselatlas_core::lbfgs::{LbfgsConfig, Termination};
use vesselatlas_core::registration::{Frame, KernelConfig, RegistrationConfig, RegistrationResult, StageReport};
use vesselatlas_core::shooting::{IntegratorConfig, MomentaField};
use vesselatlas_core::labeling::Labeling;
use vesselatlas_core::{Branch, KernelSpec, LabelId, Vec3, VascularTree};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Invalid { path: PathBuf, source: vesselatlas_core::Error },
}

impl IoError {
    fn file(path: &Path, source: std::io::Error) -> Self {
        IoError::File { path: path.to_path_buf(), source }
    }
}

/// Pretty printer writing floats in `{:.16e}` form.
struct Exact<'a>(PrettyFormatter<'a>);

impl Formatter for Exact<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> std::io::Result<()> {
        write!(w, "{value:.16e}")
    }
    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(w, f64::from(value))
    }
    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> std::io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> std::io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with exact floats and a final newline.
pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Exact(PrettyFormatter::with_indent(b" ")));
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON is UTF-8")
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| IoError::file(dir, e))?;
    }
    fs::write(path, to_json_string(value)).map_err(|e| IoError::file(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}

fn invalid(path: &Path) -> impl FnOnce(vesselatlas_core::Error) -> IoError + '_ {
    move |source| IoError::Invalid { path: path.to_path_buf(), source }
}

fn to_vec3(p: [f64; 3]) -> Vec3 {
    Vec3::from_array(p)
}

fn from_vecs(v: &[Vec3]) -> Vec<[f64; 3]> {
    v.iter().map(|p| p.to_array()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchDoc {
    pub label: u32,
    pub points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDoc {
    pub root: usize,
    pub branches: Vec<BranchDoc>,
    pub edges: Vec<[usize; 2]>,
}

impl TreeDoc {
    pub fn from_tree(tree: &VascularTree) -> Self {
        TreeDoc {
            root: tree.root(),
            branches: tree
                .branches()
                .iter()
                .map(|b| BranchDoc { label: b.label.0, points: from_vecs(&b.points) })
                .collect(),
            edges: tree.edges().into_iter().map(|(p, c)| [p, c]).collect(),
        }
    }

    pub fn to_tree(&self) -> Result<VascularTree, vesselatlas_core::Error> {
        let branches = self
            .branches
            .iter()
            .map(|b| Branch::new(b.points.iter().copied().map(to_vec3).collect(), LabelId(b.label)))
            .collect();
        let edges: Vec<(usize, usize)> = self.edges.iter().map(|e| (e[0], e[1])).collect();
        Ok(VascularTree::new(branches, &edges, self.root)?)
    }
}

pub fn read_tree(path: &Path) -> Result<VascularTree, IoError> {
    let doc: TreeDoc = read_json(path)?;
    doc.to_tree().map_err(invalid(path))
}

pub fn write_tree(path: &Path, tree: &VascularTree) -> Result<(), IoError> {
    write_json(path, &TreeDoc::from_tree(tree))
}

/// All `*.json` trees of a directory in file-name order, skipping
/// `manifest.json`.
pub fn read_tree_dir(dir: &Path) -> Result<Vec<(String, VascularTree)>, IoError> {
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| IoError::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name().is_some_and(|n| n != "manifest.json"))
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap_or_default().to_string_lossy().into_owned();
            read_tree(&p).map(|t| (name, t))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsDoc {
    pub memory: usize,
    pub max_iterations: usize,
    pub gradient_rtol: f64,
    pub gradient_atol: f64,
    pub function_tolerance: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsDoc {
    fn default() -> Self {
        Self::from_config(&LbfgsConfig::default())
    }
}

impl LbfgsDoc {
    fn from_config(c: &LbfgsConfig) -> Self {
        LbfgsDoc {
            memory: c.memory,
            max_iterations: c.max_iters,
            gradient_rtol: c.grad_rtol,
            gradient_atol: c.grad_atol,
            function_tolerance: c.ftol,
            c1: c.c1,
            c2: c.c2,
            max_line_search: c.max_line_search,
        }
    }

    fn to_config(&self) -> LbfgsConfig {
        LbfgsConfig {
            memory: self.memory,
            max_iters: self.max_iterations,
            grad_rtol: self.gradient_rtol,
            grad_atol: self.gradient_atol,
            ftol: self.function_tolerance,
            c1: self.c1,
            c2: self.c2,
            max_line_search: self.max_line_search,
        }
    }
}

/// Registration settings; missing fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegistrationConfigDoc {
    pub sigma0: Option<f64>,
    pub scale_divisors: Vec<f64>,
    pub steps: usize,
    pub attachment_weight: f64,
    pub stages: Vec<f64>,
    pub lbfgs: LbfgsDoc,
}

impl Default for RegistrationConfigDoc {
    fn default() -> Self {
        Self::from_config(&RegistrationConfig::default())
    }
}

impl RegistrationConfigDoc {
    pub fn from_config(c: &RegistrationConfig) -> Self {
        RegistrationConfigDoc {
            sigma0: c.kernel.sigma0,
            scale_divisors: c.kernel.scale_divisors.clone(),
            steps: c.integrator.steps,
            attachment_weight: c.attachment_weight,
            stages: c.stages.clone(),
            lbfgs: LbfgsDoc::from_config(&c.lbfgs),
        }
    }

    pub fn to_config(&self) -> Result<RegistrationConfig, vesselatlas_core::Error> {
        let cfg = RegistrationConfig {
            kernel: KernelConfig { sigma0: self.sigma0, scale_divisors: self.scale_divisors.clone() },
            integrator: IntegratorConfig { steps: self.steps },
            attachment_weight: self.attachment_weight,
            stages: self.stages.clone(),
            lbfgs: self.lbfgs.to_config(),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn read_registration_config(path: &Path) -> Result<RegistrationConfig, IoError> {
    let doc: RegistrationConfigDoc = read_json(path)?;
    doc.to_config().map_err(invalid(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDoc {
    pub sigma0: f64,
    pub scale_divisors: Vec<f64>,
}

impl KernelDoc {
    pub fn from_spec(k: &KernelSpec) -> Self {
        KernelDoc { sigma0: k.sigma0(), scale_divisors: k.scale_divisors().to_vec() }
    }

    pub fn to_spec(&self) -> Result<KernelSpec, vesselatlas_core::Error> {
        KernelSpec::new(self.sigma0, self.scale_divisors.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameDoc {
    pub center: [f64; 3],
    pub scale: f64,
}

impl FrameDoc {
    pub fn from_frame(f: &Frame) -> Self {
        FrameDoc { center: f.center.to_array(), scale: f.scale }
    }

    pub fn to_frame(self) -> Frame {
        Frame { center: to_vec3(self.center), scale: self.scale }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageDoc {
    pub width: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: String,
    pub objective: f64,
}

fn termination_name(t: Termination) -> &'static str {
    match t {
        Termination::GradientTolerance => "gradient-tolerance",
        Termination::FunctionTolerance => "function-tolerance",
        Termination::MaxIterations => "max-iterations",
        Termination::LineSearchFailed => "line-search-failed",
    }
}

fn termination_from_name(s: &str) -> Option<Termination> {
    [
        Termination::GradientTolerance,
        Termination::FunctionTolerance,
        Termination::MaxIterations,
        Termination::LineSearchFailed,
    ]
    .into_iter()
    .find(|t| termination_name(*t) == s)
}

/// Registration output: world-unit momenta plus diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResultDoc {
    pub momenta: Vec<[f64; 3]>,
    pub kernel: KernelDoc,
    pub frame: FrameDoc,
    pub deformed_source: TreeDoc,
    pub final_objective: f64,
    pub final_energy: f64,
    pub final_attachment: f64,
    pub line_search_failed: bool,
    pub stages: Vec<StageDoc>,
    pub objective_trace: Vec<f64>,
}

impl RegistrationResultDoc {
    pub fn from_result(r: &RegistrationResult) -> Self {
        RegistrationResultDoc {
            momenta: from_vecs(&r.momenta.momenta),
            kernel: KernelDoc::from_spec(&r.kernel),
            frame: FrameDoc::from_frame(&r.frame),
            deformed_source: TreeDoc::from_tree(&r.deformed_source),
            final_objective: r.final_objective,
            final_energy: r.final_energy,
            final_attachment: r.final_attachment,
            line_search_failed: r.line_search_failed,
            stages: r
                .stages
                .iter()
                .map(|s| StageDoc {
                    width: s.width,
                    iterations: s.iterations,
                    evaluations: s.evaluations,
                    termination: termination_name(s.termination).to_string(),
                    objective: s.objective,
                })
                .collect(),
            objective_trace: r.objective_trace.clone(),
        }
    }

    pub fn to_result(&self) -> Result<RegistrationResult, vesselatlas_core::Error> {
        let frame = self.frame.to_frame();
        let momenta = MomentaField::new(self.momenta.iter().copied().map(to_vec3).collect());
        let stages = self
            .stages
            .iter()
            .map(|s| {
                Ok(StageReport {
                    width: s.width,
                    iterations: s.iterations,
                    evaluations: s.evaluations,
                    termination: termination_from_name(&s.termination)
                        .ok_or(vesselatlas_core::Error::InvalidConfig("unknown termination reason"))?,
                    objective: s.objective,
                })
            })
            .collect::<Result<Vec<_>, vesselatlas_core::Error>>()?;
        Ok(RegistrationResult {
            local_momenta: momenta.scaled(1.0 / frame.scale),
            momenta,
            kernel: self.kernel.to_spec()?,
            frame,
            deformed_source: self.deformed_source.to_tree()?,
            objective_trace: self.objective_trace.clone(),
            final_objective: self.final_objective,
            final_energy: self.final_energy,
            final_attachment: self.final_attachment,
            stages,
            line_search_failed: self.line_search_failed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasDoc {
    pub iteration: usize,
    pub reference: TreeDoc,
    pub mean_tree: TreeDoc,
    pub mean_momenta: Vec<[f64; 3]>,
    pub frame: Option<FrameDoc>,
    pub kernel: Option<KernelDoc>,
}

impl AtlasDoc {
    pub fn from_atlas(a: &Atlas) -> Self {
        AtlasDoc {
            iteration: a.iteration,
            reference: TreeDoc::from_tree(&a.reference),
            mean_tree: TreeDoc::from_tree(&a.mean_tree),
            mean_momenta: from_vecs(&a.mean_momenta.momenta),
            frame: a.frame.as_ref().map(FrameDoc::from_frame),
            kernel: a.kernel.as_ref().map(KernelDoc::from_spec),
        }
    }

    pub fn to_atlas(&self) -> Result<Atlas, vesselatlas_core::Error> {
        Ok(Atlas {
            reference: self.reference.to_tree()?,
            mean_momenta: MomentaField::new(self.mean_momenta.iter().copied().map(to_vec3).collect()),
            mean_tree: self.mean_tree.to_tree()?,
            iteration: self.iteration,
            frame: self.frame.map(FrameDoc::to_frame),
            kernel: self.kernel.as_ref().map(KernelDoc::to_spec).transpose()?,
        })
    }
}

/// Reads an atlas document, or a plain tree used as an iteration-0 atlas.
pub fn read_atlas(path: &Path) -> Result<Atlas, IoError> {
    let value: serde_json::Value = read_json(path)?;
    let json = |source| IoError::Json { path: path.to_path_buf(), source };
    if value.get("mean_tree").is_some() {
        let doc: AtlasDoc = serde_json::from_value(value).map_err(json)?;
        doc.to_atlas().map_err(invalid(path))
    } else {
        let doc: TreeDoc = serde_json::from_value(value).map_err(json)?;
        Ok(Atlas::from_reference(doc.to_tree().map_err(invalid(path))?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetFitDoc {
    pub objective: f64,
    pub energy: f64,
    pub attachment: f64,
    pub line_search_failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDoc {
    pub iteration: usize,
    pub mean_momenta_norm: f64,
    pub fits: Vec<TargetFitDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtlasReportDoc {
    pub reference_in_targets: bool,
    pub iterations: Vec<IterationDoc>,
}

impl AtlasReportDoc {
    pub fn from_report(r: &AtlasBuildReport) -> Self {
        AtlasReportDoc {
            reference_in_targets: r.reference_in_targets,
            iterations: r
                .iterations
                .iter()
                .map(|it| IterationDoc {
                    iteration: it.iteration,
                    mean_momenta_norm: it.mean_momenta_norm,
                    fits: it
                        .fits
                        .iter()
                        .map(|f| TargetFitDoc {
                            objective: f.objective,
                            energy: f.energy,
                            attachment: f.attachment,
                            line_search_failed: f.line_search_failed,
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

/// `[[branch, label], ...]`.
pub fn labeling_doc(l: &Labeling) -> Vec<(usize, u32)> {
    l.labels.iter().enumerate().map(|(i, l)| (i, l.0)).collect()
}

pub fn labeling_from_doc(doc: &[(usize, u32)]) -> Result<Labeling, vesselatlas_core::Error> {
    let mut labels = vec![None; doc.len()];
    for &(b, l) in doc {
        let slot = labels
            .get_mut(b)
            .ok_or(vesselatlas_core::Error::IndexOutOfRange { index: b, len: doc.len() })?;
        *slot = Some(LabelId(l));
    }
    labels
        .into_iter()
        .collect::<Option<Vec<_>>>()
        .map(Labeling::new)
        .ok_or(vesselatlas_core::Error::InvalidConfig("labeling lists a branch twice"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> VascularTree {
        read_tree(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/template17.json")).unwrap()
    }

    #[test]
    fn template_fixture_loads() {
        let t = fixture();
        assert_eq!(t.len(), 17);
        assert_eq!(t.leaves().len(), 9);
        assert_eq!(t.max_label(), 6);
    }

    #[test]
    fn floats_round_trip_bitwise() {
        let values = [0.1, 1.0 / 3.0, -2.5e-300, 1e300, 123456.789012345678, f64::MIN_POSITIVE];
        let text = to_json_string(&values.to_vec());
        let back: Vec<f64> = serde_json::from_str(&text).unwrap();
        for (a, b) in values.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert!(text.contains("3.3333333333333331e-1"));
    }

    #[test]
    fn tree_document_round_trip() {
        let t = fixture();
        let doc = TreeDoc::from_tree(&t);
        let text = to_json_string(&doc);
        let back: TreeDoc = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_tree().unwrap(), t);
        assert_eq!(to_json_string(&back), text);
    }

    #[test]
    fn labeling_round_trip() {
        let l = Labeling::new(vec![LabelId(0), LabelId(3), LabelId(5)]);
        let doc = labeling_doc(&l);
        assert_eq!(serde_json::to_string(&doc).unwrap(), "[[0,0],[1,3],[2,5]]");
        assert_eq!(labeling_from_doc(&doc).unwrap(), l);
        assert!(labeling_from_doc(&[(0, 1), (0, 2)]).is_err());
    }

    #[test]
    fn registration_config_defaults_fill_missing_fields() {
        let doc: RegistrationConfigDoc = serde_json::from_str(r#"{"attachment_weight": 50.0}"#).unwrap();
        let cfg = doc.to_config().unwrap();
        assert_eq!(cfg.attachment_weight, 50.0);
        assert_eq!(cfg.stages, RegistrationConfig::default().stages);
        assert!(serde_json::from_str::<RegistrationConfigDoc>(r#"{"weight": 1}"#).is_err());
    }
}
