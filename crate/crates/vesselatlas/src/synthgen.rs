//! Synthetic labeled tree datasets.
//!
//! Each tree is the template moved by a random geodesic shoot (Gaussian
//! momenta through the default kernel), optionally followed by one
//! topology change: the bifurcation of a grandchild subtree slides upstream
//! past its parent bifurcation. Leaf labels are kept; interior labels are
//! recomputed from the leaves.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use vesselatlas_core::exec::Executor;
use vesselatlas_core::kernel::half_box_size;
use vesselatlas_core::labeling::propagate_from_leaves;
use vesselatlas_core::registration::deform_tree;
use vesselatlas_core::shooting::{IntegratorConfig, MomentaField};
use vesselatlas_core::{Branch, Error, KernelSpec, Point3, Vec3, VascularTree};

pub const DEFAULT_MOMENTA_SCALE: f64 = 0.3;
pub const DEFAULT_SWAP_PROB: f64 = 0.5;
pub const DEFAULT_JITTER: f64 = 0.4;
pub const MAX_RETRIES: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub template: VascularTree,
    /// Momenta are `momenta_scale * sigma0 * z / sqrt(n)` with `z ~ N(0, I)`.
    pub momenta_scale: f64,
    pub topology_swap_prob: f64,
    /// Slide of the moved bifurcation, as a fraction of the parent length:
    /// uniform in `[0.5, 1.5) * branch_point_jitter`.
    pub branch_point_jitter: f64,
    pub seed: u64,
}

impl GeneratorConfig {
    pub fn new(template: VascularTree, seed: u64) -> Self {
        GeneratorConfig {
            template,
            momenta_scale: DEFAULT_MOMENTA_SCALE,
            topology_swap_prob: DEFAULT_SWAP_PROB,
            branch_point_jitter: DEFAULT_JITTER,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        if !(self.momenta_scale >= 0.0 && self.momenta_scale.is_finite()) {
            return Err(Error::InvalidConfig("momenta scale must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.topology_swap_prob) {
            return Err(Error::InvalidConfig("swap probability must lie in [0, 1]"));
        }
        if !(self.branch_point_jitter >= 0.0 && self.branch_point_jitter.is_finite()) {
            return Err(Error::InvalidConfig("branch point jitter must be non-negative"));
        }
        Ok(())
    }
}

/// One generated tree and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedTree {
    pub tree: VascularTree,
    pub swapped: bool,
    /// Perturbation attempts rejected as degenerate.
    pub retries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub swapped: bool,
    pub labels: Vec<u32>,
}

/// The 17-branch template shipped with the crate.
pub const TEMPLATE_JSON: &str = include_str!("../fixtures/template17.json");

pub fn bundled_template() -> VascularTree {
    serde_json::from_str::<crate::io::TreeDoc>(TEMPLATE_JSON)
        .expect("bundled template parses")
        .to_tree()
        .expect("bundled template is a valid tree")
}

/// Kernel used for generation: default scales, `sigma0` half the largest
/// bounding-box side of the template.
pub fn generation_kernel(template: &VascularTree) -> Result<KernelSpec, Error> {
    let points = template.points();
    let half = half_box_size(points.iter()).ok_or(Error::EmptyInput("template has no points"))?;
    KernelSpec::with_default_scales(half)
}

fn rng_for(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add(index as u64))
}

pub fn generate_one(cfg: &GeneratorConfig, index: usize) -> Result<GeneratedTree, Error> {
    cfg.validate()?;
    let mut rng = rng_for(cfg.seed, index);
    let template = &cfg.template;
    let kernel = generation_kernel(template)?;
    let n = template.point_count();
    let amp = cfg.momenta_scale * kernel.sigma0() / (n as f64).sqrt();
    let momenta: Vec<Vec3> = (0..n)
        .map(|_| {
            let mut z = || rng.sample::<f64, _>(StandardNormal);
            Vec3::new(z(), z(), z()) * amp
        })
        .collect();
    let deformed = if amp > 0.0 {
        deform_tree(template, &kernel, &MomentaField::new(momenta), &IntegratorConfig::default())?
    } else {
        template.clone()
    };
    let swap = rng.random::<f64>() < cfg.topology_swap_prob;
    if !swap {
        return Ok(GeneratedTree { tree: deformed, swapped: false, retries: 0 });
    }
    let candidates = slide_candidates(&deformed);
    if candidates.is_empty() {
        return Ok(GeneratedTree { tree: deformed, swapped: false, retries: 0 });
    }
    for retries in 0..=MAX_RETRIES {
        let (parent, child) = candidates[rng.random_range(0..candidates.len())];
        let moved = rng.random_range(0..2);
        let fraction = cfg.branch_point_jitter * (0.5 + rng.random::<f64>());
        if let Some(tree) = slide_bifurcation(&deformed, parent, child, moved, fraction) {
            return Ok(GeneratedTree { tree, swapped: true, retries });
        }
    }
    Err(Error::InvalidConfig("topology perturbation kept producing degenerate branches"))
}

/// `n` trees; tree `i` uses its own stream seeded with `seed + i`.
pub fn generate_dataset<E: Executor>(cfg: &GeneratorConfig, n: usize, exec: &E) -> Result<Vec<GeneratedTree>, Error> {
    if n == 0 {
        return Err(Error::EmptyInput("dataset size must be at least 1"));
    }
    cfg.validate()?;
    let indices: Vec<usize> = (0..n).collect();
    exec.map(&indices, |_, &i| generate_one(cfg, i)).into_iter().collect()
}

/// Pairs `(parent, child)` where both have two children.
fn slide_candidates(tree: &VascularTree) -> Vec<(usize, usize)> {
    let two = |b: usize| tree.children(b).map(|c| c.len() == 2).unwrap_or(false);
    tree.topological_order()
        .iter()
        .filter(|&&p| two(p))
        .flat_map(|&p| tree.children(p).unwrap_or(&[]).iter().filter(|&&c| two(c)).map(move |&c| (p, c)))
        .collect()
}

fn subtree(tree: &VascularTree, b: usize) -> Vec<usize> {
    let mut out = vec![b];
    let mut i = 0;
    while i < out.len() {
        out.extend_from_slice(tree.children(out[i]).unwrap_or(&[]));
        i += 1;
    }
    out
}

/// Splits `parent` at arc-length fraction `1 - fraction`. The child
/// `moved` of `child` is translated rigidly (with its subtree) onto the new
/// bifurcation; `child` keeps its remaining child as a straight
/// continuation. Branch count is preserved: `parent` holds the upstream
/// part, `child` the downstream part of the old parent, and the kept
/// grandchild absorbs the old `child` geometry.
///
/// Before: `P -> {C -> {G0, G1}, S}`. After (moving `G1`):
/// `P' -> {G1, C' -> {S, G0'}}` with `C'` the tail of `P` and
/// `G0' = C ++ G0`.
fn slide_bifurcation(
    tree: &VascularTree,
    parent: usize,
    child: usize,
    moved: usize,
    fraction: f64,
) -> Option<VascularTree> {
    let t = 1.0 - fraction;
    if !(t > 0.05 && t < 0.95) {
        return None;
    }
    let pc = tree.children(parent).ok()?;
    let sibling = *pc.iter().find(|&&c| c != child)?;
    let gc = tree.children(child).ok()?;
    let (moved_b, kept_b) = (gc[moved], gc[1 - moved]);

    let p = tree.branch(parent);
    let cum = p.cumulative_length();
    let total = *cum.last()?;
    let s = t * total;
    let split = p.point_at(s);
    let tol = 1e-6 * total;
    let mut head: Vec<Point3> = p.points.iter().zip(&cum).filter(|(_, &c)| c < s - tol).map(|(q, _)| *q).collect();
    head.push(split);
    let mut tail = vec![split];
    tail.extend(p.points.iter().zip(&cum).filter(|(_, &c)| c > s + tol).map(|(q, _)| *q));
    if head.len() < 2 || tail.len() < 2 {
        return None;
    }

    let mut branches: Vec<Branch> = tree.branches().to_vec();
    let shift = split - tree.branch(moved_b).first();
    for b in subtree(tree, moved_b) {
        for q in &mut branches[b].points {
            *q += shift;
        }
    }
    let mut merged = tree.branch(child).points.clone();
    merged.extend_from_slice(&tree.branch(kept_b).points[1..]);
    branches[parent].points = head;
    branches[child].points = tail;
    branches[kept_b].points = merged;

    let mut edges: Vec<(usize, usize)> = tree
        .edges()
        .into_iter()
        .filter(|&(a, b)| !(a == parent && b == sibling) && !(a == child) && !(a == parent && b == child))
        .collect();
    edges.extend([(parent, moved_b), (parent, child), (child, sibling), (child, kept_b)]);
    edges.sort_unstable_by_key(|&(_, c)| c);

    let rebuilt = VascularTree::new(branches, &edges, tree.root()).ok()?;
    let leaves = propagate_from_leaves(&rebuilt, |b| rebuilt.branch(b).label).ok()?;
    rebuilt.with_labels(&leaves.labels).ok()
}
