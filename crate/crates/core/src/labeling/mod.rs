//! Label probability estimation and label assignment.
//!
//! Probabilities come either from closest-point voting against a deformed
//! atlas or from a one-to-one branch matching. Assignment is either a
//! per-branch argmax or the bottom-up rule: leaves take their argmax and
//! every parent inherits the label shared by all its children, or the
//! common-artery label `0` when they disagree.

pub mod hungarian;

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use crate::error::{check_len, Error, Result};
use crate::tree::{resample_branch, LabelId, VascularTree, DEFAULT_MAX_LABEL};

pub use hungarian::CostMatrix;

/// Default number of points each branch is resampled to before matching.
pub const DEFAULT_RESAMPLE_COUNT: usize = 20;

/// `pi(branch, label)`: one row per target branch, one column per label.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelProbabilityTable {
    labels: usize,
    rows: Vec<Vec<f64>>,
}

impl LabelProbabilityTable {
    pub fn new(labels: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        if labels == 0 {
            return Err(Error::InvalidConfig("label space is empty"));
        }
        for r in &rows {
            check_len(labels, r.len())?;
        }
        Ok(LabelProbabilityTable { labels, rows })
    }

    pub fn label_count(&self) -> usize {
        self.labels
    }

    pub fn branch_count(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, branch: usize) -> &[f64] {
        &self.rows[branch]
    }

    pub fn get(&self, branch: usize, label: LabelId) -> f64 {
        self.rows[branch].get(label.index()).copied().unwrap_or(0.0)
    }

    /// Replaces a row. Used by tests that corrupt interior rows.
    pub fn set_row(&mut self, branch: usize, row: Vec<f64>) -> Result<()> {
        check_len(self.labels, row.len())?;
        self.rows[branch] = row;
        Ok(())
    }

    /// Most probable label of a branch, lowest id on ties.
    pub fn argmax(&self, branch: usize) -> LabelId {
        let row = &self.rows[branch];
        let mut best = 0;
        for (l, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = l;
            }
        }
        LabelId(best as u32)
    }
}

/// One label per target branch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Labeling {
    pub labels: Vec<LabelId>,
}

impl Labeling {
    pub fn new(labels: Vec<LabelId>) -> Self {
        Labeling { labels }
    }

    /// Ground truth stored in a labeled tree.
    pub fn of_tree(tree: &VascularTree) -> Self {
        Labeling { labels: tree.labels() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Partial permutation between atlas branches (rows) and target branches
/// (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    rows: usize,
    cols: usize,
    /// Target branch matched to each atlas branch.
    matches: Vec<Option<usize>>,
    pub cost: f64,
}

impl AssignmentMatrix {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, atlas_branch: usize, target_branch: usize) -> bool {
        self.matches[atlas_branch] == Some(target_branch)
    }

    pub fn target_of(&self, atlas_branch: usize) -> Option<usize> {
        self.matches[atlas_branch]
    }

    /// Atlas branch matched to each target branch.
    pub fn atlas_of_targets(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.cols];
        for (a, t) in self.matches.iter().enumerate() {
            if let Some(t) = t {
                out[*t] = Some(a);
            }
        }
        out
    }

    pub fn matched_count(&self) -> usize {
        self.matches.iter().filter(|m| m.is_some()).count()
    }
}

/// Number of table columns used when labeling against `atlas`.
pub fn label_space(atlas: &VascularTree) -> usize {
    atlas.max_label().max(DEFAULT_MAX_LABEL) as usize + 1
}

/// Points owned by each branch: a child's first point duplicates its
/// parent's last point and belongs to the parent.
fn owned_points(tree: &VascularTree, branch: usize) -> &[crate::geometry::Point3] {
    let pts = &tree.branch(branch).points;
    if tree.parent(branch).ok().flatten().is_some() {
        &pts[1..]
    } else {
        pts
    }
}

/// Closest-point voting: every target point takes the label of its nearest
/// atlas point (ties go to the lowest atlas point index) and each target
/// branch gets the fraction of its points voting for each label.
///
/// Junction points are counted once, on the parent branch, on both sides.
pub fn vote_labels(deformed_atlas: &VascularTree, target: &VascularTree) -> Result<LabelProbabilityTable> {
    let mut atlas_points = Vec::with_capacity(deformed_atlas.point_count());
    let mut point_labels = Vec::with_capacity(deformed_atlas.point_count());
    for b in 0..deformed_atlas.len() {
        let own = owned_points(deformed_atlas, b);
        atlas_points.extend_from_slice(own);
        point_labels.extend(core::iter::repeat_n(deformed_atlas.branch(b).label, own.len()));
    }
    if atlas_points.is_empty() {
        return Err(Error::EmptyInput("atlas has no points"));
    }
    let labels = label_space(deformed_atlas);
    let rows = (0..target.len())
        .map(|b| {
            let own = owned_points(target, b);
            let mut row = vec![0.0; labels];
            for q in own {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, a) in atlas_points.iter().enumerate() {
                    let d = a.distance_squared(*q);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                row[point_labels[best].index()] += 1.0;
            }
            let card = own.len() as f64;
            row.iter_mut().for_each(|v| *v /= card);
            row
        })
        .collect();
    LabelProbabilityTable::new(labels, rows)
}

/// Distance matrix between branches of `a` (rows) and `b` (columns): both are
/// resampled to `count` points and compared as stacked `3 * count` vectors.
pub fn branch_distance_matrix(a: &VascularTree, b: &VascularTree, count: usize) -> Result<CostMatrix> {
    let ra = a.branches().iter().map(|x| resample_branch(x, count)).collect::<Result<Vec<_>>>()?;
    let rb = b.branches().iter().map(|x| resample_branch(x, count)).collect::<Result<Vec<_>>>()?;
    Ok(CostMatrix::from_fn(ra.len(), rb.len(), |i, j| {
        ra[i].points.iter().zip(&rb[j].points).map(|(p, q)| p.distance_squared(*q)).sum::<f64>().sqrt()
    }))
}

/// Optimal one-to-one matching of atlas branches to target branches.
pub fn ot_match(deformed_atlas: &VascularTree, target: &VascularTree, count: usize) -> Result<AssignmentMatrix> {
    let d = branch_distance_matrix(deformed_atlas, target, count)?;
    let (cost, matches) = hungarian::solve(&d);
    Ok(AssignmentMatrix { rows: d.rows(), cols: d.cols(), matches, cost })
}

/// Probabilities implied by a matching: a matched target branch is one-hot on
/// its atlas branch's label, an unmatched one is uniform.
pub fn assignment_probabilities(
    assignment: &AssignmentMatrix,
    atlas: &VascularTree,
) -> Result<LabelProbabilityTable> {
    check_len(atlas.len(), assignment.rows())?;
    let labels = label_space(atlas);
    let rows = assignment
        .atlas_of_targets()
        .into_iter()
        .map(|m| match m {
            Some(a) => {
                let mut row = vec![0.0; labels];
                row[atlas.branch(a).label.index()] = 1.0;
                row
            }
            None => vec![1.0 / labels as f64; labels],
        })
        .collect();
    LabelProbabilityTable::new(labels, rows)
}

/// Per-branch argmax.
pub fn direct_assign(table: &LabelProbabilityTable) -> Labeling {
    Labeling::new((0..table.branch_count()).map(|b| table.argmax(b)).collect())
}

/// Leaves take their argmax; parents, children first, take the label shared
/// by both children or the common-artery label.
pub fn bottom_up_assign(table: &LabelProbabilityTable, target: &VascularTree) -> Result<Labeling> {
    check_len(target.len(), table.branch_count())?;
    propagate_from_leaves(target, |b| table.argmax(b))
}

/// Labels leaves with `leaf_label` and every interior branch with the label
/// shared by all its children, or Common Artery when they differ.
pub fn propagate_from_leaves(tree: &VascularTree, leaf_label: impl Fn(usize) -> LabelId) -> Result<Labeling> {
    let mut labels = vec![LabelId::COMMON_ARTERY; tree.len()];
    for &b in tree.topological_order().iter().rev() {
        let children = tree.children(b)?;
        labels[b] = match children.split_first() {
            None => leaf_label(b),
            Some((first, rest)) => {
                let l = labels[*first];
                if rest.iter().all(|c| labels[*c] == l) {
                    l
                } else {
                    LabelId::COMMON_ARTERY
                }
            }
        };
    }
    Ok(Labeling::new(labels))
}

/// Interior branches whose label is neither their children's common label
/// nor the common-artery label.
pub fn bottom_up_violations(labeling: &Labeling, tree: &VascularTree) -> Vec<usize> {
    (0..tree.len())
        .filter(|&b| {
            let children = &tree.children(b).expect("index in range");
            if children.is_empty() {
                return false;
            }
            let l = labeling.labels[b];
            let common = children.iter().all(|c| labeling.labels[*c] == labeling.labels[children[0]]);
            !(l == LabelId::COMMON_ARTERY || (common && l == labeling.labels[children[0]]))
        })
        .collect()
}

/// Fraction of branches with matching labels.
pub fn precision(predicted: &Labeling, truth: &Labeling) -> Result<f64> {
    check_len(truth.len(), predicted.len())?;
    if truth.is_empty() {
        return Err(Error::EmptyInput("no branches to compare"));
    }
    let correct = predicted.labels.iter().zip(&truth.labels).filter(|(a, b)| a == b).count();
    Ok(correct as f64 / truth.len() as f64)
}
