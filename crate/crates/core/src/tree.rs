//! Labeled binary trees of centerline polylines.
//!
//! A [`VascularTree`] owns its branches, an undirected adjacency and a root.
//! Construction validates every structural invariant and orients each branch
//! so that its first point sits on the distal end of its parent.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result, TreeError};
use crate::geometry::Point3;

/// Largest named label in the default label space (labels `0..=6`).
pub const DEFAULT_MAX_LABEL: u32 = 6;

/// Distance under which a child's first point is considered to meet its
/// parent's last point, in millimeters.
pub const JOIN_TOLERANCE: f64 = 1e-6;

/// Anatomical label of a branch. `0` marks a common (unnamed, proximal)
/// trunk; `1..=L` are named arteries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelId(pub u32);

impl LabelId {
    pub const COMMON_ARTERY: LabelId = LabelId(0);

    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for LabelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One vessel centerline: an ordered polyline, parent end first.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub points: Vec<Point3>,
    pub label: LabelId,
}

impl Branch {
    pub fn new(points: Vec<Point3>, label: LabelId) -> Self {
        Branch { points, label }
    }

    pub fn first(&self) -> Point3 {
        self.points[0]
    }

    pub fn last(&self) -> Point3 {
        self.points[self.points.len() - 1]
    }

    /// Cumulative arc length at each point; starts at 0.
    pub fn cumulative_length(&self) -> Vec<f64> {
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.points.len());
        out.push(0.0);
        for w in self.points.windows(2) {
            acc += w[0].distance(w[1]);
            out.push(acc);
        }
        out
    }

    pub fn arc_length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    /// Point at arc length `s` along the polyline, clamped to the ends.
    pub fn point_at(&self, s: f64) -> Point3 {
        let cum = self.cumulative_length();
        point_at_cumulative(&self.points, &cum, s)
    }

    fn validate(&self, index: usize, max_label: u32) -> core::result::Result<(), TreeError> {
        if self.points.len() < 2 {
            return Err(TreeError::TooFewPoints { branch: index, count: self.points.len() });
        }
        if let Some(point) = self.points.iter().position(|p| !p.is_finite()) {
            return Err(TreeError::NonFinite { branch: index, point });
        }
        if let Some(k) = self.points.windows(2).position(|w| w[0] == w[1]) {
            return Err(TreeError::DegenerateSegment { branch: index, point: k + 1 });
        }
        if self.label.0 > max_label {
            return Err(TreeError::LabelOutOfRange { branch: index, label: self.label.0, max: max_label });
        }
        Ok(())
    }
}

fn point_at_cumulative(points: &[Point3], cum: &[f64], s: f64) -> Point3 {
    let total = cum[cum.len() - 1];
    if s <= 0.0 {
        return points[0];
    }
    if s >= total {
        return points[points.len() - 1];
    }
    // first segment whose end reaches s
    let k = cum.partition_point(|&c| c < s).max(1);
    let (s0, s1) = (cum[k - 1], cum[k]);
    let t = (s - s0) / (s1 - s0);
    points[k - 1].lerp(points[k], t)
}

/// Resamples a branch to `count` points spaced uniformly by arc length.
/// Both endpoints are copied exactly and the label is kept.
pub fn resample_branch(branch: &Branch, count: usize) -> Result<Branch> {
    if count < 2 {
        return Err(Error::InvalidConfig("resample count must be at least 2"));
    }
    if branch.points.len() < 2 {
        return Err(TreeError::TooFewPoints { branch: 0, count: branch.points.len() }.into());
    }
    let cum = branch.cumulative_length();
    let total = cum[cum.len() - 1];
    let last = count - 1;
    let points = (0..count)
        .map(|k| match k {
            0 => branch.first(),
            k if k == last => branch.last(),
            k => point_at_cumulative(&branch.points, &cum, total * k as f64 / last as f64),
        })
        .collect();
    Ok(Branch::new(points, branch.label))
}

/// Symmetric boolean adjacency between branches, zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdjacencyMatrix {
    n: usize,
    cells: Vec<bool>,
}

impl AdjacencyMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, a: usize, b: usize) -> bool {
        self.cells[a * self.n + b]
    }
}

/// All tree points flattened in branch-major order with back references.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloudView {
    pub points: Vec<Point3>,
    /// `(branch index, point index within branch)` for each entry of `points`.
    pub refs: Vec<(usize, usize)>,
}

/// A labeled binary tree of centerline branches.
#[derive(Debug, Clone, PartialEq)]
pub struct VascularTree {
    branches: Vec<Branch>,
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    /// Breadth-first order from the root.
    order: Vec<usize>,
}

impl VascularTree {
    /// Builds a tree with the default label space.
    pub fn new(
        branches: Vec<Branch>,
        edges: &[(usize, usize)],
        root: usize,
    ) -> core::result::Result<Self, TreeError> {
        Self::with_max_label(branches, edges, root, DEFAULT_MAX_LABEL)
    }

    /// Validates the structure and orients every branch parent end first.
    pub fn with_max_label(
        mut branches: Vec<Branch>,
        edges: &[(usize, usize)],
        root: usize,
        max_label: u32,
    ) -> core::result::Result<Self, TreeError> {
        let n = branches.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        for (i, b) in branches.iter().enumerate() {
            b.validate(i, max_label)?;
        }
        if root >= n {
            return Err(TreeError::RootOutOfRange { root, branches: n });
        }
        let mut neighbors = vec![Vec::new(); n];
        for (e, &(a, b)) in edges.iter().enumerate() {
            for v in [a, b] {
                if v >= n {
                    return Err(TreeError::EdgeOutOfRange { edge: e, branch: v });
                }
            }
            if a == b {
                return Err(TreeError::SelfLoop { branch: a });
            }
            if neighbors[a].contains(&b) {
                return Err(TreeError::DuplicateEdge { a: a.min(b), b: a.max(b) });
            }
            neighbors[a].push(b);
            neighbors[b].push(a);
        }

        let mut parent = vec![None; n];
        let mut visited = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = VecDeque::from([root]);
        visited[root] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = neighbors[v].iter().copied().filter(|&w| Some(w) != parent[v]).collect();
            next.sort_unstable();
            for w in next {
                if visited[w] {
                    return Err(TreeError::NotATree { branch: w });
                }
                visited[w] = true;
                parent[w] = Some(v);
                queue.push_back(w);
            }
        }
        if let Some(branch) = visited.iter().position(|v| !v) {
            return Err(TreeError::Disconnected { branch });
        }

        let mut children = vec![Vec::new(); n];
        for (c, p) in parent.iter().enumerate() {
            if let Some(p) = *p {
                children[p].push(c);
            }
        }
        for (i, ch) in children.iter().enumerate() {
            if !ch.is_empty() && ch.len() != 2 {
                return Err(TreeError::NotBinary { branch: i, children: ch.len() });
            }
        }

        orient(&mut branches, root, &children, &order)?;
        Ok(VascularTree { branches, root, parent, children, order })
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, idx: usize) -> &Branch {
        &self.branches[idx]
    }

    pub fn len(&self) -> usize {
        self.branches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.branches.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Undirected edges as `(parent, child)`, sorted by child index.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parent.iter().enumerate().filter_map(|(c, p)| p.map(|p| (p, c))).collect()
    }

    pub fn adjacency(&self) -> AdjacencyMatrix {
        let n = self.len();
        let mut cells = vec![false; n * n];
        for (p, c) in self.edges() {
            cells[p * n + c] = true;
            cells[c * n + p] = true;
        }
        AdjacencyMatrix { n, cells }
    }

    pub fn children(&self, idx: usize) -> Result<&[usize]> {
        self.check_index(idx)?;
        Ok(&self.children[idx])
    }

    pub fn parent(&self, idx: usize) -> Result<Option<usize>> {
        self.check_index(idx)?;
        Ok(self.parent[idx])
    }

    pub fn is_leaf(&self, idx: usize) -> bool {
        self.children[idx].is_empty()
    }

    /// Leaf branch indices in ascending order.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_leaf(i)).collect()
    }

    /// Breadth-first order from the root (parents before children).
    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn labels(&self) -> Vec<LabelId> {
        self.branches.iter().map(|b| b.label).collect()
    }

    pub fn max_label(&self) -> u32 {
        self.branches.iter().map(|b| b.label.0).max().unwrap_or(0)
    }

    pub fn point_count(&self) -> usize {
        self.branches.iter().map(|b| b.points.len()).sum()
    }

    pub fn total_length(&self) -> f64 {
        self.branches.iter().map(Branch::arc_length).sum()
    }

    /// Offset of each branch's first point in the flattened point order.
    pub fn branch_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.branches
            .iter()
            .map(|b| {
                let o = acc;
                acc += b.points.len();
                o
            })
            .collect()
    }

    pub fn point_cloud(&self) -> PointCloudView {
        let mut points = Vec::with_capacity(self.point_count());
        let mut refs = Vec::with_capacity(self.point_count());
        for (b, branch) in self.branches.iter().enumerate() {
            for (k, p) in branch.points.iter().enumerate() {
                points.push(*p);
                refs.push((b, k));
            }
        }
        PointCloudView { points, refs }
    }

    /// Flattened points in branch-major order.
    pub fn points(&self) -> Vec<Point3> {
        self.branches.iter().flat_map(|b| b.points.iter().copied()).collect()
    }

    /// Polyline segments as index pairs into [`Self::points`].
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.point_count());
        for (b, off) in self.branches.iter().zip(self.branch_offsets()) {
            out.extend((0..b.points.len() - 1).map(|k| (off + k, off + k + 1)));
        }
        out
    }

    /// Same topology and labels with new positions (branch-major order).
    /// All invariants are checked again.
    pub fn with_points(&self, points: &[Point3]) -> core::result::Result<Self, TreeError> {
        if points.len() != self.point_count() {
            return Err(TreeError::PointCountMismatch { expected: self.point_count(), found: points.len() });
        }
        let mut out = self.clone();
        let mut it = points.iter();
        for b in &mut out.branches {
            for p in &mut b.points {
                *p = *it.next().expect("length checked");
            }
        }
        out.revalidate()?;
        Ok(out)
    }

    /// Like [`Self::with_points`] but first copies each parent's last point
    /// onto its children's first points, removing round-off gaps left by a
    /// deformation.
    pub fn with_points_snapped(&self, points: &[Point3]) -> core::result::Result<Self, TreeError> {
        if points.len() != self.point_count() {
            return Err(TreeError::PointCountMismatch { expected: self.point_count(), found: points.len() });
        }
        let mut flat = points.to_vec();
        let offsets = self.branch_offsets();
        for &v in &self.order {
            if let Some(p) = self.parent[v] {
                let end = offsets[p] + self.branches[p].points.len() - 1;
                flat[offsets[v]] = flat[end];
            }
        }
        self.with_points(&flat)
    }

    /// Same geometry and topology with replaced labels.
    pub fn with_labels(&self, labels: &[LabelId]) -> Result<Self> {
        crate::error::check_len(self.len(), labels.len())?;
        let mut out = self.clone();
        for (b, l) in out.branches.iter_mut().zip(labels) {
            b.label = *l;
        }
        Ok(out)
    }

    fn revalidate(&self) -> core::result::Result<(), TreeError> {
        for (i, b) in self.branches.iter().enumerate() {
            b.validate(i, u32::MAX)?;
        }
        for &v in &self.order {
            if let Some(p) = self.parent[v] {
                let gap = self.branches[v].first().distance(self.branches[p].last());
                if gap > JOIN_TOLERANCE {
                    return Err(TreeError::JoinMismatch { branch: v, parent: p, gap });
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, idx: usize) -> Result<()> {
        if idx < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange { index: idx, len: self.len() })
        }
    }
}

fn orient(
    branches: &mut [Branch],
    root: usize,
    children: &[Vec<usize>],
    order: &[usize],
) -> core::result::Result<(), TreeError> {
    let gap_to = |b: &Branch, p: Point3| b.first().distance(p).min(b.last().distance(p));
    if let Some(&first_child) = children[root].first() {
        let r = &branches[root];
        let end_gap = children[root].iter().map(|&c| gap_to(&branches[c], r.last())).fold(0.0, f64::max);
        let start_gap = children[root].iter().map(|&c| gap_to(&branches[c], r.first())).fold(0.0, f64::max);
        if end_gap > JOIN_TOLERANCE {
            if start_gap <= JOIN_TOLERANCE {
                branches[root].points.reverse();
            } else {
                return Err(TreeError::JoinMismatch {
                    branch: first_child,
                    parent: root,
                    gap: end_gap.min(start_gap),
                });
            }
        }
    }
    for &v in order {
        let end = branches[v].last();
        for &c in &children[v] {
            let b = &mut branches[c];
            let (d_first, d_last) = (b.first().distance(end), b.last().distance(end));
            if d_first <= JOIN_TOLERANCE {
                continue;
            }
            if d_last <= JOIN_TOLERANCE {
                b.points.reverse();
            } else {
                return Err(TreeError::JoinMismatch { branch: c, parent: v, gap: d_first.min(d_last) });
            }
        }
    }
    Ok(())
}
