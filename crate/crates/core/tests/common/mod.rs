#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vesselatlas_core::{Branch, LabelId, Point3, Vec3, VascularTree};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vec3 {
    Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * scale
}

/// Polyline of `count` points from `start` heading roughly along `dir`.
pub fn wiggly(rng: &mut ChaCha8Rng, start: Point3, dir: Vec3, count: usize) -> Vec<Point3> {
    let mut pts = vec![start];
    let step = dir * (1.0 / (count - 1) as f64);
    for _ in 1..count {
        let last = *pts.last().unwrap();
        pts.push(last + step + random_vec(rng, 0.2 * step.norm()));
    }
    pts
}

/// Random binary tree with `leaves` leaves (so `2 * leaves - 1` branches)
/// and `per_branch` points per branch. Leaves get labels 1..=6 cyclically,
/// interiors follow the bottom-up rule.
pub fn random_tree(rng: &mut ChaCha8Rng, leaves: usize, per_branch: usize) -> VascularTree {
    let mut branches = vec![Branch::new(wiggly(rng, Vec3::ZERO, Vec3::new(0.0, -1.0, 0.0), per_branch), LabelId(0))];
    let mut edges = Vec::new();
    let mut open = vec![0usize];
    while open.len() < leaves {
        let pick = rng.random_range(0..open.len());
        let parent = open.swap_remove(pick);
        let end = branches[parent].last();
        for side in [-1.0, 1.0] {
            let dir = Vec3::new(side * rng.random_range(0.4..1.0), -rng.random_range(0.4..1.0), rng.random_range(-0.3..0.3));
            branches.push(Branch::new(wiggly(rng, end, dir, per_branch), LabelId(0)));
            let id = branches.len() - 1;
            edges.push((parent, id));
            open.push(id);
        }
    }
    let tree = VascularTree::new(branches, &edges, 0).unwrap();
    let mut next = 0u32;
    let leaf_labels: Vec<Option<LabelId>> = (0..tree.len())
        .map(|b| {
            tree.is_leaf(b).then(|| {
                next += 1;
                LabelId((next - 1) % 6 + 1)
            })
        })
        .collect();
    let labels =
        vesselatlas_core::labeling::propagate_from_leaves(&tree, |b| leaf_labels[b].unwrap()).unwrap();
    tree.with_labels(&labels.labels).unwrap()
}

pub fn translate(tree: &VascularTree, t: Vec3) -> VascularTree {
    let pts: Vec<Point3> = tree.points().iter().map(|p| *p + t).collect();
    tree.with_points(&pts).unwrap()
}

pub fn rotate(p: Vec3, angles: [f64; 3]) -> Vec3 {
    let (sa, ca) = angles[0].sin_cos();
    let (sb, cb) = angles[1].sin_cos();
    let (sc, cc) = angles[2].sin_cos();
    let p = Vec3::new(p.x, ca * p.y - sa * p.z, sa * p.y + ca * p.z);
    let p = Vec3::new(cb * p.x + sb * p.z, p.y, -sb * p.x + cb * p.z);
    Vec3::new(cc * p.x - sc * p.y, sc * p.x + cc * p.y, p.z)
}
