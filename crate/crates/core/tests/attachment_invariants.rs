mod common;

use proptest::prelude::*;
use vesselatlas_core::attachment::{attachment_gradient, attachment_value, to_current, AttachmentSpec};
use vesselatlas_core::{Branch, VascularTree, Vec3};

fn tree_pair() -> impl Strategy<Value = (VascularTree, VascularTree, f64)> {
    (any::<u64>(), 2usize..5, 3usize..6, 0.2..2.0f64).prop_map(|(seed, leaves, per, sigma)| {
        let mut rng = common::rng(seed);
        (common::random_tree(&mut rng, leaves, per), common::random_tree(&mut rng, leaves, per), sigma)
    })
}

fn moved(tree: &VascularTree, f: impl Fn(Vec3) -> Vec3) -> VascularTree {
    let pts: Vec<Vec3> = tree.points().into_iter().map(f).collect();
    tree.with_points(&pts).unwrap()
}

fn reversed(tree: &VascularTree, which: usize) -> Vec<Branch> {
    let mut out = tree.branches().to_vec();
    out[which].points.reverse();
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn self_distance_vanishes((a, _, sigma) in tree_pair()) {
        let spec = AttachmentSpec::new(sigma).unwrap();
        let ca = to_current(&a).unwrap();
        prop_assert!(attachment_value(&spec, &ca, &ca).unwrap() <= 1e-10);
    }

    #[test]
    fn value_is_symmetric((a, b, sigma) in tree_pair()) {
        let spec = AttachmentSpec::new(sigma).unwrap();
        let (ca, cb) = (to_current(&a).unwrap(), to_current(&b).unwrap());
        prop_assert_eq!(
            attachment_value(&spec, &ca, &cb).unwrap().to_bits(),
            attachment_value(&spec, &cb, &ca).unwrap().to_bits()
        );
    }

    #[test]
    fn rigid_motion_leaves_value_unchanged(
        (a, b, sigma) in tree_pair(),
        angles in prop::array::uniform3(-3.1..3.1f64),
        shift in prop::array::uniform3(-5.0..5.0f64),
    ) {
        let spec = AttachmentSpec::new(sigma).unwrap();
        let motion = |p: Vec3| common::rotate(p, angles) + Vec3::from_array(shift);
        let before = attachment_value(&spec, &to_current(&a).unwrap(), &to_current(&b).unwrap()).unwrap();
        let after = attachment_value(
            &spec,
            &to_current(&moved(&a, motion)).unwrap(),
            &to_current(&moved(&b, motion)).unwrap(),
        )
        .unwrap();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1e-12), "{} vs {}", before, after);
    }

    #[test]
    fn flipping_a_branch_leaves_value_unchanged((a, b, sigma) in tree_pair(), which in 0usize..3) {
        let spec = AttachmentSpec::new(sigma).unwrap();
        let cb = to_current(&b).unwrap();
        let before = attachment_value(&spec, &to_current(&a).unwrap(), &cb).unwrap();
        // The flipped copy is not a valid oriented tree, so build its current from raw polylines.
        let flipped = reversed(&a, which % a.len());
        let mut pts = Vec::new();
        let mut segs = Vec::new();
        for br in &flipped {
            let base = pts.len();
            pts.extend_from_slice(&br.points);
            segs.extend((0..br.points.len() - 1).map(|k| (base + k, base + k + 1)));
        }
        let cf = vesselatlas_core::attachment::current_from_points(&pts, &segs).unwrap();
        let after = attachment_value(&spec, &cf, &cb).unwrap();
        prop_assert!((before - after).abs() < 1e-9, "{} vs {}", before, after);
    }

    #[test]
    fn gradient_matches_finite_differences(seed in any::<u64>(), sigma in 0.3..2.0f64) {
        let mut rng = common::rng(seed);
        let a = common::random_tree(&mut rng, 2, 3);
        let b = common::random_tree(&mut rng, 2, 3);
        let spec = AttachmentSpec::new(sigma).unwrap();
        let target = to_current(&b).unwrap();
        let segs = a.segments();
        let pts = a.points();
        let (_, g) = attachment_gradient(&spec, &pts, &segs, &target).unwrap();
        let scale = g.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-8);
        let h = 1e-5;
        for i in 0..pts.len() {
            for c in 0..3 {
                let mut e = [0.0; 3];
                e[c] = h;
                let mut plus = pts.clone();
                plus[i] += Vec3::from_array(e);
                let mut minus = pts.clone();
                minus[i] -= Vec3::from_array(e);
                let fp = attachment_gradient(&spec, &plus, &segs, &target).unwrap().0;
                let fm = attachment_gradient(&spec, &minus, &segs, &target).unwrap().0;
                let fd = (fp - fm) / (2.0 * h);
                prop_assert!((fd - g[i][c]).abs() <= 1e-5 * scale, "{} vs {}", fd, g[i][c]);
            }
        }
    }
}

#[test]
fn total_tangent_length_is_tree_length() {
    let mut rng = common::rng(5);
    let t = common::random_tree(&mut rng, 9, 6);
    let c = to_current(&t).unwrap();
    let total: f64 = c.tangents.iter().map(|v| v.norm()).sum();
    assert!((total - t.total_length()).abs() <= 1e-12 * t.total_length());
}
