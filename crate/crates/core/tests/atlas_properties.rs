mod common;

use vesselatlas_core::atlas::{average_momenta, build_atlas, select_reference, SelectionStrategy};
use vesselatlas_core::attachment::{attachment_value, to_current, AttachmentSpec};
use vesselatlas_core::exec::Sequential;
use vesselatlas_core::kernel::half_box_size;
use vesselatlas_core::pipeline::{Assignment, Method, PipelineConfig};
use vesselatlas_core::registration::{deform_tree, register_in_frame, Frame, RegistrationConfig};
use vesselatlas_core::shooting::{IntegratorConfig, MomentaField};
use vesselatlas_core::{KernelSpec, Vec3, VascularTree};

fn shot(t: &VascularTree, seed: u64, amount: f64) -> VascularTree {
    let mut rng = common::rng(seed);
    let sigma = half_box_size(t.points().iter()).unwrap();
    let p: Vec<Vec3> = (0..t.point_count()).map(|_| common::random_vec(&mut rng, amount * sigma)).collect();
    deform_tree(t, &KernelSpec::with_default_scales(sigma).unwrap(), &MomentaField::new(p), &IntegratorConfig::default())
        .unwrap()
}

fn sorted_labels(t: &VascularTree) -> Vec<u32> {
    let mut v: Vec<u32> = t.labels().iter().map(|l| l.0).collect();
    v.sort_unstable();
    v
}

#[test]
fn zero_iterations_return_the_reference() {
    let mut rng = common::rng(1);
    let r = common::random_tree(&mut rng, 3, 4);
    let (atlas, report) = build_atlas(&r, &[r.clone()], 0, &RegistrationConfig::default(), &Sequential).unwrap();
    assert_eq!(atlas.mean_tree, r);
    assert_eq!(atlas.mean_momenta.norm(), 0.0);
    assert!(report.iterations.is_empty());
    assert!(report.reference_in_targets);
}

#[test]
fn identical_targets_average_to_one_registration() {
    let mut rng = common::rng(2);
    let r = common::random_tree(&mut rng, 3, 4);
    let x = shot(&r, 20, 0.03);
    let targets = vec![x.clone(), x.clone(), x.clone()];
    let cfg = RegistrationConfig::default();
    let (atlas, report) = build_atlas(&r, &targets, 1, &cfg, &Sequential).unwrap();
    assert!(!report.reference_in_targets);
    let frame = atlas.frame.unwrap();
    assert_eq!(frame, Frame::enclosing([&r, &x, &x, &x]).unwrap());
    let single = register_in_frame(&r, &x, &cfg, &frame).unwrap();
    for (a, b) in atlas.mean_momenta.momenta.iter().zip(&single.momenta.momenta) {
        assert!((*a - *b).norm() <= 1e-12 * (1.0 + b.norm()));
    }
    for (a, b) in atlas.mean_tree.points().iter().zip(single.deformed_source.points()) {
        assert!(a.distance(b) < 1e-9);
    }
    assert_eq!(sorted_labels(&atlas.mean_tree), sorted_labels(&r));
}

#[test]
fn targets_equal_to_the_reference_give_zero_mean() {
    let mut rng = common::rng(3);
    let r = common::random_tree(&mut rng, 3, 4);
    let (atlas, _) = build_atlas(&r, &[r.clone(), r.clone()], 1, &RegistrationConfig::default(), &Sequential).unwrap();
    assert!(atlas.mean_momenta.norm() < 1e-6);
}

#[test]
fn mean_tree_lies_between_its_targets() {
    let mut rng = common::rng(4);
    let r = common::random_tree(&mut rng, 3, 5);
    let far = shot(&r, 40, 0.05);
    let (atlas, _) = build_atlas(&r, &[r.clone(), far.clone()], 1, &RegistrationConfig::default(), &Sequential).unwrap();
    let sigma = half_box_size(r.points().iter().chain(far.points().iter())).unwrap();
    let spec = AttachmentSpec::new(0.25 * sigma).unwrap();
    let a = |x: &VascularTree, y: &VascularTree| attachment_value(&spec, &to_current(x).unwrap(), &to_current(y).unwrap()).unwrap();
    let reference_to_far = a(&r, &far);
    assert!(a(&atlas.mean_tree, &r) < reference_to_far);
    assert!(a(&atlas.mean_tree, &far) < reference_to_far);
}

#[test]
fn target_order_does_not_change_the_mean() {
    let mut rng = common::rng(5);
    let fields: Vec<MomentaField> = (0..7)
        .map(|_| MomentaField::new((0..11).map(|_| common::random_vec(&mut rng, 1e3)).collect()))
        .collect();
    let base = average_momenta(&fields).unwrap();
    let mut shuffled = fields.clone();
    shuffled.reverse();
    shuffled.swap(1, 4);
    assert_eq!(average_momenta(&shuffled).unwrap(), base);
    assert!(average_momenta(&[]).is_err());
}

#[test]
fn identical_candidates_tie_to_the_first() {
    let mut rng = common::rng(6);
    let r = common::random_tree(&mut rng, 3, 4);
    let sel = select_reference(&[r.clone(), r.clone()], SelectionStrategy::default(), &PipelineConfig::default(), &Sequential)
        .unwrap();
    assert_eq!(sel.index, 0);
    assert_eq!(sel.scores, vec![1.0, 1.0]);
    assert!(!sel.degraded);
    assert!(select_reference(&[r], SelectionStrategy::default(), &PipelineConfig::default(), &Sequential).is_err());
}

#[test]
fn midpoint_candidate_is_selected() {
    // B and C are shot from A along opposite momenta.
    let mut rng = common::rng(7);
    let a = common::random_tree(&mut rng, 4, 4);
    let sigma = half_box_size(a.points().iter()).unwrap();
    let kernel = KernelSpec::with_default_scales(sigma).unwrap();
    let p: Vec<Vec3> = (0..a.point_count()).map(|_| common::random_vec(&mut rng, 0.25 * sigma)).collect();
    let minus = MomentaField::new(p.iter().map(|v| -*v).collect());
    let b = deform_tree(&a, &kernel, &minus, &IntegratorConfig::default()).unwrap();
    let c = deform_tree(&a, &kernel, &MomentaField::new(p), &IntegratorConfig::default()).unwrap();
    let strategy = SelectionStrategy { method: Method::Ot, assignment: Assignment::Direct };
    let sel = select_reference(&[b, a, c], strategy, &PipelineConfig::default(), &Sequential).unwrap();
    assert_eq!(sel.index, 1, "scores {:?}", sel.scores);
}

#[test]
fn failed_registrations_degrade_selection_to_the_first_tree() {
    let mut rng = common::rng(8);
    let a = common::random_tree(&mut rng, 20, 6);
    let b = common::translate(&common::random_tree(&mut rng, 20, 6), Vec3::new(0.5, 0.0, 0.0));
    let mut cfg = PipelineConfig::default();
    // The weighted attachment overflows during optimization.
    cfg.registration.attachment_weight = f64::MAX;
    assert!(vesselatlas_core::registration::register(&a, &b, &cfg.registration).is_err());
    assert!(vesselatlas_core::registration::register(&b, &a, &cfg.registration).is_err());
    let sel = select_reference(&[a, b], SelectionStrategy::default(), &cfg, &Sequential).unwrap();
    assert!(sel.degraded);
    assert_eq!(sel.index, 0);
    assert_eq!(sel.scores, vec![0.0, 0.0]);
}
