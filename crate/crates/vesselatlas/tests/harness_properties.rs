use vesselatlas::exec::PoolExecutor;
use vesselatlas::harness::{
    cross_validate, iteration_series, iteration_study, precision_vs_iteration, split, AssignmentSpec, AtlasScope,
    ExperimentSpec, MethodSpec, ReferenceRule,
};
use vesselatlas::synthgen::{bundled_template, generate_dataset, GeneratorConfig};
use vesselatlas_core::exec::Sequential;
use vesselatlas_core::pipeline::{mean, run_method, Assignment, Method, PipelineConfig};
use vesselatlas_core::labeling::{precision, Labeling};
use vesselatlas_core::VascularTree;

fn copies(n: usize) -> Vec<VascularTree> {
    vec![bundled_template(); n]
}

fn quick_spec(method: MethodSpec, assignment: Assignment) -> ExperimentSpec {
    let mut spec = ExperimentSpec {
        method,
        assignment: AssignmentSpec(assignment),
        fractions: vec![0.75],
        repetitions: 2,
        seed: 11,
        ..ExperimentSpec::default()
    };
    spec.registration.lbfgs.max_iterations = 5;
    spec
}

fn benchmark() -> Vec<VascularTree> {
    let cfg = GeneratorConfig::new(bundled_template(), 42);
    generate_dataset(&cfg, 20, &Sequential).unwrap().into_iter().map(|g| g.tree).collect()
}

#[test]
fn splits_are_seeded_disjoint_and_sized() {
    for n in [2, 5, 20] {
        for f in [0.02, 0.25, 0.8, 1.0] {
            let (train, test) = split(n, f, 3, 7);
            assert_eq!((train.clone(), test.clone()), split(n, f, 3, 7));
            assert_eq!(train.len(), ((f * n as f64).round() as usize).clamp(1, n - 1));
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
    assert_ne!(split(20, 0.5, 3, 0), split(20, 0.5, 3, 1));
}

#[test]
fn identical_trees_give_perfect_precision_everywhere() {
    let data = copies(4);
    for method in [MethodSpec::OT, MethodSpec::lddmm(1), MethodSpec::lddmm_ot(1)] {
        for assignment in [Assignment::Direct, Assignment::BottomUp] {
            let report = cross_validate(&data, &quick_spec(method, assignment), &Sequential).unwrap();
            assert_eq!(report.cells.len(), 2);
            for c in &report.cells {
                assert_eq!((c.train.len(), c.test.len()), (3, 1));
                assert!(c.failure.is_none());
                assert_eq!(c.precisions, vec![1.0]);
                assert_eq!(c.violations, 0);
            }
        }
    }
}

#[test]
fn reports_do_not_depend_on_worker_count() {
    let data: Vec<VascularTree> = {
        let mut cfg = GeneratorConfig::new(bundled_template(), 8);
        cfg.momenta_scale = 0.1;
        generate_dataset(&cfg, 4, &Sequential).unwrap().into_iter().map(|g| g.tree).collect()
    };
    let spec = quick_spec(MethodSpec::lddmm_ot(1), Assignment::BottomUp);
    let a = cross_validate(&data, &spec, &Sequential).unwrap();
    let b = cross_validate(&data, &spec, &PoolExecutor::new(2).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
}

#[test]
fn csv_rows_are_self_consistent() {
    let mut cfg = GeneratorConfig::new(bundled_template(), 3);
    cfg.momenta_scale = 0.1;
    let data: Vec<VascularTree> = generate_dataset(&cfg, 4, &Sequential).unwrap().into_iter().map(|g| g.tree).collect();
    let mut spec = quick_spec(MethodSpec::OT, Assignment::Direct);
    spec.fractions = vec![0.25, 0.5];
    spec.reference = ReferenceRule::First;
    spec.atlas_scope = AtlasScope::All;
    let report = cross_validate(&data, &spec, &Sequential).unwrap();
    let csv = report.to_csv();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for (row, cell) in rows.iter().zip(&report.cells) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 13);
        let per: Vec<f64> = cols[12].split(';').map(|kv| kv.split(':').nth(1).unwrap().parse().unwrap()).collect();
        assert!(per.iter().all(|p| (0.0..=1.0).contains(p)));
        let m: f64 = cols[7].parse().unwrap();
        assert!((m - mean(&per)).abs() < 1e-12);
        assert_eq!(cell.reference, Some(cell.train[0]));
    }
}

#[test]
fn iteration_series_is_flat_on_identical_trees() {
    let data = copies(3);
    let mut cfg = PipelineConfig::default();
    cfg.registration.lbfgs.max_iters = 5;
    let series = precision_vs_iteration(&data, 1, 2, Method::Lddmm, Assignment::BottomUp, &cfg, &Sequential).unwrap();
    assert_eq!(series.len(), 3);
    for (k, p) in series.iter().enumerate() {
        assert_eq!(p.k, k);
        assert_eq!(p.precisions, vec![1.0, 1.0]);
    }
    let single = precision_vs_iteration(&data, 0, 0, Method::LddmmOt, Assignment::BottomUp, &cfg, &Sequential).unwrap();
    assert_eq!(single.len(), 1);
    assert!(precision_vs_iteration(&data, 0, 1, Method::Ot, Assignment::BottomUp, &cfg, &Sequential).is_err());
    assert!(iteration_study(&data, 3, 0, &cfg, &Sequential).is_err());
}

#[test]
fn ot_on_the_atlas_itself_is_exact() {
    for tree in benchmark().iter().take(5) {
        let out = run_method(tree, tree, Method::Ot, Assignment::Direct, &PipelineConfig::default()).unwrap();
        assert_eq!(precision(&out.labeling, &Labeling::of_tree(tree)).unwrap(), 1.0);
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let data = copies(3);
    let mut spec = quick_spec(MethodSpec::OT, Assignment::Direct);
    spec.fractions = vec![0.0];
    assert!(cross_validate(&data, &spec, &Sequential).is_err());
    let mut spec = quick_spec(MethodSpec::OT, Assignment::Direct);
    spec.repetitions = 0;
    assert!(cross_validate(&data, &spec, &Sequential).is_err());
    assert!(cross_validate(&copies(1), &quick_spec(MethodSpec::OT, Assignment::Direct), &Sequential).is_err());
    let parsed: Result<ExperimentSpec, _> = serde_json::from_str(r#"{"method": "LDDMM-x"}"#);
    assert!(parsed.is_err());
    let parsed: Result<ExperimentSpec, _> = serde_json::from_str(r#"{"fractionz": [0.5]}"#);
    assert!(parsed.is_err());
    let parsed: ExperimentSpec = serde_json::from_str(r#"{"method": "lddmm-2+ot", "assignment": "direct"}"#).unwrap();
    assert_eq!(parsed.method, MethodSpec::lddmm_ot(2));
    assert_eq!(parsed.assignment.0, Assignment::Direct);
}

/// Benchmark cross-validation at a quarter of the data for training.
/// About 30 minutes on one core; run with `--ignored`.
#[test]
#[ignore]
fn benchmark_cross_validation_at_a_quarter() {
    let data = benchmark();
    let base = ExperimentSpec { fractions: vec![0.25], repetitions: 3, seed: 42, ..ExperimentSpec::default() };
    let full = ExperimentSpec { method: MethodSpec::lddmm_ot(1), assignment: AssignmentSpec(Assignment::BottomUp), ..base.clone() };
    let ot = ExperimentSpec { method: MethodSpec::OT, assignment: AssignmentSpec(Assignment::Direct), ..base };
    let full = cross_validate(&data, &full, &Sequential).unwrap();
    let ot = cross_validate(&data, &ot, &Sequential).unwrap();
    let (pf, po) = (full.pooled_mean(0.25).unwrap(), ot.pooled_mean(0.25).unwrap());
    eprintln!("LDDMM-1+OT bottom-up {pf:.4}, OT direct {po:.4}");
    assert_eq!(full.total_violations(), 0);
    assert!(pf >= 0.95, "{pf}");
    assert!(po < pf, "{po} vs {pf}");
}

#[test]
fn iteration_series_reads_the_requested_variant() {
    let data = copies(2);
    let mut cfg = PipelineConfig::default();
    cfg.registration.lbfgs.max_iters = 5;
    let study = iteration_study(&data, 0, 1, &cfg, &Sequential).unwrap();
    assert_eq!(study.labeled, vec![1]);
    assert_eq!(study.iterations.len(), 2);
    let s = iteration_series(&study, Method::LddmmOt, Assignment::Direct);
    assert_eq!(s[1].precisions, study.iterations[1].match_direct);
}
