mod common;

use proptest::prelude::*;
use vesselatlas_core::{KernelSpec, Vec3};

fn vec3() -> impl Strategy<Value = Vec3> {
    (-2.0..2.0f64, -2.0..2.0f64, -2.0..2.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn spec() -> impl Strategy<Value = KernelSpec> {
    (0.5..3.0f64).prop_map(|s| KernelSpec::with_default_scales(s).unwrap())
}

proptest! {
    #[test]
    fn evaluation_is_symmetric(k in spec(), x in vec3(), y in vec3()) {
        prop_assert_eq!(k.eval(x, y).to_bits(), k.eval(y, x).to_bits());
        let v = k.eval(x, y);
        prop_assert!(v > 0.0 || x.distance(y) > 0.0);
        prop_assert!(v <= 4.0);
    }

    #[test]
    fn matvec_is_linear(
        k in spec(),
        pts in prop::collection::vec(vec3(), 1..8),
        seed in any::<u64>(),
        alpha in -3.0..3.0f64,
    ) {
        let mut rng = common::rng(seed);
        let u: Vec<Vec3> = pts.iter().map(|_| common::random_vec(&mut rng, 1.0)).collect();
        let v: Vec<Vec3> = pts.iter().map(|_| common::random_vec(&mut rng, 1.0)).collect();
        let sum: Vec<Vec3> = u.iter().zip(&v).map(|(a, b)| *a + *b).collect();
        let scaled: Vec<Vec3> = u.iter().map(|a| *a * alpha).collect();
        let ku = k.matvec(&pts, &pts, &u).unwrap();
        let kv = k.matvec(&pts, &pts, &v).unwrap();
        let ks = k.matvec(&pts, &pts, &sum).unwrap();
        let ka = k.matvec(&pts, &pts, &scaled).unwrap();
        for i in 0..pts.len() {
            prop_assert!((ks[i] - (ku[i] + kv[i])).norm() <= 1e-12 * (1.0 + ks[i].norm()));
            prop_assert!((ka[i] - ku[i] * alpha).norm() <= 1e-12 * (1.0 + ka[i].norm()));
        }
    }

    #[test]
    fn gram_matrix_is_positive_definite(
        k in spec(),
        pts in prop::collection::vec(vec3(), 1..10),
        seed in any::<u64>(),
    ) {
        // distinct points only
        for i in 0..pts.len() {
            for j in 0..i {
                prop_assume!(pts[i].distance(pts[j]) > 1e-3);
            }
        }
        let mut rng = common::rng(seed);
        let v: Vec<Vec3> = pts.iter().map(|_| common::random_vec(&mut rng, 1.0)).collect();
        prop_assume!(v.iter().any(|x| x.norm() > 1e-6));
        prop_assert!(k.quadratic_form(&pts, &v).unwrap() > 0.0);
    }

    #[test]
    fn self_matvec_matches_general_matvec(
        k in spec(),
        pts in prop::collection::vec(vec3(), 1..10),
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let v: Vec<Vec3> = pts.iter().map(|_| common::random_vec(&mut rng, 1.0)).collect();
        let a = k.self_matvec(&pts, &v).unwrap();
        let b = k.matvec(&pts, &pts, &v).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((*x - *y).norm() <= 1e-12 * (1.0 + y.norm()));
        }
    }

    #[test]
    fn quadratic_gradient_matches_finite_differences(
        k in spec(),
        pts in prop::collection::vec(vec3(), 1..7),
        seed in any::<u64>(),
    ) {
        let mut rng = common::rng(seed);
        let p: Vec<Vec3> = pts.iter().map(|_| common::random_vec(&mut rng, 1.0)).collect();
        let g = k.grad_quadratic(&pts, &p).unwrap();
        let h = 1e-5;
        let scale = g.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-3);
        for i in 0..pts.len() {
            for c in 0..3 {
                let mut plus = pts.clone();
                let mut minus = pts.clone();
                let mut e = [0.0; 3];
                e[c] = h;
                plus[i] += Vec3::from_array(e);
                minus[i] -= Vec3::from_array(e);
                let fd = (k.quadratic_form(&plus, &p).unwrap() - k.quadratic_form(&minus, &p).unwrap()) / (2.0 * h);
                prop_assert!((fd - g[i][c]).abs() <= 1e-6 * scale, "{} vs {}", fd, g[i][c]);
            }
        }
    }
}

#[test]
fn length_mismatch_is_reported() {
    let k = KernelSpec::with_default_scales(1.0).unwrap();
    let pts = [Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)];
    assert!(k.matvec(&pts, &pts, &[Vec3::ZERO]).is_err());
    assert!(k.grad_quadratic(&pts, &[Vec3::ZERO]).is_err());
}
