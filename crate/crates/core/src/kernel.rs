//! Multi-scale Gaussian kernel `K(x, y) = sum_s exp(-|x - y|^2 / (sigma0 / s)^2)`.
//!
//! The kernel is scalar and acts componentwise on vectors. All sums are
//! dense `O(n^2)`.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{check_len, Error, Result};
use crate::geometry::{bounding_box, Point3, Vec3};

pub const DEFAULT_SCALE_DIVISORS: [f64; 4] = [1.0, 4.0, 8.0, 16.0];

/// Width configuration of the deformation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    sigma0: f64,
    scale_divisors: Vec<f64>,
    /// `(s / sigma0)^2` per scale.
    inv_widths_sq: Vec<f64>,
    /// `Some(m)` when scale `i` equals scale `i - 1` squared `m` times, so
    /// its exponential is obtained by repeated squaring.
    squarings: Vec<Option<u32>>,
}

/// Radial profile of the kernel and its first two derivatives with respect
/// to the squared distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Radial {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl KernelSpec {
    pub fn new(sigma0: f64, scale_divisors: Vec<f64>) -> Result<Self> {
        if !(sigma0 > 0.0 && sigma0.is_finite()) {
            return Err(Error::InvalidConfig("sigma0 must be positive and finite"));
        }
        if scale_divisors.is_empty() {
            return Err(Error::InvalidConfig("kernel needs at least one scale"));
        }
        if scale_divisors.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidConfig("scale divisors must be positive and finite"));
        }
        let inv_widths_sq: Vec<f64> = scale_divisors.iter().map(|s| (s / sigma0).powi(2)).collect();
        let squarings = (0..inv_widths_sq.len())
            .map(|i| {
                let prev = *inv_widths_sq.get(i.checked_sub(1)?)?;
                (1..=8u32).find(|&m| prev * f64::from(1u32 << m) == inv_widths_sq[i])
            })
            .collect();
        Ok(KernelSpec { sigma0, scale_divisors, inv_widths_sq, squarings })
    }

    /// Kernel with the default divisors `[1, 4, 8, 16]`.
    pub fn with_default_scales(sigma0: f64) -> Result<Self> {
        Self::new(sigma0, DEFAULT_SCALE_DIVISORS.to_vec())
    }

    /// Same divisors, new base width.
    pub fn with_sigma0(&self, sigma0: f64) -> Result<Self> {
        Self::new(sigma0, self.scale_divisors.clone())
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn scale_divisors(&self) -> &[f64] {
        &self.scale_divisors
    }

    pub fn scale_count(&self) -> usize {
        self.scale_divisors.len()
    }

    /// Kernel value at squared distance `r2`.
    #[inline]
    pub fn profile(&self, r2: f64) -> f64 {
        let mut v = 0.0;
        self.each_scale(r2, |_, k| v += k);
        v
    }

    /// Calls `f(a, exp(-a r2))` for every scale.
    #[inline]
    fn each_scale(&self, r2: f64, mut f: impl FnMut(f64, f64)) {
        let mut k = 0.0;
        for (&a, sq) in self.inv_widths_sq.iter().zip(&self.squarings) {
            k = match sq {
                Some(m) => {
                    for _ in 0..*m {
                        k *= k;
                    }
                    if k < 1e-300 {
                        0.0
                    } else {
                        k
                    }
                }
                None => (-r2 * a).exp(),
            };
            f(a, k);
        }
    }

    #[inline]
    pub(crate) fn radial(&self, r2: f64) -> Radial {
        let mut out = Radial { value: 0.0, d1: 0.0, d2: 0.0 };
        self.each_scale(r2, |a, k| {
            out.value += k;
            out.d1 -= a * k;
            out.d2 += a * a * k;
        });
        out
    }

    /// `(value, d value / d r^2)`.
    #[inline]
    pub(crate) fn value_and_slope(&self, r2: f64) -> (f64, f64) {
        let mut v = 0.0;
        let mut d = 0.0;
        self.each_scale(r2, |a, k| {
            v += k;
            d -= a * k;
        });
        (v, d)
    }

    pub fn eval(&self, x: Point3, y: Point3) -> f64 {
        self.profile(x.distance_squared(y))
    }

    /// `out[i] = sum_j K(a_i, b_j) v_j`.
    pub fn matvec(&self, points_a: &[Point3], points_b: &[Point3], vectors: &[Vec3]) -> Result<Vec<Vec3>> {
        check_len(points_b.len(), vectors.len())?;
        Ok(points_a
            .iter()
            .map(|&a| {
                points_b.iter().zip(vectors).fold(Vec3::ZERO, |acc, (&b, &v)| acc + v * self.eval(a, b))
            })
            .collect())
    }

    /// Symmetric product `out[i] = sum_j K(q_i, q_j) v_j`, evaluating each
    /// pair once.
    pub fn self_matvec(&self, points: &[Point3], vectors: &[Vec3]) -> Result<Vec<Vec3>> {
        check_len(points.len(), vectors.len())?;
        let n = points.len();
        let diag = self.scale_count() as f64;
        let mut out: Vec<Vec3> = vectors.iter().map(|v| *v * diag).collect();
        for i in 0..n {
            for j in i + 1..n {
                let k = self.eval(points[i], points[j]);
                out[i] += vectors[j] * k;
                out[j] += vectors[i] * k;
            }
        }
        Ok(out)
    }

    /// `sum_{i,j} <p_i, K(q_i, q_j) p_j>`.
    pub fn quadratic_form(&self, points: &[Point3], momenta: &[Vec3]) -> Result<f64> {
        check_len(points.len(), momenta.len())?;
        let n = points.len();
        let diag = self.scale_count() as f64;
        let mut off = 0.0;
        let mut on = 0.0;
        for i in 0..n {
            on += diag * momenta[i].norm_squared();
            for j in i + 1..n {
                off += self.eval(points[i], points[j]) * momenta[i].dot(momenta[j]);
            }
        }
        Ok(on + 2.0 * off)
    }

    /// Gradient of [`Self::quadratic_form`] with respect to each point.
    pub fn grad_quadratic(&self, points: &[Point3], momenta: &[Vec3]) -> Result<Vec<Vec3>> {
        check_len(points.len(), momenta.len())?;
        let n = points.len();
        let mut out = vec![Vec3::ZERO; n];
        for i in 0..n {
            for j in i + 1..n {
                let r = points[i] - points[j];
                let (_, slope) = self.value_and_slope(r.norm_squared());
                // d/dq_i of 2 <p_i,p_j> k(|q_i - q_j|^2)
                let g = r * (4.0 * slope * momenta[i].dot(momenta[j]));
                out[i] += g;
                out[j] -= g;
            }
        }
        Ok(out)
    }
}

/// Half the largest side of the bounding box of `points`.
pub fn half_box_size<'a>(points: impl IntoIterator<Item = &'a Point3>) -> Option<f64> {
    bounding_box(points).map(|(lo, hi)| 0.5 * (hi - lo).max_component())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n).map(|_| Vec3::new(rng.random(), rng.random(), rng.random())).collect()
    }

    #[test]
    fn coincident_points_sum_scales() {
        let k = KernelSpec::with_default_scales(1.0).unwrap();
        assert_eq!(k.eval(Vec3::new(1.0, 2.0, 3.0), Vec3::new(1.0, 2.0, 3.0)), 4.0);
    }

    #[test]
    fn unit_distance_value() {
        let k = KernelSpec::with_default_scales(1.0).unwrap();
        let expected = (-1.0f64).exp() + (-16.0f64).exp() + (-64.0f64).exp() + (-256.0f64).exp();
        let v = k.eval(Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0));
        assert!((v - expected).abs() < 1e-16);
        assert!((v - 0.36787956).abs() < 1e-7);
    }

    #[test]
    fn decays_monotonically() {
        let k = KernelSpec::with_default_scales(2.0).unwrap();
        let mut prev = f64::INFINITY;
        for step in 0..60 {
            let v = k.eval(Vec3::ZERO, Vec3::new(step as f64 * 0.5, 0.0, 0.0));
            assert!(v <= prev && v > 0.0 || v == 0.0);
            prev = v;
        }
        assert!(prev < 1e-90);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(KernelSpec::new(0.0, vec![1.0]).is_err());
        assert!(KernelSpec::new(1.0, vec![]).is_err());
        assert!(KernelSpec::new(1.0, vec![1.0, -2.0]).is_err());
    }

    #[test]
    fn matvec_single_pair() {
        let k = KernelSpec::with_default_scales(1.0).unwrap();
        let p = [Vec3::new(0.3, 0.1, 0.0)];
        let out = k.matvec(&p, &p, &[Vec3::new(1.0, 0.0, 0.0)]).unwrap();
        assert_eq!(out[0], Vec3::new(4.0, 0.0, 0.0));
        assert!(k.matvec(&p, &p, &[]).is_err());
    }

    #[test]
    fn matvec_matches_dense_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = KernelSpec::with_default_scales(0.7).unwrap();
        let a = random_points(&mut rng, 3);
        let b = random_points(&mut rng, 3);
        let v = random_points(&mut rng, 3);
        // dense matrix built with explicit exponentials
        let mut dense = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                let r2 = (a[i] - b[j]).norm_squared();
                dense[i][j] = [1.0f64, 4.0, 8.0, 16.0].iter().map(|s| (-r2 * s * s / 0.49).exp()).sum();
            }
        }
        let out = k.matvec(&a, &b, &v).unwrap();
        for i in 0..3 {
            let mut e = Vec3::ZERO;
            for j in 0..3 {
                e += v[j] * dense[i][j];
            }
            assert!((out[i] - e).norm() <= 1e-14 * (1.0 + e.norm()));
        }
        let sym = k.self_matvec(&a, &v).unwrap();
        let full = k.matvec(&a, &a, &v).unwrap();
        for (s, f) in sym.iter().zip(&full) {
            assert!((*s - *f).norm() < 1e-14);
        }
    }

    #[test]
    fn zero_vectors_map_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = KernelSpec::with_default_scales(1.0).unwrap();
        let a = random_points(&mut rng, 5);
        let out = k.matvec(&a, &a, &[Vec3::ZERO; 5]).unwrap();
        assert!(out.iter().all(|v| *v == Vec3::ZERO));
    }

    fn finite_difference_gradient(k: &KernelSpec, q: &[Vec3], p: &[Vec3], h: f64) -> Vec<Vec3> {
        // independent dense double sum
        let form = |q: &[Vec3]| {
            let mut s = 0.0;
            for i in 0..q.len() {
                for j in 0..q.len() {
                    s += p[i].dot(p[j]) * k.eval(q[i], q[j]);
                }
            }
            s
        };
        let mut out = vec![Vec3::ZERO; q.len()];
        for i in 0..q.len() {
            for c in 0..3 {
                let mut plus = q.to_vec();
                let mut minus = q.to_vec();
                let bump = |v: &mut Vec3, d: f64| match c {
                    0 => v.x += d,
                    1 => v.y += d,
                    _ => v.z += d,
                };
                bump(&mut plus[i], h);
                bump(&mut minus[i], -h);
                let d = (form(&plus) - form(&minus)) / (2.0 * h);
                match c {
                    0 => out[i].x = d,
                    1 => out[i].y = d,
                    _ => out[i].z = d,
                }
            }
        }
        out
    }

    #[test]
    fn grad_quadratic_single_particle_vanishes() {
        let k = KernelSpec::with_default_scales(1.0).unwrap();
        let g = k.grad_quadratic(&[Vec3::new(1.0, 2.0, 3.0)], &[Vec3::new(1.0, -1.0, 0.5)]).unwrap();
        assert_eq!(g[0], Vec3::ZERO);
        let g = k
            .grad_quadratic(&[Vec3::ZERO, Vec3::new(0.2, 0.0, 0.0)], &[Vec3::new(1.0, 0.0, 0.0), Vec3::ZERO])
            .unwrap();
        assert!(g.iter().all(|v| *v == Vec3::ZERO));
    }

    #[test]
    fn grad_quadratic_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in 2..=6 {
            let k = KernelSpec::with_default_scales(0.8).unwrap();
            let q = random_points(&mut rng, n);
            let p: Vec<Vec3> = random_points(&mut rng, n).into_iter().map(|v| v - Vec3::new(0.5, 0.5, 0.5)).collect();
            let g = k.grad_quadratic(&q, &p).unwrap();
            let fd = finite_difference_gradient(&k, &q, &p, 1e-5);
            for (a, b) in g.iter().zip(&fd) {
                for c in 0..3 {
                    let tol = 1e-6 * b[c].abs().max(1e-3);
                    assert!((a[c] - b[c]).abs() <= tol, "n={n} analytic {a:?} fd {b:?}");
                }
            }
        }
    }

    #[test]
    fn quadratic_form_matches_dense_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let k = KernelSpec::with_default_scales(0.5).unwrap();
        let q = random_points(&mut rng, 7);
        let p = random_points(&mut rng, 7);
        let mut dense = 0.0;
        for i in 0..7 {
            for j in 0..7 {
                dense += p[i].dot(p[j]) * k.eval(q[i], q[j]);
            }
        }
        assert!((k.quadratic_form(&q, &p).unwrap() - dense).abs() < 1e-12 * dense.abs());
    }

    #[test]
    fn half_box() {
        let pts = [Vec3::new(0.0, 0.0, 0.0), Vec3::new(2.0, 6.0, -1.0)];
        assert_eq!(half_box_size(&pts), Some(3.0));
        assert_eq!(half_box_size(&[]), None);
    }
}
