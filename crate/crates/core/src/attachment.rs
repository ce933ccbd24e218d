//! Curve-varifold data attachment between two trees.
//!
//! Each polyline segment becomes a Dirac at its midpoint carrying its
//! tangent. Two such measures are compared with the kernel inner product
//!
//! ```text
//! G(u, v) = sum_{m,n} exp(-|c_m - c_n|^2 / sigma^2) <t_m, t_n>^2 / (|t_m| |t_n|)
//! ```
//!
//! and the attachment is `|a - b|^2 = G(a, a) - 2 G(a, b) + G(b, b)`. Squaring
//! the tangent product makes the term blind to branch orientation.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{Error, Result};
use crate::geometry::{Point3, Vec3};
use crate::tree::VascularTree;

/// Segment midpoints and length-weighted tangents, all branches pooled.
#[derive(Debug, Clone, PartialEq)]
pub struct CurrentRepresentation {
    pub centers: Vec<Point3>,
    pub tangents: Vec<Vec3>,
}

impl CurrentRepresentation {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        self.tangents.iter().map(|t| t.norm()).sum()
    }
}

/// Spatial width of the attachment kernel for one optimization stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttachmentSpec {
    pub spatial_sigma: f64,
}

impl AttachmentSpec {
    pub fn new(spatial_sigma: f64) -> Result<Self> {
        if !(spatial_sigma > 0.0 && spatial_sigma.is_finite()) {
            return Err(Error::InvalidConfig("attachment width must be positive"));
        }
        Ok(AttachmentSpec { spatial_sigma })
    }
}

/// Builds the representation of a point set with explicit segment incidence.
pub fn current_from_points(points: &[Point3], segments: &[(usize, usize)]) -> Result<CurrentRepresentation> {
    let mut centers = Vec::with_capacity(segments.len());
    let mut tangents = Vec::with_capacity(segments.len());
    for (m, &(u, v)) in segments.iter().enumerate() {
        for idx in [u, v] {
            if idx >= points.len() {
                return Err(Error::IndexOutOfRange { index: idx, len: points.len() });
            }
        }
        let t = points[v] - points[u];
        if t.norm_squared() == 0.0 {
            return Err(Error::ZeroLengthSegment { segment: m });
        }
        centers.push((points[u] + points[v]) * 0.5);
        tangents.push(t);
    }
    Ok(CurrentRepresentation { centers, tangents })
}

pub fn to_current(tree: &VascularTree) -> Result<CurrentRepresentation> {
    current_from_points(&tree.points(), &tree.segments())
}

#[inline]
fn angular(u: Vec3, nu: f64, v: Vec3, nv: f64) -> f64 {
    let d = u.dot(v);
    d * d / (nu * nv)
}

/// Derivative of `angular(u, v)` with respect to `u`.
#[inline]
fn angular_grad(u: Vec3, nu: f64, v: Vec3, nv: f64) -> Vec3 {
    let d = u.dot(v);
    v * (2.0 * d / (nu * nv)) - u * (d * d / (nu * nu * nu * nv))
}

fn norms(r: &CurrentRepresentation) -> Result<Vec<f64>> {
    r.tangents
        .iter()
        .enumerate()
        .map(|(m, t)| {
            let n = t.norm();
            if n > 0.0 {
                Ok(n)
            } else {
                Err(Error::ZeroLengthSegment { segment: m })
            }
        })
        .collect()
}

fn self_product(inv_s2: f64, r: &CurrentRepresentation, nr: &[f64]) -> f64 {
    let mut diag = 0.0;
    let mut off = 0.0;
    for m in 0..r.len() {
        diag += r.tangents[m].norm_squared();
        for n in m + 1..r.len() {
            let k = (-(r.centers[m] - r.centers[n]).norm_squared() * inv_s2).exp();
            off += k * angular(r.tangents[m], nr[m], r.tangents[n], nr[n]);
        }
    }
    diag + 2.0 * off
}

fn cross_product(inv_s2: f64, a: &CurrentRepresentation, na: &[f64], b: &CurrentRepresentation, nb: &[f64]) -> f64 {
    let mut s = 0.0;
    for m in 0..a.len() {
        for n in 0..b.len() {
            let k = (-(a.centers[m] - b.centers[n]).norm_squared() * inv_s2).exp();
            s += k * angular(a.tangents[m], na[m], b.tangents[n], nb[n]);
        }
    }
    s
}

fn total_cmp_slices(a: &[Vec3], b: &[Vec3]) -> Ordering {
    a.iter()
        .flat_map(|v| v.to_array())
        .zip(b.iter().flat_map(|v| v.to_array()))
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

/// Squared varifold distance between `a` and `b`, clamped at zero.
///
/// The cross term is always evaluated in a canonical argument order so the
/// result is bitwise symmetric.
pub fn attachment_value(spec: &AttachmentSpec, a: &CurrentRepresentation, b: &CurrentRepresentation) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("attachment needs non-empty representations"));
    }
    let na = norms(a)?;
    let nb = norms(b)?;
    let inv_s2 = 1.0 / (spec.spatial_sigma * spec.spatial_sigma);
    let swap = a
        .len()
        .cmp(&b.len())
        .then_with(|| total_cmp_slices(&a.centers, &b.centers))
        .then_with(|| total_cmp_slices(&a.tangents, &b.tangents))
        .is_gt();
    let cross = if swap { cross_product(inv_s2, b, &nb, a, &na) } else { cross_product(inv_s2, a, &na, b, &nb) };
    let value = (self_product(inv_s2, a, &na) + self_product(inv_s2, b, &nb)) - 2.0 * cross;
    Ok(value.max(0.0))
}

/// Attachment value and its gradient with respect to `points`, where the
/// source representation is built from `points` through `segments`.
///
/// The value is not clamped so it stays consistent with the gradient.
pub fn attachment_gradient(
    spec: &AttachmentSpec,
    points: &[Point3],
    segments: &[(usize, usize)],
    target: &CurrentRepresentation,
) -> Result<(f64, Vec<Vec3>)> {
    let a = current_from_points(points, segments)?;
    if a.is_empty() || target.is_empty() {
        return Err(Error::EmptyInput("attachment needs non-empty representations"));
    }
    let na = norms(&a)?;
    let nb = norms(target)?;
    let inv_s2 = 1.0 / (spec.spatial_sigma * spec.spatial_sigma);

    let mut gc = vec![Vec3::ZERO; a.len()];
    let mut gt = vec![Vec3::ZERO; a.len()];
    let mut self_sum = 0.0;
    for m in 0..a.len() {
        let (cm, tm) = (a.centers[m], a.tangents[m]);
        self_sum += tm.norm_squared();
        gt[m] += tm * 2.0;
        for n in m + 1..a.len() {
            let (cn, tn) = (a.centers[n], a.tangents[n]);
            let d = cm - cn;
            let k = (-d.norm_squared() * inv_s2).exp();
            let f = angular(tm, na[m], tn, na[n]);
            self_sum += 2.0 * k * f;
            // pair counted twice in the double sum
            let dk = d * (-2.0 * inv_s2 * k);
            gc[m] += dk * (2.0 * f);
            gc[n] -= dk * (2.0 * f);
            gt[m] += angular_grad(tm, na[m], tn, na[n]) * (2.0 * k);
            gt[n] += angular_grad(tn, na[n], tm, na[m]) * (2.0 * k);
        }
    }
    let mut cross = 0.0;
    for m in 0..a.len() {
        let (cm, tm) = (a.centers[m], a.tangents[m]);
        for n in 0..target.len() {
            let (cn, tn) = (target.centers[n], target.tangents[n]);
            let d = cm - cn;
            let k = (-d.norm_squared() * inv_s2).exp();
            let f = angular(tm, na[m], tn, nb[n]);
            cross += k * f;
            gc[m] -= d * (-2.0 * inv_s2 * k * 2.0 * f);
            gt[m] -= angular_grad(tm, na[m], tn, nb[n]) * (2.0 * k);
        }
    }
    let value = self_sum - 2.0 * cross + self_product(inv_s2, target, &nb);

    let mut grad = vec![Vec3::ZERO; points.len()];
    for (m, &(u, v)) in segments.iter().enumerate() {
        let half = gc[m] * 0.5;
        grad[u] += half - gt[m];
        grad[v] += half + gt[m];
    }
    Ok((value, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{Branch, LabelId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_segment(y: f64) -> CurrentRepresentation {
        CurrentRepresentation { centers: vec![Vec3::new(0.5, y, 0.0)], tangents: vec![Vec3::new(1.0, 0.0, 0.0)] }
    }

    #[test]
    fn single_segment_current() {
        let t = VascularTree::new(
            vec![Branch::new(vec![Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0)], LabelId(1))],
            &[],
            0,
        )
        .unwrap();
        let c = to_current(&t).unwrap();
        assert_eq!(c.centers, vec![Vec3::new(0.5, 0.0, 0.0)]);
        assert_eq!(c.tangents, vec![Vec3::new(1.0, 0.0, 0.0)]);
    }

    #[test]
    fn collinear_tangents_telescope() {
        let pts = [Vec3::ZERO, Vec3::new(0.3, 0.3, 0.0), Vec3::new(1.0, 1.0, 0.0)];
        let c = current_from_points(&pts, &[(0, 1), (1, 2)]).unwrap();
        let sum = c.tangents[0] + c.tangents[1];
        assert!((sum - Vec3::new(1.0, 1.0, 0.0)).norm() < 1e-15);
        assert!(current_from_points(&[Vec3::ZERO, Vec3::ZERO], &[(0, 1)]).is_err());
    }

    #[test]
    fn parallel_segments_closed_form() {
        let spec = AttachmentSpec::new(1.0).unwrap();
        for d in [0.0, 0.1, 0.5, 1.0, 2.0] {
            let v = attachment_value(&spec, &unit_segment(0.0), &unit_segment(d)).unwrap();
            let expected = 2.0 - 2.0 * (-d * d).exp();
            assert!((v - expected).abs() < 1e-14, "d={d}: {v} vs {expected}");
        }
    }

    #[test]
    fn flipping_a_segment_keeps_value() {
        let spec = AttachmentSpec::new(0.7).unwrap();
        let a = unit_segment(0.0);
        let mut flipped = unit_segment(0.0);
        flipped.tangents[0] = -flipped.tangents[0];
        let b = CurrentRepresentation {
            centers: vec![Vec3::new(0.2, 0.4, 0.1)],
            tangents: vec![Vec3::new(0.3, 1.0, 0.0)],
        };
        let v1 = attachment_value(&spec, &a, &b).unwrap();
        let v2 = attachment_value(&spec, &flipped, &b).unwrap();
        assert!((v1 - v2).abs() < 1e-15);
    }

    #[test]
    fn identical_inputs_have_zero_gradient() {
        let pts = [Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(1.5, 0.5, 0.2)];
        let segs = [(0, 1), (1, 2)];
        let target = current_from_points(&pts, &segs).unwrap();
        let (v, g) = attachment_gradient(&AttachmentSpec::new(0.8).unwrap(), &pts, &segs, &target).unwrap();
        assert!(v.abs() < 1e-10);
        assert!(g.iter().map(|x| x.norm()).fold(0.0, f64::max) < 1e-8);
    }

    #[test]
    fn translated_copy_pulls_back() {
        // target shifted along -x: both endpoints should be pushed along -x
        let pts = [Vec3::ZERO, Vec3::new(0.0, 1.0, 0.0)];
        let target = current_from_points(&[Vec3::new(-0.3, 0.0, 0.0), Vec3::new(-0.3, 1.0, 0.0)], &[(0, 1)]).unwrap();
        let (_, g) = attachment_gradient(&AttachmentSpec::new(1.0).unwrap(), &pts, &[(0, 1)], &target).unwrap();
        // descent direction is -g
        assert!(g[0].x > 0.0 && g[1].x > 0.0, "{g:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let spec = AttachmentSpec::new(0.6).unwrap();
        let mut rand_pt = || Vec3::new(rng.random(), rng.random(), rng.random());
        let pts: Vec<Vec3> = (0..6).map(|_| rand_pt()).collect();
        let tpts: Vec<Vec3> = (0..6).map(|_| rand_pt()).collect();
        let segs = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)];
        let target = current_from_points(&tpts, &segs).unwrap();
        let (_, g) = attachment_gradient(&spec, &pts, &segs, &target).unwrap();
        let value = |p: &[Vec3]| attachment_gradient(&spec, p, &segs, &target).unwrap().0;
        let h = 1e-5;
        for i in 0..pts.len() {
            for c in 0..3 {
                let mut plus = pts.clone();
                let mut minus = pts.clone();
                let mut a = plus[i].to_array();
                a[c] += h;
                plus[i] = Vec3::from_array(a);
                let mut b = minus[i].to_array();
                b[c] -= h;
                minus[i] = Vec3::from_array(b);
                let fd = (value(&plus) - value(&minus)) / (2.0 * h);
                assert!((g[i][c] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "{} vs {}", g[i][c], fd);
            }
        }
    }
}
