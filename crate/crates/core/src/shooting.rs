//! Geodesic shooting: fixed-step RK4 integration of the Hamiltonian system
//!
//! ```text
//! dq_i/dt =  sum_j K(q_i, q_j) p_j
//! dp_i/dt = -1/2 grad_{q_i} sum_{j,l} <p_j, K(q_j, q_l) p_l>
//! ```
//!
//! from `t = 0` to `t = 1`, plus the exact reverse-mode derivative of the
//! discrete flow used by registration.

use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;
use crate::error::{check_len, Error, Result};
use crate::geometry::{Point3, Vec3};
use crate::kernel::KernelSpec;

pub const DEFAULT_STEPS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntegratorConfig {
    pub steps: usize,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig { steps: DEFAULT_STEPS }
    }
}

impl IntegratorConfig {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidConfig("integrator needs at least one step"));
        }
        Ok(IntegratorConfig { steps })
    }

    fn dt(&self) -> f64 {
        1.0 / self.steps as f64
    }
}

/// Initial momenta attached to control points; the full parameterization of
/// a deformation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MomentaField {
    pub momenta: Vec<Vec3>,
}

impl MomentaField {
    pub fn new(momenta: Vec<Vec3>) -> Self {
        MomentaField { momenta }
    }

    pub fn zeros(n: usize) -> Self {
        MomentaField { momenta: vec![Vec3::ZERO; n] }
    }

    pub fn len(&self) -> usize {
        self.momenta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.momenta.is_empty()
    }

    pub fn norm_inf(&self) -> f64 {
        self.momenta.iter().flat_map(|v| v.to_array()).fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.momenta.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        MomentaField { momenta: self.momenta.iter().map(|v| *v * s).collect() }
    }

    pub fn is_finite(&self) -> bool {
        self.momenta.iter().all(|v| v.is_finite())
    }
}

/// Phase-space state of the control points.
#[derive(Debug, Clone, PartialEq)]
struct State {
    q: Vec<Vec3>,
    p: Vec<Vec3>,
}

impl State {
    fn axpy(&self, h: f64, d: &State) -> State {
        State {
            q: self.q.iter().zip(&d.q).map(|(a, b)| *a + *b * h).collect(),
            p: self.p.iter().zip(&d.p).map(|(a, b)| *a + *b * h).collect(),
        }
    }

    fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.p).all(|v| v.is_finite())
    }
}

/// Trajectory of a shoot. `positions[k]` is the configuration at `t = k / steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShootingResult {
    pub positions: Vec<Vec<Point3>>,
    pub momenta: Vec<Vec<Vec3>>,
    /// Hamiltonian evaluated at every frame.
    pub hamiltonian_trace: Vec<f64>,
    steps: usize,
    /// Intermediate RK4 states 2..=4 of every step.
    stages: Vec<[State; 3]>,
}

impl ShootingResult {
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn final_positions(&self) -> &[Point3] {
        &self.positions[self.steps]
    }

    pub fn final_momenta(&self) -> &[Vec3] {
        &self.momenta[self.steps]
    }

    /// Largest `|H(t) - H(0)| / |H(0)|` along the trajectory (absolute
    /// drift when `H(0) = 0`).
    pub fn relative_hamiltonian_drift(&self) -> f64 {
        let h0 = self.hamiltonian_trace[0];
        let scale = if h0 == 0.0 { 1.0 } else { h0.abs() };
        self.hamiltonian_trace.iter().map(|h| (h - h0).abs() / scale).fold(0.0, f64::max)
    }

    fn frame(&self, k: usize) -> State {
        State { q: self.positions[k].clone(), p: self.momenta[k].clone() }
    }
}

/// `H(q, p) = 1/2 sum_{i,j} <p_i, K(q_i, q_j) p_j>`.
pub fn hamiltonian(spec: &KernelSpec, points: &[Point3], momenta: &[Vec3]) -> Result<f64> {
    Ok(0.5 * spec.quadratic_form(points, momenta)?)
}

/// Deformation energy of the geodesic with initial state `(q, p)`:
/// `p^T K(q) p`, twice the Hamiltonian.
pub fn path_energy(spec: &KernelSpec, points: &[Point3], momenta: &[Vec3]) -> Result<f64> {
    spec.quadratic_form(points, momenta)
}

/// Hamiltonian vector field. Returns `H(q, p)` as a by-product.
fn rhs(spec: &KernelSpec, s: &State) -> (State, f64) {
    let n = s.q.len();
    let diag = spec.scale_count() as f64;
    let mut dq: Vec<Vec3> = s.p.iter().map(|p| *p * diag).collect();
    let mut dp = vec![Vec3::ZERO; n];
    let mut energy: f64 = s.p.iter().map(|p| diag * p.norm_squared()).sum();
    for i in 0..n {
        let (qi, pi) = (s.q[i], s.p[i]);
        for j in i + 1..n {
            let r = qi - s.q[j];
            let pj = s.p[j];
            let (w, slope) = spec.value_and_slope(r.norm_squared());
            let pij = pi.dot(pj);
            dq[i] += pj * w;
            dq[j] += pi * w;
            let f = r * (-2.0 * slope * pij);
            dp[i] += f;
            dp[j] -= f;
            energy += 2.0 * w * pij;
        }
    }
    (State { q: dq, p: dp }, 0.5 * energy)
}

/// Accumulates `J(s)^T (a, b)` into `(gq, gp)`, where `J` is the Jacobian of
/// [`rhs`] at `s` and `(a, b)` are cotangents of `(dq, dp)`.
fn rhs_vjp(spec: &KernelSpec, s: &State, a: &[Vec3], b: &[Vec3], gq: &mut [Vec3], gp: &mut [Vec3]) {
    let n = s.q.len();
    let diag = spec.scale_count() as f64;
    for i in 0..n {
        gp[i] += a[i] * diag;
    }
    for i in 0..n {
        let (qi, pi, ai, bi) = (s.q[i], s.p[i], a[i], b[i]);
        for j in i + 1..n {
            let (pj, aj) = (s.p[j], a[j]);
            let r = qi - s.q[j];
            let rad = spec.radial(r.norm_squared());
            let pij = pi.dot(pj);
            let db = bi - b[j];
            let beta = db.dot(r);

            // velocity part: w(|r|^2) (<a_i, p_j> + <a_j, p_i>)
            gp[j] += ai * rad.value;
            gp[i] += aj * rad.value;
            let cross = ai.dot(pj) + aj.dot(pi);
            let gv = r * (2.0 * rad.d1 * cross);

            // momentum part: -2 <p_i, p_j> w'(|r|^2) <b_i - b_j, r>
            gp[i] += pj * (-2.0 * rad.d1 * beta);
            gp[j] += pi * (-2.0 * rad.d1 * beta);
            let gm = (r * (2.0 * rad.d2 * beta) + db * rad.d1) * (-2.0 * pij);

            let g = gv + gm;
            gq[i] += g;
            gq[j] -= g;
        }
    }
}

fn check_finite(s: &State, step: usize) -> Result<()> {
    if s.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { step })
    }
}

/// Integrates the geodesic equations with `cfg.steps` RK4 steps.
pub fn shoot(spec: &KernelSpec, points: &[Point3], momenta: &[Vec3], cfg: &IntegratorConfig) -> Result<ShootingResult> {
    check_len(points.len(), momenta.len())?;
    if cfg.steps == 0 {
        return Err(Error::InvalidConfig("integrator needs at least one step"));
    }
    let h = cfg.dt();
    let mut y = State { q: points.to_vec(), p: momenta.to_vec() };
    check_finite(&y, 0)?;
    let mut positions = Vec::with_capacity(cfg.steps + 1);
    let mut momenta_traj = Vec::with_capacity(cfg.steps + 1);
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut stages = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (k1, energy) = rhs(spec, &y);
        trace.push(energy);
        let y2 = y.axpy(0.5 * h, &k1);
        let (k2, _) = rhs(spec, &y2);
        let y3 = y.axpy(0.5 * h, &k2);
        let (k3, _) = rhs(spec, &y3);
        let y4 = y.axpy(h, &k3);
        let (k4, _) = rhs(spec, &y4);
        let next = State {
            q: (0..y.q.len())
                .map(|i| y.q[i] + (k1.q[i] + (k2.q[i] + k3.q[i]) * 2.0 + k4.q[i]) * (h / 6.0))
                .collect(),
            p: (0..y.p.len())
                .map(|i| y.p[i] + (k1.p[i] + (k2.p[i] + k3.p[i]) * 2.0 + k4.p[i]) * (h / 6.0))
                .collect(),
        };
        check_finite(&next, step + 1)?;
        positions.push(core::mem::take(&mut y.q));
        momenta_traj.push(core::mem::take(&mut y.p));
        stages.push([y2, y3, y4]);
        y = next;
    }
    trace.push(hamiltonian(spec, &y.q, &y.p)?);
    positions.push(y.q);
    momenta_traj.push(y.p);
    Ok(ShootingResult { positions, momenta: momenta_traj, hamiltonian_trace: trace, steps: cfg.steps, stages })
}

/// Advects passive points through the deformation of a completed shoot,
/// integrating `dx/dt = sum_j K(x, q_j(t)) p_j(t)` with the same RK4 stages
/// as the control points.
pub fn flow_points(
    spec: &KernelSpec,
    shooting: &ShootingResult,
    passive: &[Point3],
    cfg: &IntegratorConfig,
) -> Result<Vec<Point3>> {
    if cfg.steps != shooting.steps {
        return Err(Error::InvalidConfig("integrator steps differ from the stored trajectory"));
    }
    let h = cfg.dt();
    let velocity = |x: &[Point3], q: &[Point3], p: &[Vec3]| spec.matvec(x, q, p);
    let mut x = passive.to_vec();
    for step in 0..shooting.steps {
        let [s2, s3, s4] = &shooting.stages[step];
        let l1 = velocity(&x, &shooting.positions[step], &shooting.momenta[step])?;
        let x2: Vec<Point3> = x.iter().zip(&l1).map(|(a, v)| *a + *v * (0.5 * h)).collect();
        let l2 = velocity(&x2, &s2.q, &s2.p)?;
        let x3: Vec<Point3> = x.iter().zip(&l2).map(|(a, v)| *a + *v * (0.5 * h)).collect();
        let l3 = velocity(&x3, &s3.q, &s3.p)?;
        let x4: Vec<Point3> = x.iter().zip(&l3).map(|(a, v)| *a + *v * h).collect();
        let l4 = velocity(&x4, &s4.q, &s4.p)?;
        for i in 0..x.len() {
            x[i] += (l1[i] + (l2[i] + l3[i]) * 2.0 + l4[i]) * (h / 6.0);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: step + 1 });
        }
    }
    Ok(x)
}

/// Vector-Jacobian product of the discrete map `(q(0), p(0)) -> (q(1), p(1))`.
///
/// Given cotangents of the final positions and momenta, returns the
/// gradients with respect to the initial positions and momenta. This is the
/// exact reverse-mode derivative of the RK4 scheme used by [`shoot`].
pub fn shoot_vjp(
    spec: &KernelSpec,
    shooting: &ShootingResult,
    cot_positions: &[Vec3],
    cot_momenta: &[Vec3],
) -> Result<(Vec<Vec3>, Vec<Vec3>)> {
    let n = shooting.positions[0].len();
    check_len(n, cot_positions.len())?;
    check_len(n, cot_momenta.len())?;
    let h = 1.0 / shooting.steps as f64;
    let mut gq = cot_positions.to_vec();
    let mut gp = cot_momenta.to_vec();
    let mut uq = vec![Vec3::ZERO; n];
    let mut up = vec![Vec3::ZERO; n];
    let scaled = |v: &[Vec3], s: f64| -> Vec<Vec3> { v.iter().map(|x| *x * s).collect() };
    let add_scaled = |dst: &mut Vec<Vec3>, v: &[Vec3], s: f64| {
        for (d, x) in dst.iter_mut().zip(v) {
            *d += *x * s;
        }
    };
    for step in (0..shooting.steps).rev() {
        let y1 = shooting.frame(step);
        let [y2, y3, y4] = &shooting.stages[step];
        let (yq, yp) = (gq.clone(), gp.clone());

        let mut stage = |s: &State, kq: &[Vec3], kp: &[Vec3], gq: &mut Vec<Vec3>, gp: &mut Vec<Vec3>| {
            uq.iter_mut().chain(up.iter_mut()).for_each(|v| *v = Vec3::ZERO);
            rhs_vjp(spec, s, kq, kp, &mut uq, &mut up);
            add_scaled(gq, &uq, 1.0);
            add_scaled(gp, &up, 1.0);
            (uq.clone(), up.clone())
        };

        let (k4q, k4p) = (scaled(&yq, h / 6.0), scaled(&yp, h / 6.0));
        let (u4q, u4p) = stage(y4, &k4q, &k4p, &mut gq, &mut gp);

        let mut k3q = scaled(&yq, h / 3.0);
        let mut k3p = scaled(&yp, h / 3.0);
        add_scaled(&mut k3q, &u4q, h);
        add_scaled(&mut k3p, &u4p, h);
        let (u3q, u3p) = stage(y3, &k3q, &k3p, &mut gq, &mut gp);

        let mut k2q = scaled(&yq, h / 3.0);
        let mut k2p = scaled(&yp, h / 3.0);
        add_scaled(&mut k2q, &u3q, 0.5 * h);
        add_scaled(&mut k2p, &u3p, 0.5 * h);
        let (u2q, u2p) = stage(y2, &k2q, &k2p, &mut gq, &mut gp);

        let mut k1q = scaled(&yq, h / 6.0);
        let mut k1p = scaled(&yp, h / 6.0);
        add_scaled(&mut k1q, &u2q, 0.5 * h);
        add_scaled(&mut k1p, &u2p, 0.5 * h);
        stage(&y1, &k1q, &k1p, &mut gq, &mut gp);
    }
    Ok((gq, gp))
}
