//! Limited-memory BFGS with a strong Wolfe line search (bracketing and
//! cubic-interpolation zoom).

use alloc::collections::VecDeque;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsConfig {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iters: usize,
    /// Stop once `|g| <= grad_rtol * |g_0|`.
    pub grad_rtol: f64,
    /// Stop once `|g| <= grad_atol`, whatever `|g_0|` was.
    pub grad_atol: f64,
    /// Stop once an accepted step decreases `f` by less than `ftol * |f|`.
    pub ftol: f64,
    /// Sufficient decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Objective evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig { memory: 10, max_iters: 200, grad_rtol: 1e-5, grad_atol: 1e-8, ftol: 1e-10, c1: 1e-4, c2: 0.9, max_line_search: 25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    /// No step satisfying the Wolfe conditions was found; the best iterate
    /// so far is returned.
    LineSearchFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

struct Trial {
    alpha: f64,
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
    slope: f64,
}

struct LineSearch<'a, F> {
    objective: &'a mut F,
    x: &'a [f64],
    dir: &'a [f64],
    f0: f64,
    slope0: f64,
    cfg: &'a LbfgsConfig,
    evaluations: usize,
}

impl<F, E> LineSearch<'_, F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    fn eval(&mut self, alpha: f64) -> Trial {
        self.evaluations += 1;
        let x: Vec<f64> = self.x.iter().zip(self.dir).map(|(x, d)| x + alpha * d).collect();
        match (self.objective)(&x) {
            Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
                let slope = dot(&g, self.dir);
                Trial { alpha, x, f, g, slope }
            }
            // divergent trial points are treated as infinitely bad
            _ => Trial { alpha, x, f: f64::INFINITY, g: Vec::new(), slope: f64::NAN },
        }
    }

    fn armijo(&self, t: &Trial) -> bool {
        t.f <= self.f0 + self.cfg.c1 * t.alpha * self.slope0
    }

    fn curvature(&self, t: &Trial) -> bool {
        t.slope.abs() <= -self.cfg.c2 * self.slope0
    }

    fn budget_left(&self) -> bool {
        self.evaluations < self.cfg.max_line_search
    }

    /// Returns the accepted trial, or the best Armijo point when the budget
    /// runs out, or `None`.
    fn search(&mut self, mut alpha: f64) -> Option<Trial> {
        let mut prev = Trial { alpha: 0.0, x: self.x.to_vec(), f: self.f0, g: Vec::new(), slope: self.slope0 };
        let mut first = true;
        let mut fallback: Option<Trial> = None;
        while self.budget_left() {
            let t = self.eval(alpha);
            if !self.armijo(&t) || (!first && t.f >= prev.f) {
                return self.zoom(prev, t, fallback);
            }
            if self.curvature(&t) {
                return Some(t);
            }
            if t.slope >= 0.0 {
                return self.zoom(t, prev, fallback);
            }
            first = false;
            alpha *= 2.0;
            prev = t;
            if fallback.as_ref().is_none_or(|b| prev.f < b.f) {
                fallback = Some(Trial { alpha: prev.alpha, x: prev.x.clone(), f: prev.f, g: prev.g.clone(), slope: prev.slope });
            }
        }
        fallback
    }

    fn zoom(&mut self, mut lo: Trial, mut hi: Trial, mut fallback: Option<Trial>) -> Option<Trial> {
        if lo.alpha != 0.0 && self.armijo(&lo) && fallback.as_ref().is_none_or(|b| lo.f < b.f) {
            fallback = Some(Trial { alpha: lo.alpha, x: lo.x.clone(), f: lo.f, g: lo.g.clone(), slope: lo.slope });
        }
        while self.budget_left() {
            let alpha = interpolate(&lo, &hi);
            if (alpha - lo.alpha).abs() <= f64::EPSILON * lo.alpha.abs().max(1e-300) {
                break;
            }
            let t = self.eval(alpha);
            if !self.armijo(&t) || t.f >= lo.f {
                hi = t;
            } else {
                if self.curvature(&t) {
                    return Some(t);
                }
                if t.slope * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                if fallback.as_ref().is_none_or(|b| t.f < b.f) {
                    fallback = Some(Trial { alpha: t.alpha, x: t.x.clone(), f: t.f, g: t.g.clone(), slope: t.slope });
                }
                lo = t;
            }
        }
        fallback
    }
}

/// Minimizer of the cubic through `(lo, hi)`, safeguarded to the inner 80%
/// of the interval; bisection when the cubic is unusable.
fn interpolate(lo: &Trial, hi: &Trial) -> f64 {
    let (a, b) = (lo.alpha, hi.alpha);
    let (left, right) = if a < b { (a, b) } else { (b, a) };
    let width = right - left;
    let mid = 0.5 * (a + b);
    if !(hi.f.is_finite() && hi.slope.is_finite() && lo.slope.is_finite()) {
        return mid;
    }
    let d1 = lo.slope + hi.slope - 3.0 * (lo.f - hi.f) / (a - b);
    let disc = d1 * d1 - lo.slope * hi.slope;
    if disc < 0.0 {
        return mid;
    }
    let d2 = (b - a).signum() * disc.sqrt();
    let denom = hi.slope - lo.slope + 2.0 * d2;
    if denom == 0.0 {
        return mid;
    }
    let t = b - (b - a) * (hi.slope + d2 - d1) / denom;
    if !t.is_finite() {
        return mid;
    }
    t.clamp(left + 0.1 * width, right - 0.1 * width)
}

/// Minimizes `objective` from `x0`. The objective returns the value and the
/// gradient; an error at `x0` is returned, errors at trial points are treated
/// as infinite values.
pub fn minimize<F, E>(mut objective: F, x0: Vec<f64>, cfg: &LbfgsConfig) -> Result<LbfgsOutcome, E>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    let (mut f, mut g) = objective(&x0)?;
    let mut x = x0;
    let mut evaluations = 1;
    let mut trace = alloc::vec![f];
    let g0 = norm(&g);
    let gtol = (cfg.grad_rtol * g0).max(cfg.grad_atol);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(cfg.memory);
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;

    if g0 <= cfg.grad_atol || !f.is_finite() {
        return Ok(LbfgsOutcome {
            x,
            value: f,
            gradient: g,
            trace,
            iterations,
            evaluations,
            termination: Termination::GradientTolerance,
        });
    }

    while iterations < cfg.max_iters {
        let mut dir = two_loop(&g, &history);
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            history.clear();
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        let alpha0 = if history.is_empty() { (1.0 / norm(&dir)).min(1.0) } else { 1.0 };
        let mut ls = LineSearch { objective: &mut objective, x: &x, dir: &dir, f0: f, slope0: slope, cfg, evaluations: 0 };
        let found = ls.search(alpha0);
        evaluations += ls.evaluations;
        let Some(step) = found else {
            if history.is_empty() {
                termination = Termination::LineSearchFailed;
                break;
            }
            // retry along steepest descent with a fresh memory
            history.clear();
            continue;
        };

        iterations += 1;
        let s: Vec<f64> = step.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = step.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let decrease = f - step.f;
        x = step.x;
        f = step.f;
        g = step.g;
        trace.push(f);

        if norm(&g) <= gtol {
            termination = Termination::GradientTolerance;
            break;
        }
        if decrease <= cfg.ftol * f.abs().max(f64::MIN_POSITIVE) {
            termination = Termination::FunctionTolerance;
            break;
        }
    }
    Ok(LbfgsOutcome { x, value: f, gradient: g, trace, iterations, evaluations, termination })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}
