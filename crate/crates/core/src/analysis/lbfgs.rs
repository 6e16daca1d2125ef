//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 40;
const MAX_ZOOM: usize = 40;

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop when `‖g‖ ≤ gradient_tolerance · ‖g₀‖`.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 20,
            max_iterations: 500,
            gradient_tolerance: 1e-12,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// No step satisfied the Wolfe conditions, usually at roundoff level.
    LineSearchStalled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LbfgsReport {
    pub x: Vec<f64>,
    /// Objective at `x₀` and after every accepted step.
    pub history: Vec<f64>,
    pub initial_gradient_norm: f64,
    pub final_gradient_norm: f64,
    pub iterations: usize,
    pub stop: StopReason,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(x: &[f64], a: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(x, d)| x + a * d).collect()
}

struct Point {
    a: f64,
    f: f64,
    g: Vec<f64>,
    d: f64,
}

/// Minimizer of the cubic through two points with slopes, kept inside the bracket.
fn cubic_step(lo: &Point, hi: &Point) -> f64 {
    let (a1, a2) = (lo.a, hi.a);
    let d1 = lo.d + hi.d - 3.0 * (lo.f - hi.f) / (a1 - a2);
    let disc = d1 * d1 - lo.d * hi.d;
    let (left, right) = (a1.min(a2), a1.max(a2));
    let margin = 0.1 * (right - left);
    let bisect = 0.5 * (a1 + a2);
    if disc < 0.0 {
        return bisect;
    }
    let d2 = (a2 - a1).signum() * disc.sqrt();
    let a = a2 - (a2 - a1) * (hi.d + d2 - d1) / (hi.d - lo.d + 2.0 * d2);
    if a.is_finite() && a > left + margin && a < right - margin {
        a
    } else {
        bisect
    }
}

fn line_search<F>(f: &F, x: &[f64], f0: f64, d0: f64, dir: &[f64], alpha0: f64) -> Option<Point>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let eval = |a: f64| {
        let (fa, ga) = f(&axpy(x, a, dir));
        let da = dot(&ga, dir);
        Point {
            a,
            f: fa,
            g: ga,
            d: da,
        }
    };
    let armijo = |p: &Point| p.f <= f0 + C1 * p.a * d0;
    let curvature = |p: &Point| p.d.abs() <= -C2 * d0;

    let zoom = |mut lo: Point, mut hi: Point| -> Option<Point> {
        for _ in 0..MAX_ZOOM {
            let p = eval(cubic_step(&lo, &hi));
            if !armijo(&p) || p.f >= lo.f {
                hi = p;
            } else {
                if curvature(&p) {
                    return Some(p);
                }
                if p.d * (hi.a - lo.a) >= 0.0 {
                    hi = lo;
                }
                lo = p;
            }
            if (hi.a - lo.a).abs() <= f64::EPSILON * lo.a.abs().max(1e-300) {
                break;
            }
        }
        (lo.a > 0.0 && lo.f < f0).then_some(lo)
    };

    let mut prev = Point {
        a: 0.0,
        f: f0,
        g: Vec::new(),
        d: d0,
    };
    let mut a = alpha0;
    for i in 0..MAX_BRACKET {
        let p = eval(a);
        if !p.f.is_finite() {
            a = 0.5 * (prev.a + a);
            continue;
        }
        if !armijo(&p) || (i > 0 && p.f >= prev.f) {
            return zoom(prev, p);
        }
        if curvature(&p) {
            return Some(p);
        }
        if p.d >= 0.0 {
            return zoom(p, prev);
        }
        a *= 2.0;
        prev = p;
    }
    (prev.a > 0.0).then_some(prev)
}

/// Minimizes a smooth function given as `x ↦ (f(x), ∇f(x))`.
pub fn minimize<F>(f: F, x0: Vec<f64>, opts: &LbfgsOptions) -> LbfgsReport
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (mut fx, mut g) = f(&x0);
    let mut x = x0;
    let g0 = dot(&g, &g).sqrt();
    let mut history = vec![fx];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    while iterations < opts.max_iterations {
        let gnorm = dot(&g, &g).sqrt();
        if gnorm <= opts.gradient_tolerance * g0 {
            stop = StopReason::Converged;
            break;
        }
        // Two-loop recursion for the search direction.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q = axpy(&q, -a, y);
            alphas.push(a);
        }
        let gamma = pairs
            .back()
            .map_or(1.0 / gnorm, |(s, y, _)| dot(s, y) / dot(y, y));
        let mut r: Vec<f64> = q.iter().map(|v| gamma * v).collect();
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            r = axpy(&r, a - b, s);
        }
        let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut d0 = dot(&g, &dir);
        if !(d0 < 0.0) {
            pairs.clear();
            dir = g.iter().map(|v| -v / gnorm).collect();
            d0 = -gnorm;
        }
        let Some(p) = line_search(&f, &x, fx, d0, &dir, 1.0) else {
            stop = StopReason::LineSearchStalled;
            break;
        };
        let x_new = axpy(&x, p.a, &dir);
        let s: Vec<f64> = dir.iter().map(|v| p.a * v).collect();
        let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        fx = p.f;
        g = p.g;
        history.push(fx);
        iterations += 1;
    }
    if stop == StopReason::MaxIterations && dot(&g, &g).sqrt() <= opts.gradient_tolerance * g0 {
        stop = StopReason::Converged;
    }
    LbfgsReport {
        x,
        history,
        initial_gradient_norm: g0,
        final_gradient_norm: dot(&g, &g).sqrt(),
        iterations,
        stop,
    }
}
