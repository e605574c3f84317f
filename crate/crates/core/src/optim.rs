//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Follows the two-loop recursion and the bracketing/zoom line search of
//! Nocedal & Wright (Algorithms 7.4, 3.5 and 3.6) with cubic interpolation
//! for trial steps. Every accepted step satisfies the sufficient-decrease
//! condition, so the objective is non-increasing across iterations.

use std::collections::VecDeque;

use crate::error::Result;

/// One objective evaluation. `info` carries caller data (for example a loss
/// breakdown) through to the step callback.
#[derive(Debug, Clone)]
pub struct Eval<T> {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub info: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
    /// Stop when the largest gradient component falls below this.
    pub gradient_tolerance: f64,
    /// When set, the first step is scaled so that no coordinate moves by
    /// more than this amount. Otherwise the first step is `min(1, 1/|g|_1)`.
    pub first_step_max_change: Option<f64>,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            history: 10,
            max_iterations: 100,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
            gradient_tolerance: 1e-12,
            first_step_max_change: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    MaxIterations,
    Converged,
    LineSearchFailed,
    /// The objective returned a non-finite value or gradient at this
    /// iteration (0 = starting point).
    NonFinite { iteration: usize },
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome<T> {
    pub x: Vec<f64>,
    pub last: Eval<T>,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn is_finite<T>(e: &Eval<T>) -> bool {
    e.value.is_finite() && e.gradient.iter().all(|g| g.is_finite())
}

/// Minimizes `objective` from `x0`. `on_step` is called with the iteration
/// number (0 for the starting point) and the accepted evaluation.
pub fn minimize<T: Clone>(
    x0: Vec<f64>,
    mut objective: impl FnMut(&[f64]) -> Result<Eval<T>>,
    options: &LbfgsOptions,
    mut on_step: impl FnMut(usize, &[f64], &Eval<T>),
) -> Result<LbfgsOutcome<T>> {
    let mut x = x0;
    let mut current = objective(&x)?;
    let mut evaluations = 1;
    if !is_finite(&current) {
        return Ok(LbfgsOutcome {
            x,
            last: current,
            iterations: 0,
            evaluations,
            termination: Termination::NonFinite { iteration: 0 },
        });
    }
    on_step(0, &x, &current);

    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(options.history);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    for iter in 1..=options.max_iterations {
        let g = &current.gradient;
        let gmax = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= options.gradient_tolerance {
            termination = Termination::Converged;
            break;
        }

        let mut direction = two_loop(g, &history);
        let mut slope = dot(g, &direction);
        if slope >= 0.0 || !slope.is_finite() {
            history.clear();
            direction = g.iter().map(|v| -v).collect();
            slope = dot(g, &direction);
        }

        let t0 = if history.is_empty() {
            match options.first_step_max_change {
                Some(limit) => limit / gmax,
                None => (1.0 / g.iter().map(|v| v.abs()).sum::<f64>()).min(1.0),
            }
        } else {
            1.0
        };

        let mut phi = |t: f64| -> Result<(Vec<f64>, Eval<T>)> {
            let trial: Vec<f64> = x.iter().zip(&direction).map(|(xi, di)| xi + t * di).collect();
            let e = objective(&trial)?;
            evaluations += 1;
            Ok((trial, e))
        };
        let search = strong_wolfe(&mut phi, &direction, current.value, slope, t0, options)?;
        let (x_new, next) = match search {
            LineSearch::Accepted(x_new, next) => (x_new, next),
            LineSearch::NonFinite => {
                termination = Termination::NonFinite { iteration: iter };
                break;
            }
            LineSearch::Failed => {
                termination = Termination::LineSearchFailed;
                break;
            }
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.gradient.iter().zip(&current.gradient).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == options.history {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        current = next;
        iterations = iter;
        on_step(iter, &x, &current);
    }

    Ok(LbfgsOutcome {
        x,
        last: current,
        iterations,
        evaluations,
        termination,
    })
}

fn two_loop(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

enum LineSearch<T> {
    Accepted(Vec<f64>, Eval<T>),
    Failed,
    NonFinite,
}

/// A trial step. `at` is `None` for the origin and for trials whose
/// evaluation was not finite.
struct Point<T> {
    t: f64,
    f: f64,
    slope: f64,
    at: Option<(Vec<f64>, Eval<T>)>,
}

/// Minimizer of the cubic interpolating two points with derivatives,
/// clamped to `[lo, hi]`; the midpoint when the cubic has no usable minimum.
#[allow(clippy::too_many_arguments)]
fn cubic_min(t1: f64, f1: f64, g1: f64, t2: f64, f2: f64, g2: f64, lo: f64, hi: f64) -> f64 {
    let d1 = g1 + g2 - 3.0 * (f1 - f2) / (t1 - t2);
    let disc = d1 * d1 - g1 * g2;
    if disc >= 0.0 {
        let d2 = disc.sqrt();
        let m = if t1 <= t2 {
            t2 - (t2 - t1) * ((g2 + d2 - d1) / (g2 - g1 + 2.0 * d2))
        } else {
            t1 - (t1 - t2) * ((g1 + d2 - d1) / (g1 - g2 + 2.0 * d2))
        };
        if m.is_finite() {
            return m.clamp(lo, hi);
        }
    }
    0.5 * (lo + hi)
}

struct Search<'a, P> {
    phi: &'a mut P,
    f0: f64,
    slope0: f64,
    c1: f64,
    c2: f64,
    max_evals: usize,
    evals: usize,
    saw_non_finite: bool,
}

impl<P> Search<'_, P> {
    fn probe<T>(&mut self, t: f64, direction: &[f64]) -> Result<Point<T>>
    where
        P: FnMut(f64) -> Result<(Vec<f64>, Eval<T>)>,
    {
        let (x, eval) = (self.phi)(t)?;
        self.evals += 1;
        if !is_finite(&eval) {
            self.saw_non_finite = true;
            return Ok(Point { t, f: f64::INFINITY, slope: f64::NAN, at: None });
        }
        let slope = dot(&eval.gradient, direction);
        Ok(Point { t, f: eval.value, slope, at: Some((x, eval)) })
    }

    fn armijo(&self, t: f64, f: f64) -> bool {
        f <= self.f0 + self.c1 * t * self.slope0
    }

    fn curvature(&self, slope: f64) -> bool {
        slope.abs() <= -self.c2 * self.slope0
    }

    fn accept<T>(&self, p: Point<T>) -> LineSearch<T> {
        match p.at {
            Some((x, e)) => LineSearch::Accepted(x, e),
            None if self.saw_non_finite => LineSearch::NonFinite,
            None => LineSearch::Failed,
        }
    }

    fn run<T>(&mut self, t_init: f64, direction: &[f64]) -> Result<LineSearch<T>>
    where
        P: FnMut(f64) -> Result<(Vec<f64>, Eval<T>)>,
    {
        let mut prev: Point<T> = Point { t: 0.0, f: self.f0, slope: self.slope0, at: None };
        let mut t = t_init;
        loop {
            let p = self.probe(t, direction)?;
            if p.at.is_none() || !self.armijo(p.t, p.f) || (prev.at.is_some() && p.f >= prev.f) {
                return self.zoom(prev, p, direction);
            }
            if self.curvature(p.slope) {
                return Ok(self.accept(p));
            }
            if p.slope >= 0.0 {
                return self.zoom(p, prev, direction);
            }
            if self.evals >= self.max_evals {
                return Ok(self.accept(p));
            }
            let next = cubic_min(prev.t, prev.f, prev.slope, p.t, p.f, p.slope, p.t + 0.01 * (p.t - prev.t), p.t * 10.0);
            prev = p;
            t = next;
        }
    }

    /// `lo` always satisfies sufficient decrease (or is the origin); the
    /// bracket `[lo, hi]` contains a strong-Wolfe point.
    fn zoom<T>(&mut self, mut lo: Point<T>, mut hi: Point<T>, direction: &[f64]) -> Result<LineSearch<T>>
    where
        P: FnMut(f64) -> Result<(Vec<f64>, Eval<T>)>,
    {
        while self.evals < self.max_evals {
            let (a, b) = if lo.t < hi.t { (lo.t, hi.t) } else { (hi.t, lo.t) };
            let width = b - a;
            if width <= 1e-14 * b.abs().max(f64::MIN_POSITIVE) {
                break;
            }
            let t = if hi.f.is_finite() && hi.slope.is_finite() {
                cubic_min(lo.t, lo.f, lo.slope, hi.t, hi.f, hi.slope, a + 0.1 * width, b - 0.1 * width)
            } else {
                0.5 * (a + b)
            };
            let p = self.probe(t, direction)?;
            if p.at.is_none() || !self.armijo(p.t, p.f) || p.f >= lo.f {
                hi = p;
            } else {
                if self.curvature(p.slope) {
                    return Ok(self.accept(p));
                }
                if p.slope * (hi.t - lo.t) >= 0.0 {
                    hi = std::mem::replace(&mut lo, p);
                } else {
                    lo = p;
                }
            }
        }
        Ok(self.accept(lo))
    }
}

fn strong_wolfe<T: Clone>(
    phi: &mut impl FnMut(f64) -> Result<(Vec<f64>, Eval<T>)>,
    direction: &[f64],
    f0: f64,
    slope0: f64,
    t_init: f64,
    opts: &LbfgsOptions,
) -> Result<LineSearch<T>> {
    let mut search = Search {
        phi,
        f0,
        slope0,
        c1: opts.c1,
        c2: opts.c2,
        max_evals: opts.max_line_search.max(1),
        evals: 0,
        saw_non_finite: false,
    };
    search.run(t_init, direction)
}
