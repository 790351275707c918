//! Projected quasi-Newton minimization over a box.
//!
//! Two-metric projection: variables sitting on a bound with the gradient
//! pointing outward are held by a projected steepest-descent step, the rest
//! move along a BFGS inverse-Hessian direction. Steps follow the projection
//! arc with Armijo backtracking.

use std::time::Instant;

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        Self { lower, upper }
    }

    pub fn uniform(n: usize, lo: f64, hi: f64) -> Self {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn unbounded(n: usize) -> Self {
        Self::uniform(n, f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for ((xi, &lo), &hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *xi = xi.clamp(lo, hi);
        }
    }

    /// Infinity norm of `P(x - g) - x`, zero exactly at a first-order point.
    pub fn projected_gradient_norm(&self, x: &[f64], g: &[f64]) -> f64 {
        let mut m: f64 = 0.0;
        for i in 0..x.len() {
            let p = (x[i] - g[i]).clamp(self.lower[i], self.upper[i]);
            m = m.max((p - x[i]).abs());
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub max_iterations: usize,
    /// Stop when the projected gradient infinity norm drops below this.
    pub pg_tol: f64,
    pub max_backtracks: usize,
    pub deadline: Option<Instant>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            pg_tol: 1e-8,
            max_backtracks: 50,
            deadline: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    /// No further decrease is possible at working precision.
    Stalled,
    Deadline,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub pg_norm: f64,
    pub termination: Termination,
    /// Final dense inverse-Hessian approximation, row-major.
    pub inverse_hessian: Vec<f64>,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

fn identity(n: usize) -> Vec<f64> {
    let mut h = vec![0.0; n * n];
    for i in 0..n {
        h[i * n + i] = 1.0;
    }
    h
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over `bounds` starting at `x0`. `f` writes the gradient into
/// its second argument and returns the value. An inverse-Hessian estimate from
/// a previous related solve may be passed as `h0`.
pub fn minimize<F>(
    mut f: F,
    x0: &[f64],
    bounds: &Bounds,
    settings: &Settings,
    h0: Option<Vec<f64>>,
) -> Outcome
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    assert_eq!(n, bounds.len());
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);

    let mut fresh = h0.as_ref().is_none_or(|h| h.len() != n * n);
    let mut h = match h0 {
        Some(h) if h.len() == n * n => h,
        _ => identity(n),
    };

    let mut d = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut free = vec![false; n];
    let mut iterations = 0;
    let mut termination = Termination::MaxIterations;
    let mut pg = bounds.projected_gradient_norm(&x, &g);

    while iterations < settings.max_iterations {
        if pg <= settings.pg_tol {
            termination = Termination::Converged;
            break;
        }
        if settings.deadline.is_some_and(|t| Instant::now() >= t) {
            termination = Termination::Deadline;
            break;
        }
        if !fx.is_finite() {
            termination = Termination::Stalled;
            break;
        }

        let eps = pg.min(1e-6);
        for i in 0..n {
            let at_lower = x[i] - bounds.lower[i] <= eps && g[i] > 0.0;
            let at_upper = bounds.upper[i] - x[i] <= eps && g[i] < 0.0;
            free[i] = !(at_lower || at_upper);
        }

        let mut direction_ok = false;
        for _attempt in 0..2 {
            for i in 0..n {
                if free[i] {
                    let row = &h[i * n..(i + 1) * n];
                    d[i] = -(0..n).filter(|&j| free[j]).map(|j| row[j] * g[j]).sum::<f64>();
                } else {
                    d[i] = -g[i];
                }
            }
            let slope: f64 = (0..n).filter(|&i| free[i]).map(|i| d[i] * g[i]).sum();
            if slope < 0.0 || free.iter().all(|&fr| !fr) {
                direction_ok = true;
                break;
            }
            h = identity(n);
            fresh = true;
        }
        if !direction_ok {
            termination = Termination::Stalled;
            break;
        }

        let mut alpha = if fresh {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if dmax > 1.0 {
                1.0 / dmax
            } else {
                1.0
            }
        } else {
            1.0
        };

        let mut accepted = false;
        let mut f_new = fx;
        for _ in 0..settings.max_backtracks {
            for i in 0..n {
                x_new[i] = x[i] + alpha * d[i];
            }
            bounds.project(&mut x_new);
            let decrease: f64 = (0..n).map(|i| g[i] * (x_new[i] - x[i])).sum();
            f_new = f(&x_new, &mut g_new);
            if f_new.is_finite() && f_new <= fx + 1e-4 * decrease {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        iterations += 1;

        if !accepted {
            if !fresh {
                h = identity(n);
                fresh = true;
                continue;
            }
            termination = Termination::Stalled;
            break;
        }

        let s: Vec<f64> = (0..n).map(|i| x_new[i] - x[i]).collect();
        // curvature pairs live on the free subspace only
        let y: Vec<f64> = (0..n)
            .map(|i| if free[i] { g_new[i] - g[i] } else { 0.0 })
            .collect();
        let sy = dot(&s, &y);
        let s_norm = dot(&s, &s).sqrt();
        let y_norm = dot(&y, &y).sqrt();
        if sy > 1e-12 * s_norm * y_norm && sy > 0.0 {
            if fresh {
                let scale = sy / dot(&y, &y);
                h.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..n {
                    h[i * n + i] = scale;
                }
                fresh = false;
            }
            let hy: Vec<f64> = (0..n).map(|i| dot(&h[i * n..(i + 1) * n], &y)).collect();
            let yhy = dot(&y, &hy);
            let c1 = (sy + yhy) / (sy * sy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += c1 * s[i] * s[j] - (hy[i] * s[j] + s[i] * hy[j]) / sy;
                }
            }
        }

        let step_tiny = s_norm <= 1e-15 * (1.0 + dot(&x, &x).sqrt());
        let f_prev = fx;
        x.copy_from_slice(&x_new);
        g.copy_from_slice(&g_new);
        fx = f_new;
        pg = bounds.projected_gradient_norm(&x, &g);
        if step_tiny && (f_prev - fx).abs() <= 1e-16 * fx.abs().max(1.0) && pg > settings.pg_tol
        {
            termination = Termination::Stalled;
            break;
        }
    }
    if termination == Termination::MaxIterations && pg <= settings.pg_tol {
        termination = Termination::Converged;
    }

    Outcome {
        x,
        f: fx,
        iterations,
        pg_norm: pg,
        termination,
        inverse_hessian: h,
    }
}
