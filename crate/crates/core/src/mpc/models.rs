use serde::{Deserialize, Serialize};

use super::{stage_cost, EquilibriumTarget, PredictionModel, StageCostParams};
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::nnarx::{NnarxModel, SLOT};
use crate::optim::{self, Bounds};
use crate::types::Input;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquilibriumSettings {
    /// Multistart grid over `u`, points per axis.
    pub starts_per_axis: usize,
    /// Normalized output range scanned for fixed points.
    pub scan_range: (f64, f64),
    pub scan_points: usize,
    /// Required fixed-point residual, normalized units.
    pub residual_tol: f64,
}

impl Default for EquilibriumSettings {
    fn default() -> Self {
        Self {
            starts_per_axis: 4,
            scan_range: (-8.0, 8.0),
            scan_points: 161,
            residual_tol: 1e-8,
        }
    }
}

impl PredictionModel for LinearModel {
    fn state_dim(&self) -> usize {
        2
    }

    fn step(&self, x: &[f64], u: Input, out: &mut [f64]) {
        let n = self.transition([x[0], x[1]], u);
        out[0] = n[0];
        out[1] = n[1];
    }

    fn output(&self, x: &[f64]) -> f64 {
        x[1]
    }

    fn output_gradient(&self, _x: &[f64], scale: f64, grad: &mut [f64]) {
        grad[1] += scale;
    }

    fn step_adjoint(&self, _x: &[f64], _u: Input, lam_next: &[f64], lam: &mut [f64]) -> [f64; 2] {
        lam[0] = lam_next[0] + self.a * lam_next[1];
        lam[1] = (1.0 - self.a) * lam_next[1];
        [self.b_h * lam_next[0], self.b_c * lam_next[0]]
    }

    /// The integrator state admits a fixed point only when the input has no
    /// net effect, so `u = 0`, `x = (r, r)` reaches zero cost.
    fn equilibrium(
        &self,
        r: f64,
        cost: &StageCostParams,
        _settings: &EquilibriumSettings,
    ) -> Result<EquilibriumTarget> {
        if !r.is_finite() {
            return Err(Error::domain(format!("reference {r} is not finite")));
        }
        Ok(EquilibriumTarget {
            reference: r,
            state: vec![r, r],
            input: Input::ZERO,
            output: r,
            cost: stage_cost(r, Input::ZERO, r, cost),
            residual: 0.0,
        })
    }
}

impl NnarxModel {
    fn repeated_state(&self, y: f64, un: [f64; 2]) -> Vec<f64> {
        (0..self.n_past()).flat_map(|_| [y, un[0], un[1]]).collect()
    }

    /// `h(y) = eta(rep(y, u), u) - y` and `dh/dy`.
    fn fixed_point_map(&self, y: f64, un: [f64; 2]) -> (f64, f64, [f64; 2]) {
        let x = self.repeated_state(y, un);
        let (eta, dx, du) = self.eta_with_gradient(&x, un);
        let mut dy = -1.0;
        let mut dun = du;
        for z in dx.chunks_exact(SLOT) {
            dy += z[0];
            dun[0] += z[1];
            dun[1] += z[2];
        }
        (eta - y, dy, dun)
    }

    /// All normalized fixed-point outputs for normalized input `un`.
    fn fixed_points(&self, un: [f64; 2], settings: &EquilibriumSettings) -> Vec<f64> {
        let (lo, hi) = settings.scan_range;
        let m = settings.scan_points.max(2);
        let grid: Vec<f64> = (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect();
        let vals: Vec<f64> = grid.iter().map(|&y| self.fixed_point_map(y, un).0).collect();
        let mut roots = Vec::new();
        for i in 0..m - 1 {
            let (fa, fb) = (vals[i], vals[i + 1]);
            if fa == 0.0 {
                roots.push(grid[i]);
            } else if fa * fb < 0.0 {
                roots.push(self.refine_root(grid[i], grid[i + 1], fa, un));
            }
        }
        if vals[m - 1] == 0.0 {
            roots.push(grid[m - 1]);
        }
        roots
    }

    /// Safeguarded Newton inside a sign-changing bracket.
    fn refine_root(&self, mut a: f64, mut b: f64, fa: f64, un: [f64; 2]) -> f64 {
        let sa = fa.signum();
        let mut y = 0.5 * (a + b);
        for _ in 0..100 {
            let (h, dh, _) = self.fixed_point_map(y, un);
            if h == 0.0 {
                return y;
            }
            if h.signum() == sa {
                a = y;
            } else {
                b = y;
            }
            let newton = y - h / dh;
            let next = if dh != 0.0 && newton > a.min(b) && newton < a.max(b) {
                newton
            } else {
                0.5 * (a + b)
            };
            if (next - y).abs() <= 1e-15 * (1.0 + y.abs()) {
                return next;
            }
            y = next;
        }
        y
    }

    /// Lowest-cost fixed point for physical input `u`, with the cost gradient
    /// with respect to `u` through the implicit function theorem.
    fn equilibrium_cost(
        &self,
        u: Input,
        r: f64,
        cost: &StageCostParams,
        settings: &EquilibriumSettings,
    ) -> Option<(f64, f64, [f64; 2])> {
        let norm = &self.normalizer;
        let un = norm.input(u);
        let best = self
            .fixed_points(un, settings)
            .into_iter()
            .map(|y| (stage_cost(norm.denorm_output(y), u, r, cost), y))
            .min_by(|a, b| a.0.total_cmp(&b.0))?;
        let (c, y) = best;
        let (_, dh_dy, dh_du) = self.fixed_point_map(y, un);
        let dc_dy = 2.0 * (norm.denorm_output(y) - r) * norm.y_std;
        let mut g = [cost.lambda; 2];
        if dh_dy.abs() > 1e-12 {
            for k in 0..2 {
                g[k] -= dc_dy * dh_du[k] / dh_dy / norm.u_std[k];
            }
        }
        Some((c, y, g))
    }
}

impl PredictionModel for NnarxModel {
    fn state_dim(&self) -> usize {
        NnarxModel::state_dim(self)
    }

    fn step(&self, x: &[f64], u: Input, out: &mut [f64]) {
        let un = self.normalizer.input(u);
        let n = x.len();
        out[..n - SLOT].copy_from_slice(&x[SLOT..]);
        out[n - SLOT] = self.eta(x, un);
        out[n - 2] = un[0];
        out[n - 1] = un[1];
    }

    fn output(&self, x: &[f64]) -> f64 {
        self.normalizer.denorm_output(x[x.len() - SLOT])
    }

    fn output_gradient(&self, x: &[f64], scale: f64, grad: &mut [f64]) {
        grad[x.len() - SLOT] += scale * self.normalizer.y_std;
    }

    fn step_adjoint(&self, x: &[f64], u: Input, lam_next: &[f64], lam: &mut [f64]) -> [f64; 2] {
        let un = self.normalizer.input(u);
        let n = x.len();
        lam[..SLOT].iter_mut().for_each(|v| *v = 0.0);
        lam[SLOT..].copy_from_slice(&lam_next[..n - SLOT]);
        let c = lam_next[n - SLOT];
        let mut du = [lam_next[n - 2], lam_next[n - 1]];
        if c != 0.0 {
            let (_, dx, de) = self.eta_with_gradient(x, un);
            for (l, d) in lam.iter_mut().zip(&dx) {
                *l += c * d;
            }
            du[0] += c * de[0];
            du[1] += c * de[1];
        }
        [
            du[0] / self.normalizer.u_std[0],
            du[1] / self.normalizer.u_std[1],
        ]
    }

    /// Multistart projected quasi-Newton over `u`, each evaluation solving
    /// the scalar fixed point of the repeated-slot state.
    fn equilibrium(
        &self,
        r: f64,
        cost: &StageCostParams,
        settings: &EquilibriumSettings,
    ) -> Result<EquilibriumTarget> {
        if !r.is_finite() {
            return Err(Error::domain(format!("reference {r} is not finite")));
        }
        let k = settings.starts_per_axis.max(1);
        let axis: Vec<f64> = if k == 1 {
            vec![0.0]
        } else {
            (0..k).map(|i| i as f64 / (k - 1) as f64).collect()
        };
        let bounds = Bounds::uniform(2, 0.0, 1.0);
        let opt = optim::Settings {
            max_iterations: 100,
            pg_tol: 1e-10,
            ..optim::Settings::default()
        };
        let mut best: Option<(f64, Input, f64)> = None;
        for &h in &axis {
            for &c in &axis {
                let f = |v: &[f64], g: &mut [f64]| match self.equilibrium_cost(
                    Input::new(v[0], v[1]),
                    r,
                    cost,
                    settings,
                ) {
                    Some((val, _, grad)) => {
                        g.copy_from_slice(&grad);
                        val
                    }
                    None => f64::INFINITY,
                };
                let out = optim::minimize(f, &[h, c], &bounds, &opt, None);
                if !out.f.is_finite() {
                    continue;
                }
                let u = Input::new(out.x[0], out.x[1]);
                if let Some((val, y, _)) = self.equilibrium_cost(u, r, cost, settings) {
                    if best.is_none_or(|b| val < b.0) {
                        best = Some((val, u, y));
                    }
                }
            }
        }
        let (value, input, y) = best.ok_or_else(|| {
            Error::Infeasible(format!(
                "no fixed point of the NNARX model within normalized outputs {:?} for r = {r}",
                settings.scan_range
            ))
        })?;
        let state = self.repeated_state(y, self.normalizer.input(input));
        let residual = super::fixed_point_residual(self, &state, input);
        if residual > settings.residual_tol {
            return Err(Error::Infeasible(format!(
                "equilibrium residual {residual:e} exceeds {:e} for r = {r}",
                settings.residual_tol
            )));
        }
        Ok(EquilibriumTarget {
            reference: r,
            state,
            input,
            output: self.normalizer.denorm_output(y),
            cost: value,
            residual,
        })
    }
}
