//! The regularized monotone scheme for `-div(M grad u) = f / u^gamma`, the
//! power map to the quasilinear variable, and residual diagnostics.
//!
//! For each `m` of an increasing schedule we solve
//! `A u = W f / (u + 1/m)^gamma` by Newton's method, warm-started from the
//! previous `m`. The previous iterate is a subsolution, so it also serves as a
//! lower bound for clipping.
//!
//! `W` is a per-node load weight. Near a wall where `f > 0` the solution
//! behaves like `d^p` with `p = min(1, 2/(gamma+1))`, and the load `d^{-p gamma}`
//! is far from its nodal value over the node's control volume. The weight is
//! the hat-function average of `(d / d_i)^{-p gamma}`, which restores the
//! accuracy of the plain nodal scheme; away from walls it tends to 1.

use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble, SparseOperator};
use crate::error::{Error, Result};
use crate::grid::{GridFunction, ProblemSpec, SubBox};

/// Exponent cap for `exp(-gamma ln(u + 1/m))` inside the Newton loop.
const EXP_CAP: f64 = 700.0;
/// Smallest value `u` is replaced with when evaluating `u^{-gamma}`.
pub const U_FLOOR: f64 = 1e-300;
/// Default mask level for the quasilinear residual.
pub const V_FLOOR: f64 = 1e-10;

/// `m = 4^k`, `k = 0..=12`.
pub fn default_schedule() -> Vec<u64> {
    (0..=12).map(|k| 4u64.pow(k)).collect()
}

/// How the singular load is integrated over each node's control volume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadWeighting {
    /// Plain nodal collocation.
    Nodal,
    /// Weights adapted to the `d^p` behaviour at walls where `f > 0`.
    #[default]
    WallAdapted,
}

/// `int_{-1}^{1} (1 - |s|) (1 + s/i)^{-q} ds` for the node `i` cells from the wall.
pub fn wall_load_weight(i: usize, gamma: f64) -> f64 {
    let p = (2.0 / (gamma + 1.0)).min(1.0);
    let q = p * gamma;
    if i == 0 {
        return 1.0;
    }
    let fi = i as f64;
    if i >= 4 {
        // Even terms of the binomial series; odd ones integrate to zero.
        let x2 = 1.0 / (fi * fi);
        let mut sum = 1.0;
        let mut coeff = 1.0; // binom(-q, 2k)
        let mut pow = 1.0;
        for k in 1..60 {
            let j = 2 * k;
            coeff *= (-q - (j - 2) as f64) / (j - 1) as f64;
            coeff *= (-q - (j - 1) as f64) / j as f64;
            pow *= x2;
            let term = coeff * pow * 2.0 / ((j + 1) as f64 * (j + 2) as f64);
            sum += term;
            if term.abs() <= 1e-17 * sum {
                break;
            }
        }
        return sum;
    }
    // Closed form in x = 1 + s/i.
    let p0 = |x: f64| {
        if (q - 1.0).abs() < 1e-12 {
            x.ln()
        } else {
            x.powf(1.0 - q) / (1.0 - q)
        }
    };
    let p1 = |x: f64| x.powf(2.0 - q) / (2.0 - q);
    let (a, b) = (1.0 - 1.0 / fi, 1.0 + 1.0 / fi);
    let left_const = 1.0 - fi;
    let mut left = fi * fi * (p1(1.0) - p1(a));
    if left_const != 0.0 {
        left += fi * left_const * (p0(1.0) - p0(a));
    }
    let right = fi * (1.0 + fi) * (p0(b) - p0(1.0)) - fi * fi * (p1(b) - p1(1.0));
    left + right
}

/// Nodal load weights for `spec` (1 on boundary nodes and wherever the datum
/// does not reach the wall along the grid line).
pub fn load_weights(spec: &ProblemSpec, weighting: LoadWeighting) -> Vec<f64> {
    let grid = spec.grid();
    let f = spec.f().values();
    let mut w = vec![1.0; grid.node_count()];
    if weighting == LoadWeighting::Nodal {
        return w;
    }
    let gamma = spec.gamma();
    for (idx, wi) in w.iter_mut().enumerate() {
        if grid.is_boundary(idx) || f[idx] <= 0.0 {
            continue;
        }
        let ij = grid.multi_index(idx);
        for a in 0..grid.dim() {
            let cells = grid.axis(a).cells;
            let i = ij[a];
            let near = if i <= cells - i { 1 } else { cells - 1 };
            let mut probe = ij;
            probe[a] = near;
            if f[grid.flat_index(probe)] > 0.0 {
                *wi *= wall_load_weight(grid.wall_index(idx, a), gamma);
            }
        }
    }
    w
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative sup-norm update that ends a Newton solve.
    pub update_tolerance: f64,
    /// Scaled residual `|A u - g|_inf / (1 + |g|_inf)` that ends a Newton solve.
    pub residual_tolerance: f64,
    /// Sup-gap between consecutive schedule entries that ends the `m` loop.
    pub stabilization_tolerance: f64,
    /// Iterations per `m` in which a fixed-point step is tried first.
    pub picard_iterations: usize,
    pub weighting: LoadWeighting,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            update_tolerance: 1e-12,
            residual_tolerance: 1e-11,
            stabilization_tolerance: 1e-9,
            picard_iterations: 3,
            weighting: LoadWeighting::WallAdapted,
        }
    }
}

/// Converged solution of one regularized problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizedIterate {
    pub m: u64,
    pub u: GridFunction,
    pub iterations: usize,
    pub residual: f64,
}

/// Result of running the schedule to (near) stabilization.
#[derive(Debug, Clone)]
pub struct SingularSolution {
    pub spec: ProblemSpec,
    pub u: GridFunction,
    pub trace: Vec<RegularizedIterate>,
    /// Whether two consecutive schedule entries agreed to the tolerance.
    pub stabilized: bool,
    /// Sup-gap between the last two schedule entries.
    pub final_gap: f64,
    weights: Vec<f64>,
}

impl SingularSolution {
    pub fn sup_norm(&self) -> f64 {
        self.u.sup_norm()
    }

    /// Minimum of `u` over the nodes in `region`, `None` if it holds no node.
    pub fn min_over(&self, region: &SubBox) -> Option<f64> {
        min_over(&self.u, region)
    }

    /// Per-node masses `W f / u^gamma * cell volume` (0 on the boundary).
    pub fn nodal_mass(&self) -> Vec<f64> {
        nodal_mass(&self.u, &self.spec, &self.weights)
    }

    /// `int f / u^gamma`.
    pub fn total_mass(&self) -> f64 {
        self.nodal_mass().iter().sum()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Minimum of a field over the nodes in `region`.
pub fn min_over(u: &GridFunction, region: &SubBox) -> Option<f64> {
    let grid = u.grid();
    let dim = grid.dim();
    (0..grid.node_count())
        .filter(|&i| region.contains(&grid.coords(i)[..dim]))
        .map(|i| u.values()[i])
        .reduce(f64::min)
}

/// `W f / max(u, floor)^gamma * cell volume` on interior nodes, 0 elsewhere.
pub fn nodal_mass(u: &GridFunction, spec: &ProblemSpec, weights: &[f64]) -> Vec<f64> {
    let grid = spec.grid();
    let vol = grid.cell_volume();
    let gamma = spec.gamma();
    let f = spec.f().values();
    (0..grid.node_count())
        .map(|i| {
            if grid.is_boundary(i) || f[i] <= 0.0 {
                0.0
            } else {
                let ln = (weights[i] * f[i]).ln() - gamma * u.values()[i].max(U_FLOOR).ln();
                ln.exp() * vol
            }
        })
        .collect()
}

/// Applies a Newton correction `du` to `s = u + 1/m` in the variable
/// `z = s^{-gamma}`, in which the load is linear.
///
/// Both formulations share the same linear system, so only the update
/// differs: `s -> s (1 - gamma du / s)^{-1/gamma}`. To first order this is
/// `s + du`; far below the solution, where the plain step only gains about
/// `s/gamma`, it jumps most of the way at once. Growth is capped at a factor
/// `e^2` per step.
fn lifted_update(s: f64, du: f64, gamma: f64) -> f64 {
    let rho = 1.0 - gamma * du / s;
    let log_growth = if rho > 0.0 {
        -rho.ln() / gamma
    } else {
        f64::INFINITY
    };
    s * log_growth.min(2.0).exp()
}

/// Newton/fixed-point solver for the regularized problems of one spec.
#[derive(Debug, Clone)]
pub struct SingularSolver {
    spec: ProblemSpec,
    op: SparseOperator,
    weights: Vec<f64>,
    /// `W f` on the interior unknowns.
    load: Vec<f64>,
    options: SolverOptions,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

impl SingularSolver {
    pub fn new(spec: &ProblemSpec, options: SolverOptions) -> Result<Self> {
        let op = assemble(spec.grid(), spec.coefficients())?;
        let weights = load_weights(spec, options.weighting);
        let wf: Vec<f64> = weights
            .iter()
            .zip(spec.f().values())
            .map(|(w, f)| w * f)
            .collect();
        let load = op.restrict(&wf);
        Ok(Self {
            spec: spec.clone(),
            op,
            weights,
            load,
            options,
        })
    }

    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn operator(&self) -> &SparseOperator {
        &self.op
    }

    pub fn options(&self) -> &SolverOptions {
        &self.options
    }

    /// `g = W f / (u + eps)^gamma` and `-g' = gamma g / (u + eps)`.
    fn load_and_slope(&self, u: &[f64], eps: f64) -> (Vec<f64>, Vec<f64>) {
        let gamma = self.spec.gamma();
        let mut g = vec![0.0; u.len()];
        let mut dg = vec![0.0; u.len()];
        for k in 0..u.len() {
            if self.load[k] > 0.0 {
                let s = (u[k] + eps).max(U_FLOOR);
                let e = (-gamma * s.ln()).min(EXP_CAP);
                g[k] = self.load[k] * e.exp();
                dg[k] = gamma * g[k] / s;
            }
        }
        (g, dg)
    }

    fn residual(&self, u: &[f64], eps: f64) -> (Vec<f64>, f64) {
        let (g, _) = self.load_and_slope(u, eps);
        let mut r = self.op.apply(u);
        for k in 0..r.len() {
            r[k] -= g[k];
        }
        let scale = 1.0 + sup(&g);
        (r, scale)
    }

    /// Solves the problem regularized with `1/m`, starting from (and never
    /// going below) `start`, given on the interior unknowns.
    pub fn solve_regularized_from(
        &self,
        m: u64,
        start: Option<&[f64]>,
    ) -> Result<RegularizedIterate> {
        self.solve_bracketed(m, start, None)
    }

    /// As [`Self::solve_regularized_from`], optionally seeded with a
    /// supersolution `above`. One Newton step from a supersolution lands on a
    /// subsolution (the load is convex), which is usually far closer to the
    /// solution than `start`; it replaces `start` wherever it is larger.
    fn solve_bracketed(
        &self,
        m: u64,
        start: Option<&[f64]>,
        above: Option<&[f64]>,
    ) -> Result<RegularizedIterate> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let n = self.op.size();
        let lower: Vec<f64> = match start {
            Some(s) if s.len() == n => s.iter().map(|x| x.max(0.0)).collect(),
            Some(_) => {
                return Err(Error::InvalidArgument(
                    "start vector does not match the interior".into(),
                ))
            }
            None => vec![0.0; n],
        };
        if self.load.iter().all(|&l| l == 0.0) {
            return self.finish(m, vec![0.0; n], 0, 0.0);
        }
        let eps = 1.0 / m as f64;
        let opts = &self.options;
        let mut u = lower.clone();
        // A supersolution bounds the solution from above; iterates are kept
        // inside [lower, upper].
        let upper: Option<Vec<f64>> = match above {
            Some(a) => Some(a.to_vec()),
            None if start.is_none() => {
                // With u >= 0 the load is at most W f m^gamma.
                let log_cap = self.spec.gamma() * (m as f64).ln();
                if log_cap <= EXP_CAP {
                    let rhs: Vec<f64> = self.load.iter().map(|l| l * log_cap.exp()).collect();
                    Some(self.op.solve_shifted(None, &rhs)?.0)
                } else {
                    None
                }
            }
            None => None,
        };
        let clip = |x: Vec<f64>| -> Vec<f64> {
            let mut x: Vec<f64> = x.into_iter().zip(&lower).map(|(a, &b)| a.max(b)).collect();
            if let Some(up) = &upper {
                for (a, &b) in x.iter_mut().zip(up) {
                    *a = a.min(b);
                }
            }
            x
        };
        if let Some(sup_sol) = &upper {
            let (r0, _) = self.residual(sup_sol, eps);
            let (_, dg) = self.load_and_slope(sup_sol, eps);
            let neg: Vec<f64> = r0.iter().map(|x| -x).collect();
            let (du, _) = self.op.solve_shifted(Some(&dg), &neg)?;
            let cand: Vec<f64> = sup_sol
                .iter()
                .zip(&du)
                .map(|(a, d)| if (a + d).is_finite() { a + d } else { 0.0 })
                .collect();
            u = clip(cand);
        }
        let (mut r, mut scale) = self.residual(&u, eps);
        let mut rnorm = sup(&r);
        let mut last_update = f64::INFINITY;

        for it in 1..=opts.max_iterations {
            if rnorm <= opts.residual_tolerance * scale {
                return self.finish(m, u, it - 1, rnorm / scale);
            }
            let mut next: Option<Vec<f64>> = None;

            // Fixed-point step, kept only when it actually helps.
            if it <= opts.picard_iterations {
                let (g, _) = self.load_and_slope(&u, eps);
                let (p, _) = self.op.solve_shifted(None, &g)?;
                let p = clip(p);
                let (rp, sp) = self.residual(&p, eps);
                if sup(&rp) < rnorm {
                    next = Some(p);
                    r = rp;
                    scale = sp;
                }
            }

            if next.is_none() {
                let (_, dg) = self.load_and_slope(&u, eps);
                let neg: Vec<f64> = r.iter().map(|x| -x).collect();
                let (du, _) = self.op.solve_shifted(Some(&dg), &neg)?;
                let gamma = self.spec.gamma();
                let plain =
                    |lambda: f64| clip(u.iter().zip(&du).map(|(a, d)| a + lambda * d).collect());
                let lifted = || {
                    let moved = (0..u.len())
                        .map(|k| {
                            if self.load[k] > 0.0 {
                                lifted_update(u[k] + eps, du[k], gamma) - eps
                            } else {
                                u[k] + du[k]
                            }
                        })
                        .collect();
                    clip(moved)
                };
                // A subsolution (A u <= g) lies below the solution by the
                // comparison principle, so it is always a safe iterate.
                let acceptable = |rt: &[f64], st: f64| {
                    sup(rt) < rnorm || rt.iter().all(|&x| x <= opts.residual_tolerance * st)
                };
                let mut chosen = None;
                for candidate in [lifted(), plain(1.0)] {
                    let (rt, st) = self.residual(&candidate, eps);
                    if acceptable(&rt, st) {
                        chosen = Some((candidate, rt, st));
                        break;
                    }
                }
                if chosen.is_none() {
                    let mut lambda = 0.5;
                    while lambda >= 1.0 / 256.0 {
                        let t = plain(lambda);
                        let (rt, st) = self.residual(&t, eps);
                        if sup(&rt) < rnorm {
                            chosen = Some((t, rt, st));
                            break;
                        }
                        lambda *= 0.5;
                    }
                }
                let chosen = match chosen {
                    Some(c) => c,
                    None => {
                        let t = plain(1.0);
                        let (rt, st) = self.residual(&t, eps);
                        (t, rt, st)
                    }
                };
                r = chosen.1;
                scale = chosen.2;
                next = Some(chosen.0);
            }

            let next = next.expect("a step was chosen");
            last_update = u
                .iter()
                .zip(&next)
                .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
            u = next;
            rnorm = sup(&r);
            if !last_update.is_finite() || !rnorm.is_finite() {
                break;
            }
            if last_update <= opts.update_tolerance * sup(&u).max(f64::MIN_POSITIVE) {
                return self.finish(m, u, it, rnorm / scale);
            }
        }
        Err(Error::NonlinearSolveFailure {
            m,
            iterations: opts.max_iterations,
            last_update,
            last_sup: sup(&u),
        })
    }

    fn finish(
        &self,
        m: u64,
        u: Vec<f64>,
        iterations: usize,
        residual: f64,
    ) -> Result<RegularizedIterate> {
        Ok(RegularizedIterate {
            m,
            u: GridFunction::new(self.spec.grid().clone(), self.op.extend(&u))?,
            iterations,
            residual,
        })
    }

    /// Solves for a single `m` from zero. Large `m` are reached through the
    /// ladder `1, 4, 16, ...`, warm-starting each rung; a cold Newton solve at
    /// large `m` and `gamma` only has a very loose supersolution to work with.
    /// `iterations` counts every rung.
    pub fn solve_regularized(&self, m: u64) -> Result<RegularizedIterate> {
        if m == 0 {
            return Err(Error::InvalidArgument("m must be at least 1".into()));
        }
        let mut ladder = Vec::new();
        let mut k = 1u64;
        while k < m {
            ladder.push(k);
            k = k.saturating_mul(4);
        }
        ladder.push(m);
        let mut prev: Option<RegularizedIterate> = None;
        let mut total = 0;
        for &rung in &ladder {
            let next = self.continue_from(prev.as_ref(), rung)?;
            total += next.iterations;
            prev = Some(next);
        }
        let mut last = prev.expect("ladder is non-empty");
        last.iterations = total;
        Ok(last)
    }

    /// Solves at `m`, bracketed by the previous solution (a subsolution) and
    /// its shift by the change in `1/m` (a supersolution: the load is
    /// unchanged while `A` only grows).
    fn continue_from(
        &self,
        prev: Option<&RegularizedIterate>,
        m: u64,
    ) -> Result<RegularizedIterate> {
        let Some(prev) = prev else {
            return self.solve_bracketed(m, None, None);
        };
        let start = self.op.restrict(prev.u.values());
        let shift = 1.0 / prev.m as f64 - 1.0 / m as f64;
        let above: Vec<f64> = start.iter().map(|x| x + shift).collect();
        self.solve_bracketed(m, Some(&start), Some(&above))
    }

    /// Runs an increasing schedule, warm-starting each `m` from the previous
    /// solution, until consecutive iterates differ by at most the
    /// stabilization tolerance. Exhausting the schedule is not an error; it is
    /// reported through `stabilized` and `final_gap`.
    pub fn solve(&self, schedule: &[u64]) -> Result<SingularSolution> {
        if schedule.is_empty() {
            return Err(Error::InvalidArgument("empty m schedule".into()));
        }
        if schedule.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidArgument(
                "m schedule must be increasing".into(),
            ));
        }
        let mut trace: Vec<RegularizedIterate> = Vec::with_capacity(schedule.len());
        let mut stabilized = false;
        let mut final_gap = f64::INFINITY;
        for &m in schedule {
            let iterate = self.continue_from(trace.last(), m)?;
            if let Some(prev) = trace.last() {
                final_gap = prev
                    .u
                    .values()
                    .iter()
                    .zip(iterate.u.values())
                    .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
            }
            trace.push(iterate);
            if final_gap <= self.options.stabilization_tolerance {
                stabilized = true;
                break;
            }
        }
        let u = trace.last().expect("non-empty schedule").u.clone();
        Ok(SingularSolution {
            spec: self.spec.clone(),
            u,
            trace,
            stabilized,
            final_gap,
            weights: self.weights.clone(),
        })
    }
}

/// One regularized solve from zero with default options.
pub fn solve_regularized(spec: &ProblemSpec, m: u64) -> Result<RegularizedIterate> {
    SingularSolver::new(spec, SolverOptions::default())?.solve_regularized(m)
}

/// Runs `schedule` with default options.
pub fn solve_singular(spec: &ProblemSpec, schedule: &[u64]) -> Result<SingularSolution> {
    SingularSolver::new(spec, SolverOptions::default())?.solve(schedule)
}

/// `v = u^{gamma+1} / (gamma+1)`, computed in log-domain.
pub fn to_quasilinear(u: &GridFunction, gamma: f64) -> Result<GridFunction> {
    let k = gamma + 1.0;
    u.map(|x| {
        if x > 0.0 {
            (k * x.ln() - k.ln()).exp()
        } else {
            0.0
        }
    })
}

/// `u = ((gamma+1) v)^{1/(gamma+1)}`.
pub fn from_quasilinear(v: &GridFunction, gamma: f64) -> Result<GridFunction> {
    let k = gamma + 1.0;
    v.map(|x| {
        if x > 0.0 {
            ((k.ln() + x.ln()) / k).exp()
        } else {
            0.0
        }
    })
}

/// A nodal residual with the evaluation mask applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualReport {
    /// Residual values; masked and boundary nodes hold 0.
    pub field: GridFunction,
    /// Sup-norm over the evaluated nodes (0 when none were evaluated).
    pub norm: f64,
    pub evaluated: usize,
    pub masked: usize,
}

impl ResidualReport {
    /// True when no node passed the mask, so any bound holds vacuously.
    pub fn is_vacuous(&self) -> bool {
        self.evaluated == 0
    }

    fn from_values(field: GridFunction, mask: &[bool], interior: &[bool]) -> Self {
        let mut norm = 0.0_f64;
        let (mut evaluated, mut masked) = (0, 0);
        for ((&r, &ok), &inside) in field.values().iter().zip(mask).zip(interior) {
            if !inside {
                continue;
            }
            if ok {
                evaluated += 1;
                norm = norm.max(r.abs());
            } else {
                masked += 1;
            }
        }
        Self {
            field,
            norm,
            evaluated,
            masked,
        }
    }
}

/// `A u - W f / u^gamma` at interior nodes with `u > 0`.
pub fn singular_residual(u: &GridFunction, spec: &ProblemSpec) -> Result<ResidualReport> {
    singular_residual_with(u, spec, LoadWeighting::default())
}

pub fn singular_residual_with(
    u: &GridFunction,
    spec: &ProblemSpec,
    weighting: LoadWeighting,
) -> Result<ResidualReport> {
    let grid = spec.grid();
    if u.grid() != grid {
        return Err(Error::InvalidArgument("u lives on a different grid".into()));
    }
    let op = assemble(grid, spec.coefficients())?;
    let au = op.apply_nodal(u);
    let weights = load_weights(spec, weighting);
    let f = spec.f().values();
    let gamma = spec.gamma();
    let interior: Vec<bool> = (0..grid.node_count())
        .map(|i| !grid.is_boundary(i))
        .collect();
    let mut mask = vec![false; grid.node_count()];
    let mut values = vec![0.0; grid.node_count()];
    for i in 0..grid.node_count() {
        let ui = u.values()[i];
        if !interior[i] || !(ui > 0.0 || f[i] == 0.0) {
            continue;
        }
        let g = if f[i] > 0.0 {
            ((weights[i] * f[i]).ln() - gamma * ui.ln()).exp()
        } else {
            0.0
        };
        values[i] = au[i] - g;
        mask[i] = values[i].is_finite();
        if !mask[i] {
            values[i] = 0.0;
        }
    }
    Ok(ResidualReport::from_values(
        GridFunction::new(grid.clone(), values)?,
        &mask,
        &interior,
    ))
}

/// Residual of `-Lap v + B |grad v|^2 / v - f` with `B = gamma/(gamma+1)`
/// (`B = 1` for infinite `gamma`), on interior nodes with `v >= floor`.
///
/// The gradient term is evaluated as `4 B |grad sqrt(v)|^2` with centred
/// differences of `sqrt(v)`; this equals `B |grad v|^2 / v` for smooth
/// positive `v` and stays consistent where `v` vanishes like a power of the
/// distance.
pub fn quasilinear_residual(
    v: &GridFunction,
    gamma: f64,
    f: &GridFunction,
) -> Result<ResidualReport> {
    quasilinear_residual_with_floor(v, gamma, f, V_FLOOR)
}

pub fn quasilinear_residual_with_floor(
    v: &GridFunction,
    gamma: f64,
    f: &GridFunction,
    floor: f64,
) -> Result<ResidualReport> {
    let grid = v.grid();
    if f.grid() != grid {
        return Err(Error::InvalidArgument(
            "v and f live on different grids".into(),
        ));
    }
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    let b = if gamma.is_infinite() {
        1.0
    } else {
        gamma / (gamma + 1.0)
    };
    let vals = v.values();
    let roots: Vec<f64> = vals.iter().map(|x| x.max(0.0).sqrt()).collect();
    let interior: Vec<bool> = (0..grid.node_count())
        .map(|i| !grid.is_boundary(i))
        .collect();
    let mut mask = vec![false; grid.node_count()];
    let mut out = vec![0.0; grid.node_count()];
    for i in 0..grid.node_count() {
        if !interior[i] || vals[i] < floor {
            continue;
        }
        let ij = grid.multi_index(i);
        let mut lap = 0.0;
        let mut grad2 = 0.0;
        for a in 0..grid.dim() {
            let h = grid.spacing(a);
            let (mut lo, mut hi) = (ij, ij);
            lo[a] -= 1;
            hi[a] += 1;
            let (l, r) = (grid.flat_index(lo), grid.flat_index(hi));
            lap += (vals[l] - 2.0 * vals[i] + vals[r]) / (h * h);
            let d = (roots[r] - roots[l]) / (2.0 * h);
            grad2 += d * d;
        }
        out[i] = -lap + 4.0 * b * grad2 - f.values()[i];
        mask[i] = true;
    }
    Ok(ResidualReport::from_values(
        GridFunction::new(grid.clone(), out)?,
        &mask,
        &interior,
    ))
}

/// `|u|_inf^{gamma+1} / ((gamma+1) |f|_inf)`.
pub fn linfty_certificate(u: &GridFunction, gamma: f64, f: &GridFunction) -> Result<f64> {
    let fs = f.sup_norm();
    if fs == 0.0 {
        return Err(Error::UndefinedCertificate);
    }
    let us = u.sup_norm();
    if us == 0.0 {
        return Ok(0.0);
    }
    let k = gamma + 1.0;
    Ok((k * us.ln() - k.ln() - fs.ln()).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{DatumSpec, Grid, SupportAnnotation};

    fn unit_problem(gamma: f64, cells: usize) -> ProblemSpec {
        let g = Grid::interval(-1.0, 1.0, cells).unwrap();
        ProblemSpec::laplacian(
            g,
            DatumSpec::Constant(1.0),
            gamma,
            SupportAnnotation::StrictlyPositive,
        )
        .unwrap()
    }

    #[test]
    fn series_and_closed_form_weights_agree() {
        // At i = 4 both branches are valid; compare the series against the closed form.
        for &gamma in &[0.5_f64, 1.0, 3.0, 9.0, 400.0] {
            let p = (2.0 / (gamma + 1.0)).min(1.0);
            let q: f64 = p * gamma;
            let fi = 4.0_f64;
            let p0 = |x: f64| {
                if (q - 1.0).abs() < 1e-12 {
                    x.ln()
                } else {
                    x.powf(1.0 - q) / (1.0 - q)
                }
            };
            let p1 = |x: f64| x.powf(2.0 - q) / (2.0 - q);
            let (a, b) = (1.0 - 1.0 / fi, 1.0 + 1.0 / fi);
            let closed = fi * (1.0 - fi) * (p0(1.0) - p0(a))
                + fi * fi * (p1(1.0) - p1(a))
                + fi * (1.0 + fi) * (p0(b) - p0(1.0))
                - fi * fi * (p1(b) - p1(1.0));
            assert!(
                (closed - wall_load_weight(4, gamma)).abs() < 1e-12,
                "gamma={gamma}"
            );
        }
    }

    #[test]
    fn weights_tend_to_one_and_exceed_it() {
        for &gamma in &[1.0, 3.0, 50.0] {
            let mut prev = f64::INFINITY;
            for i in 1..40 {
                let w = wall_load_weight(i, gamma);
                assert!(w >= 1.0 && w < prev, "gamma={gamma} i={i}");
                prev = w;
            }
            assert!(wall_load_weight(1000, gamma) - 1.0 < 1e-6);
        }
    }

    #[test]
    fn weights_skip_datum_away_from_walls() {
        let g = Grid::interval(-2.0, 2.0, 64).unwrap();
        let spec = ProblemSpec::laplacian(
            g,
            DatumSpec::Indicator {
                value: 1.0,
                region: SubBox::interval(-1.0, 1.0),
            },
            4.0,
            SupportAnnotation::CompactlyContained,
        )
        .unwrap();
        assert!(load_weights(&spec, LoadWeighting::WallAdapted)
            .iter()
            .all(|&w| w == 1.0));
    }

    #[test]
    fn zero_datum_gives_zero() {
        let g = Grid::interval(-1.0, 1.0, 32).unwrap();
        let spec =
            ProblemSpec::laplacian(g, DatumSpec::Constant(0.0), 3.0, SupportAnnotation::General)
                .unwrap();
        let it = solve_regularized(&spec, 1_000_000).unwrap();
        assert_eq!(it.u.sup_norm(), 0.0);
        let sol = solve_singular(&spec, &[1, 4, 16]).unwrap();
        assert_eq!(sol.u.sup_norm(), 0.0);
        assert!(matches!(
            linfty_certificate(&sol.u, 3.0, spec.f()),
            Err(Error::UndefinedCertificate)
        ));
    }

    #[test]
    fn gamma_three_matches_closed_form() {
        let spec = unit_problem(3.0, 512);
        let it = solve_regularized(&spec, 1_000_000).unwrap();
        let mid = spec.grid().nearest_node(&[0.0]);
        assert!((it.u.values()[mid] - 1.0).abs() <= 2e-3);
    }

    #[test]
    fn doubling_m_increases_the_iterate() {
        let spec = unit_problem(1.0, 128);
        let a = solve_regularized(&spec, 8).unwrap();
        let b = solve_regularized(&spec, 16).unwrap();
        for (x, y) in a.u.values().iter().zip(b.u.values()) {
            assert!(y + 1e-12 >= *x);
        }
    }

    #[test]
    fn quasilinear_round_trip_and_values() {
        let g = Grid::interval(-1.0, 1.0, 16).unwrap();
        let u = GridFunction::from_fn(g.clone(), |x| (1.0 - x[0] * x[0]).sqrt()).unwrap();
        let v = to_quasilinear(&u, 3.0).unwrap();
        assert!((v.values()[8] - 0.25).abs() < 1e-15);
        let back = from_quasilinear(&v, 3.0).unwrap();
        for (a, b) in u.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
        let lin = GridFunction::from_fn(g.clone(), |x| x[0].abs()).unwrap();
        let v1 = to_quasilinear(&lin, 1.0).unwrap();
        for (i, val) in v1.values().iter().enumerate() {
            let t = g.coords(i)[0];
            assert!((val - t * t / 2.0).abs() < 1e-15);
        }
    }

    #[test]
    fn vacuous_quasilinear_residual() {
        let g = Grid::interval(-1.0, 1.0, 16).unwrap();
        let z = GridFunction::zeros(g);
        let r = quasilinear_residual(&z, 3.0, &z).unwrap();
        assert!(r.is_vacuous());
        assert_eq!(r.norm, 0.0);
        assert_eq!(r.masked, 15);
    }

    #[test]
    fn certificate_definition() {
        let spec = unit_problem(3.0, 16);
        let u = GridFunction::from_fn(spec.grid().clone(), |x| 1.0 - x[0].abs()).unwrap();
        assert!((linfty_certificate(&u, 3.0, spec.f()).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_schedules() {
        let spec = unit_problem(2.0, 16);
        assert!(solve_singular(&spec, &[]).is_err());
        assert!(solve_singular(&spec, &[4, 2]).is_err());
        assert!(solve_regularized(&spec, 0).is_err());
    }
}
