//! Sweeps over `gamma = n` and the diagnostics that quantify the large-`n`
//! behaviour: masses of the singular load, the log-diagnostic `z_n`, the
//! concentration histogram, the atom reconstruction of the limit equation and
//! the harmonic comparison outside the support.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::elliptic::{assemble, MeasureData};
use crate::error::{Error, Result};
use crate::grid::{CoefficientField, Grid, GridFunction, ProblemSpec, SubBox};
use crate::singular::{
    linfty_certificate, load_weights, nodal_mass, quasilinear_residual, to_quasilinear,
    LoadWeighting, SingularSolution, SingularSolver, SolverOptions,
};

/// Share of the total mass a node needs to seed a concentration cluster.
pub const CLUSTER_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSettings {
    pub n_list: Vec<f64>,
    pub schedule: Vec<u64>,
    pub options: SolverOptions,
    /// Boxes for minima, `z_n` and `|u_n - 1|`.
    pub compacta: Vec<SubBox>,
    /// Boxes over which the local mass is reported.
    pub local_regions: Vec<SubBox>,
    pub shell_distances: Vec<f64>,
}

impl SweepSettings {
    pub fn new(spec: &ProblemSpec, n_list: Vec<f64>) -> Self {
        Self {
            n_list,
            schedule: crate::singular::default_schedule(),
            options: SolverOptions::default(),
            compacta: default_compacta(spec).0,
            local_regions: Vec::new(),
            shell_distances: Vec::new(),
        }
    }
}

/// The middle half of the support box (or of the domain when `f` has no
/// indicator box), and the middle halves of the gaps between the support and
/// the domain boundary in 1-D.
pub fn default_compacta(spec: &ProblemSpec) -> (Vec<SubBox>, Vec<SubBox>) {
    let grid = spec.grid();
    let dim = grid.dim();
    let (lo, hi): (Vec<f64>, Vec<f64>) = match spec.support_box() {
        Some(b) => (b.lo.clone(), b.hi.clone()),
        None => (
            grid.axes().iter().map(|a| a.lo).collect(),
            grid.axes().iter().map(|a| a.hi).collect(),
        ),
    };
    let middle = |l: &[f64], h: &[f64]| {
        let lo2 = (0..l.len()).map(|a| l[a] + 0.25 * (h[a] - l[a])).collect();
        let hi2 = (0..l.len()).map(|a| h[a] - 0.25 * (h[a] - l[a])).collect();
        SubBox { lo: lo2, hi: hi2 }
    };
    let inside = vec![middle(&lo, &hi)];
    let mut outside = Vec::new();
    if dim == 1 && spec.support_box().is_some() {
        let axis = grid.axis(0);
        if lo[0] > axis.lo {
            outside.push(middle(&[axis.lo], &[lo[0]]));
        }
        if hi[0] < axis.hi {
            outside.push(middle(&[hi[0]], &[axis.hi]));
        }
    }
    (inside, outside)
}

/// Diagnostics for one exponent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: f64,
    /// Solver failure message; all numeric fields are NaN when set.
    pub error: Option<String>,
    pub sup_norm: f64,
    pub compacta_min: Vec<Option<f64>>,
    /// `max |u_n - 1|` over each compactum.
    pub compacta_deviation: Vec<Option<f64>>,
    pub total_mass: f64,
    pub local_masses: Vec<f64>,
    pub quasilinear_residual: f64,
    pub certificate: Option<f64>,
    /// `sup z_n^+` over each compactum.
    pub fitted_m: Vec<Option<f64>>,
    pub v_sup_norm: f64,
    pub v_h1_seminorm: f64,
    pub stabilized: bool,
    pub final_gap: f64,
}

impl SweepRow {
    fn failed(n: f64, err: &Error, settings: &SweepSettings) -> Self {
        let k = settings.compacta.len();
        Self {
            n,
            error: Some(err.to_string()),
            sup_norm: f64::NAN,
            compacta_min: vec![None; k],
            compacta_deviation: vec![None; k],
            total_mass: f64::NAN,
            local_masses: vec![f64::NAN; settings.local_regions.len()],
            quasilinear_residual: f64::NAN,
            certificate: None,
            fitted_m: vec![None; k],
            v_sup_norm: f64::NAN,
            v_h1_seminorm: f64::NAN,
            stabilized: false,
            final_gap: f64::NAN,
        }
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub settings: SweepSettings,
    pub rows: Vec<SweepRow>,
    /// Solution at the largest exponent that succeeded.
    pub last_solution: Option<SingularSolution>,
    /// Histogram of the last solution, when the datum has a support box.
    pub histogram: Option<MeasureHistogram>,
    /// Atom reconstruction of the last solution, when it could be carried out.
    pub limit_check: Option<std::result::Result<LimitCheck, String>>,
}

/// Solves for every `n` (in parallel) and gathers the diagnostics. A failed
/// solve marks its row and the sweep carries on.
pub fn run_sweep(spec: &ProblemSpec, settings: &SweepSettings) -> Result<SweepReport> {
    if settings.n_list.is_empty() {
        return Err(Error::InvalidArgument("empty n list".into()));
    }
    if settings.n_list.windows(2).any(|p| p[1] <= p[0]) {
        return Err(Error::InvalidArgument("n list must be increasing".into()));
    }
    if let Some(&n) = settings.n_list.iter().find(|&&n| !(n >= 3.0)) {
        return Err(Error::InvalidArgument(format!(
            "n must be at least 3, got {n}"
        )));
    }
    let results: Vec<(SweepRow, Option<SingularSolution>)> = settings
        .n_list
        .par_iter()
        .map(|&n| match solve_row(spec, settings, n) {
            Ok((row, sol)) => (row, Some(sol)),
            Err(e) => (SweepRow::failed(n, &e, settings), None),
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut last_solution = None;
    for (row, sol) in results {
        rows.push(row);
        if sol.is_some() {
            last_solution = sol;
        }
    }
    let mut histogram = None;
    let mut limit_check = None;
    if let (Some(sol), Some(_)) = (&last_solution, spec.support_box()) {
        let h = measure_histogram(
            &sol.u,
            &sol.spec,
            sol.spec.gamma(),
            &settings.shell_distances,
        )?;
        limit_check =
            Some(limit_equation_check(&sol.u, &h, spec.coefficients()).map_err(|e| e.to_string()));
        histogram = Some(h);
    }
    Ok(SweepReport {
        settings: settings.clone(),
        rows,
        last_solution,
        histogram,
        limit_check,
    })
}

fn solve_row(
    spec: &ProblemSpec,
    settings: &SweepSettings,
    n: f64,
) -> Result<(SweepRow, SingularSolution)> {
    let spec_n = spec.with_gamma(n)?;
    let sol = SingularSolver::new(&spec_n, settings.options)?.solve(&settings.schedule)?;
    let masses = sol.nodal_mass();
    let grid = spec.grid();
    let dim = grid.dim();
    let local_masses = settings
        .local_regions
        .iter()
        .map(|r| {
            (0..grid.node_count())
                .filter(|&i| r.contains(&grid.coords(i)[..dim]))
                .map(|i| masses[i])
                .sum()
        })
        .collect();
    let v = to_quasilinear(&sol.u, n)?;
    let z = z_diagnostic(&sol.u, n);
    let row = SweepRow {
        n,
        error: None,
        sup_norm: sol.sup_norm(),
        compacta_min: settings.compacta.iter().map(|c| sol.min_over(c)).collect(),
        compacta_deviation: settings
            .compacta
            .iter()
            .map(|c| max_over(&sol.u, c, |x| (x - 1.0).abs()))
            .collect(),
        total_mass: masses.iter().sum(),
        local_masses,
        quasilinear_residual: quasilinear_residual(&v, n, spec.f())?.norm,
        certificate: linfty_certificate(&sol.u, n, spec.f()).ok(),
        fitted_m: settings.compacta.iter().map(|c| z.fitted_m(c)).collect(),
        v_sup_norm: v.sup_norm(),
        v_h1_seminorm: h1_seminorm(&v),
        stabilized: sol.stabilized,
        final_gap: sol.final_gap,
    };
    Ok((row, sol))
}

fn max_over(u: &GridFunction, region: &SubBox, f: impl Fn(f64) -> f64) -> Option<f64> {
    let grid = u.grid();
    let dim = grid.dim();
    (0..grid.node_count())
        .filter(|&i| region.contains(&grid.coords(i)[..dim]))
        .map(|i| f(u.values()[i]))
        .reduce(f64::max)
}

/// Discrete `|grad v|_{L^2}` from forward differences over all grid edges.
pub fn h1_seminorm(v: &GridFunction) -> f64 {
    let grid = v.grid();
    let vals = v.values();
    let mut sum = 0.0;
    for i in 0..grid.node_count() {
        let ij = grid.multi_index(i);
        for a in 0..grid.dim() {
            if ij[a] < grid.axis(a).cells {
                let mut next = ij;
                next[a] += 1;
                let d = (vals[grid.flat_index(next)] - vals[i]) / grid.spacing(a);
                sum += d * d;
            }
        }
    }
    (sum * grid.cell_volume()).sqrt()
}

/// `z_n = -ln(u^{n+1}/(n+1))`, `+inf` where `u = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZDiagnostic {
    pub grid: Grid,
    pub values: Vec<f64>,
}

impl ZDiagnostic {
    /// `sup z^+` over the nodes in `region` (the fitted lower-bound constant).
    pub fn fitted_m(&self, region: &SubBox) -> Option<f64> {
        let dim = self.grid.dim();
        (0..self.grid.node_count())
            .filter(|&i| region.contains(&self.grid.coords(i)[..dim]))
            .map(|i| self.values[i].max(0.0))
            .reduce(f64::max)
    }
}

pub fn z_diagnostic(u: &GridFunction, n: f64) -> ZDiagnostic {
    let values = u
        .values()
        .iter()
        .map(|&x| {
            if x > 0.0 {
                (n + 1.0).ln() - (n + 1.0) * x.ln()
            } else {
                f64::INFINITY
            }
        })
        .collect();
    ZDiagnostic {
        grid: u.grid().clone(),
        values,
    }
}

/// Per-node masses of `f / u^n` and their concentration near the support boundary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureHistogram {
    pub grid: Grid,
    /// Mass carried by each node's control volume.
    pub cell_masses: Vec<f64>,
    pub total: f64,
    /// `(d, share of the total within distance d of the support boundary)`.
    pub shell_fractions: Vec<(f64, f64)>,
}

/// Histogram of `f / u^n` for the solution `u` of `spec` with `gamma = n`,
/// using the solver's load weights.
pub fn measure_histogram(
    u: &GridFunction,
    spec: &ProblemSpec,
    n: f64,
    shell_distances: &[f64],
) -> Result<MeasureHistogram> {
    let spec_n = spec.with_gamma(n)?;
    let weights = load_weights(&spec_n, LoadWeighting::default());
    let cell_masses = nodal_mass(u, &spec_n, &weights);
    let total = cell_masses.iter().sum();
    let grid = spec.grid();
    let dim = grid.dim();
    let shell_fractions = match spec.support_box() {
        Some(region) => shell_distances
            .iter()
            .map(|&d| {
                let near: f64 = (0..grid.node_count())
                    .filter(|&i| region.boundary_distance(&grid.coords(i)[..dim]) <= d)
                    .map(|i| cell_masses[i])
                    .sum();
                (d, if total > 0.0 { near / total } else { 0.0 })
            })
            .collect(),
        None => Vec::new(),
    };
    Ok(MeasureHistogram {
        grid: grid.clone(),
        cell_masses,
        total,
        shell_fractions,
    })
}

/// Outcome of collapsing a histogram to atoms and solving the limit problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitCheck {
    pub atoms: Vec<(Vec<f64>, f64)>,
    pub reconstructed: GridFunction,
    /// `|reconstructed - u_limit|_inf`.
    pub difference: f64,
}

/// Groups nodes holding at least 1% of the mass into connected clusters,
/// places an atom at each cluster's mass centroid carrying all mass of the
/// nodes nearest to it, and solves `-div(M grad u) = sum of atoms`.
pub fn limit_equation_check(
    u_limit: &GridFunction,
    hist: &MeasureHistogram,
    m: &CoefficientField,
) -> Result<LimitCheck> {
    let grid = &hist.grid;
    if u_limit.grid() != grid || m.grid() != grid {
        return Err(Error::InvalidArgument(
            "fields live on different grids".into(),
        ));
    }
    let dim = grid.dim();
    let clusters = find_clusters(hist);
    let h = (0..dim).map(|a| grid.spacing(a)).fold(0.0_f64, f64::max);
    let coords = |i: usize| grid.coords(i)[..dim].to_vec();
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    for (k, a) in clusters.iter().enumerate() {
        for b in &clusters[k + 1..] {
            let gap = a
                .iter()
                .flat_map(|&i| b.iter().map(move |&j| (i, j)))
                .map(|(i, j)| dist(&coords(i), &coords(j)))
                .fold(f64::INFINITY, f64::min);
            if gap <= 4.0 * h {
                return Err(Error::CheckInconclusive(format!(
                    "concentration clusters only {gap:e} apart (4h = {:e})",
                    4.0 * h
                )));
            }
        }
    }
    let centroids: Vec<Vec<f64>> = clusters
        .iter()
        .map(|c| {
            let mass: f64 = c.iter().map(|&i| hist.cell_masses[i]).sum();
            (0..dim)
                .map(|a| {
                    c.iter()
                        .map(|&i| hist.cell_masses[i] * grid.coords(i)[a])
                        .sum::<f64>()
                        / mass
                })
                .collect()
        })
        .collect();
    let mut atom_mass = vec![0.0; centroids.len()];
    if !centroids.is_empty() {
        for i in 0..grid.node_count() {
            let w = hist.cell_masses[i];
            if w == 0.0 {
                continue;
            }
            let x = coords(i);
            let nearest = (0..centroids.len())
                .min_by(|&a, &b| dist(&x, &centroids[a]).total_cmp(&dist(&x, &centroids[b])))
                .expect("non-empty");
            atom_mass[nearest] += w;
        }
    }
    let atoms: Vec<(Vec<f64>, f64)> = centroids.into_iter().zip(atom_mass).collect();
    let op = assemble(grid, m)?;
    let reconstructed = op.solve_measure(&MeasureData::new(atoms.clone()))?;
    let difference = reconstructed
        .values()
        .iter()
        .zip(u_limit.values())
        .fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
    Ok(LimitCheck {
        atoms,
        reconstructed,
        difference,
    })
}

/// Connected sets (axis neighbours) of nodes with at least 1% of the total mass.
fn find_clusters(hist: &MeasureHistogram) -> Vec<Vec<usize>> {
    let grid = &hist.grid;
    if hist.total <= 0.0 {
        return Vec::new();
    }
    let heavy: Vec<bool> = hist
        .cell_masses
        .iter()
        .map(|&w| w >= CLUSTER_THRESHOLD * hist.total)
        .collect();
    let mut seen = vec![false; heavy.len()];
    let mut clusters = Vec::new();
    for start in 0..heavy.len() {
        if !heavy[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            let ij = grid.multi_index(i);
            for a in 0..grid.dim() {
                for step in [-1i64, 1] {
                    let k = ij[a] as i64 + step;
                    if k < 0 || k > grid.axis(a).cells as i64 {
                        continue;
                    }
                    let mut nb = ij;
                    nb[a] = k as usize;
                    let j = grid.flat_index(nb);
                    if heavy[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}

/// Numbers only: how close `u_n` is to the harmonic function equal to 1 on
/// the support box and 0 on the domain boundary, and how large `v_n` stays
/// off the support.
#[derive(Debug, Clone, PartialEq)]
pub struct ConjectureReport {
    pub n: f64,
    pub harmonic: GridFunction,
    /// `sup |u_n - harmonic|` over nodes outside the closed support box.
    pub harmonic_difference: f64,
    /// `sup v_n` over nodes not strictly inside the support box.
    pub sup_v_outside: f64,
}

pub fn conjecture_experiment(
    spec: &ProblemSpec,
    n_large: f64,
    schedule: &[u64],
    options: SolverOptions,
) -> Result<ConjectureReport> {
    if !spec.coefficients().is_identity() {
        return Err(Error::InvalidArgument(
            "the harmonic comparison needs identity coefficients".into(),
        ));
    }
    let region = spec
        .support_box()
        .ok_or_else(|| Error::InvalidArgument("datum has no support box".into()))?
        .clone();
    let spec_n = spec.with_gamma(n_large)?;
    let sol = SingularSolver::new(&spec_n, options)?.solve(schedule)?;
    let harmonic = harmonic_outside(spec.grid(), &region)?;
    let grid = spec.grid();
    let dim = grid.dim();
    let v = to_quasilinear(&sol.u, n_large)?;
    let mut harmonic_difference = 0.0_f64;
    let mut sup_v_outside = 0.0_f64;
    for i in 0..grid.node_count() {
        let x = &grid.coords(i)[..dim];
        if !region.contains(x) {
            harmonic_difference =
                harmonic_difference.max((sol.u.values()[i] - harmonic.values()[i]).abs());
        }
        if region.boundary_distance(x) == 0.0 || !region.contains(x) {
            sup_v_outside = sup_v_outside.max(v.values()[i]);
        }
    }
    Ok(ConjectureReport {
        n: n_large,
        harmonic,
        harmonic_difference,
        sup_v_outside,
    })
}

/// Discrete harmonic function with value 1 on the nodes of the closed box
/// and 0 on the domain boundary.
pub fn harmonic_outside(grid: &Grid, region: &SubBox) -> Result<GridFunction> {
    let op = assemble(grid, &CoefficientField::identity(grid))?;
    let dim = grid.dim();
    let fixed: Vec<bool> = op
        .interior_nodes()
        .iter()
        .map(|&i| region.contains(&grid.coords(i)[..dim]))
        .collect();
    let chi: Vec<f64> = fixed.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    // Write u = chi + y with y = 0 on the box; a dominant shift pins those rows.
    let a_chi = op.apply(&chi);
    let pin = 1e20 * op.diagonal().iter().fold(0.0_f64, |m, &d| m.max(d));
    let shift: Vec<f64> = fixed.iter().map(|&b| if b { pin } else { 0.0 }).collect();
    let rhs: Vec<f64> = a_chi
        .iter()
        .zip(&fixed)
        .map(|(&r, &b)| if b { 0.0 } else { -r })
        .collect();
    let (y, _) = op.solve_shifted(Some(&shift), &rhs)?;
    let u: Vec<f64> = y
        .iter()
        .zip(&chi)
        .zip(&fixed)
        .map(|((&y, &c), &b)| if b { 1.0 } else { y + c })
        .collect();
    GridFunction::new(grid.clone(), op.extend(&u))
}
