use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;
use singlab_core::asymptotics::{
    conjecture_experiment, harmonic_outside, limit_equation_check, measure_histogram, run_sweep,
};
use singlab_core::grid::{Grid, GridFunction};
use singlab_core::oned::{
    alpha_n, c_lower, c_upper, construct_cn, t_n_of_c, Geometry, LimitProfile, OneDProfile,
    PiecewiseProfile,
};
use singlab_core::singular::{
    linfty_certificate, quasilinear_residual, singular_residual_with, to_quasilinear,
    SingularSolver,
};

use crate::config::{ConfigError, ExperimentConfig};
use crate::output::{fmt17, fmt_opt, Plot, Table, Writer};

fn coordinate_header(grid: &Grid) -> Vec<&'static str> {
    if grid.dim() == 1 {
        vec!["t (position)"]
    } else {
        vec!["x (position)", "y (position)"]
    }
}

fn coordinates(grid: &Grid, i: usize) -> Vec<String> {
    grid.coords(i)[..grid.dim()]
        .iter()
        .map(|&x| fmt17(x))
        .collect()
}

/// Polyline data along the middle grid row (or the whole line in 1-D).
fn section(u: &GridFunction) -> Vec<(f64, f64)> {
    let grid = u.grid();
    let nx = grid.nodes(0);
    let row = if grid.dim() == 1 {
        0
    } else {
        grid.axis(1).cells / 2
    };
    (0..nx)
        .map(|i| {
            let idx = grid.flat_index([i, row]);
            (grid.coords(idx)[0], u.values()[idx])
        })
        .collect()
}

#[derive(Serialize)]
struct TraceEntry {
    m: u64,
    iterations: usize,
    residual: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    n: f64,
    cells: Vec<usize>,
    sup_norm: f64,
    min: f64,
    total_mass: f64,
    certificate: Option<f64>,
    quasilinear_residual: f64,
    singular_residual: f64,
    stabilized: bool,
    final_gap: f64,
    trace: Vec<TraceEntry>,
}

pub fn solve(cfg: &ExperimentConfig, n: Option<f64>, out: &Path) -> Result<()> {
    let gamma = n.unwrap_or(cfg.problem.gamma);
    let spec = cfg.problem_spec(gamma)?;
    let sol = SingularSolver::new(&spec, cfg.solver_options())?.solve(&cfg.schedule())?;
    let v = to_quasilinear(&sol.u, gamma)?;
    let grid = spec.grid();

    let mut header = coordinate_header(grid);
    header.extend(["u (solution u_n)", "v (quasilinear v_n = u_n^(n+1)/(n+1))"]);
    let mut table = Table::new(header);
    for i in 0..grid.node_count() {
        let mut row = coordinates(grid, i);
        row.push(fmt17(sol.u.values()[i]));
        row.push(fmt17(v.values()[i]));
        table.push(row);
    }
    let summary = SolveSummary {
        n: gamma,
        cells: grid.axes().iter().map(|a| a.cells).collect(),
        sup_norm: sol.sup_norm(),
        min: sol.u.min(),
        total_mass: sol.total_mass(),
        certificate: linfty_certificate(&sol.u, gamma, spec.f()).ok(),
        quasilinear_residual: quasilinear_residual(&v, gamma, spec.f())?.norm,
        singular_residual: singular_residual_with(&sol.u, &spec, cfg.solver_options().weighting)?
            .norm,
        stabilized: sol.stabilized,
        final_gap: sol.final_gap,
        trace: sol
            .trace
            .iter()
            .map(|t| TraceEntry {
                m: t.m,
                iterations: t.iterations,
                residual: t.residual,
            })
            .collect(),
    };
    let mut plot = Plot::new(&format!("profile, n = {gamma}"), "t", "value");
    plot.add("u", section(&sol.u));
    plot.add("v", section(&v));

    let mut w = Writer::new(out, &cfg.output)?;
    w.csv("solution.csv", &table)?;
    w.json("summary.json", &summary)?;
    w.svg("profile.svg", &plot)?;
    Ok(())
}

pub fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let spec = cfg.problem_spec(cfg.problem.gamma)?;
    let settings = cfg.sweep_settings()?;
    let report = run_sweep(&spec, &settings)?;

    let mut header: Vec<String> = [
        "n (exponent)",
        "sup_norm (|u_n|_inf)",
        "total_mass (int f/u_n^n)",
        "quasilinear_residual (|-Lap v + n/(n+1)|grad v|^2/v - f|_inf)",
        "certificate (|u_n|_inf^(n+1)/((n+1)|f|_inf))",
        "v_sup_norm (|v_n|_inf)",
        "v_h1_seminorm (|grad v_n|_L2)",
        "stabilized (m schedule)",
        "final_gap (sup |u_m - u_m'|)",
    ]
    .map(String::from)
    .to_vec();
    for k in 0..settings.compacta.len() {
        header.push(format!("min_{k} (min u_n on compactum {k})"));
        header.push(format!("deviation_{k} (max |u_n - 1| on compactum {k})"));
        header.push(format!("fitted_m_{k} (sup z_n^+ on compactum {k})"));
    }
    for k in 0..settings.local_regions.len() {
        header.push(format!("local_mass_{k} (int f/u_n^n over region {k})"));
    }
    header.push("error (solver failure)".into());
    let mut table = Table::new(header);
    for row in &report.rows {
        let mut r = vec![
            fmt17(row.n),
            fmt17(row.sup_norm),
            fmt17(row.total_mass),
            fmt17(row.quasilinear_residual),
            fmt_opt(row.certificate),
            fmt17(row.v_sup_norm),
            fmt17(row.v_h1_seminorm),
            row.stabilized.to_string(),
            fmt17(row.final_gap),
        ];
        for k in 0..settings.compacta.len() {
            r.push(fmt_opt(row.compacta_min[k]));
            r.push(fmt_opt(row.compacta_deviation[k]));
            r.push(fmt_opt(row.fitted_m[k]));
        }
        for m in &row.local_masses {
            r.push(fmt17(*m));
        }
        r.push(row.error.clone().unwrap_or_default().replace(',', ";"));
        table.push(r);
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        settings: &'a singlab_core::asymptotics::SweepSettings,
        rows: &'a [singlab_core::asymptotics::SweepRow],
        histogram_total: Option<f64>,
        shell_fractions: Option<Vec<(f64, f64)>>,
        atoms: Option<Vec<(Vec<f64>, f64)>>,
        limit_difference: Option<f64>,
        limit_error: Option<String>,
    }
    let (atoms, limit_difference, limit_error) = match &report.limit_check {
        Some(Ok(c)) => (Some(c.atoms.clone()), Some(c.difference), None),
        Some(Err(e)) => (None, None, Some(e.clone())),
        None => (None, None, None),
    };
    let summary = Summary {
        settings: &settings,
        rows: &report.rows,
        histogram_total: report.histogram.as_ref().map(|h| h.total),
        shell_fractions: report.histogram.as_ref().map(|h| h.shell_fractions.clone()),
        atoms,
        limit_difference,
        limit_error,
    };
    let ok: Vec<_> = report.rows.iter().filter(|r| r.is_ok()).collect();
    let mut plot = Plot::new("sweep", "n", "value");
    plot.add("|u_n|_inf", ok.iter().map(|r| (r.n, r.sup_norm)).collect());
    if !settings.compacta.is_empty() {
        plot.add(
            "max |u_n - 1| on compactum 0",
            ok.iter()
                .filter_map(|r| r.compacta_deviation[0].map(|d| (r.n, d)))
                .collect(),
        );
    }
    plot.add(
        "|v_n|_inf",
        ok.iter().map(|r| (r.n, r.v_sup_norm)).collect(),
    );

    let mut w = Writer::new(out, &cfg.output)?;
    w.csv("sweep.csv", &table)?;
    w.json("summary.json", &summary)?;
    w.svg("convergence.svg", &plot)?;
    if ok.is_empty() {
        bail!("every row of the sweep failed");
    }
    Ok(())
}

#[derive(Serialize)]
struct OnedRow {
    n: f64,
    c: Option<f64>,
    c_lower: Option<f64>,
    c_upper: Option<f64>,
    first_zero: Option<f64>,
    alpha: Option<f64>,
    matching_residual: Option<f64>,
    monotone: Option<bool>,
    error: Option<String>,
}

fn oned_row(n: f64, geometry: Geometry) -> singlab_core::Result<(OnedRow, OneDProfile)> {
    match geometry {
        Geometry::CompactSupport => {
            let r = construct_cn(n)?;
            let profile = OneDProfile::new(n, r.c)?;
            Ok((
                OnedRow {
                    n,
                    c: Some(r.c),
                    c_lower: Some(r.c_lower),
                    c_upper: Some(r.c_upper),
                    first_zero: Some(t_n_of_c(r.c, n)?),
                    alpha: Some(profile.alpha()),
                    matching_residual: Some(r.residual),
                    monotone: Some(r.monotone),
                    error: None,
                },
                profile,
            ))
        }
        Geometry::FullSupport { r } => {
            let profile = OneDProfile::with_first_zero(r, n)?;
            Ok((
                OnedRow {
                    n,
                    c: Some(profile.c()),
                    c_lower: Some(c_lower(n)?),
                    c_upper: Some(c_upper(n)?),
                    first_zero: Some(profile.first_zero()),
                    alpha: Some(alpha_n(r, n)?),
                    matching_residual: None,
                    monotone: None,
                    error: None,
                },
                profile,
            ))
        }
    }
}

pub fn oned(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let a = &cfg.analytic;
    let limit = LimitProfile::new(a.geometry).map_err(|e| ConfigError(e.to_string()))?;
    let span = limit.domain_radius();

    let mut rows = Vec::new();
    let mut samples = Table::new([
        "n (exponent)",
        "t (position)",
        "y (normalised profile y_n)",
        "v (v_n = c(n-1)/(n+1) y_n^(n+1))",
        "v_limit (limit profile v)",
    ]);
    let mut plot = Plot::new("quasilinear profiles", "t", "v");
    for &n in &a.n_list {
        match oned_row(n, a.geometry) {
            Ok((row, profile)) => {
                let mut pts = Vec::new();
                let piecewise = match a.geometry {
                    Geometry::CompactSupport => Some(PiecewiseProfile::new(n, profile.c())?),
                    Geometry::FullSupport { .. } => None,
                };
                let scale = profile.c() * (n - 1.0) / (n + 1.0);
                for k in 0..=a.samples {
                    let t = span * k as f64 / a.samples as f64;
                    let ln_y = match &piecewise {
                        Some(p) => p.ln_y(t)?,
                        None => profile.ln_w(t.min(profile.first_zero()))?,
                    };
                    let y = ln_y.exp();
                    let v = (scale.ln() + (n + 1.0) * ln_y).exp();
                    samples.push(vec![
                        fmt17(n),
                        fmt17(t),
                        fmt17(y),
                        fmt17(v),
                        fmt17(limit.v(t)),
                    ]);
                    pts.push((t, v));
                }
                plot.add(format!("n = {n}"), pts);
                rows.push(row);
            }
            Err(e) => rows.push(OnedRow {
                n,
                c: None,
                c_lower: None,
                c_upper: None,
                first_zero: None,
                alpha: None,
                matching_residual: None,
                monotone: None,
                error: Some(e.to_string()),
            }),
        }
    }
    plot.add(
        "limit",
        (0..=a.samples)
            .map(|k| {
                let t = span * k as f64 / a.samples as f64;
                (t, limit.v(t))
            })
            .collect(),
    );
    let mut table = Table::new([
        "n (exponent)",
        "c (c_n)",
        "c_lower (lower bracket)",
        "c_upper (upper bracket)",
        "first_zero (T_n)",
        "alpha (alpha_n)",
        "matching_residual (F(c_n))",
        "monotone (F increasing on samples)",
        "error",
    ]);
    for r in &rows {
        table.push(vec![
            fmt17(r.n),
            fmt_opt(r.c),
            fmt_opt(r.c_lower),
            fmt_opt(r.c_upper),
            fmt_opt(r.first_zero),
            fmt_opt(r.alpha),
            fmt_opt(r.matching_residual),
            r.monotone.map(|b| b.to_string()).unwrap_or_default(),
            r.error.clone().unwrap_or_default().replace(',', ";"),
        ]);
    }
    let mut w = Writer::new(out, &cfg.output)?;
    w.csv("oned.csv", &table)?;
    w.csv("oned_profiles.csv", &samples)?;
    w.json("summary.json", &rows)?;
    w.svg("oned.svg", &plot)?;
    if rows.iter().all(|r| r.error.is_some()) {
        bail!("no analytic row could be computed");
    }
    Ok(())
}

pub fn limit_check(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let settings = cfg.sweep_settings()?;
    let n = *settings.n_list.last().expect("validated non-empty");
    let spec = cfg.problem_spec(n)?;
    let region = match spec.support_box() {
        Some(b) => b.clone(),
        None => return Err(ConfigError("limit-check needs an indicator datum".into()).into()),
    };
    let sol = SingularSolver::new(&spec, settings.options)?.solve(&settings.schedule)?;
    let hist = measure_histogram(&sol.u, &spec, n, &settings.shell_distances)?;
    let check = limit_equation_check(&sol.u, &hist, spec.coefficients())?;
    let limit = harmonic_outside(spec.grid(), &region)?;
    let limit_difference = check
        .reconstructed
        .values()
        .iter()
        .zip(limit.values())
        .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));

    #[derive(Serialize)]
    struct Atom {
        location: Vec<f64>,
        mass: f64,
    }
    #[derive(Serialize)]
    struct Summary {
        n: f64,
        total_mass: f64,
        shell_fractions: Vec<(f64, f64)>,
        atoms: Vec<Atom>,
        difference_from_solution: f64,
        difference_from_limit_profile: f64,
    }
    let summary = Summary {
        n,
        total_mass: hist.total,
        shell_fractions: hist.shell_fractions.clone(),
        atoms: check
            .atoms
            .iter()
            .map(|(l, m)| Atom {
                location: l.clone(),
                mass: *m,
            })
            .collect(),
        difference_from_solution: check.difference,
        difference_from_limit_profile: limit_difference,
    };
    let grid = spec.grid();
    let mut header = coordinate_header(grid);
    header.extend([
        "u (solution u_n)",
        "reconstructed (solution of the atomic limit problem)",
        "limit (1 on the support; harmonic outside)",
        "mass (node share of f/u_n^n)",
    ]);
    let mut table = Table::new(header);
    for i in 0..grid.node_count() {
        let mut row = coordinates(grid, i);
        row.push(fmt17(sol.u.values()[i]));
        row.push(fmt17(check.reconstructed.values()[i]));
        row.push(fmt17(limit.values()[i]));
        row.push(fmt17(hist.cell_masses[i]));
        table.push(row);
    }
    let mut plot = Plot::new(&format!("limit problem, n = {n}"), "t", "u");
    plot.add("u_n", section(&sol.u));
    plot.add("atoms", section(&check.reconstructed));
    plot.add("limit", section(&limit));

    let mut w = Writer::new(out, &cfg.output)?;
    w.csv("limit_check.csv", &table)?;
    w.json("summary.json", &summary)?;
    w.svg("limit_check.svg", &plot)?;
    Ok(())
}

pub fn conjecture(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let settings = cfg.sweep_settings()?;
    let n = *settings.n_list.last().expect("validated non-empty");
    let spec = cfg.problem_spec(n)?;
    if spec.support_box().is_none() {
        return Err(ConfigError("conjecture needs an indicator datum".into()).into());
    }
    let report = conjecture_experiment(&spec, n, &settings.schedule, settings.options)?;

    #[derive(Serialize)]
    struct Summary {
        n: f64,
        harmonic_difference: f64,
        sup_v_outside: f64,
    }
    let grid = spec.grid();
    let mut header = coordinate_header(grid);
    header.push("harmonic (1 on the support; harmonic outside)");
    let mut table = Table::new(header);
    for i in 0..grid.node_count() {
        let mut row = coordinates(grid, i);
        row.push(fmt17(report.harmonic.values()[i]));
        table.push(row);
    }
    let mut w = Writer::new(out, &cfg.output)?;
    w.csv("harmonic.csv", &table)?;
    w.json(
        "summary.json",
        &Summary {
            n,
            harmonic_difference: report.harmonic_difference,
            sup_v_outside: report.sup_v_outside,
        },
    )?;
    let mut plot = Plot::new(&format!("harmonic comparison, n = {n}"), "t", "u");
    plot.add("harmonic", section(&report.harmonic));
    w.svg("harmonic.svg", &plot)?;
    Ok(())
}
