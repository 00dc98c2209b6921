//! Property checks shared by the `properties` and `acceptance` targets. Each
//! runs a full proptest campaign on the runner it is handed.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};

use singlab_core::elliptic::assemble;
use singlab_core::grid::{
    truncation_g, truncation_t, CoefficientField, DatumSpec, Grid, GridFunction, ProblemSpec,
    SupportAnnotation,
};
use singlab_core::oned::{c_lower, c_upper, gamma_fn, matching_function, SIntegral};
use singlab_core::singular::solve_regularized;

pub type Outcome = Result<(), String>;
pub type Suite = fn(&mut TestRunner) -> Outcome;

/// Runner with a fixed seed so a campaign is reproducible.
pub fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

fn fail(msg: String) -> TestCaseError {
    TestCaseError::fail(msg)
}

fn grid_strategy() -> impl Strategy<Value = Grid> {
    prop_oneof![
        (4usize..40, 0.5f64..3.0).prop_map(|(n, len)| Grid::interval(-len, len, n).unwrap()),
        (4usize..10, 4usize..10, 0.5f64..2.0, 0.5f64..2.0)
            .prop_map(|(nx, ny, a, b)| Grid::uniform(&[0.0, 0.0], &[a, b], &[nx, ny]).unwrap()),
    ]
}

/// Symmetric, diagonally dominant constant tensors; the cross term is kept
/// small enough for the monotone stencil on moderately stretched meshes.
fn tensor_strategy() -> impl Strategy<Value = [f64; 4]> {
    (0.5f64..3.0, 0.5f64..3.0, -0.2f64..0.2).prop_map(|(a, d, r)| {
        let b = r * a.min(d);
        [a, b, b, d]
    })
}

pub fn m_matrix_sign_pattern(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(grid_strategy(), tensor_strategy()), |(grid, m)| {
            let field = if grid.dim() == 1 {
                CoefficientField::scalar(&grid, m[0])
            } else {
                CoefficientField::constant(&grid, m)
            };
            // Stretched meshes may legitimately reject the cross term.
            let Ok(op) = assemble(&grid, &field) else {
                return Ok(());
            };
            let n = op.size();
            let mut dense = vec![0.0; n * n];
            for (r, c, v) in op.triplets() {
                dense[r * n + c] += v;
            }
            for r in 0..n {
                let mut row_sum = 0.0;
                for c in 0..n {
                    let v = dense[r * n + c];
                    row_sum += v;
                    if r == c && v <= 0.0 {
                        return Err(fail(format!("diagonal {v} at {r}")));
                    }
                    if r != c && v > 0.0 {
                        return Err(fail(format!("positive off-diagonal {v} at ({r}, {c})")));
                    }
                    let t = dense[c * n + r];
                    if (v - t).abs() > 1e-12 * (1.0 + v.abs()) {
                        return Err(fail(format!("asymmetry {v} vs {t}")));
                    }
                }
                if row_sum < -1e-10 * dense[r * n + r] {
                    return Err(fail(format!("negative row sum {row_sum} in row {r}")));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn loads(len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        proptest::collection::vec(0.0f64..2.0, len),
        proptest::collection::vec(0.0f64..1.0, len),
    )
}

pub fn comparison_principle(runner: &mut TestRunner) -> Outcome {
    let strategy = (4usize..40).prop_flat_map(|n| (Just(n), loads(n + 1), 0.5f64..6.0));
    runner
        .run(&strategy, |(cells, (f, extra), gamma)| {
            let grid = Grid::interval(-1.0, 1.0, cells).unwrap();
            let lo = GridFunction::new(grid.clone(), f.clone()).unwrap();
            let hi_vals: Vec<f64> = f.iter().zip(&extra).map(|(a, b)| a + b).collect();
            let hi = GridFunction::new(grid.clone(), hi_vals).unwrap();

            let op = assemble(&grid, &CoefficientField::identity(&grid)).unwrap();
            let u_lo = op.solve_linear(&lo).unwrap();
            let u_hi = op.solve_linear(&hi).unwrap();
            for (a, b) in u_lo.values().iter().zip(u_hi.values()) {
                if *a > b + 1e-12 {
                    return Err(fail(format!("linear comparison broken: {a} > {b}")));
                }
                if *a < -1e-14 {
                    return Err(fail(format!(
                        "negative solution {a} for a non-negative load"
                    )));
                }
            }

            let pose = |g: GridFunction| {
                ProblemSpec::laplacian(
                    grid.clone(),
                    DatumSpec::Tabulated(g),
                    gamma,
                    SupportAnnotation::General,
                )
                .unwrap()
            };
            let s_lo = solve_regularized(&pose(lo), 16).map_err(|e| fail(e.to_string()))?;
            let s_hi = solve_regularized(&pose(hi), 16).map_err(|e| fail(e.to_string()))?;
            for (a, b) in s_lo.u.values().iter().zip(s_hi.u.values()) {
                if *a > b + 1e-10 * (1.0 + b) {
                    return Err(fail(format!("regularized comparison broken: {a} > {b}")));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn monotone_in_m(runner: &mut TestRunner) -> Outcome {
    let strategy = (4usize..48).prop_flat_map(|n| {
        (
            Just(n),
            proptest::collection::vec(0.0f64..2.0, n + 1),
            0.5f64..10.0,
            0u32..5,
        )
    });
    runner
        .run(&strategy, |(cells, f, gamma, k)| {
            let grid = Grid::interval(0.0, 1.0, cells).unwrap();
            let spec = ProblemSpec::laplacian(
                grid.clone(),
                DatumSpec::Tabulated(GridFunction::new(grid, f).unwrap()),
                gamma,
                SupportAnnotation::General,
            )
            .unwrap();
            let m = 4u64.pow(k);
            let a = solve_regularized(&spec, m).map_err(|e| fail(e.to_string()))?;
            let b = solve_regularized(&spec, 4 * m).map_err(|e| fail(e.to_string()))?;
            for (x, y) in a.u.values().iter().zip(b.u.values()) {
                if *x > y + 1e-10 * (1.0 + y) {
                    return Err(fail(format!("u_m = {x} above u_4m = {y} (m = {m})")));
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn truncation_identity(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(-1e3f64..1e3, 1e-3f64..1e2), |(s, k)| {
            let t = truncation_t(s, k);
            let g = truncation_g(s, k);
            if t + g != s && (t + g - s).abs() > 1e-15 * s.abs() {
                return Err(fail(format!("T + G = {} != {s}", t + g)));
            }
            if t.abs() > k || t * g < 0.0 {
                return Err(fail(format!("T = {t}, G = {g}, k = {k}")));
            }
            if s.abs() <= k && g != 0.0 {
                return Err(fail(format!("G = {g} inside [-k, k]")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn gamma_recurrence(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(0.05f64..60.0), |x| {
            let lhs = gamma_fn(x + 1.0).unwrap();
            let rhs = x * gamma_fn(x).unwrap();
            if ((lhs - rhs) / rhs).abs() > 1e-12 {
                return Err(fail(format!("Gamma({x} + 1) = {lhs}, x Gamma(x) = {rhs}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn s_n_round_trip(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(3.0f64..400.0, 1e-6f64..1.0, 1e-6f64..1.0), |(n, x, y)| {
            let s = SIntegral::new(n).unwrap();
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            let (s_lo, s_hi) = (s.eval(lo).unwrap(), s.eval(hi).unwrap());
            if lo < hi && s_lo >= s_hi {
                return Err(fail(format!(
                    "S_n not increasing: S({lo}) = {s_lo}, S({hi}) = {s_hi}"
                )));
            }
            if s_hi > s.total() + 1e-12 {
                return Err(fail(format!("S({hi}) = {s_hi} above S(1) = {}", s.total())));
            }
            let back = s.invert(s_lo).unwrap();
            if (back - lo).abs() > 1e-9 {
                return Err(fail(format!("round trip {lo} -> {s_lo} -> {back}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn matching_function_monotone(runner: &mut TestRunner) -> Outcome {
    runner
        .run(&(3.0f64..400.0, 1e-4f64..1.0, 1e-4f64..1.0), |(n, a, b)| {
            let s = SIntegral::new(n).unwrap();
            let lo = c_lower(n).unwrap();
            let hi = c_upper(n).unwrap();
            let (a, b) = if a < b { (a, b) } else { (b, a) };
            if b - a < 1e-6 {
                return Ok(());
            }
            let c1 = lo + a * (hi - lo);
            let c2 = lo + b * (hi - lo);
            let f1 = matching_function(c1, n, &s).unwrap();
            let f2 = matching_function(c2, n, &s).unwrap();
            if f1 >= f2 {
                return Err(fail(format!("F({c1}) = {f1} >= F({c2}) = {f2} at n = {n}")));
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

/// Every suite with its name, for the acceptance report.
pub fn all_suites() -> Vec<(&'static str, Suite)> {
    vec![
        ("M-matrix sign pattern", m_matrix_sign_pattern),
        ("comparison principle", comparison_principle),
        ("monotonicity in m", monotone_in_m),
        ("T/G truncation identity", truncation_identity),
        ("Gamma recurrence", gamma_recurrence),
        ("S_n round trip", s_n_round_trip),
        ("F monotone", matching_function_monotone),
    ]
}
