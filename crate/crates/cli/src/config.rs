//! JSON experiment configuration.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use singlab_core::asymptotics::{default_compacta, SweepSettings};
use singlab_core::grid::{
    CoefficientField, DatumSpec, Grid, ProblemSpec, SubBox, SupportAnnotation,
};
use singlab_core::oned::Geometry;
use singlab_core::singular::{default_schedule, LoadWeighting, SolverOptions};

/// A configuration that cannot be turned into a valid problem. Maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid config: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemBlock,
    #[serde(default)]
    pub sweep: SweepBlock,
    #[serde(default)]
    pub analytic: AnalyticBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub cells: Vec<usize>,
    #[serde(default)]
    pub coefficients: CoefficientBlock,
    pub datum: DatumBlock,
    #[serde(default = "default_support")]
    pub support: SupportAnnotation,
    /// Exponent for `solve`; `--n` overrides it.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_support() -> SupportAnnotation {
    SupportAnnotation::General
}

fn default_gamma() -> f64 {
    3.0
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CoefficientBlock {
    #[default]
    Identity,
    Scalar {
        value: f64,
    },
    /// Row-major `[m11, m12, m21, m22]`, or `[m11]` in 1-D.
    Constant {
        matrix: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatumBlock {
    Constant {
        value: f64,
    },
    Indicator {
        value: f64,
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxBlock {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepBlock {
    pub n_list: Vec<f64>,
    pub m_schedule: Option<Vec<u64>>,
    pub tolerances: ToleranceBlock,
    /// Defaults to the middle half of the support (or of the domain).
    pub compacta: Option<Vec<BoxBlock>>,
    pub local_regions: Vec<BoxBlock>,
    pub shell_distances: Vec<f64>,
}

impl Default for SweepBlock {
    fn default() -> Self {
        Self {
            n_list: vec![10.0, 40.0, 160.0],
            m_schedule: None,
            tolerances: ToleranceBlock::default(),
            compacta: None,
            local_regions: Vec::new(),
            shell_distances: vec![0.1],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceBlock {
    pub max_iterations: usize,
    pub update: f64,
    pub residual: f64,
    pub stabilization: f64,
    pub picard_iterations: usize,
    pub load_weighting: LoadWeighting,
}

impl Default for ToleranceBlock {
    fn default() -> Self {
        let o = SolverOptions::default();
        Self {
            max_iterations: o.max_iterations,
            update: o.update_tolerance,
            residual: o.residual_tolerance,
            stabilization: o.stabilization_tolerance,
            picard_iterations: o.picard_iterations,
            load_weighting: o.weighting,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticBlock {
    pub n_list: Vec<f64>,
    pub geometry: Geometry,
    /// Number of sample intervals for tabulated profiles.
    pub samples: usize,
}

impl Default for AnalyticBlock {
    fn default() -> Self {
        Self {
            n_list: vec![3.0, 5.0, 9.0, 33.0],
            geometry: Geometry::CompactSupport,
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub directory: Option<String>,
    pub formats: Vec<String>,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            directory: None,
            formats: vec!["csv".into(), "json".into(), "svg".into()],
        }
    }
}

impl OutputBlock {
    pub fn wants(&self, format: &str) -> bool {
        self.formats.iter().any(|f| f == format)
    }
}

fn to_box(b: &BoxBlock) -> Result<SubBox, ConfigError> {
    SubBox::new(b.lower.clone(), b.upper.clone()).map_err(|e| ConfigError(e.to_string()))
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks everything that does not need a solve.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.problem_spec(self.problem.gamma)?;
        self.sweep_settings()?;
        for f in &self.output.formats {
            if !["csv", "json", "svg"].contains(&f.as_str()) {
                return Err(ConfigError(format!("unknown output format {f:?}")));
            }
        }
        if self.analytic.samples < 2 {
            return Err(ConfigError("analytic.samples must be at least 2".into()));
        }
        Ok(())
    }

    pub fn problem_spec(&self, gamma: f64) -> Result<ProblemSpec, ConfigError> {
        let p = &self.problem;
        let err = |e: singlab_core::Error| ConfigError(e.to_string());
        let grid = Grid::uniform(&p.lower, &p.upper, &p.cells).map_err(err)?;
        let m = match &p.coefficients {
            CoefficientBlock::Identity => CoefficientField::identity(&grid),
            CoefficientBlock::Scalar { value } => CoefficientField::scalar(&grid, *value),
            CoefficientBlock::Constant { matrix } => match matrix.as_slice() {
                [a] if grid.dim() == 1 => CoefficientField::scalar(&grid, *a),
                [a, b, c, d] if grid.dim() == 2 => {
                    CoefficientField::constant(&grid, [*a, *b, *c, *d])
                }
                _ => {
                    return Err(ConfigError(format!(
                        "coefficient matrix needs {} entries",
                        grid.dim() * grid.dim()
                    )))
                }
            },
        };
        let datum = match &p.datum {
            DatumBlock::Constant { value } => DatumSpec::Constant(*value),
            DatumBlock::Indicator {
                value,
                lower,
                upper,
            } => DatumSpec::Indicator {
                value: *value,
                region: SubBox::new(lower.clone(), upper.clone()).map_err(err)?,
            },
        };
        ProblemSpec::new(grid, m, datum, gamma, p.support).map_err(err)
    }

    pub fn solver_options(&self) -> SolverOptions {
        let t = &self.sweep.tolerances;
        SolverOptions {
            max_iterations: t.max_iterations,
            update_tolerance: t.update,
            residual_tolerance: t.residual,
            stabilization_tolerance: t.stabilization,
            picard_iterations: t.picard_iterations,
            weighting: t.load_weighting,
        }
    }

    pub fn schedule(&self) -> Vec<u64> {
        self.sweep
            .m_schedule
            .clone()
            .unwrap_or_else(default_schedule)
    }

    pub fn sweep_settings(&self) -> Result<SweepSettings, ConfigError> {
        let spec = self.problem_spec(self.problem.gamma)?;
        let s = &self.sweep;
        if s.n_list.is_empty() || s.n_list.windows(2).any(|p| p[1] <= p[0]) {
            return Err(ConfigError(
                "sweep.n_list must be non-empty and increasing".into(),
            ));
        }
        if s.n_list.iter().any(|&n| n.is_nan() || n < 3.0) {
            return Err(ConfigError(
                "sweep.n_list entries must be at least 3".into(),
            ));
        }
        let schedule = self.schedule();
        if schedule.is_empty() || schedule[0] == 0 || schedule.windows(2).any(|p| p[1] <= p[0]) {
            return Err(ConfigError(
                "m_schedule must be positive and increasing".into(),
            ));
        }
        let compacta = match &s.compacta {
            Some(list) => list.iter().map(to_box).collect::<Result<_, _>>()?,
            None => default_compacta(&spec).0,
        };
        Ok(SweepSettings {
            n_list: s.n_list.clone(),
            schedule,
            options: self.solver_options(),
            compacta,
            local_regions: s
                .local_regions
                .iter()
                .map(to_box)
                .collect::<Result<_, _>>()?,
            shell_distances: s.shell_distances.clone(),
        })
    }
}
