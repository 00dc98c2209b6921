//! Uniform tensor meshes, nodal fields, coefficient matrices and problem data.
//!
//! Nodes are stored in row-major order with axis 0 varying fastest, so the
//! node `(i, j)` of a 2-D grid lives at `j * nodes(0) + i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of cells per axis accepted by [`Grid::uniform`].
pub const MIN_CELLS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub cells: usize,
}

impl Axis {
    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.cells as f64
    }

    pub fn nodes(&self) -> usize {
        self.cells + 1
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i == self.cells {
            self.hi
        } else {
            self.lo + i as f64 * self.spacing()
        }
    }
}

/// A uniform 1-D or 2-D tensor grid including its boundary nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    axes: Vec<Axis>,
}

impl Grid {
    /// Builds a grid from per-axis extents and cell counts.
    pub fn uniform(lo: &[f64], hi: &[f64], cells: &[usize]) -> Result<Self> {
        let dim = lo.len();
        if dim == 0 || dim > 2 || hi.len() != dim || cells.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "grid needs 1 or 2 axes with matching lo/hi/cells (got {}, {}, {})",
                lo.len(),
                hi.len(),
                cells.len()
            )));
        }
        let mut axes = Vec::with_capacity(dim);
        for a in 0..dim {
            if !(lo[a].is_finite() && hi[a].is_finite()) || lo[a] >= hi[a] {
                return Err(Error::InvalidArgument(format!(
                    "degenerate extent on axis {a}: [{}, {}]",
                    lo[a], hi[a]
                )));
            }
            if cells[a] < MIN_CELLS {
                return Err(Error::InvalidArgument(format!(
                    "axis {a} needs at least {MIN_CELLS} cells, got {}",
                    cells[a]
                )));
            }
            axes.push(Axis {
                lo: lo[a],
                hi: hi[a],
                cells: cells[a],
            });
        }
        Ok(Self { axes })
    }

    /// Shorthand for a 1-D grid on `[lo, hi]`.
    pub fn interval(lo: f64, hi: f64, cells: usize) -> Result<Self> {
        Self::uniform(&[lo], &[hi], &[cells])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn spacing(&self, a: usize) -> f64 {
        self.axes[a].spacing()
    }

    /// Nodes along axis `a`, boundary included.
    pub fn nodes(&self, a: usize) -> usize {
        self.axes[a].nodes()
    }

    pub fn node_count(&self) -> usize {
        self.axes.iter().map(Axis::nodes).product()
    }

    /// Volume of one cell (`h` in 1-D, `hx * hy` in 2-D).
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).product()
    }

    /// Per-axis index of a flat node index.
    pub fn multi_index(&self, idx: usize) -> [usize; 2] {
        let nx = self.nodes(0);
        if self.dim() == 1 {
            [idx, 0]
        } else {
            [idx % nx, idx / nx]
        }
    }

    pub fn flat_index(&self, ij: [usize; 2]) -> usize {
        if self.dim() == 1 {
            ij[0]
        } else {
            ij[1] * self.nodes(0) + ij[0]
        }
    }

    /// Coordinates of a node; the unused second component is 0 in 1-D.
    pub fn coords(&self, idx: usize) -> [f64; 2] {
        let ij = self.multi_index(idx);
        let mut x = [0.0; 2];
        for (a, axis) in self.axes.iter().enumerate() {
            x[a] = axis.coord(ij[a]);
        }
        x
    }

    pub fn is_boundary(&self, idx: usize) -> bool {
        let ij = self.multi_index(idx);
        self.axes
            .iter()
            .enumerate()
            .any(|(a, axis)| ij[a] == 0 || ij[a] == axis.cells)
    }

    /// Distance of a node to the nearest boundary face along axis `a`, in cells.
    pub fn wall_index(&self, idx: usize, a: usize) -> usize {
        let i = self.multi_index(idx)[a];
        i.min(self.axes[a].cells - i)
    }

    /// Whether a point lies strictly inside the domain.
    pub fn contains_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && self
                .axes
                .iter()
                .zip(x)
                .all(|(axis, &xi)| xi > axis.lo && xi < axis.hi)
    }

    /// Index of the node nearest to `x`; ties go to the lower index.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let mut ij = [0usize; 2];
        for (a, axis) in self.axes.iter().enumerate() {
            let s = (x[a] - axis.lo) / axis.spacing();
            // ceil(s - 0.5) rounds exact halves down.
            let k = (s - 0.5).ceil().max(0.0) as usize;
            ij[a] = k.min(axis.cells);
        }
        self.flat_index(ij)
    }
}

/// Nodal values on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} nodal values, got {}",
                grid.node_count(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite value {} at node {i}",
                values[i]
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        let n = grid.node_count();
        Self {
            grid,
            values: vec![0.0; n],
        }
    }

    /// Samples `f` at every node.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Result<Self> {
        let values = (0..grid.node_count()).map(|i| f(grid.coords(i))).collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Applies `f` nodally; fails if any result is non-finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }
}

/// Closed axis-aligned box `[lo, hi]` used for sub-domains and compacta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SubBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidArgument(format!(
                "malformed box lo={lo:?} hi={hi:?}"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    /// Closed containment with a relative slack so nodes on the faces count as inside.
    pub fn contains(&self, x: &[f64]) -> bool {
        self.lo.iter().zip(&self.hi).zip(x).all(|((&l, &h), &xi)| {
            let tol = 1e-12 * (1.0 + l.abs().max(h.abs()));
            xi >= l - tol && xi <= h + tol
        })
    }

    /// Distance from `x` to the boundary of the box (0 on the faces).
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        if self.contains(x) {
            self.lo
                .iter()
                .zip(&self.hi)
                .zip(x)
                .map(|((&l, &h), &xi)| (xi - l).min(h - xi).max(0.0))
                .fold(f64::INFINITY, f64::min)
        } else {
            self.lo
                .iter()
                .zip(&self.hi)
                .zip(x)
                .map(|((&l, &h), &xi)| (l - xi).max(xi - h).max(0.0).powi(2))
                .sum::<f64>()
                .sqrt()
        }
    }

    /// Strictly inside the grid's open domain.
    pub fn compactly_inside(&self, grid: &Grid) -> bool {
        self.lo.len() == grid.dim()
            && grid
                .axes()
                .iter()
                .zip(self.lo.iter().zip(&self.hi))
                .all(|(axis, (&l, &h))| l > axis.lo && h < axis.hi)
    }
}

/// Nodal 2×2 (or 1×1) coefficient matrices `M(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientField {
    grid: Grid,
    /// Row-major `[m11, m12, m21, m22]`; only `m11` is used in 1-D.
    entries: Vec<[f64; 4]>,
}

impl CoefficientField {
    pub fn identity(grid: &Grid) -> Self {
        Self::constant(grid, [1.0, 0.0, 0.0, 1.0])
    }

    pub fn constant(grid: &Grid, m: [f64; 4]) -> Self {
        Self {
            grid: grid.clone(),
            entries: vec![m; grid.node_count()],
        }
    }

    pub fn scalar(grid: &Grid, s: f64) -> Self {
        Self::constant(grid, [s, 0.0, 0.0, s])
    }

    pub fn from_fn(grid: &Grid, f: impl Fn([f64; 2]) -> [f64; 4]) -> Self {
        Self {
            grid: grid.clone(),
            entries: (0..grid.node_count()).map(|i| f(grid.coords(i))).collect(),
        }
    }

    pub fn from_entries(grid: &Grid, entries: Vec<[f64; 4]>) -> Result<Self> {
        if entries.len() != grid.node_count() {
            return Err(Error::InvalidArgument(format!(
                "expected {} coefficient matrices, got {}",
                grid.node_count(),
                entries.len()
            )));
        }
        Ok(Self {
            grid: grid.clone(),
            entries,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn entry(&self, idx: usize) -> [f64; 4] {
        self.entries[idx]
    }

    pub fn is_identity(&self) -> bool {
        let dim = self.grid.dim();
        self.entries.iter().all(|m| {
            if dim == 1 {
                m[0] == 1.0
            } else {
                *m == [1.0, 0.0, 0.0, 1.0]
            }
        })
    }
}

/// Tightest field-wide ellipticity constants `(alpha, beta)`: the smallest
/// nodal eigenvalue and the largest nodal operator norm.
pub fn check_ellipticity(field: &CoefficientField) -> Result<(f64, f64)> {
    let dim = field.grid.dim();
    let mut alpha = f64::INFINITY;
    let mut beta: f64 = 0.0;
    for (idx, m) in field.entries.iter().enumerate() {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::EllipticityViolation(format!(
                "non-finite entry at node {idx}"
            )));
        }
        let (lo, hi) = if dim == 1 {
            (m[0], m[0].abs())
        } else {
            if m[1] != m[2] {
                return Err(Error::EllipticityViolation(format!(
                    "non-symmetric matrix at node {idx}: m12 = {}, m21 = {}",
                    m[1], m[2]
                )));
            }
            let mean = 0.5 * (m[0] + m[3]);
            let rad = (0.25 * (m[0] - m[3]).powi(2) + m[1] * m[1]).sqrt();
            let (l1, l2) = (mean - rad, mean + rad);
            (l1, l1.abs().max(l2.abs()))
        };
        alpha = alpha.min(lo);
        beta = beta.max(hi);
    }
    if alpha <= 0.0 {
        return Err(Error::EllipticityViolation(format!(
            "smallest eigenvalue {alpha} is not positive"
        )));
    }
    Ok((alpha, beta))
}

/// How the datum vanishes, which decides which asymptotic regime applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportAnnotation {
    /// `{f > 0}` sits inside a sub-box compactly contained in the domain.
    CompactlyContained,
    /// `f` is bounded below by a positive constant on every compactum.
    StrictlyPositive,
    General,
}

/// The right-hand side datum `f >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatumSpec {
    Constant(f64),
    /// `value` on the closed box, 0 elsewhere; nodes on the faces take `value`.
    Indicator {
        value: f64,
        region: SubBox,
    },
    Tabulated(GridFunction),
}

impl DatumSpec {
    pub fn sample(&self, grid: &Grid) -> Result<GridFunction> {
        match self {
            DatumSpec::Constant(c) => GridFunction::from_fn(grid.clone(), |_| *c),
            DatumSpec::Indicator { value, region } => {
                let dim = grid.dim();
                GridFunction::from_fn(grid.clone(), |x| {
                    if region.contains(&x[..dim]) {
                        *value
                    } else {
                        0.0
                    }
                })
            }
            DatumSpec::Tabulated(g) => {
                if g.grid() != grid {
                    return Err(Error::InvalidArgument(
                        "tabulated datum lives on a different grid".into(),
                    ));
                }
                Ok(g.clone())
            }
        }
    }
}

/// Everything needed to pose `-div(M grad u) = f / u^gamma`, `u = 0` on the boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    grid: Grid,
    coefficients: CoefficientField,
    datum: DatumSpec,
    f: GridFunction,
    gamma: f64,
    support: SupportAnnotation,
}

impl ProblemSpec {
    pub fn new(
        grid: Grid,
        coefficients: CoefficientField,
        datum: DatumSpec,
        gamma: f64,
        support: SupportAnnotation,
    ) -> Result<Self> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gamma must be positive, got {gamma}"
            )));
        }
        if coefficients.grid() != &grid {
            return Err(Error::InvalidArgument(
                "coefficient field lives on a different grid".into(),
            ));
        }
        check_ellipticity(&coefficients)?;
        match &datum {
            DatumSpec::Constant(c) if *c < 0.0 => {
                return Err(Error::InvalidArgument(format!("negative datum {c}")));
            }
            DatumSpec::Indicator { value, region } => {
                if *value < 0.0 {
                    return Err(Error::InvalidArgument(format!("negative datum {value}")));
                }
                if region.lo.len() != grid.dim() {
                    return Err(Error::InvalidArgument(
                        "indicator box dimension does not match the grid".into(),
                    ));
                }
                if support == SupportAnnotation::CompactlyContained
                    && !region.compactly_inside(&grid)
                {
                    return Err(Error::InvalidArgument(format!(
                        "support box {region:?} is not compactly contained in the domain"
                    )));
                }
            }
            _ => {}
        }
        let f = datum.sample(&grid)?;
        if f.min() < 0.0 {
            return Err(Error::InvalidArgument("datum takes negative values".into()));
        }
        Ok(Self {
            grid,
            coefficients,
            datum,
            f,
            gamma,
            support,
        })
    }

    /// Identity coefficients, the usual case.
    pub fn laplacian(
        grid: Grid,
        datum: DatumSpec,
        gamma: f64,
        support: SupportAnnotation,
    ) -> Result<Self> {
        let m = CoefficientField::identity(&grid);
        Self::new(grid, m, datum, gamma, support)
    }

    /// Same problem with a different exponent.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.grid.clone(),
            self.coefficients.clone(),
            self.datum.clone(),
            gamma,
            self.support,
        )
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &CoefficientField {
        &self.coefficients
    }

    pub fn datum(&self) -> &DatumSpec {
        &self.datum
    }

    /// Nodal samples of `f`.
    pub fn f(&self) -> &GridFunction {
        &self.f
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn support(&self) -> SupportAnnotation {
        self.support
    }

    /// The indicator region, when the datum is an indicator.
    pub fn support_box(&self) -> Option<&SubBox> {
        match &self.datum {
            DatumSpec::Indicator { region, .. } => Some(region),
            _ => None,
        }
    }
}

/// `T_k(s) = max(-k, min(s, k))`.
pub fn truncation_t(s: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    s.clamp(-k, k)
}

/// `G_k(s) = (|s| - k)^+ sign(s)`, so that `T_k + G_k = id`.
pub fn truncation_g(s: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    (s.abs() - k).max(0.0).copysign(s)
}
