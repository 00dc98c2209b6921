//! Divergence-form operator `-div(M grad u)` with homogeneous Dirichlet data.
//!
//! The operator is assembled as a weighted graph Laplacian over the interior
//! nodes: `(A u)_i = sum_e c_e (u_i - u_j)` with every edge weight `c_e >= 0`.
//! Edges to boundary nodes only feed the diagonal. This form is symmetric by
//! construction and its sign pattern is that of an M-matrix, which is what the
//! discrete comparison principle needs.
//!
//! In 2-D a non-zero off-diagonal `m12` adds a diagonal edge (north-east for
//! `m12 > 0`, north-west for `m12 < 0`) and reduces the axis edges by
//! `|m12| / (hx hy)`. Assembly fails if that would make an axis weight negative.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_ellipticity, CoefficientField, Grid, GridFunction};

/// Unknown counts above which the Cholesky band is abandoned for PCG.
pub const DIRECT_SOLVE_LIMIT: usize = 100_000;
/// Relative tolerance of the PCG fallback.
pub const CG_TOLERANCE: f64 = 1e-12;
/// Relative residual demanded by [`SparseOperator::solve_linear`].
pub const LINEAR_RESIDUAL_TOLERANCE: f64 = 1e-10;

const NO_UNKNOWN: usize = usize::MAX;

#[derive(Debug, Clone)]
pub struct SparseOperator {
    grid: Grid,
    interior: Vec<usize>,
    unknown_of: Vec<usize>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    bandwidth: usize,
}

/// Edge weight between nodes `a` and `b` from arithmetically averaged entries.
fn face(m: &CoefficientField, a: usize, b: usize, k: usize) -> f64 {
    0.5 * (m.entry(a)[k] + m.entry(b)[k])
}

/// Assembles the operator for `M` on `grid`.
pub fn assemble(grid: &Grid, m: &CoefficientField) -> Result<SparseOperator> {
    check_ellipticity(m)?;
    if m.grid() != grid {
        return Err(Error::InvalidArgument(
            "coefficient field lives on a different grid".into(),
        ));
    }
    let n_nodes = grid.node_count();
    let mut unknown_of = vec![NO_UNKNOWN; n_nodes];
    let mut interior = Vec::new();
    for idx in 0..n_nodes {
        if !grid.is_boundary(idx) {
            unknown_of[idx] = interior.len();
            interior.push(idx);
        }
    }

    // (node, node, weight) for every edge, each listed once.
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    if grid.dim() == 1 {
        let h2 = grid.spacing(0).powi(2);
        for i in 0..grid.axis(0).cells {
            edges.push((i, i + 1, face(m, i, i + 1, 0) / h2));
        }
    } else {
        let (hx, hy) = (grid.spacing(0), grid.spacing(1));
        let (cx, cy) = (grid.axis(0).cells, grid.axis(1).cells);
        let at = |i: usize, j: usize| grid.flat_index([i, j]);
        for j in 0..=cy {
            for i in 0..=cx {
                let p = at(i, j);
                if i < cx {
                    let q = at(i + 1, j);
                    let w = face(m, p, q, 0) / (hx * hx) - face(m, p, q, 1).abs() / (hx * hy);
                    edges.push((p, q, w));
                }
                if j < cy {
                    let q = at(i, j + 1);
                    let w = face(m, p, q, 3) / (hy * hy) - face(m, p, q, 1).abs() / (hx * hy);
                    edges.push((p, q, w));
                }
                if i < cx && j < cy {
                    let q = at(i + 1, j + 1);
                    let m12 = face(m, p, q, 1);
                    if m12 > 0.0 {
                        edges.push((p, q, m12 / (hx * hy)));
                    }
                }
                if i > 0 && j < cy {
                    let q = at(i - 1, j + 1);
                    let m12 = face(m, p, q, 1);
                    if m12 < 0.0 {
                        edges.push((p, q, -m12 / (hx * hy)));
                    }
                }
            }
        }
    }
    if let Some(&(a, b, w)) = edges.iter().find(|e| e.2 < 0.0) {
        return Err(Error::EllipticityViolation(format!(
            "edge ({a}, {b}) gets weight {w:e}; the off-diagonal coefficient is too large \
             for a monotone stencil on this mesh"
        )));
    }

    let n = interior.len();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut diag = vec![0.0; n];
    for &(a, b, w) in &edges {
        if w == 0.0 {
            continue;
        }
        let (ua, ub) = (unknown_of[a], unknown_of[b]);
        if ua != NO_UNKNOWN {
            diag[ua] += w;
            if ub != NO_UNKNOWN {
                rows[ua].push((ub, -w));
            }
        }
        if ub != NO_UNKNOWN {
            diag[ub] += w;
            if ua != NO_UNKNOWN {
                rows[ub].push((ua, -w));
            }
        }
    }
    let mut row_ptr = Vec::with_capacity(n + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    let mut bandwidth = 0;
    row_ptr.push(0);
    for (r, mut row) in rows.into_iter().enumerate() {
        row.push((r, diag[r]));
        row.sort_by_key(|e| e.0);
        for (c, v) in row {
            bandwidth = bandwidth.max(r.abs_diff(c));
            cols.push(c);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(SparseOperator {
        grid: grid.clone(),
        interior,
        unknown_of,
        row_ptr,
        cols,
        vals,
        bandwidth,
    })
}

impl SparseOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of interior unknowns.
    pub fn size(&self) -> usize {
        self.interior.len()
    }

    /// Node index of every interior unknown.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior
    }

    /// Unknown index of a node, `None` on the boundary.
    pub fn unknown(&self, node: usize) -> Option<usize> {
        let u = self.unknown_of[node];
        (u != NO_UNKNOWN).then_some(u)
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Non-zero entries as `(row, col, value)` triplets.
    pub fn triplets(&self) -> Vec<(usize, usize, f64)> {
        let mut out = Vec::with_capacity(self.vals.len());
        for r in 0..self.size() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out.push((r, self.cols[k], self.vals[k]));
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.size())
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .find(|&k| self.cols[k] == r)
                    .map_or(0.0, |k| self.vals[k])
            })
            .collect()
    }

    /// `y = A x` on interior vectors.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.size()];
        self.apply_into(x, &mut y);
        y
    }

    pub fn apply_into(&self, x: &[f64], y: &mut [f64]) {
        for (r, yr) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            *yr = s;
        }
    }

    /// Restricts a nodal field to the interior unknowns.
    pub fn restrict(&self, values: &[f64]) -> Vec<f64> {
        self.interior.iter().map(|&i| values[i]).collect()
    }

    /// Extends interior values by zero boundary values.
    pub fn extend(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.node_count()];
        for (k, &i) in self.interior.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }

    /// `A x` evaluated on a nodal field with zero boundary values.
    pub fn apply_nodal(&self, u: &GridFunction) -> Vec<f64> {
        self.extend(&self.apply(&self.restrict(u.values())))
    }

    /// Solves `(A + diag(shift)) x = rhs` on the interior, `shift >= 0`.
    ///
    /// Returns the solution and the achieved residual sup-norm after up to two
    /// steps of iterative refinement.
    pub fn solve_shifted(&self, shift: Option<&[f64]>, rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = self.size();
        if rhs.len() != n || shift.is_some_and(|s| s.len() != n) {
            return Err(Error::InvalidArgument(
                "shift/rhs length does not match the interior".into(),
            ));
        }
        let residual_of = |x: &[f64]| -> Vec<f64> {
            let mut ax = self.apply(x);
            for r in 0..n {
                if let Some(s) = shift {
                    ax[r] += s[r] * x[r];
                }
                ax[r] = rhs[r] - ax[r];
            }
            ax
        };
        let norm = |v: &[f64]| v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
        let tol = LINEAR_RESIDUAL_TOLERANCE * (1.0 + norm(rhs));

        if self.grid.dim() == 2 && n > DIRECT_SOLVE_LIMIT {
            let x = self.pcg(shift, rhs)?;
            let res = norm(&residual_of(&x));
            return Ok((x, res));
        }
        let factor = self.factor(shift)?;
        let mut x = factor.solve(rhs);
        let mut res_vec = residual_of(&x);
        let mut res = norm(&res_vec);
        for _ in 0..2 {
            if res <= 0.1 * tol {
                break;
            }
            let dx = factor.solve(&res_vec);
            let candidate: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let cand_res = residual_of(&candidate);
            let cand_norm = norm(&cand_res);
            if cand_norm >= res {
                break;
            }
            x = candidate;
            res_vec = cand_res;
            res = cand_norm;
        }
        Ok((x, res))
    }

    fn factor(&self, shift: Option<&[f64]>) -> Result<Factor> {
        let n = self.size();
        let diag: Vec<f64> = {
            let mut d = self.diagonal();
            if let Some(s) = shift {
                for (dr, sr) in d.iter_mut().zip(s) {
                    *dr += sr;
                }
            }
            d
        };
        if self.grid.dim() == 1 {
            let mut lower = vec![0.0; n];
            for r in 1..n {
                lower[r] = self.entry(r, r - 1);
            }
            return Ok(Factor::Tridiagonal { diag, lower });
        }
        // Banded LDL^T; the band is at most one grid row plus one.
        let bw = self.bandwidth;
        let mut band = vec![0.0; n * (bw + 1)];
        for r in 0..n {
            band[r * (bw + 1) + bw] = diag[r];
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                if c < r {
                    band[r * (bw + 1) + bw - (r - c)] = self.vals[k];
                }
            }
        }
        // Row r stores L[r][r-bw..=r] with the pivot d_r on the diagonal slot.
        for r in 0..n {
            let row = r * (bw + 1);
            let start = r.saturating_sub(bw);
            for c in start..r {
                let crow = c * (bw + 1);
                let cstart = c.saturating_sub(bw).max(start);
                let mut s = band[row + bw - (r - c)];
                for k in cstart..c {
                    s -= band[row + bw - (r - k)]
                        * band[crow + bw - (c - k)]
                        * band[k * (bw + 1) + bw];
                }
                band[row + bw - (r - c)] = s / band[crow + bw];
            }
            let mut d = band[row + bw];
            for k in start..r {
                let l = band[row + bw - (r - k)];
                d -= l * l * band[k * (bw + 1) + bw];
            }
            if !(d > 0.0) {
                return Err(Error::LinearSolveFailure {
                    residual: f64::NAN,
                    tolerance: 0.0,
                });
            }
            band[row + bw] = d;
        }
        Ok(Factor::Band { n, bw, band })
    }

    fn entry(&self, r: usize, c: usize) -> f64 {
        (self.row_ptr[r]..self.row_ptr[r + 1])
            .find(|&k| self.cols[k] == c)
            .map_or(0.0, |k| self.vals[k])
    }

    fn pcg(&self, shift: Option<&[f64]>, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.size();
        let mut diag = self.diagonal();
        if let Some(s) = shift {
            for (d, s) in diag.iter_mut().zip(s) {
                *d += s;
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let b_norm = dot(rhs, rhs).sqrt().max(f64::MIN_POSITIVE);
        let mut ap = vec![0.0; n];
        for _ in 0..(10 * n).max(1000) {
            if dot(&r, &r).sqrt() <= CG_TOLERANCE * b_norm {
                return Ok(x);
            }
            self.apply_into(&p, &mut ap);
            if let Some(s) = shift {
                for i in 0..n {
                    ap[i] += s[i] * p[i];
                }
            }
            let alpha = rz / dot(&p, &ap);
            for i in 0..n {
                x[i] += alpha * p[i];
                r[i] -= alpha * ap[i];
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        Err(Error::LinearSolveFailure {
            residual: dot(&r, &r).sqrt() / b_norm,
            tolerance: CG_TOLERANCE,
        })
    }

    /// Solves `A u = rhs` with `u = 0` on the boundary. Boundary values of
    /// `rhs` are ignored.
    pub fn solve_linear(&self, rhs: &GridFunction) -> Result<GridFunction> {
        if rhs.grid() != &self.grid {
            return Err(Error::InvalidArgument(
                "rhs lives on a different grid".into(),
            ));
        }
        let b = self.restrict(rhs.values());
        let (x, res) = self.solve_shifted(None, &b)?;
        let tol = LINEAR_RESIDUAL_TOLERANCE * (1.0 + rhs.sup_norm());
        if res > tol {
            return Err(Error::LinearSolveFailure {
                residual: res,
                tolerance: tol,
            });
        }
        GridFunction::new(self.grid.clone(), self.extend(&x))
    }

    /// Solves `-div(M grad u) = mu` for a finite atomic measure. Each atom is
    /// snapped to its nearest node and loaded as `mass / cell_volume`.
    pub fn solve_measure(&self, mu: &MeasureData) -> Result<GridFunction> {
        let mut rhs = vec![0.0; self.grid.node_count()];
        for atom in &mu.atoms {
            if !self.grid.contains_interior(&atom.location) {
                return Err(Error::InvalidArgument(format!(
                    "atom at {:?} is not strictly inside the domain",
                    atom.location
                )));
            }
            let node = self.grid.nearest_node(&atom.location);
            if self.grid.is_boundary(node) {
                return Err(Error::InvalidArgument(format!(
                    "atom at {:?} snaps onto the boundary",
                    atom.location
                )));
            }
            rhs[node] += atom.mass / self.grid.cell_volume();
        }
        self.solve_linear(&GridFunction::new(self.grid.clone(), rhs)?)
    }
}

enum Factor {
    Tridiagonal { diag: Vec<f64>, lower: Vec<f64> },
    Band { n: usize, bw: usize, band: Vec<f64> },
}

impl Factor {
    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        match self {
            Factor::Tridiagonal { diag, lower } => {
                // Symmetric tridiagonal: upper[r] == lower[r + 1].
                let n = diag.len();
                let mut c = vec![0.0; n];
                let mut d = vec![0.0; n];
                let mut denom = diag[0];
                d[0] = rhs[0] / denom;
                for r in 1..n {
                    c[r - 1] = lower[r] / denom;
                    denom = diag[r] - lower[r] * c[r - 1];
                    d[r] = (rhs[r] - lower[r] * d[r - 1]) / denom;
                }
                let mut x = d;
                for r in (0..n.saturating_sub(1)).rev() {
                    x[r] -= c[r] * x[r + 1];
                }
                x
            }
            Factor::Band { n, bw, band } => {
                let (n, bw) = (*n, *bw);
                let w = bw + 1;
                let mut y = rhs.to_vec();
                for r in 0..n {
                    let start = r.saturating_sub(bw);
                    let mut s = y[r];
                    for k in start..r {
                        s -= band[r * w + bw - (r - k)] * y[k];
                    }
                    y[r] = s;
                }
                for r in 0..n {
                    y[r] /= band[r * w + bw];
                }
                for r in (0..n).rev() {
                    let s = y[r];
                    let start = r.saturating_sub(bw);
                    for k in start..r {
                        y[k] -= band[r * w + bw - (r - k)] * s;
                    }
                }
                y
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: Vec<f64>,
    pub mass: f64,
}

/// A finite atomic measure `sum_k mass_k delta_{x_k}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureData {
    pub atoms: Vec<Atom>,
}

impl MeasureData {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Self {
        Self {
            atoms: atoms
                .into_iter()
                .map(|(location, mass)| Atom { location, mass })
                .collect(),
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::CoefficientField;

    fn line(lo: f64, hi: f64, cells: usize) -> (Grid, SparseOperator) {
        let g = Grid::interval(lo, hi, cells).unwrap();
        let op = assemble(&g, &CoefficientField::identity(&g)).unwrap();
        (g, op)
    }

    #[test]
    fn one_d_stencil() {
        let (_, op) = line(-2.0, 2.0, 8);
        assert_eq!(op.size(), 7);
        let mid: Vec<f64> = op
            .triplets()
            .into_iter()
            .filter(|t| t.0 == 3)
            .map(|t| t.2)
            .collect();
        assert_eq!(mid, vec![-4.0, 8.0, -4.0]);
    }

    #[test]
    fn two_d_stencil_unit_spacing() {
        let g = Grid::uniform(&[0.0, 0.0], &[4.0, 4.0], &[4, 4]).unwrap();
        let op = assemble(&g, &CoefficientField::identity(&g)).unwrap();
        let centre = op.unknown(g.flat_index([2, 2])).unwrap();
        let mut row: Vec<f64> = op
            .triplets()
            .into_iter()
            .filter(|t| t.0 == centre)
            .map(|t| t.2)
            .collect();
        row.sort_by(f64::total_cmp);
        assert_eq!(row, vec![-1.0, -1.0, -1.0, -1.0, 4.0]);
    }

    #[test]
    fn operator_is_linear_in_coefficients() {
        let g = Grid::uniform(&[0.0, 0.0], &[1.0, 1.0], &[6, 5]).unwrap();
        let a = assemble(&g, &CoefficientField::identity(&g)).unwrap();
        let b = assemble(&g, &CoefficientField::scalar(&g, 2.0)).unwrap();
        for (x, y) in a.triplets().iter().zip(b.triplets()) {
            assert_eq!((x.0, x.1), (y.0, y.1));
            assert!((2.0 * x.2 - y.2).abs() <= 1e-12 * y.2.abs());
        }
    }

    #[test]
    fn poisson_parabola_is_nodally_exact() {
        let (g, op) = line(-1.0, 1.0, 64);
        let rhs = GridFunction::from_fn(g.clone(), |_| 1.0).unwrap();
        let u = op.solve_linear(&rhs).unwrap();
        let err = (0..g.node_count())
            .map(|i| (u.values()[i] - 0.5 * (1.0 - g.coords(i)[0].powi(2))).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-8, "error {err}");
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let g = Grid::uniform(&[0.0, 0.0], &[1.0, 1.0], &[8, 8]).unwrap();
        let op = assemble(&g, &CoefficientField::identity(&g)).unwrap();
        let u = op.solve_linear(&GridFunction::zeros(g)).unwrap();
        assert_eq!(u.sup_norm(), 0.0);
    }

    #[test]
    fn hat_profile_from_two_atoms() {
        let (g, op) = line(-2.0, 2.0, 64);
        let mu = MeasureData::new(vec![(vec![-1.0], 1.0), (vec![1.0], 1.0)]);
        let u = op.solve_measure(&mu).unwrap();
        for i in 0..g.node_count() {
            let t = g.coords(i)[0];
            let exact = if t.abs() <= 1.0 { 1.0 } else { 2.0 - t.abs() };
            assert!((u.values()[i] - exact).abs() <= 1e-10);
        }
    }

    #[test]
    fn tent_from_single_atom() {
        let (g, op) = line(-1.0, 1.0, 32);
        let u = op
            .solve_measure(&MeasureData::new(vec![(vec![0.0], 1.0)]))
            .unwrap();
        for i in 0..g.node_count() {
            let t = g.coords(i)[0];
            assert!((u.values()[i] - 0.5 * (1.0 - t.abs())).abs() <= 1e-12);
        }
        let empty = op.solve_measure(&MeasureData::default()).unwrap();
        assert_eq!(empty.sup_norm(), 0.0);
    }

    #[test]
    fn atoms_on_the_boundary_are_rejected() {
        let (_, op) = line(-1.0, 1.0, 32);
        let r = op.solve_measure(&MeasureData::new(vec![(vec![1.0], 1.0)]));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
        let r = op.solve_measure(&MeasureData::new(vec![(vec![1.5], 1.0)]));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn cross_term_keeps_m_matrix_or_fails() {
        let g = Grid::uniform(&[0.0, 0.0], &[1.0, 1.0], &[8, 8]).unwrap();
        let ok = CoefficientField::constant(&g, [2.0, 0.5, 0.5, 2.0]);
        let op = assemble(&g, &ok).unwrap();
        assert!(op.triplets().iter().all(|t| t.0 == t.1 || t.2 <= 0.0));
        let neg = CoefficientField::constant(&g, [2.0, -0.5, -0.5, 2.0]);
        assert!(assemble(&g, &neg).is_ok());
        // Stretched cells: the cross term outweighs the y-direction coupling.
        let stretched = Grid::uniform(&[0.0, 0.0], &[1.0, 4.0], &[8, 8]).unwrap();
        let too_much = CoefficientField::constant(&stretched, [1.0, 0.9, 0.9, 1.0]);
        assert!(matches!(
            assemble(&stretched, &too_much),
            Err(Error::EllipticityViolation(_))
        ));
    }

    #[test]
    fn band_and_cg_agree() {
        let g = Grid::uniform(&[0.0, 0.0], &[1.0, 2.0], &[12, 9]).unwrap();
        let m = CoefficientField::from_fn(&g, |x| [1.0 + x[0], 0.1, 0.1, 2.0 - 0.5 * x[1]]);
        let op = assemble(&g, &m).unwrap();
        let rhs: Vec<f64> = (0..op.size()).map(|i| ((i * 7) % 5) as f64 - 1.0).collect();
        let shift: Vec<f64> = (0..op.size()).map(|i| (i % 3) as f64).collect();
        let (x, res) = op.solve_shifted(Some(&shift), &rhs).unwrap();
        assert!(res < 1e-10);
        let y = op.pcg(Some(&shift), &rhs).unwrap();
        let diff = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "diff {diff}");
    }
}
