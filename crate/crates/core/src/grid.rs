//! Structured 1D/2D box discretization.
//!
//! Cells are uniform; cell `i` along an axis has center `(i + ½)·h`. Only
//! interior faces are stored: boundary faces carry zero flux in every
//! operator, which realizes the no-flux condition exactly and makes the
//! volume-weighted sum of any divergence telescope to zero.
//!
//! Cell indices are row-major with axis 0 slowest. Interior faces normal to
//! axis 0 are indexed `i·n₁ + j` (between cells `(i, j)` and `(i+1, j)`);
//! faces normal to axis 1 are indexed `i·(n₁−1) + j` (between `(i, j)` and
//! `(i, j+1)`).

use crate::{Error, Result};

/// A point in the box; unused coordinates are zero in 1D.
pub type Point = [f64; 2];

/// A 2×2 matrix; only the leading `dims × dims` block is meaningful.
pub type Mat2 = [[f64; 2]; 2];

pub const MAX_DIMS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dims: usize,
    extents: [f64; 2],
    cells: [usize; 2],
    spacing: [f64; 2],
}

impl Grid {
    /// Builds a uniform grid on `[0, L₀] (× [0, L₁])`.
    pub fn new(extents: &[f64], cells: &[usize]) -> Result<Self> {
        let dims = extents.len();
        if dims == 0 || dims > MAX_DIMS {
            return Err(Error::Config(format!("grid must be 1D or 2D, got {dims} axes")));
        }
        if cells.len() != dims {
            return Err(Error::Config(format!(
                "{} extents but {} cell counts",
                dims,
                cells.len()
            )));
        }
        let mut g = Grid { dims, extents: [1.0; 2], cells: [1; 2], spacing: [1.0; 2] };
        for axis in 0..dims {
            let (l, n) = (extents[axis], cells[axis]);
            if !(l.is_finite() && l > 0.0) {
                return Err(Error::Config(format!("extent along axis {axis} must be positive, got {l}")));
            }
            if n < 2 {
                return Err(Error::Config(format!("need at least 2 cells along axis {axis}, got {n}")));
            }
            g.extents[axis] = l;
            g.cells[axis] = n;
            g.spacing[axis] = l / n as f64;
        }
        Ok(g)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.extents[axis]
    }

    pub fn extents(&self) -> &[f64] {
        &self.extents[..self.dims]
    }

    pub fn cells(&self, axis: usize) -> usize {
        self.cells[axis]
    }

    pub fn cell_counts(&self) -> &[usize] {
        &self.cells[..self.dims]
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.spacing[axis]
    }

    pub fn min_spacing(&self) -> f64 {
        self.spacing[..self.dims].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn num_cells(&self) -> usize {
        self.cells[0] * self.cells[1]
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing[0] * self.spacing[1]
    }

    pub fn volume(&self) -> f64 {
        self.extents[..self.dims].iter().product()
    }

    pub fn multi_index(&self, cell: usize) -> [usize; 2] {
        [cell / self.cells[1], cell % self.cells[1]]
    }

    pub fn cell_index(&self, idx: [usize; 2]) -> usize {
        idx[0] * self.cells[1] + idx[1]
    }

    pub fn cell_center(&self, cell: usize) -> Point {
        let idx = self.multi_index(cell);
        let mut p = [0.0; 2];
        for axis in 0..self.dims {
            p[axis] = (idx[axis] as f64 + 0.5) * self.spacing[axis];
        }
        p
    }

    pub fn cell_centers(&self) -> Vec<Point> {
        (0..self.num_cells()).map(|c| self.cell_center(c)).collect()
    }

    /// Number of interior faces normal to `axis`.
    pub fn num_faces(&self, axis: usize) -> usize {
        if axis >= self.dims {
            return 0;
        }
        let other = 1 - axis;
        (self.cells[axis] - 1) * self.cells[other]
    }

    /// Cells on the low and high side of interior face `face` normal to `axis`.
    pub fn face_cells(&self, axis: usize, face: usize) -> (usize, usize) {
        if axis == 0 {
            (face, face + self.cells[1])
        } else {
            let n1 = self.cells[1] - 1;
            let (i, j) = (face / n1, face % n1);
            let left = i * self.cells[1] + j;
            (left, left + 1)
        }
    }

    pub fn face_center(&self, axis: usize, face: usize) -> Point {
        let (l, r) = self.face_cells(axis, face);
        let (pl, pr) = (self.cell_center(l), self.cell_center(r));
        [0.5 * (pl[0] + pr[0]), 0.5 * (pl[1] + pr[1])]
    }

    /// Stride between neighbouring cells along `axis`.
    fn stride(&self, axis: usize) -> usize {
        if axis == 0 {
            self.cells[1]
        } else {
            1
        }
    }

    /// Centered difference along `axis` at `cell`, mirror ghost at the walls.
    fn centered_diff(&self, values: &[f64], cell: usize, axis: usize) -> f64 {
        let idx = self.multi_index(cell)[axis];
        let stride = self.stride(axis);
        let lo = if idx == 0 { cell } else { cell - stride };
        let hi = if idx + 1 == self.cells[axis] { cell } else { cell + stride };
        (values[hi] - values[lo]) / (2.0 * self.spacing[axis])
    }
}

/// One real per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellField {
    grid: Grid,
    pub values: Vec<f64>,
}

impl CellField {
    pub fn zeros(grid: &Grid) -> Self {
        CellField { grid: *grid, values: vec![0.0; grid.num_cells()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> Self {
        CellField { grid: *grid, values: vec![c; grid.num_cells()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.num_cells() {
            return Err(Error::Config(format!(
                "field has {} values but grid has {} cells",
                values.len(),
                grid.num_cells()
            )));
        }
        Ok(CellField { grid: *grid, values })
    }

    /// Samples `f` at cell centers.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut(Point) -> f64) -> Self {
        let values = (0..grid.num_cells()).map(|c| f(grid.cell_center(c))).collect();
        CellField { grid: *grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σ u·ΔV`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CellField {
        CellField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// `‖u‖²_{L²} = Σ u²·ΔV`.
    pub fn l2_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>() * self.grid.cell_volume()
    }

    /// `Σ |u − v|·ΔV`.
    pub fn l1_distance(&self, other: &CellField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).sum::<f64>()
            * self.grid.cell_volume()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Subtracts the arithmetic mean in place.
    pub fn project_mean_free(&mut self) {
        let m = self.mean();
        self.values.iter_mut().for_each(|v| *v -= m);
    }
}

/// Per-axis interior-face reals (fluxes). Boundary faces are not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceField {
    grid: Grid,
    pub values: [Vec<f64>; 2],
}

impl FaceField {
    pub fn zeros(grid: &Grid) -> Self {
        FaceField { grid: *grid, values: [vec![0.0; grid.num_faces(0)], vec![0.0; grid.num_faces(1)]] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(usize, Point) -> f64) -> Self {
        let mut out = FaceField::zeros(grid);
        for axis in 0..grid.dims() {
            for (face, v) in out.values[axis].iter_mut().enumerate() {
                *v = f(axis, grid.face_center(axis, face));
            }
        }
        out
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `self += c·other`.
    pub fn axpy(&mut self, c: f64, other: &FaceField) {
        for axis in 0..2 {
            for (a, b) in self.values[axis].iter_mut().zip(&other.values[axis]) {
                *a += c * b;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for axis in 0..2 {
            self.values[axis].iter_mut().for_each(|v| *v *= c);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|vs| vs.iter().all(|v| v.is_finite()))
    }
}

/// A 2×2 matrix per interior face, e.g. `a = ssᵗ` sampled at face centers.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceTensor {
    grid: Grid,
    pub values: [Vec<Mat2>; 2],
}

impl FaceTensor {
    pub fn from_fn(grid: &Grid, f: impl Fn(Point) -> Mat2) -> Self {
        let mut values = [Vec::new(), Vec::new()];
        for (axis, vals) in values.iter_mut().enumerate() {
            *vals = (0..grid.num_faces(axis)).map(|face| f(grid.face_center(axis, face))).collect();
        }
        FaceTensor { grid: *grid, values }
    }

    pub fn identity(grid: &Grid) -> Self {
        Self::from_fn(grid, |_| [[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    fn has_cross_terms(&self) -> bool {
        self.grid.dims() == 2
            && self.values.iter().any(|vs| vs.iter().any(|m| m[0][1] != 0.0 || m[1][0] != 0.0))
    }
}

/// Interior-face normal differences `(u_hi − u_lo)/h`.
pub fn gradient(u: &CellField) -> FaceField {
    let grid = u.grid;
    let mut out = FaceField::zeros(&grid);
    for axis in 0..grid.dims() {
        let h = grid.spacing(axis);
        for (face, g) in out.values[axis].iter_mut().enumerate() {
            let (l, r) = grid.face_cells(axis, face);
            *g = (u.values[r] - u.values[l]) / h;
        }
    }
    out
}

/// Arithmetic mean of the two adjacent cells, clamped at zero.
pub fn face_average_clamped(u: &CellField) -> FaceField {
    let grid = u.grid;
    let mut out = FaceField::zeros(&grid);
    for axis in 0..grid.dims() {
        for (face, v) in out.values[axis].iter_mut().enumerate() {
            let (l, r) = grid.face_cells(axis, face);
            *v = (0.5 * (u.values[l] + u.values[r])).max(0.0);
        }
    }
    out
}

/// Normal component of `a∇u` on interior faces.
///
/// The normal derivative is the compact face difference; the tangential
/// derivative (only needed when `a` has off-diagonal entries) is the average
/// of the centered differences in the two adjacent cells.
pub fn flux_a_grad(a: &FaceTensor, u: &CellField) -> FaceField {
    let grid = u.grid;
    let mut out = FaceField::zeros(&grid);
    for axis in 0..grid.dims() {
        let h = grid.spacing(axis);
        let other = 1 - axis;
        for (face, flux) in out.values[axis].iter_mut().enumerate() {
            let (l, r) = grid.face_cells(axis, face);
            let m = &a.values[axis][face];
            let mut f = m[axis][axis] * (u.values[r] - u.values[l]) / h;
            if grid.dims() == 2 && m[axis][other] != 0.0 {
                let tang = 0.5
                    * (grid.centered_diff(&u.values, l, other) + grid.centered_diff(&u.values, r, other));
                f += m[axis][other] * tang;
            }
            *flux = f;
        }
    }
    out
}

/// `Σ_axes (F_out − F_in)/h` per cell with zero flux on boundary faces.
pub fn divergence(flux: &FaceField) -> CellField {
    let grid = flux.grid;
    let mut out = CellField::zeros(&grid);
    for axis in 0..grid.dims() {
        let inv_h = 1.0 / grid.spacing(axis);
        for (face, &f) in flux.values[axis].iter().enumerate() {
            let (l, r) = grid.face_cells(axis, face);
            let q = f * inv_h;
            out.values[l] += q;
            out.values[r] -= q;
        }
    }
    out
}

/// `−∇·(a∇u)`.
pub fn neg_div_a_grad(a: &FaceTensor, u: &CellField) -> CellField {
    let mut d = divergence(&flux_a_grad(a, u));
    d.values.iter_mut().for_each(|v| *v = -*v);
    d
}

pub const DEFAULT_SOLVE_TOL: f64 = 1e-10;

/// Solves `−∇·(a∇z) = rhs` with `(a∇z)·ν = 0`, returning the mean-free `z`.
///
/// `rhs` must be mean-free up to `10·ε·‖rhs‖₂`. The residual satisfies
/// `‖∇·(a∇z) + rhs‖₂ ≤ tol·‖rhs‖₂` on success. Jacobi-preconditioned CG is
/// used for symmetric operators; BiCGSTAB when `a` carries cross terms.
pub fn neumann_solve(a: &FaceTensor, rhs: &CellField, tol: f64) -> Result<CellField> {
    let norm = norm2(&rhs.values);
    let mean = rhs.mean();
    let tolerance = 10.0 * f64::EPSILON * norm;
    if mean.abs() > tolerance {
        return Err(Error::Solvability { mean, tolerance });
    }
    solve_projected(a, rhs, tol)
}

/// Solve after removing the (round-off) mean of `rhs`.
pub(crate) fn solve_projected(a: &FaceTensor, rhs: &CellField, tol: f64) -> Result<CellField> {
    let grid = *rhs.grid();
    let mut b = rhs.clone();
    b.project_mean_free();
    let b_norm = norm2(&b.values);
    if b_norm == 0.0 {
        return Ok(CellField::zeros(&grid));
    }
    let diag = jacobi_diagonal(a);
    let budget = 20 * grid.num_cells();
    let mut z = if a.has_cross_terms() {
        bicgstab(a, &b, &diag, tol * b_norm, budget)?
    } else {
        pcg(a, &b, &diag, tol * b_norm, budget)?
    };
    z.project_mean_free();
    let mut res = neg_div_a_grad(a, &z);
    res.values.iter_mut().zip(&b.values).for_each(|(r, bi)| *r -= bi);
    let rel = norm2(&res.values) / b_norm;
    if !(rel <= tol) {
        return Err(Error::Convergence { iterations: budget, residual: rel });
    }
    Ok(z)
}

fn jacobi_diagonal(a: &FaceTensor) -> Vec<f64> {
    let grid = a.grid;
    let mut d = vec![0.0; grid.num_cells()];
    for axis in 0..grid.dims() {
        let h2 = grid.spacing(axis).powi(2);
        for (face, m) in a.values[axis].iter().enumerate() {
            let (l, r) = grid.face_cells(axis, face);
            d[l] += m[axis][axis] / h2;
            d[r] += m[axis][axis] / h2;
        }
    }
    d
}

fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn precondition(r: &[f64], diag: &[f64]) -> Vec<f64> {
    let mut z: Vec<f64> = r.iter().zip(diag).map(|(ri, di)| ri / di).collect();
    let m = z.iter().sum::<f64>() / z.len() as f64;
    z.iter_mut().for_each(|v| *v -= m);
    z
}

fn pcg(a: &FaceTensor, b: &CellField, diag: &[f64], abs_tol: f64, budget: usize) -> Result<CellField> {
    let grid = *b.grid();
    let mut x = CellField::zeros(&grid);
    let mut r = b.values.clone();
    let mut z = precondition(&r, diag);
    let mut p = CellField::from_values(&grid, z.clone())?;
    let mut rz = dot(&r, &z);
    for _ in 0..budget {
        let ap = neg_div_a_grad(a, &p);
        let pap = dot(&p.values, &ap.values);
        if pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..r.len() {
            x.values[i] += alpha * p.values[i];
            r[i] -= alpha * ap.values[i];
        }
        if norm2(&r) <= abs_tol {
            return Ok(x);
        }
        z = precondition(&r, diag);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..r.len() {
            p.values[i] = z[i] + beta * p.values[i];
        }
    }
    Err(Error::Convergence { iterations: budget, residual: norm2(&r) / norm2(&b.values) })
}

fn bicgstab(a: &FaceTensor, b: &CellField, diag: &[f64], abs_tol: f64, budget: usize) -> Result<CellField> {
    let grid = *b.grid();
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.values.clone();
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    for _ in 0..budget {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = CellField::from_values(&grid, precondition(&p, diag))?;
        v = neg_div_a_grad(a, &p_hat).values;
        alpha = rho / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        if norm2(&s) <= abs_tol {
            x.iter_mut().zip(&p_hat.values).for_each(|(xi, pi)| *xi += alpha * pi);
            return CellField::from_values(&grid, x);
        }
        let s_hat = CellField::from_values(&grid, precondition(&s, diag))?;
        let t = neg_div_a_grad(a, &s_hat).values;
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * p_hat.values[i] + omega * s_hat.values[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) <= abs_tol {
            return CellField::from_values(&grid, x);
        }
    }
    Err(Error::Convergence { iterations: budget, residual: norm2(&r) / norm2(&b.values) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize) -> Grid {
        Grid::new(&[1.0], &[n]).unwrap()
    }

    /// Columns of `−∇·(a∇·)` by applying it to unit vectors.
    fn assemble(a: &FaceTensor) -> Vec<Vec<f64>> {
        let grid = *a.grid();
        let n = grid.num_cells();
        (0..n)
            .map(|j| {
                let mut e = CellField::zeros(&grid);
                e.values[j] = 1.0;
                neg_div_a_grad(a, &e).values
            })
            .collect()
    }

    #[test]
    fn uniform_partition_centers() {
        let g = grid1(4);
        let centers: Vec<f64> = g.cell_centers().iter().map(|p| p[0]).collect();
        assert_eq!(centers, vec![0.125, 0.375, 0.625, 0.875]);
        assert_eq!(g.spacing(0), 0.25);
    }

    #[test]
    fn face_counts_on_2x4() {
        let g = Grid::new(&[1.0, 2.0], &[2, 4]).unwrap();
        assert_eq!(g.num_cells(), 8);
        assert_eq!(g.num_faces(0), 4);
        assert_eq!(g.num_faces(1), 6);
    }

    #[test]
    fn degenerate_grids_rejected() {
        assert!(Grid::new(&[1.0], &[1]).is_err());
        assert!(Grid::new(&[1.0, 1.0], &[4, 1]).is_err());
        assert!(Grid::new(&[0.0], &[4]).is_err());
        assert!(Grid::new(&[-1.0], &[4]).is_err());
        assert!(Grid::new(&[1.0; 3], &[2; 3]).is_err());
    }

    #[test]
    fn gradient_examples() {
        let g = grid1(8);
        let c = CellField::constant(&g, 3.5);
        assert!(gradient(&c).values[0].iter().all(|&v| v == 0.0));

        let g2 = Grid::new(&[1.0], &[2]).unwrap();
        let u = CellField::from_values(&g2, vec![0.0, 1.0]).unwrap();
        assert_eq!(gradient(&u).values[0], vec![2.0]);

        let g4 = grid1(4);
        let lin = CellField::from_fn(&g4, |x| 3.0 * x[0]);
        for v in gradient(&lin).values[0].iter() {
            assert_relative_eq!(*v, 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn divergence_examples() {
        let g2 = Grid::new(&[1.0], &[2]).unwrap();
        let f = FaceField { grid: g2, values: [vec![1.0], vec![]] };
        assert_eq!(divergence(&f).values, vec![2.0, -2.0]);
        assert!(divergence(&FaceField::zeros(&g2)).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn divergence_telescopes_2d() {
        let g = Grid::new(&[1.0, 0.7], &[5, 7]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut f = FaceField::zeros(&g);
        for axis in 0..2 {
            for v in f.values[axis].iter_mut() {
                *v = rng.random_range(-5.0..5.0);
            }
        }
        let total = divergence(&f).integral();
        assert!(total.abs() < 1e-13, "{total}");
    }

    #[test]
    fn operator_is_symmetric_negative_semidefinite() {
        let g = Grid::new(&[1.0, 1.5], &[4, 4]).unwrap();
        let a = FaceTensor::from_fn(&g, |x| {
            [[1.0 + 0.3 * (3.0 * x[0]).sin(), 0.0], [0.0, 2.0 + 0.5 * x[1]]]
        });
        let m = assemble(&a);
        let n = m.len();
        for i in 0..n {
            for j in 0..n {
                assert_relative_eq!(m[i][j], m[j][i], epsilon = 1e-10);
            }
        }
        // x·(−div a grad) x ≥ 0 on random mean-free vectors
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let mut x = CellField::from_fn(&g, |_| rng.random_range(-1.0..1.0));
            x.project_mean_free();
            let ax = neg_div_a_grad(&a, &x);
            assert!(dot(&x.values, &ax.values) > 0.0);
        }
    }

    #[test]
    fn neumann_solve_zero_rhs() {
        let g = grid1(16);
        let z = neumann_solve(&FaceTensor::identity(&g), &CellField::zeros(&g), DEFAULT_SOLVE_TOL).unwrap();
        assert!(z.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn neumann_solve_rejects_mean() {
        let g = grid1(16);
        let rhs = CellField::constant(&g, 0.1);
        assert!(matches!(
            neumann_solve(&FaceTensor::identity(&g), &rhs, DEFAULT_SOLVE_TOL),
            Err(Error::Solvability { .. })
        ));
    }

    /// Dense symmetric eigen-solve by cyclic Jacobi rotations (test oracle).
    fn jacobi_eigen(mut m: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
        let n = m.len();
        let mut v = vec![vec![0.0; n]; n];
        for (i, row) in v.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        for _sweep in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off < 1e-26 {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (m[q][q] - m[p][p]) / (2.0 * m[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                    for row in v.iter_mut() {
                        let (vp, vq) = (row[p], row[q]);
                        row[p] = c * vp - s * vq;
                        row[q] = s * vp + c * vq;
                    }
                }
            }
        }
        ((0..n).map(|i| m[i][i]).collect(), v)
    }

    #[test]
    fn neumann_solve_first_cosine_mode_matches_eigendecomposition() {
        let n = 16;
        let g = grid1(n);
        let a = FaceTensor::identity(&g);
        let (evals, evecs) = jacobi_eigen(assemble(&a));
        // smallest nonzero eigenvalue and its eigenvector from the oracle
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| evals[i].partial_cmp(&evals[j]).unwrap());
        let k = order[1];
        let lambda1 = evals[k];
        let h = g.spacing(0);
        assert_relative_eq!(lambda1, (2.0 - 2.0 * (std::f64::consts::PI / n as f64).cos()) / (h * h), max_relative = 1e-10);
        let mode: Vec<f64> = (0..n).map(|i| evecs[i][k]).collect();
        let rhs = CellField::from_values(&g, mode.clone()).unwrap();
        let z = neumann_solve(&a, &rhs, 1e-12).unwrap();
        for i in 0..n {
            assert_relative_eq!(z.values[i], mode[i] / lambda1, epsilon = 1e-12);
        }
    }

    #[test]
    fn neumann_solve_random_rhs_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g1 = grid1(40);
        let g2 = Grid::new(&[1.0, 2.0], &[6, 9]).unwrap();
        let aniso = FaceTensor::from_fn(&g2, |x| [[1.0 + 0.5 * x[0], 0.0], [0.0, 0.5 + x[1]]]);
        let shear = FaceTensor::from_fn(&g2, |_| [[1.09, 0.3], [0.3, 1.0]]);
        let cases = [(g1, FaceTensor::identity(&g1)), (g2, aniso), (g2, shear)];
        for i in 0..100 {
            let (g, a) = &cases[i % cases.len()];
            let mut rhs = CellField::from_fn(g, |_| rng.random_range(-1.0..1.0));
            rhs.project_mean_free();
            let z = neumann_solve(a, &rhs, DEFAULT_SOLVE_TOL).unwrap();
            assert!(z.mean().abs() < 1e-12);
            let mut res = neg_div_a_grad(a, &z);
            res.values.iter_mut().zip(&rhs.values).for_each(|(r, b)| *r -= b);
            assert!(norm2(&res.values) <= DEFAULT_SOLVE_TOL * norm2(&rhs.values) * (1.0 + 1e-6));
        }
    }
}
