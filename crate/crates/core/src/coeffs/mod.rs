//! Diffusion matrix `s`, `a = ssᵗ`, the nonlinearity `φ`, and their tables
//! on a grid.

mod sigma;

pub use sigma::{psi, ConstantMobility, Mobility, RegularizedSqrt, SigmaProducts};

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::grid::{FaceField, FaceTensor, Grid, Mat2, Point};
use crate::{Error, Result};

/// Closed-form matrix field `s(x)` with analytic first derivatives.
pub trait MatrixField: Send + Sync + fmt::Debug {
    fn s(&self, x: Point) -> Mat2;
    /// `∂_axis s(x)`.
    fn ds(&self, x: Point, axis: usize) -> Mat2;
}

/// Named coefficient presets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Preset {
    Identity,
    Diag(f64, f64),
    Shear(f64),
    /// `s_jj(x) = 1 + δ·sin(2π x_j / L_j)`, off-diagonals zero.
    SmoothInhomogeneous { delta: f64, extents: [f64; 2] },
}

impl Preset {
    /// Parses `identity`, `diag(c1,c2)`, `shear(γ)` or `smooth-inhomogeneous`.
    pub fn parse(name: &str, delta: f64, extents: &[f64]) -> Result<Self> {
        let name = name.trim();
        let args = |s: &str| -> Result<Vec<f64>> {
            let inner = s
                .split_once('(')
                .and_then(|(_, rest)| rest.strip_suffix(')'))
                .ok_or_else(|| Error::Config(format!("malformed preset '{s}'")))?;
            inner
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| Error::Config(format!("preset '{s}': {e}"))))
                .collect()
        };
        if name == "identity" {
            Ok(Preset::Identity)
        } else if name.starts_with("diag(") {
            match args(name)?.as_slice() {
                [c] => Ok(Preset::Diag(*c, 1.0)),
                [c1, c2] => Ok(Preset::Diag(*c1, *c2)),
                _ => Err(Error::Config(format!("diag preset needs 1 or 2 values: '{name}'"))),
            }
        } else if name.starts_with("shear(") {
            match args(name)?.as_slice() {
                [g] => Ok(Preset::Shear(*g)),
                _ => Err(Error::Config(format!("shear preset needs 1 value: '{name}'"))),
            }
        } else if name == "smooth-inhomogeneous" {
            if !(delta.abs() < 1.0) {
                return Err(Error::Config(format!("smooth-inhomogeneous needs |δ| < 1, got {delta}")));
            }
            let mut ext = [1.0; 2];
            ext[..extents.len()].copy_from_slice(extents);
            Ok(Preset::SmoothInhomogeneous { delta, extents: ext })
        } else {
            Err(Error::Config(format!("unknown coefficient preset '{name}'")))
        }
    }
}

impl MatrixField for Preset {
    fn s(&self, x: Point) -> Mat2 {
        match *self {
            Preset::Identity => [[1.0, 0.0], [0.0, 1.0]],
            Preset::Diag(c1, c2) => [[c1, 0.0], [0.0, c2]],
            Preset::Shear(g) => [[1.0, g], [0.0, 1.0]],
            Preset::SmoothInhomogeneous { delta, extents } => {
                let f = |j: usize| 1.0 + delta * (2.0 * PI * x[j] / extents[j]).sin();
                [[f(0), 0.0], [0.0, f(1)]]
            }
        }
    }

    fn ds(&self, x: Point, axis: usize) -> Mat2 {
        match *self {
            Preset::SmoothInhomogeneous { delta, extents } => {
                let k = 2.0 * PI / extents[axis];
                let mut m = [[0.0; 2]; 2];
                m[axis][axis] = delta * k * (k * x[axis]).cos();
                m
            }
            _ => [[0.0; 2]; 2],
        }
    }
}

/// Matrix field from user callbacks.
pub struct FnMatrixField<S, D> {
    pub s: S,
    pub ds: D,
}

impl<S, D> fmt::Debug for FnMatrixField<S, D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("FnMatrixField")
    }
}

impl<S, D> MatrixField for FnMatrixField<S, D>
where
    S: Fn(Point) -> Mat2 + Send + Sync,
    D: Fn(Point, usize) -> Mat2 + Send + Sync,
{
    fn s(&self, x: Point) -> Mat2 {
        (self.s)(x)
    }
    fn ds(&self, x: Point, axis: usize) -> Mat2 {
        (self.ds)(x, axis)
    }
}

/// Nondegenerate nonlinearity `φ` with `φ(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Phi {
    Identity,
    /// `φ(η) = c·η`
    Linear { c: f64 },
    /// `φ(η) = η + k·η/(1+η)`, so `φ' ∈ [1, 1+k]` on `η ≥ 0`.
    Saturating { k: f64 },
}

impl Phi {
    pub fn eval(&self, eta: f64) -> f64 {
        match *self {
            Phi::Identity => eta,
            Phi::Linear { c } => c * eta,
            Phi::Saturating { k } => eta + k * eta / (1.0 + eta.max(0.0)),
        }
    }

    pub fn derivative(&self, eta: f64) -> f64 {
        match *self {
            Phi::Identity => 1.0,
            Phi::Linear { c } => c,
            Phi::Saturating { k } => 1.0 + k / (1.0 + eta.max(0.0)).powi(2),
        }
    }

    /// Analytic bounds `(λ̃, Λ̃)` of `φ'` on `(0, ∞)`.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            Phi::Identity => (1.0, 1.0),
            Phi::Linear { c } => (c, c),
            Phi::Saturating { k } => (1.0_f64.min(1.0 + k), 1.0_f64.max(1.0 + k)),
        }
    }
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    let mut c = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    c
}

pub fn transpose(a: &Mat2) -> Mat2 {
    [[a[0][0], a[1][0]], [a[0][1], a[1][1]]]
}

/// Zeroes everything outside the leading `dims × dims` block.
pub fn restrict(mut m: Mat2, dims: usize) -> Mat2 {
    if dims == 1 {
        m[0][1] = 0.0;
        m[1][0] = 0.0;
        m[1][1] = 0.0;
    }
    m
}

/// Eigenvalues of the leading symmetric block, ascending.
pub fn sym_eigenvalues(m: &Mat2, dims: usize) -> (f64, f64) {
    if dims == 1 {
        return (m[0][0], m[0][0]);
    }
    let tr = m[0][0] + m[1][1];
    let off = 0.5 * (m[0][1] + m[1][0]);
    let disc = ((m[0][0] - m[1][1]).powi(2) / 4.0 + off * off).sqrt();
    (tr / 2.0 - disc, tr / 2.0 + disc)
}

/// Coefficients sampled on a grid.
#[derive(Clone)]
pub struct CoefficientSet {
    grid: Grid,
    field: Arc<dyn MatrixField>,
    pub phi: Phi,
    pub s_cells: Vec<Mat2>,
    pub a_cells: Vec<Mat2>,
    pub s_faces: FaceTensor,
    pub a_faces: FaceTensor,
    /// `(∇·sᵗ)_j = ∂_k s_kj` at cell centers.
    pub div_s_t: Vec<[f64; 2]>,
    /// `s(∇·sᵗ)` at cell centers.
    pub s_div_s_t_cells: Vec<[f64; 2]>,
    /// Normal component of `s(∇·sᵗ)` on interior faces.
    pub s_div_s_t_faces: FaceField,
    pub lambda_ell: f64,
    pub big_lambda_ell: f64,
    pub lambda_phi: f64,
    pub big_lambda_phi: f64,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("field", &self.field)
            .field("phi", &self.phi)
            .field("lambda_ell", &self.lambda_ell)
            .field("big_lambda_ell", &self.big_lambda_ell)
            .finish()
    }
}

impl CoefficientSet {
    pub fn new(grid: &Grid, field: Arc<dyn MatrixField>, phi: Phi) -> Result<Self> {
        let dims = grid.dims();
        let s_at = |x: Point| restrict(field.s(x), dims);
        let a_at = |x: Point| {
            let s = s_at(x);
            mat_mul(&s, &transpose(&s))
        };
        let div_at = |x: Point| div_s_t(field.as_ref(), x, dims);
        let s_div_at = |x: Point| {
            let (s, v) = (s_at(x), div_at(x));
            [s[0][0] * v[0] + s[0][1] * v[1], s[1][0] * v[0] + s[1][1] * v[1]]
        };

        let centers = grid.cell_centers();
        let s_cells: Vec<Mat2> = centers.iter().map(|&x| s_at(x)).collect();
        let a_cells: Vec<Mat2> = centers.iter().map(|&x| a_at(x)).collect();
        let div_s_t_cells: Vec<[f64; 2]> = centers.iter().map(|&x| div_at(x)).collect();
        let s_div_s_t_cells = centers.iter().map(|&x| s_div_at(x)).collect();
        let s_faces = FaceTensor::from_fn(grid, s_at);
        let a_faces = FaceTensor::from_fn(grid, a_at);
        let s_div_s_t_faces = FaceField::from_fn(grid, |axis, x| s_div_at(x)[axis]);

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for m in a_cells.iter().chain(a_faces.values.iter().flatten()) {
            let (l, h) = sym_eigenvalues(m, dims);
            lo = lo.min(l);
            hi = hi.max(h);
        }
        if !(lo > 0.0) || !hi.is_finite() {
            return Err(Error::Config(format!("a = ssᵗ is not uniformly elliptic (λ = {lo})")));
        }
        let (lp, hp) = phi.bounds();
        if !(lp > 0.0) {
            return Err(Error::Config(format!("φ' must be bounded below by a positive constant, got {lp}")));
        }
        Ok(CoefficientSet {
            grid: *grid,
            field,
            phi,
            s_cells,
            a_cells,
            s_faces,
            a_faces,
            div_s_t: div_s_t_cells,
            s_div_s_t_cells,
            s_div_s_t_faces,
            lambda_ell: lo,
            big_lambda_ell: hi,
            lambda_phi: lp,
            big_lambda_phi: hp,
        })
    }

    pub fn from_preset(grid: &Grid, preset: Preset, phi: Phi) -> Result<Self> {
        Self::new(grid, Arc::new(preset), phi)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn field(&self) -> &Arc<dyn MatrixField> {
        &self.field
    }

    pub fn s_at(&self, x: Point) -> Mat2 {
        restrict(self.field.s(x), self.grid.dims())
    }

    pub fn a_at(&self, x: Point) -> Mat2 {
        let s = self.s_at(x);
        mat_mul(&s, &transpose(&s))
    }

    /// `b_j = Σ_i ∂_i a_ij` from the analytic derivatives of `s`; the drift
    /// of the reflecting diffusion with generator `∇·a∇`.
    pub fn particle_drift(&self, x: Point) -> [f64; 2] {
        let dims = self.grid.dims();
        let s = self.s_at(x);
        let mut b = [0.0; 2];
        for i in 0..dims {
            let ds = restrict(self.field.ds(x, i), dims);
            // ∂_i a = ∂_i s · sᵗ + s · ∂_i sᵗ
            let da = {
                let p = mat_mul(&ds, &transpose(&s));
                let q = mat_mul(&s, &transpose(&ds));
                [[p[0][0] + q[0][0], p[0][1] + q[0][1]], [p[1][0] + q[1][0], p[1][1] + q[1][1]]]
            };
            for (j, bj) in b.iter_mut().enumerate().take(dims) {
                *bj += da[i][j];
            }
        }
        b
    }

    /// `sup_x |s(∇·sᵗ)|` over cells.
    pub fn sup_s_div_s_t(&self) -> f64 {
        self.s_div_s_t_cells.iter().map(|v| v[0].hypot(v[1])).fold(0.0, f64::max)
    }
}

fn div_s_t(field: &dyn MatrixField, x: Point, dims: usize) -> [f64; 2] {
    let mut v = [0.0; 2];
    for k in 0..dims {
        let ds = restrict(field.ds(x, k), dims);
        for (j, vj) in v.iter_mut().enumerate().take(dims) {
            *vj += ds[k][j];
        }
    }
    v
}

/// Measured structural constants and pass/fail flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub lambda_ell: f64,
    pub big_lambda_ell: f64,
    /// min over samples of the smallest eigenvalue of `a⁻¹`, times `Λ`
    pub inverse_bound_ratio: f64,
    pub phi_prime_min: f64,
    pub phi_prime_max: f64,
    pub phi_at_zero: f64,
    pub ellipticity_ok: bool,
    pub phi_ok: bool,
    pub passed: bool,
}

/// Measures ellipticity of `a` at every cell and face sample and the range
/// of `φ'` on `eta_grid`.
pub fn validate_assumptions(coeffs: &CoefficientSet, eta_grid: &[f64]) -> ValidationReport {
    let dims = coeffs.grid.dims();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for m in coeffs.a_cells.iter().chain(coeffs.a_faces.values.iter().flatten()) {
        let (l, h) = sym_eigenvalues(m, dims);
        lo = lo.min(l);
        hi = hi.max(h);
    }
    // ⟨a⁻¹v, v⟩ ≥ Λ⁻¹|v|² ⟺ smallest eigenvalue of a⁻¹ (= 1/λ_max(a)) ≥ 1/Λ
    let inverse_bound_ratio = if hi > 0.0 { (1.0 / hi) * hi } else { 0.0 };
    let (mut pmin, mut pmax) = (f64::INFINITY, f64::NEG_INFINITY);
    for &eta in eta_grid {
        let d = coeffs.phi.derivative(eta);
        pmin = pmin.min(d);
        pmax = pmax.max(d);
    }
    let phi_at_zero = coeffs.phi.eval(0.0);
    let ellipticity_ok = lo > 0.0 && lo <= hi && hi.is_finite();
    let phi_ok = phi_at_zero == 0.0 && pmin > 0.0 && pmax.is_finite();
    ValidationReport {
        lambda_ell: lo,
        big_lambda_ell: hi,
        inverse_bound_ratio,
        phi_prime_min: pmin,
        phi_prime_max: pmax,
        phi_at_zero,
        ellipticity_ok,
        phi_ok,
        passed: ellipticity_ok && phi_ok,
    }
}
