//! Spatially correlated noise `ξ(x, t) = Σ_k f_k(x) B_k(t)`.
//!
//! Modes come in cosine/sine pairs sharing an amplitude and an integer
//! wavevector, so `Σ_k f_k(x)²` is the same constant everywhere.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientSet, Mobility};
use crate::grid::{face_average_clamped, CellField, FaceField, Grid, Point};
use crate::rng::{Domain, StreamKey};
use crate::{Error, Result};

/// Deviation from constancy of `Σ f_k²` that aborts construction.
pub const CONSTANCY_TOL: f64 = 1e-9;

/// One `(α, κ)` pair: `α cos(2π κ·x/L)` and `α sin(2π κ·x/L)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModePair {
    pub alpha: f64,
    pub k: Vec<i64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(default)]
    pub modes: Vec<ModePair>,
}

impl NoiseSpec {
    pub fn new(modes: Vec<ModePair>) -> Self {
        NoiseSpec { modes }
    }

    /// No modes: deterministic dynamics.
    pub fn none() -> Self {
        NoiseSpec { modes: Vec::new() }
    }

    /// A single pair with amplitude `alpha` and wavevector `k`.
    pub fn single(alpha: f64, k: &[i64]) -> Self {
        NoiseSpec { modes: vec![ModePair { alpha, k: k.to_vec() }] }
    }

    pub fn num_modes(&self) -> usize {
        2 * self.modes.len()
    }

    /// `Σ_j α_j²`.
    pub fn quadratic_variation(&self) -> f64 {
        self.modes.iter().map(|m| m.alpha * m.alpha).sum()
    }

    fn phase(&self, pair: usize, x: Point, extents: &[f64]) -> (f64, [f64; 2]) {
        let m = &self.modes[pair];
        let mut phase = 0.0;
        let mut dphase = [0.0; 2];
        for (axis, &l) in extents.iter().enumerate() {
            let kj = m.k.get(axis).copied().unwrap_or(0) as f64;
            let w = 2.0 * PI * kj / l;
            phase += w * x[axis];
            dphase[axis] = w;
        }
        (phase, dphase)
    }

    /// `f_k(x)`; even `k` are cosines, odd `k` sines.
    pub fn eval_mode(&self, k: usize, x: Point, extents: &[f64]) -> f64 {
        let alpha = self.modes[k / 2].alpha;
        let (phase, _) = self.phase(k / 2, x, extents);
        if k.is_multiple_of(2) {
            alpha * phase.cos()
        } else {
            alpha * phase.sin()
        }
    }

    /// `∇f_k(x)`.
    pub fn grad_mode(&self, k: usize, x: Point, extents: &[f64]) -> [f64; 2] {
        let alpha = self.modes[k / 2].alpha;
        let (phase, w) = self.phase(k / 2, x, extents);
        let d = if k.is_multiple_of(2) { -alpha * phase.sin() } else { alpha * phase.cos() };
        [d * w[0], d * w[1]]
    }

    fn validate(&self, dims: usize) -> Result<()> {
        for (j, m) in self.modes.iter().enumerate() {
            if !(m.alpha.is_finite() && m.alpha >= 0.0) {
                return Err(Error::Noise(format!("mode {j}: amplitude must be finite and ≥ 0, got {}", m.alpha)));
            }
            if m.k.len() > dims {
                return Err(Error::Noise(format!(
                    "mode {j}: wavevector has {} components on a {dims}D grid",
                    m.k.len()
                )));
            }
        }
        Ok(())
    }
}

/// Noise tables on a grid.
#[derive(Debug, Clone)]
pub struct NoiseField {
    spec: NoiseSpec,
    grid: Grid,
    xi1: f64,
    /// `f_k` at interior faces, laid out `[axis][face·K + k]`.
    f_faces: [Vec<f64>; 2],
    /// Normal row of `s` at interior faces.
    s_rows: [Vec<[f64; 2]>; 2],
    /// `Σ_k (|sᵗ∇f_k|² + f_k²|∇·sᵗ|²)` at cell centers.
    pub div_s_xi_cells: Vec<f64>,
    pub constancy_deviation: f64,
}

impl NoiseField {
    pub fn build(spec: &NoiseSpec, grid: &Grid, coeffs: &CoefficientSet) -> Result<Self> {
        spec.validate(grid.dims())?;
        let ext = grid.extents();
        let kk = spec.num_modes();
        let xi1 = spec.quadratic_variation();
        if kk == 0 || xi1 == 0.0 {
            log::warn!("noise has zero quadratic variation; dynamics are deterministic");
        }

        let mut f_faces = [Vec::new(), Vec::new()];
        let mut s_rows = [Vec::new(), Vec::new()];
        let mut deviation: f64 = 0.0;
        for axis in 0..grid.dims() {
            let nf = grid.num_faces(axis);
            f_faces[axis] = vec![0.0; nf * kk];
            s_rows[axis] = coeffs.s_faces.values[axis].iter().map(|m| m[axis]).collect();
            for face in 0..nf {
                let x = grid.face_center(axis, face);
                let mut sum = 0.0;
                for k in 0..kk {
                    let f = spec.eval_mode(k, x, ext);
                    f_faces[axis][face * kk + k] = f;
                    sum += f * f;
                }
                deviation = deviation.max((sum - xi1).abs());
            }
        }

        let mut div_s_xi_cells = Vec::with_capacity(grid.num_cells());
        for (cell, x) in grid.cell_centers().into_iter().enumerate() {
            let s = &coeffs.s_cells[cell];
            let dv = coeffs.div_s_t[cell];
            let dv_sq = dv[0] * dv[0] + dv[1] * dv[1];
            let mut sum = 0.0;
            let mut qv = 0.0;
            for k in 0..kk {
                let f = spec.eval_mode(k, x, ext);
                let g = spec.grad_mode(k, x, ext);
                let stg = [s[0][0] * g[0] + s[1][0] * g[1], s[0][1] * g[0] + s[1][1] * g[1]];
                sum += stg[0] * stg[0] + stg[1] * stg[1] + f * f * dv_sq;
                qv += f * f;
            }
            deviation = deviation.max((qv - xi1).abs());
            div_s_xi_cells.push(sum);
        }
        if deviation > CONSTANCY_TOL {
            return Err(Error::Noise(format!(
                "Σ f_k² is not spatially constant (max deviation {deviation:e})"
            )));
        }
        Ok(NoiseField {
            spec: spec.clone(),
            grid: *grid,
            xi1,
            f_faces,
            s_rows,
            div_s_xi_cells,
            constancy_deviation: deviation,
        })
    }

    pub fn spec(&self) -> &NoiseSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `⟨ξ⟩₁ = Σ_k f_k²`.
    pub fn xi1(&self) -> f64 {
        self.xi1
    }

    pub fn num_modes(&self) -> usize {
        self.spec.num_modes()
    }

    pub fn is_deterministic(&self) -> bool {
        self.num_modes() == 0 || self.xi1 == 0.0
    }

    /// `sup_x ⟨∇·sξ⟩₁` over cell centers.
    pub fn sup_div_s_xi(&self) -> f64 {
        self.div_s_xi_cells.iter().copied().fold(0.0, f64::max)
    }

    /// Tabulated `f_k` at an interior face.
    pub fn face_mode(&self, axis: usize, face: usize, k: usize) -> f64 {
        self.f_faces[axis][face * self.num_modes() + k]
    }

    /// `Σ_k f_k(face)·(s ΔB_k)·ν` on every interior face.
    pub fn face_increment(&self, inc: &NoiseIncrement) -> FaceField {
        let grid = &self.grid;
        let dims = grid.dims();
        let kk = self.num_modes();
        let mut out = FaceField::zeros(grid);
        if kk == 0 {
            return out;
        }
        for axis in 0..dims {
            let fs = &self.f_faces[axis];
            for (face, v) in out.values[axis].iter_mut().enumerate() {
                let row = self.s_rows[axis][face];
                let mut acc = 0.0;
                for k in 0..kk {
                    let db = &inc.draws[k * dims..(k + 1) * dims];
                    let sdb: f64 = (0..dims).map(|m| row[m] * db[m]).sum();
                    acc += fs[face * kk + k] * sdb;
                }
                *v = acc;
            }
        }
        out
    }
}

/// Brownian increments `ΔB_k ∈ ℝ^d` for one step, stored `[k·d + m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseIncrement {
    pub dt: f64,
    pub draws: Vec<f64>,
    pub key: StreamKey,
    pub step: u64,
}

impl NoiseIncrement {
    pub fn zero(field: &NoiseField, dt: f64) -> Self {
        NoiseIncrement {
            dt,
            draws: vec![0.0; field.num_modes() * field.grid.dims()],
            key: StreamKey::new(0, 0),
            step: 0,
        }
    }
}

/// Independent `N(0, dt)` draws for every mode and axis, reproducible from
/// `(key, step)`.
pub fn sample_increments(field: &NoiseField, dt: f64, key: StreamKey, step: u64) -> Result<NoiseIncrement> {
    if !(dt >= 0.0) {
        return Err(Error::Domain(format!("time step must be ≥ 0, got {dt}")));
    }
    let count = field.num_modes() * field.grid.dims();
    let draws = if dt == 0.0 || count == 0 {
        vec![0.0; count]
    } else {
        let sd = dt.sqrt();
        let mut rng = key.rng(step, Domain::Noise);
        (0..count).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    };
    Ok(NoiseIncrement { dt, draws, key, step })
}

/// `σ(ρ̄)·Σ_k f_k (s ΔB_k)·ν` on interior faces, `ρ̄` the clamped face mean.
pub fn stochastic_face_flux(
    rho: &CellField,
    mob: &dyn Mobility,
    field: &NoiseField,
    inc: &NoiseIncrement,
) -> FaceField {
    let mut flux = field.face_increment(inc);
    let rho_f = face_average_clamped(rho);
    for axis in 0..rho.grid().dims() {
        for (v, &r) in flux.values[axis].iter_mut().zip(&rho_f.values[axis]) {
            *v *= mob.sigma(r);
        }
    }
    flux
}
