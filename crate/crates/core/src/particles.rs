//! Independent reflecting diffusions with generator `∇·a∇` and their
//! empirical densities.
//!
//! The SDE is `dX = b(X) dt + √2 s(X) dB` with `b_j = Σ_i ∂_i a_ij`, stepped
//! by Euler–Maruyama and folded back into the box by mirror reflection.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::coeffs::CoefficientSet;
use crate::grid::{CellField, Grid, Point};
use crate::rng::{Domain, StreamKey};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleEnsemble {
    pub grid: Grid,
    pub positions: Vec<Point>,
    pub t: f64,
    pub step: u64,
}

/// Mirror-folds `x` into `[0, L]`.
pub fn reflect(x: f64, l: f64) -> f64 {
    let y = x.rem_euclid(2.0 * l);
    let y = if y > l { 2.0 * l - y } else { y };
    y.clamp(0.0, l)
}

impl ParticleEnsemble {
    pub fn new(grid: &Grid, positions: Vec<Point>) -> Self {
        ParticleEnsemble { grid: *grid, positions, t: 0.0, step: 0 }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// `count` particles distributed uniformly in the box.
    pub fn uniform(grid: &Grid, count: usize, key: StreamKey) -> Self {
        let mut rng = key.rng(u64::MAX, Domain::Particles);
        let positions = (0..count)
            .map(|_| {
                let mut p = [0.0; 2];
                for (axis, v) in p.iter_mut().enumerate().take(grid.dims()) {
                    *v = rng.random::<f64>() * grid.extent(axis);
                }
                p
            })
            .collect();
        Self::new(grid, positions)
    }

    /// `count` particles drawn from the piecewise-constant density `rho`
    /// (cell by inverse CDF, then uniform within the cell).
    pub fn from_density(rho: &CellField, count: usize, key: StreamKey) -> Result<Self> {
        let grid = *rho.grid();
        if rho.values.iter().any(|&v| !(v >= 0.0)) {
            return Err(Error::Domain("particle initial density must be nonnegative".into()));
        }
        let mut cdf = Vec::with_capacity(rho.len());
        let mut acc = 0.0;
        for &v in &rho.values {
            acc += v;
            cdf.push(acc);
        }
        if !(acc > 0.0) {
            return Err(Error::Domain("particle initial density has zero mass".into()));
        }
        let mut rng = key.rng(u64::MAX, Domain::Particles);
        let positions = (0..count)
            .map(|_| {
                let u = rng.random::<f64>() * acc;
                let cell = cdf.partition_point(|&c| c <= u).min(rho.len() - 1);
                let idx = grid.multi_index(cell);
                let mut p = [0.0; 2];
                for (axis, v) in p.iter_mut().enumerate().take(grid.dims()) {
                    *v = (idx[axis] as f64 + rng.random::<f64>()) * grid.spacing(axis);
                }
                p
            })
            .collect();
        Ok(Self::new(&grid, positions))
    }

    /// Moves every particle by `delta` and reflects; used for deterministic
    /// tests of the boundary treatment.
    pub fn displace(&mut self, delta: Point) {
        let dims = self.grid.dims();
        for p in &mut self.positions {
            for axis in 0..dims {
                p[axis] = reflect(p[axis] + delta[axis], self.grid.extent(axis));
            }
        }
    }
}

/// One Euler–Maruyama step of length `dt` for every particle.
pub fn step_particles(ens: &mut ParticleEnsemble, dt: f64, coeffs: &CoefficientSet, key: StreamKey) {
    let dims = ens.grid.dims();
    let sd = (2.0 * dt).sqrt();
    let mut rng = key.rng(ens.step, Domain::Particles);
    for p in &mut ens.positions {
        let b = coeffs.particle_drift(*p);
        let s = coeffs.s_at(*p);
        let mut db = [0.0; 2];
        for v in db.iter_mut().take(dims) {
            *v = rng.sample::<f64, _>(StandardNormal);
        }
        let mut next = *p;
        for i in 0..dims {
            let noise: f64 = (0..dims).map(|m| s[i][m] * db[m]).sum();
            next[i] = reflect(p[i] + b[i] * dt + sd * noise, ens.grid.extent(i));
        }
        *p = next;
    }
    ens.step += 1;
    ens.t += dt;
}

/// Steps until `horizon`, returning snapshots every `cadence` steps and at
/// the end (the initial ensemble first).
pub fn run_particles(
    ens: &ParticleEnsemble,
    dt: f64,
    horizon: f64,
    cadence: usize,
    coeffs: &CoefficientSet,
    key: StreamKey,
) -> Result<Vec<ParticleEnsemble>> {
    if !(dt > 0.0) || !(horizon >= 0.0) || cadence == 0 {
        return Err(Error::Config("particle run needs dt > 0, horizon ≥ 0 and cadence ≥ 1".into()));
    }
    let steps = (horizon / dt - 1e-9).ceil().max(0.0) as u64;
    let mut cur = ens.clone();
    let mut out = vec![cur.clone()];
    for k in 0..steps {
        let t_next = if k + 1 == steps { horizon } else { (k + 1) as f64 * dt };
        let dt_k = t_next - cur.t;
        step_particles(&mut cur, dt_k, coeffs, key);
        cur.t = t_next;
        if (k + 1) % cadence as u64 == 0 || k + 1 == steps {
            out.push(cur.clone());
        }
    }
    Ok(out)
}

/// Per-axis Gaussian kernel weights over cells, folded at both walls and
/// normalized to integrate to one.
fn axis_weights(x: f64, l: f64, cells: usize, h: f64, bw: f64) -> Vec<f64> {
    let images = ((4.0 * bw / l).ceil() as i64 + 1).min(64);
    let mut w = vec![0.0; cells];
    for (i, wi) in w.iter_mut().enumerate() {
        let c = (i as f64 + 0.5) * h;
        let mut acc = 0.0;
        for k in -images..=images {
            let shift = 2.0 * l * k as f64;
            for img in [x + shift, -x + shift] {
                let z = (c - img) / bw;
                acc += (-0.5 * z * z).exp();
            }
        }
        *wi = acc;
    }
    let total: f64 = w.iter().sum::<f64>() * h;
    if total > 0.0 {
        w.iter_mut().for_each(|v| *v /= total);
    } else {
        // kernel far narrower than a cell: deposit in the containing cell
        let i = ((x / h) as usize).min(cells - 1);
        w[i] = 1.0 / h;
    }
    w
}

/// Gaussian kernel density estimate `m(x) ≈ N⁻¹ Σ δ(x − X_i)` on `grid`.
pub fn empirical_density(ens: &ParticleEnsemble, bandwidth: f64, grid: &Grid) -> Result<CellField> {
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if ens.is_empty() {
        return Err(Error::Domain("empty particle ensemble".into()));
    }
    let dims = grid.dims();
    let mut out = CellField::zeros(grid);
    let inv_n = 1.0 / ens.len() as f64;
    for p in &ens.positions {
        let w0 = axis_weights(p[0], grid.extent(0), grid.cells(0), grid.spacing(0), bandwidth);
        if dims == 1 {
            out.values.iter_mut().zip(&w0).for_each(|(o, w)| *o += inv_n * w);
        } else {
            let w1 = axis_weights(p[1], grid.extent(1), grid.cells(1), grid.spacing(1), bandwidth);
            for (i, a) in w0.iter().enumerate() {
                for (j, b) in w1.iter().enumerate() {
                    out.values[grid.cell_index([i, j])] += inv_n * a * b;
                }
            }
        }
    }
    Ok(out)
}

/// `sup_x |F_N(x) − x/L|` for the positions along `axis`.
pub fn ks_uniform(ens: &ParticleEnsemble, axis: usize) -> f64 {
    let l = ens.grid.extent(axis);
    let mut xs: Vec<f64> = ens.positions.iter().map(|p| p[axis] / l).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

/// Asymptotic Kolmogorov–Smirnov critical value at level 1%.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// z-scores of the particle fraction in `blocks` equal slabs along axis 0
/// against the uniform fraction `1/blocks`.
pub fn block_z_scores(ens: &ParticleEnsemble, blocks: usize) -> Vec<f64> {
    let l = ens.grid.extent(0);
    let mut counts = vec![0usize; blocks];
    for p in &ens.positions {
        counts[((p[0] / l * blocks as f64) as usize).min(blocks - 1)] += 1;
    }
    let n = ens.len() as f64;
    let p0 = 1.0 / blocks as f64;
    let se = (p0 * (1.0 - p0) / n).sqrt();
    counts.iter().map(|&c| (c as f64 / n - p0) / se).collect()
}

/// z-scores of the ensemble-mean mass fraction of `blocks` equal slabs along
/// axis 0 against `1/blocks`, with the standard error taken across the
/// realizations. A zero standard error with an exact match gives 0.
pub fn field_block_z_scores(fields: &[CellField], blocks: usize) -> Result<Vec<f64>> {
    if fields.len() < 2 || blocks == 0 {
        return Err(Error::Config("block z-scores need at least two fields and one block".into()));
    }
    let grid = fields[0].grid();
    let n0 = grid.cells(0);
    if !n0.is_multiple_of(blocks) {
        return Err(Error::Config(format!("{blocks} blocks do not divide {n0} cells")));
    }
    let fractions: Vec<Vec<f64>> = fields
        .iter()
        .map(|f| {
            let mut b = vec![0.0; blocks];
            for (c, v) in f.values.iter().enumerate() {
                b[grid.multi_index(c)[0] * blocks / n0] += v;
            }
            let total: f64 = b.iter().sum();
            b.iter().map(|x| x / total).collect()
        })
        .collect();
    let r = fields.len() as f64;
    let p0 = 1.0 / blocks as f64;
    Ok((0..blocks)
        .map(|k| {
            let mean = fractions.iter().map(|f| f[k]).sum::<f64>() / r;
            let var = fractions.iter().map(|f| (f[k] - mean).powi(2)).sum::<f64>() / (r - 1.0);
            let se = (var / r).sqrt();
            if se > 0.0 {
                (mean - p0) / se
            } else if mean == p0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .collect())
}

/// SPDE versus particle statistics at matched times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    /// `‖E m_spde − E m_particles‖_{L²}` at each time.
    pub mean_distance: Vec<f64>,
    /// Cell-averaged ensemble variance, SPDE over particles, at the last time.
    pub variance_ratio: f64,
    pub tolerance: f64,
    pub pass: bool,
}

fn normalized(f: &CellField) -> CellField {
    let m = f.integral();
    f.map(|v| v / m)
}

fn mean_and_variance(fields: &[&CellField]) -> (CellField, f64) {
    let r = fields.len() as f64;
    let mut mean = CellField::zeros(fields[0].grid());
    for f in fields {
        mean.values.iter_mut().zip(&f.values).for_each(|(m, v)| *m += v / r);
    }
    let mut var = 0.0;
    if fields.len() > 1 {
        for f in fields {
            var += f.values.iter().zip(&mean.values).map(|(v, m)| (v - m).powi(2)).sum::<f64>();
        }
        var /= (r - 1.0) * mean.len() as f64;
    }
    (mean, var)
}

/// Compares ensemble-mean densities (each normalized to unit mass) of SPDE
/// realizations and particle empirical densities at matched times.
///
/// `spde[r][i]` and `particles[r][i]` are the fields of realization `r` at
/// `times[i]`. The report passes if every mean distance is at most
/// `tolerance`.
pub fn compare_stats(
    times: &[f64],
    spde: &[Vec<CellField>],
    particles: &[Vec<CellField>],
    tolerance: f64,
) -> Result<ComparisonReport> {
    if spde.is_empty() || particles.is_empty() || times.is_empty() {
        return Err(Error::Config("comparison needs nonempty ensembles and times".into()));
    }
    if spde.iter().chain(particles).any(|r| r.len() != times.len()) {
        return Err(Error::Config("SPDE and particle runs have mismatched sample times".into()));
    }
    let mut mean_distance = Vec::with_capacity(times.len());
    let mut variance_ratio = f64::NAN;
    for i in 0..times.len() {
        let a: Vec<CellField> = spde.iter().map(|r| normalized(&r[i])).collect();
        let b: Vec<CellField> = particles.iter().map(|r| normalized(&r[i])).collect();
        if a[0].grid() != b[0].grid() {
            return Err(Error::Config("SPDE and particle densities live on different grids".into()));
        }
        let (ma, va) = mean_and_variance(&a.iter().collect::<Vec<_>>());
        let (mb, vb) = mean_and_variance(&b.iter().collect::<Vec<_>>());
        let diff = ma.values.iter().zip(&mb.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        mean_distance.push((diff * ma.grid().cell_volume()).sqrt());
        if i + 1 == times.len() {
            variance_ratio = va / vb;
        }
    }
    let pass = mean_distance.iter().all(|&d| d <= tolerance);
    Ok(ComparisonReport { times: times.to_vec(), mean_distance, variance_ratio, tolerance, pass })
}
