//! Functionals recorded along trajectories.

use serde::Serialize;

use crate::coeffs::{psi, CoefficientSet, Mobility};
use crate::grid::{face_average_clamped, flux_a_grad, gradient, solve_projected, CellField, DEFAULT_SOLVE_TOL};
use crate::solver::StateField;
use crate::{Error, Result};

/// Scalar functionals at one sample time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub l2_sq: f64,
    pub entropy: f64,
    pub hminus1_sq: f64,
    /// `∫|log(ρ∧1)|`
    pub log_int: f64,
    /// `∫(ρ∨1)`
    pub large_part: f64,
    /// `∫∇ρ·a∇ρ`
    pub dissipation: f64,
    pub clipped_mass: f64,
    /// Smallest density in the layer of cells touching the boundary.
    pub boundary_min: f64,
    /// `(β, q([β/2, β]))` accumulated up to `t`.
    pub q_bands: Vec<(f64, f64)>,
}

/// `Σ_faces (a∇ρ)·ν (∇ρ)·ν ΔV`, equal to `⟨ρ, −∇·a∇ρ⟩`.
pub fn dissipation(rho: &CellField, coeffs: &CoefficientSet) -> f64 {
    let flux = flux_a_grad(&coeffs.a_faces, rho);
    let grad = gradient(rho);
    let mut sum = 0.0;
    for axis in 0..rho.grid().dims() {
        sum += flux.values[axis].iter().zip(&grad.values[axis]).map(|(f, g)| f * g).sum::<f64>();
    }
    sum * rho.grid().cell_volume()
}

/// `∫Ψ(ρ)` with `0·log 0 = 0`.
pub fn entropy(rho: &CellField) -> f64 {
    rho.values.iter().map(|&v| psi(v)).sum::<f64>() * rho.grid().cell_volume()
}

/// `∫|log(ρ∧1)|`; zero densities are floored at the smallest normal float.
pub fn log_integral(rho: &CellField) -> f64 {
    rho.values.iter().map(|&v| v.clamp(f64::MIN_POSITIVE, 1.0).ln().abs()).sum::<f64>() * rho.grid().cell_volume()
}

/// `∫(ρ∨1)`.
pub fn large_part(rho: &CellField) -> f64 {
    rho.values.iter().map(|&v| v.max(1.0)).sum::<f64>() * rho.grid().cell_volume()
}

/// `min ρ` over cells adjacent to the boundary.
pub fn boundary_min(rho: &CellField) -> f64 {
    let g = rho.grid();
    (0..g.num_cells())
        .filter(|&c| {
            let idx = g.multi_index(c);
            (0..g.dims()).any(|axis| idx[axis] == 0 || idx[axis] + 1 == g.cells(axis))
        })
        .map(|c| rho.values[c])
        .fold(f64::INFINITY, f64::min)
}

/// `‖ρ − m‖²_{H⁻¹} = ∫z(ρ − m)` with `−∇·a∇z = ρ − m`, no-flux.
///
/// `reference_mean` must agree with the mean of `ρ` to a relative `1e−9`.
pub fn h_minus1(rho: &CellField, coeffs: &CoefficientSet, reference_mean: f64) -> Result<f64> {
    let mean = rho.mean();
    let tolerance = 1e-9 * reference_mean.abs().max(mean.abs()).max(f64::MIN_POSITIVE);
    if (mean - reference_mean).abs() > tolerance {
        return Err(Error::Solvability { mean: mean - reference_mean, tolerance });
    }
    let rhs = rho.map(|v| v - reference_mean);
    h_minus1_sq_of(&rhs, coeffs)
}

/// `‖u‖²_{H⁻¹}` of a (numerically) mean-free field.
pub fn h_minus1_sq_of(u: &CellField, coeffs: &CoefficientSet) -> Result<f64> {
    let mut rhs = u.clone();
    rhs.project_mean_free();
    let z = solve_projected(&coeffs.a_faces, &rhs, DEFAULT_SOLVE_TOL)?;
    let v = z.values.iter().zip(&rhs.values).map(|(a, b)| a * b).sum::<f64>() * u.grid().cell_volume();
    Ok(v.max(0.0))
}

/// One step's contribution `Σ dt·ΔV·1_[β/2,β](ρ̄)·φ'(ρ̄)·(a∇ρ)·ν (∇ρ)·ν` to the
/// band mass.
pub fn q_band_increment(rho: &CellField, coeffs: &CoefficientSet, dt: f64, beta: f64) -> f64 {
    q_band_increments(rho, coeffs, dt, &[beta])[0]
}

fn q_band_increments(rho: &CellField, coeffs: &CoefficientSet, dt: f64, betas: &[f64]) -> Vec<f64> {
    let flux = flux_a_grad(&coeffs.a_faces, rho);
    let grad = gradient(rho);
    let rho_f = face_average_clamped(rho);
    let scale = dt * rho.grid().cell_volume();
    let mut out = vec![0.0; betas.len()];
    for axis in 0..rho.grid().dims() {
        for face in 0..flux.values[axis].len() {
            let r = rho_f.values[axis][face];
            let w = flux.values[axis][face] * grad.values[axis][face];
            for (acc, &beta) in out.iter_mut().zip(betas) {
                if r >= 0.5 * beta && r <= beta {
                    *acc += coeffs.phi.derivative(r) * w;
                }
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    out
}

/// Left-point accumulation of the band mass over consecutive states.
pub fn q_band_accumulate(states: &[StateField], coeffs: &CoefficientSet, beta: f64) -> f64 {
    states.windows(2).map(|w| q_band_increment(&w[0].rho, coeffs, w[1].t - w[0].t, beta)).sum()
}

/// Running band masses for a fixed list of `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandAccumulator {
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
}

impl BandAccumulator {
    pub fn new(betas: &[f64]) -> Self {
        BandAccumulator { betas: betas.to_vec(), values: vec![0.0; betas.len()] }
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Adds the contribution of a step of length `dt` started from `rho`.
    pub fn accumulate(&mut self, rho: &CellField, coeffs: &CoefficientSet, dt: f64) {
        for (v, d) in self.values.iter_mut().zip(q_band_increments(rho, coeffs, dt, &self.betas)) {
            *v += d;
        }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.betas.iter().copied().zip(self.values.iter().copied()).collect()
    }
}

/// All scalar functionals of `state`.
pub fn compute_record(
    state: &StateField,
    coeffs: &CoefficientSet,
    reference_mean: f64,
    bands: &BandAccumulator,
) -> Result<DiagnosticsRecord> {
    let rho = &state.rho;
    Ok(DiagnosticsRecord {
        t: state.t,
        mass: rho.integral(),
        l2_sq: rho.l2_sq(),
        entropy: entropy(rho),
        hminus1_sq: h_minus1(rho, coeffs, reference_mean)?,
        log_int: log_integral(rho),
        large_part: large_part(rho),
        dissipation: dissipation(rho, coeffs),
        clipped_mass: state.cumulative_clipped_mass,
        boundary_min: boundary_min(rho),
        q_bands: bands.pairs(),
    })
}

/// `L_t = ∫₀ᵗ (φ(ρ) + ⟨ξ⟩₁/2·Σ(ρ)) − its spatial mean`, with `‖∇L_t‖_{L²}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeAveragedField {
    pub t: f64,
    pub field: CellField,
    pub h1_seminorm: f64,
}

/// `‖∇u‖_{L²}` from interior-face differences.
pub fn h1_seminorm(u: &CellField) -> f64 {
    let g = gradient(u);
    let sum: f64 = g.values.iter().flatten().map(|v| v * v).sum();
    (sum * u.grid().cell_volume()).sqrt()
}

/// Trapezoidal accumulation of the time-averaged field over snapshots.
pub fn time_avg_field(
    states: &[StateField],
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    xi1: f64,
) -> Vec<TimeAveragedField> {
    let Some(first) = states.first() else {
        return Vec::new();
    };
    let integrand = |s: &StateField| {
        let mut f = s.rho.map(|v| coeffs.phi.eval(v) + 0.5 * xi1 * mob.big_sigma(v));
        f.project_mean_free();
        f
    };
    let grid = *first.rho.grid();
    let mut acc = CellField::zeros(&grid);
    let mut out = vec![TimeAveragedField { t: first.t, field: acc.clone(), h1_seminorm: 0.0 }];
    let mut prev = integrand(first);
    for w in states.windows(2) {
        let cur = integrand(&w[1]);
        let dt = w[1].t - w[0].t;
        for ((a, p), c) in acc.values.iter_mut().zip(&prev.values).zip(&cur.values) {
            *a += 0.5 * dt * (p + c);
        }
        out.push(TimeAveragedField { t: w[1].t, field: acc.clone(), h1_seminorm: h1_seminorm(&acc) });
        prev = cur;
    }
    out
}

/// `max ‖x_j − x_i‖ / (t_j − t_i)^β` over dyadic pairs `j = i + 2^k`.
pub fn holder_quotient(times: &[f64], beta: f64, mut dist: impl FnMut(usize, usize) -> Result<f64>) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::Domain(format!("Hölder quotient needs ≥ 2 samples, got {}", times.len())));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("Hölder exponent must lie in (0, 1), got {beta}")));
    }
    let n = times.len();
    let mut best: f64 = 0.0;
    let mut gap = 1;
    while gap < n {
        for i in 0..n - gap {
            let j = i + gap;
            let tau = times[j] - times[i];
            if tau > 0.0 {
                best = best.max(dist(i, j)? / tau.powf(beta));
            }
        }
        gap *= 2;
    }
    Ok(best)
}

/// Hölder quotient of a scalar series.
pub fn holder_scalar(times: &[f64], values: &[f64], beta: f64) -> Result<f64> {
    holder_quotient(times, beta, |i, j| Ok((values[j] - values[i]).abs()))
}

/// Hölder quotient of the density path in the `a`-weighted `H⁻¹` norm.
pub fn holder_hminus1(states: &[StateField], coeffs: &CoefficientSet, beta: f64) -> Result<f64> {
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    holder_quotient(&times, beta, |i, j| {
        let mut d = states[j].rho.clone();
        d.values.iter_mut().zip(&states[i].rho.values).for_each(|(a, b)| *a -= b);
        Ok(h_minus1_sq_of(&d, coeffs)?.sqrt())
    })
}

/// Hölder quotient of the time-averaged field in the `H¹` seminorm.
pub fn holder_h1(series: &[TimeAveragedField], beta: f64) -> Result<f64> {
    let times: Vec<f64> = series.iter().map(|s| s.t).collect();
    holder_quotient(&times, beta, |i, j| {
        let mut d = series[j].field.clone();
        d.values.iter_mut().zip(&series[i].field.values).for_each(|(a, b)| *a -= b);
        Ok(h1_seminorm(&d))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{Phi, Preset, RegularizedSqrt};
    use crate::grid::{divergence, Grid};
    use crate::rng::{Domain, StreamKey};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn coeffs(extents: &[f64], cells: &[usize], preset: Preset) -> (Grid, CoefficientSet) {
        let g = Grid::new(extents, cells).unwrap();
        let c = CoefficientSet::from_preset(&g, preset, Phi::Identity).unwrap();
        (g, c)
    }

    fn state(rho: CellField) -> StateField {
        StateField::new(rho)
    }

    #[test]
    fn constant_unit_density() {
        let (g, c) = coeffs(&[1.0], &[16], Preset::Identity);
        let r = compute_record(&state(CellField::constant(&g, 1.0)), &c, 1.0, &BandAccumulator::new(&[0.1])).unwrap();
        assert_relative_eq!(r.mass, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.l2_sq, 1.0, epsilon = 1e-15);
        assert_relative_eq!(r.entropy, -1.0, epsilon = 1e-15);
        assert_eq!(r.hminus1_sq, 0.0);
        assert_eq!(r.log_int, 0.0);
        assert_eq!(r.dissipation, 0.0);
        assert_eq!(r.q_bands, vec![(0.1, 0.0)]);
    }

    #[test]
    fn log_int_of_inverse_e() {
        let (g, _) = coeffs(&[1.0], &[8], Preset::Identity);
        let rho = CellField::constant(&g, (-1.0f64).exp());
        assert_relative_eq!(log_integral(&rho), 1.0, epsilon = 1e-14);
        assert!(log_integral(&CellField::zeros(&g)).is_finite());
    }

    #[test]
    fn dissipation_two_cells() {
        let (g, c) = coeffs(&[1.0], &[2], Preset::Identity);
        let rho = CellField::from_values(&g, vec![0.5, 1.5]).unwrap();
        assert_relative_eq!(dissipation(&rho, &c), 2.0, epsilon = 1e-15);
    }

    fn assembled_quadratic_form(rho: &CellField, c: &CoefficientSet) -> f64 {
        // ⟨ρ, −div(a grad ρ)⟩ by applying the operator to unit vectors
        let g = *rho.grid();
        let n = g.num_cells();
        let mut m = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut e = CellField::zeros(&g);
            e.values[j] = 1.0;
            let col = divergence(&flux_a_grad(&c.a_faces, &e));
            for i in 0..n {
                m[i][j] = -col.values[i];
            }
        }
        let mut q = 0.0;
        for i in 0..n {
            for j in 0..n {
                q += rho.values[i] * m[i][j] * rho.values[j];
            }
        }
        q * g.cell_volume()
    }

    #[test]
    fn dissipation_matches_assembled_operator() {
        for (ext, cells, preset) in [
            (vec![1.0], vec![16], Preset::parse("smooth-inhomogeneous", 0.4, &[1.0]).unwrap()),
            (vec![1.0, 2.0], vec![4, 4], Preset::Diag(1.0, 2.0)),
            (vec![1.0, 1.0], vec![4, 4], Preset::Shear(0.6)),
        ] {
            let (g, c) = coeffs(&ext, &cells, preset);
            let mut rng = StreamKey::new(1, 0).rng(0, Domain::Synthetic);
            let rho = CellField::from_fn(&g, |_| rng.random::<f64>());
            let d = dissipation(&rho, &c);
            let q = assembled_quadratic_form(&rho, &c);
            assert!((d - q).abs() <= 1e-12 * q.abs().max(1.0), "{d} vs {q}");
        }
    }

    fn jacobi_eigen_first_mode(n: usize, h: f64) -> f64 {
        // smallest nonzero eigenvalue of the assembled Neumann matrix via
        // cyclic Jacobi rotations
        let mut a = vec![vec![0.0; n]; n];
        for i in 0..n {
            if i > 0 {
                a[i][i] += 1.0;
                a[i][i - 1] = -1.0;
            }
            if i + 1 < n {
                a[i][i] += 1.0;
                a[i][i + 1] = -1.0;
            }
        }
        for row in a.iter_mut() {
            for v in row.iter_mut() {
                *v /= h * h;
            }
        }
        for _ in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += a[p][q] * a[p][q];
                    if a[p][q].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let cs = 1.0 / (t * t + 1.0).sqrt();
                    let sn = t * cs;
                    for k in 0..n {
                        let (akp, akq) = (a[k][p], a[k][q]);
                        a[k][p] = cs * akp - sn * akq;
                        a[k][q] = sn * akp + cs * akq;
                    }
                    for k in 0..n {
                        let (apk, aqk) = (a[p][k], a[q][k]);
                        a[p][k] = cs * apk - sn * aqk;
                        a[q][k] = sn * apk + cs * aqk;
                    }
                }
            }
            if off < 1e-26 {
                break;
            }
        }
        let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig[1]
    }

    #[test]
    fn hminus1_of_first_cosine_mode() {
        let n = 32;
        let (g, c) = coeffs(&[1.0], &[n], Preset::Identity);
        let h = g.spacing(0);
        let lambda = jacobi_eigen_first_mode(n, h);
        let mean = 2.0;
        let rho = CellField::from_fn(&g, |x| mean + (std::f64::consts::PI * x[0]).cos());
        let mode = rho.map(|v| v - mean);
        let expected = mode.l2_sq() / lambda;
        let got = h_minus1(&rho, &c, mean).unwrap();
        assert_relative_eq!(got, expected, max_relative = 1e-8);
        // symmetry under reflection about the mean
        let flipped = rho.map(|v| 2.0 * mean - v);
        assert_relative_eq!(h_minus1(&flipped, &c, mean).unwrap(), got, max_relative = 1e-10);
    }

    #[test]
    fn hminus1_zero_for_constant_and_mismatch_rejected() {
        let (g, c) = coeffs(&[1.0], &[8], Preset::Identity);
        let rho = CellField::constant(&g, 0.3);
        assert_eq!(h_minus1(&rho, &c, 0.3).unwrap(), 0.0);
        assert!(h_minus1(&rho, &c, 0.4).is_err());
    }

    #[test]
    fn single_face_band_by_hand() {
        let (g, c) = coeffs(&[1.0], &[2], Preset::Diag(2.0, 1.0));
        let rho = CellField::from_values(&g, vec![0.06, 0.1]).unwrap();
        let dt = 1e-3;
        // face mean 0.08 ∈ [0.05, 0.1]; a = 4, gradient 0.04/0.5 = 0.08
        let expected = dt * 0.5 * 1.0 * 4.0 * 0.08 * 0.08;
        assert_relative_eq!(q_band_increment(&rho, &c, dt, 0.1), expected, epsilon = 1e-18);
        assert_eq!(q_band_increment(&rho, &c, dt, 0.05), 0.0);
    }

    #[test]
    fn band_accumulation_is_additive() {
        let (g, c) = coeffs(&[1.0], &[16], Preset::Identity);
        let states: Vec<StateField> = (0..9)
            .map(|k| {
                let t = k as f64 * 0.01;
                let mut s = state(CellField::from_fn(&g, |x| 0.02 + 0.1 * x[0] * (1.0 + t)));
                s.t = t;
                s
            })
            .collect();
        let whole = q_band_accumulate(&states, &c, 0.1);
        let parts = q_band_accumulate(&states[..5], &c, 0.1) + q_band_accumulate(&states[4..], &c, 0.1);
        assert!(whole > 0.0);
        assert_relative_eq!(whole, parts, max_relative = 1e-14);
    }

    #[test]
    fn time_avg_stationary_constant_is_zero() {
        let (g, c) = coeffs(&[1.0], &[8], Preset::Identity);
        let rs = RegularizedSqrt::new(4).unwrap();
        let states: Vec<StateField> = (0..4)
            .map(|k| {
                let mut s = state(CellField::constant(&g, 0.7));
                s.t = k as f64 * 0.1;
                s
            })
            .collect();
        for tf in time_avg_field(&states, &c, &rs, 0.0) {
            assert!(tf.field.values.iter().all(|&v| v.abs() < 1e-15));
            assert_eq!(tf.h1_seminorm, 0.0);
        }
    }

    #[test]
    fn time_avg_single_interval_by_hand() {
        let (g, c) = coeffs(&[1.0], &[2], Preset::Identity);
        let rs = RegularizedSqrt::new(4).unwrap();
        let xi1 = 0.2;
        let s0 = state(CellField::from_values(&g, vec![0.25, 1.75]).unwrap());
        let mut s1 = state(CellField::from_values(&g, vec![0.5, 1.5]).unwrap());
        s1.t = 0.1;
        let f = |v: f64| v + 0.5 * xi1 * 0.25 * ((v + 0.25) / 1.25).ln();
        let centered = |a: f64, b: f64| [(a - b) / 2.0, (b - a) / 2.0];
        let i0 = centered(f(0.25), f(1.75));
        let i1 = centered(f(0.5), f(1.5));
        let series = time_avg_field(&[s0, s1], &c, &rs, xi1);
        for cell in 0..2 {
            assert_relative_eq!(series[1].field.values[cell], 0.05 * (i0[cell] + i1[cell]), epsilon = 1e-15);
        }
        assert!(series[1].field.mean().abs() < 1e-12);
    }

    #[test]
    fn holder_trivial_cases() {
        assert_eq!(holder_scalar(&[0.0, 1.0, 2.0], &[3.0, 3.0, 3.0], 0.5).unwrap(), 0.0);
        let q = holder_scalar(&[0.0, 0.25], &[0.0, 2.0], 0.5).unwrap();
        assert_relative_eq!(q, 4.0, epsilon = 1e-15);
        assert!(holder_scalar(&[], &[], 0.5).is_err());
    }

    #[test]
    fn holder_on_brownian_series() {
        // cumulative Gaussian sums: Hölder-(<½) quotients stay bounded under
        // refinement, Hölder-(>½) quotients blow up
        let path = |levels: u32| -> (Vec<f64>, Vec<f64>) {
            let n = 1usize << levels;
            let fine = 1usize << 16;
            let mut rng = StreamKey::new(77, 0).rng(0, Domain::Synthetic);
            let incs: Vec<f64> = (0..fine).map(|_| rng.sample::<f64, _>(StandardNormal) / (fine as f64).sqrt()).collect();
            let mut w = vec![0.0];
            let mut acc = 0.0;
            let stride = fine / n;
            for (i, d) in incs.iter().enumerate() {
                acc += d;
                if (i + 1) % stride == 0 {
                    w.push(acc);
                }
            }
            let t = (0..=n).map(|i| i as f64 / n as f64).collect();
            (t, w)
        };
        let q = |levels, beta| {
            let (t, w) = path(levels);
            holder_scalar(&t, &w, beta).unwrap()
        };
        let (lo_c, lo_f) = (q(8, 0.2), q(14, 0.2));
        let (hi_c, hi_f) = (q(8, 0.6), q(14, 0.6));
        assert!(lo_f < 2.0 * lo_c, "{lo_c} {lo_f}");
        assert!(hi_f > 1.5 * hi_c, "{hi_c} {hi_f}");
    }

    proptest! {
        #[test]
        fn log_int_monotone_under_raising(
            base in proptest::collection::vec(0.0f64..3.0, 16),
            lift in proptest::collection::vec(0.0f64..1.0, 16),
        ) {
            let g = Grid::new(&[1.0], &[16]).unwrap();
            let lo = CellField::from_values(&g, base.clone()).unwrap();
            let hi = CellField::from_values(&g, base.iter().zip(&lift).map(|(a, b)| a + b).collect()).unwrap();
            prop_assert!(log_integral(&hi) <= log_integral(&lo));
        }
    }
}
