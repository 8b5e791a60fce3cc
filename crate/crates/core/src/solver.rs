//! Explicit time stepping of the regularized equation in flux form.
//!
//! Per interior face,
//!
//! ```text
//! F_det   = a∇φ(ρ) + θ⟨ξ⟩₁ σ'(ρ̄)² a∇ρ + θ⟨ξ⟩₁ σ(ρ̄)σ'(ρ̄) s(∇·sᵗ)
//! F_stoch = σ(ρ̄) Σ_k f_k (s ΔB_k)·ν
//! ρ'      = ρ + ∇_h·(dt F_det − F_stoch)
//! ```
//!
//! with `ρ̄` the clamped face mean. The combined flux goes through a single
//! discrete divergence, so the update conserves mass up to round-off.

use serde::{Deserialize, Serialize};

use crate::coeffs::{CoefficientSet, Mobility};
use crate::diagnostics::{compute_record, BandAccumulator, DiagnosticsRecord};
use crate::grid::{divergence, face_average_clamped, flux_a_grad, CellField, FaceField, Grid};
use crate::noise::{sample_increments, NoiseField, NoiseIncrement};
use crate::rng::StreamKey;
use crate::{Error, Result};

/// Fraction of the pre-clip positive mass above which a step is flagged.
pub const UNDER_RESOLVED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ItoEm,
    StratHeun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonnegPolicy {
    ClipRenormalize,
    ClipOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverParams {
    pub dt: f64,
    /// Correction weight: 0 Itô, ½ Stratonovich, 1 Klimontovich.
    #[serde(default = "default_theta")]
    pub theta: f64,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Regularization index of `σ_n`.
    pub n: u32,
    #[serde(default = "default_policy")]
    pub nonneg_policy: NonnegPolicy,
    pub horizon: f64,
    /// Record diagnostics and snapshots every `cadence` steps.
    #[serde(default = "default_cadence")]
    pub cadence: usize,
}

fn default_theta() -> f64 {
    0.5
}

fn default_scheme() -> Scheme {
    Scheme::ItoEm
}

fn default_policy() -> NonnegPolicy {
    NonnegPolicy::ClipRenormalize
}

fn default_cadence() -> usize {
    1
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.theta.is_finite() && self.theta >= 0.0) {
            return Err(Error::Config(format!("θ must be ≥ 0, got {}", self.theta)));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(Error::Config(format!("horizon must be ≥ 0, got {}", self.horizon)));
        }
        if self.cadence == 0 {
            return Err(Error::Config("cadence must be ≥ 1".into()));
        }
        if self.n < 1 {
            return Err(Error::Config("regularization index n must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Number of steps to reach the horizon; the last one may be shorter.
    pub fn num_steps(&self) -> u64 {
        let r = self.horizon / self.dt;
        let k = r.round();
        if (r - k).abs() <= 1e-9 * r.max(1.0) {
            k as u64
        } else {
            r.ceil() as u64
        }
    }

    /// Effective θ entering the stability bound.
    fn stability_theta(&self) -> f64 {
        match self.scheme {
            Scheme::ItoEm => self.theta,
            Scheme::StratHeun => 0.5,
        }
    }
}

/// Density with its time stamp and clipping ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct StateField {
    pub rho: CellField,
    pub t: f64,
    pub step: u64,
    pub cumulative_clipped_mass: f64,
}

impl StateField {
    pub fn new(rho: CellField) -> Self {
        StateField { rho, t: 0.0, step: 0, cumulative_clipped_mass: 0.0 }
    }
}

/// Bookkeeping of one accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub pre_clip_mass: f64,
    pub clipped: f64,
    pub under_resolved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonnegOutcome {
    pub clipped: f64,
    pub under_resolved: bool,
}

/// Removes negative values in place.
///
/// `ClipRenormalize` scales the positive part by `(P − C)/P`, where `C` is
/// the clipped mass and `P` the positive mass, so the integral is kept.
/// `ClipOnly` zeroes negatives and lets the mass rise by `C`.
pub fn apply_nonneg(rho: &mut CellField, policy: NonnegPolicy) -> NonnegOutcome {
    let vol = rho.grid().cell_volume();
    let mut neg = 0.0;
    let mut pos = 0.0;
    for &v in &rho.values {
        if v < 0.0 {
            neg -= v;
        } else {
            pos += v;
        }
    }
    let clipped = neg * vol;
    let positive = pos * vol;
    if clipped == 0.0 {
        return NonnegOutcome { clipped: 0.0, under_resolved: false };
    }
    let under_resolved = clipped > UNDER_RESOLVED_FRACTION * positive;
    match policy {
        NonnegPolicy::ClipOnly => {
            rho.values.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        NonnegPolicy::ClipRenormalize => {
            let factor = if pos > neg { (pos - neg) / pos } else { 0.0 };
            rho.values.iter_mut().for_each(|v| *v = if *v < 0.0 { 0.0 } else { *v * factor });
        }
    }
    NonnegOutcome { clipped, under_resolved }
}

/// `a∇φ(ρ)` on interior faces.
pub fn deterministic_flux(rho: &CellField, coeffs: &CoefficientSet) -> FaceField {
    let phi = coeffs.phi;
    flux_a_grad(&coeffs.a_faces, &rho.map(|v| phi.eval(v)))
}

/// Coefficients multiplying `σ'²a∇ρ` and `σσ' s(∇·sᵗ)`: both `2θ·⟨ξ⟩₁/2`.
pub fn correction_coefficients(theta: f64, xi1: f64) -> (f64, f64) {
    let c = 2.0 * theta * (xi1 / 2.0);
    (c, c)
}

/// The two θ-weighted correction fluxes, summed.
pub fn correction_flux(
    rho: &CellField,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    theta: f64,
    xi1: f64,
) -> FaceField {
    let grid = *rho.grid();
    let (c1, c2) = correction_coefficients(theta, xi1);
    if c1 == 0.0 && c2 == 0.0 {
        return FaceField::zeros(&grid);
    }
    let mut out = flux_a_grad(&coeffs.a_faces, rho);
    let rho_f = face_average_clamped(rho);
    for axis in 0..grid.dims() {
        let drift = &coeffs.s_div_s_t_faces.values[axis];
        for (face, v) in out.values[axis].iter_mut().enumerate() {
            let r = rho_f.values[axis][face];
            let sp = mob.sigma_prime(r);
            *v = c1 * sp * sp * *v + c2 * mob.sigma(r) * sp * drift[face];
        }
    }
    out
}

/// Largest admissible `dt` for the explicit scheme:
/// `0.25·h²/(Λ·Λ̃ + 2θ⟨ξ⟩₁·sup σ'²·Λ)`.
pub fn stability_bound(grid: &Grid, coeffs: &CoefficientSet, mob: &dyn Mobility, theta: f64, xi1: f64) -> f64 {
    let h = grid.min_spacing();
    let lam = coeffs.big_lambda_ell;
    let denom = lam * coeffs.big_lambda_phi + 2.0 * theta * xi1 * mob.sup_sigma_prime_sq() * lam;
    0.25 * h * h / denom
}

/// Rejects `params.dt` above [`stability_bound`] for the given setup.
pub fn check_params(params: &SolverParams, grid: &Grid, coeffs: &CoefficientSet, mob: &dyn Mobility, xi1: f64) -> Result<()> {
    params.validate()?;
    check_stability(params.dt, stability_bound(grid, coeffs, mob, params.stability_theta(), xi1))
}

fn check_stability(dt: f64, bound: f64) -> Result<()> {
    if dt > bound * (1.0 + 1e-12) {
        return Err(Error::Config(format!("dt = {dt:e} exceeds the stability bound {bound:e}")));
    }
    Ok(())
}

fn check_finite(rho: &CellField, step: u64, t: f64) -> Result<()> {
    if let Some(i) = rho.values.iter().position(|v| !v.is_finite()) {
        let (lo, hi) = rho
            .values
            .iter()
            .filter(|v| v.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        return Err(Error::Numerical {
            step,
            t,
            message: format!("non-finite density in cell {i}; finite range [{lo:e}, {hi:e}]"),
        });
    }
    Ok(())
}

fn scale_by_sigma(g: &FaceField, rho: &CellField, mob: &dyn Mobility) -> FaceField {
    let mut out = g.clone();
    let rho_f = face_average_clamped(rho);
    for axis in 0..rho.grid().dims() {
        for (v, &r) in out.values[axis].iter_mut().zip(&rho_f.values[axis]) {
            *v *= mob.sigma(r);
        }
    }
    out
}

fn advance(rho: &CellField, flux: &FaceField) -> CellField {
    let d = divergence(flux);
    let mut out = rho.clone();
    out.values.iter_mut().zip(&d.values).for_each(|(r, dv)| *r += dv);
    out
}

fn finish(
    state: &StateField,
    mut rho: CellField,
    dt: f64,
    policy: NonnegPolicy,
) -> Result<(StateField, StepReport)> {
    let step = state.step + 1;
    let t = state.t + dt;
    check_finite(&rho, step, t)?;
    let pre_clip_mass = rho.integral();
    let out = apply_nonneg(&mut rho, policy);
    let next = StateField {
        rho,
        t,
        step,
        cumulative_clipped_mass: state.cumulative_clipped_mass + out.clipped,
    };
    Ok((next, StepReport { pre_clip_mass, clipped: out.clipped, under_resolved: out.under_resolved }))
}

/// One Euler–Maruyama step with the θ-weighted correction.
pub fn step_ito(
    state: &StateField,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    noise: &NoiseField,
    inc: &NoiseIncrement,
    theta: f64,
    policy: NonnegPolicy,
) -> Result<(StateField, StepReport)> {
    let dt = inc.dt;
    let xi1 = noise.xi1();
    check_stability(dt, stability_bound(state.rho.grid(), coeffs, mob, theta, xi1))?;
    let rho = &state.rho;
    let mut flux = deterministic_flux(rho, coeffs);
    flux.axpy(1.0, &correction_flux(rho, coeffs, mob, theta, xi1));
    flux.scale(dt);
    if !noise.is_deterministic() {
        let g = noise.face_increment(inc);
        flux.axpy(-1.0, &scale_by_sigma(&g, rho, mob));
    }
    finish(state, advance(rho, &flux), dt, policy)
}

/// One stochastic Heun step: Itô predictor without corrections, then the
/// trapezoidal deterministic flux and the stochastic flux at the midpoint
/// density.
pub fn step_strat_heun(
    state: &StateField,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    noise: &NoiseField,
    inc: &NoiseIncrement,
    policy: NonnegPolicy,
) -> Result<(StateField, StepReport)> {
    let dt = inc.dt;
    check_stability(dt, stability_bound(state.rho.grid(), coeffs, mob, 0.5, noise.xi1()))?;
    let rho = &state.rho;
    let stochastic = !noise.is_deterministic();
    let g = if stochastic { Some(noise.face_increment(inc)) } else { None };

    let det0 = deterministic_flux(rho, coeffs);
    let mut pred = det0.clone();
    pred.scale(dt);
    if let Some(g) = &g {
        pred.axpy(-1.0, &scale_by_sigma(g, rho, mob));
    }
    let rho_star = advance(rho, &pred);

    let mut flux = deterministic_flux(&rho_star, coeffs);
    flux.axpy(1.0, &det0);
    flux.scale(0.5 * dt);
    if let Some(g) = &g {
        let mut mid = rho.clone();
        mid.values.iter_mut().zip(&rho_star.values).for_each(|(m, s)| *m = 0.5 * (*m + s));
        flux.axpy(-1.0, &scale_by_sigma(g, &mid, mob));
    }
    finish(state, advance(rho, &flux), dt, policy)
}

/// Dispatches on the configured scheme.
pub fn step(
    state: &StateField,
    params: &SolverParams,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    noise: &NoiseField,
    inc: &NoiseIncrement,
) -> Result<(StateField, StepReport)> {
    match params.scheme {
        Scheme::ItoEm => step_ito(state, coeffs, mob, noise, inc, params.theta, params.nonneg_policy),
        Scheme::StratHeun => step_strat_heun(state, coeffs, mob, noise, inc, params.nonneg_policy),
    }
}

/// Snapshots and diagnostics of one realization.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub key: StreamKey,
    pub snapshots: Vec<StateField>,
    pub records: Vec<DiagnosticsRecord>,
    pub under_resolved_steps: u64,
    /// Initial mass, the reference for the mass ledger.
    pub initial_mass: f64,
}

impl Trajectory {
    pub fn last(&self) -> &StateField {
        self.snapshots.last().expect("trajectory holds at least the initial state")
    }
}

/// Integrates from `rho0` to the horizon, recording every `cadence` steps
/// and at the final time. Band masses `q` are accumulated at every step for
/// each `β` in `bands`.
pub fn run_path(
    rho0: &CellField,
    params: &SolverParams,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    noise: &NoiseField,
    key: StreamKey,
    bands: &[f64],
) -> Result<Trajectory> {
    run_path_with(rho0, params, coeffs, mob, noise, key, bands, |_, _| Ok(()))
}

/// As [`run_path`], calling `observe` after every accepted step.
#[allow(clippy::too_many_arguments)]
pub fn run_path_with(
    rho0: &CellField,
    params: &SolverParams,
    coeffs: &CoefficientSet,
    mob: &dyn Mobility,
    noise: &NoiseField,
    key: StreamKey,
    bands: &[f64],
    mut observe: impl FnMut(&StateField, &StepReport) -> Result<()>,
) -> Result<Trajectory> {
    params.validate()?;
    if rho0.values.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Domain("initial density must be finite and nonnegative".into()));
    }
    let theta = match params.scheme {
        Scheme::ItoEm => params.theta,
        Scheme::StratHeun => 0.5,
    };
    check_stability(params.dt, stability_bound(rho0.grid(), coeffs, mob, params.stability_theta(), noise.xi1()))
        .map_err(|e| {
            log::error!("{e} (θ = {theta})");
            e
        })?;

    let volume = rho0.grid().volume();
    let initial_mass = rho0.integral();
    let mut bands_acc = BandAccumulator::new(bands);
    let mut state = StateField::new(rho0.clone());
    let policy = params.nonneg_policy;
    let reference = |s: &StateField| match policy {
        NonnegPolicy::ClipRenormalize => initial_mass / volume,
        NonnegPolicy::ClipOnly => (initial_mass + s.cumulative_clipped_mass) / volume,
    };
    let mut traj = Trajectory {
        key,
        snapshots: vec![state.clone()],
        records: vec![compute_record(&state, coeffs, reference(&state), &bands_acc)?],
        under_resolved_steps: 0,
        initial_mass,
    };

    let nsteps = params.num_steps();
    for k in 0..nsteps {
        let t_next = if k + 1 == nsteps { params.horizon } else { (k + 1) as f64 * params.dt };
        let dt = t_next - state.t;
        let inc = sample_increments(noise, dt, key, k)?;
        if !bands_acc.is_empty() {
            bands_acc.accumulate(&state.rho, coeffs, dt);
        }
        let (mut next, report) = step(&state, params, coeffs, mob, noise, &inc)?;
        next.t = t_next;
        if report.under_resolved {
            traj.under_resolved_steps += 1;
            log::debug!("under-resolved step {} at t = {}: clipped {:e}", next.step, next.t, report.clipped);
        }
        observe(&next, &report)?;
        state = next;
        if (k + 1) % params.cadence as u64 == 0 || k + 1 == nsteps {
            traj.records.push(compute_record(&state, coeffs, reference(&state), &bands_acc)?);
            traj.snapshots.push(state.clone());
        }
    }
    if traj.under_resolved_steps > 0 {
        log::warn!(
            "stream {}: {} under-resolved steps (clipping above {}% of positive mass)",
            key.stream,
            traj.under_resolved_steps,
            100.0 * UNDER_RESOLVED_FRACTION
        );
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffs::{ConstantMobility, Phi, Preset, RegularizedSqrt};
    use crate::noise::NoiseSpec;
    use approx::assert_relative_eq;

    fn setup(cells: usize, preset: Preset, spec: NoiseSpec) -> (Grid, CoefficientSet, NoiseField) {
        let g = Grid::new(&[1.0], &[cells]).unwrap();
        let c = CoefficientSet::from_preset(&g, preset, Phi::Identity).unwrap();
        let nf = NoiseField::build(&spec, &g, &c).unwrap();
        (g, c, nf)
    }

    #[test]
    fn heat_stencil_by_hand() {
        let (g, c, nf) = setup(3, Preset::Identity, NoiseSpec::none());
        let rs = RegularizedSqrt::new(4).unwrap();
        let h = g.spacing(0);
        let dt = 0.2 * h * h;
        let s = StateField::new(CellField::from_values(&g, vec![0.0, 1.0, 0.0]).unwrap());
        let inc = NoiseIncrement::zero(&nf, dt);
        let (next, _) = step_ito(&s, &c, &rs, &nf, &inc, 0.5, NonnegPolicy::ClipRenormalize).unwrap();
        let r = dt / (h * h);
        assert_relative_eq!(next.rho.values[0], r, epsilon = 1e-15);
        assert_relative_eq!(next.rho.values[1], 1.0 - 2.0 * r, epsilon = 1e-15);
        assert_relative_eq!(next.rho.values[2], r, epsilon = 1e-15);
    }

    #[test]
    fn constant_state_is_stationary() {
        let (g, c, nf) = setup(8, Preset::Diag(1.3, 1.0), NoiseSpec::none());
        let rs = RegularizedSqrt::new(16).unwrap();
        let s = StateField::new(CellField::constant(&g, 0.7));
        let inc = NoiseIncrement::zero(&nf, 1e-3);
        let (next, _) = step_ito(&s, &c, &rs, &nf, &inc, 0.5, NonnegPolicy::ClipRenormalize).unwrap();
        assert_eq!(next.rho.values, s.rho.values);
    }

    #[test]
    fn correction_coefficients_at_half() {
        let xi1 = 0.37;
        assert_eq!(correction_coefficients(0.5, xi1), (xi1 / 2.0, xi1 / 2.0));
        assert_eq!(correction_coefficients(0.0, xi1), (0.0, 0.0));
        assert_eq!(correction_coefficients(1.0, xi1), (xi1, xi1));
    }

    #[test]
    fn correction_flux_face_by_hand() {
        // two cells, a = 1: flux = ⟨ξ⟩₁/2·σ'(ρ̄)²·(ρ₁−ρ₀)/h
        let (g, c, _) = setup(2, Preset::Identity, NoiseSpec::none());
        let rs = RegularizedSqrt::new(4).unwrap();
        let rho = CellField::from_values(&g, vec![0.5, 1.5]).unwrap();
        let xi1 = 0.2;
        let f = correction_flux(&rho, &c, &rs, 0.5, xi1);
        let sp = 1.0 / (2.0 * (1.0f64 + 0.25).sqrt());
        assert_relative_eq!(f.values[0][0], xi1 / 2.0 * sp * sp * 2.0, epsilon = 1e-15);
    }

    #[test]
    fn zero_noise_independent_of_theta_and_n() {
        let (g, c, nf) = setup(16, Preset::Identity, NoiseSpec::single(0.0, &[1]));
        let rho = CellField::from_fn(&g, |x| 1.0 + 0.5 * (3.0 * x[0]).cos());
        let s = StateField::new(rho);
        let h = g.spacing(0);
        let inc = sample_increments(&nf, 0.1 * h * h, StreamKey::new(1, 0), 0).unwrap();
        let mut outs = Vec::new();
        for n in [4, 64] {
            for theta in [0.0, 0.5, 1.0] {
                let rs = RegularizedSqrt::new(n).unwrap();
                outs.push(step_ito(&s, &c, &rs, &nf, &inc, theta, NonnegPolicy::ClipRenormalize).unwrap().0.rho);
            }
        }
        assert!(outs.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn heun_zero_noise_is_deterministic_heun() {
        let (g, c, nf) = setup(10, Preset::Identity, NoiseSpec::none());
        let rs = RegularizedSqrt::new(4).unwrap();
        let h = g.spacing(0);
        let dt = 0.2 * h * h;
        let rho = CellField::from_fn(&g, |x| 1.0 + x[0] * x[0]);
        let s = StateField::new(rho.clone());
        let inc = NoiseIncrement::zero(&nf, dt);
        let (next, _) = step_strat_heun(&s, &c, &rs, &nf, &inc, NonnegPolicy::ClipRenormalize).unwrap();
        // u* = u + dt L u, u' = u + dt/2 (L u + L u*)
        let lap = |u: &CellField| divergence(&flux_a_grad(&c.a_faces, u));
        let lu = lap(&rho);
        let mut star = rho.clone();
        star.values.iter_mut().zip(&lu.values).for_each(|(a, b)| *a += dt * b);
        let ls = lap(&star);
        for i in 0..rho.len() {
            let expected = rho.values[i] + 0.5 * dt * (lu.values[i] + ls.values[i]);
            assert_relative_eq!(next.rho.values[i], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn additive_noise_heun_equals_em() {
        let (g, c, nf) = setup(12, Preset::Identity, NoiseSpec::single(0.4, &[1]));
        let mob = ConstantMobility(0.3);
        let h = g.spacing(0);
        let dt = 0.1 * h * h;
        let rho = CellField::from_fn(&g, |x| 2.0 + (4.0 * x[0]).sin());
        let s = StateField::new(rho.clone());
        let inc = sample_increments(&nf, dt, StreamKey::new(9, 0), 0).unwrap();
        let (heun, _) = step_strat_heun(&s, &c, &mob, &nf, &inc, NonnegPolicy::ClipOnly).unwrap();
        let (em, _) = step_ito(&s, &c, &mob, &nf, &inc, 0.5, NonnegPolicy::ClipOnly).unwrap();
        // σ' = 0: no corrections, identical stochastic flux; the schemes
        // differ only by the Heun averaging of the deterministic flux
        let lap = |u: &CellField| divergence(&flux_a_grad(&c.a_faces, u));
        let mut sg = nf.face_increment(&inc);
        sg.scale(0.3);
        let noise_div = divergence(&sg);
        let l_rho = lap(&rho);
        let ll_rho = lap(&l_rho);
        let l_noise = lap(&noise_div);
        for i in 0..rho.len() {
            let expected = em.rho.values[i] + 0.5 * dt * (dt * ll_rho.values[i] - l_noise.values[i]);
            assert_relative_eq!(heun.rho.values[i], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn mass_is_conserved_before_clipping() {
        let g = Grid::new(&[1.0, 1.0], &[12, 10]).unwrap();
        let preset = Preset::parse("smooth-inhomogeneous", 0.3, &[1.0, 1.0]).unwrap();
        let c = CoefficientSet::from_preset(&g, preset, Phi::Saturating { k: 0.5 }).unwrap();
        let nf = NoiseField::build(&NoiseSpec::single(0.5, &[1, 1]), &g, &c).unwrap();
        let rs = RegularizedSqrt::new(8).unwrap();
        let mut s = StateField::new(CellField::from_fn(&g, |x| 0.5 + x[0] * x[1]));
        let m0 = s.rho.integral();
        let dt = 0.5 * stability_bound(&g, &c, &rs, 0.5, nf.xi1());
        for k in 0..200 {
            let inc = sample_increments(&nf, dt, StreamKey::new(4, 0), k).unwrap();
            let (next, report) = step_ito(&s, &c, &rs, &nf, &inc, 0.5, NonnegPolicy::ClipRenormalize).unwrap();
            assert!((report.pre_clip_mass - m0).abs() <= 1e-13 * m0);
            s = next;
        }
        assert!((s.rho.integral() - m0).abs() <= 1e-12 * m0);
    }

    #[test]
    fn nonneg_examples() {
        let g = Grid::new(&[2.0], &[2]).unwrap();
        let mut f = CellField::from_values(&g, vec![0.3, 1.0]).unwrap();
        let out = apply_nonneg(&mut f, NonnegPolicy::ClipRenormalize);
        assert_eq!(out.clipped, 0.0);
        assert_eq!(f.values, vec![0.3, 1.0]);

        let mut f = CellField::from_values(&g, vec![-0.1, 1.1]).unwrap();
        let out = apply_nonneg(&mut f, NonnegPolicy::ClipRenormalize);
        assert_relative_eq!(out.clipped, 0.1, epsilon = 1e-15);
        assert_eq!(f.values[0], 0.0);
        assert_relative_eq!(f.values[1], 1.0, epsilon = 1e-15);
        assert!(out.under_resolved);

        let mut f = CellField::from_values(&g, vec![-1.0, 0.5]).unwrap();
        let out = apply_nonneg(&mut f, NonnegPolicy::ClipOnly);
        assert_eq!(f.values, vec![0.0, 0.5]);
        assert_eq!(out.clipped, 1.0);
        assert!(out.under_resolved);
    }

    #[test]
    fn stability_bound_enforced() {
        let (g, c, nf) = setup(16, Preset::Identity, NoiseSpec::single(0.5, &[1]));
        let rs = RegularizedSqrt::new(4).unwrap();
        let bound = stability_bound(&g, &c, &rs, 0.5, nf.xi1());
        let h = g.spacing(0);
        assert_relative_eq!(bound, 0.25 * h * h / (1.0 + 0.25 * 1.0), epsilon = 1e-15);
        let s = StateField::new(CellField::constant(&g, 1.0));
        let inc = NoiseIncrement::zero(&nf, 2.0 * bound);
        assert!(matches!(
            step_ito(&s, &c, &rs, &nf, &inc, 0.5, NonnegPolicy::ClipRenormalize),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn nan_is_reported() {
        let (g, c, nf) = setup(4, Preset::Identity, NoiseSpec::none());
        let rs = RegularizedSqrt::new(4).unwrap();
        let mut rho = CellField::constant(&g, 1.0);
        rho.values[2] = f64::NAN;
        let s = StateField::new(rho);
        let inc = NoiseIncrement::zero(&nf, 1e-4);
        assert!(matches!(
            step_ito(&s, &c, &rs, &nf, &inc, 0.5, NonnegPolicy::ClipRenormalize),
            Err(Error::Numerical { step: 1, .. })
        ));
    }

    fn params(dt: f64, horizon: f64) -> SolverParams {
        SolverParams {
            dt,
            theta: 0.5,
            scheme: Scheme::ItoEm,
            n: 16,
            nonneg_policy: NonnegPolicy::ClipRenormalize,
            horizon,
            cadence: 5,
        }
    }

    #[test]
    fn zero_horizon_keeps_initial_state() {
        let (g, c, nf) = setup(8, Preset::Identity, NoiseSpec::single(0.2, &[1]));
        let rs = RegularizedSqrt::new(16).unwrap();
        let rho0 = CellField::constant(&g, 1.0);
        let tr = run_path(&rho0, &params(1e-4, 0.0), &c, &rs, &nf, StreamKey::new(1, 0), &[]).unwrap();
        assert_eq!(tr.snapshots.len(), 1);
        assert_eq!(tr.records.len(), 1);
        assert_eq!(tr.snapshots[0].rho, rho0);
    }

    #[test]
    fn run_path_is_reproducible() {
        let (g, c, nf) = setup(32, Preset::Identity, NoiseSpec::single(0.3, &[1]));
        let rs = RegularizedSqrt::new(16).unwrap();
        let rho0 = CellField::from_fn(&g, |x| 1.0 + 0.5 * (6.0 * x[0]).cos());
        let p = params(1e-4, 0.0123);
        let a = run_path(&rho0, &p, &c, &rs, &nf, StreamKey::new(3, 1), &[0.1]).unwrap();
        let b = run_path(&rho0, &p, &c, &rs, &nf, StreamKey::new(3, 1), &[0.1]).unwrap();
        let d = run_path(&rho0, &p, &c, &rs, &nf, StreamKey::new(3, 2), &[0.1]).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_ne!(a.last().rho, d.last().rho);
        assert_eq!(a.last().t, 0.0123);
        let ts: Vec<f64> = a.snapshots.iter().map(|s| s.t).collect();
        assert!(ts.windows(2).all(|w| w[1] > w[0]));
    }
}
