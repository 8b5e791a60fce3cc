//! Configuration, ensembles, the coupled-path experiment, and persistence.
//!
//! Output directory layout of a run:
//!
//! - `metadata.json`: configuration hash, seed, code and format versions,
//!   completion status and failed realizations
//! - `config.toml`: the resolved configuration
//! - `diag_NNNN.csv`: one row per recorded time for realization `NNNN`
//! - `traj_NNNN.dkf`: density snapshots of realization `NNNN` (DKF1 frames)
//! - `ensemble.csv`: mean and standard error of every diagnostics column
//!
//! Nothing time-dependent is written, so a rerun with the same
//! configuration and seed reproduces every byte.

pub mod config;
pub mod io;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::coeffs::{CoefficientSet, MatrixField, RegularizedSqrt};
use crate::diagnostics::{
    compute_record, h1_seminorm, holder_h1, holder_hminus1, time_avg_field, BandAccumulator, DiagnosticsRecord,
};
use crate::grid::{CellField, Grid};
use crate::noise::NoiseField;
use crate::particles::{
    block_z_scores, empirical_density, ks_critical_1pct, ks_uniform, run_particles, ParticleEnsemble,
};
use crate::rng::StreamKey;
use crate::solver::{run_path, SolverParams, StateField, Trajectory};
use crate::{Error, Result};

pub use config::{InitialSpec, Profile, RunConfig, FORMAT_VERSION};
use io::{FailedRealization, Frame, Metadata, Table};

/// Offset separating the streams of the second path when noise is not shared.
const UNSHARED_STREAM_OFFSET: u64 = 1 << 32;

/// A configuration turned into ready-to-run objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub grid: Grid,
    pub coeffs: CoefficientSet,
    pub sigma: RegularizedSqrt,
    pub noise: NoiseField,
    pub params: SolverParams,
    pub rho0: CellField,
    pub bands: Vec<f64>,
    pub seed: u64,
    fail: Vec<u64>,
}

impl Experiment {
    pub fn from_config(cfg: &RunConfig) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.build_grid()?;
        let field: Arc<dyn MatrixField> = Arc::new(cfg.preset()?);
        let coeffs = CoefficientSet::new(&grid, field, cfg.coefficients.phi)?;
        Self::assemble(cfg, grid, coeffs)
    }

    /// As [`Experiment::from_config`] with a caller-supplied matrix field.
    pub fn with_field(cfg: &RunConfig, field: Arc<dyn MatrixField>) -> Result<Self> {
        cfg.validate()?;
        let grid = cfg.build_grid()?;
        let coeffs = CoefficientSet::new(&grid, field, cfg.coefficients.phi)?;
        Self::assemble(cfg, grid, coeffs)
    }

    fn assemble(cfg: &RunConfig, grid: Grid, coeffs: CoefficientSet) -> Result<Self> {
        let sigma = RegularizedSqrt::new(cfg.solver.n)?;
        let noise = NoiseField::build(&cfg.noise, &grid, &coeffs)?;
        let rho0 = cfg.initial.build(&grid)?;
        crate::solver::check_params(&cfg.solver, &grid, &coeffs, &sigma, noise.xi1())?;
        Ok(Experiment {
            grid,
            coeffs,
            sigma,
            noise,
            params: cfg.solver.clone(),
            rho0,
            bands: cfg.diagnostics.bands.clone(),
            seed: cfg.seed,
            fail: cfg.debug.fail_realizations.clone(),
        })
    }

    pub fn key(&self, realization: u64) -> StreamKey {
        StreamKey::new(self.seed, realization)
    }

    /// One realization from the configured initial datum.
    pub fn run_realization(&self, realization: u64) -> Result<Trajectory> {
        self.run_from(&self.rho0, self.key(realization), realization)
    }

    pub fn run_from(&self, rho0: &CellField, key: StreamKey, realization: u64) -> Result<Trajectory> {
        if self.fail.contains(&realization) {
            return Err(Error::Numerical {
                step: 0,
                t: 0.0,
                message: format!("injected failure in realization {realization}"),
            });
        }
        run_path(rho0, &self.params, &self.coeffs, &self.sigma, &self.noise, key, &self.bands)
    }
}

/// Runs `f` on a pool of `threads` workers (all cores if `None`).
pub fn with_pool<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Mean and standard error of every diagnostics column at every recorded time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleStats {
    pub header: Vec<String>,
    pub mean: Vec<Vec<f64>>,
    pub se: Vec<Vec<f64>>,
    pub survivors: usize,
}

impl EnsembleStats {
    /// Aggregates in realization order; records must share their time grid.
    pub fn from_records(runs: &[&[DiagnosticsRecord]], bands: &[f64]) -> Result<Self> {
        let header = io::csv_header(bands);
        let Some(first) = runs.first() else {
            return Ok(EnsembleStats { header, mean: Vec::new(), se: Vec::new(), survivors: 0 });
        };
        let rows = first.len();
        if runs.iter().any(|r| r.len() != rows) {
            return Err(Error::Format("realizations recorded different numbers of samples".into()));
        }
        let r = runs.len() as f64;
        let mut mean = Vec::with_capacity(rows);
        let mut se = Vec::with_capacity(rows);
        for i in 0..rows {
            let table: Vec<Vec<f64>> = runs.iter().map(|run| io::record_row(&run[i])).collect();
            let cols = table[0].len();
            let m: Vec<f64> = (0..cols).map(|c| table.iter().map(|row| row[c]).sum::<f64>() / r).collect();
            let s: Vec<f64> = (0..cols)
                .map(|c| {
                    if runs.len() < 2 {
                        0.0
                    } else {
                        let var = table.iter().map(|row| (row[c] - m[c]).powi(2)).sum::<f64>() / (r - 1.0);
                        (var / r).sqrt()
                    }
                })
                .collect();
            mean.push(m);
            se.push(s);
        }
        Ok(EnsembleStats { header, mean, se, survivors: runs.len() })
    }

    pub fn column(&self, name: &str) -> Option<(Vec<f64>, Vec<f64>)> {
        let c = self.header.iter().position(|h| h == name)?;
        Some((self.mean.iter().map(|r| r[c]).collect(), self.se.iter().map(|r| r[c]).collect()))
    }

    pub fn to_table(&self) -> Table {
        let mut header = Vec::new();
        for h in &self.header {
            header.push(format!("{h}_mean"));
            header.push(format!("{h}_se"));
        }
        let rows = self
            .mean
            .iter()
            .zip(&self.se)
            .map(|(m, s)| m.iter().zip(s).flat_map(|(a, b)| [*a, *b]).collect())
            .collect();
        Table { header, rows }
    }
}

/// Per-realization outcomes, in realization order, with their aggregate.
#[derive(Debug)]
pub struct EnsembleResult {
    pub runs: Vec<(u64, Result<Trajectory>)>,
    pub stats: EnsembleStats,
}

impl EnsembleResult {
    pub fn survivors(&self) -> impl Iterator<Item = &Trajectory> {
        self.runs.iter().filter_map(|(_, r)| r.as_ref().ok())
    }

    pub fn failures(&self) -> Vec<FailedRealization> {
        self.runs
            .iter()
            .filter_map(|(i, r)| r.as_ref().err().map(|e| FailedRealization { realization: *i, error: e.to_string() }))
            .collect()
    }
}

/// Runs realizations `0..count` in parallel and aggregates the survivors.
pub fn ensemble(exp: &Experiment, count: usize) -> Result<EnsembleResult> {
    let runs: Vec<(u64, Result<Trajectory>)> =
        (0..count as u64).into_par_iter().map(|r| (r, exp.run_realization(r))).collect();
    for (i, r) in &runs {
        if let Err(e) = r {
            log::error!("realization {i} failed: {e}");
        }
    }
    let records: Vec<&[DiagnosticsRecord]> =
        runs.iter().filter_map(|(_, r)| r.as_ref().ok().map(|t| t.records.as_slice())).collect();
    let stats = EnsembleStats::from_records(&records, &exp.bands)?;
    log::info!("aggregated {} of {count} realizations", stats.survivors);
    Ok(EnsembleResult { runs, stats })
}

/// What a command wrote and whether every realization succeeded.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub out: PathBuf,
    pub metadata: Metadata,
}

impl RunSummary {
    pub fn complete(&self) -> bool {
        self.metadata.failed.is_empty()
    }
}

fn metadata(cfg: &RunConfig, command: &str, failed: Vec<FailedRealization>, summary: serde_json::Value) -> Metadata {
    Metadata {
        format_version: FORMAT_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        realizations: cfg.realizations,
        status: if failed.is_empty() { "complete" } else { "partial" }.to_string(),
        failed,
        summary,
    }
}

fn prepare_dir(cfg: &RunConfig, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    Ok(())
}

pub fn trajectory_frames(traj: &Trajectory) -> Vec<Frame> {
    traj.snapshots.iter().map(|s| Frame::from_field(&s.rho, s.t)).collect()
}

/// `simulate`: runs the ensemble and writes every artifact to `out`.
pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let exp = Experiment::from_config(cfg)?;
    prepare_dir(cfg, out)?;
    let result = ensemble(&exp, cfg.realizations)?;
    for (i, run) in &result.runs {
        if let Ok(traj) = run {
            Table::from_records(&traj.records, &exp.bands).write(&out.join(format!("diag_{i:04}.csv")))?;
            if cfg.diagnostics.store_fields {
                io::write_frames(&out.join(format!("traj_{i:04}.dkf")), &trajectory_frames(traj))?;
            }
        }
    }
    result.stats.to_table().write(&out.join("ensemble.csv"))?;
    let under: u64 = result.survivors().map(|t| t.under_resolved_steps).sum();
    let summary = serde_json::json!({
        "survivors": result.stats.survivors,
        "under_resolved_steps": under,
        "xi1": exp.noise.xi1(),
        "sup_div_s_xi": exp.noise.sup_div_s_xi(),
        "lambda_ell": exp.coeffs.lambda_ell,
        "big_lambda_ell": exp.coeffs.big_lambda_ell,
    });
    let meta = metadata(cfg, "simulate", result.failures(), summary);
    io::write_json(&out.join("metadata.json"), &meta)?;
    Ok(RunSummary { out: out.to_path_buf(), metadata: meta })
}

/// Distance series of one coupled pair.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairResult {
    pub realization: u64,
    pub times: Vec<f64>,
    pub distance: Vec<f64>,
    /// `max_t d(t) / d(0)`
    pub ratio: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractionReport {
    pub theta: f64,
    pub slack: f64,
    pub pairs: Vec<PairResult>,
    pub pass_rate: f64,
    pub median_ratio: f64,
    /// Pass rate at least 95%; only meaningful as an assertion for `θ ≥ ½`.
    pub verdict: bool,
    pub asserted: bool,
}

/// Required fraction of contracting pairs.
pub const CONTRACTION_PASS_RATE: f64 = 0.95;

/// `‖ρ₁(t) − ρ₂(t)‖_{L¹}` along two paths driven by the same increments.
pub fn coupled_pair(exp: &Experiment, rho_a: &CellField, rho_b: &CellField, realization: u64, shared: bool, slack: f64) -> Result<PairResult> {
    let key_a = exp.key(realization);
    let key_b = if shared { key_a } else { exp.key(realization + UNSHARED_STREAM_OFFSET) };
    let a = exp.run_from(rho_a, key_a, realization)?;
    let b = exp.run_from(rho_b, key_b, realization)?;
    let times: Vec<f64> = a.snapshots.iter().map(|s| s.t).collect();
    let distance: Vec<f64> = a.snapshots.iter().zip(&b.snapshots).map(|(x, y)| x.rho.l1_distance(&y.rho)).collect();
    let d0 = distance[0];
    let dmax = distance.iter().copied().fold(0.0, f64::max);
    let ratio = if d0 > 0.0 { dmax / d0 } else if dmax == 0.0 { 1.0 } else { f64::INFINITY };
    let pass = dmax <= d0 * (1.0 + slack);
    Ok(PairResult { realization, times, distance, ratio, pass })
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs `pairs` coupled pairs from the configured data in parallel.
pub fn contraction_experiment(cfg: &RunConfig, pairs: usize) -> Result<(ContractionReport, Vec<FailedRealization>)> {
    let coupling = cfg
        .coupling
        .as_ref()
        .ok_or_else(|| Error::Config("the coupling experiment needs a [coupling] block".into()))?;
    let exp = Experiment::from_config(cfg)?;
    let rho_b = coupling.second.build(&exp.grid)?;
    let results: Vec<(u64, Result<PairResult>)> = (0..pairs as u64)
        .into_par_iter()
        .map(|r| (r, coupled_pair(&exp, &exp.rho0, &rho_b, r, coupling.shared_noise, coupling.slack)))
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (r, res) in results {
        match res {
            Ok(p) => ok.push(p),
            Err(e) => failed.push(FailedRealization { realization: r, error: e.to_string() }),
        }
    }
    let passed = ok.iter().filter(|p| p.pass).count();
    let pass_rate = if ok.is_empty() { 0.0 } else { passed as f64 / ok.len() as f64 };
    let ratios: Vec<f64> = ok.iter().map(|p| p.ratio).collect();
    let theta = match exp.params.scheme {
        crate::solver::Scheme::ItoEm => exp.params.theta,
        crate::solver::Scheme::StratHeun => 0.5,
    };
    let report = ContractionReport {
        theta,
        slack: coupling.slack,
        median_ratio: median(&ratios),
        pairs: ok,
        pass_rate,
        verdict: pass_rate >= CONTRACTION_PASS_RATE,
        asserted: theta >= 0.5,
    };
    Ok((report, failed))
}

/// `couple`: writes `contraction.csv` (one distance column per pair) and the
/// report summary into the metadata.
pub fn couple(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    prepare_dir(cfg, out)?;
    let (report, failed) = contraction_experiment(cfg, cfg.realizations)?;
    if let Some(first) = report.pairs.first() {
        let mut header = vec!["t".to_string()];
        header.extend(report.pairs.iter().map(|p| format!("d_{:04}", p.realization)));
        let rows = (0..first.times.len())
            .map(|i| std::iter::once(first.times[i]).chain(report.pairs.iter().map(|p| p.distance[i])).collect())
            .collect();
        Table { header, rows }.write(&out.join("contraction.csv"))?;
    }
    let summary = serde_json::json!({
        "theta": report.theta,
        "slack": report.slack,
        "pass_rate": report.pass_rate,
        "median_ratio": report.median_ratio,
        "verdict": report.verdict,
        "asserted": report.asserted,
        "ratios": report.pairs.iter().map(|p| p.ratio).collect::<Vec<_>>(),
    });
    let meta = metadata(cfg, "couple", failed, summary);
    io::write_json(&out.join("metadata.json"), &meta)?;
    Ok(RunSummary { out: out.to_path_buf(), metadata: meta })
}

/// Zero-noise heat benchmark against `m + A cos(πx/L) e^{−π²t/L²}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub cells: Vec<usize>,
    pub dt: Vec<f64>,
    pub max_error: Vec<f64>,
    /// `log₂(e_coarse/e_fine)` for consecutive refinements.
    pub observed_order: Vec<f64>,
    pub horizon: f64,
}

/// Runs the heat benchmark on `[0, 1]` for each cell count with
/// `dt = dt_factor·h²`.
pub fn heat_benchmark(cells: &[usize], dt_factor: f64, horizon: f64, mean: f64, amplitude: f64) -> Result<BenchReport> {
    use crate::coeffs::{Phi, Preset};
    use crate::noise::NoiseSpec;
    use crate::solver::{NonnegPolicy, Scheme};
    use std::f64::consts::PI;

    let mut dts = Vec::new();
    let mut errors = Vec::new();
    for &n in cells {
        let grid = Grid::new(&[1.0], &[n])?;
        let coeffs = CoefficientSet::from_preset(&grid, Preset::Identity, Phi::Identity)?;
        let noise = NoiseField::build(&NoiseSpec::none(), &grid, &coeffs)?;
        let sigma = RegularizedSqrt::new(1)?;
        let h = grid.spacing(0);
        let dt = dt_factor * h * h;
        let params = SolverParams {
            dt,
            theta: 0.5,
            scheme: Scheme::ItoEm,
            n: 1,
            nonneg_policy: NonnegPolicy::ClipRenormalize,
            horizon,
            cadence: usize::MAX,
        };
        let exact = |x: f64, t: f64| mean + amplitude * (PI * x).cos() * (-PI * PI * t).exp();
        let rho0 = CellField::from_fn(&grid, |x| exact(x[0], 0.0));
        let traj = run_path(&rho0, &params, &coeffs, &sigma, &noise, StreamKey::new(0, 0), &[])?;
        let last = traj.last();
        let err = grid
            .cell_centers()
            .iter()
            .zip(&last.rho.values)
            .map(|(x, v)| (v - exact(x[0], last.t)).abs())
            .fold(0.0, f64::max);
        dts.push(dt);
        errors.push(err);
    }
    let observed_order = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(BenchReport { cells: cells.to_vec(), dt: dts, max_error: errors, observed_order, horizon })
}

/// `bench`: the 64/128-cell heat benchmark, written to `bench.json`.
pub fn bench(out: &Path) -> Result<BenchReport> {
    std::fs::create_dir_all(out)?;
    let report = heat_benchmark(&[64, 128], 0.2, 0.1, 1.0, 0.5)?;
    io::write_json(&out.join("bench.json"), &report)?;
    Ok(report)
}

/// Summary of a particle run at its final time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParticleReport {
    pub count: usize,
    pub t: f64,
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub block_z: Vec<f64>,
}

/// `particles`: samples the initial density, runs the reflecting diffusion
/// per realization and writes positions and kernel densities.
pub fn particles(cfg: &RunConfig, out: &Path) -> Result<RunSummary> {
    let pc = cfg
        .particles
        .as_ref()
        .ok_or_else(|| Error::Config("the particle run needs a [particles] block".into()))?;
    let exp = Experiment::from_config(cfg)?;
    prepare_dir(cfg, out)?;
    let horizon = pc.horizon.unwrap_or(cfg.solver.horizon);
    let runs: Vec<(u64, Result<Vec<ParticleEnsemble>>)> = (0..cfg.realizations as u64)
        .into_par_iter()
        .map(|r| {
            let key = exp.key(r);
            let res = ParticleEnsemble::from_density(&exp.rho0, pc.count, key)
                .and_then(|e| run_particles(&e, pc.dt, horizon, pc.cadence, &exp.coeffs, key));
            (r, res)
        })
        .collect();
    let mut failed = Vec::new();
    let mut reports = Vec::new();
    for (r, res) in runs {
        match res {
            Ok(snaps) => {
                let frames: Vec<Frame> = snaps.iter().map(Frame::from_particles).collect();
                io::write_frames(&out.join(format!("particles_{r:04}.dkf")), &frames)?;
                let dens = snaps
                    .iter()
                    .map(|s| empirical_density(s, pc.bandwidth, &exp.grid).map(|d| Frame::from_field(&d, s.t)))
                    .collect::<Result<Vec<_>>>()?;
                io::write_frames(&out.join(format!("density_{r:04}.dkf")), &dens)?;
                let last = snaps.last().expect("initial snapshot present");
                reports.push(ParticleReport {
                    count: last.len(),
                    t: last.t,
                    ks_statistic: ks_uniform(last, 0),
                    ks_critical_1pct: ks_critical_1pct(last.len()),
                    block_z: block_z_scores(last, 4),
                });
            }
            Err(e) => failed.push(FailedRealization { realization: r, error: e.to_string() }),
        }
    }
    let summary = serde_json::to_value(&reports).map_err(|e| Error::Format(e.to_string()))?;
    let meta = metadata(cfg, "particles", failed, summary);
    io::write_json(&out.join("metadata.json"), &meta)?;
    Ok(RunSummary { out: out.to_path_buf(), metadata: meta })
}

/// `diagnose`: recomputes the snapshot functionals of every `traj_*.dkf` in
/// `dir`, writing `rediag_NNNN.csv` and `diagnose.json`. Band masses need
/// every step and are not recomputed; the H⁻¹ reference is the mean of
/// each snapshot.
pub fn diagnose(cfg: &RunConfig, dir: &Path, holder_beta: f64) -> Result<serde_json::Value> {
    let exp = Experiment::from_config(cfg)?;
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("traj_") && n.ends_with(".dkf"))
        })
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        let frames = io::read_frames(&path)?;
        let states = frames
            .iter()
            .map(|f| {
                if f.shape != exp.grid.cell_counts() {
                    return Err(Error::Format(format!("{}: frame shape {:?} does not match the grid", path.display(), f.shape)));
                }
                let mut s = StateField::new(CellField::from_values(&exp.grid, f.values.clone())?);
                s.t = f.t;
                Ok(s)
            })
            .collect::<Result<Vec<_>>>()?;
        let empty = BandAccumulator::new(&[]);
        let records = states
            .iter()
            .map(|s| compute_record(s, &exp.coeffs, s.rho.mean(), &empty))
            .collect::<Result<Vec<_>>>()?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("traj").replacen("traj_", "rediag_", 1);
        Table::from_records(&records, &[]).write(&dir.join(format!("{stem}.csv")))?;
        let averaged = time_avg_field(&states, &exp.coeffs, &exp.sigma, exp.noise.xi1());
        let entry = serde_json::json!({
            "file": path.file_name().and_then(|n| n.to_str()),
            "samples": states.len(),
            "time_avg_h1_final": averaged.last().map(|a| a.h1_seminorm),
            "holder_hminus1": if states.len() >= 2 { Some(holder_hminus1(&states, &exp.coeffs, holder_beta)?) } else { None },
            "holder_time_avg_h1": if averaged.len() >= 2 { Some(holder_h1(&averaged, holder_beta)?) } else { None },
            "final_h1_seminorm": states.last().map(|s| h1_seminorm(&s.rho)),
        });
        out.push(entry);
    }
    let value = serde_json::json!({ "beta": holder_beta, "trajectories": out });
    io::write_json(&dir.join("diagnose.json"), &value)?;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(realizations: usize) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            r#"
format_version = 1
seed = 5
realizations = {realizations}
[grid]
extents = [1.0]
cells = [16]
[[noise.modes]]
alpha = 0.2
k = [1]
[solver]
dt = 2e-4
n = 8
horizon = 0.01
cadence = 10
[initial]
profile = "bump"
center = [0.4]
width = 0.15
height = 1.0
base = 0.3
"#
        ))
        .unwrap()
    }

    #[test]
    fn single_realization_aggregate_equals_record() {
        let exp = Experiment::from_config(&cfg(1)).unwrap();
        let res = ensemble(&exp, 1).unwrap();
        let traj = res.survivors().next().unwrap();
        for (i, rec) in traj.records.iter().enumerate() {
            assert_eq!(res.stats.mean[i], io::record_row(rec));
            assert!(res.stats.se[i].iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn injected_failure_is_isolated() {
        let mut c = cfg(4);
        c.debug.fail_realizations = vec![2];
        let exp = Experiment::from_config(&c).unwrap();
        let res = ensemble(&exp, 4).unwrap();
        assert_eq!(res.stats.survivors, 3);
        let f = res.failures();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].realization, 2);
    }

    #[test]
    fn mass_is_deterministic_across_ensemble() {
        let exp = Experiment::from_config(&cfg(6)).unwrap();
        let res = ensemble(&exp, 6).unwrap();
        let (mean, se) = res.stats.column("mass").unwrap();
        let m0 = exp.rho0.integral();
        for (m, s) in mean.iter().zip(&se) {
            assert!((m - m0).abs() <= 1e-13 * m0);
            assert!(*s <= 1e-14 * m0);
        }
    }

    #[test]
    fn identical_data_never_separate() {
        let mut c = cfg(1);
        c.coupling = Some(config::CouplingConfig { second: c.initial.clone(), shared_noise: true, slack: 0.05 });
        let (report, failed) = contraction_experiment(&c, 3).unwrap();
        assert!(failed.is_empty());
        for p in &report.pairs {
            assert!(p.distance.iter().all(|&d| d == 0.0));
        }
    }
}
