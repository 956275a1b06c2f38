//! Reproducible experiment runners.
//!
//! Every run derives its random seeds from the master seed, the scenario
//! name and the repetition index (see [`run_seed`]), so results do not
//! depend on how repetitions are scheduled across threads. Repetitions run
//! in parallel and are collected in index order.

use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path as FsPath, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crate::array::{
    dft_beam_bank, direction_to_orientation, wrap_angle, BeamWeights, Direction, ProbeSetup, UraGeometry,
};
use crate::calib::{assemble_baseline, solve_baseline, solve_multigain, AcquisitionOrder, CalibrationTensor};
use crate::config::{ScenarioConfig, ScenarioKind};
use crate::eadf::{compute_eadf, sample_beam_pattern, Eadf, Gate};
use crate::error::Result;
use crate::estimator::{beamforming_aps, estimate, per_path_peak_reduction, Apdp, StopReason};
use crate::impairments::{
    add_calibration_noise, apply_phase_noise, calibration_schedule, generate_misaligned_calibration, pattern_from_calibration,
    PhaseNoiseModel,
};
use crate::synth::{
    add_noise, synthesize_specular, table1_pathset, two_path_geometry, two_pole_geometry, Dims, FrequencyPlan, Observation, Path,
    PathSet, SystemResponse,
};
use crate::tables::{PathRow, PathTable};
use crate::tensor::Tensor;

/// Paths of the ten-path reference channel that enter the recovery metrics; the last,
/// weakest path is excluded.
pub const SCORED_PATHS: usize = 9;

fn digest_seed(parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// First eight bytes (little-endian) of SHA-256 over the length-prefixed
/// master seed, scenario name and repetition index.
pub fn run_seed(master: u64, scenario: &str, repetition: u64) -> u64 {
    digest_seed(&[&master.to_le_bytes(), scenario.as_bytes(), &repetition.to_le_bytes()])
}

/// Independent stream for one purpose within a run.
pub fn sub_seed(seed: u64, label: &str) -> u64 {
    digest_seed(&[&seed.to_le_bytes(), label.as_bytes()])
}

/// Mildly frequency-selective response shared by all synthetic sweeps:
/// 10 % amplitude ripple and a 3 ns cable delay.
pub fn sweep_response(plan: &FrequencyPlan) -> Vec<Complex64> {
    let n = plan.count as f64;
    plan.frequencies()
        .iter()
        .enumerate()
        .map(|(m, f)| {
            let ripple = 1.0 + 0.1 * (2.0 * std::f64::consts::PI * 3.0 * m as f64 / n).sin();
            Complex64::from_polar(ripple, -2.0 * std::f64::consts::PI * (f - plan.carrier_hz) * 3e-9)
        })
        .collect()
}

/// Everything derived from the array and frequency sections.
pub struct Setup {
    pub geom: UraGeometry,
    pub bank: Vec<BeamWeights>,
    pub plan: FrequencyPlan,
    pub sys: SystemResponse,
    /// Plane-wave EADF on the configured pattern grid, ungated.
    pub ideal: Eadf,
}

impl Setup {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        let a = &cfg.array;
        let geom = UraGeometry::half_wavelength(a.n_y, a.n_z, a.carrier_hz)?;
        let bank = dft_beam_bank(&geom, a.beams_y, a.beams_z);
        let plan = FrequencyPlan::new(a.carrier_hz, cfg.frequency.bandwidth_hz, cfg.frequency.count);
        let sys = SystemResponse::flat(&plan);
        let ideal = compute_eadf(&sample_beam_pattern(&geom, &bank, cfg.pattern.n_azimuth, cfg.pattern.n_elevation)?, None)?;
        Ok(Self { geom, bank, plan, sys, ideal })
    }

    pub fn dims(&self, snapshots: usize) -> Dims {
        Dims { n_time: snapshots, ..Dims::new(self.plan.count, self.bank.len(), self.bank.len()) }
    }

    fn probe(&self, cfg: &ScenarioConfig, offset_wavelengths: [f64; 3]) -> ProbeSetup {
        let o = Vector3::from(offset_wavelengths) * self.geom.wavelength;
        ProbeSetup::new(Vector3::new(cfg.impairments.probe_distance_m, 0.0, 0.0), o)
    }

    /// EADF from a simulated turntable calibration at the carrier, with the
    /// configured offset, phase noise, calibration noise and gate.
    pub fn calibrated_eadf(&self, cfg: &ScenarioConfig, offset_wavelengths: [f64; 3], pn: &PhaseNoiseModel, seed: u64) -> Result<Eadf> {
        let (na, ne) = (cfg.pattern.n_azimuth, cfg.pattern.n_elevation);
        let mut probe = self.probe(cfg, offset_wavelengths);
        probe.schedule = calibration_schedule(na, ne);
        let mut cal = generate_misaligned_calibration(&self.geom, &probe, &self.bank, &[self.plan.carrier_hz])?;
        cal = apply_phase_noise(&cal, &pn.with_seed(sub_seed(seed, "phase-noise")))?;
        if let Some(snr) = cfg.impairments.calibration_snr_db {
            cal = add_calibration_noise(&cal, snr, sub_seed(seed, "calibration-noise"));
        }
        let full = compute_eadf(&pattern_from_calibration(&cal, na, ne, 0, 0)?, None)?;
        match cfg.pattern.gate {
            Some([ga, ge]) => {
                let g = full.gate();
                full.gated(Gate::new(ga.min(g.azimuth), ge.min(g.elevation)))
            }
            None => Ok(full),
        }
    }

    fn observe(&self, cfg: &ScenarioConfig, truth: &PathSet, seed: u64) -> Result<Observation> {
        let obs = synthesize_specular(truth, &self.ideal, &self.ideal, &self.sys, &self.plan, self.dims(cfg.channel.snapshots))?;
        Ok(match cfg.channel.snr_db {
            Some(snr) => add_noise(&obs, snr, sub_seed(seed, "channel-noise")),
            None => obs,
        })
    }
}

/// Signed estimate-minus-truth differences; angles in degrees.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathError {
    pub delay_ns: f64,
    pub tx_azimuth_deg: f64,
    pub tx_elevation_deg: f64,
    pub rx_azimuth_deg: f64,
    pub rx_elevation_deg: f64,
    pub power_db: f64,
}

impl PathError {
    pub fn new(est: &Path, truth: &Path) -> Self {
        let d = |a: f64, b: f64| wrap_angle(a - b).to_degrees();
        Self {
            delay_ns: est.delay_ns - truth.delay_ns,
            tx_azimuth_deg: d(est.tx.azimuth, truth.tx.azimuth),
            tx_elevation_deg: d(est.tx.elevation, truth.tx.elevation),
            rx_azimuth_deg: d(est.rx.azimuth, truth.rx.azimuth),
            rx_elevation_deg: d(est.rx.elevation, truth.rx.elevation),
            power_db: est.power_db() - truth.power_db(),
        }
    }

    pub fn max_angle_deg(&self) -> f64 {
        [self.tx_azimuth_deg, self.tx_elevation_deg, self.rx_azimuth_deg, self.rx_elevation_deg]
            .iter()
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Assigns to each true path (in order) the closest unused estimate within
/// one delay bin; closeness weighs one bin of delay like 10° of angle.
pub fn match_paths(truth: &[Path], estimates: &[Path], bin_ns: f64) -> Vec<Option<usize>> {
    let mut used = vec![false; estimates.len()];
    truth
        .iter()
        .map(|t| {
            let score = |p: &Path| {
                let e = PathError::new(p, t);
                e.delay_ns.abs() / bin_ns
                    + (e.tx_azimuth_deg.abs() + e.tx_elevation_deg.abs() + e.rx_azimuth_deg.abs() + e.rx_elevation_deg.abs()) / 10.0
            };
            let best = estimates
                .iter()
                .enumerate()
                .filter(|(i, p)| !used[*i] && (p.delay_ns - t.delay_ns).abs() < bin_ns)
                .min_by(|a, b| score(a.1).total_cmp(&score(b.1)))
                .map(|(i, _)| i);
            if let Some(i) = best {
                used[i] = true;
            }
            best
        })
        .collect()
}

fn apdp_tensor(a: &Apdp, b: &Apdp, c: &Apdp) -> Result<Tensor> {
    let data: Vec<f64> = [a, b, c].iter().flat_map(|x| x.power.iter().copied()).collect();
    Tensor::from_real(vec![("curve".into(), 3), ("delay".into(), a.power.len())], &data)
}

#[derive(Clone, Debug, Serialize)]
pub struct RecoveryRun {
    pub label: String,
    pub repetition: usize,
    pub offset_wavelengths: [f64; 3],
    /// Global APDP peak reduction.
    pub peak_reduction_db: f64,
    /// Reduction within one delay bin of each true path.
    pub path_reduction_db: Vec<f64>,
    /// Mean of `path_reduction_db` over the scored paths.
    pub mean_path_reduction_db: f64,
    /// Per true path; `None` when no estimate lies within one delay bin.
    pub errors: Vec<Option<PathError>>,
    pub stop: StopReason,
    pub sweeps: usize,
    pub estimates: PathTable,
    pub ghosts: PathTable,
}

impl RecoveryRun {
    /// Largest absolute (delay ns, angle deg, power dB) error over the
    /// scored paths, and the number of scored paths without an estimate.
    pub fn worst_scored(&self) -> ([f64; 3], usize) {
        let mut worst = [0.0f64; 3];
        let mut missed = 0;
        for e in self.errors.iter().take(SCORED_PATHS) {
            match e {
                Some(e) => {
                    worst[0] = worst[0].max(e.delay_ns.abs());
                    worst[1] = worst[1].max(e.max_angle_deg());
                    worst[2] = worst[2].max(e.power_db.abs());
                }
                None => missed += 1,
            }
        }
        (worst, missed)
    }
}

fn table1_run(
    setup: &Setup,
    cfg: &ScenarioConfig,
    tx: &Eadf,
    rx: &Eadf,
    seed: u64,
    repetition: usize,
    offset: [f64; 3],
    label: String,
) -> Result<(RecoveryRun, Tensor)> {
    let truth = table1_pathset();
    let obs = setup.observe(cfg, &truth, seed)?;
    let r = estimate(&obs, tx, rx, &setup.sys, &setup.plan, &cfg.estimator)?;
    let bin = setup.plan.delay_bin_ns();
    let delays: Vec<f64> = truth.paths.iter().map(|p| p.delay_ns).collect();
    let path_reduction_db = per_path_peak_reduction(&r.apdp_original, &r.apdp_residual, &delays, bin)?;
    let scored = SCORED_PATHS.min(path_reduction_db.len());
    let mean_path_reduction_db = path_reduction_db[..scored].iter().sum::<f64>() / scored.max(1) as f64;
    let errors = match_paths(&truth.paths, &r.paths.paths, bin)
        .into_iter()
        .zip(&truth.paths)
        .map(|(m, t)| m.map(|i| PathError::new(&r.paths.paths[i], t)))
        .collect();
    let tensor = apdp_tensor(&r.apdp_original, &r.apdp_reconstructed, &r.apdp_residual)?;
    Ok((
        RecoveryRun {
            label,
            repetition,
            offset_wavelengths: offset,
            peak_reduction_db: r.peak_reduction_db,
            path_reduction_db,
            mean_path_reduction_db,
            errors,
            stop: r.stop,
            sweeps: r.refinement.sweeps,
            estimates: PathTable::new(&r.paths, &[])?,
            ghosts: PathTable::new(&r.ghosts, &[])?,
        },
        tensor,
    ))
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub offset_wavelengths: [f64; 3],
    pub mean_peak_reduction_db: f64,
    pub mean_path_reduction_db: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BaselineRun {
    pub repetition: usize,
    pub seed: u64,
    /// Ten largest singular values of the stacked sweeps.
    pub singular_values: Vec<f64>,
    pub sigma_ratio: f64,
    pub k: Complex64,
    /// Relative error of the extracted patterns against the noiseless,
    /// phase-stable sweep at the carrier, after removing a complex scale.
    pub rx_pattern_error: f64,
    pub tx_pattern_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MultigainRun {
    pub repetition: usize,
    pub seed: u64,
    pub outer_iterations: usize,
    pub converged: bool,
    pub objective: Vec<f64>,
    /// Final objective over `‖Y‖²_F`.
    pub relative_objective: f64,
    pub monotone: bool,
    /// Largest pattern phase error after removing a common phase, degrees.
    pub max_phase_error_deg: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoPathRun {
    pub repetition: usize,
    pub truth: PathTable,
    pub estimates: PathTable,
    pub ghosts: PathTable,
    pub los: Option<PathRow>,
    pub reflection: Option<PathRow>,
    pub extra_delay_ns: Option<f64>,
    pub stop: StopReason,
}

#[derive(Clone, Debug, Serialize)]
pub struct TwoPoleRun {
    pub repetition: usize,
    pub separation_deg: f64,
    pub truth_doa_deg: [f64; 2],
    /// DOAs of the two strongest estimates, ascending.
    pub estimated_doa_deg: Vec<f64>,
    /// Both DOAs within a quarter of the separation of distinct truths.
    pub resolved: bool,
    /// APS local maxima as `[DOD, DOA]` in degrees.
    pub aps_peaks_deg: Vec<[f64; 2]>,
    pub estimates: PathTable,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "scenario", rename_all = "kebab-case")]
pub enum ScenarioResults {
    BaselineCalib { runs: Vec<BaselineRun> },
    MultigainCalib { runs: Vec<MultigainRun> },
    MisalignmentSweep { points: Vec<SweepPoint>, runs: Vec<RecoveryRun> },
    PhaseNoiseSweep { mean_peak_reduction_db: f64, mean_path_reduction_db: f64, runs: Vec<RecoveryRun> },
    Table1Recovery { runs: Vec<RecoveryRun> },
    TwoPath { runs: Vec<TwoPathRun> },
    TwoPole { runs: Vec<TwoPoleRun> },
}

impl ScenarioResults {
    /// One line per run or sweep point.
    pub fn summary(&self) -> Vec<String> {
        let recovery = |r: &RecoveryRun| {
            let ([d, a, p], missed) = r.worst_scored();
            format!(
                "{}: peak reduction {:.2} dB, per-path mean {:.2} dB, worst error {d:.3} ns / {a:.3} deg / {p:.3} dB, {missed} missed",
                r.label, r.peak_reduction_db, r.mean_path_reduction_db
            )
        };
        match self {
            Self::BaselineCalib { runs } => runs
                .iter()
                .map(|r| format!("rep{}: sigma1/sigma2 {:.2}, pattern error rx {:.3e} tx {:.3e}", r.repetition, r.sigma_ratio, r.rx_pattern_error, r.tx_pattern_error))
                .collect(),
            Self::MultigainCalib { runs } => runs
                .iter()
                .map(|r| format!("rep{}: {} iterations, relative objective {:.3e}, monotone {}", r.repetition, r.outer_iterations, r.relative_objective, r.monotone))
                .collect(),
            Self::MisalignmentSweep { points, runs } => points
                .iter()
                .map(|p| format!("offset {:?} wavelengths: peak reduction {:.2} dB, per-path mean {:.2} dB", p.offset_wavelengths, p.mean_peak_reduction_db, p.mean_path_reduction_db))
                .chain(runs.iter().map(recovery))
                .collect(),
            Self::PhaseNoiseSweep { mean_peak_reduction_db, mean_path_reduction_db, runs } => {
                let mut v = vec![format!("mean over {} runs: peak reduction {mean_peak_reduction_db:.2} dB, per-path mean {mean_path_reduction_db:.2} dB", runs.len())];
                v.extend(runs.iter().map(recovery));
                v
            }
            Self::Table1Recovery { runs } => runs.iter().map(recovery).collect(),
            Self::TwoPath { runs } => runs
                .iter()
                .map(|r| {
                    let extra = r.extra_delay_ns.map_or("n/a".into(), |d| format!("{d:.3} ns"));
                    format!("rep{}: {} paths, {} ghosts, extra delay {extra}", r.repetition, r.estimates.rows.len(), r.ghosts.rows.len())
                })
                .collect(),
            Self::TwoPole { runs } => runs
                .iter()
                .map(|r| {
                    format!(
                        "rep{} separation {} deg: resolved {}, estimated DOA {:?}, APS peaks {}",
                        r.repetition,
                        r.separation_deg,
                        r.resolved,
                        r.estimated_doa_deg,
                        r.aps_peaks_deg.len()
                    )
                })
                .collect(),
        }
    }
}

/// Results plus the artifacts written next to them.
pub struct ScenarioOutput {
    pub results: ScenarioResults,
    pub tables: Vec<(String, PathTable)>,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutput> {
    cfg.validate()?;
    let setup = Setup::new(cfg)?;
    let name = cfg.scenario.name();
    let seeds: Vec<(usize, u64)> = (0..cfg.repetitions).map(|r| (r, run_seed(cfg.seed, name, r as u64))).collect();
    match cfg.scenario {
        ScenarioKind::BaselineCalib => baseline(&setup, cfg, &seeds),
        ScenarioKind::MultigainCalib => multigain(&setup, cfg, &seeds),
        ScenarioKind::MisalignmentSweep => {
            let jobs: Vec<(usize, u64, [f64; 3])> = cfg
                .impairments
                .offsets_wavelengths
                .iter()
                .flat_map(|&o| seeds.iter().map(move |&(r, s)| (r, s, o)))
                .collect();
            let done = jobs
                .par_iter()
                .map(|&(r, s, o)| {
                    let eadf = setup.calibrated_eadf(cfg, o, &cfg.impairments.phase_noise, s)?;
                    let label = format!("offset-{}-{}-{}-rep{r}", o[0], o[1], o[2]);
                    table1_run(&setup, cfg, &eadf, &eadf, s, r, o, label)
                })
                .collect::<Result<Vec<_>>>()?;
            let points = cfg
                .impairments
                .offsets_wavelengths
                .iter()
                .map(|&o| {
                    let runs: Vec<&RecoveryRun> = done.iter().map(|d| &d.0).filter(|d| d.offset_wavelengths == o).collect();
                    let n = runs.len() as f64;
                    SweepPoint {
                        offset_wavelengths: o,
                        mean_peak_reduction_db: runs.iter().map(|d| d.peak_reduction_db).sum::<f64>() / n,
                        mean_path_reduction_db: runs.iter().map(|d| d.mean_path_reduction_db).sum::<f64>() / n,
                    }
                })
                .collect();
            Ok(recovery_output(done, |runs| ScenarioResults::MisalignmentSweep { points, runs }))
        }
        ScenarioKind::PhaseNoiseSweep => {
            let offset = cfg.impairments.offsets_wavelengths[0];
            let done = seeds
                .par_iter()
                .map(|&(r, s)| {
                    // transmitter and receiver calibrations see independent noise
                    let pn = &cfg.impairments.phase_noise;
                    let tx = setup.calibrated_eadf(cfg, offset, pn, sub_seed(s, "tx"))?;
                    let rx = setup.calibrated_eadf(cfg, offset, pn, sub_seed(s, "rx"))?;
                    table1_run(&setup, cfg, &tx, &rx, s, r, offset, format!("rep{r}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let n = done.len() as f64;
            let mean_peak_reduction_db = done.iter().map(|d| d.0.peak_reduction_db).sum::<f64>() / n;
            let mean_path_reduction_db = done.iter().map(|d| d.0.mean_path_reduction_db).sum::<f64>() / n;
            Ok(recovery_output(done, |runs| ScenarioResults::PhaseNoiseSweep { mean_peak_reduction_db, mean_path_reduction_db, runs }))
        }
        ScenarioKind::Table1Recovery => {
            let done = seeds
                .par_iter()
                .map(|&(r, s)| table1_run(&setup, cfg, &setup.ideal, &setup.ideal, s, r, [0.0; 3], format!("rep{r}")))
                .collect::<Result<Vec<_>>>()?;
            Ok(recovery_output(done, |runs| ScenarioResults::Table1Recovery { runs }))
        }
        ScenarioKind::TwoPath => two_path(&setup, cfg, &seeds),
        ScenarioKind::TwoPole => two_pole(&setup, cfg, &seeds),
    }
}

fn recovery_output(done: Vec<(RecoveryRun, Tensor)>, wrap: impl FnOnce(Vec<RecoveryRun>) -> ScenarioResults) -> ScenarioOutput {
    let mut tables = Vec::new();
    let mut tensors = Vec::new();
    let mut runs = Vec::new();
    for (run, t) in done {
        tables.push((format!("paths-{}", run.label), run.estimates.clone()));
        tensors.push((format!("apdp-{}", run.label), t));
        runs.push(run);
    }
    ScenarioOutput { results: wrap(runs), tables, tensors }
}

/// Full-turn azimuth schedule in the horizontal plane, both ends included.
fn azimuth_schedule(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let az = -std::f64::consts::PI + 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
            direction_to_orientation(Direction::new(az, std::f64::consts::FRAC_PI_2))
        })
        .collect()
}

/// `‖x - c y‖ / ‖x‖` for the best complex `c`.
fn scaled_error(x: &[Complex64], y: &[Complex64]) -> f64 {
    let num: Complex64 = y.iter().zip(x).map(|(a, b)| a.conj() * b).sum();
    let den: f64 = y.iter().map(|a| a.norm_sqr()).sum();
    let c = if den > 0.0 { num / den } else { Complex64::default() };
    let e: f64 = x.iter().zip(y).map(|(a, b)| (a - c * b).norm_sqr()).sum();
    let n: f64 = x.iter().map(|a| a.norm_sqr()).sum();
    (e / n).sqrt()
}

fn baseline(setup: &Setup, cfg: &ScenarioConfig, seeds: &[(usize, u64)]) -> Result<ScenarioOutput> {
    let schedule = azimuth_schedule(cfg.calibration.orientations);
    let freqs = setup.plan.frequencies();
    let g = sweep_response(&setup.plan);
    let offset = cfg.impairments.offsets_wavelengths[0];
    let truth = {
        let mut probe = setup.probe(cfg, offset);
        probe.schedule = schedule.clone();
        generate_misaligned_calibration(&setup.geom, &probe, &setup.bank, &[setup.plan.carrier_hz])?.data
    };
    let sweep = |seed: u64, k: Complex64| -> Result<CalibrationTensor> {
        let mut probe = setup.probe(cfg, offset);
        probe.schedule = schedule.clone();
        let mut c = generate_misaligned_calibration(&setup.geom, &probe, &setup.bank, &freqs)?;
        for block in c.data.chunks_exact_mut(freqs.len()) {
            block.iter_mut().zip(&g).for_each(|(x, gf)| *x *= gf * k);
        }
        c = apply_phase_noise(&c, &cfg.impairments.phase_noise.with_seed(sub_seed(seed, "phase-noise")))?;
        if let Some(snr) = cfg.impairments.calibration_snr_db {
            c = add_calibration_noise(&c, snr, sub_seed(seed, "calibration-noise"));
        }
        Ok(c)
    };
    let done = seeds
        .par_iter()
        .map(|&(r, s)| {
            let rx_sweep = sweep(sub_seed(s, "rx"), Complex64::new(1.0, 0.0))?;
            let tx_sweep = sweep(sub_seed(s, "tx"), Complex64::from_polar(0.9, -1.2))?;
            let (y1, y2) = assemble_baseline(&rx_sweep, &tx_sweep)?;
            let b = solve_baseline(&y1, &y2)?;
            let run = BaselineRun {
                repetition: r,
                seed: s,
                singular_values: b.singular_values.iter().take(10).copied().collect(),
                sigma_ratio: b.sigma_ratio,
                k: b.k,
                rx_pattern_error: scaled_error(&b.b_r, &truth),
                tx_pattern_error: scaled_error(&b.b_t, &truth),
            };
            let axes = vec![("orientation".to_string(), schedule.len()), ("beam".to_string(), setup.bank.len())];
            let tensors = vec![
                (format!("b_r-rep{r}"), Tensor::new(axes.clone(), crate::tensor::ElementType::Complex128, b.b_r)?),
                (format!("b_t-rep{r}"), Tensor::new(axes, crate::tensor::ElementType::Complex128, b.b_t)?),
                (format!("g_f-rep{r}"), Tensor::new(vec![("frequency".into(), freqs.len())], crate::tensor::ElementType::Complex128, b.g_f)?),
            ];
            Ok((run, tensors))
        })
        .collect::<Result<Vec<_>>>()?;
    let (runs, tensors): (Vec<_>, Vec<_>) = done.into_iter().unzip();
    Ok(ScenarioOutput { results: ScenarioResults::BaselineCalib { runs }, tables: Vec::new(), tensors: tensors.into_iter().flatten().collect() })
}

/// Exactly rank-1 multi-gain sweeps: the carrier-frequency pattern times a
/// per-gain frequency response, with per-sweep phase noise.
pub fn multigain_data(setup: &Setup, cfg: &ScenarioConfig, seed: u64) -> Result<(Vec<nalgebra::DMatrix<Complex64>>, Vec<Complex64>)> {
    let schedule = azimuth_schedule(cfg.calibration.orientations);
    let freqs = setup.plan.frequencies();
    let mut probe = setup.probe(cfg, cfg.impairments.offsets_wavelengths[0]);
    probe.schedule = schedule.clone();
    let narrow = generate_misaligned_calibration(&setup.geom, &probe, &setup.bank, &[setup.plan.carrier_hz])?;
    let base = sweep_response(&setup.plan);
    let (nb, ng, nf) = (setup.bank.len(), cfg.calibration.gains, freqs.len());
    let mut data = Vec::with_capacity(schedule.len() * ng * nb * nf);
    for o in 0..schedule.len() {
        for gi in 0..ng {
            let gain = Complex64::from_polar(10f64.powf(-cfg.calibration.gain_step_db * gi as f64 / 20.0), 0.3 * gi as f64);
            for b in 0..nb {
                let p = narrow.get(o, 0, b, 0);
                data.extend(base.iter().map(|g| p * g * gain));
            }
        }
    }
    let mut c = CalibrationTensor::new(data, ng, nb, schedule, freqs, AcquisitionOrder::MultiGain)?;
    c = apply_phase_noise(&c, &cfg.impairments.phase_noise.with_seed(sub_seed(seed, "phase-noise")))?;
    if let Some(snr) = cfg.impairments.calibration_snr_db {
        c = add_calibration_noise(&c, snr, sub_seed(seed, "calibration-noise"));
    }
    let pattern = (0..c.n_orient).flat_map(|o| (0..nb).map(move |b| (o, b))).map(|(o, b)| narrow.get(o, 0, b, 0)).collect();
    Ok(((0..ng).map(|gi| c.to_matrix(gi)).collect(), pattern))
}

fn multigain(setup: &Setup, cfg: &ScenarioConfig, seeds: &[(usize, u64)]) -> Result<ScenarioOutput> {
    let runs = seeds
        .par_iter()
        .map(|&(r, s)| {
            let (y, truth) = multigain_data(setup, cfg, s)?;
            let b_a: Vec<f64> = truth.iter().map(|b| b.norm()).collect();
            let res = solve_multigain(&y, &b_a, &cfg.calibration.multigain)?;
            let scale: f64 = y.iter().map(|m| m.norm_squared()).sum();
            let common: Complex64 = res.phase.iter().zip(&truth).map(|(p, t)| Complex64::from_polar(1.0, p - t.arg())).sum();
            let max_phase_error_deg = res
                .phase
                .iter()
                .zip(&truth)
                .map(|(p, t)| wrap_angle(p - t.arg() - common.arg()).abs().to_degrees())
                .fold(0.0, f64::max);
            Ok(MultigainRun {
                repetition: r,
                seed: s,
                outer_iterations: res.objective.len() - 1,
                converged: res.converged,
                relative_objective: res.objective.last().copied().unwrap_or(0.0) / scale,
                monotone: res.objective.windows(2).all(|w| w[1] <= w[0]),
                objective: res.objective,
                max_phase_error_deg,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioOutput { results: ScenarioResults::MultigainCalib { runs }, tables: Vec::new(), tensors: Vec::new() })
}

fn two_path(setup: &Setup, cfg: &ScenarioConfig, seeds: &[(usize, u64)]) -> Result<ScenarioOutput> {
    let tp = &cfg.two_path;
    let truth = two_path_geometry(tp.a_m, tp.b_m, tp.d_los_m)?;
    let done = seeds
        .par_iter()
        .map(|&(r, s)| {
            let obs = setup.observe(cfg, &truth, s)?;
            let rep = estimate(&obs, &setup.ideal, &setup.ideal, &setup.sys, &setup.plan, &cfg.estimator)?;
            let m = match_paths(&truth.paths, &rep.paths.paths, setup.plan.delay_bin_ns());
            let row = |i: Option<usize>| i.map(|i| PathRow { std: rep.std_errors.get(i).cloned(), ..PathRow::from_path(i + 1, &rep.paths.paths[i]) });
            let (los, reflection) = (row(m[0]), row(m[1]));
            let extra_delay_ns = los.as_ref().zip(reflection.as_ref()).map(|(a, b)| b.delay_ns - a.delay_ns);
            let estimates = PathTable::new(&rep.paths, &rep.std_errors)?;
            let tensor = apdp_tensor(&rep.apdp_original, &rep.apdp_reconstructed, &rep.apdp_residual)?;
            Ok((
                TwoPathRun {
                    repetition: r,
                    truth: PathTable::new(&truth, &[])?,
                    estimates,
                    ghosts: PathTable::new(&rep.ghosts, &[])?,
                    los,
                    reflection,
                    extra_delay_ns,
                    stop: rep.stop,
                },
                tensor,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = ScenarioOutput { results: ScenarioResults::TwoPath { runs: Vec::new() }, tables: Vec::new(), tensors: Vec::new() };
    let mut runs = Vec::new();
    for (run, t) in done {
        out.tables.push((format!("paths-rep{}", run.repetition), run.estimates.clone()));
        out.tensors.push((format!("apdp-rep{}", run.repetition), t));
        runs.push(run);
    }
    out.results = ScenarioResults::TwoPath { runs };
    Ok(out)
}

fn two_pole(setup: &Setup, cfg: &ScenarioConfig, seeds: &[(usize, u64)]) -> Result<ScenarioOutput> {
    let tp = &cfg.two_pole;
    let n = (180.0 / tp.aps_step_deg).round() as usize;
    let grid: Vec<f64> = (0..=n).map(|i| (-90.0 + 180.0 * i as f64 / n as f64).to_radians()).collect();
    let jobs: Vec<(usize, u64, f64)> = seeds.iter().flat_map(|&(r, s)| tp.separations_deg.iter().map(move |&d| (r, s, d))).collect();
    let done = jobs
        .par_iter()
        .map(|&(r, s, sep)| {
            let truth = two_pole_geometry(sep);
            let obs = setup.observe(cfg, &truth, sub_seed(s, &format!("separation {sep}")))?;
            let rep = estimate(&obs, &setup.ideal, &setup.ideal, &setup.sys, &setup.plan, &cfg.estimator)?;
            let mut truth_doa = [truth.paths[0].rx.azimuth.to_degrees(), truth.paths[1].rx.azimuth.to_degrees()];
            truth_doa.sort_by(f64::total_cmp);
            let mut doa: Vec<f64> = rep.paths.paths.iter().take(2).map(|p| p.rx.azimuth.to_degrees()).collect();
            doa.sort_by(f64::total_cmp);
            let resolved = doa.len() == 2 && doa.iter().zip(&truth_doa).all(|(e, t)| (e - t).abs() < sep / 4.0);
            let aps = beamforming_aps(&obs, &setup.ideal, &setup.ideal, &grid, &grid)?;
            let aps_peaks_deg =
                aps.peaks(tp.aps_floor_db).iter().map(|&(it, ir)| [grid[it].to_degrees(), grid[ir].to_degrees()]).collect();
            let tensor = Tensor::from_real(vec![("tx_azimuth".into(), grid.len()), ("rx_azimuth".into(), grid.len())], &aps.power)?;
            Ok((
                TwoPoleRun {
                    repetition: r,
                    separation_deg: sep,
                    truth_doa_deg: truth_doa,
                    estimated_doa_deg: doa,
                    resolved,
                    aps_peaks_deg,
                    estimates: PathTable::new(&rep.paths, &[])?,
                },
                tensor,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut tables = Vec::new();
    let mut tensors = Vec::new();
    let mut runs = Vec::new();
    for (run, t) in done {
        let label = format!("sep{}-rep{}", run.separation_deg, run.repetition);
        tables.push((format!("paths-{label}"), run.estimates.clone()));
        tensors.push((format!("aps-{label}"), t));
        runs.push(run);
    }
    Ok(ScenarioOutput { results: ScenarioResults::TwoPole { runs }, tables, tensors })
}

/// A relative `output_dir` is placed under `root` when one is given.
pub fn resolve_output_dir(cfg: &ScenarioConfig, root: Option<&FsPath>) -> PathBuf {
    match root {
        Some(root) if cfg.output_dir.is_relative() => root.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

#[derive(Serialize)]
struct ManifestFile {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    scenario: &'a str,
    config_hash: String,
    version: &'a str,
    started_unix_s: f64,
    wall_time_s: f64,
    files: Vec<ManifestFile>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `config.toml`, `results.json`, one CSV and JSON per table, the
/// tensors under `tensors/`, and `manifest.json`. Only the manifest holds
/// timing information.
pub fn write_artifacts(out: &ScenarioOutput, cfg: &ScenarioConfig, dir: &FsPath, started: SystemTime, wall: Duration) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir.join("tensors"))?;
    let mut files: Vec<(String, Vec<u8>)> = vec![
        ("config.toml".into(), cfg.to_toml().into_bytes()),
        ("results.json".into(), serde_json::to_vec_pretty(&out.results)?),
    ];
    for (name, table) in &out.tables {
        files.push((format!("{name}.csv"), table.to_csv()?.into_bytes()));
        files.push((format!("{name}.json"), table.to_json()?.into_bytes()));
    }
    for (name, tensor) in &out.tensors {
        files.push((format!("tensors/{name}.hrpe"), tensor.encode()?));
    }
    let mut written = Vec::new();
    let mut manifest_files = Vec::new();
    for (name, bytes) in &files {
        let path = dir.join(name);
        std::fs::write(&path, bytes)?;
        manifest_files.push(ManifestFile { path: name.clone(), sha256: sha256_hex(bytes) });
        written.push(path);
    }
    let manifest = Manifest {
        scenario: cfg.scenario.name(),
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION"),
        started_unix_s: started.duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0),
        wall_time_s: wall.as_secs_f64(),
        files: manifest_files,
    };
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::to_vec_pretty(&manifest)?)?;
    written.push(path);
    Ok(written)
}
