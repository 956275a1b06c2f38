//! Specular-path estimation on the static wideband beam-port model.
//!
//! Paths are detected one at a time by successive cancellation and then
//! refined jointly: each sweep refits every path against the residual of
//! all others with Levenberg-Marquardt, then re-solves all weights by
//! linear least squares.

pub mod init;
pub mod metrics;
pub mod model;
pub mod refine;

use serde::{Deserialize, Serialize};

use crate::eadf::Eadf;
use crate::error::{Error, Result};
use crate::lm::LmOptions;
use crate::synth::{Dims, FrequencyPlan, Observation, Path, PathSet, SystemResponse};

pub use init::StopReason;
pub use metrics::{
    apdp, beamforming_aps, ghost_filter, peak_reduction, per_path_peak_reduction, split_ghosts, Apdp, Aps, GhostRule,
    Window,
};
pub use refine::Refinement;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub max_paths: usize,
    /// Detection stops when the residual delay-profile peak is less than
    /// this many dB above the noise floor.
    pub detection_threshold_db: f64,
    /// Probability that pure noise crosses the floor at 0 dB threshold.
    pub false_alarm: f64,
    /// Detection stops when a candidate is this many dB below the first.
    pub dynamic_range_db: f64,
    pub delay_oversampling: usize,
    pub angle_step_deg: f64,
    /// Joint Levenberg-Marquardt iterations over all paths, run after each
    /// detection and once after the per-path sweeps.
    pub joint_iterations: usize,
    pub max_sweeps: usize,
    /// Relative residual-energy improvement below which sweeps stop.
    pub tolerance: f64,
    pub lm: LmOptions,
    pub ghost: GhostRule,
    pub window: Window,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            max_paths: 20,
            detection_threshold_db: 6.0,
            false_alarm: 0.01,
            dynamic_range_db: 80.0,
            delay_oversampling: 8,
            angle_step_deg: 2.0,
            joint_iterations: 20,
            max_sweeps: 30,
            tolerance: 1e-6,
            lm: LmOptions { max_iterations: 10, ..LmOptions::default() },
            ghost: GhostRule::default(),
            window: Window::Hann,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::Config { path: format!("estimator.{k}"), message: m.into() });
        if self.max_paths < 1 {
            return bad("max_paths", "must be at least 1");
        }
        for (k, v) in [
            ("detection_threshold_db", self.detection_threshold_db),
            ("dynamic_range_db", self.dynamic_range_db),
            ("tolerance", self.tolerance),
            ("ghost.delay_window_ns", self.ghost.delay_window_ns),
            ("ghost.power_gap_db", self.ghost.power_gap_db),
        ] {
            if !v.is_finite() {
                return bad(k, "must be finite");
            }
        }
        if !(self.angle_step_deg > 0.0 && self.angle_step_deg <= 90.0) {
            return bad("angle_step_deg", "must lie in (0, 90]");
        }
        if !(self.false_alarm > 0.0 && self.false_alarm < 1.0) {
            return bad("false_alarm", "must lie in (0, 1)");
        }
        if self.delay_oversampling < 1 {
            return bad("delay_oversampling", "must be at least 1");
        }
        Ok(())
    }
}

fn context<'a>(obs: &Observation, tx: &'a Eadf, rx: &'a Eadf, sys: &'a SystemResponse, plan: &FrequencyPlan) -> Result<model::Context<'a>> {
    model::Context::new(obs.dims, tx, rx, sys, plan)
}

/// Coarse path list by successive cancellation.
pub fn initialize_paths(
    obs: &Observation,
    tx: &Eadf,
    rx: &Eadf,
    sys: &SystemResponse,
    plan: &FrequencyPlan,
    cfg: &EstimatorConfig,
) -> Result<(PathSet, StopReason)> {
    cfg.validate()?;
    let obs = obs.canonical()?;
    let ctx = context(&obs, tx, rx, sys, plan)?;
    let init = init::successive_cancellation(ctx, &obs.y, cfg);
    Ok((PathSet::new(init.paths), init.stop))
}

pub fn refine_paths(
    obs: &Observation,
    coarse: &PathSet,
    tx: &Eadf,
    rx: &Eadf,
    sys: &SystemResponse,
    plan: &FrequencyPlan,
    cfg: &EstimatorConfig,
) -> Result<Refinement> {
    let obs = obs.canonical()?;
    let ctx = context(&obs, tx, rx, sys, plan)?;
    Ok(refine::refine(ctx, &obs.y, &coarse.paths, &cfg.lm, cfg.max_sweeps, cfg.tolerance, cfg.joint_iterations))
}

/// Sum of the given paths in the observation's own geometry.
pub fn reconstruct(dims: Dims, paths: &PathSet, tx: &Eadf, rx: &Eadf, sys: &SystemResponse, plan: &FrequencyPlan) -> Result<Observation> {
    let zero = Observation::zeros(dims);
    let ctx = context(&zero, tx, rx, sys, plan)?;
    let mut out = zero;
    for p in &paths.paths {
        ctx.path_atom(p).add_to(&mut out.y, p.weight);
    }
    Ok(out)
}

/// Mean and sample standard deviation of one path's parameters over
/// snapshots. Angles in degrees, power in dB.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSpread {
    pub delay_ns: f64,
    pub tx_azimuth_deg: f64,
    pub tx_elevation_deg: f64,
    pub rx_azimuth_deg: f64,
    pub rx_elevation_deg: f64,
    pub power_db: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    /// Estimates after ghost filtering, strongest first.
    pub paths: PathSet,
    /// Estimates removed by the ghost rule.
    pub ghosts: PathSet,
    /// Per-snapshot refits when the observation has several snapshots.
    pub snapshot_paths: Vec<PathSet>,
    /// Standard deviation over `snapshot_paths`, aligned with `paths`.
    pub std_errors: Vec<PathSpread>,
    pub stop: StopReason,
    pub refinement: Refinement,
    /// `original - reconstructed`, where the reconstruction uses every
    /// fitted path including ghosts.
    #[serde(skip)]
    pub residual: Option<Observation>,
    pub apdp_original: Apdp,
    pub apdp_reconstructed: Apdp,
    pub apdp_residual: Apdp,
    pub peak_reduction_db: f64,
}

fn snapshot(obs: &Observation, t: usize) -> Observation {
    let d = obs.dims;
    let per = d.n_freq * d.n_rx * d.n_tx;
    let dims = Dims { n_time: 1, ..d };
    let mut o = Observation::new(obs.y[t * per..(t + 1) * per].to_vec(), dims).expect("snapshot slice");
    o.noise_var = obs.noise_var;
    o
}

fn spread(sets: &[PathSet], index: usize) -> PathSpread {
    let n = sets.len() as f64;
    let std = |f: &dyn Fn(&Path) -> f64| {
        let v: Vec<f64> = sets.iter().map(|s| f(&s.paths[index])).collect();
        let m = v.iter().sum::<f64>() / n;
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt()
    };
    PathSpread {
        delay_ns: std(&|p| p.delay_ns),
        tx_azimuth_deg: std(&|p| p.tx.azimuth.to_degrees()),
        tx_elevation_deg: std(&|p| p.tx.elevation.to_degrees()),
        rx_azimuth_deg: std(&|p| p.rx.azimuth.to_degrees()),
        rx_elevation_deg: std(&|p| p.rx.elevation.to_degrees()),
        power_db: std(&|p| p.power_db()),
    }
}

/// Full pipeline: detection, joint refinement, ghost filtering and the
/// residual metrics.
pub fn estimate(
    obs: &Observation,
    tx: &Eadf,
    rx: &Eadf,
    sys: &SystemResponse,
    plan: &FrequencyPlan,
    cfg: &EstimatorConfig,
) -> Result<EstimateReport> {
    cfg.validate()?;
    let obs = obs.canonical()?;
    let ctx = context(&obs, tx, rx, sys, plan)?;
    let init = init::successive_cancellation(ctx, &obs.y, cfg);
    let refinement = refine::refine(ctx, &obs.y, &init.paths, &cfg.lm, cfg.max_sweeps, cfg.tolerance, cfg.joint_iterations);
    let all = PathSet::new(refinement.paths.clone()).sorted_by_power();
    let (paths, ghosts) = split_ghosts(&all, &cfg.ghost);

    let mut snapshot_paths = Vec::new();
    let mut std_errors = Vec::new();
    if obs.dims.n_time > 1 && !all.is_empty() {
        for t in 0..obs.dims.n_time {
            let s = snapshot(&obs, t);
            let sctx = context(&s, tx, rx, sys, plan)?;
            let r = refine::refine(sctx, &s.y, &paths.paths, &cfg.lm, cfg.max_sweeps, cfg.tolerance, cfg.joint_iterations);
            snapshot_paths.push(PathSet::new(r.paths));
        }
        std_errors = (0..paths.len()).map(|i| spread(&snapshot_paths, i)).collect();
    }

    let reconstructed = reconstruct(obs.dims, &all, tx, rx, sys, plan)?;
    let mut residual = obs.clone();
    residual.y.iter_mut().zip(&reconstructed.y).for_each(|(r, v)| *r -= v);
    let apdp_original = apdp(&obs, plan, cfg.window)?;
    let apdp_reconstructed = apdp(&reconstructed, plan, cfg.window)?;
    let apdp_residual = apdp(&residual, plan, cfg.window)?;
    let peak_reduction_db = peak_reduction(&apdp_original, &apdp_residual)?;
    Ok(EstimateReport {
        paths,
        ghosts,
        snapshot_paths,
        std_errors,
        stop: init.stop,
        refinement,
        residual: Some(residual),
        apdp_original,
        apdp_reconstructed,
        apdp_residual,
        peak_reduction_db,
    })
}
