//! Successive-cancellation initializer.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use statrs::distribution::{ContinuousCDF, Gamma};
use std::f64::consts::FRAC_PI_2;

use super::model::Context;
use super::model::residual;
use super::refine::{fit_joint, fit_path};
use crate::lm::LmOptions;
use super::EstimatorConfig;
use crate::array::Direction;
use crate::eadf::Eadf;
use crate::synth::Path;

/// Normalized EADF responses on a direction grid.
pub struct SearchGrid {
    pub directions: Vec<Direction>,
    /// `[direction][beam]`, each row of unit norm.
    rows: Vec<Complex64>,
    n_beams: usize,
}

impl SearchGrid {
    /// Front hemisphere (`|φ| ≤ 90°`) at `step_deg`; elevation is searched
    /// only when the EADF resolves it.
    pub fn front(eadf: &Eadf, step_deg: f64) -> Self {
        let steps = |lo: f64, hi: f64| {
            let n = ((hi - lo) / step_deg).round() as usize;
            (0..=n).map(|i| (lo + (hi - lo) * i as f64 / n.max(1) as f64).to_radians()).collect::<Vec<f64>>()
        };
        let az = steps(-90.0, 90.0);
        let el = if eadf.azimuth_only() { vec![FRAC_PI_2] } else { steps(step_deg, 180.0 - step_deg) };
        let values = eadf.evaluate_grid(&az, &el);
        let nb = eadf.n_beams();
        let mut rows = values;
        for row in rows.chunks_exact_mut(nb) {
            let n = row.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter_mut().for_each(|x| *x /= n);
            }
        }
        let directions = el.iter().flat_map(|&e| az.iter().map(move |&a| Direction::new(a, e))).collect();
        Self { directions, rows, n_beams: nb }
    }

    fn row(&self, i: usize) -> &[Complex64] {
        &self.rows[i * self.n_beams..(i + 1) * self.n_beams]
    }

    /// Index maximizing `|⟨a, w⟩|²`.
    fn best_match(&self, w: &[Complex64]) -> usize {
        self.best_by(|a| a.iter().zip(w).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr())
    }

    fn best_by<F: Fn(&[Complex64]) -> f64 + Sync>(&self, score: F) -> usize {
        let scores: Vec<f64> = (0..self.directions.len()).into_par_iter().map(|i| score(self.row(i))).collect();
        scores.iter().enumerate().fold((0, f64::MIN), |a, (i, &s)| if s > a.1 { (i, s) } else { a }).0
    }
}

/// Matched-filter delay profile over an oversampled delay grid, summed over
/// all beam pairs and snapshots. Bin `k` corresponds to `k · span / len`.
pub fn delay_profile(ctx: &Context, x: &[Complex64], oversampling: usize) -> Vec<f64> {
    let nf = ctx.dims.n_freq;
    let len = nf * oversampling.max(1);
    let fft = FftPlanner::new().plan_fft_inverse(len);
    let g = ctx.g;
    let partial: Vec<Vec<f64>> = x
        .par_chunks(nf * 64)
        .map(|chunk| {
            let mut acc = vec![0.0; len];
            let mut buf = vec![Complex64::default(); len];
            for block in chunk.chunks_exact(nf) {
                buf.iter_mut().for_each(|b| *b = Complex64::default());
                for (b, (v, gm)) in buf.iter_mut().zip(block.iter().zip(g)) {
                    *b = v * gm.conj();
                }
                fft.process(&mut buf);
                for (a, b) in acc.iter_mut().zip(&buf) {
                    *a += b.norm_sqr();
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; len];
    for p in &partial {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s[s.len() / 2]
}

/// Level that a noise-only profile exceeds with probability about
/// `false_alarm` anywhere on the delay axis.
///
/// Each bin of the noise-only profile is a sum of `blocks` exponentials, so
/// it follows a Gamma law; its scale is estimated from the profile median.
/// The oversampled bins are correlated, so only `n_freq` of them count as
/// independent trials.
pub fn noise_floor(profile: &[f64], blocks: usize, n_freq: usize, false_alarm: f64) -> f64 {
    let law = Gamma::new(blocks.max(1) as f64, 1.0).expect("positive shape");
    let per_bin = 1.0 - false_alarm / n_freq.max(1) as f64;
    median(profile) * law.inverse_cdf(per_bin) / law.inverse_cdf(0.5)
}

/// Beam-domain matrix `Z[tx][rx] = Σ_t Σ_f conj(b_f(τ)) x`.
fn beam_domain(ctx: &Context, x: &[Complex64], delay_ns: f64) -> Vec<Complex64> {
    let bf = ctx.atom(delay_ns, Direction::boresight(), Direction::boresight()).bf;
    let d = ctx.dims;
    let nf = d.n_freq;
    let mut z = vec![Complex64::default(); d.n_tx * d.n_rx];
    for (i, block) in x.chunks_exact(nf).enumerate() {
        let pair = i % (d.n_tx * d.n_rx);
        z[pair] += bf.iter().zip(block).map(|(b, v)| b.conj() * v).sum::<Complex64>();
    }
    z
}

/// Result of the cancellation loop.
pub struct Initialization {
    pub paths: Vec<Path>,
    /// Why detection stopped.
    pub stop: StopReason,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxPaths,
    NoiseFloor,
    DynamicRange,
}

pub fn successive_cancellation(ctx: Context, y: &[Complex64], cfg: &EstimatorConfig) -> Initialization {
    let tx_grid = SearchGrid::front(ctx.tx, cfg.angle_step_deg);
    let rx_grid = SearchGrid::front(ctx.rx, cfg.angle_step_deg);
    let d = ctx.dims;
    let span = 2.0 * std::f64::consts::PI / ctx.tau_scale;
    let mut resid = y.to_vec();
    let mut paths: Vec<Path> = Vec::new();
    let mut first_peak = None;
    let stop = loop {
        if paths.len() >= cfg.max_paths {
            break StopReason::MaxPaths;
        }
        let profile = delay_profile(&ctx, &resid, cfg.delay_oversampling);
        let (k, peak) = profile.iter().enumerate().fold((0, f64::MIN), |a, (i, &p)| if p > a.1 { (i, p) } else { a });
        let floor = noise_floor(&profile, y.len() / d.n_freq, d.n_freq, cfg.false_alarm);
        if peak <= floor * 10f64.powf(cfg.detection_threshold_db / 10.0) {
            break StopReason::NoiseFloor;
        }
        let first = *first_peak.get_or_insert(peak);
        if peak < first * 10f64.powf(-cfg.dynamic_range_db / 10.0) {
            break StopReason::DynamicRange;
        }
        let delay = k as f64 * span / profile.len() as f64;
        let z = beam_domain(&ctx, &resid, delay);
        // transmit direction capturing most receive-side energy
        let it = tx_grid.best_by(|a| {
            (0..d.n_rx)
                .map(|ir| (0..d.n_tx).map(|ix| a[ix].conj() * z[ix * d.n_rx + ir]).sum::<Complex64>().norm_sqr())
                .sum()
        });
        let mut it = it;
        let mut ir = 0;
        for _ in 0..2 {
            let a = tx_grid.row(it);
            let w: Vec<Complex64> =
                (0..d.n_rx).map(|ir| (0..d.n_tx).map(|ix| a[ix].conj() * z[ix * d.n_rx + ir]).sum()).collect();
            ir = rx_grid.best_match(&w);
            let b = rx_grid.row(ir);
            let w: Vec<Complex64> =
                (0..d.n_tx).map(|ix| (0..d.n_rx).map(|ir| b[ir].conj() * z[ix * d.n_rx + ir]).sum()).collect();
            it = tx_grid.best_match(&w);
        }
        let (tx, rx) = (tx_grid.directions[it], rx_grid.directions[ir]);
        let atom = ctx.atom(delay, tx, rx);
        let e = atom.energy();
        if !(e > 0.0) {
            break StopReason::NoiseFloor;
        }
        let start = Path::new(delay, tx, rx, atom.project(&resid) / e);
        let (p, _) = fit_path(ctx, &resid, &start, &cfg.lm);
        ctx.path_atom(&p).add_to(&mut resid, -p.weight);
        paths.push(p);
        if paths.len() > 1 && cfg.joint_iterations > 0 {
            let opts = LmOptions { max_iterations: cfg.joint_iterations, ..cfg.lm };
            paths = fit_joint(ctx, y, &paths, &opts).0;
            resid = residual(&ctx, y, &paths);
        }
    };
    Initialization { paths, stop }
}
