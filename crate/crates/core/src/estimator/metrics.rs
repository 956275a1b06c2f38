//! Delay profiles, peak reduction, Bartlett spectra and the ghost rule.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};

use crate::eadf::Eadf;
use crate::error::{Error, Result};
use crate::synth::{FrequencyPlan, Observation, PathSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    Rectangular,
    #[default]
    Hann,
}

impl Window {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            Window::Rectangular => vec![1.0; n],
            Window::Hann if n < 2 => vec![1.0; n],
            Window::Hann => (0..n).map(|m| 0.5 - 0.5 * (2.0 * PI * m as f64 / (n - 1) as f64).cos()).collect(),
        }
    }
}

/// Averaged power delay profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Apdp {
    pub delay_ns: Vec<f64>,
    pub power: Vec<f64>,
}

impl Apdp {
    pub fn peak(&self) -> f64 {
        self.power.iter().cloned().fold(0.0, f64::max)
    }

    pub fn to_db(&self) -> Vec<f64> {
        self.power.iter().map(|p| 10.0 * p.log10()).collect()
    }
}

/// `|IDFT(w ⊙ y)|²` averaged over all beam pairs and snapshots.
pub fn apdp(obs: &Observation, plan: &FrequencyPlan, window: Window) -> Result<Apdp> {
    let nf = obs.dims.n_freq;
    if plan.count != nf {
        return Err(Error::Dimension(format!("plan has {} frequencies, observation {nf}", plan.count)));
    }
    let obs = obs.canonical()?;
    let w = window.coefficients(nf);
    let fft = FftPlanner::new().plan_fft_inverse(nf);
    let mut power = vec![0.0; nf];
    let mut buf = vec![Complex64::default(); nf];
    let blocks = obs.y.len() / nf.max(1);
    for block in obs.y.chunks_exact(nf) {
        for ((b, x), wm) in buf.iter_mut().zip(block).zip(&w) {
            *b = x * wm;
        }
        fft.process(&mut buf);
        for (p, b) in power.iter_mut().zip(&buf) {
            *p += b.norm_sqr();
        }
    }
    let scale = 1.0 / (nf as f64 * nf as f64 * blocks.max(1) as f64);
    power.iter_mut().for_each(|p| *p *= scale);
    let bin = plan.delay_bin_ns();
    Ok(Apdp { delay_ns: (0..nf).map(|k| k as f64 * bin).collect(), power })
}

/// Gap in dB between the APDP peaks of the original and the residual.
/// A zero residual gives `+∞`.
pub fn peak_reduction(original: &Apdp, residual: &Apdp) -> Result<f64> {
    if original.power.len() != residual.power.len() {
        return Err(Error::Dimension("APDPs differ in length".into()));
    }
    let r = residual.peak();
    if r == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (original.peak() / r).log10())
}

/// Peak reduction restricted to a circular window of `half_window_ns`
/// around each delay.
pub fn per_path_peak_reduction(original: &Apdp, residual: &Apdp, delays_ns: &[f64], half_window_ns: f64) -> Result<Vec<f64>> {
    let n = original.power.len();
    if n != residual.power.len() {
        return Err(Error::Dimension("APDPs differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Dimension("APDP needs at least two bins".into()));
    }
    let bin = original.delay_ns[1] - original.delay_ns[0];
    let span = bin * n as f64;
    Ok(delays_ns
        .iter()
        .map(|&d| {
            let mut o = 0.0f64;
            let mut r = 0.0f64;
            for (k, t) in original.delay_ns.iter().enumerate() {
                let dist = (t - d).rem_euclid(span);
                if dist.min(span - dist) <= half_window_ns {
                    o = o.max(original.power[k]);
                    r = r.max(residual.power[k]);
                }
            }
            if r == 0.0 {
                f64::INFINITY
            } else {
                10.0 * (o / r).log10()
            }
        })
        .collect())
}

/// Bartlett spectrum over transmit and receive azimuth at broadside
/// elevation; `power` is stored `[tx][rx]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aps {
    pub tx_azimuth: Vec<f64>,
    pub rx_azimuth: Vec<f64>,
    pub power: Vec<f64>,
}

impl Aps {
    pub fn at(&self, it: usize, ir: usize) -> f64 {
        self.power[it * self.rx_azimuth.len() + ir]
    }

    pub fn argmax(&self) -> (usize, usize) {
        let (k, _) = self.power.iter().enumerate().fold((0, f64::MIN), |a, (i, &p)| if p > a.1 { (i, p) } else { a });
        (k / self.rx_azimuth.len(), k % self.rx_azimuth.len())
    }

    /// Local maxima (8-neighbourhood) no more than `floor_db` below the
    /// global maximum.
    pub fn peaks(&self, floor_db: f64) -> Vec<(usize, usize)> {
        let (nt, nr) = (self.tx_azimuth.len(), self.rx_azimuth.len());
        let (mt, mr) = self.argmax();
        let floor = self.at(mt, mr) * 10f64.powf(-floor_db / 10.0);
        let mut out = Vec::new();
        for it in 0..nt {
            for ir in 0..nr {
                let p = self.at(it, ir);
                if p < floor {
                    continue;
                }
                let mut is_max = true;
                for dt in -1i64..=1 {
                    for dr in -1i64..=1 {
                        let (a, b) = (it as i64 + dt, ir as i64 + dr);
                        if (dt, dr) == (0, 0) || a < 0 || b < 0 || a >= nt as i64 || b >= nr as i64 {
                            continue;
                        }
                        let q = self.at(a as usize, b as usize);
                        // ties resolve to the first cell in storage order
                        if q > p || (q == p && (a as usize, b as usize) < (it, ir)) {
                            is_max = false;
                        }
                    }
                }
                if is_max {
                    out.push((it, ir));
                }
            }
        }
        out
    }
}

fn steering_rows(eadf: &Eadf, azimuths: &[f64]) -> DMatrix<Complex64> {
    let v = eadf.evaluate_grid(azimuths, &[FRAC_PI_2]);
    let nb = eadf.n_beams();
    DMatrix::from_fn(azimuths.len(), nb, |i, b| {
        let row = &v[i * nb..(i + 1) * nb];
        let norm = row.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        if norm > 0.0 {
            row[b].conj() / norm
        } else {
            Complex64::default()
        }
    })
}

/// Frequency-averaged conventional beamformer with EADF steering vectors.
pub fn beamforming_aps(obs: &Observation, tx: &Eadf, rx: &Eadf, tx_azimuth: &[f64], rx_azimuth: &[f64]) -> Result<Aps> {
    let d = obs.dims;
    if tx.n_beams() != d.n_tx || rx.n_beams() != d.n_rx {
        return Err(Error::Dimension("EADF beam counts do not match the observation".into()));
    }
    let obs = obs.canonical()?;
    let at = steering_rows(tx, tx_azimuth);
    let ar = steering_rows(rx, rx_azimuth);
    let mut power = DMatrix::<f64>::zeros(tx_azimuth.len(), rx_azimuth.len());
    let mut yf = DMatrix::<Complex64>::zeros(d.n_tx, d.n_rx);
    for t in 0..d.n_time {
        for f in 0..d.n_freq {
            for ix in 0..d.n_tx {
                for ir in 0..d.n_rx {
                    yf[(ix, ir)] = obs.y[((t * d.n_tx + ix) * d.n_rx + ir) * d.n_freq + f];
                }
            }
            let c = &at * &yf * ar.transpose();
            power.zip_apply(&c, |p, v| *p += v.norm_sqr());
        }
    }
    let scale = 1.0 / (d.n_freq * d.n_time).max(1) as f64;
    let mut flat = Vec::with_capacity(power.len());
    for it in 0..tx_azimuth.len() {
        for ir in 0..rx_azimuth.len() {
            flat.push(power[(it, ir)] * scale);
        }
    }
    Ok(Aps { tx_azimuth: tx_azimuth.to_vec(), rx_azimuth: rx_azimuth.to_vec(), power: flat })
}

/// Removes paths that sit close in delay to a much stronger path.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GhostRule {
    pub delay_window_ns: f64,
    pub power_gap_db: f64,
}

impl Default for GhostRule {
    fn default() -> Self {
        Self { delay_window_ns: 1.0, power_gap_db: 10.0 }
    }
}

/// Splits `paths` into `(kept, ghosts)`, preserving order.
pub fn split_ghosts(paths: &PathSet, rule: &GhostRule) -> (PathSet, PathSet) {
    let mut kept = Vec::new();
    let mut ghosts = Vec::new();
    for p in &paths.paths {
        let ghost = paths.paths.iter().any(|q| {
            (q.delay_ns - p.delay_ns).abs() < rule.delay_window_ns && q.power_db() - p.power_db() > rule.power_gap_db
        });
        if ghost {
            ghosts.push(p.clone());
        } else {
            kept.push(p.clone());
        }
    }
    (PathSet::new(kept), PathSet::new(ghosts))
}

pub fn ghost_filter(paths: &PathSet, rule: &GhostRule) -> PathSet {
    split_ghosts(paths, rule).0
}
