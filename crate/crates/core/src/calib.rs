//! Two-step sounder calibration.
//!
//! The baseline step extracts TX and RX beam patterns plus the joint
//! frequency response from two turntable sweeps with one SVD. The multi-gain
//! step fits a rank-1 model whose left factor has a prescribed magnitude.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lm::{levenberg_marquardt, Linearization, LmOptions, LmProblem, LmReport, LmStatus, Normal};
use crate::synth::Observation;

/// Loop nesting of a calibration sweep, innermost first.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcquisitionOrder {
    /// frequency → beam → orientation
    Baseline,
    /// frequency → beam → gain → orientation
    MultiGain,
}

/// Calibration samples stored in acquisition order:
/// `[orientation][gain][beam][frequency]`, frequency fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationTensor {
    pub data: Vec<Complex64>,
    pub n_gain: usize,
    pub n_beam: usize,
    pub n_orient: usize,
    pub n_freq: usize,
    pub order: Option<AcquisitionOrder>,
    /// Turntable orientations `(φ0, θ0)`, radians.
    pub orientations: Vec<(f64, f64)>,
    pub frequencies: Vec<f64>,
}

impl CalibrationTensor {
    pub fn new(
        data: Vec<Complex64>,
        n_gain: usize,
        n_beam: usize,
        orientations: Vec<(f64, f64)>,
        frequencies: Vec<f64>,
        order: AcquisitionOrder,
    ) -> Result<Self> {
        let n_orient = orientations.len();
        let n_freq = frequencies.len();
        if n_gain == 0 || n_beam == 0 || n_orient == 0 || n_freq == 0 {
            return Err(Error::Dimension("calibration axes must be non-empty".into()));
        }
        if data.len() != n_gain * n_beam * n_orient * n_freq {
            return Err(Error::Dimension(format!(
                "{} samples for {n_orient}x{n_gain}x{n_beam}x{n_freq}",
                data.len()
            )));
        }
        if data.iter().any(|x| x.re.is_nan() || x.im.is_nan()) {
            return Err(Error::Degenerate("calibration data contains NaN".into()));
        }
        if order == AcquisitionOrder::Baseline && n_gain != 1 {
            return Err(Error::Dimension("baseline sweeps have a single gain setting".into()));
        }
        Ok(Self { data, n_gain, n_beam, n_orient, n_freq, order: Some(order), orientations, frequencies })
    }

    pub fn index(&self, orient: usize, gain: usize, beam: usize, freq: usize) -> usize {
        ((orient * self.n_gain + gain) * self.n_beam + beam) * self.n_freq + freq
    }

    pub fn get(&self, orient: usize, gain: usize, beam: usize, freq: usize) -> Complex64 {
        self.data[self.index(orient, gain, beam, freq)]
    }

    /// Rows `(beam, orientation)` with beam fastest, columns frequency.
    pub fn to_matrix(&self, gain: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.n_beam * self.n_orient, self.n_freq, |row, f| {
            self.get(row / self.n_beam, gain, row % self.n_beam, f)
        })
    }

    /// Inverse of [`to_matrix`](Self::to_matrix) for a single-gain tensor.
    pub fn from_matrix(
        y: &DMatrix<Complex64>,
        n_beam: usize,
        orientations: Vec<(f64, f64)>,
        frequencies: Vec<f64>,
    ) -> Result<Self> {
        if y.nrows() != n_beam * orientations.len() || y.ncols() != frequencies.len() {
            return Err(Error::Dimension("matrix shape does not match axes".into()));
        }
        let mut data = Vec::with_capacity(y.len());
        for row in 0..y.nrows() {
            for f in 0..y.ncols() {
                data.push(y[(row, f)]);
            }
        }
        Self::new(data, 1, n_beam, orientations, frequencies, AcquisitionOrder::Baseline)
    }
}

/// Flattens the RX sweep (TX probe fixed) and the TX sweep (RX probe fixed).
pub fn assemble_baseline(
    calib1: &CalibrationTensor,
    calib2: &CalibrationTensor,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>)> {
    if calib1.frequencies != calib2.frequencies {
        return Err(Error::AxisMismatch(format!(
            "{} vs {} frequency points",
            calib1.frequencies.len(),
            calib2.frequencies.len()
        )));
    }
    Ok((calib1.to_matrix(0), calib2.to_matrix(0)))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineResult {
    pub b_t: Vec<Complex64>,
    pub b_r: Vec<Complex64>,
    pub g_f: Vec<Complex64>,
    pub k: Complex64,
    /// Leading singular values, largest first.
    pub singular_values: Vec<f64>,
    /// `σ1 / σ2`, infinite for an exactly rank-1 input.
    pub sigma_ratio: f64,
    /// `‖Y - σ1 u1 v1ᴴ‖²_F`.
    pub residual: f64,
}

/// Rank-1 SVD split of `[Y1; Y2]` into patterns, frequency response and `k`.
pub fn solve_baseline(y1: &DMatrix<Complex64>, y2: &DMatrix<Complex64>) -> Result<BaselineResult> {
    if y1.ncols() != y2.ncols() || y1.ncols() == 0 {
        return Err(Error::Dimension(format!("Y1 has {} columns, Y2 has {}", y1.ncols(), y2.ncols())));
    }
    if y1.nrows() != y2.nrows() {
        return Err(Error::Dimension("Y1 and Y2 must have the same number of rows".into()));
    }
    let n = y1.nrows();
    let mut y = DMatrix::zeros(2 * n, y1.ncols());
    y.rows_mut(0, n).copy_from(y1);
    y.rows_mut(n, n).copy_from(y2);
    let total: f64 = y.iter().map(|x| x.norm_sqr()).sum();
    if total == 0.0 {
        return Err(Error::Degenerate("calibration matrix is all zeros".into()));
    }

    // thin QR first; the SVD then runs on the small triangular factor
    let (u1, sigma, v1) = if y.nrows() > y.ncols() {
        // Y v1 = σ1 u1, so Q is never formed
        let svd = y.clone().qr().r().svd(false, true);
        let (i, s) = top_singular(&svd.singular_values);
        let v = svd.v_t.as_ref().unwrap().row(i).adjoint();
        let u = (&y * &v) / Complex64::new(s[0], 0.0);
        (u, s, v)
    } else {
        let svd = y.clone().svd(true, true);
        let (i, s) = top_singular(&svd.singular_values);
        let u = svd.u.as_ref().unwrap().column(i).into_owned();
        let v = svd.v_t.as_ref().unwrap().row(i).adjoint();
        (u, s, v)
    };
    let s1 = sigma[0];
    if s1 == 0.0 {
        return Err(Error::Degenerate("largest singular value is zero".into()));
    }
    // gauge: first non-negligible entry of u1 real positive
    let pivot = u1.iter().find(|x| x.norm() > 1e-12).copied().unwrap_or(Complex64::new(1.0, 0.0));
    let rot = pivot.conj() / pivot.norm();
    let u1: Vec<Complex64> = u1.iter().map(|x| x * rot).collect();
    let v1: Vec<Complex64> = v1.iter().map(|x| x * rot).collect();

    let mut g: Vec<Complex64> = v1.iter().map(|x| x.conj() * s1).collect();
    let (u11, u12) = u1.split_at(n);
    let center = (n - 1) / 2;
    if u11[center].norm() == 0.0 {
        return Err(Error::Degenerate("center element of the RX pattern vanishes".into()));
    }
    let a = Complex64::new(1.0, 0.0) / u11[center];
    let b_r: Vec<Complex64> = u11.iter().map(|x| x * a).collect();
    g.iter_mut().for_each(|x| *x /= a);
    let u12: Vec<Complex64> = u12.iter().map(|x| x * a).collect();
    let k = u12[center];
    if k.norm() == 0.0 {
        return Err(Error::Degenerate("center element of the TX pattern vanishes".into()));
    }
    let b_t: Vec<Complex64> = u12.iter().map(|x| x / k).collect();

    let residual = (total - s1 * s1).max(0.0);
    let residual = if residual < 1e-13 * total { direct_residual(&y, &u1, &v1, s1) } else { residual };
    let sigma_ratio = if sigma.len() > 1 && sigma[1] > 0.0 { s1 / sigma[1] } else { f64::INFINITY };
    Ok(BaselineResult { b_t, b_r, g_f: g, k, singular_values: sigma.into_iter().take(10).collect(), sigma_ratio, residual })
}

fn top_singular(s: &nalgebra::DVector<f64>) -> (usize, Vec<f64>) {
    let mut sorted: Vec<f64> = s.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let i = s.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
    (i, sorted)
}

fn direct_residual(y: &DMatrix<Complex64>, u: &[Complex64], v: &[Complex64], s: f64) -> f64 {
    let mut acc = 0.0;
    for c in 0..y.ncols() {
        let vc = v[c].conj() * s;
        for r in 0..y.nrows() {
            acc += (y[(r, c)] - u[r] * vc).norm_sqr();
        }
    }
    acc
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MultiGainOptions {
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub max_outer: usize,
    /// Estimate one phase per frequency sweep and gain block beyond the first.
    pub sweep_phases: bool,
    pub lm: LmOptions,
}

impl Default for MultiGainOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_outer: 200, sweep_phases: true, lm: LmOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MultiGainResult {
    pub phase: Vec<f64>,
    /// Frequency response per gain block, `[gain][frequency]`.
    pub g: Vec<Vec<Complex64>>,
    /// Per-sweep phases `[gain][row]`; block 0 is the reference and stays 0.
    pub sweep_phase: Vec<Vec<f64>>,
    pub objective: Vec<f64>,
    pub converged: bool,
}

impl MultiGainResult {
    pub fn pattern(&self, b_a: &[f64]) -> Vec<Complex64> {
        b_a.iter().zip(&self.phase).map(|(&a, &p)| Complex64::from_polar(a, p)).collect()
    }
}

/// Model of gain block `gi`: `Y[r, f] ≈ b_a[r] e^{j(φ_r + ψ_{gi,r})} g_gi[f]`.
fn multigain_objective(y: &[DMatrix<Complex64>], b_a: &[f64], phase: &[f64], psi: &[Vec<f64>], g: &[Vec<Complex64>]) -> f64 {
    let mut acc = 0.0;
    for (gi, yg) in y.iter().enumerate() {
        for r in 0..yg.nrows() {
            let b = Complex64::from_polar(b_a[r], phase[r] + psi[gi][r]);
            for f in 0..yg.ncols() {
                acc += (yg[(r, f)] - b * g[gi][f]).norm_sqr();
            }
        }
    }
    acc
}

/// Phase sub-problem with `g` and sweep phases fixed. Each phase only
/// touches its own row, so `JᵀJ` is diagonal.
pub struct PhaseProblem<'a> {
    pub y: &'a [DMatrix<Complex64>],
    pub b_a: &'a [f64],
    pub g: &'a [Vec<Complex64>],
    pub sweep_phase: &'a [Vec<f64>],
}

impl PhaseProblem<'_> {
    /// Stacked real residual, row-major over (gain, row, frequency, re/im).
    pub fn residual(&self, phase: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (gi, yg) in self.y.iter().enumerate() {
            for r in 0..yg.nrows() {
                let b = Complex64::from_polar(self.b_a[r], phase[r] + self.sweep_phase[gi][r]);
                for f in 0..yg.ncols() {
                    let e = b * self.g[gi][f] - yg[(r, f)];
                    out.push(e.re);
                    out.push(e.im);
                }
            }
        }
        out
    }

    /// Non-zero Jacobian entries: for each residual, its derivative with
    /// respect to the phase of its own row.
    pub fn jacobian_entries(&self, phase: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        for (gi, yg) in self.y.iter().enumerate() {
            for r in 0..yg.nrows() {
                let db = Complex64::new(0.0, 1.0) * Complex64::from_polar(self.b_a[r], phase[r] + self.sweep_phase[gi][r]);
                for f in 0..yg.ncols() {
                    let d = db * self.g[gi][f];
                    out.push(d.re);
                    out.push(d.im);
                }
            }
        }
        out
    }
}

impl LmProblem for PhaseProblem<'_> {
    fn cost(&self, phase: &[f64]) -> f64 {
        multigain_objective(self.y, self.b_a, phase, self.sweep_phase, self.g)
    }

    fn linearize(&self, phase: &[f64]) -> Linearization {
        let n = phase.len();
        let mut grad = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut cost = 0.0;
        for (gi, yg) in self.y.iter().enumerate() {
            let gnorm: f64 = self.g[gi].iter().map(|x| x.norm_sqr()).sum();
            for r in 0..n {
                let b = Complex64::from_polar(self.b_a[r], phase[r] + self.sweep_phase[gi][r]);
                let db = Complex64::new(0.0, 1.0) * b;
                for f in 0..yg.ncols() {
                    let e = b * self.g[gi][f] - yg[(r, f)];
                    cost += e.norm_sqr();
                    grad[r] += (e.conj() * db * self.g[gi][f]).re;
                }
                diag[r] += self.b_a[r] * self.b_a[r] * gnorm;
            }
        }
        Linearization { cost, gradient: grad, normal: Normal::Diagonal(diag) }
    }
}

/// LM over pattern phases with `g` held fixed.
pub fn lm_refine_phase(problem: &PhaseProblem<'_>, phase0: &[f64], opts: &LmOptions) -> LmReport {
    levenberg_marquardt(problem, phase0, opts)
}

/// Constrained rank-1 fit `Y_g ≈ (b_a ⊙ e^{jφ}) g_gᵀ` over one or more gain
/// blocks that share the pattern.
pub fn solve_multigain(y: &[DMatrix<Complex64>], b_a: &[f64], opts: &MultiGainOptions) -> Result<MultiGainResult> {
    let n = b_a.len();
    if y.is_empty() {
        return Err(Error::Dimension("no gain blocks".into()));
    }
    if let Some(i) = b_a.iter().position(|&a| !(a > 0.0)) {
        return Err(Error::ZeroAmplitude(i));
    }
    if let Some(bad) = y.iter().find(|m| m.nrows() != n) {
        return Err(Error::Dimension(format!("{} rows, amplitude pattern has {n}", bad.nrows())));
    }

    // warm start: phase of the unconstrained rank-1 left vector of block 0
    let svd = y[0].clone().svd(true, false);
    let (i, _) = top_singular(&svd.singular_values);
    let u = svd.u.unwrap().column(i).into_owned();
    let mut phase: Vec<f64> = u.iter().map(|x| x.arg()).collect();
    let mut psi = vec![vec![0.0; n]; y.len()];
    let mut g = vec![Vec::new(); y.len()];

    let solve_g = |phase: &[f64], psi: &[Vec<f64>], g: &mut [Vec<Complex64>]| {
        let bnorm: f64 = b_a.iter().map(|a| a * a).sum();
        for (gi, yg) in y.iter().enumerate() {
            g[gi] = (0..yg.ncols())
                .map(|f| {
                    let mut acc = Complex64::default();
                    for r in 0..n {
                        acc += Complex64::from_polar(b_a[r], -(phase[r] + psi[gi][r])) * yg[(r, f)];
                    }
                    acc / bnorm
                })
                .collect();
        }
    };
    let solve_psi = |phase: &[f64], psi: &mut [Vec<f64>], g: &[Vec<Complex64>]| {
        for (gi, yg) in y.iter().enumerate().skip(1) {
            for r in 0..n {
                let mut acc = Complex64::default();
                for f in 0..yg.ncols() {
                    acc += yg[(r, f)] * g[gi][f].conj();
                }
                psi[gi][r] = (acc * Complex64::from_polar(1.0, -phase[r])).arg();
            }
        }
    };

    solve_g(&phase, &psi, &mut g);
    let mut objective = vec![multigain_objective(y, b_a, &phase, &psi, &g)];
    let scale: f64 = y.iter().flat_map(|m| m.iter()).map(|x| x.norm_sqr()).sum();
    let mut converged = false;
    for _ in 0..opts.max_outer {
        let prev = *objective.last().unwrap();
        if prev <= 1e-30 * scale {
            converged = true;
            break;
        }
        // sub-problem 1: linear LS for g, then the per-sweep phases
        let mut g_new = g.clone();
        let mut psi_new = psi.clone();
        solve_g(&phase, &psi_new, &mut g_new);
        if opts.sweep_phases && y.len() > 1 {
            solve_psi(&phase, &mut psi_new, &g_new);
            solve_g(&phase, &psi_new, &mut g_new);
        }
        if multigain_objective(y, b_a, &phase, &psi_new, &g_new) <= prev {
            g = g_new;
            psi = psi_new;
        }
        // sub-problem 2: LM over φ
        let problem = PhaseProblem { y, b_a, g: &g, sweep_phase: &psi };
        let rep = lm_refine_phase(&problem, &phase, &opts.lm);
        if rep.cost <= problem.cost(&phase) {
            phase = rep.x;
        }
        let obj = multigain_objective(y, b_a, &phase, &psi, &g);
        objective.push(obj.min(prev));
        if (prev - obj) <= opts.tol * prev || rep.status == LmStatus::RankDeficient && obj >= prev {
            converged = true;
            break;
        }
    }
    // report phases in (-π, π]
    for p in phase.iter_mut() {
        *p = (*p + PI).rem_euclid(2.0 * PI) - PI;
    }
    Ok(MultiGainResult { phase, g, sweep_phase: psi, objective, converged })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CommonResponseReport {
    /// Complex gauge `c` minimizing `‖c (g_T ⊙ g_R) - g_f‖`.
    pub gauge: Complex64,
    pub max_db: f64,
    pub mean_db: f64,
    pub max_deg: f64,
    pub mean_deg: f64,
}

/// Compares `g_T ⊙ g_R` with the jointly calibrated `g_f` after removing a
/// complex scale.
pub fn extract_common_response(g_t: &[Complex64], g_r: &[Complex64], g_f: &[Complex64]) -> Result<CommonResponseReport> {
    if g_t.len() != g_r.len() || g_t.len() != g_f.len() {
        return Err(Error::AxisMismatch(format!("{}, {} and {} frequency points", g_t.len(), g_r.len(), g_f.len())));
    }
    let prod: Vec<Complex64> = g_t.iter().zip(g_r).map(|(a, b)| a * b).collect();
    let num: Complex64 = prod.iter().zip(g_f).map(|(p, g)| p.conj() * g).sum();
    let den: f64 = prod.iter().map(|p| p.norm_sqr()).sum();
    if den == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let c = num / den;
    let ratios: Vec<Complex64> = prod.iter().zip(g_f).map(|(p, g)| c * p / g).collect();
    let db: Vec<f64> = ratios.iter().map(|r| (20.0 * r.norm().log10()).abs()).collect();
    let deg: Vec<f64> = ratios.iter().map(|r| r.arg().to_degrees().abs()).collect();
    let n = ratios.len() as f64;
    Ok(CommonResponseReport {
        gauge: c,
        max_db: db.iter().cloned().fold(0.0, f64::max),
        mean_db: db.iter().sum::<f64>() / n,
        max_deg: deg.iter().cloned().fold(0.0, f64::max),
        mean_deg: deg.iter().sum::<f64>() / n,
    })
}

/// Divides every frequency sweep of `data` by `g0 · y_if / h_cable`.
pub fn preprocess_measurement(
    data: &Observation,
    g0: &[Complex64],
    y_if: &[Complex64],
    h_cable: &[Complex64],
) -> Result<Observation> {
    let nf = data.dims.n_freq;
    if g0.len() != nf || y_if.len() != nf || h_cable.len() != nf {
        return Err(Error::AxisMismatch(format!("responses must have {nf} frequency points")));
    }
    let mut zero = Vec::new();
    let den: Vec<Complex64> = (0..nf)
        .map(|f| {
            let d = if h_cable[f].norm() == 0.0 { Complex64::default() } else { g0[f] * y_if[f] / h_cable[f] };
            if d.norm() == 0.0 || !d.re.is_finite() || !d.im.is_finite() {
                zero.push(f);
            }
            d
        })
        .collect();
    if !zero.is_empty() {
        return Err(Error::ZeroDenominator(zero));
    }
    let mut out = data.canonical()?;
    for chunk in out.y.chunks_exact_mut(nf) {
        for (x, d) in chunk.iter_mut().zip(&den) {
            *x /= d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::Dims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn crand(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let n: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let d: f64 = b.iter().map(|x| x.norm_sqr()).sum();
        (n / d).sqrt()
    }

    fn rank1(n: usize, nf: usize, seed: u64) -> (Vec<Complex64>, Vec<Complex64>, Vec<Complex64>, Complex64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = (n - 1) / 2;
        let mut b_r: Vec<Complex64> = (0..n).map(|_| crand(&mut rng) + 0.2).collect();
        let mut b_t: Vec<Complex64> = (0..n).map(|_| crand(&mut rng) + 0.2).collect();
        let (r0, t0) = (b_r[c], b_t[c]);
        b_r.iter_mut().for_each(|x| *x /= r0);
        b_t.iter_mut().for_each(|x| *x /= t0);
        let g: Vec<Complex64> = (0..nf).map(|_| crand(&mut rng) * 3.0).collect();
        (b_r, b_t, g, Complex64::new(0.078, -1.045))
    }

    fn outer(b: &[Complex64], g: &[Complex64], k: Complex64) -> DMatrix<Complex64> {
        DMatrix::from_fn(b.len(), g.len(), |r, f| k * b[r] * g[f])
    }

    #[test]
    fn baseline_recovers_rank_one() {
        let (b_r, b_t, g, k) = rank1(19 * 7, 41, 1);
        let r = solve_baseline(&outer(&b_r, &g, 1.0.into()), &outer(&b_t, &g, k)).unwrap();
        assert!(rel(&r.b_r, &b_r) < 1e-10);
        assert!(rel(&r.b_t, &b_t) < 1e-10);
        assert!(rel(&r.g_f, &g) < 1e-10);
        assert!((r.k - k).norm() < 1e-10);
        assert!(r.sigma_ratio > 1e12);
        let c = (b_r.len() - 1) / 2;
        assert!((r.b_r[c] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
        assert!((r.b_t[c] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn baseline_rejects_zero() {
        let z = DMatrix::<Complex64>::zeros(5, 3);
        assert!(matches!(solve_baseline(&z, &z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn baseline_eckart_young_and_scale_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (b_r, b_t, g, k) = rank1(21, 9, 3);
        let y1 = outer(&b_r, &g, 1.0.into()).map(|x| x + crand(&mut rng) * 0.05);
        let y2 = outer(&b_t, &g, k).map(|x| x + crand(&mut rng) * 0.05);
        let r = solve_baseline(&y1, &y2).unwrap();
        let full = {
            let mut y = DMatrix::zeros(42, 9);
            y.rows_mut(0, 21).copy_from(&y1);
            y.rows_mut(21, 21).copy_from(&y2);
            y
        };
        let tail: f64 = full.clone().svd(false, false).singular_values.iter().skip(1).map(|s| s * s).sum();
        assert!((r.residual - tail).abs() < 1e-8 * tail);
        let c = Complex64::new(-0.3, 2.1);
        let s = solve_baseline(&y1.map(|x| x * c), &y2.map(|x| x * c)).unwrap();
        assert!(rel(&s.b_r, &r.b_r) < 1e-10);
        assert!(rel(&s.b_t, &r.b_t) < 1e-10);
        assert!((s.k - r.k).norm() < 1e-10 * r.k.norm());
        let scaled: Vec<Complex64> = r.g_f.iter().map(|x| x * c).collect();
        assert!(rel(&s.g_f, &scaled) < 1e-10);
    }

    #[test]
    fn assemble_layout() {
        let orients: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 0.0)).collect();
        let freqs = vec![1.0, 2.0, 3.0];
        let data: Vec<Complex64> = (0..4 * 19 * 3).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let t = CalibrationTensor::new(data, 1, 19, orients.clone(), freqs.clone(), AcquisitionOrder::Baseline).unwrap();
        let (y1, _) = assemble_baseline(&t, &t).unwrap();
        assert_eq!(y1.shape(), (76, 3));
        for (n, o, f) in [(0, 0, 0), (5, 2, 1), (18, 3, 2)] {
            assert_eq!(y1[(n + o * 19, f)], t.get(o, 0, n, f));
        }
        let back = CalibrationTensor::from_matrix(&y1, 19, orients.clone(), freqs).unwrap();
        assert_eq!(back, t);
        let other = CalibrationTensor::new(vec![Complex64::default(); 4 * 19 * 2], 1, 19, orients, vec![1.0, 2.0], AcquisitionOrder::Baseline).unwrap();
        assert!(matches!(assemble_baseline(&t, &other), Err(Error::AxisMismatch(_))));
    }

    fn gauge_phase_error(phase: &[f64], truth: &[f64]) -> f64 {
        let c: Complex64 = phase.iter().zip(truth).map(|(a, b)| Complex64::from_polar(1.0, a - b)).sum();
        let c = c.arg();
        phase.iter().zip(truth).map(|(a, b)| ((a - b - c + PI).rem_euclid(2.0 * PI) - PI).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn multigain_noiseless() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 60;
        let b_a: Vec<f64> = (0..n).map(|_| 0.2 + rng.random::<f64>()).collect();
        let phi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        let g: Vec<Complex64> = (0..30).map(|_| crand(&mut rng)).collect();
        let b: Vec<Complex64> = b_a.iter().zip(&phi).map(|(&a, &p)| Complex64::from_polar(a, p)).collect();
        let y = outer(&b, &g, 1.0.into());
        let norm = y.norm_squared();
        let r = solve_multigain(&[y], &b_a, &MultiGainOptions::default()).unwrap();
        assert!(*r.objective.last().unwrap() < 1e-16 * norm);
        assert!(gauge_phase_error(&r.phase, &phi) < 1e-8);
        assert!(r.objective.windows(2).all(|w| w[1] <= w[0]));
        let est = r.pattern(&b_a);
        assert!(est.iter().zip(&b_a).all(|(x, a)| (x.norm() - a).abs() < 1e-14));
    }

    #[test]
    fn multigain_trivial_gauge() {
        let b_a = vec![1.0, 2.0, 0.5];
        let y = DMatrix::from_fn(3, 4, |r, _| Complex64::new(b_a[r], 0.0));
        let r = solve_multigain(&[y], &b_a, &MultiGainOptions::default()).unwrap();
        let c = r.phase[0];
        assert!(r.phase.iter().all(|p| (p - c).abs() < 1e-10));
        let g0 = r.g[0][0] * Complex64::from_polar(1.0, c);
        assert!(r.g[0].iter().all(|x| (x * Complex64::from_polar(1.0, c) - Complex64::new(1.0, 0.0)).norm() < 1e-10));
        assert!((g0 - Complex64::new(1.0, 0.0)).norm() < 1e-10);
    }

    #[test]
    fn multigain_with_sweep_phases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 40;
        let b_a: Vec<f64> = (0..n).map(|_| 0.3 + rng.random::<f64>()).collect();
        let phi: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
        // each gain block has its own response; blocks past the first carry a
        // random phase per sweep (row)
        let blocks: Vec<DMatrix<Complex64>> = (0..3)
            .map(|gi| {
                let g: Vec<Complex64> = (0..20).map(|_| crand(&mut rng)).collect();
                let ph: Vec<f64> = (0..n).map(|_| if gi == 0 { 0.0 } else { rng.random::<f64>() * 6.0 }).collect();
                DMatrix::from_fn(n, 20, |r, f| Complex64::from_polar(b_a[r], phi[r] + ph[r]) * g[f])
            })
            .collect();
        let scale: f64 = blocks.iter().map(|m| m.norm_squared()).sum();
        let r = solve_multigain(&blocks, &b_a, &MultiGainOptions::default()).unwrap();
        assert!(*r.objective.last().unwrap() < 1e-16 * scale, "{:?}", r.objective.last());
        assert!(gauge_phase_error(&r.phase, &phi) < 1e-7);
    }

    #[test]
    fn multigain_monotone_on_random_inputs() {
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b_a: Vec<f64> = (0..8).map(|_| 0.1 + rng.random::<f64>()).collect();
            let y = DMatrix::from_fn(8, 5, |_, _| crand(&mut rng));
            let r = solve_multigain(&[y], &b_a, &MultiGainOptions { max_outer: 30, ..Default::default() }).unwrap();
            assert!(r.objective.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), "seed {seed}");
        }
    }

    #[test]
    fn multigain_rejects_zero_amplitude() {
        let y = DMatrix::from_element(3, 2, Complex64::new(1.0, 0.0));
        assert!(matches!(solve_multigain(&[y], &[1.0, 0.0, 1.0], &MultiGainOptions::default()), Err(Error::ZeroAmplitude(1))));
    }

    #[test]
    fn phase_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 5;
        let y = vec![DMatrix::from_fn(n, 4, |_, _| crand(&mut rng))];
        let b_a: Vec<f64> = (0..n).map(|_| 0.5 + rng.random::<f64>()).collect();
        let g = vec![(0..4).map(|_| crand(&mut rng)).collect::<Vec<_>>()];
        let psi = vec![vec![0.0; n]];
        let p = PhaseProblem { y: &y, b_a: &b_a, g: &g, sweep_phase: &psi };
        let phase: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let jac = p.jacobian_entries(&phase);
        let h = 1e-6;
        for r in 0..n {
            let mut hi = phase.clone();
            let mut lo = phase.clone();
            hi[r] += h;
            lo[r] -= h;
            let (rh, rl) = (p.residual(&hi), p.residual(&lo));
            for k in 0..8 {
                let idx = r * 8 + k;
                let fd = (rh[idx] - rl[idx]) / (2.0 * h);
                assert!((fd - jac[idx]).abs() <= 1e-5 * jac[idx].abs().max(1e-3));
            }
        }
        // the diagonal normal matrix and gradient agree with the entries
        let lin = p.linearize(&phase);
        let r0 = p.residual(&phase);
        for row in 0..n {
            let g: f64 = (0..8).map(|k| r0[row * 8 + k] * jac[row * 8 + k]).sum();
            assert!((g - lin.gradient[row]).abs() < 1e-10);
        }
    }

    #[test]
    fn common_response_checks() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g: Vec<Complex64> = (0..50).map(|_| crand(&mut rng) + 1.0).collect();
        let ones = vec![Complex64::new(1.0, 0.0); 50];
        let r = extract_common_response(&g, &ones, &g).unwrap();
        assert!(r.max_db < 1e-12 && r.max_deg < 1e-10);
        let g_t: Vec<Complex64> = (0..50).map(|_| crand(&mut rng) + 1.0).collect();
        let g_r: Vec<Complex64> = g.iter().zip(&g_t).map(|(a, b)| a / b).collect();
        let noisy: Vec<Complex64> = g_r.iter().map(|x| x * 10f64.powf((rng.random::<f64>() - 0.5) * 0.2 / 20.0)).collect();
        let r = extract_common_response(&g_t, &noisy, &g).unwrap();
        assert!(r.mean_db <= 0.2);
        assert!(matches!(extract_common_response(&g, &ones[..3], &g), Err(Error::AxisMismatch(_))));
    }

    #[test]
    fn preprocessing_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let nf = 16;
        let dims = Dims::new(nf, 3, 2);
        let g0: Vec<Complex64> = (0..nf).map(|_| crand(&mut rng) + 1.0).collect();
        let y_if: Vec<Complex64> = (0..nf).map(|_| crand(&mut rng) + 1.0).collect();
        let h: Vec<Complex64> = (0..nf).map(|_| crand(&mut rng) + 1.0).collect();
        let den: Vec<Complex64> = (0..nf).map(|f| g0[f] * y_if[f] / h[f]).collect();
        let chan: Vec<Complex64> = (0..dims.len()).map(|_| crand(&mut rng)).collect();
        let raw = Observation::new((0..dims.len()).map(|i| chan[i] * den[i % nf]).collect(), dims).unwrap();
        let out = preprocess_measurement(&raw, &g0, &y_if, &h).unwrap();
        assert!(rel(&out.y, &chan) < 1e-13);
        let raw = Observation::new((0..dims.len()).map(|i| den[i % nf]).collect(), dims).unwrap();
        let out = preprocess_measurement(&raw, &g0, &y_if, &h).unwrap();
        assert!(out.y.iter().all(|x| (x - Complex64::new(1.0, 0.0)).norm() < 1e-13));
        let mut bad = y_if.clone();
        bad[6] = Complex64::default();
        match preprocess_measurement(&raw, &g0, &bad, &h) {
            Err(Error::ZeroDenominator(idx)) => assert_eq!(idx, vec![6]),
            other => panic!("{other:?}"),
        }
    }
}
