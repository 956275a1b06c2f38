//! Synthetic sounder observations.
//!
//! Every observation vector is ordered with frequency fastest, then RX beam,
//! then TX beam, then snapshot. One path contributes
//! `γ · b_t ⊗ b_T ⊗ b_R ⊗ (g_f ⊙ a_f(-τ))` in that order.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::array::{Direction, SPEED_OF_LIGHT};
use crate::eadf::Eadf;
use crate::error::{Error, Result};

pub const DEFAULT_CARRIER_HZ: f64 = 28e9;
pub const DEFAULT_BANDWIDTH_HZ: f64 = 100e6;

/// Frequency sampling of a sweep: `count` points spaced `bandwidth / count`
/// apart and centered on the carrier.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencyPlan {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub count: usize,
}

impl Default for FrequencyPlan {
    fn default() -> Self {
        Self { carrier_hz: DEFAULT_CARRIER_HZ, bandwidth_hz: DEFAULT_BANDWIDTH_HZ, count: 257 }
    }
}

impl FrequencyPlan {
    pub fn new(carrier_hz: f64, bandwidth_hz: f64, count: usize) -> Self {
        Self { carrier_hz, bandwidth_hz, count }
    }

    pub fn step_hz(&self) -> f64 {
        self.bandwidth_hz / self.count as f64
    }

    pub fn start_hz(&self) -> f64 {
        self.carrier_hz - self.step_hz() * (self.count as f64 - 1.0) / 2.0
    }

    pub fn frequencies(&self) -> Vec<f64> {
        let (start, step) = (self.start_hz(), self.step_hz());
        (0..self.count).map(|i| start + step * i as f64).collect()
    }

    /// Unambiguous delay range in ns.
    pub fn delay_span_ns(&self) -> f64 {
        1e9 / self.step_hz()
    }

    /// Delay resolution of the inverse DFT, ns.
    pub fn delay_bin_ns(&self) -> f64 {
        self.delay_span_ns() / self.count as f64
    }

    pub fn normalize_delay(&self, delay_ns: f64) -> f64 {
        2.0 * PI * self.step_hz() * delay_ns * 1e-9
    }

    pub fn physical_delay(&self, normalized: f64) -> f64 {
        normalized / (2.0 * PI * self.step_hz()) * 1e9
    }
}

/// One specular path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Path {
    pub delay_ns: f64,
    pub tx: Direction,
    pub rx: Direction,
    /// Normalized Doppler, radians per snapshot.
    #[serde(default)]
    pub doppler: f64,
    pub weight: Complex64,
}

impl Path {
    pub fn new(delay_ns: f64, tx: Direction, rx: Direction, weight: Complex64) -> Self {
        Self { delay_ns, tx, rx, doppler: 0.0, weight }
    }

    pub fn power_db(&self) -> f64 {
        20.0 * self.weight.norm().log10()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathSet {
    pub paths: Vec<Path>,
}

impl PathSet {
    pub fn new(paths: Vec<Path>) -> Self {
        Self { paths }
    }

    pub fn len(&self) -> usize {
        self.paths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.paths.is_empty()
    }

    /// Checks angle ranges and that every delay fits the plan's span.
    pub fn validate(&self, plan: &FrequencyPlan) -> Result<()> {
        for (i, p) in self.paths.iter().enumerate() {
            let tau = plan.normalize_delay(p.delay_ns);
            if !(0.0..2.0 * PI).contains(&tau) {
                return Err(Error::Dimension(format!("path {i}: delay {} ns outside span", p.delay_ns)));
            }
            for d in [p.tx, p.rx] {
                if !(-PI..PI).contains(&d.azimuth) || !(0.0..=PI).contains(&d.elevation) {
                    return Err(Error::Dimension(format!("path {i}: direction out of range")));
                }
            }
        }
        Ok(())
    }

    /// Paths sorted by decreasing power.
    pub fn sorted_by_power(&self) -> Self {
        let mut paths = self.paths.clone();
        paths.sort_by(|a, b| b.weight.norm().total_cmp(&a.weight.norm()));
        Self { paths }
    }
}

/// Common frequency response of the sounder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemResponse {
    pub g: Vec<Complex64>,
    pub start_hz: f64,
    pub step_hz: f64,
}

impl SystemResponse {
    pub fn new(g: Vec<Complex64>, plan: &FrequencyPlan) -> Result<Self> {
        if g.len() != plan.count || g.is_empty() {
            return Err(Error::Dimension(format!("{} response samples for {} frequencies", g.len(), plan.count)));
        }
        if let Some(i) = g.iter().position(|x| x.norm() == 0.0) {
            return Err(Error::ZeroDenominator(vec![i]));
        }
        Ok(Self { g, start_hz: plan.start_hz(), step_hz: plan.step_hz() })
    }

    pub fn flat(plan: &FrequencyPlan) -> Self {
        Self { g: vec![Complex64::new(1.0, 0.0); plan.count], start_hz: plan.start_hz(), step_hz: plan.step_hz() }
    }

    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Snapshot,
    TxBeam,
    RxBeam,
    Frequency,
}

/// Axis order of the observation vector, slowest first.
pub const CANONICAL_AXES: [Axis; 4] = [Axis::Snapshot, Axis::TxBeam, Axis::RxBeam, Axis::Frequency];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_freq: usize,
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_time: usize,
}

impl Dims {
    pub fn new(n_freq: usize, n_rx: usize, n_tx: usize) -> Self {
        Self { n_freq, n_rx, n_tx, n_time: 1 }
    }

    pub fn len(&self) -> usize {
        self.n_freq * self.n_rx * self.n_tx * self.n_time
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn extent(&self, axis: Axis) -> usize {
        match axis {
            Axis::Snapshot => self.n_time,
            Axis::TxBeam => self.n_tx,
            Axis::RxBeam => self.n_rx,
            Axis::Frequency => self.n_freq,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub y: Vec<Complex64>,
    pub dims: Dims,
    /// Storage order of `y`, slowest axis first.
    pub axes: [Axis; 4],
    pub noise_var: f64,
}

impl Observation {
    pub fn new(y: Vec<Complex64>, dims: Dims) -> Result<Self> {
        if y.len() != dims.len() {
            return Err(Error::Dimension(format!("{} samples for dims of length {}", y.len(), dims.len())));
        }
        Ok(Self { y, dims, axes: CANONICAL_AXES, noise_var: 0.0 })
    }

    pub fn zeros(dims: Dims) -> Self {
        Self { y: vec![Complex64::default(); dims.len()], dims, axes: CANONICAL_AXES, noise_var: 0.0 }
    }

    /// Returns the same data stored in `order`.
    pub fn permuted(&self, order: [Axis; 4]) -> Result<Self> {
        let mut seen = order.to_vec();
        seen.sort_by_key(|a| *a as u8);
        seen.dedup();
        if seen.len() != 4 {
            return Err(Error::Dimension("axis order must name each axis once".into()));
        }
        let ext_from: Vec<usize> = self.axes.iter().map(|&a| self.dims.extent(a)).collect();
        let ext_to: Vec<usize> = order.iter().map(|&a| self.dims.extent(a)).collect();
        // position of each target axis in the source order
        let src_pos: Vec<usize> = order.iter().map(|a| self.axes.iter().position(|b| b == a).unwrap()).collect();
        let mut src_stride = [0usize; 4];
        let mut s = 1;
        for k in (0..4).rev() {
            src_stride[k] = s;
            s *= ext_from[k];
        }
        let mut out = Vec::with_capacity(self.y.len());
        let mut idx = [0usize; 4];
        for _ in 0..self.y.len() {
            let off: usize = (0..4).map(|k| idx[k] * src_stride[src_pos[k]]).sum();
            out.push(self.y[off]);
            for k in (0..4).rev() {
                idx[k] += 1;
                if idx[k] < ext_to[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(Self { y: out, dims: self.dims, axes: order, noise_var: self.noise_var })
    }

    pub fn canonical(&self) -> Result<Self> {
        if self.axes == CANONICAL_AXES {
            return Ok(self.clone());
        }
        self.permuted(CANONICAL_AXES)
    }

    pub fn energy(&self) -> f64 {
        self.y.iter().map(|x| x.norm_sqr()).sum()
    }
}

/// Frequency factor `g_f ⊙ exp(-j (m - (M-1)/2) τ)` of one path.
pub fn delay_response(g: &[Complex64], tau: f64) -> Vec<Complex64> {
    let center = (g.len() as f64 - 1.0) / 2.0;
    g.iter().enumerate().map(|(m, gm)| gm * Complex64::from_polar(1.0, -(m as f64 - center) * tau)).collect()
}

/// Snapshot factor `exp(j (t - (T-1)/2) ν)`.
pub fn doppler_response(n_time: usize, nu: f64) -> Vec<Complex64> {
    let center = (n_time as f64 - 1.0) / 2.0;
    (0..n_time).map(|t| Complex64::from_polar(1.0, (t as f64 - center) * nu)).collect()
}

/// Adds `weight · b_t ⊗ b_T ⊗ b_R ⊗ b_f` to `y` (canonical order).
pub fn accumulate_path(
    y: &mut [Complex64],
    weight: Complex64,
    bt: &[Complex64],
    btx: &[Complex64],
    brx: &[Complex64],
    bf: &[Complex64],
) {
    let (nf, nr, nt) = (bf.len(), brx.len(), btx.len());
    for (it, &vt) in bt.iter().enumerate() {
        for (ix, &vx) in btx.iter().enumerate() {
            let w = weight * vt * vx;
            for (ir, &vr) in brx.iter().enumerate() {
                let wr = w * vr;
                let base = ((it * nt + ix) * nr + ir) * nf;
                for (out, &vf) in y[base..base + nf].iter_mut().zip(bf) {
                    *out += wr * vf;
                }
            }
        }
    }
}

/// Noise-free specular observation.
pub fn synthesize_specular(
    paths: &PathSet,
    tx: &Eadf,
    rx: &Eadf,
    sys: &SystemResponse,
    plan: &FrequencyPlan,
    dims: Dims,
) -> Result<Observation> {
    if tx.n_beams() != dims.n_tx || rx.n_beams() != dims.n_rx {
        return Err(Error::Dimension(format!(
            "EADFs have {}x{} beams, dims declare {}x{}",
            tx.n_beams(),
            rx.n_beams(),
            dims.n_tx,
            dims.n_rx
        )));
    }
    if sys.len() != dims.n_freq || plan.count != dims.n_freq {
        return Err(Error::Dimension(format!("{} frequencies, dims declare {}", sys.len(), dims.n_freq)));
    }
    let mut obs = Observation::zeros(dims);
    for p in &paths.paths {
        let bf = delay_response(&sys.g, plan.normalize_delay(p.delay_ns));
        let bt = doppler_response(dims.n_time, p.doppler);
        accumulate_path(&mut obs.y, p.weight, &bt, &tx.evaluate(p.tx), &rx.evaluate(p.rx), &bf);
    }
    Ok(obs)
}

/// Exponentially decaying diffuse component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmcConfig {
    pub base_delay_ns: f64,
    /// Decay rate of the power-delay profile, 1/ns.
    pub decay_per_ns: f64,
    /// Total power per frequency sample and beam pair.
    pub power: f64,
    pub enabled: bool,
}

impl Default for DmcConfig {
    fn default() -> Self {
        Self { base_delay_ns: 100.0, decay_per_ns: 0.01, power: 0.0, enabled: false }
    }
}

impl DmcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.decay_per_ns > 0.0) || !(self.power >= 0.0) {
            return Err(Error::Config {
                path: "dmc".into(),
                message: "decay rate must be positive and power non-negative".into(),
            });
        }
        Ok(())
    }

    /// Expected power in each delay bin of the plan.
    pub fn bin_powers(&self, plan: &FrequencyPlan) -> Vec<f64> {
        let bin = plan.delay_bin_ns();
        let beta = self.decay_per_ns;
        let mut p: Vec<f64> = (0..plan.count)
            .map(|k| {
                let lo = (k as f64 * bin).max(self.base_delay_ns);
                let hi = (k + 1) as f64 * bin;
                if hi <= lo {
                    return 0.0;
                }
                let t0 = lo - self.base_delay_ns;
                let t1 = hi - self.base_delay_ns;
                ((-beta * t0).exp() - (-beta * t1).exp()) / beta
            })
            .collect();
        let total: f64 = p.iter().sum();
        if total > 0.0 {
            p.iter_mut().for_each(|x| *x *= self.power / total);
        }
        p
    }
}

pub(crate) fn complex_normal(rng: &mut ChaCha8Rng, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Draws a diffuse component, independent across beam pairs and snapshots.
pub fn synthesize_dmc(cfg: &DmcConfig, plan: &FrequencyPlan, dims: Dims, seed: u64) -> Result<Vec<Complex64>> {
    cfg.validate()?;
    if plan.count != dims.n_freq {
        return Err(Error::Dimension("frequency plan does not match dims".into()));
    }
    let mut out = vec![Complex64::default(); dims.len()];
    if !cfg.enabled || cfg.power == 0.0 {
        return Ok(out);
    }
    let m = dims.n_freq;
    let powers = cfg.bin_powers(plan);
    let center = (m as f64 - 1.0) / 2.0;
    // delay bin k maps to exp(-j (f - c) 2πk/M) across frequency
    let recenter: Vec<Complex64> =
        (0..m).map(|k| Complex64::from_polar(1.0, center * 2.0 * PI * k as f64 / m as f64)).collect();
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for chunk in out.chunks_exact_mut(m) {
        for k in 0..m {
            chunk[k] = complex_normal(&mut rng, powers[k]) * recenter[k];
        }
        fft.process(chunk);
    }
    Ok(out)
}

/// Adds white circular Gaussian noise at `snr_db` relative to the mean
/// sample power of `obs`.
pub fn add_noise(obs: &Observation, snr_db: f64, seed: u64) -> Observation {
    let mut out = obs.clone();
    if snr_db == f64::INFINITY {
        return out;
    }
    let signal = obs.energy() / obs.y.len().max(1) as f64;
    let var = signal / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in out.y.iter_mut() {
        *x += complex_normal(&mut rng, var);
    }
    out.noise_var = var;
    out
}

/// LOS plus one specular reflection between two facing arrays.
///
/// TX and RX boresights point at each other; the reflector lies at distance
/// `a` from TX and `b` from RX. Powers follow `1/(4π d²)`.
pub fn two_path_geometry(a: f64, b: f64, d_los: f64) -> Result<PathSet> {
    if !(a > 0.0 && b > 0.0 && d_los > 0.0) || a + b < d_los || (a - b).abs() > d_los {
        return Err(Error::Infeasible(format!("a={a}, b={b}, d={d_los} do not form a triangle")));
    }
    let x = (a * a - b * b + d_los * d_los) / (2.0 * d_los);
    let h = (a * a - x * x).max(0.0).sqrt();
    let dod = h.atan2(x);
    // RX looks along -x, so its local y axis is the global -y
    let doa = (-h).atan2(d_los - x);
    let path = |len: f64, tx: f64, rx: f64| {
        let tau = len / SPEED_OF_LIGHT;
        let amp = (1.0 / (4.0 * PI * len * len)).sqrt();
        Path::new(
            tau * 1e9,
            Direction::new(tx, FRAC_PI_2),
            Direction::new(rx, FRAC_PI_2),
            Complex64::from_polar(amp, -2.0 * PI * DEFAULT_CARRIER_HZ * tau),
        )
    };
    Ok(PathSet::new(vec![path(d_los, 0.0, 0.0), path(a + b, dod, doa)]))
}

/// Two equal-power reflections sharing a departure direction, with arrival
/// azimuths `center ± separation / 2`.
pub fn two_pole_geometry(separation_deg: f64) -> PathSet {
    let dod = 30f64.to_radians();
    let center = -20.0;
    let mk = |delay: f64, doa_deg: f64, phase: f64| {
        Path::new(
            delay,
            Direction::new(dod, FRAC_PI_2),
            Direction::new(doa_deg.to_radians(), FRAC_PI_2),
            Complex64::from_polar(1e-2, phase),
        )
    };
    PathSet::new(vec![
        mk(20.68, center + separation_deg / 2.0, 0.4),
        mk(21.23, center - separation_deg / 2.0, 2.1),
    ])
}

/// Ten-path reference channel. Powers in dB are used as relative weights;
/// phases follow a fixed golden-ratio sequence.
pub fn table1_pathset() -> PathSet {
    const ROWS: [[f64; 6]; 10] = [
        [100.00, 18.45, 109.53, -31.21, 104.56, -20.00],
        [165.17, -0.70, 90.00, 46.38, 53.39, -22.83],
        [311.45, 33.49, 88.39, -56.56, 55.72, -29.18],
        [383.01, 25.80, 122.38, -1.21, 91.73, -32.29],
        [430.16, 48.45, 98.79, -39.85, 57.74, -34.34],
        [468.86, 46.91, 99.41, 57.44, 115.45, -36.02],
        [561.61, -19.90, 118.76, 25.52, 115.40, -40.05],
        [661.73, 23.85, 114.44, 0.06, 107.80, -44.40],
        [662.94, -36.26, 96.14, -3.47, 61.99, -44.45],
        [990.65, -56.34, 64.63, -52.85, 102.77, -58.68],
    ];
    let golden = (5f64.sqrt() - 1.0) / 2.0;
    PathSet::new(
        ROWS.iter()
            .enumerate()
            .map(|(i, r)| {
                let phase = 2.0 * PI * ((i + 1) as f64 * golden).fract();
                Path::new(
                    r[0],
                    Direction::from_degrees(r[1], r[2]),
                    Direction::from_degrees(r[3], r[4]),
                    Complex64::from_polar(10f64.powf(r[5] / 20.0), phase),
                )
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eadf::{compute_eadf, ComplexPattern};
    use rand::Rng;

    fn unit_eadf(beams: usize) -> Eadf {
        let p = ComplexPattern::sample(beams, 4, 1, |_| vec![Complex64::new(1.0, 0.0); beams]).unwrap();
        compute_eadf(&p, None).unwrap()
    }

    fn smooth_eadf(beams: usize, seed: u64) -> Eadf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: Vec<(f64, f64)> = (0..beams).map(|_| (rng.random::<f64>(), rng.random::<f64>() * 3.0)).collect();
        let p = ComplexPattern::sample(beams, 16, 9, |d| {
            c.iter()
                .map(|&(a, b)| Complex64::from_polar(1.0 + a * d.elevation.sin(), b * d.azimuth.sin() * d.elevation.sin()))
                .collect()
        })
        .unwrap();
        compute_eadf(&p, None).unwrap()
    }

    #[test]
    fn no_paths_gives_zero() {
        let plan = FrequencyPlan::new(28e9, 100e6, 8);
        let obs = synthesize_specular(&PathSet::default(), &unit_eadf(2), &unit_eadf(3), &SystemResponse::flat(&plan), &plan, Dims::new(8, 3, 2)).unwrap();
        assert!(obs.y.iter().all(|x| *x == Complex64::default()));
    }

    #[test]
    fn trivial_path_is_all_ones() {
        let plan = FrequencyPlan::new(28e9, 100e6, 6);
        let p = Path::new(0.0, Direction::boresight(), Direction::boresight(), Complex64::new(1.0, 0.0));
        let obs = synthesize_specular(&PathSet::new(vec![p]), &unit_eadf(1), &unit_eadf(1), &SystemResponse::flat(&plan), &plan, Dims::new(6, 1, 1)).unwrap();
        assert!(obs.y.iter().all(|x| (x - Complex64::new(1.0, 0.0)).norm() < 1e-14));
    }

    #[test]
    fn delay_phasor_matches_loop() {
        let plan = FrequencyPlan::new(28e9, 100e6, 4);
        let delay_ns = plan.physical_delay(PI / 4.0);
        let p = Path::new(delay_ns, Direction::boresight(), Direction::boresight(), Complex64::new(1.0, 0.0));
        let obs = synthesize_specular(&PathSet::new(vec![p]), &unit_eadf(1), &unit_eadf(1), &SystemResponse::flat(&plan), &plan, Dims::new(4, 1, 1)).unwrap();
        for m in 0..4 {
            let expected = Complex64::from_polar(1.0, -(m as f64 - 1.5) * PI / 4.0);
            assert!((obs.y[m] - expected).norm() < 1e-13);
        }
    }

    #[test]
    fn multi_beam_matches_direct_loop() {
        let plan = FrequencyPlan::new(28e9, 100e6, 5);
        let (tx, rx) = (smooth_eadf(3, 1), smooth_eadf(2, 2));
        let g: Vec<Complex64> = (0..5).map(|i| Complex64::from_polar(1.0 + 0.1 * i as f64, 0.3 * i as f64)).collect();
        let sys = SystemResponse::new(g.clone(), &plan).unwrap();
        let p = Path::new(37.0, Direction::new(0.2, 1.3), Direction::new(-0.5, 1.8), Complex64::new(0.3, -0.7));
        let obs = synthesize_specular(&PathSet::new(vec![p.clone()]), &tx, &rx, &sys, &plan, Dims::new(5, 2, 3)).unwrap();
        let (bt, br) = (tx.evaluate(p.tx), rx.evaluate(p.rx));
        let tau = plan.normalize_delay(37.0);
        for t in 0..3 {
            for r in 0..2 {
                for f in 0..5 {
                    let v = p.weight * bt[t] * br[r] * g[f] * Complex64::from_polar(1.0, -(f as f64 - 2.0) * tau);
                    assert!((obs.y[(t * 2 + r) * 5 + f] - v).norm() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn dims_are_checked() {
        let plan = FrequencyPlan::new(28e9, 100e6, 4);
        let r = synthesize_specular(&PathSet::default(), &unit_eadf(2), &unit_eadf(2), &SystemResponse::flat(&plan), &plan, Dims::new(4, 2, 3));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn unit_path_energy_equals_sample_count() {
        let plan = FrequencyPlan::new(28e9, 100e6, 16);
        let p = Path::new(123.0, Direction::new(0.3, 1.0), Direction::new(-1.0, 2.0), Complex64::new(0.0, 1.0));
        let obs = synthesize_specular(&PathSet::new(vec![p]), &unit_eadf(3), &unit_eadf(4), &SystemResponse::flat(&plan), &plan, Dims::new(16, 4, 3)).unwrap();
        assert!((obs.energy() - 16.0 * 12.0).abs() < 1e-9);
    }

    #[test]
    fn permutation_round_trip() {
        let dims = Dims { n_freq: 3, n_rx: 2, n_tx: 4, n_time: 2 };
        let y: Vec<Complex64> = (0..dims.len()).map(|i| Complex64::new(i as f64, 0.0)).collect();
        let obs = Observation::new(y, dims).unwrap();
        let order = [Axis::Frequency, Axis::Snapshot, Axis::RxBeam, Axis::TxBeam];
        let p = obs.permuted(order).unwrap();
        // element (t=1, tx=2, rx=1, f=0) of the canonical layout
        let canon = ((1 * 4 + 2) * 2 + 1) * 3;
        let moved = ((0 * 2 + 1) * 2 + 1) * 4 + 2;
        assert_eq!(p.y[moved], obs.y[canon]);
        assert_eq!(p.canonical().unwrap(), obs);
        assert!(obs.permuted([Axis::Frequency; 4]).is_err());
    }

    #[test]
    fn dmc_disabled_or_zero_power() {
        let plan = FrequencyPlan::new(28e9, 100e6, 32);
        let dims = Dims::new(32, 2, 2);
        let cfg = DmcConfig { power: 0.0, enabled: true, ..Default::default() };
        assert!(synthesize_dmc(&cfg, &plan, dims, 1).unwrap().iter().all(|x| x.norm() == 0.0));
        let cfg = DmcConfig { power: 1.0, enabled: false, ..Default::default() };
        assert!(synthesize_dmc(&cfg, &plan, dims, 1).unwrap().iter().all(|x| x.norm() == 0.0));
    }

    #[test]
    fn dmc_is_deterministic() {
        let plan = FrequencyPlan::new(28e9, 100e6, 32);
        let cfg = DmcConfig { power: 1.0, enabled: true, ..Default::default() };
        let a = synthesize_dmc(&cfg, &plan, Dims::new(32, 2, 2), 9).unwrap();
        let b = synthesize_dmc(&cfg, &plan, Dims::new(32, 2, 2), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dmc_decay_fit() {
        let plan = FrequencyPlan::default();
        let cfg = DmcConfig { base_delay_ns: 200.0, decay_per_ns: 0.02, power: 1.0, enabled: true };
        let dims = Dims::new(plan.count, 1, 1);
        let m = plan.count;
        let mut pdp = vec![0.0; m];
        let ifft = FftPlanner::new().plan_fft_inverse(m);
        let center = (m as f64 - 1.0) / 2.0;
        let draws = 10_000;
        for seed in 0..draws {
            let mut y = synthesize_dmc(&cfg, &plan, dims, seed).unwrap();
            ifft.process(&mut y);
            for k in 0..m {
                let undo = Complex64::from_polar(1.0, -center * 2.0 * PI * k as f64 / m as f64);
                pdp[k] += (y[k] * undo / m as f64).norm_sqr() / draws as f64;
            }
        }
        // least-squares slope of ln PDP over the bins fully past the onset
        let bin = plan.delay_bin_ns();
        let pts: Vec<(f64, f64)> = (21..60).map(|k| (k as f64 * bin, pdp[k].ln())).collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let beta = -sxy / sxx;
        assert!((beta - 0.02).abs() < 0.002, "fitted decay {beta}");
        assert!(pdp[..19].iter().all(|&p| p < 1e-3 * pdp[21]));
    }

    #[test]
    fn noise_snr_and_determinism() {
        let plan = FrequencyPlan::new(28e9, 100e6, 64);
        let p = Path::new(50.0, Direction::boresight(), Direction::boresight(), Complex64::new(1.0, 0.0));
        let obs = synthesize_specular(&PathSet::new(vec![p]), &unit_eadf(2), &unit_eadf(2), &SystemResponse::flat(&plan), &plan, Dims::new(64, 2, 2)).unwrap();
        assert_eq!(add_noise(&obs, f64::INFINITY, 3), obs);
        let mut mean_snr = 0.0;
        for seed in 0..100 {
            let n = add_noise(&obs, 20.0, seed);
            let noise: f64 = n.y.iter().zip(&obs.y).map(|(a, b)| (a - b).norm_sqr()).sum();
            mean_snr += 10.0 * (obs.energy() / noise).log10() / 100.0;
        }
        assert!((mean_snr - 20.0).abs() < 0.5, "{mean_snr}");
        assert_eq!(add_noise(&obs, 10.0, 5), add_noise(&obs, 10.0, 5));
        assert!((add_noise(&obs, 10.0, 5).noise_var - 0.1).abs() < 1e-12);
    }

    #[test]
    fn two_path_reference_geometry() {
        let ps = two_path_geometry(3.15, 3.15, 5.65).unwrap();
        let (los, refl) = (&ps.paths[0], &ps.paths[1]);
        let extra = refl.delay_ns - los.delay_ns;
        assert!((extra - 2.17).abs() < 0.01, "{extra}");
        assert!((refl.tx.azimuth.to_degrees() - 26.0).abs() < 0.5);
        assert!((refl.rx.azimuth.to_degrees() + 26.0).abs() < 0.5);
        assert!((los.power_db() + 26.03).abs() < 0.01, "{}", los.power_db());
    }

    #[test]
    fn two_path_degenerate_and_infeasible() {
        let ps = two_path_geometry(2.0, 2.0, 4.0).unwrap();
        assert!((ps.paths[1].delay_ns - ps.paths[0].delay_ns).abs() < 1e-12);
        assert!(ps.paths[1].tx.azimuth.abs() < 1e-12);
        assert!(matches!(two_path_geometry(1.0, 1.0, 5.65), Err(Error::Infeasible(_))));
    }

    #[test]
    fn table1_reference_values() {
        let t = table1_pathset();
        assert_eq!(t.len(), 10);
        assert!((t.paths[0].delay_ns - 100.00).abs() < 1e-12);
        assert!((t.paths[9].power_db() + 58.68).abs() < 1e-9);
        assert!((t.paths[0].tx.azimuth.to_degrees() - 18.45).abs() < 1e-9);
        assert!((t.paths[0].rx.elevation.to_degrees() - 104.56).abs() < 1e-9);
        assert!(t.paths.windows(2).all(|w| w[0].power_db() > w[1].power_db()));
        t.validate(&FrequencyPlan::default()).unwrap();
    }

    #[test]
    fn plan_delay_conversion() {
        let plan = FrequencyPlan::default();
        assert!((plan.delay_span_ns() - 2570.0).abs() < 1e-9);
        assert!((plan.delay_bin_ns() - 10.0).abs() < 1e-12);
        assert!((plan.physical_delay(plan.normalize_delay(123.4)) - 123.4).abs() < 1e-10);
    }
}
