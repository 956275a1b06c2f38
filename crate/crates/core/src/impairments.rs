//! Calibration impairments: array-center misalignment and phase noise.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{distorted_element_responses, orientation_to_direction, BeamWeights, ProbeSetup, UraGeometry};
use crate::calib::{AcquisitionOrder, CalibrationTensor};
use crate::eadf::{azimuth_grid, elevation_grid, ComplexPattern};
use crate::error::{Error, Result};
use crate::synth::Observation;

/// Slow phase drift, common to all beams at one orientation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SlowPhase {
    Disabled,
    /// Gaussian random walk across orientations.
    RandomWalk { step_std_deg: f64 },
    /// First-order low-pass Gaussian process; `coherence` is measured in
    /// orientations.
    LowPass { std_deg: f64, coherence: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseNoiseModel {
    pub fast_std_deg: f64,
    pub fast_mean_deg: f64,
    pub slow: SlowPhase,
    pub seed: u64,
}

impl Default for PhaseNoiseModel {
    fn default() -> Self {
        Self { fast_std_deg: 4.8, fast_mean_deg: -0.01, slow: SlowPhase::RandomWalk { step_std_deg: 2.0 }, seed: 0 }
    }
}

impl PhaseNoiseModel {
    pub fn disabled() -> Self {
        Self { fast_std_deg: 0.0, fast_mean_deg: 0.0, slow: SlowPhase::Disabled, seed: 0 }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config { path: "phase_noise".into(), message: m.into() });
        if !(self.fast_std_deg >= 0.0) {
            return bad("fast_std_deg must be non-negative");
        }
        match self.slow {
            SlowPhase::RandomWalk { step_std_deg } if !(step_std_deg >= 0.0) => bad("step_std_deg must be non-negative"),
            SlowPhase::LowPass { std_deg, coherence } if !(std_deg >= 0.0) || !(coherence > 0.0) => {
                bad("low-pass slow phase needs std >= 0 and coherence > 0")
            }
            _ => Ok(()),
        }
    }

    fn is_identity(&self) -> bool {
        self.fast_std_deg == 0.0 && self.fast_mean_deg == 0.0 && matches!(self.slow, SlowPhase::Disabled)
    }
}

/// Phase draws in radians: one slow value per orientation and one fast value
/// per (orientation, block) in acquisition order.
#[derive(Clone, Debug)]
pub struct PhaseDraws {
    pub slow: Vec<f64>,
    pub fast: Vec<f64>,
}

pub fn draw_phase_noise(model: &PhaseNoiseModel, n_orient: usize, blocks_per_orient: usize) -> Result<PhaseDraws> {
    model.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
    let fast_dist = Normal::new(model.fast_mean_deg.to_radians(), model.fast_std_deg.to_radians())
        .map_err(|e| Error::Config { path: "phase_noise.fast_std_deg".into(), message: e.to_string() })?;
    let mut slow = Vec::with_capacity(n_orient);
    let mut fast = Vec::with_capacity(n_orient * blocks_per_orient);
    let mut state = 0.0;
    for o in 0..n_orient {
        let w: f64 = StandardNormal.sample(&mut rng);
        state = match model.slow {
            SlowPhase::Disabled => 0.0,
            SlowPhase::RandomWalk { step_std_deg } => {
                if o == 0 {
                    0.0
                } else {
                    state + step_std_deg.to_radians() * w
                }
            }
            SlowPhase::LowPass { std_deg, coherence } => {
                let rho = (-1.0 / coherence).exp();
                let s = std_deg.to_radians();
                if o == 0 {
                    s * w
                } else {
                    rho * state + (1.0 - rho * rho).sqrt() * s * w
                }
            }
        };
        slow.push(state);
        for _ in 0..blocks_per_orient {
            fast.push(fast_dist.sample(&mut rng));
        }
    }
    Ok(PhaseDraws { slow, fast })
}

/// Multiplies each (orientation, gain, beam) frequency sweep by its fast
/// phase and the orientation's slow phase.
pub fn apply_phase_noise(calib: &CalibrationTensor, model: &PhaseNoiseModel) -> Result<CalibrationTensor> {
    if calib.order.is_none() {
        return Err(Error::MissingOrder);
    }
    let mut out = calib.clone();
    if model.is_identity() {
        return Ok(out);
    }
    let blocks = calib.n_gain * calib.n_beam;
    let draws = draw_phase_noise(model, calib.n_orient, blocks)?;
    for (block, sweep) in out.data.chunks_exact_mut(calib.n_freq).enumerate() {
        let o = block / blocks;
        let rot = Complex64::from_polar(1.0, draws.slow[o] + draws.fast[block]);
        sweep.iter_mut().for_each(|x| *x *= rot);
    }
    Ok(out)
}

/// Applies only the fast component, one draw per beam-pair slot of each
/// snapshot.
pub fn measurement_fast_pn(obs: &Observation, model: &PhaseNoiseModel) -> Result<Observation> {
    let mut out = obs.canonical()?;
    if model.fast_std_deg == 0.0 && model.fast_mean_deg == 0.0 {
        return Ok(out);
    }
    let fast_only = PhaseNoiseModel { slow: SlowPhase::Disabled, ..*model };
    let slots = out.y.len() / out.dims.n_freq;
    let draws = draw_phase_noise(&fast_only, 1, slots)?;
    for (slot, sweep) in out.y.chunks_exact_mut(out.dims.n_freq).enumerate() {
        let rot = Complex64::from_polar(1.0, draws.fast[slot]);
        sweep.iter_mut().for_each(|x| *x *= rot);
    }
    Ok(out)
}

/// Turntable orientations covering the canonical `n_az x n_el` pattern grid.
/// Azimuth runs fastest; elevation rows are visited from 0 to π.
pub fn calibration_schedule(n_az: usize, n_el: usize) -> Vec<(f64, f64)> {
    let az = azimuth_grid(n_az);
    let mut out = Vec::with_capacity(n_az * n_el);
    for el in elevation_grid(n_el) {
        for &a in &az {
            out.push(crate::array::direction_to_orientation(crate::array::Direction::new(a, el)));
        }
    }
    out
}

/// Simulated turntable calibration with the spherical-wave probe model.
pub fn generate_misaligned_calibration(
    geom: &UraGeometry,
    probe: &ProbeSetup,
    beams: &[BeamWeights],
    frequencies: &[f64],
) -> Result<CalibrationTensor> {
    if probe.schedule.is_empty() {
        return Err(Error::Geometry("probe schedule is empty".into()));
    }
    let weights: Vec<Vec<Complex64>> = beams.iter().map(|w| w.element_vector()).collect();
    if weights.iter().any(|w| w.len() != geom.n_elements()) {
        return Err(Error::Shape { expected: format!("{} weights", geom.n_elements()), actual: "other".into() });
    }
    let mut data = Vec::with_capacity(probe.schedule.len() * beams.len() * frequencies.len());
    let mut per_freq = Vec::with_capacity(frequencies.len());
    for &orient in &probe.schedule {
        per_freq.clear();
        for &f in frequencies {
            per_freq.push(distorted_element_responses(geom, probe, f, orient)?);
        }
        for w in &weights {
            for x in &per_freq {
                data.push(w.iter().zip(x).map(|(a, b)| a * b).sum());
            }
        }
    }
    CalibrationTensor::new(data, 1, beams.len(), probe.schedule.clone(), frequencies.to_vec(), AcquisitionOrder::Baseline)
}

/// Rearranges one frequency slice of a calibration tensor recorded on
/// [`calibration_schedule`] into a pattern on the canonical grid.
pub fn pattern_from_calibration(
    calib: &CalibrationTensor,
    n_az: usize,
    n_el: usize,
    freq_index: usize,
    gain: usize,
) -> Result<ComplexPattern> {
    let expected = calibration_schedule(n_az, n_el);
    let same = expected.len() == calib.orientations.len()
        && expected.iter().zip(&calib.orientations).all(|(a, b)| (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9);
    if !same {
        return Err(Error::Grid(format!("orientations do not form the {n_az}x{n_el} calibration grid")));
    }
    if freq_index >= calib.n_freq || gain >= calib.n_gain {
        return Err(Error::Dimension("frequency or gain index out of range".into()));
    }
    let nb = calib.n_beam;
    let mut values = vec![Complex64::default(); nb * n_az * n_el];
    for ie in 0..n_el {
        for ia in 0..n_az {
            let o = ie * n_az + ia;
            for b in 0..nb {
                values[(b * n_az + ia) * n_el + ie] = calib.get(o, gain, b, freq_index);
            }
        }
    }
    ComplexPattern::new(nb, n_az, n_el, values)
}

/// Adds white circular Gaussian noise at `snr_db` below the mean sample
/// power.
pub fn add_calibration_noise(calib: &CalibrationTensor, snr_db: f64, seed: u64) -> CalibrationTensor {
    let mut out = calib.clone();
    let power = calib.data.iter().map(|x| x.norm_sqr()).sum::<f64>() / calib.data.len().max(1) as f64;
    let var = power / 10f64.powf(snr_db / 10.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in out.data.iter_mut() {
        *x += crate::synth::complex_normal(&mut rng, var);
    }
    out
}

/// Direction seen by the probe for every scheduled orientation.
pub fn schedule_directions(schedule: &[(f64, f64)]) -> Vec<crate::array::Direction> {
    schedule.iter().map(|&o| orientation_to_direction(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{dft_beam_bank, steering_vector};
    use crate::eadf::{compute_eadf, Gate};
    use crate::synth::Dims;
    use nalgebra::Vector3;
    use rand::Rng;
    use std::f64::consts::PI;

    fn small_tensor(n_orient: usize, n_beam: usize, n_freq: usize, seed: u64) -> CalibrationTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n_orient * n_beam * n_freq)
            .map(|_| Complex64::new(rng.random::<f64>() + 0.1, rng.random::<f64>() - 0.5))
            .collect();
        let orients = (0..n_orient).map(|i| (i as f64 * 0.1, PI / 2.0)).collect();
        let freqs = (0..n_freq).map(|i| 28e9 + i as f64 * 1e6).collect();
        CalibrationTensor::new(data, 1, n_beam, orients, freqs, AcquisitionOrder::Baseline).unwrap()
    }

    #[test]
    fn disabled_model_is_identity() {
        let t = small_tensor(4, 3, 5, 1);
        assert_eq!(apply_phase_noise(&t, &PhaseNoiseModel::disabled()).unwrap(), t);
    }

    #[test]
    fn missing_order_is_rejected() {
        let mut t = small_tensor(2, 2, 2, 1);
        t.order = None;
        assert!(matches!(apply_phase_noise(&t, &PhaseNoiseModel::default()), Err(Error::MissingOrder)));
    }

    #[test]
    fn fast_std_matches_configuration() {
        let m = PhaseNoiseModel { slow: SlowPhase::Disabled, ..Default::default() }.with_seed(3);
        let d = draw_phase_noise(&m, 100, 100).unwrap();
        let n = d.fast.len() as f64;
        let mean = d.fast.iter().sum::<f64>() / n;
        let std = (d.fast.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt().to_degrees();
        assert!((4.6..=5.0).contains(&std), "{std}");
    }

    #[test]
    fn fast_draws_pass_two_sample_ks() {
        let m = PhaseNoiseModel { slow: SlowPhase::Disabled, ..Default::default() }.with_seed(21);
        let mut a = draw_phase_noise(&m, 1, 1000).unwrap().fast;
        let reference = Normal::new((-0.01f64).to_radians(), 4.8f64.to_radians()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut b: Vec<f64> = (0..1000).map(|_| reference.sample(&mut rng)).collect();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / 1000.0 - j as f64 / 1000.0).abs());
        }
        // critical value at the 5% level for two samples of 1000
        assert!(d < 1.358 * (2.0f64 / 1000.0).sqrt(), "KS statistic {d}");
    }

    #[test]
    fn slow_component_shared_across_beams() {
        let t = small_tensor(6, 4, 3, 2);
        let m = PhaseNoiseModel { fast_std_deg: 0.0, fast_mean_deg: 0.0, slow: SlowPhase::RandomWalk { step_std_deg: 5.0 }, seed: 4 };
        let out = apply_phase_noise(&t, &m).unwrap();
        let phase = |o: usize, b: usize| (out.get(o, 0, b, 0) / t.get(o, 0, b, 0)).arg();
        for o in 0..6 {
            for b in 1..4 {
                assert!((phase(o, b) - phase(o, 0)).abs() < 1e-12);
            }
        }
        assert!((phase(3, 0) - phase(4, 0)).abs() > 1e-6);
    }

    #[test]
    fn one_draw_per_sweep_and_frequency_scaling_commutes() {
        let t = small_tensor(5, 3, 8, 3);
        let m = PhaseNoiseModel::default().with_seed(8);
        let out = apply_phase_noise(&t, &m).unwrap();
        for o in 0..5 {
            for b in 0..3 {
                let p0 = (out.get(o, 0, b, 0) / t.get(o, 0, b, 0)).arg();
                for f in 1..8 {
                    assert!(((out.get(o, 0, b, f) / t.get(o, 0, b, f)).arg() - p0).abs() < 1e-12);
                }
            }
        }
        let scale: Vec<Complex64> = (0..8).map(|f| Complex64::from_polar(1.0 + f as f64, 0.3 * f as f64)).collect();
        let scaled = |c: &CalibrationTensor| {
            let mut c = c.clone();
            for sweep in c.data.chunks_exact_mut(8) {
                sweep.iter_mut().zip(&scale).for_each(|(x, s)| *x *= s);
            }
            c
        };
        let a = apply_phase_noise(&scaled(&t), &m).unwrap();
        let b = scaled(&out);
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| (x - y).norm() < 1e-12 * y.norm()));
    }

    #[test]
    fn impairments_preserve_magnitude() {
        let t = small_tensor(7, 3, 4, 5);
        let out = apply_phase_noise(&t, &PhaseNoiseModel::default()).unwrap();
        assert!(out.data.iter().zip(&t.data).all(|(a, b)| (a.norm() - b.norm()).abs() <= 1e-15 * b.norm().max(1.0)));
    }

    #[test]
    fn measurement_pn_is_white_and_reproducible() {
        let dims = Dims { n_freq: 4, n_rx: 19, n_tx: 19, n_time: 40 };
        let obs = Observation::new(vec![Complex64::new(1.0, 0.0); dims.len()], dims).unwrap();
        assert_eq!(measurement_fast_pn(&obs, &PhaseNoiseModel::disabled()).unwrap(), obs);
        let m = PhaseNoiseModel::default().with_seed(12);
        let a = measurement_fast_pn(&obs, &m).unwrap();
        assert_eq!(a, measurement_fast_pn(&obs, &m).unwrap());
        let ph: Vec<f64> = a.y.chunks_exact(4).map(|s| s[0].arg()).collect();
        let mean = ph.iter().sum::<f64>() / ph.len() as f64;
        let c: Vec<f64> = ph.iter().map(|p| p - mean).collect();
        let c0: f64 = c.iter().map(|x| x * x).sum();
        for lag in 1..6 {
            let cl: f64 = c.iter().zip(&c[lag..]).map(|(a, b)| a * b).sum();
            assert!((cl / c0).abs() < 0.05, "lag {lag}: {}", cl / c0);
        }
    }

    fn geometry() -> UraGeometry {
        UraGeometry::half_wavelength(8, 2, 28e9).unwrap()
    }

    #[test]
    fn aligned_calibration_matches_plane_wave() {
        let g = geometry();
        let bank = dft_beam_bank(&g, 19, 1);
        let mut probe = ProbeSetup::chamber_default(Vector3::zeros());
        probe.schedule = calibration_schedule(36, 1);
        let t = generate_misaligned_calibration(&g, &probe, &bank, &[28e9]).unwrap();
        let common = Complex64::from_polar(1.0, -2.0 * PI * 28e9 * 5.0 / crate::array::SPEED_OF_LIGHT);
        let mut num = 0.0;
        let mut den = 0.0;
        for (o, d) in schedule_directions(&probe.schedule).into_iter().enumerate() {
            let x = steering_vector(&g, d);
            for (b, w) in bank.iter().enumerate() {
                let ideal: Complex64 = w.element_vector().iter().zip(&x).map(|(a, c)| a * c).sum::<Complex64>() * common;
                num += (t.get(o, 0, b, 0) - ideal).norm_sqr();
                den += ideal.norm_sqr();
            }
        }
        // only the spherical-wave curvature at 5 m separates the two
        assert!((num / den).sqrt() < 0.05, "{}", (num / den).sqrt());
    }

    #[test]
    fn offset_produces_phase_slope() {
        let g = geometry();
        let lam = g.wavelength;
        let bank = dft_beam_bank(&g, 19, 1);
        let slope = |offset: f64| {
            let mut probe = ProbeSetup::chamber_default(Vector3::new(1.0, 1.0, 1.0) * offset * lam);
            probe.schedule = (-10..=10).map(|i| ((i as f64).to_radians(), PI / 2.0)).collect();
            let t = generate_misaligned_calibration(&g, &probe, &bank[9..10], &[28e9]).unwrap();
            let mut ph: Vec<f64> = (0..21).map(|o| t.get(o, 0, 0, 0).arg()).collect();
            for i in 1..ph.len() {
                while ph[i] - ph[i - 1] > PI {
                    ph[i] -= 2.0 * PI;
                }
                while ph[i] - ph[i - 1] < -PI {
                    ph[i] += 2.0 * PI;
                }
            }
            let xs: Vec<f64> = (-10..=10).map(|i| (i as f64).to_radians()).collect();
            let mx = xs.iter().sum::<f64>() / 21.0;
            let my = ph.iter().sum::<f64>() / 21.0;
            xs.iter().zip(&ph).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>()
        };
        assert!(slope(0.0).abs() < 0.5, "{}", slope(0.0));
        // a y-offset of 3λ moves the phase center by ~2π·3 rad per radian
        assert!((slope(3.0).abs() - 6.0 * PI).abs() < 2.0, "{}", slope(3.0));
    }

    #[test]
    fn out_of_window_energy_grows_with_offset() {
        let g = geometry();
        let lam = g.wavelength;
        let bank = dft_beam_bank(&g, 19, 2);
        let (n_az, n_el) = (36, 19);
        let mut last = -1.0;
        for k in 0..4 {
            let mut probe = ProbeSetup::chamber_default(Vector3::new(1.0, 1.0, 1.0) * k as f64 * lam);
            probe.schedule = calibration_schedule(n_az, n_el);
            let t = generate_misaligned_calibration(&g, &probe, &bank, &[28e9]).unwrap();
            let p = pattern_from_calibration(&t, n_az, n_el, 0, 0).unwrap();
            let out = compute_eadf(&p, None).unwrap().energy_outside(Gate::new(g.n_y, g.n_z));
            assert!(out > last, "offset {k}λ: {out} <= {last}");
            last = out;
        }
    }

    #[test]
    fn pattern_layout_round_trip() {
        let g = geometry();
        let bank = dft_beam_bank(&g, 3, 2);
        let mut probe = ProbeSetup::chamber_default(Vector3::zeros());
        probe.schedule = calibration_schedule(8, 5);
        let t = generate_misaligned_calibration(&g, &probe, &bank, &[28e9, 28.01e9]).unwrap();
        let p = pattern_from_calibration(&t, 8, 5, 1, 0).unwrap();
        assert_eq!(p.get(4, 3, 2), t.get(2 * 8 + 3, 0, 4, 1));
        assert!(pattern_from_calibration(&t, 4, 10, 0, 0).is_err());
    }
}
