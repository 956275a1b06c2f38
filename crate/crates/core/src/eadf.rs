//! Effective aperture distribution functions.
//!
//! A beam pattern sampled on a regular sphere grid is turned into a 2-D
//! Fourier series over (elevation, azimuth). Elevation samples on `[0, π]` are
//! extended to the full period with the sphere mirror rule
//! `b(φ, 2π - θ) = b(φ + π, θ)`, which makes the pattern doubly periodic.
//! Modes are indexed symmetrically around DC, `q = -K..=K`, so a mode vector
//! is exactly a column of [`shift_matrix`] with `M = 2K + 1`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::array::{steering_vector, BeamWeights, Direction, UraGeometry};
use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// Complex beam patterns sampled on a uniform grid.
///
/// Azimuth samples are `φ_i = -π + 2π i / n_az`. Elevation samples are
/// `θ_k = π k / (n_el - 1)`; a single elevation sample denotes an azimuth
/// cut at `θ = π/2`. Values are stored as `[beam][azimuth][elevation]`.
#[derive(Clone, Debug)]
pub struct ComplexPattern {
    n_beams: usize,
    n_az: usize,
    n_el: usize,
    values: Vec<Complex64>,
}

impl ComplexPattern {
    pub fn new(n_beams: usize, n_az: usize, n_el: usize, values: Vec<Complex64>) -> Result<Self> {
        if n_beams == 0 {
            return Err(Error::Grid("pattern needs at least one beam".into()));
        }
        if n_az < 2 {
            return Err(Error::Grid(format!("azimuth grid needs >= 2 samples, got {n_az}")));
        }
        if n_el == 0 {
            return Err(Error::Grid("elevation grid is empty".into()));
        }
        if n_el > 1 && n_az % 2 != 0 {
            return Err(Error::Grid(format!(
                "2-D patterns need an even azimuth count for the elevation mirror, got {n_az}"
            )));
        }
        if values.len() != n_beams * n_az * n_el {
            return Err(Error::Grid(format!(
                "expected {} samples, got {}",
                n_beams * n_az * n_el,
                values.len()
            )));
        }
        Ok(Self { n_beams, n_az, n_el, values })
    }

    /// Builds a pattern from explicit grid coordinates, checking that they
    /// form the canonical uniform grid.
    pub fn from_grid(azimuths: &[f64], elevations: &[f64], n_beams: usize, values: Vec<Complex64>) -> Result<Self> {
        let n_az = azimuths.len();
        for (i, &a) in azimuths.iter().enumerate() {
            let expected = -PI + 2.0 * PI * i as f64 / n_az as f64;
            if (a - expected).abs() > GRID_TOL {
                return Err(Error::Grid(format!("azimuth sample {i} is {a}, expected {expected}")));
            }
        }
        let n_el = elevations.len();
        if n_el == 1 {
            if (elevations[0] - FRAC_PI_2).abs() > GRID_TOL {
                return Err(Error::Grid("single-elevation patterns must sit at π/2".into()));
            }
        } else {
            for (k, &e) in elevations.iter().enumerate() {
                let expected = PI * k as f64 / (n_el - 1) as f64;
                if (e - expected).abs() > GRID_TOL {
                    return Err(Error::Grid(format!("elevation sample {k} is {e}, expected {expected}")));
                }
            }
        }
        Self::new(n_beams, n_az, n_el, values)
    }

    /// Samples `f(direction) -> per-beam values` over the grid.
    pub fn sample<F>(n_beams: usize, n_az: usize, n_el: usize, mut f: F) -> Result<Self>
    where
        F: FnMut(Direction) -> Vec<Complex64>,
    {
        let azimuths = azimuth_grid(n_az);
        let elevations = elevation_grid(n_el);
        let mut values = vec![Complex64::default(); n_beams * n_az * n_el];
        for (ia, &a) in azimuths.iter().enumerate() {
            for (ie, &e) in elevations.iter().enumerate() {
                let v = f(Direction::new(a, e));
                assert_eq!(v.len(), n_beams, "sampler returned wrong beam count");
                for (b, x) in v.into_iter().enumerate() {
                    values[(b * n_az + ia) * n_el + ie] = x;
                }
            }
        }
        Self::new(n_beams, n_az, n_el, values)
    }

    pub fn n_beams(&self) -> usize {
        self.n_beams
    }

    pub fn n_azimuth(&self) -> usize {
        self.n_az
    }

    pub fn n_elevation(&self) -> usize {
        self.n_el
    }

    pub fn azimuth_only(&self) -> bool {
        self.n_el == 1
    }

    pub fn azimuths(&self) -> Vec<f64> {
        azimuth_grid(self.n_az)
    }

    pub fn elevations(&self) -> Vec<f64> {
        elevation_grid(self.n_el)
    }

    pub fn get(&self, beam: usize, ia: usize, ie: usize) -> Complex64 {
        self.values[(beam * self.n_az + ia) * self.n_el + ie]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }
}

pub fn azimuth_grid(n: usize) -> Vec<f64> {
    (0..n).map(|i| -PI + 2.0 * PI * i as f64 / n as f64).collect()
}

pub fn elevation_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![FRAC_PI_2];
    }
    (0..n).map(|k| PI * k as f64 / (n - 1) as f64).collect()
}

/// Retained mode half-widths: azimuth modes `-azimuth..=azimuth`, elevation
/// modes `-elevation..=elevation`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gate {
    pub azimuth: usize,
    pub elevation: usize,
}

impl Gate {
    pub fn new(azimuth: usize, elevation: usize) -> Self {
        Self { azimuth, elevation }
    }

    /// Aperture-derived gate: the Fourier content of a plane-wave array
    /// response is negligible beyond `k r_max`, so keep that many modes plus
    /// `margin`.
    pub fn for_aperture(radius_in_wavelengths: f64, margin: usize, azimuth_only: bool) -> Self {
        let k = (2.0 * PI * radius_in_wavelengths).ceil() as usize + margin;
        Self::new(k, if azimuth_only { 0 } else { k })
    }
}

/// Fourier coefficients of a beam pattern, stored `[beam][q_el][q_az]`.
#[derive(Clone, Debug)]
pub struct Eadf {
    n_beams: usize,
    k_az: usize,
    k_el: usize,
    coeffs: Vec<Complex64>,
}

/// Value and angular derivatives of every beam at one direction.
#[derive(Clone, Debug)]
pub struct EadfSample {
    pub value: Vec<Complex64>,
    pub d_azimuth: Vec<Complex64>,
    pub d_elevation: Vec<Complex64>,
}

fn fft_axis(data: &mut [Complex64], rows: usize, cols: usize, along_rows: bool, fft: &Arc<dyn Fft<f64>>) {
    // data is row-major rows x cols
    if along_rows {
        for r in 0..rows {
            fft.process(&mut data[r * cols..(r + 1) * cols]);
        }
    } else {
        let mut buf = vec![Complex64::default(); rows];
        for c in 0..cols {
            for r in 0..rows {
                buf[r] = data[r * cols + c];
            }
            fft.process(&mut buf);
            for r in 0..rows {
                data[r * cols + c] = buf[r];
            }
        }
    }
}

/// Maps a signed mode index `q` of an `n`-point DFT onto coefficient weight
/// and bin. Even `n` splits the Nyquist bin evenly between `±n/2`.
fn mode_from_bins(spectrum: impl Fn(usize) -> Complex64, n: usize, q: i64) -> Complex64 {
    let half = n as i64 / 2;
    if n % 2 == 0 && q.abs() == half {
        return spectrum(half as usize) * 0.5;
    }
    spectrum(q.rem_euclid(n as i64) as usize)
}

/// Plane-wave beam-port patterns of a weight bank on the canonical grid.
pub fn sample_beam_pattern(geom: &UraGeometry, bank: &[BeamWeights], n_az: usize, n_el: usize) -> Result<ComplexPattern> {
    let weights: Vec<Vec<Complex64>> = bank.iter().map(|w| w.element_vector()).collect();
    ComplexPattern::sample(bank.len(), n_az, n_el, |d| {
        let x = steering_vector(geom, d);
        weights.iter().map(|w| w.iter().zip(&x).map(|(a, b)| a * b).sum()).collect()
    })
}

/// 2-D DFT of every beam pattern, optionally truncated to `gate`.
pub fn compute_eadf(pattern: &ComplexPattern, gate: Option<Gate>) -> Result<Eadf> {
    let n_az = pattern.n_az;
    let azimuth_only = pattern.azimuth_only();
    let n_ext = if azimuth_only { 1 } else { 2 * (pattern.n_el - 1) };
    let full = Gate::new(n_az / 2, n_ext / 2);
    let gate = gate.unwrap_or(full);
    if gate.azimuth > full.azimuth || gate.elevation > full.elevation {
        return Err(Error::Grid(format!(
            "gate {}x{} exceeds available modes {}x{}",
            gate.azimuth, gate.elevation, full.azimuth, full.elevation
        )));
    }

    let mut planner = FftPlanner::new();
    let fft_az = planner.plan_fft_forward(n_az);
    let fft_el = planner.plan_fft_forward(n_ext);
    let (k_az, k_el) = (gate.azimuth, gate.elevation);
    let (m_az, m_el) = (2 * k_az + 1, 2 * k_el + 1);
    let norm = 1.0 / (n_az * n_ext) as f64;
    let mut coeffs = vec![Complex64::default(); pattern.n_beams * m_az * m_el];
    let mut grid = vec![Complex64::default(); n_ext * n_az];

    for b in 0..pattern.n_beams {
        // grid is [el_ext][az]
        for ie in 0..n_ext {
            for ia in 0..n_az {
                grid[ie * n_az + ia] = if ie < pattern.n_el {
                    pattern.get(b, ia, ie)
                } else {
                    pattern.get(b, (ia + n_az / 2) % n_az, n_ext - ie)
                };
            }
        }
        fft_axis(&mut grid, n_ext, n_az, true, &fft_az);
        if n_ext > 1 {
            fft_axis(&mut grid, n_ext, n_az, false, &fft_el);
        }
        let out = &mut coeffs[b * m_az * m_el..(b + 1) * m_az * m_el];
        for (je, qe) in (-(k_el as i64)..=k_el as i64).enumerate() {
            for (ja, qa) in (-(k_az as i64)..=k_az as i64).enumerate() {
                // azimuth grid starts at -π, hence the (-1)^q factor
                let sign = if qa.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                let v = mode_from_bins(
                    |be| mode_from_bins(|ba| grid[be * n_az + ba], n_az, qa),
                    n_ext,
                    qe,
                );
                out[je * m_az + ja] = v * sign * norm;
            }
        }
    }
    Ok(Eadf { n_beams: pattern.n_beams, k_az, k_el, coeffs })
}

fn phasors(k: usize, angle: f64) -> Vec<Complex64> {
    let step = Complex64::from_polar(1.0, angle);
    let mut cur = Complex64::from_polar(1.0, -(k as f64) * angle);
    let mut out = Vec::with_capacity(2 * k + 1);
    for _ in 0..=2 * k {
        out.push(cur);
        cur *= step;
    }
    out
}

impl Eadf {
    pub fn from_coefficients(n_beams: usize, gate: Gate, coeffs: Vec<Complex64>) -> Result<Self> {
        let expected = n_beams * (2 * gate.azimuth + 1) * (2 * gate.elevation + 1);
        if coeffs.len() != expected {
            return Err(Error::Grid(format!("expected {expected} coefficients, got {}", coeffs.len())));
        }
        Ok(Self { n_beams, k_az: gate.azimuth, k_el: gate.elevation, coeffs })
    }

    pub fn n_beams(&self) -> usize {
        self.n_beams
    }

    pub fn gate(&self) -> Gate {
        Gate::new(self.k_az, self.k_el)
    }

    pub fn azimuth_only(&self) -> bool {
        self.k_el == 0
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coeffs
    }

    fn modes_per_beam(&self) -> usize {
        (2 * self.k_az + 1) * (2 * self.k_el + 1)
    }

    /// Coefficient of beam `b` at signed modes `(q_el, q_az)`.
    pub fn coefficient(&self, b: usize, q_el: i64, q_az: i64) -> Complex64 {
        let m_az = 2 * self.k_az + 1;
        let je = (q_el + self.k_el as i64) as usize;
        let ja = (q_az + self.k_az as i64) as usize;
        self.coeffs[b * self.modes_per_beam() + je * m_az + ja]
    }

    /// Restricts to a smaller mode window.
    pub fn gated(&self, gate: Gate) -> Result<Self> {
        if gate.azimuth > self.k_az || gate.elevation > self.k_el {
            return Err(Error::Grid("gate larger than available modes".into()));
        }
        let m_az = 2 * gate.azimuth + 1;
        let m_el = 2 * gate.elevation + 1;
        let mut coeffs = Vec::with_capacity(self.n_beams * m_az * m_el);
        for b in 0..self.n_beams {
            for qe in -(gate.elevation as i64)..=gate.elevation as i64 {
                for qa in -(gate.azimuth as i64)..=gate.azimuth as i64 {
                    coeffs.push(self.coefficient(b, qe, qa));
                }
            }
        }
        Ok(Self { n_beams: self.n_beams, k_az: gate.azimuth, k_el: gate.elevation, coeffs })
    }

    /// Energy of beam `b` (or all beams) in modes outside `gate`, relative to
    /// the total.
    pub fn energy_outside(&self, gate: Gate) -> f64 {
        let mut total = 0.0;
        let mut outside = 0.0;
        for b in 0..self.n_beams {
            for qe in -(self.k_el as i64)..=self.k_el as i64 {
                for qa in -(self.k_az as i64)..=self.k_az as i64 {
                    let p = self.coefficient(b, qe, qa).norm_sqr();
                    total += p;
                    if qa.unsigned_abs() as usize > gate.azimuth || qe.unsigned_abs() as usize > gate.elevation {
                        outside += p;
                    }
                }
            }
        }
        if total > 0.0 {
            outside / total
        } else {
            0.0
        }
    }

    /// Per-beam pattern values at an arbitrary direction.
    pub fn evaluate(&self, dir: Direction) -> Vec<Complex64> {
        let pa = phasors(self.k_az, dir.azimuth);
        let pe = phasors(self.k_el, dir.elevation);
        let m_az = pa.len();
        let per = self.modes_per_beam();
        (0..self.n_beams)
            .map(|b| {
                let block = &self.coeffs[b * per..(b + 1) * per];
                block
                    .chunks_exact(m_az)
                    .zip(&pe)
                    .map(|(row, e)| e * row.iter().zip(&pa).map(|(g, a)| g * a).sum::<Complex64>())
                    .sum()
            })
            .collect()
    }

    /// Values and analytic derivatives with respect to azimuth and elevation.
    pub fn evaluate_with_gradient(&self, dir: Direction) -> EadfSample {
        let pa = phasors(self.k_az, dir.azimuth);
        let pe = phasors(self.k_el, dir.elevation);
        let m_az = pa.len();
        let per = self.modes_per_beam();
        let j = Complex64::new(0.0, 1.0);
        let mut value = Vec::with_capacity(self.n_beams);
        let mut d_az = Vec::with_capacity(self.n_beams);
        let mut d_el = Vec::with_capacity(self.n_beams);
        for b in 0..self.n_beams {
            let block = &self.coeffs[b * per..(b + 1) * per];
            let (mut v, mut da, mut de) = (Complex64::default(), Complex64::default(), Complex64::default());
            for (je, (row, e)) in block.chunks_exact(m_az).zip(&pe).enumerate() {
                let qe = je as f64 - self.k_el as f64;
                let mut s0 = Complex64::default();
                let mut s1 = Complex64::default();
                for (ja, (g, a)) in row.iter().zip(&pa).enumerate() {
                    let t = g * a;
                    s0 += t;
                    s1 += t * (ja as f64 - self.k_az as f64);
                }
                v += e * s0;
                da += e * s1;
                de += e * s0 * qe;
            }
            value.push(v);
            d_az.push(j * da);
            d_el.push(j * de);
        }
        EadfSample { value, d_azimuth: d_az, d_elevation: d_el }
    }

    /// Evaluates every beam on a rectangular direction grid. The result is
    /// laid out `[elevation][azimuth][beam]`.
    pub fn evaluate_grid(&self, azimuths: &[f64], elevations: &[f64]) -> Vec<Complex64> {
        let m_az = 2 * self.k_az + 1;
        let m_el = 2 * self.k_el + 1;
        let per = self.modes_per_beam();
        let pa: Vec<Vec<Complex64>> = azimuths.iter().map(|&a| phasors(self.k_az, a)).collect();
        let pe: Vec<Vec<Complex64>> = elevations.iter().map(|&e| phasors(self.k_el, e)).collect();
        let (na, ne) = (azimuths.len(), elevations.len());
        let mut out = vec![Complex64::default(); ne * na * self.n_beams];
        let mut partial = vec![Complex64::default(); m_el * na];
        for b in 0..self.n_beams {
            let block = &self.coeffs[b * per..(b + 1) * per];
            for je in 0..m_el {
                let row = &block[je * m_az..(je + 1) * m_az];
                for (ia, p) in pa.iter().enumerate() {
                    partial[je * na + ia] = row.iter().zip(p).map(|(g, a)| g * a).sum();
                }
            }
            for (ie, p) in pe.iter().enumerate() {
                for ia in 0..na {
                    let mut acc = Complex64::default();
                    for je in 0..m_el {
                        acc += p[je] * partial[je * na + ia];
                    }
                    out[(ie * na + ia) * self.n_beams + b] = acc;
                }
            }
        }
        out
    }
}

/// Free-function form of [`Eadf::evaluate`].
pub fn evaluate_eadf(eadf: &Eadf, dir: Direction) -> Vec<Complex64> {
    eadf.evaluate(dir)
}

/// Free-function form of [`Eadf::evaluate_with_gradient`], returning
/// `(∂b/∂φ, ∂b/∂θ)` per beam.
pub fn eadf_derivative(eadf: &Eadf, dir: Direction) -> (Vec<Complex64>, Vec<Complex64>) {
    let s = eadf.evaluate_with_gradient(dir);
    (s.d_azimuth, s.d_elevation)
}

/// Phase-shift matrix `A(μ)` with entries `exp(j (m - (M-1)/2) μ_p)`.
#[derive(Clone, Debug)]
pub struct ShiftMatrix {
    pub size: usize,
    pub mu: Vec<f64>,
    pub data: DMatrix<Complex64>,
}

pub fn shift_matrix(size: usize, mu: &[f64]) -> ShiftMatrix {
    let center = (size as f64 - 1.0) / 2.0;
    let data = DMatrix::from_fn(size, mu.len(), |m, p| Complex64::from_polar(1.0, (m as f64 - center) * mu[p]));
    ShiftMatrix { size, mu: mu.to_vec(), data }
}

/// One column of [`shift_matrix`].
pub fn shift_vector(size: usize, mu: f64) -> Vec<Complex64> {
    let center = (size as f64 - 1.0) / 2.0;
    (0..size).map(|m| Complex64::from_polar(1.0, (m as f64 - center) * mu)).collect()
}

/// `b1ᴴ b2 / (‖b1‖ ‖b2‖)`.
pub fn normalized_inner(b1: &[Complex64], b2: &[Complex64]) -> Result<Complex64> {
    if b1.len() != b2.len() {
        return Err(Error::Dimension(format!("vectors of length {} and {}", b1.len(), b2.len())));
    }
    let n1 = b1.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let n2 = b2.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: Complex64 = b1.iter().zip(b2).map(|(a, b)| a.conj() * b).sum();
    Ok(dot / (n1 * n2))
}

/// Array (cross-)ambiguity between responses `b1` at `dir1` and `b2` at `dir2`.
pub fn ambiguity<F1, F2>(b1: F1, b2: F2, dir1: Direction, dir2: Direction) -> Result<Complex64>
where
    F1: Fn(Direction) -> Vec<Complex64>,
    F2: Fn(Direction) -> Vec<Complex64>,
{
    normalized_inner(&b1(dir1), &b2(dir2))
}
