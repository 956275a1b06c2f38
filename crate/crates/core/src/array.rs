//! Uniform rectangular array (URA) geometry and beam-port responses.
//!
//! The array lies in the y-z plane with boresight along +x
//! (azimuth 0, elevation 90°). Elements are addressed by `(iy, iz)` with
//! zero-based indices and every vectorization in this crate uses the same
//! row-major order with `iz` running fastest.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Speed of light in air, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Scalar element pattern `A0(azimuth, elevation)`.
pub type ElementPattern = fn(f64, f64) -> Complex64;

/// Isotropic radiator, `A0 = 1` everywhere.
pub fn isotropic(_azimuth: f64, _elevation: f64) -> Complex64 {
    Complex64::new(1.0, 0.0)
}

#[derive(Clone, Debug)]
pub struct UraGeometry {
    pub n_y: usize,
    pub n_z: usize,
    /// Element pitch in wavelengths.
    pub spacing: f64,
    /// Carrier wavelength in meters.
    pub wavelength: f64,
    pub element_pattern: ElementPattern,
}

impl UraGeometry {
    pub fn new(n_y: usize, n_z: usize, spacing: f64, wavelength: f64) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::Geometry(format!("array must have at least one element per axis, got {n_y}x{n_z}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Geometry(format!("spacing must be positive, got {spacing}")));
        }
        if !(wavelength > 0.0 && wavelength.is_finite()) {
            return Err(Error::Geometry(format!("wavelength must be positive, got {wavelength}")));
        }
        Ok(Self { n_y, n_z, spacing, wavelength, element_pattern: isotropic })
    }

    /// Half-wavelength array at the given carrier frequency.
    pub fn half_wavelength(n_y: usize, n_z: usize, carrier_hz: f64) -> Result<Self> {
        Self::new(n_y, n_z, 0.5, SPEED_OF_LIGHT / carrier_hz)
    }

    pub fn with_element_pattern(mut self, pattern: ElementPattern) -> Self {
        self.element_pattern = pattern;
        self
    }

    pub fn n_elements(&self) -> usize {
        self.n_y * self.n_z
    }

    /// Flat index of element `(iy, iz)`.
    pub fn element_index(&self, iy: usize, iz: usize) -> usize {
        iy * self.n_z + iz
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    /// Largest distance of any element from the array center, in meters.
    pub fn aperture_radius(&self) -> f64 {
        element_positions(self).iter().map(|p| p.norm()).fold(0.0, f64::max)
    }
}

/// Propagation direction. Boresight is `(0, π/2)`.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Direction {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Direction {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self { azimuth, elevation }
    }

    pub fn from_degrees(azimuth: f64, elevation: f64) -> Self {
        Self::new(azimuth.to_radians(), elevation.to_radians())
    }

    pub fn boresight() -> Self {
        Self::new(0.0, FRAC_PI_2)
    }

    /// Maps any angle pair onto azimuth in `[-π, π)` and elevation in `[0, π]`
    /// describing the same point on the sphere.
    pub fn canonical(self) -> Self {
        let mut az = self.azimuth;
        let mut el = self.elevation.rem_euclid(2.0 * PI);
        if el > PI {
            el = 2.0 * PI - el;
            az += PI;
        }
        Self::new(wrap_angle(az), el)
    }

    /// Wave vector for this direction at the given wavenumber.
    pub fn wave_vector(&self, wavenumber: f64) -> Vector3<f64> {
        let (sa, ca) = self.azimuth.sin_cos();
        let (se, ce) = self.elevation.sin_cos();
        wavenumber * Vector3::new(ca * se, sa * se, ce)
    }
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    (a + PI).rem_euclid(2.0 * PI) - PI
}

/// Element positions in meters, ordered with `iz` fastest.
pub fn element_positions(geom: &UraGeometry) -> Vec<Vector3<f64>> {
    let pitch = geom.spacing * geom.wavelength;
    let cy = (geom.n_y as f64 - 1.0) / 2.0;
    let cz = (geom.n_z as f64 - 1.0) / 2.0;
    let mut out = Vec::with_capacity(geom.n_elements());
    for iy in 0..geom.n_y {
        for iz in 0..geom.n_z {
            out.push(Vector3::new(0.0, (iy as f64 - cy) * pitch, (iz as f64 - cz) * pitch));
        }
    }
    out
}

/// Plane-wave response of every element, in element order.
pub fn steering_vector(geom: &UraGeometry, dir: Direction) -> Vec<Complex64> {
    let k = dir.wave_vector(geom.wavenumber());
    let a0 = (geom.element_pattern)(dir.azimuth, dir.elevation);
    element_positions(geom)
        .iter()
        .map(|p| Complex64::from_polar(1.0, k.dot(p)) * a0)
        .collect()
}

/// Plane-wave response as an `n_y x n_z` matrix (row `iy`, column `iz`).
pub fn steering_response(geom: &UraGeometry, dir: Direction) -> nalgebra::DMatrix<Complex64> {
    let v = steering_vector(geom, dir);
    nalgebra::DMatrix::from_fn(geom.n_y, geom.n_z, |iy, iz| v[geom.element_index(iy, iz)])
}

/// Phase-shifter weights for one beam port.
#[derive(Clone, Debug)]
pub struct BeamWeights {
    pub weights: nalgebra::DMatrix<Complex64>,
    pub label: usize,
}

impl BeamWeights {
    pub fn new(weights: nalgebra::DMatrix<Complex64>, label: usize) -> Self {
        Self { weights, label }
    }

    /// Weights in element order (`iz` fastest).
    pub fn element_vector(&self) -> Vec<Complex64> {
        let (ny, nz) = self.weights.shape();
        let mut v = Vec::with_capacity(ny * nz);
        for iy in 0..ny {
            for iz in 0..nz {
                v.push(self.weights[(iy, iz)]);
            }
        }
        v
    }

    fn check_shape(&self, geom: &UraGeometry) -> Result<()> {
        let shape = self.weights.shape();
        if shape != (geom.n_y, geom.n_z) {
            return Err(Error::Shape {
                expected: format!("{}x{}", geom.n_y, geom.n_z),
                actual: format!("{}x{}", shape.0, shape.1),
            });
        }
        Ok(())
    }

    /// Weights whose beam is co-phased toward `dir` (conjugate steering).
    pub fn matched(geom: &UraGeometry, dir: Direction, label: usize) -> Self {
        let x = steering_response(geom, dir);
        let a0 = (geom.element_pattern)(dir.azimuth, dir.elevation);
        let w = x.map(|v| (v / a0).conj());
        Self::new(w, label)
    }
}

/// `vec(W)ᵀ vec(X(dir))`.
pub fn beam_port_response(geom: &UraGeometry, weights: &BeamWeights, dir: Direction) -> Result<Complex64> {
    weights.check_shape(geom)?;
    let x = steering_vector(geom, dir);
    Ok(weights.element_vector().iter().zip(&x).map(|(w, x)| w * x).sum())
}

/// Direction cosines `(sin φ sin θ, cos θ)` that beam `(by, bz)` of a
/// `count_y x count_z` bank points at.
pub fn dft_beam_pointing(count_y: usize, count_z: usize, by: usize, bz: usize) -> (f64, f64) {
    let u = |b: usize, n: usize| 2.0 * (b as f64 - (n as f64 - 1.0) / 2.0) / n as f64;
    (u(by, count_y), u(bz, count_z))
}

/// DFT beam bank with `count_y x count_z` beams. Beams are labelled with the
/// azimuth index running fastest, `label = bz * count_y + by`; the center
/// label of an odd bank is the boresight beam.
pub fn dft_beam_bank(geom: &UraGeometry, count_y: usize, count_z: usize) -> Vec<BeamWeights> {
    let cy = (geom.n_y as f64 - 1.0) / 2.0;
    let cz = (geom.n_z as f64 - 1.0) / 2.0;
    let scale = 2.0 * PI * geom.spacing;
    let mut bank = Vec::with_capacity(count_y * count_z);
    for bz in 0..count_z {
        for by in 0..count_y {
            let (uy, uz) = dft_beam_pointing(count_y, count_z, by, bz);
            let w = nalgebra::DMatrix::from_fn(geom.n_y, geom.n_z, |iy, iz| {
                let phase = -scale * ((iy as f64 - cy) * uy + (iz as f64 - cz) * uz);
                Complex64::from_polar(1.0, phase)
            });
            bank.push(BeamWeights::new(w, bz * count_y + by));
        }
    }
    bank
}

/// Calibration probe placement and orientation schedule.
#[derive(Clone, Debug)]
pub struct ProbeSetup {
    /// Probe position, meters.
    pub probe_position: Vector3<f64>,
    /// Offset of the array center from the rotation axis, meters.
    pub offset: Vector3<f64>,
    /// Orientations `(φ0, θ0)` in acquisition order.
    pub schedule: Vec<(f64, f64)>,
}

impl ProbeSetup {
    pub fn new(probe_position: Vector3<f64>, offset: Vector3<f64>) -> Self {
        Self { probe_position, offset, schedule: Vec::new() }
    }

    /// Probe 5 m in front of the array on the x axis.
    pub fn chamber_default(offset: Vector3<f64>) -> Self {
        Self::new(Vector3::new(5.0, 0.0, 0.0), offset)
    }
}

/// Rotation about z by `angle` following the left-hand rule.
fn rot_z_left(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Rotation about y by `angle` following the right-hand rule.
fn rot_y_right(angle: f64) -> Matrix3<f64> {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

/// Turntable rotation `R_y(θ0 - 90°) · R_z(φ0)`.
pub fn orientation_matrix(orientation: (f64, f64)) -> Matrix3<f64> {
    rot_y_right(orientation.1 - FRAC_PI_2) * rot_z_left(orientation.0)
}

/// Direction (in the array frame) at which a probe on the +x axis
/// illuminates the array for the given orientation. With the rotation
/// conventions above this is `(φ0, π - θ0)`.
pub fn orientation_to_direction(orientation: (f64, f64)) -> Direction {
    Direction::new(orientation.0, PI - orientation.1)
}

/// Inverse of [`orientation_to_direction`].
pub fn direction_to_orientation(dir: Direction) -> (f64, f64) {
    (dir.azimuth, PI - dir.elevation)
}

/// Element positions after offsetting by `probe.offset` and rotating.
pub fn rotated_positions(geom: &UraGeometry, probe: &ProbeSetup, orientation: (f64, f64)) -> Vec<Vector3<f64>> {
    let r = orientation_matrix(orientation);
    element_positions(geom).into_iter().map(|p| r * (p + probe.offset)).collect()
}

/// Spherical-wave response of each element to the probe at one orientation.
pub fn distorted_element_responses(
    geom: &UraGeometry,
    probe: &ProbeSetup,
    frequency: f64,
    orientation: (f64, f64),
) -> Result<Vec<Complex64>> {
    let dir = orientation_to_direction(orientation);
    let a0 = (geom.element_pattern)(dir.azimuth, dir.elevation);
    let scale = -2.0 * PI * frequency / SPEED_OF_LIGHT;
    rotated_positions(geom, probe, orientation)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let d = (p - probe.probe_position).norm();
            if d <= 0.0 {
                return Err(Error::ZeroDistance { element: i });
            }
            Ok(a0 * Complex64::from_polar(1.0, scale * d))
        })
        .collect()
}

/// Beam-port calibration response under the spherical-wave probe model.
pub fn distorted_calibration_pattern(
    geom: &UraGeometry,
    probe: &ProbeSetup,
    weights: &BeamWeights,
    frequency: f64,
    orientation: (f64, f64),
) -> Result<Complex64> {
    weights.check_shape(geom)?;
    let x = distorted_element_responses(geom, probe, frequency, orientation)?;
    Ok(weights.element_vector().iter().zip(&x).map(|(w, x)| w * x).sum())
}
