//! Scenario configuration files.
//!
//! A config is a TOML document with a required `scenario` key. Every other
//! key is optional and overrides the defaults of that scenario, so
//! `scenario = "two-pole"` alone is a complete config. Unknown keys are
//! rejected with the dotted path of the offending key.

use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::calib::MultiGainOptions;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::impairments::{PhaseNoiseModel, SlowPhase};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    BaselineCalib,
    MultigainCalib,
    MisalignmentSweep,
    PhaseNoiseSweep,
    Table1Recovery,
    TwoPath,
    TwoPole,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 7] = [
        ScenarioKind::BaselineCalib,
        ScenarioKind::MultigainCalib,
        ScenarioKind::MisalignmentSweep,
        ScenarioKind::PhaseNoiseSweep,
        ScenarioKind::Table1Recovery,
        ScenarioKind::TwoPath,
        ScenarioKind::TwoPole,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::BaselineCalib => "baseline-calib",
            ScenarioKind::MultigainCalib => "multigain-calib",
            ScenarioKind::MisalignmentSweep => "misalignment-sweep",
            ScenarioKind::PhaseNoiseSweep => "phase-noise-sweep",
            ScenarioKind::Table1Recovery => "table1-recovery",
            ScenarioKind::TwoPath => "two-path",
            ScenarioKind::TwoPole => "two-pole",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArrayConfig {
    /// Elements along y (horizontal).
    pub n_y: usize,
    /// Elements along z (vertical).
    pub n_z: usize,
    pub carrier_hz: f64,
    /// DFT beams along each axis.
    pub beams_y: usize,
    pub beams_z: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyConfig {
    pub bandwidth_hz: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternConfig {
    pub n_azimuth: usize,
    pub n_elevation: usize,
    /// `[azimuth, elevation]` mode half-widths kept in EADFs derived from
    /// calibration data; omitted means no gating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<[usize; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    /// Omitted means noiseless.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    pub snapshots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpairmentConfig {
    /// Array offsets from the rotation axis in wavelengths; sweeps run over
    /// all entries, other scenarios use the first.
    pub offsets_wavelengths: Vec<[f64; 3]>,
    pub probe_distance_m: f64,
    pub phase_noise: PhaseNoiseModel,
    /// Omitted means noiseless calibration sweeps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_snr_db: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Azimuth turntable positions over a full turn, both ends included.
    pub orientations: usize,
    pub gains: usize,
    pub gain_step_db: f64,
    pub multigain: MultiGainOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPathConfig {
    pub a_m: f64,
    pub b_m: f64,
    pub d_los_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPoleConfig {
    pub separations_deg: Vec<f64>,
    pub aps_step_deg: f64,
    /// Local maxima this far below the global maximum count as APS peaks.
    pub aps_floor_db: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub repetitions: usize,
    pub output_dir: PathBuf,
    pub array: ArrayConfig,
    pub frequency: FrequencyConfig,
    pub pattern: PatternConfig,
    pub channel: ChannelConfig,
    pub impairments: ImpairmentConfig,
    pub calibration: CalibrationConfig,
    pub estimator: EstimatorConfig,
    pub two_path: TwoPathConfig,
    pub two_pole: TwoPoleConfig,
}

impl ScenarioConfig {
    pub fn defaults(kind: ScenarioKind) -> Self {
        use ScenarioKind::*;
        let azimuth_only = matches!(kind, BaselineCalib | MultigainCalib | TwoPath | TwoPole);
        let mut c = ScenarioConfig {
            scenario: kind,
            seed: 1,
            repetitions: 1,
            output_dir: PathBuf::from(kind.name()),
            array: ArrayConfig { n_y: 8, n_z: 2, carrier_hz: 28e9, beams_y: 19, beams_z: if azimuth_only { 1 } else { 2 } },
            frequency: FrequencyConfig { bandwidth_hz: 100e6, count: 257 },
            pattern: PatternConfig { n_azimuth: 90, n_elevation: if azimuth_only { 1 } else { 46 }, gate: Some([39, 39]) },
            channel: ChannelConfig { snr_db: Some(60.0), snapshots: 1 },
            impairments: ImpairmentConfig {
                offsets_wavelengths: vec![[3.0; 3]],
                probe_distance_m: 5.0,
                phase_noise: PhaseNoiseModel::disabled(),
                calibration_snr_db: None,
            },
            calibration: CalibrationConfig { orientations: 73, gains: 3, gain_step_db: 6.0, multigain: MultiGainOptions::default() },
            estimator: EstimatorConfig { max_paths: 10, ..EstimatorConfig::default() },
            two_path: TwoPathConfig { a_m: 3.15, b_m: 3.15, d_los_m: 5.65 },
            two_pole: TwoPoleConfig { separations_deg: vec![20.0, 16.0, 12.0, 10.0, 8.0, 6.0, 5.0, 4.0], aps_step_deg: 1.0, aps_floor_db: 10.0 },
        };
        match kind {
            BaselineCalib => {
                c.frequency.count = 401;
                c.impairments.phase_noise = PhaseNoiseModel::default();
                c.impairments.calibration_snr_db = Some(20.0);
            }
            MultigainCalib => {
                c.frequency.count = 401;
                c.impairments.offsets_wavelengths = vec![[0.0; 3]];
                c.impairments.phase_noise = PhaseNoiseModel::default();
            }
            MisalignmentSweep => {
                c.impairments.offsets_wavelengths = (0..4).map(|k| [k as f64; 3]).collect();
            }
            PhaseNoiseSweep => {
                c.repetitions = 20;
                c.impairments.offsets_wavelengths = vec![[0.0; 3]];
                c.impairments.phase_noise = PhaseNoiseModel::default();
            }
            Table1Recovery => {
                c.pattern = PatternConfig { n_azimuth: 72, n_elevation: 37, gate: None };
                c.impairments.offsets_wavelengths = vec![[0.0; 3]];
            }
            TwoPath | TwoPole => {
                c.pattern.gate = None;
                c.impairments.offsets_wavelengths = vec![[0.0; 3]];
                c.channel = ChannelConfig { snr_db: Some(40.0), snapshots: if kind == TwoPath { 5 } else { 1 } };
                c.estimator.max_paths = 20;
            }
        }
        c
    }

    /// Parses a config; relative output directories stay relative.
    pub fn from_toml(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            path: "<document>".into(),
            message: e.message().to_string(),
        })?;
        let kind = match user.get("scenario") {
            Some(v) => ScenarioKind::deserialize(v.clone()).map_err(|_| Error::Config {
                path: "scenario".into(),
                message: format!(
                    "expected one of {}",
                    ScenarioKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
                ),
            })?,
            None => return Err(Error::Config { path: "scenario".into(), message: "missing".into() }),
        };
        let mut merged = toml::Table::try_from(Self::defaults(kind)).expect("defaults serialize");
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(merged))
            .map_err(|e| Error::Config { path: e.path().to_string(), message: e.inner().to_string() })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |k: &str, m: &str| Err(Error::Config { path: k.into(), message: m.into() });
        let a = &self.array;
        if a.n_y == 0 || a.n_z == 0 || a.beams_y == 0 || a.beams_z == 0 {
            return bad("array", "element and beam counts must be positive");
        }
        if !(a.carrier_hz > 0.0 && a.carrier_hz.is_finite()) {
            return bad("array.carrier_hz", "must be positive");
        }
        if !(self.frequency.bandwidth_hz > 0.0 && self.frequency.bandwidth_hz.is_finite()) {
            return bad("frequency.bandwidth_hz", "must be positive");
        }
        if self.frequency.count < 2 {
            return bad("frequency.count", "must be at least 2");
        }
        let p = &self.pattern;
        if p.n_azimuth < 3 || p.n_elevation == 0 {
            return bad("pattern", "need at least 3 azimuth and 1 elevation samples");
        }
        use ScenarioKind::*;
        if matches!(self.scenario, MisalignmentSweep | PhaseNoiseSweep | Table1Recovery) && p.n_elevation < 2 {
            return bad("pattern.n_elevation", "the ten-path channel spans elevation; use at least 2 rows");
        }
        if p.n_elevation == 1 && a.beams_z > 1 {
            return bad("pattern.n_elevation", "an azimuth-only pattern cannot resolve elevation beams");
        }
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 || self.impairments.phase_noise.seed > i64::MAX as u64 {
            return bad("seed", "must be at most 2^63 - 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions", "must be at least 1");
        }
        if self.channel.snapshots == 0 {
            return bad("channel.snapshots", "must be at least 1");
        }
        for (k, v) in [("channel.snr_db", self.channel.snr_db), ("impairments.calibration_snr_db", self.impairments.calibration_snr_db)] {
            if v.is_some_and(|x| !x.is_finite()) {
                return bad(k, "must be finite; omit the key for noiseless data");
            }
        }
        if self.impairments.offsets_wavelengths.is_empty() {
            return bad("impairments.offsets_wavelengths", "needs at least one offset");
        }
        if self.impairments.offsets_wavelengths.iter().flatten().any(|x| !x.is_finite()) {
            return bad("impairments.offsets_wavelengths", "must be finite");
        }
        if !(self.impairments.probe_distance_m > 0.0) {
            return bad("impairments.probe_distance_m", "must be positive");
        }
        self.impairments.phase_noise.validate().map_err(|e| Error::Config {
            path: "impairments.phase_noise".into(),
            message: e.to_string(),
        })?;
        if let SlowPhase::LowPass { coherence, .. } = self.impairments.phase_noise.slow {
            if !(coherence > 0.0) {
                return bad("impairments.phase_noise.slow.coherence", "must be positive");
            }
        }
        if self.calibration.orientations < 2 || self.calibration.gains == 0 {
            return bad("calibration", "need at least 2 orientations and 1 gain");
        }
        if self.two_pole.separations_deg.is_empty() || !(self.two_pole.aps_step_deg > 0.0) {
            return bad("two_pole", "needs separations and a positive APS step");
        }
        self.estimator.validate()
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        use sha2::{Digest, Sha256};
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Overwrites `base` with `user`, recursing into tables present in both.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !replaces_whole(&k) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Tagged tables whose variant may change, so defaults must not leak in.
fn replaces_whole(key: &str) -> bool {
    key == "slow"
}
