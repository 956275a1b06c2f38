//! Per-path result tables.
//!
//! Angles are in degrees and powers in dB. When estimates come from several
//! snapshots each parameter gets a `_std` column next to its mean.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::PathSpread;
use crate::synth::{Path, PathSet};

const COLUMNS: [&str; 6] = ["delay_ns", "tx_azimuth_deg", "tx_elevation_deg", "rx_azimuth_deg", "rx_elevation_deg", "power_db"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathRow {
    pub index: usize,
    pub delay_ns: f64,
    pub tx_azimuth_deg: f64,
    pub tx_elevation_deg: f64,
    pub rx_azimuth_deg: f64,
    pub rx_elevation_deg: f64,
    pub power_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<PathSpread>,
}

impl PathRow {
    pub fn from_path(index: usize, p: &Path) -> Self {
        Self {
            index,
            delay_ns: p.delay_ns,
            tx_azimuth_deg: p.tx.azimuth.to_degrees(),
            tx_elevation_deg: p.tx.elevation.to_degrees(),
            rx_azimuth_deg: p.rx.azimuth.to_degrees(),
            rx_elevation_deg: p.rx.elevation.to_degrees(),
            power_db: p.power_db(),
            std: None,
        }
    }

    fn means(&self) -> [f64; 6] {
        [self.delay_ns, self.tx_azimuth_deg, self.tx_elevation_deg, self.rx_azimuth_deg, self.rx_elevation_deg, self.power_db]
    }
}

fn spreads(s: &PathSpread) -> [f64; 6] {
    [s.delay_ns, s.tx_azimuth_deg, s.tx_elevation_deg, s.rx_azimuth_deg, s.rx_elevation_deg, s.power_db]
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PathTable {
    pub rows: Vec<PathRow>,
}

impl PathTable {
    /// Rows in the order of `paths`; `std` is either empty or aligned with
    /// `paths`.
    pub fn new(paths: &PathSet, std: &[PathSpread]) -> Result<Self> {
        if !std.is_empty() && std.len() != paths.len() {
            return Err(Error::Dimension(format!("{} spreads for {} paths", std.len(), paths.len())));
        }
        let rows = paths
            .paths
            .iter()
            .enumerate()
            .map(|(i, p)| PathRow { std: std.get(i).cloned(), ..PathRow::from_path(i + 1, p) })
            .collect();
        Ok(Self { rows })
    }

    pub fn has_std(&self) -> bool {
        self.rows.iter().any(|r| r.std.is_some())
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["index".to_string()];
        for c in COLUMNS {
            h.push(c.to_string());
            if self.has_std() {
                h.push(format!("{c}_std"));
            }
        }
        h
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(self.header()).map_err(csv_err)?;
        let with_std = self.has_std();
        for r in &self.rows {
            let mut rec = vec![r.index.to_string()];
            let s = r.std.as_ref().map(spreads);
            for (k, m) in r.means().iter().enumerate() {
                rec.push(m.to_string());
                if with_std {
                    rec.push(s.map_or(String::new(), |s| s[k].to_string()));
                }
            }
            w.write_record(&rec).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
