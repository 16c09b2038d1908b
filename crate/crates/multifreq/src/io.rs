//! CSV and JSON artifacts. Floats are written in Rust's shortest round-trip
//! form, so files re-read bit-exactly and identical inputs give identical
//! bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use multifreq_core::forward::{DipoleSet, ObservationSet};
use multifreq_core::linalg::{wrap_phase, CVec, RVec};
use multifreq_core::nalgebra::Vector3;
use multifreq_core::operators::RelativePhaseData;
use multifreq_core::Complex64;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::HarnessError;

pub const MEASUREMENT_HEADER: [&str; 9] = [
    "pos_x",
    "pos_y",
    "pos_z",
    "pol_x",
    "pol_y",
    "pol_z",
    "freq_hz",
    "mag",
    "rel_phase_rad",
];

/// Writes a CSV file with `\n` line endings.
pub fn write_csv<S: AsRef<str>>(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<S>>,
) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(file));
    let fail = |e: csv::Error| HarnessError::format(path, e);
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.iter().map(|s| s.as_ref())).map_err(fail)?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Reads a CSV file, checking the header, into rows of strings.
pub fn read_csv(path: &Path, expected_header: &[&str]) -> Result<Vec<csv::StringRecord>, HarnessError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::format(path, e))?;
    let header = r.headers().map_err(|e| HarnessError::format(path, e))?.clone();
    if header.len() < expected_header.len() || header.iter().zip(expected_header).any(|(a, b)| a != *b) {
        return Err(HarnessError::format(path, format!("unexpected header {header:?}")));
    }
    r.records()
        .map(|rec| rec.map_err(|e| HarnessError::format(path, e)))
        .collect()
}

pub fn parse_f64(path: &Path, rec: &csv::StringRecord, col: usize) -> Result<f64, HarnessError> {
    rec.get(col)
        .ok_or_else(|| HarnessError::format(path, format!("missing column {col}")))?
        .parse()
        .map_err(|e| HarnessError::format(path, format!("column {col}: {e}")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| HarnessError::format(path, e))?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| HarnessError::format(path, e))
}

/// One sample of a measurement file.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRow {
    pub position: Vector3<f64>,
    pub polarization: Vector3<f64>,
    pub frequency: f64,
    pub magnitude: f64,
    /// Phase relative to the reference frequency at the same sample.
    pub rel_phase: f64,
    pub truth: Option<Complex64>,
}

/// Magnitudes and relative phases for every frequency, frequency-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    pub rows: Vec<MeasurementRow>,
}

impl MeasurementSet {
    /// Builds rows from measured complex samples; the observation set labels
    /// the rows of each frequency block.
    pub fn from_samples(
        observations: &ObservationSet,
        frequencies: &[f64],
        reference: usize,
        measured: &[CVec],
        truth: Option<&[CVec]>,
    ) -> Self {
        let mut rows = Vec::new();
        for (k, (&f, b)) in frequencies.iter().zip(measured).enumerate() {
            for l in 0..b.len() {
                rows.push(MeasurementRow {
                    position: observations.locations[l],
                    polarization: observations.polarizations[l],
                    frequency: f,
                    magnitude: b[l].norm(),
                    rel_phase: if k == reference {
                        0.0
                    } else {
                        wrap_phase(b[l].arg() - measured[reference][l].arg())
                    },
                    truth: truth.map(|t| t[k][l]),
                });
            }
        }
        Self { rows }
    }

    /// Frequencies in order of first appearance.
    pub fn frequencies(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.frequency) {
                out.push(r.frequency);
            }
        }
        out
    }

    fn blocks(&self) -> Vec<Vec<&MeasurementRow>> {
        self.frequencies()
            .iter()
            .map(|f| self.rows.iter().filter(|r| r.frequency == *f).collect())
            .collect()
    }

    pub fn to_relative_phase_data(&self, reference: usize) -> Result<RelativePhaseData, HarnessError> {
        let blocks = self.blocks();
        let mags = blocks
            .iter()
            .map(|b| RVec::from_iterator(b.len(), b.iter().map(|r| r.magnitude)))
            .collect();
        let phases = blocks
            .iter()
            .map(|b| RVec::from_iterator(b.len(), b.iter().map(|r| r.rel_phase)))
            .collect();
        Ok(RelativePhaseData::new(mags, phases, reference)?)
    }

    /// True complex samples per frequency, if every row carries them.
    pub fn truth(&self) -> Option<Vec<CVec>> {
        self.blocks()
            .iter()
            .map(|b| {
                b.iter()
                    .map(|r| r.truth)
                    .collect::<Option<Vec<_>>>()
                    .map(CVec::from_vec)
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), HarnessError> {
        let with_truth = self.rows.iter().all(|r| r.truth.is_some()) && !self.rows.is_empty();
        let mut header = MEASUREMENT_HEADER.to_vec();
        if with_truth {
            header.extend(["true_re", "true_im"]);
        }
        let rows = self.rows.iter().map(|r| {
            let mut v = vec![
                r.position.x.to_string(),
                r.position.y.to_string(),
                r.position.z.to_string(),
                r.polarization.x.to_string(),
                r.polarization.y.to_string(),
                r.polarization.z.to_string(),
                r.frequency.to_string(),
                r.magnitude.to_string(),
                r.rel_phase.to_string(),
            ];
            if let (true, Some(t)) = (with_truth, r.truth) {
                v.push(t.re.to_string());
                v.push(t.im.to_string());
            }
            v
        });
        write_csv(path, &header, rows)
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        let records = read_csv(path, &MEASUREMENT_HEADER)?;
        let rows = records
            .iter()
            .map(|rec| {
                let g = |c| parse_f64(path, rec, c);
                let truth = if rec.len() >= 11 {
                    Some(Complex64::new(g(9)?, g(10)?))
                } else {
                    None
                };
                Ok(MeasurementRow {
                    position: Vector3::new(g(0)?, g(1)?, g(2)?),
                    polarization: Vector3::new(g(3)?, g(4)?, g(5)?),
                    frequency: g(6)?,
                    magnitude: g(7)?,
                    rel_phase: g(8)?,
                    truth,
                })
            })
            .collect::<Result<Vec<_>, HarnessError>>()?;
        Ok(Self { rows })
    }
}

/// `x,y,z,ox,oy,oz` per dipole.
pub fn write_dipoles(path: &Path, dipoles: &DipoleSet) -> Result<(), HarnessError> {
    let rows = dipoles.positions.iter().zip(&dipoles.orientations).map(|(p, o)| {
        vec![p.x, p.y, p.z, o.x, o.y, o.z]
            .into_iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
    });
    write_csv(path, &["x", "y", "z", "ox", "oy", "oz"], rows)
}

/// `x,y,z` per observation location (one row per sample).
pub fn write_points(path: &Path, points: &[Vector3<f64>]) -> Result<(), HarnessError> {
    let rows = points
        .iter()
        .map(|p| vec![p.x.to_string(), p.y.to_string(), p.z.to_string()]);
    write_csv(path, &["x", "y", "z"], rows)
}
