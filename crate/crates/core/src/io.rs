//! File formats: model JSON, observation/trace/calibration CSV, and generic
//! JSON documents (camera, scenario, snapshot, outputs).

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Deserializer, Serialize};
use thiserror::Error;

use crate::fit::{DurationObservation, FitError, FitMeta};
use crate::geometry::{CalibrationSession, CalibrationSet, ImageObservation};
use crate::maneuver::{ManeuverError, TraceSample, TraceSet};
use crate::survival::{Coefficient, CovariateVector, LogLogisticAft, Parameterization, SurvivalError};

/// Version written to and required in model documents.
pub const MODEL_SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what} at line {line}, column {column}: {message}")]
    Parse {
        what: &'static str,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {what}: {message}")]
    Invalid { what: &'static str, message: String },
    #[error("unsupported model schema version {found} (this build reads version {supported})")]
    SchemaVersion { found: u64, supported: u64 },
    #[error("model document has no schema_version field")]
    MissingSchemaVersion,
    #[error("{what} row {row}: {message}")]
    Csv {
        what: &'static str,
        row: u64,
        message: String,
    },
    #[error(transparent)]
    Model(#[from] SurvivalError),
    #[error(transparent)]
    Trace(#[from] ManeuverError),
}

pub type Result<T> = std::result::Result<T, IoError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn parse_error(what: &'static str, e: serde_json::Error) -> IoError {
    IoError::Parse {
        what,
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    }
}

/// Parse a JSON document; syntax and type errors carry their location.
pub fn parse_json<T: DeserializeOwned>(text: &str, what: &'static str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| parse_error(what, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path, what: &'static str) -> Result<T> {
    parse_json(&read_text(path)?, what)
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("in-memory values serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_string(value))
}

/// On-disk model document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u64,
    pub mode: Parameterization,
    pub gamma: f64,
    pub coefficients: Vec<Coefficient>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_meta: Option<FitMeta>,
}

impl ModelDocument {
    pub fn new(model: &LogLogisticAft, fit_meta: Option<FitMeta>) -> Self {
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            mode: model.mode(),
            gamma: model.gamma(),
            coefficients: model.coefficients().to_vec(),
            fit_meta,
        }
    }

    pub fn model(&self) -> Result<LogLogisticAft> {
        Ok(LogLogisticAft::new(self.mode, self.gamma, self.coefficients.clone())?)
    }
}

pub fn model_to_json(model: &LogLogisticAft, fit_meta: Option<FitMeta>) -> String {
    to_json_string(&ModelDocument::new(model, fit_meta))
}

/// Parse a model document, checking the schema version before anything else.
pub fn model_from_json(text: &str) -> Result<ModelDocument> {
    const WHAT: &str = "model JSON";
    let value: serde_json::Value = parse_json(text, WHAT)?;
    match value.get("schema_version") {
        None => return Err(IoError::MissingSchemaVersion),
        Some(v) => match v.as_u64() {
            Some(MODEL_SCHEMA_VERSION) => {}
            Some(found) => {
                return Err(IoError::SchemaVersion {
                    found,
                    supported: MODEL_SCHEMA_VERSION,
                })
            }
            None => {
                return Err(IoError::Invalid {
                    what: WHAT,
                    message: format!("schema_version must be a non-negative integer, got {v}"),
                })
            }
        },
    }
    let doc: ModelDocument = serde_json::from_value(value).map_err(|e| IoError::Invalid {
        what: WHAT,
        message: e.to_string(),
    })?;
    doc.model()?;
    Ok(doc)
}

pub fn save_model(path: &Path, model: &LogLogisticAft, fit_meta: Option<FitMeta>) -> Result<()> {
    write_text(path, &model_to_json(model, fit_meta))
}

pub fn load_model(path: &Path) -> Result<ModelDocument> {
    model_from_json(&read_text(path)?)
}

fn csv_error(what: &'static str, e: csv::Error) -> IoError {
    let row = e.position().map_or(0, |p| p.line());
    IoError::Csv {
        what,
        row,
        message: e.to_string(),
    }
}

fn flag<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<bool, D::Error> {
    let s = String::deserialize(d)?;
    match s.trim() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(serde::de::Error::custom(format!("expected 0 or 1, got `{other}`"))),
    }
}

#[derive(Debug, Serialize)]
struct ObservationRow {
    duration_s: f64,
    ud_m: f64,
    pd_m: f64,
    dab_kmh: f64,
    multiple: u8,
}

pub fn observations_from_reader<R: Read>(reader: R) -> Result<Vec<DurationObservation>> {
    const WHAT: &str = "observation CSV";
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<ObservationRowIn>().enumerate() {
        let row = row.map_err(|e| csv_error(WHAT, e))?;
        let bad = |message: String| IoError::Csv {
            what: WHAT,
            row: i as u64 + 2,
            message,
        };
        let x = CovariateVector::new(row.ud_m, row.pd_m, row.dab_kmh, row.multiple)
            .map_err(|e| bad(e.to_string()))?;
        let obs = DurationObservation::new(row.duration_s, x).map_err(|e: FitError| bad(e.to_string()))?;
        out.push(obs);
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct ObservationRowIn {
    duration_s: f64,
    ud_m: f64,
    pd_m: f64,
    dab_kmh: f64,
    #[serde(deserialize_with = "flag")]
    multiple: bool,
}

pub fn observations_to_writer<W: Write>(writer: W, data: &[DurationObservation]) -> Result<()> {
    const WHAT: &str = "observation CSV";
    let mut w = csv::Writer::from_writer(writer);
    for obs in data {
        let c = obs.covariates;
        w.serialize(ObservationRow {
            duration_s: obs.duration,
            ud_m: c.ud,
            pd_m: c.pd,
            dab_kmh: c.dab,
            multiple: u8::from(c.multiple),
        })
        .map_err(|e| csv_error(WHAT, e))?;
    }
    w.flush().map_err(|e| csv_error(WHAT, e.into()))
}

pub fn read_observations(path: &Path) -> Result<Vec<DurationObservation>> {
    observations_from_reader(fs::File::open(path).map_err(io_err(path))?)
}

pub fn write_observations(path: &Path, data: &[DurationObservation]) -> Result<()> {
    observations_to_writer(fs::File::create(path).map_err(io_err(path))?, data)
}

pub fn traces_from_reader<R: Read>(reader: R) -> Result<TraceSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let samples = rdr
        .deserialize::<TraceSample>()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error("trace CSV", e))?;
    Ok(TraceSet::from_samples(samples)?)
}

/// Rows in time order, ties in vehicle order.
pub fn traces_to_writer<W: Write>(writer: W, traces: &TraceSet) -> Result<()> {
    const WHAT: &str = "trace CSV";
    let mut w = csv::Writer::from_writer(writer);
    for s in traces.to_samples() {
        w.serialize(&s).map_err(|e| csv_error(WHAT, e))?;
    }
    w.flush().map_err(|e| csv_error(WHAT, e.into()))
}

pub fn read_traces(path: &Path) -> Result<TraceSet> {
    traces_from_reader(fs::File::open(path).map_err(io_err(path))?)
}

pub fn write_traces(path: &Path, traces: &TraceSet) -> Result<()> {
    traces_to_writer(fs::File::create(path).map_err(io_err(path))?, traces)
}

#[derive(Debug, Deserialize)]
struct CalibrationRow {
    session: String,
    target_m: f64,
    y_f_px: f64,
    x_offset_px: f64,
}

/// Calibration rows grouped by session in first-appearance order.
pub fn calibration_from_reader<R: Read>(reader: R) -> Result<CalibrationSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut sessions: Vec<CalibrationSession> = Vec::new();
    for row in rdr.deserialize::<CalibrationRow>() {
        let row = row.map_err(|e| csv_error("calibration CSV", e))?;
        let entry = (
            row.target_m,
            ImageObservation {
                y_f: row.y_f_px,
                x_offset: row.x_offset_px,
                t: 0.0,
            },
        );
        match sessions.iter_mut().find(|s| s.id == row.session) {
            Some(s) => s.entries.push(entry),
            None => sessions.push(CalibrationSession {
                id: row.session,
                entries: vec![entry],
            }),
        }
    }
    if sessions.is_empty() {
        return Err(IoError::Invalid {
            what: "calibration CSV",
            message: "no rows".into(),
        });
    }
    Ok(CalibrationSet { sessions })
}

pub fn read_calibration(path: &Path) -> Result<CalibrationSet> {
    calibration_from_reader(fs::File::open(path).map_err(io_err(path))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_model_round_trips_bit_identically() {
        let model = LogLogisticAft::reference_table();
        let doc = model_from_json(&model_to_json(&model, None)).unwrap();
        assert_eq!(doc.model().unwrap(), model);
        assert_eq!(doc.schema_version, MODEL_SCHEMA_VERSION);
    }

    #[test]
    fn canonical_field_order() {
        let text = model_to_json(&LogLogisticAft::reference_table(), None);
        let pos = |k: &str| text.find(k).unwrap();
        assert!(pos("schema_version") < pos("\"mode\""));
        assert!(pos("\"mode\"") < pos("\"gamma\""));
        assert!(pos("\"gamma\"") < pos("\"coefficients\""));
        assert!(!text.contains("fit_meta"));
    }

    #[test]
    fn empty_and_malformed_documents() {
        assert!(matches!(model_from_json(""), Err(IoError::Parse { line: 1, .. })));
        match model_from_json("{\n  \"schema_version\": 1,\n  \"mode\": ]") {
            Err(IoError::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert!(column > 0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn schema_version_checked() {
        let text = model_to_json(&LogLogisticAft::reference_table(), None).replace(
            "\"schema_version\": 1",
            "\"schema_version\": 7",
        );
        assert!(matches!(
            model_from_json(&text),
            Err(IoError::SchemaVersion { found: 7, supported: 1 })
        ));
        let text = r#"{"mode": "scaled", "gamma": 0.3, "coefficients": [{"name": "cons", "beta": 1.0}]}"#;
        assert!(matches!(model_from_json(text), Err(IoError::MissingSchemaVersion)));
    }

    #[test]
    fn invalid_model_values_rejected() {
        let text = r#"{"schema_version": 1, "mode": "scaled", "gamma": -1.0, "coefficients": [{"name": "cons", "beta": 1.0}]}"#;
        assert!(matches!(model_from_json(text), Err(IoError::Model(_))));
    }

    #[test]
    fn observation_csv_round_trip() {
        let data = vec![
            DurationObservation::new(7.25, CovariateVector::new(6.9, 8.3, 20.3, false).unwrap()).unwrap(),
            DurationObservation::new(0.1 + 0.2, CovariateVector::new(1.0 / 3.0, 0.0, -4.5, true).unwrap()).unwrap(),
        ];
        let mut buf = Vec::new();
        observations_to_writer(&mut buf, &data).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("duration_s,ud_m,pd_m,dab_kmh,multiple\n"));
        assert_eq!(observations_from_reader(buf.as_slice()).unwrap(), data);
    }

    #[test]
    fn observation_csv_errors_name_the_row() {
        let text = "duration_s,ud_m,pd_m,dab_kmh,multiple\n5,1,2,3,0\n-1,1,2,3,0\n";
        match observations_from_reader(text.as_bytes()) {
            Err(IoError::Csv { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let text = "duration_s,ud_m,pd_m,dab_kmh,multiple\n5,1,2,3,maybe\n";
        assert!(observations_from_reader(text.as_bytes()).is_err());
    }

    #[test]
    fn calibration_groups_sessions() {
        let text = "session,target_m,y_f_px,x_offset_px\na,10,520,0\na,20,460,3\nb,10,521,0\nb,20,461,1\n";
        let set = calibration_from_reader(text.as_bytes()).unwrap();
        assert_eq!(set.sessions.len(), 2);
        assert_eq!(set.repetitions(), 2);
        assert_eq!(set.sessions[1].entries[1].1.x_offset, 1.0);
    }
}
