//! File formats: numeric arrays (CSV or NPY v1.0), label vectors, run
//! manifests and metric reports (canonical JSON).

pub mod csv;
pub mod json;
pub mod npy;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ReliabilityBin;
use crate::tensor::{LabelVector, Matrix};

pub use json::{format_f64, to_canonical_string, to_canonical_vec};

/// On-disk array format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ArrayFormat {
    Csv,
    #[default]
    Npy,
}

impl ArrayFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ArrayFormat::Csv => "csv",
            ArrayFormat::Npy => "npy",
        }
    }
}

impl std::str::FromStr for ArrayFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(ArrayFormat::Csv),
            "npy" => Ok(ArrayFormat::Npy),
            other => Err(Error::invalid(format!("unknown array format '{other}'"))),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Shape-preserving decode of either format. NPY is detected by its magic.
fn decode_any(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = read_bytes(path)?;
    let shown = path.display().to_string();
    if bytes.starts_with(npy::MAGIC) {
        let arr = npy::decode(&bytes).map_err(|e| Error::format(&shown, e.to_string()))?;
        if arr.values.is_empty() {
            return Err(Error::format(&shown, "empty array"));
        }
        Ok((arr.shape, arr.values))
    } else {
        let text = std::str::from_utf8(&bytes).map_err(|e| {
            Error::format(
                &shown,
                format!("not UTF-8 text at byte {}", e.valid_up_to()),
            )
        })?;
        let m = csv::parse(text).map_err(|e| Error::format(&shown, e.to_string()))?;
        Ok((vec![m.rows(), m.cols()], m.into_vec()))
    }
}

/// Loads a real matrix. A 1-D NPY array of length `n` loads as `n × 1`.
pub fn load_array(path: impl AsRef<Path>) -> Result<Matrix> {
    let (shape, values) = decode_any(path.as_ref())?;
    let (rows, cols) = match shape[..] {
        [n] => (n, 1),
        [r, c] => (r, c),
        _ => unreachable!("decoder admits one or two dimensions"),
    };
    Matrix::new(rows, cols, values)
}

/// Saves a matrix. NPY stores `<f8` bit-exactly; CSV uses 17 significant
/// digits, which round-trips every finite `f64`.
pub fn save_array(matrix: &Matrix, path: impl AsRef<Path>, format: ArrayFormat) -> Result<()> {
    if matrix.is_empty() {
        return Err(Error::invalid("empty array"));
    }
    if let Some((i, j)) = matrix.first_non_finite() {
        return Err(Error::invalid(format!(
            "non-finite value at row {i}, column {j}"
        )));
    }
    let bytes = match format {
        ArrayFormat::Npy => npy::encode(
            matrix.as_slice(),
            &[matrix.rows(), matrix.cols()],
            npy::Dtype::F8,
        ),
        ArrayFormat::Csv => csv::render(matrix).into_bytes(),
    };
    write_bytes(path.as_ref(), &bytes)
}

/// Loads integer labels from a 1-D array (or a single CSV column/row).
/// Labels must lie in `[0, num_known]`.
pub fn load_labels(path: impl AsRef<Path>, num_known: usize) -> Result<LabelVector> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let (shape, values) = decode_any(path)?;
    let one_dimensional = matches!(shape[..], [_] | [_, 1] | [1, _]);
    if !one_dimensional {
        return Err(Error::format(
            &shown,
            format!("labels must be one-dimensional, got shape {shape:?}"),
        ));
    }
    let mut labels = Vec::with_capacity(values.len());
    for (row, v) in values.into_iter().enumerate() {
        if v.fract() != 0.0 || v < 0.0 {
            return Err(Error::validation(format!(
                "label {v} at row {row} is not a non-negative integer"
            )));
        }
        labels.push(v as usize);
    }
    LabelVector::new(labels, num_known)
}

/// Saves labels as a 1-D `<i8` NPY array or one integer per CSV line.
pub fn save_labels(labels: &[usize], path: impl AsRef<Path>, format: ArrayFormat) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::invalid("empty array"));
    }
    let bytes = match format {
        ArrayFormat::Npy => {
            let values: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            npy::encode(&values, &[labels.len()], npy::Dtype::I8)
        }
        ArrayFormat::Csv => labels
            .iter()
            .map(|l| format!("{l}\n"))
            .collect::<String>()
            .into_bytes(),
    };
    write_bytes(path.as_ref(), &bytes)
}

/// Writes any serializable value as canonical JSON.
pub fn save_json<T: Serialize + ?Sized>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &to_canonical_vec(value)?)
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

/// One run of the known/unknown class split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub num_total_classes: usize,
    /// Original ids of the known classes, ascending.
    pub known_class_ids: Vec<usize>,
    /// Original id → compact id; knowns to `0..K`, unknowns to `K`.
    pub class_remap: BTreeMap<usize, usize>,
    pub dataset_name: String,
    pub run_index: u32,
}

impl RunManifest {
    pub fn num_known(&self) -> usize {
        self.known_class_ids.len()
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_known();
        let total = self.num_total_classes;
        let mut seen = vec![false; total];
        for &id in &self.known_class_ids {
            if id >= total {
                return Err(Error::validation(format!(
                    "known class id {id} is not below {total}"
                )));
            }
            if std::mem::replace(&mut seen[id], true) {
                return Err(Error::validation(format!(
                    "known class id {id} is repeated"
                )));
            }
        }
        if self.class_remap.len() != total || self.class_remap.keys().any(|&id| id >= total) {
            return Err(Error::validation(format!(
                "class remap must cover exactly the ids 0..{total}"
            )));
        }
        for (&orig, &compact) in &self.class_remap {
            let expected = self
                .known_class_ids
                .iter()
                .position(|&id| id == orig)
                .unwrap_or(k);
            if compact != expected {
                return Err(Error::validation(format!(
                    "class {orig} maps to {compact}, expected {expected}"
                )));
            }
        }
        Ok(())
    }
}

pub fn save_manifest(manifest: &RunManifest, path: impl AsRef<Path>) -> Result<()> {
    manifest.validate()?;
    save_json(manifest, path)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<RunManifest> {
    let m: RunManifest = load_json(path)?;
    m.validate()?;
    Ok(m)
}

/// The evaluation method a report describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "closed-set")]
    ClosedSet,
    #[serde(rename = "open-set-threshold")]
    OpenSetThreshold,
    #[serde(rename = "open-set-openmax")]
    OpenSetOpenMax,
}

impl Method {
    pub const ALL: [Method; 3] = [
        Method::ClosedSet,
        Method::OpenSetThreshold,
        Method::OpenSetOpenMax,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::ClosedSet => "closed-set",
            Method::OpenSetThreshold => "open-set-threshold",
            Method::OpenSetOpenMax => "open-set-openmax",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Brier, ECE, accuracy and reliability bins for one method under one
/// calibration condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: Method,
    pub calibrated: bool,
    pub brier: f64,
    pub ece: f64,
    pub accuracy: f64,
    pub temperature: Option<f64>,
    pub bins: Vec<ReliabilityBin>,
}

impl MetricReport {
    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64, hi: f64| {
            if (0.0..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(format!(
                    "{name} = {v} is outside [0, {hi}]"
                )))
            }
        };
        check("brier", self.brier, 2.0)?;
        check("ece", self.ece, 1.0)?;
        check("accuracy", self.accuracy, 1.0)?;
        if let Some(t) = self.temperature {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::validation(format!(
                    "temperature {t} is not positive"
                )));
            }
        }
        for (i, b) in self.bins.iter().enumerate() {
            if b.count > 0
                && !((0.0..=1.0).contains(&b.avg_conf) && (0.0..=1.0).contains(&b.accuracy))
            {
                return Err(Error::validation(format!(
                    "bin {i} has statistics outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

pub fn save_report(report: &MetricReport, path: impl AsRef<Path>) -> Result<()> {
    report.validate()?;
    save_json(report, path)
}

pub fn load_report(path: impl AsRef<Path>) -> Result<MetricReport> {
    let r: MetricReport = load_json(path)?;
    r.validate()?;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn manifest() -> RunManifest {
        let known = vec![1, 3, 4, 6, 8, 9];
        let class_remap = (0..10)
            .map(|id| (id, known.iter().position(|&k| k == id).unwrap_or(6)))
            .collect();
        RunManifest {
            seed: 42,
            num_total_classes: 10,
            known_class_ids: known,
            class_remap,
            dataset_name: "synthetic".into(),
            run_index: 0,
        }
    }

    #[test]
    fn csv_fixture_loads() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "1.5,2.0\n3.0,4.5").unwrap();
        let m = load_array(&p).unwrap();
        assert_eq!(m, Matrix::from_rows(&[[1.5, 2.0], [3.0, 4.5]]).unwrap());
    }

    #[test]
    fn format_errors_name_the_file_and_position() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,2\n3,nan\n").unwrap();
        let e = load_array(&p).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Format { .. }));
        assert!(msg.contains("bad.csv") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn empty_matrix_is_rejected() {
        let dir = tempdir().unwrap();
        let e = save_array(
            &Matrix::zeros(0, 0),
            dir.path().join("e.npy"),
            ArrayFormat::Npy,
        )
        .unwrap_err();
        assert!(e.to_string().contains("empty array"));
    }

    #[test]
    fn labels_round_trip_and_bounds() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("y.csv");
        fs::write(&p, "0\n5\n6\n").unwrap();
        let y = load_labels(&p, 6).unwrap();
        assert_eq!(y.as_slice(), &[0, 5, 6]);
        assert!(y.is_unknown(2));

        fs::write(&p, "0\n7\n").unwrap();
        let e = load_labels(&p, 6).unwrap_err();
        assert!(matches!(e, Error::Validation(_)));
        assert!(e.to_string().contains("row 1"));

        let q = dir.path().join("y.npy");
        save_labels(&[3, 0, 6], &q, ArrayFormat::Npy).unwrap();
        assert_eq!(load_labels(&q, 6).unwrap().as_slice(), &[3, 0, 6]);

        fs::write(&p, "0.5\n").unwrap();
        assert!(load_labels(&p, 6).is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("m.json");
        let m = manifest();
        save_manifest(&m, &p).unwrap();
        assert_eq!(load_manifest(&p).unwrap(), m);
    }

    #[test]
    fn manifest_validation() {
        let mut m = manifest();
        m.class_remap.insert(0, 2);
        assert!(m.validate().is_err());
        let mut m = manifest();
        m.known_class_ids.push(12);
        assert!(m.validate().is_err());
    }

    #[test]
    fn report_schema_keys() {
        let r = MetricReport {
            method: Method::OpenSetOpenMax,
            calibrated: true,
            brier: 0.25,
            ece: 0.1,
            accuracy: 0.5,
            temperature: Some(2.0),
            bins: vec![ReliabilityBin {
                lo: 0.0,
                hi: 1.0,
                count: 3,
                avg_conf: 0.6,
                accuracy: 0.5,
            }],
        };
        let v: serde_json::Value = serde_json::from_str(&to_canonical_string(&r).unwrap()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "accuracy",
                "bins",
                "brier",
                "calibrated",
                "ece",
                "method",
                "temperature"
            ]
        );
        assert_eq!(v["method"], "open-set-openmax");
        let bin: Vec<&str> = v["bins"][0]
            .as_object()
            .unwrap()
            .keys()
            .map(String::as_str)
            .collect();
        assert_eq!(bin, ["accuracy", "avg_conf", "count", "hi", "lo"]);

        let bad = MetricReport { brier: 2.5, ..r };
        assert!(bad.validate().is_err());
    }
}
