//! On-disk formats: CSV tables, JSON documents and JSON-lines logs.
//!
//! Floats are written with Rust's shortest round-trip formatting, so
//! write → read → write is byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mapping::LogitsTable;
use crate::model::SimPretrainedModel;
use crate::numerics::DenseTable;
use crate::synth::{Dataset, GeneratedTask, SubclassTaskSpec};
use crate::vr::EpochRecord;

pub const TASK_FILE: &str = "task.json";
pub const TRAIN_FILE: &str = "train.csv";
pub const TEST_FILE: &str = "test.csv";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, text).map_err(io_err(path))
}

pub fn to_json_line<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string(value).expect("serializable value");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_json_line(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_log(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let text: String = records.iter().map(to_json_line).collect();
    write_text(path, &text)
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

fn table_csv(header: &[String], labels: &[usize], table: &DenseTable) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for (i, &y) in labels.iter().enumerate() {
        out.push_str(&format!("{i},{y}"));
        for v in table.row(i) {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

/// Reads `id,<label column>,<prefix>0,...` rows. Returns labels and values.
fn read_table_csv(path: &Path, label_col: &str, prefix: &str) -> Result<(Vec<usize>, DenseTable)> {
    let parse_err = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)
        .map_err(|e| parse_err(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    let width = header.len().saturating_sub(2);
    let expected: Vec<String> = ["id".to_string(), label_col.to_string()]
        .into_iter()
        .chain((0..width).map(|j| format!("{prefix}{j}")))
        .collect();
    if width == 0 || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(parse_err(
            1,
            format!("expected header 'id,{label_col},{prefix}0,...', found '{}'", header.iter().collect::<Vec<_>>().join(",")),
        ));
    }

    let mut labels = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width + 2 {
            return Err(parse_err(
                line,
                format!("expected {} fields, found {}", width + 2, record.len()),
            ));
        }
        let id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad id '{}'", &record[0])))?;
        if id != labels.len() {
            return Err(parse_err(line, format!("expected id {}, found {id}", labels.len())));
        }
        let y: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| parse_err(line, format!("bad label '{}'", &record[1])))?;
        labels.push(y);
        for field in record.iter().skip(2) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("bad number '{field}'")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value '{field}'")));
            }
            values.push(v);
        }
    }
    if labels.is_empty() {
        return Err(parse_err(2, "no data rows".to_string()));
    }
    Ok((labels.clone(), DenseTable::new(labels.len(), width, values)?))
}

pub fn logits_csv(lt: &LogitsTable) -> String {
    let header: Vec<String> = ["id".to_string(), "y_true".to_string()]
        .into_iter()
        .chain((0..lt.k_s()).map(|j| format!("l{j}")))
        .collect();
    table_csv(&header, lt.labels(), lt.logits())
}

pub fn write_logits(path: &Path, lt: &LogitsTable) -> Result<()> {
    write_text(path, &logits_csv(lt))
}

pub fn read_logits(path: &Path) -> Result<LogitsTable> {
    let (labels, table) = read_table_csv(path, "y_true", "l")?;
    LogitsTable::new(table, labels)
}

pub fn dataset_csv(ds: &Dataset) -> String {
    let header: Vec<String> = ["id".to_string(), "label".to_string()]
        .into_iter()
        .chain((0..ds.d_t()).map(|j| format!("p{j}")))
        .collect();
    table_csv(&header, ds.labels(), ds.inputs())
}

pub fn read_dataset(path: &Path, k_t: usize) -> Result<Dataset> {
    let (labels, table) = read_table_csv(path, "label", "p")?;
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= k_t) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            msg: format!("label {y} out of range for {k_t} classes"),
        });
    }
    Dataset::new(table, labels, k_t)
}

/// Task manifest: generation parameters, split sizes, ground-truth block
/// structure and the frozen model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub spec: SubclassTaskSpec,
    pub k_t: usize,
    pub d_t: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub true_assignment: Vec<Option<usize>>,
    pub model: SimPretrainedModel,
}

#[derive(Debug, Clone)]
pub struct LoadedTask {
    pub manifest: TaskManifest,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn write_task(dir: &Path, task: &GeneratedTask, spec: &SubclassTaskSpec) -> Result<Vec<PathBuf>> {
    let manifest = TaskManifest {
        spec: spec.clone(),
        k_t: spec.k_t,
        d_t: task.train.d_t(),
        n_train: task.train.n(),
        n_test: task.test.n(),
        true_assignment: task.true_assignment.clone(),
        model: task.model.clone(),
    };
    let paths = [dir.join(TASK_FILE), dir.join(TRAIN_FILE), dir.join(TEST_FILE)];
    write_json(&paths[0], &manifest)?;
    write_text(&paths[1], &dataset_csv(&task.train))?;
    write_text(&paths[2], &dataset_csv(&task.test))?;
    Ok(paths.to_vec())
}

/// Loads a task from its directory or from the path of its manifest.
pub fn read_task(path: &Path) -> Result<LoadedTask> {
    let dir = if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    };
    let manifest_path = if path.is_dir() { dir.join(TASK_FILE) } else { path.to_path_buf() };
    let manifest: TaskManifest = read_json(&manifest_path)?;
    let train = read_dataset(&dir.join(TRAIN_FILE), manifest.k_t)?;
    let test = read_dataset(&dir.join(TEST_FILE), manifest.k_t)?;
    for (ds, n, what) in [(&train, manifest.n_train, "train rows"), (&test, manifest.n_test, "test rows")] {
        if ds.n() != n {
            return Err(Error::DimensionMismatch { what, expected: n, got: ds.n() });
        }
        if ds.d_t() != manifest.d_t {
            return Err(Error::DimensionMismatch {
                what: "dataset width",
                expected: manifest.d_t,
                got: ds.d_t(),
            });
        }
    }
    Ok(LoadedTask { manifest, train, test })
}
