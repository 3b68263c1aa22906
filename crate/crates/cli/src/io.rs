//! Dataset CSV files and JSON archive containers.
//!
//! Dataset files have a header row whose first `q` names are `x1..xq`
//! (predictor columns); the remaining columns are responses. A response cell
//! that is empty or the literal `NaN` is unobserved. Predictor cells must be
//! finite numbers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use covreg::gibbs::{PosteriorArchive, ARCHIVE_FORMAT_VERSION};
use covreg::{CovarianceTrajectory, Dataset};
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

/// Version of the JSON container wrapping archives, truths and reports.
pub const CONTAINER_VERSION: u32 = 1;

/// Token marking an unobserved response cell (besides an empty cell).
pub const MISSING_TOKEN: &str = "NaN";

/// A dataset with its response column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub dataset: Dataset,
    pub response_names: Vec<String>,
}

fn open(path: &Path) -> CliResult<File> {
    File::open(path).map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Parses a dataset from CSV text. `source` names the input in error messages.
pub fn read_table<R: Read>(reader: R, source: &str) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).trim(csv::Trim::All).from_reader(reader);
    let data_err = |line: u64, msg: String| CliError::Data(format!("{source}:{line}: {msg}"));
    let header = rdr.headers().map_err(|e| CliError::Data(format!("{source}:1: {e}")))?.clone();
    let q = header.iter().enumerate().take_while(|(c, name)| *name == format!("x{}", c + 1)).count();
    if q == 0 {
        return Err(data_err(1, "header must start with predictor column x1".into()));
    }
    let width = header.len();
    if width == q {
        return Err(data_err(1, "no response columns".into()));
    }
    let response_names: Vec<String> = header.iter().skip(q).map(str::to_string).collect();

    let mut xs = Vec::new();
    let mut values = Vec::new();
    let mut observed = Vec::new();
    let mut first_line: HashMap<Vec<u64>, u64> = HashMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            data_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != width {
            return Err(data_err(line, format!("expected {width} fields, found {}", record.len())));
        }
        let mut x = Vec::with_capacity(q);
        for (c, cell) in record.iter().take(q).enumerate() {
            let v: f64 = cell.parse().map_err(|_| data_err(line, format!("predictor x{} is not a number: '{cell}'", c + 1)))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("predictor x{} must be finite", c + 1)));
            }
            x.push(v);
        }
        for (c, cell) in record.iter().skip(q).enumerate() {
            if cell.is_empty() || cell == MISSING_TOKEN {
                values.push(0.0);
                observed.push(false);
                continue;
            }
            let v: f64 = cell
                .parse()
                .map_err(|_| data_err(line, format!("response '{}' is not a number: '{cell}'", response_names[c])))?;
            if !v.is_finite() {
                return Err(data_err(line, format!("response '{}' must be finite or {MISSING_TOKEN}", response_names[c])));
            }
            values.push(v);
            observed.push(true);
        }
        let key: Vec<u64> = x.iter().map(|v: &f64| v.to_bits()).collect();
        if let Some(prev) = first_line.get(&key) {
            log::warn!("{source}:{line}: predictor values repeat line {prev}; keeping both rows");
        } else {
            first_line.insert(key, line);
        }
        xs.push(x);
    }
    if xs.is_empty() {
        return Err(data_err(1, "no data rows".into()));
    }
    let (n, p) = (xs.len(), response_names.len());
    let y = DMatrix::from_row_slice(n, p, &values);
    let mask = DMatrix::from_row_slice(n, p, &observed);
    let dataset = Dataset::new(xs, y, mask).map_err(|e| CliError::Data(format!("{source}: {e}")))?;
    Ok(Table { dataset, response_names })
}

pub fn load_table(path: &Path) -> CliResult<Table> {
    read_table(open(path)?, &path.display().to_string())
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    Ok(load_table(path)?.dataset)
}

/// Default response names `y1..yp`.
pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|j| format!("y{j}")).collect()
}

/// Writes a dataset; unobserved cells are left empty. Numbers use the
/// shortest representation that parses back to the same value.
pub fn write_table<W: Write>(writer: W, data: &Dataset, names: &[String]) -> CliResult<()> {
    if names.len() != data.p() {
        return Err(CliError::Usage("one name per response column".into()));
    }
    let q = data.xs.first().map_or(0, Vec::len);
    let mut w = csv::Writer::from_writer(writer);
    let io_err = |e: csv::Error| CliError::Data(e.to_string());
    let header: Vec<String> = (1..=q).map(|c| format!("x{c}")).chain(names.iter().cloned()).collect();
    w.write_record(&header).map_err(io_err)?;
    for i in 0..data.n() {
        let row: Vec<String> = data.xs[i]
            .iter()
            .map(|v| v.to_string())
            .chain((0..data.p()).map(|j| if data.observed[(i, j)] { data.y[(i, j)].to_string() } else { String::new() }))
            .collect();
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

pub fn save_table(path: &Path, data: &Dataset, names: &[String]) -> CliResult<()> {
    write_table(create(path)?, data, names)
}

pub fn save_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    save_table(path, data, &default_names(data.p()))
}

/// JSON document carrying a payload and the manifest that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Container<T> {
    pub container_version: u32,
    pub kind: String,
    pub manifest: RunManifest,
    pub payload: T,
}

fn save_container<T: Serialize>(path: &Path, kind: &str, manifest: &RunManifest, payload: &T) -> CliResult<()> {
    #[derive(Serialize)]
    struct Borrowed<'a, T> {
        container_version: u32,
        kind: &'a str,
        manifest: &'a RunManifest,
        payload: &'a T,
    }
    let doc = Borrowed { container_version: CONTAINER_VERSION, kind, manifest, payload };
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, &doc).map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

fn load_container<T: DeserializeOwned>(path: &Path, kind: &str) -> CliResult<Container<T>> {
    let mut text = String::new();
    open(path)?.read_to_string(&mut text).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: not a JSON document: {e}", path.display())))?;
    let version = value.get("container_version").and_then(|v| v.as_u64());
    if version != Some(CONTAINER_VERSION as u64) {
        return Err(CliError::Data(format!(
            "{}: container version {:?} does not match supported version {CONTAINER_VERSION}",
            path.display(),
            version
        )));
    }
    let found = value.get("kind").and_then(|v| v.as_str()).unwrap_or("");
    if found != kind {
        return Err(CliError::Data(format!("{}: expected a {kind} file, found '{found}'", path.display())));
    }
    if kind == "archive" {
        let fv = value.pointer("/payload/format_version").and_then(|v| v.as_u64());
        if fv != Some(ARCHIVE_FORMAT_VERSION as u64) {
            return Err(CliError::Data(format!(
                "{}: archive format version {:?} does not match supported version {ARCHIVE_FORMAT_VERSION}",
                path.display(),
                fv
            )));
        }
    }
    serde_json::from_value(value).map_err(|e| CliError::Data(format!("{}: malformed {kind}: {e}", path.display())))
}

pub fn save_archive(path: &Path, archive: &PosteriorArchive, manifest: &RunManifest) -> CliResult<()> {
    save_container(path, "archive", manifest, archive)
}

pub fn load_archive(path: &Path) -> CliResult<(PosteriorArchive, RunManifest)> {
    let c: Container<PosteriorArchive> = load_container(path, "archive")?;
    Ok((c.payload, c.manifest))
}

pub fn save_truth(path: &Path, truth: &CovarianceTrajectory, manifest: &RunManifest) -> CliResult<()> {
    save_container(path, "truth", manifest, truth)
}

pub fn load_truth(path: &Path) -> CliResult<CovarianceTrajectory> {
    Ok(load_container::<CovarianceTrajectory>(path, "truth")?.payload)
}

pub fn save_report<T: Serialize>(path: &Path, report: &T, manifest: &RunManifest) -> CliResult<()> {
    save_container(path, "report", manifest, report)
}

/// Path of the manifest written next to a CSV result: `<path>.manifest.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

pub fn save_sidecar(path: &Path, manifest: &RunManifest) -> CliResult<()> {
    let side = sidecar_path(path);
    let mut w = create(&side)?;
    serde_json::to_writer_pretty(&mut w, manifest).map_err(|e| CliError::Data(e.to_string()))?;
    w.flush().map_err(|e| CliError::Data(e.to_string()))
}

/// `out.json` -> `out.chain2.json` for chain index 2.
pub fn chain_path(path: &Path, chain: usize) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.chain{chain}.{}", ext.to_string_lossy()),
        None => format!("{stem}.chain{chain}"),
    };
    path.with_file_name(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_empty_cell_gives_one_missing() {
        let text = "x1,a,b\n1,0.5,\n2,1.5,2\n3,NaN,4\n";
        let t = read_table(text.as_bytes(), "mem").unwrap();
        assert_eq!(t.dataset.missing_count(), 2);
        assert_eq!(t.response_names, vec!["a", "b"]);
        let text = "x1,a,b\n1,0.5,\n2,1.5,2\n3,1,4\n";
        let t = read_table(text.as_bytes(), "mem").unwrap();
        assert_eq!(t.dataset.observed.iter().filter(|o| !**o).count(), 1);
        assert!(!t.dataset.observed[(0, 1)]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = read_table("x1,a\n1,2\n2,abc\n".as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().starts_with("f.csv:3:"), "{err}");
        let err = read_table("x1,a,b\n1,2,3\n2,3\n".as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().starts_with("f.csv:3:"), "{err}");
        assert_eq!(err.exit_code(), 3);
        assert!(read_table("a,b\n1,2\n".as_bytes(), "f.csv").is_err());
        assert!(read_table("x1,a\n,2\n".as_bytes(), "f.csv").is_err());
    }

    #[test]
    fn multiple_predictor_columns() {
        let t = read_table("x1,x2,r\n1,2,3\n4,5,\n".as_bytes(), "mem").unwrap();
        assert_eq!(t.dataset.xs, vec![vec![1.0, 2.0], vec![4.0, 5.0]]);
        assert_eq!(t.dataset.p(), 1);
    }

    #[test]
    fn duplicate_predictors_are_kept() {
        let t = read_table("x1,a\n1,2\n1,3\n".as_bytes(), "mem").unwrap();
        assert_eq!(t.dataset.n(), 2);
    }

    #[test]
    fn write_read_round_trip() {
        let text = "x1,a,b\n0.1,0.30000000000000004,\n2,-1e-300,7\n";
        let t = read_table(text.as_bytes(), "mem").unwrap();
        let mut buf = Vec::new();
        write_table(&mut buf, &t.dataset, &t.response_names).unwrap();
        let back = read_table(buf.as_slice(), "mem").unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn chain_paths() {
        assert_eq!(chain_path(Path::new("out/fit.json"), 2), PathBuf::from("out/fit.chain2.json"));
        assert_eq!(chain_path(Path::new("fit"), 0), PathBuf::from("fit.chain0"));
        assert_eq!(sidecar_path(Path::new("s.csv")), PathBuf::from("s.csv.manifest.json"));
    }
}
