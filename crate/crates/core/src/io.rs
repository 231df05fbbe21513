//! CSV ingestion and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::averaging::EvaluationReport;
use crate::data::Dataset;
use crate::error::{Error, Result};

/// Reads a headed, comma-separated numeric file. The `response` column
/// becomes `y`; every other column is a covariate, in file order. Blank or
/// non-numeric cells are rejected with their position.
pub fn load_csv(path: impl AsRef<Path>, response: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, response).map_err(|e| e.context(path.display().to_string()))
}

pub fn read_csv<R: Read>(input: R, response: &str) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::domain("file is empty (no header row)"));
    }
    let Some(target) = headers.iter().position(|h| h == response) else {
        return Err(Error::domain(format!(
            "response column '{response}' not found (columns: {})",
            headers.join(", ")
        )));
    };
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != target)
        .map(|(_, h)| h.clone())
        .collect();
    let mut y = Vec::new();
    let mut x = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        // header is row 1
        let row = idx + 2;
        let record = record.map_err(|e| Error::Data {
            row,
            column: String::new(),
            message: e.to_string(),
        })?;
        for (j, cell) in record.iter().enumerate() {
            let value = parse_cell(cell).map_err(|message| Error::Data {
                row,
                column: headers[j].clone(),
                message,
            })?;
            if j == target {
                y.push(value);
            } else {
                x.push(value);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::domain("file has a header but no data rows"));
    }
    Dataset::new(y, x, names)
}

fn parse_cell(cell: &str) -> std::result::Result<f64, String> {
    if cell.is_empty() {
        return Err("missing value".into());
    }
    let v: f64 = cell
        .parse()
        .map_err(|_| format!("'{cell}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{cell}' is not finite"))
    }
}

/// `v` with 17 significant digits, enough to read back the same `f64`.
pub fn format_exact(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `data` with the response first, named `response`.
pub fn write_csv<W: Write>(out: W, data: &Dataset, response: &str) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(std::iter::once(response).chain(data.names().iter().map(String::as_str)))?;
    for i in 0..data.n() {
        let rec: Vec<String> = std::iter::once(data.y()[i])
            .chain(data.row(i).iter().copied())
            .map(format_exact)
            .collect();
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn save_csv(path: impl AsRef<Path>, data: &Dataset, response: &str) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(BufWriter::new(file), data, response).map_err(|e| e.context(path.display().to_string()))
}

/// Paths written by [`emit_outputs`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub plot: PathBuf,
}

/// Writes `results.csv`, `results.json` and the long-format `plot.csv` into
/// `dir`, creating it if needed.
pub fn emit_outputs(report: &EvaluationReport, dir: impl AsRef<Path>) -> Result<OutputFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = OutputFiles {
        csv: dir.join("results.csv"),
        json: dir.join("results.json"),
        plot: dir.join("plot.csv"),
    };
    with_file(&files.csv, |w| report.write_csv(w))?;
    with_file(&files.json, |w| report.write_json(w))?;
    with_file(&files.plot, |w| report.write_plot_table(w))?;
    Ok(files)
}

/// Pretty JSON of any serializable value.
pub fn write_json_file<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    with_file(path.as_ref(), |w| {
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    })
}

pub(crate) fn with_file(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    body(&mut w).map_err(|e| e.context(path.display().to_string()))?;
    w.flush().map_err(|e| Error::io(path, e))
}
