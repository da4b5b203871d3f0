//! File formats and atomic persistence.

use std::io::Write;
use std::path::Path;

use fahmc_core::models::LogisticDataset;
use fahmc_core::trace;
use fahmc_core::SampleMatrix;
use tempfile::NamedTempFile;

use crate::error::{HarnessError, Result};

/// Writes `path` by filling a temporary file in the same directory and
/// renaming it over the target.
pub fn write_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> std::io::Result<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    {
        let mut buf = std::io::BufWriter::new(tmp.as_file_mut());
        fill(&mut buf).map_err(|e| HarnessError::io(path, e))?;
        buf.flush().map_err(|e| HarnessError::io(path, e))?;
    }
    tmp.persist(path)
        .map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

/// CSV with a header row and one record per row.
pub fn write_table<S: AsRef<str>>(path: &Path, header: &[S], rows: &[Vec<String>]) -> Result<()> {
    write_atomic(path, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(header.iter().map(|h| h.as_ref()))?;
        for r in rows {
            out.write_record(r)?;
        }
        out.flush()
    })
}

/// `samples.csv` (header `theta_1,...,theta_d`) or the binary sidecar,
/// chosen by the `.bin` extension.
pub fn write_samples(path: &Path, samples: &SampleMatrix) -> Result<()> {
    if is_binary(path) {
        return write_atomic(path, |w| {
            trace::write_sidecar(w, samples.cols(), samples.data())
        });
    }
    let header: Vec<String> = (1..=samples.cols()).map(|j| format!("theta_{j}")).collect();
    let rows: Vec<Vec<String>> = (0..samples.rows())
        .map(|i| samples.row(i).iter().map(|v| v.to_string()).collect())
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_samples(path: &Path) -> Result<SampleMatrix> {
    if !path.exists() {
        return Err(HarnessError::MissingReference {
            path: path.to_path_buf(),
        });
    }
    let data_err = |message: String| HarnessError::Data {
        path: path.to_path_buf(),
        message,
    };
    if is_binary(path) {
        let file = std::fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
        let (dim, values) = trace::read_sidecar(std::io::BufReader::new(file))
            .map_err(|e| HarnessError::io(path, e))?;
        if dim == 0 || values.len() % dim != 0 {
            return Err(data_err(format!(
                "{} values do not fill rows of {dim}",
                values.len()
            )));
        }
        return SampleMatrix::new(values.len() / dim, dim, values)
            .map_err(|e| data_err(e.to_string()));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let cols = reader.headers().map_err(|e| data_err(e.to_string()))?.len();
    let mut values = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        for field in rec.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| data_err(format!("{field:?}: {e}")))?,
            );
        }
    }
    if values.is_empty() {
        return Err(data_err("no samples".into()));
    }
    SampleMatrix::new(values.len() / cols, cols, values).map_err(|e| data_err(e.to_string()))
}

fn is_binary(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "bin")
}

/// Dataset CSV with header `x_1,...,x_d,y` and labels in {0, 1}.
pub fn write_logistic_csv(path: &Path, data: &LogisticDataset) -> Result<()> {
    let d = data.dim;
    let mut header: Vec<String> = (1..=d).map(|j| format!("x_{j}")).collect();
    header.push("y".into());
    let rows: Vec<Vec<String>> = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let mut r: Vec<String> = data.features[i * d..(i + 1) * d]
                .iter()
                .map(|v| v.to_string())
                .collect();
            r.push(format!("{}", *y as u8));
            r
        })
        .collect();
    write_table(path, &header, &rows)
}

pub fn read_logistic_csv(path: &Path, dim: usize) -> Result<LogisticDataset> {
    let data_err = |message: String| HarnessError::Data {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| data_err(e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| data_err(e.to_string()))?
        .clone();
    if headers.len() != dim + 1 || headers.get(dim) != Some("y") {
        return Err(data_err(format!("expected header x_1,...,x_{dim},y")));
    }
    let (mut features, mut labels) = (Vec::new(), Vec::new());
    for rec in reader.records() {
        let rec = rec.map_err(|e| data_err(e.to_string()))?;
        for (j, field) in rec.iter().enumerate() {
            let v = field
                .trim()
                .parse::<f64>()
                .map_err(|e| data_err(format!("{field:?}: {e}")))?;
            if j == dim {
                if v != 0.0 && v != 1.0 {
                    return Err(data_err(format!("label {v} is not 0 or 1")));
                }
                labels.push(v);
            } else {
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(data_err("no rows".into()));
    }
    Ok(LogisticDataset {
        dim,
        features,
        labels,
        true_theta: Vec::new(),
    })
}
