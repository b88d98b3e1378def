//! Dataset files (headerless CSV and the `DPME` binary layout) and the
//! results record emitted by the command-line tool.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Dataset;
use crate::mechanism::{Estimate, MechanismOutput, PrivacySpent};

pub const MAGIC: &[u8; 4] = b"DPME";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Bin,
}

/// Headerless CSV with one sample per line.
pub fn read_csv<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut data = Vec::new();
    let mut d = None;
    let mut n = 0;
    for (line, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("line {}: {e}", line + 1)))?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match d {
            None => d = Some(record.len()),
            Some(width) if width != record.len() => {
                return Err(Error::Format(format!(
                    "line {} has {} columns, expected {width}",
                    line + 1,
                    record.len()
                )));
            }
            _ => {}
        }
        for field in record.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::Format(format!("line {}: cannot parse {field:?} as a number", line + 1)))?;
            data.push(v);
        }
        n += 1;
    }
    Dataset::from_vec(n, d.unwrap_or(0), data)
}

pub fn write_csv<W: Write>(x: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    for row in x.rows() {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bin<R: Read>(mut reader: R) -> Result<Dataset> {
    let mut header = [0u8; 24];
    reader
        .read_exact(&mut header)
        .map_err(|_| Error::Format("binary header truncated".into()))?;
    if &header[..4] != MAGIC {
        return Err(Error::Format("missing DPME magic bytes".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(Error::Format(format!("unsupported binary version {version}")));
    }
    let n = u64::from_le_bytes(header[8..16].try_into().expect("8 bytes"));
    let d = u64::from_le_bytes(header[16..24].try_into().expect("8 bytes"));
    let count = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::Format(format!("declared size {n} x {d} is too large")))?;
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(Error::Format(format!(
            "payload has {} bytes, header declares {n} x {d} values ({} bytes)",
            bytes.len(),
            count * 8
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Dataset::from_vec(n as usize, d as usize, data)
}

pub fn write_bin<W: Write>(x: &Dataset, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(x.n() as u64).to_le_bytes())?;
    w.write_all(&(x.d() as u64).to_le_bytes())?;
    for v in x.as_slice() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `path`, sniffing the magic bytes when `format` is `None`.
pub fn read_dataset(path: &Path, format: Option<DataFormat>) -> Result<Dataset> {
    let mut file = BufReader::new(File::open(path)?);
    let format = match format {
        Some(f) => f,
        None => {
            let mut bytes = Vec::new();
            file.read_to_end(&mut bytes)?;
            return if bytes.starts_with(MAGIC) {
                read_bin(bytes.as_slice())
            } else {
                read_csv(bytes.as_slice())
            };
        }
    };
    match format {
        DataFormat::Csv => read_csv(file),
        DataFormat::Bin => read_bin(file),
    }
}

pub fn write_dataset(x: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let file = File::create(path)?;
    match format {
        DataFormat::Csv => write_csv(x, file),
        DataFormat::Bin => write_bin(x, file),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
}

/// The JSON object written by the estimation subcommands.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultsRecord<C: Serialize> {
    pub config: C,
    pub score1: Option<usize>,
    pub score2: Option<usize>,
    pub outcome: Outcome,
    /// Vector, matrix (array of rows), `{mean, covariance}`, or null.
    pub estimate: serde_json::Value,
    pub privacy_spent: PrivacySpent,
    pub timing_ms: f64,
}

fn matrix_json(m: &nalgebra::DMatrix<f64>) -> serde_json::Value {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    serde_json::json!(rows)
}

impl<C: Serialize> ResultsRecord<C> {
    pub fn from_output(config: C, out: &MechanismOutput, timing_ms: f64) -> Self {
        let estimate = match &out.estimate {
            None => serde_json::Value::Null,
            Some(Estimate::Mean(m)) => serde_json::json!(m),
            Some(Estimate::Covariance(c)) => matrix_json(c.entries()),
            Some(Estimate::Gaussian { mean, covariance }) => {
                serde_json::json!({ "mean": mean, "covariance": matrix_json(covariance.entries()) })
            }
        };
        Self {
            config,
            score1: out.score1,
            score2: out.score2,
            outcome: if out.passed() { Outcome::Pass } else { Outcome::Fail },
            estimate,
            privacy_spent: out.privacy_spent,
            timing_ms,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Dataset {
        Dataset::from_vec(3, 2, vec![1.5, -2.0, 0.1, 1e-300, 3.0e10, -0.0]).unwrap()
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut buf = Vec::new();
        write_csv(&sample(), &mut buf).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn bin_round_trip_and_layout() {
        let mut buf = Vec::new();
        write_bin(&sample(), &mut buf).unwrap();
        assert_eq!(&buf[..4], b"DPME");
        assert_eq!(buf.len(), 24 + 6 * 8);
        assert_eq!(read_bin(buf.as_slice()).unwrap(), sample());
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        assert!(matches!(read_csv("1,2\n3\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_csv("1,abc\n".as_bytes()), Err(Error::Format(_))));
        assert!(matches!(read_csv("1,NaN\n".as_bytes()), Err(Error::NonFinite { .. })));
        assert!(matches!(read_bin(&b"DPMX"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_bin(&sample(), &mut buf).unwrap();
        buf.pop();
        assert!(matches!(read_bin(buf.as_slice()), Err(Error::Format(_))));
    }
}
