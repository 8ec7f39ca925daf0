//! CSV ingestion and export, partition tables and the binary model format.
//!
//! Model files are a sequence of records, each laid out as
//!
//! ```text
//! magic "FGMM" | version u32 | d u64 | K u64 | cov_type u8 (0 diagonal, 1 full)
//! weights K*f64 | means K*d*f64 row-major
//! covariances K*d*f64 (diagonal) or K*d*d*f64 row-major (full)
//! n_local u64
//! ```
//!
//! with every integer and float little-endian.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::gmm::{CovarianceType, Covariances, GmmParams};
use crate::one_shot::ClientModel;
use crate::partition::{min_max_normalize, LabeledDataset, Partition};

pub const MODEL_MAGIC: &[u8; 4] = b"FGMM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for LabelColumn {
    type Err = Error;

    /// A plain non-negative integer selects by position, anything else by
    /// header name.
    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::invalid("empty label column"));
        }
        Ok(s.parse::<usize>()
            .map(LabelColumn::Index)
            .unwrap_or_else(|_| LabelColumn::Name(s.to_string())))
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

/// Reads a headed CSV of numeric features, optionally with a label column,
/// and min-max normalizes every feature to `[0, 1]`. Without a label column
/// every row gets class 0. Labels are mapped to dense ids in sorted order
/// (numerically when every label is an integer).
///
/// Row numbers in errors count the header as row 1.
pub fn load_csv(path: &Path, label_column: Option<&LabelColumn>) -> Result<LabeledDataset> {
    let (rows, labels, n_classes) = read_csv_table(open(path)?, label_column)?;
    let mut rows = rows;
    min_max_normalize(&mut rows);
    LabeledDataset::new(rows, labels, n_classes)
}

/// Like [`load_csv`] but keeps the raw feature values.
pub fn load_csv_raw(path: &Path, label_column: Option<&LabelColumn>) -> Result<LabeledDataset> {
    let (rows, labels, n_classes) = read_csv_table(open(path)?, label_column)?;
    LabeledDataset::new(rows, labels, n_classes)
}

fn read_csv_table<R: Read>(
    reader: R,
    label_column: Option<&LabelColumn>,
) -> Result<(Array2<f64>, Vec<usize>, usize)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Ingest {
            row: 1,
            column: 1,
            message: "file is empty".into(),
        });
    }
    let width = headers.len();
    let label_idx = match label_column {
        None => None,
        Some(LabelColumn::Index(i)) if *i < width => Some(*i),
        Some(LabelColumn::Index(i)) => {
            return Err(Error::invalid(format!(
                "label column {i} out of range for {width} columns"
            )))
        }
        Some(LabelColumn::Name(name)) => Some(
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::invalid(format!("no column named `{name}`")))?,
        ),
    };
    let d = width - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(Error::invalid("no feature columns"));
    }

    let mut values = Vec::new();
    let mut raw_labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record?;
        if record.len() != width {
            return Err(Error::Ingest {
                row,
                column: record.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", record.len()),
            });
        }
        for (j, field) in record.iter().enumerate() {
            if Some(j) == label_idx {
                raw_labels.push(field.to_string());
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Ingest {
                row,
                column: j + 1,
                message: format!("`{field}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Ingest {
                    row,
                    column: j + 1,
                    message: format!("`{field}` is not finite"),
                });
            }
            values.push(v);
        }
    }
    let n = values.len() / d;
    if n == 0 {
        return Err(Error::Ingest {
            row: 2,
            column: 1,
            message: "file has a header but no data rows".into(),
        });
    }
    let rows = Array2::from_shape_vec((n, d), values).expect("row width checked");
    if label_idx.is_none() {
        return Ok((rows, vec![0; n], 1));
    }
    let (labels, n_classes) = encode_labels(&raw_labels);
    Ok((rows, labels, n_classes))
}

fn encode_labels(raw: &[String]) -> (Vec<usize>, usize) {
    let numeric: Option<Vec<i64>> = raw.iter().map(|s| s.parse().ok()).collect();
    match numeric {
        Some(nums) => {
            let ids: BTreeMap<i64, usize> = nums
                .iter()
                .copied()
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            (nums.iter().map(|v| ids[v]).collect(), ids.len())
        }
        None => {
            let ids: BTreeMap<&str, usize> = raw
                .iter()
                .map(String::as_str)
                .collect::<std::collections::BTreeSet<_>>()
                .into_iter()
                .enumerate()
                .map(|(i, v)| (v, i))
                .collect();
            (raw.iter().map(|v| ids[v.as_str()]).collect(), ids.len())
        }
    }
}

/// Writes features `x0..x{d-1}` plus a `label` column. Floats use the
/// shortest representation that parses back to the same value.
pub fn write_dataset_csv(path: &Path, data: &LabeledDataset) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(create(path)?);
    let mut header: Vec<String> = (0..data.dim()).map(|j| format!("x{j}")).collect();
    header.push("label".into());
    wtr.write_record(&header)?;
    for (row, label) in data.rows.rows().into_iter().zip(&data.labels) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(label.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

/// One record per row: `row_index,client_id,label`, in row order.
pub fn write_partition_csv(path: &Path, partition: &Partition, labels: &[usize]) -> Result<()> {
    let owner = partition.client_of_rows(labels.len())?;
    let mut wtr = csv::Writer::from_writer(create(path)?);
    wtr.write_record(["row_index", "client_id", "label"])?;
    for (i, (c, l)) in owner.iter().zip(labels).enumerate() {
        wtr.write_record([i.to_string(), c.to_string(), l.to_string()])?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))
}

pub fn read_partition_csv(path: &Path) -> Result<Partition> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut pairs = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let field = |j: usize| -> Result<usize> {
            record
                .get(j)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Ingest {
                    row: i + 2,
                    column: j + 1,
                    message: "expected a non-negative integer".into(),
                })
        };
        pairs.push((field(0)?, field(1)?));
    }
    let n_clients = pairs.iter().map(|&(_, c)| c + 1).max().unwrap_or(0);
    let mut assignments = vec![Vec::new(); n_clients];
    for (row, c) in pairs {
        assignments[c].push(row);
    }
    assignments.iter_mut().for_each(|a| a.sort_unstable());
    let partition = Partition { assignments };
    let n_rows = partition.assignments.iter().map(Vec::len).sum();
    partition.client_of_rows(n_rows)?;
    Ok(partition)
}

pub fn encode_model(model: &ClientModel, out: &mut Vec<u8>) {
    let p = &model.params;
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(p.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(p.k() as u64).to_le_bytes());
    out.push(match p.cov_type() {
        CovarianceType::Diagonal => 0,
        CovarianceType::Full => 1,
    });
    let mut put = |v: f64| out.extend_from_slice(&v.to_le_bytes());
    p.weights().iter().for_each(|&v| put(v));
    p.means().iter().for_each(|&v| put(v));
    match p.covariances() {
        Covariances::Diagonal(v) => v.iter().for_each(|&x| put(x)),
        Covariances::Full(m) => m.iter().for_each(|&x| put(x)),
    }
    out.extend_from_slice(&(model.n_local as u64).to_le_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::ModelFormat(format!("truncated record at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| Error::ModelFormat("size overflow".into()))?)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

/// Decodes every record in `buf`.
pub fn decode_models(buf: &[u8]) -> Result<Vec<ClientModel>> {
    let mut cur = Cursor { buf, pos: 0 };
    let mut out = Vec::new();
    while cur.pos < buf.len() {
        if cur.take(4)? != MODEL_MAGIC {
            return Err(Error::ModelFormat(format!("bad magic at byte {}", cur.pos - 4)));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::ModelFormat(format!("unsupported version {version}")));
        }
        let d = cur.u64()? as usize;
        let k = cur.u64()? as usize;
        let cov = cur.take(1)?[0];
        let weights = Array1::from(cur.f64s(k)?);
        let means = Array2::from_shape_vec((k, d), cur.f64s(k * d)?)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        let covariances = match cov {
            0 => Covariances::Diagonal(
                Array2::from_shape_vec((k, d), cur.f64s(k * d)?)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
            ),
            1 => Covariances::Full(
                Array3::from_shape_vec((k, d, d), cur.f64s(k * d * d)?)
                    .map_err(|e| Error::ModelFormat(e.to_string()))?,
            ),
            other => return Err(Error::ModelFormat(format!("unknown covariance tag {other}"))),
        };
        let n_local = cur.u64()? as usize;
        let params = GmmParams::new(weights, means, covariances)
            .map_err(|e| Error::ModelFormat(e.to_string()))?;
        out.push(ClientModel::new(params, n_local).map_err(|e| Error::ModelFormat(e.to_string()))?);
    }
    Ok(out)
}

/// Writes the models as consecutive records.
pub fn write_models(path: &Path, models: &[ClientModel]) -> Result<()> {
    let mut buf = Vec::new();
    for m in models {
        encode_model(m, &mut buf);
    }
    let mut f = create(path)?;
    f.write_all(&buf).and_then(|_| f.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_models(path: &Path) -> Result<Vec<ClientModel>> {
    let mut buf = Vec::new();
    open(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    let models = decode_models(&buf)?;
    if models.is_empty() {
        return Err(Error::ModelFormat(format!("{} holds no models", path.display())));
    }
    Ok(models)
}
