//! On-disk formats: parameter files and dataset CSVs.
//!
//! Parameters are a flat little-endian file: six `u64` header words
//! (magic, version, d, p, q, cell kind code) followed by every tensor as
//! `f64` in [`TENSOR_NAMES`](crate::cells::TENSOR_NAMES) order.
//!
//! Datasets are text: a `# name, dt, tau, n_samples, len` header and one
//! series per row, each value printed with 17 significant digits so the
//! round trip is exact.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::cells::{CellKind, CellParams};
use crate::dde::SeriesDataset;
use crate::training::AddingDataset;
use crate::{Error, Result};

pub const PARAMS_MAGIC: u64 = u64::from_le_bytes(*b"TAUGRU\0\0");
pub const PARAMS_VERSION: u64 = 1;
const HEADER_WORDS: usize = 6;

pub fn encode_params(params: &CellParams, kind: CellKind) -> Vec<u8> {
    let (d, p, q) = params.dims();
    let mut out = Vec::with_capacity(8 * (HEADER_WORDS + params.param_count()));
    for word in [PARAMS_MAGIC, PARAMS_VERSION, d as u64, p as u64, q as u64, kind.code()] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for tensor in params.tensors() {
        for v in tensor {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_params(bytes: &[u8]) -> Result<(CellParams, CellKind)> {
    if bytes.len() < 8 * HEADER_WORDS {
        return Err(Error::Format(format!("params file too short ({} bytes)", bytes.len())));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[8 * i..8 * i + 8].try_into().expect("8 bytes"));
    if word(0) != PARAMS_MAGIC {
        return Err(Error::Format("bad magic in params file".into()));
    }
    if word(1) != PARAMS_VERSION {
        return Err(Error::Format(format!("unsupported params version {}", word(1))));
    }
    let dim = |i: usize| -> Result<usize> {
        let v = word(i);
        if v == 0 || v > 1 << 20 {
            return Err(Error::Format(format!("implausible dimension {v} in params header")));
        }
        Ok(v as usize)
    };
    let (d, p, q) = (dim(2)?, dim(3)?, dim(4)?);
    let kind = CellKind::from_code(word(5)).ok_or_else(|| Error::Format(format!("unknown cell kind code {}", word(5))))?;
    let mut params = CellParams::zeros(d, p, q);
    let expected = 8 * (HEADER_WORDS + params.param_count());
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "params file has {} bytes, expected {expected} for d={d}, p={p}, q={q}",
            bytes.len()
        )));
    }
    let mut chunks = bytes[8 * HEADER_WORDS..].chunks_exact(8);
    for tensor in params.tensors_mut() {
        for v in tensor.iter_mut() {
            *v = f64::from_le_bytes(chunks.next().expect("length checked").try_into().expect("8 bytes"));
        }
    }
    Ok((params, kind))
}

pub fn save_params(path: &Path, params: &CellParams, kind: CellKind) -> Result<()> {
    write_atomic(path, &encode_params(params, kind))
}

pub fn load_params(path: &Path) -> Result<(CellParams, CellKind)> {
    decode_params(&fs::read(path)?)
}

/// Write via a temporary sibling and rename, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Shortest text that parses back to the same `f64`, with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_f64(s: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Format(format!("line {line}: not a number: {s:?}")))
}

pub fn series_to_csv(data: &SeriesDataset) -> String {
    let mut out = format!(
        "# {}, {}, {}, {}, {}\n",
        data.name,
        data.dt,
        data.tau,
        data.series.len(),
        data.series_len()
    );
    for s in &data.series {
        push_row(&mut out, s.iter().copied());
    }
    out
}

fn push_row(out: &mut String, values: impl Iterator<Item = f64>) {
    let mut first = true;
    for v in values {
        if !first {
            out.push(',');
        }
        first = false;
        out.push_str(&fmt_f64(v));
    }
    out.push('\n');
}

struct Header {
    name: String,
    dt: f64,
    tau: f64,
    n_samples: usize,
    len: usize,
}

fn parse_header(line: &str) -> Result<Header> {
    let body = line
        .strip_prefix('#')
        .ok_or_else(|| Error::Format("dataset must start with a '#' header line".into()))?;
    let fields: Vec<&str> = body.split(',').map(str::trim).collect();
    if fields.len() != 5 {
        return Err(Error::Format(format!("header needs 5 fields, found {}", fields.len())));
    }
    let count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("header: not a count: {s:?}")))
    };
    Ok(Header {
        name: fields[0].to_string(),
        dt: parse_f64(fields[1], 1)?,
        tau: parse_f64(fields[2], 1)?,
        n_samples: count(fields[3])?,
        len: count(fields[4])?,
    })
}

fn parse_rows(text: &str, expected_rows: usize, width: usize) -> Result<Vec<Vec<f64>>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| l.split(',').map(|v| parse_f64(v, i + 1)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    if rows.len() != expected_rows {
        return Err(Error::Format(format!("header announces {expected_rows} rows, found {}", rows.len())));
    }
    if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != width) {
        return Err(Error::Format(format!("row {} has {} values, expected {width}", i + 1, r.len())));
    }
    Ok(rows)
}

pub fn series_from_csv(text: &str) -> Result<SeriesDataset> {
    let header = parse_header(text.lines().next().unwrap_or(""))?;
    let series = parse_rows(text, header.n_samples, header.len)?;
    Ok(SeriesDataset {
        name: header.name,
        dt: header.dt,
        tau: header.tau,
        series,
    })
}

/// Adding-task rows are `u_0..u_{N-1}, v_0..v_{N-1}, target` under the header
/// `# adding, 1, 0, n_samples, N`.
pub fn adding_to_csv(data: &AddingDataset) -> String {
    let mut out = format!("# adding, 1, 0, {}, {}\n", data.len(), data.length);
    for s in &data.samples {
        push_row(&mut out, s.u.iter().chain(&s.v).copied().chain([s.target]));
    }
    out
}

pub fn adding_from_csv(text: &str) -> Result<AddingDataset> {
    let header = parse_header(text.lines().next().unwrap_or(""))?;
    if header.name != "adding" {
        return Err(Error::Format(format!("expected an adding dataset, found {:?}", header.name)));
    }
    let n = header.len;
    let rows = parse_rows(text, header.n_samples, 2 * n + 1)?;
    Ok(AddingDataset {
        length: n,
        samples: rows
            .into_iter()
            .map(|r| crate::training::AddingSample {
                u: r[..n].to_vec(),
                v: r[n..2 * n].to_vec(),
                target: r[2 * n],
            })
            .collect(),
    })
}
