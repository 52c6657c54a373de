//! Artifact formats.
//!
//! Text artifacts are CSV with 17 significant digits (`{:.16e}`) and JSON
//! documents carrying `"schema": "v1"`. Binary artifacts share one layout:
//! a 4-byte magic, a `u32` version, `u32` shape fields, then little-endian
//! `f64` values in row-major order. Kernels use magic `CSFK` with one shape
//! field `N_t`; grid fields use `CSFF` with `n_φ, n_k` followed by the four
//! grid bounds as `f64`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::error::{Error, Result};
use crate::flowfn::FlowTable;
use crate::graded::{FlowGrid, GridField, Role};
use crate::nashmoser::HistoryRow;
use crate::propagators::PropagatorKernel;

pub const SCHEMA: &str = "v1";
pub const KERNEL_MAGIC: &[u8; 4] = b"CSFK";
pub const FIELD_MAGIC: &[u8; 4] = b"CSFF";
pub const BINARY_VERSION: u32 = 1;

pub const FLOW_TABLE_HEADER: &str = "m2,G,sigma,A2";
pub const SOLUTION_HEADER: &str = "phi,k,value";
pub const RESIDUALS_HEADER: &str = "t,res0,res2";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn csv<I>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = Vec<f64>>,
{
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.into_iter().map(num).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn flow_table_csv(table: &FlowTable) -> String {
    csv(
        FLOW_TABLE_HEADER,
        (0..table.len()).map(|i| vec![table.m2[i], table.g[i], table.sigma[i], table.a2[i]]),
    )
}

pub fn solution_csv(field: &GridField) -> String {
    let g = field.grid;
    csv(
        SOLUTION_HEADER,
        (0..g.n_phi).flat_map(|i| (0..g.n_k).map(move |j| (i, j))).map(|(i, j)| vec![g.phi(i), g.k(j), field.get(i, j)]),
    )
}

pub fn residuals_csv(history: &[HistoryRow]) -> String {
    csv(RESIDUALS_HEADER, history.iter().map(|h| vec![h.t, h.res0, h.res2]))
}

pub fn write_flow_table(path: &Path, table: &FlowTable) -> Result<()> {
    write_text(path, &flow_table_csv(table))
}

pub fn write_solution(path: &Path, field: &GridField) -> Result<()> {
    write_text(path, &solution_csv(field))
}

pub fn write_residuals(path: &Path, history: &[HistoryRow]) -> Result<()> {
    write_text(path, &residuals_csv(history))
}

/// Parse a numeric CSV written by this module. Returns the header and rows.
pub fn read_csv(path: &Path) -> Result<(String, Vec<Vec<f64>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?
        .to_string();
    let rows = lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|x| {
                    x.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Format(format!("{}: bad number {x:?}", path.display())))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Wrap `body` (which must serialise to a JSON object) with the schema tag.
pub fn versioned<T: Serialize>(body: &T) -> Result<Value> {
    let mut v = serde_json::to_value(body)?;
    match v.as_object_mut() {
        Some(map) => {
            map.insert("schema".into(), Value::String(SCHEMA.into()));
            Ok(v)
        }
        None => Err(Error::Format("JSON document body must be an object".into())),
    }
}

pub fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(&versioned(body)?)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    match v.get("schema").and_then(Value::as_str) {
        Some(SCHEMA) => Ok(v),
        other => Err(Error::Format(format!(
            "{}: expected schema {SCHEMA:?}, found {other:?}",
            path.display()
        ))),
    }
}

/// Append one JSON object as a line to `path`.
pub fn append_log<T: Serialize>(path: &Path, entry: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(entry)?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'a str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!("{}: truncated", self.what)));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("{}: bad magic", self.what)));
        }
        let version = self.u32()?;
        if version != BINARY_VERSION {
            return Err(Error::Format(format!("{}: unsupported version {version}", self.what)));
        }
        Ok(())
    }

    fn values(&mut self, n: usize) -> Result<Vec<f64>> {
        let v = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("{}: trailing bytes", self.what)));
        }
        Ok(v)
    }
}

fn dim(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Format(format!("dimension {n} does not fit in u32")))
}

pub fn encode_kernel(values: &[f64], n_t: usize) -> Result<Vec<u8>> {
    if values.len() != n_t * n_t {
        return Err(Error::Shape(format!("{} values for an {n_t}×{n_t} kernel", values.len())));
    }
    let mut out = Vec::with_capacity(12 + 8 * values.len());
    out.extend_from_slice(KERNEL_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(n_t)?.to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decode a kernel file into `(N_t, row-major values)`.
pub fn decode_kernel(bytes: &[u8]) -> Result<(usize, Vec<f64>)> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "kernel file",
    };
    r.header(KERNEL_MAGIC)?;
    let n = r.u32()? as usize;
    Ok((n, r.values(n * n)?))
}

pub fn encode_field(field: &GridField) -> Result<Vec<u8>> {
    let g = field.grid;
    let mut out = Vec::with_capacity(48 + 8 * field.values.len());
    out.extend_from_slice(FIELD_MAGIC);
    out.extend_from_slice(&BINARY_VERSION.to_le_bytes());
    out.extend_from_slice(&dim(g.n_phi)?.to_le_bytes());
    out.extend_from_slice(&dim(g.n_k)?.to_le_bytes());
    for v in [g.phi_min, g.phi_max, g.k_min, g.k_max].iter().chain(&field.values) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_field(bytes: &[u8], role: Role) -> Result<GridField> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "field file",
    };
    r.header(FIELD_MAGIC)?;
    let n_phi = r.u32()? as usize;
    let n_k = r.u32()? as usize;
    let (p0, p1, k0, k1) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let grid = FlowGrid::new(p0, p1, n_phi, k0, k1, n_k)?;
    GridField::from_values(grid, role, r.values(n_phi * n_k)?)
}

/// On-disk cache of retarded kernels keyed by `(background hash, mode index, m²)`.
#[derive(Debug, Clone)]
pub struct KernelCache {
    pub dir: PathBuf,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path(&self, hash: &str, index: i64, m2: f64) -> PathBuf {
        let short = &hash[..hash.len().min(16)];
        self.dir.join(format!("{short}_n{index}_m{:016x}.csfk", m2.to_bits()))
    }

    pub fn store(&self, hash: &str, kernel: &PropagatorKernel) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir)?;
        let path = self.path(hash, kernel.index, kernel.m2);
        fs::write(&path, encode_kernel(&kernel.values, kernel.n)?)?;
        Ok(path)
    }

    /// The cached values, or `None` when no entry exists for the key.
    pub fn load(&self, hash: &str, index: i64, m2: f64) -> Result<Option<(usize, Vec<f64>)>> {
        let path = self.path(hash, index, m2);
        if !path.exists() {
            return Ok(None);
        }
        decode_kernel(&fs::read(path)?).map(Some)
    }
}
