//! Embedding file formats.
//!
//! CAMF (all integers little-endian):
//!
//! ```text
//! magic        4 bytes  "CAMF"
//! version      u32      1
//! n            u32      sample count
//! d            u32      dimension
//! normalized   u8       0 or 1
//! features     n·d f32  row-major
//! labels       n u32
//! classes      u32      class count C
//! names        C × (u32 byte length, UTF-8 bytes)
//! ```
//!
//! CSV: header `label,f0,…,f{d−1}`, one sample per line. Values are parsed
//! as f32 so both formats carry identical precision. Class names are
//! `class_0 … class_{C−1}` with `C = max label + 1`.

use std::path::Path;

use crate::data::EmbeddingSet;
use crate::error::{Error, Result};
use crate::feature::FeatureVector;

pub const CAMF_MAGIC: &[u8; 4] = b"CAMF";
pub const CAMF_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadOptions {
    /// L2-normalize features after loading.
    pub normalize: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions { normalize: true }
    }
}

fn format_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        detail: detail.into(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(format_err(
                self.pos,
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

pub fn read_camf(bytes: &[u8]) -> Result<EmbeddingSet> {
    if bytes.is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != CAMF_MAGIC {
        return Err(format_err(0, "bad magic, expected CAMF"));
    }
    let version_at = r.pos;
    let version = r.u32("version")?;
    if version != CAMF_VERSION {
        return Err(format_err(
            version_at,
            format!("unsupported version {version}"),
        ));
    }
    let n = r.u32("sample count")? as usize;
    let d = r.u32("dimension")? as usize;
    let flag_at = r.pos;
    let normalized = match r.take(1, "normalized flag")?[0] {
        0 => false,
        1 => true,
        v => {
            return Err(format_err(
                flag_at,
                format!("normalized flag must be 0 or 1, got {v}"),
            ))
        }
    };
    if n == 0 || d == 0 {
        return Err(format_err(
            flag_at,
            "sample count and dimension must be positive",
        ));
    }

    let mut features = Vec::with_capacity(n);
    for row in 0..n {
        let mut values = Vec::with_capacity(d);
        for col in 0..d {
            let at = r.pos;
            let b = r.take(4, "features")?;
            let v = f32::from_le_bytes(b.try_into().expect("4 bytes"));
            if !v.is_finite() {
                return Err(format_err(
                    at,
                    format!("non-finite value {v} at row {row}, column {col}"),
                ));
            }
            values.push(v as f64);
        }
        let fv = FeatureVector::new(values);
        if normalized && (fv.norm() - 1.0).abs() > 1e-6 {
            return Err(format_err(
                r.pos - 4 * d,
                format!("row {row} is flagged normalized but has norm {}", fv.norm()),
            ));
        }
        features.push(fv);
    }
    let labels_at = r.pos;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u32("labels")? as usize);
    }
    let classes = r.u32("class count")? as usize;
    let mut names = Vec::with_capacity(classes);
    for c in 0..classes {
        let len = r.u32("class name length")? as usize;
        let at = r.pos;
        let raw = r.take(len, "class name")?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| format_err(at, format!("class name {c} is not UTF-8")))?;
        names.push(name.to_string());
    }
    if r.pos != bytes.len() {
        return Err(format_err(r.pos, "trailing bytes after class names"));
    }
    if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(format_err(
            labels_at + 4 * i,
            format!("label {l} at row {i} out of range for {classes} classes"),
        ));
    }
    EmbeddingSet::new(features, labels, names, normalized)
}

/// Serializes to CAMF. Features are stored as f32.
pub fn write_camf(set: &EmbeddingSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(17 + set.len() * (4 * set.dim() + 4));
    out.extend_from_slice(CAMF_MAGIC);
    out.extend_from_slice(&CAMF_VERSION.to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    out.extend_from_slice(&(set.dim() as u32).to_le_bytes());
    out.push(set.is_normalized() as u8);
    for f in set.features() {
        for &v in f.as_slice() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    for &l in set.labels() {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out.extend_from_slice(&(set.class_count() as u32).to_le_bytes());
    for name in set.class_names() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    out
}

pub fn read_csv(text: &str) -> Result<EmbeddingSet> {
    if text.trim().is_empty() {
        return Err(Error::EmptyFile);
    }
    let mut offset = 0usize;
    let mut lines = text.split_inclusive('\n');
    let header = lines.next().expect("non-empty");
    let columns: Vec<&str> = header.trim_end().split(',').collect();
    if columns.first() != Some(&"label") || columns.len() < 2 {
        return Err(format_err(0, "header must be label,f0,…,f{D-1}"));
    }
    let d = columns.len() - 1;
    for (k, c) in columns[1..].iter().enumerate() {
        if *c != format!("f{k}") {
            return Err(format_err(
                0,
                format!("header column {} should be f{k}, found '{c}'", k + 1),
            ));
        }
    }
    offset += header.len();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for line in lines {
        let row = features.len();
        let content = line.trim_end();
        if content.is_empty() {
            offset += line.len();
            continue;
        }
        let fields: Vec<&str> = content.split(',').collect();
        if fields.len() != d + 1 {
            return Err(format_err(
                offset,
                format!("row {row} has {} fields, expected {}", fields.len(), d + 1),
            ));
        }
        let label: usize = fields[0].trim().parse().map_err(|_| {
            format_err(
                offset,
                format!("row {row}, column label: '{}' is not a label", fields[0]),
            )
        })?;
        let mut values = Vec::with_capacity(d);
        let mut field_at = offset + fields[0].len() + 1;
        for (k, raw) in fields[1..].iter().enumerate() {
            let v: f32 = raw.trim().parse().map_err(|_| {
                format_err(
                    field_at,
                    format!("row {row}, column f{k}: '{raw}' is not a number"),
                )
            })?;
            if !v.is_finite() {
                return Err(format_err(
                    field_at,
                    format!("non-finite value at row {row}, column f{k}"),
                ));
            }
            values.push(v as f64);
            field_at += raw.len() + 1;
        }
        features.push(FeatureVector::new(values));
        labels.push(label);
        offset += line.len();
    }
    if features.is_empty() {
        return Err(Error::EmptyFile);
    }
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    EmbeddingSet::new(
        features,
        labels,
        EmbeddingSet::default_class_names(classes),
        false,
    )
}

/// Serializes to CSV using the shortest f32 representation of each value.
pub fn write_csv(set: &EmbeddingSet) -> String {
    let mut out = String::from("label");
    for k in 0..set.dim() {
        out.push_str(&format!(",f{k}"));
    }
    out.push('\n');
    for (f, l) in set.features().iter().zip(set.labels()) {
        out.push_str(&l.to_string());
        for &v in f.as_slice() {
            out.push(',');
            out.push_str(&(v as f32).to_string());
        }
        out.push('\n');
    }
    out
}

pub fn save_camf(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_camf(set))?;
    Ok(())
}

pub fn save_csv(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, write_csv(set))?;
    Ok(())
}

/// Loads a CAMF or CSV file, chosen by the leading magic bytes.
pub fn load_embeddings(path: impl AsRef<Path>, options: LoadOptions) -> Result<EmbeddingSet> {
    let bytes = std::fs::read(path)?;
    if bytes.is_empty() {
        return Err(Error::EmptyFile);
    }
    let set = if bytes.starts_with(CAMF_MAGIC) {
        read_camf(&bytes)?
    } else {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| format_err(e.valid_up_to(), "file is neither CAMF nor UTF-8 CSV"))?;
        read_csv(text)?
    };
    Ok(if options.normalize {
        set.normalized()
    } else {
        set
    })
}
