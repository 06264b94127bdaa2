//! JSON Lines cohort files.
//!
//! One patient per line:
//!
//! ```text
//! {"id": "...", "cancer_type": "BRCA", "meta": {...},
//!  "patch_features": [[...], ...] | "relative/path.bin",
//!  "genomic": {"values": {"TSG": [...], ...}, "mask": {"TSG": [1, 0, ...], ...}},
//!  "survival_months": 12.5, "censored": false}
//! ```
//!
//! A patch path points at a little-endian matrix: `rows: u32`, `cols: u32`,
//! then `rows·cols` `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CancerType, GenomicBag, GenomicGroup, PatientMeta, PatientRecord, WsiBag};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PatchSource {
    Inline(Vec<Vec<f64>>),
    File(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct RawGenomic {
    values: BTreeMap<GenomicGroup, Vec<f64>>,
    mask: BTreeMap<GenomicGroup, Vec<u8>>,
}

/// On-disk form of one cohort line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawPatient {
    pub id: String,
    pub cancer_type: CancerType,
    pub meta: PatientMeta,
    pub patch_features: PatchSource,
    genomic: RawGenomic,
    pub survival_months: f64,
    pub censored: bool,
}

impl RawPatient {
    pub fn from_record(p: &PatientRecord, patches: PatchSource) -> Self {
        let genomic = RawGenomic {
            values: GenomicGroup::ALL
                .into_iter()
                .map(|g| (g, p.genomic.values(g).to_vec()))
                .collect(),
            mask: GenomicGroup::ALL
                .into_iter()
                .map(|g| (g, p.genomic.mask(g).iter().map(|&m| u8::from(m)).collect()))
                .collect(),
        };
        RawPatient {
            id: p.id.clone(),
            cancer_type: p.meta.cancer_type,
            meta: p.meta.clone(),
            patch_features: patches,
            genomic,
            survival_months: p.survival_months,
            censored: p.censored,
        }
    }

    pub fn into_record(self, base_dir: &Path) -> Result<PatientRecord> {
        if self.cancer_type != self.meta.cancer_type {
            return Err(Error::invalid(format!(
                "patient {}: cancer_type {} disagrees with meta {}",
                self.id, self.cancer_type, self.meta.cancer_type
            )));
        }
        let wsi = match self.patch_features {
            PatchSource::Inline(rows) => WsiBag::from_rows(&rows)?,
            PatchSource::File(rel) => WsiBag::new(read_patch_matrix(&base_dir.join(rel))?)?,
        };
        let mut values = Vec::with_capacity(6);
        let mut mask = Vec::with_capacity(6);
        for g in GenomicGroup::ALL {
            let v = self.genomic.values.get(&g).ok_or_else(|| {
                Error::Schema(format!("patient {}: genomic group {} missing", self.id, g.abbrev()))
            })?;
            let m = self.genomic.mask.get(&g).ok_or_else(|| {
                Error::Schema(format!("patient {}: mask for {} missing", self.id, g.abbrev()))
            })?;
            values.push(v.clone());
            mask.push(m.iter().map(|&b| b != 0).collect());
        }
        Ok(PatientRecord {
            id: self.id,
            meta: self.meta,
            wsi,
            genomic: GenomicBag::new(values, mask)?,
            survival_months: self.survival_months,
            censored: self.censored,
        })
    }
}

pub fn read_cohort(path: &Path) -> Result<Vec<PatientRecord>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawPatient = serde_json::from_str(&line).map_err(|source| Error::Json {
            context: format!("{}:{}", path.display(), lineno + 1),
            source,
        })?;
        out.push(raw.into_record(base)?);
    }
    if out.is_empty() {
        return Err(Error::invalid(format!("{}: cohort is empty", path.display())));
    }
    Ok(out)
}

/// Writes a cohort with inline patch features.
pub fn write_cohort(path: &Path, patients: &[PatientRecord]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in patients {
        let rows = (0..p.wsi.patch_count())
            .map(|r| p.wsi.features().row_slice(r).to_vec())
            .collect();
        let raw = RawPatient::from_record(p, PatchSource::Inline(rows));
        let line = serde_json::to_string(&raw).map_err(|source| Error::Json {
            context: format!("patient {}", p.id),
            source,
        })?;
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_patch_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let (rows, cols) = m.dims2();
    let mut bytes = Vec::with_capacity(8 + 8 * m.len());
    bytes.extend_from_slice(&(rows as u32).to_le_bytes());
    bytes.extend_from_slice(&(cols as u32).to_le_bytes());
    for v in m.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_patch_matrix(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 {
        return Err(Error::invalid(format!("{}: truncated header", path.display())));
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body = &bytes[8..];
    if body.len() != rows * cols * 8 {
        return Err(Error::invalid(format!(
            "{}: header says {rows}x{cols} but payload has {} bytes",
            path.display(),
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Tensor::matrix(rows, cols, data)
}
