//! On-disk formats: patch CSV with a JSON sidecar, netpbm images, JSON reports
//! and two-column distribution CSVs.
//!
//! A patch `p.csv` holds one point per row as comma-separated decimals, no
//! header. Its optional sidecar `p.meta.json` carries
//! `{ambient_dim, count, base_index, label, layer, source, normalized}`;
//! without one the base point is row 0.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use mcurv_core::{ImageMatrix, Patch, PatchMeta};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Version stamped into every JSON document the CLI writes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSidecar {
    #[serde(default)]
    pub ambient_dim: Option<usize>,
    #[serde(default)]
    pub count: Option<usize>,
    #[serde(default)]
    pub base_index: usize,
    #[serde(flatten)]
    pub meta: PatchMeta,
}

/// `dir/name.csv -> dir/name.meta.json`
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

/// `dir/name.ext -> dir/name<suffix>`
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Parses CSV rows of decimal numbers. Blank lines are skipped.
pub fn parse_rows(reader: impl Read) -> Result<Vec<Vec<f64>>> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (line, record) in csv.records().enumerate() {
        let record = record.map_err(|e| Error::Format(format!("row {}: {e}", line + 1)))?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.parse::<f64>().map_err(|_| {
                    Error::Format(format!("row {}, column {}: not a number: {field:?}", line + 1, col + 1))
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::Format(format!(
                    "row {} has {} columns, expected {}",
                    line + 1,
                    row.len(),
                    first.len()
                )));
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Builds a validated patch from CSV bytes and optional sidecar JSON bytes.
pub fn parse_patch(csv: impl Read, sidecar: Option<&[u8]>) -> Result<Patch> {
    let rows = parse_rows(csv)?;
    let side: PatchSidecar = match sidecar {
        Some(bytes) => serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("sidecar: {e}")))?,
        None => PatchSidecar::default(),
    };
    if let Some(count) = side.count {
        if count != rows.len() {
            return Err(Error::Format(format!(
                "sidecar declares {count} points, file has {}",
                rows.len()
            )));
        }
    }
    if let (Some(dim), Some(first)) = (side.ambient_dim, rows.first()) {
        if dim != first.len() {
            return Err(Error::Format(format!(
                "sidecar declares dimension {dim}, file has {}",
                first.len()
            )));
        }
    }
    Ok(Patch::from_rows(&rows, side.base_index, side.meta)?)
}

pub fn read_patch(path: &Path) -> Result<Patch> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let meta_path = sidecar_path(path);
    let sidecar = match fs::read(&meta_path) {
        Ok(bytes) => Some(bytes),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
        Err(e) => return Err(Error::io(meta_path, e)),
    };
    parse_patch(BufReader::new(file), sidecar.as_deref())
}

/// Writes one row per line using the shortest decimal that round-trips.
pub fn write_matrix_csv(m: &DMatrix<f64>, out: &mut impl Write) -> std::io::Result<()> {
    for row in m.row_iter() {
        let mut first = true;
        for v in row.iter() {
            if !first {
                out.write_all(b",")?;
            }
            write!(out, "{v:?}")?;
            first = false;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Writes the CSV and its sidecar.
pub fn write_patch(patch: &Patch, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_matrix_csv(patch.points(), &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))?;
    let side = PatchSidecar {
        ambient_dim: Some(patch.ambient_dim()),
        count: Some(patch.len()),
        base_index: patch.base_index(),
        meta: patch.meta().clone(),
    };
    write_json(&side, Some(&sidecar_path(path)))
}

pub fn write_matrix_file(m: &DMatrix<f64>, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_matrix_csv(m, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Two-column `index,value` CSV with 1-based indices.
pub fn write_distribution(values: &[f64], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<fs::File>| -> std::io::Result<()> {
        writeln!(out, "index,value")?;
        for (i, v) in values.iter().enumerate() {
            writeln!(out, "{},{v:?}", i + 1)?;
        }
        out.flush()
    };
    write(&mut out).map_err(|e| Error::io(path, e))
}

/// Pretty JSON to `path`, or to stdout when `path` is `None`.
pub fn write_json<T: Serialize + ?Sized>(value: &T, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(path) => fs::write(path, text + "\n").map_err(|e| Error::io(path, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}").map_err(|e| Error::io("<stdout>", e))
        }
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

/// Netpbm variants this crate reads and writes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Netpbm {
    GreyAscii,
    RgbAscii,
    GreyBinary,
    RgbBinary,
}

impl Netpbm {
    fn from_magic(magic: &[u8]) -> Result<Self> {
        match magic {
            b"P2" => Ok(Netpbm::GreyAscii),
            b"P3" => Ok(Netpbm::RgbAscii),
            b"P5" => Ok(Netpbm::GreyBinary),
            b"P6" => Ok(Netpbm::RgbBinary),
            other => Err(Error::Unsupported(format!(
                "netpbm magic {:?} (only P2, P3, P5, P6)",
                String::from_utf8_lossy(other)
            ))),
        }
    }

    fn channels(self) -> usize {
        match self {
            Netpbm::GreyAscii | Netpbm::GreyBinary => 1,
            Netpbm::RgbAscii | Netpbm::RgbBinary => 3,
        }
    }
}

struct Header {
    kind: Netpbm,
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first raster byte.
    data_start: usize,
}

/// Reads the next whitespace-delimited token, skipping `#` comments.
fn next_token(bytes: &[u8], pos: &mut usize) -> Option<(usize, usize)> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' && bytes[*pos] != b'\r' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() && bytes[*pos] != b'#' {
        *pos += 1;
    }
    (*pos > start).then_some((start, *pos))
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let (s, e) = next_token(bytes, pos).ok_or_else(|| Error::Format(format!("missing {what}")))?;
    std::str::from_utf8(&bytes[s..e])
        .ok()
        .and_then(|t| t.parse::<usize>().ok())
        .ok_or_else(|| Error::Format(format!("invalid {what}")))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 {
        return Err(Error::Format("file too short for a netpbm header".into()));
    }
    let kind = Netpbm::from_magic(&bytes[..2])?;
    let mut pos = 2;
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format("image has zero size".into()));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("maxval {maxval} outside 1..=65535")));
    }
    // binary rasters start after exactly one whitespace byte
    if matches!(kind, Netpbm::GreyBinary | Netpbm::RgbBinary) {
        if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
            return Err(Error::Format("truncated payload".into()));
        }
        pos += 1;
    }
    Ok(Header {
        kind,
        width,
        height,
        maxval: maxval as u32,
        data_start: pos,
    })
}

/// Decodes a PGM/PPM byte stream; values are rescaled to `[0, 255]` when maxval differs.
pub fn parse_netpbm(bytes: &[u8]) -> Result<ImageMatrix> {
    let h = parse_header(bytes)?;
    let channels = h.kind.channels();
    let total = h
        .width
        .checked_mul(h.height)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
    let mut samples = Vec::with_capacity(total.min(1 << 26));
    match h.kind {
        Netpbm::GreyAscii | Netpbm::RgbAscii => {
            let mut pos = h.data_start;
            for _ in 0..total {
                let (s, e) = next_token(bytes, &mut pos)
                    .ok_or_else(|| Error::Format("truncated payload".into()))?;
                let v = std::str::from_utf8(&bytes[s..e])
                    .ok()
                    .and_then(|t| t.parse::<u32>().ok())
                    .ok_or_else(|| Error::Format("invalid sample".into()))?;
                samples.push(v);
            }
        }
        Netpbm::GreyBinary | Netpbm::RgbBinary => {
            let width = if h.maxval > 255 { 2 } else { 1 };
            let need = total
                .checked_mul(width)
                .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
            let raster = bytes
                .get(h.data_start..)
                .filter(|r| r.len() >= need)
                .ok_or_else(|| Error::Format("truncated payload".into()))?;
            if width == 1 {
                samples.extend(raster[..need].iter().map(|&b| b as u32));
            } else {
                samples.extend(raster[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as u32));
            }
        }
    }
    if let Some(v) = samples.iter().find(|&&v| v > h.maxval) {
        return Err(Error::Format(format!("sample {v} exceeds maxval {}", h.maxval)));
    }
    let scale = if h.maxval == 255 { 1.0 } else { 255.0 / h.maxval as f64 };
    let mats = (0..channels)
        .map(|c| {
            DMatrix::from_fn(h.height, h.width, |r, col| {
                samples[(r * h.width + col) * channels + c] as f64 * scale
            })
        })
        .collect();
    Ok(ImageMatrix::new(mats)?)
}

pub fn read_image(path: &Path) -> Result<ImageMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_netpbm(&bytes)
}

/// Encodes as 8-bit binary PGM (one channel) or PPM (three), clamping and rounding.
pub fn encode_netpbm(img: &ImageMatrix) -> Vec<u8> {
    let q = img.quantized();
    let (rows, cols, channels) = (q.rows(), q.cols(), q.channel_count());
    let magic = if channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{cols} {rows}\n255\n").into_bytes();
    out.reserve(rows * cols * channels);
    for r in 0..rows {
        for c in 0..cols {
            for ch in q.channels() {
                out.push(ch[(r, c)] as u8);
            }
        }
    }
    out
}

pub fn write_image(img: &ImageMatrix, path: &Path) -> Result<()> {
    fs::write(path, encode_netpbm(img)).map_err(|e| Error::io(path, e))
}
