//! Writing a derivative-image grid to disk with its manifest.

use std::path::{Path, PathBuf};

use mcurv_core::augment::{DerivativeGrid, GridImage};
use mcurv_core::ImageMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patchio::{self, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub index: usize,
    pub ks: Vec<usize>,
    pub files: Vec<String>,
    /// Frobenius norm of the removed part, over all channels.
    pub truncation_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridManifest {
    pub schema_version: u32,
    pub command: String,
    pub source: String,
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub k_max: usize,
    pub mode: String,
    pub raw: bool,
    pub count: usize,
    pub singular_values: Vec<Vec<f64>>,
    pub entries: Vec<ManifestEntry>,
}

const CHANNEL_SUFFIX: [&str; 3] = ["r", "g", "b"];

/// Base file name of a grid member, `stem_k1_k2_k3`.
pub fn member_name(stem: &str, ks: &[usize]) -> String {
    let mut name = stem.to_string();
    for k in ks {
        name.push('_');
        name.push_str(&k.to_string());
    }
    name
}

/// File names for one member: a PGM/PPM, or with `raw` one CSV matrix per channel.
pub fn member_files(stem: &str, ks: &[usize], channels: usize, raw: bool) -> Vec<String> {
    let name = member_name(stem, ks);
    match (raw, channels) {
        (false, 1) => vec![format!("{name}.pgm")],
        (false, _) => vec![format!("{name}.ppm")],
        (true, 1) => vec![format!("{name}.csv")],
        (true, _) => CHANNEL_SUFFIX[..channels]
            .iter()
            .map(|c| format!("{name}.{c}.csv"))
            .collect(),
    }
}

pub fn manifest_skeleton(grid: &DerivativeGrid, img: &ImageMatrix, source: &str, raw: bool) -> GridManifest {
    GridManifest {
        schema_version: SCHEMA_VERSION,
        command: "augment".into(),
        source: source.into(),
        rows: img.rows(),
        cols: img.cols(),
        channels: img.channel_count(),
        k_max: grid.spec().k_max,
        mode: "trailing".into(),
        raw,
        count: grid.len(),
        singular_values: (0..grid.channel_count())
            .map(|c| grid.singular_values(c).to_vec())
            .collect(),
        entries: Vec::new(),
    }
}

pub fn entry(index: usize, member: &GridImage<'_>, stem: &str, raw: bool) -> ManifestEntry {
    ManifestEntry {
        index,
        ks: member.ks.clone(),
        files: member_files(stem, &member.ks, member.channels.len(), raw),
        truncation_error: member.truncation_error,
    }
}

fn write_member(member: &GridImage<'_>, files: &[String], out_dir: &Path, raw: bool) -> Result<()> {
    if raw {
        for (channel, file) in member.channels.iter().zip(files) {
            patchio::write_matrix_file(channel, &out_dir.join(file))?;
        }
        Ok(())
    } else {
        patchio::write_image(&member.to_image(), &out_dir.join(&files[0]))
    }
}

/// Writes every member (in parallel on the current rayon pool) and then the
/// manifest `stem.manifest.json`. Entries are in grid order regardless of
/// completion order.
pub fn write_grid(
    grid: &DerivativeGrid,
    img: &ImageMatrix,
    source: &str,
    stem: &str,
    out_dir: &Path,
    raw: bool,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let entries = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let member = grid.get(i);
            let e = entry(i, &member, stem, raw);
            write_member(&member, &e.files, out_dir, raw)?;
            Ok(e)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = manifest_skeleton(grid, img, source, raw);
    manifest.entries = entries;
    let path = out_dir.join(format!("{stem}.manifest.json"));
    patchio::write_json(&manifest, Some(&path))?;
    Ok(path)
}
