//! On-disk dataset format.
//!
//! ```text
//! magic    b"DSET"
//! version  u32
//! counts   u64 train, u64 val, u64 test
//! dims     u32 channels, u32 height, u32 width
//! records  label u32, box 4×f64 (cx cy w h), pixels c·h·w f64
//! ```
//!
//! Little-endian throughout. The spec lives in a JSON sidecar next to the
//! container with the same stem.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::domain::{BoundingBox, DomainDataset, DomainSpec, Sample, IMAGE_CHANNELS, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::tensor::{ByteCursor, Tensor};

pub const DATASET_MAGIC: &[u8; 4] = b"DSET";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_EXTENSION: &str = "dset";

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn encode_dataset(ds: &DomainDataset) -> Vec<u8> {
    let pixels = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
    let n = ds.train.len() + ds.val.len() + ds.test.len();
    let mut out = Vec::with_capacity(48 + n * (36 + 8 * pixels));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    for split in [&ds.train, &ds.val, &ds.test] {
        out.extend_from_slice(&(split.len() as u64).to_le_bytes());
    }
    for d in [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for s in ds.train.iter().chain(&ds.val).chain(&ds.test) {
        out.extend_from_slice(&(s.label as u32).to_le_bytes());
        for v in [s.bbox.cx, s.bbox.cy, s.bbox.w, s.bbox.h] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in s.image.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dataset(bytes: &[u8], spec: DomainSpec) -> Result<DomainDataset> {
    let mut cur = ByteCursor::new(bytes);
    if cur.take(4, "magic")? != DATASET_MAGIC {
        return Err(Error::parse(0, "bad magic, not a dataset container"));
    }
    let version = cur.u32("version")?;
    if version != DATASET_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let mut counts = [0usize; 3];
    for c in &mut counts {
        *c = cur.u64("sample count")? as usize;
    }
    let dims_at = cur.offset();
    let dims = [cur.u32("channels")?, cur.u32("height")?, cur.u32("width")?];
    if dims.map(|d| d as usize) != [IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE] {
        return Err(Error::parse(
            dims_at,
            format!("unexpected image dims {dims:?}"),
        ));
    }
    let n_classes = spec.classes.len();
    let pixels = IMAGE_CHANNELS * IMAGE_SIZE * IMAGE_SIZE;
    let mut read_split = |n: usize| -> Result<Vec<Sample>> {
        let mut v = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let at = cur.offset();
            let label = cur.u32("label")? as usize;
            if label >= n_classes {
                return Err(Error::parse(
                    at,
                    format!("label {label} out of range for {n_classes} classes"),
                ));
            }
            let b = [
                cur.f64("box")?,
                cur.f64("box")?,
                cur.f64("box")?,
                cur.f64("box")?,
            ];
            let data = cur.f64s(pixels, "pixels")?;
            v.push(Sample {
                image: Tensor::new([IMAGE_CHANNELS, IMAGE_SIZE, IMAGE_SIZE], data)?,
                label,
                bbox: BoundingBox {
                    cx: b[0],
                    cy: b[1],
                    w: b[2],
                    h: b[3],
                },
            });
        }
        Ok(v)
    };
    let train = read_split(counts[0])?;
    let val = read_split(counts[1])?;
    let test = read_split(counts[2])?;
    if !cur.is_empty() {
        return Err(Error::parse(
            cur.offset(),
            "trailing bytes after last record",
        ));
    }
    Ok(DomainDataset {
        spec,
        train,
        val,
        test,
    })
}

/// Writes the container and its JSON sidecar.
pub fn save_dataset(ds: &DomainDataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, encode_dataset(ds))?;
    let mut json = serde_json::to_string_pretty(&ds.spec)?;
    json.push('\n');
    fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DomainDataset> {
    let sidecar = sidecar_path(path);
    if !path.exists() {
        return Err(Error::MissingData(format!(
            "{} not found; generate it with `domattn gen-data`",
            path.display()
        )));
    }
    let spec: DomainSpec = serde_json::from_slice(
        &fs::read(&sidecar)
            .map_err(|e| Error::MissingData(format!("sidecar {}: {e}", sidecar.display())))?,
    )?;
    decode_dataset(&fs::read(path)?, spec)
}

/// Binary PPM (P6) rendering of one sample.
pub fn write_ppm<W: Write>(sample: &Sample, mut w: W) -> Result<()> {
    let (c, h, wd) = sample.image.dims3()?;
    write!(w, "P6\n{wd} {h}\n255\n")?;
    let plane = h * wd;
    let data = sample.image.data();
    let mut buf = Vec::with_capacity(plane * 3);
    for i in 0..plane {
        for ch in 0..3 {
            let v = data[ch.min(c - 1) * plane + i];
            buf.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    w.write_all(&buf)?;
    Ok(())
}
