//! On-disk formats: band-sequential cubes with a JSON manifest, endmember
//! CSV files and 8-bit abundance previews.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixmodel::ImageCube;

const CUBE_MAGIC: &str = "PRIME-CUBE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleType {
    F64le,
    F32le,
}

impl SampleType {
    fn width(self) -> usize {
        match self {
            SampleType::F64le => 8,
            SampleType::F32le => 4,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CubeManifest {
    magic: String,
    dtype: SampleType,
    interleave: String,
    bands: usize,
    height: usize,
    width: usize,
}

/// `<base>.json` and `<base>.bin` for a base path without extension.
pub fn cube_paths(base: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = base.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".json"), with(".bin"))
}

pub fn write_cube(base: &Path, cube: &ImageCube, dtype: SampleType) -> Result<()> {
    let (json, bin) = cube_paths(base);
    let manifest = CubeManifest {
        magic: CUBE_MAGIC.into(),
        dtype,
        interleave: "bsq".into(),
        bands: cube.bands(),
        height: cube.height(),
        width: cube.width(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    let mut payload = Vec::with_capacity(cube.data().len() * dtype.width());
    for &v in cube.data() {
        match dtype {
            SampleType::F64le => payload.extend_from_slice(&v.to_le_bytes()),
            SampleType::F32le => payload.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    fs::write(&bin, payload).map_err(|e| Error::io(&bin, e))
}

pub fn read_cube(base: &Path) -> Result<ImageCube> {
    let (json, bin) = cube_paths(base);
    let text = fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let m: CubeManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&json, e.to_string()))?;
    if m.magic != CUBE_MAGIC {
        return Err(Error::format(&json, format!("magic {:?}, expected {CUBE_MAGIC:?}", m.magic)));
    }
    if m.interleave != "bsq" {
        return Err(Error::format(&json, format!("unsupported interleave {:?}", m.interleave)));
    }
    let payload = fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let count = m.bands * m.height * m.width;
    if payload.len() != count * m.dtype.width() {
        return Err(Error::format(
            &bin,
            format!(
                "{} bytes for a {}x{}x{} {:?} cube, expected {}",
                payload.len(),
                m.bands,
                m.height,
                m.width,
                m.dtype,
                count * m.dtype.width()
            ),
        ));
    }
    let data: Vec<f64> = match m.dtype {
        SampleType::F64le => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect(),
        SampleType::F32le => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
            .collect(),
    };
    ImageCube::new(m.bands, m.height, m.width, data).map_err(|e| Error::format(&bin, e.to_string()))
}

/// Writes a `bands x sources` matrix with the header `band,src1,...,srcN`.
pub fn write_matrix_csv(path: &Path, m: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["band".to_string()];
    header.extend((1..=m.ncols()).map(|k| format!("src{k}")));
    w.write_record(&header)?;
    for r in 0..m.nrows() {
        let mut row = vec![r.to_string()];
        // `{:?}` prints the shortest string that parses back to the same value.
        row.extend((0..m.ncols()).map(|c| format!("{:?}", m[(r, c)])));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    let cols = header.len().saturating_sub(1);
    if header.get(0) != Some("band") || cols == 0 {
        return Err(Error::format(path, "header must be band,src1,...,srcN"));
    }
    let mut values = Vec::new();
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        for field in rec.iter().skip(1) {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::format(path, format!("row {rows}: not a number: {field:?}")))?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

/// Binary greyscale image of one plane, min-max scaled to `0..=255`.
pub fn write_pgm(path: &Path, plane: &[f64], height: usize, width: usize) -> Result<()> {
    if plane.len() != height * width {
        return Err(Error::Dimension {
            context: "write_pgm",
            detail: format!("{} values for a {height}x{width} image", plane.len()),
        });
    }
    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(plane.iter().map(|&v| {
        if span > 0.0 {
            (255.0 * (v - lo) / span).round() as u8
        } else {
            0
        }
    }));
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
