//! Per-image proposal files and the grid proposal generator.
//!
//! Layout, little-endian:
//!
//! ```text
//! magic    8 bytes  "WSODPROP"
//! version  u32      1
//! m        u32      number of proposals
//! d        u32      feature width, 0 when features are not stored
//! cols     u32      box columns, always 4
//! boxes    m x 4 f32 (x1, y1, x2, y2)
//! features m x d f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const MAGIC: &[u8; 8] = b"WSODPROP";
pub const VERSION: u32 = 1;
const BOX_COLUMNS: u32 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalFile {
    pub boxes: Vec<BBox>,
    pub features: Option<Array2<f64>>,
}

pub fn write_proposals(path: impl AsRef<Path>, boxes: &[BBox], features: Option<&Array2<f64>>) -> Result<()> {
    if let Some(f) = features {
        if f.nrows() != boxes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} boxes but {} feature rows",
                boxes.len(),
                f.nrows()
            )));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_u32::<LittleEndian>(boxes.len() as u32)?;
    w.write_u32::<LittleEndian>(features.map_or(0, |f| f.ncols() as u32))?;
    w.write_u32::<LittleEndian>(BOX_COLUMNS)?;
    for b in boxes {
        for v in [b.x1, b.y1, b.x2, b.y2] {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    if let Some(f) = features {
        for v in f.iter() {
            w.write_f32::<LittleEndian>(*v as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_proposals(path: impl AsRef<Path>) -> Result<ProposalFile> {
    let path = path.as_ref();
    let bad = |msg: String| Error::Invalid(format!("{}: {msg}", path.display()));
    let mut r = BufReader::new(File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingProposalFile(path.into()),
        _ => e.into(),
    })?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("not a proposal file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let m = r.read_u32::<LittleEndian>()? as usize;
    let d = r.read_u32::<LittleEndian>()? as usize;
    let cols = r.read_u32::<LittleEndian>()?;
    if cols != BOX_COLUMNS {
        return Err(bad(format!("expected 4 box columns, found {cols}")));
    }
    let mut boxes = Vec::with_capacity(m);
    for i in 0..m {
        let mut v = [0f64; 4];
        for x in &mut v {
            *x = f64::from(r.read_f32::<LittleEndian>()?);
        }
        let b = BBox::new(v[0], v[1], v[2], v[3]);
        if !b.is_valid() {
            return Err(bad(format!("box {i} is degenerate: {v:?}")));
        }
        boxes.push(b);
    }
    let features = if d > 0 {
        let mut data = vec![0f32; m * d];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        Some(Array2::from_shape_vec((m, d), data.into_iter().map(f64::from).collect()).expect("m x d"))
    } else {
        None
    };
    Ok(ProposalFile { boxes, features })
}

/// Boxes of every `n x n` grid for `n = 1..=grid`, coarse levels first,
/// row-major within a level, truncated to `max_proposals`.
pub fn grid_proposals(width: f64, height: f64, grid: usize, max_proposals: usize) -> Vec<BBox> {
    let mut out = Vec::new();
    'levels: for n in 1..=grid {
        let (cw, ch) = (width / n as f64, height / n as f64);
        for i in 0..n {
            for j in 0..n {
                if out.len() == max_proposals {
                    break 'levels;
                }
                out.push(BBox::new(
                    j as f64 * cw,
                    i as f64 * ch,
                    (j + 1) as f64 * cw,
                    (i + 1) as f64 * ch,
                ));
            }
        }
    }
    out
}
