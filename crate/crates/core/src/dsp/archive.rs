//! Feature archive records: magic `CDFF`, u32 frame count, u32 dimension,
//! then row-major little-endian f32 values. An archive file is a
//! concatenation of records.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub const ARCHIVE_MAGIC: &[u8; 4] = b"CDFF";

pub fn write_record<W: Write>(writer: &mut W, matrix: &Array2<f64>) -> Result<()> {
    let (rows, cols) = matrix.dim();
    let rows32 = u32::try_from(rows).map_err(|_| Error::Format("too many frames".into()))?;
    let cols32 = u32::try_from(cols).map_err(|_| Error::Format("dimension too large".into()))?;
    writer.write_all(ARCHIVE_MAGIC)?;
    writer.write_all(&rows32.to_le_bytes())?;
    writer.write_all(&cols32.to_le_bytes())?;
    for v in matrix.iter() {
        writer.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

/// Reads one record, or `None` at a clean end of stream.
pub fn read_record<R: Read>(reader: &mut R) -> Result<Option<Array2<f64>>> {
    let mut magic = [0u8; 4];
    match reader.read_exact(&mut magic) {
        Ok(()) => {}
        Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    if &magic != ARCHIVE_MAGIC {
        return Err(Error::Format(format!("bad archive magic {magic:?}")));
    }
    let mut word = [0u8; 4];
    reader.read_exact(&mut word)?;
    let rows = u32::from_le_bytes(word) as usize;
    reader.read_exact(&mut word)?;
    let cols = u32::from_le_bytes(word) as usize;
    let mut bytes = vec![0u8; rows * cols * 4];
    reader
        .read_exact(&mut bytes)
        .map_err(|_| Error::Format("truncated archive record".into()))?;
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values)
        .map(Some)
        .map_err(|e| Error::Format(e.to_string()))
}

pub fn write_archive(path: impl AsRef<Path>, records: &[&Array2<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        write_record(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<Vec<Array2<f64>>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == ErrorKind::NotFound {
            Error::MissingArtifact {
                path: path.to_path_buf(),
                reason: "archive not found".into(),
            }
        } else {
            e.into()
        }
    })?;
    let mut r = BufReader::new(file);
    let mut out = Vec::new();
    while let Some(m) = read_record(&mut r)? {
        out.push(m);
    }
    Ok(out)
}
