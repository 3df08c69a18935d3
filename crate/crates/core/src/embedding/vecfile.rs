//! `PCVEC1` binary vector container.
//!
//! ```text
//! header:  "PCVEC1" | dim: u32 LE | count: u64 LE | fingerprint: [u8; 32]
//! record:  id_len: u32 LE | para_id: UTF-8 | dim x f32 LE
//! ```

use std::collections::HashSet;
use std::io::{self, Read, Write};

use super::{EmbeddingError, EmbeddingVector, Fingerprint, Result};

pub const VECTOR_FILE_MAGIC: &[u8; 6] = b"PCVEC1";

/// Contents of a vector file, records in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorFile {
    pub dim: usize,
    pub fingerprint: Fingerprint,
    pub records: Vec<(String, EmbeddingVector)>,
}

pub fn write_vector_file<'a, W, I>(
    mut writer: W,
    dim: usize,
    fingerprint: Fingerprint,
    records: I,
) -> Result<()>
where
    W: Write,
    I: ExactSizeIterator<Item = (&'a str, &'a EmbeddingVector)>,
{
    let dim32 = u32::try_from(dim).map_err(|_| EmbeddingError::Format("dim exceeds u32".into()))?;
    writer.write_all(VECTOR_FILE_MAGIC)?;
    writer.write_all(&dim32.to_le_bytes())?;
    writer.write_all(&(records.len() as u64).to_le_bytes())?;
    writer.write_all(&fingerprint.0)?;
    let mut buf = Vec::with_capacity(dim * 4);
    for (para_id, vector) in records {
        if vector.dim() != dim {
            return Err(EmbeddingError::DimensionMismatch {
                expected: dim,
                got: vector.dim(),
            });
        }
        let id_len = u32::try_from(para_id.len())
            .map_err(|_| EmbeddingError::Format("para_id too long".into()))?;
        writer.write_all(&id_len.to_le_bytes())?;
        writer.write_all(para_id.as_bytes())?;
        buf.clear();
        for v in vector.values() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
    }
    writer.flush()?;
    Ok(())
}

fn read_exact_or_format<R: Read>(reader: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    reader.read_exact(buf).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => EmbeddingError::Format(format!("truncated {what}")),
        _ => EmbeddingError::Io(e),
    })
}

pub fn read_vector_file<R: Read>(mut reader: R) -> Result<VectorFile> {
    let mut magic = [0u8; 6];
    read_exact_or_format(&mut reader, &mut magic, "header")?;
    if &magic != VECTOR_FILE_MAGIC {
        return Err(EmbeddingError::Format("bad magic".into()));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    read_exact_or_format(&mut reader, &mut u32buf, "header")?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim == 0 {
        return Err(EmbeddingError::Format("dim is zero".into()));
    }
    read_exact_or_format(&mut reader, &mut u64buf, "header")?;
    let count = u64::from_le_bytes(u64buf);
    let mut fingerprint = Fingerprint::default();
    read_exact_or_format(&mut reader, &mut fingerprint.0, "header")?;

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut values = vec![0u8; dim * 4];
    for _ in 0..count {
        read_exact_or_format(&mut reader, &mut u32buf, "record")?;
        let mut id = vec![0u8; u32::from_le_bytes(u32buf) as usize];
        read_exact_or_format(&mut reader, &mut id, "record")?;
        let para_id = String::from_utf8(id)
            .map_err(|_| EmbeddingError::Format("para_id is not UTF-8".into()))?;
        read_exact_or_format(&mut reader, &mut values, "record")?;
        let vector = EmbeddingVector::new(
            values
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect(),
        )
        .map_err(|e| EmbeddingError::Format(format!("{para_id}: {e}")))?;
        if !seen.insert(para_id.clone()) {
            return Err(EmbeddingError::Format(format!("duplicate para_id {para_id}")));
        }
        records.push((para_id, vector));
    }
    if reader.read(&mut [0u8; 1])? != 0 {
        return Err(EmbeddingError::Format("trailing bytes after last record".into()));
    }
    Ok(VectorFile {
        dim,
        fingerprint,
        records,
    })
}
