//! Precomputed embedding files.
//!
//! Binary layout (little-endian): magic `VTADEMB1`, `u32` encoder-id length,
//! encoder-id bytes, `u32` dimension, `u64` record count, then per record a
//! `u32` utterance-id length, the id bytes and `d` 32-bit floats.
//! Text layout: `utterance_id<TAB>v1,v2,...` per line.

use std::io::{Read, Write};

use super::EncoderError;
use crate::corpus::UtteranceId;

const MAGIC: &[u8; 8] = b"VTADEMB1";

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingFile {
    pub encoder_id: String,
    pub dim: usize,
    pub records: Vec<(UtteranceId, Vec<f32>)>,
}

pub fn write_embedding_file<W: Write>(file: &EmbeddingFile, mut out: W) -> Result<(), EncoderError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_str(&mut buf, &file.encoder_id);
    buf.extend_from_slice(&(file.dim as u32).to_le_bytes());
    buf.extend_from_slice(&(file.records.len() as u64).to_le_bytes());
    for (id, v) in &file.records {
        if v.len() != file.dim {
            return Err(EncoderError::DimensionChanged {
                encoder_id: file.encoder_id.clone(),
                expected: file.dim,
                found: v.len(),
            });
        }
        put_str(&mut buf, id.as_str());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], EncoderError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| EncoderError::Corrupt("truncated embedding file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, EncoderError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, EncoderError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, EncoderError> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| EncoderError::Corrupt("non-UTF-8 string".into()))
    }
}

pub fn read_embedding_file<R: Read>(mut input: R) -> Result<EmbeddingFile, EncoderError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(EncoderError::Corrupt("bad magic".into()));
    }
    let encoder_id = cur.string()?;
    let dim = cur.u32()? as usize;
    let count = cur.u64()?;
    let mut records = Vec::new();
    for _ in 0..count {
        let id = UtteranceId::new(cur.string()?);
        let raw = cur.take(dim * 4)?;
        let v = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        records.push((id, v));
    }
    if cur.pos != bytes.len() {
        return Err(EncoderError::Corrupt("trailing bytes".into()));
    }
    Ok(EmbeddingFile {
        encoder_id,
        dim,
        records,
    })
}

/// Parses the plain-text interchange format. All rows must share one dimension.
pub fn parse_embedding_text(text: &str) -> Result<Vec<(UtteranceId, Vec<f64>)>, EncoderError> {
    let mut out = Vec::new();
    let mut dim = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, values) = line
            .split_once('\t')
            .ok_or_else(|| EncoderError::Corrupt(format!("line {}: missing tab", i + 1)))?;
        let v: Vec<f64> = values
            .split(',')
            .map(|x| x.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| EncoderError::Corrupt(format!("line {}: {e}", i + 1)))?;
        match dim {
            None => dim = Some(v.len()),
            Some(d) if d != v.len() => {
                return Err(EncoderError::Corrupt(format!(
                    "line {}: dimension {} differs from {d}",
                    i + 1,
                    v.len()
                )))
            }
            _ => {}
        }
        out.push((UtteranceId::new(id), v));
    }
    Ok(out)
}

pub fn write_embedding_text<W: Write>(
    records: &[(UtteranceId, Vec<f64>)],
    mut out: W,
) -> std::io::Result<()> {
    for (id, v) in records {
        let values: Vec<String> = v.iter().map(|x| x.to_string()).collect();
        writeln!(out, "{id}\t{}", values.join(","))?;
    }
    Ok(())
}
