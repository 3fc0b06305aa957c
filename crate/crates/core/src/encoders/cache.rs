use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{AudioSource, EncoderError, SpeakerEncoder, UtteranceRef};
use crate::corpus::UtteranceId;
use crate::rng::sha256_hex;
use crate::{Scalar, ScalarKind};

const RECORD_MAGIC: &[u8; 8] = b"VTADCV01";
const MANIFEST: &str = "manifest.tsv";

/// Digest of the audio behind an utterance; id-only references hash the id.
pub fn content_digest(utterance: &UtteranceRef) -> Result<String, EncoderError> {
    match &utterance.audio {
        None => Ok(sha256_hex(format!("id:{}", utterance.id).as_bytes())),
        Some(AudioSource::Bytes(b)) => Ok(sha256_hex(b)),
        Some(AudioSource::Path(p)) => match fs::read(p) {
            Ok(bytes) => Ok(sha256_hex(&bytes)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(EncoderError::UtteranceNotFound(utterance.id.clone()))
            }
            Err(e) => Err(EncoderError::Io(e)),
        },
    }
}

/// On-disk embedding cache: one binary record per (encoder, utterance,
/// content digest, scalar width) plus an append-only text manifest.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, EncoderError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn key(encoder_id: &str, utterance: &UtteranceId, digest: &str, kind: ScalarKind) -> String {
        let mut h = Sha256::new();
        for part in [encoder_id, utterance.as_str(), digest, kind_tag(kind)] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    fn record_path(&self, key: &str) -> PathBuf {
        self.dir.join(&key[..2]).join(format!("{key}.emb"))
    }

    /// Returns `None` for absent or unreadable records; a damaged record is
    /// treated as a miss and overwritten by the next `put`.
    pub fn get<T: Scalar>(&self, key: &str) -> Option<Vec<T>> {
        let bytes = fs::read(self.record_path(key)).ok()?;
        decode_record(&bytes)
    }

    pub fn put<T: Scalar>(
        &self,
        key: &str,
        encoder_id: &str,
        utterance: &UtteranceId,
        digest: &str,
        vector: &[T],
    ) -> Result<(), EncoderError> {
        let path = self.record_path(key);
        fs::create_dir_all(path.parent().expect("record path has a parent"))?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        fs::write(&tmp, encode_record(vector))?;
        fs::rename(&tmp, &path)?;
        let mut manifest = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join(MANIFEST))?;
        writeln!(
            manifest,
            "{key}\t{encoder_id}\t{utterance}\t{digest}\t{}\t{}",
            kind_tag(T::KIND),
            vector.len()
        )?;
        Ok(())
    }
}

fn kind_tag(kind: ScalarKind) -> &'static str {
    match kind {
        ScalarKind::F32 => "f32",
        ScalarKind::F64 => "f64",
    }
}

fn encode_record<T: Scalar>(vector: &[T]) -> Vec<u8> {
    let mut out = RECORD_MAGIC.to_vec();
    out.push(T::KIND.width() as u8);
    out.extend_from_slice(&(vector.len() as u32).to_le_bytes());
    for &x in vector {
        x.write_le(&mut out);
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    out
}

fn decode_record<T: Scalar>(bytes: &[u8]) -> Option<Vec<T>> {
    let w = T::KIND.width();
    let body_len = bytes.len().checked_sub(32)?;
    let (body, sum) = bytes.split_at(body_len);
    if Sha256::digest(body).as_slice() != sum || body.len() < 13 || &body[..8] != RECORD_MAGIC {
        return None;
    }
    if body[8] as usize != w {
        return None;
    }
    let dim = u32::from_le_bytes(body[9..13].try_into().ok()?) as usize;
    let data = &body[13..];
    if data.len() != dim * w {
        return None;
    }
    Some(data.chunks_exact(w).map(T::read_le).collect())
}

/// Embeddings for a corpus, with per-utterance failures kept alongside.
#[derive(Debug)]
pub struct CorpusEmbeddings<T> {
    pub encoder_id: String,
    pub dim: Option<usize>,
    pub embeddings: BTreeMap<UtteranceId, Vec<T>>,
    pub failures: Vec<(UtteranceId, EncoderError)>,
    pub encoder_calls: usize,
    pub cache_hits: usize,
}

impl<T> CorpusEmbeddings<T> {
    pub fn get(&self, id: &UtteranceId) -> Option<&[T]> {
        self.embeddings.get(id).map(Vec::as_slice)
    }

    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Embeds every utterance once, consulting and filling the cache. Failures
/// are recorded per utterance; successful records are persisted as they are
/// produced. A dimension change across utterances aborts the run.
pub fn embed_corpus<T, E>(
    encoder: &E,
    utterances: &[UtteranceRef],
    cache: Option<&EmbeddingCache>,
) -> Result<CorpusEmbeddings<T>, EncoderError>
where
    T: Scalar,
    E: SpeakerEncoder<T> + ?Sized,
{
    let encoder_id = encoder.encoder_id();
    let mut out = CorpusEmbeddings {
        encoder_id: encoder_id.clone(),
        dim: None,
        embeddings: BTreeMap::new(),
        failures: Vec::new(),
        encoder_calls: 0,
        cache_hits: 0,
    };
    for utt in utterances {
        if out.embeddings.contains_key(&utt.id) {
            continue;
        }
        let digest = match content_digest(utt) {
            Ok(d) => d,
            Err(e) => {
                out.failures.push((utt.id.clone(), e));
                continue;
            }
        };
        let key = EmbeddingCache::key(&encoder_id, &utt.id, &digest, T::KIND);
        let cached = cache.and_then(|c| c.get::<T>(&key));
        let vector = match cached {
            Some(v) => {
                out.cache_hits += 1;
                v
            }
            None => {
                out.encoder_calls += 1;
                match encoder.embed(utt) {
                    Ok(e) => {
                        if let Some(c) = cache {
                            c.put(&key, &encoder_id, &utt.id, &digest, &e.vector)?;
                        }
                        e.vector
                    }
                    Err(err @ EncoderError::DimensionChanged { .. }) => return Err(err),
                    Err(err) => {
                        out.failures.push((utt.id.clone(), err));
                        continue;
                    }
                }
            }
        };
        let expected = *out.dim.get_or_insert(vector.len());
        if expected != vector.len() {
            return Err(EncoderError::DimensionChanged {
                encoder_id,
                expected,
                found: vector.len(),
            });
        }
        out.embeddings.insert(utt.id.clone(), vector);
    }
    Ok(out)
}
