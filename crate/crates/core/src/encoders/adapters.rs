use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use super::files::{parse_embedding_text, read_embedding_file};
use super::{AudioSource, Embedding, EncoderError, SpeakerEncoder, UtteranceRef};
use crate::corpus::UtteranceId;
use crate::rng::sha256_hex;
use crate::Scalar;

/// Serves embeddings computed elsewhere (binary or text embedding files).
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder<T> {
    encoder_id: String,
    dim: usize,
    table: BTreeMap<UtteranceId, Vec<T>>,
}

impl<T: Scalar> PrecomputedEncoder<T> {
    pub fn from_records(
        encoder_id: impl Into<String>,
        records: impl IntoIterator<Item = (UtteranceId, Vec<T>)>,
    ) -> Result<Self, EncoderError> {
        let encoder_id = encoder_id.into();
        let mut table = BTreeMap::new();
        let mut dim = None;
        for (id, v) in records {
            let d = *dim.get_or_insert(v.len());
            if d != v.len() {
                return Err(EncoderError::DimensionChanged {
                    encoder_id,
                    expected: d,
                    found: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EncoderError::NonFinite(id));
            }
            if table.insert(id.clone(), v).is_some() {
                return Err(EncoderError::EncoderLoadFailure(format!(
                    "utterance `{id}` listed twice"
                )));
            }
        }
        Ok(Self {
            encoder_id,
            dim: dim.unwrap_or(0),
            table,
        })
    }

    /// Loads a binary embedding file, or a text one when the magic is absent.
    /// Text files carry no encoder id, so one is derived from the file name.
    pub fn load(path: &Path) -> Result<Self, EncoderError> {
        let bytes = std::fs::read(path).map_err(|e| {
            EncoderError::EncoderLoadFailure(format!("{}: {e}", path.display()))
        })?;
        if bytes.starts_with(b"VTADEMB1") {
            let file = read_embedding_file(&bytes[..])?;
            Self::from_records(
                file.encoder_id,
                file.records
                    .into_iter()
                    .map(|(id, v)| (id, v.into_iter().map(|x| T::from_f64_lossy(f64::from(x))).collect())),
            )
        } else {
            let text = String::from_utf8(bytes)
                .map_err(|_| EncoderError::EncoderLoadFailure("embedding file is not UTF-8".into()))?;
            let stem = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "precomputed".into());
            Self::from_records(
                format!("precomputed:{stem}"),
                parse_embedding_text(&text)?
                    .into_iter()
                    .map(|(id, v)| (id, v.into_iter().map(T::from_f64_lossy).collect())),
            )
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl<T: Scalar> SpeakerEncoder<T> for PrecomputedEncoder<T> {
    fn encoder_id(&self) -> String {
        self.encoder_id.clone()
    }

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError> {
        let v = self
            .table
            .get(&utterance.id)
            .ok_or_else(|| EncoderError::UtteranceNotFound(utterance.id.clone()))?;
        Embedding::new(v.clone(), self.encoder_id.clone(), utterance.id.clone())
    }

    fn parameter_checksum(&self) -> String {
        let mut buf = self.encoder_id.as_bytes().to_vec();
        for (id, v) in &self.table {
            buf.extend_from_slice(id.as_str().as_bytes());
            for x in v {
                x.write_le(&mut buf);
            }
        }
        sha256_hex(&buf)
    }
}

/// Runs an external program per utterance. The audio path is appended to
/// `args` (or `-` with the payload on stdin); the program prints the
/// embedding as whitespace- or comma-separated numbers on stdout.
#[derive(Debug)]
pub struct CommandEncoder {
    program: PathBuf,
    args: Vec<String>,
    checksum: String,
    dim: OnceLock<usize>,
}

impl CommandEncoder {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Result<Self, EncoderError> {
        let program = program.into();
        let mut material = Vec::new();
        if program.components().count() > 1 {
            material = std::fs::read(&program).map_err(|e| {
                EncoderError::EncoderLoadFailure(format!("{}: {e}", program.display()))
            })?;
        }
        material.extend_from_slice(program.to_string_lossy().as_bytes());
        for a in &args {
            material.push(0);
            material.extend_from_slice(a.as_bytes());
        }
        Ok(Self {
            checksum: sha256_hex(&material),
            program,
            args,
            dim: OnceLock::new(),
        })
    }
}

impl<T: Scalar> SpeakerEncoder<T> for CommandEncoder {
    fn encoder_id(&self) -> String {
        let name = self
            .program
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        format!("cmd:{name}:{}", &self.checksum[..12])
    }

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError> {
        let id = &utterance.id;
        let mut cmd = Command::new(&self.program);
        cmd.args(&self.args)
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        let payload = match &utterance.audio {
            None => return Err(EncoderError::UtteranceNotFound(id.clone())),
            Some(AudioSource::Path(p)) => {
                if !p.is_file() {
                    return Err(EncoderError::UtteranceNotFound(id.clone()));
                }
                cmd.arg(p).stdin(Stdio::null());
                None
            }
            Some(AudioSource::Bytes(b)) => {
                cmd.arg("-").stdin(Stdio::piped());
                Some(b)
            }
        };
        let mut child = cmd.spawn().map_err(|e| {
            EncoderError::EncoderLoadFailure(format!("{}: {e}", self.program.display()))
        })?;
        if let (Some(bytes), Some(mut stdin)) = (payload, child.stdin.take()) {
            stdin.write_all(bytes)?;
        }
        let output = child.wait_with_output()?;
        if !output.status.success() {
            return Err(EncoderError::AudioDecodeFailure {
                utterance: id.clone(),
                reason: String::from_utf8_lossy(&output.stderr).trim().to_string(),
            });
        }
        let text = String::from_utf8_lossy(&output.stdout);
        let vector: Vec<T> = text
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| t.parse::<f64>().map(T::from_f64_lossy))
            .collect::<Result<_, _>>()
            .map_err(|e| EncoderError::AudioDecodeFailure {
                utterance: id.clone(),
                reason: format!("unparsable encoder output: {e}"),
            })?;
        let expected = *self.dim.get_or_init(|| vector.len());
        if expected != vector.len() {
            return Err(EncoderError::DimensionChanged {
                encoder_id: SpeakerEncoder::<T>::encoder_id(self),
                expected,
                found: vector.len(),
            });
        }
        Embedding::new(vector, SpeakerEncoder::<T>::encoder_id(self), id.clone())
    }

    fn parameter_checksum(&self) -> String {
        self.checksum.clone()
    }
}

/// Scales every embedding of the inner encoder to unit Euclidean length.
#[derive(Debug, Clone)]
pub struct LengthNormalized<E>(pub E);

impl<T: Scalar, E: SpeakerEncoder<T>> SpeakerEncoder<T> for LengthNormalized<E> {
    fn encoder_id(&self) -> String {
        format!("{}+l2norm", self.0.encoder_id())
    }

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError> {
        let inner = self.0.embed(utterance)?;
        let norm = inner.vector.iter().map(|&x| x * x).sum::<T>().sqrt();
        let vector = if norm > T::zero() {
            inner.vector.iter().map(|&x| x / norm).collect()
        } else {
            inner.vector
        };
        Embedding::new(vector, self.encoder_id(), inner.utterance_id)
    }

    fn parameter_checksum(&self) -> String {
        self.0.parameter_checksum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table() -> PrecomputedEncoder<f64> {
        PrecomputedEncoder::from_records(
            "toy",
            [("a".into(), vec![3.0, 4.0]), ("b".into(), vec![0.0, 1.0])],
        )
        .unwrap()
    }

    #[test]
    fn precomputed_lookup_and_missing_utterance() {
        let enc = table();
        let e = enc.embed(&UtteranceRef::id_only("a".into())).unwrap();
        assert_eq!(e.vector, vec![3.0, 4.0]);
        assert_eq!(e.encoder_id, "toy");
        assert!(matches!(
            enc.embed(&UtteranceRef::id_only("zz".into())),
            Err(EncoderError::UtteranceNotFound(_))
        ));
    }

    #[test]
    fn precomputed_rejects_mixed_dimensions() {
        let err = PrecomputedEncoder::<f64>::from_records(
            "x",
            [("a".into(), vec![1.0]), ("b".into(), vec![1.0, 2.0])],
        )
        .unwrap_err();
        assert!(matches!(err, EncoderError::DimensionChanged { .. }));
    }

    #[test]
    fn length_normalization_is_recorded_in_id() {
        let enc = LengthNormalized(table());
        let e = enc.embed(&UtteranceRef::id_only("a".into())).unwrap();
        assert_eq!(e.vector, vec![0.6, 0.8]);
        assert_eq!(e.encoder_id, "toy+l2norm");
    }

    #[test]
    fn loads_text_file_with_derived_id() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ecapa.tsv");
        std::fs::write(&path, "u1\t0.5,1\nu2\t2,3\n").unwrap();
        let enc = PrecomputedEncoder::<f32>::load(&path).unwrap();
        assert_eq!(enc.dim(), 2);
        assert_eq!(SpeakerEncoder::<f32>::encoder_id(&enc), "precomputed:ecapa");
        assert!(matches!(
            PrecomputedEncoder::<f32>::load(&dir.path().join("missing")),
            Err(EncoderError::EncoderLoadFailure(_))
        ));
    }

    #[cfg(unix)]
    #[test]
    fn command_adapter_reads_stdout_and_reports_failures() {
        use std::os::unix::fs::PermissionsExt;
        let dir = tempfile::tempdir().unwrap();
        let script = dir.path().join("enc.sh");
        std::fs::write(
            &script,
            "#!/bin/sh\ncase \"$1\" in *bad*) echo broken >&2; exit 3;; esac\necho '1.5 -2, 0.25'\n",
        )
        .unwrap();
        std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
        let good = dir.path().join("good.wav");
        let bad = dir.path().join("bad.wav");
        std::fs::write(&good, b"RIFF").unwrap();
        std::fs::write(&bad, b"RIFF").unwrap();

        let enc = CommandEncoder::new(&script, vec![]).unwrap();
        let before = SpeakerEncoder::<f64>::parameter_checksum(&enc);
        let e: Embedding<f64> = enc.embed(&UtteranceRef::with_path("g".into(), &good)).unwrap();
        assert_eq!(e.vector, vec![1.5, -2.0, 0.25]);
        let err = SpeakerEncoder::<f64>::embed(&enc, &UtteranceRef::with_path("b".into(), &bad))
            .unwrap_err();
        assert!(matches!(err, EncoderError::AudioDecodeFailure { .. }));
        let err = SpeakerEncoder::<f64>::embed(
            &enc,
            &UtteranceRef::with_path("m".into(), dir.path().join("missing.wav")),
        )
        .unwrap_err();
        assert!(matches!(err, EncoderError::UtteranceNotFound(_)));
        assert_eq!(SpeakerEncoder::<f64>::parameter_checksum(&enc), before);

        assert!(matches!(
            CommandEncoder::new(dir.path().join("nope.sh"), vec![]),
            Err(EncoderError::EncoderLoadFailure(_))
        ));
    }
}
