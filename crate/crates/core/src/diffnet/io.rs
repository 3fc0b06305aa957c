use std::collections::BTreeMap;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::DiffNetModel;
use super::train::{AdamState, Trainer, TrainingLog};
use super::{DiffNetConfig, DiffNetError};
use crate::corpus::{Descriptor, Gender};
use crate::{Scalar, ScalarKind};

const MAGIC: &[u8; 8] = b"VTADNET\0";
pub const MODEL_FORMAT_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    log: TrainingLog,
}

#[derive(Serialize, Deserialize)]
struct Header {
    scalar: ScalarKind,
    config: DiffNetConfig,
    encoder_id: String,
    nodes: Vec<Descriptor>,
    gender: Option<Gender>,
    meta: BTreeMap<String, String>,
    tensors: Vec<TensorEntry>,
    optimizer: Option<OptimizerHeader>,
}

fn io_err(path: &Path, source: std::io::Error) -> DiffNetError {
    DiffNetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(msg: impl Into<String>) -> DiffNetError {
    DiffNetError::CorruptModelFile(msg.into())
}

pub fn save_model<T: Scalar>(model: &DiffNetModel<T>, path: &Path) -> Result<(), DiffNetError> {
    save_model_with_state(model, None, path)
}

/// Writes the model, and optionally the optimizer state and training log
/// needed to resume. The file is written beside `path` and renamed into place.
pub fn save_model_with_state<T: Scalar>(
    model: &DiffNetModel<T>,
    trainer: Option<&Trainer<T>>,
    path: &Path,
) -> Result<(), DiffNetError> {
    let bytes = encode(model, trainer)?;
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, &bytes).map_err(|e| io_err(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn encode<T: Scalar>(model: &DiffNetModel<T>, trainer: Option<&Trainer<T>>) -> Result<Vec<u8>, DiffNetError> {
    model.validate()?;
    let mut tensors: Vec<(String, ArrayD<T>)> = model
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.to_owned()))
        .collect();
    if let Some(tr) = trainer {
        let names: Vec<String> = model.trainable().into_iter().map(|(n, _)| n).collect();
        for (n, m) in names.iter().zip(&tr.state.m) {
            tensors.push((format!("adam.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(&tr.state.v) {
            tensors.push((format!("adam.v.{n}"), v.clone()));
        }
    }
    let header = Header {
        scalar: T::KIND,
        config: model.config.clone(),
        encoder_id: model.encoder_id.clone(),
        nodes: model.nodes.clone(),
        gender: model.gender,
        meta: model.meta.clone(),
        tensors: tensors
            .iter()
            .map(|(n, t)| TensorEntry {
                name: n.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        optimizer: trainer.map(|t| OptimizerHeader {
            step: t.state.step,
            log: t.log.clone(),
        }),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&MODEL_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in &tensors {
        for &x in t.iter() {
            x.write_le(&mut out);
        }
    }
    let sum = Sha256::digest(&out);
    out.extend_from_slice(&sum);
    Ok(out)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<DiffNetModel<T>, DiffNetError> {
    load_model_with_state(path).map(|(m, _)| m)
}

/// Loads a model plus the optimizer state and log when the file has them.
pub fn load_model_with_state<T: Scalar>(path: &Path) -> Result<(DiffNetModel<T>, Option<Trainer<T>>), DiffNetError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    decode(&bytes)
}

fn decode<T: Scalar>(bytes: &[u8]) -> Result<(DiffNetModel<T>, Option<Trainer<T>>), DiffNetError> {
    if bytes.len() < MAGIC.len() + 12 + CHECKSUM_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..8] != MAGIC {
        return Err(corrupt("not a Diff-Net model file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != MODEL_FORMAT_VERSION {
        return Err(DiffNetError::VersionMismatch {
            found: version,
            supported: MODEL_FORMAT_VERSION,
        });
    }
    let (body, sum) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != sum {
        return Err(corrupt("checksum mismatch"));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(20))
        .filter(|&e| e <= body.len())
        .ok_or_else(|| corrupt("header length out of range"))?;
    let header: Header =
        serde_json::from_slice(&body[20..header_end]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.scalar != T::KIND {
        return Err(DiffNetError::PrecisionMismatch {
            stored: format!("{:?}", header.scalar).to_lowercase(),
            requested: format!("{:?}", T::KIND).to_lowercase(),
        });
    }

    let w = T::KIND.width();
    let mut data = &body[header_end..];
    let mut tensors: BTreeMap<String, ArrayD<T>> = BTreeMap::new();
    for entry in &header.tensors {
        let count: usize = entry.shape.iter().product();
        let need = count.checked_mul(w).filter(|&n| n <= data.len()).ok_or_else(|| {
            corrupt(format!("tensor `{}` runs past the end of the file", entry.name))
        })?;
        let values: Vec<T> = data[..need].chunks_exact(w).map(T::read_le).collect();
        data = &data[need..];
        let arr = ArrayD::from_shape_vec(entry.shape.clone(), values).map_err(|e| corrupt(e.to_string()))?;
        tensors.insert(entry.name.clone(), arr);
    }
    if !data.is_empty() {
        return Err(corrupt("trailing bytes after tensor data"));
    }

    let mut model = DiffNetModel::zeroed(header.config, header.encoder_id, header.nodes, header.gender)
        .map_err(|e| corrupt(e.to_string()))?;
    model.meta = header.meta;
    for (name, mut slot) in model.named_tensors_mut() {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| corrupt(format!("tensor `{name}` missing")))?;
        if t.shape() != slot.shape() {
            return Err(corrupt(format!("tensor `{name}` has shape {:?}", t.shape())));
        }
        slot.assign(&t);
    }
    model.validate()?;

    let trainer = match header.optimizer {
        None => None,
        Some(opt) => {
            let names: Vec<String> = model.trainable().into_iter().map(|(n, _)| n).collect();
            let mut take = |prefix: &str| -> Result<Vec<ArrayD<T>>, DiffNetError> {
                names
                    .iter()
                    .map(|n| {
                        tensors
                            .remove(&format!("{prefix}{n}"))
                            .ok_or_else(|| corrupt(format!("optimizer tensor for `{n}` missing")))
                    })
                    .collect()
            };
            let state = AdamState {
                step: opt.step,
                m: take("adam.m.")?,
                v: take("adam.v.")?,
            };
            Some(Trainer::resume(&model, state, opt.log)?)
        }
    };
    if let Some(name) = tensors.keys().next() {
        return Err(corrupt(format!("unexpected tensor `{name}`")));
    }
    Ok((model, trainer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::default_vocabulary;
    use crate::diffnet::{predict_trials, TrainingExample};
    use crate::protocol::TrialRef;
    use crate::rng::named_rng;
    use ndarray::Array2;
    use rand_distr::{Distribution, StandardNormal};

    fn trained<T: Scalar>() -> (DiffNetModel<T>, Trainer<T>) {
        let cfg = DiffNetConfig {
            input_dim: 6,
            hidden_layers: vec![5, 4],
            output_dim: 17,
            ..Default::default()
        };
        let nodes = default_vocabulary().for_gender(Gender::Female);
        let mut model = DiffNetModel::new(cfg, "enc", nodes, Some(Gender::Female)).unwrap();
        model.meta.insert("split".into(), "abc".into());
        let mut rng = named_rng(3, &["io"]);
        let examples: Vec<TrainingExample<T>> = (0..20)
            .map(|_| {
                let mut v = || (0..3).map(|_| T::from_f64_lossy(StandardNormal.sample(&mut rng))).collect();
                let (first, second) = (v(), v());
                let mut mask = vec![T::zero(); 17];
                mask[0] = T::one();
                TrainingExample {
                    first,
                    second,
                    labels: vec![T::one(); 17],
                    mask,
                }
            })
            .collect();
        let mut trainer = Trainer::new(&model);
        trainer.run(&mut model, &examples, 2).unwrap();
        (model, trainer)
    }

    fn round_trip_is_bit_exact<T: Scalar>() {
        let (model, trainer) = trained::<T>();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.vtad");
        save_model_with_state(&model, Some(&trainer), &path).unwrap();
        let (loaded, state) = load_model_with_state::<T>(&path).unwrap();
        assert_eq!(loaded, model);
        let state = state.unwrap();
        assert_eq!(state.state, trainer.state);
        assert_eq!(state.log, trainer.log);

        let mut rng = named_rng(9, &["inputs"]);
        let x = Array2::from_shape_fn((100, 6), |_| T::from_f64_lossy(StandardNormal.sample(&mut rng)));
        let a = model.forward_batch(x.view()).unwrap();
        let b = loaded.forward_batch(x.view()).unwrap();
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_f64_exact().to_bits() == q.to_f64_exact().to_bits()));
    }

    #[test]
    fn round_trip_f64() {
        round_trip_is_bit_exact::<f64>();
    }

    #[test]
    fn round_trip_f32() {
        round_trip_is_bit_exact::<f32>();
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (model, _) = trained::<f64>();
        let bytes = encode(&model, None).unwrap();
        for cut in [10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(decode::<f64>(&bytes[..cut]), Err(DiffNetError::CorruptModelFile(_))));
        }
        let mut flipped = bytes.clone();
        let mid = flipped.len() - 100;
        flipped[mid] ^= 0x40;
        assert!(matches!(decode::<f64>(&flipped), Err(DiffNetError::CorruptModelFile(_))));
        let mut future = bytes.clone();
        future[8] = 9;
        assert!(matches!(decode::<f64>(&future), Err(DiffNetError::VersionMismatch { found: 9, .. })));
        assert!(matches!(decode::<f32>(&bytes), Err(DiffNetError::PrecisionMismatch { .. })));
        assert!(decode::<f64>(&bytes).unwrap().1.is_none());
    }

    #[test]
    fn loaded_model_keeps_vocabulary_binding() {
        let (model, _) = trained::<f64>();
        let (loaded, _) = decode::<f64>(&encode(&model, None).unwrap()).unwrap();
        let emb: BTreeMap<_, _> = [("a".into(), vec![0.0; 3]), ("b".into(), vec![1.0; 3])].into_iter().collect();
        let trial = TrialRef {
            trial_id: "t".into(),
            utterance_first: "a".into(),
            utterance_second: "b".into(),
            descriptor: "husky".into(),
        };
        assert!(matches!(
            predict_trials(&loaded, &[trial], &emb),
            Err(DiffNetError::UnknownDescriptorNode(_))
        ));
    }
}
