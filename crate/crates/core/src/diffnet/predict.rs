use std::collections::{BTreeMap, HashMap};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::network::DiffNetModel;
use super::DiffNetError;
use crate::corpus::{Gender, SpeakerInventory, UtteranceId};
use crate::encoders::CorpusEmbeddings;
use crate::protocol::{gender_from_trial_id, TrialRef};
use crate::Scalar;

const INFERENCE_BATCH: usize = 512;

/// Read access to embeddings by utterance id.
pub trait EmbeddingLookup<T> {
    fn lookup(&self, id: &UtteranceId) -> Option<&[T]>;

    /// Encoder that produced the embeddings, when known.
    fn source_encoder(&self) -> Option<&str> {
        None
    }
}

impl<T> EmbeddingLookup<T> for BTreeMap<UtteranceId, Vec<T>> {
    fn lookup(&self, id: &UtteranceId) -> Option<&[T]> {
        self.get(id).map(Vec::as_slice)
    }
}

impl<T> EmbeddingLookup<T> for HashMap<UtteranceId, Vec<T>> {
    fn lookup(&self, id: &UtteranceId) -> Option<&[T]> {
        self.get(id).map(Vec::as_slice)
    }
}

impl<T> EmbeddingLookup<T> for CorpusEmbeddings<T> {
    fn lookup(&self, id: &UtteranceId) -> Option<&[T]> {
        self.get(id)
    }

    fn source_encoder(&self) -> Option<&str> {
        Some(&self.encoder_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord<T> {
    pub trial_id: String,
    pub score: T,
    /// `score >= threshold`.
    pub decision: bool,
}

/// Scores every trial with one model, preserving trial order.
pub fn predict_trials<T, L>(
    model: &DiffNetModel<T>,
    trials: &[TrialRef],
    embeddings: &L,
) -> Result<Vec<PredictionRecord<T>>, DiffNetError>
where
    T: Scalar,
    L: EmbeddingLookup<T> + ?Sized,
{
    if let Some(source) = embeddings.source_encoder() {
        if source != model.encoder_id {
            return Err(DiffNetError::EncoderMismatch {
                model: model.encoder_id.clone(),
                embedding: source.to_string(),
            });
        }
    }
    let d = model.embedding_dim();
    let mut resolved = Vec::with_capacity(trials.len());
    for t in trials {
        let node = model
            .node_index(&t.descriptor)
            .ok_or_else(|| DiffNetError::UnknownDescriptorNode(t.descriptor.clone()))?;
        let mut pair = [&[][..]; 2];
        for (slot, u) in pair.iter_mut().zip([&t.utterance_first, &t.utterance_second]) {
            let v = embeddings
                .lookup(u)
                .ok_or_else(|| DiffNetError::MissingEmbedding(u.clone()))?;
            if v.len() != d {
                return Err(DiffNetError::DimensionMismatch {
                    expected: d,
                    found: v.len(),
                });
            }
            *slot = v;
        }
        resolved.push((node, pair));
    }

    let mut out = Vec::with_capacity(trials.len());
    for (chunk_trials, chunk) in trials.chunks(INFERENCE_BATCH).zip(resolved.chunks(INFERENCE_BATCH)) {
        let x = Array2::from_shape_fn((chunk.len(), 2 * d), |(r, c)| {
            let [a, b] = chunk[r].1;
            if c < d {
                a[c]
            } else {
                b[c - d]
            }
        });
        let probs = model.forward_batch(x.view())?;
        for (r, (t, (node, _))) in chunk_trials.iter().zip(chunk).enumerate() {
            let score = probs[[r, *node]];
            out.push(PredictionRecord {
                trial_id: t.trial_id.clone(),
                score,
                decision: score.to_f64_exact() >= model.config.threshold,
            });
        }
    }
    Ok(out)
}

/// Gender-bound models (or one joint model) used together at inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSet<T> {
    pub models: Vec<DiffNetModel<T>>,
}

impl<T: Scalar> ModelSet<T> {
    pub fn new(models: Vec<DiffNetModel<T>>) -> Self {
        Self { models }
    }

    fn model_for(&self, gender: Option<Gender>) -> Option<usize> {
        gender
            .and_then(|g| self.models.iter().position(|m| m.gender == Some(g)))
            .or_else(|| self.models.iter().position(|m| m.gender.is_none()))
    }

    /// Routes each trial to the model of its gender, taken from the trial id
    /// or, failing that, from the inventory owner of its first utterance.
    pub fn predict_trials<L: EmbeddingLookup<T> + ?Sized>(
        &self,
        trials: &[TrialRef],
        embeddings: &L,
        inventory: Option<&SpeakerInventory>,
    ) -> Result<Vec<PredictionRecord<T>>, DiffNetError> {
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, t) in trials.iter().enumerate() {
            let gender = gender_from_trial_id(&t.trial_id).or_else(|| {
                let inv = inventory?;
                inv.gender_of(inv.speaker_of(&t.utterance_first)?)
            });
            let m = self
                .model_for(gender)
                .ok_or_else(|| DiffNetError::NoModelForTrial(t.trial_id.clone()))?;
            groups.entry(m).or_default().push(i);
        }
        let mut slots: Vec<Option<PredictionRecord<T>>> = vec![None; trials.len()];
        for (m, idx) in groups {
            let subset: Vec<TrialRef> = idx.iter().map(|&i| trials[i].clone()).collect();
            let preds = predict_trials(&self.models[m], &subset, embeddings)?;
            for (i, p) in idx.into_iter().zip(preds) {
                slots[i] = Some(p);
            }
        }
        Ok(slots.into_iter().map(|p| p.expect("every trial routed")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Descriptor;
    use crate::diffnet::DiffNetConfig;

    fn zero_model(gender: Option<Gender>) -> DiffNetModel<f64> {
        let cfg = DiffNetConfig {
            input_dim: 4,
            hidden_layers: vec![3],
            output_dim: 2,
            ..Default::default()
        };
        DiffNetModel::zeroed(cfg, "enc", vec!["bright".into(), "thin".into()], gender).unwrap()
    }

    fn trial(id: &str, desc: &str) -> TrialRef {
        TrialRef {
            trial_id: id.into(),
            utterance_first: "a".into(),
            utterance_second: "b".into(),
            descriptor: Descriptor::new(desc),
        }
    }

    fn emb() -> BTreeMap<UtteranceId, Vec<f64>> {
        [("a".into(), vec![0.1, 0.2]), ("b".into(), vec![0.3, -0.4])].into_iter().collect()
    }

    #[test]
    fn zero_model_ties_resolve_to_one() {
        let preds = predict_trials(&zero_model(None), &[trial("t1", "bright"), trial("t2", "thin")], &emb()).unwrap();
        assert!(preds.iter().all(|p| p.score == 0.5 && p.decision));
        assert_eq!(preds[1].trial_id, "t2");
    }

    #[test]
    fn threshold_rule_on_a_known_score() {
        let mut m = zero_model(None);
        // sigmoid(logit) = 0.73  <=>  logit = ln(0.73 / 0.27)
        m.output_bias[0] = (0.73f64 / 0.27).ln();
        m.output_bias[1] = (0.2f64 / 0.8).ln();
        let preds = predict_trials(&m, &[trial("t1", "bright"), trial("t2", "thin")], &emb()).unwrap();
        assert!((preds[0].score - 0.73).abs() < 1e-12 && preds[0].decision);
        assert!((preds[1].score - 0.2).abs() < 1e-12 && !preds[1].decision);
    }

    #[test]
    fn missing_pieces_are_named() {
        let m = zero_model(None);
        let err = predict_trials(&m, &[trial("t", "husky")], &emb()).unwrap_err();
        assert!(matches!(err, DiffNetError::UnknownDescriptorNode(d) if d.as_str() == "husky"));
        let mut t = trial("t", "bright");
        t.utterance_second = "zz".into();
        let err = predict_trials(&m, &[t], &emb()).unwrap_err();
        assert!(matches!(err, DiffNetError::MissingEmbedding(u) if u.as_str() == "zz"));
    }

    #[test]
    fn model_set_routes_by_gender_and_keeps_order() {
        let mut male = zero_model(Some(Gender::Male));
        male.output_bias.fill(1.0);
        let set = ModelSet::new(vec![zero_model(Some(Gender::Female)), male]);
        let trials = [
            trial("unseen-male-thin-0001-000", "thin"),
            trial("unseen-female-thin-0001-000", "thin"),
            trial("unseen-male-bright-0002-000", "bright"),
        ];
        let preds = set.predict_trials(&trials, &emb(), None).unwrap();
        assert!(preds[0].score > 0.7 && preds[1].score == 0.5 && preds[2].score > 0.7);
        assert_eq!(preds[1].trial_id, trials[1].trial_id);
        assert!(matches!(
            set.predict_trials(&[trial("x", "thin")], &emb(), None),
            Err(DiffNetError::NoModelForTrial(_))
        ));
    }
}
