use std::borrow::Cow;
use std::collections::BTreeMap;

use ndarray::{Array2, ArrayD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::network::DiffNetModel;
use super::predict::EmbeddingLookup;
use super::{DiffNetError, Optimizer, TrainConfig};
use crate::corpus::{Descriptor, OrderedPairAnnotation, SpeakerId, UtteranceId};
use crate::rng::{named_rng, sha256_hex};
use crate::Scalar;

/// One supervised ordered pair: `labels[n]` is the target for node `n`,
/// counted only where `mask[n]` is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample<T> {
    pub first: Vec<T>,
    pub second: Vec<T>,
    pub labels: Vec<T>,
    pub mask: Vec<T>,
}

/// Supplies the examples of each epoch.
pub trait ExampleSource<T: Clone> {
    fn epoch_examples(&self, epoch: usize) -> Result<Cow<'_, [TrainingExample<T>]>, DiffNetError>;
}

impl<T: Clone> ExampleSource<T> for [TrainingExample<T>] {
    fn epoch_examples(&self, _epoch: usize) -> Result<Cow<'_, [TrainingExample<T>]>, DiffNetError> {
        Ok(Cow::Borrowed(self))
    }
}

impl<T: Clone> ExampleSource<T> for Vec<TrainingExample<T>> {
    fn epoch_examples(&self, epoch: usize) -> Result<Cow<'_, [TrainingExample<T>]>, DiffNetError> {
        self.as_slice().epoch_examples(epoch)
    }
}

/// Turns speaker-level annotations into utterance-level examples. Each
/// epoch, every annotated pair (A weaker, B stronger) yields
/// `pairs_per_annotation` random (a, b) utterance pairs with its descriptor
/// nodes labeled 1, each accompanied by the reversed (b, a) labeled 0.
/// Nodes the pair is not annotated for are masked out.
pub struct PairSampler<'a, T, L: ?Sized> {
    pairs: Vec<(SpeakerId, SpeakerId, Vec<usize>)>,
    utterances: &'a BTreeMap<SpeakerId, Vec<UtteranceId>>,
    embeddings: &'a L,
    nodes: usize,
    per_pair: usize,
    seed: u64,
    _scalar: std::marker::PhantomData<T>,
}

impl<'a, T: Scalar, L: EmbeddingLookup<T> + ?Sized> PairSampler<'a, T, L> {
    pub fn new(
        nodes: &[Descriptor],
        pairs: &[OrderedPairAnnotation],
        utterances: &'a BTreeMap<SpeakerId, Vec<UtteranceId>>,
        embeddings: &'a L,
        per_pair: usize,
        seed: u64,
    ) -> Result<Self, DiffNetError> {
        if pairs.is_empty() {
            return Err(DiffNetError::EmptyTrainingSet);
        }
        let mut resolved = Vec::with_capacity(pairs.len());
        for p in pairs {
            let idx = p
                .descriptors
                .iter()
                .map(|d| {
                    nodes
                        .iter()
                        .position(|n| n == d)
                        .ok_or_else(|| DiffNetError::UnknownDescriptorNode(d.clone()))
                })
                .collect::<Result<Vec<_>, _>>()?;
            for s in [&p.weaker, &p.stronger] {
                let utts = utterances.get(s).map(Vec::as_slice).unwrap_or(&[]);
                if utts.is_empty() {
                    return Err(DiffNetError::InvalidConfig(format!(
                        "speaker `{s}` has no training utterances"
                    )));
                }
                if let Some(u) = utts.iter().find(|u| embeddings.lookup(u).is_none()) {
                    return Err(DiffNetError::MissingEmbedding(u.clone()));
                }
            }
            resolved.push((p.weaker.clone(), p.stronger.clone(), idx));
        }
        Ok(Self {
            pairs: resolved,
            utterances,
            embeddings,
            nodes: nodes.len(),
            per_pair,
            seed,
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }
}

impl<T: Scalar, L: EmbeddingLookup<T> + ?Sized> ExampleSource<T> for PairSampler<'_, T, L> {
    fn epoch_examples(&self, epoch: usize) -> Result<Cow<'_, [TrainingExample<T>]>, DiffNetError> {
        let mut rng = named_rng(self.seed, &["diffnet", "pairs", &epoch.to_string()]);
        let mut out = Vec::with_capacity(self.pairs.len() * self.per_pair * 2);
        for (weaker, stronger, idx) in &self.pairs {
            let (ua, ub) = (&self.utterances[weaker], &self.utterances[stronger]);
            let mut mask = vec![T::zero(); self.nodes];
            for &i in idx {
                mask[i] = T::one();
            }
            let ones = mask.clone();
            let zeros = vec![T::zero(); self.nodes];
            for _ in 0..self.per_pair {
                let a = &ua[rng.random_range(0..ua.len())];
                let b = &ub[rng.random_range(0..ub.len())];
                let ea = self.embeddings.lookup(a).ok_or_else(|| DiffNetError::MissingEmbedding(a.clone()))?;
                let eb = self.embeddings.lookup(b).ok_or_else(|| DiffNetError::MissingEmbedding(b.clone()))?;
                out.push(TrainingExample {
                    first: ea.to_vec(),
                    second: eb.to_vec(),
                    labels: ones.clone(),
                    mask: mask.clone(),
                });
                out.push(TrainingExample {
                    first: eb.to_vec(),
                    second: ea.to_vec(),
                    labels: zeros.clone(),
                    mask: mask.clone(),
                });
            }
        }
        Ok(Cow::Owned(out))
    }
}

/// Adam moments (unused by plain SGD), kept for resuming.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<ArrayD<T>>,
    pub v: Vec<ArrayD<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn for_model(model: &DiffNetModel<T>) -> Self {
        let zeros: Vec<ArrayD<T>> = model
            .trainable()
            .iter()
            .map(|(_, t)| ArrayD::zeros(t.raw_dim()))
            .collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn matches(&self, model: &DiffNetModel<T>) -> bool {
        let shapes: Vec<_> = model.trainable().iter().map(|(_, t)| t.shape().to_vec()).collect();
        shapes.len() == self.m.len()
            && shapes.len() == self.v.len()
            && shapes.iter().zip(&self.m).zip(&self.v).all(|((s, m), v)| s == m.shape() && s == v.shape())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub examples: usize,
    pub batches: usize,
    pub mean_loss: f64,
    /// Standard deviation of batch losses within the epoch.
    pub batch_loss_std: f64,
    /// Exponential moving average of `mean_loss` across epochs.
    pub smoothed_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub seed: u64,
    pub config_digest: String,
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.mean_loss)
    }
}

/// Optimizer state plus log; survives across calls so training can resume.
#[derive(Debug, Clone)]
pub struct Trainer<T> {
    pub config: TrainConfig,
    pub state: AdamState<T>,
    pub log: TrainingLog,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: &DiffNetModel<T>) -> Self {
        // The epoch budget may grow on resume; it is not part of the recipe.
        let mut recipe = model.config.clone();
        recipe.train.epochs = 0;
        Self {
            config: model.config.train.clone(),
            state: AdamState::for_model(model),
            log: TrainingLog {
                seed: model.config.train.seed,
                config_digest: sha256_hex(serde_json::to_string(&recipe).expect("config serializes").as_bytes()),
                epochs: Vec::new(),
            },
        }
    }

    /// Continues from saved optimizer state and log.
    pub fn resume(model: &DiffNetModel<T>, state: AdamState<T>, log: TrainingLog) -> Result<Self, DiffNetError> {
        if !state.matches(model) {
            return Err(DiffNetError::CorruptModelFile(
                "optimizer state does not match model shapes".into(),
            ));
        }
        Ok(Self {
            config: model.config.train.clone(),
            state,
            log,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.log.epochs.len()
    }

    /// Runs `epochs` further epochs.
    pub fn run<S: ExampleSource<T> + ?Sized>(
        &mut self,
        model: &mut DiffNetModel<T>,
        source: &S,
        epochs: usize,
    ) -> Result<(), DiffNetError> {
        model.config.validate()?;
        let tag = model.gender.map(|g| g.as_str()).unwrap_or("joint");
        let d = model.embedding_dim();
        let n = model.config.output_dim;
        let start = self.epochs_done();
        for epoch in start..start + epochs {
            let examples = source.epoch_examples(epoch)?;
            if examples.is_empty() {
                return Err(DiffNetError::EmptyTrainingSet);
            }
            for ex in examples.iter() {
                if ex.first.len() != d || ex.second.len() != d {
                    return Err(DiffNetError::DimensionMismatch {
                        expected: d,
                        found: if ex.first.len() != d { ex.first.len() } else { ex.second.len() },
                    });
                }
                if ex.labels.len() != n || ex.mask.len() != n {
                    return Err(DiffNetError::DimensionMismatch {
                        expected: n,
                        found: ex.labels.len().min(ex.mask.len()),
                    });
                }
            }
            let mut order: Vec<usize> = (0..examples.len()).collect();
            order.shuffle(&mut named_rng(self.config.seed, &["diffnet", "order", tag, &epoch.to_string()]));
            let chunks: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
            let mut losses = Vec::with_capacity(chunks.len());
            for (batch, chunk) in chunks.iter().enumerate() {
                // a lone example gives degenerate batch statistics
                if chunk.len() == 1 && model.config.use_batch_norm && chunks.len() > 1 {
                    continue;
                }
                let x = Array2::from_shape_fn((chunk.len(), 2 * d), |(r, c)| {
                    let ex = &examples[chunk[r]];
                    if c < d {
                        ex.first[c]
                    } else {
                        ex.second[c - d]
                    }
                });
                let y = Array2::from_shape_fn((chunk.len(), n), |(r, c)| examples[chunk[r]].labels[c]);
                let mask = Array2::from_shape_fn((chunk.len(), n), |(r, c)| examples[chunk[r]].mask[c]);
                let (loss, grads, stats) = match model.train_step_parts(x.view(), y.view(), mask.view()) {
                    Err(DiffNetError::AllMasked { .. }) => return Err(DiffNetError::AllMasked { epoch, batch }),
                    other => other?,
                };
                let loss64 = loss.to_f64_exact();
                if !loss64.is_finite() {
                    return Err(DiffNetError::NonFiniteLoss { epoch, batch, loss: loss64 });
                }
                self.apply(model, &grads.tensors);
                model.update_running_stats(&stats, chunk.len());
                losses.push(loss64);
            }
            let count = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / count;
            let std = (losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / count).sqrt();
            let smoothed = match self.log.epochs.last() {
                Some(prev) => prev.smoothed_loss + self.config.smoothing * (mean - prev.smoothed_loss),
                None => mean,
            };
            self.log.epochs.push(EpochRecord {
                epoch,
                examples: examples.len(),
                batches: losses.len(),
                mean_loss: mean,
                batch_loss_std: std,
                smoothed_loss: smoothed,
            });
        }
        Ok(())
    }

    fn apply(&mut self, model: &mut DiffNetModel<T>, grads: &[ArrayD<T>]) {
        let lr = T::from_f64_lossy(self.config.learning_rate);
        let params = model.trainable_mut();
        match self.config.optimizer {
            Optimizer::Sgd => {
                for (mut p, g) in params.into_iter().zip(grads) {
                    p.zip_mut_with(g, |w, &gi| *w = *w - lr * gi);
                }
            }
            Optimizer::Adam => {
                let (b1, b2, eps) = (T::lit(0.9), T::lit(0.999), T::lit(1e-8));
                self.state.step += 1;
                let t = self.state.step as i32;
                let c1 = T::one() - b1.powi(t);
                let c2 = T::one() - b2.powi(t);
                for (((mut p, g), m), v) in params
                    .into_iter()
                    .zip(grads)
                    .zip(self.state.m.iter_mut())
                    .zip(self.state.v.iter_mut())
                {
                    ndarray::Zip::from(&mut p)
                        .and(g)
                        .and(m)
                        .and(v)
                        .for_each(|w, &gi, mi, vi| {
                            *mi = b1 * *mi + (T::one() - b1) * gi;
                            *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                            let mhat = *mi / c1;
                            let vhat = *vi / c2;
                            *w = *w - lr * mhat / (vhat.sqrt() + eps);
                        });
                }
            }
        }
    }
}

/// Trains for `model.config.train.epochs` epochs from a fresh optimizer.
pub fn train<T: Scalar, S: ExampleSource<T> + ?Sized>(
    model: &mut DiffNetModel<T>,
    source: &S,
) -> Result<TrainingLog, DiffNetError> {
    let mut trainer = Trainer::new(model);
    let epochs = model.config.train.epochs;
    trainer.run(model, source, epochs)?;
    Ok(trainer.log)
}
