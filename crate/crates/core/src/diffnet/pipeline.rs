use super::network::DiffNetModel;
use super::predict::{EmbeddingLookup, ModelSet};
use super::train::{PairSampler, Trainer, TrainingLog};
use super::{DiffNetConfig, DiffNetError, HeadLayout};
use crate::corpus::{Descriptor, DescriptorVocabulary, Gender, OrderedPairAnnotation};
use crate::protocol::SplitPlan;
use crate::rng::derive_seed;
use crate::Scalar;

/// One model to train: its gender binding, nodes and annotated pairs.
#[derive(Debug, Clone)]
pub struct TrainingTask {
    pub gender: Option<Gender>,
    pub nodes: Vec<Descriptor>,
    pub pairs: Vec<OrderedPairAnnotation>,
}

/// Splits the training pairs of a plan into per-gender tasks, or one joint
/// task, according to `layout`. Genders without training pairs are skipped.
pub fn training_tasks(split: &SplitPlan, vocabulary: &DescriptorVocabulary, layout: HeadLayout) -> Vec<TrainingTask> {
    match layout {
        HeadLayout::Joint => vec![TrainingTask {
            gender: None,
            nodes: vocabulary.names(),
            pairs: split.train_pairs.clone(),
        }],
        HeadLayout::PerGender => Gender::ALL
            .into_iter()
            .filter_map(|g| {
                let pairs: Vec<_> = split
                    .train_pairs
                    .iter()
                    .filter(|p| split.genders.get(&p.weaker) == Some(&g))
                    .cloned()
                    .collect();
                (!pairs.is_empty()).then(|| TrainingTask {
                    gender: Some(g),
                    nodes: vocabulary.for_gender(g),
                    pairs,
                })
            })
            .collect(),
    }
}

/// Builds a fresh model for `task` and its pair sampler, ready to train.
pub fn prepare_task<'a, T: Scalar, L: EmbeddingLookup<T> + ?Sized>(
    task: &TrainingTask,
    split: &'a SplitPlan,
    embeddings: &'a L,
    encoder_id: &str,
    config: &DiffNetConfig,
) -> Result<(DiffNetModel<T>, PairSampler<'a, T, L>), DiffNetError> {
    let dim = task
        .pairs
        .iter()
        .flat_map(|p| split.train_utterances.get(&p.weaker).into_iter().flatten())
        .find_map(|u| embeddings.lookup(u).map(<[T]>::len))
        .ok_or(DiffNetError::EmptyTrainingSet)?;
    let model = DiffNetModel::new(config.bound(dim, task.nodes.len()), encoder_id, task.nodes.clone(), task.gender)?;
    let tag = task.gender.map(Gender::as_str).unwrap_or("joint");
    let sampler = PairSampler::new(
        &task.nodes,
        &task.pairs,
        &split.train_utterances,
        embeddings,
        config.train.pairs_per_annotation,
        derive_seed(config.train.seed, &["sampler", tag]),
    )?;
    Ok((model, sampler))
}

/// Trains every task of the split for `config.train.epochs` epochs.
pub fn train_for_split<T: Scalar, L: EmbeddingLookup<T> + ?Sized>(
    split: &SplitPlan,
    vocabulary: &DescriptorVocabulary,
    embeddings: &L,
    encoder_id: &str,
    config: &DiffNetConfig,
) -> Result<(ModelSet<T>, Vec<TrainingLog>), DiffNetError> {
    let tasks = training_tasks(split, vocabulary, config.heads);
    if tasks.is_empty() {
        return Err(DiffNetError::EmptyTrainingSet);
    }
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for task in &tasks {
        let (mut model, sampler) = prepare_task(task, split, embeddings, encoder_id, config)?;
        let mut trainer = Trainer::new(&model);
        trainer.run(&mut model, &sampler, config.train.epochs)?;
        models.push(model);
        logs.push(trainer.log);
    }
    Ok((ModelSet::new(models), logs))
}
