use vtad::corpus::fixture::random_toy_corpus;
use vtad::corpus::{default_vocabulary, Gender};
use vtad::diffnet::{load_model_with_state, prepare_task, save_model_with_state, training_tasks, DiffNetConfig, Trainer};
use vtad::encoders::{embed_corpus, SpeakerEncoder, SyntheticCorpus, SyntheticCorpusConfig, UtteranceRef};
use vtad::protocol::{build_split, SplitConfig};

#[test]
fn resumed_training_continues_the_same_trajectory() {
    let vocab = default_vocabulary();
    let corpus = SyntheticCorpus::generate(
        &SyntheticCorpusConfig {
            speakers_per_gender: 12,
            utterances_per_speaker: 12,
            dim: 24,
            pair_density: 1.0,
            ..Default::default()
        },
        &vocab,
    )
    .unwrap();
    let enc = corpus.encoder::<f64>();
    let refs: Vec<UtteranceRef> = corpus
        .annotations
        .speakers()
        .all_utterances()
        .map(|u| UtteranceRef::id_only(u.clone()))
        .collect();
    let emb = embed_corpus(&enc, &refs, None).unwrap();
    let split = build_split(
        &corpus.annotations,
        &SplitConfig {
            train_speakers: [(Gender::Male, 8), (Gender::Female, 8)].into(),
            eval_utterances_per_speaker: 4,
            eval_descriptors: [(Gender::Female, ["thin".into()].into())].into(),
            ..Default::default()
        },
    )
    .unwrap();
    let mut config = DiffNetConfig {
        hidden_layers: vec![16],
        ..Default::default()
    };
    config.train.batch_size = 32;
    let task = &training_tasks(&split, &vocab, config.heads)[0];

    let (mut straight, sampler) = prepare_task(task, &split, &emb, &enc.encoder_id(), &config).unwrap();
    let mut t = Trainer::new(&straight);
    t.run(&mut straight, &sampler, 4).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vtadnet");
    let (mut first, _) = prepare_task(task, &split, &emb, &enc.encoder_id(), &config).unwrap();
    let mut t1 = Trainer::new(&first);
    t1.run(&mut first, &sampler, 2).unwrap();
    save_model_with_state(&first, Some(&t1), &path).unwrap();
    let (mut resumed, state) = load_model_with_state::<f64>(&path).unwrap();
    let mut t2 = state.unwrap();
    t2.run(&mut resumed, &sampler, 2).unwrap();

    assert_eq!(resumed, straight);
    assert_eq!(t2.log, t.log);
    // the first resumed epoch picks up where the saved one left off
    let e = &t2.log.epochs;
    assert!((e[2].mean_loss - e[1].mean_loss).abs() <= 3.0 * e[1].batch_loss_std.max(e[2].batch_loss_std));
}

#[test]
fn single_precision_models_train_and_stay_finite() {
    let vocab = default_vocabulary();
    let set = random_toy_corpus(9, 10, 12, 0.9);
    let split = build_split(
        &set,
        &SplitConfig {
            train_speakers: [(Gender::Male, 7), (Gender::Female, 7)].into(),
            eval_utterances_per_speaker: 4,
            eval_descriptors: Default::default(),
            ..Default::default()
        },
    )
    .unwrap();
    let mut rng_state = 0x2545_f491_4f6c_dd1du64;
    let mut next = || {
        rng_state ^= rng_state << 13;
        rng_state ^= rng_state >> 7;
        rng_state ^= rng_state << 17;
        (rng_state >> 40) as f32 / (1u64 << 24) as f32 - 0.5
    };
    let emb: std::collections::BTreeMap<_, Vec<f32>> = set
        .speakers()
        .all_utterances()
        .map(|u| (u.clone(), (0..8).map(|_| next()).collect()))
        .collect();
    let mut config = DiffNetConfig {
        hidden_layers: vec![8],
        ..Default::default()
    };
    config.train.epochs = 2;
    let (models, logs) = vtad::diffnet::train_for_split::<f32, _>(&split, &vocab, &emb, "toy", &config).unwrap();
    assert_eq!(models.models.len(), 2);
    assert!(logs.iter().all(|l| l.epochs.iter().all(|e| e.mean_loss.is_finite())));
}
