//! Train and score the baseline on a synthetic corpus, in memory.
//!
//! ```text
//! cargo run --release -p vtad-core --example synthetic_pipeline -- [corpus seed] [epochs]
//! ```

use std::time::Instant;

use vtad::corpus::{default_vocabulary, Gender};
use vtad::diffnet::{train_for_split, DiffNetConfig};
use vtad::encoders::{embed_corpus, SpeakerEncoder, SyntheticCorpus, SyntheticCorpusConfig, UtteranceRef};
use vtad::protocol::{build_split, generate_trials, SplitConfig, TrialRef};
use vtad::scoring::{score_against_key, ScoreOptions, SubmissionFile};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let epochs = args.next().map(|s| s.parse()).transpose()?.unwrap_or(30);
    let started = Instant::now();

    let vocab = default_vocabulary();
    let corpus = SyntheticCorpus::generate(&SyntheticCorpusConfig { seed, ..Default::default() }, &vocab)?;
    let encoder = corpus.encoder::<f64>();
    let utterances: Vec<UtteranceRef> = corpus
        .annotations
        .speakers()
        .all_utterances()
        .map(|u| UtteranceRef::id_only(u.clone()))
        .collect();
    let embeddings = embed_corpus(&encoder, &utterances, None)?;

    // Same male/female training shares as the challenge split, over 50 speakers each.
    let protocol = SplitConfig {
        train_speakers: [(Gender::Male, 36), (Gender::Female, 40)].into(),
        ..Default::default()
    };
    let split = build_split(&corpus.annotations, &protocol)?;
    let trials = generate_trials(&split, &corpus.annotations, protocol.seed)?;
    println!(
        "{} annotated pairs, {} for training, {} trials",
        corpus.annotations.pairs().len(),
        split.train_pairs.len(),
        trials.items.len()
    );

    let mut config = DiffNetConfig::default();
    config.train.epochs = epochs;
    let (models, logs) = train_for_split(&split, &vocab, &embeddings, &encoder.encoder_id(), &config)?;
    for (model, log) in models.models.iter().zip(&logs) {
        let gender = model.gender.map(Gender::as_str).unwrap_or("joint");
        println!("{gender}: final loss {:.4}", log.final_loss().unwrap_or(f64::NAN));
    }

    let refs: Vec<TrialRef> = trials.items.iter().map(TrialRef::from).collect();
    let predictions = models.predict_trials(&refs, &embeddings, None)?;
    let submission = SubmissionFile::from_predictions(&predictions, "example", split.track, "diffnet");
    let report = score_against_key(&submission, &trials, ScoreOptions::default())?;
    print!("{}", report.to_text());
    println!("elapsed {:.1?}", started.elapsed());
    Ok(())
}
