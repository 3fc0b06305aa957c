use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use clap::Args;
use vtad::corpus::{
    default_vocabulary, descriptor_distribution, parse_annotations, write_annotations, write_inventory,
    UtteranceId,
};
use vtad::diffnet::{
    load_model, load_model_with_state, prepare_task, save_model_with_state, training_tasks, DiffNetModel,
    ModelSet, Trainer, TrainingLog,
};
use vtad::encoders::{embed_corpus, CorpusEmbeddings, EmbeddingCache, SyntheticCorpus, SyntheticCorpusConfig};
use vtad::protocol::{
    audit_trials, build_split, generate_trials, parse_trial_key, parse_trial_refs, write_participant_trials,
    write_trial_key, SplitPlan, TrialRef,
};
use vtad::scoring::{
    parse_submission, score_against_key, validate_against_ids, ScoreOptions, ScoringError, SubmissionFile,
};
use vtad::Real;

use crate::config::RunConfig;
use crate::workspace::{
    build_encoder, check_match, corpus_digest, digest_of, load_ingested, read_inventory, read_text,
    utterance_refs, write_file, Layout, Manifest, SyntheticMeta, SYNTHETIC_META,
};
use crate::Invalid;

pub struct Context {
    pub cfg: RunConfig,
    pub force: bool,
}

impl Context {
    fn layout(&self) -> Layout {
        Layout::new(&self.cfg)
    }

    fn seed(&self) -> u64 {
        self.cfg.seed.unwrap_or(self.cfg.protocol.seed)
    }

    /// Writes and logs the fully resolved configuration for this command.
    pub fn record_effective(&self, command: &str) -> Result<()> {
        let text = self.cfg.to_toml();
        log::debug!("effective configuration:\n{text}");
        log::info!("{command}: config digest {}", self.cfg.digest());
        let path = self.cfg.out_dir().join("effective").join(format!("{command}.toml"));
        write_file(&path, text)
    }

    fn manifest(&self, stage: &str, stage_config: String) -> Manifest {
        Manifest {
            stage: stage.into(),
            config: self.cfg.digest(),
            stage_config,
            seed: self.seed(),
            inputs: BTreeMap::new(),
            output: String::new(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Destination directory; defaults to the corpus root.
    #[arg(long)]
    pub dest: Option<PathBuf>,
    /// TOML file with synthetic corpus parameters.
    #[arg(long)]
    pub params: Option<PathBuf>,
    #[arg(long)]
    pub speakers_per_gender: Option<usize>,
    #[arg(long)]
    pub utterances_per_speaker: Option<usize>,
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let mut params: SyntheticCorpusConfig = match &args.params {
        Some(p) => toml::from_str(&read_text(p)?).with_context(|| format!("parsing {}", p.display()))?,
        None => SyntheticCorpusConfig::default(),
    };
    if let Some(s) = ctx.cfg.seed {
        params.seed = s;
    }
    if let Some(n) = args.speakers_per_gender {
        params.speakers_per_gender = n;
    }
    if let Some(n) = args.utterances_per_speaker {
        params.utterances_per_speaker = n;
    }
    let dest = match &args.dest {
        Some(d) => d.clone(),
        None => ctx.cfg.corpus_root()?.to_path_buf(),
    };
    let corpus = SyntheticCorpus::generate(&params, &default_vocabulary())?;
    let mut inv = Vec::new();
    write_inventory(corpus.annotations.speakers(), &mut inv)?;
    let mut ann = Vec::new();
    write_annotations(&corpus.annotations, &mut ann)?;
    let mut genders = String::new();
    for p in &corpus.profiles {
        genders.push_str(&format!("{}\t{}\n", p.speaker_id, p.gender));
    }
    let meta = SyntheticMeta {
        config: params,
        profiles: corpus.profiles.clone(),
    };
    write_file(&dest.join(&ctx.cfg.paths.inventory), inv)?;
    write_file(&dest.join(&ctx.cfg.paths.annotations), ann)?;
    write_file(&dest.join(&ctx.cfg.paths.gender_map), genders)?;
    write_file(&dest.join(SYNTHETIC_META), serde_json::to_string_pretty(&meta)? + "\n")?;
    println!(
        "synthetic corpus: {} speakers, {} utterances, {} annotated pairs -> {}",
        corpus.annotations.speakers().len(),
        corpus.annotations.speakers().utterance_count(),
        corpus.annotations.pairs().len(),
        dest.display()
    );
    Ok(())
}

pub fn ingest(ctx: &Context) -> Result<()> {
    let root = ctx.cfg.corpus_root()?;
    let inventory = read_inventory(&ctx.cfg)?;
    let ann_path = root.join(&ctx.cfg.paths.annotations);
    let ann_text = read_text(&ann_path)?;
    let annotations = parse_annotations(&ann_text, &default_vocabulary(), &inventory)
        .with_context(|| format!("validating {}", ann_path.display()))?;

    let mut inv_out = Vec::new();
    write_inventory(annotations.speakers(), &mut inv_out)?;
    let mut ann_out = Vec::new();
    write_annotations(&annotations, &mut ann_out)?;
    let inv_out = String::from_utf8(inv_out)?;
    let ann_out = String::from_utf8(ann_out)?;

    let layout = ctx.layout();
    let dir = layout.corpus_dir();
    write_file(&dir.join("inventory.tsv"), &inv_out)?;
    write_file(&dir.join("annotations.tsv"), &ann_out)?;
    let mut manifest = ctx.manifest("ingest", String::new());
    manifest.inputs.insert("annotations".into(), digest_of(&[ann_text.as_bytes()]));
    manifest.output = corpus_digest(&ann_out, &inv_out);
    manifest.write(&dir.join("manifest.json"))?;

    println!(
        "ingested {} speakers, {} utterances, {} ordered pairs, {} descriptor mentions (corpus {})",
        annotations.speakers().len(),
        annotations.speakers().utterance_count(),
        annotations.pairs().len(),
        annotations.mention_count(),
        manifest.output
    );
    for (d, share) in descriptor_distribution(&annotations)? {
        log::info!("  {d:<12} {share:6.2}%");
    }
    Ok(())
}

pub fn protocol(ctx: &Context) -> Result<()> {
    let layout = ctx.layout();
    let corpus = load_ingested(&layout, ctx.force)?;
    let split = build_split(&corpus.annotations, &ctx.cfg.protocol)?;
    let mut trials = generate_trials(&split, &corpus.annotations, ctx.cfg.protocol.seed)?;
    trials.extra.insert("config".into(), ctx.cfg.protocol_digest());
    let audit = audit_trials(&trials, &split);
    if !audit.is_empty() {
        return Err(Invalid(format!("generated trials failed the audit:\n{audit}")).into());
    }

    let mut key = Vec::new();
    write_trial_key(&trials, &mut key)?;
    let mut participant = Vec::new();
    write_participant_trials(&trials, &mut participant)?;
    write_file(&layout.split_file(), serde_json::to_string_pretty(&split)? + "\n")?;
    write_file(&layout.key_file(), &key)?;
    write_file(&layout.participant_file(), &participant)?;

    let mut manifest = ctx.manifest("protocol", ctx.cfg.protocol_digest());
    manifest.inputs.insert("corpus".into(), corpus.digest);
    manifest.inputs.insert("split".into(), split.digest());
    manifest.output = digest_of(&[&key]);
    manifest.write(&layout.protocol_dir().join("manifest.json"))?;

    let positives = trials.items.iter().filter(|t| t.label).count();
    println!(
        "{} track: {} train pairs, {} eval pairs, {} trials ({} positive) in {} cells",
        split.track,
        split.train_pairs.len(),
        split.eval_pairs.len(),
        trials.items.len(),
        positives,
        split.eval_cells().len()
    );
    Ok(())
}

/// Loads the split, refusing one produced under a different protocol
/// configuration or from a different corpus.
fn load_split(ctx: &Context, layout: &Layout) -> Result<(SplitPlan, Manifest, vtad::corpus::AnnotationSet)> {
    let corpus = load_ingested(layout, ctx.force)?;
    let manifest = Manifest::read(&layout.protocol_dir().join("manifest.json"))?;
    check_match(
        "protocol configuration",
        &ctx.cfg.protocol_digest(),
        &manifest.stage_config,
        ctx.force,
    )?;
    let recorded = manifest.inputs.get("corpus").map(String::as_str).unwrap_or("");
    check_match("corpus digest", &corpus.digest, recorded, ctx.force)?;
    let split: SplitPlan = serde_json::from_str(&read_text(&layout.split_file())?).context("parsing split.json")?;
    Ok((split, manifest, corpus.annotations))
}

fn embed(
    ctx: &Context,
    inventory: &vtad::corpus::SpeakerInventory,
    ids: &BTreeSet<&UtteranceId>,
) -> Result<CorpusEmbeddings<Real>> {
    let encoder = build_encoder(&ctx.cfg, inventory)?;
    let refs = utterance_refs(&ctx.cfg, inventory, ids.iter().copied());
    let cache = EmbeddingCache::open(ctx.cfg.cache_dir())?;
    let emb = embed_corpus(&*encoder, &refs, Some(&cache))?;
    log::info!(
        "encoder {}: {} embeddings ({} cached, {} computed)",
        emb.encoder_id,
        emb.embeddings.len(),
        emb.cache_hits,
        emb.encoder_calls
    );
    if !emb.is_complete() {
        let shown: Vec<String> = emb.failures.iter().take(5).map(|(u, e)| format!("  {u}: {e}")).collect();
        bail!(
            "{} utterances could not be embedded:\n{}",
            emb.failures.len(),
            shown.join("\n")
        );
    }
    Ok(emb)
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Total epochs per model (overrides the configuration).
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from saved models and optimizer state.
    #[arg(long)]
    pub resume: bool,
}

fn model_tag(model_gender: Option<vtad::corpus::Gender>) -> &'static str {
    model_gender.map(|g| g.as_str()).unwrap_or("joint")
}

pub fn train(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let mut config = ctx.cfg.model.clone();
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    let layout = ctx.layout();
    let (split, proto, annotations) = load_split(ctx, &layout)?;
    let ids: BTreeSet<&UtteranceId> = split.train_utterances.values().flatten().collect();
    let emb = embed(ctx, annotations.speakers(), &ids)?;

    let dir = layout.models_dir();
    fs::create_dir_all(&dir)?;
    let mut logs: BTreeMap<String, TrainingLog> = BTreeMap::new();
    let mut model_digests = Vec::new();
    for task in training_tasks(&split, annotations.vocabulary(), config.heads) {
        let tag = model_tag(task.gender);
        let path = dir.join(format!("{tag}.vtadnet"));
        let (fresh, sampler) = prepare_task(&task, &split, &emb, &emb.encoder_id, &config)?;
        let (mut model, mut trainer) = if args.resume && path.exists() {
            let (saved, state) = load_model_with_state::<Real>(&path)?;
            let mut expected = fresh.config.clone();
            expected.train.epochs = saved.config.train.epochs;
            if saved.config != expected || saved.encoder_id != fresh.encoder_id || saved.nodes != fresh.nodes {
                check_match(&format!("{tag} model configuration"), "current", "saved", ctx.force)?;
            }
            let trainer = state.with_context(|| format!("{} has no optimizer state to resume", path.display()))?;
            (saved, trainer)
        } else {
            let trainer = Trainer::new(&fresh);
            (fresh, trainer)
        };
        let remaining = config.train.epochs.saturating_sub(trainer.epochs_done());
        log::info!("{tag}: {} epochs done, {remaining} to go", trainer.epochs_done());
        model.config.train.epochs = config.train.epochs;
        trainer.config.epochs = config.train.epochs;
        trainer.run(&mut model, &sampler, remaining)?;
        model.meta.insert("config".into(), ctx.cfg.digest());
        model.meta.insert("split".into(), split.digest());
        save_model_with_state(&model, Some(&trainer), &path)?;
        model_digests.push(fs::read(&path)?);
        if let Some(loss) = trainer.log.final_loss() {
            println!("{tag}: {} epochs, final loss {loss:.5}", trainer.epochs_done());
        }
        logs.insert(tag.to_string(), trainer.log);
    }
    write_file(&dir.join("train_log.json"), serde_json::to_string_pretty(&logs)? + "\n")?;

    let mut manifest = ctx.manifest("train", ctx.cfg.model_digest());
    manifest.inputs.insert("protocol".into(), proto.output);
    manifest.inputs.insert("encoder".into(), emb.encoder_id.clone());
    let parts: Vec<&[u8]> = model_digests.iter().map(Vec::as_slice).collect();
    manifest.output = digest_of(&parts);
    manifest.write(&dir.join("manifest.json"))?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Participant (or key) trial file; defaults to the generated one.
    #[arg(long)]
    pub trials: Option<PathBuf>,
    /// Submission path; defaults to `<out>/submission.tsv`.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Directory holding `*.vtadnet` models; defaults to `<out>/models`.
    #[arg(long)]
    pub models: Option<PathBuf>,
}

pub fn infer(ctx: &Context, args: &InferArgs) -> Result<()> {
    let layout = ctx.layout();
    let trials_path = args.trials.clone().unwrap_or_else(|| layout.participant_file());
    let (trials, meta) = parse_trial_refs(&read_text(&trials_path)?)
        .with_context(|| format!("parsing {}", trials_path.display()))?;
    let models_dir = args.models.clone().unwrap_or_else(|| layout.models_dir());
    let mut paths: Vec<PathBuf> = fs::read_dir(&models_dir)
        .with_context(|| format!("reading {}", models_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vtadnet"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no models in {}", models_dir.display());
    }
    let models: Vec<DiffNetModel<Real>> = paths.iter().map(|p| load_model(p)).collect::<Result<_, _>>()?;
    if let Some(split) = meta.get("split") {
        for m in &models {
            if let Some(trained_on) = m.meta.get("split") {
                check_match("split the models were trained on", split, trained_on, ctx.force)?;
            }
        }
    }

    let inventory = match load_ingested(&layout, ctx.force) {
        Ok(c) => c.annotations.speakers().clone(),
        Err(_) => read_inventory(&ctx.cfg)?,
    };
    let ids: BTreeSet<&UtteranceId> = trials
        .iter()
        .flat_map(|t: &TrialRef| [&t.utterance_first, &t.utterance_second])
        .collect();
    let emb = embed(ctx, &inventory, &ids)?;
    let set = ModelSet::new(models);
    let preds = set.predict_trials(&trials, &emb, Some(&inventory))?;

    let track = match meta.get("track") {
        Some(t) => t.parse()?,
        None => ctx.cfg.protocol.track,
    };
    let mut sub =
        SubmissionFile::from_predictions(&preds, &ctx.cfg.submission.team, track, &ctx.cfg.submission.system);
    sub.extra.insert("config".into(), ctx.cfg.digest());
    sub.extra.insert("encoder".into(), emb.encoder_id.clone());
    let mut out = Vec::new();
    sub.write(&mut out)?;
    let path = args.output.clone().unwrap_or_else(|| layout.submission_file());
    write_file(&path, out)?;
    let accepted = preds.iter().filter(|p| p.decision).count();
    println!(
        "scored {} trials with {} model(s); {accepted} accepted -> {}",
        preds.len(),
        set.models.len(),
        path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    /// Submission to score; defaults to `<out>/submission.tsv`.
    #[arg(long)]
    pub submission: Option<PathBuf>,
    /// Labelled trial key; defaults to the generated one.
    #[arg(long)]
    pub key: Option<PathBuf>,
    /// Also report one EER over all trials pooled.
    #[arg(long)]
    pub pooled: bool,
}

pub fn score(ctx: &Context, args: &ScoreArgs) -> Result<()> {
    let layout = ctx.layout();
    let sub_path = args.submission.clone().unwrap_or_else(|| layout.submission_file());
    let key_path = args.key.clone().unwrap_or_else(|| layout.key_file());
    let sub = parse_submission(&read_text(&sub_path)?)?;
    let key = parse_trial_key(&read_text(&key_path)?).with_context(|| format!("parsing {}", key_path.display()))?;
    let report = match score_against_key(&sub, &key, ScoreOptions { pooled_eer: args.pooled }) {
        Ok(r) => r,
        Err(ScoringError::InvalidSubmission(issues)) => {
            return Err(Invalid(format!("{} is not a valid submission:\n{issues}", sub_path.display())).into())
        }
        Err(e) => return Err(e.into()),
    };
    let text = report.to_text();
    write_file(&layout.out.join("report.txt"), &text)?;
    let mut kv = format!("config={}\n", ctx.cfg.digest());
    if let Some(c) = sub.extra.get("config") {
        kv.push_str(&format!("submission.config={c}\n"));
    }
    kv.push_str(&report.to_key_values());
    write_file(&layout.out.join("report.kv"), kv)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub submission: PathBuf,
    /// Participant or key trial file; defaults to the generated one.
    #[arg(long)]
    pub trials: Option<PathBuf>,
}

pub fn validate(ctx: &Context, args: &ValidateArgs) -> Result<()> {
    let trials_path = args.trials.clone().unwrap_or_else(|| ctx.layout().participant_file());
    let (refs, meta) = parse_trial_refs(&read_text(&trials_path)?)?;
    let sub = parse_submission(&read_text(&args.submission)?)?;
    let track = meta.get("track").map(|t| t.parse()).transpose()?;
    let ids: Vec<&str> = refs.iter().map(|t| t.trial_id.as_str()).collect();
    let report = validate_against_ids(&sub, &ids, track);
    if report.is_empty() {
        println!("{}: valid ({} trials)", args.submission.display(), sub.entries.len());
        Ok(())
    } else {
        Err(Invalid(format!("{} issue(s):\n{report}", report.len())).into())
    }
}
