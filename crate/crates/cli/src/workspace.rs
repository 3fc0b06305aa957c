//! Artifact layout under the output directory, provenance manifests and the
//! helpers shared by several commands.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use vtad::corpus::{
    default_vocabulary, parse_annotations, parse_gender_map, parse_inventory, AnnotationSet, SpeakerInventory,
    UtteranceId,
};
use vtad::encoders::{
    CommandEncoder, LengthNormalized, PrecomputedEncoder, SpeakerEncoder, SyntheticCorpusConfig,
    SyntheticEncoder, SyntheticSpace, SyntheticSpeakerProfile, UtteranceRef,
};
use vtad::rng::sha256_hex;
use vtad::Real;

use crate::config::{short, RunConfig, ENCODER_ROOT_ENV};

pub const SYNTHETIC_META: &str = "synthetic.json";

/// Provenance written next to each stage's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config: String,
    pub stage_config: String,
    pub seed: u64,
    /// Digests of the inputs this stage consumed, by name.
    pub inputs: BTreeMap<String, String>,
    /// Digest of this stage's main output.
    pub output: String,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        write_file(path, serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading {} (run the earlier stage first)", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Refuses to proceed on a provenance mismatch unless `force` is set.
pub fn check_match(what: &str, expected: &str, found: &str, force: bool) -> Result<()> {
    if expected == found {
        return Ok(());
    }
    if force {
        log::warn!("{what} mismatch ({expected} vs {found}); continuing because of --force");
        Ok(())
    } else {
        bail!("{what} mismatch: expected {expected}, found {found} (use --force to override)")
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn digest_of(parts: &[&[u8]]) -> String {
    let mut buf = Vec::new();
    for p in parts {
        buf.extend_from_slice(&(p.len() as u64).to_le_bytes());
        buf.extend_from_slice(p);
    }
    short(&sha256_hex(&buf))
}

pub struct Layout {
    pub out: PathBuf,
}

impl Layout {
    pub fn new(cfg: &RunConfig) -> Self {
        Self {
            out: cfg.out_dir().to_path_buf(),
        }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.out.join("corpus")
    }
    pub fn protocol_dir(&self) -> PathBuf {
        self.out.join("protocol")
    }
    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }
    pub fn key_file(&self) -> PathBuf {
        self.protocol_dir().join("trials.key.tsv")
    }
    pub fn participant_file(&self) -> PathBuf {
        self.protocol_dir().join("trials.participant.tsv")
    }
    pub fn split_file(&self) -> PathBuf {
        self.protocol_dir().join("split.json")
    }
    pub fn submission_file(&self) -> PathBuf {
        self.out.join("submission.tsv")
    }
}

/// The ingested corpus as written by `vtad ingest`.
pub struct IngestedCorpus {
    pub annotations: AnnotationSet,
    pub digest: String,
}

pub fn corpus_digest(annotations: &str, inventory: &str) -> String {
    digest_of(&[annotations.as_bytes(), inventory.as_bytes()])
}

pub fn load_ingested(layout: &Layout, force: bool) -> Result<IngestedCorpus> {
    let dir = layout.corpus_dir();
    let manifest = Manifest::read(&dir.join("manifest.json"))?;
    let ann = read_text(&dir.join("annotations.tsv"))?;
    let inv = read_text(&dir.join("inventory.tsv"))?;
    let digest = corpus_digest(&ann, &inv);
    check_match("ingested corpus digest", &manifest.output, &digest, force)?;
    let inventory = parse_inventory(&inv).context("ingested inventory")?;
    let annotations = parse_annotations(&ann, &default_vocabulary(), &inventory).context("ingested annotations")?;
    Ok(IngestedCorpus { annotations, digest })
}

/// Reads the inventory file under the corpus root, or scans the root when
/// there is none.
pub fn read_inventory(cfg: &RunConfig) -> Result<SpeakerInventory> {
    let root = cfg.corpus_root()?;
    let file = root.join(&cfg.paths.inventory);
    if file.is_file() {
        return Ok(parse_inventory(&read_text(&file)?)?);
    }
    let map_file = root.join(&cfg.paths.gender_map);
    if !map_file.is_file() {
        bail!(
            "neither an inventory ({}) nor a gender map ({}) exists",
            file.display(),
            map_file.display()
        );
    }
    let genders = parse_gender_map(&read_text(&map_file)?)?;
    let exts: Vec<&str> = cfg.paths.audio_extensions.iter().map(String::as_str).collect();
    Ok(SpeakerInventory::scan_directory(root, &genders, &exts)?)
}

/// Utterance references with audio attached when a file can be found:
/// the path recorded by a directory scan, else `<root>/<speaker>/<id>.<ext>`.
pub fn utterance_refs<'a>(
    cfg: &RunConfig,
    inventory: &SpeakerInventory,
    ids: impl IntoIterator<Item = &'a UtteranceId>,
) -> Vec<UtteranceRef> {
    let root = cfg.paths.corpus_root.as_deref();
    ids.into_iter()
        .map(|u| {
            if let Some(p) = inventory.audio_path(u) {
                return UtteranceRef::with_path(u.clone(), p);
            }
            let found = root.zip(inventory.speaker_of(u)).and_then(|(r, s)| {
                cfg.paths
                    .audio_extensions
                    .iter()
                    .map(|e| r.join(s.as_str()).join(format!("{u}.{e}")))
                    .find(|p| p.is_file())
            });
            match found {
                Some(p) => UtteranceRef::with_path(u.clone(), p),
                None => UtteranceRef::id_only(u.clone()),
            }
        })
        .collect()
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SyntheticMeta {
    pub config: SyntheticCorpusConfig,
    pub profiles: Vec<SyntheticSpeakerProfile>,
}

#[cfg(unix)]
fn is_executable(path: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    fs::metadata(path).map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0).unwrap_or(false)
}

#[cfg(not(unix))]
fn is_executable(path: &Path) -> bool {
    path.extension().is_some_and(|e| e == "exe" || e == "bat" || e == "cmd")
}

fn resolve_encoder_path(name: &str) -> Result<PathBuf> {
    let direct = PathBuf::from(name);
    if direct.exists() {
        return Ok(direct);
    }
    let Some(root) = std::env::var_os(ENCODER_ROOT_ENV) else {
        bail!("EncoderLoadFailure: `{name}` is not a file and {ENCODER_ROOT_ENV} is not set");
    };
    let root = PathBuf::from(root);
    ["", ".emb", ".tsv", ".txt"]
        .iter()
        .map(|ext| root.join(format!("{name}{ext}")))
        .find(|p| p.exists())
        .with_context(|| format!("EncoderLoadFailure: no encoder `{name}` under {}", root.display()))
}

/// Builds the configured encoder. Programs run per utterance; other files are
/// read as precomputed embeddings.
pub fn build_encoder(cfg: &RunConfig, inventory: &SpeakerInventory) -> Result<Box<dyn SpeakerEncoder<Real>>> {
    let name = cfg.encoder.name.as_str();
    let inner: Box<dyn SpeakerEncoder<Real>> = if name == "synthetic" {
        let path = cfg.corpus_root()?.join(SYNTHETIC_META);
        let meta: SyntheticMeta = serde_json::from_str(&read_text(&path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        let space = SyntheticSpace::new(&default_vocabulary(), meta.config.dim, meta.config.seed)?;
        Box::new(SyntheticEncoder::<Real>::new(space, meta.profiles, inventory, meta.config.noise_scale)?)
    } else {
        let path = resolve_encoder_path(name)?;
        if is_executable(&path) {
            Box::new(CommandEncoder::new(path, cfg.encoder.args.clone())?)
        } else {
            Box::new(PrecomputedEncoder::<Real>::load(&path)?)
        }
    };
    Ok(if cfg.encoder.l2_normalize {
        Box::new(LengthNormalized(inner))
    } else {
        inner
    })
}
