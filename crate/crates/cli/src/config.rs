//! Run configuration: defaults, then the TOML file, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use vtad::diffnet::DiffNetConfig;
use vtad::protocol::{SplitConfig, Track};
use vtad::rng::sha256_hex;

pub const CORPUS_ROOT_ENV: &str = "VTAD_CORPUS_ROOT";
pub const ENCODER_ROOT_ENV: &str = "VTAD_ENCODER_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus directory; `$VTAD_CORPUS_ROOT` when unset.
    pub corpus_root: Option<PathBuf>,
    /// Relative to the corpus root.
    pub annotations: PathBuf,
    /// Inventory file relative to the corpus root. When it does not exist,
    /// the root is scanned as `<speaker>/<utterance file>` using `gender_map`.
    pub inventory: PathBuf,
    pub gender_map: PathBuf,
    pub audio_extensions: Vec<String>,
    /// Embedding cache; `<out_dir>/cache` when unset.
    pub cache_dir: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus_root: None,
            annotations: "annotations.tsv".into(),
            inventory: "inventory.tsv".into(),
            gender_map: "speakers.tsv".into(),
            audio_extensions: vec!["wav".into(), "flac".into()],
            cache_dir: None,
            out_dir: "vtad-out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// `synthetic`, a path to an embedding file or encoder program, or a
    /// name looked up under `$VTAD_ENCODER_ROOT`.
    pub name: String,
    /// Extra arguments for an encoder program.
    pub args: Vec<String>,
    pub l2_normalize: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            name: "synthetic".into(),
            args: Vec::new(),
            l2_normalize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmissionConfig {
    pub team: String,
    pub system: String,
}

impl Default for SubmissionConfig {
    fn default() -> Self {
        Self {
            team: "baseline".into(),
            system: "diffnet".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verbosity {
    Quiet,
    #[default]
    Normal,
    Verbose,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; when set it replaces the protocol and training seeds.
    pub seed: Option<u64>,
    pub verbosity: Verbosity,
    pub paths: Paths,
    pub protocol: SplitConfig,
    pub encoder: EncoderConfig,
    pub model: DiffNetConfig,
    pub submission: SubmissionConfig,
}

/// Values given on the command line; `None` leaves the file value alone.
#[derive(Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub encoder: Option<String>,
    pub track: Option<Track>,
    pub out: Option<PathBuf>,
    pub corpus_root: Option<PathBuf>,
    pub verbosity: Option<Verbosity>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        if cfg.paths.corpus_root.is_none() {
            cfg.paths.corpus_root = std::env::var_os(CORPUS_ROOT_ENV).map(PathBuf::from);
        }
        if let Some(s) = overrides.seed {
            cfg.seed = Some(s);
        }
        if let Some(e) = overrides.encoder {
            cfg.encoder.name = e;
        }
        if let Some(t) = overrides.track {
            cfg.protocol.track = t;
        }
        if let Some(o) = overrides.out {
            cfg.paths.out_dir = o;
        }
        if let Some(r) = overrides.corpus_root {
            cfg.paths.corpus_root = Some(r);
        }
        if let Some(v) = overrides.verbosity {
            cfg.verbosity = v;
        }
        if let Some(s) = cfg.seed {
            cfg.protocol.seed = s;
            cfg.model.train.seed = s;
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Digest of everything that influences results. Paths and verbosity
    /// are left out so the same run from another directory matches.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.paths = Paths::default();
        c.verbosity = Verbosity::Normal;
        short(&sha256_hex(c.to_toml().as_bytes()))
    }

    pub fn protocol_digest(&self) -> String {
        short(&sha256_hex(self.protocol.to_toml().as_bytes()))
    }

    pub fn model_digest(&self) -> String {
        short(&sha256_hex(
            serde_json::to_string(&self.model).expect("model config serializes").as_bytes(),
        ))
    }

    pub fn corpus_root(&self) -> Result<&Path> {
        self.paths.corpus_root.as_deref().with_context(|| {
            format!("no corpus root: pass --corpus-root, set paths.corpus_root, or export {CORPUS_ROOT_ENV}")
        })
    }

    pub fn out_dir(&self) -> &Path {
        &self.paths.out_dir
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.paths.cache_dir.clone().unwrap_or_else(|| self.paths.out_dir.join("cache"))
    }
}

pub fn short(digest: &str) -> String {
    digest[..16].to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(
            &path,
            "seed = 5\n[protocol]\ntrack = \"seen\"\n[model]\nhidden_layers = [32]\n[model.train]\nepochs = 4\n",
        )
        .unwrap();
        let cfg = RunConfig::load(Some(&path), Overrides::default()).unwrap();
        assert_eq!(cfg.protocol.track, Track::Seen);
        assert_eq!((cfg.protocol.seed, cfg.model.train.seed), (5, 5));
        assert_eq!(cfg.model.hidden_layers, vec![32]);
        assert_eq!(cfg.model.train.batch_size, 64);

        let cfg2 = RunConfig::load(
            Some(&path),
            Overrides {
                seed: Some(9),
                track: Some(Track::Unseen),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((cfg2.protocol.track, cfg2.model.train.seed), (Track::Unseen, 9));
        assert_ne!(cfg.digest(), cfg2.digest());
    }

    #[test]
    fn digest_ignores_paths() {
        let a = RunConfig::default();
        let mut b = RunConfig::default();
        b.paths.out_dir = "/elsewhere".into();
        assert_eq!(a.digest(), b.digest());
        let reparsed: RunConfig = toml::from_str(&a.to_toml()).unwrap();
        assert_eq!(reparsed, a);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("[model]\nwidth = 3\n").is_err());
    }
}
