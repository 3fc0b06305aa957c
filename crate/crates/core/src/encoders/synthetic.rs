use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Embedding, EncoderError, SpeakerEncoder, UtteranceRef};
use crate::corpus::{
    AnnotationSet, Descriptor, DescriptorVocabulary, Gender, OrderedPairAnnotation, SpeakerId,
    SpeakerInventory, SpeakerRecord, UtteranceId,
};
use crate::rng::{named_rng, sha256_hex};
use crate::Scalar;

/// A seeded orthonormal basis of R^d. The first |V| columns are the
/// descriptor directions; the rest span the speaker-identity subspace.
#[derive(Debug, Clone)]
pub struct SyntheticSpace {
    descriptors: Vec<Descriptor>,
    dim: usize,
    seed: u64,
    basis: Vec<Vec<f64>>,
}

impl SyntheticSpace {
    pub fn new(vocabulary: &DescriptorVocabulary, dim: usize, seed: u64) -> Result<Self, EncoderError> {
        let descriptors = vocabulary.names();
        if dim <= descriptors.len() {
            return Err(EncoderError::EncoderLoadFailure(format!(
                "synthetic dimension {dim} leaves no room beyond {} descriptor directions",
                descriptors.len()
            )));
        }
        let mut rng = named_rng(seed, &["synthetic", "basis", &dim.to_string()]);
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(dim);
        while basis.len() < dim {
            let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            // two passes of modified Gram-Schmidt keep the basis orthogonal to ~1e-15
            for _ in 0..2 {
                for q in &basis {
                    let p = dot(&v, q);
                    v.iter_mut().zip(q).for_each(|(x, y)| *x -= p * y);
                }
            }
            let n = dot(&v, &v).sqrt();
            if n < 1e-8 {
                continue;
            }
            v.iter_mut().for_each(|x| *x /= n);
            basis.push(v);
        }
        Ok(Self {
            descriptors,
            dim,
            seed,
            basis,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn direction(&self, descriptor: &Descriptor) -> Option<&[f64]> {
        let i = self.descriptors.iter().position(|d| d == descriptor)?;
        Some(&self.basis[i])
    }

    /// Unit vector in the identity subspace, scaled by `base_scale`.
    pub fn base_vector(&self, profile: &SyntheticSpeakerProfile) -> Vec<f64> {
        let mut rng = named_rng(profile.base_seed, &["synthetic", "base"]);
        let mut v = vec![0.0; self.dim];
        for q in &self.basis[self.descriptors.len()..] {
            let g: f64 = StandardNormal.sample(&mut rng);
            v.iter_mut().zip(q).for_each(|(x, y)| *x += g * y);
        }
        let n = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x *= profile.base_scale / n);
        v
    }

    /// Base vector plus intensity-weighted directions plus per-utterance
    /// Gaussian noise; deterministic in all arguments.
    pub fn embed(&self, profile: &SyntheticSpeakerProfile, utterance_index: usize, noise_scale: f64) -> Vec<f64> {
        assert!(noise_scale >= 0.0, "noise_scale must be non-negative");
        let mut v = self.base_vector(profile);
        for (d, &intensity) in &profile.attribute_intensities {
            if let Some(dir) = self.direction(d) {
                v.iter_mut().zip(dir).for_each(|(x, y)| *x += intensity * y);
            }
        }
        if noise_scale > 0.0 {
            let mut rng = named_rng(
                self.seed,
                &["synthetic", "noise", profile.speaker_id.as_str(), &utterance_index.to_string()],
            );
            for x in &mut v {
                let g: f64 = StandardNormal.sample(&mut rng);
                *x += noise_scale * g;
            }
        }
        v
    }

    fn checksum_material(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        for d in &self.descriptors {
            out.extend_from_slice(d.as_str().as_bytes());
            out.push(0);
        }
        for q in &self.basis {
            for x in q {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerProfile {
    pub speaker_id: SpeakerId,
    pub gender: Gender,
    pub attribute_intensities: BTreeMap<Descriptor, f64>,
    pub base_seed: u64,
    #[serde(default = "one")]
    pub base_scale: f64,
}

fn one() -> f64 {
    1.0
}

/// Encoder over a fixed set of synthetic speakers. Utterance `k` of a
/// speaker (by position in the inventory) maps to `utterance_index = k`.
#[derive(Debug, Clone)]
pub struct SyntheticEncoder<T> {
    space: SyntheticSpace,
    profiles: BTreeMap<SpeakerId, SyntheticSpeakerProfile>,
    utterances: BTreeMap<UtteranceId, (SpeakerId, usize)>,
    noise_scale: f64,
    checksum: String,
    _scalar: std::marker::PhantomData<T>,
}

impl<T: Scalar> SyntheticEncoder<T> {
    pub fn new(
        space: SyntheticSpace,
        profiles: Vec<SyntheticSpeakerProfile>,
        inventory: &SpeakerInventory,
        noise_scale: f64,
    ) -> Result<Self, EncoderError> {
        if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
            return Err(EncoderError::EncoderLoadFailure(format!(
                "noise_scale must be finite and non-negative, got {noise_scale}"
            )));
        }
        let profiles: BTreeMap<SpeakerId, SyntheticSpeakerProfile> = profiles
            .into_iter()
            .map(|p| (p.speaker_id.clone(), p))
            .collect();
        let mut utterances = BTreeMap::new();
        for rec in inventory.speakers() {
            if !profiles.contains_key(&rec.speaker_id) {
                continue;
            }
            for (k, u) in rec.utterance_ids.iter().enumerate() {
                utterances.insert(u.clone(), (rec.speaker_id.clone(), k));
            }
        }
        let mut material = Vec::new();
        space.checksum_material(&mut material);
        material.extend_from_slice(&noise_scale.to_le_bytes());
        material.extend_from_slice(
            serde_json::to_string(&profiles)
                .expect("profiles serialize")
                .as_bytes(),
        );
        for (u, (s, k)) in &utterances {
            material.extend_from_slice(format!("{u}\t{s}\t{k}\n").as_bytes());
        }
        Ok(Self {
            checksum: sha256_hex(&material),
            space,
            profiles,
            utterances,
            noise_scale,
            _scalar: std::marker::PhantomData,
        })
    }

    pub fn space(&self) -> &SyntheticSpace {
        &self.space
    }

    pub fn profile(&self, speaker: &SpeakerId) -> Option<&SyntheticSpeakerProfile> {
        self.profiles.get(speaker)
    }
}

impl<T: Scalar> SpeakerEncoder<T> for SyntheticEncoder<T> {
    fn encoder_id(&self) -> String {
        format!(
            "synthetic:d{}:noise{}:{}",
            self.space.dim,
            self.noise_scale,
            &self.checksum[..12]
        )
    }

    fn embed(&self, utterance: &UtteranceRef) -> Result<Embedding<T>, EncoderError> {
        let (speaker, k) = self
            .utterances
            .get(&utterance.id)
            .ok_or_else(|| EncoderError::UtteranceNotFound(utterance.id.clone()))?;
        let v = self.space.embed(&self.profiles[speaker], *k, self.noise_scale);
        Embedding::new(
            v.into_iter().map(T::from_f64_lossy).collect(),
            self.encoder_id(),
            utterance.id.clone(),
        )
    }

    fn parameter_checksum(&self) -> String {
        self.checksum.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticCorpusConfig {
    pub speakers_per_gender: usize,
    pub utterances_per_speaker: usize,
    pub dim: usize,
    pub noise_scale: f64,
    /// Minimum intensity gap for an annotated (pair, descriptor).
    pub margin: f64,
    /// Probability that an unordered same-gender speaker pair is annotated.
    pub pair_density: f64,
    /// Cap on annotated descriptors per unordered speaker pair.
    pub descriptors_per_pair: usize,
    /// Cap on descriptors per annotation row (at most 3).
    pub max_descriptors: usize,
    pub base_scale: f64,
    pub seed: u64,
}

impl Default for SyntheticCorpusConfig {
    fn default() -> Self {
        Self {
            speakers_per_gender: 50,
            utterances_per_speaker: 40,
            dim: 64,
            noise_scale: 0.05,
            margin: 0.3,
            pair_density: 0.5,
            descriptors_per_pair: usize::MAX,
            max_descriptors: 3,
            base_scale: 1.0,
            seed: 7,
        }
    }
}

/// Speakers with latent attribute intensities, annotations consistent with
/// them, and the space their embeddings live in.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub config: SyntheticCorpusConfig,
    pub profiles: Vec<SyntheticSpeakerProfile>,
    pub annotations: AnnotationSet,
    pub space: SyntheticSpace,
}

impl SyntheticCorpus {
    pub fn generate(
        config: &SyntheticCorpusConfig,
        vocabulary: &DescriptorVocabulary,
    ) -> Result<Self, EncoderError> {
        let space = SyntheticSpace::new(vocabulary, config.dim, config.seed)?;
        let max_desc = config.max_descriptors.clamp(1, 3);
        let mut rng = named_rng(config.seed, &["synthetic", "corpus"]);
        let mut profiles = Vec::new();
        let mut records = Vec::new();
        let mut pairs = Vec::new();
        for gender in Gender::ALL {
            let admissible = vocabulary.for_gender(gender);
            let prefix = &gender.as_str()[..1];
            let start = profiles.len();
            for i in 1..=config.speakers_per_gender {
                let speaker_id = SpeakerId::new(format!("s{prefix}{i:03}"));
                records.push(SpeakerRecord {
                    speaker_id: speaker_id.clone(),
                    gender,
                    utterance_ids: (1..=config.utterances_per_speaker)
                        .map(|u| UtteranceId::new(format!("{speaker_id}_{u:03}")))
                        .collect(),
                });
                profiles.push(SyntheticSpeakerProfile {
                    speaker_id,
                    gender,
                    attribute_intensities: admissible
                        .iter()
                        .map(|d| (d.clone(), rng.random::<f64>()))
                        .collect(),
                    base_seed: rng.random(),
                    base_scale: config.base_scale,
                });
            }
            let group = &profiles[start..];
            for i in 0..group.len() {
                for j in (i + 1)..group.len() {
                    if !rng.random_bool(config.pair_density.clamp(0.0, 1.0)) {
                        continue;
                    }
                    let mut chosen: Vec<(usize, usize, &Descriptor)> = Vec::new();
                    for d in &admissible {
                        let gap = group[j].attribute_intensities[d] - group[i].attribute_intensities[d];
                        if gap >= config.margin {
                            chosen.push((i, j, d));
                        } else if -gap >= config.margin {
                            chosen.push((j, i, d));
                        }
                    }
                    chosen.shuffle(&mut rng);
                    chosen.truncate(config.descriptors_per_pair);
                    for (w, s) in [(i, j), (j, i)] {
                        let mut ds: Vec<&Descriptor> =
                            chosen.iter().filter(|c| c.0 == w && c.1 == s).map(|c| c.2).collect();
                        while !ds.is_empty() {
                            let k = rng.random_range(1..=max_desc).min(ds.len());
                            pairs.push(OrderedPairAnnotation {
                                weaker: group[w].speaker_id.clone(),
                                stronger: group[s].speaker_id.clone(),
                                descriptors: ds.drain(..k).cloned().collect(),
                            });
                        }
                    }
                }
            }
        }
        let inventory = SpeakerInventory::new(records)
            .map_err(|e| EncoderError::EncoderLoadFailure(e.to_string()))?;
        let annotations = AnnotationSet::new(inventory, pairs, vocabulary.clone())
            .map_err(|e| EncoderError::EncoderLoadFailure(e.to_string()))?;
        Ok(Self {
            config: config.clone(),
            profiles,
            annotations,
            space,
        })
    }

    pub fn encoder<T: Scalar>(&self) -> SyntheticEncoder<T> {
        SyntheticEncoder::new(
            self.space.clone(),
            self.profiles.clone(),
            self.annotations.speakers(),
            self.config.noise_scale,
        )
        .expect("generated corpus is consistent")
    }
}
