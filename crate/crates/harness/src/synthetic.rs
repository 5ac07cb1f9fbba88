//! Seeded synthetic conversations standing in for real multimodal corpora.
//!
//! Each (class, modality) pair owns a fixed anchor drawn once; an
//! utterance's features are its class anchors plus Gaussian noise.
//! Emotions follow a sticky Markov chain: stay with probability
//! `stickiness`, otherwise redraw uniformly over all classes.
//!
//! Anchor entries have standard deviation `separation / dim`, so two class
//! anchors sit about `separation·√(2/dim)` apart in a `dim`-wide modality.

use dfgcn_core::conversation::{Conversation, FeatureDims, SpeakerId, Utterance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityNoise {
    pub text: f64,
    pub audio: f64,
    pub video: f64,
}

impl ModalityNoise {
    pub fn uniform(sigma: f64) -> Self {
        Self {
            text: sigma,
            audio: sigma,
            video: sigma,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_conversations: usize,
    pub min_utterances: usize,
    pub max_utterances: usize,
    pub min_speakers: u32,
    pub max_speakers: u32,
    pub class_count: usize,
    pub cluster_separation: f64,
    pub stickiness: f64,
    pub modality_noise: ModalityNoise,
    pub dims: FeatureDims,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::separable()
    }
}

impl SyntheticSpec {
    /// Separation 5, noise 0.1: every class is cleanly resolvable.
    pub fn separable() -> Self {
        Self {
            num_conversations: 200,
            min_utterances: 8,
            max_utterances: 20,
            min_speakers: 2,
            max_speakers: 4,
            class_count: 6,
            cluster_separation: 5.0,
            stickiness: 0.8,
            modality_noise: ModalityNoise::uniform(0.1),
            dims: FeatureDims::default(),
        }
    }

    /// Separation 2, noise 0.5: single utterances are ambiguous and
    /// conversational context carries real signal.
    pub fn hard() -> Self {
        Self {
            cluster_separation: 2.0,
            modality_noise: ModalityNoise::uniform(0.5),
            ..Self::separable()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Config(format!("synthetic spec: {m}")));
        if self.num_conversations == 0 || self.class_count == 0 {
            return bad("need at least one conversation and one class");
        }
        if self.min_utterances == 0 || self.min_utterances > self.max_utterances {
            return bad("utterance range must satisfy 1 <= min <= max");
        }
        if self.min_speakers == 0 || self.min_speakers > self.max_speakers {
            return bad("speaker range must satisfy 1 <= min <= max");
        }
        if !(self.cluster_separation > 0.0 && self.cluster_separation.is_finite()) {
            return bad("separation must be positive");
        }
        if !(0.0..=1.0).contains(&self.stickiness) {
            return bad("stickiness must be a probability");
        }
        let n = self.modality_noise;
        if [n.text, n.audio, n.video].iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("modality noise must be finite and non-negative");
        }
        if self.dims.text == 0 || self.dims.audio == 0 || self.dims.video == 0 {
            return bad("feature dims must be positive");
        }
        Ok(())
    }
}

/// Class anchors for one modality: `anchors[c]` has `dim` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    pub text: Vec<Vec<f64>>,
    pub audio: Vec<Vec<f64>>,
    pub video: Vec<Vec<f64>>,
}

fn gaussian_vec<R: Rng + ?Sized>(len: usize, std: f64, rng: &mut R) -> Vec<f64> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            std * z
        })
        .collect()
}

pub fn draw_anchors<R: Rng + ?Sized>(spec: &SyntheticSpec, rng: &mut R) -> Anchors {
    let mut per_modality = |dim: usize| -> Vec<Vec<f64>> {
        (0..spec.class_count)
            .map(|_| gaussian_vec(dim, spec.cluster_separation / dim as f64, rng))
            .collect()
    };
    let text = per_modality(spec.dims.text);
    let audio = per_modality(spec.dims.audio);
    let video = per_modality(spec.dims.video);
    Anchors { text, audio, video }
}

fn noisy<R: Rng + ?Sized>(anchor: &[f64], sigma: f64, rng: &mut R) -> Vec<f64> {
    let noise = gaussian_vec(anchor.len(), sigma, rng);
    anchor.iter().zip(noise).map(|(a, n)| a + n).collect()
}

/// Deterministic in `(spec, seed)`. Returns the dataset and its anchors.
pub fn generate_with_anchors(spec: &SyntheticSpec, seed: u64) -> Result<(Vec<Conversation>, Anchors)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let anchors = draw_anchors(spec, &mut rng);
    let mut out = Vec::with_capacity(spec.num_conversations);
    for conv_index in 0..spec.num_conversations {
        let n = rng.random_range(spec.min_utterances..=spec.max_utterances);
        let speakers = rng.random_range(spec.min_speakers..=spec.max_speakers);
        let mut label = rng.random_range(0..spec.class_count);
        let mut utterances = Vec::with_capacity(n);
        for index in 0..n {
            if index > 0 && !rng.random_bool(spec.stickiness) {
                label = rng.random_range(0..spec.class_count);
            }
            let speaker = SpeakerId(rng.random_range(0..speakers));
            let noise = spec.modality_noise;
            utterances.push(Utterance {
                index,
                speaker,
                text: noisy(&anchors.text[label], noise.text, &mut rng),
                audio: noisy(&anchors.audio[label], noise.audio, &mut rng),
                video: noisy(&anchors.video[label], noise.video, &mut rng),
                label: Some(label),
            });
        }
        out.push(Conversation {
            id: format!("conv{conv_index:04}"),
            utterances,
        });
    }
    Ok((out, anchors))
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Vec<Conversation>> {
    Ok(generate_with_anchors(spec, seed)?.0)
}

/// Predicts the class whose anchors are closest over all three modalities.
pub fn nearest_anchor(anchors: &Anchors, u: &Utterance) -> usize {
    let dist = |a: &[f64], x: &[f64]| a.iter().zip(x).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
    let mut best = (f64::INFINITY, 0);
    for c in 0..anchors.text.len() {
        let d = dist(&anchors.text[c], &u.text) + dist(&anchors.audio[c], &u.audio) + dist(&anchors.video[c], &u.video);
        if d < best.0 {
            best = (d, c);
        }
    }
    best.1
}
