//! Conversations: ordered utterances with per-modality features.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeakerId(pub u32);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    pub text: usize,
    pub audio: usize,
    pub video: usize,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            text: 24,
            audio: 12,
            video: 12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub index: usize,
    pub speaker: SpeakerId,
    pub text: Vec<f64>,
    pub audio: Vec<f64>,
    pub video: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub utterances: Vec<Utterance>,
}

impl Conversation {
    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn validate(&self, dims: &FeatureDims, num_classes: usize) -> Result<()> {
        if self.utterances.is_empty() {
            return Err(invalid(alloc::format!("conversation `{}` has no utterances", self.id)));
        }
        for (i, u) in self.utterances.iter().enumerate() {
            for (got, want, op) in [
                (u.text.len(), dims.text, "text features"),
                (u.audio.len(), dims.audio, "audio features"),
                (u.video.len(), dims.video, "video features"),
            ] {
                if got != want {
                    return Err(Error::ShapeMismatch {
                        op,
                        left: (i, got),
                        right: (i, want),
                    });
                }
            }
            if let Some(l) = u.label {
                if l >= num_classes {
                    return Err(invalid(alloc::format!(
                        "utterance {i} of `{}` has label {l} >= {num_classes}",
                        self.id
                    )));
                }
            }
            let all_finite = u.text.iter().chain(&u.audio).chain(&u.video).all(|x| x.is_finite());
            if !all_finite {
                return Err(Error::NonFinite("utterance features"));
            }
        }
        Ok(())
    }

    fn stack(&self, pick: impl Fn(&Utterance) -> &[f64]) -> Matrix {
        let rows: Vec<&[f64]> = self.utterances.iter().map(pick).collect();
        Matrix::from_rows(&rows).expect("validated feature dims")
    }

    pub fn text_matrix(&self) -> Matrix {
        self.stack(|u| &u.text)
    }

    pub fn audio_matrix(&self) -> Matrix {
        self.stack(|u| &u.audio)
    }

    pub fn video_matrix(&self) -> Matrix {
        self.stack(|u| &u.video)
    }

    pub fn speakers(&self) -> Vec<SpeakerId> {
        self.utterances.iter().map(|u| u.speaker).collect()
    }

    /// All labels, or `None` if any utterance is unlabeled.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.utterances.iter().map(|u| u.label).collect()
    }

    /// Most frequent label; ties go to the lowest class.
    pub fn dominant_label(&self, num_classes: usize) -> Option<usize> {
        let labels = self.labels()?;
        let mut counts = alloc::vec![0usize; num_classes];
        for l in labels {
            counts[l] += 1;
        }
        let mut best = 0;
        for (c, &n) in counts.iter().enumerate() {
            if n > counts[best] {
                best = c;
            }
        }
        Some(best)
    }
}
