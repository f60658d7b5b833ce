use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mano::{FeatureVariant, NUM_JOINTS};

/// Quantizer hyperparameters. Defaults reproduce the full-scale setup:
/// 4x temporal downsampling, 2 groups, 8 residual layers, 4096 codes per
/// part and a 512-wide latent at 15 FPS on D162 features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerConfig {
    pub alpha: usize,
    pub groups: usize,
    pub layers: usize,
    pub k_wrist: usize,
    pub k_finger: usize,
    pub dim: usize,
    pub fps: usize,
    pub variant: FeatureVariant,
    /// Separate wrist and finger tokenizers. When false a single quantizer
    /// covers every feature column and the wrist loss term is active.
    #[serde(default = "default_true")]
    pub part_level: bool,
    /// Width of an optional tanh hidden layer in encoder and decoder.
    #[serde(default)]
    pub hidden: Option<usize>,
}

fn default_true() -> bool {
    true
}

impl Default for QuantizerConfig {
    fn default() -> Self {
        QuantizerConfig {
            alpha: 4,
            groups: 2,
            layers: 8,
            k_wrist: 4096,
            k_finger: 4096,
            dim: 512,
            fps: 15,
            variant: FeatureVariant::D162,
            part_level: true,
            hidden: None,
        }
    }
}

impl QuantizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.alpha == 0 || self.groups == 0 || self.layers == 0 || self.fps == 0 {
            return bad("alpha, groups, layers and fps must be positive".into());
        }
        if self.dim == 0 || !self.dim.is_multiple_of(self.groups) {
            return bad(format!(
                "dim {} not divisible by {} groups",
                self.dim, self.groups
            ));
        }
        if self.k_wrist == 0 || (self.part_level && self.k_finger == 0) {
            return bad("codebook sizes must be positive".into());
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be positive".into());
        }
        Ok(())
    }

    pub fn group_width(&self) -> usize {
        self.dim / self.groups
    }

    /// Latent steps per one-second window, `ceil(fps / alpha)`.
    pub fn steps_per_second(&self) -> usize {
        self.fps.div_ceil(self.alpha)
    }

    pub fn num_parts(&self) -> usize {
        if self.part_level {
            2
        } else {
            1
        }
    }

    /// Tokens emitted per hand-second: `parts · n · L · ceil(fps / alpha)`.
    pub fn tokens_per_hand_second(&self) -> usize {
        self.num_parts() * self.tokens_per_part_second()
    }

    pub fn tokens_per_part_second(&self) -> usize {
        self.groups * self.layers * self.steps_per_second()
    }

    /// Size of the motion-token id space.
    pub fn motion_vocab_size(&self) -> usize {
        if self.part_level {
            self.k_wrist + self.k_finger
        } else {
            self.k_wrist
        }
    }

    pub fn part_codebook_size(&self, part: PartKind) -> usize {
        match part {
            PartKind::Wrist | PartKind::Whole => self.k_wrist,
            PartKind::Finger => self.k_finger,
        }
    }

    pub fn id_offset(&self, part: PartKind) -> usize {
        match part {
            PartKind::Wrist | PartKind::Whole => 0,
            PartKind::Finger => self.k_wrist,
        }
    }

    pub fn parts(&self) -> Vec<PartKind> {
        if self.part_level {
            vec![PartKind::Wrist, PartKind::Finger]
        } else {
            vec![PartKind::Whole]
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartKind {
    Wrist,
    Finger,
    /// Single quantizer over all columns (non-part-level mode).
    Whole,
}

impl PartKind {
    pub fn code(self) -> u32 {
        match self {
            PartKind::Wrist => 0,
            PartKind::Finger => 1,
            PartKind::Whole => 2,
        }
    }

    pub fn from_code(c: u32) -> Option<Self> {
        match c {
            0 => Some(PartKind::Wrist),
            1 => Some(PartKind::Finger),
            2 => Some(PartKind::Whole),
            _ => None,
        }
    }
}

/// Column indices of a feature row owned by each part.
///
/// The wrist part holds the global rotation, the translation and the wrist
/// joint; the finger part holds the finger rotations, shape and the other
/// twenty joints.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSplit {
    pub wrist: Vec<usize>,
    pub finger: Vec<usize>,
}

impl FeatureSplit {
    pub fn for_variant(variant: FeatureVariant) -> Self {
        let l = variant.layout();
        let mut wrist: Vec<usize> = l.r_rot.clone().chain(l.tau.clone()).collect();
        let mut finger: Vec<usize> = l.theta.clone().collect();
        if let Some(b) = &l.beta {
            finger.extend(b.clone());
        }
        if let Some(j) = &l.joints {
            wrist.extend(j.start..j.start + 3);
            finger.extend(j.start + 3..j.start + 3 * NUM_JOINTS);
        }
        FeatureSplit { wrist, finger }
    }

    pub fn columns(&self, part: PartKind) -> Vec<usize> {
        match part {
            PartKind::Wrist => self.wrist.clone(),
            PartKind::Finger => self.finger.clone(),
            PartKind::Whole => {
                let mut all: Vec<usize> = self.wrist.iter().chain(&self.finger).copied().collect();
                all.sort_unstable();
                all
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_budget_is_128() {
        let c = QuantizerConfig::default();
        c.validate().unwrap();
        assert_eq!(c.steps_per_second(), 4);
        assert_eq!(c.tokens_per_hand_second(), 128);
        let one_group = QuantizerConfig {
            groups: 1,
            ..c.clone()
        };
        assert_eq!(one_group.tokens_per_hand_second(), 64);
    }

    #[test]
    fn split_sizes() {
        let s = FeatureSplit::for_variant(FeatureVariant::D162);
        assert_eq!((s.wrist.len(), s.finger.len()), (12, 150));
        let s = FeatureSplit::for_variant(FeatureVariant::D109);
        assert_eq!((s.wrist.len(), s.finger.len()), (9, 100));
        for v in FeatureVariant::ALL {
            let s = FeatureSplit::for_variant(v);
            let mut all = s.columns(PartKind::Whole);
            assert_eq!(all.len(), v.dim());
            all.dedup();
            assert_eq!(all, (0..v.dim()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn invalid_configs() {
        let c = QuantizerConfig {
            dim: 7,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = QuantizerConfig {
            alpha: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
