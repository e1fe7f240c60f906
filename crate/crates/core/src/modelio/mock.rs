use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{NewsItem, Veracity};
use crate::persona::{Condition, Party, Trait};
use crate::promptgen::{Modality, PromptBundle};
use crate::rng::keyed_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MockPolicy {
    pub base_yes: f64,
    pub delta_image: f64,
    pub delta_false_image: f64,
    pub trait_offsets: BTreeMap<Trait, f64>,
    /// Added for demographic cells that self-identify as Republican.
    pub party_offset: f64,
    pub invalid_rate: f64,
    pub seed: u64,
}

impl Default for MockPolicy {
    fn default() -> Self {
        MockPolicy {
            base_yes: 0.45,
            delta_image: 0.0,
            delta_false_image: 0.0,
            trait_offsets: BTreeMap::new(),
            party_offset: 0.0,
            invalid_rate: 0.0,
            seed: 0,
        }
    }
}

impl MockPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.base_yes) {
            return Err(format!("base_yes {} outside [0, 1]", self.base_yes));
        }
        if !(0.0..=1.0).contains(&self.invalid_rate) {
            return Err(format!("invalid_rate {} outside [0, 1]", self.invalid_rate));
        }
        let all = [self.delta_image, self.delta_false_image, self.party_offset];
        if all.iter().chain(self.trait_offsets.values()).any(|v| !v.is_finite()) {
            return Err("offsets must be finite".into());
        }
        Ok(())
    }

    /// Yes-propensity of a cell, clamped to [0, 1].
    pub fn propensity(&self, modality: Modality, veracity: Veracity, condition: Option<&Condition>) -> f64 {
        let mut p = self.base_yes;
        if modality == Modality::ImageText {
            p += self.delta_image;
            if veracity == Veracity::False {
                p += self.delta_false_image;
            }
        }
        match condition {
            Some(Condition::Trait { persona }) => {
                p += self.trait_offsets.get(persona).copied().unwrap_or(0.0);
            }
            Some(Condition::Demographic { profile }) if profile.party == Party::Republican => {
                p += self.party_offset;
            }
            _ => {}
        }
        p.clamp(0.0, 1.0)
    }
}

const OPENERS: [&str; 4] = [
    "Considering the user's profile and the claim,",
    "Given how the user engages with news online,",
    "Looking at the source and the headline,",
    "Based on the user's description,",
];

const LEANS: [(&str, &str); 3] = [
    ("they would likely share it with their followers.", "they would probably not pass it on."),
    ("the story fits what they care about.", "the story does not seem worth spreading to them."),
    ("it is the kind of post they repost.", "they would scroll past it."),
];

const MALFORMED: [&str; 4] = [
    "Rating: L2 or L4, depending on their mood.",
    "Somewhere in L2-L3.",
    "They would probably share it.",
    "L6",
];

/// Synthetic reasoning ending in a rating line. Pure in `(policy, bundle meta,
/// news veracity, sample_index)`.
pub fn mock_respond(bundle: &PromptBundle, policy: &MockPolicy, news: &NewsItem, sample_index: u32) -> String {
    let meta = &bundle.meta;
    let mut rng = keyed_rng(
        policy.seed,
        &[&meta.news_id, &meta.condition_label, meta.modality.as_str()],
        sample_index as u64,
    );
    let condition = Condition::from_label(&meta.condition_label);
    let p = policy.propensity(meta.modality, news.veracity, condition.as_ref());

    // Three-point mass around the midpoint with mean yes-rate p:
    // P(L3) = 2m, yes side p - m, no side 1 - p - m, m = min(p, 1 - p) / 4.
    let m = 0.25 * p.min(1.0 - p);
    let u: f64 = rng.random();
    let level = if u < 2.0 * m {
        3
    } else if u < 2.0 * m + (p - m) {
        if rng.random::<f64>() < p { 5 } else { 4 }
    } else if rng.random::<f64>() < 1.0 - p {
        1
    } else {
        2
    };
    let opener = OPENERS[rng.random_range(0..OPENERS.len())];
    let (yes, no) = LEANS[rng.random_range(0..LEANS.len())];
    let lean = if level >= 3 { yes } else { no };
    let invalid = policy.invalid_rate > 0.0 && rng.random::<f64>() < policy.invalid_rate;
    if invalid {
        let bad = MALFORMED[rng.random_range(0..MALFORMED.len())];
        return format!("{opener} {lean}\n\n{bad}");
    }
    format!("{opener} {lean}\n\nL{level}")
}
