//! The 25 persona conditions and their prompt fragments.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_PERSONAS: &str = include_str!("../data/personas.json");
const PROFILE_PREFIX: &str = "The user's profile indicates";

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("cannot read persona file: {0}")]
    Io(#[from] std::io::Error),
    #[error("persona file is not valid: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("trait {0} has no profile entry")]
    MissingTrait(Trait),
    #[error("trait {0} appears more than once")]
    DuplicateTrait(Trait),
    #[error("trait {0}: {1}")]
    Invalid(Trait, &'static str),
    #[error("keyword list must not be empty")]
    NoKeywords,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trait {
    Openness,
    Conscientiousness,
    Extraversion,
    Agreeableness,
    Neuroticism,
    Machiavellianism,
    Narcissism,
    Psychopathy,
}

impl Trait {
    pub const ALL: [Trait; 8] = [
        Trait::Openness,
        Trait::Conscientiousness,
        Trait::Extraversion,
        Trait::Agreeableness,
        Trait::Neuroticism,
        Trait::Machiavellianism,
        Trait::Narcissism,
        Trait::Psychopathy,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Trait::Openness => "openness",
            Trait::Conscientiousness => "conscientiousness",
            Trait::Extraversion => "extraversion",
            Trait::Agreeableness => "agreeableness",
            Trait::Neuroticism => "neuroticism",
            Trait::Machiavellianism => "machiavellianism",
            Trait::Narcissism => "narcissism",
            Trait::Psychopathy => "psychopathy",
        }
    }

    pub fn is_dark_triad(self) -> bool {
        matches!(
            self,
            Trait::Machiavellianism | Trait::Narcissism | Trait::Psychopathy
        )
    }

    pub fn parse(s: &str) -> Option<Trait> {
        Trait::ALL.into_iter().find(|t| t.as_str() == s)
    }
}

impl fmt::Display for Trait {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraitProfile {
    #[serde(rename = "trait")]
    pub kind: Trait,
    pub keywords: Vec<String>,
    pub profile_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Age {
    Young,
    Old,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Race {
    Black,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Democratic,
    Republican,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DemographicProfile {
    pub age: Age,
    pub race: Race,
    pub sex: Sex,
    pub party: Party,
}

impl DemographicProfile {
    /// All 16 cells, age outermost and party innermost.
    pub fn all() -> Vec<DemographicProfile> {
        let mut out = Vec::with_capacity(16);
        for age in [Age::Young, Age::Old] {
            for race in [Race::Black, Race::White] {
                for sex in [Sex::Female, Sex::Male] {
                    for party in [Party::Democratic, Party::Republican] {
                        out.push(DemographicProfile { age, race, sex, party });
                    }
                }
            }
        }
        out
    }

    fn words(&self) -> [&'static str; 4] {
        [
            match self.age {
                Age::Young => "young",
                Age::Old => "old",
            },
            match self.race {
                Race::Black => "black",
                Race::White => "white",
            },
            match self.sex {
                Sex::Female => "female",
                Sex::Male => "male",
            },
            match self.party {
                Party::Democratic => "democratic",
                Party::Republican => "republican",
            },
        ]
    }

    pub fn label(&self) -> String {
        self.words().join("-")
    }

    pub fn parse_label(s: &str) -> Option<DemographicProfile> {
        DemographicProfile::all().into_iter().find(|d| d.label() == s)
    }

    /// The demographic sentence. The bundled wording keeps "a old" and a
    /// lowercase "white"; `normalize_grammar` fixes both.
    pub fn sentence(&self, normalize_grammar: bool) -> String {
        let age = match self.age {
            Age::Young => "young",
            Age::Old => "old",
        };
        let race = match (self.race, normalize_grammar) {
            (Race::Black, _) => "Black",
            (Race::White, false) => "white",
            (Race::White, true) => "White",
        };
        let sex = match self.sex {
            Sex::Female => "female",
            Sex::Male => "male",
        };
        let party = match self.party {
            Party::Democratic => "Democratic",
            Party::Republican => "Republican",
        };
        let article = if normalize_grammar && self.age == Age::Old {
            "an"
        } else {
            "a"
        };
        format!("The user is {article} {age} {race} {sex} who self-identifies as {party}.")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Trait { persona: Trait },
    NoPersona,
    Demographic { profile: DemographicProfile },
}

impl Condition {
    pub fn label(&self) -> String {
        match self {
            Condition::Trait { persona } => persona.as_str().to_string(),
            Condition::NoPersona => "none".to_string(),
            Condition::Demographic { profile } => profile.label(),
        }
    }

    pub fn from_label(s: &str) -> Option<Condition> {
        if s == "none" {
            return Some(Condition::NoPersona);
        }
        if let Some(t) = Trait::parse(s) {
            return Some(Condition::Trait { persona: t });
        }
        DemographicProfile::parse_label(s).map(|profile| Condition::Demographic { profile })
    }

    pub fn trait_kind(&self) -> Option<Trait> {
        match self {
            Condition::Trait { persona } => Some(*persona),
            _ => None,
        }
    }

    pub fn demographic(&self) -> Option<DemographicProfile> {
        match self {
            Condition::Demographic { profile } => Some(*profile),
            _ => None,
        }
    }

    /// True for the nine personality runs (eight traits plus no persona).
    pub fn is_personality_run(&self) -> bool {
        !matches!(self, Condition::Demographic { .. })
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Traits in keyword-table order, then no persona, then the 16 demographic cells.
pub fn enumerate_conditions() -> Vec<Condition> {
    let mut out: Vec<Condition> = Trait::ALL
        .iter()
        .map(|t| Condition::Trait { persona: *t })
        .collect();
    out.push(Condition::NoPersona);
    out.extend(
        DemographicProfile::all()
            .into_iter()
            .map(|profile| Condition::Demographic { profile }),
    );
    out
}

/// Keyword lists and profile paragraphs for the eight traits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PersonaSet {
    profiles: Vec<TraitProfile>,
    pub normalize_grammar: bool,
}

#[derive(Deserialize)]
struct PersonaFile {
    traits: Vec<TraitProfile>,
}

impl PersonaSet {
    pub fn bundled() -> PersonaSet {
        PersonaSet::from_json(BUNDLED_PERSONAS).expect("bundled persona data is valid")
    }

    pub fn from_path(path: &Path) -> Result<PersonaSet, PersonaError> {
        PersonaSet::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn from_json(s: &str) -> Result<PersonaSet, PersonaError> {
        let file: PersonaFile = serde_json::from_str(s)?;
        let mut profiles = Vec::with_capacity(8);
        for t in Trait::ALL {
            let mut matching = file.traits.iter().filter(|p| p.kind == t);
            let p = matching.next().ok_or(PersonaError::MissingTrait(t))?;
            if matching.next().is_some() {
                return Err(PersonaError::DuplicateTrait(t));
            }
            if p.keywords.is_empty() {
                return Err(PersonaError::Invalid(t, "empty keyword list"));
            }
            if !p.profile_text.starts_with(PROFILE_PREFIX) {
                return Err(PersonaError::Invalid(
                    t,
                    "profile text must begin with \"The user's profile indicates\"",
                ));
            }
            profiles.push(p.clone());
        }
        Ok(PersonaSet {
            profiles,
            normalize_grammar: false,
        })
    }

    pub fn profile(&self, t: Trait) -> &TraitProfile {
        self.profiles
            .iter()
            .find(|p| p.kind == t)
            .expect("every trait validated at construction")
    }

    pub fn profiles(&self) -> &[TraitProfile] {
        &self.profiles
    }

    /// Persona text inserted into the dialog prompt; empty for no persona.
    pub fn render_fragment(&self, c: &Condition) -> String {
        match c {
            Condition::NoPersona => String::new(),
            Condition::Trait { persona } => self.profile(*persona).profile_text.clone(),
            Condition::Demographic { profile } => profile.sentence(self.normalize_grammar),
        }
    }
}

/// Instruction used to ask a generator model for a trait profile paragraph.
pub fn profile_generation_prompt<S: AsRef<str>>(keywords: &[S]) -> Result<String, PersonaError> {
    if keywords.is_empty() {
        return Err(PersonaError::NoKeywords);
    }
    let joined = keywords
        .iter()
        .map(AsRef::as_ref)
        .collect::<Vec<_>>()
        .join(", ");
    Ok(format!(
        "Generate a short user's profile given the following personality keywords: {joined}"
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use regex::Regex;
    use std::collections::HashSet;

    #[test]
    fn twenty_five_unique_conditions_in_declared_order() {
        let all = enumerate_conditions();
        assert_eq!(all.len(), 25);
        assert_eq!(all[0], Condition::Trait { persona: Trait::Openness });
        assert_eq!(all[8], Condition::NoPersona);
        let labels: HashSet<String> = all.iter().map(Condition::label).collect();
        assert_eq!(labels.len(), 25);
        assert_eq!(
            all.iter().filter(|c| matches!(c, Condition::Demographic { .. })).count(),
            16
        );
        assert_eq!(all, enumerate_conditions());
        for c in &all {
            assert_eq!(Condition::from_label(&c.label()), Some(*c));
        }
    }

    #[test]
    fn demographic_sentence_keeps_bundled_wording() {
        let d = DemographicProfile {
            age: Age::Old,
            race: Race::White,
            sex: Sex::Female,
            party: Party::Republican,
        };
        let set = PersonaSet::bundled();
        assert_eq!(
            set.render_fragment(&Condition::Demographic { profile: d }),
            "The user is a old white female who self-identifies as Republican."
        );
        assert_eq!(
            d.sentence(true),
            "The user is an old White female who self-identifies as Republican."
        );
        let pat = Regex::new(
            r"^The user is a (young|old) (Black|white|White) (female|male) who self-identifies as (Democratic|Republican)\.$",
        )
        .unwrap();
        for d in DemographicProfile::all() {
            assert!(pat.is_match(&d.sentence(false)), "{}", d.sentence(false));
        }
    }

    #[test]
    fn fragments_for_traits_and_none() {
        let set = PersonaSet::bundled();
        assert_eq!(set.render_fragment(&Condition::NoPersona), "");
        let p = set.render_fragment(&Condition::Trait { persona: Trait::Psychopathy });
        assert!(p.starts_with("The user's profile indicates that they are bold and fearless"));
    }

    #[test]
    fn bundled_keywords_match_table() {
        let set = PersonaSet::bundled();
        let open = &set.profile(Trait::Openness).keywords;
        assert_eq!(open.len(), 23);
        assert_eq!(open[0], "Original");
        assert!(open.iter().any(|k| k == "curious") && open.iter().any(|k| k == "inventive"));
        assert_eq!(set.profile(Trait::Extraversion).keywords.len(), 17);
        assert_eq!(set.profile(Trait::Narcissism).keywords.last().unwrap(), "glamorous");
        for t in Trait::ALL {
            assert!(!set.profile(t).keywords.is_empty());
        }
    }

    #[test]
    fn generation_prompt() {
        assert_eq!(
            profile_generation_prompt(&["bold", "fearless"]).unwrap(),
            "Generate a short user's profile given the following personality keywords: bold, fearless"
        );
        let set = PersonaSet::bundled();
        let kw = &set.profile(Trait::Openness).keywords;
        let p = profile_generation_prompt(kw).unwrap();
        assert!(p.contains("curious") && p.contains("inventive"));
        assert!(matches!(
            profile_generation_prompt::<&str>(&[]),
            Err(PersonaError::NoKeywords)
        ));
    }

    #[test]
    fn persona_file_must_cover_every_trait() {
        let json = r#"{"traits":[{"trait":"openness","keywords":["a"],"profile_text":"The user's profile indicates x"}]}"#;
        assert!(matches!(
            PersonaSet::from_json(json),
            Err(PersonaError::MissingTrait(Trait::Conscientiousness))
        ));
    }
}
