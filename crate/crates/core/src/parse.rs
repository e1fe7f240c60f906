//! Likert rating extraction from free-form completions.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const BUNDLED_FIXTURES: &str = include_str!("../data/parse_fixtures.ndjson");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    NoRating,
    MultipleDistinct,
    OutOfRange,
    AmbiguousRange,
}

impl InvalidReason {
    pub fn as_str(self) -> &'static str {
        match self {
            InvalidReason::NoRating => "no_rating",
            InvalidReason::MultipleDistinct => "multiple_distinct",
            InvalidReason::OutOfRange => "out_of_range",
            InvalidReason::AmbiguousRange => "ambiguous_range",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rating {
    Valid(u8),
    Invalid(InvalidReason),
}

impl Rating {
    pub fn level(self) -> Option<u8> {
        match self {
            Rating::Valid(k) => Some(k),
            Rating::Invalid(_) => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, Rating::Valid(_))
    }
}

/// `L3` for valid ratings, `invalid:<reason>` otherwise.
impl fmt::Display for Rating {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rating::Valid(k) => write!(f, "L{k}"),
            Rating::Invalid(r) => write!(f, "invalid:{}", r.as_str()),
        }
    }
}

#[derive(Debug, Error)]
#[error("cannot parse rating label {0:?}")]
pub struct RatingLabelError(String);

impl FromStr for Rating {
    type Err = RatingLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || RatingLabelError(s.to_string());
        if let Some(reason) = s.strip_prefix("invalid:") {
            let r = [
                InvalidReason::NoRating,
                InvalidReason::MultipleDistinct,
                InvalidReason::OutOfRange,
                InvalidReason::AmbiguousRange,
            ]
            .into_iter()
            .find(|r| r.as_str() == reason)
            .ok_or_else(err)?;
            return Ok(Rating::Invalid(r));
        }
        let k: u8 = s.strip_prefix('L').ok_or_else(err)?.parse().map_err(|_| err())?;
        if (1..=5).contains(&k) {
            Ok(Rating::Valid(k))
        } else {
            Err(err())
        }
    }
}

impl Serialize for Rating {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rating {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

// An L-token must not touch other letters or digits; quotes, asterisks and
// parentheses around it are fine.
static TOKEN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:^|[^\p{L}\p{N}_])L(\d+)(?:[^\p{L}\p{N}_]|$)").unwrap());

static RANGE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)(?:^|[^\p{L}\p{N}_])L\d+\s*(?:-|–|—|to|through)\s*L?\d+(?:[^\p{L}\p{N}_]|$)")
        .unwrap()
});

pub fn extract_rating(raw_text: &str) -> Rating {
    if RANGE.is_match(raw_text) {
        return Rating::Invalid(InvalidReason::AmbiguousRange);
    }
    let mut seen: Option<u8> = None;
    let mut distinct = false;
    let mut any = false;
    // Tokens can share a separator ("L2/L3"), so scan from each match end - 1.
    let mut pos = 0;
    while let Some(caps) = TOKEN.captures_at(raw_text, pos) {
        let digits = caps.get(1).unwrap();
        pos = digits.end();
        any = true;
        let level = match digits.as_str().parse::<u32>() {
            Ok(k @ 1..=5) => k as u8,
            _ => return Rating::Invalid(InvalidReason::OutOfRange),
        };
        match seen {
            None => seen = Some(level),
            Some(prev) if prev != level => distinct = true,
            Some(_) => {}
        }
    }
    match (any, distinct, seen) {
        (false, _, _) => Rating::Invalid(InvalidReason::NoRating),
        (true, true, _) => Rating::Invalid(InvalidReason::MultipleDistinct),
        (true, false, Some(k)) => Rating::Valid(k),
        (true, false, None) => unreachable!("a token always sets a level or returns"),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fixture {
    pub name: String,
    #[serde(default)]
    pub model: String,
    pub raw_text: String,
    pub expected: Rating,
}

#[derive(Debug, Error)]
pub enum FixtureError {
    #[error("cannot read fixtures: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

pub fn bundled_fixtures() -> Vec<Fixture> {
    parse_fixtures(BUNDLED_FIXTURES).expect("bundled fixtures are valid")
}

pub fn load_fixtures(path: &Path) -> Result<Vec<Fixture>, FixtureError> {
    parse_fixtures(&std::fs::read_to_string(path)?)
}

fn parse_fixtures(text: &str) -> Result<Vec<Fixture>, FixtureError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|source| FixtureError::Parse { line: i + 1, source }))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct FixtureOutcome {
    pub name: String,
    pub expected: Rating,
    pub got: Rating,
}

impl FixtureOutcome {
    pub fn passed(&self) -> bool {
        self.expected == self.got
    }
}

pub fn check_fixtures(fixtures: &[Fixture]) -> Vec<FixtureOutcome> {
    fixtures
        .iter()
        .map(|f| FixtureOutcome {
            name: f.name.clone(),
            expected: f.expected,
            got: extract_rating(&f.raw_text),
        })
        .collect()
}
