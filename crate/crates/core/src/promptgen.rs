//! Assembly of the third-person chain-of-thought dialog prompt.

use std::collections::HashMap;
use std::fmt;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, NewsItem};
use crate::persona::{Condition, PersonaSet};

const IMAGE_TEXT_TEMPLATE: &str = include_str!("../data/templates/image_text.txt");
const TEXT_ONLY_TEMPLATE: &str = include_str!("../data/templates/text_only.txt");

pub const IMAGE_TEXT_FILE: &str = "image_text.txt";
pub const TEXT_ONLY_FILE: &str = "text_only.txt";
pub const DEFAULT_BLANK_SIZE: u32 = 512;

const SLOTS: [&str; 5] = ["{PERSONA}", "{SOURCE}", "{DATE}", "{MEDIUM}", "{NEWS}"];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("item {0} has no image but the modality needs one")]
    MissingImage(String),
    #[error("image for item {id} is not usable: {message}")]
    BadImage { id: String, message: String },
    #[error("unknown modality {0:?}")]
    UnknownModality(String),
    #[error("blank image dimensions must be positive, got {0}x{1}")]
    BadDimensions(u32, u32),
    #[error("template {name} is missing slot {slot}")]
    MissingSlot { name: String, slot: &'static str },
    #[error("cannot read template: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot encode image: {0}")]
    Encode(#[from] image::ImageError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "text")]
    TextOnly,
    #[serde(rename = "image")]
    ImageText,
    #[serde(rename = "blank")]
    BlankImage,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::TextOnly => "text",
            Modality::ImageText => "image",
            Modality::BlankImage => "blank",
        }
    }

    pub fn has_image(self) -> bool {
        !matches!(self, Modality::TextOnly)
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = PromptError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "text" | "text-only" => Ok(Modality::TextOnly),
            "image" | "image-text" => Ok(Modality::ImageText),
            "blank" | "blank-image" => Ok(Modality::BlankImage),
            other => Err(PromptError::UnknownModality(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImagePayload {
    pub media_type: String,
    #[serde(skip)]
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptMeta {
    pub news_id: String,
    pub condition_label: String,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub user_text: String,
    pub image: Option<Arc<ImagePayload>>,
    pub meta: PromptMeta,
}

/// The two dialog templates. Slots: `{PERSONA}` on a line of its own, then
/// `{SOURCE}`, `{DATE}`, `{MEDIUM}` and `{NEWS}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    pub image_text: String,
    pub text_only: String,
}

impl Templates {
    pub fn bundled() -> Templates {
        Templates {
            image_text: IMAGE_TEXT_TEMPLATE.to_string(),
            text_only: TEXT_ONLY_TEMPLATE.to_string(),
        }
    }

    pub fn from_dir(dir: &Path) -> Result<Templates, PromptError> {
        let t = Templates {
            image_text: std::fs::read_to_string(dir.join(IMAGE_TEXT_FILE))?,
            text_only: std::fs::read_to_string(dir.join(TEXT_ONLY_FILE))?,
        };
        for (name, body) in [(IMAGE_TEXT_FILE, &t.image_text), (TEXT_ONLY_FILE, &t.text_only)] {
            for slot in SLOTS {
                if !body.contains(slot) {
                    return Err(PromptError::MissingSlot {
                        name: name.to_string(),
                        slot,
                    });
                }
            }
        }
        Ok(t)
    }
}

/// Where the image for an `ImageText` prompt comes from.
#[derive(Debug, Clone)]
pub enum ImageSource {
    /// Resolve `image_ref` against a directory; bytes are cached per path.
    Directory(PathBuf),
    /// Use the same payload for every item (synthetic corpora).
    Fixed(Arc<ImagePayload>),
}

pub struct PromptBuilder {
    templates: Templates,
    personas: PersonaSet,
    blank: Arc<ImagePayload>,
    images: ImageSource,
    cache: Mutex<HashMap<PathBuf, Arc<ImagePayload>>>,
}

impl PromptBuilder {
    pub fn new(templates: Templates, personas: PersonaSet, images: ImageSource) -> Self {
        let blank = make_blank_image(DEFAULT_BLANK_SIZE, DEFAULT_BLANK_SIZE)
            .expect("default blank size is positive");
        PromptBuilder {
            templates,
            personas,
            blank: Arc::new(blank),
            images,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn for_corpus(corpus: &Corpus) -> Self {
        PromptBuilder::new(
            Templates::bundled(),
            PersonaSet::bundled(),
            ImageSource::Directory(corpus.base_dir.clone()),
        )
    }

    pub fn with_blank_size(mut self, width: u32, height: u32) -> Result<Self, PromptError> {
        self.blank = Arc::new(make_blank_image(width, height)?);
        Ok(self)
    }

    pub fn personas(&self) -> &PersonaSet {
        &self.personas
    }

    pub fn build(
        &self,
        item: &NewsItem,
        condition: &Condition,
        modality: Modality,
    ) -> Result<PromptBundle, PromptError> {
        let template = match modality {
            Modality::TextOnly => &self.templates.text_only,
            Modality::ImageText | Modality::BlankImage => &self.templates.image_text,
        };
        let persona = self.personas.render_fragment(condition);
        let user_text = fill_template(template, &persona, item);
        let image = match modality {
            Modality::TextOnly => None,
            Modality::BlankImage => Some(self.blank.clone()),
            Modality::ImageText => Some(self.resolve_image(item)?),
        };
        Ok(PromptBundle {
            user_text,
            image,
            meta: PromptMeta {
                news_id: item.id.clone(),
                condition_label: condition.label(),
                modality,
            },
        })
    }

    fn resolve_image(&self, item: &NewsItem) -> Result<Arc<ImagePayload>, PromptError> {
        let dir = match &self.images {
            ImageSource::Fixed(p) => return Ok(p.clone()),
            ImageSource::Directory(d) => d,
        };
        let rel = item
            .image_ref
            .as_ref()
            .ok_or_else(|| PromptError::MissingImage(item.id.clone()))?;
        let path = dir.join(rel);
        if let Some(hit) = self.cache.lock().unwrap().get(&path) {
            return Ok(hit.clone());
        }
        let bad = |message: String| PromptError::BadImage {
            id: item.id.clone(),
            message,
        };
        let bytes = std::fs::read(&path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let payload = Arc::new(inspect_image(bytes).map_err(bad)?);
        self.cache.lock().unwrap().insert(path, payload.clone());
        Ok(payload)
    }
}

/// Checks the header decodes and returns the payload with its media type.
pub fn inspect_image(bytes: Vec<u8>) -> Result<ImagePayload, String> {
    let reader = image::ImageReader::new(Cursor::new(&bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?;
    let media_type = match reader.format() {
        Some(image::ImageFormat::Png) => "image/png",
        Some(image::ImageFormat::Jpeg) => "image/jpeg",
        Some(other) => return Err(format!("unsupported image format {other:?}")),
        None => return Err("unrecognized image format".to_string()),
    };
    reader.into_dimensions().map_err(|e| e.to_string())?;
    Ok(ImagePayload {
        media_type: media_type.to_string(),
        bytes,
    })
}

/// Long-form date as it appears in fact-check pages, e.g. "October 16, 2024".
pub fn display_date(date: chrono::NaiveDate) -> String {
    date.format("%B %-d, %Y").to_string()
}

pub fn news_text(item: &NewsItem) -> String {
    format!("{}\n\n{}", item.headline.trim(), item.body.trim())
}

fn fill_template(template: &str, persona: &str, item: &NewsItem) -> String {
    let mut text = if persona.is_empty() {
        // Drop the persona line together with the blank line after it.
        template
            .replace("{PERSONA}\n\n", "")
            .replace("{PERSONA}\n", "")
            .replace("{PERSONA}", "")
    } else {
        template.replace("{PERSONA}", persona)
    };
    // NEWS goes last so slot-like text inside the news is left alone.
    for (slot, value) in [
        ("{SOURCE}", item.source.as_str()),
        ("{DATE}", display_date(item.claim_date).as_str()),
        ("{MEDIUM}", item.medium.as_str()),
    ] {
        text = text.replace(slot, value);
    }
    text.replace("{NEWS}", &news_text(item))
}

/// PNG whose every channel is zero.
pub fn make_blank_image(width: u32, height: u32) -> Result<ImagePayload, PromptError> {
    if width == 0 || height == 0 {
        return Err(PromptError::BadDimensions(width, height));
    }
    let img = image::RgbImage::new(width, height);
    let mut bytes = Vec::new();
    img.write_to(&mut Cursor::new(&mut bytes), image::ImageFormat::Png)?;
    Ok(ImagePayload {
        media_type: "image/png".to_string(),
        bytes,
    })
}
