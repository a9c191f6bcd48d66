//! Newline-delimited prompt sets.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{PeoError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PromptOrigin {
    DiffusiondbSubset,
    CocoSubset,
    Simplified,
    PeoSet,
    Custom,
}

impl PromptOrigin {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "diffusiondb" | "diffusiondb_subset" => Ok(Self::DiffusiondbSubset),
            "coco" | "coco_subset" => Ok(Self::CocoSubset),
            "simplified" => Ok(Self::Simplified),
            "peo" | "peo_set" => Ok(Self::PeoSet),
            "custom" => Ok(Self::Custom),
            _ => Err(PeoError::InvalidConfig(format!(
                "unknown prompt-set origin `{s}` (expected diffusiondb, coco, simplified, peo or custom)"
            ))),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::DiffusiondbSubset => "DIFFUSIONDB_SUBSET",
            Self::CocoSubset => "COCO_SUBSET",
            Self::Simplified => "SIMPLIFIED",
            Self::PeoSet => "PEO_SET",
            Self::Custom => "CUSTOM",
        }
    }
}

impl fmt::Display for PromptOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub name: String,
    prompts: Vec<String>,
    pub origin: PromptOrigin,
}

impl PromptSet {
    /// Prompts are trimmed; an empty set or an empty prompt is rejected.
    pub fn new(
        name: impl Into<String>,
        prompts: Vec<String>,
        origin: PromptOrigin,
    ) -> Result<Self> {
        let name = name.into();
        let prompts: Vec<String> = prompts.into_iter().map(|p| p.trim().to_string()).collect();
        if prompts.is_empty() {
            return Err(PeoError::InvalidInput(format!(
                "prompt set `{name}` is empty"
            )));
        }
        if let Some(i) = prompts.iter().position(String::is_empty) {
            return Err(PeoError::InvalidInput(format!(
                "prompt set `{name}` has an empty prompt at position {i}"
            )));
        }
        Ok(Self {
            name,
            prompts,
            origin,
        })
    }

    pub fn prompts(&self) -> &[String] {
        &self.prompts
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// The file form read by [`load_prompt_set`].
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "# {} ({}, {} prompts)\n",
            self.name,
            self.origin,
            self.len()
        );
        for p in &self.prompts {
            out.push_str(p);
            out.push('\n');
        }
        out
    }
}

/// Parse prompt-set text: one prompt per line, `#` starts a comment line,
/// blank lines are skipped.
pub fn parse_prompt_set(name: &str, text: &str, origin: PromptOrigin) -> Result<PromptSet> {
    let prompts: Vec<String> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect();
    PromptSet::new(name, prompts, origin)
}

/// Load a prompt set named after the file stem.
pub fn load_prompt_set(path: &Path, origin: PromptOrigin) -> Result<PromptSet> {
    let bytes = fs::read(path).map_err(|e| PeoError::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        PeoError::InvalidInput(format!(
            "{}: malformed UTF-8 at byte {}",
            path.display(),
            e.utf8_error().valid_up_to()
        ))
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "prompts".into());
    parse_prompt_set(&name, &text, origin)
}
