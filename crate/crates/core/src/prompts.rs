//! System prompt catalog: one plain-text template per section, concatenated
//! in file-name order.

use std::path::{Path, PathBuf};
use thiserror::Error;

/// Section files, in system-prompt order.
pub const SECTION_FILES: [&str; 13] = [
    "01_context_identity.txt",
    "02_goal.txt",
    "03_persona_details.txt",
    "04_keyword_identification.txt",
    "05_saturation.txt",
    "06_verbosity.txt",
    "07_persona_behavior.txt",
    "08_inviting_more_personas.txt",
    "09_conversation_detection.txt",
    "10_conversation_behavior.txt",
    "11_first_message.txt",
    "12_factuality_message.txt",
    "13_annotation_format.txt",
];

const BUILTIN: [&str; 13] = [
    include_str!("../prompts/01_context_identity.txt"),
    include_str!("../prompts/02_goal.txt"),
    include_str!("../prompts/03_persona_details.txt"),
    include_str!("../prompts/04_keyword_identification.txt"),
    include_str!("../prompts/05_saturation.txt"),
    include_str!("../prompts/06_verbosity.txt"),
    include_str!("../prompts/07_persona_behavior.txt"),
    include_str!("../prompts/08_inviting_more_personas.txt"),
    include_str!("../prompts/09_conversation_detection.txt"),
    include_str!("../prompts/10_conversation_behavior.txt"),
    include_str!("../prompts/11_first_message.txt"),
    include_str!("../prompts/12_factuality_message.txt"),
    include_str!("../prompts/13_annotation_format.txt"),
];

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("missing prompt template {0}")]
    MissingTemplate(PathBuf),
    #[error("cannot read prompt template {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptCatalog {
    sections: Vec<(String, String)>,
}

impl Default for PromptCatalog {
    fn default() -> Self {
        Self::builtin()
    }
}

impl PromptCatalog {
    /// Templates compiled into the binary from `prompts/`.
    pub fn builtin() -> Self {
        Self {
            sections: SECTION_FILES
                .iter()
                .zip(BUILTIN)
                .map(|(name, text)| (name.to_string(), text.to_string()))
                .collect(),
        }
    }

    /// Loads every section from `dir`; all files must exist.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        let mut sections = Vec::with_capacity(SECTION_FILES.len());
        for name in SECTION_FILES {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(PromptError::MissingTemplate(path));
            }
            let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Read {
                path: path.clone(),
                source,
            })?;
            sections.push((name.to_string(), text));
        }
        Ok(Self { sections })
    }

    pub fn sections(&self) -> impl Iterator<Item = (&str, &str)> {
        self.sections.iter().map(|(n, t)| (n.as_str(), t.as_str()))
    }

    /// Sections joined by blank lines; a domain hint becomes a final line.
    pub fn build_system_prompt(&self, domain_hint: Option<&str>) -> String {
        let mut prompt = self
            .sections
            .iter()
            .map(|(_, text)| text.trim_end_matches(['\n', '\r']))
            .collect::<Vec<_>>()
            .join("\n\n");
        if let Some(hint) = domain_hint.map(str::trim).filter(|h| !h.is_empty()) {
            prompt.push_str("\nThe decision domain is: ");
            prompt.push_str(hint);
        }
        prompt
    }
}
