//! Extraction prompt rendering.
//!
//! A PEGS-guided plan sends four prompts per chunk, one per category, each
//! carrying that category's focus text. The generic plan sends a single
//! prompt per chunk. Both embed the same output schema and the same
//! sentinel-delimited document region.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Chunk, DocId};
use crate::taxonomy::PegsCategory;

pub const SCHEMA_VERSION: &str = "schema_v1";
pub const DOC_OPEN: &str = "<<<DOC";
pub const DOC_CLOSE: &str = "DOC>>>";
pub const GENERIC_INSTRUCTION: &str =
    "Extract all functional and non-functional requirements from this document.";

const DEFAULT_PEGS_TEMPLATE: &str = "You are a requirements analyst. \
Identify requirements concerning: {focus}. Report only items present in the text.
PEGS category: {category}

{schema}

{chunk}
";

const DEFAULT_GENERIC_TEMPLATE: &str = "You are a requirements analyst. \
Extract all functional and non-functional requirements from this document.

{schema}

{chunk}
";

const DEFAULT_SCHEMA: &str = r#"Output format (schema_v1): respond with a JSON array. Each element is an object with the fields
  "text": the requirement statement as written in the document,
  "type": "functional" or "non-functional",
  "pegs": one of "Project", "Environment", "Goals", "System",
  "priority": one of "High", "Medium", "Low",
  "category": a short topical label such as "Compliance" or "Security",
  "confidence": your confidence from 0 to 1 that the item is a requirement stated in the text.
Respond with [] when the text states no such requirements."#;

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("failed to read template {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name} must contain exactly one {{chunk}} placeholder")]
    ChunkPlaceholder { name: &'static str },
    #[error("template {name} must contain {{focus}}")]
    FocusPlaceholder { name: &'static str },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptMode {
    PegsGuided(PegsCategory),
    Generic,
}

/// Which prompt fan-out to use for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanMode {
    /// Four category prompts per chunk.
    #[default]
    #[serde(alias = "pegs")]
    PegsAll,
    Generic,
}

/// Provenance of the chunk a prompt was built from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChunkRef {
    pub doc_id: DocId,
    pub section_label: String,
    pub page: u32,
    pub chunk_id: String,
}

impl From<&Chunk> for ChunkRef {
    fn from(c: &Chunk) -> Self {
        Self {
            doc_id: c.doc_id.clone(),
            section_label: c.section_label.clone(),
            page: c.page,
            chunk_id: c.chunk_id.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: String,
    pub mode: PromptMode,
    pub source: ChunkRef,
    pub rendered: String,
}

impl PromptSpec {
    pub fn chunk_id(&self) -> &str {
        &self.source.chunk_id
    }

    /// Text between the sentinel markers.
    pub fn document_region(&self) -> Option<&str> {
        let open = format!("{DOC_OPEN}\n");
        let close = format!("\n{DOC_CLOSE}");
        let start = self.rendered.find(&open)? + open.len();
        let end = self.rendered.rfind(&close)?;
        self.rendered.get(start..end)
    }
}

/// Prompt templates with `{focus}`, `{category}`, `{schema}` and `{chunk}`
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub pegs: String,
    pub generic: String,
    pub schema: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            pegs: DEFAULT_PEGS_TEMPLATE.to_string(),
            generic: DEFAULT_GENERIC_TEMPLATE.to_string(),
            schema: DEFAULT_SCHEMA.to_string(),
        }
    }
}

impl PromptTemplates {
    /// Load overrides from `pegs.txt`, `generic.txt` and `schema.txt` in
    /// `dir`. Missing or blank files keep the defaults.
    pub fn from_dir(dir: &Path) -> Result<Self, TemplateError> {
        let read = |name: &str| -> Result<Option<String>, TemplateError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(None);
            }
            let text = std::fs::read_to_string(&path).map_err(|source| TemplateError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok(Some(text).filter(|t| !t.trim().is_empty()))
        };
        let defaults = Self::default();
        let templates = Self {
            pegs: read("pegs.txt")?.unwrap_or(defaults.pegs),
            generic: read("generic.txt")?.unwrap_or(defaults.generic),
            schema: read("schema.txt")?.unwrap_or(defaults.schema),
        };
        templates.validate()?;
        Ok(templates)
    }

    /// Replace the schema block; an empty override keeps the default schema.
    pub fn with_schema(mut self, schema: &str) -> Self {
        self.schema = if schema.trim().is_empty() {
            DEFAULT_SCHEMA.to_string()
        } else {
            schema.to_string()
        };
        self
    }

    pub fn validate(&self) -> Result<(), TemplateError> {
        for (name, t) in [("pegs", &self.pegs), ("generic", &self.generic)] {
            if t.matches("{chunk}").count() != 1 {
                return Err(TemplateError::ChunkPlaceholder { name });
            }
        }
        if !self.pegs.contains("{focus}") {
            return Err(TemplateError::FocusPlaceholder { name: "pegs" });
        }
        Ok(())
    }

    pub fn build_pegs_prompt(&self, category: PegsCategory, chunk: &Chunk) -> PromptSpec {
        let rendered = self.render(&self.pegs, Some(category), &chunk.text);
        PromptSpec {
            prompt_id: format!("{}/{}", chunk.chunk_id, category.letter()),
            mode: PromptMode::PegsGuided(category),
            source: chunk.into(),
            rendered,
        }
    }

    pub fn build_generic_prompt(&self, chunk: &Chunk) -> PromptSpec {
        let mut rendered = self.render(&self.generic, None, &chunk.text);
        if !rendered.contains(GENERIC_INSTRUCTION) {
            rendered = format!("{GENERIC_INSTRUCTION}\n\n{rendered}");
        }
        PromptSpec {
            prompt_id: format!("{}/generic", chunk.chunk_id),
            mode: PromptMode::Generic,
            source: chunk.into(),
            rendered,
        }
    }

    /// Prompts in (chunk order) x (P, E, G, S) order.
    pub fn plan_prompts(&self, chunks: &[Chunk], mode: PlanMode) -> Vec<PromptSpec> {
        match mode {
            PlanMode::PegsAll => chunks
                .iter()
                .flat_map(|c| PegsCategory::ALL.map(|cat| self.build_pegs_prompt(cat, c)))
                .collect(),
            PlanMode::Generic => chunks
                .iter()
                .map(|c| self.build_generic_prompt(c))
                .collect(),
        }
    }

    // Single pass so placeholder-like text inside the chunk is never expanded.
    fn render(&self, template: &str, category: Option<PegsCategory>, chunk_text: &str) -> String {
        let mut schema = self.schema.clone();
        if !template.contains("{schema}") {
            schema.clear();
        }
        let mut out = String::with_capacity(template.len() + chunk_text.len() + schema.len());
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let tail = &rest[open..];
            let close = tail.find('}');
            let name = close.map(|c| &tail[1..c]);
            match (name, category) {
                (Some("chunk"), _) => {
                    out.push_str(DOC_OPEN);
                    out.push('\n');
                    out.push_str(chunk_text);
                    out.push('\n');
                    out.push_str(DOC_CLOSE);
                }
                (Some("schema"), _) => out.push_str(&schema),
                (Some("focus"), Some(cat)) => out.push_str(cat.focus_text()),
                (Some("category"), Some(cat)) => out.push_str(cat.name()),
                _ => {
                    out.push('{');
                    rest = &tail[1..];
                    continue;
                }
            }
            rest = &tail[close.expect("matched placeholder has a brace") + 1..];
        }
        out.push_str(rest);
        if !template.contains("{schema}") {
            // The parser relies on the schema; templates that omit the
            // placeholder get it ahead of the document region.
            if let Some(pos) = out.find(DOC_OPEN) {
                out.insert_str(pos, &format!("{}\n\n", self.schema));
            }
        }
        out
    }
}

pub fn build_pegs_prompt(category: PegsCategory, chunk: &Chunk) -> PromptSpec {
    PromptTemplates::default().build_pegs_prompt(category, chunk)
}

pub fn build_generic_prompt(chunk: &Chunk) -> PromptSpec {
    PromptTemplates::default().build_generic_prompt(chunk)
}

pub fn plan_prompts(chunks: &[Chunk], mode: PlanMode) -> Vec<PromptSpec> {
    PromptTemplates::default().plan_prompts(chunks, mode)
}
