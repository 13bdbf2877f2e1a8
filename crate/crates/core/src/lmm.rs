//! Prompt assembly for the generation stage and resolution of its free-text answer.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knowledge_base::{words, KnowledgeBase};
use crate::provider::{GenerationProvider, GenerationRequest};
use crate::reranker::ContextEntry;

pub const DEFAULT_HEADER: &str = "Identify the bird species shown in the image. Pick exactly one species name from the candidates below; each candidate is followed by a description of its appearance.\n\nCandidates:";
pub const DEFAULT_FOOTER: &str = "Answer with the species name only.";
pub const DIRECT_PROMPT: &str = "Identify the bird species shown in the image.\n\nAnswer with the species name only.";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub header: String,
    pub footer: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate { header: DEFAULT_HEADER.into(), footer: DEFAULT_FOOTER.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query_id: String,
    pub image_ref: String,
    pub candidate_summaries: Vec<ContextEntry>,
    pub rendered_prompt: String,
}

/// Renders `header`, one `NAME: SUMMARY` line per candidate in the given
/// order (just `NAME` when the text is empty), then `footer`.
pub fn assemble_prompt(
    query_id: &str,
    image_ref: &str,
    summaries: &[ContextEntry],
    template: &PromptTemplate,
) -> Result<PromptBundle> {
    if summaries.is_empty() {
        return Err(Error::InvalidConfig(format!("no candidate summaries for query `{query_id}`")));
    }
    let mut prompt = String::new();
    prompt.push_str(&template.header);
    for entry in summaries {
        prompt.push('\n');
        let name = words(&entry.common_name).collect::<Vec<_>>().join(" ");
        prompt.push_str(&name);
        if !entry.text.trim().is_empty() {
            prompt.push_str(": ");
            prompt.push_str(&words(&entry.text).collect::<Vec<_>>().join(" "));
        }
    }
    prompt.push_str("\n\n");
    prompt.push_str(&template.footer);
    Ok(PromptBundle {
        query_id: query_id.to_string(),
        image_ref: image_ref.to_string(),
        candidate_summaries: summaries.to_vec(),
        rendered_prompt: prompt,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    /// Matched a common name.
    Exact,
    /// Matched a scientific name.
    Scientific,
    Unresolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub query_id: String,
    pub raw_text: String,
    pub resolved_species: Option<String>,
    pub resolution: Resolution,
}

/// Lowercases, trims, strips punctuation at both ends and collapses whitespace.
pub fn normalize_name(text: &str) -> String {
    let lowered = text.to_lowercase();
    let stripped = lowered.trim_matches(|c: char| !c.is_alphanumeric());
    words(stripped).collect::<Vec<_>>().join(" ")
}

/// Normalized-name lookups over the whole knowledge base; the first record
/// in knowledge-base order wins on collisions.
#[derive(Debug, Clone)]
pub struct NameResolver {
    common: HashMap<String, String>,
    scientific: HashMap<String, String>,
    by_id: HashMap<String, (String, Option<String>)>,
}

impl NameResolver {
    pub fn new(kb: &KnowledgeBase) -> Self {
        let mut common = HashMap::new();
        let mut scientific = HashMap::new();
        let mut by_id = HashMap::new();
        for r in kb.records() {
            let c = normalize_name(&r.common_name);
            let s = r.scientific_name.as_deref().map(normalize_name).filter(|s| !s.is_empty());
            if !c.is_empty() {
                common.entry(c.clone()).or_insert_with(|| r.species_id.clone());
            }
            if let Some(s) = &s {
                scientific.entry(s.clone()).or_insert_with(|| r.species_id.clone());
            }
            by_id.insert(r.species_id.clone(), (c, s));
        }
        NameResolver { common, scientific, by_id }
    }

    /// Candidate common names, candidate scientific names, then the whole
    /// knowledge base by common and by scientific name.
    pub fn resolve(&self, query_id: &str, raw_text: &str, candidates: &[String]) -> Prediction {
        let needle = normalize_name(raw_text);
        let found = |species: Option<&String>, resolution| Prediction {
            query_id: query_id.to_string(),
            raw_text: raw_text.to_string(),
            resolved_species: species.cloned(),
            resolution,
        };
        if needle.is_empty() {
            return found(None, Resolution::Unresolved);
        }
        let names: Vec<(&String, &(String, Option<String>))> =
            candidates.iter().filter_map(|id| self.by_id.get(id).map(|n| (id, n))).collect();
        if let Some((id, _)) = names.iter().find(|(_, (c, _))| *c == needle) {
            return found(Some(id), Resolution::Exact);
        }
        if let Some((id, _)) = names.iter().find(|(_, (_, s))| s.as_deref() == Some(needle.as_str())) {
            return found(Some(id), Resolution::Scientific);
        }
        if let Some(id) = self.common.get(&needle) {
            return found(Some(id), Resolution::Exact);
        }
        if let Some(id) = self.scientific.get(&needle) {
            return found(Some(id), Resolution::Scientific);
        }
        found(None, Resolution::Unresolved)
    }
}

/// Maps a free-text answer onto a species of `kb`.
pub fn resolve_prediction(query_id: &str, raw_text: &str, candidate_species: &[String], kb: &KnowledgeBase) -> Prediction {
    NameResolver::new(kb).resolve(query_id, raw_text, candidate_species)
}

pub const DEFAULT_MAX_TOKENS: u32 = 64;

/// Prompt, call, resolve. With an empty context the direct name-the-species
/// prompt is used instead.
pub fn classify(
    query_id: &str,
    image_ref: &str,
    context: &[ContextEntry],
    provider: &dyn GenerationProvider,
    template: &PromptTemplate,
    resolver: &NameResolver,
) -> Result<Prediction> {
    let prompt = if context.is_empty() {
        DIRECT_PROMPT.to_string()
    } else {
        assemble_prompt(query_id, image_ref, context, template)?.rendered_prompt
    };
    let response = provider.generate(&GenerationRequest {
        prompt,
        image_ref: Some(image_ref.to_string()),
        max_tokens: DEFAULT_MAX_TOKENS,
    })?;
    let candidates: Vec<String> = context.iter().map(|c| c.species_id.clone()).collect();
    Ok(resolver.resolve(query_id, &response.text, &candidates))
}
