//! Species records, the chunked retrieval corpus, and summary refinement.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::provider::{GenerationProvider, GenerationRequest};

pub const MAX_ANCHORS: usize = 3;

/// One species of the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesRecord {
    pub species_id: String,
    pub common_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scientific_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genus: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_article: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refined_summary: Option<String>,
    #[serde(default)]
    pub anchor_ids: Vec<String>,
}

impl SpeciesRecord {
    pub fn new(species_id: impl Into<String>, common_name: impl Into<String>) -> Self {
        SpeciesRecord {
            species_id: species_id.into(),
            common_name: common_name.into(),
            scientific_name: None,
            genus: None,
            raw_article: None,
            summary: None,
            refined_summary: None,
            anchor_ids: Vec::new(),
        }
    }

    /// The refined summary, if it has at least one word.
    pub fn retrieval_text(&self) -> Option<&str> {
        self.refined_summary.as_deref().filter(|s| !s.trim().is_empty())
    }

    /// Explicit genus, else the first word of the binomial name.
    pub fn genus_name(&self) -> Option<&str> {
        self.genus
            .as_deref()
            .filter(|g| !g.trim().is_empty())
            .or_else(|| self.scientific_name.as_deref().and_then(|s| s.split_whitespace().next()))
    }

    /// Display name: common name, with the scientific name in parentheses when known.
    pub fn display_name(&self) -> String {
        match &self.scientific_name {
            Some(sci) if !sci.trim().is_empty() => format!("{} ({})", self.common_name, sci),
            _ => self.common_name.clone(),
        }
    }
}

/// Validated, immutable collection of species records.
#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    records: Vec<SpeciesRecord>,
    index: HashMap<String, usize>,
    flagged: Vec<String>,
}

/// Builds a knowledge base, enforcing id uniqueness and the anchor limit.
///
/// Records without a refined summary are kept but flagged; they never enter a
/// retrieval corpus.
pub fn ingest_records<I>(records: I) -> Result<KnowledgeBase>
where
    I: IntoIterator<Item = SpeciesRecord>,
{
    let mut out = Vec::new();
    let mut index = HashMap::new();
    let mut flagged = Vec::new();
    for (i, record) in records.into_iter().enumerate() {
        if record.species_id.trim().is_empty() {
            return Err(Error::EmptySpeciesId { index: i });
        }
        if record.anchor_ids.len() > MAX_ANCHORS {
            return Err(Error::TooManyAnchors { id: record.species_id, count: record.anchor_ids.len() });
        }
        if let Some(&first) = index.get(&record.species_id) {
            return Err(Error::DuplicateSpecies { id: record.species_id, first, second: i });
        }
        if record.retrieval_text().is_none() {
            flagged.push(record.species_id.clone());
        }
        index.insert(record.species_id.clone(), i);
        out.push(record);
    }
    if out.is_empty() {
        return Err(Error::EmptyKnowledgeBase);
    }
    Ok(KnowledgeBase { records: out, index, flagged })
}

impl KnowledgeBase {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ingest_records(read_ndjson::<SpeciesRecord>(path.as_ref())?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ndjson(path.as_ref(), &self.records)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[SpeciesRecord] {
        &self.records
    }

    pub fn get(&self, species_id: &str) -> Option<&SpeciesRecord> {
        self.index.get(species_id).map(|&i| &self.records[i])
    }

    pub fn require(&self, species_id: &str) -> Result<&SpeciesRecord> {
        self.get(species_id).ok_or_else(|| Error::UnknownSpecies(species_id.to_string()))
    }

    pub fn contains(&self, species_id: &str) -> bool {
        self.index.contains_key(species_id)
    }

    /// Species ids lacking a refined summary.
    pub fn flagged(&self) -> &[String] {
        &self.flagged
    }

    pub fn into_records(self) -> Vec<SpeciesRecord> {
        self.records
    }
}

/// Splits on runs of whitespace; punctuation stays attached to its word.
pub fn words(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn word_count(text: &str) -> usize {
    words(text).count()
}

/// A contiguous word window of one species' refined summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub species_id: String,
    pub ordinal: usize,
    pub text: String,
    pub word_count: usize,
}

impl Chunk {
    pub fn new(species_id: &str, ordinal: usize, text: String) -> Self {
        Chunk {
            chunk_id: chunk_id(species_id, ordinal),
            species_id: species_id.to_string(),
            ordinal,
            word_count: word_count(&text),
            text,
        }
    }
}

pub fn chunk_id(species_id: &str, ordinal: usize) -> String {
    format!("{species_id}#{ordinal}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub max_chunk_words: usize,
    pub overlap_words: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        ChunkConfig { max_chunk_words: 60, overlap_words: 15 }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_chunk_words == 0 || self.overlap_words >= self.max_chunk_words {
            return Err(Error::InvalidChunkConfig { max: self.max_chunk_words, overlap: self.overlap_words });
        }
        Ok(())
    }

    fn stride(&self) -> usize {
        self.max_chunk_words - self.overlap_words
    }
}

/// Word windows of `max_chunk_words`, each starting `max - overlap` words after
/// the previous one; the last window ends at the final word.
pub fn chunk_text(species_id: &str, text: &str, cfg: &ChunkConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let all: Vec<&str> = words(text).collect();
    let mut chunks = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + cfg.max_chunk_words).min(all.len());
        chunks.push(Chunk::new(species_id, chunks.len(), all[start..end].join(" ")));
        if end >= all.len() {
            break;
        }
        start += cfg.stride();
    }
    Ok(chunks)
}

/// Chunks every retrievable species, in knowledge-base order.
pub fn chunk_corpus(kb: &KnowledgeBase, cfg: &ChunkConfig) -> Result<Vec<Chunk>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for record in kb.records() {
        if let Some(text) = record.retrieval_text() {
            out.extend(chunk_text(&record.species_id, text, cfg)?);
        }
    }
    Ok(out)
}

/// One chunk per species holding only its name.
pub fn names_only_corpus(kb: &KnowledgeBase) -> Vec<Chunk> {
    kb.records().iter().map(|r| Chunk::new(&r.species_id, 0, r.display_name())).collect()
}

pub fn read_chunks(path: impl AsRef<Path>) -> Result<Vec<Chunk>> {
    read_ndjson(path.as_ref())
}

pub fn write_chunks(path: impl AsRef<Path>, chunks: &[Chunk]) -> Result<()> {
    write_ndjson(path.as_ref(), chunks)
}

pub(crate) fn read_ndjson<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub(crate) fn write_ndjson<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).expect("records serialize");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SUMMARIZE_PROMPT: &str = "Summarize the following information about the bird species \u{201c}{species_name}\u{201d} into a concise paragraph. Focus on the key physical characteristics that distinguish this species from other similar bird species. Highlight features like size, beak shape, plumage color patterns, wing shape, and any other unique traits. The summary should be useful for someone trying to identify the bird species from a photograph.\n\n{article}";

pub const REFINE_PROMPT: &str = "Given the following summary of a bird species, extract and refine only the visual attributes that describe its appearance. Focus on characteristics such as color patterns, beak shape, eye color, wing shape, tail length, size, markings, and other distinguishing physical features. Ensure the output is concise, well-structured, and contains only relevant physical descriptions.\n\n{summary}";

/// The two refinement templates. `summarize_template` takes `{species_name}`
/// and `{article}`; `refine_template` takes `{summary}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementPromptSet {
    summarize_template: String,
    refine_template: String,
}

impl Default for RefinementPromptSet {
    fn default() -> Self {
        RefinementPromptSet::new(SUMMARIZE_PROMPT, REFINE_PROMPT).expect("built-in templates are valid")
    }
}

impl RefinementPromptSet {
    pub fn new(summarize: impl Into<String>, refine: impl Into<String>) -> Result<Self> {
        let summarize_template = summarize.into();
        let refine_template = refine.into();
        check_slots(&summarize_template, &["article", "species_name"])?;
        check_slots(&refine_template, &["summary"])?;
        Ok(RefinementPromptSet { summarize_template, refine_template })
    }

    pub fn summarize(&self, species_name: &str, article: &str) -> String {
        self.summarize_template.replacen("{species_name}", species_name, 1).replacen("{article}", article, 1)
    }

    pub fn refine(&self, summary: &str) -> String {
        self.refine_template.replacen("{summary}", summary, 1)
    }
}

/// Every `{name}` slot in `template`, in order of appearance.
pub(crate) fn placeholders(template: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if after[..close].chars().all(|c| c.is_ascii_alphanumeric() || c == '_') && close > 0 => {
                out.push(&after[..close]);
                rest = &after[close + 1..];
            }
            _ => rest = after,
        }
    }
    out
}

fn check_slots(template: &str, expected: &[&str]) -> Result<()> {
    let mut found = placeholders(template);
    found.sort_unstable();
    if found != expected {
        return Err(Error::InvalidConfig(format!(
            "template slots {found:?} do not match the required {expected:?}"
        )));
    }
    Ok(())
}

/// Word counts of one record across the refinement stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageWordCounts {
    pub species_id: String,
    pub raw_words: Option<usize>,
    pub summary_words: usize,
    pub refined_words: usize,
}

/// Thread-safe collector of per-record word counts.
#[derive(Debug, Default)]
pub struct RefinementTelemetry {
    entries: Mutex<Vec<StageWordCounts>>,
}

impl RefinementTelemetry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, counts: StageWordCounts) {
        self.entries.lock().expect("telemetry lock").push(counts);
    }

    /// Entries sorted by species id.
    pub fn snapshot(&self) -> Vec<StageWordCounts> {
        let mut out = self.entries.lock().expect("telemetry lock").clone();
        out.sort_by(|a, b| a.species_id.cmp(&b.species_id));
        out
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("telemetry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Mean (raw, summary, refined) word counts; raw averages only records with an article.
    pub fn averages(&self) -> Option<(Option<f64>, f64, f64)> {
        let entries = self.snapshot();
        if entries.is_empty() {
            return None;
        }
        let n = entries.len() as f64;
        let raws: Vec<usize> = entries.iter().filter_map(|e| e.raw_words).collect();
        let raw = (!raws.is_empty()).then(|| raws.iter().sum::<usize>() as f64 / raws.len() as f64);
        let summary = entries.iter().map(|e| e.summary_words).sum::<usize>() as f64 / n;
        let refined = entries.iter().map(|e| e.refined_words).sum::<usize>() as f64 / n;
        Some((raw, summary, refined))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefineOptions {
    /// Regenerate fields that are already populated.
    pub force: bool,
    pub max_tokens: u32,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { force: false, max_tokens: 512 }
    }
}

/// Runs the summarize and refine stages for one record.
///
/// Populated fields are kept unless `opts.force` is set; a fully refined record
/// comes back unchanged and leaves the telemetry untouched.
pub fn refine_summary(
    record: &SpeciesRecord,
    provider: &dyn GenerationProvider,
    prompts: &RefinementPromptSet,
    opts: &RefineOptions,
    telemetry: &RefinementTelemetry,
) -> Result<SpeciesRecord> {
    let has = |f: &Option<String>| f.as_deref().is_some_and(|s| !s.trim().is_empty());
    if !opts.force && has(&record.refined_summary) {
        return Ok(record.clone());
    }
    let mut out = record.clone();

    if opts.force || !has(&record.summary) {
        let article = record
            .raw_article
            .as_deref()
            .filter(|a| !a.trim().is_empty())
            .ok_or_else(|| Error::MissingField { species_id: record.species_id.clone(), field: "raw_article" })?;
        let prompt = prompts.summarize(&record.common_name, article);
        out.summary = Some(generate(provider, prompt, opts.max_tokens)?);
    }
    let summary = out.summary.clone().expect("summary populated above");
    out.refined_summary = Some(generate(provider, prompts.refine(&summary), opts.max_tokens)?);

    telemetry.record(StageWordCounts {
        species_id: record.species_id.clone(),
        raw_words: record.raw_article.as_deref().map(word_count),
        summary_words: word_count(&summary),
        refined_words: out.refined_summary.as_deref().map_or(0, word_count),
    });
    Ok(out)
}

fn generate(provider: &dyn GenerationProvider, prompt: String, max_tokens: u32) -> Result<String> {
    let response = provider.generate(&GenerationRequest { prompt, image_ref: None, max_tokens })?;
    let text = response.text.trim();
    if text.is_empty() {
        return Err(crate::ProviderError::EmptyResponse.into());
    }
    Ok(text.to_string())
}

/// Refines every record concurrently and re-ingests the result.
pub fn refine_all(
    kb: &KnowledgeBase,
    provider: &dyn GenerationProvider,
    prompts: &RefinementPromptSet,
    opts: &RefineOptions,
    telemetry: &RefinementTelemetry,
) -> Result<KnowledgeBase> {
    let refined: Result<Vec<SpeciesRecord>> = kb
        .records()
        .par_iter()
        .map(|r| refine_summary(r, provider, prompts, opts, telemetry))
        .collect();
    ingest_records(refined?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::provider::StubProvider;
    use proptest::prelude::*;

    fn record(id: &str, name: &str, summary: Option<&str>) -> SpeciesRecord {
        let mut r = SpeciesRecord::new(id, name);
        r.refined_summary = summary.map(str::to_string);
        r
    }

    fn numbered(n: usize) -> String {
        (0..n).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" ")
    }

    #[test]
    fn ingest_three_records() {
        let kb = ingest_records(vec![
            record("a", "A", Some("x y")),
            record("b", "B", Some("z")),
            record("c", "C", Some("q")),
        ])
        .unwrap();
        assert_eq!(kb.len(), 3);
        assert!(kb.flagged().is_empty());
    }

    #[test]
    fn duplicate_id_names_both_records() {
        let err = ingest_records(vec![
            record("izu-thrush", "Izu thrush", Some("a")),
            record("other", "Other", Some("b")),
            record("izu-thrush", "Izu thrush again", Some("c")),
        ])
        .unwrap_err();
        match err {
            Error::DuplicateSpecies { id, first, second } => {
                assert_eq!(id, "izu-thrush");
                assert_eq!((first, second), (0, 2));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_stream_and_anchor_limit() {
        assert!(matches!(ingest_records(Vec::new()), Err(Error::EmptyKnowledgeBase)));
        let mut r = record("a", "A", Some("x"));
        r.anchor_ids = vec!["1".into(), "2".into(), "3".into(), "4".into()];
        assert!(matches!(ingest_records(vec![r]), Err(Error::TooManyAnchors { count: 4, .. })));
    }

    #[test]
    fn records_without_refined_summary_are_flagged_not_dropped() {
        let kb = ingest_records(vec![record("a", "A", Some("x")), record("b", "B", None), record("c", "C", Some("  "))])
            .unwrap();
        assert_eq!(kb.len(), 3);
        assert_eq!(kb.flagged(), ["b", "c"]);
        let chunks = chunk_corpus(&kb, &ChunkConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].species_id, "a");
    }

    #[test]
    fn seventy_six_words_make_two_windows() {
        let text = numbered(76);
        let chunks = chunk_text("sp", &text, &ChunkConfig { max_chunk_words: 60, overlap_words: 15 }).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, (0..60).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
        assert_eq!(chunks[1].text, (45..76).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
        assert_eq!(chunks[1].chunk_id, "sp#1");
        assert_eq!((chunks[0].word_count, chunks[1].word_count), (60, 31));
    }

    #[test]
    fn short_summary_is_one_chunk() {
        let text = numbered(40);
        let chunks = chunk_text("sp", &text, &ChunkConfig::default()).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
        assert_eq!(chunks[0].ordinal, 0);
    }

    #[test]
    fn invalid_chunk_configs() {
        for (max, overlap) in [(0, 0), (10, 10), (10, 11)] {
            let cfg = ChunkConfig { max_chunk_words: max, overlap_words: overlap };
            assert!(matches!(chunk_text("s", "a b", &cfg), Err(Error::InvalidChunkConfig { .. })));
        }
    }

    #[test]
    fn words_keep_punctuation() {
        let got: Vec<_> = words("  Bright-red bill,\tblack\n mask. ").collect();
        assert_eq!(got, ["Bright-red", "bill,", "black", "mask."]);
    }

    #[test]
    fn names_only_chunks() {
        let mut dove = SpeciesRecord::new("orange-dove", "Orange dove");
        dove.scientific_name = Some("Ptilinopus victor".into());
        let plain = SpeciesRecord::new("plain", "Plain bird");
        let kb = ingest_records(vec![dove, plain]).unwrap();
        let chunks = names_only_corpus(&kb);
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].text, "Orange dove (Ptilinopus victor)");
        assert_eq!(chunks[0].chunk_id, "orange-dove#0");
        assert_eq!(chunks[1].text, "Plain bird");
    }

    #[test]
    fn genus_falls_back_to_binomial() {
        let mut r = SpeciesRecord::new("pd", "Philippine duck");
        assert_eq!(r.genus_name(), None);
        r.scientific_name = Some("Anas luzonica".into());
        assert_eq!(r.genus_name(), Some("Anas"));
        r.genus = Some("Mareca".into());
        assert_eq!(r.genus_name(), Some("Mareca"));
    }

    #[test]
    fn builtin_templates_have_declared_slots() {
        let p = RefinementPromptSet::default();
        let s = p.summarize("Izu thrush", "ARTICLE");
        assert!(s.starts_with("Summarize the following information about the bird species \u{201c}Izu thrush\u{201d}"));
        assert!(s.ends_with("\n\nARTICLE"));
        assert!(p.refine("SUMMARY").contains("extract and refine only the visual attributes"));
        assert!(RefinementPromptSet::new("{species_name}", "{summary}").is_err());
        assert!(RefinementPromptSet::new("{species_name} {article} {extra}", "{summary}").is_err());
        assert!(RefinementPromptSet::new("{article}{species_name}", "{summary}{summary}").is_err());
        assert_eq!(placeholders("a {x} {not a slot} {} {y_1}"), ["x", "y_1"]);
    }

    #[test]
    fn refine_with_echo_stub() {
        let mut r = SpeciesRecord::new("sp", "Some bird");
        r.raw_article = Some(numbered(552));
        let telemetry = RefinementTelemetry::new();
        let stub = StubProvider::Echo { words: 50 };
        let out = refine_summary(&r, &stub, &RefinementPromptSet::default(), &RefineOptions::default(), &telemetry)
            .unwrap();
        assert_eq!(out.summary.as_deref(), Some(numbered(50).as_str()));
        assert_eq!(out.refined_summary.as_deref(), Some(numbered(50).as_str()));
        assert_eq!(
            telemetry.snapshot(),
            vec![StageWordCounts { species_id: "sp".into(), raw_words: Some(552), summary_words: 50, refined_words: 50 }]
        );
    }

    #[test]
    fn refine_is_idempotent_unless_forced() {
        let mut r = record("sp", "Bird", Some("already done"));
        r.summary = Some("older summary".into());
        r.raw_article = Some("a b c".into());
        let telemetry = RefinementTelemetry::new();
        let stub = StubProvider::Echo { words: 50 };
        let prompts = RefinementPromptSet::default();
        let out = refine_summary(&r, &stub, &prompts, &RefineOptions::default(), &telemetry).unwrap();
        assert_eq!(out, r);
        assert!(telemetry.is_empty());

        let forced = RefineOptions { force: true, ..Default::default() };
        let out = refine_summary(&r, &stub, &prompts, &forced, &telemetry).unwrap();
        assert_eq!(out.summary.as_deref(), Some("a b c"));
        assert_eq!(telemetry.len(), 1);
    }

    #[test]
    fn refine_errors() {
        let telemetry = RefinementTelemetry::new();
        let prompts = RefinementPromptSet::default();
        let opts = RefineOptions::default();
        let bare = SpeciesRecord::new("sp", "Bird");
        let err = refine_summary(&bare, &StubProvider::Echo { words: 5 }, &prompts, &opts, &telemetry).unwrap_err();
        assert!(matches!(err, Error::MissingField { field: "raw_article", .. }));

        let mut r = SpeciesRecord::new("sp", "Bird");
        r.raw_article = Some("text".into());
        let err = refine_summary(&r, &StubProvider::Fixed("   ".into()), &prompts, &opts, &telemetry).unwrap_err();
        assert!(matches!(err, Error::Provider(crate::ProviderError::EmptyResponse)));

        let err = refine_summary(&r, &StubProvider::Failing { message: "down".into() }, &prompts, &opts, &telemetry)
            .unwrap_err();
        assert!(matches!(err, Error::Provider(crate::ProviderError::Failed { attempts: 1, .. })));
    }

    #[test]
    fn summary_only_record_runs_stage_two() {
        let mut r = SpeciesRecord::new("sp", "Bird");
        r.summary = Some("red cap, white belly".into());
        let telemetry = RefinementTelemetry::new();
        let out = refine_summary(
            &r,
            &StubProvider::Echo { words: 2 },
            &RefinementPromptSet::default(),
            &RefineOptions::default(),
            &telemetry,
        )
        .unwrap();
        assert_eq!(out.refined_summary.as_deref(), Some("red cap,"));
        assert_eq!(telemetry.snapshot()[0].raw_words, None);
    }

    #[test]
    fn kb_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.ndjson");
        let mut r = record("a", "A", Some("x y"));
        r.anchor_ids = vec!["a@0".into()];
        r.genus = Some("G".into());
        let kb = ingest_records(vec![r, record("b", "B", None)]).unwrap();
        kb.write(&path).unwrap();
        let back = KnowledgeBase::load(&path).unwrap();
        assert_eq!(back.records(), kb.records());
        assert_eq!(back.flagged(), ["b"]);
    }

    proptest! {
        #[test]
        fn windows_reconstruct_the_summary(n in 1usize..500, max in 1usize..80, overlap_frac in 0.0f64..1.0) {
            let overlap = ((max as f64) * overlap_frac) as usize % max;
            let cfg = ChunkConfig { max_chunk_words: max, overlap_words: overlap };
            let text = numbered(n);
            let chunks = chunk_text("sp", &text, &cfg).unwrap();
            let mut rebuilt: Vec<String> = Vec::new();
            for (i, c) in chunks.iter().enumerate() {
                prop_assert_eq!(c.ordinal, i);
                prop_assert!(c.word_count <= max && c.word_count >= 1);
                let skip = if i == 0 { 0 } else { overlap };
                rebuilt.extend(words(&c.text).skip(skip).map(str::to_string));
            }
            prop_assert_eq!(rebuilt.join(" "), text.clone());
            prop_assert_eq!(chunk_text("sp", &text, &cfg).unwrap(), chunks);
        }
    }
}
