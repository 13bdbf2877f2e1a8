//! Anchor-based visual re-ranking and context selection.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, QueryInput};
use crate::error::{Error, Result};
use crate::knowledge_base::{KnowledgeBase, SpeciesRecord};
use crate::retrieval::{rank_order, ScoredCandidate};
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorAggregation {
    #[default]
    Mean,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig<S> {
    pub intra_encoder_id: String,
    pub k: usize,
    #[serde(default)]
    pub anchor_aggregation: AnchorAggregation,
    /// `s_i` for species that have no anchors.
    pub missing_anchor_score: S,
}

impl<S: Scalar> RerankConfig<S> {
    pub const DEFAULT_K: usize = 10;

    pub fn new(intra_encoder_id: impl Into<String>) -> Self {
        RerankConfig {
            intra_encoder_id: intra_encoder_id.into(),
            k: Self::DEFAULT_K,
            anchor_aggregation: AnchorAggregation::Mean,
            missing_anchor_score: S::zero(),
        }
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.k > m {
            return Err(Error::InvalidConfig(format!("k = {} exceeds m = {m}", self.k)));
        }
        Ok(())
    }
}

/// Similarity of the query to a species' anchor images under the intra-modal
/// encoder, aggregated over the anchors.
pub fn intra_score<S: Scalar>(
    query: &QueryInput,
    species: &SpeciesRecord,
    store: &EmbeddingStore,
    cfg: &RerankConfig<S>,
) -> Result<S> {
    let h_q = query.intra_modal.as_deref().ok_or_else(|| Error::MissingEmbedding {
        encoder_id: cfg.intra_encoder_id.clone(),
        item_id: query.query_id.clone(),
    })?;
    if species.anchor_ids.is_empty() {
        return Ok(cfg.missing_anchor_score);
    }
    let segment = store.segment(&cfg.intra_encoder_id)?;
    let mut sims = Vec::with_capacity(species.anchor_ids.len());
    for anchor_id in &species.anchor_ids {
        let h_a = segment.get(anchor_id).ok_or_else(|| Error::MissingAnchor {
            species_id: species.species_id.clone(),
            anchor_id: anchor_id.clone(),
        })?;
        if h_a.len() != h_q.len() {
            return Err(Error::DimMismatch { item_id: query.query_id.clone(), expected: h_a.len(), found: h_q.len() });
        }
        sims.push(dot::<S>(h_q, h_a));
    }
    Ok(match cfg.anchor_aggregation {
        AnchorAggregation::Mean => crate::scalar::mean(&sims).expect("non-empty"),
        AnchorAggregation::Max => sims.into_iter().fold(S::neg_infinity(), S::max),
    })
}

/// Adds each candidate's species-level `s_i` to its `s_c` and re-sorts by the
/// sum, ties by ascending chunk id. Returns every candidate.
pub fn rerank<S: Scalar>(
    candidates: &[ScoredCandidate<S>],
    query: &QueryInput,
    kb: &KnowledgeBase,
    store: &EmbeddingStore,
    cfg: &RerankConfig<S>,
) -> Result<Vec<ScoredCandidate<S>>> {
    if candidates.is_empty() {
        return Err(Error::EmptyScores);
    }
    let mut per_species: HashMap<&str, S> = HashMap::new();
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let s_i = match per_species.get(c.species_id.as_str()) {
            Some(&v) => v,
            None => {
                let v = intra_score(query, kb.require(&c.species_id)?, store, cfg)?;
                per_species.insert(&c.species_id, v);
                v
            }
        };
        out.push(ScoredCandidate { s_i, s: c.s_c + s_i, ..c.clone() });
    }
    out.sort_unstable_by(|a, b| rank_order(a.s, &a.chunk_id, b.s, &b.chunk_id));
    Ok(out)
}

/// The first `k` entries of a ranked list.
pub fn top_k<S: Clone>(ranked: &[ScoredCandidate<S>], k: usize) -> Vec<ScoredCandidate<S>> {
    ranked[..k.min(ranked.len())].to_vec()
}

/// What the generator sees for each candidate species.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextKind {
    Names,
    Chunks,
    #[default]
    Summaries,
}

impl std::fmt::Display for ContextKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ContextKind::Names => "names",
            ContextKind::Chunks => "chunks",
            ContextKind::Summaries => "summaries",
        })
    }
}

impl std::str::FromStr for ContextKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "names" => Ok(ContextKind::Names),
            "chunks" => Ok(ContextKind::Chunks),
            "summaries" | "full" => Ok(ContextKind::Summaries),
            _ => Err(Error::InvalidConfig(format!("unknown context type `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEntry {
    pub species_id: String,
    pub common_name: String,
    /// Empty for name-only context.
    pub text: String,
}

/// Distinct species of the top `k` chunks in first-appearance order, each with
/// its full refined summary.
pub fn select_context<S>(reranked: &[ScoredCandidate<S>], k: usize, kb: &KnowledgeBase) -> Result<Vec<ContextEntry>> {
    select_context_as(reranked, k, kb, ContextKind::Summaries, |_: &str| None)
}

/// Like [`select_context`], with the per-species text chosen by `kind`. For
/// [`ContextKind::Chunks`] the texts of that species' chunks among the top `k`
/// are joined in rank order, looked up through `chunk_text`.
pub fn select_context_as<'a, S, F>(
    reranked: &[ScoredCandidate<S>],
    k: usize,
    kb: &KnowledgeBase,
    kind: ContextKind,
    chunk_text: F,
) -> Result<Vec<ContextEntry>>
where
    F: Fn(&str) -> Option<&'a str>,
{
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let top = &reranked[..k.min(reranked.len())];
    let mut order: Vec<&str> = Vec::new();
    let mut pieces: HashMap<&str, Vec<&str>> = HashMap::new();
    for c in top {
        let entry = pieces.entry(&c.species_id).or_insert_with(|| {
            order.push(&c.species_id);
            Vec::new()
        });
        if kind == ContextKind::Chunks {
            let text = chunk_text(&c.chunk_id).ok_or_else(|| Error::MissingEmbedding {
                encoder_id: "<chunk text>".into(),
                item_id: c.chunk_id.clone(),
            })?;
            entry.push(text);
        }
    }
    order
        .into_iter()
        .map(|species_id| {
            let record = kb.require(species_id)?;
            let text = match kind {
                ContextKind::Names => String::new(),
                ContextKind::Chunks => pieces[species_id].join(" "),
                ContextKind::Summaries => record
                    .retrieval_text()
                    .ok_or_else(|| Error::MissingField {
                        species_id: species_id.to_string(),
                        field: "refined_summary",
                    })?
                    .to_string(),
            };
            Ok(ContextEntry { species_id: species_id.to_string(), common_name: record.common_name.clone(), text })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Segment;
    use crate::knowledge_base::{ingest_records, SpeciesRecord};
    use proptest::prelude::*;

    fn species(id: &str, anchors: &[&str]) -> SpeciesRecord {
        let mut r = SpeciesRecord::new(id, format!("{id} bird"));
        r.refined_summary = Some(format!("summary of {id}"));
        r.anchor_ids = anchors.iter().map(|a| a.to_string()).collect();
        r
    }

    fn query(intra: Vec<f32>) -> QueryInput {
        QueryInput { query_id: "q".into(), intra_modal: Some(intra), ..Default::default() }
    }

    fn cand(chunk: &str, species: &str, s_c: f64) -> ScoredCandidate<f64> {
        ScoredCandidate { chunk_id: chunk.into(), species_id: species.into(), s_c, s_i: 0.0, s: s_c }
    }

    /// Anchors whose cosine with the query e0 = (1, 0) is 0.2, 0.4 and 0.6.
    fn store() -> EmbeddingStore {
        let mut seg = Segment::new("dino", 2);
        for (id, c) in [("a1", 0.2_f64), ("a2", 0.4), ("a3", 0.6)] {
            seg.push(id, vec![c as f32, (1.0 - c * c).sqrt() as f32]).unwrap();
        }
        seg.push("same", vec![1.0, 0.0]).unwrap();
        let mut store = EmbeddingStore::new();
        store.insert(seg).unwrap();
        store
    }

    #[test]
    fn intra_score_examples() {
        let store = store();
        let q = query(vec![1.0, 0.0]);
        let cfg = RerankConfig::<f64>::new("dino");
        assert_eq!(intra_score(&q, &species("s", &["same"]), &store, &cfg).unwrap(), 1.0);
        assert_eq!(intra_score(&q, &species("s", &[]), &store, &cfg).unwrap(), 0.0);
        let three = species("s", &["a1", "a2", "a3"]);
        let mean = intra_score(&q, &three, &store, &cfg).unwrap();
        assert!((mean - 0.4).abs() < 1e-7);
        let max_cfg = RerankConfig { anchor_aggregation: AnchorAggregation::Max, ..cfg.clone() };
        assert!((intra_score(&q, &three, &store, &max_cfg).unwrap() - 0.6).abs() < 1e-7);
        let custom = RerankConfig { missing_anchor_score: -0.25, ..cfg.clone() };
        assert_eq!(intra_score(&q, &species("s", &[]), &store, &custom).unwrap(), -0.25);

        let err = intra_score(&q, &species("s", &["ghost"]), &store, &cfg).unwrap_err();
        assert!(matches!(err, Error::MissingAnchor { ref anchor_id, .. } if anchor_id == "ghost"));
        let no_vec = QueryInput { query_id: "q".into(), ..Default::default() };
        assert!(matches!(intra_score(&no_vec, &species("s", &[]), &store, &cfg), Err(Error::MissingEmbedding { .. })));
    }

    #[test]
    fn rerank_adds_and_resorts() {
        let store = store();
        let kb = ingest_records(vec![species("x", &[]), species("y", &["same"])]).unwrap();
        let q = query(vec![1.0, 0.0]);
        let cfg = RerankConfig::<f64>::new("dino");
        let cands = vec![cand("x#0", "x", 0.9), cand("y#0", "y", 0.5), cand("y#1", "y", -0.3)];
        let out = rerank(&cands, &q, &kb, &store, &cfg).unwrap();
        let ids: Vec<_> = out.iter().map(|c| c.chunk_id.as_str()).collect();
        assert_eq!(ids, ["y#0", "x#0", "y#1"]);
        assert_eq!(out[0].s, 1.5);
        assert_eq!(out[0].s_i, 1.0);
        assert_eq!(out[1].s_i, 0.0);
        assert!(matches!(rerank::<f64>(&[], &q, &kb, &store, &cfg), Err(Error::EmptyScores)));
    }

    #[test]
    fn combined_score_example() {
        let c = cand("a#0", "a", 0.5);
        let s_i = 0.3;
        assert_eq!(c.s_c + s_i, 0.8);
    }

    #[test]
    fn context_dedup_and_kinds() {
        let kb = ingest_records((0..8).map(|i| species(&format!("s{i}"), &[]))).unwrap();
        let order = ["s3", "s1", "s3", "s0", "s5", "s1", "s6", "s2", "s4", "s4", "s7"];
        let ranked: Vec<_> = order.iter().enumerate().map(|(i, s)| cand(&format!("{s}#{i}"), s, 1.0 - i as f64 * 0.01)).collect();

        let ctx = select_context(&ranked, 10, &kb).unwrap();
        let got: Vec<_> = ctx.iter().map(|c| c.species_id.as_str()).collect();
        assert_eq!(got, ["s3", "s1", "s0", "s5", "s6", "s2", "s4"]);
        assert_eq!(ctx[0].text, "summary of s3");
        assert_eq!(ctx[0].common_name, "s3 bird");

        let one = select_context(&ranked, 1, &kb).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].species_id, "s3");
        assert!(select_context(&ranked, 0, &kb).is_err());

        let names = select_context_as(&ranked, 3, &kb, ContextKind::Names, |_| None).unwrap();
        assert!(names.iter().all(|c| c.text.is_empty()));
        let texts: HashMap<String, String> = ranked.iter().map(|c| (c.chunk_id.clone(), format!("<{}>", c.chunk_id))).collect();
        let chunks = select_context_as(&ranked, 3, &kb, ContextKind::Chunks, |id| texts.get(id).map(String::as_str)).unwrap();
        assert_eq!(chunks[0].text, "<s3#0> <s3#2>");
        assert_eq!(chunks[1].text, "<s1#1>");
    }

    #[test]
    fn missing_summary_is_an_error() {
        let mut bare = SpeciesRecord::new("b", "B");
        bare.refined_summary = None;
        let kb = ingest_records(vec![bare]).unwrap();
        let err = select_context(&[cand("b#0", "b", 1.0)], 1, &kb).unwrap_err();
        assert!(matches!(err, Error::MissingField { field: "refined_summary", .. }));
    }

    #[test]
    fn k_must_not_exceed_m() {
        let cfg = RerankConfig::<f64>::new("dino");
        assert!(cfg.validate(30).is_ok());
        assert!(cfg.validate(5).is_err());
        assert!(RerankConfig::<f32> { k: 0, ..RerankConfig::new("d") }.validate(3).is_err());
    }

    proptest! {
        #[test]
        fn constant_shift_keeps_order(scores in prop::collection::vec(-1.0f64..1.0, 1..30), k in 1usize..30) {
            let mut seg = Segment::new("dino", 2);
            seg.push("shared", vec![0.6, 0.8]).unwrap();
            let mut store = EmbeddingStore::new();
            store.insert(seg).unwrap();
            let kb = ingest_records((0..scores.len()).map(|i| species(&format!("s{i:02}"), &["shared"]))).unwrap();
            let mut cands: Vec<_> = scores.iter().enumerate().map(|(i, &s)| cand(&format!("s{i:02}#0"), &format!("s{i:02}"), s)).collect();
            cands.sort_by(|a, b| rank_order(a.s_c, &a.chunk_id, b.s_c, &b.chunk_id));
            let q = query(vec![1.0, 0.0]);
            let out = rerank(&cands, &q, &kb, &store, &RerankConfig::new("dino")).unwrap();
            let before: Vec<_> = cands.iter().map(|c| &c.chunk_id).collect();
            let after: Vec<_> = out.iter().map(|c| &c.chunk_id).collect();
            prop_assert_eq!(before, after);
            for c in &out {
                prop_assert!((c.s - (c.s_c + c.s_i)).abs() <= 1e-9);
            }
            let kept = top_k(&out, k);
            prop_assert_eq!(kept.len(), k.min(cands.len()));
            prop_assert!(kept.iter().all(|c| cands.iter().any(|d| d.chunk_id == c.chunk_id)));
        }
    }
}
