//! Cross-modal chunk scoring, ensemble averaging and top-m selection.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingStore, QueryInput, Segment};
use crate::error::{Error, Result};
use crate::knowledge_base::Chunk;
use crate::scalar::{dot, Scalar};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "species")]
pub enum VocabularyScope {
    #[default]
    Open,
    /// Only chunks of these species are scored.
    Bounded(BTreeSet<String>),
}

impl VocabularyScope {
    pub fn admits(&self, species_id: &str) -> bool {
        match self {
            VocabularyScope::Open => true,
            VocabularyScope::Bounded(set) => set.contains(species_id),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub encoder_ids: Vec<String>,
    pub m: usize,
    #[serde(default)]
    pub scope: VocabularyScope,
}

impl RetrievalConfig {
    pub const DEFAULT_M: usize = 30;

    pub fn new(encoder_ids: impl IntoIterator<Item = impl Into<String>>) -> Self {
        RetrievalConfig {
            encoder_ids: encoder_ids.into_iter().map(Into::into).collect(),
            m: Self::DEFAULT_M,
            scope: VocabularyScope::Open,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_ids.is_empty() {
            return Err(Error::InvalidConfig("at least one cross-modal encoder is required".into()));
        }
        let distinct: BTreeSet<&String> = self.encoder_ids.iter().collect();
        if distinct.len() != self.encoder_ids.len() {
            return Err(Error::InvalidConfig(format!("repeated encoder in {:?}", self.encoder_ids)));
        }
        if self.m == 0 {
            return Err(Error::InvalidConfig("m must be at least 1".into()));
        }
        if matches!(&self.scope, VocabularyScope::Bounded(s) if s.is_empty()) {
            return Err(Error::InvalidConfig("bounded vocabulary scope is empty".into()));
        }
        Ok(())
    }

    /// Encoder ids in the fixed order scores are summed in.
    pub fn canonical_encoders(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = self.encoder_ids.iter().map(String::as_str).collect();
        ids.sort_unstable();
        ids
    }
}

/// A chunk with its cross-modal (`s_c`), intra-modal (`s_i`) and combined (`s`) scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<S> {
    pub chunk_id: String,
    pub species_id: String,
    pub s_c: S,
    pub s_i: S,
    pub s: S,
}

impl<S: Scalar> ScoredCandidate<S> {
    pub fn retrieved(chunk: &Chunk, s_c: S) -> Self {
        ScoredCandidate {
            chunk_id: chunk.chunk_id.clone(),
            species_id: chunk.species_id.clone(),
            s_c,
            s_i: S::zero(),
            s: s_c,
        }
    }
}

/// Descending by score, then ascending by chunk id.
pub fn rank_order<S: Scalar>(a_score: S, a_id: &str, b_score: S, b_id: &str) -> Ordering {
    b_score.partial_cmp(&a_score).unwrap_or(Ordering::Equal).then_with(|| a_id.cmp(b_id))
}

/// `cosine(g(q), f(t))` for one encoder.
pub fn score_chunk<S: Scalar>(
    query: &QueryInput,
    chunk_id: &str,
    encoder_id: &str,
    store: &EmbeddingStore,
) -> Result<S> {
    let q = query.cross(encoder_id)?;
    let t = store.vector(encoder_id, chunk_id)?;
    if q.len() != t.len() {
        return Err(Error::DimMismatch { item_id: query.query_id.clone(), expected: t.len(), found: q.len() });
    }
    Ok(dot(q, t))
}

/// A chunk corpus resolved against its embeddings, so every (encoder, chunk)
/// pair is known to exist before any query is scored.
#[derive(Debug, Clone)]
pub struct RetrievalIndex<'a> {
    chunks: &'a [Chunk],
    encoders: Vec<EncoderRows<'a>>,
}

#[derive(Debug, Clone)]
struct EncoderRows<'a> {
    encoder_id: String,
    segment: &'a Segment,
    rows: Vec<usize>,
}

impl<'a> RetrievalIndex<'a> {
    pub fn build(chunks: &'a [Chunk], store: &'a EmbeddingStore, encoder_ids: &[String]) -> Result<Self> {
        let mut encoders = Vec::with_capacity(encoder_ids.len());
        for enc in encoder_ids {
            let segment = store.segment(enc)?;
            let index: std::collections::HashMap<&str, usize> =
                segment.ids().iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
            let rows = chunks
                .iter()
                .map(|c| {
                    index.get(c.chunk_id.as_str()).copied().ok_or_else(|| Error::MissingEmbedding {
                        encoder_id: enc.clone(),
                        item_id: c.chunk_id.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            encoders.push(EncoderRows { encoder_id: enc.clone(), segment, rows });
        }
        Ok(RetrievalIndex { chunks, encoders })
    }

    pub fn chunks(&self) -> &'a [Chunk] {
        self.chunks
    }

    fn encoder(&self, encoder_id: &str) -> Result<&EncoderRows<'a>> {
        self.encoders
            .iter()
            .find(|e| e.encoder_id == encoder_id)
            .ok_or_else(|| Error::UnknownEncoder(encoder_id.to_string()))
    }

    /// Mean over `cfg.encoder_ids` of the per-encoder cosine, for every chunk
    /// admitted by the scope, in corpus order.
    pub fn ensemble_scores<S: Scalar>(&self, query: &QueryInput, cfg: &RetrievalConfig) -> Result<Vec<ScoredCandidate<S>>> {
        cfg.validate()?;
        let mut members = Vec::new();
        for enc in cfg.canonical_encoders() {
            let rows = self.encoder(enc)?;
            let q = query.cross(enc)?;
            if q.len() != rows.segment.dim() {
                return Err(Error::DimMismatch {
                    item_id: query.query_id.clone(),
                    expected: rows.segment.dim(),
                    found: q.len(),
                });
            }
            members.push((rows, q));
        }
        let n = S::count(members.len());
        let mut out = Vec::new();
        for (i, chunk) in self.chunks.iter().enumerate() {
            if !cfg.scope.admits(&chunk.species_id) {
                continue;
            }
            let mut total = S::zero();
            for (rows, q) in &members {
                total = total + dot::<S>(q, rows.segment.row(rows.rows[i]));
            }
            out.push(ScoredCandidate::retrieved(chunk, total / n));
        }
        Ok(out)
    }

    /// Per-encoder cosine for one chunk of the index.
    pub fn encoder_score<S: Scalar>(&self, query: &QueryInput, chunk_pos: usize, encoder_id: &str) -> Result<S> {
        let rows = self.encoder(encoder_id)?;
        Ok(dot(query.cross(encoder_id)?, rows.segment.row(rows.rows[chunk_pos])))
    }
}

/// The `m` best candidates by `s_c`, ties broken by ascending chunk id.
pub fn top_m<S: Scalar>(mut scores: Vec<ScoredCandidate<S>>, m: usize) -> Result<Vec<ScoredCandidate<S>>> {
    if m == 0 {
        return Err(Error::InvalidConfig("m must be at least 1".into()));
    }
    if scores.is_empty() {
        return Err(Error::EmptyScores);
    }
    let cmp = |a: &ScoredCandidate<S>, b: &ScoredCandidate<S>| rank_order(a.s_c, &a.chunk_id, b.s_c, &b.chunk_id);
    if m < scores.len() {
        scores.select_nth_unstable_by(m - 1, cmp);
        scores.truncate(m);
    }
    scores.sort_unstable_by(cmp);
    Ok(scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::Segment;
    use proptest::prelude::*;

    fn cand(id: &str, s_c: f64) -> ScoredCandidate<f64> {
        ScoredCandidate { chunk_id: id.into(), species_id: id.into(), s_c, s_i: 0.0, s: s_c }
    }

    fn ids<S>(v: &[ScoredCandidate<S>]) -> Vec<&str> {
        v.iter().map(|c| c.chunk_id.as_str()).collect()
    }

    #[test]
    fn top_m_examples() {
        let got = top_m(vec![cand("a", 0.9), cand("b", 0.5), cand("c", 0.7)], 2).unwrap();
        assert_eq!(ids(&got), ["a", "c"]);
        let got = top_m(vec![cand("b", 0.5), cand("a", 0.5)], 1).unwrap();
        assert_eq!(ids(&got), ["a"]);
        let got = top_m(vec![cand("b", 0.5), cand("a", 0.5)], 10).unwrap();
        assert_eq!(ids(&got), ["a", "b"]);
        assert!(matches!(top_m::<f64>(vec![], 3), Err(Error::EmptyScores)));
        assert!(matches!(top_m(vec![cand("a", 0.1)], 0), Err(Error::InvalidConfig(_))));
    }

    fn chunk(species: &str, ordinal: usize) -> Chunk {
        Chunk::new(species, ordinal, format!("text of {species}"))
    }

    /// Two encoders in 2-d: chunk `x#0` sits at angle 0, `y#0` at 90 degrees.
    fn fixture() -> (Vec<Chunk>, EmbeddingStore, QueryInput) {
        let chunks = vec![chunk("x", 0), chunk("y", 0)];
        let mut store = EmbeddingStore::new();
        let mut a = Segment::new("enc-a", 2);
        a.push("x#0", vec![1.0, 0.0]).unwrap();
        a.push("y#0", vec![0.0, 1.0]).unwrap();
        let mut b = Segment::new("enc-b", 2);
        b.push("x#0", vec![0.6, 0.8]).unwrap();
        b.push("y#0", vec![0.8, 0.6]).unwrap();
        store.insert(a).unwrap();
        store.insert(b).unwrap();
        let mut q = QueryInput { query_id: "q0".into(), ..Default::default() };
        q.cross_modal.insert("enc-a".into(), vec![1.0, 0.0]);
        q.cross_modal.insert("enc-b".into(), vec![0.0, 1.0]);
        (chunks, store, q)
    }

    #[test]
    fn score_chunk_examples() {
        let (_, store, q) = fixture();
        assert_eq!(score_chunk::<f64>(&q, "x#0", "enc-a", &store).unwrap(), 1.0);
        assert_eq!(score_chunk::<f64>(&q, "y#0", "enc-a", &store).unwrap(), 0.0);
        let err = score_chunk::<f64>(&q, "z#0", "enc-a", &store).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { ref encoder_id, ref item_id } if encoder_id == "enc-a" && item_id == "z#0"));
        let err = score_chunk::<f64>(&q, "x#0", "enc-c", &store).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { ref item_id, .. } if item_id == "q0"));
    }

    #[test]
    fn ensemble_means_and_scope() {
        let (chunks, store, q) = fixture();
        let all = ["enc-a".to_string(), "enc-b".to_string()];
        let index = RetrievalIndex::build(&chunks, &store, &all).unwrap();

        let single = RetrievalConfig::new(["enc-b"]);
        let got = index.ensemble_scores::<f64>(&q, &single).unwrap();
        assert_eq!(got[0].s_c, score_chunk::<f64>(&q, "x#0", "enc-b", &store).unwrap());

        let both = RetrievalConfig::new(["enc-b", "enc-a"]);
        let got = index.ensemble_scores::<f64>(&q, &both).unwrap();
        let expected_x = (1.0 + f64::from(0.8_f32)) / 2.0;
        let expected_y = (0.0 + f64::from(0.6_f32)) / 2.0;
        assert!((got[0].s_c - expected_x).abs() < 1e-12);
        assert!((got[1].s_c - expected_y).abs() < 1e-12);
        assert!(got.iter().all(|c| c.s_i == 0.0 && c.s == c.s_c));

        let mut bounded = both.clone();
        bounded.scope = VocabularyScope::Bounded(["y".to_string()].into());
        let got = index.ensemble_scores::<f64>(&q, &bounded).unwrap();
        assert_eq!(ids(&got), ["y#0"]);

        let got32 = index.ensemble_scores::<f32>(&q, &both).unwrap();
        assert!((f64::from(got32[0].s_c) - expected_x).abs() < 1e-6);
    }

    #[test]
    fn missing_embedding_is_an_error_not_a_skip() {
        let (mut chunks, store, _) = fixture();
        chunks.push(chunk("z", 0));
        let err = RetrievalIndex::build(&chunks, &store, &["enc-a".to_string()]).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { ref item_id, .. } if item_id == "z#0"));
    }

    #[test]
    fn config_validation() {
        assert!(RetrievalConfig::new(Vec::<String>::new()).validate().is_err());
        assert!(RetrievalConfig::new(["a", "a"]).validate().is_err());
        let mut c = RetrievalConfig::new(["a"]);
        c.m = 0;
        assert!(c.validate().is_err());
        let mut c = RetrievalConfig::new(["a"]);
        c.scope = VocabularyScope::Bounded(BTreeSet::new());
        assert!(c.validate().is_err());
        assert_eq!(RetrievalConfig::new(["a"]).m, 30);
    }

    fn random_setup(seed: u64, n_chunks: usize, n_enc: usize) -> (Vec<Chunk>, EmbeddingStore, QueryInput, Vec<String>) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dim = 6;
        let encs: Vec<String> = (0..n_enc).map(|e| format!("enc-{e}")).collect();
        let chunks: Vec<Chunk> = (0..n_chunks).map(|i| chunk(&format!("s{}", i / 2), i % 2)).collect();
        let mut store = EmbeddingStore::new();
        let mut q = QueryInput { query_id: "q".into(), ..Default::default() };
        for enc in &encs {
            let mut seg = Segment::new(enc.clone(), dim);
            for c in &chunks {
                // coarse grid values so exact ties show up
                let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-2..=2) as f32 + 0.5).collect();
                seg.push(c.chunk_id.clone(), v).unwrap();
            }
            store.insert(seg).unwrap();
            q.cross_modal.insert(enc.clone(), (0..dim).map(|_| rng.random_range(-2..=2) as f32 + 0.5).collect());
        }
        (chunks, store, q, encs)
    }

    proptest! {
        #[test]
        fn ensemble_properties(seed in 0u64..10_000, n_chunks in 1usize..40, n_enc in 1usize..4, m1 in 1usize..20, extra in 0usize..20) {
            let (chunks, store, q, encs) = random_setup(seed, n_chunks, n_enc);
            let index = RetrievalIndex::build(&chunks, &store, &encs).unwrap();
            let cfg = RetrievalConfig::new(encs.clone());
            let scores = index.ensemble_scores::<f64>(&q, &cfg).unwrap();

            for (i, c) in scores.iter().enumerate() {
                let per: Vec<f64> = encs.iter().map(|e| index.encoder_score(&q, i, e).unwrap()).collect();
                let lo = per.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = per.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo - 1e-12 <= c.s_c && c.s_c <= hi + 1e-12);
            }

            let mut shuffled = cfg.clone();
            shuffled.encoder_ids.reverse();
            prop_assert_eq!(index.ensemble_scores::<f64>(&q, &shuffled).unwrap(), scores.clone());

            let short = top_m(scores.clone(), m1).unwrap();
            let long = top_m(scores.clone(), m1 + extra).unwrap();
            prop_assert_eq!(short.len(), m1.min(scores.len()));
            prop_assert_eq!(&long[..short.len()], &short[..]);

            let mut full = scores.clone();
            full.sort_by(|a, b| rank_order(a.s_c, &a.chunk_id, b.s_c, &b.chunk_id));
            prop_assert_eq!(&full[..short.len()], &short[..]);
        }
    }
}
