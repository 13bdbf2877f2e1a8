//! Synthetic instances with known ground truth, and an independent
//! brute-force reference implementation of the whole ranking pipeline.
//!
//! Each species gets a latent direction `z` drawn uniformly on the unit
//! sphere. Every embedding of that species (chunk text, name, anchor image,
//! query image) is `normalize(z + noise)`, where `noise` has independent
//! normal components with standard deviation `noise_gain * sigma / sqrt(dim)`.
//! Noise is drawn independently per encoder.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{write_embeddings, EmbeddingStore, Segment};
use crate::error::{Error, Result};
use crate::evaluation::{write_manifest, Dataset, ManifestEntry};
use crate::knowledge_base::{chunk_corpus, ingest_records, names_only_corpus, write_chunks, ChunkConfig, SpeciesRecord};
use crate::provider::keyword_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange {
    pub min: usize,
    pub max: usize,
}

impl CountRange {
    pub fn fixed(n: usize) -> Self {
        CountRange { min: n, max: n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEncoder {
    pub encoder_id: String,
    pub text_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_species: usize,
    /// Between 1 and 3.
    pub chunks_per_species: CountRange,
    /// Between 0 and 3.
    pub anchors_per_species: CountRange,
    pub latent_dim: usize,
    pub encoders: Vec<SimEncoder>,
    pub intra_encoder_id: String,
    pub query_sigma: f64,
    pub anchor_sigma: f64,
    /// Scales every sigma; per-component noise std is `noise_gain * sigma / sqrt(latent_dim)`.
    pub noise_gain: f64,
    pub n_queries: usize,
    /// Queries are drawn from the first `query_species` species (all when `None`).
    pub query_species: Option<usize>,
    /// Queries are assigned to these datasets round-robin.
    pub datasets: Vec<String>,
    /// Consecutive species per genus.
    pub genus_size: usize,
    pub seed: u64,
}

pub const DEFAULT_NOISE_GAIN: f64 = 3.0;

impl SimConfig {
    /// 200 species, dim 64, three encoders at sigma 0.8, queries at 0.8,
    /// anchors at 0.4, 500 queries, seed 42.
    pub fn pinned() -> Self {
        SimConfig {
            n_species: 200,
            chunks_per_species: CountRange::fixed(3),
            anchors_per_species: CountRange::fixed(3),
            latent_dim: 64,
            encoders: ["enc-a", "enc-b", "enc-c"]
                .iter()
                .map(|id| SimEncoder { encoder_id: id.to_string(), text_sigma: 0.8 })
                .collect(),
            intra_encoder_id: "dino".into(),
            query_sigma: 0.8,
            anchor_sigma: 0.4,
            noise_gain: DEFAULT_NOISE_GAIN,
            n_queries: 500,
            query_species: None,
            datasets: vec!["sim-a".into(), "sim-b".into()],
            genus_size: 4,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_species < 2 {
            return bad("n_species must be at least 2".into());
        }
        let c = self.chunks_per_species;
        if c.min < 1 || c.max > 3 || c.min > c.max {
            return bad(format!("chunks_per_species {c:?} outside 1..=3"));
        }
        let a = self.anchors_per_species;
        if a.max > 3 || a.min > a.max {
            return bad(format!("anchors_per_species {a:?} outside 0..=3"));
        }
        if self.latent_dim == 0 || self.encoders.is_empty() || self.datasets.is_empty() || self.genus_size == 0 {
            return bad("latent_dim, encoders, datasets and genus_size must be non-empty".into());
        }
        let mut sigmas = self.encoders.iter().map(|e| e.text_sigma).chain([self.query_sigma, self.anchor_sigma, self.noise_gain]);
        if sigmas.any(|s| !s.is_finite() || s < 0.0) {
            return bad("sigmas must be finite and non-negative".into());
        }
        let ids: BTreeSet<&str> = self.encoders.iter().map(|e| e.encoder_id.as_str()).chain([self.intra_encoder_id.as_str()]).collect();
        if ids.len() != self.encoders.len() + 1 {
            return bad("encoder ids must be distinct".into());
        }
        if let Some(q) = self.query_species {
            if q == 0 || q > self.n_species {
                return bad(format!("query_species {q} outside 1..={}", self.n_species));
            }
        }
        Ok(())
    }

    pub fn encoder_ids(&self) -> Vec<String> {
        self.encoders.iter().map(|e| e.encoder_id.clone()).collect()
    }
}

/// Raw generated vectors, kept apart from the engine's stores so the
/// reference pipeline can read them directly.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSpecies {
    pub species_id: String,
    pub chunk_ids: Vec<String>,
    /// Per cross-modal encoder (config order), one vector per chunk.
    pub chunk_vectors: Vec<Vec<Vec<f32>>>,
    /// Per cross-modal encoder, the name-chunk vector.
    pub name_vectors: Vec<Vec<f32>>,
    pub anchor_ids: Vec<String>,
    pub anchor_vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawQuery {
    pub query_id: String,
    pub dataset_name: String,
    pub truth: usize,
    /// Per cross-modal encoder (config order).
    pub cross: Vec<Vec<f32>>,
    pub intra: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct SimInstance {
    pub config: SimConfig,
    pub species: Vec<RawSpecies>,
    pub queries: Vec<RawQuery>,
    pub dataset: Dataset,
}

fn unit_f32(v: &[f64]) -> Vec<f32> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| (x / norm) as f32).collect()
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn noisy(rng: &mut ChaCha8Rng, z: &[f64], scale: f64) -> Vec<f32> {
    let g = gaussian(rng, z.len());
    let v: Vec<f64> = z.iter().zip(&g).map(|(a, b)| a + scale * b).collect();
    unit_f32(&v)
}

fn draw_count(rng: &mut ChaCha8Rng, range: CountRange) -> usize {
    if range.min == range.max {
        range.min
    } else {
        rng.random_range(range.min..=range.max)
    }
}

/// Summary long enough to give `chunks` windows under the default chunk config.
fn synthetic_summary(species_id: &str, chunks: usize) -> String {
    let cfg = ChunkConfig::default();
    let n = if chunks == 1 { 40 } else { cfg.max_chunk_words + 1 + (cfg.max_chunk_words - cfg.overlap_words) * (chunks - 2) + 15 };
    let mut words = vec![keyword_for(species_id)];
    words.extend((1..n).map(|i| format!("trait{i}")));
    words.join(" ")
}

pub fn species_id(i: usize, n_species: usize) -> String {
    let width = (n_species.saturating_sub(1)).to_string().len().max(2);
    format!("sp{i:0width$}")
}

/// Generates a full instance. Deterministic for a fixed config.
pub fn generate_instance(cfg: &SimConfig) -> Result<SimInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.latent_dim;
    let scale = |sigma: f64| cfg.noise_gain * sigma / (dim as f64).sqrt();
    let n_enc = cfg.encoders.len();

    let mut latents = Vec::with_capacity(cfg.n_species);
    let mut species = Vec::with_capacity(cfg.n_species);
    let mut records = Vec::with_capacity(cfg.n_species);
    for i in 0..cfg.n_species {
        let z = gaussian(&mut rng, dim);
        let norm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
        latents.push(z.iter().map(|x| x / norm).collect::<Vec<f64>>());
        let n_chunks = draw_count(&mut rng, cfg.chunks_per_species);
        let n_anchors = draw_count(&mut rng, cfg.anchors_per_species);
        let id = species_id(i, cfg.n_species);
        let genus = format!("Genus{:03}", i / cfg.genus_size);
        let mut r = SpeciesRecord::new(&id, format!("Synthetic bird {i}"));
        r.scientific_name = Some(format!("{genus} species{i}"));
        r.genus = Some(genus);
        r.refined_summary = Some(synthetic_summary(&id, n_chunks));
        r.anchor_ids = (0..n_anchors).map(|j| format!("{id}@{j}")).collect();
        species.push(RawSpecies {
            species_id: id.clone(),
            chunk_ids: (0..n_chunks).map(|j| crate::knowledge_base::chunk_id(&id, j)).collect(),
            chunk_vectors: vec![Vec::new(); n_enc],
            name_vectors: Vec::new(),
            anchor_ids: r.anchor_ids.clone(),
            anchor_vectors: Vec::new(),
        });
        records.push(r);
    }

    for (e, enc) in cfg.encoders.iter().enumerate() {
        let s = scale(enc.text_sigma);
        for (sp, z) in species.iter_mut().zip(&latents) {
            sp.chunk_vectors[e] = (0..sp.chunk_ids.len()).map(|_| noisy(&mut rng, z, s)).collect();
        }
    }
    for enc in &cfg.encoders {
        let s = scale(enc.text_sigma);
        for (sp, z) in species.iter_mut().zip(&latents) {
            sp.name_vectors.push(noisy(&mut rng, z, s));
        }
    }
    let s_anchor = scale(cfg.anchor_sigma);
    for (sp, z) in species.iter_mut().zip(&latents) {
        sp.anchor_vectors = (0..sp.anchor_ids.len()).map(|_| noisy(&mut rng, z, s_anchor)).collect();
    }

    let pool = cfg.query_species.unwrap_or(cfg.n_species);
    let s_query = scale(cfg.query_sigma);
    let qwidth = cfg.n_queries.saturating_sub(1).to_string().len().max(4);
    let mut queries = Vec::with_capacity(cfg.n_queries);
    for q in 0..cfg.n_queries {
        let truth = rng.random_range(0..pool);
        let z = &latents[truth];
        let cross = (0..n_enc).map(|_| noisy(&mut rng, z, s_query)).collect();
        let intra = noisy(&mut rng, z, s_query);
        queries.push(RawQuery {
            query_id: format!("q{q:0qwidth$}"),
            dataset_name: cfg.datasets[q % cfg.datasets.len()].clone(),
            truth,
            cross,
            intra,
        });
    }

    let dataset = assemble_dataset(cfg, records, &species, &queries)?;
    Ok(SimInstance { config: cfg.clone(), species, queries, dataset })
}

fn assemble_dataset(cfg: &SimConfig, records: Vec<SpeciesRecord>, species: &[RawSpecies], queries: &[RawQuery]) -> Result<Dataset> {
    let kb = ingest_records(records)?;
    let chunks = chunk_corpus(&kb, &ChunkConfig::default())?;
    debug_assert_eq!(chunks.len(), species.iter().map(|s| s.chunk_ids.len()).sum::<usize>());
    let name_chunks = names_only_corpus(&kb);
    let dim = cfg.latent_dim;

    let mut chunk_store = EmbeddingStore::new();
    let mut name_store = EmbeddingStore::new();
    let mut image_store = EmbeddingStore::new();
    for (e, enc) in cfg.encoders.iter().enumerate() {
        let mut text = Segment::new(enc.encoder_id.clone(), dim);
        let mut names = Segment::new(enc.encoder_id.clone(), dim);
        for sp in species {
            for (id, v) in sp.chunk_ids.iter().zip(&sp.chunk_vectors[e]) {
                text.push(id.clone(), v.clone())?;
            }
            names.push(crate::knowledge_base::chunk_id(&sp.species_id, 0), sp.name_vectors[e].clone())?;
        }
        let mut images = Segment::new(enc.encoder_id.clone(), dim);
        for q in queries {
            images.push(q.query_id.clone(), q.cross[e].clone())?;
        }
        chunk_store.insert(text)?;
        name_store.insert(names)?;
        image_store.insert(images)?;
    }
    let mut intra = Segment::new(cfg.intra_encoder_id.clone(), dim);
    for q in queries {
        intra.push(q.query_id.clone(), q.intra.clone())?;
    }
    for sp in species {
        for (id, v) in sp.anchor_ids.iter().zip(&sp.anchor_vectors) {
            intra.push(id.clone(), v.clone())?;
        }
    }
    image_store.insert(intra)?;

    let manifest = queries
        .iter()
        .map(|q| ManifestEntry {
            query_id: q.query_id.clone(),
            ground_truth_species: Some(species[q.truth].species_id.clone()),
            dataset_name: q.dataset_name.clone(),
        })
        .collect();
    Ok(Dataset { kb, chunks, chunk_store, name_chunks, name_store: Some(name_store), image_store, manifest })
}

/// Paths written by [`SimInstance::write`], relative to its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimFiles {
    pub kb: PathBuf,
    pub chunks: PathBuf,
    pub name_chunks: PathBuf,
    pub manifest: PathBuf,
    pub chunk_embeddings: BTreeMap<String, PathBuf>,
    pub name_embeddings: BTreeMap<String, PathBuf>,
    pub image_embeddings: BTreeMap<String, PathBuf>,
    pub sim_config: PathBuf,
}

impl SimInstance {
    /// Writes the standard knowledge-base, chunk, manifest and embedding files.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<SimFiles> {
        let dir = dir.as_ref();
        let emb = dir.join("emb");
        fs::create_dir_all(&emb).map_err(|e| Error::io(&emb, e))?;
        let d = &self.dataset;
        let files = SimFiles {
            kb: "kb.ndjson".into(),
            chunks: "chunks.ndjson".into(),
            name_chunks: "names.ndjson".into(),
            manifest: "manifest.ndjson".into(),
            chunk_embeddings: self.per_encoder("chunks"),
            name_embeddings: self.per_encoder("names"),
            image_embeddings: self
                .config
                .encoders
                .iter()
                .map(|e| e.encoder_id.clone())
                .chain([self.config.intra_encoder_id.clone()])
                .map(|id| (id.clone(), PathBuf::from(format!("emb/images.{id}.vreb"))))
                .collect(),
            sim_config: "simconfig.json".into(),
        };
        d.kb.write(dir.join(&files.kb))?;
        write_chunks(dir.join(&files.chunks), &d.chunks)?;
        write_chunks(dir.join(&files.name_chunks), &d.name_chunks)?;
        write_manifest(dir.join(&files.manifest), &d.manifest)?;
        let names = d.name_store.as_ref().expect("simulated instances carry name embeddings");
        for (enc, path) in &files.chunk_embeddings {
            write_embeddings(d.chunk_store.segment(enc)?, dir.join(path))?;
        }
        for (enc, path) in &files.name_embeddings {
            write_embeddings(names.segment(enc)?, dir.join(path))?;
        }
        for (enc, path) in &files.image_embeddings {
            write_embeddings(d.image_store.segment(enc)?, dir.join(path))?;
        }
        let cfg_path = dir.join(&files.sim_config);
        fs::write(&cfg_path, serde_json::to_string_pretty(&self.config).expect("config serializes"))
            .map_err(|e| Error::io(&cfg_path, e))?;
        Ok(files)
    }

    fn per_encoder(&self, kind: &str) -> BTreeMap<String, PathBuf> {
        self.config
            .encoders
            .iter()
            .map(|e| (e.encoder_id.clone(), PathBuf::from(format!("emb/{kind}.{}.vreb", e.encoder_id))))
            .collect()
    }

    /// Query image references mapped to their true species, for the keyword oracle.
    pub fn truth_map(&self) -> HashMap<String, String> {
        self.queries.iter().map(|q| (q.query_id.clone(), self.species[q.truth].species_id.clone())).collect()
    }
}

/// Brute-force recomputation of every score, ranking and metric straight
/// from the raw vectors. Shares no code with the engine's ranking modules.
pub mod oracle {
    use super::*;

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleParams {
        /// Cross-modal encoder ids to average.
        pub encoders: Vec<String>,
        pub m: usize,
        pub k: usize,
        pub rerank: bool,
        /// Species indices allowed to score; `None` is the open vocabulary.
        pub scope: Option<BTreeSet<String>>,
        pub cutoffs: Vec<usize>,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleRow {
        pub chunk_id: String,
        pub species_id: String,
        pub s_c: f64,
        pub s_i: f64,
        pub s: f64,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleQuery {
        pub query_id: String,
        pub truth: String,
        /// Top-m by s_c.
        pub top_m: Vec<OracleRow>,
        /// Final order.
        pub ranked: Vec<OracleRow>,
        /// Distinct species of the first k ranked rows.
        pub context: Vec<String>,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleMetrics {
        pub mrr: BTreeMap<usize, f64>,
        pub recall: BTreeMap<usize, f64>,
        /// Accuracy of a generator that always names the true species when it
        /// is in the context: the fraction of queries whose context holds it.
        pub keyword_accuracy: f64,
    }

    fn inner(a: &[f32], b: &[f32]) -> f64 {
        let mut acc = 0.0f64;
        for i in 0..a.len() {
            acc += a[i] as f64 * b[i] as f64;
        }
        acc
    }

    fn better(a: &OracleRow, b: &OracleRow, by_total: bool) -> std::cmp::Ordering {
        let (x, y) = if by_total { (a.s, b.s) } else { (a.s_c, b.s_c) };
        if x > y {
            std::cmp::Ordering::Less
        } else if x < y {
            std::cmp::Ordering::Greater
        } else {
            a.chunk_id.cmp(&b.chunk_id)
        }
    }

    pub fn run_query(inst: &SimInstance, q: &RawQuery, p: &OracleParams) -> OracleQuery {
        let mut order: Vec<usize> = Vec::new();
        for name in p.encoders.iter().collect::<BTreeSet<_>>() {
            order.push(inst.config.encoders.iter().position(|e| &e.encoder_id == name).expect("encoder in instance"));
        }
        let mut rows = Vec::new();
        for sp in &inst.species {
            if let Some(scope) = &p.scope {
                if !scope.contains(&sp.species_id) {
                    continue;
                }
            }
            for (c, chunk_id) in sp.chunk_ids.iter().enumerate() {
                let mut total = 0.0f64;
                for &e in &order {
                    total += inner(&q.cross[e], &sp.chunk_vectors[e][c]);
                }
                let s_c = total / order.len() as f64;
                rows.push(OracleRow { chunk_id: chunk_id.clone(), species_id: sp.species_id.clone(), s_c, s_i: 0.0, s: s_c });
            }
        }
        rows.sort_by(|a, b| better(a, b, false));
        rows.truncate(p.m);
        let top_m = rows.clone();

        let mut ranked = rows;
        if p.rerank {
            for row in ranked.iter_mut() {
                let sp = inst.species.iter().find(|s| s.species_id == row.species_id).expect("species");
                let s_i = if sp.anchor_vectors.is_empty() {
                    0.0
                } else {
                    let mut sum = 0.0;
                    for a in &sp.anchor_vectors {
                        sum += inner(&q.intra, a);
                    }
                    sum / sp.anchor_vectors.len() as f64
                };
                row.s_i = s_i;
                row.s = row.s_c + s_i;
            }
            ranked.sort_by(|a, b| better(a, b, true));
        }
        let mut context: Vec<String> = Vec::new();
        for row in ranked.iter().take(p.k) {
            if !context.contains(&row.species_id) {
                context.push(row.species_id.clone());
            }
        }
        OracleQuery {
            query_id: q.query_id.clone(),
            truth: inst.species[q.truth].species_id.clone(),
            top_m,
            ranked,
            context,
        }
    }

    pub fn run(inst: &SimInstance, p: &OracleParams) -> (Vec<OracleQuery>, OracleMetrics) {
        let mut queries: Vec<&RawQuery> = inst.queries.iter().collect();
        queries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
        let results: Vec<OracleQuery> = queries.iter().map(|q| run_query(inst, q, p)).collect();

        let n = results.len() as f64;
        let mut cutoffs: Vec<usize> = p.cutoffs.clone();
        cutoffs.push(p.k);
        cutoffs.sort_unstable();
        cutoffs.dedup();
        let mut mrr = BTreeMap::new();
        let mut recall = BTreeMap::new();
        for &k in &cutoffs {
            let mut total = 0.0;
            let mut hits = 0usize;
            for r in &results {
                let first = r.ranked.iter().position(|row| row.species_id == r.truth);
                if let Some(i) = first {
                    if i < k {
                        total += 1.0 / (i + 1) as f64;
                        hits += 1;
                    }
                }
            }
            mrr.insert(k, total / n);
            recall.insert(k, hits as f64 / n);
        }
        let in_context = results.iter().filter(|r| r.context.contains(&r.truth)).count();
        let metrics = OracleMetrics { mrr, recall, keyword_accuracy: in_context as f64 / n };
        (results, metrics)
    }
}
