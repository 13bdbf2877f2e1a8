//! Retrieval and recognition metrics, benchmark runs and ablation grids.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::{EmbeddingStore, QueryInput};
use crate::error::{Error, Result};
use crate::knowledge_base::{Chunk, KnowledgeBase};
use crate::lmm::{classify, NameResolver, Prediction, PromptTemplate, Resolution};
use crate::provider::GenerationProvider;
use crate::reranker::{rerank, select_context_as, ContextEntry, ContextKind};
use crate::retrieval::{top_m, RetrievalConfig, RetrievalIndex, VocabularyScope};
use crate::scalar::Scalar;
use crate::{Candidate, RerankSettings};

pub const DEFAULT_MRR_CUTOFFS: [usize; 4] = [1, 5, 10, 30];

/// Species of the ranked chunks for one query, best first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalRanking {
    pub query_id: String,
    pub ground_truth_species: Option<String>,
    pub chunk_ids: Vec<String>,
    pub species: Vec<String>,
}

impl RetrievalRanking {
    pub fn from_candidates<S>(query_id: &str, ground_truth: Option<&str>, ranked: &[crate::retrieval::ScoredCandidate<S>]) -> Self {
        RetrievalRanking {
            query_id: query_id.to_string(),
            ground_truth_species: ground_truth.map(str::to_string),
            chunk_ids: ranked.iter().map(|c| c.chunk_id.clone()).collect(),
            species: ranked.iter().map(|c| c.species_id.clone()).collect(),
        }
    }

    fn truth(&self) -> Result<&str> {
        self.ground_truth_species.as_deref().ok_or_else(|| Error::MissingGroundTruth(self.query_id.clone()))
    }

    /// 1-based rank of the first chunk of the true species.
    pub fn first_correct_rank(&self) -> Result<Option<usize>> {
        let truth = self.truth()?;
        Ok(self.species.iter().position(|s| s == truth).map(|i| i + 1))
    }
}

/// Reciprocal rank of the first correct chunk, or 0 beyond rank `cutoff`.
pub fn mrr_at_k<S: Scalar>(ranking: &RetrievalRanking, cutoff: usize) -> Result<S> {
    if cutoff == 0 {
        return Err(Error::InvalidConfig("MRR cutoff must be at least 1".into()));
    }
    Ok(match ranking.first_correct_rank()? {
        Some(r) if r <= cutoff => S::one() / S::count(r),
        _ => S::zero(),
    })
}

/// Whether the true species appears among the first `cutoff` chunks.
pub fn hit_at_k(ranking: &RetrievalRanking, cutoff: usize) -> Result<bool> {
    Ok(ranking.first_correct_rank()?.is_some_and(|r| r <= cutoff))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub query_count: usize,
    /// MRR@K keyed by K.
    pub mrr: BTreeMap<usize, f64>,
    /// Fraction of queries whose species appears in the first K chunks.
    pub recall: BTreeMap<usize, f64>,
    pub top1_accuracy: Option<f64>,
    pub genus_accuracy: Option<f64>,
    /// Queries left out of the genus denominator for lack of genus data.
    pub genus_excluded: usize,
    pub unresolved_rate: Option<f64>,
}

fn fraction(hits: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Means over queries, accumulated in query-id order.
pub fn aggregate_metrics(
    rankings: &[RetrievalRanking],
    predictions: Option<&[Prediction]>,
    kb: &KnowledgeBase,
    cutoffs: &[usize],
) -> Result<MetricsReport> {
    let mut ranked: Vec<&RetrievalRanking> = rankings.iter().collect();
    ranked.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for pair in ranked.windows(2) {
        if pair[0].query_id == pair[1].query_id {
            return Err(Error::DuplicateQuery(pair[0].query_id.clone()));
        }
    }
    let n = ranked.len();
    let cutoffs: BTreeSet<usize> = cutoffs.iter().copied().collect();
    let mut mrr = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for &k in &cutoffs {
        let mut total = 0.0_f64;
        let mut hits = 0;
        for r in &ranked {
            total += mrr_at_k::<f64>(r, k)?;
            hits += usize::from(hit_at_k(r, k)?);
        }
        mrr.insert(k, if n == 0 { 0.0 } else { total / n as f64 });
        recall.insert(k, fraction(hits, n));
    }

    let mut report = MetricsReport {
        query_count: n,
        mrr,
        recall,
        top1_accuracy: None,
        genus_accuracy: None,
        genus_excluded: 0,
        unresolved_rate: None,
    };
    let Some(predictions) = predictions else {
        return Ok(report);
    };

    let mut preds: Vec<&Prediction> = predictions.iter().collect();
    preds.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    if preds.len() != ranked.len() {
        let ranking_ids: BTreeSet<&str> = ranked.iter().map(|r| r.query_id.as_str()).collect();
        let pred_ids: BTreeSet<&str> = preds.iter().map(|p| p.query_id.as_str()).collect();
        let ranking = ranking_ids.difference(&pred_ids).next().copied().unwrap_or("");
        let prediction = pred_ids.difference(&ranking_ids).next().copied().unwrap_or("");
        return Err(Error::QueryMismatch { ranking: ranking.into(), prediction: prediction.into() });
    }
    let (mut correct, mut genus_hits, mut genus_total, mut unresolved) = (0, 0, 0, 0);
    for (r, p) in ranked.iter().zip(&preds) {
        if r.query_id != p.query_id {
            return Err(Error::QueryMismatch { ranking: r.query_id.clone(), prediction: p.query_id.clone() });
        }
        let truth = r.truth()?;
        let resolved = p.resolved_species.as_deref().filter(|_| p.resolution != Resolution::Unresolved);
        if resolved.is_none() {
            unresolved += 1;
        }
        if resolved == Some(truth) {
            correct += 1;
        }
        match kb.require(truth)?.genus_name() {
            None => report.genus_excluded += 1,
            Some(true_genus) => {
                genus_total += 1;
                let predicted_genus = resolved.and_then(|s| kb.get(s)).and_then(|rec| rec.genus_name());
                if predicted_genus == Some(true_genus) {
                    genus_hits += 1;
                }
            }
        }
    }
    report.top1_accuracy = Some(fraction(correct, n));
    report.genus_accuracy = Some(fraction(genus_hits, genus_total));
    report.unresolved_rate = Some(fraction(unresolved, n));
    Ok(report)
}

/// One line of a dataset manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub query_id: String,
    #[serde(default)]
    pub ground_truth_species: Option<String>,
    pub dataset_name: String,
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    crate::knowledge_base::read_ndjson(path.as_ref())
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<()> {
    crate::knowledge_base::write_ndjson(path.as_ref(), entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusMode {
    /// Word-window chunks of the refined summaries.
    #[default]
    Chunks,
    /// One name chunk per species.
    Names,
}

/// Everything a run needs: knowledge base, both corpora, embeddings, queries.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub kb: KnowledgeBase,
    pub chunks: Vec<Chunk>,
    pub chunk_store: EmbeddingStore,
    pub name_chunks: Vec<Chunk>,
    pub name_store: Option<EmbeddingStore>,
    /// Query image vectors for every encoder plus anchor vectors for the intra-modal encoder.
    pub image_store: EmbeddingStore,
    pub manifest: Vec<ManifestEntry>,
}

impl Dataset {
    /// Checks that query ids are unique and that every ground truth is a known species.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for e in &self.manifest {
            if !seen.insert(e.query_id.as_str()) {
                return Err(Error::DuplicateQuery(e.query_id.clone()));
            }
            if let Some(t) = &e.ground_truth_species {
                self.kb.require(t)?;
            }
        }
        for c in self.chunks.iter().chain(&self.name_chunks) {
            self.kb.require(&c.species_id)?;
        }
        Ok(())
    }

    /// Species that appear as ground truth in the manifest.
    pub fn manifest_species(&self) -> BTreeSet<String> {
        self.manifest.iter().filter_map(|e| e.ground_truth_species.clone()).collect()
    }
}

/// Settings of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub retrieval: RetrievalConfig,
    pub rerank: RerankSettings,
    pub rerank_enabled: bool,
    #[serde(default)]
    pub corpus: CorpusMode,
    #[serde(default)]
    pub context: ContextKind,
    #[serde(default = "default_cutoffs")]
    pub mrr_cutoffs: Vec<usize>,
}

fn default_cutoffs() -> Vec<usize> {
    DEFAULT_MRR_CUTOFFS.to_vec()
}

impl PipelineConfig {
    pub fn new(encoder_ids: impl IntoIterator<Item = impl Into<String>>, intra_encoder_id: &str) -> Self {
        PipelineConfig {
            retrieval: RetrievalConfig::new(encoder_ids),
            rerank: RerankSettings::new(intra_encoder_id),
            rerank_enabled: true,
            corpus: CorpusMode::Chunks,
            context: ContextKind::Summaries,
            mrr_cutoffs: default_cutoffs(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.retrieval.validate()?;
        self.rerank.validate(self.retrieval.m)?;
        if self.mrr_cutoffs.is_empty() || self.mrr_cutoffs.contains(&0) {
            return Err(Error::InvalidConfig(format!("bad MRR cutoffs {:?}", self.mrr_cutoffs)));
        }
        Ok(())
    }

    /// Cutoffs reported for MRR and recall: the configured ones plus `k`.
    pub fn report_cutoffs(&self) -> Vec<usize> {
        let mut c: BTreeSet<usize> = self.mrr_cutoffs.iter().copied().collect();
        c.insert(self.rerank.k);
        c.into_iter().collect()
    }
}

/// Hex digest over the canonical JSON of `value`.
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes");
    let digest = Sha256::digest(canonical.to_string().as_bytes());
    hex::encode(&digest[..8])
}

/// Fingerprint of a pipeline config together with the provider label.
pub fn run_fingerprint(config: &PipelineConfig, provider_label: Option<&str>) -> String {
    fingerprint(&(config, provider_label))
}

/// Result of running the pipeline on one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub query_id: String,
    /// Top-m by `s_c`.
    pub retrieved: Vec<Candidate>,
    /// The final order: re-ranked, or `retrieved` when re-ranking is off.
    pub ranked: Vec<Candidate>,
    pub context: Vec<ContextEntry>,
    pub prediction: Option<Prediction>,
}

/// A configured pipeline over a dataset, ready to answer queries.
pub struct Pipeline<'a> {
    pub data: &'a Dataset,
    pub config: PipelineConfig,
    index: RetrievalIndex<'a>,
    chunk_texts: HashMap<&'a str, &'a str>,
    resolver: NameResolver,
    template: PromptTemplate,
}

impl<'a> Pipeline<'a> {
    pub fn new(data: &'a Dataset, config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let (chunks, store) = match config.corpus {
            CorpusMode::Chunks => (&data.chunks[..], &data.chunk_store),
            CorpusMode::Names => {
                let store = data
                    .name_store
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("names-only mode needs name embeddings".into()))?;
                (&data.name_chunks[..], store)
            }
        };
        let index = RetrievalIndex::build(chunks, store, &config.retrieval.encoder_ids)?;
        let chunk_texts = chunks.iter().map(|c| (c.chunk_id.as_str(), c.text.as_str())).collect();
        Ok(Pipeline {
            data,
            config,
            index,
            chunk_texts,
            resolver: NameResolver::new(&data.kb),
            template: PromptTemplate::default(),
        })
    }

    pub fn query_input(&self, entry: &ManifestEntry) -> Result<QueryInput> {
        let intra = self.config.rerank_enabled.then_some(self.config.rerank.intra_encoder_id.as_str());
        QueryInput::from_store(
            &entry.query_id,
            entry.ground_truth_species.clone(),
            &self.data.image_store,
            &self.config.retrieval.encoder_ids,
            intra,
        )
    }

    /// Retrieval, optional re-ranking and context selection for one query.
    pub fn run_query(&self, query: &QueryInput) -> Result<QueryOutcome> {
        let scores = self.index.ensemble_scores::<f64>(query, &self.config.retrieval)?;
        let retrieved = top_m(scores, self.config.retrieval.m)?;
        let ranked = if self.config.rerank_enabled {
            rerank(&retrieved, query, &self.data.kb, &self.data.image_store, &self.config.rerank)?
        } else {
            retrieved.clone()
        };
        let context = select_context_as(&ranked, self.config.rerank.k, &self.data.kb, self.config.context, |id| {
            self.chunk_texts.get(id).copied()
        })?;
        Ok(QueryOutcome { query_id: query.query_id.clone(), retrieved, ranked, context, prediction: None })
    }

    /// [`Pipeline::run_query`] followed by the generation stage.
    pub fn classify(&self, query: &QueryInput, provider: &dyn GenerationProvider) -> Result<QueryOutcome> {
        let mut outcome = self.run_query(query)?;
        outcome.prediction =
            Some(classify(&query.query_id, &query.query_id, &outcome.context, provider, &self.template, &self.resolver)?);
        Ok(outcome)
    }
}

/// Per-query audit record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryLog {
    pub query_id: String,
    pub dataset_name: String,
    pub ground_truth_species: Option<String>,
    pub first_correct_rank: Option<usize>,
    pub candidates: Vec<Candidate>,
    pub context_species: Vec<String>,
    pub prediction: Option<Prediction>,
    pub flags: Vec<String>,
}

pub const FLAG_TRUTH_OUT_OF_CORPUS: &str = "truth_not_in_corpus";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub fingerprint: String,
    pub aggregate: MetricsReport,
    pub per_dataset: BTreeMap<String, MetricsReport>,
    /// Queries whose true species has no chunk in the scored corpus.
    pub out_of_corpus: usize,
}

impl RunReport {
    /// Flat `key=value` lines in a fixed order.
    pub fn to_summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fingerprint={}", self.fingerprint);
        let _ = writeln!(out, "out_of_corpus={}", self.out_of_corpus);
        write_metrics(&mut out, "aggregate", &self.aggregate);
        for (name, m) in &self.per_dataset {
            write_metrics(&mut out, &format!("dataset.{name}"), m);
        }
        out
    }
}

fn write_metrics(out: &mut String, prefix: &str, m: &MetricsReport) {
    let _ = writeln!(out, "{prefix}.query_count={}", m.query_count);
    for (k, v) in &m.mrr {
        let _ = writeln!(out, "{prefix}.mrr@{k}={v}");
    }
    for (k, v) in &m.recall {
        let _ = writeln!(out, "{prefix}.recall@{k}={v}");
    }
    let opt = |v: Option<f64>| v.map_or("na".to_string(), |x| x.to_string());
    let _ = writeln!(out, "{prefix}.top1_accuracy={}", opt(m.top1_accuracy));
    let _ = writeln!(out, "{prefix}.genus_accuracy={}", opt(m.genus_accuracy));
    let _ = writeln!(out, "{prefix}.genus_excluded={}", m.genus_excluded);
    let _ = writeln!(out, "{prefix}.unresolved_rate={}", opt(m.unresolved_rate));
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkRun {
    pub report: RunReport,
    /// Sorted by query id.
    pub log: Vec<QueryLog>,
}

impl BenchmarkRun {
    pub fn log_ndjson(&self) -> String {
        let mut out = String::new();
        for entry in &self.log {
            out.push_str(&serde_json::to_string(entry).expect("log serializes"));
            out.push('\n');
        }
        out
    }

    /// Writes `summary.txt` and `queries.ndjson` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let summary = dir.join("summary.txt");
        fs::write(&summary, self.report.to_summary()).map_err(|e| Error::io(&summary, e))?;
        let log = dir.join("queries.ndjson");
        fs::write(&log, self.log_ndjson()).map_err(|e| Error::io(&log, e))
    }
}

/// A provider plus the label that enters the run fingerprint.
pub struct ProviderHandle<'p> {
    pub label: String,
    pub provider: &'p dyn GenerationProvider,
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

/// Runs every manifest query through the pipeline on `workers` threads and
/// reduces the metrics. The output does not depend on `workers`.
pub fn run_benchmark(
    data: &Dataset,
    config: &PipelineConfig,
    provider: Option<&ProviderHandle<'_>>,
    workers: usize,
) -> Result<BenchmarkRun> {
    data.validate()?;
    let pipeline = Pipeline::new(data, config.clone())?;
    let corpus_species: BTreeSet<&str> = pipeline
        .index
        .chunks()
        .iter()
        .filter(|c| config.retrieval.scope.admits(&c.species_id))
        .map(|c| c.species_id.as_str())
        .collect();

    let mut entries: Vec<&ManifestEntry> = data.manifest.iter().collect();
    entries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let run_one = |entry: &&ManifestEntry| -> Result<QueryLog> {
        let query = pipeline.query_input(entry)?;
        let truth = entry.ground_truth_species.as_deref().ok_or_else(|| Error::MissingGroundTruth(entry.query_id.clone()))?;
        let outcome = match provider {
            Some(p) => pipeline.classify(&query, p.provider)?,
            None => pipeline.run_query(&query)?,
        };
        let ranking = RetrievalRanking::from_candidates(&entry.query_id, Some(truth), &outcome.ranked);
        let mut flags = Vec::new();
        if !corpus_species.contains(truth) {
            flags.push(FLAG_TRUTH_OUT_OF_CORPUS.to_string());
        }
        Ok(QueryLog {
            query_id: entry.query_id.clone(),
            dataset_name: entry.dataset_name.clone(),
            ground_truth_species: Some(truth.to_string()),
            first_correct_rank: ranking.first_correct_rank()?,
            candidates: outcome.ranked,
            context_species: outcome.context.into_iter().map(|c| c.species_id).collect(),
            prediction: outcome.prediction,
            flags,
        })
    };
    let log: Vec<QueryLog> = thread_pool(workers)?.install(|| entries.par_iter().map(run_one).collect::<Result<_>>())?;

    let cutoffs = config.report_cutoffs();
    let reduce = |subset: &[&QueryLog]| -> Result<MetricsReport> {
        let rankings: Vec<RetrievalRanking> = subset
            .iter()
            .map(|l| RetrievalRanking::from_candidates(&l.query_id, l.ground_truth_species.as_deref(), &l.candidates))
            .collect();
        let preds: Option<Vec<Prediction>> = provider.map(|_| subset.iter().filter_map(|l| l.prediction.clone()).collect());
        aggregate_metrics(&rankings, preds.as_deref(), &data.kb, &cutoffs)
    };
    let all: Vec<&QueryLog> = log.iter().collect();
    let mut by_dataset: BTreeMap<&str, Vec<&QueryLog>> = BTreeMap::new();
    for l in &log {
        by_dataset.entry(l.dataset_name.as_str()).or_default().push(l);
    }
    let per_dataset = by_dataset
        .into_iter()
        .map(|(name, subset)| Ok((name.to_string(), reduce(&subset)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    let report = RunReport {
        fingerprint: run_fingerprint(config, provider.map(|p| p.label.as_str())),
        aggregate: reduce(&all)?,
        per_dataset,
        out_of_corpus: log.iter().filter(|l| !l.flags.is_empty()).count(),
    };
    Ok(BenchmarkRun { report, log })
}

/// (axis, value) labels of one grid cell.
pub type AxisSettings = Vec<(String, String)>;

/// Axes of an ablation grid; an empty axis keeps the base setting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub encoders: Vec<Vec<String>>,
    pub rerank: Vec<bool>,
    pub m: Vec<usize>,
    pub k: Vec<usize>,
    pub context: Vec<ContextKind>,
}

impl AblationGrid {
    pub fn is_empty(&self) -> bool {
        self.encoders.is_empty() && self.rerank.is_empty() && self.m.is_empty() && self.k.is_empty() && self.context.is_empty()
    }

    /// Names of the axes that vary, in table column order.
    pub fn axes(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if !self.encoders.is_empty() {
            out.push("encoders");
        }
        if !self.rerank.is_empty() {
            out.push("rerank");
        }
        if !self.m.is_empty() {
            out.push("m");
        }
        if !self.k.is_empty() {
            out.push("k");
        }
        if !self.context.is_empty() {
            out.push("context");
        }
        out
    }

    /// Every cell as (axis settings, config), encoders varying slowest.
    pub fn cells(&self, base: &PipelineConfig) -> Result<Vec<(AxisSettings, PipelineConfig)>> {
        if self.is_empty() {
            return Err(Error::InvalidConfig("ablation grid has no axes".into()));
        }
        fn axis<T: Clone>(values: &[T]) -> Vec<Option<T>> {
            if values.is_empty() {
                vec![None]
            } else {
                values.iter().cloned().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for enc in axis(&self.encoders) {
            for rr in axis(&self.rerank) {
                for m in axis(&self.m) {
                    for k in axis(&self.k) {
                        for ctx in axis(&self.context) {
                            let mut cfg = base.clone();
                            let mut labels = Vec::new();
                            if let Some(enc) = &enc {
                                cfg.retrieval.encoder_ids = enc.clone();
                                labels.push(("encoders".to_string(), enc.join("+")));
                            }
                            if let Some(rr) = rr {
                                cfg.rerank_enabled = rr;
                                labels.push(("rerank".to_string(), if rr { "on" } else { "off" }.to_string()));
                            }
                            if let Some(m) = m {
                                cfg.retrieval.m = m;
                                labels.push(("m".to_string(), m.to_string()));
                            }
                            if let Some(k) = k {
                                cfg.rerank.k = k;
                                labels.push(("k".to_string(), k.to_string()));
                            }
                            if let Some(ctx) = ctx {
                                cfg.context = ctx;
                                labels.push(("context".to_string(), ctx.to_string()));
                            }
                            cfg.validate()?;
                            out.push((labels, cfg));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub settings: Vec<(String, String)>,
    pub config: PipelineConfig,
    pub report: RunReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axes: Vec<String>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Aligned plain-text table: axis columns, then MRR, recall@k and accuracy columns.
    pub fn render(&self) -> String {
        let cutoffs: Vec<usize> = self.rows.first().map(|r| r.report.aggregate.mrr.keys().copied().collect()).unwrap_or_default();
        let mut header: Vec<String> = self.axes.clone();
        header.extend(cutoffs.iter().map(|k| format!("MRR@{k}")));
        header.extend(["recall@k", "acc", "genus_acc", "fingerprint"].map(String::from));
        let mut rows: Vec<Vec<String>> = Vec::new();
        for row in &self.rows {
            let m = &row.report.aggregate;
            let mut cells: Vec<String> = row.settings.iter().map(|(_, v)| v.clone()).collect();
            cells.extend(cutoffs.iter().map(|k| m.mrr.get(k).map_or("-".into(), |v| format!("{:.4}", v))));
            let k = row.config.rerank.k;
            cells.push(m.recall.get(&k).map_or("-".into(), |v| format!("{v:.4}")));
            cells.push(m.top1_accuracy.map_or("-".into(), |v| format!("{v:.4}")));
            cells.push(m.genus_accuracy.map_or("-".into(), |v| format!("{v:.4}")));
            cells.push(row.report.fingerprint.clone());
            rows.push(cells);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut out = line(&header);
        out.push('\n');
        out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// One benchmark per grid cell over the same queries.
pub fn run_ablation(
    data: &Dataset,
    base: &PipelineConfig,
    grid: &AblationGrid,
    provider: Option<&ProviderHandle<'_>>,
    workers: usize,
) -> Result<AblationTable> {
    let cells = grid.cells(base)?;
    let mut rows = Vec::with_capacity(cells.len());
    for (settings, config) in cells {
        let run = run_benchmark(data, &config, provider, workers)?;
        rows.push(AblationRow { settings, config, report: run.report });
    }
    Ok(AblationTable { axes: grid.axes().into_iter().map(String::from).collect(), rows })
}

/// Restricts the vocabulary of `config` to `species`.
pub fn bounded(config: &PipelineConfig, species: BTreeSet<String>) -> PipelineConfig {
    let mut out = config.clone();
    out.retrieval.scope = VocabularyScope::Bounded(species);
    out
}
