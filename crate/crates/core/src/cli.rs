//! The `vrrag` command: knowledge-base lifecycle, inference, benchmarking
//! and synthetic data generation.
//!
//! Exit codes: 0 success, 1 usage error, 2 data-integrity error, 3 provider error.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::embedding::{read_embeddings, EmbeddingStore};
use crate::error::{Error, Result};
use crate::evaluation::{
    read_manifest, run_ablation, run_benchmark, run_fingerprint, AblationGrid, CorpusMode, Dataset, ManifestEntry,
    Pipeline, PipelineConfig, ProviderHandle,
};
use crate::knowledge_base::{
    chunk_corpus, names_only_corpus, read_chunks, write_chunks, ChunkConfig, KnowledgeBase, RefineOptions,
    RefinementPromptSet, RefinementTelemetry,
};
use crate::provider::{from_spec, GenerationProvider, ProviderOptions, PROVIDER_CMD_ENV};
use crate::reranker::{top_k, ContextKind};
use crate::retrieval::VocabularyScope;
use crate::simlab::{generate_instance, CountRange, SimConfig, SimEncoder};
use crate::Candidate;

/// Where the data of a run lives. Relative paths are resolved against the
/// directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub kb: PathBuf,
    pub chunks: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_chunks: Option<PathBuf>,
    pub manifest: PathBuf,
    /// Chunk text embeddings, one file per cross-modal encoder.
    pub chunk_embeddings: BTreeMap<String, PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub name_embeddings: BTreeMap<String, PathBuf>,
    /// Query image embeddings per encoder; the intra-modal file also holds the anchors.
    pub image_embeddings: BTreeMap<String, PathBuf>,
}

impl DataPaths {
    fn all(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = vec![&self.kb, &self.chunks, &self.manifest];
        out.extend(self.name_chunks.as_deref());
        out.extend(self.chunk_embeddings.values().map(PathBuf::as_path));
        out.extend(self.name_embeddings.values().map(PathBuf::as_path));
        out.extend(self.image_embeddings.values().map(PathBuf::as_path));
        out
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.kb);
        fix(&mut self.chunks);
        fix(&mut self.manifest);
        if let Some(p) = self.name_chunks.as_mut() {
            fix(p);
        }
        for map in [&mut self.chunk_embeddings, &mut self.name_embeddings, &mut self.image_embeddings] {
            map.values_mut().for_each(fix);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderSettings {
    /// See [`crate::provider::from_spec`].
    pub spec: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: u32,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_attempts() -> u32 {
    3
}

fn default_workers() -> usize {
    1
}

/// Everything needed to reproduce a run, stored as TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider: Option<ProviderSettings>,
    pub paths: DataPaths,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("run config: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Parses a config file and resolves its relative paths.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        if let Some(out) = cfg.output_dir.as_mut() {
            if out.is_relative() {
                *out = base.join(&*out);
            }
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_toml_string()).map_err(|e| Error::io(path, e))
    }

    /// Checks the pipeline settings and that every referenced file exists.
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        for p in self.paths.all() {
            if !p.is_file() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file not found")));
            }
        }
        Ok(())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let p = &self.paths;
        let load_store = |files: &BTreeMap<String, PathBuf>| -> Result<EmbeddingStore> {
            let mut store = EmbeddingStore::new();
            for (enc, path) in files {
                store.insert(read_embeddings(path, enc)?)?;
            }
            Ok(store)
        };
        let name_store = if p.name_embeddings.is_empty() { None } else { Some(load_store(&p.name_embeddings)?) };
        let kb = KnowledgeBase::load(&p.kb)?;
        let name_chunks = match &p.name_chunks {
            Some(path) => read_chunks(path)?,
            None => names_only_corpus(&kb),
        };
        let data = Dataset {
            chunks: read_chunks(&p.chunks)?,
            chunk_store: load_store(&p.chunk_embeddings)?,
            name_chunks,
            name_store,
            image_store: load_store(&p.image_embeddings)?,
            manifest: read_manifest(&p.manifest)?,
            kb,
        };
        data.validate()?;
        Ok(data)
    }
}

#[derive(Debug, Parser)]
#[command(name = "vrrag", version, about = "Retrieval-augmented species recognition toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Validate species records and write a knowledge base.
    Ingest {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate missing summaries and refined summaries with a provider.
    Refine {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "stub:echo")]
        provider: String,
        /// Regenerate already populated fields.
        #[arg(long)]
        force: bool,
    },
    /// Split refined summaries into word-window chunks.
    Chunk {
        #[arg(long)]
        kb: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        max_words: usize,
        #[arg(long, default_value_t = 15)]
        overlap: usize,
        /// One chunk per species holding only its name.
        #[arg(long)]
        names_only: bool,
    },
    /// Rank candidates for queries.
    Retrieve(InferArgs),
    /// Rank candidates and name the species with a provider.
    Classify(InferArgs),
    /// Score every manifest query and report metrics.
    Evaluate {
        #[command(flatten)]
        run: RunArgs,
        /// Generation provider; retrieval metrics only when absent.
        #[arg(long)]
        provider: Option<String>,
        /// Write summary.txt and queries.ndjson here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a grid of pipeline variants.
    Ablate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        provider: Option<String>,
        /// `encoders[=a;a+b]`, `reranker`, `k=5,10,15`, `m=10,30` or `context=names,summaries`.
        #[arg(long = "axis", required = true)]
        axes: Vec<String>,
        /// Write ablation.json here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic instance and a matching run.toml.
    Simgen(SimArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Run config (TOML); flags override its settings.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated cross-modal encoder ids.
    #[arg(long, value_delimiter = ',')]
    encoders: Option<Vec<String>>,
    #[arg(short = 'm', long)]
    m: Option<usize>,
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Rank by cross-modal scores only.
    #[arg(long)]
    no_rerank: bool,
    /// Retrieve over one name chunk per species.
    #[arg(long)]
    names_only: bool,
    /// `open`, `dataset` (species in the manifest) or `bounded:<file>` (one id per line).
    #[arg(long)]
    scope: Option<String>,
    /// Generator context: names, chunks or summaries.
    #[arg(long)]
    context: Option<ContextKind>,
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Only these query ids (default: the whole manifest).
    #[arg(long = "query")]
    queries: Vec<String>,
    #[arg(long)]
    provider: Option<String>,
}

#[derive(Debug, Args)]
struct SimArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 200)]
    species: usize,
    #[arg(long, default_value_t = 500)]
    queries: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 3)]
    encoders: usize,
    #[arg(long, default_value_t = 0.8)]
    sigma_text: f64,
    #[arg(long, default_value_t = 0.8)]
    sigma_query: f64,
    #[arg(long, default_value_t = 0.4)]
    sigma_anchor: f64,
    #[arg(long, default_value_t = crate::simlab::DEFAULT_NOISE_GAIN)]
    noise_gain: f64,
    /// `N` or `MIN-MAX`.
    #[arg(long, default_value = "3")]
    chunks: String,
    /// `N` or `MIN-MAX`.
    #[arg(long, default_value = "3")]
    anchors: String,
    /// Draw queries from the first N species only.
    #[arg(long)]
    query_species: Option<usize>,
}

/// Runs the command line `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.kind().exit_code()
        }
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Ingest { kb, out: dest } => {
            let kb = KnowledgeBase::load(&kb)?;
            kb.write(&dest)?;
            emit(out, &format!("ingested {} species ({} without refined summary)\n", kb.len(), kb.flagged().len()))
        }
        Command::Refine { kb: src, out: dest, provider, force } => {
            let kb = KnowledgeBase::load(&src)?;
            let provider = build_provider(&provider, None, HashMap::new())?;
            let telemetry = RefinementTelemetry::new();
            let opts = RefineOptions { force, ..RefineOptions::default() };
            let refined = crate::knowledge_base::refine_all(&kb, provider.as_ref(), &RefinementPromptSet::default(), &opts, &telemetry)?;
            refined.write(dest.as_ref().unwrap_or(&src))?;
            emit(out, &telemetry_table(&telemetry))
        }
        Command::Chunk { kb, out: dest, max_words, overlap, names_only } => {
            let kb = KnowledgeBase::load(&kb)?;
            let chunks = if names_only {
                names_only_corpus(&kb)
            } else {
                chunk_corpus(&kb, &ChunkConfig { max_chunk_words: max_words, overlap_words: overlap })?
            };
            write_chunks(&dest, &chunks)?;
            emit(out, &format!("wrote {} chunks for {} species\n", chunks.len(), kb.len() - kb.flagged().len()))
        }
        Command::Retrieve(args) => infer(args, false, out),
        Command::Classify(args) => infer(args, true, out),
        Command::Evaluate { run, provider, out: dest } => {
            let (cfg, data) = prepare(&run)?;
            let spec = provider.or(cfg.provider.as_ref().map(|p| p.spec.clone()));
            let provider = spec.as_deref().map(|s| build_provider(s, cfg.provider.as_ref(), truth_map(&data.manifest))).transpose()?;
            let handle = provider.as_ref().zip(spec.as_ref()).map(|(p, s)| ProviderHandle { label: s.clone(), provider: p.as_ref() });
            let result = run_benchmark(&data, &cfg.pipeline, handle.as_ref(), cfg.workers)?;
            if let Some(dir) = dest.or(cfg.output_dir.clone()) {
                result.write(dir)?;
            }
            emit(out, &result.report.to_summary())
        }
        Command::Ablate { run, provider, axes, out: dest } => {
            let (cfg, data) = prepare(&run)?;
            let grid = parse_axes(&axes, &cfg.pipeline)?;
            let spec = provider.or(cfg.provider.as_ref().map(|p| p.spec.clone()));
            let provider = spec.as_deref().map(|s| build_provider(s, cfg.provider.as_ref(), truth_map(&data.manifest))).transpose()?;
            let handle = provider.as_ref().zip(spec.as_ref()).map(|(p, s)| ProviderHandle { label: s.clone(), provider: p.as_ref() });
            let table = run_ablation(&data, &cfg.pipeline, &grid, handle.as_ref(), cfg.workers)?;
            if let Some(dir) = dest {
                fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
                let path = dir.join("ablation.json");
                fs::write(&path, serde_json::to_string_pretty(&table).expect("table serializes")).map_err(|e| Error::io(&path, e))?;
            }
            let base = run_fingerprint(&cfg.pipeline, spec.as_deref());
            emit(out, &format!("fingerprint={base}\n{}", table.render()))
        }
        Command::Simgen(args) => simgen(args, out),
    }
}

fn telemetry_table(t: &RefinementTelemetry) -> String {
    let mut s = format!("{:<24} {:>8} {:>8} {:>8}\n", "species_id", "raw", "summary", "refined");
    for e in t.snapshot() {
        let raw = e.raw_words.map_or("-".to_string(), |n| n.to_string());
        s.push_str(&format!("{:<24} {:>8} {:>8} {:>8}\n", e.species_id, raw, e.summary_words, e.refined_words));
    }
    if let Some((raw, summary, refined)) = t.averages() {
        let raw = raw.map_or("-".to_string(), |v| format!("{v:.1}"));
        s.push_str(&format!("{:<24} {:>8} {:>8.1} {:>8.1}\n", "mean", raw, summary, refined));
    }
    s
}

fn truth_map(manifest: &[ManifestEntry]) -> HashMap<String, String> {
    manifest
        .iter()
        .filter_map(|e| e.ground_truth_species.clone().map(|t| (e.query_id.clone(), t)))
        .collect()
}

fn build_provider(
    spec: &str,
    settings: Option<&ProviderSettings>,
    truth: HashMap<String, String>,
) -> Result<Box<dyn GenerationProvider>> {
    let mut opts = ProviderOptions { truth, command_override: std::env::var(PROVIDER_CMD_ENV).ok(), ..ProviderOptions::default() };
    if let Some(s) = settings {
        opts.timeout = Duration::from_secs(s.timeout_secs);
        opts.max_attempts = s.max_attempts;
    }
    Ok(from_spec(spec, &opts)?)
}

/// Loads the config, applies flag overrides and loads the data.
fn prepare(args: &RunArgs) -> Result<(RunConfig, Dataset)> {
    let mut cfg = RunConfig::load(&args.config)?;
    let p = &mut cfg.pipeline;
    if let Some(e) = &args.encoders {
        p.retrieval.encoder_ids = e.clone();
    }
    if let Some(m) = args.m {
        p.retrieval.m = m;
    }
    if let Some(k) = args.k {
        p.rerank.k = k;
    }
    if args.no_rerank {
        p.rerank_enabled = false;
    }
    if args.names_only {
        p.corpus = CorpusMode::Names;
    }
    if let Some(c) = args.context {
        p.context = c;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    cfg.validate()?;
    let data = cfg.load_dataset()?;
    if let Some(scope) = &args.scope {
        cfg.pipeline.retrieval.scope = parse_scope(scope, &data)?;
    }
    cfg.pipeline.validate()?;
    Ok((cfg, data))
}

fn parse_scope(text: &str, data: &Dataset) -> Result<VocabularyScope> {
    match text {
        "open" => Ok(VocabularyScope::Open),
        "dataset" => Ok(VocabularyScope::Bounded(data.manifest_species())),
        _ => {
            let path = text
                .strip_prefix("bounded:")
                .ok_or_else(|| Error::InvalidConfig(format!("unknown scope `{text}`")))?;
            let body = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let species: BTreeSet<String> =
                body.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(String::from).collect();
            for s in &species {
                data.kb.require(s)?;
            }
            Ok(VocabularyScope::Bounded(species))
        }
    }
}

fn parse_list<T: std::str::FromStr>(axis: &str, values: &str) -> Result<Vec<T>> {
    values
        .split(',')
        .map(|v| v.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad value `{v}` for axis `{axis}`"))))
        .collect()
}

/// Default encoder axis: each encoder alone, then growing prefixes of the configured order.
fn encoder_axis(encoders: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = encoders.iter().map(|e| vec![e.clone()]).collect();
    out.extend((2..=encoders.len()).map(|n| encoders[..n].to_vec()));
    out
}

fn parse_axes(axes: &[String], base: &PipelineConfig) -> Result<AblationGrid> {
    let mut grid = AblationGrid::default();
    for axis in axes {
        let (name, values) = match axis.split_once('=') {
            Some((n, v)) => (n.trim(), Some(v)),
            None => (axis.trim(), None),
        };
        match (name, values) {
            ("encoders", None) => grid.encoders = encoder_axis(&base.retrieval.encoder_ids),
            ("encoders", Some(v)) => {
                grid.encoders = v.split(';').map(|set| set.split('+').map(|e| e.trim().to_string()).collect()).collect()
            }
            ("reranker" | "rerank", None) => grid.rerank = vec![false, true],
            ("k", Some(v)) => grid.k = parse_list(name, v)?,
            ("m", Some(v)) => grid.m = parse_list(name, v)?,
            ("context", Some(v)) => grid.context = parse_list(name, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown ablation axis `{axis}`"))),
        }
    }
    Ok(grid)
}

#[derive(Serialize)]
struct InferenceRecord<'a> {
    fingerprint: &'a str,
    query_id: &'a str,
    candidates: &'a [Candidate],
    selected: Vec<Candidate>,
    context_species: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    prediction: Option<&'a crate::lmm::Prediction>,
}

fn infer(args: InferArgs, classify: bool, out: &mut dyn Write) -> Result<()> {
    let (cfg, data) = prepare(&args.run)?;
    let spec = args.provider.clone().or(cfg.provider.as_ref().map(|p| p.spec.clone()));
    let provider = if classify {
        let spec = spec.as_deref().ok_or_else(|| Error::InvalidConfig("classify needs --provider".into()))?;
        Some(build_provider(spec, cfg.provider.as_ref(), truth_map(&data.manifest))?)
    } else {
        None
    };
    let fp = run_fingerprint(&cfg.pipeline, if classify { spec.as_deref() } else { None });
    let pipeline = Pipeline::new(&data, cfg.pipeline.clone())?;
    let wanted: BTreeSet<&str> = args.queries.iter().map(String::as_str).collect();
    for id in &wanted {
        if !data.manifest.iter().any(|e| e.query_id == *id) {
            return Err(Error::MissingEmbedding { encoder_id: "<manifest>".into(), item_id: id.to_string() });
        }
    }
    let mut entries: Vec<&ManifestEntry> =
        data.manifest.iter().filter(|e| wanted.is_empty() || wanted.contains(e.query_id.as_str())).collect();
    entries.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    for entry in entries {
        let query = pipeline.query_input(entry)?;
        let outcome = match &provider {
            Some(p) => pipeline.classify(&query, p.as_ref())?,
            None => pipeline.run_query(&query)?,
        };
        let record = InferenceRecord {
            fingerprint: &fp,
            query_id: &entry.query_id,
            candidates: &outcome.ranked,
            selected: top_k(&outcome.ranked, cfg.pipeline.rerank.k),
            context_species: outcome.context.iter().map(|c| c.species_id.as_str()).collect(),
            prediction: outcome.prediction.as_ref(),
        };
        emit(out, &format!("{}\n", serde_json::to_string(&record).expect("record serializes")))?;
    }
    Ok(())
}

fn parse_range(flag: &str, text: &str) -> Result<CountRange> {
    let bad = || Error::InvalidConfig(format!("--{flag} expects N or MIN-MAX, got `{text}`"));
    match text.split_once('-') {
        Some((a, b)) => Ok(CountRange { min: a.parse().map_err(|_| bad())?, max: b.parse().map_err(|_| bad())? }),
        None => Ok(CountRange::fixed(text.parse().map_err(|_| bad())?)),
    }
}

fn simgen(args: SimArgs, out: &mut dyn Write) -> Result<()> {
    if args.encoders == 0 || args.encoders > 26 {
        return Err(Error::InvalidConfig("--encoders must be between 1 and 26".into()));
    }
    let encoders: Vec<SimEncoder> = (0..args.encoders)
        .map(|i| SimEncoder { encoder_id: format!("enc-{}", (b'a' + i as u8) as char), text_sigma: args.sigma_text })
        .collect();
    let sim = SimConfig {
        n_species: args.species,
        chunks_per_species: parse_range("chunks", &args.chunks)?,
        anchors_per_species: parse_range("anchors", &args.anchors)?,
        latent_dim: args.dim,
        encoders,
        query_sigma: args.sigma_query,
        anchor_sigma: args.sigma_anchor,
        noise_gain: args.noise_gain,
        n_queries: args.queries,
        query_species: args.query_species,
        seed: args.seed,
        ..SimConfig::pinned()
    };
    let inst = generate_instance(&sim)?;
    let files = inst.write(&args.out)?;
    let run = RunConfig {
        seed: args.seed,
        workers: 1,
        output_dir: None,
        provider: None,
        paths: DataPaths {
            kb: files.kb,
            chunks: files.chunks,
            name_chunks: Some(files.name_chunks),
            manifest: files.manifest,
            chunk_embeddings: files.chunk_embeddings,
            name_embeddings: files.name_embeddings,
            image_embeddings: files.image_embeddings,
        },
        pipeline: PipelineConfig::new(sim.encoder_ids(), &sim.intra_encoder_id),
    };
    let path = args.out.join("run.toml");
    run.save(&path)?;
    emit(
        out,
        &format!(
            "wrote {} species, {} chunks, {} queries to {}\nfingerprint={}\n",
            inst.dataset.kb.len(),
            inst.dataset.chunks.len(),
            inst.dataset.manifest.len(),
            path.display(),
            run_fingerprint(&run.pipeline, None)
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("vrrag").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run_cli(&["frobnicate"]).0, 1);
        assert_eq!(run_cli(&["chunk", "--kb"]).0, 1);
        assert_eq!(run_cli(&["--help"]).0, 0);
    }

    #[test]
    fn axes_parse() {
        let base = PipelineConfig::new(["a", "b", "c"], "dino");
        let g = parse_axes(&["encoders".into(), "reranker".into()], &base).unwrap();
        let expected: Vec<Vec<String>> = vec![vec!["a".into()], vec!["b".into()], vec!["c".into()], vec!["a".into(), "b".into()], vec!["a".into(), "b".into(), "c".into()]];
        assert_eq!(g.encoders, expected);
        assert_eq!(g.rerank, vec![false, true]);
        let g = parse_axes(&["k=5,10,15".into(), "encoders=a;b+c".into()], &base).unwrap();
        assert_eq!(g.k, vec![5, 10, 15]);
        assert_eq!(g.encoders.len(), 2);
        assert!(parse_axes(&["k".into()], &base).is_err());
        assert!(parse_axes(&["k=x".into()], &base).is_err());
    }

    #[test]
    fn simgen_then_config_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let (code, stdout, stderr) = run_cli(&["simgen", "--out", d, "--species", "10", "--queries", "12", "--dim", "8"]);
        assert_eq!(code, 0, "{stderr}");
        assert!(stdout.contains("fingerprint="));
        let cfg = RunConfig::load(dir.path().join("run.toml")).unwrap();
        cfg.validate().unwrap();
        assert_eq!(RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
        let data = cfg.load_dataset().unwrap();
        assert_eq!(data.kb.len(), 10);
        assert_eq!(data.manifest.len(), 12);
    }

    #[test]
    fn range_flag() {
        assert_eq!(parse_range("chunks", "1-3").unwrap(), CountRange { min: 1, max: 3 });
        assert_eq!(parse_range("chunks", "2").unwrap(), CountRange::fixed(2));
        assert!(parse_range("chunks", "x").is_err());
    }
}
