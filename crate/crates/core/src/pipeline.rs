//! End-to-end orchestration: language atoms, visual atoms, frame vectors,
//! BP-HMM parsing, captions and evaluation, with per-stage checkpoints.
//!
//! Each stage records a fingerprint of its inputs and settings in
//! `manifest.json`; a rerun skips stages whose fingerprint and outputs are
//! unchanged, and the parsing stage resumes from its last chain checkpoint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bphmm::Hyperparams;
use crate::captioner::{caption_step, train_lm, CaptionConfig};
use crate::corpus::{
    load_dataset, load_ground_truth, load_json, load_results, save_json, save_results, tokenize,
    Collection, LoadOptions, ParseResults, TextOptions, RESULTS_SCHEMA_VERSION,
};
use crate::error::{Error, Result};
use crate::gibbs::{
    state_posteriors, BirthProposal, ChainOutput, Checkpoint, ReportedSample, Sampler,
    SamplerConfig,
};
use crate::joint_cluster::{
    extract_visual_atoms, filter_outliers, AtomSet, ClusterConfig, OutlierSplit, SolverConfig,
};
use crate::lang_atoms::{compute_tfidf, select_language_atoms, LanguageAtom};
use crate::metrics::{evaluate_category, IouMode, MetricsReport};
use crate::representation::{
    read_sequences, represent_collection, write_sequences, AtomVocabulary, SequenceFormat,
    SequenceSet,
};
use crate::rng::{derive_index_seed, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BirthKind {
    Prior,
    DataDriven,
}

/// Every tunable of the pipeline, as flat keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Category name used in reports; defaults to the dataset file stem.
    pub category: Option<String>,

    pub max_proposals_per_frame: usize,
    pub remove_stop_words: bool,
    /// Other collections' datasets, used only for document frequencies.
    pub background_corpora: Vec<PathBuf>,
    pub language_atoms: usize,

    pub filter_outliers: bool,
    pub visual_atoms: usize,
    pub proposal_neighbors: usize,
    pub video_neighbors: usize,
    pub quality_floor: f64,
    pub min_videos: usize,
    pub solver_step_size: f64,
    pub solver_decay: f64,
    pub solver_tolerance: f64,
    pub solver_patience: usize,
    pub solver_max_steps: usize,
    pub edge_sample_fraction: Option<f64>,

    pub frame_stride: usize,
    pub sequence_format: SequenceFormat,

    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub kappa: f64,
    pub a0: f64,
    pub b0: f64,
    pub sweeps: usize,
    pub burn_in: Option<usize>,
    pub chains: usize,
    pub initial_steps: usize,
    pub max_steps: Option<usize>,
    pub birth_proposal: BirthKind,
    pub birth_prior_weight: f64,
    pub birth_window: usize,
    pub report: ReportedSample,
    /// Write a resumable chain checkpoint every this many sweeps (0: never).
    pub checkpoint_every: usize,

    pub caption_candidates: usize,
    pub caption_max_len: usize,
    pub caption_weight: f64,
    pub lm_smoothing: f64,

    pub iou_mode: IouMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let cluster = ClusterConfig::default();
        let sampler = SamplerConfig::default();
        let caption = CaptionConfig::default();
        let h = Hyperparams::default();
        PipelineConfig {
            seed: 0,
            category: None,
            max_proposals_per_frame: LoadOptions::default().max_proposals_per_frame,
            remove_stop_words: true,
            background_corpora: Vec::new(),
            language_atoms: crate::lang_atoms::DEFAULT_LANGUAGE_ATOMS,
            filter_outliers: false,
            visual_atoms: cluster.atoms,
            proposal_neighbors: cluster.proposal_neighbors,
            video_neighbors: cluster.video_neighbors,
            quality_floor: cluster.quality_floor,
            min_videos: cluster.min_videos,
            solver_step_size: cluster.solver.step_size,
            solver_decay: cluster.solver.decay,
            solver_tolerance: cluster.solver.tolerance,
            solver_patience: cluster.solver.patience,
            solver_max_steps: cluster.solver.max_steps,
            edge_sample_fraction: None,
            frame_stride: 1,
            sequence_format: SequenceFormat::Dense,
            gamma: h.gamma,
            beta: h.beta,
            alpha: h.alpha,
            kappa: h.kappa,
            a0: h.a0,
            b0: h.b0,
            sweeps: sampler.sweeps,
            burn_in: None,
            chains: 1,
            initial_steps: sampler.initial_steps,
            max_steps: None,
            birth_proposal: BirthKind::Prior,
            birth_prior_weight: 0.5,
            birth_window: 5,
            report: ReportedSample::default(),
            checkpoint_every: 50,
            caption_candidates: caption.candidates,
            caption_max_len: caption.max_len,
            caption_weight: caption.weight,
            lm_smoothing: caption.smoothing,
            iou_mode: IouMode::default(),
        }
    }
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::schema("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        if self.language_atoms == 0 && self.visual_atoms == 0 {
            return Err(invalid(
                "at least one of language_atoms and visual_atoms must be ≥ 1",
            ));
        }
        if self.max_proposals_per_frame == 0 {
            return Err(invalid("max_proposals_per_frame must be ≥ 1"));
        }
        if self.proposal_neighbors == 0 || self.video_neighbors == 0 {
            return Err(invalid("neighbor counts must be ≥ 1"));
        }
        if !(self.quality_floor >= 0.0) {
            return Err(invalid("quality_floor must be ≥ 0"));
        }
        if !(self.solver_step_size > 0.0 && self.solver_decay > 0.0 && self.solver_tolerance >= 0.0)
        {
            return Err(invalid("solver step size and decay must be positive"));
        }
        if self.solver_max_steps == 0 || self.solver_patience == 0 {
            return Err(invalid("solver_max_steps and solver_patience must be ≥ 1"));
        }
        if self
            .edge_sample_fraction
            .is_some_and(|f| !(f > 0.0 && f <= 1.0))
        {
            return Err(invalid("edge_sample_fraction must be in (0, 1]"));
        }
        if self.frame_stride == 0 || self.chains == 0 {
            return Err(invalid("frame_stride and chains must be ≥ 1"));
        }
        self.sampler_config().validate()?;
        self.caption_config().validate()
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            max_proposals_per_frame: self.max_proposals_per_frame,
            text: TextOptions {
                remove_stop_words: self.remove_stop_words,
            },
        }
    }

    pub fn cluster_config(&self) -> ClusterConfig {
        ClusterConfig {
            atoms: self.visual_atoms,
            proposal_neighbors: self.proposal_neighbors,
            video_neighbors: self.video_neighbors,
            quality_floor: self.quality_floor,
            min_videos: self.min_videos,
            solver: SolverConfig {
                step_size: self.solver_step_size,
                decay: self.solver_decay,
                tolerance: self.solver_tolerance,
                patience: self.solver_patience,
                max_steps: self.solver_max_steps,
                edge_sample_fraction: self.edge_sample_fraction,
                seed: derive_seed(self.seed, "cluster"),
            },
        }
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            gamma: self.gamma,
            beta: self.beta,
            alpha: self.alpha,
            kappa: self.kappa,
            a0: self.a0,
            b0: self.b0,
        }
    }

    pub fn sampler_config(&self) -> SamplerConfig {
        SamplerConfig {
            hyper: self.hyperparams(),
            sweeps: self.sweeps,
            burn_in: self.burn_in,
            initial_steps: self.initial_steps,
            max_steps: self.max_steps,
            birth: match self.birth_proposal {
                BirthKind::Prior => BirthProposal::Prior,
                BirthKind::DataDriven => BirthProposal::DataDriven {
                    prior_weight: self.birth_prior_weight,
                    window: self.birth_window,
                },
            },
            report: self.report,
        }
    }

    pub fn caption_config(&self) -> CaptionConfig {
        CaptionConfig {
            candidates: self.caption_candidates,
            max_len: self.caption_max_len,
            weight: self.caption_weight,
            smoothing: self.lm_smoothing,
        }
    }
}

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Filter,
    Atoms,
    Cluster,
    Represent,
    Parse,
    Caption,
    Eval,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Filter => "filter",
            Stage::Atoms => "atoms",
            Stage::Cluster => "cluster",
            Stage::Represent => "represent",
            Stage::Parse => "parse",
            Stage::Caption => "caption",
            Stage::Eval => "eval",
        }
    }
}

fn stage_err(stage: Stage) -> impl Fn(Error) -> Error {
    move |e| Error::Stage {
        stage: stage.name().to_string(),
        source: Box::new(e),
    }
}

/// Artifact file names inside the output directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const OUTLIERS: &str = "outliers.json";
    pub const LANGUAGE_ATOMS: &str = "language_atoms.json";
    pub const VISUAL_ATOMS: &str = "visual_atoms.json";
    pub const VOCABULARY: &str = "vocabulary.json";
    pub const SEQUENCES: &str = "sequences.dat";
    pub const RESULTS: &str = "model_state.json";
    pub const TRACE: &str = "trace.csv";
    pub const SEGMENTATION: &str = "segmentation.jsonl";
    pub const POSTERIORS: &str = "posteriors.json";
    pub const CAPTIONS: &str = "captions.json";
    pub const METRICS: &str = "metrics.json";
    pub const METRICS_TABLE: &str = "metrics.txt";

    pub fn checkpoint(chain: usize) -> String {
        format!("checkpoint_chain{chain}.json")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub fingerprint: String,
    pub outputs: Vec<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn fingerprint(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex(&h.finalize())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("serializable")
}

pub fn file_fingerprint(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(fingerprint(&[&bytes]))
}

/// Per-video step path, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationRecord {
    pub video_id: String,
    pub steps: Vec<usize>,
}

pub fn write_segmentation(path: &Path, ids: &[String], states: &[Vec<usize>]) -> Result<()> {
    let mut text = String::new();
    for (id, z) in ids.iter().zip(states) {
        let rec = SegmentationRecord {
            video_id: id.clone(),
            steps: z.clone(),
        };
        text.push_str(&serde_json::to_string(&rec).expect("serializable"));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_segmentation(path: &Path) -> Result<BTreeMap<String, Vec<usize>>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (n, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let rec: SegmentationRecord = serde_json::from_str(line)
            .map_err(|e| Error::schema(format!("{}:{}", path.display(), n + 1), e.to_string()))?;
        out.insert(rec.video_id, rec.steps);
    }
    Ok(out)
}

/// Step captions keyed by step id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepCaption {
    pub step: usize,
    pub caption: String,
    pub score: f64,
}

/// Language atoms of `target` scored against background collections.
pub fn language_atoms(
    target: &Collection,
    background: &[Collection],
    k: usize,
) -> Result<Vec<LanguageAtom>> {
    let mut docs = vec![target.subtitle_document()];
    docs.extend(background.iter().map(Collection::subtitle_document));
    let scores = compute_tfidf(&docs, 0)?;
    select_language_atoms(&scores, k)
}

/// Visual atoms, or an empty set when none are requested or no proposals
/// exist.
pub fn visual_atoms(collection: &Collection, config: &ClusterConfig) -> Result<AtomSet> {
    if config.atoms == 0 || collection.feature_dim.is_none() {
        return Ok(AtomSet {
            video_ids: collection.ids(),
            atoms: Vec::new(),
            stop_reason: crate::joint_cluster::StopReason::PoolExhausted,
        });
    }
    extract_visual_atoms(collection, config)
}

pub fn vocabulary(language: &[LanguageAtom], visual: &AtomSet) -> AtomVocabulary {
    AtomVocabulary {
        language: language.iter().map(|a| a.word.clone()).collect(),
        visual: visual.atoms.len(),
    }
}

/// Run one chain, writing a checkpoint every `every` sweeps and resuming
/// from `checkpoint_path` when it holds a checkpoint tagged with `tag`.
pub fn run_chain_checkpointed(
    data: &SequenceSet,
    config: &SamplerConfig,
    seed: u64,
    every: usize,
    checkpoint_path: Option<&Path>,
    tag: &str,
) -> Result<ChainOutput> {
    #[derive(Serialize, Deserialize)]
    struct Tagged {
        tag: String,
        checkpoint: Checkpoint,
    }
    let mut sampler = match checkpoint_path.filter(|p| p.exists()) {
        Some(p) => match load_json::<Tagged>(p) {
            Ok(t) if t.tag == tag => {
                info!(
                    "resuming chain from {} at sweep {}",
                    p.display(),
                    t.checkpoint.state.iteration
                );
                Sampler::resume(data, config.clone(), t.checkpoint)?
            }
            _ => Sampler::new(data, config.clone(), seed)?,
        },
        None => Sampler::new(data, config.clone(), seed)?,
    };
    while !sampler.is_done() {
        sampler.sweep()?;
        let done = sampler.completed_sweeps();
        if let Some(p) = checkpoint_path {
            if every > 0 && done % every == 0 && !sampler.is_done() {
                let tmp = p.with_extension("tmp");
                save_json(
                    &tmp,
                    &Tagged {
                        tag: tag.to_string(),
                        checkpoint: sampler.checkpoint(),
                    },
                )?;
                fs::rename(&tmp, p).map_err(|e| Error::io(p, e))?;
            }
        }
    }
    Ok(sampler.finish())
}

/// Parse a sequence set with one or more chains; the chain whose reported
/// state has the highest joint log-likelihood wins.
pub fn parse_sequences(
    data: &SequenceSet,
    config: &SamplerConfig,
    seed: u64,
    chains: usize,
    every: usize,
    checkpoint_dir: Option<&Path>,
    tag: &str,
) -> Result<ParseResults> {
    if chains == 0 {
        return Err(invalid("need at least one chain"));
    }
    let outputs: Vec<ChainOutput> = (0..chains)
        .into_par_iter()
        .map(|c| {
            let path = checkpoint_dir.map(|d| d.join(files::checkpoint(c)));
            run_chain_checkpointed(
                data,
                config,
                derive_index_seed(seed, c as u64),
                every,
                path.as_deref(),
                tag,
            )
        })
        .collect::<Result<_>>()?;
    let mut best = 0;
    let mut best_ll = f64::NEG_INFINITY;
    for (c, o) in outputs.iter().enumerate() {
        let ll = crate::gibbs::joint_loglik(&o.reported, data);
        if ll > best_ll {
            best = c;
            best_ll = ll;
        }
    }
    let out = outputs.into_iter().nth(best).expect("chain exists");
    Ok(ParseResults {
        schema_version: RESULTS_SCHEMA_VERSION,
        sequence_ids: data.ids(),
        reported_sweep: out.reported_sweep,
        reported: out.reported,
        last: out.last,
        diagnostics: out.diagnostics,
    })
}

/// Per-video posteriors of the reported state keyed by video id.
pub fn posteriors_by_id(
    results: &ParseResults,
    data: &SequenceSet,
) -> BTreeMap<String, Vec<Vec<f64>>> {
    results
        .sequence_ids
        .iter()
        .cloned()
        .zip(state_posteriors(&results.reported, data))
        .collect()
}

pub fn predictions_by_id(results: &ParseResults) -> BTreeMap<String, Vec<usize>> {
    results
        .sequence_ids
        .iter()
        .cloned()
        .zip(results.reported.states.iter().cloned())
        .collect()
}

/// Caption every step of the reported state.
pub fn caption_steps(
    collection: &Collection,
    results: &ParseResults,
    vocab: &AtomVocabulary,
    config: &CaptionConfig,
    seed: u64,
) -> Result<Vec<StepCaption>> {
    let sentences: Vec<Vec<String>> = collection
        .videos
        .iter()
        .flat_map(|v| &v.frames)
        .map(|f| {
            tokenize(
                &f.subtitle,
                TextOptions {
                    remove_stop_words: false,
                },
            )
        })
        .filter(|s| !s.is_empty())
        .collect();
    let lm = train_lm(&sentences, config.smoothing)?;
    let l = vocab.language.len();
    results
        .reported
        .theta
        .iter()
        .enumerate()
        .map(|(k, theta)| {
            let c = caption_step(
                &lm,
                &theta[..l.min(theta.len())],
                &vocab.language,
                config,
                derive_index_seed(seed, k as u64),
            )?;
            Ok(StepCaption {
                step: k,
                caption: c.text(),
                score: c.score,
            })
        })
        .collect()
}

/// Inputs of a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub dataset: PathBuf,
    pub ground_truth: Option<PathBuf>,
    pub out_dir: PathBuf,
    /// Stop after this stage.
    pub until: Option<Stage>,
    /// Evaluate even without a ground-truth path (fails explicitly).
    pub require_eval: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutcome {
    pub executed: Vec<Stage>,
    pub skipped: Vec<Stage>,
    pub report: Option<MetricsReport>,
}

struct Runner<'a> {
    out: &'a Path,
    manifest: Manifest,
    outcome: PipelineOutcome,
}

impl Runner<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn up_to_date(&self, stage: Stage, fp: &str) -> bool {
        self.manifest.stages.get(stage.name()).is_some_and(|r| {
            r.fingerprint == fp && r.outputs.iter().all(|o| self.out.join(o).exists())
        })
    }

    fn record(&mut self, stage: Stage, fp: String, outputs: &[&str]) -> Result<()> {
        self.manifest.stages.insert(
            stage.name().to_string(),
            StageRecord {
                fingerprint: fp,
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
            },
        );
        self.outcome.executed.push(stage);
        save_json(self.path(files::MANIFEST), &self.manifest)
    }

    fn stage_fp(&self, stage: Stage, settings: &[u8], upstream: &[&str]) -> String {
        let mut parts: Vec<&[u8]> = vec![stage.name().as_bytes(), settings];
        parts.extend(upstream.iter().map(|s| s.as_bytes()));
        fingerprint(&parts)
    }
}

/// Execute the pipeline; see the module documentation for checkpointing.
pub fn run_pipeline(config: &PipelineConfig, inputs: &PipelineInputs) -> Result<PipelineOutcome> {
    config.validate()?;
    fs::create_dir_all(&inputs.out_dir).map_err(|e| Error::io(&inputs.out_dir, e))?;
    let manifest_path = inputs.out_dir.join(files::MANIFEST);
    let manifest = if manifest_path.exists() {
        load_json(&manifest_path).unwrap_or_default()
    } else {
        Manifest::default()
    };
    let mut r = Runner {
        out: &inputs.out_dir,
        manifest,
        outcome: PipelineOutcome {
            executed: Vec::new(),
            skipped: Vec::new(),
            report: None,
        },
    };
    let stop = |s: Stage| inputs.until.is_some_and(|u| s > u);

    let load = config.load_options();
    let input_fp = file_fingerprint(&inputs.dataset)?;
    let full = load_dataset(&inputs.dataset, &load).map_err(stage_err(Stage::Atoms))?;

    // Outlier filtering.
    let mut upstream = fingerprint(&[input_fp.as_bytes(), &json_bytes(&load)]);
    let collection = if config.filter_outliers {
        let fp = r.stage_fp(Stage::Filter, b"", &[&upstream]);
        let split: OutlierSplit = if r.up_to_date(Stage::Filter, &fp) {
            r.outcome.skipped.push(Stage::Filter);
            load_json(r.path(files::OUTLIERS))?
        } else {
            info!("stage filter");
            let split = filter_outliers(&full).map_err(stage_err(Stage::Filter))?;
            save_json(r.path(files::OUTLIERS), &split)?;
            r.record(Stage::Filter, fp.clone(), &[files::OUTLIERS])?;
            split
        };
        upstream = fp;
        full.retain_ids(&split.kept)
    } else {
        full
    };

    // Language atoms.
    let mut background = Vec::new();
    let mut bg_fps = Vec::new();
    for p in &config.background_corpora {
        bg_fps.push(file_fingerprint(p)?);
        background.push(load_dataset(p, &load).map_err(stage_err(Stage::Atoms))?);
    }
    let atoms_fp = r.stage_fp(
        Stage::Atoms,
        &json_bytes(&(config.language_atoms, &bg_fps)),
        &[&upstream],
    );
    let language: Vec<LanguageAtom> = if r.up_to_date(Stage::Atoms, &atoms_fp) {
        r.outcome.skipped.push(Stage::Atoms);
        load_json(r.path(files::LANGUAGE_ATOMS))?
    } else {
        info!("stage atoms");
        let atoms = if config.language_atoms == 0 {
            Vec::new()
        } else {
            language_atoms(&collection, &background, config.language_atoms)
                .map_err(stage_err(Stage::Atoms))?
        };
        save_json(r.path(files::LANGUAGE_ATOMS), &atoms)?;
        r.record(Stage::Atoms, atoms_fp.clone(), &[files::LANGUAGE_ATOMS])?;
        atoms
    };
    if stop(Stage::Cluster) {
        return Ok(r.outcome);
    }

    // Visual atoms.
    let cluster_config = config.cluster_config();
    let cluster_fp = r.stage_fp(Stage::Cluster, &json_bytes(&cluster_config), &[&upstream]);
    let visual: AtomSet = if r.up_to_date(Stage::Cluster, &cluster_fp) {
        r.outcome.skipped.push(Stage::Cluster);
        load_json(r.path(files::VISUAL_ATOMS))?
    } else {
        info!("stage cluster");
        let set = visual_atoms(&collection, &cluster_config).map_err(stage_err(Stage::Cluster))?;
        save_json(r.path(files::VISUAL_ATOMS), &set)?;
        r.record(Stage::Cluster, cluster_fp.clone(), &[files::VISUAL_ATOMS])?;
        set
    };
    if stop(Stage::Represent) {
        return Ok(r.outcome);
    }

    // Frame vectors.
    let vocab = vocabulary(&language, &visual);
    let represent_fp = r.stage_fp(
        Stage::Represent,
        &json_bytes(&(config.frame_stride, config.sequence_format)),
        &[&atoms_fp, &cluster_fp],
    );
    let sequences: SequenceSet = if r.up_to_date(Stage::Represent, &represent_fp) {
        r.outcome.skipped.push(Stage::Represent);
        read_sequences(r.path(files::SEQUENCES))?
    } else {
        info!("stage represent");
        if vocab.dim() == 0 {
            return Err(stage_err(Stage::Represent)(Error::Degenerate(
                "no language or visual atoms were found".into(),
            )));
        }
        let set = represent_collection(
            &collection,
            &vocab,
            &visual.membership(),
            config.frame_stride,
        )
        .map_err(stage_err(Stage::Represent))?;
        save_json(r.path(files::VOCABULARY), &vocab)?;
        write_sequences(r.path(files::SEQUENCES), &set, config.sequence_format)?;
        r.record(
            Stage::Represent,
            represent_fp.clone(),
            &[files::VOCABULARY, files::SEQUENCES],
        )?;
        set
    };
    if stop(Stage::Parse) {
        return Ok(r.outcome);
    }

    // Parsing.
    let sampler_config = config.sampler_config();
    let parse_seed = derive_seed(config.seed, "parse");
    let parse_fp = r.stage_fp(
        Stage::Parse,
        &json_bytes(&(&sampler_config, config.chains, parse_seed)),
        &[&represent_fp],
    );
    let results: ParseResults = if r.up_to_date(Stage::Parse, &parse_fp) {
        r.outcome.skipped.push(Stage::Parse);
        load_results(r.path(files::RESULTS))?
    } else {
        info!("stage parse");
        let results = parse_sequences(
            &sequences,
            &sampler_config,
            parse_seed,
            config.chains,
            config.checkpoint_every,
            Some(r.out),
            &parse_fp,
        )
        .map_err(stage_err(Stage::Parse))?;
        save_results(r.path(files::RESULTS), &results)?;
        let trace = r.path(files::TRACE);
        fs::write(&trace, results.diagnostics.trace_csv()).map_err(|e| Error::io(&trace, e))?;
        write_segmentation(
            &r.path(files::SEGMENTATION),
            &results.sequence_ids,
            &results.reported.states,
        )?;
        save_json(
            r.path(files::POSTERIORS),
            &posteriors_by_id(&results, &sequences),
        )?;
        for c in 0..config.chains {
            let p = r.path(&files::checkpoint(c));
            if p.exists() {
                fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
            }
        }
        r.record(
            Stage::Parse,
            parse_fp.clone(),
            &[
                files::RESULTS,
                files::TRACE,
                files::SEGMENTATION,
                files::POSTERIORS,
            ],
        )?;
        results
    };
    if stop(Stage::Caption) {
        return Ok(r.outcome);
    }

    // Captions.
    let caption_config = config.caption_config();
    let caption_seed = derive_seed(config.seed, "caption");
    let caption_fp = r.stage_fp(
        Stage::Caption,
        &json_bytes(&(&caption_config, caption_seed)),
        &[&parse_fp, &upstream],
    );
    if r.up_to_date(Stage::Caption, &caption_fp) {
        r.outcome.skipped.push(Stage::Caption);
    } else if vocab.language.is_empty() {
        info!("no language atoms; captions skipped");
    } else {
        info!("stage caption");
        let captions = caption_steps(&collection, &results, &vocab, &caption_config, caption_seed)
            .map_err(stage_err(Stage::Caption))?;
        save_json(r.path(files::CAPTIONS), &captions)?;
        r.record(Stage::Caption, caption_fp, &[files::CAPTIONS])?;
    }
    if stop(Stage::Eval) {
        return Ok(r.outcome);
    }

    // Evaluation.
    let Some(gt_path) = &inputs.ground_truth else {
        if inputs.require_eval {
            return Err(stage_err(Stage::Eval)(invalid(
                "evaluation requested but no ground truth was given",
            )));
        }
        return Ok(r.outcome);
    };
    info!("stage eval");
    let gt = load_ground_truth(gt_path).map_err(stage_err(Stage::Eval))?;
    let category = config.category.clone().unwrap_or_else(|| {
        inputs.dataset.file_stem().map_or_else(
            || "collection".to_string(),
            |s| s.to_string_lossy().into_owned(),
        )
    });
    let predicted = predictions_by_id(&results);
    let posteriors = posteriors_by_id(&results, &sequences);
    let metrics = evaluate_category(&category, &predicted, &posteriors, &gt, config.iou_mode)
        .map_err(stage_err(Stage::Eval))?;
    let report = MetricsReport::new(vec![metrics]);
    save_json(r.path(files::METRICS), &report)?;
    let table = r.path(files::METRICS_TABLE);
    fs::write(&table, report.to_table()).map_err(|e| Error::io(&table, e))?;
    let eval_fp = r.stage_fp(
        Stage::Eval,
        &json_bytes(&config.iou_mode),
        &[&parse_fp, &file_fingerprint(gt_path)?],
    );
    r.record(
        Stage::Eval,
        eval_fp,
        &[files::METRICS, files::METRICS_TABLE],
    )?;
    r.outcome.report = Some(report);
    Ok(r.outcome)
}
