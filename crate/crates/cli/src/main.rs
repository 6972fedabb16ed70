use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use stepparse::bphmm::{generate_synthetic, FeatureSource, SyntheticConfig};
use stepparse::corpus::{
    load_dataset, load_ground_truth, load_json, load_results, save_json, save_results,
    write_dataset, write_ground_truth, GroundTruth,
};
use stepparse::gibbs::ReportedSample;
use stepparse::joint_cluster::{filter_outliers, AtomSet};
use stepparse::lang_atoms::LanguageAtom;
use stepparse::metrics::{evaluate_category, IouMode, MetricsReport};
use stepparse::pipeline::{
    caption_steps, files, language_atoms, parse_sequences, posteriors_by_id, read_segmentation,
    run_pipeline, visual_atoms, vocabulary, write_segmentation, BirthKind, PipelineConfig,
    PipelineInputs, Stage,
};
use stepparse::representation::{
    read_sequences, represent_collection, write_sequences, AtomVocabulary, SequenceFormat,
};
use stepparse::rng::{derive_seed, rng_from_seed};
use stepparse::synthetic::{synthetic_videos, VideoSynthConfig};
use stepparse::{Error, Result};

#[derive(Parser)]
#[command(
    name = "stepparse",
    version,
    about = "Discover activity steps in instructional video collections"
)]
struct Cli {
    /// TOML configuration file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Maximum worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand)]
enum Command {
    /// Select language atoms by tf-idf.
    Atoms(AtomsArgs),
    /// Extract visual atoms by joint clustering of object proposals.
    Cluster(ClusterArgs),
    /// Drop videos whose descriptions do not fit the collection.
    Filter(FilterArgs),
    /// Encode frames as binary atom vectors.
    Represent(RepresentArgs),
    /// Sample a synthetic dataset with known latent structure.
    Synth(SynthArgs),
    /// Run the BP-HMM sampler over frame vectors.
    Parse(ParseArgs),
    /// Caption each discovered step.
    Caption(CaptionArgs),
    /// Score a segmentation against ground truth.
    Eval(EvalArgs),
    /// Run every stage with checkpoints.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct AtomsArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Print the ranked word/score table.
    #[arg(long)]
    lang: bool,
    /// Datasets of other collections, used for document frequencies.
    #[arg(long)]
    background: Vec<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    atoms: Option<usize>,
    #[arg(long)]
    knn_proposals: Option<usize>,
    #[arg(long)]
    knn_videos: Option<usize>,
    #[arg(long)]
    quality_floor: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Where to write the kept/discarded split.
    #[arg(long)]
    out: PathBuf,
    /// Optionally write the dataset restricted to kept videos.
    #[arg(long)]
    kept_dataset: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Dense,
    Packed,
}

#[derive(Args)]
struct RepresentArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    language: PathBuf,
    #[arg(long)]
    visual: PathBuf,
    #[arg(long)]
    frame_stride: Option<usize>,
    #[arg(long, value_enum)]
    format: Option<FormatArg>,
    /// Sequence file to write; the vocabulary goes next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    /// Binary frame vectors straight from the generative model.
    Sequences,
    /// Raw videos with subtitles and proposals.
    Videos,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "sequences")]
    kind: SynthKind,
    #[arg(long, default_value_t = 8)]
    videos: usize,
    #[arg(long, default_value_t = 100)]
    frames: usize,
    #[arg(long, default_value_t = 30)]
    dims: usize,
    /// Fix the number of steps instead of drawing it from the IBP.
    #[arg(long)]
    steps: Option<usize>,
    /// Probability that a video owns each fixed step.
    #[arg(long, default_value_t = 0.75)]
    share: f64,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    b0: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportArg {
    MaxLikelihood,
    Last,
}

#[derive(Clone, Copy, ValueEnum)]
enum BirthArg {
    Prior,
    DataDriven,
}

#[derive(Args)]
struct ParseArgs {
    #[arg(long)]
    sequences: PathBuf,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long, value_enum)]
    report: Option<ReportArg>,
    #[arg(long, value_enum)]
    birth: Option<BirthArg>,
    #[command(flatten)]
    hyper: HyperArgs,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct CaptionArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    results: PathBuf,
    #[arg(long)]
    vocabulary: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum IouArg {
    Segment,
    FrameSet,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    segmentation: PathBuf,
    #[arg(long)]
    posteriors: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    category: Option<String>,
    #[arg(long, value_enum)]
    iou_mode: Option<IouArg>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Atoms,
    Cluster,
    Represent,
    Parse,
    Caption,
    Eval,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    gt: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum)]
    until: Option<StageArg>,
    /// Fail if evaluation cannot run.
    #[arg(long)]
    eval: bool,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
}

fn apply_hyper(config: &mut PipelineConfig, h: &HyperArgs) {
    let pairs = [
        (&mut config.gamma, h.gamma),
        (&mut config.beta, h.beta),
        (&mut config.alpha, h.alpha),
        (&mut config.kappa, h.kappa),
        (&mut config.a0, h.a0),
        (&mut config.b0, h.b0),
    ];
    for (slot, v) in pairs {
        if let Some(v) = v {
            *slot = v;
        }
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut config.seed, cli.seed);

    match cli.command {
        Some(Command::Atoms(a)) => {
            set(&mut config.language_atoms, a.count);
            config.validate()?;
            let load = config.load_options();
            let target = load_dataset(&a.dataset, &load)?;
            let background = a
                .background
                .iter()
                .map(|p| load_dataset(p, &load))
                .collect::<Result<Vec<_>>>()?;
            let atoms = language_atoms(&target, &background, config.language_atoms)?;
            info!("selected {} language atoms", atoms.len());
            if a.lang {
                for atom in &atoms {
                    println!("{}\t{:.6}", atom.word, atom.score);
                }
            }
            save_json(&a.out, &atoms)
        }
        Some(Command::Cluster(a)) => {
            set(&mut config.visual_atoms, a.atoms);
            set(&mut config.proposal_neighbors, a.knn_proposals);
            set(&mut config.video_neighbors, a.knn_videos);
            set(&mut config.quality_floor, a.quality_floor);
            config.validate()?;
            let collection = load_dataset(&a.dataset, &config.load_options())?;
            let set = visual_atoms(&collection, &config.cluster_config())?;
            info!(
                "extracted {} visual atoms ({:?})",
                set.atoms.len(),
                set.stop_reason
            );
            save_json(&a.out, &set)
        }
        Some(Command::Filter(a)) => {
            config.validate()?;
            let collection = load_dataset(&a.dataset, &config.load_options())?;
            let split = filter_outliers(&collection)?;
            println!(
                "kept {} videos, discarded {}: {:?}",
                split.kept.len(),
                split.discarded.len(),
                split.discarded
            );
            if let Some(p) = &a.kept_dataset {
                write_dataset(p, &collection.retain_ids(&split.kept))?;
            }
            save_json(&a.out, &split)
        }
        Some(Command::Represent(a)) => {
            set(&mut config.frame_stride, a.frame_stride);
            if let Some(f) = a.format {
                config.sequence_format = match f {
                    FormatArg::Dense => SequenceFormat::Dense,
                    FormatArg::Packed => SequenceFormat::Packed,
                };
            }
            config.validate()?;
            let collection = load_dataset(&a.dataset, &config.load_options())?;
            let language: Vec<LanguageAtom> = load_json(&a.language)?;
            let visual: AtomSet = load_json(&a.visual)?;
            if visual.video_ids != collection.ids() {
                return Err(Error::InvalidArgument(
                    "visual atoms were extracted from a different collection".into(),
                ));
            }
            let vocab = vocabulary(&language, &visual);
            let seqs = represent_collection(
                &collection,
                &vocab,
                &visual.membership(),
                config.frame_stride,
            )?;
            write_sequences(&a.out, &seqs, config.sequence_format)?;
            save_json(a.out.with_file_name(files::VOCABULARY), &vocab)
        }
        Some(Command::Synth(a)) => {
            create_dir(&a.out_dir)?;
            match a.kind {
                SynthKind::Sequences => {
                    let mut hyper = config.hyperparams();
                    set(&mut hyper.gamma, a.gamma);
                    set(&mut hyper.beta, a.beta);
                    set(&mut hyper.alpha, a.alpha);
                    set(&mut hyper.kappa, a.kappa);
                    set(&mut hyper.a0, a.a0);
                    set(&mut hyper.b0, a.b0);
                    let synth = SyntheticConfig {
                        sequences: a.videos,
                        frames: a.frames,
                        dims: a.dims,
                        hyper,
                        features: match a.steps {
                            Some(steps) => FeatureSource::Fixed {
                                steps,
                                share: a.share,
                            },
                            None => FeatureSource::Ibp,
                        },
                    };
                    let mut rng = rng_from_seed(derive_seed(config.seed, "synth"));
                    let data = generate_synthetic(&synth, &mut rng)?;
                    write_sequences(
                        a.out_dir.join(files::SEQUENCES),
                        &data.sequences,
                        config.sequence_format,
                    )?;
                    save_json(a.out_dir.join("truth.json"), &data.truth)?;
                    let ids = data.sequences.ids();
                    let gt = GroundTruth::from_label_sequences(
                        ids.iter()
                            .map(String::as_str)
                            .zip(data.truth.states.iter().map(Vec::as_slice)),
                        |k| format!("step{k}"),
                    );
                    write_ground_truth(a.out_dir.join("gt.jsonl"), &gt)?;
                    println!("{} sequences, {} steps", a.videos, data.truth.num_steps());
                    Ok(())
                }
                SynthKind::Videos => {
                    let mut vc = VideoSynthConfig {
                        videos: a.videos,
                        frames: a.frames,
                        share: a.share,
                        ..VideoSynthConfig::default()
                    };
                    set(&mut vc.steps, a.steps);
                    set(&mut vc.kappa, a.kappa);
                    let data = synthetic_videos(&vc, derive_seed(config.seed, "synth"))?;
                    write_dataset(a.out_dir.join("dataset.jsonl"), &data.collection)?;
                    write_ground_truth(a.out_dir.join("gt.jsonl"), &data.ground_truth)
                }
            }
        }
        Some(Command::Parse(a)) => {
            set(&mut config.sweeps, a.sweeps);
            set(&mut config.chains, a.chains);
            set(&mut config.checkpoint_every, a.checkpoint_every);
            if let Some(r) = a.report {
                config.report = match r {
                    ReportArg::MaxLikelihood => ReportedSample::MaxLikelihood,
                    ReportArg::Last => ReportedSample::Last,
                };
            }
            if let Some(b) = a.birth {
                config.birth_proposal = match b {
                    BirthArg::Prior => BirthKind::Prior,
                    BirthArg::DataDriven => BirthKind::DataDriven,
                };
            }
            apply_hyper(&mut config, &a.hyper);
            config.validate()?;
            let data = read_sequences(&a.sequences)?;
            create_dir(&a.out_dir)?;
            let sampler = config.sampler_config();
            let tag = serde_json::to_string(&(&sampler, config.seed, config.chains))
                .expect("serializable");
            let results = parse_sequences(
                &data,
                &sampler,
                derive_seed(config.seed, "parse"),
                config.chains,
                config.checkpoint_every,
                Some(&a.out_dir),
                &tag,
            )?;
            save_results(a.out_dir.join(files::RESULTS), &results)?;
            write_text(
                &a.out_dir.join(files::TRACE),
                &results.diagnostics.trace_csv(),
            )?;
            write_segmentation(
                &a.out_dir.join(files::SEGMENTATION),
                &results.sequence_ids,
                &results.reported.states,
            )?;
            save_json(
                a.out_dir.join(files::POSTERIORS),
                &posteriors_by_id(&results, &data),
            )?;
            for c in 0..config.chains {
                let _ = fs::remove_file(a.out_dir.join(files::checkpoint(c)));
            }
            println!(
                "{} steps at sweep {} (shared acceptance {:.3}, birth {:.3}, death {:.3})",
                results.reported.num_steps(),
                results.reported_sweep,
                results.diagnostics.shared.rate(),
                results.diagnostics.birth.rate(),
                results.diagnostics.death.rate()
            );
            Ok(())
        }
        Some(Command::Caption(a)) => {
            config.validate()?;
            let collection = load_dataset(&a.dataset, &config.load_options())?;
            let results = load_results(&a.results)?;
            let vocab: AtomVocabulary = load_json(&a.vocabulary)?;
            let captions = caption_steps(
                &collection,
                &results,
                &vocab,
                &config.caption_config(),
                derive_seed(config.seed, "caption"),
            )?;
            for c in &captions {
                println!("{}\t{}", c.step, c.caption);
            }
            save_json(&a.out, &captions)
        }
        Some(Command::Eval(a)) => {
            if let Some(m) = a.iou_mode {
                config.iou_mode = match m {
                    IouArg::Segment => IouMode::Segment,
                    IouArg::FrameSet => IouMode::FrameSet,
                };
            }
            let predicted = read_segmentation(&a.segmentation)?;
            let posteriors: BTreeMap<String, Vec<Vec<f64>>> = load_json(&a.posteriors)?;
            let gt = load_ground_truth(&a.gt)?;
            let category = a
                .category
                .or_else(|| config.category.clone())
                .unwrap_or_else(|| "collection".to_string());
            let report = MetricsReport::new(vec![evaluate_category(
                &category,
                &predicted,
                &posteriors,
                &gt,
                config.iou_mode,
            )?]);
            print!("{}", report.to_table());
            match &a.out {
                Some(p) => save_json(p, &report),
                None => Ok(()),
            }
        }
        Some(Command::Pipeline(a)) => {
            set(&mut config.sweeps, a.sweeps);
            set(&mut config.chains, a.chains);
            config.validate()?;
            let inputs = PipelineInputs {
                dataset: a.dataset,
                ground_truth: a.gt,
                out_dir: a.out_dir,
                until: a.until.map(|s| match s {
                    StageArg::Atoms => Stage::Atoms,
                    StageArg::Cluster => Stage::Cluster,
                    StageArg::Represent => Stage::Represent,
                    StageArg::Parse => Stage::Parse,
                    StageArg::Caption => Stage::Caption,
                    StageArg::Eval => Stage::Eval,
                }),
                require_eval: a.eval,
            };
            let outcome = run_pipeline(&config, &inputs)?;
            let names = |v: &[Stage]| v.iter().map(|s| s.name()).collect::<Vec<_>>().join(", ");
            info!(
                "executed [{}], reused [{}]",
                names(&outcome.executed),
                names(&outcome.skipped)
            );
            if let Some(report) = outcome.report {
                print!("{}", report.to_table());
            }
            Ok(())
        }
        None => Err(Error::InvalidArgument(
            "no subcommand given (see --help)".into(),
        )),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    if cli.print_config {
        let config = match &cli.config {
            Some(p) => PipelineConfig::load(p),
            None => Ok(PipelineConfig::default()),
        };
        return match config {
            Ok(mut c) => {
                set(&mut c.seed, cli.seed);
                print!("{}", c.to_toml());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
