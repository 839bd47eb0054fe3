//! Command-line surface: synth / train / enhance / eval / gradcheck /
//! ablate. Every subcommand that takes a run configuration echoes the
//! effective values into its output directory; outputs written before a
//! failure are removed.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::enhance::{enhance_features, Combine};
use crate::error::{Error, Result};
use crate::eval::mean_ap;
use crate::graph::GraphVariant;
use crate::io;
use crate::pipeline::{
    ablation_settings, localize_videos, run_ablation_setting, split_corpus,
};
use crate::synth::{generate_corpus, VideoRecord};
use crate::train::train;

#[derive(Parser)]
#[command(
    name = "acgnet",
    about = "Graph-based segment feature enhancement for weakly-supervised temporal action localization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run configuration file (key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.synth.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus (features + annotations).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the enhancement network and head on a corpus.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Corpus directory written by synth.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fusion combination override.
        #[arg(long, value_parser = ["sum", "concat"])]
        fusion: Option<String>,
        /// Disable the easy-positive-mining loss.
        #[arg(long)]
        no_epm: bool,
    },
    /// Write enhanced features and sparse-adjacency dumps for a corpus.
    Enhance {
        /// Model parameters written by train.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate proposals against annotations (or generate proposals from a
    /// trained model first).
    Eval {
        /// Pre-computed proposals (JSON lines).
        #[arg(long, conflicts_with = "params")]
        proposals: Option<PathBuf>,
        /// Annotation file with ground-truth instances.
        #[arg(long, requires = "proposals")]
        annotations: Option<PathBuf>,
        /// Model parameters; with --data, proposals are generated here.
        #[arg(long, requires = "data")]
        params: Option<PathBuf>,
        /// Corpus directory to localize.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated IoU thresholds.
        #[arg(long)]
        iou: Option<String>,
    },
    /// Run the finite-difference gradient suites.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Instances per suite.
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Sweep graph variants, sparsity levels, and fusion modes on a corpus.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Runs the CLI on explicit arguments (the first is the program name) and
/// returns the process exit code.
pub fn cli_run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders both --help output and usage errors.
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let mut outputs = Outputs::default();
    match dispatch(cli.command, &mut outputs) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            outputs.remove_partial();
            1
        }
    }
}

/// Paths written by the current subcommand, removed if it fails.
#[derive(Default)]
struct Outputs {
    created: Vec<PathBuf>,
}

impl Outputs {
    fn track(&mut self, path: PathBuf) -> PathBuf {
        self.created.push(path.clone());
        path
    }

    fn remove_partial(&self) {
        for path in &self.created {
            if path.is_dir() {
                let _ = std::fs::remove_dir_all(path);
            } else {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

fn dispatch(command: Command, outputs: &mut Outputs) -> Result<()> {
    match command {
        Command::Synth { config, out } => cmd_synth(&config, &out, outputs),
        Command::Train {
            config,
            data,
            out,
            fusion,
            no_epm,
        } => cmd_train(&config, &data, &out, fusion.as_deref(), no_epm, outputs),
        Command::Enhance { params, data, out } => cmd_enhance(&params, &data, &out, outputs),
        Command::Eval {
            proposals,
            annotations,
            params,
            data,
            out,
            iou,
        } => cmd_eval(
            proposals.as_deref(),
            annotations.as_deref(),
            params.as_deref(),
            data.as_deref(),
            &out,
            iou.as_deref(),
            outputs,
        ),
        Command::Gradcheck { seed, instances } => cmd_gradcheck(seed, instances),
        Command::Ablate { config, data, out } => cmd_ablate(&config, &data, &out, outputs),
    }
}

fn cmd_synth(config: &ConfigArgs, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let cfg = config.load()?;
    let corpus = generate_corpus(&cfg.synth)?;
    std::fs::create_dir_all(out)?;
    outputs.track(out.join("features"));
    outputs.track(out.join("annotations.jsonl"));
    io::write_corpus(out, &corpus.videos)?;
    cfg.echo_into(out)?;
    let report = crate::synth::corrupt_report(&corpus);
    println!(
        "wrote {} videos ({} instances, corruption fraction {:.3}) to {}",
        corpus.videos.len(),
        report.total_instances,
        report.corruption_fraction,
        out.display()
    );
    Ok(())
}

fn num_classes_of(cfg: &RunConfig, videos: &[VideoRecord]) -> usize {
    let max_label = videos
        .iter()
        .flat_map(|v| v.labels.iter().copied())
        .max()
        .map_or(0, |m| m + 1);
    cfg.synth.num_classes.max(max_label)
}

fn cmd_train(
    config: &ConfigArgs,
    data: &Path,
    out: &Path,
    fusion: Option<&str>,
    no_epm: bool,
    outputs: &mut Outputs,
) -> Result<()> {
    let mut cfg = config.load()?;
    if let Some(combine) = fusion {
        cfg.fusion.combine = match combine {
            "concat" => Combine::Concat,
            _ => Combine::Sum,
        };
    }
    if no_epm {
        cfg.train.epm_weight = 0.0;
    }
    let videos = io::read_corpus(data)?;
    let num_classes = num_classes_of(&cfg, &videos);
    let t = videos.first().map_or(1, |v| v.features.num_segments());
    let hp = cfg.hyperparams_for(t);

    let outcome = train(
        &videos,
        &cfg.train,
        &hp,
        &cfg.fusion,
        GraphVariant::Combined,
        num_classes,
    )?;

    std::fs::create_dir_all(out)?;
    let model = io::ModelFile::new(
        &hp,
        &cfg.fusion,
        num_classes,
        &outcome.gcn,
        &outcome.head,
        cfg.act_threshold,
    );
    io::write_model(&outputs.track(out.join("params.json")), &model)?;
    io::write_loss_csv(&outputs.track(out.join("loss.csv")), &outcome.history)?;
    cfg.echo_into(out)?;
    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!(
            "trained {} epochs: total loss {:.6} -> {:.6}",
            outcome.history.len(),
            first.total,
            last.total
        );
    }
    Ok(())
}

fn cmd_enhance(params: &Path, data: &Path, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let model = io::read_model(params)?;
    let gcn = model.gcn_params()?;
    let videos = io::read_corpus(data)?;

    let enhanced_dir = out.join("enhanced");
    let adjacency_dir = out.join("adjacency");
    std::fs::create_dir_all(&enhanced_dir)?;
    std::fs::create_dir_all(&adjacency_dir)?;
    for video in &videos {
        let result = enhance_features(&video.features, &model.hyperparams, &gcn, &model.fusion)?;
        io::write_feature_file(
            &outputs.track(enhanced_dir.join(format!("{}.acgf", video.id))),
            &result.features,
        )?;
        io::write_sparse_adjacency(
            &outputs.track(adjacency_dir.join(format!("{}.adj.jsonl", video.id))),
            &result.sparse_adj,
        )?;
    }
    println!("enhanced {} videos into {}", videos.len(), out.display());
    Ok(())
}

fn parse_iou_list(spec: &str) -> Result<Vec<f64>> {
    spec.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad IoU threshold {p:?}")))
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    proposals: Option<&Path>,
    annotations: Option<&Path>,
    params: Option<&Path>,
    data: Option<&Path>,
    out: &Path,
    iou: Option<&str>,
    outputs: &mut Outputs,
) -> Result<()> {
    let thresholds = match iou {
        Some(spec) => parse_iou_list(spec)?,
        None => crate::pipeline::default_iou_thresholds(),
    };
    std::fs::create_dir_all(out)?;

    let (proposal_list, ground_truth) = match (proposals, params, data) {
        (Some(props), _, _) => {
            let annotations_path = annotations.ok_or_else(|| {
                Error::invalid("--proposals requires --annotations")
            })?;
            let gts: Vec<_> = io::read_annotations(annotations_path)?
                .iter()
                .flat_map(|a| a.ground_truth())
                .collect();
            (io::read_proposals(props)?, gts)
        }
        (None, Some(model_path), Some(data_dir)) => {
            let model = io::read_model(model_path)?;
            let gcn = model.gcn_params()?;
            let head = model.head_params()?;
            let videos = io::read_corpus(data_dir)?;
            let detections = localize_videos(
                &videos,
                &model.hyperparams,
                GraphVariant::Combined,
                &gcn,
                &head,
                &model.fusion,
                model.act_threshold,
            )?;
            io::write_proposals(&outputs.track(out.join("proposals.jsonl")), &detections)?;
            let gts: Vec<_> = videos
                .iter()
                .flat_map(|v| {
                    v.instances.iter().map(|i| crate::eval::GroundTruthInstance {
                        video_id: v.id.clone(),
                        class_id: i.class_id,
                        start_seg: i.start_seg,
                        end_seg: i.end_seg,
                    })
                })
                .collect();
            (detections, gts)
        }
        _ => {
            return Err(Error::invalid(
                "eval needs either --proposals with --annotations, or --params with --data",
            ))
        }
    };

    let report = mean_ap(&proposal_list, &ground_truth, &thresholds)?;
    io::write_map_csv(&outputs.track(out.join("maps.csv")), &report)?;
    for t in &report.thresholds {
        println!("mAP@{:.2} = {:.4}", t.iou, t.mean_ap);
    }
    println!("average mAP = {:.4}", report.average_map);
    Ok(())
}

fn cmd_gradcheck(seed: u64, instances: usize) -> Result<()> {
    let report = crate::gradcheck::run_all(seed, instances)?;
    for check in &report.checks {
        println!(
            "{}: max relative error {:.3e} over {} entries ({})",
            check.name,
            check.max_rel_err,
            check.checked_entries,
            if check.passed() { "pass" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("all gradient checks passed (max {:.3e})", report.max_rel_err());
        Ok(())
    } else {
        Err(Error::invalid(format!(
            "gradient check failed with max relative error {:.3e}",
            report.max_rel_err()
        )))
    }
}

fn variant_name(v: GraphVariant) -> &'static str {
    match v {
        GraphVariant::SimilarityOnly => "g1_similarity",
        GraphVariant::SimilarityMinusTemporal => "g2_sim_minus_temporal",
        GraphVariant::Combined => "g3_combined",
    }
}

fn cmd_ablate(config: &ConfigArgs, data: &Path, out: &Path, outputs: &mut Outputs) -> Result<()> {
    let cfg = config.load()?;
    let videos = io::read_corpus(data)?;
    if videos.is_empty() {
        return Err(Error::invalid("ablation corpus is empty"));
    }
    let num_classes = num_classes_of(&cfg, &videos);
    let t = videos[0].features.num_segments();
    let hp = cfg.hyperparams_for(t);
    let settings = ablation_settings(&hp, cfg.train.epm_weight, t);

    std::fs::create_dir_all(out)?;
    let csv_path = outputs.track(out.join("ablate.csv"));
    let mut lines = String::new();
    lines.push_str("# g2 = max(similarity - alpha*temporal, 0)/2 before sparsification\n");
    lines.push_str("# k = T rows run with lambda = 0 (dense graph, no sparsification)\n");
    lines.push_str("section,variant,lambda,k,features,combine,epm_weight,map_iou05\n");
    let total = settings.len();
    for (idx, setting) in settings.iter().enumerate() {
        let row = run_ablation_setting(
            &videos,
            setting,
            &cfg.train,
            &hp,
            num_classes,
            cfg.act_threshold,
        )?;
        let mut features = Vec::new();
        if setting.mode.include_original {
            features.push("original");
        }
        if setting.mode.include_avg {
            features.push("avg");
        }
        if setting.mode.include_gcn {
            features.push("gcn");
        }
        let line = format!(
            "{},{},{},{},{},{},{},{}\n",
            setting.section,
            variant_name(setting.variant),
            setting.lambda,
            setting.k,
            features.join("+"),
            match setting.mode.combine {
                Combine::Sum => "sum",
                Combine::Concat => "concat",
            },
            setting.epm_weight,
            row.map_at_05
        );
        lines.push_str(&line);
        println!("[{}/{}] {}", idx + 1, total, line.trim_end());
    }
    std::fs::write(&csv_path, lines)?;
    cfg.echo_into(out)?;

    // Split summary so the console shows what the sweep was computed on.
    let (train_videos, test_videos) = split_corpus(&videos);
    println!(
        "swept {total} settings (train {} / test {} videos) -> {}",
        train_videos.len(),
        test_videos.len(),
        csv_path.display()
    );
    Ok(())
}
