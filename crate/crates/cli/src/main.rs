use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use prosodiv::datamodel::{
    attach_ratings, enumerate_pairs, load_manifest, read_ratings, read_scores, write_errors, write_scores, EvalGroup,
    Metric, PairKey, PairScoreRecord,
};
use prosodiv::dswed::EditWeights;
use prosodiv::pipeline::{self, ScoreConfig};
use prosodiv::report::build_report;
use prosodiv::stats::DurationBasis;
use prosodiv::tokenizer::{tokenize_groups, train_from_dir, KMeansConfig, KMeansModel, SweepSpec, TrainOptions};

const EXIT_VALIDATION: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

const PROTOCOL_K: usize = 50;
const PROTOCOL_LAYER: u32 = 8;
const PROTOCOL_GROUP_SIZE: usize = 5;

#[derive(Parser)]
#[command(name = "prosodiv", version, about = "Prosody diversity metrics for TTS evaluation")]
struct Cli {
    /// Pin every default to the reference protocol (k=50, layer 8,
    /// w_sub=1.2, w_ins=w_del=1, FastDTW radius 1, 5-sample groups) and reject
    /// overrides that deviate from it.
    #[arg(long, global = true)]
    paper_protocol: bool,

    /// Worker threads for pair-level parallelism (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,

    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify extractor output: SSLE files parse and frame counts match VAD-trimmed durations.
    ExtractCheck {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        emb_dir: PathBuf,
        /// Allowed frame-count deviation.
        #[arg(long, default_value_t = 2.0)]
        tolerance: f64,
    },
    /// Train a k-means quantizer on every .ssle file under a directory.
    TrainKmeans {
        #[arg(long)]
        emb_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of clusters [default: 50].
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Keep every n-th frame for training.
        #[arg(long, default_value_t = 1)]
        frame_stride: usize,
        /// Z-score each utterance before training and assignment.
        #[arg(long)]
        normalize: bool,
        /// Free-text name of the training corpus, stored in the model.
        #[arg(long, default_value = "")]
        corpus: String,
    },
    /// Assign every manifest sample's embeddings to tokens.
    Tokenize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        emb_dir: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score every within-group pair (scores.csv plus errors.csv sidecar).
    Score(ScoreArgs),
    /// Per-group Pearson correlation with Fisher-z aggregation.
    Correlate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        /// Manifest used to validate rated pairs (default: pairs in scores).
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "dswed")]
        metric: Metric,
        #[arg(long, default_value = "pmos")]
        against: Metric,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Write the full result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Micro-average and Borda aggregation per system.
    Benchmark {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Markdown table output.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Tokenize and correlate DS-WED with ratings over a model x layer x k grid.
    Ablate(AblateArgs),
    /// Real-time factor of one metric at batch size 1, single-threaded.
    Rtf {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        metric: Metric,
        #[arg(long)]
        tokens_dir: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Basis::Sum)]
        basis: Basis,
        #[command(flatten)]
        weights: WeightArgs,
        #[arg(long)]
        radius: Option<usize>,
    },
    /// Benchmark table and, with ratings, the metric correlation matrix.
    Report {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        ratings: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Markdown output (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Copy)]
struct WeightArgs {
    /// Substitution weight [default: 1.2].
    #[arg(long)]
    w_sub: Option<f64>,
    /// Insertion weight [default: 1.0].
    #[arg(long)]
    w_ins: Option<f64>,
    /// Deletion weight [default: 1.0].
    #[arg(long)]
    w_del: Option<f64>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Errors sidecar [default: errors.csv next to --out].
    #[arg(long)]
    errors: Option<PathBuf>,
    /// Comma-separated subset of dswed, logf0_rmse, mcd, or `all`.
    #[arg(long, default_value = "all")]
    metrics: String,
    #[arg(long)]
    tokens_dir: Option<PathBuf>,
    /// Directory of `<group>/<sample>.vad.json` overriding the built-in VAD.
    #[arg(long)]
    vad_timestamps: Option<PathBuf>,
    #[command(flatten)]
    weights: WeightArgs,
    /// FastDTW radius [default: 1].
    #[arg(long)]
    radius: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    ratings: PathBuf,
    /// Holds one `<model>_<layer>` embedding directory per cell.
    #[arg(long)]
    emb_root: PathBuf,
    /// Holds `<model>_<layer>_<k>.kmns` quantizers.
    #[arg(long)]
    model_root: PathBuf,
    /// Token output root, one directory per cell.
    #[arg(long)]
    tokens_root: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    models: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    layers: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    ks: Vec<usize>,
    /// Train missing quantizers instead of skipping their cells.
    #[arg(long)]
    train: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Basis {
    /// Divide total time by the sum of per-pair mean durations.
    Sum,
    /// Divide mean time per pair by the mean pair duration.
    PerPair,
}

/// Outcome of a subcommand that ran to completion.
enum Status {
    Ok,
    Partial,
}

struct Protocol {
    on: bool,
}

impl Protocol {
    fn pin<T: PartialEq + std::fmt::Debug + Copy>(&self, name: &str, given: Option<T>, paper: T) -> anyhow::Result<T> {
        match given {
            Some(v) if self.on && v != paper => {
                Err(prosodiv::Error::Validation(format!("--paper-protocol fixes {name} = {paper:?}, got {v:?}")).into())
            }
            Some(v) => Ok(v),
            None => Ok(paper),
        }
    }

    fn weights(&self, w: WeightArgs) -> anyhow::Result<EditWeights> {
        let d = EditWeights::default();
        let weights = EditWeights::new(
            self.pin("w_sub", w.w_sub, d.sub)?,
            self.pin("w_ins", w.w_ins, d.ins)?,
            self.pin("w_del", w.w_del, d.del)?,
        )?;
        let warn = weights.warnings();
        if warn.triangle {
            log::warn!("w_sub > w_ins + w_del: substitutions are never used and the triangle inequality may fail");
        }
        if warn.asymmetric {
            log::warn!("w_ins != w_del: DS-WED is no longer symmetric");
        }
        Ok(weights)
    }

    fn check_groups(&self, groups: &[EvalGroup]) -> anyhow::Result<()> {
        if !self.on {
            return Ok(());
        }
        for g in groups {
            if g.samples.len() != PROTOCOL_GROUP_SIZE {
                return Err(prosodiv::Error::Validation(format!(
                    "--paper-protocol expects {PROTOCOL_GROUP_SIZE} samples (10 pairs) per group; `{}` has {}",
                    g.group_id,
                    g.samples.len()
                ))
                .into());
            }
        }
        Ok(())
    }
}

fn parse_metrics(spec: &str) -> anyhow::Result<Vec<Metric>> {
    if spec.trim() == "all" {
        return Ok(Metric::OBJECTIVE.to_vec());
    }
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let m: Metric = name.parse()?;
        if m == Metric::Pmos {
            return Err(prosodiv::Error::Validation("pmos is a rating, not a computed metric".into()).into());
        }
        if !out.contains(&m) {
            out.push(m);
        }
    }
    if out.is_empty() {
        return Err(prosodiv::Error::Validation("no metric selected".into()).into());
    }
    Ok(out)
}

fn require_exists(path: &Path, what: &str) -> anyhow::Result<()> {
    if !path.exists() {
        return Err(prosodiv::Error::MissingInput(format!("{what} {} does not exist", path.display())).into());
    }
    Ok(())
}

fn manifest(path: &Path, protocol: &Protocol) -> anyhow::Result<Vec<EvalGroup>> {
    require_exists(path, "manifest")?;
    let groups = load_manifest(path)?;
    protocol.check_groups(&groups)?;
    Ok(groups)
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_scores_with_ratings(
    scores: &Path,
    ratings: Option<&Path>,
    groups: Option<&[EvalGroup]>,
) -> anyhow::Result<Vec<PairScoreRecord>> {
    require_exists(scores, "scores file")?;
    let mut records = read_scores(scores)?;
    if let Some(ratings) = ratings {
        require_exists(ratings, "ratings file")?;
        let known: HashSet<PairKey> = match groups {
            Some(g) => g.iter().flat_map(enumerate_pairs).collect(),
            None => records.iter().map(|r| r.key.clone()).collect(),
        };
        let table = read_ratings(ratings, &known)?;
        attach_ratings(&mut records, &table);
        // rated pairs without any objective score still count for the matrix
        let have: HashSet<PairKey> = records.iter().map(|r| r.key.clone()).collect();
        for (k, v) in table {
            if !have.contains(&k) {
                let mut rec = PairScoreRecord::new(k);
                rec.pmos = Some(v);
                records.push(rec);
            }
        }
    }
    Ok(records)
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    let protocol = Protocol { on: cli.paper_protocol };
    let workers = cli.workers;
    match cli.command {
        Command::ExtractCheck {
            manifest: m,
            emb_dir,
            tolerance,
        } => {
            let groups = manifest(&m, &protocol)?;
            require_exists(&emb_dir, "embeddings directory")?;
            let check = pipeline::extract_check(&groups, &emb_dir, tolerance);
            for r in &check.rows {
                match &r.problem {
                    Some(p) => println!("FAIL {}/{}: {p}", r.group_id, r.sample_id),
                    None => log::info!("ok {}/{}: {} frames", r.group_id, r.sample_id, r.frames.unwrap_or(0)),
                }
            }
            println!("{} samples checked, {} problems", check.rows.len(), check.problems());
            if check.problems() > 0 {
                return Err(prosodiv::Error::Validation(format!("{} samples failed the check", check.problems())).into());
            }
            Ok(Status::Ok)
        }
        Command::TrainKmeans {
            emb_dir,
            out,
            k,
            seed,
            max_iters,
            tol,
            frame_stride,
            normalize,
            corpus,
        } => {
            require_exists(&emb_dir, "embeddings directory")?;
            let opts = TrainOptions {
                kmeans: KMeansConfig {
                    k: protocol.pin("k", k, PROTOCOL_K)?,
                    seed,
                    max_iters,
                    rel_tol: tol,
                },
                frame_stride,
                normalize,
                training_corpus: corpus,
            };
            let model = train_from_dir(&emb_dir, &opts)?;
            for (i, inertia) in model.metadata.inertia_history.iter().enumerate() {
                log::info!("iteration {i}: inertia {inertia}");
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            model.write(&out)?;
            println!(
                "trained k={} dim={} in {} iterations, inertia {:.6}",
                model.k(),
                model.dim(),
                model.metadata.iterations_run,
                model.metadata.inertia
            );
            Ok(Status::Ok)
        }
        Command::Tokenize {
            manifest: m,
            emb_dir,
            model,
            out,
        } => {
            let groups = manifest(&m, &protocol)?;
            require_exists(&emb_dir, "embeddings directory")?;
            require_exists(&model, "quantizer")?;
            let model = KMeansModel::read(&model)?;
            let report = prosodiv::par::with_workers(workers, || tokenize_groups(&groups, &emb_dir, &model, &out));
            for (g, s, reason) in &report.failures {
                eprintln!("{g}/{s}: {reason}");
            }
            println!("{} token files written, {} failures", report.written, report.failures.len());
            Ok(if report.failures.is_empty() { Status::Ok } else { Status::Partial })
        }
        Command::Score(args) => {
            let groups = manifest(&args.manifest, &protocol)?;
            let metrics = parse_metrics(&args.metrics)?;
            if let Some(d) = &args.tokens_dir {
                require_exists(d, "tokens directory")?;
            }
            if let Some(d) = &args.vad_timestamps {
                require_exists(d, "VAD timestamp directory")?;
            }
            let mut cfg = ScoreConfig {
                metrics,
                tokens_dir: args.tokens_dir.clone(),
                weights: protocol.weights(args.weights)?,
                vad_dir: args.vad_timestamps.clone(),
                workers,
                ..Default::default()
            };
            cfg.acoustic.radius = protocol.pin("radius", args.radius, 1)?;
            let outcome = pipeline::score_groups(&groups, &cfg)?;
            if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            write_scores(&args.out, &outcome.rows())?;
            let errors_path = args
                .errors
                .clone()
                .unwrap_or_else(|| args.out.with_file_name("errors.csv"));
            write_errors(&errors_path, &outcome.errors)?;
            println!(
                "{} score rows, {} failures{}",
                outcome.rows().len(),
                outcome.errors.len(),
                if outcome.is_partial() {
                    format!(" (see {})", errors_path.display())
                } else {
                    String::new()
                }
            );
            Ok(if outcome.is_partial() { Status::Partial } else { Status::Ok })
        }
        Command::Correlate {
            scores,
            ratings,
            manifest: m,
            metric,
            against,
            alpha,
            out,
        } => {
            let groups = m.as_deref().map(|p| manifest(p, &protocol)).transpose()?;
            if against == Metric::Pmos && ratings.is_none() {
                bail!(prosodiv::Error::Validation("correlating against pmos needs --ratings".into()));
            }
            let records = load_scores_with_ratings(&scores, ratings.as_deref(), groups.as_deref())?;
            let result = pipeline::correlate(&records, metric, against, alpha)?;
            for g in &result.excluded {
                eprintln!("excluded {}: {}", g.group_id, g.reason);
            }
            let a = &result.aggregate;
            println!(
                "{} vs {}: r = {:.4} [{:.4}, {:.4}], t = {:.3}, p = {:.3e}, groups = {}",
                metric, against, a.r_bar, a.ci_low, a.ci_high, a.t_stat, a.p_value, a.n_groups
            );
            if let Some(out) = out {
                write_text(&out, &serde_json::to_string_pretty(&result)?)?;
            }
            Ok(Status::Ok)
        }
        Command::Benchmark {
            scores,
            manifest: m,
            report,
            json,
        } => {
            let groups = manifest(&m, &protocol)?;
            let records = load_scores_with_ratings(&scores, None, None)?;
            let r = build_report(&groups, &records, 0.05)?;
            let md = prosodiv::report::Report {
                correlations: Vec::new(),
                ..r
            };
            match report {
                Some(p) => write_text(&p, &md.to_markdown())?,
                None => print!("{}", md.to_markdown()),
            }
            if let Some(p) = json {
                write_text(&p, &serde_json::to_string_pretty(&md.benchmark)?)?;
            }
            Ok(Status::Ok)
        }
        Command::Ablate(args) => {
            let groups = manifest(&args.manifest, &protocol)?;
            require_exists(&args.ratings, "ratings file")?;
            let known: HashSet<PairKey> = groups.iter().flat_map(enumerate_pairs).collect();
            let ratings = read_ratings(&args.ratings, &known)?;
            let layers = if args.layers.is_empty() { vec![PROTOCOL_LAYER] } else { args.layers.clone() };
            let ks = if args.ks.is_empty() { vec![PROTOCOL_K] } else { args.ks.clone() };
            if protocol.on && (layers != [PROTOCOL_LAYER] || ks != [PROTOCOL_K]) {
                bail!(prosodiv::Error::Validation(format!(
                    "--paper-protocol fixes layer {PROTOCOL_LAYER} and k {PROTOCOL_K}"
                )));
            }
            let spec = SweepSpec {
                embedding_root: args.emb_root.clone(),
                model_root: args.model_root.clone(),
                out_root: args.tokens_root.clone(),
                models: args.models.clone(),
                layers,
                ks,
                train: args.train.then(|| TrainOptions {
                    kmeans: KMeansConfig {
                        seed: args.seed,
                        ..Default::default()
                    },
                    ..Default::default()
                }),
            };
            let weights = protocol.weights(args.weights)?;
            let outcome = prosodiv::par::with_workers(workers, || {
                pipeline::ablate(&groups, &spec, &ratings, weights, args.alpha)
            });
            pipeline::write_ablation(&args.out, &outcome.rows)?;
            for (cell, reason) in &outcome.skipped {
                eprintln!("skipped {cell}: {reason}");
            }
            println!("{} cells scored, {} skipped", outcome.rows.len(), outcome.skipped.len());
            if outcome.rows.is_empty() {
                bail!(prosodiv::Error::InsufficientData("no grid cell could be scored".into()));
            }
            Ok(if outcome.skipped.is_empty() { Status::Ok } else { Status::Partial })
        }
        Command::Rtf {
            manifest: m,
            metric,
            tokens_dir,
            basis,
            weights,
            radius,
        } => {
            let groups = manifest(&m, &protocol)?;
            let mut cfg = ScoreConfig {
                tokens_dir,
                weights: protocol.weights(weights)?,
                ..Default::default()
            };
            cfg.acoustic.radius = protocol.pin("radius", radius, 1)?;
            let basis = match basis {
                Basis::Sum => DurationBasis::SumOfPairMeans,
                Basis::PerPair => DurationBasis::PerPairMean,
            };
            let report = pipeline::rtf_for_metric(&groups, metric, &cfg, basis)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(Status::Ok)
        }
        Command::Report {
            scores,
            manifest: m,
            ratings,
            alpha,
            out,
            json,
        } => {
            let groups = manifest(&m, &protocol)?;
            let records = load_scores_with_ratings(&scores, ratings.as_deref(), Some(&groups))?;
            let report = build_report(&groups, &records, alpha)?;
            match out {
                Some(p) => write_text(&p, &report.to_markdown())?,
                None => print!("{}", report.to_markdown()),
            }
            if let Some(p) = json {
                write_text(&p, &report.to_json())?;
            }
            Ok(Status::Ok)
        }
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
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Partial) => ExitCode::from(EXIT_PARTIAL),
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .filter_map(|c| c.downcast_ref::<prosodiv::Error>())
                .any(prosodiv::Error::is_validation);
            ExitCode::from(if validation { EXIT_VALIDATION } else { 1 })
        }
    }
}
