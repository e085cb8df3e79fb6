use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use webrpg_cli::dataset::{build_dataset, ingest_samples, load_samples, BuildOptions, Split};
use webrpg_cli::pipeline::{
    self, evaluate, load_eval_dir, load_fid_models, load_generator, paper_scale_train, GeneratorInit, Metric,
    ModelConfig, ModelKind, SemanticSource,
};
use webrpg_cli::synth::SynthSpec;
use webrpg_core::html::{Page, TagAllowList};
use webrpg_core::rp::Vocabulary;
use webrpg_core::vc::vc_total;
use webrpg_models::embedding::SemanticEncoder;
use webrpg_eval::classifier::{FidClassifierConfig, FidVariant};
use webrpg_models::train::TrainConfig;
use webrpg_nn::OptimizerConfig;

/// Cache directory for default checkpoint locations.
const CACHE_ENV: &str = "WEBRPG_CACHE";

#[derive(Parser)]
#[command(name = "webrpg", version, about = "Rendering-parameter generation for web pages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Build a dataset from HTML files with RP-JSON siblings.
    Ingest(IngestArgs),
    /// Print the visual complexity of pages as JSON lines.
    Vc(VcArgs),
    TrainVae(TrainArgs),
    TrainAr(GenTrainArgs),
    TrainDm(GenTrainArgs),
    /// Train the real-vs-polluted classifiers used for FID.
    TrainFid(FidArgs),
    /// Generate RPs for one HTML file or for a dataset split.
    Generate(GenerateArgs),
    /// Convert RP-JSON to CSS.
    RenderCss(RenderArgs),
    /// Score generated RPs against real ones.
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, default_value_t = 0.1)]
    vc_threshold: f64,
    /// Train fraction.
    #[arg(long, default_value_t = 0.8)]
    split: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// JSON synthesis spec; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    min_elements: Option<usize>,
    #[arg(long)]
    max_elements: Option<usize>,
    #[arg(long)]
    style_groups: Option<usize>,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    min_elements: usize,
    #[arg(long, default_value_t = 128)]
    max_elements: usize,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args, Debug)]
struct VcArgs {
    /// A dataset directory or a Page JSON file with RPs.
    #[arg(long)]
    input: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path; defaults to `$WEBRPG_CACHE/<model>.ckpt`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with optional `model` and `train` sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the published model sizes and schedule.
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    enc_layers: Option<usize>,
    #[arg(long)]
    dec_layers: Option<usize>,
    #[arg(long)]
    dm_layers: Option<usize>,
    #[arg(long)]
    dm_steps: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    log_every: Option<usize>,
    /// Precomputed semantic vectors (JSONL) instead of the hashed encoder.
    #[arg(long)]
    semantic_jsonl: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct GenTrainArgs {
    #[command(flatten)]
    train: TrainArgs,
    /// Initialize the generator's VAE from this checkpoint.
    #[arg(long)]
    vae: Option<PathBuf>,
    #[arg(long)]
    freeze_vae: bool,
}

#[derive(Args, Debug)]
struct FidArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vae: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "overall,layout,style")]
    variants: Vec<String>,
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 2000)]
    steps: usize,
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Ar,
    Dm,
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Defaults to `$WEBRPG_CACHE/<model>.ckpt`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "data")]
    html: Option<PathBuf>,
    /// RP-JSON output for `--html`.
    #[arg(long, requires = "html")]
    out: Option<PathBuf>,
    #[arg(long, requires = "html")]
    css: Option<PathBuf>,
    /// Generate every page of a dataset split into `--out-dir`.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    #[arg(long, requires = "data")]
    out_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    rps: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    real: PathBuf,
    #[arg(long)]
    gen: PathBuf,
    #[arg(long, default_value = "iou,sc")]
    metrics: String,
    /// Directory written by `train-fid`.
    #[arg(long)]
    fid_dir: Option<PathBuf>,
    /// Which split of a dataset directory to read.
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
    /// Also write the report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cache_dir() -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".webrpg"))
}

fn default_ckpt(name: &str) -> PathBuf {
    cache_dir().join(format!("{name}.ckpt"))
}

#[derive(serde::Deserialize, Default)]
struct RunConfigFile {
    model: Option<ModelConfig>,
    train: Option<TrainConfig>,
}

fn resolve(args: &TrainArgs) -> Result<(ModelConfig, TrainConfig)> {
    let file: RunConfigFile = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => RunConfigFile::default(),
    };
    let seed = args.seed.unwrap_or(0);
    let mut model = match (file.model, args.paper_scale) {
        (Some(m), _) => m,
        (None, true) => ModelConfig::paper_scale(),
        (None, false) => ModelConfig::desk(args.d.unwrap_or(64)),
    };
    let mut train = match (file.train, args.paper_scale) {
        (Some(t), _) => t,
        (None, true) => paper_scale_train(seed),
        (None, false) => TrainConfig {
            steps: 2000,
            batch: 8,
            seed,
            optimizer: OptimizerConfig {
                learning_rate: 1e-3,
                ..OptimizerConfig::default()
            },
            log_every: 100,
        },
    };
    if let Some(d) = args.d {
        model.embed.d = d;
        model.vae.latent = d;
        model.ar.d = d;
        model.dm.d = d;
    }
    if let Some(n) = args.enc_layers {
        model.ar.enc_layers = n;
    }
    if let Some(n) = args.dec_layers {
        model.ar.dec_layers = n;
    }
    if let Some(n) = args.dm_layers {
        model.dm.layers = n;
    }
    if let Some(n) = args.dm_steps {
        model.dm.steps = n;
    }
    if let Some(p) = &args.semantic_jsonl {
        let dim = webrpg_models::embedding::PrecomputedEncoder::from_jsonl(p)?.dim();
        model.semantic = SemanticSource::Precomputed { path: p.clone(), dim };
        model.embed.d_sem = dim;
    }
    if let Some(s) = args.steps {
        train.steps = s;
    }
    if let Some(b) = args.batch {
        train.batch = b;
    }
    if let Some(lr) = args.lr {
        train.optimizer.learning_rate = lr;
    }
    if let Some(s) = args.seed {
        train.seed = s;
    }
    if let Some(n) = args.log_every {
        train.log_every = n;
    }
    model.validate()?;
    Ok((model, train))
}

fn log_config(label: &str, value: &impl serde::Serialize) -> Result<()> {
    info!("{label}: {}", serde_json::to_string(value)?);
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn split_options(a: &SplitArgs) -> BuildOptions {
    BuildOptions {
        vc_threshold: a.vc_threshold,
        split: a.split,
        seed: a.seed,
    }
}

fn run(cli: Cli) -> Result<()> {
    let vocab = Vocabulary::default();
    match cli.command {
        Command::Synth(a) => {
            let mut spec: SynthSpec = match &a.spec {
                Some(p) => serde_json::from_str(&fs::read_to_string(p)?)?,
                None => SynthSpec::default(),
            };
            if let Some(n) = a.min_elements {
                spec.min_elements = n;
            }
            if let Some(n) = a.max_elements {
                spec.max_elements = n;
            }
            if let Some(n) = a.style_groups {
                spec.style_groups = n;
            }
            let opts = split_options(&a.split);
            log_config("synth spec", &spec)?;
            log_config("dataset options", &opts)?;
            info!("seed {}", opts.seed);
            let samples = webrpg_cli::dataset::synth_samples(&spec, a.count, opts.seed, &vocab)?;
            build_dataset(samples, "synth", &opts, &vocab, &a.out)?;
        }
        Command::Ingest(a) => {
            let opts = split_options(&a.split);
            log_config("dataset options", &opts)?;
            info!("seed {}", opts.seed);
            let samples = ingest_samples(&a.input, a.min_elements, a.max_elements, &TagAllowList::default(), &vocab)?;
            build_dataset(samples, "ingest", &opts, &vocab, &a.out)?;
        }
        Command::Vc(a) => {
            let pages: Vec<(String, Page)> = if a.input.is_dir() {
                load_samples(&a.input, None, &vocab)?.into_iter().map(|s| (s.id, s.page)).collect()
            } else {
                let text = fs::read_to_string(&a.input)?;
                let id = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                vec![(id, Page::from_json(&text, &vocab)?)]
            };
            let mut out = std::io::stdout().lock();
            for (id, page) in pages {
                let report = vc_total(&page)?;
                // stop quietly when the reader goes away
                if writeln!(out, "{}", serde_json::json!({ "id": id, "vc": report })).is_err() {
                    break;
                }
            }
        }
        Command::TrainVae(a) => {
            let (model, train) = resolve(&a)?;
            log_config("model", &model)?;
            log_config("train", &train)?;
            info!("seed {}", train.seed);
            let out = a.out.clone().unwrap_or_else(|| default_ckpt("vae"));
            let summary = pipeline::train_vae(&a.data, &out, &model, &train)?;
            info!("wrote {}", summary.checkpoint.display());
        }
        Command::TrainAr(a) => train_generator(ModelKind::Ar, a)?,
        Command::TrainDm(a) => train_generator(ModelKind::Dm, a)?,
        Command::TrainFid(a) => {
            let variants = a
                .variants
                .iter()
                .map(|v| match v.as_str() {
                    "overall" => Ok(FidVariant::Overall),
                    "layout" => Ok(FidVariant::Layout),
                    "style" => Ok(FidVariant::Style),
                    other => bail!("unknown FID variant {other:?}"),
                })
                .collect::<Result<Vec<_>>>()?;
            let base = FidClassifierConfig {
                d: a.d,
                ..FidClassifierConfig::default()
            };
            let train = TrainConfig {
                steps: a.steps,
                batch: a.batch,
                seed: a.seed,
                optimizer: OptimizerConfig {
                    learning_rate: a.lr,
                    ..OptimizerConfig::default()
                },
                log_every: 100,
            };
            log_config("fid classifier", &base)?;
            log_config("train", &train)?;
            info!("seed {}", train.seed);
            for (variant, acc) in pipeline::train_fid(&a.data, &a.vae, &a.out, &variants, &base, &train)? {
                println!("{}", serde_json::json!({ "variant": variant.as_str(), "holdout_accuracy": acc }));
            }
        }
        Command::Generate(a) => {
            let name = match a.model {
                ModelArg::Ar => "ar",
                ModelArg::Dm => "dm",
            };
            let ckpt = a.checkpoint.clone().unwrap_or_else(|| default_ckpt(name));
            let loaded = load_generator(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            if loaded.meta.kind.as_str() != name {
                bail!("{} holds a {} model, not {name}", ckpt.display(), loaded.meta.kind.as_str());
            }
            let vocab = loaded.vocab();
            info!("generate model {name} checkpoint {} seed {}", ckpt.display(), a.seed);
            if let Some(html) = &a.html {
                let text = fs::read_to_string(html).with_context(|| format!("reading {}", html.display()))?;
                let page = Page::from_html(&text)?;
                let id = html.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let rps = loaded.generate(&id, &page, a.seed)?;
                let json = vocab.to_json(&rps)?;
                match &a.out {
                    Some(p) => write_file(p, &json)?,
                    None => println!("{json}"),
                }
                if let Some(css) = &a.css {
                    write_file(css, &vocab.emit_css(&rps)?)?;
                }
            } else if let Some(data) = &a.data {
                let out_dir = a.out_dir.clone().context("--data needs --out-dir")?;
                fs::create_dir_all(&out_dir)?;
                for s in load_samples(data, a.split.split(), &vocab)? {
                    let rps = loaded.generate(&s.id, &s.page, a.seed)?;
                    write_file(&out_dir.join(format!("{}.json", s.id)), &vocab.to_json(&rps)?)?;
                }
            } else {
                bail!("generate needs --html or --data");
            }
        }
        Command::RenderCss(a) => {
            let rps = vocab.from_json(&fs::read_to_string(&a.rps).with_context(|| format!("reading {}", a.rps.display()))?)?;
            write_file(&a.out, &vocab.emit_css(&rps)?)?;
        }
        Command::Eval(a) => {
            let metrics = Metric::parse_list(&a.metrics)?;
            let real = load_eval_dir(&a.real, a.split.split(), &vocab)?;
            let gen = load_eval_dir(&a.gen, a.split.split(), &vocab)?;
            let fid_models = a.fid_dir.as_deref().map(load_fid_models).transpose()?;
            let report = evaluate(&real, &gen, &metrics, fid_models.as_ref())?;
            let json = serde_json::to_string_pretty(&report)?;
            if let Some(p) = &a.out {
                write_file(p, &json)?;
            }
            println!("{json}");
        }
    }
    Ok(())
}

fn train_generator(kind: ModelKind, a: GenTrainArgs) -> Result<()> {
    let (model, train) = resolve(&a.train)?;
    log_config("model", &model)?;
    log_config("train", &train)?;
    info!("seed {}", train.seed);
    let out = a.train.out.clone().unwrap_or_else(|| default_ckpt(kind.as_str()));
    let init = GeneratorInit {
        vae: a.vae,
        freeze_vae: a.freeze_vae,
    };
    let summary = pipeline::train_generator(kind, &a.train.data, &out, &model, &train, &init)?;
    info!("wrote {}", summary.checkpoint.display());
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
