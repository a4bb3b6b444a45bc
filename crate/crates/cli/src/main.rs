//! `ktup`: preprocess corpora, train models, evaluate and query saved runs.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{ArgAction, Args, Parser, Subcommand};
use log::{info, warn};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use ktup_core::corpus::{sparsity_buckets, AlignmentMap, InteractionSet, Role, Triple, TripleSet};
use ktup_core::dataset::{Dataset, SplitSettings, ALIGNMENTS_FILE};
use ktup_core::eval::{
    eval_by_sparsity, eval_rec_per_user, kgc_ranks, rec_ranks, recommend, summarize_kgc, KgcMetrics, RankStats,
    RecMetrics,
};
use ktup_core::explain::explain_user;
use ktup_core::kgc::score_triple;
use ktup_core::optim::OptimizerKind;
use ktup_core::rec::{NoiseKind, Strategy};
use ktup_core::sampler::Corruption;
use ktup_core::trainer::{validation_metric, FitResult};
use ktup_core::{fit, EmbeddingSpace, Error, ErrorKind, ModelKind, Result, TrainConfig};

const RUN_FORMAT: &str = "ktup-run/1";
const MANIFEST_FILE: &str = "run-manifest.json";
const EMBEDDINGS_FILE: &str = "embeddings.bin";
const EPOCH_LOG_FILE: &str = "epochs.jsonl";

#[derive(Parser, Debug)]
#[command(name = "ktup", version, about = "Joint item recommendation and knowledge-graph completion")]
struct Cli {
    /// Worker threads for evaluation (default: all cores). Training itself is single-threaded.
    #[arg(long, global = true, env = "KTUP_THREADS")]
    threads: Option<usize>,

    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, index and split raw TSV files into a dataset directory.
    Preprocess(PreprocessArgs),
    /// Train a model on a preprocessed dataset.
    Train(TrainArgs),
    /// Evaluate a trained run on its test (or validation) split.
    Eval(EvalArgs),
    /// Top-N items for one user.
    Recommend(RecommendArgs),
    /// Rank candidate heads or tails for a partial fact.
    Complete(CompleteArgs),
    /// Recommendations with the preferences and graph paths behind them.
    Explain(ExplainArgs),
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// `user<TAB>item[<TAB>rating]` lines; ratings are ignored.
    #[arg(long, env = "KTUP_INTERACTIONS")]
    interactions: PathBuf,
    /// `head<TAB>tail<TAB>relation` lines.
    #[arg(long, env = "KTUP_TRIPLES")]
    triples: Option<PathBuf>,
    /// `item<TAB>entity` lines with raw ids.
    #[arg(long, env = "KTUP_ALIGNMENTS")]
    alignments: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10, env = "KTUP_MIN_USER_FREQ")]
    min_user_freq: usize,
    #[arg(long, default_value_t = 10, env = "KTUP_MIN_ITEM_FREQ")]
    min_item_freq: usize,
    /// Train:valid:test ratios.
    #[arg(long, default_value = "7:1:2", value_parser = parse_ratios, env = "KTUP_SPLIT")]
    split: (u32, u32, u32),
    #[arg(long, default_value_t = 42, env = "KTUP_SEED")]
    seed: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Preprocessed dataset directory.
    #[arg(long, env = "KTUP_DATA")]
    data: Option<PathBuf>,
    /// Output directory for embeddings, epoch log and manifest.
    #[arg(long)]
    out: PathBuf,
    /// bprmf, transe, transh, tup or ktup.
    #[arg(long, value_parser = parse_model, env = "KTUP_MODEL")]
    model: Option<ModelKind>,
    /// Raw-id `item<TAB>entity` file; required for ktup.
    #[arg(long, env = "KTUP_ALIGNMENTS")]
    alignments: Option<PathBuf>,
    /// Embedding file whose same-shaped tables seed the new model. Repeatable.
    #[arg(long)]
    init_from: Vec<PathBuf>,
    /// Replay a previous run. Flags given alongside override its values.
    #[arg(long)]
    from_manifest: Option<PathBuf>,
    #[arg(long, env = "KTUP_DIM")]
    dim: Option<usize>,
    /// Weight of the recommendation loss, in [0, 1].
    #[arg(long, env = "KTUP_LAMBDA")]
    lambda: Option<f64>,
    #[arg(long, env = "KTUP_BATCH_SIZE")]
    batch_size: Option<usize>,
    #[arg(long, env = "KTUP_LR")]
    lr: Option<f64>,
    #[arg(long, env = "KTUP_L2")]
    l2: Option<f64>,
    /// sgd, adagrad or adam.
    #[arg(long, value_parser = parse_enum::<OptimizerKind>, env = "KTUP_OPTIMIZER")]
    optimizer: Option<OptimizerKind>,
    #[arg(long, env = "KTUP_MAX_EPOCHS")]
    max_epochs: Option<usize>,
    /// Validation rounds without improvement before stopping.
    #[arg(long, env = "KTUP_PATIENCE")]
    patience: Option<usize>,
    #[arg(long, env = "KTUP_EVAL_EVERY")]
    eval_every: Option<usize>,
    #[arg(long, env = "KTUP_MARGIN")]
    margin: Option<f64>,
    /// Preference induction: soft or hard.
    #[arg(long, value_parser = parse_enum::<Strategy>, env = "KTUP_STRATEGY")]
    strategy: Option<Strategy>,
    /// Gumbel-softmax temperature for the hard strategy.
    #[arg(long, env = "KTUP_TAU")]
    tau: Option<f64>,
    /// Gumbel noise source: uniform, normal or off.
    #[arg(long, value_parser = parse_enum::<NoiseKind>, env = "KTUP_NOISE")]
    noise: Option<NoiseKind>,
    /// Number of preferences for tup (ktup uses one per relation).
    #[arg(long, env = "KTUP_NUM_PREFS")]
    num_prefs: Option<usize>,
    /// Corrupt heads or tails with relation-dependent probabilities.
    #[arg(long, env = "KTUP_BERN")]
    bern: bool,
    /// Skip norm and unit-length constraints after each step.
    #[arg(long, env = "KTUP_NO_CONSTRAINTS")]
    no_constraints: bool,
    #[arg(long, env = "KTUP_SEED")]
    seed: Option<u64>,
    /// Epoch log (JSON lines). Defaults to `<out>/epochs.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Directory written by `train`.
    #[arg(long, env = "KTUP_RUN")]
    run: PathBuf,
    /// Also write a manifest of this invocation.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    /// Emit JSON records instead of tables.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    run: RunArgs,
    /// test or valid.
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: Role,
    /// Ranking cutoff.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Also report recommendation metrics per user-sparsity bucket.
    #[arg(long)]
    buckets: Option<usize>,
    /// Category cutoff for 1-1 / 1-N / N-1 / N-N relations.
    #[arg(long, default_value_t = 1.5)]
    category_cutoff: f64,
    /// Per-query ranks as JSON lines.
    #[arg(long)]
    dump_ranks: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RecommendArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Raw user id.
    #[arg(long)]
    user: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
}

#[derive(Args, Debug)]
struct CompleteArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Known head; candidates are tails.
    #[arg(long, conflicts_with = "tail", required_unless_present = "tail")]
    head: Option<String>,
    /// Known tail; candidates are heads.
    #[arg(long)]
    tail: Option<String>,
    #[arg(long)]
    relation: String,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Drop candidates that already form a known fact.
    #[arg(long)]
    filter: bool,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Raw user id.
    #[arg(long)]
    user: String,
    /// Preferences listed per recommendation.
    #[arg(long, default_value_t = 3)]
    top_prefs: usize,
    /// Recommendations to explain.
    #[arg(long, default_value_t = 5)]
    n: usize,
    /// Supporting paths listed per recommendation.
    #[arg(long, default_value_t = 5)]
    max_support: usize,
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainManifest {
    format: String,
    command: String,
    data: PathBuf,
    alignments: Option<PathBuf>,
    init_from: Vec<PathBuf>,
    config: TrainConfig,
    threads: Option<usize>,
    embeddings: PathBuf,
    epoch_log: PathBuf,
    epochs_run: usize,
    best_epoch: usize,
    best_metric: f64,
    seconds: f64,
}

fn parse_enum<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_ascii_lowercase())).map_err(|_| format!("unknown value `{s}`"))
}

fn parse_model(s: &str) -> std::result::Result<ModelKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_split(s: &str) -> std::result::Result<Role, String> {
    match s {
        "test" => Ok(Role::Test),
        "valid" => Ok(Role::Valid),
        _ => Err(format!("expected `test` or `valid`, got `{s}`")),
    }
}

fn parse_ratios(s: &str) -> std::result::Result<(u32, u32, u32), String> {
    let parts: Vec<u32> = s
        .split(':')
        .map(|p| p.trim().parse::<u32>().map_err(|e| format!("`{s}`: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [a, b, c] if a > 0 && c > 0 => Ok((a, b, c)),
        _ => Err(format!("expected `train:valid:test` with non-zero train and test, got `{s}`")),
    }
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numeric => 4,
    }
}

fn kind_name(kind: ErrorKind) -> &'static str {
    match kind {
        ErrorKind::Config => "config",
        ErrorKind::Data => "data",
        ErrorKind::Numeric => "numeric",
    }
}

fn report(kind: ErrorKind, message: &str) -> ExitCode {
    let code = exit_code(kind);
    eprintln!("{}", json!({"error": kind_name(kind), "exit": code, "message": message}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(ErrorKind::Config, e.to_string().trim()),
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(e.kind(), &e.to_string()),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Preprocess(a) => preprocess(a),
        Command::Train(a) => train(a, cli.threads),
        Command::Eval(a) => eval(a, cli.threads),
        Command::Recommend(a) => recommend_cmd(a, cli.threads),
        Command::Complete(a) => complete(a, cli.threads),
        Command::Explain(a) => explain(a, cli.threads),
    }
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::io(format!("resolving {}", p.display()), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

fn preprocess(a: PreprocessArgs) -> Result<()> {
    let settings = SplitSettings {
        ratios: a.split,
        seed: a.seed,
        min_user_freq: a.min_user_freq,
        min_item_freq: a.min_item_freq,
    };
    if a.alignments.is_some() && a.triples.is_none() {
        return Err(Error::Config("--alignments needs --triples".into()));
    }
    let interactions = InteractionSet::load(&a.interactions, a.min_user_freq, a.min_item_freq)?.split(a.split, a.seed)?;
    let triples = match &a.triples {
        Some(p) => Some(TripleSet::load(p)?.split(a.split, a.seed)?),
        None => None,
    };
    let mut dataset = Dataset {
        interactions,
        triples,
        alignments: AlignmentMap::default(),
    };
    let mut stats = None;
    if let Some(p) = &a.alignments {
        let (d, s) = dataset.with_alignments(p)?;
        dataset = d;
        stats = Some(s);
    }
    create_dir(&a.out)?;
    let index = dataset.write_dir(&a.out, &settings, stats)?;
    let manifest = json!({
        "format": RUN_FORMAT,
        "command": "preprocess",
        "interactions": absolute(&a.interactions)?,
        "triples": a.triples.as_deref().map(absolute).transpose()?,
        "alignments": a.alignments.as_deref().map(absolute).transpose()?,
        "settings": settings,
        "counts": index.counts,
    });
    write_json(&a.out.join(MANIFEST_FILE), &manifest)?;

    let c = index.counts;
    if a.json {
        println!(
            "{}",
            json!({"record": "dataset", "counts": c, "interactions": index.interactions,
                   "triples": index.triples, "alignments": index.alignments})
        );
    } else {
        println!("users       {:>10}", c.users);
        println!("items       {:>10}", c.items);
        println!("interactions{:>10}", index.interactions);
        if dataset.triples.is_some() {
            println!("entities    {:>10}", c.entities);
            println!("relations   {:>10}", c.relations);
            println!("triples     {:>10}", index.triples);
        }
        if let Some(s) = &index.alignments {
            println!("alignments  {:>10}  (coverage {:.3}, dropped {}, rejected {})", s.pairs, s.coverage, s.stats.dropped, s.stats.rejected);
            println!("aligned pairs written to {}", a.out.join(ALIGNMENTS_FILE).display());
        }
    }
    Ok(())
}

/// Merges explicit flags over the replayed manifest (if any) and the model defaults.
fn resolve_train(a: &TrainArgs) -> Result<(TrainConfig, PathBuf, Option<PathBuf>, Vec<PathBuf>)> {
    let base: Option<TrainManifest> = a.from_manifest.as_deref().map(read_json).transpose()?;
    let model = a
        .model
        .or(base.as_ref().map(|m| m.config.model))
        .ok_or_else(|| Error::Config("--model is required".into()))?;
    let mut c = match &base {
        Some(m) if m.config.model == model => m.config.clone(),
        _ => TrainConfig::defaults_for(model),
    };
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { c.$f = v; })* };
    }
    set!(dim, lambda, batch_size, lr, l2, optimizer, max_epochs, patience, eval_every, margin, num_prefs, seed);
    if let Some(s) = a.strategy {
        c.induction.strategy = s;
    }
    if let Some(t) = a.tau {
        c.induction.tau = t;
    }
    if let Some(n) = a.noise {
        c.induction.noise = n;
    }
    if a.bern {
        c.corruption = Corruption::Bernoulli;
    }
    if a.no_constraints {
        c.constraints = false;
    }
    c.validate()?;

    let data = a
        .data
        .clone()
        .or(base.as_ref().map(|m| m.data.clone()))
        .ok_or_else(|| Error::Config("--data is required".into()))?;
    let alignments = a.alignments.clone().or(base.as_ref().and_then(|m| m.alignments.clone()));
    let init_from = if a.init_from.is_empty() {
        base.map(|m| m.init_from).unwrap_or_default()
    } else {
        a.init_from.clone()
    };
    if model == ModelKind::Ktup && alignments.is_none() {
        return Err(Error::Config("ktup needs --alignments".into()));
    }
    Ok((c, data, alignments, init_from))
}

fn load_dataset(data: &Path, alignments: Option<&Path>) -> Result<Dataset> {
    let (mut dataset, _) = Dataset::read_dir(data)?;
    if let Some(p) = alignments {
        let (d, stats) = dataset.with_alignments(p)?;
        info!("{} alignments ({} dropped, {} rejected)", d.alignments.len(), stats.dropped, stats.rejected);
        dataset = d;
    }
    Ok(dataset)
}

fn train(a: TrainArgs, threads: Option<usize>) -> Result<()> {
    let (config, data, alignments, init_from) = resolve_train(&a)?;
    let data = absolute(&data)?;
    let alignments = alignments.as_deref().map(absolute).transpose()?;
    let init_from: Vec<PathBuf> = init_from.iter().map(|p| absolute(p)).collect::<Result<_>>()?;
    let dataset = load_dataset(&data, alignments.as_deref())?;

    let shape = config.model.shape(config.dim, &dataset.counts(), config.num_prefs)?;
    let mut space = EmbeddingSpace::<f32>::init(&shape, config.seed)?;
    if !init_from.is_empty() {
        for p in &init_from {
            let src = EmbeddingSpace::<f32>::load(p)?;
            let taken = space.copy_matching_from(&src);
            if taken.is_empty() {
                return Err(Error::Format(format!(
                    "{}: no table matches the {} shape for this dataset",
                    p.display(),
                    config.model
                )));
            }
            info!("{}: initialised {:?}", p.display(), taken);
        }
        // pretrained rows may come from an unconstrained model
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
        space.enforce_constraints(config.model.constraint_policy(config.constraints), &mut rng);
    }

    create_dir(&a.out)?;
    let out = absolute(&a.out)?;
    let log_path = a.log.clone().unwrap_or_else(|| out.join(EPOCH_LOG_FILE));
    let mut log_file = BufWriter::new(
        fs::File::create(&log_path).map_err(|e| Error::io(format!("creating {}", log_path.display()), e))?,
    );
    let start = Instant::now();
    let FitResult {
        space,
        logs,
        best_epoch,
        best_metric,
    } = fit(&dataset, space, &config, Some(&mut log_file))?;
    log_file.flush().map_err(|e| Error::io("writing epoch log", e))?;
    let seconds = start.elapsed().as_secs_f64();

    let embeddings = out.join(EMBEDDINGS_FILE);
    space.save(&embeddings)?;
    let manifest = TrainManifest {
        format: RUN_FORMAT.into(),
        command: "train".into(),
        data,
        alignments,
        init_from,
        config,
        threads,
        embeddings,
        epoch_log: absolute(&log_path)?,
        epochs_run: logs.len(),
        best_epoch,
        best_metric,
        seconds,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;

    if a.json {
        println!(
            "{}",
            json!({"record": "train", "model": manifest.config.model, "epochs_run": manifest.epochs_run,
                   "best_epoch": best_epoch, "best_metric": best_metric, "seconds": seconds,
                   "embeddings": manifest.embeddings})
        );
    } else {
        println!("model        {}", manifest.config.model);
        println!("epochs run   {}", manifest.epochs_run);
        println!("best epoch   {best_epoch}");
        println!("best valid   {best_metric:.6}");
        println!("seconds      {seconds:.1}");
        println!("embeddings   {}", manifest.embeddings.display());
        println!("manifest     {}", out.join(MANIFEST_FILE).display());
    }
    Ok(())
}

struct LoadedRun {
    manifest: TrainManifest,
    dataset: Dataset,
    space: EmbeddingSpace<f32>,
}

fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest: TrainManifest = read_json(&dir.join(MANIFEST_FILE))?;
    if manifest.format != RUN_FORMAT {
        return Err(Error::Data(format!("{}: unknown run format `{}`", dir.display(), manifest.format)));
    }
    let dataset = load_dataset(&manifest.data, manifest.alignments.as_deref())?;
    let space = EmbeddingSpace::<f32>::load(&dir.join(EMBEDDINGS_FILE))?;
    let c = &manifest.config;
    space.check_shape(&c.model.shape(c.dim, &dataset.counts(), c.num_prefs)?)?;
    Ok(LoadedRun {
        manifest,
        dataset,
        space,
    })
}

fn write_query_manifest(r: &RunArgs, command: &str, threads: Option<usize>, extra: serde_json::Value) -> Result<()> {
    if let Some(p) = &r.manifest_out {
        let value = json!({
            "format": RUN_FORMAT,
            "command": command,
            "run": absolute(&r.run)?,
            "threads": threads,
            "args": extra,
        });
        write_json(p, &value)?;
    }
    Ok(())
}

fn print_rank_stats(label: &str, s: &RankStats) {
    println!(
        "{label:<12}{:>8}{:>12.4}{:>12.4}{:>12.1}{:>12.1}",
        s.queries, s.hits_raw, s.hits_filtered, s.mean_rank_raw, s.mean_rank_filtered
    );
}

fn print_kgc(m: &KgcMetrics) {
    println!(
        "{:<12}{:>8}{:>12}{:>12}{:>12}{:>12}",
        "side",
        "queries",
        format!("hit@{} raw", m.hits_at),
        format!("hit@{} filt", m.hits_at),
        "MR raw",
        "MR filt"
    );
    print_rank_stats("head", &m.head);
    print_rank_stats("tail", &m.tail);
    print_rank_stats("overall", &m.overall);
    for row in &m.by_category {
        print_rank_stats(&format!("{} head", row.category), &row.head);
        print_rank_stats(&format!("{} tail", row.category), &row.tail);
    }
}

fn print_rec(label: &str, m: &RecMetrics) {
    println!(
        "{label:<12}{:>8}{:>10.4}{:>10.4}{:>10.4}{:>10.4}{:>10.4}",
        m.users, m.precision, m.recall, m.f1, m.hit, m.ndcg
    );
}

fn eval(a: EvalArgs, threads: Option<usize>) -> Result<()> {
    let LoadedRun {
        manifest,
        dataset,
        space,
    } = load_run(&a.run.run)?;
    write_query_manifest(
        &a.run,
        "eval",
        threads,
        json!({"split": if a.split == Role::Valid { "valid" } else { "test" }, "n": a.n,
               "buckets": a.buckets, "category_cutoff": a.category_cutoff}),
    )?;
    let objective = manifest.config.objective(dataset.item_entity())?;
    let mut dump = match &a.dump_ranks {
        Some(p) => Some(BufWriter::new(
            fs::File::create(p).map_err(|e| Error::io(format!("creating {}", p.display()), e))?,
        )),
        None => None,
    };
    let mut emit_dump = |value: serde_json::Value| -> Result<()> {
        if let Some(w) = dump.as_mut() {
            writeln!(w, "{value}").map_err(|e| Error::io("writing rank dump", e))?;
        }
        Ok(())
    };

    let validation = validation_metric(&space, &dataset, &objective);
    if a.run.json {
        println!("{}", json!({"record": "validation", "metric": validation}));
    } else {
        println!("validation metric {validation:.6} (training best {:.6})", manifest.best_metric);
    }

    if let Some(cfg) = objective.rec {
        let per_user = eval_rec_per_user(&space, cfg, &dataset, a.split, a.n);
        let overall = RecMetrics::mean(per_user.iter().flatten(), a.n);
        let bucket_rows = match a.buckets {
            Some(k) => {
                let b = sparsity_buckets(&dataset.interactions, k)?;
                let rows = eval_by_sparsity(&per_user, &b, a.n);
                b.mean_train.iter().copied().zip(rows).collect()
            }
            None => Vec::new(),
        };
        if a.run.json {
            println!("{}", json!({"record": "rec", "metrics": overall}));
            for (k, (mean_train, m)) in bucket_rows.iter().enumerate() {
                println!("{}", json!({"record": "rec_bucket", "bucket": k, "mean_train": mean_train, "metrics": m}));
            }
        } else {
            println!(
                "{:<12}{:>8}{:>10}{:>10}{:>10}{:>10}{:>10}",
                "users",
                "count",
                format!("P@{}", a.n),
                format!("R@{}", a.n),
                format!("F1@{}", a.n),
                format!("Hit@{}", a.n),
                format!("NDCG@{}", a.n)
            );
            print_rec("all", &overall);
            for (k, (mean_train, m)) in bucket_rows.iter().enumerate() {
                print_rec(&format!("b{k} ~{mean_train:.0}"), m);
            }
        }
        if a.dump_ranks.is_some() {
            let users = dataset.interactions.users();
            let items = dataset.interactions.items();
            for r in rec_ranks(&space, cfg, &dataset, a.split) {
                emit_dump(json!({"kind": "rec", "user": users.name(r.user), "item": items.name(r.item), "rank": r.rank}))?;
            }
        }
    }

    if let Some(cfg) = objective.kgc {
        let queries = dataset.triples_with(a.split);
        let ranks = kgc_ranks(&space, &cfg, &queries, &dataset.all_triples());
        let profile = dataset.relation_profile(a.category_cutoff);
        let m = summarize_kgc(&ranks, profile.as_ref(), a.n);
        if a.run.json {
            println!("{}", json!({"record": "kgc", "metrics": m}));
        } else {
            print_kgc(&m);
        }
        if let (Some(ents), Some(rels)) = (dataset.entity_vocab(), dataset.relation_vocab()) {
            for r in ranks.iter().filter(|_| a.dump_ranks.is_some()) {
                emit_dump(json!({"kind": "kgc", "head": ents.name(r.head), "relation": rels.name(r.relation),
                                 "tail": ents.name(r.tail), "side": r.side, "raw": r.raw, "filtered": r.filtered}))?;
            }
        }
    }
    if let Some(mut w) = dump {
        w.flush().map_err(|e| Error::io("writing rank dump", e))?;
    }
    Ok(())
}

fn user_index(dataset: &Dataset, raw: &str) -> Result<usize> {
    dataset
        .interactions
        .users()
        .index(raw)
        .ok_or_else(|| Error::Data(format!("unknown user `{raw}`")))
}

fn recommend_cmd(a: RecommendArgs, threads: Option<usize>) -> Result<()> {
    let LoadedRun {
        manifest,
        dataset,
        space,
    } = load_run(&a.run.run)?;
    write_query_manifest(&a.run, "recommend", threads, json!({"user": a.user, "n": a.n}))?;
    let cfg = manifest
        .config
        .objective(dataset.item_entity())?
        .rec
        .ok_or_else(|| Error::Config(format!("{} does not recommend items", manifest.config.model)))?;
    let u = user_index(&dataset, &a.user)?;
    let items = dataset.interactions.items();
    for (rank, (item, score)) in recommend(&space, cfg, &dataset, u, a.n).into_iter().enumerate() {
        if a.run.json {
            println!("{}", json!({"user": a.user, "rank": rank + 1, "item": items.name(item), "score": score}));
        } else {
            println!("{:>4}  {:<24}{score:>12.5}", rank + 1, items.name(item));
        }
    }
    Ok(())
}

fn complete(a: CompleteArgs, threads: Option<usize>) -> Result<()> {
    let LoadedRun {
        manifest,
        dataset,
        space,
    } = load_run(&a.run.run)?;
    write_query_manifest(
        &a.run,
        "complete",
        threads,
        json!({"head": a.head, "tail": a.tail, "relation": a.relation, "n": a.n, "filter": a.filter}),
    )?;
    let cfg = manifest
        .config
        .objective(dataset.item_entity())?
        .kgc
        .ok_or_else(|| Error::Config(format!("{} does not complete facts", manifest.config.model)))?;
    let (ents, rels) = dataset
        .entity_vocab()
        .zip(dataset.relation_vocab())
        .ok_or_else(|| Error::Data("dataset has no knowledge graph".into()))?;
    let lookup = |raw: &str| ents.index(raw).ok_or_else(|| Error::Data(format!("unknown entity `{raw}`")));
    let relation = rels
        .index(&a.relation)
        .ok_or_else(|| Error::Data(format!("unknown relation `{}`", a.relation)))?;
    let (fixed, tail_side) = match (&a.head, &a.tail) {
        (Some(h), _) => (lookup(h)?, true),
        (None, Some(t)) => (lookup(t)?, false),
        (None, None) => return Err(Error::Config("give --head or --tail".into())),
    };
    let fact = |c: usize| if tail_side { Triple::new(fixed, c, relation) } else { Triple::new(c, fixed, relation) };
    let known = dataset.all_triples();
    let scores: Vec<f64> = (0..ents.len()).map(|c| score_triple(&space, &fact(c), &cfg)).collect();
    let ranked = ktup_core::eval::top_n(&scores, |c| a.filter && known.contains(&fact(c)), a.n);
    for (rank, c) in ranked.into_iter().enumerate() {
        let is_known = known.contains(&fact(c));
        if a.run.json {
            println!(
                "{}",
                json!({"rank": rank + 1, "entity": ents.name(c), "energy": scores[c], "known": is_known,
                       "side": if tail_side { "tail" } else { "head" }})
            );
        } else {
            println!("{:>4}  {:<32}{:>12.5}  {}", rank + 1, ents.name(c), scores[c], if is_known { "known" } else { "" });
        }
    }
    Ok(())
}

fn explain(a: ExplainArgs, threads: Option<usize>) -> Result<()> {
    let LoadedRun {
        manifest,
        dataset,
        space,
    } = load_run(&a.run.run)?;
    write_query_manifest(
        &a.run,
        "explain",
        threads,
        json!({"user": a.user, "top_prefs": a.top_prefs, "n": a.n, "max_support": a.max_support}),
    )?;
    let cfg = manifest
        .config
        .objective(dataset.item_entity())?
        .rec
        .ok_or_else(|| Error::Config(format!("{} does not recommend items", manifest.config.model)))?;
    let u = user_index(&dataset, &a.user)?;
    let rationales = explain_user(&space, cfg, &dataset, u, a.top_prefs, a.n, a.max_support)?;
    if rationales.is_empty() {
        warn!("no candidate items for user `{}`", a.user);
    }
    for r in &rationales {
        if a.run.json {
            println!("{}", serde_json::to_string(r)?);
            continue;
        }
        println!("{:>3}. {}  (score {:.5})", r.rank, r.item, r.score);
        let prefs: Vec<String> = r.preferences.iter().map(|p| format!("{} {:.3}", p.name, p.weight)).collect();
        println!("     preferences: {}", prefs.join(", "));
        for s in &r.support {
            println!("     {} ({}) -[{}]- {}", s.history_item, s.entity, s.relation, s.neighbor);
        }
    }
    Ok(())
}
