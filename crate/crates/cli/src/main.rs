mod config;
mod report;

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use asrf::io::{
    load_dataset, read_features, read_id_list, read_mapping, save_dataset, write_features,
    write_labels,
};
use asrf::metrics::F1Averaging;
use asrf::refine::{refine_by_boundaries, select_boundaries};
use asrf::synth::generate_synthetic_dataset;
use asrf::tcn::checkpoint;
use asrf::train::{
    evaluate_predictions, predict_dataset, sweep_brb_stages, sweep_theta_p, train, EvalMode,
};
use asrf::{Dataset, DatasetSplit, VideoSample};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "asrf",
    version,
    about = "Action segmentation with boundary-driven refinement"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Disable multi-threaded evaluation.
    #[arg(long, global = true)]
    sequential: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth(SynthArgs),
    /// Train a model; writes model.ckpt, train_log.jsonl and run.toml.
    Train(TrainArgs),
    /// Evaluate a checkpoint in one or more modes.
    Eval(EvalArgs),
    /// Refine external probability files with their boundary files.
    Refine(RefineArgs),
    /// Sweep the boundary threshold or the boundary-branch stage count.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    min_frames: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Videos held out into splits/test.txt (default: a fifth).
    #[arg(long)]
    test_videos: Option<usize>,
}

#[derive(Args, Debug, Default)]
struct DataArgs {
    /// Dataset directory.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Id list replacing splits/train.txt.
    #[arg(long)]
    train_split: Option<PathBuf>,
    /// Id list replacing splits/test.txt.
    #[arg(long)]
    test_split: Option<PathBuf>,
}

#[derive(Args, Debug, Default)]
struct RefineFlags {
    /// Boundary probability threshold.
    #[arg(long)]
    theta_p: Option<f64>,
    /// Boundary tolerance (frames) for boundary precision/recall.
    #[arg(long)]
    theta_b: Option<usize>,
    /// Minimum segment length for the relabel baseline.
    #[arg(long)]
    theta_t: Option<usize>,
    /// Average segmental F1 per class instead of over all segments.
    #[arg(long)]
    per_class_f1: bool,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    refine: RefineFlags,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the boundary-branch loss.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    asb_stages: Option<usize>,
    #[arg(long)]
    brb_stages: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    refine: RefineFlags,
    /// Model checkpoint.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Evaluation mode; repeat for several.
    #[arg(long = "mode", default_value = "refined")]
    modes: Vec<EvalMode>,
    /// Which split to evaluate.
    #[arg(long, default_value = "test", value_parser = ["train", "test", "all"])]
    split: String,
    /// Write the structured report here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Also write per-video probability (`<id>.probs`) and boundary
    /// (`<id>.boundary`) files to this directory.
    #[arg(long)]
    export: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RefineArgs {
    /// Directory with `<id>.probs` (T x C) and `<id>.boundary` (T x 1) files.
    #[arg(long)]
    input: PathBuf,
    /// Class mapping (`<id> <name>` per line).
    #[arg(long)]
    mapping: PathBuf,
    /// Directory for the refined `<id>.txt` label files.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    theta_p: Option<f64>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Boundary tolerance (frames) for boundary precision/recall.
    #[arg(long)]
    theta_b: Option<usize>,
    #[arg(long)]
    per_class_f1: bool,
    /// Checkpoint for the threshold sweep.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Comma-separated boundary thresholds to sweep.
    #[arg(long, value_delimiter = ',', conflicts_with = "stages")]
    theta_p: Vec<f64>,
    /// Comma-separated boundary-branch stage counts; trains one model each.
    #[arg(long, value_delimiter = ',')]
    stages: Vec<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the rows as TOML here.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.sequential {
        asrf::par::set_enabled(false);
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    match cli.command {
        Command::Synth(a) => synth(&mut cfg, a),
        Command::Train(a) => train_cmd(&mut cfg, a),
        Command::Eval(a) => eval_cmd(&mut cfg, a),
        Command::Refine(a) => refine_cmd(&mut cfg, a),
        Command::Ablate(a) => ablate_cmd(&mut cfg, a),
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, flag: Option<T>) {
    if flag.is_some() {
        *slot = flag;
    }
}

fn required<'a>(slot: &'a Option<PathBuf>, flag: &str, key: &str) -> Result<&'a Path> {
    slot.as_deref()
        .with_context(|| format!("no {flag} given (flag --{flag} or config paths.{key})"))
}

fn apply_refine(cfg: &mut RunConfig, f: &RefineFlags) -> Result<F1Averaging> {
    set(&mut cfg.refine.theta_p, f.theta_p);
    set(&mut cfg.refine.theta_b, f.theta_b);
    set(&mut cfg.refine.theta_t, f.theta_t);
    cfg.refine.validate()?;
    if f.per_class_f1 {
        cfg.train.f1_averaging = F1Averaging::PerClass;
    }
    Ok(cfg.train.f1_averaging)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn synth(cfg: &mut RunConfig, a: SynthArgs) -> Result<()> {
    set_opt(&mut cfg.paths.data, a.out);
    let s = &mut cfg.synth;
    set(&mut s.num_videos, a.videos);
    set(&mut s.num_classes, a.classes);
    set(&mut s.feature_dim, a.dim);
    set(&mut s.min_frames, a.min_frames);
    set(&mut s.max_frames, a.max_frames);
    set(&mut s.noise_level, a.noise);
    set(&mut s.seed, a.seed);
    let out = required(&cfg.paths.data, "out", "data")?;
    let data = generate_synthetic_dataset(&cfg.synth)?.dataset;
    let test = a.test_videos.unwrap_or((cfg.synth.num_videos / 5).max(1));
    let split = DatasetSplit::holdout(&data.ids(), test)?;
    save_dataset(out, &data, &split)?;
    log::info!(
        "wrote {} videos ({} train / {} test) to {}",
        data.videos.len(),
        split.train.len(),
        split.test.len(),
        out.display()
    );
    Ok(())
}

fn load_data(cfg: &mut RunConfig, a: DataArgs) -> Result<(Dataset, DatasetSplit)> {
    set_opt(&mut cfg.paths.data, a.data);
    set_opt(&mut cfg.paths.train_split, a.train_split);
    set_opt(&mut cfg.paths.test_split, a.test_split);
    let root = required(&cfg.paths.data, "data", "data")?;
    let (dataset, mut split) = load_dataset(root)?;
    if let Some(p) = &cfg.paths.train_split {
        split.train = read_id_list(p)?;
    }
    if let Some(p) = &cfg.paths.test_split {
        split.test = read_id_list(p)?;
    }
    split.validate(&dataset)?;
    Ok((dataset, split))
}

fn train_cmd(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    let (dataset, split) = load_data(cfg, a.data)?;
    apply_refine(cfg, &a.refine)?;
    set_opt(&mut cfg.paths.out, a.out);
    let t = &mut cfg.train;
    set(&mut t.epochs, a.epochs);
    set(&mut t.adam.learning_rate, a.lr);
    set(&mut t.batch_size, a.batch_size);
    set(&mut t.seed, a.seed);
    set(&mut t.loss.lambda_brb, a.lambda);
    set(&mut t.model.channels, a.channels);
    set(&mut t.model.layers, a.layers);
    set(&mut t.model.asb_stages, a.asb_stages);
    set(&mut t.model.brb_stages, a.brb_stages);
    set(&mut t.model.dropout, a.dropout);
    let out = required(&cfg.paths.out, "out", "out")?.to_path_buf();
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;

    let ckpt = out.join("model.ckpt");
    cfg.paths.model = Some(ckpt.clone());
    write_file(&out.join("run.toml"), &cfg.absolutized()?.to_toml()?)?;

    let log_path = out.join("train_log.jsonl");
    let mut log_file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log_err = None;
    let tr = dataset.select(&split.train)?;
    let te = dataset.select(&split.test)?;
    let outcome = train(
        &tr,
        &te,
        dataset.num_classes(),
        &cfg.train,
        &cfg.refine,
        &mut |rec| {
            match &rec.held_out {
                Some(h) => log::info!(
                    "epoch {:>3}  loss {:.4}  held-out acc {:.2} edit {:.2}",
                    rec.epoch,
                    rec.loss.total,
                    h.acc,
                    h.edit
                ),
                None => log::info!("epoch {:>3}  loss {:.4}", rec.epoch, rec.loss.total),
            }
            let line = serde_json::to_string(rec).expect("epoch records serialize");
            if let Err(e) = writeln!(log_file, "{line}").and_then(|_| log_file.flush()) {
                log_err.get_or_insert(e);
            }
        },
    )?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", log_path.display()));
    }
    checkpoint::save(&ckpt, &outcome.model)?;
    log::info!(
        "saved epoch {} checkpoint to {}",
        outcome.best_epoch,
        ckpt.display()
    );
    Ok(())
}

fn eval_videos<'a>(
    dataset: &'a Dataset,
    split: &DatasetSplit,
    which: &str,
) -> Result<Vec<&'a VideoSample>> {
    Ok(match which {
        "train" => dataset.select(&split.train)?,
        "test" => dataset.select(&split.test)?,
        _ => dataset.videos.iter().collect(),
    })
}

fn load_model(
    cfg: &mut RunConfig,
    flag: Option<PathBuf>,
    dataset: &Dataset,
) -> Result<asrf::AsrfModel<f32>> {
    set_opt(&mut cfg.paths.model, flag);
    let path = required(&cfg.paths.model, "model", "model")?;
    let model = checkpoint::load(path)?;
    let mc = model.config();
    if mc.input_dim != dataset.feature_dim() || mc.num_classes != dataset.num_classes() {
        bail!(
            "checkpoint {} expects {}-dim features and {} classes; dataset has {} and {}",
            path.display(),
            mc.input_dim,
            mc.num_classes,
            dataset.feature_dim(),
            dataset.num_classes()
        );
    }
    Ok(model)
}

fn eval_cmd(cfg: &mut RunConfig, a: EvalArgs) -> Result<()> {
    let (dataset, split) = load_data(cfg, a.data)?;
    let averaging = apply_refine(cfg, &a.refine)?;
    let model = load_model(cfg, a.model, &dataset)?;
    let videos = eval_videos(&dataset, &split, &a.split)?;
    let outputs = predict_dataset(&model, &videos)?;

    let mut modes = a.modes;
    modes.dedup();
    let reports = modes
        .iter()
        .map(|&m| {
            let r = evaluate_predictions(
                &videos,
                &outputs,
                dataset.num_classes(),
                &cfg.refine,
                m,
                averaging,
            )?;
            Ok((m, r))
        })
        .collect::<Result<Vec<_>>>()?;
    println!("{}", report::mode_table(&reports));
    if let Some(path) = &a.report {
        write_file(path, &report::modes_toml(&reports)?)?;
    }
    if let Some(dir) = &a.export {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (v, out) in videos.iter().zip(&outputs) {
            write_features(&dir.join(format!("{}.probs", v.id)), out.final_asb())?;
            write_features(
                &dir.join(format!("{}.boundary", v.id)),
                &asrf::Matrix::column(out.final_brb()),
            )?;
        }
    }
    Ok(())
}

fn refine_cmd(cfg: &mut RunConfig, a: RefineArgs) -> Result<()> {
    set(&mut cfg.refine.theta_p, a.theta_p);
    cfg.refine.validate()?;
    let classes = read_mapping(&a.mapping)?;
    let mut stems: Vec<String> = fs::read_dir(&a.input)
        .with_context(|| format!("reading {}", a.input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "probs"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    if stems.is_empty() {
        bail!("no .probs files in {}", a.input.display());
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for id in &stems {
        let probs = read_features(&a.input.join(format!("{id}.probs")))?;
        let bd_path = a.input.join(format!("{id}.boundary"));
        let bd = read_features(&bd_path)?;
        if probs.cols() != classes.len() {
            bail!(
                "{id}.probs has {} columns, mapping has {} classes",
                probs.cols(),
                classes.len()
            );
        }
        if bd.cols() != 1 || bd.rows() != probs.rows() {
            bail!(
                "{} is {}x{}, expected {}x1",
                bd_path.display(),
                bd.rows(),
                bd.cols(),
                probs.rows()
            );
        }
        let mask = select_boundaries(bd.as_slice(), cfg.refine.theta_p);
        let labels = refine_by_boundaries(&probs, &mask)?;
        write_labels(&a.out.join(format!("{id}.txt")), &labels, &classes)?;
    }
    log::info!("refined {} videos into {}", stems.len(), a.out.display());
    Ok(())
}

fn ablate_cmd(cfg: &mut RunConfig, a: AblateArgs) -> Result<()> {
    let (dataset, split) = load_data(cfg, a.data)?;
    let flags = RefineFlags {
        theta_b: a.theta_b,
        per_class_f1: a.per_class_f1,
        ..RefineFlags::default()
    };
    let averaging = apply_refine(cfg, &flags)?;
    let held = dataset.select(&split.test)?;
    let (table, toml) = if !a.theta_p.is_empty() {
        let model = load_model(cfg, a.model, &dataset)?;
        let rows = sweep_theta_p(&model, &held, &a.theta_p, &cfg.refine, averaging)?;
        (report::theta_table(&rows), report::rows_toml(&rows)?)
    } else if !a.stages.is_empty() {
        set(&mut cfg.train.epochs, a.epochs);
        set(&mut cfg.train.seed, a.seed);
        let tr = dataset.select(&split.train)?;
        let rows = sweep_brb_stages(
            &tr,
            &held,
            dataset.num_classes(),
            &a.stages,
            &cfg.train,
            &cfg.refine,
        )?;
        (report::stage_table(&rows), report::rows_toml(&rows)?)
    } else {
        bail!("give --theta-p or --stages");
    };
    println!("{table}");
    if let Some(path) = &a.report {
        write_file(path, &toml)?;
    }
    Ok(())
}
