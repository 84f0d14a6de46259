use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use parsing_eval::combine::{combine_dataset, CombineMode, DEFAULT_SCORE_THRESHOLD};
use parsing_eval::formats::{
    save_label_map, to_json, write_dataset, write_file, write_report, Dataset, DatasetManifest,
    EvalReport, PredictionEntry,
};
use parsing_eval::harness::{
    run_experiments, synth_dataset, ExperimentMode, ExperimentOptions, GlobalParams, Perturbation,
    ScoreNoise, SynthParams,
};
use parsing_eval::instance_metrics::{evaluate_instances, PROTOCOL_VERSION};
use parsing_eval::rescoring::{calibration, rescore_dataset, RescoreOptions, DEFAULT_TOP_K};
use parsing_eval::semantic_metrics::{evaluate_semantic, SemanticOptions};
use parsing_eval::{Error, LabelMap, Result};

#[derive(Parser)]
#[command(name = "parsing-eval", version = PROTOCOL_VERSION, about = "Multiple human parsing evaluation toolkit")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Semantic segmentation scores (mIoU, pixel and mean accuracy).
    EvalSemantic(EvalSemanticArgs),
    /// Instance-level AP^p, AP^p_vol and PCP_50.
    EvalInstance(EvalInstanceArgs),
    /// Keep the top-K detections per image and fuse their scores.
    Rescore(RescoreArgs),
    /// Global, instance-level and combined semantic maps with their scores.
    Combine(CombineArgs),
    /// Correlation of each score with the true instance mIoU.
    Calibrate(CalibrateArgs),
    /// Ground-truth swap experiments against the baseline.
    UpperBound(UpperBoundArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    /// The stored global prediction.
    Global,
    /// Instances rendered at the score threshold.
    Instance,
    /// Global map with rendered instances on top.
    Combined,
}

#[derive(Args)]
struct EvalSemanticArgs {
    #[command(flatten)]
    input: Input,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    source: Source,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long)]
    ignore_background: bool,
}

#[derive(Args)]
struct EvalInstanceArgs {
    #[command(flatten)]
    input: Input,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RescoreArgs {
    #[command(flatten)]
    input: Input,
    /// Path of the rescored manifest. Label maps are referenced, not copied.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    topk: usize,
    /// Use the true mIoU target as iou_score.
    #[arg(long)]
    oracle: bool,
}

#[derive(Args)]
struct CombineArgs {
    #[command(flatten)]
    input: Input,
    /// Output directory for report.json, report.txt and the label maps.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long)]
    ignore_background: bool,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    input: Input,
    /// Output directory for calibration.json and scatter.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    GtBox,
    GtParsing,
    GtScore,
    All,
}

#[derive(Args)]
struct UpperBoundArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
    score_threshold: f64,
    #[arg(long)]
    ignore_background: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PerturbationArg {
    Mislabel,
    Erode,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory; receives manifest.json and maps/.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    images: usize,
    /// Square image size in pixels.
    #[arg(long, default_value_t = 128)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    categories: usize,
    #[arg(long, default_value_t = 0.3)]
    min_miou: f64,
    #[arg(long, default_value_t = 0.95)]
    max_miou: f64,
    /// Attach iou_score = true mIoU + U(-x, x).
    #[arg(long)]
    iou_noise: Option<f64>,
    /// cls_score = true mIoU + N(0, sigma) instead of U(0.5, 1).
    #[arg(long)]
    cls_sigma: Option<f64>,
    #[arg(long, value_enum, default_value = "mislabel")]
    perturbation: PerturbationArg,
    /// Omit the global semantic prediction.
    #[arg(long)]
    no_global: bool,
    /// Over-coverage band of the global prediction, in pixels.
    #[arg(long, default_value_t = 0)]
    ring: usize,
    /// Rows by which the global prediction pushes part boundaries down.
    #[arg(long, default_value_t = 2)]
    boundary_shift: usize,
}

fn open(input: &Input) -> Result<(Dataset, Vec<parsing_eval::ImageRecord>)> {
    let ds = Dataset::open(&input.manifest)?;
    let images = ds.load_all()?;
    if images.is_empty() {
        return Err(Error::NoImages);
    }
    Ok((ds, images))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

fn eval_semantic(a: &EvalSemanticArgs) -> Result<()> {
    let (ds, images) = open(&a.input)?;
    let opts = SemanticOptions {
        ignore_background: a.ignore_background,
    };
    let classes = ds.categories().count();
    let metrics = match a.source {
        Source::Global => {
            let missing: Vec<&str> = images
                .iter()
                .filter(|i| i.pred_semantic().is_none())
                .map(|i| i.id())
                .collect();
            if !missing.is_empty() {
                return Err(Error::InvalidInput(format!(
                    "pred_semantic missing for {}; use --source instance",
                    missing.join(", ")
                )));
            }
            let pairs: Vec<(&LabelMap, &LabelMap)> = images
                .iter()
                .map(|i| (i.pred_semantic().expect("checked"), i.gt_semantic()))
                .collect();
            evaluate_semantic(classes, &pairs, opts)?
        }
        Source::Instance | Source::Combined => {
            let mode = if matches!(a.source, Source::Instance) {
                CombineMode::Instance
            } else {
                CombineMode::Combined
            };
            let out = combine_dataset(&images, classes, a.score_threshold, opts)?;
            out.metrics(mode)
                .cloned()
                .ok_or_else(|| Error::InvalidInput("pred_semantic missing".into()))?
        }
    };
    let report = write_report(&EvalReport::new(images.len(), Some(&metrics), None))?;
    emit(&report.text, a.out.as_deref(), &report.json)
}

fn emit(text: &str, json_path: Option<&Path>, json: &str) -> Result<()> {
    print!("{text}");
    if let Some(p) = json_path {
        write_text(p, json)?;
    }
    Ok(())
}

fn eval_instance(a: &EvalInstanceArgs) -> Result<()> {
    let (_, images) = open(&a.input)?;
    let metrics = evaluate_instances(&images)?;
    let report = write_report(&EvalReport::new(images.len(), None, Some(&metrics)))?;
    emit(&report.text, a.out.as_deref(), &report.json)
}

/// `rel` (relative to `from`) re-expressed relative to `to`.
fn rebase(rel: &str, from: &Path, to: &Path) -> Result<String> {
    let abs = from.join(rel);
    let p = pathdiff::diff_paths(&abs, to)
        .ok_or_else(|| Error::InvalidInput(format!("cannot express {} relative to {}", abs.display(), to.display())))?;
    Ok(p.to_string_lossy().replace('\\', "/"))
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).map_err(|e| Error::Io {
        path: p.to_path_buf(),
        source: e,
    })
}

fn rescore(a: &RescoreArgs) -> Result<()> {
    let (ds, images) = open(&a.input)?;
    let rescored = rescore_dataset(
        &images,
        RescoreOptions {
            top_k: a.topk,
            oracle: a.oracle,
        },
    )?;
    let out_dir = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(out_dir).map_err(|e| Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let (from, to) = (absolute(ds.root())?, absolute(out_dir)?);
    let mut kept = 0;
    let mut entries = Vec::with_capacity(rescored.len());
    for (entry, img) in ds.manifest().images.iter().zip(&rescored) {
        let mut e = entry.clone();
        e.gt_semantic = rebase(&entry.gt_semantic, &from, &to)?;
        for g in &mut e.gt_instances {
            g.map = rebase(&g.map, &from, &to)?;
        }
        if let Some(s) = &entry.pred_semantic {
            e.pred_semantic = Some(rebase(s, &from, &to)?);
        }
        e.predictions = img
            .pred_instances()
            .iter()
            .map(|p| {
                let orig = &entry.predictions[p.id() as usize];
                Ok(PredictionEntry {
                    bbox: p.bbox().to_array(),
                    cls_score: p.cls_score(),
                    iou_score: p.iou_score(),
                    parsing_score: p.parsing_score(),
                    map: rebase(&orig.map, &from, &to)?,
                })
            })
            .collect::<Result<_>>()?;
        kept += e.predictions.len();
        entries.push(e);
    }
    let manifest = DatasetManifest {
        categories: ds.categories().clone(),
        images: entries,
    };
    manifest.validate()?;
    write_text(&a.out, &parsing_eval::formats::manifest_to_string(&manifest)?)?;
    eprintln!("rescored {kept} predictions across {} images", rescored.len());
    Ok(())
}

fn combine(a: &CombineArgs) -> Result<()> {
    let (ds, images) = open(&a.input)?;
    let opts = SemanticOptions {
        ignore_background: a.ignore_background,
    };
    let out = combine_dataset(&images, ds.categories().count(), a.score_threshold, opts)?;
    for w in &out.report.warnings {
        eprintln!("warning: {w}");
    }
    let text = out.report.to_text();
    print!("{text}");
    if let Some(dir) = &a.out {
        write_text(&dir.join("report.json"), &out.report.to_json()?)?;
        write_text(&dir.join("report.txt"), &text)?;
        for (i, maps) in out.maps.iter().enumerate() {
            for mode in CombineMode::ALL {
                if let Some(m) = maps.get(mode) {
                    save_label_map(&dir.join(format!("maps/{i:05}_{}.png", mode.tag())), m)?;
                }
            }
        }
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let (_, images) = open(&a.input)?;
    let report = calibration(&images)?;
    let json = to_json(&report)?;
    print!("{json}");
    if let Some(dir) = &a.out {
        write_text(&dir.join("calibration.json"), &json)?;
        write_text(&dir.join("scatter.csv"), &report.to_csv())?;
    }
    Ok(())
}

fn upper_bound(a: &UpperBoundArgs) -> Result<()> {
    let (ds, images) = open(&a.input)?;
    let modes: Vec<ExperimentMode> = match a.mode {
        ModeArg::Baseline => vec![ExperimentMode::Baseline],
        ModeArg::GtBox => vec![ExperimentMode::GtBox],
        ModeArg::GtParsing => vec![ExperimentMode::GtParsing],
        ModeArg::GtScore => vec![ExperimentMode::GtScore],
        ModeArg::All => ExperimentMode::ALL.to_vec(),
    };
    let opts = ExperimentOptions {
        classes: ds.categories().count(),
        score_threshold: a.score_threshold,
        semantic: SemanticOptions {
            ignore_background: a.ignore_background,
        },
    };
    let report = run_experiments(&images, &modes, &opts)?;
    emit(&report.to_text(), a.out.as_deref(), &report.to_json()?)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let params = SynthParams {
        seed: a.seed,
        images: a.images,
        width: a.size,
        height: a.size,
        categories: a.categories,
        miou_range: (a.min_miou, a.max_miou),
        score_noise: match a.cls_sigma {
            Some(sigma) => ScoreNoise::Correlated { sigma },
            None => ScoreNoise::Independent { lo: 0.5, hi: 1.0 },
        },
        iou_noise: a.iou_noise,
        perturbation: match a.perturbation {
            PerturbationArg::Mislabel => Perturbation::Mislabel,
            PerturbationArg::Erode => Perturbation::Erode,
        },
        global: (!a.no_global).then_some(GlobalParams {
            ring: a.ring,
            boundary_shift: a.boundary_shift,
        }),
        ..SynthParams::default()
    };
    let images = synth_dataset(&params)?;
    write_dataset(&images, &params.category_set()?, &a.out)?;
    eprintln!("wrote {} images to {}", images.len(), a.out.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::EvalSemantic(a) => eval_semantic(a),
        Command::EvalInstance(a) => eval_instance(a),
        Command::Rescore(a) => rescore(a),
        Command::Combine(a) => combine(a),
        Command::Calibrate(a) => calibrate(a),
        Command::UpperBound(a) => upper_bound(a),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
