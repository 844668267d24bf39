use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cldet::annotate::{
    agreement_report, convert_labels, filter_teacher, frames_from_teacher, from_coco, from_yolo_dir,
    read_coco_results, read_teacher_jsonl, AnnotationConfig, CocoDocument, Direction, FrameSet, LabelSet,
};
use cldet::dataset::DatasetIndex;
use cldet::detector::DetectorHandle;
use cldet::metrics::{map_50_95, map_at, InferenceConfig};
use cldet::replay::Strategy;
use cldet::runner::{emit_report, render_table, run_comparison, RunConfig};
use cldet::scenario::{default_scenario, ScenarioConfig};
use cldet::{Error, Result};

#[derive(Parser)]
#[command(name = "cldet", version, about = "Class-incremental detection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a replay experiment; flags override the config file.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// One strategy or a comma-separated list.
        #[arg(long)]
        strategy: Option<String>,
        #[arg(long)]
        budget: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// `sim`, `echo` or `cmd:<command line>`.
        #[arg(long)]
        detector: Option<String>,
        #[arg(long)]
        dataset_root: Option<PathBuf>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Score COCO-format detections against COCO ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        /// Score raw detections without the confidence filter and NMS.
        #[arg(long)]
        raw: bool,
    },
    /// Convert labels between formats.
    Convert {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        from: LabelFormat,
        #[arg(long, value_enum)]
        to: Target,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter teacher predictions and measure agreement with reviewed labels.
    Audit {
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long)]
        reviewed: PathBuf,
        #[arg(long, value_enum)]
        reviewed_format: LabelFormat,
        #[arg(long, default_value_t = 0.75)]
        conf_threshold: f64,
        #[arg(long, default_value_t = 0.5)]
        mask_box_iou: f64,
        /// Also write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the default synthetic task stream as a dataset root.
    Scenario {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum LabelFormat {
    /// A dataset root holding `dataset.json`.
    Dataset,
    /// A COCO annotation JSON file.
    Coco,
    /// A YOLO tree with classes.txt, images.txt and labels/.
    Yolo,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    Yolo,
    Coco,
}

fn load_labels(path: &Path, format: LabelFormat) -> Result<LabelSet> {
    match format {
        LabelFormat::Dataset => Ok(LabelSet::from_dataset(&DatasetIndex::load(path)?)),
        LabelFormat::Coco => from_coco(&read_coco(path)?),
        LabelFormat::Yolo => from_yolo_dir(path),
    }
}

fn read_coco(path: &Path) -> Result<CocoDocument> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    CocoDocument::from_json(&text)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cfg_path: Option<&Path>, over: RunOverrides) -> Result<()> {
    let mut cfg = match cfg_path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let strategies: Vec<Strategy> = match &over.strategy {
        Some(list) => list.split(',').map(|s| s.trim().parse()).collect::<Result<_>>()?,
        None => vec![cfg.strategy.strategy],
    };
    if let Some(b) = over.budget {
        cfg.budgets = vec![b];
    }
    if let Some(s) = over.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = &over.detector {
        cfg.detector = DetectorHandle {
            backend: DetectorHandle::parse_backend(d)?,
            ..cfg.detector.clone()
        };
    }
    if let Some(root) = over.dataset_root {
        cfg.dataset_root = root;
    }
    if let Some(out) = over.output_dir {
        cfg.output_dir = out;
    }
    cfg.validate()?;
    let dataset = Arc::new(DatasetIndex::load(&cfg.dataset_root)?);
    let results = run_comparison(&cfg, &strategies, dataset)?;
    emit_report(&results, &cfg.output_dir)?;
    print!("{}", render_table(&results));
    Ok(())
}

struct RunOverrides {
    strategy: Option<String>,
    budget: Option<f64>,
    seed: Option<u64>,
    detector: Option<String>,
    dataset_root: Option<PathBuf>,
    output_dir: Option<PathBuf>,
}

fn eval(pred: &Path, gt: &Path, raw: bool) -> Result<()> {
    let doc = read_coco(gt)?;
    let labels = from_coco(&doc)?;
    let mut by_image = read_coco_results(&read(pred)?, &doc)?;
    let inference = InferenceConfig::default();
    let mut dets = Vec::new();
    let mut gts = Vec::new();
    for img in &labels.images {
        let d = by_image.remove(&img.image_id).unwrap_or_default();
        dets.push(if raw { d } else { inference.postprocess(&d) });
        gts.push(img.gt.clone());
    }
    let classes: Vec<u32> = (0..labels.classes.len() as u32).collect();
    let per_class: serde_json::Map<String, serde_json::Value> = labels
        .classes
        .iter()
        .zip(&classes)
        .map(|(name, &c)| (name.clone(), json!(map_50_95(&dets, &gts, &[c]))))
        .collect();
    let report = json!({
        "images": labels.images.len(),
        "map50_95": map_50_95(&dets, &gts, &classes),
        "map50": map_at(&dets, &gts, &classes, 0.5),
        "per_class_map50_95": per_class,
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("finite metrics"));
    Ok(())
}

fn audit(
    teacher: &Path,
    reviewed: &Path,
    format: LabelFormat,
    cfg: AnnotationConfig,
    out: Option<&Path>,
) -> Result<()> {
    cfg.validate()?;
    let preds = read_teacher_jsonl(&read(teacher)?)?;
    let labels = load_labels(reviewed, format)?;
    let filtered = filter_teacher(&preds, &cfg);
    let reviewed_frames: FrameSet = labels
        .images
        .iter()
        .map(|i| (i.image_id.clone(), i.gt.clone()))
        .collect();
    let auto = frames_from_teacher(&filtered.accepted, &labels.classes, reviewed_frames.keys().cloned())?;
    let report = agreement_report(&auto, &reviewed_frames)?;
    let body = json!({
        "accepted": filtered.accepted.len(),
        "rejected": filtered.rejected,
        "review": report,
    });
    let text = serde_json::to_string_pretty(&body).expect("finite report");
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    println!("{text}");
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            config,
            strategy,
            budget,
            seed,
            detector,
            dataset_root,
            output_dir,
        } => run(
            config.as_deref(),
            RunOverrides {
                strategy,
                budget,
                seed,
                detector,
                dataset_root,
                output_dir,
            },
        ),
        Command::Eval { pred, gt, raw } => eval(&pred, &gt, raw),
        Command::Convert { input, from, to, out } => {
            let labels = load_labels(&input, from)?;
            let direction = match to {
                Target::Yolo => Direction::ToYolo,
                Target::Coco => Direction::ToCoco,
            };
            for p in convert_labels(&labels, direction, &out)? {
                println!("{}", p.display());
            }
            Ok(())
        }
        Command::Audit {
            teacher,
            reviewed,
            reviewed_format,
            conf_threshold,
            mask_box_iou,
            out,
        } => audit(
            &teacher,
            &reviewed,
            reviewed_format,
            AnnotationConfig {
                conf_threshold,
                mask_box_iou,
            },
            out.as_deref(),
        ),
        Command::Scenario { out, seed } => {
            let ds = default_scenario(&ScenarioConfig {
                seed,
                ..Default::default()
            })?;
            ds.save(&out)?;
            println!("{}", cldet::dataset::dataset_file(&out).display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
