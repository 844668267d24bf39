//! Class-incremental experiment orchestration.
//!
//! One seed runs the task stream in order: assemble the training set from
//! the current task plus the strategy's replay selection, train, then score
//! every task seen so far. Seeds are aggregated into mean and sample
//! standard deviation of ACC and BWT.

mod config;
mod report;

pub use config::{EvalMode, FarBaseline, RunConfig};
pub use report::{emit_report, render_table, results_json, summary_csv, CSV_HEADER};

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetIndex;
use crate::detector::{Detector, DetectorHandle};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, Detection, GroundTruthInstance};
use crate::metrics::{acc, bwt, image_recall, map_50_95, EvalMatrix, InferenceConfig};
use crate::replay::{
    er_select, far_cache_baseline, far_select, mir_select, resolve_budget, RecallCache, ScoreMap, Strategy,
    StrategyConfig,
};
use crate::sim::draw_seed;

/// What one increment trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementLog {
    pub task: usize,
    pub current: usize,
    pub replayed: Vec<String>,
}

/// Mutable state of one seed's pass over the task stream.
pub struct SeedRun {
    dataset: Arc<DatasetIndex>,
    detector: Box<dyn Detector>,
    strategy: StrategyConfig,
    budget: Option<f64>,
    inference: InferenceConfig,
    eval_mode: EvalMode,
    far_baseline: FarBaseline,
    seed: u64,
    far_enabled: bool,
    caches: Vec<RecallCache>,
    /// Raw predictions of the current model, cleared after every training call.
    memo: HashMap<String, Vec<Detection>>,
    pub matrix: EvalMatrix,
    pub log: Vec<IncrementLog>,
    pub warnings: Vec<String>,
}

impl SeedRun {
    pub fn new(
        dataset: Arc<DatasetIndex>,
        detector: Box<dyn Detector>,
        cfg: &RunConfig,
        budget: Option<f64>,
        seed: u64,
    ) -> Self {
        let tasks = dataset.num_tasks();
        Self {
            dataset,
            detector,
            strategy: cfg.strategy,
            budget,
            inference: cfg.inference,
            eval_mode: cfg.eval_mode,
            far_baseline: cfg.far_baseline,
            seed,
            far_enabled: cfg.strategy.strategy == Strategy::Far,
            caches: Vec::new(),
            memo: HashMap::new(),
            matrix: EvalMatrix::new(tasks),
            log: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn completed_tasks(&self) -> usize {
        self.matrix.completed_rows()
    }

    fn predictions(&mut self, image_id: &str) -> Result<&[Detection]> {
        if !self.memo.contains_key(image_id) {
            let raw = self.detector.predict(image_id)?;
            let kept = self.inference.postprocess(&raw);
            self.memo.insert(image_id.to_string(), kept);
        }
        Ok(&self.memo[image_id])
    }

    /// Image-level recall of the current model for each id.
    fn recall_map(&mut self, ids: &[String]) -> Result<ScoreMap> {
        let mut out = ScoreMap::with_capacity(ids.len());
        let (thr, aware) = (self.inference.match_iou, self.inference.class_aware);
        for id in ids {
            let gts = self.dataset.image(id)?.gt.clone();
            let dets = self.predictions(id)?;
            out.insert(id.clone(), image_recall(dets, &gts, thr, aware));
        }
        Ok(out)
    }

    fn replay_count(&self, prior: &[String]) -> Result<usize> {
        match self.budget {
            Some(f) => resolve_budget(f, prior),
            None => Ok(0),
        }
    }

    fn select_replay(&mut self, task: usize) -> Result<Vec<String>> {
        let prior = self.dataset.prior_pool(task);
        if prior.is_empty() {
            return Ok(Vec::new());
        }
        let strategy = match self.strategy.strategy {
            Strategy::Far if !self.far_enabled => Strategy::Er,
            s => s,
        };
        match strategy {
            Strategy::Naive => Ok(Vec::new()),
            Strategy::Joint => Ok(prior),
            Strategy::Er => {
                let count = self.replay_count(&prior)?;
                Ok(er_select(&prior, count, draw_seed(self.seed, "er", task as u64)))
            }
            Strategy::Mir => {
                let count = self.replay_count(&prior)?;
                let capped = crate::replay::capped_pool(&prior, self.strategy.pool_cap);
                let recall = self.recall_map(&capped)?;
                mir_select(&capped, &recall, &self.strategy.limited_to(count))
            }
            Strategy::Far => {
                let count = self.replay_count(&prior)?;
                let cache = match self.far_baseline {
                    FarBaseline::FirstSeen => RecallCache::first_seen(&self.caches),
                    FarBaseline::Latest => self.caches.last().cloned(),
                };
                let Some(mut cache) = cache else {
                    return Ok(Vec::new());
                };
                let capped: BTreeSet<String> =
                    crate::replay::capped_pool(&prior, self.strategy.pool_cap).into_iter().collect();
                cache.entries.retain(|id, _| capped.contains(id));
                let ids: Vec<String> = cache.entries.keys().cloned().collect();
                let current = self.recall_map(&ids)?;
                far_select(&cache, &current, &self.strategy.limited_to(count))
            }
        }
    }

    /// Baseline recalls after finishing `task`, for forgetting-aware replay.
    fn cache_checkpoint(&mut self, task: usize) -> Result<()> {
        let ack = self.detector.snapshot(&format!("task-{task}"))?;
        if ack.unsupported {
            let msg = format!("backend cannot snapshot; forgetting-aware replay disabled from task {task}");
            warn!("{msg}");
            self.warnings.push(msg);
            self.far_enabled = false;
            return Ok(());
        }
        let ids = match self.far_baseline {
            FarBaseline::FirstSeen => self.dataset.tasks[task].train_ids.clone(),
            FarBaseline::Latest => self.dataset.prior_pool(task + 1),
        };
        let recall = self.recall_map(&ids)?;
        let cache = far_cache_baseline(&ids, &recall, task, &self.strategy)?;
        self.caches.push(cache);
        Ok(())
    }

    fn score_row(&mut self, task: usize) -> Result<Vec<Option<f64>>> {
        let tasks = self.dataset.tasks[..=task].to_vec();
        let mut row = Vec::with_capacity(task + 1);
        let mut pooled: Option<(Vec<Vec<Detection>>, Vec<Vec<GroundTruthInstance>>)> = None;
        if self.eval_mode == EvalMode::Cumulative {
            let ids: Vec<String> = tasks.iter().flat_map(|t| t.test_ids.iter().cloned()).collect();
            pooled = Some(self.gather(&ids)?);
        }
        for t in &tasks {
            let classes: [ClassId; 1] = [t.introduced_class];
            let score = match &pooled {
                Some((d, g)) => map_50_95(d, g, &classes),
                None => {
                    let (d, g) = self.gather(&t.test_ids)?;
                    map_50_95(&d, &g, &classes)
                }
            };
            row.push(score);
        }
        Ok(row)
    }

    fn gather(&mut self, ids: &[String]) -> Result<(Vec<Vec<Detection>>, Vec<Vec<GroundTruthInstance>>)> {
        let mut dets = Vec::with_capacity(ids.len());
        let mut gts = Vec::with_capacity(ids.len());
        for id in ids {
            gts.push(self.dataset.image(id)?.gt.clone());
            dets.push(self.predictions(id)?.to_vec());
        }
        Ok((dets, gts))
    }
}

/// Trains task `task_index` and appends its evaluation row.
///
/// The training set is the task's own train ids followed by the replay
/// selection (empty for naive, every earlier train id for joint).
pub fn run_increment(run: &mut SeedRun, task_index: usize) -> Result<Vec<Option<f64>>> {
    if run.completed_tasks() != task_index {
        return Err(Error::InvalidConfig(format!(
            "task {task_index} requested after {} completed tasks",
            run.completed_tasks()
        )));
    }
    let replayed = run.select_replay(task_index)?;
    let current = run.dataset.tasks[task_index].train_ids.clone();
    let mut train_set = current.clone();
    train_set.extend(replayed.iter().cloned());

    run.detector.train_task(task_index, &train_set)?;
    run.memo.clear();
    run.log.push(IncrementLog {
        task: task_index,
        current: current.len(),
        replayed,
    });

    if run.far_enabled {
        run.cache_checkpoint(task_index)?;
    }
    let row = run.score_row(task_index)?;
    run.matrix.push_row(row.clone())?;
    Ok(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub completed: bool,
    pub matrix: EvalMatrix,
    pub acc: Option<f64>,
    pub bwt: Option<f64>,
    pub increments: Vec<IncrementLog>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

/// Results of one strategy at one budget over all seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub strategy: Strategy,
    /// `None` for strategies that do not use a replay budget.
    pub budget: Option<f64>,
    pub configured_seeds: usize,
    pub completed_seeds: usize,
    pub acc_mean: Option<f64>,
    pub acc_std: Option<f64>,
    pub bwt_mean: Option<f64>,
    pub bwt_std: Option<f64>,
    pub seeds: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: RunConfig,
    pub groups: Vec<GroupResult>,
}

/// Mean and sample standard deviation (n - 1); std is `None` below two values.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}

fn run_seed(
    dataset: &Arc<DatasetIndex>,
    cfg: &RunConfig,
    budget: Option<f64>,
    seed: u64,
) -> SeedResult {
    let mut result = SeedResult {
        seed,
        completed: false,
        matrix: EvalMatrix::new(dataset.num_tasks()),
        acc: None,
        bwt: None,
        increments: Vec::new(),
        warnings: Vec::new(),
        error: None,
    };
    let detector = match cfg.detector.open(dataset.clone(), &cfg.dataset_root, seed) {
        Ok(d) => d,
        Err(e) => {
            result.error = Some(e.to_string());
            return result;
        }
    };
    let mut run = SeedRun::new(dataset.clone(), detector, cfg, budget, seed);
    let mut failure = None;
    for task in 0..dataset.num_tasks() {
        if let Err(e) = run_increment(&mut run, task) {
            failure = Some(format!("task {task}: {e}"));
            break;
        }
    }
    if let Err(e) = run.detector.shutdown() {
        if failure.is_none() {
            run.warnings.push(format!("shutdown: {e}"));
        }
    }
    result.completed = failure.is_none();
    result.error = failure;
    result.acc = acc(&run.matrix).ok();
    result.bwt = bwt(&run.matrix).ok();
    result.matrix = run.matrix;
    result.increments = run.log;
    result.warnings = run.warnings;
    result
}

fn aggregate(strategy: Strategy, budget: Option<f64>, seeds: Vec<SeedResult>) -> GroupResult {
    let done: Vec<&SeedResult> = seeds.iter().filter(|s| s.completed).collect();
    if done.len() < seeds.len() {
        warn!(
            "{strategy} budget {budget:?}: {} of {} seeds completed",
            done.len(),
            seeds.len()
        );
    }
    let accs: Vec<f64> = done.iter().filter_map(|s| s.acc).collect();
    let bwts: Vec<f64> = done.iter().filter_map(|s| s.bwt).collect();
    let (acc_mean, acc_std) = mean_std(&accs);
    let (bwt_mean, bwt_std) = mean_std(&bwts);
    GroupResult {
        strategy,
        budget,
        configured_seeds: seeds.len(),
        completed_seeds: done.len(),
        acc_mean,
        acc_std,
        bwt_mean,
        bwt_std,
        seeds,
    }
}

/// Runs the configured strategy over every budget and seed against an
/// already loaded dataset.
pub fn run_on(cfg: &RunConfig, dataset: Arc<DatasetIndex>) -> Result<RunResult> {
    cfg.validate()?;
    let strategy = cfg.strategy.strategy;
    let budgets: Vec<Option<f64>> = if strategy.uses_budget() {
        cfg.budgets.iter().map(|&b| Some(b)).collect()
    } else {
        vec![None]
    };
    let mut groups = Vec::new();
    for budget in budgets {
        let seeds: Vec<SeedResult> = cfg
            .seeds
            .iter()
            .map(|&seed| {
                info!("{strategy} budget {budget:?} seed {seed}");
                run_seed(&dataset, cfg, budget, seed)
            })
            .collect();
        groups.push(aggregate(strategy, budget, seeds));
    }
    Ok(RunResult {
        config: cfg.clone(),
        groups,
    })
}

/// Loads the dataset from `cfg.dataset_root`, runs every budget and seed,
/// and writes the report into `cfg.output_dir`.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let dataset = Arc::new(DatasetIndex::load(&cfg.dataset_root)?);
    let result = run_on(cfg, dataset)?;
    emit_report(std::slice::from_ref(&result), &cfg.output_dir)?;
    Ok(result)
}

/// Runs several strategies with otherwise identical settings.
pub fn run_comparison(cfg: &RunConfig, strategies: &[Strategy], dataset: Arc<DatasetIndex>) -> Result<Vec<RunResult>> {
    strategies
        .iter()
        .map(|&s| {
            let mut c = cfg.clone();
            c.strategy.strategy = s;
            run_on(&c, dataset.clone())
        })
        .collect()
}

/// Convenience used by the CLI: a handle override applied to a config.
pub fn with_detector(cfg: &RunConfig, handle: DetectorHandle) -> RunConfig {
    RunConfig {
        detector: handle,
        ..cfg.clone()
    }
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}
