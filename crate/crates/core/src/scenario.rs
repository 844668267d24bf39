//! Synthetic task streams for the simulated detector.
//!
//! The default stream mirrors the five-task ordering vehicle, vehicle,
//! vehicle, drone, human, with one class per task and a fixed number of
//! train and test frames per task. Image ids are opaque content-hash style
//! strings, so sorting by id interleaves tasks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetIndex, ImageRecord, TaskSpec, DEFAULT_CLASSES};
use crate::error::{Error, Result};
use crate::geometry::{BBox, ClassId, GroundTruthInstance};
use crate::sim::draw_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub classes: Vec<String>,
    pub train_per_task: usize,
    pub test_per_task: usize,
    pub width: u32,
    pub height: u32,
    /// Instances per image are drawn uniformly from `1..=max_instances`.
    pub max_instances: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            classes: DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect(),
            train_per_task: 40,
            test_per_task: 10,
            width: 640,
            height: 640,
            max_instances: 3,
            seed: 0,
        }
    }
}

fn frame(task: usize, class: ClassId, id: String, cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> ImageRecord {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let n = rng.gen_range(1..=cfg.max_instances);
    // one instance per vertical strip keeps instances apart
    let strip = w / n as f64;
    let gt = (0..n)
        .map(|k| {
            let bw = rng.gen_range(0.35..0.85) * strip;
            let bh = rng.gen_range(0.1..0.35) * h;
            let x0 = k as f64 * strip + rng.gen_range(0.0..(strip - bw));
            let y0 = rng.gen_range(0.0..(h - bh));
            GroundTruthInstance::new(BBox::new(x0, y0, x0 + bw, y0 + bh).expect("positive extent"), class)
        })
        .collect();
    ImageRecord {
        image_id: id,
        width: cfg.width,
        height: cfg.height,
        gt,
        source_task: task,
    }
}

/// Builds the class-incremental stream described by `cfg`.
pub fn default_scenario(cfg: &ScenarioConfig) -> Result<DatasetIndex> {
    if cfg.classes.is_empty() || cfg.train_per_task == 0 || cfg.max_instances == 0 {
        return Err(Error::InvalidConfig(
            "scenario needs classes, training frames and instances".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut tasks = Vec::new();
    let mut images = Vec::new();
    for (task, _) in cfg.classes.iter().enumerate() {
        let class = task as ClassId;
        let mut split = |name: &str, count: usize| -> Vec<String> {
            (0..count)
                .map(|k| {
                    let key = format!("{task}/{name}/{k}");
                    let id = format!("f{:012x}", draw_seed(cfg.seed, &key, 0) >> 16);
                    images.push(frame(task, class, id.clone(), cfg, &mut rng));
                    id
                })
                .collect()
        };
        let train_ids = split("train", cfg.train_per_task);
        let test_ids = split("test", cfg.test_per_task);
        tasks.push(TaskSpec {
            task_index: task,
            introduced_class: class,
            train_ids,
            test_ids,
        });
    }
    DatasetIndex::new(cfg.classes.clone(), tasks, images)
}
