//! The class-incremental data model: images, tasks and the dataset index.
//!
//! On disk a dataset lives in a directory (the "dataset root") holding a
//! single `dataset.json`. External detector backends receive that directory
//! and resolve image ids against it themselves.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ClassId, GroundTruthInstance};

pub const DATASET_FILE: &str = "dataset.json";

/// Class names of the default five-task stream, in task order.
pub const DEFAULT_CLASSES: [&str; 5] = ["vehicle_1", "vehicle_2", "vehicle_3", "drone", "human"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub gt: Vec<GroundTruthInstance>,
    pub source_task: usize,
}

impl ImageRecord {
    pub fn contains_class(&self, class_id: ClassId) -> bool {
        self.gt.iter().any(|g| g.class_id == class_id)
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDataset(format!(
                "image `{}` has zero dimension",
                self.image_id
            )));
        }
        for (k, g) in self.gt.iter().enumerate() {
            if !g.bbox.within(self.width as f64, self.height as f64) {
                return Err(Error::OutOfBounds {
                    image_id: self.image_id.clone(),
                    detail: format!("instance {k} box {:?}", g.bbox.to_array()),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_index: usize,
    pub introduced_class: ClassId,
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub classes: Vec<String>,
    pub tasks: Vec<TaskSpec>,
    pub images: BTreeMap<String, ImageRecord>,
}

#[derive(Serialize, Deserialize)]
struct RawDataset {
    classes: Vec<String>,
    tasks: Vec<TaskSpec>,
    images: Vec<ImageRecord>,
}

impl DatasetIndex {
    pub fn new(classes: Vec<String>, tasks: Vec<TaskSpec>, images: Vec<ImageRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for img in images {
            if let Some(prev) = map.insert(img.image_id.clone(), img) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate image id `{}`",
                    prev.image_id
                )));
            }
        }
        let index = Self {
            classes,
            tasks,
            images: map,
        };
        index.validate()?;
        Ok(index)
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn image(&self, id: &str) -> Result<&ImageRecord> {
        self.images
            .get(id)
            .ok_or_else(|| Error::UnknownImage(id.to_string()))
    }

    /// Union of the train ids of tasks `0..task_index`, sorted.
    pub fn prior_pool(&self, task_index: usize) -> Vec<String> {
        let set: BTreeSet<&String> = self.tasks[..task_index]
            .iter()
            .flat_map(|t| t.train_ids.iter())
            .collect();
        set.into_iter().cloned().collect()
    }

    /// Every test id of every task.
    pub fn all_test_ids(&self) -> BTreeSet<&str> {
        self.tasks
            .iter()
            .flat_map(|t| t.test_ids.iter().map(String::as_str))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::InvalidDataset("no tasks".into()));
        }
        let mut introduced = BTreeSet::new();
        let mut seen_train = BTreeSet::new();
        let all_test = self.all_test_ids();
        for (pos, task) in self.tasks.iter().enumerate() {
            if task.task_index != pos {
                return Err(Error::InvalidDataset(format!(
                    "task at position {pos} has task_index {}",
                    task.task_index
                )));
            }
            if task.introduced_class as usize >= self.classes.len() {
                return Err(Error::InvalidDataset(format!(
                    "task {pos} introduces unknown class {}",
                    task.introduced_class
                )));
            }
            if !introduced.insert(task.introduced_class) {
                return Err(Error::InvalidDataset(format!(
                    "class {} introduced by more than one task",
                    task.introduced_class
                )));
            }
            if task.train_ids.is_empty() {
                return Err(Error::InvalidDataset(format!("task {pos} has no train images")));
            }
            for id in task.train_ids.iter().chain(task.test_ids.iter()) {
                let img = self.image(id).map_err(|_| {
                    Error::InvalidDataset(format!("task {pos} references unknown image `{id}`"))
                })?;
                if img.source_task != pos {
                    return Err(Error::InvalidDataset(format!(
                        "image `{id}` listed in task {pos} but has source_task {}",
                        img.source_task
                    )));
                }
            }
            for id in &task.train_ids {
                if all_test.contains(id.as_str()) {
                    return Err(Error::InvalidDataset(format!(
                        "image `{id}` is in both a train and a test split"
                    )));
                }
                if !seen_train.insert(id.as_str()) {
                    return Err(Error::InvalidDataset(format!(
                        "image `{id}` listed twice as training data"
                    )));
                }
            }
        }
        for img in self.images.values() {
            img.validate()?;
            if let Some(g) = img.gt.iter().find(|g| g.class_id as usize >= self.classes.len()) {
                return Err(Error::InvalidDataset(format!(
                    "image `{}` has unknown class {}",
                    img.image_id, g.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let raw = RawDataset {
            classes: self.classes.clone(),
            tasks: self.tasks.clone(),
            images: self.images.values().cloned().collect(),
        };
        serde_json::to_string(&raw).map_err(|e| Error::json("serializing dataset", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawDataset =
            serde_json::from_str(text).map_err(|e| Error::json("parsing dataset", e))?;
        Self::new(raw.classes, raw.tasks, raw.images)
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = dataset_file(root);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let path = dataset_file(root);
        std::fs::write(&path, self.to_json()?).map_err(|e| Error::io(&path, e))
    }
}

pub fn dataset_file(root: &Path) -> PathBuf {
    root.join(DATASET_FILE)
}
