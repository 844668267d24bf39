//! The detector contract and its backends.
//!
//! The harness only ever talks to a [`Detector`]: train on a list of image
//! ids, predict raw detections for one image, and take a named snapshot.
//! Confidence filtering and NMS happen on the harness side so every backend
//! is post-processed identically.

mod external;
pub mod protocol;

pub use external::ExternalDetector;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetIndex, ImageRecord};
use crate::error::{Error, Result};
use crate::geometry::Detection;
use crate::sim::{sim_predict, sim_train, Exposure, SimSkillState};

/// Environment variable carrying the run seed to external backends.
pub const SEED_ENV: &str = "CLDET_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SnapshotAck {
    /// A snapshot with the same tag was replaced.
    pub overwritten: bool,
    /// The backend cannot keep snapshots.
    pub unsupported: bool,
}

pub trait Detector: Send {
    fn train_task(&mut self, task: usize, image_ids: &[String]) -> Result<()>;
    fn predict(&mut self, image_id: &str) -> Result<Vec<Detection>>;
    fn snapshot(&mut self, tag: &str) -> Result<SnapshotAck>;
    fn shutdown(&mut self) -> Result<()>;
}

/// Parameters of the in-process simulated backend.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub learn_rate: f64,
    pub decay_rate: f64,
    pub jitter_scale: f64,
    pub fp_rate: f64,
    pub exposure: Exposure,
    pub saturation: f64,
    pub easy_weight: f64,
    pub frontier: f64,
    /// Update-rule applications per `train_task` call.
    pub epochs: u32,
}

impl Default for SimParams {
    fn default() -> Self {
        let s = SimSkillState::default();
        Self {
            learn_rate: s.learn_rate,
            decay_rate: s.decay_rate,
            jitter_scale: s.jitter_scale,
            fp_rate: s.fp_rate,
            exposure: s.exposure,
            saturation: s.saturation,
            easy_weight: s.easy_weight,
            frontier: s.frontier,
            epochs: 1,
        }
    }
}

impl SimParams {
    pub fn initial_state(&self, seed: u64) -> SimSkillState {
        SimSkillState {
            skill: BTreeMap::new(),
            learn_rate: self.learn_rate,
            decay_rate: self.decay_rate,
            jitter_scale: self.jitter_scale,
            fp_rate: self.fp_rate,
            seed,
            exposure: self.exposure,
            saturation: self.saturation,
            easy_weight: self.easy_weight,
            frontier: self.frontier,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("sim epochs must be positive".into()));
        }
        self.initial_state(0).validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    /// Command line, split with POSIX shell quoting rules.
    pub command: String,
    #[serde(default)]
    pub working_dir: Option<PathBuf>,
    #[serde(default)]
    pub env: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// In-process simulated detector.
    Sim,
    /// In-process perfect detector that returns ground truth.
    Echo,
    External(ExternalSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorHandle {
    pub backend: Backend,
    pub timeout_s: f64,
    pub sim: SimParams,
}

impl Default for DetectorHandle {
    fn default() -> Self {
        Self {
            backend: Backend::Sim,
            timeout_s: 600.0,
            sim: SimParams::default(),
        }
    }
}

impl DetectorHandle {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0 && self.timeout_s.is_finite()) {
            return Err(Error::InvalidConfig("timeout_s must be positive".into()));
        }
        if let Backend::External(spec) = &self.backend {
            if shlex::split(&spec.command).map_or(true, |v| v.is_empty()) {
                return Err(Error::InvalidConfig(format!(
                    "cannot parse detector command {:?}",
                    spec.command
                )));
            }
        }
        self.sim.validate()
    }

    /// Parses the CLI shorthand `sim`, `echo` or `cmd:<command line>`.
    pub fn parse_backend(text: &str) -> Result<Backend> {
        match text {
            "sim" => Ok(Backend::Sim),
            "echo" => Ok(Backend::Echo),
            _ => match text.strip_prefix("cmd:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(Backend::External(ExternalSpec {
                    command: cmd.trim().to_string(),
                    working_dir: None,
                    env: BTreeMap::new(),
                })),
                _ => Err(Error::InvalidConfig(format!("unknown detector `{text}`"))),
            },
        }
    }

    /// Starts a fresh detector for one seed.
    pub fn open(&self, dataset: Arc<DatasetIndex>, dataset_root: &Path, seed: u64) -> Result<Box<dyn Detector>> {
        self.validate()?;
        Ok(match &self.backend {
            Backend::Sim => Box::new(SimDetector::new(dataset, self.sim, seed)),
            Backend::Echo => Box::new(EchoDetector::new(dataset)),
            Backend::External(spec) => Box::new(ExternalDetector::spawn(
                spec,
                dataset_root,
                &dataset.classes,
                seed,
                std::time::Duration::from_secs_f64(self.timeout_s),
            )?),
        })
    }
}

/// Perfect detector: returns each image's ground truth with confidence 0.99.
pub struct EchoDetector {
    dataset: Arc<DatasetIndex>,
    snapshots: HashMap<String, ()>,
}

pub const ECHO_CONFIDENCE: f64 = 0.99;

impl EchoDetector {
    pub fn new(dataset: Arc<DatasetIndex>) -> Self {
        Self {
            dataset,
            snapshots: HashMap::new(),
        }
    }
}

/// Ground truth of an image rendered as detections.
pub fn echo_detections(img: &ImageRecord) -> Vec<Detection> {
    img.gt
        .iter()
        .map(|g| Detection::new(g.bbox, g.class_id, ECHO_CONFIDENCE).expect("constant confidence"))
        .collect()
}

impl Detector for EchoDetector {
    fn train_task(&mut self, _task: usize, image_ids: &[String]) -> Result<()> {
        for id in image_ids {
            self.dataset.image(id)?;
        }
        Ok(())
    }

    fn predict(&mut self, image_id: &str) -> Result<Vec<Detection>> {
        Ok(echo_detections(self.dataset.image(image_id)?))
    }

    fn snapshot(&mut self, tag: &str) -> Result<SnapshotAck> {
        Ok(SnapshotAck {
            overwritten: self.snapshots.insert(tag.to_string(), ()).is_some(),
            unsupported: false,
        })
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}

/// The simulated detector bound to a dataset.
pub struct SimDetector {
    dataset: Arc<DatasetIndex>,
    state: SimSkillState,
    epochs: u32,
    step: u64,
    snapshots: BTreeMap<String, SimSkillState>,
}

impl SimDetector {
    pub fn new(dataset: Arc<DatasetIndex>, params: SimParams, seed: u64) -> Self {
        Self {
            dataset,
            state: params.initial_state(seed),
            epochs: params.epochs,
            step: 0,
            snapshots: BTreeMap::new(),
        }
    }

    pub fn state(&self) -> &SimSkillState {
        &self.state
    }

    pub fn snapshot_state(&self, tag: &str) -> Option<&SimSkillState> {
        self.snapshots.get(tag)
    }
}

impl Detector for SimDetector {
    fn train_task(&mut self, _task: usize, image_ids: &[String]) -> Result<()> {
        let images = image_ids
            .iter()
            .map(|id| self.dataset.image(id))
            .collect::<Result<Vec<_>>>()?;
        for _ in 0..self.epochs {
            self.state = sim_train(&self.state, &images)?;
        }
        self.step += 1;
        Ok(())
    }

    fn predict(&mut self, image_id: &str) -> Result<Vec<Detection>> {
        let img = self.dataset.image(image_id)?;
        Ok(sim_predict(&self.state, img, self.step))
    }

    fn snapshot(&mut self, tag: &str) -> Result<SnapshotAck> {
        let overwritten = self.snapshots.insert(tag.to_string(), self.state.clone()).is_some();
        Ok(SnapshotAck {
            overwritten,
            unsupported: false,
        })
    }

    fn shutdown(&mut self) -> Result<()> {
        Ok(())
    }
}
