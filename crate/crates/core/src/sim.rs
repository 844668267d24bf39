//! A simulated detector whose per-class skill rises when a class is trained
//! on and decays when it is absent, so that replay composition has a
//! measurable effect on retention.
//!
//! Training applies, per class `c` with exposure `p_c`:
//!
//! ```text
//! skill_c <- clamp(skill_c + eta * p_c * (1 - skill_c) - delta * (1 - p_c) * skill_c, 0, 1)
//! ```
//!
//! Every ground-truth instance has a fixed difficulty in `[0, 1)` drawn from
//! `(seed, image id, instance index)` and is detected exactly when that
//! difficulty is below its class skill. Over seeds an instance is emitted
//! with probability `skill_c`; within a run the same instances stay found
//! or missed until the skill crosses them, so image-level recall is a stable
//! property of the model rather than fresh noise at each call.
//!
//! Exposure counts images per class, weighted by how much each image still
//! has to teach: instances already found count `easy_weight`, missed ones
//! count less the further their difficulty lies past the current skill.
//! [`SimSkillState::literal`] switches all of this off and gives the plain
//! image-fraction rule.
//!
//! Box jitter, confidence noise and false positives are drawn per
//! `(seed, image id, step)` through a counter-based seed mix, so there is
//! no shared RNG state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ImageRecord;
use crate::error::{Error, Result};
use crate::geometry::{BBox, ClassId, Detection};

/// Half-width of the uniform confidence perturbation around a class skill.
pub const CONFIDENCE_NOISE: f64 = 0.05;
/// Lowest confidence the simulator emits.
pub const MIN_CONFIDENCE: f64 = 0.05;
/// Upper bound of false-positive confidences.
pub const FP_CONFIDENCE_MAX: f64 = 0.5;

/// How a training set's composition turns into per-class exposure `p_c`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exposure {
    /// `p_c` is the fraction of training images containing class `c`.
    ImageFraction,
    /// The image fraction relative to a balanced share among the classes
    /// the detector knows: `min(1, fraction * known_classes / saturation)`.
    /// A class that gets at least `saturation` of its balanced share of the
    /// set is fully exercised.
    #[default]
    BalancedShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSkillState {
    pub skill: BTreeMap<ClassId, f64>,
    pub learn_rate: f64,
    pub decay_rate: f64,
    pub jitter_scale: f64,
    pub fp_rate: f64,
    pub seed: u64,
    pub exposure: Exposure,
    /// Share of a balanced share that counts as full exposure; only read
    /// under [`Exposure::BalancedShare`].
    pub saturation: f64,
    /// Weight of an instance the detector already finds, relative to a
    /// missed one, when counting exposure. `1` ignores difficulty.
    pub easy_weight: f64,
    /// How fast the weight of a missed instance falls with its distance
    /// past the current skill; `0` weighs every miss as `1`.
    pub frontier: f64,
}

pub const DEFAULT_EASY_WEIGHT: f64 = 0.5;
pub const DEFAULT_SATURATION: f64 = 0.5;
pub const DEFAULT_FRONTIER: f64 = 0.5;

impl Default for SimSkillState {
    fn default() -> Self {
        Self::new(0)
    }
}

impl SimSkillState {
    pub fn new(seed: u64) -> Self {
        Self {
            skill: BTreeMap::new(),
            learn_rate: 0.5,
            decay_rate: 0.4,
            jitter_scale: 0.05,
            fp_rate: 0.5,
            seed,
            exposure: Exposure::default(),
            saturation: DEFAULT_SATURATION,
            easy_weight: DEFAULT_EASY_WEIGHT,
            frontier: DEFAULT_FRONTIER,
        }
    }

    /// The plain update rule: image-fraction exposure, every image weighted
    /// alike.
    pub fn literal(seed: u64) -> Self {
        Self {
            exposure: Exposure::ImageFraction,
            saturation: 1.0,
            easy_weight: 1.0,
            frontier: 0.0,
            ..Self::new(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("learn_rate", self.learn_rate), ("decay_rate", self.decay_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("{name} = {v} must lie in [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.frontier) {
            return Err(Error::InvalidConfig(format!("frontier = {} must lie in [0, 1]", self.frontier)));
        }
        if !(0.0..=1.0).contains(&self.easy_weight) {
            return Err(Error::InvalidConfig(format!("easy_weight = {} must lie in [0, 1]", self.easy_weight)));
        }
        if !(self.saturation > 0.0 && self.saturation <= 1.0) {
            return Err(Error::InvalidConfig(format!("saturation = {} must lie in (0, 1]", self.saturation)));
        }
        if !(self.jitter_scale >= 0.0 && self.fp_rate >= 0.0) {
            return Err(Error::InvalidConfig("jitter_scale and fp_rate must be non-negative".into()));
        }
        Ok(())
    }

    pub fn skill_of(&self, class_id: ClassId) -> f64 {
        self.skill.get(&class_id).copied().unwrap_or(0.0)
    }

    pub fn mean_skill(&self) -> f64 {
        if self.skill.is_empty() {
            return 0.0;
        }
        self.skill.values().sum::<f64>() / self.skill.len() as f64
    }

    /// One application of the update rule with explicit exposures. Classes
    /// missing from `exposure` are treated as `p_c = 0`.
    pub fn apply(&mut self, exposure: &BTreeMap<ClassId, f64>) {
        for &c in exposure.keys() {
            self.skill.entry(c).or_insert(0.0);
        }
        for (c, s) in self.skill.iter_mut() {
            let p = exposure.get(c).copied().unwrap_or(0.0).clamp(0.0, 1.0);
            let next = *s + self.learn_rate * p * (1.0 - *s) - self.decay_rate * (1.0 - p) * *s;
            *s = next.clamp(0.0, 1.0);
        }
    }

    /// Per-class exposure of a training set under the configured model.
    ///
    /// Each image counts once per class it contains, weighted by the mean
    /// over that class's instances of `easy_weight` for an instance the
    /// detector already finds and `1 - (difficulty - skill)` for a missed
    /// one, so misses just past the current skill teach the most.
    pub fn exposures(&self, train_set: &[&ImageRecord]) -> BTreeMap<ClassId, f64> {
        let mut mass: BTreeMap<ClassId, f64> = BTreeMap::new();
        for img in train_set {
            let mut per_class: BTreeMap<ClassId, (f64, usize)> = BTreeMap::new();
            for (k, g) in img.gt.iter().enumerate() {
                let s = self.skill_of(g.class_id);
                let u = instance_difficulty(self.seed, &img.image_id, k);
                let e = per_class.entry(g.class_id).or_default();
                e.0 += if u < s { self.easy_weight } else { 1.0 - (u - s) * self.frontier };
                e.1 += 1;
            }
            for (c, (w, n)) in per_class {
                *mass.entry(c).or_default() += w / n as f64;
            }
        }
        let n = train_set.len() as f64;
        let known = self
            .skill
            .keys()
            .chain(mass.keys())
            .collect::<std::collections::BTreeSet<_>>()
            .len() as f64;
        mass.into_iter()
            .map(|(c, m)| {
                let fraction = m / n;
                let p = match self.exposure {
                    Exposure::ImageFraction => fraction,
                    Exposure::BalancedShare => (fraction * known / self.saturation).min(1.0),
                };
                (c, p)
            })
            .collect()
    }
}

/// Trains the simulated detector on one set of images.
pub fn sim_train(state: &SimSkillState, train_set: &[&ImageRecord]) -> Result<SimSkillState> {
    if train_set.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let mut next = state.clone();
    let exposure = state.exposures(train_set);
    next.apply(&exposure);
    Ok(next)
}

/// FNV-1a, stable across platforms and releases.
fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based seed for one `(run seed, image, step)` draw.
pub fn draw_seed(seed: u64, image_id: &str, step: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ fnv1a(image_id)) ^ step)
}

fn jittered(gt: &BBox, margin: f64, img: &ImageRecord, rng: &mut ChaCha8Rng) -> BBox {
    if margin <= 0.0 {
        return *gt;
    }
    let mx = margin * gt.width();
    let my = margin * gt.height();
    let mut off = || rng.gen_range(-1.0..=1.0);
    let x0 = (gt.x_min() + off() * mx).max(0.0);
    let y0 = (gt.y_min() + off() * my).max(0.0);
    let x1 = (gt.x_max() + off() * mx).min(img.width as f64);
    let y1 = (gt.y_max() + off() * my).min(img.height as f64);
    BBox::new(x0, y0, x1, y1).unwrap_or(*gt)
}

/// Fixed difficulty in `[0, 1)` of instance `index` of an image.
pub fn instance_difficulty(seed: u64, image_id: &str, index: usize) -> f64 {
    // a step value no training run reaches keeps this stream apart
    let bits = splitmix(draw_seed(seed, image_id, u64::MAX) ^ index as u64);
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

/// Simulated raw detections for one image at training step `step`.
pub fn sim_predict(state: &SimSkillState, image: &ImageRecord, step: u64) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(state.seed, &image.image_id, step));
    let mut out = Vec::new();

    for (k, g) in image.gt.iter().enumerate() {
        let s = state.skill_of(g.class_id);
        if instance_difficulty(state.seed, &image.image_id, k) >= s {
            continue;
        }
        let bbox = jittered(&g.bbox, state.jitter_scale * (1.0 - s), image, &mut rng);
        let conf = (s + rng.gen_range(-CONFIDENCE_NOISE..=CONFIDENCE_NOISE)).clamp(MIN_CONFIDENCE, 1.0);
        if let Ok(d) = Detection::new(bbox, g.class_id, conf) {
            out.push(d);
        }
    }

    let classes: Vec<ClassId> = state.skill.keys().copied().collect();
    if classes.is_empty() {
        return out;
    }
    let expected = state.fp_rate * (1.0 - state.mean_skill());
    let mut n_fp = expected.floor() as usize;
    if rng.gen::<f64>() < expected.fract() {
        n_fp += 1;
    }
    let (w, h) = (image.width as f64, image.height as f64);
    for _ in 0..n_fp {
        let class_id = classes[rng.gen_range(0..classes.len())];
        let bw = rng.gen_range(0.05..0.3) * w;
        let bh = rng.gen_range(0.05..0.3) * h;
        let x0 = rng.gen_range(0.0..(w - bw));
        let y0 = rng.gen_range(0.0..(h - bh));
        let conf = rng.gen_range(MIN_CONFIDENCE..FP_CONFIDENCE_MAX);
        if let Ok(d) = BBox::new(x0, y0, x0 + bw, y0 + bh).and_then(|b| Detection::new(b, class_id, conf)) {
            out.push(d);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::GroundTruthInstance;
    use crate::metrics::image_recall;

    fn image(id: &str, classes: &[ClassId]) -> ImageRecord {
        ImageRecord {
            image_id: id.into(),
            width: 640,
            height: 640,
            gt: classes
                .iter()
                .enumerate()
                .map(|(k, &c)| {
                    let x = 20.0 + 150.0 * k as f64;
                    GroundTruthInstance::new(BBox::new(x, 40.0, x + 100.0, 160.0).unwrap(), c)
                })
                .collect(),
            source_task: 0,
        }
    }

    fn state_with(skills: &[(ClassId, f64)]) -> SimSkillState {
        let mut s = SimSkillState::new(7);
        s.skill = skills.iter().copied().collect();
        s
    }

    #[test]
    fn learning_from_scratch() {
        let imgs = [image("a", &[0]), image("b", &[0])];
        let set: Vec<&ImageRecord> = imgs.iter().collect();
        let s = sim_train(&SimSkillState::new(0), &set).unwrap();
        assert_eq!(s.skill_of(0), 0.5);
    }

    #[test]
    fn pure_forgetting() {
        let imgs = [image("a", &[1])];
        let set: Vec<&ImageRecord> = imgs.iter().collect();
        let s = sim_train(&state_with(&[(0, 1.0)]), &set).unwrap();
        assert!((s.skill_of(0) - 0.6).abs() < 1e-12);
    }

    #[test]
    fn fixed_point() {
        // eta*p*(1-s) = delta*(1-p)*s  =>  s* = eta*p / (eta*p + delta*(1-p))
        let mut st = state_with(&[(0, 0.0)]);
        let p = 0.3;
        let s_star = 0.5 * p / (0.5 * p + 0.4 * (1.0 - p));
        st.skill.insert(0, s_star);
        st.apply(&[(0, p)].into());
        assert!((st.skill_of(0) - s_star).abs() < 1e-15);
    }

    #[test]
    fn literal_fraction_exposure() {
        let mut st = SimSkillState::literal(7);
        st.skill.insert(0, 0.0);
        let imgs = [image("a", &[0]), image("b", &[1]), image("c", &[1]), image("d", &[1])];
        let set: Vec<&ImageRecord> = imgs.iter().collect();
        let e = st.exposures(&set);
        assert_eq!(e[&0], 0.25);
        assert_eq!(e[&1], 0.75);
    }

    #[test]
    fn balanced_share_exposure() {
        let mut st = SimSkillState::literal(7);
        st.exposure = Exposure::BalancedShare;
        st.skill = [(0, 0.5), (1, 0.5), (2, 0.5)].into();
        // 4 known classes after this set; class 0 has 1 of 8 images
        let mut imgs = vec![image("r0", &[0])];
        imgs.extend((0..7).map(|k| image(&format!("n{k}"), &[3])));
        let set: Vec<&ImageRecord> = imgs.iter().collect();
        let e = st.exposures(&set);
        assert_eq!(e[&0], 0.5);
        assert_eq!(e[&3], 1.0);
        assert!(!e.contains_key(&1));
        st.saturation = 0.5;
        assert_eq!(st.exposures(&set)[&0], 1.0);
    }

    #[test]
    fn missed_instances_weigh_more() {
        let st = state_with(&[(0, 0.5)]);
        let imgs: Vec<ImageRecord> = (0..200).map(|k| image(&format!("w{k}"), &[0])).collect();
        let found = |img: &ImageRecord| instance_difficulty(st.seed, &img.image_id, 0) < 0.5;
        let (hit, miss): (Vec<&ImageRecord>, Vec<&ImageRecord>) = imgs.iter().partition(|i| found(i));
        let weight = |img: &ImageRecord| {
            let mut set = vec![img];
            let filler: Vec<ImageRecord> = (0..19).map(|k| image(&format!("x{k}"), &[1])).collect();
            set.extend(filler.iter());
            st.exposures(&set)[&0]
        };
        let w_hit = weight(hit[0]);
        // easy instances count easy_weight; misses count 1 - frontier * (u - s) > easy_weight
        assert!(miss.iter().all(|m| weight(m) > w_hit));
        let near = miss
            .iter()
            .min_by(|a, b| {
                instance_difficulty(st.seed, &a.image_id, 0).total_cmp(&instance_difficulty(st.seed, &b.image_id, 0))
            })
            .unwrap();
        assert!(miss.iter().all(|m| weight(m) <= weight(near)));
    }

    #[test]
    fn training_is_order_independent() {
        let imgs = [image("a", &[0]), image("b", &[1, 1]), image("c", &[0, 1])];
        let fwd: Vec<&ImageRecord> = imgs.iter().collect();
        let rev: Vec<&ImageRecord> = imgs.iter().rev().collect();
        let st = state_with(&[(0, 0.3), (2, 0.9)]);
        assert_eq!(sim_train(&st, &fwd).unwrap(), sim_train(&st, &rev).unwrap());
    }

    #[test]
    fn empty_train_set_rejected() {
        assert!(sim_train(&SimSkillState::new(0), &[]).is_err());
    }

    #[test]
    fn absent_class_decays_and_replay_helps() {
        let new_only: Vec<ImageRecord> = (0..10).map(|k| image(&format!("n{k}"), &[1])).collect();
        let mut with_replay = new_only.clone();
        with_replay.push(image("old", &[0]));
        let st = state_with(&[(0, 0.8), (1, 0.0)]);
        let a = sim_train(&st, &new_only.iter().collect::<Vec<_>>()).unwrap();
        let b = sim_train(&st, &with_replay.iter().collect::<Vec<_>>()).unwrap();
        assert!(a.skill_of(0) < 0.8);
        assert!(b.skill_of(0) > a.skill_of(0));
    }

    #[test]
    fn perfect_and_zero_skill_limits() {
        let img = image("x", &[0, 1]);
        let mut st = state_with(&[(0, 1.0), (1, 1.0)]);
        st.fp_rate = 0.0;
        let d = sim_predict(&st, &img, 3);
        assert_eq!(d.len(), 2);
        for (det, g) in d.iter().zip(&img.gt) {
            assert_eq!(det.bbox, g.bbox);
        }
        assert_eq!(image_recall(&d, &img.gt, 0.5, true), 1.0);

        let mut zero = state_with(&[(0, 0.0), (1, 0.0)]);
        let d = sim_predict(&zero, &img, 3);
        assert!(d.iter().all(|x| x.confidence() < FP_CONFIDENCE_MAX));
        zero.fp_rate = 0.0;
        assert!(sim_predict(&zero, &img, 3).is_empty());
    }

    #[test]
    fn prediction_is_reproducible() {
        let img = image("x", &[0, 1, 0]);
        let st = state_with(&[(0, 0.6), (1, 0.3)]);
        assert_eq!(sim_predict(&st, &img, 5), sim_predict(&st, &img, 5));
        let differs = (0..20).any(|step| sim_predict(&st, &img, step) != sim_predict(&st, &img, 5));
        assert!(differs);
    }

    #[test]
    fn emission_frequency_matches_skill() {
        let img = image("one", &[0]);
        let mut st = state_with(&[(0, 0.5)]);
        st.fp_rate = 0.0;
        let n = 10_000u64;
        let hits = (0..n)
            .filter(|&seed| {
                st.seed = seed;
                !sim_predict(&st, &img, 0).is_empty()
            })
            .count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((hits - 5000.0).abs() <= 3.0 * sigma, "{hits}");
    }

    #[test]
    fn found_instances_stay_found_while_skill_grows() {
        let img = image("m", &[0, 0, 0]);
        let mut prev = 0usize;
        for k in 0..=20 {
            let mut st = state_with(&[(0, k as f64 / 20.0)]);
            st.fp_rate = 0.0;
            let n = sim_predict(&st, &img, k).len();
            assert!(n >= prev);
            prev = n;
        }
        assert_eq!(prev, 3);
    }

    #[test]
    fn recall_monotone_in_skill() {
        let img = image("mono", &[2]);
        let mean_recall = |skill: f64| {
            let mut st = state_with(&[(2, skill)]);
            (0..10_000u64)
                .map(|seed| {
                    st.seed = seed;
                    image_recall(&sim_predict(&st, &img, seed % 7), &img.gt, 0.5, true)
                })
                .sum::<f64>()
                / 10_000.0
        };
        let levels = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let recalls: Vec<f64> = levels.iter().map(|&s| mean_recall(s)).collect();
        for w in recalls.windows(2) {
            assert!(w[1] >= w[0], "{recalls:?}");
        }
    }
}
