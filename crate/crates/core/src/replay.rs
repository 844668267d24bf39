//! Replay budgets and the replay selection strategies.
//!
//! All selections come back sorted by image id, and every ranking breaks
//! ties by ascending image id, so the result never depends on the order in
//! which a caller assembled its pool or score map.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-image recall@0.5 keyed by image id.
pub type ScoreMap = HashMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Er,
    Mir,
    Far,
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Naive,
        Strategy::Er,
        Strategy::Mir,
        Strategy::Far,
        Strategy::Joint,
    ];

    /// Whether the strategy draws a budgeted replay subset.
    pub fn uses_budget(self) -> bool {
        matches!(self, Strategy::Er | Strategy::Mir | Strategy::Far)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Er => "er",
            Strategy::Mir => "mir",
            Strategy::Far => "far",
            Strategy::Joint => "joint",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    /// Candidate pool cap, applied in canonical (sorted id) order.
    pub pool_cap: usize,
    /// Maximum number of images a scored strategy replays.
    pub k_select: usize,
    pub strategy: Strategy,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            pool_cap: 800,
            k_select: 200,
            strategy: Strategy::Far,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pool_cap == 0 || self.k_select == 0 {
            return Err(Error::InvalidConfig("pool_cap and k_select must be positive".into()));
        }
        if self.k_select > self.pool_cap {
            return Err(Error::InvalidConfig(format!(
                "k_select {} exceeds pool_cap {}",
                self.k_select, self.pool_cap
            )));
        }
        Ok(())
    }

    /// The same config with `k_select` lowered to `count` when smaller.
    pub fn limited_to(&self, count: usize) -> Self {
        Self {
            k_select: self.k_select.min(count),
            ..*self
        }
    }
}

/// A replay fraction resolved against a concrete prior pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplayBudget {
    pub fraction: f64,
    pub resolved_count: usize,
}

impl ReplayBudget {
    pub fn new(fraction: f64, prior_pool_len: usize) -> Result<Self> {
        validate_fraction(fraction)?;
        Ok(Self {
            fraction,
            resolved_count: resolve_count(fraction, prior_pool_len),
        })
    }
}

pub fn validate_fraction(fraction: f64) -> Result<()> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "replay fraction {fraction} must lie in (0, 1]"
        )));
    }
    Ok(())
}

fn resolve_count(fraction: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    // f64::round is half-away-from-zero, i.e. half up for positive values.
    ((fraction * n as f64).round() as usize).clamp(1, n)
}

/// Number of prior images a budget fraction admits: rounded half up, at
/// least one for a non-empty pool, zero for an empty one.
pub fn resolve_budget(fraction: f64, prior_pool: &[String]) -> Result<usize> {
    validate_fraction(fraction)?;
    Ok(resolve_count(fraction, canonical(prior_pool).len()))
}

/// Sorted, de-duplicated copy of a pool.
pub fn canonical(pool: &[String]) -> Vec<String> {
    let set: BTreeSet<&String> = pool.iter().collect();
    set.into_iter().cloned().collect()
}

/// The first `cap` ids of the pool in canonical order.
pub fn capped_pool(pool: &[String], cap: usize) -> Vec<String> {
    let mut c = canonical(pool);
    c.truncate(cap);
    c
}

/// Experience replay: a seeded uniform sample without replacement.
///
/// `count` larger than the pool is clamped to the pool size.
pub fn er_select(prior_pool: &[String], count: usize, seed: u64) -> Vec<String> {
    let pool = canonical(prior_pool);
    let count = count.min(pool.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<String> = index::sample(&mut rng, pool.len(), count)
        .into_iter()
        .map(|i| pool[i].clone())
        .collect();
    picked.sort();
    picked
}

fn lookup(scores: &ScoreMap, id: &str) -> Result<f64> {
    scores
        .get(id)
        .copied()
        .ok_or_else(|| Error::MissingScore(id.to_string()))
}

/// Proxy for maximally interfered retrieval: the `k_select` images of the
/// capped pool with the lowest current recall.
pub fn mir_select(prior_pool: &[String], recall_of: &ScoreMap, cfg: &StrategyConfig) -> Result<Vec<String>> {
    let pool = capped_pool(prior_pool, cfg.pool_cap);
    let mut scored = Vec::with_capacity(pool.len());
    for id in pool {
        let r = lookup(recall_of, &id)?;
        scored.push((r, id));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    scored.truncate(cfg.k_select);
    let mut out: Vec<String> = scored.into_iter().map(|(_, id)| id).collect();
    out.sort();
    Ok(out)
}

/// Baseline recalls captured at a checkpoint, for forgetting-aware replay.
///
/// Persisted as `{"checkpoint_task": n, "entries": {"<image_id>": recall}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCache {
    pub checkpoint_task: usize,
    pub entries: BTreeMap<String, f64>,
}

impl RecallCache {
    /// Combines per-checkpoint caches so that each image keeps the baseline
    /// from the earliest checkpoint that recorded it.
    pub fn first_seen(caches: &[RecallCache]) -> Option<RecallCache> {
        let last = caches.last()?;
        let mut entries = BTreeMap::new();
        for c in caches {
            for (id, &r) in &c.entries {
                entries.entry(id.clone()).or_insert(r);
            }
        }
        Some(RecallCache {
            checkpoint_task: last.checkpoint_task,
            entries,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::json("serializing recall cache", e))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: RecallCache =
            serde_json::from_str(text).map_err(|e| Error::json("parsing recall cache", e))?;
        if let Some((id, r)) = c.entries.iter().find(|(_, r)| !(0.0..=1.0).contains(*r)) {
            return Err(Error::Parse(format!("recall {r} for `{id}` outside [0, 1]")));
        }
        Ok(c)
    }
}

/// Records baseline recalls for the capped pool at `checkpoint_task`.
pub fn far_cache_baseline(
    prior_pool: &[String],
    recall_of: &ScoreMap,
    checkpoint_task: usize,
    cfg: &StrategyConfig,
) -> Result<RecallCache> {
    let mut entries = BTreeMap::new();
    for id in capped_pool(prior_pool, cfg.pool_cap) {
        let r = lookup(recall_of, &id)?;
        entries.insert(id, r);
    }
    Ok(RecallCache {
        checkpoint_task,
        entries,
    })
}

/// Clamped recall drop `max(0, baseline - current)` for every cached image.
pub fn far_scores(cache: &RecallCache, current_recall_of: &ScoreMap) -> Result<BTreeMap<String, f64>> {
    cache
        .entries
        .iter()
        .map(|(id, &base)| {
            let cur = lookup(current_recall_of, id)?;
            Ok((id.clone(), f64::max(0.0, base - cur)))
        })
        .collect()
}

/// Forgetting-aware replay: the `k_select` cached images whose recall
/// dropped the most since the baseline checkpoint.
pub fn far_select(cache: &RecallCache, current_recall_of: &ScoreMap, cfg: &StrategyConfig) -> Result<Vec<String>> {
    let scores = far_scores(cache, current_recall_of)?;
    let mut ranked: Vec<(f64, &String)> = scores.iter().map(|(id, &s)| (s, id)).collect();
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    ranked.truncate(cfg.k_select);
    let mut out: Vec<String> = ranked.into_iter().map(|(_, id)| id.clone()).collect();
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    fn scores(v: &[(&str, f64)]) -> ScoreMap {
        v.iter().map(|(k, s)| (k.to_string(), *s)).collect()
    }

    fn numbered(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("img{i:05}")).collect()
    }

    fn cfg(k: usize) -> StrategyConfig {
        StrategyConfig {
            k_select: k,
            ..Default::default()
        }
    }

    #[test]
    fn budget_rounding() {
        assert_eq!(resolve_budget(0.05, &numbered(400)).unwrap(), 20);
        assert_eq!(resolve_budget(0.5, &numbered(3)).unwrap(), 2);
        assert_eq!(resolve_budget(0.05, &numbered(3)).unwrap(), 1);
        assert_eq!(resolve_budget(0.25, &[]).unwrap(), 0);
        assert_eq!(resolve_budget(1.0, &numbered(7)).unwrap(), 7);
        assert!(resolve_budget(0.0, &numbered(3)).is_err());
        assert!(resolve_budget(1.5, &numbered(3)).is_err());
        assert_eq!(ReplayBudget::new(0.25, 400).unwrap().resolved_count, 100);
    }

    #[test]
    fn er_exhaustive_and_deterministic() {
        let pool = numbered(10);
        assert_eq!(er_select(&pool, 10, 3), pool);
        assert_eq!(er_select(&pool, 25, 3), pool);
        assert_eq!(er_select(&pool, 4, 99), er_select(&pool, 4, 99));
        assert!(er_select(&[], 4, 1).is_empty());
    }

    #[test]
    fn mir_picks_lowest() {
        let pool = ids(&["a", "b", "c", "d", "e"]);
        let r = scores(&[("a", 1.0), ("b", 0.2), ("c", 0.5), ("d", 0.0), ("e", 0.9)]);
        assert_eq!(mir_select(&pool, &r, &cfg(2)).unwrap(), ids(&["b", "d"]));
        let flat = scores(&[("a", 0.5), ("b", 0.5), ("c", 0.5), ("d", 0.5), ("e", 0.5)]);
        assert_eq!(mir_select(&pool, &flat, &cfg(2)).unwrap(), ids(&["a", "b"]));
        assert_eq!(mir_select(&pool, &flat, &cfg(50)).unwrap().len(), 5);
    }

    #[test]
    fn mir_respects_pool_cap() {
        let pool = numbered(1000);
        // only the first 800 need scores
        let r: ScoreMap = pool[..800].iter().map(|id| (id.clone(), 1.0)).collect();
        let out = mir_select(&pool, &r, &StrategyConfig::default()).unwrap();
        assert_eq!(out.len(), 200);
        assert!(out.iter().all(|id| id.as_str() < "img00800"));
    }

    #[test]
    fn mir_missing_score_is_error() {
        let pool = ids(&["a", "b"]);
        let r = scores(&[("a", 0.5)]);
        assert!(matches!(mir_select(&pool, &r, &cfg(1)), Err(Error::MissingScore(id)) if id == "b"));
    }

    #[test]
    fn far_cache_examples() {
        let c = far_cache_baseline(&ids(&["a", "b"]), &scores(&[("a", 0.9), ("b", 0.8)]), 0, &cfg(2)).unwrap();
        assert_eq!(c.entries.len(), 2);
        assert_eq!(c.entries["a"], 0.9);
        let pool = numbered(1000);
        let r: ScoreMap = pool.iter().map(|id| (id.clone(), 0.5)).collect();
        assert_eq!(far_cache_baseline(&pool, &r, 1, &StrategyConfig::default()).unwrap().entries.len(), 800);
        assert!(far_cache_baseline(&[], &ScoreMap::new(), 0, &cfg(2)).unwrap().entries.is_empty());
    }

    #[test]
    fn far_select_examples() {
        let base = far_cache_baseline(
            &ids(&["a", "b", "c"]),
            &scores(&[("a", 0.9), ("b", 0.8), ("c", 1.0)]),
            0,
            &cfg(2),
        )
        .unwrap();
        let cur = scores(&[("a", 0.4), ("b", 0.8), ("c", 0.7)]);
        let s = far_scores(&base, &cur).unwrap();
        assert_eq!(s["a"], f64::max(0.0, 0.9 - 0.4));
        assert_eq!(s["b"], 0.0);
        assert_eq!(s["c"], f64::max(0.0, 1.0 - 0.7));
        assert_eq!(far_select(&base, &cur, &cfg(2)).unwrap(), ids(&["a", "c"]));

        let up = far_cache_baseline(&ids(&["x"]), &scores(&[("x", 0.4)]), 0, &cfg(1)).unwrap();
        assert_eq!(far_scores(&up, &scores(&[("x", 0.9)])).unwrap()["x"], 0.0);

        let same = scores(&[("a", 0.9), ("b", 0.8), ("c", 1.0)]);
        assert_eq!(far_select(&base, &same, &cfg(2)).unwrap(), ids(&["a", "b"]));
        assert!(far_select(&base, &scores(&[("a", 0.1)]), &cfg(2)).is_err());
    }

    #[test]
    fn first_seen_keeps_earliest_baseline() {
        let c0 = RecallCache {
            checkpoint_task: 0,
            entries: [("a".to_string(), 1.0)].into(),
        };
        let c1 = RecallCache {
            checkpoint_task: 1,
            entries: [("a".to_string(), 0.2), ("b".to_string(), 0.7)].into(),
        };
        let m = RecallCache::first_seen(&[c0, c1]).unwrap();
        assert_eq!(m.checkpoint_task, 1);
        assert_eq!(m.entries["a"], 1.0);
        assert_eq!(m.entries["b"], 0.7);
        assert!(RecallCache::first_seen(&[]).is_none());
    }

    #[test]
    fn cache_json_schema() {
        let c = RecallCache {
            checkpoint_task: 2,
            entries: [("img1".to_string(), 0.5)].into(),
        };
        let text = c.to_json().unwrap();
        assert_eq!(text, r#"{"checkpoint_task":2,"entries":{"img1":0.5}}"#);
        assert_eq!(RecallCache::from_json(&text).unwrap(), c);
        assert!(RecallCache::from_json(r#"{"checkpoint_task":0,"entries":{"a":1.5}}"#).is_err());
    }

    #[test]
    fn strategy_config_validation() {
        assert!(StrategyConfig::default().validate().is_ok());
        assert!(StrategyConfig { k_select: 900, ..Default::default() }.validate().is_err());
        assert_eq!("FAR".parse::<Strategy>().unwrap(), Strategy::Far);
        assert!("gem".parse::<Strategy>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::{prop, prop_assert, prop_assert_eq, prop_oneof, proptest, Just};
        use proptest::strategy::Strategy as Gen;

        fn arb_case() -> impl Gen<Value = (Vec<String>, Vec<f64>, Vec<f64>, usize, usize)> {
            (1..40usize).prop_flat_map(|n| {
                let grid = prop_oneof![(0..=4u8).prop_map(|v| v as f64 / 4.0), 0.0..=1.0f64];
                (
                    Just((0..n).map(|i| format!("p{}", i * 13 % 97)).collect::<Vec<_>>()).prop_shuffle(),
                    prop::collection::vec(grid.clone(), n),
                    prop::collection::vec(grid, n),
                    1..=n,
                    1..=n,
                )
            })
        }

        fn map(ids: &[String], v: &[f64], reverse: bool) -> ScoreMap {
            let mut m = ScoreMap::new();
            let pairs: Vec<(&String, &f64)> = ids.iter().zip(v).collect();
            let it: Box<dyn Iterator<Item = &(&String, &f64)>> =
                if reverse { Box::new(pairs.iter().rev()) } else { Box::new(pairs.iter()) };
            for (k, s) in it {
                m.insert((*k).clone(), **s);
            }
            m
        }

        fn distinct_subset(sel: &[String], of: &[String]) -> bool {
            canonical(sel).len() == sel.len() && sel.iter().all(|s| of.contains(s))
        }

        proptest! {
            #[test]
            fn selections_are_distinct_subsets_of_capped_pool(
                (pool, a, b, cap, k) in arb_case(), seed: u64
            ) {
                let cfg = StrategyConfig { pool_cap: cap, k_select: k.min(cap), strategy: Strategy::Mir };
                let capped = capped_pool(&pool, cap);
                let mir = mir_select(&pool, &map(&pool, &a, false), &cfg).unwrap();
                prop_assert!(distinct_subset(&mir, &capped));
                prop_assert_eq!(mir.len(), cfg.k_select);
                let cache = far_cache_baseline(&pool, &map(&pool, &a, false), 1, &cfg).unwrap();
                let far = far_select(&cache, &map(&pool, &b, false), &cfg).unwrap();
                prop_assert!(distinct_subset(&far, &capped));
                let er = er_select(&pool, k, seed);
                prop_assert!(distinct_subset(&er, &pool));
                prop_assert_eq!(er.len(), k);
                prop_assert_eq!(er, er_select(&pool, k, seed));
            }

            #[test]
            fn far_scores_never_negative((pool, a, b, cap, _k) in arb_case()) {
                let cfg = StrategyConfig { pool_cap: cap, k_select: cap, strategy: Strategy::Far };
                let cache = far_cache_baseline(&pool, &map(&pool, &a, false), 1, &cfg).unwrap();
                for s in far_scores(&cache, &map(&pool, &b, false)).unwrap().values() {
                    prop_assert!(*s >= 0.0);
                }
            }

            #[test]
            fn mir_picks_never_beat_excluded((pool, a, _b, cap, k) in arb_case()) {
                let cfg = StrategyConfig { pool_cap: cap, k_select: k.min(cap), strategy: Strategy::Mir };
                let recall = map(&pool, &a, false);
                let picked = mir_select(&pool, &recall, &cfg).unwrap();
                for out in capped_pool(&pool, cap).iter().filter(|id| !picked.contains(id)) {
                    for p in &picked {
                        prop_assert!(recall[p] < recall[out] || (recall[p] == recall[out] && p < out));
                    }
                }
            }

            #[test]
            fn order_of_inputs_is_irrelevant((pool, a, b, cap, k) in arb_case(), seed: u64) {
                let cfg = StrategyConfig { pool_cap: cap, k_select: k.min(cap), strategy: Strategy::Far };
                let mut reversed = pool.clone();
                reversed.reverse();
                prop_assert_eq!(
                    mir_select(&pool, &map(&pool, &a, false), &cfg).unwrap(),
                    mir_select(&reversed, &map(&pool, &a, true), &cfg).unwrap()
                );
                let c1 = far_cache_baseline(&pool, &map(&pool, &a, false), 1, &cfg).unwrap();
                let c2 = far_cache_baseline(&reversed, &map(&pool, &a, true), 1, &cfg).unwrap();
                prop_assert_eq!(
                    far_select(&c1, &map(&pool, &b, false), &cfg).unwrap(),
                    far_select(&c2, &map(&pool, &b, true), &cfg).unwrap()
                );
                prop_assert_eq!(er_select(&pool, k, seed), er_select(&reversed, k, seed));
            }
        }
    }
}
