//! Waypoint selection strategies: random, max-entropy, and the myopic
//! informative planner (normalized entropy minus normalized distance).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::env::Extent;
use crate::error::{Error, Result};
use crate::gp::{predictive_entropy, GprModel};
use crate::linalg::DenseMatrix;
use crate::rng::SeededRng;

pub trait SamplingStrategy: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    /// Whether the robot drives to each waypoint, sensing on the way. When
    /// false it is placed at the waypoint and takes a single reading.
    fn travels(&self) -> bool {
        false
    }

    /// Next waypoint for a robot at `robot`.
    fn propose(
        &self,
        model: &GprModel,
        robot: [f64; 2],
        extent: &Extent,
        rng: &mut SeededRng,
    ) -> Result<[f64; 2]>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub name: String,
    pub n_candidates: usize,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            name: "random".into(),
            n_candidates: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RandomStrategy;

impl SamplingStrategy for RandomStrategy {
    fn name(&self) -> &'static str {
        "random"
    }

    fn propose(&self, _: &GprModel, _: [f64; 2], extent: &Extent, rng: &mut SeededRng) -> Result<[f64; 2]> {
        Ok(extent.sample_uniform(rng))
    }
}

/// Picks the candidate with the highest predictive entropy.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActiveStrategy {
    pub n_candidates: usize,
}

impl SamplingStrategy for ActiveStrategy {
    fn name(&self) -> &'static str {
        "active"
    }

    fn propose(&self, model: &GprModel, _: [f64; 2], extent: &Extent, rng: &mut SeededRng) -> Result<[f64; 2]> {
        let cands = candidates(extent, self.n_candidates, rng)?;
        let entropy = candidate_entropy(model, &cands)?;
        let best = argmax_first(&entropy);
        Ok([cands[(best, 0)], cands[(best, 1)]])
    }
}

/// Picks the candidate maximizing normalized entropy minus normalized
/// travel distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MyopicStrategy {
    pub n_candidates: usize,
}

impl SamplingStrategy for MyopicStrategy {
    fn name(&self) -> &'static str {
        "myopic"
    }

    fn travels(&self) -> bool {
        true
    }

    fn propose(&self, model: &GprModel, robot: [f64; 2], extent: &Extent, rng: &mut SeededRng) -> Result<[f64; 2]> {
        let cands = candidates(extent, self.n_candidates, rng)?;
        let entropy = candidate_entropy(model, &cands)?;
        let dist: Vec<f64> = (0..cands.rows())
            .map(|i| (cands[(i, 0)] - robot[0]).hypot(cands[(i, 1)] - robot[1]))
            .collect();
        let best = argmax_first(&myopic_scores(&entropy, &dist));
        Ok([cands[(best, 0)], cands[(best, 1)]])
    }
}

fn candidates(extent: &Extent, n: usize, rng: &mut SeededRng) -> Result<DenseMatrix> {
    if n == 0 {
        return Err(Error::Config("n_candidates must be at least 1".into()));
    }
    let data = (0..n).flat_map(|_| extent.sample_uniform(rng)).collect();
    DenseMatrix::from_vec(n, 2, data)
}

fn candidate_entropy(model: &GprModel, cands: &DenseMatrix) -> Result<Vec<f64>> {
    Ok(predictive_entropy(&model.predict(cands)?.var))
}

/// Rescales to `[0, 1]`; a constant vector maps to all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

pub fn myopic_scores(entropy: &[f64], distance: &[f64]) -> Vec<f64> {
    min_max_normalize(entropy)
        .iter()
        .zip(min_max_normalize(distance))
        .map(|(e, d)| e - d)
        .collect()
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub type StrategyFactory = fn(&StrategyConfig) -> Result<Box<dyn SamplingStrategy>>;

/// Name → constructor table for sampling strategies.
pub struct StrategyRegistry {
    factories: BTreeMap<String, StrategyFactory>,
}

impl StrategyRegistry {
    pub fn empty() -> Self {
        StrategyRegistry {
            factories: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, name: impl Into<String>, factory: StrategyFactory) {
        self.factories.insert(name.into(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn build(&self, config: &StrategyConfig) -> Result<Box<dyn SamplingStrategy>> {
        if config.n_candidates == 0 {
            return Err(Error::Config("n_candidates must be at least 1".into()));
        }
        let factory = self
            .factories
            .get(config.name.as_str())
            .ok_or_else(|| Error::UnknownKind {
                what: "strategy",
                name: config.name.clone(),
            })?;
        factory(config)
    }
}

impl Default for StrategyRegistry {
    fn default() -> Self {
        let mut reg = Self::empty();
        reg.register("random", |_| Ok(Box::new(RandomStrategy)));
        reg.register("active", |c| {
            Ok(Box::new(ActiveStrategy {
                n_candidates: c.n_candidates,
            }))
        });
        reg.register("myopic", |c| {
            Ok(Box::new(MyopicStrategy {
                n_candidates: c.n_candidates,
            }))
        });
        reg
    }
}

impl fmt::Debug for StrategyRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.factories.keys()).finish()
    }
}
