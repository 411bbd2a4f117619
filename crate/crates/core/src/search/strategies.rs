//! The memoizing search harness and the basic strategies: exhaustive scan,
//! random search, and regularized evolution.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::objective::{EvalData, EvalSource, SearchError};
use crate::rng::stream_rng;
use crate::space::{ArchIndex, CellEncoding, OpKind, NUM_EDGES, NUM_OPS};

/// Query budget and reproducibility seed of one search run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBudget {
    pub max_queries: usize,
    pub seed: u64,
    /// Optional wall-clock cap in seconds; the run stops early when hit.
    pub wall_clock_cap_seconds: Option<f64>,
}

impl SearchBudget {
    pub fn new(max_queries: usize, seed: u64) -> Self {
        SearchBudget {
            max_queries,
            seed,
            wall_clock_cap_seconds: None,
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        if self.max_queries == 0 {
            return Err(SearchError::InvalidConfig("budget must be >= 1".into()));
        }
        Ok(())
    }
}

/// One objective query: unique (architecture, value) pairs in query order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub arch_index: u32,
    pub value: f64,
    pub best_so_far: f64,
}

/// Outcome of one search run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub method: String,
    pub seed: u64,
    pub best_index: u32,
    pub best_encoding: CellEncoding,
    pub best_value: f64,
    pub queries_used: usize,
    pub trajectory: Vec<TrajectoryPoint>,
    /// Measured wall clock; excluded from serialized output so that equal
    /// seeds produce byte-identical files.
    #[serde(skip)]
    pub elapsed_seconds: f64,
}

/// Budget-enforcing, memoizing wrapper every strategy evaluates through.
/// Re-querying a known architecture returns the cached value and consumes
/// no budget.
pub(crate) struct Run<'a> {
    source: &'a mut dyn EvalSource,
    budget: SearchBudget,
    cache: BTreeMap<u32, EvalData>,
    trajectory: Vec<TrajectoryPoint>,
    best: Option<(u32, f64)>,
    started: Instant,
}

impl<'a> Run<'a> {
    pub fn new(source: &'a mut dyn EvalSource, budget: SearchBudget) -> Result<Self, SearchError> {
        budget.validate()?;
        Ok(Run {
            source,
            budget,
            cache: BTreeMap::new(),
            trajectory: Vec::new(),
            best: None,
            started: Instant::now(),
        })
    }

    pub fn candidates(&self) -> &[u32] {
        self.source.candidates()
    }

    pub fn queries_used(&self) -> usize {
        self.trajectory.len()
    }

    pub fn exhausted(&self) -> bool {
        if self.trajectory.len() >= self.budget.max_queries {
            return true;
        }
        if let Some(cap) = self.budget.wall_clock_cap_seconds {
            if self.started.elapsed().as_secs_f64() >= cap {
                return true;
            }
        }
        false
    }

    pub fn known(&self, index: u32) -> Option<&EvalData> {
        self.cache.get(&index)
    }

    pub fn evaluated(&self) -> impl Iterator<Item = (&u32, &EvalData)> {
        self.cache.iter()
    }

    pub fn param_count_of(&self, index: u32) -> Option<u64> {
        self.source.param_count_of(index)
    }

    pub fn eval(&mut self, index: u32) -> Result<EvalData, SearchError> {
        if let Some(data) = self.cache.get(&index) {
            return Ok(*data);
        }
        if self.exhausted() {
            return Err(SearchError::BudgetExhausted);
        }
        let data = self.source.eval(index)?;
        let best_value = self.best.map_or(data.value, |(_, v)| v.max(data.value));
        if self.best.map_or(true, |(_, v)| data.value > v) {
            self.best = Some((index, data.value));
        }
        self.trajectory.push(TrajectoryPoint {
            step: self.trajectory.len(),
            arch_index: index,
            value: data.value,
            best_so_far: best_value,
        });
        self.cache.insert(index, data);
        Ok(data)
    }

    pub fn finish(self, method: &str) -> Result<SearchResult, SearchError> {
        let (best_index, best_value) = self.best.ok_or_else(|| {
            SearchError::InvalidConfig("search finished without any evaluation".into())
        })?;
        Ok(SearchResult {
            method: method.to_string(),
            seed: self.budget.seed,
            best_index,
            best_encoding: CellEncoding::from_index(ArchIndex(best_index))
                .expect("evaluated index is valid"),
            best_value,
            queries_used: self.trajectory.len(),
            trajectory: self.trajectory,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
        })
    }
}

/// Scans every candidate; ties resolve to the lowest architecture index.
/// Errors if the table does not cover the whole space, listing the missing
/// indices.
pub fn exhaustive_search(source: &mut dyn EvalSource) -> Result<SearchResult, SearchError> {
    let candidates: Vec<u32> = source.candidates().to_vec();
    let started = Instant::now();
    let mut missing = Vec::new();
    let mut best: Option<(u32, f64)> = None;
    let mut trajectory = Vec::with_capacity(candidates.len());
    for index in candidates {
        let data = match source.eval(index) {
            Ok(data) => data,
            Err(SearchError::MissingRecord { index }) => {
                missing.push(index);
                continue;
            }
            Err(other) => return Err(other),
        };
        // Strictly-greater keeps the lowest index on ties.
        if best.map_or(true, |(_, v)| data.value > v) {
            best = Some((index, data.value));
        }
        trajectory.push(TrajectoryPoint {
            step: trajectory.len(),
            arch_index: index,
            value: data.value,
            best_so_far: best.unwrap().1,
        });
    }
    if !missing.is_empty() {
        return Err(SearchError::IncompleteTable { missing });
    }
    let (best_index, best_value) =
        best.ok_or_else(|| SearchError::InvalidConfig("empty search space".into()))?;
    Ok(SearchResult {
        method: "exhaustive".to_string(),
        seed: 0,
        best_index,
        best_encoding: CellEncoding::from_index(ArchIndex(best_index)).expect("valid index"),
        best_value,
        queries_used: trajectory.len(),
        trajectory,
        elapsed_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Fisher-Yates shuffle driven by the run's seeded RNG.
pub(crate) fn shuffled(candidates: &[u32], rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut order = candidates.to_vec();
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    order
}

/// Uniform sampling without replacement until the budget is exhausted.
pub fn random_search(
    source: &mut dyn EvalSource,
    budget: SearchBudget,
) -> Result<SearchResult, SearchError> {
    let mut run = Run::new(source, budget)?;
    let mut rng = stream_rng(budget.seed, "random-search", 0);
    let order = shuffled(run.candidates(), &mut rng);
    for index in order {
        if run.exhausted() {
            break;
        }
        run.eval(index)?;
    }
    run.finish("random")
}

/// Uniformly re-assigns one edge to a different op, restricted to the
/// candidate domain: a uniformly chosen valid Hamming-distance-1 neighbor.
/// Falls back to a uniform domain sample only when the candidate has no
/// in-domain neighbor at all.
pub fn mutate_within(
    enc: &CellEncoding,
    domain: &HashSet<u32>,
    all: &[u32],
    rng: &mut ChaCha8Rng,
) -> CellEncoding {
    let mut neighbors = Vec::with_capacity(NUM_EDGES * (NUM_OPS - 1));
    for edge in 0..NUM_EDGES {
        for code in 0..NUM_OPS as u8 {
            if code == enc.ops[edge].code() {
                continue;
            }
            let mut ops = enc.ops;
            ops[edge] = OpKind::from_code(code).expect("code < 5");
            let candidate = CellEncoding::new(ops);
            if domain.contains(&candidate.to_index().0) {
                neighbors.push(candidate);
            }
        }
    }
    if neighbors.is_empty() {
        let index = all[rng.gen_range(0..all.len())];
        return CellEncoding::from_index(ArchIndex(index)).expect("valid index");
    }
    neighbors[rng.gen_range(0..neighbors.len())]
}

/// Regularized-evolution parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population: usize,
    pub tournament: usize,
}

impl Default for EvoConfig {
    fn default() -> Self {
        EvoConfig {
            population: 20,
            tournament: 5,
        }
    }
}

/// Regularized evolution: tournament parent selection, single-edge
/// mutation, oldest-individual eviction. Returns the best architecture
/// ever evaluated.
pub fn evolutionary_search(
    source: &mut dyn EvalSource,
    budget: SearchBudget,
    cfg: EvoConfig,
) -> Result<SearchResult, SearchError> {
    if cfg.population == 0 || cfg.tournament == 0 {
        return Err(SearchError::InvalidConfig(
            "population and tournament must be >= 1".into(),
        ));
    }
    if cfg.population > budget.max_queries {
        return Err(SearchError::InvalidConfig(format!(
            "population {} exceeds budget {}",
            cfg.population, budget.max_queries
        )));
    }
    let mut run = Run::new(source, budget)?;
    let mut rng = stream_rng(budget.seed, "evolution", 0);
    let all: Vec<u32> = run.candidates().to_vec();
    let domain: HashSet<u32> = all.iter().copied().collect();

    // Random initial population (distinct architectures).
    let mut population: Vec<(u32, f64)> = Vec::with_capacity(cfg.population);
    for index in shuffled(&all, &mut rng) {
        if population.len() == cfg.population || run.exhausted() {
            break;
        }
        let data = run.eval(index)?;
        population.push((index, data.value));
    }

    while !run.exhausted() {
        // Tournament of k individuals sampled with replacement.
        let mut winner = population[rng.gen_range(0..population.len())];
        for _ in 1..cfg.tournament {
            let contender = population[rng.gen_range(0..population.len())];
            if contender.1 > winner.1 {
                winner = contender;
            }
        }
        let parent = CellEncoding::from_index(ArchIndex(winner.0)).expect("valid index");
        let child = mutate_within(&parent, &domain, &all, &mut rng);
        let child_index = child.to_index().0;
        let data = run.eval(child_index)?;
        population.push((child_index, data.value));
        population.remove(0);
    }
    run.finish("evolution")
}
