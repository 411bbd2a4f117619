//! Surrogate-driven Bayesian optimization: a bootstrap ensemble of boosted
//! trees provides mean and spread, and an upper-confidence acquisition
//! picks the next architecture from a sampled candidate pool.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gbt::{fit_gbt, one_hot_encoding, GbtConfig, GbtSurrogate};
use super::objective::{EvalSource, SearchError};
use super::strategies::{shuffled, Run, SearchBudget, SearchResult};
use crate::rng::stream_rng;
use crate::space::{ArchIndex, CellEncoding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesConfig {
    /// Random evaluations before the surrogate loop starts.
    pub init_queries: usize,
    /// Bootstrap replicates in the ensemble.
    pub ensemble: usize,
    /// Exploration weight on the ensemble std.
    pub kappa: f64,
    /// Unevaluated candidates scored per iteration.
    pub pool: usize,
    pub gbt: GbtConfig,
}

impl Default for BayesConfig {
    fn default() -> Self {
        BayesConfig {
            init_queries: 10,
            ensemble: 5,
            kappa: 1.0,
            pool: 200,
            gbt: GbtConfig {
                rounds: 60,
                ..GbtConfig::default()
            },
        }
    }
}

/// Fits `count` surrogates on bootstrap resamples of the archive.
fn bootstrap_ensemble(
    archive: &[(CellEncoding, f64)],
    cfg: &GbtConfig,
    count: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<Vec<GbtSurrogate>, SearchError> {
    let mut members = Vec::with_capacity(count);
    for _ in 0..count {
        let sample: Vec<(CellEncoding, f64)> = (0..archive.len())
            .map(|_| archive[rng.gen_range(0..archive.len())].clone())
            .collect();
        members.push(fit_gbt(&sample, cfg).map_err(SearchError::InvalidConfig)?);
    }
    Ok(members)
}

/// Ensemble mean and population std at one point.
fn ensemble_stats(members: &[GbtSurrogate], features: &[f64]) -> (f64, f64) {
    let preds: Vec<f64> = members.iter().map(|m| m.predict_features(features)).collect();
    let mean = preds.iter().sum::<f64>() / preds.len() as f64;
    let var = preds.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / preds.len() as f64;
    (mean, var.sqrt())
}

/// Bayesian optimization with UCB acquisition `mean + kappa * std` over a
/// sampled pool of unevaluated candidates.
pub fn bayesian_search(
    source: &mut dyn EvalSource,
    budget: SearchBudget,
    cfg: &BayesConfig,
) -> Result<SearchResult, SearchError> {
    if cfg.init_queries == 0 || cfg.ensemble == 0 || cfg.pool == 0 {
        return Err(SearchError::InvalidConfig(
            "init_queries, ensemble, and pool must be >= 1".into(),
        ));
    }
    if budget.max_queries <= cfg.init_queries {
        return Err(SearchError::InvalidConfig(format!(
            "budget {} must exceed the initial design size {}",
            budget.max_queries, cfg.init_queries
        )));
    }
    let mut run = Run::new(source, budget)?;
    let mut rng = stream_rng(budget.seed, "bayes", 0);
    let all: Vec<u32> = run.candidates().to_vec();

    // Initial random design.
    for index in shuffled(&all, &mut rng) {
        if run.queries_used() >= cfg.init_queries || run.exhausted() {
            break;
        }
        run.eval(index)?;
    }

    while !run.exhausted() {
        let archive: Vec<(CellEncoding, f64)> = run
            .evaluated()
            .map(|(&i, d)| {
                (
                    CellEncoding::from_index(ArchIndex(i)).expect("valid index"),
                    d.value,
                )
            })
            .collect();
        let members = bootstrap_ensemble(&archive, &cfg.gbt, cfg.ensemble, &mut rng)?;

        // Candidate pool: unevaluated architectures, uniformly sampled.
        let mut pool = Vec::with_capacity(cfg.pool);
        for index in shuffled(&all, &mut rng) {
            if pool.len() == cfg.pool {
                break;
            }
            if run.known(index).is_none() {
                pool.push(index);
            }
        }
        if pool.is_empty() {
            break; // everything evaluated
        }
        let mut best = (pool[0], f64::NEG_INFINITY);
        for &index in &pool {
            let enc = CellEncoding::from_index(ArchIndex(index)).expect("valid index");
            let (mean, std) = ensemble_stats(&members, &one_hot_encoding(&enc));
            let score = mean + cfg.kappa * std;
            if score > best.1 {
                best = (index, score);
            }
        }
        run.eval(best.0)?;
    }
    run.finish("bayesian")
}

#[cfg(test)]
mod tests {
    use super::super::objective::test_support::synthetic_table;
    use super::super::objective::{ObjectiveSpec, SearchSpace, TableObjective};
    use super::*;

    #[test]
    fn bayesian_is_reproducible_and_respects_budget() {
        let indices: Vec<u32> = (0..500).map(|i| i * 31).collect();
        let table = synthetic_table(&indices);
        let make = || {
            TableObjective::new(
                &table,
                ObjectiveSpec::default(),
                SearchSpace::Subset(indices.clone()),
            )
            .unwrap()
        };
        let budget = SearchBudget::new(25, 3);
        let cfg = BayesConfig {
            pool: 50,
            gbt: GbtConfig {
                rounds: 20,
                ..GbtConfig::default()
            },
            ..BayesConfig::default()
        };
        let a = bayesian_search(&mut make(), budget, &cfg).unwrap();
        let b = bayesian_search(&mut make(), budget, &cfg).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        assert!(a.queries_used <= 25);
        assert!(
            bayesian_search(&mut make(), SearchBudget::new(5, 1), &cfg).is_err(),
            "budget must exceed the initial design"
        );
    }

    #[test]
    fn bayesian_beats_its_own_initial_design_on_separable_objective() {
        let indices: Vec<u32> = (0..15_625).step_by(5).collect();
        let table = synthetic_table(&indices);
        let mut obj = TableObjective::new(
            &table,
            ObjectiveSpec::default(),
            SearchSpace::Subset(indices.clone()),
        )
        .unwrap();
        let cfg = BayesConfig {
            pool: 100,
            gbt: GbtConfig {
                rounds: 40,
                ..GbtConfig::default()
            },
            ..BayesConfig::default()
        };
        let result = bayesian_search(&mut obj, SearchBudget::new(40, 11), &cfg).unwrap();
        let init_best = result.trajectory[..10]
            .iter()
            .map(|p| p.value)
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            result.best_value >= init_best,
            "surrogate loop should not lose to the initial design"
        );
    }
}
