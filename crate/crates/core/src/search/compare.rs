//! Side-by-side comparison of search strategies on a frozen benchmark
//! table, with the standard column set: best baseline/noisy/1-day
//! accuracies, AVM, parameter count, and measured search time.

use serde::{Deserialize, Serialize};

use super::aimc::{aimc_evolutionary_search, AimcConfig};
use super::bananas::{bananas_style_search, BananasConfig};
use super::bayesian::{bayesian_search, BayesConfig};
use super::objective::{EvalSource, ObjectiveSpec, SearchError, SearchSpace, TableObjective};
use super::strategies::{evolutionary_search, exhaustive_search, random_search, EvoConfig, SearchBudget};
use crate::bench::BenchmarkTable;

/// A named, configured strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MethodSpec {
    Exhaustive,
    Random,
    Evolutionary(EvoConfig),
    Bayesian(BayesConfig),
    Bananas(BananasConfig),
    AimcEvolution(AimcConfig),
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Exhaustive => "exhaustive",
            MethodSpec::Random => "random",
            MethodSpec::Evolutionary(_) => "evolution",
            MethodSpec::Bayesian(_) => "bayesian",
            MethodSpec::Bananas(_) => "bananas",
            MethodSpec::AimcEvolution(_) => "aimc-evolution",
        }
    }

    /// The default method set compared in the CLI.
    pub fn default_suite() -> Vec<MethodSpec> {
        vec![
            MethodSpec::Exhaustive,
            MethodSpec::Random,
            MethodSpec::Evolutionary(EvoConfig::default()),
            MethodSpec::Bayesian(BayesConfig::default()),
            MethodSpec::Bananas(BananasConfig::default()),
            MethodSpec::AimcEvolution(AimcConfig::default()),
        ]
    }
}

/// Aggregated outcome of one method over the seed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: String,
    pub baseline_acc: f64,
    pub noisy_acc: f64,
    pub day1_mean: f64,
    pub day1_std: f64,
    pub avm_mean: f64,
    pub avm_std: f64,
    pub params_k: f64,
    pub search_time_s: f64,
    pub seeds: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64;
    (mean, var.sqrt())
}

/// Runs every method over every seed on the frozen table and aggregates
/// per-method columns (means over seeds; day-1 accuracy and AVM also report
/// the std over seeds). Exhaustive search ignores the seed list and runs
/// once.
pub fn compare_methods(
    table: &BenchmarkTable,
    spec: ObjectiveSpec,
    space: SearchSpace,
    methods: &[MethodSpec],
    queries: usize,
    seeds: &[u64],
) -> Result<Vec<ComparisonRow>, SearchError> {
    if seeds.is_empty() {
        return Err(SearchError::InvalidConfig("need at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(methods.len());
    for method in methods {
        let runs: Vec<u64> = match method {
            MethodSpec::Exhaustive => vec![seeds[0]],
            _ => seeds.to_vec(),
        };
        let mut baseline = Vec::new();
        let mut noisy = Vec::new();
        let mut day1 = Vec::new();
        let mut avms = Vec::new();
        let mut params = Vec::new();
        let mut times = Vec::new();
        for &seed in &runs {
            let mut source = TableObjective::new(table, spec, space.clone())?;
            let budget = SearchBudget::new(queries, seed);
            let result = match method {
                MethodSpec::Exhaustive => exhaustive_search(&mut source)?,
                MethodSpec::Random => random_search(&mut source, budget)?,
                MethodSpec::Evolutionary(cfg) => evolutionary_search(&mut source, budget, *cfg)?,
                MethodSpec::Bayesian(cfg) => bayesian_search(&mut source, budget, cfg)?,
                MethodSpec::Bananas(cfg) => bananas_style_search(&mut source, budget, cfg)?,
                MethodSpec::AimcEvolution(cfg) => {
                    aimc_evolutionary_search(&mut source, budget, cfg)?
                }
            };
            let data = source.eval(result.best_index)?;
            baseline.push(data.baseline_acc);
            noisy.push(data.noisy_acc);
            day1.push(data.day1_mean);
            avms.push(data.avm);
            params.push(data.param_count as f64 / 1_000.0);
            times.push(result.elapsed_seconds);
        }
        let (day1_mean, day1_std) = mean_std(&day1);
        let (avm_mean, avm_std) = mean_std(&avms);
        rows.push(ComparisonRow {
            method: method.name().to_string(),
            baseline_acc: mean_std(&baseline).0,
            noisy_acc: mean_std(&noisy).0,
            day1_mean,
            day1_std,
            avm_mean,
            avm_std,
            params_k: mean_std(&params).0,
            search_time_s: mean_std(&times).0,
            seeds: runs.len(),
        });
    }
    Ok(rows)
}

/// CSV with the standard comparison columns, two decimals like the
/// published tables.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from(
        "method,baseline_acc,noisy_acc,day1_acc_mean,day1_acc_std,avm_mean,avm_std,params_k,search_time_s,seeds\n",
    );
    for row in rows {
        out.push_str(&format!(
            "{},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.2},{:.3},{}\n",
            row.method,
            row.baseline_acc,
            row.noisy_acc,
            row.day1_mean,
            row.day1_std,
            row.avm_mean,
            row.avm_std,
            row.params_k,
            row.search_time_s,
            row.seeds
        ));
    }
    out
}
