//! Progressive sampling of filter selectivities.

use std::collections::HashMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::executor::semantic::{per_row_filter, similarity_scores, Llm};
use crate::plan::{NodeId, Operator, PlanNode};
use crate::provider::Embedder;
use crate::table::{Table, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Target 95% confidence half-width.
    pub epsilon_ci: f64,
    pub max_sample: usize,
    pub first_batch: usize,
    pub seed: u64,
    /// Used when a predicate cannot be evaluated.
    pub fallback: f64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { epsilon_ci: 0.05, max_sample: 1024, first_batch: 64, seed: 7, fallback: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectivityEstimate {
    pub node_id: NodeId,
    pub selectivity: f64,
    pub sample_size: usize,
    pub half_width: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl SelectivityEstimate {
    fn fallback(node_id: NodeId, cfg: &SamplingConfig, warning: String) -> Self {
        log::warn!("selectivity of node {node_id}: {warning}; using {}", cfg.fallback);
        SelectivityEstimate {
            node_id,
            selectivity: cfg.fallback,
            sample_size: 0,
            half_width: f64::NAN,
            warning: Some(warning),
        }
    }
}

/// Draws batches of `first_batch`, `2·first_batch`, … rows with probability
/// proportional to `weights` (uniform when absent) and returns the
/// Hansen–Hurwitz estimate of the fraction of rows satisfying `eval`, the
/// number of draws and the half-width `1.96·sd/√n`. Each row is evaluated at
/// most once.
pub fn progressive_estimate(
    n_rows: usize,
    weights: Option<&[f64]>,
    cfg: &SamplingConfig,
    mut eval: impl FnMut(&[usize]) -> Result<Vec<bool>, String>,
) -> Result<(f64, usize, f64), String> {
    if n_rows == 0 {
        return Ok((1.0, 0, 0.0));
    }
    let w: Vec<f64> = match weights {
        Some(w) => w.iter().map(|x| if x.is_finite() { x.max(1e-3) } else { 1e-3 }).collect(),
        None => vec![1.0; n_rows],
    };
    let total: f64 = w.iter().sum();
    let dist = WeightedIndex::new(&w).map_err(|e| e.to_string())?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut cache: HashMap<usize, bool> = HashMap::new();
    let mut z: Vec<f64> = Vec::new();
    let mut batch = cfg.first_batch.max(1);
    let n = n_rows as f64;
    loop {
        let take = batch.min(cfg.max_sample.max(1) - z.len());
        let draws: Vec<usize> = (0..take).map(|_| dist.sample(&mut rng)).collect();
        let mut fresh: Vec<usize> = draws.iter().copied().filter(|i| !cache.contains_key(i)).collect();
        fresh.sort_unstable();
        fresh.dedup();
        if !fresh.is_empty() {
            let ys = eval(&fresh)?;
            for (i, y) in fresh.into_iter().zip(ys) {
                cache.insert(i, y);
            }
        }
        for i in draws {
            let p = w[i] / total;
            z.push(if cache[&i] { 1.0 / (n * p) } else { 0.0 });
        }
        let m = z.len() as f64;
        let mean = z.iter().sum::<f64>() / m;
        let var =
            if z.len() > 1 { z.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0) } else { f64::INFINITY };
        let half = 1.96 * var.sqrt() / m.sqrt();
        if half <= cfg.epsilon_ci || z.len() >= cfg.max_sample {
            return Ok((mean.clamp(0.0, 1.0), z.len(), half));
        }
        batch *= 2;
    }
}

/// Selectivity of a Filter or SemFilter node over `input`. Semantic
/// predicates are judged by `llm` (the cheapest tier) on importance-weighted
/// draws; failures fall back to the configured default with a warning.
pub fn estimate_selectivity(
    node: &PlanNode,
    input: &Table,
    cfg: &SamplingConfig,
    llm: Option<Llm>,
    embedder: Option<&dyn Embedder>,
) -> SelectivityEstimate {
    let subset = |idx: &[usize]| Table {
        schema: input.schema.clone(),
        rows: idx.iter().map(|i| input.rows[*i].clone()).collect(),
    };
    let result = match &node.op {
        Operator::Filter { predicate } => progressive_estimate(input.len(), None, cfg, |idx| {
            idx.iter()
                .map(|i| {
                    predicate
                        .eval(&input.schema, &input.rows[*i])
                        .map(|v| v == Value::Bool(true))
                        .map_err(|e| e.to_string())
                })
                .collect()
        }),
        Operator::SemFilter { columns, predicate_prompt } => {
            let Some(llm) = llm else {
                return SelectivityEstimate::fallback(node.id, cfg, "no model available for sampling".into());
            };
            let weights = embedder
                .and_then(|e| similarity_scores(input, columns, predicate_prompt, e).ok())
                .map(|s| s.iter().map(|c| 0.5 + c).collect::<Vec<f64>>());
            progressive_estimate(input.len(), weights.as_deref(), cfg, |idx| {
                let sub = subset(idx);
                let kept = per_row_filter(&sub, columns, predicate_prompt, llm)?;
                // Rows are distinct draws, so keep-membership maps back by position.
                let mut out = Vec::with_capacity(idx.len());
                let mut k = 0;
                for row in &sub.rows {
                    let hit = kept.table.rows.get(k) == Some(row);
                    if hit {
                        k += 1;
                    }
                    out.push(hit);
                }
                Ok(out)
            })
        }
        other => Err(format!("{} is not a filter", other.kind().name())),
    };
    match result {
        Ok((selectivity, sample_size, half_width)) => {
            SelectivityEstimate { node_id: node.id, selectivity, sample_size, half_width, warning: None }
        }
        Err(e) => SelectivityEstimate::fallback(node.id, cfg, e),
    }
}
