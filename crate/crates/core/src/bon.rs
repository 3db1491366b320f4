//! Best-of-n evaluation over a fixed response pool.
//!
//! For a prompt with `N` sampled responses sorted ascending by the ranking
//! score, the expected evaluation score of the ranking-argmax over a uniformly
//! random `n`-subset is `Σ_{i=n}^{N} C(i−1, n−1)/C(N, n) · eval(y_(i))`:
//! response `i` wins exactly when it is in the subset and the other `n − 1`
//! members come from the `i − 1` responses below it.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::pairwise_sum;
use crate::{Error, Result};

/// Name of the column holding the proxy scores used for ranking by default.
pub const PROXY: &str = "proxy";

/// Largest subset count the enumeration oracle will walk.
pub const ENUMERATION_BUDGET: f64 = 1e6;

/// `log n − (n − 1)/n`, the KL divergence of best-of-n from the base policy.
pub fn kl_bon(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Usage("best-of-n needs n >= 1".into()));
    }
    let n = n as f64;
    Ok(n.ln() - (n - 1.0) / n)
}

fn check_n(pool_size: usize, n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Usage("best-of-n needs n >= 1".into()));
    }
    if n > pool_size {
        return Err(Error::ExceedsPool { n, pool_size });
    }
    Ok(())
}

/// Rank weights `C(i−1, n−1)/C(N, n)` for ascending ranks `i = 1..=N`.
///
/// Computed by the downward recurrence `w_N = n/N`,
/// `w_{i−1} = w_i·(i−n)/(i−1)`, which never forms a binomial coefficient.
pub fn bon_weights(pool_size: usize, n: usize) -> Result<Vec<f64>> {
    check_n(pool_size, n)?;
    let mut w = vec![0.0; pool_size];
    let mut current = n as f64 / pool_size as f64;
    w[pool_size - 1] = current;
    for i in (n + 1..=pool_size).rev() {
        current *= (i - n) as f64 / (i - 1) as f64;
        w[i - 2] = current;
    }
    Ok(w)
}

/// Indices of `scores` sorted ascending, ties broken by original index.
pub fn ascending_order(scores: &[f64]) -> Result<Vec<usize>> {
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("ranking score at response {i}"),
        });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // `partial_cmp` so that -0.0 and 0.0 tie; all scores are finite here.
    order.sort_by(|&a, &b| {
        scores[a]
            .partial_cmp(&scores[b])
            .expect("finite scores")
            .then(a.cmp(&b))
    });
    Ok(order)
}

fn check_aligned(ranking: &[f64], eval: &[f64]) -> Result<()> {
    if ranking.len() != eval.len() {
        return Err(Error::Shape(format!(
            "ranking has {} responses but evaluation has {}",
            ranking.len(),
            eval.len()
        )));
    }
    if let Some(i) = eval.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("evaluation score at response {i}"),
        });
    }
    Ok(())
}

fn weighted_by_rank(order: &[usize], weights: &[f64], eval: &[f64]) -> f64 {
    order
        .iter()
        .zip(weights)
        .filter(|(_, w)| **w != 0.0)
        .map(|(&idx, w)| w * eval[idx])
        .sum()
}

/// Exact expected `eval` score of the `ranking`-argmax over a random
/// `n`-subset of the pool.
pub fn bon_expected_reward(ranking: &[f64], eval: &[f64], n: usize) -> Result<f64> {
    check_aligned(ranking, eval)?;
    let weights = bon_weights(ranking.len(), n)?;
    let order = ascending_order(ranking)?;
    Ok(weighted_by_rank(&order, &weights, eval))
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Brute-force average over every `n`-subset. Test oracle; refuses more
/// than [`ENUMERATION_BUDGET`] subsets.
pub fn enumeration_oracle(ranking: &[f64], eval: &[f64], n: usize) -> Result<f64> {
    check_aligned(ranking, eval)?;
    check_n(ranking.len(), n)?;
    let big_n = ranking.len();
    let count = binomial(big_n, n);
    if count > ENUMERATION_BUDGET {
        return Err(Error::Usage(format!(
            "enumerating C({big_n}, {n}) = {count:.3e} subsets exceeds the budget of {ENUMERATION_BUDGET:e}"
        )));
    }
    if let Some(i) = ranking.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite {
            context: format!("ranking score at response {i}"),
        });
    }

    // Winner of a subset: largest ranking score, ties to the larger index.
    let beats = |a: usize, b: usize| ranking[a] > ranking[b] || (ranking[a] == ranking[b] && a > b);
    let mut subset: Vec<usize> = (0..n).collect();
    let mut total = 0.0;
    let mut visited = 0usize;
    loop {
        let best = subset
            .iter()
            .copied()
            .reduce(|a, b| if beats(b, a) { b } else { a })
            .unwrap();
        total += eval[best];
        visited += 1;

        // Next combination in lexicographic order.
        let mut i = n;
        while i > 0 && subset[i - 1] == big_n - n + i - 1 {
            i -= 1;
        }
        if i == 0 {
            break;
        }
        subset[i - 1] += 1;
        for j in i..n {
            subset[j] = subset[j - 1] + 1;
        }
    }
    Ok(total / visited as f64)
}

/// Scores for one prompt's responses, one column per evaluator, all
/// index-aligned.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptResponses {
    pub prompt_id: u64,
    pub response_ids: Vec<u64>,
    /// `columns[e][j]` is evaluator `e`'s score for response `j`.
    pub columns: Vec<Vec<f64>>,
}

/// Fixed pool of sampled responses with aligned per-evaluator scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePool {
    evaluators: Vec<String>,
    prompts: Vec<PromptResponses>,
}

impl ResponsePool {
    pub fn new(evaluators: Vec<String>, prompts: Vec<PromptResponses>) -> Result<Self> {
        if evaluators.is_empty() {
            return Err(Error::Usage("pool needs at least one evaluator column".into()));
        }
        for (i, name) in evaluators.iter().enumerate() {
            if evaluators[..i].contains(name) {
                return Err(Error::Usage(format!("duplicate evaluator column `{name}`")));
            }
        }
        for p in &prompts {
            let n = p.response_ids.len();
            if n == 0 {
                return Err(Error::Usage(format!("prompt {} has no responses", p.prompt_id)));
            }
            if p.columns.len() != evaluators.len() {
                return Err(Error::Shape(format!(
                    "prompt {} has {} score columns for {} evaluators",
                    p.prompt_id,
                    p.columns.len(),
                    evaluators.len()
                )));
            }
            for (name, col) in evaluators.iter().zip(&p.columns) {
                if col.len() != n {
                    return Err(Error::Shape(format!(
                        "prompt {}: evaluator `{name}` has {} scores for {n} responses",
                        p.prompt_id,
                        col.len()
                    )));
                }
                if let Some(j) = col.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("prompt {}, evaluator `{name}`, response {j}", p.prompt_id),
                    });
                }
            }
        }
        Ok(ResponsePool { evaluators, prompts })
    }

    pub fn evaluators(&self) -> &[String] {
        &self.evaluators
    }

    pub fn prompts(&self) -> &[PromptResponses] {
        &self.prompts
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.evaluators
            .iter()
            .position(|e| e == name)
            .ok_or_else(|| Error::UnknownEvaluator(name.to_string()))
    }

    /// Smallest per-prompt response count.
    pub fn min_responses(&self) -> usize {
        self.prompts.iter().map(|p| p.response_ids.len()).min().unwrap_or(0)
    }

    /// All scores of one evaluator, prompt by prompt.
    pub fn column_values(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column_index(name)?;
        Ok(self.prompts.iter().flat_map(|p| p.columns[c].iter().copied()).collect())
    }

    /// Applies `f` to every score of evaluator `name`.
    pub fn map_column(&mut self, name: &str, f: impl Fn(f64) -> f64) -> Result<()> {
        let c = self.column_index(name)?;
        for p in &mut self.prompts {
            p.columns[c].iter_mut().for_each(|v| *v = f(*v));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BonCurvePoint {
    pub n: usize,
    pub kl: f64,
    /// `(evaluator, prompt-averaged expected score)` in request order.
    pub values: Vec<(String, f64)>,
}

impl BonCurvePoint {
    pub fn value(&self, evaluator: &str) -> Option<f64> {
        self.values.iter().find(|(e, _)| e == evaluator).map(|(_, v)| *v)
    }
}

/// Prompt-averaged best-of-n curve. Responses are ranked by the `ranking`
/// column and scored by each of `evaluators`.
pub fn bon_curve(pool: &ResponsePool, ns: &[usize], ranking: &str, evaluators: &[&str]) -> Result<Vec<BonCurvePoint>> {
    let rank_col = pool.column_index(ranking)?;
    let eval_cols = evaluators
        .iter()
        .map(|e| pool.column_index(e))
        .collect::<Result<Vec<_>>>()?;
    if pool.prompts().is_empty() {
        return Err(Error::Usage("pool has no prompts".into()));
    }
    let big_n = pool.min_responses();
    for &n in ns {
        check_n(big_n, n)?;
    }

    // per_prompt[p][point][evaluator]
    let per_prompt = pool
        .prompts()
        .par_iter()
        .map(|p| -> Result<Vec<Vec<f64>>> {
            let order = ascending_order(&p.columns[rank_col])?;
            ns.iter()
                .map(|&n| {
                    let w = bon_weights(order.len(), n)?;
                    Ok(eval_cols
                        .iter()
                        .map(|&c| weighted_by_rank(&order, &w, &p.columns[c]))
                        .collect())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;

    let prompts = per_prompt.len() as f64;
    ns.iter()
        .enumerate()
        .map(|(k, &n)| {
            let values = evaluators
                .iter()
                .enumerate()
                .map(|(e, name)| {
                    let terms: Vec<f64> = per_prompt.iter().map(|p| p[k][e]).collect();
                    (name.to_string(), pairwise_sum(&terms) / prompts)
                })
                .collect();
            Ok(BonCurvePoint {
                n,
                kl: kl_bon(n)?,
                values,
            })
        })
        .collect()
}

/// One row of the curve CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub k: f64,
    pub n: usize,
    pub kl: f64,
    pub evaluator: String,
    pub value: f64,
}

/// Flattens curve points into CSV rows for one method.
pub fn curve_rows(method: &str, k: f64, points: &[BonCurvePoint]) -> Vec<CurveRow> {
    points
        .iter()
        .flat_map(|p| {
            p.values.iter().map(move |(e, v)| CurveRow {
                method: method.to_string(),
                k,
                n: p.n,
                kl: p.kl,
                evaluator: e.clone(),
                value: *v,
            })
        })
        .collect()
}

/// Powers of two up to and including `max` (plus `max` itself when it is
/// not a power of two).
pub fn powers_of_two_grid(max: usize) -> Vec<usize> {
    let mut ns = Vec::new();
    let mut n = 1;
    while n <= max {
        ns.push(n);
        n *= 2;
    }
    if ns.last() != Some(&max) && max > 0 {
        ns.push(max);
    }
    ns
}
