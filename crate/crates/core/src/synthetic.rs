//! Synthetic gold/proxy world and the best-of-n overoptimization experiment.
//!
//! Prompts are Gaussian feature vectors. A response to a prompt is the prompt
//! plus an isotropic Gaussian perturbation of scale `policy_spread`; best-of-n
//! selection therefore reaches into the tails of the perturbation
//! distribution, where the proxy has seen little data. A frozen, wider random
//! network plays the gold reward model, labels the training pairs, and scores
//! the validation pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bon::{bon_curve, curve_rows, powers_of_two_grid, CurveRow, PromptResponses, ResponsePool};
use crate::laplace::{fit_ggn_posterior, PosteriorState, RewardDistribution};
use crate::numerics::{dot, sigmoid_unchecked, DenseMatrix, SeededGenerator};
use crate::reward_model::{train_map, Architecture, PreferenceExample, RewardNet, TrainConfig};
use crate::scoring::{ensemble_penalized_reward, penalized_reward, Penalty, PenaltyKind};
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Evaluator column names used in experiment pools and tables.
pub const GOLD: &str = "gold";
pub const PROXY_EVAL: &str = "proxy";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelMode {
    /// Winner drawn from the gold Bradley-Terry probability.
    Sample,
    /// Winner is the higher gold reward; ties go to the first response.
    Argmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldConfig {
    pub hidden: Vec<usize>,
    /// Multiplier on the `1/√n_in` weight scale.
    pub weight_gain: f64,
    /// Multiplier applied to the network output.
    pub output_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub gold: u64,
    pub data: u64,
    /// Frozen base weights shared by every proxy member.
    pub base_model: u64,
    /// Member `i` uses adapter seed `members + i` and data-order seed
    /// `members + 1000 + i`.
    pub members: u64,
}

/// Proxy optimization settings; the training seed comes from [`Seeds`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub prior_precision: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub format_version: u32,
    pub d_in: usize,
    pub prompts_train: usize,
    pub pairs_per_prompt: usize,
    pub prompts_val: usize,
    pub responses_per_prompt: usize,
    pub prompt_spread: f64,
    pub policy_spread: f64,
    pub label_mode: LabelMode,
    pub gold: GoldConfig,
    pub proxy: Architecture,
    pub training: TrainingConfig,
    pub ensemble_size: usize,
    pub penalty_kinds: Vec<PenaltyKind>,
    pub k_grid: Vec<f64>,
    /// Empty means powers of two up to `responses_per_prompt`.
    pub n_grid: Vec<usize>,
    pub seeds: Seeds,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            format_version: FORMAT_VERSION,
            d_in: 8,
            prompts_train: 200,
            pairs_per_prompt: 2,
            prompts_val: 100,
            responses_per_prompt: 1024,
            prompt_spread: 0.5,
            policy_spread: 1.5,
            label_mode: LabelMode::Sample,
            gold: GoldConfig {
                hidden: vec![64],
                weight_gain: 1.5,
                output_scale: 1.0,
            },
            proxy: Architecture::default(),
            training: TrainingConfig {
                learning_rate: 1e-3,
                steps: 8000,
                batch_size: 32,
                prior_precision: 2.0,
            },
            ensemble_size: 3,
            penalty_kinds: vec![PenaltyKind::Std, PenaltyKind::Var],
            k_grid: vec![1.0, 3.0, 5.0, 10.0, 20.0, 30.0],
            n_grid: Vec::new(),
            seeds: Seeds {
                gold: 6,
                data: 2,
                base_model: 3,
                members: 100,
            },
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Version {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.d_in == 0 || self.proxy.input_dim != self.d_in {
            return usage(format!(
                "d_in ({}) must be positive and match proxy.input_dim ({})",
                self.d_in, self.proxy.input_dim
            ));
        }
        for (name, v) in [
            ("prompts_train", self.prompts_train),
            ("pairs_per_prompt", self.pairs_per_prompt),
            ("prompts_val", self.prompts_val),
            ("responses_per_prompt", self.responses_per_prompt),
            ("ensemble_size", self.ensemble_size),
            ("training.steps", self.training.steps),
            ("training.batch_size", self.training.batch_size),
        ] {
            if v == 0 {
                return usage(format!("{name} must be at least 1"));
            }
        }
        if self.gold.hidden.is_empty() || self.gold.hidden.contains(&0) {
            return usage("gold.hidden needs at least one non-empty layer".into());
        }
        for (name, v) in [
            ("prompt_spread", self.prompt_spread),
            ("policy_spread", self.policy_spread),
            ("gold.weight_gain", self.gold.weight_gain),
            ("gold.output_scale", self.gold.output_scale),
        ] {
            if !v.is_finite() || v < 0.0 {
                return usage(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.training.prior_precision.is_finite() && self.training.prior_precision > 0.0) {
            return usage("training.prior_precision must be > 0".into());
        }
        for &k in &self.k_grid {
            Penalty::new(PenaltyKind::Std, k)?;
        }
        let ns = self.ns();
        if ns.is_empty() || ns.contains(&0) {
            return usage("n grid must be non-empty with every n >= 1".into());
        }
        if let Some(&n) = ns.iter().find(|&&n| n > self.responses_per_prompt) {
            return Err(Error::ExceedsPool {
                n,
                pool_size: self.responses_per_prompt,
            });
        }
        Ok(())
    }

    pub fn ns(&self) -> Vec<usize> {
        if self.n_grid.is_empty() {
            powers_of_two_grid(self.responses_per_prompt)
        } else {
            self.n_grid.clone()
        }
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }

    pub fn train_config(&self, member: usize) -> TrainConfig {
        TrainConfig {
            learning_rate: self.training.learning_rate,
            steps: self.training.steps,
            batch_size: self.training.batch_size,
            prior_precision: self.training.prior_precision,
            seed: self.seeds.members.wrapping_add(1000 + member as u64),
        }
    }

    pub fn member_adapter_seed(&self, member: usize) -> u64 {
        self.seeds.members.wrapping_add(member as u64)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Frozen random network used as the ground-truth reward.
#[derive(Debug, Clone, PartialEq)]
pub struct GoldModel {
    layers: Vec<(DenseMatrix, Vec<f64>)>,
    head: Vec<f64>,
    output_scale: f64,
}

impl GoldModel {
    pub fn new(d_in: usize, cfg: &GoldConfig, seed: u64) -> Self {
        let mut rng = SeededGenerator::new(seed);
        let mut layers = Vec::with_capacity(cfg.hidden.len());
        let mut n_in = d_in;
        for &n_out in &cfg.hidden {
            let w = DenseMatrix::gaussian(n_out, n_in, cfg.weight_gain / (n_in as f64).sqrt(), &mut rng);
            let b = (0..n_out).map(|_| 0.5 * rng.gaussian()).collect();
            layers.push((w, b));
            n_in = n_out;
        }
        let head = (0..n_in).map(|_| rng.gaussian() / (n_in as f64).sqrt()).collect();
        GoldModel {
            layers,
            head,
            output_scale: cfg.output_scale,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].0.cols()
    }

    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "gold model expects dimension {}, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        let mut a = x.to_vec();
        for (w, b) in &self.layers {
            a = (0..w.rows()).map(|o| (dot(w.row(o), &a) + b[o]).tanh()).collect();
        }
        Ok(self.output_scale * dot(&self.head, &a))
    }
}

/// Gold model plus the prompt distribution and the response policy.
#[derive(Debug, Clone)]
pub struct World {
    pub gold: GoldModel,
    pub d_in: usize,
    pub prompt_spread: f64,
    pub policy_spread: f64,
}

impl World {
    pub fn sample_prompt(&self, rng: &mut SeededGenerator) -> Vec<f64> {
        (0..self.d_in).map(|_| self.prompt_spread * rng.gaussian()).collect()
    }

    pub fn sample_response(&self, prompt: &[f64], rng: &mut SeededGenerator) -> Vec<f64> {
        prompt.iter().map(|p| p + self.policy_spread * rng.gaussian()).collect()
    }
}

pub fn make_world(cfg: &WorldConfig) -> Result<World> {
    cfg.validate()?;
    Ok(World {
        gold: GoldModel::new(cfg.d_in, &cfg.gold, cfg.seeds.gold),
        d_in: cfg.d_in,
        prompt_spread: cfg.prompt_spread,
        policy_spread: cfg.policy_spread,
    })
}

/// An unlabeled pair of responses to one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponsePair {
    pub prompt_id: u64,
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

/// Labels pairs with the gold model. `rng` is only consumed in
/// [`LabelMode::Sample`], one uniform draw per pair.
pub fn label_preferences(
    gold: &GoldModel,
    pairs: &[ResponsePair],
    mode: LabelMode,
    rng: &mut SeededGenerator,
) -> Result<Vec<PreferenceExample>> {
    pairs
        .iter()
        .map(|pair| {
            let g1 = gold.reward(&pair.first)?;
            let g2 = gold.reward(&pair.second)?;
            let first_wins = match mode {
                LabelMode::Argmax => g1 >= g2,
                LabelMode::Sample => rng.bernoulli(sigmoid_unchecked(g1 - g2)),
            };
            let (winner, loser) = if first_wins {
                (pair.first.clone(), pair.second.clone())
            } else {
                (pair.second.clone(), pair.first.clone())
            };
            Ok(PreferenceExample {
                prompt_id: pair.prompt_id,
                winner,
                loser,
            })
        })
        .collect()
}

/// Validation prompts with their sampled responses and gold scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationPrompt {
    pub prompt_id: u64,
    pub responses: Vec<Vec<f64>>,
    pub gold: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
    pub train_fingerprint: String,
}

#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub train: Vec<PreferenceExample>,
    pub validation: Vec<ValidationPrompt>,
    pub provenance: Provenance,
}

/// Training pairs (labeled) and the validation response pool, regenerated
/// bit-exactly from the config.
///
/// Streams of the data seed: 0 training prompts and responses, 1 labels,
/// 2 validation prompts and responses.
pub fn generate_dataset(cfg: &WorldConfig, world: &World) -> Result<GeneratedDataset> {
    let root = SeededGenerator::new(cfg.seeds.data);
    let mut train_rng = root.fork(0);
    let mut label_rng = root.fork(1);
    let mut val_rng = root.fork(2);

    let mut pairs = Vec::with_capacity(cfg.prompts_train * cfg.pairs_per_prompt);
    for p in 0..cfg.prompts_train {
        let prompt = world.sample_prompt(&mut train_rng);
        for _ in 0..cfg.pairs_per_prompt {
            let first = world.sample_response(&prompt, &mut train_rng);
            let second = world.sample_response(&prompt, &mut train_rng);
            pairs.push(ResponsePair {
                prompt_id: p as u64,
                first,
                second,
            });
        }
    }
    let train = label_preferences(&world.gold, &pairs, cfg.label_mode, &mut label_rng)?;

    let mut validation = Vec::with_capacity(cfg.prompts_val);
    for p in 0..cfg.prompts_val {
        let prompt = world.sample_prompt(&mut val_rng);
        let responses: Vec<Vec<f64>> = (0..cfg.responses_per_prompt)
            .map(|_| world.sample_response(&prompt, &mut val_rng))
            .collect();
        let gold = responses
            .iter()
            .map(|r| world.gold.reward(r))
            .collect::<Result<Vec<_>>>()?;
        validation.push(ValidationPrompt {
            prompt_id: (cfg.prompts_train + p) as u64,
            responses,
            gold,
        });
    }

    Ok(GeneratedDataset {
        provenance: Provenance {
            config_hash: cfg.hash(),
            seeds: cfg.seeds.clone(),
            train_fingerprint: crate::reward_model::dataset_fingerprint(&train),
        },
        train,
        validation,
    })
}

/// One trained proxy member and its Laplace posterior.
#[derive(Debug, Clone)]
pub struct Member {
    pub net: RewardNet,
    pub posterior: PosteriorState,
    pub trace: Vec<f64>,
}

/// Trains `ensemble_size` proxies that share frozen base weights but differ
/// in adapter/head initialization and data order.
pub fn train_members(cfg: &WorldConfig, train: &[PreferenceExample]) -> Result<Vec<(RewardNet, Vec<f64>)>> {
    (0..cfg.ensemble_size)
        .into_par_iter()
        .map(|i| {
            let init = RewardNet::init(&cfg.proxy, cfg.seeds.base_model, cfg.member_adapter_seed(i))?;
            train_map(&init, train, &cfg.train_config(i))
        })
        .collect()
}

pub fn fit_members(
    trained: Vec<(RewardNet, Vec<f64>)>,
    train: &[PreferenceExample],
    prior_precision: f64,
) -> Result<Vec<Member>> {
    trained
        .into_iter()
        .map(|(net, trace)| {
            let posterior = fit_ggn_posterior(&net, train, prior_precision)?;
            Ok(Member { net, posterior, trace })
        })
        .collect()
}

/// Per-member reward distributions for every validation response:
/// `result[prompt][member][response]`.
pub fn member_predictions(
    members: &[Member],
    validation: &[ValidationPrompt],
) -> Result<Vec<Vec<Vec<RewardDistribution>>>> {
    validation
        .par_iter()
        .map(|vp| {
            members
                .iter()
                .map(|m| {
                    m.posterior.check_matches(&m.net)?;
                    vp.responses
                        .iter()
                        .map(|x| {
                            let (mean, jac) = m.net.value_and_gradient(x)?;
                            let variance = m.posterior.variance_along(&jac)?;
                            RewardDistribution::new(mean, variance).map_err(|_| Error::NonFinite {
                                context: format!("member prediction for prompt {}", vp.prompt_id),
                            })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect()
}

/// A ranking rule evaluated in the experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Method {
    pub name: String,
    pub k: f64,
    pub ensemble: bool,
    pub penalty: Penalty,
}

impl Method {
    /// Pool column holding this method's ranking scores.
    pub fn column(&self) -> String {
        format!("rank:{}@{}", self.name, self.k)
    }

    /// Evaluator reported as "proxy" for this method: the unpenalized
    /// single-model or ensemble-mean reward.
    pub fn proxy_column(&self) -> &'static str {
        if self.ensemble {
            "ens_mean"
        } else {
            "map"
        }
    }
}

/// MAP, LA-{kind}, Ens, LA-Ens-{kind} for every configured kind and k.
pub fn methods(cfg: &WorldConfig) -> Vec<Method> {
    let mut out = Vec::new();
    for ensemble in [false, true] {
        let (base, la) = if ensemble { ("Ens", "LA-Ens") } else { ("MAP", "LA") };
        out.push(Method {
            name: base.into(),
            k: 0.0,
            ensemble,
            penalty: Penalty::NONE,
        });
        for &kind in &cfg.penalty_kinds {
            if kind == PenaltyKind::None {
                continue;
            }
            for &k in &cfg.k_grid {
                out.push(Method {
                    name: format!("{la}-{kind}"),
                    k,
                    ensemble,
                    penalty: Penalty { kind, k },
                });
            }
        }
    }
    out
}

/// Affine baseline of one evaluator over the whole pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean: f64,
    pub std: f64,
}

impl BaselineStats {
    /// Population mean and standard deviation of `values`.
    pub fn from_values(name: &str, values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DegeneratePool(name.to_string()));
        }
        let n = values.len() as f64;
        let mean = crate::numerics::compensated_sum(values.iter().copied()) / n;
        let var = crate::numerics::compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
        let std = var.sqrt();
        if !std.is_finite() || std <= 0.0 {
            return Err(Error::DegeneratePool(name.to_string()));
        }
        Ok(BaselineStats { mean, std })
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Z-scores `values` in place against `stats`.
pub fn normalize_scores(values: &mut [f64], stats: BaselineStats) {
    values.iter_mut().for_each(|v| *v = stats.normalize(*v));
}

/// Normalizes each named pool column against its own full-pool statistics.
pub fn normalize_pool_columns(pool: &mut ResponsePool, columns: &[&str]) -> Result<Vec<(String, BaselineStats)>> {
    columns
        .iter()
        .map(|&c| {
            let stats = BaselineStats::from_values(c, &pool.column_values(c)?)?;
            pool.map_column(c, |v| stats.normalize(v))?;
            Ok((c.to_string(), stats))
        })
        .collect()
}

/// Builds the validation pool: gold, MAP, ensemble mean, and one ranking
/// column per method.
pub fn build_pool(
    methods: &[Method],
    validation: &[ValidationPrompt],
    predictions: &[Vec<Vec<RewardDistribution>>],
) -> Result<ResponsePool> {
    let mut evaluators = vec![GOLD.to_string(), "map".to_string(), "ens_mean".to_string()];
    evaluators.extend(methods.iter().map(Method::column));

    let prompts = validation
        .iter()
        .zip(predictions)
        .map(|(vp, per_member)| {
            let n = vp.responses.len();
            let member_dists = |j: usize| -> Vec<RewardDistribution> { per_member.iter().map(|m| m[j]).collect() };
            let mut columns = vec![vp.gold.clone(), Vec::with_capacity(n), Vec::with_capacity(n)];
            for j in 0..n {
                let ms = member_dists(j);
                columns[1].push(ms[0].mean);
                columns[2].push(ensemble_penalized_reward(&ms, Penalty::NONE)?);
            }
            for m in methods {
                let col = (0..n)
                    .map(|j| {
                        let ms = member_dists(j);
                        if m.ensemble {
                            ensemble_penalized_reward(&ms, m.penalty)
                        } else {
                            penalized_reward(&ms[0], m.penalty)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                columns.push(col);
            }
            Ok(PromptResponses {
                prompt_id: vp.prompt_id,
                response_ids: (0..n as u64).collect(),
                columns,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ResponsePool::new(evaluators, prompts)
}

/// Normalized BoN curves for every method against the proxy and gold
/// evaluators.
pub fn experiment_rows(pool: &ResponsePool, methods: &[Method], ns: &[usize]) -> Result<Vec<CurveRow>> {
    let mut pool = pool.clone();
    normalize_pool_columns(&mut pool, &[GOLD, "map", "ens_mean"])?;
    let mut rows = Vec::new();
    for m in methods {
        let points = bon_curve(&pool, ns, &m.column(), &[m.proxy_column(), GOLD])?;
        let mut method_rows = curve_rows(&m.name, m.k, &points);
        for r in &mut method_rows {
            if r.evaluator != GOLD {
                r.evaluator = PROXY_EVAL.to_string();
            }
            if !r.value.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("curve value for {} k={} n={}", r.method, r.k, r.n),
                });
            }
        }
        rows.extend(method_rows);
    }
    Ok(rows)
}

/// Mean member-0 variance over the top and bottom proxy deciles of each
/// prompt, averaged over prompts.
pub fn decile_uncertainty(predictions: &[Vec<Vec<RewardDistribution>>]) -> (f64, f64) {
    let mut top = Vec::new();
    let mut bottom = Vec::new();
    for per_member in predictions {
        let dists = &per_member[0];
        let mut idx: Vec<usize> = (0..dists.len()).collect();
        idx.sort_by(|&a, &b| dists[a].mean.total_cmp(&dists[b].mean).then(a.cmp(&b)));
        let tenth = (dists.len() / 10).max(1);
        let mean_var = |ids: &[usize]| ids.iter().map(|&i| dists[i].variance).sum::<f64>() / ids.len() as f64;
        bottom.push(mean_var(&idx[..tenth]));
        top.push(mean_var(&idx[idx.len() - tenth..]));
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    (avg(&top), avg(&bottom))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub train_fingerprint: String,
    pub train_examples: usize,
    pub validation_prompts: usize,
    pub responses_per_prompt: usize,
    pub parameter_count: usize,
    pub rows: usize,
    pub top_decile_variance: f64,
    pub bottom_decile_variance: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<CurveRow>,
    pub manifest: Manifest,
}

impl ExperimentResult {
    pub fn value(&self, method: &str, k: f64, n: usize, evaluator: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.k == k && r.n == n && r.evaluator == evaluator)
            .map(|r| r.value)
    }

    /// `(n, value)` pairs for one method/k/evaluator, in grid order.
    pub fn curve(&self, method: &str, k: f64, evaluator: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.method == method && r.k == k && r.evaluator == evaluator)
            .map(|r| (r.n, r.value))
            .collect()
    }
}

/// Everything up to the validation predictions, shared by the full
/// experiment and by callers that want to vary the posterior.
pub struct PreparedExperiment {
    pub dataset: GeneratedDataset,
    pub trained: Vec<(RewardNet, Vec<f64>)>,
}

pub fn prepare_experiment(cfg: &WorldConfig) -> Result<PreparedExperiment> {
    let world = make_world(cfg)?;
    let dataset = generate_dataset(cfg, &world)?;
    let trained = train_members(cfg, &dataset.train)?;
    Ok(PreparedExperiment { dataset, trained })
}

/// Fits posteriors with `prior_precision` and produces the experiment table.
pub fn finish_experiment(
    cfg: &WorldConfig,
    prepared: &PreparedExperiment,
    prior_precision: f64,
) -> Result<ExperimentResult> {
    let members = fit_members(prepared.trained.clone(), &prepared.dataset.train, prior_precision)?;
    let predictions = member_predictions(&members, &prepared.dataset.validation)?;
    let methods = methods(cfg);
    let pool = build_pool(&methods, &prepared.dataset.validation, &predictions)?;
    let rows = experiment_rows(&pool, &methods, &cfg.ns())?;
    let (top, bottom) = decile_uncertainty(&predictions);
    let prov = &prepared.dataset.provenance;
    Ok(ExperimentResult {
        manifest: Manifest {
            format_version: FORMAT_VERSION,
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: prov.config_hash.clone(),
            seeds: prov.seeds.clone(),
            train_fingerprint: prov.train_fingerprint.clone(),
            train_examples: prepared.dataset.train.len(),
            validation_prompts: prepared.dataset.validation.len(),
            responses_per_prompt: cfg.responses_per_prompt,
            parameter_count: members[0].net.param_count(),
            rows: rows.len(),
            top_decile_variance: top,
            bottom_decile_variance: bottom,
        },
        rows,
    })
}

/// Data generation, proxy ensemble training, Laplace fitting, pool scoring
/// and normalized BoN curves for every method.
pub fn run_overoptimization_experiment(cfg: &WorldConfig) -> Result<ExperimentResult> {
    let prepared = prepare_experiment(cfg)?;
    finish_experiment(cfg, &prepared, cfg.training.prior_precision)
}

/// Number of rows `run_overoptimization_experiment` emits for `cfg`.
pub fn expected_row_count(cfg: &WorldConfig) -> usize {
    methods(cfg).len() * cfg.ns().len() * 2
}
