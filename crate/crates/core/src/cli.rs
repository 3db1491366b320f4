//! Command-line front end.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or I/O,
//! 3 schema or version, 4 numerical failure, 5 stale posterior,
//! 6 unknown evaluator, 7 best-of-n `n` larger than the pool.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::bon::{bon_curve, curve_rows, CurveRow, PromptResponses, ResponsePool, PROXY};
use crate::io::{self, ModelCheckpoint, PosteriorFile, TrainingRecord};
use crate::laplace::{fit_ggn_posterior, predictive_reward, PosteriorState, RewardDistribution};
use crate::reward_model::{dataset_fingerprint, train_map, RewardNet};
use crate::scoring::{ensemble_distribution, ensemble_penalized_reward, penalized_reward, Penalty, PenaltyKind};
use crate::synthetic::{generate_dataset, make_world, run_overoptimization_experiment, GOLD};
use crate::verify::{self, VerifyOptions};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "bayesrm",
    version,
    about = "Bayesian reward models with Laplace-LoRA and best-of-n evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate labeled preference pairs and a validation response pool.
    GenData(GenDataArgs),
    /// Train one MAP reward model on a preference file.
    TrainReward(TrainArgs),
    /// Fit the linearized Laplace posterior of a trained model.
    FitLaplace(FitArgs),
    /// Predictive reward, variance and penalized scores for given inputs.
    Score(ScoreArgs),
    /// Best-of-n curves over a response pool.
    BonCurve(CurveArgs),
    /// Run the full gold/proxy overoptimization experiment.
    Experiment(ExperimentArgs),
    /// Run the built-in oracle suite.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    /// Preference CSV, or a directory containing `preferences.csv`.
    #[arg(long)]
    data: PathBuf,
    /// Ensemble member index; selects adapter initialization and data order.
    #[arg(long, default_value_t = 0)]
    member: usize,
    /// Overrides the member seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output checkpoint path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    model: PathBuf,
    /// Preference CSV, or a directory containing `preferences.csv`.
    #[arg(long)]
    data: PathBuf,
    /// Defaults to the precision the model was trained with.
    #[arg(long)]
    prior_precision: Option<f64>,
    /// Output posterior path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Model checkpoint; repeat together with --posterior for an ensemble.
    #[arg(long, required = true)]
    model: Vec<PathBuf>,
    #[arg(long, required = true)]
    posterior: Vec<PathBuf>,
    /// Comma-separated feature vector; may be repeated.
    #[arg(long, allow_hyphen_values = true)]
    input: Vec<String>,
    /// Validation CSV to score into a response pool.
    #[arg(long)]
    validation: Option<PathBuf>,
    #[arg(long, default_value = "var")]
    penalty: PenaltyKind,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0])]
    k: Vec<f64>,
    /// Pool CSV written when --validation is given.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CurveArgs {
    #[arg(long)]
    pool: PathBuf,
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<usize>,
    /// Evaluator columns to report.
    #[arg(long, value_delimiter = ',', default_values_t = [PROXY.to_string()])]
    evaluator: Vec<String>,
    /// Penalty of the ranking column; `none` ranks by `proxy_score`.
    #[arg(long, default_value = "none")]
    penalty: PenaltyKind,
    /// Penalty coefficients; each ranks by the pool column `<penalty>@<k>`.
    #[arg(long, value_delimiter = ',')]
    k: Vec<f64>,
    /// Curve CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the data seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Adds this amount to one best-of-n weight (negative control).
    #[arg(long, hide = true, default_value_t = 0.0)]
    perturb_bon_weight: f64,
}

pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_SCHEMA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;
pub const EXIT_STALE_POSTERIOR: i32 = 5;
pub const EXIT_UNKNOWN_EVALUATOR: i32 = 6;
pub const EXIT_EXCEEDS_POOL: i32 = 7;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Io { .. } => EXIT_USAGE,
        Error::Schema { .. } | Error::Version { .. } | Error::Shape(_) => EXIT_SCHEMA,
        Error::Domain(_)
        | Error::NotPositiveDefinite { .. }
        | Error::Diverged { .. }
        | Error::Invariant(_)
        | Error::DegeneratePool(_)
        | Error::NonFinite { .. } => EXIT_NUMERICAL,
        Error::StalePosterior(_) => EXIT_STALE_POSTERIOR,
        Error::UnknownEvaluator(_) => EXIT_UNKNOWN_EVALUATOR,
        Error::ExceedsPool { .. } => EXIT_EXCEEDS_POOL,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::GenData(a) => gen_data(a),
        Command::TrainReward(a) => train_reward(a),
        Command::FitLaplace(a) => fit_laplace(a),
        Command::Score(a) => score(a),
        Command::BonCurve(a) => curve(a),
        Command::Experiment(a) => experiment(a),
        Command::Verify(a) => Ok(run_verify(a)),
    }
}

fn preferences_path(data: &Path) -> PathBuf {
    if data.is_dir() {
        data.join(io::PREFERENCES_FILE)
    } else {
        data.to_path_buf()
    }
}

fn gen_data(a: GenDataArgs) -> Result<i32> {
    let mut cfg = io::load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seeds.data = seed;
    }
    let world = make_world(&cfg)?;
    let data = generate_dataset(&cfg, &world)?;
    let manifest = io::write_dataset(&a.out, &cfg, &data)?;
    println!(
        "wrote {} preference pairs and {} x {} validation responses to {} (config {})",
        manifest.train_examples,
        manifest.validation_prompts,
        manifest.responses_per_prompt,
        a.out.display(),
        manifest.config_hash
    );
    Ok(0)
}

fn train_reward(a: TrainArgs) -> Result<i32> {
    let mut cfg = io::load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seeds.members = seed;
    }
    let data = io::load_preferences(&preferences_path(&a.data))?;
    if let Some(ex) = data.iter().find(|ex| ex.winner.len() != cfg.d_in) {
        return Err(Error::Shape(format!(
            "preference features have dimension {} but the config has d_in = {}",
            ex.winner.len(),
            cfg.d_in
        )));
    }
    let adapter_seed = cfg.member_adapter_seed(a.member);
    let init = RewardNet::init(&cfg.proxy, cfg.seeds.base_model, adapter_seed)?;
    let train_cfg = cfg.train_config(a.member);
    let (net, trace) = train_map(&init, &data, &train_cfg)?;
    let final_loss = *trace.last().expect("training runs at least one step");
    let record = TrainingRecord {
        prior_precision: train_cfg.prior_precision,
        learning_rate: train_cfg.learning_rate,
        steps: train_cfg.steps,
        batch_size: train_cfg.batch_size,
        seed: train_cfg.seed,
        dataset_fingerprint: dataset_fingerprint(&data),
        final_loss,
    };
    io::write_json(
        &a.out,
        &ModelCheckpoint::new(&net, cfg.seeds.base_model, adapter_seed, Some(record)),
    )?;
    println!(
        "trained {} parameters on {} pairs, final batch loss {final_loss:.6}; wrote {}",
        net.param_count(),
        data.len(),
        a.out.display()
    );
    Ok(0)
}

fn fit_laplace(a: FitArgs) -> Result<i32> {
    let (ckpt, net) = io::load_checkpoint(&a.model)?;
    let data = io::load_preferences(&preferences_path(&a.data))?;
    let fingerprint = dataset_fingerprint(&data);
    if let Some(t) = &ckpt.training {
        if t.dataset_fingerprint != fingerprint {
            return Err(Error::StalePosterior(format!(
                "{} was trained on data {} but the preference file has fingerprint {fingerprint}",
                a.model.display(),
                t.dataset_fingerprint
            )));
        }
    }
    let lambda = a
        .prior_precision
        .or(ckpt.training.as_ref().map(|t| t.prior_precision))
        .ok_or_else(|| Error::Usage("--prior-precision is required for an untrained checkpoint".into()))?;
    let post = fit_ggn_posterior(&net, &data, lambda)?;
    io::write_json(&a.out, &PosteriorFile::new(&post))?;
    println!(
        "fitted posterior over {} parameters on {} pairs (λ = {lambda}); wrote {}",
        post.param_count(),
        data.len(),
        a.out.display()
    );
    Ok(0)
}

fn parse_input(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Usage(format!("`{v}` in --input is not a number")))
        })
        .collect()
}

fn column_name(kind: PenaltyKind, k: f64) -> String {
    format!("{kind}@{k}")
}

fn score(a: ScoreArgs) -> Result<i32> {
    if a.model.len() != a.posterior.len() {
        return Err(Error::Usage(
            "--model and --posterior must be given the same number of times".into(),
        ));
    }
    let mut penalties: Vec<Penalty> = Vec::new();
    for &k in &a.k {
        let p = Penalty::new(a.penalty, k)?;
        if !penalties.contains(&p) {
            penalties.push(p);
        }
    }
    if a.input.is_empty() && a.validation.is_none() {
        return Err(Error::Usage("give --input and/or --validation".into()));
    }
    if a.validation.is_some() != a.out.is_some() {
        return Err(Error::Usage("--validation and --out go together".into()));
    }
    let inputs = a.input.iter().map(|s| parse_input(s)).collect::<Result<Vec<_>>>()?;
    let members = a
        .model
        .iter()
        .zip(&a.posterior)
        .map(|(m, p)| -> Result<(RewardNet, PosteriorState)> {
            let (_, net) = io::load_checkpoint(m)?;
            let post = io::load_posterior(p)?;
            post.check_matches(&net)
                .map_err(|e| Error::StalePosterior(format!("{} vs {}: {e}", p.display(), m.display())))?;
            Ok((net, post))
        })
        .collect::<Result<Vec<_>>>()?;
    let predict = |x: &[f64]| -> Result<Vec<RewardDistribution>> {
        members
            .iter()
            .map(|(net, post)| predictive_reward(post, net, x))
            .collect()
    };
    let penalized = |dists: &[RewardDistribution], p: Penalty| -> Result<f64> {
        if dists.len() == 1 {
            penalized_reward(&dists[0], p)
        } else {
            ensemble_penalized_reward(dists, p)
        }
    };

    for (i, x) in inputs.iter().enumerate() {
        let dists = predict(x)?;
        let fused = ensemble_distribution(&dists)?;
        let mut line = format!("input {i}: mean={} variance={}", fused.mean, fused.variance);
        for &p in &penalties {
            line.push_str(&format!(" {}={}", column_name(p.kind, p.k), penalized(&dists, p)?));
        }
        println!("{line}");
    }

    if let (Some(vpath), Some(out)) = (&a.validation, &a.out) {
        let validation = io::load_validation(vpath)?;
        let mut evaluators = vec![PROXY.to_string(), GOLD.to_string(), "variance".to_string()];
        evaluators.extend(penalties.iter().map(|p| column_name(p.kind, p.k)));
        let prompts = validation
            .iter()
            .map(|vp| -> Result<PromptResponses> {
                let mut columns = vec![Vec::new(); evaluators.len()];
                for (x, &g) in vp.responses.iter().zip(&vp.gold) {
                    let dists = predict(x)?;
                    let fused = ensemble_distribution(&dists)?;
                    columns[0].push(fused.mean);
                    columns[1].push(g);
                    columns[2].push(fused.variance);
                    for (c, p) in penalties.iter().enumerate() {
                        columns[3 + c].push(penalized(&dists, *p)?);
                    }
                }
                Ok(PromptResponses {
                    prompt_id: vp.prompt_id,
                    response_ids: (0..vp.responses.len() as u64).collect(),
                    columns,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let pool = ResponsePool::new(evaluators, prompts)?;
        io::write_text(out, &io::pool_csv(&pool)?)?;
        println!("wrote pool of {} prompts to {}", pool.prompts().len(), out.display());
    }
    Ok(0)
}

fn curve(a: CurveArgs) -> Result<i32> {
    let pool = io::load_pool(&a.pool)?;
    let evaluators: Vec<&str> = a.evaluator.iter().map(String::as_str).collect();
    for e in &evaluators {
        pool.column_index(e)?;
    }
    let rankings: Vec<(String, f64, String)> = if a.penalty == PenaltyKind::None || a.k.is_empty() {
        vec![(PROXY.to_string(), 0.0, PROXY.to_string())]
    } else {
        a.k.iter()
            .map(|&k| {
                Penalty::new(a.penalty, k)?;
                Ok((a.penalty.to_string(), k, column_name(a.penalty, k)))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let mut rows: Vec<CurveRow> = Vec::new();
    for (method, k, column) in &rankings {
        let points = bon_curve(&pool, &a.n, column, &evaluators)?;
        rows.extend(curve_rows(method, *k, &points));
    }
    let text = io::curve_csv(&rows)?;
    match &a.out {
        Some(path) => io::write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

pub const CURVES_FILE: &str = "curves.csv";

fn experiment(a: ExperimentArgs) -> Result<i32> {
    let mut cfg = io::load_config(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seeds.data = seed;
    }
    let result = run_overoptimization_experiment(&cfg)?;
    io::write_json(&a.out.join(io::CONFIG_FILE), &cfg)?;
    io::write_text(&a.out.join(CURVES_FILE), &io::curve_csv(&result.rows)?)?;
    io::write_json(&a.out.join(io::MANIFEST_FILE), &result.manifest)?;

    let big_n = *cfg.ns().last().expect("validated grid is non-empty");
    println!("{:<14}{:>6}{:>12}{:>12}", "method", "k", "proxy@N", "gold@N");
    let mut seen: Vec<(&str, f64)> = Vec::new();
    for r in &result.rows {
        if seen.contains(&(r.method.as_str(), r.k)) {
            continue;
        }
        seen.push((&r.method, r.k));
        let v = |e: &str| result.value(&r.method, r.k, big_n, e).unwrap_or(f64::NAN);
        println!("{:<14}{:>6}{:>12.4}{:>12.4}", r.method, r.k, v(PROXY), v(GOLD));
    }
    println!(
        "wrote {} rows to {} (config {})",
        result.rows.len(),
        a.out.join(CURVES_FILE).display(),
        result.manifest.config_hash
    );
    Ok(0)
}

fn run_verify(a: VerifyArgs) -> i32 {
    let report = verify::run(&VerifyOptions {
        bon_weight_perturbation: a.perturb_bon_weight,
    });
    println!("{report}");
    if report.all_passed() {
        0
    } else {
        EXIT_VERIFY_FAILED
    }
}
