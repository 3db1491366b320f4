//! Plain-text persistence: JSON documents for configs, checkpoints,
//! posteriors and manifests; CSV for preference data, response pools and
//! curves.
//!
//! Floats are written in Rust's shortest round-trip form, so every value
//! reads back bit-exactly.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::bon::{CurveRow, PromptResponses, ResponsePool, PROXY};
use crate::laplace::PosteriorState;
use crate::numerics::DenseMatrix;
use crate::reward_model::{Activation, LoraLayer, ParamVector, PreferenceExample, RewardNet};
use crate::synthetic::{GeneratedDataset, Seeds, ValidationPrompt, WorldConfig, FORMAT_VERSION};
use crate::{Error, Result};

/// Header of the pool column holding the ranking proxy's scores.
pub const PROXY_SCORE: &str = "proxy_score";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses a JSON document whose top level carries `format_version`; the
/// version is checked before the rest of the schema.
pub fn parse_versioned<T: DeserializeOwned>(path: &Path, text: &str, expected: u32) -> Result<T> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let found = value
        .get("format_version")
        .ok_or_else(|| Error::schema(path, "missing field `format_version`"))?
        .as_u64()
        .ok_or_else(|| Error::schema(path, "`format_version` must be a non-negative integer"))?;
    if found != expected as u64 {
        return Err(Error::Version {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            expected,
        });
    }
    // Re-parse from text so errors keep line/column positions.
    serde_json::from_str(text).map_err(|e| json_error(path, e))
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path, expected: u32) -> Result<T> {
    parse_versioned(path, &read_text(path)?, expected)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::schema(path, e.to_string()))?;
    text.push('\n');
    write_text(path, &text)
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::schema(path, format!("line {}, column {}: {e}", e.line(), e.column()))
}

pub fn load_config(path: &Path) -> Result<WorldConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Usage(format!("cannot read config file {}: {e}", path.display())))?;
    let cfg: WorldConfig = parse_versioned(path, &text, FORMAT_VERSION)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Facts recorded when a checkpoint was produced by training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingRecord {
    pub prior_precision: f64,
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub dataset_fingerprint: String,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub activation: Activation,
    pub base_seed: u64,
    pub adapter_seed: u64,
    pub layers: Vec<LoraLayer>,
    pub head: Vec<f64>,
    pub training: Option<TrainingRecord>,
}

impl ModelCheckpoint {
    pub fn new(net: &RewardNet, base_seed: u64, adapter_seed: u64, training: Option<TrainingRecord>) -> Self {
        ModelCheckpoint {
            format_version: FORMAT_VERSION,
            input_dim: net.input_dim(),
            hidden: net.layers().iter().map(LoraLayer::output_dim).collect(),
            rank: net.layers().first().map_or(0, |l| l.adapter.rank()),
            activation: net.activation(),
            base_seed,
            adapter_seed,
            layers: net.layers().to_vec(),
            head: net.head().to_vec(),
            training,
        }
    }

    /// Rebuilds the network, checking the declared dimensions against the
    /// stored arrays.
    pub fn to_net(&self) -> Result<RewardNet> {
        let widths: Vec<usize> = self.layers.iter().map(LoraLayer::output_dim).collect();
        if widths != self.hidden {
            return Err(Error::Shape(format!(
                "declared hidden widths {:?} but layers have {widths:?}",
                self.hidden
            )));
        }
        if let Some(i) = self.layers.iter().position(|l| l.adapter.rank() != self.rank) {
            return Err(Error::Shape(format!(
                "layer {i} adapter rank differs from declared rank {}",
                self.rank
            )));
        }
        RewardNet::from_parts(self.input_dim, self.activation, self.layers.clone(), self.head.clone())
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelCheckpoint, RewardNet)> {
    let ckpt: ModelCheckpoint = read_versioned(path, FORMAT_VERSION)?;
    let net = ckpt.to_net().map_err(|e| with_path(path, e))?;
    Ok((ckpt, net))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PosteriorFile {
    pub format_version: u32,
    pub theta_map: ParamVector,
    /// Posterior covariance `S`.
    pub covariance: DenseMatrix,
    pub prior_precision: f64,
    pub dataset_fingerprint: String,
}

impl PosteriorFile {
    pub fn new(post: &PosteriorState) -> Self {
        PosteriorFile {
            format_version: FORMAT_VERSION,
            theta_map: post.theta_map().clone(),
            covariance: post.covariance().clone(),
            prior_precision: post.prior_precision(),
            dataset_fingerprint: post.dataset_fingerprint().to_string(),
        }
    }

    pub fn to_state(&self) -> Result<PosteriorState> {
        PosteriorState::from_parts(
            self.theta_map.clone(),
            self.covariance.clone(),
            self.prior_precision,
            self.dataset_fingerprint.clone(),
        )
    }
}

pub fn load_posterior(path: &Path) -> Result<PosteriorState> {
    let file: PosteriorFile = read_versioned(path, FORMAT_VERSION)?;
    file.to_state().map_err(|e| with_path(path, e))
}

/// Attaches the file path to shape errors raised while validating a
/// loaded document.
fn with_path(path: &Path, e: Error) -> Error {
    match e {
        Error::Shape(m) => Error::schema(path, m),
        other => other,
    }
}

/// Written next to generated data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataManifest {
    pub format_version: u32,
    pub crate_version: String,
    pub config_hash: String,
    pub seeds: Seeds,
    pub train_fingerprint: String,
    pub d_in: usize,
    pub train_examples: usize,
    pub validation_prompts: usize,
    pub responses_per_prompt: usize,
    pub files: Vec<String>,
}

pub const PREFERENCES_FILE: &str = "preferences.csv";
pub const VALIDATION_FILE: &str = "validation.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.json";

/// Writes `config.json`, `preferences.csv`, `validation.csv` and
/// `manifest.json` into `dir`.
pub fn write_dataset(dir: &Path, cfg: &WorldConfig, data: &GeneratedDataset) -> Result<DataManifest> {
    write_json(&dir.join(CONFIG_FILE), cfg)?;
    write_text(&dir.join(PREFERENCES_FILE), &preferences_csv(&data.train, cfg.d_in)?)?;
    write_text(&dir.join(VALIDATION_FILE), &validation_csv(&data.validation, cfg.d_in)?)?;
    let manifest = DataManifest {
        format_version: FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: data.provenance.config_hash.clone(),
        seeds: data.provenance.seeds.clone(),
        train_fingerprint: data.provenance.train_fingerprint.clone(),
        d_in: cfg.d_in,
        train_examples: data.train.len(),
        validation_prompts: data.validation.len(),
        responses_per_prompt: cfg.responses_per_prompt,
        files: [CONFIG_FILE, PREFERENCES_FILE, VALIDATION_FILE]
            .map(String::from)
            .to_vec(),
    };
    write_json(&dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn csv_string(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let bad = |e: csv::Error| Error::Invariant(format!("csv encoding failed: {e}"));
    w.write_record(&header).map_err(bad)?;
    for r in rows {
        w.write_record(&r).map_err(bad)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Invariant(format!("csv encoding failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Invariant(e.to_string()))
}

fn feature_headers(prefix: &str, d: usize) -> impl Iterator<Item = String> + '_ {
    (0..d).map(move |i| format!("{prefix}{i}"))
}

fn check_width(v: &[f64], d: usize, what: &str) -> Result<()> {
    if v.len() != d {
        return Err(Error::Shape(format!("{what} has {} features, expected {d}", v.len())));
    }
    Ok(())
}

/// Columns `prompt_id, w0..w{d-1}, l0..l{d-1}`.
pub fn preferences_csv(data: &[PreferenceExample], d: usize) -> Result<String> {
    for ex in data {
        check_width(&ex.winner, d, "winner")?;
        check_width(&ex.loser, d, "loser")?;
    }
    let header = std::iter::once("prompt_id".to_string())
        .chain(feature_headers("w", d))
        .chain(feature_headers("l", d))
        .collect();
    csv_string(
        header,
        data.iter().map(|ex| {
            std::iter::once(ex.prompt_id.to_string())
                .chain(ex.winner.iter().chain(&ex.loser).map(|&v| fmt(v)))
                .collect()
        }),
    )
}

/// Columns `prompt_id, response_id, gold_score, x0..x{d-1}`.
pub fn validation_csv(data: &[ValidationPrompt], d: usize) -> Result<String> {
    for vp in data {
        for r in &vp.responses {
            check_width(r, d, "response")?;
        }
    }
    let header = ["prompt_id", "response_id", "gold_score"]
        .map(String::from)
        .into_iter()
        .chain(feature_headers("x", d))
        .collect();
    csv_string(
        header,
        data.iter().flat_map(|vp| {
            vp.responses.iter().zip(&vp.gold).enumerate().map(move |(j, (x, g))| {
                [vp.prompt_id.to_string(), j.to_string(), fmt(*g)]
                    .into_iter()
                    .chain(x.iter().map(|&v| fmt(v)))
                    .collect()
            })
        }),
    )
}

/// Parsed CSV table with 1-based file line numbers per record.
struct Table {
    path: PathBuf,
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

impl Table {
    fn parse(path: &Path, text: &str) -> Result<Table> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let header = r
            .headers()
            .map_err(|e| Error::schema(path, e.to_string()))?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::schema(path, e.to_string()))?;
            let line = rec.position().map_or(0, |p| p.line());
            rows.push((line, rec.iter().map(|s| s.trim().to_string()).collect()));
        }
        Ok(Table {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    fn err(&self, line: u64, message: impl std::fmt::Display) -> Error {
        Error::schema(&self.path, format!("line {line}: {message}"))
    }

    fn expect_prefix(&self, names: &[&str]) -> Result<()> {
        for (i, name) in names.iter().enumerate() {
            if self.header.get(i).map(String::as_str) != Some(*name) {
                return Err(self.err(1, format!("column {} must be `{name}`", i + 1)));
            }
        }
        Ok(())
    }

    fn u64_at(&self, line: u64, row: &[String], col: usize) -> Result<u64> {
        row[col]
            .parse()
            .map_err(|_| self.err(line, format!("`{}` is not a valid {}", row[col], self.header[col])))
    }

    fn f64_at(&self, line: u64, row: &[String], col: usize) -> Result<f64> {
        let v: f64 = row[col].parse().map_err(|_| {
            self.err(
                line,
                format!("`{}` is not a number in column {}", row[col], self.header[col]),
            )
        })?;
        if !v.is_finite() {
            return Err(self.err(line, format!("non-finite value in column {}", self.header[col])));
        }
        Ok(v)
    }

    fn f64_range(&self, line: u64, row: &[String], cols: std::ops::Range<usize>) -> Result<Vec<f64>> {
        cols.map(|c| self.f64_at(line, row, c)).collect()
    }
}

/// Groups consecutive rows by prompt id, rejecting ids that reappear after
/// another prompt's block.
fn prompt_blocks(table: &Table) -> Result<Vec<(u64, Vec<usize>)>> {
    let mut blocks: Vec<(u64, Vec<usize>)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, (line, row)) in table.rows.iter().enumerate() {
        let id = table.u64_at(*line, row, 0)?;
        match blocks.last_mut() {
            Some((last, rows)) if *last == id => rows.push(i),
            _ => {
                if !seen.insert(id) {
                    return Err(table.err(*line, format!("rows of prompt {id} are not contiguous")));
                }
                blocks.push((id, vec![i]));
            }
        }
    }
    Ok(blocks)
}

pub fn parse_preferences(path: &Path, text: &str) -> Result<Vec<PreferenceExample>> {
    let t = Table::parse(path, text)?;
    t.expect_prefix(&["prompt_id"])?;
    let width = t.header.len() - 1;
    if width == 0 || width % 2 != 0 {
        return Err(t.err(1, "expected prompt_id followed by equal numbers of w* and l* columns"));
    }
    let d = width / 2;
    let expected: Vec<String> = feature_headers("w", d).chain(feature_headers("l", d)).collect();
    if t.header[1..] != expected[..] {
        return Err(t.err(1, format!("feature columns must be w0..w{0}, l0..l{0}", d - 1)));
    }
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok(PreferenceExample {
                prompt_id: t.u64_at(*line, row, 0)?,
                winner: t.f64_range(*line, row, 1..1 + d)?,
                loser: t.f64_range(*line, row, 1 + d..1 + 2 * d)?,
            })
        })
        .collect()
}

pub fn load_preferences(path: &Path) -> Result<Vec<PreferenceExample>> {
    parse_preferences(path, &read_text(path)?)
}

pub fn parse_validation(path: &Path, text: &str) -> Result<Vec<ValidationPrompt>> {
    let t = Table::parse(path, text)?;
    t.expect_prefix(&["prompt_id", "response_id", "gold_score"])?;
    let d = t.header.len() - 3;
    if t.header[3..] != feature_headers("x", d).collect::<Vec<_>>()[..] || d == 0 {
        return Err(t.err(1, "feature columns must be x0, x1, ..."));
    }
    prompt_blocks(&t)?
        .into_iter()
        .map(|(prompt_id, rows)| {
            let mut responses = Vec::with_capacity(rows.len());
            let mut gold = Vec::with_capacity(rows.len());
            for (j, &i) in rows.iter().enumerate() {
                let (line, row) = &t.rows[i];
                if t.u64_at(*line, row, 1)? != j as u64 {
                    return Err(t.err(
                        *line,
                        format!("response ids of prompt {prompt_id} must run 0, 1, 2, ..."),
                    ));
                }
                gold.push(t.f64_at(*line, row, 2)?);
                responses.push(t.f64_range(*line, row, 3..3 + d)?);
            }
            Ok(ValidationPrompt {
                prompt_id,
                responses,
                gold,
            })
        })
        .collect()
}

pub fn load_validation(path: &Path) -> Result<Vec<ValidationPrompt>> {
    parse_validation(path, &read_text(path)?)
}

/// Columns `prompt_id, response_id, proxy_score`, then one column per
/// remaining evaluator. The pool must have a `proxy` evaluator.
pub fn pool_csv(pool: &ResponsePool) -> Result<String> {
    let proxy = pool.column_index(PROXY)?;
    let others: Vec<usize> = (0..pool.evaluators().len()).filter(|&c| c != proxy).collect();
    let header = ["prompt_id", "response_id", PROXY_SCORE]
        .map(String::from)
        .into_iter()
        .chain(others.iter().map(|&c| pool.evaluators()[c].clone()))
        .collect();
    csv_string(
        header,
        pool.prompts().iter().flat_map(|p| {
            let others = &others;
            p.response_ids.iter().enumerate().map(move |(j, id)| {
                [p.prompt_id.to_string(), id.to_string(), fmt(p.columns[proxy][j])]
                    .into_iter()
                    .chain(others.iter().map(|&c| fmt(p.columns[c][j])))
                    .collect()
            })
        }),
    )
}

/// Loads a pool, validating that each prompt's rows are contiguous, that
/// response ids are unique within a prompt, and that every cell is finite.
/// `proxy_score` becomes the `proxy` evaluator.
pub fn parse_pool(path: &Path, text: &str) -> Result<ResponsePool> {
    let t = Table::parse(path, text)?;
    t.expect_prefix(&["prompt_id", "response_id", PROXY_SCORE])?;
    let mut evaluators = vec![PROXY.to_string()];
    for name in &t.header[3..] {
        if name.is_empty() || evaluators.contains(name) || name == "prompt_id" || name == "response_id" {
            return Err(t.err(1, format!("invalid or duplicate evaluator column `{name}`")));
        }
        evaluators.push(name.clone());
    }
    let prompts = prompt_blocks(&t)?
        .into_iter()
        .map(|(prompt_id, rows)| {
            let mut ids = HashSet::new();
            let mut response_ids = Vec::with_capacity(rows.len());
            let mut columns = vec![Vec::with_capacity(rows.len()); evaluators.len()];
            for &i in &rows {
                let (line, row) = &t.rows[i];
                let id = t.u64_at(*line, row, 1)?;
                if !ids.insert(id) {
                    return Err(t.err(*line, format!("duplicate response {id} for prompt {prompt_id}")));
                }
                response_ids.push(id);
                for (e, col) in columns.iter_mut().enumerate() {
                    col.push(t.f64_at(*line, row, 2 + e)?);
                }
            }
            Ok(PromptResponses {
                prompt_id,
                response_ids,
                columns,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if prompts.is_empty() {
        return Err(t.err(1, "pool has no rows"));
    }
    ResponsePool::new(evaluators, prompts)
}

pub fn load_pool(path: &Path) -> Result<ResponsePool> {
    parse_pool(path, &read_text(path)?)
}

/// Columns `method, k, n, kl, evaluator, value`.
pub fn curve_csv(rows: &[CurveRow]) -> Result<String> {
    let header = ["method", "k", "n", "kl", "evaluator", "value"]
        .map(String::from)
        .to_vec();
    csv_string(
        header,
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                fmt(r.k),
                r.n.to_string(),
                fmt(r.kl),
                r.evaluator.clone(),
                fmt(r.value),
            ]
        }),
    )
}

pub fn parse_curve(path: &Path, text: &str) -> Result<Vec<CurveRow>> {
    let t = Table::parse(path, text)?;
    t.expect_prefix(&["method", "k", "n", "kl", "evaluator", "value"])?;
    t.rows
        .iter()
        .map(|(line, row)| {
            Ok(CurveRow {
                method: row[0].clone(),
                k: t.f64_at(*line, row, 1)?,
                n: t.u64_at(*line, row, 2)? as usize,
                kl: t.f64_at(*line, row, 3)?,
                evaluator: row[4].clone(),
                value: t.f64_at(*line, row, 5)?,
            })
        })
        .collect()
}

pub fn load_curve(path: &Path) -> Result<Vec<CurveRow>> {
    parse_curve(path, &read_text(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::laplace::fit_ggn_posterior;
    use crate::numerics::SeededGenerator;
    use crate::reward_model::Architecture;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    fn small_net() -> RewardNet {
        let arch = Architecture {
            input_dim: 3,
            hidden: vec![4],
            rank: 2,
            ..Architecture::default()
        };
        RewardNet::init(&arch, 1, 2).unwrap()
    }

    fn examples(n: usize, d: usize, seed: u64) -> Vec<PreferenceExample> {
        let mut rng = SeededGenerator::new(seed);
        (0..n)
            .map(|i| PreferenceExample {
                prompt_id: i as u64 / 2,
                winner: rng.gaussian_vec(d),
                loser: rng.gaussian_vec(d),
            })
            .collect()
    }

    #[test]
    fn preferences_round_trip_bit_exactly() {
        let data = examples(7, 3, 4);
        let text = preferences_csv(&data, 3).unwrap();
        assert!(text.starts_with("prompt_id,w0,w1,w2,l0,l1,l2\n"));
        assert_eq!(parse_preferences(p(), &text).unwrap(), data);
    }

    #[test]
    fn validation_round_trip() {
        let data = vec![
            ValidationPrompt {
                prompt_id: 5,
                responses: vec![vec![0.1, -2.0], vec![1e-300, 3.5]],
                gold: vec![0.25, -1.0],
            },
            ValidationPrompt {
                prompt_id: 6,
                responses: vec![vec![7.0, 8.0]],
                gold: vec![0.0],
            },
        ];
        let text = validation_csv(&data, 2).unwrap();
        assert_eq!(parse_validation(p(), &text).unwrap(), data);
    }

    #[test]
    fn checkpoint_round_trip_preserves_parameters() {
        let net = small_net();
        let mut trained = net.clone();
        let theta: Vec<f64> = net.flatten().iter().map(|v| v + 0.1 / 3.0).collect();
        trained.set_params(&theta).unwrap();
        let ckpt = ModelCheckpoint::new(&trained, 1, 2, None);
        let text = serde_json::to_string(&ckpt).unwrap();
        let back: ModelCheckpoint = parse_versioned(p(), &text, FORMAT_VERSION).unwrap();
        let back = back.to_net().unwrap();
        assert_eq!(back, trained);
        assert!(back
            .flatten()
            .iter()
            .zip(trained.flatten().iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn checkpoint_version_and_dims_are_checked() {
        let ckpt = ModelCheckpoint::new(&small_net(), 1, 2, None);
        let mut v = serde_json::to_value(&ckpt).unwrap();
        v["format_version"] = 9.into();
        let err = parse_versioned::<ModelCheckpoint>(p(), &v.to_string(), FORMAT_VERSION).unwrap_err();
        assert!(matches!(err, Error::Version { found: 9, expected: 1 }));

        let mut bad = ckpt.clone();
        bad.hidden = vec![5];
        assert!(matches!(bad.to_net(), Err(Error::Shape(_))));

        let err = parse_versioned::<ModelCheckpoint>(p(), "{\"format_version\": 1,", FORMAT_VERSION).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn posterior_round_trip_keeps_match() {
        let net = small_net();
        let post = fit_ggn_posterior(&net, &examples(10, 3, 5), 2.0).unwrap();
        let text = serde_json::to_string(&PosteriorFile::new(&post)).unwrap();
        let back: PosteriorFile = parse_versioned(p(), &text, FORMAT_VERSION).unwrap();
        let back = back.to_state().unwrap();
        back.check_matches(&net).unwrap();
        assert_eq!(back.covariance(), post.covariance());
        assert_eq!(back.dataset_fingerprint(), post.dataset_fingerprint());
    }

    #[test]
    fn pool_round_trip_and_alignment_checks() {
        let text = "prompt_id,response_id,proxy_score,gold\n0,0,1.5,2\n0,1,-1,0.5\n1,0,3,1\n";
        let pool = parse_pool(p(), text).unwrap();
        assert_eq!(pool.evaluators(), ["proxy", "gold"]);
        assert_eq!(pool.prompts().len(), 2);
        assert_eq!(pool_csv(&pool).unwrap(), text);

        let split = "prompt_id,response_id,proxy_score\n0,0,1\n1,0,2\n0,1,3\n";
        let err = parse_pool(p(), split).unwrap_err().to_string();
        assert!(err.contains("line 4") && err.contains("not contiguous"), "{err}");

        let dup = "prompt_id,response_id,proxy_score\n0,0,1\n0,0,2\n";
        assert!(parse_pool(p(), dup)
            .unwrap_err()
            .to_string()
            .contains("duplicate response"));

        let nan = "prompt_id,response_id,proxy_score\n0,0,NaN\n";
        assert!(parse_pool(p(), nan).unwrap_err().to_string().contains("non-finite"));

        let ragged = "prompt_id,response_id,proxy_score,gold\n0,0,1\n";
        assert!(matches!(parse_pool(p(), ragged), Err(Error::Schema { .. })));

        let wrong = "prompt,response_id,proxy_score\n0,0,1\n";
        assert!(matches!(parse_pool(p(), wrong), Err(Error::Schema { .. })));
    }

    #[test]
    fn curve_round_trip() {
        let rows = vec![
            CurveRow {
                method: "LA-var".into(),
                k: 3.0,
                n: 16,
                kl: 1.8350887222397811,
                evaluator: "gold".into(),
                value: -0.125,
            },
            CurveRow {
                method: "MAP".into(),
                k: 0.0,
                n: 1,
                kl: 0.0,
                evaluator: "proxy".into(),
                value: 0.1,
            },
        ];
        let text = curve_csv(&rows).unwrap();
        assert!(text.starts_with("method,k,n,kl,evaluator,value\nLA-var,3,16,"));
        assert_eq!(parse_curve(p(), &text).unwrap(), rows);
    }
}
