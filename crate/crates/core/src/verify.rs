//! Built-in oracle suite: finite-difference gradients, an independent
//! forward-mode Jacobian, dense GGN accumulation, best-of-n enumeration,
//! the rank-weight identity, KL values and posterior closed forms.

use std::fmt;

use crate::bon::{bon_expected_reward, bon_weights, enumeration_oracle, kl_bon};
use crate::laplace::{fit_ggn_posterior, ggn_precision, score_jacobian};
use crate::numerics::{DenseMatrix, SeededGenerator};
use crate::reward_model::{bt_loss_and_grad, Activation, Architecture, ParamVector, PreferenceExample, RewardNet};
use crate::Result;

/// Test hooks that deliberately corrupt one computation so the suite's
/// negative controls can be exercised.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VerifyOptions {
    /// Added to the last rank weight before the weight-sum identity is
    /// checked.
    pub bon_weight_perturbation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub family: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub checks: Vec<CheckResult>,
}

impl Report {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Distinct families in first-seen order.
    pub fn families(&self) -> Vec<&'static str> {
        let mut out: Vec<&'static str> = Vec::new();
        for c in &self.checks {
            if !out.contains(&c.family) {
                out.push(c.family);
            }
        }
        out
    }

    fn push(&mut self, family: &'static str, name: impl Into<String>, outcome: Result<(bool, String)>) {
        let (passed, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(CheckResult {
            family,
            name: name.into(),
            passed,
            detail,
        });
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} [{}] {}: {}", c.family, c.name, c.detail)?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        write!(
            f,
            "{} checks in {} families, {failed} failed",
            self.checks.len(),
            self.families().len()
        )
    }
}

/// Central differences of `f` at `theta` with step `h`.
pub fn central_difference(theta: &[f64], h: f64, f: impl Fn(&[f64]) -> Result<f64>) -> Result<Vec<f64>> {
    let mut x = theta.to_vec();
    (0..theta.len())
        .map(|i| {
            x[i] = theta[i] + h;
            let plus = f(&x)?;
            x[i] = theta[i] - h;
            let minus = f(&x)?;
            x[i] = theta[i];
            Ok((plus - minus) / (2.0 * h))
        })
        .collect()
}

/// `‖a − b‖_∞ / max(‖b‖_∞, floor)`.
pub fn max_relative_error(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = b.iter().fold(floor, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn activate(act: Activation, z: f64) -> (f64, f64) {
    match act {
        Activation::Tanh => {
            let h = z.tanh();
            (h, 1.0 - h * h)
        }
        Activation::Identity => (z, 1.0),
    }
}

/// Derivative of `r_θ(x)` along parameter direction `dir`, by tangent
/// propagation through the forward pass.
pub fn directional_derivative(net: &RewardNet, x: &[f64], dir: &[f64]) -> Result<f64> {
    let tangent = net.unflatten(&ParamVector(dir.to_vec()))?;
    let mut a = x.to_vec();
    let mut da = vec![0.0; x.len()];
    for (layer, t) in net.layers().iter().zip(tangent.layers()) {
        let (aa, ta) = (&layer.adapter.a, &t.adapter.a);
        let (bb, tb) = (&layer.adapter.b, &t.adapter.b);
        let rank = aa.rows();
        let mut u = vec![0.0; rank];
        let mut du = vec![0.0; rank];
        for r in 0..rank {
            for i in 0..a.len() {
                u[r] += aa[(r, i)] * a[i];
                du[r] += ta[(r, i)] * a[i] + aa[(r, i)] * da[i];
            }
        }
        let n_out = layer.w0.rows();
        let mut h = vec![0.0; n_out];
        let mut dh = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = layer.bias[o];
            let mut dz = 0.0;
            for i in 0..a.len() {
                z += layer.w0[(o, i)] * a[i];
                dz += layer.w0[(o, i)] * da[i];
            }
            for r in 0..rank {
                z += bb[(o, r)] * u[r];
                dz += tb[(o, r)] * u[r] + bb[(o, r)] * du[r];
            }
            let (v, slope) = activate(net.activation(), z);
            h[o] = v;
            dh[o] = slope * dz;
        }
        a = h;
        da = dh;
    }
    let mut out = 0.0;
    for ((w, dw), (v, dv)) in net.head().iter().zip(tangent.head()).zip(a.iter().zip(&da)) {
        out += dw * v + w * dv;
    }
    Ok(out)
}

/// Jacobian of `r_θ(x)` by forward mode, one unit direction per parameter.
/// Shares no code with the reverse-mode gradient.
pub fn forward_mode_jacobian(net: &RewardNet, x: &[f64]) -> Result<Vec<f64>> {
    let p = net.param_count();
    let mut e = vec![0.0; p];
    (0..p)
        .map(|i| {
            e[i] = 1.0;
            let d = directional_derivative(net, x, &e);
            e[i] = 0.0;
            d
        })
        .collect()
}

fn stable_sigmoid(d: f64) -> f64 {
    if d >= 0.0 {
        1.0 / (1.0 + (-d).exp())
    } else {
        let e = d.exp();
        e / (1.0 + e)
    }
}

/// Brute-force GGN precision: sequential dense sum of
/// `σ(d)(1 − σ(d))·(j_w − j_l)(j_w − j_l)ᵀ` plus `λI`, with forward-mode
/// Jacobians.
pub fn dense_ggn_oracle(net: &RewardNet, data: &[PreferenceExample], prior_precision: f64) -> Result<DenseMatrix> {
    let p = net.param_count();
    let mut m = vec![vec![0.0; p]; p];
    for ex in data {
        let d = net.forward(&ex.winner)? - net.forward(&ex.loser)?;
        let s = stable_sigmoid(d);
        let jw = forward_mode_jacobian(net, &ex.winner)?;
        let jl = forward_mode_jacobian(net, &ex.loser)?;
        let g: Vec<f64> = jw.iter().zip(&jl).map(|(a, b)| a - b).collect();
        for i in 0..p {
            for j in 0..p {
                m[i][j] += s * (1.0 - s) * g[i] * g[j];
            }
        }
    }
    for (i, row) in m.iter_mut().enumerate() {
        row[i] += prior_precision;
    }
    DenseMatrix::from_rows(&m)
}

/// Seeded network with all trainable parameters drawn at `scale`, so no
/// block of the Jacobian is structurally zero.
pub fn random_net(arch: &Architecture, seed: u64, scale: f64) -> Result<RewardNet> {
    let net = RewardNet::init(arch, seed, seed.wrapping_add(1))?;
    let mut rng = SeededGenerator::new(seed.wrapping_add(2));
    let theta = (0..net.param_count()).map(|_| scale * rng.gaussian()).collect();
    net.unflatten(&ParamVector(theta))
}

pub fn random_examples(n: usize, dim: usize, seed: u64) -> Vec<PreferenceExample> {
    let mut rng = SeededGenerator::new(seed);
    (0..n)
        .map(|i| PreferenceExample {
            prompt_id: i as u64,
            winner: rng.gaussian_vec(dim),
            loser: rng.gaussian_vec(dim),
        })
        .collect()
}

fn small_arch(seed: u64) -> Architecture {
    Architecture {
        input_dim: 3 + (seed % 3) as usize,
        hidden: vec![5, 4],
        rank: 1 + (seed % 2) as usize,
        activation: Activation::Tanh,
        head_init_scale: 0.5,
    }
}

fn gradient_checks(report: &mut Report) {
    for seed in 0..5u64 {
        let arch = small_arch(seed);
        report.push(
            "finite-difference gradient",
            format!("bt_loss_and_grad seed {seed}"),
            (|| {
                let net = random_net(&arch, 100 + seed, 0.5)?;
                let data = random_examples(12, arch.input_dim, 200 + seed);
                let lambda = 0.5;
                let (_, grad) = bt_loss_and_grad(&net, &data, lambda)?;
                let fd = central_difference(&net.flatten(), 1e-5, |t| {
                    bt_loss_and_grad(&net.unflatten(&ParamVector(t.to_vec()))?, &data, lambda).map(|(l, _)| l)
                })?;
                let err = max_relative_error(&grad, &fd, 1e-12);
                Ok((err < 1e-5, format!("max relative error {err:.2e} (tol 1e-5)")))
            })(),
        );
    }
}

fn jacobian_checks(report: &mut Report) {
    for seed in 0..3u64 {
        let arch = small_arch(seed);
        report.push(
            "jacobian",
            format!("score_jacobian vs forward mode seed {seed}"),
            (|| {
                let net = random_net(&arch, 300 + seed, 0.5)?;
                let x = SeededGenerator::new(400 + seed).gaussian_vec(arch.input_dim);
                let reverse = score_jacobian(&net, &x)?;
                let forward = forward_mode_jacobian(&net, &x)?;
                let fd = central_difference(&net.flatten(), 1e-5, |t| {
                    net.unflatten(&ParamVector(t.to_vec()))?.forward(&x)
                })?;
                let exact = max_relative_error(&reverse, &forward, 1e-12);
                let approx = max_relative_error(&reverse, &fd, 1e-12);
                Ok((
                    exact < 1e-12 && approx < 1e-5,
                    format!("vs forward mode {exact:.2e} (tol 1e-12), vs central differences {approx:.2e} (tol 1e-5)"),
                ))
            })(),
        );
    }
}

fn ggn_checks(report: &mut Report) {
    for seed in 0..3u64 {
        let arch = small_arch(seed);
        report.push(
            "GGN dense oracle",
            format!("ggn_precision seed {seed}"),
            (|| {
                let net = random_net(&arch, 500 + seed, 0.5)?;
                let data = random_examples(70 + 10 * seed as usize, arch.input_dim, 600 + seed);
                let fast = ggn_precision(&net, &data, 1.5)?;
                let dense = dense_ggn_oracle(&net, &data, 1.5)?;
                let err = fast.relative_frobenius_distance(&dense);
                Ok((err < 1e-8, format!("relative Frobenius distance {err:.2e} (tol 1e-8)")))
            })(),
        );
    }
}

fn closed_form_checks(report: &mut Report) {
    report.push(
        "posterior closed form",
        "prior-only covariance is I/λ",
        (|| {
            let net = random_net(&small_arch(0), 7, 0.5)?;
            let mut worst = 0.0f64;
            for lambda in [0.5, 2.0, 10.0] {
                let post = fit_ggn_posterior(&net, &[], lambda)?;
                let mut expected = DenseMatrix::identity(net.param_count());
                expected.as_mut_slice().iter_mut().for_each(|v| *v /= lambda);
                worst = worst.max(post.covariance().relative_frobenius_distance(&expected));
            }
            Ok((worst < 1e-14, format!("max relative Frobenius distance {worst:.2e}")))
        })(),
    );
    report.push(
        "posterior closed form",
        "one-parameter Bradley-Terry S = 0.5",
        (|| {
            let net = RewardNet::from_parts(1, Activation::Identity, vec![], vec![0.0])?;
            let data = [PreferenceExample {
                prompt_id: 0,
                winner: vec![2.0],
                loser: vec![0.0],
            }];
            let s = fit_ggn_posterior(&net, &data, 1.0)?.covariance()[(0, 0)];
            Ok(((s - 0.5).abs() < 1e-15, format!("S = {s}")))
        })(),
    );
}

fn enumeration_checks(report: &mut Report) {
    let mut rng = SeededGenerator::new(0xb0b);
    let mut worst = 0.0f64;
    let mut cases = 0;
    let outcome = (|| {
        for pool in 0..20 {
            let big_n = 1 + rng.below(10);
            // Every third pool is rounded to force tied proxy scores.
            let ranking: Vec<f64> = (0..big_n)
                .map(|_| {
                    let v = rng.gaussian();
                    if pool % 3 == 0 {
                        v.round()
                    } else {
                        v
                    }
                })
                .collect();
            let eval = rng.gaussian_vec(big_n);
            for n in 1..=big_n {
                let fast = bon_expected_reward(&ranking, &eval, n)?;
                let slow = enumeration_oracle(&ranking, &eval, n)?;
                worst = worst.max((fast - slow).abs());
                cases += 1;
            }
        }
        Ok((
            worst < 1e-10,
            format!("{cases} (pool, n) cases, max |estimator − oracle| {worst:.2e} (tol 1e-10)"),
        ))
    })();
    report.push("BoN enumeration", "estimator vs subset enumeration", outcome);
}

fn weight_sum_checks(report: &mut Report, options: &VerifyOptions) {
    for big_n in [10usize, 1000, 12_500] {
        report.push(
            "BoN weight-sum identity",
            format!("N = {big_n}"),
            (|| {
                let mut worst = 0.0f64;
                for n in [1, 2, 16, 256, big_n].into_iter().filter(|&n| n <= big_n) {
                    let mut w = bon_weights(big_n, n)?;
                    w[big_n - 1] += options.bon_weight_perturbation;
                    let sum: f64 = w.iter().sum();
                    worst = worst.max((sum - 1.0).abs());
                }
                Ok((worst <= 1e-12, format!("max |Σw − 1| {worst:.2e} (tol 1e-12)")))
            })(),
        );
    }
}

fn kl_checks(report: &mut Report) {
    report.push(
        "KL",
        "kl_bon(1) = 0, kl_bon(2) = ln 2 − 1/2",
        (|| {
            let k1 = kl_bon(1)?;
            let k2 = kl_bon(2)?;
            let err = (k2 - (std::f64::consts::LN_2 - 0.5)).abs();
            Ok((
                k1 == 0.0 && err < 1e-12,
                format!("kl(1) = {k1}, |kl(2) − (ln 2 − 1/2)| = {err:.2e}"),
            ))
        })(),
    );
}

/// Runs every check. The suite is deterministic.
pub fn run(options: &VerifyOptions) -> Report {
    let mut report = Report::default();
    gradient_checks(&mut report);
    jacobian_checks(&mut report);
    ggn_checks(&mut report);
    closed_form_checks(&mut report);
    enumeration_checks(&mut report);
    weight_sum_checks(&mut report, options);
    kl_checks(&mut report);
    report
}
