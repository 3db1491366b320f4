//! LoRA-structured scalar reward network and Bradley-Terry training.
//!
//! Each hidden layer computes `h = act(W0·a + B·(A·a) + bias)` where `W0` and
//! `bias` are frozen and only the low-rank adapter `(A, B)` is trainable. A
//! trainable head vector maps the last hidden layer (or the raw input, for a
//! network without hidden layers) to a scalar reward.
//!
//! Trainable parameters are flattened in a fixed order: every layer's `A`
//! (row-major, first layer first), then every layer's `B` (row-major, first
//! layer first), then the head.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::numerics::{dot, log_sigmoid_unchecked, sigmoid_unchecked, DenseMatrix, SeededGenerator};
use crate::{Error, Result};

/// One labeled comparison. `winner` was preferred over `loser`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub prompt_id: u64,
    pub winner: Vec<f64>,
    pub loser: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative_from_output(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

/// Trainable low-rank perturbation `ΔW = B·A` of a frozen weight matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraAdapter {
    /// `rank × n_in`.
    pub a: DenseMatrix,
    /// `n_out × rank`.
    pub b: DenseMatrix,
}

impl LoraAdapter {
    pub fn rank(&self) -> usize {
        self.a.rows()
    }

    pub fn delta(&self) -> DenseMatrix {
        self.b
            .matmul(&self.a)
            .expect("adapter shapes validated at construction")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraLayer {
    /// Frozen `n_out × n_in` base weights.
    pub w0: DenseMatrix,
    /// Frozen bias of length `n_out`.
    pub bias: Vec<f64>,
    pub adapter: LoraAdapter,
}

impl LoraLayer {
    pub fn input_dim(&self) -> usize {
        self.w0.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.w0.rows()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let (n_out, n_in) = (self.w0.rows(), self.w0.cols());
        let r = self.adapter.rank();
        let shape_err = |what: &str| Error::Shape(format!("layer {index}: {what}"));
        if self.bias.len() != n_out {
            return Err(shape_err("bias length differs from W0 rows"));
        }
        if self.adapter.a.cols() != n_in {
            return Err(shape_err("A columns differ from W0 columns"));
        }
        if self.adapter.b.rows() != n_out || self.adapter.b.cols() != r {
            return Err(shape_err("B must be n_out × rank"));
        }
        if r == 0 || r >= n_in.min(n_out) {
            return Err(shape_err(&format!(
                "LoRA rank {r} must satisfy 1 <= rank < min({n_in}, {n_out})"
            )));
        }
        if self.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("layer {index}: non-finite bias")));
        }
        Ok(())
    }
}

/// Shape and initialization recipe for [`RewardNet::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub rank: usize,
    pub activation: Activation,
    /// Standard deviation of the initial head entries.
    pub head_init_scale: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            input_dim: 8,
            hidden: vec![16, 16],
            rank: 4,
            activation: Activation::Tanh,
            head_init_scale: 0.1,
        }
    }
}

/// Scalar reward network with frozen base weights and trainable LoRA
/// adapters plus head.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardNet {
    input_dim: usize,
    activation: Activation,
    layers: Vec<LoraLayer>,
    head: Vec<f64>,
}

/// Flattened trainable parameters in the documented order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(pub Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm_squared(&self) -> f64 {
        dot(&self.0, &self.0)
    }
}

impl std::ops::Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

struct ForwardTrace {
    /// Input to each layer, then the final hidden activation.
    activations: Vec<Vec<f64>>,
    /// `A·a` for each layer.
    projected: Vec<Vec<f64>>,
    output: f64,
}

impl RewardNet {
    pub fn from_parts(
        input_dim: usize,
        activation: Activation,
        layers: Vec<LoraLayer>,
        head: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Shape("input dimension must be at least 1".into()));
        }
        let mut width = input_dim;
        for (i, layer) in layers.iter().enumerate() {
            layer.validate(i)?;
            if layer.input_dim() != width {
                return Err(Error::Shape(format!(
                    "layer {i} expects input {} but receives {width}",
                    layer.input_dim()
                )));
            }
            width = layer.output_dim();
        }
        if head.len() != width {
            return Err(Error::Shape(format!(
                "head has length {} but the last hidden width is {width}",
                head.len()
            )));
        }
        if head.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite head entry".into()));
        }
        Ok(RewardNet {
            input_dim,
            activation,
            layers,
            head,
        })
    }

    /// Seeded initialization.
    ///
    /// `base_seed` drives the frozen "pretrained" weights (`W0 ~ N(0, 1/n_in)`,
    /// bias `~ N(0, 0.01)`), so networks sharing it share a base model.
    /// `adapter_seed` drives `A ~ N(0, 1/n_in)` and the head; `B` starts at
    /// zero so the initial adapted network equals the base network.
    pub fn init(arch: &Architecture, base_seed: u64, adapter_seed: u64) -> Result<Self> {
        let mut base_rng = SeededGenerator::new(base_seed);
        let mut adapter_rng = SeededGenerator::new(adapter_seed);
        let mut layers = Vec::with_capacity(arch.hidden.len());
        let mut n_in = arch.input_dim;
        for &n_out in &arch.hidden {
            let scale = 1.0 / (n_in as f64).sqrt();
            let w0 = DenseMatrix::gaussian(n_out, n_in, scale, &mut base_rng);
            let bias = (0..n_out).map(|_| 0.1 * base_rng.gaussian()).collect();
            let a = DenseMatrix::gaussian(arch.rank, n_in, scale, &mut adapter_rng);
            let b = DenseMatrix::zeros(n_out, arch.rank);
            layers.push(LoraLayer {
                w0,
                bias,
                adapter: LoraAdapter { a, b },
            });
            n_in = n_out;
        }
        let head = (0..n_in)
            .map(|_| arch.head_init_scale * adapter_rng.gaussian())
            .collect();
        Self::from_parts(arch.input_dim, arch.activation, layers, head)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[LoraLayer] {
        &self.layers
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.adapter.a.as_slice().len() + l.adapter.b.as_slice().len())
            .sum::<usize>()
            + self.head.len()
    }

    pub fn flatten(&self) -> ParamVector {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.adapter.a.as_slice());
        }
        for layer in &self.layers {
            out.extend_from_slice(layer.adapter.b.as_slice());
        }
        out.extend_from_slice(&self.head);
        ParamVector(out)
    }

    /// Copy of `self` with trainable parameters replaced by `params`.
    pub fn unflatten(&self, params: &ParamVector) -> Result<RewardNet> {
        let mut net = self.clone();
        net.set_params(params)?;
        Ok(net)
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "parameter vector has length {} but the network has {} trainable parameters",
                params.len(),
                self.param_count()
            )));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite parameter".into()));
        }
        let mut rest = params;
        for layer in &mut self.layers {
            let dst = layer.adapter.a.as_mut_slice();
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        for layer in &mut self.layers {
            let dst = layer.adapter.b.as_mut_slice();
            let (head, tail) = rest.split_at(dst.len());
            dst.copy_from_slice(head);
            rest = tail;
        }
        self.head.copy_from_slice(rest);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "feature vector has dimension {} but the network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> ForwardTrace {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut projected = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for layer in &self.layers {
            let u: Vec<f64> = (0..layer.adapter.rank())
                .map(|r| dot(layer.adapter.a.row(r), &a))
                .collect();
            let h: Vec<f64> = (0..layer.output_dim())
                .map(|o| {
                    let z = dot(layer.w0.row(o), &a) + dot(layer.adapter.b.row(o), &u) + layer.bias[o];
                    self.activation.apply(z)
                })
                .collect();
            activations.push(std::mem::replace(&mut a, h));
            projected.push(u);
        }
        let output = dot(&self.head, &a);
        activations.push(a);
        ForwardTrace {
            activations,
            projected,
            output,
        }
    }

    /// Scalar reward `r_θ(x)`.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).output)
    }

    /// Reward and its gradient with respect to the trainable parameters,
    /// in flattening order.
    pub fn value_and_gradient(&self, x: &[f64]) -> Result<(f64, ParamVector)> {
        self.check_input(x)?;
        let trace = self.trace(x);
        let n_layers = self.layers.len();

        let a_len: usize = self.layers.iter().map(|l| l.adapter.a.as_slice().len()).sum();
        let b_len: usize = self.layers.iter().map(|l| l.adapter.b.as_slice().len()).sum();
        let mut grad = vec![0.0; a_len + b_len + self.head.len()];

        grad[a_len + b_len..].copy_from_slice(&trace.activations[n_layers]);

        // Offsets of each layer's A and B blocks.
        let mut a_off = Vec::with_capacity(n_layers);
        let mut b_off = Vec::with_capacity(n_layers);
        let (mut oa, mut ob) = (0, a_len);
        for layer in &self.layers {
            a_off.push(oa);
            b_off.push(ob);
            oa += layer.adapter.a.as_slice().len();
            ob += layer.adapter.b.as_slice().len();
        }

        let mut upstream = self.head.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let input = &trace.activations[l];
            let output = &trace.activations[l + 1];
            let u = &trace.projected[l];
            let rank = layer.adapter.rank();

            let gz: Vec<f64> = upstream
                .iter()
                .zip(output)
                .map(|(g, &h)| g * self.activation.derivative_from_output(h))
                .collect();

            let gb = &mut grad[b_off[l]..b_off[l] + layer.output_dim() * rank];
            for (o, &g) in gz.iter().enumerate() {
                for r in 0..rank {
                    gb[o * rank + r] = g * u[r];
                }
            }

            let gu = layer.adapter.b.matvec_transposed(&gz)?;
            let n_in = layer.input_dim();
            let ga = &mut grad[a_off[l]..a_off[l] + rank * n_in];
            for (r, &g) in gu.iter().enumerate() {
                for (i, &ai) in input.iter().enumerate() {
                    ga[r * n_in + i] = g * ai;
                }
            }

            if l > 0 {
                let mut next = layer.w0.matvec_transposed(&gz)?;
                let via_adapter = layer.adapter.a.matvec_transposed(&gu)?;
                next.iter_mut().zip(via_adapter).for_each(|(n, v)| *n += v);
                upstream = next;
            }
        }
        Ok((trace.output, ParamVector(grad)))
    }
}

/// `σ(r_w − r_l)`, the Bradley-Terry probability that `w` is preferred.
///
/// The larger of the pair is computed as `1 − small`, so
/// `p(a, b) + p(b, a) = 1` holds to within one ulp.
pub fn bt_probability(r_w: f64, r_l: f64) -> Result<f64> {
    if !r_w.is_finite() || !r_l.is_finite() {
        return Err(Error::Domain(format!(
            "Bradley-Terry probability needs finite rewards, got ({r_w}, {r_l})"
        )));
    }
    let d = r_w - r_l;
    if d == 0.0 {
        return Ok(0.5);
    }
    let t = (-d.abs()).exp();
    let small = t / (1.0 + t);
    Ok(if d > 0.0 { 1.0 - small } else { small })
}

/// Unregularized Bradley-Terry negative log-likelihood and its gradient,
/// summed over `batch`.
pub(crate) fn bt_data_loss_and_grad<'a, I>(net: &RewardNet, batch: I) -> Result<(f64, Vec<f64>)>
where
    I: IntoIterator<Item = &'a PreferenceExample>,
{
    let mut loss = 0.0;
    let mut grad = vec![0.0; net.param_count()];
    for ex in batch {
        let (rw, gw) = net.value_and_gradient(&ex.winner)?;
        let (rl, gl) = net.value_and_gradient(&ex.loser)?;
        let d = rw - rl;
        loss -= log_sigmoid_unchecked(d);
        // ∂/∂d of −log σ(d) is −σ(−d).
        let coeff = -sigmoid_unchecked(-d);
        for ((g, w), l) in grad.iter_mut().zip(gw.iter()).zip(gl.iter()) {
            *g += coeff * (w - l);
        }
    }
    Ok((loss, grad))
}

/// `−Σ log σ(r_w − r_l) + (λ/2)‖θ‖²` and its gradient over trainable
/// parameters.
pub fn bt_loss_and_grad(
    net: &RewardNet,
    batch: &[PreferenceExample],
    prior_precision: f64,
) -> Result<(f64, ParamVector)> {
    if batch.is_empty() {
        return Err(Error::Usage("loss requested on an empty batch".into()));
    }
    check_prior_precision(prior_precision, true)?;
    let (data_loss, mut grad) = bt_data_loss_and_grad(net, batch)?;
    let theta = net.flatten();
    for (g, t) in grad.iter_mut().zip(theta.iter()) {
        *g += prior_precision * t;
    }
    Ok((
        data_loss + 0.5 * prior_precision * theta.norm_squared(),
        ParamVector(grad),
    ))
}

pub(crate) fn check_prior_precision(lambda: f64, allow_zero: bool) -> Result<()> {
    let ok = lambda.is_finite() && (lambda > 0.0 || (allow_zero && lambda == 0.0));
    if ok {
        Ok(())
    } else {
        Err(Error::Usage(format!(
            "prior precision must be positive and finite, got {lambda}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub prior_precision: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            steps: 2000,
            batch_size: 32,
            prior_precision: 1.0,
            seed: 0,
        }
    }
}

/// Seeded mini-batch gradient descent on the regularized Bradley-Terry loss.
///
/// Each step draws the next `batch_size` examples from a per-epoch shuffle of
/// `data`, rescales the data gradient by `|data| / batch_size` so that it is
/// an unbiased estimate of the full-data gradient, adds `λθ`, and takes a
/// fixed-size step. The returned trace holds the (rescaled) objective seen
/// at each step, before the update.
pub fn train_map(net: &RewardNet, data: &[PreferenceExample], cfg: &TrainConfig) -> Result<(RewardNet, Vec<f64>)> {
    if data.is_empty() {
        return Err(Error::Usage("training requires at least one example".into()));
    }
    if cfg.steps == 0 {
        return Err(Error::Usage("training requires steps >= 1".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Usage("batch size must be at least 1".into()));
    }
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Usage(format!(
            "learning rate must be positive, got {}",
            cfg.learning_rate
        )));
    }
    check_prior_precision(cfg.prior_precision, true)?;
    for ex in data {
        net.check_input(&ex.winner)?;
        net.check_input(&ex.loser)?;
    }

    let mut rng = SeededGenerator::new(cfg.seed);
    let batch = cfg.batch_size.min(data.len());
    let scale = data.len() as f64 / batch as f64;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = data.len();

    let mut net = net.clone();
    let mut theta = net.flatten().0;
    let mut trace = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut picked = Vec::with_capacity(batch);
        while picked.len() < batch {
            if cursor == order.len() {
                rng.shuffle(&mut order);
                cursor = 0;
            }
            picked.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (data_loss, grad) = bt_data_loss_and_grad(&net, picked)?;
        let loss = scale * data_loss + 0.5 * cfg.prior_precision * dot(&theta, &theta);
        if !loss.is_finite() {
            return Err(Error::Diverged { step, loss });
        }
        trace.push(loss);
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t -= cfg.learning_rate * (scale * g + cfg.prior_precision * *t);
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::Diverged { step, loss: f64::NAN });
        }
        net.set_params(&theta)?;
    }
    Ok((net, trace))
}

/// SHA-256 over the examples' prompt ids and feature bits, hex encoded.
pub fn dataset_fingerprint(data: &[PreferenceExample]) -> String {
    let mut hasher = Sha256::new();
    hasher.update((data.len() as u64).to_le_bytes());
    for ex in data {
        hasher.update(ex.prompt_id.to_le_bytes());
        hasher.update((ex.winner.len() as u64).to_le_bytes());
        for v in ex.winner.iter().chain(&ex.loser) {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_arch() -> Architecture {
        Architecture {
            input_dim: 5,
            hidden: vec![6, 4],
            rank: 2,
            activation: Activation::Tanh,
            head_init_scale: 0.5,
        }
    }

    /// Random net with nonzero B so every block carries gradient.
    pub(crate) fn random_net(arch: &Architecture, seed: u64) -> RewardNet {
        let net = RewardNet::init(arch, seed, seed ^ 0x5eed).unwrap();
        let mut rng = SeededGenerator::new(seed.wrapping_add(99));
        let theta: Vec<f64> = (0..net.param_count()).map(|_| 0.5 * rng.gaussian()).collect();
        net.unflatten(&ParamVector(theta)).unwrap()
    }

    fn random_examples(n: usize, dim: usize, seed: u64) -> Vec<PreferenceExample> {
        let mut rng = SeededGenerator::new(seed);
        (0..n)
            .map(|i| PreferenceExample {
                prompt_id: i as u64,
                winner: rng.gaussian_vec(dim),
                loser: rng.gaussian_vec(dim),
            })
            .collect()
    }

    /// Straight-line evaluation: builds each effective weight matrix
    /// W0 + B·A explicitly and multiplies through.
    fn reference_forward(net: &RewardNet, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        for layer in net.layers() {
            let mut w = layer.w0.clone();
            let delta = layer.adapter.b.matmul(&layer.adapter.a).unwrap();
            for (wv, dv) in w.as_mut_slice().iter_mut().zip(delta.as_slice()) {
                *wv += dv;
            }
            let mut h = Vec::new();
            for o in 0..w.rows() {
                let mut z = layer.bias[o];
                for i in 0..w.cols() {
                    z += w[(o, i)] * a[i];
                }
                h.push(match net.activation() {
                    Activation::Tanh => z.tanh(),
                    Activation::Identity => z,
                });
            }
            a = h;
        }
        net.head().iter().zip(&a).map(|(h, v)| h * v).sum()
    }

    #[test]
    fn zero_adapter_identity_layer() {
        let layer = LoraLayer {
            w0: DenseMatrix::identity(2),
            bias: vec![0.0, 0.0],
            adapter: LoraAdapter {
                a: DenseMatrix::from_rows(&[vec![0.3, -0.7]]).unwrap(),
                b: DenseMatrix::zeros(2, 1),
            },
        };
        let net = RewardNet::from_parts(2, Activation::Identity, vec![layer], vec![1.0, 1.0]).unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), 3.0);
    }

    #[test]
    fn rank_one_adapter_shifts_output_linearly() {
        let u = [0.5, -1.0, 2.0];
        let v = [1.0, 0.25, -0.5];
        let w0 = DenseMatrix::from_rows(&[vec![1.0, 0.0, 2.0], vec![0.0, -1.0, 1.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let head = vec![1.0, 2.0, -1.0];
        let base = RewardNet::from_parts(
            3,
            Activation::Identity,
            vec![LoraLayer {
                w0: w0.clone(),
                bias: vec![0.0; 3],
                adapter: LoraAdapter {
                    a: DenseMatrix::from_rows(&[v.to_vec()]).unwrap(),
                    b: DenseMatrix::zeros(3, 1),
                },
            }],
            head.clone(),
        )
        .unwrap();
        let adapted = RewardNet::from_parts(
            3,
            Activation::Identity,
            vec![LoraLayer {
                w0,
                bias: vec![0.0; 3],
                adapter: LoraAdapter {
                    a: DenseMatrix::from_rows(&[v.to_vec()]).unwrap(),
                    b: DenseMatrix::from_rows(&[vec![u[0]], vec![u[1]], vec![u[2]]]).unwrap(),
                },
            }],
            head.clone(),
        )
        .unwrap();
        let x = [0.3, -1.2, 0.8];
        let vx: f64 = v.iter().zip(&x).map(|(a, b)| a * b).sum();
        let shift: f64 = head.iter().zip(&u).map(|(h, ui)| h * ui * vx).sum();
        let got = adapted.forward(&x).unwrap() - base.forward(&x).unwrap();
        assert!((got - shift).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_straight_line_reference() {
        let arch = Architecture::default();
        for seed in 0..5 {
            let net = random_net(&arch, seed);
            let mut rng = SeededGenerator::new(1000 + seed);
            for _ in 0..20 {
                let x = rng.gaussian_vec(arch.input_dim);
                let a = net.forward(&x).unwrap();
                let b = reference_forward(&net, &x);
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let net = RewardNet::init(&Architecture::default(), 1, 2).unwrap();
        assert!(matches!(net.forward(&[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn construction_validates_rank() {
        let layer = LoraLayer {
            w0: DenseMatrix::identity(2),
            bias: vec![0.0; 2],
            adapter: LoraAdapter {
                a: DenseMatrix::zeros(2, 2),
                b: DenseMatrix::zeros(2, 2),
            },
        };
        assert!(RewardNet::from_parts(2, Activation::Tanh, vec![layer], vec![0.0; 2]).is_err());
    }

    #[test]
    fn bt_probability_values() {
        assert_eq!(bt_probability(1.0, 1.0).unwrap(), 0.5);
        assert!((bt_probability(2.0, 0.0).unwrap() - 0.880_797_077_977_882_3).abs() < 1e-15);
        // σ(−30) = e^{-30}/(1+e^{-30}) ≈ 9.357622968839299e-14.
        let p = bt_probability(0.0, 30.0).unwrap();
        assert!(p > 0.0);
        assert!((p - 9.357_622_968_839_299e-14).abs() < 1e-27);
        assert!(bt_probability(0.0, 700.0).unwrap() > 0.0);
        assert!(bt_probability(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn tied_pairs_give_ln2_and_prior_gradient() {
        let arch = small_arch();
        let net = random_net(&arch, 3);
        let mut rng = SeededGenerator::new(4);
        let batch: Vec<_> = (0..5)
            .map(|i| {
                let x = rng.gaussian_vec(arch.input_dim);
                PreferenceExample {
                    prompt_id: i,
                    winner: x.clone(),
                    loser: x,
                }
            })
            .collect();
        let lambda = 0.7;
        let (loss, grad) = bt_loss_and_grad(&net, &batch, lambda).unwrap();
        let theta = net.flatten();
        let expected = 5.0 * std::f64::consts::LN_2 + 0.5 * lambda * theta.norm_squared();
        assert!((loss - expected).abs() < 1e-12);
        for (g, t) in grad.iter().zip(theta.iter()) {
            assert!((g - lambda * t).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_parameters_give_batch_ln2() {
        let arch = small_arch();
        let net = RewardNet::init(&arch, 1, 2).unwrap();
        let zero = net.unflatten(&ParamVector::zeros(net.param_count())).unwrap();
        let batch = random_examples(7, arch.input_dim, 9);
        let (loss, _) = bt_loss_and_grad(&zero, &batch, 3.0).unwrap();
        assert!((loss - 7.0 * std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn empty_batch_is_a_usage_error() {
        let net = RewardNet::init(&small_arch(), 1, 2).unwrap();
        assert!(matches!(bt_loss_and_grad(&net, &[], 1.0), Err(Error::Usage(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let arch = small_arch();
        let net = random_net(&arch, 17);
        let batch = random_examples(1, arch.input_dim, 18);
        let (_, grad) = bt_loss_and_grad(&net, &batch, 0.0).unwrap();
        let theta = net.flatten();
        let h = 1e-5;
        for i in 0..theta.len() {
            let mut plus = theta.clone();
            plus.0[i] += h;
            let mut minus = theta.clone();
            minus.0[i] -= h;
            let lp = bt_loss_and_grad(&net.unflatten(&plus).unwrap(), &batch, 0.0).unwrap().0;
            let lm = bt_loss_and_grad(&net.unflatten(&minus).unwrap(), &batch, 0.0)
                .unwrap()
                .0;
            let fd = (lp - lm) / (2.0 * h);
            let denom = grad[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                (grad[i] - fd).abs() / denom < 1e-5 || (grad[i] - fd).abs() < 1e-9,
                "coord {i}: {} vs {fd}",
                grad[i]
            );
        }
    }

    #[test]
    fn shift_invariance_of_data_term() {
        // A constant added to every reward cancels in r_w − r_l. A shared
        // additive offset is realized by an extra constant input feature
        // routed straight to the head.
        let head_only = |c: f64| RewardNet::from_parts(3, Activation::Identity, vec![], vec![0.4, -1.1, c]).unwrap();
        let mut rng = SeededGenerator::new(8);
        let batch: Vec<_> = (0..6)
            .map(|i| {
                let mut w = rng.gaussian_vec(2);
                let mut l = rng.gaussian_vec(2);
                w.push(1.0);
                l.push(1.0);
                PreferenceExample {
                    prompt_id: i,
                    winner: w,
                    loser: l,
                }
            })
            .collect();
        let (l0, g0) = bt_data_loss_and_grad(&head_only(0.0), &batch).unwrap();
        let (l1, g1) = bt_data_loss_and_grad(&head_only(5.0), &batch).unwrap();
        assert!((l0 - l1).abs() < 1e-12);
        for (a, b) in g0.iter().zip(&g1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    /// Root of `θ − σ(−θ)` by bisection: the stationary point of
    /// `−log σ(θ) + θ²/2`.
    fn bisect_fixed_point() -> f64 {
        let f = |t: f64| t - 1.0 / (1.0 + t.exp());
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn one_parameter_map_reaches_bisection_fixed_point() {
        let target = bisect_fixed_point();
        assert!((target - 0.401_058_0).abs() < 1e-6, "{target}");
        let net = RewardNet::from_parts(1, Activation::Identity, vec![], vec![0.0]).unwrap();
        let data = vec![PreferenceExample {
            prompt_id: 0,
            winner: vec![1.0],
            loser: vec![0.0],
        }];
        let cfg = TrainConfig {
            learning_rate: 0.1,
            steps: 500,
            batch_size: 1,
            prior_precision: 1.0,
            seed: 5,
        };
        let (trained, trace) = train_map(&net, &data, &cfg).unwrap();
        assert_eq!(trace.len(), 500);
        assert!((trained.head()[0] - target).abs() < 1e-3);
        assert!(trace.last().unwrap() <= &trace[0]);
    }

    #[test]
    fn zero_steps_is_a_usage_error() {
        let net = RewardNet::init(&small_arch(), 1, 2).unwrap();
        let data = random_examples(3, 5, 1);
        let cfg = TrainConfig {
            steps: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(train_map(&net, &data, &cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn training_is_deterministic_and_keeps_base_frozen() {
        let arch = small_arch();
        let net = RewardNet::init(&arch, 10, 11).unwrap();
        let data = random_examples(40, arch.input_dim, 12);
        let cfg = TrainConfig {
            learning_rate: 0.01,
            steps: 50,
            batch_size: 8,
            prior_precision: 1.0,
            seed: 13,
        };
        let (a, ta) = train_map(&net, &data, &cfg).unwrap();
        let (b, tb) = train_map(&net, &data, &cfg).unwrap();
        assert_eq!(ta, tb);
        let fa: Vec<u64> = a.flatten().iter().map(|v| v.to_bits()).collect();
        let fb: Vec<u64> = b.flatten().iter().map(|v| v.to_bits()).collect();
        assert_eq!(fa, fb);
        for (trained, orig) in a.layers().iter().zip(net.layers()) {
            assert_eq!(trained.w0, orig.w0);
            assert_eq!(trained.bias, orig.bias);
        }
        assert_ne!(a.flatten(), net.flatten());
    }

    #[test]
    fn divergence_reports_step() {
        let net = RewardNet::from_parts(1, Activation::Identity, vec![], vec![0.0]).unwrap();
        let data = vec![PreferenceExample {
            prompt_id: 0,
            winner: vec![1.0],
            loser: vec![0.0],
        }];
        let cfg = TrainConfig {
            learning_rate: 1e200,
            steps: 10,
            batch_size: 1,
            prior_precision: 1e200,
            seed: 0,
        };
        assert!(matches!(train_map(&net, &data, &cfg), Err(Error::Diverged { .. })));
    }

    #[test]
    fn flatten_canary_order() {
        let arch = small_arch();
        let net = RewardNet::init(&arch, 1, 2).unwrap();
        let p = net.param_count();
        let canary = ParamVector((1..=p).map(|v| v as f64).collect());
        let net = net.unflatten(&canary).unwrap();
        // First layer A is 2×5, second layer A is 2×6, then B blocks 6×2 and 4×2, then head 4.
        assert_eq!(net.layers()[0].adapter.a.as_slice()[0], 1.0);
        assert_eq!(net.layers()[0].adapter.a[(1, 0)], 6.0);
        assert_eq!(net.layers()[1].adapter.a[(0, 0)], 11.0);
        assert_eq!(net.layers()[0].adapter.b[(0, 0)], 23.0);
        assert_eq!(net.layers()[0].adapter.b[(0, 1)], 24.0);
        assert_eq!(net.layers()[1].adapter.b[(0, 0)], 35.0);
        assert_eq!(net.head(), &[43.0, 44.0, 45.0, 46.0]);
        assert_eq!(p, 46);
        assert_eq!(net.flatten(), canary);
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let net = RewardNet::init(&small_arch(), 1, 2).unwrap();
        assert!(matches!(net.unflatten(&ParamVector::zeros(3)), Err(Error::Shape(_))));
    }

    #[test]
    fn flatten_round_trip_preserves_outputs() {
        let arch = Architecture::default();
        let net = random_net(&arch, 77);
        let rebuilt = RewardNet::init(&arch, 77, 1)
            .unwrap()
            .unflatten(&net.flatten())
            .unwrap();
        let base_matches = rebuilt.layers().iter().zip(net.layers()).all(|(a, b)| a.w0 == b.w0);
        assert!(base_matches);
        let mut rng = SeededGenerator::new(3);
        for _ in 0..100 {
            let x = rng.gaussian_vec(arch.input_dim);
            assert_eq!(net.forward(&x).unwrap(), rebuilt.forward(&x).unwrap());
        }
    }

    #[test]
    fn fingerprint_tracks_content() {
        let a = random_examples(3, 4, 1);
        let mut b = a.clone();
        assert_eq!(dataset_fingerprint(&a), dataset_fingerprint(&b));
        b[2].loser[1] += 1e-12;
        assert_ne!(dataset_fingerprint(&a), dataset_fingerprint(&b));
    }

    proptest! {
        #[test]
        fn bt_antisymmetry(a in -50.0f64..50.0, b in -50.0f64..50.0) {
            let p = bt_probability(a, b).unwrap();
            let q = bt_probability(b, a).unwrap();
            prop_assert!(p > 0.0 && p < 1.0 || (a - b).abs() > 36.0);
            prop_assert!((p - (1.0 - q)).abs() <= f64::EPSILON);
        }

        #[test]
        fn adapter_delta_has_low_rank(seed in any::<u64>()) {
            let arch = Architecture::default();
            let net = random_net(&arch, seed);
            for layer in net.layers() {
                let sv = crate::reward_model::tests::singular_values(&layer.adapter.delta());
                let largest = sv[0];
                for s in &sv[layer.adapter.rank()..] {
                    prop_assert!(*s <= 1e-10 * largest);
                }
            }
        }
    }

    pub(crate) fn singular_values(m: &DenseMatrix) -> Vec<f64> {
        let na = nalgebra::DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice());
        let mut sv: Vec<f64> = na.singular_values().iter().copied().collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
        sv
    }
}
