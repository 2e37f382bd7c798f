//! Encoder/decoder networks, the differentiable forward pass, and the MSE
//! loss.
//!
//! Encoders and the decoder are per-row two-layer dense maps (tanh hidden,
//! linear output); all cross-node interaction happens in the bracket flow.
//! The taped forward reuses the same kernels as the plain forward, so both
//! paths produce identical predictions; gradients come from replaying the
//! tape, with the integrator's corrector iterations unrolled.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionHead, AttentionParams};
use crate::bracket::{integrate, FlowConfig, IntegratorMethod, LatentState};
use crate::dataprep::Sample;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tape::{Tape, Var};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_in: usize,
    pub d_out: usize,
    /// Hidden width of the encoder/decoder MLPs.
    pub encoder_width: usize,
    /// Latent feature dimension N_f shared by node and edge latents.
    pub latent_dim: usize,
    /// Attention embedding dimension N_h.
    pub attention_hidden: usize,
    pub attention_heads: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_in: 5,
            d_out: 2,
            encoder_width: 32,
            latent_dim: 20,
            attention_hidden: 20,
            attention_heads: 2,
        }
    }
}

/// Two-layer dense map with tanh hidden activation and linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    /// hidden×in
    pub w1: Array2<f64>,
    /// 1×hidden
    pub b1: Array2<f64>,
    /// out×hidden
    pub w2: Array2<f64>,
    /// 1×out
    pub b2: Array2<f64>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

impl Mlp {
    pub fn zeros(d_in: usize, hidden: usize, d_out: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, d_in)),
            b1: Array2::zeros((1, hidden)),
            w2: Array2::zeros((d_out, hidden)),
            b2: Array2::zeros((1, d_out)),
        }
    }

    pub fn init(d_in: usize, hidden: usize, d_out: usize, rng: &mut ChaCha12Rng) -> Self {
        Self {
            w1: glorot(hidden, d_in, rng),
            b1: Array2::zeros((1, hidden)),
            w2: glorot(d_out, hidden, rng),
            b2: Array2::zeros((1, d_out)),
        }
    }

    /// Row-wise application: tanh(x·w1ᵀ + b1)·w2ᵀ + b2.
    pub fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let hidden = (x.dot(&self.w1.t()) + &self.b1).mapv(f64::tanh);
        hidden.dot(&self.w2.t()) + &self.b2
    }
}

/// All learnable parameters: encoders, decoder, and attention embeddings.
/// Graph-independent, hence the unit of transfer learning.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub node_encoder: Mlp,
    pub edge_encoder: Mlp,
    pub decoder: Mlp,
    pub attention: AttentionParams,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Self {
        Self {
            config,
            node_encoder: Mlp::zeros(config.d_in, config.encoder_width, config.latent_dim),
            edge_encoder: Mlp::zeros(1, config.encoder_width, config.latent_dim),
            decoder: Mlp::zeros(config.latent_dim, config.encoder_width, config.d_out),
            attention: AttentionParams::zeros(
                config.attention_heads,
                config.attention_hidden,
                config.latent_dim,
            ),
        }
    }

    /// Glorot-uniform encoder/decoder weights, zero biases, and attention
    /// embeddings at scale 0.1/√N_f so the initial metric is near-uniform.
    pub fn init(config: ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let node_encoder = Mlp::init(config.d_in, config.encoder_width, config.latent_dim, &mut rng);
        let edge_encoder = Mlp::init(1, config.encoder_width, config.latent_dim, &mut rng);
        let decoder = Mlp::init(config.latent_dim, config.encoder_width, config.d_out, &mut rng);
        let scale = 0.1 / (config.latent_dim as f64).sqrt();
        let heads = (0..config.attention_heads)
            .map(|_| AttentionHead {
                w: Array2::from_shape_fn((config.attention_hidden, config.latent_dim), |_| {
                    rng.gen_range(-scale..scale)
                }),
                k: Array2::from_shape_fn((config.attention_hidden, config.latent_dim), |_| {
                    rng.gen_range(-scale..scale)
                }),
            })
            .collect();
        Self {
            config,
            node_encoder,
            edge_encoder,
            decoder,
            attention: AttentionParams { heads },
        }
    }

    /// Parameter arrays with stable names, in the canonical order used by
    /// gradients, the optimizer, and checkpoints.
    pub fn arrays(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (prefix, mlp) in [
            ("node_encoder", &self.node_encoder),
            ("edge_encoder", &self.edge_encoder),
            ("decoder", &self.decoder),
        ] {
            out.push((format!("{prefix}.w1"), &mlp.w1));
            out.push((format!("{prefix}.b1"), &mlp.b1));
            out.push((format!("{prefix}.w2"), &mlp.w2));
            out.push((format!("{prefix}.b2"), &mlp.b2));
        }
        for (h, head) in self.attention.heads.iter().enumerate() {
            out.push((format!("attention.head{h}.w"), &head.w));
            out.push((format!("attention.head{h}.k"), &head.k));
        }
        out
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out: Vec<&mut Array2<f64>> = Vec::new();
        for mlp in [&mut self.node_encoder, &mut self.edge_encoder, &mut self.decoder] {
            out.push(&mut mlp.w1);
            out.push(&mut mlp.b1);
            out.push(&mut mlp.w2);
            out.push(&mut mlp.b2);
        }
        for head in &mut self.attention.heads {
            out.push(&mut head.w);
            out.push(&mut head.k);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.arrays().iter().map(|(_, a)| a.len()).sum()
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, a) in self.arrays() {
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter {name}")));
            }
        }
        Ok(())
    }
}

fn check_sample_dims(sample: &Sample, params: &ModelParams, graph: &Graph) -> Result<()> {
    sample.check_shapes(graph)?;
    if sample.node_features.ncols() != params.config.d_in {
        return Err(Error::ShapeMismatch(format!(
            "sample has {} features, model expects {}",
            sample.node_features.ncols(),
            params.config.d_in
        )));
    }
    Ok(())
}

/// Lifts normalized features into the latent space, row-wise.
pub fn encode(sample: &Sample, params: &ModelParams, graph: &Graph) -> Result<LatentState> {
    check_sample_dims(sample, params, graph)?;
    Ok(LatentState {
        q: params.node_encoder.apply(&sample.node_features),
        p: params.edge_encoder.apply(&sample.edge_features),
    })
}

/// Maps the final node latents back to normalized predictions; edge latents
/// are discarded.
pub fn decode(x: &LatentState, params: &ModelParams) -> Array2<f64> {
    params.decoder.apply(&x.q)
}

/// Full forward pass: encode, evolve the bracket flow, decode.
pub fn forward(
    sample: &Sample,
    params: &ModelParams,
    flow: &FlowConfig,
    graph: &Graph,
) -> Result<Array2<f64>> {
    let x0 = encode(sample, params, graph)?;
    let x_t = integrate(&x0, &params.attention, graph, flow)?;
    Ok(decode(&x_t, params))
}

/// Per-sample loss: sum over nodes and components of squared error.
pub fn mse_loss(pred: &Array2<f64>, target: &Array2<f64>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::ShapeMismatch(format!(
            "prediction {:?} vs target {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    Ok(pred
        .iter()
        .zip(target.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

/// Batch loss: mean of per-sample losses.
pub fn batch_mse(pairs: &[(Array2<f64>, Array2<f64>)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Dataset("batch_mse of an empty batch".into()));
    }
    let mut total = 0.0;
    for (pred, target) in pairs {
        total += mse_loss(pred, target)?;
    }
    Ok(total / pairs.len() as f64)
}

// ---------------------------------------------------------------------------
// taped forward
// ---------------------------------------------------------------------------

struct TapedMlp {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Parameter handles on a tape, registered in the canonical array order.
pub struct TapedModel {
    node_encoder: TapedMlp,
    edge_encoder: TapedMlp,
    decoder: TapedMlp,
    attention: Vec<(Var, Var)>,
}

impl TapedModel {
    pub fn register(tape: &mut Tape, params: &ModelParams) -> Self {
        let mlp = |tape: &mut Tape, m: &Mlp| TapedMlp {
            w1: tape.param(m.w1.clone()),
            b1: tape.param(m.b1.clone()),
            w2: tape.param(m.w2.clone()),
            b2: tape.param(m.b2.clone()),
        };
        let node_encoder = mlp(tape, &params.node_encoder);
        let edge_encoder = mlp(tape, &params.edge_encoder);
        let decoder = mlp(tape, &params.decoder);
        let attention = params
            .attention
            .heads
            .iter()
            .map(|h| (tape.param(h.w.clone()), tape.param(h.k.clone())))
            .collect();
        Self {
            node_encoder,
            edge_encoder,
            decoder,
            attention,
        }
    }
}

fn taped_mlp_apply(tape: &mut Tape, m: &TapedMlp, x: Var) -> Var {
    let a = tape.matmul_nt(x, m.w1);
    let a = tape.add_row(a, m.b1);
    let h = tape.tanh(a);
    let o = tape.matmul_nt(h, m.w2);
    tape.add_row(o, m.b2)
}

/// Bracket vector field on the tape; same math as [`crate::bracket::vector_field`].
fn taped_vector_field(tape: &mut Tape, model: &TapedModel, q: Var, p: Var) -> Result<(Var, Var)> {
    let inv_heads = 1.0 / model.attention.len() as f64;
    let mut terms = Vec::with_capacity(model.attention.len());
    for &(w, k) in &model.attention {
        let wq = tape.matmul_nt(q, w);
        let kq = tape.matmul_nt(q, k);
        let s = tape.edge_scores(wq, kq);
        let e = tape.clamp_exp(s)?;
        terms.push((inv_heads, e));
    }
    let a1 = tape.lincomb(&terms);
    let a0 = tape.incident_sum(a1);
    for (alpha, &v) in tape.value(a1).iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::Metric(format!("edge metric underflowed to {v} on edge {alpha}")));
        }
    }
    if let Some((i, &v)) = tape.value(a0).iter().enumerate().find(|(_, &v)| !(v > 0.0)) {
        return Err(Error::Metric(format!("node metric non-positive ({v}) at node {i}")));
    }

    let dtp = tape.edge_diff_t(p);
    let scaled = tape.div_col(dtp, a0);
    let q_dot = tape.scale(scaled, -1.0);

    let qs = tape.div_col(q, a0);
    let p_dot = tape.edge_diff(qs);
    Ok((q_dot, p_dot))
}

fn taped_residual(tape: &Tape, next: (Var, Var), cur: (Var, Var)) -> f64 {
    let max_abs = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter()
            .zip(b.iter())
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
    };
    let dq = max_abs(tape.value(next.0), tape.value(cur.0));
    let dp = max_abs(tape.value(next.1), tape.value(cur.1));
    let scale = 1.0
        + tape
            .value(next.0)
            .iter()
            .chain(tape.value(next.1).iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()));
    dq.max(dp) / scale
}

/// Integrator on the tape; mirrors [`crate::bracket::integrate`] step for step,
/// with corrector iterations unrolled onto the tape.
fn taped_integrate(
    tape: &mut Tape,
    model: &TapedModel,
    x0: (Var, Var),
    flow: &FlowConfig,
) -> Result<(Var, Var)> {
    flow.validate()?;
    let h = flow.t_final / flow.n_steps as f64;
    let mut x = x0;

    match flow.method {
        IntegratorMethod::ForwardEuler => {
            for _ in 0..flow.n_steps {
                let (fq, fp) = taped_vector_field(tape, model, x.0, x.1)?;
                x = (
                    tape.lincomb(&[(1.0, x.0), (h, fq)]),
                    tape.lincomb(&[(1.0, x.1), (h, fp)]),
                );
            }
            Ok(x)
        }
        IntegratorMethod::ImplicitAbm => {
            let mut f_prev: Option<(Var, Var)> = None;
            for _ in 0..flow.n_steps {
                let f_cur = taped_vector_field(tape, model, x.0, x.1)?;
                // predictor and the corrector coefficients relative to x
                let (mut guess, base, new_coeff) = match f_prev {
                    None => {
                        let eq = tape.lincomb(&[(1.0, x.0), (h, f_cur.0)]);
                        let ep = tape.lincomb(&[(1.0, x.1), (h, f_cur.1)]);
                        let (feq, fep) = taped_vector_field(tape, model, eq, ep)?;
                        let guess = (
                            tape.lincomb(&[(1.0, x.0), (h / 2.0, f_cur.0), (h / 2.0, feq)]),
                            tape.lincomb(&[(1.0, x.1), (h / 2.0, f_cur.1), (h / 2.0, fep)]),
                        );
                        let base = (
                            tape.lincomb(&[(1.0, x.0), (h / 2.0, f_cur.0)]),
                            tape.lincomb(&[(1.0, x.1), (h / 2.0, f_cur.1)]),
                        );
                        (guess, base, h / 2.0)
                    }
                    Some(fp_var) => {
                        let guess = (
                            tape.lincomb(&[(1.0, x.0), (1.5 * h, f_cur.0), (-0.5 * h, fp_var.0)]),
                            tape.lincomb(&[(1.0, x.1), (1.5 * h, f_cur.1), (-0.5 * h, fp_var.1)]),
                        );
                        let base = (
                            tape.lincomb(&[(1.0, x.0), (8.0 * h / 12.0, f_cur.0), (-h / 12.0, fp_var.0)]),
                            tape.lincomb(&[(1.0, x.1), (8.0 * h / 12.0, f_cur.1), (-h / 12.0, fp_var.1)]),
                        );
                        (guess, base, 5.0 * h / 12.0)
                    }
                };

                let mut converged = false;
                let mut residual = f64::INFINITY;
                for _ in 0..flow.max_corrector_iters {
                    let (fnq, fnp) = taped_vector_field(tape, model, guess.0, guess.1)?;
                    let next = (
                        tape.lincomb(&[(1.0, base.0), (new_coeff, fnq)]),
                        tape.lincomb(&[(1.0, base.1), (new_coeff, fnp)]),
                    );
                    residual = taped_residual(tape, next, guess);
                    guess = next;
                    if residual < flow.corrector_tol {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::CorrectorDiverged { residual });
                }
                f_prev = Some(f_cur);
                x = guess;
            }
            Ok(x)
        }
    }
}

/// Records the full forward pass on `tape`; returns the prediction handle.
pub fn forward_on_tape(
    tape: &mut Tape,
    model: &TapedModel,
    sample: &Sample,
    flow: &FlowConfig,
) -> Result<Var> {
    let node_features = tape.constant(sample.node_features.clone());
    let edge_features = tape.constant(sample.edge_features.clone());
    let q0 = taped_mlp_apply(tape, &model.node_encoder, node_features);
    let p0 = taped_mlp_apply(tape, &model.edge_encoder, edge_features);
    let (q_t, _p_t) = taped_integrate(tape, model, (q0, p0), flow)?;
    Ok(taped_mlp_apply(tape, &model.decoder, q_t))
}

/// Records forward plus per-sample loss; returns (prediction, loss) handles.
pub fn loss_on_tape(
    tape: &mut Tape,
    model: &TapedModel,
    sample: &Sample,
    flow: &FlowConfig,
) -> Result<(Var, Var)> {
    let pred = forward_on_tape(tape, model, sample, flow)?;
    let target = tape.constant(sample.targets.clone());
    let diff = tape.sub(pred, target);
    let loss = tape.sum_sq(diff);
    Ok((pred, loss))
}

/// Per-sample gradient of the loss w.r.t. all parameters.
pub fn sample_grad(
    params: &ModelParams,
    graph: &Graph,
    sample: &Sample,
    flow: &FlowConfig,
) -> Result<(f64, Vec<Array2<f64>>, usize)> {
    let mut tape = Tape::new(graph);
    let model = TapedModel::register(&mut tape, params);
    let (_, loss) = loss_on_tape(&mut tape, &model, sample, flow)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss)[[0, 0]], grads, tape.clamp_events()))
}

/// Mean loss and mean gradient over a batch. Per-sample work runs in
/// parallel; the reduction is in sample index order, so results are
/// independent of thread scheduling.
pub fn batch_grad(
    params: &ModelParams,
    graph: &Graph,
    batch: &[&Sample],
    flow: &FlowConfig,
) -> Result<(f64, Vec<Array2<f64>>, usize)> {
    if batch.is_empty() {
        return Err(Error::Dataset("gradient of an empty batch".into()));
    }
    let per_sample: Vec<Result<(f64, Vec<Array2<f64>>, usize)>> = batch
        .par_iter()
        .map(|s| sample_grad(params, graph, s, flow))
        .collect();

    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut grads: Option<Vec<Array2<f64>>> = None;
    let mut clamps = 0usize;
    for r in per_sample {
        let (l, g, c) = r?;
        loss += l;
        clamps += c;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += &b;
                }
            }
        }
    }
    let mut grads = grads.unwrap();
    for g in &mut grads {
        g.mapv_inplace(|v| v * scale);
    }
    loss *= scale;

    let names = params.arrays();
    for ((name, _), g) in names.iter().zip(&grads) {
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient for {name}")));
        }
    }
    Ok((loss, grads, clamps))
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::dataprep::FEATURE_COUNT;

    pub(crate) fn small_config() -> ModelConfig {
        ModelConfig {
            d_in: FEATURE_COUNT,
            d_out: 2,
            encoder_width: 8,
            latent_dim: 6,
            attention_hidden: 5,
            attention_heads: 2,
        }
    }

    fn ring_graph(n: usize) -> Graph {
        let mut edges: Vec<[u32; 2]> = (1..n).map(|i| [(i - 1) as u32, i as u32]).collect();
        edges.push([0, (n - 1) as u32]);
        let coords = (0..n)
            .map(|i| {
                let a = i as f64 / n as f64 * std::f64::consts::TAU;
                [a.cos() * 1000.0, a.sin() * 1000.0]
            })
            .collect();
        Graph::new(n, edges, coords).unwrap()
    }

    pub(crate) fn random_sample(graph: &Graph, seed: u64) -> Sample {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        Sample {
            realization: 0,
            snapshot: 0,
            node_features: Array2::from_shape_fn((graph.num_nodes(), FEATURE_COUNT), |_| {
                rng.gen_range(-1.0..1.0)
            }),
            edge_features: Array2::from_shape_fn((graph.num_edges(), 1), |_| rng.gen_range(0.0..1.0)),
            targets: Array2::from_shape_fn((graph.num_nodes(), 2), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    #[test]
    fn zero_params_give_zero_predictions() {
        let g = ring_graph(8);
        let params = ModelParams::zeros(small_config());
        let sample = random_sample(&g, 1);
        let x0 = encode(&sample, &params, &g).unwrap();
        assert!(x0.q.iter().all(|&v| v == 0.0));
        assert!(x0.p.iter().all(|&v| v == 0.0));
        let pred = forward(&sample, &params, &FlowConfig::default(), &g).unwrap();
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_rowwise_and_equivariant() {
        let g = ring_graph(6);
        let params = ModelParams::init(small_config(), 3);
        let mut sample = random_sample(&g, 2);
        // identical features at two nodes → identical latent rows
        let row0 = sample.node_features.row(0).to_owned();
        sample.node_features.row_mut(4).assign(&row0);
        let x = encode(&sample, &params, &g).unwrap();
        assert_eq!(x.q.row(0), x.q.row(4));
    }

    #[test]
    fn forward_is_deterministic() {
        let g = ring_graph(8);
        let params = ModelParams::init(small_config(), 5);
        let sample = random_sample(&g, 6);
        let flow = FlowConfig::default();
        let a = forward(&sample, &params, &flow, &g).unwrap();
        let b = forward(&sample, &params, &flow, &g).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn taped_forward_matches_plain_forward() {
        let g = ring_graph(9);
        let params = ModelParams::init(small_config(), 7);
        let sample = random_sample(&g, 8);
        for method in [IntegratorMethod::ForwardEuler, IntegratorMethod::ImplicitAbm] {
            let flow = FlowConfig { method, ..FlowConfig::default() };
            let plain = forward(&sample, &params, &flow, &g).unwrap();
            let mut tape = Tape::new(&g);
            let model = TapedModel::register(&mut tape, &params);
            let pred = forward_on_tape(&mut tape, &model, &sample, &flow).unwrap();
            let taped = tape.value(pred);
            let max_diff = (&plain - taped).iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            assert!(max_diff < 1e-14, "{method}: {max_diff}");
        }
    }

    #[test]
    fn mse_loss_values() {
        let a = ndarray::array![[1.0, 2.0]];
        let b = ndarray::array![[0.0, 1.0]];
        assert_eq!(mse_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(mse_loss(&a, &b).unwrap(), 2.0);
        // doubling residuals quadruples the loss
        let doubled = ndarray::array![[2.0, 3.0]];
        assert_eq!(mse_loss(&doubled, &b).unwrap(), 4.0 * mse_loss(&a, &b).unwrap());
        assert!(mse_loss(&a, &ndarray::Array2::zeros((2, 2))).is_err());
        let batch = vec![(a.clone(), b.clone()), (b.clone(), b.clone())];
        assert_eq!(batch_mse(&batch).unwrap(), 1.0);
    }

    #[test]
    fn flow_config_rejects_zero_steps() {
        let g = ring_graph(6);
        let params = ModelParams::init(small_config(), 9);
        let sample = random_sample(&g, 10);
        let flow = FlowConfig { n_steps: 0, ..FlowConfig::default() };
        assert!(forward(&sample, &params, &flow, &g).is_err());
    }

    /// End-to-end gradient vs central finite differences on random instances.
    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let g = ring_graph(8);
        let flow = FlowConfig::default();
        for seed in 0..3 {
            let params = ModelParams::init(small_config(), 100 + seed);
            let sample = random_sample(&g, 200 + seed);
            let (_, grads, _) = sample_grad(&params, &g, &sample, &flow).unwrap();

            let loss_at = |p: &ModelParams| -> f64 {
                let pred = forward(&sample, p, &flow, &g).unwrap();
                mse_loss(&pred, &sample.targets).unwrap()
            };

            let eps = 1e-6;
            // Coordinates far below the loss scale cannot be resolved by
            // central differences (roundoff ~1e-10·|loss| at this eps), so the
            // relative comparison floors at 1e-4·(1 + |loss|).
            let loss0 = loss_at(&params);
            let floor = 1e-4 * (1.0 + loss0.abs());
            let names: Vec<String> = params.arrays().iter().map(|(n, _)| n.clone()).collect();
            for (ai, name) in names.iter().enumerate() {
                let shape = grads[ai].dim();
                for idx in 0..grads[ai].len() {
                    let (r, c) = (idx / shape.1, idx % shape.1);
                    let mut plus = params.clone();
                    plus.arrays_mut()[ai][[r, c]] += eps;
                    let mut minus = params.clone();
                    minus.arrays_mut()[ai][[r, c]] -= eps;
                    let fd = (loss_at(&plus) - loss_at(&minus)) / (2.0 * eps);
                    let an = grads[ai][[r, c]];
                    let denom = an.abs().max(fd.abs()).max(floor);
                    assert!(
                        (an - fd).abs() / denom < 1e-5,
                        "seed {seed}, {name}[{r},{c}]: analytic {an} vs fd {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn batch_grad_is_mean_of_sample_grads() {
        let g = ring_graph(8);
        let params = ModelParams::init(small_config(), 31);
        let flow = FlowConfig::default();
        let s1 = random_sample(&g, 32);
        let s2 = random_sample(&g, 33);
        let (l1, g1, _) = sample_grad(&params, &g, &s1, &flow).unwrap();
        let (l2, g2, _) = sample_grad(&params, &g, &s2, &flow).unwrap();
        let (lb, gb, _) = batch_grad(&params, &g, &[&s1, &s2], &flow).unwrap();
        assert!((lb - 0.5 * (l1 + l2)).abs() < 1e-12);
        for ((a, b), m) in g1.iter().zip(&g2).zip(&gb) {
            let expect = (a + b) * 0.5;
            let diff = (&expect - m).iter().fold(0.0f64, |mx, &v| mx.max(v.abs()));
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn forward_permutation_equivariance() {
        let g = ring_graph(7);
        let params = ModelParams::init(small_config(), 41);
        let sample = random_sample(&g, 42);
        let flow = FlowConfig::default();
        let pred = forward(&sample, &params, &flow, &g).unwrap();

        let n = g.num_nodes();
        let perm: Vec<usize> = (0..n).map(|i| (i + 3) % n).collect();
        let edges2: Vec<[u32; 2]> = g
            .edges()
            .iter()
            .map(|&[t, h]| [perm[t as usize] as u32, perm[h as usize] as u32])
            .collect();
        let mut coords2 = vec![[0.0, 0.0]; n];
        let mut feats2 = Array2::zeros(sample.node_features.raw_dim());
        let mut targs2 = Array2::zeros(sample.targets.raw_dim());
        for i in 0..n {
            coords2[perm[i]] = g.coords()[i];
            feats2.row_mut(perm[i]).assign(&sample.node_features.row(i));
            targs2.row_mut(perm[i]).assign(&sample.targets.row(i));
        }
        let g2 = Graph::new(n, edges2, coords2).unwrap();
        let sample2 = Sample {
            node_features: feats2,
            targets: targs2,
            ..sample.clone()
        };
        let pred2 = forward(&sample2, &params, &flow, &g2).unwrap();
        for i in 0..n {
            for c in 0..pred.ncols() {
                assert_eq!(pred[[i, c]], pred2[[perm[i], c]]);
            }
        }
    }
}
