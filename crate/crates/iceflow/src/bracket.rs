//! Hamiltonian latent flow: vector field, quadratic energy, skew-adjointness
//! diagnostic, and pseudo-time integration.
//!
//! The state x = (q, p) holds node and edge latents. With the attention
//! metrics A₀(q), A₁(q) the flow is
//!
//!   q̇ = −A₀⁻¹ d₀ᵀ p,    ṗ = d₀ A₀⁻¹ q,
//!
//! where the cancellation d₀* A₁⁻¹ = A₀⁻¹ d₀ᵀ has been applied analytically,
//! so A₁ is never inverted (it still shapes the dynamics through A₀). The
//! energy E = ½(|q|² + |p|²) is exactly conserved by the continuous flow;
//! integrators approach it at their discretization order.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::attention::{node_metric, AttentionParams};
use crate::error::{Error, Result};
use crate::graph::Graph;

/// Latent node features q (V×N_f) and edge features p (E×N_f).
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub q: Array2<f64>,
    pub p: Array2<f64>,
}

impl LatentState {
    pub fn zeros(graph: &Graph, latent_dim: usize) -> Self {
        Self {
            q: Array2::zeros((graph.num_nodes(), latent_dim)),
            p: Array2::zeros((graph.num_edges(), latent_dim)),
        }
    }

    pub fn check_shapes(&self, graph: &Graph) -> Result<()> {
        if self.q.nrows() != graph.num_nodes() || self.p.nrows() != graph.num_edges() {
            return Err(Error::ShapeMismatch(format!(
                "latent state ({}, {}) rows vs graph (V={}, E={})",
                self.q.nrows(),
                self.p.nrows(),
                graph.num_nodes(),
                graph.num_edges()
            )));
        }
        if self.q.ncols() != self.p.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "q has {} latent columns, p has {}",
                self.q.ncols(),
                self.p.ncols()
            )));
        }
        Ok(())
    }

    /// x + c·y, componentwise.
    pub fn axpy(&self, c: f64, y: &LatentState) -> LatentState {
        LatentState {
            q: &self.q + &(c * &y.q),
            p: &self.p + &(c * &y.p),
        }
    }

    /// Frobenius inner product ⟨self, other⟩ over both components.
    pub fn dot(&self, other: &LatentState) -> f64 {
        let qsum: f64 = self.q.iter().zip(other.q.iter()).map(|(a, b)| a * b).sum();
        let psum: f64 = self.p.iter().zip(other.p.iter()).map(|(a, b)| a * b).sum();
        qsum + psum
    }

    pub fn max_abs(&self) -> f64 {
        self.q
            .iter()
            .chain(self.p.iter())
            .fold(0.0f64, |m, &v| m.max(v.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntegratorMethod {
    ForwardEuler,
    ImplicitAbm,
}

impl std::str::FromStr for IntegratorMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forward-euler" => Ok(IntegratorMethod::ForwardEuler),
            "implicit-abm" => Ok(IntegratorMethod::ImplicitAbm),
            other => Err(Error::Config(format!("unknown integrator method '{other}'"))),
        }
    }
}

impl std::fmt::Display for IntegratorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IntegratorMethod::ForwardEuler => f.write_str("forward-euler"),
            IntegratorMethod::ImplicitAbm => f.write_str("implicit-abm"),
        }
    }
}

/// Pseudo-time integration settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    /// Final pseudo-time (depth analogue).
    pub t_final: f64,
    pub n_steps: usize,
    pub method: IntegratorMethod,
    /// Fixed-point residual target for the implicit corrector.
    pub corrector_tol: f64,
    pub max_corrector_iters: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            t_final: 1.0,
            n_steps: 2,
            method: IntegratorMethod::ImplicitAbm,
            corrector_tol: 1e-10,
            max_corrector_iters: 50,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0) {
            return Err(Error::Config(format!("t_final must be > 0, got {}", self.t_final)));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("n_steps must be >= 1".into()));
        }
        Ok(())
    }
}

/// Evaluates the bracket vector field (q̇, ṗ) at state x.
pub fn vector_field(x: &LatentState, params: &AttentionParams, graph: &Graph) -> Result<LatentState> {
    x.check_shapes(graph)?;
    let metric = node_metric(x.q.view(), params, graph)?;

    // q̇ = −(d₀ᵀ p) / a₀ rowwise
    let mut q_dot = graph.edge_diff_t(x.p.view());
    for (i, mut row) in q_dot.rows_mut().into_iter().enumerate() {
        let s = -1.0 / metric.a0_diag[i];
        for c in 0..row.len() {
            row[c] *= s;
        }
    }

    // ṗ = d₀ (q / a₀)
    let mut q_scaled = x.q.clone();
    for (i, mut row) in q_scaled.rows_mut().into_iter().enumerate() {
        let s = 1.0 / metric.a0_diag[i];
        for c in 0..row.len() {
            row[c] *= s;
        }
    }
    let p_dot = graph.edge_diff(q_scaled.view());

    Ok(LatentState { q: q_dot, p: p_dot })
}

/// Quadratic energy E(x) = ½(|q|² + |p|²), Frobenius norms.
pub fn energy(x: &LatentState) -> f64 {
    let qs: f64 = x.q.iter().map(|v| v * v).sum();
    let ps: f64 = x.p.iter().map(|v| v * v).sum();
    0.5 * (qs + ps)
}

/// Dense skew-adjointness diagnostic: assembles L = [[0, −A₀⁻¹d₀ᵀA₁], [d₀, 0]]
/// and A = diag(A₀, A₁), returns max|LᵀA + AL|. Only for small graphs.
pub fn check_skew_adjoint(
    q: ArrayView2<f64>,
    params: &AttentionParams,
    graph: &Graph,
    node_cap: usize,
) -> Result<f64> {
    if graph.num_nodes() > node_cap {
        return Err(Error::Integration(format!(
            "dense skew-adjointness check capped at {node_cap} nodes, graph has {}",
            graph.num_nodes()
        )));
    }
    let v = graph.num_nodes();
    let e = graph.num_edges();
    let n = v + e;
    let metric = node_metric(q, params, graph)?;

    let mut l = Array2::<f64>::zeros((n, n));
    for (alpha, &[t, h]) in graph.edges().iter().enumerate() {
        let (t, h) = (t as usize, h as usize);
        let a1 = metric.a1_diag[alpha];
        // top-right block: −A₀⁻¹ d₀ᵀ A₁
        l[[t, v + alpha]] = -(-1.0) * a1 / metric.a0_diag[t];
        l[[h, v + alpha]] = -(1.0) * a1 / metric.a0_diag[h];
        // bottom-left block: d₀
        l[[v + alpha, t]] = -1.0;
        l[[v + alpha, h]] = 1.0;
    }
    let mut a = vec![0.0; n];
    a[..v].copy_from_slice(&metric.a0_diag);
    a[v..].copy_from_slice(&metric.a1_diag);

    // residual[r, c] = L[c, r]·a[c] + a[r]·L[r, c]
    let mut max_abs = 0.0f64;
    for r in 0..n {
        for c in 0..n {
            let val = l[[c, r]] * a[c] + a[r] * l[[r, c]];
            max_abs = max_abs.max(val.abs());
        }
    }
    Ok(max_abs)
}

fn residual_scale(x: &LatentState) -> f64 {
    1.0 + x.max_abs()
}

/// Integrates the flow from x0 to pseudo-time T.
///
/// forward-euler: xₖ₊₁ = xₖ + h·f(xₖ).
///
/// implicit-abm: two-step Adams–Bashforth predictor with Adams–Moulton
/// corrector solved by fixed-point iteration until the step residual drops
/// below `corrector_tol` (relative to 1 + |x|∞) or `max_corrector_iters` is
/// hit. The first step has no history and is bootstrapped with a Heun
/// predictor followed by the trapezoidal (one-step Adams–Moulton) corrector.
pub fn integrate(
    x0: &LatentState,
    params: &AttentionParams,
    graph: &Graph,
    cfg: &FlowConfig,
) -> Result<LatentState> {
    cfg.validate()?;
    x0.check_shapes(graph)?;
    let h = cfg.t_final / cfg.n_steps as f64;

    match cfg.method {
        IntegratorMethod::ForwardEuler => {
            let mut x = x0.clone();
            for _ in 0..cfg.n_steps {
                let f = vector_field(&x, params, graph)?;
                x = x.axpy(h, &f);
            }
            Ok(x)
        }
        IntegratorMethod::ImplicitAbm => {
            let mut x = x0.clone();
            let mut f_prev: Option<LatentState> = None; // f at the previous grid point
            for step in 0..cfg.n_steps {
                let f_cur = vector_field(&x, params, graph)?;
                let (mut guess, corrector): (LatentState, Box<dyn Fn(&LatentState) -> LatentState>) =
                    match &f_prev {
                        None => {
                            // Heun bootstrap: explicit trapezoid predictor,
                            // then the implicit trapezoid corrector.
                            let euler = x.axpy(h, &f_cur);
                            let f_euler = vector_field(&euler, params, graph)?;
                            let guess = x.axpy(h / 2.0, &f_cur).axpy(h / 2.0, &f_euler);
                            let base = x.axpy(h / 2.0, &f_cur);
                            (guess, Box::new(move |f_new: &LatentState| base.axpy(h / 2.0, f_new)))
                        }
                        Some(fp) => {
                            // AB2 predictor, AM2 corrector.
                            let guess = x.axpy(1.5 * h, &f_cur).axpy(-0.5 * h, fp);
                            let base = x.axpy(8.0 * h / 12.0, &f_cur).axpy(-h / 12.0, fp);
                            (guess, Box::new(move |f_new: &LatentState| base.axpy(5.0 * h / 12.0, f_new)))
                        }
                    };

                let mut converged = false;
                let mut residual = f64::INFINITY;
                for _ in 0..cfg.max_corrector_iters {
                    let f_new = vector_field(&guess, params, graph)?;
                    let next = corrector(&f_new);
                    residual = next.axpy(-1.0, &guess).max_abs() / residual_scale(&next);
                    guess = next;
                    if residual < cfg.corrector_tol {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    return Err(Error::CorrectorDiverged { residual });
                }
                let _ = step;
                f_prev = Some(f_cur);
                x = guess;
            }
            Ok(x)
        }
    }
}
