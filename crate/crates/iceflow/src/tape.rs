//! Reverse-mode automatic differentiation over matrix-valued operations.
//!
//! The tape records the handful of tensor primitives the surrogate forward
//! pass needs (dense affine maps, tanh, linear combinations, the attention
//! edge scores, clamped exp, incidence scatters/gathers, row-wise division,
//! and a squared-sum loss head). Graph-structured ops reuse the same kernels
//! as the plain evaluation path in [`crate::graph`], so the taped forward and
//! the untaped forward compute identical values. Every recorded operation —
//! including unrolled corrector iterations of the implicit integrator — is
//! replayed in reverse to accumulate exact gradients.

use ndarray::{Array2, Axis};

use crate::error::{Error, Result};
use crate::graph::Graph;

pub const EXP_CLAMP: f64 = crate::attention::EXP_CLAMP;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// x · wᵀ
    MatMulNT { x: Var, w: Var },
    /// x + row-broadcast bias (1×C)
    AddRow { x: Var, b: Var },
    Tanh { x: Var },
    /// Σ cᵢ·vᵢ over equally shaped inputs
    Lincomb { terms: Vec<(f64, Var)> },
    /// per edge (t,h): wq_t·kq_h + wq_h·kq_t  → E×1
    EdgeScores { wq: Var, kq: Var },
    /// exp(min(s, EXP_CLAMP)) elementwise
    ClampExp { s: Var },
    /// E×1 → V×1 sum over incident edges
    IncidentSum { a1: Var },
    /// x[r, c] / d[r]
    DivCol { x: Var, d: Var },
    /// incidence apply, V×C → E×C
    EdgeDiff { x: Var },
    /// transposed incidence apply, E×C → V×C
    EdgeDiffT { e: Var },
    /// Σ x² → 1×1
    SumSq { x: Var },
}

pub struct Tape<'g> {
    graph: &'g Graph,
    ops: Vec<Op>,
    vals: Vec<Array2<f64>>,
    requires_grad: Vec<bool>,
    /// node id → parameter slot for parameter leaves
    param_slot: Vec<Option<usize>>,
    num_params: usize,
    clamp_events: usize,
}

impl<'g> Tape<'g> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            ops: Vec::new(),
            vals: Vec::new(),
            requires_grad: Vec::new(),
            param_slot: Vec::new(),
            num_params: 0,
            clamp_events: 0,
        }
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.vals[v.0]
    }

    pub fn clamp_events(&self) -> usize {
        self.clamp_events
    }

    fn push(&mut self, op: Op, val: Array2<f64>, requires: bool, slot: Option<usize>) -> Var {
        self.ops.push(op);
        self.vals.push(val);
        self.requires_grad.push(requires);
        self.param_slot.push(slot);
        Var(self.ops.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.requires_grad[v.0]
    }

    /// Non-differentiated input (features, targets).
    pub fn constant(&mut self, val: Array2<f64>) -> Var {
        self.push(Op::Leaf, val, false, None)
    }

    /// Differentiated leaf; gradients are returned in registration order.
    pub fn param(&mut self, val: Array2<f64>) -> Var {
        let slot = self.num_params;
        self.num_params += 1;
        self.push(Op::Leaf, val, true, Some(slot))
    }

    pub fn matmul_nt(&mut self, x: Var, w: Var) -> Var {
        let val = self.vals[x.0].dot(&self.vals[w.0].t());
        let req = self.requires(x) || self.requires(w);
        self.push(Op::MatMulNT { x, w }, val, req, None)
    }

    pub fn add_row(&mut self, x: Var, b: Var) -> Var {
        debug_assert_eq!(self.vals[b.0].nrows(), 1);
        let val = &self.vals[x.0] + &self.vals[b.0];
        let req = self.requires(x) || self.requires(b);
        self.push(Op::AddRow { x, b }, val, req, None)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let val = self.vals[x.0].mapv(f64::tanh);
        let req = self.requires(x);
        self.push(Op::Tanh { x }, val, req, None)
    }

    pub fn lincomb(&mut self, terms: &[(f64, Var)]) -> Var {
        assert!(!terms.is_empty());
        let mut val = self.vals[terms[0].1 .0].mapv(|v| v * terms[0].0);
        for &(c, v) in &terms[1..] {
            val.zip_mut_with(&self.vals[v.0], |acc, &x| *acc += c * x);
        }
        let req = terms.iter().any(|&(_, v)| self.requires(v));
        self.push(Op::Lincomb { terms: terms.to_vec() }, val, req, None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(&[(1.0, a), (1.0, b)])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.lincomb(&[(1.0, a), (-1.0, b)])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.lincomb(&[(c, x)])
    }

    pub fn edge_scores(&mut self, wq: Var, kq: Var) -> Var {
        let scores = crate::attention::edge_scores(&self.vals[wq.0], &self.vals[kq.0], self.graph);
        let val = scores.insert_axis(Axis(1));
        let req = self.requires(wq) || self.requires(kq);
        self.push(Op::EdgeScores { wq, kq }, val, req, None)
    }

    pub fn clamp_exp(&mut self, s: Var) -> Result<Var> {
        let sv = &self.vals[s.0];
        let mut clamped = 0usize;
        for &x in sv.iter() {
            if !x.is_finite() {
                return Err(Error::NonFinite("attention exponent".into()));
            }
            if x > EXP_CLAMP {
                clamped += 1;
            }
        }
        self.clamp_events += clamped;
        let val = sv.mapv(|x| x.min(EXP_CLAMP).exp());
        let req = self.requires(s);
        Ok(self.push(Op::ClampExp { s }, val, req, None))
    }

    pub fn incident_sum(&mut self, a1: Var) -> Var {
        let edge_vals = &self.vals[a1.0];
        debug_assert_eq!(edge_vals.dim(), (self.graph.num_edges(), 1));
        let col: Vec<f64> = edge_vals.column(0).to_vec();
        let sums = self.graph.incident_sum(&col);
        let val = Array2::from_shape_vec((self.graph.num_nodes(), 1), sums).unwrap();
        let req = self.requires(a1);
        self.push(Op::IncidentSum { a1 }, val, req, None)
    }

    pub fn div_col(&mut self, x: Var, d: Var) -> Var {
        let dv = &self.vals[d.0];
        debug_assert_eq!(dv.ncols(), 1);
        let mut val = self.vals[x.0].clone();
        for (r, mut row) in val.rows_mut().into_iter().enumerate() {
            let inv = 1.0 / dv[[r, 0]];
            for c in 0..row.len() {
                row[c] *= inv;
            }
        }
        let req = self.requires(x) || self.requires(d);
        self.push(Op::DivCol { x, d }, val, req, None)
    }

    pub fn edge_diff(&mut self, x: Var) -> Var {
        let val = self.graph.edge_diff(self.vals[x.0].view());
        let req = self.requires(x);
        self.push(Op::EdgeDiff { x }, val, req, None)
    }

    pub fn edge_diff_t(&mut self, e: Var) -> Var {
        let val = self.graph.edge_diff_t(self.vals[e.0].view());
        let req = self.requires(e);
        self.push(Op::EdgeDiffT { e }, val, req, None)
    }

    pub fn sum_sq(&mut self, x: Var) -> Var {
        let s: f64 = self.vals[x.0].iter().map(|v| v * v).sum();
        let val = Array2::from_elem((1, 1), s);
        let req = self.requires(x);
        self.push(Op::SumSq { x }, val, req, None)
    }

    /// Reverse accumulation from a scalar root. Returns gradients for the
    /// parameter leaves in registration order.
    pub fn backward(&self, root: Var) -> Result<Vec<Array2<f64>>> {
        let root_val = &self.vals[root.0];
        if root_val.dim() != (1, 1) {
            return Err(Error::ShapeMismatch(format!(
                "backward root must be scalar, got {:?}",
                root_val.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.ops.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));

        for i in (0..=root.0).rev() {
            if !self.requires_grad[i] {
                grads[i] = None;
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &self.ops[i] {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMulNT { x, w } => {
                    if self.requires(*x) {
                        let gx = g.dot(&self.vals[w.0]);
                        accumulate(&mut grads, *x, gx);
                    }
                    if self.requires(*w) {
                        let gw = g.t().dot(&self.vals[x.0]);
                        accumulate(&mut grads, *w, gw);
                    }
                }
                Op::AddRow { x, b } => {
                    if self.requires(*b) {
                        let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        accumulate(&mut grads, *b, gb);
                    }
                    if self.requires(*x) {
                        accumulate(&mut grads, *x, g);
                    }
                }
                Op::Tanh { x } => {
                    if self.requires(*x) {
                        let y = &self.vals[i];
                        let mut gx = g;
                        gx.zip_mut_with(y, |gv, &yv| *gv *= 1.0 - yv * yv);
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::Lincomb { terms } => {
                    for &(c, v) in terms {
                        if self.requires(v) {
                            accumulate(&mut grads, v, g.mapv(|x| c * x));
                        }
                    }
                }
                Op::EdgeScores { wq, kq } => {
                    let wqv = &self.vals[wq.0];
                    let kqv = &self.vals[kq.0];
                    let nh = wqv.ncols();
                    let mut gwq = Array2::zeros(wqv.raw_dim());
                    let mut gkq = Array2::zeros(kqv.raw_dim());
                    for (alpha, &[t, h]) in self.graph.edges().iter().enumerate() {
                        let ga = g[[alpha, 0]];
                        let (t, h) = (t as usize, h as usize);
                        for c in 0..nh {
                            gwq[[t, c]] += ga * kqv[[h, c]];
                            gwq[[h, c]] += ga * kqv[[t, c]];
                            gkq[[h, c]] += ga * wqv[[t, c]];
                            gkq[[t, c]] += ga * wqv[[h, c]];
                        }
                    }
                    if self.requires(*wq) {
                        accumulate(&mut grads, *wq, gwq);
                    }
                    if self.requires(*kq) {
                        accumulate(&mut grads, *kq, gkq);
                    }
                }
                Op::ClampExp { s } => {
                    if self.requires(*s) {
                        let y = &self.vals[i];
                        let sv = &self.vals[s.0];
                        let mut gs = g;
                        gs.zip_mut_with(y, |gv, &yv| *gv *= yv);
                        gs.zip_mut_with(sv, |gv, &svv| {
                            if svv > EXP_CLAMP {
                                *gv = 0.0;
                            }
                        });
                        accumulate(&mut grads, *s, gs);
                    }
                }
                Op::IncidentSum { a1 } => {
                    if self.requires(*a1) {
                        let mut ga = Array2::zeros((self.graph.num_edges(), 1));
                        for (alpha, &[t, h]) in self.graph.edges().iter().enumerate() {
                            ga[[alpha, 0]] = g[[t as usize, 0]] + g[[h as usize, 0]];
                        }
                        accumulate(&mut grads, *a1, ga);
                    }
                }
                Op::DivCol { x, d } => {
                    let dv = &self.vals[d.0];
                    if self.requires(*d) {
                        let y = &self.vals[i];
                        let mut gd = Array2::zeros(dv.raw_dim());
                        for r in 0..y.nrows() {
                            let mut acc = 0.0;
                            for c in 0..y.ncols() {
                                acc += g[[r, c]] * y[[r, c]];
                            }
                            gd[[r, 0]] = -acc / dv[[r, 0]];
                        }
                        accumulate(&mut grads, *d, gd);
                    }
                    if self.requires(*x) {
                        let mut gx = g;
                        for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                            let inv = 1.0 / dv[[r, 0]];
                            for c in 0..row.len() {
                                row[c] *= inv;
                            }
                        }
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::EdgeDiff { x } => {
                    if self.requires(*x) {
                        let gx = self.graph.edge_diff_t(g.view());
                        accumulate(&mut grads, *x, gx);
                    }
                }
                Op::EdgeDiffT { e } => {
                    if self.requires(*e) {
                        let ge = self.graph.edge_diff(g.view());
                        accumulate(&mut grads, *e, ge);
                    }
                }
                Op::SumSq { x } => {
                    if self.requires(*x) {
                        let g0 = g[[0, 0]];
                        let gx = self.vals[x.0].mapv(|v| 2.0 * g0 * v);
                        accumulate(&mut grads, *x, gx);
                    }
                }
            }
        }

        let mut out: Vec<Array2<f64>> = Vec::with_capacity(self.num_params);
        let mut by_slot: Vec<Option<Array2<f64>>> = vec![None; self.num_params];
        for (i, slot) in self.param_slot.iter().enumerate() {
            if let Some(s) = slot {
                by_slot[*s] = Some(match grads[i].take() {
                    Some(g) => g,
                    None => Array2::zeros(self.vals[i].raw_dim()),
                });
            }
        }
        for (s, g) in by_slot.into_iter().enumerate() {
            out.push(g.ok_or_else(|| Error::NonFinite(format!("missing gradient slot {s}")))?);
        }
        Ok(out)
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, contribution: Array2<f64>) {
    match &mut grads[v.0] {
        Some(g) => *g += &contribution,
        slot @ None => *slot = Some(contribution),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn test_graph() -> Graph {
        Graph::new(
            4,
            vec![[0, 1], [1, 2], [2, 3], [0, 2]],
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        )
        .unwrap()
    }

    fn rand_arr(shape: (usize, usize), rng: &mut ChaCha12Rng) -> Array2<f64> {
        Array2::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    /// Central finite differences on a scalar function of one parameter array.
    fn finite_diff(
        build: &dyn Fn(&Array2<f64>) -> f64,
        at: &Array2<f64>,
        eps: f64,
    ) -> Array2<f64> {
        let mut grad = Array2::zeros(at.raw_dim());
        for idx in 0..at.len() {
            let (r, c) = (idx / at.ncols(), idx % at.ncols());
            let mut plus = at.clone();
            plus[[r, c]] += eps;
            let mut minus = at.clone();
            minus[[r, c]] -= eps;
            grad[[r, c]] = (build(&plus) - build(&minus)) / (2.0 * eps);
        }
        grad
    }

    fn assert_grad_close(analytic: &Array2<f64>, fd: &Array2<f64>, what: &str) {
        for (a, f) in analytic.iter().zip(fd.iter()) {
            let denom = a.abs().max(f.abs()).max(1e-4);
            assert!(
                (a - f).abs() / denom < 1e-5,
                "{what}: analytic {a} vs fd {f}"
            );
        }
    }

    /// Checks ∂(sum-sq ∘ op)/∂input against finite differences for a
    /// single-input op.
    fn check_unary<F>(shape: (usize, usize), apply: F, what: &str)
    where
        F: Fn(&mut Tape, Var) -> Var,
    {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let x0 = rand_arr(shape, &mut rng);

        let eval = |x: &Array2<f64>| -> f64 {
            let mut tape = Tape::new(&g);
            let xv = tape.param(x.clone());
            let y = apply(&mut tape, xv);
            let loss = tape.sum_sq(y);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let xv = tape.param(x0.clone());
        let y = apply(&mut tape, xv);
        let loss = tape.sum_sq(y);
        let grads = tape.backward(loss).unwrap();
        let fd = finite_diff(&eval, &x0, 1e-6);
        assert_grad_close(&grads[0], &fd, what);
    }

    #[test]
    fn grad_tanh() {
        check_unary((4, 3), |t, x| t.tanh(x), "tanh");
    }

    #[test]
    fn grad_edge_diff_and_transpose() {
        check_unary((4, 3), |t, x| t.edge_diff(x), "edge_diff");
        check_unary((4, 3), |t, e| t.edge_diff_t(e), "edge_diff_t");
    }

    #[test]
    fn grad_incident_sum() {
        check_unary((4, 1), |t, a| t.incident_sum(a), "incident_sum");
    }

    #[test]
    fn grad_clamp_exp() {
        check_unary((4, 1), |t, s| t.clamp_exp(s).unwrap(), "clamp_exp");
    }

    #[test]
    fn grad_lincomb() {
        check_unary((3, 2), |t, x| {
            let y = t.scale(x, 2.5);
            t.lincomb(&[(1.0, x), (-0.5, y)])
        }, "lincomb");
    }

    #[test]
    fn grad_matmul_both_sides() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let x0 = rand_arr((4, 3), &mut rng);
        let w0 = rand_arr((2, 3), &mut rng);

        // w.r.t. w
        let eval_w = |w: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let x = tape.constant(x0.clone());
            let wv = tape.param(w.clone());
            let y = tape.matmul_nt(x, wv);
            let loss = tape.sum_sq(y);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let x = tape.constant(x0.clone());
        let wv = tape.param(w0.clone());
        let y = tape.matmul_nt(x, wv);
        let loss = tape.sum_sq(y);
        let grads = tape.backward(loss).unwrap();
        assert_grad_close(&grads[0], &finite_diff(&eval_w, &w0, 1e-6), "matmul w");

        // w.r.t. x
        let eval_x = |x: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let xv = tape.param(x.clone());
            let w = tape.constant(w0.clone());
            let y = tape.matmul_nt(xv, w);
            let loss = tape.sum_sq(y);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let xv = tape.param(x0.clone());
        let w = tape.constant(w0.clone());
        let y = tape.matmul_nt(xv, w);
        let loss = tape.sum_sq(y);
        let grads = tape.backward(loss).unwrap();
        assert_grad_close(&grads[0], &finite_diff(&eval_x, &x0, 1e-6), "matmul x");
    }

    #[test]
    fn grad_add_row_bias() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let x0 = rand_arr((4, 3), &mut rng);
        let b0 = rand_arr((1, 3), &mut rng);
        let eval = |b: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let x = tape.constant(x0.clone());
            let bv = tape.param(b.clone());
            let y = tape.add_row(x, bv);
            let ty = tape.tanh(y);
            let loss = tape.sum_sq(ty);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let x = tape.constant(x0.clone());
        let bv = tape.param(b0.clone());
        let y = tape.add_row(x, bv);
        let ty = tape.tanh(y);
        let loss = tape.sum_sq(ty);
        let grads = tape.backward(loss).unwrap();
        assert_grad_close(&grads[0], &finite_diff(&eval, &b0, 1e-6), "add_row bias");
    }

    #[test]
    fn grad_edge_scores() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let wq0 = rand_arr((4, 3), &mut rng);
        let kq0 = rand_arr((4, 3), &mut rng);
        let eval = |wq: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let wqv = tape.param(wq.clone());
            let kqv = tape.constant(kq0.clone());
            let s = tape.edge_scores(wqv, kqv);
            let e = tape.clamp_exp(s).unwrap();
            let loss = tape.sum_sq(e);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let wqv = tape.param(wq0.clone());
        let kqv = tape.param(kq0.clone());
        let s = tape.edge_scores(wqv, kqv);
        let e = tape.clamp_exp(s).unwrap();
        let loss = tape.sum_sq(e);
        let grads = tape.backward(loss).unwrap();
        assert_grad_close(&grads[0], &finite_diff(&eval, &wq0, 1e-6), "edge_scores wq");

        let eval_k = |kq: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let wqv = tape.constant(wq0.clone());
            let kqv = tape.param(kq.clone());
            let s = tape.edge_scores(wqv, kqv);
            let e = tape.clamp_exp(s).unwrap();
            let loss = tape.sum_sq(e);
            tape.value(loss)[[0, 0]]
        };
        assert_grad_close(&grads[1], &finite_diff(&eval_k, &kq0, 1e-6), "edge_scores kq");
    }

    #[test]
    fn grad_div_col() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(29);
        let x0 = rand_arr((4, 3), &mut rng);
        let d0 = Array2::from_shape_fn((4, 1), |_| rng.gen_range(0.5..2.0));

        let eval_d = |d: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let x = tape.constant(x0.clone());
            let dv = tape.param(d.clone());
            let y = tape.div_col(x, dv);
            let loss = tape.sum_sq(y);
            tape.value(loss)[[0, 0]]
        };
        let mut tape = Tape::new(&g);
        let xv = tape.param(x0.clone());
        let dv = tape.param(d0.clone());
        let y = tape.div_col(xv, dv);
        let loss = tape.sum_sq(y);
        let grads = tape.backward(loss).unwrap();
        assert_grad_close(&grads[1], &finite_diff(&eval_d, &d0, 1e-6), "div_col d");

        let eval_x = |x: &Array2<f64>| {
            let mut tape = Tape::new(&g);
            let xv = tape.param(x.clone());
            let d = tape.constant(d0.clone());
            let y = tape.div_col(xv, d);
            let loss = tape.sum_sq(y);
            tape.value(loss)[[0, 0]]
        };
        assert_grad_close(&grads[0], &finite_diff(&eval_x, &x0, 1e-6), "div_col x");
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        let mut tape = Tape::new(&g);
        let used = tape.param(rand_arr((2, 2), &mut rng));
        let unused = tape.param(rand_arr((3, 3), &mut rng));
        let loss = tape.sum_sq(used);
        let grads = tape.backward(loss).unwrap();
        assert!(grads[1].iter().all(|&v| v == 0.0));
        assert_eq!(grads[1].dim(), tape.value(unused).dim());
    }

    #[test]
    fn gradient_is_linear_in_loss_scale() {
        let g = test_graph();
        let mut rng = ChaCha12Rng::seed_from_u64(37);
        let x0 = rand_arr((4, 2), &mut rng);

        let run = |scale: f64| -> Array2<f64> {
            let mut tape = Tape::new(&g);
            let x = tape.param(x0.clone());
            let y = tape.tanh(x);
            let s = tape.sum_sq(y);
            let loss = tape.scale(s, scale);
            tape.backward(loss).unwrap().remove(0)
        };
        let g1 = run(1.0);
        let g3 = run(3.0);
        for (a, b) in g1.iter().zip(g3.iter()) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn clamped_exponent_blocks_gradient() {
        let g = test_graph();
        let mut tape = Tape::new(&g);
        let s = tape.param(Array2::from_elem((2, 1), EXP_CLAMP + 5.0));
        let e = tape.clamp_exp(s).unwrap();
        let loss = tape.sum_sq(e);
        let grads = tape.backward(loss).unwrap();
        assert!(grads[0].iter().all(|&v| v == 0.0));
        assert_eq!(tape.clamp_events(), 2);
    }
}
