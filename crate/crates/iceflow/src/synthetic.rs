//! Desk-scale synthetic dataset: jittered-grid Delaunay meshes, smoothed
//! random input fields, and an analytic velocity oracle.
//!
//! The oracle u = −c·Hᵃ·‖∇s‖^{a−1}·∇s/μ (with surface s = b + H and ∇s from a
//! per-node least-squares stencil) is a smooth, nonlinear, local map of the
//! inputs and their first derivatives — learnable by a shallow
//! message-passing model without any PDE solve. Random fields are white noise
//! smoothed by repeated (I + τΛ)⁻¹ applications, with τ fitted so the
//! empirical correlation length matches the requested one.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::dataprep::{Dataset, Sample, Split, FEATURE_COUNT};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::partition::Laplacian;
use crate::util::mix_seed;

/// Ice/seawater density ratio used for the flotation flag.
const FLOTATION_RATIO: f64 = 0.917 / 1.028;

// seed stream tags
const STREAM_MESH: u64 = 1;
const STREAM_BED: u64 = 2;
const STREAM_FRICTION: u64 = 3;
const STREAM_THICKNESS: u64 = 4;
const STREAM_SNAPSHOT: u64 = 5;
const STREAM_SPLITS: u64 = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub num_nodes: usize,
    /// Side length of the square domain [m].
    pub domain_size: f64,
    /// Target correlation length of the random fields [m].
    pub correlation_length: f64,
    pub num_realizations: u32,
    pub num_snapshots: u32,
    pub seed: u64,
    /// Flow exponent a in the oracle.
    pub flow_exponent: f64,
    /// Sliding coefficient c in the oracle.
    pub sliding_coefficient: f64,
    /// Grid jitter as a fraction of the spacing.
    pub jitter: f64,
    pub validation_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_nodes: 2000,
            domain_size: 10_000.0,
            correlation_length: 2_500.0,
            num_realizations: 25,
            num_snapshots: 10,
            seed: 0,
            flow_exponent: 3.0,
            sliding_coefficient: 1e-3,
            jitter: 0.35,
            validation_fraction: 0.2,
            test_fraction: 0.2,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes < 16 {
            return Err(Error::Config(format!("num_nodes must be ≥ 16, got {}", self.num_nodes)));
        }
        if !(self.domain_size > 0.0) || !(self.correlation_length > 0.0) {
            return Err(Error::Config("domain_size and correlation_length must be > 0".into()));
        }
        if self.num_realizations == 0 || self.num_snapshots == 0 {
            return Err(Error::Config("realization and snapshot counts must be ≥ 1".into()));
        }
        if !(0.0..0.5).contains(&self.validation_fraction)
            || !(0.0..0.5).contains(&self.test_fraction)
        {
            return Err(Error::Config("split fractions must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

/// Jittered-grid Delaunay mesh over the square domain; deterministic given
/// the seed, with up to 5 re-jitter attempts on degenerate triangulations.
pub fn generate_mesh(cfg: &SyntheticConfig) -> Result<Graph> {
    cfg.validate()?;
    let n = cfg.num_nodes;
    let nx = (n as f64).sqrt().round().max(2.0) as usize;
    let ny = n.div_ceil(nx);
    let dx = cfg.domain_size / (nx - 1).max(1) as f64;
    let dy = cfg.domain_size / (ny - 1).max(1) as f64;

    let mut last_err = None;
    for attempt in 0..5 {
        let mut rng =
            ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, mix_seed(STREAM_MESH, attempt)));
        let mut points = Vec::with_capacity(n);
        'outer: for gy in 0..ny {
            for gx in 0..nx {
                if points.len() == n {
                    break 'outer;
                }
                let jx = if cfg.jitter > 0.0 {
                    rng.gen_range(-cfg.jitter..cfg.jitter) * dx
                } else {
                    0.0
                };
                let jy = if cfg.jitter > 0.0 {
                    rng.gen_range(-cfg.jitter..cfg.jitter) * dy
                } else {
                    0.0
                };
                points.push([gx as f64 * dx + jx, gy as f64 * dy + jy]);
            }
        }
        match crate::delaunay::triangulate(&points)
            .and_then(|tri| Graph::new(n, tri.edges, points.clone()))
        {
            Ok(graph) => return Ok(graph),
            Err(e) => last_err = Some(e),
        }
    }
    Err(Error::Synthetic(format!(
        "mesh generation failed after 5 jitter attempts: {}",
        last_err.unwrap()
    )))
}

fn conjugate_gradient<F>(apply: F, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let b_norm2: f64 = b.iter().map(|v| v * v).sum();
    if b_norm2 == 0.0 {
        return Ok(x);
    }
    let mut rs: f64 = b_norm2;
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        if rs_new <= tol * tol * b_norm2 {
            return Ok(x);
        }
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::Synthetic("conjugate gradient did not converge".into()))
}

/// Smoothing kernel fitted to a graph: `steps` applications of (I + τΛ)⁻¹
/// with Λ the combinatorial Laplacian.
#[derive(Debug, Clone, Copy)]
pub struct Smoother {
    pub steps: usize,
    pub tau: f64,
}

fn combinatorial_laplacian(graph: &Graph) -> Laplacian {
    Laplacian::from_edge_weights(graph, vec![1.0; graph.num_edges()]).expect("unit weights")
}

/// White noise smoothed `steps` times, not standardized.
fn smooth_field_raw(graph: &Graph, smoother: &Smoother, seed: u64) -> Result<Vec<f64>> {
    let lap = combinatorial_laplacian(graph);
    let n = graph.num_nodes();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    // Box–Muller standard normals
    let mut field: Vec<f64> = (0..n)
        .map(|_| {
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    let tau = smoother.tau;
    for _ in 0..smoother.steps {
        let rhs = field.clone();
        field = conjugate_gradient(
            |x, y| {
                lap.apply(x, y);
                for i in 0..n {
                    y[i] = x[i] + tau * y[i];
                }
            },
            &rhs,
            1e-10,
            2000,
        )?;
    }
    Ok(field)
}

fn standardize(field: &mut [f64]) -> Result<()> {
    let n = field.len() as f64;
    let mean: f64 = field.iter().sum::<f64>() / n;
    let var: f64 = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    if var <= 0.0 {
        return Err(Error::Synthetic("smoothed field is constant".into()));
    }
    let inv = 1.0 / var.sqrt();
    for v in field.iter_mut() {
        *v = (*v - mean) * inv;
    }
    Ok(())
}

/// Empirical autocorrelation of a standardized field at pair distance ≈ len.
fn autocorrelation_at(graph: &Graph, field: &[f64], len: f64, probe_seed: u64) -> f64 {
    let n = graph.num_nodes();
    let coords = graph.coords();
    let mut rng = ChaCha12Rng::seed_from_u64(probe_seed);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..60_000 {
        if xs.len() >= 4000 {
            break;
        }
        let u = rng.gen_range(0..n);
        let v = rng.gen_range(0..n);
        if u == v {
            continue;
        }
        let d = ((coords[u][0] - coords[v][0]).powi(2) + (coords[u][1] - coords[v][1]).powi(2))
            .sqrt();
        if (0.85 * len..=1.15 * len).contains(&d) {
            xs.push(field[u]);
            ys.push(field[v]);
        }
    }
    if xs.len() < 50 {
        return 0.0;
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - mx) * (y - my);
        vx += (x - mx) * (x - mx);
        vy += (y - my) * (y - my);
    }
    cov / (vx * vy).sqrt().max(1e-300)
}

/// Fits τ (with a fixed number of smoothing steps) so the empirical
/// autocorrelation at `correlation_length` is ≈ 0.5, by bisection on log τ
/// over averaged probe fields.
pub fn fit_smoother(graph: &Graph, correlation_length: f64) -> Result<Smoother> {
    let steps = 4;
    let measure = |tau: f64| -> Result<f64> {
        let mut acc = 0.0;
        for probe in 0..3u64 {
            let mut f = smooth_field_raw(graph, &Smoother { steps, tau }, mix_seed(0xF17, probe))?;
            standardize(&mut f)?;
            acc += autocorrelation_at(graph, &f, correlation_length, 0xAC + probe);
        }
        Ok(acc / 3.0)
    };

    let mut lo = 1e-3;
    let mut hi = 1e-3;
    let mut rho_hi = measure(hi)?;
    let mut expansions = 0;
    while rho_hi < 0.5 && expansions < 30 {
        hi *= 6.0;
        rho_hi = measure(hi)?;
        expansions += 1;
    }
    if rho_hi < 0.5 {
        // correlation length unreachable (larger than the domain); use the cap
        return Ok(Smoother { steps, tau: hi });
    }
    let mut rho_lo = measure(lo)?;
    while rho_lo > 0.5 && lo > 1e-12 {
        lo /= 6.0;
        rho_lo = measure(lo)?;
    }
    for _ in 0..14 {
        let mid = ((lo.ln() + hi.ln()) / 2.0).exp();
        let rho = measure(mid)?;
        if (rho - 0.5).abs() < 0.02 {
            return Ok(Smoother { steps, tau: mid });
        }
        if rho > 0.5 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(Smoother {
        steps,
        tau: ((lo.ln() + hi.ln()) / 2.0).exp(),
    })
}

/// Standardized smooth random field with the requested correlation length.
pub fn sample_smooth_field(graph: &Graph, correlation_length: f64, seed: u64) -> Result<Vec<f64>> {
    if !graph.is_connected() {
        return Err(Error::Synthetic("smooth fields need a connected graph".into()));
    }
    let smoother = fit_smoother(graph, correlation_length)?;
    let mut field = smooth_field_raw(graph, &smoother, seed)?;
    standardize(&mut field)?;
    Ok(field)
}

/// Per-node surface gradient by weighted least squares over incident edges
/// (weights 1/‖Δx‖²); falls back to the edge-average estimate when the
/// stencil is collinear.
pub fn surface_gradient(graph: &Graph, s: &[f64]) -> Vec<[f64; 2]> {
    let coords = graph.coords();
    let mut out = vec![[0.0, 0.0]; graph.num_nodes()];
    for i in 0..graph.num_nodes() {
        let (xi, yi) = (coords[i][0], coords[i][1]);
        let mut a11 = 0.0;
        let mut a12 = 0.0;
        let mut a22 = 0.0;
        let mut b1 = 0.0;
        let mut b2 = 0.0;
        for &j in graph.adjacent_nodes(i) {
            let j = j as usize;
            let dx = coords[j][0] - xi;
            let dy = coords[j][1] - yi;
            let r2 = dx * dx + dy * dy;
            if r2 == 0.0 {
                continue;
            }
            let w = 1.0 / r2;
            let ds = s[j] - s[i];
            a11 += w * dx * dx;
            a12 += w * dx * dy;
            a22 += w * dy * dy;
            b1 += w * dx * ds;
            b2 += w * dy * ds;
        }
        let det = a11 * a22 - a12 * a12;
        let scale = (a11 + a22) * 0.5;
        if det.abs() > 1e-12 * scale * scale {
            out[i] = [(a22 * b1 - a12 * b2) / det, (a11 * b2 - a12 * b1) / det];
        } else {
            // collinear stencil: average of per-edge directional estimates
            let mut gx = 0.0;
            let mut gy = 0.0;
            let mut count = 0.0;
            for &j in graph.adjacent_nodes(i) {
                let j = j as usize;
                let dx = coords[j][0] - xi;
                let dy = coords[j][1] - yi;
                let r2 = dx * dx + dy * dy;
                if r2 == 0.0 {
                    continue;
                }
                let ds = s[j] - s[i];
                gx += dx * ds / r2;
                gy += dy * ds / r2;
                count += 1.0;
            }
            if count > 0.0 {
                out[i] = [gx / count, gy / count];
            }
        }
    }
    out
}

/// Analytic velocity oracle: u = −c·Hᵃ·‖∇s‖^{a−1}·∇s / μ with s = b + H.
pub fn oracle_velocity(
    thickness: &[f64],
    bed: &[f64],
    friction: &[f64],
    graph: &Graph,
    flow_exponent: f64,
    sliding_coefficient: f64,
) -> Result<Array2<f64>> {
    let n = graph.num_nodes();
    if thickness.len() != n || bed.len() != n || friction.len() != n {
        return Err(Error::ShapeMismatch("oracle field lengths vs graph".into()));
    }
    if let Some(i) = (0..n).find(|&i| thickness[i] < 0.0 || friction[i] <= 0.0) {
        return Err(Error::Synthetic(format!(
            "oracle requires H ≥ 0 and μ > 0 (node {i}: H={}, μ={})",
            thickness[i], friction[i]
        )));
    }
    let s: Vec<f64> = bed.iter().zip(thickness).map(|(b, h)| b + h).collect();
    let grad = surface_gradient(graph, &s);
    let mut out = Array2::zeros((n, 2));
    for i in 0..n {
        let [gx, gy] = grad[i];
        let gnorm = (gx * gx + gy * gy).sqrt();
        if gnorm == 0.0 {
            continue;
        }
        let mag = sliding_coefficient * thickness[i].powf(flow_exponent)
            * gnorm.powf(flow_exponent - 1.0)
            / friction[i];
        out[[i, 0]] = -mag * gx;
        out[[i, 1]] = -mag * gy;
    }
    Ok(out)
}

// field-construction constants (documented scales of the toy glacier)
const BED_HIGH: f64 = 300.0;
const BED_LOW: f64 = -800.0;
const BED_AMPLITUDE: f64 = 150.0;
const THICKNESS_BASE: f64 = 520.0;
const THICKNESS_REALIZATION_AMP: f64 = 90.0;
const THICKNESS_SNAPSHOT_AMP: f64 = 25.0;
const FRICTION_LOG_STD: f64 = 0.45;

/// Bed topography shared by all realizations: a downhill ramp with smooth
/// variation, dipping below sea level toward the far edge.
fn bed_field(graph: &Graph, cfg: &SyntheticConfig, smoother: &Smoother) -> Result<Vec<f64>> {
    let mut smooth = smooth_field_raw(graph, smoother, mix_seed(cfg.seed, STREAM_BED))?;
    standardize(&mut smooth)?;
    let coords = graph.coords();
    Ok((0..graph.num_nodes())
        .map(|i| {
            let t = coords[i][0] / cfg.domain_size;
            BED_HIGH + (BED_LOW - BED_HIGH) * t + BED_AMPLITUDE * smooth[i]
        })
        .collect())
}

/// Full synthetic dataset: one friction field per realization, a thickness
/// field perturbed per snapshot, targets from the oracle, splits by
/// realization.
pub fn build_dataset(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let graph = generate_mesh(cfg)?;
    let smoother = fit_smoother(&graph, cfg.correlation_length)?;
    let n = graph.num_nodes();
    let bed = bed_field(&graph, cfg, &smoother)?;
    let edge_lengths = Array2::from_shape_vec((graph.num_edges(), 1), graph.edge_lengths())
        .map_err(|e| Error::Synthetic(e.to_string()))?;

    let mut samples = Vec::new();
    for r in 0..cfg.num_realizations {
        let mut friction_log = smooth_field_raw(
            &graph,
            &smoother,
            mix_seed(cfg.seed, mix_seed(STREAM_FRICTION, r as u64)),
        )?;
        standardize(&mut friction_log)?;
        let friction: Vec<f64> =
            friction_log.iter().map(|f| (FRICTION_LOG_STD * f).exp()).collect();

        let mut thickness_base = smooth_field_raw(
            &graph,
            &smoother,
            mix_seed(cfg.seed, mix_seed(STREAM_THICKNESS, r as u64)),
        )?;
        standardize(&mut thickness_base)?;

        for t in 0..cfg.num_snapshots {
            let mut perturbation = smooth_field_raw(
                &graph,
                &smoother,
                mix_seed(cfg.seed, mix_seed(STREAM_SNAPSHOT, ((r as u64) << 20) | t as u64)),
            )?;
            standardize(&mut perturbation)?;
            let thickness: Vec<f64> = (0..n)
                .map(|i| {
                    (THICKNESS_BASE
                        + THICKNESS_REALIZATION_AMP * thickness_base[i]
                        + THICKNESS_SNAPSHOT_AMP * perturbation[i])
                        .max(0.0)
                })
                .collect();

            let targets = oracle_velocity(
                &thickness,
                &bed,
                &friction,
                &graph,
                cfg.flow_exponent,
                cfg.sliding_coefficient,
            )?;

            let mut node_features = Array2::zeros((n, FEATURE_COUNT));
            for i in 0..n {
                let floating = bed[i] + FLOTATION_RATIO * thickness[i] < 0.0;
                node_features[[i, 0]] = thickness[i];
                node_features[[i, 1]] = bed[i];
                node_features[[i, 2]] = friction[i];
                node_features[[i, 3]] = if floating { 0.0 } else { 1.0 };
                node_features[[i, 4]] = if floating { 1.0 } else { 0.0 };
            }

            samples.push(Sample {
                realization: r,
                snapshot: t,
                node_features,
                edge_features: edge_lengths.clone(),
                targets,
            });
        }
    }

    // splits partition realizations
    let mut ids: Vec<u32> = (0..cfg.num_realizations).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(mix_seed(cfg.seed, STREAM_SPLITS));
    use rand::seq::SliceRandom;
    ids.shuffle(&mut rng);
    let n_real = cfg.num_realizations as usize;
    let n_val = if n_real >= 3 {
        ((cfg.validation_fraction * n_real as f64).round() as usize).max(1)
    } else {
        0
    };
    let n_test = if n_real >= 3 {
        ((cfg.test_fraction * n_real as f64).round() as usize).max(1)
    } else {
        0
    };
    let mut splits = BTreeMap::new();
    for (pos, &id) in ids.iter().enumerate() {
        let split = if pos < n_val {
            Split::Validation
        } else if pos < n_val + n_test {
            Split::Test
        } else {
            Split::Train
        };
        splits.insert(id, split);
    }

    let dataset = Dataset { graph, samples, splits };
    dataset.validate()?;
    Ok(dataset)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            num_nodes: 100,
            domain_size: 1000.0,
            correlation_length: 300.0,
            num_realizations: 3,
            num_snapshots: 2,
            seed: 7,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn mesh_four_corners_no_jitter() {
        let cfg = SyntheticConfig {
            num_nodes: 4,
            jitter: 0.0,
            ..small_cfg()
        };
        // num_nodes < 16 rejected; the 4-corner case is exercised through the
        // triangulator directly in delaunay tests. Here: validation error.
        assert!(generate_mesh(&cfg).is_err());
    }

    #[test]
    fn mesh_is_deterministic_and_valid() {
        let cfg = small_cfg();
        let a = generate_mesh(&cfg).unwrap();
        let b = generate_mesh(&cfg).unwrap();
        assert_eq!(a.edges(), b.edges());
        assert_eq!(a.coords(), b.coords());
        assert_eq!(a.num_nodes(), 100);
        assert!(a.is_connected());
    }

    #[test]
    fn smoothing_limit_approaches_constant() {
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let variance = |tau: f64| -> f64 {
            let f = smooth_field_raw(&graph, &Smoother { steps: 4, tau }, 11).unwrap();
            let n = f.len() as f64;
            let mean = f.iter().sum::<f64>() / n;
            f.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
        };
        let v_small = variance(1e-6);
        let v_large = variance(1e6);
        assert!(
            v_large < 0.05 * v_small,
            "smoothing should collapse variance: {v_small} → {v_large}"
        );
    }

    #[test]
    fn smooth_field_deterministic() {
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let a = sample_smooth_field(&graph, 300.0, 5).unwrap();
        let b = sample_smooth_field(&graph, 300.0, 5).unwrap();
        assert_eq!(a, b);
        let c = sample_smooth_field(&graph, 300.0, 6).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x != y));
    }

    #[test]
    fn gradient_exact_on_affine_surface() {
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let coords = graph.coords();
        let s: Vec<f64> = coords.iter().map(|c| 3.0 + 2.0 * c[0] - 0.5 * c[1]).collect();
        let grad = surface_gradient(&graph, &s);
        for (i, g) in grad.iter().enumerate() {
            assert!((g[0] - 2.0).abs() < 1e-10, "node {i}: {g:?}");
            assert!((g[1] + 0.5).abs() < 1e-10, "node {i}: {g:?}");
        }
    }

    #[test]
    fn oracle_flat_surface_is_still() {
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let n = graph.num_nodes();
        // b + H constant ⇒ ∇s = 0 ⇒ u = 0
        let bed: Vec<f64> = graph.coords().iter().map(|c| -0.1 * c[0]).collect();
        let thickness: Vec<f64> = bed.iter().map(|b| 100.0 - b).collect();
        let friction = vec![1.0; n];
        let u = oracle_velocity(&thickness, &bed, &friction, &graph, 3.0, 1.0).unwrap();
        assert!(u.iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn oracle_planar_slope_hand_value() {
        // planar s with unit slope in x, H = 1, μ = 1, c = 1, a = 3 ⇒ u = (−1, 0)
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let n = graph.num_nodes();
        let bed: Vec<f64> = graph.coords().iter().map(|c| c[0] - 1.0).collect();
        let thickness = vec![1.0; n];
        let friction = vec![1.0; n];
        let u = oracle_velocity(&thickness, &bed, &friction, &graph, 3.0, 1.0).unwrap();
        for i in 0..n {
            assert!((u[[i, 0]] + 1.0).abs() < 1e-9, "node {i}: {}", u[[i, 0]]);
            assert!(u[[i, 1]].abs() < 1e-9);
        }
    }

    #[test]
    fn oracle_scaling_laws() {
        let cfg = small_cfg();
        let graph = generate_mesh(&cfg).unwrap();
        let n = graph.num_nodes();
        let bed: Vec<f64> = graph
            .coords()
            .iter()
            .map(|c| 0.05 * c[0] + 0.02 * c[1])
            .collect();
        let thickness: Vec<f64> = (0..n).map(|i| 50.0 + (i % 7) as f64).collect();
        let friction: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * (i % 5) as f64).collect();
        let u1 = oracle_velocity(&thickness, &bed, &friction, &graph, 3.0, 1.0).unwrap();
        // doubling μ halves u pointwise
        let mu2: Vec<f64> = friction.iter().map(|m| 2.0 * m).collect();
        let u2 = oracle_velocity(&thickness, &bed, &mu2, &graph, 3.0, 1.0).unwrap();
        for (a, b) in u1.iter().zip(u2.iter()) {
            assert!((a - 2.0 * b).abs() < 1e-10 * a.abs().max(1.0));
        }
        // u scales linearly in c
        let u3 = oracle_velocity(&thickness, &bed, &friction, &graph, 3.0, 2.5).unwrap();
        for (a, b) in u1.iter().zip(u3.iter()) {
            assert!((2.5 * a - b).abs() < 1e-10 * b.abs().max(1.0));
        }
    }

    #[test]
    fn dataset_passes_invariants_and_has_both_flags() {
        let cfg = small_cfg();
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 6);
        ds.validate().unwrap();
        let stats = ds.train_stats().unwrap();
        assert!(stats.sigma.iter().all(|&s| s > 0.0));
        // distinct realizations have distinct friction fields
        let f0 = ds.samples[0].node_features.column(2).to_owned();
        let f1 = ds.samples[2].node_features.column(2).to_owned();
        let max_diff = f0
            .iter()
            .zip(f1.iter())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(max_diff > 0.0);
    }

    #[test]
    fn single_realization_single_snapshot() {
        let cfg = SyntheticConfig {
            num_realizations: 1,
            num_snapshots: 1,
            ..small_cfg()
        };
        let ds = build_dataset(&cfg).unwrap();
        assert_eq!(ds.samples.len(), 1);
        assert_eq!(ds.split_samples(Split::Train).len(), 1);
    }
}
