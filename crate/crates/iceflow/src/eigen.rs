//! Symmetric eigensolvers: a dense Householder/QL decomposition for desk-scale
//! matrices and a Lanczos iteration (full reorthogonalization) for the smallest
//! nontrivial Laplacian eigenpairs of larger graphs.

use ndarray::Array2;

use crate::error::{Error, Result};

fn pythag(a: f64, b: f64) -> f64 {
    let (a, b) = (a.abs(), b.abs());
    if a > b {
        a * (1.0 + (b / a).powi(2)).sqrt()
    } else if b > 0.0 {
        b * (1.0 + (a / b).powi(2)).sqrt()
    } else {
        0.0
    }
}

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulated transformations (classic tred2).
fn tridiagonalize(a: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = a.nrows();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += a[[i, k]].abs();
            }
            if scale == 0.0 {
                e[i] = a[[i, l]];
            } else {
                for k in 0..=l {
                    a[[i, k]] /= scale;
                    h += a[[i, k]] * a[[i, k]];
                }
                let f = a[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                a[[i, l]] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    a[[j, i]] = a[[i, j]] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += a[[j, k]] * a[[i, k]];
                    }
                    for k in j + 1..=l {
                        g_acc += a[[k, j]] * a[[i, k]];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * a[[i, j]];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let f = a[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * a[[i, k]];
                        a[[j, k]] -= delta;
                    }
                }
            }
        } else {
            e[i] = a[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += a[[i, k]] * a[[k, j]];
                }
                for k in 0..i {
                    let delta = g * a[[k, i]];
                    a[[k, j]] -= delta;
                }
            }
        }
        d[i] = a[[i, i]];
        a[[i, i]] = 1.0;
        for j in 0..i {
            a[[j, i]] = 0.0;
            a[[i, j]] = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on a tridiagonal matrix with eigenvector
/// accumulation (classic tql2). `z` starts as the tridiagonalizing transform.
fn tridiagonal_ql(d: &mut [f64], e: &mut [f64], z: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;

    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Eigen(format!("QL iteration stalled at row {l}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = pythag(g, 1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = pythag(f, g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Full eigendecomposition of a dense symmetric matrix. Returns eigenvalues in
/// ascending order with matching orthonormal eigenvector columns.
pub fn symmetric_eigen(matrix: &Array2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
    let n = matrix.nrows();
    if n != matrix.ncols() {
        return Err(Error::Eigen(format!("matrix is {}×{}", n, matrix.ncols())));
    }
    if n == 0 {
        return Err(Error::Eigen("empty matrix".into()));
    }
    if n == 1 {
        return Ok((vec![matrix[[0, 0]]], Array2::ones((1, 1))));
    }
    let mut z = matrix.clone();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tridiagonalize(&mut z, &mut d, &mut e);
    tridiagonal_ql(&mut d, &mut e, &mut z)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (new_col, &old_col) in order.iter().enumerate() {
        for r in 0..n {
            vectors[[r, new_col]] = z[[r, old_col]];
        }
    }
    Ok((values, vectors))
}

/// Smallest nonzero eigenpairs of a graph Laplacian given as a matrix-free
/// operator, via Lanczos on the spectrally flipped operator c·I − L with the
/// constant kernel deflated. Requires a connected Laplacian (single zero
/// eigenvalue); `lambda_max_bound` must dominate the spectrum (Gershgorin).
pub fn lanczos_smallest_nonzero<F>(
    apply_l: F,
    n: usize,
    num_pairs: usize,
    lambda_max_bound: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, Array2<f64>)>
where
    F: Fn(&[f64], &mut [f64]),
{
    if num_pairs == 0 || num_pairs + 1 >= n {
        return Err(Error::Eigen(format!(
            "requested {num_pairs} pairs from an order-{n} Laplacian"
        )));
    }
    let c = lambda_max_bound * 1.01 + 1.0;

    // Lanczos basis, kept orthogonal to the constant vector and to all
    // previous basis vectors (full reorthogonalization; desk scale).
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    let project = |v: &mut [f64], basis: &[Vec<f64>]| {
        let mean: f64 = v.iter().sum::<f64>() / n as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
        for b in basis {
            let dot: f64 = v.iter().zip(b).map(|(a, b)| a * b).sum();
            for (x, bi) in v.iter_mut().zip(b) {
                *x -= dot * bi;
            }
        }
    };

    // deterministic, constant-free start vector
    let mut v0: Vec<f64> = (0..n)
        .map(|i| ((i as f64 + 1.0) * 0.7390851332151607).sin())
        .collect();
    project(&mut v0, &basis);
    let norm = v0.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(Error::Eigen("degenerate Lanczos start vector".into()));
    }
    for x in &mut v0 {
        *x /= norm;
    }
    basis.push(v0);

    let mut lv = vec![0.0; n];
    loop {
        let k = basis.len();
        let v = &basis[k - 1];
        apply_l(v, &mut lv);
        // w = (cI − L) v
        let mut w: Vec<f64> = v.iter().zip(&lv).map(|(vi, li)| c * vi - li).collect();
        let alpha: f64 = w.iter().zip(v).map(|(a, b)| a * b).sum();
        alphas.push(alpha);
        project(&mut w, &basis);
        project(&mut w, &basis); // second pass tightens orthogonality
        let beta = w.iter().map(|x| x * x).sum::<f64>().sqrt();

        let exhausted = beta < 1e-14;
        if k >= num_pairs + 2 || exhausted {
            let mut t = Array2::zeros((k, k));
            for i in 0..k {
                t[[i, i]] = alphas[i];
                if i + 1 < k {
                    t[[i, i + 1]] = betas[i];
                    t[[i + 1, i]] = betas[i];
                }
            }
            let (tvals, tvecs) = symmetric_eigen(&t)?;
            let converged = (0..num_pairs).all(|j| {
                let col = k - 1 - j;
                beta * tvecs[[k - 1, col]].abs() <= tol * c
            });
            if converged || exhausted || k >= max_iter.min(n - 1) {
                if !converged && !exhausted {
                    return Err(Error::Eigen(format!(
                        "Lanczos did not converge within {k} iterations"
                    )));
                }
                if k < num_pairs {
                    return Err(Error::Eigen(format!(
                        "Lanczos basis exhausted at {k} vectors, need {num_pairs}"
                    )));
                }
                let mut values = Vec::with_capacity(num_pairs);
                let mut vectors = Array2::zeros((n, num_pairs));
                for j in 0..num_pairs {
                    let col = k - 1 - j;
                    values.push(c - tvals[col]);
                    for (bi, b) in basis.iter().enumerate() {
                        let coeff = tvecs[[bi, col]];
                        for r in 0..n {
                            vectors[[r, j]] += coeff * b[r];
                        }
                    }
                }
                for j in 0..num_pairs {
                    let mut col = vectors.column_mut(j);
                    let norm = col.iter().map(|x| x * x).sum::<f64>().sqrt();
                    for x in col.iter_mut() {
                        *x /= norm;
                    }
                }
                return Ok((values, vectors));
            }
        }

        betas.push(beta);
        let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
        basis.push(next);
    }
}
