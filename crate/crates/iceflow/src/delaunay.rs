//! Bowyer–Watson Delaunay triangulation of planar point sets.
//!
//! Incremental insertion against a synthetic super-triangle, with a strict
//! in-circumcircle predicate (cocircular points count as outside, which makes
//! tie-breaking deterministic). Point sets here come from jittered grids, so
//! exact predicates are unnecessary; degenerate inputs surface as errors and
//! the mesh generator retries with fresh jitter.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Triangulation {
    /// Triangles as index triples into the input point set.
    pub triangles: Vec<[usize; 3]>,
    /// Unique undirected edges, sorted lexicographically.
    pub edges: Vec<[u32; 2]>,
}

fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Strictly-inside test for d against the circumcircle of CCW triangle abc.
fn in_circumcircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let adx = a[0] - d[0];
    let ady = a[1] - d[1];
    let bdx = b[0] - d[0];
    let bdy = b[1] - d[1];
    let cdx = c[0] - d[0];
    let cdy = c[1] - d[1];
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    let det = adx * (bdy * cd - bd * cdy) - ady * (bdx * cd - bd * cdx)
        + ad * (bdx * cdy - bdy * cdx);
    // relative threshold keeps cocircular quads out of the cavity
    let scale = (adx.abs() + bdx.abs() + cdx.abs() + ady.abs() + bdy.abs() + cdy.abs()).powi(2)
        * (ad + bd + cd).max(1.0);
    det > 1e-11 * scale.max(1e-300)
}

/// Delaunay triangulation of at least 3 non-collinear points.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Triangulation> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Synthetic(format!("triangulation needs ≥ 3 points, got {n}")));
    }

    let (mut min_x, mut min_y) = (f64::INFINITY, f64::INFINITY);
    let (mut max_x, mut max_y) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in points {
        min_x = min_x.min(p[0]);
        min_y = min_y.min(p[1]);
        max_x = max_x.max(p[0]);
        max_y = max_y.max(p[1]);
    }
    let span = (max_x - min_x).max(max_y - min_y).max(1.0);
    let cx = 0.5 * (min_x + max_x);
    let cy = 0.5 * (min_y + max_y);

    // synthetic super-triangle far outside the hull
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    let s0 = n;
    pts.push([cx - 30.0 * span, cy - 10.0 * span]);
    pts.push([cx + 30.0 * span, cy - 10.0 * span]);
    pts.push([cx, cy + 30.0 * span]);

    let ccw = |t: [usize; 3], pts: &[[f64; 2]]| -> [usize; 3] {
        if orient2d(pts[t[0]], pts[t[1]], pts[t[2]]) >= 0.0 {
            t
        } else {
            [t[0], t[2], t[1]]
        }
    };

    let mut triangles: Vec<[usize; 3]> = vec![ccw([s0, s0 + 1, s0 + 2], &pts)];
    for p in 0..n {
        let pt = pts[p];
        let mut cavity: Vec<[usize; 3]> = Vec::new();
        triangles.retain(|&t| {
            if in_circumcircle(pts[t[0]], pts[t[1]], pts[t[2]], pt) {
                cavity.push(t);
                false
            } else {
                true
            }
        });
        if cavity.is_empty() {
            // point fell outside every circumcircle: numerically degenerate
            return Err(Error::Synthetic(format!("point {p} not inside any cavity")));
        }
        // boundary = edges of the cavity that appear exactly once
        let mut edge_counts: std::collections::HashMap<(usize, usize), usize> =
            std::collections::HashMap::new();
        for t in &cavity {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                *edge_counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        for (&(a, b), &count) in &edge_counts {
            if count == 1 {
                triangles.push(ccw([a, b, p], &pts));
            }
        }
    }

    // drop triangles touching the super-triangle
    let mut final_triangles: Vec<[usize; 3]> = triangles
        .into_iter()
        .filter(|t| t.iter().all(|&v| v < n))
        .collect();
    final_triangles.sort_unstable();
    if final_triangles.is_empty() {
        return Err(Error::Synthetic("all points are collinear".into()));
    }
    for t in &final_triangles {
        if orient2d(pts[t[0]], pts[t[1]], pts[t[2]]).abs() < 1e-12 * span * span {
            return Err(Error::Synthetic(format!("degenerate sliver triangle {t:?}")));
        }
    }

    let mut edge_set = std::collections::BTreeSet::new();
    for t in &final_triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            edge_set.insert((a.min(b) as u32, a.max(b) as u32));
        }
    }
    Ok(Triangulation {
        triangles: final_triangles,
        edges: edge_set.into_iter().map(|(a, b)| [a, b]).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn unit_square_corners() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let tri = triangulate(&pts).unwrap();
        assert_eq!(tri.triangles.len(), 2);
        assert_eq!(tri.edges.len(), 5);
    }

    #[test]
    fn grid_euler_count() {
        // 3×3 grid: V=9, hull boundary B=8 → E = 3V − 3 − B = 16
        let mut pts = Vec::new();
        for y in 0..3 {
            for x in 0..3 {
                pts.push([x as f64, y as f64]);
            }
        }
        let tri = triangulate(&pts).unwrap();
        assert_eq!(tri.edges.len(), 16);
        assert_eq!(tri.triangles.len(), 8);
    }

    #[test]
    fn random_cloud_satisfies_delaunay_property() {
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        let pts: Vec<[f64; 2]> = (0..60)
            .map(|_| [rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0)])
            .collect();
        let tri = triangulate(&pts).unwrap();
        // empty-circumcircle property against every other point
        for t in &tri.triangles {
            let (a, b, c) = (pts[t[0]], pts[t[1]], pts[t[2]]);
            let (a, b, c) = if orient2d(a, b, c) >= 0.0 { (a, b, c) } else { (a, c, b) };
            for (p, &pt) in pts.iter().enumerate() {
                if t.contains(&p) {
                    continue;
                }
                assert!(
                    !in_circumcircle(a, b, c, pt),
                    "point {p} inside circumcircle of {t:?}"
                );
            }
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        assert!(triangulate(&pts).is_err());
    }

    #[test]
    fn deterministic_output() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let pts: Vec<[f64; 2]> = (0..40)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let a = triangulate(&pts).unwrap();
        let b = triangulate(&pts).unwrap();
        assert_eq!(a.edges, b.edges);
        assert_eq!(a.triangles, b.triangles);
    }
}
