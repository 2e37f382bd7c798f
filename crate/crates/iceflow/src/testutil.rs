//! Shared fixtures for unit tests.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::collections::BTreeMap;

use crate::dataprep::{Dataset, Sample, Split, FEATURE_COUNT};
use crate::graph::Graph;

/// Rectangular grid with slightly uneven spacing so edge lengths differ.
pub(crate) fn grid_graph(nx: usize, ny: usize) -> Graph {
    let id = |x: usize, y: usize| (y * nx + x) as u32;
    let mut edges = Vec::new();
    for y in 0..ny {
        for x in 0..nx {
            if x + 1 < nx {
                edges.push([id(x, y), id(x + 1, y)]);
            }
            if y + 1 < ny {
                edges.push([id(x, y), id(x, y + 1)]);
            }
        }
    }
    let coords = (0..nx * ny)
        .map(|i| {
            [
                (i % nx) as f64 * 100.0 + (i % 3) as f64 * 7.0,
                (i / nx) as f64 * 100.0 + (i % 2) as f64 * 5.0,
            ]
        })
        .collect();
    Graph::new(nx * ny, edges, coords).unwrap()
}

/// Tiny dataset whose targets are a smooth function of the features; the last
/// two realizations are validation and test.
pub(crate) fn toy_dataset(graph: &Graph, realizations: u32, snapshots: u32) -> Dataset {
    let v = graph.num_nodes();
    let mut samples = Vec::new();
    let mut splits = BTreeMap::new();
    for r in 0..realizations {
        splits.insert(
            r,
            if r + 2 < realizations {
                Split::Train
            } else if r + 2 == realizations {
                Split::Validation
            } else {
                Split::Test
            },
        );
        for t in 0..snapshots {
            let mut rng = ChaCha12Rng::seed_from_u64((r as u64) << 16 | t as u64);
            let mut node_features = Array2::zeros((v, FEATURE_COUNT));
            let mut targets = Array2::zeros((v, 2));
            for i in 0..v {
                let [x, y] = graph.coords()[i];
                let thick = 100.0 + 20.0 * ((x + y) / 200.0).sin() + rng.gen_range(-1.0..1.0);
                let bed = -14.0 + 0.05 * x + rng.gen_range(-0.5..0.5);
                let fric = (1.0 + 0.3 * (y / 150.0).cos()).exp();
                node_features[[i, 0]] = thick;
                node_features[[i, 1]] = bed;
                node_features[[i, 2]] = fric;
                let floating = bed < -12.0;
                node_features[[i, 3]] = if floating { 0.0 } else { 1.0 };
                node_features[[i, 4]] = if floating { 1.0 } else { 0.0 };
                targets[[i, 0]] = 3.0 + thick * 0.05 - fric;
                targets[[i, 1]] = -1.0 + 0.01 * x;
            }
            let edge_features =
                Array2::from_shape_vec((graph.num_edges(), 1), graph.edge_lengths()).unwrap();
            samples.push(Sample {
                realization: r,
                snapshot: t,
                node_features,
                edge_features,
                targets,
            });
        }
    }
    Dataset {
        graph: graph.clone(),
        samples,
        splits,
    }
}
