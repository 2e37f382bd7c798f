//! Versioned binary checkpoints.
//!
//! Layout: 8-byte magic `IFCKPT01`, a little-endian u64 header length, a JSON
//! header (configs, normalization statistics, graph hash, declared array
//! shapes, optimizer step), then every declared array as little-endian f64 in
//! header order: parameters first, then Adam first and second moments when
//! optimizer state is included.

use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

use crate::bracket::FlowConfig;
use crate::dataprep::NormStats;
use crate::error::{Error, Result};
use crate::nnet::{ModelConfig, ModelParams};
use crate::optim::{AdamConfig, OptimizerState};

const MAGIC: &[u8; 8] = b"IFCKPT01";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ArrayDecl {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    model_config: ModelConfig,
    flow: FlowConfig,
    adam: AdamConfig,
    norm_stats: NormStats,
    graph_hash: String,
    optimizer_step: Option<u64>,
    arrays: Vec<ArrayDecl>,
}

/// Everything needed to resume or transfer a model.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub flow: FlowConfig,
    pub adam: AdamConfig,
    pub stats: NormStats,
    pub graph_hash: String,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut arrays: Vec<(String, &ndarray::Array2<f64>)> = self.params.arrays();
        if let Some(opt) = &self.optimizer {
            let names: Vec<String> =
                self.params.arrays().iter().map(|(n, _)| n.clone()).collect();
            for (name, m) in names.iter().zip(&opt.m) {
                arrays.push((format!("optimizer.m.{name}"), m));
            }
            for (name, v) in names.iter().zip(&opt.v) {
                arrays.push((format!("optimizer.v.{name}"), v));
            }
        }
        let header = Header {
            version: VERSION,
            model_config: self.params.config,
            flow: self.flow,
            adam: self.adam,
            norm_stats: self.stats.clone(),
            graph_hash: self.graph_hash.clone(),
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            arrays: arrays
                .iter()
                .map(|(name, a)| ArrayDecl {
                    name: name.clone(),
                    rows: a.nrows(),
                    cols: a.ncols(),
                })
                .collect(),
        };
        let header_json = serde_json::to_vec(&header)?;

        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MAGIC)?;
        file.write_all(&(header_json.len() as u64).to_le_bytes())?;
        file.write_all(&header_json)?;
        for (_, a) in &arrays {
            for &v in a.iter() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        file.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!(
                "{}: bad magic {:?}",
                path.display(),
                magic
            )));
        }
        let mut len_bytes = [0u8; 8];
        file.read_exact(&mut len_bytes)?;
        let header_len = u64::from_le_bytes(len_bytes) as usize;
        let mut header_json = vec![0u8; header_len];
        file.read_exact(&mut header_json)?;
        let header: Header = serde_json::from_slice(&header_json)?;
        if header.version != VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {}",
                header.version
            )));
        }

        let mut read_array = |decl: &ArrayDecl| -> Result<ndarray::Array2<f64>> {
            let count = decl.rows * decl.cols;
            let mut bytes = vec![0u8; count * 8];
            file.read_exact(&mut bytes)?;
            let data: Vec<f64> = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            ndarray::Array2::from_shape_vec((decl.rows, decl.cols), data)
                .map_err(|e| Error::Checkpoint(e.to_string()))
        };

        let mut params = ModelParams::zeros(header.model_config);
        let expected: Vec<String> = params.arrays().iter().map(|(n, _)| n.clone()).collect();
        let mut decls = header.arrays.iter();
        {
            let mut slots = params.arrays_mut();
            for (name, slot) in expected.iter().zip(slots.iter_mut()) {
                let decl = decls
                    .next()
                    .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))?;
                if &decl.name != name {
                    return Err(Error::Checkpoint(format!(
                        "array order mismatch: expected {name}, found {}",
                        decl.name
                    )));
                }
                let arr = read_array(decl)?;
                if arr.raw_dim() != slot.raw_dim() {
                    return Err(Error::DimensionMismatch {
                        component: name.clone(),
                        expected: vec![slot.nrows(), slot.ncols()],
                        found: vec![arr.nrows(), arr.ncols()],
                    });
                }
                **slot = arr;
            }
        }

        let optimizer = if let Some(step) = header.optimizer_step {
            let mut state = OptimizerState::new(&params, header.adam);
            state.step = step;
            for m in state.m.iter_mut() {
                let decl = decls
                    .next()
                    .ok_or_else(|| Error::Checkpoint("missing optimizer.m array".into()))?;
                *m = read_array(decl)?;
            }
            for v in state.v.iter_mut() {
                let decl = decls
                    .next()
                    .ok_or_else(|| Error::Checkpoint("missing optimizer.v array".into()))?;
                *v = read_array(decl)?;
            }
            Some(state)
        } else {
            None
        };

        // trailing data means a corrupt or mismatched file
        let mut rest = Vec::new();
        file.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes after declared arrays",
                rest.len()
            )));
        }

        Ok(Checkpoint {
            params,
            flow: header.flow,
            adam: header.adam,
            stats: header.norm_stats,
            graph_hash: header.graph_hash,
            optimizer,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats() -> NormStats {
        NormStats {
            mu: vec![1.0; 5],
            sigma: vec![2.0; 5],
            dist_min: 10.0,
            dist_max: 99.0,
            target_mu: vec![0.5, -0.5],
            target_sigma: vec![3.0, 4.0],
        }
    }

    #[test]
    fn round_trip_with_and_without_optimizer() {
        let config = ModelConfig {
            d_in: 5,
            d_out: 2,
            encoder_width: 6,
            latent_dim: 4,
            attention_hidden: 3,
            attention_heads: 2,
        };
        let params = ModelParams::init(config, 42);
        let dir = tempfile::tempdir().unwrap();

        let mut opt = OptimizerState::new(&params, AdamConfig::default());
        opt.step = 77;
        opt.m[0].fill(0.25);
        let ckpt = Checkpoint {
            params: params.clone(),
            flow: FlowConfig::default(),
            adam: AdamConfig::default(),
            stats: stats(),
            graph_hash: "deadbeef".into(),
            optimizer: Some(opt),
        };
        let path = dir.path().join("a.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.params, params);
        assert_eq!(loaded.graph_hash, "deadbeef");
        assert_eq!(loaded.stats, stats());
        let lopt = loaded.optimizer.unwrap();
        assert_eq!(lopt.step, 77);
        assert_eq!(lopt.m[0][[0, 0]], 0.25);

        let bare = Checkpoint {
            optimizer: None,
            ..ckpt.clone()
        };
        let path2 = dir.path().join("b.ckpt");
        bare.save(&path2).unwrap();
        let loaded2 = Checkpoint::load(&path2).unwrap();
        assert!(loaded2.optimizer.is_none());
        assert_eq!(loaded2.params, params);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.ckpt");
        std::fs::write(&path, b"not a checkpoint").unwrap();
        assert!(Checkpoint::load(&path).is_err());
    }
}
