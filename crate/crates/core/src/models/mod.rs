//! The three networks: seed autoencoder (encoder / decoder), monotone
//! attention surrogate and the distilled student, bundled per graph.

pub mod mlp;
pub mod surrogate;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::checkpoint::{load_checkpoint, save_checkpoint};
use crate::autograd::{Params, Tape, Tensor};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::seeds::SeedVector;

pub use mlp::{Activation, Mlp};
pub use surrogate::{spread_from_tau, AttentionNorm, MessageGraph, Surrogate};

/// Layer sizes of every network in a bundle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub node_count: usize,
    /// Encoder hidden widths; the last entry is the latent dimension.
    pub encoder_widths: Vec<usize>,
    pub heads: usize,
    pub head_dim: usize,
    pub attention: AttentionNorm,
    /// Student hidden widths between the latent and the scalar output.
    pub student_widths: Vec<usize>,
    /// Threshold for the hard spread count.
    pub xi: f64,
}

impl Architecture {
    /// Full-size networks: encoder `n -> 512 -> 1024 -> 1024 -> 1024`,
    /// 2 x 4-head x 64 attention, student `1024 -> 512 -> 128 -> 1`.
    pub fn standard(node_count: usize) -> Self {
        Architecture {
            node_count,
            encoder_widths: vec![512, 1024, 1024, 1024],
            heads: 4,
            head_dim: 64,
            attention: AttentionNorm::DegreeGate,
            student_widths: vec![512, 128],
            xi: 0.5,
        }
    }

    pub fn latent_dim(&self) -> usize {
        *self.encoder_widths.last().expect("non-empty encoder")
    }

    pub fn encoder_layers(&self) -> Vec<usize> {
        std::iter::once(self.node_count)
            .chain(self.encoder_widths.iter().copied())
            .collect()
    }

    pub fn decoder_layers(&self) -> Vec<usize> {
        let mut v = self.encoder_layers();
        v.reverse();
        v
    }

    pub fn student_layers(&self) -> Vec<usize> {
        std::iter::once(self.latent_dim())
            .chain(self.student_widths.iter().copied())
            .chain(std::iter::once(1))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.node_count == 0 || self.encoder_widths.is_empty() || self.heads == 0 || self.head_dim == 0 {
            return Err(Error::invalid("architecture has an empty dimension"));
        }
        if !(0.0..1.0).contains(&self.xi) || self.xi == 0.0 {
            return Err(Error::invalid(format!("xi must lie in (0, 1), got {}", self.xi)));
        }
        Ok(())
    }
}

/// Encoder, decoder, surrogate and student for one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub arch: Architecture,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub surrogate: Surrogate,
    pub student: Mlp,
    pub graph_hash: String,
    /// Free-form training provenance stored with checkpoints.
    pub manifest: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct BundleMeta {
    architecture: Architecture,
    xi: f64,
    graph_hash: String,
    head_combination: String,
    manifest: serde_json::Value,
}

impl ModelBundle {
    pub fn init(arch: Architecture, graph: &Graph, rng_seed: u64) -> Result<Self> {
        arch.validate()?;
        if arch.node_count != graph.node_count() {
            return Err(Error::invalid("architecture node count differs from the graph"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let encoder = Mlp::new(&arch.encoder_layers(), Activation::Relu, Activation::Sigmoid, &mut rng)?;
        let decoder = Mlp::new(&arch.decoder_layers(), Activation::Relu, Activation::Sigmoid, &mut rng)?;
        let surrogate = Surrogate::new(arch.heads, arch.head_dim, arch.attention, &mut rng);
        let student = Mlp::new(&arch.student_layers(), Activation::Relu, Activation::Softplus, &mut rng)?;
        Ok(ModelBundle {
            arch,
            encoder,
            decoder,
            surrogate,
            student,
            graph_hash: graph.content_hash(),
            manifest: serde_json::Value::Null,
        })
    }

    pub fn node_count(&self) -> usize {
        self.arch.node_count
    }

    pub fn check_graph(&self, graph: &Graph) -> Result<()> {
        let found = graph.content_hash();
        if found != self.graph_hash {
            return Err(Error::invalid(format!(
                "bundle was trained on graph {} but got {found}",
                self.graph_hash
            )));
        }
        Ok(())
    }

    fn check_width(&self, len: usize, what: &str, expected: usize) -> Result<()> {
        if len != expected {
            return Err(Error::invalid(format!(
                "{what} has length {len} but the model expects {expected}"
            )));
        }
        Ok(())
    }

    /// Latent code of one seed vector.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x.len(), "seed vector", self.node_count())?;
        Ok(self.encoder.eval(1, x.to_vec())?.into_data())
    }

    /// Relaxed seed probabilities decoded from a latent code.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check_width(z.len(), "latent vector", self.arch.latent_dim())?;
        Ok(self.decoder.eval(1, z.to_vec())?.into_data())
    }

    /// Per-node infection probabilities for a binary or relaxed seed vector.
    pub fn surrogate_tau(&self, mg: &MessageGraph, x: &[f64]) -> Result<Vec<f64>> {
        self.check_width(x.len(), "seed vector", self.node_count())?;
        if mg.batch != 1 {
            return Err(Error::invalid("surrogate_tau expects a single-sample message graph"));
        }
        self.surrogate.tau(mg, x)
    }

    /// `(y_soft, y_hard)` for one seed vector.
    pub fn surrogate_spread(&self, mg: &MessageGraph, x: &[f64]) -> Result<(f64, usize)> {
        let tau = self.surrogate_tau(mg, x)?;
        Ok(spread_from_tau(&tau, self.arch.xi))
    }

    pub fn seed_spread(&self, mg: &MessageGraph, seeds: &SeedVector) -> Result<(f64, usize)> {
        self.surrogate_spread(mg, &seeds.to_f64())
    }

    /// Student estimate of the spread from a latent code.
    pub fn student_spread(&self, z: &[f64]) -> Result<f64> {
        self.check_width(z.len(), "latent vector", self.arch.latent_dim())?;
        Ok(self.student.eval(1, z.to_vec())?.item())
    }

    /// All parameters under `phi.` / `psi.` / `theta.` / `lambda.` prefixes.
    pub fn all_params(&self) -> Params {
        let mut p = self.encoder.params.prefixed("phi.");
        p.extend(self.decoder.params.prefixed("psi."));
        p.extend(self.surrogate.params.prefixed("theta."));
        p.extend(self.student.params.prefixed("lambda."));
        p
    }

    /// Writes `<stem>.bin` and `<stem>.json`.
    pub fn save(&self, stem: &Path) -> Result<()> {
        let meta = BundleMeta {
            architecture: self.arch.clone(),
            xi: self.arch.xi,
            graph_hash: self.graph_hash.clone(),
            head_combination: "concat heads in layer 1, average heads in layer 2".into(),
            manifest: self.manifest.clone(),
        };
        save_checkpoint(stem, &self.all_params(), serde_json::to_value(meta)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<Self> {
        let (params, manifest) = load_checkpoint(stem)?;
        let meta: BundleMeta = serde_json::from_value(manifest.metadata)?;
        let arch = meta.architecture;
        arch.validate()?;
        let encoder = Mlp::from_params(
            &arch.encoder_layers(),
            Activation::Relu,
            Activation::Sigmoid,
            params.strip_prefix("phi."),
        )?;
        let decoder = Mlp::from_params(
            &arch.decoder_layers(),
            Activation::Relu,
            Activation::Sigmoid,
            params.strip_prefix("psi."),
        )?;
        let surrogate =
            Surrogate::from_params(arch.heads, arch.head_dim, arch.attention, params.strip_prefix("theta."))?;
        surrogate.check_nonneg()?;
        let student = Mlp::from_params(
            &arch.student_layers(),
            Activation::Relu,
            Activation::Softplus,
            params.strip_prefix("lambda."),
        )?;
        Ok(ModelBundle {
            arch,
            encoder,
            decoder,
            surrogate,
            student,
            graph_hash: meta.graph_hash,
            manifest: meta.manifest,
        })
    }

    /// Encodes many seed vectors in one pass, returning `[rows, latent]`.
    pub fn encode_batch(&self, rows: usize, xs: Vec<f64>) -> Result<Tensor> {
        self.encoder.eval(rows, xs)
    }

    pub fn decode_batch(&self, rows: usize, zs: Vec<f64>) -> Result<Tensor> {
        self.decoder.eval(rows, zs)
    }

    /// Soft spreads for a batch of seed vectors (`mg.batch` rows of length n).
    pub fn surrogate_soft_batch(&self, mg: &MessageGraph, xs: &[f64]) -> Result<Vec<f64>> {
        self.surrogate.check_nonneg()?;
        let mut tape = Tape::new();
        let bound = self.surrogate.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::column(xs.to_vec()));
        let tau = self.surrogate.forward(&mut tape, &bound, mg, x)?;
        let y = Surrogate::soft_spread(&mut tape, mg, tau)?;
        Ok(tape.value(y).data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::erdos_renyi;

    fn tiny_arch(n: usize) -> Architecture {
        Architecture {
            node_count: n,
            encoder_widths: vec![8, 6],
            heads: 2,
            head_dim: 3,
            attention: AttentionNorm::DegreeGate,
            student_widths: vec![5],
            xi: 0.5,
        }
    }

    #[test]
    fn standard_layer_sizes() {
        let a = Architecture::standard(198);
        assert_eq!(a.encoder_layers(), vec![198, 512, 1024, 1024, 1024]);
        assert_eq!(a.decoder_layers(), vec![1024, 1024, 1024, 512, 198]);
        assert_eq!(a.student_layers(), vec![1024, 512, 128, 1]);
        assert_eq!(a.latent_dim(), 1024);
    }

    #[test]
    fn xi_outside_unit_interval_is_rejected() {
        let mut a = tiny_arch(4);
        a.xi = 1.0;
        assert!(a.validate().is_err());
        a.xi = 0.0;
        assert!(a.validate().is_err());
    }

    #[test]
    fn bundle_round_trips_through_checkpoint() {
        let g = erdos_renyi(10, 20, 1).unwrap();
        let mut b = ModelBundle::init(tiny_arch(10), &g, 7).unwrap();
        b.manifest = serde_json::json!({"epochs": 3});
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("model");
        b.save(&stem).unwrap();
        let back = ModelBundle::load(&stem).unwrap();
        assert_eq!(back, b);
        back.check_graph(&g).unwrap();
        let other = erdos_renyi(10, 21, 1).unwrap();
        assert!(back.check_graph(&other).is_err());
    }

    #[test]
    fn apis_check_input_lengths() {
        let g = erdos_renyi(10, 20, 1).unwrap();
        let b = ModelBundle::init(tiny_arch(10), &g, 7).unwrap();
        let mg = MessageGraph::new(&g, 1);
        assert!(b.encode(&[0.0; 9]).is_err());
        assert!(b.decode(&[0.0; 5]).is_err());
        assert!(b.student_spread(&[0.0; 7]).is_err());
        assert!(b.surrogate_tau(&mg, &[0.0; 11]).is_err());
        let z = b.encode(&[1.0; 10]).unwrap();
        assert_eq!(z.len(), 6);
        let x = b.decode(&z).unwrap();
        assert!(x.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(b.student_spread(&z).unwrap() >= 0.0);
        let (soft, hard) = b.surrogate_spread(&mg, &x).unwrap();
        assert!(soft >= 0.0 && hard <= 10);
    }

    #[test]
    fn batch_soft_spread_matches_single() {
        let g = erdos_renyi(10, 20, 2).unwrap();
        let b = ModelBundle::init(tiny_arch(10), &g, 8).unwrap();
        let xs: Vec<f64> = (0..20).map(|i| (i % 3 == 0) as u8 as f64).collect();
        let batch = b.surrogate_soft_batch(&MessageGraph::new(&g, 2), &xs).unwrap();
        let one = MessageGraph::new(&g, 1);
        let second = b.surrogate_spread(&one, &xs[10..]).unwrap().0;
        assert!((batch[1] - second).abs() < 1e-10);
    }
}
