//! Supervised corpora of `(seed set, per-node frequency, spread)` triples.

use std::fs;
use std::io::Read;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::checkpoint::{sha256_hex, write_atomic};
use crate::diffusion::{mc_estimate, DiffusionSpec};
use crate::error::{Error, Result};
use crate::graph::{read_u32, read_u64, Graph};
use crate::seeds::{derive_seed, SeedVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPair {
    pub seeds: SeedVector,
    /// Empirical infection frequency of every node. May be empty when a
    /// corpus keeps only scalar spreads.
    pub node_frequency: Vec<f64>,
    pub spread: f64,
}

impl TrainingPair {
    /// Checks `spread == sum(node_frequency)` and, for progressive models,
    /// that every seed has frequency 1.
    pub fn validate(&self, spec: &DiffusionSpec) -> Result<()> {
        if self.node_frequency.is_empty() {
            return Ok(());
        }
        if self.node_frequency.len() != self.seeds.len() {
            return Err(Error::invalid("frequency vector and seed vector differ in length"));
        }
        let total: f64 = self.node_frequency.iter().sum();
        if (total - self.spread).abs() > 1e-9 * self.spread.max(1.0) {
            return Err(Error::Invariant(format!(
                "spread {} differs from frequency total {total}",
                self.spread
            )));
        }
        if !matches!(spec, DiffusionSpec::Sis { .. }) {
            if let Some(i) = self.seeds.indices().into_iter().find(|&i| self.node_frequency[i] != 1.0) {
                return Err(Error::Invariant(format!("seed {i} has frequency below 1")));
            }
        }
        Ok(())
    }
}

/// How training seed sets are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedSampling {
    #[default]
    Uniform,
    /// Without replacement, with probability proportional to `1 + out_degree`.
    DegreeBiased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingCorpus {
    pub graph_hash: String,
    pub node_count: usize,
    pub spec: DiffusionSpec,
    pub fractions: Vec<f64>,
    pub sampling: SeedSampling,
    pub rounds: usize,
    pub pairs: Vec<TrainingPair>,
}

impl TrainingCorpus {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn check_graph(&self, g: &Graph) -> Result<()> {
        if g.content_hash() != self.graph_hash {
            return Err(Error::invalid("corpus was generated on a different graph"));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, p) in self.pairs.iter().enumerate() {
            if p.seeds.len() != self.node_count {
                return Err(Error::Invariant(format!("pair {i} has the wrong node count")));
            }
            p.validate(&self.spec)
                .map_err(|e| Error::Invariant(format!("pair {i}: {e}")))?;
        }
        Ok(())
    }

    /// Splits off the last `ceil(fraction * len)` pairs as a held-out set.
    pub fn split(&self, held_out_fraction: f64) -> (TrainingCorpus, TrainingCorpus) {
        let hold = ((self.len() as f64) * held_out_fraction).ceil() as usize;
        let cut = self.len() - hold.min(self.len());
        let mut train = self.clone();
        let test_pairs = train.pairs.split_off(cut);
        let test = TrainingCorpus {
            pairs: test_pairs,
            ..self.clone()
        };
        (train, test)
    }
}

/// Seed count for a budget fraction: `round(fraction * n)`.
pub fn seed_count(node_count: usize, fraction: f64) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("seed fraction must lie in (0, 1], got {fraction}")));
    }
    let k = (fraction * node_count as f64).round() as usize;
    if k == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {node_count} nodes selects no seeds"
        )));
    }
    Ok(k)
}

fn draw(g: &Graph, k: usize, sampling: SeedSampling, rng: &mut ChaCha8Rng) -> Result<SeedVector> {
    let n = g.node_count();
    let picked: Vec<usize> = match sampling {
        SeedSampling::Uniform => index::sample(rng, n, k).into_vec(),
        SeedSampling::DegreeBiased => {
            index::sample_weighted(rng, n, |i| 1.0 + g.out_degree(i) as f64, k)
                .map_err(|e| Error::invalid(format!("weighted sampling failed: {e}")))?
                .into_vec()
        }
    };
    SeedVector::from_indices(n, &picked)
}

/// `count` independent seed sets of `round(fraction * n)` distinct nodes.
pub fn sample_seed_sets(g: &Graph, fraction: f64, count: usize, rng_seed: u64) -> Result<Vec<SeedVector>> {
    sample_seed_sets_with(g, fraction, count, SeedSampling::Uniform, rng_seed)
}

pub fn sample_seed_sets_with(
    g: &Graph,
    fraction: f64,
    count: usize,
    sampling: SeedSampling,
    rng_seed: u64,
) -> Result<Vec<SeedVector>> {
    let k = seed_count(g.node_count(), fraction)?;
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, i as u64));
            draw(g, k, sampling, &mut rng)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusRecipe {
    pub fractions: Vec<f64>,
    pub sets_per_fraction: usize,
    pub rounds: usize,
    pub sampling: SeedSampling,
    pub rng_seed: u64,
}

impl CorpusRecipe {
    /// Budgets of 1, 5, 10 and 20 percent, 256 sets each, 100 rounds.
    pub fn standard(rng_seed: u64) -> Self {
        CorpusRecipe {
            fractions: vec![0.01, 0.05, 0.10, 0.20],
            sets_per_fraction: 256,
            rounds: 100,
            sampling: SeedSampling::Uniform,
            rng_seed,
        }
    }
}

/// Samples seed sets for every fraction and labels each with a Monte-Carlo
/// estimate. Pairs are generated in parallel and kept in index order.
pub fn build_corpus(g: &Graph, spec: &DiffusionSpec, recipe: &CorpusRecipe) -> Result<TrainingCorpus> {
    spec.validate()?;
    if recipe.fractions.is_empty() || recipe.sets_per_fraction == 0 {
        return Err(Error::invalid("corpus recipe selects no seed sets"));
    }
    let mut sets = Vec::new();
    for (fi, &f) in recipe.fractions.iter().enumerate() {
        let stream = derive_seed(recipe.rng_seed, fi as u64);
        sets.extend(sample_seed_sets_with(g, f, recipe.sets_per_fraction, recipe.sampling, stream)?);
    }
    let mc_seed = derive_seed(recipe.rng_seed, u64::MAX);
    let pairs = sets
        .into_par_iter()
        .enumerate()
        .map(|(i, seeds)| {
            let est = mc_estimate(g, &seeds, spec, recipe.rounds, derive_seed(mc_seed, i as u64))?;
            // Recompute the mean from the frequencies so the pair invariant
            // holds to the last bit.
            let spread = est.node_frequency.iter().sum();
            Ok(TrainingPair {
                seeds,
                node_frequency: est.node_frequency,
                spread,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingCorpus {
        graph_hash: g.content_hash(),
        node_count: g.node_count(),
        spec: spec.clone(),
        fractions: recipe.fractions.clone(),
        sampling: recipe.sampling,
        rounds: recipe.rounds,
        pairs,
    })
}

const CORPUS_MAGIC: &[u8; 8] = b"DPIMCORP";
pub const CORPUS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format: String,
    pub version: u32,
    pub payload_sha256: String,
    pub graph_hash: String,
    pub node_count: usize,
    pub spec: DiffusionSpec,
    pub fractions: Vec<f64>,
    pub sampling: SeedSampling,
    pub rounds: usize,
    pub pairs: usize,
}

pub fn encode_corpus(c: &TrainingCorpus) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CORPUS_MAGIC);
    out.extend_from_slice(&CORPUS_VERSION.to_le_bytes());
    out.extend_from_slice(&(c.node_count as u64).to_le_bytes());
    out.extend_from_slice(&(c.pairs.len() as u64).to_le_bytes());
    for p in &c.pairs {
        let idx = p.seeds.indices();
        out.extend_from_slice(&(idx.len() as u32).to_le_bytes());
        for i in idx {
            out.extend_from_slice(&(i as u32).to_le_bytes());
        }
        out.extend_from_slice(&p.spread.to_le_bytes());
        out.push(!p.node_frequency.is_empty() as u8);
        for f in &p.node_frequency {
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    out
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

pub fn decode_pairs(mut bytes: &[u8]) -> Result<(usize, Vec<TrainingPair>)> {
    let r = &mut bytes;
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CORPUS_MAGIC {
        return Err(Error::Format("not a corpus payload (bad magic)".into()));
    }
    let version = read_u32(r)?;
    if version != CORPUS_VERSION {
        return Err(Error::Format(format!("unsupported corpus version {version}")));
    }
    let n = read_u64(r)? as usize;
    let count = read_u64(r)? as usize;
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let k = read_u32(r)? as usize;
        let mut idx = Vec::with_capacity(k);
        for _ in 0..k {
            idx.push(read_u32(r)? as usize);
        }
        let seeds = SeedVector::from_indices(n, &idx).map_err(|e| Error::Format(e.to_string()))?;
        let spread = read_f64(r)?;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag)?;
        let node_frequency = if flag[0] != 0 {
            (0..n).map(|_| read_f64(r)).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        pairs.push(TrainingPair {
            seeds,
            node_frequency,
            spread,
        });
    }
    if !r.is_empty() {
        return Err(Error::Format("trailing bytes after corpus records".into()));
    }
    Ok((n, pairs))
}

/// Writes `<stem>.bin` and `<stem>.json`.
pub fn save_corpus(stem: &Path, c: &TrainingCorpus) -> Result<CorpusManifest> {
    let payload = encode_corpus(c);
    let manifest = CorpusManifest {
        format: "deepim-corpus".into(),
        version: CORPUS_VERSION,
        payload_sha256: sha256_hex(&payload),
        graph_hash: c.graph_hash.clone(),
        node_count: c.node_count,
        spec: c.spec.clone(),
        fractions: c.fractions.clone(),
        sampling: c.sampling,
        rounds: c.rounds,
        pairs: c.pairs.len(),
    };
    write_atomic(&stem.with_extension("bin"), &payload)?;
    write_atomic(
        &stem.with_extension("json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;
    Ok(manifest)
}

pub fn load_corpus(stem: &Path) -> Result<TrainingCorpus> {
    let json_path = stem.with_extension("json");
    let bin_path = stem.with_extension("bin");
    let manifest: CorpusManifest = serde_json::from_slice(&fs::read(&json_path)?)?;
    let payload = fs::read(&bin_path)?;
    let found = sha256_hex(&payload);
    if found != manifest.payload_sha256 {
        return Err(Error::StaleArtifact {
            path: bin_path,
            expected: manifest.payload_sha256,
            found,
        });
    }
    let (n, pairs) = decode_pairs(&payload)?;
    if n != manifest.node_count || pairs.len() != manifest.pairs {
        return Err(Error::Format("corpus payload disagrees with its manifest".into()));
    }
    Ok(TrainingCorpus {
        graph_hash: manifest.graph_hash,
        node_count: n,
        spec: manifest.spec,
        fractions: manifest.fractions,
        sampling: manifest.sampling,
        rounds: manifest.rounds,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{erdos_renyi, jazz_like};
    use proptest::prelude::*;

    #[test]
    fn ten_percent_of_198_is_20() {
        let g = jazz_like(1);
        let sets = sample_seed_sets(&g, 0.10, 5, 3).unwrap();
        assert!(sets.iter().all(|s| s.count() == 20));
        assert_eq!(seed_count(198, 0.01).unwrap(), 2);
        assert_eq!(seed_count(198, 0.05).unwrap(), 10);
        assert_eq!(seed_count(198, 0.20).unwrap(), 40);
    }

    #[test]
    fn full_fraction_is_every_node() {
        let g = erdos_renyi(30, 60, 2).unwrap();
        let sets = sample_seed_sets(&g, 1.0, 2, 0).unwrap();
        assert!(sets.iter().all(|s| s.count() == 30));
    }

    #[test]
    fn tiny_fraction_is_an_error() {
        let g = erdos_renyi(30, 60, 2).unwrap();
        assert!(sample_seed_sets(&g, 0.01, 1, 0).is_err());
        assert!(sample_seed_sets(&g, 0.0, 1, 0).is_err());
        assert!(sample_seed_sets(&g, 1.5, 1, 0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = jazz_like(1);
        let a = sample_seed_sets(&g, 0.05, 10, 42).unwrap();
        assert_eq!(a, sample_seed_sets(&g, 0.05, 10, 42).unwrap());
        assert_ne!(a, sample_seed_sets(&g, 0.05, 10, 43).unwrap());
        let b = sample_seed_sets_with(&g, 0.05, 10, SeedSampling::DegreeBiased, 42).unwrap();
        assert!(b.iter().all(|s| s.count() == 10));
    }

    #[test]
    fn degree_biased_sampling_prefers_hubs() {
        let g = jazz_like(1);
        let deg = |sets: &[SeedVector]| -> f64 {
            let total: usize = sets.iter().flat_map(|s| s.indices()).map(|i| g.out_degree(i)).sum();
            total as f64 / sets.iter().map(|s| s.count()).sum::<usize>() as f64
        };
        let uni = sample_seed_sets(&g, 0.05, 200, 1).unwrap();
        let biased = sample_seed_sets_with(&g, 0.05, 200, SeedSampling::DegreeBiased, 1).unwrap();
        assert!(deg(&biased) > 1.2 * deg(&uni));
    }

    fn small_corpus(spec: DiffusionSpec, rounds: usize) -> (Graph, TrainingCorpus) {
        let g = erdos_renyi(40, 120, 5).unwrap();
        let recipe = CorpusRecipe {
            fractions: vec![0.05, 0.25],
            sets_per_fraction: 6,
            rounds,
            sampling: SeedSampling::Uniform,
            rng_seed: 9,
        };
        let c = build_corpus(&g, &spec, &recipe).unwrap();
        (g, c)
    }

    #[test]
    fn corpus_pairs_satisfy_invariants() {
        for spec in [DiffusionSpec::Ic, DiffusionSpec::lt(), DiffusionSpec::sis()] {
            let (g, c) = small_corpus(spec, 20);
            assert_eq!(c.len(), 12);
            c.validate().unwrap();
            c.check_graph(&g).unwrap();
        }
    }

    #[test]
    fn single_round_lt_frequencies_are_binary() {
        let (_, c) = small_corpus(DiffusionSpec::lt(), 1);
        assert!(c
            .pairs
            .iter()
            .all(|p| p.node_frequency.iter().all(|&f| f == 0.0 || f == 1.0)));
    }

    #[test]
    fn all_node_seed_set_spreads_to_everyone() {
        let g = erdos_renyi(20, 40, 1).unwrap();
        let recipe = CorpusRecipe {
            fractions: vec![1.0],
            sets_per_fraction: 1,
            rounds: 10,
            sampling: SeedSampling::Uniform,
            rng_seed: 0,
        };
        let c = build_corpus(&g, &DiffusionSpec::Ic, &recipe).unwrap();
        assert_eq!(c.pairs[0].spread, 20.0);
    }

    #[test]
    fn standard_recipe_makes_1024_pairs() {
        let r = CorpusRecipe::standard(0);
        assert_eq!(r.fractions.len() * r.sets_per_fraction, 1024);
    }

    #[test]
    fn corpus_file_round_trip_and_tamper_detection() {
        let (_, c) = small_corpus(DiffusionSpec::Ic, 10);
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("corpus");
        save_corpus(&stem, &c).unwrap();
        assert_eq!(load_corpus(&stem).unwrap(), c);
        let bin = stem.with_extension("bin");
        let mut bytes = fs::read(&bin).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 1;
        fs::write(&bin, bytes).unwrap();
        assert!(matches!(load_corpus(&stem), Err(Error::StaleArtifact { .. })));
    }

    #[test]
    fn split_keeps_every_pair() {
        let (_, c) = small_corpus(DiffusionSpec::Ic, 5);
        let (a, b) = c.split(0.25);
        assert_eq!(a.len() + b.len(), c.len());
        assert_eq!(b.len(), 3);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn encoding_round_trips(
            n in 1usize..40,
            raw in prop::collection::vec((prop::collection::vec(any::<bool>(), 40), any::<bool>(), 0.0f64..1.0), 0..6),
        ) {
            let pairs: Vec<TrainingPair> = raw
                .into_iter()
                .map(|(flags, with_freq, scale)| {
                    let seeds = SeedVector::from_flags(flags[..n].to_vec());
                    let node_frequency: Vec<f64> = if with_freq {
                        (0..n).map(|i| if seeds.contains(i) { 1.0 } else { scale / (i + 1) as f64 }).collect()
                    } else {
                        Vec::new()
                    };
                    let spread = if with_freq { node_frequency.iter().sum() } else { scale * n as f64 };
                    TrainingPair { seeds, node_frequency, spread }
                })
                .collect();
            let c = TrainingCorpus {
                graph_hash: "h".into(),
                node_count: n,
                spec: DiffusionSpec::Ic,
                fractions: vec![0.1],
                sampling: SeedSampling::Uniform,
                rounds: 1,
                pairs,
            };
            let (m, back) = decode_pairs(&encode_corpus(&c)).unwrap();
            prop_assert_eq!(m, n);
            prop_assert_eq!(back, c.pairs);
        }
    }
}
