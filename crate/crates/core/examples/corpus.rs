//! Build a labelled seed-set corpus and persist it.

use deepim::dataset::{build_corpus, load_corpus, save_corpus, CorpusRecipe, SeedSampling};
use deepim::diffusion::DiffusionSpec;
use deepim::graph::erdos_renyi;

fn main() -> deepim::Result<()> {
    let g = erdos_renyi(100, 400, 1)?;
    for sampling in [SeedSampling::Uniform, SeedSampling::DegreeBiased] {
        let recipe = CorpusRecipe {
            sets_per_fraction: 16,
            rounds: 50,
            sampling,
            ..CorpusRecipe::standard(9)
        };
        let corpus = build_corpus(&g, &DiffusionSpec::Ic, &recipe)?;
        let mean: f64 = corpus.pairs.iter().map(|p| p.spread).sum::<f64>() / corpus.len() as f64;
        println!("{sampling:?}: {} pairs, mean spread {mean:.1}", corpus.len());
    }

    let corpus = build_corpus(&g, &DiffusionSpec::Ic, &CorpusRecipe::standard(9))?;
    let dir = tempfile_dir();
    let stem = dir.join("corpus");
    let manifest = save_corpus(&stem, &corpus)?;
    let back = load_corpus(&stem)?;
    assert_eq!(back.pairs, corpus.pairs);
    println!("saved {} pairs to {} ({manifest:?})", back.len(), stem.display());
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let dir = std::env::temp_dir().join("deepim-corpus-example");
    std::fs::create_dir_all(&dir).expect("temp dir");
    dir
}
