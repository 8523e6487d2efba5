//! Train a small bundle, then pick seeds by latent search with the teacher
//! and with the distilled student.

use std::time::Instant;

use deepim::baselines::degree_topk;
use deepim::dataset::{build_corpus, seed_count, CorpusRecipe, SeedSampling};
use deepim::diffusion::{mc_estimate, DiffusionSpec};
use deepim::graph::erdos_renyi;
use deepim::inference::{infer, BudgetConstraint, InferenceConfig, Scorer};
use deepim::trainer::{train_with, TrainConfig};

fn main() -> deepim::Result<()> {
    let g = erdos_renyi(120, 480, 3)?;
    let recipe = CorpusRecipe {
        sets_per_fraction: 24,
        rounds: 50,
        sampling: SeedSampling::DegreeBiased,
        ..CorpusRecipe::standard(1)
    };
    let corpus = build_corpus(&g, &DiffusionSpec::Ic, &recipe)?;

    let mut cfg = TrainConfig {
        epochs: 15,
        ..TrainConfig::default()
    };
    cfg.model.encoder_widths = vec![128, 32];
    cfg.model.student_widths = vec![64];
    let (bundle, report) = train_with(&g, &corpus, &cfg, |e| {
        if e.epoch % 5 == 4 {
            println!(
                "epoch {:>2}: reconstruction {:.4}  prediction {:.4}  distillation {:.2}",
                e.epoch, e.reconstruction, e.prediction, e.distillation
            );
        }
    })?;
    println!("fit: {:?}", report.fit);

    let c = BudgetConstraint::Count { k: seed_count(g.node_count(), 0.05)? };
    let eval = |s: &deepim::SeedVector| mc_estimate(&g, s, &DiffusionSpec::Ic, 1000, 99).map(|e| e.mean_spread);
    println!("degree  spread {:.2}", eval(&degree_topk(&g, &c)?.seeds)?);
    for scorer in [Scorer::Teacher, Scorer::Student] {
        let icfg = InferenceConfig {
            lr: 1e-2,
            scorer,
            ..InferenceConfig::default()
        };
        let start = Instant::now();
        let r = infer(&bundle, &g, &c, &icfg, &corpus)?;
        println!(
            "{scorer:?} spread {:.2}  seeds {:?}  ({:.2}s)",
            eval(&r.seeds)?,
            r.seeds.indices(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}
