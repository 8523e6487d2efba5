//! Degree, greedy, CELF and RIS on one graph, evaluated on shared worlds.

use deepim::baselines::{celf, degree_topk, greedy, ris_greedy};
use deepim::diffusion::{mc_estimate, DiffusionSpec};
use deepim::graph::erdos_renyi;
use deepim::inference::BudgetConstraint;

fn main() -> deepim::Result<()> {
    let g = erdos_renyi(150, 600, 5)?;
    let k = 5;
    let c = BudgetConstraint::Count { k };
    let ic = DiffusionSpec::Ic;
    let results = [
        degree_topk(&g, &c)?,
        greedy(&g, &c, &ic, 200, 1)?,
        celf(&g, &c, &ic, 200, 1)?,
        ris_greedy(&g, k, 20_000, &ic, 1)?,
    ];
    for r in &results {
        let eval = mc_estimate(&g, &r.seeds, &ic, 2000, 77)?;
        println!(
            "{:<7} seeds {:?}  evaluations {:>5}  spread {:.2}",
            r.method,
            r.seeds.indices(),
            r.evaluations,
            eval.mean_spread
        );
    }
    assert_eq!(results[1].seeds, results[2].seeds);
    Ok(())
}
