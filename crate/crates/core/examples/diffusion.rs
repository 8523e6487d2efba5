//! Monte-Carlo spread under IC, LT and SIS, checked against exact IC.

use deepim::diffusion::{exact_ic_spread, mc_estimate, DiffusionSpec};
use deepim::graph::{erdos_renyi, jazz_like};
use deepim::SeedVector;

fn main() -> deepim::Result<()> {
    let small = erdos_renyi(8, 12, 3)?;
    let seeds = SeedVector::from_indices(8, &[0, 5])?;
    let exact = exact_ic_spread(&small, &seeds)?;
    let est = mc_estimate(&small, &seeds, &DiffusionSpec::Ic, 20_000, 1)?;
    println!(
        "8-node IC: exact {exact:.4}, monte carlo {:.4} ± {:.4}",
        est.mean_spread,
        est.standard_error()
    );

    let g = jazz_like(7);
    let seeds = SeedVector::from_indices(g.node_count(), &[0, 1, 2, 3, 4, 5, 6, 7, 8, 9])?;
    for spec in [DiffusionSpec::Ic, DiffusionSpec::lt(), DiffusionSpec::sis()] {
        let e = mc_estimate(&g, &seeds, &spec, 200, 42)?;
        println!(
            "{:<3} on jazz-like: {:6.1} of {} nodes (stddev {:.1})",
            spec.name(),
            e.mean_spread,
            g.node_count(),
            e.spread_stddev
        );
    }
    Ok(())
}
