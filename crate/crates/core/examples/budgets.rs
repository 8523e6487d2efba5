//! Budget constraints and the projection from relaxed scores to a feasible
//! seed set.

use deepim::baselines::{celf, degree_topk};
use deepim::diffusion::DiffusionSpec;
use deepim::graph::{degree_costs, Graph};
use deepim::inference::{project_phi, BudgetConstraint};

fn main() -> deepim::Result<()> {
    // A star: hub 0 points at six leaves, each leaf points at node 7.
    let mut edges: Vec<(usize, usize)> = (1..=6).map(|v| (0, v)).collect();
    edges.extend((1..=6).map(|v| (v, 7)));
    let (g, _) = Graph::from_edges(8, &edges, false)?;
    println!("out-degree costs {:?}", degree_costs(&g));

    let uniform = vec![0.5; 8];
    for c in [
        BudgetConstraint::Count { k: 2 },
        BudgetConstraint::DegreeSum { k: 3.0 },
        BudgetConstraint::GenericCost {
            cost: vec![5.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 0.0],
            k: 4.0,
        },
    ] {
        let s = project_phi(&uniform, &c, &g)?;
        println!(
            "{:<40} -> {:?} (cost {} of {})",
            format!("{c:?}"),
            s.indices(),
            c.total_cost(&g, &s),
            c.limit()
        );
        assert!(c.is_satisfied(&g, &s));
    }

    let c = BudgetConstraint::DegreeSum { k: 6.0 };
    println!("degree under {c:?}: {:?}", degree_topk(&g, &c)?.seeds.indices());
    println!("celf under {c:?}: {:?}", celf(&g, &c, &DiffusionSpec::Ic, 200, 3)?.seeds.indices());
    Ok(())
}
