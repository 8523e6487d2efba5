//! Parse an edge list, inspect the CSR graph, and round-trip a snapshot.

use std::io::Cursor;

use deepim::graph::{jazz_like, load_edge_list, read_snapshot, write_edge_list, write_snapshot};

const EDGES: &str = "\
# a tiny follower graph
alice bob
bob carol
carol alice
alice alice
alice bob
dave carol
";

fn main() -> deepim::Result<()> {
    let loaded = load_edge_list(Cursor::new(EDGES), true)?;
    let g = &loaded.graph;
    println!(
        "{} nodes, {} edges ({} self loops and {} duplicates dropped)",
        g.node_count(),
        g.edge_count(),
        loaded.stats.self_loops,
        loaded.stats.duplicate_edges
    );
    for (id, label) in loaded.labels.iter().enumerate() {
        let outs: Vec<&str> = g.out_neighbors(id).iter().map(|&v| loaded.labels[v].as_str()).collect();
        let weight = match g.in_degree(id) {
            0 => "-".to_string(),
            _ => format!("{:.2}", g.cascade_weight(id)),
        };
        println!("  {label:<6} in {}  ic weight {weight:<4}  -> {outs:?}", g.in_degree(id));
    }

    let mut bytes = Vec::new();
    write_snapshot(&loaded, &mut bytes)?;
    let back = read_snapshot(Cursor::new(&bytes))?;
    assert_eq!(back.graph.content_hash(), g.content_hash());
    println!("snapshot: {} bytes, hash {}", bytes.len(), &g.content_hash()[..16]);

    let jazz = jazz_like(7);
    let mut text = Vec::new();
    write_edge_list(&jazz, &mut text)?;
    println!(
        "jazz-like graph: {} nodes, {} directed edges, undirected {}, {} KiB as text",
        jazz.node_count(),
        jazz.edge_count(),
        jazz.is_undirected(),
        text.len() / 1024
    );
    Ok(())
}
