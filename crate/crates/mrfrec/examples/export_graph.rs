//! Structure recovery: plant a sparse item-item interaction graph, sample
//! ratings from it, train with the ℓ1 penalty at a few strengths, and watch
//! the learned edge set shrink onto the planted one.
//!
//! ```text
//! cargo run --release --example export_graph
//! ```

use std::collections::BTreeSet;

use mrfrec::data::chronological_split;
use mrfrec::harness::{extract_graph, write_graph, GraphKind};
use mrfrec::learning::{train, TrainConfig};
use mrfrec::synth::planted_item_graph;
use mrfrec::{ModelScope, Parameterization};

fn main() {
    let (data, planted) = planted_item_graph(3);
    let split = chronological_split(&data, 2, 2).expect("splittable");
    let truth: BTreeSet<(u32, u32)> = planted.iter().copied().collect();
    println!(
        "planted graph: {} edges over {} items; {} ratings",
        planted.len(),
        data.item_ids().len(),
        data.len()
    );

    for lambda1 in [1e-5, 1e-3, 1e-1] {
        let config = TrainConfig { lambda1, max_epochs: 60, seed: 3, ..TrainConfig::default() };
        let outcome = train(
            &split.train,
            &split.validation,
            Parameterization::Smoothness,
            ModelScope::UserOnly,
            &config,
        )
        .expect("training converges");
        let graph = extract_graph(&outcome.params, GraphKind::Item, 1e-3);
        let hits = graph.edges.iter().filter(|(a, b, _)| truth.contains(&(*a, *b))).count();
        println!(
            "lambda1 = {lambda1:>7}: {:4} edges kept, {hits:3} of them planted, sparsity {:.4}",
            graph.edges.len(),
            graph.sparsity
        );
        if (lambda1 - 1e-3).abs() < 1e-12 {
            let path = std::env::temp_dir().join("mrfrec_item_graph.tsv");
            let file = std::fs::File::create(&path).expect("writable temp file");
            write_graph(&graph, file, &[format!("lambda1={lambda1}")]).unwrap();
            println!("           wrote {}", path.display());
        }
    }
}
