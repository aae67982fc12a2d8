//! Exact inference on a tiny rating database.
//!
//! With ten or fewer filled cells the joint distribution of the random field
//! can be enumerated outright. This example builds a small random model,
//! enumerates it, and shows that the cheap local conditionals the predictor
//! uses agree with the exact conditionals of the joint — the consistency that
//! makes pseudo-likelihood training meaningful.
//!
//! ```text
//! cargo run --example exact_inference
//! ```

use mrfrec::model::enumerate::EnumeratedModel;
use mrfrec::synth::{random_model, random_small_database};
use mrfrec::{ModelScope, Parameterization};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() {
    // The generator favors very small databases; scan seeds until we draw one
    // that fills at least six of the ten enumerable cells.
    let (mut rng, data) = (0u64..)
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let data = random_small_database(&mut rng, 10, 5);
            (rng, data)
        })
        .find(|(_, data)| data.len() >= 6)
        .expect("some seed yields a rich database");
    let params =
        random_model(&mut rng, Parameterization::Smoothness, ModelScope::Joint, &data, 0.8);

    println!("database: {} cells, K = {}", data.len(), params.k());
    let joint = EnumeratedModel::build(&params, &data);
    println!("log Z = {:.6}", joint.log_z());

    // The observed configuration and its exact probability.
    let observed: Vec<u8> = data.triples().iter().map(|t| t.rating).collect();
    println!(
        "P(observed assignment {:?}) = {:.6e}",
        observed,
        joint.probability(&observed)
    );

    // Compare P(x_c | rest) computed two ways for every cell.
    println!("\ncell            exact conditional            local conditional");
    let mut worst = 0.0f64;
    for (c, t) in data.triples().iter().enumerate() {
        let exact = joint.conditional(c, &observed);
        let local = params.local_conditional(&data, t.user, t.item);
        for s in 1..=params.k() {
            worst = worst.max((exact[(s - 1) as usize] - local.prob(s)).abs());
        }
        println!(
            "({:2},{:2})  {}  {}",
            t.user,
            t.item,
            fmt_dist(&exact),
            fmt_dist(&(1..=params.k()).map(|s| local.prob(s)).collect::<Vec<_>>()),
        );
    }
    println!("\nlargest absolute discrepancy: {worst:.3e}");
    assert!(worst < 1e-9, "local conditionals must match the enumerated joint");

    // Marginals are a different story: the local conditional clamps the rest
    // of the database, the marginal sums over it.
    let marginal = joint.marginal(0);
    println!("exact marginal of cell 0:     {}", fmt_dist(&marginal));
}

fn fmt_dist(p: &[f64]) -> String {
    let cells: Vec<String> = p.iter().map(|v| format!("{v:.4}")).collect();
    format!("[{}]", cells.join(" "))
}
