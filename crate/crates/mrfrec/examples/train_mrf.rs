//! Train a sparse random field on a synthetic rating corpus and inspect what
//! it learned: the epoch log, the surviving interaction graph, and held-out
//! accuracy against a bias-only ablation.
//!
//! ```text
//! cargo run --example train_mrf
//! ```

use mrfrec::data::{chronological_split, filter_infrequent};
use mrfrec::harness::{compute_metrics, ScoredPrediction};
use mrfrec::inference;
use mrfrec::learning::{train, TrainConfig, TrainMethod};
use mrfrec::synth::surrogate_movielens;
use mrfrec::{ModelScope, Parameterization, RatingDataset};

fn main() {
    // A deterministic MovieLens-shaped corpus, thinned to keep this example
    // quick. The split holds out each user's last 5 ratings for validation
    // and the 10 before those for test -- strictly chronological.
    let full = surrogate_movielens(11);
    let sample = filter_infrequent(&full.subsample_users(0.2, 11), 30);
    let split = chronological_split(&sample, 5, 10).expect("users have enough ratings");
    println!(
        "corpus: {} users, {} ratings (train {} / valid {} / test {})",
        sample.user_ids().len(),
        sample.len(),
        split.train.len(),
        split.validation.len(),
        split.test.len()
    );

    let config = TrainConfig {
        method: TrainMethod::Pl,
        lambda1: 2e-3,
        max_epochs: 40,
        seed: 11,
        ..TrainConfig::default()
    };
    let outcome = train(
        &split.train,
        &split.validation,
        Parameterization::Smoothness,
        ModelScope::Joint,
        &config,
    )
    .expect("training converges");

    println!("\nepoch log:");
    print!("{}", outcome.log.to_tsv(&[]));

    let params = &outcome.params;
    println!(
        "\nsurviving edges: {} item-item, {} user-user (|w| > 1e-3)",
        params.item_edges().count_above(1e-3),
        params.user_edges().count_above(1e-3)
    );
    let mut strongest: Vec<(u32, u32, f64)> = params.item_edges().iter().collect();
    strongest.sort_by(|a, b| b.2.abs().total_cmp(&a.2.abs()));
    for (a, b, w) in strongest.iter().take(5) {
        println!("  strong item pair ({a}, {b}): w = {w:+.4}");
    }

    // Ablation: with the ℓ1 penalty cranked up every pairwise weight shrinks
    // straight back to zero, leaving a pure bias model on the same schedule.
    let bias_only = train(
        &split.train,
        &split.validation,
        Parameterization::Smoothness,
        ModelScope::Joint,
        &TrainConfig { lambda1: 1e9, lambda2: 1e9, ..config.clone() },
    )
    .expect("bias stage converges");

    println!("\nheld-out test metrics:");
    for (label, model) in [("bias-only", &bias_only.params), ("full MRF", params)] {
        let m = compute_metrics(&score(model, &split.train, &split.test)).unwrap();
        println!(
            "  {label:9} RMSE {:.4}  MAE {:.4}  LL {:+.4}",
            m.rmse,
            m.mae,
            m.ll.unwrap()
        );
    }
}

fn score(
    params: &mrfrec::ModelParams,
    evidence: &RatingDataset,
    test: &RatingDataset,
) -> Vec<ScoredPrediction> {
    test.triples()
        .iter()
        .map(|t| {
            let p = inference::predict(params, evidence, t.user, t.item);
            ScoredPrediction {
                user: t.user,
                item: t.item,
                truth: t.rating,
                expected: p.expected_rating,
                map: p.map_rating,
                loglik: Some(inference::score_loglik(params, evidence, t.user, t.item, t.rating)),
            }
        })
        .collect()
}
