//! Run the whole model zoo on one split and print a paper-style results
//! table: means, weighted mean, user k-NN, regularized SVD, and the random
//! field in a few scope/scheme combinations.
//!
//! Point predictors have no predictive distribution, so their log-likelihood
//! column prints NA.
//!
//! ```text
//! cargo run --release --example baselines_shootout
//! ```

use std::io::Write;

use mrfrec::baselines::{MeanKind, RsvdConfig};
use mrfrec::data::{chronological_split, filter_infrequent, SplitBundle};
use mrfrec::harness::{run_experiment, write_metrics_table, ExperimentConfig, ModelSpec};
use mrfrec::learning::{TrainConfig, TrainMethod};
use mrfrec::synth::surrogate_movielens;
use mrfrec::{ModelScope, Parameterization};

fn main() {
    let full = surrogate_movielens(11);
    let sample = filter_infrequent(&full.subsample_users(0.15, 11), 30);
    let split: SplitBundle = chronological_split(&sample, 5, 10).expect("splittable");
    println!(
        "shootout corpus: {} users / {} train ratings / {} test cells\n",
        sample.user_ids().len(),
        split.train.len(),
        split.test.len()
    );

    let config = ExperimentConfig {
        train: TrainConfig { max_epochs: 20, seed: 11, ..TrainConfig::default() },
        rsvd: RsvdConfig { f: 20, max_epochs: 60, seed: 11, ..RsvdConfig::default() },
        ..ExperimentConfig::default()
    };

    let specs = vec![
        ModelSpec::Mean(MeanKind::Item),
        ModelSpec::Mean(MeanKind::User),
        ModelSpec::WeightedMean,
        ModelSpec::Knn,
        ModelSpec::Rsvd,
        ModelSpec::Mrf {
            scope: ModelScope::UserOnly,
            parameterization: Parameterization::Smoothness,
            method: TrainMethod::Pl,
        },
        ModelSpec::Mrf {
            scope: ModelScope::Joint,
            parameterization: Parameterization::Smoothness,
            method: TrainMethod::Pl,
        },
        ModelSpec::Mrf {
            scope: ModelScope::Joint,
            parameterization: Parameterization::Gaussian,
            method: TrainMethod::Pl,
        },
    ];

    let mut rows = Vec::new();
    for spec in specs {
        let (record, _) = run_experiment(&split, &spec, &config).expect("experiment runs");
        println!("{spec}: RMSE {:.4} in {:.1}s", record.rmse, record.wall_seconds);
        rows.push((spec.to_string(), record));
    }

    println!();
    let mut table = Vec::new();
    write_metrics_table(&rows, &mut table, &["baselines shootout".to_string()]).unwrap();
    std::io::stdout().write_all(&table).unwrap();
}
