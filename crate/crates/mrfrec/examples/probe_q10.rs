//! Scratch probe (not part of the example set): desk table and criterion-8
//! quartet on the reweighted surrogate.

use mrfrec::baselines::MeanKind;
use mrfrec::data::{chronological_split, filter_infrequent};
use mrfrec::harness::{run_experiment, ExperimentConfig, ModelSpec};
use mrfrec::learning::TrainMethod;
use mrfrec::synth::{restrict_train, surrogate_movielens};
use mrfrec::{ModelScope, Parameterization};

const SPEC: ModelSpec = ModelSpec::Mrf {
    scope: ModelScope::UserOnly,
    parameterization: Parameterization::Smoothness,
    method: TrainMethod::Pl,
};

fn main() {
    let full = surrogate_movielens(11);
    let kept = filter_infrequent(&full, 30);
    let split = chronological_split(&kept, 5, 10).unwrap();
    let small = restrict_train(&split, 10, 11);

    let mut config = ExperimentConfig::default();
    config.train.seed = 11;
    config.rsvd.seed = 11;

    let mut fulls = Vec::new();
    for spec in
        [ModelSpec::Mean(MeanKind::Item), ModelSpec::WeightedMean, ModelSpec::Rsvd, SPEC]
    {
        let (r, _) = run_experiment(&split, &spec, &config).unwrap();
        println!("full {spec}: RMSE {:.4} MAE {:.4}", r.rmse, r.mae);
        fulls.push(r.mae);
    }
    for (spec, full_mae) in [(SPEC, fulls[3]), (ModelSpec::Rsvd, fulls[2])] {
        let (r, _) = run_experiment(&small, &spec, &config).unwrap();
        println!(
            "q=10 {spec}: RMSE {:.4} MAE {:.4} (degradation +{:.4})",
            r.rmse,
            r.mae,
            r.mae - full_mae
        );
    }
}
