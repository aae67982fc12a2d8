//! Metrics, experiment orchestration over the model grid, and correlation
//! graph extraction.
//!
//! A model is named by a [`ModelSpec`] token (`item-mean`, `weighted`, `knn`,
//! `rsvd`, or `mrf.<scope>.<scheme>.<method>`); [`run_experiment`] fits it on
//! a split and scores the test fold into a [`MetricsRecord`]. Error metrics
//! follow the usual conventions: RMSE against the real-valued (expected)
//! prediction, MAE against the most likely discrete rating, and LL as the
//! mean predictive log-probability of the observed ratings, reported only for
//! the models that produce calibrated distributions.

use std::fmt;
use std::io;
use std::str::FromStr;
use std::time::Instant;

use thiserror::Error;

use crate::baselines::{
    mean_predict, rsvd_predict, rsvd_train, weighted_mean_predict, KnnModel, MeanKind, MeanStats,
    RsvdConfig, RsvdError, KNN_DEFAULT_NEIGHBORS,
};
use crate::data::SplitBundle;
use crate::inference;
use crate::learning::{train, TrainConfig, TrainError, TrainMethod};
use crate::model::{ModelParams, ModelScope, PairMap, Parameterization};

/// One scored held-out cell, carrying every quantity the metrics need.
#[derive(Debug, Clone)]
pub struct ScoredPrediction {
    pub user: u32,
    pub item: u32,
    pub truth: u8,
    /// Real-valued prediction (expected rating), used by RMSE.
    pub expected: f64,
    /// Discrete prediction (most likely rating), used by MAE.
    pub map: u8,
    /// Predictive log-probability of `truth`; `None` for point predictors.
    pub loglik: Option<f64>,
}

/// Aggregate quality of one experiment run.
#[derive(Debug, Clone)]
pub struct MetricsRecord {
    pub rmse: f64,
    pub mae: f64,
    /// Mean predictive log-likelihood; `None` when the model has no
    /// distribution (the means and k-NN baselines).
    pub ll: Option<f64>,
    /// Number of scored predictions.
    pub y: usize,
    pub wall_seconds: f64,
    /// The effective configuration, as rendered `key=value` pairs.
    pub config_echo: String,
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("no predictions to score")]
    NoPredictions,
    #[error("evaluation split is empty")]
    EmptyEvaluation,
    #[error("unknown model spec `{0}`")]
    BadSpec(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Rsvd(#[from] RsvdError),
    #[error("io error: {0}")]
    Io(#[from] io::Error),
}

/// RMSE over expected ratings, MAE over discrete ratings, mean LL over
/// whatever log-probabilities are present (all or none per model).
pub fn compute_metrics(predictions: &[ScoredPrediction]) -> Result<MetricsRecord, HarnessError> {
    if predictions.is_empty() {
        return Err(HarnessError::NoPredictions);
    }
    let y = predictions.len() as f64;
    let sq: f64 =
        predictions.iter().map(|p| (p.truth as f64 - p.expected).powi(2)).sum();
    let abs: f64 =
        predictions.iter().map(|p| (p.truth as f64 - p.map as f64).abs()).sum();
    let lls: Vec<f64> = predictions.iter().filter_map(|p| p.loglik).collect();
    let ll = if lls.len() == predictions.len() {
        Some(lls.iter().sum::<f64>() / y)
    } else {
        None
    };
    Ok(MetricsRecord {
        rmse: (sq / y).sqrt(),
        mae: abs / y,
        ll,
        y: predictions.len(),
        wall_seconds: 0.0,
        config_echo: String::new(),
    })
}

/// A point on the experiment grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelSpec {
    Mean(MeanKind),
    WeightedMean,
    Knn,
    Rsvd,
    Mrf { scope: ModelScope, parameterization: Parameterization, method: TrainMethod },
}

impl ModelSpec {
    /// Every grid point: the four baselines (item mean standing in for the
    /// mean family) plus all scope × scheme × method combinations.
    pub fn grid() -> Vec<ModelSpec> {
        let mut specs = vec![
            ModelSpec::Mean(MeanKind::User),
            ModelSpec::Mean(MeanKind::Item),
            ModelSpec::WeightedMean,
            ModelSpec::Knn,
            ModelSpec::Rsvd,
        ];
        for scope in [ModelScope::UserOnly, ModelScope::ItemOnly, ModelScope::Joint] {
            for parameterization in [
                Parameterization::LinearByLinear,
                Parameterization::Gaussian,
                Parameterization::Smoothness,
            ] {
                for method in [TrainMethod::Pl, TrainMethod::Cd] {
                    specs.push(ModelSpec::Mrf { scope, parameterization, method });
                }
            }
        }
        specs
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelSpec::Mean(MeanKind::User) => write!(f, "user-mean"),
            ModelSpec::Mean(MeanKind::Item) => write!(f, "item-mean"),
            ModelSpec::Mean(MeanKind::Global) => write!(f, "global-mean"),
            ModelSpec::WeightedMean => write!(f, "weighted"),
            ModelSpec::Knn => write!(f, "knn"),
            ModelSpec::Rsvd => write!(f, "rsvd"),
            ModelSpec::Mrf { scope, parameterization, method } => {
                write!(f, "mrf.{}.{}.{}", scope.token(), parameterization.token(), method)
            }
        }
    }
}

impl FromStr for ModelSpec {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, HarnessError> {
        let bad = || HarnessError::BadSpec(s.to_string());
        match s.to_ascii_lowercase().as_str() {
            "user-mean" => Ok(ModelSpec::Mean(MeanKind::User)),
            "item-mean" => Ok(ModelSpec::Mean(MeanKind::Item)),
            "global-mean" => Ok(ModelSpec::Mean(MeanKind::Global)),
            "weighted" | "weighted-mean" => Ok(ModelSpec::WeightedMean),
            "knn" => Ok(ModelSpec::Knn),
            "rsvd" => Ok(ModelSpec::Rsvd),
            other => {
                let mut parts = other.split('.');
                if parts.next() != Some("mrf") {
                    return Err(bad());
                }
                let scope = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let parameterization =
                    parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let method = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(ModelSpec::Mrf { scope, parameterization, method })
            }
        }
    }
}

/// Hyperparameters for a whole experiment run (superset over the grid; each
/// spec reads the part it needs).
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub train: TrainConfig,
    pub rsvd: RsvdConfig,
    /// Factor-prior strengths tried on the validation fold; the best by
    /// validation RMSE is kept.
    pub rsvd_lambda_grid: Vec<f64>,
    pub knn_sim_floor: f64,
    pub knn_max_neighbors: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train: TrainConfig::default(),
            rsvd: RsvdConfig::default(),
            rsvd_lambda_grid: vec![0.01, 0.1, 1.0],
            knn_sim_floor: 0.0,
            knn_max_neighbors: KNN_DEFAULT_NEIGHBORS,
        }
    }
}

fn render_echo(pairs: &[(&str, String)]) -> String {
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn config_echo(spec: &ModelSpec, config: &ExperimentConfig, extra: &[(&str, String)]) -> String {
    let mut pairs: Vec<(&str, String)> = vec![("spec", spec.to_string())];
    match spec {
        ModelSpec::Mean(_) | ModelSpec::WeightedMean => {}
        ModelSpec::Knn => {
            pairs.push(("simFloor", format!("{}", config.knn_sim_floor)));
            pairs.push(("maxNeighbors", format!("{}", config.knn_max_neighbors)));
        }
        ModelSpec::Rsvd => {
            let c = &config.rsvd;
            pairs.push(("f", format!("{}", c.f)));
            pairs.push(("eta", format!("{}", c.eta)));
            pairs.push(("etaVar", format!("{}", c.eta_var)));
            pairs.push(("batch", format!("{}", c.batch)));
            pairs.push(("patience", format!("{}", c.patience)));
            pairs.push(("maxEpochs", format!("{}", c.max_epochs)));
            pairs.push(("seed", format!("{}", c.seed)));
        }
        ModelSpec::Mrf { .. } => {
            let c = &config.train;
            pairs.push(("lambda1", format!("{}", c.lambda1)));
            pairs.push(("lambda2", format!("{}", c.lambda2)));
            pairs.push(("etaBias", format!("{}", c.eta_bias)));
            pairs.push(("etaPair", format!("{}", c.eta_pair)));
            pairs.push(("batch", format!("{}", c.batch)));
            pairs.push(("epsilon", format!("{}", c.epsilon)));
            pairs.push(("cdSteps", format!("{}", c.cd_steps)));
            pairs.push((
                "itemCap",
                c.item_cap.map_or("none".to_string(), |v| v.to_string()),
            ));
            pairs.push((
                "userCap",
                c.user_cap.map_or("none".to_string(), |v| v.to_string()),
            ));
            pairs.push(("patience", format!("{}", c.patience)));
            pairs.push(("maxEpochs", format!("{}", c.max_epochs)));
            pairs.push(("seed", format!("{}", c.seed)));
        }
    }
    pairs.extend(extra.iter().cloned());
    render_echo(&pairs)
}

/// Round a real-valued prediction to the nearest rating slot in `1..=k`.
pub fn nearest_slot(x: f64, k: u8) -> u8 {
    (x.round().clamp(1.0, k as f64)) as u8
}

fn clamp_rating(x: f64, k: u8) -> f64 {
    x.clamp(1.0, k as f64)
}

/// Fit `spec` on `split.train` (tuning against `split.validation` where the
/// model calls for it) and score every cell of `split.test`.
pub fn run_experiment(
    split: &SplitBundle,
    spec: &ModelSpec,
    config: &ExperimentConfig,
) -> Result<(MetricsRecord, Vec<ScoredPrediction>), HarnessError> {
    let t0 = Instant::now();
    let eval = &split.test;
    if eval.is_empty() {
        return Err(HarnessError::EmptyEvaluation);
    }
    let train_data = &split.train;
    let k = train_data.k();
    let mut echo_extra: Vec<(&str, String)> = Vec::new();
    let score: Box<dyn Fn(u32, u32, u8) -> ScoredPrediction + '_> = match spec {
        ModelSpec::Mean(kind) => {
            let stats = MeanStats::fit(train_data);
            let kind = *kind;
            Box::new(move |u, i, r| {
                let x = clamp_rating(mean_predict(&stats, u, i, kind), k);
                ScoredPrediction {
                    user: u,
                    item: i,
                    truth: r,
                    expected: x,
                    map: nearest_slot(x, k),
                    loglik: None,
                }
            })
        }
        ModelSpec::WeightedMean => {
            let stats = MeanStats::fit(train_data);
            Box::new(move |u, i, r| {
                let x = clamp_rating(weighted_mean_predict(&stats, u, i), k);
                ScoredPrediction {
                    user: u,
                    item: i,
                    truth: r,
                    expected: x,
                    map: nearest_slot(x, k),
                    loglik: None,
                }
            })
        }
        ModelSpec::Knn => {
            let model = KnnModel::fit(train_data);
            let (floor, cap) = (config.knn_sim_floor, config.knn_max_neighbors);
            Box::new(move |u, i, r| {
                let x = clamp_rating(model.predict(train_data, u, i, floor, cap), k);
                ScoredPrediction {
                    user: u,
                    item: i,
                    truth: r,
                    expected: x,
                    map: nearest_slot(x, k),
                    loglik: None,
                }
            })
        }
        ModelSpec::Rsvd => {
            let grid: &[f64] = if config.rsvd_lambda_grid.is_empty() {
                &[config.rsvd.lambda]
            } else {
                &config.rsvd_lambda_grid
            };
            let mut best: Option<(f64, crate::baselines::RsvdParams)> = None;
            let mut best_lambda = grid[0];
            for &lambda in grid {
                let cfg = RsvdConfig { lambda, ..config.rsvd.clone() };
                let (params, _) = rsvd_train(train_data, &split.validation, &cfg)?;
                let score = crate::baselines::valid_rmse(&params, &split.validation);
                if best.as_ref().is_none_or(|(s, _)| score < *s) {
                    best = Some((score, params));
                    best_lambda = lambda;
                }
            }
            let (_, params) = best.expect("non-empty lambda grid");
            echo_extra.push(("lambda", format!("{best_lambda}")));
            Box::new(move |u, i, r| {
                let p = rsvd_predict(&params, u, i);
                ScoredPrediction {
                    user: u,
                    item: i,
                    truth: r,
                    expected: clamp_rating(p.mean, k),
                    map: p.map_rating,
                    loglik: Some(p.distribution.prob(r).ln()),
                }
            })
        }
        ModelSpec::Mrf { scope, parameterization, method } => {
            let cfg = TrainConfig { method: *method, ..config.train.clone() };
            let outcome = train(train_data, &split.validation, *parameterization, *scope, &cfg)?;
            let params = outcome.params;
            Box::new(move |u, i, r| {
                let p = inference::predict(&params, train_data, u, i);
                ScoredPrediction {
                    user: u,
                    item: i,
                    truth: r,
                    expected: p.expected_rating,
                    map: p.map_rating,
                    loglik: Some(inference::score_loglik(&params, train_data, u, i, r)),
                }
            })
        }
    };
    let predictions: Vec<ScoredPrediction> =
        eval.triples().iter().map(|t| score(t.user, t.item, t.rating)).collect();
    drop(score);
    let mut record = compute_metrics(&predictions)?;
    record.wall_seconds = t0.elapsed().as_secs_f64();
    record.config_echo = config_echo(spec, config, &echo_extra);
    Ok((record, predictions))
}

/// Render experiment rows as a tab-separated table. `comments` become `#`
/// header lines.
pub fn write_metrics_table(
    rows: &[(String, MetricsRecord)],
    mut w: impl io::Write,
    comments: &[String],
) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "spec\tRMSE\tMAE\tLL\tY\tseconds")?;
    for (spec, r) in rows {
        let ll = r.ll.map_or("NA".to_string(), |v| format!("{v:.6}"));
        writeln!(
            w,
            "{}\t{:.6}\t{:.6}\t{}\t{}\t{:.3}",
            spec, r.rmse, r.mae, ll, r.y, r.wall_seconds
        )?;
    }
    Ok(())
}

/// Which pairwise family a graph is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    Item,
    User,
}

impl GraphKind {
    pub fn token(self) -> &'static str {
        match self {
            GraphKind::Item => "item",
            GraphKind::User => "user",
        }
    }
}

impl fmt::Display for GraphKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for GraphKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "item" => Ok(GraphKind::Item),
            "user" => Ok(GraphKind::User),
            other => Err(format!("unknown graph kind `{other}` (expected item or user)")),
        }
    }
}

/// Learned interaction weights viewed as a weighted graph.
#[derive(Debug, Clone)]
pub struct CorrelationGraph {
    pub kind: GraphKind,
    /// `(idA, idB, weight)` with `idA < idB`, sorted by ids.
    pub edges: Vec<(u32, u32, f64)>,
    /// Stored nonzero weights over `n(n−1)/2` possible pairs — a property of
    /// the model, independent of the display threshold.
    pub sparsity: f64,
}

/// Extract the `kind` pairwise weights with `|weight| ≥ threshold`.
pub fn extract_graph(params: &ModelParams, kind: GraphKind, threshold: f64) -> CorrelationGraph {
    let (pairs, n): (&PairMap, usize) = match kind {
        GraphKind::Item => (params.item_edges(), params.n_items()),
        GraphKind::User => (params.user_edges(), params.n_users()),
    };
    let mut edges: Vec<(u32, u32, f64)> = pairs
        .iter()
        .filter(|&(_, _, w)| w != 0.0 && w.abs() >= threshold)
        .collect();
    edges.sort_by_key(|&(a, b, _)| (a, b));
    let possible = n.saturating_mul(n.saturating_sub(1)) / 2;
    let sparsity = if possible == 0 {
        0.0
    } else {
        pairs.stored_nonzero() as f64 / possible as f64
    };
    CorrelationGraph { kind, edges, sparsity }
}

/// Write a graph as a tab-separated edge list with `#` comment headers.
pub fn write_graph(
    graph: &CorrelationGraph,
    mut w: impl io::Write,
    comments: &[String],
) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "# sparsity {:.6}", graph.sparsity)?;
    writeln!(w, "kind\tidA\tidB\tweight")?;
    for &(a, b, weight) in &graph.edges {
        writeln!(w, "{}\t{}\t{}\t{:.6}", graph.kind, a, b, weight)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::chronological_split;
    use crate::model::grid_dataset;
    use rustc_hash::FxHashMap;

    fn scored(truth: u8, expected: f64, map: u8, loglik: Option<f64>) -> ScoredPrediction {
        ScoredPrediction { user: 0, item: 0, truth, expected, map, loglik }
    }

    #[test]
    fn perfect_predictions_have_zero_error() {
        let preds = vec![scored(3, 3.0, 3, None), scored(5, 5.0, 5, None)];
        let m = compute_metrics(&preds).unwrap();
        assert_eq!(m.rmse, 0.0);
        assert_eq!(m.mae, 0.0);
        assert_eq!(m.ll, None);
        assert_eq!(m.y, 2);
    }

    #[test]
    fn single_off_by_one_prediction() {
        let preds = vec![scored(4, 3.0, 3, None)];
        let m = compute_metrics(&preds).unwrap();
        assert!((m.rmse - 1.0).abs() < 1e-12);
        assert!((m.mae - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_confidence_loglik() {
        let ll = (0.2f64).ln();
        let preds = vec![scored(2, 3.0, 3, Some(ll)), scored(4, 3.0, 3, Some(ll))];
        let m = compute_metrics(&preds).unwrap();
        assert!((m.ll.unwrap() + (5.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(HarnessError::NoPredictions)));
    }

    #[test]
    fn metrics_are_permutation_invariant() {
        let preds = vec![
            scored(1, 2.5, 2, Some(-0.3)),
            scored(5, 3.5, 4, Some(-1.2)),
            scored(3, 3.1, 3, Some(-0.7)),
        ];
        let mut rev = preds.clone();
        rev.reverse();
        let a = compute_metrics(&preds).unwrap();
        let b = compute_metrics(&rev).unwrap();
        assert!((a.rmse - b.rmse).abs() < 1e-12);
        assert!((a.mae - b.mae).abs() < 1e-12);
        assert!((a.ll.unwrap() - b.ll.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn model_spec_tokens_round_trip() {
        for spec in ModelSpec::grid() {
            let token = spec.to_string();
            let parsed: ModelSpec = token.parse().unwrap();
            assert_eq!(parsed, spec, "token {token}");
        }
        assert!("mrf.user.smooth".parse::<ModelSpec>().is_err());
        assert!("mrf.cosmic.smooth.pl".parse::<ModelSpec>().is_err());
        assert!("svd++".parse::<ModelSpec>().is_err());
        assert_eq!(
            "MRF.Joint.Smooth.PL".parse::<ModelSpec>().unwrap(),
            ModelSpec::Mrf {
                scope: ModelScope::Joint,
                parameterization: Parameterization::Smoothness,
                method: TrainMethod::Pl
            }
        );
    }

    #[test]
    fn nearest_slot_rounds_and_clamps() {
        assert_eq!(nearest_slot(3.4, 5), 3);
        assert_eq!(nearest_slot(3.5, 5), 4);
        assert_eq!(nearest_slot(0.2, 5), 1);
        assert_eq!(nearest_slot(9.0, 5), 5);
    }

    /// A model over 4 items / 2 users with chosen stored pairs.
    fn graph_fixture(pairs: &[(u32, u32, f64)]) -> ModelParams {
        let mut cells = Vec::new();
        for u in 0..2u32 {
            for i in 0..4u32 {
                cells.push((u, i, 3));
            }
        }
        let d = grid_dataset(5, &cells);
        let mut params =
            ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        for &(a, b, w) in pairs {
            params.set_item_edge(a, b, w);
        }
        params
    }

    #[test]
    fn all_zero_pairwise_yields_empty_graph() {
        let params = graph_fixture(&[]);
        let g = extract_graph(&params, GraphKind::Item, 0.0);
        assert!(g.edges.is_empty());
        assert_eq!(g.sparsity, 0.0);
    }

    #[test]
    fn sparsity_counts_stored_pairs_over_possible() {
        let params = graph_fixture(&[(0, 1, 0.5), (2, 3, -0.2)]);
        let g = extract_graph(&params, GraphKind::Item, 0.0);
        assert_eq!(g.edges.len(), 2);
        assert!((g.sparsity - 2.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_filters_edges_but_not_sparsity() {
        let params = graph_fixture(&[(0, 1, 0.5), (2, 3, -0.2), (1, 2, 0.05)]);
        let g = extract_graph(&params, GraphKind::Item, 0.1);
        assert_eq!(g.edges, vec![(0, 1, 0.5), (2, 3, -0.2)]);
        assert!((g.sparsity - 3.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn graph_rendering_matches_golden_lines() {
        let params = graph_fixture(&[(0, 1, 0.5), (2, 3, -0.2)]);
        let g = extract_graph(&params, GraphKind::Item, 0.0);
        let mut out = Vec::new();
        write_graph(&g, &mut out, &["fixture".to_string()]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# fixture");
        assert_eq!(lines[1], "# sparsity 0.333333");
        assert_eq!(lines[2], "kind\tidA\tidB\tweight");
        assert_eq!(lines[3], "item\t0\t1\t0.500000");
        assert_eq!(lines[4], "item\t2\t3\t-0.200000");
    }

    #[test]
    fn metrics_table_renders_na_for_missing_ll() {
        let rows = vec![
            (
                "item-mean".to_string(),
                MetricsRecord {
                    rmse: 1.0,
                    mae: 0.8,
                    ll: None,
                    y: 10,
                    wall_seconds: 0.5,
                    config_echo: String::new(),
                },
            ),
            (
                "rsvd".to_string(),
                MetricsRecord {
                    rmse: 0.9,
                    mae: 0.7,
                    ll: Some(-1.25),
                    y: 10,
                    wall_seconds: 1.25,
                    config_echo: String::new(),
                },
            ),
        ];
        let mut out = Vec::new();
        write_metrics_table(&rows, &mut out, &[]).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "spec\tRMSE\tMAE\tLL\tY\tseconds");
        assert_eq!(lines[1], "item-mean\t1.000000\t0.800000\tNA\t10\t0.500");
        assert_eq!(lines[2], "rsvd\t0.900000\t0.700000\t-1.250000\t10\t1.250");
    }

    /// Small planted dataset shared by the experiment tests: two user tastes
    /// crossed with two item genres, plus a handful of fixed perturbations.
    fn experiment_split() -> crate::data::SplitBundle {
        let mut cells = Vec::new();
        for u in 0..16u32 {
            for j in 0..12u32 {
                let i = (j + u) % 12;
                let like = (u % 2 == 0) == (i % 2 == 0);
                let mut r = if like { 4 } else { 2 };
                if (u + i) % 7 == 0 {
                    r += 1;
                }
                cells.push((u, i, r as u8));
            }
        }
        let d = grid_dataset(5, &cells);
        chronological_split(&d, 2, 2).unwrap()
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            train: TrainConfig { batch: 8, max_epochs: 15, ..TrainConfig::default() },
            rsvd: RsvdConfig { f: 2, batch: 32, max_epochs: 30, ..RsvdConfig::default() },
            rsvd_lambda_grid: vec![0.1],
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn y_equals_held_out_count_for_every_family() {
        let split = experiment_split();
        let config = tiny_config();
        for spec in ["item-mean", "weighted", "knn", "rsvd", "mrf.user.smooth.pl"] {
            let spec: ModelSpec = spec.parse().unwrap();
            let (record, preds) = run_experiment(&split, &spec, &config).unwrap();
            assert_eq!(record.y, split.test.len(), "{spec}");
            assert_eq!(preds.len(), split.test.len(), "{spec}");
            assert!(record.rmse >= 0.0 && record.mae >= 0.0, "{spec}");
            if let Some(ll) = record.ll {
                assert!(ll <= 0.0, "{spec}");
            }
            assert!(record.config_echo.contains("spec="), "{spec}");
        }
    }

    #[test]
    fn point_baselines_have_no_loglik_and_mrf_does() {
        let split = experiment_split();
        let config = tiny_config();
        let (means, _) =
            run_experiment(&split, &"item-mean".parse().unwrap(), &config).unwrap();
        assert_eq!(means.ll, None);
        let (mrf, _) =
            run_experiment(&split, &"mrf.user.smooth.pl".parse().unwrap(), &config).unwrap();
        assert!(mrf.ll.unwrap() < 0.0);
        let (rsvd, _) = run_experiment(&split, &"rsvd".parse().unwrap(), &config).unwrap();
        assert!(rsvd.ll.unwrap() < 0.0);
    }

    #[test]
    fn pl_experiments_are_reproducible() {
        let split = experiment_split();
        let config = tiny_config();
        let spec: ModelSpec = "mrf.joint.smooth.pl".parse().unwrap();
        let (a, _) = run_experiment(&split, &spec, &config).unwrap();
        let (b, _) = run_experiment(&split, &spec, &config).unwrap();
        assert_eq!(a.rmse.to_bits(), b.rmse.to_bits());
        assert_eq!(a.mae.to_bits(), b.mae.to_bits());
        assert_eq!(a.ll.unwrap().to_bits(), b.ll.unwrap().to_bits());
    }

    #[test]
    fn graph_has_no_self_edges_or_duplicates() {
        let params = graph_fixture(&[(0, 1, 0.5), (1, 2, 0.3), (0, 3, -0.4)]);
        let g = extract_graph(&params, GraphKind::Item, 0.0);
        let mut seen = FxHashMap::default();
        for &(a, b, _) in &g.edges {
            assert!(a < b);
            assert!(seen.insert((a, b), ()).is_none());
        }
    }

    #[test]
    fn transpose_swaps_roles_and_is_an_involution() {
        let d = grid_dataset(5, &[(1, 10, 4), (1, 11, 2), (2, 10, 5)]);
        let t = d.transpose();
        assert_eq!(t.n_users(), d.n_items());
        assert_eq!(t.n_items(), d.n_users());
        assert_eq!(t.rating(10, 1), Some(4));
        let back = t.transpose();
        assert_eq!(back.rating(1, 10), Some(4));
        assert_eq!(back.rating(1, 11), Some(2));
        assert_eq!(back.rating(2, 10), Some(5));
        assert_eq!(back.len(), d.len());
    }
}
