//! Training: pseudo-likelihood / contrastive-divergence gradients, the ℓ1
//! edge penalty, and the two-stage block-coordinate training loop.
//!
//! An epoch makes a user-block pass (updating biases and, in stage 2,
//! item–item weights) and then an item-block pass (biases and user–user
//! weights); under a single-sided scope only the corresponding pass runs.
//! Stage 1 trains biases alone until validation PL stalls, then stage 2 adds
//! the pairwise weights. The best-validation snapshot is returned.

pub mod cd;
pub mod gradient;

pub use cd::{cd_gradient, cd_stat_difference, gibbs_scan};
pub use gradient::{pl_gradient, pl_loss, pl_loss_cells, GradientAccumulator, PairSelection};

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::FxHashSet;
use thiserror::Error;

use crate::data::{pair_key, RatingDataset, RatingTriple};
use crate::model::{ModelParams, ModelScope, Parameterization};

/// Edges with |weight| above this count as "present" in training-log columns.
pub const EDGE_COUNT_THRESHOLD: f64 = 1e-3;

/// Validation-PL gains smaller than this (in nats per cell) do not reset the
/// patience counter: bias fitting keeps creeping down by tiny amounts long
/// after it has effectively saturated, and without a minimum delta the
/// pairwise stage would never engage. The best snapshot still tracks every
/// strict improvement.
pub const MIN_PL_IMPROVEMENT: f64 = 1e-4;

/// A unit of block-coordinate work: one user's row or one item's column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    User(u32),
    Item(u32),
}

impl Block {
    /// The block's cells in the dataset's canonical row/column order.
    pub fn cells<'a>(
        &self,
        data: &'a RatingDataset,
    ) -> Box<dyn Iterator<Item = &'a RatingTriple> + 'a> {
        match *self {
            Block::User(u) => Box::new(data.user_row(u)),
            Block::Item(i) => Box::new(data.item_col(i)),
        }
    }
}

/// Neighborhood admission rule: a pair is a candidate iff at least one
/// endpoint is among the `cap` most frequently rated entities of its kind
/// (ties broken toward the lower id). `None` means no cap.
#[derive(Debug, Clone, Default)]
pub struct CandidatePairs {
    item_popular: Option<FxHashSet<u32>>,
    user_popular: Option<FxHashSet<u32>>,
}

impl CandidatePairs {
    pub fn unlimited() -> Self {
        Self::default()
    }

    pub fn new(train: &RatingDataset, item_cap: Option<usize>, user_cap: Option<usize>) -> Self {
        let item_popular = item_cap.map(|cap| {
            top_popular(train.item_ids(), |i| train.item_count(i), cap)
        });
        let user_popular = user_cap.map(|cap| {
            top_popular(train.user_ids(), |u| train.user_count(u), cap)
        });
        CandidatePairs { item_popular, user_popular }
    }

    pub fn item_admits(&self, i: u32, j: u32) -> bool {
        match &self.item_popular {
            None => true,
            Some(top) => top.contains(&i) || top.contains(&j),
        }
    }

    pub fn user_admits(&self, u: u32, v: u32) -> bool {
        match &self.user_popular {
            None => true,
            Some(top) => top.contains(&u) || top.contains(&v),
        }
    }
}

fn top_popular(ids: &[u32], count: impl Fn(u32) -> usize, cap: usize) -> FxHashSet<u32> {
    let mut ranked: Vec<u32> = ids.to_vec();
    ranked.sort_by(|&a, &b| count(b).cmp(&count(a)).then(a.cmp(&b)));
    ranked.truncate(cap);
    ranked.into_iter().collect()
}

/// Materialized candidate lists: all co-rated (resp. co-rating) pairs that the
/// caps admit, each as `(low id, high id)` in ascending order.
pub fn candidate_pairs(
    train: &RatingDataset,
    item_cap: Option<usize>,
    user_cap: Option<usize>,
) -> (Vec<(u32, u32)>, Vec<(u32, u32)>) {
    let cands = CandidatePairs::new(train, item_cap, user_cap);
    let mut item_keys: FxHashSet<u64> = FxHashSet::default();
    for &u in train.user_ids() {
        let row: Vec<u32> = train.user_row(u).map(|t| t.item).collect();
        for (a, &i) in row.iter().enumerate() {
            for &j in &row[a + 1..] {
                if cands.item_admits(i, j) {
                    item_keys.insert(pair_key(i, j));
                }
            }
        }
    }
    let mut user_keys: FxHashSet<u64> = FxHashSet::default();
    for &i in train.item_ids() {
        let col: Vec<u32> = train.item_col(i).map(|t| t.user).collect();
        for (a, &u) in col.iter().enumerate() {
            for &v in &col[a + 1..] {
                if cands.user_admits(u, v) {
                    user_keys.insert(pair_key(u, v));
                }
            }
        }
    }
    let unpack = |keys: FxHashSet<u64>| {
        let mut sorted: Vec<u64> = keys.into_iter().collect();
        sorted.sort_unstable();
        sorted.into_iter().map(|k| ((k >> 32) as u32, k as u32)).collect::<Vec<_>>()
    };
    (unpack(item_keys), unpack(user_keys))
}

/// Gradient estimator used for the pairwise stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMethod {
    /// Exact pseudo-likelihood gradients.
    Pl,
    /// Contrastive divergence: statistics from a short Gibbs chain.
    Cd,
}

impl std::fmt::Display for TrainMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TrainMethod::Pl => "pl",
            TrainMethod::Cd => "cd",
        })
    }
}

impl FromStr for TrainMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "pl" => Ok(TrainMethod::Pl),
            "cd" => Ok(TrainMethod::Cd),
            other => Err(format!("unknown training method `{other}` (expected pl or cd)")),
        }
    }
}

/// Hyperparameters for [`train`].
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub method: TrainMethod,
    /// ℓ1 strength on item–item weights.
    pub lambda1: f64,
    /// ℓ1 strength on user–user weights.
    pub lambda2: f64,
    pub eta_bias: f64,
    pub eta_pair: f64,
    /// Blocks per mean-gradient update.
    pub batch: usize,
    /// Smoothing of the |ω| ≈ sqrt(ε² + ω²) penalty surrogate.
    pub epsilon: f64,
    /// Gibbs scans per CD gradient.
    pub cd_steps: usize,
    /// Keep item pairs only if an endpoint is among this many popular items.
    pub item_cap: Option<usize>,
    /// Same for user pairs.
    pub user_cap: Option<usize>,
    /// Earliest epoch at which stage 2 may start.
    pub stage1_min_epochs: usize,
    /// Consecutive non-improving validation evaluations tolerated.
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    /// Smoothing constant of the rating normalization.
    pub smoothing: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: TrainMethod::Pl,
            lambda1: 1e-3,
            lambda2: 1e-3,
            eta_bias: 0.1,
            eta_pair: 0.01,
            batch: 100,
            epsilon: 1e-3,
            cd_steps: 1,
            item_cap: None,
            user_cap: None,
            stage1_min_epochs: 1,
            patience: 3,
            max_epochs: 100,
            seed: 17,
            smoothing: 5.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::Config(msg.to_string()));
        if !(self.lambda1 >= 0.0) || !(self.lambda2 >= 0.0) {
            return bad("lambda1 and lambda2 must be >= 0");
        }
        if !(self.eta_bias > 0.0) || !(self.eta_pair > 0.0) {
            return bad("learning rates must be > 0");
        }
        if self.batch == 0 {
            return bad("batch must be >= 1");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be > 0");
        }
        if self.cd_steps == 0 {
            return bad("cd_steps must be >= 1");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1");
        }
        if !(self.smoothing >= 0.0) {
            return bad("smoothing must be >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(
        "training diverged at epoch {epoch}: validation PL {valid_pl} exceeds 10x initial {initial}"
    )]
    Diverged { epoch: usize, valid_pl: f64, initial: f64, log: TrainingLog },
    #[error("non-finite gradient in {what}")]
    NonFinite { what: String },
    #[error("training set is empty")]
    EmptyTrain,
}

/// Smoothed ℓ1 penalty `λ·sqrt(ε² + ω²)` and its derivative in ω.
pub fn l1_term(omega: f64, lambda: f64, epsilon: f64) -> (f64, f64) {
    let root = (epsilon * epsilon + omega * omega).sqrt();
    (lambda * root, lambda * omega / root)
}

/// One SGD step: biases move by `−ηBias·g`; pairwise weights take the data
/// step `−ηPair·g` followed by the ℓ1 shrinkage step, truncated at zero so
/// that shrinkage can pull a weight to exactly 0 but never push it across.
/// Errors if any gradient entry is non-finite; weights shrunk to exact zero
/// leave the stored support.
pub fn apply_update(
    params: &mut ModelParams,
    grads: &GradientAccumulator,
    config: &TrainConfig,
) -> Result<(), TrainError> {
    if let Some(what) = grads.first_non_finite() {
        return Err(TrainError::NonFinite { what });
    }
    for (&id, slots) in &grads.item_bias {
        for (s, g) in slots.iter().enumerate() {
            let v = params.item_bias_slot(id, s) - config.eta_bias * g;
            params.set_item_bias(id, s, v);
        }
    }
    for (&id, slots) in &grads.user_bias {
        for (s, g) in slots.iter().enumerate() {
            let v = params.user_bias_slot(id, s) - config.eta_bias * g;
            params.set_user_bias(id, s, v);
        }
    }
    for (&key, &g) in &grads.item_pair {
        let (a, b) = ((key >> 32) as u32, key as u32);
        let old = params.item_edges().get(a, b);
        let new = shrunk_step(old, g, config.eta_pair, config.lambda1, config.epsilon);
        if new == 0.0 {
            params.item_pair.remove(a, b);
        } else {
            params.set_item_edge(a, b, new);
        }
    }
    for (&key, &g) in &grads.user_pair {
        let (a, b) = ((key >> 32) as u32, key as u32);
        let old = params.user_edges().get(a, b);
        let new = shrunk_step(old, g, config.eta_pair, config.lambda2, config.epsilon);
        if new == 0.0 {
            params.user_pair.remove(a, b);
        } else {
            params.set_user_edge(a, b, new);
        }
    }
    Ok(())
}

fn shrunk_step(omega: f64, g: f64, eta: f64, lambda: f64, epsilon: f64) -> f64 {
    let stepped = omega - eta * g;
    let (_, l1g) = l1_term(stepped, lambda, epsilon);
    let new = stepped - eta * l1g;
    if new * stepped < 0.0 {
        0.0
    } else {
        new
    }
}

/// One row of the per-epoch training log.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    pub epoch: usize,
    pub stage: u8,
    pub train_pl: f64,
    pub valid_pl: f64,
    pub item_edges: usize,
    pub user_edges: usize,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// TSV rendering; `comments` become leading `# ` lines. Re-runs with the
    /// same config and seed reproduce every column except `wallSeconds`.
    pub fn to_tsv(&self, comments: &[String]) -> String {
        let mut out = String::new();
        for c in comments {
            let _ = writeln!(out, "# {c}");
        }
        let _ = writeln!(out, "epoch\tstage\ttrainPL\tvalidPL\titemEdges\tuserEdges\twallSeconds");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{:.3}",
                e.epoch, e.stage, e.train_pl, e.valid_pl, e.item_edges, e.user_edges, e.wall_seconds
            );
        }
        out
    }
}

/// Trained model plus its epoch log.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: TrainingLog,
}

/// Mean `−log P(r | neighbors)` over `cells`, conditioning on `neighbors`
/// only (for validation cells that is the training data). Returns 0 for an
/// empty cell list.
pub fn mean_pl(params: &ModelParams, neighbors: &RatingDataset, cells: &[RatingTriple]) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    // Collect, then sum sequentially: float addition order must not depend on
    // the thread count.
    let terms: Vec<f64> = cells
        .par_iter()
        .map(|t| -params.local_conditional(neighbors, t.user, t.item).prob(t.rating).ln())
        .collect();
    terms.iter().sum::<f64>() / cells.len() as f64
}

/// Fit a fresh zero-initialized model on `train_data`, monitoring `valid_data`.
pub fn train(
    train_data: &RatingDataset,
    valid_data: &RatingDataset,
    parameterization: Parameterization,
    scope: ModelScope,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let params = ModelParams::new(parameterization, scope, train_data, config.smoothing);
    train_with_initial(params, train_data, valid_data, config)
}

/// [`train`] continuing from an existing parameter state (normalization and
/// means are kept as stored in `params`).
pub fn train_with_initial(
    mut params: ModelParams,
    train_data: &RatingDataset,
    valid_data: &RatingDataset,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(TrainError::EmptyTrain);
    }
    let cands = CandidatePairs::new(train_data, config.item_cap, config.user_cap);
    let monitor: &[RatingTriple] =
        if valid_data.is_empty() { train_data.triples() } else { valid_data.triples() };
    let initial_valid = mean_pl(&params, train_data, monitor);

    let mut best_params = params.clone();
    let mut best_valid = initial_valid;
    let mut bad = 0usize;
    let mut stage: u8 = 1;
    let mut log = TrainingLog::new();

    let mut user_blocks: Vec<u32> = train_data.user_ids().to_vec();
    let mut item_blocks: Vec<u32> = train_data.item_ids().to_vec();

    for epoch in 1..=config.max_epochs {
        let t0 = Instant::now();
        let stage2 = stage == 2;
        if params.scope().item_edges_active() {
            let select = PairSelection { item_pairs: stage2, user_pairs: false };
            half_pass(&mut params, train_data, &mut user_blocks, false, select, &cands, config, epoch)?;
        }
        if params.scope().user_edges_active() {
            let select = PairSelection { item_pairs: false, user_pairs: stage2 };
            half_pass(&mut params, train_data, &mut item_blocks, true, select, &cands, config, epoch)?;
        }

        let train_pl = mean_pl(&params, train_data, train_data.triples());
        let valid_pl = if valid_data.is_empty() {
            train_pl
        } else {
            mean_pl(&params, train_data, valid_data.triples())
        };
        log.epochs.push(EpochRecord {
            epoch,
            stage,
            train_pl,
            valid_pl,
            item_edges: params.item_edges().count_above(EDGE_COUNT_THRESHOLD),
            user_edges: params.user_edges().count_above(EDGE_COUNT_THRESHOLD),
            wall_seconds: t0.elapsed().as_secs_f64(),
        });

        if !valid_pl.is_finite() || valid_pl > 10.0 * initial_valid {
            return Err(TrainError::Diverged { epoch, valid_pl, initial: initial_valid, log });
        }
        let saturated = valid_pl >= best_valid - MIN_PL_IMPROVEMENT;
        if valid_pl < best_valid {
            best_valid = valid_pl;
            best_params = params.clone();
        }
        if saturated {
            bad += 1;
        } else {
            bad = 0;
        }
        if bad >= config.patience {
            if stage == 1 && epoch >= config.stage1_min_epochs {
                stage = 2;
                bad = 0;
            } else if stage == 2 {
                break;
            }
        }
    }
    Ok(TrainOutcome { params: best_params, log })
}

#[allow(clippy::too_many_arguments)]
fn half_pass(
    params: &mut ModelParams,
    data: &RatingDataset,
    blocks: &mut [u32],
    item_half: bool,
    select: PairSelection,
    cands: &CandidatePairs,
    config: &TrainConfig,
    epoch: usize,
) -> Result<(), TrainError> {
    let half = item_half as u64;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream((epoch as u64) << 1 | half);
    blocks.shuffle(&mut shuffle_rng);
    for chunk in blocks.chunks(config.batch) {
        let frozen: &ModelParams = params;
        let grads: Vec<GradientAccumulator> = chunk
            .par_iter()
            .map(|&id| {
                let block = if item_half { Block::Item(id) } else { Block::User(id) };
                match config.method {
                    TrainMethod::Pl => pl_gradient(frozen, data, block, cands, select),
                    TrainMethod::Cd => {
                        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                        rng.set_stream(cd_stream(epoch, half, id));
                        cd_gradient(frozen, data, block, config.cd_steps, &mut rng, cands, select)
                    }
                }
            })
            .collect();
        let mut merged = GradientAccumulator::new();
        for g in &grads {
            merged.merge(g);
        }
        merged.scale(1.0 / chunk.len() as f64);
        apply_update(params, &merged, config)?;
    }
    Ok(())
}

/// Distinct ChaCha stream per (epoch, half, block), disjoint from the shuffle
/// streams via the top bit.
fn cd_stream(epoch: usize, half: u64, block_id: u32) -> u64 {
    (1u64 << 63) | ((epoch as u64) << 34) | (half << 33) | block_id as u64
}
