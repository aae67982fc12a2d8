//! Model parameters and energies for the rating MRF.
//!
//! Every filled cell (u, i) of the rating matrix is a discrete variable over
//! `{1..K}`. Singleton potentials capture user/item bias; pairwise potentials
//! connect two ratings of one user (item-item weights ω) or two ratings of one
//! item (user-user weights w). Three log-linear parameterizations share this
//! structure and differ only in the shape of the log-potentials. Probabilities
//! never need the partition function: prediction uses the local conditional of
//! one cell given its observed Markov blanket, and the exact-enumeration oracle
//! in [`enumerate`] is for tests on tiny models only.

pub mod checkpoint;
pub mod enumerate;

use rustc_hash::FxHashMap;

use crate::data::{pair_key, RatingDataset};
use crate::normalize::NormalizationStats;

/// The three log-linear potential families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameterization {
    /// Bilinear in mean-centered ratings: per-slot biases, ψ = exp(ω(k1−r̄_i)(k2−r̄_j)).
    LinearByLinear,
    /// Quadratic singleton and bilinear pairwise on normalized rating values.
    Gaussian,
    /// Penalizes absolute rating differences: ψ = exp(−ω|k1−k2|).
    Smoothness,
}

impl Parameterization {
    /// Number of bias values per user/item: K slots, or a single scalar for
    /// the Gaussian scheme.
    pub fn bias_dim(self, k: u8) -> usize {
        match self {
            Parameterization::Gaussian => 1,
            _ => k as usize,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Parameterization::LinearByLinear => "linear",
            Parameterization::Gaussian => "gauss",
            Parameterization::Smoothness => "smooth",
        }
    }
}

impl std::fmt::Display for Parameterization {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for Parameterization {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "linear" | "linear-linear" | "linear-by-linear" | "linearbylinear" | "llin" | "lbl" => {
                Ok(Parameterization::LinearByLinear)
            }
            "gauss" | "gaussian" => Ok(Parameterization::Gaussian),
            "smooth" | "smoothness" => Ok(Parameterization::Smoothness),
            other => Err(format!("unknown parameterization {other:?} (expected linear|gauss|smooth)")),
        }
    }
}

/// Which pairwise families are active.
///
/// `UserOnly` is the user-specific model: each user's row is an MRF over the
/// items they rated, so only item-item weights ω exist. `ItemOnly` is the dual
/// (user-user weights w). `Joint` activates both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelScope {
    UserOnly,
    ItemOnly,
    Joint,
}

impl ModelScope {
    /// Item-item weights ω participate.
    pub fn item_edges_active(self) -> bool {
        matches!(self, ModelScope::UserOnly | ModelScope::Joint)
    }

    /// User-user weights w participate.
    pub fn user_edges_active(self) -> bool {
        matches!(self, ModelScope::ItemOnly | ModelScope::Joint)
    }

    pub fn token(self) -> &'static str {
        match self {
            ModelScope::UserOnly => "user",
            ModelScope::ItemOnly => "item",
            ModelScope::Joint => "joint",
        }
    }
}

impl std::fmt::Display for ModelScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl std::str::FromStr for ModelScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "user" | "useronly" | "user-only" => Ok(ModelScope::UserOnly),
            "item" | "itemonly" | "item-only" => Ok(ModelScope::ItemOnly),
            "joint" => Ok(ModelScope::Joint),
            other => Err(format!("unknown scope {other:?} (expected user|item|joint)")),
        }
    }
}

/// Symmetric sparse weight map over unordered id pairs.
///
/// Each pair is stored once under (min, max); looking up (b, a) returns the
/// (a, b) value, and an absent pair is a hard zero. Self-pairs are rejected.
#[derive(Debug, Clone, Default)]
pub struct PairMap {
    map: FxHashMap<u64, f64>,
}

impl PairMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, a: u32, b: u32) -> f64 {
        debug_assert_ne!(a, b, "self-pair lookup");
        self.map.get(&pair_key(a, b)).copied().unwrap_or(0.0)
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.map.contains_key(&pair_key(a, b))
    }

    pub fn set(&mut self, a: u32, b: u32, value: f64) {
        assert_ne!(a, b, "self-pairs are not allowed");
        self.map.insert(pair_key(a, b), value);
    }

    /// Drop a stored pair (used to keep exact zeros out of the support).
    pub(crate) fn remove(&mut self, a: u32, b: u32) {
        self.map.remove(&pair_key(a, b));
    }

    /// Number of stored entries (including entries that are exactly zero).
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Stored entries with a nonzero value.
    pub fn stored_nonzero(&self) -> usize {
        self.map.values().filter(|v| **v != 0.0).count()
    }

    /// Stored entries with magnitude strictly above `threshold`.
    pub fn count_above(&self, threshold: f64) -> usize {
        self.map.values().filter(|v| v.abs() > threshold).count()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, u32, f64)> + '_ {
        self.map.iter().map(|(&key, &v)| ((key >> 32) as u32, key as u32, v))
    }

    /// Entries sorted by (min id, max id) — the canonical serialization order.
    pub fn sorted_entries(&self) -> Vec<(u32, u32, f64)> {
        let mut keys: Vec<u64> = self.map.keys().copied().collect();
        keys.sort_unstable();
        keys.iter().map(|&key| ((key >> 32) as u32, key as u32, self.map[&key])).collect()
    }
}

/// Probabilities over the K rating slots; a valid PMF by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    probs: Vec<f64>,
}

impl PredictiveDistribution {
    /// Softmax of negated energies with max-shifting, so arbitrary finite
    /// energies cannot overflow or produce NaN.
    pub fn from_energies(energies: &[f64]) -> Self {
        debug_assert!(energies.iter().all(|e| e.is_finite()), "non-finite energy");
        let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut probs: Vec<f64> = energies.iter().map(|&e| (min - e).exp()).collect();
        let z: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= z;
        }
        PredictiveDistribution { probs }
    }

    pub fn k(&self) -> u8 {
        self.probs.len() as u8
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of rating slot `r` (1-based).
    pub fn prob(&self, r: u8) -> f64 {
        self.probs[(r - 1) as usize]
    }

    /// Most probable rating; ties break toward the smallest slot.
    pub fn map_rating(&self) -> u8 {
        let mut best = 0usize;
        for (idx, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = idx;
            }
        }
        (best + 1) as u8
    }

    /// Probability-weighted mean of the K rating values.
    pub fn expected_rating(&self) -> f64 {
        self.probs.iter().enumerate().map(|(idx, &p)| (idx + 1) as f64 * p).sum()
    }

    /// Shannon entropy in nats, with 0·log 0 ≡ 0.
    pub fn entropy(&self) -> f64 {
        -self.probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
    }
}

/// Full parameter set of one model, plus the frozen training statistics the
/// potentials refer to (raw means for the linear-by-linear scheme, two-step
/// normalization for the Gaussian scheme).
///
/// Unknown users or items at evaluation time contribute zero bias and have no
/// edges, so cold-start predictions degrade to the bias-only or uniform
/// distribution. Reads are pure and safe to share; training mutates
/// exclusively between batches.
#[derive(Debug, Clone)]
pub struct ModelParams {
    k: u8,
    parameterization: Parameterization,
    scope: ModelScope,
    pub(crate) item_bias: FxHashMap<u32, Vec<f64>>,
    pub(crate) user_bias: FxHashMap<u32, Vec<f64>>,
    pub(crate) item_pair: PairMap,
    pub(crate) user_pair: PairMap,
    item_means: FxHashMap<u32, f64>,
    user_means: FxHashMap<u32, f64>,
    global_mean: f64,
    norm: NormalizationStats,
}

impl ModelParams {
    /// Zero-initialized parameters with means and normalization statistics
    /// computed from `train` and frozen.
    pub fn new(
        parameterization: Parameterization,
        scope: ModelScope,
        train: &RatingDataset,
        smoothing: f64,
    ) -> Self {
        let norm = NormalizationStats::fit(train, smoothing);
        let item_means = train
            .item_ids()
            .iter()
            .map(|&i| {
                let (sum, n) = train.item_col(i).fold((0.0, 0usize), |(s, n), t| {
                    (s + t.rating as f64, n + 1)
                });
                (i, sum / n as f64)
            })
            .collect();
        let user_means = train.user_ids().iter().map(|&u| (u, norm.user_mean(u))).collect();
        ModelParams {
            k: train.k(),
            parameterization,
            scope,
            item_bias: FxHashMap::default(),
            user_bias: FxHashMap::default(),
            item_pair: PairMap::new(),
            user_pair: PairMap::new(),
            item_means,
            user_means,
            global_mean: norm.global_mean(),
            norm,
        }
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        k: u8,
        parameterization: Parameterization,
        scope: ModelScope,
        item_bias: FxHashMap<u32, Vec<f64>>,
        user_bias: FxHashMap<u32, Vec<f64>>,
        item_pair: PairMap,
        user_pair: PairMap,
        item_means: FxHashMap<u32, f64>,
        user_means: FxHashMap<u32, f64>,
        global_mean: f64,
        norm: NormalizationStats,
    ) -> Self {
        ModelParams {
            k,
            parameterization,
            scope,
            item_bias,
            user_bias,
            item_pair,
            user_pair,
            item_means,
            user_means,
            global_mean,
            norm,
        }
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn parameterization(&self) -> Parameterization {
        self.parameterization
    }

    pub fn scope(&self) -> ModelScope {
        self.scope
    }

    pub fn bias_dim(&self) -> usize {
        self.parameterization.bias_dim(self.k)
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    /// Number of items the model was fit on.
    pub fn n_items(&self) -> usize {
        self.item_means.len()
    }

    /// Number of users the model was fit on.
    pub fn n_users(&self) -> usize {
        self.user_means.len()
    }

    /// Frozen training mean rating of `item` (global mean if unknown).
    pub fn item_mean(&self, item: u32) -> f64 {
        self.item_means.get(&item).copied().unwrap_or(self.global_mean)
    }

    /// Frozen training mean rating of `user` (global mean if unknown).
    pub fn user_mean(&self, user: u32) -> f64 {
        self.user_means.get(&user).copied().unwrap_or(self.global_mean)
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// Bias slot value (0 when the id has no stored bias).
    pub fn item_bias_slot(&self, item: u32, slot: usize) -> f64 {
        self.item_bias.get(&item).map(|v| v[slot]).unwrap_or(0.0)
    }

    pub fn user_bias_slot(&self, user: u32, slot: usize) -> f64 {
        self.user_bias.get(&user).map(|v| v[slot]).unwrap_or(0.0)
    }

    pub fn set_item_bias(&mut self, item: u32, slot: usize, value: f64) {
        let dim = self.bias_dim();
        self.item_bias.entry(item).or_insert_with(|| vec![0.0; dim])[slot] = value;
    }

    pub fn set_user_bias(&mut self, user: u32, slot: usize, value: f64) {
        let dim = self.bias_dim();
        self.user_bias.entry(user).or_insert_with(|| vec![0.0; dim])[slot] = value;
    }

    pub fn item_edges(&self) -> &PairMap {
        &self.item_pair
    }

    pub fn user_edges(&self) -> &PairMap {
        &self.user_pair
    }

    pub fn set_item_edge(&mut self, i: u32, j: u32, value: f64) {
        self.item_pair.set(i, j, value);
    }

    pub fn set_user_edge(&mut self, u: u32, v: u32, value: f64) {
        self.user_pair.set(u, v, value);
    }

    pub fn set_item_mean(&mut self, item: u32, mean: f64) {
        self.item_means.insert(item, mean);
    }

    pub fn set_user_mean(&mut self, user: u32, mean: f64) {
        self.user_means.insert(user, mean);
    }

    /// Normalized value of rating slot `k` at cell `(user, item)`.
    pub fn slot_value(&self, user: u32, item: u32, k: u8) -> f64 {
        self.norm.normalize(user, item, k as f64)
    }

    /// Log singleton potential of slot `k` at cell `(u, i)`.
    ///
    /// # Panics
    /// If `k` is outside `1..=K`.
    pub fn log_singleton(&self, u: u32, i: u32, k: u8) -> f64 {
        assert!(k >= 1 && k <= self.k, "rating slot {k} outside 1..={}", self.k);
        match self.parameterization {
            Parameterization::LinearByLinear => {
                let slot = (k - 1) as usize;
                self.item_bias_slot(i, slot) + self.user_bias_slot(u, slot)
            }
            Parameterization::Gaussian => {
                let z = self.slot_value(u, i, k);
                let mu = self.item_bias_slot(i, 0) + self.user_bias_slot(u, 0);
                -(z - mu).powi(2) / 2.0
            }
            Parameterization::Smoothness => {
                let mut acc = 0.0;
                for k2 in 1..=self.k {
                    let slot = (k2 - 1) as usize;
                    let bias = self.item_bias_slot(i, slot) + self.user_bias_slot(u, slot);
                    if bias != 0.0 {
                        acc -= bias * (k as f64 - k2 as f64).abs();
                    }
                }
                acc
            }
        }
    }

    /// Log pairwise potential between ratings `k1` of `(u, i)` and `k2` of
    /// `(u, j)` under the item-item weight ω_ij. The user enters only through
    /// the Gaussian scheme's per-cell normalized values.
    pub fn log_pairwise_item(&self, u: u32, i: u32, j: u32, k1: u8, k2: u8) -> f64 {
        self.log_pairwise_item_with(self.item_pair.get(i, j), u, i, j, k1, k2)
    }

    pub(crate) fn log_pairwise_item_with(
        &self,
        omega: f64,
        u: u32,
        i: u32,
        j: u32,
        k1: u8,
        k2: u8,
    ) -> f64 {
        if omega == 0.0 {
            return 0.0;
        }
        omega * self.item_pair_stat(u, i, j, k1, k2)
    }

    /// Sufficient statistic multiplying ω_ij in the log-potential.
    pub(crate) fn item_pair_stat(&self, u: u32, i: u32, j: u32, k1: u8, k2: u8) -> f64 {
        match self.parameterization {
            Parameterization::LinearByLinear => {
                (k1 as f64 - self.item_mean(i)) * (k2 as f64 - self.item_mean(j))
            }
            Parameterization::Gaussian => self.slot_value(u, i, k1) * self.slot_value(u, j, k2),
            Parameterization::Smoothness => -(k1 as f64 - k2 as f64).abs(),
        }
    }

    /// Log pairwise potential between ratings `k1` of `(u, i)` and `k2` of
    /// `(v, i)` under the user-user weight w_uv.
    pub fn log_pairwise_user(&self, i: u32, u: u32, v: u32, k1: u8, k2: u8) -> f64 {
        self.log_pairwise_user_with(self.user_pair.get(u, v), i, u, v, k1, k2)
    }

    pub(crate) fn log_pairwise_user_with(
        &self,
        w: f64,
        i: u32,
        u: u32,
        v: u32,
        k1: u8,
        k2: u8,
    ) -> f64 {
        if w == 0.0 {
            return 0.0;
        }
        w * self.user_pair_stat(i, u, v, k1, k2)
    }

    /// Sufficient statistic multiplying w_uv in the log-potential.
    pub(crate) fn user_pair_stat(&self, i: u32, u: u32, v: u32, k1: u8, k2: u8) -> f64 {
        match self.parameterization {
            Parameterization::LinearByLinear => {
                (k1 as f64 - self.user_mean(u)) * (k2 as f64 - self.user_mean(v))
            }
            Parameterization::Gaussian => self.slot_value(u, i, k1) * self.slot_value(v, i, k2),
            Parameterization::Smoothness => -(k1 as f64 - k2 as f64).abs(),
        }
    }

    /// Local energy of slot `k` at `(u, i)` given the observed neighbors in
    /// `data`: the negated sum of the singleton log-potential and all active
    /// pairwise log-potentials against u's other ratings (item edges) and i's
    /// other raters (user edges).
    pub fn local_energy(&self, data: &RatingDataset, u: u32, i: u32, k: u8) -> f64 {
        self.local_energies_overlaid(data, u, i, &mut |_, _| None)[(k - 1) as usize]
    }

    /// Energies of all K slots at `(u, i)`; one pass over the neighbors.
    pub fn local_energies(&self, data: &RatingDataset, u: u32, i: u32) -> Vec<f64> {
        self.local_energies_overlaid(data, u, i, &mut |_, _| None)
    }

    /// Like [`Self::local_energies`], but `overlay(user, item)` may override
    /// the rating value of any neighbor cell (used by Gibbs sampling, where a
    /// block's cells carry sample values while everything else is clamped to
    /// data). The neighbor *structure* still comes from `data`.
    pub(crate) fn local_energies_overlaid(
        &self,
        data: &RatingDataset,
        u: u32,
        i: u32,
        overlay: &mut dyn FnMut(u32, u32) -> Option<u8>,
    ) -> Vec<f64> {
        let kk = self.k as usize;
        let mut energies = vec![0.0; kk];
        for k in 1..=self.k {
            energies[(k - 1) as usize] = -self.log_singleton(u, i, k);
        }
        if self.scope.item_edges_active() {
            for t in data.user_row(u) {
                if t.item == i {
                    continue;
                }
                let omega = self.item_pair.get(i, t.item);
                if omega == 0.0 {
                    continue;
                }
                let r = overlay(u, t.item).unwrap_or(t.rating);
                for k in 1..=self.k {
                    energies[(k - 1) as usize] -=
                        self.log_pairwise_item_with(omega, u, i, t.item, k, r);
                }
            }
        }
        if self.scope.user_edges_active() {
            for t in data.item_col(i) {
                if t.user == u {
                    continue;
                }
                let w = self.user_pair.get(u, t.user);
                if w == 0.0 {
                    continue;
                }
                let r = overlay(t.user, i).unwrap_or(t.rating);
                for k in 1..=self.k {
                    energies[(k - 1) as usize] -=
                        self.log_pairwise_user_with(w, i, u, t.user, k, r);
                }
            }
        }
        energies
    }

    /// The local predictive distribution P(r_ui = k | observed neighbors),
    /// computed with max-shifted exponentials.
    pub fn local_conditional(&self, data: &RatingDataset, u: u32, i: u32) -> PredictiveDistribution {
        PredictiveDistribution::from_energies(&self.local_energies(data, u, i))
    }

    /// Energy of the complete assignment in `data`: negated sum of all
    /// singleton log-potentials plus each active pairwise log-potential once
    /// per shared user (item pairs) or shared item (user pairs).
    pub fn joint_energy(&self, data: &RatingDataset) -> f64 {
        let mut energy = 0.0;
        for t in data.triples() {
            energy -= self.log_singleton(t.user, t.item, t.rating);
        }
        if self.scope.item_edges_active() {
            for &u in data.user_ids() {
                let row: Vec<_> = data.user_row(u).collect();
                for a in 0..row.len() {
                    for b in (a + 1)..row.len() {
                        let (ta, tb) = (row[a], row[b]);
                        let omega = self.item_pair.get(ta.item, tb.item);
                        if omega != 0.0 {
                            energy -= self.log_pairwise_item_with(
                                omega, u, ta.item, tb.item, ta.rating, tb.rating,
                            );
                        }
                    }
                }
            }
        }
        if self.scope.user_edges_active() {
            for &i in data.item_ids() {
                let col: Vec<_> = data.item_col(i).collect();
                for a in 0..col.len() {
                    for b in (a + 1)..col.len() {
                        let (ta, tb) = (col[a], col[b]);
                        let w = self.user_pair.get(ta.user, tb.user);
                        if w != 0.0 {
                            energy -= self.log_pairwise_user_with(
                                w, i, ta.user, tb.user, ta.rating, tb.rating,
                            );
                        }
                    }
                }
            }
        }
        energy
    }
}

/// Test helper: build a dataset from `(user, item, rating)` cells with
/// timestamps in listing order.
#[cfg(test)]
pub(crate) fn grid_dataset(k: u8, cells: &[(u32, u32, u8)]) -> RatingDataset {
    let triples = cells
        .iter()
        .enumerate()
        .map(|(idx, &(user, item, rating))| crate::data::RatingTriple {
            user,
            item,
            rating,
            timestamp: idx as i64,
        })
        .collect();
    RatingDataset::from_triples(k, triples).unwrap()
}
