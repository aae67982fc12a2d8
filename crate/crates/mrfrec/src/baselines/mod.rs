//! Reference predictors: user/item/global means, the variance-weighted mean,
//! user-based k-NN, and RSVD (probabilistic matrix factorization with a
//! learned heteroscedastic variance) in [`rsvd`].

pub mod rsvd;

pub use rsvd::{
    read_rsvd_checkpoint, rsvd_predict, rsvd_train, valid_nll, valid_rmse, write_rsvd_checkpoint,
    RsvdConfig, RsvdError, RsvdParams, RsvdPrediction,
};

use std::str::FromStr;

use rustc_hash::FxHashMap;

use crate::data::RatingDataset;

/// Raw train deviations are floored here before any division.
pub const BASELINE_DEV_FLOOR: f64 = 1e-6;

/// Which training mean a [`mean_predict`] call returns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    User,
    Item,
    Global,
}

impl FromStr for MeanKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "user" => Ok(MeanKind::User),
            "item" => Ok(MeanKind::Item),
            "global" => Ok(MeanKind::Global),
            other => Err(format!("unknown mean kind `{other}` (expected user, item or global)")),
        }
    }
}

/// Raw per-user and per-item training means and (floored, population)
/// standard deviations.
#[derive(Debug, Clone)]
pub struct MeanStats {
    global_mean: f64,
    global_dev: f64,
    users: FxHashMap<u32, (f64, f64)>,
    items: FxHashMap<u32, (f64, f64)>,
}

impl MeanStats {
    pub fn fit(train: &RatingDataset) -> MeanStats {
        let n = train.len().max(1) as f64;
        let global_mean = train.triples().iter().map(|t| t.rating as f64).sum::<f64>() / n;
        let global_var = train
            .triples()
            .iter()
            .map(|t| (t.rating as f64 - global_mean).powi(2))
            .sum::<f64>()
            / n;
        let global_dev = global_var.sqrt().max(BASELINE_DEV_FLOOR);
        let moments = |cells: Vec<f64>| {
            let m = cells.iter().sum::<f64>() / cells.len() as f64;
            let v = cells.iter().map(|r| (r - m).powi(2)).sum::<f64>() / cells.len() as f64;
            (m, v.sqrt().max(BASELINE_DEV_FLOOR))
        };
        let users = train
            .user_ids()
            .iter()
            .map(|&u| (u, moments(train.user_row(u).map(|t| t.rating as f64).collect())))
            .collect();
        let items = train
            .item_ids()
            .iter()
            .map(|&i| (i, moments(train.item_col(i).map(|t| t.rating as f64).collect())))
            .collect();
        MeanStats { global_mean, global_dev, users, items }
    }

    /// Arbitrary moments, for direct arithmetic tests.
    #[cfg(test)]
    pub(crate) fn synthetic(
        global: (f64, f64),
        users: &[(u32, f64, f64)],
        items: &[(u32, f64, f64)],
    ) -> MeanStats {
        MeanStats {
            global_mean: global.0,
            global_dev: global.1,
            users: users.iter().map(|&(id, m, s)| (id, (m, s))).collect(),
            items: items.iter().map(|&(id, m, s)| (id, (m, s))).collect(),
        }
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    /// `(mean, dev)` with the global fallback for unknown users.
    pub fn user(&self, u: u32) -> (f64, f64) {
        self.users.get(&u).copied().unwrap_or((self.global_mean, self.global_dev))
    }

    pub fn item(&self, i: u32) -> (f64, f64) {
        self.items.get(&i).copied().unwrap_or((self.global_mean, self.global_dev))
    }
}

/// The user, item, or global training mean; unknown ids fall back to the
/// global mean.
pub fn mean_predict(stats: &MeanStats, u: u32, i: u32, kind: MeanKind) -> f64 {
    match kind {
        MeanKind::User => stats.user(u).0,
        MeanKind::Item => stats.item(i).0,
        MeanKind::Global => stats.global_mean,
    }
}

/// Variance-weighted combination of the user and item means:
/// `(r̄_u/s_u + r̄_i/s_i) / (1/s_u + 1/s_i)`.
pub fn weighted_mean_predict(stats: &MeanStats, u: u32, i: u32) -> f64 {
    let (um, us) = stats.user(u);
    let (im, is) = stats.item(i);
    (um / us + im / is) / (1.0 / us + 1.0 / is)
}

/// User-based k-NN state: hashed rating rows plus user means.
#[derive(Debug, Clone)]
pub struct KnnModel {
    rows: FxHashMap<u32, FxHashMap<u32, u8>>,
    user_means: FxHashMap<u32, f64>,
    global_mean: f64,
}

impl KnnModel {
    pub fn fit(train: &RatingDataset) -> KnnModel {
        let n = train.len().max(1) as f64;
        let global_mean = train.triples().iter().map(|t| t.rating as f64).sum::<f64>() / n;
        let mut rows: FxHashMap<u32, FxHashMap<u32, u8>> = FxHashMap::default();
        for t in train.triples() {
            rows.entry(t.user).or_default().insert(t.item, t.rating);
        }
        let user_means = rows
            .iter()
            .map(|(&u, row)| {
                (u, row.values().map(|&r| r as f64).sum::<f64>() / row.len() as f64)
            })
            .collect();
        KnnModel { rows, user_means, global_mean }
    }

    pub fn user_mean(&self, u: u32) -> f64 {
        self.user_means.get(&u).copied().unwrap_or(self.global_mean)
    }

    /// Pearson correlation over the co-rated subset, using subset means.
    /// Fewer than two co-rated items, or a constant side, gives 0.
    pub fn similarity(&self, u: u32, v: u32) -> f64 {
        let (Some(a), Some(b)) = (self.rows.get(&u), self.rows.get(&v)) else {
            return 0.0;
        };
        let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for (item, &ra) in small {
            if let Some(&rb) = large.get(item) {
                pairs.push((ra as f64, rb as f64));
            }
        }
        if pairs.len() < 2 {
            return 0.0;
        }
        let n = pairs.len() as f64;
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
        let mut cov = 0.0;
        let mut va = 0.0;
        let mut vb = 0.0;
        for &(ra, rb) in &pairs {
            cov += (ra - ma) * (rb - mb);
            va += (ra - ma).powi(2);
            vb += (rb - mb).powi(2);
        }
        if va == 0.0 || vb == 0.0 {
            return 0.0;
        }
        (cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0)
    }

    /// Neighborhood prediction: `r̄_u + Σ s(u,v)(r_vi − r̄_v) / Σ|s|` over the
    /// `max_neighbors` raters of `i` with the largest |s| above `sim_floor`
    /// (ties toward the lower user id). Falls back to `r̄_u`.
    pub fn predict(
        &self,
        train: &RatingDataset,
        u: u32,
        i: u32,
        sim_floor: f64,
        max_neighbors: usize,
    ) -> f64 {
        let base = self.user_mean(u);
        let mut neighbors: Vec<(u32, f64, f64)> = train
            .item_col(i)
            .filter(|t| t.user != u)
            .filter_map(|t| {
                let s = self.similarity(u, t.user);
                (s.abs() > sim_floor).then(|| (t.user, s, t.rating as f64 - self.user_mean(t.user)))
            })
            .collect();
        neighbors.sort_by(|a, b| {
            b.1.abs().partial_cmp(&a.1.abs()).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0))
        });
        neighbors.truncate(max_neighbors);
        let denom: f64 = neighbors.iter().map(|n| n.1.abs()).sum();
        if denom == 0.0 {
            return base;
        }
        base + neighbors.iter().map(|n| n.1 * n.2).sum::<f64>() / denom
    }
}

/// Free-function form of [`KnnModel::predict`].
pub fn knn_user_predict(
    model: &KnnModel,
    train: &RatingDataset,
    u: u32,
    i: u32,
    sim_floor: f64,
    max_neighbors: usize,
) -> f64 {
    model.predict(train, u, i, sim_floor, max_neighbors)
}

/// Default neighborhood size for k-NN experiments.
pub const KNN_DEFAULT_NEIGHBORS: usize = 50;
