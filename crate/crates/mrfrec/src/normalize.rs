//! Two-step rate normalization.
//!
//! Step 1 removes per-user location and scale, shrinking each user's deviation
//! toward the global one; step 2 does the same per item on the step-1 output,
//! shrinking toward unit deviation. Statistics are fit on training data only,
//! and unseen users or items fall back to the priors (global mean/deviation for
//! users, zero mean and unit deviation for items), which the smoothed formulas
//! produce naturally at count zero.

use rustc_hash::FxHashMap;

use crate::data::RatingDataset;

/// Deviations are clamped below by this to keep divisions finite even when
/// every rating in train is identical.
pub const DEV_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Moments {
    mean: f64,
    dev: f64,
}

/// Fitted normalization statistics; see the module docs for the model.
#[derive(Debug, Clone)]
pub struct NormalizationStats {
    smoothing: f64,
    global_mean: f64,
    global_var: f64,
    users: FxHashMap<u32, Moments>,
    items: FxHashMap<u32, Moments>,
}

impl NormalizationStats {
    /// Fit on a training set. `smoothing` is the pseudo-count pulling small
    /// samples toward the prior; 5.0 is the conventional choice.
    ///
    /// # Panics
    /// On an empty training set — there is nothing to fit.
    pub fn fit(train: &RatingDataset, smoothing: f64) -> Self {
        assert!(!train.is_empty(), "cannot fit normalization on an empty training set");
        let n = train.len() as f64;
        let global_mean = train.triples().iter().map(|t| t.rating as f64).sum::<f64>() / n;
        let global_var = train
            .triples()
            .iter()
            .map(|t| (t.rating as f64 - global_mean).powi(2))
            .sum::<f64>()
            / n;

        let mut users = FxHashMap::default();
        for &u in train.user_ids() {
            let vals: Vec<f64> = train.user_row(u).map(|t| t.rating as f64).collect();
            let n_u = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n_u;
            let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            // Smoothed variance: (c * global + n_u * empirical) / (c + n_u),
            // where n_u * empirical is just the sum of squared deviations.
            let var = (smoothing * global_var + ss) / (smoothing + n_u);
            users.insert(u, Moments { mean, dev: var.sqrt().max(DEV_FLOOR) });
        }

        let mut stats = NormalizationStats {
            smoothing,
            global_mean,
            global_var,
            users,
            items: FxHashMap::default(),
        };

        let mut items = FxHashMap::default();
        for &i in train.item_ids() {
            let vals: Vec<f64> =
                train.item_col(i).map(|t| stats.step1(t.user, t.rating as f64)).collect();
            let m_i = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / m_i;
            let ss: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum();
            // Step-1 output has deviation ~1, so the prior variance here is 1.
            let var = (smoothing + ss) / (smoothing + m_i);
            items.insert(i, Moments { mean, dev: var.sqrt().max(DEV_FLOOR) });
        }
        stats.items = items;
        stats
    }

    /// Rebuild fitted statistics from serialized values (checkpoint loading).
    pub(crate) fn from_parts(
        smoothing: f64,
        global_mean: f64,
        global_var: f64,
        users: impl IntoIterator<Item = (u32, f64, f64)>,
        items: impl IntoIterator<Item = (u32, f64, f64)>,
    ) -> Self {
        NormalizationStats {
            smoothing,
            global_mean,
            global_var,
            users: users.into_iter().map(|(id, mean, dev)| (id, Moments { mean, dev })).collect(),
            items: items.into_iter().map(|(id, mean, dev)| (id, Moments { mean, dev })).collect(),
        }
    }

    /// `(id, mean, dev)` per fitted user, sorted by id.
    pub(crate) fn user_entries(&self) -> Vec<(u32, f64, f64)> {
        let mut out: Vec<_> = self.users.iter().map(|(&id, m)| (id, m.mean, m.dev)).collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    /// `(id, step-2 mean, step-2 dev)` per fitted item, sorted by id.
    pub(crate) fn item_entries(&self) -> Vec<(u32, f64, f64)> {
        let mut out: Vec<_> = self.items.iter().map(|(&id, m)| (id, m.mean, m.dev)).collect();
        out.sort_unstable_by_key(|e| e.0);
        out
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn global_mean(&self) -> f64 {
        self.global_mean
    }

    pub(crate) fn global_var(&self) -> f64 {
        self.global_var
    }

    /// Population deviation of all training ratings (floored).
    pub fn global_dev(&self) -> f64 {
        self.global_var.sqrt().max(DEV_FLOOR)
    }

    /// User mean rating; global mean for users absent from train.
    pub fn user_mean(&self, user: u32) -> f64 {
        self.users.get(&user).map(|m| m.mean).unwrap_or(self.global_mean)
    }

    /// Smoothed user deviation; at count zero this is the global deviation.
    pub fn user_dev(&self, user: u32) -> f64 {
        self.users.get(&user).map(|m| m.dev).unwrap_or_else(|| self.global_dev())
    }

    /// Step-2 item mean (of step-1 values); 0 for items absent from train.
    pub fn item_mean(&self, item: u32) -> f64 {
        self.items.get(&item).map(|m| m.mean).unwrap_or(0.0)
    }

    /// Smoothed step-2 item deviation; at count zero this is 1.
    pub fn item_dev(&self, item: u32) -> f64 {
        self.items.get(&item).map(|m| m.dev).unwrap_or(1.0)
    }

    fn step1(&self, user: u32, rating: f64) -> f64 {
        (rating - self.user_mean(user)) / self.user_dev(user)
    }

    /// Map a raw rating for cell `(user, item)` to its normalized value.
    pub fn normalize(&self, user: u32, item: u32, rating: f64) -> f64 {
        (self.step1(user, rating) - self.item_mean(item)) / self.item_dev(item)
    }

    /// Inverse of [`Self::normalize`] for the same cell.
    pub fn denormalize(&self, user: u32, item: u32, z: f64) -> f64 {
        self.user_mean(user)
            + self.user_dev(user) * (self.item_mean(item) + self.item_dev(item) * z)
    }

    /// Normalized value of each rating slot `1..=k` for one cell.
    pub fn slot_values(&self, user: u32, item: u32, k: u8) -> Vec<f64> {
        (1..=k).map(|r| self.normalize(user, item, r as f64)).collect()
    }
}
