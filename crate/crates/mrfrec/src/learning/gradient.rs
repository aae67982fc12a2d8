//! Pseudo-likelihood loss and its exact gradient.
//!
//! The PL loss of a block is the summed negative log local conditional of its
//! cells. For every parameter θ with sufficient statistic g_θ (the derivative
//! of the cell's summed log-potentials), the per-cell gradient is
//! `E_P[g_θ] − g_θ(observed)` under the cell's conditional P, so the code
//! below only needs, per scheme, the statistic of each bias slot and of each
//! incident pairwise weight.

use rustc_hash::FxHashMap;

use crate::data::{pair_key, RatingDataset, RatingTriple};
use crate::learning::{Block, CandidatePairs};
use crate::model::{ModelParams, Parameterization};

/// Which pairwise gradient families a pass collects. Bias gradients are always
/// collected; a family is only collected when the model scope activates it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSelection {
    pub item_pairs: bool,
    pub user_pairs: bool,
}

impl PairSelection {
    pub fn all() -> Self {
        PairSelection { item_pairs: true, user_pairs: true }
    }

    pub fn none() -> Self {
        PairSelection { item_pairs: false, user_pairs: false }
    }
}

/// Sparse gradient buffer keyed like [`ModelParams`].
#[derive(Debug, Clone, Default)]
pub struct GradientAccumulator {
    pub(crate) item_bias: FxHashMap<u32, Vec<f64>>,
    pub(crate) user_bias: FxHashMap<u32, Vec<f64>>,
    pub(crate) item_pair: FxHashMap<u64, f64>,
    pub(crate) user_pair: FxHashMap<u64, f64>,
}

impl GradientAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.item_bias.is_empty()
            && self.user_bias.is_empty()
            && self.item_pair.is_empty()
            && self.user_pair.is_empty()
    }

    pub fn item_bias(&self, id: u32, slot: usize) -> f64 {
        self.item_bias.get(&id).map(|v| v[slot]).unwrap_or(0.0)
    }

    pub fn user_bias(&self, id: u32, slot: usize) -> f64 {
        self.user_bias.get(&id).map(|v| v[slot]).unwrap_or(0.0)
    }

    pub fn item_pair(&self, i: u32, j: u32) -> f64 {
        self.item_pair.get(&pair_key(i, j)).copied().unwrap_or(0.0)
    }

    pub fn user_pair(&self, u: u32, v: u32) -> f64 {
        self.user_pair.get(&pair_key(u, v)).copied().unwrap_or(0.0)
    }

    pub(crate) fn add_item_bias(&mut self, id: u32, slots: &[f64]) {
        add_slots(self.item_bias.entry(id).or_insert_with(|| vec![0.0; slots.len()]), slots);
    }

    pub(crate) fn add_user_bias(&mut self, id: u32, slots: &[f64]) {
        add_slots(self.user_bias.entry(id).or_insert_with(|| vec![0.0; slots.len()]), slots);
    }

    pub(crate) fn add_item_pair(&mut self, i: u32, j: u32, v: f64) {
        *self.item_pair.entry(pair_key(i, j)).or_insert(0.0) += v;
    }

    pub(crate) fn add_user_pair(&mut self, u: u32, v: u32, value: f64) {
        *self.user_pair.entry(pair_key(u, v)).or_insert(0.0) += value;
    }

    /// Fold another accumulator into this one.
    pub fn merge(&mut self, other: &GradientAccumulator) {
        for (&id, slots) in &other.item_bias {
            self.add_item_bias(id, slots);
        }
        for (&id, slots) in &other.user_bias {
            self.add_user_bias(id, slots);
        }
        for (&key, &v) in &other.item_pair {
            *self.item_pair.entry(key).or_insert(0.0) += v;
        }
        for (&key, &v) in &other.user_pair {
            *self.user_pair.entry(key).or_insert(0.0) += v;
        }
    }

    /// Multiply every entry by `factor` (e.g. 1/batch for mean gradients).
    pub fn scale(&mut self, factor: f64) {
        for slots in self.item_bias.values_mut().chain(self.user_bias.values_mut()) {
            for v in slots {
                *v *= factor;
            }
        }
        for v in self.item_pair.values_mut().chain(self.user_pair.values_mut()) {
            *v *= factor;
        }
    }

    /// Description of the first non-finite entry, if any.
    pub(crate) fn first_non_finite(&self) -> Option<String> {
        for (&id, slots) in &self.item_bias {
            if let Some(slot) = slots.iter().position(|v| !v.is_finite()) {
                return Some(format!("item bias {id} slot {slot}"));
            }
        }
        for (&id, slots) in &self.user_bias {
            if let Some(slot) = slots.iter().position(|v| !v.is_finite()) {
                return Some(format!("user bias {id} slot {slot}"));
            }
        }
        for (&key, &v) in &self.item_pair {
            if !v.is_finite() {
                return Some(format!("item edge ({}, {})", (key >> 32) as u32, key as u32));
            }
        }
        for (&key, &v) in &self.user_pair {
            if !v.is_finite() {
                return Some(format!("user edge ({}, {})", (key >> 32) as u32, key as u32));
            }
        }
        None
    }
}

fn add_slots(into: &mut [f64], from: &[f64]) {
    for (a, b) in into.iter_mut().zip(from) {
        *a += b;
    }
}

/// Negative log pseudo-likelihood of a block's cells given their observed
/// neighbors.
pub fn pl_loss(params: &ModelParams, data: &RatingDataset, block: Block) -> f64 {
    block
        .cells(data)
        .map(|t| {
            let c = params.local_conditional(data, t.user, t.item);
            -c.prob(t.rating).ln()
        })
        .sum()
}

/// Summed `−log P(r | neighbors in `neighbors`)` over arbitrary cells. Used
/// for validation PL, where held-out cells condition on training data only.
pub fn pl_loss_cells<'a>(
    params: &ModelParams,
    neighbors: &RatingDataset,
    cells: impl IntoIterator<Item = &'a RatingTriple>,
) -> f64 {
    cells
        .into_iter()
        .map(|t| {
            let c = params.local_conditional(neighbors, t.user, t.item);
            -c.prob(t.rating).ln()
        })
        .sum()
}

/// Exact gradient of [`pl_loss`] over a block. Bias gradients are always
/// produced; pairwise gradients are produced for the families enabled in
/// `select` (and active in the model scope), restricted to `candidates`.
pub fn pl_gradient(
    params: &ModelParams,
    data: &RatingDataset,
    block: Block,
    candidates: &CandidatePairs,
    select: PairSelection,
) -> GradientAccumulator {
    let mut acc = GradientAccumulator::new();
    for t in block.cells(data) {
        cell_pl_gradient(params, data, t, candidates, select, &mut acc);
    }
    acc
}

fn cell_pl_gradient(
    params: &ModelParams,
    data: &RatingDataset,
    t: &RatingTriple,
    candidates: &CandidatePairs,
    select: PairSelection,
    acc: &mut GradientAccumulator,
) {
    let (u, i, obs) = (t.user, t.item, t.rating);
    let k = params.k();
    let probs = params.local_conditional(data, u, i);
    // Per-slot weights p_k − 1{k = obs}: the gradient is the weighted sum of
    // sufficient statistics over slots.
    let mut weights: Vec<f64> = probs.probs().to_vec();
    weights[(obs - 1) as usize] -= 1.0;

    let slots = bias_stat_slots(params, u, i, &weights);
    acc.add_item_bias(i, &slots);
    acc.add_user_bias(u, &slots);

    if select.item_pairs && params.scope().item_edges_active() {
        for n in data.user_row(u) {
            if n.item == i || !candidates.item_admits(i, n.item) {
                continue;
            }
            let mut g = 0.0;
            for s in 0..k {
                let w = weights[s as usize];
                if w != 0.0 {
                    g += w * params.item_pair_stat(u, i, n.item, s + 1, n.rating);
                }
            }
            acc.add_item_pair(i, n.item, g);
        }
    }
    if select.user_pairs && params.scope().user_edges_active() {
        for n in data.item_col(i) {
            if n.user == u || !candidates.user_admits(u, n.user) {
                continue;
            }
            let mut g = 0.0;
            for s in 0..k {
                let w = weights[s as usize];
                if w != 0.0 {
                    g += w * params.user_pair_stat(i, u, n.user, s + 1, n.rating);
                }
            }
            acc.add_user_pair(u, n.user, g);
        }
    }
}

/// Weighted sum `Σ_k weights[k]·g(k)` of the bias sufficient statistics at
/// cell `(u, i)`, as one vector over bias slots. The same vector applies to
/// the item's and the user's bias (their statistics coincide).
pub(crate) fn bias_stat_slots(
    params: &ModelParams,
    u: u32,
    i: u32,
    weights: &[f64],
) -> Vec<f64> {
    let k = params.k() as usize;
    match params.parameterization() {
        Parameterization::LinearByLinear => weights.to_vec(),
        Parameterization::Gaussian => {
            // g(k) = z_k − μ; the μ part cancels because Σ weights = 0 for
            // both the PL (p − onehot) and CD (onehot − onehot) weightings.
            let mut acc = 0.0;
            for (s, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    acc += w * params.slot_value(u, i, (s + 1) as u8);
                }
            }
            vec![acc]
        }
        Parameterization::Smoothness => {
            let mut out = vec![0.0; k];
            for (s, &w) in weights.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                for (slot, o) in out.iter_mut().enumerate() {
                    *o -= w * (s as f64 - slot as f64).abs();
                }
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learning::CandidatePairs;
    use crate::model::{grid_dataset, ModelScope, Parameterization};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_block_loss_is_log_k_per_cell() {
        let d = grid_dataset(5, &[(1, 10, 3), (1, 11, 1), (1, 12, 5)]);
        let p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        let loss = pl_loss(&p, &d, Block::User(1));
        assert!((loss - 3.0 * 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn half_confidence_cell_costs_log_two() {
        let d = grid_dataset(2, &[(1, 10, 1)]);
        let p = ModelParams::new(Parameterization::LinearByLinear, ModelScope::Joint, &d, 5.0);
        let loss = pl_loss(&p, &d, Block::User(1));
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn empty_block_zero_gradient() {
        let d = grid_dataset(5, &[(1, 10, 3)]);
        let p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        let g = pl_gradient(&p, &d, Block::User(99), &CandidatePairs::unlimited(), PairSelection::all());
        assert!(g.is_empty());
    }

    fn fd_check(scheme: Parameterization, scope: ModelScope, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = grid_dataset(
            5,
            &[(1, 10, 5), (1, 11, 3), (1, 12, 2), (2, 10, 1), (2, 11, 3), (3, 11, 4), (3, 12, 1)],
        );
        let mut p = ModelParams::new(scheme, scope, &d, 5.0);
        for &i in d.item_ids() {
            for s in 0..p.bias_dim() {
                p.set_item_bias(i, s, rng.gen_range(-0.6..0.6));
            }
        }
        for &u in d.user_ids() {
            for s in 0..p.bias_dim() {
                p.set_user_bias(u, s, rng.gen_range(-0.6..0.6));
            }
        }
        p.set_item_edge(10, 11, rng.gen_range(-0.6..0.6));
        p.set_item_edge(11, 12, rng.gen_range(-0.6..0.6));
        p.set_user_edge(1, 2, rng.gen_range(-0.6..0.6));
        p.set_user_edge(1, 3, rng.gen_range(-0.6..0.6));

        let cands = CandidatePairs::unlimited();
        for block in [Block::User(1), Block::Item(11)] {
            let grad = pl_gradient(&p, &d, block, &cands, PairSelection::all());
            let h = 1e-5;
            let check = |setter: &mut dyn FnMut(&mut ModelParams, f64), base: f64, analytic: f64, what: &str| {
                let mut plus = p.clone();
                setter(&mut plus, base + h);
                let mut minus = p.clone();
                setter(&mut minus, base - h);
                let fd = (pl_loss(&plus, &d, block) - pl_loss(&minus, &d, block)) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs());
                assert!(
                    (analytic - fd).abs() < 1e-8 || (analytic - fd).abs() / denom < 1e-4,
                    "{scheme:?}/{scope:?}/{block:?} {what}: analytic {analytic} vs fd {fd}"
                );
            };
            for &i in d.item_ids() {
                for s in 0..p.bias_dim() {
                    let base = p.item_bias_slot(i, s);
                    check(&mut |m, v| m.set_item_bias(i, s, v), base, grad.item_bias(i, s), "item bias");
                }
            }
            for &u in d.user_ids() {
                for s in 0..p.bias_dim() {
                    let base = p.user_bias_slot(u, s);
                    check(&mut |m, v| m.set_user_bias(u, s, v), base, grad.user_bias(u, s), "user bias");
                }
            }
            for (i, j) in [(10u32, 11u32), (11, 12)] {
                if scope.item_edges_active() {
                    let base = p.item_edges().get(i, j);
                    check(&mut |m, v| m.set_item_edge(i, j, v), base, grad.item_pair(i, j), "item edge");
                }
            }
            for (u, v) in [(1u32, 2u32), (1, 3)] {
                if scope.user_edges_active() {
                    let base = p.user_edges().get(u, v);
                    check(&mut |m, v2| m.set_user_edge(u, v, v2), base, grad.user_pair(u, v), "user edge");
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut seed = 100;
        for scheme in [
            Parameterization::LinearByLinear,
            Parameterization::Gaussian,
            Parameterization::Smoothness,
        ] {
            for scope in [ModelScope::UserOnly, ModelScope::ItemOnly, ModelScope::Joint] {
                fd_check(scheme, scope, seed);
                seed += 1;
            }
        }
    }

    #[test]
    fn gaussian_closed_form_two_item_fixture() {
        // For the Gaussian scheme the per-cell PL gradient of an edge has the
        // closed form μ_i z_uj + μ_j z_ui − 2 z_ui z_uj, where μ is the mean
        // of the cell's discrete conditional (in normalized units) and z the
        // observed normalized values. Evaluate both sides independently on a
        // two-item row.
        let d = grid_dataset(5, &[(1, 10, 4), (1, 11, 2), (2, 10, 2), (2, 11, 3), (3, 10, 5)]);
        let mut p = ModelParams::new(Parameterization::Gaussian, ModelScope::UserOnly, &d, 5.0);
        p.set_item_bias(10, 0, 0.3);
        p.set_item_bias(11, 0, -0.2);
        p.set_user_bias(1, 0, 0.1);
        p.set_item_edge(10, 11, 0.4);

        let grad = pl_gradient(
            &p,
            &d,
            Block::User(1),
            &CandidatePairs::unlimited(),
            PairSelection::all(),
        );

        let z = |i: u32, r: u8| p.slot_value(1, i, r);
        let cond_mean = |i: u32| {
            let c = p.local_conditional(&d, 1, i);
            (1..=5u8).map(|r| c.prob(r) * z(i, r)).sum::<f64>()
        };
        let mu10 = cond_mean(10);
        let mu11 = cond_mean(11);
        let closed = mu10 * z(11, 2) + mu11 * z(10, 4) - 2.0 * z(10, 4) * z(11, 2);
        assert!(
            (grad.item_pair(10, 11) - closed).abs() < 1e-9,
            "pl gradient {} vs closed form {closed}",
            grad.item_pair(10, 11)
        );
    }

    #[test]
    fn candidate_restriction_drops_pairs() {
        let d = grid_dataset(5, &[(1, 10, 5), (1, 11, 3), (1, 12, 2), (2, 10, 1), (2, 12, 4)]);
        let mut p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        p.set_item_edge(10, 11, 0.2);
        // Popularity: item 10 has 2 ratings, 11 and 12 tie at 1 resp. 2... use
        // cap 1: only pairs touching the most popular item survive.
        let cands = CandidatePairs::new(&d, Some(1), None);
        let g = pl_gradient(&p, &d, Block::User(1), &cands, PairSelection::all());
        assert_ne!(g.item_pair(10, 11), 0.0);
        assert_ne!(g.item_pair(10, 12), 0.0);
        assert_eq!(g.item_pair(11, 12), 0.0, "neither endpoint is popular");
    }

    #[test]
    fn merge_and_scale() {
        let d = grid_dataset(5, &[(1, 10, 3), (1, 11, 4), (2, 10, 2), (2, 11, 2)]);
        let p = {
            let mut p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
            p.set_item_edge(10, 11, 0.3);
            p.set_user_edge(1, 2, -0.4);
            p
        };
        let cands = CandidatePairs::unlimited();
        let g1 = pl_gradient(&p, &d, Block::User(1), &cands, PairSelection::all());
        let g2 = pl_gradient(&p, &d, Block::User(2), &cands, PairSelection::all());
        let mut merged = g1.clone();
        merged.merge(&g2);
        merged.scale(0.5);
        let expect = 0.5 * (g1.item_pair(10, 11) + g2.item_pair(10, 11));
        assert!((merged.item_pair(10, 11) - expect).abs() < 1e-12);
        let expect_bias = 0.5 * (g1.item_bias(10, 2) + g2.item_bias(10, 2));
        assert!((merged.item_bias(10, 2) - expect_bias).abs() < 1e-12);
    }
}
