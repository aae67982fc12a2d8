//! Seeded synthetic rating data.
//!
//! Three generator families, all deterministic given their seed:
//!
//! * tiny random databases and random parameter fills, the raw material for
//!   oracle-style exactness checks (enumeration fits in memory only for a
//!   handful of cells);
//! * [`planted_item_graph`]: a medium dataset sampled by Gibbs from a
//!   smoothness model with a known sparse item graph, for structure-recovery
//!   experiments;
//! * [`surrogate_movielens`]: a desk-scale dataset with the broad shape of a
//!   1/10 sample of a large movie-ratings corpus (popularity-skewed items,
//!   uneven user activity, latent-factor taste structure), for end-to-end
//!   experiment ordering checks without shipping real data.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustc_hash::FxHashSet;

use crate::data::{RatingDataset, RatingTriple, SplitBundle};
use crate::learning::{gibbs_scan, Block};
use crate::model::{ModelParams, ModelScope, Parameterization};

/// A random database with at most `max_cells` ratings over a small grid.
/// User ids start at 1 and item ids at 10 so that id-mixing bugs surface.
pub fn random_small_database(rng: &mut impl Rng, max_cells: usize, k: u8) -> RatingDataset {
    assert!(max_cells >= 1);
    let n_users = rng.gen_range(1..=3u32);
    let n_items = rng.gen_range(1..=4u32);
    let mut slots: Vec<(u32, u32)> = (1..=n_users)
        .flat_map(|u| (10..10 + n_items).map(move |i| (u, i)))
        .collect();
    slots.shuffle(rng);
    let keep = rng.gen_range(1..=slots.len().min(max_cells));
    slots.truncate(keep);
    let triples = slots
        .into_iter()
        .enumerate()
        .map(|(ts, (user, item))| RatingTriple {
            user,
            item,
            rating: rng.gen_range(1..=k),
            timestamp: ts as i64,
        })
        .collect();
    RatingDataset::from_triples(k, triples).expect("generated cells are unique")
}

/// Zero-initialized parameters for `data`, then every bias slot and every
/// in-scope pair weight drawn uniformly from `[-amplitude, amplitude]`.
pub fn random_model(
    rng: &mut impl Rng,
    parameterization: Parameterization,
    scope: ModelScope,
    data: &RatingDataset,
    amplitude: f64,
) -> ModelParams {
    let mut params = ModelParams::new(parameterization, scope, data, 5.0);
    let dim = params.bias_dim();
    for &i in data.item_ids() {
        for slot in 0..dim {
            params.set_item_bias(i, slot, rng.gen_range(-amplitude..=amplitude));
        }
    }
    for &u in data.user_ids() {
        for slot in 0..dim {
            params.set_user_bias(u, slot, rng.gen_range(-amplitude..=amplitude));
        }
    }
    if scope.item_edges_active() {
        let items = data.item_ids();
        for (a, &i) in items.iter().enumerate() {
            for &j in &items[a + 1..] {
                params.set_item_edge(i, j, rng.gen_range(-amplitude..=amplitude));
            }
        }
    }
    if scope.user_edges_active() {
        let users = data.user_ids();
        for (a, &u) in users.iter().enumerate() {
            for &v in &users[a + 1..] {
                params.set_user_edge(u, v, rng.gen_range(-amplitude..=amplitude));
            }
        }
    }
    params
}

/// Number of users in the planted-graph dataset.
pub const PLANTED_USERS: u32 = 200;
/// Number of items in the planted-graph dataset.
pub const PLANTED_ITEMS: u32 = 100;
/// Planted item-item weight (smoothness scheme, so positive weights attract
/// co-rated cells toward equal ratings).
pub const PLANTED_WEIGHT: f64 = 2.2;

/// Sample a 200-user × 100-item database from a smoothness model whose item
/// graph is a known random set of 150 edges, all with weight
/// [`PLANTED_WEIGHT`]. Every user rates 40 random items (so an average pair
/// is co-rated by ~32 users); users are independent given the model, and each
/// user's cells are equilibrated by 40 systematic Gibbs sweeps from a uniform
/// start. Returns the database and the planted edges (`a < b`, sorted).
///
/// Recovery scores computed against the returned edge list understate the
/// truth slightly: pairs joined through a shared planted neighbor correlate
/// too, so a few "false positives" are real marginal dependencies.
pub fn planted_item_graph(seed: u64) -> (RatingDataset, Vec<(u32, u32)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 5u8;

    // Random sparse graph: 150 distinct unordered pairs.
    let mut planted: FxHashSet<(u32, u32)> = FxHashSet::default();
    while planted.len() < 150 {
        let a = rng.gen_range(0..PLANTED_ITEMS);
        let b = rng.gen_range(0..PLANTED_ITEMS);
        if a != b {
            planted.insert((a.min(b), a.max(b)));
        }
    }
    let mut edges: Vec<(u32, u32)> = planted.into_iter().collect();
    edges.sort_unstable();

    // Support: 40 uniformly chosen items per user, uniform initial ratings.
    let mut triples = Vec::new();
    let mut ts = 0i64;
    for u in 0..PLANTED_USERS {
        let mut items: Vec<u32> = (0..PLANTED_ITEMS).collect();
        items.shuffle(&mut rng);
        items.truncate(40);
        items.sort_unstable();
        for i in items {
            triples.push(RatingTriple { user: u, item: i, rating: rng.gen_range(1..=k), timestamp: ts });
            ts += 1;
        }
    }
    let mut data = RatingDataset::from_triples(k, triples).expect("unique cells");

    // The generating model: zero biases, planted item edges only.
    let mut model = ModelParams::new(Parameterization::Smoothness, ModelScope::UserOnly, &data, 5.0);
    for &(a, b) in &edges {
        model.set_item_edge(a, b, PLANTED_WEIGHT);
    }

    for _ in 0..40 {
        let mut next: Vec<RatingTriple> = Vec::with_capacity(data.len());
        for &u in data.user_ids() {
            let sample = gibbs_scan(&model, &data, Block::User(u), 1, &mut rng);
            for (t, &r) in Block::User(u).cells(&data).zip(sample.iter()) {
                next.push(RatingTriple { rating: r, ..*t });
            }
        }
        data = RatingDataset::from_triples(k, next).expect("support unchanged");
    }
    (data, edges)
}

/// Number of users in the movie-ratings surrogate.
pub const SURROGATE_USERS: u32 = 560;
/// Number of items in the movie-ratings surrogate.
pub const SURROGATE_ITEMS: u32 = 1200;

/// A desk-scale movie-ratings lookalike: ~560 users × ~1200 items, every user
/// with at least 30 ratings (median near 90), Zipf-skewed item popularity,
/// and ratings drawn from a clamped rounded latent-factor model
/// `3.6 + b_u + a_i + A_i·B_u + ε`. Global mean lands near 3.6 with standard
/// deviation near 1.
pub fn surrogate_movielens(seed: u64) -> RatingDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = 5u8;
    let latent = 6usize;
    let user_bias = Normal::new(0.0, 0.3).unwrap();
    let item_bias = Normal::new(0.0, 0.55).unwrap();
    let factor = Normal::new(0.0, 0.5).unwrap();
    let noise = Normal::new(0.0, 0.55).unwrap();

    let item_weight: Vec<f64> =
        (0..SURROGATE_ITEMS).map(|i| 1.0 / (i as f64 + 1.0).powf(0.8)).collect();
    let a: Vec<f64> = (0..SURROGATE_ITEMS).map(|_| item_bias.sample(&mut rng)).collect();
    let item_factors: Vec<Vec<f64>> = (0..SURROGATE_ITEMS)
        .map(|_| (0..latent).map(|_| factor.sample(&mut rng)).collect())
        .collect();

    let mut triples = Vec::new();
    let mut ts = 0i64;
    for u in 0..SURROGATE_USERS {
        let b = user_bias.sample(&mut rng);
        let user_factors: Vec<f64> = (0..latent).map(|_| factor.sample(&mut rng)).collect();
        let count = (30.0 + -80.0 * rng.gen::<f64>().max(1e-12).ln()).min(400.0) as usize;
        // Weighted sampling without replacement (largest random keys win).
        let mut keyed: Vec<(f64, u32)> = (0..SURROGATE_ITEMS)
            .map(|i| (rng.gen::<f64>().powf(1.0 / item_weight[i as usize]), i))
            .collect();
        keyed.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap());
        keyed.truncate(count);
        for &(_, i) in &keyed {
            let dot: f64 = item_factors[i as usize]
                .iter()
                .zip(&user_factors)
                .map(|(x, y)| x * y)
                .sum();
            let raw = 3.6 + b + a[i as usize] + dot + noise.sample(&mut rng);
            let rating = raw.round().clamp(1.0, k as f64) as u8;
            triples.push(RatingTriple { user: u, item: i, rating, timestamp: ts });
            ts += 1;
        }
    }
    RatingDataset::from_triples(k, triples).expect("unique cells")
}

/// The small-training-data protocol: keep `q` random train ratings per user,
/// leaving validation and test untouched.
pub fn restrict_train(split: &SplitBundle, q: usize, seed: u64) -> SplitBundle {
    SplitBundle {
        train: split.train.keep_per_user(q, seed),
        validation: split.validation.clone(),
        test: split.test.clone(),
    }
}
