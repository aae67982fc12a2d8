//! Contrastive divergence: block Gibbs sampling plus sampled-statistic
//! gradients. A CD gradient is `g(sample) − g(data)` where `g` collects the
//! sufficient statistics of the block's conditional distribution given the
//! out-of-block frame, and the sample comes from a short Gibbs chain started
//! at the data.

use rand::Rng;
use rustc_hash::FxHashMap;

use crate::data::{RatingDataset, RatingTriple};
use crate::learning::gradient::{bias_stat_slots, GradientAccumulator, PairSelection};
use crate::learning::{Block, CandidatePairs};
use crate::model::{ModelParams, PredictiveDistribution};

/// Run `c` systematic Gibbs scans over the block's cells, holding every
/// out-of-block cell clamped at its observed rating. The chain starts at the
/// data. Returns the final assignment, aligned with the block's cell order.
pub fn gibbs_scan(
    params: &ModelParams,
    data: &RatingDataset,
    block: Block,
    c: usize,
    rng: &mut impl Rng,
) -> Vec<u8> {
    assert!(c >= 1, "at least one Gibbs scan is required");
    let cells: Vec<&RatingTriple> = block.cells(data).collect();
    // In-block state, keyed by the id that varies along the block.
    let mut current: FxHashMap<u32, u8> = cells
        .iter()
        .map(|t| match block {
            Block::User(_) => (t.item, t.rating),
            Block::Item(_) => (t.user, t.rating),
        })
        .collect();
    for _ in 0..c {
        for t in &cells {
            let energies = match block {
                Block::User(u) => {
                    params.local_energies_overlaid(data, u, t.item, &mut |uu, ii| {
                        if uu == u {
                            current.get(&ii).copied()
                        } else {
                            None
                        }
                    })
                }
                Block::Item(i) => {
                    params.local_energies_overlaid(data, t.user, i, &mut |uu, ii| {
                        if ii == i {
                            current.get(&uu).copied()
                        } else {
                            None
                        }
                    })
                }
            };
            let probs = PredictiveDistribution::from_energies(&energies);
            let drawn = sample_slot(probs.probs(), rng);
            let key = match block {
                Block::User(_) => t.item,
                Block::Item(_) => t.user,
            };
            current.insert(key, drawn);
        }
    }
    cells
        .iter()
        .map(|t| {
            let key = match block {
                Block::User(_) => t.item,
                Block::Item(_) => t.user,
            };
            current[&key]
        })
        .collect()
}

fn sample_slot(probs: &[f64], rng: &mut impl Rng) -> u8 {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (s, &p) in probs.iter().enumerate() {
        acc += p;
        if x < acc {
            return (s + 1) as u8;
        }
    }
    probs.len() as u8
}

/// Statistic difference `g(sample) − g(data)` for a block assignment
/// (`sample` aligned with the block's cell order). In-block pairs contribute
/// once with both endpoints taken from the assignment; pairs reaching an
/// out-of-block cell use its clamped data value.
pub fn cd_stat_difference(
    params: &ModelParams,
    data: &RatingDataset,
    block: Block,
    sample: &[u8],
    candidates: &CandidatePairs,
    select: PairSelection,
) -> GradientAccumulator {
    let cells: Vec<&RatingTriple> = block.cells(data).collect();
    assert_eq!(cells.len(), sample.len(), "sample must cover the block");
    let k = params.k() as usize;
    let mut acc = GradientAccumulator::new();

    for (t, &s) in cells.iter().zip(sample) {
        if s == t.rating {
            continue;
        }
        let mut weights = vec![0.0; k];
        weights[(s - 1) as usize] += 1.0;
        weights[(t.rating - 1) as usize] -= 1.0;
        let slots = bias_stat_slots(params, t.user, t.item, &weights);
        acc.add_item_bias(t.item, &slots);
        acc.add_user_bias(t.user, &slots);
    }

    let item_pairs = select.item_pairs && params.scope().item_edges_active();
    let user_pairs = select.user_pairs && params.scope().user_edges_active();
    match block {
        Block::User(u) => {
            if item_pairs {
                for a in 0..cells.len() {
                    for b in a + 1..cells.len() {
                        let (ta, tb) = (cells[a], cells[b]);
                        if !candidates.item_admits(ta.item, tb.item) {
                            continue;
                        }
                        let s_stat =
                            params.item_pair_stat(u, ta.item, tb.item, sample[a], sample[b]);
                        let d_stat = params.item_pair_stat(u, ta.item, tb.item, ta.rating, tb.rating);
                        if s_stat != d_stat {
                            acc.add_item_pair(ta.item, tb.item, s_stat - d_stat);
                        }
                    }
                }
            }
            if user_pairs {
                for (idx, t) in cells.iter().enumerate() {
                    if sample[idx] == t.rating {
                        continue;
                    }
                    for n in data.item_col(t.item) {
                        if n.user == u || !candidates.user_admits(u, n.user) {
                            continue;
                        }
                        let s_stat = params.user_pair_stat(t.item, u, n.user, sample[idx], n.rating);
                        let d_stat = params.user_pair_stat(t.item, u, n.user, t.rating, n.rating);
                        acc.add_user_pair(u, n.user, s_stat - d_stat);
                    }
                }
            }
        }
        Block::Item(i) => {
            if user_pairs {
                for a in 0..cells.len() {
                    for b in a + 1..cells.len() {
                        let (ta, tb) = (cells[a], cells[b]);
                        if !candidates.user_admits(ta.user, tb.user) {
                            continue;
                        }
                        let s_stat = params.user_pair_stat(i, ta.user, tb.user, sample[a], sample[b]);
                        let d_stat = params.user_pair_stat(i, ta.user, tb.user, ta.rating, tb.rating);
                        if s_stat != d_stat {
                            acc.add_user_pair(ta.user, tb.user, s_stat - d_stat);
                        }
                    }
                }
            }
            if item_pairs {
                for (idx, t) in cells.iter().enumerate() {
                    if sample[idx] == t.rating {
                        continue;
                    }
                    for n in data.user_row(t.user) {
                        if n.item == i || !candidates.item_admits(i, n.item) {
                            continue;
                        }
                        let s_stat = params.item_pair_stat(t.user, i, n.item, sample[idx], n.rating);
                        let d_stat = params.item_pair_stat(t.user, i, n.item, t.rating, n.rating);
                        acc.add_item_pair(i, n.item, s_stat - d_stat);
                    }
                }
            }
        }
    }
    acc
}

/// CD gradient of one block: Gibbs-sample the block (chain started at the
/// data, `c` scans) and return the statistic difference.
pub fn cd_gradient(
    params: &ModelParams,
    data: &RatingDataset,
    block: Block,
    c: usize,
    rng: &mut impl Rng,
    candidates: &CandidatePairs,
    select: PairSelection,
) -> GradientAccumulator {
    let sample = gibbs_scan(params, data, block, c, rng);
    cd_stat_difference(params, data, block, &sample, candidates, select)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::enumerate::EnumeratedModel;
    use crate::model::{grid_dataset, ModelParams, ModelScope, PairMap, Parameterization};
    use crate::normalize::NormalizationStats;
    use crate::learning::gradient::{pl_gradient, pl_loss};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rustc_hash::FxHashMap;

    #[test]
    #[should_panic(expected = "at least one Gibbs scan")]
    fn zero_scans_are_rejected() {
        let d = grid_dataset(5, &[(1, 10, 3)]);
        let p = ModelParams::new(Parameterization::Smoothness, ModelScope::UserOnly, &d, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let _ = gibbs_scan(&p, &d, Block::User(1), 0, &mut rng);
    }

    #[test]
    fn zero_model_resamples_uniformly() {
        let d = grid_dataset(5, &[(1, 10, 3)]);
        let p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 5];
        let draws = 6000;
        for _ in 0..draws {
            let s = gibbs_scan(&p, &d, Block::User(1), 1, &mut rng);
            counts[(s[0] - 1) as usize] += 1;
        }
        for (slot, &c) in counts.iter().enumerate() {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() < 0.05, "slot {} frequency {freq}", slot + 1);
        }
    }

    #[test]
    fn one_scan_matches_manual_resampling_of_bias_only_model() {
        // Without pairwise terms the cells are conditionally independent, so
        // one systematic scan must equal drawing each cell from its local
        // conditional in block order with the same RNG.
        let d = grid_dataset(5, &[(1, 10, 3), (1, 11, 5), (1, 12, 1)]);
        let mut p = ModelParams::new(Parameterization::Smoothness, ModelScope::UserOnly, &d, 5.0);
        for (idx, &i) in d.item_ids().iter().enumerate() {
            for s in 0..p.bias_dim() {
                p.set_item_bias(i, s, 0.1 * (idx as f64 + 1.0) * (s as f64 - 2.0));
            }
        }
        let mut rng_a = ChaCha8Rng::seed_from_u64(23);
        let got = gibbs_scan(&p, &d, Block::User(1), 1, &mut rng_a);

        let mut rng_b = ChaCha8Rng::seed_from_u64(23);
        let want: Vec<u8> = d
            .user_row(1)
            .map(|t| {
                let c = p.local_conditional(&d, 1, t.item);
                super::sample_slot(c.probs(), &mut rng_b)
            })
            .collect();
        assert_eq!(got, want);
    }

    #[test]
    fn sample_equal_to_data_has_zero_statistics() {
        let d = grid_dataset(5, &[(1, 10, 4), (1, 11, 2), (2, 10, 3)]);
        let mut p = ModelParams::new(Parameterization::Smoothness, ModelScope::Joint, &d, 5.0);
        p.set_item_edge(10, 11, 0.4);
        p.set_user_edge(1, 2, -0.3);
        let sample: Vec<u8> = d.user_row(1).map(|t| t.rating).collect();
        let acc = cd_stat_difference(
            &p,
            &d,
            Block::User(1),
            &sample,
            &CandidatePairs::unlimited(),
            PairSelection::all(),
        );
        assert!(acc.is_empty() || {
            let zeroish = |v: f64| v == 0.0;
            acc.item_pair.values().all(|&v| zeroish(v))
                && acc.user_pair.values().all(|&v| zeroish(v))
                && acc.item_bias.values().all(|s| s.iter().all(|&v| zeroish(v)))
                && acc.user_bias.values().all(|s| s.iter().all(|&v| zeroish(v)))
        });
    }

    /// Normalization with zero means and unit deviations everywhere, so the
    /// Gaussian slot value of rating r is exactly r.
    fn identity_model(d: &RatingDataset) -> ModelParams {
        let norm = NormalizationStats::from_parts(
            1.0,
            0.0,
            1.0,
            d.user_ids().iter().map(|&u| (u, 0.0, 1.0)),
            d.item_ids().iter().map(|&i| (i, 0.0, 1.0)),
        );
        ModelParams::from_parts(
            d.k(),
            Parameterization::Gaussian,
            ModelScope::UserOnly,
            FxHashMap::default(),
            FxHashMap::default(),
            PairMap::new(),
            PairMap::new(),
            d.item_ids().iter().map(|&i| (i, 0.0)).collect(),
            d.user_ids().iter().map(|&u| (u, 0.0)).collect(),
            0.0,
            norm,
        )
    }

    #[test]
    fn gaussian_pair_statistic_difference_arithmetic() {
        let d = grid_dataset(5, &[(1, 10, 4), (1, 11, 5)]);
        let p = identity_model(&d);
        assert_eq!(p.slot_value(1, 10, 3), 3.0);
        let sample = vec![3u8, 5u8];
        let acc = cd_stat_difference(
            &p,
            &d,
            Block::User(1),
            &sample,
            &CandidatePairs::unlimited(),
            PairSelection::all(),
        );
        // Pair statistic moves from 4·5 = 20 to 3·5 = 15.
        assert!((acc.item_pair(10, 11) + 5.0).abs() < 1e-12, "got {}", acc.item_pair(10, 11));
        // Bias statistic of the changed cell moves by z(3) − z(4) = −1.
        assert!((acc.item_bias(10, 0) + 1.0).abs() < 1e-12);
        assert!((acc.user_bias(1, 0) + 1.0).abs() < 1e-12);
        assert_eq!(acc.item_bias(11, 0), 0.0);
    }

    /// Expected CD accumulator under the exact block conditional: enumerate
    /// all block assignments, weight each statistic difference by its
    /// probability.
    fn expected_cd(
        params: &ModelParams,
        data: &RatingDataset,
        block: Block,
        em: &EnumeratedModel,
    ) -> GradientAccumulator {
        let n = em.cells().len();
        let kk = params.k() as usize;
        let mut acc = GradientAccumulator::new();
        let mut assignment = vec![1u8; n];
        loop {
            let p = em.probability(&assignment);
            if p > 0.0 {
                let mut one = cd_stat_difference(
                    params,
                    data,
                    block,
                    &assignment,
                    &CandidatePairs::unlimited(),
                    PairSelection::all(),
                );
                one.scale(p);
                acc.merge(&one);
            }
            let mut pos = 0;
            loop {
                if pos == n {
                    return acc;
                }
                if (assignment[pos] as usize) < kk {
                    assignment[pos] += 1;
                    break;
                }
                assignment[pos] = 1;
                pos += 1;
            }
        }
    }

    #[test]
    fn exact_cd_expectation_matches_finite_differences() {
        // Single-user datasets under UserOnly scope: the block conditional is
        // the full joint, so E[g] − g(data) must equal the gradient of
        // E(data) + log Z. Cell order matches enumeration order because the
        // fixture's timestamps follow insertion order.
        for (scheme, seed) in [
            (Parameterization::Smoothness, 3u64),
            (Parameterization::Gaussian, 4),
            (Parameterization::LinearByLinear, 5),
        ] {
            let d = grid_dataset(3, &[(1, 10, 2), (1, 11, 3), (1, 12, 1)]);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut p = ModelParams::new(scheme, ModelScope::UserOnly, &d, 5.0);
            use rand::Rng as _;
            for &i in d.item_ids() {
                for s in 0..p.bias_dim() {
                    p.set_item_bias(i, s, rng.gen_range(-0.5..0.5));
                }
            }
            for s in 0..p.bias_dim() {
                p.set_user_bias(1, s, rng.gen_range(-0.5..0.5));
            }
            p.set_item_edge(10, 11, rng.gen_range(-0.5..0.5));
            p.set_item_edge(11, 12, rng.gen_range(-0.5..0.5));

            let em = EnumeratedModel::build(&p, &d);
            let grad = expected_cd(&p, &d, Block::User(1), &em);
            let data_assignment: Vec<u8> = d.triples().iter().map(|t| t.rating).collect();
            let h = 1e-5;
            let check = |setter: &mut dyn FnMut(&mut ModelParams, f64), base: f64, analytic: f64, what: &str| {
                let free = |m: &ModelParams| {
                    let e = EnumeratedModel::build(m, &d);
                    e.energy(&data_assignment) + e.log_z()
                };
                let mut plus = p.clone();
                setter(&mut plus, base + h);
                let mut minus = p.clone();
                setter(&mut minus, base - h);
                let fd = (free(&plus) - free(&minus)) / (2.0 * h);
                let denom = analytic.abs().max(fd.abs());
                assert!(
                    (analytic - fd).abs() < 1e-8 || (analytic - fd).abs() / denom < 1e-4,
                    "{scheme:?} {what}: analytic {analytic} vs fd {fd}"
                );
            };
            for &i in d.item_ids() {
                for s in 0..p.bias_dim() {
                    let base = p.item_bias_slot(i, s);
                    check(&mut |m, v| m.set_item_bias(i, s, v), base, grad.item_bias(i, s), "item bias");
                }
            }
            for s in 0..p.bias_dim() {
                let base = p.user_bias_slot(1, s);
                check(&mut |m, v| m.set_user_bias(1, s, v), base, grad.user_bias(1, s), "user bias");
            }
            for (i, j) in [(10u32, 11u32), (11, 12), (10, 12)] {
                let base = p.item_edges().get(i, j);
                check(&mut |m, v| m.set_item_edge(i, j, v), base, grad.item_pair(i, j), "item edge");
            }
        }
    }

    #[test]
    fn single_cell_block_expected_cd_equals_pl_gradient() {
        // A one-cell block's conditional is the PL conditional itself, so the
        // expected CD statistics equal the PL gradient — including the
        // cross-pair terms that reach clamped cells.
        let d = grid_dataset(5, &[(1, 10, 4), (2, 10, 2), (3, 10, 5)]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        use rand::Rng as _;
        let mut p = ModelParams::new(Parameterization::Smoothness, ModelScope::ItemOnly, &d, 5.0);
        for &u in d.user_ids() {
            for s in 0..p.bias_dim() {
                p.set_user_bias(u, s, rng.gen_range(-0.4..0.4));
            }
        }
        p.set_user_edge(1, 2, 0.35);
        p.set_user_edge(1, 3, -0.2);

        // Build the one-cell "block": user 1's row.
        let block = Block::User(1);
        let conditional = p.local_conditional(&d, 1, 10);
        let mut expected = GradientAccumulator::new();
        for r in 1..=5u8 {
            let mut one = cd_stat_difference(
                &p,
                &d,
                block,
                &[r],
                &CandidatePairs::unlimited(),
                PairSelection::all(),
            );
            one.scale(conditional.prob(r));
            expected.merge(&one);
        }
        let pl = pl_gradient(&p, &d, block, &CandidatePairs::unlimited(), PairSelection::all());
        for (u, v) in [(1u32, 2u32), (1, 3)] {
            assert!(
                (expected.user_pair(u, v) - pl.user_pair(u, v)).abs() < 1e-12,
                "w({u},{v}): {} vs {}",
                expected.user_pair(u, v),
                pl.user_pair(u, v)
            );
        }
        for s in 0..p.bias_dim() {
            assert!((expected.user_bias(1, s) - pl.user_bias(1, s)).abs() < 1e-12);
            assert!((expected.item_bias(10, s) - pl.item_bias(10, s)).abs() < 1e-12);
        }
    }

    #[test]
    fn cd_moves_loss_downhill_on_average() {
        // Stochastic sanity check: averaged over many seeds, a CD step from
        // zero parameters should not increase the block PL on a structured
        // row (the first CD step equals the PL gradient in expectation at the
        // data-started chain's first transition).
        let d = grid_dataset(
            5,
            &[(1, 10, 5), (1, 11, 5), (1, 12, 1), (2, 10, 4), (2, 11, 5), (2, 12, 1)],
        );
        let p = ModelParams::new(Parameterization::Smoothness, ModelScope::UserOnly, &d, 5.0);
        let cands = CandidatePairs::unlimited();
        let mut mean = GradientAccumulator::new();
        let runs = 200;
        for seed in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = cd_gradient(&p, &d, Block::User(1), 1, &mut rng, &cands, PairSelection::all());
            mean.merge(&g);
        }
        mean.scale(1.0 / runs as f64);
        let before = pl_loss(&p, &d, Block::User(1));
        let mut stepped = p.clone();
        let config = crate::learning::TrainConfig {
            eta_bias: 0.05,
            eta_pair: 0.05,
            lambda1: 0.0,
            lambda2: 0.0,
            ..crate::learning::TrainConfig::default()
        };
        crate::learning::apply_update(&mut stepped, &mean, &config).unwrap();
        let after = pl_loss(&stepped, &d, Block::User(1));
        assert!(after < before, "averaged CD step should descend: {before} -> {after}");
    }
}
