//! Exact enumeration over all K^n assignments of a tiny model's cells.
//!
//! This is the test oracle: it spells out P(x) = exp(−E(x))/Z by brute force,
//! reusing only the potential functions, so the local-conditional and Gibbs
//! machinery can be checked against it. Refuses models with more than 10
//! cells.

use super::ModelParams;
use crate::data::RatingDataset;

/// Hard cap on enumerable cells; K^n stays tractable below it.
pub const MAX_CELLS: usize = 10;

/// Fully enumerated joint distribution of a tiny model.
///
/// Cells are indexed in `data.triples()` order; an assignment is one rating
/// value (1-based) per cell in that order.
pub struct EnumeratedModel {
    k: u8,
    cells: Vec<(u32, u32)>,
    /// log φ tables: `singleton[c][k-1]`.
    singleton: Vec<Vec<f64>>,
    /// Pairwise couplings: cell indices plus the log ψ table `[k1-1][k2-1]`.
    pairs: Vec<(usize, usize, Vec<Vec<f64>>)>,
    /// −E(x) for every assignment, indexed by Σ (x_c − 1)·K^c.
    log_weights: Vec<f64>,
    log_z: f64,
}

impl EnumeratedModel {
    /// Enumerate the joint distribution over the filled cells of `data`.
    ///
    /// # Panics
    /// If `data` has more than [`MAX_CELLS`] cells.
    pub fn build(params: &ModelParams, data: &RatingDataset) -> Self {
        let n = data.len();
        assert!(
            n <= MAX_CELLS,
            "refusing to enumerate {n} cells (limit {MAX_CELLS})"
        );
        let k = params.k();
        let kk = k as usize;
        let cells: Vec<(u32, u32)> = data.triples().iter().map(|t| (t.user, t.item)).collect();

        let singleton: Vec<Vec<f64>> = cells
            .iter()
            .map(|&(u, i)| (1..=k).map(|r| params.log_singleton(u, i, r)).collect())
            .collect();

        let mut pairs = Vec::new();
        for a in 0..n {
            for b in (a + 1)..n {
                let (ua, ia) = cells[a];
                let (ub, ib) = cells[b];
                if ua == ub && params.scope().item_edges_active() {
                    let omega = params.item_edges().get(ia, ib);
                    if omega != 0.0 {
                        let table: Vec<Vec<f64>> = (1..=k)
                            .map(|k1| {
                                (1..=k)
                                    .map(|k2| {
                                        params.log_pairwise_item_with(omega, ua, ia, ib, k1, k2)
                                    })
                                    .collect()
                            })
                            .collect();
                        pairs.push((a, b, table));
                    }
                }
                if ia == ib && params.scope().user_edges_active() {
                    let w = params.user_edges().get(ua, ub);
                    if w != 0.0 {
                        let table: Vec<Vec<f64>> = (1..=k)
                            .map(|k1| {
                                (1..=k)
                                    .map(|k2| {
                                        params.log_pairwise_user_with(w, ia, ua, ub, k1, k2)
                                    })
                                    .collect()
                            })
                            .collect();
                        pairs.push((a, b, table));
                    }
                }
            }
        }

        let total = kk.checked_pow(n as u32).expect("assignment space overflow");
        let mut log_weights = vec![0.0f64; total];
        let mut assignment = vec![0usize; n]; // 0-based slots
        for lw in log_weights.iter_mut() {
            let mut acc = 0.0;
            for (c, &slot) in assignment.iter().enumerate() {
                acc += singleton[c][slot];
            }
            for (a, b, table) in &pairs {
                acc += table[assignment[*a]][assignment[*b]];
            }
            *lw = acc; // −E(x): sum of log-potentials
            // Odometer increment, cell 0 fastest.
            for slot in assignment.iter_mut() {
                *slot += 1;
                if *slot < kk {
                    break;
                }
                *slot = 0;
            }
        }

        let log_z = log_sum_exp(&log_weights);
        EnumeratedModel { k, cells, singleton, pairs, log_weights, log_z }
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn cells(&self) -> &[(u32, u32)] {
        &self.cells
    }

    /// log of the partition function Z.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    fn index_of(&self, assignment: &[u8]) -> usize {
        assert_eq!(assignment.len(), self.cells.len());
        let kk = self.k as usize;
        let mut idx = 0usize;
        let mut stride = 1usize;
        for &r in assignment {
            assert!(r >= 1 && r <= self.k, "rating {r} out of range");
            idx += (r - 1) as usize * stride;
            stride *= kk;
        }
        idx
    }

    /// Exact probability of one complete assignment.
    pub fn probability(&self, assignment: &[u8]) -> f64 {
        (self.log_weights[self.index_of(assignment)] - self.log_z).exp()
    }

    /// Energy E(x) of one complete assignment (negated log weight).
    pub fn energy(&self, assignment: &[u8]) -> f64 {
        -self.log_weights[self.index_of(assignment)]
    }

    /// Marginal distribution of one cell.
    pub fn marginal(&self, cell: usize) -> Vec<f64> {
        let kk = self.k as usize;
        let stride = kk.pow(cell as u32);
        let mut out = vec![0.0f64; kk];
        for (idx, lw) in self.log_weights.iter().enumerate() {
            out[(idx / stride) % kk] += (lw - self.log_z).exp();
        }
        out
    }

    /// Conditional distribution of one cell given the other cells' values in
    /// `assignment` (the entry at `cell` itself is ignored).
    pub fn conditional(&self, cell: usize, assignment: &[u8]) -> Vec<f64> {
        let kk = self.k as usize;
        let stride = kk.pow(cell as u32);
        let mut probe = assignment.to_vec();
        probe[cell] = 1;
        let base = self.index_of(&probe);
        let lws: Vec<f64> = (0..kk).map(|s| self.log_weights[base + s * stride]).collect();
        let log_norm = log_sum_exp(&lws);
        lws.iter().map(|lw| (lw - log_norm).exp()).collect()
    }

    /// Conditional of one cell given the *observed* data values of all other
    /// cells — the quantity `local_conditional` computes without enumeration.
    pub fn conditional_at_data(&self, cell: usize, data: &RatingDataset) -> Vec<f64> {
        let assignment: Vec<u8> = data.triples().iter().map(|t| t.rating).collect();
        self.conditional(cell, &assignment)
    }

    /// Expectation of an arbitrary assignment functional under the joint.
    pub fn expectation(&self, mut f: impl FnMut(&[u8]) -> f64) -> f64 {
        let kk = self.k as usize;
        let n = self.cells.len();
        let mut assignment = vec![1u8; n];
        let mut acc = 0.0;
        for lw in &self.log_weights {
            acc += (lw - self.log_z).exp() * f(&assignment);
            for r in assignment.iter_mut() {
                *r += 1;
                if *r as usize <= kk {
                    break;
                }
                *r = 1;
            }
        }
        acc
    }

    /// Recompute −E(x) from the tables (used internally and by sanity tests).
    pub fn log_weight(&self, assignment: &[u8]) -> f64 {
        let mut acc = 0.0;
        for (c, &r) in assignment.iter().enumerate() {
            acc += self.singleton[c][(r - 1) as usize];
        }
        for (a, b, table) in &self.pairs {
            acc += table[(assignment[*a] - 1) as usize][(assignment[*b] - 1) as usize];
        }
        acc
    }
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
