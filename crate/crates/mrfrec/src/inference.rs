//! Prediction with confidence, likelihood scoring, energy-based ranking, and
//! entropy novelty. Everything here is read-only over `(params, data)` and
//! safe to call concurrently.

use std::io::{self, Write};
use std::str::FromStr;

use crate::data::RatingDataset;
use crate::model::{ModelParams, PredictiveDistribution};

/// A calibrated point prediction for one cell.
#[derive(Debug, Clone)]
pub struct Prediction {
    /// Most probable rating; ties break toward the smallest slot.
    pub map_rating: u8,
    /// Σ k·p_k, always inside `[1, K]`.
    pub expected_rating: f64,
    /// Probability mass at `map_rating`.
    pub confidence: f64,
    pub distribution: PredictiveDistribution,
}

/// Predict `(u, i)` from the local conditional given the observed neighbors
/// in `data` (normally the training set). Unknown users or items degrade to
/// the bias-only (possibly uniform) conditional.
pub fn predict(params: &ModelParams, data: &RatingDataset, u: u32, i: u32) -> Prediction {
    let distribution = params.local_conditional(data, u, i);
    let map_rating = distribution.map_rating();
    Prediction {
        map_rating,
        expected_rating: distribution.expected_rating(),
        confidence: distribution.prob(map_rating),
        distribution,
    }
}

/// Log-probability of the observed rating `r` under the cell's conditional.
/// `−∞` when the model puts no mass on `r` (possible only with extreme
/// parameters).
pub fn score_loglik(params: &ModelParams, data: &RatingDataset, u: u32, i: u32, r: u8) -> f64 {
    assert!(
        (1..=params.k()).contains(&r),
        "rating {r} outside 1..={}",
        params.k()
    );
    params.local_conditional(data, u, i).prob(r).ln()
}

/// Entropy −Σ p log p of the cell's conditional; 0 for a certain prediction,
/// log K for an uninformative one.
pub fn novelty_entropy(params: &ModelParams, data: &RatingDataset, u: u32, i: u32) -> f64 {
    params.local_conditional(data, u, i).entropy()
}

/// Ranking criterion for candidate items.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankCriterion {
    /// Expected negated local energy: Σ_k p_k · (−E(u,j,k)).
    Energy,
    /// Free energy: Σ_k exp(−E(u,j,k)).
    FreeEnergy,
}

impl std::fmt::Display for RankCriterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

impl RankCriterion {
    pub fn token(self) -> &'static str {
        match self {
            RankCriterion::Energy => "energy",
            RankCriterion::FreeEnergy => "free_energy",
        }
    }
}

impl FromStr for RankCriterion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "energy" => Ok(RankCriterion::Energy),
            "free_energy" | "free-energy" => Ok(RankCriterion::FreeEnergy),
            other => Err(format!(
                "unknown ranking criterion `{other}` (expected energy or free_energy)"
            )),
        }
    }
}

/// Rank `candidates` for user `u` by expected negated local energy. Returns
/// `(item, score)` in descending score order, ties broken by ascending id.
pub fn rank_energy(
    params: &ModelParams,
    data: &RatingDataset,
    u: u32,
    candidates: &[u32],
) -> Vec<(u32, f64)> {
    rank_by(candidates, |&j| {
        let energies = params.local_energies(data, u, j);
        let probs = PredictiveDistribution::from_energies(&energies);
        probs
            .probs()
            .iter()
            .zip(&energies)
            .map(|(&p, &e)| p * -e)
            .sum()
    })
}

/// Rank `candidates` for user `u` by free energy Σ_k exp(−E). Scores are
/// strictly positive; with zero parameters every score equals K.
pub fn rank_free_energy(
    params: &ModelParams,
    data: &RatingDataset,
    u: u32,
    candidates: &[u32],
) -> Vec<(u32, f64)> {
    rank_by(candidates, |&j| {
        params
            .local_energies(data, u, j)
            .iter()
            .map(|&e| (-e).exp())
            .sum()
    })
}

/// Score with `criterion`; convenience dispatch for the CLI and examples.
pub fn rank(
    params: &ModelParams,
    data: &RatingDataset,
    u: u32,
    candidates: &[u32],
    criterion: RankCriterion,
) -> Vec<(u32, f64)> {
    match criterion {
        RankCriterion::Energy => rank_energy(params, data, u, candidates),
        RankCriterion::FreeEnergy => rank_free_energy(params, data, u, candidates),
    }
}

fn rank_by(candidates: &[u32], score: impl Fn(&u32) -> f64) -> Vec<(u32, f64)> {
    let mut scored: Vec<(u32, f64)> = candidates.iter().map(|j| (*j, score(j))).collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    scored
}

/// Items present in `data`'s catalog that `u` has not rated, ascending.
pub fn unseen_items(data: &RatingDataset, u: u32) -> Vec<u32> {
    let rated: rustc_hash::FxHashSet<u32> = data.user_row(u).map(|t| t.item).collect();
    data.item_ids().iter().copied().filter(|i| !rated.contains(i)).collect()
}

/// One row of a prediction dump; `truth` (and with it `loglik`) may be absent
/// when predicting genuinely unseen cells.
#[derive(Debug, Clone)]
pub struct PredictionRecord {
    pub user: u32,
    pub item: u32,
    pub truth: Option<u8>,
    pub prediction: Prediction,
    pub loglik: Option<f64>,
}

impl PredictionRecord {
    /// Score one cell, attaching truth and log-likelihood when known.
    pub fn evaluate(
        params: &ModelParams,
        data: &RatingDataset,
        user: u32,
        item: u32,
        truth: Option<u8>,
    ) -> PredictionRecord {
        let prediction = predict(params, data, user, item);
        let loglik = truth.map(|r| prediction.distribution.prob(r).ln());
        PredictionRecord { user, item, truth, prediction, loglik }
    }
}

/// Tab-separated prediction dump: `user item truth map expected confidence
/// loglik`, preceded by `# ` comment lines. Missing truth/loglik print `NA`.
pub fn write_predictions(
    w: &mut impl Write,
    comments: &[String],
    rows: &[PredictionRecord],
) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "user\titem\ttruth\tmap\texpected\tconfidence\tloglik")?;
    for r in rows {
        let truth = r.truth.map(|t| t.to_string()).unwrap_or_else(|| "NA".to_string());
        let loglik = r.loglik.map(|l| format!("{l:.6}")).unwrap_or_else(|| "NA".to_string());
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}",
            r.user, r.item, truth, r.prediction.map_rating, r.prediction.expected_rating,
            r.prediction.confidence, loglik
        )?;
    }
    Ok(())
}

/// Tab-separated ranking dump: `user item criterion score rank` (rank is
/// 1-based in the given order).
pub fn write_rankings(
    w: &mut impl Write,
    comments: &[String],
    user: u32,
    criterion: RankCriterion,
    ranked: &[(u32, f64)],
) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    writeln!(w, "user\titem\tcriterion\tscore\trank")?;
    for (pos, (item, score)) in ranked.iter().enumerate() {
        writeln!(w, "{}\t{}\t{}\t{:.6}\t{}", user, item, criterion, score, pos + 1)?;
    }
    Ok(())
}
