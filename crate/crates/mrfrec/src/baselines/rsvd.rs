//! RSVD: probabilistic matrix factorization on normalized ratings with a
//! learned heteroscedastic variance σ²_ui = exp(γ_u + ν_i).
//!
//! The model is μ_ui = a_i + b_u + A_i·B_u in normalized units, fitted by
//! minimizing the Gaussian negative log-likelihood plus 𝒩(0, λ⁻¹) priors on
//! the factor matrices (not the biases or log-variances). Training runs in
//! three phases: means with σ² pinned at 1, then the variance parameters with
//! the means frozen, then a joint fine-tune. Each phase early-stops on a
//! validation criterion (RMSE for the mean phase, discrete log-likelihood
//! afterwards, since RMSE cannot see the variance).

use std::io::{self, BufRead, Write};
use std::time::Instant;

use rand::distributions::Distribution;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::data::{RatingDataset, RatingTriple};
use crate::model::checkpoint::{fmt_real, parse_real, CheckpointError};
use crate::model::PredictiveDistribution;
use crate::normalize::NormalizationStats;

/// Factorization state. All real-valued parameters live in normalized rating
/// units; `norm` carries the statistics to move between raw and normalized.
#[derive(Debug, Clone)]
pub struct RsvdParams {
    k: u8,
    f: usize,
    lambda: f64,
    item_bias: FxHashMap<u32, f64>,
    user_bias: FxHashMap<u32, f64>,
    item_factors: FxHashMap<u32, Vec<f64>>,
    user_factors: FxHashMap<u32, Vec<f64>>,
    user_logvar: FxHashMap<u32, f64>,
    item_logvar: FxHashMap<u32, f64>,
    norm: NormalizationStats,
}

impl RsvdParams {
    /// Zero biases and log-variances, small seeded Gaussian factors.
    pub fn init(train: &RatingDataset, f: usize, lambda: f64, smoothing: f64, seed: u64) -> Self {
        let norm = NormalizationStats::fit(train, smoothing);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = rand_distr::Normal::new(0.0, 0.01).expect("valid stddev");
        let mut factors = |ids: &[u32]| -> FxHashMap<u32, Vec<f64>> {
            ids.iter()
                .map(|&id| (id, (0..f).map(|_| normal.sample(&mut rng)).collect()))
                .collect()
        };
        let item_factors = factors(train.item_ids());
        let user_factors = factors(train.user_ids());
        RsvdParams {
            k: train.k(),
            f,
            lambda,
            item_bias: train.item_ids().iter().map(|&i| (i, 0.0)).collect(),
            user_bias: train.user_ids().iter().map(|&u| (u, 0.0)).collect(),
            item_factors,
            user_factors,
            user_logvar: train.user_ids().iter().map(|&u| (u, 0.0)).collect(),
            item_logvar: train.item_ids().iter().map(|&i| (i, 0.0)).collect(),
            norm,
        }
    }

    pub fn k(&self) -> u8 {
        self.k
    }

    pub fn f(&self) -> usize {
        self.f
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn norm(&self) -> &NormalizationStats {
        &self.norm
    }

    /// μ_ui in normalized units; unknown ids contribute nothing.
    pub fn mu(&self, u: u32, i: u32) -> f64 {
        let mut mu = self.item_bias.get(&i).copied().unwrap_or(0.0)
            + self.user_bias.get(&u).copied().unwrap_or(0.0);
        if let (Some(a), Some(b)) = (self.item_factors.get(&i), self.user_factors.get(&u)) {
            mu += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        mu
    }

    /// σ²_ui = exp(γ_u + ν_i); 1.0 for unknown ids.
    pub fn sigma2(&self, u: u32, i: u32) -> f64 {
        (self.user_logvar.get(&u).copied().unwrap_or(0.0)
            + self.item_logvar.get(&i).copied().unwrap_or(0.0))
        .exp()
    }
}

/// A scored RSVD cell: denormalized mean for RMSE, the discrete distribution
/// over rating slots (Gaussian density renormalized over the K values) for
/// MAP/confidence/log-likelihood.
#[derive(Debug, Clone)]
pub struct RsvdPrediction {
    pub mean: f64,
    pub variance: f64,
    pub map_rating: u8,
    pub distribution: PredictiveDistribution,
}

/// Score one cell. See [`RsvdPrediction`] for the field semantics.
pub fn rsvd_predict(params: &RsvdParams, u: u32, i: u32) -> RsvdPrediction {
    let mu = params.mu(u, i);
    let sigma2 = params.sigma2(u, i);
    let energies: Vec<f64> = (1..=params.k)
        .map(|r| {
            let z = params.norm.normalize(u, i, r as f64);
            (z - mu).powi(2) / (2.0 * sigma2)
        })
        .collect();
    let distribution = PredictiveDistribution::from_energies(&energies);
    RsvdPrediction {
        mean: params.norm.denormalize(u, i, mu),
        variance: sigma2,
        map_rating: distribution.map_rating(),
        distribution,
    }
}

/// Box constraint on each log-variance parameter; `sigma2` then stays within
/// `exp(±2 * LOGVAR_LIMIT)` on the normalized scale, roughly `[0.2, 5]`.
/// Ratings are discrete with unit spacing (about one normalized z-unit), so a
/// predictive sigma below half a slot already concentrates all mass on one
/// slot — a tighter variance would change nothing but break the numerics: the
/// likelihood has no maximizer when residuals interpolate, and an unbounded
/// precision `1/sigma2` makes the mean steps unstable.
const LOGVAR_LIMIT: f64 = 0.8;

/// Hyperparameters for [`rsvd_train`].
#[derive(Debug, Clone)]
pub struct RsvdConfig {
    pub f: usize,
    pub lambda: f64,
    /// Step size for biases and factors.
    pub eta: f64,
    /// Step size for the log-variance parameters.
    pub eta_var: f64,
    pub batch: usize,
    pub patience: usize,
    /// Epoch cap per phase.
    pub max_epochs: usize,
    pub seed: u64,
    pub smoothing: f64,
}

impl Default for RsvdConfig {
    fn default() -> Self {
        RsvdConfig {
            f: 50,
            lambda: 0.1,
            eta: 0.02,
            eta_var: 0.02,
            batch: 1000,
            patience: 5,
            max_epochs: 200,
            seed: 17,
            smoothing: 5.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum RsvdError {
    #[error("invalid RSVD configuration: {0}")]
    Config(String),
    #[error("RSVD diverged in phase {phase}: validation {metric} = {value}")]
    Diverged { phase: u8, metric: &'static str, value: f64 },
    #[error("training set is empty")]
    EmptyTrain,
}

/// Which parameter families a phase updates.
#[derive(Clone, Copy)]
struct PhasePlan {
    means: bool,
    variance: bool,
}

/// Per-epoch record of the RSVD fit, mirroring the MRF training log shape.
#[derive(Debug, Clone)]
pub struct RsvdEpochRecord {
    pub phase: u8,
    pub epoch: usize,
    pub valid_metric: f64,
    pub wall_seconds: f64,
}

/// Train on `train`, early-stopping each phase against `valid`. With an empty
/// validation set the phases run to their epoch cap monitoring train instead.
pub fn rsvd_train(
    train: &RatingDataset,
    valid: &RatingDataset,
    config: &RsvdConfig,
) -> Result<(RsvdParams, Vec<RsvdEpochRecord>), RsvdError> {
    if !(config.eta > 0.0) || !(config.eta_var > 0.0) {
        return Err(RsvdError::Config("learning rates must be > 0".into()));
    }
    if config.batch == 0 || config.patience == 0 || config.max_epochs == 0 {
        return Err(RsvdError::Config("batch, patience and max_epochs must be >= 1".into()));
    }
    if !(config.lambda >= 0.0) {
        return Err(RsvdError::Config("lambda must be >= 0".into()));
    }
    if train.is_empty() {
        return Err(RsvdError::EmptyTrain);
    }
    let mut params = RsvdParams::init(train, config.f, config.lambda, config.smoothing, config.seed);
    let monitor = if valid.is_empty() { train } else { valid };
    let mut log = Vec::new();
    for (phase, plan) in [
        (1u8, PhasePlan { means: true, variance: false }),
        (2, PhasePlan { means: false, variance: true }),
        (3, PhasePlan { means: true, variance: true }),
    ] {
        run_phase(&mut params, train, monitor, config, phase, plan, &mut log)?;
    }
    Ok((params, log))
}

fn run_phase(
    params: &mut RsvdParams,
    train: &RatingDataset,
    monitor: &RatingDataset,
    config: &RsvdConfig,
    phase: u8,
    plan: PhasePlan,
    log: &mut Vec<RsvdEpochRecord>,
) -> Result<(), RsvdError> {
    // Phase 1 cannot see the variance and is judged on RMSE; later phases on
    // the mean discrete negative log-likelihood.
    let metric_name = if phase == 1 { "RMSE" } else { "NLL" };
    let metric = |p: &RsvdParams| -> f64 {
        if phase == 1 {
            valid_rmse(p, monitor)
        } else {
            valid_nll(p, monitor)
        }
    };
    let initial = metric(params);
    let mut best = initial;
    let mut bad = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(phase as u64);
    for epoch in 1..=config.max_epochs {
        let t0 = Instant::now();
        order.shuffle(&mut rng);
        let n = train.len() as f64;
        for chunk in order.chunks(config.batch) {
            let prior_scale = chunk.len() as f64 / n;
            sgd_step(params, train, chunk, config, plan, prior_scale);
        }
        let m = metric(params);
        log.push(RsvdEpochRecord {
            phase,
            epoch,
            valid_metric: m,
            wall_seconds: t0.elapsed().as_secs_f64(),
        });
        if !m.is_finite() || m > 10.0 * initial.abs().max(1.0) {
            return Err(RsvdError::Diverged { phase, metric: metric_name, value: m });
        }
        // Plain early stopping: quit once the monitor stops improving for
        // `patience` epochs and keep the parameters as they stand. (The MRF
        // trainer restores its best snapshot; this one deliberately does not.)
        if m < best - 1e-9 {
            best = m;
            bad = 0;
        } else {
            bad += 1;
            if bad >= config.patience {
                break;
            }
        }
    }
    Ok(())
}

/// One mini-batch gradient step. The factor prior contributes `prior_scale`
/// of its full-batch gradient so that a whole epoch applies it exactly once.
fn sgd_step(
    params: &mut RsvdParams,
    train: &RatingDataset,
    chunk: &[usize],
    config: &RsvdConfig,
    plan: PhasePlan,
    prior_scale: f64,
) {
    let triples = train.triples();
    for &idx in chunk {
        let t = triples[idx];
        let (u, i) = (t.user, t.item);
        let z = params.norm.normalize(u, i, t.rating as f64);
        let mu = params.mu(u, i);
        let sigma2 = params.sigma2(u, i);
        if plan.means {
            let d = (mu - z) / sigma2;
            let step = config.eta;
            *params.item_bias.get_mut(&i).expect("train item") -= step * d;
            *params.user_bias.get_mut(&u).expect("train user") -= step * d;
            if params.f > 0 {
                let a = params.item_factors.get_mut(&i).expect("train item");
                let b = params.user_factors.get_mut(&u).expect("train user");
                for f in 0..params.f {
                    let (af, bf) = (a[f], b[f]);
                    a[f] -= step * (d * bf);
                    b[f] -= step * (d * af);
                }
            }
        }
        if plan.variance {
            // The heteroscedastic likelihood has no maximizer when residuals
            // interpolate (variance wants to collapse to zero, after which the
            // mean updates divide by it), so the log-variances are kept in a
            // generous but bounded box.
            let g = 0.5 - (z - mu).powi(2) / (2.0 * sigma2);
            let uv = params.user_logvar.get_mut(&u).expect("train user");
            *uv = (*uv - config.eta_var * g).clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
            let iv = params.item_logvar.get_mut(&i).expect("train item");
            *iv = (*iv - config.eta_var * g).clamp(-LOGVAR_LIMIT, LOGVAR_LIMIT);
        }
    }
    if plan.means && params.f > 0 && config.lambda > 0.0 {
        // Batch-scaled prior decay on every factor touched by the chunk.
        let decay = config.eta * config.lambda * prior_scale;
        let mut touched_items: Vec<u32> = chunk.iter().map(|&idx| triples[idx].item).collect();
        touched_items.sort_unstable();
        touched_items.dedup();
        let mut touched_users: Vec<u32> = chunk.iter().map(|&idx| triples[idx].user).collect();
        touched_users.sort_unstable();
        touched_users.dedup();
        for i in touched_items {
            for v in params.item_factors.get_mut(&i).expect("train item") {
                *v -= decay * *v;
            }
        }
        for u in touched_users {
            for v in params.user_factors.get_mut(&u).expect("train user") {
                *v -= decay * *v;
            }
        }
    }
}

/// RMSE of denormalized means over `eval`.
pub fn valid_rmse(params: &RsvdParams, eval: &RatingDataset) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let sse: f64 = eval
        .triples()
        .iter()
        .map(|t| {
            let pred = params.norm.denormalize(t.user, t.item, params.mu(t.user, t.item));
            (pred - t.rating as f64).powi(2)
        })
        .sum();
    (sse / eval.len() as f64).sqrt()
}

/// Mean discrete negative log-likelihood over `eval` (lower is better).
pub fn valid_nll(params: &RsvdParams, eval: &RatingDataset) -> f64 {
    if eval.is_empty() {
        return 0.0;
    }
    let nll: f64 = eval
        .triples()
        .iter()
        .map(|t| -rsvd_predict(params, t.user, t.item).distribution.prob(t.rating).ln())
        .sum();
    nll / eval.len() as f64
}

/// Penalized objective: Σ cells [½ln σ² + (z−μ)²/(2σ²)] + (λ/2)Σ‖factors‖².
/// Exposed for gradient checking.
pub fn rsvd_objective(params: &RsvdParams, cells: &[RatingTriple]) -> f64 {
    let mut obj = 0.0;
    for t in cells {
        let z = params.norm.normalize(t.user, t.item, t.rating as f64);
        let mu = params.mu(t.user, t.item);
        let sigma2 = params.sigma2(t.user, t.item);
        obj += 0.5 * sigma2.ln() + (z - mu).powi(2) / (2.0 * sigma2);
    }
    let sq = |m: &FxHashMap<u32, Vec<f64>>| {
        m.values().flat_map(|v| v.iter()).map(|x| x * x).sum::<f64>()
    };
    obj + 0.5 * params.lambda * (sq(&params.item_factors) + sq(&params.user_factors))
}

/// Full-batch analytic gradient of [`rsvd_objective`], keyed like the
/// parameter maps. Exposed for gradient checking.
#[allow(clippy::type_complexity)]
pub fn rsvd_full_gradient(
    params: &RsvdParams,
    cells: &[RatingTriple],
) -> (
    FxHashMap<u32, f64>,      // ∂ item bias
    FxHashMap<u32, f64>,      // ∂ user bias
    FxHashMap<u32, Vec<f64>>, // ∂ item factors
    FxHashMap<u32, Vec<f64>>, // ∂ user factors
    FxHashMap<u32, f64>,      // ∂ user logvar
    FxHashMap<u32, f64>,      // ∂ item logvar
) {
    let mut gi: FxHashMap<u32, f64> = FxHashMap::default();
    let mut gu: FxHashMap<u32, f64> = FxHashMap::default();
    let mut gia: FxHashMap<u32, Vec<f64>> =
        params.item_factors.iter().map(|(&i, v)| (i, vec![0.0; v.len()])).collect();
    let mut gub: FxHashMap<u32, Vec<f64>> =
        params.user_factors.iter().map(|(&u, v)| (u, vec![0.0; v.len()])).collect();
    let mut ggam: FxHashMap<u32, f64> = FxHashMap::default();
    let mut gnu: FxHashMap<u32, f64> = FxHashMap::default();
    for t in cells {
        let (u, i) = (t.user, t.item);
        let z = params.norm.normalize(u, i, t.rating as f64);
        let mu = params.mu(u, i);
        let sigma2 = params.sigma2(u, i);
        let d = (mu - z) / sigma2;
        *gi.entry(i).or_insert(0.0) += d;
        *gu.entry(u).or_insert(0.0) += d;
        if params.f > 0 {
            let a = &params.item_factors[&i];
            let b = &params.user_factors[&u];
            let ga = gia.get_mut(&i).expect("known item");
            for f in 0..params.f {
                ga[f] += d * b[f];
            }
            let gb = gub.get_mut(&u).expect("known user");
            for f in 0..params.f {
                gb[f] += d * a[f];
            }
        }
        let gv = 0.5 - (z - mu).powi(2) / (2.0 * sigma2);
        *ggam.entry(u).or_insert(0.0) += gv;
        *gnu.entry(i).or_insert(0.0) += gv;
    }
    for (i, ga) in gia.iter_mut() {
        for (f, g) in ga.iter_mut().enumerate() {
            *g += params.lambda * params.item_factors[i][f];
        }
    }
    for (u, gb) in gub.iter_mut() {
        for (f, g) in gb.iter_mut().enumerate() {
            *g += params.lambda * params.user_factors[u][f];
        }
    }
    (gi, gu, gia, gub, ggam, gnu)
}

/// Sectioned tab-separated checkpoint, byte-stable like the MRF checkpoint.
pub fn write_rsvd_checkpoint(
    params: &RsvdParams,
    mut w: impl Write,
    comments: &[String],
) -> io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut item_ids: Vec<u32> = params.item_bias.keys().copied().collect();
    item_ids.sort_unstable();
    let mut user_ids: Vec<u32> = params.user_bias.keys().copied().collect();
    user_ids.sort_unstable();
    writeln!(w, "[header]")?;
    writeln!(w, "k\t{}", params.k)?;
    writeln!(w, "f\t{}", params.f)?;
    writeln!(w, "lambda\t{}", fmt_real(params.lambda))?;
    writeln!(w, "items\t{}", item_ids.len())?;
    writeln!(w, "users\t{}", user_ids.len())?;
    writeln!(w, "[item]")?;
    for &i in &item_ids {
        let mut line = format!(
            "{i}\t{}\t{}",
            fmt_real(params.item_bias[&i]),
            fmt_real(params.item_logvar[&i])
        );
        for v in &params.item_factors[&i] {
            line.push('\t');
            line.push_str(&fmt_real(*v));
        }
        writeln!(w, "{line}")?;
    }
    writeln!(w, "[user]")?;
    for &u in &user_ids {
        let mut line = format!(
            "{u}\t{}\t{}",
            fmt_real(params.user_bias[&u]),
            fmt_real(params.user_logvar[&u])
        );
        for v in &params.user_factors[&u] {
            line.push('\t');
            line.push_str(&fmt_real(*v));
        }
        writeln!(w, "{line}")?;
    }
    writeln!(w, "[means]")?;
    writeln!(
        w,
        "global\t{}\t{}\t{}",
        fmt_real(params.norm.global_mean()),
        fmt_real(params.norm.global_var()),
        fmt_real(params.norm.smoothing())
    )?;
    for (id, mean, dev) in params.norm.user_entries() {
        writeln!(w, "user\t{id}\t{}\t{}", fmt_real(mean), fmt_real(dev))?;
    }
    for (id, mean2, dev2) in params.norm.item_entries() {
        writeln!(w, "item\t{id}\t{}\t{}", fmt_real(mean2), fmt_real(dev2))?;
    }
    Ok(())
}

/// Read a checkpoint written by [`write_rsvd_checkpoint`].
pub fn read_rsvd_checkpoint(reader: impl BufRead) -> Result<RsvdParams, CheckpointError> {
    let mut header: FxHashMap<String, String> = FxHashMap::default();
    let mut item_rows: Vec<(u32, f64, f64, Vec<f64>)> = Vec::new();
    let mut user_rows: Vec<(u32, f64, f64, Vec<f64>)> = Vec::new();
    let mut norm_users: Vec<(u32, f64, f64)> = Vec::new();
    let mut norm_items: Vec<(u32, f64, f64)> = Vec::new();
    let mut global: Option<(f64, f64, f64)> = None;
    let mut section = String::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        let malformed = |reason: String| CheckpointError::Malformed { line: lineno, reason };
        match section.as_str() {
            "header" => {
                if fields.len() != 2 {
                    return Err(malformed("header lines are key<TAB>value".into()));
                }
                header.insert(fields[0].to_string(), fields[1].to_string());
            }
            "item" | "user" => {
                if fields.len() < 3 {
                    return Err(malformed("rows are id<TAB>bias<TAB>logvar<TAB>factors...".into()));
                }
                let id: u32 =
                    fields[0].parse().map_err(|_| malformed(format!("bad id {:?}", fields[0])))?;
                let bias = parse_real(fields[1], lineno)?;
                let logvar = parse_real(fields[2], lineno)?;
                let factors: Result<Vec<f64>, _> =
                    fields[3..].iter().map(|f| parse_real(f, lineno)).collect();
                let row = (id, bias, logvar, factors?);
                if section == "item" {
                    item_rows.push(row);
                } else {
                    user_rows.push(row);
                }
            }
            "means" => match fields[0] {
                "global" => {
                    if fields.len() != 4 {
                        return Err(malformed("global line is global<TAB>mean<TAB>var<TAB>smoothing".into()));
                    }
                    global = Some((
                        parse_real(fields[1], lineno)?,
                        parse_real(fields[2], lineno)?,
                        parse_real(fields[3], lineno)?,
                    ));
                }
                "user" | "item" => {
                    if fields.len() != 4 {
                        return Err(malformed("means rows are kind<TAB>id<TAB>mean<TAB>dev".into()));
                    }
                    let id: u32 = fields[1]
                        .parse()
                        .map_err(|_| malformed(format!("bad id {:?}", fields[1])))?;
                    let entry = (id, parse_real(fields[2], lineno)?, parse_real(fields[3], lineno)?);
                    if fields[0] == "user" {
                        norm_users.push(entry);
                    } else {
                        norm_items.push(entry);
                    }
                }
                other => return Err(malformed(format!("unknown means row kind {other:?}"))),
            },
            "" => return Err(malformed("content before first section".into())),
            other => return Err(malformed(format!("unknown section [{other}]"))),
        }
    }
    let get = |key: &'static str| {
        header
            .get(key)
            .ok_or(CheckpointError::Malformed { line: 0, reason: format!("header missing {key}") })
    };
    let k: u8 = get("k")?
        .parse()
        .map_err(|_| CheckpointError::Malformed { line: 0, reason: "bad k".into() })?;
    let f: usize = get("f")?
        .parse()
        .map_err(|_| CheckpointError::Malformed { line: 0, reason: "bad f".into() })?;
    let lambda = parse_real(get("lambda")?, 0)?;
    for (what, key, found) in
        [("items", "items", item_rows.len()), ("users", "users", user_rows.len())]
    {
        let expected: usize = get(key)?.parse().map_err(|_| CheckpointError::Malformed {
            line: 0,
            reason: format!("bad count for {what}"),
        })?;
        if expected != found {
            return Err(CheckpointError::CountMismatch { what, expected, found });
        }
    }
    for (id, _, _, factors) in item_rows.iter().chain(user_rows.iter()) {
        if factors.len() != f {
            return Err(CheckpointError::Malformed {
                line: 0,
                reason: format!("id {id} has {} factors, expected {f}", factors.len()),
            });
        }
    }
    let (global_mean, global_var, smoothing) =
        global.ok_or(CheckpointError::MissingSection("means"))?;
    let norm =
        NormalizationStats::from_parts(smoothing, global_mean, global_var, norm_users, norm_items);
    Ok(RsvdParams {
        k,
        f,
        lambda,
        item_bias: item_rows.iter().map(|r| (r.0, r.1)).collect(),
        user_bias: user_rows.iter().map(|r| (r.0, r.1)).collect(),
        item_logvar: item_rows.iter().map(|r| (r.0, r.2)).collect(),
        user_logvar: user_rows.iter().map(|r| (r.0, r.2)).collect(),
        item_factors: item_rows.into_iter().map(|r| (r.0, r.3)).collect(),
        user_factors: user_rows.into_iter().map(|r| (r.0, r.3)).collect(),
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::chronological_split;
    use crate::model::grid_dataset;
    use rand::Rng;

    #[test]
    fn zero_params_predict_zero_mean_and_unit_variance() {
        let d = grid_dataset(5, &[(1, 10, 3), (1, 11, 4), (2, 10, 2)]);
        let p = RsvdParams::init(&d, 3, 0.1, 5.0, 1);
        // Biases and logvars start at zero; factor dot products are ~1e-4.
        assert!(p.mu(1, 10).abs() < 1e-3);
        assert!((p.sigma2(1, 10) - 1.0).abs() < 1e-12);
        assert_eq!(p.sigma2(99, 98), 1.0);
        let pred = rsvd_predict(&p, 1, 10);
        assert!(pred.variance > 0.0);
        let total: f64 = (1..=5).map(|r| pred.distribution.prob(r)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn f_zero_is_a_pure_bias_model() {
        let d = grid_dataset(5, &[(1, 10, 5), (1, 11, 1), (2, 10, 4), (2, 11, 2)]);
        let split = chronological_split(&d, 1, 0).unwrap();
        let config = RsvdConfig { f: 0, max_epochs: 30, ..RsvdConfig::default() };
        let (p, _) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        assert_eq!(p.f(), 0);
        // μ must be exactly a_i + b_u.
        let by_hand = p.item_bias[&10] + p.user_bias[&1];
        assert!((p.mu(1, 10) - by_hand).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let d = grid_dataset(
            4,
            &[(1, 10, 4), (1, 11, 2), (2, 10, 1), (2, 11, 3), (3, 10, 2), (3, 12, 4)],
        );
        let mut p = RsvdParams::init(&d, 2, 0.3, 5.0, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in p.item_bias.values_mut().chain(p.user_bias.values_mut()) {
            *v = rng.gen_range(-0.5..0.5);
        }
        for vecs in p.item_factors.values_mut().chain(p.user_factors.values_mut()) {
            for v in vecs {
                *v = rng.gen_range(-0.5..0.5);
            }
        }
        for v in p.user_logvar.values_mut().chain(p.item_logvar.values_mut()) {
            *v = rng.gen_range(-0.4..0.4);
        }
        let cells: Vec<RatingTriple> = d.triples().to_vec();
        let (gi, gu, gia, gub, ggam, gnu) = rsvd_full_gradient(&p, &cells);
        let h = 1e-5;
        let check = |analytic: f64, mutate: &mut dyn FnMut(&mut RsvdParams, f64), what: &str| {
            let mut plus = p.clone();
            mutate(&mut plus, h);
            let mut minus = p.clone();
            mutate(&mut minus, -h);
            let fd = (rsvd_objective(&plus, &cells) - rsvd_objective(&minus, &cells)) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-12);
            assert!(
                (analytic - fd).abs() / denom < 1e-4 || (analytic - fd).abs() < 1e-8,
                "{what}: analytic {analytic} vs fd {fd}"
            );
        };
        for &i in d.item_ids() {
            check(gi[&i], &mut |m, dh| *m.item_bias.get_mut(&i).unwrap() += dh, "item bias");
            check(gnu[&i], &mut |m, dh| *m.item_logvar.get_mut(&i).unwrap() += dh, "item logvar");
            for f in 0..2 {
                check(
                    gia[&i][f],
                    &mut |m, dh| m.item_factors.get_mut(&i).unwrap()[f] += dh,
                    "item factor",
                );
            }
        }
        for &u in d.user_ids() {
            check(gu[&u], &mut |m, dh| *m.user_bias.get_mut(&u).unwrap() += dh, "user bias");
            check(ggam[&u], &mut |m, dh| *m.user_logvar.get_mut(&u).unwrap() += dh, "user logvar");
            for f in 0..2 {
                check(
                    gub[&u][f],
                    &mut |m, dh| m.user_factors.get_mut(&u).unwrap()[f] += dh,
                    "user factor",
                );
            }
        }
    }

    /// Noise-free rank-1 structure: r = 3 + A_i·B_u with balanced ±1 factor
    /// signs, every user rating every item. The symmetric design keeps the
    /// two-step normalization an exact affine map, so F=1 can represent the
    /// matrix exactly.
    fn rank_one_dataset() -> RatingDataset {
        let mut cells = Vec::new();
        for u in 0..12u32 {
            let bu: i32 = if u % 2 == 0 { 1 } else { -1 };
            // Rotate the rating order per user so a chronological holdout
            // takes a different (even, odd) item pair from each user: every
            // item stays in train and per-user means stay exactly balanced.
            for j in 0..10u32 {
                let i = (j + u) % 10;
                let ai: i32 = if i % 2 == 0 { 1 } else { -1 };
                let r = (3 + ai * bu) as u8;
                cells.push((u, i, r));
            }
        }
        grid_dataset(5, &cells)
    }

    #[test]
    fn rank_one_structure_is_recovered() {
        let d = rank_one_dataset();
        let split = chronological_split(&d, 2, 0).unwrap();
        let config = RsvdConfig {
            f: 1,
            lambda: 0.0,
            eta: 0.1,
            batch: 32,
            patience: 10,
            max_epochs: 400,
            ..RsvdConfig::default()
        };
        let (p, log) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        let rmse = valid_rmse(&p, &split.train);
        assert!(rmse < 0.05, "train RMSE {rmse} after {} epochs", log.len());
    }

    #[test]
    fn training_is_deterministic() {
        let d = rank_one_dataset();
        let split = chronological_split(&d, 2, 0).unwrap();
        let config = RsvdConfig { f: 2, max_epochs: 8, ..RsvdConfig::default() };
        let (a, _) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        let (b, _) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        for (&i, av) in &a.item_bias {
            assert_eq!(av.to_bits(), b.item_bias[&i].to_bits());
        }
        for (&i, av) in &a.item_factors {
            for (x, y) in av.iter().zip(&b.item_factors[&i]) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn runaway_rate_reports_divergence() {
        let d = rank_one_dataset();
        let split = chronological_split(&d, 2, 0).unwrap();
        let config = RsvdConfig { eta: 50.0, f: 2, max_epochs: 20, ..RsvdConfig::default() };
        match rsvd_train(&split.train, &split.validation, &config) {
            Err(RsvdError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn variance_phase_learns_heteroscedastic_noise() {
        // Items 0..5 follow an additive pattern the biases capture exactly;
        // items 5..10 are scrambled hard. After training, σ² for the noisy
        // items should clearly exceed σ² for the clean ones.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cells = Vec::new();
        for u in 0..30u32 {
            for j in 0..10u32 {
                let i = (j + u) % 10;
                let r = if i < 5 { 2 + (u % 2) + (i % 2) } else { rng.gen_range(1..=5) };
                cells.push((u, i, r as u8));
            }
        }
        let d = grid_dataset(5, &cells);
        let split = chronological_split(&d, 2, 0).unwrap();
        let config = RsvdConfig { f: 0, batch: 64, max_epochs: 150, ..RsvdConfig::default() };
        let (p, _) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        let clean: f64 = (0..5).map(|i| p.item_logvar[&i]).sum::<f64>() / 5.0;
        let noisy: f64 = (5..10).map(|i| p.item_logvar[&i]).sum::<f64>() / 5.0;
        assert!(
            noisy > clean + 0.3,
            "noisy logvar {noisy} should clearly exceed clean {clean}"
        );
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let d = rank_one_dataset();
        let split = chronological_split(&d, 2, 0).unwrap();
        let config = RsvdConfig { f: 2, max_epochs: 5, ..RsvdConfig::default() };
        let (p, _) = rsvd_train(&split.train, &split.validation, &config).unwrap();
        let mut first = Vec::new();
        write_rsvd_checkpoint(&p, &mut first, &["phase test".into()]).unwrap();
        let reread = read_rsvd_checkpoint(first.as_slice()).unwrap();
        let mut second = Vec::new();
        write_rsvd_checkpoint(&reread, &mut second, &["phase test".into()]).unwrap();
        assert_eq!(first, second);
        // And predictions agree bit-for-bit.
        let a = rsvd_predict(&p, 3, 4);
        let b = rsvd_predict(&reread, 3, 4);
        assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        assert_eq!(a.variance.to_bits(), b.variance.to_bits());
    }

    #[test]
    fn checkpoint_detects_tampered_counts() {
        let d = grid_dataset(5, &[(1, 10, 3), (2, 10, 4), (1, 11, 2)]);
        let p = RsvdParams::init(&d, 1, 0.1, 5.0, 2);
        let mut buf = Vec::new();
        write_rsvd_checkpoint(&p, &mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("items\t2", "items\t3");
        match read_rsvd_checkpoint(text.as_bytes()) {
            Err(CheckpointError::CountMismatch { .. }) => {}
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }
}
