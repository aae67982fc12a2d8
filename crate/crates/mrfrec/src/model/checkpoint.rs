//! Sectioned tab-separated checkpoint format for [`ModelParams`].
//!
//! Layout: a `[header]` section (K, parameterization, scope, entry counts),
//! `[item_bias]` / `[user_bias]` (id followed by the bias vector),
//! `[item_edges]` / `[user_edges]` (i, j, weight with i < j), and `[means]`
//! (the frozen training means and normalization statistics). All reals are
//! written with 17 significant digits, so write→read→write is byte-identical
//! and every value round-trips bit-exactly. Lines starting with `#` are
//! comments and may appear anywhere.

use std::io::{BufRead, Write};

use rustc_hash::FxHashMap;
use thiserror::Error;

use super::{ModelParams, ModelScope, PairMap, Parameterization};
use crate::normalize::NormalizationStats;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing section [{0}]")]
    MissingSection(&'static str),
    #[error("count mismatch for {what}: header says {expected}, found {found}")]
    CountMismatch { what: &'static str, expected: usize, found: usize },
}

/// Format a real with 17 significant digits (exact f64 round trip).
pub(crate) fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write `params` as a checkpoint. `comments` become leading `#` lines.
pub fn write_checkpoint(
    params: &ModelParams,
    mut w: impl Write,
    comments: &[String],
) -> std::io::Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let norm = params.norm();
    let user_norm = norm.user_entries();
    let item_norm = norm.item_entries();
    let item_bias = sorted_bias(&params.item_bias);
    let user_bias = sorted_bias(&params.user_bias);
    let item_edges = params.item_pair.sorted_entries();
    let user_edges = params.user_pair.sorted_entries();

    writeln!(w, "[header]")?;
    writeln!(w, "k\t{}", params.k())?;
    writeln!(w, "parameterization\t{}", params.parameterization())?;
    writeln!(w, "scope\t{}", params.scope())?;
    writeln!(w, "item_bias\t{}", item_bias.len())?;
    writeln!(w, "user_bias\t{}", user_bias.len())?;
    writeln!(w, "item_edges\t{}", item_edges.len())?;
    writeln!(w, "user_edges\t{}", user_edges.len())?;
    writeln!(w, "items\t{}", item_norm.len())?;
    writeln!(w, "users\t{}", user_norm.len())?;

    writeln!(w, "[item_bias]")?;
    for (id, vec) in &item_bias {
        write_bias_line(&mut w, *id, vec)?;
    }
    writeln!(w, "[user_bias]")?;
    for (id, vec) in &user_bias {
        write_bias_line(&mut w, *id, vec)?;
    }
    writeln!(w, "[item_edges]")?;
    for (a, b, v) in &item_edges {
        writeln!(w, "{a}\t{b}\t{}", fmt_real(*v))?;
    }
    writeln!(w, "[user_edges]")?;
    for (a, b, v) in &user_edges {
        writeln!(w, "{a}\t{b}\t{}", fmt_real(*v))?;
    }

    writeln!(w, "[means]")?;
    writeln!(
        w,
        "global\t{}\t{}\t{}",
        fmt_real(norm.global_mean()),
        fmt_real(norm.global_var()),
        fmt_real(norm.smoothing())
    )?;
    // user rows: id, raw training mean r̄_u, smoothed step-1 deviation.
    for (id, mean, dev) in &user_norm {
        writeln!(w, "user\t{id}\t{}\t{}", fmt_real(*mean), fmt_real(*dev))?;
    }
    // item rows: id, raw training mean r̄_i, step-2 mean, step-2 deviation.
    for (id, mean2, dev2) in &item_norm {
        writeln!(
            w,
            "item\t{id}\t{}\t{}\t{}",
            fmt_real(params.item_mean(*id)),
            fmt_real(*mean2),
            fmt_real(*dev2)
        )?;
    }
    Ok(())
}

fn write_bias_line(w: &mut impl Write, id: u32, vec: &[f64]) -> std::io::Result<()> {
    let mut line = id.to_string();
    for v in vec {
        line.push('\t');
        line.push_str(&fmt_real(*v));
    }
    writeln!(w, "{line}")
}

fn sorted_bias(map: &FxHashMap<u32, Vec<f64>>) -> Vec<(u32, Vec<f64>)> {
    let mut out: Vec<_> = map.iter().map(|(&id, v)| (id, v.clone())).collect();
    out.sort_unstable_by_key(|e| e.0);
    out
}

/// Read a checkpoint written by [`write_checkpoint`].
pub fn read_checkpoint(reader: impl BufRead) -> Result<ModelParams, CheckpointError> {
    let mut header: FxHashMap<String, String> = FxHashMap::default();
    let mut item_bias: FxHashMap<u32, Vec<f64>> = FxHashMap::default();
    let mut user_bias: FxHashMap<u32, Vec<f64>> = FxHashMap::default();
    let mut item_pair = PairMap::new();
    let mut user_pair = PairMap::new();
    let mut item_means: FxHashMap<u32, f64> = FxHashMap::default();
    let mut user_means: FxHashMap<u32, f64> = FxHashMap::default();
    let mut norm_users: Vec<(u32, f64, f64)> = Vec::new();
    let mut norm_items: Vec<(u32, f64, f64)> = Vec::new();
    let mut global: Option<(f64, f64, f64)> = None;

    let mut section = String::new();
    let mut seen_sections: Vec<String> = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim_end();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = name.to_string();
            seen_sections.push(section.clone());
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
            "item_bias" | "user_bias" => {
                if fields.len() < 2 {
                    return Err(malformed("bias lines are id<TAB>values...".into()));
                }
                let id: u32 =
                    fields[0].parse().map_err(|_| malformed(format!("bad id {:?}", fields[0])))?;
                let values = parse_reals(&fields[1..], lineno)?;
                if section == "item_bias" {
                    item_bias.insert(id, values);
                } else {
                    user_bias.insert(id, values);
                }
            }
            "item_edges" | "user_edges" => {
                if fields.len() != 3 {
                    return Err(malformed("edge lines are a<TAB>b<TAB>weight".into()));
                }
                let a: u32 =
                    fields[0].parse().map_err(|_| malformed(format!("bad id {:?}", fields[0])))?;
                let b: u32 =
                    fields[1].parse().map_err(|_| malformed(format!("bad id {:?}", fields[1])))?;
                let v = parse_real(fields[2], lineno)?;
                if section == "item_edges" {
                    item_pair.set(a, b, v);
                } else {
                    user_pair.set(a, b, v);
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
                "user" => {
                    if fields.len() != 4 {
                        return Err(malformed("user line is user<TAB>id<TAB>mean<TAB>dev".into()));
                    }
                    let id: u32 = fields[1]
                        .parse()
                        .map_err(|_| malformed(format!("bad id {:?}", fields[1])))?;
                    let mean = parse_real(fields[2], lineno)?;
                    let dev = parse_real(fields[3], lineno)?;
                    user_means.insert(id, mean);
                    norm_users.push((id, mean, dev));
                }
                "item" => {
                    if fields.len() != 5 {
                        return Err(malformed(
                            "item line is item<TAB>id<TAB>mean<TAB>mean2<TAB>dev2".into(),
                        ));
                    }
                    let id: u32 = fields[1]
                        .parse()
                        .map_err(|_| malformed(format!("bad id {:?}", fields[1])))?;
                    item_means.insert(id, parse_real(fields[2], lineno)?);
                    norm_items.push((id, parse_real(fields[3], lineno)?, parse_real(fields[4], lineno)?));
                }
                other => return Err(malformed(format!("unknown means row kind {other:?}"))),
            },
            "" => return Err(malformed("content before first section".into())),
            other => return Err(malformed(format!("unknown section [{other}]"))),
        }
    }

    for required in ["header", "item_bias", "user_bias", "item_edges", "user_edges", "means"] {
        if !seen_sections.iter().any(|s| s == required) {
            return Err(CheckpointError::MissingSection(required));
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
    let parameterization: Parameterization = get("parameterization")?
        .parse()
        .map_err(|e| CheckpointError::Malformed { line: 0, reason: e })?;
    let scope: ModelScope = get("scope")?
        .parse()
        .map_err(|e| CheckpointError::Malformed { line: 0, reason: e })?;
    for (what, expected, found) in [
        ("item_bias", get("item_bias")?, item_bias.len()),
        ("user_bias", get("user_bias")?, user_bias.len()),
        ("item_edges", get("item_edges")?, item_pair.len()),
        ("user_edges", get("user_edges")?, user_pair.len()),
        ("items", get("items")?, norm_items.len()),
        ("users", get("users")?, norm_users.len()),
    ] {
        let expected: usize = expected.parse().map_err(|_| CheckpointError::Malformed {
            line: 0,
            reason: format!("bad count for {what}"),
        })?;
        if expected != found {
            return Err(CheckpointError::CountMismatch { what, expected, found });
        }
    }
    let dim = parameterization.bias_dim(k);
    for (id, v) in item_bias.iter().chain(user_bias.iter()) {
        if v.len() != dim {
            return Err(CheckpointError::Malformed {
                line: 0,
                reason: format!("bias vector for id {id} has {} values, expected {dim}", v.len()),
            });
        }
    }
    let (global_mean, global_var, smoothing) =
        global.ok_or(CheckpointError::MissingSection("means"))?;
    let norm = NormalizationStats::from_parts(
        smoothing,
        global_mean,
        global_var,
        norm_users,
        norm_items,
    );
    Ok(ModelParams::from_parts(
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
    ))
}

pub(crate) fn parse_real(s: &str, line: usize) -> Result<f64, CheckpointError> {
    s.parse().map_err(|_| CheckpointError::Malformed {
        line,
        reason: format!("bad real {s:?}"),
    })
}

fn parse_reals(fields: &[&str], line: usize) -> Result<Vec<f64>, CheckpointError> {
    fields.iter().map(|f| parse_real(f, line)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::grid_dataset;
    use rand::Rng;
    use rand::SeedableRng;

    fn fixture(scheme: Parameterization) -> ModelParams {
        let d = grid_dataset(
            5,
            &[(1, 10, 5), (1, 11, 3), (2, 10, 1), (2, 11, 3), (3, 10, 2), (3, 12, 4)],
        );
        let mut p = ModelParams::new(scheme, ModelScope::Joint, &d, 5.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for &i in d.item_ids() {
            for slot in 0..p.bias_dim() {
                p.set_item_bias(i, slot, rng.gen_range(-1.0..1.0));
            }
        }
        for &u in d.user_ids() {
            for slot in 0..p.bias_dim() {
                p.set_user_bias(u, slot, rng.gen_range(-1.0..1.0));
            }
        }
        p.set_item_edge(10, 11, 1.0 / 3.0);
        p.set_item_edge(11, 12, -0.07);
        p.set_user_edge(1, 3, 0.123456789012345678);
        p
    }

    #[test]
    fn round_trip_is_byte_identical_and_bit_exact() {
        for scheme in [
            Parameterization::LinearByLinear,
            Parameterization::Gaussian,
            Parameterization::Smoothness,
        ] {
            let p = fixture(scheme);
            let mut first = Vec::new();
            write_checkpoint(&p, &mut first, &["test".to_string()]).unwrap();
            let back = read_checkpoint(first.as_slice()).unwrap();
            let mut second = Vec::new();
            write_checkpoint(&back, &mut second, &["test".to_string()]).unwrap();
            assert_eq!(first, second, "{scheme:?}: second serialization differs");

            assert_eq!(back.k(), p.k());
            assert_eq!(back.parameterization(), p.parameterization());
            assert_eq!(back.scope(), p.scope());
            for (i, j, v) in p.item_pair.sorted_entries() {
                assert_eq!(back.item_pair.get(i, j).to_bits(), v.to_bits());
            }
            for (u, v2, v) in p.user_pair.sorted_entries() {
                assert_eq!(back.user_pair.get(u, v2).to_bits(), v.to_bits());
            }
            for (&id, vec) in &p.item_bias {
                for (slot, v) in vec.iter().enumerate() {
                    assert_eq!(back.item_bias_slot(id, slot).to_bits(), v.to_bits());
                }
            }
            for id in [10u32, 11, 12] {
                assert_eq!(back.item_mean(id).to_bits(), p.item_mean(id).to_bits());
                assert_eq!(
                    back.norm().item_dev(id).to_bits(),
                    p.norm().item_dev(id).to_bits()
                );
            }
            for id in [1u32, 2, 3] {
                assert_eq!(back.user_mean(id).to_bits(), p.user_mean(id).to_bits());
                assert_eq!(
                    back.norm().user_dev(id).to_bits(),
                    p.norm().user_dev(id).to_bits()
                );
            }
            assert_eq!(back.norm().global_dev().to_bits(), p.norm().global_dev().to_bits());
        }
    }

    #[test]
    fn loaded_model_predicts_identically() {
        let d = grid_dataset(
            5,
            &[(1, 10, 5), (1, 11, 3), (2, 10, 1), (2, 11, 3), (3, 10, 2), (3, 12, 4)],
        );
        let p = fixture(Parameterization::Gaussian);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf, &[]).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        for t in d.triples() {
            let a = p.local_conditional(&d, t.user, t.item);
            let b = back.local_conditional(&d, t.user, t.item);
            for s in 0..5 {
                assert_eq!(a.probs()[s].to_bits(), b.probs()[s].to_bits());
            }
        }
    }

    #[test]
    fn count_mismatch_is_detected() {
        let p = fixture(Parameterization::Smoothness);
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf, &[]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let tampered = text.replace("item_edges\t2", "item_edges\t3");
        assert_ne!(text, tampered);
        match read_checkpoint(tampered.as_bytes()) {
            Err(CheckpointError::CountMismatch { what, expected, found }) => {
                assert_eq!((what, expected, found), ("item_edges", 3, 2));
            }
            other => panic!("expected count mismatch, got {other:?}"),
        }
    }

    #[test]
    fn malformed_line_reports_position() {
        let err = read_checkpoint("garbage without section\n".as_bytes()).unwrap_err();
        match err {
            CheckpointError::Malformed { line, .. } => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }
}
