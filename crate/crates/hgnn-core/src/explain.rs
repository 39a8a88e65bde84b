//! Interpretability helpers: hard factor assignment, per-factor genre
//! summaries matched against a prediction, and raw assignment exports for
//! external plotting.

use std::collections::BTreeSet;
use std::io::Write;

use ndarray::Array2;
use serde::Serialize;

use crate::data::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{EncodeTrace, ForwardTrace};

/// Row-wise argmax with ties broken toward the smallest factor index.
pub fn hard_assign(s: &Array2<f64>) -> Vec<usize> {
    s.rows()
        .into_iter()
        .map(|row| {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if v > best_v {
                    best_v = v;
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Node labels for a trace: the hard assignment, or the identity when
/// clustering was ablated (each node is its own factor).
fn node_labels(enc: &EncodeTrace) -> Vec<usize> {
    match enc.s() {
        Some(s) => hard_assign(s),
        None => (0..enc.graph.len()).collect(),
    }
}

/// One factor's contribution to a prediction.
#[derive(Debug, Clone, Serialize)]
pub struct FactorReport {
    pub factor: usize,
    /// Item keys of the window nodes hard-assigned here.
    pub members: Vec<String>,
    /// Multiset union of member genres, sorted.
    pub genres: Vec<String>,
    pub beta: f64,
    /// c_j . v, the raw affinity with the predicted item.
    pub affinity: f64,
    /// beta * affinity, the factor's summand in the final score.
    pub contribution: f64,
    /// Factor timestamp in seconds.
    pub t_fac: f64,
}

/// A scored prediction decomposed over preference factors.
#[derive(Debug, Clone, Serialize)]
pub struct Explanation {
    pub predicted_item: String,
    pub predicted_genres: Vec<String>,
    pub score: f64,
    /// Hard factor label per window node.
    pub node_labels: Vec<usize>,
    pub node_items: Vec<String>,
    pub factors: Vec<FactorReport>,
    /// The beta-argmax factor.
    pub dominant_factor: usize,
    /// Genres shared between the prediction and the dominant factor.
    pub genre_overlap: Vec<String>,
}

fn item_key(vocab: &Vocabulary, index: usize) -> Result<String> {
    vocab
        .item_key(index)
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("item index {index} missing from vocabulary")))
}

/// Decomposes one forward trace into per-factor evidence.
///
/// Requires genre metadata somewhere in the vocabulary (items without
/// genres contribute empty sets); errors otherwise since the genre overlap
/// would be vacuous.
pub fn explain_prediction(trace: &ForwardTrace, vocab: &Vocabulary) -> Result<Explanation> {
    if !vocab.has_genres() {
        return Err(Error::Data(
            "vocabulary carries no genre metadata; prepare the data with a `genres` column"
                .into(),
        ));
    }
    let enc = &trace.encode;
    let labels = node_labels(enc);
    let k = enc.factor_count();
    let node_items = enc
        .graph
        .node_items
        .iter()
        .map(|&i| item_key(vocab, i))
        .collect::<Result<Vec<_>>>()?;

    let mut factors = Vec::with_capacity(k);
    for j in 0..k {
        let mut members = Vec::new();
        let mut genres: Vec<String> = Vec::new();
        for (node, &label) in labels.iter().enumerate() {
            if label != j {
                continue;
            }
            members.push(node_items[node].clone());
            if let Some(gs) = vocab.genres_of(enc.graph.node_items[node]) {
                genres.extend(gs.iter().cloned());
            }
        }
        genres.sort();
        factors.push(FactorReport {
            factor: j,
            members,
            genres,
            beta: trace.score.beta[j],
            affinity: trace.score.dots[j],
            contribution: trace.score.beta[j] * trace.score.dots[j],
            t_fac: enc.t_fac[j],
        });
    }

    let mut dominant = 0usize;
    let mut best = f64::NEG_INFINITY;
    for (j, &b) in trace.score.beta.iter().enumerate() {
        if b > best {
            best = b;
            dominant = j;
        }
    }

    let predicted_item = item_key(vocab, trace.score.candidate)?;
    let predicted_genres: BTreeSet<String> = vocab
        .genres_of(trace.score.candidate)
        .map(|g| g.iter().cloned().collect())
        .unwrap_or_default();
    let dominant_genres: BTreeSet<String> =
        factors[dominant].genres.iter().cloned().collect();
    let genre_overlap: Vec<String> = predicted_genres
        .intersection(&dominant_genres)
        .cloned()
        .collect();

    Ok(Explanation {
        predicted_item,
        predicted_genres: predicted_genres.into_iter().collect(),
        score: trace.score.y,
        node_labels: labels,
        node_items,
        factors,
        dominant_factor: dominant,
        genre_overlap,
    })
}

/// Writes one CSV row per (sample, node) with the hard label, the full
/// assignment row, and the refined node embedding, in deterministic
/// iteration order. Header: sample_id, node_index, item_id, hard_label,
/// s_0..s_{K-1}, z_0..z_{d-1}.
pub fn export_assignments<W: Write>(
    traces: &[EncodeTrace],
    vocab: &Vocabulary,
    mut w: W,
) -> Result<()> {
    let first = traces
        .first()
        .ok_or_else(|| Error::Data("no traces to export".into()))?;
    let k = first.factor_count();
    let d = first.z.ncols();

    let mut header = vec![
        "sample_id".to_string(),
        "node_index".to_string(),
        "item_id".to_string(),
        "hard_label".to_string(),
    ];
    header.extend((0..k).map(|j| format!("s_{j}")));
    header.extend((0..d).map(|c| format!("z_{c}")));
    writeln!(w, "{}", header.join(","))?;

    for (sample_id, enc) in traces.iter().enumerate() {
        if enc.factor_count() != k || enc.z.ncols() != d {
            return Err(Error::Data(format!(
                "trace {sample_id} has factor/width shape ({}, {}), expected ({k}, {d})",
                enc.factor_count(),
                enc.z.ncols()
            )));
        }
        let labels = node_labels(enc);
        for (node, &label) in labels.iter().enumerate() {
            let mut fields = vec![
                sample_id.to_string(),
                node.to_string(),
                item_key(vocab, enc.graph.node_items[node])?,
                label.to_string(),
            ];
            match enc.s() {
                Some(s) => fields.extend(s.row(node).iter().map(|v| v.to_string())),
                None => fields.extend((0..k).map(|j| if j == node { "1" } else { "0" }.to_string())),
            }
            fields.extend(enc.z.row(node).iter().map(|v| v.to_string()));
            writeln!(w, "{}", fields.join(","))?;
        }
    }
    Ok(())
}
