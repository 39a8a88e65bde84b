//! Timespan-aware sequence graph: one undirected graph per sample window,
//! edges issued between interactions at most `t_bound` seconds apart and
//! weighted by the capped inverse timespan min(1, mu / |dt|).

use ndarray::Array2;

use crate::error::{Error, Result};

/// Seconds per day; configuration expresses bounds in days.
pub const SECONDS_PER_DAY: f64 = 86_400.0;

/// Graph over one sample window. Immutable after construction.
#[derive(Debug, Clone)]
pub struct TimespanGraph {
    /// Item index at each window position.
    pub node_items: Vec<usize>,
    /// Timestamp (Unix seconds) at each window position.
    pub node_times: Vec<i64>,
    /// Symmetric N×N weights in [0,1], unit diagonal.
    pub adjacency: Array2<f64>,
    /// Edge-issue bound in seconds.
    pub t_bound: f64,
    /// Timespan unit in seconds.
    pub mu: f64,
}

/// Capped inverse-timespan weight: min(1, mu / |t_j - t_i|).
///
/// A zero gap yields 1 (the cap subsumes the division by zero). `mu` must
/// be positive.
pub fn edge_weight(t_i: i64, t_j: i64, mu: f64) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::Config(format!(
            "timespan unit must be positive, got {mu}"
        )));
    }
    let dt = (t_j - t_i).abs() as f64;
    if dt <= mu {
        Ok(1.0)
    } else {
        Ok(mu / dt)
    }
}

/// Builds the graph for one window.
///
/// Every unordered pair within `t_bound` seconds receives the capped
/// inverse-timespan weight; consecutive window positions are always
/// connected so the sequence never shatters into disconnected pieces;
/// the diagonal is 1. With `binary_weights` every issued edge gets
/// weight 1 instead (the edge set itself still follows `t_bound`).
pub fn build_graph(
    node_items: &[usize],
    node_times: &[i64],
    t_bound: f64,
    mu: f64,
    binary_weights: bool,
) -> Result<TimespanGraph> {
    if node_items.len() != node_times.len() {
        return Err(Error::Config(format!(
            "item and timestamp counts differ: {} vs {}",
            node_items.len(),
            node_times.len()
        )));
    }
    if node_items.is_empty() {
        return Err(Error::Config("cannot build a graph over zero nodes".into()));
    }
    if t_bound <= 0.0 {
        return Err(Error::Config(format!(
            "timespan bound must be positive, got {t_bound}"
        )));
    }
    let n = node_items.len();
    let mut adjacency = Array2::zeros((n, n));
    for i in 0..n {
        adjacency[(i, i)] = 1.0;
        for j in i + 1..n {
            let dt = (node_times[j] - node_times[i]).abs() as f64;
            let issued = dt <= t_bound || j == i + 1;
            if !issued {
                continue;
            }
            let w = if binary_weights {
                1.0
            } else {
                edge_weight(node_times[i], node_times[j], mu)?
            };
            adjacency[(i, j)] = w;
            adjacency[(j, i)] = w;
        }
    }
    Ok(TimespanGraph {
        node_items: node_items.to_vec(),
        node_times: node_times.to_vec(),
        adjacency,
        t_bound,
        mu,
    })
}

impl TimespanGraph {
    pub fn len(&self) -> usize {
        self.node_items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.node_items.is_empty()
    }

    /// Writes the adjacency matrix as plain CSV (one row per node).
    pub fn write_adjacency_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for row in self.adjacency.rows() {
            let line = row
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join(",");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}
