//! Synthetic labeled graphs with adjustable edge homophily.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, GraphError, LabelSet};
use crate::walker::RngStream;

/// Parameters of a planted-partition graph with bag-of-words features.
///
/// Node `i` belongs to class `i mod classes`. Each edge starts at a random
/// node and ends inside its class with probability `homophily`, otherwise in
/// another class. Features are binary; each class owns a block of feature
/// columns switched on with probability `p_on`, all others with `p_off`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartition {
    pub nodes: usize,
    pub classes: usize,
    pub features: usize,
    pub avg_degree: f64,
    pub homophily: f64,
    pub p_on: f64,
    pub p_off: f64,
    pub seed: u64,
}

impl Default for PlantedPartition {
    fn default() -> Self {
        PlantedPartition {
            nodes: 200,
            classes: 3,
            features: 30,
            avg_degree: 4.0,
            homophily: 0.8,
            p_on: 0.5,
            p_off: 0.05,
            seed: 0,
        }
    }
}

pub fn planted_partition(cfg: &PlantedPartition) -> Result<(Graph, LabelSet), GraphError> {
    let PlantedPartition {
        nodes: n,
        classes: c,
        features: f,
        ..
    } = *cfg;
    if c < 2 || n < 2 * c || f < c {
        return Err(GraphError::Dimension(format!(
            "need at least 2 classes, 2 nodes per class and one feature per class (got n={n}, classes={c}, f={f})"
        )));
    }
    for (name, v) in [("homophily", cfg.homophily), ("p_on", cfg.p_on), ("p_off", cfg.p_off)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(GraphError::Dimension(format!("{name} = {v} outside [0, 1]")));
        }
    }
    if !(cfg.avg_degree > 0.0 && cfg.avg_degree.is_finite()) {
        return Err(GraphError::Dimension(format!("avg_degree {} must be positive", cfg.avg_degree)));
    }

    let mut rng = RngStream::new(cfg.seed, 0).rng();
    let classes: Vec<u32> = (0..n).map(|i| (i % c) as u32).collect();
    let members: Vec<Vec<usize>> = (0..c).map(|k| (k..n).step_by(c).collect()).collect();

    let target = ((n as f64 * cfg.avg_degree) / 2.0).round() as usize;
    let mut edges = Vec::with_capacity(target);
    while edges.len() < target {
        let a = rng.gen_range(0..n);
        let ka = classes[a] as usize;
        let kb = if rng.gen::<f64>() < cfg.homophily {
            ka
        } else {
            (ka + rng.gen_range(1..c)) % c
        };
        let b = *members[kb].choose(&mut rng).expect("classes are non-empty");
        if a != b {
            edges.push((a, b));
        }
    }

    let block = f / c;
    let mut feats = vec![0.0; n * f];
    for i in 0..n {
        let k = classes[i] as usize;
        let own = k * block..(k + 1) * block;
        let row = &mut feats[i * f..(i + 1) * f];
        for (j, x) in row.iter_mut().enumerate() {
            let p = if own.contains(&j) { cfg.p_on } else { cfg.p_off };
            if rng.gen::<f64>() < p {
                *x = 1.0;
            }
        }
        if row.iter().all(|&x| x == 0.0) {
            row[own.start + rng.gen_range(0..block)] = 1.0;
        }
    }

    let g = Graph::from_edges(n, &edges, feats, f)?;
    Ok((g, LabelSet::from_classes(&classes)))
}
