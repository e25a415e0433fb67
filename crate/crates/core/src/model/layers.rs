//! Per-node building blocks, written with ordinary tape ops.
//!
//! [`Model::forward`](super::Model::forward) evaluates the same network for
//! every node at once; these functions are the reference for a single node.

use crate::autodiff::{concat, AutodiffError, ParamStore, Tape, Tensor, Var};
use crate::graph::Graph;

use super::{Activation, ModelError};

/// GRU weights on a tape: `w` are `f × d` input maps, `u` the `d × d`
/// recurrent maps and `b` the biases, each ordered update, reset, candidate.
#[derive(Debug, Clone, Copy)]
pub struct GruVars<'t> {
    pub w: [Var<'t>; 3],
    pub u: [Var<'t>; 3],
    pub b: [Var<'t>; 3],
}

impl<'t> GruVars<'t> {
    /// Places `{prefix}.w_z`, `{prefix}.u_z`, `{prefix}.b_z` and the reset
    /// and candidate counterparts.
    pub fn place(tape: &'t Tape, ps: &ParamStore, prefix: &str) -> Result<Self, AutodiffError> {
        let get = |kind: &str, gate: &str| tape.param(ps, &format!("{prefix}.{kind}_{gate}"));
        let gates = ["z", "r", "h"];
        let mut w = Vec::with_capacity(3);
        let mut u = Vec::with_capacity(3);
        let mut b = Vec::with_capacity(3);
        for gate in gates {
            w.push(get("w", gate)?);
            u.push(get("u", gate)?);
            b.push(get("b", gate)?);
        }
        Ok(GruVars {
            w: [w[0], w[1], w[2]],
            u: [u[0], u[1], u[2]],
            b: [b[0], b[1], b[2]],
        })
    }

    pub fn hidden(&self) -> usize {
        self.u[0].shape()[0]
    }
}

/// One GRU step on row vectors: `x` is `1 × f`, `h` is `1 × d`.
pub fn gru_cell<'t>(x: Var<'t>, h: Var<'t>, p: &GruVars<'t>) -> Result<Var<'t>, AutodiffError> {
    let gate = |i: usize, state: Var<'t>| -> Result<Var<'t>, AutodiffError> {
        x.matmul(p.w[i])?.add(state.matmul(p.u[i])?)?.add(p.b[i])
    };
    let z = gate(0, h)?.sigmoid()?;
    let r = gate(1, h)?.sigmoid()?;
    let cand = gate(2, r.mul(h)?)?.tanh()?;
    let tape = h.tape();
    let one = tape.constant(Tensor::scalar(1.0));
    one.sub(z)?.mul(h)?.add(z.mul(cand)?)
}

/// Runs the GRU over the features of `path` in order from a zero state and
/// returns the final `1 × d` state.
pub fn encode_path<'t>(tape: &'t Tape, g: &Graph, path: &[u32], p: &GruVars<'t>) -> Result<Var<'t>, ModelError> {
    if path.is_empty() {
        return Err(ModelError::Input("empty path".into()));
    }
    let mut h = tape.constant(Tensor::zeros(&[1, p.hidden()]));
    for &v in path {
        let v = v as usize;
        if v >= g.n() {
            return Err(ModelError::Input(format!("node {v} out of range for {} nodes", g.n())));
        }
        let row = Tensor::matrix(1, g.feature_dim(), g.feature_row(v).to_vec())?;
        h = gru_cell(tape.constant(row), h, p)?;
    }
    Ok(h)
}

/// Attention pooling of `paths` (each `1 × d`) with one `d × 1` vector per
/// head. Returns the `1 × H·d` embedding and the weights of every head.
pub fn intra_strategy_combine<'t>(
    paths: &[Var<'t>],
    heads: &[Var<'t>],
    slope: f64,
    act: Activation,
) -> Result<(Var<'t>, Vec<Tensor>), ModelError> {
    if paths.is_empty() {
        return Err(ModelError::Input("empty neighborhood".into()));
    }
    if heads.is_empty() {
        return Err(ModelError::Input("no attention heads".into()));
    }
    let stacked = concat(paths, 0)?;
    let r = paths.len();
    let mut outs = Vec::with_capacity(heads.len());
    let mut weights = Vec::with_capacity(heads.len());
    for &a in heads {
        let alpha = stacked.matmul(a)?.leaky_relu(slope)?.reshape(&[1, r])?.softmax()?;
        weights.push((*alpha.value()).clone());
        outs.push(act.apply(alpha.matmul(stacked)?)?);
    }
    Ok((concat(&outs, 1)?, weights))
}

/// Concatenates per-strategy embeddings in the given order.
pub fn inter_strategy_combine<'t>(parts: &[Var<'t>]) -> Result<Var<'t>, ModelError> {
    let first = parts.first().ok_or_else(|| ModelError::Input("no strategy embeddings".into()))?;
    let width = first.shape();
    if let Some(bad) = parts.iter().find(|p| p.shape() != width) {
        return Err(ModelError::Input(format!(
            "strategy embedding of shape {:?}, expected {width:?}",
            bad.shape()
        )));
    }
    Ok(concat(parts, width.len() - 1)?)
}

/// `softmax(h · W)` row by row.
pub fn classify<'t>(h: Var<'t>, w: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    h.matmul(w)?.softmax()
}

/// Mean negative log-likelihood of `targets` over the rows `mask` of the
/// `n × C` probability matrix, with probabilities floored at `1e-12`.
pub fn cross_entropy<'t>(probs: Var<'t>, mask: &[u32], targets: &[usize]) -> Result<Var<'t>, ModelError> {
    if mask.is_empty() {
        return Err(ModelError::Input("empty mask".into()));
    }
    if mask.len() != targets.len() {
        return Err(ModelError::Input(format!("{} mask nodes, {} targets", mask.len(), targets.len())));
    }
    let classes = *probs.shape().last().unwrap_or(&0);
    let mut onehot = vec![0.0; mask.len() * classes];
    for (i, &t) in targets.iter().enumerate() {
        if t >= classes {
            return Err(ModelError::Input(format!("class {t} of {classes}")));
        }
        onehot[i * classes + t] = 1.0;
    }
    let onehot = probs.tape().constant(Tensor::matrix(mask.len(), classes, onehot)?);
    let picked = probs.gather_rows(mask)?.clamp_min(1e-12)?.log()?.mul(onehot)?.sum()?;
    Ok(picked.scale(-1.0 / mask.len() as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig, Init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gru_store(f: usize, d: usize, seed: Option<u64>) -> ParamStore {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
        let init = |fan_in, fan_out| match seed {
            Some(_) => Init::Glorot { fan_in, fan_out },
            None => Init::Zeros,
        };
        for gate in ["z", "r", "h"] {
            ps.add(&format!("g.w_{gate}"), &[f, d], init(f, d), &mut rng).unwrap();
            ps.add(&format!("g.u_{gate}"), &[d, d], init(d, d), &mut rng).unwrap();
            let b = if seed.is_some() { Init::Uniform { bound: 0.5 } } else { Init::Zeros };
            ps.add(&format!("g.b_{gate}"), &[d], b, &mut rng).unwrap();
        }
        ps
    }

    fn line_graph(features: Vec<f64>, f: usize) -> Graph {
        let n = features.len() / f;
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Graph::from_edges(n, &edges, features, f).unwrap()
    }

    #[test]
    fn zero_gru_keeps_zero_and_halves_state() {
        let ps = gru_store(3, 2, None);
        let tape = Tape::new();
        let p = GruVars::place(&tape, &ps, "g").unwrap();
        let x = tape.constant(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[1, 2]));
        assert_eq!(gru_cell(x, zero, &p).unwrap().value().data(), &[0.0, 0.0]);
        let v = tape.constant(Tensor::matrix(1, 2, vec![0.8, -0.6]).unwrap());
        assert_eq!(gru_cell(x, v, &p).unwrap().value().data(), &[0.4, -0.3]);
    }

    #[test]
    fn gru_cell_matches_hand_computation() {
        // f = d = 1 with every weight 0.5 and every bias 0
        let mut ps = ParamStore::new();
        for gate in ["z", "r", "h"] {
            ps.insert(&format!("g.w_{gate}"), Tensor::matrix(1, 1, vec![0.5]).unwrap()).unwrap();
            ps.insert(&format!("g.u_{gate}"), Tensor::matrix(1, 1, vec![0.5]).unwrap()).unwrap();
            ps.insert(&format!("g.b_{gate}"), Tensor::vector(vec![0.0])).unwrap();
        }
        let tape = Tape::new();
        let p = GruVars::place(&tape, &ps, "g").unwrap();
        let (x, h) = (1.0f64, 0.4f64);
        let out = gru_cell(
            tape.constant(Tensor::matrix(1, 1, vec![x]).unwrap()),
            tape.constant(Tensor::matrix(1, 1, vec![h]).unwrap()),
            &p,
        )
        .unwrap()
        .item()
        .unwrap();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let z = sig(0.5 * x + 0.5 * h);
        let r = sig(0.5 * x + 0.5 * h);
        let c = (0.5 * x + 0.5 * r * h).tanh();
        assert!((out - ((1.0 - z) * h + z * c)).abs() < 1e-15);
    }

    #[test]
    fn gru_cell_gradients() {
        let mut ps = gru_store(3, 4, Some(7));
        ps.insert("x", Tensor::matrix(1, 3, vec![0.3, -0.7, 1.1]).unwrap()).unwrap();
        ps.insert("h", Tensor::matrix(1, 4, vec![0.2, -0.1, 0.5, -0.4]).unwrap()).unwrap();
        let report = grad_check(
            |t, ps| {
                let p = GruVars::place(t, ps, "g")?;
                let out = gru_cell(t.param(ps, "x")?, t.param(ps, "h")?, &p)?;
                out.mul(out)?.sum()
            },
            &ps,
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }

    #[test]
    fn single_node_path_is_one_step() {
        let ps = gru_store(2, 3, Some(1));
        let g = line_graph(vec![0.5, -1.0, 2.0, 0.25], 2);
        let tape = Tape::new();
        let p = GruVars::place(&tape, &ps, "g").unwrap();
        let encoded = encode_path(&tape, &g, &[1], &p).unwrap();
        let x = tape.constant(Tensor::matrix(1, 2, vec![2.0, 0.25]).unwrap());
        let direct = gru_cell(x, tape.constant(Tensor::zeros(&[1, 3])), &p).unwrap();
        assert_eq!(encoded.value().data(), direct.value().data());
    }

    #[test]
    fn path_order_matters() {
        let ps = gru_store(2, 3, Some(2));
        let g = line_graph(vec![1.0, 0.0, 0.0, 1.0], 2);
        let tape = Tape::new();
        let p = GruVars::place(&tape, &ps, "g").unwrap();
        let ab = encode_path(&tape, &g, &[0, 1], &p).unwrap().value();
        let ba = encode_path(&tape, &g, &[1, 0], &p).unwrap().value();
        assert!(ab.max_abs_diff(&ba) > 1e-6);
    }

    #[test]
    fn zero_features_and_biases_encode_to_zero() {
        let mut ps = gru_store(2, 3, Some(3));
        for gate in ["z", "r", "h"] {
            ps.value_mut(&format!("g.b_{gate}")).unwrap().data_mut().fill(0.0);
        }
        let g = line_graph(vec![0.0; 8], 2);
        let tape = Tape::new();
        let p = GruVars::place(&tape, &ps, "g").unwrap();
        let h = encode_path(&tape, &g, &[0, 1, 2, 3, 2], &p).unwrap();
        assert!(h.value().data().iter().all(|&v| v == 0.0));
        assert!(matches!(encode_path(&tape, &g, &[0, 9], &p), Err(ModelError::Input(_))));
    }

    fn row<'t>(tape: &'t Tape, v: Vec<f64>) -> Var<'t> {
        let n = v.len();
        tape.constant(Tensor::matrix(1, n, v).unwrap())
    }

    #[test]
    fn single_path_gets_all_the_weight() {
        let tape = Tape::new();
        let hp = row(&tape, vec![0.5, -2.0]);
        let heads = [
            tape.constant(Tensor::matrix(2, 1, vec![1.0, 3.0]).unwrap()),
            tape.constant(Tensor::matrix(2, 1, vec![-1.0, 0.2]).unwrap()),
        ];
        let (out, w) = intra_strategy_combine(&[hp], &heads, 0.2, Activation::Elu).unwrap();
        let elu = |v: f64| if v > 0.0 { v } else { v.exp_m1() };
        let e = [elu(0.5), elu(-2.0)];
        assert_eq!(out.value().data(), &[e[0], e[1], e[0], e[1]]);
        assert!(w.iter().all(|t| t.data() == [1.0]));
    }

    #[test]
    fn equal_scores_give_uniform_weights() {
        let tape = Tape::new();
        let paths: Vec<_> = (0..6).map(|i| row(&tape, vec![i as f64, 1.0])).collect();
        // the first coordinate is ignored by this head
        let head = tape.constant(Tensor::matrix(2, 1, vec![0.0, 1.0]).unwrap());
        let (out, w) = intra_strategy_combine(&paths, &[head], 0.2, Activation::Identity).unwrap();
        for &a in w[0].data() {
            assert!((a - 1.0 / 6.0).abs() < 1e-15);
        }
        let mean = (0..6).sum::<i32>() as f64 / 6.0;
        assert!((out.value().data()[0] - mean).abs() < 1e-12);
        assert!(matches!(
            intra_strategy_combine(&[], &[head], 0.2, Activation::Elu),
            Err(ModelError::Input(_))
        ));
    }

    #[test]
    fn strategy_concatenation_order() {
        let tape = Tape::new();
        let a = row(&tape, vec![1.0, 2.0]);
        let b = row(&tape, vec![3.0, 4.0]);
        assert_eq!(inter_strategy_combine(&[a, b]).unwrap().value().data(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(inter_strategy_combine(&[b, a]).unwrap().value().data(), &[3.0, 4.0, 1.0, 2.0]);
        assert_eq!(inter_strategy_combine(&[a]).unwrap().value().data(), &[1.0, 2.0]);
        let c = row(&tape, vec![1.0]);
        assert!(inter_strategy_combine(&[a, c]).is_err());
        assert!(inter_strategy_combine(&[]).is_err());
    }

    #[test]
    fn classifier_probabilities() {
        let tape = Tape::new();
        let h = tape.constant(Tensor::matrix(2, 3, vec![0.3, -1.0, 2.0, 5.0, 0.0, 1.0]).unwrap());
        let zero = tape.constant(Tensor::zeros(&[3, 4]));
        let p = classify(h, zero).unwrap();
        assert!(p.value().data().iter().all(|&v| v == 0.25));

        let w = tape.constant(Tensor::matrix(3, 2, vec![1.0, -1.0, 0.5, 2.0, -0.3, 0.7]).unwrap());
        let p = classify(h, w).unwrap().value();
        for r in 0..2 {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_values() {
        let tape = Tape::new();
        let uniform = tape.constant(Tensor::full(&[3, 7], 1.0 / 7.0));
        let l = cross_entropy(uniform, &[0, 2], &[3, 6]).unwrap().item().unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);

        let perfect = tape.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        assert_eq!(cross_entropy(perfect, &[0, 1], &[0, 1]).unwrap().item().unwrap(), 0.0);
        let wrong = cross_entropy(perfect, &[0], &[1]).unwrap().item().unwrap();
        assert!((wrong - 1e12f64.ln()).abs() < 1e-9);

        let p = tape.constant(Tensor::matrix(2, 2, vec![0.5, 0.5, 0.75, 0.25]).unwrap());
        let l = cross_entropy(p, &[0, 1], &[0, 1]).unwrap().item().unwrap();
        assert!((l - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-12);
        assert!((l - 1.0397).abs() < 1e-4);

        assert!(cross_entropy(p, &[], &[]).is_err());
        assert!(cross_entropy(p, &[0], &[2]).is_err());
    }
}
