//! Finite-difference checks of every differentiable op and of the full model.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    concat, grad_check, gru_step, AutodiffError, GradCheckConfig, GradCheckReport, ParamStore, Tape, Tensor, Var,
};
use crate::graph::Graph;
use crate::model::{cross_entropy, gru_cell, GruVars, Model, ModelConfig, ModelError};
use crate::walker::{WalkStrategy, WalkTable};

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CheckOutcome {
    pub fn passed(&self, tol: f64) -> bool {
        self.report.max_rel_error < tol && self.report.checked > 0
    }
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.gen_range(lo..hi)).collect()).expect("shape and data agree")
}

/// `sum(out ⊙ W)` for a fixed pseudo-random `W`, so every output element
/// carries a distinct weight.
fn weighted_sum<'t>(out: Var<'t>) -> Result<Var<'t>, AutodiffError> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let w = uniform(&out.shape(), -1.0, 1.0, &mut rng);
    out.mul(out.tape().constant(w))?.sum()
}

type Inputs = &'static [(&'static str, &'static [usize], f64, f64)];

fn check<F>(name: &'static str, inputs: Inputs, cfg: GradCheckConfig, f: F) -> Result<CheckOutcome, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, AutodiffError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(name.len() as u64 * 7919 + cfg.seed);
    let mut ps = ParamStore::new();
    for (pname, shape, lo, hi) in inputs {
        ps.insert(pname, uniform(shape, *lo, *hi, &mut rng))?;
    }
    let report = grad_check(
        |t, ps| {
            let vars = inputs
                .iter()
                .map(|(pname, ..)| t.param(ps, pname))
                .collect::<Result<Vec<_>, _>>()?;
            weighted_sum(f(t, &vars)?)
        },
        &ps,
        cfg,
    )?;
    Ok(CheckOutcome { name, report })
}

fn model_err(e: ModelError) -> AutodiffError {
    match e {
        ModelError::Autodiff(e) => e,
        other => AutodiffError::Shape(other.to_string()),
    }
}

/// Six nodes in two triangles joined by an edge, with three features.
pub fn toy_graph() -> Graph {
    let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)];
    let features = vec![
        1.0, 0.0, 0.5, 0.9, 0.1, 0.0, 0.7, 0.3, 0.2, 0.0, 1.0, 0.4, 0.1, 0.8, 0.0, 0.2, 0.9, 1.0,
    ];
    Graph::from_edges(6, &edges, features, 3).expect("valid toy graph")
}

fn model_check(name: &'static str, share: bool, cfg: GradCheckConfig) -> Result<CheckOutcome, AutodiffError> {
    let g = toy_graph();
    let mut mc = ModelConfig::new(3, 2);
    mc.hidden = 4;
    mc.share_params = share;
    let model = Model::new(mc, &mut ChaCha8Rng::seed_from_u64(cfg.seed)).map_err(model_err)?;
    let hoods = [
        WalkStrategy::bfs(3, 2).and_then(|ws| WalkTable::sample(&g, &ws, cfg.seed, 0)),
        WalkStrategy::dfs(3, 2).and_then(|ws| WalkTable::sample(&g, &ws, cfg.seed, 1)),
    ]
    .into_iter()
    .collect::<Result<Vec<_>, _>>()
    .map_err(|e| AutodiffError::Shape(e.to_string()))?;
    let rng = ChaCha8Rng::seed_from_u64(0);
    let report = grad_check(
        |t, ps| {
            let out = model
                .forward_with(t, ps, &g, &hoods, false, &mut rng.clone())
                .map_err(model_err)?;
            cross_entropy(out.probs, &[0, 1, 3, 5], &[0, 0, 1, 1]).map_err(model_err)
        },
        &model.params,
        cfg,
    )?;
    Ok(CheckOutcome { name, report })
}

/// Runs every check with `cfg`; the caller compares errors to a tolerance.
pub fn gradient_suite(cfg: GradCheckConfig) -> Result<Vec<CheckOutcome>, AutodiffError> {
    let c = cfg;
    let mut out = vec![
        check("add", &[("a", &[3, 4], -1.0, 1.0), ("b", &[4], -1.0, 1.0)], c, |_, v| v[0].add(v[1]))?,
        check("sub", &[("a", &[3, 1], -1.0, 1.0), ("b", &[3, 4], -1.0, 1.0)], c, |_, v| v[0].sub(v[1]))?,
        check("mul", &[("a", &[3, 4], -1.0, 1.0), ("b", &[3, 4], -1.0, 1.0)], c, |_, v| v[0].mul(v[1]))?,
        check("mul_broadcast", &[("a", &[2, 3, 4], -1.0, 1.0), ("b", &[3, 1], -1.0, 1.0)], c, |_, v| {
            v[0].mul(v[1])
        })?,
        check("scale", &[("a", &[5], -1.0, 1.0)], c, |_, v| v[0].scale(-2.5))?,
        check("matmul", &[("a", &[3, 5], -1.0, 1.0), ("b", &[5, 2], -1.0, 1.0)], c, |_, v| v[0].matmul(v[1]))?,
        check("sigmoid", &[("a", &[3, 4], -3.0, 3.0)], c, |_, v| v[0].sigmoid())?,
        check("tanh", &[("a", &[3, 4], -2.0, 2.0)], c, |_, v| v[0].tanh())?,
        check("exp", &[("a", &[6], -1.0, 1.0)], c, |_, v| v[0].exp())?,
        check("log", &[("a", &[6], 0.3, 3.0)], c, |_, v| v[0].log())?,
        check("leaky_relu", &[("a", &[4, 4], -1.0, 1.0)], c, |_, v| v[0].leaky_relu(0.2))?,
        check("elu", &[("a", &[4, 4], -1.0, 1.0)], c, |_, v| v[0].elu(1.0))?,
        check("clamp_min", &[("a", &[4, 4], 0.0, 1.0)], c, |_, v| v[0].clamp_min(0.5))?,
        check("softmax", &[("a", &[3, 5], -2.0, 2.0)], c, |_, v| v[0].softmax())?,
        check("concat_rows", &[("a", &[2, 3], -1.0, 1.0), ("b", &[1, 3], -1.0, 1.0)], c, |_, v| {
            concat(&[v[0], v[1]], 0)
        })?,
        check("concat_cols", &[("a", &[2, 3], -1.0, 1.0), ("b", &[2, 5], -1.0, 1.0)], c, |_, v| {
            concat(&[v[0], v[1], v[0]], 1)
        })?,
        check("sum", &[("a", &[3, 3], -1.0, 1.0)], c, |_, v| v[0].mul(v[0])?.sum())?,
        check("mean", &[("a", &[7], -1.0, 1.0)], c, |_, v| v[0].mul(v[0])?.mean())?,
        check("sum_axis", &[("a", &[2, 3, 4], -1.0, 1.0)], c, |_, v| v[0].sum_axis(1))?,
        check("reshape", &[("a", &[2, 6], -1.0, 1.0)], c, |_, v| v[0].reshape(&[3, 4]))?,
        check("dropout", &[("a", &[4, 5], -1.0, 1.0)], c, |_, v| {
            v[0].dropout(0.5, true, &mut ChaCha8Rng::seed_from_u64(3))
        })?,
        check("gather_rows", &[("a", &[4, 3], -1.0, 1.0)], c, |_, v| v[0].gather_rows(&[3, 0, 3, 1]))?,
        check(
            "gru_cell",
            &[
                ("x", &[1, 3], -1.0, 1.0),
                ("h", &[1, 4], -1.0, 1.0),
                ("g.w_z", &[3, 4], -0.7, 0.7),
                ("g.u_z", &[4, 4], -0.7, 0.7),
                ("g.b_z", &[4], -0.5, 0.5),
                ("g.w_r", &[3, 4], -0.7, 0.7),
                ("g.u_r", &[4, 4], -0.7, 0.7),
                ("g.b_r", &[4], -0.5, 0.5),
                ("g.w_h", &[3, 4], -0.7, 0.7),
                ("g.u_h", &[4, 4], -0.7, 0.7),
                ("g.b_h", &[4], -0.5, 0.5),
            ],
            c,
            |_, v| {
                let p = GruVars {
                    w: [v[2], v[5], v[8]],
                    u: [v[3], v[6], v[9]],
                    b: [v[4], v[7], v[10]],
                };
                gru_cell(v[0], v[1], &p)
            },
        )?,
        check(
            "gru_step",
            &[
                ("pz", &[5, 3], -1.0, 1.0),
                ("pr", &[5, 3], -1.0, 1.0),
                ("ph", &[5, 3], -1.0, 1.0),
                ("h", &[4, 3], -1.0, 1.0),
                ("uz", &[3, 3], -0.8, 0.8),
                ("ur", &[3, 3], -0.8, 0.8),
                ("uh", &[3, 3], -0.8, 0.8),
                ("bz", &[3], -0.5, 0.5),
                ("br", &[3], -0.5, 0.5),
                ("bh", &[3], -0.5, 0.5),
            ],
            c,
            |_, v| {
                let rows = Rc::new(vec![4, 0, 4, 2]);
                let h1 = gru_step([v[0], v[1], v[2]], &rows, v[3], [v[4], v[5], v[6]], [v[7], v[8], v[9]])?;
                gru_step([v[0], v[1], v[2]], &Rc::new(vec![1, 1, 3, 0]), h1, [v[4], v[5], v[6]], [v[7], v[8], v[9]])
            },
        )?,
    ];
    out.push(model_check("model", false, cfg)?);
    out.push(model_check("model_shared", true, cfg)?);
    Ok(out)
}
