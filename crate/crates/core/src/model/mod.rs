//! Path-aggregation network: per-strategy GRU path encoders, multi-head
//! attention over each node's paths, concatenation across strategies and a
//! linear softmax classifier.

mod layers;

use std::io::{BufRead, Write};
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{
    concat, gru_step, read_params, write_params, AutodiffError, Init, ParamStore, Tape, Tensor, Var,
};
use crate::graph::Graph;
use crate::walker::WalkTable;

pub use layers::{classify, cross_entropy, encode_path, gru_cell, inter_strategy_combine, intra_strategy_combine, GruVars};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Nonlinearity applied to each attention head's pooled output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<'t>(self, x: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        match self {
            Activation::Elu => x.elu(1.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => Ok(x),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "elu" => Ok(Activation::Elu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            _ => Err(format!("unknown activation `{s}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// GRU hidden size `d_L`.
    pub hidden: usize,
    pub heads: usize,
    /// Strategy names in concatenation order.
    pub strategies: Vec<String>,
    pub num_classes: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub activation: Activation,
    /// One GRU and one set of attention vectors for all strategies.
    pub share_params: bool,
}

impl ModelConfig {
    pub fn new(input_dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            input_dim,
            hidden: 32,
            heads: 2,
            strategies: vec!["bfs".into(), "dfs".into()],
            num_classes,
            dropout: 0.5,
            leaky_slope: 0.2,
            activation: Activation::Elu,
            share_params: false,
        }
    }

    /// Length of a node embedding: `heads · hidden · strategies`.
    pub fn d_final(&self) -> usize {
        self.heads * self.hidden * self.strategies.len()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("input_dim", self.input_dim),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("strategies", self.strategies.len()),
            ("num_classes", self.num_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !self.leaky_slope.is_finite() {
            return Err(ModelError::Config("leaky slope must be finite".into()));
        }
        for (i, s) in self.strategies.iter().enumerate() {
            if s.is_empty() || s.contains(|c: char| c.is_whitespace() || c == '.') {
                return Err(ModelError::Config(format!("bad strategy name `{s}`")));
            }
            if self.strategies[..i].contains(s) {
                return Err(ModelError::Config(format!("strategy `{s}` listed twice")));
            }
        }
        Ok(())
    }

    fn prefix(&self, s: usize) -> &str {
        if self.share_params {
            "shared"
        } else {
            &self.strategies[s]
        }
    }
}

/// Everything [`Model::forward`] produces.
pub struct Forward<'t> {
    /// `n × C` class probabilities.
    pub probs: Var<'t>,
    /// `n × d_final` node embeddings, before classifier dropout.
    pub embeddings: Var<'t>,
    /// Attention weights per strategy and head, each `n × R`.
    pub attention: Vec<Vec<Tensor>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

struct StrategyVars<'t> {
    gru: GruVars<'t>,
    heads: Vec<Var<'t>>,
}

impl Model {
    /// Fresh parameters: Glorot-uniform matrices, zero biases and attention
    /// vectors uniform in `±sqrt(3/d)`.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let (f, d) = (config.input_dim, config.hidden);
        let mut ps = ParamStore::new();
        let owners = if config.share_params { 1 } else { config.strategies.len() };
        for s in 0..owners {
            let pre = config.prefix(s);
            for gate in ["z", "r", "h"] {
                ps.add(&format!("{pre}.w_{gate}"), &[f, d], Init::Glorot { fan_in: f, fan_out: d }, rng)?;
                ps.add(&format!("{pre}.u_{gate}"), &[d, d], Init::Glorot { fan_in: d, fan_out: d }, rng)?;
                ps.add(&format!("{pre}.b_{gate}"), &[d], Init::Zeros, rng)?;
            }
            let bound = (3.0 / d as f64).sqrt();
            for h in 0..config.heads {
                ps.add(&format!("{pre}.att{h}"), &[d, 1], Init::Uniform { bound }, rng)?;
            }
        }
        let (df, c) = (config.d_final(), config.num_classes);
        ps.add("classifier", &[df, c], Init::Glorot { fan_in: df, fan_out: c }, rng)?;
        Ok(Model { config, params: ps })
    }

    /// Wraps existing parameters after checking their names and shapes.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        config.validate()?;
        let reference = Model::new(config.clone(), &mut rand::rngs::mock::StepRng::new(0, 0))?;
        if reference.params.len() != params.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameters, found {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, p) in reference.params.iter() {
            let got = params
                .value(name)
                .ok_or_else(|| ModelError::Config(format!("missing parameter `{name}`")))?;
            if got.shape() != p.value.shape() {
                return Err(ModelError::Config(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    got.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(Model { config, params })
    }

    fn place<'t>(&self, tape: &'t Tape, ps: &ParamStore) -> Result<Vec<StrategyVars<'t>>, AutodiffError> {
        let owners = if self.config.share_params { 1 } else { self.config.strategies.len() };
        (0..owners)
            .map(|s| {
                let pre = self.config.prefix(s);
                Ok(StrategyVars {
                    gru: GruVars::place(tape, ps, pre)?,
                    heads: (0..self.config.heads)
                        .map(|h| tape.param(ps, &format!("{pre}.att{h}")))
                        .collect::<Result<_, _>>()?,
                })
            })
            .collect()
    }

    /// Probabilities for every node from one neighborhood table per strategy,
    /// using this model's parameters.
    pub fn forward<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        g: &Graph,
        hoods: &[WalkTable],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward<'t>, ModelError> {
        self.forward_with(tape, &self.params, g, hoods, training, rng)
    }

    /// [`Model::forward`] with the parameter values taken from `ps`.
    pub fn forward_with<'t, R: Rng + ?Sized>(
        &self,
        tape: &'t Tape,
        ps: &ParamStore,
        g: &Graph,
        hoods: &[WalkTable],
        training: bool,
        rng: &mut R,
    ) -> Result<Forward<'t>, ModelError> {
        let cfg = &self.config;
        self.check_inputs(g, hoods)?;
        let n = g.n();
        let d = cfg.hidden;
        let vars = self.place(tape, ps)?;
        let classifier = tape.param(ps, "classifier")?;

        let x = tape.constant(Tensor::matrix(n, g.feature_dim(), g.features().to_vec())?);
        let x = x.dropout(cfg.dropout, training, rng)?;

        let mut per_strategy = Vec::with_capacity(hoods.len());
        let mut attention = Vec::with_capacity(hoods.len());
        for (s, table) in hoods.iter().enumerate() {
            let v = &vars[if cfg.share_params { 0 } else { s }];
            let (k, r) = (table.length, table.walks_per_node);
            let batch = n * r;
            let proj = [x.matmul(v.gru.w[0])?, x.matmul(v.gru.w[1])?, x.matmul(v.gru.w[2])?];
            let mut h = tape.constant(Tensor::zeros(&[batch, d]));
            for t in 0..k {
                let rows: Vec<u32> = table.flat().chunks(k).map(|p| p[t]).collect();
                h = gru_step(proj, &Rc::new(rows), h, v.gru.u, v.gru.b)?;
            }

            let mut head_out = Vec::with_capacity(cfg.heads);
            let mut weights = Vec::with_capacity(cfg.heads);
            for &a in &v.heads {
                let alpha = h
                    .matmul(a)?
                    .leaky_relu(cfg.leaky_slope)?
                    .reshape(&[n, r])?
                    .softmax()?;
                weights.push((*alpha.value()).clone());
                let pooled = alpha
                    .reshape(&[batch, 1])?
                    .mul(h)?
                    .reshape(&[n, r, d])?
                    .sum_axis(1)?;
                head_out.push(cfg.activation.apply(pooled)?);
            }
            per_strategy.push(concat(&head_out, 1)?);
            attention.push(weights);
        }

        let embeddings = inter_strategy_combine(&per_strategy)?;
        let dropped = embeddings.dropout(cfg.dropout, training, rng)?;
        let probs = classify(dropped, classifier)?;
        Ok(Forward {
            probs,
            embeddings,
            attention,
        })
    }

    fn check_inputs(&self, g: &Graph, hoods: &[WalkTable]) -> Result<(), ModelError> {
        let cfg = &self.config;
        if g.feature_dim() != cfg.input_dim {
            return Err(ModelError::Input(format!(
                "graph has {} features, model expects {}",
                g.feature_dim(),
                cfg.input_dim
            )));
        }
        if hoods.len() != cfg.strategies.len() {
            return Err(ModelError::Input(format!(
                "{} neighborhood tables for {} strategies",
                hoods.len(),
                cfg.strategies.len()
            )));
        }
        for (table, name) in hoods.iter().zip(&cfg.strategies) {
            if &table.strategy != name {
                return Err(ModelError::Input(format!(
                    "neighborhood `{}` where `{name}` was expected",
                    table.strategy
                )));
            }
            if table.num_targets() != g.n() {
                return Err(ModelError::Input(format!(
                    "neighborhood `{name}` covers {} of {} nodes",
                    table.num_targets(),
                    g.n()
                )));
            }
        }
        Ok(())
    }

    /// Class probabilities with dropout disabled.
    pub fn predict(&self, g: &Graph, hoods: &[WalkTable]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let out = self.forward(&tape, g, hoods, false, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let probs = (*out.probs.value()).clone();
        Ok(probs)
    }

    /// `n × d_final` node embeddings with dropout disabled.
    pub fn embed(&self, g: &Graph, hoods: &[WalkTable]) -> Result<Tensor, ModelError> {
        let tape = Tape::new();
        let out = self.forward(&tape, g, hoods, false, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let emb = (*out.embeddings.value()).clone();
        Ok(emb)
    }

    /// Writes the config, `extra` metadata and parameters; loading gives
    /// back identical bits.
    pub fn save<W: Write>(&self, w: W, extra: &[(String, String)]) -> Result<(), ModelError> {
        let config = serde_json::to_string(&self.config).map_err(|e| ModelError::Config(e.to_string()))?;
        let mut meta = vec![("config".to_string(), config)];
        if let Some((k, _)) = extra.iter().find(|(k, _)| k == "config") {
            return Err(ModelError::Config(format!("metadata key `{k}` is reserved")));
        }
        meta.extend_from_slice(extra);
        write_params(w, &self.params, &meta)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`Model::save`], returning the extra metadata.
    pub fn load<R: BufRead>(r: R) -> Result<(Self, Vec<(String, String)>), ModelError> {
        let (params, mut meta) = read_params(r)?;
        let pos = meta
            .iter()
            .position(|(k, _)| k == "config")
            .ok_or_else(|| ModelError::Config("checkpoint has no config".into()))?;
        let (_, config) = meta.remove(pos);
        let config: ModelConfig = serde_json::from_str(&config).map_err(|e| ModelError::Config(e.to_string()))?;
        Ok((Model::from_params(config, params)?, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::walker::WalkStrategy;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_graph() -> Graph {
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5), (5, 3)];
        let features = vec![
            1.0, 0.0, 0.5, //
            0.9, 0.1, 0.0, //
            0.7, 0.3, 0.2, //
            0.0, 1.0, 0.4, //
            0.1, 0.8, 0.0, //
            0.2, 0.9, 1.0,
        ];
        Graph::from_edges(6, &edges, features, 3).unwrap()
    }

    fn toy_model(share: bool, seed: u64) -> Model {
        let mut cfg = ModelConfig::new(3, 2);
        cfg.hidden = 4;
        cfg.share_params = share;
        Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn hoods(g: &Graph, k: usize, r: usize, seed: u64) -> Vec<WalkTable> {
        vec![
            WalkTable::sample(g, &WalkStrategy::bfs(k, r).unwrap(), seed, 0).unwrap(),
            WalkTable::sample(g, &WalkStrategy::dfs(k, r).unwrap(), seed, 1).unwrap(),
        ]
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn parameter_layout() {
        let m = toy_model(false, 0);
        let names: Vec<_> = m.params.names().collect();
        assert_eq!(names.len(), 2 * (9 + 2) + 1);
        assert!(names.contains(&"bfs.w_z") && names.contains(&"dfs.att1"));
        assert_eq!(m.params.value("classifier").unwrap().shape(), &[16, 2]);
        assert_eq!(m.params.value("dfs.u_h").unwrap().shape(), &[4, 4]);
        assert_eq!(toy_model(true, 0).params.len(), 9 + 2 + 1);
    }

    #[test]
    fn output_rows_are_distributions() {
        let g = toy_graph();
        let m = toy_model(false, 1);
        let h = hoods(&g, 3, 2, 5);
        let p = m.predict(&g, &h).unwrap();
        assert_eq!(p.shape(), &[6, 2]);
        for i in 0..6 {
            assert!((p.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert_eq!(p, m.predict(&g, &h).unwrap());
        assert_eq!(m.embed(&g, &h).unwrap().shape(), &[6, 16]);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let g = toy_graph();
        let m = toy_model(false, 2);
        let tape = Tape::new();
        let out = m.forward(&tape, &g, &hoods(&g, 4, 6, 1), true, &mut rng()).unwrap();
        assert_eq!(out.attention.len(), 2);
        for t in out.attention.iter().flatten() {
            assert_eq!(t.shape(), &[6, 6]);
            for i in 0..6 {
                assert!((t.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn input_checks() {
        let g = toy_graph();
        let m = toy_model(false, 0);
        let mut h = hoods(&g, 3, 2, 0);
        h.swap(0, 1);
        assert!(matches!(m.predict(&g, &h), Err(ModelError::Input(_))));
        assert!(matches!(m.predict(&g, &h[..1]), Err(ModelError::Input(_))));
        let mut cfg = m.config.clone();
        cfg.hidden = 0;
        assert!(matches!(Model::new(cfg, &mut rng()), Err(ModelError::Config(_))));
    }

    #[test]
    fn fused_forward_matches_composed_layers() {
        let g = toy_graph();
        let m = toy_model(false, 3);
        let h = hoods(&g, 3, 2, 9);
        let targets: Vec<usize> = vec![0, 0, 0, 1, 1, 1];
        let mask: Vec<u32> = (0..6).collect();

        let tape = Tape::new();
        let fused = m.forward(&tape, &g, &h, false, &mut rng()).unwrap();
        let fused_loss = cross_entropy(fused.probs, &mask, &targets).unwrap();
        let fused_probs = fused.probs.value();
        let fused_grads = tape.backward(fused_loss).unwrap();

        let tape = Tape::new();
        let vars = m.place(&tape, &m.params).unwrap();
        let classifier = tape.param(&m.params, "classifier").unwrap();
        let mut rows = Vec::new();
        for i in 0..g.n() {
            let mut parts = Vec::new();
            for (s, table) in h.iter().enumerate() {
                let paths: Vec<_> = (0..table.walks_per_node)
                    .map(|j| encode_path(&tape, &g, table.path(i, j), &vars[s].gru).unwrap())
                    .collect();
                let (emb, w) = intra_strategy_combine(&paths, &vars[s].heads, 0.2, Activation::Elu).unwrap();
                for (hd, w) in w.iter().enumerate() {
                    let batched = &fused.attention[s][hd];
                    for (a, b) in w.data().iter().zip(batched.row(i)) {
                        assert!((a - b).abs() < 1e-12);
                    }
                }
                parts.push(emb);
            }
            rows.push(classify(inter_strategy_combine(&parts).unwrap(), classifier).unwrap());
        }
        let probs = concat(&rows, 0).unwrap();
        let loss = cross_entropy(probs, &mask, &targets).unwrap();
        assert!(probs.value().max_abs_diff(&fused_probs) < 1e-10);
        let grads = tape.backward(loss).unwrap();

        for name in m.params.names() {
            let a = fused_grads.param(name).unwrap();
            let b = grads.param(name).unwrap();
            assert!(a.max_abs_diff(b) < 1e-10, "{name}");
        }
    }

    #[test]
    fn full_model_gradients() {
        let g = toy_graph();
        for share in [false, true] {
            let m = toy_model(share, 4);
            let h = hoods(&g, 3, 2, 11);
            let report = grad_check(
                |t, ps| {
                    let out = m.forward_with(t, ps, &g, &h, false, &mut rng()).map_err(unwrap_ad)?;
                    cross_entropy(out.probs, &[0, 1, 3, 5], &[0, 0, 1, 1]).map_err(unwrap_ad)
                },
                &m.params,
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{report:?}");
            assert!(report.checked > 0);
        }
    }

    fn unwrap_ad(e: ModelError) -> AutodiffError {
        match e {
            ModelError::Autodiff(e) => e,
            other => AutodiffError::Shape(other.to_string()),
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = toy_model(false, 6);
        let mut buf = Vec::new();
        let extra = vec![("walks".to_string(), "[]".to_string())];
        m.save(&mut buf, &extra).unwrap();
        let (back, meta) = Model::load(&buf[..]).unwrap();
        assert_eq!(meta, extra);
        assert_eq!(back.config, m.config);
        for (name, p) in m.params.iter() {
            let a: Vec<u64> = p.value.data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u64> = back.params.value(name).unwrap().data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        let mut cfg = m.config.clone();
        cfg.hidden = 5;
        assert!(Model::from_params(cfg, m.params.clone()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]
        #[test]
        fn embedding_width_identity(hidden in 1usize..6, heads in 1usize..4, strategies in 1usize..4, share: bool) {
            let g = toy_graph();
            let mut cfg = ModelConfig::new(3, 2);
            cfg.hidden = hidden;
            cfg.heads = heads;
            cfg.share_params = share;
            cfg.strategies = (0..strategies).map(|s| format!("s{s}")).collect();
            let m = Model::new(cfg, &mut rng()).unwrap();
            let tables: Vec<_> = (0..strategies)
                .map(|s| {
                    let ws = WalkStrategy::new(format!("s{s}"), 1.0, 1.0, 2, 2).unwrap();
                    WalkTable::sample(&g, &ws, 0, s as u64).unwrap()
                })
                .collect();
            let emb = m.embed(&g, &tables).unwrap();
            prop_assert_eq!(emb.shape(), &[6, heads * hidden * strategies]);
            prop_assert_eq!(m.config.d_final(), heads * hidden * strategies);
        }
    }
}
