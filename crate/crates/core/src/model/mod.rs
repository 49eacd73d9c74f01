//! Encode-process-decode graph network over a mesh.
//!
//! The forward pass is exposed in stages ([`Tape`]) so that a distributed
//! runtime can refresh halo rows between message-passing blocks, and the
//! backward pass mirrors those stages in reverse.

pub(crate) mod checkpoint;
pub mod mlp;

pub use checkpoint::{decode_params, encode_params, read_params, write_params, PARAMS_MAGIC};
pub use mlp::{LayerNorm, Linear, MlpCache, MlpParams};

use ndarray::{s, Array2, ArrayView2, ArrayViewMut2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{ChannelSchema, GraphEncoding, Mesh};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Number of message-passing blocks (K).
    pub message_passing_steps: usize,
    /// Latent width of node and edge vectors (l).
    pub latent: usize,
    pub node_in: usize,
    pub edge_in: usize,
    pub node_out: usize,
    /// Hidden layers per MLP, each `latent` wide.
    pub hidden_layers: usize,
    /// Layer norm after encoder and block MLPs.
    pub layer_norm: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("model config: {what}")));
        if self.message_passing_steps == 0 {
            return bad("message_passing_steps must be >= 1");
        }
        if self.latent == 0 {
            return bad("latent must be >= 1");
        }
        if self.node_in == 0 || self.edge_in == 0 || self.node_out == 0 {
            return bad("feature widths must be >= 1");
        }
        Ok(())
    }

    fn widths(&self, input: usize, output: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat(self.latent).take(self.hidden_layers));
        w.push(output);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub edge_mlp: MlpParams,
    pub node_mlp: MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub node_encoder: MlpParams,
    pub edge_encoder: MlpParams,
    pub blocks: Vec<BlockParams>,
    pub decoder: MlpParams,
}

/// Draws all weights in declaration order from one seeded stream.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = config.latent;
    let ln = config.layer_norm;
    let node_encoder = MlpParams::init(&config.widths(config.node_in, l), ln, &mut rng);
    let edge_encoder = MlpParams::init(&config.widths(config.edge_in, l), ln, &mut rng);
    let blocks = (0..config.message_passing_steps)
        .map(|_| BlockParams {
            edge_mlp: MlpParams::init(&config.widths(3 * l, l), ln, &mut rng),
            node_mlp: MlpParams::init(&config.widths(2 * l, l), ln, &mut rng),
        })
        .collect();
    let decoder = MlpParams::init(&config.widths(l, config.node_out), false, &mut rng);
    Ok(ModelParams {
        config: *config,
        node_encoder,
        edge_encoder,
        blocks,
        decoder,
    })
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            node_encoder: self.node_encoder.zeros_like(),
            edge_encoder: self.edge_encoder.zeros_like(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockParams {
                    edge_mlp: b.edge_mlp.zeros_like(),
                    node_mlp: b.node_mlp.zeros_like(),
                })
                .collect(),
            decoder: self.decoder.zeros_like(),
        }
    }

    /// Named tensors in declaration order.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        self.node_encoder.visit("node_encoder", &mut out);
        self.edge_encoder.visit("edge_encoder", &mut out);
        for (k, b) in self.blocks.iter().enumerate() {
            b.edge_mlp.visit(&format!("blocks.{k}.edge_mlp"), &mut out);
            b.node_mlp.visit(&format!("blocks.{k}.node_mlp"), &mut out);
        }
        self.decoder.visit("decoder", &mut out);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        self.node_encoder.visit_mut(&mut out);
        self.edge_encoder.visit_mut(&mut out);
        for b in &mut self.blocks {
            b.edge_mlp.visit_mut(&mut out);
            b.node_mlp.visit_mut(&mut out);
        }
        self.decoder.visit_mut(&mut out);
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for (_, t) in self.tensors() {
            flat.extend_from_slice(t);
        }
        flat
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[offset..offset + t.len()]);
            offset += t.len();
        }
        assert_eq!(offset, flat.len(), "flat vector length mismatch");
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Topology seen by one forward pass. Receivers index the first `n_active`
/// rows; the remaining rows (halo slots) only ever act as senders.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphTopology {
    pub n_nodes: usize,
    pub n_active: usize,
    pub senders: Vec<usize>,
    pub receivers: Vec<usize>,
    /// Edges whose latent is never advanced by the processor. Empty means none.
    pub frozen: Vec<bool>,
}

impl GraphTopology {
    pub fn from_edges(n_nodes: usize, n_active: usize, edges: &[[usize; 2]]) -> Result<Self> {
        for &[s, r] in edges {
            if s >= n_nodes || r >= n_active {
                return Err(Error::Validation(format!(
                    "edge ({s}, {r}) outside topology with {n_nodes} nodes, {n_active} active"
                )));
            }
        }
        Ok(Self {
            n_nodes,
            n_active,
            senders: edges.iter().map(|e| e[0]).collect(),
            receivers: edges.iter().map(|e| e[1]).collect(),
            frozen: Vec::new(),
        })
    }

    pub fn full(mesh: &Mesh) -> Self {
        Self::from_edges(mesh.n_nodes(), mesh.n_nodes(), mesh.edges()).expect("mesh edges are valid")
    }

    pub fn n_edges(&self) -> usize {
        self.senders.len()
    }

    fn is_frozen(&self, e: usize) -> bool {
        !self.frozen.is_empty() && self.frozen[e]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentState {
    pub node_latent: Array2<f64>,
    pub edge_latent: Array2<f64>,
}

/// Gradients flowing back through a [`LatentState`].
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrad {
    pub node: Array2<f64>,
    pub edge: Array2<f64>,
}

fn check_finite(a: &Array2<f64>, stage: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite value after {stage}")))
    }
}

fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::Validation(format!("{what} width {got}, model expects {want}")))
    }
}

pub fn encode(params: &ModelParams, encoding: &GraphEncoding) -> Result<LatentState> {
    let cfg = &params.config;
    check_width("node feature", encoding.node_features.ncols(), cfg.node_in)?;
    check_width("edge feature", encoding.edge_features.ncols(), cfg.edge_in)?;
    Ok(LatentState {
        node_latent: params.node_encoder.apply(encoding.node_features.view()),
        edge_latent: params.edge_encoder.apply(encoding.edge_features.view()),
    })
}

#[derive(Debug, Clone)]
pub struct BlockCache {
    edge: MlpCache,
    node: MlpCache,
}

fn block_forward(block: &BlockParams, topo: &GraphTopology, state: &mut LatentState) -> BlockCache {
    let l = state.node_latent.ncols();
    let m = topo.n_edges();
    let na = topo.n_active;
    let v = &state.node_latent;
    let mut edge_in = Array2::zeros((m, 3 * l));
    for (e, mut row) in edge_in.rows_mut().into_iter().enumerate() {
        row.slice_mut(s![..l]).assign(&state.edge_latent.row(e));
        row.slice_mut(s![l..2 * l]).assign(&v.row(topo.senders[e]));
        row.slice_mut(s![2 * l..]).assign(&v.row(topo.receivers[e]));
    }
    let (mut edge_delta, edge_cache) = block.edge_mlp.forward(edge_in.view());
    for e in 0..m {
        if topo.is_frozen(e) {
            edge_delta.row_mut(e).fill(0.0);
        }
    }
    state.edge_latent += &edge_delta;

    let mut node_in = Array2::zeros((na, 2 * l));
    node_in.slice_mut(s![.., ..l]).assign(&state.node_latent.slice(s![..na, ..]));
    {
        let mut agg = node_in.slice_mut(s![.., l..]);
        for (e, &r) in topo.receivers.iter().enumerate() {
            let mut row = agg.row_mut(r);
            row += &state.edge_latent.row(e);
        }
    }
    let (node_delta, node_cache) = block.node_mlp.forward(node_in.view());
    let mut active = state.node_latent.slice_mut(s![..na, ..]);
    active += &node_delta;
    BlockCache {
        edge: edge_cache,
        node: node_cache,
    }
}

fn block_backward(block: &BlockParams, topo: &GraphTopology, cache: &BlockCache, g: &mut LatentGrad, grads: &mut BlockParams) {
    let l = g.node.ncols();
    let na = topo.n_active;
    let d_node_in = block
        .node_mlp
        .backward(&cache.node, g.node.slice(s![..na, ..]), &mut grads.node_mlp);
    {
        let mut active = g.node.slice_mut(s![..na, ..]);
        active += &d_node_in.slice(s![.., ..l]);
    }
    let d_agg = d_node_in.slice(s![.., l..]);
    for (e, &r) in topo.receivers.iter().enumerate() {
        let mut row = g.edge.row_mut(e);
        row += &d_agg.row(r);
    }
    let mut d_edge_out = g.edge.clone();
    for e in 0..topo.n_edges() {
        if topo.is_frozen(e) {
            d_edge_out.row_mut(e).fill(0.0);
        }
    }
    let d_edge_in = block.edge_mlp.backward(&cache.edge, d_edge_out.view(), &mut grads.edge_mlp);
    g.edge += &d_edge_in.slice(s![.., ..l]);
    for (e, (&sdr, &rcv)) in topo.senders.iter().zip(&topo.receivers).enumerate() {
        let row = d_edge_in.row(e);
        {
            let mut d = g.node.row_mut(sdr);
            d += &row.slice(s![l..2 * l]);
        }
        let mut d = g.node.row_mut(rcv);
        d += &row.slice(s![2 * l..]);
    }
}

/// One message-passing block:
/// `e' = e + EdgeMLP(e, v_sender, v_receiver)`, then
/// `v' = v + NodeMLP(v, sum of incoming e')` for every active node.
pub fn process_block(block: &BlockParams, topo: &GraphTopology, state: &LatentState) -> LatentState {
    let mut out = state.clone();
    block_forward(block, topo, &mut out);
    out
}

/// Stage-by-stage forward pass that records what the backward pass needs.
pub struct Tape<'a> {
    params: &'a ModelParams,
    topo: &'a GraphTopology,
    state: LatentState,
    node_enc: MlpCache,
    edge_enc: MlpCache,
    blocks: Vec<BlockCache>,
    decoder: Option<MlpCache>,
}

impl<'a> Tape<'a> {
    pub fn encode(
        params: &'a ModelParams,
        topo: &'a GraphTopology,
        node_features: ArrayView2<'_, f64>,
        edge_features: ArrayView2<'_, f64>,
    ) -> Result<Self> {
        let cfg = &params.config;
        check_width("node feature", node_features.ncols(), cfg.node_in)?;
        check_width("edge feature", edge_features.ncols(), cfg.edge_in)?;
        if node_features.nrows() != topo.n_nodes || edge_features.nrows() != topo.n_edges() {
            return Err(Error::Validation(format!(
                "features for {} nodes / {} edges, topology has {} / {}",
                node_features.nrows(),
                edge_features.nrows(),
                topo.n_nodes,
                topo.n_edges()
            )));
        }
        let (node_latent, node_enc) = params.node_encoder.forward(node_features);
        let (edge_latent, edge_enc) = params.edge_encoder.forward(edge_features);
        check_finite(&node_latent, "node encoder")?;
        check_finite(&edge_latent, "edge encoder")?;
        Ok(Self {
            params,
            topo,
            state: LatentState {
                node_latent,
                edge_latent,
            },
            node_enc,
            edge_enc,
            blocks: Vec::with_capacity(params.blocks.len()),
            decoder: None,
        })
    }

    pub fn state(&self) -> &LatentState {
        &self.state
    }

    /// Node latent rows, for halo refresh between blocks.
    pub fn node_latent_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.state.node_latent.view_mut()
    }

    pub fn blocks_done(&self) -> usize {
        self.blocks.len()
    }

    pub fn run_block(&mut self) -> Result<()> {
        let k = self.blocks.len();
        let block = self
            .params
            .blocks
            .get(k)
            .ok_or_else(|| Error::Validation(format!("model has only {k} blocks")))?;
        let cache = block_forward(block, self.topo, &mut self.state);
        check_finite(&self.state.edge_latent, &format!("block {k}"))?;
        check_finite(&self.state.node_latent, &format!("block {k}"))?;
        self.blocks.push(cache);
        Ok(())
    }

    /// Decodes the active rows.
    pub fn decode(&mut self) -> Result<Array2<f64>> {
        let na = self.topo.n_active;
        let (out, cache) = self
            .params
            .decoder
            .forward(self.state.node_latent.slice(s![..na, ..]));
        check_finite(&out, "decoder")?;
        self.decoder = Some(cache);
        Ok(out)
    }

    /// Starts the backward pass from the gradient of the decoded rows.
    pub fn backward_decoder(&self, d_out: ArrayView2<'_, f64>, grads: &mut ModelParams) -> LatentGrad {
        let cache = self.decoder.as_ref().expect("decode before backward");
        let d_active = self.params.decoder.backward(cache, d_out, &mut grads.decoder);
        let mut node = Array2::zeros(self.state.node_latent.raw_dim());
        node.slice_mut(s![..self.topo.n_active, ..]).assign(&d_active);
        LatentGrad {
            node,
            edge: Array2::zeros(self.state.edge_latent.raw_dim()),
        }
    }

    /// Propagates through block `k`; blocks must be visited last to first.
    pub fn backward_block(&self, k: usize, g: &mut LatentGrad, grads: &mut ModelParams) {
        block_backward(&self.params.blocks[k], self.topo, &self.blocks[k], g, &mut grads.blocks[k]);
    }

    pub fn backward_encoder(&self, g: &LatentGrad, grads: &mut ModelParams) {
        self.params
            .node_encoder
            .backward(&self.node_enc, g.node.view(), &mut grads.node_encoder);
        self.params
            .edge_encoder
            .backward(&self.edge_enc, g.edge.view(), &mut grads.edge_encoder);
    }
}

/// Full forward pass on one topology; returns predictions for active rows.
pub fn forward(params: &ModelParams, topo: &GraphTopology, encoding: &GraphEncoding) -> Result<Array2<f64>> {
    let mut tape = Tape::encode(params, topo, encoding.node_features.view(), encoding.edge_features.view())?;
    for _ in 0..params.blocks.len() {
        tape.run_block()?;
    }
    tape.decode()
}

/// Next state from the current one and a physical-unit model output:
/// delta channels add, direct channels replace, other channels carry over.
pub fn apply_delta(q: ArrayView2<'_, f64>, p: ArrayView2<'_, f64>, schema: &ChannelSchema) -> Result<Array2<f64>> {
    if q.ncols() != schema.channel_count() || p.ncols() != schema.output_count() || q.nrows() != p.nrows() {
        return Err(Error::Validation(format!(
            "apply_delta shapes: state {:?}, output {:?}, schema {} channels / {} outputs",
            q.dim(),
            p.dim(),
            schema.channel_count(),
            schema.output_count()
        )));
    }
    let mut next = q.to_owned();
    for (g, (&ch, &direct)) in schema.outputs().iter().zip(schema.direct()).enumerate() {
        let mut col = next.column_mut(ch);
        if direct {
            col.assign(&p.column(g));
        } else {
            col += &p.column(g);
        }
    }
    Ok(next)
}

/// Sum of incoming edge rows per receiver, computed on a dense adjacency
/// count matrix; used as a cross-check of the scatter-based aggregation.
pub fn dense_aggregate(n_active: usize, receivers: &[usize], edge_rows: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut incidence = Array2::<f64>::zeros((n_active, receivers.len()));
    for (e, &r) in receivers.iter().enumerate() {
        incidence[[r, e]] = 1.0;
    }
    incidence.dot(&edge_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sum_mlp(inputs: usize) -> MlpParams {
        MlpParams {
            layers: vec![Linear {
                weight: Array2::ones((inputs, 1)),
                bias: ndarray::Array1::zeros(1),
            }],
            norm: None,
        }
    }

    fn two_node_topo() -> GraphTopology {
        GraphTopology::from_edges(2, 2, &[[1, 0], [0, 1]]).unwrap()
    }

    #[test]
    fn hand_evaluated_block() {
        let block = BlockParams {
            edge_mlp: sum_mlp(3),
            node_mlp: sum_mlp(2),
        };
        let state = LatentState {
            node_latent: array![[1.0], [2.0]],
            edge_latent: array![[0.5], [0.5]],
        };
        let out = process_block(&block, &two_node_topo(), &state);
        assert_eq!(out.edge_latent, array![[4.0], [4.0]]);
        assert_eq!(out.node_latent, array![[6.0], [8.0]]);
    }

    #[test]
    fn zero_mlps_are_pure_residual() {
        let cfg = ModelConfig {
            message_passing_steps: 1,
            latent: 3,
            node_in: 2,
            edge_in: 3,
            node_out: 1,
            hidden_layers: 1,
            layer_norm: false,
        };
        let mut params = init_params(&cfg, 0).unwrap();
        params.blocks[0].edge_mlp = params.blocks[0].edge_mlp.zeros_like();
        params.blocks[0].node_mlp = params.blocks[0].node_mlp.zeros_like();
        let state = LatentState {
            node_latent: array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]],
            edge_latent: array![[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]],
        };
        assert_eq!(process_block(&params.blocks[0], &two_node_topo(), &state), state);
    }

    #[test]
    fn isolated_node_aggregates_nothing() {
        let topo = GraphTopology::from_edges(3, 3, &[[1, 0], [0, 1]]).unwrap();
        let agg = dense_aggregate(3, &topo.receivers, array![[1.0], [2.0]].view());
        assert_eq!(agg, array![[1.0], [2.0], [0.0]]);
        let block = BlockParams {
            edge_mlp: sum_mlp(3),
            node_mlp: sum_mlp(2),
        };
        let state = LatentState {
            node_latent: array![[1.0], [2.0], [5.0]],
            edge_latent: array![[0.5], [0.5]],
        };
        // node 2: v' = 5 + (5 + 0)
        assert_eq!(process_block(&block, &topo, &state).node_latent[[2, 0]], 10.0);
    }

    #[test]
    fn param_count_matches_layer_shapes() {
        let cfg = ModelConfig {
            message_passing_steps: 2,
            latent: 4,
            node_in: 3,
            edge_in: 3,
            node_out: 2,
            hidden_layers: 2,
            layer_norm: true,
        };
        let p = init_params(&cfg, 1).unwrap();
        let mlp = |i: usize, o: usize, ln: bool| i * 4 + 4 + 4 * 4 + 4 + 4 * o + o + if ln { 2 * o } else { 0 };
        let expected = mlp(3, 4, true) + mlp(3, 4, true) + 2 * (mlp(12, 4, true) + mlp(8, 4, true)) + mlp(4, 2, false);
        assert_eq!(expected, 546);
        assert_eq!(p.param_count(), expected);
    }

    #[test]
    fn init_is_seeded() {
        let cfg = ModelConfig {
            message_passing_steps: 2,
            latent: 4,
            node_in: 3,
            edge_in: 3,
            node_out: 2,
            hidden_layers: 2,
            layer_norm: true,
        };
        assert_eq!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 9).unwrap());
        assert_ne!(init_params(&cfg, 9).unwrap(), init_params(&cfg, 10).unwrap());
        let bad = ModelConfig {
            message_passing_steps: 0,
            ..cfg
        };
        assert!(init_params(&bad, 0).is_err());
    }

    #[test]
    fn apply_delta_rules() {
        let schema = ChannelSchema::new(&["u", "p"], &["u", "p"], &["u", "p"], &["p"]).unwrap();
        let q = array![[1.0, 3.0]];
        let p = array![[0.5, -2.0]];
        assert_eq!(apply_delta(q.view(), p.view(), &schema).unwrap(), array![[1.5, -2.0]]);
        let all = ChannelSchema::all_delta(&["u", "p"]).unwrap();
        assert_eq!(apply_delta(q.view(), Array2::zeros((1, 2)).view(), &all).unwrap(), q);
        assert!(apply_delta(q.view(), array![[1.0]].view(), &all).is_err());
    }
}
