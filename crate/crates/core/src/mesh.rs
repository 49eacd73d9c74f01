//! Static mesh graphs, channel schemas, trajectories and the feature
//! construction that turns them into model inputs.
//!
//! Edges are directed `(sender, receiver)` pairs. Every undirected mesh edge
//! is stored in both directions and the list is kept sorted by
//! `(receiver, sender)`, so the incoming edges of a node are contiguous and
//! are always summed in the same order.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Named state channels and which of them feed or leave the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSchema {
    names: Vec<String>,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    direct: Vec<bool>,
}

impl ChannelSchema {
    /// Builds a schema from channel names. `direct` lists output channels that
    /// are predicted as absolute values instead of increments.
    pub fn new<S: AsRef<str>>(
        names: &[S],
        inputs: &[S],
        outputs: &[S],
        direct: &[S],
    ) -> Result<Self> {
        let names: Vec<String> = names.iter().map(|n| n.as_ref().to_string()).collect();
        if names.is_empty() {
            return Err(Error::Validation("channel schema has no channels".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::Validation(format!("duplicate channel name {n:?}")));
            }
        }
        let lookup = |n: &S| -> Result<usize> {
            names
                .iter()
                .position(|m| m == n.as_ref())
                .ok_or_else(|| Error::Validation(format!("unknown channel {:?}", n.as_ref())))
        };
        let inputs = inputs.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        let outputs = outputs.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        if outputs.is_empty() {
            return Err(Error::Validation("schema needs at least one output channel".into()));
        }
        let direct_idx = direct.iter().map(lookup).collect::<Result<Vec<_>>>()?;
        for d in &direct_idx {
            if !outputs.contains(d) {
                return Err(Error::Validation(format!(
                    "direct channel {:?} is not an output channel",
                    names[*d]
                )));
            }
        }
        let direct = outputs.iter().map(|o| direct_idx.contains(o)).collect();
        Ok(Self {
            names,
            inputs,
            outputs,
            direct,
        })
    }

    /// Every channel is both an input and an incrementally predicted output.
    pub fn all_delta<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        Self::new(names, names, names, &[])
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn channel_count(&self) -> usize {
        self.names.len()
    }

    /// Indices (into `names`) of the dynamical model inputs.
    pub fn inputs(&self) -> &[usize] {
        &self.inputs
    }

    /// Indices (into `names`) of the predicted channels, in output order.
    pub fn outputs(&self) -> &[usize] {
        &self.outputs
    }

    /// Per output channel: true when predicted directly rather than as a delta.
    pub fn direct(&self) -> &[bool] {
        &self.direct
    }

    pub fn output_count(&self) -> usize {
        self.outputs.len()
    }

    pub fn input_names(&self) -> Vec<&str> {
        self.inputs.iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn output_names(&self) -> Vec<&str> {
        self.outputs.iter().map(|&i| self.names[i].as_str()).collect()
    }

    pub fn direct_names(&self) -> Vec<&str> {
        self.outputs
            .iter()
            .zip(&self.direct)
            .filter(|(_, d)| **d)
            .map(|(&i, _)| self.names[i].as_str())
            .collect()
    }
}

/// A fixed simulation mesh: node positions, node types and directed edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    coords: Array2<f64>,
    node_types: Vec<u32>,
    n_types: usize,
    edges: Vec<[usize; 2]>,
}

impl Mesh {
    /// Validates a directed edge list and sorts it into canonical
    /// `(receiver, sender)` order.
    pub fn new(
        coords: Array2<f64>,
        node_types: Vec<u32>,
        n_types: usize,
        mut edges: Vec<[usize; 2]>,
    ) -> Result<Self> {
        let n = coords.nrows();
        if n < 2 {
            return Err(Error::Validation(format!("mesh needs at least 2 nodes, got {n}")));
        }
        let dim = coords.ncols();
        if !(2..=3).contains(&dim) {
            return Err(Error::Validation(format!("mesh dimension must be 2 or 3, got {dim}")));
        }
        if node_types.len() != n {
            return Err(Error::Validation(format!(
                "{} node types for {n} nodes",
                node_types.len()
            )));
        }
        if n_types == 0 {
            return Err(Error::Validation("node type vocabulary is empty".into()));
        }
        if let Some((i, t)) = node_types
            .iter()
            .enumerate()
            .find(|(_, &t)| t as usize >= n_types)
        {
            return Err(Error::Validation(format!(
                "node {i} has type {t}, vocabulary size is {n_types}"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::Validation("non-finite node coordinate".into()));
        }
        for &[a, b] in &edges {
            if a >= n || b >= n {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) references a node >= node count {n}"
                )));
            }
            if a == b {
                return Err(Error::Validation(format!("self-loop on node {a}")));
            }
        }
        edges.sort_unstable_by_key(|&[src, dst]| (dst, src));
        if let Some(w) = edges.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::Validation(format!(
                "duplicate edge ({}, {})",
                w[0][0], w[0][1]
            )));
        }
        for &[a, b] in &edges {
            if edges.binary_search_by_key(&(a, b), |&[s, d]| (d, s)).is_err() {
                return Err(Error::Validation(format!(
                    "edge ({a}, {b}) has no reverse edge ({b}, {a})"
                )));
            }
        }
        Ok(Self {
            coords,
            node_types,
            n_types,
            edges,
        })
    }

    /// Builds a mesh from undirected pairs: adds both directions, drops
    /// duplicates, then validates.
    pub fn from_undirected(
        coords: Array2<f64>,
        node_types: Vec<u32>,
        n_types: usize,
        pairs: &[[usize; 2]],
    ) -> Result<Self> {
        Self::new(coords, node_types, n_types, symmetrize(pairs))
    }

    pub fn n_nodes(&self) -> usize {
        self.coords.nrows()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn n_types(&self) -> usize {
        self.n_types
    }

    pub fn coords(&self) -> ArrayView2<'_, f64> {
        self.coords.view()
    }

    pub fn node_types(&self) -> &[u32] {
        &self.node_types
    }

    /// Directed edges as `[sender, receiver]`, sorted by `(receiver, sender)`.
    pub fn edges(&self) -> &[[usize; 2]] {
        &self.edges
    }

    /// Neighbor lists; symmetric because the edge set is.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_nodes()];
        for &[src, dst] in &self.edges {
            adj[dst].push(src);
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_nodes()];
        for &[_, dst] in &self.edges {
            deg[dst] += 1;
        }
        deg
    }

    /// Same topology with every coordinate shifted by `offset`.
    pub fn translated(&self, offset: &[f64]) -> Self {
        let mut m = self.clone();
        for mut row in m.coords.rows_mut() {
            for (c, o) in row.iter_mut().zip(offset) {
                *c += o;
            }
        }
        m
    }
}

/// Adds the reverse of every pair and drops duplicates.
pub fn symmetrize(pairs: &[[usize; 2]]) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = pairs
        .iter()
        .flat_map(|&[a, b]| [[a, b], [b, a]])
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Per-edge `(x_src - x_dst, |x_src - x_dst|)`, in mesh edge order.
pub fn build_edge_features(mesh: &Mesh) -> Array2<f64> {
    let dim = mesh.dim();
    let coords = mesh.coords();
    let mut out = Array2::zeros((mesh.n_edges(), dim + 1));
    for (e, &[src, dst]) in mesh.edges().iter().enumerate() {
        let mut norm2 = 0.0;
        for d in 0..dim {
            let dx = coords[[src, d]] - coords[[dst, d]];
            out[[e, d]] = dx;
            norm2 += dx * dx;
        }
        out[[e, dim]] = norm2.sqrt();
    }
    out
}

pub fn one_hot(node_type: usize, n_types: usize) -> Result<Array1<f64>> {
    if node_type >= n_types {
        return Err(Error::Validation(format!(
            "node type {node_type} outside vocabulary of size {n_types}"
        )));
    }
    let mut v = Array1::zeros(n_types);
    v[node_type] = 1.0;
    Ok(v)
}

/// A trajectory of node states on a fixed mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    mesh: Mesh,
    schema: ChannelSchema,
    states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn new(mesh: Mesh, schema: ChannelSchema, states: Vec<Array2<f64>>) -> Result<Self> {
        if states.len() < 2 {
            return Err(Error::Validation(format!(
                "trajectory needs at least 2 time steps, got {}",
                states.len()
            )));
        }
        let shape = (mesh.n_nodes(), schema.channel_count());
        for (t, s) in states.iter().enumerate() {
            if s.dim() != shape {
                return Err(Error::Validation(format!(
                    "state {t} has shape {:?}, expected {shape:?}",
                    s.dim()
                )));
            }
        }
        Ok(Self {
            mesh,
            schema,
            states,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn schema(&self) -> &ChannelSchema {
        &self.schema
    }

    pub fn states(&self) -> &[Array2<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Replaces the schema; channel names must be unchanged.
    pub fn with_schema(mut self, schema: ChannelSchema) -> Result<Self> {
        if schema.names() != self.schema.names() {
            return Err(Error::Validation(format!(
                "schema channels {:?} do not match trajectory channels {:?}",
                schema.names(),
                self.schema.names()
            )));
        }
        self.schema = schema;
        Ok(self)
    }
}

/// Model-ready features for one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphEncoding {
    pub node_features: Array2<f64>,
    pub edge_features: Array2<f64>,
}

/// `concat(state[inputs], one_hot(type))` per node.
pub fn node_features(mesh: &Mesh, schema: &ChannelSchema, state: ArrayView2<'_, f64>) -> Array2<f64> {
    let n_in = schema.inputs().len();
    let mut out = Array2::zeros((mesh.n_nodes(), n_in + mesh.n_types()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        for (c, &ch) in schema.inputs().iter().enumerate() {
            row[c] = state[[i, ch]];
        }
        row[n_in + mesh.node_types()[i] as usize] = 1.0;
    }
    out
}

pub fn encode_graph(trajectory: &Trajectory, t: usize) -> Result<GraphEncoding> {
    let state = trajectory.states().get(t).ok_or_else(|| {
        Error::Validation(format!(
            "time index {t} out of range for trajectory of length {}",
            trajectory.len()
        ))
    })?;
    Ok(GraphEncoding {
        node_features: node_features(trajectory.mesh(), trajectory.schema(), state.view()),
        edge_features: build_edge_features(trajectory.mesh()),
    })
}

/// Width of the node feature vector for a schema and vocabulary.
pub fn node_feature_width(schema: &ChannelSchema, n_types: usize) -> usize {
    schema.inputs().len() + n_types
}

/// Selects the output channels of a full state, in output order.
pub fn output_channels(schema: &ChannelSchema, state: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros((state.nrows(), schema.output_count()));
    for (g, &ch) in schema.outputs().iter().enumerate() {
        out.slice_mut(s![.., g]).assign(&state.slice(s![.., ch]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn two_nodes(a: [f64; 2], b: [f64; 2]) -> Mesh {
        Mesh::from_undirected(array![[a[0], a[1]], [b[0], b[1]]], vec![0, 0], 1, &[[0, 1]]).unwrap()
    }

    #[test]
    fn edge_feature_examples() {
        let f = build_edge_features(&two_nodes([1.0, 0.0], [0.0, 0.0]));
        // edges sorted by receiver: (1 -> 0) first, then (0 -> 1)
        assert_eq!(f.row(1).to_vec(), vec![1.0, 0.0, 1.0]);
        assert_eq!(f.row(0).to_vec(), vec![-1.0, 0.0, 1.0]);

        let f = build_edge_features(&two_nodes([2.0, 5.0], [2.0, 5.0]));
        assert_eq!(f.row(0).to_vec(), vec![0.0, 0.0, 0.0]);

        let f = build_edge_features(&two_nodes([3.0, 4.0], [0.0, 0.0]));
        assert_eq!(f.row(1).to_vec(), vec![3.0, 4.0, 5.0]);
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot(0, 1).unwrap().to_vec(), vec![1.0]);
        assert_eq!(one_hot(2, 4).unwrap().to_vec(), vec![0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(one_hot(4, 4), Err(Error::Validation(_))));
    }

    #[test]
    fn encode_graph_concatenates_inputs_and_type() {
        let mesh = Mesh::from_undirected(array![[0.0, 0.0], [1.0, 0.0]], vec![1, 0], 2, &[[0, 1]]).unwrap();
        let schema = ChannelSchema::new(&["u", "v"], &["u"], &["u", "v"], &[]).unwrap();
        let states = vec![array![[0.5, 9.0], [0.0, 0.0]], array![[0.7, 1.0], [0.0, 0.0]]];
        let traj = Trajectory::new(mesh, schema, states).unwrap();
        let e0 = encode_graph(&traj, 0).unwrap();
        assert_eq!(e0.node_features.row(0).to_vec(), vec![0.5, 0.0, 1.0]);
        assert_eq!(e0.node_features.row(1).to_vec(), vec![0.0, 1.0, 0.0]);
        let e1 = encode_graph(&traj, 1).unwrap();
        assert_eq!(e0.edge_features, e1.edge_features);
        assert!(encode_graph(&traj, 2).is_err());
    }

    #[test]
    fn mesh_validation() {
        let c = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert!(Mesh::new(c.clone(), vec![0; 3], 1, vec![[0, 1]]).is_err());
        assert!(Mesh::new(c.clone(), vec![0; 3], 1, vec![[1, 1]]).is_err());
        assert!(Mesh::new(c.clone(), vec![0; 3], 1, vec![[0, 3], [3, 0]]).is_err());
        assert!(Mesh::new(c.clone(), vec![0, 0, 2], 2, vec![]).is_err());
        let m = Mesh::from_undirected(c, vec![0; 3], 1, &[[1, 0], [2, 1], [0, 1]]).unwrap();
        assert_eq!(m.edges(), &[[1, 0], [0, 1], [2, 1], [1, 2]]);
    }

    #[test]
    fn schema_rules() {
        assert!(ChannelSchema::new(&["u", "u"], &["u"], &["u"], &[]).is_err());
        assert!(ChannelSchema::new(&["u"], &["u"], &["w"], &[]).is_err());
        assert!(ChannelSchema::new(&["u", "p"], &["u"], &["u"], &["p"]).is_err());
        let s = ChannelSchema::new(&["u", "v", "p"], &["u", "v", "p"], &["u", "p"], &["p"]).unwrap();
        assert_eq!(s.direct(), &[false, true]);
        assert_eq!(s.direct_names(), vec!["p"]);
    }
}
