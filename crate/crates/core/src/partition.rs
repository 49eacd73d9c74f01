//! Mesh partitioning with one-hop halo layers.
//!
//! Parts come from recursive coordinate bisection followed by a greedy
//! boundary refinement that lowers the edge cut under a balance cap.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Upper bound on `max owned / mean owned` kept by the refinement pass.
pub const MAX_BALANCE: f64 = 1.5;
const REFINE_PASSES: usize = 8;

/// Halo sets and send masks derived from a node-to-part assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaloSets {
    /// Per part, sorted global ids of nodes owned elsewhere but adjacent.
    pub halo: Vec<Vec<usize>>,
    /// `send_masks[src][dst]`: sorted nodes owned by `src` in the halo of `dst`.
    pub send_masks: Vec<Vec<Vec<usize>>>,
}

/// Applies the one-hop rule: `n` is in the halo of `p` iff it is not owned by
/// `p` and has an edge to a node owned by `p`.
pub fn identify_halos(mesh: &Mesh, owner: &[usize], parts: usize) -> HaloSets {
    let mut halo = vec![Vec::new(); parts];
    for &[src, dst] in mesh.edges() {
        let p = owner[dst];
        if owner[src] != p {
            halo[p].push(src);
        }
    }
    for h in &mut halo {
        h.sort_unstable();
        h.dedup();
    }
    let mut send_masks = vec![vec![Vec::new(); parts]; parts];
    for (d, h) in halo.iter().enumerate() {
        for &n in h {
            send_masks[owner[n]][d].push(n);
        }
    }
    HaloSets { halo, send_masks }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionPlan {
    parts: usize,
    owner: Vec<usize>,
    owned: Vec<Vec<usize>>,
    halo: Vec<Vec<usize>>,
    local_index: Vec<HashMap<usize, usize>>,
    send_masks: Vec<Vec<Vec<usize>>>,
    local_edges: Vec<Vec<[usize; 2]>>,
    local_edge_ids: Vec<Vec<usize>>,
}

impl PartitionPlan {
    /// Builds the full plan from an explicit owner array.
    pub fn from_owner(mesh: &Mesh, owner: Vec<usize>, parts: usize) -> Result<Self> {
        let n = mesh.n_nodes();
        if owner.len() != n {
            return Err(Error::Validation(format!(
                "owner array has {} entries for {n} nodes",
                owner.len()
            )));
        }
        if parts == 0 {
            return Err(Error::Validation("part count must be >= 1".into()));
        }
        if let Some(&p) = owner.iter().find(|&&p| p >= parts) {
            return Err(Error::Validation(format!("owner {p} >= part count {parts}")));
        }
        let mut owned = vec![Vec::new(); parts];
        for (node, &p) in owner.iter().enumerate() {
            owned[p].push(node);
        }
        let HaloSets { halo, send_masks } = identify_halos(mesh, &owner, parts);
        let local_index: Vec<HashMap<usize, usize>> = (0..parts)
            .map(|p| {
                owned[p]
                    .iter()
                    .chain(&halo[p])
                    .enumerate()
                    .map(|(local, &global)| (global, local))
                    .collect()
            })
            .collect();
        let mut local_edges = vec![Vec::new(); parts];
        let mut local_edge_ids = vec![Vec::new(); parts];
        for (e, &[src, dst]) in mesh.edges().iter().enumerate() {
            let p = owner[dst];
            local_edges[p].push([local_index[p][&src], local_index[p][&dst]]);
            local_edge_ids[p].push(e);
        }
        Ok(Self {
            parts,
            owner,
            owned,
            halo,
            local_index,
            send_masks,
            local_edges,
            local_edge_ids,
        })
    }

    /// Everything in one part.
    pub fn single(mesh: &Mesh) -> Self {
        Self::from_owner(mesh, vec![0; mesh.n_nodes()], 1).expect("trivial plan is valid")
    }

    pub fn parts(&self) -> usize {
        self.parts
    }

    pub fn owner(&self) -> &[usize] {
        &self.owner
    }

    pub fn owned(&self, part: usize) -> &[usize] {
        &self.owned[part]
    }

    pub fn halo(&self, part: usize) -> &[usize] {
        &self.halo[part]
    }

    /// Global ids of a part's local slots: owned nodes first, then halo nodes.
    pub fn local_nodes(&self, part: usize) -> Vec<usize> {
        self.owned[part].iter().chain(&self.halo[part]).copied().collect()
    }

    pub fn local_index(&self, part: usize, global: usize) -> Option<usize> {
        self.local_index[part].get(&global).copied()
    }

    pub fn send_mask(&self, src: usize, dst: usize) -> &[usize] {
        &self.send_masks[src][dst]
    }

    /// Edges whose receiver the part owns, as local `[sender, receiver]`.
    pub fn local_edges(&self, part: usize) -> &[[usize; 2]] {
        &self.local_edges[part]
    }

    /// Global edge indices matching [`Self::local_edges`].
    pub fn local_edge_ids(&self, part: usize) -> &[usize] {
        &self.local_edge_ids[part]
    }

    /// Total rows moved by one forward halo exchange.
    pub fn exchange_volume(&self) -> usize {
        self.send_masks.iter().flatten().map(Vec::len).sum()
    }

    pub fn export(&self, mesh: &Mesh) -> PlanExport {
        let mut send_masks = Vec::new();
        for s in 0..self.parts {
            for d in 0..self.parts {
                if !self.send_masks[s][d].is_empty() {
                    send_masks.push(SendMaskExport {
                        src: s,
                        dst: d,
                        nodes: self.send_masks[s][d].clone(),
                    });
                }
            }
        }
        PlanExport {
            parts: self.parts,
            owner: self.owner.clone(),
            owned: self.owned.clone(),
            halo: self.halo.clone(),
            send_masks,
            quality: quality(mesh, self),
        }
    }
}

/// JSON view of a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanExport {
    pub parts: usize,
    pub owner: Vec<usize>,
    pub owned: Vec<Vec<usize>>,
    pub halo: Vec<Vec<usize>>,
    pub send_masks: Vec<SendMaskExport>,
    pub quality: PartitionQuality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SendMaskExport {
    pub src: usize,
    pub dst: usize,
    pub nodes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PartitionQuality {
    /// Undirected edges whose endpoints lie in different parts.
    pub edge_cut: usize,
    /// Largest owned set over the mean owned size.
    pub balance: f64,
}

pub fn quality(mesh: &Mesh, plan: &PartitionPlan) -> PartitionQuality {
    let owner = plan.owner();
    let cut = mesh
        .edges()
        .iter()
        .filter(|&&[a, b]| owner[a] != owner[b])
        .count();
    let max = (0..plan.parts()).map(|p| plan.owned(p).len()).max().unwrap_or(0);
    let mean = mesh.n_nodes() as f64 / plan.parts() as f64;
    PartitionQuality {
        edge_cut: cut / 2,
        balance: max as f64 / mean,
    }
}

/// Splits `mesh` into `parts` parts. Deterministic for fixed inputs.
pub fn partition(mesh: &Mesh, parts: usize, seed: u64) -> Result<PartitionPlan> {
    let n = mesh.n_nodes();
    if parts == 0 || parts > n {
        return Err(Error::Validation(format!(
            "part count {parts} outside 1..={n}"
        )));
    }
    let mut owner = vec![0; n];
    let nodes: Vec<usize> = (0..n).collect();
    bisect(mesh, nodes, 0, parts, &mut owner);
    refine(mesh, &mut owner, parts, seed);
    PartitionPlan::from_owner(mesh, owner, parts)
}

fn bisect(mesh: &Mesh, mut nodes: Vec<usize>, first: usize, parts: usize, owner: &mut [usize]) {
    if parts == 1 {
        for n in nodes {
            owner[n] = first;
        }
        return;
    }
    let coords = mesh.coords();
    let axis = (0..mesh.dim())
        .map(|d| {
            let (lo, hi) = nodes.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &n| {
                (lo.min(coords[[n, d]]), hi.max(coords[[n, d]]))
            });
            (d, hi - lo)
        })
        .fold((0, f64::NEG_INFINITY), |best, (d, ext)| if ext > best.1 { (d, ext) } else { best })
        .0;
    nodes.sort_by(|&a, &b| coords[[a, axis]].total_cmp(&coords[[b, axis]]).then(a.cmp(&b)));
    let left_parts = parts / 2;
    let right_parts = parts - left_parts;
    let n = nodes.len();
    let target = (n * left_parts + parts / 2) / parts;
    // every sub-part keeps at least one node
    let split = target.clamp(left_parts, n - right_parts);
    let right = nodes.split_off(split);
    bisect(mesh, nodes, first, left_parts, owner);
    bisect(mesh, right, first + left_parts, right_parts, owner);
}

fn refine(mesh: &Mesh, owner: &mut [usize], parts: usize, seed: u64) {
    if parts == 1 {
        return;
    }
    let n = mesh.n_nodes();
    let adj = mesh.neighbors();
    let mut sizes = vec![0usize; parts];
    for &p in owner.iter() {
        sizes[p] += 1;
    }
    let cap = (MAX_BALANCE * n as f64 / parts as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; parts];
    for _ in 0..REFINE_PASSES {
        let mut boundary: Vec<usize> = (0..n)
            .filter(|&v| adj[v].iter().any(|&u| owner[u] != owner[v]))
            .collect();
        boundary.shuffle(&mut rng);
        let mut moved = false;
        for v in boundary {
            let from = owner[v];
            if sizes[from] <= 1 {
                continue;
            }
            counts.iter_mut().for_each(|c| *c = 0);
            for &u in &adj[v] {
                counts[owner[u]] += 1;
            }
            let best = (0..parts)
                .filter(|&p| p != from && sizes[p] < cap)
                .max_by_key(|&p| (counts[p], std::cmp::Reverse(p)));
            if let Some(to) = best {
                if counts[to] > counts[from] {
                    owner[v] = to;
                    sizes[from] -= 1;
                    sizes[to] += 1;
                    moved = true;
                }
            }
        }
        if !moved {
            break;
        }
    }
}
