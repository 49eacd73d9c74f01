//! Synthetic trajectories: a jittered, triangulated channel with a circular
//! obstacle, advanced by a local graph update rule with an oscillating wake.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{write_trajectory, Manifest, ManifestEntry, Split};
use crate::mesh::{ChannelSchema, Mesh, Trajectory};

pub const FLUID: u32 = 0;
pub const WALL: u32 = 1;
pub const INFLOW: u32 = 2;
pub const OUTFLOW: u32 = 3;
pub const NODE_TYPES: usize = 4;
pub const CHANNELS: [&str; 3] = ["u", "v", "p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeometrySpec {
    pub extent: [f64; 2],
    /// Grid points along x and y.
    pub resolution: [usize; 2],
    pub obstacle_center: [f64; 2],
    pub obstacle_radius: f64,
    /// Interior point displacement as a fraction of the grid spacing.
    pub jitter: f64,
    pub seed: u64,
}

impl Default for GeometrySpec {
    fn default() -> Self {
        Self {
            extent: [2.3, 1.7],
            resolution: [24, 18],
            obstacle_center: [0.6, 0.85],
            obstacle_radius: 0.2,
            jitter: 0.2,
            seed: 0,
        }
    }
}

impl GeometrySpec {
    pub fn validate(&self) -> Result<()> {
        let [lx, ly] = self.extent;
        let [cx, cy] = self.obstacle_center;
        let r = self.obstacle_radius;
        if self.resolution[0] < 8 || self.resolution[1] < 8 {
            return Err(Error::Config(format!("grid resolution {:?} below 8x8", self.resolution)));
        }
        if !(lx > 0.0 && ly > 0.0) {
            return Err(Error::Config("domain extent must be positive".into()));
        }
        if !(r >= 0.0 && cx - r > 0.0 && cx + r < lx && cy - r > 0.0 && cy + r < ly) {
            return Err(Error::Config(format!(
                "obstacle at ({cx}, {cy}) radius {r} is not strictly inside the {lx} x {ly} domain"
            )));
        }
        if !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("jitter must lie in [0, 0.5)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsSpec {
    /// Diffusion coefficient of the combinatorial graph Laplacian.
    pub kappa: f64,
    /// Speed of the uniform upwind transport in +x.
    pub advection: f64,
    /// Prescribed `u` on inflow nodes and initial `u` in the fluid.
    pub inflow_u: f64,
    /// Limit-cycle amplitude of the wake oscillator.
    pub source_amplitude: f64,
    /// Angular frequency of the wake oscillator.
    pub source_frequency: f64,
    /// Pull towards the limit cycle.
    pub source_growth: f64,
    pub source_center: [f64; 2],
    pub source_width: f64,
    pub steps: usize,
    pub dt: f64,
    /// Any |q| above this aborts generation.
    pub bound: f64,
    /// Initial oscillator phase, radians.
    pub phase: f64,
}

impl Default for DynamicsSpec {
    fn default() -> Self {
        Self {
            kappa: 0.5,
            advection: 0.5,
            inflow_u: 1.0,
            source_amplitude: 1.0,
            source_frequency: 6.0,
            source_growth: 2.0,
            source_center: [1.0, 0.85],
            source_width: 0.2,
            steps: 60,
            dt: 0.05,
            bound: 1e3,
            phase: 0.0,
        }
    }
}

impl DynamicsSpec {
    pub fn validate(&self, max_degree: usize) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::Config("a trajectory needs at least 2 states".into()));
        }
        if !(self.dt > 0.0 && self.kappa >= 0.0 && self.source_width > 0.0) {
            return Err(Error::Config("dt and source width must be > 0, kappa >= 0".into()));
        }
        let s = self.kappa * self.dt * max_degree as f64;
        if s >= 0.5 {
            return Err(Error::Config(format!(
                "explicit diffusion unstable: kappa*dt*max_degree = {s} >= 0.5"
            )));
        }
        Ok(())
    }
}

/// Triangulated rectangle with the obstacle's grid points removed.
pub fn make_mesh(geometry: &GeometrySpec) -> Result<Mesh> {
    geometry.validate()?;
    let [nx, ny] = geometry.resolution;
    let [lx, ly] = geometry.extent;
    let (dx, dy) = (lx / (nx - 1) as f64, ly / (ny - 1) as f64);
    let [cx, cy] = geometry.obstacle_center;
    let r = geometry.obstacle_radius;
    let mut rng = ChaCha8Rng::seed_from_u64(geometry.seed);
    let grid = |i: usize, j: usize| j * nx + i;
    let mut pos = vec![[0.0; 2]; nx * ny];
    let mut removed = vec![false; nx * ny];
    for j in 0..ny {
        for i in 0..nx {
            let (mut x, mut y) = (i as f64 * dx, j as f64 * dy);
            if i > 0 && i + 1 < nx && j > 0 && j + 1 < ny {
                x += rng.gen_range(-1.0..=1.0) * geometry.jitter * dx;
                y += rng.gen_range(-1.0..=1.0) * geometry.jitter * dy;
            }
            pos[grid(i, j)] = [x, y];
            removed[grid(i, j)] = (x - cx).hypot(y - cy) < r;
        }
    }
    let mut pairs = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let (a, b, c, d) = (grid(i, j), grid(i + 1, j), grid(i, j + 1), grid(i + 1, j + 1));
            for tri in [[a, b, d], [a, d, c]] {
                if tri.iter().all(|&n| !removed[n]) {
                    pairs.extend([[tri[0], tri[1]], [tri[1], tri[2]], [tri[0], tri[2]]]);
                }
            }
        }
    }
    let mut used = vec![false; nx * ny];
    for &[a, b] in &pairs {
        used[a] = true;
        used[b] = true;
    }
    let mut new_id = vec![usize::MAX; nx * ny];
    let mut coords = Vec::new();
    let mut types = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let g = grid(i, j);
            if !used[g] {
                continue;
            }
            new_id[g] = types.len();
            coords.extend(pos[g]);
            let near_obstacle = (j.saturating_sub(1)..=(j + 1).min(ny - 1))
                .any(|jj| (i.saturating_sub(1)..=(i + 1).min(nx - 1)).any(|ii| removed[grid(ii, jj)]));
            types.push(if j == 0 || j == ny - 1 || near_obstacle {
                WALL
            } else if i == 0 {
                INFLOW
            } else if i == nx - 1 {
                OUTFLOW
            } else {
                FLUID
            });
        }
    }
    if types.len() < 2 {
        return Err(Error::Config("obstacle leaves no mesh".into()));
    }
    let pairs: Vec<[usize; 2]> = pairs.iter().map(|&[a, b]| [new_id[a], new_id[b]]).collect();
    let mut undirected: Vec<[usize; 2]> = pairs.iter().map(|&[a, b]| [a.min(b), a.max(b)]).collect();
    undirected.sort_unstable();
    undirected.dedup();
    let coords = Array2::from_shape_vec((types.len(), 2), coords).expect("coords shape");
    Mesh::from_undirected(coords, types, NODE_TYPES, &undirected)
}

/// Advances `u, v, p` with graph diffusion, upwind transport along +x and a
/// Gaussian-localized limit-cycle oscillator in the wake. Walls hold zero
/// velocity; inflow holds `u = inflow_u, v = 0`.
pub fn simulate(mesh: &Mesh, dynamics: &DynamicsSpec) -> Result<Trajectory> {
    let max_degree = mesh.degrees().into_iter().max().unwrap_or(0);
    dynamics.validate(max_degree)?;
    let n = mesh.n_nodes();
    let coords = mesh.coords();
    let types = mesh.node_types();
    let neighbors = mesh.neighbors();
    let d = dynamics;
    let g: Vec<f64> = (0..n)
        .map(|i| {
            let rx = coords[[i, 0]] - d.source_center[0];
            let ry = coords[[i, 1]] - d.source_center[1];
            (-(rx * rx + ry * ry) / (2.0 * d.source_width * d.source_width)).exp()
        })
        .collect();
    let upwind: Vec<Vec<(usize, f64)>> = (0..n)
        .map(|i| {
            neighbors[i]
                .iter()
                .filter_map(|&j| {
                    let gap = coords[[i, 0]] - coords[[j, 0]];
                    let r2 = gap * gap + (coords[[i, 1]] - coords[[j, 1]]).powi(2);
                    (gap > 1e-9).then(|| (j, gap / r2))
                })
                .collect()
        })
        .collect();
    let mut q = Array2::<f64>::zeros((n, 3));
    for i in 0..n {
        q[[i, 0]] = d.inflow_u;
        q[[i, 1]] = d.source_amplitude * g[i] * d.phase.sin();
        q[[i, 2]] = d.source_amplitude * g[i] * d.phase.cos();
    }
    apply_boundaries(&mut q, types, d.inflow_u);
    let mut states = vec![q.clone()];
    for t in 1..d.steps {
        let mut next = q.clone();
        for i in 0..n {
            for c in 0..3 {
                let qi = q[[i, c]];
                let lap: f64 = neighbors[i].iter().map(|&j| q[[j, c]] - qi).sum();
                let adv = if upwind[i].is_empty() {
                    0.0
                } else {
                    upwind[i].iter().map(|&(j, w)| (q[[j, c]] - qi) * w).sum::<f64>() / upwind[i].len() as f64
                };
                next[[i, c]] = qi + d.dt * (d.kappa * lap + d.advection * adv);
            }
            if g[i] > 1e-6 {
                let (v, p) = (next[[i, 1]], next[[i, 2]]);
                let a2 = d.source_amplitude * d.source_amplitude * g[i] * g[i];
                let pull = if a2 > 0.0 {
                    d.source_growth * g[i] * (1.0 - (v * v + p * p) / a2).clamp(-1.0, 1.0)
                } else {
                    0.0
                };
                let w = d.source_frequency * g[i];
                let v_new = v + d.dt * (w * p + pull * v);
                let p_new = p + d.dt * (-w * v_new + pull * p);
                next[[i, 1]] = v_new;
                next[[i, 2]] = p_new;
            }
        }
        apply_boundaries(&mut next, types, d.inflow_u);
        if let Some(v) = next.iter().find(|v| !(v.abs() <= d.bound)) {
            return Err(Error::Numeric(format!("simulation unstable at step {t}: value {v}")));
        }
        states.push(next.clone());
        q = next;
    }
    Trajectory::new(mesh.clone(), ChannelSchema::all_delta(&CHANNELS)?, states)
}

fn apply_boundaries(q: &mut Array2<f64>, types: &[u32], inflow_u: f64) {
    for (i, &t) in types.iter().enumerate() {
        match t {
            WALL => {
                q[[i, 0]] = 0.0;
                q[[i, 1]] = 0.0;
            }
            INFLOW => {
                q[[i, 0]] = inflow_u;
                q[[i, 1]] = 0.0;
            }
            _ => {}
        }
    }
}

/// Ranges the per-trajectory geometry is drawn from. Training radii come
/// from the lower half of `radius`, validation radii from the upper half.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub n_train: usize,
    pub n_valid: usize,
    pub geometry: GeometrySpec,
    pub dynamics: DynamicsSpec,
    pub radius: [f64; 2],
    pub center_x: [f64; 2],
    pub center_y: [f64; 2],
    /// Wake source placed this many radii downstream of the obstacle.
    pub wake_offset: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_train: 4,
            n_valid: 1,
            geometry: GeometrySpec::default(),
            dynamics: DynamicsSpec::default(),
            radius: [0.15, 0.25],
            center_x: [0.5, 0.7],
            center_y: [0.75, 0.95],
            wake_offset: 2.0,
            seed: 7,
        }
    }
}

/// Geometry and dynamics of trajectory `index` of a dataset.
pub fn dataset_member(spec: &DatasetSpec, index: usize) -> (GeometrySpec, DynamicsSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let train = index < spec.n_train;
    let mid = 0.5 * (spec.radius[0] + spec.radius[1]);
    let radius = if train {
        rng.gen_range(spec.radius[0]..mid)
    } else {
        rng.gen_range(mid..=spec.radius[1])
    };
    let span = |r: [f64; 2], rng: &mut ChaCha8Rng| if r[1] > r[0] { rng.gen_range(r[0]..=r[1]) } else { r[0] };
    let cx = span(spec.center_x, &mut rng);
    let cy = span(spec.center_y, &mut rng);
    let mut geometry = spec.geometry.clone();
    geometry.obstacle_center = [cx, cy];
    geometry.obstacle_radius = radius;
    geometry.seed = rng.gen();
    let mut dynamics = spec.dynamics.clone();
    dynamics.source_center = [cx + spec.wake_offset * radius, cy];
    dynamics.phase = rng.gen_range(0.0..std::f64::consts::TAU);
    (geometry, dynamics)
}

/// Writes `n_train + n_valid` trajectory files and `manifest.json` into
/// `out_dir`.
pub fn make_dataset(spec: &DatasetSpec, out_dir: impl AsRef<Path>) -> Result<Manifest> {
    if spec.n_train == 0 || spec.n_valid == 0 {
        return Err(Error::Config("dataset needs at least one training and one validation trajectory".into()));
    }
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for index in 0..spec.n_train + spec.n_valid {
        let (geometry, dynamics) = dataset_member(spec, index);
        let traj = simulate(&make_mesh(&geometry)?, &dynamics)?;
        let split = if index < spec.n_train { Split::Train } else { Split::Validation };
        let name = format!("traj_{index:03}.mgnt");
        write_trajectory(&traj, dir.join(&name))?;
        entries.push(ManifestEntry { path: name.into(), split });
    }
    let manifest = Manifest {
        entries,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

/// Random points in the unit square, each joined to its `k` nearest
/// neighbors; node types drawn uniformly from `n_types`.
pub fn random_point_mesh(n: usize, k: usize, n_types: usize, seed: u64) -> Result<Mesh> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords = Array2::from_shape_fn((n, 2), |_| rng.gen::<f64>());
    let types: Vec<u32> = (0..n).map(|_| rng.gen_range(0..n_types as u32)).collect();
    let mut pairs = Vec::new();
    for i in 0..n {
        let mut others: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = (coords[[i, 0]] - coords[[j, 0]]).hypot(coords[[i, 1]] - coords[[j, 1]]);
                (d, j)
            })
            .collect();
        others.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &(_, j) in others.iter().take(k) {
            pairs.push([i.min(j), i.max(j)]);
        }
    }
    pairs.sort_unstable();
    pairs.dedup();
    Mesh::from_undirected(coords, types, n_types, &pairs)
}

/// Random smooth-ish states for a mesh: `T x n x channels`.
pub fn random_states(n: usize, channels: usize, steps: usize, seed: u64) -> Vec<Array2<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = Array2::from_shape_fn((n, channels), |_| rng.gen_range(-1.0..1.0));
    (0..steps)
        .map(|t| {
            let drift = base.mapv(|v: f64| v + 0.1 * t as f64 * v.signum());
            drift + Array2::from_shape_fn((n, channels), |_| rng.gen_range(-0.05..0.05))
        })
        .collect()
}

/// Plain sum of each channel over all nodes.
pub fn channel_totals(q: ArrayView2<'_, f64>) -> Vec<f64> {
    q.columns().into_iter().map(|c| c.sum()).collect()
}
