#![allow(dead_code)]

use mgn_halo::datagen::{random_point_mesh, random_states};
use mgn_halo::mesh::{ChannelSchema, Trajectory};
use mgn_halo::model::{ModelConfig, ModelParams};
use mgn_halo::train::TrainingData;

/// `max |a - b| / max |b|` over one tensor, with an all-zero reference
/// compared absolutely.
pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Largest per-tensor relative difference between two parameter sets.
pub fn max_tensor_diff(a: &ModelParams, b: &ModelParams) -> (f64, String) {
    a.tensors()
        .into_iter()
        .zip(b.tensors())
        .map(|((name, x), (_, y))| (rel_diff(x, y), name))
        .fold((0.0, String::new()), |acc, v| if v.0 > acc.0 { v } else { acc })
}

pub fn random_dataset(nodes: usize, steps: usize, seed: u64) -> TrainingData {
    let mesh = random_point_mesh(nodes, 4, 3, seed).unwrap();
    let states = random_states(nodes, 2, steps, seed + 1);
    let schema = ChannelSchema::all_delta(&["a", "b"]).unwrap();
    TrainingData::new(vec![Trajectory::new(mesh, schema, states).unwrap()]).unwrap()
}

pub fn model_for(data: &TrainingData, k: usize, latent: usize) -> ModelConfig {
    data.model_config(k, latent, 2, true)
}
