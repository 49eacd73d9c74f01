//! Loss, gradients, normalization, noise, optimization and the
//! single-worker training loop.

mod checkpoint;
mod noise;
mod normalize;
mod optim;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, TrainingCheckpoint, CHECKPOINT_MAGIC};
pub use noise::inject_noise;
pub use normalize::{BatchStats, Normalizer, Normalizers, NORMALIZER_EPS};
pub use optim::{accumulate_gradients, adam_step, Grads, LrSchedule, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

use ndarray::{s, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{build_edge_features, node_feature_width, node_features, ChannelSchema, Mesh, Trajectory};
use crate::model::{init_params, GraphTopology, ModelConfig, ModelParams, Tape};

/// How a training step is distributed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Whole graph on one worker.
    Single,
    /// Partitioned graph, halo rows refreshed between message-passing blocks.
    Halo,
    /// Partitioned graph, each part trained as an independent sample.
    NoComm,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(Mode::Single),
            "halo" => Ok(Mode::Halo),
            "nocomm" => Ok(Mode::NoComm),
            other => Err(Error::Config(format!("unknown mode {other:?} (single | halo | nocomm)"))),
        }
    }
}

/// Sum of squared errors and the number of terms it covers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossStats {
    pub sse: f64,
    pub count: f64,
}

impl LossStats {
    /// `None` when nothing was counted.
    pub fn mean(&self) -> Option<f64> {
        (self.count > 0.0).then(|| self.sse / self.count)
    }
}

/// Squared error over the rows flagged in `owned`, all output channels.
pub fn loss_mse(pred: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>, owned: &[bool]) -> Result<LossStats> {
    if pred.dim() != target.dim() || owned.len() != pred.nrows() {
        return Err(Error::Validation(format!(
            "loss shapes: pred {:?}, target {:?}, mask {}",
            pred.dim(),
            target.dim(),
            owned.len()
        )));
    }
    let mut stats = LossStats::default();
    for ((p, t), &own) in pred.rows().into_iter().zip(target.rows()).zip(owned) {
        if own {
            stats.sse += p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            stats.count += p.len() as f64;
        }
    }
    Ok(stats)
}

fn all_rows_stats(pred: &Array2<f64>, target: &Array2<f64>) -> LossStats {
    let sse = pred.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum();
    LossStats {
        sse,
        count: pred.len() as f64,
    }
}

/// `scale * d(sse)/d(pred)`.
pub(crate) fn sse_grad(pred: &Array2<f64>, target: &Array2<f64>, scale: f64) -> Array2<f64> {
    let k = 2.0 * scale;
    (pred - target).mapv(|d| d * k)
}

#[derive(Debug, Clone)]
pub struct BackwardOutput {
    pub loss: LossStats,
    /// Gradient of the unscaled squared error.
    pub grads: Grads,
    /// Node-latent gradient rows at halo slots entering each block `k`,
    /// i.e. what a partitioned run must send back to the owners.
    pub halo_grads: Vec<Array2<f64>>,
}

/// Reverse-mode gradients of the squared error over the active rows of
/// `topo` with respect to every parameter tensor.
pub fn backward(
    params: &ModelParams,
    topo: &GraphTopology,
    node_features: ArrayView2<'_, f64>,
    edge_features: ArrayView2<'_, f64>,
    target: ArrayView2<'_, f64>,
) -> Result<BackwardOutput> {
    let mut tape = Tape::encode(params, topo, node_features, edge_features)?;
    for _ in 0..params.blocks.len() {
        tape.run_block()?;
    }
    let pred = tape.decode()?;
    let target = target.to_owned();
    if pred.dim() != target.dim() {
        return Err(Error::Validation(format!(
            "target shape {:?}, prediction {:?}",
            target.dim(),
            pred.dim()
        )));
    }
    let loss = all_rows_stats(&pred, &target);
    let mut grads = Grads::zeros(params);
    let mut g = tape.backward_decoder(sse_grad(&pred, &target, 1.0).view(), &mut grads);
    let mut halo_grads = vec![Array2::zeros((0, 0)); params.blocks.len()];
    for k in (0..params.blocks.len()).rev() {
        tape.backward_block(k, &mut g, &mut grads);
        halo_grads[k] = g.node.slice(s![topo.n_active.., ..]).to_owned();
    }
    tape.backward_encoder(&g, &mut grads);
    check_grads(&grads)?;
    Ok(BackwardOutput { loss, grads, halo_grads })
}

pub(crate) fn check_grads(grads: &Grads) -> Result<()> {
    for (name, t) in grads.tensors() {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient in {name}")));
        }
    }
    Ok(())
}

/// Resolved training options.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub mode: Mode,
    pub parts: usize,
    pub steps: usize,
    /// Microbatches averaged per optimizer step.
    pub accumulation: usize,
    pub seed: u64,
    /// One standard deviation per input channel, physical units.
    pub noise_std: Vec<f64>,
    pub schedule: LrSchedule,
    /// Normalizer updates before statistics freeze.
    pub normalizer_horizon: u64,
    /// Halo variant that leaves edges with a halo sender un-updated.
    pub freeze_halo_edges: bool,
    pub partition_seed: u64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.accumulation == 0 {
            return Err(Error::Config("accumulation must be >= 1".into()));
        }
        if self.parts == 0 {
            return Err(Error::Config("parts must be >= 1".into()));
        }
        if self.noise_std.iter().any(|s| *s < 0.0 || !s.is_finite()) {
            return Err(Error::Config("noise std must be finite and >= 0".into()));
        }
        if self.mode == Mode::Single && self.parts != 1 {
            return Err(Error::Config("single mode runs on exactly one part".into()));
        }
        Ok(())
    }

    /// Accumulation actually used: NoComm trains one sample per step.
    pub fn effective_accumulation(&self) -> usize {
        match self.mode {
            Mode::NoComm => 1,
            _ => self.accumulation,
        }
    }
}

/// Training trajectories with their static per-mesh data precomputed.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub trajectories: Vec<Trajectory>,
    pub edge_features: Vec<Array2<f64>>,
    pub topologies: Vec<GraphTopology>,
}

impl TrainingData {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::Config("no training trajectories".into()))?;
        let (schema, n_types, dim) = (first.schema().clone(), first.mesh().n_types(), first.mesh().dim());
        for t in &trajectories {
            if t.schema() != &schema || t.mesh().n_types() != n_types || t.mesh().dim() != dim {
                return Err(Error::Validation(
                    "training trajectories disagree on channels, node types or dimension".into(),
                ));
            }
        }
        Ok(Self {
            edge_features: trajectories.iter().map(|t| build_edge_features(t.mesh())).collect(),
            topologies: trajectories.iter().map(|t| GraphTopology::full(t.mesh())).collect(),
            trajectories,
        })
    }

    pub fn schema(&self) -> &ChannelSchema {
        self.trajectories[0].schema()
    }

    pub fn model_config(&self, message_passing_steps: usize, latent: usize, hidden_layers: usize, layer_norm: bool) -> ModelConfig {
        let t = &self.trajectories[0];
        ModelConfig {
            message_passing_steps,
            latent,
            node_in: node_feature_width(t.schema(), t.mesh().n_types()),
            edge_in: t.mesh().dim() + 1,
            node_out: t.schema().output_count(),
            hidden_layers,
            layer_norm,
        }
    }
}

/// One training sample: raw node features from a (noisy) state and the
/// physical-unit targets mapping it to the true next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Microbatch {
    pub trajectory: usize,
    pub t: usize,
    pub node_features: Array2<f64>,
    pub targets: Array2<f64>,
}

/// Builds the sample for step `t -> t + 1`. Delta channels learn
/// `q_{t+1} - q̂_t` so the model maps the corrupted state to the true one.
pub fn prepare_microbatch<R: Rng>(
    traj: &Trajectory,
    t: usize,
    noise_std: &[f64],
    rng: &mut R,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if t + 1 >= traj.len() {
        return Err(Error::Validation(format!("sample step {t} has no successor")));
    }
    let schema = traj.schema();
    let q = &traj.states()[t];
    let next = &traj.states()[t + 1];
    let noisy = inject_noise(q.view(), schema, noise_std, rng)?;
    let features = node_features(traj.mesh(), schema, noisy.view());
    let mut targets = Array2::zeros((q.nrows(), schema.output_count()));
    for (g, (&ch, &direct)) in schema.outputs().iter().zip(schema.direct()).enumerate() {
        let mut col = targets.column_mut(g);
        if direct {
            col.assign(&next.column(ch));
        } else {
            col.assign(&(&next.column(ch) - &noisy.column(ch)));
        }
    }
    Ok((features, targets))
}

/// Deterministic stream of microbatches drawn from one root seed.
#[derive(Debug, Clone)]
pub struct SampleStream {
    seed: u64,
    draws: ChaCha8Rng,
    counter: u64,
    noise_std: Vec<f64>,
}

impl SampleStream {
    pub fn new(seed: u64, noise_std: Vec<f64>) -> Self {
        Self {
            seed,
            draws: ChaCha8Rng::seed_from_u64(seed),
            counter: 0,
            noise_std,
        }
    }

    pub fn next(&mut self, data: &TrainingData) -> Result<Microbatch> {
        let trajectory = self.draws.gen_range(0..data.trajectories.len());
        let traj = &data.trajectories[trajectory];
        let t = self.draws.gen_range(0..traj.len() - 1);
        let mut noise_rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x6e6f_6973_65);
        noise_rng.set_stream(self.counter);
        self.counter += 1;
        let (node_features, targets) = prepare_microbatch(traj, t, &self.noise_std, &mut noise_rng)?;
        Ok(Microbatch {
            trajectory,
            t,
            node_features,
            targets,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    /// Optimizer step index that produced these stats (0-based).
    pub step: u64,
    /// Global MSE, averaged over the step's microbatches.
    pub loss: f64,
    pub lr: f64,
}

/// Common surface of the single-worker trainer and the worker group.
pub trait Trainer {
    fn train_step(&mut self, data: &TrainingData, batch: &[Microbatch]) -> Result<StepStats>;
    fn params(&self) -> &ModelParams;
    fn optimizer(&self) -> &OptimizerState;
    fn normalizers(&self) -> &Normalizers;
}

/// Trained model plus what is needed to run it on physical states.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub params: ModelParams,
    pub normalizers: Normalizers,
    pub schema: ChannelSchema,
}

impl Simulator {
    /// Physical-unit model output (deltas or direct values) for every node.
    pub fn predict_state(&self, mesh: &Mesh, state: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let topo = GraphTopology::full(mesh);
        let x = self.normalizers.node.normalize(node_features(mesh, &self.schema, state).view());
        let e = self.normalizers.edge.normalize(build_edge_features(mesh).view());
        let mut tape = Tape::encode(&self.params, &topo, x.view(), e.view())?;
        for _ in 0..self.params.blocks.len() {
            tape.run_block()?;
        }
        let out = tape.decode()?;
        Ok(self.normalizers.target.denormalize(out.view()))
    }
}

/// Full-graph training on one worker.
#[derive(Debug, Clone)]
pub struct SingleTrainer {
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    pub normalizers: Normalizers,
}

impl SingleTrainer {
    pub fn new(config: &ModelConfig, schedule: LrSchedule, normalizer_horizon: u64, seed: u64) -> Result<Self> {
        let params = init_params(config, seed)?;
        Ok(Self {
            optimizer: OptimizerState::new(&params, schedule),
            normalizers: Normalizers::new(config.node_in, config.edge_in, config.node_out, normalizer_horizon),
            params,
        })
    }

    pub fn from_parts(params: ModelParams, optimizer: OptimizerState, normalizers: Normalizers) -> Self {
        Self {
            params,
            optimizer,
            normalizers,
        }
    }

    /// Loss and mean-loss gradients of one microbatch. Folds the batch into
    /// the normalizers first, exactly as a training step does.
    pub fn microbatch_gradients(&mut self, data: &TrainingData, mb: &Microbatch) -> Result<(LossStats, Grads)> {
        let edge_raw = &data.edge_features[mb.trajectory];
        let topo = &data.topologies[mb.trajectory];
        let n = &mut self.normalizers;
        n.node.update(mb.node_features.view())?;
        n.edge.update(edge_raw.view())?;
        n.target.update(mb.targets.view())?;
        let x = n.node.normalize(mb.node_features.view());
        let e = n.edge.normalize(edge_raw.view());
        let y = n.target.normalize(mb.targets.view());
        let mut tape = Tape::encode(&self.params, topo, x.view(), e.view())?;
        for _ in 0..self.params.blocks.len() {
            tape.run_block()?;
        }
        let pred = tape.decode()?;
        let loss = all_rows_stats(&pred, &y);
        let scale = 1.0 / loss.count;
        let mut grads = Grads::zeros(&self.params);
        let mut g = tape.backward_decoder(sse_grad(&pred, &y, scale).view(), &mut grads);
        for k in (0..self.params.blocks.len()).rev() {
            tape.backward_block(k, &mut g, &mut grads);
        }
        tape.backward_encoder(&g, &mut grads);
        check_grads(&grads)?;
        Ok((loss, grads))
    }
}

impl Trainer for SingleTrainer {
    fn train_step(&mut self, data: &TrainingData, batch: &[Microbatch]) -> Result<StepStats> {
        let mut losses = 0.0;
        let mut all = Vec::with_capacity(batch.len());
        for mb in batch {
            let (loss, g) = self.microbatch_gradients(data, mb)?;
            losses += loss.mean().unwrap_or(0.0);
            all.push(g);
        }
        let grads = accumulate_gradients(&all, batch.len())?;
        let step = self.optimizer.step;
        let lr = adam_step(&mut self.optimizer, &mut self.params, &grads)?;
        Ok(StepStats {
            step,
            loss: losses / batch.len() as f64,
            lr,
        })
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    fn normalizers(&self) -> &Normalizers {
        &self.normalizers
    }
}

/// Runs `steps` optimizer steps, drawing `accumulation` microbatches each.
pub fn train_loop<T: Trainer + ?Sized>(
    trainer: &mut T,
    data: &TrainingData,
    stream: &mut SampleStream,
    steps: usize,
    accumulation: usize,
    mut on_step: impl FnMut(&StepStats),
) -> Result<Vec<StepStats>> {
    let mut history = Vec::with_capacity(steps);
    for _ in 0..steps {
        let batch = (0..accumulation)
            .map(|_| stream.next(data))
            .collect::<Result<Vec<_>>>()?;
        let stats = trainer.train_step(data, &batch)?;
        on_step(&stats);
        history.push(stats);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn loss_examples() {
        let p = array![[1.0, 2.0], [3.0, 4.0]];
        assert_eq!(loss_mse(p.view(), p.view(), &[true, true]).unwrap().sse, 0.0);
        let pred = Array2::<f64>::ones((5, 2));
        let tgt = Array2::<f64>::zeros((5, 2));
        let s = loss_mse(pred.view(), tgt.view(), &[true; 5]).unwrap();
        assert_eq!((s.sse, s.count, s.mean()), (10.0, 10.0, Some(1.0)));
        let mut perturbed = pred.clone();
        perturbed[[4, 0]] = 100.0;
        let mask = [true, true, true, true, false];
        assert_eq!(
            loss_mse(pred.view(), tgt.view(), &mask).unwrap(),
            loss_mse(perturbed.view(), tgt.view(), &mask).unwrap()
        );
        let empty = loss_mse(pred.view(), tgt.view(), &[false; 5]).unwrap();
        assert_eq!(empty.count, 0.0);
        assert_eq!(empty.mean(), None);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("HALO".parse::<Mode>().unwrap(), Mode::Halo);
        assert_eq!("nocomm".parse::<Mode>().unwrap(), Mode::NoComm);
        assert!("ring".parse::<Mode>().is_err());
    }
}
