//! Trains a single-worker model on a small synthetic dataset and prints the
//! loss curve.
//!
//! `cargo run --release --example toy_training -- [steps] [lr]`

use std::time::Instant;

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::train::{train_loop, LrSchedule, SampleStream, SingleTrainer, TrainingData};

fn main() -> mgn_halo::Result<()> {
    let mut args = std::env::args().skip(1);
    let steps: usize = args.next().map_or(2000, |s| s.parse().expect("steps"));
    let lr: f64 = args.next().map_or(1e-3, |s| s.parse().expect("lr"));
    let spec = DatasetSpec::default();
    let trajectories = (0..spec.n_train)
        .map(|i| {
            let (g, d) = dataset_member(&spec, i);
            simulate(&make_mesh(&g)?, &d)
        })
        .collect::<mgn_halo::Result<Vec<_>>>()?;
    println!("{} nodes in the first mesh", trajectories[0].mesh().n_nodes());
    let data = TrainingData::new(trajectories)?;
    let model = data.model_config(4, 32, 2, true);
    let mut trainer = SingleTrainer::new(&model, LrSchedule::reaching_floor(lr, lr * 0.01, steps), 1000, 1)?;
    let mut stream = SampleStream::new(1, vec![0.0; 3]);
    let start = Instant::now();
    let history = train_loop(&mut trainer, &data, &mut stream, steps, 1, |s| {
        if s.step % 100 == 0 {
            println!("step {:5}  loss {:.4e}  lr {:.2e}  {:.1}s", s.step, s.loss, s.lr, start.elapsed().as_secs_f64());
        }
    })?;
    let head: f64 = history[..10].iter().map(|s| s.loss).sum::<f64>() / 10.0;
    let tail_n = 100.min(history.len());
    let tail: f64 = history[history.len() - tail_n..].iter().map(|s| s.loss).sum::<f64>() / tail_n as f64;
    println!("first-10 mean {head:.4e}, last-{tail_n} mean {tail:.4e}, ratio {:.1}", head / tail);
    Ok(())
}
