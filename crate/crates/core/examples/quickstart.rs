//! Smallest end-to-end run: synthesize flows, train a small model for a few
//! hundred steps, then roll it out on a held-out trajectory.
//!
//! `cargo run --release --example quickstart`

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::eval::{evaluate_set, Horizon};
use mgn_halo::train::{train_loop, LrSchedule, SampleStream, Simulator, SingleTrainer, Trainer, TrainingData};

fn main() -> mgn_halo::Result<()> {
    let spec = DatasetSpec {
        n_train: 2,
        n_valid: 1,
        ..DatasetSpec::default()
    };
    let mut trajectories = Vec::new();
    for i in 0..spec.n_train + spec.n_valid {
        let (geometry, dynamics) = dataset_member(&spec, i);
        trajectories.push(simulate(&make_mesh(&geometry)?, &dynamics)?);
    }
    let valid = trajectories.split_off(spec.n_train);
    let data = TrainingData::new(trajectories)?;

    let model = data.model_config(2, 16, 2, true);
    let steps = 300;
    let mut trainer = SingleTrainer::new(&model, LrSchedule::reaching_floor(1e-3, 1e-5, steps), 1000, 0)?;
    let mut stream = SampleStream::new(0, vec![0.02; data.schema().inputs().len()]);
    let history = train_loop(&mut trainer, &data, &mut stream, steps, 1, |s| {
        if s.step % 50 == 0 {
            println!("step {:4} loss {:.4e}", s.step, s.loss);
        }
    })?;
    println!("final loss {:.4e}", history.last().unwrap().loss);

    let sim = Simulator {
        params: trainer.params().clone(),
        normalizers: trainer.normalizers().clone(),
        schema: data.schema().clone(),
    };
    let named: Vec<_> = valid.into_iter().map(|t| ("valid".to_string(), t)).collect();
    let report = evaluate_set(&sim, &named, &[Horizon::Steps(1), Horizon::Steps(20), Horizon::Full])?;
    print!("{}", report.summary());
    Ok(())
}
