//! Contrasts halo-exchange training with the no-communication baseline on a
//! dataset whose temporal variability sits in a wake, and prints both metric
//! reports including the temporal-std error.
//!
//! `cargo run --release --example nocomm_vs_halo -- [parts] [steps]`

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::dist::{GroupConfig, WorkerGroup};
use mgn_halo::eval::{evaluate_set, Horizon};
use mgn_halo::mesh::Trajectory;
use mgn_halo::train::{train_loop, LrSchedule, Mode, SampleStream, Simulator, Trainer, TrainingData};

fn train(data: &TrainingData, mode: Mode, parts: usize, steps: usize) -> mgn_halo::Result<Simulator> {
    let model = data.model_config(3, 16, 2, true);
    let schedule = LrSchedule::reaching_floor(1e-3, 1e-5, steps);
    let mut group = WorkerGroup::new(GroupConfig::new(mode, parts), &model, schedule, 1000, 1)?;
    let mut stream = SampleStream::new(1, vec![0.02; data.schema().inputs().len()]);
    train_loop(&mut group, data, &mut stream, steps, 1, |_| {})?;
    Ok(Simulator {
        params: group.params().clone(),
        normalizers: group.normalizers().clone(),
        schema: data.schema().clone(),
    })
}

fn main() -> mgn_halo::Result<()> {
    let mut args = std::env::args().skip(1);
    let parts: usize = args.next().map_or(4, |s| s.parse().expect("parts"));
    let steps: usize = args.next().map_or(500, |s| s.parse().expect("steps"));
    let spec = DatasetSpec {
        n_train: 3,
        n_valid: 2,
        ..DatasetSpec::default()
    };
    let mut all: Vec<Trajectory> = Vec::new();
    for i in 0..spec.n_train + spec.n_valid {
        let (g, d) = dataset_member(&spec, i);
        all.push(simulate(&make_mesh(&g)?, &d)?);
    }
    let valid: Vec<(String, Trajectory)> = all
        .split_off(spec.n_train)
        .into_iter()
        .enumerate()
        .map(|(i, t)| (format!("valid_{i}"), t))
        .collect();
    let data = TrainingData::new(all)?;
    let horizons = [Horizon::Steps(1), Horizon::Steps(20), Horizon::Full];
    for mode in [Mode::Halo, Mode::NoComm] {
        let sim = train(&data, mode, parts, steps)?;
        let report = evaluate_set(&sim, &valid, &horizons)?;
        println!("== {mode:?}, P={parts}, {steps} steps");
        print!("{}", report.summary());
    }
    Ok(())
}
