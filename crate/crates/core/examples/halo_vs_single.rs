//! Trains the same model on one worker and on P halo-exchanging workers and
//! prints how far apart the loss curves and final parameters end up.
//!
//! `cargo run --release --example halo_vs_single -- [parts] [steps]`

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::dist::{GroupConfig, WorkerGroup};
use mgn_halo::train::{train_loop, LrSchedule, Mode, SampleStream, SingleTrainer, Trainer, TrainingData};

fn main() -> mgn_halo::Result<()> {
    let mut args = std::env::args().skip(1);
    let parts: usize = args.next().map_or(4, |s| s.parse().expect("parts"));
    let steps: usize = args.next().map_or(100, |s| s.parse().expect("steps"));
    let spec = DatasetSpec::default();
    let (g, d) = dataset_member(&spec, 0);
    let data = TrainingData::new(vec![simulate(&make_mesh(&g)?, &d)?])?;
    let model = data.model_config(2, 16, 2, true);
    let schedule = LrSchedule::constant(1e-3);
    let noise = vec![0.02; data.schema().inputs().len()];

    let mut single = SingleTrainer::new(&model, schedule, 1000, 9)?;
    let a = train_loop(&mut single, &data, &mut SampleStream::new(9, noise.clone()), steps, 2, |_| {})?;
    let mut group = WorkerGroup::new(GroupConfig::new(Mode::Halo, parts), &model, schedule, 1000, 9)?;
    let b = train_loop(&mut group, &data, &mut SampleStream::new(9, noise), steps, 2, |_| {})?;

    let worst = a
        .iter()
        .zip(&b)
        .map(|(x, y)| ((x.loss - y.loss) / x.loss).abs())
        .fold(0.0, f64::max);
    let pa = single.params().to_flat();
    let pb = group.params().to_flat();
    let pdiff = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    println!("{steps} steps, P={parts}: {} halo rows exchanged", group.rows_exchanged());
    println!("worst per-step relative loss difference {worst:.3e}");
    println!("largest parameter difference {pdiff:.3e}");
    Ok(())
}
