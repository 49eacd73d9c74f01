//! Traces a few threaded halo-training steps, writes the trace as JSON and
//! prints the phase breakdown. Then runs the controlled-delay scaling
//! harness.
//!
//! `cargo run --release --example perf_trace -- [trace.json]`

use std::time::Duration;

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::dist::{DelayWorkload, GroupConfig, Scheduler, WorkerGroup};
use mgn_halo::perf::{runtime_distribution, scaling_csv, scaling_run, write_trace, MIN_MEASURED_STEPS, WARM_STEPS};
use mgn_halo::train::{train_loop, LrSchedule, Mode, SampleStream, TrainingData};

fn main() -> mgn_halo::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "trace.json".into());
    let (g, d) = dataset_member(&DatasetSpec::default(), 0);
    let data = TrainingData::new(vec![simulate(&make_mesh(&g)?, &d)?])?;
    let model = data.model_config(4, 32, 2, true);
    let mut cfg = GroupConfig::new(Mode::Halo, 4);
    cfg.scheduler = Scheduler::Threaded;
    cfg.trace = true;
    let mut group = WorkerGroup::new(cfg, &model, LrSchedule::constant(1e-4), 1000, 0)?;
    let mut stream = SampleStream::new(0, vec![0.02; data.schema().inputs().len()]);
    train_loop(&mut group, &data, &mut stream, 5, 2, |_| {})?;
    let trace = group.take_trace();
    write_trace(&trace, &out)?;
    println!("{} events written to {out}", trace.len());
    print!("{}", runtime_distribution(&trace)?.summary());

    let mut delay = DelayWorkload {
        compute_per_step: Duration::from_millis(40),
        scheduler: Scheduler::Threaded,
    };
    let rows = scaling_run(&mut delay, &[1, 2, 4], WARM_STEPS, MIN_MEASURED_STEPS)?;
    print!("{}", scaling_csv(&rows));
    Ok(())
}
