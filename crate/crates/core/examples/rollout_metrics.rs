//! Metric pipeline on reference predictors: the oracle reproduces the truth,
//! the no-change model shows the near-stationary signature.
//!
//! `cargo run --release --example rollout_metrics`

use mgn_halo::datagen::{dataset_member, make_mesh, simulate, DatasetSpec};
use mgn_halo::eval::{evaluate_set, rollout, rollout_rmse, Horizon, IdentityModel, OracleModel};

fn main() -> mgn_halo::Result<()> {
    let spec = DatasetSpec::default();
    let (g, d) = dataset_member(&spec, spec.n_train);
    let traj = simulate(&make_mesh(&g)?, &d)?;
    let r = rollout(&OracleModel, &traj, 5, 30)?;
    println!("oracle 30-step rollout rmse {:.3e}", rollout_rmse(&r, &traj)?);
    let r = rollout(&IdentityModel, &traj, 5, 30)?;
    println!("no-change 30-step rollout rmse {:.3e}", rollout_rmse(&r, &traj)?);

    let set = vec![("valid".to_string(), traj)];
    let horizons = [Horizon::Steps(1), Horizon::Steps(10), Horizon::Full];
    for (name, report) in [
        ("oracle", evaluate_set(&OracleModel, &set, &horizons)?),
        ("no-change", evaluate_set(&IdentityModel, &set, &horizons)?),
    ] {
        println!("== {name}");
        print!("{}", report.summary());
        print!("{}", report.to_csv());
    }
    Ok(())
}
