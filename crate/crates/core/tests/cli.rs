use std::path::Path;

use mgn_halo::cli::main_with_args;
use mgn_halo::io::{read_trajectory, write_trajectory};
use mgn_halo::mesh::{ChannelSchema, Mesh, Trajectory};
use mgn_halo::partition::PlanExport;
use ndarray::{array, Array2};

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("mgn").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn partition_path_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let coords = array![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
    let mesh = Mesh::from_undirected(coords, vec![0; 4], 1, &[[0, 1], [1, 2], [2, 3]]).unwrap();
    let schema = ChannelSchema::all_delta(&["u"]).unwrap();
    let traj = Trajectory::new(mesh, schema, vec![Array2::zeros((4, 1)); 2]).unwrap();
    let path = dir.path().join("path.mgnt");
    write_trajectory(&traj, &path).unwrap();
    let out = dir.path().join("plan.json");
    assert_eq!(run(&["partition", "--trajectory", s(&path), "--p", "2", "--out", s(&out)]), 0);
    let plan: PlanExport = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(plan.owned, vec![vec![0, 1], vec![2, 3]]);
    assert_eq!(plan.halo, vec![vec![2], vec![1]]);
    assert_eq!(plan.quality.edge_cut, 1);
}

#[test]
fn missing_inputs_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.json");
    assert_eq!(run(&["train", "--dataset", s(&missing), "--out", s(&dir.path().join("run"))]), 2);
    assert_eq!(run(&["perf", "--trace", s(&dir.path().join("trace.json"))]), 2);
}

#[test]
fn bad_config_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(&cfg, r#"{"steps": 3, "no_such_key": 1}"#).unwrap();
    assert_eq!(run(&["train", "--config", s(&cfg)]), 1);
    assert_eq!(run(&["train", "--mode", "sideways"]), 1);
    assert_eq!(run(&["eval"]), 1);
}

#[test]
fn end_to_end_workflow() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        run(&["gen-data", "--out", s(&data), "--n-train", "2", "--n-valid", "1", "--steps", "12", "--seed", "3"]),
        0
    );
    let manifest = data.join("manifest.json");
    assert!(manifest.exists());

    let train = |out: &Path, mode: &str, parts: &str| {
        run(&[
            "train",
            "--dataset",
            s(&manifest),
            "--out",
            s(out),
            "--mode",
            mode,
            "--p",
            parts,
            "--steps",
            "4",
            "--seed",
            "5",
            "--trace-steps",
            "2",
        ])
    };
    let single = dir.path().join("single");
    let again = dir.path().join("again");
    let halo = dir.path().join("halo");
    assert_eq!(train(&single, "single", "1"), 0);
    assert_eq!(train(&again, "single", "1"), 0);
    assert_eq!(train(&halo, "halo", "2"), 0);
    for f in ["checkpoint.mgnc", "train_log.csv", "trace.json", "resolved_config.json"] {
        assert!(single.join(f).exists(), "{f}");
    }
    assert_eq!(
        std::fs::read(single.join("checkpoint.mgnc")).unwrap(),
        std::fs::read(again.join("checkpoint.mgnc")).unwrap()
    );
    let log = std::fs::read_to_string(single.join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let resolved = single.join("resolved_config.json");
    let relaunch = dir.path().join("relaunch");
    assert_eq!(run(&["train", "--config", s(&resolved), "--out", s(&relaunch)]), 0);
    assert_eq!(
        std::fs::read(single.join("checkpoint.mgnc")).unwrap(),
        std::fs::read(relaunch.join("checkpoint.mgnc")).unwrap()
    );

    let ckpt = single.join("checkpoint.mgnc");
    let metrics = dir.path().join("metrics.csv");
    assert_eq!(
        run(&["eval", "--checkpoint", s(&ckpt), "--dataset", s(&manifest), "--horizons", "1,5,full", "--out", s(&metrics)]),
        0
    );
    let csv = std::fs::read_to_string(&metrics).unwrap();
    assert!(csv.starts_with("trajectory,horizon,metric,value"));
    assert!(csv.contains(",5,rmse,") && csv.contains("e_std_pct"));

    let first = data.join("traj_000.mgnt");
    let dump = dir.path().join("rollout.mgnt");
    assert_eq!(
        run(&["rollout", "--checkpoint", s(&ckpt), "--trajectory", s(&first), "--t0", "2", "--steps", "4", "--out", s(&dump)]),
        0
    );
    let rolled = read_trajectory(&dump).unwrap();
    assert_eq!(rolled.len(), 5);
    assert_eq!(rolled.states()[0], read_trajectory(&first).unwrap().states()[2]);
    assert_eq!(
        run(&["rollout", "--checkpoint", s(&ckpt), "--trajectory", s(&first), "--t0", "8", "--steps", "4", "--out", s(&dump)]),
        1
    );

    let perf = dir.path().join("perf.csv");
    assert_eq!(run(&["perf", "--trace", s(&halo.join("trace.json")), "--out", s(&perf)]), 0);
    assert!(std::fs::read_to_string(&perf).unwrap().contains("exchange"));

    let table = dir.path().join("compare.csv");
    assert_eq!(
        run(&[
            "compare",
            "--a",
            s(&ckpt),
            "--b",
            s(&halo.join("checkpoint.mgnc")),
            "--dataset",
            s(&manifest),
            "--horizons",
            "1,full",
            "--out",
            s(&table),
        ]),
        0
    );
    assert!(std::fs::read_to_string(&table).unwrap().lines().count() > 2);
}
