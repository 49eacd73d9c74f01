mod common;

use common::{max_tensor_diff, model_for, random_dataset};
use mgn_halo::datagen::random_point_mesh;
use mgn_halo::dist::{all_to_all_halo, allreduce_sum, halo_grad_exchange, ExchangeBuffers};
use mgn_halo::dist::{full_inference, stitched_inference, GroupConfig, Scheduler, WorkerGroup};
use mgn_halo::eval::{normalized_error_field, rmse, temporal_stats, NormalizedError};
use mgn_halo::partition::partition;
use mgn_halo::perf::idle_fraction;
use mgn_halo::train::{train_loop, LrSchedule, Mode, SampleStream, Simulator, Trainer};
use ndarray::{Array1, Array2};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-10.0..10.0f64, rows * cols).prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_ignores_node_order(pred in matrix(6, 2), truth in matrix(6, 2), shift in 1usize..6) {
        let rot = |a: &Array2<f64>| {
            let mut b = a.clone();
            for i in 0..6 {
                b.row_mut(i).assign(&a.row((i + shift) % 6));
            }
            b
        };
        let a = rmse(&[pred.clone()], &[truth.clone()], &[0, 1]).unwrap();
        let b = rmse(&[rot(&pred)], &[rot(&truth)], &[0, 1]).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        let worse = &pred + &(&pred - &truth);
        prop_assert!(rmse(&[worse], &[truth], &[0, 1]).unwrap() >= a - 1e-12);
    }

    #[test]
    fn normalized_error_is_scale_covariant(
        pred in prop::collection::vec(-5.0..5.0f64, 8),
        target in prop::collection::vec(-5.0..5.0f64, 8),
        c in prop_oneof![-4.0..-0.25f64, 0.25..4.0f64],
    ) {
        let p = Array1::from(pred);
        let t = Array1::from(target);
        let base = normalized_error_field(p.view(), t.view()).unwrap();
        let scaled = normalized_error_field((&p * c).view(), (&t * c).view()).unwrap();
        match (base, scaled) {
            (NormalizedError::Field(a), NormalizedError::Field(b)) => {
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
                }
            }
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn temporal_std_is_shift_invariant(states in prop::collection::vec(matrix(3, 2), 1..6), c in -50.0..50.0f64) {
        let a = temporal_stats(&states).unwrap();
        let shifted: Vec<_> = states.iter().map(|s| s + c).collect();
        let b = temporal_stats(&shifted).unwrap();
        prop_assert!((a.std - b.std).abs() <= 1e-9);
        prop_assert!((b.mean - a.mean - c).abs() <= 1e-9);
    }

    #[test]
    fn idle_fraction_bounds(t in prop::collection::vec(0.0..100.0f64, 1..32)) {
        prop_assume!(t.iter().any(|&v| v > 0.0));
        let f = idle_fraction(&t).unwrap();
        prop_assert!(f >= -1e-15 && f <= 1.0 - 1.0 / t.len() as f64 + 1e-15);
    }

    #[test]
    fn allreduce_sums_and_agrees(workers in 1usize..9, seed in 0u64..1000) {
        let width = 5;
        let mut bufs: Vec<Vec<f64>> = (0..workers)
            .map(|w| (0..width).map(|i| ((seed + 31 * w as u64 + 7 * i as u64) % 97) as f64 / 7.0).collect())
            .collect();
        let expect: Vec<f64> = (0..width).map(|i| bufs.iter().map(|b| b[i]).sum()).collect();
        allreduce_sum(&mut bufs).unwrap();
        for b in &bufs {
            prop_assert_eq!(b, &bufs[0]);
        }
        for (x, y) in bufs[0].iter().zip(&expect) {
            prop_assert!((x - y).abs() <= 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn halo_exchange_fills_and_conserves(n in 10usize..80, parts in 1usize..6, seed in 0u64..500) {
        let mesh = random_point_mesh(n, 3, 1, seed).unwrap();
        let plan = partition(&mesh, parts.min(n), seed).unwrap();
        let p = plan.parts();
        let global = Array2::from_shape_fn((n, 3), |(i, c)| (i * 3 + c) as f64);
        let mut bufs: Vec<_> = (0..p).map(|w| ExchangeBuffers::build(&plan, w).unwrap()).collect();
        let mut states: Vec<Array2<f64>> = (0..p)
            .map(|w| {
                let nodes = plan.local_nodes(w);
                let mut x = Array2::from_elem((nodes.len(), 3), f64::NAN);
                for (l, &g) in nodes.iter().enumerate().take(plan.owned(w).len()) {
                    x.row_mut(l).assign(&global.row(g));
                }
                x
            })
            .collect();
        all_to_all_halo(&mut states, &mut bufs).unwrap();
        for w in 0..p {
            for (l, &g) in plan.local_nodes(w).iter().enumerate() {
                prop_assert_eq!(states[w].row(l), global.row(g));
            }
        }

        let mut grads: Vec<Array2<f64>> = states.iter().map(|s| s.mapv(|v| v.sin())).collect();
        let before: f64 = grads.iter().map(|g| g.sum()).sum();
        let owned: Vec<usize> = (0..p).map(|w| plan.owned(w).len()).collect();
        halo_grad_exchange(&mut grads, &owned, &mut bufs).unwrap();
        let after: f64 = grads.iter().zip(&owned).map(|(g, &o)| g.slice(ndarray::s![..o, ..]).sum()).sum();
        prop_assert!((before - after).abs() <= 1e-9 * before.abs().max(1.0));
    }
}

fn trained_group(mode: Mode, parts: usize, scheduler: Scheduler, frozen: bool) -> WorkerGroup {
    let data = random_dataset(150, 4, 21);
    let model = model_for(&data, 3, 8);
    let mut cfg = GroupConfig::new(mode, parts);
    cfg.scheduler = scheduler;
    cfg.freeze_halo_edges = frozen;
    let mut group = WorkerGroup::new(cfg, &model, LrSchedule::constant(1e-3), 100, 4).unwrap();
    let mut stream = SampleStream::new(4, vec![0.01, 0.01]);
    let a = if mode == Mode::NoComm { 1 } else { 2 };
    train_loop(&mut group, &data, &mut stream, 4, a, |_| {}).unwrap();
    group
}

#[test]
fn replicas_stay_identical() {
    for mode in [Mode::Halo, Mode::NoComm] {
        let g = trained_group(mode, 4, Scheduler::Sequential, false);
        let h0 = g.replicas()[0].content_hash();
        assert!(g.replicas().iter().all(|r| r.content_hash() == h0));
    }
}

#[test]
fn threaded_matches_sequential() {
    let a = trained_group(Mode::Halo, 3, Scheduler::Sequential, false);
    let b = trained_group(Mode::Halo, 3, Scheduler::Threaded, false);
    assert_eq!(a.params(), b.params());
}

#[test]
fn modes_differ_where_expected() {
    let halo = trained_group(Mode::Halo, 4, Scheduler::Sequential, false);
    let nocomm = trained_group(Mode::NoComm, 4, Scheduler::Sequential, false);
    let frozen = trained_group(Mode::Halo, 4, Scheduler::Sequential, true);
    assert!(max_tensor_diff(halo.params(), nocomm.params()).0 > 1e-6);
    assert!(max_tensor_diff(halo.params(), frozen.params()).0 > 1e-6);
}

#[test]
fn stitched_inference_matches_full_graph() {
    let data = random_dataset(120, 3, 8);
    let g = trained_group(Mode::Halo, 2, Scheduler::Sequential, false);
    let sim = Simulator {
        params: g.params().clone(),
        normalizers: g.normalizers().clone(),
        schema: data.schema().clone(),
    };
    let traj = &data.trajectories[0];
    let state = traj.states()[1].view();
    let full = full_inference(&sim, traj.mesh(), state).unwrap();
    for parts in [1, 3, 5] {
        let plan = partition(traj.mesh(), parts, 2).unwrap();
        let stitched = stitched_inference(&sim, traj.mesh(), &plan, state, true).unwrap();
        let diff = (&stitched - &full).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(diff < 1e-10, "P={parts}: {diff}");
        if parts > 1 {
            let stale = stitched_inference(&sim, traj.mesh(), &plan, state, false).unwrap();
            assert!((&stale - &full).mapv(f64::abs).sum() > 1e-8);
        }
    }
}
