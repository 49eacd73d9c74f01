//! Partitions a synthetic mesh and prints owned/halo sizes, send masks and
//! edge cut for a range of part counts.
//!
//! `cargo run --example partition_mesh -- [max_parts]`

use mgn_halo::datagen::{make_mesh, GeometrySpec};
use mgn_halo::partition::{partition, quality};

fn main() -> mgn_halo::Result<()> {
    let max_parts: usize = std::env::args().nth(1).map_or(8, |s| s.parse().expect("max_parts"));
    let mesh = make_mesh(&GeometrySpec::default())?;
    println!("{} nodes, {} directed edges", mesh.n_nodes(), mesh.n_edges());
    for parts in 1..=max_parts {
        let plan = partition(&mesh, parts, 0)?;
        let q = quality(&mesh, &plan);
        let halo: Vec<usize> = (0..parts).map(|p| plan.halo(p).len()).collect();
        let owned: Vec<usize> = (0..parts).map(|p| plan.owned(p).len()).collect();
        println!(
            "P={parts}: edge cut {:4}, balance {:.3}, rows per exchange {:4}, owned {owned:?}, halo {halo:?}",
            q.edge_cut,
            q.balance,
            plan.exchange_volume()
        );
    }
    let plan = partition(&mesh, 2, 0)?;
    println!("part 0 sends {} rows to part 1", plan.send_mask(0, 1).len());
    Ok(())
}
