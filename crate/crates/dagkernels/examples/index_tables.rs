//! The space/frequency/learning index table of the eight experiment
//! eigenfunctions under the three reference architectures.
//!
//! Run with `cargo run --example index_tables`.

use dagkernels::cli::experiment_architectures;
use dagkernels::dual::gaussian_dual;
use dagkernels::frac::format_frac;
use dagkernels::harmonics::EigenId;
use dagkernels::indices::{canonical_multi_index, index_triple};

fn main() {
    let p = 4;
    let dual = gaussian_dual(1.0).unwrap();
    let archs = experiment_architectures(p, &dual).unwrap();
    println!(
        "{:8} {:>3}  {:>14} {:>14} {:>14}",
        "mode", "deg", "mlp", "cnn(p^2)x2", "cnn(p)x4"
    );
    println!("{:14} {:>14} {:>14} {:>14}", "(S, F) =", "", "", "");
    for id in EigenId::all() {
        let mut cells = Vec::new();
        for (_, dag) in &archs {
            let r = canonical_multi_index(id, p, dag).unwrap();
            let t = index_triple(dag, &r).unwrap();
            let s = t.spatial.as_frac().map(|f| format_frac(&f)).unwrap_or("inf".into());
            let f = t.frequency.as_frac().map(|f| format_frac(&f)).unwrap_or("inf".into());
            cells.push(format!("({s}, {f})"));
        }
        println!(
            "{:8} {:>3}  {:>14} {:>14} {:>14}",
            id.name(),
            id.degree(),
            cells[0],
            cells[1],
            cells[2]
        );
    }
}
