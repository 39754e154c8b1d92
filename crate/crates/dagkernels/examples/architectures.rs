//! Build the architecture families, print their text descriptions, and
//! check the structural assumptions.
//!
//! Run with `cargo run --example architectures`.

use dagkernels::arch::{
    build_dcnn, build_mlp, format_description, validate_assumptions, DcnnShape, Readout,
    ValidationConstants,
};
use dagkernels::dual::gaussian_dual;

fn main() {
    let dual = gaussian_dual(1.0).unwrap();
    let p = 4;
    let d = p * p * p * p;

    let mlp = build_mlp(4, d, dual.clone()).unwrap();
    let deep = build_dcnn(
        &DcnnShape::quarter_exponents(p),
        d,
        Readout::Flatten,
        true,
        dual.clone(),
    )
    .unwrap();
    let gap = build_dcnn(
        &DcnnShape::quarter_exponents(p),
        d,
        Readout::Gap,
        false,
        dual,
    )
    .unwrap();

    for dag in [&mlp, &deep, &gap] {
        println!("=== {}", dag.label());
        println!(
            "nodes: {}, inputs: {} x dim {}, pooling window: {}",
            dag.nodes().len(),
            dag.input_nodes().len(),
            dag.nodes()[dag.input_nodes()[0]].concrete_dim,
            dag.pool_window()
        );
        print!("{}", format_description(dag));
        let report = validate_assumptions(dag, &ValidationConstants::default());
        for item in &report.items {
            println!("  [{}] {}", if item.pass { "ok" } else { "FAIL" }, item.rule);
        }
    }
}
