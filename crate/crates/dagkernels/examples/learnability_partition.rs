//! Learning sequences, budget partitions, and eigenspace dimension counts.
//!
//! Run with `cargo run --example learnability_partition`.

use dagkernels::arch::{build_dcnn, build_mlp, DcnnShape, Readout};
use dagkernels::dual::centered_exp_dual;
use dagkernels::frac::{format_frac, Frac};
use dagkernels::indices::{budget_partition, eigenspace_dimension, learning_sequence};

fn main() {
    let dual = centered_exp_dual(1.0).unwrap();
    let mlp = build_mlp(4, 81, dual.clone()).unwrap();
    let cnn = build_dcnn(
        &DcnnShape::quarter_exponents(3),
        81,
        Readout::Flatten,
        true,
        dual,
    )
    .unwrap();

    for dag in [&mlp, &cnn] {
        let seq = learning_sequence(dag, 3, Frac::new(9, 4), 2_000_000).unwrap();
        let values: Vec<String> = seq.iter().map(|c| format_frac(&c.learning)).collect();
        println!("{}: learning indices {}", dag.label(), values.join(", "));
    }

    let budget = Frac::new(157, 100);
    let (learnable, unlearnable) = budget_partition(&cnn, budget, 3, 2_000_000).unwrap();
    println!(
        "budget {}: {} learnable classes, {} beyond",
        format_frac(&budget),
        learnable.len(),
        unlearnable.len()
    );

    for class in learnable {
        let dim = eigenspace_dimension(&cnn, class.learning, 3, 2_000_000).unwrap();
        println!(
            "  L = {:5}: {} index patterns, eigenspace dimension {}",
            format_frac(&class.learning),
            class.pattern_count,
            dim
        );
    }
}
