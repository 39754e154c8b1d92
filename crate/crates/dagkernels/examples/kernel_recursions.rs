//! Evaluate NNGP and NTK kernels on a DAG, assemble a small kernel matrix,
//! and round-trip it through the binary file format.
//!
//! Run with `cargo run --example kernel_recursions`.

use dagkernels::arch::{build_dcnn, build_mlp, DcnnShape, Readout};
use dagkernels::data::SphereDataset;
use dagkernels::dual::{centered_exp_dual, gaussian_dual};
use dagkernels::kernel::{kernel_matrix, nngp_eval, ntk_eval, KernelKind, KernelMatrix};

fn main() {
    // MLP kernels are nested compositions of the dual.
    let dual = gaussian_dual(1.0).unwrap();
    let mlp = build_mlp(3, 64, dual).unwrap();
    for t in [-0.5, 0.0, 0.5, 1.0] {
        println!(
            "mlp t={t:+.1}: nngp={:+.6} ntk={:+.6}",
            nngp_eval(&mlp, &[t]).unwrap(),
            ntk_eval(&mlp, &[t]).unwrap()
        );
    }

    // Convolutional kernels take one correlation per input patch.
    let dual = centered_exp_dual(1.0).unwrap();
    let dag = build_dcnn(
        &DcnnShape::quarter_exponents(3),
        81,
        Readout::Flatten,
        true,
        dual,
    )
    .unwrap();
    let n = dag.input_nodes().len();
    let mut t = vec![0.0; n];
    t[0] = 0.9;
    println!(
        "dcnn single active patch: nngp={:+.6} ntk={:+.6}",
        nngp_eval(&dag, &t).unwrap(),
        ntk_eval(&dag, &t).unwrap()
    );

    // A small kernel matrix on random product-sphere points.
    let x = SphereDataset::sample(6, 27, 3, 7, "demo");
    let k = kernel_matrix(&dag, KernelKind::Ntk, &x, None).unwrap();
    println!("6x6 NTK matrix diagonal:");
    for i in 0..k.rows {
        print!(" {:+.4}", k.at(i, i));
    }
    println!();

    // Persist and reload.
    let mut buf = Vec::new();
    k.write_to(&mut buf).unwrap();
    let back = KernelMatrix::read_from(&buf[..], k.meta.clone()).unwrap();
    println!(
        "binary round trip: {} bytes, {}x{}, max diff {:e}",
        buf.len(),
        back.rows,
        back.cols,
        k.data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    );
}
