//! A small kernel-regression learning curve: residual per eigenfunction as
//! the training set grows, on the fine convolutional architecture.
//!
//! Run with `cargo run --example regression_curve`. Takes about a minute.

use dagkernels::arch::{build_dcnn, DcnnShape, Readout};
use dagkernels::dual::gaussian_dual;
use dagkernels::harmonics::{build_eigenfunction, CoefficientMode, EigenId};
use dagkernels::kernel::KernelKind;
use dagkernels::regression::{learning_curve, CurveOptions};

fn main() {
    let p = 3;
    let d = 81;
    let dual = gaussian_dual(1.0).unwrap();
    let dag = build_dcnn(
        &DcnnShape::quarter_exponents(p),
        d,
        Readout::Flatten,
        true,
        dual,
    )
    .unwrap();
    let ids = [EigenId::Y1, EigenId::Y2, EigenId::Y3, EigenId::Y4];
    let targets: Vec<_> = ids
        .iter()
        .map(|&id| build_eigenfunction(id, p, 1, CoefficientMode::Random, 10_000).unwrap())
        .collect();
    let opts = CurveOptions {
        test_size: 1000,
        jitter_scale: 1e-8,
        mem_cap: None,
        data_layout: Some((27, 3)),
    };
    let schedule = [81, 243, 729, 2187];
    let rows = learning_curve(&dag, KernelKind::Ntk, &targets, &schedule, &[5], &opts).unwrap();
    println!("m      | {}", ids.map(|i| format!("{:>7}", i.name())).join(" "));
    for &m in &schedule {
        let vals: Vec<String> = ids
            .iter()
            .map(|id| {
                rows.iter()
                    .find(|r| r.m_train == m && r.mode == id.name())
                    .map(|r| format!("{:7.3}", r.residual))
                    .unwrap()
            })
            .collect();
        println!("{m:6} | {}", vals.join(" "));
    }
    println!("(residual = (c - 1)^2 ||Y||^2 / 2; smaller = learned)");
}
