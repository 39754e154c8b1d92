//! Global-average-pooling vs flatten readouts on symmetric targets: the
//! pooled kernel reaches the same residual with a window-factor fewer
//! samples.
//!
//! Run with `cargo run --example gap_vs_flatten`. Takes about a minute.

use dagkernels::arch::{build_dcnn, DcnnShape, Readout};
use dagkernels::dual::gaussian_dual;
use dagkernels::harmonics::{build_eigenfunction, CoefficientMode, EigenId};
use dagkernels::regression::{gap_vs_flatten, CurveOptions};

fn main() {
    let p = 3;
    let d = 81;
    let dual = gaussian_dual(1.0).unwrap();
    let gap = build_dcnn(&DcnnShape::quarter_exponents(p), d, Readout::Gap, false, dual.clone())
        .unwrap();
    let flat =
        build_dcnn(&DcnnShape::quarter_exponents(p), d, Readout::Flatten, false, dual).unwrap();
    let ids = [EigenId::Y1, EigenId::Y2, EigenId::Y3];
    let targets: Vec<_> = ids
        .iter()
        .map(|&id| build_eigenfunction(id, p, 1, CoefficientMode::Constant, 10_000).unwrap())
        .collect();
    let opts = CurveOptions {
        test_size: 1000,
        jitter_scale: 1e-8,
        mem_cap: None,
        data_layout: Some((27, 3)),
    };
    let schedule = [243, 729, 2187];
    let rows = gap_vs_flatten(&gap, &flat, &targets, &schedule, &[5], &opts).unwrap();
    for &m in &schedule {
        for id in &ids {
            let val = |tag: &str| {
                rows.iter()
                    .find(|(t, r)| t == tag && r.m_train == m && r.mode == id.name())
                    .map(|(_, r)| r.residual)
                    .unwrap()
            };
            println!(
                "m={m:5} {:3}: gap {:.4}  flatten {:.4}",
                id.name(),
                val("gap"),
                val("flatten")
            );
        }
    }
}
