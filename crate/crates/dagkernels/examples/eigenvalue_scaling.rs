//! Eigenvalue decay across input dimension: jet estimates and their
//! log-log slopes against the learning-index prediction, with a Monte
//! Carlo cross-check at one size.
//!
//! Run with `cargo run --example eigenvalue_scaling`.

use dagkernels::arch::{build_dcnn, DcnnShape, Readout};
use dagkernels::cli::fit_loglog_slope;
use dagkernels::dual::centered_exp_dual;
use dagkernels::frac::frac_to_f64;
use dagkernels::harmonics::EigenId;
use dagkernels::indices::{canonical_multi_index, index_triple};
use dagkernels::kernel::{eigenvalue_estimate, EigenvalueMethod, KernelKind};

fn main() {
    for id in [EigenId::Y1, EigenId::Y2, EigenId::Y3, EigenId::Y5] {
        let mut points = Vec::new();
        let mut l_val = 0.0;
        for p in [2usize, 3, 4] {
            let d = p * p * p * p;
            let dual = centered_exp_dual(1.0).unwrap();
            let dag = build_dcnn(&DcnnShape::quarter_exponents(p), d, Readout::Flatten, true, dual)
                .unwrap();
            let r = canonical_multi_index(id, p, &dag).unwrap();
            l_val = frac_to_f64(&index_triple(&dag, &r).unwrap().learning.as_frac().unwrap());
            let jet =
                eigenvalue_estimate(&dag, KernelKind::Ntk, &r, EigenvalueMethod::Jet, 0, 0).unwrap();
            points.push((d as f64, jet.value));
            if p == 3 {
                let mc = eigenvalue_estimate(
                    &dag,
                    KernelKind::Ntk,
                    &r,
                    EigenvalueMethod::MonteCarlo,
                    200_000,
                    42,
                )
                .unwrap();
                println!(
                    "{:7} p=3: jet {:.3e}, mc {:.3e} +- {:.1e}",
                    id.name(),
                    jet.value,
                    mc.value,
                    mc.std_error
                );
            }
        }
        let slope = fit_loglog_slope(&points).unwrap();
        println!(
            "{:7} slope {:.3} vs predicted {:.3}\n",
            id.name(),
            slope,
            -l_val
        );
    }
}
