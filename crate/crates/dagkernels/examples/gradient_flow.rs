//! Spectral picture of gradient flow: each eigenfunction's residual decays
//! as exp(-lambda t), so within a time budget t ~ d^r only modes with
//! learning index below r make progress.
//!
//! Run with `cargo run --example gradient_flow`.

use dagkernels::arch::{build_dcnn, DcnnShape, Readout};
use dagkernels::dual::centered_exp_dual;
use dagkernels::frac::frac_to_f64;
use dagkernels::harmonics::EigenId;
use dagkernels::indices::{canonical_multi_index, index_triple};
use dagkernels::kernel::{eigenvalue_estimate, EigenvalueMethod, KernelKind};
use dagkernels::regression::gradient_flow_residual;

fn main() {
    let p = 4;
    let d = (p * p * p * p) as f64;
    let dual = centered_exp_dual(0.02).unwrap();
    let dag = build_dcnn(
        &DcnnShape::quarter_exponents(p),
        d as usize,
        Readout::Flatten,
        true,
        dual,
    )
    .unwrap();
    for budget in [1.12f64, 2.6] {
        let t = d.powf(budget);
        println!("time budget t = d^{budget} = {t:.0}");
        for id in EigenId::all() {
            let r = match canonical_multi_index(id, p, &dag) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let l = frac_to_f64(&index_triple(&dag, &r).unwrap().learning.as_frac().unwrap());
            let lam = eigenvalue_estimate(&dag, KernelKind::Ntk, &r, EigenvalueMethod::JetMarginalized, 0, 0)
                .unwrap()
                .value;
            println!(
                "  {:7} L={l:<5} lambda={lam:9.3e}  residual factor {:.4}",
                id.name(),
                gradient_flow_residual(lam, t)
            );
        }
    }
}
