//! Gegenbauer orthogonality by quadrature, the addition theorem on explicit
//! bases, zonal harmonic norms, and eigenfunction serialization.
//!
//! Run with `cargo run --example harmonics_toolkit`.

use dagkernels::harmonics::{
    addition_theorem_check, build_eigenfunction, gauss_gegenbauer, gegenbauer_eval,
    harmonic_count, surface_area, CoefficientMode, EigenId, Eigenfunction,
};

fn main() {
    // Orthogonality: integral P_r P_s w dt = delta_rs mu0 / N(d, r).
    let d = 10;
    let (nodes, weights) = gauss_gegenbauer(d, 200);
    let mu0 = surface_area(d) / surface_area(d - 1);
    for r in 0..=3 {
        for s in 0..=3 {
            let integral: f64 = nodes
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| w * gegenbauer_eval(d, r, t) * gegenbauer_eval(d, s, t))
                .sum();
            let expected = if r == s { mu0 / harmonic_count(d, r) } else { 0.0 };
            print!(" {:+.2e}", integral - expected);
        }
        println!();
    }

    for dim in [2usize, 3] {
        for r in 0..=4 {
            let dev = addition_theorem_check(dim, r, 200, 7).unwrap();
            println!("addition theorem d={dim} r={r}: max deviation {dev:.2e}");
        }
    }

    // Eigenfunctions serialize to JSON and reload exactly.
    let f = build_eigenfunction(EigenId::Y5Star, 3, 11, CoefficientMode::Random, 10_000).unwrap();
    let json = serde_json::to_string_pretty(&f).unwrap();
    let back: Eigenfunction = serde_json::from_str(&json).unwrap();
    println!(
        "{}: {} terms, {} bytes of JSON, normalization {:.6} (round trip exact: {})",
        f.id.name(),
        f.terms.len(),
        json.len(),
        f.normalization,
        f.normalization == back.normalization
    );
    println!(
        "non-harmonic factors flagged: {}",
        build_eigenfunction(EigenId::Y6, 3, 11, CoefficientMode::Random, 10_000)
            .unwrap()
            .non_harmonic_factors()
            .len()
    );
}
