//! Dense symmetric linear algebra for kernel regression.
//!
//! The Cholesky factorization is blocked and right-looking; the trailing
//! update parallelizes over row blocks against a copied panel, so every
//! entry is computed by exactly one task with a fixed summation order and
//! results are bit-identical for any thread count.

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix not positive definite at pivot {0}")]
    NotPositiveDefinite(usize),
    #[error("conjugate gradient failed to reach tolerance {tol} in {iters} iterations (residual {residual})")]
    CgDidNotConverge { tol: f64, iters: usize, residual: f64 },
}

const BLOCK: usize = 512;
const ROW_TILE: usize = 96;

/// Dot product with independent accumulator lanes so FMA chains overlap.
#[inline]
fn dot_wide(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    const UNROLL: usize = 4;
    let mut acc = [[0.0f64; LANES]; UNROLL];
    let step = LANES * UNROLL;
    let chunks = a.len() / step;
    for c in 0..chunks {
        let base = c * step;
        for u in 0..UNROLL {
            let off = base + u * LANES;
            let (av, bv) = (&a[off..off + LANES], &b[off..off + LANES]);
            for l in 0..LANES {
                acc[u][l] = av[l].mul_add(bv[l], acc[u][l]);
            }
        }
    }
    let mut total = 0.0;
    for u in 0..UNROLL {
        for l in 0..LANES {
            total += acc[u][l];
        }
    }
    for t in chunks * step..a.len() {
        total += a[t] * b[t];
    }
    total
}

/// 2x2 register-blocked rank-update: returns the four dot products between
/// rows (i0, i1) and (j0, j1). One load pair feeds two FMA chains, doubling
/// arithmetic intensity over plain dots.
#[inline]
fn dot_2x2(pi0: &[f64], pi1: &[f64], pj0: &[f64], pj1: &[f64]) -> (f64, f64, f64, f64) {
    const LANES: usize = 8;
    let mut a00 = [0.0f64; LANES];
    let mut a01 = [0.0f64; LANES];
    let mut a10 = [0.0f64; LANES];
    let mut a11 = [0.0f64; LANES];
    let chunks = pi0.len() / LANES;
    for c in 0..chunks {
        let off = c * LANES;
        let (x0, x1) = (&pi0[off..off + LANES], &pi1[off..off + LANES]);
        let (y0, y1) = (&pj0[off..off + LANES], &pj1[off..off + LANES]);
        for l in 0..LANES {
            a00[l] = x0[l].mul_add(y0[l], a00[l]);
            a01[l] = x0[l].mul_add(y1[l], a01[l]);
            a10[l] = x1[l].mul_add(y0[l], a10[l]);
            a11[l] = x1[l].mul_add(y1[l], a11[l]);
        }
    }
    let (mut s00, mut s01, mut s10, mut s11) = (0.0, 0.0, 0.0, 0.0);
    for l in 0..LANES {
        s00 += a00[l];
        s01 += a01[l];
        s10 += a10[l];
        s11 += a11[l];
    }
    for t in chunks * LANES..pi0.len() {
        s00 += pi0[t] * pj0[t];
        s01 += pi0[t] * pj1[t];
        s10 += pi1[t] * pj0[t];
        s11 += pi1[t] * pj1[t];
    }
    (s00, s01, s10, s11)
}

/// In-place lower Cholesky of the symmetric matrix `a` (row-major `n x n`).
/// Only the lower triangle is referenced and written. Right-looking and
/// blocked; the trailing update runs over disjoint row tiles against a
/// copied panel, so the computation order per entry is fixed regardless of
/// thread count.
pub fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), LinalgError> {
    assert_eq!(a.len(), n * n);
    let mut k0 = 0;
    while k0 < n {
        let kb = BLOCK.min(n - k0);
        let k_end = k0 + kb;
        factor_diag_block(a, n, k0, k_end)?;
        if k_end == n {
            break;
        }
        // Copy the finalized diagonal block, then solve the panel rows
        // L[i][k-block] = A[i][k-block] L[kk]^{-T} in parallel.
        let mut diag_block = vec![0.0f64; kb * kb];
        for j in 0..kb {
            for t in 0..=j {
                diag_block[j * kb + t] = a[(k0 + j) * n + k0 + t];
            }
        }
        {
            let (_, tail) = a.split_at_mut(k_end * n);
            tail.par_chunks_mut(n).for_each(|row| {
                for j in 0..kb {
                    let v = row[k0 + j] - dot_wide(&row[k0..k0 + j], &diag_block[j * kb..j * kb + j]);
                    row[k0 + j] = v / diag_block[j * kb + j];
                }
            });
        }
        // Copy the panel, then update the trailing lower triangle:
        // A[i][j] -= panel[i] . panel[j] for k_end <= j <= i < n.
        // j runs in tiles so a panel tile stays cache-hot across the rows
        // of one task.
        let rem = n - k_end;
        let mut panel = vec![0.0f64; rem * kb];
        for i in 0..rem {
            let row = &a[(k_end + i) * n + k0..(k_end + i) * n + k_end];
            panel[i * kb..(i + 1) * kb].copy_from_slice(row);
        }
        {
            let (_, tail) = a.split_at_mut(k_end * n);
            tail.par_chunks_mut(n * ROW_TILE)
                .enumerate()
                .for_each(|(tile, rows)| {
                    let i0 = tile * ROW_TILE;
                    let nrows = rows.len() / n;
                    let mut j0 = 0;
                    while j0 <= i0 + nrows - 1 {
                        let j1 = (j0 + ROW_TILE).min(i0 + nrows);
                        for (pair_idx, pair) in rows.chunks_mut(2 * n).enumerate() {
                            let gi0 = i0 + 2 * pair_idx;
                            let pi0 = &panel[gi0 * kb..(gi0 + 1) * kb];
                            if pair.len() == 2 * n {
                                let (r0, r1) = pair.split_at_mut(n);
                                let gi1 = gi0 + 1;
                                let pi1 = &panel[gi1 * kb..(gi1 + 1) * kb];
                                let j_hi0 = j1.min(gi0 + 1);
                                let j_hi1 = j1.min(gi1 + 1);
                                let mut j = j0;
                                while j + 1 < j_hi0 {
                                    let pj0 = &panel[j * kb..(j + 1) * kb];
                                    let pj1 = &panel[(j + 1) * kb..(j + 2) * kb];
                                    let (s00, s01, s10, s11) = dot_2x2(pi0, pi1, pj0, pj1);
                                    r0[k_end + j] -= s00;
                                    r0[k_end + j + 1] -= s01;
                                    r1[k_end + j] -= s10;
                                    r1[k_end + j + 1] -= s11;
                                    j += 2;
                                }
                                for jj in j..j_hi0 {
                                    r0[k_end + jj] -=
                                        dot_wide(pi0, &panel[jj * kb..(jj + 1) * kb]);
                                }
                                for jj in j..j_hi1 {
                                    r1[k_end + jj] -=
                                        dot_wide(pi1, &panel[jj * kb..(jj + 1) * kb]);
                                }
                            } else {
                                let j_hi = j1.min(gi0 + 1);
                                for j in j0..j_hi {
                                    pair[k_end + j] -=
                                        dot_wide(pi0, &panel[j * kb..(j + 1) * kb]);
                                }
                            }
                        }
                        j0 = j1;
                    }
                });
        }
        k0 = k_end;
    }
    Ok(())
}

/// Unblocked factorization of `a[k0..k_end, k0..k_end]`, using the already
/// computed columns inside the block.
fn factor_diag_block(a: &mut [f64], n: usize, k0: usize, k_end: usize) -> Result<(), LinalgError> {
    for j in k0..k_end {
        let diag = a[j * n + j] - dot_wide(&a[j * n + k0..j * n + j], &a[j * n + k0..j * n + j]);
        if diag <= 0.0 || !diag.is_finite() {
            return Err(LinalgError::NotPositiveDefinite(j));
        }
        let d = diag.sqrt();
        a[j * n + j] = d;
        let inv = 1.0 / d;
        for i in (j + 1)..k_end {
            // rows i and j overlap only in disjoint column ranges here
            let (row_j, row_i) = {
                let (lo, hi) = a.split_at_mut(i * n);
                (&lo[j * n + k0..j * n + j], &mut hi[k0..j + 1])
            };
            let v = row_i[j - k0] - dot_wide(&row_i[..j - k0], row_j);
            row_i[j - k0] = v * inv;
        }
    }
    Ok(())
}

/// Solve `L y = b` then `L^T x = y` given the lower factor in `a`.
pub fn cholesky_solve(a: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..n {
        let mut v = x[i];
        for j in 0..i {
            v -= a[i * n + j] * x[j];
        }
        x[i] = v / a[i * n + i];
    }
    for i in (0..n).rev() {
        let mut v = x[i];
        for j in (i + 1)..n {
            v -= a[j * n + i] * x[j];
        }
        x[i] = v / a[i * n + i];
    }
    x
}

/// Solve the ridge system `(K + jitter I) x = y` by Cholesky, retrying with
/// ten-fold jitter up to three times. Consumes the matrix. Returns the
/// solution and the jitter actually used.
pub fn solve_spd(
    mut k: Vec<f64>,
    n: usize,
    y: &[f64],
    jitter: f64,
) -> Result<(Vec<f64>, f64), LinalgError> {
    let original = k.clone();
    let mut jit = jitter;
    for attempt in 0..3 {
        if attempt > 0 {
            k.copy_from_slice(&original);
        }
        for i in 0..n {
            k[i * n + i] += jit;
        }
        match cholesky_in_place(&mut k, n) {
            Ok(()) => return Ok((cholesky_solve(&k, n, y), jit)),
            Err(_) if attempt < 2 => jit *= 10.0,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

/// Conjugate gradient for symmetric positive definite systems, used above
/// the dense-solver size cap. Fixed iteration order keeps it deterministic.
pub fn cg_solve(
    matvec: &dyn Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    tol: f64,
    max_iters: usize,
) -> Result<Vec<f64>, LinalgError> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let norm_b = r.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let mut rs = r.iter().map(|v| v * v).sum::<f64>();
    for _ in 0..max_iters {
        if rs.sqrt() / norm_b <= tol {
            return Ok(x);
        }
        let ap = matvec(&p);
        let denom: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        let alpha = rs / denom;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
    }
    if rs.sqrt() / norm_b <= tol {
        Ok(x)
    } else {
        Err(LinalgError::CgDidNotConverge {
            tol,
            iters: max_iters,
            residual: rs.sqrt() / norm_b,
        })
    }
}

/// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
/// Test-oracle quality: O(n^3) per sweep, fine for a few hundred rows.
pub fn jacobi_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    let mut m = a.to_vec();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-12 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| m[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_stream;
    use approx::assert_relative_eq;

    fn random_spd(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = derive_stream(seed, 0x11);
        let g: Vec<f64> = (0..n * n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += g[i * n + k] * g[j * n + k];
                }
                a[i * n + j] = acc + if i == j { n as f64 } else { 0.0 };
            }
        }
        a
    }

    #[test]
    fn cholesky_reconstructs() {
        for n in [1usize, 5, 64, 130, 301] {
            let a = random_spd(n, n as u64);
            let mut l = a.clone();
            cholesky_in_place(&mut l, n).unwrap();
            for i in 0..n {
                for j in 0..=i {
                    let mut acc = 0.0;
                    for k in 0..=j {
                        acc += l[i * n + k] * l[j * n + k];
                    }
                    assert_relative_eq!(acc, a[i * n + j], max_relative = 1e-9, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn solve_matches_direct_substitution() {
        let n = 97;
        let a = random_spd(n, 3);
        let mut rng = derive_stream(4, 0x22);
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let (x, _) = solve_spd(a.clone(), n, &b, 0.0).unwrap();
        // residual
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += a[i * n + j] * x[j];
            }
            assert_relative_eq!(acc, b[i], max_relative = 1e-8, epsilon = 1e-8);
        }
    }

    #[test]
    fn jitter_retry_rescues_singular_matrices() {
        let n = 16;
        // rank-deficient: outer product of a single vector
        let mut rng = derive_stream(5, 0x33);
        let v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = v[i] * v[j];
            }
        }
        let b = vec![1.0; n];
        let (x, used) = solve_spd(a, n, &b, 1e-8).unwrap();
        assert!(used >= 1e-8);
        assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn not_positive_definite_reported() {
        let a = vec![1.0, 0.0, 0.0, -1.0];
        let mut l = a.clone();
        let err = cholesky_in_place(&mut l, 2);
        assert_eq!(err, Err(LinalgError::NotPositiveDefinite(1)));
    }

    #[test]
    fn cg_agrees_with_cholesky() {
        let n = 80;
        let a = random_spd(n, 9);
        let mut rng = derive_stream(10, 0x44);
        let b: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let (x_chol, _) = solve_spd(a.clone(), n, &b, 0.0).unwrap();
        let matvec = |v: &[f64]| -> Vec<f64> {
            (0..n)
                .map(|i| (0..n).map(|j| a[i * n + j] * v[j]).sum())
                .collect()
        };
        let x_cg = cg_solve(&matvec, &b, 1e-10, 10_000).unwrap();
        for i in 0..n {
            assert_relative_eq!(x_cg[i], x_chol[i], max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn jacobi_finds_known_spectrum() {
        // diag(1, 2, 3) rotated by an orthogonal similarity stays {1,2,3}.
        let a = vec![2.0, 1.0, 0.0, 1.0, 2.0, 1.0, 0.0, 1.0, 2.0];
        let mut eigs = jacobi_eigenvalues(&a, 3);
        eigs.sort_by(f64::total_cmp);
        let expected = [2.0 - 2f64.sqrt(), 2.0, 2.0 + 2f64.sqrt()];
        for (e, x) in eigs.iter().zip(expected) {
            assert_relative_eq!(*e, x, epsilon = 1e-9);
        }
    }
}
