//! Datasets on products of spheres.

use crate::rng::{derive_stream, Stream};

/// `m` points, each `patches` blocks of `patch_dim` coordinates on the
/// radius-`sqrt(patch_dim)` sphere. Split tags keep seed streams disjoint.
#[derive(Debug, Clone)]
pub struct SphereDataset {
    pub patches: usize,
    pub patch_dim: usize,
    pub seed: u64,
    pub split: String,
    data: Vec<f64>,
}

/// Fill `out` with one uniform point on the product of radius-`sqrt(p)`
/// spheres (`patches * p` coordinates).
pub fn fill_product_sphere(rng: &mut Stream, patches: usize, p: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), patches * p);
    for patch in 0..patches {
        let slice = &mut out[patch * p..(patch + 1) * p];
        loop {
            let mut norm = 0.0;
            for x in slice.iter_mut() {
                *x = rng.normal();
                norm += *x * *x;
            }
            norm = norm.sqrt();
            if norm > 1e-12 {
                let s = (p as f64).sqrt() / norm;
                for x in slice.iter_mut() {
                    *x *= s;
                }
                break;
            }
        }
    }
}

impl SphereDataset {
    /// Sample `m` points; the stream is derived from (seed, split tag) so
    /// different splits never overlap.
    pub fn sample(m: usize, patches: usize, patch_dim: usize, seed: u64, split: &str) -> Self {
        let tag = split
            .bytes()
            .fold(0u64, |acc, b| acc.wrapping_mul(131).wrapping_add(b as u64));
        let mut rng = derive_stream(seed, tag);
        let mut data = vec![0.0; m * patches * patch_dim];
        for i in 0..m {
            let start = i * patches * patch_dim;
            fill_product_sphere(&mut rng, patches, patch_dim, &mut data[start..start + patches * patch_dim]);
        }
        SphereDataset {
            patches,
            patch_dim,
            seed,
            split: split.to_string(),
            data,
        }
    }

    /// Reinterpret the patch layout (total dimensions must match). Points on
    /// a product of spheres regroup exactly onto coarser products: merging
    /// equal blocks keeps every merged norm at `sqrt(block total)`.
    pub fn regroup(&self, patches: usize, patch_dim: usize) -> SphereDataset {
        assert_eq!(self.patches * self.patch_dim, patches * patch_dim);
        SphereDataset {
            patches,
            patch_dim,
            seed: self.seed,
            split: self.split.clone(),
            data: self.data.clone(),
        }
    }

    /// Wrap existing coordinates (used by tests and permutation checks).
    pub fn from_raw(patches: usize, patch_dim: usize, seed: u64, split: &str, data: Vec<f64>) -> Self {
        assert_eq!(data.len() % (patches * patch_dim), 0);
        SphereDataset {
            patches,
            patch_dim,
            seed,
            split: split.to_string(),
            data,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / (self.patches * self.patch_dim)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        let stride = self.patches * self.patch_dim;
        &self.data[i * stride..(i + 1) * stride]
    }

    /// Largest deviation of any patch norm from `sqrt(patch_dim)`.
    pub fn max_norm_deviation(&self) -> f64 {
        let target = (self.patch_dim as f64).sqrt();
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            let pt = self.point(i);
            for patch in 0..self.patches {
                let norm: f64 = pt[patch * self.patch_dim..(patch + 1) * self.patch_dim]
                    .iter()
                    .map(|x| x * x)
                    .sum::<f64>()
                    .sqrt();
                worst = worst.max((norm - target).abs());
            }
        }
        worst
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }
}
