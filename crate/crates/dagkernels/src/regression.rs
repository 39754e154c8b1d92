//! Kernel (ridgeless) regression on products of spheres, per-eigenfunction
//! residual decomposition, and the spectral gradient-flow factor.

use crate::arch::ArchDag;
use crate::data::SphereDataset;
use crate::harmonics::Eigenfunction;
use crate::kernel::{kernel_matrix, KernelError, KernelEvaluator, KernelKind};
use crate::linalg::{cg_solve, solve_spd, LinalgError};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RegressionError {
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("labels length {got} does not match training size {expected}")]
    LabelMismatch { got: usize, expected: usize },
    #[error("kernel matrix needs {needed} bytes, above the configured cap {cap}")]
    MemoryCap { needed: usize, cap: usize },
    #[error("m schedule must be strictly increasing")]
    BadSchedule,
}

/// Training size above which the dense factorization gives way to conjugate
/// gradients.
pub const DENSE_SOLVER_CAP: usize = 20_000;

/// Sample `m` training inputs on the product of radius-`sqrt(p)` spheres.
pub fn sample_inputs(m: usize, patches: usize, p: usize, seed: u64) -> SphereDataset {
    SphereDataset::sample(m, patches, p, seed, "data")
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub predictions: Vec<f64>,
    pub train_mse: f64,
    pub jitter_used: f64,
}

/// Relative jitter: `scale * trace(K) / m` keeps the ridgeless limit stable
/// in floating point.
pub fn relative_jitter(k_diag_mean: f64, scale: f64) -> f64 {
    scale * k_diag_mean
}

/// Kernel regression: solve `(K + jitter I) alpha = labels` on the training
/// set, then predict on the test set by streaming cross-kernel rows.
pub fn fit_predict(
    dag: &ArchDag,
    kind: KernelKind,
    train: &SphereDataset,
    labels: &[f64],
    test: &SphereDataset,
    jitter_scale: f64,
    mem_cap: Option<usize>,
) -> Result<FitResult, RegressionError> {
    let m = train.len();
    if labels.len() != m {
        return Err(RegressionError::LabelMismatch {
            got: labels.len(),
            expected: m,
        });
    }
    if let Some(cap) = mem_cap {
        let needed = m * m * std::mem::size_of::<f64>();
        if needed > cap {
            return Err(RegressionError::MemoryCap { needed, cap });
        }
    }
    let k = kernel_matrix(dag, kind, train, None)?;
    let diag_mean = (0..m).map(|i| k.at(i, i)).sum::<f64>() / m as f64;
    let jitter = relative_jitter(diag_mean, jitter_scale);
    let (alpha, jitter_used) = if m <= DENSE_SOLVER_CAP {
        solve_spd(k.data, m, labels, jitter)?
    } else {
        let data = k.data;
        let matvec = move |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; m];
            out.par_iter_mut().enumerate().for_each(|(i, o)| {
                let row = &data[i * m..(i + 1) * m];
                let mut acc = 0.0;
                for (a, b) in row.iter().zip(v) {
                    acc += a * b;
                }
                *o = acc + jitter * v[i];
            });
            out
        };
        (cg_solve(&matvec, labels, 1e-8, 10 * m)?, jitter)
    };
    // Train MSE directly from the ridge identity: K alpha - y = -jitter alpha.
    let train_mse =
        jitter_used * jitter_used * alpha.iter().map(|a| a * a).sum::<f64>() / m as f64;
    // Stream predictions.
    let ev = KernelEvaluator::new(dag, kind);
    let mut predictions = vec![0.0; test.len()];
    predictions
        .par_iter_mut()
        .enumerate()
        .map_init(
            || ev.scratch(),
            |scratch, (j, out)| {
                let tp = test.point(j);
                let mut acc = 0.0;
                for (i, a) in alpha.iter().enumerate() {
                    acc += a * ev.entry(train.point(i), tp, scratch);
                }
                *out = acc;
            },
        )
        .collect::<Vec<()>>();
    Ok(FitResult {
        predictions,
        train_mse,
        jitter_used,
    })
}

#[derive(Debug, Clone)]
pub struct ModeResidual {
    pub mode: String,
    /// Projection coefficient of the prediction onto the mode.
    pub c_hat: f64,
    /// `0.5 (c_hat - 1)^2 ||Y||^2_test`.
    pub residual: f64,
    /// Empirical squared norm of the mode on the test set.
    pub norm_sq_test: f64,
}

/// Project predictions onto each eigenfunction over the test set:
/// `c_i = mean(f_hat(x) Y_i(x))`, residual `0.5 (c_i - 1)^2 ||Y_i||^2_test`.
pub fn residual_decomposition(
    predictions: &[f64],
    test: &SphereDataset,
    eigenfunctions: &[Eigenfunction],
) -> Vec<ModeResidual> {
    let m = test.len();
    eigenfunctions
        .iter()
        .map(|f| {
            let mut dot = 0.0;
            let mut norm_sq = 0.0;
            for j in 0..m {
                let y = f.eval(test.point(j));
                dot += predictions[j] * y;
                norm_sq += y * y;
            }
            norm_sq /= m as f64;
            let c_hat = dot / (m as f64) / norm_sq;
            ModeResidual {
                mode: f.id.name().to_string(),
                c_hat,
                residual: 0.5 * (c_hat - 1.0) * (c_hat - 1.0) * norm_sq,
                norm_sq_test: norm_sq,
            }
        })
        .collect()
}

/// Residual factor of one gradient-flow mode after time `t`.
pub fn gradient_flow_residual(eigenvalue: f64, t: f64) -> f64 {
    debug_assert!(eigenvalue >= 0.0 && t >= 0.0);
    (-eigenvalue * t).exp()
}

/// One learning-curve measurement.
#[derive(Debug, Clone)]
pub struct CurveRow {
    pub m_train: usize,
    pub mode: String,
    pub seed: u64,
    pub residual: f64,
    pub c_hat: f64,
    pub train_mse: f64,
    pub total_test_mse: f64,
    /// Empirical squared norm of the mode on the test split.
    pub norm_sq_test: f64,
}

pub struct CurveOptions {
    pub test_size: usize,
    pub jitter_scale: f64,
    pub mem_cap: Option<usize>,
    /// Sampling layout (patches, patch dim). Defaults to the dag's input
    /// layout; set it to the fine product-of-spheres layout when the dag
    /// groups several sampling patches into one input node (MLPs, coarse
    /// convolutions).
    pub data_layout: Option<(usize, usize)>,
}

impl Default for CurveOptions {
    fn default() -> Self {
        CurveOptions {
            test_size: 2000,
            jitter_scale: 1e-8,
            mem_cap: None,
            data_layout: None,
        }
    }
}

/// Full learning-curve protocol: for each training size and seed, fit the
/// kernel regression on the summed target and decompose residuals per mode.
/// The target is the sum of the supplied eigenfunctions; labels and test
/// data are derived deterministically from (master seed, data seed).
pub fn learning_curve(
    dag: &ArchDag,
    kind: KernelKind,
    targets: &[Eigenfunction],
    m_schedule: &[usize],
    seeds: &[u64],
    opts: &CurveOptions,
) -> Result<Vec<CurveRow>, RegressionError> {
    if m_schedule.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RegressionError::BadSchedule);
    }
    let dag_patches = dag.input_nodes().len();
    let dag_p = dag.nodes()[dag.input_nodes()[0]].concrete_dim;
    let (patches, p) = opts.data_layout.unwrap_or((dag_patches, dag_p));
    let mut rows = Vec::new();
    for &seed in seeds {
        let test = SphereDataset::sample(opts.test_size, patches, p, seed, "test");
        let test_labels = target_values(targets, &test);
        let test_view = test.regroup(dag_patches, dag_p);
        for &m in m_schedule {
            let train = SphereDataset::sample(m, patches, p, seed, "train");
            let labels = target_values(targets, &train);
            let train_view = train.regroup(dag_patches, dag_p);
            let fit = fit_predict(
                dag,
                kind,
                &train_view,
                &labels,
                &test_view,
                opts.jitter_scale,
                opts.mem_cap,
            )?;
            let total_test_mse = fit
                .predictions
                .iter()
                .zip(&test_labels)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / test.len() as f64;
            for mode in residual_decomposition(&fit.predictions, &test, targets) {
                rows.push(CurveRow {
                    m_train: m,
                    mode: mode.mode,
                    seed,
                    residual: mode.residual,
                    c_hat: mode.c_hat,
                    train_mse: fit.train_mse,
                    total_test_mse,
                    norm_sq_test: mode.norm_sq_test,
                });
            }
        }
    }
    Ok(rows)
}

pub fn target_values(targets: &[Eigenfunction], data: &SphereDataset) -> Vec<f64> {
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let pt = data.point(i);
            targets.iter().map(|f| f.eval(pt)).sum()
        })
        .collect()
}

/// Paired learning curves for a GAP dag and its flatten twin on symmetric
/// targets; rows are tagged with the readout name.
pub fn gap_vs_flatten(
    gap_dag: &ArchDag,
    flat_dag: &ArchDag,
    targets: &[Eigenfunction],
    m_schedule: &[usize],
    seeds: &[u64],
    opts: &CurveOptions,
) -> Result<Vec<(String, CurveRow)>, RegressionError> {
    let mut rows = Vec::new();
    for (tag, dag) in [("gap", gap_dag), ("flatten", flat_dag)] {
        for row in learning_curve(dag, KernelKind::Ntk, targets, m_schedule, seeds, opts)? {
            rows.push((tag.to_string(), row));
        }
    }
    Ok(rows)
}
