//! NNGP and NTK kernel evaluation on architecture DAGs.
//!
//! The NNGP value at a node is `phi*(mean of child values)` with inputs
//! passing their correlation through; the NTK adds
//! `theta_u = phi*'(mean K) * mean(K + theta)` with zero at inputs. GAP
//! readouts symmetrize the penultimate kernel over all pairs of window
//! positions. Mixed derivatives at the origin propagate truncated Taylor
//! jets through the same recursion, with non-support correlations pinned
//! to zero.

use crate::arch::{ArchDag, NodeId, NodeKind, Readout};
use crate::data::SphereDataset;
use crate::harmonics::{gegenbauer_eval, harmonic_count};
use crate::indices::MultiIndex;
use crate::jet::{Jet, JetError, JetShape};
use crate::rng::derive_stream;
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{Read, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("correlation vector has {got} entries, dag has {expected} input nodes")]
    MissingCorrelation { got: usize, expected: usize },
    #[error("correlation {0} outside [-1, 1]")]
    CorrelationRange(f64),
    #[error("operation requires a {expected:?} readout dag")]
    WrongReadout { expected: Readout },
    #[error("dataset patch layout ({patches} x {dim}) does not match dag inputs")]
    ShapeMismatch { patches: usize, dim: usize },
    #[error("point off the sphere: patch norm deviates by {0}")]
    OffSphere(f64),
    #[error("multi-index support node {0} is not an input of this dag")]
    BadSupport(NodeId),
    #[error("multi-index crosses pooling groups; the symmetrized kernel has no such eigenfunctions")]
    CrossGroupGap,
    #[error("zero multi-index has no eigenvalue")]
    ZeroMultiIndex,
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad kernel matrix file: {0}")]
    BadFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum KernelKind {
    Nngp,
    Ntk,
}

impl KernelKind {
    pub fn name(&self) -> &'static str {
        match self {
            KernelKind::Nngp => "nngp",
            KernelKind::Ntk => "ntk",
        }
    }
}

fn check_correlations(dag: &ArchDag, t: &[f64]) -> Result<(), KernelError> {
    let expected = dag.input_nodes().len();
    if t.len() != expected {
        return Err(KernelError::MissingCorrelation {
            got: t.len(),
            expected,
        });
    }
    for &x in t {
        if !(-1.0 - 1e-9..=1.0 + 1e-9).contains(&x) {
            return Err(KernelError::CorrelationRange(x));
        }
    }
    Ok(())
}

/// NNGP kernel value at the correlation vector `t` (one entry per input
/// node, in input order).
pub fn nngp_eval(dag: &ArchDag, t: &[f64]) -> Result<f64, KernelError> {
    check_correlations(dag, t)?;
    Ok(eval_values(dag, t).0)
}

/// NTK value at the correlation vector `t`.
pub fn ntk_eval(dag: &ArchDag, t: &[f64]) -> Result<f64, KernelError> {
    check_correlations(dag, t)?;
    Ok(eval_values(dag, t).1)
}

/// Reusable per-thread buffers for kernel evaluation: all entry
/// computations are allocation-free.
#[derive(Debug, Clone, Default)]
pub struct EvalScratch {
    t: Vec<f64>,
    k: Vec<f64>,
    theta: Vec<f64>,
}

impl EvalScratch {
    fn prepare(&mut self, dag: &ArchDag, n_corr: usize) {
        self.t.resize(n_corr, 0.0);
        self.k.resize(dag.nodes().len(), 0.0);
        self.theta.resize(dag.nodes().len(), 0.0);
    }
}

/// Single pass computing both kernels; inputs are indexed by input order.
fn eval_values(dag: &ArchDag, t: &[f64]) -> (f64, f64) {
    let mut scratch = EvalScratch::default();
    scratch.prepare(dag, 0);
    eval_values_with(dag, t, &mut scratch)
}

fn eval_values_with(dag: &ArchDag, t: &[f64], scratch: &mut EvalScratch) -> (f64, f64) {
    let nodes = dag.nodes();
    let k = &mut scratch.k;
    let theta = &mut scratch.theta;
    let mut input_pos = 0usize;
    for node in nodes {
        match node.kind {
            NodeKind::Input => {
                k[node.id] = t[input_pos];
                theta[node.id] = 0.0;
                input_pos += 1;
            }
            _ => {
                let children = dag.children(node.id);
                let inv = 1.0 / children.len() as f64;
                let mut mean_k = 0.0;
                let mut mean_kt = 0.0;
                for &c in children {
                    mean_k += k[c];
                    mean_kt += k[c] + theta[c];
                }
                mean_k *= inv;
                mean_kt *= inv;
                let (kv, dv) = node.activation.value_and_deriv(mean_k);
                k[node.id] = kv;
                theta[node.id] = dv * mean_kt;
            }
        }
    }
    (k[dag.output_node()], theta[dag.output_node()])
}

/// Node order of the subtree rooted at `root` (ids ascend, children first)
/// with its input nodes in order; computed once per matrix.
fn subtree_order(dag: &ArchDag, root: NodeId) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut order = Vec::new();
    let mut stack = vec![root];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(id) = stack.pop() {
        if seen.insert(id) {
            order.push(id);
            stack.extend_from_slice(dag.children(id));
        }
    }
    order.sort_unstable();
    let inputs = order
        .iter()
        .copied()
        .filter(|&id| dag.nodes()[id].kind == NodeKind::Input)
        .collect();
    (order, inputs)
}

/// Evaluate the kernel of the subgraph rooted at `root` on correlations for
/// its input descendants (in input order restricted to that subtree).
fn eval_subgraph(dag: &ArchDag, root: NodeId, t: &[f64]) -> (f64, f64) {
    let (order, _) = subtree_order(dag, root);
    let mut scratch = EvalScratch::default();
    scratch.prepare(dag, 0);
    eval_subgraph_with(dag, root, &order, t, &mut scratch)
}

fn eval_subgraph_with(
    dag: &ArchDag,
    root: NodeId,
    order: &[NodeId],
    t: &[f64],
    scratch: &mut EvalScratch,
) -> (f64, f64) {
    let k = &mut scratch.k;
    let theta = &mut scratch.theta;
    let mut input_pos = 0usize;
    for &id in order {
        let node = &dag.nodes()[id];
        match node.kind {
            NodeKind::Input => {
                k[id] = t[input_pos];
                theta[id] = 0.0;
                input_pos += 1;
            }
            _ => {
                let children = dag.children(id);
                let inv = 1.0 / children.len() as f64;
                let mut mean_k = 0.0;
                let mut mean_kt = 0.0;
                for &c in children {
                    mean_k += k[c];
                    mean_kt += k[c] + theta[c];
                }
                mean_k *= inv;
                mean_kt *= inv;
                let (kv, dv) = node.activation.value_and_deriv(mean_k);
                k[id] = kv;
                theta[id] = dv * mean_kt;
            }
        }
    }
    (k[root], theta[root])
}

/// GAP-symmetrized NNGP kernel: mean of the penultimate kernel over all
/// `w x w` pairs of window positions. `t_pairs[u][v]` holds the correlation
/// vector between position `u` of the first point and position `v` of the
/// second, over the `k^L` patches of one position.
pub fn nngp_gap_eval(dag: &ArchDag, t_pairs: &[Vec<Vec<f64>>]) -> Result<f64, KernelError> {
    gap_eval(dag, t_pairs).map(|(k, _)| k)
}

/// GAP-symmetrized NTK: mean of `K_pen + Theta_pen` over all position pairs.
pub fn ntk_gap_eval(dag: &ArchDag, t_pairs: &[Vec<Vec<f64>>]) -> Result<f64, KernelError> {
    gap_eval(dag, t_pairs).map(|(_, th)| th)
}

fn gap_eval(dag: &ArchDag, t_pairs: &[Vec<Vec<f64>>]) -> Result<(f64, f64), KernelError> {
    if dag.readout() != Readout::Gap {
        return Err(KernelError::WrongReadout {
            expected: Readout::Gap,
        });
    }
    let w = dag.pool_window();
    if t_pairs.len() != w || t_pairs.iter().any(|row| row.len() != w) {
        return Err(KernelError::MissingCorrelation {
            got: t_pairs.len(),
            expected: w,
        });
    }
    let pen = dag.penultimate_nodes()[0];
    let mut k_sum = 0.0;
    let mut kt_sum = 0.0;
    for row in t_pairs {
        for t in row {
            let (k, th) = eval_subgraph(dag, pen, t);
            k_sum += k;
            kt_sum += k + th;
        }
    }
    let scale = 1.0 / (w * w) as f64;
    Ok((k_sum * scale, kt_sum * scale))
}

// ---------------------------------------------------------------------------
// Kernel matrices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelMeta {
    pub dag_label: String,
    pub dual_spec: String,
    pub kind: KernelKind,
    pub readout: Readout,
}

/// Dense kernel matrix with provenance metadata.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub meta: KernelMeta,
}

impl KernelMatrix {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Persist as the documented binary format: magic `NKRM`, version `u32`
    /// little endian, rows `u64` little endian, then row-major `f64` little
    /// endian. Columns are implied by the payload length.
    pub fn write_to(&self, mut w: impl Write) -> Result<(), KernelError> {
        w.write_all(b"NKRM")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read, meta: KernelMeta) -> Result<KernelMatrix, KernelError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"NKRM" {
            return Err(KernelError::BadFile("bad magic".into()));
        }
        let mut v4 = [0u8; 4];
        r.read_exact(&mut v4)?;
        let version = u32::from_le_bytes(v4);
        if version != 1 {
            return Err(KernelError::BadFile(format!("unknown version {version}")));
        }
        let mut v8 = [0u8; 8];
        r.read_exact(&mut v8)?;
        let rows = u64::from_le_bytes(v8) as usize;
        let mut payload = Vec::new();
        r.read_to_end(&mut payload)?;
        if payload.len() % 8 != 0 {
            return Err(KernelError::BadFile("truncated payload".into()));
        }
        let total = payload.len() / 8;
        if rows == 0 || total % rows != 0 {
            return Err(KernelError::BadFile("payload not divisible by rows".into()));
        }
        let cols = total / rows;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(KernelMatrix {
            rows,
            cols,
            data,
            meta,
        })
    }
}

fn dataset_matches(dag: &ArchDag, x: &SphereDataset) -> Result<(), KernelError> {
    let inputs = dag.input_nodes();
    let dims_ok = inputs.len() == x.patches
        && inputs
            .iter()
            .all(|&v| dag.nodes()[v].concrete_dim == x.patch_dim);
    if !dims_ok {
        return Err(KernelError::ShapeMismatch {
            patches: x.patches,
            dim: x.patch_dim,
        });
    }
    let dev = x.max_norm_deviation();
    if dev > 1e-6 * (x.patch_dim as f64).sqrt() {
        return Err(KernelError::OffSphere(dev));
    }
    Ok(())
}

/// Precomputed evaluation plan for batched kernel entries.
pub struct KernelEvaluator<'a> {
    dag: &'a ArchDag,
    kind: KernelKind,
    patches: usize,
    patch_dim: usize,
    /// For GAP dags: penultimate root and its subtree order.
    gap_plan: Option<(NodeId, Vec<NodeId>)>,
}

impl<'a> KernelEvaluator<'a> {
    pub fn new(dag: &'a ArchDag, kind: KernelKind) -> KernelEvaluator<'a> {
        let inputs = dag.input_nodes();
        let gap_plan = match dag.readout() {
            Readout::Flatten => None,
            Readout::Gap => {
                let pen = dag.penultimate_nodes()[0];
                let (order, _) = subtree_order(dag, pen);
                Some((pen, order))
            }
        };
        KernelEvaluator {
            dag,
            kind,
            patches: inputs.len(),
            patch_dim: dag.nodes()[inputs[0]].concrete_dim,
            gap_plan,
        }
    }

    pub fn scratch(&self) -> EvalScratch {
        let mut s = EvalScratch::default();
        s.prepare(self.dag, self.patches);
        s
    }

    /// Kernel value between two raw points (`patches * patch_dim`
    /// coordinates each).
    pub fn entry(&self, a: &[f64], b: &[f64], scratch: &mut EvalScratch) -> f64 {
        let p = self.patch_dim;
        let inv = 1.0 / p as f64;
        match &self.gap_plan {
            None => {
                for v in 0..self.patches {
                    let off = v * p;
                    let mut dot = 0.0;
                    for i in 0..p {
                        dot += a[off + i] * b[off + i];
                    }
                    scratch.t[v] = (dot * inv).clamp(-1.0, 1.0);
                }
                let t = std::mem::take(&mut scratch.t);
                let (k, th) = eval_values_with(self.dag, &t, scratch);
                scratch.t = t;
                match self.kind {
                    KernelKind::Nngp => k,
                    KernelKind::Ntk => th,
                }
            }
            Some((pen, order)) => {
                let w = self.dag.pool_window();
                let per_group = self.patches / w;
                let mut acc = 0.0;
                for u in 0..w {
                    for v in 0..w {
                        for i in 0..per_group {
                            let ai = (u * per_group + i) * p;
                            let bi = (v * per_group + i) * p;
                            let mut dot = 0.0;
                            for q in 0..p {
                                dot += a[ai + q] * b[bi + q];
                            }
                            scratch.t[i] = (dot * inv).clamp(-1.0, 1.0);
                        }
                        let t = std::mem::take(&mut scratch.t);
                        let (k, th) =
                            eval_subgraph_with(self.dag, *pen, order, &t[..per_group], scratch);
                        scratch.t = t;
                        acc += match self.kind {
                            KernelKind::Nngp => k,
                            KernelKind::Ntk => k + th,
                        };
                    }
                }
                acc / (w * w) as f64
            }
        }
    }
}

/// One-off kernel value between two raw points.
pub fn kernel_entry(
    dag: &ArchDag,
    kind: KernelKind,
    a: &[f64],
    b: &[f64],
    patches: usize,
    p: usize,
) -> f64 {
    debug_assert_eq!(patches * p, a.len());
    let ev = KernelEvaluator::new(dag, kind);
    let mut scratch = ev.scratch();
    ev.entry(a, b, &mut scratch)
}

/// Dense kernel matrix between two datasets (or one, for the symmetric
/// case). Rows are parallelized; every entry is an independent pure
/// computation, so the result is identical for any thread count.
pub fn kernel_matrix(
    dag: &ArchDag,
    kind: KernelKind,
    x: &SphereDataset,
    y: Option<&SphereDataset>,
) -> Result<KernelMatrix, KernelError> {
    dataset_matches(dag, x)?;
    if let Some(y) = y {
        dataset_matches(dag, y)?;
    }
    let symmetric = y.is_none();
    let y = y.unwrap_or(x);
    let rows = x.len();
    let cols = y.len();
    let ev = KernelEvaluator::new(dag, kind);
    let mut data = vec![0.0f64; rows * cols];
    data.par_chunks_mut(cols)
        .enumerate()
        .map_init(
            || ev.scratch(),
            |scratch, (i, row)| {
                let a = x.point(i);
                let start = if symmetric { i } else { 0 };
                for (j, slot) in row.iter_mut().enumerate().skip(start) {
                    *slot = ev.entry(a, y.point(j), scratch);
                }
            },
        )
        .collect::<Vec<()>>();
    if symmetric {
        for i in 0..rows {
            for j in 0..i {
                data[i * cols + j] = data[j * cols + i];
            }
        }
    }
    Ok(KernelMatrix {
        rows,
        cols,
        data,
        meta: KernelMeta {
            dag_label: dag.label().to_string(),
            dual_spec: hidden_dual_spec(dag),
            kind,
            readout: dag.readout(),
        },
    })
}

fn hidden_dual_spec(dag: &ArchDag) -> String {
    dag.nodes()
        .iter()
        .find(|n| n.kind == NodeKind::Hidden)
        .map(|n| n.activation.spec_string())
        .unwrap_or_else(|| "identity".to_string())
}

// ---------------------------------------------------------------------------
// Jet derivatives and eigenvalue estimates
// ---------------------------------------------------------------------------

/// Truncated jets of the NNGP and NTK at the output node, with the listed
/// support inputs as variables (truncation orders per variable) and every
/// other correlation pinned to zero. Each node's dual composes by its
/// Taylor series at the jet's constant term.
fn propagate_jets(
    dag: &ArchDag,
    support: &[NodeId],
    orders: &[u32],
) -> Result<(Jet, Jet), KernelError> {
    let shape = JetShape::new(orders)?;
    let total: u32 = orders.iter().sum();
    let nodes = dag.nodes();
    let mut k_jets: Vec<Option<Jet>> = vec![None; nodes.len()];
    let mut th_jets: Vec<Option<Jet>> = vec![None; nodes.len()];
    for node in nodes {
        match node.kind {
            NodeKind::Input => {
                let jet = match support.iter().position(|&v| v == node.id) {
                    Some(var) => Jet::variable(&shape, var),
                    None => Jet::zero(&shape),
                };
                th_jets[node.id] = Some(Jet::zero(&shape));
                k_jets[node.id] = Some(jet);
            }
            _ => {
                let children = dag.children(node.id);
                let inv = 1.0 / children.len() as f64;
                let mut mean_k = Jet::zero(&shape);
                let mut mean_kt = Jet::zero(&shape);
                for &c in children {
                    mean_k.add_assign(k_jets[c].as_ref().unwrap());
                    mean_kt.add_assign(k_jets[c].as_ref().unwrap());
                    mean_kt.add_assign(th_jets[c].as_ref().unwrap());
                }
                mean_k = mean_k.scale(inv);
                mean_kt = mean_kt.scale(inv);
                let a0 = mean_k.constant_term();
                let series = node.activation.taylor_series_at(a0, total as usize + 1);
                let k_jet = mean_k.compose_series(&series[..=total as usize]);
                // derivative series from the value series
                let dseries: Vec<f64> = (0..=total as usize)
                    .map(|j| series[j + 1] * (j + 1) as f64)
                    .collect();
                let th_jet = mean_k.compose_series(&dseries).mul(&mean_kt);
                k_jets[node.id] = Some(k_jet);
                th_jets[node.id] = Some(th_jet);
            }
        }
    }
    let out = dag.output_node();
    Ok((
        k_jets[out].take().unwrap(),
        th_jets[out].take().unwrap(),
    ))
}

fn check_support(dag: &ArchDag, r: &MultiIndex) -> Result<(), KernelError> {
    if r.is_zero() {
        return Err(KernelError::ZeroMultiIndex);
    }
    let inputs = dag.input_nodes();
    let input_set: std::collections::BTreeSet<NodeId> = inputs.iter().copied().collect();
    for v in r.support() {
        if !input_set.contains(&v) {
            return Err(KernelError::BadSupport(v));
        }
    }
    Ok(())
}

/// Exact mixed derivative `K^(r)(0)` (or `Theta^(r)(0)`) with all
/// non-support correlations pinned to zero. Supports are limited to 6
/// variables of total order 8.
pub fn derivative_at_zero(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
) -> Result<f64, KernelError> {
    check_support(dag, r)?;
    let support = r.support();
    let orders: Vec<u32> = r.entries().map(|(_, deg)| deg).collect();
    let total: u32 = orders.iter().sum();
    if support.len() > 6 || total > 8 {
        return Err(KernelError::Jet(JetError::OrderTooHigh {
            max: 8,
            got: total as usize,
        }));
    }
    let (k_jet, th_jet) = propagate_jets(dag, &support, &orders)?;
    Ok(match kind {
        KernelKind::Nngp => k_jet.derivative_at_zero(),
        KernelKind::Ntk => th_jet.derivative_at_zero(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EigenvalueMethod {
    /// Leading-order formula `K^(r)(0) / (r! N(d, r))`: the clean asymptotic
    /// scaling with constants that cancel across a dimension sweep.
    Jet,
    /// Jet polynomial projected exactly onto the Gegenbauer component with
    /// non-support correlations marginalized over tree subtrees: near-exact
    /// at small patch dimensions, deterministic.
    JetMarginalized,
    /// Unbiased pair estimator with zonal harmonics; reports its standard
    /// error.
    MonteCarlo,
}

#[derive(Debug, Clone, Copy)]
pub struct EigenvalueEstimate {
    pub value: f64,
    /// Standard error for the Monte-Carlo method, 0 for the jet method.
    pub std_error: f64,
}

/// Eigenvalue of the normalized product-harmonic class `r`.
///
/// Jet method: the kernel's truncated Taylor polynomial in the support
/// correlations (others pinned to zero) is projected exactly onto the
/// product Gegenbauer component, which refines the leading-order formula
/// `K^(r)(0) / (r! N(d, r))` by the within-support higher-order terms that
/// matter at small patch dimensions. Monte-Carlo method: unbiased pair
/// estimator `E[K(xi, eta) Y(xi) Y(eta)]` with zonal harmonics on the
/// support patches. For GAP dags the jet route goes through the penultimate
/// subgraph (divided by the window), and the Monte-Carlo route uses
/// symmetrized zonal products.
pub fn eigenvalue_estimate(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
    method: EigenvalueMethod,
    samples: usize,
    seed: u64,
) -> Result<EigenvalueEstimate, KernelError> {
    if r.is_zero() {
        return Err(KernelError::ZeroMultiIndex);
    }
    match method {
        EigenvalueMethod::Jet | EigenvalueMethod::JetMarginalized => {
            let marginalize = method == EigenvalueMethod::JetMarginalized;
            let value = match dag.readout() {
                Readout::Flatten => jet_eigenvalue_full(dag, kind, r, marginalize)?,
                Readout::Gap => jet_eigenvalue_gap(dag, kind, r, marginalize)?,
            };
            Ok(EigenvalueEstimate {
                value,
                std_error: 0.0,
            })
        }
        EigenvalueMethod::MonteCarlo => mc_eigenvalue(dag, kind, r, samples, seed),
    }
}

/// Extra per-variable truncation orders kept beyond the target degree; the
/// even higher-order terms carry the small-dimension corrections.
const JET_EXTRA_ORDER: u32 = 4;

/// Per-variable moment table `M[a] = E[t^a P_r(t)]` under the normalized
/// Gegenbauer weight for the patch dimension, so that projecting a
/// polynomial against the tables gives its eigenvalue contribution.
fn moment_table(d_v: usize, r_v: usize, max_order: usize) -> Vec<f64> {
    let n_quad = max_order / 2 + r_v + 4;
    let (nodes, weights) = crate::harmonics::gauss_gegenbauer(d_v, n_quad.max(8));
    let mu0: f64 = weights.iter().sum();
    (0..=max_order)
        .map(|a| {
            nodes
                .iter()
                .zip(&weights)
                .map(|(&t, &w)| w * t.powi(a as i32) * gegenbauer_eval(d_v, r_v, t))
                .sum::<f64>()
                / mu0
        })
        .collect()
}

/// Weighted atom of the joint distribution of a subtree's NNGP value and
/// NNGP + NTK sum under random non-support inputs.
#[derive(Debug, Clone, Copy)]
struct Atom {
    w: f64,
    k: f64,
    kt: f64,
}

const ATOM_BUDGET: usize = 96;
const INPUT_ATOMS: usize = 48;

/// Collapse to the atom budget: sort by value, fill equal-weight bins, and
/// replace each bin by its centroid (preserves first moments per bin).
fn requantize(mut atoms: Vec<Atom>) -> Vec<Atom> {
    if atoms.len() <= ATOM_BUDGET {
        return atoms;
    }
    atoms.sort_by(|a, b| a.k.total_cmp(&b.k).then(a.kt.total_cmp(&b.kt)));
    let total: f64 = atoms.iter().map(|a| a.w).sum();
    let target = total / ATOM_BUDGET as f64;
    let mut out = Vec::with_capacity(ATOM_BUDGET);
    let (mut w, mut k, mut kt) = (0.0, 0.0, 0.0);
    for a in atoms {
        w += a.w;
        k += a.w * a.k;
        kt += a.w * a.kt;
        if w >= target && out.len() + 1 < ATOM_BUDGET {
            out.push(Atom { w, k: k / w, kt: kt / w });
            w = 0.0;
            k = 0.0;
            kt = 0.0;
        }
    }
    if w > 0.0 {
        out.push(Atom { w, k: k / w, kt: kt / w });
    }
    out
}

/// Center a distribution and scale its deviations.
fn centered_scaled(atoms: &[Atom], scale: f64) -> Vec<Atom> {
    let (mut mk, mut mkt) = (0.0, 0.0);
    for a in atoms {
        mk += a.w * a.k;
        mkt += a.w * a.kt;
    }
    atoms
        .iter()
        .map(|a| Atom {
            w: a.w,
            k: (a.k - mk) * scale,
            kt: (a.kt - mkt) * scale,
        })
        .collect()
}

/// Distribution of the sum over independent child subtrees.
fn convolve_sum(children: &[Vec<Atom>]) -> Vec<Atom> {
    let mut acc = vec![Atom { w: 1.0, k: 0.0, kt: 0.0 }];
    for c in children {
        let mut next = Vec::with_capacity(acc.len() * c.len());
        for a in &acc {
            for b in c {
                next.push(Atom {
                    w: a.w * b.w,
                    k: a.k + b.k,
                    kt: a.kt + b.kt,
                });
            }
        }
        acc = requantize(next);
    }
    acc
}

/// Eigenvalue of the product-harmonic class via jets in the support
/// correlations, projected exactly onto the Gegenbauer component, with the
/// non-support correlations marginalized: on trees their subtree values are
/// independent, so their joint effect propagates as a discrete distribution
/// of (K, K + Theta) atoms that shifts each dual's expansion point. On
/// non-tree dags the subtree values are dependent and the non-support
/// correlations are pinned to zero (leading order) instead.
fn jet_lambda_on(
    dag: &ArchDag,
    kind: KernelKind,
    support: &[NodeId],
    degrees: &[u32],
    dims: &[usize],
    add_nngp: bool,
    marginalize: bool,
) -> Result<f64, KernelError> {
    let orders: Vec<u32> = degrees.iter().map(|&d| d + JET_EXTRA_ORDER).collect();
    let shape = JetShape::new(&orders)?;
    let total: u32 = orders.iter().sum();
    // Subtree values are only independent on trees; elsewhere pin to zero.
    let marginalize = marginalize && dag.is_tree();

    let nodes = dag.nodes();
    // Which nodes have support inputs below them (inclusive).
    let mut carries = vec![false; nodes.len()];
    for &v in support {
        carries[v] = true;
    }
    for node in nodes {
        if node.kind != NodeKind::Input {
            carries[node.id] = dag.children(node.id).iter().any(|&c| carries[c]);
        }
    }

    // Leaf and support-leaf counts per subtree.
    let mut leaf_counts = vec![0usize; nodes.len()];
    let mut support_counts = vec![0usize; nodes.len()];
    for node in nodes {
        match node.kind {
            NodeKind::Input => {
                leaf_counts[node.id] = 1;
                support_counts[node.id] = usize::from(support.contains(&node.id));
            }
            _ => {
                for &c in dag.children(node.id) {
                    leaf_counts[node.id] += leaf_counts[c];
                    support_counts[node.id] += support_counts[c];
                }
            }
        }
    }

    let mut k_jets: Vec<Option<Jet>> = vec![None; nodes.len()];
    let mut th_jets: Vec<Option<Jet>> = vec![None; nodes.len()];
    let mut dists: Vec<Option<Vec<Atom>>> = vec![None; nodes.len()];
    let zero_atom = vec![Atom { w: 1.0, k: 0.0, kt: 0.0 }];

    for node in nodes {
        if carries[node.id] {
            match node.kind {
                NodeKind::Input => {
                    let var = support.iter().position(|&v| v == node.id).unwrap();
                    k_jets[node.id] = Some(Jet::variable(&shape, var));
                    th_jets[node.id] = Some(Jet::zero(&shape));
                }
                _ => {
                    let children = dag.children(node.id);
                    let inv = 1.0 / children.len() as f64;
                    let mut k_base = Jet::zero(&shape);
                    let mut kt_base = Jet::zero(&shape);
                    let mut non_support: Vec<Vec<Atom>> = Vec::new();
                    let sibling_template = children
                        .iter()
                        .find(|&&c| !carries[c])
                        .and_then(|&c| dists[c].clone());
                    for &c in children {
                        if carries[c] {
                            k_base.add_assign(k_jets[c].as_ref().unwrap());
                            kt_base.add_assign(k_jets[c].as_ref().unwrap());
                            kt_base.add_assign(th_jets[c].as_ref().unwrap());
                            // The support child's value fluctuates around its
                            // conditional-mean jet through its own non-support
                            // leaves; approximate that fluctuation by its
                            // sibling's centered distribution, scaled by the
                            // non-support share of the subtree's leaves.
                            if marginalize {
                                if let Some(template) = &sibling_template {
                                    let leaves = leaf_counts[c] as f64;
                                    let sup = support_counts[c] as f64;
                                    if leaves > sup {
                                        let scale = ((leaves - sup) / leaves).sqrt();
                                        non_support.push(centered_scaled(template, scale));
                                    }
                                }
                            }
                        } else {
                            non_support.push(dists[c].clone().unwrap_or_else(|| zero_atom.clone()));
                        }
                    }
                    let atoms = convolve_sum(&non_support);
                    let k_arg = k_base.scale(inv);
                    let kt_part = kt_base.scale(inv);
                    let c0 = k_arg.constant_term();
                    let mut k_out = Jet::zero(&shape);
                    let mut th_out = Jet::zero(&shape);
                    for a in &atoms {
                        let a0 = c0 + a.k * inv;
                        let series = node.activation.taylor_series_at(a0, total as usize + 1);
                        k_out.add_assign(
                            &k_arg.compose_series(&series[..=total as usize]).scale(a.w),
                        );
                        let dseries: Vec<f64> = (0..=total as usize)
                            .map(|j| series[j + 1] * (j + 1) as f64)
                            .collect();
                        let mut kt_full = kt_part.clone();
                        kt_full.add_assign(&Jet::constant(&shape, a.kt * inv));
                        th_out.add_assign(&k_arg.compose_series(&dseries).mul(&kt_full).scale(a.w));
                    }
                    k_jets[node.id] = Some(k_out);
                    th_jets[node.id] = Some(th_out);
                }
            }
        } else {
            // Fully non-support subtree: propagate its value distribution.
            let atoms = if !marginalize {
                zero_atom.clone()
            } else {
                match node.kind {
                    NodeKind::Input => {
                        let d_v = node.concrete_dim;
                        let (nodes_q, weights_q) =
                            crate::harmonics::gauss_gegenbauer(d_v, INPUT_ATOMS);
                        let mu0: f64 = weights_q.iter().sum();
                        nodes_q
                            .iter()
                            .zip(&weights_q)
                            .map(|(&t, &w)| Atom { w: w / mu0, k: t, kt: t })
                            .collect()
                    }
                    _ => {
                        let children = dag.children(node.id);
                        let inv = 1.0 / children.len() as f64;
                        let child_dists: Vec<Vec<Atom>> = children
                            .iter()
                            .map(|&c| dists[c].clone().unwrap_or_else(|| zero_atom.clone()))
                            .collect();
                        convolve_sum(&child_dists)
                            .into_iter()
                            .map(|a| {
                                let kbar = a.k * inv;
                                let ktbar = a.kt * inv;
                                let (kv, dv) = node.activation.value_and_deriv(kbar);
                                Atom {
                                    w: a.w,
                                    k: kv,
                                    kt: kv + dv * ktbar,
                                }
                            })
                            .collect()
                    }
                }
            };
            dists[node.id] = Some(atoms);
        }
    }

    let out = dag.output_node();
    let k_jet = k_jets[out].take().unwrap();
    let th_jet = th_jets[out].take().unwrap();
    let tables: Vec<Vec<f64>> = degrees
        .iter()
        .zip(dims)
        .zip(&orders)
        .map(|((&deg, &d_v), &o)| moment_table(d_v, deg as usize, o as usize))
        .collect();
    let value = match kind {
        KernelKind::Nngp => k_jet.project(&tables),
        KernelKind::Ntk => {
            th_jet.project(&tables) + if add_nngp { k_jet.project(&tables) } else { 0.0 }
        }
    };
    Ok(value)
}

/// Leading-order eigenvalue `K^(r)(0) / (r! N(d, r))`.
fn leading_order_lambda(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
    add_nngp: bool,
) -> Result<f64, KernelError> {
    let deriv = derivative_at_zero(dag, kind, r)?
        + if add_nngp {
            derivative_at_zero(dag, KernelKind::Nngp, r)?
        } else {
            0.0
        };
    let mut denom = 1.0;
    for (v, deg) in r.entries() {
        let d_v = dag.nodes()[v].concrete_dim;
        let mut fact = 1.0;
        for k in 2..=deg {
            fact *= k as f64;
        }
        denom *= fact * harmonic_count(d_v, deg as usize);
    }
    Ok(deriv / denom)
}

fn jet_eigenvalue_full(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
    marginalize: bool,
) -> Result<f64, KernelError> {
    check_support(dag, r)?;
    if !marginalize {
        return leading_order_lambda(dag, kind, r, false);
    }
    let support = r.support();
    let degrees: Vec<u32> = r.entries().map(|(_, deg)| deg).collect();
    let dims: Vec<usize> = support
        .iter()
        .map(|&v| dag.nodes()[v].concrete_dim)
        .collect();
    jet_lambda_on(dag, kind, &support, &degrees, &dims, false, true)
}

/// GAP route: the symmetric eigenvalue equals the penultimate-subgraph
/// eigenvalue divided by the window size.
fn jet_eigenvalue_gap(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
    marginalize: bool,
) -> Result<f64, KernelError> {
    let w = dag.pool_window();
    let inputs = dag.input_nodes();
    let per_group = inputs.len() / w;
    let pos: HashMap<NodeId, usize> = inputs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    // All support nodes must share one pooling group.
    let mut group = None;
    for v in r.support() {
        let g = pos[&v] / per_group;
        if *group.get_or_insert(g) != g {
            return Err(KernelError::CrossGroupGap);
        }
    }
    let group = group.unwrap();
    // Remap r onto the canonical (group 0) subgraph inputs.
    let remapped = MultiIndex::from_pairs(
        &r.entries()
            .map(|(v, deg)| (inputs[pos[&v] - group * per_group], deg))
            .collect::<Vec<_>>(),
    );
    let sub = subgraph_as_dag(dag, dag.penultimate_nodes()[0]);
    // Subgraph inputs are the group-0 inputs in order; translate ids.
    let sub_inputs = sub.input_nodes();
    let sub_r = MultiIndex::from_pairs(
        &remapped
            .entries()
            .map(|(v, deg)| (sub_inputs[pos[&v]], deg))
            .collect::<Vec<_>>(),
    );
    // Theta_GAP averages K_pen + Theta_pen over the window pairs.
    let add_nngp = kind == KernelKind::Ntk;
    let lambda_pen = if marginalize {
        let support = sub_r.support();
        let degrees: Vec<u32> = sub_r.entries().map(|(_, deg)| deg).collect();
        let dims: Vec<usize> = support
            .iter()
            .map(|&v| sub.nodes()[v].concrete_dim)
            .collect();
        jet_lambda_on(&sub, kind, &support, &degrees, &dims, add_nngp, true)?
    } else {
        leading_order_lambda(&sub, kind, &sub_r, add_nngp)?
    };
    Ok(lambda_pen / w as f64)
}

/// Copy the subtree rooted at `root` into a standalone dag whose output node
/// is `root` (keeping its activation).
pub fn subgraph_as_dag(dag: &ArchDag, root: NodeId) -> ArchDag {
    let mut ids = Vec::new();
    let mut stack = vec![root];
    let mut seen = std::collections::BTreeSet::new();
    while let Some(id) = stack.pop() {
        if seen.insert(id) {
            ids.push(id);
            stack.extend_from_slice(dag.children(id));
        }
    }
    ids.sort_unstable();
    let remap: HashMap<NodeId, NodeId> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let mut b = crate::arch::DagBuilder::new(format!("{}::sub{}", dag.label(), root));
    for &id in &ids {
        let n = &dag.nodes()[id];
        let children: Vec<NodeId> = dag.children(id).iter().map(|c| remap[c]).collect();
        if n.kind == NodeKind::Input {
            b.input(n.layer_index, n.concrete_dim, n.alpha);
        } else if id == root {
            b.output(n.layer_index, n.alpha, n.activation.clone(), children);
        } else {
            b.hidden(n.layer_index, n.alpha, n.activation.clone(), children);
        }
    }
    b.build().expect("subgraph of a valid dag is valid")
}

fn mc_eigenvalue(
    dag: &ArchDag,
    kind: KernelKind,
    r: &MultiIndex,
    samples: usize,
    seed: u64,
) -> Result<EigenvalueEstimate, KernelError> {
    if samples < 2 {
        return Err(KernelError::BadFile("need at least 2 MC samples".into()));
    }
    let inputs = dag.input_nodes();
    let pos: HashMap<NodeId, usize> = inputs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let patches = inputs.len();
    let p = dag.nodes()[inputs[0]].concrete_dim;
    let support: Vec<(usize, u32, usize)> = r
        .entries()
        .map(|(v, deg)| (pos[&v], deg, dag.nodes()[v].concrete_dim))
        .collect();
    let w = dag.pool_window();
    let per_group = patches / w;
    let gap = dag.readout() == Readout::Gap;

    // Zonal product harmonic on the support patches; for GAP the symmetric
    // version averages the window shifts with a sqrt(w) normalizer.
    let zonal_at = |point: &[f64], shift: usize| -> f64 {
        let mut acc = 1.0;
        for &(patch, deg, d_v) in &support {
            let shifted = if gap {
                let g = patch / per_group;
                ((g + shift) % w) * per_group + patch % per_group
            } else {
                patch
            };
            let coords = &point[shifted * p..(shifted + 1) * p];
            // direction e1; normalized zonal
            let t = coords[0] / (d_v as f64).sqrt();
            acc *= harmonic_count(d_v, deg as usize).sqrt() * gegenbauer_eval(d_v, deg as usize, t);
        }
        acc
    };
    let eigen_value = |point: &[f64]| -> f64 {
        if gap {
            let mut acc = 0.0;
            for shift in 0..w {
                acc += zonal_at(point, shift);
            }
            acc / (w as f64).sqrt()
        } else {
            zonal_at(point, 0)
        }
    };

    let mut rng = derive_stream(seed, 0xe16e);
    let mut xi = vec![0.0; patches * p];
    let mut eta = vec![0.0; patches * p];
    let mut sum = 0.0;
    let mut sumsq = 0.0;
    let ev = KernelEvaluator::new(dag, kind);
    let mut scratch = ev.scratch();
    for _ in 0..samples {
        crate::data::fill_product_sphere(&mut rng, patches, p, &mut xi);
        crate::data::fill_product_sphere(&mut rng, patches, p, &mut eta);
        let kval = ev.entry(&xi, &eta, &mut scratch);
        let v = kval * eigen_value(&xi) * eigen_value(&eta);
        sum += v;
        sumsq += v * v;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sumsq / n - mean * mean).max(0.0) / (n - 1.0);
    Ok(EigenvalueEstimate {
        value: mean,
        std_error: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_dcnn, build_mlp, DcnnShape};
    use crate::data::SphereDataset;
    use crate::dual::{centered_exp_dual, gaussian_dual, Dual};
    use crate::frac::Frac;
    use approx::assert_relative_eq;

    fn dcnn(p: usize, readout: Readout, act: bool, dual: Dual) -> ArchDag {
        build_dcnn(&DcnnShape::quarter_exponents(p), p * p * p * p, readout, act, dual).unwrap()
    }

    #[test]
    fn mlp_recursion_unrolls() {
        let dual = gaussian_dual(1.0).unwrap();
        let dag = build_mlp(2, 16, dual.clone()).unwrap();
        for t in [-0.8, -0.1, 0.0, 0.3, 0.9] {
            let expected = dual.eval(dual.eval(t));
            assert_relative_eq!(nngp_eval(&dag, &[t]).unwrap(), expected, epsilon = 1e-14);
        }
        // all-ones correlation gives 1 on any dag
        let dag = dcnn(3, Readout::Flatten, true, dual.clone());
        let ones = vec![1.0; dag.input_nodes().len()];
        assert_relative_eq!(nngp_eval(&dag, &ones).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn one_hidden_layer_ntk_formula() {
        let dual = centered_exp_dual(1.3).unwrap();
        let dag = build_mlp(1, 16, dual.clone()).unwrap();
        for t in [-0.7, 0.0, 0.2, 0.8] {
            let expected = dual.eval(t) + t * dual.deriv(t);
            assert_relative_eq!(ntk_eval(&dag, &[t]).unwrap(), expected, epsilon = 1e-13);
        }
        // input node alone has theta = 0: depth-0 edge case is covered by
        // the recursion returning phi composition only at hidden nodes.
    }

    #[test]
    fn scnn_kernels_are_patch_averages() {
        let dual = centered_exp_dual(1.0).unwrap();
        let shape = DcnnShape {
            patch_size: 4,
            filter_size: 1,
            hidden_layers: 0,
            width: 4,
            alpha_p: Frac::new(1, 2),
            alpha_k: Frac::new(0, 1),
            alpha_w: Frac::new(1, 2),
        };
        let dag = build_dcnn(&shape, 16, Readout::Flatten, false, dual.clone()).unwrap();
        let t = [0.3, -0.5, 0.9, 0.0];
        let expected_k: f64 = t.iter().map(|&tv| dual.eval(tv)).sum::<f64>() / 4.0;
        assert_relative_eq!(nngp_eval(&dag, &t).unwrap(), expected_k, epsilon = 1e-14);
        let expected_th: f64 = t
            .iter()
            .map(|&tv| dual.eval(tv) + tv * dual.deriv(tv))
            .sum::<f64>()
            / 4.0;
        assert_relative_eq!(ntk_eval(&dag, &t).unwrap(), expected_th, epsilon = 1e-14);
    }

    #[test]
    fn missing_correlations_error() {
        let dag = build_mlp(1, 8, Dual::Identity).unwrap();
        assert!(matches!(
            nngp_eval(&dag, &[]),
            Err(KernelError::MissingCorrelation { .. })
        ));
        assert!(matches!(
            nngp_eval(&dag, &[1.5]),
            Err(KernelError::CorrelationRange(_))
        ));
    }

    #[test]
    fn gap_equals_flatten_at_window_one() {
        let dual = gaussian_dual(1.0).unwrap();
        let shape = DcnnShape {
            patch_size: 2,
            filter_size: 2,
            hidden_layers: 2,
            width: 1,
            alpha_p: Frac::new(1, 4),
            alpha_k: Frac::new(1, 4),
            alpha_w: Frac::new(0, 1),
        };
        let flat = build_dcnn(&shape, 8, Readout::Flatten, false, dual.clone()).unwrap();
        let gap = build_dcnn(&shape, 8, Readout::Gap, false, dual.clone()).unwrap();
        let t = vec![0.2, -0.3, 0.5, 0.7];
        let pairs = vec![vec![t.clone()]];
        assert_relative_eq!(
            nngp_gap_eval(&gap, &pairs).unwrap(),
            nngp_eval(&flat, &t).unwrap(),
            epsilon = 1e-14
        );
        assert_relative_eq!(
            ntk_gap_eval(&gap, &pairs).unwrap(),
            ntk_eval(&flat, &t).unwrap(),
            epsilon = 1e-14
        );
        // flatten dag passed to the gap evaluator errors
        assert!(matches!(
            nngp_gap_eval(&flat, &pairs),
            Err(KernelError::WrongReadout { .. })
        ));
    }

    #[test]
    fn gap_translation_invariance() {
        let dual = gaussian_dual(1.0).unwrap();
        let dag = dcnn(3, Readout::Gap, false, dual);
        let patches = dag.input_nodes().len();
        let p = 3;
        let mut rng = derive_stream(11, 5);
        let mut a = vec![0.0; patches * p];
        let mut b = vec![0.0; patches * p];
        crate::data::fill_product_sphere(&mut rng, patches, p, &mut a);
        crate::data::fill_product_sphere(&mut rng, patches, p, &mut b);
        let k0 = kernel_entry(&dag, KernelKind::Nngp, &a, &b, patches, p);
        // translate a by one window position
        let per_group = patches / dag.pool_window();
        let mut shifted = vec![0.0; patches * p];
        for g in 0..dag.pool_window() {
            let dst = (g + 1) % dag.pool_window();
            shifted[dst * per_group * p..(dst + 1) * per_group * p]
                .copy_from_slice(&a[g * per_group * p..(g + 1) * per_group * p]);
        }
        let k1 = kernel_entry(&dag, KernelKind::Nngp, &shifted, &b, patches, p);
        assert_relative_eq!(k0, k1, epsilon = 1e-12);
    }

    #[test]
    fn gap_bounded_by_flatten_diagonal() {
        let dual = gaussian_dual(1.0).unwrap();
        let gap = dcnn(2, Readout::Gap, false, dual.clone());
        let flat = dcnn(2, Readout::Flatten, false, dual);
        let patches = gap.input_nodes().len();
        let p = 2;
        let mut rng = derive_stream(12, 6);
        let mut a = vec![0.0; patches * p];
        for _ in 0..20 {
            crate::data::fill_product_sphere(&mut rng, patches, p, &mut a);
            let kg = kernel_entry(&gap, KernelKind::Nngp, &a, &a, patches, p);
            let kf = kernel_entry(&flat, KernelKind::Nngp, &a, &a, patches, p);
            assert!(kg <= kf + 1e-12, "{kg} vs {kf}");
        }
    }

    #[test]
    fn kernel_matrix_symmetric_and_psd() {
        let dual = gaussian_dual(1.0).unwrap();
        let dag = dcnn(2, Readout::Flatten, true, dual);
        let x = SphereDataset::sample(60, 8, 2, 42, "train");
        let k = kernel_matrix(&dag, KernelKind::Ntk, &x, None).unwrap();
        for i in 0..k.rows {
            for j in 0..k.cols {
                assert_eq!(k.at(i, j), k.at(j, i));
            }
        }
        // PSD within jitter: smallest eigenvalue bounded below.
        let eigs = crate::linalg::jacobi_eigenvalues(&k.data, k.rows);
        let trace: f64 = (0..k.rows).map(|i| k.at(i, i)).sum();
        let min = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-8 * trace, "min eig {min}, trace {trace}");
        // 1x1 matrix at identical points is the diagonal value
        let one = SphereDataset::sample(1, 8, 2, 1, "x");
        let k1 = kernel_matrix(&dag, KernelKind::Nngp, &one, None).unwrap();
        assert_relative_eq!(k1.at(0, 0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn matrix_round_trips_through_binary_format() {
        let dual = gaussian_dual(1.0).unwrap();
        let dag = dcnn(2, Readout::Flatten, true, dual);
        let x = SphereDataset::sample(5, 8, 2, 3, "train");
        let y = SphereDataset::sample(7, 8, 2, 4, "test");
        let k = kernel_matrix(&dag, KernelKind::Nngp, &x, Some(&y)).unwrap();
        let mut buf = Vec::new();
        k.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"NKRM");
        assert_eq!(buf.len(), 16 + 8 * k.rows * k.cols);
        let back = KernelMatrix::read_from(&buf[..], k.meta.clone()).unwrap();
        assert_eq!(back.rows, 5);
        assert_eq!(back.cols, 7);
        assert_eq!(back.data, k.data);
        let err = KernelMatrix::read_from(&buf[1..], k.meta.clone());
        assert!(err.is_err());
    }

    #[test]
    fn identity_dual_derivatives() {
        let dag = build_mlp(3, 16, Dual::Identity).unwrap();
        let v = dag.input_nodes()[0];
        let r1 = MultiIndex::from_pairs(&[(v, 1)]);
        assert_relative_eq!(
            derivative_at_zero(&dag, KernelKind::Nngp, &r1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let r2 = MultiIndex::from_pairs(&[(v, 2)]);
        assert_relative_eq!(
            derivative_at_zero(&dag, KernelKind::Nngp, &r2).unwrap(),
            0.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn depth_one_derivatives_are_series_coefficients() {
        // Depth-1 MLP with centered_exp(1): K = phi(t), so the order-r
        // derivative at 0 is r! * taylor(r) = 1/(e-1) for all r >= 1.
        let dual = centered_exp_dual(1.0).unwrap();
        let dag = build_mlp(1, 16, dual).unwrap();
        let v = dag.input_nodes()[0];
        let expected = 1.0 / (std::f64::consts::E - 1.0);
        for deg in 1..=5u32 {
            let r = MultiIndex::from_pairs(&[(v, deg)]);
            assert_relative_eq!(
                derivative_at_zero(&dag, KernelKind::Nngp, &r).unwrap(),
                expected,
                epsilon = 1e-10
            );
        }
    }

    fn finite_difference(dag: &ArchDag, kind: KernelKind, orders: &[(usize, u32)], h: f64) -> f64 {
        // central differences per variable, tensored
        let n_inputs = dag.input_nodes().len();
        let eval = |t: &[f64]| match kind {
            KernelKind::Nngp => nngp_eval(dag, t).unwrap(),
            KernelKind::Ntk => ntk_eval(dag, t).unwrap(),
        };
        // enumerate stencil offsets
        fn rec(
            eval: &dyn Fn(&[f64]) -> f64,
            base: &mut Vec<f64>,
            orders: &[(usize, u32)],
            idx: usize,
            h: f64,
            coeff: f64,
        ) -> f64 {
            if idx == orders.len() {
                return coeff * eval(base);
            }
            let (var, ord) = orders[idx];
            match ord {
                1 => {
                    base[var] = h;
                    let plus = rec(eval, base, orders, idx + 1, h, coeff / (2.0 * h));
                    base[var] = -h;
                    let minus = rec(eval, base, orders, idx + 1, h, coeff / (2.0 * h));
                    base[var] = 0.0;
                    plus - minus
                }
                2 => {
                    base[var] = h;
                    let plus = rec(eval, base, orders, idx + 1, h, coeff / (h * h));
                    base[var] = -h;
                    let minus = rec(eval, base, orders, idx + 1, h, coeff / (h * h));
                    base[var] = 0.0;
                    let center = rec(eval, base, orders, idx + 1, h, 2.0 * coeff / (h * h));
                    plus + minus - center
                }
                _ => panic!("finite differences implemented for orders 1 and 2"),
            }
        }
        let mut base = vec![0.0; n_inputs];
        rec(&eval, &mut base, orders, 0, h, 1.0)
    }

    #[test]
    fn jets_match_finite_differences() {
        let dual = centered_exp_dual(1.0).unwrap();
        // p=2, k=2, L=1, w=2 tree
        let shape = DcnnShape {
            patch_size: 2,
            filter_size: 2,
            hidden_layers: 1,
            width: 2,
            alpha_p: Frac::new(1, 3),
            alpha_k: Frac::new(1, 3),
            alpha_w: Frac::new(1, 3),
        };
        let dag = build_dcnn(&shape, 8, Readout::Flatten, true, dual).unwrap();
        let inputs = dag.input_nodes();
        for kind in [KernelKind::Nngp, KernelKind::Ntk] {
            for (pairs, h) in [
                (vec![(0usize, 2u32)], 1e-3),
                (vec![(0, 1), (1, 1)], 1e-3),
                (vec![(0, 1), (2, 1)], 1e-3),
            ] {
                let r = MultiIndex::from_pairs(
                    &pairs.iter().map(|&(i, d)| (inputs[i], d)).collect::<Vec<_>>(),
                );
                let jet = derivative_at_zero(&dag, kind, &r).unwrap();
                let orders: Vec<(usize, u32)> = pairs;
                let fd = finite_difference(&dag, kind, &orders, h);
                assert_relative_eq!(jet, fd, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn jet_and_mc_eigenvalues_agree() {
        let dual = centered_exp_dual(1.0).unwrap();
        let dag = dcnn(3, Readout::Flatten, true, dual);
        let inputs = dag.input_nodes();
        let r = MultiIndex::from_pairs(&[(inputs[0], 2)]);
        let jet = eigenvalue_estimate(
            &dag,
            KernelKind::Nngp,
            &r,
            EigenvalueMethod::JetMarginalized,
            0,
            0,
        )
        .unwrap();
        let mc = eigenvalue_estimate(
            &dag,
            KernelKind::Nngp,
            &r,
            EigenvalueMethod::MonteCarlo,
            200_000,
            1234,
        )
        .unwrap();
        assert!(
            (jet.value - mc.value).abs() <= 3.0 * mc.std_error,
            "jet {} mc {} +- {}",
            jet.value,
            mc.value,
            mc.std_error
        );
    }

    #[test]
    fn non_learnable_class_has_zero_eigenvalue() {
        // S-CNN with identity readout: cross-patch interactions vanish.
        let dual = centered_exp_dual(1.0).unwrap();
        let shape = DcnnShape {
            patch_size: 4,
            filter_size: 1,
            hidden_layers: 0,
            width: 4,
            alpha_p: Frac::new(1, 2),
            alpha_k: Frac::new(0, 1),
            alpha_w: Frac::new(1, 2),
        };
        let dag = build_dcnn(&shape, 16, Readout::Flatten, false, dual).unwrap();
        let inputs = dag.input_nodes();
        let r = MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[1], 1)]);
        let jet = eigenvalue_estimate(&dag, KernelKind::Nngp, &r, EigenvalueMethod::Jet, 0, 0)
            .unwrap();
        assert!(jet.value.abs() < 1e-12);
    }

    #[test]
    fn gap_and_flatten_jet_eigenvalues_match() {
        let dual = centered_exp_dual(1.0).unwrap();
        let flat = dcnn(3, Readout::Flatten, false, dual.clone());
        let gap = dcnn(3, Readout::Gap, false, dual);
        let inputs = flat.input_nodes();
        for (pairs, _) in [
            (vec![(0usize, 1u32)], ()),
            (vec![(0, 2)], ()),
            (vec![(0, 1), (1, 1)], ()),
        ] {
            let r_flat = MultiIndex::from_pairs(
                &pairs.iter().map(|&(i, d)| (inputs[i], d)).collect::<Vec<_>>(),
            );
            let gap_inputs = gap.input_nodes();
            let r_gap = MultiIndex::from_pairs(
                &pairs
                    .iter()
                    .map(|&(i, d)| (gap_inputs[i], d))
                    .collect::<Vec<_>>(),
            );
            for kind in [KernelKind::Nngp, KernelKind::Ntk] {
                for method in [EigenvalueMethod::Jet, EigenvalueMethod::JetMarginalized] {
                    let f = eigenvalue_estimate(&flat, kind, &r_flat, method, 0, 0).unwrap();
                    let g = eigenvalue_estimate(&gap, kind, &r_gap, method, 0, 0).unwrap();
                    assert_relative_eq!(f.value, g.value, max_relative = 1e-10);
                }
            }
        }
    }

    #[test]
    fn monotone_in_each_correlation_for_positive_duals() {
        let dual = centered_exp_dual(1.0).unwrap();
        let dag = dcnn(2, Readout::Flatten, true, dual);
        let n = dag.input_nodes().len();
        let mut t = vec![0.1; n];
        let base = nngp_eval(&dag, &t).unwrap();
        for v in 0..n {
            t[v] = 0.4;
            let up = nngp_eval(&dag, &t).unwrap();
            assert!(up >= base);
            t[v] = 0.1;
        }
    }
}
