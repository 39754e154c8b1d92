//! Architecture DAGs with shape exponents.
//!
//! A network architecture is a weighted DAG: input nodes carry patch
//! dimensions `d_v` and patch-dimension exponents `alpha_v`; every other node
//! carries a fan-in degree and a degree exponent `alpha_u`. Edges point child
//! to parent and the weight of an edge is the parent's exponent. The builders
//! cover every family used by the experiments: MLPs, shallow and deep
//! convolutional nets with flatten or global-average-pooling readouts.

use crate::dual::Dual;
use crate::frac::{format_frac, parse_frac, Frac};
use num::Zero;
use std::collections::BTreeSet;
use thiserror::Error;

pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum ArchError {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),
    #[error("dimension mismatch: p * k^L * w = {actual} but reference dim is {expected}")]
    DimensionMismatch { actual: usize, expected: usize },
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("global average pooling readout has no activation after it")]
    GapWithReadoutActivation,
    #[error("architecture description line {line}: {reason}")]
    Description { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Input,
    Hidden,
    Output,
}

#[derive(Debug, Clone)]
pub struct NodeRecord {
    pub id: NodeId,
    pub layer_index: usize,
    pub kind: NodeKind,
    /// Degree exponent for non-input nodes, patch-dimension exponent for
    /// input nodes. Exact; supplied by the builder caller.
    pub alpha: Frac,
    /// `d_v` for input nodes, fan-in (number of children) otherwise.
    pub concrete_dim: usize,
    pub activation: Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Readout {
    Flatten,
    Gap,
}

/// Immutable architecture DAG. Nodes are stored in topological order
/// (children before parents) with the output node last.
#[derive(Debug, Clone)]
pub struct ArchDag {
    nodes: Vec<NodeRecord>,
    children: Vec<Vec<NodeId>>,
    parents: Vec<Vec<NodeId>>,
    output: NodeId,
    reference_dim: usize,
    readout: Readout,
    /// Penultimate spatial positions (children of the readout collapse), in
    /// spatial order. Populated by the convolutional builders.
    penultimate: Vec<NodeId>,
    /// Human-readable architecture label.
    label: String,
}

impl ArchDag {
    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> Result<&NodeRecord, ArchError> {
        self.nodes.get(id).ok_or(ArchError::UnknownNode(id))
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.children[id]
    }

    pub fn parents(&self, id: NodeId) -> &[NodeId] {
        &self.parents[id]
    }

    pub fn output_node(&self) -> NodeId {
        self.output
    }

    pub fn reference_dim(&self) -> usize {
        self.reference_dim
    }

    pub fn readout(&self) -> Readout {
        self.readout
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Input node ids in spatial order.
    pub fn input_nodes(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Input)
            .map(|n| n.id)
            .collect()
    }

    pub fn penultimate_nodes(&self) -> &[NodeId] {
        &self.penultimate
    }

    /// Number of penultimate spatial positions (the pooling window `w`).
    pub fn pool_window(&self) -> usize {
        self.penultimate.len()
    }

    /// Transitive ancestor closure of a node set, including the set itself.
    pub fn ancestors(&self, set: &[NodeId]) -> Result<BTreeSet<NodeId>, ArchError> {
        let mut out = BTreeSet::new();
        let mut stack = Vec::new();
        for &id in set {
            if id >= self.nodes.len() {
                return Err(ArchError::UnknownNode(id));
            }
            stack.push(id);
        }
        while let Some(id) = stack.pop() {
            if out.insert(id) {
                stack.extend_from_slice(&self.parents[id]);
            }
        }
        Ok(out)
    }

    /// Intersection of per-node ancestor closures.
    pub fn common_ancestors(&self, set: &[NodeId]) -> Result<BTreeSet<NodeId>, ArchError> {
        let mut iter = set.iter();
        let first = match iter.next() {
            Some(&id) => self.ancestors(&[id])?,
            None => return Ok(BTreeSet::new()),
        };
        let mut acc = first;
        for &id in iter {
            let anc = self.ancestors(&[id])?;
            acc = acc.intersection(&anc).copied().collect();
        }
        Ok(acc)
    }

    /// Edge weight of `(child, parent)`: the parent's degree exponent.
    pub fn edge_weight(&self, parent: NodeId) -> Frac {
        self.nodes[parent].alpha
    }

    /// All edges as `(child, parent)` pairs.
    pub fn edges(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for (parent, ch) in self.children.iter().enumerate() {
            for &c in ch {
                out.push((c, parent));
            }
        }
        out
    }

    pub fn is_tree(&self) -> bool {
        self.nodes
            .iter()
            .all(|n| n.id == self.output || self.parents[n.id].len() == 1)
    }

    fn finalize(mut self) -> Self {
        if self.penultimate.is_empty() {
            self.penultimate = self.children[self.output].to_vec();
        }
        self
    }
}

/// Mutable builder for hand-assembled DAGs (tests, unusual topologies).
#[derive(Debug)]
pub struct DagBuilder {
    nodes: Vec<NodeRecord>,
    children: Vec<Vec<NodeId>>,
    label: String,
    readout: Readout,
}

impl DagBuilder {
    pub fn new(label: impl Into<String>) -> Self {
        DagBuilder {
            nodes: Vec::new(),
            children: Vec::new(),
            label: label.into(),
            readout: Readout::Flatten,
        }
    }

    pub fn input(&mut self, layer: usize, dim: usize, alpha: Frac) -> NodeId {
        self.push(layer, NodeKind::Input, alpha, dim, Dual::Identity, vec![])
    }

    pub fn hidden(
        &mut self,
        layer: usize,
        alpha: Frac,
        activation: Dual,
        children: Vec<NodeId>,
    ) -> NodeId {
        let dim = children.len();
        self.push(layer, NodeKind::Hidden, alpha, dim, activation, children)
    }

    pub fn output(
        &mut self,
        layer: usize,
        alpha: Frac,
        activation: Dual,
        children: Vec<NodeId>,
    ) -> NodeId {
        let dim = children.len();
        self.push(layer, NodeKind::Output, alpha, dim, activation, children)
    }

    pub fn readout(&mut self, readout: Readout) {
        self.readout = readout;
    }

    fn push(
        &mut self,
        layer: usize,
        kind: NodeKind,
        alpha: Frac,
        dim: usize,
        activation: Dual,
        children: Vec<NodeId>,
    ) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(NodeRecord {
            id,
            layer_index: layer,
            kind,
            alpha,
            concrete_dim: dim,
            activation,
        });
        self.children.push(children);
        id
    }

    pub fn build(self) -> Result<ArchDag, ArchError> {
        let n = self.nodes.len();
        let output = self
            .nodes
            .iter()
            .find(|r| r.kind == NodeKind::Output)
            .map(|r| r.id)
            .ok_or_else(|| ArchError::InvalidDimensions("no output node".into()))?;
        let mut parents = vec![Vec::new(); n];
        for (p, ch) in self.children.iter().enumerate() {
            for &c in ch {
                if c >= n {
                    return Err(ArchError::UnknownNode(c));
                }
                parents[c].push(p);
            }
        }
        let reference_dim = self
            .nodes
            .iter()
            .filter(|r| r.kind == NodeKind::Input)
            .map(|r| r.concrete_dim)
            .sum();
        Ok(ArchDag {
            nodes: self.nodes,
            children: self.children,
            parents,
            output,
            reference_dim,
            readout: self.readout,
            penultimate: Vec::new(),
            label: self.label,
        }
        .finalize())
    }
}

/// Linked-list MLP: one input node of dimension `input_dim` (exponent 1),
/// `depth` hidden nodes with exponent 0, identity output.
pub fn build_mlp(depth: usize, input_dim: usize, activation: Dual) -> Result<ArchDag, ArchError> {
    if depth < 1 {
        return Err(ArchError::InvalidDimensions(format!(
            "mlp depth must be >= 1, got {depth}"
        )));
    }
    if input_dim < 2 {
        return Err(ArchError::InvalidDimensions(format!(
            "mlp input dim must be >= 2, got {input_dim}"
        )));
    }
    let mut b = DagBuilder::new(format!("mlp[depth={depth},d={input_dim}]"));
    let mut prev = b.input(0, input_dim, Frac::from_integer(1));
    for l in 1..=depth {
        prev = b.hidden(l, Frac::zero(), activation.clone(), vec![prev]);
    }
    b.output(depth + 1, Frac::zero(), Dual::Identity, vec![prev]);
    b.build()
}

/// Shape parameters for the convolutional builder. The exponents are caller
/// supplied exact fractions; concrete sizes are checked against them only
/// loosely (within Assumption-G style constant factors).
#[derive(Debug, Clone)]
pub struct DcnnShape {
    pub patch_size: usize,
    pub filter_size: usize,
    pub hidden_layers: usize,
    pub width: usize,
    pub alpha_p: Frac,
    pub alpha_k: Frac,
    pub alpha_w: Frac,
}

impl DcnnShape {
    /// Exponent family with `alpha_p = alpha_k = alpha_w = 1/4` and `p = k`,
    /// `w = p`, two hidden conv layers: the deep CNN used throughout the
    /// experiments (`d = p^4`).
    pub fn quarter_exponents(p: usize) -> Self {
        DcnnShape {
            patch_size: p,
            filter_size: p,
            hidden_layers: 2,
            width: p,
            alpha_p: Frac::new(1, 4),
            alpha_k: Frac::new(1, 4),
            alpha_w: Frac::new(1, 4),
        }
    }

    /// The coarser two-conv-layer family (`p' = p^2`, one hidden layer,
    /// width 1, exponents 1/2): `d = p^4` again.
    pub fn half_exponents(p: usize) -> Self {
        DcnnShape {
            patch_size: p * p,
            filter_size: p * p,
            hidden_layers: 1,
            width: 1,
            alpha_p: Frac::new(1, 2),
            alpha_k: Frac::new(1, 2),
            alpha_w: Frac::zero(),
        }
    }
}

/// Tree-shaped deep CNN DAG. Input layer has `k^L * w` nodes of dimension
/// `p`; each hidden conv layer contracts by a factor `k`; the readout
/// collapses the final `w` positions. With `act_after_readout` the collapse
/// is a hidden node (degree `w`) followed by a degree-1 output, otherwise the
/// output node itself has degree `w`.
pub fn build_dcnn(
    shape: &DcnnShape,
    reference_dim: usize,
    readout: Readout,
    act_after_readout: bool,
    activation: Dual,
) -> Result<ArchDag, ArchError> {
    let DcnnShape {
        patch_size: p,
        filter_size: k,
        hidden_layers: l,
        width: w,
        ..
    } = *shape;
    if p < 2 || k < 1 || w < 1 {
        return Err(ArchError::InvalidDimensions(format!(
            "need p >= 2, k >= 1, w >= 1; got p={p}, k={k}, w={w}"
        )));
    }
    let actual = p * k.pow(l as u32) * w;
    if actual != reference_dim {
        return Err(ArchError::DimensionMismatch {
            actual,
            expected: reference_dim,
        });
    }
    if readout == Readout::Gap && act_after_readout {
        return Err(ArchError::GapWithReadoutActivation);
    }

    let n_inputs = k.pow(l as u32) * w;
    let mut b = DagBuilder::new(format!(
        "dcnn[p={p},k={k},L={l},w={w},{}{}]",
        match readout {
            Readout::Flatten => "flatten",
            Readout::Gap => "gap",
        },
        if act_after_readout { "+act" } else { "" }
    ));
    b.readout(readout);

    let inputs: Vec<NodeId> = (0..n_inputs).map(|_| b.input(0, p, shape.alpha_p)).collect();
    // First hidden layer: one node per input patch, exponent 0.
    let mut layer: Vec<NodeId> = inputs
        .iter()
        .map(|&v| b.hidden(1, Frac::zero(), activation.clone(), vec![v]))
        .collect();
    // Hidden conv layers contract blocks of k adjacent positions.
    for j in 0..l {
        let mut next = Vec::with_capacity(layer.len() / k);
        for block in layer.chunks(k) {
            next.push(b.hidden(2 + j, shape.alpha_k, activation.clone(), block.to_vec()));
        }
        layer = next;
    }
    debug_assert_eq!(layer.len(), w);
    let penultimate = layer.clone();
    if act_after_readout {
        let collapse = b.hidden(2 + l, shape.alpha_w, activation, layer);
        b.output(3 + l, Frac::zero(), Dual::Identity, vec![collapse]);
    } else {
        b.output(2 + l, shape.alpha_w, Dual::Identity, layer);
    }
    let mut dag = b.build()?;
    dag.penultimate = penultimate;
    Ok(dag)
}

/// One assumption check outcome.
#[derive(Debug, Clone)]
pub struct ValidationItem {
    pub rule: String,
    pub pass: bool,
    pub offending: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub items: Vec<ValidationItem>,
}

impl ValidationReport {
    pub fn all_pass(&self) -> bool {
        self.items.iter().all(|i| i.pass)
    }
}

/// Constants for the validation checks. The degree bounds are checked within
/// `[c * d^alpha, big_c * d^alpha]`; the literal path-length constant would
/// reject every multi-layer builder output, so the path bound is a separate
/// knob.
#[derive(Debug, Clone, Copy)]
pub struct ValidationConstants {
    pub c: f64,
    pub big_c: f64,
    pub max_parents: usize,
    pub max_path_len: usize,
}

impl Default for ValidationConstants {
    fn default() -> Self {
        ValidationConstants {
            c: 0.5,
            big_c: 2.0,
            max_parents: 2,
            max_path_len: 16,
        }
    }
}

/// Check the structural assumptions node by node and report every violation.
pub fn validate_assumptions(dag: &ArchDag, consts: &ValidationConstants) -> ValidationReport {
    let d = dag.reference_dim() as f64;
    let mut items = Vec::new();

    // (a) degree vs alpha for non-input nodes.
    let mut bad = Vec::new();
    for n in dag.nodes() {
        if n.kind == NodeKind::Input {
            continue;
        }
        let expected = d.powf(crate::frac::frac_to_f64(&n.alpha));
        let deg = dag.children(n.id).len() as f64;
        if deg < consts.c * expected - 1e-9 || deg > consts.big_c * expected + 1e-9 {
            bad.push(n.id);
        }
    }
    items.push(ValidationItem {
        rule: "degree within [c d^alpha, C d^alpha] for non-input nodes".into(),
        pass: bad.is_empty(),
        offending: bad,
    });

    // (b) input dims vs alpha and total dimension.
    let mut bad = Vec::new();
    let mut total = 0usize;
    for n in dag.nodes() {
        if n.kind != NodeKind::Input {
            continue;
        }
        total += n.concrete_dim;
        let expected = d.powf(crate::frac::frac_to_f64(&n.alpha));
        let dim = n.concrete_dim as f64;
        let alpha_positive = n.alpha > Frac::zero();
        if !alpha_positive || dim < consts.c * expected - 1e-9 || dim > consts.big_c * expected + 1e-9
        {
            bad.push(n.id);
        }
    }
    items.push(ValidationItem {
        rule: "input dims within [c d^alpha, C d^alpha], alpha > 0".into(),
        pass: bad.is_empty(),
        offending: bad,
    });
    items.push(ValidationItem {
        rule: "input dimensions sum to the reference dimension".into(),
        pass: total == dag.reference_dim(),
        offending: if total == dag.reference_dim() {
            vec![]
        } else {
            dag.input_nodes()
        },
    });

    // (c) first hidden layer: alpha = 0 and only input children.
    let mut bad = Vec::new();
    for n in dag.nodes() {
        if n.kind == NodeKind::Input {
            continue;
        }
        let touches_input = dag
            .children(n.id)
            .iter()
            .any(|&c| dag.nodes()[c].kind == NodeKind::Input);
        if touches_input {
            let all_inputs = dag
                .children(n.id)
                .iter()
                .all(|&c| dag.nodes()[c].kind == NodeKind::Input);
            if !all_inputs || !n.alpha.is_zero() {
                bad.push(n.id);
            }
        }
    }
    items.push(ValidationItem {
        rule: "first-hidden-layer nodes have alpha = 0 and only input children".into(),
        pass: bad.is_empty(),
        offending: bad,
    });

    // (d) bounded parents and bounded path length to the output.
    let mut bad = Vec::new();
    for n in dag.nodes() {
        if dag.parents(n.id).len() > consts.max_parents {
            bad.push(n.id);
        }
    }
    items.push(ValidationItem {
        rule: format!("at most {} parents per node", consts.max_parents),
        pass: bad.is_empty(),
        offending: bad,
    });

    let depths = path_lengths_to_output(dag);
    let mut bad = Vec::new();
    for n in dag.nodes() {
        match depths[n.id] {
            Some(len) if len <= consts.max_path_len => {}
            _ => bad.push(n.id),
        }
    }
    items.push(ValidationItem {
        rule: format!(
            "every node reaches the output within {} edges",
            consts.max_path_len
        ),
        pass: bad.is_empty(),
        offending: bad,
    });

    ValidationReport { items }
}

/// Longest path (in edges) from each node up to the output; `None` if the
/// output is unreachable.
fn path_lengths_to_output(dag: &ArchDag) -> Vec<Option<usize>> {
    let n = dag.nodes().len();
    let mut len = vec![None; n];
    len[dag.output_node()] = Some(0);
    // Nodes are topologically ordered children-first, so walk backwards.
    for id in (0..n).rev() {
        if let Some(l) = len[id] {
            for &c in dag.children(id) {
                let cand = l + 1;
                if len[c].map_or(true, |old| cand > old) {
                    len[c] = Some(cand);
                }
            }
        }
    }
    len
}

/// Plain-text architecture description: one layer per line,
/// `kind size exponent`, exponents as exact fractions. Lines starting with
/// `#` are comments. Example:
///
/// ```text
/// input 3 1/4          # k^L * w patches of dimension 3
/// conv 3 1/4
/// conv 3 1/4
/// flatten 3 1/4 act
/// ```
///
/// The first line gives the patch size; each `conv` line a hidden layer;
/// the final line is `flatten` or `gap` with the pre-readout width and its
/// exponent, plus an optional trailing `act`.
pub fn parse_description(text: &str, activation: Dual) -> Result<ArchDag, ArchError> {
    let mut patch: Option<(usize, Frac)> = None;
    let mut convs: Vec<(usize, Frac)> = Vec::new();
    let mut readout: Option<(Readout, usize, Frac, bool)> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let kind = tok.next().unwrap();
        let err = |reason: String| ArchError::Description {
            line: line_no,
            reason,
        };
        let mut need_size_alpha = || -> Result<(usize, Frac), ArchError> {
            let size: usize = tok
                .next()
                .ok_or_else(|| err("missing size".into()))?
                .parse()
                .map_err(|_| err("size must be a positive integer".into()))?;
            let alpha = parse_frac(tok.next().ok_or_else(|| err("missing exponent".into()))?)
                .map_err(|e| err(e.to_string()))?;
            Ok((size, alpha))
        };
        match kind {
            "input" => patch = Some(need_size_alpha()?),
            "conv" => convs.push(need_size_alpha()?),
            "flatten" | "gap" => {
                let (size, alpha) = need_size_alpha()?;
                let act = matches!(tok.next(), Some("act"));
                let r = if kind == "gap" { Readout::Gap } else { Readout::Flatten };
                readout = Some((r, size, alpha, act));
            }
            "mlp" => {
                let (dim, _alpha) = need_size_alpha()?;
                let depth: usize = tok
                    .next()
                    .ok_or_else(|| err("mlp needs a depth".into()))?
                    .parse()
                    .map_err(|_| err("depth must be a positive integer".into()))?;
                return build_mlp(depth, dim, activation);
            }
            other => {
                return Err(ArchError::Description {
                    line: line_no,
                    reason: format!("unknown layer kind `{other}`"),
                })
            }
        }
    }
    let (p, alpha_p) = patch.ok_or(ArchError::Description {
        line: 0,
        reason: "missing input line".into(),
    })?;
    let (readout, w, alpha_w, act) = readout.ok_or(ArchError::Description {
        line: 0,
        reason: "missing flatten/gap line".into(),
    })?;
    let (k, alpha_k) = convs.first().copied().unwrap_or((1, Frac::zero()));
    if convs.iter().any(|&(sz, a)| sz != k || a != alpha_k) {
        return Err(ArchError::Description {
            line: 0,
            reason: "all conv layers must share one filter size and exponent".into(),
        });
    }
    let shape = DcnnShape {
        patch_size: p,
        filter_size: k,
        hidden_layers: convs.len(),
        width: w,
        alpha_p,
        alpha_k,
        alpha_w,
    };
    let d = p * k.pow(convs.len() as u32) * w;
    build_dcnn(&shape, d, readout, act, activation)
}

/// Render a builder-produced DAG back into the description format.
pub fn format_description(dag: &ArchDag) -> String {
    let inputs = dag.input_nodes();
    let first = &dag.nodes()[inputs[0]];
    if inputs.len() == 1 {
        let depth = dag
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Hidden)
            .count();
        return format!("mlp {} 1 {}\n", first.concrete_dim, depth);
    }
    let mut out = format!("input {} {}\n", first.concrete_dim, format_frac(&first.alpha));
    let mut conv_layers: Vec<&NodeRecord> = dag
        .nodes()
        .iter()
        .filter(|n| n.kind == NodeKind::Hidden && n.layer_index >= 2)
        .collect();
    let has_act_collapse = conv_layers
        .last()
        .map(|n| n.concrete_dim == dag.pool_window() && dag.parents(n.id) == [dag.output_node()])
        .unwrap_or(false)
        && dag.children(dag.output_node()).len() == 1;
    if has_act_collapse {
        conv_layers.pop();
    }
    let mut seen = std::collections::BTreeSet::new();
    for n in conv_layers {
        if seen.insert(n.layer_index) {
            out.push_str(&format!(
                "conv {} {}\n",
                n.concrete_dim,
                format_frac(&n.alpha)
            ));
        }
    }
    let (w_alpha, act) = if has_act_collapse {
        let collapse = dag.children(dag.output_node())[0];
        (dag.nodes()[collapse].alpha, true)
    } else {
        (dag.nodes()[dag.output_node()].alpha, false)
    };
    out.push_str(&format!(
        "{} {} {}{}\n",
        match dag.readout() {
            Readout::Flatten => "flatten",
            Readout::Gap => "gap",
        },
        dag.pool_window(),
        format_frac(&w_alpha),
        if act { " act" } else { "" }
    ));
    out
}
