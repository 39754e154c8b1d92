//! Spatial, frequency and learning indices of multi-indices on a DAG.
//!
//! The spatial index of a node set is the minimum total edge weight of a
//! connected subgraph joining the set; on trees this is the weight of the
//! union of root paths, in general a Steiner minimization (Dreyfus-Wagner
//! over at most 8 terminals). All index arithmetic is exact rational.

use crate::arch::{ArchDag, NodeId, NodeKind, Readout};
use crate::frac::{Frac, IndexValue};
use crate::harmonics::harmonic_count_big;
use num::{BigUint, Zero};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum IndexError {
    #[error("unknown node id {0}")]
    UnknownNode(NodeId),
    #[error("zero multi-index has no learnability or indices")]
    ZeroMultiIndex,
    #[error("steiner minimization supports at most 8 terminals on non-tree dags, got {0}")]
    TooManyTerminals(usize),
    #[error("enumeration guard tripped: {0} patterns exceed the configured cap")]
    EnumerationCap(usize),
    #[error("budget {0} lies exactly on a learning index; theorems require a spectral gap")]
    BudgetOnIndex(String),
    #[error("node {0} is not an input node")]
    NotAnInput(NodeId),
    #[error("eigenfunction pattern does not embed distinctly at patch size {0}")]
    PatternCollision(usize),
}

/// Finitely-supported map input-node -> degree.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct MultiIndex {
    entries: BTreeMap<NodeId, u32>,
}

impl MultiIndex {
    pub fn new() -> Self {
        MultiIndex {
            entries: BTreeMap::new(),
        }
    }

    pub fn from_pairs(pairs: &[(NodeId, u32)]) -> Self {
        let mut m = MultiIndex::new();
        for &(v, r) in pairs {
            if r > 0 {
                *m.entries.entry(v).or_insert(0) += r;
            }
        }
        m
    }

    pub fn support(&self) -> Vec<NodeId> {
        self.entries.keys().copied().collect()
    }

    pub fn degree(&self, v: NodeId) -> u32 {
        self.entries.get(&v).copied().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.entries.values().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (NodeId, u32)> + '_ {
        self.entries.iter().map(|(&v, &r)| (v, r))
    }

    /// Componentwise comparison: true if `self[v] <= other[v]` everywhere.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.entries
            .iter()
            .all(|(v, r)| other.degree(*v) >= *r)
    }
}

impl Default for MultiIndex {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexTriple {
    pub spatial: IndexValue,
    pub frequency: IndexValue,
    pub learning: IndexValue,
}

impl IndexTriple {
    pub fn infinite() -> Self {
        IndexTriple {
            spatial: IndexValue::Infinite,
            frequency: IndexValue::Infinite,
            learning: IndexValue::Infinite,
        }
    }
}

/// Exact minimal weight of a connected subgraph containing `node_set`.
/// Sets of size <= 1 have spatial index 0 by definition.
pub fn spatial_index(dag: &ArchDag, node_set: &[NodeId]) -> Result<Frac, IndexError> {
    for &v in node_set {
        if v >= dag.nodes().len() {
            return Err(IndexError::UnknownNode(v));
        }
    }
    let set: BTreeSet<NodeId> = node_set.iter().copied().collect();
    if set.len() <= 1 {
        return Ok(Frac::zero());
    }
    if dag.is_tree() {
        Ok(tree_steiner_weight(dag, &set))
    } else {
        if set.len() > 8 {
            return Err(IndexError::TooManyTerminals(set.len()));
        }
        Ok(dreyfus_wagner(dag, &set))
    }
}

/// On a tree every connected subgraph containing a node and the root contains
/// the node's root path, so the minimal subtree is the union of root paths of
/// the terminal closure (rooted at the deepest common ancestor).
fn tree_steiner_weight(dag: &ArchDag, set: &BTreeSet<NodeId>) -> Frac {
    // Union of paths from each terminal up to the output node.
    let mut on_path: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    for &v in set {
        let mut cur = v;
        while cur != dag.output_node() {
            let parent = dag.parents(cur)[0];
            on_path.insert((cur, parent));
            cur = parent;
        }
    }
    // Trim edges above the subtree join: repeatedly drop the top chain edges
    // whose lower endpoint has no other incident path edge and is not a
    // terminal. Equivalent to rooting at the LCA when the output itself is
    // not a terminal.
    let mut edges: BTreeSet<(NodeId, NodeId)> = on_path;
    loop {
        // incidence count per node over current edges
        let mut inc: BTreeMap<NodeId, usize> = BTreeMap::new();
        for &(a, b) in &edges {
            *inc.entry(a).or_insert(0) += 1;
            *inc.entry(b).or_insert(0) += 1;
        }
        let removable: Vec<(NodeId, NodeId)> = edges
            .iter()
            .copied()
            .filter(|&(a, b)| {
                // leaf edge whose leaf endpoint is not a terminal
                (inc[&a] == 1 && !set.contains(&a)) || (inc[&b] == 1 && !set.contains(&b))
            })
            .collect();
        if removable.is_empty() {
            break;
        }
        for e in removable {
            edges.remove(&e);
        }
    }
    edges
        .iter()
        .map(|&(_, parent)| dag.edge_weight(parent))
        .sum()
}

/// Dreyfus-Wagner Steiner tree on the undirected view of the DAG.
fn dreyfus_wagner(dag: &ArchDag, terminals: &BTreeSet<NodeId>) -> Frac {
    let n = dag.nodes().len();
    let terms: Vec<NodeId> = terminals.iter().copied().collect();
    let t = terms.len();
    // Undirected adjacency with edge weight = parent's alpha.
    let mut adj: Vec<Vec<(NodeId, Frac)>> = vec![Vec::new(); n];
    for (child, parent) in dag.edges() {
        let w = dag.edge_weight(parent);
        adj[child].push((parent, w));
        adj[parent].push((child, w));
    }
    let dist = |src: usize| -> Vec<Option<Frac>> {
        let mut d: Vec<Option<Frac>> = vec![None; n];
        let mut heap: BinaryHeap<(std::cmp::Reverse<Frac>, usize)> = BinaryHeap::new();
        d[src] = Some(Frac::zero());
        heap.push((std::cmp::Reverse(Frac::zero()), src));
        while let Some((std::cmp::Reverse(du), u)) = heap.pop() {
            if d[u] != Some(du) {
                continue;
            }
            for &(v, w) in &adj[u] {
                let cand = du + w;
                if d[v].map_or(true, |old| cand < old) {
                    d[v] = Some(cand);
                    heap.push((std::cmp::Reverse(cand), v));
                }
            }
        }
        d
    };
    let shortest: Vec<Vec<Option<Frac>>> = (0..n).map(dist).collect();

    // S[mask][v]: weight of the cheapest tree spanning terminal subset `mask`
    // plus node v. Real weights are bounded by the total edge weight, far
    // below the sentinel.
    let full = (1usize << (t - 1)) - 1; // subsets over terms[0..t-1], terms[t-1] is the root terminal
    let inf = Frac::new(1_000_000_000, 1);
    let mut s = vec![vec![inf; n]; full + 1];
    for (i, &term) in terms.iter().enumerate().take(t - 1) {
        let mask = 1usize << i;
        for v in 0..n {
            if let Some(d) = shortest[term][v] {
                s[mask][v] = d;
            }
        }
    }
    let mut masks: Vec<usize> = (1..=full).collect();
    masks.sort_by_key(|m| m.count_ones());
    for &mask in &masks {
        if mask.count_ones() <= 1 {
            continue;
        }
        // Merge step: split mask into two non-empty halves at v.
        for v in 0..n {
            let mut sub = (mask - 1) & mask;
            while sub > 0 {
                let other = mask ^ sub;
                if sub < other && s[sub][v] < inf && s[other][v] < inf {
                    // each unordered split once
                    let cand = s[sub][v] + s[other][v];
                    if cand < s[mask][v] {
                        s[mask][v] = cand;
                    }
                }
                sub = (sub - 1) & mask;
            }
        }
        // Relax step: Dijkstra-like propagation over the graph.
        let mut heap: BinaryHeap<(std::cmp::Reverse<Frac>, usize)> = BinaryHeap::new();
        for v in 0..n {
            if s[mask][v] < inf {
                heap.push((std::cmp::Reverse(s[mask][v]), v));
            }
        }
        while let Some((std::cmp::Reverse(du), u)) = heap.pop() {
            if s[mask][u] != du {
                continue;
            }
            for &(v, w) in &adj[u] {
                let cand = du + w;
                if cand < s[mask][v] {
                    s[mask][v] = cand;
                    heap.push((std::cmp::Reverse(cand), v));
                }
            }
        }
    }
    s[full][terms[t - 1]]
}

/// A multi-index is learnable when some common ancestor of its support nodes
/// carries a (semi-)admissible activation; identity nodes never qualify and
/// polynomially-admissible ones only up to their truncation order.
pub fn learnable(dag: &ArchDag, r: &MultiIndex) -> Result<bool, IndexError> {
    if r.is_zero() {
        return Err(IndexError::ZeroMultiIndex);
    }
    let support = r.support();
    for &v in &support {
        let rec = dag.node(v).map_err(|_| IndexError::UnknownNode(v))?;
        if rec.kind != NodeKind::Input {
            return Err(IndexError::NotAnInput(v));
        }
    }
    let total = r.total_degree() as usize;
    let common = dag
        .common_ancestors(&support)
        .map_err(|_| IndexError::UnknownNode(support[0]))?;
    Ok(common
        .iter()
        .any(|&u| dag.nodes()[u].activation.semi_admissible_for_degree(total)))
}

/// Exact (S, F, L) triple; infinite when the multi-index is not learnable.
pub fn index_triple(dag: &ArchDag, r: &MultiIndex) -> Result<IndexTriple, IndexError> {
    if r.is_zero() {
        return Ok(IndexTriple {
            spatial: IndexValue::zero(),
            frequency: IndexValue::zero(),
            learning: IndexValue::zero(),
        });
    }
    if !learnable(dag, r)? {
        return Ok(IndexTriple::infinite());
    }
    let mut terminals = r.support();
    terminals.push(dag.output_node());
    let s = spatial_index(dag, &terminals)?;
    let f: Frac = r
        .entries()
        .map(|(v, deg)| dag.nodes()[v].alpha * Frac::from_integer(deg as i64))
        .sum();
    Ok(IndexTriple {
        spatial: IndexValue::Finite(s),
        frequency: IndexValue::Finite(f),
        learning: IndexValue::Finite(s + f),
    })
}

/// One entry of the learning sequence: a distinct learning-index value with a
/// canonical representative.
#[derive(Debug, Clone)]
pub struct LearningClass {
    pub learning: Frac,
    pub representative: MultiIndex,
    /// Number of enumerated multi-indices with this learning index.
    pub pattern_count: usize,
}

/// Distinct learning-index values up to `max_l`, sorted ascending, from an
/// exhaustive enumeration of multi-indices with total degree <= `max_degree`.
pub fn learning_sequence(
    dag: &ArchDag,
    max_degree: u32,
    max_l: Frac,
    cap: usize,
) -> Result<Vec<LearningClass>, IndexError> {
    let mut classes: BTreeMap<Frac, LearningClass> = BTreeMap::new();
    let mut count = 0usize;
    for_each_multi_index(dag, max_degree, cap, &mut count, &mut |r| {
        let triple = index_triple(dag, r)?;
        if let IndexValue::Finite(l) = triple.learning {
            if l <= max_l {
                classes
                    .entry(l)
                    .and_modify(|c| c.pattern_count += 1)
                    .or_insert_with(|| LearningClass {
                        learning: l,
                        representative: r.clone(),
                        pattern_count: 1,
                    });
            }
        }
        Ok(())
    })?;
    Ok(classes.into_values().collect())
}

/// Enumerate all nonzero multi-indices with total degree <= `max_degree`.
fn for_each_multi_index(
    dag: &ArchDag,
    max_degree: u32,
    cap: usize,
    count: &mut usize,
    f: &mut impl FnMut(&MultiIndex) -> Result<(), IndexError>,
) -> Result<(), IndexError> {
    let inputs = dag.input_nodes();
    let mut current: Vec<(NodeId, u32)> = Vec::new();
    fn rec(
        inputs: &[NodeId],
        idx: usize,
        remaining: u32,
        current: &mut Vec<(NodeId, u32)>,
        count: &mut usize,
        cap: usize,
        f: &mut impl FnMut(&MultiIndex) -> Result<(), IndexError>,
    ) -> Result<(), IndexError> {
        if idx == inputs.len() || remaining == 0 {
            if !current.is_empty() {
                *count += 1;
                if *count > cap {
                    return Err(IndexError::EnumerationCap(*count));
                }
                f(&MultiIndex::from_pairs(current))?;
            }
            return Ok(());
        }
        // skip this node entirely
        rec(inputs, idx + 1, remaining, current, count, cap, f)?;
        for deg in 1..=remaining {
            current.push((inputs[idx], deg));
            rec(inputs, idx + 1, remaining - deg, current, count, cap, f)?;
            current.pop();
        }
        Ok(())
    }
    rec(&inputs, 0, max_degree, &mut current, count, cap, f)
}

/// Exact dimension of the eigenspace with learning index `l_target`:
/// sum over matching multi-indices of the product of per-patch harmonic
/// counts. For GAP dags the count is of symmetric basis elements (orbits of
/// the pooling-window translation group).
pub fn eigenspace_dimension(
    dag: &ArchDag,
    l_target: Frac,
    max_degree: u32,
    cap: usize,
) -> Result<BigUint, IndexError> {
    match dag.readout() {
        Readout::Flatten => {
            let mut total = BigUint::zero();
            let mut count = 0usize;
            for_each_multi_index(dag, max_degree, cap, &mut count, &mut |r| {
                let triple = index_triple(dag, r)?;
                if triple.learning == IndexValue::Finite(l_target) {
                    total += class_dimension(dag, r);
                }
                Ok(())
            })?;
            Ok(total)
        }
        Readout::Gap => {
            // Count translation orbits of (r, l) pairs: for each orbit of
            // support patterns under the window shift, one symmetric basis
            // element per harmonic-label choice on the canonical pattern.
            let w = dag.pool_window();
            let inputs = dag.input_nodes();
            let per_group = inputs.len() / w;
            let mut total = BigUint::zero();
            let mut count = 0usize;
            let mut seen: BTreeSet<Vec<(usize, u32)>> = BTreeSet::new();
            for_each_multi_index(dag, max_degree, cap, &mut count, &mut |r| {
                let triple = index_triple(dag, r)?;
                if triple.learning != IndexValue::Finite(l_target) {
                    return Ok(());
                }
                // Canonical representative of the orbit under group shifts.
                let canon = canonical_shift(r, w, per_group, &inputs);
                if seen.insert(canon) {
                    // Orbit contributes one symmetric element per label, but
                    // self-symmetric patterns (orbit smaller than w) still
                    // contribute one element per label of the sub-orbit.
                    total += class_dimension(dag, r);
                }
                Ok(())
            })?;
            Ok(total)
        }
    }
}

/// Product over support patches of N(d_v, r_v).
fn class_dimension(dag: &ArchDag, r: &MultiIndex) -> BigUint {
    let mut prod = BigUint::from(1u32);
    for (v, deg) in r.entries() {
        let d_v = dag.nodes()[v].concrete_dim;
        prod *= harmonic_count_big(d_v, deg as usize);
    }
    prod
}

/// Smallest shift image of the support pattern under the pooling-window
/// translation group, as a sorted (position, degree) list.
fn canonical_shift(
    r: &MultiIndex,
    w: usize,
    per_group: usize,
    inputs: &[NodeId],
) -> Vec<(usize, u32)> {
    let pos_of: HashMap<NodeId, usize> = inputs.iter().enumerate().map(|(i, &v)| (v, i)).collect();
    let pattern: Vec<(usize, u32)> = r.entries().map(|(v, deg)| (pos_of[&v], deg)).collect();
    let mut best: Option<Vec<(usize, u32)>> = None;
    for shift in 0..w {
        let mut shifted: Vec<(usize, u32)> = pattern
            .iter()
            .map(|&(pos, deg)| {
                let group = pos / per_group;
                let within = pos % per_group;
                (((group + shift) % w) * per_group + within, deg)
            })
            .collect();
        shifted.sort_unstable();
        if best.as_ref().map_or(true, |b| &shifted < b) {
            best = Some(shifted);
        }
    }
    best.unwrap()
}

/// The multi-index of an eigenfunction's canonical base-0 monomial under a
/// given architecture: the coordinate offsets (cyclic in every axis of the
/// `[p]^4` index group) are flattened and grouped by the architecture's
/// input-patch size, summing degrees per patch.
pub fn canonical_multi_index(
    id: crate::harmonics::EigenId,
    p: usize,
    dag: &ArchDag,
) -> Result<MultiIndex, IndexError> {
    let inputs = dag.input_nodes();
    let d_v = dag.nodes()[inputs[0]].concrete_dim;
    debug_assert_eq!(d_v * inputs.len(), p * p * p * p);
    let m = p as i32;
    let wrap = |x: i32| (((x % m) + m) % m) as usize;
    let mut seen = BTreeSet::new();
    let mut pairs: Vec<(NodeId, u32)> = Vec::new();
    for (offset, deg) in id.canonical_monomial() {
        let coord = [wrap(offset[0]), wrap(offset[1]), wrap(offset[2]), wrap(offset[3])];
        if !seen.insert(coord) {
            return Err(IndexError::PatternCollision(p));
        }
        let flat = coord[0] * p * p * p + coord[1] * p * p + coord[2] * p + coord[3];
        pairs.push((inputs[flat / d_v], deg));
    }
    Ok(MultiIndex::from_pairs(&pairs))
}

/// Partition enumerated classes by learning index below/above the budget.
/// The budget must not hit a learning index exactly (spectral gap).
pub fn budget_partition(
    dag: &ArchDag,
    budget: Frac,
    max_degree: u32,
    cap: usize,
) -> Result<(Vec<LearningClass>, Vec<LearningClass>), IndexError> {
    let max_l = Frac::from_integer(1_000_000);
    let classes = learning_sequence(dag, max_degree, max_l, cap)?;
    if classes.iter().any(|c| c.learning == budget) {
        return Err(IndexError::BudgetOnIndex(crate::frac::format_frac(&budget)));
    }
    Ok(classes
        .into_iter()
        .partition(|c| c.learning < budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arch::{build_dcnn, build_mlp, DagBuilder, DcnnShape, Readout};
    use crate::dual::{centered_exp_dual, gaussian_dual, Dual};

    fn dcnn4() -> ArchDag {
        build_dcnn(
            &DcnnShape::quarter_exponents(4),
            256,
            Readout::Flatten,
            true,
            gaussian_dual(1.0).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn singleton_and_mlp_spatial_indices_are_zero() {
        let dag = build_mlp(4, 256, gaussian_dual(1.0).unwrap()).unwrap();
        let input = dag.input_nodes()[0];
        assert_eq!(spatial_index(&dag, &[input]).unwrap(), Frac::zero());
        assert_eq!(
            spatial_index(&dag, &[input, dag.output_node()]).unwrap(),
            Frac::zero()
        );
    }

    #[test]
    fn dcnn_single_patch_spatial_index() {
        let dag = dcnn4();
        let input = dag.input_nodes()[0];
        let s = spatial_index(&dag, &[input, dag.output_node()]).unwrap();
        assert_eq!(s, Frac::new(3, 4));
    }

    #[test]
    fn dcnn_sibling_and_cross_window_indices() {
        let dag = dcnn4();
        let inputs = dag.input_nodes();
        let out = dag.output_node();
        // Adjacent patches in one conv block share the first conv parent.
        let s = spatial_index(&dag, &[inputs[0], inputs[1], out]).unwrap();
        assert_eq!(s, Frac::new(4, 4));
        // Patches in different pooling-window groups join at the collapse.
        let s = spatial_index(&dag, &[inputs[0], inputs[16], out]).unwrap();
        assert_eq!(s, Frac::new(6, 4));
    }

    #[test]
    fn tree_path_matches_dreyfus_wagner_exhaustively() {
        // p=2 family: 8 input patches; check all subsets of <= 4 inputs.
        let dag = build_dcnn(
            &DcnnShape::quarter_exponents(2),
            16,
            Readout::Flatten,
            true,
            centered_exp_dual(1.0).unwrap(),
        )
        .unwrap();
        let inputs = dag.input_nodes();
        let out = dag.output_node();
        let mut checked = 0;
        for mask in 1usize..(1 << inputs.len()) {
            if mask.count_ones() > 4 {
                continue;
            }
            let mut set: Vec<NodeId> = inputs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, &v)| v)
                .collect();
            set.push(out);
            let tree = tree_steiner_weight(&dag, &set.iter().copied().collect());
            let dw = dreyfus_wagner(&dag, &set.iter().copied().collect());
            assert_eq!(tree, dw, "set {set:?}");
            checked += 1;
        }
        assert!(checked > 100);
    }

    #[test]
    fn steiner_works_on_a_non_tree_dag() {
        // Diamond: two parents share two children.
        let mut b = DagBuilder::new("diamond");
        let i1 = b.input(0, 4, Frac::new(1, 2));
        let i2 = b.input(0, 4, Frac::new(1, 2));
        let h1 = b.hidden(1, Frac::zero(), centered_exp_dual(1.0).unwrap(), vec![i1]);
        let h2 = b.hidden(1, Frac::zero(), centered_exp_dual(1.0).unwrap(), vec![i2]);
        let m1 = b.hidden(2, Frac::new(1, 2), centered_exp_dual(1.0).unwrap(), vec![h1, h2]);
        let m2 = b.hidden(2, Frac::new(1, 4), centered_exp_dual(1.0).unwrap(), vec![h1, h2]);
        b.output(3, Frac::zero(), Dual::Identity, vec![m1, m2]);
        let dag = b.build().unwrap();
        assert!(!dag.is_tree());
        let s = spatial_index(&dag, &[i1, i2, dag.output_node()]).unwrap();
        // Cheapest join goes through m2 twice (1/4 each).
        assert_eq!(s, Frac::new(1, 2));
    }

    #[test]
    fn mlp_learnable_everything_scnn_single_patch_only() {
        let mlp = build_mlp(3, 81, gaussian_dual(1.0).unwrap()).unwrap();
        let v = mlp.input_nodes()[0];
        for deg in 1..=6 {
            let r = MultiIndex::from_pairs(&[(v, deg)]);
            assert!(learnable(&mlp, &r).unwrap());
        }
        let r = MultiIndex::new();
        assert!(learnable(&mlp, &r).is_err());

        // S-CNN: flatten-dense identity readout, no hidden conv layers.
        let shape = DcnnShape {
            patch_size: 4,
            filter_size: 1,
            hidden_layers: 0,
            width: 4,
            alpha_p: Frac::new(1, 2),
            alpha_k: Frac::zero(),
            alpha_w: Frac::new(1, 2),
        };
        let scnn = build_dcnn(&shape, 16, Readout::Flatten, false, centered_exp_dual(1.0).unwrap())
            .unwrap();
        let inputs = scnn.input_nodes();
        let single = MultiIndex::from_pairs(&[(inputs[0], 3)]);
        assert!(learnable(&scnn, &single).unwrap());
        let cross = MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[1], 1)]);
        assert!(!learnable(&scnn, &cross).unwrap());
        assert_eq!(index_triple(&scnn, &cross).unwrap(), IndexTriple::infinite());

        // With a semi-admissible post-flatten activation everything becomes
        // learnable.
        let act_arch =
            build_dcnn(&shape, 16, Readout::Flatten, true, centered_exp_dual(1.0).unwrap())
                .unwrap();
        let inputs = act_arch.input_nodes();
        let cross = MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[1], 1)]);
        assert!(learnable(&act_arch, &cross).unwrap());
    }

    #[test]
    fn learning_is_spatial_plus_frequency() {
        let dag = dcnn4();
        let inputs = dag.input_nodes();
        for r in [
            MultiIndex::from_pairs(&[(inputs[0], 2)]),
            MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[1], 1)]),
            MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[16], 2)]),
        ] {
            let t = index_triple(&dag, &r).unwrap();
            let s = t.spatial.as_frac().unwrap();
            let f = t.frequency.as_frac().unwrap();
            assert_eq!(t.learning.as_frac().unwrap(), s + f);
        }
    }

    #[test]
    fn mlp_learning_sequence_is_integers_and_depth_invariant() {
        let cap = 1_000_000;
        let mut sequences = Vec::new();
        for depth in [1usize, 4] {
            let dag = build_mlp(depth, 81, gaussian_dual(1.0).unwrap()).unwrap();
            let seq = learning_sequence(&dag, 6, Frac::from_integer(6), cap).unwrap();
            let values: Vec<Frac> = seq.iter().map(|c| c.learning).collect();
            assert_eq!(
                values,
                (1..=6).map(Frac::from_integer).collect::<Vec<_>>()
            );
            sequences.push(values);
        }
        assert_eq!(sequences[0], sequences[1]);
    }

    #[test]
    fn dcnn_learning_sequence_contains_fractional_values() {
        let dag = dcnn4();
        let seq = learning_sequence(&dag, 3, Frac::new(2, 1), 2_000_000).unwrap();
        let values: Vec<Frac> = seq.iter().map(|c| c.learning).collect();
        assert!(values.contains(&Frac::new(5, 4)), "{values:?}");
        assert!(values.contains(&Frac::new(6, 4)), "{values:?}");
        // Linear functions first.
        assert_eq!(values[0], Frac::from_integer(1));
    }

    #[test]
    fn refinement_supersets_learning_values() {
        // d = 16 with half exponents vs quarter exponents.
        let coarse = build_dcnn(
            &DcnnShape {
                patch_size: 4,
                filter_size: 4,
                hidden_layers: 1,
                width: 1,
                alpha_p: Frac::new(1, 2),
                alpha_k: Frac::new(1, 2),
                alpha_w: Frac::zero(),
            },
            16,
            Readout::Flatten,
            true,
            centered_exp_dual(1.0).unwrap(),
        )
        .unwrap();
        let fine = build_dcnn(
            &DcnnShape::quarter_exponents(2),
            16,
            Readout::Flatten,
            true,
            centered_exp_dual(1.0).unwrap(),
        )
        .unwrap();
        let max_l = Frac::new(5, 2);
        let coarse_vals: BTreeSet<Frac> = learning_sequence(&coarse, 5, max_l, 2_000_000)
            .unwrap()
            .iter()
            .map(|c| c.learning)
            .collect();
        let fine_vals: BTreeSet<Frac> = learning_sequence(&fine, 5, max_l, 2_000_000)
            .unwrap()
            .iter()
            .map(|c| c.learning)
            .collect();
        assert!(coarse_vals.is_subset(&fine_vals), "{coarse_vals:?} vs {fine_vals:?}");
    }

    #[test]
    fn monotonicity_properties() {
        let dag = dcnn4();
        let inputs = dag.input_nodes();
        let r_small = MultiIndex::from_pairs(&[(inputs[0], 1), (inputs[5], 1)]);
        let r_big = MultiIndex::from_pairs(&[(inputs[0], 2), (inputs[5], 1), (inputs[7], 1)]);
        assert!(r_small.le(&r_big));
        let f_small = index_triple(&dag, &r_small).unwrap().frequency;
        let f_big = index_triple(&dag, &r_big).unwrap().frequency;
        assert!(f_small <= f_big);
        // Adding a node never decreases the spatial index.
        let out = dag.output_node();
        let s1 = spatial_index(&dag, &[inputs[0], out]).unwrap();
        let s2 = spatial_index(&dag, &[inputs[0], inputs[1], out]).unwrap();
        let s3 = spatial_index(&dag, &[inputs[0], inputs[1], inputs[40], out]).unwrap();
        assert!(s1 <= s2 && s2 <= s3);
    }

    #[test]
    fn eigenspace_dimension_matches_brute_force_on_tiny_dag() {
        // p=2, k=2, one hidden conv layer, w=2: d = 8, four input patches of
        // dimension 2.
        let shape = DcnnShape {
            patch_size: 2,
            filter_size: 2,
            hidden_layers: 1,
            width: 2,
            alpha_p: Frac::new(1, 3),
            alpha_k: Frac::new(1, 3),
            alpha_w: Frac::new(1, 3),
        };
        let dag = build_dcnn(&shape, 8, Readout::Flatten, true, centered_exp_dual(1.0).unwrap())
            .unwrap();
        let inputs = dag.input_nodes();
        assert_eq!(inputs.len(), 4);

        // Brute force: loop over every r with |r| <= 4 explicitly.
        let mut by_l: BTreeMap<Frac, BigUint> = BTreeMap::new();
        for a in 0..=4u32 {
            for b in 0..=4u32 {
                for c in 0..=4u32 {
                    for d in 0..=4u32 {
                        if a + b + c + d == 0 || a + b + c + d > 4 {
                            continue;
                        }
                        let r = MultiIndex::from_pairs(&[
                            (inputs[0], a),
                            (inputs[1], b),
                            (inputs[2], c),
                            (inputs[3], d),
                        ]);
                        let t = index_triple(&dag, &r).unwrap();
                        if let IndexValue::Finite(l) = t.learning {
                            let dim = class_dimension(&dag, &r);
                            *by_l.entry(l).or_default() += dim;
                        }
                    }
                }
            }
        }
        for (l, expected) in by_l {
            let got = eigenspace_dimension(&dag, l, 4, 1_000_000).unwrap();
            assert_eq!(got, expected, "L = {l}");
        }
    }

    #[test]
    fn gap_counts_are_flatten_counts_over_window_on_free_orbits() {
        let shape = DcnnShape::quarter_exponents(2);
        let flat = build_dcnn(&shape, 16, Readout::Flatten, false, centered_exp_dual(1.0).unwrap())
            .unwrap();
        let gap = build_dcnn(&shape, 16, Readout::Gap, false, centered_exp_dual(1.0).unwrap())
            .unwrap();
        // L = 3/4 + 1/4: single-patch degree-1 classes; orbit under the
        // 2-element window group is free (patterns live in one group).
        let l = Frac::from_integer(1);
        let f = eigenspace_dimension(&flat, l, 2, 100_000).unwrap();
        let g = eigenspace_dimension(&gap, l, 2, 100_000).unwrap();
        assert_eq!(f, g.clone() * BigUint::from(2u32));
    }

    #[test]
    fn budget_partition_splits_and_rejects_on_index() {
        let dag = dcnn4();
        let (learn, not) =
            budget_partition(&dag, Frac::new(157, 100), 3, 2_000_000).unwrap();
        assert!(learn.iter().all(|c| c.learning < Frac::new(157, 100)));
        assert!(not.iter().all(|c| c.learning > Frac::new(157, 100)));
        assert!(!learn.is_empty() && !not.is_empty());
        let err = budget_partition(&dag, Frac::new(5, 4), 3, 2_000_000);
        assert!(matches!(err, Err(IndexError::BudgetOnIndex(_))));
        // Budget below 1: nothing learnable.
        let (learn, _) = budget_partition(&dag, Frac::new(1, 2), 2, 2_000_000).unwrap();
        assert!(learn.is_empty());
    }

    #[test]
    fn enumeration_cap_guards() {
        let dag = dcnn4();
        let err = learning_sequence(&dag, 6, Frac::from_integer(10), 1000);
        assert!(matches!(err, Err(IndexError::EnumerationCap(_))));
    }
}
