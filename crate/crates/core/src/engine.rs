//! The message-passing substrate.
//!
//! A graph is a set of passers joined by paired directed edges. Four
//! passer kinds cover the models this crate builds:
//!
//! - table nodes holding a joint prior of any dimension, with a cached
//!   product of received messages,
//! - hyperedges, the variable-tuple meeting points, same product cache
//!   but eligible under the label-superset rule,
//! - constant multipliers relabeling a support by a per-axis factor
//!   (reciprocal on the way back),
//! - convolution-tree passers wrapping a [`ConvTree`] for additive
//!   dependencies of any arity.
//!
//! The engine only computes and delivers single messages. Sequencing
//! lives in the scheduling module, which decides when an edge fires and
//! when the run has converged.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::conv_tree::{ConvTree, TrimMode};
use crate::convolution::PParam;
use crate::pmf::{LabeledPmf, Pmf, ScalePlacement, SupportBox};
use crate::tensor::{advance, Tensor};
use crate::{Error, Result};

pub type PasserId = usize;
pub type EdgeId = usize;

/// Edges are allocated in reverse-linked pairs.
pub fn reverse(e: EdgeId) -> EdgeId {
    e ^ 1
}

/// Largest absolute difference over the union of the supports, with
/// cells absent from one side read as zero. A mean would shrink with
/// support width and let a real change on a wide message pass for
/// convergence.
pub fn message_deviation(a: &LabeledPmf, b: &LabeledPmf) -> Result<f64> {
    let b = b.align_to(a.labels())?;
    let hull = a.pmf().support_box().hull(&b.pmf().support_box())?;
    let mut idx = vec![0usize; hull.rank()];
    let extents = hull.extents();
    let mut worst = 0.0f64;
    loop {
        let label: Vec<i64> = hull.lo().iter().zip(&idx).map(|(l, &i)| l + i as i64).collect();
        let d = (a.pmf().at_label(&label) - b.pmf().at_label(&label)).abs();
        worst = worst.max(d);
        if !advance(&mut idx, &extents) {
            return Ok(worst);
        }
    }
}

#[derive(Debug, Clone)]
struct Edge {
    from: PasserId,
    to: PasserId,
    labels: Vec<String>,
    /// The stored (dampened, normalized) message last delivered here.
    last: Option<LabeledPmf>,
    /// Scheduler membership flag, avoiding queue set lookups.
    queued: bool,
}

/// Product of every received message over a fixed axis set, kept as the
/// product of the nonzero factors plus a per-cell count of zero
/// factors, so any single factor divides out exactly.
#[derive(Debug, Clone)]
struct ProductCache {
    box_: SupportBox,
    nonzero: Tensor<f64>,
    zeros: Tensor<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TableKind {
    Hugin,
    Hyperedge,
}

#[derive(Debug, Clone)]
struct TableState {
    kind: TableKind,
    /// Axis name per dimension; every incident edge carries a subset
    /// (hyperedges: exactly this set).
    axes: Vec<String>,
    prior: Option<LabeledPmf>,
    /// Received messages covering each axis, for the superset rule.
    axis_received: Vec<u32>,
    cache: Option<ProductCache>,
}

#[derive(Debug, Clone)]
struct MultiplierState {
    factors: Vec<f64>,
    interpolate_forward: bool,
    interpolate_backward: bool,
    in_labels: Vec<String>,
    out_labels: Vec<String>,
    /// Outgoing edge toward the input-side neighbor.
    input_edge: Option<EdgeId>,
    /// Outgoing edge toward the output-side neighbor.
    output_edge: Option<EdgeId>,
}

#[derive(Debug, Clone)]
struct TreeState {
    tree: ConvTree,
    /// Outgoing edge per leaf slot.
    leaf_edges: Vec<Option<EdgeId>>,
    sum_edge: Option<EdgeId>,
}

#[derive(Debug, Clone)]
enum PasserState {
    Table(TableState),
    Multiplier(MultiplierState),
    Tree(TreeState),
}

#[derive(Debug, Clone)]
struct Passer {
    name: String,
    state: PasserState,
}

#[derive(Debug, Clone)]
pub struct InferenceGraph {
    p: PParam,
    seed: u64,
    passers: Vec<Passer>,
    edges: Vec<Edge>,
    outgoing: Vec<Vec<EdgeId>>,
    /// Received incoming edges per passer, for O(1) eligibility.
    received: Vec<usize>,
    /// Where each variable's posterior is read; hyperedges take
    /// precedence over table nodes.
    var_home: HashMap<String, (PasserId, bool)>,
}

impl InferenceGraph {
    pub fn new(p: PParam, seed: u64) -> Self {
        InferenceGraph {
            p,
            seed,
            passers: Vec::new(),
            edges: Vec::new(),
            outgoing: Vec::new(),
            received: Vec::new(),
            var_home: HashMap::new(),
        }
    }

    pub fn p(&self) -> PParam {
        self.p
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn passer_count(&self) -> usize {
        self.passers.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges_from(&self, p: PasserId) -> &[EdgeId] {
        &self.outgoing[p]
    }

    pub fn edge_endpoints(&self, e: EdgeId) -> (PasserId, PasserId) {
        (self.edges[e].from, self.edges[e].to)
    }

    pub fn edge_labels(&self, e: EdgeId) -> &[String] {
        &self.edges[e].labels
    }

    pub fn last_message(&self, e: EdgeId) -> Option<&LabeledPmf> {
        self.edges[e].last.as_ref()
    }

    pub fn queued(&self, e: EdgeId) -> bool {
        self.edges[e].queued
    }

    /// True when `e` carries a tree's sum outward while nothing about
    /// the sum has come back yet. Such a message spans the whole
    /// reachable-total range with nothing to trim against; schedulers
    /// may postpone it so likely evidence lands first and the request
    /// stays narrow. Eligibility is unaffected.
    pub fn bootstrap_sum(&self, e: EdgeId) -> bool {
        match &self.passers[self.edges[e].from].state {
            PasserState::Tree(t) => {
                t.sum_edge == Some(e) && self.edges[reverse(e)].last.is_none()
            }
            _ => false,
        }
    }

    pub fn set_queued(&mut self, e: EdgeId, q: bool) {
        self.edges[e].queued = q;
    }

    pub fn passer_name(&self, p: PasserId) -> &str {
        &self.passers[p].name
    }

    /// Total convolution scalar work done by the tree passers.
    pub fn conv_ops(&self) -> u64 {
        self.passers
            .iter()
            .map(|p| match &p.state {
                PasserState::Tree(t) => t.tree.conv_ops().scalar_ops,
                _ => 0,
            })
            .sum()
    }

    fn register_var(&mut self, label: &str, passer: PasserId, is_hyperedge: bool) {
        match self.var_home.get(label) {
            Some((_, true)) => {}
            Some((_, false)) if !is_hyperedge => {}
            _ => {
                self.var_home.insert(label.into(), (passer, is_hyperedge));
            }
        }
    }

    /// A table node with a joint prior; eligible ab initio on every
    /// edge its prior covers.
    pub fn add_table_node(&mut self, name: &str, prior: LabeledPmf) -> PasserId {
        let axes = prior.labels().to_vec();
        let id = self.push(Passer {
            name: name.into(),
            state: PasserState::Table(TableState {
                kind: TableKind::Hugin,
                axis_received: vec![0; axes.len()],
                axes,
                prior: Some(prior),
                cache: None,
            }),
        });
        for l in self.table_axes(id).to_vec() {
            self.register_var(&l, id, false);
        }
        id
    }

    /// The meeting point for one variable tuple.
    pub fn add_hyperedge(&mut self, name: &str, labels: Vec<String>) -> PasserId {
        self.hyperedge_inner(name, labels, None)
    }

    /// A hyperedge with a built-in prior over its tuple, which must
    /// name exactly the same variables.
    pub fn add_hyperedge_with_prior(
        &mut self,
        name: &str,
        labels: Vec<String>,
        prior: LabeledPmf,
    ) -> Result<PasserId> {
        let aligned = prior.align_to(&labels)?;
        Ok(self.hyperedge_inner(name, labels, Some(aligned)))
    }

    fn hyperedge_inner(
        &mut self,
        name: &str,
        labels: Vec<String>,
        prior: Option<LabeledPmf>,
    ) -> PasserId {
        let id = self.push(Passer {
            name: name.into(),
            state: PasserState::Table(TableState {
                kind: TableKind::Hyperedge,
                axis_received: vec![0; labels.len()],
                axes: labels,
                prior,
                cache: None,
            }),
        });
        for l in self.table_axes(id).to_vec() {
            self.register_var(&l, id, true);
        }
        id
    }

    /// Relabels supports by `factors` on the way out and by their
    /// reciprocals on the way back. Interpolation flags pick linear
    /// splitting over seeded dithering per direction.
    pub fn add_multiplier(
        &mut self,
        name: &str,
        factors: Vec<f64>,
        interpolate_forward: bool,
        interpolate_backward: bool,
    ) -> Result<PasserId> {
        if factors.is_empty() || factors.iter().any(|f| !f.is_finite() || *f == 0.0) {
            return Err(Error::Domain(format!(
                "multiplier factors must be finite and nonzero, got {factors:?}"
            )));
        }
        Ok(self.push(Passer {
            name: name.into(),
            state: PasserState::Multiplier(MultiplierState {
                factors,
                interpolate_forward,
                interpolate_backward,
                in_labels: Vec::new(),
                out_labels: Vec::new(),
                input_edge: None,
                output_edge: None,
            }),
        }))
    }

    /// An additive dependency: the wrapped tree's leaves are this
    /// passer's addend sides and its root is the sum side.
    pub fn add_conv_tree(&mut self, name: &str, leaf_count: usize, trim: TrimMode) -> Result<PasserId> {
        let tree = ConvTree::new(leaf_count, self.p, trim)?;
        Ok(self.push(Passer {
            name: name.into(),
            state: PasserState::Tree(TreeState {
                leaf_edges: vec![None; leaf_count],
                sum_edge: None,
                tree,
            }),
        }))
    }

    fn push(&mut self, p: Passer) -> PasserId {
        self.passers.push(p);
        self.outgoing.push(Vec::new());
        self.received.push(0);
        self.passers.len() - 1
    }

    fn table_axes(&self, p: PasserId) -> &[String] {
        match &self.passers[p].state {
            PasserState::Table(t) => &t.axes,
            _ => &[],
        }
    }

    fn new_edge_pair(&mut self, a: PasserId, b: PasserId, labels: Vec<String>) -> (EdgeId, EdgeId) {
        let ab = self.edges.len();
        self.edges.push(Edge {
            from: a,
            to: b,
            labels: labels.clone(),
            last: None,
            queued: false,
        });
        self.edges.push(Edge {
            from: b,
            to: a,
            labels,
            last: None,
            queued: false,
        });
        self.outgoing[a].push(ab);
        self.outgoing[b].push(ab + 1);
        (ab, ab + 1)
    }

    fn check_table_end(&self, p: PasserId, labels: &[String]) -> Result<()> {
        match &self.passers[p].state {
            PasserState::Table(t) => {
                match t.kind {
                    TableKind::Hyperedge => {
                        if labels.len() != t.axes.len()
                            || labels.iter().any(|l| !t.axes.contains(l))
                        {
                            return Err(Error::Build(format!(
                                "edges at hyperedge {} must carry exactly {:?}, got {:?}",
                                self.passers[p].name, t.axes, labels
                            )));
                        }
                    }
                    TableKind::Hugin => {
                        if labels.iter().any(|l| !t.axes.contains(l)) {
                            return Err(Error::Build(format!(
                                "edge labels {:?} are not covered by the prior of {}",
                                labels, self.passers[p].name
                            )));
                        }
                    }
                }
                Ok(())
            }
            _ => Err(Error::Build(format!(
                "{} takes edges only through its dedicated connectors",
                self.passers[p].name
            ))),
        }
    }

    /// Joins two table-style passers (table node or hyperedge).
    pub fn connect(&mut self, a: PasserId, b: PasserId, labels: Vec<String>) -> Result<(EdgeId, EdgeId)> {
        self.check_table_end(a, &labels)?;
        self.check_table_end(b, &labels)?;
        Ok(self.new_edge_pair(a, b, labels))
    }

    pub fn connect_tree_leaf(
        &mut self,
        tree: PasserId,
        leaf: usize,
        neighbor: PasserId,
        labels: Vec<String>,
    ) -> Result<(EdgeId, EdgeId)> {
        self.check_table_end(neighbor, &labels)?;
        let pair = self.new_edge_pair(tree, neighbor, labels);
        match &mut self.passers[tree].state {
            PasserState::Tree(t) => {
                let slot = t
                    .leaf_edges
                    .get_mut(leaf)
                    .ok_or_else(|| Error::Topology(format!("no leaf {leaf} on this tree")))?;
                if slot.is_some() {
                    return Err(Error::Build(format!("leaf {leaf} is already connected")));
                }
                *slot = Some(pair.0);
            }
            _ => return Err(Error::Topology("not a tree passer".into())),
        }
        Ok(pair)
    }

    pub fn connect_tree_sum(
        &mut self,
        tree: PasserId,
        neighbor: PasserId,
        labels: Vec<String>,
    ) -> Result<(EdgeId, EdgeId)> {
        self.check_table_end(neighbor, &labels)?;
        let pair = self.new_edge_pair(tree, neighbor, labels);
        match &mut self.passers[tree].state {
            PasserState::Tree(t) => {
                if t.sum_edge.is_some() {
                    return Err(Error::Build("the sum side is already connected".into()));
                }
                t.sum_edge = Some(pair.0);
            }
            _ => return Err(Error::Topology("not a tree passer".into())),
        }
        Ok(pair)
    }

    pub fn connect_multiplier_input(
        &mut self,
        mult: PasserId,
        neighbor: PasserId,
        labels: Vec<String>,
    ) -> Result<(EdgeId, EdgeId)> {
        self.connect_multiplier_side(mult, neighbor, labels, true)
    }

    pub fn connect_multiplier_output(
        &mut self,
        mult: PasserId,
        neighbor: PasserId,
        labels: Vec<String>,
    ) -> Result<(EdgeId, EdgeId)> {
        self.connect_multiplier_side(mult, neighbor, labels, false)
    }

    fn connect_multiplier_side(
        &mut self,
        mult: PasserId,
        neighbor: PasserId,
        labels: Vec<String>,
        input: bool,
    ) -> Result<(EdgeId, EdgeId)> {
        self.check_table_end(neighbor, &labels)?;
        match &self.passers[mult].state {
            PasserState::Multiplier(m) => {
                if labels.len() != m.factors.len() {
                    return Err(Error::Arity(format!(
                        "{} labels for {} factors",
                        labels.len(),
                        m.factors.len()
                    )));
                }
                if (input && m.input_edge.is_some()) || (!input && m.output_edge.is_some()) {
                    return Err(Error::Build("that multiplier side is already connected".into()));
                }
            }
            _ => return Err(Error::Topology("not a multiplier passer".into())),
        }
        let pair = self.new_edge_pair(mult, neighbor, labels.clone());
        if let PasserState::Multiplier(m) = &mut self.passers[mult].state {
            if input {
                m.input_edge = Some(pair.0);
                m.in_labels = labels;
            } else {
                m.output_edge = Some(pair.0);
                m.out_labels = labels;
            }
        }
        Ok(pair)
    }

    fn incoming_degree(&self, p: PasserId) -> usize {
        self.outgoing[p].len()
    }

    /// Whether the source passer of `e` can produce a message for it.
    ///
    /// The generic rule counts received incoming edges: all received is
    /// always enough, and all-but-one is enough exactly when the hole
    /// is this edge's own reverse. Hyperedges instead ask whether the
    /// labels received so far cover the edge; table nodes are also
    /// eligible ab initio wherever their prior covers the edge. A sum
    /// tree sending toward an addend trims against every addend's
    /// support box, its own included, so there the hole allowance
    /// drops and the full house must be in.
    pub fn ready_to_send(&self, e: EdgeId) -> Result<bool> {
        if e >= self.edges.len() {
            return Err(Error::Topology(format!("no edge {e}")));
        }
        let from = self.edges[e].from;
        let generic = {
            let n = self.incoming_degree(from);
            let c = self.received[from];
            c == n || (c + 1 == n && self.edges[reverse(e)].last.is_none())
        };
        Ok(match &self.passers[from].state {
            PasserState::Tree(t) => {
                if t.sum_edge == Some(e) {
                    generic
                } else {
                    self.received[from] == self.incoming_degree(from)
                }
            }
            PasserState::Table(t) => {
                let covered = |labels: &[String], have: &dyn Fn(usize) -> bool| {
                    labels.iter().all(|l| {
                        t.axes.iter().position(|a| a == l).map(&have).unwrap_or(false)
                    })
                };
                let prior_covers = t.prior.is_some()
                    && covered(&self.edges[e].labels, &|_| true);
                match t.kind {
                    TableKind::Hugin => generic || prior_covers,
                    TableKind::Hyperedge => {
                        prior_covers
                            || covered(&self.edges[e].labels, &|a| t.axis_received[a] > 0)
                    }
                }
            }
            _ => generic,
        })
    }

    /// Computes the message for `e` from its source passer's current
    /// state. Does not deliver it.
    pub fn compute_message(&mut self, e: EdgeId) -> Result<LabeledPmf> {
        if !self.ready_to_send(e)? {
            return Err(Error::NotReady(format!(
                "{} has not received enough to send along edge {e}",
                self.passers[self.edges[e].from].name
            )));
        }
        let from = self.edges[e].from;
        let labels = self.edges[e].labels.clone();
        let msg = match &self.passers[from].state {
            PasserState::Table(_) => {
                let out = self.table_product(from, Some(e))?;
                out.marginalize_to(&labels, self.p)?
            }
            PasserState::Multiplier(m) => {
                let m = m.clone();
                self.multiplier_message(from, &m, e)?
            }
            PasserState::Tree(_) => {
                let pmf = self.tree_message(from, e)?;
                LabeledPmf::new(labels.clone(), pmf)?
            }
        };
        let norm = msg.pmf().normalize().map_err(|_| {
            Error::Contradiction(format!(
                "the message from {} along {:?} carries no mass",
                self.passers[from].name, labels
            ))
        })?;
        LabeledPmf::new(msg.labels().to_vec(), norm)
    }

    /// The product of the prior and received messages at a table-style
    /// passer, leaving out the message received along `reverse(skip)`.
    fn table_product(&self, p: PasserId, skip: Option<EdgeId>) -> Result<LabeledPmf> {
        let t = match &self.passers[p].state {
            PasserState::Table(t) => t,
            _ => return Err(Error::Topology("not a table passer".into())),
        };
        let excluded = skip.map(reverse);
        let left = match (&t.cache, excluded.and_then(|x| self.edges[x].last.as_ref())) {
            (Some(cache), Some(out)) => Some(self.divide_out(t, cache, Some(out))?),
            (Some(cache), None) => Some(self.divide_out(t, cache, None)?),
            (None, _) => None,
        };
        match (left, &t.prior) {
            (Some(l), Some(prior)) => {
                let combined = l.multiply(prior).map_err(|_| {
                    Error::Contradiction(format!(
                        "messages at {} do not overlap its prior",
                        self.passers[p].name
                    ))
                })?;
                Ok(combined)
            }
            (Some(l), None) => Ok(l),
            (None, Some(prior)) => Ok(prior.clone()),
            (None, None) => Err(Error::NotReady(format!(
                "{} has neither prior nor messages",
                self.passers[p].name
            ))),
        }
    }

    /// Reconstructs the leave-one-out product from the zero-safe cache.
    fn divide_out(
        &self,
        t: &TableState,
        cache: &ProductCache,
        exclude: Option<&LabeledPmf>,
    ) -> Result<LabeledPmf> {
        let exclude = match exclude {
            Some(m) => Some((m.axis_positions_in(&t.axes)?, m)),
            None => None,
        };
        let extents = cache.box_.extents();
        let mut out = vec![0.0f64; cache.nonzero.len()];
        let mut idx = vec![0usize; cache.box_.rank()];
        let mut flat = 0usize;
        loop {
            let mut zeros = cache.zeros.data()[flat];
            let mut val = cache.nonzero.data()[flat];
            if let Some((positions, msg)) = &exclude {
                let label: Vec<i64> = positions
                    .iter()
                    .map(|&a| cache.box_.lo()[a] + idx[a] as i64)
                    .collect();
                let v = msg.pmf().at_label(&label);
                if v == 0.0 {
                    zeros -= 1;
                } else {
                    val /= v;
                }
            }
            out[flat] = if zeros > 0 { 0.0 } else { val };
            flat += 1;
            if !advance(&mut idx, &extents) {
                break;
            }
        }
        LabeledPmf::new(
            t.axes.clone(),
            Pmf::new(cache.box_.lo().to_vec(), Tensor::new(extents, out)?)?,
        )
    }

    /// Rebuilds a table passer's product cache from the incident stored
    /// messages.
    fn rebuild_cache(&mut self, p: PasserId) -> Result<()> {
        let (axes, anchor) = match &self.passers[p].state {
            PasserState::Table(t) => (
                t.axes.clone(),
                t.prior.as_ref().map(|pr| pr.pmf().support_box()),
            ),
            _ => return Ok(()),
        };
        let msgs: Vec<(Vec<usize>, LabeledPmf)> = self.outgoing[p]
            .iter()
            .filter_map(|&out| self.edges[reverse(out)].last.clone())
            .map(|m| Ok((m.axis_positions_in(&axes)?, m)))
            .collect::<Result<_>>()?;
        let cache = if msgs.is_empty() {
            None
        } else {
            // The lattice covers the hull of the message boxes (per
            // covered axis), clipped to the prior's box when there is
            // one; outside it the product is zero anyway.
            let mut lo = vec![i64::MAX; axes.len()];
            let mut hi = vec![i64::MIN; axes.len()];
            for (positions, m) in &msgs {
                let b = m.pmf().support_box();
                for (j, &a) in positions.iter().enumerate() {
                    lo[a] = lo[a].min(b.lo()[j]);
                    hi[a] = hi[a].max(b.hi()[j]);
                }
            }
            if let Some(ab) = &anchor {
                for a in 0..axes.len() {
                    if lo[a] > hi[a] {
                        lo[a] = ab.lo()[a];
                        hi[a] = ab.hi()[a];
                    } else {
                        lo[a] = lo[a].max(ab.lo()[a]);
                        hi[a] = hi[a].min(ab.hi()[a]);
                    }
                }
            }
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Err(Error::Contradiction(format!(
                    "messages at {} share no support",
                    self.passers[p].name
                )));
            }
            let box_ = SupportBox::new(lo, hi)?;
            let extents = box_.extents();
            let len: usize = extents.iter().product();
            let mut nonzero = vec![1.0f64; len];
            let mut zeros = vec![0u32; len];
            let mut idx = vec![0usize; axes.len()];
            let mut flat = 0usize;
            loop {
                for (positions, m) in &msgs {
                    let label: Vec<i64> = positions
                        .iter()
                        .map(|&a| box_.lo()[a] + idx[a] as i64)
                        .collect();
                    let v = m.pmf().at_label(&label);
                    if v == 0.0 {
                        zeros[flat] += 1;
                    } else {
                        nonzero[flat] *= v;
                    }
                }
                flat += 1;
                if !advance(&mut idx, &extents) {
                    break;
                }
            }
            Some(ProductCache {
                nonzero: Tensor::new(extents.clone(), nonzero)?,
                zeros: Tensor::new(extents, zeros)?,
                box_,
            })
        };
        if let PasserState::Table(t) = &mut self.passers[p].state {
            t.cache = cache;
        }
        Ok(())
    }

    fn multiplier_message(
        &mut self,
        p: PasserId,
        m: &MultiplierState,
        e: EdgeId,
    ) -> Result<LabeledPmf> {
        let forward = Some(e) == m.output_edge;
        if !forward && Some(e) != m.input_edge {
            return Err(Error::Topology(format!(
                "edge {e} is not incident to multiplier {}",
                self.passers[p].name
            )));
        }
        let (src_edge, src_labels, dst_labels) = if forward {
            (m.input_edge, &m.in_labels, &m.out_labels)
        } else {
            (m.output_edge, &m.out_labels, &m.in_labels)
        };
        let src = src_edge
            .and_then(|s| self.edges[reverse(s)].last.as_ref())
            .ok_or_else(|| Error::NotReady("nothing received on the opposite side".into()))?;
        let aligned = src.align_to(src_labels)?;
        let factors: Vec<f64> = if forward {
            m.factors.clone()
        } else {
            m.factors.iter().map(|f| 1.0 / f).collect()
        };
        let interpolate = if forward {
            m.interpolate_forward
        } else {
            m.interpolate_backward
        };
        let placement = if interpolate {
            ScalePlacement::Interpolate
        } else {
            ScalePlacement::Dither {
                seed: self.seed ^ (p as u64) << 1 ^ u64::from(forward),
            }
        };
        let scaled = aligned.pmf().scale_axes(&factors, placement, self.p)?;
        LabeledPmf::new(dst_labels.clone(), scaled)
    }

    fn tree_message(&mut self, p: PasserId, e: EdgeId) -> Result<Pmf> {
        let slot = match &self.passers[p].state {
            PasserState::Tree(t) => {
                if t.sum_edge == Some(e) {
                    None
                } else {
                    match t.leaf_edges.iter().position(|&le| le == Some(e)) {
                        Some(i) => Some(i),
                        None => {
                            return Err(Error::Topology(format!(
                                "edge {e} is not incident to tree {}",
                                self.passers[p].name
                            )))
                        }
                    }
                }
            }
            _ => return Err(Error::Topology("not a tree passer".into())),
        };
        match (&mut self.passers[p].state, slot) {
            (PasserState::Tree(t), None) => t.tree.request_sum_prior(),
            (PasserState::Tree(t), Some(i)) => t.tree.request_leaf_likelihood(i),
            _ => unreachable!(),
        }
    }

    /// Delivers `msg` along `e`: mixes with the previous message under
    /// `dampening` (the weight kept on the old one), normalizes, stores
    /// it, and updates the destination passer. Returns the largest
    /// absolute deviation between the fresh message and the previous
    /// one: the scheduler's convergence signal.
    pub fn deliver(&mut self, e: EdgeId, msg: LabeledPmf, dampening: f64) -> Result<f64> {
        if e >= self.edges.len() {
            return Err(Error::Topology(format!("no edge {e}")));
        }
        if !(0.0..1.0).contains(&dampening) {
            return Err(Error::Domain(format!(
                "dampening must lie in [0, 1), got {dampening}"
            )));
        }
        {
            let want = &self.edges[e].labels;
            if msg.labels().len() != want.len() || msg.labels().iter().any(|l| !want.contains(l)) {
                return Err(Error::Label(format!(
                    "message labels {:?} do not match edge labels {want:?}",
                    msg.labels()
                )));
            }
        }
        let msg = msg.align_to(&self.edges[e].labels.clone())?;
        let msg = LabeledPmf::new(
            msg.labels().to_vec(),
            msg.pmf().normalize().map_err(|_| {
                Error::Contradiction("a delivered message carries no mass".into())
            })?,
        )?;
        let (deviation, stored) = match &self.edges[e].last {
            Some(old) => {
                let dev = message_mse(&msg, old)?;
                let mixed = if dampening == 0.0 {
                    msg
                } else {
                    blend(old, &msg, dampening)?
                };
                (dev, mixed)
            }
            None => (f64::INFINITY, msg),
        };
        let first = self.edges[e].last.is_none();
        let to = self.edges[e].to;
        self.edges[e].last = Some(stored.clone());
        if first {
            self.received[to] += 1;
        }
        match &mut self.passers[to].state {
            PasserState::Table(t) => {
                if first {
                    for l in stored.labels() {
                        if let Some(a) = t.axes.iter().position(|x| x == l) {
                            t.axis_received[a] += 1;
                        }
                    }
                }
                self.rebuild_cache(to)?;
            }
            PasserState::Tree(t) => {
                if t.sum_edge == Some(reverse(e)) {
                    t.tree.receive_root_likelihood(stored.pmf().clone())?;
                } else if let Some(i) =
                    t.leaf_edges.iter().position(|&le| le == Some(reverse(e)))
                {
                    let t = match &mut self.passers[to].state {
                        PasserState::Tree(t) => t,
                        _ => unreachable!(),
                    };
                    t.tree.receive_leaf_prior(i, stored.pmf().clone())?;
                } else {
                    return Err(Error::Topology(format!(
                        "edge {e} is not a tree slot of {}",
                        self.passers[to].name
                    )));
                }
            }
            PasserState::Multiplier(_) => {}
        }
        Ok(deviation)
    }

    /// The normalized belief for one variable, read at its home passer:
    /// the product of the prior there and every received message,
    /// marginalized to the variable.
    pub fn posterior(&self, var: &str) -> Result<LabeledPmf> {
        let (home, _) = *self
            .var_home
            .get(var)
            .ok_or_else(|| Error::Label(format!("unknown variable {var}")))?;
        let full = self.table_product(home, None)?;
        if !full.labels().iter().any(|l| l == var) {
            return Err(Error::NotReady(format!(
                "nothing received about {var} yet"
            )));
        }
        let marg = full.marginalize_to(&[var.to_string()], self.p)?;
        let norm = marg.pmf().normalize().map_err(|_| {
            Error::Contradiction(format!("the belief for {var} carries no mass"))
        })?;
        LabeledPmf::new(vec![var.to_string()], norm)
    }

    /// All variables with a registered home, sorted.
    pub fn variables(&self) -> Vec<String> {
        let mut v: Vec<String> = self.var_home.keys().cloned().collect();
        v.sort();
        v
    }

    /// Graphviz rendering; passer kinds map to node shapes.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph model {\n");
        for (i, p) in self.passers.iter().enumerate() {
            let shape = match &p.state {
                PasserState::Table(t) if t.kind == TableKind::Hugin => "box",
                PasserState::Table(_) => "square",
                PasserState::Multiplier(_) => "diamond",
                PasserState::Tree(_) => "triangle",
            };
            let _ = writeln!(out, "  n{i} [label=\"{}\", shape={shape}];", p.name);
        }
        for (e, edge) in self.edges.iter().enumerate().step_by(2) {
            let _ = writeln!(
                out,
                "  n{} -> n{} [label=\"{}\", dir=both];",
                edge.from,
                edge.to,
                self.edges[e].labels.join(",")
            );
        }
        out.push_str("}\n");
        out
    }
}

/// `keep * old + (1 - keep) * fresh` over the union of supports, then
/// normalized.
fn blend(old: &LabeledPmf, new: &LabeledPmf, keep: f64) -> Result<LabeledPmf> {
    let new = new.align_to(old.labels())?;
    let hull = old.pmf().support_box().hull(&new.pmf().support_box())?;
    let extents = hull.extents();
    let mut data = vec![0.0f64; extents.iter().product()];
    let mut idx = vec![0usize; hull.rank()];
    let mut flat = 0usize;
    loop {
        let label: Vec<i64> = hull.lo().iter().zip(&idx).map(|(l, &i)| l + i as i64).collect();
        data[flat] = keep * old.pmf().at_label(&label) + (1.0 - keep) * new.pmf().at_label(&label);
        flat += 1;
        if !advance(&mut idx, &extents) {
            break;
        }
    }
    let pmf = Pmf::new(hull.lo().to_vec(), Tensor::new(extents, data)?)?.normalize()?;
    LabeledPmf::new(old.labels().to_vec(), pmf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles;

    fn upmf(origin: i64, values: &[f64]) -> Pmf {
        Pmf::from_values(vec![origin], vec![values.len()], values.to_vec()).unwrap()
    }

    fn labeled(name: &str, origin: i64, values: &[f64]) -> LabeledPmf {
        LabeledPmf::new(vec![name.into()], upmf(origin, values)).unwrap()
    }

    #[test]
    fn counting_rule_matches_the_contract_on_a_tree_passer() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let hx = g.add_hyperedge("X", vec!["x".into()]);
        let hy = g.add_hyperedge("Y", vec!["y".into()]);
        let hs = g.add_hyperedge("S", vec!["s".into()]);
        let tree = g.add_conv_tree("sum", 2, TrimMode::Trimmed).unwrap();
        let (tx, xt) = g.connect_tree_leaf(tree, 0, hx, vec!["x".into()]).unwrap();
        let (ty, yt) = g.connect_tree_leaf(tree, 1, hy, vec!["y".into()]).unwrap();
        let (ts, st) = g.connect_tree_sum(tree, hs, vec!["s".into()]).unwrap();

        // nothing received: no outgoing tree edge is ready
        for e in [tx, ty, ts] {
            assert!(!g.ready_to_send(e).unwrap());
        }
        // two of three received, not including the reverse of ts
        g.deliver(xt, labeled("x", 0, &[0.5, 0.5]), 0.0).unwrap();
        g.deliver(yt, labeled("y", 0, &[0.5, 0.5]), 0.0).unwrap();
        assert!(g.ready_to_send(ts).unwrap());
        // two of three received, including the reverse of tx
        assert!(!g.ready_to_send(tx).unwrap());
        assert!(!g.ready_to_send(ty).unwrap());
        g.deliver(st, labeled("s", 1, &[1.0]), 0.0).unwrap();
        for e in [tx, ty, ts] {
            assert!(g.ready_to_send(e).unwrap());
        }
    }

    #[test]
    fn hyperedge_is_ready_once_any_message_covers_its_variable() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g.add_hyperedge("X", vec!["x".into()]);
        let a = g.add_table_node("prior_a", labeled("x", 0, &[0.3, 0.7]));
        let b = g.add_table_node("prior_b", labeled("x", 0, &[0.6, 0.4]));
        let (ah, _) = g.connect(a, h, vec!["x".into()]).unwrap();
        let (hb, _) = g.connect(h, b, vec!["x".into()]).unwrap();
        let (ha, _) = (reverse(ah), ());
        assert!(!g.ready_to_send(hb).unwrap());
        assert!(!g.ready_to_send(ha).unwrap());
        // table nodes are ready ab initio
        assert!(g.ready_to_send(ah).unwrap());
        let m = g.compute_message(ah).unwrap();
        g.deliver(ah, m, 0.0).unwrap();
        // one message in: every outgoing hyperedge edge is ready
        assert!(g.ready_to_send(hb).unwrap());
        assert!(g.ready_to_send(ha).unwrap());
    }

    #[test]
    fn counting_shortcut_agrees_with_explicit_scanning() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(77);
        for _ in 0..30 {
            let mut g = InferenceGraph::new(PParam::one(), 0);
            let h = g.add_hyperedge("X", vec!["x".into()]);
            let deg = rng.gen_range(1..5);
            let mut into_h = Vec::new();
            for i in 0..deg {
                let t = g.add_table_node(&format!("t{i}"), labeled("x", 0, &[0.5, 0.5]));
                let (th, _) = g.connect(t, h, vec!["x".into()]).unwrap();
                into_h.push(th);
            }
            let mut delivered = vec![false; deg];
            for _ in 0..rng.gen_range(0..=deg) {
                let i = rng.gen_range(0..deg);
                g.deliver(into_h[i], labeled("x", 0, &[0.4, 0.6]), 0.0).unwrap();
                delivered[i] = true;
            }
            for (i, &th) in into_h.iter().enumerate() {
                // scan: the hyperedge's received labels cover x iff any
                // incoming edge holds a message
                let any = delivered.iter().any(|&d| d);
                assert_eq!(g.ready_to_send(reverse(th)).unwrap(), any);
                // scan for the table node: prior covers x, so always
                // ready; and the generic count rule for its single edge
                let n = 1;
                let c = usize::from(delivered[i]);
                let generic = c == n || (c + 1 == n && g.last_message(reverse(th)).is_none());
                assert!(g.ready_to_send(th).unwrap());
                let _ = generic;
            }
        }
    }

    #[test]
    fn divide_out_equals_leave_one_out_from_scratch_with_zeros() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g.add_hyperedge("X", vec!["x".into()]);
        let senders: Vec<_> = (0..3)
            .map(|i| g.add_table_node(&format!("s{i}"), labeled("x", 0, &[0.5, 0.5, 0.5])))
            .collect();
        let msgs = [
            labeled("x", 0, &[0.2, 0.5, 0.3]),
            labeled("x", 0, &[0.5, 0.0, 0.5]),
            labeled("x", 0, &[0.1, 0.6, 0.3]),
        ];
        let mut in_edges = Vec::new();
        for (s, m) in senders.iter().zip(&msgs) {
            let (sh, _) = g.connect(*s, h, vec!["x".into()]).unwrap();
            g.deliver(sh, m.clone(), 0.0).unwrap();
            in_edges.push(sh);
        }
        // message toward sender 1 leaves out the zero-bearing message:
        // normalize(m0 * m2)
        let out = g.compute_message(reverse(in_edges[1])).unwrap();
        let want_raw = [0.2 * 0.1, 0.5 * 0.6, 0.3 * 0.3];
        let total: f64 = want_raw.iter().sum();
        for (i, w) in want_raw.iter().enumerate() {
            assert!((out.pmf().at_label(&[i as i64]) - w / total).abs() < 1e-12);
        }
        // and toward sender 0, the zero passes through the product
        let out0 = g.compute_message(reverse(in_edges[0])).unwrap();
        assert_eq!(out0.pmf().at_label(&[1]), 0.0);
    }

    #[test]
    fn delivery_mixes_under_dampening() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g.add_hyperedge("X", vec!["x".into()]);
        let t = g.add_table_node("t", labeled("x", 0, &[0.5, 0.5]));
        let (th, _) = g.connect(t, h, vec!["x".into()]).unwrap();
        // first message stores as-is even with heavy dampening
        g.deliver(th, labeled("x", 0, &[1.0, 0.0]), 0.9).unwrap();
        assert_eq!(g.last_message(th).unwrap().pmf().at_label(&[0]), 1.0);
        // half-and-half mix
        let dev = g.deliver(th, labeled("x", 0, &[0.0, 1.0]), 0.5).unwrap();
        assert!((dev - 1.0).abs() < 1e-12, "MSE of [1,0] vs [0,1] is 1");
        let m = g.last_message(th).unwrap();
        assert!((m.pmf().at_label(&[0]) - 0.5).abs() < 1e-12);
        assert!((m.pmf().at_label(&[1]) - 0.5).abs() < 1e-12);
        // plain replacement at zero dampening
        g.deliver(th, labeled("x", 0, &[0.25, 0.75]), 0.0).unwrap();
        assert!((g.last_message(th).unwrap().pmf().at_label(&[1]) - 0.75).abs() < 1e-12);
    }

    #[test]
    fn multiplier_scales_forward_and_unscales_backward() {
        let mut g = InferenceGraph::new(PParam::one(), 9);
        let hk = g.add_hyperedge("K", vec!["k".into()]);
        let hm = g.add_hyperedge("Km", vec!["km".into()]);
        let mult = g.add_multiplier("mass", vec![128.1723], true, true).unwrap();
        let (mk, km_in) = g.connect_multiplier_input(mult, hk, vec!["k".into()]).unwrap();
        let (mo, om) = g.connect_multiplier_output(mult, hm, vec!["km".into()]).unwrap();

        g.deliver(km_in, labeled("k", 1, &[1.0]), 0.0).unwrap();
        let fwd = g.compute_message(mo).unwrap();
        assert_eq!(fwd.labels(), ["km".to_string()]);
        assert!((fwd.pmf().at_label(&[128]) - (1.0 - 0.1723)).abs() < 1e-9);
        assert!((fwd.pmf().at_label(&[129]) - 0.1723).abs() < 1e-9);

        // integer factor round trip is exact
        let mut g2 = InferenceGraph::new(PParam::one(), 9);
        let ha = g2.add_hyperedge("A", vec!["a".into()]);
        let hb = g2.add_hyperedge("B", vec!["b".into()]);
        let m3 = g2.add_multiplier("x3", vec![3.0], true, true).unwrap();
        let (_, a_in) = g2.connect_multiplier_input(m3, ha, vec!["a".into()]).unwrap();
        let (m3b, b_in) = g2.connect_multiplier_output(m3, hb, vec!["b".into()]).unwrap();
        g2.deliver(a_in, labeled("a", 2, &[1.0]), 0.0).unwrap();
        let f = g2.compute_message(m3b).unwrap();
        assert_eq!(f.pmf().at_label(&[6]), 1.0);
        g2.deliver(b_in, labeled("b", 6, &[1.0]), 0.0).unwrap();
        let back = g2.compute_message(g2.edges_from(m3)[0]).unwrap();
        assert_eq!(back.labels(), ["a".to_string()]);
        assert_eq!(back.pmf().at_label(&[2]), 1.0);
        let _ = (mk, om);
    }

    #[test]
    fn posteriors_combine_prior_and_messages() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g
            .add_hyperedge_with_prior("X", vec!["x".into()], labeled("x", 0, &[0.2, 0.8]))
            .unwrap();
        // prior only
        let post = g.posterior("x").unwrap();
        assert!((post.pmf().at_label(&[1]) - 0.8).abs() < 1e-12);
        // two consistent point messages pin the value
        let t1 = g.add_table_node("t1", labeled("x", 0, &[0.5, 0.5]));
        let t2 = g.add_table_node("t2", labeled("x", 0, &[0.5, 0.5]));
        let (e1, _) = g.connect(t1, h, vec!["x".into()]).unwrap();
        let (e2, _) = g.connect(t2, h, vec!["x".into()]).unwrap();
        g.deliver(e1, labeled("x", 1, &[1.0]), 0.0).unwrap();
        g.deliver(e2, labeled("x", 1, &[1.0]), 0.0).unwrap();
        let post = g.posterior("x").unwrap();
        assert_eq!(post.pmf().at_label(&[1]), 1.0);
        assert!(g.posterior("unknown").is_err());
    }

    #[test]
    fn additive_model_posterior_matches_enumeration() {
        // two fair coins, total observed to be 1
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let hx = g.add_hyperedge("X", vec!["x".into()]);
        let hy = g.add_hyperedge("Y", vec!["y".into()]);
        let hs = g.add_hyperedge("S", vec!["s".into()]);
        let px = g.add_table_node("px", labeled("x", 0, &[0.5, 0.5]));
        let py = g.add_table_node("py", labeled("y", 0, &[0.5, 0.5]));
        let ps = g.add_table_node("ps", labeled("s", 1, &[1.0]));
        let tree = g.add_conv_tree("sum", 2, TrimMode::Trimmed).unwrap();
        let (pxh, _) = g.connect(px, hx, vec!["x".into()]).unwrap();
        let (pyh, _) = g.connect(py, hy, vec!["y".into()]).unwrap();
        let (psh, _) = g.connect(ps, hs, vec!["s".into()]).unwrap();
        let (tx, xt) = g.connect_tree_leaf(tree, 0, hx, vec!["x".into()]).unwrap();
        let (ty, yt) = g.connect_tree_leaf(tree, 1, hy, vec!["y".into()]).unwrap();
        let (ts, st) = g.connect_tree_sum(tree, hs, vec!["s".into()]).unwrap();

        // hand-run the schedule: priors to hyperedges, then into the
        // tree, then back out
        for e in [pxh, pyh, psh] {
            let m = g.compute_message(e).unwrap();
            g.deliver(e, m, 0.0).unwrap();
        }
        for e in [xt, yt, st] {
            let m = g.compute_message(e).unwrap();
            g.deliver(e, m, 0.0).unwrap();
        }
        for e in [tx, ty, ts] {
            let m = g.compute_message(e).unwrap();
            g.deliver(e, m, 0.0).unwrap();
        }
        let model = oracles::JointModel::new()
            .variable("x", [0, 1])
            .variable("y", [0, 1])
            .variable("s", [0, 1, 2])
            .factor(labeled("x", 0, &[0.5, 0.5]))
            .factor(labeled("y", 0, &[0.5, 0.5]))
            .factor(labeled("s", 1, &[1.0]))
            .sum(&["x", "y"], "s");
        let want = oracles::enumerate_marginals(&model, PParam::one()).unwrap();
        for (var, w) in ["x", "y", "s"].iter().zip(&want) {
            let got = g.posterior(var).unwrap();
            let b = w.pmf().support_box();
            for l in b.lo()[0]..=b.hi()[0] {
                assert!(
                    (got.pmf().at_label(&[l]) - w.pmf().at_label(&[l])).abs() < 1e-12,
                    "{var} at {l}"
                );
            }
        }
    }

    #[test]
    fn contradictory_point_messages_are_reported() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g.add_hyperedge("X", vec!["x".into()]);
        let t1 = g.add_table_node("t1", labeled("x", 0, &[0.5, 0.5]));
        let t2 = g.add_table_node("t2", labeled("x", 0, &[0.5, 0.5]));
        let (e1, _) = g.connect(t1, h, vec!["x".into()]).unwrap();
        let (e2, _) = g.connect(t2, h, vec!["x".into()]).unwrap();
        g.deliver(e1, labeled("x", 0, &[1.0, 0.0]), 0.0).unwrap();
        g.deliver(e2, labeled("x", 0, &[0.0, 1.0]), 0.0).unwrap();
        assert!(matches!(g.posterior("x"), Err(Error::Contradiction(_))));
    }

    #[test]
    fn dot_export_names_every_passer_with_its_shape() {
        let mut g = InferenceGraph::new(PParam::one(), 0);
        let h = g.add_hyperedge("X", vec!["x".into()]);
        let t = g.add_table_node("prior", labeled("x", 0, &[0.5, 0.5]));
        let _ = g.connect(t, h, vec!["x".into()]).unwrap();
        let m = g.add_multiplier("scale", vec![2.0], true, true).unwrap();
        let _ = g.connect_multiplier_input(m, h, vec!["x".into()]).unwrap();
        let _tree = g.add_conv_tree("sum", 2, TrimMode::Trimmed).unwrap();
        let dot = g.to_dot();
        assert!(dot.contains("shape=square"));
        assert!(dot.contains("shape=box"));
        assert!(dot.contains("shape=diamond"));
        assert!(dot.contains("shape=triangle"));
        assert!(dot.contains("label=\"x\""));
    }
}
