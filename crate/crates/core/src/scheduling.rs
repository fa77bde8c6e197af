//! Message sequencing and convergence tracking.
//!
//! Four schedules over an [`InferenceGraph`]:
//!
//! - [`run_fifo`]: flooding with a queue, messages computed when
//!   dequeued so they see the freshest state,
//! - [`run_priority`]: eager residual scheduling, always firing the
//!   edge whose pending message moved the most,
//! - [`run_random_subtree`]: repeated sweeps over randomly drawn
//!   spanning subtrees, two per round by default,
//! - [`run_chain`]: one forward and one backward pass over a path
//!   graph, exactly two messages per adjacent pair.
//!
//! All runners stop when no eligible edge would move its stored message
//! by more than `epsilon` (mean squared deviation), or at the message
//! cap, whichever comes first.

use std::collections::{BinaryHeap, VecDeque};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::{reverse, EdgeId, InferenceGraph, PasserId};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceConfig {
    /// Mean squared deviation below which a message is considered
    /// settled.
    pub epsilon: f64,
    pub max_messages: u64,
    /// Weight kept on the previous message when storing a new one.
    pub dampening: f64,
    /// Spanning subtrees drawn per round by the subtree scheduler.
    pub subtree_count: usize,
}

impl Default for ConvergenceConfig {
    fn default() -> Self {
        ConvergenceConfig {
            epsilon: 1e-8,
            max_messages: 1_000_000,
            dampening: 0.0,
            subtree_count: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub messages_passed: u64,
    pub converged: bool,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    Fifo,
    Priority,
    RandomSubtree,
    Chain,
}

pub fn run(scheduler: Scheduler, g: &mut InferenceGraph, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    match scheduler {
        Scheduler::Fifo => run_fifo(g, cfg),
        Scheduler::Priority => run_priority(g, cfg),
        Scheduler::RandomSubtree => run_random_subtree(g, cfg),
        Scheduler::Chain => run_chain(g, cfg),
    }
}

/// Flooding schedule. Every edge starts queued; popping an edge that is
/// not eligible just drops it (a later receive at its source requeues
/// it). A delivery that moves the stored message requeues the other
/// edges leaving the receiving passer; the reverse edge is exempt since
/// its leave-one-out product ignores what just arrived.
pub fn run_fifo(g: &mut InferenceGraph, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let mut queue: VecDeque<EdgeId> = VecDeque::new();
    for e in 0..g.edge_count() {
        queue.push_back(e);
        g.set_queued(e, true);
    }
    let mut messages = 0u64;
    let mut capped = false;
    while let Some(e) = queue.pop_front() {
        g.set_queued(e, false);
        if !g.ready_to_send(e)? {
            continue;
        }
        // Hold a tree's first outgoing sum back while any other edge
        // can still make progress: once evidence reaches the sum side,
        // the request is trimmed instead of spanning every reachable
        // total (and every cache along the way). Without such an edge
        // it goes out untrimmed, so nothing deadlocks.
        if g.bootstrap_sum(e) {
            let mut other_ready = false;
            for &o in &queue {
                if !g.bootstrap_sum(o) && g.ready_to_send(o)? {
                    other_ready = true;
                    break;
                }
            }
            if other_ready {
                queue.push_back(e);
                g.set_queued(e, true);
                continue;
            }
        }
        if messages >= cfg.max_messages {
            capped = true;
            break;
        }
        let msg = g.compute_message(e)?;
        let deviation = g.deliver(e, msg, cfg.dampening)?;
        messages += 1;
        if std::env::var_os("ADDBP_TRACE").is_some() {
            let (f, t) = g.edge_endpoints(e);
            eprintln!(
                "fifo #{messages} e{e} {} -> {} dev={deviation:.3e}",
                g.passer_name(f),
                g.passer_name(t)
            );
        }
        if deviation <= cfg.epsilon {
            continue;
        }
        let (_, to) = g.edge_endpoints(e);
        for o in g.edges_from(to).to_vec() {
            if o != reverse(e) && !g.queued(o) {
                queue.push_back(o);
                g.set_queued(o, true);
            }
        }
    }
    Ok(ConvergenceReport {
        messages_passed: messages,
        converged: !capped,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// A pending message with its residual; ordered so the heap pops the
/// largest deviation first, ties broken by insertion order.
struct Pending {
    deviation: f64,
    stamp: u64,
    edge: EdgeId,
    version: u64,
    msg: crate::pmf::LabeledPmf,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == std::cmp::Ordering::Equal
    }
}
impl Eq for Pending {}
impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.deviation
            .total_cmp(&other.deviation)
            .then(other.stamp.cmp(&self.stamp))
            .then(other.edge.cmp(&self.edge))
    }
}

/// Residual schedule. Messages are computed eagerly and kept in a max
/// heap keyed by how far they deviate from the stored message; stale
/// entries are skipped via per-edge versions. After a delivery, only
/// the edges leaving the receiving passer are recomputed.
pub fn run_priority(g: &mut InferenceGraph, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let mut heap: BinaryHeap<Pending> = BinaryHeap::new();
    let mut version = vec![0u64; g.edge_count()];
    let mut stamp = 0u64;

    let refresh = |g: &mut InferenceGraph,
                       heap: &mut BinaryHeap<Pending>,
                       version: &mut [u64],
                       stamp: &mut u64,
                       e: EdgeId|
     -> Result<()> {
        if !g.ready_to_send(e)? {
            return Ok(());
        }
        // A tree's first sum is left out of the heap so evidence can
        // reach the sum side first (the request is then trimmed); it
        // re-enters through this refresh when the root receive lands.
        // The drain below picks it up if no evidence ever arrives.
        if g.bootstrap_sum(e) {
            return Ok(());
        }
        let msg = g.compute_message(e)?;
        let deviation = match g.last_message(e) {
            Some(old) => crate::engine::message_mse(&msg, old)?,
            None => f64::INFINITY,
        };
        if deviation > cfg.epsilon {
            version[e] += 1;
            *stamp += 1;
            heap.push(Pending {
                deviation,
                stamp: *stamp,
                edge: e,
                version: version[e],
                msg,
            });
        }
        Ok(())
    };

    for e in 0..g.edge_count() {
        refresh(g, &mut heap, &mut version, &mut stamp, e)?;
    }
    let mut messages = 0u64;
    let mut capped = false;
    'outer: loop {
        while let Some(pending) = heap.pop() {
            if pending.version != version[pending.edge] {
                continue;
            }
            if messages >= cfg.max_messages {
                capped = true;
                break 'outer;
            }
            let e = pending.edge;
            version[e] += 1;
            g.deliver(e, pending.msg, cfg.dampening)?;
            messages += 1;
            let (_, to) = g.edge_endpoints(e);
            for o in g.edges_from(to).to_vec() {
                if o != reverse(e) {
                    refresh(g, &mut heap, &mut version, &mut stamp, o)?;
                }
            }
        }
        // Heap is empty, but a held-back sum (or an edge only ever
        // refreshed as a reverse edge) may never have fired. Fire one
        // ready silent edge, then go back to draining whatever that
        // delivery stirred up.
        let mut fired = false;
        for e in 0..g.edge_count() {
            if g.last_message(e).is_some() || !g.ready_to_send(e)? {
                continue;
            }
            if messages >= cfg.max_messages {
                capped = true;
                break 'outer;
            }
            let msg = g.compute_message(e)?;
            version[e] += 1;
            g.deliver(e, msg, cfg.dampening)?;
            messages += 1;
            let (_, to) = g.edge_endpoints(e);
            for o in g.edges_from(to).to_vec() {
                if o != reverse(e) {
                    refresh(g, &mut heap, &mut version, &mut stamp, o)?;
                }
            }
            fired = true;
            break;
        }
        if !fired {
            break;
        }
    }
    Ok(ConvergenceReport {
        messages_passed: messages,
        converged: !capped,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// One rooted spanning forest: parent edge pair per passer plus a
/// preorder listing, drawn by depth-first search with shuffled
/// neighbor order.
fn draw_forest(g: &InferenceGraph, rng: &mut ChaCha8Rng) -> (Vec<Option<EdgeId>>, Vec<PasserId>) {
    let n = g.passer_count();
    // parent_edge[v] = the outgoing edge v -> parent(v)
    let mut parent_edge: Vec<Option<EdgeId>> = vec![None; n];
    let mut visited = vec![false; n];
    let mut preorder = Vec::with_capacity(n);
    for root in 0..n {
        if visited[root] {
            continue;
        }
        visited[root] = true;
        let mut stack = vec![root];
        while let Some(v) = stack.pop() {
            preorder.push(v);
            let mut out = g.edges_from(v).to_vec();
            out.shuffle(rng);
            for e in out {
                let (_, w) = g.edge_endpoints(e);
                if !visited[w] {
                    visited[w] = true;
                    parent_edge[w] = Some(reverse(e));
                    stack.push(w);
                }
            }
        }
    }
    (parent_edge, preorder)
}

/// Sweep schedule. Each round draws `subtree_count` random spanning
/// subtrees (per component) and sweeps each leaf-to-root then
/// root-to-leaf, firing whichever tree edges are eligible. When a whole
/// round stays within `epsilon`, a verification pass recomputes every
/// eligible edge, delivering any that still move; convergence is
/// declared only when that pass delivers nothing.
pub fn run_random_subtree(g: &mut InferenceGraph, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let subtrees = cfg.subtree_count.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(g.seed() ^ 0x50b7_12ee);
    let mut messages = 0u64;
    let mut capped = false;
    'rounds: loop {
        let mut round_max = 0.0f64;
        for _ in 0..subtrees {
            let (parent_edge, preorder) = draw_forest(g, &mut rng);
            // leaf to root, then root to leaf
            let upward: Vec<EdgeId> = preorder
                .iter()
                .rev()
                .filter_map(|&v| parent_edge[v])
                .collect();
            let downward: Vec<EdgeId> = preorder
                .iter()
                .filter_map(|&v| parent_edge[v].map(reverse))
                .collect();
            for e in upward.into_iter().chain(downward) {
                if !g.ready_to_send(e)? {
                    continue;
                }
                // Leave a tree's first outgoing sum to the
                // verification pass, by which point evidence has
                // usually reached the sum side and trimmed the
                // request.
                if g.bootstrap_sum(e) {
                    continue;
                }
                if messages >= cfg.max_messages {
                    capped = true;
                    break 'rounds;
                }
                let msg = g.compute_message(e)?;
                let deviation = g.deliver(e, msg, cfg.dampening)?;
                messages += 1;
                round_max = round_max.max(deviation);
            }
        }
        if round_max <= cfg.epsilon {
            // settle edges no sweep covered (non-tree edges of loopy
            // graphs)
            let mut moved = false;
            for e in 0..g.edge_count() {
                if !g.ready_to_send(e)? {
                    continue;
                }
                let msg = g.compute_message(e)?;
                let deviation = match g.last_message(e) {
                    Some(old) => crate::engine::message_mse(&msg, old)?,
                    None => f64::INFINITY,
                };
                if deviation > cfg.epsilon {
                    if messages >= cfg.max_messages {
                        capped = true;
                        break 'rounds;
                    }
                    g.deliver(e, msg, cfg.dampening)?;
                    messages += 1;
                    moved = true;
                }
            }
            if !moved {
                break;
            }
        }
    }
    Ok(ConvergenceReport {
        messages_passed: messages,
        converged: !capped,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Two-pass schedule for path graphs: every adjacent pair fires once
/// forward and once backward, giving exact beliefs in exactly
/// `2 * (passers - 1)` messages. Errors if the graph is not a path.
pub fn run_chain(g: &mut InferenceGraph, cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let n = g.passer_count();
    if n == 0 {
        return Ok(ConvergenceReport {
            messages_passed: 0,
            converged: true,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    for p in 0..n {
        if g.edges_from(p).len() > 2 {
            return Err(Error::Topology(format!(
                "{} has {} neighbors; a chain allows two",
                g.passer_name(p),
                g.edges_from(p).len()
            )));
        }
    }
    let mut ends: Vec<PasserId> = (0..n).filter(|&p| g.edges_from(p).len() <= 1).collect();
    ends.sort();
    if n > 1 && ends.len() != 2 {
        return Err(Error::Topology(format!(
            "a chain has two endpoints, found {}",
            ends.len()
        )));
    }
    if n == 1 || g.edge_count() == 0 {
        return Ok(ConvergenceReport {
            messages_passed: 0,
            converged: true,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    // walk the path from the lower endpoint
    let mut forward: Vec<EdgeId> = Vec::with_capacity(n - 1);
    let mut prev = usize::MAX;
    let mut at = ends[0];
    while forward.len() < n - 1 {
        let e = g
            .edges_from(at)
            .iter()
            .copied()
            .find(|&e| g.edge_endpoints(e).1 != prev)
            .ok_or_else(|| Error::Topology("the chain is disconnected".into()))?;
        forward.push(e);
        prev = at;
        at = g.edge_endpoints(e).1;
    }
    if at != ends[1] {
        return Err(Error::Topology("the chain is disconnected".into()));
    }
    let mut messages = 0u64;
    let backward: Vec<EdgeId> = forward.iter().rev().map(|&e| reverse(e)).collect();
    for e in forward.into_iter().chain(backward) {
        if messages >= cfg.max_messages {
            return Ok(ConvergenceReport {
                messages_passed: messages,
                converged: false,
                wall_seconds: start.elapsed().as_secs_f64(),
            });
        }
        let msg = g.compute_message(e)?;
        g.deliver(e, msg, cfg.dampening)?;
        messages += 1;
    }
    Ok(ConvergenceReport {
        messages_passed: messages,
        converged: true,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
