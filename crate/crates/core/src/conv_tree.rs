//! A binary tree of p-convolutions mediating between a set of addend
//! variables and their sum.
//!
//! For `Y = X_1 + .. + X_n` the tree's leaves hold mass functions for
//! the `X_i` (their priors, as seen from the sum) and the root can hold
//! a mass function over `Y` flowing the other way (the likelihood). Two
//! kinds of messages are served:
//!
//! - [`ConvTree::request_sum_prior`]: the distribution the addends
//!   induce on `Y` (the likelihood's own values are excluded, but its
//!   support is used for trimming).
//! - [`ConvTree::request_leaf_likelihood`]: the message toward one
//!   `X_i`, combining the root likelihood with every other leaf.
//!
//! Internal nodes cache both directions. Trimming restricts every
//! intermediate convolution to the labels that can still contribute to
//! a feasible total; the trim boxes depend only on the support boxes,
//! never on which request produced them, so caches survive across
//! requests. Receives are cheap: a leaf update walks toward the root
//! only until it meets an already-dirty node (dirty here implies dirty
//! above), and marks the sibling subtrees it passes as stale on the
//! likelihood side (stale there implies the whole subtree is stale, so
//! one flag suffices until it is pushed down lazily).

use crate::convolution::{max_convolve_naive_counted, ConvOps, PParam};
use crate::pmf::{add_pmfs, Pmf, SupportBox};
use crate::{Error, Result};

/// Whether intermediate convolutions are restricted to feasible labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrimMode {
    Trimmed,
    Untrimmed,
}

/// A cached directional message: the mass function as restricted to
/// `box_`, which is the exact box the cache answers for (values outside
/// it are not represented, values absent inside it are zero).
#[derive(Debug, Clone)]
struct Cached {
    pmf: Pmf,
    box_: SupportBox,
}

#[derive(Debug, Default, Clone)]
struct Node {
    /// Set only on leaves.
    leaf_prior: Option<Pmf>,
    /// Untrimmed support of the subtree sum.
    prior_box: Option<SupportBox>,
    /// Upward message cache (subtree sum distribution).
    prior: Option<Cached>,
    /// Downward message cache (evidence from outside the subtree).
    lik: Option<Cached>,
    /// Some leaf below changed; implies the flag is set on every
    /// ancestor as well.
    prior_dirty: bool,
    /// Evidence outside this subtree changed; implies every descendant's
    /// downward cache is stale (the flag is pushed down when visited).
    lik_dirty: bool,
}

/// Counters exposed for scaling assertions; the tree never branches on
/// them.
#[derive(Debug, Default, Clone, Copy)]
pub struct TreeStats {
    /// Nodes visited while serving requests.
    pub nodes_touched: u64,
    /// Dirty-walk steps performed by receives.
    pub receive_steps: u64,
}

#[derive(Debug, Clone)]
pub struct ConvTree {
    p: PParam,
    trim: TrimMode,
    /// With infinite p, convolve exactly instead of estimating.
    exact_max: bool,
    /// Leaf slots, padded to a power of two.
    width: usize,
    leaf_count: usize,
    /// Number of sum dimensions, fixed by the first received message.
    rank: Option<usize>,
    /// Implicit heap layout: root at 1, children of v at 2v and 2v+1,
    /// leaves at width..width+leaf_count.
    nodes: Vec<Node>,
    root_lik: Option<Pmf>,
    ops: ConvOps,
    stats: TreeStats,
}

impl ConvTree {
    pub fn new(leaf_count: usize, p: PParam, trim: TrimMode) -> Result<Self> {
        if leaf_count == 0 {
            return Err(Error::Topology("a sum needs at least one addend".into()));
        }
        let width = leaf_count.next_power_of_two();
        let nodes = vec![Node::default(); 2 * width];
        Ok(ConvTree {
            p,
            trim,
            exact_max: false,
            width,
            leaf_count,
            rank: None,
            nodes,
            root_lik: None,
            ops: ConvOps::default(),
            stats: TreeStats::default(),
        })
    }

    /// Pins the sum's dimensionality on first contact and fills the
    /// padding slots with a point mass at the additive identity.
    fn ensure_rank(&mut self, rank: usize) -> Result<()> {
        match self.rank {
            Some(r) if r == rank => Ok(()),
            Some(r) => Err(Error::Arity(format!(
                "messages must share the sum's {r} dimensions, got rank {rank}"
            ))),
            None => {
                self.rank = Some(rank);
                let zero = Pmf::delta(&vec![0; rank]).unwrap();
                for slot in self.leaf_count..self.width {
                    self.nodes[self.width + slot].leaf_prior = Some(zero.clone());
                }
                Ok(())
            }
        }
    }

    /// With infinite p, use exact max-convolutions at any size instead of
    /// the estimating path. No effect at finite p.
    pub fn set_exact_max(&mut self, exact: bool) {
        self.exact_max = exact;
    }

    pub fn leaf_count(&self) -> usize {
        self.leaf_count
    }

    pub fn p(&self) -> PParam {
        self.p
    }

    pub fn stats(&self) -> TreeStats {
        self.stats
    }

    pub fn conv_ops(&self) -> ConvOps {
        self.ops
    }

    fn leaf_node(&self, leaf: usize) -> Result<usize> {
        if leaf >= self.leaf_count {
            return Err(Error::Topology(format!(
                "leaf {leaf} out of range 0..{}",
                self.leaf_count
            )));
        }
        Ok(self.width + leaf)
    }

    /// Installs the mass function an addend sends toward the sum.
    pub fn receive_leaf_prior(&mut self, leaf: usize, pmf: Pmf) -> Result<()> {
        self.ensure_rank(pmf.rank())?;
        let mut v = self.leaf_node(leaf)?;
        self.nodes[v].leaf_prior = Some(pmf);
        // Climb until the path is already marked; above that point an
        // earlier receive has done the same sibling marking.
        loop {
            self.stats.receive_steps += 1;
            if self.nodes[v].prior_dirty {
                break;
            }
            self.nodes[v].prior_dirty = true;
            self.nodes[v].prior = None;
            self.nodes[v].prior_box = None;
            if v == 1 {
                break;
            }
            let sibling = v ^ 1;
            self.nodes[sibling].lik_dirty = true;
            v /= 2;
        }
        Ok(())
    }

    /// Installs the mass function the sum side sends toward the addends.
    pub fn receive_root_likelihood(&mut self, pmf: Pmf) -> Result<()> {
        self.ensure_rank(pmf.rank())?;
        self.root_lik = Some(pmf);
        self.stats.receive_steps += 1;
        self.nodes[1].lik_dirty = true;
        Ok(())
    }

    pub fn root_likelihood(&self) -> Option<&Pmf> {
        self.root_lik.as_ref()
    }

    pub fn leaf_prior(&self, leaf: usize) -> Option<&Pmf> {
        self.nodes[self.width + leaf].leaf_prior.as_ref()
    }

    /// Untrimmed support of the sum.
    pub fn sum_support(&mut self) -> Result<SupportBox> {
        self.prior_box_of(1)
    }

    fn prior_box_of(&mut self, v: usize) -> Result<SupportBox> {
        if let Some(b) = &self.nodes[v].prior_box {
            if !self.nodes[v].prior_dirty {
                return Ok(b.clone());
            }
        }
        let b = if v >= self.width {
            self.nodes[v]
                .leaf_prior
                .as_ref()
                .ok_or_else(|| Error::NotReady(format!("addend {} has no mass function", v - self.width)))?
                .support_box()
        } else {
            let l = self.prior_box_of(2 * v)?;
            let r = self.prior_box_of(2 * v + 1)?;
            l.minkowski_sum(&r)?
        };
        self.nodes[v].prior_box = Some(b.clone());
        Ok(b)
    }

    /// The box the root message is computed over.
    fn root_trim(&mut self) -> Result<SupportBox> {
        let full = self.prior_box_of(1)?;
        match (&self.trim, &self.root_lik) {
            (TrimMode::Trimmed, Some(lik)) => full
                .intersect(&lik.support_box())
                .ok_or_else(|| Error::Contradiction(
                    "the sum's evidence does not overlap the addends' reachable totals".into(),
                )),
            _ => Ok(full),
        }
    }

    /// The distribution of the sum as induced by the addends alone,
    /// restricted to the feasible box when trimming is on.
    pub fn request_sum_prior(&mut self) -> Result<Pmf> {
        let want = self.root_trim()?;
        self.compute_prior(1, &want)
    }

    /// The message toward one addend: the root likelihood minus every
    /// other addend, restricted to the addend's feasible box.
    pub fn request_leaf_likelihood(&mut self, leaf: usize) -> Result<Pmf> {
        if self.root_lik.is_none() {
            return Err(Error::NotReady(
                "no mass function for the sum has been received".into(),
            ));
        }
        let mut v = self.leaf_node(leaf)?;
        // Record the root path; the walk below goes top-down.
        let mut path = Vec::new();
        while v >= 1 {
            path.push(v);
            if v == 1 {
                break;
            }
            v /= 2;
        }
        path.reverse();

        let mut want = self.root_trim()?;
        let mut msg = self.lik_cached(1, &want)?;
        if msg.is_none() {
            let lik = self.root_lik.clone().unwrap();
            let m = lik.crop_to(&want)?;
            self.store_lik(1, m.clone(), want.clone());
            msg = Some(m);
        }
        let mut msg = msg.unwrap();

        for step in path.windows(2) {
            let (parent, child) = (step[0], step[1]);
            let sibling = child ^ 1;
            let child_box = self.prior_box_of(child)?;
            let sib_box = self.prior_box_of(sibling)?;
            let child_want = match self.trim {
                TrimMode::Trimmed => child_box
                    .intersect(&want.minkowski_diff(&sib_box)?)
                    .ok_or_else(|| Error::Contradiction(format!(
                        "no feasible value remains for a subtree under addend {leaf}"
                    )))?,
                TrimMode::Untrimmed => child_box,
            };
            if let Some(hit) = self.lik_cached(child, &child_want)? {
                msg = hit;
            } else {
                let sib_want = match self.trim {
                    TrimMode::Trimmed => sib_box
                        .intersect(&want.minkowski_diff(&self.prior_box_of(child)?)?)
                        .ok_or_else(|| Error::Contradiction(format!(
                            "no feasible value remains beside addend {leaf}"
                        )))?,
                    TrimMode::Untrimmed => sib_box,
                };
                let sib_prior = self.compute_prior(sibling, &sib_want)?;
                let down = self.combine(&msg, &sib_prior.negate_axes())?;
                msg = down.crop_to(&child_want).map_err(|_| {
                    Error::Contradiction(format!(
                        "no feasible value remains for addend {leaf}"
                    ))
                })?;
                self.store_lik(child, msg.clone(), child_want.clone());
            }
            let _ = parent;
            want = child_want;
        }
        Ok(msg)
    }

    /// Consults the downward cache at `v`, first pushing any pending
    /// staleness flag to the children.
    fn lik_cached(&mut self, v: usize, want: &SupportBox) -> Result<Option<Pmf>> {
        self.stats.nodes_touched += 1;
        if self.nodes[v].lik_dirty {
            self.nodes[v].lik_dirty = false;
            self.nodes[v].lik = None;
            if v < self.width {
                self.nodes[2 * v].lik_dirty = true;
                self.nodes[2 * v + 1].lik_dirty = true;
            }
        }
        if let Some(c) = &self.nodes[v].lik {
            if c.box_.contains(want) {
                return Ok(Some(c.pmf.crop_to(want)?));
            }
        }
        Ok(None)
    }

    fn store_lik(&mut self, v: usize, pmf: Pmf, box_: SupportBox) {
        self.nodes[v].lik = Some(Cached { pmf, box_ });
    }

    fn compute_prior(&mut self, v: usize, want: &SupportBox) -> Result<Pmf> {
        self.stats.nodes_touched += 1;
        if v >= self.width {
            let prior = self.nodes[v]
                .leaf_prior
                .as_ref()
                .ok_or_else(|| Error::NotReady(format!("addend {} has no mass function", v - self.width)))?;
            let out = prior.crop_to(want)?;
            self.nodes[v].prior_dirty = false;
            return Ok(out);
        }
        if !self.nodes[v].prior_dirty {
            if let Some(c) = &self.nodes[v].prior {
                if c.box_.contains(want) {
                    return Ok(c.pmf.crop_to(want)?);
                }
            }
        }
        let (l, r) = (2 * v, 2 * v + 1);
        let bl = self.prior_box_of(l)?;
        let br = self.prior_box_of(r)?;
        let (wl, wr) = match self.trim {
            TrimMode::Trimmed => (
                bl.intersect(&want.minkowski_diff(&br)?).ok_or_else(|| {
                    Error::Contradiction("a subtree has no feasible values left".into())
                })?,
                br.intersect(&want.minkowski_diff(&bl)?).ok_or_else(|| {
                    Error::Contradiction("a subtree has no feasible values left".into())
                })?,
            ),
            TrimMode::Untrimmed => (bl, br),
        };
        let pl = self.compute_prior(l, &wl)?;
        let pr = self.compute_prior(r, &wr)?;
        let sum = self.combine(&pl, &pr)?;
        let out = sum.crop_to(want).map_err(|_| {
            Error::Contradiction("the subtree sum misses every feasible total".into())
        })?;
        self.nodes[v].prior = Some(Cached { pmf: out.clone(), box_: want.clone() });
        self.nodes[v].prior_dirty = false;
        Ok(out)
    }

    /// p-convolution of two univariate mass functions, honoring the
    /// exact-max override.
    fn combine(&mut self, x: &Pmf, y: &Pmf) -> Result<Pmf> {
        if self.p.is_infinite() && self.exact_max {
            let table = max_convolve_naive_counted(x.table(), y.table(), &mut self.ops)?;
            return Pmf::new(
                x.origin()
                    .iter()
                    .zip(y.origin())
                    .map(|(a, b)| a + b)
                    .collect(),
                table,
            );
        }
        add_pmfs(x, y, self.p, &mut self.ops)
    }
}
