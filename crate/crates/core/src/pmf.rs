//! Probability mass functions over integer-labeled grids.
//!
//! A [`Pmf`] is a dense nonnegative table plus an integer origin per
//! axis, so cell `(i, j, ..)` carries the label `(origin0 + i, ..)`.
//! Values outside the stored box are implicitly zero. The algebra here
//! (pointwise products, p-marginalization, convolution-based addition
//! and subtraction of random variables, support scaling) is what the
//! message passers are built from.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::convolution::{p_convolve_counted, ConvOps, PParam};
use crate::tensor::{advance, strides_of, Tensor};
use crate::{Error, Result};

/// An axis-aligned box of integer labels, inclusive on both ends.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SupportBox {
    lo: Vec<i64>,
    hi: Vec<i64>,
}

impl SupportBox {
    pub fn new(lo: Vec<i64>, hi: Vec<i64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::Shape(format!(
                "box bounds must pair up: lo {lo:?}, hi {hi:?}"
            )));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::Shape(format!("empty box: lo {lo:?}, hi {hi:?}")));
        }
        Ok(SupportBox { lo, hi })
    }

    pub fn rank(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[i64] {
        &self.lo
    }

    pub fn hi(&self) -> &[i64] {
        &self.hi
    }

    pub fn extents(&self) -> Vec<usize> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(l, h)| (h - l + 1) as usize)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.extents().iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false // constructible boxes are never empty; kept for clarity at call sites
    }

    pub fn contains(&self, other: &SupportBox) -> bool {
        self.rank() == other.rank()
            && self.lo.iter().zip(&other.lo).all(|(a, b)| a <= b)
            && self.hi.iter().zip(&other.hi).all(|(a, b)| a >= b)
    }

    pub fn contains_label(&self, label: &[i64]) -> bool {
        label.len() == self.rank()
            && label.iter().zip(&self.lo).all(|(c, l)| c >= l)
            && label.iter().zip(&self.hi).all(|(c, h)| c <= h)
    }

    pub fn intersect(&self, other: &SupportBox) -> Option<SupportBox> {
        if self.rank() != other.rank() {
            return None;
        }
        let lo: Vec<i64> = self.lo.iter().zip(&other.lo).map(|(a, b)| *a.max(b)).collect();
        let hi: Vec<i64> = self.hi.iter().zip(&other.hi).map(|(a, b)| *a.min(b)).collect();
        SupportBox::new(lo, hi).ok()
    }

    pub fn hull(&self, other: &SupportBox) -> Result<SupportBox> {
        if self.rank() != other.rank() {
            return Err(Error::Arity("hull of boxes with different ranks".into()));
        }
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| *a.min(b)).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| *a.max(b)).collect();
        SupportBox::new(lo, hi)
    }

    /// Labels reachable as `a + b`.
    pub fn minkowski_sum(&self, other: &SupportBox) -> Result<SupportBox> {
        if self.rank() != other.rank() {
            return Err(Error::Arity("sum of boxes with different ranks".into()));
        }
        let lo = self.lo.iter().zip(&other.lo).map(|(a, b)| a + b).collect();
        let hi = self.hi.iter().zip(&other.hi).map(|(a, b)| a + b).collect();
        SupportBox::new(lo, hi)
    }

    /// Labels reachable as `a - b`.
    pub fn minkowski_diff(&self, other: &SupportBox) -> Result<SupportBox> {
        if self.rank() != other.rank() {
            return Err(Error::Arity("difference of boxes with different ranks".into()));
        }
        let lo = self.lo.iter().zip(&other.hi).map(|(a, b)| a - b).collect();
        let hi = self.hi.iter().zip(&other.lo).map(|(a, b)| a - b).collect();
        SupportBox::new(lo, hi)
    }

    /// The box of labels `-a` for `a` in this box.
    pub fn negated(&self) -> SupportBox {
        SupportBox {
            lo: self.hi.iter().map(|h| -h).collect(),
            hi: self.lo.iter().map(|l| -l).collect(),
        }
    }
}

/// How [`Pmf::scale_support`] places mass that lands between grid points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScalePlacement {
    /// Each cell's mass goes wholly to one of the two neighboring grid
    /// points, chosen by a seeded coin weighted by the fractional part.
    Dither { seed: u64 },
    /// Each cell's mass is split between the two neighbors in proportion
    /// to the fractional part; deterministic and mass-preserving.
    Interpolate,
}

/// A dense nonnegative mass table with an integer origin per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf {
    table: Tensor<f64>,
    origin: Vec<i64>,
}

impl Pmf {
    pub fn new(origin: Vec<i64>, table: Tensor<f64>) -> Result<Self> {
        if origin.len() != table.rank() {
            return Err(Error::Shape(format!(
                "origin rank {} does not match table rank {}",
                origin.len(),
                table.rank()
            )));
        }
        if table.data().iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("mass values must be finite and nonnegative".into()));
        }
        Ok(Pmf { table, origin })
    }

    pub fn from_values(origin: Vec<i64>, shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        Pmf::new(origin, Tensor::new(shape, values)?)
    }

    /// All mass on a single label.
    pub fn delta(label: &[i64]) -> Result<Self> {
        Pmf::new(label.to_vec(), Tensor::filled(vec![1; label.len()], 1.0)?)
    }

    /// Equal mass on every cell of the box, normalized.
    pub fn uniform(over: &SupportBox) -> Result<Self> {
        let n = over.len();
        Pmf::new(
            over.lo().to_vec(),
            Tensor::filled(over.extents(), 1.0 / n as f64)?,
        )
    }

    pub fn table(&self) -> &Tensor<f64> {
        &self.table
    }

    pub fn origin(&self) -> &[i64] {
        &self.origin
    }

    pub fn rank(&self) -> usize {
        self.table.rank()
    }

    pub fn support_box(&self) -> SupportBox {
        let hi = self
            .origin
            .iter()
            .zip(self.table.shape())
            .map(|(o, e)| o + *e as i64 - 1)
            .collect();
        SupportBox { lo: self.origin.clone(), hi }
    }

    /// Mass at a label; zero outside the stored box.
    pub fn at_label(&self, label: &[i64]) -> f64 {
        if !self.support_box().contains_label(label) {
            return 0.0;
        }
        let idx: Vec<usize> = label
            .iter()
            .zip(&self.origin)
            .map(|(c, o)| (c - o) as usize)
            .collect();
        self.table.at(&idx)
    }

    pub fn total(&self) -> f64 {
        self.table.data().iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.table.data().iter().fold(0.0, |m, &v| m.max(v))
    }

    /// Scales so the values sum to one.
    pub fn normalize(&self) -> Result<Pmf> {
        let t = self.total();
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::Degenerate(format!("cannot normalize total mass {t}")));
        }
        Ok(Pmf {
            table: crate::tensor::map(&self.table, |v| v / t),
            origin: self.origin.clone(),
        })
    }

    /// Crops to the tight bounding box of nonzero mass.
    pub fn narrow_support(&self) -> Result<Pmf> {
        let rank = self.rank();
        let mut lo = vec![usize::MAX; rank];
        let mut hi = vec![0usize; rank];
        let mut idx = vec![0usize; rank];
        let mut any = false;
        for &v in self.table.data() {
            if v != 0.0 {
                any = true;
                for a in 0..rank {
                    lo[a] = lo[a].min(idx[a]);
                    hi[a] = hi[a].max(idx[a]);
                }
            }
            advance(&mut idx, self.table.shape());
        }
        if !any {
            return Err(Error::Degenerate("all mass is zero".into()));
        }
        let extents: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| h - l + 1).collect();
        Ok(Pmf {
            table: self.table.crop(&lo, &extents)?,
            origin: self
                .origin
                .iter()
                .zip(&lo)
                .map(|(o, l)| o + *l as i64)
                .collect(),
        })
    }

    /// Restricts to the part of this distribution inside `keep` (labels
    /// outside are implicitly zero, so this is exact, not lossy).
    pub fn crop_to(&self, keep: &SupportBox) -> Result<Pmf> {
        let own = self.support_box();
        let inter = own
            .intersect(keep)
            .ok_or_else(|| Error::Contradiction("no labels inside the requested box".into()))?;
        let lo: Vec<usize> = inter
            .lo()
            .iter()
            .zip(&self.origin)
            .map(|(l, o)| (l - o) as usize)
            .collect();
        Ok(Pmf {
            table: self.table.crop(&lo, &inter.extents())?,
            origin: inter.lo().to_vec(),
        })
    }

    /// Pointwise product over the intersection of the supports; mass
    /// outside either box is zero, so the product lives on the overlap.
    pub fn multiply(&self, other: &Pmf) -> Result<Pmf> {
        let inter = self
            .support_box()
            .intersect(&other.support_box())
            .ok_or_else(|| Error::Contradiction("supports do not overlap".into()))?;
        let a = self.crop_to(&inter)?;
        let b = other.crop_to(&inter)?;
        Ok(Pmf {
            table: crate::tensor::elementwise(a.table(), b.table(), |x, y| x * y)?,
            origin: inter.lo().to_vec(),
        })
    }

    /// Aggregates away all axes not in `keep`, combining cells with the
    /// p-sum (ordinary sum at p = 1, max at p = infinity). The result's
    /// axes follow the order given in `keep`.
    pub fn marginalize_keep(&self, keep: &[usize], p: PParam) -> Result<Pmf> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if keep.is_empty() || keep.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::Shape(format!(
                "kept axes {keep:?} must be distinct and within 0..{rank}"
            )));
        }
        let out_shape: Vec<usize> = keep.iter().map(|&a| self.table.shape()[a]).collect();
        let out_len: usize = out_shape.iter().product();
        let strides_out = crate::tensor::strides_of(&out_shape);
        let mut acc = vec![PAccumulator::new(p); out_len];
        let mut idx = vec![0usize; rank];
        for &v in self.table.data() {
            let o: usize = keep
                .iter()
                .zip(&strides_out)
                .map(|(&a, &s)| idx[a] * s)
                .sum();
            acc[o].push(v);
            advance(&mut idx, self.table.shape());
        }
        Pmf::new(
            keep.iter().map(|&a| self.origin[a]).collect(),
            Tensor::new(out_shape, acc.into_iter().map(|a| a.value()).collect())?,
        )
    }

    /// The distribution of `-X`: every axis reversed, labels negated.
    pub fn negate_axes(&self) -> Pmf {
        Pmf {
            table: self.table.reversed(),
            origin: self
                .origin
                .iter()
                .zip(self.table.shape())
                .map(|(o, e)| -(o + *e as i64 - 1))
                .collect(),
        }
    }

    /// Reorders axes; `perm` as in [`Tensor::permute_axes`].
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Pmf> {
        Ok(Pmf {
            table: self.table.permute_axes(perm)?,
            origin: perm.iter().map(|&a| self.origin[a]).collect(),
        })
    }

    /// The distribution of `c * X` for a one-axis pmf and `c > 0`,
    /// placing off-grid mass per `placement`. Grid collisions combine
    /// with the p-sum.
    pub fn scale_support(&self, factor: f64, placement: ScalePlacement, p: PParam) -> Result<Pmf> {
        if self.rank() != 1 {
            return Err(Error::Arity(format!(
                "support scaling acts on one axis, pmf has {}",
                self.rank()
            )));
        }
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::Domain(format!("scale factor must be positive, got {factor}")));
        }
        self.scale_axes(&[factor], placement, p)
    }

    /// The distribution of `(c_1 X_1, .., c_r X_r)` for nonzero finite
    /// per-axis factors; negative factors mirror the axis. Off-grid
    /// mass is placed per `placement`: interpolation splits it linearly
    /// over the surrounding grid cells, dithering moves whole cells to
    /// a stochastically rounded corner. Grid collisions combine with
    /// the p-sum.
    pub fn scale_axes(&self, factors: &[f64], placement: ScalePlacement, p: PParam) -> Result<Pmf> {
        use rand::Rng;
        use rand::SeedableRng;
        if factors.len() != self.rank() {
            return Err(Error::Arity(format!(
                "{} factors for a rank-{} pmf",
                factors.len(),
                self.rank()
            )));
        }
        if factors.iter().any(|f| !f.is_finite() || *f == 0.0) {
            return Err(Error::Domain(format!(
                "scale factors must be finite and nonzero, got {factors:?}"
            )));
        }
        let own = self.support_box();
        let rank = self.rank();
        // +1 headroom per axis: both placements may round upward
        let lo: Vec<i64> = (0..rank)
            .map(|a| {
                let (x, y) = (own.lo()[a] as f64 * factors[a], own.hi()[a] as f64 * factors[a]);
                x.min(y).floor() as i64
            })
            .collect();
        let hi: Vec<i64> = (0..rank)
            .map(|a| {
                let (x, y) = (own.lo()[a] as f64 * factors[a], own.hi()[a] as f64 * factors[a]);
                x.max(y).floor() as i64 + 1
            })
            .collect();
        let shape: Vec<usize> = lo.iter().zip(&hi).map(|(l, h)| (h - l + 1) as usize).collect();
        let out_strides = strides_of(&shape);
        let mut acc = vec![PAccumulator::new(p); shape.iter().product()];
        let mut rng = match placement {
            ScalePlacement::Dither { seed } => Some(rand_chacha::ChaCha8Rng::seed_from_u64(seed)),
            ScalePlacement::Interpolate => None,
        };
        let mut idx = vec![0usize; rank];
        for &v in self.table.data() {
            if v != 0.0 {
                let mut base = vec![0i64; rank];
                let mut frac = vec![0.0f64; rank];
                for a in 0..rank {
                    let t = (self.origin[a] + idx[a] as i64) as f64 * factors[a];
                    base[a] = t.floor() as i64;
                    frac[a] = t - t.floor();
                }
                match rng.as_mut() {
                    Some(rng) => {
                        let mut flat = 0usize;
                        for a in 0..rank {
                            let up = frac[a] > 0.0 && rng.gen_bool(frac[a]);
                            flat += (base[a] + i64::from(up) - lo[a]) as usize * out_strides[a];
                        }
                        acc[flat].push(v);
                    }
                    None => {
                        // every corner of the surrounding cell gets the
                        // product of its per-axis linear weights
                        for corner in 0..(1usize << rank) {
                            let mut weight = v;
                            let mut flat = 0usize;
                            for a in 0..rank {
                                let up = corner >> a & 1 == 1;
                                weight *= if up { frac[a] } else { 1.0 - frac[a] };
                                flat += (base[a] + i64::from(up) - lo[a]) as usize * out_strides[a];
                            }
                            if weight != 0.0 {
                                acc[flat].push(weight);
                            }
                        }
                    }
                }
            }
            advance(&mut idx, self.table.shape());
        }
        Pmf::new(
            lo,
            Tensor::new(shape, acc.into_iter().map(|a| a.value()).collect())?,
        )
    }
}

/// Distribution of `X + Y` for independent `X`, `Y`: p-convolution of
/// the tables, origins added.
pub fn add_pmfs(x: &Pmf, y: &Pmf, p: PParam, ops: &mut ConvOps) -> Result<Pmf> {
    let table = p_convolve_counted(x.table(), y.table(), p, ops)?;
    Pmf::new(
        x.origin.iter().zip(&y.origin).map(|(a, b)| a + b).collect(),
        table,
    )
}

/// Distribution of `X - Y`: convolution against the reversed table, so
/// the support is the interval difference of the two supports.
pub fn subtract_pmfs(x: &Pmf, y: &Pmf, p: PParam, ops: &mut ConvOps) -> Result<Pmf> {
    add_pmfs(x, &y.negate_axes(), p, ops)
}

/// Combines values with the p-sum: plain addition at p = 1, max at
/// p = infinity, powered sums between. Rescales by the running maximum
/// so large finite p cannot underflow.
#[derive(Debug, Clone)]
struct PAccumulator {
    p: PParam,
    scale: f64,
    acc: f64,
}

impl PAccumulator {
    fn new(p: PParam) -> Self {
        PAccumulator { p, scale: 0.0, acc: 0.0 }
    }

    fn push(&mut self, v: f64) {
        if v == 0.0 {
            return;
        }
        if self.p.is_one() {
            self.acc += v;
            self.scale = 1.0;
        } else if self.p.is_infinite() {
            self.scale = self.scale.max(v);
        } else if v <= self.scale {
            self.acc += (v / self.scale).powf(self.p.get());
        } else {
            let ratio = if self.scale == 0.0 { 0.0 } else { self.scale / v };
            self.acc = self.acc * ratio.powf(self.p.get()) + 1.0;
            self.scale = v;
        }
    }

    fn value(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else if self.p.is_one() {
            self.acc
        } else if self.p.is_infinite() {
            self.scale
        } else {
            self.scale * self.acc.powf(1.0 / self.p.get())
        }
    }
}

/// A pmf whose axes carry variable names; the engine keys messages and
/// products by these names rather than positional axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPmf {
    labels: Vec<String>,
    pmf: Pmf,
}

impl LabeledPmf {
    pub fn new(labels: Vec<String>, pmf: Pmf) -> Result<Self> {
        if labels.len() != pmf.rank() {
            return Err(Error::Label(format!(
                "{} axis names for a rank-{} pmf",
                labels.len(),
                pmf.rank()
            )));
        }
        let mut sorted = labels.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != labels.len() {
            return Err(Error::Label(format!("axis names repeat: {labels:?}")));
        }
        Ok(LabeledPmf { labels, pmf })
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn pmf(&self) -> &Pmf {
        &self.pmf
    }

    pub fn into_pmf(self) -> Pmf {
        self.pmf
    }

    /// Reorders axes to match `target`, which must name the same set.
    pub fn align_to(&self, target: &[String]) -> Result<LabeledPmf> {
        if target.len() != self.labels.len() {
            return Err(Error::Label(format!(
                "cannot align axes {:?} to {target:?}",
                self.labels
            )));
        }
        let perm: Vec<usize> = target
            .iter()
            .map(|name| {
                self.labels
                    .iter()
                    .position(|l| l == name)
                    .ok_or_else(|| Error::Label(format!("no axis named {name}")))
            })
            .collect::<Result<_>>()?;
        Ok(LabeledPmf {
            labels: target.to_vec(),
            pmf: self.pmf.permute_axes(&perm)?,
        })
    }

    /// Position of each of this pmf's axes within `target`, which must
    /// name a superset of them.
    pub fn axis_positions_in(&self, target: &[String]) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .map(|l| {
                target
                    .iter()
                    .position(|t| t == l)
                    .ok_or_else(|| Error::Label(format!("no axis named {l} in {target:?}")))
            })
            .collect()
    }

    /// p-marginal onto the named axes, in the order given.
    pub fn marginalize_to(&self, target: &[String], p: PParam) -> Result<LabeledPmf> {
        let keep: Vec<usize> = target
            .iter()
            .map(|name| {
                self.labels
                    .iter()
                    .position(|l| l == name)
                    .ok_or_else(|| Error::Label(format!("no axis named {name}")))
            })
            .collect::<Result<_>>()?;
        LabeledPmf::new(target.to_vec(), self.pmf.marginalize_keep(&keep, p)?)
    }

    /// Pointwise product after aligning the other operand's axes.
    pub fn multiply(&self, other: &LabeledPmf) -> Result<LabeledPmf> {
        let aligned = other.align_to(&self.labels)?;
        LabeledPmf::new(self.labels.clone(), self.pmf.multiply(&aligned.pmf)?)
    }
}

impl Serialize for Pmf {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            origin: &'a [i64],
            shape: &'a [usize],
            values: &'a [f64],
        }
        Wire {
            origin: &self.origin,
            shape: self.table.shape(),
            values: self.table.data(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Pmf {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Wire {
            origin: Vec<i64>,
            shape: Vec<usize>,
            values: Vec<f64>,
        }
        let w = Wire::deserialize(deserializer)?;
        Pmf::from_values(w.origin, w.shape, w.values).map_err(D::Error::custom)
    }
}
