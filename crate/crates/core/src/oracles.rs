//! Brute-force reference implementations for tests and validation runs.
//!
//! Everything here trades time for transparency: joint enumeration,
//! exhaustive subset search, and the textbook chain recursions. None of
//! it touches the convolution or message-passing machinery, so the two
//! can check each other. Size guards keep accidental blowups from
//! hanging a test run; within the guards these are exact.

use std::collections::BTreeSet;

use crate::convolution::PParam;
use crate::pmf::{LabeledPmf, Pmf};
use crate::{Error, Result};

/// Most joint states [`enumerate_marginals`] will walk.
const STATE_GUARD: u64 = 10_000_000;

/// Most items the subset searches will take (2^n subsets).
const SUBSET_GUARD: usize = 24;

/// A discrete model described extensionally: named variables with
/// explicit label lists, dense factors over subsets of them, and
/// additive constraints tying one variable to the sum of others.
#[derive(Debug, Clone, Default)]
pub struct JointModel {
    variables: Vec<(String, Vec<i64>)>,
    factors: Vec<LabeledPmf>,
    sums: Vec<(Vec<String>, String)>,
}

impl JointModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn variable(mut self, name: &str, labels: impl IntoIterator<Item = i64>) -> Self {
        self.variables.push((name.into(), labels.into_iter().collect()));
        self
    }

    pub fn factor(mut self, factor: LabeledPmf) -> Self {
        self.factors.push(factor);
        self
    }

    /// Constrains `output` to equal the sum of `inputs` exactly.
    pub fn sum(mut self, inputs: &[&str], output: &str) -> Self {
        self.sums.push((
            inputs.iter().map(|s| s.to_string()).collect(),
            output.into(),
        ));
        self
    }

    fn index_of(&self, name: &str) -> Result<usize> {
        self.variables
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Label(format!("unknown variable {name}")))
    }
}

/// Exact per-variable marginals by walking every joint state.
///
/// At p = 1 each state contributes its weight; at p = ∞ states compete
/// by maximum; finite p in between accumulates p-powered weights. Every
/// marginal is normalized to total mass one.
pub fn enumerate_marginals(model: &JointModel, p: PParam) -> Result<Vec<LabeledPmf>> {
    if model.variables.is_empty() {
        return Ok(Vec::new());
    }
    let mut states = 1u64;
    for (name, labels) in &model.variables {
        if labels.is_empty() {
            return Err(Error::Domain(format!("variable {name} has no labels")));
        }
        states = states.saturating_mul(labels.len() as u64);
        if states > STATE_GUARD {
            return Err(Error::Capacity(format!(
                "joint enumeration over more than {STATE_GUARD} states"
            )));
        }
    }

    // Resolve names to variable positions once.
    let factor_axes: Vec<Vec<usize>> = model
        .factors
        .iter()
        .map(|f| f.labels().iter().map(|l| model.index_of(l)).collect())
        .collect::<Result<_>>()?;
    let sum_axes: Vec<(Vec<usize>, usize)> = model
        .sums
        .iter()
        .map(|(ins, out)| {
            let ins = ins.iter().map(|l| model.index_of(l)).collect::<Result<Vec<_>>>()?;
            Ok((ins, model.index_of(out)?))
        })
        .collect::<Result<_>>()?;

    let n = model.variables.len();
    let mut acc: Vec<Vec<f64>> = model
        .variables
        .iter()
        .map(|(_, labels)| vec![0.0; labels.len()])
        .collect();

    let mut pos = vec![0usize; n];
    let mut label = vec![0i64; n];
    for (i, (_, labels)) in model.variables.iter().enumerate() {
        label[i] = labels[0];
    }
    loop {
        let feasible = sum_axes
            .iter()
            .all(|(ins, out)| ins.iter().map(|&i| label[i]).sum::<i64>() == label[*out]);
        if feasible {
            let mut weight = 1.0;
            for (factor, axes) in model.factors.iter().zip(&factor_axes) {
                let point: Vec<i64> = axes.iter().map(|&i| label[i]).collect();
                weight *= factor.pmf().at_label(&point);
                if weight == 0.0 {
                    break;
                }
            }
            if weight > 0.0 {
                for (i, &at) in pos.iter().enumerate() {
                    let cell = &mut acc[i][at];
                    if p.is_infinite() {
                        *cell = cell.max(weight);
                    } else if p.is_one() {
                        *cell += weight;
                    } else {
                        *cell += weight.powf(p.get());
                    }
                }
            }
        }
        // advance the odometer
        let mut axis = 0;
        loop {
            if axis == n {
                return finish_marginals(model, acc, p);
            }
            pos[axis] += 1;
            if pos[axis] < model.variables[axis].1.len() {
                label[axis] = model.variables[axis].1[pos[axis]];
                break;
            }
            pos[axis] = 0;
            label[axis] = model.variables[axis].1[0];
            axis += 1;
        }
    }
}

fn finish_marginals(
    model: &JointModel,
    acc: Vec<Vec<f64>>,
    p: PParam,
) -> Result<Vec<LabeledPmf>> {
    let mut out = Vec::with_capacity(acc.len());
    for ((name, labels), mut weights) in model.variables.iter().zip(acc) {
        if !p.is_one() && !p.is_infinite() {
            for w in &mut weights {
                *w = w.powf(1.0 / p.get());
            }
        }
        let lo = *labels.iter().min().unwrap();
        let hi = *labels.iter().max().unwrap();
        let mut dense = vec![0.0; (hi - lo) as usize + 1];
        for (&l, w) in labels.iter().zip(&weights) {
            dense[(l - lo) as usize] += w;
        }
        let total: f64 = dense.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(format!(
                "variable {name} has zero mass in every feasible state"
            )));
        }
        for v in &mut dense {
            *v /= total;
        }
        let pmf = Pmf::from_values(vec![lo], vec![dense.len()], dense)?;
        out.push(LabeledPmf::new(vec![name.clone()], pmf)?);
    }
    Ok(out)
}

/// Which totals some subset of `values` reaches, and whether `target`
/// is among them. Exhaustive over all 2^n subsets.
pub fn brute_subset_sum(values: &[u64], target: u64) -> Result<(bool, BTreeSet<u64>)> {
    if values.len() > SUBSET_GUARD {
        return Err(Error::Capacity(format!(
            "subset enumeration beyond {SUBSET_GUARD} items"
        )));
    }
    let mut sums = BTreeSet::new();
    for mask in 0u32..(1u32 << values.len()) {
        let total: u64 = values
            .iter()
            .enumerate()
            .filter(|(i, _)| mask >> i & 1 == 1)
            .map(|(_, v)| v)
            .sum();
        sums.insert(total);
    }
    Ok((sums.contains(&target), sums))
}

/// Exhaustive knapsack posterior target: each item is either out
/// (weight `1 - priors[i]`) or in (weight `priors[i]`, adding
/// `values[i]` to the total). Returns the best configuration weight
/// among subsets hitting `target` and every argmax subset, so callers
/// can tell when the optimum is unique. Weight 0 with no witnesses
/// means the target is unreachable.
pub fn brute_knapsack(
    values: &[u64],
    priors: &[f64],
    target: u64,
) -> Result<(f64, Vec<Vec<bool>>)> {
    if values.len() > SUBSET_GUARD {
        return Err(Error::Capacity(format!(
            "subset enumeration beyond {SUBSET_GUARD} items"
        )));
    }
    if values.len() != priors.len() {
        return Err(Error::Shape(format!(
            "{} values vs {} priors",
            values.len(),
            priors.len()
        )));
    }
    if priors.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
        return Err(Error::Domain("item priors must lie in [0, 1]".into()));
    }
    let mut best = 0.0f64;
    let mut witnesses: Vec<Vec<bool>> = Vec::new();
    for mask in 0u32..(1u32 << values.len()) {
        let mut total = 0u64;
        let mut weight = 1.0;
        for (i, (&v, &w)) in values.iter().zip(priors).enumerate() {
            if mask >> i & 1 == 1 {
                total += v;
                weight *= w;
            } else {
                weight *= 1.0 - w;
            }
        }
        if total != target || weight <= 0.0 {
            continue;
        }
        if weight > best * (1.0 + 1e-12) {
            best = weight;
            witnesses.clear();
        }
        if weight >= best * (1.0 - 1e-12) {
            best = best.max(weight);
            witnesses.push((0..values.len()).map(|i| mask >> i & 1 == 1).collect());
        }
    }
    Ok((best, witnesses))
}

/// A hidden Markov chain with dense parameters and a fixed observation
/// sequence.
#[derive(Debug, Clone)]
pub struct Hmm {
    /// Initial state distribution, length K.
    pub initial: Vec<f64>,
    /// `transition[i][j]` = chance of moving from state i to state j.
    pub transition: Vec<Vec<f64>>,
    /// `emission[i][m]` = chance state i emits symbol m.
    pub emission: Vec<Vec<f64>>,
    /// Observed symbols, each indexing into the emission rows.
    pub observations: Vec<usize>,
}

impl Hmm {
    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let k = self.states();
        if k == 0 || self.transition.len() != k || self.transition.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("transition matrix must be K x K".into()));
        }
        if self.emission.len() != k {
            return Err(Error::Shape("one emission row per state".into()));
        }
        let m = self.emission[0].len();
        if self.emission.iter().any(|r| r.len() != m) {
            return Err(Error::Shape("emission rows must share a length".into()));
        }
        if self.observations.iter().any(|&o| o >= m) {
            return Err(Error::Domain("observation outside the symbol range".into()));
        }
        if self.is_empty() {
            return Err(Error::Domain("empty observation sequence".into()));
        }
        Ok(())
    }
}

/// Per-position state posteriors by the forward-backward recursion,
/// rescaled at every step; each row is normalized.
pub fn forward_backward(hmm: &Hmm) -> Result<Vec<Vec<f64>>> {
    hmm.validate()?;
    let (k, l) = (hmm.states(), hmm.len());
    let mut alpha = vec![vec![0.0; k]; l];
    for s in 0..k {
        alpha[0][s] = hmm.initial[s] * hmm.emission[s][hmm.observations[0]];
    }
    rescale(&mut alpha[0])?;
    for t in 1..l {
        for s in 0..k {
            let inflow: f64 = (0..k).map(|r| alpha[t - 1][r] * hmm.transition[r][s]).sum();
            alpha[t][s] = inflow * hmm.emission[s][hmm.observations[t]];
        }
        rescale(&mut alpha[t])?;
    }
    let mut beta = vec![vec![1.0; k]; l];
    for t in (0..l - 1).rev() {
        for s in 0..k {
            beta[t][s] = (0..k)
                .map(|r| {
                    hmm.transition[s][r] * hmm.emission[r][hmm.observations[t + 1]] * beta[t + 1][r]
                })
                .sum();
        }
        rescale(&mut beta[t])?;
    }
    let mut post = vec![vec![0.0; k]; l];
    for t in 0..l {
        for s in 0..k {
            post[t][s] = alpha[t][s] * beta[t][s];
        }
        rescale(&mut post[t])?;
    }
    Ok(post)
}

fn rescale(row: &mut [f64]) -> Result<()> {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate(
            "the chain assigns zero mass to the observations".into(),
        ));
    }
    for v in row.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// The single most probable state path, with ties broken toward the
/// lower state index.
pub fn viterbi(hmm: &Hmm) -> Result<Vec<usize>> {
    hmm.validate()?;
    let (k, l) = (hmm.states(), hmm.len());
    // log space keeps long chains from underflowing
    let lg = |v: f64| if v > 0.0 { v.ln() } else { f64::NEG_INFINITY };
    let mut score = vec![vec![f64::NEG_INFINITY; k]; l];
    let mut from = vec![vec![0usize; k]; l];
    for s in 0..k {
        score[0][s] = lg(hmm.initial[s]) + lg(hmm.emission[s][hmm.observations[0]]);
    }
    for t in 1..l {
        for s in 0..k {
            let (mut best, mut arg) = (f64::NEG_INFINITY, 0);
            for r in 0..k {
                let cand = score[t - 1][r] + lg(hmm.transition[r][s]);
                if cand > best {
                    best = cand;
                    arg = r;
                }
            }
            score[t][s] = best + lg(hmm.emission[s][hmm.observations[t]]);
            from[t][s] = arg;
        }
    }
    let mut cur = (0..k)
        .max_by(|&a, &b| score[l - 1][a].partial_cmp(&score[l - 1][b]).unwrap().then(b.cmp(&a)))
        .unwrap();
    if score[l - 1][cur] == f64::NEG_INFINITY {
        return Err(Error::Degenerate(
            "every state path has zero probability".into(),
        ));
    }
    let mut path = vec![0usize; l];
    path[l - 1] = cur;
    for t in (1..l).rev() {
        cur = from[t][cur];
        path[t - 1] = cur;
    }
    Ok(path)
}

/// Walks every state path and returns the best joint probability with
/// all paths attaining it (within a hair of relative tolerance), so
/// uniqueness of the optimum can be established independently.
pub fn enumerate_best_paths(hmm: &Hmm) -> Result<(f64, Vec<Vec<usize>>)> {
    hmm.validate()?;
    let (k, l) = (hmm.states(), hmm.len());
    if (k as u64).saturating_pow(l as u32) > STATE_GUARD {
        return Err(Error::Capacity("too many paths to enumerate".into()));
    }
    let mut best = 0.0f64;
    let mut paths: Vec<Vec<usize>> = Vec::new();
    let mut path = vec![0usize; l];
    loop {
        let mut weight = hmm.initial[path[0]] * hmm.emission[path[0]][hmm.observations[0]];
        for t in 1..l {
            weight *= hmm.transition[path[t - 1]][path[t]] * hmm.emission[path[t]][hmm.observations[t]];
        }
        if weight > 0.0 {
            if weight > best * (1.0 + 1e-12) {
                best = weight;
                paths.clear();
            }
            if weight >= best * (1.0 - 1e-12) {
                best = best.max(weight);
                paths.push(path.clone());
            }
        }
        let mut t = 0;
        loop {
            if t == l {
                return Ok((best, paths));
            }
            path[t] += 1;
            if path[t] < k {
                break;
            }
            path[t] = 0;
            t += 1;
        }
    }
}
