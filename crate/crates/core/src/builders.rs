//! Declarative model descriptions and their graph construction.
//!
//! A [`ModelSpec`] lists dependencies over named variables: joint prior
//! tables, likelihood tables, additive constraints, and constant
//! multipliers. [`ModelSpec::build`] turns one into an
//! [`InferenceGraph`] with a hyperedge per variable tuple, a table node
//! per table, one convolution-tree passer per additive constraint (the
//! constraint is never split into a cascade of pairwise sums), and a
//! multiplier passer per scaling.
//!
//! Specs serialize to a tagged JSON document, so models can be exported,
//! inspected, and re-run.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::conv_tree::TrimMode;
use crate::convolution::PParam;
use crate::engine::InferenceGraph;
use crate::pmf::{LabeledPmf, Pmf};
use crate::scheduling::{ConvergenceConfig, Scheduler};
use crate::{Error, Result};

pub const MODEL_FORMAT: &str = "addbp-model/1";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dependency {
    /// A joint prior over the table's variables.
    TablePrior { table: LabeledPmf },
    /// Evidence entering as a factor; mechanically a prior table, kept
    /// distinct so models read honestly.
    Likelihood { table: LabeledPmf },
    /// Elementwise sum of the input tuples equals the output tuple.
    Additive {
        inputs: Vec<Vec<String>>,
        output: Vec<String>,
    },
    /// The output tuple is the input tuple scaled per axis.
    ConstantMultiplier {
        input: Vec<String>,
        output: Vec<String>,
        factors: Vec<f64>,
        #[serde(default = "default_true")]
        interpolate_forward: bool,
        #[serde(default = "default_true")]
        interpolate_backward: bool,
    },
}

fn default_true() -> bool {
    true
}

/// How additive constraints over multi-variable tuples are realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decomposition {
    /// One tree per constraint, convolving whole tuples.
    Joint,
    /// One tree per tuple axis over single-variable hyperedges; joint
    /// tables then close loops between the axes.
    PerAxis,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSpec {
    pub format: String,
    pub p: PParam,
    pub seed: u64,
    pub scheduler: Scheduler,
    pub config: ConvergenceConfig,
    #[serde(default = "default_true")]
    pub trim: bool,
    pub dependencies: Vec<Dependency>,
}

impl ModelSpec {
    pub fn new(p: PParam) -> Self {
        ModelSpec {
            format: MODEL_FORMAT.into(),
            p,
            seed: 0,
            scheduler: Scheduler::Fifo,
            config: ConvergenceConfig::default(),
            trim: true,
            dependencies: Vec::new(),
        }
    }

    pub fn dependency(mut self, d: Dependency) -> Self {
        self.dependencies.push(d);
        self
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<ModelSpec> {
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        if spec.format != MODEL_FORMAT {
            return Err(Error::Parse(format!(
                "expected format {MODEL_FORMAT:?}, got {:?}",
                spec.format
            )));
        }
        Ok(spec)
    }

    /// Builds the passer graph for this model.
    pub fn build(&self, decomposition: Decomposition) -> Result<InferenceGraph> {
        let mut b = BetheBuilder {
            graph: InferenceGraph::new(self.p, self.seed),
            trim: if self.trim {
                TrimMode::Trimmed
            } else {
                TrimMode::Untrimmed
            },
            hyperedges: BTreeMap::new(),
        };
        // hyperedges first, so tables can attach to tuples when one
        // matches exactly
        for dep in &self.dependencies {
            match dep {
                Dependency::Additive { inputs, output } => {
                    for tuple in split_tuples(inputs, output, decomposition)?
                        .iter()
                        .flat_map(|(ins, out)| ins.iter().chain(std::iter::once(out)))
                    {
                        b.hyperedge(tuple)?;
                    }
                }
                Dependency::ConstantMultiplier { input, output, .. } => {
                    b.hyperedge(input)?;
                    b.hyperedge(output)?;
                }
                _ => {}
            }
        }
        let mut trees = 0usize;
        let mut mults = 0usize;
        let mut tables = 0usize;
        for dep in &self.dependencies {
            match dep {
                Dependency::TablePrior { table } | Dependency::Likelihood { table } => {
                    tables += 1;
                    b.attach_table(&format!("table{tables}"), table)?;
                }
                Dependency::Additive { inputs, output } => {
                    for (ins, out) in split_tuples(inputs, output, decomposition)? {
                        trees += 1;
                        b.attach_tree(&format!("sum{trees}"), &ins, &out)?;
                    }
                }
                Dependency::ConstantMultiplier {
                    input,
                    output,
                    factors,
                    interpolate_forward,
                    interpolate_backward,
                } => {
                    mults += 1;
                    b.attach_multiplier(
                        &format!("scale{mults}"),
                        input,
                        output,
                        factors,
                        *interpolate_forward,
                        *interpolate_backward,
                    )?;
                }
            }
        }
        Ok(b.graph)
    }
}

/// Splits each additive constraint per tuple axis under
/// [`Decomposition::PerAxis`]; passes it through whole otherwise.
#[allow(clippy::type_complexity)]
fn split_tuples(
    inputs: &[Vec<String>],
    output: &[String],
    decomposition: Decomposition,
) -> Result<Vec<(Vec<Vec<String>>, Vec<String>)>> {
    let rank = output.len();
    if inputs.is_empty() || output.is_empty() {
        return Err(Error::Build("an additive dependency needs input and output tuples".into()));
    }
    if inputs.iter().any(|t| t.len() != rank) {
        return Err(Error::Arity(format!(
            "additive tuples disagree on arity: {inputs:?} -> {output:?}"
        )));
    }
    match decomposition {
        Decomposition::Joint => Ok(vec![(inputs.to_vec(), output.to_vec())]),
        Decomposition::PerAxis => Ok((0..rank)
            .map(|a| {
                (
                    inputs.iter().map(|t| vec![t[a].clone()]).collect(),
                    vec![output[a].clone()],
                )
            })
            .collect()),
    }
}

struct BetheBuilder {
    graph: InferenceGraph,
    trim: TrimMode,
    /// Canonical (sorted) tuple -> hyperedge passer.
    hyperedges: BTreeMap<Vec<String>, usize>,
}

impl BetheBuilder {
    fn canonical(tuple: &[String]) -> Vec<String> {
        let mut t = tuple.to_vec();
        t.sort();
        t
    }

    fn hyperedge(&mut self, tuple: &[String]) -> Result<usize> {
        let key = Self::canonical(tuple);
        if key.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Label(format!("tuple repeats a variable: {tuple:?}")));
        }
        if let Some(&id) = self.hyperedges.get(&key) {
            return Ok(id);
        }
        let id = self.graph.add_hyperedge(&key.join(","), key.clone());
        self.hyperedges.insert(key, id);
        Ok(id)
    }

    /// Joins a table to the graph: over the matching tuple hyperedge
    /// when its variable set is one, otherwise one edge per covered
    /// variable's own hyperedge.
    fn attach_table(&mut self, name: &str, table: &LabeledPmf) -> Result<()> {
        let node = self.graph.add_table_node(name, table.clone());
        let key = Self::canonical(table.labels());
        if let Some(&h) = self.hyperedges.get(&key) {
            self.graph.connect(node, h, key)?;
            return Ok(());
        }
        for var in table.labels() {
            let h = self.hyperedge(std::slice::from_ref(var))?;
            self.graph.connect(node, h, vec![var.clone()])?;
        }
        Ok(())
    }

    fn attach_tree(&mut self, name: &str, inputs: &[Vec<String>], output: &[String]) -> Result<()> {
        let tree = self.graph.add_conv_tree(name, inputs.len(), self.trim)?;
        for (i, tuple) in inputs.iter().enumerate() {
            let h = self.hyperedge(tuple)?;
            self.graph
                .connect_tree_leaf(tree, i, h, Self::canonical(tuple))?;
        }
        let h = self.hyperedge(output)?;
        self.graph.connect_tree_sum(tree, h, Self::canonical(output))?;
        Ok(())
    }

    fn attach_multiplier(
        &mut self,
        name: &str,
        input: &[String],
        output: &[String],
        factors: &[f64],
        interpolate_forward: bool,
        interpolate_backward: bool,
    ) -> Result<()> {
        // factors follow the canonical axis order the edges use
        let canon_in = Self::canonical(input);
        let perm: Vec<usize> = canon_in
            .iter()
            .map(|l| input.iter().position(|x| x == l).unwrap())
            .collect();
        if factors.len() != input.len() || input.len() != output.len() {
            return Err(Error::Arity(format!(
                "{} factors for {} -> {}",
                factors.len(),
                input.len(),
                output.len()
            )));
        }
        let factors: Vec<f64> = perm.iter().map(|&i| factors[i]).collect();
        // the output tuple's axes pair with the input's positionally,
        // so permute it the same way before canonical ordering
        let out_for_in: Vec<String> = perm.iter().map(|&i| output[i].clone()).collect();
        let mult = self.graph.add_multiplier(
            name,
            factors,
            interpolate_forward,
            interpolate_backward,
        )?;
        let hi = self.hyperedge(&canon_in)?;
        self.graph.connect_multiplier_input(mult, hi, canon_in)?;
        // the output tuple stays in input-canonical order (not its own
        // canonical order): scale_axes relabels axis for axis
        let ho = self.hyperedge(&out_for_in)?;
        self.graph
            .connect_multiplier_output(mult, ho, out_for_in)?;
        Ok(())
    }
}

/// A deterministic coupling table between a count variable and its
/// presence indicator: mass sits exactly where `ind = (var > 0)`.
pub fn indicator_table(var: &str, ind: &str, max_count: i64) -> Result<LabeledPmf> {
    if max_count < 1 {
        return Err(Error::Domain(format!(
            "an indicator needs a positive count range, got {max_count}"
        )));
    }
    let n = (max_count + 1) as usize;
    let mut values = vec![0.0; n * 2];
    values[0] = 1.0; // count 0, indicator 0
    for c in 1..n {
        values[c * 2 + 1] = 1.0;
    }
    LabeledPmf::new(
        vec![var.into(), ind.into()],
        Pmf::from_values(vec![0, 0], vec![n, 2], values)?,
    )
}
