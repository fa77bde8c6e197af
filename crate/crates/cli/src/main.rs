use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use addbp::builders::{Decomposition, ModelSpec};
use addbp::convolution::PParam;
use addbp::scheduling::{run, ConvergenceReport, Scheduler};
use addbp::{Error, InferenceGraph, Result};
use clap::{Args, Parser, Subcommand};

use addbp_cli::demos::{self, HmmParams, PeptideMode};
use addbp_cli::output;

#[derive(Parser)]
#[command(name = "addbp", version, about = "Belief propagation with additive dependencies")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Inference norm: 1 (sum-product), a finite real >= 1, or "inf"
    /// (max-product).
    #[arg(long, global = true, value_parser = parse_p)]
    p: Option<PParam>,
    /// Message schedule (defaults to the command's natural choice).
    #[arg(long, global = true, value_parser = parse_scheduler)]
    scheduler: Option<Scheduler>,
    /// Convergence threshold on mean squared message deviation.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[arg(long, global = true)]
    max_messages: Option<u64>,
    /// Weight kept on the old message when a new one arrives, in [0, 1).
    #[arg(long, global = true)]
    dampening: Option<f64>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Write the passer graph in Graphviz format.
    #[arg(long, global = true, value_name = "FILE")]
    dot: Option<PathBuf>,
    /// Disable support trimming in convolution trees.
    #[arg(long, global = true)]
    no_trim: bool,
    /// Directory for posterior tables and the run report.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Export the constructed model as JSON before solving.
    #[arg(long, global = true, value_name = "FILE")]
    export_model: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a model file produced by --export-model (or by hand).
    Solve {
        model: PathBuf,
        /// Where posterior tables go.
        output_dir: PathBuf,
    },
    /// Which subset sums are attainable, and is the target among them?
    SubsetSum {
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        #[arg(long)]
        target: u64,
    },
    /// Best-scoring item subset reaching the target exactly.
    Knapsack {
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u64>,
        /// Per-item inclusion probabilities, strictly between 0 and 1.
        #[arg(long, value_delimiter = ',', required = true)]
        priors: Vec<f64>,
        #[arg(long)]
        target: u64,
    },
    /// Split a bill: who ordered what, given menu priors and the total.
    Restaurant {
        #[arg(long, default_value_t = 4)]
        n: usize,
    },
    /// Classify DNA positions into GC-rich and GC-poor states.
    Hmm {
        /// File of G/C/A/T symbols (whitespace ignored).
        #[arg(long, conflicts_with = "synthetic")]
        sequence: Option<PathBuf>,
        /// Generate a sequence of this length from the model instead.
        #[arg(long)]
        synthetic: Option<usize>,
        #[arg(long, default_value_t = 0.9)]
        stay: f64,
        /// GC-rich state emission weights for G,C,A,T.
        #[arg(long, value_delimiter = ',', num_args = 4)]
        rich_emit: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', num_args = 4)]
        poor_emit: Option<Vec<f64>>,
    },
    /// Amino-acid composition from total mass and hydrophobicity.
    Peptide {
        #[arg(long)]
        mass: f64,
        #[arg(long, allow_hyphen_values = true)]
        hydro: Option<f64>,
        #[arg(long, conflicts_with = "hydro_only")]
        mass_only: bool,
        #[arg(long)]
        hydro_only: bool,
    },
    /// Element counts from an isotope-pattern mass spectrum.
    Isotopes {
        /// Generating composition, e.g. Ni3V2Cl4.
        #[arg(long)]
        composition: String,
        /// Cap on how many elements may be present.
        #[arg(long)]
        regularize: Option<i64>,
        #[arg(long, default_value_t = 15)]
        max_count: i64,
    },
}

fn parse_p(text: &str) -> std::result::Result<PParam, String> {
    match text {
        "inf" | "infinity" | "max" => Ok(PParam::infinity()),
        _ => text
            .parse::<f64>()
            .map_err(|e| e.to_string())
            .and_then(|v| PParam::new(v).map_err(|e| e.to_string())),
    }
}

fn parse_scheduler(text: &str) -> std::result::Result<Scheduler, String> {
    match text {
        "fifo" => Ok(Scheduler::Fifo),
        "priority" => Ok(Scheduler::Priority),
        "subtree" => Ok(Scheduler::RandomSubtree),
        "chain" => Ok(Scheduler::Chain),
        _ => Err(format!("unknown scheduler {text:?}")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Contradiction(_) => ExitCode::from(2),
                Error::Parse(_) | Error::Domain(_) | Error::Label(_) | Error::Arity(_) => {
                    ExitCode::from(4)
                }
                _ => ExitCode::from(1),
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Solve { model, output_dir } => {
            let text = fs::read_to_string(model)
                .map_err(|e| Error::Parse(format!("cannot read {}: {e}", model.display())))?;
            let mut spec = ModelSpec::from_json(&text)?;
            apply_overrides(&mut spec, &cli.common);
            let (g, report) = solve_spec(&spec, &cli.common)?;
            let vars = g.variables();
            output::write_posteriors(output_dir, &g, &vars)?;
            let json = output::report_json("solve", &g, &report, None)?;
            output::write_report(output_dir, &json)?;
            println!("{json}");
            Ok(exit_for(&report))
        }
        Command::SubsetSum { values, target } => {
            let ans = demos::subset_sum(values, *target)?;
            let json = serde_json::json!({
                "command": "subset-sum",
                "target": target,
                "attainable": ans.attainable,
                "target_attainable": ans.target_attainable,
            });
            println!("{}", serde_json::to_string_pretty(&json).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::Knapsack {
            values,
            priors,
            target,
        } => {
            let ans = demos::knapsack(values, priors, *target)?;
            let posteriors: Vec<serde_json::Value> = ans
                .item_posteriors
                .iter()
                .map(|[out, inn]| {
                    let t = out + inn;
                    if t > 0.0 {
                        serde_json::json!({"out": out / t, "in": inn / t})
                    } else {
                        serde_json::json!({"out": 0.0, "in": 0.0})
                    }
                })
                .collect();
            let json = serde_json::json!({
                "command": "knapsack",
                "target": target,
                "best_score": ans.best_score,
                "item_posteriors": posteriors,
                "witness": ans.witness,
            });
            println!("{}", serde_json::to_string_pretty(&json).unwrap());
            Ok(ExitCode::SUCCESS)
        }
        Command::Restaurant { n } => {
            let p = cli.common.p.unwrap_or(PParam::one());
            let inst = demos::restaurant(*n, cli.common.seed, p, !cli.common.no_trim)?;
            let mut spec = inst.spec;
            apply_overrides(&mut spec, &cli.common);
            let (g, report) = solve_spec(&spec, &cli.common)?;
            if let Some(dir) = &cli.common.out {
                let vars: Vec<String> = (0..*n).map(|i| format!("c{i}")).collect();
                output::write_posteriors(dir, &g, &vars)?;
            }
            let extra = serde_json::json!({
                "customers": n,
                "total": inst.total,
                "order": inst.order,
            });
            let json = output::report_json("restaurant", &g, &report, Some(extra))?;
            if let Some(dir) = &cli.common.out {
                output::write_report(dir, &json)?;
            }
            println!("{json}");
            Ok(exit_for(&report))
        }
        Command::Hmm {
            sequence,
            synthetic,
            stay,
            rich_emit,
            poor_emit,
        } => {
            let mut params = HmmParams::default();
            params.stay = *stay;
            if let Some(r) = rich_emit {
                params.rich_emit = [r[0], r[1], r[2], r[3]];
            }
            if let Some(r) = poor_emit {
                params.poor_emit = [r[0], r[1], r[2], r[3]];
            }
            let obs: Vec<usize> = match (sequence, synthetic) {
                (Some(path), None) => {
                    let text = fs::read_to_string(path).map_err(|e| {
                        Error::Parse(format!("cannot read {}: {e}", path.display()))
                    })?;
                    text.bytes()
                        .filter(|b| !b.is_ascii_whitespace())
                        .map(|b| {
                            demos::base_index(b).ok_or_else(|| {
                                Error::Parse(format!("symbol {:?} is not G, C, A, or T", b as char))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                (None, Some(len)) => demos::synthetic_genome(*len, cli.common.seed, &params),
                _ => {
                    return Err(Error::Parse(
                        "pass exactly one of --sequence or --synthetic".into(),
                    ))
                }
            };
            let p = cli.common.p.unwrap_or(PParam::one());
            let mut spec = demos::hmm_model(&obs, &params, p)?;
            apply_overrides(&mut spec, &cli.common);
            let (g, report) = solve_spec(&spec, &cli.common)?;
            if let Some(dir) = &cli.common.out {
                fs::create_dir_all(dir)
                    .map_err(|e| Error::Build(format!("cannot create {}: {e}", dir.display())))?;
                let mut track = String::from(if p.is_infinite() {
                    "position\tp_rich\tmap_state\n"
                } else {
                    "position\tp_rich\n"
                });
                for i in 0..obs.len() {
                    let post = g.posterior(&format!("s{i}"))?;
                    let rich = post.pmf().at_label(&[0]);
                    if p.is_infinite() {
                        let state = usize::from(post.pmf().at_label(&[1]) > rich);
                        track.push_str(&format!("{i}\t{rich}\t{state}\n"));
                    } else {
                        track.push_str(&format!("{i}\t{rich}\n"));
                    }
                }
                fs::write(dir.join("track.tsv"), track)
                    .map_err(|e| Error::Build(e.to_string()))?;
            }
            let extra = serde_json::json!({"positions": obs.len()});
            let json = output::report_json("hmm", &g, &report, Some(extra))?;
            if let Some(dir) = &cli.common.out {
                output::write_report(dir, &json)?;
            }
            println!("{json}");
            Ok(exit_for(&report))
        }
        Command::Peptide {
            mass,
            hydro,
            mass_only,
            hydro_only,
        } => {
            let mode = match (mass_only, hydro_only) {
                (true, false) => PeptideMode::MassOnly,
                (false, true) => PeptideMode::HydroOnly,
                (false, false) => PeptideMode::Both,
                (true, true) => unreachable!("clap rejects the conflict"),
            };
            let hydro = match (mode, hydro) {
                (PeptideMode::MassOnly, _) => 0.0,
                (_, Some(h)) => *h,
                (_, None) => {
                    return Err(Error::Parse(
                        "--hydro is required unless --mass-only is set".into(),
                    ))
                }
            };
            let p = cli.common.p.unwrap_or(PParam::infinity());
            let mut spec = demos::peptide_model(*mass, hydro, mode, p)?;
            apply_overrides(&mut spec, &cli.common);
            let (g, report) = solve_spec(&spec, &cli.common)?;
            let vars: Vec<String> = addbp_cli::tables::AMINO_ACIDS
                .iter()
                .map(|(c, _, _)| format!("n_{c}"))
                .collect();
            if let Some(dir) = &cli.common.out {
                output::write_posteriors(dir, &g, &vars)?;
            }
            let mut map = serde_json::Map::new();
            for var in &vars {
                let post = g.posterior(var)?;
                let b = post.pmf().support_box();
                let argmax = (b.lo()[0]..=b.hi()[0])
                    .max_by(|a, b| {
                        post.pmf()
                            .at_label(&[*a])
                            .total_cmp(&post.pmf().at_label(&[*b]))
                    })
                    .unwrap();
                map.insert(var.clone(), serde_json::json!(argmax));
            }
            let json = output::report_json(
                "peptide",
                &g,
                &report,
                Some(serde_json::Value::Object(map)),
            )?;
            if let Some(dir) = &cli.common.out {
                output::write_report(dir, &json)?;
            }
            println!("{json}");
            Ok(exit_for(&report))
        }
        Command::Isotopes {
            composition,
            regularize,
            max_count,
        } => {
            let comp = demos::parse_composition(composition)?;
            let p = cli.common.p.unwrap_or(PParam::one());
            let inst = demos::isotope_model(&comp, *regularize, *max_count, p)?;
            let mut spec = inst.spec;
            apply_overrides(&mut spec, &cli.common);
            let (g, report) = solve_spec(&spec, &cli.common)?;
            let vars: Vec<String> = addbp_cli::tables::ELEMENTS
                .iter()
                .map(|(s, _)| format!("n_{s}"))
                .collect();
            if let Some(dir) = &cli.common.out {
                output::write_posteriors(dir, &g, &vars)?;
            }
            let extra = serde_json::json!({
                "composition": comp.iter().map(|(s, c)| format!("{s}{c}")).collect::<String>(),
                "peaks": inst.spectrum.len(),
            });
            let json = output::report_json("isotopes", &g, &report, Some(extra))?;
            if let Some(dir) = &cli.common.out {
                output::write_report(dir, &json)?;
            }
            println!("{json}");
            Ok(exit_for(&report))
        }
    }
}

/// Command-line flags win over whatever the model file or demo chose.
fn apply_overrides(spec: &mut ModelSpec, common: &Common) {
    if let Some(p) = common.p {
        spec.p = p;
    }
    if let Some(s) = common.scheduler {
        spec.scheduler = s;
    }
    if let Some(e) = common.epsilon {
        spec.config.epsilon = e;
    }
    if let Some(m) = common.max_messages {
        spec.config.max_messages = m;
    }
    if let Some(d) = common.dampening {
        spec.config.dampening = d;
    }
    if common.no_trim {
        spec.trim = false;
    }
    spec.seed = common.seed;
}

fn solve_spec(spec: &ModelSpec, common: &Common) -> Result<(InferenceGraph, ConvergenceReport)> {
    if let Some(path) = &common.export_model {
        fs::write(path, spec.to_json()?)
            .map_err(|e| Error::Build(format!("cannot write {}: {e}", path.display())))?;
    }
    let mut g = spec.build(Decomposition::Joint)?;
    if let Some(path) = &common.dot {
        output::write_dot(path, &g)?;
    }
    let report = run(spec.scheduler, &mut g, &spec.config)?;
    Ok((g, report))
}

fn exit_for(report: &ConvergenceReport) -> ExitCode {
    if report.converged {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}
