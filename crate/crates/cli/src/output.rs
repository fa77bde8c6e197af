//! Posterior tables, run reports, and graph renderings on disk.

use std::fs;
use std::path::{Path, PathBuf};

use addbp::pmf::LabeledPmf;
use addbp::scheduling::ConvergenceReport;
use addbp::{Error, InferenceGraph, Result};
use serde::Serialize;

/// `support<TAB>probability` rows covering the stored box of a
/// single-variable posterior.
pub fn posterior_tsv(post: &LabeledPmf) -> Result<String> {
    if post.labels().len() != 1 {
        return Err(Error::Arity(format!(
            "posterior tables are per variable, got axes {:?}",
            post.labels()
        )));
    }
    let b = post.pmf().support_box();
    let mut out = String::from("support\tprobability\n");
    for l in b.lo()[0]..=b.hi()[0] {
        out.push_str(&format!("{l}\t{}\n", post.pmf().at_label(&[l])));
    }
    Ok(out)
}

fn write(path: &Path, content: &str) -> Result<()> {
    fs::write(path, content)
        .map_err(|e| Error::Build(format!("cannot write {}: {e}", path.display())))
}

/// Writes one TSV per requested variable into `dir`, creating it if
/// needed, and returns the file paths.
pub fn write_posteriors(dir: &Path, g: &InferenceGraph, vars: &[String]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Build(format!("cannot create {}: {e}", dir.display())))?;
    let mut paths = Vec::with_capacity(vars.len());
    for var in vars {
        let post = g.posterior(var)?;
        let path = dir.join(format!("posterior_{var}.tsv"));
        write(&path, &posterior_tsv(&post)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[derive(Serialize)]
struct Report<'a> {
    command: &'a str,
    report: &'a ConvergenceReport,
    conv_ops: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    extra: Option<serde_json::Value>,
}

/// The run summary as a JSON document.
pub fn report_json(
    command: &str,
    g: &InferenceGraph,
    report: &ConvergenceReport,
    extra: Option<serde_json::Value>,
) -> Result<String> {
    serde_json::to_string_pretty(&Report {
        command,
        report,
        conv_ops: g.conv_ops(),
        extra,
    })
    .map_err(|e| Error::Parse(e.to_string()))
}

pub fn write_report(dir: &Path, json: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)
        .map_err(|e| Error::Build(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join("report.json");
    write(&path, json)?;
    Ok(path)
}

pub fn write_dot(path: &Path, g: &InferenceGraph) -> Result<()> {
    write(path, &g.to_dot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use addbp::pmf::Pmf;

    #[test]
    fn tsv_rows_cover_the_support_in_order() {
        let post = LabeledPmf::new(
            vec!["x".into()],
            Pmf::from_values(vec![-1], vec![3], vec![0.25, 0.5, 0.25]).unwrap(),
        )
        .unwrap();
        let tsv = posterior_tsv(&post).unwrap();
        assert_eq!(tsv, "support\tprobability\n-1\t0.25\n0\t0.5\n1\t0.25\n");
        let joint = LabeledPmf::new(
            vec!["x".into(), "y".into()],
            Pmf::from_values(vec![0, 0], vec![1, 1], vec![1.0]).unwrap(),
        )
        .unwrap();
        assert!(posterior_tsv(&joint).is_err());
    }
}
