use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde_json::Value;

use crate::manifest::{missing, RunManifest};

#[derive(Args, Debug, Clone)]
pub struct ReportArgs {
    /// Run directory holding manifest.json and its artifacts.
    #[arg(long)]
    pub dir: PathBuf,
    /// Output path; defaults to `<dir>/report.md`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: ReportArgs) -> Result<()> {
    let manifest = RunManifest::load(&args.dir)?;
    let md = render(&manifest, &args.dir)?;
    let out = args.out.unwrap_or_else(|| args.dir.join("report.md"));
    fs::write(&out, md).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let p = dir.join(name);
    fs::read_to_string(&p).map_err(|_| missing(&p))
}

fn read_json(dir: &Path, name: &str) -> Result<Value> {
    Ok(serde_json::from_str(&read(dir, name)?).with_context(|| format!("parsing {name}"))?)
}

fn num(v: &Value) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "n/a".into(),
    }
}

/// Markdown summary of a run. Uses only reproducible fields, so
/// re-rendering a directory gives the same bytes.
pub fn render(manifest: &RunManifest, dir: &Path) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "# netexposure {} report\n", manifest.command)?;
    writeln!(s, "- run id: `{}`", manifest.run_id)?;
    writeln!(s, "- version: {}", manifest.version)?;
    for (k, v) in &manifest.seeds {
        writeln!(s, "- seed {k}: {v}")?;
    }
    s.push('\n');
    match manifest.command.as_str() {
        "analyze" => render_analyze(&mut s, dir)?,
        "simulate" => render_simulate(&mut s, dir)?,
        other => anyhow::bail!(crate::Validation(format!("unknown command {other:?} in manifest"))),
    }
    Ok(s)
}

fn render_analyze(s: &mut String, dir: &Path) -> Result<()> {
    let est = read_json(dir, "estimates.json")?;
    writeln!(
        s,
        "Design `{}`, {} units ({} treated), {} replicates.\n",
        est["design"].as_str().unwrap_or("?"),
        est["n"],
        est["treated"],
        est["replicates"]
    )?;
    match est["mode"].as_str() {
        Some("tree") => render_tree(s, &est)?,
        Some("knn") => render_sweep(s, &est, dir)?,
        Some("fracq") => render_fracq(s, &est)?,
        _ => anyhow::bail!(crate::Validation("estimates.json has no known mode".into())),
    }
    if let Some(f) = est["positivity_failures"].as_array().filter(|f| !f.is_empty()) {
        writeln!(s, "\n## Positivity failures\n")?;
        for x in f {
            writeln!(s, "- {}", x.as_str().unwrap_or(""))?;
        }
    }
    Ok(())
}

fn render_tree(s: &mut String, est: &Value) -> Result<()> {
    writeln!(s, "## Leaves\n")?;
    writeln!(s, "| leaf | mu | se | n_train | n_est | positivity |")?;
    writeln!(s, "|---|---|---|---|---|---|")?;
    let mut leaves: Vec<&Value> = est["leaves"].as_array().map(|a| a.iter().collect()).unwrap_or_default();
    leaves.sort_by(|a, b| {
        let (x, y) = (a["mu"].as_f64().unwrap_or(f64::NAN), b["mu"].as_f64().unwrap_or(f64::NAN));
        x.total_cmp(&y)
    });
    for l in leaves {
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} |",
            l["label"].as_str().unwrap_or("?"),
            num(&l["mu"]),
            num(&l["se"]),
            l["n_train"],
            l["n_est"],
            if l["positivity"]["ok"].as_bool() == Some(true) { "ok" } else { "FAIL" }
        )?;
    }
    if est["gate"].is_object() {
        let g = &est["gate"];
        writeln!(s, "\nGate effect ({}): {} ± {}", g["label"].as_str().unwrap_or(""), num(&g["point"]), num(&g["se"]))?;
    }
    writeln!(s, "\n## Tree\n\n```\n{}```", est["tree_ascii"].as_str().unwrap_or(""))?;
    Ok(())
}

fn render_sweep(s: &mut String, est: &Value, dir: &Path) -> Result<()> {
    let csv = read(dir, "sweep.csv")?;
    writeln!(s, "## K sweep (metric {})\n", est["metric"]["kind"].as_str().unwrap_or("?"))?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    writeln!(s, "| {} |", header.join(" | "))?;
    writeln!(s, "|{}", "---|".repeat(header.len()))?;
    for l in lines {
        writeln!(s, "| {} |", l.split(',').collect::<Vec<_>>().join(" | "))?;
    }
    match est["selected"].as_object() {
        Some(r) => writeln!(
            s,
            "\nSelected under {}: K = {}, tau = {} ± {}",
            est["assumption"].as_str().unwrap_or("?"),
            r["K"],
            num(&r["tau"]),
            num(&r["se_tau"])
        )?,
        None => writeln!(s, "\nNo K passed positivity; no estimate selected.")?,
    }
    Ok(())
}

fn render_fracq(s: &mut String, est: &Value) -> Result<()> {
    let f = &est["fracq"];
    writeln!(s, "## Fractional q exposure (q = {}, share dim {})\n", f["q"], f["share_dim"].as_str().unwrap_or("?"))?;
    writeln!(s, "| cell | estimate | se | members | positivity |")?;
    writeln!(s, "|---|---|---|---|---|")?;
    for c in f["cells"].as_array().into_iter().flatten() {
        writeln!(
            s,
            "| {} | {} | {} | {} | {} |",
            c["label"].as_str().unwrap_or("?"),
            num(&c["point"]),
            num(&c["se"]),
            c["member_count"],
            if c["positivity"]["ok"].as_bool() == Some(true) { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(s, "\nEffect: {} ± {}", num(&f["effect"]["point"]), num(&f["effect"]["se"]))?;
    Ok(())
}

fn render_simulate(s: &mut String, dir: &Path) -> Result<()> {
    let csv = read(dir, "summary.csv")?;
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    let col = |name: &str| header.iter().position(|h| *h == name);
    let tau = col("tau").context("summary.csv lacks tau")?;
    writeln!(s, "## Bias against the oracle effect ({} seeds)\n", rows.len())?;
    writeln!(s, "| method | runs | mean bias | mean abs bias | rmse |")?;
    writeln!(s, "|---|---|---|---|---|")?;
    for method in ["naive", "knn_selected", "knn_smallest", "fractional_matched", "fracq", "tree_gate"] {
        let Some(c) = col(method) else { continue };
        let bias: Vec<f64> = rows
            .iter()
            .filter_map(|r| Some(r.get(c)?.parse::<f64>().ok()? - r.get(tau)?.parse::<f64>().ok()?))
            .collect();
        if bias.is_empty() {
            continue;
        }
        let k = bias.len() as f64;
        writeln!(
            s,
            "| {method} | {} | {:.4} | {:.4} | {:.4} |",
            bias.len(),
            bias.iter().sum::<f64>() / k,
            bias.iter().map(|b| b.abs()).sum::<f64>() / k,
            (bias.iter().map(|b| b * b).sum::<f64>() / k).sqrt()
        )?;
    }
    Ok(())
}
