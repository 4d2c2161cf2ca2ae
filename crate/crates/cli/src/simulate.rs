use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use netexposure::synth::{run_replication, HarnessConfig, NetworkSpec, ReplicationBundle, TreeSpec};
use netexposure::tree::ScoreKind;

use crate::manifest::{OutDir, RunManifest, Timer};
use crate::{report, Validation};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    WsBernoulli,
    WsCluster,
    External,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SimulateArgs {
    /// Harness config (JSON or TOML). Flags below override it.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Edge list for `--preset external`.
    #[arg(long)]
    pub network: Option<PathBuf>,
    /// Node count for the Watts-Strogatz presets.
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Number of replications; seeds run from `--seed` upward.
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Also fit a tree (t-statistic score, gamma 1.96, kappa 100).
    #[arg(long)]
    pub tree: bool,
    #[command(flatten)]
    pub common: crate::Common,
}

fn base_config(args: &SimulateArgs) -> Result<HarnessConfig> {
    let mut cfg = match (&args.config, args.preset) {
        (Some(p), _) => HarnessConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        (None, Some(Preset::WsCluster)) => HarnessConfig::ws_cluster(),
        (None, Some(Preset::External)) => {
            let net = args
                .network
                .clone()
                .ok_or_else(|| Validation("--preset external needs --network".into()))?;
            HarnessConfig::external(net)
        }
        (None, _) => HarnessConfig::ws_bernoulli(),
    };
    if let Some(net) = &args.network {
        cfg.network = NetworkSpec::EdgeList { path: net.clone(), attributes: None };
    }
    if let Some(nodes) = args.nodes {
        match &mut cfg.network {
            NetworkSpec::WattsStrogatz { n, .. } => *n = nodes,
            NetworkSpec::EdgeList { .. } => return Err(Validation("--nodes applies to generated networks".into()).into()),
        }
    }
    let c = &args.common;
    cfg.replicates = c.replicates;
    cfg.bootstrap = c.bootstrap;
    cfg.positivity.epsilon = c.epsilon;
    cfg.positivity.delta = c.delta;
    if args.tree {
        cfg.tree = Some(TreeSpec { score: ScoreKind::TStat, gamma: 1.96, kappa: 100, max_depth: None });
    }
    cfg.validate()?;
    Ok(cfg)
}

pub const SUMMARY_HEADER: &str =
    "seed,n,tau,mu1,mu0,naive,knn_selected_K,knn_selected,knn_smallest_K,knn_smallest,fractional_matched,fracq,tree_gate";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn summary_line(b: &ReplicationBundle) -> String {
    let smallest = ReplicationBundle::smallest_passing(&b.sweep);
    let matched = smallest.and_then(|s| b.sweep_fractional.iter().find(|r| r.k == s.k)).map(|r| r.tau);
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{}",
        b.seed,
        b.node_count,
        b.truth.tau,
        b.truth.mu1,
        b.truth.mu0,
        b.naive,
        b.selected.as_ref().map(|r| r.k.to_string()).unwrap_or_default(),
        fmt_opt(b.selected.as_ref().map(|r| r.tau)),
        smallest.map(|r| r.k.to_string()).unwrap_or_default(),
        fmt_opt(smallest.map(|r| r.tau)),
        fmt_opt(matched),
        fmt_opt(b.fracq.as_ref().map(|f| f.effect.point)),
        fmt_opt(b.tree_gate.as_ref().map(|g| g.point)),
    )
}

pub fn run(args: SimulateArgs) -> Result<()> {
    crate::init_threads(args.common.threads);
    if args.seeds == 0 {
        return Err(Validation("--seeds must be at least 1".into()).into());
    }
    let base = base_config(&args)?;
    let mut manifest = RunManifest::new(
        "simulate",
        serde_json::json!({ "args": args, "harness": base }),
    );
    if let Some(p) = &args.config {
        manifest.add_input("config", p)?;
    }
    if let NetworkSpec::EdgeList { path, .. } = &base.network {
        manifest.add_input("network", path)?;
    }
    manifest.seeds.insert("master".into(), args.common.seed);
    manifest.seal();

    let mut out = OutDir::create(&args.common.out_dir)?;
    let mut timer = Timer::start();
    let mut lines = vec![SUMMARY_HEADER.to_string()];
    for s in 0..args.seeds {
        let cfg = HarnessConfig { seed: args.common.seed + s, ..base.clone() };
        let bundle = run_replication(&cfg).with_context(|| format!("replication with seed {}", cfg.seed))?;
        lines.push(summary_line(&bundle));
        out.write_json(&format!("bundles/seed_{}.json", cfg.seed), &bundle)?;
        if let Some(t) = &bundle.tree {
            out.write_json(&format!("bundles/seed_{}_tree.json", cfg.seed), &t.to_json())?;
        }
        timer.lap(&mut manifest, &format!("seed_{}", cfg.seed));
    }
    out.write_with("summary.csv", |w| {
        for l in &lines {
            writeln!(w, "{l}")?;
        }
        Ok(())
    })?;
    let md = report::render(&manifest, &out.dir)?;
    out.write_text("report.md", &md)?;
    out.finish(manifest)
}
