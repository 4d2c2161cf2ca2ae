use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::json;

use netexposure::estimators::EstimatorKind;
use netexposure::exposure::{ExposureCondition, ExposureProbabilityTable, Positivity, ReplicateCache};
use netexposure::fracq::{fractional_q_report, FracqOptions};
use netexposure::graph::{load_edge_list, read_outcomes, AttrIdPolicy, Graph};
use netexposure::knn::{
    fit_metric, k_grid_from_fractions, knn_condition, select_estimate, sweep_k, write_sweep_csv, Assumption,
    MetricKind, SweepConfig, SweepData,
};
use netexposure::motif::{
    reference_representations, Dim, MotifSchema, RepresentationBuilder, SamplingConfig, UniformSource,
};
use netexposure::randomization::{recursive_kl_partition, AssignmentVector, ClusterPartition, RandomizationDesign};
use netexposure::seeds;
use netexposure::tree::{fit_tree, ScoreKind, ThresholdMode, TreeData, TreeHyperparams};

use crate::manifest::{OutDir, RunManifest, Timer};
use crate::{report, Common, PositivityFailure, Validation};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tree,
    Knn,
    Fracq,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignArg {
    Bernoulli,
    Cluster,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreArg {
    T,
    Wsse,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct AnalyzeArgs {
    /// Whitespace-separated edge list.
    #[arg(long)]
    pub graph: PathBuf,
    /// `node_id,<attr>...` CSV.
    #[arg(long)]
    pub attrs: Option<PathBuf>,
    /// `node_id,z` CSV of the realized assignment.
    #[arg(long)]
    pub assignment: PathBuf,
    /// `node_id,y` CSV of observed outcomes.
    #[arg(long)]
    pub outcomes: PathBuf,
    #[arg(long, value_enum, default_value_t = DesignArg::Bernoulli)]
    pub design: DesignArg,
    #[arg(long, default_value_t = 0.5)]
    pub p: f64,
    /// Bisection levels for the cluster design (2^levels clusters).
    #[arg(long, default_value_t = 9)]
    pub levels: u32,
    /// `node_id,cluster` CSV; overrides `--levels`.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    /// Comma-separated dimension codes, e.g. `Z,2-1,3c-2`.
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long, value_enum, default_value_t = Mode::Tree)]
    pub mode: Mode,
    #[arg(long, default_value = "hajek")]
    pub estimator: String,

    #[arg(long, value_enum, default_value_t = ScoreArg::T)]
    pub score: ScoreArg,
    /// Minimum split score.
    #[arg(long, default_value_t = 1.96)]
    pub gamma: f64,
    /// Minimum training units per child.
    #[arg(long, default_value_t = 100)]
    pub kappa: usize,
    #[arg(long)]
    pub max_depth: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub honest_fraction: f64,

    /// `identical` or `regcoef`.
    #[arg(long, default_value = "regcoef")]
    pub metric: String,
    /// K values as percentages of N.
    #[arg(long, value_delimiter = ',', default_values_t = vec![1.0, 2.0, 5.0, 10.0, 20.0, 50.0])]
    pub k_grid: Vec<f64>,
    /// `nonnegative` or `nonpositive` interference.
    #[arg(long, default_value = "nonnegative")]
    pub assume: String,
    #[arg(long)]
    pub se_cap: Option<f64>,

    /// Treated-neighbor share threshold for `--mode fracq`.
    #[arg(long, default_value_t = 0.5)]
    pub q: f64,

    /// Report positivity failures without a non-zero exit.
    #[arg(long)]
    pub allow_positivity_violations: bool,

    #[command(flatten)]
    pub common: Common,
}

fn open(path: &Path, role: &str) -> Result<File> {
    File::open(path).with_context(|| format!("opening {role} file {}", path.display()))
}

fn load_graph(graph: &Path, attrs: Option<&Path>) -> Result<Graph> {
    let edges = BufReader::new(open(graph, "graph")?);
    let attrs = attrs.map(|p| open(p, "attribute")).transpose()?;
    let (g, stats) = load_edge_list(edges, attrs, AttrIdPolicy::RequireKnown)
        .with_context(|| format!("loading {}", graph.display()))?;
    if stats.dropped() > 0 {
        eprintln!("note: dropped {} self-loops or duplicate edges", stats.dropped());
    }
    Ok(g)
}

/// Default schema, without attribute-conditioned dims when the graph has
/// no attribute table.
fn choose_schema(arg: Option<&str>, mode: Mode, g: &Graph) -> Result<MotifSchema> {
    if let Some(s) = arg {
        return Ok(MotifSchema::parse(s)?);
    }
    if mode == Mode::Fracq {
        return Ok(MotifSchema::fractional());
    }
    let full = MotifSchema::default_schema();
    let keep: Vec<String> = full
        .dims()
        .iter()
        .filter(|d| !matches!(d, Dim::AttrConditioned { column, .. } if g.attr(column).is_none()))
        .map(|d| d.to_string())
        .collect();
    Ok(MotifSchema::parse(&keep.join(","))?)
}

pub fn run(args: AnalyzeArgs) -> Result<()> {
    crate::init_threads(args.common.threads);
    let c = &args.common;
    let mut manifest = RunManifest::new("analyze", serde_json::to_value(&args)?);
    let mut timer = Timer::start();
    let estimator: EstimatorKind = args.estimator.parse()?;
    let positivity = Positivity { epsilon: c.epsilon, delta: c.delta };

    let g = load_graph(&args.graph, args.attrs.as_deref())?;
    manifest.add_input("graph", &args.graph)?;
    if let Some(a) = &args.attrs {
        manifest.add_input("attrs", a)?;
    }
    let assign_seed = seeds::labeled(c.seed, "assignment");
    let z = AssignmentVector::read_csv(&g, open(&args.assignment, "assignment")?, "observed", assign_seed)
        .context("reading assignment")?;
    manifest.add_input("assignment", &args.assignment)?;
    let y = read_outcomes(&g, open(&args.outcomes, "outcome")?).context("reading outcomes")?;
    manifest.add_input("outcomes", &args.outcomes)?;
    let n = g.node_count();

    for name in ["uniform", "replicates", "bootstrap", "honest", "partition"] {
        manifest.seeds.insert(name.into(), seeds::labeled(c.seed, name));
    }
    manifest.seeds.insert("master".into(), c.seed);
    let design = match args.design {
        DesignArg::Bernoulli => RandomizationDesign::bernoulli(n, args.p)?,
        DesignArg::Cluster => {
            let part = match &args.partition {
                Some(p) => {
                    manifest.add_input("partition", p)?;
                    ClusterPartition::read_csv(&g, open(p, "partition")?).context("reading partition")?
                }
                None => recursive_kl_partition(&g, args.levels, manifest.seeds["partition"])?,
            };
            RandomizationDesign::cluster(part, args.p)?
        }
    };
    let schema = choose_schema(args.schema.as_deref(), args.mode, &g)?;
    schema.validate(&g)?;
    timer.lap(&mut manifest, "load");

    let builder = RepresentationBuilder::new(&g, &schema, &SamplingConfig::default())?;
    let observed = builder.build(&z.z, UniformSource::Seeded(manifest.seeds["uniform"]))?;
    let cache = ReplicateCache::build(&builder, &design, c.replicates, manifest.seeds["replicates"])?;
    timer.lap(&mut manifest, "representations");
    manifest.seal();

    let mut out = OutDir::create(&c.out_dir)?;
    out.write_with("representations.csv", |w| Ok(observed.write_csv(&g, w)?))?;
    let clusters = design.partition();
    let boot_seed = manifest.seeds["bootstrap"];

    let mut failures: Vec<String> = Vec::new();
    let mut estimates = json!({
        "run_id": manifest.run_id,
        "mode": args.mode,
        "design": design.tag(),
        "n": n,
        "treated": z.treated_count(),
        "schema": schema.codes(),
        "replicates": c.replicates,
    });

    match args.mode {
        Mode::Tree => {
            let mut params = TreeHyperparams::new(
                match args.score {
                    ScoreArg::T => ScoreKind::TStat,
                    ScoreArg::Wsse => ScoreKind::Wsse,
                },
                args.gamma,
                args.kappa,
            );
            params.positivity = positivity;
            params.honest_fraction = args.honest_fraction;
            params.max_depth = args.max_depth;
            params.threshold_mode = ThresholdMode::for_size(n);
            params.estimator = estimator;
            params.bootstrap = c.bootstrap;
            params.bootstrap_seed = boot_seed;
            let data = TreeData { observed: &observed, y: &y, cache: &cache, clusters };
            let tree = fit_tree(&data, &params, manifest.seeds["honest"])?;
            timer.lap(&mut manifest, "fit");

            let conds: Vec<ExposureCondition> = tree
                .leaves()
                .iter()
                .map(|l| ExposureCondition::boxed(l.label.clone(), l.region.clone()))
                .collect();
            let table = ExposureProbabilityTable::from_cache(&cache, &conds);
            out.write_with("probs.csv", |w| Ok(table.write_csv(&g, w)?))?;
            out.write_json("tree.json", &tree.to_json())?;
            out.write_text("tree.dot", &tree.to_dot())?;
            for l in tree.leaves() {
                if !l.positivity.ok {
                    failures.push(format!("{} violating fraction {:.4}", l.label, l.positivity.violating_fraction));
                }
            }
            let gate = match reference_representations(&schema) {
                Ok(refs) => Some(tree.gate_effect(&refs)?.without_draws()),
                Err(e) => {
                    eprintln!("note: no gate effect: {e}");
                    None
                }
            };
            estimates["leaves"] = serde_json::to_value(tree.leaves())?;
            estimates["gate"] = serde_json::to_value(gate)?;
            estimates["params"] = serde_json::to_value(&tree.params)?;
            estimates["tree_ascii"] = tree.to_ascii().into();
        }
        Mode::Knn => {
            let metric_kind: MetricKind = args.metric.parse()?;
            let assumption: Assumption = args.assume.parse()?;
            let refs = reference_representations(&schema)?;
            let metric = fit_metric(&observed, &y, metric_kind)?;
            if args.k_grid.iter().any(|p| !(*p > 0.0 && *p <= 100.0)) {
                return Err(Validation("--k-grid values are percentages in (0, 100]".into()).into());
            }
            let fr: Vec<f64> = args.k_grid.iter().map(|p| p / 100.0).collect();
            let mut sc = SweepConfig::new(k_grid_from_fractions(n, &fr));
            sc.positivity = positivity;
            sc.estimator = estimator;
            sc.bootstrap = c.bootstrap;
            sc.bootstrap_seed = boot_seed;
            let data = SweepData { observed: &observed, y: &y, cache: &cache, clusters };
            let rows = sweep_k(&data, &metric, &refs, &sc)?;
            timer.lap(&mut manifest, "sweep");

            let conds: Vec<ExposureCondition> = sc
                .k_grid
                .iter()
                .flat_map(|&k| {
                    [
                        knn_condition(&metric, &refs.r1, k, format!("K{k}_treated")),
                        knn_condition(&metric, &refs.r0, k, format!("K{k}_control")),
                    ]
                })
                .collect();
            let table = ExposureProbabilityTable::from_cache(&cache, &conds);
            out.write_with("probs.csv", |w| Ok(table.write_csv(&g, w)?))?;
            out.write_with("sweep.csv", |w| Ok(write_sweep_csv(&rows, w)?))?;
            let selected = select_estimate(&rows, assumption, args.se_cap);
            if let Err(e) = &selected {
                failures.push(e.to_string());
            }
            estimates["metric"] = serde_json::to_value(&metric)?;
            estimates["assumption"] = serde_json::to_value(assumption)?;
            estimates["rows"] = serde_json::to_value(&rows)?;
            estimates["selected"] = serde_json::to_value(selected.as_ref().ok())?;
        }
        Mode::Fracq => {
            let opts = FracqOptions {
                q: args.q,
                estimator,
                positivity,
                bootstrap: c.bootstrap,
                bootstrap_seed: boot_seed,
                clusters,
            };
            let rep = fractional_q_report(&observed, &y, &cache, &opts)?.without_draws();
            timer.lap(&mut manifest, "estimate");
            let s = netexposure::fracq::share_dim(&observed)?;
            let conds: Vec<ExposureCondition> = [(true, true), (true, false), (false, true), (false, false)]
                .iter()
                .map(|&(t, a)| ExposureCondition::fractional_q(schema.len(), s, args.q, t, a))
                .collect();
            let table = ExposureProbabilityTable::from_cache(&cache, &conds);
            out.write_with("probs.csv", |w| Ok(table.write_csv(&g, w)?))?;
            for cell in [&rep.cells[0], &rep.cells[3]] {
                if !cell.positivity.ok {
                    failures.push(format!(
                        "{} violating fraction {:.4}",
                        cell.label, cell.positivity.violating_fraction
                    ));
                }
            }
            estimates["fracq"] = serde_json::to_value(&rep)?;
        }
    }
    estimates["positivity_failures"] = serde_json::to_value(&failures)?;
    out.write_json("estimates.json", &estimates)?;
    let md = report::render(&manifest, &out.dir)?;
    out.write_text("report.md", &md)?;
    timer.lap(&mut manifest, "write");
    out.finish(manifest)?;

    if !failures.is_empty() && !args.allow_positivity_violations {
        return Err(PositivityFailure(failures.join("; ")).into());
    }
    Ok(())
}
