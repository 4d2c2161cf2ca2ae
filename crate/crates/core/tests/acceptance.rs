//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines always reach
//! stdout. Exits non-zero when any criterion fails, including the scale
//! check when its edge list is absent.

use std::path::PathBuf;
use std::time::Instant;

use netexposure::estimators::{bootstrap_se, exact_p_value, weighted_mean, EstimatorKind, ExactTest, Resample, Weights};
use netexposure::exposure::{BoxRegion, ExposureCondition, Interval, ReplicateCache};
use netexposure::graph::{load_edge_list, AttrIdPolicy};
use netexposure::knn::KSweepRow;
use netexposure::motif::{count_causal_motifs, MotifSchema, RepresentationBuilder, SamplingConfig, Shape, UniformSource};
use netexposure::randomization::RandomizationDesign;
use netexposure::synth::{generate_watts_strogatz, run_replication, HarnessConfig, ReplicationBundle};
use netexposure::tree::{fit_tree, ScoreKind, TreeData, TreeHyperparams, TreeNode};
use netexposure::{seeds, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random_bool(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).unwrap().0
}

fn above(lo: f64) -> Interval {
    Interval { lo, hi: f64::INFINITY }
}

fn at_most(hi: f64) -> Interval {
    Interval { lo: f64::NEG_INFINITY, hi }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Design-weighted mean of the HT estimate over all 2^N assignments
/// against the mean potential outcome of the condition.
fn lemma_one() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let schema = MotifSchema::parse("Z,2-1,3c-2").unwrap();
    // both conditions contain one of the constant worlds, so every unit
    // has positive probability
    let conds = [
        BoxRegion::full(3).restrict(0, above(0.5)).restrict(1, above(0.49)),
        BoxRegion::full(3).restrict(0, at_most(0.5)).restrict(1, at_most(0.51)),
    ];
    let mut worst: f64 = 0.0;
    for gi in 0..10 {
        let n = 6 + gi % 7;
        let g = random_graph(n, 0.35, &mut rng);
        let b = RepresentationBuilder::new(&g, &schema, &SamplingConfig::default()).unwrap();
        let u = UniformSource::Constant(0.5);
        let worlds = 1usize << n;
        let members: Vec<Vec<[bool; 2]>> = (0..worlds)
            .map(|w| {
                let z: Vec<u8> = (0..n).map(|i| ((w >> i) & 1) as u8).collect();
                let m = b.build(&z, u.clone()).unwrap();
                (0..n).map(|i| [conds[0].contains(m.row(i)), conds[1].contains(m.row(i))]).collect()
            })
            .collect();
        for c in 0..2 {
            // every assignment has probability 2^-n under Bernoulli(0.5)
            let pi: Vec<f64> =
                (0..n).map(|i| members.iter().filter(|m| m[i][c]).count() as f64 / worlds as f64).collect();
            let y_r: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
            let truth = mean(&y_r);
            let mut expect = 0.0;
            for m in &members {
                let member: Vec<bool> = m.iter().map(|x| x[c]).collect();
                if member.iter().any(|&x| x) {
                    // outcomes of non-members are arbitrary
                    let y: Vec<f64> = (0..n).map(|i| if member[i] { y_r[i] } else { -1e3 }).collect();
                    expect += weighted_mean(&y, &member, &pi, EstimatorKind::HorvitzThompson).unwrap().point;
                }
            }
            expect /= worlds as f64;
            worst = worst.max(((expect - truth) / truth).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(worst <= 1e-10 && secs < 10.0, format!("max relative error {worst:.2e}, {secs:.2} s"))
}

/// Exact probability on the 3-node path, integrating the smoothing draw
/// in closed form.
fn path_probability(z_all: &[[u8; 3]], node: usize, region: &BoxRegion) -> f64 {
    let nbrs: &[usize] = match node {
        0 => &[1],
        1 => &[0, 2],
        _ => &[1],
    };
    let d = nbrs.len() as f64;
    let mut p = 0.0;
    for z in z_all {
        if !region.intervals[0].contains(z[node] as f64) {
            continue;
        }
        let t = nbrs.iter().map(|&j| z[j] as f64).sum::<f64>();
        // (t + U)/(d + 1) in (lo, hi]  <=>  U in ((d+1)lo - t, (d+1)hi - t]
        let iv = region.intervals[1];
        let lo = ((d + 1.0) * iv.lo - t).max(0.0);
        let hi = ((d + 1.0) * iv.hi - t).min(1.0);
        p += (hi - lo).max(0.0) / 8.0;
    }
    p
}

fn path_convergence() -> Verdict {
    let start = Instant::now();
    let g = Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap().0;
    let schema = MotifSchema::fractional();
    let b = RepresentationBuilder::new(&g, &schema, &SamplingConfig::default()).unwrap();
    let design = RandomizationDesign::bernoulli(3, 0.5).unwrap();
    let reps = 2000;
    let cache = ReplicateCache::build(&b, &design, reps, seeds::labeled(7, "path")).unwrap();
    let full = BoxRegion::full(2);
    let regions = [
        full.restrict(0, above(0.5)).restrict(1, above(2.0 / 3.0)),
        full.restrict(0, at_most(0.5)).restrict(1, at_most(1.0 / 3.0)),
        full.restrict(1, Interval { lo: 0.4, hi: 0.8 }),
        full.restrict(0, above(0.5)).restrict(1, at_most(0.5)),
    ];
    let worlds: Vec<[u8; 3]> = (0..8).map(|w| [(w & 1) as u8, ((w >> 1) & 1) as u8, ((w >> 2) & 1) as u8]).collect();
    let mut worst: f64 = 0.0;
    let mut middle_full = f64::NAN;
    for (k, r) in regions.iter().enumerate() {
        let est = cache.probabilities(&ExposureCondition::boxed("r", r.clone()));
        for node in 0..3 {
            let p = path_probability(&worlds, node, r);
            if k == 0 && node == 1 {
                middle_full = p;
            }
            let sigma = (p * (1.0 - p) / reps as f64).sqrt();
            worst = worst.max((est[node] - p).abs() / sigma);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst <= 3.0 && secs < 5.0 && (middle_full - 0.125).abs() < 1e-15,
        format!("max deviation {worst:.2} sigma over 12 probabilities, middle node all-treated {middle_full}, {secs:.2} s"),
    )
}

fn ws_bundles() -> (Vec<ReplicationBundle>, f64) {
    let start = Instant::now();
    let bundles = (0..20u64)
        .map(|s| {
            let cfg = HarnessConfig { seed: 1000 + s, ..HarnessConfig::ws_bernoulli() };
            run_replication(&cfg).expect("replication")
        })
        .collect();
    (bundles, start.elapsed().as_secs_f64())
}

fn ws_bias(bundles: &[ReplicationBundle], secs: f64) -> (Verdict, Verdict) {
    let mut beats_naive = 0;
    let mut beats_frac = 0;
    let mut err_knn = Vec::new();
    let mut err_naive = Vec::new();
    let mut err_frac = Vec::new();
    for b in bundles {
        let tau = b.truth.tau;
        let Some(row) = ReplicationBundle::smallest_passing(&b.sweep) else { continue };
        let e = (row.tau - tau).abs();
        err_knn.push(e);
        err_naive.push((b.naive - tau).abs());
        if e < (b.naive - tau).abs() {
            beats_naive += 1;
        }
        if let Some(f) = b.sweep_fractional.iter().find(|f| f.k == row.k && f.tau.is_finite()) {
            err_frac.push((f.tau - tau).abs());
            if e < (f.tau - tau).abs() {
                beats_frac += 1;
            }
        }
    }
    let tau = mean(&bundles.iter().map(|b| b.truth.tau).collect::<Vec<_>>());
    let mu1 = mean(&bundles.iter().map(|b| b.truth.mu1).collect::<Vec<_>>());
    let a = verdict(
        beats_naive >= 18 && secs <= 600.0,
        format!(
            "kNN beats naive in {beats_naive}/20 (mean |err| {:.3} vs {:.3}; oracle tau {tau:.3}, mu1 {mu1:.3}), {secs:.0} s",
            mean(&err_knn),
            mean(&err_naive)
        ),
    );
    let b = verdict(
        beats_frac >= 16,
        format!(
            "kNN beats fractional at matched K in {beats_frac}/20 (mean |err| {:.3} vs {:.3})",
            mean(&err_knn),
            mean(&err_frac)
        ),
    );
    (a, b)
}

fn k_trend(bundles: &[ReplicationBundle]) -> Verdict {
    let grid: Vec<usize> = bundles[0].sweep.iter().map(|r| r.k).collect();
    let row = |b: &ReplicationBundle, k: usize| -> Option<KSweepRow> {
        b.sweep.iter().find(|r| r.k == k && r.passes()).cloned()
    };
    let mut trend_ok = true;
    let mut steps = Vec::new();
    for w in grid.windows(2) {
        // paired over seeds where both K pass
        let d: Vec<f64> =
            bundles.iter().filter_map(|b| Some(row(b, w[1])?.tau - row(b, w[0])?.tau)).collect();
        if d.len() < 2 {
            continue;
        }
        let mc = sd(&d) / (d.len() as f64).sqrt();
        let ok = mean(&d) <= 2.0 * mc;
        trend_ok &= ok;
        steps.push(format!("{}->{}: {:+.3} (2se {:.3})", w[0], w[1], mean(&d), 2.0 * mc));
    }
    let mut se_steps = 0;
    let mut se_down = 0;
    for b in bundles {
        for w in b.sweep.windows(2) {
            if w[0].se_tau.is_finite() && w[1].se_tau.is_finite() {
                se_steps += 1;
                se_down += (w[1].se_tau <= w[0].se_tau) as usize;
            }
        }
    }
    let share = se_down as f64 / se_steps.max(1) as f64;
    verdict(
        trend_ok && !steps.is_empty() && share >= 0.8,
        format!("mean tau steps [{}]; SE non-increasing in {se_down}/{se_steps} steps", steps.join(", ")),
    )
}

fn ht_vs_hajek(bundles: &[ReplicationBundle]) -> Verdict {
    let mut pairs = 0;
    let mut larger = 0;
    let mut ratio = Vec::new();
    for b in bundles {
        for h in &b.sweep {
            if let Some(t) = b.sweep_ht.iter().find(|t| t.k == h.k) {
                if h.se_tau.is_finite() && t.se_tau.is_finite() && h.se_tau > 0.0 {
                    pairs += 1;
                    larger += (t.se_tau > h.se_tau) as usize;
                    ratio.push(t.se_tau / h.se_tau);
                }
            }
        }
    }
    verdict(
        pairs > 0 && larger * 10 >= pairs * 9,
        format!("HT SE above Hajek SE in {larger}/{pairs} pairs, median ratio {:.2}", median(&mut ratio)),
    )
}

fn median(xs: &mut [f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

fn tree_recovery() -> Verdict {
    let schema = MotifSchema::default_schema();
    let share = schema.position("2-1").unwrap();
    let mut correct = 0;
    let mut single = 0;
    let mut thetas = Vec::new();
    for s in 0..20u64 {
        let g = generate_watts_strogatz(5000, 10, 0.5, seeds::labeled(s, "tree-graph")).unwrap();
        let mut rng = seeds::rng(s, seeds::stream::COVARIATE, 0);
        let x: Vec<f64> = (0..5000).map(|_| rng.random_bool(0.5) as u8 as f64).collect();
        let g = g.with_attribute("X", x).unwrap();
        let b = RepresentationBuilder::new(&g, &schema, &SamplingConfig::default()).unwrap();
        let design = RandomizationDesign::bernoulli(5000, 0.5).unwrap();
        let z = design.assign(seeds::labeled(s, "tree-z")).unwrap();
        let obs = b.build(&z.z, UniformSource::Seeded(seeds::labeled(s, "tree-u"))).unwrap();
        let cache = ReplicateCache::build(&b, &design, 100, seeds::labeled(s, "tree-reps")).unwrap();
        let mut nrng = seeds::rng(s, seeds::stream::NOISE, 0);
        let y: Vec<f64> = (0..5000)
            .map(|i| {
                let e: f64 = StandardNormal.sample(&mut nrng);
                5.0 * (obs.get(i, share) > 0.5) as u8 as f64 + 0.1 * e
            })
            .collect();
        let mut p = TreeHyperparams::new(ScoreKind::TStat, 1.96, 100);
        p.bootstrap = 50;
        let data = TreeData { observed: &obs, y: &y, cache: &cache, clusters: None };
        let t = fit_tree(&data, &p, seeds::labeled(s, "tree-split")).unwrap();
        if let TreeNode::Split { dim, theta, .. } = t.root {
            thetas.push(theta);
            if dim == share && (0.45..=0.55).contains(&theta) {
                correct += 1;
            }
        }
        let flat = vec![2.5; 5000];
        let data = TreeData { observed: &obs, y: &flat, cache: &cache, clusters: None };
        single += (fit_tree(&data, &p, seeds::labeled(s, "tree-split")).unwrap().leaf_count() == 1) as usize;
    }
    verdict(
        correct >= 19 && single == 20,
        format!(
            "root split on 2-1 within [0.45,0.55] in {correct}/20 (median theta {:.3}); constant outcome single leaf in {single}/20",
            median(&mut thetas)
        ),
    )
}

fn sharp_null() -> Verdict {
    let g = generate_watts_strogatz(200, 4, 0.2, 31).unwrap();
    let schema = MotifSchema::fractional();
    let b = RepresentationBuilder::new(&g, &schema, &SamplingConfig::default()).unwrap();
    let design = RandomizationDesign::bernoulli(200, 0.5).unwrap();
    let cache = ReplicateCache::build(&b, &design, 500, 32).unwrap();
    let full = BoxRegion::full(2);
    let r = full.restrict(0, above(0.5)).restrict(1, above(0.5));
    let r_alt = full.restrict(0, at_most(0.5)).restrict(1, at_most(0.5));
    let prob_r = cache.probabilities(&ExposureCondition::boxed("r", r.clone()));
    let prob_alt = cache.probabilities(&ExposureCondition::boxed("r_alt", r_alt.clone()));
    let mut ps = Vec::new();
    let mut skipped = 0;
    for sim in 0..200u64 {
        let z = design.assign(seeds::labeled(sim, "null-z")).unwrap().z;
        let obs = b.build(&z, UniformSource::Seeded(seeds::labeled(sim, "null-u"))).unwrap();
        // outcomes do not react to treatment: the sharp null holds
        let mut rng = seeds::rng(sim, seeds::stream::NOISE, 0);
        let y: Vec<f64> = (0..200).map(|_| 1.0 + rng.random::<f64>()).collect();
        let test = ExactTest {
            builder: &b,
            design: &design,
            z_obs: &z,
            y_obs: &y,
            observed: &obs,
            r: &r,
            r_alt: &r_alt,
            prob_r: &prob_r,
            prob_alt: &prob_alt,
            hop: 1,
            draws: 500,
            seed: seeds::labeled(sim, "null-draws"),
            max_attempts: 1000,
        };
        match exact_p_value(&test) {
            Ok(res) => ps.push(res.p_value),
            Err(_) => skipped += 1,
        }
    }
    let rate = |a: f64| ps.iter().filter(|&&p| p <= a).count() as f64 / ps.len() as f64;
    let (r05, r10) = (rate(0.05), rate(0.10));
    verdict(
        skipped == 0 && r05 <= 0.08 && r10 <= 0.13,
        format!("P(p<=0.05) = {r05:.3}, P(p<=0.10) = {r10:.3} over {} simulations", ps.len()),
    )
}

fn bootstrap_calibration() -> Verdict {
    let n = 2000;
    let probs = vec![0.5; n];
    let mut points = Vec::new();
    let mut ses = Vec::new();
    for r in 0..200u64 {
        // fresh i.i.d. outcomes and a fresh Bernoulli(0.5) assignment
        let mut rng = seeds::rng(r, seeds::stream::NOISE, 1);
        let y: Vec<f64> = (0..n).map(|_| { let e: f64 = StandardNormal.sample(&mut rng); 2.0 + e }).collect();
        let z = RandomizationDesign::bernoulli(n, 0.5).unwrap().assign(seeds::labeled(r, "calib-z")).unwrap();
        let member: Vec<bool> = z.z.iter().map(|&v| v == 1).collect();
        let w = Weights::new(&member, &probs).unwrap();
        points.push(w.mean(&y, EstimatorKind::Hajek).unwrap());
        let bs = bootstrap_se(Resample::Unit(n), 500, seeds::labeled(r, "calib-boot"), |idx| {
            w.mean_over(&y, EstimatorKind::Hajek, idx)
        })
        .unwrap();
        ses.push(bs.se);
    }
    let empirical = sd(&points);
    let ratio = mean(&ses) / empirical;
    verdict(
        (ratio - 1.0).abs() <= 0.25,
        format!("mean bootstrap SE {:.4} vs empirical SD {empirical:.4} (ratio {ratio:.3})", mean(&ses)),
    )
}

fn peak_rss_mb() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb / 1024.0)
}

/// Representations and B = 100 exposure probabilities, then invariant
/// checks on a 1% node sample.
fn scale_run(g: &Graph) -> (f64, String, bool) {
    let start = Instant::now();
    let schema = MotifSchema::parse("Z,2-1,3o-0,3o-2,3c-0,3c-2,4o-0,4o-3").unwrap();
    let n = g.node_count();
    let sampling = SamplingConfig::default();
    let b = RepresentationBuilder::new(g, &schema, &sampling).unwrap();
    let design = RandomizationDesign::bernoulli(n, 0.5).unwrap();
    let z = design.assign(1).unwrap().z;
    let obs = b.build(&z, UniformSource::Seeded(2)).unwrap();
    let cache = ReplicateCache::build(&b, &design, 100, 3).unwrap();
    let near_treated = ExposureCondition::boxed("r", BoxRegion::full(schema.len()).restrict(0, above(0.5)));
    let p = cache.probabilities(&near_treated);
    let secs = start.elapsed().as_secs_f64();

    let mut ok = p.iter().all(|&x| (0.0..=1.0).contains(&x));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..(n / 100).max(1) {
        let i = rng.random_range(0..n);
        let r = obs.row(i);
        ok &= r[0] == z[i] as f64 && r[1..].iter().all(|&x| x > 0.0 && x < 1.0);
        let c = count_causal_motifs(g, i, &z, &schema, &sampling).unwrap();
        for shape in Shape::ALL {
            ok &= (0..=shape.arity()).map(|t| c.causal(shape, t)).sum::<u64>() == c.total(shape);
        }
        if !c.sampled {
            ok &= c.total(Shape::Dyad) == g.degree(i) as u64;
        }
    }
    let mem = peak_rss_mb().unwrap_or(f64::NAN);
    let detail = format!(
        "{} nodes, {} edges: {secs:.1} s on {} threads, peak RSS {mem:.0} MB, invariants {}",
        n,
        g.edge_count(),
        netexposure::par::current_threads(),
        if ok { "hold" } else { "VIOLATED" }
    );
    (secs, detail, ok && mem <= 8192.0)
}

fn slashdot_path() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("NETEXPOSURE_SLASHDOT").map(PathBuf::from),
        Some(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/soc-Slashdot0902.txt")),
    ];
    candidates.into_iter().flatten().find(|p| p.is_file())
}

fn main() {
    let mut hard_fail = false;
    let mut line = |id: &str, name: &str, v: Verdict| {
        println!("{} {id} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        hard_fail |= !v.pass;
    };

    line("1", "lemma-1 enumeration", lemma_one());
    line("2", "path probability convergence", path_convergence());
    let (bundles, secs) = ws_bundles();
    let (a, b) = ws_bias(&bundles, secs);
    line("3a", "WS kNN vs naive", a);
    line("3b", "WS kNN vs fractional q", b);
    line("4", "K monotonicity", k_trend(&bundles));
    line("5", "HT vs Hajek SE", ht_vs_hajek(&bundles));
    line("6", "planted tree recovery", tree_recovery());
    line("7", "sharp-null p-values", sharp_null());
    line("8", "bootstrap calibration", bootstrap_calibration());

    match slashdot_path() {
        Some(p) => {
            let file = std::io::BufReader::new(std::fs::File::open(&p).unwrap());
            let (g, _) = load_edge_list(file, None::<&[u8]>, AttrIdPolicy::IncludeIsolates).unwrap();
            let (secs, detail, ok) = scale_run(&g);
            line("9", "Slashdot scale", verdict(ok && secs <= 300.0, detail));
        }
        None => {
            line(
                "9",
                "Slashdot scale",
                verdict(false, "edge list not found (set NETEXPOSURE_SLASHDOT); not evaluated"),
            );
            // same node and edge budget on a generated graph, for reference
            let g = generate_watts_strogatz(82_168, 14, 0.5, 9).unwrap();
            let (secs, detail, ok) = scale_run(&g);
            println!("INFO 9 surrogate Watts-Strogatz at Slashdot size: {detail}, within 300 s: {}", ok && secs <= 300.0);
        }
    }

    if hard_fail {
        std::process::exit(1);
    }
}
