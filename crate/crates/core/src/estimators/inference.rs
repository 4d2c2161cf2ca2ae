use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exposure::BoxRegion;
use crate::motif::{RepresentationBuilder, RepresentationMatrix, UniformSource};
use crate::par;
use crate::randomization::{DesignKind, RandomizationDesign};
use crate::seeds;

/// Units whose hop-`n` balls are pairwise disjoint and whose observed
/// representation lies in one of the two tested conditions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FocalSet {
    pub units: Vec<usize>,
    pub hop: usize,
    /// Sorted ball of each focal unit.
    pub balls: Vec<Vec<usize>>,
}

/// Greedy construction in descending node id.
pub fn build_focal_set(
    g: &crate::graph::Graph,
    observed: &RepresentationMatrix,
    r: &BoxRegion,
    r_alt: &BoxRegion,
    hop: usize,
) -> FocalSet {
    let n = g.node_count();
    let mut claimed = vec![false; n];
    let mut units = Vec::new();
    let mut balls = Vec::new();
    for i in (0..n).rev() {
        let row = observed.row(i);
        if !(r.contains(row) || r_alt.contains(row)) || claimed[i] {
            continue;
        }
        let ball = g.ball(i, hop);
        if ball.iter().any(|&v| claimed[v]) {
            continue;
        }
        for &v in &ball {
            claimed[v] = true;
        }
        units.push(i);
        balls.push(ball);
    }
    FocalSet { units, hop, balls }
}

/// Inputs to the randomization test of "no difference between `r` and
/// `r_alt`".
pub struct ExactTest<'a> {
    pub builder: &'a RepresentationBuilder<'a>,
    pub design: &'a RandomizationDesign,
    pub z_obs: &'a [u8],
    pub y_obs: &'a [f64],
    pub observed: &'a RepresentationMatrix,
    pub r: &'a BoxRegion,
    pub r_alt: &'a BoxRegion,
    /// Exposure probabilities of each unit for `r` and `r_alt`.
    pub prob_r: &'a [f64],
    pub prob_alt: &'a [f64],
    pub hop: usize,
    pub draws: usize,
    pub seed: u64,
    /// Attempts per focal unit (or per joint draw) before giving up.
    pub max_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub p_value: f64,
    pub statistic: f64,
    pub focal_count: usize,
    pub draws: usize,
}

impl ExactTest<'_> {
    fn term(&self, i: usize, row: &[f64]) -> f64 {
        let mut t = 0.0;
        if self.r.contains(row) {
            t += self.y_obs[i] / self.prob_r[i];
        }
        if self.r_alt.contains(row) {
            t -= self.y_obs[i] / self.prob_alt[i];
        }
        t
    }
}

/// `p = (1 + #{T_b >= T_obs}) / (draws + 1)` over draws that
/// re-randomize assignments inside the focal balls, keeping every focal
/// unit inside one of the two conditions.
pub fn exact_p_value(test: &ExactTest<'_>) -> Result<InferenceResult> {
    let g = test.builder.graph();
    if test.draws == 0 {
        return Err(Error::Argument("at least one draw is required".into()));
    }
    let focal = build_focal_set(g, test.observed, test.r, test.r_alt, test.hop);
    if focal.units.is_empty() {
        return Err(Error::Inference("no non-overlapping focal units".into()));
    }
    for &i in &focal.units {
        let row = test.observed.row(i);
        if (test.r.contains(row) && test.prob_r[i] <= 0.0) || (test.r_alt.contains(row) && test.prob_alt[i] <= 0.0) {
            return Err(Error::Inference(format!("focal unit {i} has exposure probability 0")));
        }
    }
    let t_obs: f64 = focal
        .units
        .iter()
        .map(|&i| test.term(i, test.observed.row(i)))
        .sum::<f64>()
        .abs();

    let stats = par::map_range(test.draws, |b| draw_statistic(test, &focal, b));
    let stats = stats.into_iter().collect::<Result<Vec<f64>>>()?;
    // relative tolerance keeps floating-point reorderings from splitting ties
    let tol = 1e-12 * t_obs.abs().max(1.0);
    let exceed = stats.iter().filter(|&&t| t >= t_obs - tol).count();
    Ok(InferenceResult {
        p_value: (1 + exceed) as f64 / (test.draws + 1) as f64,
        statistic: t_obs,
        focal_count: focal.units.len(),
        draws: test.draws,
    })
}

fn draw_statistic(test: &ExactTest<'_>, focal: &FocalSet, b: usize) -> Result<f64> {
    let seed_b = seeds::derive(test.seed, seeds::stream::INFERENCE, b as u64);
    let mut z = test.z_obs.to_vec();
    let p = test.design.p;
    let inside = |row: &[f64]| test.r.contains(row) || test.r_alt.contains(row);

    match &test.design.kind {
        DesignKind::Bernoulli => {
            // balls are disjoint, so each focal unit can be redrawn on its own
            let mut total = 0.0;
            for (k, (&i, ball)) in focal.units.iter().zip(&focal.balls).enumerate() {
                let mut rng = seeds::rng(seed_b, k as u64, 0);
                let mut accepted = None;
                for attempt in 0..test.max_attempts {
                    for &v in ball {
                        z[v] = (rng.random::<f64>() < p) as u8;
                    }
                    let u = UniformSource::Seeded(seeds::derive(seed_b, k as u64, attempt as u64 + 1));
                    let row = test.builder.row(i, &z, &u)?;
                    if inside(&row) {
                        accepted = Some(test.term(i, &row));
                        break;
                    }
                }
                total += accepted.ok_or_else(|| {
                    Error::Inference(format!(
                        "focal unit {i}: no admissible assignment in {} attempts",
                        test.max_attempts
                    ))
                })?;
            }
            Ok(total.abs())
        }
        DesignKind::GraphCluster(part) => {
            let mut rng = seeds::rng(seed_b, u64::MAX, 0);
            for attempt in 0..test.max_attempts {
                let mut draw: HashMap<u32, u8> = HashMap::new();
                for ball in &focal.balls {
                    for &v in ball {
                        let c = part.cluster_of[v];
                        let zc = *draw.entry(c).or_insert_with(|| (rng.random::<f64>() < p) as u8);
                        z[v] = zc;
                    }
                }
                let u = UniformSource::Seeded(seeds::derive(seed_b, u64::MAX, attempt as u64 + 1));
                let mut total = 0.0;
                let mut ok = true;
                for &i in &focal.units {
                    let row = test.builder.row(i, &z, &u)?;
                    if !inside(&row) {
                        ok = false;
                        break;
                    }
                    total += test.term(i, &row);
                }
                if ok {
                    return Ok(total.abs());
                }
            }
            Err(Error::Inference(format!(
                "no admissible joint assignment in {} attempts",
                test.max_attempts
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exposure::{Interval, ReplicateCache};
    use crate::graph::Graph;
    use crate::motif::{MotifSchema, SamplingConfig};

    fn ring(n: usize) -> Graph {
        let e: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &e).unwrap().0
    }

    #[test]
    fn focal_balls_disjoint() {
        let g = ring(30);
        let s = MotifSchema::parse("Z,2-1").unwrap();
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let z: Vec<u8> = (0..30).map(|i| (i % 2) as u8).collect();
        let obs = b.build(&z, UniformSource::Seeded(1)).unwrap();
        let full = BoxRegion::full(2);
        let r = full.restrict(0, Interval { lo: 0.5, hi: f64::INFINITY });
        let r_alt = full.restrict(0, Interval { lo: f64::NEG_INFINITY, hi: 0.5 });
        let f = build_focal_set(&g, &obs, &r, &r_alt, 1);
        assert_eq!(f.units[0], 29);
        let mut seen = vec![false; 30];
        for ball in &f.balls {
            for &v in ball {
                assert!(!seen[v]);
                seen[v] = true;
            }
        }
        assert_eq!(f.units.len(), 10);
    }

    #[test]
    fn constant_statistic_gives_one() {
        let g = ring(12);
        let s = MotifSchema::parse("Z,2-1").unwrap();
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let design = RandomizationDesign::bernoulli(12, 0.5).unwrap();
        let z = design.assign(3).unwrap().z;
        let obs = b.build(&z, UniformSource::Seeded(1)).unwrap();
        // both conditions cover everything, so every term is y/p - y/p = 0
        let full = BoxRegion::full(2);
        let cache = ReplicateCache::build(&b, &design, 20, 2).unwrap();
        let p = cache.probabilities(&crate::exposure::ExposureCondition::everything(2));
        let y = vec![1.0; 12];
        let res = exact_p_value(&ExactTest {
            builder: &b,
            design: &design,
            z_obs: &z,
            y_obs: &y,
            observed: &obs,
            r: &full,
            r_alt: &full,
            prob_r: &p,
            prob_alt: &p,
            hop: 1,
            draws: 50,
            seed: 4,
            max_attempts: 100,
        })
        .unwrap();
        assert_eq!(res.p_value, 1.0);
    }

    #[test]
    fn empty_focal_set_is_error() {
        let g = ring(6);
        let s = MotifSchema::parse("Z,2-1").unwrap();
        let b = RepresentationBuilder::new(&g, &s, &SamplingConfig::default()).unwrap();
        let design = RandomizationDesign::bernoulli(6, 0.5).unwrap();
        let z = vec![0u8; 6];
        let obs = b.build(&z, UniformSource::Seeded(1)).unwrap();
        let empty = BoxRegion::empty(2);
        let p = vec![0.5; 6];
        let res = exact_p_value(&ExactTest {
            builder: &b,
            design: &design,
            z_obs: &z,
            y_obs: &[0.0; 6],
            observed: &obs,
            r: &empty,
            r_alt: &empty,
            prob_r: &p,
            prob_alt: &p,
            hop: 1,
            draws: 10,
            seed: 1,
            max_attempts: 10,
        });
        assert!(matches!(res, Err(Error::Inference(_))));
    }
}
