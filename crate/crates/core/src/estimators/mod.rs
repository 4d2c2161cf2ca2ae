//! Inverse-probability-weighted means, bootstrap standard errors, gate
//! differences and randomization-inference p-values.

mod bootstrap;
mod inference;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use bootstrap::{bootstrap_draws, bootstrap_se, resample_indices, spread, BootstrapResult, Resample};
pub use inference::{build_focal_set, exact_p_value, ExactTest, FocalSet, InferenceResult};

use crate::error::{Error, Result};
use crate::exposure::PositivityVerdict;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "HT")]
    HorvitzThompson,
    #[serde(rename = "Hajek")]
    Hajek,
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EstimatorKind::HorvitzThompson => "HT",
            EstimatorKind::Hajek => "Hajek",
        })
    }
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ht" | "horvitz-thompson" => Ok(EstimatorKind::HorvitzThompson),
            "hajek" => Ok(EstimatorKind::Hajek),
            _ => Err(Error::Argument(format!("unknown estimator {s:?}"))),
        }
    }
}

/// Point estimate, bootstrap SE, diagnostics and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub label: String,
    pub kind: EstimatorKind,
    pub point: f64,
    pub se: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bootstrap_draws: Option<Vec<f64>>,
    pub member_count: usize,
    pub positivity: PositivityVerdict,
    #[serde(rename = "B")]
    pub replicates: usize,
    pub seeds: BTreeMap<String, u64>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub flags: Vec<String>,
}

impl EstimateReport {
    pub fn new(label: impl Into<String>, kind: EstimatorKind, point: f64) -> Self {
        EstimateReport {
            label: label.into(),
            kind,
            point,
            se: 0.0,
            bootstrap_draws: None,
            member_count: 0,
            positivity: PositivityVerdict { ok: true, violating_fraction: 0.0 },
            replicates: 0,
            seeds: BTreeMap::new(),
            flags: Vec::new(),
        }
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }

    /// Copy without the bootstrap draws, for compact output.
    pub fn without_draws(&self) -> Self {
        EstimateReport { bootstrap_draws: None, ..self.clone() }
    }
}

/// Flag set when a gate SE ignores the covariance of its two arms.
pub const FLAG_INDEPENDENT_SE: &str = "independent-se";
/// Flag set when both reference vectors land in the same condition.
pub const FLAG_GATE_DEGENERATE: &str = "gate-degenerate";

/// Inverse-probability weights `1[member] / p` for one condition.
///
/// Members with probability 0 cannot be weighted; they are listed in
/// `zero_prob` so a caller can either refuse or exclude them.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub w: Vec<f64>,
    pub members: usize,
    pub zero_prob: Vec<usize>,
}

impl Weights {
    pub fn new(member: &[bool], probs: &[f64]) -> Result<Self> {
        if member.len() != probs.len() {
            return Err(Error::Argument(format!(
                "membership has {} entries, probabilities {}",
                member.len(),
                probs.len()
            )));
        }
        let mut zero_prob = Vec::new();
        let mut members = 0;
        let w = member
            .iter()
            .zip(probs)
            .enumerate()
            .map(|(i, (&m, &p))| {
                if !m {
                    0.0
                } else if p > 0.0 {
                    members += 1;
                    1.0 / p
                } else {
                    zero_prob.push(i);
                    0.0
                }
            })
            .collect();
        Ok(Weights { w, members, zero_prob })
    }

    /// Fail on any member with probability 0.
    pub fn strict(member: &[bool], probs: &[f64]) -> Result<Self> {
        let w = Self::new(member, probs)?;
        if let Some(&i) = w.zero_prob.first() {
            return Err(Error::Estimation(format!(
                "unit {i} is in the condition but has exposure probability 0 ({} such units)",
                w.zero_prob.len()
            )));
        }
        Ok(w)
    }

    /// Weighted mean over the units listed in `idx` (repeats allowed).
    pub fn mean_over(&self, y: &[f64], kind: EstimatorKind, idx: &[usize]) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for &i in idx {
            let w = self.w[i];
            if w != 0.0 {
                num += w * y[i];
                den += w;
            }
        }
        match kind {
            EstimatorKind::HorvitzThompson => {
                if idx.is_empty() {
                    return Err(Error::Estimation("no units to average".into()));
                }
                Ok(num / idx.len() as f64)
            }
            EstimatorKind::Hajek => {
                if den <= 0.0 {
                    return Err(Error::Estimation("condition has no members".into()));
                }
                Ok(num / den)
            }
        }
    }

    /// Weighted mean over the whole population.
    pub fn mean(&self, y: &[f64], kind: EstimatorKind) -> Result<f64> {
        let mut num = 0.0;
        let mut den = 0.0;
        for (w, v) in self.w.iter().zip(y) {
            if *w != 0.0 {
                num += w * v;
                den += w;
            }
        }
        match kind {
            EstimatorKind::HorvitzThompson if !y.is_empty() => Ok(num / y.len() as f64),
            EstimatorKind::Hajek if den > 0.0 => Ok(num / den),
            _ => Err(Error::Estimation("condition has no members".into())),
        }
    }
}

/// HT or Hájek mean of `y` over units in the condition.
///
/// Errors when a member has probability 0.
pub fn weighted_mean(y: &[f64], member: &[bool], probs: &[f64], kind: EstimatorKind) -> Result<EstimateReport> {
    if y.len() != member.len() {
        return Err(Error::Argument(format!(
            "outcomes have {} entries, membership {}",
            y.len(),
            member.len()
        )));
    }
    let w = Weights::strict(member, probs)?;
    let point = w.mean(y, kind)?;
    let mut r = EstimateReport::new("", kind, point);
    r.member_count = w.members;
    Ok(r)
}

/// `a - b`, with a paired-draw SE when both reports carry draws from the
/// same bootstrap stream and an independent-sum SE (flagged) otherwise.
pub fn gate_difference(a: &EstimateReport, b: &EstimateReport) -> Result<EstimateReport> {
    if a.kind != b.kind {
        return Err(Error::Argument(format!(
            "cannot difference a {} estimate with a {} estimate",
            a.kind, b.kind
        )));
    }
    let mut out = EstimateReport::new(format!("{} - {}", a.label, b.label), a.kind, a.point - b.point);
    out.member_count = a.member_count.min(b.member_count);
    out.positivity = PositivityVerdict {
        ok: a.positivity.ok && b.positivity.ok,
        violating_fraction: a.positivity.violating_fraction.max(b.positivity.violating_fraction),
    };
    out.replicates = a.replicates;
    out.seeds = a.seeds.clone();
    out.seeds.extend(b.seeds.iter().map(|(k, v)| (k.clone(), *v)));

    let paired = match (&a.bootstrap_draws, &b.bootstrap_draws) {
        (Some(da), Some(db)) if da.len() == db.len() && a.seeds.get("bootstrap") == b.seeds.get("bootstrap") => {
            let diffs: Vec<f64> = da
                .iter()
                .zip(db)
                .map(|(x, y)| x - y)
                .filter(|d| d.is_finite())
                .collect();
            (diffs.len() >= 2).then(|| (bootstrap::spread(&diffs), diffs))
        }
        _ => None,
    };
    match paired {
        Some((se, diffs)) => {
            out.se = se;
            out.bootstrap_draws = Some(diffs);
        }
        None => {
            out.se = (a.se * a.se + b.se * b.se).sqrt();
            out.flags.push(FLAG_INDEPENDENT_SE.into());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_weights_give_plain_mean() {
        let y = [1.0, 2.0, 6.0];
        for kind in [EstimatorKind::HorvitzThompson, EstimatorKind::Hajek] {
            let r = weighted_mean(&y, &[true; 3], &[1.0; 3], kind).unwrap();
            assert!((r.point - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn path_example() {
        let y = [1.0, 0.0, 1.0];
        let member = [true, false, true];
        let ht = weighted_mean(&y, &member, &[0.5; 3], EstimatorKind::HorvitzThompson).unwrap();
        let hj = weighted_mean(&y, &member, &[0.5; 3], EstimatorKind::Hajek).unwrap();
        assert!((ht.point - 4.0 / 3.0).abs() < 1e-12);
        assert!((hj.point - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ht_unbiased_over_all_assignments() {
        // Y_i(z) = z_i, condition "ego treated" with probability 1/2
        let mut total = 0.0;
        for mask in 0u32..8 {
            let z: Vec<f64> = (0..3).map(|k| ((mask >> k) & 1) as f64).collect();
            let member: Vec<bool> = z.iter().map(|&v| v == 1.0).collect();
            if member.iter().any(|&m| m) {
                total += weighted_mean(&z, &member, &[0.5; 3], EstimatorKind::HorvitzThompson)
                    .unwrap()
                    .point;
            }
        }
        assert!((total / 8.0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn zero_probability_member_rejected() {
        let err = weighted_mean(&[1.0, 2.0], &[true, true], &[0.5, 0.0], EstimatorKind::Hajek).unwrap_err();
        assert!(err.to_string().contains("unit 1"));
    }

    #[test]
    fn gate_difference_examples() {
        let a = EstimateReport::new("a", EstimatorKind::Hajek, 5.29);
        let b = EstimateReport::new("b", EstimatorKind::Hajek, 1.771);
        let d = gate_difference(&a, &b).unwrap();
        assert!((d.point - 3.519).abs() < 1e-12);
        assert!(d.has_flag(FLAG_INDEPENDENT_SE));
        let naive = gate_difference(
            &EstimateReport::new("t", EstimatorKind::Hajek, 4.335),
            &EstimateReport::new("c", EstimatorKind::Hajek, 2.842),
        )
        .unwrap();
        assert!((naive.point - 1.493).abs() < 1e-12);
        assert_eq!(gate_difference(&a, &a).unwrap().point, 0.0);
        let ht = EstimateReport::new("h", EstimatorKind::HorvitzThompson, 1.0);
        assert!(gate_difference(&a, &ht).is_err());
    }

    #[test]
    fn paired_draws_capture_covariance() {
        let mut a = EstimateReport::new("a", EstimatorKind::Hajek, 1.0);
        let mut b = EstimateReport::new("b", EstimatorKind::Hajek, 0.0);
        a.bootstrap_draws = Some(vec![1.0, 2.0, 3.0, 4.0]);
        b.bootstrap_draws = Some(vec![1.0, 2.0, 3.0, 4.0]);
        a.se = 1.0;
        b.se = 1.0;
        let d = gate_difference(&a, &b).unwrap();
        assert_eq!(d.se, 0.0);
        assert!(!d.has_flag(FLAG_INDEPENDENT_SE));
    }
}
