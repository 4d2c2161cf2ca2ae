use rand::Rng;

use crate::error::{Error, Result};
use crate::par;
use crate::randomization::ClusterPartition;
use crate::seeds;

/// Resampling unit for the bootstrap.
#[derive(Debug, Clone, Copy)]
pub enum Resample<'a> {
    /// `N` units drawn with replacement.
    Unit(usize),
    /// All clusters drawn with replacement; every member of a drawn
    /// cluster enters the resample.
    Cluster(&'a ClusterPartition),
    /// Explicit groups of positions, drawn with replacement.
    Groups(&'a [Vec<usize>]),
}

impl Resample<'_> {
    pub fn unit_count(&self) -> usize {
        match self {
            Resample::Unit(n) => *n,
            Resample::Cluster(p) => p.cluster_of.len(),
            Resample::Groups(g) => g.iter().map(Vec::len).sum(),
        }
    }
}

/// Indices of bootstrap resample `b`.
pub fn resample_indices(mode: Resample<'_>, seed: u64, b: usize, members: Option<&[Vec<usize>]>) -> Vec<usize> {
    let mut rng = seeds::rng(seed, seeds::stream::BOOTSTRAP, b as u64);
    let owned;
    let groups = match (mode, members) {
        (Resample::Unit(n), _) => return (0..n).map(|_| rng.random_range(0..n)).collect(),
        (Resample::Groups(g), _) => g,
        (Resample::Cluster(_), Some(m)) => m,
        (Resample::Cluster(p), None) => {
            owned = p.members();
            &owned
        }
    };
    let k = groups.len();
    let mut idx = Vec::with_capacity(mode.unit_count());
    for _ in 0..k {
        idx.extend_from_slice(&groups[rng.random_range(0..k)]);
    }
    idx
}

/// Apply `f` to `draws` resamples. Entry `b` is `None` when `f` failed on
/// resample `b`. Errors when more than 10% of resamples fail.
pub fn bootstrap_draws<T, F>(mode: Resample<'_>, draws: usize, seed: u64, f: F) -> Result<Vec<Option<T>>>
where
    T: Send,
    F: Fn(&[usize]) -> Result<T> + Sync + Send,
{
    if draws < 2 {
        return Err(Error::Argument("bootstrap needs at least 2 draws".into()));
    }
    let members = match mode {
        Resample::Cluster(p) => Some(p.members()),
        Resample::Unit(_) | Resample::Groups(_) => None,
    };
    let out = par::map_range(draws, |b| {
        let idx = resample_indices(mode, seed, b, members.as_deref());
        f(&idx).ok()
    });
    let failures = out.iter().filter(|o| o.is_none()).count();
    if failures * 10 > draws {
        return Err(Error::Estimation(format!(
            "estimator failed on {failures} of {draws} bootstrap resamples"
        )));
    }
    Ok(out)
}

/// Root mean squared deviation from the mean.
pub fn spread(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapResult {
    pub se: f64,
    /// One value per resample; NaN where the estimator failed.
    pub draws: Vec<f64>,
    pub failures: usize,
}

/// Bootstrap standard error of a scalar estimator.
pub fn bootstrap_se<F>(mode: Resample<'_>, draws: usize, seed: u64, f: F) -> Result<BootstrapResult>
where
    F: Fn(&[usize]) -> Result<f64> + Sync + Send,
{
    let raw = bootstrap_draws(mode, draws, seed, f)?;
    let failures = raw.iter().filter(|o| o.is_none()).count();
    let draws: Vec<f64> = raw.into_iter().map(|o| o.unwrap_or(f64::NAN)).collect();
    let ok: Vec<f64> = draws.iter().copied().filter(|x| x.is_finite()).collect();
    Ok(BootstrapResult {
        se: spread(&ok),
        draws,
        failures,
    })
}
