//! Central finite-difference checking of analytic gradients.

use std::fmt;

use crate::error::{Error, Result};
use crate::numeric::SeededRng;

/// A set of named, flat parameter groups that can be perturbed in place.
pub trait ParamGroups: Clone {
    fn group_names(&self) -> Vec<&'static str>;
    fn group(&self, index: usize) -> &[f64];
    fn group_mut(&mut self, index: usize) -> &mut [f64];
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub eps: f64,
    pub tol: f64,
    /// Coordinates sampled per group (groups smaller than this are checked exhaustively).
    pub samples_per_group: usize,
    pub seed: u64,
    /// Per-group step sizes that replace `eps` for the named groups.
    pub group_eps: Vec<(&'static str, f64)>,
}

impl GradCheckConfig {
    pub fn eps_for(&self, group: &str) -> f64 {
        self.group_eps
            .iter()
            .find(|(name, _)| *name == group)
            .map_or(self.eps, |&(_, eps)| eps)
    }
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            tol: 1e-4,
            samples_per_group: 200,
            seed: 0,
            group_eps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: &'static str,
    pub checked: usize,
    pub max_rel_error: f64,
    /// Index of the worst coordinate and its (analytic, numeric) values.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tol: f64,
    pub groups: Vec<GroupReport>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.groups.iter().all(|g| g.max_rel_error <= self.tol)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max)
    }
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            write!(
                f,
                "  {:<20} checked={:<5} max_rel_err={:.3e}",
                g.name, g.checked, g.max_rel_error
            )?;
            if let Some((i, a, n)) = g.worst {
                write!(f, " (at {i}: analytic={a:.6e} numeric={n:.6e})")?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares `analytic` against central differences of `loss_fn` around `params`.
///
/// Per group, `samples_per_group` uniformly drawn coordinates are checked, plus up
/// to the same number of coordinates where the analytic gradient is nonzero (sparse
/// groups such as embedding tables would otherwise be checked almost only at zeros).
pub fn grad_check<P, F>(
    loss_fn: F,
    params: &P,
    analytic: &P,
    config: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    P: ParamGroups,
    F: Fn(&P) -> f64,
{
    let steps = std::iter::once(config.eps).chain(config.group_eps.iter().map(|g| g.1));
    if let Some(bad) = steps.into_iter().find(|e| !(1e-6..=1e-4).contains(e)) {
        return Err(Error::invalid(format!(
            "grad_check eps {bad} outside [1e-6, 1e-4]"
        )));
    }
    let base = loss_fn(params);
    let again = loss_fn(params);
    if base.to_bits() != again.to_bits() {
        return Err(Error::Contract(format!(
            "loss function is not deterministic ({base} vs {again})"
        )));
    }

    let names = params.group_names();
    if names != analytic.group_names() {
        return Err(Error::invalid("analytic gradient groups do not match params"));
    }

    let mut rng = SeededRng::new(config.seed);
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(names.len());
    for (gi, name) in names.into_iter().enumerate() {
        let len = params.group(gi).len();
        if analytic.group(gi).len() != len {
            return Err(Error::invalid(format!(
                "gradient group {name} has length {}, expected {len}",
                analytic.group(gi).len()
            )));
        }
        let coords = pick_coordinates(analytic.group(gi), config.samples_per_group, &mut rng);
        let eps = config.eps_for(name);

        let mut report = GroupReport {
            name,
            checked: coords.len(),
            max_rel_error: 0.0,
            worst: None,
        };
        for i in coords {
            let orig = work.group(gi)[i];
            work.group_mut(gi)[i] = orig + eps;
            let plus = loss_fn(&work);
            work.group_mut(gi)[i] = orig - eps;
            let minus = loss_fn(&work);
            work.group_mut(gi)[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.group(gi)[i];
            let err = relative_error(a, numeric);
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((i, a, numeric));
            }
        }
        groups.push(report);
    }

    Ok(GradCheckReport {
        tol: config.tol,
        groups,
    })
}

fn pick_coordinates(grad: &[f64], n: usize, rng: &mut SeededRng) -> Vec<usize> {
    if grad.len() <= n {
        return (0..grad.len()).collect();
    }
    let mut picked = rng.sample_indices(grad.len(), n);
    let nonzero: Vec<usize> = (0..grad.len()).filter(|&i| grad[i] != 0.0).collect();
    if nonzero.len() <= n {
        picked.extend(nonzero);
    } else {
        picked.extend(
            rng.sample_indices(nonzero.len(), n)
                .into_iter()
                .map(|j| nonzero[j]),
        );
    }
    picked.sort_unstable();
    picked.dedup();
    picked
}

/// Single flat group; handy for checking standalone functions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub Vec<f64>);

impl ParamGroups for FlatParams {
    fn group_names(&self) -> Vec<&'static str> {
        vec!["params"]
    }

    fn group(&self, _index: usize) -> &[f64] {
        &self.0
    }

    fn group_mut(&mut self, _index: usize) -> &mut [f64] {
        &mut self.0
    }
}
