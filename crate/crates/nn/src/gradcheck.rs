//! Finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Graph, NnError, ParamId, ParamStore, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Entries checked per parameter tensor; larger tensors are sampled.
    pub max_entries: usize,
    /// Denominator floor of the relative error, so that gradients that are
    /// both near zero compare by absolute difference.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-4,
            max_entries: 24,
            floor: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// `(parameter, flat index, analytic, numeric)` of the worst entry.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compare `backward` against central differences of the scalar built by
/// `loss`, for every non-frozen parameter in `store`. `loss` must be a pure
/// function of the parameters.
pub fn grad_check<F>(store: &mut ParamStore<f64>, config: GradCheckConfig, mut loss: F) -> Result<GradCheckReport, NnError>
where
    F: FnMut(&mut Graph<f64>) -> Result<Var, NnError>,
{
    let analytic = {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        g.backward(l)?
    };
    let mut eval = |store: &ParamStore<f64>| -> Result<f64, NnError> {
        let mut g = Graph::new(store);
        let l = loss(&mut g)?;
        Ok(g.value(l).item())
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        checked: 0,
        worst: None,
    };
    let ids: Vec<ParamId> = store.ids().filter(|&id| !store.is_frozen(id)).collect();
    for id in ids {
        let n = store.get(id).len();
        let entries: Vec<usize> = if n <= config.max_entries {
            (0..n).collect()
        } else {
            sample(&mut rng, n, config.max_entries).into_vec()
        };
        for i in entries {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + config.eps;
            let plus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig - config.eps;
            let minus = eval(store)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * config.eps);
            let a = analytic.param(id).map_or(0.0, |g| g.data()[i]);
            let err = relative_error(a, numeric, config.floor);
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                report.worst = Some((store.name(id).to_string(), i, a, numeric));
            }
        }
    }
    Ok(report)
}
