use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{AutodiffError, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub eps: f64,
    /// Above this many coordinates a fixed random subsample of this size is checked.
    pub max_coords: usize,
    pub seed: u64,
    /// Lower bound on the relative-error denominator, so vanishing
    /// gradients are compared absolutely.
    pub denom_floor: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            eps: 1e-5,
            max_coords: 10_000,
            seed: 0,
            denom_floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
    /// Coordinates whose perturbation crossed a non-differentiable point.
    pub excluded: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// `f` must record its loss on the tape it is given, placing parameters with
/// [`Tape::param`]. A coordinate is skipped when either perturbed evaluation
/// takes a different branch of a kinked op than the unperturbed one.
pub fn grad_check<F>(f: F, ps: &ParamStore, cfg: GradCheckConfig) -> Result<GradCheckReport, AutodiffError>
where
    F: for<'t> Fn(&'t Tape, &ParamStore) -> Result<Var<'t>, AutodiffError>,
{
    let eval = |store: &ParamStore| -> Result<(f64, u64), AutodiffError> {
        let tape = Tape::with_kink_tracking();
        let loss = f(&tape, store)?;
        Ok((loss.item()?, tape.kink_signature()))
    };

    let tape = Tape::with_kink_tracking();
    let loss = f(&tape, ps)?;
    let base = loss.item()?;
    let base_sig = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let (again, _) = eval(ps)?;
    if again.to_bits() != base.to_bits() {
        return Err(AutodiffError::NonDeterministic { first: base, second: again });
    }

    let coords: Vec<(usize, usize)> = ps
        .iter()
        .enumerate()
        .flat_map(|(pi, (_, p))| (0..p.value.len()).map(move |c| (pi, c)))
        .collect();
    let chosen: Vec<(usize, usize)> = if coords.len() > cfg.max_coords {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut picks = sample(&mut rng, coords.len(), cfg.max_coords).into_vec();
        picks.sort_unstable();
        picks.into_iter().map(|i| coords[i]).collect()
    } else {
        coords
    };

    let names: Vec<String> = ps.names().map(str::to_string).collect();
    let mut work = ps.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        checked: 0,
        excluded: 0,
    };
    for (pi, c) in chosen {
        let name = &names[pi];
        let orig = work.value(name).unwrap().data()[c];
        work.value_mut(name).unwrap().data_mut()[c] = orig + cfg.eps;
        let (plus, sig_plus) = eval(&work)?;
        work.value_mut(name).unwrap().data_mut()[c] = orig - cfg.eps;
        let (minus, sig_minus) = eval(&work)?;
        work.value_mut(name).unwrap().data_mut()[c] = orig;

        if sig_plus != base_sig || sig_minus != base_sig {
            report.excluded += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = grads.param(name).map_or(0.0, |g| g.data()[c]);
        let denom = analytic.abs().max(numeric.abs()).max(cfg.denom_floor);
        let rel = (analytic - numeric).abs() / denom;
        report.checked += 1;
        if rel > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(rel);
            if rel >= report.max_rel_error {
                report.worst = Some((name.clone(), c));
            }
        }
    }
    Ok(report)
}
