//! Finite-difference validation of tape gradients.
//!
//! Compares analytic gradients against central differences
//! `(f(x+eps) - f(x-eps)) / (2 eps)` coordinate by coordinate. Large
//! parameter tensors are checked on a seeded subsample of coordinates so the
//! cost stays proportional to the number of checks, not the number of
//! weights; the analytic side is always the full backward pass.

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::params::{Bound, ParamId, ParamStore};
use crate::numerics::tape::{Tape, V};
use crate::util::mix_seed_n;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat coordinate of the worst error.
    pub worst: String,
    pub checked_coords: usize,
}

/// Check gradients of a scalar-valued build function against central
/// differences. `max_coords_per_param` bounds how many coordinates of each
/// parameter tensor are probed (0 means all).
pub fn grad_check<F>(
    store: &mut ParamStore,
    build: F,
    eps: f64,
    max_coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &Bound) -> Result<V>,
{
    assert!(eps > 0.0, "eps must be positive");

    // Analytic gradients from one full backward pass.
    let mut tape = Tape::new();
    let bound = store.bind(&mut tape);
    let out = build(&mut tape, &bound)?;
    if tape.value(out).len() != 1 {
        return Err(Error::Numerics(
            "grad_check build function must produce a scalar".to_string(),
        ));
    }
    let grads = tape.backward(out)?;
    let analytic = bound.collect_grads(store, &grads);
    let reached: Vec<bool> = (0..store.len())
        .map(|i| bound.grad_reached(ParamId(i), &grads))
        .collect();
    drop(tape);

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let bound = store.bind_frozen(&mut tape);
        let out = build(&mut tape, &bound)?;
        Ok(tape.item(out))
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        checked_coords: 0,
    };

    for pi in 0..store.len() {
        // Parameters the output provably does not depend on need no probing.
        if !reached[pi] {
            continue;
        }
        let len = store.tensor(ParamId(pi)).len();
        let coords: Vec<usize> = if max_coords_per_param == 0 || len <= max_coords_per_param {
            (0..len).collect()
        } else {
            let mut all: Vec<usize> = (0..len).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed_n(seed, "gradcheck", pi as u64));
            all.shuffle(&mut rng);
            let mut picked = all[..max_coords_per_param].to_vec();
            picked.sort_unstable();
            picked
        };

        for c in coords {
            let orig = store.tensor(ParamId(pi)).data()[c];
            store.tensor_mut(ParamId(pi)).data_mut()[c] = orig + eps;
            let f_plus = eval(store)?;
            store.tensor_mut(ParamId(pi)).data_mut()[c] = orig - eps;
            let f_minus = eval(store)?;
            store.tensor_mut(ParamId(pi)).data_mut()[c] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(1.0);
            report.checked_coords += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = format!("{}[{}]", store.name(ParamId(pi)), c);
            }
        }
    }

    if report.checked_coords == 0 {
        return Err(Error::Numerics(
            "grad_check probed no coordinates; output depends on no parameter".to_string(),
        ));
    }
    Ok(report)
}
