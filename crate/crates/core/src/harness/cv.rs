use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::rng_from;

/// Default test fraction when a single fold is requested.
pub const DEFAULT_HOLDOUT: f64 = 1.0 / 6.0;

/// One `(train, test)` split of row indices; both sorted ascending.
pub type Split = (Vec<usize>, Vec<usize>);

/// Seeded shuffle of `0..n` cut into `folds` near-equal test parts; the
/// first `n % folds` parts get one extra row. `folds == 1` instead holds
/// out `round(holdout · n)` rows (at least one, at most `n − 1`).
pub fn cross_validate(n: usize, folds: usize, seed: u64, holdout: f64) -> Result<Vec<Split>> {
    if folds == 0 {
        return Err(Error::config("folds must be at least 1"));
    }
    if folds > n {
        return Err(Error::config(format!("{folds} folds for {n} rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, 0x4356));
    let finish = |mut train: Vec<usize>, mut test: Vec<usize>| {
        train.sort_unstable();
        test.sort_unstable();
        (train, test)
    };
    if folds == 1 {
        if n < 2 {
            return Err(Error::config("a holdout split needs at least two rows"));
        }
        if !(holdout > 0.0 && holdout < 1.0) {
            return Err(Error::config(format!("holdout fraction {holdout} outside (0, 1)")));
        }
        let t = ((holdout * n as f64).round() as usize).clamp(1, n - 1);
        return Ok(vec![finish(order[t..].to_vec(), order[..t].to_vec())]);
    }
    let (base, extra) = (n / folds, n % folds);
    let mut splits = Vec::with_capacity(folds);
    let mut start = 0;
    for f in 0..folds {
        let len = base + usize::from(f < extra);
        let test = order[start..start + len].to_vec();
        let train = order[..start].iter().chain(&order[start + len..]).copied().collect();
        splits.push(finish(train, test));
        start += len;
    }
    Ok(splits)
}
