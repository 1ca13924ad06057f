use super::{DatasetError, RatingMatrix};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Held-out cells as `(row, item column)` pairs, sorted. Item columns exclude
/// the demographic prefix.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HeldOut {
    pub positions: Vec<(usize, usize)>,
}

impl HeldOut {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.positions.binary_search(&(row, col)).is_ok()
    }
}

/// Number of cells to hold out for a user with `nonzero` ratings.
pub(crate) fn holdout_count(fraction: f64, nonzero: usize) -> usize {
    // `0.05 * 60` evaluates to 3.0000000000000004; absorb that before ceil.
    let raw = fraction * nonzero as f64;
    ((raw - 1e-9).ceil().max(0.0) as usize).min(nonzero)
}

/// Zeroes `ceil(fraction * nnz)` randomly chosen item entries per user.
/// The demographic prefix is never touched. Deterministic for a fixed seed.
pub fn split_train_test(
    test: &RatingMatrix,
    holdout_fraction: f64,
    seed: u64,
) -> Result<(RatingMatrix, HeldOut), DatasetError> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(DatasetError::HoldoutFraction(holdout_fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = test.clone();
    let mut positions = Vec::new();
    for row in 0..test.n_users() {
        let entries = test.row_entries(row);
        let k = holdout_count(holdout_fraction, entries.len());
        if k == 0 {
            continue;
        }
        let mut picked: Vec<usize> = sample(&mut rng, entries.len(), k)
            .into_iter()
            .map(|i| entries[i].0 as usize)
            .collect();
        picked.sort_unstable();
        for col in picked {
            train.set(row, col, 0.0);
            positions.push((row, col));
        }
    }
    Ok((train, HeldOut { positions }))
}
