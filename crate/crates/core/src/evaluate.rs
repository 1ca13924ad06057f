//! Held-out error of the rating model and of two arithmetic baselines.

use crate::autonet::{
    gather_rows, predict_ratings_batch, train_observed, Activation, ArchitectureConfig,
    Autoencoder, AutonetError, EpochStats, LossKind, Optimizer, TrainConfig, TrainReport,
};
use crate::dataset::{HeldOut, RatingMatrix, DEMOGRAPHIC_COLUMNS};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    pub mse: f64,
    pub rmse: f64,
    pub count: usize,
}

impl ErrorMetrics {
    fn from_pairs(pairs: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut sum, mut count) = (0.0, 0usize);
        for (actual, predicted) in pairs {
            sum += (actual - predicted).powi(2);
            count += 1;
        }
        let mse = if count == 0 { f64::NAN } else { sum / count as f64 };
        Self {
            mse,
            rmse: mse.sqrt(),
            count,
        }
    }
}

fn held_values<'a>(test: &'a RatingMatrix, held: &'a HeldOut) -> impl Iterator<Item = (usize, usize, f64)> + 'a {
    held.positions
        .iter()
        .map(move |&(r, c)| (r, c, f64::from(test.get(r, c))))
}

/// Every held-out cell predicted by the mean of all training ratings.
pub fn global_average(train: &RatingMatrix, test: &RatingMatrix, held: &HeldOut) -> ErrorMetrics {
    let (mut sum, mut n) = (0.0, 0usize);
    for row in 0..train.n_users() {
        for &(_, v) in train.row_entries(row) {
            sum += f64::from(v);
            n += 1;
        }
    }
    let mean = sum / n.max(1) as f64;
    ErrorMetrics::from_pairs(held_values(test, held).map(|(_, _, a)| (a, mean)))
}

/// Each held-out cell predicted by its user's mean training rating (the
/// global mean for users with no training ratings left).
pub fn user_average(train: &RatingMatrix, test: &RatingMatrix, held: &HeldOut) -> ErrorMetrics {
    let (mut total, mut n) = (0.0, 0usize);
    let means: Vec<Option<f64>> = (0..train.n_users())
        .map(|row| {
            let entries = train.row_entries(row);
            let s: f64 = entries.iter().map(|&(_, v)| f64::from(v)).sum();
            total += s;
            n += entries.len();
            (!entries.is_empty()).then(|| s / entries.len() as f64)
        })
        .collect();
    let global = total / n.max(1) as f64;
    ErrorMetrics::from_pairs(
        held_values(test, held).map(|(r, _, a)| (a, means[r].unwrap_or(global))),
    )
}

/// Model predictions for held-out cells, feeding each user's training row.
pub fn model_heldout(
    model: &Autoencoder<f32>,
    train: &RatingMatrix,
    test: &RatingMatrix,
    held: &HeldOut,
) -> Result<ErrorMetrics, AutonetError> {
    let mut rows: Vec<usize> = held.positions.iter().map(|p| p.0).collect();
    rows.dedup();
    let mut predicted = Vec::with_capacity(held.len());
    for chunk in rows.chunks(256) {
        let batch = gather_rows::<f32, _>(train, chunk);
        let out = predict_ratings_batch(model, batch.view())?;
        for (i, &row) in chunk.iter().enumerate() {
            for &(r, c) in held.positions.iter().filter(|p| p.0 == row) {
                predicted.push((r, c, f64::from(out[[i, DEMOGRAPHIC_COLUMNS + c]])));
            }
        }
    }
    predicted.sort_by_key(|p| (p.0, p.1));
    Ok(ErrorMetrics::from_pairs(
        held_values(test, held)
            .zip(predicted)
            .map(|((_, _, a), (_, _, p))| (a, p)),
    ))
}

/// Rating-model setup used for MovieLens-100K evaluation.
pub fn movielens_setup(seed: u64) -> (ArchitectureConfig, TrainConfig) {
    let arch = ArchitectureConfig {
        hidden: vec![512, 128, 512],
        hidden_activation: Activation::Selu,
        final_activation: Activation::Relu,
    };
    let train = TrainConfig {
        epochs: 300,
        learning_rate: 0.005,
        batch_size: 32,
        seed,
        loss: LossKind::Masked,
        refeed: false,
        optimizer: Optimizer::Sgd { momentum: 0.9 },
        weight_decay: 0.0,
        input_dropout: 0.0,
        bottleneck_dropout: 0.8,
    };
    (arch, train)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Evaluation {
    pub model: ErrorMetrics,
    pub global_average: ErrorMetrics,
    pub user_average: ErrorMetrics,
    pub report: TrainReport,
}

/// Trains on the split's training matrix and scores model and baselines on
/// the held-out cells. `observe` sees each finished epoch.
pub fn evaluate_split(
    train: &RatingMatrix,
    test: &RatingMatrix,
    held: &HeldOut,
    arch: &ArchitectureConfig,
    config: &TrainConfig,
    observe: impl FnMut(&EpochStats, &Autoencoder<f32>),
) -> Result<(Autoencoder<f32>, Evaluation), AutonetError> {
    let mut model = Autoencoder::<f32>::new(train.width(), arch, config.seed)?;
    let report = train_observed(&mut model, train, config, observe)?;
    let evaluation = Evaluation {
        model: model_heldout(&model, train, test, held)?,
        global_average: global_average(train, test, held),
        user_average: user_average(train, test, held),
        report,
    };
    Ok((model, evaluation))
}
