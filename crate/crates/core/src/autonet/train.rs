use super::loss::LossKind;
use super::model::{Autoencoder, Dropout, Gradients};
use super::{AutonetError, Scalar};
use crate::dataset::RatingMatrix;
use ndarray::{Array1, Array2, ArrayView2, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    /// Heavy-ball SGD: `v = momentum * v + g; w -= lr * v`.
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Sgd { momentum: 0.9 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub loss: LossKind,
    /// Second pass per batch on the first pass's dense output.
    pub refeed: bool,
    pub optimizer: Optimizer,
    /// L2 penalty on weights (not biases).
    pub weight_decay: f64,
    pub input_dropout: f64,
    /// Dropout on the bottleneck code.
    pub bottleneck_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.005,
            batch_size: 32,
            seed: 0,
            loss: LossKind::Masked,
            refeed: false,
            optimizer: Optimizer::default(),
            weight_decay: 0.0,
            input_dropout: 0.0,
            bottleneck_dropout: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AutonetError> {
        let bad = |msg: &str| Err(AutonetError::Config(msg.to_string()));
        if self.epochs < 1 {
            return bad("epochs must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.batch_size < 1 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.input_dropout) || !(0.0..1.0).contains(&self.bottleneck_dropout)
        {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return bad("weight decay must be non-negative");
        }
        Ok(())
    }
}

/// Rows of training data, materialised densely one row at a time.
pub trait RowSource<F> {
    fn n_rows(&self) -> usize;
    fn width(&self) -> usize;
    fn fill_row(&self, row: usize, out: &mut [F]);
}

impl<F: Scalar> RowSource<F> for Array2<F> {
    fn n_rows(&self) -> usize {
        self.nrows()
    }

    fn width(&self) -> usize {
        self.ncols()
    }

    fn fill_row(&self, row: usize, out: &mut [F]) {
        for (o, v) in out.iter_mut().zip(self.row(row)) {
            *o = *v;
        }
    }
}

impl<F: Scalar> RowSource<F> for RatingMatrix {
    fn n_rows(&self) -> usize {
        self.n_users()
    }

    fn width(&self) -> usize {
        RatingMatrix::width(self)
    }

    fn fill_row(&self, row: usize, out: &mut [F]) {
        out.fill(F::zero());
        for (o, &v) in out.iter_mut().zip(self.demographics(row)) {
            *o = F::from_f32(v).unwrap();
        }
        let offset = crate::dataset::DEMOGRAPHIC_COLUMNS;
        for &(c, v) in self.row_entries(row) {
            out[offset + c as usize] = F::from_f32(v).unwrap();
        }
    }
}

/// Dense `rows.len() × width` batch of the given source rows.
pub fn gather_rows<F: Scalar, S: RowSource<F> + ?Sized>(source: &S, rows: &[usize]) -> Array2<F> {
    let mut batch = Array2::zeros((rows.len(), source.width()));
    for (mut out, &r) in batch.rows_mut().into_iter().zip(rows) {
        source.fill_row(r, out.as_slice_mut().expect("standard layout"));
    }
    batch
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 0-based epoch index.
    pub epoch: usize,
    /// Training loss over the epoch's first passes.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
}

enum OptimizerState<F> {
    Sgd {
        momentum: F,
        velocity: Vec<(Array2<F>, Array1<F>)>,
    },
    Adam {
        beta1: F,
        beta2: F,
        epsilon: F,
        step: i32,
        first: Vec<(Array2<F>, Array1<F>)>,
        second: Vec<(Array2<F>, Array1<F>)>,
    },
}

fn zeros_like<F: Scalar>(model: &Autoencoder<F>) -> Vec<(Array2<F>, Array1<F>)> {
    model
        .layers()
        .iter()
        .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.raw_dim())))
        .collect()
}

impl<F: Scalar> OptimizerState<F> {
    fn new(opt: Optimizer, model: &Autoencoder<F>) -> Self {
        let f = |v: f64| F::from_f64(v).unwrap();
        match opt {
            Optimizer::Sgd { momentum } => OptimizerState::Sgd {
                momentum: f(momentum),
                velocity: zeros_like(model),
            },
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => OptimizerState::Adam {
                beta1: f(beta1),
                beta2: f(beta2),
                epsilon: f(epsilon),
                step: 0,
                first: zeros_like(model),
                second: zeros_like(model),
            },
        }
    }

    fn step(&mut self, model: &mut Autoencoder<F>, mut grads: Gradients<F>, lr: F, decay: F) {
        if decay > F::zero() {
            for (layer, (dw, _)) in model.layers().iter().zip(grads.iter_mut()) {
                dw.scaled_add(decay, &layer.weights);
            }
        }
        match self {
            OptimizerState::Sgd { momentum, velocity } => {
                for ((layer, (dw, db)), (vw, vb)) in
                    model.layers_mut().iter_mut().zip(grads).zip(velocity.iter_mut())
                {
                    Zip::from(&mut *vw).and(&dw).for_each(|v, &g| *v = *momentum * *v + g);
                    Zip::from(&mut *vb).and(&db).for_each(|v, &g| *v = *momentum * *v + g);
                    layer.weights.scaled_add(-lr, vw);
                    layer.bias.scaled_add(-lr, vb);
                }
            }
            OptimizerState::Adam {
                beta1,
                beta2,
                epsilon,
                step,
                first,
                second,
            } => {
                *step += 1;
                let (b1, b2, eps) = (*beta1, *beta2, *epsilon);
                let c1 = F::one() - b1.powi(*step);
                let c2 = F::one() - b2.powi(*step);
                let update = |w: &mut F, m: &mut F, v: &mut F, g: F| {
                    *m = b1 * *m + (F::one() - b1) * g;
                    *v = b2 * *v + (F::one() - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                };
                for (((layer, (dw, db)), (mw, mb)), (vw, vb)) in model
                    .layers_mut()
                    .iter_mut()
                    .zip(grads)
                    .zip(first.iter_mut())
                    .zip(second.iter_mut())
                {
                    Zip::from(&mut layer.weights)
                        .and(mw)
                        .and(vw)
                        .and(&dw)
                        .for_each(|w, m, v, &g| update(w, m, v, g));
                    Zip::from(&mut layer.bias)
                        .and(mb)
                        .and(vb)
                        .and(&db)
                        .for_each(|w, m, v, &g| update(w, m, v, g));
                }
            }
        }
    }
}

/// Mini-batch training; see [`train_observed`].
pub fn train<F: Scalar, S: RowSource<F> + ?Sized>(
    model: &mut Autoencoder<F>,
    data: &S,
    config: &TrainConfig,
) -> Result<TrainReport, AutonetError> {
    train_observed(model, data, config, |_, _| {})
}

/// Mini-batch gradient descent on the configured reconstruction loss.
///
/// Rows are shuffled every epoch by a ChaCha8 stream seeded from
/// `config.seed`, which also drives dropout, so runs are reproducible.
/// `observer` sees the model after every epoch.
pub fn train_observed<F: Scalar, S: RowSource<F> + ?Sized>(
    model: &mut Autoencoder<F>,
    data: &S,
    config: &TrainConfig,
    mut observer: impl FnMut(&EpochStats, &Autoencoder<F>),
) -> Result<TrainReport, AutonetError> {
    config.validate()?;
    if data.width() != model.input_dim() {
        return Err(AutonetError::Dimension {
            expected: model.input_dim(),
            found: data.width(),
        });
    }
    if data.n_rows() == 0 {
        return Err(AutonetError::Config("no training rows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(config.optimizer, model);
    let lr = F::from_f64(config.learning_rate).unwrap();
    let decay = F::from_f64(config.weight_decay).unwrap();
    let dropout = Dropout {
        input: config.input_dropout,
        bottleneck: config.bottleneck_dropout,
    };
    let mut order: Vec<usize> = (0..data.n_rows()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut squared_error = 0.0;
        let mut cells = 0usize;
        for (batch_index, rows) in order.chunks(config.batch_size).enumerate() {
            let batch = gather_rows(data, rows);
            let (loss, grads, output) =
                model.train_pass(batch.view(), batch.view(), config.loss, &dropout, &mut rng);
            let loss_value = loss.squared_error.to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                return Err(AutonetError::Diverged {
                    epoch,
                    batch: batch_index,
                });
            }
            squared_error += loss_value;
            cells += loss.cells;
            if loss.cells > 0 {
                state.step(model, grads, lr, decay);
            }
            if config.refeed {
                refeed_step(model, output.view(), config, &dropout, &mut rng, &mut state, lr, decay);
            }
        }
        if !model.is_finite() {
            return Err(AutonetError::Diverged { epoch, batch: 0 });
        }
        let stats = EpochStats {
            epoch,
            loss: if cells == 0 { 0.0 } else { squared_error / cells as f64 },
        };
        log::debug!("epoch {} loss {:.6}", epoch, stats.loss);
        report.loss_history.push(stats.loss);
        observer(&stats, model);
    }
    Ok(report)
}

#[allow(clippy::too_many_arguments)]
fn refeed_step<F: Scalar>(
    model: &mut Autoencoder<F>,
    dense: ArrayView2<F>,
    config: &TrainConfig,
    dropout: &Dropout,
    rng: &mut ChaCha8Rng,
    state: &mut OptimizerState<F>,
    lr: F,
    decay: F,
) {
    let (loss, grads, _) = model.train_pass(dense, dense, config.loss, dropout, rng);
    if loss.cells > 0 && loss.squared_error.is_finite() {
        state.step(model, grads, lr, decay);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autonet::{masked_mse, predict_ratings, Activation, ArchitectureConfig, DenseLayer};
    use ndarray::Array1;
    use rand::Rng;

    /// 20 × 15 rank-1 ratings with roughly a third of the cells blanked.
    pub(crate) fn rank_one_fixture(seed: u64) -> Array2<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u: Vec<f64> = (0..20).map(|_| rng.random_range(1.0..3.2)).collect();
        let v: Vec<f64> = (0..15).map(|_| rng.random_range(1.0..3.2)).collect();
        Array2::from_shape_fn((20, 15), |(i, j)| {
            if rng.random::<f64>() < 0.3 {
                0.0
            } else {
                (u[i] * v[j]).round().clamp(1.0, 10.0) as f32
            }
        })
    }

    fn rank_one_config() -> (ArchitectureConfig, TrainConfig) {
        (
            ArchitectureConfig::mirrored(&[12], 2),
            TrainConfig {
                epochs: 200,
                learning_rate: 0.01,
                batch_size: 4,
                seed: 5,
                optimizer: Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
                ..TrainConfig::default()
            },
        )
    }

    fn reconstruction_mse(model: &Autoencoder<f32>, data: &Array2<f32>) -> f32 {
        let mut actual = Vec::new();
        let mut predicted = Vec::new();
        for row in data.rows() {
            let row = row.to_vec();
            actual.extend(&row);
            predicted.extend(predict_ratings(model, &row).unwrap());
        }
        masked_mse(&actual, &predicted).unwrap()
    }

    #[test]
    fn rank_one_reconstructs_through_two_dim_bottleneck() {
        let data = rank_one_fixture(11);
        let (arch, cfg) = rank_one_config();
        let mut model = Autoencoder::<f32>::new(15, &arch, 3).unwrap();
        let report = train(&mut model, &data, &cfg).unwrap();
        assert_eq!(report.loss_history.len(), 200);
        let mse = reconstruction_mse(&model, &data);
        assert!(mse < 0.5, "masked MSE {mse}");
    }

    #[test]
    fn one_epoch_changes_weights() {
        let data = rank_one_fixture(1);
        let (arch, mut cfg) = rank_one_config();
        cfg.epochs = 1;
        let before = Autoencoder::<f32>::new(15, &arch, 3).unwrap();
        let mut after = before.clone();
        let report = train(&mut after, &data, &cfg).unwrap();
        assert_eq!(report.loss_history.len(), 1);
        assert_ne!(before, after);
    }

    #[test]
    fn same_seed_same_history() {
        let data = rank_one_fixture(2);
        let (arch, mut cfg) = rank_one_config();
        cfg.epochs = 15;
        cfg.bottleneck_dropout = 0.3;
        cfg.refeed = true;
        let run = || {
            let mut m = Autoencoder::<f32>::new(15, &arch, 3).unwrap();
            let r = train(&mut m, &data, &cfg).unwrap();
            (r, m)
        };
        let (ra, ma) = run();
        let (rb, mb) = run();
        assert_eq!(ra, rb);
        assert_eq!(ma, mb);
    }

    #[test]
    fn convex_linear_case_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = Array2::from_shape_simple_fn((30, 4), || rng.random_range(-1.0..1.0f64));
        let layer = DenseLayer {
            weights: Array2::zeros((4, 4)),
            bias: Array1::zeros(4),
            activation: Activation::None,
        };
        let mut model = Autoencoder::from_layers(vec![layer]).unwrap();
        let cfg = TrainConfig {
            epochs: 60,
            learning_rate: 0.01,
            batch_size: 30,
            loss: LossKind::Unmasked,
            optimizer: Optimizer::Sgd { momentum: 0.0 },
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        for w in report.loss_history.windows(2) {
            assert!(w[1] <= w[0], "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn divergence_is_reported() {
        let data = rank_one_fixture(4);
        let (arch, mut cfg) = rank_one_config();
        cfg.optimizer = Optimizer::Sgd { momentum: 0.9 };
        cfg.learning_rate = 1e6;
        let mut model = Autoencoder::<f32>::new(15, &arch, 3).unwrap();
        assert!(matches!(
            train(&mut model, &data, &cfg),
            Err(AutonetError::Diverged { .. })
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let data = rank_one_fixture(4);
        let (arch, _) = rank_one_config();
        let mut model = Autoencoder::<f32>::new(15, &arch, 3).unwrap();
        for cfg in [
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: 0.0, ..TrainConfig::default() },
            TrainConfig { input_dropout: 1.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&mut model, &data, &cfg), Err(AutonetError::Config(_))));
        }
    }

    #[test]
    fn rating_matrix_row_source_includes_prefix() {
        let mut m = RatingMatrix::new(vec![1], vec![10, 20]);
        m.set_demographics(0, [1.0, 0.0, 1.0, 0.0, 0.0]);
        m.set(0, 1, 6.0);
        let batch: Array2<f64> = gather_rows(&m, &[0]);
        assert_eq!(batch.row(0).to_vec(), vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 6.0]);
    }
}
