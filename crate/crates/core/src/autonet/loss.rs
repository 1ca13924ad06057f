use super::Scalar;
use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LossError {
    #[error("length mismatch: actual has {actual}, predicted has {predicted}")]
    Length { actual: usize, predicted: usize },
    #[error("no rated cell: every actual entry is zero")]
    EmptyMask,
    #[error("empty input")]
    Empty,
}

/// Whether reconstruction error counts only rated (nonzero) target cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Masked,
    Unmasked,
}

fn check_lengths<F>(actual: &[F], predicted: &[F]) -> Result<(), LossError> {
    if actual.len() != predicted.len() {
        return Err(LossError::Length {
            actual: actual.len(),
            predicted: predicted.len(),
        });
    }
    Ok(())
}

/// `Σ m_i (r_i - y_i)² / Σ m_i` with `m_i = 0` exactly where `r_i = 0`.
pub fn masked_mse<F: Scalar>(actual: &[F], predicted: &[F]) -> Result<F, LossError> {
    check_lengths(actual, predicted)?;
    let mut sum = F::zero();
    let mut count = 0usize;
    for (&r, &y) in actual.iter().zip(predicted) {
        if r != F::zero() {
            let e = r - y;
            sum += e * e;
            count += 1;
        }
    }
    if count == 0 {
        return Err(LossError::EmptyMask);
    }
    Ok(sum / F::from_usize(count).unwrap())
}

pub fn masked_rmse<F: Scalar>(actual: &[F], predicted: &[F]) -> Result<F, LossError> {
    masked_mse(actual, predicted).map(F::sqrt)
}

/// Mean squared difference over every cell; zeros count as targets.
pub fn unmasked_mse<F: Scalar>(actual: &[F], predicted: &[F]) -> Result<F, LossError> {
    check_lengths(actual, predicted)?;
    if actual.is_empty() {
        return Err(LossError::Empty);
    }
    let sum = actual
        .iter()
        .zip(predicted)
        .fold(F::zero(), |acc, (&r, &y)| acc + (r - y) * (r - y));
    Ok(sum / F::from_usize(actual.len()).unwrap())
}

/// Batch loss bookkeeping: the summed squared error and the number of cells
/// it was averaged over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss<F> {
    pub squared_error: F,
    pub cells: usize,
}

impl<F: Scalar> BatchLoss<F> {
    pub fn mean(&self) -> F {
        if self.cells == 0 {
            F::zero()
        } else {
            self.squared_error / F::from_usize(self.cells).unwrap()
        }
    }
}

/// Loss of `output` against `target` plus its gradient with respect to
/// `output`. Masked cells receive zero gradient. A batch with no rated cell
/// yields zero loss and zero gradient.
pub(crate) fn loss_and_output_gradient<F: Scalar>(
    kind: LossKind,
    output: ArrayView2<F>,
    target: ArrayView2<F>,
) -> (BatchLoss<F>, Array2<F>) {
    let mut grad = Array2::zeros(output.raw_dim());
    let mut sum = F::zero();
    let cells = match kind {
        LossKind::Masked => target.iter().filter(|&&t| t != F::zero()).count(),
        LossKind::Unmasked => target.len(),
    };
    if cells == 0 {
        return (
            BatchLoss {
                squared_error: F::zero(),
                cells,
            },
            grad,
        );
    }
    let scale = F::from_f64(2.0).unwrap() / F::from_usize(cells).unwrap();
    Zip::from(&mut grad)
        .and(&output)
        .and(&target)
        .for_each(|g, &y, &t| {
            if kind == LossKind::Unmasked || t != F::zero() {
                let e = y - t;
                sum += e * e;
                *g = scale * e;
            }
        });
    (
        BatchLoss {
            squared_error: sum,
            cells,
        },
        grad,
    )
}
