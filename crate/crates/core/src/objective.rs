//! Training objective: box-confidence MSE over the whole lattice plus
//! class-weighted cross-entropy restricted to positive priors.

use serde::{Deserialize, Serialize};

use crate::nn::tensor::{NnError, Tensor};
use crate::span::{AssertionClass, TargetGrid};

const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightScheme {
    /// w_c = N_total / (C_present * N_c): rare classes weigh more. Default.
    InverseFrequency,
    /// w_c = N_c / N_total: the literal batch fraction, kept as an ablation.
    BatchFraction,
}

/// Per-class loss weights for classes 1..=C. Classes absent from the batch
/// carry weight 0 and contribute nothing.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    w: Vec<f64>,
}

impl ClassWeights {
    pub fn uniform(class_count: usize) -> Self {
        Self {
            w: vec![1.0; class_count],
        }
    }

    pub fn get(&self, class: AssertionClass) -> f64 {
        debug_assert!(!class.is_background());
        self.w[(class.id() - 1) as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.w
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            w: self.w.iter().map(|w| w * factor).collect(),
        }
    }
}

/// Weights from the positive priors of a batch of target grids. An
/// all-negative batch yields all-zero weights (and thus zero class loss).
pub fn class_weights(
    targets: &[&TargetGrid],
    class_count: usize,
    scheme: WeightScheme,
) -> ClassWeights {
    let mut counts = vec![0usize; class_count];
    for grid in targets {
        for i in 0..grid.cells() {
            if grid.positive[i] {
                counts[(grid.class_target[i].id() - 1) as usize] += 1;
            }
        }
    }
    let total: usize = counts.iter().sum();
    let present = counts.iter().filter(|&&n| n > 0).count();
    let mut w = vec![0.0; class_count];
    if total == 0 {
        return ClassWeights { w };
    }
    for c in 0..class_count {
        if counts[c] == 0 {
            continue;
        }
        w[c] = match scheme {
            WeightScheme::InverseFrequency => total as f64 / (present * counts[c]) as f64,
            WeightScheme::BatchFraction => counts[c] as f64 / total as f64,
        };
    }
    ClassWeights { w }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub box_loss: f64,
    pub class_loss: f64,
    pub total: f64,
}

fn check_box_shape(p_box: &Tensor, target: &TargetGrid) -> Result<(), NnError> {
    let expected = vec![target.seq_len, target.prior_count];
    if p_box.shape() != expected.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected,
            got: p_box.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_class_shape(
    p_class: &Tensor,
    target: &TargetGrid,
    class_count: usize,
) -> Result<(), NnError> {
    let expected = vec![target.seq_len, target.prior_count, class_count];
    if p_class.shape() != expected.as_slice() {
        return Err(NnError::ShapeMismatch {
            expected,
            got: p_class.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error between box confidences and IoU targets over every
/// cell of the lattice.
pub fn box_loss(p_box: &Tensor, target: &TargetGrid) -> Result<f64, NnError> {
    check_box_shape(p_box, target)?;
    let n = target.cells();
    let mut sum = 0.0;
    for i in 0..n {
        let d = p_box.data()[i] - target.iou_target[i];
        sum += d * d;
    }
    Ok(sum / n as f64)
}

/// Weighted negative log-likelihood of the matched class, averaged over the
/// whole lattice but summed only where priors are positive; non-positive
/// cells are skipped outright, so their predictions cannot influence the
/// value.
pub fn class_loss(
    p_class: &Tensor,
    target: &TargetGrid,
    weights: &ClassWeights,
) -> Result<f64, NnError> {
    let class_count = p_class.shape()[2];
    check_class_shape(p_class, target, class_count)?;
    let a = target.prior_count;
    let mut sum = 0.0;
    for i in 0..target.cells() {
        if !target.positive[i] {
            continue;
        }
        let (t, pa) = (i / a, i % a);
        let c = target.class_target[i];
        let p = p_class.at3(t, pa, (c.id() - 1) as usize);
        sum -= weights.get(c) * p.max(LOG_CLAMP).ln();
    }
    Ok(sum / target.cells() as f64)
}

/// Box and class terms plus their exact sum.
pub fn total_loss(
    p_box: &Tensor,
    p_class: &Tensor,
    target: &TargetGrid,
    weights: &ClassWeights,
) -> Result<LossBreakdown, NnError> {
    let box_loss = box_loss(p_box, target)?;
    let class_loss = class_loss(p_class, target, weights)?;
    Ok(LossBreakdown {
        box_loss,
        class_loss,
        total: box_loss + class_loss,
    })
}

/// Gradients of `total_loss` with respect to the prediction grids.
/// Piecewise-consistent with the log clamp: probabilities at or below the
/// clamp get a zero gradient.
pub fn loss_gradients(
    p_box: &Tensor,
    p_class: &Tensor,
    target: &TargetGrid,
    weights: &ClassWeights,
) -> Result<(Tensor, Tensor), NnError> {
    check_box_shape(p_box, target)?;
    let class_count = p_class.shape()[2];
    check_class_shape(p_class, target, class_count)?;
    let cells = target.cells() as f64;
    let a = target.prior_count;

    let mut grad_box = Tensor::zeros(p_box.shape());
    for i in 0..target.cells() {
        grad_box.data_mut()[i] = 2.0 * (p_box.data()[i] - target.iou_target[i]) / cells;
    }
    let mut grad_class = Tensor::zeros(p_class.shape());
    for i in 0..target.cells() {
        if !target.positive[i] {
            continue;
        }
        let (t, pa) = (i / a, i % a);
        let ci = (target.class_target[i].id() - 1) as usize;
        let p = p_class.at3(t, pa, ci);
        if p > LOG_CLAMP {
            grad_class.set3(t, pa, ci, -weights.get(target.class_target[i]) / (p * cells));
        }
    }
    Ok((grad_box, grad_class))
}
