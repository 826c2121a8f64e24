//! Central finite-difference verification of analytic gradients.

use super::tensor::{NnError, Parameter};

/// Anything whose loss and gradients can be probed parameter by parameter.
///
/// `loss` must be a pure forward evaluation of the current parameter values;
/// `loss_and_grad` additionally populates `grad` on every parameter
/// (overwriting, not accumulating, any previous content).
pub trait Checkable {
    fn loss(&self) -> f64;
    fn loss_and_grad(&mut self) -> f64;
    fn params(&mut self) -> Vec<&mut Parameter>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Name of the parameter holding the worst element.
    pub worst_param: String,
    pub elements_checked: usize,
}

/// Compare analytic gradients against central differences
/// `(L(p+eps) - L(p-eps)) / (2 eps)` for every parameter element.
///
/// Relative error is `|a-n| / max(1e-8, |a|+|n|)`. A non-finite loss aborts
/// with the name of the parameter being probed.
pub fn gradient_check<M: Checkable>(system: &mut M, eps: f64) -> Result<GradCheckReport, NnError> {
    let base_loss = system.loss_and_grad();
    if !base_loss.is_finite() {
        return Err(NnError::NonFiniteLoss {
            param: "<base>".to_string(),
        });
    }
    let analytic: Vec<(String, Vec<f64>)> = system
        .params()
        .iter()
        .map(|p| (p.name.clone(), p.grad.data().to_vec()))
        .collect();

    let mut max_rel = 0.0f64;
    let mut worst = String::new();
    let mut checked = 0usize;
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        #[allow(clippy::needless_range_loop)]
        for i in 0..grads.len() {
            {
                let mut params = system.params();
                params[pi].value.data_mut()[i] += eps;
            }
            let plus = system.loss();
            {
                let mut params = system.params();
                params[pi].value.data_mut()[i] -= 2.0 * eps;
            }
            let minus = system.loss();
            {
                let mut params = system.params();
                params[pi].value.data_mut()[i] += eps;
            }
            if !plus.is_finite() || !minus.is_finite() {
                return Err(NnError::NonFiniteLoss {
                    param: name.clone(),
                });
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let a = grads[i];
            let rel = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if rel > max_rel {
                max_rel = rel;
                worst = format!("{name}[{i}]");
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst_param: worst,
        elements_checked: checked,
    })
}

/// Wraps a checkable system and scales one parameter's analytic gradient,
/// for verifying that the checker actually detects a broken backward pass.
pub struct CorruptedGrad<M: Checkable> {
    pub inner: M,
    pub param_name: String,
    pub factor: f64,
}

impl<M: Checkable> Checkable for CorruptedGrad<M> {
    fn loss(&self) -> f64 {
        self.inner.loss()
    }

    fn loss_and_grad(&mut self) -> f64 {
        let loss = self.inner.loss_and_grad();
        for p in self.inner.params() {
            if p.name == self.param_name {
                p.grad.scale(self.factor);
            }
        }
        loss
    }

    fn params(&mut self) -> Vec<&mut Parameter> {
        self.inner.params()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tensor::Tensor;

    /// y = w.x + b against fixed targets under MSE; gradients are exact, so
    /// the check should come out near machine precision.
    struct LinearMse {
        w: Parameter,
        b: Parameter,
        xs: Vec<Vec<f64>>,
        ys: Vec<f64>,
    }

    impl LinearMse {
        fn predict(&self, x: &[f64]) -> f64 {
            self.w
                .value
                .data()
                .iter()
                .zip(x.iter())
                .map(|(w, x)| w * x)
                .sum::<f64>()
                + self.b.value.data()[0]
        }
    }

    impl Checkable for LinearMse {
        fn loss(&self) -> f64 {
            let n = self.xs.len() as f64;
            self.xs
                .iter()
                .zip(self.ys.iter())
                .map(|(x, y)| {
                    let d = self.predict(x) - y;
                    d * d
                })
                .sum::<f64>()
                / n
        }

        fn loss_and_grad(&mut self) -> f64 {
            self.w.zero_grad();
            self.b.zero_grad();
            let n = self.xs.len() as f64;
            let mut loss = 0.0;
            for (x, y) in self.xs.iter().zip(self.ys.iter()) {
                let d = self.predict(x) - y;
                loss += d * d;
                for (g, xi) in self.w.grad.data_mut().iter_mut().zip(x.iter()) {
                    *g += 2.0 * d * xi / n;
                }
                self.b.grad.data_mut()[0] += 2.0 * d / n;
            }
            loss / n
        }

        fn params(&mut self) -> Vec<&mut Parameter> {
            vec![&mut self.w, &mut self.b]
        }
    }

    fn linear_system() -> LinearMse {
        LinearMse {
            w: Parameter::new("w", Tensor::from_vec(&[3], vec![0.3, -0.7, 1.1]).unwrap()),
            b: Parameter::new("b", Tensor::from_vec(&[1], vec![0.2]).unwrap()),
            xs: vec![
                vec![1.0, 2.0, -1.0],
                vec![0.5, -0.25, 2.0],
                vec![-1.5, 0.75, 0.1],
            ],
            ys: vec![1.0, -2.0, 0.5],
        }
    }

    #[test]
    fn linear_model_checks_to_machine_precision() {
        let mut sys = linear_system();
        let report = gradient_check(&mut sys, 1e-4).unwrap();
        assert!(
            report.max_rel_error < 1e-8,
            "got {}",
            report.max_rel_error
        );
        assert_eq!(report.elements_checked, 4);
    }

    #[test]
    fn doubled_gradient_is_detected() {
        let mut sys = CorruptedGrad {
            inner: linear_system(),
            param_name: "w".to_string(),
            factor: 2.0,
        };
        let report = gradient_check(&mut sys, 1e-4).unwrap();
        assert!(report.max_rel_error > 0.3, "got {}", report.max_rel_error);
        assert!(report.worst_param.starts_with("w["));
    }

    #[test]
    fn non_finite_loss_names_the_probe() {
        struct Blows {
            p: Parameter,
        }
        impl Checkable for Blows {
            fn loss(&self) -> f64 {
                // Finite only at the initial value.
                if self.p.value.data()[0] == 0.0 {
                    0.0
                } else {
                    f64::NAN
                }
            }
            fn loss_and_grad(&mut self) -> f64 {
                0.0
            }
            fn params(&mut self) -> Vec<&mut Parameter> {
                vec![&mut self.p]
            }
        }
        let mut sys = Blows {
            p: Parameter::new("theta", Tensor::zeros(&[1])),
        };
        match gradient_check(&mut sys, 1e-4) {
            Err(NnError::NonFiniteLoss { param }) => assert_eq!(param, "theta"),
            other => panic!("expected non-finite loss error, got {other:?}"),
        }
    }
}
