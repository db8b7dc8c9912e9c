use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{NodeId, Tape};

/// Outcome of comparing analytic gradients against central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    /// max over coordinates of |analytic − numeric| / max(1, |analytic|)
    pub max_relative_error: f64,
    /// (input index, flat coordinate) of the worst coordinate
    pub worst: (usize, usize),
    pub coordinates: usize,
    /// Smallest |x| fed to any leaky_relu at the unperturbed point.
    pub min_kink_distance: Option<f64>,
}

/// Checks the gradients produced by `f` at `inputs` with step `eps`.
///
/// `f` receives a fresh tape and one parameter node per input and returns the
/// scalar loss node. It is re-run for every perturbed coordinate.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheck>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |vals: &[Tensor<T>]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.param(v.clone())).collect();
        let loss = f(&mut tape, &ids)?;
        let v = tape.value(loss).item()?.as_f64();
        if !v.is_finite() {
            return Err(Error::Numeric("non-finite loss during gradient check".into()));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs.iter().map(|v| tape.param(v.clone())).collect();
    let loss = f(&mut tape, &ids)?;
    let analytic = tape.backward(loss)?;
    for g in analytic.as_slice() {
        if !g.all_finite() {
            return Err(Error::Numeric("non-finite analytic gradient".into()));
        }
    }

    let mut work: Vec<Tensor<T>> = inputs.to_vec();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst: (0, 0),
        coordinates: 0,
        min_kink_distance: tape.min_kink_distance(),
    };
    for (k, id) in ids.iter().enumerate() {
        let g = analytic
            .wrt(*id)
            .ok_or_else(|| Error::Contract("missing gradient for input".into()))?;
        for i in 0..inputs[k].numel() {
            let orig = inputs[k].data()[i];
            work[k].data_mut()[i] = orig + T::lit(eps);
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - T::lit(eps);
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * eps);
            let a = g.data()[i].as_f64();
            let err = (a - numeric).abs() / a.abs().max(1.0);
            report.coordinates += 1;
            if err > report.max_relative_error || report.coordinates == 1 {
                report.max_relative_error = report.max_relative_error.max(err);
                report.worst = (k, i);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::autodiff::CustomOp;

    #[test]
    fn softplus_at_zero() {
        let r = grad_check(
            |t: &mut Tape<f64>, x| {
                let s = t.softplus(x[0])?;
                t.sum(s)
            },
            &[Tensor::scalar(0.0)],
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-9, "{r:?}");
    }

    struct WrongSquare;

    impl CustomOp<f64> for WrongSquare {
        fn name(&self) -> &str {
            "wrong_square"
        }

        fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
            Ok(inputs[0].map(|x| x * x))
        }

        fn backward(
            &self,
            inputs: &[&Tensor<f64>],
            _output: &Tensor<f64>,
            g: &Tensor<f64>,
        ) -> Result<Vec<Tensor<f64>>> {
            // deliberately x instead of 2x
            Ok(vec![inputs[0].zip_map(g, |x, gz| x * gz)?])
        }
    }

    #[test]
    fn wrong_rule_is_detected() {
        let op = Arc::new(WrongSquare);
        let r = grad_check(
            move |t: &mut Tape<f64>, x| {
                let y = t.custom(op.clone(), &[x[0]])?;
                t.sum(y)
            },
            &[Tensor::new(vec![3], vec![1.5, -2.0, 3.0]).unwrap()],
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error > 0.1, "{r:?}");
    }
}
