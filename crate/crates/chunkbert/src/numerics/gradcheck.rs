//! Central finite-difference verification of recorded gradients.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::optim::Parameter;
use super::tensor::{no_grad, Scalar, Tensor, TensorError};

/// Worst relative error observed for one parameter.
#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub max_relative_error: f64,
    pub passed: bool,
}

/// Compares recorded gradients against central differences
/// `(f(x+h) - f(x-h)) / 2h`.
///
/// `loss_fn` must rebuild the scalar loss from the parameters' current
/// values on every call. The forward is evaluated twice up front and must
/// produce bit-identical results, otherwise finite differences would
/// measure noise rather than slope. At most `coords_per_param` coordinates
/// are probed per parameter, drawn without replacement from a stream seeded
/// by `seed`; parameter values are restored bit-exactly after probing.
///
/// Relative error uses `|a - n| / max(|a| + |n|, 1e-6)`; the floor keeps
/// near-zero gradients from inflating the ratio with round-off noise.
pub fn finite_difference_check<S: Scalar, F>(
    loss_fn: F,
    params: &[&Parameter<S>],
    h: f64,
    tolerance: f64,
    coords_per_param: usize,
    seed: u64,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn() -> Tensor<S>,
{
    let first = no_grad(&loss_fn).item().to_f64();
    let second = no_grad(&loss_fn).item().to_f64();
    if !first.is_finite() {
        return Err(TensorError::NonFiniteLoss { value: first });
    }
    if first.to_bits() != second.to_bits() {
        return Err(TensorError::NonDeterministicForward { first, second });
    }

    for p in params {
        p.zero_grad();
    }
    loss_fn().backward()?;
    let analytic: Vec<Vec<f64>> = params
        .iter()
        .map(|p| p.grad().iter().map(|&v| v.to_f64()).collect())
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_param = Vec::with_capacity(params.len());
    let mut overall: f64 = 0.0;
    for (p, grads) in params.iter().zip(&analytic) {
        let n = p.numel();
        let mut coords: Vec<usize> = (0..n).collect();
        if n > coords_per_param {
            coords.shuffle(&mut rng);
            coords.truncate(coords_per_param);
            coords.sort_unstable();
        }
        let mut worst: f64 = 0.0;
        for &i in &coords {
            let original = p.value_at(i);
            p.set_value_at(i, S::from_f64(original.to_f64() + h));
            let plus = no_grad(&loss_fn).item().to_f64();
            p.set_value_at(i, S::from_f64(original.to_f64() - h));
            let minus = no_grad(&loss_fn).item().to_f64();
            p.set_value_at(i, original);
            let numeric = (plus - minus) / (2.0 * h);
            let a = grads[i];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
        }
        overall = overall.max(worst);
        per_param.push(ParamCheck {
            name: p.name().to_string(),
            max_relative_error: worst,
            coords_checked: coords.len(),
        });
    }

    Ok(GradCheckReport {
        per_param,
        max_relative_error: overall,
        passed: overall < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn quadratic_loss_checks_to_high_precision() {
        let p = Parameter::<f64>::from_values("q", &[3], &[0.5, -1.0, 2.0]);
        // loss = sum((p - c)^2), gradient 2(p - c); central differences are
        // exact on quadratics up to rounding.
        let c = Tensor::from_vec(&[3], vec![0.1, 0.2, 0.3]);
        let report = finite_difference_check(
            || {
                let d = p.tensor().sub(&c);
                d.mul(&d).sum()
            },
            &[&p],
            1e-4,
            1e-8,
            16,
            0,
        )
        .unwrap();
        assert!(
            report.passed,
            "quadratic rel err {}",
            report.max_relative_error
        );
        assert!(report.max_relative_error < 1e-8);
    }

    #[test]
    fn detects_non_deterministic_forward() {
        let p = Parameter::<f64>::from_values("p", &[1], &[1.0]);
        let calls = Cell::new(0.0f64);
        let err = finite_difference_check(
            || {
                calls.set(calls.get() + 1.0);
                p.tensor().scale(calls.get()).sum()
            },
            &[&p],
            1e-4,
            1e-6,
            4,
            0,
        )
        .unwrap_err();
        assert!(matches!(err, TensorError::NonDeterministicForward { .. }));
    }

    #[test]
    fn restores_parameter_values_bit_exactly() {
        let p = Parameter::<f64>::from_values("p", &[2], &[0.123456789, -9.87654321]);
        let before = p.values();
        finite_difference_check(|| p.tensor().mul(p.tensor()).sum(), &[&p], 1e-5, 1e-4, 8, 1)
            .unwrap();
        let after = p.values();
        assert_eq!(before[0].to_bits(), after[0].to_bits());
        assert_eq!(before[1].to_bits(), after[1].to_bits());
    }

    #[test]
    fn reports_every_parameter_by_name() {
        let a = Parameter::<f64>::from_values("alpha", &[1], &[1.0]);
        let b = Parameter::<f64>::from_values("beta", &[1], &[2.0]);
        let report = finite_difference_check(
            || a.tensor().mul(b.tensor()).sum(),
            &[&a, &b],
            1e-5,
            1e-4,
            4,
            3,
        )
        .unwrap();
        let names: Vec<&str> = report.per_param.iter().map(|c| c.name.as_str()).collect();
        assert_eq!(names, vec!["alpha", "beta"]);
    }
}
