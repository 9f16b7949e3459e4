//! Analog activations that predict the spike count of IF and LIF neurons
//! under a constant input current, together with their derivatives.
//!
//! IF:  `a = ReLU(z) / θ`, where `z` is the drive aggregated over the window.
//! LIF: `a = (T/τ_m) / ln(1 + θ / ρ_s(i_c − θ))`, `ρ_s(x) = ln(1 + eˣ)`,
//! where `i_c = z / T` is the per-step constant current.
//! Neither function is clamped at `T`.

use crate::error::{Result, TandemError};
use crate::neuron::{NeuronKind, NeuronParams};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationParams {
    pub kind: NeuronKind,
    pub theta: f64,
    pub tau_m: f64,
    pub window: usize,
}

impl ActivationParams {
    pub fn new(neuron: &NeuronParams, window: usize) -> Result<Self> {
        neuron.validate()?;
        if window == 0 {
            return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
        }
        Ok(Self {
            kind: neuron.kind,
            theta: neuron.theta,
            tau_m: neuron.tau_m,
            window,
        })
    }

    /// Predicted spike count from the aggregate drive `z`.
    #[inline]
    pub fn count_from_drive(&self, z: f64) -> f64 {
        match self.kind {
            NeuronKind::If => if_count(z, self.theta),
            NeuronKind::Lif => lif_count(z / self.window as f64, self.theta, self.tau_m, self.window),
        }
    }

    /// `d count / d z`.
    #[inline]
    pub fn grad_wrt_drive(&self, z: f64) -> f64 {
        match self.kind {
            NeuronKind::If => if_count_grad(z, self.theta),
            NeuronKind::Lif => {
                let t = self.window as f64;
                lif_count_grad(z / t, self.theta, self.tau_m, self.window) / t
            }
        }
    }
}

/// `ρ_s(x) = ln(1 + eˣ)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn if_count(z: f64, theta: f64) -> f64 {
    z.max(0.0) / theta
}

/// Zero at the kink.
#[inline]
pub fn if_count_grad(z: f64, theta: f64) -> f64 {
    if z > 0.0 {
        1.0 / theta
    } else {
        0.0
    }
}

/// `ln(1 + θ/g)` with `g = ρ_s(x)`, finite for every finite `x`.
#[inline]
fn log_ratio(x: f64, theta: f64) -> (f64, f64) {
    let g = softplus(x);
    let l = if g > 0.0 {
        (theta / g).ln_1p()
    } else {
        // ρ_s(x) underflowed; ln(1 + θ/g) ≈ ln θ − ln g and ln g ≈ x here.
        theta.ln() - x
    };
    (g, l)
}

#[inline]
pub fn lif_count(i_c: f64, theta: f64, tau_m: f64, window: usize) -> f64 {
    let (_, l) = log_ratio(i_c - theta, theta);
    (window as f64 / tau_m) / l
}

#[inline]
pub fn lif_count_grad(i_c: f64, theta: f64, tau_m: f64, window: usize) -> f64 {
    let x = i_c - theta;
    let (g, l) = log_ratio(x, theta);
    // σ(x)/g tends to 1 as x → −∞, where both factors underflow.
    let sig_over_g = if x < -30.0 {
        1.0 - 0.5 * x.exp()
    } else {
        logistic(x) / g
    };
    (window as f64 / tau_m) * (theta / (g + theta)) * sig_over_g / (l * l)
}

/// `I^c = z / T`.
pub fn constant_current(z: &DenseTensor, window: usize) -> Result<DenseTensor> {
    if window == 0 {
        return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
    }
    let t = window as f64;
    z.map(|v| v / t)
}

pub fn if_activation(z: &DenseTensor, theta: f64) -> Result<DenseTensor> {
    check_theta(theta)?;
    z.map(|v| if_count(v, theta))
}

pub fn if_activation_grad(z: &DenseTensor, theta: f64) -> Result<DenseTensor> {
    check_theta(theta)?;
    z.map(|v| if_count_grad(v, theta))
}

pub fn lif_activation(i_c: &DenseTensor, theta: f64, tau_m: f64, window: usize) -> Result<DenseTensor> {
    check_lif(theta, tau_m, window)?;
    i_c.map(|v| lif_count(v, theta, tau_m, window))
}

pub fn lif_activation_grad(i_c: &DenseTensor, theta: f64, tau_m: f64, window: usize) -> Result<DenseTensor> {
    check_lif(theta, tau_m, window)?;
    i_c.map(|v| lif_count_grad(v, theta, tau_m, window))
}

fn check_theta(theta: f64) -> Result<()> {
    if theta.is_finite() && theta > 0.0 {
        Ok(())
    } else {
        Err(TandemError::Parameter(format!(
            "threshold must be positive, got {theta}"
        )))
    }
}

fn check_lif(theta: f64, tau_m: f64, window: usize) -> Result<()> {
    check_theta(theta)?;
    if !(tau_m.is_finite() && tau_m > 0.0) {
        return Err(TandemError::Parameter(format!(
            "tau_m must be positive, got {tau_m}"
        )));
    }
    if window == 0 {
        return Err(TandemError::Parameter("encoding window must be ≥ 1".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar(v: f64) -> DenseTensor {
        DenseTensor::vector(&[v]).unwrap()
    }

    #[test]
    fn constant_current_cases() {
        assert_eq!(constant_current(&scalar(10.0), 10).unwrap().data(), &[1.0]);
        assert_eq!(constant_current(&scalar(0.0), 10).unwrap().data(), &[0.0]);
        assert_eq!(constant_current(&scalar(-3.0), 6).unwrap().data(), &[-0.5]);
        assert!(constant_current(&scalar(1.0), 0).is_err());
    }

    #[test]
    fn if_activation_cases() {
        assert_eq!(if_activation(&scalar(5.0), 1.0).unwrap().data(), &[5.0]);
        assert_eq!(if_activation(&scalar(-2.0), 1.0).unwrap().data(), &[0.0]);
        assert_eq!(if_activation(&scalar(5.0), 0.5).unwrap().data(), &[10.0]);
        assert_eq!(if_activation_grad(&scalar(5.0), 1.0).unwrap().data(), &[1.0]);
        assert_eq!(if_activation_grad(&scalar(-2.0), 1.0).unwrap().data(), &[0.0]);
        assert_eq!(if_activation_grad(&scalar(3.0), 0.5).unwrap().data(), &[2.0]);
        assert_eq!(if_activation_grad(&scalar(0.0), 1.0).unwrap().data(), &[0.0]);
    }

    #[test]
    fn lif_activation_reference_values() {
        // ρ_s(0) = ln 2 and ρ_s(0.1) = ln(1 + e^0.1), evaluated independently
        let a1 = 0.5 / (1.0 + 0.1 / std::f64::consts::LN_2).ln();
        let a2 = 0.5 / (1.0 + 0.1 / (1.0 + 0.1f64.exp()).ln()).ln();
        let got = lif_activation(&DenseTensor::vector(&[0.1, 0.2]).unwrap(), 0.1, 20.0, 10).unwrap();
        assert!((got.data()[0] - a1).abs() < 1e-12);
        assert!((got.data()[1] - a2).abs() < 1e-12);
        assert!((got.data()[0] - 3.7101).abs() < 5e-5);
        assert!((got.data()[1] - 3.9667).abs() < 5e-5);
    }

    #[test]
    fn lif_activation_vanishes_toward_minus_infinity() {
        let mut prev = f64::INFINITY;
        for x in [0.0, -1.0, -10.0, -100.0, -800.0, -1e6, -1e300] {
            let a = lif_count(x, 0.1, 20.0, 10);
            assert!(a.is_finite() && a >= 0.0 && a < prev, "{x}: {a}");
            prev = a;
            assert!(lif_count_grad(x, 0.1, 20.0, 10) >= 0.0);
        }
        assert!(lif_count_grad(-10.0, 0.1, 20.0, 10) > 0.0);
        assert!(lif_count(1e300, 0.1, 20.0, 10).is_finite());
    }

    fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn lif_grad_matches_finite_differences() {
        for &x in &[-0.5, 0.1, 0.3] {
            let fd = central(|v| lif_count(v, 0.1, 20.0, 10), x, 1e-5);
            let an = lif_count_grad(x, 0.1, 20.0, 10);
            assert!(((an - fd) / fd).abs() < 1e-6, "x={x}: {an} vs {fd}");
        }
    }

    proptest! {
        #[test]
        fn lif_grad_fd_random(x in -1.0f64..1.0) {
            let fd = central(|v| lif_count(v, 0.1, 20.0, 10), x, 1e-5);
            let an = lif_count_grad(x, 0.1, 20.0, 10);
            prop_assert!(((an - fd) / fd).abs() < 1e-6);
        }

        #[test]
        fn if_scale_identity(z in -100.0f64..100.0, theta in 0.01f64..10.0) {
            prop_assert!((if_count(z * theta, theta) - z.max(0.0)).abs() <= 1e-12 * z.abs().max(1.0));
        }

        #[test]
        fn lif_is_increasing(x in -20.0f64..20.0, dx in 1e-3f64..1.0) {
            prop_assert!(lif_count(x + dx, 0.1, 20.0, 8) > lif_count(x, 0.1, 20.0, 8));
            prop_assert!(lif_count_grad(x, 0.1, 20.0, 8) > 0.0);
        }
    }
}
