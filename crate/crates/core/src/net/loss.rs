use crate::error::{ensure_finite, shape_err, Result, TandemError};
use crate::tensor::DenseTensor;

/// Mean over batch and elements of `(o − t)²`, with its gradient.
pub fn loss_mse(output: &DenseTensor, target: &DenseTensor) -> Result<(f64, DenseTensor)> {
    if output.shape() != target.shape() {
        return shape_err(format!(
            "output {:?} vs target {:?}",
            output.shape(),
            target.shape()
        ));
    }
    let n = output.len().max(1) as f64;
    let mut loss = 0.0;
    let grad: Vec<f64> = output
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| {
            let d = o - t;
            loss += d * d;
            2.0 * d / n
        })
        .collect();
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(TandemError::Numeric(format!("MSE loss is {loss}")));
    }
    Ok((loss, DenseTensor::new(output.shape().to_vec(), grad)?))
}

/// Mean over the batch of `−log softmax(o)[label]`, with its gradient.
pub fn loss_ce(output: &DenseTensor, labels: &[usize]) -> Result<(f64, DenseTensor)> {
    if output.rank() != 2 || output.shape()[0] != labels.len() {
        return shape_err(format!("logits {:?} vs {} labels", output.shape(), labels.len()));
    }
    let (batch, classes) = (output.shape()[0], output.shape()[1]);
    let mut grad = vec![0.0; batch * classes];
    let mut loss = 0.0;
    for (b, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(TandemError::Data(format!(
                "label {label} out of range for {classes} classes"
            )));
        }
        let row = &output.data()[b * classes..(b + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (k, g) in grad[b * classes..(b + 1) * classes].iter_mut().enumerate() {
            let p = (row[k] - log_z).exp();
            *g = (p - if k == label { 1.0 } else { 0.0 }) / batch as f64;
        }
    }
    let loss = loss / batch.max(1) as f64;
    if !loss.is_finite() {
        return Err(TandemError::Numeric(format!("cross-entropy loss is {loss}")));
    }
    ensure_finite(&grad, "cross-entropy gradient")?;
    Ok((
        loss,
        DenseTensor::from_parts_unchecked(output.shape().to_vec(), grad),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_cases() {
        let o = DenseTensor::from_rows(&[&[0.0, 0.0]]).unwrap();
        let (l, g) = loss_mse(&o, &o).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let t = DenseTensor::from_rows(&[&[2.0, 0.0]]).unwrap();
        let (l, g) = loss_mse(&o, &t).unwrap();
        assert_eq!(l, 2.0);
        assert_eq!(g.data(), &[-2.0, 0.0]);
    }

    #[test]
    fn ce_uniform_is_ln_k() {
        let o = DenseTensor::zeros(&[3, 7]);
        let (l, g) = loss_ce(&o, &[0, 3, 6]).unwrap();
        assert!((l - 7f64.ln()).abs() < 1e-12);
        for row in g.data().chunks(7) {
            assert!(row.iter().sum::<f64>().abs() < 1e-15);
        }
        assert!(matches!(loss_ce(&o, &[0, 3, 7]), Err(TandemError::Data(_))));
    }

    #[test]
    fn ce_gradient_matches_finite_differences() {
        let o = DenseTensor::from_rows(&[&[0.3, -1.2, 2.0], &[5.0, 4.0, -3.0]]).unwrap();
        let labels = [2, 1];
        let (_, g) = loss_ce(&o, &labels).unwrap();
        for i in 0..6 {
            let h = 1e-6;
            let mut p = o.clone();
            p.data_mut()[i] += h;
            let mut m = o.clone();
            m.data_mut()[i] -= h;
            let fd = (loss_ce(&p, &labels).unwrap().0 - loss_ce(&m, &labels).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn ce_is_stable_for_large_logits() {
        let o = DenseTensor::from_rows(&[&[1e4, -1e4]]).unwrap();
        let (l, _) = loss_ce(&o, &[1]).unwrap();
        assert!((l - 2e4).abs() < 1e-6);
    }
}
