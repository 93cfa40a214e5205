//! Tape-free evaluations of the numeric primitives.

use super::{axis_split, Tensor};
use crate::error::{Error, Result};

fn check_axis(x: &Tensor, axis: usize, op: &str) -> Result<()> {
    if axis >= x.rank().max(1) || (x.rank() > 0 && x.shape()[axis] == 0) {
        return Err(Error::Contract(format!(
            "{op}: axis {axis} invalid for shape {:?}",
            x.shape()
        )));
    }
    Ok(())
}

fn shape_of(x: &Tensor) -> Vec<usize> {
    if x.rank() == 0 {
        vec![1]
    } else {
        x.shape().to_vec()
    }
}

/// Softmax along `axis`, computed with max-subtraction.
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis(x, axis, "softmax")?;
    let (outer, alen, inner) = axis_split(&shape_of(x), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * alen + a) * inner + i;
            let max = (0..alen).map(|a| d[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for a in 0..alen {
                let e = (d[at(a)] - max).exp();
                out[at(a)] = e;
                z += e;
            }
            for a in 0..alen {
                out[at(a)] /= z;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub(crate) fn log_softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    check_axis(x, axis, "log_softmax")?;
    let (outer, alen, inner) = axis_split(&shape_of(x), axis);
    let d = x.data();
    let mut out = vec![0.0; d.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |a: usize| (o * alen + a) * inner + i;
            let max = (0..alen).map(|a| d[at(a)]).fold(f64::NEG_INFINITY, f64::max);
            let lse = max + (0..alen).map(|a| (d[at(a)] - max).exp()).sum::<f64>().ln();
            for a in 0..alen {
                out[at(a)] = d[at(a)] - lse;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Mean over non-ignored rows of `-log softmax(logits)[i, target_i]`.
pub fn cross_entropy(logits: &Tensor, targets: &[usize], ignore_index: usize) -> Result<f64> {
    let (t, v) = logits.dims2();
    if targets.len() != t {
        return Err(Error::shape("cross_entropy", format!("{} targets for {t} rows", targets.len())));
    }
    let logp = log_softmax(logits, logits.rank().max(1) - 1)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &tg) in targets.iter().enumerate() {
        if tg == ignore_index {
            continue;
        }
        if tg >= v {
            return Err(Error::Contract(format!("target {tg} outside vocabulary {v}")));
        }
        total -= logp.data()[i * v + tg];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / count as f64)
}

pub fn mse(pred: f64, target: f64) -> f64 {
    (pred - target) * (pred - target)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn softmax_fixtures() {
        let u = softmax(&Tensor::vector(vec![0.0; 3]), 0).unwrap();
        assert!(u.data().iter().all(|&p| close(p, 1.0 / 3.0, 1e-15)));

        let s = softmax(&Tensor::vector(vec![1000.0, 0.0]), 0).unwrap();
        assert!(close(s.data()[0], 1.0, 1e-12) && s.data()[1] >= 0.0 && s.is_finite());

        // e^x / sum e^x for x = 1, 2, 3
        let z: f64 = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).sum();
        let want: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp() / z).collect();
        let got = softmax(&Tensor::vector(vec![1.0, 2.0, 3.0]), 0).unwrap();
        for (g, w) in got.data().iter().zip(&want) {
            assert!(close(*g, *w, 1e-15));
        }
        for (g, w) in got.data().iter().zip([0.09003, 0.24473, 0.66524]) {
            assert!(close(*g, w, 5e-6));
        }
    }

    #[test]
    fn softmax_axis_zero_of_matrix_normalizes_columns() {
        let x = Tensor::matrix(2, 3, vec![1.0, 5.0, -2.0, 3.0, 0.0, 4.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for c in 0..3 {
            assert!(close(s.data()[c] + s.data()[3 + c], 1.0, 1e-12));
        }
    }

    #[test]
    fn softmax_rejects_bad_axis() {
        let x = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(softmax(&x, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn cross_entropy_fixtures() {
        let mut logits = vec![0.0; 100];
        logits[7] = 1e3;
        let sharp = Tensor::matrix(1, 100, logits).unwrap();
        assert!(cross_entropy(&sharp, &[7], usize::MAX).unwrap() < 1e-12);

        let flat = Tensor::matrix(1, 100, vec![0.25; 100]).unwrap();
        assert!(close(cross_entropy(&flat, &[3], usize::MAX).unwrap(), 100f64.ln(), 1e-12));

        // -log(e^3 / (e + e^2 + e^3))
        let want = -(3f64.exp() / (1f64.exp() + 2f64.exp() + 3f64.exp())).ln();
        let l = Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let got = cross_entropy(&l, &[2], usize::MAX).unwrap();
        assert!(close(got, want, 1e-14));
        assert!(close(got, 0.40761, 5e-6));
    }

    #[test]
    fn cross_entropy_skips_ignored_rows() {
        let l = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 9.0, 9.0, 9.0]).unwrap();
        let a = cross_entropy(&l, &[2, 0], 0).unwrap();
        let b = cross_entropy(&Tensor::matrix(1, 3, vec![1.0, 2.0, 3.0]).unwrap(), &[2], 0).unwrap();
        assert_eq!(a, b);
        assert!(matches!(cross_entropy(&l, &[0, 0], 0), Err(Error::EmptyLoss)));
    }

    #[test]
    fn mse_fixtures() {
        assert_eq!(mse(0.5, 0.5), 0.0);
        assert_eq!(mse(1.0, -1.0), 4.0);
        assert!(close(mse(0.3, -0.2), 0.25, 1e-15));
    }
}
