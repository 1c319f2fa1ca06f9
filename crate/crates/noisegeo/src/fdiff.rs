//! Central finite differences.
//!
//! Forward-evaluation-only gradient estimates, used as the independent
//! oracle against which every reverse-mode gradient in this crate is
//! checked. Nothing here touches the tape.

use crate::tensor::Tensor;

/// Central-difference gradient of a scalar function of a tensor.
pub fn gradient<F>(mut f: F, x: &Tensor, step: f64) -> Tensor
where
    F: FnMut(&Tensor) -> f64,
{
    let mut out = Tensor::zeros(x.shape().to_vec());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let fp = f(&probe);
        probe.data_mut()[i] = orig - step;
        let fm = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (fp - fm) / (2.0 * step);
    }
    out
}

/// Central-difference Jacobian of a vector function: row `i` holds
/// `d out_i / d x_j`.
pub fn jacobian<F>(mut f: F, x: &Tensor, step: f64) -> Tensor
where
    F: FnMut(&Tensor) -> Tensor,
{
    let m = f(x).len();
    let n = x.len();
    let mut out = Tensor::zeros([m, n]);
    let mut probe = x.clone();
    for j in 0..n {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + step;
        let fp = f(&probe);
        probe.data_mut()[j] = orig - step;
        let fm = f(&probe);
        probe.data_mut()[j] = orig;
        for i in 0..m {
            out.data_mut()[i * n + j] = (fp.data()[i] - fm.data()[i]) / (2.0 * step);
        }
    }
    out
}

/// Worst relative disagreement between two same-shaped gradients. The
/// denominator floors at 1e-6 so near-zero entries compare absolutely.
pub fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape(), "rel-err on mismatched shapes");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_is_exact_to_truncation() {
        let x = Tensor::vector(vec![1.0, -2.0, 0.5]);
        let g = gradient(|t| t.data().iter().map(|v| v * v).sum(), &x, 1e-5);
        let expect = Tensor::vector(vec![2.0, -4.0, 1.0]);
        assert!(max_rel_err(&g, &expect) < 1e-9);
    }

    #[test]
    fn jacobian_of_linear_map_recovers_matrix() {
        let a = Tensor::matrix(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let x = Tensor::vector(vec![0.3, 0.9]);
        let j = jacobian(|t| a.matvec(t).unwrap(), &x, 1e-5);
        assert!(j.max_abs_diff(&a).unwrap() < 1e-9);
    }
}
