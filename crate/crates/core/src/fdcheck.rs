//! Central finite-difference gradient estimation, used to verify the tape.

use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
pub fn finite_diff_grad<F: Scalar>(
    mut f: impl FnMut(&Tensor<F>) -> Result<F>,
    x: &Tensor<F>,
    h: F,
) -> Result<Tensor<F>> {
    let two = F::from_f64_lossy(2.0);
    let mut probe = x.clone();
    let mut grad = vec![F::zero(); x.numel()];
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = f(&probe)?;
        probe.data_mut()[i] = orig;
        grad[i] = (plus - minus) / (two * h);
    }
    Tensor::from_vec(x.shape().to_vec(), grad)
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|); the gradient-check metric.
pub fn max_rel_err<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> F {
    let mut worst = F::zero();
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let denom = F::one().max(x.abs()).max(y.abs());
        worst = worst.max((x - y).abs() / denom);
    }
    worst
}
