//! Symmetric batch-wise objectives over a query × document similarity matrix.

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Scalar};

/// Dense `n × n` matrix, row-major. Row `i` is query `i`, column `j` document `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix<T> {
    n: usize,
    data: Vec<T>,
}

impl<T: Scalar> SquareMatrix<T> {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![T::zero(); n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("matrix is not square".into()));
        }
        Ok(Self {
            n,
            data: rows.concat(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.n + j] += v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    fn check_finite(&self) -> Result<()> {
        if self.data.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("similarity matrix".into()))
        }
    }
}

/// Loss value plus its gradient with respect to the similarity matrix and, for
/// BCE, the logit scale and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWithGrad<T> {
    pub loss: T,
    pub d_sim: SquareMatrix<T>,
    pub d_scale: T,
    pub d_bias: T,
}

/// One orientation of the weighted BCE: positives on the diagonal.
/// Accumulates `d loss / d logit` into `d_logit` (indexed like `s`, after the
/// optional transpose) scaled by `coef`.
fn bce_orientation<T: Scalar>(
    s: &SquareMatrix<T>,
    transposed: bool,
    scale: T,
    bias: T,
    pos_weight: T,
    mut d_logit: Option<(&mut SquareMatrix<T>, T)>,
) -> T {
    let n = s.n();
    let total_weight = pos_weight * T::of(n as f64) + T::of((n * n - n) as f64);
    let mut sum = T::zero();
    for i in 0..n {
        for j in 0..n {
            // element (i, j) of the oriented matrix
            let (r, c) = if transposed { (j, i) } else { (i, j) };
            let x = scale * s.get(r, c) + bias;
            let positive = i == j;
            let w = if positive { pos_weight } else { T::one() };
            // -log σ(x) = softplus(-x), -log(1 - σ(x)) = softplus(x)
            sum += w * if positive { softplus(-x) } else { softplus(x) };
            if let Some((d, coef)) = d_logit.as_mut() {
                let target = if positive { T::one() } else { T::zero() };
                d.add(r, c, *coef * w * (sigmoid(x) - target) / total_weight);
            }
        }
    }
    sum / total_weight
}

/// `½[BCE(σ(scale·S + bias), I) + BCE(σ(scale·Sᵀ + bias), I)]`, each term the
/// weighted mean over all `B²` entries with diagonal weight `pos_weight`.
pub fn bce_loss<T: Scalar>(s: &SquareMatrix<T>, scale: T, bias: T, pos_weight: T) -> Result<T> {
    check_bce_args(s, scale, bias, pos_weight)?;
    let a = bce_orientation(s, false, scale, bias, pos_weight, None);
    let b = bce_orientation(s, true, scale, bias, pos_weight, None);
    Ok(T::half() * (a + b))
}

fn check_bce_args<T: Scalar>(s: &SquareMatrix<T>, scale: T, bias: T, pos_weight: T) -> Result<()> {
    s.check_finite()?;
    if !(scale.is_finite() && bias.is_finite()) {
        return Err(Error::NonFinite("logit scale or bias".into()));
    }
    if !(pos_weight > T::zero()) {
        return Err(Error::InvalidArgument("pos_weight must be positive".into()));
    }
    if s.n() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    Ok(())
}

pub fn bce_loss_grad<T: Scalar>(s: &SquareMatrix<T>, scale: T, bias: T, pos_weight: T) -> Result<LossWithGrad<T>> {
    check_bce_args(s, scale, bias, pos_weight)?;
    let mut d_logit = SquareMatrix::zeros(s.n());
    let half = T::half();
    let a = bce_orientation(s, false, scale, bias, pos_weight, Some((&mut d_logit, half)));
    let b = bce_orientation(s, true, scale, bias, pos_weight, Some((&mut d_logit, half)));
    let mut d_scale = T::zero();
    let mut d_bias = T::zero();
    let mut d_sim = SquareMatrix::zeros(s.n());
    for i in 0..s.n() {
        for j in 0..s.n() {
            let g = d_logit.get(i, j);
            d_scale += g * s.get(i, j);
            d_bias += g;
            d_sim.set(i, j, g * scale);
        }
    }
    Ok(LossWithGrad {
        loss: half * (a + b),
        d_sim,
        d_scale,
        d_bias,
    })
}

fn log_sum_exp<T: Scalar>(xs: impl Iterator<Item = T> + Clone) -> T {
    let m = xs.clone().fold(T::neg_infinity(), T::max);
    m + xs.map(|x| (x - m).exp()).sum::<T>().ln()
}

fn check_infonce_args<T: Scalar>(s: &SquareMatrix<T>, temperature: T) -> Result<()> {
    s.check_finite()?;
    if !(temperature > T::zero()) || !temperature.is_finite() {
        return Err(Error::InvalidArgument("temperature must be positive".into()));
    }
    if s.n() == 0 {
        return Err(Error::Empty("batch".into()));
    }
    Ok(())
}

/// Symmetric softmax cross-entropy: rows classify documents for each query,
/// columns classify queries for each document.
pub fn infonce_loss<T: Scalar>(s: &SquareMatrix<T>, temperature: T) -> Result<T> {
    Ok(infonce_impl(s, temperature, false)?.loss)
}

pub fn infonce_loss_grad<T: Scalar>(s: &SquareMatrix<T>, temperature: T) -> Result<LossWithGrad<T>> {
    infonce_impl(s, temperature, true)
}

fn infonce_impl<T: Scalar>(s: &SquareMatrix<T>, temperature: T, want_grad: bool) -> Result<LossWithGrad<T>> {
    check_infonce_args(s, temperature)?;
    let n = s.n();
    let nt = T::of(n as f64);
    let z = |i: usize, j: usize| s.get(i, j) / temperature;
    let mut d_sim = SquareMatrix::zeros(n);
    let coef = T::half() / (nt * temperature);

    let mut rows = T::zero();
    for i in 0..n {
        let lse = log_sum_exp((0..n).map(|j| z(i, j)));
        rows += lse - z(i, i);
        if want_grad {
            for j in 0..n {
                let p = (z(i, j) - lse).exp();
                let t = if i == j { T::one() } else { T::zero() };
                d_sim.add(i, j, coef * (p - t));
            }
        }
    }
    let mut cols = T::zero();
    for j in 0..n {
        let lse = log_sum_exp((0..n).map(|i| z(i, j)));
        cols += lse - z(j, j);
        if want_grad {
            for i in 0..n {
                let p = (z(i, j) - lse).exp();
                let t = if i == j { T::one() } else { T::zero() };
                d_sim.add(i, j, coef * (p - t));
            }
        }
    }
    Ok(LossWithGrad {
        loss: T::half() * (rows / nt + cols / nt),
        d_sim,
        d_scale: T::zero(),
        d_bias: T::zero(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_single_zero() {
        let s = SquareMatrix::from_rows(&[vec![0.0f64]]).unwrap();
        assert!((bce_loss(&s, 1.0, 0.0, 1.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn bce_single_one() {
        // -ln σ(1) = ln(1 + e^-1)
        let expect = (1.0 + (-1.0f64).exp()).ln();
        assert!((expect - 0.313262).abs() < 1e-6);
        let s = SquareMatrix::from_rows(&[vec![1.0f64]]).unwrap();
        assert!((bce_loss(&s, 1.0, 0.0, 1.0).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn bce_identity_two() {
        let pos = (1.0 + (-1.0f64).exp()).ln();
        let neg = std::f64::consts::LN_2;
        let expect = (2.0 * pos + 2.0 * neg) / 4.0;
        assert!((expect - 0.503204).abs() < 1e-6);
        let l = bce_loss(&SquareMatrix::<f64>::identity(2), 1.0, 0.0, 1.0).unwrap();
        assert!((l - expect).abs() < 1e-15);
    }

    #[test]
    fn bce_pos_weight_rebalances() {
        // B=2, pos_weight=3: (3·2·pos + 2·neg) / (3·2 + 2)
        let pos = (1.0 + (-1.0f64).exp()).ln();
        let neg = std::f64::consts::LN_2;
        let l = bce_loss(&SquareMatrix::<f64>::identity(2), 1.0, 0.0, 3.0).unwrap();
        assert!((l - (6.0 * pos + 2.0 * neg) / 8.0).abs() < 1e-15);
    }

    #[test]
    fn infonce_examples() {
        let one = SquareMatrix::from_rows(&[vec![0.7f64]]).unwrap();
        assert_eq!(infonce_loss(&one, 1.0).unwrap(), 0.0);
        let e = std::f64::consts::E;
        let expect = -(e / (e + 1.0)).ln();
        let l = infonce_loss(&SquareMatrix::<f64>::identity(2), 1.0).unwrap();
        assert!((l - expect).abs() < 1e-15);
        assert!((l - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn non_finite_rejected() {
        let s = SquareMatrix::from_rows(&[vec![f64::NAN]]).unwrap();
        assert!(bce_loss(&s, 1.0, 0.0, 1.0).is_err());
        assert!(infonce_loss(&s, 1.0).is_err());
        assert!(infonce_loss(&SquareMatrix::<f64>::identity(2), 0.0).is_err());
    }

    #[test]
    fn saturated_logits_are_finite() {
        let s = SquareMatrix::<f64>::identity(3);
        let l = bce_loss(&s, 1e4, -5e3, 2.0).unwrap();
        assert!(l.is_finite() && l < 1e-100);
        let g = bce_loss_grad(&s, 1e4, -5e3, 2.0).unwrap();
        assert!(g.d_sim.as_slice().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn f32_agrees_with_f64() {
        let rows = vec![vec![0.3f64, -0.2], vec![0.1, 0.8]];
        let s64 = SquareMatrix::from_rows(&rows).unwrap();
        let s32 = SquareMatrix::from_rows(&rows.iter().map(|r| r.iter().map(|x| *x as f32).collect()).collect::<Vec<Vec<f32>>>()).unwrap();
        let a = bce_loss(&s64, 10.0, -5.0, 1.0).unwrap();
        let b = bce_loss(&s32, 10.0, -5.0, 1.0).unwrap();
        assert!((a - b as f64).abs() < 1e-5);
    }
}
