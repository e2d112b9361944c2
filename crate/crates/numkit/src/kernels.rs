//! Dense kernels.
//!
//! Reduction order is part of each kernel's contract: every accumulated sum
//! runs sequentially over the reduced index (for `matmul`, sequentially over
//! `k` for each output element). The optional row-parallel matmul path keeps
//! that per-element order, so outputs are bit-identical at any thread budget.

use crate::tensor::{Scalar, Tensor};
use crate::{thread_budget, NumError, Result};

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(NumError::ShapeMismatch { op, detail: format!("expected rank 2, got {:?}", s) }),
    }
}

/// Standard matrix product `[m×k] · [k×n] -> [m×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(NumError::ShapeMismatch {
            op: "matmul",
            detail: format!("inner extents {} vs {}", k, k2),
        });
    }
    let mut out = vec![T::zero(); m * n];
    let budget = thread_budget();
    if budget > 1 && m >= 2 * budget && m * k * n >= 1 << 16 {
        let rows_per = m.div_ceil(budget);
        std::thread::scope(|scope| {
            for (chunk_idx, chunk) in out.chunks_mut(rows_per * n).enumerate() {
                let row0 = chunk_idx * rows_per;
                let a_data = a.data();
                let b_data = b.data();
                scope.spawn(move || {
                    matmul_rows(a_data, b_data, chunk, row0, chunk.len() / n, k, n);
                });
            }
        });
    } else {
        matmul_rows(a.data(), b.data(), &mut out, 0, m, k, n);
    }
    let t = Tensor::new(vec![m, n], out)?;
    t.check_finite("matmul")?;
    Ok(t)
}

/// Rows `row0..row0+rows` of the product. For each output element the
/// additions happen in increasing `k`, matching the naive triple loop.
fn matmul_rows<T: Scalar>(
    a: &[T],
    b: &[T],
    out: &mut [T],
    row0: usize,
    rows: usize,
    k: usize,
    n: usize,
) {
    for i in 0..rows {
        let a_row = &a[(row0 + i) * k..(row0 + i + 1) * k];
        let o_row = &mut out[i * n..(i + 1) * n];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bkj) in o_row.iter_mut().zip(b_row) {
                *o += aik * bkj;
            }
        }
    }
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = dims2(a, "transpose")?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Softmax along `axis`, computed with max-subtraction for stability.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(NumError::InvalidAxis { axis, rank: shape.len() });
    }
    let lane = shape[axis];
    if lane == 0 {
        return Err(NumError::EmptyAxis { op: "softmax" });
    }
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * lane * inner + i;
            let mut mx = T::neg_infinity();
            for l in 0..lane {
                let v = x.data()[base + l * inner];
                if v > mx {
                    mx = v;
                }
            }
            let mut denom = T::zero();
            for l in 0..lane {
                let e = (x.data()[base + l * inner] - mx).exp();
                out[base + l * inner] = e;
                denom += e;
            }
            for l in 0..lane {
                out[base + l * inner] /= denom;
            }
        }
    }
    let t = Tensor::new(shape.to_vec(), out)?;
    t.check_finite("softmax")?;
    Ok(t)
}

/// Layer normalization over the last axis with affine gain/bias.
/// Rows are centered and scaled by the population standard deviation.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().ok_or(NumError::ZeroLengthRow { op: "layer_norm" })?;
    if d == 0 {
        return Err(NumError::ZeroLengthRow { op: "layer_norm" });
    }
    if gain.len() != d || bias.len() != d {
        return Err(NumError::ShapeMismatch {
            op: "layer_norm",
            detail: format!("gain/bias of {}/{} for row length {}", gain.len(), bias.len(), d),
        });
    }
    let rows = x.len() / d;
    let mut out = vec![T::zero(); x.len()];
    let nd = T::of_f64(d as f64);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mut mean = T::zero();
        for &v in row {
            mean += v;
        }
        mean /= nd;
        let mut var = T::zero();
        for &v in row {
            let c = v - mean;
            var += c * c;
        }
        var /= nd;
        let inv = (var + eps).sqrt().recip();
        for (j, &v) in row.iter().enumerate() {
            out[r * d + j] = (v - mean) * inv * gain.data()[j] + bias.data()[j];
        }
    }
    let t = Tensor::new(x.shape().to_vec(), out)?;
    t.check_finite("layer_norm")?;
    Ok(t)
}

/// GELU, tanh approximation: `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::of_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::of_f64(0.044_715);
    let half = T::of_f64(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (T::one() + inner.tanh())
}

/// Derivative of the tanh-approximation GELU.
pub fn dgelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::of_f64(0.797_884_560_802_865_4);
    let a = T::of_f64(0.044_715);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let sech2 = T::one() - th * th;
    half * (T::one() + th) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, "gelu", gelu_scalar)
}

pub fn dgelu<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, "dgelu", dgelu_scalar)
}

/// Softplus `ln(1 + eˣ)`, evaluated in the overflow-safe form.
pub fn softplus_scalar<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-(x.abs())).exp().ln_1p()
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, "softplus", softplus_scalar)
}

pub fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        (T::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map(x, "sigmoid", sigmoid_scalar)
}

/// Derivative of softplus is the sigmoid.
pub fn dsoftplus<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    sigmoid(x)
}

fn map<T: Scalar>(x: &Tensor<T>, op: &'static str, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    let t = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())?;
    t.check_finite(op)?;
    Ok(t)
}

fn zip<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(NumError::ShapeMismatch {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    let t = Tensor::new(a.shape().to_vec(), data)?;
    t.check_finite(op)?;
    Ok(t)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip(a, b, "add", |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip(a, b, "sub", |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip(a, b, "mul", |x, y| x * y)
}

pub fn scale<T: Scalar>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    map(a, "scale", |x| x * s)
}

/// `[n×d] + [d]` row-broadcast bias.
pub fn add_bias<T: Scalar>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = dims2(x, "add_bias")?;
    if b.len() != d {
        return Err(NumError::ShapeMismatch {
            op: "add_bias",
            detail: format!("bias {} for width {}", b.len(), d),
        });
    }
    let mut out = Vec::with_capacity(n * d);
    for i in 0..n {
        for j in 0..d {
            out.push(x.data()[i * d + j] + b.data()[j]);
        }
    }
    let t = Tensor::new(vec![n, d], out)?;
    t.check_finite("add_bias")?;
    Ok(t)
}

/// Column sums of a 2-D tensor (rows accumulated in order).
pub fn sum_axis0<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = dims2(x, "sum_axis0")?;
    let mut out = vec![T::zero(); d];
    for i in 0..n {
        for j in 0..d {
            out[j] += x.data()[i * d + j];
        }
    }
    Tensor::new(vec![d], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent straight-line oracle: naive i,j,k triple loop.
    fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
        let (m, k) = (a.rows(), a.cols());
        let n = b.cols();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += a.get2(i, kk) * b.get2(kk, j);
                }
                out[i * n + j] = acc;
            }
        }
        Tensor::new(vec![m, n], out).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let b = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]).unwrap();
        let i3 = Tensor::<f64>::eye(3);
        assert_eq!(matmul(&i3, &b).unwrap(), b);
    }

    #[test]
    fn matmul_hand_case() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle_exactly() {
        let mut rng = crate::rng::SeededRng::new(11);
        for &(m, k, n) in &[(5usize, 7usize, 3usize), (16, 16, 16), (1, 9, 4), (8, 3, 8)] {
            let a = rng.normal_tensor::<f64>(vec![m, k], 1.0).unwrap();
            let b = rng.normal_tensor::<f64>(vec![k, n], 1.0).unwrap();
            let got = matmul(&a, &b).unwrap();
            let want = matmul_oracle(&a, &b);
            // bit-exact: identical summation order
            assert_eq!(got.data(), want.data());
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::<f64>::zeros(vec![2, 3]);
        let b = Tensor::<f64>::zeros(vec![2, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn matmul_threaded_is_bit_identical() {
        let mut rng = crate::rng::SeededRng::new(3);
        let a = rng.normal_tensor::<f32>(vec![64, 96], 1.0).unwrap();
        let b = rng.normal_tensor::<f32>(vec![96, 80], 1.0).unwrap();
        let single = matmul(&a, &b).unwrap();
        crate::set_thread_budget(4);
        let multi = matmul(&a, &b).unwrap();
        crate::set_thread_budget(1);
        assert_eq!(single.data(), multi.data());
    }

    #[test]
    fn softmax_uniform_and_stability() {
        let x = Tensor::new(vec![4], vec![0.0f64; 4]).unwrap();
        let s = softmax(&x, 0).unwrap();
        for &v in s.data() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let x = Tensor::new(vec![2], vec![1000.0f64, 0.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert!((s.data()[0] - 1.0).abs() < 1e-12);
        assert_eq!(s.data()[1], 0.0);
    }

    #[test]
    fn softmax_hand_values() {
        let x = Tensor::new(vec![4], vec![2.0f64, 1.0, 0.0, -1.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        let want = [0.6439, 0.2369, 0.0871, 0.0321];
        for (got, w) in s.data().iter().zip(want) {
            assert!((got - w).abs() < 1e-4, "{} vs {}", got, w);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::SeededRng::new(5);
        let x = rng.normal_tensor::<f64>(vec![7, 9], 3.0).unwrap();
        let s = softmax(&x, 1).unwrap();
        for r in 0..7 {
            let sum: f64 = s.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
        assert!(softmax(&Tensor::<f64>::zeros(vec![3, 0]), 1).is_err());
    }

    #[test]
    fn layer_norm_contract() {
        let gain = Tensor::filled(vec![2], 1.0f64).unwrap();
        let bias = Tensor::zeros(vec![2]);
        // two-point symmetry at eps = 0
        let x = Tensor::new(vec![1, 2], vec![1.0, 3.0]).unwrap();
        let y = layer_norm(&x, &gain, &bias, 0.0).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-12);
        assert!((y.data()[1] - 1.0).abs() < 1e-12);
        // constant row guarded by eps
        let x = Tensor::new(vec![1, 2], vec![5.0, 5.0]).unwrap();
        let y = layer_norm(&x, &gain, &bias, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
    }

    #[test]
    fn layer_norm_statistics() {
        let mut rng = crate::rng::SeededRng::new(9);
        let x = rng.normal_tensor::<f64>(vec![1, 64], 2.5).unwrap();
        let gain = Tensor::filled(vec![64], 1.0).unwrap();
        let bias = Tensor::zeros(vec![64]);
        let y = layer_norm(&x, &gain, &bias, 1e-12).unwrap();
        let mean: f64 = y.data().iter().sum::<f64>() / 64.0;
        let var: f64 = y.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-6);
        assert!((0.9999..1.0001).contains(&var));
    }

    #[test]
    fn gelu_reference_point() {
        // scalar oracle: 2·Φ(2) ≈ 1.9545
        let v: f64 = gelu_scalar(2.0);
        assert!((v - 1.9546).abs() < 1e-3, "{}", v);
    }

    #[test]
    fn softplus_stability() {
        assert!((softplus_scalar(1000.0f64) - 1000.0).abs() < 1e-9);
        assert!(softplus_scalar(-1000.0f64) >= 0.0);
        assert!((softplus_scalar(0.0f64) - (2.0f64).ln()).abs() < 1e-12);
    }
}
