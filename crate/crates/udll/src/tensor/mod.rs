//! Dense `f64` tensors and the differentiable operations the autoencoder
//! needs, with analytic gradients and a finite-difference oracle for tests.
//!
//! Forward results are bitwise deterministic: every reduction runs in a
//! fixed left-to-right order regardless of thread count.

mod adam;
mod conv;

pub use adam::{adam_step, AdamState, Parameter};
pub use conv::{
    conv2d_backward, conv2d_forward, conv2d_transpose_backward, conv2d_transpose_forward,
};

use crate::error::UdllError;
use crate::par;
use crate::Result;
use rand::Rng;

/// Dense multi-dimensional array, row-major, 64-bit floats.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(UdllError::Shape {
                op: "Tensor::from_vec",
                detail: format!(
                    "shape {:?} wants {} values, got {}",
                    shape,
                    expect,
                    data.len()
                ),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Uniform samples in `[lo, hi)` from the caller's generator.
    pub fn random_uniform<R: Rng>(shape: &[usize], lo: f64, hi: f64, rng: &mut R) -> Self {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != self.data.len() {
            return Err(UdllError::Shape {
                op: "Tensor::reshape",
                detail: format!("cannot view {} values as {:?}", self.data.len(), shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Row count of a rank-2 tensor.
    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    /// Column count of a rank-2 tensor.
    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    #[inline]
    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.shape[1] + c]
    }

    #[inline]
    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with("Tensor::add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with("Tensor::sub", other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// `self += s * other`, shapes must match.
    pub fn add_scaled(&mut self, other: &Tensor, s: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(UdllError::Shape {
                op: "Tensor::add_scaled",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += s * b;
        }
        Ok(())
    }

    /// Flat inner product over all entries.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(UdllError::Shape {
                op: "Tensor::dot",
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        let mut acc = 0.0;
        for (a, b) in self.data.iter().zip(other.data.iter()) {
            acc += a * b;
        }
        Ok(acc)
    }

    fn zip_with(
        &self,
        op: &'static str,
        other: &Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(UdllError::Shape {
                op,
                detail: format!("{:?} vs {:?}", self.shape, other.shape),
            });
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }
}

/// Elementwise `max(0, x)`.
pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        shape: input.shape.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Passes `grad_out` where the forward input was positive, zero elsewhere.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    if grad_out.shape != input.shape {
        return Err(UdllError::Shape {
            op: "relu_backward",
            detail: format!("{:?} vs {:?}", grad_out.shape, input.shape),
        });
    }
    Ok(Tensor {
        shape: input.shape.clone(),
        data: grad_out
            .data
            .iter()
            .zip(input.data.iter())
            .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
            .collect(),
    })
}

/// Sum of squared entries.
pub fn frobenius_sq(t: &Tensor) -> f64 {
    let mut acc = 0.0;
    for v in &t.data {
        acc += v * v;
    }
    acc
}

fn check_rank2(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape.len() != 2 {
        return Err(UdllError::Shape {
            op,
            detail: format!("expected rank-2 tensor, got shape {:?}", t.shape),
        });
    }
    Ok(())
}

/// `a [p,q] * b [q,r] -> [p,r]`, exact product, rows computed in parallel.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_rank2("matmul", a)?;
    check_rank2("matmul", b)?;
    let (p, q) = (a.shape[0], a.shape[1]);
    let (q2, r) = (b.shape[0], b.shape[1]);
    if q != q2 {
        return Err(UdllError::Shape {
            op: "matmul",
            detail: format!("inner dims disagree: [{},{}] x [{},{}]", p, q, q2, r),
        });
    }
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data.as_slice(), b.data.as_slice());
    par::fill_chunks(&mut out.data, r.max(1), |i, row| {
        if i >= p {
            return;
        }
        for k in 0..q {
            let aik = ad[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &bd[k * r..(k + 1) * r];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    });
    Ok(out)
}

/// `a [p,q] * b^T` with `b [r,q] -> [p,r]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_rank2("matmul_nt", a)?;
    check_rank2("matmul_nt", b)?;
    let (p, q) = (a.shape[0], a.shape[1]);
    let (r, q2) = (b.shape[0], b.shape[1]);
    if q != q2 {
        return Err(UdllError::Shape {
            op: "matmul_nt",
            detail: format!("inner dims disagree: [{},{}] x [{},{}]^T", p, q, r, q2),
        });
    }
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data.as_slice(), b.data.as_slice());
    par::fill_chunks(&mut out.data, r.max(1), |i, row| {
        if i >= p {
            return;
        }
        let arow = &ad[i * q..(i + 1) * q];
        for (j, o) in row.iter_mut().enumerate() {
            let brow = &bd[j * q..(j + 1) * q];
            let mut acc = 0.0;
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            *o = acc;
        }
    });
    Ok(out)
}

/// `a^T * b` with `a [q,p]`, `b [q,r] -> [p,r]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    check_rank2("matmul_tn", a)?;
    check_rank2("matmul_tn", b)?;
    let (q, p) = (a.shape[0], a.shape[1]);
    let (q2, r) = (b.shape[0], b.shape[1]);
    if q != q2 {
        return Err(UdllError::Shape {
            op: "matmul_tn",
            detail: format!("inner dims disagree: [{},{}]^T x [{},{}]", q, p, q2, r),
        });
    }
    let mut out = Tensor::zeros(&[p, r]);
    let (ad, bd) = (a.data.as_slice(), b.data.as_slice());
    par::fill_chunks(&mut out.data, r.max(1), |i, row| {
        if i >= p {
            return;
        }
        for k in 0..q {
            let aki = ad[k * p + i];
            if aki == 0.0 {
                continue;
            }
            let brow = &bd[k * r..(k + 1) * r];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    });
    Ok(out)
}

/// Rank-2 transpose.
pub fn transpose(t: &Tensor) -> Tensor {
    debug_assert_eq!(t.shape.len(), 2);
    let (r, c) = (t.shape[0], t.shape[1]);
    let mut out = Tensor::zeros(&[c, r]);
    for i in 0..r {
        for j in 0..c {
            out.data[j * r + i] = t.data[i * c + j];
        }
    }
    out
}

/// Central-difference gradient estimate of `loss_fn` at `x`, step `h`.
///
/// Test oracle: intentionally independent of every analytic backward path.
pub fn finite_diff_grad<F>(loss_fn: F, x: &Tensor, h: f64) -> Tensor
where
    F: Fn(&Tensor) -> f64,
{
    assert!(h > 0.0, "finite_diff_grad needs a positive step");
    let mut grad = Tensor::zeros(&x.shape);
    let mut probe = x.clone();
    for i in 0..x.data.len() {
        let orig = probe.data[i];
        probe.data[i] = orig + h;
        let up = loss_fn(&probe);
        probe.data[i] = orig - h;
        let down = loss_fn(&probe);
        probe.data[i] = orig;
        grad.data[i] = (up - down) / (2.0 * h);
    }
    grad
}
