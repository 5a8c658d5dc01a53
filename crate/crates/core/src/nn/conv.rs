//! 2-D cross-correlation with valid padding, NHWC layout, lowered to GEMM
//! through an im2col buffer.

use super::tensor::{gemm, MatRef, Real, Tensor};
use crate::error::{Error, Result};

struct Geometry {
    batch: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new<T: Real>(x: &Tensor<T>, k: &Tensor<T>) -> Result<Self> {
        if x.rank() != 4 || k.rank() != 4 {
            return Err(Error::dim(format!(
                "conv2d expects x[batch,H,W,Cin] and k[kh,kw,Cin,Cout]; got {:?}, {:?}",
                x.shape(),
                k.shape()
            )));
        }
        let (batch, h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (kh, kw, kcin, cout) = (k.shape()[0], k.shape()[1], k.shape()[2], k.shape()[3]);
        if kcin != cin {
            return Err(Error::dim(format!(
                "kernel expects {kcin} input channels, input has {cin}"
            )));
        }
        if kh > h || kw > w {
            return Err(Error::dim(format!(
                "kernel {kh}x{kw} larger than input {h}x{w}"
            )));
        }
        Ok(Geometry {
            batch,
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            oh: h - kh + 1,
            ow: w - kw + 1,
        })
    }

    fn rows(&self) -> usize {
        self.batch * self.oh * self.ow
    }

    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    /// Visit each (output row index, kernel row, input offset) triple; the
    /// `kw * cin` values starting at the input offset are contiguous.
    fn for_each_segment(&self, mut f: impl FnMut(usize, usize, usize)) {
        let mut row = 0;
        for b in 0..self.batch {
            for y in 0..self.oh {
                for x in 0..self.ow {
                    for i in 0..self.kh {
                        f(row, i, ((b * self.h + y + i) * self.w + x) * self.cin);
                    }
                    row += 1;
                }
            }
        }
    }
}

fn im2col<T: Real>(g: &Geometry, x: &[T]) -> Vec<T> {
    let seg = g.kw * g.cin;
    let patch = g.patch();
    let mut cols = vec![T::zero(); g.rows() * patch];
    g.for_each_segment(|row, i, src| {
        let dst = row * patch + i * seg;
        cols[dst..dst + seg].copy_from_slice(&x[src..src + seg]);
    });
    cols
}

/// Valid cross-correlation plus bias, optionally followed by ReLU.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    b: &Tensor<T>,
    relu: bool,
) -> Result<Tensor<T>> {
    let g = Geometry::new(x, k)?;
    b.expect_shape(&[g.cout], "conv2d bias")?;
    let cols = im2col(&g, x.data());
    let mut out = Vec::with_capacity(g.rows() * g.cout);
    for _ in 0..g.rows() {
        out.extend_from_slice(b.data());
    }
    gemm(
        T::one(),
        MatRef::new(&cols, g.rows(), g.patch()),
        MatRef::new(k.data(), g.patch(), g.cout),
        T::one(),
        &mut out,
    );
    if relu {
        super::dense::relu_in_place(&mut out);
    }
    Tensor::from_vec(&[g.batch, g.oh, g.ow, g.cout], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub k: Tensor<T>,
    pub b: Tensor<T>,
}

/// Backward pass given the gradient w.r.t. the pre-activation output.
pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    k: &Tensor<T>,
    grad_z: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = Geometry::new(x, k)?;
    grad_z.expect_shape(&[g.batch, g.oh, g.ow, g.cout], "conv2d upstream gradient")?;
    let cols = im2col(&g, x.data());
    let dz = MatRef::new(grad_z.data(), g.rows(), g.cout);

    let mut dk = vec![T::zero(); g.patch() * g.cout];
    gemm(
        T::one(),
        MatRef::new(&cols, g.rows(), g.patch()).t(),
        dz,
        T::zero(),
        &mut dk,
    );
    drop(cols);

    let mut db = vec![T::zero(); g.cout];
    for row in grad_z.data().chunks(g.cout) {
        for (d, &v) in db.iter_mut().zip(row) {
            *d += v;
        }
    }

    let mut dcols = vec![T::zero(); g.rows() * g.patch()];
    gemm(
        T::one(),
        dz,
        MatRef::new(k.data(), g.patch(), g.cout).t(),
        T::zero(),
        &mut dcols,
    );
    let seg = g.kw * g.cin;
    let patch = g.patch();
    let mut dx = vec![T::zero(); x.len()];
    g.for_each_segment(|row, i, dst| {
        let src = row * patch + i * seg;
        for (d, &v) in dx[dst..dst + seg].iter_mut().zip(&dcols[src..src + seg]) {
            *d += v;
        }
    });

    Ok(ConvGrads {
        x: Tensor::from_vec(x.shape(), dx)?,
        k: Tensor::from_vec(k.shape(), dk)?,
        b: Tensor::from_vec(&[g.cout], db)?,
    })
}
