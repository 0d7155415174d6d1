//! Max/average pooling and nearest-neighbour upsampling on `[N, C, H, W]`.

use crate::tensor::{BackwardRule, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

fn dims4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match *shape {
        [n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, format!("expected [N, C, H, W], got {shape:?}"))),
    }
}

fn check_divisible(op: &'static str, h: usize, w: usize, k: usize) -> Result<()> {
    if k == 0 || !h.is_multiple_of(k) || !w.is_multiple_of(k) || h == 0 || w == 0 {
        return Err(Error::shape(
            op,
            format!("spatial dims {h}x{w} must be positive multiples of window {k}"),
        ));
    }
    Ok(())
}

struct MaxPoolRule {
    x: Var,
    /// Flat input index of each output's maximum.
    argmax: Vec<u32>,
}

impl<T: Scalar> BackwardRule<T> for MaxPoolRule {
    fn name(&self) -> &'static str {
        "max_pool2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = tape.shape(self.x).to_vec();
        let mut dx = vec![T::zero(); shape.iter().product()];
        for (&i, &g) in self.argmax.iter().zip(grad.data()) {
            dx[i as usize] += g;
        }
        Ok(vec![Some(Tensor::new(shape, dx)?)])
    }
}

struct AvgPoolRule {
    x: Var,
    k: usize,
}

impl<T: Scalar> BackwardRule<T> for AvgPoolRule {
    fn name(&self) -> &'static str {
        "avg_pool2d"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let shape = tape.shape(self.x).to_vec();
        let scale = T::lit(1.0 / (self.k * self.k) as f64);
        let g = grad.map(|v| v * scale);
        Ok(vec![Some(upsample_values(&g, self.k, &shape))])
    }
}

struct UpsampleRule {
    x: Var,
    f: usize,
}

impl<T: Scalar> BackwardRule<T> for UpsampleRule {
    fn name(&self) -> &'static str {
        "upsample_nearest"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.x]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        _needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        Ok(vec![Some(block_sum(grad, self.f, tape.shape(self.x)))])
    }
}

/// Sum over disjoint `k×k` blocks into `out_shape`.
fn block_sum<T: Scalar>(x: &Tensor<T>, k: usize, out_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let (ho, wo) = (h / k, w / k);
    let mut out = vec![T::zero(); out_shape.iter().product()];
    for (plane, dst) in x.data().chunks(h * w).zip(out.chunks_mut(ho * wo)) {
        for i in 0..h {
            let row = &plane[i * w..(i + 1) * w];
            let drow = &mut dst[(i / k) * wo..(i / k + 1) * wo];
            for (j, &v) in row.iter().enumerate() {
                drow[j / k] += v;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("block shape")
}

/// Replicate every pixel into an `f×f` block, producing `out_shape`.
fn upsample_values<T: Scalar>(x: &Tensor<T>, f: usize, out_shape: &[usize]) -> Tensor<T> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let wo = w * f;
    let mut out = Vec::with_capacity(out_shape.iter().product());
    for plane in x.data().chunks(h * w) {
        for i in 0..h * f {
            let row = &plane[(i / f) * w..(i / f + 1) * w];
            out.extend((0..wo).map(|j| row[j / f]));
        }
    }
    Tensor::new(out_shape.to_vec(), out).expect("upsample shape")
}

impl<T: Scalar> Tape<T> {
    /// `k×k` max pooling with stride `k`. Ties go to the first element in
    /// row-major window order.
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let [n, c, h, w] = dims4("max_pool2d", self.shape(x))?;
        check_divisible("max_pool2d", h, w, k)?;
        let (ho, wo) = (h / k, w / k);
        let data = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for p in 0..n * c {
            let base = p * h * w;
            for oi in 0..ho {
                for oj in 0..wo {
                    let mut best = base + oi * k * w + oj * k;
                    for di in 0..k {
                        for dj in 0..k {
                            let idx = base + (oi * k + di) * w + oj * k + dj;
                            if data[idx] > data[best] || (data[idx].is_nan() && !data[best].is_nan()) {
                                best = idx;
                            }
                        }
                    }
                    out.push(data[best]);
                    argmax.push(best as u32);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Box::new(MaxPoolRule { x, argmax })))
    }

    /// Mean over disjoint `k×k` blocks.
    pub fn avg_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let [n, c, h, w] = dims4("avg_pool2d", self.shape(x))?;
        check_divisible("avg_pool2d", h, w, k)?;
        let scale = T::lit(1.0 / (k * k) as f64);
        let value = block_sum(self.value(x), k, &[n, c, h / k, w / k]).map(|v| v * scale);
        Ok(self.push(value, Box::new(AvgPoolRule { x, k })))
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, f: usize) -> Result<Var> {
        let [n, c, h, w] = dims4("upsample_nearest", self.shape(x))?;
        if f == 0 {
            return Err(Error::invalid("upsample factor must be positive"));
        }
        let value = upsample_values(self.value(x), f, &[n, c, h * f, w * f]);
        Ok(self.push(value, Box::new(UpsampleRule { x, f })))
    }
}
