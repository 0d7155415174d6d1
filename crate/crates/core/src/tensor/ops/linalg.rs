use crate::tensor::{gemm, BackwardRule, MatRef, Scalar, Tape, Tensor, Var};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct MatmulDims {
    batch_a: usize,
    batch_b: usize,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
}

impl MatmulDims {
    fn resolve(a: &[usize], b: &[usize]) -> Result<(Self, Vec<usize>)> {
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        };
        let split = |s: &[usize]| -> Option<(usize, usize, usize)> {
            match *s {
                [r, c] => Some((1, r, c)),
                [bt, r, c] => Some((bt, r, c)),
                _ => None,
            }
        };
        let (batch_a, m, k) = split(a).ok_or_else(mismatch)?;
        let (batch_b, k2, n) = split(b).ok_or_else(mismatch)?;
        if k != k2 || (batch_a != batch_b && batch_a != 1 && batch_b != 1) {
            return Err(mismatch());
        }
        let batch = batch_a.max(batch_b);
        let out_shape = if a.len() == 2 && b.len() == 2 {
            vec![m, n]
        } else {
            vec![batch, m, n]
        };
        Ok((
            Self {
                batch_a,
                batch_b,
                batch,
                m,
                k,
                n,
            },
            out_shape,
        ))
    }
}

struct MatmulRule {
    a: Var,
    b: Var,
    dims: MatmulDims,
}

impl<T: Scalar> BackwardRule<T> for MatmulRule {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(
        &self,
        tape: &Tape<T>,
        _output: &Tensor<T>,
        grad: &Tensor<T>,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor<T>>>> {
        let MatmulDims {
            batch_a,
            batch_b,
            batch,
            m,
            k,
            n,
        } = self.dims;
        let (ta, tb) = (tape.value(self.a), tape.value(self.b));
        let g = grad.data();
        let one = T::one();

        // Shared right operand: fold the batch into rows.
        if batch_b == 1 && batch_a == batch {
            let rows = batch * m;
            let ga = needs[0].then(|| {
                let mut da = vec![T::zero(); rows * k];
                gemm(
                    one,
                    MatRef::row_major(g, rows, n),
                    MatRef::row_major(tb.data(), k, n).t(),
                    T::zero(),
                    &mut da,
                );
                da
            });
            let gb = needs[1].then(|| {
                let mut db = vec![T::zero(); k * n];
                gemm(
                    one,
                    MatRef::row_major(ta.data(), rows, k).t(),
                    MatRef::row_major(g, rows, n),
                    T::zero(),
                    &mut db,
                );
                db
            });
            return Ok(vec![
                ga.map(|d| Tensor::new(ta.shape().to_vec(), d)).transpose()?,
                gb.map(|d| Tensor::new(tb.shape().to_vec(), d)).transpose()?,
            ]);
        }

        let mut da = needs[0].then(|| vec![T::zero(); batch_a * m * k]);
        let mut db = needs[1].then(|| vec![T::zero(); batch_b * k * n]);
        for i in 0..batch {
            let ia = if batch_a == 1 { 0 } else { i };
            let ib = if batch_b == 1 { 0 } else { i };
            let gi = MatRef::row_major(&g[i * m * n..(i + 1) * m * n], m, n);
            let ai = MatRef::row_major(&ta.data()[ia * m * k..(ia + 1) * m * k], m, k);
            let bi = MatRef::row_major(&tb.data()[ib * k * n..(ib + 1) * k * n], k, n);
            if let Some(da) = da.as_mut() {
                gemm(one, gi, bi.t(), one, &mut da[ia * m * k..(ia + 1) * m * k]);
            }
            if let Some(db) = db.as_mut() {
                gemm(one, ai.t(), gi, one, &mut db[ib * k * n..(ib + 1) * k * n]);
            }
        }
        Ok(vec![
            da.map(|d| Tensor::new(ta.shape().to_vec(), d)).transpose()?,
            db.map(|d| Tensor::new(tb.shape().to_vec(), d)).transpose()?,
        ])
    }
}

impl<T: Scalar> Tape<T> {
    /// Matrix product of rank-2 or rank-3 operands; a batch of one
    /// broadcasts against the other operand's batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (dims, out_shape) = MatmulDims::resolve(ta.shape(), tb.shape())?;
        let MatmulDims {
            batch_a,
            batch_b,
            batch,
            m,
            k,
            n,
        } = dims;
        let mut out = vec![T::zero(); batch * m * n];
        if batch_b == 1 && batch_a == batch {
            gemm(
                T::one(),
                MatRef::row_major(ta.data(), batch * m, k),
                MatRef::row_major(tb.data(), k, n),
                T::zero(),
                &mut out,
            );
        } else {
            for i in 0..batch {
                let ia = if batch_a == 1 { 0 } else { i };
                let ib = if batch_b == 1 { 0 } else { i };
                gemm(
                    T::one(),
                    MatRef::row_major(&ta.data()[ia * m * k..(ia + 1) * m * k], m, k),
                    MatRef::row_major(&tb.data()[ib * k * n..(ib + 1) * k * n], k, n),
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let value = Tensor::new(out_shape, out)?;
        Ok(self.push(value, Box::new(MatmulRule { a, b, dims })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_small_products() {
        let mut tape = Tape::<f64>::new();
        let i2 = tape.constant(Tensor::from_f64([2, 2], &[1., 0., 0., 1.]).unwrap());
        let m = tape.constant(Tensor::from_f64([2, 2], &[1., 2., 3., 4.]).unwrap());
        let p = tape.matmul(i2, m).unwrap();
        assert_eq!(tape.value(p).data(), &[1., 2., 3., 4.]);

        let r = tape.constant(Tensor::from_f64([1, 2], &[1., 2.]).unwrap());
        let c = tape.constant(Tensor::from_f64([2, 1], &[3., 4.]).unwrap());
        let p = tape.matmul(r, c).unwrap();
        assert_eq!(tape.value(p).data(), &[11.]);
    }

    #[test]
    fn inner_dimension_mismatch_is_rejected() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros([2, 3]));
        let b = tape.constant(Tensor::zeros([2, 3]));
        assert!(tape.matmul(a, b).is_err());
        let c = tape.constant(Tensor::zeros([2, 3, 4]));
        let d = tape.constant(Tensor::zeros([3, 4, 5]));
        assert!(tape.matmul(c, d).is_err());
    }
}
