use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

impl<'t, T: Real> Var<'t, T> {
    pub fn add(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("add", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x + y);
        Ok(self.tape().record(out, &[self, other], |g| vec![Some(g.clone()), Some(g.clone())]))
    }

    pub fn sub(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("sub", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x - y);
        Ok(self.tape().record(out, &[self, other], |g| vec![Some(g.clone()), Some(g.map(|v| -v))]))
    }

    pub fn mul(self, other: Var<'t, T>) -> Result<Var<'t, T>> {
        let (a, b) = (self.value(), other.value());
        same_shape("mul", &a, &b)?;
        let out = a.zip_map(&b, |x, y| x * y);
        Ok(self.tape().record(out, &[self, other], move |g| {
            vec![Some(g.zip_map(&b, |g, y| g * y)), Some(g.zip_map(&a, |g, x| g * x))]
        }))
    }

    /// Multiplies by a constant.
    pub fn scale(self, s: T) -> Var<'t, T> {
        let out = self.value().scale(s);
        self.tape().record(out, &[self], move |g| vec![Some(g.scale(s))])
    }

    /// Adds a constant to every element.
    pub fn add_scalar(self, s: T) -> Var<'t, T> {
        let out = self.value().map(|v| v + s);
        self.tape().record(out, &[self], |g| vec![Some(g.clone())])
    }

    /// Multiplies every element by a single-element variable.
    pub fn mul_scalar(self, s: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, sv) = (self.value(), s.value());
        if sv.len() != 1 {
            return Err(Error::shape("mul_scalar", &[1], sv.shape()));
        }
        let k = sv.item();
        let out = x.scale(k);
        Ok(self.tape().record(out, &[self, s], move |g| {
            let ds: T = g.data().iter().zip(x.data()).map(|(&g, &x)| g * x).sum();
            vec![Some(g.scale(k)), Some(Tensor::scalar(ds))]
        }))
    }

    /// Adds a per-channel bias along axis 1 of a rank >= 2 tensor.
    pub fn bias_add(self, bias: Var<'t, T>) -> Result<Var<'t, T>> {
        let (x, b) = (self.value(), bias.value());
        let shape = x.shape().to_vec();
        if shape.len() < 2 || b.shape() != [shape[1]] {
            let c = shape.get(1).copied().unwrap_or(0);
            return Err(Error::shape("bias_add", &[c], b.shape()));
        }
        let c = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut out = (*x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let bv = b.data()[i % c];
            chunk.iter_mut().for_each(|v| *v += bv);
        }
        Ok(self.tape().record(out, &[self, bias], move |g| {
            let mut gb = vec![T::zero(); c];
            for (i, chunk) in g.data().chunks(inner).enumerate() {
                gb[i % c] += chunk.iter().copied().sum();
            }
            vec![Some(g.clone()), Some(Tensor::new(&[c], gb).expect("bias grad shape"))]
        }))
    }

    /// Elementwise `|x|`, with subgradient 0 at 0.
    pub fn abs(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(T::abs);
        self.tape().record(out, &[self], move |g| {
            vec![Some(g.zip_map(&x, |g, x| {
                if x > T::zero() {
                    g
                } else if x < T::zero() {
                    -g
                } else {
                    T::zero()
                }
            }))]
        })
    }

    pub fn square(self) -> Var<'t, T> {
        let x = self.value();
        let out = x.map(|v| v * v);
        self.tape().record(out, &[self], move |g| vec![Some(g.zip_map(&x, |g, x| g * (x + x)))])
    }

    pub fn sum(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape().to_vec();
        self.tape().record(Tensor::scalar(x.sum()), &[self], move |g| vec![Some(Tensor::full(&shape, g.item()))])
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::of(self.value().len() as f64);
        self.sum().scale(T::one() / n)
    }
}

#[cfg(test)]
mod tests {
    use crate::autodiff::Tape;
    use crate::tensor::Tensor;

    #[test]
    fn add_zero_is_identity_and_mul_zero_absorbs() {
        let tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[4], |i| i as f64 - 1.5));
        let z = tape.constant(Tensor::zeros(&[4]));
        assert_eq!(*x.add(z).unwrap().value(), *x.value());
        assert_eq!(*x.mul(z).unwrap().value(), Tensor::zeros(&[4]));
    }

    #[test]
    fn add_vectors_and_sum_gradient() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let b = tape.leaf(Tensor::new(&[2], vec![3.0, 4.0]).unwrap());
        let c = a.add(b).unwrap();
        assert_eq!(c.value().data(), &[4.0, 6.0]);
        let g = tape.backward(c.sum()).unwrap();
        assert_eq!(g.wrt(a).unwrap().data(), &[1.0, 1.0]);
        assert_eq!(g.wrt(b).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let tape = Tape::<f64>::new();
        let a = tape.leaf(Tensor::zeros(&[2]));
        let b = tape.leaf(Tensor::zeros(&[3]));
        let err = a.add(b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
    }

    #[test]
    fn bias_broadcasts_over_channels_only() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3, 2, 2]));
        let b = tape.leaf(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let y = x.bias_add(b).unwrap();
        assert_eq!(y.value().data()[4], 2.0);
        let g = tape.backward(y.sum()).unwrap();
        // each channel bias touches B*H*W = 8 elements
        assert_eq!(g.wrt(b).unwrap().data(), &[8.0, 8.0, 8.0]);
        let bad = tape.leaf(Tensor::zeros(&[2]));
        assert!(x.bias_add(bad).is_err());
    }
}
