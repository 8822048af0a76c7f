use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

impl<'t, T: Real> Var<'t, T> {
    /// Concatenates `[B, C_i, H, W]` tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts.first().ok_or_else(|| Error::invalid("concat_channels", "no inputs"))?;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (b, _, h, w) = values[0].dims4()?;
        let mut chans = Vec::with_capacity(parts.len());
        for v in &values {
            let (vb, vc, vh, vw) = v.dims4()?;
            if (vb, vh, vw) != (b, h, w) {
                return Err(Error::shape("concat_channels", values[0].shape(), v.shape()));
            }
            chans.push(vc);
        }
        let total: usize = chans.iter().sum();
        let hw = h * w;
        let mut data = Vec::with_capacity(b * total * hw);
        for bi in 0..b {
            for (v, &c) in values.iter().zip(&chans) {
                data.extend_from_slice(&v.data()[bi * c * hw..(bi + 1) * c * hw]);
            }
        }
        let out = Tensor::new(&[b, total, h, w], data)?;
        Ok(first.tape().record(out, parts, move |g| {
            let mut grads: Vec<Vec<T>> = chans.iter().map(|&c| Vec::with_capacity(b * c * hw)).collect();
            for bi in 0..b {
                let mut off = bi * total * hw;
                for (gi, &c) in grads.iter_mut().zip(&chans) {
                    gi.extend_from_slice(&g.data()[off..off + c * hw]);
                    off += c * hw;
                }
            }
            grads
                .into_iter()
                .zip(&chans)
                .map(|(d, &c)| Some(Tensor::new(&[b, c, h, w], d).expect("concat grad")))
                .collect()
        }))
    }

    /// Channels `[start, start + len)` of a `[B, C, H, W]` tensor.
    pub fn slice_channels(self, start: usize, len: usize) -> Result<Var<'t, T>> {
        let x = self.value();
        let (b, c, h, w) = x.dims4()?;
        if start + len > c {
            return Err(Error::invalid(
                "slice_channels",
                format!("range {start}..{} exceeds {c} channels", start + len),
            ));
        }
        let hw = h * w;
        let mut data = Vec::with_capacity(b * len * hw);
        for bi in 0..b {
            data.extend_from_slice(&x.data()[(bi * c + start) * hw..(bi * c + start + len) * hw]);
        }
        let out = Tensor::new(&[b, len, h, w], data)?;
        Ok(self.tape().record(out, &[self], move |g| {
            let mut gx = Tensor::zeros(&[b, c, h, w]);
            for bi in 0..b {
                gx.data_mut()[(bi * c + start) * hw..(bi * c + start + len) * hw]
                    .copy_from_slice(&g.data()[bi * len * hw..(bi + 1) * len * hw]);
            }
            vec![Some(gx)]
        }))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t, T>> {
        let x = self.value();
        let old = x.shape().to_vec();
        let out = (*x).clone().reshape(shape)?;
        Ok(self.tape().record(out, &[self], move |g| vec![Some(g.clone().reshape(&old).expect("reshape grad"))]))
    }
}
