use candle_core::Tensor;

use super::{sigmoid, Conv1d, Init, ParamBuilder};
use crate::{Error, Result};

/// Non-causal dilated convolution stack with gated tanh activations and an
/// optional global conditioning vector, as used in the posterior encoder
/// and in the coupling networks of the flow.
#[derive(Debug, Clone)]
pub struct WaveNet {
    in_layers: Vec<Conv1d>,
    res_skip: Vec<Conv1d>,
    cond: Option<Conv1d>,
    hidden: usize,
}

impl WaveNet {
    pub fn new(
        pb: &ParamBuilder,
        hidden: usize,
        kernel: usize,
        dilation_rate: usize,
        layers: usize,
        cond_channels: usize,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::Invalid(format!("wavenet kernel must be odd, got {kernel}")));
        }
        let cond = if cond_channels > 0 {
            Some(Conv1d::new(&pb.pp("cond"), cond_channels, 2 * hidden * layers, 1, 1)?)
        } else {
            None
        };
        let mut in_layers = Vec::with_capacity(layers);
        let mut res_skip = Vec::with_capacity(layers);
        for i in 0..layers {
            let dilation = dilation_rate.pow(i as u32);
            in_layers.push(Conv1d::new(&pb.pp(format!("in.{i}")), hidden, 2 * hidden, kernel, dilation)?);
            let out = if i + 1 < layers { 2 * hidden } else { hidden };
            let bound = 1.0 / (hidden as f64).sqrt();
            res_skip.push(Conv1d::with_init(
                &pb.pp(format!("res_skip.{i}")),
                hidden,
                out,
                1,
                1,
                Init::Uniform(bound),
                Init::Uniform(bound),
            )?);
        }
        Ok(Self {
            in_layers,
            res_skip,
            cond,
            hidden,
        })
    }

    /// `x`: `(B, hidden, T)`, `mask`: `(B, 1, T)`, `g`: `(B, cond_channels)`.
    pub fn forward(&self, x: &Tensor, mask: &Tensor, g: Option<&Tensor>) -> Result<Tensor> {
        let h = self.hidden;
        let cond = match (&self.cond, g) {
            (Some(layer), Some(g)) => Some(layer.forward(&g.unsqueeze(2)?)?),
            (None, None) => None,
            (Some(_), None) => return Err(Error::Invalid("wavenet expects a conditioning vector".into())),
            (None, Some(_)) => return Err(Error::Invalid("wavenet has no conditioning input".into())),
        };
        let mut x = x.clone();
        let mut skip: Option<Tensor> = None;
        let n = self.in_layers.len();
        for (i, (inl, rs)) in self.in_layers.iter().zip(&self.res_skip).enumerate() {
            let mut a = inl.forward(&x)?;
            if let Some(c) = &cond {
                a = a.broadcast_add(&c.narrow(1, 2 * h * i, 2 * h)?)?;
            }
            let acts = (a.narrow(1, 0, h)?.tanh()? * sigmoid(&a.narrow(1, h, h)?)?)?;
            let out = rs.forward(&acts)?;
            let s = if i + 1 < n {
                x = (x + out.narrow(1, 0, h)?)?.broadcast_mul(mask)?;
                out.narrow(1, h, h)?
            } else {
                out
            };
            skip = Some(match skip {
                Some(prev) => (prev + s)?,
                None => s,
            });
        }
        let skip = skip.ok_or_else(|| Error::Invalid("wavenet with zero layers".into()))?;
        Ok(skip.broadcast_mul(mask)?)
    }
}
