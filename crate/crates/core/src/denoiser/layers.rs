use alloc::format;
use alloc::string::String;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

pub(crate) fn check_finite<T: Scalar>(tape: &Tape<T>, x: Var, layer: &str) -> Result<()> {
    if tape.value(x).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            location: String::from(layer),
        })
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        out: usize,
        rng: &mut R,
    ) -> Self {
        Linear {
            w: store.add_uniform(format!("{name}.w"), &[fan_in, out], fan_in, rng),
            b: store.add_uniform(format!("{name}.b"), &[out], fan_in, rng),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.matmul(x, p.var(self.w))?;
        tape.add_bias(y, p.var(self.b))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv {
    w: ParamId,
    b: ParamId,
    kernel: usize,
    stride: usize,
}

impl Conv {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = kernel * cin;
        Conv {
            w: store.add_uniform(format!("{name}.w"), &[fan_in, cout], fan_in, rng),
            b: store.add_uniform(format!("{name}.b"), &[cout], fan_in, rng),
            kernel,
            stride,
        }
    }

    pub fn zeroed<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        (cin, cout): (usize, usize),
        kernel: usize,
    ) -> Self {
        Conv {
            w: store.add(format!("{name}.w"), Tensor::zeros(&[kernel * cin, cout])),
            b: store.add(format!("{name}.b"), Tensor::zeros(&[cout])),
            kernel,
            stride: 1,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.conv1d(x, p.var(self.w), self.kernel, self.stride, self.kernel / 2)?;
        tape.add_bias(y, p.var(self.b))
    }
}

/// Layer normalization over channels with a learned gain and shift.
#[derive(Debug, Clone)]
pub(crate) struct Norm {
    gain: ParamId,
    shift: ParamId,
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        Norm {
            gain: store.add(format!("{name}.gain"), Tensor::full(&[channels], T::one())),
            shift: store.add(format!("{name}.shift"), Tensor::zeros(&[channels])),
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var) -> Result<Var> {
        let y = tape.layer_norm(x);
        let y = tape.mul_cols(y, p.var(self.gain))?;
        tape.add_bias(y, p.var(self.shift))
    }
}

/// Multi-head attention from `[b, lq, c]` queries to `[b, lk, c_kv]` keys and values.
#[derive(Debug, Clone)]
pub(crate) struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
    heads: usize,
    head_dim: usize,
}

impl Attention {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        kv_channels: usize,
        heads: usize,
        rng: &mut R,
    ) -> Self {
        Attention {
            q: Linear::new(store, &format!("{name}.q"), channels, channels, rng),
            k: Linear::new(store, &format!("{name}.k"), kv_channels, channels, rng),
            v: Linear::new(store, &format!("{name}.v"), kv_channels, channels, rng),
            o: Linear::new(store, &format!("{name}.o"), channels, channels, rng),
            heads,
            head_dim: channels / heads,
        }
    }

    pub fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, queries: Var, context: Var) -> Result<Var> {
        let q = self.q.apply(tape, p, queries)?;
        let k = self.k.apply(tape, p, context)?;
        let v = self.v.apply(tape, p, context)?;
        let q = tape.split_heads(q, self.heads)?;
        let k = tape.split_heads(k, self.heads)?;
        let v = tape.split_heads(v, self.heads)?;
        let scores = tape.batch_matmul(q, k, false, true)?;
        let scale = T::from_f64_lossy(1.0 / libm::sqrt(self.head_dim as f64));
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax(scores);
        let mixed = tape.batch_matmul(weights, v, false, false)?;
        let merged = tape.merge_heads(mixed, self.heads)?;
        self.o.apply(tape, p, merged)
    }
}
