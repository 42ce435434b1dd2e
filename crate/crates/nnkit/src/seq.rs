//! A fixed chain of layers whose parameters live in a [`ParamStore`].

use crate::layers::{
    conv2d_backward_into, conv2d_forward, deconv2d_backward_into, deconv2d_forward, linear_backward_into,
    linear_forward, relu, relu_backward,
};
use crate::{Grads, NnError, ParamStore, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv {
        weight: String,
        bias: String,
        stride: usize,
        pad: usize,
    },
    Deconv {
        weight: String,
        bias: String,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    Linear {
        weight: String,
        bias: String,
    },
    Relu,
    Reshape(Vec<usize>),
}

/// Inputs seen by each op during a forward pass, kept for the backward pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Tape {
    inputs: Vec<Tensor>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Sequential {
    ops: Vec<Op>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: Op) {
        self.ops.push(op);
    }

    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn forward(&self, params: &ParamStore, x: Tensor) -> Result<(Tensor, Tape), NnError> {
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.ops.len()),
        };
        let mut cur = x;
        for op in &self.ops {
            let next = match op {
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => conv2d_forward(&cur, params.get(weight)?, params.get(bias)?, *stride, *pad)?,
                Op::Deconv {
                    weight,
                    bias,
                    stride,
                    pad,
                    out_pad,
                } => deconv2d_forward(&cur, params.get(weight)?, params.get(bias)?, *stride, *pad, *out_pad)?,
                Op::Linear { weight, bias } => linear_forward(&cur, params.get(weight)?, params.get(bias)?)?,
                Op::Relu => relu(&cur),
                Op::Reshape(shape) => cur.clone().reshape(shape)?,
            };
            tape.inputs.push(cur);
            cur = next;
        }
        Ok((cur, tape))
    }

    /// Back-propagates `gy`, adding parameter gradients into `grads` and
    /// returning the gradient with respect to the chain's input.
    pub fn backward(&self, params: &ParamStore, tape: &Tape, gy: Tensor, grads: &mut Grads) -> Result<Tensor, NnError> {
        let mut g = gy;
        for (op, x) in self.ops.iter().zip(&tape.inputs).rev() {
            g = match op {
                Op::Conv {
                    weight,
                    bias,
                    stride,
                    pad,
                } => {
                    let w = params.get(weight)?;
                    let (gw, gb) = slots(grads, params, weight, bias)?;
                    conv2d_backward_into(x, w, *stride, *pad, &g, gw, gb)?
                }
                Op::Deconv {
                    weight,
                    bias,
                    stride,
                    pad,
                    out_pad,
                } => {
                    let w = params.get(weight)?;
                    let (gw, gb) = slots(grads, params, weight, bias)?;
                    deconv2d_backward_into(x, w, *stride, *pad, *out_pad, &g, gw, gb)?
                }
                Op::Linear { weight, bias } => {
                    let w = params.get(weight)?;
                    let (gw, gb) = slots(grads, params, weight, bias)?;
                    linear_backward_into(x, w, &g, gw, gb)?
                }
                Op::Relu => relu_backward(x, &g),
                Op::Reshape(_) => g.reshape(x.shape())?,
            };
        }
        Ok(g)
    }
}

/// Gradient buffers for a weight/bias pair, zero-filled on first use.
fn slots<'a>(
    grads: &'a mut Grads,
    params: &ParamStore,
    weight: &str,
    bias: &str,
) -> Result<(&'a mut Tensor, &'a mut Tensor), NnError> {
    if weight == bias {
        return Err(NnError::Shape(format!("weight and bias share the name {weight}")));
    }
    for name in [weight, bias] {
        if !grads.contains_key(name) {
            grads.insert(name.to_string(), Tensor::zeros(params.get(name)?.shape()));
        }
    }
    let mut gw = None;
    let mut gb = None;
    for (k, v) in grads.iter_mut() {
        if k == weight {
            gw = Some(v);
        } else if k == bias {
            gb = Some(v);
        }
    }
    match (gw, gb) {
        (Some(w), Some(b)) => Ok((w, b)),
        _ => Err(NnError::MissingGrad(weight.to_string())),
    }
}

/// Adds `g` into the gradient slot `name`, creating it if absent.
pub fn add(grads: &mut Grads, name: &str, g: Tensor) -> Result<(), NnError> {
    match grads.get_mut(name) {
        Some(acc) => acc.add_assign(&g),
        None => {
            grads.insert(name.to_string(), g);
            Ok(())
        }
    }
}
