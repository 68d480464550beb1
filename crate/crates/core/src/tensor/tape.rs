//! Gradient tape.
//!
//! Every differentiable op appends one node while a tape is recording. Nodes
//! are replayed last-to-first by [`backward`], which is a valid reverse
//! topological order because ops can only consume tensors that already exist.

use std::marker::PhantomData;

use crate::error::{Error, Result};

use super::{Scalar, Tensor};

type BackwardFn = Box<dyn FnOnce() -> Result<()>>;

pub(crate) struct TapeNode {
    #[allow(dead_code)]
    pub op: &'static str,
    run: BackwardFn,
}

/// Ordered record of the backward closures of one forward pass.
pub struct Tape<S: Scalar> {
    nodes: Vec<TapeNode>,
    recording: bool,
    _scalar: PhantomData<S>,
}

impl<S: Scalar> Tape<S> {
    /// A recording tape for a training forward pass.
    pub fn new() -> Tape<S> {
        Tape {
            nodes: Vec::new(),
            recording: true,
            _scalar: PhantomData,
        }
    }

    /// A tape that records nothing; use for pure inference.
    pub fn disabled() -> Tape<S> {
        Tape {
            nodes: Vec::new(),
            recording: false,
            _scalar: PhantomData,
        }
    }

    #[inline]
    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Push one backward closure. No-op on a disabled tape.
    pub(crate) fn record<F>(&mut self, op: &'static str, run: F)
    where
        F: FnOnce() -> Result<()> + 'static,
    {
        if self.recording {
            self.nodes.push(TapeNode { op, run: Box::new(run) });
        }
    }
}

impl<S: Scalar> Default for Tape<S> {
    fn default() -> Self {
        Tape::new()
    }
}

/// Run reverse-mode accumulation from a scalar `loss`, consuming the tape.
///
/// Gradients are added (`+=`) into the grad buffers of every tensor on the
/// path that requires a gradient; calling backward twice without zeroing
/// sums the two passes.
pub fn backward<S: Scalar>(tape: &mut Tape<S>, loss: &Tensor<S>) -> Result<()> {
    if loss.numel() != 1 {
        return Err(Error::Usage(format!(
            "backward expects a scalar loss, got shape {}",
            loss.shape()
        )));
    }
    loss.accumulate_grad(&[S::one()]);
    for node in tape.nodes.drain(..).rev() {
        (node.run)()?;
    }
    Ok(())
}
