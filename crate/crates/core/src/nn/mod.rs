//! Named parameters, forward context and the thin layer wrappers the model is
//! assembled from.

mod layers;
mod params;

pub use layers::{BatchNorm, Conv2d, LayerNorm, Linear};
pub use params::{BnId, ParamBuilder, ParamId, ParamKind, ParamStore};

use rand_chacha::ChaCha8Rng;

use crate::tensor::{BnState, Scalar, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn is_train(self) -> bool {
        self == Mode::Train
    }
}

/// Everything a module needs during one forward pass.
pub struct Ctx<'a, T: Scalar> {
    pub tape: &'a mut Tape<T>,
    pub vars: &'a [Var],
    pub bn: &'a mut [BnState<T>],
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

impl<T: Scalar> Ctx<'_, T> {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.index()]
    }

    pub fn training(&self) -> bool {
        self.mode.is_train()
    }
}
