use super::LAYER_SCALE_INIT;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, ParamBuilder, ParamId};
use crate::tensor::{Scalar, Var};

/// Gated residual update:
///
/// ```text
/// α     = σ(Conv1×1([X̂ ∥ G]))
/// H_mix = SiLU(X̂) + α ⊙ G
/// X_out = X_in + DropPath(γ ⊙ H_mix)
/// ```
#[derive(Debug, Clone)]
pub struct GatedFusion {
    pub gate: Conv2d,
    pub layer_scale: ParamId,
    pub drop_rate: f64,
}

impl GatedFusion {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, drop_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_rate) {
            return Err(Error::Config(format!("{name}: drop-path rate {drop_rate} outside [0, 1)")));
        }
        let gate = Conv2d::pointwise(pb, &format!("{name}.gate"), 2 * dim, dim, true);
        let layer_scale = pb.layer_scale(format!("{name}.layer_scale"), dim, LAYER_SCALE_INIT);
        Ok(Self { gate, layer_scale, drop_rate })
    }

    /// The pre-drop-path branch `H_mix`.
    pub fn mix<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x_hat: Var, g_feat: Var) -> Result<Var> {
        let cat = ctx.tape.concat_channels(&[x_hat, g_feat])?;
        let logits = self.gate.forward(ctx, cat)?;
        let alpha = ctx.tape.sigmoid(logits)?;
        let gated = ctx.tape.mul(alpha, g_feat)?;
        let act = ctx.tape.silu(x_hat)?;
        ctx.tape.add(act, gated)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x_in: Var, x_hat: Var, g_feat: Var) -> Result<Var> {
        let mix = self.mix(ctx, x_hat, g_feat)?;
        residual(ctx, x_in, mix, self.layer_scale, self.drop_rate)
    }
}

/// `x_in + DropPath(γ ⊙ branch)`.
pub(super) fn residual<T: Scalar>(
    ctx: &mut Ctx<'_, T>,
    x_in: Var,
    branch: Var,
    layer_scale: ParamId,
    drop_rate: f64,
) -> Result<Var> {
    let gamma = ctx.var(layer_scale);
    let scaled = ctx.tape.scale_channels(branch, gamma)?;
    let training = ctx.training();
    let dropped = ctx.tape.drop_path(scaled, drop_rate, training, ctx.rng)?;
    ctx.tape.add(x_in, dropped)
}
