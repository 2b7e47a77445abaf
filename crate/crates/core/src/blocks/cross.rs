use super::{GatedFusion, RollingConfig, SparseRollingProduct};
use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv2d, Ctx, LayerNorm, ParamBuilder};
use crate::tensor::{Scalar, Var};

/// Fuses the high-resolution stream with the aligned low-resolution stream.
///
/// Both inputs are normalized independently; the state comes from the high
/// stream through a 1×1 projection and the context from the low stream through
/// depthwise 3×3 → BN → SiLU. The high stream is the shortcut and its
/// normalized form the fusion reference.
#[derive(Debug, Clone)]
pub struct CrossBlock {
    pub ln_high: LayerNorm,
    pub ln_low: LayerNorm,
    pub state_proj: Conv2d,
    pub context_dw: Conv2d,
    pub context_bn: BatchNorm,
    pub interaction: SparseRollingProduct,
    pub fusion: GatedFusion,
}

impl CrossBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, drop_rate: f64) -> Result<Self> {
        let cfg = RollingConfig::from_dim(dim)?;
        Ok(Self {
            ln_high: LayerNorm::new(pb, &format!("{name}.ln_high"), dim),
            ln_low: LayerNorm::new(pb, &format!("{name}.ln_low"), dim),
            state_proj: Conv2d::pointwise(pb, &format!("{name}.state_proj"), dim, dim, true),
            context_dw: Conv2d::depthwise3(pb, &format!("{name}.context_dw"), dim),
            context_bn: BatchNorm::new(pb, &format!("{name}.context_bn"), dim),
            interaction: SparseRollingProduct::new(pb, &format!("{name}.interaction"), cfg),
            fusion: GatedFusion::new(pb, &format!("{name}.fusion"), dim, drop_rate)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x_high: Var, x_low_up: Var) -> Result<Var> {
        if ctx.tape.shape(x_high) != ctx.tape.shape(x_low_up) {
            return Err(Error::shape(
                "cross_block",
                format!("{:?} vs {:?}", ctx.tape.shape(x_high), ctx.tape.shape(x_low_up)),
            ));
        }
        let hat_high = self.ln_high.forward(ctx, x_high)?;
        let hat_low = self.ln_low.forward(ctx, x_low_up)?;
        let u = self.state_proj.forward(ctx, hat_high)?;
        let v = self.context_dw.forward(ctx, hat_low)?;
        let v = self.context_bn.forward(ctx, v)?;
        let v = ctx.tape.silu(v)?;
        let g = self.interaction.forward(ctx, u, v)?;
        self.fusion.forward(ctx, x_high, hat_high, g)
    }
}
