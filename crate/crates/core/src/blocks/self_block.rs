use super::{GatedFusion, RollingConfig, SparseRollingProduct};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv2d, Ctx, LayerNorm, ParamBuilder};
use crate::tensor::{Scalar, Var};

/// Self-interaction refinement: the context branch stacks two depthwise 3×3
/// convolutions (5×5 receptive field) before BN → SiLU.
#[derive(Debug, Clone)]
pub struct SelfBlock {
    pub ln: LayerNorm,
    pub state_proj: Conv2d,
    pub context_dw1: Conv2d,
    pub context_dw2: Conv2d,
    pub context_bn: BatchNorm,
    pub interaction: SparseRollingProduct,
    pub fusion: GatedFusion,
}

impl SelfBlock {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, drop_rate: f64) -> Result<Self> {
        let cfg = RollingConfig::from_dim(dim)?;
        Ok(Self {
            ln: LayerNorm::new(pb, &format!("{name}.ln"), dim),
            state_proj: Conv2d::pointwise(pb, &format!("{name}.state_proj"), dim, dim, true),
            context_dw1: Conv2d::depthwise3(pb, &format!("{name}.context_dw1"), dim),
            context_dw2: Conv2d::depthwise3(pb, &format!("{name}.context_dw2"), dim),
            context_bn: BatchNorm::new(pb, &format!("{name}.context_bn"), dim),
            interaction: SparseRollingProduct::new(pb, &format!("{name}.interaction"), cfg),
            fusion: GatedFusion::new(pb, &format!("{name}.fusion"), dim, drop_rate)?,
        })
    }

    /// Context branch `SiLU(BN(DW(DW(ẑ))))`.
    pub fn context<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, z_hat: Var) -> Result<Var> {
        let v = self.context_dw1.forward(ctx, z_hat)?;
        let v = self.context_dw2.forward(ctx, v)?;
        let v = self.context_bn.forward(ctx, v)?;
        ctx.tape.silu(v)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, z: Var) -> Result<Var> {
        let z_hat = self.ln.forward(ctx, z)?;
        let u = self.state_proj.forward(ctx, z_hat)?;
        let v = self.context(ctx, z_hat)?;
        let g = self.interaction.forward(ctx, u, v)?;
        self.fusion.forward(ctx, z, z_hat, g)
    }
}
