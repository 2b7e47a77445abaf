use super::fusion::residual;
use super::LAYER_SCALE_INIT;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, Ctx, LayerNorm, ParamBuilder, ParamId};
use crate::tensor::{Scalar, Var};

/// Optional gate modulating the fused high-resolution feature with a pooled
/// descriptor of the low-resolution stream:
///
/// ```text
/// E     = GAP(X_L), broadcast to the fused grid
/// T     = SiLU(Conv1×1(LN(E)))
/// β     = σ(Conv1×1([LN(F) ∥ T]))
/// F_out = F + DropPath(γ ⊙ (SiLU(LN(F)) + β ⊙ T))
/// ```
///
/// `E` is constant over space, so its normalization and projection are
/// evaluated once per sample on the 1×1 grid and broadcast afterwards.
#[derive(Debug, Clone)]
pub struct EnergyGate {
    pub ln_fused: LayerNorm,
    pub ln_energy: LayerNorm,
    pub energy_proj: Conv2d,
    pub gate: Conv2d,
    pub layer_scale: ParamId,
    pub drop_rate: f64,
}

impl EnergyGate {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, drop_rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&drop_rate) {
            return Err(Error::Config(format!("{name}: drop-path rate {drop_rate} outside [0, 1)")));
        }
        Ok(Self {
            ln_fused: LayerNorm::new(pb, &format!("{name}.ln_fused"), dim),
            ln_energy: LayerNorm::new(pb, &format!("{name}.ln_energy"), dim),
            energy_proj: Conv2d::pointwise(pb, &format!("{name}.energy_proj"), dim, dim, true),
            gate: Conv2d::pointwise(pb, &format!("{name}.gate"), 2 * dim, dim, true),
            layer_scale: pb.layer_scale(format!("{name}.layer_scale"), dim, LAYER_SCALE_INIT),
            drop_rate,
        })
    }

    /// Broadcast energy descriptor `E` on the fused grid.
    pub fn energy<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fused: Var, x_low: Var) -> Result<Var> {
        let (_, _, h, w) = ctx.tape.value(fused).dims4()?;
        let e = ctx.tape.global_avg_pool(x_low)?;
        ctx.tape.broadcast_spatial(e, h, w)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, fused: Var, x_low: Var) -> Result<Var> {
        let (fb, fc, h, w) = ctx.tape.value(fused).dims4()?;
        let (lb, lc, _, _) = ctx.tape.value(x_low).dims4()?;
        if (fb, fc) != (lb, lc) {
            return Err(Error::shape("energy_gate", format!("fused {fb}x{fc} vs low {lb}x{lc}")));
        }
        let e = ctx.tape.global_avg_pool(x_low)?;
        let e_hat = self.ln_energy.forward(ctx, e)?;
        let t = self.energy_proj.forward(ctx, e_hat)?;
        let t = ctx.tape.silu(t)?;
        let t = ctx.tape.broadcast_spatial(t, h, w)?;
        let f_hat = self.ln_fused.forward(ctx, fused)?;
        let cat = ctx.tape.concat_channels(&[f_hat, t])?;
        let beta = self.gate.forward(ctx, cat)?;
        let beta = ctx.tape.sigmoid(beta)?;
        let gated = ctx.tape.mul(beta, t)?;
        let act = ctx.tape.silu(f_hat)?;
        let branch = ctx.tape.add(act, gated)?;
        residual(ctx, fused, branch, self.layer_scale, self.drop_rate)
    }
}
