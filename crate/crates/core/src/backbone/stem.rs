use super::config::{ModelConfig, STEM_KERNEL, STEM_PAD, STEM_STRIDE};
use crate::error::Result;
use crate::nn::{BatchNorm, Conv2d, Ctx, ParamBuilder};
use crate::tensor::{ConvSpec, Scalar, Var};

/// `SiLU(BN(conv(x)))` with a bias-free convolution.
#[derive(Debug, Clone)]
pub struct ConvBnAct {
    pub conv: Conv2d,
    pub bn: BatchNorm,
}

impl ConvBnAct {
    pub fn pointwise<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            conv: Conv2d::pointwise(pb, &format!("{name}.conv"), cin, cout, false),
            bn: BatchNorm::new(pb, &format!("{name}.bn"), cout),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        ctx.tape.silu(y)
    }
}

/// Depthwise-separable residual block: `x + SiLU(BN(1×1(SiLU(BN(DW3×3(x))))))`.
#[derive(Debug, Clone)]
pub struct DwResidual {
    pub dw: Conv2d,
    pub dw_bn: BatchNorm,
    pub pw: ConvBnAct,
}

impl DwResidual {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize) -> Self {
        Self {
            dw: Conv2d::depthwise3(pb, &format!("{name}.dw"), dim),
            dw_bn: BatchNorm::new(pb, &format!("{name}.dw_bn"), dim),
            pw: ConvBnAct::pointwise(pb, &format!("{name}.pw"), dim, dim),
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let y = self.dw.forward(ctx, x)?;
        let y = self.dw_bn.forward(ctx, y)?;
        let y = ctx.tape.silu(y)?;
        let y = self.pw.forward(ctx, y)?;
        ctx.tape.add(x, y)
    }
}

/// Stride-4 stem that splits into a high- and a low-resolution stream, each
/// refined by one residual block and pooled onto its fixed grid.
#[derive(Debug, Clone)]
pub struct SimpleStem {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub proj_high: ConvBnAct,
    pub proj_low: ConvBnAct,
    pub res_high: DwResidual,
    pub res_low: DwResidual,
    pub high_grid: usize,
    pub low_grid: usize,
}

impl SimpleStem {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, cfg: &ModelConfig) -> Self {
        let spec = ConvSpec::new(STEM_STRIDE, STEM_PAD, 1);
        let (w, d) = (cfg.stem_width, cfg.dim);
        Self {
            conv: Conv2d::new(pb, &format!("{name}.conv"), 3, w, STEM_KERNEL, spec, false),
            bn: BatchNorm::new(pb, &format!("{name}.bn"), w),
            proj_high: ConvBnAct::pointwise(pb, &format!("{name}.proj_high"), w, d),
            proj_low: ConvBnAct::pointwise(pb, &format!("{name}.proj_low"), w, d),
            res_high: DwResidual::new(pb, &format!("{name}.res_high"), d),
            res_low: DwResidual::new(pb, &format!("{name}.res_low"), d),
            high_grid: cfg.high_grid,
            low_grid: cfg.low_grid,
        }
    }

    /// Returns `(X_H, X_L)` on the high and low grids.
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<(Var, Var)> {
        let f = self.conv.forward(ctx, image)?;
        let f = self.bn.forward(ctx, f)?;
        let f = ctx.tape.silu(f)?;
        let h = self.proj_high.forward(ctx, f)?;
        let h = self.res_high.forward(ctx, h)?;
        let h = ctx.tape.adaptive_avg_pool(h, self.high_grid, self.high_grid)?;
        let l = self.proj_low.forward(ctx, f)?;
        let l = self.res_low.forward(ctx, l)?;
        let l = ctx.tape.adaptive_avg_pool(l, self.low_grid, self.low_grid)?;
        Ok((h, l))
    }
}

/// Low→high alignment: `Interp(BN(1×1(X_L)))` onto the high grid.
#[derive(Debug, Clone)]
pub struct Align {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub grid: usize,
}

impl Align {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, dim: usize, grid: usize) -> Self {
        Self {
            conv: Conv2d::pointwise(pb, &format!("{name}.conv"), dim, dim, false),
            bn: BatchNorm::new(pb, &format!("{name}.bn"), dim),
            grid,
        }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x_low: Var) -> Result<Var> {
        let y = self.conv.forward(ctx, x_low)?;
        let y = self.bn.forward(ctx, y)?;
        ctx.tape.bilinear_resize(y, self.grid, self.grid)
    }
}
