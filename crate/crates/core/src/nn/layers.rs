use super::{BnId, Ctx, ParamBuilder, ParamId};
use crate::error::Result;
use crate::tensor::{ConvSpec, Scalar, Var};

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
    ) -> Self {
        let cin_g = cin / spec.groups;
        let weight = pb.kaiming(format!("{name}.weight"), &[cout, cin_g, kernel, kernel], cin_g * kernel * kernel);
        let bias = bias.then(|| pb.zeros(format!("{name}.bias"), cout));
        Self { weight, bias, spec, cin, cout, kernel }
    }

    /// 1×1 convolution.
    pub fn pointwise<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, cin: usize, cout: usize, bias: bool) -> Self {
        Self::new(pb, name, cin, cout, 1, ConvSpec::POINTWISE, bias)
    }

    /// Bias-free depthwise 3×3, stride 1, same padding.
    pub fn depthwise3<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        Self::new(pb, name, c, c, 3, ConvSpec::depthwise3(c), false)
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), self.bias.map(|b| ctx.var(b)));
        ctx.tape.conv2d(x, w, b, self.spec)
    }

    pub fn macs_per_pixel(&self) -> usize {
        self.cout * (self.cin / self.spec.groups) * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub state: BnId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let (gamma, beta) = pb.norm_affine(name, c);
        let state = pb.bn_state(name, c);
        Self { gamma, beta, state }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        let training = ctx.training();
        ctx.tape.batch_norm(x, g, b, &mut ctx.bn[self.state.index()], training)
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, c: usize) -> Self {
        let (gamma, beta) = pb.norm_affine(name, c);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.var(self.gamma), ctx.var(self.beta));
        ctx.tape.layer_norm_channels(x, g, b)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, name: &str, fin: usize, fout: usize) -> Self {
        let weight = pb.kaiming(format!("{name}.weight"), &[fout, fin], fin);
        let bias = pb.zeros(format!("{name}.bias"), fout);
        Self { weight, bias }
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.var(self.weight), ctx.var(self.bias));
        ctx.tape.linear(x, w, b)
    }
}
