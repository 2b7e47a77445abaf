//! Finite-difference checks (f64) over every tape op, every block and the
//! full tiny model.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Align, CliffordM, ConvBnAct, DwResidual, ModelConfig, SimpleStem};
use crate::blocks::{CrossBlock, EnergyGate, GatedFusion, RollingConfig, SelfBlock, SparseRollingProduct};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, Mode, ParamBuilder, ParamStore};
use crate::tensor::{grad_check, BnState, ConvSpec, GradCheckReport, Tape, Tensor, Var};

/// Tolerance for ops that are affine in each input separately.
pub const TOL_AFFINE: f64 = 1e-6;
pub const TOL_SMOOTH: f64 = 1e-4;
pub const TOL_BCE: f64 = 1e-6;
pub const STEP: f64 = 1e-5;
/// Central differences of an affine map have no truncation error, so a wider
/// step only reduces cancellation.
pub const STEP_AFFINE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Ops,
    Blocks,
    Model,
}

impl Scope {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ops" => Ok(Scope::Ops),
            "blocks" => Ok(Scope::Blocks),
            "model" => Ok(Scope::Model),
            _ => Err(Error::Config(format!("unknown gradcheck scope {s:?} (ops, blocks, model)"))),
        }
    }
}

/// The tiny configuration used for the whole-model check.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_size: 32,
        dim: 8,
        stem_width: 16,
        num_self_blocks: 2,
        high_grid: 8,
        low_grid: 4,
        ..ModelConfig::default()
    }
}

fn rand(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn positive(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 0.5, 1.5, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn check(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    tol: f64,
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    grad_check(name, f, &inputs, if tol == TOL_AFFINE { STEP_AFFINE } else { STEP }, tol)
}

pub fn op_checks() -> Result<Vec<GradCheckReport>> {
    let x4 = [2, 4, 5, 5];
    let mut out = vec![
        check("add", vec![rand(&x4, 1), rand(&x4, 2)], TOL_AFFINE, |t, v| t.add(v[0], v[1]))?,
        check("sub", vec![rand(&x4, 1), rand(&x4, 2)], TOL_AFFINE, |t, v| t.sub(v[0], v[1]))?,
        check("mul", vec![rand(&x4, 1), rand(&x4, 2)], TOL_AFFINE, |t, v| t.mul(v[0], v[1]))?,
        check("sigmoid", vec![rand(&x4, 3)], TOL_SMOOTH, |t, v| t.sigmoid(v[0]))?,
        check("silu", vec![rand(&x4, 3)], TOL_SMOOTH, |t, v| t.silu(v[0]))?,
        check("scale_channels", vec![rand(&x4, 4), rand(&[4], 5)], TOL_AFFINE, |t, v| t.scale_channels(v[0], v[1]))?,
        check("concat_channels", vec![rand(&[2, 3, 4, 4], 6), rand(&[2, 2, 4, 4], 7)], TOL_AFFINE, |t, v| {
            t.concat_channels(&[v[0], v[1], v[0]])
        })?,
        check("channel_roll", vec![rand(&x4, 8)], TOL_AFFINE, |t, v| t.channel_roll(v[0], 3))?,
        check("reshape", vec![rand(&x4, 9)], TOL_AFFINE, |t, v| t.reshape(v[0], &[2, 100]))?,
        check("linear", vec![rand(&[3, 5], 10), rand(&[4, 5], 11), rand(&[4], 12)], TOL_AFFINE, |t, v| {
            t.linear(v[0], v[1], v[2])
        })?,
        check("conv2d_dense_stride2", vec![rand(&[2, 3, 9, 9], 13), rand(&[4, 3, 3, 3], 14), rand(&[4], 15)], TOL_AFFINE, |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(2, 1, 1))
        })?,
        check("conv2d_stem_7x7", vec![rand(&[1, 3, 12, 12], 16), rand(&[2, 3, 7, 7], 17)], TOL_AFFINE, |t, v| {
            t.conv2d(v[0], v[1], None, ConvSpec::new(4, 3, 1))
        })?,
        check("conv2d_depthwise", vec![rand(&x4, 18), rand(&[4, 1, 3, 3], 19)], TOL_AFFINE, |t, v| {
            t.conv2d(v[0], v[1], None, ConvSpec::depthwise3(4))
        })?,
        check("conv2d_pointwise", vec![rand(&x4, 20), rand(&[6, 4, 1, 1], 21), rand(&[6], 22)], TOL_AFFINE, |t, v| {
            t.conv2d(v[0], v[1], Some(v[2]), ConvSpec::new(1, 0, 1))
        })?,
        check("batch_norm_train", vec![rand(&x4, 23), positive(&[4], 24), rand(&[4], 25)], TOL_SMOOTH, |t, v| {
            t.batch_norm(v[0], v[1], v[2], &mut BnState::new(4), true)
        })?,
        check("batch_norm_eval", vec![rand(&x4, 26), positive(&[4], 27), rand(&[4], 28)], TOL_AFFINE, |t, v| {
            let mut st = BnState::new(4);
            st.running_mean = rand(&[4], 29);
            st.running_var = positive(&[4], 30);
            t.batch_norm(v[0], v[1], v[2], &mut st, false)
        })?,
        check("layer_norm_channels", vec![rand(&x4, 31), positive(&[4], 32), rand(&[4], 33)], TOL_SMOOTH, |t, v| {
            t.layer_norm_channels(v[0], v[1], v[2])
        })?,
        check("bilinear_resize_up", vec![rand(&[2, 3, 4, 4], 34)], TOL_AFFINE, |t, v| t.bilinear_resize(v[0], 7, 9))?,
        check("bilinear_resize_down", vec![rand(&[1, 2, 9, 9], 35)], TOL_AFFINE, |t, v| t.bilinear_resize(v[0], 4, 5))?,
        check("avg_pool", vec![rand(&[2, 3, 6, 6], 36)], TOL_AFFINE, |t, v| t.avg_pool(v[0], 2))?,
        check("adaptive_avg_pool", vec![rand(&[2, 3, 7, 7], 37)], TOL_AFFINE, |t, v| t.adaptive_avg_pool(v[0], 3, 3))?,
        check("global_avg_pool", vec![rand(&x4, 38)], TOL_AFFINE, |t, v| t.global_avg_pool(v[0]))?,
        check("broadcast_spatial", vec![rand(&[2, 4, 1, 1], 39)], TOL_AFFINE, |t, v| t.broadcast_spatial(v[0], 3, 2))?,
        check("drop_path", vec![rand(&[6, 4, 3, 3], 40)], TOL_AFFINE, |t, v| {
            t.drop_path(v[0], 0.4, true, &mut ChaCha8Rng::seed_from_u64(41))
        })?,
        check("dropout", vec![rand(&[4, 8], 42)], TOL_AFFINE, |t, v| {
            t.dropout(v[0], 0.3, true, &mut ChaCha8Rng::seed_from_u64(43))
        })?,
        check("rolling_interaction", vec![rand(&[2, 8, 3, 3], 44), rand(&[2, 8, 3, 3], 45)], TOL_SMOOTH, |t, v| {
            t.rolling_interaction(v[0], v[1], &[1, 2, 4])
        })?,
    ];
    let targets = Tensor::uniform(&[5, 8], 0.0, 1.0, &mut ChaCha8Rng::seed_from_u64(46));
    let weights: Vec<f64> = (0..8).map(|c| 1.0 + c as f64).collect();
    let mut logits = Tensor::uniform(&[5, 8], -4.0, 4.0, &mut ChaCha8Rng::seed_from_u64(47));
    // Coordinates past the clamp carry zero gradient on both sides.
    logits.data_mut()[0] = 23.0;
    logits.data_mut()[1] = -25.0;
    let bce = move |t: &mut Tape<f64>, v: &[Var]| t.weighted_bce(v[0], &targets, &weights);
    out.push(grad_check("weighted_bce", bce, &[logits], STEP, TOL_BCE)?);
    Ok(out)
}

/// Checks a parametrized module with respect to its inputs and every
/// parameter. Parameters are jittered away from their initial values (layer
/// scales of 1e-5 would hide the branches) and BN runs in training mode.
fn check_module<M>(
    name: &str,
    inputs: Vec<Tensor<f64>>,
    build: impl FnOnce(&mut ParamBuilder<'_, f64>) -> Result<M>,
    fwd: impl Fn(&M, &mut Ctx<'_, f64>, &[Var]) -> Result<Var>,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x626c6b);
    let mut pb = ParamBuilder::new(&mut rng);
    let module = build(&mut pb)?;
    let mut store: ParamStore<f64> = pb.finish();
    jitter(&mut store, 0x6a74);
    let n = inputs.len();
    let bn = store.bn_states().to_vec();
    let mut all = inputs;
    all.extend(store.tensors().iter().cloned());
    grad_check(
        name,
        |tape, vars| {
            let mut bn = bn.clone();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let mut ctx = Ctx { tape, vars: &vars[n..], bn: &mut bn, mode: Mode::Train, rng: &mut rng };
            fwd(&module, &mut ctx, &vars[..n])
        },
        &all,
        STEP,
        TOL_SMOOTH,
    )
}

fn jitter(store: &mut ParamStore<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.tensors_mut() {
        let noise = Tensor::uniform(t.shape(), -0.3, 0.3, &mut rng);
        for (p, n) in t.data_mut().iter_mut().zip(noise.data()) {
            *p = if *p == 1e-5 { 0.5 + n } else { *p + n };
        }
    }
}

pub fn block_checks() -> Result<Vec<GradCheckReport>> {
    let d = 8;
    let x = |s| rand(&[2, d, 4, 4], s);
    Ok(vec![
        check_module(
            "sparse_rolling_product",
            vec![x(1), x(2)],
            |pb| Ok(SparseRollingProduct::new(pb, "srp", RollingConfig::from_dim(d)?)),
            |m, ctx, v| m.forward(ctx, v[0], v[1]),
        )?,
        check_module(
            "gated_fusion",
            vec![x(3), x(4), x(5)],
            |pb| GatedFusion::new(pb, "fusion", d, 0.3),
            |m, ctx, v| m.forward(ctx, v[0], v[1], v[2]),
        )?,
        check_module("cross_block", vec![x(6), x(7)], |pb| CrossBlock::new(pb, "cross", d, 0.0), |m, ctx, v| {
            m.forward(ctx, v[0], v[1])
        })?,
        check_module("self_block", vec![x(8)], |pb| SelfBlock::new(pb, "self", d, 0.3), |m, ctx, v| {
            m.forward(ctx, v[0])
        })?,
        check_module("energy_gate", vec![x(9), rand(&[2, d, 2, 2], 10)], |pb| EnergyGate::new(pb, "energy", d, 0.3), |m, ctx, v| {
            m.forward(ctx, v[0], v[1])
        })?,
        check_module(
            "conv_bn_act",
            vec![rand(&[2, 4, 3, 3], 11)],
            |pb| Ok(ConvBnAct::pointwise(pb, "cba", 4, 6)),
            |m, ctx, v| m.forward(ctx, v[0]),
        )?,
        check_module("dw_residual", vec![x(12)], |pb| Ok(DwResidual::new(pb, "dwr", d)), |m, ctx, v| m.forward(ctx, v[0]))?,
        check_module(
            "simple_stem",
            vec![rand(&[2, 3, 32, 32], 13)],
            |pb| Ok(SimpleStem::new(pb, "stem", &tiny_config())),
            |m, ctx, v| {
                let (h, l) = m.forward(ctx, v[0])?;
                let l = ctx.tape.bilinear_resize(l, 8, 8)?;
                ctx.tape.concat_channels(&[h, l])
            },
        )?,
        check_module("align", vec![rand(&[2, d, 2, 2], 14)], |pb| Ok(Align::new(pb, "align", d, 4)), |m, ctx, v| {
            m.forward(ctx, v[0])
        })?,
        check_module(
            "head",
            vec![x(15)],
            |pb| {
                Ok(crate::backbone::Head {
                    ln: LayerNorm::new(pb, "head.ln", d),
                    fc: Linear::new(pb, "head.fc", d, 3),
                    dropout: 0.2,
                })
            },
            |m, ctx, v| m.forward(ctx, v[0]),
        )?,
    ])
}

/// The whole tiny network, gradients for the image and every parameter.
pub fn model_check() -> Result<GradCheckReport> {
    let cfg = tiny_config();
    check_module("model_tiny", vec![rand(&[2, 3, 32, 32], 99)], |pb| CliffordM::build_with(pb, &cfg), |m, ctx, v| {
        m.forward(ctx, v[0])
    })
}

pub fn run(scope: Scope) -> Result<Vec<GradCheckReport>> {
    match scope {
        Scope::Ops => op_checks(),
        Scope::Blocks => block_checks(),
        Scope::Model => Ok(vec![model_check()?]),
    }
}
