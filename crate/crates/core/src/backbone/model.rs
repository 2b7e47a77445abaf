use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::stem::{Align, SimpleStem};
use crate::blocks::{CrossBlock, EnergyGate, SelfBlock};
use crate::error::{Error, Result};
use crate::nn::{Ctx, LayerNorm, Linear, Mode, ParamBuilder, ParamKind, ParamStore};
use crate::seed::derive_rng;
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// `GAP → LN → Dropout → Linear`.
#[derive(Debug, Clone)]
pub struct Head {
    pub ln: LayerNorm,
    pub fc: Linear,
    pub dropout: f64,
}

impl Head {
    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, f: Var) -> Result<Var> {
        let (b, d, _, _) = ctx.tape.value(f).dims4()?;
        let pooled = ctx.tape.global_avg_pool(f)?;
        let pooled = self.ln.forward(ctx, pooled)?;
        let flat = ctx.tape.reshape(pooled, &[b, d])?;
        let training = ctx.training();
        let flat = ctx.tape.dropout(flat, self.dropout, training, ctx.rng)?;
        self.fc.forward(ctx, flat)
    }
}

/// Module layout of Clifford-M; parameters live in a separate [`ParamStore`].
#[derive(Debug, Clone)]
pub struct CliffordM {
    pub cfg: ModelConfig,
    pub stem: SimpleStem,
    pub align: Align,
    pub cross: CrossBlock,
    pub self_blocks: Vec<SelfBlock>,
    pub energy: Option<EnergyGate>,
    pub head: Head,
}

/// Intermediate maps of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Features {
    pub high: Var,
    pub low: Var,
    pub low_up: Var,
    pub fused: Var,
    pub final_map: Var,
    pub logits: Var,
}

impl CliffordM {
    /// Builds the layout and a deterministically initialized parameter store.
    pub fn build<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        let mut rng = derive_rng(seed, "init", &[]);
        let mut pb = ParamBuilder::new(&mut rng);
        let model = Self::build_with(&mut pb, cfg)?;
        Ok((model, pb.finish()))
    }

    /// Registers the layout on an existing builder.
    pub fn build_with<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let stem = SimpleStem::new(pb, "stem", cfg);
        let align = Align::new(pb, "align", d, cfg.high_grid);
        let cross = CrossBlock::new(pb, "cross", d, 0.0)?;
        let self_blocks = (0..cfg.num_self_blocks)
            .map(|i| SelfBlock::new(pb, &format!("self.{i}"), d, cfg.self_block_rate(i)))
            .collect::<Result<Vec<_>>>()?;
        let energy = if cfg.use_energy {
            Some(EnergyGate::new(pb, "energy", d, cfg.drop_path_max)?)
        } else {
            None
        };
        let head = Head {
            ln: LayerNorm::new(pb, "head.ln", d),
            fc: Linear::new(pb, "head.fc", d, cfg.num_classes),
            dropout: cfg.head_dropout,
        };
        Ok(Self { cfg: cfg.clone(), stem, align, cross, self_blocks, energy, head })
    }

    fn check_input<T: Scalar>(&self, x: &Tensor<T>) -> Result<()> {
        let (_, c, h, w) = x.dims4()?;
        let s = self.cfg.input_size;
        if (c, h, w) != (3, s, s) {
            return Err(Error::shape("model_forward", format!("expected Bx3x{s}x{s}, got {:?}", x.shape())));
        }
        Ok(())
    }

    /// Full forward on a tape whose parameters are already bound.
    pub fn forward_features<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Features> {
        self.check_input(ctx.tape.value(image))?;
        let (high, low) = self.stem.forward(ctx, image)?;
        let low_up = self.align.forward(ctx, low)?;
        let fused = self.cross.forward(ctx, high, low_up)?;
        let mut z = fused;
        for block in &self.self_blocks {
            z = block.forward(ctx, z)?;
        }
        let final_map = match &self.energy {
            Some(gate) => gate.forward(ctx, z, low)?,
            None => z,
        };
        let logits = self.head.forward(ctx, final_map)?;
        Ok(Features { high, low, low_up, fused, final_map, logits })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Ctx<'_, T>, image: Var) -> Result<Var> {
        Ok(self.forward_features(ctx, image)?.logits)
    }

    /// Eval-mode logits without recording gradients. BN statistics are read, never updated.
    pub fn predict<T: Scalar>(&self, params: &ParamStore<T>, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::no_grad();
        let vars = params.bind(&mut tape);
        let mut bn = params.bn_states().to_vec();
        let mut rng = derive_rng(0, "eval", &[]);
        let image = tape.constant(images.clone());
        let mut ctx = Ctx { tape: &mut tape, vars: &vars, bn: &mut bn, mode: Mode::Eval, rng: &mut rng };
        let logits = self.forward(&mut ctx, image)?;
        Ok(tape.take_value(logits))
    }

    /// Sets every layer-scale vector to `value`.
    pub fn set_layer_scales<T: Scalar>(params: &mut ParamStore<T>, value: f64) {
        let ids: Vec<_> = params.ids().filter(|&id| params.kind(id) == ParamKind::LayerScale).collect();
        for id in ids {
            params.get_mut(id).data_mut().fill(T::from_f64(value));
        }
    }
}

/// Builds a model with a deterministic initialization derived from `seed`.
pub fn build_model<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<(CliffordM, ParamStore<T>)> {
    CliffordM::build(cfg, seed)
}

/// Everything needed to run one forward pass with gradients.
pub struct Session<T: Scalar> {
    pub tape: Tape<T>,
    pub vars: Vec<Var>,
}

impl<T: Scalar> Session<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        Self { tape, vars }
    }

    pub fn ctx<'a>(&'a mut self, bn: &'a mut [crate::tensor::BnState<T>], mode: Mode, rng: &'a mut ChaCha8Rng) -> Ctx<'a, T> {
        Ctx { tape: &mut self.tape, vars: &self.vars, bn, mode, rng }
    }
}
