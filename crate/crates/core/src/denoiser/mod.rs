//! The noise-prediction network: a 1D U-Net over gaze sequences with
//! timestep conditioning, self-attention, and cross-attention to image
//! patch tokens that share the trajectory's positional frame.

mod cpe;
mod layers;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cpe::{timestep_encoding, CpeGrid};
use layers::{check_finite, Attention, Conv, Linear, Norm};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::features::FeatureGrid;
use crate::params::{Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserConfig {
    pub seq_len: usize,
    /// Number of down/up levels; each halves the sequence.
    pub depth: usize,
    /// Channels per level, `depth` entries.
    pub channels: Vec<usize>,
    /// Width `D` of the trajectory projection, feature projection and positional codes.
    pub embed_dim: usize,
    pub heads: usize,
    /// Depth of the incoming feature grids.
    pub feat_dim: usize,
    /// Spatial size of the incoming feature grids.
    pub grid: (usize, usize),
    /// Resolution of the positional grid, the stimulus frame.
    pub frame: (usize, usize),
    pub cross_attention: bool,
    pub use_cpe: bool,
    /// When false the grid is pooled to one global token seen by self-attention.
    pub patch_level: bool,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            seq_len: 720,
            depth: 3,
            channels: vec![64, 128, 256],
            embed_dim: 64,
            heads: 4,
            feat_dim: 64,
            grid: (32, 32),
            frame: (224, 224),
            cross_attention: true,
            use_cpe: true,
            patch_level: true,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.depth == 0 || self.channels.len() != self.depth {
            return fail(format!(
                "depth {} needs exactly that many channel entries, got {:?}",
                self.depth, self.channels
            ));
        }
        let factor = 1usize << self.depth;
        if self.seq_len == 0 || !self.seq_len.is_multiple_of(factor) {
            return fail(format!(
                "sequence length {} is not divisible by 2^{} = {factor}",
                self.seq_len, self.depth
            ));
        }
        if self.heads == 0 {
            return fail("heads must be positive".into());
        }
        if let Some(c) = self.channels.iter().find(|&&c| c == 0 || c % self.heads != 0) {
            return fail(format!("channels {c} not divisible by {} heads", self.heads));
        }
        if self.embed_dim == 0 || !self.embed_dim.is_multiple_of(4) {
            return fail(format!("embed_dim {} must be a positive multiple of 4", self.embed_dim));
        }
        if self.feat_dim == 0 || self.grid.0 == 0 || self.grid.1 == 0 {
            return fail(format!("feature grid {:?}x{} is empty", self.grid, self.feat_dim));
        }
        if self.frame.0 < 2 || self.frame.1 < 2 {
            return fail(format!("frame {:?} must be at least 2x2", self.frame));
        }
        Ok(())
    }

    pub fn temb_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn tokens(&self) -> usize {
        self.grid.0 * self.grid.1
    }
}

/// Image conditioning for a batch.
#[derive(Debug, Clone)]
pub struct Condition<T> {
    /// `[batch, tokens, feat_dim]`; an all-zero row block is the unconditional input.
    pub features: Tensor<T>,
    /// `[tokens, embed_dim]` positional codes of the tokens. `None` uses the
    /// positional grid resampled to the feature grid.
    pub positions: Option<Tensor<T>>,
}

impl<T: Scalar> Condition<T> {
    pub fn batch(&self) -> usize {
        self.features.shape()[0]
    }
}

#[derive(Debug, Clone)]
struct Block {
    name: String,
    conv1: Conv,
    time: Linear,
    norm1: Norm,
    conv2: Conv,
    skip: Option<Linear>,
    attn_norm: Norm,
    attn: Attention,
    global: Option<Linear>,
    cross: Option<(Norm, Attention)>,
}

struct Context {
    temb: Var,
    tokens: Option<Var>,
    global: Option<Var>,
}

impl Block {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: String,
        (cin, cout): (usize, usize),
        config: &DenoiserConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.embed_dim;
        let n = |part: &str| format!("{name}.{part}");
        Block {
            conv1: Conv::new(store, &n("conv1"), (cin, cout), 3, 1, rng),
            time: Linear::new(store, &n("time"), config.temb_dim(), cout, rng),
            norm1: Norm::new(store, &n("norm1"), cout),
            conv2: Conv::new(store, &n("conv2"), (cout, cout), 3, 1, rng),
            skip: (cin != cout).then(|| Linear::new(store, &n("skip"), cin, cout, rng)),
            attn_norm: Norm::new(store, &n("attn_norm"), cout),
            attn: Attention::new(store, &n("attn"), cout, cout, config.heads, rng),
            global: (!config.patch_level).then(|| Linear::new(store, &n("global"), d, cout, rng)),
            cross: (config.cross_attention && config.patch_level).then(|| {
                (
                    Norm::new(store, &n("cross_norm"), cout),
                    Attention::new(store, &n("cross"), cout, d, config.heads, rng),
                )
            }),
            name,
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x: Var, ctx: &Context) -> Result<Var> {
        let h = self.conv1.apply(tape, p, x)?;
        let t = self.time.apply(tape, p, ctx.temb)?;
        let h = tape.add_per_batch(h, t)?;
        let h = self.norm1.apply(tape, p, h)?;
        let h = tape.silu(h);
        let h = self.conv2.apply(tape, p, h)?;
        let residual = match &self.skip {
            Some(skip) => skip.apply(tape, p, x)?,
            None => x,
        };
        let mut h = tape.add(h, residual)?;

        let normed = self.attn_norm.apply(tape, p, h)?;
        let context = match (&self.global, ctx.global) {
            (Some(proj), Some(g)) => {
                let g = proj.apply(tape, p, g)?;
                tape.concat_seq(g, normed)?
            }
            _ => normed,
        };
        let a = self.attn.apply(tape, p, normed, context)?;
        h = tape.add(h, a)?;

        if let (Some((norm, cross)), Some(tokens)) = (&self.cross, ctx.tokens) {
            let normed = norm.apply(tape, p, h)?;
            let a = cross.apply(tape, p, normed, tokens)?;
            h = tape.add(h, a)?;
        }
        check_finite(tape, h, &self.name)?;
        Ok(h)
    }
}

#[derive(Debug, Clone)]
pub struct Denoiser {
    config: DenoiserConfig,
    cpe: CpeGrid,
    grid_positions: Tensor<f64>,
    input: Conv,
    time1: Linear,
    time2: Linear,
    features: Linear,
    global: Option<Linear>,
    down: Vec<(Block, Conv)>,
    mid: Block,
    up: Vec<Block>,
    out_norm: Norm,
    out: Conv,
}

impl Denoiser {
    /// Builds the network and its freshly initialized parameters.
    pub fn new<T: Scalar>(config: DenoiserConfig, seed: u64) -> Result<(Self, ParamStore<T>)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let s = &mut store;
        let d = config.embed_dim;
        let td = config.temb_dim();
        let c = &config.channels;

        let input = Conv::new(s, "input", (2, d), 3, 1, &mut rng);
        let time1 = Linear::new(s, "time1", d, td, &mut rng);
        let time2 = Linear::new(s, "time2", td, td, &mut rng);
        let features = Linear::new(s, "features", config.feat_dim, d, &mut rng);
        let global = (!config.patch_level).then(|| Linear::new(s, "global", config.feat_dim, d, &mut rng));
        let mut down = Vec::new();
        let mut cin = d;
        for (i, &ch) in c.iter().enumerate() {
            let block = Block::new(s, format!("down{i}"), (cin, ch), &config, &mut rng);
            let pool = Conv::new(s, &format!("down{i}.pool"), (ch, ch), 3, 2, &mut rng);
            down.push((block, pool));
            cin = ch;
        }
        let mid = Block::new(s, "mid".into(), (cin, cin), &config, &mut rng);
        let mut up = Vec::new();
        for i in (0..config.depth).rev() {
            up.push(Block::new(s, format!("up{i}"), (cin + c[i], c[i]), &config, &mut rng));
            cin = c[i];
        }
        let out_norm = Norm::new(s, "out_norm", cin);
        let out = Conv::zeroed(s, "out", (cin, 2), 3);

        let cpe = CpeGrid::new(config.frame.0, config.frame.1, d);
        let grid_positions = cpe.resampled(config.grid);
        Ok((
            Denoiser {
                config,
                cpe,
                grid_positions,
                input,
                time1,
                time2,
                features,
                global,
                down,
                mid,
                up,
                out_norm,
                out,
            },
            store,
        ))
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn cpe(&self) -> &CpeGrid {
        &self.cpe
    }

    /// Positional codes of the feature tokens, `[tokens, embed_dim]`.
    pub fn grid_positions<T: Scalar>(&self) -> Tensor<T> {
        self.grid_positions.cast()
    }

    /// All-zero features for `batch` samples.
    pub fn zero_condition<T: Scalar>(&self, batch: usize) -> Condition<T> {
        Condition {
            features: Tensor::zeros(&[batch, self.config.tokens(), self.config.feat_dim]),
            positions: None,
        }
    }

    /// Stacks grids into a batch condition; `None` entries are unconditional.
    pub fn condition<T: Scalar>(&self, grids: &[Option<&FeatureGrid>]) -> Result<Condition<T>> {
        let (h, w) = self.config.grid;
        let fd = self.config.feat_dim;
        let mut data = Vec::with_capacity(grids.len() * h * w * fd);
        for g in grids {
            match g {
                Some(g) => {
                    if (g.height, g.width, g.depth) != (h, w, fd) {
                        return Err(Error::shape("feature grid", &[h, w, fd], &[g.height, g.width, g.depth]));
                    }
                    data.extend(g.values.iter().map(|&v| T::from_f32(v).unwrap()));
                }
                None => data.extend(core::iter::repeat_n(T::zero(), h * w * fd)),
            }
        }
        Ok(Condition {
            features: Tensor::new(&[grids.len(), h * w, fd], data)?,
            positions: None,
        })
    }

    /// The projected trajectory tokens before and after adding the
    /// positional codes looked up at each coordinate.
    pub fn input_tokens<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, x_t: Var) -> Result<(Var, Var)> {
        let projected = self.input.apply(tape, p, x_t)?;
        if !self.config.use_cpe {
            return Ok((projected, projected));
        }
        let codes = self.cpe.lookup(tape.value(x_t));
        let codes = tape.constant(codes);
        let with_codes = tape.add(projected, codes)?;
        Ok((projected, with_codes))
    }

    fn timestep_embedding<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, steps: &[usize]) -> Result<Var> {
        let enc = tape.constant(timestep_encoding(steps, self.config.embed_dim));
        let h = self.time1.apply(tape, p, enc)?;
        let h = tape.silu(h);
        self.time2.apply(tape, p, h)
    }

    fn context<T: Scalar>(&self, tape: &mut Tape<T>, p: &Bound, temb: Var, cond: &Condition<T>) -> Result<Context> {
        let cfg = &self.config;
        let batch = cond.batch();
        let fs = cond.features.shape();
        if fs.len() != 3 || fs[2] != cfg.feat_dim {
            return Err(Error::shape("condition", &[batch, cfg.tokens(), cfg.feat_dim], fs));
        }
        let n = fs[1];
        let mut ctx = Context {
            temb,
            tokens: None,
            global: None,
        };
        if !cfg.patch_level {
            let mut pooled = vec![T::zero(); batch * cfg.feat_dim];
            let inv = T::one() / T::from_usize(n.max(1)).unwrap();
            for (b, sample) in cond.features.data().chunks(n * cfg.feat_dim).enumerate() {
                for token in sample.chunks(cfg.feat_dim) {
                    for (acc, &v) in pooled[b * cfg.feat_dim..].iter_mut().zip(token) {
                        *acc += v * inv;
                    }
                }
            }
            let pooled = tape.constant(Tensor::new(&[batch, 1, cfg.feat_dim], pooled)?);
            let global = self.global.as_ref().expect("global projection");
            ctx.global = Some(global.apply(tape, p, pooled)?);
        } else if cfg.cross_attention {
            let feats = tape.constant(cond.features.clone());
            let mut tokens = self.features.apply(tape, p, feats)?;
            if cfg.use_cpe {
                let positions = match &cond.positions {
                    Some(pos) => pos.clone(),
                    None => self.grid_positions(),
                };
                if positions.shape() != [n, cfg.embed_dim] {
                    return Err(Error::shape("token positions", &[n, cfg.embed_dim], positions.shape()));
                }
                let tiled: Vec<T> = (0..batch).flat_map(|_| positions.data().iter().copied()).collect();
                let tiled = tape.constant(Tensor::new(&[batch, n, cfg.embed_dim], tiled)?);
                tokens = tape.add(tokens, tiled)?;
            }
            check_finite(tape, tokens, "features")?;
            ctx.tokens = Some(tokens);
        }
        Ok(ctx)
    }

    /// Predicted noise `[batch, seq_len, 2]` for noisy trajectories
    /// `x_t: [batch, seq_len, 2]` at 0-based diffusion step indices `steps`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        p: &Bound,
        x_t: Var,
        steps: &[usize],
        cond: &Condition<T>,
    ) -> Result<Var> {
        let cfg = &self.config;
        let xs = tape.shape(x_t);
        if xs.len() != 3 || xs[1] != cfg.seq_len || xs[2] != 2 {
            return Err(Error::shape("trajectory", &[steps.len(), cfg.seq_len, 2], xs));
        }
        let batch = xs[0];
        if steps.len() != batch || cond.batch() != batch {
            return Err(Error::shape("batch", &[batch], &[steps.len(), cond.batch()]));
        }
        let (_, mut h) = self.input_tokens(tape, p, x_t)?;
        check_finite(tape, h, "input")?;
        let temb = self.timestep_embedding(tape, p, steps)?;
        let ctx = self.context(tape, p, temb, cond)?;

        let mut skips = Vec::with_capacity(cfg.depth);
        for (block, pool) in &self.down {
            h = block.apply(tape, p, h, &ctx)?;
            skips.push(h);
            h = pool.apply(tape, p, h)?;
        }
        h = self.mid.apply(tape, p, h, &ctx)?;
        for block in &self.up {
            h = tape.upsample(h, 2)?;
            let skip = skips.pop().expect("one skip per level");
            h = tape.concat_last(h, skip)?;
            h = block.apply(tape, p, h, &ctx)?;
        }
        h = self.out_norm.apply(tape, p, h)?;
        h = tape.silu(h);
        let out = self.out.apply(tape, p, h)?;
        check_finite(tape, out, "output")?;
        Ok(out)
    }

    /// Inference-only forward pass with frozen parameters.
    pub fn predict<T: Scalar>(
        &self,
        params: &ParamStore<T>,
        x_t: &Tensor<T>,
        steps: &[usize],
        cond: &Condition<T>,
    ) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let p = params.bind_frozen(&mut tape);
        let x = tape.constant(x_t.clone());
        let out = self.forward(&mut tape, &p, x, steps, cond)?;
        Ok(tape.value(out).clone())
    }
}
