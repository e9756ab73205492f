//! Autoencoder loss network.
//!
//! Same encoder family as the U-Net but without skips, squeezed through a
//! dense bottleneck so reconstruction must pass through a low-dimensional
//! code. The outputs of the first `depth` max-pooling layers are the feature
//! taps consumed by the perceptual and style losses; gradients flow through
//! the taps into the *input*, never into the (frozen) loss-network weights.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::NamedParam;

use super::ops::{
    maxpool2x2, maxpool2x2_backward, relu, relu_backward, upsample_nearest2x,
    upsample_nearest2x_backward, Conv2d, Linear,
};
use super::tensor::Tensor;

/// Architecture of a [`LossNet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossNetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    /// Dense code size between encoder and decoder.
    pub bottleneck_dim: usize,
    /// Input spatial dims (fixed by the dense bottleneck).
    pub in_h: usize,
    pub in_w: usize,
}

impl LossNetConfig {
    pub fn new(in_h: usize, in_w: usize) -> Self {
        Self { depth: 4, base_channels: 8, in_channels: 1, bottleneck_dim: 16, in_h, in_w }
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    /// Channels of pooled stage `p` (0-based).
    pub fn tap_channels(&self, p: usize) -> usize {
        self.channels(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.bottleneck_dim == 0 {
            return Err(Error::InvalidArgument("loss net dimensions must be positive".into()));
        }
        let div = 1usize << self.depth;
        if self.in_h % div != 0 || self.in_w % div != 0 || self.in_h / div == 0 || self.in_w / div == 0 {
            return Err(Error::InvalidArgument(format!(
                "loss net input {}x{} incompatible with depth {}",
                self.in_h, self.in_w, self.depth
            )));
        }
        Ok(())
    }

    fn flat_dim(&self) -> usize {
        let div = 1usize << self.depth;
        self.channels(self.depth - 1) * (self.in_h / div) * (self.in_w / div)
    }
}

#[derive(Debug, Clone)]
struct Block {
    a: Conv2d,
    b: Conv2d,
}

struct BlockCache {
    x: Tensor,
    za: Tensor,
    ya: Tensor,
    zb: Tensor,
}

impl Block {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { a: Conv2d::zeros(c_in, c_out, 3), b: Conv2d::zeros(c_out, c_out, 3) }
    }

    fn init(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { a: Conv2d::init_he(c_in, c_out, 3, rng), b: Conv2d::init_he(c_out, c_out, 3, rng) }
    }

    fn forward(&self, x: Tensor) -> Result<(Tensor, BlockCache)> {
        let za = self.a.forward(&x)?;
        let ya = relu(&za);
        let zb = self.b.forward(&ya)?;
        let out = relu(&zb);
        Ok((out, BlockCache { x, za, ya, zb }))
    }

    /// Input gradient plus parameter gradients (w_a, b_a, w_b, b_b).
    fn backward(&self, cache: &BlockCache, gy: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let gzb = relu_backward(&cache.zb, gy);
        let (gya, gb) = self.b.backward(&cache.ya, &gzb)?;
        let gza = relu_backward(&cache.za, &gya);
        let (gx, ga) = self.a.backward(&cache.x, &gza)?;
        Ok((gx, vec![ga.gw.data, ga.gb, gb.gw.data, gb.gb]))
    }

    /// Input gradient only (frozen weights).
    fn backward_input(&self, cache: &BlockCache, gy: &Tensor) -> Result<Tensor> {
        let gzb = relu_backward(&cache.zb, gy);
        let (gya, _) = self.b.backward(&cache.ya, &gzb)?;
        let gza = relu_backward(&cache.za, &gya);
        let (gx, _) = self.a.backward(&cache.x, &gza)?;
        Ok(gx)
    }
}

/// Feature taps `psi_1..psi_P` captured after each max-pool of the encoder.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    pub psi: Vec<Tensor>,
}

impl FeatureStack {
    pub fn depth(&self) -> usize {
        self.psi.len()
    }
}

/// Encoder activations needed to push tap gradients back to the input.
pub struct FeatureCache {
    blocks: Vec<BlockCache>,
    pre_pool_shapes: Vec<(usize, usize, usize, usize)>,
    pool_args: Vec<Vec<u8>>,
}

/// Full-autoencoder activations for training.
pub struct LossNetCache {
    features: FeatureCache,
    enc_out: Tensor,
    z_in: Tensor,
    code_pre: Tensor,
    code: Tensor,
    z_out_pre: Tensor,
    z_out: Tensor,
    dec: Vec<BlockCache>,
    head_in: Tensor,
}

/// The autoencoder parameters.
#[derive(Debug, Clone)]
pub struct LossNet {
    pub cfg: LossNetConfig,
    enc: Vec<Block>,
    fc_in: Linear,
    fc_out: Linear,
    dec: Vec<Block>,
    head: Conv2d,
}

impl LossNet {
    fn build(
        cfg: LossNetConfig,
        mut make: impl FnMut(usize, usize) -> Block,
        mut lin: impl FnMut(usize, usize) -> Linear,
        mut head: impl FnMut(usize, usize) -> Conv2d,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::new();
        for d in 0..cfg.depth {
            let c_in = if d == 0 { cfg.in_channels } else { cfg.channels(d - 1) };
            enc.push(make(c_in, cfg.channels(d)));
        }
        let f = cfg.flat_dim();
        let fc_in = lin(f, cfg.bottleneck_dim);
        let fc_out = lin(cfg.bottleneck_dim, f);
        let mut dec = Vec::new();
        for s in (0..cfg.depth).rev() {
            let c_out = if s > 0 { cfg.channels(s - 1) } else { cfg.channels(0) };
            dec.push(make(cfg.channels(s), c_out));
        }
        let head = head(cfg.channels(0), cfg.in_channels);
        Ok(Self { cfg, enc, fc_in, fc_out, dec, head })
    }

    pub fn zeros(cfg: LossNetConfig) -> Result<Self> {
        Self::build(cfg, Block::zeros, Linear::zeros, |i, o| Conv2d::zeros(i, o, 1))
    }

    pub fn init(cfg: LossNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::build(
            cfg,
            |i, o| Block::init(i, o, rng),
            |i, o| Linear::init_he(i, o, rng),
            |i, o| Conv2d::init_he(i, o, 1, rng),
        )
    }

    /// Dense code size (the bottleneck activation vector length).
    pub fn bottleneck_dim(&self) -> usize {
        self.fc_in.d_out()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != self.cfg.in_channels || x.h != self.cfg.in_h || x.w != self.cfg.in_w {
            return Err(Error::ShapeMismatch(format!(
                "loss net expects (_, {}, {}, {}), got {:?}",
                self.cfg.in_channels,
                self.cfg.in_h,
                self.cfg.in_w,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Encoder-only pass: the feature taps and the cache to backpropagate
    /// through them.
    pub fn features_cached(&self, x: &Tensor) -> Result<(FeatureStack, FeatureCache)> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut psi = Vec::with_capacity(self.cfg.depth);
        let mut blocks = Vec::with_capacity(self.cfg.depth);
        let mut shapes = Vec::with_capacity(self.cfg.depth);
        let mut pool_args = Vec::with_capacity(self.cfg.depth);
        for block in &self.enc {
            let (out, cache) = block.forward(cur)?;
            shapes.push(out.shape());
            let (pooled, arg) = maxpool2x2(&out)?;
            blocks.push(cache);
            pool_args.push(arg);
            psi.push(pooled.clone());
            cur = pooled;
        }
        Ok((FeatureStack { psi }, FeatureCache { blocks, pre_pool_shapes: shapes, pool_args }))
    }

    pub fn features(&self, x: &Tensor) -> Result<FeatureStack> {
        Ok(self.features_cached(x)?.0)
    }

    /// Push per-tap gradients back to the input. Weights stay untouched.
    pub fn features_backward(&self, cache: &FeatureCache, tap_grads: &[Tensor]) -> Result<Tensor> {
        if tap_grads.len() != self.cfg.depth {
            return Err(Error::ShapeMismatch(format!(
                "{} tap gradients for depth {}",
                tap_grads.len(),
                self.cfg.depth
            )));
        }
        let mut acc = tap_grads[self.cfg.depth - 1].clone();
        for d in (0..self.cfg.depth).rev() {
            let g_stage = maxpool2x2_backward(cache.pre_pool_shapes[d], &cache.pool_args[d], &acc);
            let gin = self.enc[d].backward_input(&cache.blocks[d], &g_stage)?;
            if d > 0 {
                acc = tap_grads[d - 1].clone();
                for (a, b) in acc.data.iter_mut().zip(&gin.data) {
                    *a += b;
                }
            } else {
                return Ok(gin);
            }
        }
        unreachable!()
    }

    /// Full autoencoder forward.
    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, LossNetCache)> {
        let (stack, features) = self.features_cached(x)?;
        let enc_out = stack.psi.last().expect("depth >= 1").clone();
        let z_in = enc_out.clone();
        let code_pre = self.fc_in.forward(&z_in)?;
        let code = relu(&code_pre);
        let z_out_pre = self.fc_out.forward(&code)?;
        let z_out_flat = relu(&z_out_pre);
        let (_, _, eh, ew) = enc_out.shape();
        let z_out = Tensor::from_vec(x.n, enc_out.c, eh, ew, z_out_flat.data.clone())?;

        let mut cur = z_out.clone();
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for block in &self.dec {
            let up = upsample_nearest2x(&cur);
            let (out, cache) = block.forward(up)?;
            dec_caches.push(cache);
            cur = out;
        }
        let y = self.head.forward(&cur)?;
        y.debug_assert_finite("loss net forward");
        Ok((
            y,
            LossNetCache {
                features,
                enc_out,
                z_in,
                code_pre,
                code,
                z_out_pre,
                z_out,
                dec: dec_caches,
                head_in: cur,
            },
        ))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Full backward: parameter gradients in [`LossNet::param_values_mut`]
    /// order, plus the input gradient.
    pub fn backward(&self, cache: &LossNetCache, gy: &Tensor) -> Result<(Tensor, Vec<Vec<f64>>)> {
        let (mut gcur, ghead) = self.head.backward(&cache.head_in, gy)?;
        let head_grads = vec![ghead.gw.data, ghead.gb];

        let mut dec_grads: Vec<Vec<Vec<f64>>> = Vec::new();
        for (i, block) in self.dec.iter().enumerate().rev() {
            let (gup, pair) = block.backward(&cache.dec[i], &gcur)?;
            dec_grads.push(pair);
            gcur = upsample_nearest2x_backward(&gup);
        }
        dec_grads.reverse();

        // gcur is now the gradient at z_out (N, C, eh, ew) == flat layout.
        let g_flat = Tensor::from_vec(gcur.n, self.cfg.flat_dim(), 1, 1, gcur.data.clone())?;
        let gz_pre = relu_backward(&cache.z_out_pre, &g_flat)?;
        let (gcode, g_fc_out) = self.fc_out.backward(&cache.code, &gz_pre)?;
        let gcode_pre = relu_backward(&cache.code_pre, &gcode)?;
        let (g_enc_flat, g_fc_in) = self.fc_in.backward(&cache.z_in, &gcode_pre)?;
        let g_enc = Tensor::from_vec(
            cache.enc_out.n,
            cache.enc_out.c,
            cache.enc_out.h,
            cache.enc_out.w,
            g_enc_flat.data.clone(),
        )?;

        // Encoder backward with parameter gradients.
        let mut acc = g_enc;
        let mut enc_grads: Vec<Vec<Vec<f64>>> = Vec::new();
        let mut gx = None;
        for d in (0..self.cfg.depth).rev() {
            let g_stage = maxpool2x2_backward(
                cache.features.pre_pool_shapes[d],
                &cache.features.pool_args[d],
                &acc,
            );
            let (gin, pair) = self.enc[d].backward(&cache.features.blocks[d], &g_stage)?;
            enc_grads.push(pair);
            if d > 0 {
                acc = gin;
            } else {
                gx = Some(gin);
            }
        }
        enc_grads.reverse();

        let mut flat: Vec<Vec<f64>> = Vec::new();
        for g in enc_grads {
            flat.extend(g);
        }
        flat.push(g_fc_in.gw.data);
        flat.push(g_fc_in.gb);
        flat.push(g_fc_out.gw.data);
        flat.push(g_fc_out.gb);
        for g in dec_grads {
            flat.extend(g);
        }
        flat.extend(head_grads);
        Ok((gx.expect("depth >= 1"), flat))
    }

    /// Parameter buffers in backward-gradient order.
    pub fn param_values_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::new();
        for b in &mut self.enc {
            v.push(&mut b.a.w.data);
            v.push(&mut b.a.b);
            v.push(&mut b.b.w.data);
            v.push(&mut b.b.b);
        }
        v.push(&mut self.fc_in.w.data);
        v.push(&mut self.fc_in.b);
        v.push(&mut self.fc_out.w.data);
        v.push(&mut self.fc_out.b);
        for b in &mut self.dec {
            v.push(&mut b.a.w.data);
            v.push(&mut b.a.b);
            v.push(&mut b.b.w.data);
            v.push(&mut b.b.b);
        }
        v.push(&mut self.head.w.data);
        v.push(&mut self.head.b);
        v
    }

    pub fn named_params(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        let conv_entry = |name: String, c: &Conv2d, out: &mut Vec<NamedParam>| {
            out.push(NamedParam {
                name: format!("{name}.w"),
                shape: vec![c.w.n, c.w.c, c.w.h, c.w.w],
                data: c.w.data.clone(),
            });
            out.push(NamedParam { name: format!("{name}.b"), shape: vec![c.b.len()], data: c.b.clone() });
        };
        for (d, b) in self.enc.iter().enumerate() {
            conv_entry(format!("enc{d}.a"), &b.a, &mut out);
            conv_entry(format!("enc{d}.b"), &b.b, &mut out);
        }
        for (name, l) in [("fc_in", &self.fc_in), ("fc_out", &self.fc_out)] {
            out.push(NamedParam {
                name: format!("{name}.w"),
                shape: vec![l.w.n, l.w.c],
                data: l.w.data.clone(),
            });
            out.push(NamedParam { name: format!("{name}.b"), shape: vec![l.b.len()], data: l.b.clone() });
        }
        for (d, b) in self.dec.iter().enumerate() {
            conv_entry(format!("dec{d}.a"), &b.a, &mut out);
            conv_entry(format!("dec{d}.b"), &b.b, &mut out);
        }
        conv_entry("head".into(), &self.head, &mut out);
        out
    }

    pub fn load_params(&mut self, params: &[NamedParam]) -> Result<()> {
        let by_name: std::collections::HashMap<&str, &NamedParam> =
            params.iter().map(|p| (p.name.as_str(), p)).collect();
        let expected = self.named_params();
        for spec in &expected {
            let Some(p) = by_name.get(spec.name.as_str()) else {
                return Err(Error::State(format!("checkpoint missing parameter {}", spec.name)));
            };
            if p.shape != spec.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {}: checkpoint {:?} vs model {:?}",
                    spec.name, p.shape, spec.shape
                )));
            }
        }
        let names: Vec<String> = expected.iter().map(|p| p.name.clone()).collect();
        for (buf, name) in self.param_values_mut().into_iter().zip(names) {
            buf.copy_from_slice(&by_name[name.as_str()].data);
        }
        Ok(())
    }

    pub fn config_text(&self) -> String {
        format!(
            "arch=lossnet\ndepth={}\nbase_channels={}\nin_channels={}\nbottleneck_dim={}\nin_h={}\nin_w={}\n",
            self.cfg.depth,
            self.cfg.base_channels,
            self.cfg.in_channels,
            self.cfg.bottleneck_dim,
            self.cfg.in_h,
            self.cfg.in_w
        )
    }
}

// relu_backward on a (N, F, 1, 1) tensor needs a Result-free wrapper with
// matching shapes; keep the signature local to this module.
fn relu_backward(pre: &Tensor, gy: &Tensor) -> Result<Tensor> {
    if pre.numel() != gy.numel() {
        return Err(Error::ShapeMismatch("relu backward".into()));
    }
    let mut gx = gy.clone();
    for (g, &v) in gx.data.iter_mut().zip(&pre.data) {
        if v <= 0.0 {
            *g = 0.0;
        }
    }
    Ok(gx)
}
