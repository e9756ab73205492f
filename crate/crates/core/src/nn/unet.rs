//! Encoder-decoder network with skip connections.
//!
//! Encoder: `depth` stages of conv-relu-conv-relu-maxpool, channel width
//! doubling per stage from `base_channels`. Bottleneck: two convs. Decoder:
//! nearest-neighbor upsample, skip concat, two convs per stage. Head: 1x1
//! conv, linear (the segmentation path applies a per-pixel softmax on top).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::NamedParam;

use super::ops::{
    concat_channels, concat_channels_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, softmax_channels, upsample_nearest2x, upsample_nearest2x_backward, Conv2d,
};
use super::tensor::Tensor;

/// Architecture of a [`UNet`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UNetConfig {
    /// Number of down/up stages; input dims must divide by `2^depth`.
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Encoder-to-decoder skip connections.
    pub skips: bool,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self { depth: 4, base_channels: 8, in_channels: 1, out_channels: 1, skips: true }
    }
}

impl UNetConfig {
    pub fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument("all UNet dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn check_input(&self, x: &Tensor) -> Result<()> {
        let div = 1usize << self.depth;
        if x.c != self.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "expected {} input channels, got {}",
                self.in_channels, x.c
            )));
        }
        if x.h % div != 0 || x.w % div != 0 {
            return Err(Error::ShapeMismatch(format!(
                "input {}x{} not divisible by 2^{}",
                x.h, x.w, self.depth
            )));
        }
        Ok(())
    }
}

/// One conv-relu / conv-relu block.
#[derive(Debug, Clone)]
pub struct ConvBlock {
    pub a: Conv2d,
    pub b: Conv2d,
}

impl ConvBlock {
    fn zeros(c_in: usize, c_out: usize) -> Self {
        Self { a: Conv2d::zeros(c_in, c_out, 3), b: Conv2d::zeros(c_out, c_out, 3) }
    }

    fn init(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        Self { a: Conv2d::init_he(c_in, c_out, 3, rng), b: Conv2d::init_he(c_out, c_out, 3, rng) }
    }

    /// Returns the output plus the cached pre-activation inputs.
    fn forward(&self, x: Tensor) -> Result<(Tensor, BlockCache)> {
        let za = self.a.forward(&x)?;
        let ya = relu(&za);
        let zb = self.b.forward(&ya)?;
        let out = relu(&zb);
        Ok((out, BlockCache { x, za, ya, zb }))
    }

    fn backward(&self, cache: &BlockCache, gy: &Tensor) -> Result<(Tensor, [ConvGradPair; 2])> {
        let gzb = relu_backward(&cache.zb, gy);
        let (gya, gb) = self.b.backward(&cache.ya, &gzb)?;
        let gza = relu_backward(&cache.za, &gya);
        let (gx, ga) = self.a.backward(&cache.x, &gza)?;
        Ok((gx, [ConvGradPair { gw: ga.gw.data, gb: ga.gb }, ConvGradPair { gw: gb.gw.data, gb: gb.gb }]))
    }
}

struct BlockCache {
    x: Tensor,
    za: Tensor,
    ya: Tensor,
    zb: Tensor,
}

/// Gradient of one convolution, flattened to match the parameter order.
pub struct ConvGradPair {
    pub gw: Vec<f64>,
    pub gb: Vec<f64>,
}

/// The network parameters.
#[derive(Debug, Clone)]
pub struct UNet {
    pub cfg: UNetConfig,
    enc: Vec<ConvBlock>,
    bott: ConvBlock,
    dec: Vec<ConvBlock>,
    head: Conv2d,
}

/// All intermediate activations of one forward pass.
pub struct UNetCache {
    enc: Vec<BlockCache>,
    skips_shape: Vec<(usize, usize, usize, usize)>,
    pool_args: Vec<Vec<u8>>,
    bott: BlockCache,
    dec: Vec<(Tensor, BlockCache)>, // (input to the block after concat is inside cache.x) upsample input
    head_in: Tensor,
}

/// Gradients for every parameter, in [`UNet::param_values`] order.
pub struct UNetGrads {
    pub flat: Vec<Vec<f64>>,
}

impl UNet {
    fn build(cfg: UNetConfig, mut make: impl FnMut(usize, usize) -> ConvBlock, mut head: impl FnMut(usize, usize) -> Conv2d) -> Result<Self> {
        cfg.validate()?;
        let mut enc = Vec::new();
        for d in 0..cfg.depth {
            let c_in = if d == 0 { cfg.in_channels } else { cfg.channels(d - 1) };
            enc.push(make(c_in, cfg.channels(d)));
        }
        let bott = make(cfg.channels(cfg.depth - 1), cfg.channels(cfg.depth));
        let mut dec = Vec::new();
        for d in (0..cfg.depth).rev() {
            let from_below = cfg.channels(d + 1);
            let c_in = if cfg.skips { from_below + cfg.channels(d) } else { from_below };
            dec.push(make(c_in, cfg.channels(d)));
        }
        let head = head(cfg.channels(0), cfg.out_channels);
        Ok(Self { cfg, enc, bott, dec, head })
    }

    pub fn zeros(cfg: UNetConfig) -> Result<Self> {
        Self::build(cfg, |i, o| ConvBlock::zeros(i, o), |i, o| Conv2d::zeros(i, o, 1))
    }

    /// He-uniform weights, zero biases, reproducible from the RNG state.
    pub fn init(cfg: UNetConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        Self::build(cfg, |i, o| ConvBlock::init(i, o, rng), |i, o| Conv2d::init_he(i, o, 1, rng))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Forward pass for the segmentation head: per-pixel class probabilities.
    pub fn forward_probs(&self, x: &Tensor) -> Result<Tensor> {
        Ok(softmax_channels(&self.forward(x)?))
    }

    pub fn forward_cached(&self, x: &Tensor) -> Result<(Tensor, UNetCache)> {
        self.cfg.check_input(x)?;
        let mut cur = x.clone();
        let mut enc_caches = Vec::with_capacity(self.cfg.depth);
        let mut skips = Vec::with_capacity(self.cfg.depth);
        let mut skips_shape = Vec::with_capacity(self.cfg.depth);
        let mut pool_args = Vec::with_capacity(self.cfg.depth);
        for block in &self.enc {
            let (out, cache) = block.forward(cur)?;
            skips_shape.push(out.shape());
            let (pooled, arg) = maxpool2x2(&out)?;
            skips.push(out);
            enc_caches.push(cache);
            pool_args.push(arg);
            cur = pooled;
        }
        let (mut cur, bott_cache) = self.bott.forward(cur)?;
        let mut dec_caches = Vec::with_capacity(self.cfg.depth);
        for (i, block) in self.dec.iter().enumerate() {
            let up_in = cur;
            let up = upsample_nearest2x(&up_in);
            let block_in = if self.cfg.skips {
                let skip = &skips[self.cfg.depth - 1 - i];
                concat_channels(&up, skip)?
            } else {
                up
            };
            let (out, cache) = block.forward(block_in)?;
            dec_caches.push((up_in, cache));
            cur = out;
        }
        let y = self.head.forward(&cur)?;
        y.debug_assert_finite("unet forward");
        Ok((
            y,
            UNetCache {
                enc: enc_caches,
                skips_shape,
                pool_args,
                bott: bott_cache,
                dec: dec_caches,
                head_in: cur,
            },
        ))
    }

    /// Backward pass: gradient w.r.t. the input plus all parameter
    /// gradients (summed over the batch).
    pub fn backward(&self, cache: &UNetCache, gy: &Tensor) -> Result<(Tensor, UNetGrads)> {
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::new(); // per layer group

        let (mut gcur, ghead) = self.head.backward(&cache.head_in, gy)?;
        let head_grads = vec![ghead.gw.data, ghead.gb];

        // Decoder, in reverse.
        let mut skip_grads: Vec<Option<Tensor>> = vec![None; self.cfg.depth];
        let mut dec_grads: Vec<Vec<Vec<f64>>> = Vec::new();
        for (i, block) in self.dec.iter().enumerate().rev() {
            let (up_in, block_cache) = &cache.dec[i];
            let (gin, pair) = block.backward(block_cache, &gcur)?;
            dec_grads.push(vec![
                pair[0].gw.clone(),
                pair[0].gb.clone(),
                pair[1].gw.clone(),
                pair[1].gb.clone(),
            ]);
            let gup = if self.cfg.skips {
                let up_c = up_in.c;
                let (gup, gskip) = concat_channels_backward(&gin, up_c);
                skip_grads[self.cfg.depth - 1 - i] = Some(gskip);
                gup
            } else {
                gin
            };
            gcur = upsample_nearest2x_backward(&gup);
        }
        dec_grads.reverse();

        let (mut gcur, bott_pair) = self.bott.backward(&cache.bott, &gcur)?;
        let bott_grads = vec![
            bott_pair[0].gw.clone(),
            bott_pair[0].gb.clone(),
            bott_pair[1].gw.clone(),
            bott_pair[1].gb.clone(),
        ];

        let mut enc_grads: Vec<Vec<Vec<f64>>> = Vec::new();
        for (d, block) in self.enc.iter().enumerate().rev() {
            let mut gout = maxpool2x2_backward(cache.skips_shape[d], &cache.pool_args[d], &gcur);
            if let Some(gskip) = &skip_grads[d] {
                for (a, b) in gout.data.iter_mut().zip(&gskip.data) {
                    *a += b;
                }
            }
            let (gin, pair) = block.backward(&cache.enc[d], &gout)?;
            enc_grads.push(vec![
                pair[0].gw.clone(),
                pair[0].gb.clone(),
                pair[1].gw.clone(),
                pair[1].gb.clone(),
            ]);
            gcur = gin;
        }
        enc_grads.reverse();

        for g in enc_grads {
            grads.push(g);
        }
        grads.push(bott_grads);
        for g in dec_grads {
            grads.push(g);
        }
        grads.push(head_grads);

        gcur.debug_assert_finite("unet backward");
        Ok((gcur, UNetGrads { flat: grads.into_iter().flatten().collect() }))
    }

    fn blocks(&self) -> Vec<(String, &ConvBlock)> {
        let mut v = Vec::new();
        for (d, b) in self.enc.iter().enumerate() {
            v.push((format!("enc{d}"), b));
        }
        v.push(("bott".into(), &self.bott));
        for (d, b) in self.dec.iter().enumerate() {
            v.push((format!("dec{d}"), b));
        }
        v
    }

    /// Parameter buffers in a fixed order (matching [`UNet::backward`]'s
    /// gradient order): for each block a.w, a.b, b.w, b.b, then head.w,
    /// head.b.
    pub fn param_values_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut v: Vec<&mut Vec<f64>> = Vec::new();
        for block in self.enc.iter_mut().chain(std::iter::once(&mut self.bott)).chain(self.dec.iter_mut()) {
            v.push(&mut block.a.w.data);
            v.push(&mut block.a.b);
            v.push(&mut block.b.w.data);
            v.push(&mut block.b.b);
        }
        v.push(&mut self.head.w.data);
        v.push(&mut self.head.b);
        v
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|p| p.data.len()).sum()
    }

    /// Named parameter snapshot for checkpoints.
    pub fn named_params(&self) -> Vec<NamedParam> {
        let mut out = Vec::new();
        for (name, block) in self.blocks() {
            for (suffix, conv) in [("a", &block.a), ("b", &block.b)] {
                out.push(NamedParam {
                    name: format!("{name}.{suffix}.w"),
                    shape: vec![conv.w.n, conv.w.c, conv.w.h, conv.w.w],
                    data: conv.w.data.clone(),
                });
                out.push(NamedParam {
                    name: format!("{name}.{suffix}.b"),
                    shape: vec![conv.b.len()],
                    data: conv.b.clone(),
                });
            }
        }
        out.push(NamedParam {
            name: "head.w".into(),
            shape: vec![self.head.w.n, self.head.w.c, self.head.w.h, self.head.w.w],
            data: self.head.w.data.clone(),
        });
        out.push(NamedParam { name: "head.b".into(), shape: vec![self.head.b.len()], data: self.head.b.clone() });
        out
    }

    /// Load parameters saved by [`UNet::named_params`] into a matching
    /// architecture.
    pub fn load_params(&mut self, params: &[NamedParam]) -> Result<()> {
        let mut map: std::collections::HashMap<&str, &NamedParam> =
            params.iter().map(|p| (p.name.as_str(), p)).collect();
        let expected = self.named_params();
        for spec in &expected {
            let Some(p) = map.remove(spec.name.as_str()) else {
                return Err(Error::State(format!("checkpoint missing parameter {}", spec.name)));
            };
            if p.shape != spec.shape {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {}: checkpoint {:?} vs model {:?}",
                    spec.name, p.shape, spec.shape
                )));
            }
        }
        if !map.is_empty() {
            let extra: Vec<&str> = map.keys().copied().collect();
            return Err(Error::State(format!("checkpoint has unknown parameters {extra:?}")));
        }
        let by_name: std::collections::HashMap<&str, &NamedParam> =
            params.iter().map(|p| (p.name.as_str(), p)).collect();
        let names: Vec<String> = expected.iter().map(|p| p.name.clone()).collect();
        for (buf, name) in self.param_values_mut().into_iter().zip(names) {
            buf.copy_from_slice(&by_name[name.as_str()].data);
        }
        Ok(())
    }

    /// Text summary echoed into checkpoint headers.
    pub fn config_text(&self) -> String {
        format!(
            "arch=unet\ndepth={}\nbase_channels={}\nin_channels={}\nout_channels={}\nskips={}\n",
            self.cfg.depth, self.cfg.base_channels, self.cfg.in_channels, self.cfg.out_channels, self.cfg.skips
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;

    fn small_cfg() -> UNetConfig {
        UNetConfig { depth: 2, base_channels: 2, in_channels: 1, out_channels: 1, skips: true }
    }

    #[test]
    fn zero_initialized_head_gives_constant_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = UNet::init(small_cfg(), &mut rng).unwrap();
        net.head.w.data.fill(0.0);
        net.head.b[0] = 0.75;
        let x = Tensor::from_vec(1, 1, 8, 8, (0..64).map(|i| i as f64 / 64.0).collect()).unwrap();
        let y = net.forward(&x).unwrap();
        assert!(y.data.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn output_shape_matches_input_spatial_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = UNet::init(
            UNetConfig { depth: 3, base_channels: 2, in_channels: 1, out_channels: 3, skips: true },
            &mut rng,
        )
        .unwrap();
        for (h, w) in [(8, 8), (16, 8), (32, 24)] {
            let x = Tensor::zeros(2, 1, h, w);
            let y = net.forward(&x).unwrap();
            assert_eq!(y.shape(), (2, 3, h, w));
        }
    }

    #[test]
    fn rejects_non_divisible_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = UNet::init(small_cfg(), &mut rng).unwrap();
        assert!(net.forward(&Tensor::zeros(1, 1, 6, 8)).is_err());
    }

    #[test]
    fn init_is_reproducible_bitwise() {
        let a = UNet::init(small_cfg(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = UNet::init(small_cfg(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let pa = a.named_params();
        let pb = b.named_params();
        assert_eq!(pa, pb);
    }

    #[test]
    fn params_round_trip_through_named_list() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let src = UNet::init(small_cfg(), &mut rng).unwrap();
        let mut dst = UNet::zeros(small_cfg()).unwrap();
        dst.load_params(&src.named_params()).unwrap();
        assert_eq!(dst.named_params(), src.named_params());
    }

    #[test]
    fn full_network_gradient_check() {
        // Full-architecture gradient check on a 16x16 input; every
        // parameter against central finite differences.
        let cfg = UNetConfig { depth: 4, base_channels: 2, in_channels: 1, out_channels: 1, skips: true };
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut net = UNet::init(cfg, &mut rng).unwrap();
        let x = Tensor::from_vec(1, 1, 16, 16, (0..256).map(|_| rng.random_range(0.05..1.0)).collect()).unwrap();
        let proj: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();

        let objective = |net: &UNet, x: &Tensor| -> f64 {
            let y = net.forward(x).unwrap();
            y.data.iter().zip(&proj).map(|(a, b)| a * b).sum()
        };

        let (y, cache) = net.forward_cached(&x).unwrap();
        let gy = Tensor::from_vec(1, 1, 16, 16, proj.clone()).unwrap();
        let (gx, grads) = net.backward(&cache, &gy).unwrap();
        assert_eq!(y.shape(), (1, 1, 16, 16));

        // Input gradient.
        let h = 1e-5;
        let mut fd_gx = vec![0.0; x.numel()];
        let mut xp = x.clone();
        for i in 0..x.numel() {
            let orig = xp.data[i];
            xp.data[i] = orig + h;
            let fp = objective(&net, &xp);
            xp.data[i] = orig - h;
            let fm = objective(&net, &xp);
            xp.data[i] = orig;
            fd_gx[i] = (fp - fm) / (2.0 * h);
        }
        let rel = |a: &[f64], b: &[f64]| -> f64 {
            let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
            let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt()
                + b.iter().map(|x| x * x).sum::<f64>().sqrt()
                + 1e-300;
            num / den
        };
        assert!(rel(&gx.data, &fd_gx) < 1e-6, "input grad rel err {}", rel(&gx.data, &fd_gx));

        // A sampled subset of parameters per buffer (full FD in the
        // acceptance suite).
        let n_bufs = grads.flat.len();
        for bi in 0..n_bufs {
            let len = grads.flat[bi].len();
            let stride = (len / 5).max(1);
            let mut fd_vals = Vec::new();
            let mut an_vals = Vec::new();
            for pi in (0..len).step_by(stride) {
                {
                    let mut bufs = net.param_values_mut();
                    let orig = bufs[bi][pi];
                    bufs[bi][pi] = orig + h;
                }
                let fp = objective(&net, &x);
                {
                    let mut bufs = net.param_values_mut();
                    let orig = bufs[bi][pi];
                    bufs[bi][pi] = orig - 2.0 * h;
                }
                let fm = objective(&net, &x);
                {
                    let mut bufs = net.param_values_mut();
                    bufs[bi][pi] += h;
                }
                fd_vals.push((fp - fm) / (2.0 * h));
                an_vals.push(grads.flat[bi][pi]);
            }
            let r = rel(&an_vals, &fd_vals);
            assert!(r < 1e-6, "param buffer {bi} rel err {r}");
        }
    }
}
