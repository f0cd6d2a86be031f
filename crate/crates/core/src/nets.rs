//! The conditional generator and two-headed discriminator.
//!
//! The generator takes an image plus a target one-hot label, tiled to a
//! spatial map and concatenated on the channel axis at the input, and
//! produces a same-size image through a downsample / residual / upsample
//! stack with instance norm. The discriminator is a strided conv trunk
//! with two heads: an unbounded realism score map (no sigmoid, it is a
//! Wasserstein critic) and per-domain classification logits.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Binding, Graph, ParamSet, Scalar, Tensor, Var};

pub const LEAKY_SLOPE: f64 = 0.01;
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub base_width: usize,
    pub n_downsample: usize,
    pub n_resblocks: usize,
    pub n_domains: usize,
}

impl GeneratorConfig {
    pub fn with_domains(n_domains: usize) -> Self {
        GeneratorConfig {
            image_size: 32,
            image_channels: 3,
            base_width: 32,
            n_downsample: 2,
            n_resblocks: 3,
            n_domains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::invalid(format!(
                "generator needs at least 2 domains, got {}",
                self.n_domains
            )));
        }
        let factor = 1usize << self.n_downsample;
        if self.image_size == 0 || self.image_size % factor != 0 {
            return Err(Error::invalid(format!(
                "image_size {} must be divisible by 2^n_downsample = {factor}",
                self.image_size
            )));
        }
        if self.image_size / factor < 2 {
            return Err(Error::invalid("bottleneck collapses below 2x2"));
        }
        if self.base_width == 0 || self.image_channels == 0 {
            return Err(Error::invalid("zero width or channel count"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub base_width: usize,
    pub n_layers: usize,
    pub n_domains: usize,
}

impl DiscriminatorConfig {
    pub fn with_domains(n_domains: usize) -> Self {
        DiscriminatorConfig {
            image_size: 32,
            image_channels: 3,
            base_width: 32,
            n_layers: 4,
            n_domains,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_domains < 2 {
            return Err(Error::invalid("discriminator needs at least 2 domains"));
        }
        let factor = 1usize << self.n_layers;
        if self.image_size == 0 || self.image_size % factor != 0 || self.image_size / factor < 1 {
            return Err(Error::invalid(format!(
                "image_size {} must leave a src map of at least 1x1 after {} stride-2 layers",
                self.image_size, self.n_layers
            )));
        }
        if self.base_width == 0 || self.image_channels == 0 {
            return Err(Error::invalid("zero width or channel count"));
        }
        Ok(())
    }

    /// Spatial side of the final feature map and src map.
    pub fn final_map(&self) -> usize {
        self.image_size >> self.n_layers
    }
}

fn fill_normal<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<T> {
    let dist = Normal::new(0.0f64, std).expect("valid std");
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::from_f64(dist.sample(rng));
    }
    t
}

/// Scaled-normal weight init, std = gain / sqrt(fan_in); biases zero.
fn init_conv<T: Scalar>(
    params: &mut ParamSet<T>,
    rng: &mut ChaCha8Rng,
    name: &str,
    shape: &[usize],
    fan_in: usize,
    gain: f64,
) -> Result<()> {
    let std = gain / (fan_in as f64).sqrt();
    params.insert(name, fill_normal(rng, shape, std))
}

fn init_affine<T: Scalar>(params: &mut ParamSet<T>, c: usize, gamma: &str, beta: &str) -> Result<()> {
    params.insert(gamma, Tensor::full(&[c], T::ONE))?;
    params.insert(beta, Tensor::zeros(&[c]))
}

pub struct Generator {
    cfg: GeneratorConfig,
}

impl Generator {
    pub fn new(cfg: GeneratorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Generator { cfg })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.cfg
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let c = &self.cfg;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let gain = std::f64::consts::SQRT_2;

        let c_in = c.image_channels + c.n_domains;
        init_conv(&mut p, rng, "in.w", &[c.base_width, c_in, 7, 7], c_in * 49, gain)?;
        init_affine(&mut p, c.base_width, "in.ing", "in.inb")?;

        let mut width = c.base_width;
        for i in 0..c.n_downsample {
            let out = width * 2;
            init_conv(&mut p, rng, &format!("down{i}.w"), &[out, width, 4, 4], width * 16, gain)?;
            init_affine(&mut p, out, &format!("down{i}.ing"), &format!("down{i}.inb"))?;
            width = out;
        }
        for j in 0..c.n_resblocks {
            init_conv(&mut p, rng, &format!("res{j}.w1"), &[width, width, 3, 3], width * 9, gain)?;
            init_affine(&mut p, width, &format!("res{j}.in1g"), &format!("res{j}.in1b"))?;
            init_conv(&mut p, rng, &format!("res{j}.w2"), &[width, width, 3, 3], width * 9, gain)?;
            init_affine(&mut p, width, &format!("res{j}.in2g"), &format!("res{j}.in2b"))?;
        }
        for i in 0..c.n_downsample {
            let out = width / 2;
            // transposed conv weight layout is (in, out, kh, kw)
            init_conv(&mut p, rng, &format!("up{i}.w"), &[width, out, 4, 4], width * 16, gain)?;
            init_affine(&mut p, out, &format!("up{i}.ing"), &format!("up{i}.inb"))?;
            width = out;
        }
        init_conv(
            &mut p,
            rng,
            "out.w",
            &[c.image_channels, width, 7, 7],
            width * 49,
            1.0,
        )?;
        p.insert("out.b", Tensor::zeros(&[c.image_channels]))?;
        debug_assert_eq!(width, c.base_width);
        Ok(p)
    }

    fn check_inputs<T: Scalar>(&self, g: &Graph<T>, x: Var, labels: Var) -> Result<()> {
        let c = &self.cfg;
        let xs = g.shape(x);
        let ls = g.shape(labels);
        if xs.len() != 4 || xs[1] != c.image_channels || xs[2] != c.image_size || xs[3] != c.image_size
        {
            return Err(Error::shape(
                "generator input",
                xs,
                &[xs.first().copied().unwrap_or(0), c.image_channels, c.image_size, c.image_size],
            ));
        }
        if ls.len() != 2 || ls[0] != xs[0] || ls[1] != c.n_domains {
            return Err(Error::shape("generator labels", ls, &[xs[0], c.n_domains]));
        }
        Ok(())
    }

    /// x' = G(x, tau): conditioning by tiled-label channel concat, tanh
    /// output in (-1, 1).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        x: Var,
        labels: Var,
    ) -> Result<Var> {
        self.check_inputs(g, x, labels)?;
        let c = &self.cfg;
        let lmap = g.tile_label(labels, c.image_size, c.image_size)?;
        let xc = g.concat_channels(x, lmap)?;

        let mut h = g.conv2d(xc, p.var("in.w")?, None, 1, 3)?;
        h = g.instance_norm(h, p.var("in.ing")?, p.var("in.inb")?, INSTANCE_NORM_EPS)?;
        h = g.relu(h)?;

        for i in 0..c.n_downsample {
            h = g.conv2d(h, p.var(&format!("down{i}.w"))?, None, 2, 1)?;
            h = g.instance_norm(
                h,
                p.var(&format!("down{i}.ing"))?,
                p.var(&format!("down{i}.inb"))?,
                INSTANCE_NORM_EPS,
            )?;
            h = g.relu(h)?;
        }
        for j in 0..c.n_resblocks {
            let mut t = g.conv2d(h, p.var(&format!("res{j}.w1"))?, None, 1, 1)?;
            t = g.instance_norm(
                t,
                p.var(&format!("res{j}.in1g"))?,
                p.var(&format!("res{j}.in1b"))?,
                INSTANCE_NORM_EPS,
            )?;
            t = g.relu(t)?;
            t = g.conv2d(t, p.var(&format!("res{j}.w2"))?, None, 1, 1)?;
            t = g.instance_norm(
                t,
                p.var(&format!("res{j}.in2g"))?,
                p.var(&format!("res{j}.in2b"))?,
                INSTANCE_NORM_EPS,
            )?;
            h = g.add(h, t)?;
        }
        for i in 0..c.n_downsample {
            h = g.conv_transpose2d(h, p.var(&format!("up{i}.w"))?, None, 2, 1)?;
            h = g.instance_norm(
                h,
                p.var(&format!("up{i}.ing"))?,
                p.var(&format!("up{i}.inb"))?,
                INSTANCE_NORM_EPS,
            )?;
            h = g.relu(h)?;
        }
        let y = g.conv2d(h, p.var("out.w")?, Some(p.var("out.b")?), 1, 3)?;
        g.tanh(y)
    }
}

pub struct Discriminator {
    cfg: DiscriminatorConfig,
}

impl Discriminator {
    pub fn new(cfg: DiscriminatorConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Discriminator { cfg })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.cfg
    }

    fn trunk_width(&self, layer: usize) -> usize {
        self.cfg.base_width << layer
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        let c = &self.cfg;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let gain = std::f64::consts::SQRT_2;

        let mut c_in = c.image_channels;
        for i in 0..c.n_layers {
            let c_out = self.trunk_width(i);
            init_conv(&mut p, rng, &format!("l{i}.w"), &[c_out, c_in, 4, 4], c_in * 16, gain)?;
            p.insert(format!("l{i}.b"), Tensor::zeros(&[c_out]))?;
            c_in = c_out;
        }
        init_conv(&mut p, rng, "src.w", &[1, c_in, 3, 3], c_in * 9, 1.0)?;
        p.insert("src.b", Tensor::zeros(&[1]))?;
        let f = c.final_map();
        init_conv(&mut p, rng, "cls.w", &[c.n_domains, c_in, f, f], c_in * f * f, 1.0)?;
        p.insert("cls.b", Tensor::zeros(&[c.n_domains]))?;
        Ok(p)
    }

    /// Shared trunk features for both heads.
    fn trunk<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: Var) -> Result<Var> {
        let c = &self.cfg;
        let xs = g.shape(x);
        if xs.len() != 4 || xs[1] != c.image_channels || xs[2] != c.image_size || xs[3] != c.image_size
        {
            return Err(Error::shape(
                "discriminator input",
                xs,
                &[xs.first().copied().unwrap_or(0), c.image_channels, c.image_size, c.image_size],
            ));
        }
        let mut h = x;
        for i in 0..c.n_layers {
            h = g.conv2d(h, p.var(&format!("l{i}.w"))?, Some(p.var(&format!("l{i}.b"))?), 2, 1)?;
            h = g.leaky_relu(h, LEAKY_SLOPE)?;
        }
        Ok(h)
    }

    /// (src score map, class logits). The critic map is unbounded; the
    /// logits are raw (BCE is applied with logits).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &Binding,
        x: Var,
    ) -> Result<(Var, Var)> {
        let h = self.trunk(g, p, x)?;
        let src = g.conv2d(h, p.var("src.w")?, Some(p.var("src.b")?), 1, 1)?;
        let f = self.cfg.final_map();
        let cls = g.conv2d(h, p.var("cls.w")?, Some(p.var("cls.b")?), f.max(1), 0)?;
        let n = g.shape(x)[0];
        let cls = g.reshape(cls, &[n, self.cfg.n_domains])?;
        Ok((src, cls))
    }

    /// Critic head only; used by the gradient-penalty passes.
    pub fn forward_src<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: Var) -> Result<Var> {
        let h = self.trunk(g, p, x)?;
        g.conv2d(h, p.var("src.w")?, Some(p.var("src.b")?), 1, 1)
    }
}
