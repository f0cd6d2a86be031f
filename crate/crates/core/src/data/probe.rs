//! The independent probe classifier that quantifies translation success.
//!
//! A small conv net trained with softmax cross-entropy on real labeled
//! images. Evaluation refuses to run when the probe cannot classify real
//! held-out data reliably, so the benchmark numbers stay meaningful.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{split, Dataset};
use crate::error::{Error, Result};
use crate::tensor::{AdamState, Binding, Graph, ParamSet, Scalar, Tensor, Var};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub image_size: usize,
    pub image_channels: usize,
    pub n_domains: usize,
    pub base_width: usize,
    pub batch_size: usize,
    pub max_steps: u64,
    pub lr: f64,
    /// Validation accuracy at which training stops early.
    pub stop_accuracy: f64,
    /// Below this held-out accuracy the probe is rejected outright.
    pub trust_threshold: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn for_dataset(ds: &Dataset, seed: u64) -> Self {
        ProbeConfig {
            image_size: ds.image_size(),
            image_channels: ds.channels(),
            n_domains: ds.n_domains(),
            base_width: 16,
            batch_size: 32,
            max_steps: 2000,
            lr: 1e-3,
            stop_accuracy: 0.995,
            trust_threshold: 0.95,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % 8 != 0 || self.image_size < 8 {
            return Err(Error::invalid("probe needs image_size divisible by 8"));
        }
        if self.n_domains < 2 || self.base_width == 0 || self.batch_size == 0 {
            return Err(Error::invalid("degenerate probe config"));
        }
        if !(0.0..=1.0).contains(&self.trust_threshold) {
            return Err(Error::invalid("trust_threshold must lie in [0,1]"));
        }
        Ok(())
    }
}

/// Three stride-2 conv layers and a linear head.
pub struct Probe {
    cfg: ProbeConfig,
}

impl Probe {
    pub fn new(cfg: ProbeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Probe { cfg })
    }

    pub fn config(&self) -> &ProbeConfig {
        &self.cfg
    }

    pub fn init_params<T: Scalar>(&self, seed: u64) -> Result<ParamSet<T>> {
        use rand_distr::{Distribution, Normal};
        let c = &self.cfg;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let widths = [c.base_width, c.base_width * 2, c.base_width * 4];
        let mut c_in = c.image_channels;
        for (i, &c_out) in widths.iter().enumerate() {
            let std = (2.0 / (c_in * 9) as f64).sqrt();
            let dist = Normal::new(0.0, std).expect("std");
            let mut w = Tensor::zeros(&[c_out, c_in, 3, 3]);
            for v in w.data_mut() {
                *v = T::from_f64(dist.sample(rng));
            }
            p.insert(format!("c{i}.w"), w)?;
            p.insert(format!("c{i}.b"), Tensor::zeros(&[c_out]))?;
            c_in = c_out;
        }
        let feat = widths[2] * (c.image_size / 8) * (c.image_size / 8);
        let std = 1.0 / (feat as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("std");
        let mut w = Tensor::zeros(&[c.n_domains, feat]);
        for v in w.data_mut() {
            *v = T::from_f64(dist.sample(rng));
        }
        p.insert("head.w", w)?;
        p.insert("head.b", Tensor::zeros(&[c.n_domains]))?;
        Ok(p)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &Binding, x: Var) -> Result<Var> {
        let c = &self.cfg;
        let xs = g.shape(x);
        if xs.len() != 4 || xs[1] != c.image_channels || xs[2] != c.image_size || xs[3] != c.image_size
        {
            return Err(Error::shape(
                "probe input",
                xs,
                &[xs.first().copied().unwrap_or(0), c.image_channels, c.image_size, c.image_size],
            ));
        }
        let n = xs[0];
        let mut h = x;
        for i in 0..3 {
            h = g.conv2d(h, p.var(&format!("c{i}.w"))?, Some(p.var(&format!("c{i}.b"))?), 2, 1)?;
            h = g.relu(h)?;
        }
        let feat = c.base_width * 4 * (c.image_size / 8) * (c.image_size / 8);
        let flat = g.reshape(h, &[n, feat])?;
        g.linear(flat, p.var("head.w")?, Some(p.var("head.b")?))
    }

    /// Class predictions for an image batch (no gradients).
    pub fn classify(&self, params: &ParamSet<f32>, images: &Tensor<f32>) -> Result<Vec<usize>> {
        let k = self.cfg.n_domains;
        let n = images.shape()[0];
        let mut preds = Vec::with_capacity(n);
        let mut g = Graph::new();
        let b = params.bind(&mut g, false)?;
        let xv = g.input(images.clone())?;
        let logits = self.forward(&mut g, &b, xv)?;
        let data = g.value(logits).data();
        for i in 0..n {
            let row = &data[i * k..(i + 1) * k];
            let mut best = 0;
            for c in 1..k {
                if row[c] > row[best] {
                    best = c;
                }
            }
            preds.push(best);
        }
        Ok(preds)
    }

    /// Fraction of images the probe assigns to `want[i]`, in batches.
    pub fn accuracy_against(
        &self,
        params: &ParamSet<f32>,
        images: &Tensor<f32>,
        want: &[usize],
    ) -> Result<f64> {
        let n = images.shape()[0];
        if want.len() != n {
            return Err(Error::invalid("accuracy_against: label count mismatch"));
        }
        let per = images.numel() / n;
        let chunk = 128usize;
        let mut hit = 0usize;
        let mut at = 0usize;
        while at < n {
            let hi = (at + chunk).min(n);
            let shape = {
                let mut s = images.shape().to_vec();
                s[0] = hi - at;
                s
            };
            let batch = Tensor::new(shape, images.data()[at * per..hi * per].to_vec())?;
            let preds = self.classify(params, &batch)?;
            for (j, p) in preds.iter().enumerate() {
                if *p == want[at + j] {
                    hit += 1;
                }
            }
            at = hi;
        }
        Ok(hit as f64 / n as f64)
    }

    /// Accuracy against a dataset's own labels.
    pub fn accuracy(&self, params: &ParamSet<f32>, ds: &Dataset) -> Result<f64> {
        let want: Vec<usize> = (0..ds.len()).map(|i| ds.domain_of(i)).collect();
        self.accuracy_against(params, &ds.images, &want)
    }
}

/// Trains a probe on `train` and reports held-out accuracy on `val`,
/// without any trust gate.
pub fn fit_probe(
    train: &Dataset,
    val: &Dataset,
    cfg: &ProbeConfig,
) -> Result<(ParamSet<f32>, f64)> {
    cfg.validate()?;
    train.validate()?;
    let probe = Probe::new(cfg.clone())?;
    let mut params = probe.init_params::<f32>(cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.lr, 0.9, 0.999);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x70726f62);
    let k = cfg.n_domains;
    let eval_every = 100u64;
    let mut acc = 0.0f64;
    for step in 1..=cfg.max_steps {
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..train.len())).collect();
        let (images, labels) = train.gather(&idx);
        let mut g = Graph::new();
        let b = params.bind(&mut g, true)?;
        let xv = g.input(images)?;
        let logits = probe.forward(&mut g, &b, xv)?;
        let loss = g.softmax_cross_entropy(logits, &labels)?;
        g.backward(loss)?;
        params.absorb_grads(&g, &b)?;
        adam.step(&mut params, 1.0)?;
        let _ = k;
        if step % eval_every == 0 || step == cfg.max_steps {
            acc = probe.accuracy(&params, val)?;
            if acc >= cfg.stop_accuracy {
                break;
            }
        }
    }
    Ok((params, acc))
}

/// Trains a probe on 80% of `ds`, validating on the rest; rejects the
/// result when held-out accuracy ends below the trust threshold.
pub fn train_probe(ds: &Dataset, cfg: &ProbeConfig) -> Result<(ParamSet<f32>, f64)> {
    let n_val = (ds.len() / 5).max(1);
    let (train, val) = split(ds, n_val, cfg.seed ^ 0x76616c)?;
    let (params, acc) = fit_probe(&train, &val, cfg)?;
    if acc < cfg.trust_threshold {
        return Err(Error::ProbeUntrusted { accuracy: acc, required: cfg.trust_threshold });
    }
    Ok((params, acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, AttributeSet};
    use rand::SeedableRng;

    fn quick_cfg(ds: &Dataset, seed: u64) -> ProbeConfig {
        let mut cfg = ProbeConfig::for_dataset(ds, seed);
        cfg.base_width = 8;
        cfg.max_steps = 1200;
        cfg
    }

    #[test]
    fn quarter_train_generalizes_to_rest() {
        let attrs = AttributeSet::default_hair();
        let ds = gen_synthetic(&attrs, 11, 64, 16).unwrap(); // 256 images
        // domains interleave mod 4, so slice whole label cycles
        let quarter: Vec<usize> = (0..ds.len()).filter(|i| i % 16 < 4).collect();
        let rest: Vec<usize> = (0..ds.len()).filter(|i| i % 16 >= 4).collect();
        let train = ds.subset(&quarter, "train");
        let val = ds.subset(&rest, "test");
        let cfg = quick_cfg(&train, 3);
        let (params, acc) = fit_probe(&train, &val, &cfg).unwrap();
        assert!(acc >= 0.99, "probe only reached {acc}");
        let probe = Probe::new(cfg).unwrap();
        assert!(probe.accuracy(&params, &val).unwrap() >= 0.99);
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let attrs = AttributeSet::default_hair();
        let mut ds = gen_synthetic(&attrs, 13, 100, 16).unwrap(); // 400 images
        // independently random labels: nothing in the image predicts them
        let k = ds.n_domains();
        let n = ds.len();
        let mut label_rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut new_labels = Tensor::zeros(&[n, k]);
        for i in 0..n {
            let d = label_rng.gen_range(0..k);
            new_labels.data_mut()[i * k + d] = 1.0;
        }
        ds.labels = new_labels;
        let (train, val) = split(&ds, 320, 5).unwrap();
        let mut cfg = quick_cfg(&train, 1);
        cfg.max_steps = 300;
        let (_, acc) = fit_probe(&train, &val, &cfg).unwrap();
        assert!((acc - 0.25).abs() <= 0.05, "shuffled-label accuracy {acc}");
    }

    #[test]
    fn training_is_deterministic() {
        let attrs = AttributeSet::default_hair();
        let ds = gen_synthetic(&attrs, 17, 16, 16).unwrap();
        let mut cfg = quick_cfg(&ds, 9);
        cfg.max_steps = 50;
        cfg.stop_accuracy = 2.0; // never stop early
        cfg.trust_threshold = 0.0;
        let (a, _) = train_probe(&ds, &cfg).unwrap();
        let (b, _) = train_probe(&ds, &cfg).unwrap();
        for i in 0..a.len() {
            assert_eq!(a.value_at(i).data(), b.value_at(i).data());
        }
    }

    #[test]
    fn budget_exhaustion_below_trust_is_an_error() {
        let attrs = AttributeSet::default_hair();
        let ds = gen_synthetic(&attrs, 19, 16, 16).unwrap();
        let mut cfg = quick_cfg(&ds, 2);
        cfg.max_steps = 1; // cannot possibly train
        let err = train_probe(&ds, &cfg).unwrap_err();
        assert!(matches!(err, Error::ProbeUntrusted { .. }));
    }
}
