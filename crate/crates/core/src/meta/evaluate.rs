//! Quantitative evaluation of a (possibly adapted) generator through the
//! independently trained probe classifier.

use crate::data::{onehot_rows, Dataset, Probe};
use crate::error::{Error, Result};
use crate::nets::Generator;
use crate::objectives::cycle_l1;
use crate::tensor::{Graph, ParamSet, Tensor};

/// Metrics of one evaluation run.
#[derive(Clone, Debug)]
pub struct EvalReport {
    pub target_domain: usize,
    /// Fraction of translated test images the probe assigns to the target.
    pub target_accuracy: f64,
    /// Per trained domain: probe accuracy of translations toward it.
    pub retained: Vec<(usize, f64)>,
    /// Mean |x - x''| over the translate-then-restore cycle.
    pub cycle_l1: f64,
    /// Probe accuracy on the real test images (the trust measurement).
    pub probe_accuracy: f64,
}

const EVAL_BATCH: usize = 64;

/// Translates every image of `images` toward `target_domain`.
pub fn translate_batch(
    gen: &Generator,
    g_params: &ParamSet<f32>,
    images: &Tensor<f32>,
    target_domain: usize,
) -> Result<Tensor<f32>> {
    let n = images.shape()[0];
    let k = gen.config().n_domains;
    let per = images.numel() / n;
    let mut out = Tensor::zeros(images.shape());
    let mut at = 0usize;
    while at < n {
        let hi = (at + EVAL_BATCH).min(n);
        let mut shape = images.shape().to_vec();
        shape[0] = hi - at;
        let chunk = Tensor::new(shape, images.data()[at * per..hi * per].to_vec())?;
        let mut g = Graph::new();
        let b = g_params.bind(&mut g, false)?;
        let xv = g.constant(chunk)?;
        let lv = g.constant(onehot_rows(hi - at, k, target_domain))?;
        let y = gen.forward(&mut g, &b, xv, lv)?;
        out.data_mut()[at * per..hi * per].copy_from_slice(g.value(y).data());
        at = hi;
    }
    Ok(out)
}

/// Full cycle x -> x'(target) -> x''(original labels); returns (x', x'').
pub fn translate_cycle(
    gen: &Generator,
    g_params: &ParamSet<f32>,
    images: &Tensor<f32>,
    labels: &Tensor<f32>,
    target_domain: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let n = images.shape()[0];
    let k = gen.config().n_domains;
    let per = images.numel() / n;
    let mut translated = Tensor::zeros(images.shape());
    let mut restored = Tensor::zeros(images.shape());
    let mut at = 0usize;
    while at < n {
        let hi = (at + EVAL_BATCH).min(n);
        let m = hi - at;
        let mut shape = images.shape().to_vec();
        shape[0] = m;
        let chunk = Tensor::new(shape, images.data()[at * per..hi * per].to_vec())?;
        let orig_labels = Tensor::new(vec![m, k], labels.data()[at * k..hi * k].to_vec())?;
        let mut g = Graph::new();
        let b = g_params.bind(&mut g, false)?;
        let xv = g.constant(chunk)?;
        let lt = g.constant(onehot_rows(m, k, target_domain))?;
        let lo = g.constant(orig_labels)?;
        let fwd = gen.forward(&mut g, &b, xv, lt)?;
        let back = gen.forward(&mut g, &b, fwd, lo)?;
        translated.data_mut()[at * per..hi * per].copy_from_slice(g.value(fwd).data());
        restored.data_mut()[at * per..hi * per].copy_from_slice(g.value(back).data());
        at = hi;
    }
    Ok((translated, restored))
}

/// Evaluates a generator on the test split. Refuses to produce numbers
/// when the probe itself cannot classify the real test images reliably.
pub fn evaluate(
    gen: &Generator,
    g_params: &ParamSet<f32>,
    test: &Dataset,
    probe: &Probe,
    probe_params: &ParamSet<f32>,
    target_domain: usize,
    trained_domains: &[usize],
) -> Result<EvalReport> {
    if target_domain >= test.n_domains() {
        return Err(Error::invalid("target domain out of range"));
    }
    let probe_accuracy = probe.accuracy(probe_params, test)?;
    let required = probe.config().trust_threshold;
    if probe_accuracy < required {
        return Err(Error::ProbeUntrusted { accuracy: probe_accuracy, required });
    }

    let (translated, restored) =
        translate_cycle(gen, g_params, &test.images, &test.labels, target_domain)?;
    let want = vec![target_domain; test.len()];
    let target_accuracy = probe.accuracy_against(probe_params, &translated, &want)?;
    let cycle = cycle_l1(&test.images, &restored)?;

    let mut retained = Vec::with_capacity(trained_domains.len());
    for &d in trained_domains {
        let toward = translate_batch(gen, g_params, &test.images, d)?;
        let want = vec![d; test.len()];
        retained.push((d, probe.accuracy_against(probe_params, &toward, &want)?));
    }
    Ok(EvalReport { target_domain, target_accuracy, retained, cycle_l1: cycle, probe_accuracy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, train_probe, AttributeSet, ProbeConfig};
    use crate::nets::GeneratorConfig;

    #[test]
    fn untrained_generator_scores_near_prior_and_probe_gate_works() {
        let attrs = AttributeSet::default_hair();
        let full = gen_synthetic(&attrs, 31, 48, 16).unwrap();
        let (train, test) = crate::data::split(&full, 48, 1).unwrap();
        let mut pcfg = ProbeConfig::for_dataset(&train, 5);
        pcfg.base_width = 8;
        pcfg.max_steps = 1500;
        let (probe_params, acc) = train_probe(&train, &pcfg).unwrap();
        assert!(acc >= 0.95);
        let probe = Probe::new(pcfg).unwrap();

        let gen = Generator::new(GeneratorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_downsample: 2,
            n_resblocks: 1,
            n_domains: 4,
        })
        .unwrap();
        let g_params = gen.init_params::<f32>(3).unwrap();
        let report = evaluate(&gen, &g_params, &test, &probe, &probe_params, 2, &[0, 1, 3]).unwrap();
        assert!(report.probe_accuracy >= 0.95);
        // an untrained generator produces garbage; the probe may put it
        // anywhere, but the metric must be a valid frequency
        assert!((0.0..=1.0).contains(&report.target_accuracy));
        assert!(report.cycle_l1 >= 0.0);
        assert_eq!(report.retained.len(), 3);
    }

    #[test]
    fn evaluation_refused_with_weak_probe() {
        let attrs = AttributeSet::default_hair();
        let full = gen_synthetic(&attrs, 33, 24, 16).unwrap();
        let (train, test) = crate::data::split(&full, 24, 2).unwrap();
        let mut pcfg = ProbeConfig::for_dataset(&train, 6);
        pcfg.base_width = 8;
        pcfg.max_steps = 5; // probe stays untrained
        pcfg.trust_threshold = 0.0; // sneak past train gating
        let (probe_params, _) = train_probe(&train, &pcfg).unwrap();
        let mut pcfg_eval = pcfg.clone();
        pcfg_eval.trust_threshold = 0.95;
        let probe = Probe::new(pcfg_eval).unwrap();
        let gen = Generator::new(GeneratorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_downsample: 2,
            n_resblocks: 1,
            n_domains: 4,
        })
        .unwrap();
        let g_params = gen.init_params::<f32>(3).unwrap();
        let err = evaluate(&gen, &g_params, &test, &probe, &probe_params, 2, &[0]).unwrap_err();
        assert!(matches!(err, Error::ProbeUntrusted { .. }));
    }
}
