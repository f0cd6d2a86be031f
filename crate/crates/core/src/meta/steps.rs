//! Single adversarial update steps shared by the inner loop and the
//! few-shot fine-tuning phase.

use crate::data::{onehot_rows, Batch};
use crate::error::Result;
use crate::nets::{Discriminator, Generator};
use crate::objectives::{
    discriminator_total, generator_total, gradient_penalty_exact, gradient_penalty_node,
    interpolate_images, DiscCritic, LossWeights, GP_PROBE_DELTA,
};
use crate::tensor::{AdamState, Graph, ParamSet, Tensor};

/// One discriminator update on `batch` for the task `target_domain`.
/// Returns (d_adv, d_class, d_gp) where d_gp is the exact penalty value
/// from the dedicated backward pass; the optimized objective carries the
/// first-order penalty estimator instead.
#[allow(clippy::too_many_arguments)]
pub fn disc_update(
    gen: &Generator,
    disc: &Discriminator,
    weights: &LossWeights,
    g_params: &ParamSet<f32>,
    d_params: &mut ParamSet<f32>,
    d_adam: &mut AdamState<f32>,
    batch: &Batch,
    target_domain: usize,
    u: &[f64],
    lr_scale: f64,
) -> Result<(f64, f64, f64)> {
    let m = batch.len();
    let k = gen.config().n_domains;
    let target_labels = onehot_rows(m, k, target_domain);

    // translated batch, detached from the generator
    let fake: Tensor<f32> = {
        let mut g = Graph::new();
        let gb = g_params.bind(&mut g, false)?;
        let x = g.constant(batch.images.clone())?;
        let l = g.constant(target_labels.clone())?;
        let y = gen.forward(&mut g, &gb, x, l)?;
        g.value(y).clone()
    };

    // exact penalty (and probe direction) at the interpolates
    let x_hat = interpolate_images(&batch.images, &fake, u)?;
    let pen = {
        let critic = DiscCritic { disc, params: d_params };
        gradient_penalty_exact(&critic, &x_hat)?
    };

    let mut g = Graph::new();
    let db = d_params.bind(&mut g, true)?;
    let real = g.constant(batch.images.clone())?;
    let fake_v = g.constant(fake)?;
    let src_fake = disc.forward_src(&mut g, &db, fake_v)?;
    let (src_real, cls_real) = disc.forward(&mut g, &db, real)?;
    let mean_fake = g.mean(src_fake)?;
    let mean_real = g.mean(src_real)?;
    let d_adv = g.sub(mean_fake, mean_real)?;
    let d_class = g.bce_with_logits(cls_real, &batch.labels)?;
    let gp = gradient_penalty_node(&mut g, |g, x| disc.forward_src(g, &db, x), &x_hat, &pen, GP_PROBE_DELTA)?;

    // w_adv * (d_adv + w_gp * gp) + w_class * class
    let gp_scaled = g.scale(gp, weights.gp)?;
    let adv_side = g.add(d_adv, gp_scaled)?;
    let adv_side = g.scale(adv_side, weights.adv)?;
    let class_side = g.scale(d_class, weights.class)?;
    let total = g.add(adv_side, class_side)?;

    let d_adv_val = g.scalar_value(d_adv)?;
    let d_class_val = g.scalar_value(d_class)?;
    g.backward(total)?;
    d_params.absorb_grads(&g, &db)?;
    d_adam.step(d_params, lr_scale)?;
    Ok((d_adv_val, d_class_val, pen.gp))
}

/// One generator update on `batch` for the task `target_domain`: fool the
/// critic, classify toward the target, reconstruct the input through the
/// cycle. Returns (g_adv, g_class, g_cycle).
#[allow(clippy::too_many_arguments)]
pub fn gen_update(
    gen: &Generator,
    disc: &Discriminator,
    weights: &LossWeights,
    g_params: &mut ParamSet<f32>,
    g_adam: &mut AdamState<f32>,
    d_params: &ParamSet<f32>,
    batch: &Batch,
    target_domain: usize,
    lr_scale: f64,
) -> Result<(f64, f64, f64)> {
    let m = batch.len();
    let k = gen.config().n_domains;
    let target_labels = onehot_rows(m, k, target_domain);

    let mut g = Graph::new();
    let gb = g_params.bind(&mut g, true)?;
    let db = d_params.bind(&mut g, false)?;
    let x = g.constant(batch.images.clone())?;
    let lt = g.constant(target_labels.clone())?;
    let lo = g.constant(batch.labels.clone())?;

    let x_trans = gen.forward(&mut g, &gb, x, lt)?;
    let (src, cls) = disc.forward(&mut g, &db, x_trans)?;
    let mean_src = g.mean(src)?;
    let g_adv = g.neg(mean_src)?;
    let g_class = g.bce_with_logits(cls, &target_labels)?;
    let x_back = gen.forward(&mut g, &gb, x_trans, lo)?;
    let g_cycle = crate::objectives::cycle_loss(&mut g, x, x_back)?;

    let adv_side = g.scale(g_adv, weights.adv)?;
    let class_side = g.scale(g_class, weights.class)?;
    let cycle_side = g.scale(g_cycle, weights.cycle)?;
    let partial = g.add(adv_side, class_side)?;
    let total = g.add(partial, cycle_side)?;

    let g_adv_val = g.scalar_value(g_adv)?;
    let g_class_val = g.scalar_value(g_class)?;
    let g_cycle_val = g.scalar_value(g_cycle)?;
    g.backward(total)?;
    g_params.absorb_grads(&g, &gb)?;
    g_adam.step(g_params, lr_scale)?;
    Ok((g_adv_val, g_class_val, g_cycle_val))
}

/// Loss-report totals for one step's parts.
pub(crate) fn compose_report(
    d_parts: (f64, f64, f64),
    g_parts: (f64, f64, f64),
    weights: &LossWeights,
) -> crate::objectives::LossReport {
    let (d_adv, d_class, d_gp) = d_parts;
    let (g_adv, g_class, g_cycle) = g_parts;
    crate::objectives::LossReport {
        d_adv,
        d_class,
        d_gp,
        g_adv,
        g_class,
        g_cycle,
        d_total: discriminator_total(d_adv, d_gp, d_class, weights),
        g_total: generator_total(g_adv, g_class, g_cycle, weights),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, AttributeSet, TaskSampler};
    use crate::nets::{DiscriminatorConfig, GeneratorConfig};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_nets() -> (Generator, Discriminator) {
        let gen = Generator::new(GeneratorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_downsample: 2,
            n_resblocks: 1,
            n_domains: 4,
        })
        .unwrap();
        let disc = Discriminator::new(DiscriminatorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_layers: 3,
            n_domains: 4,
        })
        .unwrap();
        (gen, disc)
    }

    #[test]
    fn both_updates_move_parameters_and_zero_grads() {
        let (gen, disc) = tiny_nets();
        let mut g_params = gen.init_params::<f32>(1).unwrap();
        let mut d_params = disc.init_params::<f32>(2).unwrap();
        let ds = gen_synthetic(&AttributeSet::default_hair(), 3, 4, 16).unwrap();
        let sampler = TaskSampler::new(&ds, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let batch = sampler.sample_batch(4, &mut rng).unwrap();
        let weights = LossWeights::default();

        let d_before = d_params.clone();
        let mut d_adam = AdamState::new(&d_params, 1e-3, 0.5, 0.999);
        let u: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (d_adv, d_class, d_gp) = disc_update(
            &gen, &disc, &weights, &g_params, &mut d_params, &mut d_adam, &batch, 1, &u, 1.0,
        )
        .unwrap();
        assert!(d_adv.is_finite() && d_class.is_finite() && d_gp.is_finite());
        assert!(d_gp >= 0.0);
        let moved = d_before.delta(&d_params).unwrap();
        assert!(!moved.is_zero(), "discriminator did not move");
        assert!(d_params.iter().all(|(_, _, g)| g.data().iter().all(|&v| v == 0.0)));

        let g_before = g_params.clone();
        let mut g_adam = AdamState::new(&g_params, 1e-3, 0.5, 0.999);
        let (g_adv, g_class, g_cycle) = gen_update(
            &gen, &disc, &weights, &mut g_params, &mut g_adam, &d_params, &batch, 1, 1.0,
        )
        .unwrap();
        assert!(g_adv.is_finite() && g_class.is_finite());
        assert!(g_cycle >= 0.0);
        let moved = g_before.delta(&g_params).unwrap();
        assert!(!moved.is_zero(), "generator did not move");
    }

    #[test]
    fn pure_adversarial_gradient_direction() {
        // with class and cycle weights at zero, the generator gradient
        // must point exactly along the gradient of -mean D(G(x, tau))
        let (gen, disc) = tiny_nets();
        let g_params = gen.init_params::<f32>(7).unwrap();
        let d_params = disc.init_params::<f32>(8).unwrap();
        let ds = gen_synthetic(&AttributeSet::default_hair(), 5, 4, 16).unwrap();
        let sampler = TaskSampler::new(&ds, None).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let batch = sampler.sample_batch(4, &mut rng).unwrap();
        let target = 2usize;
        let target_labels = onehot_rows(4, 4, target);

        // composite-objective gradient with zeroed extra weights
        let weights = LossWeights { adv: 1.0, class: 0.0, cycle: 0.0, gp: 10.0 };
        let composite: Vec<f32> = {
            let mut p = g_params.clone();
            let mut g = Graph::new();
            let gb = p.bind(&mut g, true).unwrap();
            let db = d_params.bind(&mut g, false).unwrap();
            let x = g.constant(batch.images.clone()).unwrap();
            let lt = g.constant(target_labels.clone()).unwrap();
            let lo = g.constant(batch.labels.clone()).unwrap();
            let x_trans = gen.forward(&mut g, &gb, x, lt).unwrap();
            let (src, cls) = disc.forward(&mut g, &db, x_trans).unwrap();
            let mean_src = g.mean(src).unwrap();
            let g_adv = g.neg(mean_src).unwrap();
            let g_class = g.bce_with_logits(cls, &target_labels).unwrap();
            let x_back = gen.forward(&mut g, &gb, x_trans, lo).unwrap();
            let g_cycle = crate::objectives::cycle_loss(&mut g, x, x_back).unwrap();
            let a = g.scale(g_adv, weights.adv).unwrap();
            let b = g.scale(g_class, weights.class).unwrap();
            let c = g.scale(g_cycle, weights.cycle).unwrap();
            let ab = g.add(a, b).unwrap();
            let total = g.add(ab, c).unwrap();
            g.backward(total).unwrap();
            p.absorb_grads(&g, &gb).unwrap();
            (0..p.len()).flat_map(|i| p.grad_at(i).data().to_vec()).collect()
        };

        // bare critic-fooling gradient
        let bare: Vec<f32> = {
            let mut p = g_params.clone();
            let mut g = Graph::new();
            let gb = p.bind(&mut g, true).unwrap();
            let db = d_params.bind(&mut g, false).unwrap();
            let x = g.constant(batch.images.clone()).unwrap();
            let lt = g.constant(target_labels.clone()).unwrap();
            let x_trans = gen.forward(&mut g, &gb, x, lt).unwrap();
            let src = disc.forward_src(&mut g, &db, x_trans).unwrap();
            let mean_src = g.mean(src).unwrap();
            let loss = g.neg(mean_src).unwrap();
            g.backward(loss).unwrap();
            p.absorb_grads(&g, &gb).unwrap();
            (0..p.len()).flat_map(|i| p.grad_at(i).data().to_vec()).collect()
        };

        let dot: f64 = composite.iter().zip(&bare).map(|(a, b)| *a as f64 * *b as f64).sum();
        let n1: f64 = composite.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let n2: f64 = bare.iter().map(|v| (*v as f64) * (*v as f64)).sum();
        let cos = dot / (n1.sqrt() * n2.sqrt());
        assert!(cos > 0.999, "cosine similarity {cos}");
    }
}
