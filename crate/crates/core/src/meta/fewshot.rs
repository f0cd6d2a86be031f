//! Few-shot fine-tuning on a held-out attribute and the ablation grid
//! over (support size, gradient steps).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::evaluate::{evaluate, EvalReport};
use super::steps::{compose_report, disc_update, gen_update};
use super::MetaConfig;
use crate::data::{Batch, Dataset, Probe};
use crate::error::{Error, Result};
use crate::nets::{Discriminator, Generator};
use crate::objectives::{LossReport, LossWeights};
use crate::tensor::{AdamState, ParamSet};

/// One cell of the ablation design.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FewShotSpec {
    pub n_samples: usize,
    pub n_steps: usize,
}

impl FewShotSpec {
    pub const SAMPLE_GRID: [usize; 4] = [4, 8, 16, 32];
    pub const STEP_GRID: [usize; 3] = [10, 100, 1000];

    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::invalid("few-shot support must hold at least 1 sample"));
        }
        Ok(())
    }

    /// Membership in the published ablation grid.
    pub fn on_grid(&self) -> bool {
        Self::SAMPLE_GRID.contains(&self.n_samples) && Self::STEP_GRID.contains(&self.n_steps)
    }
}

/// Adapted parameters plus the fine-tuning loss history.
pub struct FewShotResult {
    pub g_params: ParamSet<f32>,
    pub d_params: ParamSet<f32>,
    pub reports: Vec<LossReport>,
}

/// Applies `spec.n_steps` of the regular update schedule to copies of the
/// checkpointed parameters, using only the support batch of the held-out
/// domain. The inputs are never mutated.
#[allow(clippy::too_many_arguments)]
pub fn few_shot_finetune(
    gen: &Generator,
    disc: &Discriminator,
    weights: &LossWeights,
    cfg: &MetaConfig,
    g0: &ParamSet<f32>,
    d0: &ParamSet<f32>,
    support: &Batch,
    target_domain: usize,
    spec: &FewShotSpec,
    seed: u64,
) -> Result<FewShotResult> {
    spec.validate()?;
    if support.len() != spec.n_samples {
        return Err(Error::invalid(format!(
            "support holds {} samples but the spec asks for {}",
            support.len(),
            spec.n_samples
        )));
    }
    if let Some(bad) = support.domains.iter().find(|&&d| d != target_domain) {
        return Err(Error::invalid(format!(
            "support contains a sample from domain {bad}, expected only the held-out domain {target_domain}"
        )));
    }

    let mut g_params = g0.clone();
    let mut d_params = d0.clone();
    let mut g_adam = AdamState::new(&g_params, cfg.alpha_gen, cfg.beta1, cfg.beta2);
    let mut d_adam = AdamState::new(&d_params, cfg.alpha_disc, cfg.beta1, cfg.beta2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(spec.n_steps);
    let mut g_parts = (0.0, 0.0, 0.0);
    let per = support.images.numel() / support.len();
    let k = support.labels.shape()[1];

    for step in 1..=spec.n_steps as u64 {
        // m-sized batch drawn with replacement from the support set
        let idx: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.gen_range(0..support.len())).collect();
        let mut images = crate::tensor::Tensor::zeros(&[
            cfg.batch_size,
            support.images.shape()[1],
            support.images.shape()[2],
            support.images.shape()[3],
        ]);
        let mut labels = crate::tensor::Tensor::zeros(&[cfg.batch_size, k]);
        for (dst, &i) in idx.iter().enumerate() {
            images.data_mut()[dst * per..(dst + 1) * per]
                .copy_from_slice(&support.images.data()[i * per..(i + 1) * per]);
            labels.data_mut()[dst * k..(dst + 1) * k]
                .copy_from_slice(&support.labels.data()[i * k..(i + 1) * k]);
        }
        let batch = Batch {
            images,
            labels,
            domains: idx.iter().map(|&i| support.domains[i]).collect(),
        };
        let u: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d_parts = disc_update(
            gen, disc, weights, &g_params, &mut d_params, &mut d_adam, &batch, target_domain, &u,
            1.0,
        )
        .map_err(|e| fault(e, step))?;
        if step % cfg.gen_every == 0 {
            g_parts = gen_update(
                gen, disc, weights, &mut g_params, &mut g_adam, &d_params, &batch, target_domain,
                1.0,
            )
            .map_err(|e| fault(e, step))?;
        }
        reports.push(compose_report(d_parts, g_parts, weights));
    }
    Ok(FewShotResult { g_params, d_params, reports })
}

fn fault(e: Error, step: u64) -> Error {
    match e {
        Error::NonFinite { context } => Error::TrainingFault {
            step,
            context: format!("non-finite value in {context}"),
        },
        other => other,
    }
}

/// Builds a support batch of `n` held-out-domain images from `train`,
/// seed-deterministic.
pub fn draw_support(train: &Dataset, target_domain: usize, n: usize, seed: u64) -> Result<Batch> {
    use rand::seq::SliceRandom;
    let mut pool = train.indices_of_domain(target_domain);
    if pool.len() < n {
        return Err(Error::invalid(format!(
            "train split holds only {} images of domain {target_domain}, need {n}",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    pool.truncate(n);
    let (images, labels) = train.gather(&pool);
    Ok(Batch { images, labels, domains: vec![target_domain; n] })
}

/// One evaluated grid cell.
#[derive(Clone, Debug)]
pub struct AblationCell {
    pub n_samples: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub report: EvalReport,
}

/// Runs (samples x steps x seeds) fine-tuning experiments from one
/// checkpoint and evaluates each adapted generator. Cells are
/// independent; they run in parallel and are returned in grid order.
#[allow(clippy::too_many_arguments)]
pub fn ablation_grid(
    gen: &Generator,
    disc: &Discriminator,
    weights: &LossWeights,
    cfg: &MetaConfig,
    g0: &ParamSet<f32>,
    d0: &ParamSet<f32>,
    train: &Dataset,
    test: &Dataset,
    probe: &Probe,
    probe_params: &ParamSet<f32>,
    target_domain: usize,
    trained_domains: &[usize],
    samples: &[usize],
    steps: &[usize],
    seeds: &[u64],
) -> Result<Vec<AblationCell>> {
    let mut cells = Vec::new();
    for &n in samples {
        for &st in steps {
            for &seed in seeds {
                cells.push((n, st, seed));
            }
        }
    }
    cells
        .par_iter()
        .map(|&(n_samples, n_steps, seed)| {
            let support = draw_support(train, target_domain, n_samples, seed)?;
            let spec = FewShotSpec { n_samples, n_steps };
            let tuned = few_shot_finetune(
                gen, disc, weights, cfg, g0, d0, &support, target_domain, &spec, seed,
            )?;
            let report = evaluate(
                gen,
                &tuned.g_params,
                test,
                probe,
                probe_params,
                target_domain,
                trained_domains,
            )?;
            Ok(AblationCell { n_samples, n_steps, seed, report })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, AttributeSet};
    use crate::nets::{DiscriminatorConfig, GeneratorConfig};

    fn tiny() -> (Generator, Discriminator, MetaConfig) {
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
        let mut cfg = MetaConfig::desk();
        cfg.batch_size = 4;
        (gen, disc, cfg)
    }

    #[test]
    fn zero_steps_is_identity_and_inputs_untouched() {
        let (gen, disc, cfg) = tiny();
        let g0 = gen.init_params::<f32>(1).unwrap();
        let d0 = disc.init_params::<f32>(2).unwrap();
        let g0_copy = g0.clone();
        let ds = gen_synthetic(&AttributeSet::default_hair(), 7, 8, 16).unwrap();
        let support = draw_support(&ds, 2, 4, 11).unwrap();
        let spec = FewShotSpec { n_samples: 4, n_steps: 0 };
        let out =
            few_shot_finetune(&gen, &disc, &LossWeights::default(), &cfg, &g0, &d0, &support, 2, &spec, 3)
                .unwrap();
        assert!(out.g_params.delta(&g0).unwrap().is_zero());
        assert!(out.d_params.delta(&d0).unwrap().is_zero());
        assert!(g0.delta(&g0_copy).unwrap().is_zero());
        assert!(out.reports.is_empty());
    }

    #[test]
    fn wrong_domain_support_rejected() {
        let (gen, disc, cfg) = tiny();
        let g0 = gen.init_params::<f32>(1).unwrap();
        let d0 = disc.init_params::<f32>(2).unwrap();
        let ds = gen_synthetic(&AttributeSet::default_hair(), 7, 8, 16).unwrap();
        let mut support = draw_support(&ds, 2, 4, 11).unwrap();
        support.domains[1] = 0; // lie about one sample
        let spec = FewShotSpec { n_samples: 4, n_steps: 2 };
        assert!(few_shot_finetune(
            &gen,
            &disc,
            &LossWeights::default(),
            &cfg,
            &g0,
            &d0,
            &support,
            2,
            &spec,
            3
        )
        .is_err());
    }

    #[test]
    fn finetune_runs_schedule_and_is_deterministic() {
        let (gen, disc, cfg) = tiny();
        let g0 = gen.init_params::<f32>(1).unwrap();
        let d0 = disc.init_params::<f32>(2).unwrap();
        let ds = gen_synthetic(&AttributeSet::default_hair(), 7, 8, 16).unwrap();
        let support = draw_support(&ds, 1, 8, 21).unwrap();
        let spec = FewShotSpec { n_samples: 8, n_steps: 10 };
        let w = LossWeights::default();
        let a = few_shot_finetune(&gen, &disc, &w, &cfg, &g0, &d0, &support, 1, &spec, 5).unwrap();
        let b = few_shot_finetune(&gen, &disc, &w, &cfg, &g0, &d0, &support, 1, &spec, 5).unwrap();
        assert_eq!(a.reports.len(), 10);
        assert!(a.g_params.delta(&b.g_params).unwrap().is_zero());
        assert!(a.d_params.delta(&b.d_params).unwrap().is_zero());
        // generator fires on steps 5 and 10 with gen_every = 5
        assert!(!a.g_params.delta(&g0).unwrap().is_zero());
        assert!(a.reports.iter().all(|r| r.is_finite()));
    }

    #[test]
    fn draw_support_respects_pool_and_seed() {
        let ds = gen_synthetic(&AttributeSet::default_hair(), 7, 8, 16).unwrap();
        let a = draw_support(&ds, 3, 5, 9).unwrap();
        let b = draw_support(&ds, 3, 5, 9).unwrap();
        assert_eq!(a.images.data(), b.images.data());
        assert!(a.domains.iter().all(|&d| d == 3));
        assert!(draw_support(&ds, 3, 9, 9).is_err());
    }

    #[test]
    fn grid_membership() {
        assert!(FewShotSpec { n_samples: 32, n_steps: 10 }.on_grid());
        assert!(!FewShotSpec { n_samples: 12, n_steps: 10 }.on_grid());
        assert!(FewShotSpec { n_samples: 0, n_steps: 5 }.validate().is_err());
    }
}
