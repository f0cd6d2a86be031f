//! The meta-training loop: task sampling, the inner adversarial
//! optimization producing task parameters, and the first-order outer
//! update that moves the initialization toward them.

mod evaluate;
mod fewshot;
mod persist;
mod steps;

pub use evaluate::{evaluate, translate_batch, translate_cycle, EvalReport};
pub use fewshot::{ablation_grid, few_shot_finetune, AblationCell, FewShotSpec};
pub use persist::TrainerSnapshot;
pub use steps::{disc_update, gen_update};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Batch, TaskSampler};
use crate::error::{Error, Result};
use crate::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::objectives::{LossReport, LossWeights};
use crate::tensor::{AdamState, ParamSet, Scalar};

/// Training-loop hyperparameters. `Default` carries the reference
/// full-scale values; [`MetaConfig::desk`] is the laptop-scale setup the
/// benchmark and CLI default to.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaConfig {
    pub n_iter: u64,
    pub batch_size: usize,
    /// Inner-loop iterations per task.
    pub k_inner: usize,
    /// Few-shot fine-tuning steps.
    pub k_fewshot: usize,
    /// One generator update per this many discriminator updates.
    pub gen_every: u64,
    pub alpha_disc: f64,
    pub alpha_gen: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Periodic checkpoint cadence; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
}

impl Default for MetaConfig {
    fn default() -> Self {
        MetaConfig {
            n_iter: 200_000,
            batch_size: 16,
            k_inner: 1,
            k_fewshot: 10,
            gen_every: 5,
            alpha_disc: 1e-4,
            alpha_gen: 1e-4,
            beta1: 0.5,
            beta2: 0.999,
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl MetaConfig {
    /// Desk-scale settings: short horizon with learning rates scaled up
    /// to keep total parameter travel comparable.
    pub fn desk() -> Self {
        MetaConfig {
            n_iter: 3000,
            alpha_disc: 1e-3,
            alpha_gen: 1e-3,
            ..MetaConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_iter == 0 || self.batch_size == 0 {
            return Err(Error::invalid("n_iter and batch_size must be positive"));
        }
        if self.k_inner == 0 {
            return Err(Error::invalid("k_inner must be at least 1"));
        }
        if self.k_fewshot == 0 {
            return Err(Error::invalid("k_fewshot must be at least 1"));
        }
        if self.gen_every == 0 {
            return Err(Error::invalid("gen_every must be at least 1"));
        }
        if self.alpha_disc <= 0.0 || self.alpha_gen <= 0.0 {
            return Err(Error::invalid("learning rates must be positive at start"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("adam betas must lie in [0,1)"));
        }
        Ok(())
    }
}

/// Outer learning-rate schedule: constant for the first half of training,
/// then linear decay toward zero over the second half.
pub fn lr_schedule(iter: u64, n_iter: u64) -> f64 {
    let half = n_iter / 2;
    if iter < half || n_iter <= half {
        1.0
    } else {
        1.0 - (iter - half) as f64 / (n_iter - half) as f64
    }
}

/// The optimizer driving the outer parameters with the pseudo-gradient.
pub enum OuterOpt<T: Scalar> {
    Sgd { lr: f64 },
    Adam(AdamState<T>),
}

/// One first-order outer update: install g = outer - inner as the
/// gradient of the outer parameters and take one optimizer step.
/// Generator and discriminator sides are treated identically by calling
/// this once per network.
pub fn reptile_outer_step<T: Scalar>(
    outer: &mut ParamSet<T>,
    inner: &ParamSet<T>,
    opt: &mut OuterOpt<T>,
    lr_scale: f64,
) -> Result<()> {
    match opt {
        OuterOpt::Sgd { lr } => {
            // phi <- phi - lr * (phi_B - phi_A)
            let pseudo = outer.delta(inner)?;
            outer.axpy(-*lr * lr_scale, &pseudo)?;
        }
        OuterOpt::Adam(state) => reptile_outer_step_adam(outer, inner, state, lr_scale)?,
    }
    Ok(())
}

/// Adam-backed variant used by the trainer, which owns its states.
pub fn reptile_outer_step_adam<T: Scalar>(
    outer: &mut ParamSet<T>,
    inner: &ParamSet<T>,
    state: &mut AdamState<T>,
    lr_scale: f64,
) -> Result<()> {
    let pseudo = outer.delta(inner)?; // phi_B - phi_A
    outer.set_grads_from_delta(&pseudo)?;
    state.step(outer, lr_scale)
}

/// Result of one inner loop: the adapted copies and the step's losses.
pub struct InnerResult {
    pub g_params: ParamSet<f32>,
    pub d_params: ParamSet<f32>,
    pub d_parts: (f64, f64, f64),
    pub g_parts: Option<(f64, f64, f64)>,
}

/// Runs `k_inner` discriminator updates (with the generator update gated
/// on the global discriminator-step counter) on fresh copies of the
/// outer parameters, with fresh inner Adam state per task.
#[allow(clippy::too_many_arguments)]
pub fn inner_loop(
    gen: &Generator,
    disc: &Discriminator,
    weights: &LossWeights,
    cfg: &MetaConfig,
    g_outer: &ParamSet<f32>,
    d_outer: &ParamSet<f32>,
    target_domain: usize,
    batch: &Batch,
    d_step_counter: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Result<InnerResult> {
    let mut g_params = g_outer.clone();
    let mut d_params = d_outer.clone();
    let mut d_adam = AdamState::new(&d_params, cfg.alpha_disc, cfg.beta1, cfg.beta2);
    let mut g_adam = AdamState::new(&g_params, cfg.alpha_gen, cfg.beta1, cfg.beta2);
    let mut d_parts = (0.0, 0.0, 0.0);
    let mut g_parts = None;
    for _ in 0..cfg.k_inner {
        *d_step_counter += 1;
        let u: Vec<f64> = (0..batch.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        d_parts = disc_update(
            gen, disc, weights, &g_params, &mut d_params, &mut d_adam, batch, target_domain, &u, 1.0,
        )?;
        if *d_step_counter % cfg.gen_every == 0 {
            g_parts = Some(gen_update(
                gen, disc, weights, &mut g_params, &mut g_adam, &d_params, batch, target_domain, 1.0,
            )?);
        }
    }
    Ok(InnerResult { g_params, d_params, d_parts, g_parts })
}

/// Meta-training driver with persistent outer Adam state.
pub struct MetaTrainer {
    pub gen: Generator,
    pub disc: Discriminator,
    pub weights: LossWeights,
    pub cfg: MetaConfig,
    pub g_params: ParamSet<f32>,
    pub d_params: ParamSet<f32>,
    pub(crate) outer_g: AdamState<f32>,
    pub(crate) outer_d: AdamState<f32>,
    pub iter: u64,
    pub(crate) d_step_counter: u64,
    pub(crate) rng: ChaCha8Rng,
    last_g_parts: (f64, f64, f64),
}

/// Callbacks the training loop reports into.
pub trait TrainObserver {
    fn on_step(&mut self, iter: u64, report: &LossReport) -> Result<()>;
    fn on_checkpoint(&mut self, trainer: &MetaTrainer, is_final: bool) -> Result<()>;
}

/// Observer that only collects loss reports.
#[derive(Default)]
pub struct CollectingObserver {
    pub reports: Vec<LossReport>,
}

impl TrainObserver for CollectingObserver {
    fn on_step(&mut self, _iter: u64, report: &LossReport) -> Result<()> {
        self.reports.push(*report);
        Ok(())
    }

    fn on_checkpoint(&mut self, _trainer: &MetaTrainer, _is_final: bool) -> Result<()> {
        Ok(())
    }
}

impl MetaTrainer {
    pub fn new(
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        weights: LossWeights,
        cfg: MetaConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        weights.validate()?;
        if gen_cfg.n_domains != disc_cfg.n_domains {
            return Err(Error::invalid("generator and discriminator disagree on n_domains"));
        }
        let gen = Generator::new(gen_cfg)?;
        let disc = Discriminator::new(disc_cfg)?;
        let g_params = gen.init_params::<f32>(cfg.seed ^ 0x67656e65)?;
        let d_params = disc.init_params::<f32>(cfg.seed ^ 0x64697363)?;
        let outer_g = AdamState::new(&g_params, cfg.alpha_gen, cfg.beta1, cfg.beta2);
        let outer_d = AdamState::new(&d_params, cfg.alpha_disc, cfg.beta1, cfg.beta2);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(MetaTrainer {
            gen,
            disc,
            weights,
            cfg,
            g_params,
            d_params,
            outer_g,
            outer_d,
            iter: 0,
            d_step_counter: 0,
            rng,
            last_g_parts: (0.0, 0.0, 0.0),
        })
    }

    /// One meta-iteration. Fixed rng draw order per iteration: batch
    /// indices, then the task, then the penalty interpolation
    /// coefficients inside the inner loop.
    pub fn step(&mut self, sampler: &TaskSampler) -> Result<LossReport> {
        let step_index = self.iter + 1;
        let fault = |e: Error| match e {
            Error::NonFinite { context } => Error::TrainingFault {
                step: step_index,
                context: format!("non-finite value in {context}"),
            },
            other => other,
        };
        let batch = sampler.sample_batch(self.cfg.batch_size, &mut self.rng)?;
        debug_assert!(
            sampler.held_out().map_or(true, |h| batch.domains.iter().all(|&d| d != h)),
            "hold-out hygiene violated"
        );
        let task = sampler.sample_task(&mut self.rng);
        let inner = inner_loop(
            &self.gen,
            &self.disc,
            &self.weights,
            &self.cfg,
            &self.g_params,
            &self.d_params,
            task,
            &batch,
            &mut self.d_step_counter,
            &mut self.rng,
        )
        .map_err(fault)?;

        let scale = lr_schedule(self.iter, self.cfg.n_iter);
        reptile_outer_step_adam(&mut self.g_params, &inner.g_params, &mut self.outer_g, scale)
            .map_err(fault)?;
        reptile_outer_step_adam(&mut self.d_params, &inner.d_params, &mut self.outer_d, scale)
            .map_err(fault)?;

        self.iter += 1;
        if let Some(parts) = inner.g_parts {
            self.last_g_parts = parts;
        }
        let (d_adv, d_class, d_gp) = inner.d_parts;
        let (g_adv, g_class, g_cycle) = self.last_g_parts;
        let report = LossReport {
            d_adv,
            d_class,
            d_gp,
            g_adv,
            g_class,
            g_cycle,
            d_total: crate::objectives::discriminator_total(d_adv, d_gp, d_class, &self.weights),
            g_total: crate::objectives::generator_total(g_adv, g_class, g_cycle, &self.weights),
        };
        if !report.is_finite() {
            return Err(Error::TrainingFault {
                step: step_index,
                context: "loss report contains non-finite values".into(),
            });
        }
        Ok(report)
    }

    pub(crate) fn last_g_parts(&self) -> (f64, f64, f64) {
        self.last_g_parts
    }

    pub(crate) fn set_last_g_parts(&mut self, parts: (f64, f64, f64)) {
        self.last_g_parts = parts;
    }

    /// Runs the loop to `cfg.n_iter`, reporting losses per step and
    /// checkpoints at the configured cadence plus once at the end.
    pub fn train(&mut self, sampler: &TaskSampler, observer: &mut dyn TrainObserver) -> Result<()> {
        while self.iter < self.cfg.n_iter {
            let report = self.step(sampler)?;
            observer.on_step(self.iter, &report)?;
            if self.cfg.checkpoint_every > 0
                && self.iter % self.cfg.checkpoint_every == 0
                && self.iter < self.cfg.n_iter
            {
                observer.on_checkpoint(self, false)?;
            }
        }
        observer.on_checkpoint(self, true)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_set(v: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::scalar(v)).unwrap();
        p
    }

    #[test]
    fn lr_schedule_shape() {
        assert_eq!(lr_schedule(0, 100), 1.0);
        assert_eq!(lr_schedule(49, 100), 1.0);
        assert_eq!(lr_schedule(50, 100), 1.0);
        assert!((lr_schedule(75, 100) - 0.5).abs() < 1e-12);
        assert!(lr_schedule(99, 100) > 0.0);
        assert!(lr_schedule(99, 100) < 0.05);
    }

    #[test]
    fn reptile_noop_when_inner_equals_outer() {
        let mut outer = scalar_set(0.7);
        let inner = scalar_set(0.7);
        let mut opt = OuterOpt::Adam(AdamState::new(&outer, 0.1, 0.5, 0.999));
        reptile_outer_step(&mut outer, &inner, &mut opt, 1.0).unwrap();
        assert_eq!(outer.get("w").unwrap().data()[0], 0.7);
    }

    #[test]
    fn reptile_single_quadratic_step_matches_hand_rolled() {
        // phi_B = 0, task c = 1, inner SGD alpha=0.5, k=1, outer SGD eps=1
        // -> phi_A = 0.5, pseudo-grad = -0.5, phi_B' = 0.5
        let mut outer = scalar_set(0.0);
        let mut inner = outer.clone();
        // inner SGD on L = 0.5*(phi - 1)^2: grad = phi - 1 = -1
        inner.grad_at_mut(0).data_mut()[0] = -1.0;
        crate::tensor::sgd_step(&mut inner, 0.5);
        assert_eq!(inner.get("w").unwrap().data()[0], 0.5);
        let mut opt = OuterOpt::Sgd { lr: 1.0 };
        reptile_outer_step(&mut outer, &inner, &mut opt, 1.0).unwrap();
        assert!((outer.get("w").unwrap().data()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn outer_step_direction_parallel_to_inner_delta() {
        // under SGD the outer displacement must be exactly parallel to
        // phi_A - phi_B (cosine 1 within 1e-7)
        let mut outer = ParamSet::<f64>::new();
        outer.insert("a", Tensor::new(vec![3], vec![0.3, -0.8, 0.1]).unwrap()).unwrap();
        outer.insert("b", Tensor::new(vec![2], vec![1.0, 2.0]).unwrap()).unwrap();
        let mut inner = outer.clone();
        for i in 0..inner.len() {
            for v in inner.get_mut_at(i).data_mut() {
                *v += 0.01 * (*v + 0.3);
            }
        }
        let before = outer.clone();
        let mut opt = OuterOpt::Sgd { lr: 0.25 };
        reptile_outer_step(&mut outer, &inner, &mut opt, 1.0).unwrap();

        let mut dot = 0.0;
        let mut n1 = 0.0;
        let mut n2 = 0.0;
        for i in 0..outer.len() {
            for j in 0..outer.value_at(i).numel() {
                let moved = outer.value_at(i).data()[j] - before.value_at(i).data()[j];
                let target = inner.value_at(i).data()[j] - before.value_at(i).data()[j];
                dot += moved * target;
                n1 += moved * moved;
                n2 += target * target;
            }
        }
        let cos = dot / (n1.sqrt() * n2.sqrt());
        assert!((cos - 1.0).abs() < 1e-7, "cosine {cos}");
    }

    #[test]
    fn structural_mismatch_rejected() {
        let mut outer = scalar_set(1.0);
        let mut other = ParamSet::<f64>::new();
        other.insert("different", Tensor::scalar(1.0)).unwrap();
        let mut opt = OuterOpt::Sgd { lr: 0.1 };
        assert!(reptile_outer_step(&mut outer, &other, &mut opt, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = MetaConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.n_iter, 200_000);
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.k_inner, 1);
        assert_eq!(cfg.k_fewshot, 10);
        assert_eq!(cfg.gen_every, 5);
        assert_eq!(cfg.alpha_disc, 1e-4);
        cfg.k_inner = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = MetaConfig::default();
        cfg.gen_every = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = MetaConfig::default();
        cfg.alpha_gen = 0.0;
        assert!(cfg.validate().is_err());
    }
}
