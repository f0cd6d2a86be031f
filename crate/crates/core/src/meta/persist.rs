//! Checkpoint glue: serializing trainer state into the binary container
//! and rebuilding a trainer from it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MetaConfig, MetaTrainer};
use crate::artifacts::{load_checkpoint, save_checkpoint, Checkpoint, Payload};
use crate::error::{Error, Result};
use crate::nets::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::objectives::LossWeights;
use crate::tensor::{AdamState, ParamSet, Tensor};

fn rng_to_bytes(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(56);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out
}

fn rng_from_bytes(bytes: &[u8]) -> Result<ChaCha8Rng> {
    if bytes.len() != 56 {
        return Err(Error::invalid(format!("rng state blob has {} bytes, expected 56", bytes.len())));
    }
    let seed: [u8; 32] = bytes[..32].try_into().unwrap();
    let word_pos = u128::from_le_bytes(bytes[32..48].try_into().unwrap());
    let stream = u64::from_le_bytes(bytes[48..56].try_into().unwrap());
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    Ok(rng)
}

fn push_params(ckpt: &mut Checkpoint, prefix: &str, params: &ParamSet<f32>) {
    for (name, value, _) in params.iter() {
        ckpt.push_f32(format!("{prefix}/{name}"), value.clone());
    }
}

fn read_params(ckpt: &Checkpoint, prefix: &str, reference: &ParamSet<f32>) -> Result<ParamSet<f32>> {
    let mut out = ParamSet::new();
    for (name, value, _) in reference.iter() {
        let full = format!("{prefix}/{name}");
        let t = ckpt.f32_tensor(&full)?;
        if t.shape() != value.shape() {
            return Err(Error::shape(format!("checkpoint entry {full}"), t.shape(), value.shape()));
        }
        out.insert(name, t.clone())?;
    }
    Ok(out)
}

fn push_adam(ckpt: &mut Checkpoint, prefix: &str, params: &ParamSet<f32>, state: &AdamState<f32>) {
    let (m, v) = state.moments();
    for (i, (name, _, _)) in params.iter().enumerate() {
        ckpt.push_f32(format!("{prefix}/m/{name}"), m[i].clone());
        ckpt.push_f32(format!("{prefix}/v/{name}"), v[i].clone());
    }
    ckpt.push_u64(format!("{prefix}/t"), vec![state.step_count()]);
}

fn read_adam(
    ckpt: &Checkpoint,
    prefix: &str,
    params: &ParamSet<f32>,
    alpha: f64,
    beta1: f64,
    beta2: f64,
) -> Result<AdamState<f32>> {
    let mut ms = Vec::with_capacity(params.len());
    let mut vs = Vec::with_capacity(params.len());
    for (name, _, _) in params.iter() {
        ms.push(ckpt.f32_tensor(&format!("{prefix}/m/{name}"))?.clone());
        vs.push(ckpt.f32_tensor(&format!("{prefix}/v/{name}"))?.clone());
    }
    let t = ckpt.u64_scalar(&format!("{prefix}/t"))?;
    AdamState::from_parts(params, ms, vs, t, alpha, beta1, beta2)
}

/// Saves and restores full trainer state, bit-exactly.
pub struct TrainerSnapshot;

impl TrainerSnapshot {
    pub fn save(trainer: &MetaTrainer, path: &Path, config_digest: [u8; 32]) -> Result<()> {
        let mut ckpt = Checkpoint::new(config_digest, trainer.iter, rng_to_bytes(&trainer.rng));
        push_params(&mut ckpt, "gen", &trainer.g_params);
        push_params(&mut ckpt, "disc", &trainer.d_params);
        push_adam(&mut ckpt, "adam/gen", &trainer.g_params, &trainer.outer_g);
        push_adam(&mut ckpt, "adam/disc", &trainer.d_params, &trainer.outer_d);
        ckpt.push_u64("counters/d_steps", vec![trainer.d_step_counter]);
        let (ga, gc, gy) = trainer.last_g_parts();
        ckpt.push_f64("counters/last_g_parts", Tensor::new(vec![3], vec![ga, gc, gy])?);
        save_checkpoint(path, &ckpt)
    }

    /// Rebuilds a trainer. The digest of the current effective config must
    /// match the stored one unless `allow_digest_mismatch` is set.
    #[allow(clippy::too_many_arguments)]
    pub fn load(
        path: &Path,
        gen_cfg: GeneratorConfig,
        disc_cfg: DiscriminatorConfig,
        weights: LossWeights,
        cfg: MetaConfig,
        expected_digest: [u8; 32],
        allow_digest_mismatch: bool,
    ) -> Result<MetaTrainer> {
        let ckpt = load_checkpoint(path)?;
        if ckpt.config_digest != expected_digest && !allow_digest_mismatch {
            return Err(Error::ConfigDigestMismatch {
                expected: hex_prefix(&expected_digest),
                found: hex_prefix(&ckpt.config_digest),
            });
        }
        let mut trainer = MetaTrainer::new(gen_cfg, disc_cfg, weights, cfg)?;
        trainer.g_params = read_params(&ckpt, "gen", &trainer.g_params)?;
        trainer.d_params = read_params(&ckpt, "disc", &trainer.d_params)?;
        trainer.outer_g = read_adam(
            &ckpt,
            "adam/gen",
            &trainer.g_params,
            trainer.cfg.alpha_gen,
            trainer.cfg.beta1,
            trainer.cfg.beta2,
        )?;
        trainer.outer_d = read_adam(
            &ckpt,
            "adam/disc",
            &trainer.d_params,
            trainer.cfg.alpha_disc,
            trainer.cfg.beta1,
            trainer.cfg.beta2,
        )?;
        trainer.iter = ckpt.iteration;
        trainer.d_step_counter = ckpt.u64_scalar("counters/d_steps")?;
        trainer.rng = rng_from_bytes(&ckpt.rng_state)?;
        if let Some(Payload::F64(t)) = ckpt.find("counters/last_g_parts") {
            if t.numel() == 3 {
                trainer.set_last_g_parts((t.data()[0], t.data()[1], t.data()[2]));
            }
        }
        Ok(trainer)
    }

    /// Reads just the parameter sets (for translation/evaluation paths).
    pub fn load_params(
        path: &Path,
        gen: &Generator,
        disc: &Discriminator,
    ) -> Result<(ParamSet<f32>, ParamSet<f32>, u64)> {
        let ckpt = load_checkpoint(path)?;
        let g_ref = gen.init_params::<f32>(0)?;
        let d_ref = disc.init_params::<f32>(0)?;
        let g = read_params(&ckpt, "gen", &g_ref)?;
        let d = read_params(&ckpt, "disc", &d_ref)?;
        Ok((g, d, ckpt.iteration))
    }
}

fn hex_prefix(digest: &[u8; 32]) -> String {
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, AttributeSet, TaskSampler};

    fn tiny_trainer(seed: u64) -> MetaTrainer {
        let gen_cfg = GeneratorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_downsample: 2,
            n_resblocks: 1,
            n_domains: 4,
        };
        let disc_cfg = DiscriminatorConfig {
            image_size: 16,
            image_channels: 3,
            base_width: 8,
            n_layers: 3,
            n_domains: 4,
        };
        let mut cfg = MetaConfig::desk();
        cfg.seed = seed;
        cfg.batch_size = 4;
        cfg.n_iter = 6;
        MetaTrainer::new(gen_cfg, disc_cfg, LossWeights::default(), cfg).unwrap()
    }

    #[test]
    fn snapshot_roundtrip_restores_training_exactly() {
        let dir = std::env::temp_dir().join(format!("metamorph_snap_{}", std::process::id()));
        let _ = std::fs::create_dir_all(&dir);
        let ds = gen_synthetic(&AttributeSet::default_hair(), 3, 6, 16).unwrap();
        let sampler = TaskSampler::new(&ds, Some(2)).unwrap();

        // run 3 steps, snapshot, run 3 more
        let mut a = tiny_trainer(9);
        for _ in 0..3 {
            a.step(&sampler).unwrap();
        }
        let path = dir.join("mid.mtat");
        TrainerSnapshot::save(&a, &path, [5u8; 32]).unwrap();
        for _ in 0..3 {
            a.step(&sampler).unwrap();
        }

        // resume from the snapshot and run the same 3 steps
        let mut b = TrainerSnapshot::load(
            &path,
            a.gen.config().clone(),
            a.disc.config().clone(),
            a.weights.clone(),
            a.cfg.clone(),
            [5u8; 32],
            false,
        )
        .unwrap();
        assert_eq!(b.iter, 3);
        for _ in 0..3 {
            b.step(&sampler).unwrap();
        }
        assert!(a.g_params.delta(&b.g_params).unwrap().is_zero());
        assert!(a.d_params.delta(&b.d_params).unwrap().is_zero());
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn digest_mismatch_needs_override() {
        let dir = std::env::temp_dir().join(format!("metamorph_snapd_{}", std::process::id()));
        let _ = std::fs::create_dir_all(&dir);
        let a = tiny_trainer(2);
        let path = dir.join("d.mtat");
        TrainerSnapshot::save(&a, &path, [1u8; 32]).unwrap();
        let err = match TrainerSnapshot::load(
            &path,
            a.gen.config().clone(),
            a.disc.config().clone(),
            a.weights.clone(),
            a.cfg.clone(),
            [2u8; 32],
            false,
        ) {
            Err(e) => e,
            Ok(_) => panic!("digest mismatch must be rejected"),
        };
        assert!(matches!(err, Error::ConfigDigestMismatch { .. }));
        // explicit override loads anyway
        let b = TrainerSnapshot::load(
            &path,
            a.gen.config().clone(),
            a.disc.config().clone(),
            a.weights.clone(),
            a.cfg.clone(),
            [2u8; 32],
            true,
        )
        .unwrap();
        assert!(a.g_params.delta(&b.g_params).unwrap().is_zero());
        let _ = std::fs::remove_dir_all(&dir);
    }
}
