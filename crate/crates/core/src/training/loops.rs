use rand::Rng;

use crate::curation::{PreferencePair, ReferenceSample};
use crate::diffusion::{ancestral_sample, forward_diffuse, Condition, Denoiser, NoiseSchedule, Role, Sample};
use crate::error::{Error, Result};
use crate::objectives::{stage1_dro_loss, stage2_dpo_loss, PairItem, PolicyItem, Stage1Item};
use crate::rng::{derive_seed, derive_seed_str, normal_vec, rng_from};

use super::checkpoint::{params_hash, Checkpoint};
use super::optimizer::{optimizer_step, OptState};
use super::{Stage, StepLog, TrainConfig};

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Denoiser,
    pub logs: Vec<StepLog>,
    pub checkpoint: Checkpoint,
}

/// Whether the condition of element `id` is dropped to NULL this step.
/// Keyed by (step seed, element id) so the decision is independent of how the
/// effective batch is split across accumulation chunks.
pub fn dropout_hits(step_seed: u64, id: &str, p: f64) -> bool {
    p > 0.0 && rng_from(derive_seed_str(step_seed, "dropout", id)).gen_bool(p)
}

fn lr_at(cfg: &TrainConfig, step: usize) -> f64 {
    if cfg.warmup_steps > 0 && step < cfg.warmup_steps {
        cfg.lr * (step + 1) as f64 / cfg.warmup_steps as f64
    } else {
        cfg.lr
    }
}

fn mask_to_adapter_only(grad: &mut [f64], adapter_range: std::ops::Range<usize>) {
    for g in &mut grad[..adapter_range.start] {
        *g = 0.0;
    }
    for g in &mut grad[adapter_range.end..] {
        *g = 0.0;
    }
}

fn require_net(model: &Denoiser, what: &str) -> Result<()> {
    if model.net().is_none() {
        return Err(Error::invalid(format!("{what} must be a network, not an oracle")));
    }
    Ok(())
}

fn restore_or_init(
    base: &Denoiser,
    cfg: &TrainConfig,
    stage: Stage,
    ref_hash: &str,
    resume: Option<&Checkpoint>,
) -> Result<(Denoiser, OptState, usize)> {
    match resume {
        None => {
            let model = base.with_role(Role::Trainable);
            let n = model.net().unwrap().param_count();
            Ok((model, OptState::new(&cfg.optimizer, n), 0))
        }
        Some(ckpt) => {
            if ckpt.stage != stage {
                return Err(Error::Config(format!(
                    "checkpoint stage {} does not match requested stage {stage}",
                    ckpt.stage
                )));
            }
            if ckpt.ref_params_hash != ref_hash {
                return Err(Error::Config(
                    "checkpoint was trained against a different reference model".into(),
                ));
            }
            if ckpt.step > cfg.steps {
                return Err(Error::Config(format!(
                    "checkpoint step {} exceeds configured budget {}",
                    ckpt.step, cfg.steps
                )));
            }
            Ok((ckpt.to_denoiser()?, ckpt.opt.clone(), ckpt.step))
        }
    }
}

/// Stage 1: distribution alignment. The reference is a frozen copy of `base`;
/// the trainable model starts from `base` and each step ranks a fresh real
/// mini-batch against policy samples regenerated from the current model.
pub fn run_stage1(
    base: &Denoiser,
    real_data: &[ReferenceSample],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Stage1 {
        return Err(Error::Config(format!("run_stage1 got stage {}", cfg.stage)));
    }
    if real_data.is_empty() {
        return Err(Error::Empty("stage-1 real data".into()));
    }
    require_net(base, "stage-1 base model")?;
    let theta_ref = base.with_role(Role::Reference);
    let ref_hash = params_hash(&theta_ref.net().unwrap().flatten_params());
    let (mut phi, mut opt, start_step) = restore_or_init(base, cfg, Stage::Stage1, &ref_hash, resume)?;

    let eff = cfg.effective_batch();
    let mut logs = Vec::new();
    for step in start_step..cfg.steps {
        let step_seed = derive_seed(cfg.seed, "stage1-step", step as u64);
        let mut pick = rng_from(derive_seed(step_seed, "pick", 0));

        // Draw the whole effective batch up front so results do not depend on
        // the accumulation split; element ids key all per-element randomness.
        let mut reals = Vec::with_capacity(eff);
        let mut policies = Vec::with_capacity(eff);
        for j in 0..eff {
            let r = &real_data[pick.gen_range(0..real_data.len())];
            let id = format!("{j:05}-{}", r.source_id);
            let condition = if dropout_hits(step_seed, &id, cfg.prompt_dropout) {
                Condition::Null
            } else {
                r.condition.clone()
            };
            let mut gen_rng = rng_from(derive_seed_str(step_seed, "policy", &id));
            let (generated, _) = ancestral_sample(
                &phi,
                &condition,
                schedule,
                cfg.stage1.policy_steps,
                cfg.stage1.guidance_scale,
                &mut gen_rng,
            )?;
            reals.push(Stage1Item {
                sample: r.sample.clone(),
                condition: condition.clone(),
                id: id.clone(),
            });
            policies.push(PolicyItem {
                sample: generated,
                condition,
                id: format!("pol-{id}"),
                generated_by_policy: true,
            });
        }

        let n_params = phi.net().unwrap().param_count();
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        let mut hinge = 0.0;
        let mut gap = 0.0;
        for chunk in 0..cfg.accumulation {
            let lo = chunk * cfg.batch;
            let hi = lo + cfg.batch;
            let res = stage1_dro_loss(
                &phi,
                &theta_ref,
                &reals[lo..hi],
                &policies[lo..hi],
                &cfg.stage1,
                schedule,
                step_seed,
            )?;
            let k = cfg.accumulation as f64;
            for (g, rg) in grad.iter_mut().zip(&res.grad) {
                *g += rg / k;
            }
            loss += res.loss / k;
            hinge += res.diagnostics.hinge_active_fraction / k;
            gap += res.diagnostics.implicit_reward_gap / k;
        }
        if cfg.adapter_only {
            let range = phi.net().unwrap().adapter_param_range();
            mask_to_adapter_only(&mut grad, range);
        }
        let lr = lr_at(cfg, step);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut params = phi.net().unwrap().flatten_params();
        optimizer_step(&mut params, &grad, &mut opt, &cfg.optimizer, lr)?;
        phi.net_mut().unwrap().set_from_flat(&params)?;
        logs.push(StepLog {
            step,
            loss,
            grad_norm,
            lr,
            hinge_active_fraction: hinge,
            implicit_reward_gap: gap,
        });
    }

    let checkpoint = Checkpoint::from_net(
        phi.net().unwrap(),
        Stage::Stage1,
        cfg.steps,
        cfg,
        &ref_hash,
        &opt,
    );
    Ok(TrainOutcome {
        model: phi,
        logs,
        checkpoint,
    })
}

/// Stage 2: preference learning. Both the trainable model and the frozen
/// reference start from the stage-1 output.
pub fn run_stage2(
    stage1_model: &Denoiser,
    pairs: &[PreferencePair],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
    resume: Option<&Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::Stage2 {
        return Err(Error::Config(format!("run_stage2 got stage {}", cfg.stage)));
    }
    if pairs.is_empty() {
        return Err(Error::Empty("stage-2 preference pairs".into()));
    }
    require_net(stage1_model, "stage-2 initial model")?;
    let theta_ref = stage1_model.with_role(Role::Reference);
    let ref_hash = params_hash(&theta_ref.net().unwrap().flatten_params());
    let (mut theta, mut opt, start_step) =
        restore_or_init(stage1_model, cfg, Stage::Stage2, &ref_hash, resume)?;

    let eff = cfg.effective_batch();
    let mut logs = Vec::new();
    for step in start_step..cfg.steps {
        let step_seed = derive_seed(cfg.seed, "stage2-step", step as u64);
        let mut pick = rng_from(derive_seed(step_seed, "pick", 0));
        let batch: Vec<PairItem> = (0..eff)
            .map(|j| {
                let p = &pairs[pick.gen_range(0..pairs.len())];
                PairItem {
                    winner: p.winner.clone(),
                    loser: p.loser.clone(),
                    condition: p.condition.clone(),
                    id: format!("{j:05}-{}", p.source_id),
                }
            })
            .collect();

        let n_params = theta.net().unwrap().param_count();
        let mut grad = vec![0.0; n_params];
        let mut loss = 0.0;
        let mut gap = 0.0;
        for chunk in 0..cfg.accumulation {
            let lo = chunk * cfg.batch;
            let hi = lo + cfg.batch;
            let res = stage2_dpo_loss(
                &theta,
                &theta_ref,
                &batch[lo..hi],
                &cfg.stage2,
                schedule,
                step_seed,
            )?;
            let k = cfg.accumulation as f64;
            for (g, rg) in grad.iter_mut().zip(&res.grad) {
                *g += rg / k;
            }
            loss += res.loss / k;
            gap += res.diagnostics.implicit_reward_gap / k;
        }
        if cfg.adapter_only {
            let range = theta.net().unwrap().adapter_param_range();
            mask_to_adapter_only(&mut grad, range);
        }
        let lr = lr_at(cfg, step);
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let mut params = theta.net().unwrap().flatten_params();
        optimizer_step(&mut params, &grad, &mut opt, &cfg.optimizer, lr)?;
        theta.net_mut().unwrap().set_from_flat(&params)?;
        logs.push(StepLog {
            step,
            loss,
            grad_norm,
            lr,
            hinge_active_fraction: 1.0,
            implicit_reward_gap: gap,
        });
    }

    let checkpoint = Checkpoint::from_net(
        theta.net().unwrap(),
        Stage::Stage2,
        cfg.steps,
        cfg,
        &ref_hash,
        &opt,
    );
    Ok(TrainOutcome {
        model: theta,
        logs,
        checkpoint,
    })
}

/// Plain denoising pretraining with Adam: the utility that produces base,
/// strong, and deliberately under-trained weak models.
pub fn pretrain(
    init: &Denoiser,
    data: &[ReferenceSample],
    steps: usize,
    lr: f64,
    batch: usize,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<Denoiser> {
    if data.is_empty() {
        return Err(Error::Empty("pretraining data".into()));
    }
    if batch == 0 {
        return Err(Error::Config("batch must be >= 1".into()));
    }
    require_net(init, "pretraining model")?;
    let mut model = init.with_role(Role::Trainable);
    let kind = super::OptimizerKind::default();
    let n_params = model.net().unwrap().param_count();
    let mut opt = OptState::new(&kind, n_params);
    let t_count = schedule.len();

    for step in 0..steps {
        let mut rng = rng_from(derive_seed(seed, "pretrain-step", step as u64));
        let mut grad = vec![0.0; n_params];
        let net = model.net().unwrap().clone();
        for _ in 0..batch {
            let r = &data[rng.gen_range(0..data.len())];
            let t = rng.gen_range(0..t_count);
            let d = r.sample.len();
            let eps = Sample::new(normal_vec(&mut rng, d), r.sample.shape)?;
            let x_t = forward_diffuse(&r.sample, t, &eps, schedule)?;
            let pred = net.forward(&x_t.data, &r.condition, t)?;
            let upstream: Vec<f64> = pred
                .iter()
                .zip(&eps.data)
                .map(|(p, e)| 2.0 * (p - e) / batch as f64)
                .collect();
            net.forward_backward(&x_t.data, &r.condition, t, &upstream, &mut grad)?;
        }
        let mut params = net.flatten_params();
        optimizer_step(&mut params, &grad, &mut opt, &kind, lr)?;
        model.net_mut().unwrap().set_from_flat(&params)?;
    }
    Ok(model)
}
