use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    ancestral_sample, make_linear_schedule, Condition, Denoiser, EpsNet, NetSpec, NoiseSchedule,
    Role, Sample, Shape,
};
use crate::error::{Error, Result};
use crate::objectives::{
    stage1_dro_loss, stage2_dpo_loss, PairItem, PolicyItem, Stage1Config, Stage1Item, Stage2Config,
};
use crate::rng::{derive_seed, normal_vec, rng_from};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    Stage1,
    Stage2,
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Stage1 => write!(f, "stage1"),
            LossKind::Stage2 => write!(f, "stage2"),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckTrial {
    pub trial: usize,
    pub loss: f64,
    pub max_rel_err: f64,
    /// Coordinates compared (those with |analytic| > 1e-8).
    pub checked: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub kind: LossKind,
    pub tol: f64,
    pub trials: Vec<GradCheckTrial>,
    pub pass: bool,
}

const FD_H: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-8;

/// Compare each loss's analytic gradient against central finite differences
/// on small random networks and batches. Fails if any trial's max relative
/// error exceeds `tol`.
pub fn gradient_check(kind: LossKind, trials: usize, tol: f64, seed: u64) -> Result<GradCheckReport> {
    if tol <= 0.0 {
        return Err(Error::invalid("tolerance must be positive"));
    }
    let schedule = make_linear_schedule(12, 1e-3, 0.1)?;
    let mut results = Vec::with_capacity(trials);
    let mut pass = true;
    for trial in 0..trials {
        let trial_seed = derive_seed(seed, "gradcheck-trial", trial as u64);
        let r = match kind {
            LossKind::Stage1 => one_stage1_trial(trial, trial_seed, &schedule)?,
            LossKind::Stage2 => one_stage2_trial(trial, trial_seed, &schedule)?,
        };
        pass &= r.max_rel_err < tol;
        results.push(r);
    }
    Ok(GradCheckReport {
        kind,
        tol,
        trials: results,
        pass,
    })
}

fn toy_models(seed: u64) -> (Denoiser, Denoiser) {
    let spec = NetSpec {
        data_shape: Shape::Vector(2),
        cond_dim: 2,
        time_dim: 4,
        hidden: vec![6],
    };
    let trainable = EpsNet::new(spec.clone(), &mut rng_from(derive_seed(seed, "net", 0)));
    let reference = EpsNet::new(spec, &mut rng_from(derive_seed(seed, "net", 1)));
    (
        Denoiser::from_net(trainable, Role::Trainable),
        Denoiser::from_net(reference, Role::Reference),
    )
}

fn random_condition(rng: &mut rand_chacha::ChaCha8Rng) -> Condition {
    if rng.gen_bool(0.25) {
        Condition::Null
    } else {
        Condition::Embedding(normal_vec(rng, 2))
    }
}

fn compare(
    trial: usize,
    loss: f64,
    analytic: &[f64],
    mut eval: impl FnMut(&[f64]) -> Result<f64>,
    params: &[f64],
) -> Result<GradCheckTrial> {
    let mut max_rel_err: f64 = 0.0;
    let mut checked = 0;
    // Coordinates far below the gradient's overall scale sit under the
    // roundoff floor of central differences at h=1e-5, so the mask is both
    // absolute and relative.
    let scale = analytic.iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let floor = GRAD_FLOOR.max(1e-6 * scale);
    for k in 0..params.len() {
        if analytic[k].abs() <= floor {
            continue;
        }
        checked += 1;
        let mut plus = params.to_vec();
        plus[k] += FD_H;
        let mut minus = params.to_vec();
        minus[k] -= FD_H;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * FD_H);
        let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs());
        max_rel_err = max_rel_err.max(rel);
    }
    Ok(GradCheckTrial {
        trial,
        loss,
        max_rel_err,
        checked,
    })
}

fn one_stage1_trial(trial: usize, seed: u64, schedule: &NoiseSchedule) -> Result<GradCheckTrial> {
    let (phi, theta_ref) = toy_models(seed);
    // A deep margin keeps every hinge active so the full gradient path is
    // exercised; hinge deadness is covered by its own tests.
    let cfg = Stage1Config {
        policy_steps: 4,
        margin: -5.0,
        ..Stage1Config::default()
    };
    let mut rng = rng_from(derive_seed(seed, "batch", 0));
    let mut reals = Vec::new();
    let mut policies = Vec::new();
    for i in 0..3 {
        let condition = random_condition(&mut rng);
        reals.push(Stage1Item {
            sample: Sample::new(normal_vec(&mut rng, 2), Shape::Vector(2))?,
            condition: condition.clone(),
            id: format!("r{i}"),
        });
        let (generated, _) = ancestral_sample(
            &phi,
            &condition,
            schedule,
            cfg.policy_steps,
            cfg.guidance_scale,
            &mut rng,
        )?;
        policies.push(PolicyItem {
            sample: generated,
            condition,
            id: format!("p{i}"),
            generated_by_policy: true,
        });
    }
    let loss_seed = derive_seed(seed, "loss", 0);
    let res = stage1_dro_loss(&phi, &theta_ref, &reals, &policies, &cfg, schedule, loss_seed)?;
    let params = phi.net().unwrap().flatten_params();
    let eval = |p: &[f64]| -> Result<f64> {
        let mut probe = phi.clone();
        probe.net_mut().unwrap().set_from_flat(p)?;
        Ok(
            stage1_dro_loss(&probe, &theta_ref, &reals, &policies, &cfg, schedule, loss_seed)?
                .loss,
        )
    };
    compare(trial, res.loss, &res.grad, eval, &params)
}

fn one_stage2_trial(trial: usize, seed: u64, schedule: &NoiseSchedule) -> Result<GradCheckTrial> {
    let (theta, theta_ref) = toy_models(seed);
    // Moderate beta keeps the sigmoid away from saturation so finite
    // differences stay informative.
    let cfg = Stage2Config { beta: 0.5 };
    let mut rng = rng_from(derive_seed(seed, "batch", 0));
    let pairs: Vec<PairItem> = (0..3)
        .map(|i| {
            PairItem {
                winner: Sample::new(normal_vec(&mut rng, 2), Shape::Vector(2)).unwrap(),
                loser: Sample::new(normal_vec(&mut rng, 2), Shape::Vector(2)).unwrap(),
                condition: random_condition(&mut rng),
                id: format!("pair{i}"),
            }
        })
        .collect();
    let loss_seed = derive_seed(seed, "loss", 0);
    let res = stage2_dpo_loss(&theta, &theta_ref, &pairs, &cfg, schedule, loss_seed)?;
    let params = theta.net().unwrap().flatten_params();
    let eval = |p: &[f64]| -> Result<f64> {
        let mut probe = theta.clone();
        probe.net_mut().unwrap().set_from_flat(p)?;
        Ok(stage2_dpo_loss(&probe, &theta_ref, &pairs, &cfg, schedule, loss_seed)?.loss)
    };
    compare(trial, res.loss, &res.grad, eval, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_stage1_trials_within_tolerance() {
        let report = gradient_check(LossKind::Stage1, 10, 1e-4, 2024).unwrap();
        assert!(report.pass, "trials: {:?}", report.trials);
        assert!(report.trials.iter().all(|t| t.checked > 0));
    }

    #[test]
    fn ten_stage2_trials_within_tolerance() {
        let report = gradient_check(LossKind::Stage2, 10, 1e-4, 2025).unwrap();
        assert!(report.pass, "trials: {:?}", report.trials);
    }

    #[test]
    fn identity_anchor_gives_ln2_inside_harness() {
        let schedule = make_linear_schedule(12, 1e-3, 0.1).unwrap();
        let (theta, _) = toy_models(7);
        let theta_ref = theta.with_role(Role::Reference);
        let pairs = vec![PairItem {
            winner: Sample::new(vec![0.1, 0.2], Shape::Vector(2)).unwrap(),
            loser: Sample::new(vec![-0.3, 0.4], Shape::Vector(2)).unwrap(),
            condition: Condition::Null,
            id: "a".into(),
        }];
        let res = stage2_dpo_loss(
            &theta,
            &theta_ref,
            &pairs,
            &Stage2Config::preset_sd15(),
            &schedule,
            1,
        )
        .unwrap();
        assert!((res.loss - std::f64::consts::LN_2).abs() < 1e-9);
    }

    #[test]
    fn rejects_nonpositive_tolerance() {
        assert!(gradient_check(LossKind::Stage1, 1, 0.0, 1).is_err());
    }
}
