//! The two alignment losses with exact analytic gradients.
//!
//! Stage 1 is a margin-hinge ranking loss over (real, policy-generated)
//! sample pairs against a frozen reference model. Stage 2 is the pairwise
//! preference loss over curated (winner, loser) pairs. Both estimate the
//! timestep sum by drawing one uniform t per batch element.
//!
//! All per-element noise draws derive from the element's string id, so losses
//! are pure functions of (params, batch, seed) and bitwise invariant under
//! batch reordering.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{
    forward_diffuse, sum_sq_err, Condition, Denoiser, DenoiserKind, NoiseSchedule, Role, Sample,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed_str, normal_vec, rng_from};

/// How the policy branch of the stage-1 loss constructs (x_t, eps).
///
/// `ForwardNoiseTarget` re-noises the generated sample with fresh noise and
/// uses that noise as the target, symmetric with the real branch.
/// `DetachedSelfPrediction` uses the trainable model's own prediction as the
/// target, treated as a constant; its squared-error term is then identically
/// zero with zero gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyBranchMode {
    ForwardNoiseTarget,
    DetachedSelfPrediction,
}

impl Default for PolicyBranchMode {
    fn default() -> Self {
        PolicyBranchMode::ForwardNoiseTarget
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage1Config {
    /// Hinge margin m; optimization stops on elements already ranked below it.
    pub margin: f64,
    /// Sampling steps when regenerating policy batches.
    pub policy_steps: usize,
    pub guidance_scale: f64,
    pub policy_branch: PolicyBranchMode,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Stage1Config {
            margin: -0.001,
            policy_steps: 10,
            guidance_scale: 1.0,
            policy_branch: PolicyBranchMode::ForwardNoiseTarget,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stage2Config {
    /// Regularization strength; the loss scales the inner argument by beta * T.
    pub beta: f64,
}

impl Stage2Config {
    pub fn new(beta: f64) -> Result<Self> {
        if beta <= 0.0 || !beta.is_finite() {
            return Err(Error::invalid("beta must be positive and finite"));
        }
        Ok(Stage2Config { beta })
    }

    /// Preset matching the SD-1.5 configuration.
    pub fn preset_sd15() -> Self {
        Stage2Config { beta: 2000.0 }
    }

    /// Preset matching the SD-3.5-M configuration.
    pub fn preset_sd35m() -> Self {
        Stage2Config { beta: 100.0 }
    }
}

/// One element of a stage-1 batch. `id` keys the element's private noise
/// stream; two elements of one batch must not share an id.
#[derive(Clone, Debug)]
pub struct Stage1Item {
    pub sample: Sample,
    pub condition: Condition,
    pub id: String,
}

/// A policy-generated sample. `generated_by_policy` is the caller's assertion
/// that the sample came from the current trainable model.
#[derive(Clone, Debug)]
pub struct PolicyItem {
    pub sample: Sample,
    pub condition: Condition,
    pub id: String,
    pub generated_by_policy: bool,
}

/// A (winner, loser) supervision pair for the stage-2 loss.
#[derive(Clone, Debug)]
pub struct PairItem {
    pub winner: Sample,
    pub loser: Sample,
    pub condition: Condition,
    pub id: String,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Mean real-branch term (stage 1) or winner term (stage 2).
    pub real_term: f64,
    /// Mean policy-branch term (stage 1) or loser term (stage 2).
    pub policy_term: f64,
    /// Fraction of batch elements with an active hinge (stage 1; 1.0 for stage 2).
    pub hinge_active_fraction: f64,
    /// Stage 2: mean of (loser error diff - winner error diff); positive means
    /// winners are implicitly preferred. Stage 1: negated mean inner value.
    pub implicit_reward_gap: f64,
    /// Per-element pre-sigmoid argument (stage 2) or hinge inner value
    /// (stage 1), in canonical id order.
    pub inner_args: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LossResult {
    pub loss: f64,
    /// Gradient with respect to the trainable model, flat layout.
    pub grad: Vec<f64>,
    pub diagnostics: Diagnostics,
}

fn require_roles(trainable: &Denoiser, reference: &Denoiser) -> Result<()> {
    if trainable.role != Role::Trainable {
        return Err(Error::WrongRole {
            expected: "trainable".into(),
            actual: trainable.role.to_string(),
        });
    }
    if reference.role != Role::Reference && reference.role != Role::Oracle {
        return Err(Error::WrongRole {
            expected: "reference".into(),
            actual: reference.role.to_string(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable -log sigmoid(x) = softplus(-x).
fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-(-x).abs()).exp().ln_1p()
}

/// Noise-stream seed keyed by the bit pattern of a sample.
fn content_seed(parent: u64, sample: &Sample) -> u64 {
    use sha2::{Digest, Sha256};
    let mut hasher = Sha256::new();
    hasher.update(parent.to_le_bytes());
    for v in &sample.data {
        hasher.update(v.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// Stage-1 ranking loss:
/// mean over elements of max(m, -(d_ref_real - d_phi_real) + (d_ref_pol - d_phi_pol))
/// where d_* are sum-of-squares denoising errors at a per-element uniform t.
/// Only `phi` receives gradient; elements with inner value < m contribute none.
pub fn stage1_dro_loss(
    phi: &Denoiser,
    theta_ref: &Denoiser,
    real_batch: &[Stage1Item],
    policy_batch: &[PolicyItem],
    cfg: &Stage1Config,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LossResult> {
    require_roles(phi, theta_ref)?;
    if real_batch.is_empty() || policy_batch.is_empty() {
        return Err(Error::Empty("stage-1 batch".into()));
    }
    if real_batch.len() != policy_batch.len() {
        return Err(Error::invalid(format!(
            "real/policy batch length mismatch: {} vs {}",
            real_batch.len(),
            policy_batch.len()
        )));
    }
    if let Some(bad) = policy_batch.iter().find(|p| !p.generated_by_policy) {
        return Err(Error::invalid(format!(
            "policy batch element {} not tagged as policy-generated",
            bad.id
        )));
    }
    let net = phi.net().ok_or_else(|| {
        Error::invalid("stage-1 trainable model must be a network, not an oracle")
    })?;
    let n_params = net.param_count();
    let t_count = schedule.len();

    // Canonical element order: sort indices by real-element id so the result
    // is bitwise independent of batch order.
    let mut order: Vec<usize> = (0..real_batch.len()).collect();
    order.sort_by(|&a, &b| real_batch[a].id.cmp(&real_batch[b].id));

    let mut grad = vec![0.0; n_params];
    let mut loss_sum = 0.0;
    let mut real_term_sum = 0.0;
    let mut policy_term_sum = 0.0;
    let mut active_count = 0usize;
    let mut inner_args = Vec::with_capacity(order.len());

    for &i in &order {
        let real = &real_batch[i];
        let policy = &policy_batch[i];
        if real.sample.shape != policy.sample.shape {
            return Err(Error::shape(
                real.sample.shape.to_string(),
                policy.sample.shape.to_string(),
            ));
        }
        let d = real.sample.len();

        let mut elem_rng = rng_from(derive_seed_str(seed, "stage1-elem", &real.id));
        let t = elem_rng.gen_range(0..t_count);

        // Real branch: fresh target noise.
        let eps_real = Sample::new(normal_vec(&mut elem_rng, d), real.sample.shape)?;
        let x_real = forward_diffuse(&real.sample, t, &eps_real, schedule)?;

        // Policy branch per mode.
        let eps_pol_fresh = Sample::new(normal_vec(&mut elem_rng, d), policy.sample.shape)?;
        let x_pol = forward_diffuse(&policy.sample, t, &eps_pol_fresh, schedule)?;
        let eps_pol_target = match cfg.policy_branch {
            PolicyBranchMode::ForwardNoiseTarget => eps_pol_fresh,
            PolicyBranchMode::DetachedSelfPrediction => {
                // Target is the model's own prediction, treated as constant.
                Sample::new(net.forward(&x_pol.data, &policy.condition, t)?, x_pol.shape)?
            }
        };

        let ref_real = theta_ref.predict_eps(&x_real, &real.condition, t)?;
        let ref_pol = theta_ref.predict_eps(&x_pol, &policy.condition, t)?;
        let phi_real = net.forward(&x_real.data, &real.condition, t)?;
        let phi_pol = net.forward(&x_pol.data, &policy.condition, t)?;

        let d_ref_real = sum_sq_err(&eps_real.data, &ref_real.data);
        let d_phi_real = sum_sq_err(&eps_real.data, &phi_real);
        let d_ref_pol = sum_sq_err(&eps_pol_target.data, &ref_pol.data);
        let d_phi_pol = sum_sq_err(&eps_pol_target.data, &phi_pol);

        let inner = -(d_ref_real - d_phi_real) + (d_ref_pol - d_phi_pol);
        let elem_loss = inner.max(cfg.margin);
        loss_sum += elem_loss;
        real_term_sum += -(d_ref_real - d_phi_real);
        policy_term_sum += d_ref_pol - d_phi_pol;
        inner_args.push(inner);

        if inner > cfg.margin {
            active_count += 1;
            // d inner / d phi = grad ||eps_real - phi(x_real)||^2 - grad ||eps_pol - phi(x_pol)||^2
            let upstream_real: Vec<f64> = phi_real
                .iter()
                .zip(&eps_real.data)
                .map(|(p, e)| 2.0 * (p - e))
                .collect();
            net.forward_backward(&x_real.data, &real.condition, t, &upstream_real, &mut grad)?;
            if cfg.policy_branch == PolicyBranchMode::ForwardNoiseTarget {
                let upstream_pol: Vec<f64> = phi_pol
                    .iter()
                    .zip(&eps_pol_target.data)
                    .map(|(p, e)| -2.0 * (p - e))
                    .collect();
                net.forward_backward(
                    &x_pol.data,
                    &policy.condition,
                    t,
                    &upstream_pol,
                    &mut grad,
                )?;
            }
            // DetachedSelfPrediction: the policy-branch term is
            // ||detach(phi) - phi||^2 = 0 with zero gradient.
        }
    }

    let n = real_batch.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "stage-1 loss".into(),
        });
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok(LossResult {
        loss,
        grad,
        diagnostics: Diagnostics {
            real_term: real_term_sum / n,
            policy_term: policy_term_sum / n,
            hinge_active_fraction: active_count as f64 / n,
            implicit_reward_gap: -(real_term_sum + policy_term_sum) / n,
            inner_args,
        },
    })
}

/// Stage-2 pairwise preference loss:
/// mean over pairs of -log sigmoid(-beta * T * (dw - dl)) where
/// dw = ||e_w - theta(x_t^w)||^2 - ||e_w - ref(x_t^w)||^2 and dl likewise for
/// the loser, at a per-pair uniform t with independent fresh noises.
pub fn stage2_dpo_loss(
    theta: &Denoiser,
    theta_ref: &Denoiser,
    pairs: &[PairItem],
    cfg: &Stage2Config,
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<LossResult> {
    require_roles(theta, theta_ref)?;
    if pairs.is_empty() {
        return Err(Error::Empty("stage-2 pair batch".into()));
    }
    if cfg.beta <= 0.0 {
        return Err(Error::invalid("beta must be positive"));
    }
    let net = theta.net().ok_or_else(|| {
        Error::invalid("stage-2 trainable model must be a network, not an oracle")
    })?;
    let n_params = net.param_count();
    let t_count = schedule.len();
    let beta_t = cfg.beta * t_count as f64;

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].id.cmp(&pairs[b].id));

    let mut grad = vec![0.0; n_params];
    let mut loss_sum = 0.0;
    let mut winner_term_sum = 0.0;
    let mut loser_term_sum = 0.0;
    let mut gap_sum = 0.0;
    let mut inner_args = Vec::with_capacity(order.len());

    for &i in &order {
        let pair = &pairs[i];
        if pair.winner.shape != pair.loser.shape {
            return Err(Error::shape(
                pair.winner.shape.to_string(),
                pair.loser.shape.to_string(),
            ));
        }
        let d = pair.winner.len();
        let elem_seed = derive_seed_str(seed, "stage2-elem", &pair.id);
        let mut elem_rng = rng_from(elem_seed);
        let t = elem_rng.gen_range(0..t_count);
        // Fresh independent noises, keyed by sample content rather than by
        // winner/loser slot so that swapping a pair swaps the noises with it
        // (this makes the inner argument exactly antisymmetric under swap).
        let eps_w = Sample::new(
            normal_vec(&mut rng_from(content_seed(elem_seed, &pair.winner)), d),
            pair.winner.shape,
        )?;
        let eps_l = Sample::new(
            normal_vec(&mut rng_from(content_seed(elem_seed, &pair.loser)), d),
            pair.loser.shape,
        )?;
        let x_w = forward_diffuse(&pair.winner, t, &eps_w, schedule)?;
        let x_l = forward_diffuse(&pair.loser, t, &eps_l, schedule)?;

        let theta_w = net.forward(&x_w.data, &pair.condition, t)?;
        let theta_l = net.forward(&x_l.data, &pair.condition, t)?;
        let ref_w = theta_ref.predict_eps(&x_w, &pair.condition, t)?;
        let ref_l = theta_ref.predict_eps(&x_l, &pair.condition, t)?;

        let dw = sum_sq_err(&eps_w.data, &theta_w) - sum_sq_err(&eps_w.data, &ref_w.data);
        let dl = sum_sq_err(&eps_l.data, &theta_l) - sum_sq_err(&eps_l.data, &ref_l.data);
        let arg = -beta_t * (dw - dl);
        loss_sum += neg_log_sigmoid(arg);
        winner_term_sum += dw;
        loser_term_sum += dl;
        gap_sum += dl - dw;
        inner_args.push(arg);

        // d loss / d arg = sigmoid(arg) - 1; d arg / d theta = -beta_t (grad dw - grad dl)
        let darg = sigmoid(arg) - 1.0;
        let coef = darg * -beta_t;
        let upstream_w: Vec<f64> = theta_w
            .iter()
            .zip(&eps_w.data)
            .map(|(p, e)| coef * 2.0 * (p - e))
            .collect();
        net.forward_backward(&x_w.data, &pair.condition, t, &upstream_w, &mut grad)?;
        let upstream_l: Vec<f64> = theta_l
            .iter()
            .zip(&eps_l.data)
            .map(|(p, e)| -coef * 2.0 * (p - e))
            .collect();
        net.forward_backward(&x_l.data, &pair.condition, t, &upstream_l, &mut grad)?;
    }

    let n = pairs.len() as f64;
    let loss = loss_sum / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite {
            context: "stage-2 loss".into(),
        });
    }
    for g in &mut grad {
        *g /= n;
    }
    Ok(LossResult {
        loss,
        grad,
        diagnostics: Diagnostics {
            real_term: winner_term_sum / n,
            policy_term: loser_term_sum / n,
            hinge_active_fraction: 1.0,
            implicit_reward_gap: gap_sum / n,
            inner_args,
        },
    })
}

/// Closed-form posterior-mean noise predictor for N(mean, cov_scale^2 I) data,
/// wrapped in the denoiser interface.
pub fn oracle_denoiser(
    mean: Vec<f64>,
    cov_scale: f64,
    schedule: &NoiseSchedule,
) -> Result<Denoiser> {
    Denoiser::oracle(mean, cov_scale, schedule)
}

/// True if the denoiser is the analytic oracle rather than a network.
pub fn is_oracle(denoiser: &Denoiser) -> bool {
    matches!(denoiser.kind, DenoiserKind::Oracle { .. })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{make_linear_schedule, EpsNet, NetSpec, Shape};
    use crate::rng::rng_from;

    fn small_net(seed: u64) -> EpsNet {
        EpsNet::new(
            NetSpec {
                data_shape: Shape::Vector(3),
                cond_dim: 2,
                time_dim: 4,
                hidden: vec![6],
            },
            &mut rng_from(seed),
        )
    }

    fn real_batch(n: usize, seed: u64) -> Vec<Stage1Item> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| Stage1Item {
                sample: Sample::new(normal_vec(&mut rng, 3), Shape::Vector(3)).unwrap(),
                condition: Condition::Embedding(vec![0.1, -0.2]),
                id: format!("real-{i:03}"),
            })
            .collect()
    }

    fn policy_batch(n: usize, seed: u64) -> Vec<PolicyItem> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| PolicyItem {
                sample: Sample::new(normal_vec(&mut rng, 3), Shape::Vector(3)).unwrap(),
                condition: Condition::Embedding(vec![0.1, -0.2]),
                id: format!("pol-{i:03}"),
                generated_by_policy: true,
            })
            .collect()
    }

    fn pair_batch(n: usize, seed: u64) -> Vec<PairItem> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|i| PairItem {
                winner: Sample::new(normal_vec(&mut rng, 3), Shape::Vector(3)).unwrap(),
                loser: Sample::new(normal_vec(&mut rng, 3), Shape::Vector(3)).unwrap(),
                condition: Condition::Null,
                id: format!("pair-{i:03}"),
            })
            .collect()
    }

    #[test]
    fn stage1_identity_fixture() {
        let net = small_net(1);
        let phi = Denoiser::from_net(net.clone(), Role::Trainable);
        let theta_ref = Denoiser::from_net(net, Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config::default();
        let res = stage1_dro_loss(
            &phi,
            &theta_ref,
            &real_batch(8, 2),
            &policy_batch(8, 3),
            &cfg,
            &schedule,
            7,
        )
        .unwrap();
        // phi == theta_ref: both deltas vanish exactly, max(-0.001, 0) = 0.
        assert!(res.loss.abs() < 1e-9, "loss = {}", res.loss);
        assert_eq!(res.diagnostics.hinge_active_fraction, 1.0);
    }

    #[test]
    fn stage1_loss_floored_by_margin() {
        let phi = Denoiser::from_net(small_net(4), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(5), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config {
            margin: -0.5,
            ..Stage1Config::default()
        };
        for seed in 0..50 {
            let res = stage1_dro_loss(
                &phi,
                &theta_ref,
                &real_batch(4, seed),
                &policy_batch(4, seed + 100),
                &cfg,
                &schedule,
                seed,
            )
            .unwrap();
            assert!(res.loss >= cfg.margin);
        }
    }

    #[test]
    fn stage1_inactive_hinge_has_zero_gradient() {
        // Huge margin: every element's inner value is below it.
        let phi = Denoiser::from_net(small_net(6), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(7), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config {
            margin: 1e9,
            ..Stage1Config::default()
        };
        let res = stage1_dro_loss(
            &phi,
            &theta_ref,
            &real_batch(1, 9),
            &policy_batch(1, 10),
            &cfg,
            &schedule,
            11,
        )
        .unwrap();
        assert_eq!(res.diagnostics.hinge_active_fraction, 0.0);
        assert!(res.grad.iter().all(|&g| g == 0.0));
        assert_eq!(res.loss, 1e9);
    }

    #[test]
    fn stage1_rejects_bad_inputs() {
        let phi = Denoiser::from_net(small_net(1), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(2), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config::default();
        // wrong roles
        assert!(matches!(
            stage1_dro_loss(
                &theta_ref,
                &phi,
                &real_batch(2, 0),
                &policy_batch(2, 1),
                &cfg,
                &schedule,
                0
            ),
            Err(Error::WrongRole { .. })
        ));
        // empty batch
        assert!(stage1_dro_loss(&phi, &theta_ref, &[], &[], &cfg, &schedule, 0).is_err());
        // untagged policy batch
        let mut pol = policy_batch(2, 1);
        pol[0].generated_by_policy = false;
        assert!(
            stage1_dro_loss(&phi, &theta_ref, &real_batch(2, 0), &pol, &cfg, &schedule, 0)
                .is_err()
        );
    }

    #[test]
    fn stage1_batch_permutation_invariance() {
        let phi = Denoiser::from_net(small_net(3), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(8), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config::default();
        let real = real_batch(6, 21);
        let pol = policy_batch(6, 22);
        let a = stage1_dro_loss(&phi, &theta_ref, &real, &pol, &cfg, &schedule, 5).unwrap();
        let mut real_rev: Vec<_> = real.clone();
        real_rev.reverse();
        let mut pol_rev: Vec<_> = pol.clone();
        pol_rev.reverse();
        let b = stage1_dro_loss(&phi, &theta_ref, &real_rev, &pol_rev, &cfg, &schedule, 5).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grad, b.grad);
        assert_eq!(a.diagnostics.inner_args, b.diagnostics.inner_args);
    }

    #[test]
    fn stage1_detached_mode_policy_term_is_zero() {
        let phi = Denoiser::from_net(small_net(3), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(8), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage1Config {
            policy_branch: PolicyBranchMode::DetachedSelfPrediction,
            ..Stage1Config::default()
        };
        let res = stage1_dro_loss(
            &phi,
            &theta_ref,
            &real_batch(4, 31),
            &policy_batch(4, 32),
            &cfg,
            &schedule,
            33,
        )
        .unwrap();
        // per-element policy term is d_ref_pol - 0, i.e. the self-prediction
        // error term vanishes; just check the loss is finite and gradient
        // comes from the real branch only (checked by gradcheck elsewhere).
        assert!(res.loss.is_finite());
    }

    #[test]
    fn stage2_identity_fixture_is_ln2() {
        let net = small_net(12);
        let theta = Denoiser::from_net(net.clone(), Role::Trainable);
        let theta_ref = Denoiser::from_net(net, Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage2Config::new(0.1).unwrap();
        let res = stage2_dpo_loss(&theta, &theta_ref, &pair_batch(8, 13), &cfg, &schedule, 14)
            .unwrap();
        assert!(
            (res.loss - std::f64::consts::LN_2).abs() < 1e-9,
            "loss = {}",
            res.loss
        );
        assert!(res.diagnostics.inner_args.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn stage2_monotone_in_winner_error() {
        // Degrading the winner prediction (holding all else fixed) must
        // strictly increase the loss: check via the arg -> loss map.
        for arg in [-2.0, -0.5, 0.0, 0.5, 2.0] {
            let worse = arg - 0.3; // larger dw => smaller arg
            assert!(neg_log_sigmoid(worse) > neg_log_sigmoid(arg));
        }
    }

    #[test]
    fn stage2_antisymmetry_of_inner_args() {
        let theta = Denoiser::from_net(small_net(15), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(16), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage2Config::new(0.5).unwrap();
        let pairs = pair_batch(5, 17);
        let swapped: Vec<PairItem> = pairs
            .iter()
            .map(|p| PairItem {
                winner: p.loser.clone(),
                loser: p.winner.clone(),
                condition: p.condition.clone(),
                id: p.id.clone(),
            })
            .collect();
        let a = stage2_dpo_loss(&theta, &theta_ref, &pairs, &cfg, &schedule, 18).unwrap();
        let b = stage2_dpo_loss(&theta, &theta_ref, &swapped, &cfg, &schedule, 18).unwrap();
        // Same per-pair t; winner/loser noises swap roles. The noise draws are
        // positional (first draw = winner), so swapping winner and loser with
        // the same id swaps which sample gets which fresh noise and exactly
        // negates the inner argument.
        for (x, y) in a.diagnostics.inner_args.iter().zip(&b.diagnostics.inner_args) {
            assert!((x + y).abs() < 1e-12, "args {x} and {y} not antisymmetric");
        }
    }

    #[test]
    fn stage2_batch_permutation_invariance_and_determinism() {
        let theta = Denoiser::from_net(small_net(19), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(20), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage2Config::new(1.0).unwrap();
        let pairs = pair_batch(6, 23);
        let a = stage2_dpo_loss(&theta, &theta_ref, &pairs, &cfg, &schedule, 9).unwrap();
        let mut rev = pairs.clone();
        rev.reverse();
        let b = stage2_dpo_loss(&theta, &theta_ref, &rev, &cfg, &schedule, 9).unwrap();
        assert_eq!(a.loss, b.loss);
        assert_eq!(a.grad, b.grad);
        let c = stage2_dpo_loss(&theta, &theta_ref, &pairs, &cfg, &schedule, 9).unwrap();
        assert_eq!(a.loss, c.loss);
        assert_eq!(a.grad, c.grad);
    }

    #[test]
    fn stage2_rejects_bad_beta() {
        assert!(Stage2Config::new(0.0).is_err());
        assert!(Stage2Config::new(-1.0).is_err());
        assert!(Stage2Config::new(f64::NAN).is_err());
    }

    #[test]
    fn stage2_loss_positive() {
        let theta = Denoiser::from_net(small_net(25), Role::Trainable);
        let theta_ref = Denoiser::from_net(small_net(26), Role::Reference);
        let schedule = make_linear_schedule(20, 0.01, 0.2).unwrap();
        let cfg = Stage2Config::new(2.0).unwrap();
        for seed in 0..20 {
            let res =
                stage2_dpo_loss(&theta, &theta_ref, &pair_batch(4, seed), &cfg, &schedule, seed)
                    .unwrap();
            assert!(res.loss > 0.0);
        }
    }
}
