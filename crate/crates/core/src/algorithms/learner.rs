use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{AlgoConfig, AlgoKind};
use super::gamma::{fold_rewards, GammaGrid};
use super::targets::{td_targets, TargetInputs, TargetNets};
use crate::agents::{ActorKind, ActorSpec, AgentCheckpoint, CriticSpec, HeadKind};
use crate::distributional::quantile_fractions;
use crate::error::{Error, Result};
use crate::nn::{soft_update, Optimizer, ParameterSet, Tape, Var};
use crate::replay::Batch;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// `None` when the actor step was skipped by the delay counter.
    pub actor_loss: Option<f64>,
    pub critic_grad_norm: f64,
}

/// Owns the online and target networks of one agent plus its optimizers and
/// performs sequential updates.
#[derive(Clone, Debug)]
pub struct Learner {
    cfg: AlgoConfig,
    actor_spec: ActorSpec,
    critic_spec: CriticSpec,
    grid: GammaGrid,
    pub actor: ParameterSet,
    pub actor_target: ParameterSet,
    pub critics: Vec<ParameterSet>,
    pub critic_targets: Vec<ParameterSet>,
    actor_opt: Optimizer,
    critic_opts: Vec<Optimizer>,
    rng: ChaCha8Rng,
    critic_steps: u64,
    actor_steps: u64,
}

impl Learner {
    /// Fresh networks initialized from `seed`.
    pub fn new(cfg: AlgoConfig, actor_spec: ActorSpec, critic_spec: CriticSpec, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = actor_spec.init(&mut rng)?;
        let critics = (0..cfg.algo.n_critics())
            .map(|_| critic_spec.init(&mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::from_params(cfg, actor_spec, critic_spec, actor, critics, rng.random())
    }

    pub fn from_params(cfg: AlgoConfig, actor_spec: ActorSpec, critic_spec: CriticSpec, actor: ParameterSet, critics: Vec<ParameterSet>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        actor_spec.validate()?;
        critic_spec.validate()?;
        if cfg.algo == AlgoKind::Sac && actor_spec.kind != ActorKind::Gaussian {
            return Err(Error::config("agent.actor.kind", "sac needs a gaussian actor"));
        }
        if critic_spec.n_gamma_heads != cfg.n_gamma_heads() {
            return Err(Error::config(
                "agent.critic.n_gamma_heads",
                format!("critic has {} heads, algorithm needs {}", critic_spec.n_gamma_heads, cfg.n_gamma_heads()),
            ));
        }
        if critic_spec.obs_dim != actor_spec.obs_dim || critic_spec.action_dim != actor_spec.action_dim {
            return Err(Error::config("agent", "actor and critic dimensions differ"));
        }
        if critics.len() != cfg.algo.n_critics() {
            return Err(Error::InvalidArgument(format!("{:?} needs {} critics, got {}", cfg.algo, cfg.algo.n_critics(), critics.len())));
        }
        actor_spec.network().check_params(&actor)?;
        for c in &critics {
            critic_spec.network().check_params(c)?;
        }
        let grid = cfg.grid()?;
        Ok(Learner {
            actor_opt: Optimizer::new(cfg.actor_optimizer.clone())?,
            critic_opts: critics
                .iter()
                .map(|_| Optimizer::new(cfg.critic_optimizer.clone()))
                .collect::<Result<_>>()?,
            actor_target: actor.clone(),
            critic_targets: critics.clone(),
            actor,
            critics,
            cfg,
            actor_spec,
            critic_spec,
            grid,
            rng: ChaCha8Rng::seed_from_u64(seed),
            critic_steps: 0,
            actor_steps: 0,
        })
    }

    pub fn config(&self) -> &AlgoConfig {
        &self.cfg
    }

    pub fn actor_spec(&self) -> &ActorSpec {
        &self.actor_spec
    }

    pub fn critic_spec(&self) -> &CriticSpec {
        &self.critic_spec
    }

    pub fn grid(&self) -> &GammaGrid {
        &self.grid
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps
    }

    pub fn checkpoint(&self, version: u64, fingerprint: u32) -> AgentCheckpoint {
        AgentCheckpoint {
            version,
            fingerprint,
            actor: self.actor.clone(),
            critics: self.critics.clone(),
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<usize> {
        let rows = batch.len();
        if rows == 0 {
            return Err(Error::Empty("empty batch".into()));
        }
        if batch.obs_dim != self.actor_spec.obs_dim || batch.action_dim != self.actor_spec.action_dim {
            return Err(Error::shape(
                "batch (obs, action) dims",
                format!("({}, {})", self.actor_spec.obs_dim, self.actor_spec.action_dim),
                format!("({}, {})", batch.obs_dim, batch.action_dim),
            ));
        }
        Ok(rows)
    }

    /// Per-head n-step returns and bootstrap discounts, `[head][row]`.
    pub fn fold_batch(&self, batch: &Batch) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let scale = self.cfg.reward_scale;
        let mut returns = Vec::with_capacity(self.grid.len());
        let mut discounts = Vec::with_capacity(self.grid.len());
        for &g in &self.grid.gammas {
            let (r, d): (Vec<f64>, Vec<f64>) = batch
                .rewards
                .iter()
                .zip(&batch.dones)
                .map(|(rw, done)| {
                    let (ret, disc) = fold_rewards(rw, g);
                    (ret * scale, if *done { 0.0 } else { disc })
                })
                .unzip();
            returns.push(r);
            discounts.push(d);
        }
        (returns, discounts)
    }

    /// TD targets for `batch`, one `rows x n_atoms` buffer per head.
    pub fn targets(&mut self, batch: &Batch) -> Result<Vec<Vec<f64>>> {
        self.check_batch(batch)?;
        let (returns, discounts) = self.fold_batch(batch);
        let actor = if self.cfg.use_target_actor && self.cfg.algo != AlgoKind::Sac {
            &self.actor_target
        } else {
            &self.actor
        };
        let nets = TargetNets {
            algo: self.cfg.algo,
            actor_spec: &self.actor_spec,
            critic_spec: &self.critic_spec,
            actor,
            critics: &self.critic_targets,
            smoothing_sigma: self.cfg.smoothing_sigma,
            smoothing_clip: self.cfg.smoothing_clip,
            alpha_ent: self.cfg.alpha_ent,
        };
        td_targets(
            &nets,
            &TargetInputs {
                next_obs: &batch.next_obs,
                returns: &returns,
                discounts: &discounts,
            },
            &mut self.rng,
        )
    }

    /// Loss of critic `params` against fixed `targets`, summed over heads
    /// and averaged over the batch.
    fn critic_loss_tape(&self, tape: &mut Tape, params: &crate::nn::Bound, batch: &Batch, targets: &[Vec<f64>]) -> Result<Var> {
        let rows = batch.len();
        let cs = &self.critic_spec;
        let o = tape.constant(batch.obs.clone(), rows, cs.obs_dim)?;
        let a = tape.constant(batch.actions.clone(), rows, cs.action_dim)?;
        let heads = cs.heads_tape(tape, params, o, a)?;
        let mut total: Option<Var> = None;
        for (h, out) in heads.into_iter().enumerate() {
            let per_row = match cs.head {
                HeadKind::Scalar => {
                    let neg: Vec<f64> = targets[h].iter().map(|v| -v).collect();
                    let diff = tape.add_const(out, &neg)?;
                    tape.square(diff)
                }
                HeadKind::Categorical { .. } => tape.cross_entropy(out, targets[h].clone())?,
                HeadKind::Quantile { n_atoms } => {
                    tape.quantile_huber(out, targets[h].clone(), n_atoms, quantile_fractions(n_atoms), self.cfg.kappa)?
                }
            };
            let l = tape.mean(per_row);
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        Ok(total.expect("at least one head"))
    }

    /// Critic losses on `batch` against the current targets without
    /// changing any parameters.
    pub fn critic_loss(&mut self, batch: &Batch) -> Result<f64> {
        let targets = self.targets(batch)?;
        let mut sum = 0.0;
        for c in &self.critics {
            let mut tape = Tape::new();
            let b = tape.bind(c, false)?;
            let l = self.critic_loss_tape(&mut tape, &b, batch, &targets)?;
            sum += tape.scalar(l);
        }
        Ok(sum)
    }

    /// One optimizer step on every critic followed by the target soft
    /// update. Returns the summed loss and the largest gradient norm.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<(f64, f64)> {
        self.check_batch(batch)?;
        let targets = self.targets(batch)?;
        let mut total = 0.0;
        let mut grad_norm: f64 = 0.0;
        for i in 0..self.critics.len() {
            let mut tape = Tape::new();
            let b = tape.bind(&self.critics[i], true)?;
            let l = self.critic_loss_tape(&mut tape, &b, batch, &targets)?;
            let v = tape.scalar(l);
            if !v.is_finite() {
                return Err(Error::Numerical(format!("critic {i} loss is {v} at critic step {}", self.critic_steps)));
            }
            tape.backward(l)?;
            tape.write_grads(&b, &mut self.critics[i])?;
            grad_norm = grad_norm.max(self.critic_opts[i].step(&mut self.critics[i])?);
            total += v;
        }
        for (t, s) in self.critic_targets.iter_mut().zip(&self.critics) {
            soft_update(t, s, self.cfg.tau)?;
        }
        self.critic_steps += 1;
        Ok((total, grad_norm))
    }

    /// Gradient step on the actor against critic 0's largest-γ head.
    /// Skipped (returns `None`) unless the critic step count is a multiple
    /// of `actor_delay`.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<Option<f64>> {
        let rows = self.check_batch(batch)?;
        if self.critic_steps % self.cfg.actor_delay != 0 {
            return Ok(None);
        }
        let (spec, cs) = (&self.actor_spec, &self.critic_spec);
        let mut tape = Tape::new();
        let ab = tape.bind(&self.actor, true)?;
        let cb = tape.bind(&self.critics[0], false)?;
        let o = tape.constant(batch.obs.clone(), rows, spec.obs_dim)?;
        let (action, log_prob) = match self.cfg.algo {
            AlgoKind::Ddpg | AlgoKind::Td3 => (spec.deterministic_tape(&mut tape, &ab, o)?, None),
            AlgoKind::Sac => {
                let eps: Vec<f64> = (0..rows * spec.action_dim).map(|_| self.rng.sample(StandardNormal)).collect();
                let (a, lp) = spec.sample_tape(&mut tape, &ab, o, &eps)?;
                (a, Some(lp))
            }
        };
        let heads = cs.heads_tape(&mut tape, &cb, o, action)?;
        let q = cs.head_mean_tape(&mut tape, *heads.last().expect("heads"))?;
        let objective = match log_prob {
            Some(lp) => {
                let ent = tape.scale(lp, self.cfg.alpha_ent);
                tape.sub(ent, q)?
            }
            None => tape.scale(q, -1.0),
        };
        let loss = tape.mean(objective);
        let v = tape.scalar(loss);
        if !v.is_finite() {
            return Err(Error::Numerical(format!("actor loss is {v} at actor step {}", self.actor_steps)));
        }
        tape.backward(loss)?;
        tape.write_grads(&ab, &mut self.actor)?;
        self.actor_opt.step(&mut self.actor)?;
        soft_update(&mut self.actor_target, &self.actor, self.cfg.tau)?;
        self.actor_steps += 1;
        Ok(Some(v))
    }

    /// Critic step then (delay permitting) actor step on the same batch.
    pub fn update(&mut self, batch: &Batch) -> Result<UpdateStats> {
        let (critic_loss, critic_grad_norm) = self.critic_update(batch)?;
        let actor_loss = self.actor_update(batch)?;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            critic_grad_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::algorithms::{ddpg_target, sac_target, td3_target};
    use crate::distributional::ValueDistribution;
    use crate::nn::{Activation, OptimizerSpec};

    fn zeroed(mut p: ParameterSet) -> ParameterSet {
        for (_, t) in p.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    /// Scalar critic that returns `q` everywhere.
    fn constant_critic(spec: &CriticSpec, q: f64) -> ParameterSet {
        let mut p = zeroed(spec.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap());
        for h in 0..spec.n_gamma_heads {
            p.get_mut(&format!("head{h}.bias")).unwrap().data_mut().iter_mut().for_each(|v| *v = q);
        }
        p
    }

    fn specs(kind: ActorKind, head: HeadKind, heads: usize) -> (ActorSpec, CriticSpec) {
        (ActorSpec::new(kind, 3, 2, vec![8]), CriticSpec::new(head, heads, 3, 2, vec![8]))
    }

    fn random_batch(rows: usize, obs_dim: usize, rng: &mut ChaCha8Rng) -> Batch {
        let mut b = Batch::empty(obs_dim, 2);
        for _ in 0..rows {
            b.obs.extend((0..obs_dim).map(|_| rng.random_range(-1.0..1.0)));
            b.next_obs.extend((0..obs_dim).map(|_| rng.random_range(-1.0..1.0)));
            b.actions.extend((0..2).map(|_| rng.random_range(-1.0..1.0)));
            let m = rng.random_range(1..4);
            b.rewards.push((0..m).map(|_| rng.random_range(-1.0..1.0)).collect());
            b.dones.push(rng.random_bool(0.2));
        }
        b
    }

    fn nets<'a>(algo: AlgoKind, a: &'a ActorSpec, c: &'a CriticSpec, actor: &'a ParameterSet, critics: &'a [ParameterSet], sigma: f64, alpha: f64) -> TargetNets<'a> {
        TargetNets {
            algo,
            actor_spec: a,
            critic_spec: c,
            actor,
            critics,
            smoothing_sigma: sigma,
            smoothing_clip: 0.5,
            alpha_ent: alpha,
        }
    }

    #[test]
    fn terminal_targets_are_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, c) = specs(ActorKind::Gaussian, HeadKind::Quantile { n_atoms: 5 }, 2);
        let actor = a.init(&mut rng).unwrap();
        let critics = vec![c.init(&mut rng).unwrap(), c.init(&mut rng).unwrap()];
        for algo in [AlgoKind::Td3, AlgoKind::Sac, AlgoKind::Ddpg] {
            let cr = &critics[..algo.n_critics()];
            let n = nets(algo, &a, &c, &actor, cr, 0.2, 1.0);
            let t = match algo {
                AlgoKind::Td3 => td3_target(&n, 2.0, &[0.1, 0.2, 0.3], true, &[0.9, 0.99], &mut rng),
                AlgoKind::Sac => sac_target(&n, 2.0, &[0.1, 0.2, 0.3], true, &[0.9, 0.99], &mut rng),
                AlgoKind::Ddpg => ddpg_target(&n, 2.0, &[0.1, 0.2, 0.3], true, &[0.9, 0.99], &mut rng),
            }
            .unwrap();
            for d in t {
                assert_eq!(d, ValueDistribution::Quantile { atoms: vec![2.0; 5] });
            }
        }
        // gamma = 0 behaves like termination
        let n = nets(AlgoKind::Ddpg, &a, &c, &actor, &critics[..1], 0.0, 0.0);
        let t = ddpg_target(&n, -0.7, &[0.0; 3], false, &[0.0, 0.0], &mut rng).unwrap();
        assert!(t.iter().all(|d| d.mean() == -0.7));
    }

    #[test]
    fn td3_min_of_constant_critics() {
        let (a, c) = specs(ActorKind::Deterministic, HeadKind::Scalar, 1);
        let actor = a.init(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let critics = vec![constant_critic(&c, 1.0), constant_critic(&c, 2.0)];
        let n = nets(AlgoKind::Td3, &a, &c, &actor, &critics, 0.2, 0.0);
        let t = td3_target(&n, 0.5, &[0.3, 0.3, 0.3], false, &[0.9], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((t[0].mean() - 1.4).abs() < 1e-12);
    }

    #[test]
    fn noiseless_td3_is_reproducible_and_matches_ddpg() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for head in [HeadKind::Scalar, HeadKind::Quantile { n_atoms: 7 }, HeadKind::Categorical { n_atoms: 11, v_min: -5.0, v_max: 5.0 }] {
            let (a, c) = specs(ActorKind::Deterministic, head, 3);
            let actor = a.init(&mut rng).unwrap();
            let critic = c.init(&mut rng).unwrap();
            let pair = vec![critic.clone(), critic.clone()];
            let td3 = nets(AlgoKind::Td3, &a, &c, &actor, &pair, 0.0, 0.0);
            let single = [critic];
            let ddpg = nets(AlgoKind::Ddpg, &a, &c, &actor, &single, 0.0, 0.0);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let d = [0.5, 0.9, 0.99];
            let x = td3_target(&td3, 0.3, &s, false, &d, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let y = td3_target(&td3, 0.3, &s, false, &d, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let z = ddpg_target(&ddpg, 0.3, &s, false, &d, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
            assert_eq!(x, y);
            assert_eq!(x, z);
        }
    }

    #[test]
    fn td3_target_never_exceeds_either_critic() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (a, c) = specs(ActorKind::Deterministic, HeadKind::Quantile { n_atoms: 5 }, 2);
        for _ in 0..50 {
            let actor = a.init(&mut rng).unwrap();
            let critics = vec![c.init(&mut rng).unwrap(), c.init(&mut rng).unwrap()];
            let n = nets(AlgoKind::Td3, &a, &c, &actor, &critics, 0.0, 0.0);
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = td3_target(&n, 0.0, &s, false, &[1.0, 1.0], &mut rng).unwrap();
            let act = a.act_deterministic(&actor, &s).unwrap();
            for cr in &critics {
                let means = c.head_means_batch(cr, &s, &act).unwrap();
                for h in 0..2 {
                    assert!(t[h].mean() <= means[h][0] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn sac_target_hand_formula() {
        let (a, c) = specs(ActorKind::Gaussian, HeadKind::Scalar, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let actor = a.init(&mut rng).unwrap();
        let critics = vec![constant_critic(&c, 3.0), constant_critic(&c, 1.5)];
        let s = [0.2, -0.4, 0.9];
        let n = nets(AlgoKind::Sac, &a, &c, &actor, &critics, 0.0, 0.7);
        let t = sac_target(&n, 0.25, &s, false, &[0.9], &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        // same draw as the target computation
        let mut r2 = ChaCha8Rng::seed_from_u64(11);
        let eps: Vec<f64> = (0..2).map(|_| r2.sample(StandardNormal)).collect();
        let (_, lp) = a.act_stochastic_with(&actor, &s, &eps).unwrap();
        let expected = 0.25 + 0.9 * (1.5 - 0.7 * lp[0]);
        assert!((t[0].mean() - expected).abs() < 1e-12);

        // alpha = 0: min critic at the sampled action
        let n0 = nets(AlgoKind::Sac, &a, &c, &actor, &critics, 0.0, 0.0);
        let t0 = sac_target(&n0, 0.25, &s, false, &[0.9], &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert!((t0[0].mean() - (0.25 + 0.9 * 1.5)).abs() < 1e-12);

        let det = ActorSpec::new(ActorKind::Deterministic, 3, 2, vec![8]);
        let da = det.init(&mut rng).unwrap();
        let bad = nets(AlgoKind::Sac, &det, &c, &da, &critics, 0.0, 0.0);
        assert!(sac_target(&bad, 0.0, &s, false, &[0.9], &mut rng).is_err());
    }

    #[test]
    fn categorical_targets_are_distributions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (a, c) = specs(ActorKind::Deterministic, HeadKind::Categorical { n_atoms: 21, v_min: -3.0, v_max: 3.0 }, 2);
        let actor = a.init(&mut rng).unwrap();
        let critics = vec![c.init(&mut rng).unwrap(), c.init(&mut rng).unwrap()];
        let n = nets(AlgoKind::Td3, &a, &c, &actor, &critics, 0.2, 0.0);
        let t = td3_target(&n, 0.4, &[0.0, 0.5, 1.0], false, &[0.5, 0.99], &mut rng).unwrap();
        for d in t {
            d.validate().unwrap();
        }
    }

    fn learner(algo: AlgoKind, head: HeadKind, heads: usize, seed: u64) -> Learner {
        let kind = if algo == AlgoKind::Sac { ActorKind::Gaussian } else { ActorKind::Deterministic };
        let (a, c) = specs(kind, head, heads);
        let cfg = AlgoConfig {
            algo,
            hyperbolic: heads > 1,
            n_heads: heads,
            batch_size: 16,
            ..Default::default()
        };
        Learner::new(cfg, a, c, seed).unwrap()
    }

    #[test]
    fn fuzz_updates_keep_shapes_and_finite_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for algo in [AlgoKind::Ddpg, AlgoKind::Td3, AlgoKind::Sac] {
            for head in [HeadKind::Scalar, HeadKind::Quantile { n_atoms: 9 }, HeadKind::Categorical { n_atoms: 11, v_min: -10.0, v_max: 10.0 }] {
                for heads in [1, 3] {
                    let mut l = learner(algo, head, heads, rng.random());
                    let before: Vec<Vec<usize>> = l.critics[0].iter().map(|(_, t)| t.shape().to_vec()).collect();
                    let count = l.actor.num_scalars();
                    for _ in 0..5 {
                        let b = random_batch(16, 3, &mut rng);
                        let s = l.update(&b).unwrap();
                        assert!(s.critic_loss.is_finite());
                        assert!(s.actor_loss.unwrap().is_finite());
                    }
                    let after: Vec<Vec<usize>> = l.critics[0].iter().map(|(_, t)| t.shape().to_vec()).collect();
                    assert_eq!(before, after);
                    assert_eq!(count, l.actor.num_scalars());
                    assert!(l.actor.all_finite() && l.critics.iter().all(|c| c.all_finite()));
                }
            }
        }
    }

    #[test]
    fn competition_shape_runs() {
        let a = ActorSpec::new(ActorKind::Deterministic, 7, 2, vec![32]);
        let c = CriticSpec::new(HeadKind::Quantile { n_atoms: 101 }, 10, 7, 2, vec![32]);
        let cfg = AlgoConfig {
            hyperbolic: true,
            n_heads: 10,
            gamma_max: 0.99,
            ..Default::default()
        };
        let mut l = Learner::new(cfg, a, c, 0).unwrap();
        assert_eq!(l.critics.len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = random_batch(8, 7, &mut rng);
        for _ in 0..3 {
            assert!(l.update(&b).unwrap().critic_loss.is_finite());
        }
    }

    #[test]
    fn single_head_hyperbolic_equals_plain() {
        let (a, c) = specs(ActorKind::Deterministic, HeadKind::Quantile { n_atoms: 5 }, 1);
        let plain = AlgoConfig::default();
        let hyper = AlgoConfig {
            hyperbolic: true,
            n_heads: 1,
            gamma_max: plain.gamma,
            ..Default::default()
        };
        let mut x = Learner::new(plain, a.clone(), c.clone(), 4).unwrap();
        let mut y = Learner::new(hyper, a, c, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            let b = random_batch(8, 3, &mut rng);
            let (sx, sy) = (x.update(&b).unwrap(), y.update(&b).unwrap());
            assert_eq!(sx.critic_loss.to_bits(), sy.critic_loss.to_bits());
        }
    }

    fn one_transition() -> Batch {
        Batch {
            obs_dim: 3,
            action_dim: 2,
            obs: vec![0.1, -0.2, 0.3],
            actions: vec![0.5, -0.5],
            next_obs: vec![0.0; 3],
            rewards: vec![vec![0.8]],
            dones: vec![true],
        }
    }

    #[test]
    fn fixed_point_has_zero_gradient() {
        let mut l = learner(AlgoKind::Ddpg, HeadKind::Scalar, 1, 0);
        let c = l.critic_spec().clone();
        l.critics = vec![constant_critic(&c, 0.8)];
        l.critic_targets = l.critics.clone();
        let (loss, norm) = l.critic_update(&one_transition()).unwrap();
        assert!(loss.abs() < 1e-20);
        assert!(norm < 1e-8);
    }

    #[test]
    fn single_point_contraction() {
        let mut l = learner(AlgoKind::Td3, HeadKind::Scalar, 1, 2);
        let b = one_transition();
        let c = l.critic_spec().clone();
        let mut steps = 0;
        loop {
            l.critic_update(&b).unwrap();
            steps += 1;
            let q = c.head_means_batch(&l.critics[0], &b.obs, &b.actions).unwrap()[0][0];
            if (q - 0.8).abs() < 1e-3 {
                break;
            }
            assert!(steps < 5000, "no convergence: q = {q}");
        }
    }

    #[test]
    fn constant_critic_gives_zero_actor_gradient() {
        let mut l = learner(AlgoKind::Td3, HeadKind::Scalar, 1, 0);
        let c = l.critic_spec().clone();
        l.critics = vec![constant_critic(&c, 2.0), constant_critic(&c, 2.0)];
        let before = l.actor.clone();
        l.cfg.actor_optimizer = OptimizerSpec::sgd(1.0);
        l.actor_opt = Optimizer::new(l.cfg.actor_optimizer.clone()).unwrap();
        let loss = l.actor_update(&random_batch(8, 3, &mut ChaCha8Rng::seed_from_u64(0))).unwrap().unwrap();
        assert_eq!(loss, -2.0);
        assert_eq!(l.actor, before);
    }

    #[test]
    fn actor_delay_counter() {
        let mut l = learner(AlgoKind::Td3, HeadKind::Scalar, 1, 0);
        l.cfg.actor_delay = 2;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            l.update(&random_batch(4, 3, &mut rng)).unwrap();
        }
        assert_eq!(l.critic_steps(), 10);
        assert_eq!(l.actor_steps(), 5);
    }

    /// Scalar critic fitted to `-(a - 0.3)^2` over the action range.
    fn quadratic_critic(spec: &CriticSpec) -> ParameterSet {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = spec.init(&mut rng).unwrap();
        let mut opt = Optimizer::new(OptimizerSpec::adam(3e-3)).unwrap();
        let grid: Vec<f64> = (0..=40).map(|i| -1.0 + i as f64 / 20.0).collect();
        let target: Vec<f64> = grid.iter().map(|a| -(a - 0.3) * (a - 0.3)).collect();
        for _ in 0..6000 {
            let mut tape = Tape::new();
            let b = tape.bind(&p, true).unwrap();
            let o = tape.constant(vec![0.0; grid.len()], grid.len(), 1).unwrap();
            let a = tape.constant(grid.clone(), grid.len(), 1).unwrap();
            let q = spec.heads_tape(&mut tape, &b, o, a).unwrap()[0];
            let neg: Vec<f64> = target.iter().map(|v| -v).collect();
            let d = tape.add_const(q, &neg).unwrap();
            let sq = tape.square(d);
            let l = tape.mean(sq);
            tape.backward(l).unwrap();
            tape.write_grads(&b, &mut p).unwrap();
            opt.step(&mut p).unwrap();
        }
        p
    }

    #[test]
    fn actor_climbs_quadratic_critic() {
        let a = ActorSpec {
            activation: Activation::Tanh,
            ..ActorSpec::new(ActorKind::Deterministic, 1, 1, vec![8])
        };
        let c = CriticSpec::new(HeadKind::Scalar, 1, 1, 1, vec![32]);
        let critic = quadratic_critic(&c);
        let cfg = AlgoConfig {
            algo: AlgoKind::Ddpg,
            actor_optimizer: OptimizerSpec::adam(1e-2),
            ..Default::default()
        };
        let actor = a.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let mut l = Learner::from_params(cfg, a.clone(), c, actor, vec![critic], 0).unwrap();
        let mut b = Batch::empty(1, 1);
        b.obs = vec![0.0];
        b.next_obs = vec![0.0];
        b.actions = vec![0.0];
        b.rewards = vec![vec![0.0]];
        b.dones = vec![true];
        for _ in 0..2000 {
            l.actor_update(&b).unwrap();
        }
        let mu = a.act_deterministic(&l.actor, &[0.0]).unwrap()[0];
        assert!((mu - 0.3).abs() < 1e-2, "mu = {mu}");
    }

    #[test]
    fn checkpoint_matches_params() {
        let l = learner(AlgoKind::Sac, HeadKind::Quantile { n_atoms: 3 }, 2, 1);
        let ck = l.checkpoint(3, 9);
        assert_eq!(ck.actor, l.actor);
        assert_eq!(ck.critics.len(), 2);
    }
}
