mod common;

use common::bundles::{exhaustive, random_bundle, ACT, OBS};
use crl::agents::{ActorKind, ActorSpec, AgentCheckpoint, CriticSpec, HeadKind};
use crl::config::validation_seeds;
use crl::ensemble::{ensemble_act, rank, select_checkpoints, EnsembleBundle, MixtureSet, ScoredPolicy};
use crl::env::{make_env, rollout, EnvConfig};
use crl::nn::{Activation, ParameterSet, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn ensemble_act_matches_exhaustive_scoring() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..1000 {
        let b = random_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let got = b.act(&obs).unwrap();
        let (idx, action) = exhaustive(&b, &obs);
        assert_eq!(got.candidate, idx);
        assert_eq!(got.action, action);
        assert_eq!(ensemble_act(&b, &obs).unwrap(), action);
    }
}

fn zeroed(mut p: ParameterSet) -> ParameterSet {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    p
}

#[test]
fn linear_critic_picks_best_dot_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a_spec = ActorSpec::new(ActorKind::Deterministic, OBS, ACT, vec![6]);
    // no hidden layer and one quantile atom: Q(s, a) = w . a
    let c_spec = CriticSpec::new(HeadKind::Quantile { n_atoms: 1 }, 1, OBS, ACT, vec![]);
    for _ in 0..200 {
        let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        let mut critic = zeroed(c_spec.init(&mut rng).unwrap());
        *critic.get_mut("head0.weight").unwrap() = Tensor::matrix(1, OBS + ACT, vec![0.0, 0.0, 0.0, w[0], w[1]]).unwrap();
        let b = EnsembleBundle {
            actors: (0..2).map(|_| (a_spec.clone(), a_spec.init(&mut rng).unwrap())).collect(),
            critics: vec![(c_spec.clone(), critic)],
            mixtures: MixtureSet::default(),
        };
        let obs: Vec<f64> = (0..OBS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p0 = a_spec.act_greedy(&b.actors[0].1, &obs).unwrap();
        let p1 = a_spec.act_greedy(&b.actors[1].1, &obs).unwrap();
        let mix: Vec<f64> = (0..ACT).map(|d| 0.5 * p0[d] + 0.5 * p1[d]).collect();
        let dot = |a: &[f64]| w[0] * a[0] + w[1] * a[1];
        // a linear score never prefers the midpoint strictly
        let want = if dot(&p1) > dot(&p0) { &p1 } else { &p0 };
        let got = ensemble_act(&b, &obs).unwrap();
        assert_eq!(&got, want);
        assert!(dot(&mix) <= dot(want) + 1e-12);
    }
}

#[test]
fn midpoint_mixture_is_selectable() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a_spec = ActorSpec::new(ActorKind::Deterministic, OBS, ACT, vec![4]);
    // two relu units give Q(s, a) = -|a_1|
    let mut c_spec = CriticSpec::new(HeadKind::Quantile { n_atoms: 1 }, 1, OBS, ACT, vec![2]);
    c_spec.activation = Activation::Relu;
    let mut critic = zeroed(c_spec.init(&mut rng).unwrap());
    *critic.get_mut("l0.weight").unwrap() = Tensor::matrix(2, OBS + ACT, vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, -1.0]).unwrap();
    *critic.get_mut("head0.weight").unwrap() = Tensor::matrix(1, 2, vec![-1.0, -1.0]).unwrap();
    // zero weights, so the actors propose tanh(bias) whatever the observation
    let actor = |a1: f64, rng: &mut ChaCha8Rng| {
        let mut p = zeroed(a_spec.init(rng).unwrap());
        p.get_mut("head0.bias").unwrap().data_mut().copy_from_slice(&[0.1, a1]);
        (a_spec.clone(), p)
    };
    let mut b = EnsembleBundle {
        actors: vec![actor(0.4, &mut rng), actor(-0.4, &mut rng)],
        critics: vec![(c_spec, critic)],
        mixtures: MixtureSet::default(),
    };
    let got = b.act(&[0.3; OBS]).unwrap();
    assert_eq!(got.candidate, 2);
    assert_eq!(got.action, vec![0.1f64.tanh(), 0.0]);
    assert_eq!(got.score, 0.0);
    // without mixtures the proposals tie and the first one wins
    b.mixtures = MixtureSet::None;
    assert_eq!(b.act(&[0.3; OBS]).unwrap().candidate, 0);
}

#[test]
fn constant_critic_never_changes_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..300 {
        let b = random_bundle(&mut rng);
        let obs: Vec<f64> = (0..OBS).map(|_| rng.random_range(-2.0..2.0)).collect();
        let before = b.act(&obs).unwrap();
        let spec = CriticSpec::new(HeadKind::Quantile { n_atoms: 2 }, 2, OBS, ACT, vec![3]);
        let mut p = zeroed(spec.init(&mut rng).unwrap());
        p.get_mut("head1.bias").unwrap().data_mut().copy_from_slice(&[2.5, 2.5]);
        let mut with_const = b.clone();
        with_const.critics.push((spec, p));
        let after = with_const.act(&obs).unwrap();
        assert_eq!(before.candidate, after.candidate);
    }
}

#[test]
fn scripted_controller_outranks_random_on_every_seed() {
    let env_cfg = EnvConfig::default();
    let seeds = validation_seeds(80);
    let mut env = make_env(&env_cfg).unwrap();
    let mut scripted = Vec::new();
    let mut random = Vec::new();
    for &seed in &seeds {
        let s = {
            let mut e = make_env(&env_cfg).unwrap();
            e.reset(seed);
            let mut ret = 0.0;
            loop {
                let a = e.scripted_action().unwrap();
                let st = e.step(&a).unwrap();
                ret += st.reward;
                if st.done {
                    break ret;
                }
            }
        };
        scripted.push(s);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = rollout(env.as_mut(), seed, |_| Ok(vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])).unwrap();
        random.push(r.ret);
    }
    let ranked = rank(vec![ScoredPolicy::new("random", None, random.clone()), ScoredPolicy::new("scripted", None, scripted.clone())]);
    assert_eq!(ranked[0].name, "scripted");
    for (i, (s, r)) in scripted.iter().zip(&random).enumerate() {
        assert!(s > r, "seed {}: scripted {s} random {r}", seeds[i]);
    }
}

fn saved_checkpoints(dir: &std::path::Path) -> (EnvConfig, ActorSpec, Vec<u64>) {
    let mut env = EnvConfig::default();
    env.t_max = 40;
    let spec = ActorSpec::new(ActorKind::Deterministic, env.obs_dim(), env.action_dim(), vec![8]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for name in ["b.crlw", "a.crlw"] {
        let ck = AgentCheckpoint {
            version: 1,
            fingerprint: 0,
            actor: spec.init(&mut rng).unwrap(),
            critics: vec![],
        };
        ck.save(&dir.join(name)).unwrap();
    }
    (env, spec, validation_seeds(5))
}

#[test]
fn checkpoint_selection_ranks_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (env, spec, seeds) = saved_checkpoints(dir.path());
    std::fs::copy(dir.path().join("a.crlw"), dir.path().join("c.crlw")).unwrap();
    std::fs::write(dir.path().join("broken.crlw"), b"not a checkpoint").unwrap();
    std::fs::write(dir.path().join("notes.txt"), b"ignored").unwrap();

    let r = select_checkpoints(dir.path(), &env, &spec, 1, &seeds, 10).unwrap();
    assert_eq!(r.ranked.len(), 3);
    assert_eq!(r.skipped.len(), 1);
    assert!(r.skipped[0].0.ends_with("broken.crlw"));
    let pos = |n: &str| r.ranked.iter().position(|p| p.name == n).unwrap();
    let (a, c) = (&r.ranked[pos("a.crlw")], &r.ranked[pos("c.crlw")]);
    // duplicates score the same and keep filename order
    assert_eq!(a.returns, c.returns);
    assert_eq!(pos("c.crlw"), pos("a.crlw") + 1);
    assert!(r.ranked.windows(2).all(|w| w[0].mean >= w[1].mean));
    assert_eq!(r.ranked[0].returns.len(), seeds.len());

    let top1 = select_checkpoints(dir.path(), &env, &spec, 1, &seeds, 1).unwrap();
    assert_eq!(top1.ranked, r.ranked[..1]);

    let out = tempfile::tempdir().unwrap();
    let (csv, json) = r.write(out.path()).unwrap();
    let csv = std::fs::read_to_string(csv).unwrap();
    assert_eq!(csv.lines().next(), Some("checkpoint,seed,return"));
    assert_eq!(csv.lines().count(), 1 + 3 * seeds.len());
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    assert_eq!(summary["ranked"].as_array().unwrap().len(), 3);
    assert_eq!(summary["skipped"].as_array().unwrap().len(), 1);
}

#[test]
fn single_checkpoint_ranks_alone() {
    let dir = tempfile::tempdir().unwrap();
    let (env, spec, seeds) = saved_checkpoints(dir.path());
    std::fs::remove_file(dir.path().join("b.crlw")).unwrap();
    let r = select_checkpoints(dir.path(), &env, &spec, 1, &seeds, 5).unwrap();
    assert_eq!(r.ranked.len(), 1);
    assert_eq!(r.ranked[0].name, "a.crlw");
    let empty = tempfile::tempdir().unwrap();
    assert!(select_checkpoints(empty.path(), &env, &spec, 1, &seeds, 5).is_err());
}
