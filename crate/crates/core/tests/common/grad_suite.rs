//! Autodiff against central finite differences over random networks and
//! the training losses.

use crl::agents::{ActorKind, ActorSpec, CriticSpec, HeadKind};
use crl::distributional::{cramer_project, quantile_fractions, CategoricalSupport};
use crl::nn::{Activation, NetworkSpec, ParameterSet, Tape, Var};
use crl::nn::Bound;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    Mse,
    Categorical,
    QuantileHuber,
    SacActor,
}

pub const LOSSES: [LossKind; 4] = [LossKind::Mse, LossKind::Categorical, LossKind::QuantileHuber, LossKind::SacActor];

/// One random network/loss combination with fixed data.
pub struct Case {
    pub loss: LossKind,
    pub layer_norm: bool,
    rows: usize,
    net: NetworkSpec,
    actor: Option<ActorSpec>,
    critic: Option<(CriticSpec, ParameterSet)>,
    input: Vec<f64>,
    target: Vec<f64>,
    eps: Vec<f64>,
    pub params: ParameterSet,
}

const IN: usize = 4;

fn randomize(p: &mut ParameterSet, rng: &mut ChaCha8Rng) {
    for (_, t) in p.iter_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.8..0.8));
    }
}

impl Case {
    pub fn random(loss: LossKind, layer_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        let rows = rng.random_range(1..=4);
        let hidden: Vec<usize> = (0..rng.random_range(1..=2)).map(|_| rng.random_range(2..=6)).collect();
        let input: Vec<f64> = (0..rows * IN).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mut eps = Vec::new();
        let mut actor = None;
        let mut critic = None;
        let (net, target) = match loss {
            LossKind::Mse => {
                let out = rng.random_range(1..=3);
                let t = (0..rows * out).map(|_| rng.random_range(-2.0..2.0)).collect();
                (NetworkSpec::mlp(IN, hidden, out, Activation::Tanh), t)
            }
            LossKind::Categorical => {
                let n = rng.random_range(3..=9);
                let support = CategoricalSupport::new(-3.0, 3.0, n).unwrap();
                let mut t = Vec::new();
                for _ in 0..rows {
                    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
                    let s: f64 = raw.iter().sum();
                    let probs: Vec<f64> = raw.iter().map(|v| v / s).collect();
                    t.extend(cramer_project(&probs, rng.random_range(-1.0..1.0), rng.random_range(0.5..0.99), &support).unwrap());
                }
                (NetworkSpec::mlp(IN, hidden, n, Activation::Tanh), t)
            }
            LossKind::QuantileHuber => {
                let n = rng.random_range(1..=6);
                let t = (0..rows * n).map(|_| rng.random_range(-2.0..2.0)).collect();
                (NetworkSpec::mlp(IN, hidden, n, Activation::Tanh), t)
            }
            LossKind::SacActor => {
                let a = ActorSpec {
                    layer_norm,
                    ..ActorSpec::new(ActorKind::Gaussian, IN, 2, hidden)
                };
                let c = CriticSpec::new(HeadKind::Quantile { n_atoms: 3 }, 2, IN, 2, vec![5]);
                let mut cp = c.init(rng).unwrap();
                randomize(&mut cp, rng);
                eps = (0..rows * 2).map(|_| rng.sample(StandardNormal)).collect();
                let n = a.network();
                actor = Some(a);
                critic = Some((c, cp));
                (n, Vec::new())
            }
        };
        let net = net.with_layer_norm(layer_norm);
        let mut params = net.init(1.0, rng).unwrap();
        randomize(&mut params, rng);
        Case {
            loss,
            layer_norm,
            rows,
            net,
            actor,
            critic,
            input,
            target,
            eps,
            params,
        }
    }

    fn build(&self, tape: &mut Tape, params: &ParameterSet) -> (Bound, Var) {
        let b = tape.bind(params, true).unwrap();
        let x = tape.constant(self.input.clone(), self.rows, IN).unwrap();
        let loss = match self.loss {
            LossKind::Mse => {
                let y = self.net.forward_tape(tape, &b, x).unwrap();
                let neg: Vec<f64> = self.target.iter().map(|t| -t).collect();
                let d = tape.add_const(y, &neg).unwrap();
                let sq = tape.square(d);
                tape.mean(sq)
            }
            LossKind::Categorical => {
                let y = self.net.forward_tape(tape, &b, x).unwrap();
                let ce = tape.cross_entropy(y, self.target.clone()).unwrap();
                tape.mean(ce)
            }
            LossKind::QuantileHuber => {
                let y = self.net.forward_tape(tape, &b, x).unwrap();
                let n = self.net.output_dim();
                let l = tape.quantile_huber(y, self.target.clone(), n, quantile_fractions(n), 1.0).unwrap();
                tape.mean(l)
            }
            LossKind::SacActor => {
                let a = self.actor.as_ref().unwrap();
                let (cs, cp) = self.critic.as_ref().unwrap();
                let cb = tape.bind(cp, false).unwrap();
                let (act, lp) = a.sample_tape(tape, &b, x, &self.eps).unwrap();
                let heads = cs.heads_tape(tape, &cb, x, act).unwrap();
                let q = cs.head_mean_tape(tape, *heads.last().unwrap()).unwrap();
                let ent = tape.scale(lp, 0.2);
                let obj = tape.sub(ent, q).unwrap();
                tape.mean(obj)
            }
        };
        (b, loss)
    }

    pub fn value(&self, params: &ParameterSet) -> f64 {
        let mut tape = Tape::new();
        let (_, l) = self.build(&mut tape, params);
        tape.scalar(l)
    }

    pub fn gradient(&self) -> ParameterSet {
        let mut tape = Tape::new();
        let (b, l) = self.build(&mut tape, &self.params);
        tape.backward(l).unwrap();
        let mut g = self.params.clone();
        tape.write_grads(&b, &mut g).unwrap();
        g
    }

    /// Largest relative error over every parameter scalar, with relative
    /// error `|a - b| / max(|a|, |b|, 1e-6)`.
    pub fn max_rel_error(&self) -> f64 {
        let g = self.gradient();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for (name, t) in g.iter() {
            for i in 0..t.numel() {
                let mut up = self.params.clone();
                up.get_mut(name).unwrap().data_mut()[i] += h;
                let mut dn = self.params.clone();
                dn.get_mut(name).unwrap().data_mut()[i] -= h;
                let fd = (self.value(&up) - self.value(&dn)) / (2.0 * h);
                let ad = t.grad().unwrap()[i];
                worst = worst.max((fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-6));
            }
        }
        worst
    }
}

/// `n` combinations cycling through losses and layer norm; returns the
/// worst error and the case that produced it.
pub fn gradient_suite(n: usize, seed: u64) -> (f64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = (0.0, String::new());
    for i in 0..n {
        let loss = LOSSES[i % 4];
        let ln = (i / 4) % 2 == 1;
        let case = Case::random(loss, ln, &mut rng);
        let e = case.max_rel_error();
        if e >= worst.0 {
            worst = (e, format!("case {i}: {loss:?}, layer_norm {ln}"));
        }
    }
    worst
}
