use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::field::{VectorField, GRID_SIDE};
use super::reward::{shaped_reward, RewardParams};
use super::{Env, ObsMode, Step};
use crate::error::{Error, Result};

/// Point-mass dynamics and task constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Physics {
    /// Linear drag, 1/s.
    pub drag: f64,
    pub a_max: f64,
    pub v_max: f64,
    pub v_cap: f64,
    pub dt: f64,
    /// Distance over which the field speed ramps down to zero at the sink.
    pub ramp: f64,
    /// Sink annulus around the start position.
    pub r_min: f64,
    pub r_max: f64,
    /// Position is clamped to `[-h, h]²`.
    pub arena_half_width: f64,
    pub dwell_radius: f64,
    /// Consecutive substeps inside `dwell_radius` needed for success.
    pub dwell_required: usize,
    /// On success, credit every remaining substep at the maximal reward so
    /// that finishing early never costs return.
    pub completion_credit: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            drag: 0.5,
            a_max: 1.0,
            v_max: 1.0,
            v_cap: 0.5,
            dt: 0.05,
            ramp: 1.0,
            r_min: 2.0,
            r_max: 4.0,
            arena_half_width: 10.0,
            dwell_radius: 0.3,
            dwell_required: 40,
            completion_credit: true,
        }
    }
}

impl Physics {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("drag", self.drag),
            ("a_max", self.a_max),
            ("v_max", self.v_max),
            ("v_cap", self.v_cap),
            ("dt", self.dt),
            ("ramp", self.ramp),
            ("r_min", self.r_min),
            ("dwell_radius", self.dwell_radius),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("env.physics.{key}"), "must be a positive finite number"));
            }
        }
        if !(self.r_max >= self.r_min) {
            return Err(Error::config("env.physics.r_max", "must be >= r_min"));
        }
        if !(self.arena_half_width > self.r_max * 2.0) {
            return Err(Error::config("env.physics.arena_half_width", "must exceed twice r_max"));
        }
        if self.dwell_required == 0 {
            return Err(Error::config("env.physics.dwell_required", "must be positive"));
        }
        Ok(())
    }
}

/// Follow-field controller: accelerate towards the local field velocity
/// with gain `k`, compensating drag.
pub fn follow_field_action(v_cur: [f64; 2], v_body: [f64; 2], physics: &Physics, k: f64) -> Vec<f64> {
    (0..2)
        .map(|i| ((k * (v_cur[i] - v_body[i]) + physics.drag * v_body[i]) / physics.a_max).clamp(-1.0, 1.0))
        .collect()
}

/// Gain of the scripted controller.
pub const SCRIPTED_GAIN: f64 = 4.0;

#[derive(Clone, Debug, PartialEq)]
pub struct MoveFieldState {
    pub p: [f64; 2],
    pub v: [f64; 2],
    /// Agent steps taken.
    pub t: usize,
    pub dwell: usize,
    pub field: VectorField,
    /// 0 for the first field, 1 after the second field appeared.
    pub phase: u8,
}

/// 2-D point mass that must follow a vector field into its sink and
/// stay there.
#[derive(Clone, Debug)]
pub struct MoveField {
    pub physics: Physics,
    pub reward: RewardParams,
    pub mode: ObsMode,
    pub frame_skip: usize,
    pub t_max: usize,
    pub second_phase: bool,
    state: MoveFieldState,
    rng: ChaCha8Rng,
    done: bool,
    success: bool,
}

impl MoveField {
    pub fn new(physics: Physics, reward: RewardParams, mode: ObsMode, frame_skip: usize, t_max: usize, second_phase: bool) -> Result<Self> {
        physics.validate()?;
        reward.validate()?;
        if frame_skip == 0 {
            return Err(Error::config("env.frame_skip", "must be positive"));
        }
        if t_max == 0 {
            return Err(Error::config("env.t_max", "must be positive"));
        }
        let mut env = MoveField {
            physics,
            reward,
            mode,
            frame_skip,
            t_max,
            second_phase,
            state: MoveFieldState {
                p: [0.0; 2],
                v: [0.0; 2],
                t: 0,
                dwell: 0,
                field: VectorField {
                    sink: [physics.r_min, 0.0],
                    v_cap: physics.v_cap,
                    ramp: physics.ramp,
                },
                phase: 0,
            },
            rng: ChaCha8Rng::seed_from_u64(0),
            done: false,
            success: false,
        };
        env.reset(0);
        Ok(env)
    }

    pub fn state(&self) -> &MoveFieldState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn succeeded(&self) -> bool {
        self.success
    }

    fn sample_sink(&mut self, around: [f64; 2]) -> [f64; 2] {
        let ph = &self.physics;
        let angle = self.rng.random_range(0.0..2.0 * PI);
        // uniform over the annulus area
        let r = self.rng.random_range(ph.r_min * ph.r_min..=ph.r_max * ph.r_max).sqrt();
        let h = ph.arena_half_width;
        [(around[0] + r * angle.cos()).clamp(-h, h), (around[1] + r * angle.sin()).clamp(-h, h)]
    }

    pub fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        let t_scaled = 2.0 * s.t as f64 / self.t_max as f64 - 1.0;
        let mut out = match self.mode {
            ObsMode::Compact => s.field.at(s.p).to_vec(),
            ObsMode::Grid => s.field.grid(s.p),
        };
        out.extend_from_slice(&s.p);
        out.extend_from_slice(&s.v);
        out.push(t_scaled);
        out
    }

    /// One step holding `action` for `frame_skip` substeps.
    pub fn step_with_skip(&mut self, action: &[f64], frame_skip: usize) -> Result<Step> {
        if self.done {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        if action.len() != 2 {
            return Err(Error::shape("move_field action", 2, action.len()));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Env("non-finite action".into()));
        }
        let ph = self.physics;
        let acc = [ph.a_max * action[0].clamp(-1.0, 1.0), ph.a_max * action[1].clamp(-1.0, 1.0)];
        let mut reward = 0.0;
        let mut finished = false;
        let mut substeps = 0;
        for _ in 0..frame_skip {
            let s = &mut self.state;
            let v_cur = s.field.at(s.p);
            for i in 0..2 {
                s.v[i] += acc[i] * ph.dt - ph.drag * s.v[i] * ph.dt;
            }
            let speed = s.v[0].hypot(s.v[1]);
            if speed > ph.v_max {
                s.v = [s.v[0] * ph.v_max / speed, s.v[1] * ph.v_max / speed];
            }
            for i in 0..2 {
                s.p[i] += s.v[i] * ph.dt;
                if s.p[i].abs() > ph.arena_half_width {
                    s.p[i] = s.p[i].clamp(-ph.arena_half_width, ph.arena_half_width);
                    s.v[i] = 0.0;
                }
            }
            reward += shaped_reward(s.v, v_cur, s.p, s.field.sink, &self.reward);
            substeps += 1;

            let dist = (s.p[0] - s.field.sink[0]).hypot(s.p[1] - s.field.sink[1]);
            s.dwell = if dist <= ph.dwell_radius { s.dwell + 1 } else { 0 };
            if s.dwell >= ph.dwell_required {
                if self.second_phase && s.phase == 0 {
                    let p = s.p;
                    let sink = self.sample_sink(p);
                    self.state.field.sink = sink;
                    self.state.phase = 1;
                    self.state.dwell = 0;
                } else {
                    finished = true;
                    break;
                }
            }
        }
        self.state.t += 1;
        if finished {
            self.success = true;
            self.done = true;
            if ph.completion_credit {
                let left = (self.t_max.saturating_sub(self.state.t)) * self.frame_skip + (frame_skip - substeps);
                reward += left as f64 * self.reward.max_reward();
            }
        } else if self.state.t >= self.t_max {
            self.done = true;
        }
        Ok(Step {
            obs: self.observe(),
            reward,
            done: self.done,
            success: self.success,
        })
    }

    /// Action of the follow-field controller in the current state.
    pub fn scripted(&self) -> Vec<f64> {
        let s = &self.state;
        follow_field_action(s.field.at(s.p), s.v, &self.physics, SCRIPTED_GAIN)
    }

    /// Runs one episode with `policy` and writes a CSV row per agent step:
    /// `t,px,py,vx,vy,vcx,vcy,reward`.
    pub fn render_csv<W: Write>(&mut self, seed: u64, mut policy: impl FnMut(&Self, &[f64]) -> Result<Vec<f64>>, out: &mut W) -> Result<f64> {
        let mut obs = self.reset(seed);
        writeln!(out, "t,px,py,vx,vy,vcx,vcy,reward")?;
        let mut total = 0.0;
        loop {
            let action = policy(self, &obs)?;
            let step = self.step(&action)?;
            total += step.reward;
            let s = &self.state;
            let vc = s.field.at(s.p);
            writeln!(out, "{},{},{},{},{},{},{},{}", s.t, s.p[0], s.p[1], s.v[0], s.v[1], vc[0], vc[1], step.reward)?;
            obs = step.obs;
            if step.done {
                return Ok(total);
            }
        }
    }
}

impl Env for MoveField {
    fn name(&self) -> &'static str {
        "move_field"
    }

    fn obs_dim(&self) -> usize {
        match self.mode {
            ObsMode::Compact => 7,
            ObsMode::Grid => 2 * GRID_SIDE * GRID_SIDE + 5,
        }
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn max_steps(&self) -> usize {
        self.t_max
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let sink = self.sample_sink([0.0, 0.0]);
        self.state = MoveFieldState {
            p: [0.0; 2],
            v: [0.0; 2],
            t: 0,
            dwell: 0,
            field: VectorField {
                sink,
                v_cap: self.physics.v_cap,
                ramp: self.physics.ramp,
            },
            phase: 0,
        };
        self.done = false;
        self.success = false;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        self.step_with_skip(action, self.frame_skip)
    }

    fn scripted_action(&self) -> Option<Vec<f64>> {
        Some(self.scripted())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(mode: ObsMode, frame_skip: usize) -> MoveField {
        MoveField::new(Physics::default(), RewardParams::default(), mode, frame_skip, 500, false).unwrap()
    }

    #[test]
    fn reset_is_deterministic() {
        let mut e = env(ObsMode::Compact, 4);
        let a = e.reset(7);
        let sink = e.state().field.sink;
        let b = e.reset(7);
        assert_eq!(a, b);
        assert_eq!(a.len(), 7);
        e.reset(8);
        assert_ne!(e.state().field.sink, sink);
        let r = sink[0].hypot(sink[1]);
        assert!((2.0..=4.0).contains(&r));
    }

    #[test]
    fn grid_dims_and_center() {
        let mut c = env(ObsMode::Compact, 4);
        let mut g = env(ObsMode::Grid, 4);
        let oc = c.reset(0);
        let og = g.reset(0);
        assert_eq!(og.len(), 247);
        assert_eq!(g.obs_dim(), 247);
        assert_eq!([og[60], og[121 + 60]], [oc[0], oc[1]]);
        assert_eq!(&og[242..], &oc[2..]);
    }

    #[test]
    fn time_feature_endpoints() {
        let mut e = MoveField::new(Physics::default(), RewardParams::default(), ObsMode::Compact, 1, 5, false).unwrap();
        assert_eq!(e.reset(1)[6], -1.0);
        let mut last = None;
        for _ in 0..5 {
            last = Some(e.step(&[0.0, 0.0]).unwrap());
        }
        let last = last.unwrap();
        assert!(last.done && !last.success);
        assert_eq!(last.obs[6], 1.0);
        assert!(e.step(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn zero_action_statics() {
        let mut e = env(ObsMode::Compact, 4);
        let obs = e.reset(3);
        let step = e.step(&[0.0, 0.0]).unwrap();
        assert_eq!(&step.obs[2..6], &[0.0; 4]);
        let v_cur = [obs[0], obs[1]];
        let speed = v_cur[0].hypot(v_cur[1]);
        let p = RewardParams::default();
        // at rest only the field speed enters the velocity terms; direction is undefined
        let sink = e.state().field.sink;
        let target = 1.0 - p.d * p.d * (sink[0] * sink[0] + sink[1] * sink[1]);
        let per = 2.0 * (1.0 - 0.25 * speed * speed) + target.max(0.0);
        assert!((step.reward - 4.0 * per).abs() < 1e-12);
    }

    #[test]
    fn frame_skip_is_repeated_substeps() {
        let mut one = env(ObsMode::Compact, 1);
        let mut four = env(ObsMode::Compact, 4);
        one.reset(11);
        four.reset(11);
        let actions = [[0.3, -0.7], [1.0, 1.0], [-0.2, 0.5]];
        for a in actions {
            let s4 = four.step(&a).unwrap();
            let mut r1 = 0.0;
            for _ in 0..4 {
                r1 += one.step(&a).unwrap().reward;
            }
            assert_eq!(one.state().p, four.state().p);
            assert_eq!(one.state().v, four.state().v);
            assert!((r1 - s4.reward).abs() < 1e-12);
        }
    }

    fn scripted_run(e: &mut MoveField, seed: u64) -> (f64, Step, usize) {
        e.reset(seed);
        let mut total = 0.0;
        let mut steps = 0;
        loop {
            let a = e.scripted();
            let s = e.step(&a).unwrap();
            total += s.reward;
            steps += 1;
            if s.done {
                return (total, s, steps);
            }
        }
    }

    #[test]
    fn scripted_controller_succeeds() {
        let mut e = env(ObsMode::Compact, 4);
        for seed in 0..16 {
            let (ret, last, steps) = scripted_run(&mut e, seed);
            assert!(last.success, "seed {seed}");
            assert!(steps < 100, "{steps}");
            // completion credit makes the return close to the ceiling
            assert!(ret > 0.9 * 500.0 * 4.0 * 4.0, "{ret}");
            assert!(ret <= 500.0 * 4.0 * 4.0 + 1e-9);
            let (again, _, _) = scripted_run(&mut e, seed);
            assert_eq!(ret, again);
        }
    }

    #[test]
    fn second_phase_moves_sink() {
        let mut e = MoveField::new(Physics::default(), RewardParams::default(), ObsMode::Compact, 4, 500, true).unwrap();
        e.reset(5);
        let first = e.state().field.sink;
        let mut saw_phase = false;
        loop {
            let s = e.step(&e.scripted()).unwrap();
            if e.state().phase == 1 {
                saw_phase = true;
                assert_ne!(e.state().field.sink, first);
            }
            if s.done {
                assert!(s.success && saw_phase);
                break;
            }
        }
    }

    #[test]
    fn bad_actions() {
        let mut e = env(ObsMode::Compact, 4);
        e.reset(0);
        assert!(e.step(&[0.0]).is_err());
        assert!(e.step(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn render_rows() {
        let mut e = env(ObsMode::Compact, 4);
        let mut buf = Vec::new();
        let ret = e.render_csv(2, |env, _| Ok(env.scripted()), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,px,py,vx,vy,vcx,vcy,reward");
        let sum: f64 = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap()).sum();
        assert!((sum - ret).abs() < 1e-6 * ret);
    }
}
