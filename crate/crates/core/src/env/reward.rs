use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Inverse scales and weights of the shaped reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    /// Velocity-vector scale, the reciprocal of the largest velocity difference.
    pub a: f64,
    /// Speed scale.
    pub b: f64,
    /// Direction scale; unit vectors differ by at most 2.
    pub c: f64,
    /// Distance scale of the sink bonus.
    pub d: f64,
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub w_target: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        RewardParams {
            a: 0.5,
            b: 0.5,
            c: 0.5,
            d: 0.25,
            r1: 1.0,
            r2: 1.0,
            r3: 1.0,
            w_target: 1.0,
        }
    }
}

impl RewardParams {
    pub fn validate(&self) -> Result<()> {
        for (key, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("d", self.d)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("env.reward.{key}"), "must be a positive finite number"));
            }
        }
        for (key, v) in [("r1", self.r1), ("r2", self.r2), ("r3", self.r3), ("w_target", self.w_target)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("env.reward.{key}"), "must be a nonnegative finite number"));
            }
        }
        Ok(())
    }

    /// Largest reward a single substep can produce.
    pub fn max_reward(&self) -> f64 {
        self.r1 + self.r2 + self.r3 + self.w_target
    }
}

/// Unweighted shaped terms, each clamped to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardTerms {
    pub vec: f64,
    pub vel: f64,
    pub dir: f64,
    pub target: f64,
}

fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub fn reward_terms(v_body: [f64; 2], v_cur: [f64; 2], p_body: [f64; 2], p_sink: [f64; 2], params: &RewardParams) -> RewardTerms {
    let dv = [v_body[0] - v_cur[0], v_body[1] - v_cur[1]];
    let vec = (1.0 - params.a * params.a * (dv[0] * dv[0] + dv[1] * dv[1])).max(0.0);

    let (nb, nc) = (norm(v_body), norm(v_cur));
    let vel = (1.0 - params.b * params.b * (nb - nc) * (nb - nc)).max(0.0);

    // direction is undefined for a zero vector
    let dir = if nb < 1e-8 || nc < 1e-8 {
        0.0
    } else {
        let du = [v_body[0] / nb - v_cur[0] / nc, v_body[1] / nb - v_cur[1] / nc];
        (1.0 - params.c * params.c * (du[0] * du[0] + du[1] * du[1])).max(0.0)
    };

    let dp = [p_body[0] - p_sink[0], p_body[1] - p_sink[1]];
    let target = (1.0 - params.d * params.d * (dp[0] * dp[0] + dp[1] * dp[1])).max(0.0);
    RewardTerms { vec, vel, dir, target }
}

pub fn shaped_reward(v_body: [f64; 2], v_cur: [f64; 2], p_body: [f64; 2], p_sink: [f64; 2], params: &RewardParams) -> f64 {
    let t = reward_terms(v_body, v_cur, p_body, p_sink, params);
    params.r1 * t.vec + params.r2 * t.vel + params.r3 * t.dir + params.w_target * t.target
}
