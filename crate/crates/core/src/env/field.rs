/// Side of the local field grid.
pub const GRID_SIDE: usize = 11;
/// Index of the grid cell under the agent.
pub const GRID_CENTER: usize = GRID_SIDE / 2;

/// Ramped radial field pulling towards a single sink. Speed is `v_cap`
/// beyond `ramp` metres and falls linearly to zero at the sink.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VectorField {
    pub sink: [f64; 2],
    pub v_cap: f64,
    pub ramp: f64,
}

impl VectorField {
    pub fn at(&self, x: [f64; 2]) -> [f64; 2] {
        let d = [self.sink[0] - x[0], self.sink[1] - x[1]];
        let r = d[0].hypot(d[1]);
        if r == 0.0 {
            return [0.0, 0.0];
        }
        let s = self.v_cap * (r / self.ramp).min(1.0) / r;
        [d[0] * s, d[1] * s]
    }

    /// Field sampled on an 11x11 unit grid centred on `x`, laid out as
    /// `[channel][row][col]` with row `i` at y offset `i - 5` and column
    /// `j` at x offset `j - 5`.
    pub fn grid(&self, x: [f64; 2]) -> Vec<f64> {
        let n = GRID_SIDE * GRID_SIDE;
        let mut out = vec![0.0; 2 * n];
        for i in 0..GRID_SIDE {
            for j in 0..GRID_SIDE {
                let p = [x[0] + (j as f64 - GRID_CENTER as f64), x[1] + (i as f64 - GRID_CENTER as f64)];
                let v = self.at(p);
                out[i * GRID_SIDE + j] = v[0];
                out[n + i * GRID_SIDE + j] = v[1];
            }
        }
        out
    }
}
