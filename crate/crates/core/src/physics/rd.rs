use ndarray::Array2;

use super::sensor_grid;
use crate::error::{Error, Result};
use crate::linalg::solve_tridiagonal;

pub const RD_DIFFUSION: f64 = 0.01;
pub const RD_KAPPA: f64 = 0.01;
pub const RD_DT: f64 = 1e-3;
/// The space-time field is stored every this many steps (Δt_out = 0.01).
pub const RD_RECORD_EVERY: usize = 10;
const BLOWUP: f64 = 1e6;

/// `u_t = ∂x(a ∂x u) + κu² + f` on a uniform grid with `u = 0` on the
/// boundary and at `t = 0`.
///
/// Time stepping is Crank–Nicolson for diffusion with a second-order
/// Adams–Bashforth extrapolation of the reaction; the source enters at the
/// half step. The first step extrapolates with `u⁰` only.
#[derive(Clone, Debug)]
pub struct RdSolver {
    grid: Vec<f64>,
    h: f64,
    /// `a` at the `n − 1` cell faces.
    face: Vec<f64>,
    pub kappa: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl RdSolver {
    pub fn new(grid: Vec<f64>, face: Vec<f64>, kappa: f64, dt: f64, t_end: f64) -> Result<Self> {
        let n = grid.len();
        if n < 3 || face.len() != n - 1 {
            return Err(Error::ShapeError(format!("{n} grid points with {} face coefficients", face.len())));
        }
        let h = grid[1] - grid[0];
        if grid.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0)) || h <= 0.0 {
            return Err(Error::InvalidInput("grid must be uniform and increasing".into()));
        }
        let n_steps = (t_end / dt).round() as usize;
        if n_steps == 0 || ((n_steps as f64) * dt - t_end).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("t_end {t_end} is not a multiple of dt {dt}")));
        }
        Ok(RdSolver {
            grid,
            h,
            face,
            kappa,
            dt,
            n_steps,
        })
    }

    /// Face coefficients `(a_i + a_{i+1})/2` from nodal values.
    pub fn faces_from_nodes(a: &[f64]) -> Vec<f64> {
        a.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }

    /// Constant diffusion `d` on the sensor grid with the default step.
    pub fn constant(d: f64) -> Self {
        let grid = sensor_grid();
        let face = vec![d; grid.len() - 1];
        RdSolver::new(grid, face, RD_KAPPA, RD_DT, 1.0).unwrap()
    }

    /// `a = 0.01(|k| + 1)` on the sensor grid.
    pub fn hetero(k: &[f64]) -> Result<Self> {
        let grid = sensor_grid();
        if k.len() != grid.len() {
            return Err(Error::ShapeError(format!("k has {} values for {} grid points", k.len(), grid.len())));
        }
        let a: Vec<f64> = k.iter().map(|v| RD_DIFFUSION * (v.abs() + 1.0)).collect();
        RdSolver::new(grid, Self::faces_from_nodes(&a), RD_KAPPA, RD_DT, 1.0)
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// `(A u)_i = [a₊(u_{i+1} − u_i) − a₋(u_i − u_{i−1})]/h²` at interior nodes
    /// (zero at the boundary nodes).
    pub fn apply_diffusion(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        let h2 = self.h * self.h;
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for i in 1..n - 1 {
            out[i] = (self.face[i] * (u[i + 1] - u[i]) - self.face[i - 1] * (u[i] - u[i - 1])) / h2;
        }
    }

    /// Integrate to `t_end`. `source(t, f)` fills the source at time `t`.
    /// Returns the states at steps `0, every, 2·every, …` (the final state is
    /// always included).
    pub fn run(&self, mut source: impl FnMut(f64, &mut [f64]), every: usize) -> Result<Vec<Vec<f64>>> {
        let n = self.grid.len();
        let m = n - 2;
        let every = every.max(1);
        let h2 = self.h * self.h;
        let r = 0.5 * self.dt / h2;
        let mut lower = vec![0.0; m];
        let mut diag = vec![0.0; m];
        let mut upper = vec![0.0; m];
        for j in 0..m {
            let i = j + 1;
            let (am, ap) = (self.face[i - 1], self.face[i]);
            lower[j] = if j > 0 { -r * am } else { 0.0 };
            upper[j] = if j + 1 < m { -r * ap } else { 0.0 };
            diag[j] = 1.0 + r * (am + ap);
        }
        let mut u = vec![0.0; n];
        let mut react_prev = vec![0.0; n];
        let mut au = vec![0.0; n];
        let mut f = vec![0.0; n];
        let mut rhs = vec![0.0; m];
        let mut scratch = Vec::with_capacity(m);
        let mut out = vec![u.clone()];
        for step in 0..self.n_steps {
            let t_half = (step as f64 + 0.5) * self.dt;
            source(t_half, &mut f);
            self.apply_diffusion(&u, &mut au);
            for j in 0..m {
                let i = j + 1;
                let react = self.kappa * u[i] * u[i];
                let extrap = if step == 0 { react } else { 1.5 * react - 0.5 * react_prev[i] };
                rhs[j] = u[i] + 0.5 * self.dt * au[i] + self.dt * (extrap + f[i]);
                react_prev[i] = react;
            }
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
            let mut max_abs: f64 = 0.0;
            for j in 0..m {
                u[j + 1] = rhs[j];
                max_abs = max_abs.max(rhs[j].abs());
            }
            if !(max_abs <= BLOWUP) {
                return Err(Error::SolverDiverged { step: step + 1, max_abs });
            }
            if (step + 1) % every == 0 || step + 1 == self.n_steps {
                out.push(u.clone());
            }
        }
        Ok(out)
    }

    /// Largest interior residual of one step of the scheme, for consecutive
    /// states `u_prev → u_cur → u_next` and the half-step source `f_half`.
    /// `u_prev = None` means `u_cur` is the initial state.
    pub fn step_residual(&self, u_prev: Option<&[f64]>, u_cur: &[f64], u_next: &[f64], f_half: &[f64]) -> f64 {
        let n = u_cur.len();
        let mut a_cur = vec![0.0; n];
        let mut a_next = vec![0.0; n];
        self.apply_diffusion(u_cur, &mut a_cur);
        self.apply_diffusion(u_next, &mut a_next);
        let mut worst: f64 = 0.0;
        for i in 1..n - 1 {
            let rc = self.kappa * u_cur[i] * u_cur[i];
            let extrap = match u_prev {
                Some(p) => 1.5 * rc - 0.5 * self.kappa * p[i] * p[i],
                None => rc,
            };
            let res = (u_next[i] - u_cur[i]) / self.dt - 0.5 * (a_next[i] + a_cur[i]) - extrap - f_half[i];
            worst = worst.max(res.abs());
        }
        worst
    }
}

/// `u(·, t = 1)` for constant diffusion `D = 0.01` and source `f` on the
/// sensor grid.
pub fn rd_solve_constant(f: &[f64]) -> Result<Vec<f64>> {
    let s = RdSolver::constant(RD_DIFFUSION);
    if f.len() != s.grid.len() {
        return Err(Error::ShapeError(format!("f has {} values for {} grid points", f.len(), s.grid.len())));
    }
    let states = s.run(|_, out| out.copy_from_slice(f), s.n_steps)?;
    Ok(states.into_iter().last().unwrap())
}

/// Space-time field `u(x_i, t_j)` (`100 × 101`, `t_j = j/100`) for
/// `a = 0.01(|k| + 1)` and source `f`.
pub fn rd_solve_hetero(k: &[f64], f: &[f64]) -> Result<Array2<f64>> {
    let s = RdSolver::hetero(k)?;
    if f.len() != s.grid.len() {
        return Err(Error::ShapeError(format!("f has {} values for {} grid points", f.len(), s.grid.len())));
    }
    let states = s.run(|_, out| out.copy_from_slice(f), RD_RECORD_EVERY)?;
    let (nx, nt) = (s.grid.len(), states.len());
    Ok(Array2::from_shape_fn((nx, nt), |(i, j)| states[j][i]))
}
