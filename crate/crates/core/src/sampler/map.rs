use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};
use crate::nets::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapSettings {
    pub iterations: usize,
    pub lr: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        MapSettings {
            iterations: 10_000,
            lr: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub params: Vec<f64>,
    /// Final `−log p`.
    pub objective: f64,
    /// `−log p` before every update.
    pub history: Vec<f64>,
}

/// Adam minimization of `−log p` starting from `init`.
pub fn map_estimate<T: LogDensity + ?Sized>(target: &mut T, init: &[f64], cfg: &MapSettings) -> Result<MapResult> {
    let d = target.dim();
    if init.len() != d {
        return Err(Error::ShapeError(format!("initial point has {} entries for {d} coordinates", init.len())));
    }
    let mut x = init.to_vec();
    let mut g = vec![0.0; d];
    let mut opt = Adam::new(d, cfg.lr);
    let mut history = Vec::with_capacity(cfg.iterations);
    let diverged = |iteration| Error::TrainingDiverged { iteration };
    for it in 0..cfg.iterations {
        let lp = target.logp_grad(&x, &mut g).map_err(|_| diverged(it))?;
        if !lp.is_finite() {
            return Err(diverged(it));
        }
        history.push(-lp);
        g.iter_mut().for_each(|v| *v = -*v);
        opt.step(&mut x, &g).map_err(|_| diverged(it))?;
    }
    let lp = target.logp_grad(&x, &mut g).map_err(|_| diverged(cfg.iterations))?;
    if !lp.is_finite() {
        return Err(diverged(cfg.iterations));
    }
    Ok(MapResult {
        params: x,
        objective: -lp,
        history,
    })
}
