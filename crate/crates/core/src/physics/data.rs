use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Known additive Gaussian noise scales of one measurement channel. A scale
/// of zero marks the clean side of the channel.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub sigma_in: f64,
    pub sigma_out: f64,
}

impl NoiseModel {
    pub fn new(sigma_in: f64, sigma_out: f64) -> Result<Self> {
        let n = NoiseModel { sigma_in, sigma_out };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, s) in [("sigma_in", self.sigma_in), ("sigma_out", self.sigma_out)] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} = {s} must be a finite non-negative scale")));
            }
        }
        Ok(())
    }

    pub fn noisy_input(&self) -> bool {
        self.sigma_in > 0.0
    }
}

/// Observed inputs/outputs together with the clean values they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisyDataset {
    pub x_clean: Vec<f64>,
    pub y_clean: Vec<f64>,
    pub x_obs: Vec<f64>,
    pub y_obs: Vec<f64>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl NoisyDataset {
    pub fn len(&self) -> usize {
        self.x_obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_obs.is_empty()
    }
}

/// Add seeded i.i.d. Gaussian noise to the inputs (all drawn first) and then
/// the outputs. Channels with a zero scale pass through untouched.
pub fn make_noisy(x: &[f64], y: &[f64], noise: NoiseModel, seed: u64) -> Result<NoisyDataset> {
    noise.validate()?;
    if x.len() != y.len() {
        return Err(Error::ShapeError(format!("{} inputs for {} outputs", x.len(), y.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perturb = |v: &[f64], s: f64| -> Vec<f64> {
        if s == 0.0 {
            return v.to_vec();
        }
        v.iter()
            .map(|a| {
                let z: f64 = rng.sample(StandardNormal);
                a + s * z
            })
            .collect()
    };
    let x_obs = perturb(x, noise.sigma_in);
    let y_obs = perturb(y, noise.sigma_out);
    Ok(NoisyDataset {
        x_clean: x.to_vec(),
        y_clean: y.to_vec(),
        x_obs,
        y_obs,
        noise,
        seed,
    })
}

/// CSV with columns `channel,index,coordinate,clean,noisy`: one `<name>.y`
/// row per datum, plus a `<name>.x` row per datum when inputs are noisy.
pub fn write_measurements_csv(path: &Path, sets: &[(&str, &NoisyDataset)]) -> Result<()> {
    let mut out = String::from("channel,index,coordinate,clean,noisy\n");
    for (name, d) in sets {
        for i in 0..d.len() {
            if d.noise.noisy_input() {
                writeln!(out, "{name}.x,{i},{:e},{:e},{:e}", d.x_obs[i], d.x_clean[i], d.x_obs[i]).unwrap();
            }
            writeln!(out, "{name}.y,{i},{:e},{:e},{:e}", d.x_obs[i], d.y_clean[i], d.y_obs[i]).unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_channels_pass_through() {
        let x = [0.1, 0.2, -0.0];
        let y = [1.0, f64::MIN_POSITIVE, 3.0];
        let d = make_noisy(&x, &y, NoiseModel::new(0.0, 0.5).unwrap(), 1).unwrap();
        for i in 0..3 {
            assert_eq!(d.x_obs[i].to_bits(), x[i].to_bits());
            assert_ne!(d.y_obs[i], y[i]);
        }
    }

    #[test]
    fn empirical_scale_matches() {
        let n = 100_000;
        let x = vec![0.0; n];
        let d = make_noisy(&x, &x, NoiseModel::new(0.03, 0.05).unwrap(), 7).unwrap();
        let sd = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        assert!((sd(&d.x_obs) / 0.03 - 1.0).abs() < 0.02);
        assert!((sd(&d.y_obs) / 0.05 - 1.0).abs() < 0.02);
    }

    #[test]
    fn seeded_and_validated() {
        let x = [0.0, 1.0];
        let nm = NoiseModel::new(0.1, 0.1).unwrap();
        assert_eq!(make_noisy(&x, &x, nm, 3).unwrap(), make_noisy(&x, &x, nm, 3).unwrap());
        assert_ne!(make_noisy(&x, &x, nm, 3).unwrap(), make_noisy(&x, &x, nm, 4).unwrap());
        assert!(NoiseModel::new(-1.0, 0.1).is_err());
        assert!(make_noisy(&x, &[1.0], nm, 0).is_err());
    }

    #[test]
    fn csv_rows() {
        let d = make_noisy(&[0.5, 0.6], &[1.0, 2.0], NoiseModel::new(0.1, 0.1).unwrap(), 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("data.csv");
        write_measurements_csv(&p, &[("f", &d)]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 5);
        assert!(text.lines().nth(1).unwrap().starts_with("f.x,0,"));
    }
}
