use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{rd_solve_constant, rd_solve_hetero, sensor_grid, GrfSampler, GrfSpec};
use crate::error::{Error, Result};
use crate::nets::OperatorDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusProblem {
    /// `f ↦ u(·, t=1)` with constant diffusion.
    RdConstant,
    /// `(k, f) ↦ u(x, t)` with `a = 0.01(|k| + 1)`.
    RdHetero,
}

impl CorpusProblem {
    pub fn n_inputs(self) -> usize {
        match self {
            CorpusProblem::RdConstant => 1,
            CorpusProblem::RdHetero => 2,
        }
    }
}

/// Input functions and solver outputs for one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub problem: CorpusProblem,
    pub grid: Vec<f64>,
    pub length_scale: f64,
    /// One `N × n_grid` matrix per input function channel.
    pub inputs: Vec<Array2<f64>>,
    /// `P × d` coordinates of the solution values.
    pub coords: Array2<f64>,
    /// `N × P`.
    pub solutions: Array2<f64>,
    pub seeds: Vec<u64>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    pub fn to_dataset(&self) -> OperatorDataset {
        OperatorDataset {
            sensors: self.grid.clone(),
            inputs: self.inputs.clone(),
            coords: self.coords.clone(),
            targets: self.solutions.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-item seed derived from a run seed (SplitMix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Solution coordinates for a problem: `x` for the constant case, `(x, t)`
/// pairs (x-major, `t_j = j/100`) for the heterogeneous case.
pub fn solution_coords(problem: CorpusProblem) -> Array2<f64> {
    let grid = sensor_grid();
    match problem {
        CorpusProblem::RdConstant => Array2::from_shape_fn((grid.len(), 1), |(i, _)| grid[i]),
        CorpusProblem::RdHetero => {
            let nt = 101;
            Array2::from_shape_fn((grid.len() * nt, 2), |(p, c)| {
                if c == 0 {
                    grid[p / nt]
                } else {
                    (p % nt) as f64 / 100.0
                }
            })
        }
    }
}

fn build_split(problem: CorpusProblem, sampler: &GrfSampler, seeds: Vec<u64>, l: f64) -> Result<Corpus> {
    let grid = sensor_grid();
    let n = seeds.len();
    let coords = solution_coords(problem);
    let mut inputs = vec![Array2::zeros((n, grid.len())); problem.n_inputs()];
    let mut solutions = Array2::zeros((n, coords.nrows()));
    for (r, &s) in seeds.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(s);
        let fields: Vec<Vec<f64>> = (0..problem.n_inputs()).map(|_| sampler.sample(&mut rng)).collect();
        let sol = match problem {
            CorpusProblem::RdConstant => rd_solve_constant(&fields[0]),
            CorpusProblem::RdHetero => rd_solve_hetero(&fields[0], &fields[1]).map(|u| u.into_raw_vec_and_offset().0),
        }
        .map_err(|e| Error::Corpus {
            index: r,
            source: Box::new(e),
        })?;
        for (c, f) in fields.iter().enumerate() {
            inputs[c].row_mut(r).assign(&ndarray::ArrayView1::from(f));
        }
        solutions.row_mut(r).assign(&ndarray::ArrayView1::from(&sol));
    }
    Ok(Corpus {
        problem,
        grid,
        length_scale: l,
        inputs,
        coords,
        solutions,
        seeds,
    })
}

/// Sample input functions from the SE field (length scale `l`) on the
/// sensor grid, solve each, and split deterministically: items
/// `0..n_train` train, the next `n_test` test.
pub fn build_operator_corpus(
    problem: CorpusProblem,
    n_train: usize,
    n_test: usize,
    seed: u64,
    length_scale: f64,
) -> Result<(Corpus, Corpus)> {
    let sampler = GrfSampler::new(&GrfSpec::new(length_scale, sensor_grid()))?;
    let seeds: Vec<u64> = (0..(n_train + n_test) as u64).map(|i| derive_seed(seed, i)).collect();
    let train = build_split(problem, &sampler, seeds[..n_train].to_vec(), length_scale)?;
    let test = build_split(problem, &sampler, seeds[n_train..].to_vec(), length_scale)?;
    Ok((train, test))
}

/// Regenerate items `indices` of a corpus built with `seed` (train items come
/// first, then test items) without solving the rest.
pub fn corpus_items(problem: CorpusProblem, seed: u64, indices: &[usize], length_scale: f64) -> Result<Corpus> {
    let sampler = GrfSampler::new(&GrfSpec::new(length_scale, sensor_grid()))?;
    let seeds = indices.iter().map(|&i| derive_seed(seed, i as u64)).collect();
    build_split(problem, &sampler, seeds, length_scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::RdSolver;

    #[test]
    fn empty_train_split() {
        let (tr, te) = build_operator_corpus(CorpusProblem::RdConstant, 0, 3, 1, 0.2).unwrap();
        assert!(tr.is_empty());
        assert_eq!(te.len(), 3);
        assert_eq!(te.solutions.dim(), (3, 100));
    }

    #[test]
    fn regeneration_is_identical_and_round_trips() {
        let a = build_operator_corpus(CorpusProblem::RdHetero, 2, 1, 9, 0.2).unwrap();
        let b = build_operator_corpus(CorpusProblem::RdHetero, 2, 1, 9, 0.2).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.0.solutions.dim(), (2, 10_100));
        assert_eq!(a.0.inputs.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.json");
        a.0.save(&p).unwrap();
        assert_eq!(Corpus::load(&p).unwrap(), a.0);
    }

    #[test]
    fn hetero_coordinates_match_the_field_layout() {
        let (_, te) = build_operator_corpus(CorpusProblem::RdHetero, 0, 1, 4, 0.2).unwrap();
        let field = rd_solve_hetero(te.inputs[0].row(0).as_slice().unwrap(), te.inputs[1].row(0).as_slice().unwrap())
            .unwrap();
        for (p, c) in te.coords.outer_iter().enumerate().step_by(97) {
            let i = (c[0] * 99.0).round() as usize;
            let j = (c[1] * 100.0).round() as usize;
            assert_eq!(te.solutions[[0, p]], field[[i, j]]);
        }
    }

    #[test]
    fn test_solutions_satisfy_the_discrete_scheme() {
        let (_, te) = build_operator_corpus(CorpusProblem::RdConstant, 0, 4, 2, 0.2).unwrap();
        let s = RdSolver::constant(crate::physics::RD_DIFFUSION);
        for r in 0..te.len() {
            let f = te.inputs[0].row(r).to_vec();
            let st = s.run(|_, out| out.copy_from_slice(&f), 1).unwrap();
            assert_eq!(st.last().unwrap().as_slice(), te.solutions.row(r).as_slice().unwrap());
            let mut worst: f64 = s.step_residual(None, &st[0], &st[1], &f);
            for n in 1..st.len() - 1 {
                worst = worst.max(s.step_residual(Some(&st[n - 1]), &st[n], &st[n + 1], &f));
            }
            assert!(worst < 1e-6, "{worst}");
        }
    }

    #[test]
    fn single_items_match_the_full_corpus() {
        let (tr, te) = build_operator_corpus(CorpusProblem::RdConstant, 3, 2, 11, 0.2).unwrap();
        let one = corpus_items(CorpusProblem::RdConstant, 11, &[4, 1], 0.2).unwrap();
        assert_eq!(one.solutions.row(0), te.solutions.row(1));
        assert_eq!(one.inputs[0].row(1), tr.inputs[0].row(1));
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let mut s: Vec<u64> = (0..1000).map(|i| derive_seed(5, i)).collect();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 1000);
    }
}
