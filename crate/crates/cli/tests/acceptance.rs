//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p eivuq-cli --test acceptance`. Pass criterion
//! numbers as arguments to run a subset, e.g. `-- 1 2 3`.
//!
//! A criterion that runs but misses its target prints FAIL without failing
//! the test binary, so the workspace stays green while the miss stays
//! visible. Set `EIVUQ_ACCEPTANCE_STRICT=1` to exit non-zero on any FAIL.
//! A criterion that errors always fails the binary.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use eivuq::jet::Tape;
use eivuq::linalg::cholesky;
use eivuq::models::{gaussian_conditional, normal_logpdf, poisson_u_jet, predict_fields, FunctionObservations, InferenceMode, OperatorPosterior, RegressionPosterior, RegressionSetup};
use eivuq::nets::{mlp_jet_forward, Activation, NetworkSpec};
use eivuq::physics::{linspace, se_kernel, sensor_grid, RdSolver, RD_DIFFUSION, RD_KAPPA};
use eivuq::sampler::{hmc_sample, mc_standard_error, HmcConfig, LogDensity};
use eivuq::Result;
use eivuq_cli::config::{Baseline, ExperimentConfig};
use eivuq_cli::operator::train_and_save;
use eivuq_cli::report::RunReport;
use eivuq_cli::runner::run_experiment;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs_dir().join(name)).expect("shipped config parses")
}

fn run(cfg: &mut ExperimentConfig, out: &Path) -> Result<RunReport> {
    cfg.resolve()?;
    Ok(run_experiment(cfg, out, true)?.report)
}

fn close(a: f64, b: f64, rtol: f64) -> bool {
    (a - b).abs() <= rtol * b.abs() + 1e-8
}

// 1. Jet components and reverse gradients against finite differences.
fn autodiff(_: &Shared) -> Result<Outcome> {
    let spec = NetworkSpec::scalar_mlp(&[50, 50], Activation::Tanh);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = 1e-4;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for pair in 0..100 {
        let p = spec.init_params(1000 + pair);
        let x = rng.random_range(-1.0..1.0);
        let j = mlp_jet_forward(&spec, &p, x)?;
        let (jp, jm) = (mlp_jet_forward(&spec, &p, x + h)?, mlp_jet_forward(&spec, &p, x - h)?);
        for k in 1..4 {
            let fd = (jp.get(k - 1) - jm.get(k - 1)) / (2.0 * h);
            worst = worst.max((j.get(k) - fd).abs() / fd.abs().max(1e-12));
            if !close(j.get(k), fd, 1e-4) {
                bad += 1;
            }
        }
    }
    // Squared Poisson residual κu'' − λu³ − f summed over collocation points.
    let (kappa, lambda) = (0.01, 0.1);
    let xs = linspace(0.05, 0.95, 10);
    let p = spec.init_params(7).values;
    let objective = |params: &[f64]| -> Result<(f64, Vec<f64>)> {
        let mut tape = Tape::new(params);
        let mut terms = vec![];
        for &x in &xs {
            let s = tape.lift_input(x)?;
            let u = poisson_u_jet(&mut tape, &spec.subnets[0], s, (1.0, 1.0));
            let u0 = tape.component(u, 0);
            let u2 = tape.component(u, 2);
            let k2 = tape.scale(u2, kappa);
            let c = tape.cube(u0);
            let lc = tape.scale(c, lambda);
            let r = tape.sub(k2, lc);
            let r = tape.add_const(r, -(x * x));
            terms.push(tape.square(r));
        }
        let obj = tape.sum(&terms);
        let v = tape.value(obj).v();
        Ok((v, tape.gradient(obj)?.vars))
    };
    let (_, grad) = objective(&p)?;
    let mut gbad = 0;
    for _ in 0..20 {
        let i = rng.random_range(0..p.len());
        let hh = 1e-6 * p[i].abs().max(1.0);
        let mut pp = p.clone();
        pp[i] += hh;
        let mut pm = p.clone();
        pm[i] -= hh;
        let fd = (objective(&pp)?.0 - objective(&pm)?.0) / (2.0 * hh);
        if !close(grad[i], fd, 1e-4) {
            gbad += 1;
        }
    }
    Ok(Outcome {
        passed: bad == 0 && gbad == 0,
        detail: format!("jet mismatches {bad}/300 (worst rel {worst:.1e}), residual-gradient mismatches {gbad}/20"),
    })
}

struct StdNormal(usize);

impl LogDensity for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }

    fn logp_grad(&mut self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (g, v) in grad.iter_mut().zip(x) {
            *g = -v;
        }
        Ok(-0.5 * x.iter().map(|v| v * v).sum::<f64>())
    }
}

// 2. HMC on a 10D standard normal.
fn sampler(_: &Shared) -> Result<Outcome> {
    let cfg = HmcConfig {
        leapfrog_steps: 50,
        num_samples: 1000,
        burn_in: 1000,
        ..HmcConfig::default()
    };
    let s = hmc_sample(&mut StdNormal(10), &[0.0; 10], &cfg)?;
    let mean = s.draws.mean_axis(ndarray::Axis(0)).unwrap();
    let var = s.draws.var_axis(ndarray::Axis(0), 0.0);
    let max_mean = mean.iter().fold(0.0f64, |a, m| a.max(m.abs()));
    let (vmin, vmax) = var.iter().fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    let acc = s.accept_rate();
    Ok(Outcome {
        passed: max_mean <= 0.15 && vmin >= 0.85 && vmax <= 1.15 && (0.5..=0.7).contains(&acc),
        detail: format!("max |mean| {max_mean:.3}, variance in [{vmin:.3}, {vmax:.3}], acceptance {acc:.3}"),
    })
}

// 3. Recast likelihood of a linear map equals the analytic marginal.
fn recast(_: &Shared) -> Result<Outcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 1000;
    let (sx, sy) = (0.03, 0.05);
    let x_obs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y_obs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let post = RegressionPosterior::new(RegressionSetup {
        spec: NetworkSpec::mlp(vec![1, 1], Activation::Tanh),
        x_obs: x_obs.clone(),
        y_obs: y_obs.clone(),
        sigma_in: sx,
        sigma_out: sy,
        theta_std: 1.0,
        chi_prior_std: Some(100.0),
        mode: InferenceMode::Recast,
    })?;
    let (a, b) = (1.7, -0.4);
    let ll = post.recast_pointwise(&[a, b])?;
    let sd = (a * a * sx * sx + sy * sy).sqrt();
    let worst = ll
        .iter()
        .zip(x_obs.iter().zip(&y_obs))
        .map(|(l, (x, y))| (l - normal_logpdf(*y, a * x + b, sd)).abs())
        .fold(0.0, f64::max);
    Ok(Outcome {
        passed: worst <= 1e-12,
        detail: format!("max abs difference {worst:.1e} over {n} points"),
    })
}

// 4. Input-only operator posterior is conjugate; HMC matches the closed form.
fn conjugate(_: &Shared) -> Result<Outcome> {
    let grid = sensor_grid();
    let mut k = se_kernel(&grid, 0.2);
    for i in 0..grid.len() {
        k[[i, i]] += 1e-6;
    }
    let l = cholesky(k.view())?;
    let mu = ndarray::Array1::zeros(grid.len());
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = FunctionObservations {
        indices: vec![5, 21, 38, 52, 70, 91],
        values: (0..6).map(|_| rng.random_range(-1.0..1.0)).collect(),
        sigma: 0.2,
    };
    let (m, _) = gaussian_conditional(mu.view(), l.view(), &obs)?;
    let mut post = OperatorPosterior::new(None, vec![(mu, l)], vec![obs], None)?;
    let cfg = HmcConfig {
        seed: 4,
        ..HmcConfig::default()
    };
    let s = hmc_sample(&mut post, &vec![0.0; grid.len()], &cfg)?;
    let v = predict_fields(s.draws.view(), |z| Ok(post.functions(z).remove(0)))?;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for i in 0..grid.len() {
        let col = v.column(i).to_vec();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let z = (mean - m[i]).abs() / mc_standard_error(&col);
        worst = worst.max(z);
        if z > 3.0 {
            bad += 1;
        }
    }
    Ok(Outcome {
        passed: bad == 0,
        detail: format!("{bad}/{} coordinates beyond 3 MCSE (worst {worst:.2} MCSE)", grid.len()),
    })
}

// 5. Deterministic PINN: clean < noisy output < noisy input for u.
fn pinn_ordering(sh: &Shared) -> Result<Outcome> {
    let mut cfg = load("e2.toml");
    cfg.seeds = vec![0, 1, 2];
    cfg.modes = vec![];
    cfg.baselines = vec![Baseline::Deterministic];
    let r = run(&mut cfg, &sh.dir.join("c5"))?;
    let mut ok = true;
    let mut parts = vec![];
    for &s in &cfg.seeds {
        let e = |l: &str| r.row(l, s).and_then(|r| r.target("u")).map_or(f64::NAN, |t| t.rel_l2);
        let (c, o, i) = (e("pinn-clean"), e("pinn-noisy-output"), e("pinn-noisy-input"));
        ok &= c < o && o < i;
        parts.push(format!("seed {s}: {:.2}% < {:.2}% < {:.2}%", 100.0 * c, 100.0 * o, 100.0 * i));
    }
    Ok(Outcome {
        passed: ok,
        detail: parts.join("; "),
    })
}

// 6. Forward Poisson: modelling input noise lowers the f error and stays calibrated.
fn forward_poisson(sh: &Shared) -> Result<Outcome> {
    let mut cfg = load("e2.toml");
    cfg.seeds = vec![0, 1, 2];
    cfg.modes = vec![InferenceMode::Ignore, InferenceMode::Model];
    cfg.baselines = vec![];
    let r = run(&mut cfg, &sh.dir.join("c6"))?;
    let mut wins = 0;
    let mut covered = true;
    let mut parts = vec![];
    for &s in &cfg.seeds {
        let (m, i) = (r.row("model", s).unwrap(), r.row("ignore", s).unwrap());
        let (mf, i_f) = (m.target("f").unwrap(), i.target("f").unwrap());
        let mu = m.target("u").unwrap();
        wins += (mf.rel_l2 < i_f.rel_l2) as usize;
        let (cu, cf) = (mu.coverage.unwrap(), mf.coverage.unwrap());
        covered &= cu >= 0.85 && cf >= 0.85;
        parts.push(format!(
            "seed {s}: f err model {:.2}% vs ignore {:.2}%, coverage u {:.0}% f {:.0}%",
            100.0 * mf.rel_l2,
            100.0 * i_f.rel_l2,
            100.0 * cu,
            100.0 * cf
        ));
    }
    Ok(Outcome {
        passed: wins >= 2 && covered,
        detail: format!("model wins {wins}/3; {}", parts.join("; ")),
    })
}

// 7. Inverse Poisson: λ recovered by the model mode, underestimated when ignoring noise.
fn inverse_poisson(sh: &Shared) -> Result<Outcome> {
    let mut cfg = load("e3.toml");
    cfg.modes = vec![InferenceMode::Ignore, InferenceMode::Model];
    cfg.baselines = vec![];
    let r = run(&mut cfg, &sh.dir.join("c7"))?;
    let s = cfg.seeds[0];
    let lam = |l: &str| r.row(l, s).and_then(|r| r.scalar("lambda")).cloned().unwrap();
    let (m, i) = (lam("model"), lam("ignore"));
    Ok(Outcome {
        passed: (m.mean - 0.15).abs() <= 3.0 * m.std && i.mean < m.mean,
        detail: format!("lambda model {:.4} ± {:.4}, ignore {:.4} ± {:.4}", m.mean, m.std, i.mean, i.std),
    })
}

// 8. Pretrained DeepONet reaches < 10% test error.
fn operator_training(sh: &Shared) -> Result<Outcome> {
    let mut cfg = load("e4.toml");
    cfg.operator.as_mut().unwrap().checkpoint = sh.checkpoint.clone();
    let model = train_and_save(&cfg, &|_| {})?;
    let err = model.meta.test_rel_l2.unwrap_or(f64::NAN);
    Ok(Outcome {
        passed: err < 0.10,
        detail: format!("mean test relative L2 {:.2}%", 100.0 * err),
    })
}

// 9. Synergistic reconstruction is sharper; misspecified input noise hurts f.
fn operator_baselines(sh: &Shared) -> Result<Outcome> {
    let mut cfg = load("e4.toml");
    let o = cfg.operator.as_mut().unwrap();
    o.checkpoint = sh.checkpoint.clone();
    o.train_first = true;
    cfg.modes = vec![InferenceMode::Model];
    cfg.baselines = vec![Baseline::NonSynergistic, Baseline::Misspecified(0.01)];
    let r = run(&mut cfg, &sh.dir.join("c9"))?;
    let s = cfg.seeds[0];
    let get = |l: &str, t: &str| r.row(l, s).and_then(|r| r.target(t)).cloned().unwrap();
    let (sf, su) = (get("model", "f"), get("model", "u"));
    let (nf, nu) = (get("non-synergistic", "f"), get("non-synergistic", "u"));
    let mf = get("misspecified:0.01", "f");
    let sharper = sf.mean_std.unwrap() < nf.mean_std.unwrap() && su.mean_std.unwrap() < nu.mean_std.unwrap();
    Ok(Outcome {
        passed: sharper && mf.rel_l2 > sf.rel_l2,
        detail: format!(
            "mean std f {:.4} vs {:.4}, u {:.4} vs {:.4}; f err misspecified {:.2}% vs {:.2}%",
            sf.mean_std.unwrap(),
            nf.mean_std.unwrap(),
            su.mean_std.unwrap(),
            nu.mean_std.unwrap(),
            100.0 * mf.rel_l2,
            100.0 * sf.rel_l2
        ),
    })
}

/// Final-time relative L2 error for `u = t·sin(πx)` on `n` nodes.
fn manufactured(n: usize, dt: f64, a: &dyn Fn(f64) -> f64, da: &dyn Fn(f64) -> f64) -> Result<f64> {
    use std::f64::consts::PI;
    let grid = linspace(0.0, 1.0, n);
    let nodal: Vec<f64> = grid.iter().map(|&x| a(x)).collect();
    let s = RdSolver::new(grid.clone(), RdSolver::faces_from_nodes(&nodal), RD_KAPPA, dt, 1.0)?;
    let src = |t: f64, out: &mut [f64]| {
        for (o, &x) in out.iter_mut().zip(&grid) {
            let (sx, cx) = (PI * x).sin_cos();
            let div = da(x) * t * PI * cx - a(x) * t * PI * PI * sx;
            *o = sx - div - RD_KAPPA * (t * sx).powi(2);
        }
    };
    let last = s.run(src, s.n_steps)?.pop().unwrap();
    let num: f64 = last.iter().zip(&grid).map(|(u, x)| (u - (PI * x).sin()).powi(2)).sum();
    let den: f64 = grid.iter().map(|x| (PI * x).sin().powi(2)).sum();
    Ok((num / den).sqrt())
}

// 10. Both solvers converge on manufactured solutions.
fn solvers(_: &Shared) -> Result<Outcome> {
    use std::f64::consts::PI;
    let constant = |_: f64| RD_DIFFUSION;
    let zero = |_: f64| 0.0;
    let smooth = |x: f64| RD_DIFFUSION * (2.0 + (2.0 * PI * x).sin());
    let dsmooth = |x: f64| RD_DIFFUSION * 2.0 * PI * (2.0 * PI * x).cos();
    let mut ok = true;
    let mut parts = vec![];
    for (name, a, da) in [("constant", &constant as &dyn Fn(f64) -> f64, &zero as &dyn Fn(f64) -> f64), ("variable", &smooth, &dsmooth)] {
        let e1 = manufactured(100, 1e-3, a, da)?;
        let e2 = manufactured(199, 5e-4, a, da)?;
        let order = (e1 / e2).log2();
        ok &= e1 < 1e-3 && order >= 1.8;
        parts.push(format!("{name}: error {e1:.1e}, order {order:.2}"));
    }
    Ok(Outcome {
        passed: ok,
        detail: parts.join("; "),
    })
}

const TINY_E1: &str = r#"
experiment = "e1-regression"
seeds = [0, 1]
modes = ["ignore", "model", "recast"]
baselines = ["map", "dropout:0.02"]
hmc = { leapfrog_steps = 10, num_samples = 100, burn_in = 100 }
init = { warm_start = { iterations = 300, lr = 1e-3 }, map = { iterations = 200, lr = 1e-3 } }
regression = { hidden = [12], n_eval = 64, dropout = { iterations = 300, passes = 50 } }
"#;

const TINY_E5: &str = r#"
experiment = "e5-rd-hetero-operator"
modes = ["model"]
baselines = ["map", "non-synergistic"]
hmc = { leapfrog_steps = 10, num_samples = 100, burn_in = 100 }
init = { map = { iterations = 100, lr = 1e-2 } }

[operator]
corpus = { n_train = 10, n_test = 4 }
network = { branch_hidden = [16], trunk_hidden = [16], p = 16 }
training = { iterations = 100 }
"#;

fn artifacts(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = vec![];
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap().map(|e| e.unwrap().path()) {
            let name = e.file_name().unwrap().to_string_lossy().into_owned();
            if e.is_dir() {
                stack.push(e);
            } else if name == "report.json" || (name.starts_with("summary_") && name.ends_with(".csv")) {
                out.push((e.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&e).unwrap()));
            }
        }
    }
    out.sort();
    out
}

// 11. Two invocations of the same config give identical reports and summaries.
fn determinism(sh: &Shared) -> Result<Outcome> {
    let mut same = true;
    let mut files = 0;
    for (k, text) in [TINY_E1, TINY_E5].into_iter().enumerate() {
        let mut cfg = ExperimentConfig::from_toml_str(text)?;
        cfg.operator.iter_mut().for_each(|o| o.checkpoint = sh.dir.join("c11_checkpoint.json"));
        let a = sh.dir.join(format!("c11_{k}_a"));
        let b = sh.dir.join(format!("c11_{k}_b"));
        run(&mut cfg, &a)?;
        run(&mut cfg, &b)?;
        let (fa, fb) = (artifacts(&a), artifacts(&b));
        files += fa.len();
        same &= !fa.is_empty() && fa == fb;
    }
    Ok(Outcome {
        passed: same,
        detail: format!("{files} files compared"),
    })
}

struct Shared {
    dir: PathBuf,
    checkpoint: PathBuf,
}

type Criterion = (usize, &'static str, Option<Duration>, fn(&Shared) -> Result<Outcome>);

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "autodiff oracle", Some(Duration::from_secs(10)), autodiff),
        (2, "sampler oracle", Some(Duration::from_secs(30)), sampler),
        (3, "recast exactness", None, recast),
        (4, "conjugate operator posterior", None, conjugate),
        (5, "deterministic PINN ordering", Some(Duration::from_secs(300)), pinn_ordering),
        (6, "forward Poisson ordering and coverage", Some(Duration::from_secs(1200)), forward_poisson),
        (7, "inverse Poisson lambda", Some(Duration::from_secs(1200)), inverse_poisson),
        (8, "operator training", Some(Duration::from_secs(600)), operator_training),
        (9, "operator baselines", None, operator_baselines),
        (10, "solver verification", None, solvers),
        (11, "determinism", None, determinism),
    ];
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected: Vec<usize> = args.iter().filter_map(|a| a.parse().ok()).collect();
    if args.iter().any(|a| a.parse::<usize>().is_err()) {
        // Invoked by a test-name filter that does not address this suite.
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let shared = Shared {
        dir: tmp.path().to_path_buf(),
        checkpoint: tmp.path().join("rd_constant.json"),
    };
    let mut failed = 0;
    let mut errored = 0;
    let mut ran = 0;
    for (n, name, limit, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let t0 = Instant::now();
        let res = f(&shared);
        let dt = t0.elapsed();
        ran += 1;
        let (passed, detail) = match res {
            Ok(o) => (o.passed, o.detail),
            Err(e) => {
                errored += 1;
                (false, format!("error: {e}"))
            }
        };
        let in_time = limit.is_none_or(|l| dt <= l);
        let timing = match limit {
            Some(l) => format!("{:.1} s, limit {} s", dt.as_secs_f64(), l.as_secs()),
            None => format!("{:.1} s", dt.as_secs_f64()),
        };
        let ok = passed && in_time;
        failed += !ok as usize;
        println!("{} criterion {n:>2} {name}: {detail} [{timing}]", if ok { "PASS" } else { "FAIL" });
    }
    println!("{}/{ran} criteria passed", ran - failed);
    let strict = std::env::var("EIVUQ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if errored > 0 || (strict && failed > 0) {
        std::process::exit(1);
    }
}
