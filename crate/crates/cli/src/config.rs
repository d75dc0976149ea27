use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use eivuq::models::InferenceMode;
use eivuq::nets::{Activation, TrainSettings};
use eivuq::physics::NoiseModel;
use eivuq::sampler::{HmcConfig, MapSettings};
use eivuq::{Error, Result};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "e1-regression", alias = "E1")]
    E1,
    #[serde(rename = "e2-poisson-forward", alias = "E2")]
    E2,
    #[serde(rename = "e3-poisson-inverse", alias = "E3")]
    E3,
    #[serde(rename = "e4-rd-constant-operator", alias = "E4")]
    E4,
    #[serde(rename = "e5-rd-hetero-operator", alias = "E5")]
    E5,
}

impl ExperimentId {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::E1 => "e1-regression",
            ExperimentId::E2 => "e2-poisson-forward",
            ExperimentId::E3 => "e3-poisson-inverse",
            ExperimentId::E4 => "e4-rd-constant-operator",
            ExperimentId::E5 => "e5-rd-hetero-operator",
        }
    }

    pub fn is_operator(self) -> bool {
        matches!(self, ExperimentId::E4 | ExperimentId::E5)
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Comparison methods run next to the Bayesian modes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Baseline {
    /// Point estimate of the posterior.
    Map,
    /// MLP trained with dropout, predictive spread from stochastic passes.
    Dropout(f64),
    /// Each function reconstructed from its own measurements only.
    NonSynergistic,
    /// Input-function likelihood evaluated with the given noise scale.
    Misspecified(f64),
    /// Deterministic PINNs on clean, noisy-output and noisy-input data.
    Deterministic,
}

impl Baseline {
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Baseline::Map => f.write_str("map"),
            Baseline::Dropout(r) => write!(f, "dropout:{r}"),
            Baseline::NonSynergistic => f.write_str("non-synergistic"),
            Baseline::Misspecified(s) => write!(f, "misspecified:{s}"),
            Baseline::Deterministic => f.write_str("deterministic"),
        }
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let number = |what: &str| -> Result<f64> {
            let a = arg.ok_or_else(|| Error::Config(format!("baseline {what:?} needs a value, e.g. {what}:0.5")))?;
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("baseline {what}: {a:?} is not a number")))
        };
        let b = match head {
            "map" => Baseline::Map,
            "non-synergistic" | "nonsynergistic" => Baseline::NonSynergistic,
            "deterministic" | "pinn" => Baseline::Deterministic,
            "dropout" => Baseline::Dropout(number("dropout")?),
            "misspecified" => Baseline::Misspecified(number("misspecified")?),
            _ => return Err(Error::Config(format!("unknown baseline {s:?}"))),
        };
        if arg.is_some() && matches!(b, Baseline::Map | Baseline::NonSynergistic | Baseline::Deterministic) {
            return Err(Error::Config(format!("baseline {head:?} takes no value")));
        }
        Ok(b)
    }
}

impl Serialize for Baseline {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Baseline {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorSettings {
    pub theta_std: f64,
    pub chi_std: f64,
    /// Drop the latent-input prior altogether.
    pub flat_chi: bool,
    /// Smallest output noise scale used in a likelihood; keeps clean-data
    /// runs well defined.
    pub sigma_floor: f64,
}

impl Default for PriorSettings {
    fn default() -> Self {
        PriorSettings {
            theta_std: 1.0,
            chi_std: 100.0,
            flat_chi: false,
            sigma_floor: 0.01,
        }
    }
}

impl PriorSettings {
    pub fn chi_prior(&self) -> Option<f64> {
        (!self.flat_chi).then_some(self.chi_std)
    }
}

/// How network-based chains are started.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSettings {
    /// Fit of the network weights that ignores input noise; shared by every
    /// mode of a seed.
    pub warm_start: MapSettings,
    /// Per-mode optimization from the warm start; the chain starts there.
    pub map: MapSettings,
    /// Mass of latent input coordinates; `1/σ_in²` when absent.
    pub latent_mass: Option<f64>,
}

impl Default for InitSettings {
    fn default() -> Self {
        InitSettings {
            warm_start: MapSettings {
                iterations: 10_000,
                lr: 1e-3,
            },
            map: MapSettings {
                iterations: 3_000,
                lr: 1e-3,
            },
            latent_mass: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSettings {
    /// Write `samples.csv` for each chain.
    pub samples: bool,
    /// Keep every n-th draw in `samples.csv`.
    pub samples_every: usize,
    pub plots: bool,
}

impl Default for OutputSettings {
    fn default() -> Self {
        OutputSettings {
            samples: true,
            samples_every: 1,
            plots: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DropoutSettings {
    pub iterations: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub passes: usize,
}

impl Default for DropoutSettings {
    fn default() -> Self {
        DropoutSettings {
            iterations: 20_000,
            lr: 1e-3,
            weight_decay: 1e-4,
            passes: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegressionSection {
    pub n_data: usize,
    pub domain: [f64; 2],
    pub noise: NoiseModel,
    pub hidden: Vec<usize>,
    pub n_eval: usize,
    /// Rerun the ignore and model modes with each of these θ prior stds.
    pub small_prior_stds: Vec<f64>,
    pub dropout: DropoutSettings,
}

impl Default for RegressionSection {
    fn default() -> Self {
        RegressionSection {
            n_data: 64,
            domain: [-1.0, 1.0],
            noise: NoiseModel {
                sigma_in: 0.03,
                sigma_out: 0.05,
            },
            hidden: vec![50, 50],
            n_eval: 256,
            small_prior_stds: vec![0.5],
            dropout: DropoutSettings::default(),
        }
    }
}

/// Deterministic PINN fits for the three data scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PinnSettings {
    /// Noise scale of whichever channel is noisy.
    pub noise: f64,
    pub iterations: usize,
    pub lr: f64,
    pub w_u: f64,
    pub w_f: f64,
    pub w_b: f64,
    /// Coefficient of `‖θ‖²`.
    pub l2: f64,
}

impl Default for PinnSettings {
    fn default() -> Self {
        PinnSettings {
            noise: 0.01,
            iterations: 20_000,
            lr: 1e-3,
            w_u: 1.0,
            w_f: 1.0,
            w_b: 1.0,
            l2: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonSection {
    pub kappa: f64,
    /// λ used to generate the data.
    pub lambda_true: f64,
    /// Infer `log λ` instead of fixing λ at `lambda_true`.
    pub infer_lambda: bool,
    pub log_lambda_prior: [f64; 2],
    pub n_f: usize,
    pub f_noise: NoiseModel,
    pub n_u: usize,
    pub u_noise: NoiseModel,
    pub hidden: Vec<usize>,
    pub n_eval: usize,
    pub pinn: PinnSettings,
}

impl PoissonSection {
    pub fn forward() -> Self {
        PoissonSection {
            kappa: 0.01,
            lambda_true: 0.1,
            infer_lambda: false,
            log_lambda_prior: [0.0, 1.0],
            n_f: 51,
            f_noise: NoiseModel {
                sigma_in: 0.01,
                sigma_out: 0.05,
            },
            n_u: 0,
            u_noise: NoiseModel::default(),
            hidden: vec![50, 50],
            n_eval: 256,
            pinn: PinnSettings::default(),
        }
    }

    pub fn inverse() -> Self {
        PoissonSection {
            lambda_true: 0.15,
            infer_lambda: true,
            f_noise: NoiseModel {
                sigma_in: 0.0,
                sigma_out: 0.05,
            },
            n_u: 10,
            u_noise: NoiseModel {
                sigma_in: 0.02,
                sigma_out: 0.05,
            },
            ..Self::forward()
        }
    }
}

impl Default for PoissonSection {
    fn default() -> Self {
        Self::forward()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSpec {
    pub count: usize,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSettings {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub length_scale: f64,
}

impl Default for CorpusSettings {
    fn default() -> Self {
        CorpusSettings {
            n_train: 1000,
            n_test: 200,
            seed: 2024,
            length_scale: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorNetSettings {
    pub branch_hidden: Vec<usize>,
    pub trunk_hidden: Vec<usize>,
    /// Width of the branch/trunk feature vectors.
    pub p: usize,
    pub output_bias: bool,
    pub branch_activation: Activation,
    pub trunk_activation: Activation,
}

impl Default for OperatorNetSettings {
    fn default() -> Self {
        OperatorNetSettings {
            branch_hidden: vec![200],
            trunk_hidden: vec![200],
            p: 200,
            output_bias: true,
            branch_activation: Activation::Relu,
            trunk_activation: Activation::Relu,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSection {
    pub checkpoint: PathBuf,
    /// Train (and save) the operator when the checkpoint is missing.
    pub train_first: bool,
    pub corpus: CorpusSettings,
    pub network: OperatorNetSettings,
    pub training: TrainSettings,
    /// One entry per operator input function (`f` for the constant problem,
    /// `k` then `f` for the heterogeneous one).
    pub inputs: Vec<ChannelSpec>,
    pub output: ChannelSpec,
    pub prior_length_scale: f64,
    pub prior_jitter: f64,
}

impl OperatorSection {
    pub fn constant() -> Self {
        OperatorSection {
            checkpoint: PathBuf::from("checkpoints/rd_constant.json"),
            train_first: true,
            corpus: CorpusSettings::default(),
            network: OperatorNetSettings::default(),
            training: TrainSettings {
                iterations: 20_000,
                batch_size: 64,
                lr: 1e-3,
                ..TrainSettings::default()
            },
            inputs: vec![ChannelSpec { count: 6, sigma: 0.2 }],
            output: ChannelSpec { count: 3, sigma: 0.05 },
            prior_length_scale: 0.2,
            prior_jitter: 1e-6,
        }
    }

    pub fn hetero() -> Self {
        OperatorSection {
            checkpoint: PathBuf::from("checkpoints/rd_hetero.json"),
            training: TrainSettings {
                iterations: 20_000,
                batch_size: 32,
                points_per_batch: Some(256),
                lr: 1e-3,
                ..TrainSettings::default()
            },
            inputs: vec![ChannelSpec { count: 2, sigma: 0.05 }, ChannelSpec { count: 5, sigma: 0.05 }],
            output: ChannelSpec { count: 30, sigma: 0.05 },
            ..Self::constant()
        }
    }
}

impl Default for OperatorSection {
    fn default() -> Self {
        Self::constant()
    }
}

/// One experiment: data generation, inference modes, baselines, sampler and
/// output settings. Only the section matching `experiment` may be present;
/// the others are filled in with their defaults by [`ExperimentConfig::resolve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentId,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Empty means every mode the experiment supports.
    #[serde(default)]
    pub modes: Vec<InferenceMode>,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub hmc: HmcConfig,
    #[serde(default)]
    pub init: InitSettings,
    #[serde(default)]
    pub prior: PriorSettings,
    #[serde(default)]
    pub output: OutputSettings,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poisson: Option<PoissonSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub operator: Option<OperatorSection>,
}

/// Overlay `over` onto `base`, recursing into tables.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

impl ExperimentConfig {
    /// Defaults for an experiment.
    pub fn new(experiment: ExperimentId) -> Self {
        let mut c = ExperimentConfig {
            experiment,
            seeds: default_seeds(),
            modes: vec![],
            baselines: vec![],
            out_dir: None,
            hmc: HmcConfig::default(),
            init: InitSettings::default(),
            prior: PriorSettings::default(),
            output: OutputSettings::default(),
            regression: None,
            poisson: None,
            operator: None,
        };
        c.resolve().expect("defaults are valid");
        c
    }

    /// Parse a config. A partial data section is completed with the
    /// experiment's own defaults, not a generic default.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg_err = |e: &dyn fmt::Display| Error::Config(e.to_string());
        let mut table: toml::Table = text.parse().map_err(|e| cfg_err(&e))?;
        let id: ExperimentId = table
            .get("experiment")
            .ok_or_else(|| Error::Config("missing field `experiment`".into()))?
            .clone()
            .try_into()
            .map_err(|e| cfg_err(&e))?;
        let defaults = ExperimentConfig::new(id);
        let (key, section) = match id {
            ExperimentId::E1 => ("regression", toml::Value::try_from(defaults.regression())),
            ExperimentId::E2 | ExperimentId::E3 => ("poisson", toml::Value::try_from(defaults.poisson())),
            ExperimentId::E4 | ExperimentId::E5 => ("operator", toml::Value::try_from(defaults.operator())),
        };
        if let Some(user) = table.get_mut(key) {
            let mut base = section.map_err(|e| Error::Serde(e.to_string()))?;
            merge(&mut base, user.clone());
            *user = base;
        }
        let mut c: ExperimentConfig = table.try_into().map_err(|e| cfg_err(&e))?;
        c.resolve()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| e.context(format!("reading {}", path.display())))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Fill in the experiment's section and default modes, then validate.
    pub fn resolve(&mut self) -> Result<()> {
        use ExperimentId::*;
        let id = self.experiment;
        let stray = match id {
            E1 => self.poisson.is_some() || self.operator.is_some(),
            E2 | E3 => self.regression.is_some() || self.operator.is_some(),
            E4 | E5 => self.regression.is_some() || self.poisson.is_some(),
        };
        if stray {
            return Err(Error::Config(format!("{id} only accepts its own data section")));
        }
        match id {
            E1 => {
                self.regression.get_or_insert_with(RegressionSection::default);
            }
            E2 => {
                self.poisson.get_or_insert_with(PoissonSection::forward);
            }
            E3 => {
                self.poisson.get_or_insert_with(PoissonSection::inverse);
            }
            E4 => {
                self.operator.get_or_insert_with(OperatorSection::constant);
            }
            E5 => {
                self.operator.get_or_insert_with(OperatorSection::hetero);
            }
        }
        if self.modes.is_empty() && self.baselines.is_empty() {
            self.modes = self.supported_modes().to_vec();
        }
        self.validate()
    }

    pub fn supported_modes(&self) -> &'static [InferenceMode] {
        use InferenceMode::*;
        if self.experiment.is_operator() {
            &[Model]
        } else {
            &InferenceMode::ALL
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.seeds.is_empty() {
            return bad("at least one seed is needed".into());
        }
        let mut seeds = self.seeds.clone();
        seeds.sort();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        for m in &self.modes {
            if !self.supported_modes().contains(m) {
                return bad(format!("{} does not support mode {m}", self.experiment));
            }
        }
        let mut modes = self.modes.clone();
        modes.sort_by_key(|m| *m as u8);
        modes.dedup();
        if modes.len() != self.modes.len() {
            return bad("modes must be distinct".into());
        }
        for b in &self.baselines {
            let ok = match (b, self.experiment) {
                (Baseline::Dropout(r), ExperimentId::E1) => (0.0..1.0).contains(r),
                (Baseline::Map, _) => true,
                (Baseline::Deterministic, ExperimentId::E2) => true,
                (Baseline::NonSynergistic, e) => e.is_operator(),
                (Baseline::Misspecified(s), e) => e.is_operator() && *s > 0.0,
                _ => false,
            };
            if !ok {
                return bad(format!("baseline {b} is not available for {}", self.experiment));
            }
        }
        if !(self.prior.theta_std > 0.0 && self.prior.chi_std > 0.0 && self.prior.sigma_floor > 0.0) {
            return bad("prior scales and the noise floor must be positive".into());
        }
        if self.output.samples_every == 0 {
            return bad("output.samples_every must be at least 1".into());
        }
        if let Some(r) = &self.regression {
            r.noise.validate()?;
            if r.n_data == 0 || r.n_eval < 2 || !(r.domain[0] < r.domain[1]) || r.hidden.is_empty() {
                return bad("regression: need data, an evaluation grid, a proper domain and hidden layers".into());
            }
            if r.small_prior_stds.iter().any(|s| !(*s > 0.0)) {
                return bad("regression.small_prior_stds must be positive".into());
            }
            if r.noise.sigma_in == 0.0 && self.modes.contains(&InferenceMode::Model) {
                return bad("model mode needs a positive input noise scale".into());
            }
        }
        if let Some(p) = &self.poisson {
            p.f_noise.validate()?;
            p.u_noise.validate()?;
            if p.n_f < 2 || p.n_eval < 2 || p.hidden.is_empty() {
                return bad("poisson: need at least two f points, an evaluation grid and hidden layers".into());
            }
            if !(p.kappa > 0.0 && p.lambda_true >= 0.0 && p.log_lambda_prior[1] > 0.0) {
                return bad("poisson: κ and the log λ prior std must be positive, λ non-negative".into());
            }
            let pinn = &p.pinn;
            if !(pinn.noise > 0.0 && pinn.lr > 0.0 && pinn.l2 >= 0.0 && pinn.w_f > 0.0 && pinn.w_u >= 0.0 && pinn.w_b >= 0.0) {
                return bad("poisson.pinn: noise, lr and w_f must be positive, other weights non-negative".into());
            }
        }
        if let Some(o) = &self.operator {
            let want = if self.experiment == ExperimentId::E4 { 1 } else { 2 };
            if o.inputs.len() != want {
                return bad(format!("{} needs {want} input channel(s), got {}", self.experiment, o.inputs.len()));
            }
            if o.inputs.iter().chain([&o.output]).any(|c| !(c.sigma > 0.0)) {
                return bad("operator measurement noise scales must be positive".into());
            }
            if o.output.count == 0 {
                return bad("operator experiments need output measurements".into());
            }
            if !(o.prior_length_scale > 0.0 && o.prior_jitter >= 0.0) {
                return bad("operator prior length scale must be positive".into());
            }
            if o.corpus.n_test == 0 {
                return bad("the operator corpus needs test functions".into());
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn regression(&self) -> &RegressionSection {
        self.regression.as_ref().expect("resolved config")
    }

    pub fn poisson(&self) -> &PoissonSection {
        self.poisson.as_ref().expect("resolved config")
    }

    pub fn operator(&self) -> &OperatorSection {
        self.operator.as_ref().expect("resolved config")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baselines_parse_and_print() {
        for s in ["map", "dropout:0.02", "non-synergistic", "misspecified:0.01", "deterministic"] {
            let b: Baseline = s.parse().unwrap();
            assert_eq!(b.to_string(), s);
        }
        assert!("dropout".parse::<Baseline>().is_err());
        assert!("map:1".parse::<Baseline>().is_err());
        assert!("bogus".parse::<Baseline>().is_err());
    }

    #[test]
    fn defaults_resolve_per_experiment() {
        let c = ExperimentConfig::from_toml_str("experiment = \"e3-poisson-inverse\"").unwrap();
        assert_eq!(c.poisson().lambda_true, 0.15);
        assert!(c.poisson().infer_lambda);
        assert_eq!(c.modes, InferenceMode::ALL.to_vec());
        let c = ExperimentConfig::from_toml_str("experiment = \"E4\"").unwrap();
        assert_eq!(c.modes, vec![InferenceMode::Model]);
        assert_eq!(c.operator().inputs[0].sigma, 0.2);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cases = [
            "experiment = \"E1\"\n[poisson]\nn_f = 3",
            "experiment = \"E2\"\nbaselines = [\"dropout:0.5\"]",
            "experiment = \"E4\"\nmodes = [\"ignore\"]",
            "experiment = \"E2\"\nseeds = []",
            "experiment = \"E2\"\nunknown = 1",
            "experiment = \"E1\"\nmodes = [\"model\"]\n[regression.noise]\nsigma_in = 0.0",
        ];
        for text in cases {
            assert!(ExperimentConfig::from_toml_str(text).is_err(), "{text}");
        }
    }

    #[test]
    fn toml_round_trip_preserves_hash() {
        let mut c = ExperimentConfig::new(ExperimentId::E2);
        c.baselines = vec![Baseline::Deterministic];
        c.seeds = vec![3, 4];
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        c.seeds = vec![3];
        assert_ne!(back.hash(), c.hash());
    }

    #[test]
    fn partial_sections_keep_experiment_defaults() {
        let c = ExperimentConfig::from_toml_str("experiment = \"e3-poisson-inverse\"\n[poisson]\nn_eval = 32\n").unwrap();
        let p = c.poisson();
        assert_eq!(p.n_eval, 32);
        assert_eq!(p.lambda_true, PoissonSection::inverse().lambda_true);
        assert!(p.infer_lambda);
        let mut r = ExperimentConfig::new(ExperimentId::E1);
        r.regression.as_mut().unwrap().small_prior_stds.clear();
        let back = ExperimentConfig::from_toml_str(&r.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
