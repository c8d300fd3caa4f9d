//! Flat `key = value` run configuration.

use std::path::PathBuf;

use crate::error::{KtulaError, Result};
use crate::format::fmt_f64;
use crate::diagnostics::Metric;
use crate::sampler::{Algorithm, InitialLaw};

/// Every accepted key with its default, in manifest order.
pub const KEYS: &[(&str, &str)] = &[
    ("potential", "double_well"),
    ("dim", "1"),
    ("quadratic_a", "1"),
    ("nn_hidden", "2"),
    ("nn_inputs", "2"),
    ("nn_samples", "8"),
    ("nn_eta", "1"),
    ("nn_data", ""),
    ("nn_seed", "0"),
    ("beta", "1"),
    ("lambda", "1e-5"),
    ("epsilon_h", "0.5"),
    ("n_steps", "100000"),
    ("n_chains", "4"),
    ("burn_in", "50000"),
    ("thinning", "100"),
    ("seed", "0"),
    ("init", "gaussian:1"),
    ("algorithm", "ktula"),
    ("divergence_threshold", "1e12"),
    ("epsilon", "0.1"),
    ("c_ls", "1"),
    ("delta", "0.1"),
    ("kl0", "auto"),
    ("j0", "auto"),
    ("lambdas", "2e-5,1e-5,5e-6,2.5e-6"),
    ("groups", "8"),
    ("horizon", "10"),
    ("metric", "w1_1d"),
    ("bins", "512"),
    ("extent", "auto"),
    ("reference_r", "8"),
    ("reference_g", "20001"),
    ("box", "-3:3"),
    ("resolution", "101"),
    ("n_proj", "64"),
    ("n_points", "1000"),
    ("radius", "10"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    DoubleWell,
    Quadratic,
    NeuralNet,
}

impl PotentialKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PotentialKind::DoubleWell => "double_well",
            PotentialKind::Quadratic => "quadratic",
            PotentialKind::NeuralNet => "neural_net",
        }
    }
}

/// Resolved configuration with every default materialised.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub potential: PotentialKind,
    pub dim: usize,
    pub quadratic_a: f64,
    pub nn_hidden: usize,
    pub nn_inputs: usize,
    pub nn_samples: usize,
    pub nn_eta: f64,
    pub nn_data: Option<PathBuf>,
    pub nn_seed: u64,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon_h: f64,
    pub n_steps: usize,
    pub n_chains: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
    pub init: InitialLaw,
    pub algorithm: Algorithm,
    pub divergence_threshold: f64,
    pub epsilon: f64,
    pub c_ls: f64,
    pub delta: f64,
    pub kl0: Option<f64>,
    pub j0: Option<f64>,
    pub lambdas: Vec<f64>,
    pub groups: usize,
    pub horizon: f64,
    pub metric: Metric,
    pub bins: usize,
    pub extent: Option<f64>,
    pub reference_r: f64,
    pub reference_g: usize,
    pub box_: Vec<(f64, f64)>,
    pub resolution: usize,
    pub n_proj: usize,
    pub n_points: usize,
    pub radius: f64,
}

fn usage(msg: impl Into<String>) -> KtulaError {
    KtulaError::Usage(msg.into())
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse::<T>()
        .map_err(|_| usage(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_auto(key: &str, v: &str) -> Result<Option<f64>> {
    if v.trim() == "auto" {
        Ok(None)
    } else {
        parse_num(key, v).map(Some)
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|s| parse_num(key, s)).collect()
}

fn parse_init(v: &str) -> Result<InitialLaw> {
    let (kind, rest) = v
        .split_once(':')
        .ok_or_else(|| usage(format!("`init`: expected constant:<values> or gaussian:<sigma>, got `{v}`")))?;
    match kind.trim() {
        "constant" => Ok(InitialLaw::Constant(parse_list("init", rest)?)),
        "gaussian" => Ok(InitialLaw::Gaussian {
            sigma: parse_num("init", rest)?,
        }),
        other => Err(usage(format!("`init`: unknown law `{other}`"))),
    }
}

fn parse_box(v: &str) -> Result<Vec<(f64, f64)>> {
    v.split(',')
        .map(|part| {
            let (lo, hi) = part
                .split_once(':')
                .ok_or_else(|| usage(format!("`box`: expected lo:hi, got `{part}`")))?;
            Ok((parse_num("box", lo)?, parse_num("box", hi)?))
        })
        .collect()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(",")
}

fn fmt_auto(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_else(|| "auto".into())
}

/// Splits config text into `(key, value)` pairs, rejecting unknown and repeated keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
        let key = key.trim().to_string();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            let valid: Vec<&str> = KEYS.iter().map(|(k, _)| *k).collect();
            return Err(usage(format!(
                "unknown config key `{key}`; valid keys: {}",
                valid.join(", ")
            )));
        }
        if pairs.iter().any(|(k, _)| *k == key) {
            return Err(usage(format!("config key `{key}` given twice")));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

impl Settings {
    /// Defaults overridden by `pairs`.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| -> String {
            pairs
                .iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .unwrap_or_else(|| {
                    KEYS.iter()
                        .find(|(k, _)| *k == key)
                        .map(|(_, d)| d.to_string())
                        .expect("known key")
                })
        };
        let potential = match get("potential").as_str() {
            "double_well" => PotentialKind::DoubleWell,
            "quadratic" => PotentialKind::Quadratic,
            "neural_net" => PotentialKind::NeuralNet,
            other => {
                return Err(usage(format!(
                    "`potential`: expected double_well, quadratic or neural_net, got `{other}`"
                )))
            }
        };
        let nn_data = get("nn_data");
        let mut s = Self {
            potential,
            dim: parse_num("dim", &get("dim"))?,
            quadratic_a: parse_num("quadratic_a", &get("quadratic_a"))?,
            nn_hidden: parse_num("nn_hidden", &get("nn_hidden"))?,
            nn_inputs: parse_num("nn_inputs", &get("nn_inputs"))?,
            nn_samples: parse_num("nn_samples", &get("nn_samples"))?,
            nn_eta: parse_num("nn_eta", &get("nn_eta"))?,
            nn_data: (!nn_data.is_empty()).then(|| PathBuf::from(nn_data)),
            nn_seed: parse_num("nn_seed", &get("nn_seed"))?,
            beta: parse_num("beta", &get("beta"))?,
            lambda: parse_num("lambda", &get("lambda"))?,
            epsilon_h: parse_num("epsilon_h", &get("epsilon_h"))?,
            n_steps: parse_num("n_steps", &get("n_steps"))?,
            n_chains: parse_num("n_chains", &get("n_chains"))?,
            burn_in: parse_num("burn_in", &get("burn_in"))?,
            thinning: parse_num("thinning", &get("thinning"))?,
            seed: parse_num("seed", &get("seed"))?,
            init: parse_init(&get("init"))?,
            algorithm: get("algorithm").parse()?,
            divergence_threshold: parse_num("divergence_threshold", &get("divergence_threshold"))?,
            epsilon: parse_num("epsilon", &get("epsilon"))?,
            c_ls: parse_num("c_ls", &get("c_ls"))?,
            delta: parse_num("delta", &get("delta"))?,
            kl0: parse_auto("kl0", &get("kl0"))?,
            j0: parse_auto("j0", &get("j0"))?,
            lambdas: parse_list("lambdas", &get("lambdas"))?,
            groups: parse_num("groups", &get("groups"))?,
            horizon: parse_num("horizon", &get("horizon"))?,
            metric: get("metric").parse()?,
            bins: parse_num("bins", &get("bins"))?,
            extent: parse_auto("extent", &get("extent"))?,
            reference_r: parse_num("reference_r", &get("reference_r"))?,
            reference_g: parse_num("reference_g", &get("reference_g"))?,
            box_: parse_box(&get("box"))?,
            resolution: parse_num("resolution", &get("resolution"))?,
            n_proj: parse_num("n_proj", &get("n_proj"))?,
            n_points: parse_num("n_points", &get("n_points"))?,
            radius: parse_num("radius", &get("radius"))?,
        };
        if s.potential == PotentialKind::NeuralNet {
            let implied = 2 * s.nn_hidden;
            if pairs.iter().any(|(k, _)| k == "dim") && s.dim != implied {
                return Err(usage(format!(
                    "`dim` = {} conflicts with neural_net dimension 2 * nn_hidden = {implied}",
                    s.dim
                )));
            }
            s.dim = implied;
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_pairs(&parse_pairs(text)?)
    }

    /// Every key with its resolved value, in [`KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let init = match &self.init {
            InitialLaw::Constant(c) => format!("constant:{}", fmt_list(c)),
            InitialLaw::Gaussian { sigma } => format!("gaussian:{}", fmt_f64(*sigma)),
        };
        let box_ = self
            .box_
            .iter()
            .map(|(lo, hi)| format!("{}:{}", fmt_f64(*lo), fmt_f64(*hi)))
            .collect::<Vec<_>>()
            .join(",");
        vec![
            ("potential", self.potential.as_str().into()),
            ("dim", self.dim.to_string()),
            ("quadratic_a", fmt_f64(self.quadratic_a)),
            ("nn_hidden", self.nn_hidden.to_string()),
            ("nn_inputs", self.nn_inputs.to_string()),
            ("nn_samples", self.nn_samples.to_string()),
            ("nn_eta", fmt_f64(self.nn_eta)),
            (
                "nn_data",
                self.nn_data
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("nn_seed", self.nn_seed.to_string()),
            ("beta", fmt_f64(self.beta)),
            ("lambda", fmt_f64(self.lambda)),
            ("epsilon_h", fmt_f64(self.epsilon_h)),
            ("n_steps", self.n_steps.to_string()),
            ("n_chains", self.n_chains.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("thinning", self.thinning.to_string()),
            ("seed", self.seed.to_string()),
            ("init", init),
            ("algorithm", self.algorithm.as_str().into()),
            ("divergence_threshold", fmt_f64(self.divergence_threshold)),
            ("epsilon", fmt_f64(self.epsilon)),
            ("c_ls", fmt_f64(self.c_ls)),
            ("delta", fmt_f64(self.delta)),
            ("kl0", fmt_auto(self.kl0)),
            ("j0", fmt_auto(self.j0)),
            ("lambdas", fmt_list(&self.lambdas)),
            ("groups", self.groups.to_string()),
            ("horizon", fmt_f64(self.horizon)),
            ("metric", self.metric.as_str().into()),
            ("bins", self.bins.to_string()),
            ("extent", fmt_auto(self.extent)),
            ("reference_r", fmt_f64(self.reference_r)),
            ("reference_g", self.reference_g.to_string()),
            ("box", box_),
            ("resolution", self.resolution.to_string()),
            ("n_proj", self.n_proj.to_string()),
            ("n_points", self.n_points.to_string()),
            ("radius", fmt_f64(self.radius)),
        ]
    }

    /// Config text that parses back to `self`.
    pub fn to_config_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

impl Default for Settings {
    fn default() -> Self {
        Self::from_pairs(&[]).expect("defaults parse")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let s = Settings::default();
        assert_eq!(Settings::parse(&s.to_config_text()).unwrap(), s);
        assert_eq!(s.to_pairs().len(), KEYS.len());
    }

    #[test]
    fn overrides_and_comments() {
        let s = Settings::parse("# comment\nbeta = 20 # inline\ninit = constant:1,2\nbox = -1:1,-2:2\n").unwrap();
        assert_eq!(s.beta, 20.0);
        assert_eq!(s.init, InitialLaw::Constant(vec![1.0, 2.0]));
        assert_eq!(s.box_, vec![(-1.0, 1.0), (-2.0, 2.0)]);
        assert_eq!(Settings::parse(&s.to_config_text()).unwrap(), s);
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = Settings::parse("betta = 2").unwrap_err();
        match err {
            KtulaError::Usage(msg) => {
                assert!(msg.contains("betta"));
                assert!(msg.contains("beta, lambda"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_values_rejected() {
        assert!(Settings::parse("dim = two").is_err());
        assert!(Settings::parse("init = uniform:1").is_err());
        assert!(Settings::parse("beta = 1\nbeta = 2").is_err());
        assert!(Settings::parse("just words").is_err());
    }
}
