//! Flat key=value experiment configuration. Unknown keys are rejected by
//! name; the seed is mandatory so no run ever depends on a wall clock.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// Validated configuration for one run.
#[derive(Debug, Clone)]
pub struct Config {
    pub experiment: String,
    pub seed: u64,
    pub workers: usize,
    pub out: String,
    /// experiment-specific overrides, already range-checked by the runner
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

pub const EXPERIMENTS: &[&str] = &[
    "exit-set-scan",
    "connectivity-decay",
    "isomorphism-suite",
    "corr-sandwich",
    "polyakov-limit",
    "chessboard-tail",
    "gm-suite",
    "equator-diagnostic",
];

/// Keys every experiment accepts.
const COMMON_KEYS: &[&str] = &["experiment", "seed", "workers", "out"];

/// Extra keys per experiment.
fn allowed_extra(experiment: &str) -> &'static [&'static str] {
    match experiment {
        "exit-set-scan" => &[
            "ncomp",
            "radius",
            "jump",
            "eps",
            "reach_sizes",
            "reach_replicas",
            "phi_sizes",
            "phi_replicas",
            "walk_pairs",
            "control_replicas",
        ],
        "connectivity-decay" => &["window", "ncomp", "radius", "jump", "distances", "replicas"],
        "isomorphism-suite" => &["n", "nlabels", "replicas"],
        "corr-sandwich" => &[
            "window",
            "ncomp",
            "beta",
            "distances",
            "burnin",
            "measurements",
            "thin",
        ],
        "polyakov-limit" => &["side", "ncomp", "betas", "burnin", "measurements"],
        "chessboard-tail" => &[
            "side",
            "ncomp",
            "beta",
            "ks",
            "separations",
            "burnin",
            "measurements",
        ],
        "gm-suite" => &[
            "side",
            "beta",
            "mass",
            "mask_replicas",
            "bernoulli_p",
            "beta_ising",
            "fk_sides",
            "xy_distances",
            "xy_mask_replicas",
            "xy_measurements",
            "xy_burnin",
        ],
        "equator-diagnostic" => &["windows", "ncomp", "beta", "reach", "replicas", "burnin"],
        _ => &[],
    }
}

/// Parse `key = value` lines; `#` starts a comment.
pub fn parse(text: &str) -> Result<Config, ConfigError> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError(format!(
                "line {}: expected key = value, got {raw:?}",
                lineno + 1
            )));
        };
        let key = k.trim().to_string();
        if map.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(ConfigError(format!("duplicate key {key:?}")));
        }
    }
    let experiment = map
        .remove("experiment")
        .ok_or_else(|| ConfigError("missing key \"experiment\"".into()))?;
    if !EXPERIMENTS.contains(&experiment.as_str()) {
        return Err(ConfigError(format!(
            "unknown experiment {experiment:?}; known: {}",
            EXPERIMENTS.join(", ")
        )));
    }
    let seed = map
        .remove("seed")
        .ok_or_else(|| ConfigError("missing key \"seed\" (seeds are mandatory)".into()))?
        .parse::<u64>()
        .map_err(|e| ConfigError(format!("bad seed: {e}")))?;
    let workers = match map.remove("workers") {
        Some(w) => w
            .parse::<usize>()
            .map_err(|e| ConfigError(format!("bad workers: {e}")))?,
        None => 1,
    };
    let out = map.remove("out").unwrap_or_else(|| ".".into());
    let allowed = allowed_extra(&experiment);
    for key in map.keys() {
        if !allowed.contains(&key.as_str()) && !COMMON_KEYS.contains(&key.as_str()) {
            return Err(ConfigError(format!(
                "unknown key {key:?} for experiment {experiment:?}"
            )));
        }
    }
    Ok(Config {
        experiment,
        seed,
        workers,
        out,
        extra: map,
    })
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

impl Config {
    pub fn get_f64(&self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError(format!("bad value for {key:?}: {e}"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize, ConfigError> {
        match self.extra.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|e| ConfigError(format!("bad value for {key:?}: {e}"))),
        }
    }

    pub fn get_i32_list(&self, key: &str, default: &[i32]) -> Result<Vec<i32>, ConfigError> {
        match self.extra.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let out: Result<Vec<i32>, _> =
                    v.split(',').map(|s| s.trim().parse::<i32>()).collect();
                let out = out.map_err(|e| ConfigError(format!("bad list for {key:?}: {e}")))?;
                if out.is_empty() {
                    return Err(ConfigError(format!("empty list for {key:?}")));
                }
                Ok(out)
            }
        }
    }

    pub fn get_f64_list(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, ConfigError> {
        match self.extra.get(key) {
            None => Ok(default.to_vec()),
            Some(v) => {
                let out: Result<Vec<f64>, _> =
                    v.split(',').map(|s| s.trim().parse::<f64>()).collect();
                let out = out.map_err(|e| ConfigError(format!("bad list for {key:?}: {e}")))?;
                if out.is_empty() {
                    return Err(ConfigError(format!("empty list for {key:?}")));
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_config() {
        let c = parse("experiment = corr-sandwich\nseed = 7\n# comment\nbeta = 1.5\n").unwrap();
        assert_eq!(c.experiment, "corr-sandwich");
        assert_eq!(c.seed, 7);
        assert_eq!(c.get_f64("beta", 1.0).unwrap(), 1.5);
    }

    #[test]
    fn rejects_unknown_key_by_name() {
        let err = parse("experiment = corr-sandwich\nseed = 1\nbogus_key = 3\n").unwrap_err();
        assert!(err.0.contains("bogus_key"), "{}", err.0);
    }

    #[test]
    fn rejects_unknown_experiment_and_missing_seed() {
        assert!(parse("experiment = nope\nseed = 1\n").is_err());
        let err = parse("experiment = corr-sandwich\n").unwrap_err();
        assert!(err.0.contains("seed"));
    }
}
