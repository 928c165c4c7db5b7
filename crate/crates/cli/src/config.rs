use std::path::{Path, PathBuf};

use aglab::functional::MinimizeOptions;
use aglab::optim::Method;
use aglab::Domain;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Parse { path: String, line: usize, column: usize, message: String },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Output directory, relative to the config file.
    pub output: String,
    pub domain: DomainConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub minimize: MinimizeConfig,
    #[serde(default)]
    pub entropy: EntropyConfig,
    #[serde(default)]
    pub kinetic: KineticConfig,
    #[serde(default)]
    pub characteristics: CharacteristicsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainConfig {
    Ellipse {
        a: f64,
        b: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
    Stadium {
        length: f64,
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        delta: Option<f64>,
    },
}

impl DomainConfig {
    pub fn build(&self) -> aglab::Result<Domain> {
        let (d, delta) = match *self {
            DomainConfig::Ellipse { a, b, delta } => (Domain::ellipse(a, b)?, delta),
            DomainConfig::Stadium { length, radius, delta } => (Domain::stadium(length, radius)?, delta),
        };
        match delta {
            Some(delta) => Domain::new(d.kind, delta),
            None => Ok(d),
        }
    }
}

/// Either `resolution` nodes across the longest side of `Ω_δ` or an explicit `h`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub eps_list: Vec<f64>,
    pub optimizer: Method,
    pub max_iter: usize,
    pub tol: f64,
    pub hessian_power: u8,
    pub eta0: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta_min: Option<f64>,
    pub nonmonotone: usize,
    pub memory: usize,
    pub blur: f64,
    /// Field dump used as the initial guess for the first `eps`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<String>,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        let o = MinimizeOptions::default();
        MinimizeConfig {
            eps_list: vec![0.4, 0.2, 0.1],
            optimizer: o.optimizer,
            max_iter: o.max_iter,
            tol: o.tol,
            hessian_power: o.hessian_power,
            eta0: o.eta0,
            eta_min: o.eta_min,
            nonmonotone: o.nonmonotone,
            memory: o.memory,
            blur: o.blur,
            warm_start: None,
        }
    }
}

impl MinimizeConfig {
    pub fn options(&self) -> MinimizeOptions {
        MinimizeOptions {
            optimizer: self.optimizer,
            max_iter: self.max_iter,
            tol: self.tol,
            hessian_power: self.hessian_power,
            eta0: self.eta0,
            eta_min: self.eta_min,
            nonmonotone: self.nonmonotone,
            memory: self.memory,
            blur: self.blur,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EntropyConfig {
    pub enabled: bool,
    /// Frames `θ_k = kπ/(2n)` in the cellwise supremum.
    pub frames: usize,
    pub ridge_samples: usize,
    pub flux_nodes: usize,
}

impl Default for EntropyConfig {
    fn default() -> Self {
        EntropyConfig { enabled: true, frames: 8, ridge_samples: 64, flux_nodes: 4096 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KineticConfig {
    pub enabled: bool,
    /// Refinement levels as `1/h`.
    pub levels: Vec<usize>,
    pub betas: Vec<f64>,
    /// Harmonics `k` of the generators `cos ks`, `sin ks` (even only).
    pub harmonics: Vec<usize>,
    pub normalization_points: usize,
}

impl Default for KineticConfig {
    fn default() -> Self {
        use std::f64::consts::PI;
        KineticConfig {
            enabled: true,
            levels: vec![64, 128, 256],
            betas: vec![PI / 8.0, PI / 4.0, PI / 3.0, 3.0 * PI / 8.0, PI / 2.0],
            harmonics: vec![2, 4],
            normalization_points: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CharacteristicsConfig {
    pub enabled: bool,
    pub ensemble: usize,
    pub window: f64,
    pub dt: f64,
    pub h: f64,
    /// Number of individual curves written as CSV.
    pub curves: usize,
}

impl Default for CharacteristicsConfig {
    fn default() -> Self {
        CharacteristicsConfig { enabled: true, ensemble: 100_000, window: 1.0, dt: 1.0 / 256.0, h: 1.0 / 256.0, curves: 8 }
    }
}

/// A parsed config together with where it came from.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: ExperimentConfig,
    pub base: PathBuf,
    pub hash: String,
}

impl Loaded {
    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output)
    }
}

pub fn parse(text: &str, path: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text).map_err(|e| {
        let start = e.span().map_or(0, |s| s.start);
        let at = unknown_key_offset(text, start, e.message()).unwrap_or(start);
        let (line, column) = if e.span().is_some() { line_col(text, at) } else { (0, 0) };
        ConfigError::Parse { path: path.to_string(), line, column, message: e.message().to_string() }
    })?;
    config.validate().map_err(|message| ConfigError::Invalid { path: path.to_string(), message })?;
    Ok(config)
}

/// Tagged tables are reported at their header; point at the offending key
/// instead when it can be found below it.
fn unknown_key_offset(text: &str, from: usize, message: &str) -> Option<usize> {
    let key = message.strip_prefix("unknown field `")?.split('`').next()?;
    let mut offset = from;
    for (n, line) in text.get(from..)?.split_inclusive('\n').enumerate() {
        let t = line.trim_start();
        if n > 0 && t.starts_with('[') {
            return None;
        }
        if n > 0 && t.contains('=') && t.split('=').next().is_some_and(|k| k.trim() == key) {
            return Some(offset + line.len() - t.len());
        }
        offset += line.len();
    }
    None
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.chars().count(), |i| before[i + 1..].chars().count()) + 1;
    (line, column)
}

pub fn load(path: &Path) -> Result<Loaded, ConfigError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: shown.clone(), source })?;
    let config = parse(&text, &shown)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let hash = config.hash();
    Ok(Loaded { config, base, hash })
}

impl ExperimentConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), String> {
        self.domain.build().map_err(|e| e.to_string())?;
        match (self.grid.resolution, self.grid.h) {
            (Some(n), None) if n >= 8 => {}
            (None, Some(h)) if h > 0.0 && h.is_finite() => {}
            (Some(_), None) => return Err("grid.resolution must be at least 8".into()),
            (None, Some(h)) => return Err(format!("grid.h must be positive, got {h}")),
            _ => return Err("grid needs exactly one of `resolution` or `h`".into()),
        }
        let m = &self.minimize;
        if m.eps_list.is_empty() || m.eps_list.iter().any(|e| !(*e > 0.0)) {
            return Err("minimize.eps_list must hold positive values".into());
        }
        if m.eps_list.windows(2).any(|w| w[1] >= w[0]) {
            return Err("minimize.eps_list must be strictly decreasing".into());
        }
        if !(1..=2).contains(&m.hessian_power) {
            return Err(format!("minimize.hessian_power must be 1 or 2, got {}", m.hessian_power));
        }
        if !(m.tol > 0.0) || m.max_iter == 0 {
            return Err("minimize.tol and minimize.max_iter must be positive".into());
        }
        let k = &self.kinetic;
        if k.levels.is_empty() || k.levels.contains(&0) {
            return Err("kinetic.levels must hold positive values".into());
        }
        if k.betas.iter().any(|b| !(*b > 0.0 && *b <= std::f64::consts::FRAC_PI_2)) {
            return Err("kinetic.betas must lie in (0, pi/2]".into());
        }
        if k.harmonics.iter().any(|h| *h == 0 || h % 2 == 1) {
            return Err("kinetic.harmonics must be even and positive".into());
        }
        let c = &self.characteristics;
        if c.ensemble == 0 || !(c.window > 0.0) || !(c.dt > 0.0) || !(c.h > 0.0) {
            return Err("characteristics needs positive ensemble, window, dt and h".into());
        }
        if self.entropy.frames == 0 || self.entropy.flux_nodes == 0 {
            return Err("entropy.frames and entropy.flux_nodes must be positive".into());
        }
        Ok(())
    }
}
