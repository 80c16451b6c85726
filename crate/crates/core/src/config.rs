//! Run configuration in a sectioned key-value format:
//!
//! ```text
//! [fixture]
//! name = elastic_pendulum
//! params = Omega:1, gamma:0.1
//! fast = 0.5, 0
//! slow = 0.1, 1
//!
//! [integrator]
//! method = dopri5
//! rtol = 1e-11
//!
//! [experiment]
//! eps = 0.2, 0.1, 0.05, 0.025, 0.0125
//! orders = 0, 1, 2
//! variant = auto
//! ```
//!
//! `#` and `;` start comments. Unknown sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::circle::QuadratureConfig;
use crate::error::{Error, Result};
use crate::experiments::{DriftConfig, OutputFormat};
use crate::fixtures::{fixture_params, get_fixture, FixtureSpec};
use crate::integrators::{IntegratorConfig, Method};
use crate::invariants::F2Variant;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantChoice {
    Ai3,
    Ty3,
    Auto,
}

impl VariantChoice {
    pub fn forced(self) -> Option<F2Variant> {
        match self {
            VariantChoice::Ai3 => Some(F2Variant::Ai3),
            VariantChoice::Ty3 => Some(F2Variant::Ty3),
            VariantChoice::Auto => None,
        }
    }

    fn as_str(self) -> &'static str {
        match self {
            VariantChoice::Ai3 => "ai3",
            VariantChoice::Ty3 => "ty3",
            VariantChoice::Auto => "auto",
        }
    }
}

impl FromStr for VariantChoice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ai3" => Ok(VariantChoice::Ai3),
            "ty3" => Ok(VariantChoice::Ty3),
            "auto" => Ok(VariantChoice::Auto),
            other => Err(Error::Config(format!(
                "variant must be ai3, ty3 or auto, got '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub fixture: String,
    pub params: BTreeMap<String, f64>,
    /// `None` selects the fixture's default point.
    pub fast: Option<Vec<f64>>,
    pub slow: Option<Vec<f64>>,
    pub integrator: IntegratorConfig,
    pub quadrature: QuadratureConfig,
    pub eps: Vec<f64>,
    pub horizon: f64,
    pub samples: usize,
    pub orders: Vec<usize>,
    pub variant: VariantChoice,
    pub strict: bool,
    /// Series order for single-point evaluation.
    pub order: usize,
    pub out_dir: PathBuf,
    pub format: OutputFormat,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            fixture: "elastic_pendulum".into(),
            params: BTreeMap::new(),
            fast: None,
            slow: None,
            integrator: IntegratorConfig::adaptive(1e-11, 1e-13),
            quadrature: QuadratureConfig::default(),
            eps: crate::fixtures::DEFAULT_EPS_GRID.to_vec(),
            horizon: 1.0,
            samples: 512,
            orders: vec![0, 1, 2],
            variant: VariantChoice::Auto,
            strict: false,
            order: 2,
            out_dir: PathBuf::from("."),
            format: OutputFormat::Both,
        }
    }
}

fn config_err(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_f64(line: usize, v: &str) -> Result<f64> {
    let x: f64 = v
        .trim()
        .parse()
        .map_err(|_| config_err(line, format!("'{}' is not a number", v.trim())))?;
    if !x.is_finite() {
        return Err(config_err(line, format!("'{}' is not finite", v.trim())));
    }
    Ok(x)
}

fn parse_usize(line: usize, v: &str) -> Result<usize> {
    v.trim().parse().map_err(|_| {
        config_err(
            line,
            format!("'{}' is not a non-negative integer", v.trim()),
        )
    })
}

fn parse_list<T>(line: usize, v: &str, item: impl Fn(usize, &str) -> Result<T>) -> Result<Vec<T>> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|s| item(line, s)).collect()
}

fn parse_bool(line: usize, v: &str) -> Result<bool> {
    match v.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(config_err(line, format!("'{other}' is not true/false"))),
    }
}

fn parse_params(line: usize, v: &str) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if v.trim().is_empty() {
        return Ok(out);
    }
    for pair in v.split(',') {
        let (k, x) = pair.split_once(':').ok_or_else(|| {
            config_err(
                line,
                format!("parameter '{}' must be name:value", pair.trim()),
            )
        })?;
        if out
            .insert(k.trim().to_string(), parse_f64(line, x)?)
            .is_some()
        {
            return Err(config_err(
                line,
                format!("duplicate parameter '{}'", k.trim()),
            ));
        }
    }
    Ok(out)
}

fn parse_method(line: usize, v: &str) -> Result<Method> {
    match v.trim().to_ascii_lowercase().as_str() {
        "rk4" => Ok(Method::Rk4),
        "dopri5" => Ok(Method::Dopri5),
        other => Err(config_err(
            line,
            format!("method must be rk4 or dopri5, got '{other}'"),
        )),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        let mut seen = std::collections::BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split(['#', ';']).next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(line, "unterminated section header"))?
                    .trim();
                if ![
                    "fixture",
                    "integrator",
                    "quadrature",
                    "experiment",
                    "output",
                ]
                .contains(&name)
                {
                    return Err(config_err(line, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| {
                config_err(line, format!("expected key = value, got '{content}'"))
            })?;
            let key = key.trim();
            if section.is_empty() {
                return Err(config_err(line, "key outside of any section"));
            }
            if !seen.insert(format!("{section}.{key}")) {
                return Err(config_err(line, format!("duplicate key {section}.{key}")));
            }
            match (section.as_str(), key) {
                ("fixture", "name") => cfg.fixture = value.trim().to_string(),
                ("fixture", "params") => cfg.params = parse_params(line, value)?,
                ("fixture", "fast") => cfg.fast = Some(parse_list(line, value, parse_f64)?),
                ("fixture", "slow") => cfg.slow = Some(parse_list(line, value, parse_f64)?),
                ("integrator", "method") => cfg.integrator.method = parse_method(line, value)?,
                ("integrator", "rtol") => cfg.integrator.rtol = parse_f64(line, value)?,
                ("integrator", "atol") => cfg.integrator.atol = parse_f64(line, value)?,
                ("integrator", "dt") => cfg.integrator.dt = parse_f64(line, value)?,
                ("integrator", "max_steps") => cfg.integrator.max_steps = parse_usize(line, value)?,
                ("quadrature", "outer") => cfg.quadrature.outer = parse_usize(line, value)?,
                ("quadrature", "inner") => cfg.quadrature.inner = parse_usize(line, value)?,
                ("experiment", "eps") => cfg.eps = parse_list(line, value, parse_f64)?,
                ("experiment", "horizon") => cfg.horizon = parse_f64(line, value)?,
                ("experiment", "samples") => cfg.samples = parse_usize(line, value)?,
                ("experiment", "orders") => cfg.orders = parse_list(line, value, parse_usize)?,
                ("experiment", "variant") => cfg.variant = value.parse()?,
                ("experiment", "strict") => cfg.strict = parse_bool(line, value)?,
                ("experiment", "order") => cfg.order = parse_usize(line, value)?,
                ("output", "dir") => cfg.out_dir = PathBuf::from(value.trim()),
                ("output", "format") => {
                    cfg.format = value.parse().map_err(|e: Error| config_err(line, e))?
                }
                (s, k) => return Err(config_err(line, format!("unknown key '{k}' in [{s}]"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_ini(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut s = String::new();
        let _ = writeln!(s, "[fixture]");
        let _ = writeln!(s, "name = {}", self.fixture);
        let params: Vec<String> = self
            .params
            .iter()
            .map(|(k, v)| format!("{k}:{v}"))
            .collect();
        let _ = writeln!(s, "params = {}", params.join(", "));
        if let Some(f) = &self.fast {
            let _ = writeln!(s, "fast = {}", join(f));
        }
        if let Some(f) = &self.slow {
            let _ = writeln!(s, "slow = {}", join(f));
        }
        let i = &self.integrator;
        let method = match i.method {
            Method::Rk4 => "rk4",
            Method::Dopri5 => "dopri5",
        };
        let _ = writeln!(
            s,
            "\n[integrator]\nmethod = {method}\nrtol = {}\natol = {}\ndt = {}\nmax_steps = {}",
            i.rtol, i.atol, i.dt, i.max_steps
        );
        let _ = writeln!(
            s,
            "\n[quadrature]\nouter = {}\ninner = {}",
            self.quadrature.outer, self.quadrature.inner
        );
        let orders: Vec<String> = self.orders.iter().map(|o| o.to_string()).collect();
        let _ = writeln!(
            s,
            "\n[experiment]\neps = {}\nhorizon = {}\nsamples = {}\norders = {}\nvariant = {}\nstrict = {}\norder = {}",
            join(&self.eps),
            self.horizon,
            self.samples,
            orders.join(", "),
            self.variant.as_str(),
            self.strict,
            self.order
        );
        let format = match self.format {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
            OutputFormat::Both => "both",
        };
        let _ = writeln!(
            s,
            "\n[output]\ndir = {}\nformat = {format}",
            self.out_dir.display()
        );
        s
    }

    /// Initial point in block order, falling back to the fixture default.
    pub fn initial_point(&self) -> Result<Vec<f64>> {
        let fixture = get_fixture(&self.fixture, &self.params)?;
        let mut x = fixture.default_point().into_coords();
        let d = crate::phase::SlowFastSystem::dims(&fixture);
        if let Some(f) = &self.fast {
            if f.len() != d.fast_len() {
                return Err(Error::Config(format!(
                    "fast needs {} values, got {}",
                    d.fast_len(),
                    f.len()
                )));
            }
            x[d.fast_range()].copy_from_slice(f);
        }
        if let Some(w) = &self.slow {
            if w.len() != d.slow_len() {
                return Err(Error::Config(format!(
                    "slow needs {} values, got {}",
                    d.slow_len(),
                    w.len()
                )));
            }
            x[d.slow_range()].copy_from_slice(w);
        }
        Ok(x)
    }

    /// Checks that the fixture and its parameters are known.
    pub fn validate_fixture(&self) -> Result<()> {
        fixture_params(&self.fixture)?;
        get_fixture(&self.fixture, &self.params).map(|_| ())
    }

    pub fn drift_config(&self, variant: F2Variant) -> Result<DriftConfig> {
        let cfg = DriftConfig {
            fixture: FixtureSpec {
                name: self.fixture.clone(),
                params: self.params.clone(),
            },
            initial: self.initial_point()?,
            eps_grid: self.eps.clone(),
            horizon: self.horizon,
            samples: self.samples,
            integrator: self.integrator,
            quadrature: self.quadrature,
            orders: self.orders.clone(),
            variant,
            strict: self.strict,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let text = "\
[fixture]
name = charged_particle
params = B:1, lambda:0.3
fast = 0.1, 0.3   # p3, q3
slow = 0.2, 1.0

[integrator]
method = rk4
dt = 0.01

[quadrature]
outer = 32
inner = 16

[experiment]
eps = 0.1, 0.05
orders = 0, 2
variant = ty3
strict = true
order = 1

[output]
dir = /tmp/x
format = json
";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.fixture, "charged_particle");
        assert_eq!(c.params["lambda"], 0.3);
        assert_eq!(c.fast, Some(vec![0.1, 0.3]));
        assert_eq!(c.integrator.method, Method::Rk4);
        assert_eq!(
            c.quadrature,
            QuadratureConfig {
                outer: 32,
                inner: 16
            }
        );
        assert_eq!(c.orders, vec![0, 2]);
        assert_eq!(c.variant, VariantChoice::Ty3);
        assert!(c.strict);
        assert_eq!(c.format, OutputFormat::Json);
        assert_eq!(c.initial_point().unwrap(), vec![0.1, 0.3, 0.2, 1.0]);
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        assert!(RunConfig::parse("[fixture]\ncolour = red\n").is_err());
        assert!(RunConfig::parse("[nope]\n").is_err());
        assert!(RunConfig::parse("name = x\n").is_err());
        assert!(RunConfig::parse("[experiment]\neps = 0.1, abc\n").is_err());
        assert!(RunConfig::parse("[experiment]\nstrict = yes\n").is_err());
        assert!(RunConfig::parse("[experiment]\nsamples = 1\nsamples = 2\n").is_err());
        assert!(RunConfig::parse("[fixture]\nparams = Omega\n").is_err());
    }

    #[test]
    fn round_trip_default() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_ini()).unwrap(), c);
    }
}
