//! Experiment configuration: flat `key = value` text with `[section]`
//! headers. Fractions are written `3/4` and parsed exactly; parse errors
//! carry line numbers.

use crate::arch::{build_dcnn, build_mlp, parse_description, ArchDag, DcnnShape, Readout};
use crate::dual::Dual;
use crate::frac::{parse_frac, Frac};
use crate::harmonics::{CoefficientMode, EigenId};
use crate::kernel::KernelKind;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("missing key `{key}` in section [{section}]")]
    Missing { section: String, key: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
struct Entry {
    line: usize,
    value: String,
}

/// Parsed config file: sections of key/value entries.
#[derive(Debug, Clone, Default)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, Entry>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut sections: BTreeMap<String, BTreeMap<String, Entry>> = BTreeMap::new();
        let mut current = String::from("");
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let stripped = raw.split('#').next().unwrap_or("").trim();
            if stripped.is_empty() {
                continue;
            }
            if let Some(name) = stripped.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or(ConfigError::Parse {
                    line,
                    message: "section header missing `]`".into(),
                })?;
                current = name.trim().to_string();
                sections.entry(current.clone()).or_default();
                continue;
            }
            let (key, value) = stripped.split_once('=').ok_or(ConfigError::Parse {
                line,
                message: format!("expected `key = value`, got `{stripped}`"),
            })?;
            if current.is_empty() {
                return Err(ConfigError::Parse {
                    line,
                    message: "key outside any [section]".into(),
                });
            }
            sections.entry(current.clone()).or_default().insert(
                key.trim().to_string(),
                Entry {
                    line,
                    value: value.trim().to_string(),
                },
            );
        }
        Ok(Config { sections })
    }

    pub fn load(path: &std::path::Path) -> Result<Config, ConfigError> {
        Config::parse(&std::fs::read_to_string(path)?)
    }

    fn entry(&self, section: &str, key: &str) -> Result<&Entry, ConfigError> {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .ok_or_else(|| ConfigError::Missing {
                section: section.to_string(),
                key: key.to_string(),
            })
    }

    pub fn get(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        Ok(&self.entry(section, key)?.value)
    }

    pub fn get_or<'a>(&'a self, section: &str, key: &str, default: &'a str) -> &'a str {
        self.sections
            .get(section)
            .and_then(|s| s.get(key))
            .map(|e| e.value.as_str())
            .unwrap_or(default)
    }

    pub fn has(&self, section: &str, key: &str) -> bool {
        self.sections
            .get(section)
            .map(|s| s.contains_key(key))
            .unwrap_or(false)
    }

    fn value_err(&self, section: &str, key: &str, message: String) -> ConfigError {
        let line = self.entry(section, key).map(|e| e.line).unwrap_or(0);
        ConfigError::Parse {
            line,
            message: format!("[{section}] {key}: {message}"),
        }
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        let v = self.get(section, key)?;
        v.parse().map_err(|_| {
            self.value_err(section, key, format!("`{v}` is not a non-negative integer"))
        })
    }

    pub fn get_u64_or(&self, section: &str, key: &str, default: u64) -> Result<u64, ConfigError> {
        if !self.has(section, key) {
            return Ok(default);
        }
        let v = self.get(section, key)?;
        v.parse()
            .map_err(|_| self.value_err(section, key, format!("`{v}` is not an integer")))
    }

    pub fn get_usize_or(
        &self,
        section: &str,
        key: &str,
        default: usize,
    ) -> Result<usize, ConfigError> {
        if !self.has(section, key) {
            return Ok(default);
        }
        self.get_usize(section, key)
    }

    pub fn get_f64_or(&self, section: &str, key: &str, default: f64) -> Result<f64, ConfigError> {
        if !self.has(section, key) {
            return Ok(default);
        }
        let v = self.get(section, key)?;
        v.parse()
            .map_err(|_| self.value_err(section, key, format!("`{v}` is not a number")))
    }

    pub fn get_bool_or(
        &self,
        section: &str,
        key: &str,
        default: bool,
    ) -> Result<bool, ConfigError> {
        if !self.has(section, key) {
            return Ok(default);
        }
        match self.get(section, key)? {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(self.value_err(section, key, format!("`{other}` is not a boolean"))),
        }
    }

    pub fn get_frac(&self, section: &str, key: &str) -> Result<Frac, ConfigError> {
        let v = self.get(section, key)?;
        parse_frac(v).map_err(|e| self.value_err(section, key, e.to_string()))
    }

    pub fn get_usize_list(&self, section: &str, key: &str) -> Result<Vec<usize>, ConfigError> {
        let v = self.get(section, key)?;
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| self.value_err(section, key, format!("`{s}` is not an integer")))
            })
            .collect()
    }

    /// Dual specified as `gaussian:1.0` etc.
    pub fn dual(&self) -> Result<Dual, ConfigError> {
        let spec = self.get_or("dual", "spec", "gaussian:1");
        Dual::from_spec(spec).map_err(|e| self.value_err("dual", "spec", e.to_string()))
    }

    pub fn kernel_kind(&self) -> Result<KernelKind, ConfigError> {
        match self.get_or("experiment", "kernel", "ntk") {
            "ntk" => Ok(KernelKind::Ntk),
            "nngp" => Ok(KernelKind::Nngp),
            other => Err(self.value_err(
                "experiment",
                "kernel",
                format!("`{other}` is not one of ntk, nngp"),
            )),
        }
    }

    pub fn coefficient_mode(&self) -> Result<CoefficientMode, ConfigError> {
        match self.get_or("experiment", "coefficient_mode", "random") {
            "random" => Ok(CoefficientMode::Random),
            "constant" => Ok(CoefficientMode::Constant),
            other => Err(self.value_err(
                "experiment",
                "coefficient_mode",
                format!("`{other}` is not one of random, constant"),
            )),
        }
    }

    /// Eigenfunction ids from `modes = Y1,Y2,...`; default all eight.
    pub fn modes(&self) -> Result<Vec<EigenId>, ConfigError> {
        if !self.has("experiment", "modes") {
            return Ok(EigenId::all().to_vec());
        }
        let valid: Vec<&str> = EigenId::all().iter().map(|id| id.name()).collect();
        self.get("experiment", "modes")?
            .split(',')
            .map(|s| {
                EigenId::from_name(s.trim()).ok_or_else(|| {
                    self.value_err(
                        "experiment",
                        "modes",
                        format!(
                            "unknown eigenfunction `{}`; valid ids: {}",
                            s.trim(),
                            valid.join(", ")
                        ),
                    )
                })
            })
            .collect()
    }

    /// Build the architecture described by the `[arch]` section.
    pub fn arch(&self) -> Result<ArchDag, ConfigError> {
        let dual = self.dual()?;
        match self.get_or("arch", "kind", "dcnn") {
            "mlp" => {
                let depth = self.get_usize("arch", "depth")?;
                let dim = self.get_usize("arch", "input_dim")?;
                build_mlp(depth, dim, dual).map_err(|e| self.value_err("arch", "kind", e.to_string()))
            }
            "dcnn" => {
                let shape = self.dcnn_shape()?;
                let readout = self.readout()?;
                let act = self.get_bool_or("arch", "act_after_readout", true)?;
                let d = shape.patch_size
                    * shape.filter_size.pow(shape.hidden_layers as u32)
                    * shape.width;
                build_dcnn(&shape, d, readout, act, dual)
                    .map_err(|e| self.value_err("arch", "kind", e.to_string()))
            }
            "description" => {
                let path = self.get("arch", "path")?;
                let text = std::fs::read_to_string(path)?;
                parse_description(&text, dual)
                    .map_err(|e| self.value_err("arch", "path", e.to_string()))
            }
            other => Err(self.value_err(
                "arch",
                "kind",
                format!("`{other}` is not one of mlp, dcnn, description"),
            )),
        }
    }

    pub fn readout(&self) -> Result<Readout, ConfigError> {
        match self.get_or("arch", "readout", "flatten") {
            "flatten" => Ok(Readout::Flatten),
            "gap" => Ok(Readout::Gap),
            other => Err(self.value_err(
                "arch",
                "readout",
                format!("`{other}` is not one of flatten, gap"),
            )),
        }
    }

    pub fn dcnn_shape(&self) -> Result<DcnnShape, ConfigError> {
        Ok(DcnnShape {
            patch_size: self.get_usize("arch", "patch_size")?,
            filter_size: self.get_usize("arch", "filter_size")?,
            hidden_layers: self.get_usize("arch", "hidden_layers")?,
            width: self.get_usize("arch", "width")?,
            alpha_p: self.get_frac("arch", "alpha_p")?,
            alpha_k: self.get_frac("arch", "alpha_k")?,
            alpha_w: self.get_frac("arch", "alpha_w")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
# experiment setup
[arch]
kind = dcnn
patch_size = 3
filter_size = 3
hidden_layers = 2
width = 3
alpha_p = 1/4
alpha_k = 1/4
alpha_w = 1/4
readout = flatten
act_after_readout = true

[dual]
spec = gaussian:1.0

[experiment]
kernel = ntk
modes = Y1,Y2
m_schedule = 81,243
seeds = 3
master_seed = 7
";

    #[test]
    fn parses_sections_and_values() {
        let c = Config::parse(SAMPLE).unwrap();
        assert_eq!(c.get("arch", "patch_size").unwrap(), "3");
        assert_eq!(c.get_frac("arch", "alpha_p").unwrap(), Frac::new(1, 4));
        assert_eq!(
            c.get_usize_list("experiment", "m_schedule").unwrap(),
            vec![81, 243]
        );
        let dag = c.arch().unwrap();
        assert_eq!(dag.reference_dim(), 81);
        assert_eq!(c.modes().unwrap().len(), 2);
        assert_eq!(c.kernel_kind().unwrap(), crate::kernel::KernelKind::Ntk);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = Config::parse("[arch\nx = 1\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("{other}"),
        }
        let err = Config::parse("x = 1\n").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 1),
            other => panic!("{other}"),
        }
        let c = Config::parse("[arch]\npatch_size = abc\n").unwrap();
        let err = c.get_usize("arch", "patch_size").unwrap_err();
        match err {
            ConfigError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_mode_names_valid_ids() {
        let c = Config::parse("[experiment]\nmodes = Y1,Zed\n").unwrap();
        let err = c.modes().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("Zed") && msg.contains("Y5star"), "{msg}");
    }

    #[test]
    fn fraction_round_trip_is_exact() {
        let c = Config::parse("[arch]\nalpha_p = 3/4\n").unwrap();
        let f = c.get_frac("arch", "alpha_p").unwrap();
        assert_eq!(crate::frac::format_frac(&f), "3/4");
    }
}
