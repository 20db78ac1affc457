//! Experiment specifications: what to run, on which inputs, at which horizon.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ratmix_core::report::GridRule;
use ratmix_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Rational,
    #[default]
    Float,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rational" => Ok(Self::Rational),
            "float" => Ok(Self::Float),
            _ => Err(Error::Config(format!("unknown mode '{s}' (expected rational or float)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Emit {
    #[default]
    Report,
    PlotData,
}

impl FromStr for Emit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "report" => Ok(Self::Report),
            "plot-data" => Ok(Self::PlotData),
            _ => Err(Error::Config(format!("unknown emit target '{s}' (expected report or plot-data)"))),
        }
    }
}

/// Optional settings shared by a plan and its steps; unset fields fall back
/// to the enclosing level.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emit: Option<Emit>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub inputs: BTreeMap<String, String>,
}

impl Settings {
    /// `self` with unset fields taken from `outer`; inputs are merged with
    /// `self` winning.
    pub fn over(&self, outer: &Settings) -> Settings {
        let mut inputs = outer.inputs.clone();
        inputs.extend(self.inputs.clone());
        Settings {
            horizon: self.horizon.or(outer.horizon),
            grid: self.grid.clone().or_else(|| outer.grid.clone()),
            tol: self.tol.or(outer.tol),
            mode: self.mode.or(outer.mode),
            emit: self.emit.or(outer.emit),
            inputs,
        }
    }
}

/// Declares a spec-file struct carrying the [`Settings`] fields inline
/// (serde cannot combine `flatten` with `deny_unknown_fields`).
macro_rules! with_settings {
    ($(#[$m:meta])* $name:ident { $($(#[$fm:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fm])* pub $field: $ty,)*
            #[serde(rename = "N", default)]
            pub horizon: Option<u64>,
            #[serde(default)]
            pub grid: Option<String>,
            #[serde(default)]
            pub tol: Option<f64>,
            #[serde(default)]
            pub mode: Option<Mode>,
            #[serde(default)]
            pub emit: Option<Emit>,
            #[serde(default)]
            pub inputs: BTreeMap<String, String>,
        }

        impl $name {
            pub fn settings(&self) -> Settings {
                Settings {
                    horizon: self.horizon,
                    grid: self.grid.clone(),
                    tol: self.tol,
                    mode: self.mode,
                    emit: self.emit,
                    inputs: self.inputs.clone(),
                }
            }
        }
    };
}

with_settings! {
    /// One step of a plan as written in a spec file.
    StepSpec {
        command: String,
        op: String,
        #[serde(default)]
        name: Option<String>,
    }
}

with_settings! {
    /// A spec file: shared settings plus a list of steps.
    Plan {
        steps: Vec<StepSpec>,
    }
}

impl Plan {
    /// Parses either a plan or a single bare step.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("spec is not valid JSON: {e}")))?;
        if value.get("steps").is_some() {
            serde_json::from_value(value).map_err(|e| Error::Config(format!("bad plan: {e}")))
        } else {
            let step: StepSpec = serde_json::from_value(value).map_err(|e| Error::Config(format!("bad step: {e}")))?;
            let empty = Settings::default();
            Ok(Plan {
                steps: vec![step],
                horizon: empty.horizon,
                grid: empty.grid,
                tol: empty.tol,
                mode: empty.mode,
                emit: empty.emit,
                inputs: empty.inputs,
            })
        }
    }

    pub fn resolve(&self, outer: &Settings) -> Result<Vec<ExperimentSpec>> {
        let shared = self.settings().over(outer);
        let mut names = BTreeMap::new();
        self.steps
            .iter()
            .map(|s| {
                let spec = ExperimentSpec::new(&s.command, &s.op, s.name.clone(), s.settings().over(&shared))?;
                if names.insert(spec.name.clone(), ()).is_some() {
                    return Err(Error::Config(format!("two steps are named '{}'", spec.name)));
                }
                Ok(spec)
            })
            .collect()
    }
}

/// A fully resolved experiment. Its JSON form is hashed into every report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub command: String,
    pub op: String,
    pub name: String,
    #[serde(rename = "N")]
    pub horizon: Option<u64>,
    pub grid: String,
    pub tol: Option<f64>,
    pub mode: Mode,
    pub emit: Emit,
    pub inputs: BTreeMap<String, String>,
}

pub const COMMANDS: [&str; 6] = ["weights", "sets", "renewal", "chain", "mixing", "affine"];

impl ExperimentSpec {
    pub fn new(command: &str, op: &str, name: Option<String>, s: Settings) -> Result<Self> {
        if !COMMANDS.contains(&command) {
            return Err(Error::Config(format!("unknown command '{command}'")));
        }
        let grid = s.grid.unwrap_or_else(|| "dyadic".into());
        GridRule::parse(&grid)?;
        let name = name.unwrap_or_else(|| format!("{command}-{op}"));
        if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
            return Err(Error::Config(format!("'{name}' is not usable as a file name")));
        }
        Ok(Self {
            command: command.into(),
            op: op.into(),
            name,
            horizon: s.horizon,
            grid,
            tol: s.tol,
            mode: s.mode.unwrap_or_default(),
            emit: s.emit.unwrap_or_default(),
            inputs: s.inputs,
        })
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(text.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn grid_rule(&self) -> Result<GridRule> {
        GridRule::parse(&self.grid)
    }
}

impl fmt::Display for ExperimentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} ({})", self.command, self.op, self.name)
    }
}
