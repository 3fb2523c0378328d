//! File formats: system descriptions, JSON objects, and CSV tables.
//!
//! A system is named on the command line as `lorentz`, `rotation:<theta>`, or
//! the path of a JSON description:
//!
//! ```json
//! {"type": "affine", "A": [[...]], "b": [...], "h_step": 0.1,
//!  "labels": [{"label": 0, "bounds": [{"lo": 0.5, "hi": 1.5}, ...]}, ...],
//!  "init_box": [[-1, 4], ...]}
//! ```
//!
//! With `h_step` the pair `(A, b)` is a continuous-time system discretized by
//! an Euler step; without it `(A, b)` is the map itself.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    make_lorentz_system, make_rotation_system, AffineSystem, DynamicalSystem, LabelRule,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SystemSpec {
    Lorentz,
    Rotation {
        theta: f64,
    },
    Affine {
        #[serde(rename = "A")]
        a: Vec<Vec<f64>>,
        b: Vec<f64>,
        #[serde(default)]
        h_step: Option<f64>,
        labels: Vec<LabelRule>,
        init_box: Vec<(f64, f64)>,
        #[serde(default)]
        name: Option<String>,
    },
}

impl SystemSpec {
    /// Parses `lorentz`, `rotation:<theta>`, or reads a JSON file.
    pub fn from_arg(arg: &str) -> Result<Self> {
        if arg == "lorentz" {
            return Ok(SystemSpec::Lorentz);
        }
        if let Some(theta) = arg.strip_prefix("rotation:") {
            let theta = theta
                .parse()
                .map_err(|_| Error::InvalidSystem(format!("bad rotation angle {theta:?}")))?;
            return Ok(SystemSpec::Rotation { theta });
        }
        if Path::new(arg).exists() {
            return read_json(arg);
        }
        Err(Error::InvalidSystem(format!(
            "unknown system {arg:?}: expected lorentz, rotation:<theta>, or a JSON file"
        )))
    }

    pub fn build(&self) -> Result<Box<dyn DynamicalSystem>> {
        Ok(match self {
            SystemSpec::Lorentz => Box::new(make_lorentz_system()),
            SystemSpec::Rotation { theta } => Box::new(make_rotation_system(*theta)?),
            SystemSpec::Affine {
                a,
                b,
                h_step,
                labels,
                init_box,
                name,
            } => {
                let sys = AffineSystem::new(
                    a.clone(),
                    b.clone(),
                    *h_step,
                    labels.clone(),
                    init_box.clone(),
                )?;
                Box::new(match name {
                    Some(n) => sys.with_name(n.clone()),
                    None => sys,
                })
            }
        })
    }
}

pub fn load_system(arg: &str) -> Result<Box<dyn DynamicalSystem>> {
    SystemSpec::from_arg(arg)?.build()
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// A CSV table preceded by `# ` comment lines.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvTable {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        CsvTable {
            header: header.iter().map(|h| h.to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(Error::InvalidConfig(format!(
                "row has {} fields, header has {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_to(&self, out: &mut dyn Write) -> Result<()> {
        for c in &self.comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "{}", self.header.join(","))?;
        for r in &self.rows {
            writeln!(out, "{}", r.join(","))?;
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        self.write_to(&mut f)
    }

    /// Reads a table written by [`CsvTable::write`].
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut table = CsvTable::default();
        for line in text.lines() {
            if let Some(c) = line.strip_prefix("# ") {
                table.comments.push(c.to_string());
            } else if table.header.is_empty() {
                table.header = line.split(',').map(str::to_string).collect();
            } else if !line.is_empty() {
                table
                    .rows
                    .push(line.split(',').map(str::to_string).collect());
            }
        }
        Ok(table)
    }
}
