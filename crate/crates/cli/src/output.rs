//! Output artifacts. Each one carries the toolkit version and spec hash:
//! CSVs in a leading `#` comment, JSON in top-level fields, SVGs in
//! `<metadata>`.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::spec::RunSpec;

pub struct Artifacts {
    dir: PathBuf,
    command: String,
    spec_hash: String,
}

/// Shortest text that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl Artifacts {
    pub fn new(dir: &Path, command: &str, spec: &RunSpec) -> Self {
        Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            spec_hash: spec.hash(command),
        }
    }

    pub fn spec_hash(&self) -> &str {
        &self.spec_hash
    }

    pub fn stamp(&self) -> String {
        format!(
            "gmmd-version={} spec-hash={} command={}",
            gmmd_core::VERSION,
            self.spec_hash,
            self.command
        )
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.dir).with_context(|| format!("creating {}", self.dir.display()))?;
        let p = self.dir.join(name);
        std::fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }

    pub fn csv(&self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut out = format!("# {}\n", self.stamp()).into_bytes();
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
        }
        self.write(name, &out)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf> {
        #[derive(Serialize)]
        struct Stamped<'a, T> {
            gmmd_version: &'a str,
            spec_hash: &'a str,
            command: &'a str,
            result: &'a T,
        }
        let mut bytes = serde_json::to_vec_pretty(&Stamped {
            gmmd_version: gmmd_core::VERSION,
            spec_hash: &self.spec_hash,
            command: &self.command,
            result: value,
        })?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    pub fn svg(&self, name: &str, chart: &crate::plot::Chart) -> Result<PathBuf> {
        self.write(name, crate::plot::render(chart, &self.stamp()).as_bytes())
    }

    pub fn text(&self, name: &str, text: &str) -> Result<PathBuf> {
        self.write(name, text.as_bytes())
    }

    /// The resolved spec, so a run can be repeated from its outputs alone.
    pub fn spec(&self, spec: &RunSpec) -> Result<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(spec)?;
        bytes.push(b'\n');
        self.write("run_spec.json", &bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_stamp() {
        let d = tempfile::tempdir().unwrap();
        let a = Artifacts::new(d.path(), "score", &RunSpec::default());
        let p = a.csv("x.csv", &["a", "b"], &[vec![num(0.1), opt(None)]]).unwrap();
        let text = std::fs::read_to_string(p).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("# gmmd-version="));
        assert_eq!(lines.next(), Some("a,b"));
        assert_eq!(lines.next(), Some("0.1,"));
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.1, 1e-300, -2.5e17, 1.0 / 3.0] {
            assert_eq!(num(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }
}
