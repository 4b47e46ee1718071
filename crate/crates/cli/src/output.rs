//! Atomic file output, CSV tables, gnuplot scripts and the run log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use levyx_core::{LevyxError, Result};
use serde::Serialize;
use tempfile::NamedTempFile;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> LevyxError + '_ {
    move |source| LevyxError::Io { path: path.display().to_string(), source }
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut tmp = NamedTempFile::new_in(&dir).map_err(io_err(&dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| LevyxError::Io { path: path.display().to_string(), source: e.error })?;
    Ok(())
}

/// An in-memory CSV table.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[String]) -> Result<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header).map_err(csv_err)?;
        Ok(Table { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(csv_err)
    }

    pub fn into_bytes(self) -> Result<Vec<u8>> {
        self.writer.into_inner().map_err(|e| LevyxError::InvalidArgument(format!("csv buffer: {e}")))
    }

    pub fn write(self, path: &Path) -> Result<()> {
        write_atomic(path, &self.into_bytes()?)
    }
}

fn csv_err(e: csv::Error) -> LevyxError {
    LevyxError::InvalidArgument(format!("csv: {e}"))
}

/// Shortest round-trip formatting; non-finite values become `nan`/`inf`.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        let s = format!("{x:?}");
        s.strip_suffix(".0").map(str::to_string).unwrap_or(s)
    } else if x.is_nan() {
        "nan".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| LevyxError::InvalidArgument(format!("json: {e}")))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// A gnuplot script with one `plot` command per panel.
pub struct GnuplotScript {
    title: String,
    panels: Vec<String>,
}

impl GnuplotScript {
    pub fn new(title: &str) -> Self {
        GnuplotScript { title: title.into(), panels: Vec::new() }
    }

    pub fn panel(&mut self, commands: &str) {
        self.panels.push(commands.into());
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str("set datafile separator ','\n");
        s.push_str("set key autotitle columnhead\n");
        s.push_str(&format!("set title '{}'\n", self.title.replace('\'', "")));
        for p in &self.panels {
            s.push_str(p);
            if !p.ends_with('\n') {
                s.push('\n');
            }
            s.push_str("pause -1\n");
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

/// Path of a companion gnuplot script: `paths.csv` becomes `paths.gp`.
pub fn script_path(output: &Path) -> PathBuf {
    output.with_extension("gp")
}

/// One line of `runs.log`.
#[derive(Debug, Clone, Serialize)]
pub struct RunArtifact {
    pub scenario: String,
    pub scenario_hash: String,
    pub command: String,
    pub args: Vec<String>,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
    pub exit_code: i32,
    pub verdicts: serde_json::Value,
}

/// Appends one JSON line to the run log.
pub fn append_run_log(path: &Path, artifact: &RunArtifact) -> Result<()> {
    let dir = parent_dir(path);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut line = serde_json::to_string(artifact).map_err(|e| LevyxError::InvalidArgument(format!("json: {e}")))?;
    line.push('\n');
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    f.write_all(line.as_bytes()).map_err(io_err(path))
}

pub fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.0, 1.0, -2.5, 1.0 / 3.0, 1e-300, 6.02e23] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(2.0), "2");
        assert_eq!(num(f64::NAN), "nan");
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/out.csv");
        write_atomic(&p, b"a").unwrap();
        write_atomic(&p, b"bc").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"bc");
        assert_eq!(fs::read_dir(dir.path().join("sub")).unwrap().count(), 1);
    }

    #[test]
    fn table_quotes_and_orders() {
        let mut t = Table::new(&["a".into(), "b".into()]).unwrap();
        t.row(["1", "x,y"]).unwrap();
        assert_eq!(String::from_utf8(t.into_bytes().unwrap()).unwrap(), "a,b\n1,\"x,y\"\n");
    }
}
