//! CSV files with a `#` metadata block, sidecar metadata, output locking and
//! the run manifest.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Shortest text that parses back to the same `f64`; plain notation for
/// moderate magnitudes, exponent notation otherwise.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e7).contains(&a) || !v.is_finite() {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes `path` atomically: the table goes to a temporary sibling that is
/// renamed into place once complete.
pub fn write_csv(
    path: &Path,
    meta: &[(&str, String)],
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<(), CliError> {
    let tmp = path.with_extension("partial");
    let result = (|| -> std::io::Result<()> {
        let mut out = BufWriter::new(File::create(&tmp)?);
        for (k, v) in meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        w.flush()?;
        let out = w.into_inner().map_err(|e| e.into_error())?;
        out.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(io_err(path, e));
    }
    Ok(())
}

/// A parsed CSV file: metadata block, header and rows with their line numbers.
#[derive(Debug)]
pub struct Table {
    pub path: PathBuf,
    pub meta: BTreeMap<String, String>,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = File::open(path).map_err(|e| io_err(path, e))?;
        let mut meta = BTreeMap::new();
        let mut reader = BufReader::new(file);
        let mut line = String::new();
        let mut consumed = 0usize;
        // the metadata block is the run of `#` lines at the top
        loop {
            let buf = reader.fill_buf().map_err(|e| io_err(path, e))?;
            if buf.first() != Some(&b'#') {
                break;
            }
            line.clear();
            reader.read_line(&mut line).map_err(|e| io_err(path, e))?;
            consumed += 1;
            if let Some((k, v)) = line[1..].split_once(':') {
                meta.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = csv
            .headers()
            .map_err(|e| CliError::Io(format!("{}:{}: {e}", path.display(), consumed + 1)))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for record in csv.records() {
            let record = record.map_err(|e| {
                let line = e
                    .position()
                    .map(|p| p.line() as usize + consumed)
                    .unwrap_or(0);
                CliError::Io(format!("{}:{line}: malformed row: {e}", path.display()))
            })?;
            let line = record
                .position()
                .map(|p| p.line() as usize + consumed)
                .unwrap_or(0);
            rows.push((line, record.iter().map(str::to_string).collect()));
        }
        Ok(Self {
            path: path.to_path_buf(),
            meta,
            header,
            rows,
        })
    }

    pub fn expect_header(&self, expected: &[&str]) -> Result<(), CliError> {
        if self.header != expected {
            return Err(CliError::Io(format!(
                "{}: expected columns {}, found {}",
                self.path.display(),
                expected.join(","),
                self.header.join(",")
            )));
        }
        Ok(())
    }

    /// Numeric cell; `line` is used in the error message.
    pub fn number(&self, line: usize, row: &[String], col: usize) -> Result<f64, CliError> {
        let cell = row.get(col).map(String::as_str).unwrap_or("");
        cell.trim().parse::<f64>().map_err(|_| {
            CliError::Io(format!(
                "{}:{line}: `{cell}` is not a number",
                self.path.display()
            ))
        })
    }

    pub fn meta_number(&self, key: &str) -> Result<f64, CliError> {
        let v = self.meta.get(key).ok_or_else(|| {
            CliError::Io(format!("{}: metadata lacks `{key}`", self.path.display()))
        })?;
        v.parse().map_err(|_| {
            CliError::Io(format!(
                "{}: metadata `{key}` = `{v}` is not a number",
                self.path.display()
            ))
        })
    }
}

/// `key = value` sidecar file.
pub fn write_sidecar(path: &Path, entries: &[(&str, String)]) -> Result<(), CliError> {
    let mut text = String::new();
    for (k, v) in entries {
        text.push_str(&format!("{k} = {v}\n"));
    }
    let tmp = path.with_extension("partial");
    fs::write(&tmp, text)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| {
            let _ = fs::remove_file(&tmp);
            io_err(path, e)
        })
}

pub fn read_sidecar(path: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Io(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                i + 1
            ))
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

pub const LOCK_FILE: &str = ".poss.lock";

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Io(format!(
                "{} is in use by another run (remove {} if that run has died)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(io_err(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// One pipeline stage as recorded in the manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord {
    pub name: String,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
}

pub const MANIFEST: &str = "manifest.txt";
const STAGE_ORDER: &[&str] = &["field", "sweep", "simulate", "analyze", "limits"];

/// Adds or replaces `stage` in the manifest of `dir`. Stages recorded under a
/// different config hash are dropped.
pub fn update_manifest(dir: &Path, config_hash: &str, stage: StageRecord) -> Result<(), CliError> {
    let path = dir.join(MANIFEST);
    let mut stages: BTreeMap<usize, StageRecord> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(&path) {
        let same_config = text
            .lines()
            .any(|l| l.trim() == format!("config_hash = {config_hash}"));
        if same_config {
            let mut current: Option<StageRecord> = None;
            for line in text.lines() {
                if let Some(name) = line
                    .strip_prefix("[stage ")
                    .and_then(|s| s.strip_suffix(']'))
                {
                    if let Some(s) = current.take() {
                        stages.insert(stage_rank(&s.name), s);
                    }
                    current = Some(StageRecord {
                        name: name.into(),
                        inputs: vec![],
                        outputs: vec![],
                        wall_clock_s: 0.0,
                    });
                } else if let (Some(s), Some((k, v))) = (current.as_mut(), line.split_once('=')) {
                    let list = || {
                        v.split(',')
                            .map(|x| x.trim().to_string())
                            .filter(|x| !x.is_empty())
                            .collect()
                    };
                    match k.trim() {
                        "inputs" => s.inputs = list(),
                        "outputs" => s.outputs = list(),
                        "wall_clock_s" => s.wall_clock_s = v.trim().parse().unwrap_or(0.0),
                        _ => {}
                    }
                }
            }
            if let Some(s) = current.take() {
                stages.insert(stage_rank(&s.name), s);
            }
        }
    }
    stages.insert(stage_rank(&stage.name), stage);
    let mut text = format!(
        "tool_version = {}\nconfig_hash = {config_hash}\n",
        env!("CARGO_PKG_VERSION")
    );
    for s in stages.values() {
        text.push_str(&format!(
            "\n[stage {}]\ninputs = {}\noutputs = {}\nwall_clock_s = {:.3}\n",
            s.name,
            s.inputs.join(", "),
            s.outputs.join(", "),
            s.wall_clock_s
        ));
    }
    fs::write(&path, text).map_err(|e| io_err(&path, e))
}

fn stage_rank(name: &str) -> usize {
    STAGE_ORDER
        .iter()
        .position(|s| *s == name)
        .unwrap_or(STAGE_ORDER.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_with_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let rows = vec![
            vec!["0".to_string(), fmt_f64(1.25e-12)],
            vec!["0.005".into(), fmt_f64(-3.0)],
        ];
        write_csv(
            &path,
            &[("seed", "7".into()), ("units", "s, V".into())],
            &["time_s", "signal_V"],
            &rows,
        )
        .unwrap();
        let t = Table::read(&path).unwrap();
        assert_eq!(t.meta["seed"], "7");
        assert_eq!(t.meta["units"], "s, V");
        assert_eq!(t.header, ["time_s", "signal_V"]);
        assert_eq!(t.rows[0].0, 4);
        assert_eq!(t.number(4, &t.rows[0].1, 1).unwrap(), 1.25e-12);
        assert!(!dir.path().join("t.partial").exists());
    }

    #[test]
    fn malformed_cells_report_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "# a: 1\ntime_s,signal_V\n0,1\n0.005,oops\n").unwrap();
        let t = Table::read(&path).unwrap();
        let (line, row) = &t.rows[1];
        let err = t.number(*line, row, 1).unwrap_err().to_string();
        assert!(err.contains("bad.csv:4"), "{err}");
        fs::write(&path, "time_s,signal_V\n0,1\n0.005\n").unwrap();
        let err = Table::read(&path).unwrap_err().to_string();
        assert!(err.contains("bad.csv:3"), "{err}");
    }

    #[test]
    fn number_formatting_round_trips() {
        for v in [
            0.0,
            1.0,
            -2.5e-22,
            3.0e14,
            1.0 / 3.0,
            123456.789,
            1e-5,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let lock = OutputLock::acquire(dir.path()).unwrap();
        assert!(OutputLock::acquire(dir.path()).is_err());
        drop(lock);
        assert!(OutputLock::acquire(dir.path()).is_ok());
    }

    #[test]
    fn manifest_keeps_stage_order() {
        let dir = tempfile::tempdir().unwrap();
        let stage = |name: &str| StageRecord {
            name: name.into(),
            inputs: vec![],
            outputs: vec!["a.csv".into()],
            wall_clock_s: 1.0,
        };
        update_manifest(dir.path(), "h1", stage("limits")).unwrap();
        update_manifest(dir.path(), "h1", stage("simulate")).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(text.find("[stage simulate]").unwrap() < text.find("[stage limits]").unwrap());
        update_manifest(dir.path(), "h2", stage("field")).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert!(!text.contains("[stage limits]"));
        assert!(text.contains("config_hash = h2"));
    }
}
