//! Artifact files and the checksum manifest.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

pub const MANIFEST: &str = "manifest.txt";

/// Round-trip exact formatting used in CSV files.
pub fn csv_num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Nine significant digits used in plot-data files.
pub fn plot_num(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes files into one directory and records each in the manifest.
#[derive(Debug)]
pub struct Output {
    dir: PathBuf,
    files: Vec<(String, String)>,
}

impl Output {
    /// Creates `dir` and removes the files listed by a previous manifest in it.
    pub fn create(dir: &Path) -> io::Result<Self> {
        fs::create_dir_all(dir)?;
        let previous = dir.join(MANIFEST);
        if let Ok(text) = fs::read_to_string(&previous) {
            for line in text.lines() {
                if let Some((_, name)) = line.split_once("  ") {
                    let path = dir.join(name);
                    if path.parent() == Some(dir) && path.is_file() {
                        fs::remove_file(path)?;
                    }
                }
            }
            fs::remove_file(previous)?;
        }
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    pub fn write(&mut self, name: &str, body: &str) -> io::Result<()> {
        fs::write(self.dir.join(name), body)?;
        let digest = Sha256::digest(body.as_bytes());
        let hex = digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        });
        self.files.retain(|(n, _)| n != name);
        self.files.push((name.to_string(), hex));
        Ok(())
    }

    /// Comma-separated table with a header line.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
        let mut body = header.join(",");
        body.push('\n');
        for row in rows {
            body.push_str(&row.join(","));
            body.push('\n');
        }
        self.write(name, &body)
    }

    /// Numeric CSV table.
    pub fn csv_f64(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> io::Result<()> {
        self.csv(name, header, rows.into_iter().map(|r| r.into_iter().map(csv_num).collect()))
    }

    /// Whitespace-separated columns with a `#` header, for gnuplot.
    pub fn dat(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> io::Result<()> {
        let mut body = format!("# {}\n", header.join(" "));
        for row in rows {
            let cells: Vec<String> = row.into_iter().map(plot_num).collect();
            body.push_str(&cells.join(" "));
            body.push('\n');
        }
        self.write(name, &body)
    }

    /// Writes the manifest: one `sha256  name` line per file, in emission order.
    pub fn finish(self) -> io::Result<PathBuf> {
        let mut body = String::new();
        for (name, hex) in &self.files {
            let _ = writeln!(body, "{hex}  {name}");
        }
        let path = self.dir.join(MANIFEST);
        fs::write(&path, body)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_digits() {
        assert_eq!(csv_num(0.1), "1.0000000000000001e-1");
        assert_eq!(csv_num(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(plot_num(1.0 / 3.0), "3.33333333e-1");
    }

    #[test]
    fn manifest_lists_files_and_replaces_stale_ones() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::create(dir.path()).unwrap();
        out.write("a.csv", "x\n").unwrap();
        out.write("b.csv", "y\n").unwrap();
        out.finish().unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        assert_eq!(manifest.lines().count(), 2);
        for (line, name) in manifest.lines().zip(["a.csv", "b.csv"]) {
            let (hex, file) = line.split_once("  ").unwrap();
            assert_eq!(file, name);
            assert!(hex.len() == 64 && hex.chars().all(|c| c.is_ascii_hexdigit()));
        }

        let mut out = Output::create(dir.path()).unwrap();
        assert!(!dir.path().join("a.csv").exists());
        out.write("c.csv", "z\n").unwrap();
        out.finish().unwrap();
        let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 2);
    }
}
