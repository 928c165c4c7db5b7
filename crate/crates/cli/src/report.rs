use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

/// A table of preformatted cells; written as CSV and as whitespace-separated
/// gnuplot data.
pub struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }
}

/// Formats a float with the shortest round-trip representation.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// Output directory plus the hash and seed stamped onto every file.
pub struct Report {
    dir: PathBuf,
    hash: String,
    seed: u64,
    written: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

impl Report {
    pub fn create(dir: PathBuf, hash: String, seed: u64) -> Result<Self> {
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Report { dir, hash, seed, written: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("writing {}", p.display()))?;
        self.written.push(p);
        Ok(BufWriter::new(f))
    }

    fn stamp<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "# config_hash = {}", self.hash)?;
        writeln!(w, "# seed = {}", self.seed)
    }

    pub fn csv(&mut self, stem: &str, t: &Table) -> Result<()> {
        let mut w = self.open(&format!("{stem}.csv"))?;
        self.stamp(&mut w)?;
        writeln!(w, "{}", t.header.join(","))?;
        for r in &t.rows {
            writeln!(w, "{}", r.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dat(&mut self, stem: &str, t: &Table) -> Result<()> {
        let mut w = self.open(&format!("{stem}.dat"))?;
        self.stamp(&mut w)?;
        writeln!(w, "# {}", t.header.join(" "))?;
        for r in &t.rows {
            writeln!(w, "{}", r.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Both the CSV and the gnuplot file.
    pub fn table(&mut self, stem: &str, t: &Table) -> Result<()> {
        self.csv(stem, t)?;
        self.dat(stem, t)
    }

    pub fn json<T: Serialize>(&mut self, stem: &str, body: &T) -> Result<()> {
        let mut w = self.open(&format!("{stem}.json"))?;
        let env = Envelope { config_hash: &self.hash, seed: self.seed, body };
        serde_json::to_writer_pretty(&mut w, &env)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    /// A file produced by a library writer, preceded by the stamp lines.
    pub fn stamped<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> aglab::Result<()>,
    {
        let mut w = self.open(name)?;
        self.stamp(&mut w)?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Register a file written directly by the library.
    pub fn record(&mut self, p: &Path) {
        self.written.push(p.to_path_buf());
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_carry_hash_and_seed() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = Report::create(dir.path().join("nested/out"), "abc".into(), 9).unwrap();
        let mut t = Table::new(&["x", "y"]);
        t.push(vec![num(1.0), num(0.1)]);
        r.table("t", &t).unwrap();
        let csv = std::fs::read_to_string(r.path("t.csv")).unwrap();
        assert_eq!(csv, "# config_hash = abc\n# seed = 9\nx,y\n1.0,0.1\n");
        let dat = std::fs::read_to_string(r.path("t.dat")).unwrap();
        assert_eq!(dat, "# config_hash = abc\n# seed = 9\n# x y\n1.0 0.1\n");
        #[derive(Serialize)]
        struct B {
            v: f64,
        }
        r.json("b", &B { v: 0.5 }).unwrap();
        let j: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(r.path("b.json")).unwrap()).unwrap();
        assert_eq!(j["config_hash"], "abc");
        assert_eq!(j["seed"], 9);
        assert_eq!(j["v"], 0.5);
        assert_eq!(r.written().len(), 3);
    }
}
