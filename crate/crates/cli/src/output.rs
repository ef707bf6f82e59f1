//! CSV and JSON writers. Every CSV row starts with the config hash.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

pub struct CsvSink {
    writer: csv::Writer<BufWriter<File>>,
    hash: String,
    path: PathBuf,
}

impl CsvSink {
    pub fn create<S: AsRef<str>>(
        dir: &Path,
        name: &str,
        hash: &str,
        header: &[S],
    ) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(name);
        let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(BufWriter::new(file));
        let mut full = vec!["config_hash"];
        full.extend(header.iter().map(|h| h.as_ref()));
        writer.write_record(&full)?;
        Ok(Self {
            writer,
            hash: hash.to_string(),
            path,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> anyhow::Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_field(&self.hash)?;
        for f in fields {
            self.writer.write_field(f)?;
        }
        self.writer.write_record(None::<&[u8]>)?;
        Ok(())
    }

    pub fn finish(mut self) -> anyhow::Result<PathBuf> {
        self.writer.flush()?;
        Ok(self.path)
    }
}

/// Shortest round-trip representation; locale independent.
pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn nums(v: &[f64]) -> impl Iterator<Item = String> + '_ {
    v.iter().map(|x| num(*x))
}

pub fn indexed(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{prefix}{i}")).collect()
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> anyhow::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut file = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    file.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_carry_hash_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let mut sink = CsvSink::create(dir.path(), "t.csv", "abc", &["x", "y"]).unwrap();
        sink.row([num(0.1), num(2.0)]).unwrap();
        let path = sink.finish().unwrap();
        let text = fs::read_to_string(path).unwrap();
        assert_eq!(text, "config_hash,x,y\nabc,0.1,2\n");
    }
}
