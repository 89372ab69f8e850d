//! Run manifests: which command ran, with what resolved configuration,
//! seeds and inputs, and what it wrote.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use amu_core::rng::{SeedStreams, GENERATE, SAMPLING, SHUFFLE};
use sha2::{Digest, Sha256};

use crate::amuf::{read_bytes, write_bytes};
use crate::error::Result;

pub const VERSION: &str = concat!("amu ", env!("CARGO_PKG_VERSION"));

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        let _ = write!(out, "{b:02x}");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunManifest {
    pub command: String,
    pub config: BTreeMap<String, String>,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub version: String,
}

impl RunManifest {
    /// Records the base seed and the seed of every named stream it derives.
    pub fn new(command: &str, config: BTreeMap<String, String>, seed: u64) -> Self {
        let streams = SeedStreams::new(seed);
        let mut seeds = BTreeMap::new();
        seeds.insert("base".to_string(), seed);
        for name in [SAMPLING, SHUFFLE, GENERATE] {
            seeds.insert(name.to_string(), streams.derive(name));
        }
        Self {
            command: command.into(),
            config,
            seeds,
            inputs: Vec::new(),
            outputs: Vec::new(),
            version: VERSION.into(),
        }
    }

    /// Reads an input file, recording the digest of exactly the bytes read.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = read_bytes(path)?;
        self.note_input(path, &bytes);
        Ok(bytes)
    }

    pub fn note_input(&mut self, path: &Path, bytes: &[u8]) {
        self.inputs.push(FileDigest { path: path.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
    }

    pub fn write_output(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        write_bytes(path, bytes)?;
        self.outputs.push(FileDigest { path: path.into(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "version = {}", self.version);
        let _ = writeln!(out, "command = {}", self.command);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k} = {v}");
        }
        for (k, v) in &self.seeds {
            let _ = writeln!(out, "seed.{k} = {v}");
        }
        for f in &self.inputs {
            let _ = writeln!(out, "input = {} sha256={} bytes={}", f.path.display(), f.sha256, f.bytes);
        }
        for f in &self.outputs {
            let _ = writeln!(out, "output = {} sha256={} bytes={}", f.path.display(), f.sha256, f.bytes);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_of_known_strings() {
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(sha256_hex(b"abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn render_lists_everything_in_order() {
        let mut config = BTreeMap::new();
        config.insert("lambda".to_string(), "0.4".to_string());
        let mut m = RunManifest::new("train", config, 7);
        m.note_input(Path::new("a.amuf"), b"abc");
        let text = m.render();
        assert!(text.starts_with(&format!("version = {VERSION}\ncommand = train\nconfig.lambda = 0.4\n")));
        assert!(text.contains("seed.base = 7\n"));
        assert!(text.contains(&format!("seed.shuffle = {}\n", SeedStreams::new(7).derive(SHUFFLE))));
        assert!(text.contains("input = a.amuf sha256=ba7816bf"));
    }
}
