//! Provenance headers and atomic output files.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Tool version, seed and a digest of every input, rendered as the first
/// comment line of each output.
#[derive(Debug, Clone, Default)]
pub struct Provenance {
    pub seed: u64,
    inputs: Vec<(String, String)>,
}

impl Provenance {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inputs: Vec::new(),
        }
    }

    pub fn add_input(&mut self, label: &str, bytes: &[u8]) {
        self.inputs
            .push((label.to_string(), hex::encode(Sha256::digest(bytes))));
    }

    /// The header text without the comment marker.
    pub fn line(&self) -> String {
        let mut s = format!("forkfleet {VERSION} seed={}", self.seed);
        for (label, digest) in &self.inputs {
            s.push_str(&format!(" {label}=sha256:{digest}"));
        }
        s
    }

    /// `body` preceded by the header as a `#` comment.
    pub fn stamp(&self, body: &str) -> String {
        format!("# {}\n{body}", self.line())
    }
}

/// Files produced by a command, written only once all are computed.
#[derive(Debug, Default)]
pub struct Outputs {
    files: Vec<(String, String)>,
}

impl Outputs {
    pub fn add(&mut self, name: &str, contents: String) {
        self.files.push((name.to_string(), contents));
    }

    /// Writes every file into `dir` through a temporary file and a rename.
    pub fn commit(self, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
        let fail = |path: &Path, source| CliError::Output {
            path: path.to_path_buf(),
            source,
        };
        std::fs::create_dir_all(dir).map_err(|e| fail(dir, e))?;
        let mut written = Vec::new();
        for (name, contents) in self.files {
            let path = dir.join(&name);
            let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| fail(&path, e))?;
            tmp.write_all(contents.as_bytes())
                .map_err(|e| fail(&path, e))?;
            tmp.persist(&path).map_err(|e| fail(&path, e.error))?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lists_inputs_in_order() {
        let mut p = Provenance::new(7);
        p.add_input("map", b"");
        p.add_input("config", b"abc");
        assert_eq!(
            p.line(),
            format!(
                "forkfleet {VERSION} seed=7 \
                 map=sha256:e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855 \
                 config=sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
            )
        );
    }
}
