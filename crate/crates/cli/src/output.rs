use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Summary,
    Both,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Summary => "summary",
            Format::Both => "both",
        }
    }
}

struct Manifest {
    command: String,
    config_sha256: String,
    seed: Option<u64>,
}

/// Files written under the output directory, plus the run manifest.
pub struct Output {
    dir: PathBuf,
    format: Format,
    written: Vec<String>,
    manifest: Option<Manifest>,
}

pub fn sha256_hex(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        write!(s, "{b:02x}").unwrap();
        s
    })
}

impl Output {
    pub fn new(dir: &Path, format: Format) -> Result<Self, CliError> {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            format,
            written: Vec::new(),
            manifest: None,
        })
    }

    /// Records what the manifest describes; `config` is hashed, not stored.
    pub fn manifest(&mut self, command: &str, config: &str, seed: Option<u64>) {
        self.manifest = Some(Manifest {
            command: command.to_string(),
            config_sha256: sha256_hex(config),
            seed,
        });
    }

    pub fn file(&mut self, name: &str, content: String) -> Result<(), CliError> {
        let path = self.dir.join(name);
        fs::write(&path, content).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(name.to_string());
        Ok(())
    }

    pub fn csv(&mut self, name: &str, content: String) -> Result<(), CliError> {
        if self.format == Format::Summary {
            return Ok(());
        }
        self.file(name, content)
    }

    /// Writes the summary and echoes it to stdout.
    pub fn summary(&mut self, name: &str, content: String) -> Result<(), CliError> {
        if self.format == Format::Csv {
            return Ok(());
        }
        print!("{content}");
        self.file(name, content)
    }

    pub fn finish(self) -> Result<(), CliError> {
        let Some(m) = &self.manifest else {
            return Ok(());
        };
        let mut text = format!(
            "tool = \"lacunary\"\nversion = \"{}\"\ncommand = \"{}\"\nconfig_sha256 = \"{}\"\n",
            env!("CARGO_PKG_VERSION"),
            m.command,
            m.config_sha256
        );
        if let Some(seed) = m.seed {
            writeln!(text, "seed = {seed}").unwrap();
        }
        let files: Vec<String> = self.written.iter().map(|f| format!("\"{f}\"")).collect();
        writeln!(text, "format = \"{}\"\noutputs = [{}]", self.format.name(), files.join(", ")).unwrap();
        let path = self.dir.join("manifest.toml");
        fs::write(&path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
    }
}
