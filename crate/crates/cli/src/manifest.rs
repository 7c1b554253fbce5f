use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ace_lab::{AceError, Result};
use serde::{Deserialize, Serialize};

use crate::ReplayArgs;

/// Everything needed to re-run a command. Only `created_unix` changes between
/// re-executions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub argv: Vec<String>,
    pub cwd: PathBuf,
    pub problem: Option<ProblemSource>,
    pub config: Option<RunSettings>,
    pub out: PathBuf,
    pub versions: Versions,
    pub created_unix: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProblemSource {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    pub origin: ace_lab::problems::Origin,
    pub field: ace_lab::FieldTag,
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub init: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub ace_lab: String,
    pub ace_cli: String,
}

impl RunManifest {
    pub fn new(argv: &[String], out: &Path, problem: Option<ProblemSource>, config: Option<RunSettings>) -> Self {
        Self {
            command: argv.join(" "),
            argv: argv.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            problem,
            config,
            out: out.to_path_buf(),
            versions: Versions { ace_lab: ace_lab::VERSION.to_string(), ace_cli: env!("CARGO_PKG_VERSION").to_string() },
            created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// `argv` with any `--out` option removed.
fn strip_out(argv: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(argv.len());
    let mut skip = false;
    for a in argv {
        if skip {
            skip = false;
        } else if a == "--out" {
            skip = true;
        } else if !a.starts_with("--out=") {
            out.push(a.clone());
        }
    }
    out
}

pub fn replay(args: &ReplayArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.manifest)?;
    let m: RunManifest = serde_json::from_str(&text)?;
    if m.argv.len() < 2 {
        return Err(AceError::Parse("manifest has no command".into()));
    }
    let target = match &args.out {
        Some(o) => std::path::absolute(o)?,
        None => m.cwd.join(&m.out),
    };
    let mut argv = strip_out(&m.argv);
    argv.push("--out".into());
    argv.push(target.to_string_lossy().into_owned());
    if !m.cwd.as_os_str().is_empty() {
        std::env::set_current_dir(&m.cwd)?;
    }
    Ok(crate::execute(argv))
}
