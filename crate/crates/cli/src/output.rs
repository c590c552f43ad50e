//! Output plumbing: every file carries a provenance header (version,
//! config hash, seed) so identical configurations are byte-identical and
//! diffable across runs.

use anyhow::{Context, Result};
use serde::Serialize;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, seed: u64) -> Self {
        Self {
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash,
            seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# stakeflow v{} config_hash={} seed={}",
            self.version, self.config_hash, self.seed
        )
    }
}

/// Open `dir/name` for writing with the provenance comment already emitted.
pub fn csv_writer(dir: &Path, name: &str, prov: &Provenance) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    let file =
        File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "{}", prov.comment_line())?;
    Ok(writer)
}

/// Serialize a JSON payload wrapped with its provenance block.
pub fn write_json<T: Serialize>(
    dir: &Path,
    name: &str,
    prov: &Provenance,
    payload: &T,
) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Envelope<'a, T> {
        provenance: &'a Provenance,
        #[serde(flatten)]
        payload: &'a T,
    }
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(&Envelope {
        provenance: prov,
        payload,
    })?;
    std::fs::write(&path, text + "\n")
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(path)
}

/// Format a float for CSV output (shortest round-trip representation).
pub fn num(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        v.to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
