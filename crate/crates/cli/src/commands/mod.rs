//! Command implementations and shared plumbing.

pub mod baseline_tv;
pub mod export;
pub mod reconstruct;
pub mod train;
pub mod verify;

use std::path::{Path, PathBuf};

use ebmkit::image::Image;
use ebmkit::io::read_pgm;

use crate::config::RunConfig;
use crate::CliError;

pub fn help_for(cmd: &str) -> Option<&'static str> {
    Some(match cmd {
        "train" => train::HELP,
        "reconstruct" => reconstruct::HELP,
        "baseline-tv" => baseline_tv::HELP,
        "export-potentials" => export::HELP,
        "verify" => verify::HELP,
        _ => return None,
    })
}

pub fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Output directory, created on demand.
pub fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = PathBuf::from(cfg.str_or("out-dir", "."));
    std::fs::create_dir_all(&dir)
        .map_err(|e| usage(format!("cannot create output directory {dir:?}: {e}")))?;
    Ok(dir)
}

/// All PGM images of a directory in lexicographic filename order.
pub fn load_dataset(dir: &Path) -> Result<Vec<Image>, CliError> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| usage(format!("cannot read dataset directory {dir:?}: {e}")))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|x| x == "pgm").unwrap_or(false))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no .pgm images found in {dir:?}")));
    }
    paths.iter().map(|p| Ok(read_pgm(p)?)).collect()
}

/// Writes a `name,value` metrics CSV.
pub fn write_metrics(
    path: impl AsRef<Path>,
    rows: &[(&str, f64)],
) -> Result<(), CliError> {
    use std::io::Write;
    let mut file = std::fs::File::create(path.as_ref())
        .map_err(|e| CliError::Run(format!("cannot write metrics: {e}")))?;
    writeln!(file, "name,value").map_err(|e| CliError::Run(e.to_string()))?;
    for (name, value) in rows {
        writeln!(file, "{name},{}", ebmkit::io::format_f64(*value))
            .map_err(|e| CliError::Run(e.to_string()))?;
    }
    Ok(())
}
