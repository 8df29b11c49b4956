use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use platoon::auction::{AuctionError, ValueDistribution};
use platoon::checkpoint::{CheckpointError, TOOL_VERSION};
use platoon::commnet::MarlError;

/// Exit 2 for bad input, 3 for numerical failure.
#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<AuctionError> for CliError {
    fn from(e: AuctionError) -> Self {
        match e {
            AuctionError::Diverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<MarlError> for CliError {
    fn from(e: MarlError) -> Self {
        match e {
            MarlError::Diverged { .. } | MarlError::Num(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

/// Reads a JSON config file, or returns the default when no path is given.
pub fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, CliError> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

/// Writes a CSV body plus a `<path>.meta.json` sidecar recording the
/// resolved config, seed and tool version.
pub fn write_metrics<C: Serialize>(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = String>,
    config: &C,
    seed: u64,
) -> Result<(), CliError> {
    let mut out = String::from(header);
    out.push('\n');
    for row in rows {
        out.push_str(&row);
        out.push('\n');
    }
    write_file(path, &out)?;
    let meta = serde_json::json!({
        "tool_version": TOOL_VERSION,
        "config": config,
        "seed": seed,
        "columns": header,
    });
    let mut meta_path = path.as_os_str().to_owned();
    meta_path.push(".meta.json");
    let mut text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    text.push('\n');
    write_file(Path::new(&meta_path), &text)
}

/// Prints `report` as one pretty JSON object on stdout, with provenance fields appended.
pub fn print_report<C: Serialize>(report: serde_json::Value, config: &C, seed: Option<u64>) {
    let mut obj = match report {
        serde_json::Value::Object(m) => m,
        other => {
            let mut m = serde_json::Map::new();
            m.insert("report".into(), other);
            m
        }
    };
    obj.insert("tool_version".into(), TOOL_VERSION.into());
    obj.insert("config".into(), serde_json::to_value(config).expect("config serializes"));
    if let Some(s) = seed {
        obj.insert("seed".into(), s.into());
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    let _ = writeln!(lock, "{}", serde_json::to_string_pretty(&obj).expect("report serializes"));
}

/// `uniform:LOW:HIGH`, `exponential:RATE:CAP`, `constant:VALUE`, or a JSON object.
pub fn parse_distribution(s: &str) -> Result<ValueDistribution, String> {
    let s = s.trim();
    let dist = if s.starts_with('{') {
        serde_json::from_str(s).map_err(|e| format!("invalid distribution JSON: {e}"))?
    } else {
        let parts: Vec<&str> = s.split(':').collect();
        let nums = parts[1..]
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        match (parts[0], nums.as_slice()) {
            ("uniform", []) => ValueDistribution::UNIT_UNIFORM,
            ("uniform", &[low, high]) => ValueDistribution::Uniform { low, high },
            ("exponential", &[rate, cap]) => ValueDistribution::Exponential { rate, cap },
            ("constant", &[value]) => ValueDistribution::Constant { value },
            _ => return Err(format!("unrecognized distribution `{s}`")),
        }
    };
    dist.validate().map_err(|e| e.to_string())?;
    Ok(dist)
}

pub fn log(msg: impl fmt::Display) {
    eprintln!("[platoon] {msg}");
}
