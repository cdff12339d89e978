//! On-disk formats: binary field dumps, flat `key = value` configs and run manifests.
//!
//! A dump is a short text header followed by little-endian `f64` values,
//! member-major, nodes in lexicographic order:
//!
//! ```text
//! MENKF1
//! rows 30
//! cols 30
//! t 1
//! members 25
//! endianness little
//! data
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiment::{Ensemble, ExperimentConfig, ForwardKind, UpdateKind};
use crate::lattice::LatticeGeometry;
use crate::pomm::parse_template;

pub const DUMP_MAGIC: &str = "MENKF1";

/// Serialises an ensemble (a single state is an ensemble of one).
pub fn encode_dump(ens: &Ensemble) -> Vec<u8> {
    let header = format!(
        "{DUMP_MAGIC}\nrows {}\ncols {}\nt {}\nmembers {}\nendianness little\ndata\n",
        ens.geom.rows(),
        ens.geom.cols(),
        ens.t,
        ens.size()
    );
    let mut out = header.into_bytes();
    out.reserve(8 * ens.geom.n() * ens.size());
    for x in &ens.members {
        for v in x {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_dump(bytes: &[u8], path: &Path) -> Result<Ensemble> {
    let bad = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let mut pos = 0;
    let mut lines = Vec::new();
    while lines.last().map(String::as_str) != Some("data") {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("header is not terminated by a 'data' line".into()))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| bad("header is not UTF-8".into()))?;
        lines.push(line.to_string());
        pos += end + 1;
        if lines.len() > 16 {
            return Err(bad("header too long".into()));
        }
    }
    if lines[0] != DUMP_MAGIC {
        return Err(bad(format!("expected magic {DUMP_MAGIC}, found '{}'", lines[0])));
    }
    let field = |key: &str| -> Result<&str> {
        lines[1..]
            .iter()
            .find_map(|l| l.strip_prefix(key).and_then(|r| r.strip_prefix(' ')))
            .ok_or_else(|| bad(format!("missing header field '{key}'")))
    };
    let number = |key: &str| -> Result<usize> {
        let v = field(key)?;
        v.parse().map_err(|_| bad(format!("header field '{key}' is not a number: '{v}'")))
    };
    if field("endianness")? != "little" {
        return Err(bad(format!("unsupported endianness '{}'", field("endianness")?)));
    }
    let (rows, cols, t, m) = (number("rows")?, number("cols")?, number("t")?, number("members")?);
    if rows == 0 || cols == 0 || m == 0 {
        return Err(bad("empty geometry or no members".into()));
    }
    let n = rows * cols;
    let data = &bytes[pos..];
    if data.len() != 8 * n * m {
        return Err(bad(format!("expected {} bytes of data, found {}", 8 * n * m, data.len())));
    }
    let values: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let geom = LatticeGeometry::new(rows, cols);
    if m == 1 {
        return Ensemble::single(geom, t, values);
    }
    Ensemble::new(geom, t, values.chunks(n).map(<[f64]>::to_vec).collect())
}

pub fn write_dump(path: &Path, ens: &Ensemble) -> Result<()> {
    fs::write(path, encode_dump(ens)).map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Ensemble> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dump(&bytes, path)
}

fn template_text(template: &[(i64, i64)]) -> String {
    template.iter().map(|(r, c)| format!("{r} {c}")).collect::<Vec<_>>().join("; ")
}

/// Renders a config in the format accepted by [`parse_config`].
pub fn config_text(c: &ExperimentConfig) -> String {
    format!(
        "s = {}\nsteps = {}\nmembers = {}\nforward = {}\nupdate = {}\nblock_rows = {}\nblock_cols = {}\nu = {}\nv = {}\n\
         gibbs_iters = {}\nseed = {}\nreference_seed = {}\nobs_variance = {:?}\ninit_variance = {:?}\ntemplate = {}\ndense_cap = {}\n",
        c.s,
        c.steps,
        c.members,
        c.forward,
        c.update,
        c.block_rows,
        c.block_cols,
        c.u,
        c.v,
        c.gibbs_iters,
        c.seed,
        c.reference_seed,
        c.obs_variance,
        c.init_variance,
        template_text(&c.template),
        c.dense_cap
    )
}

/// Parses `key = value` lines over the defaults; `#` starts a comment.
///
/// The template is a `;`-separated list of `dr dc` pairs.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |m: String| Error::Config(format!("line {}: {m}", lineno + 1));
        let (key, value) = line.split_once('=').ok_or_else(|| err(format!("expected 'key = value', found '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        macro_rules! num {
            () => {
                value.parse().map_err(|_| err(format!("invalid value '{value}' for '{key}'")))?
            };
        }
        match key {
            "s" => c.s = num!(),
            "steps" => c.steps = num!(),
            "members" => c.members = num!(),
            "forward" => c.forward = value.parse::<ForwardKind>().map_err(|e| err(e.to_string()))?,
            "update" => c.update = value.parse::<UpdateKind>().map_err(|e| err(e.to_string()))?,
            "block_rows" => c.block_rows = num!(),
            "block_cols" => c.block_cols = num!(),
            "u" => c.u = num!(),
            "v" => c.v = num!(),
            "gibbs_iters" => c.gibbs_iters = num!(),
            "seed" => c.seed = num!(),
            "reference_seed" => c.reference_seed = num!(),
            "obs_variance" => c.obs_variance = num!(),
            "init_variance" => c.init_variance = num!(),
            "dense_cap" => c.dense_cap = num!(),
            "template" => {
                c.template = parse_template(&value.replace(';', "\n")).map_err(|e| err(e.to_string()))?;
            }
            _ => return Err(err(format!("unknown key '{key}'"))),
        }
    }
    Ok(c)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

/// Record of a completed command, in the same `key = value` format as configs.
#[derive(Debug, Clone, Default)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<ExperimentConfig>,
    /// `(label, relative path)` of every file written.
    pub files: Vec<(String, String)>,
    /// `(label, seconds)`.
    pub timings: Vec<(String, f64)>,
}

impl RunManifest {
    pub fn new(command: &str, config: Option<&ExperimentConfig>) -> Self {
        Self { command: command.into(), config: config.cloned(), ..Default::default() }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command = {}", self.command);
        let _ = writeln!(out, "version = {}", env!("CARGO_PKG_VERSION"));
        if let Some(c) = &self.config {
            for line in config_text(c).lines() {
                let _ = writeln!(out, "config.{line}");
            }
        }
        for (label, path) in &self.files {
            let _ = writeln!(out, "file.{label} = {path}");
        }
        for (label, secs) in &self.timings {
            let _ = writeln!(out, "time.{label} = {secs:.6}");
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join("manifest.txt");
        fs::write(&path, self.render()).map_err(|e| Error::io(path, e))
    }
}
