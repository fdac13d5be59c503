//! `--config FILE` support: `key = value` lines become `--key value` flags placed
//! right after the subcommand, so flags given on the command line win.

use std::ffi::OsString;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub fn parse_file(path: &Path) -> Result<Vec<OsString>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config file {}", path.display()))?;
    parse_str(&text)
}

pub fn parse_str(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("config line {}: expected key = value, got {line:?}", n + 1);
        };
        let key = key.trim().replace('_', "-");
        let value = value.trim();
        if key.is_empty() || key.starts_with('-') {
            bail!("config line {}: bad key {key:?}", n + 1);
        }
        if key == "config" {
            bail!("config line {}: config files cannot include other config files", n + 1);
        }
        match value {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            v => {
                out.push(format!("--{key}").into());
                out.push(v.into());
            }
        }
    }
    Ok(out)
}

/// Removes `--config PATH` / `--config=PATH` from `args` and splices the file's
/// flags in after the first element of `subcommands` that appears.
pub fn expand(args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(args.len());
    let mut file = None;
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            file = Some(it.next().context("--config needs a path")?);
        } else if let Some(p) = s.strip_prefix("--config=") {
            file = Some(p.into());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = file else { return Ok(rest) };
    let injected = parse_file(Path::new(&file))?;
    let pos = rest
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .context("--config given without a subcommand")?;
    rest.splice(pos + 1..pos + 1, injected);
    Ok(rest)
}
