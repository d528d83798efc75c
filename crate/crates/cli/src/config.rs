//! `--config <json>`: the object's entries become flags placed before the
//! ones typed on the command line, so explicit flags override them.

use anyhow::{bail, Context, Result};
use serde_json::Value;

fn config_path(argv: &[String]) -> Result<Option<String>> {
    for (i, a) in argv.iter().enumerate() {
        if a == "--config" {
            return match argv.get(i + 1) {
                Some(p) => Ok(Some(p.clone())),
                None => bail!("--config needs a path"),
            };
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Ok(Some(p.to_string()));
        }
    }
    Ok(None)
}

fn flags(obj: &serde_json::Map<String, Value>) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (k, v) in obj {
        let flag = format!("--{}", k.replace('_', "-"));
        if flag == "--config" {
            bail!("config files cannot include other config files");
        }
        match v {
            Value::Bool(true) => out.push(flag),
            Value::Bool(false) | Value::Null => {}
            Value::String(s) => out.extend([flag, s.clone()]),
            Value::Number(n) => out.extend([flag, n.to_string()]),
            Value::Array(items) => {
                let parts: Result<Vec<String>> = items
                    .iter()
                    .map(|x| match x {
                        Value::Number(n) => Ok(n.to_string()),
                        Value::String(s) => Ok(s.clone()),
                        _ => bail!("config key {k:?}: arrays may hold numbers or strings only"),
                    })
                    .collect();
                out.extend([flag, parts?.join(",")]);
            }
            Value::Object(_) => bail!("config key {k:?}: nested objects are not flags"),
        }
    }
    Ok(out)
}

/// Splices the flags of the config file named by `--config` right after the
/// subcommand.
pub fn expand(argv: Vec<String>) -> Result<Vec<String>> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {path}"))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("malformed config {path}"))?;
    let Value::Object(obj) = value else {
        bail!("config {path} must hold a JSON object");
    };
    let extra = flags(&obj)?;
    if argv.len() < 2 {
        return Ok(argv);
    }
    let mut out = argv[..2].to_vec();
    out.extend(extra);
    out.extend_from_slice(&argv[2..]);
    Ok(out)
}
