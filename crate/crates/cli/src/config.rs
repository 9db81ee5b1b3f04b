//! `--config FILE`: key=value lines spliced in as flags right after the
//! subcommand, so anything given on the command line overrides them.

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use crate::args::BARE_FLAGS;
use crate::error::CliError;

const SUBCOMMANDS: &[&str] = &["gen", "flow", "eval", "render", "bench"];

fn config_path(argv: &[OsString]) -> Result<Option<PathBuf>, CliError> {
    let mut found = None;
    let mut i = 1;
    while i < argv.len() {
        let arg = argv[i].to_string_lossy();
        if arg == "--config" {
            let value = argv
                .get(i + 1)
                .ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            found = Some(PathBuf::from(value));
            i += 1;
        } else if let Some(v) = arg.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        } else if arg == "--" {
            break;
        }
        i += 1;
    }
    Ok(found)
}

/// Turn config text into flag tokens.
pub fn parse_config(text: &str) -> Result<Vec<String>, CliError> {
    let mut tokens = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = match line.split_once('=') {
            Some((k, v)) => (k.trim(), Some(v.trim())),
            None => (line, None),
        };
        let key = key.trim_start_matches("--");
        if key.is_empty() || key == "config" {
            return Err(CliError::Usage(format!("config line {}: bad key in '{line}'", n + 1)));
        }
        if BARE_FLAGS.contains(&key) {
            match value.map(str::to_ascii_lowercase).as_deref() {
                None | Some("") | Some("true") | Some("on") | Some("yes") | Some("1") => {
                    tokens.push(format!("--{key}"))
                }
                Some("false") | Some("off") | Some("no") | Some("0") => {}
                Some(other) => {
                    return Err(CliError::Usage(format!(
                        "config line {}: '{key}' takes no value, got '{other}'",
                        n + 1
                    )))
                }
            }
            continue;
        }
        match value {
            Some(v) if !v.is_empty() => tokens.push(format!("--{key}={v}")),
            _ => return Err(CliError::Usage(format!("config line {}: '{key}' needs a value", n + 1))),
        }
    }
    Ok(tokens)
}

/// Expand `--config` into the argument vector.
pub fn expand(argv: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&argv)? else {
        return Ok(argv);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let tokens = parse_config(&text)?;
    let mut skip_next = false;
    let mut at = None;
    for (i, arg) in argv.iter().enumerate().skip(1) {
        if skip_next {
            skip_next = false;
            continue;
        }
        let arg = arg.to_string_lossy();
        if arg == "--config" {
            skip_next = true;
        } else if SUBCOMMANDS.contains(&arg.as_ref()) {
            at = Some(i + 1);
            break;
        }
    }
    let Some(at) = at else {
        return Ok(argv);
    };
    let mut out = argv[..at].to_vec();
    out.extend(tokens.into_iter().map(OsString::from));
    out.extend_from_slice(&argv[at..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_become_flags() {
        let text = "# bundle\nk = 500\n--r=8\n\nallow-out-of-range\nvx=-3\n";
        assert_eq!(
            parse_config(text).unwrap(),
            vec!["--k=500", "--r=8", "--allow-out-of-range", "--vx=-3"]
        );
        assert_eq!(parse_config("allow-out-of-range=off").unwrap(), Vec::<String>::new());
        assert!(parse_config("k=").is_err());
        assert!(parse_config("=3").is_err());
    }

    #[test]
    fn spliced_after_subcommand() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "k=500\n").unwrap();
        let argv: Vec<OsString> = [
            "blockflow",
            "--config",
            path.to_str().unwrap(),
            "flow",
            "in.csv",
            "out.csv",
            "--k",
            "200",
        ]
        .iter()
        .map(OsString::from)
        .collect();
        let out = expand(argv).unwrap();
        let out: Vec<String> = out.iter().map(|s| s.to_string_lossy().into_owned()).collect();
        assert_eq!(out[3..6], ["flow", "--k=500", "in.csv"]);
        assert_eq!(out.last().unwrap(), "200");
    }
}
