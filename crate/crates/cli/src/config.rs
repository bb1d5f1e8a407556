//! `key = value` config files, merged into the argument list so that the
//! command-line flags win.

use std::ffi::OsString;
use std::path::Path;

use crate::CliError;

/// Parsed config: the optional `command` plus every other pair in file order.
#[derive(Debug, Default, PartialEq)]
pub struct ConfigFile {
    pub command: Option<String>,
    pub pairs: Vec<(String, String)>,
}

pub fn parse(text: &str) -> Result<ConfigFile, CliError> {
    let mut cfg = ConfigFile::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::usage("config", format!("line {}: expected `key = value`", lineno + 1)))?;
        let key = k.trim().replace('_', "-");
        let value = v.trim().trim_matches('"').to_string();
        if key.is_empty() {
            return Err(CliError::usage("config", format!("line {}: empty key", lineno + 1)));
        }
        if key == "command" {
            cfg.command = Some(value);
        } else if key == "config" {
            return Err(CliError::usage("config", "config files cannot include other config files"));
        } else {
            cfg.pairs.push((key, value));
        }
    }
    Ok(cfg)
}

pub fn load(path: &Path) -> Result<ConfigFile, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::usage("config", format!("{}: {e}", path.display())))?;
    parse(&text)
}

/// Builds `prog SUBCOMMAND <file flags> <command-line flags>`. Boolean keys
/// become bare flags when `true` and are dropped when `false`.
pub fn merge(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let mut iter = args.into_iter();
    let prog = iter.next().unwrap_or_else(|| OsString::from("ylab"));
    let mut rest = Vec::new();
    let mut config = None;
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            let p = iter
                .next()
                .ok_or_else(|| CliError::usage("config", "missing file name"))?;
            config = Some(p);
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(OsString::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        let mut out = vec![prog];
        out.extend(rest);
        return Ok(out);
    };
    let cfg = load(Path::new(&path))?;

    let explicit = rest.first().map(|a| a.to_string_lossy().into_owned()).filter(|s| !s.starts_with('-'));
    let command = match (&explicit, &cfg.command) {
        (Some(a), Some(b)) if a != b => {
            return Err(CliError::usage(
                "command",
                format!("config names `{b}` but the command line names `{a}`"),
            ))
        }
        (Some(a), _) => a.clone(),
        (None, Some(b)) => b.clone(),
        (None, None) => return Err(CliError::usage("command", "no subcommand given")),
    };
    if explicit.is_some() {
        rest.remove(0);
    }

    let mut out = vec![prog, OsString::from(command)];
    for (k, v) in cfg.pairs {
        match v.as_str() {
            "true" => out.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                out.push(OsString::from(format!("--{k}")));
                out.push(OsString::from(v));
            }
        }
    }
    out.extend(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn parses_pairs_and_comments() {
        let c = parse("# run\ncommand = kde-eig\nh = 0.03 # bandwidth\nresamples=100\n\n").unwrap();
        assert_eq!(c.command.as_deref(), Some("kde-eig"));
        assert_eq!(c.pairs, vec![("h".into(), "0.03".into()), ("resamples".into(), "100".into())]);
        assert!(parse("just words").is_err());
    }

    #[test]
    fn underscores_map_to_dashes() {
        let c = parse("delta_grid = \"0.01:0.1:5\"").unwrap();
        assert_eq!(c.pairs, vec![("delta-grid".into(), "0.01:0.1:5".into())]);
    }

    #[test]
    fn no_config_passes_through() {
        let a = os(&["ylab", "kde-eig", "--h", "0.03"]);
        assert_eq!(merge(a.clone()).unwrap(), a);
    }

    #[test]
    fn file_flags_precede_command_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.cfg");
        std::fs::write(&p, "command = kde-eig\nh = 0.01\nverbose = false\nflag = true\n").unwrap();
        let merged = merge(os(&["ylab", "--config", p.to_str().unwrap(), "--h", "0.03"])).unwrap();
        assert_eq!(merged, os(&["ylab", "kde-eig", "--h", "0.01", "--flag", "--h", "0.03"]));
        assert!(merge(os(&["ylab", "coverage", "--config", p.to_str().unwrap()])).is_err());
    }
}
