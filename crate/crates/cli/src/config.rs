//! `--config` files: one `key=value` per line, keys are long flag names.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, CommandFactory};

use crate::args::Cli;
use crate::error::{CliError, CliResult};

/// Parses a config file into `(key, value)` pairs. Blank lines and lines
/// starting with `#` are ignored.
pub fn parse(text: &str, path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("{}:{}: expected key=value", path.display(), i + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Removes `--config` from `argv` and splices the file's entries in as flags
/// ahead of the command-line flags, which therefore take precedence.
pub fn expand(argv: &[String]) -> CliResult<(Vec<String>, Option<PathBuf>)> {
    let Some(sub) = argv.get(1) else {
        return Ok((argv.to_vec(), None));
    };
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv[2..].iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            let v = it
                .next()
                .ok_or_else(|| CliError::Usage("--config needs a file".into()))?;
            config = Some(PathBuf::from(v));
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else {
            rest.push(a.clone());
        }
    }
    let Some(path) = config else {
        return Ok((argv.to_vec(), None));
    };
    let cmd = Cli::command();
    let subcommand = cmd
        .find_subcommand(sub)
        .ok_or_else(|| CliError::Usage(format!("unknown subcommand {sub:?}")))?;
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = vec![argv[0].clone(), sub.clone()];
    for (key, value) in parse(&text, &path)? {
        if key == "config" {
            return Err(CliError::Usage(format!(
                "{}: config files cannot nest",
                path.display()
            )));
        }
        let arg = subcommand
            .get_arguments()
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| {
                CliError::Usage(format!("{}: unknown key {key:?} for {sub}", path.display()))
            })?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => out.push(format!("--{key}")),
                "false" => {}
                v => {
                    return Err(CliError::Usage(format!(
                        "{}: {key} expects true or false, got {v:?}",
                        path.display()
                    )))
                }
            }
        } else {
            out.push(format!("--{key}"));
            out.push(value);
        }
    }
    out.extend(rest);
    Ok((out, Some(path)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &[&str]) -> Vec<String> {
        s.iter().map(|v| v.to_string()).collect()
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let kv = parse("# c\n\nn = 5\nscene=texture\n", Path::new("x")).unwrap();
        assert_eq!(
            kv,
            [("n".into(), "5".into()), ("scene".into(), "texture".into())]
        );
        assert!(parse("novalue\n", Path::new("x")).is_err());
    }

    #[test]
    fn entries_become_leading_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "images=d\nwiener-dft=true\nno-clean=false\n").unwrap();
        let input = argv(&[
            "spn",
            "fingerprint",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            "o",
        ]);
        let (out, path) = expand(&input).unwrap();
        assert_eq!(path.as_deref(), Some(cfg.as_path()));
        assert_eq!(
            out,
            argv(&[
                "spn",
                "fingerprint",
                "--images",
                "d",
                "--wiener-dft",
                "--out",
                "o"
            ])
        );
    }

    #[test]
    fn unknown_keys_are_usage_errors() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        fs::write(&cfg, "bogus=1\n").unwrap();
        let input = argv(&["spn", "synth", &format!("--config={}", cfg.display())]);
        assert!(matches!(expand(&input), Err(CliError::Usage(_))));
    }

    #[test]
    fn argv_without_config_is_untouched() {
        let input = argv(&["spn", "synth", "--out", "d"]);
        assert_eq!(expand(&input).unwrap(), (input, None));
    }
}
