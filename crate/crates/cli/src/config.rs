//! `--config FILE`: a JSON object whose keys are flag names. Its entries are
//! appended to the command line unless the flag is already there.

use serde_json::Value;

fn config_path(args: &[String]) -> Option<String> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn has_flag(args: &[String], flag: &str) -> bool {
    let with_eq = format!("{flag}=");
    args.iter().any(|a| a == flag || a.starts_with(&with_eq))
}

fn scalar(v: &Value) -> Result<String, String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Array(items) => Ok(items
            .iter()
            .map(scalar)
            .collect::<Result<Vec<_>, _>>()?
            .join(",")),
        other => Err(format!("unsupported config value {other}")),
    }
}

/// Returns `args` extended with the config file entries.
pub fn merge(args: Vec<String>) -> Result<Vec<String>, String> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text =
        std::fs::read_to_string(&path).map_err(|e| format!("cannot read config {path}: {e}"))?;
    let doc: Value =
        serde_json::from_str(&text).map_err(|e| format!("invalid config {path}: {e}"))?;
    let Value::Object(entries) = doc else {
        return Err(format!("config {path} must be a JSON object"));
    };
    let mut out = args;
    let mut extra = Vec::new();
    for (key, value) in entries {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || has_flag(&out, &flag) {
            continue;
        }
        match &value {
            Value::Bool(true) => extra.push(flag),
            Value::Bool(false) | Value::Null => {}
            // a list of lists repeats the flag, e.g. several rate vectors
            Value::Array(items) if items.iter().all(Value::is_array) => {
                for item in items {
                    extra.push(flag.clone());
                    extra.push(scalar(item)?);
                }
            }
            v => {
                extra.push(flag);
                extra.push(scalar(v)?);
            }
        }
    }
    out.extend(extra);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_line_wins() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(
            &path,
            r#"{"lambda": 2, "mu": [0.6, 0.4], "ell": [1, 1], "format": "json"}"#,
        )
        .unwrap();
        let args: Vec<String> = [
            "hetlb",
            "analyze",
            "--lambda",
            "1",
            "--config",
            path.to_str().unwrap(),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        let merged = merge(args).unwrap();
        assert_eq!(merged.iter().filter(|a| *a == "--lambda").count(), 1);
        assert!(merged
            .windows(2)
            .any(|w| w[0] == "--mu" && w[1] == "0.6,0.4"));
        assert!(merged
            .windows(2)
            .any(|w| w[0] == "--format" && w[1] == "json"));
    }
}
