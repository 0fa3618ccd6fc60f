//! `key = value` run configuration files and `--set` overrides.

use flowlink::model::GavConfig;
use flowlink::pipeline::RunConfig;
use flowlink::train::TrainConfig;
use flowlink::{Error, Result};
use serde_json::Value;

pub const SEED_ENV: &str = "FLOWLINK_SEED";

/// Parses `key = value` lines. Blank lines and `#` comments are ignored.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        out.push(parse_pair(line).map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn parse_pair(s: &str) -> std::result::Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err(format!("empty key in {s:?}"));
    }
    Ok((k.to_string(), v.to_string()))
}

fn coerce(key: &str, current: &Value, raw: &str) -> Result<Value> {
    let bad = || Error::Config(format!("invalid value {raw:?} for {key}"));
    Ok(match current {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Number(n) if n.is_f64() => serde_json::json!(raw.parse::<f64>().map_err(|_| bad())?),
        Value::Number(_) => serde_json::json!(raw.parse::<u64>().map_err(|_| bad())?),
        // Optional integers such as max_steps.
        Value::Null if raw == "none" => Value::Null,
        Value::Null => serde_json::json!(raw.parse::<u64>().map_err(|_| bad())?),
        _ => return Err(bad()),
    })
}

fn set_field<T>(target: &mut T, key: &str, raw: &str) -> Result<bool>
where
    T: serde::Serialize + serde::de::DeserializeOwned,
{
    let mut value = serde_json::to_value(&*target)?;
    let Some(map) = value.as_object_mut() else {
        return Ok(false);
    };
    let Some(current) = map.get(key) else {
        return Ok(false);
    };
    let next = coerce(key, current, raw)?;
    map.insert(key.to_string(), next);
    *target = serde_json::from_value(value).map_err(|e| Error::Config(format!("{key}: {e}")))?;
    Ok(true)
}

/// Sets one model or training field by name.
pub fn apply(run: &mut RunConfig, key: &str, raw: &str) -> Result<()> {
    if set_field::<GavConfig>(&mut run.model, key, raw)? || set_field::<TrainConfig>(&mut run.train, key, raw)? {
        Ok(())
    } else {
        Err(Error::Config(format!("unknown config key {key:?}")))
    }
}

pub fn parse_seed(raw: &str, source: &str) -> Result<u64> {
    raw.trim()
        .parse()
        .map_err(|_| Error::Config(format!("invalid seed {raw:?} from {source}")))
}

/// Flag, then config, then environment, then 0.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    env.map_or(Ok(0), |raw| parse_seed(raw, SEED_ENV))
}

/// Applies file pairs then overrides; `seed` is routed through [`resolve_seed`].
pub fn build_run_config(
    d_spatial: usize,
    file_pairs: &[(String, String)],
    overrides: &[(String, String)],
    seed_flag: Option<u64>,
    env_seed: Option<&str>,
) -> Result<RunConfig> {
    let mut run = RunConfig {
        model: GavConfig::new(d_spatial),
        train: TrainConfig::default(),
    };
    let mut config_seed = None;
    for (k, v) in file_pairs.iter().chain(overrides) {
        if k == "seed" {
            config_seed = Some(parse_seed(v, "config")?);
        } else {
            apply(&mut run, k, v)?;
        }
    }
    run.train.seed = resolve_seed(seed_flag, config_seed, env_seed)?;
    Ok(run)
}
