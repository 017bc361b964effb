//! Run configuration: a preset, a config file and command-line overrides
//! merged into one TOML table, then validated per command.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use toml::{Table, Value};

/// Environment variable that overrides the output directory.
pub const OUT_DIR_ENV: &str = "GRL_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "out";

/// Invalid or unreadable configuration. Maps to exit status 1.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub type ConfigResult<T> = std::result::Result<T, ConfigError>;

pub fn config_err<T>(msg: impl Into<String>) -> ConfigResult<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Command {
    Qlearn,
    Surrogate,
    Homo,
    Binarize,
    Bounds,
    Vaexp,
    Vpdp,
    Order,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Qlearn,
        Command::Surrogate,
        Command::Homo,
        Command::Binarize,
        Command::Bounds,
        Command::Vaexp,
        Command::Vpdp,
        Command::Order,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Qlearn => "qlearn",
            Command::Surrogate => "surrogate",
            Command::Homo => "homo",
            Command::Binarize => "binarize",
            Command::Bounds => "bounds",
            Command::Vaexp => "vaexp",
            Command::Vpdp => "vpdp",
            Command::Order => "order",
        }
    }

    pub fn parse(s: &str) -> ConfigResult<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|c| c.name()).collect();
            ConfigError(format!("field `command`: unknown command `{s}` (expected one of {})", names.join(", ")))
        })
    }
}

/// Presets shipped with the binary, by name.
pub const PRESETS: [(&str, &str); 17] = [
    ("ex1-convergence", include_str!("../presets/ex1-convergence.toml")),
    ("ex2-convergence", include_str!("../presets/ex2-convergence.toml")),
    ("surrogate-random", include_str!("../presets/surrogate-random.toml")),
    ("regions-non-mdp", include_str!("../presets/regions-non-mdp.toml")),
    ("regions-approx-q", include_str!("../presets/regions-approx-q.toml")),
    ("regions-approx-policy", include_str!("../presets/regions-approx-policy.toml")),
    ("homo-loss-bound", include_str!("../presets/homo-loss-bound.toml")),
    ("gridworld-fold", include_str!("../presets/gridworld-fold.toml")),
    ("binarize-random", include_str!("../presets/binarize-random.toml")),
    ("bounds-table", include_str!("../presets/bounds-table.toml")),
    ("va-agg2-noise1", include_str!("../presets/va-agg2-noise1.toml")),
    ("va-agg2-noise5", include_str!("../presets/va-agg2-noise5.toml")),
    ("va-agg4-noise1", include_str!("../presets/va-agg4-noise1.toml")),
    ("va-agg4-noise5", include_str!("../presets/va-agg4-noise5.toml")),
    ("va-macro-noise0", include_str!("../presets/va-macro-noise0.toml")),
    ("vpdp-search", include_str!("../presets/vpdp-search.toml")),
    ("order-three-block", include_str!("../presets/order-three-block.toml")),
];

pub fn preset(name: &str) -> ConfigResult<Table> {
    match PRESETS.iter().find(|(n, _)| *n == name) {
        Some((_, text)) => text.parse::<Table>().map_err(|e| ConfigError(format!("preset `{name}` is malformed: {e}"))),
        None => config_err(format!("unknown preset `{name}` (see `grl presets`)")),
    }
}

/// Everything the `run` subcommand was given before merging.
#[derive(Debug, Default)]
pub struct Request {
    pub command: Option<String>,
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub tag: Option<String>,
    pub overrides: Vec<(String, Value)>,
}

/// A merged, validated-at-the-top-level configuration.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub command: Command,
    pub seed: u64,
    /// Optional label placed in output file names.
    pub tag: Option<String>,
    pub out_dir: PathBuf,
    /// Parameter section of the selected command.
    pub params: Table,
    /// Canonical TOML of command, seed and parameters; hashed into the manifest.
    pub canonical: String,
    /// Directory relative paths in the parameters resolve against.
    pub base_dir: PathBuf,
}

/// Parses `--key value` / `--key=value` pairs. Reserved keys fill the
/// request; all others become parameter overrides.
pub fn parse_args(command: Option<String>, args: &[String]) -> ConfigResult<Request> {
    let mut req = Request { command, ..Request::default() };
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(flag) = arg.strip_prefix("--") else {
            return config_err(format!("unexpected argument `{arg}`; parameters are given as --name value"));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                i += 1;
                match args.get(i) {
                    Some(v) => (flag.to_string(), v.clone()),
                    None => return config_err(format!("flag `--{flag}` needs a value")),
                }
            }
        };
        let key = key.replace('-', "_");
        match key.as_str() {
            "config" => req.config = Some(PathBuf::from(value)),
            "preset" => req.preset = Some(value),
            "out" => req.out = Some(PathBuf::from(value)),
            "tag" => req.tag = Some(value),
            "seed" => {
                req.seed = Some(value.parse().map_err(|_| ConfigError(format!("field `seed`: `{value}` is not an unsigned integer")))?)
            }
            _ => req.overrides.push((key, parse_value(&value))),
        }
        i += 1;
    }
    Ok(req)
}

/// Reads a flag value as a TOML literal, then as a comma list, then as a bare string.
pub fn parse_value(s: &str) -> Value {
    if let Ok(mut t) = format!("v = {s}").parse::<Table>() {
        if let Some(v) = t.remove("v") {
            return v;
        }
    }
    if s.contains(',') {
        return Value::Array(s.split(',').map(|p| parse_value(p.trim())).collect());
    }
    Value::String(s.to_string())
}

fn merge(into: &mut Table, from: Table) {
    for (k, v) in from {
        match (into.get_mut(&k), v) {
            (Some(Value::Table(a)), Value::Table(b)) => merge(a, b),
            (_, v) => {
                into.insert(k, v);
            }
        }
    }
}

fn read_file(path: &Path) -> ConfigResult<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
    text.parse::<Table>().map_err(|e| ConfigError(format!("config {} is not valid TOML: {e}", path.display())))
}

pub fn resolve(req: Request, env_out: Option<PathBuf>) -> ConfigResult<Resolved> {
    let mut table = Table::new();
    if let Some(name) = &req.preset {
        merge(&mut table, preset(name)?);
    }
    let mut base_dir = std::env::current_dir().unwrap_or_default();
    if let Some(path) = &req.config {
        let file = read_file(path)?;
        if let (Some(Value::String(a)), Some(Value::String(b))) = (table.get("command"), file.get("command")) {
            if a != b {
                return config_err(format!("field `command`: config says `{b}` but the preset is for `{a}`"));
            }
        }
        merge(&mut table, file);
        if let Some(parent) = path.parent() {
            base_dir = base_dir.join(parent);
        }
    }
    let command = match (&req.command, table.get("command")) {
        (Some(c), Some(Value::String(t))) if c != t => {
            return config_err(format!("field `command`: `{c}` requested but the configuration is for `{t}`"));
        }
        (Some(c), _) => Command::parse(c)?,
        (None, Some(Value::String(t))) => Command::parse(t)?,
        (None, Some(_)) => return config_err("field `command`: expected a string"),
        (None, None) => return config_err("field `command`: missing (give it on the command line or in the config)"),
    };
    for key in table.keys() {
        if !matches!(key.as_str(), "command" | "seed" | "tag" | "out_dir") && key != command.name() {
            return config_err(format!("unknown top-level field `{key}` for command `{}`", command.name()));
        }
    }
    let seed = match (req.seed, table.get("seed")) {
        (Some(s), _) => s,
        (None, Some(Value::Integer(s))) if *s >= 0 => *s as u64,
        (None, Some(_)) => return config_err("field `seed`: expected an unsigned integer"),
        (None, None) => 0,
    };
    let tag = match (req.tag, table.get("tag")) {
        (Some(t), _) => Some(t),
        (None, Some(Value::String(t))) => Some(t.clone()),
        (None, Some(_)) => return config_err("field `tag`: expected a string"),
        (None, None) => None,
    };
    if let Some(t) = &tag {
        let ok = !t.is_empty() && t.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        require(ok, "tag", "use letters, digits, `-` and `_` only")?;
    }
    let file_out = match table.get("out_dir") {
        Some(Value::String(s)) => Some(PathBuf::from(s)),
        Some(_) => return config_err("field `out_dir`: expected a string"),
        None => None,
    };
    let out_dir = req.out.or(env_out).or(file_out).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
    let mut params = match table.remove(command.name()) {
        Some(Value::Table(t)) => t,
        Some(_) => return config_err(format!("field `{}`: expected a section", command.name())),
        None => Table::new(),
    };
    for (k, v) in req.overrides {
        params.insert(k, v);
    }
    let mut canon = Table::new();
    canon.insert("command".into(), Value::String(command.name().into()));
    canon.insert("seed".into(), Value::Integer(seed as i64));
    canon.insert(command.name().into(), Value::Table(params.clone()));
    let canonical = toml::to_string(&canon).map_err(|e| ConfigError(e.to_string()))?;
    Ok(Resolved { command, seed, tag, out_dir, params, canonical, base_dir })
}

/// Deserializes a parameter section; serde's message names the offending field.
pub fn typed<T: DeserializeOwned>(command: Command, params: &Table) -> ConfigResult<T> {
    Value::Table(params.clone()).try_into().map_err(|e: toml::de::Error| ConfigError(format!("[{}] {}", command.name(), e.message())))
}

/// Fails with the field name unless `ok`.
pub fn require(ok: bool, field: &str, msg: &str) -> ConfigResult<()> {
    if ok {
        Ok(())
    } else {
        config_err(format!("field `{field}`: {msg}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn values_parse_as_toml_then_lists_then_strings() {
        assert_eq!(parse_value("0.1"), Value::Float(0.1));
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert_eq!(parse_value("true"), Value::Boolean(true));
        assert_eq!(parse_value("2,4,8"), Value::Array(vec![Value::Integer(2), Value::Integer(4), Value::Integer(8)]));
        assert_eq!(parse_value("[[0,1],[1,0]]").as_array().unwrap().len(), 2);
        assert_eq!(parse_value("ex1"), Value::String("ex1".into()));
    }

    #[test]
    fn reserved_flags_fill_the_request() {
        let r = parse_args(Some("bounds".into()), &args(&["--seed", "4", "--out=o", "--eps", "0.1", "--reward-range", "2"])).unwrap();
        assert_eq!(r.seed, Some(4));
        assert_eq!(r.out, Some(PathBuf::from("o")));
        assert_eq!(r.overrides[0].0, "eps");
        assert_eq!(r.overrides[1].0, "reward_range");
        assert!(parse_args(None, &args(&["--eps"])).is_err());
        assert!(parse_args(None, &args(&["eps"])).is_err());
    }

    #[test]
    fn every_preset_parses_and_names_its_command() {
        for (name, _) in PRESETS {
            let t = preset(name).unwrap();
            let cmd = Command::parse(t["command"].as_str().unwrap()).unwrap();
            assert!(t.get(cmd.name()).is_some(), "{name}");
        }
    }

    #[test]
    fn precedence_is_flag_then_env_then_file() {
        let req = Request { command: Some("bounds".into()), preset: Some("bounds-table".into()), ..Request::default() };
        let r = resolve(req, Some(PathBuf::from("env"))).unwrap();
        assert_eq!(r.out_dir, PathBuf::from("env"));
        let req = Request { command: Some("bounds".into()), out: Some("flag".into()), ..Request::default() };
        assert_eq!(resolve(req, Some(PathBuf::from("env"))).unwrap().out_dir, PathBuf::from("flag"));
    }

    #[test]
    fn command_mismatch_and_unknown_sections_are_rejected() {
        let req = Request { command: Some("qlearn".into()), preset: Some("bounds-table".into()), ..Request::default() };
        assert!(resolve(req, None).is_err());
        assert!(resolve(Request::default(), None).unwrap_err().0.contains("command"));
    }

    #[test]
    fn canonical_form_ignores_override_order() {
        let mk = |o: Vec<(String, Value)>| {
            let req = Request { command: Some("bounds".into()), overrides: o, ..Request::default() };
            resolve(req, None).unwrap().canonical
        };
        let a = mk(vec![("eps".into(), Value::Float(0.1)), ("gamma".into(), Value::Float(0.9))]);
        let b = mk(vec![("gamma".into(), Value::Float(0.9)), ("eps".into(), Value::Float(0.1))]);
        assert_eq!(a, b);
    }
}
