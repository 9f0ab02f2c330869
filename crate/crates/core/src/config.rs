//! Hierarchical experiment configuration: default files, typed command-line
//! overrides, and cross-product sweep expansion.

use std::fmt;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use serde_yaml::Value;
use thiserror::Error;

use crate::runstore::RunId;

/// Name of the experiment defaults file inside the config directory.
pub const CONFIG_FILE: &str = "config.yaml";
/// Name of the tool settings file inside the config directory.
pub const SETTINGS_FILE: &str = "mlxp.yaml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config directory {0} does not exist")]
    MissingConfigDir(String),
    #[error("malformed config file {path} at line {line}, column {column}: {message}")]
    MalformedConfigFile {
        path: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("leaf `{0}` is not a scalar")]
    NonScalarLeaf(String),
    #[error("invalid key `{0}`")]
    InvalidKey(String),
    #[error("bad override `{0}`: expected PATH=VALUE[,VALUE...]")]
    BadOverrideSyntax(String),
    #[error("override `{0}` has no values")]
    EmptyValueList(String),
    #[error("override `{path}` repeats the value {value}")]
    DuplicateSweepValue { path: String, value: String },
    #[error("path `{0}` is overridden more than once")]
    DuplicateOverridePath(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// A leaf value of a configuration tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Scalar {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
}

impl Scalar {
    /// Types a bare command-line token by trial parse: integer, float,
    /// boolean, then text. Tokens wrapped in matching quotes are always text.
    pub fn parse_token(token: &str) -> Scalar {
        if let Some(inner) = unquote(token) {
            return Scalar::Text(inner.to_string());
        }
        if let Ok(i) = token.parse::<i64>() {
            return Scalar::Int(i);
        }
        if looks_like_float(token) {
            if let Ok(f) = token.parse::<f64>() {
                if f.is_finite() {
                    return Scalar::Float(f);
                }
            }
        }
        match token {
            "true" | "True" | "TRUE" => Scalar::Bool(true),
            "false" | "False" | "FALSE" => Scalar::Bool(false),
            _ => Scalar::Text(token.to_string()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Scalar::Int(i) => Some(*i as f64),
            Scalar::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn is_number(&self) -> bool {
        matches!(self, Scalar::Int(_) | Scalar::Float(_))
    }

    /// Equality with integer/float coercion.
    pub fn loose_eq(&self, other: &Scalar) -> bool {
        match (self, other) {
            (Scalar::Int(a), Scalar::Int(b)) => a == b,
            (a, b) if a.is_number() && b.is_number() => a.as_f64() == b.as_f64(),
            (a, b) => a == b,
        }
    }

    /// Renders the scalar as an override token that reparses to an equal
    /// scalar under [`Scalar::parse_token`].
    pub fn to_token(&self) -> String {
        match self {
            Scalar::Null => "'null'".to_string(),
            Scalar::Bool(b) => b.to_string(),
            Scalar::Int(i) => i.to_string(),
            Scalar::Float(f) => format_float(*f),
            Scalar::Text(s) => {
                if is_bare_text(s) {
                    s.clone()
                } else if s.contains('\'') {
                    format!("\"{s}\"")
                } else {
                    format!("'{s}'")
                }
            }
        }
    }
}

impl fmt::Display for Scalar {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scalar::Null => f.write_str("null"),
            Scalar::Bool(b) => write!(f, "{b}"),
            Scalar::Int(i) => write!(f, "{i}"),
            Scalar::Float(x) => f.write_str(&format_float(*x)),
            Scalar::Text(s) => f.write_str(s),
        }
    }
}

/// Shortest representation that reads back as the same float and still
/// looks like a float (`10.0`, not `10`).
pub fn format_float(f: f64) -> String {
    let s = format!("{f:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

fn unquote(token: &str) -> Option<&str> {
    let bytes = token.as_bytes();
    if bytes.len() >= 2 {
        let (first, last) = (bytes[0], bytes[bytes.len() - 1]);
        if (first == b'\'' || first == b'"') && first == last {
            return Some(&token[1..token.len() - 1]);
        }
    }
    None
}

fn looks_like_float(token: &str) -> bool {
    let body = token.strip_prefix(['+', '-']).unwrap_or(token);
    let (mantissa, exponent) = match body.find(['e', 'E']) {
        Some(i) => (&body[..i], Some(&body[i + 1..])),
        None => (body, None),
    };
    let mut digits = 0;
    let mut dots = 0;
    for c in mantissa.chars() {
        match c {
            '0'..='9' => digits += 1,
            '.' => dots += 1,
            _ => return false,
        }
    }
    if digits == 0 || dots > 1 {
        return false;
    }
    match exponent {
        None => true,
        Some(e) => {
            let e = e.strip_prefix(['+', '-']).unwrap_or(e);
            !e.is_empty() && e.chars().all(|c| c.is_ascii_digit())
        }
    }
}

fn is_bare_text(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, ',' | '=' | '\'' | '"'))
        && matches!(Scalar::parse_token(s), Scalar::Text(_))
}

/// A node of the configuration tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Scalar(Scalar),
    Map(ConfigMap),
}

pub type ConfigMap = IndexMap<String, Node>;

/// Checks the key rule shared by config trees and metric names.
pub fn validate_key(key: &str) -> Result<(), ConfigError> {
    if key.is_empty() || key.chars().any(|c| c == '.' || c == '=' || c.is_whitespace()) {
        return Err(ConfigError::InvalidKey(key.to_string()));
    }
    Ok(())
}

/// Nested, ordered map of experiment hyperparameters with scalar leaves.
///
/// Empty sub-maps are pruned, so the tree is always recoverable from its
/// flattened form.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigTree {
    root: ConfigMap,
}

impl ConfigTree {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn root(&self) -> &ConfigMap {
        &self.root
    }

    pub fn is_empty(&self) -> bool {
        self.root.is_empty()
    }

    /// Looks up a dotted path.
    pub fn get(&self, path: &str) -> Option<&Node> {
        let mut parts = path.split('.');
        let mut node = self.root.get(parts.next()?)?;
        for part in parts {
            match node {
                Node::Map(m) => node = m.get(part)?,
                Node::Scalar(_) => return None,
            }
        }
        Some(node)
    }

    pub fn get_scalar(&self, path: &str) -> Option<&Scalar> {
        match self.get(path)? {
            Node::Scalar(s) => Some(s),
            Node::Map(_) => None,
        }
    }

    /// Sets the leaf at a dotted path, creating intermediate maps. A scalar
    /// standing where a map is needed is replaced, as is a map replaced by a
    /// scalar leaf.
    pub fn set(&mut self, path: &str, value: Scalar) -> Result<(), ConfigError> {
        let keys: Vec<&str> = path.split('.').collect();
        for k in &keys {
            validate_key(k)?;
        }
        let (last, parents) = keys.split_last().expect("split yields one item");
        let mut map = &mut self.root;
        for k in parents {
            let entry = map
                .entry(k.to_string())
                .or_insert_with(|| Node::Map(ConfigMap::new()));
            if !matches!(entry, Node::Map(_)) {
                *entry = Node::Map(ConfigMap::new());
            }
            map = match entry {
                Node::Map(m) => m,
                Node::Scalar(_) => unreachable!(),
            };
        }
        map.insert(last.to_string(), Node::Scalar(value));
        Ok(())
    }

    /// Flattened view: dotted path to leaf, in depth-first insertion order.
    pub fn flatten(&self) -> IndexMap<String, Scalar> {
        fn walk(prefix: &str, map: &ConfigMap, out: &mut IndexMap<String, Scalar>) {
            for (k, v) in map {
                let path = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                match v {
                    Node::Scalar(s) => {
                        out.insert(path, s.clone());
                    }
                    Node::Map(m) => walk(&path, m, out),
                }
            }
        }
        let mut out = IndexMap::new();
        walk("", &self.root, &mut out);
        out
    }

    pub fn unflatten<I, K>(entries: I) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (K, Scalar)>,
        K: AsRef<str>,
    {
        let mut tree = ConfigTree::new();
        for (k, v) in entries {
            tree.set(k.as_ref(), v)?;
        }
        Ok(tree)
    }

    /// Parses YAML text restricted to nested maps of scalars.
    pub fn from_yaml_str(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_yaml::from_str(text).map_err(|e| {
            let (line, column) = e
                .location()
                .map(|l| (l.line(), l.column()))
                .unwrap_or((0, 0));
            ConfigError::MalformedConfigFile {
                path: origin.to_string(),
                line,
                column,
                message: e.to_string(),
            }
        })?;
        match value {
            Value::Null => Ok(ConfigTree::new()),
            Value::Mapping(m) => Ok(ConfigTree {
                root: convert_map("", m)?,
            }),
            _ => Err(ConfigError::MalformedConfigFile {
                path: origin.to_string(),
                line: 1,
                column: 1,
                message: "top level must be a mapping".to_string(),
            }),
        }
    }

    pub fn from_yaml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_yaml_str(&text, &path.display().to_string())
    }

    pub fn to_yaml_string(&self) -> String {
        if self.root.is_empty() {
            return "{}\n".to_string();
        }
        serde_yaml::to_string(&to_value_map(&self.root)).expect("scalar maps always serialize")
    }
}

fn convert_map(prefix: &str, m: serde_yaml::Mapping) -> Result<ConfigMap, ConfigError> {
    let mut out = ConfigMap::new();
    for (k, v) in m {
        let key = match k {
            Value::String(s) => s,
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            other => return Err(ConfigError::InvalidKey(format!("{other:?}"))),
        };
        validate_key(&key)?;
        let path = if prefix.is_empty() {
            key.clone()
        } else {
            format!("{prefix}.{key}")
        };
        let node = match v {
            Value::Null => Node::Scalar(Scalar::Null),
            Value::Bool(b) => Node::Scalar(Scalar::Bool(b)),
            Value::Number(n) => {
                if let Some(i) = n.as_i64() {
                    Node::Scalar(Scalar::Int(i))
                } else {
                    let f = n.as_f64().unwrap_or(f64::NAN);
                    if !f.is_finite() {
                        return Err(ConfigError::NonScalarLeaf(path));
                    }
                    Node::Scalar(Scalar::Float(f))
                }
            }
            Value::String(s) => Node::Scalar(Scalar::Text(s)),
            Value::Mapping(inner) => {
                let sub = convert_map(&path, inner)?;
                if sub.is_empty() {
                    continue;
                }
                Node::Map(sub)
            }
            Value::Sequence(_) | Value::Tagged(_) => return Err(ConfigError::NonScalarLeaf(path)),
        };
        out.insert(key, node);
    }
    Ok(out)
}

fn to_value_map(map: &ConfigMap) -> Value {
    let mut out = serde_yaml::Mapping::new();
    for (k, v) in map {
        let value = match v {
            Node::Map(m) => to_value_map(m),
            Node::Scalar(s) => match s {
                Scalar::Null => Value::Null,
                Scalar::Bool(b) => Value::Bool(*b),
                Scalar::Int(i) => Value::Number((*i).into()),
                Scalar::Float(f) => Value::Number((*f).into()),
                Scalar::Text(t) => Value::String(t.clone()),
            },
        };
        out.insert(Value::String(k.clone()), value);
    }
    Value::Mapping(out)
}

/// Reads the experiment defaults from `config_dir/config.yaml`. A missing
/// file yields an empty tree; the settings file is never merged in.
pub fn load_defaults(config_dir: &Path) -> Result<ConfigTree, ConfigError> {
    if !config_dir.is_dir() {
        return Err(ConfigError::MissingConfigDir(config_dir.display().to_string()));
    }
    let path = config_dir.join(CONFIG_FILE);
    if !path.exists() {
        return Ok(ConfigTree::new());
    }
    ConfigTree::from_yaml_file(&path)
}

/// One `path=value[,value...]` command-line override.
#[derive(Debug, Clone, PartialEq)]
pub struct OverrideSpec {
    pub path: String,
    pub values: Vec<Scalar>,
}

impl OverrideSpec {
    pub fn is_sweep(&self) -> bool {
        self.values.len() > 1
    }
}

impl fmt::Display for OverrideSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let values: Vec<String> = self.values.iter().map(Scalar::to_token).collect();
        write!(f, "{}={}", self.path, values.join(","))
    }
}

/// True when a command-line token has override shape (`x=...`, not `--x=...`).
pub fn is_override_token(token: &str) -> bool {
    !token.starts_with('-') && token.find('=').is_some_and(|i| i > 0)
}

pub fn parse_override(arg: &str) -> Result<OverrideSpec, ConfigError> {
    let (path, raw) = arg
        .split_once('=')
        .ok_or_else(|| ConfigError::BadOverrideSyntax(arg.to_string()))?;
    if path.is_empty() {
        return Err(ConfigError::BadOverrideSyntax(arg.to_string()));
    }
    for key in path.split('.') {
        validate_key(key).map_err(|_| ConfigError::BadOverrideSyntax(arg.to_string()))?;
    }
    if raw.is_empty() {
        return Err(ConfigError::EmptyValueList(path.to_string()));
    }
    let mut values: Vec<Scalar> = Vec::new();
    for item in split_values(raw).ok_or_else(|| ConfigError::BadOverrideSyntax(arg.to_string()))? {
        let value = Scalar::parse_token(item);
        if values.iter().any(|v| v.loose_eq(&value)) {
            return Err(ConfigError::DuplicateSweepValue {
                path: path.to_string(),
                value: value.to_token(),
            });
        }
        values.push(value);
    }
    Ok(OverrideSpec {
        path: path.to_string(),
        values,
    })
}

/// Splits a value list on commas outside quotes. Returns `None` on an empty
/// item, an unterminated quote, or a stray `=`/quote inside a bare item.
fn split_values(raw: &str) -> Option<Vec<&str>> {
    let mut items = Vec::new();
    let bytes = raw.as_bytes();
    let mut start = 0;
    let mut i = 0;
    while i <= bytes.len() {
        if i < bytes.len() && (bytes[i] == b'\'' || bytes[i] == b'"') && i == start {
            let q = bytes[i];
            let close = raw[i + 1..].find(q as char)? + i + 1;
            i = close + 1;
            if i < bytes.len() && bytes[i] != b',' {
                return None;
            }
            continue;
        }
        if i == bytes.len() || bytes[i] == b',' {
            let item = &raw[start..i];
            let quoted = unquote(item).is_some();
            if item.is_empty()
                || (!quoted
                    && item
                        .chars()
                        .any(|c| c.is_whitespace() || matches!(c, '=' | '\'' | '"')))
            {
                return None;
            }
            items.push(item);
            start = i + 1;
        }
        i += 1;
    }
    Some(items)
}

pub fn parse_overrides<S: AsRef<str>>(args: &[S]) -> Result<Vec<OverrideSpec>, ConfigError> {
    let mut specs: Vec<OverrideSpec> = Vec::with_capacity(args.len());
    for arg in args {
        let spec = parse_override(arg.as_ref())?;
        if specs.iter().any(|s| s.path == spec.path) {
            return Err(ConfigError::DuplicateOverridePath(spec.path));
        }
        specs.push(spec);
    }
    Ok(specs)
}

/// One entry of a run plan: the resolved tree and the single-valued
/// overrides that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedRun {
    pub config: ConfigTree,
    pub assignment: Vec<(String, Scalar)>,
    pub run_id: Option<RunId>,
}

impl PlannedRun {
    /// Override tokens for this tuple, e.g. `["lr=10.0", "seed=1"]`.
    pub fn override_tokens(&self) -> Vec<String> {
        self.assignment
            .iter()
            .map(|(p, v)| format!("{p}={}", v.to_token()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub runs: Vec<PlannedRun>,
    pub provenance: Vec<OverrideSpec>,
}

impl RunPlan {
    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }
}

/// Cross product of all override values applied over the defaults, first
/// spec varying slowest.
pub fn expand_plan(defaults: &ConfigTree, specs: &[OverrideSpec]) -> RunPlan {
    let total: usize = specs.iter().map(|s| s.values.len()).product();
    let mut runs = Vec::with_capacity(total);
    let mut index = vec![0usize; specs.len()];
    for _ in 0..total {
        let mut config = defaults.clone();
        let mut assignment = Vec::with_capacity(specs.len());
        for (spec, &i) in specs.iter().zip(&index) {
            let value = spec.values[i].clone();
            config
                .set(&spec.path, value.clone())
                .expect("override paths validated at parse time");
            assignment.push((spec.path.clone(), value));
        }
        runs.push(PlannedRun {
            config,
            assignment,
            run_id: None,
        });
        for pos in (0..specs.len()).rev() {
            index[pos] += 1;
            if index[pos] < specs[pos].values.len() {
                break;
            }
            index[pos] = 0;
        }
    }
    RunPlan {
        runs,
        provenance: specs.to_vec(),
    }
}

/// Splits a command line into the program part and its trailing overrides.
pub fn split_command(tokens: &[String]) -> (Vec<String>, Vec<String>) {
    let cut = tokens
        .iter()
        .rposition(|t| !is_override_token(t))
        .map_or(0, |i| i + 1);
    (tokens[..cut].to_vec(), tokens[cut..].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const FIG_2A: &str = "seed: 0\nlr: 10.\ntrainer:\n num_epoch: 10\nmodel:\n num_units: 100\n";

    #[test]
    fn loads_paper_defaults() {
        let tree = ConfigTree::from_yaml_str(FIG_2A, "config.yaml").unwrap();
        assert_eq!(tree.get_scalar("seed"), Some(&Scalar::Int(0)));
        assert_eq!(tree.get_scalar("lr"), Some(&Scalar::Float(10.0)));
        assert_eq!(tree.get_scalar("trainer.num_epoch"), Some(&Scalar::Int(10)));
        assert_eq!(tree.get_scalar("model.num_units"), Some(&Scalar::Int(100)));
    }

    #[test]
    fn load_defaults_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_defaults(&dir.path().join("nope")),
            Err(ConfigError::MissingConfigDir(_))
        ));
        fs::write(dir.path().join(CONFIG_FILE), "").unwrap();
        assert!(load_defaults(dir.path()).unwrap().is_empty());
        fs::write(dir.path().join(CONFIG_FILE), "xs: [1,2]\n").unwrap();
        assert!(matches!(
            load_defaults(dir.path()),
            Err(ConfigError::NonScalarLeaf(p)) if p == "xs"
        ));
        fs::write(dir.path().join(CONFIG_FILE), "a: 1\n  b: [\n").unwrap();
        match load_defaults(dir.path()) {
            Err(ConfigError::MalformedConfigFile { line, .. }) => assert!(line >= 1),
            other => panic!("unexpected {other:?}"),
        }
        fs::write(dir.path().join(SETTINGS_FILE), "logs_root: elsewhere\n").unwrap();
        fs::write(dir.path().join(CONFIG_FILE), FIG_2A).unwrap();
        let tree = load_defaults(dir.path()).unwrap();
        assert!(tree.get("logs_root").is_none());
    }

    #[test]
    fn typed_overrides() {
        let specs = parse_overrides(&["seed=0,1", "lr=1.0,0.1"]).unwrap();
        assert_eq!(specs[0].values, vec![Scalar::Int(0), Scalar::Int(1)]);
        assert_eq!(specs[1].values, vec![Scalar::Float(1.0), Scalar::Float(0.1)]);

        let specs = parse_overrides(&["data=DC1", "model=EDAA", "SNR=30"]).unwrap();
        assert_eq!(specs.len(), 3);
        assert_eq!(specs[0].values, vec![Scalar::Text("DC1".into())]);
        assert_eq!(specs[2].values, vec![Scalar::Int(30)]);
        assert!(specs.iter().all(|s| !s.is_sweep()));

        let specs = parse_overrides(&["flag=true", "name='10'", "x=1e-3", "y=inf"]).unwrap();
        assert_eq!(specs[0].values, vec![Scalar::Bool(true)]);
        assert_eq!(specs[1].values, vec![Scalar::Text("10".into())]);
        assert_eq!(specs[2].values, vec![Scalar::Float(1e-3)]);
        assert_eq!(specs[3].values, vec![Scalar::Text("inf".into())]);
    }

    #[test]
    fn override_errors() {
        assert!(matches!(
            parse_overrides(&["lr=0.1,0.1"]),
            Err(ConfigError::DuplicateSweepValue { .. })
        ));
        assert!(matches!(
            parse_overrides(&["lr"]),
            Err(ConfigError::BadOverrideSyntax(_))
        ));
        assert!(matches!(
            parse_overrides(&["lr="]),
            Err(ConfigError::EmptyValueList(_))
        ));
        assert!(matches!(
            parse_overrides(&["lr=="]),
            Err(ConfigError::BadOverrideSyntax(_))
        ));
        assert!(matches!(
            parse_overrides(&["lr=1,,2"]),
            Err(ConfigError::BadOverrideSyntax(_))
        ));
        assert!(matches!(
            parse_overrides(&["a..b=1"]),
            Err(ConfigError::BadOverrideSyntax(_))
        ));
        assert!(matches!(
            parse_overrides(&["a=1", "a=2"]),
            Err(ConfigError::DuplicateOverridePath(_))
        ));
    }

    #[test]
    fn paper_sweep_order() {
        let defaults = ConfigTree::from_yaml_str(FIG_2A, "config.yaml").unwrap();
        let before = defaults.clone();
        let specs = parse_overrides(&["seed=0,1", "lr=1.0,0.1"]).unwrap();
        let plan = expand_plan(&defaults, &specs);
        let got: Vec<(Scalar, Scalar)> = plan
            .runs
            .iter()
            .map(|r| {
                (
                    r.config.get_scalar("seed").unwrap().clone(),
                    r.config.get_scalar("lr").unwrap().clone(),
                )
            })
            .collect();
        assert_eq!(
            got,
            vec![
                (Scalar::Int(0), Scalar::Float(1.0)),
                (Scalar::Int(0), Scalar::Float(0.1)),
                (Scalar::Int(1), Scalar::Float(1.0)),
                (Scalar::Int(1), Scalar::Float(0.1)),
            ]
        );
        assert_eq!(defaults, before);
        assert_eq!(plan.runs[0].config.get_scalar("trainer.num_epoch"), Some(&Scalar::Int(10)));
    }

    #[test]
    fn empty_sweep_is_one_run() {
        let defaults = ConfigTree::from_yaml_str(FIG_2A, "x").unwrap();
        let plan = expand_plan(&defaults, &[]);
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.runs[0].config, defaults);
    }

    #[test]
    fn gauss_newton_sweep_size() {
        let specs = parse_overrides(&[
            "std=0.01,0.1,0.5,1.,5,10,100",
            "seed=0,1,2,3,4",
            "method=RF,GD,GN",
        ])
        .unwrap();
        assert_eq!(expand_plan(&ConfigTree::new(), &specs).len(), 105);
    }

    #[test]
    fn overrides_add_and_replace_leaves() {
        let mut tree = ConfigTree::from_yaml_str("a: 1\nb:\n c: 2\n", "x").unwrap();
        tree.set("new.leaf", Scalar::Int(3)).unwrap();
        tree.set("a.x", Scalar::Int(4)).unwrap();
        tree.set("b", Scalar::Int(5)).unwrap();
        assert_eq!(tree.get_scalar("new.leaf"), Some(&Scalar::Int(3)));
        assert_eq!(tree.get_scalar("a.x"), Some(&Scalar::Int(4)));
        assert_eq!(tree.get_scalar("b"), Some(&Scalar::Int(5)));
    }

    #[test]
    fn float_formatting() {
        assert_eq!(format_float(10.0), "10.0");
        assert_eq!(format_float(0.1), "0.1");
        assert_eq!(Scalar::parse_token(&format_float(1e-7)), Scalar::Float(1e-7));
        assert_eq!(Scalar::parse_token(&format_float(1e300)), Scalar::Float(1e300));
    }

    #[test]
    fn split_command_keeps_flags() {
        let toks: Vec<String> = ["./train", "--fast", "lr=1", "seed=1,2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let (cmd, ov) = split_command(&toks);
        assert_eq!(cmd, vec!["./train", "--fast"]);
        assert_eq!(ov, vec!["lr=1", "seed=1,2"]);
    }

    fn key() -> impl Strategy<Value = String> {
        "[a-z_][a-z0-9_]{0,6}"
    }

    fn scalar() -> impl Strategy<Value = Scalar> {
        prop_oneof![
            Just(Scalar::Null),
            any::<bool>().prop_map(Scalar::Bool),
            any::<i64>().prop_map(Scalar::Int),
            (-1e12f64..1e12).prop_map(Scalar::Float),
            "[ -~]{0,12}".prop_map(Scalar::Text),
        ]
    }

    fn node() -> impl Strategy<Value = Node> {
        let leaf = scalar().prop_map(Node::Scalar);
        leaf.prop_recursive(3, 24, 4, |inner| {
            prop::collection::vec((key(), inner), 1..4).prop_map(|kv| {
                Node::Map(kv.into_iter().collect::<ConfigMap>())
            })
        })
    }

    fn tree() -> impl Strategy<Value = ConfigTree> {
        prop::collection::vec((key(), node()), 0..5).prop_map(|kv| ConfigTree {
            root: kv.into_iter().collect(),
        })
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(t in tree()) {
            let back = ConfigTree::unflatten(t.flatten()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn yaml_roundtrip(t in tree()) {
            let text = t.to_yaml_string();
            let back = ConfigTree::from_yaml_str(&text, "rt").unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn token_roundtrip(s in scalar()) {
            prop_assume!(s != Scalar::Null);
            prop_assume!(!matches!(&s, Scalar::Text(t) if t.contains('\'') && t.contains('"')));
            prop_assert_eq!(Scalar::parse_token(&s.to_token()), s);
        }

        #[test]
        fn row_major_order(a in 1usize..4, b in 1usize..4, c in 1usize..4) {
            let mk = |name: &str, n: usize| OverrideSpec {
                path: name.to_string(),
                values: (0..n as i64).map(Scalar::Int).collect(),
            };
            let specs = vec![mk("a", a), mk("b", b), mk("c", c)];
            let plan = expand_plan(&ConfigTree::new(), &specs);
            prop_assert_eq!(plan.len(), a * b * c);
            for (i, run) in plan.runs.iter().enumerate() {
                let want = [(i / (b * c)) as i64, ((i / c) % b) as i64, (i % c) as i64];
                for (k, w) in ["a", "b", "c"].iter().zip(want) {
                    prop_assert_eq!(run.config.get_scalar(k), Some(&Scalar::Int(w)));
                }
            }
            for i in 0..plan.len() {
                for j in i + 1..plan.len() {
                    prop_assert_ne!(&plan.runs[i].config, &plan.runs[j].config);
                }
            }
        }
    }
}
