//! Run configuration: one TOML document, overridable key by key from the
//! command line, echoed in full into every manifest.

use std::path::{Path, PathBuf};

use forge_core::diffusion::{ModelConfig, TrainConfig};
use forge_core::sim::{AutKind, SimConfig};
use forge_strategist::{EndpointConfig, RenderOptions, RuleConfig, VlmOptions};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scenario_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { scenario_dir: None, checkpoint: None, out_dir: PathBuf::from("out") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// A map template name, or `all` to cycle through every template.
    pub template: String,
    pub agents: usize,
    /// Seed of the first scenario; scenario `i` uses `seed + i`.
    pub seed: u64,
    pub count: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { template: "all".into(), agents: 8, seed: 0, count: 200 }
    }
}

/// Overrides applied to every plan, whatever produced it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceOverrides {
    pub lambda: Option<f64>,
    pub n_guide: Option<usize>,
    pub k_guide_start: Option<usize>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategistMode {
    #[default]
    RuleBased,
    Vlm,
    Replay,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategistConfig {
    pub mode: StrategistMode,
    /// Replay source: a transcript file, or a directory of `<scenario id>.json`.
    pub transcript: Option<PathBuf>,
    pub rules: RuleConfig,
    pub endpoint: EndpointConfig,
    pub vlm: VlmOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    pub auts: Vec<AutKind>,
    /// Worker threads; 0 uses every core.
    pub parallelism: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { seeds: (0..5).collect(), auts: vec![AutKind::Idm], parallelism: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub guidance: GuidanceOverrides,
    pub strategist: StrategistConfig,
    pub sim: SimConfig,
    pub eval: EvalConfig,
    pub render: RenderOptions,
}

impl RunConfig {
    /// Defaults, then `file`, then each `key.path=value` override in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let defaults = serde_json::to_value(RunConfig::default()).expect("config serializes");
        let mut doc = defaults.clone();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("config file {}: {e}", path.display())))?;
            let user: toml::Value =
                toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let user = serde_json::to_value(user).expect("toml converts to json");
            check_known(&user, &defaults, "")?;
            merge(&mut doc, user);
        }
        for o in overrides {
            let (key, raw) =
                o.split_once('=').ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            set_path(&mut doc, key.trim(), parse_literal(raw.trim()))?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn check(&self) -> Result<()> {
        if self.eval.seeds.is_empty() {
            return Err(CliError::Config("eval.seeds must not be empty".into()));
        }
        if self.eval.auts.is_empty() {
            return Err(CliError::Config("eval.auts must not be empty".into()));
        }
        self.sim.check()?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes as toml")
    }
}

/// Every key in `user` must exist in `known`; values inside arrays are not
/// checked.
fn check_known(user: &Value, known: &Value, at: &str) -> Result<()> {
    let (Value::Object(u), Value::Object(k)) = (user, known) else { return Ok(()) };
    for (key, v) in u {
        let path = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
        match k.get(key) {
            None => return Err(CliError::Config(format!("unknown config key `{path}`"))),
            Some(kv) => check_known(v, kv, &path)?,
        }
    }
    Ok(())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// A TOML literal (`3`, `1e-4`, `true`, `"x"`, `[1, 2]`), else a bare string.
fn parse_literal(raw: &str) -> Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => serde_json::to_value(t.remove("v").expect("key present")).expect("toml converts"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = cur else {
            return Err(CliError::Config(format!("`{}` is not a table", parts[..i].join("."))));
        };
        cur = map.get_mut(*part).ok_or_else(|| CliError::Config(format!("unknown config key `{key}`")))?;
    }
    *cur = value;
    Ok(())
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, T: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub config: &'a RunConfig,
    pub outputs: T,
}

pub fn write_manifest<T: Serialize>(dir: &Path, command: &str, cfg: &RunConfig, outputs: T) -> Result<()> {
    let m = Manifest { command, version: env!("CARGO_PKG_VERSION"), config: cfg, outputs };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    let path = dir.join("manifest.json");
    std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_are_typed_and_checked() {
        let cfg = RunConfig::resolve(
            None,
            &["train.epochs=3".into(), "sim.aut.kind=\"cautious\"".into(), "eval.seeds=[7, 8]".into(), "data.template=curve".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.sim.aut.kind, AutKind::Cautious);
        assert_eq!(cfg.eval.seeds, vec![7, 8]);
        assert_eq!(cfg.data.template, "curve");
        assert!(matches!(RunConfig::resolve(None, &["train.epocs=3".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::resolve(None, &["train.epochs=many".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::resolve(None, &["eval.seeds=[]".into()]), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::resolve(None, &["guidance.lambda=2.5".into()]), Ok(c) if c.guidance.lambda == Some(2.5)));
    }

    #[test]
    fn file_keys_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("good.toml");
        std::fs::write(&good, "[train]\nepochs = 2\n[sim.aut]\nkind = \"idm\"\n").unwrap();
        let cfg = RunConfig::resolve(Some(&good), &["train.epochs=4".into()]).unwrap();
        assert_eq!((cfg.train.epochs, cfg.sim.aut.kind, cfg.train.batch_size), (4, AutKind::Idm, 6));
        let bad = dir.path().join("bad.toml");
        std::fs::write(&bad, "[sim]\nt_simm = 3\n").unwrap();
        let err = RunConfig::resolve(Some(&bad), &[]).unwrap_err();
        assert!(err.to_string().contains("sim.t_simm"), "{err}");
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
