use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use forge_core::diffusion::{load_checkpoint, save_checkpoint, scenario_samples, train, DenoiserModel, SceneSamples};
use forge_core::guidance::{plan_to_string, GuidancePlan};
use forge_core::scenario::{build_synthetic_scenario, load_scenario, save_scenario, MapTemplate};
use forge_core::sim::{build_aut, run_closed_loop, sampler_settings, AutKind, Generator, SimLog};
use forge_core::Scenario;
use forge_strategist::render::render_bev_with;
use forge_strategist::{rasterize, CoTTranscript, Scene, StrategistError};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{write_manifest, RunConfig};
use crate::error::{CliError, Result};
use crate::pipeline::{self, comparison_svg, propose, EvalReport};

#[derive(Debug, Parser)]
#[command(name = "forge", version, about = "Safety-critical scenario generation with guided diffusion")]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Print the resolved configuration and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic scenarios and a dataset manifest.
    GenData(GenDataArgs),
    /// Train the diffusion model on a generated dataset.
    Train(TrainArgs),
    /// Propose a plan for one scenario and run it against the AUT.
    Generate(GenerateArgs),
    /// One closed-loop run, guided when a plan is given.
    Simulate(SimulateArgs),
    /// Original versus generated metrics over a scenario set.
    Evaluate(EvaluateArgs),
    /// Bird's-eye view of a scenario or of simulation logs.
    Render(RenderArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Map template, or `all` to cycle through every template.
    #[arg(long)]
    pub template: Option<String>,
    #[arg(long)]
    pub agents: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by `gen-data`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// rule_based, vlm or replay.
    #[arg(long)]
    pub strategist: Option<String>,
    #[arg(long)]
    pub transcript: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub aut: Option<AutKind>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub aut: Option<AutKind>,
    /// Sample adversarial agents without guidance.
    #[arg(long)]
    pub unguided: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<u64>,
    /// Comma-separated AUTs.
    #[arg(long, value_delimiter = ',')]
    pub aut: Vec<AutKind>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub scenario: PathBuf,
    /// Simulation log to draw instead of the scenario's own log.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Second log drawn beside `--log`.
    #[arg(long, requires = "log")]
    pub compare: Option<PathBuf>,
    /// Output file; a `.png` extension rasterizes.
    #[arg(long)]
    pub out: PathBuf,
}

/// Folds the command's flags into `cfg` so the manifest records what ran.
pub fn apply_flags(cfg: &mut RunConfig, cmd: &Command) {
    fn set<T: Clone>(slot: &mut T, v: &Option<T>) {
        if let Some(v) = v {
            *slot = v.clone();
        }
    }
    match cmd {
        Command::GenData(a) => {
            set(&mut cfg.data.template, &a.template);
            set(&mut cfg.data.agents, &a.agents);
            set(&mut cfg.data.seed, &a.seed);
            set(&mut cfg.data.count, &a.count);
            set(&mut cfg.paths.out_dir, &a.out);
        }
        Command::Train(a) => {
            if a.data.is_some() {
                cfg.paths.scenario_dir = a.data.clone();
            }
            set(&mut cfg.paths.out_dir, &a.out);
            set(&mut cfg.train.epochs, &a.epochs);
            set(&mut cfg.train.seed, &a.seed);
            set(&mut cfg.train.lr, &a.lr);
        }
        Command::Generate(a) => {
            if a.checkpoint.is_some() {
                cfg.paths.checkpoint = a.checkpoint.clone();
            }
            if a.transcript.is_some() {
                cfg.strategist.transcript = a.transcript.clone();
            }
            set(&mut cfg.paths.out_dir, &a.out);
            set(&mut cfg.sim.seed, &a.seed);
            set(&mut cfg.sim.aut.kind, &a.aut);
        }
        Command::Simulate(a) => {
            if a.checkpoint.is_some() {
                cfg.paths.checkpoint = a.checkpoint.clone();
            }
            set(&mut cfg.paths.out_dir, &a.out);
            set(&mut cfg.sim.seed, &a.seed);
            set(&mut cfg.sim.aut.kind, &a.aut);
            cfg.sim.unguided |= a.unguided;
        }
        Command::Evaluate(a) => {
            if a.scenarios.is_some() {
                cfg.paths.scenario_dir = a.scenarios.clone();
            }
            if a.checkpoint.is_some() {
                cfg.paths.checkpoint = a.checkpoint.clone();
            }
            set(&mut cfg.paths.out_dir, &a.out);
            if !a.seeds.is_empty() {
                cfg.eval.seeds = a.seeds.clone();
            }
            if !a.aut.is_empty() {
                cfg.eval.auts = a.aut.clone();
            }
            set(&mut cfg.eval.parallelism, &a.jobs);
        }
        Command::Render(_) => {}
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::resolve(cli.config.as_deref(), &cli.overrides)?;
    apply_flags(&mut cfg, &cli.command);
    if let Command::Generate(a) = &cli.command {
        if let Some(mode) = &a.strategist {
            cfg.strategist.mode = serde_json::from_value(serde_json::Value::String(mode.clone()))
                .map_err(|_| CliError::Config(format!("unknown strategist mode `{mode}`")))?;
        }
    }
    cfg.check()?;
    for p in [&cfg.paths.scenario_dir, &cfg.paths.checkpoint, &cfg.strategist.transcript].into_iter().flatten() {
        exists(p)?;
    }
    match &cli.command {
        Command::Generate(GenerateArgs { scenario, .. }) | Command::Simulate(SimulateArgs { scenario, .. }) => exists(scenario)?,
        Command::Render(a) => {
            exists(&a.scenario)?;
            for p in [&a.log, &a.compare].into_iter().flatten() {
                exists(p)?;
            }
        }
        _ => {}
    }
    if cli.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    match &cli.command {
        Command::GenData(_) => gen_data(&cfg),
        Command::Train(_) => train_cmd(&cfg),
        Command::Generate(a) => generate(&cfg, &a.scenario),
        Command::Simulate(a) => simulate(&cfg, &a.scenario, a.plan.as_deref()),
        Command::Evaluate(_) => evaluate(&cfg),
        Command::Render(a) => render(&cfg, a),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    // Fail on an unwritable directory before doing any work.
    let probe = dir.join(".forge-write-probe");
    std::fs::write(&probe, b"").map_err(|e| CliError::io(dir, e))?;
    std::fs::remove_file(&probe).map_err(|e| CliError::io(&probe, e))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub file: String,
    pub id: String,
    pub template: MapTemplate,
    pub seed: u64,
}

pub fn template_for(name: &str, i: usize) -> Result<MapTemplate> {
    if name == "all" {
        Ok(MapTemplate::ALL[i % MapTemplate::ALL.len()])
    } else {
        name.parse().map_err(|e: forge_core::Error| CliError::Config(e.to_string()))
    }
}

fn gen_data(cfg: &RunConfig) -> Result<()> {
    let d = &cfg.data;
    let out = &cfg.paths.out_dir;
    template_for(&d.template, 0)?;
    ensure_dir(out)?;
    let entries: Vec<DatasetEntry> = (0..d.count)
        .into_par_iter()
        .map(|i| {
            let template = template_for(&d.template, i)?;
            let seed = d.seed + i as u64;
            let s = build_synthetic_scenario(template, d.agents, seed)?;
            let file = format!("scenario_{i:04}.json");
            let path = out.join(&file);
            save_scenario(&s, &path).map_err(|e| CliError::io(&path, e))?;
            Ok(DatasetEntry { file, id: s.id, template, seed })
        })
        .collect::<Result<_>>()?;
    write_manifest(out, "gen-data", cfg, &entries)?;
    info!("wrote {} scenarios to {}", entries.len(), out.display());
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<Vec<Scenario>> {
    let path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let entries: Vec<DatasetEntry> = serde_json::from_value(v["outputs"].clone())
        .map_err(|e| CliError::Config(format!("{}: not a dataset manifest: {e}", path.display())))?;
    if entries.is_empty() {
        return Err(CliError::Config(format!("{}: dataset is empty", path.display())));
    }
    entries.par_iter().map(|e| Ok(load_scenario(dir.join(&e.file))?)).collect()
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a PathBuf> {
    let p = p.as_ref().ok_or_else(|| CliError::Config(format!("{what} is required")))?;
    exists(p)?;
    Ok(p)
}

fn exists(p: &Path) -> Result<()> {
    if p.exists() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{} does not exist", p.display())))
    }
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let data_dir = require(&cfg.paths.scenario_dir, "a dataset directory (--data)")?;
    let out = &cfg.paths.out_dir;
    ensure_dir(out)?;
    let scenarios = read_dataset(data_dir)?;
    let data: Vec<SceneSamples> =
        scenarios.par_iter().map(|s| scenario_samples(s, &cfg.model.scale)).collect::<forge_core::Result<_>>()?;
    let mut model = DenoiserModel::new(cfg.model.clone(), cfg.train.seed)?;
    info!("training on {} scenarios for {} epochs", data.len(), cfg.train.epochs);
    let curve = train(&mut model, &data, &cfg.train)?;
    let ckpt = out.join("model.ckpt");
    save_checkpoint(&model, &ckpt)?;
    let table = curve.to_table();
    write(&out.join("loss_curve.txt"), &table)?;
    write(&out.join("loss_curve.json"), serde_json::to_string_pretty(&curve).expect("curve serializes") + "\n")?;
    write_manifest(out, "train", cfg, serde_json::json!({ "checkpoint": "model.ckpt", "scenarios": data.len() }))?;
    print!("{table}");
    Ok(())
}

/// Checkpoint with the schedule and sampler settings it needs, for one scenario.
pub struct LoadedModel {
    pub model: DenoiserModel,
    pub schedule: forge_core::diffusion::NoiseSchedule,
}

impl LoadedModel {
    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let path = require(&cfg.paths.checkpoint, "a model checkpoint (--checkpoint)")?;
        let model = load_checkpoint(path)?;
        let schedule = model.schedule()?;
        Ok(Self { model, schedule })
    }

    pub fn generator(&self, s: &Scenario) -> Generator<'_> {
        Generator {
            model: &self.model,
            schedule: &self.schedule,
            settings: sampler_settings(s, self.model.cfg.t_fut, self.model.cfg.scale),
        }
    }
}

fn generate(cfg: &RunConfig, scenario_path: &Path) -> Result<()> {
    let out = &cfg.paths.out_dir;
    let scenario = load_scenario(scenario_path)?;
    let loaded = LoadedModel::load(cfg)?;
    ensure_dir(out)?;
    let (plan, transcript) = match propose(&scenario, cfg) {
        Ok(p) => p,
        Err(CliError::Strategist(StrategistError::Schema { issues, transcript })) => {
            transcript.save(out.join("transcript.json"))?;
            return Err(StrategistError::Schema { issues, transcript }.into());
        }
        Err(e) => return Err(e),
    };
    transcript.save(out.join("transcript.json"))?;
    write(&out.join("plan.json"), plan_to_string(&plan) + "\n")?;
    let gen = loaded.generator(&scenario);
    let (original, generated) = pipeline::run_pair(&scenario, &plan, &gen, &cfg.sim)?;
    write(&out.join("original_simlog.json"), original.to_json() + "\n")?;
    write(&out.join("simlog.json"), generated.to_json() + "\n")?;
    write(&out.join("comparison.svg"), comparison_svg(&scenario, &original, &generated, &cfg.render))?;
    let summary = pipeline::pair_summary(&original, &generated);
    write_manifest(
        out,
        "generate",
        cfg,
        serde_json::json!({
            "scenario": scenario.id,
            "plan": "plan.json",
            "transcript": "transcript.json",
            "simlog": "simlog.json",
            "original_simlog": "original_simlog.json",
            "render": "comparison.svg",
            "summary": summary,
        }),
    )?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

fn load_plan(path: &Path) -> Result<GuidancePlan> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    forge_core::guidance::parse_plan(&text)
        .map_err(|issues| CliError::Config(format!("{}: {}", path.display(), forge_core::guidance::format_issues(&issues))))
}

fn simulate(cfg: &RunConfig, scenario_path: &Path, plan_path: Option<&Path>) -> Result<()> {
    let out = &cfg.paths.out_dir;
    let scenario = load_scenario(scenario_path)?;
    let plan = plan_path.map(load_plan).transpose()?.map(|p| pipeline::apply_overrides(p, &cfg.guidance));
    let loaded = match &plan {
        Some(_) => Some(LoadedModel::load(cfg)?),
        None => None,
    };
    ensure_dir(out)?;
    let gen = loaded.as_ref().map(|l| l.generator(&scenario));
    let mut aut = build_aut(&cfg.sim.aut, &scenario);
    let log = run_closed_loop(&scenario, aut.as_mut(), plan.as_ref(), gen.as_ref(), &cfg.sim)?;
    write(&out.join("simlog.json"), log.to_json() + "\n")?;
    write(&out.join("states.tsv"), log.state_table())?;
    let summary = forge_core::sim::RunSummary::of(&log);
    write_manifest(out, "simulate", cfg, serde_json::json!({ "scenario": scenario.id, "simlog": "simlog.json", "summary": summary }))?;
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    Ok(())
}

pub fn read_scenario_dir(dir: &Path) -> Result<Vec<Scenario>> {
    if dir.join("manifest.json").exists() {
        return read_dataset(dir);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("{}: no scenario files", dir.display())));
    }
    files.iter().map(|f| Ok(load_scenario(f)?)).collect()
}

fn evaluate(cfg: &RunConfig) -> Result<()> {
    let dir = require(&cfg.paths.scenario_dir, "a scenario directory (--scenarios)")?;
    let out = &cfg.paths.out_dir;
    let scenarios = read_scenario_dir(dir)?;
    let loaded = LoadedModel::load(cfg)?;
    ensure_dir(out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.eval.parallelism)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let report: EvalReport = pool.install(|| pipeline::evaluate_suite(&scenarios, &loaded, cfg))?;
    for id in &report.no_plan {
        warn!("scenario {id}: no plan, simulated without guidance in both sets");
    }
    let table = report.table();
    write(&out.join("report.txt"), &table)?;
    write(&out.join("report.json"), report.to_json() + "\n")?;
    write_manifest(out, "evaluate", cfg, serde_json::json!({ "report": "report.json", "table": "report.txt" }))?;
    print!("{table}");
    Ok(())
}

fn render(cfg: &RunConfig, a: &RenderArgs) -> Result<()> {
    let scenario = load_scenario(&a.scenario)?;
    let svg = match (&a.log, &a.compare) {
        (None, _) => render_bev_with(&scenario, &cfg.render),
        (Some(l), None) => {
            let log = SimLog::load(l)?;
            let scene = pipeline::scene_from_log(&scenario, &log);
            forge_strategist::render_comparison(("scenario log", &Scene::from_scenario(&scenario, scenario.start_step())), ("simulated", &scene), &cfg.render)
        }
        (Some(l), Some(r)) => comparison_svg(&scenario, &SimLog::load(l)?, &SimLog::load(r)?, &cfg.render),
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    if a.out.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
        write(&a.out, rasterize(&svg)?)
    } else {
        write(&a.out, svg)
    }
}

/// Transcript for `scenario` from a replay source: the file itself, or
/// `<dir>/<scenario id>.json`.
pub fn transcript_for(source: &Path, scenario: &Scenario) -> Result<CoTTranscript> {
    let path = if source.is_dir() { source.join(format!("{}.json", scenario.id)) } else { source.to_path_buf() };
    Ok(CoTTranscript::load(&path)?)
}
