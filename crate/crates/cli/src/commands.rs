use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use diffplan::comfort::{comfort_index, ComfortReport, ComfortWeights};
use diffplan::diffusion::{train as train_planner, PlannerCheckpoint, SamplerConfig, ScheduleConfig, TrainConfig};
use diffplan::scene::SceneContext;
use diffplan::scorer::{score_with, ScorerConfig, ScorerWeights};
use diffplan::sim::dataset::build_dataset_with;
use diffplan::sim::{
    ablate_anchors, ablation_csv, evaluate, run_benchmark, scenario_set, CandidatePlanner, ClosedLoopConfig, Dataset,
    DatasetOptions, DiffusionCandidates, EpisodeLog, EvalMetrics, ExpertPlayback, RegulatorMode, ScenarioKind, Selection,
    Standstill,
};
use diffplan::traj::{EgoStatus, Trajectory};

use crate::{
    parse_kinds, AblateArgs, ComfortArgs, EvalArgs, GenDataArgs, PlannerKind, ProviderArgs, ProviderKind, ReportArgs,
    ScoreArgs, SelectionKind, SimulateArgs, TrainArgs,
};

const EPISODE_PREFIX: &str = "episode_";
const RUN_SUMMARY: &str = "run.json";
const L2_CONVENTION: &str = "plan waypoint vs scripted-expert position at the same absolute time, at 1, 2 and 3 s";

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sampler(ddim_steps: usize) -> SamplerConfig {
    if ddim_steps == 0 {
        SamplerConfig::Ddpm
    } else {
        SamplerConfig::Ddim { steps: ddim_steps }
    }
}

fn regulator(args: &ProviderArgs) -> Result<RegulatorMode> {
    Ok(match args.provider {
        ProviderKind::Off => RegulatorMode::Off,
        ProviderKind::Mock => RegulatorMode::Mock,
        ProviderKind::Http => {
            let Some(url) = args.provider_url.clone() else {
                bail!("--provider http needs --provider-url");
            };
            let template = match &args.prompt_template {
                Some(p) => Some(fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            RegulatorMode::Http { url, timeout_ms: args.provider_timeout_ms, template }
        }
    })
}

fn load_planner(path: &Path, anchors: usize, ddim_steps: usize) -> Result<DiffusionCandidates> {
    let ck = PlannerCheckpoint::<f64>::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(DiffusionCandidates::from_checkpoint(&ck, anchors, sampler(ddim_steps))?)
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let opts = DatasetOptions { stride: a.stride, duration: a.duration, ..DatasetOptions::default() };
    let ds = build_dataset_with(a.n, a.seed, &opts)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ds.save(&a.out)?;
    println!("wrote {} samples from {} scenarios to {}", ds.header.records, a.n, a.out.display());
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let ds = Dataset::load(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        lr: a.lr,
        seed: a.seed,
        batch_size: a.batch_size,
        schedule: ScheduleConfig::with_steps(a.steps),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let ck = train_planner(&ds.samples, &ds.header.layout, &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    ck.save(&a.out)?;
    let curve = &ck.metadata.loss_curve;
    println!(
        "trained {} epochs on {} samples in {:.1} s: loss {:.5} -> {:.5}, wrote {}",
        curve.len(),
        ds.samples.len(),
        start.elapsed().as_secs_f64(),
        curve.first().copied().unwrap_or(f64::NAN),
        curve.last().copied().unwrap_or(f64::NAN),
        a.out.display()
    );
    Ok(())
}

fn episode_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|x| x == "json")
                && p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(EPISODE_PREFIX))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_episodes(dir: &Path) -> Result<Vec<EpisodeLog>> {
    let files = episode_files(dir)?;
    if files.is_empty() {
        bail!("no episode logs in {}", dir.display());
    }
    files.iter().map(|p| read_json(p)).collect()
}

#[derive(Serialize, serde::Deserialize)]
struct RunSummary {
    episodes: usize,
    ticks: usize,
    hard_collisions: usize,
    queries: usize,
    seconds: f64,
    fps: f64,
}

pub fn simulate(a: &SimulateArgs) -> Result<()> {
    let kinds = parse_kinds(&a.scenario_kind)?;
    let scenarios = scenario_set(a.count, a.seed, &kinds, a.duration)?;
    let planner: Box<dyn CandidatePlanner> = match a.planner {
        PlannerKind::Diffusion => {
            let Some(path) = &a.model.checkpoint else {
                bail!("--planner diffusion needs --checkpoint");
            };
            Box::new(load_planner(path, a.model.anchors, a.model.ddim_steps)?)
        }
        PlannerKind::Expert => Box::new(ExpertPlayback),
        PlannerKind::Standstill => Box::new(Standstill),
    };
    let config = ClosedLoopConfig {
        seed: a.seed,
        selection: match a.selection {
            SelectionKind::Scorer => Selection::Scorer,
            SelectionKind::Random => Selection::Random,
        },
        regulator: regulator(&a.provider)?,
        ..ClosedLoopConfig::default()
    };

    let start = Instant::now();
    let logs = run_benchmark(&scenarios, planner.as_ref(), &config)?;
    let seconds = start.elapsed().as_secs_f64();

    fs::create_dir_all(&a.out_dir)?;
    for stale in episode_files(&a.out_dir)? {
        fs::remove_file(stale)?;
    }
    for (i, log) in logs.iter().enumerate() {
        let path = a.out_dir.join(format!("{EPISODE_PREFIX}{i:04}.json"));
        fs::write(&path, serde_json::to_vec(log)?).with_context(|| format!("writing {}", path.display()))?;
    }
    let ticks: usize = logs.iter().map(|l| l.ticks.len()).sum();
    let summary = RunSummary {
        episodes: logs.len(),
        ticks,
        hard_collisions: logs.iter().filter(|l| l.hard_collision).count(),
        queries: logs.iter().map(|l| l.queries).sum(),
        seconds,
        fps: ticks as f64 / seconds.max(1e-9),
    };
    write_json(&a.out_dir.join(RUN_SUMMARY), &summary)?;
    println!(
        "{} episodes, {} ticks, {} hard collisions, {} regulator queries, {:.1} ticks/s -> {}",
        summary.episodes,
        summary.ticks,
        summary.hard_collisions,
        summary.queries,
        summary.fps,
        a.out_dir.display()
    );
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let metrics = evaluate(&load_episodes(&a.episodes)?)?;
    let csv = metrics.to_csv();
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let base = load_planner(&a.checkpoint, 1, a.ddim_steps)?;
    let scenarios = scenario_set(a.scenarios, a.seed, &ScenarioKind::ALL, a.duration)?;
    let config = ClosedLoopConfig { seed: a.seed, regulator: regulator(&a.provider)?, ..ClosedLoopConfig::default() };
    let rows = ablate_anchors(&a.anchors, &scenarios, &base, &config)?;
    let csv = ablation_csv(&rows);
    write_text(&a.out, &csv)?;
    print!("{csv}");
    Ok(())
}

#[derive(Serialize)]
struct KindSummary {
    kind: ScenarioKind,
    episodes: usize,
    l2_avg: f64,
    collision_avg: f64,
    conservative_directives: usize,
    comfort: ComfortReport<f64>,
}

#[derive(Serialize)]
struct Report {
    l2_convention: &'static str,
    comfort_weights: ComfortWeights<f64>,
    metrics: EvalMetrics,
    per_kind: Vec<KindSummary>,
}

fn comfort_rows(label: &str, report: &ComfortReport<f64>) -> String {
    let mut out = String::new();
    for h in &report.horizons {
        out.push_str(&format!("{label},{},{:.6},{:.6},{:.4}\n", h.horizon, h.c, h.c_n, h.c_p));
    }
    out
}

pub fn report(a: &ReportArgs) -> Result<()> {
    let logs = load_episodes(&a.episodes)?;
    let mut metrics = evaluate(&logs)?;
    let summary = a.episodes.join(RUN_SUMMARY);
    if summary.exists() {
        metrics.fps = Some(read_json::<RunSummary>(&summary)?.fps);
    }
    let mut by_kind: BTreeMap<ScenarioKind, Vec<EpisodeLog>> = BTreeMap::new();
    for log in logs {
        by_kind.entry(log.kind).or_default().push(log);
    }
    let mut per_kind = Vec::new();
    for (kind, logs) in &by_kind {
        let m = evaluate(logs)?;
        per_kind.push(KindSummary {
            kind: *kind,
            episodes: logs.len(),
            l2_avg: m.l2_avg,
            collision_avg: m.collision_avg,
            conservative_directives: logs.iter().map(|l| l.conservative_directives()).sum(),
            comfort: m.comfort,
        });
    }

    let csv_dir = a.csv_dir.clone().unwrap_or_else(|| a.out.parent().map(Path::to_path_buf).unwrap_or_default());
    let mut by_kind_csv = String::from("kind,horizon,C,C_n,C_p\n");
    for k in &per_kind {
        by_kind_csv.push_str(&comfort_rows(k.kind.as_str(), &k.comfort));
    }
    by_kind_csv.push_str(&comfort_rows("all", &metrics.comfort));
    write_text(&csv_dir.join("metrics.csv"), &metrics.to_csv())?;
    write_text(&csv_dir.join("comfort.csv"), &metrics.comfort.to_csv())?;
    write_text(&csv_dir.join("comfort_by_kind.csv"), &by_kind_csv)?;

    let report = Report { l2_convention: L2_CONVENTION, comfort_weights: ComfortWeights::default(), metrics, per_kind };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    write_json(&a.out, &report)?;
    println!("wrote {} and CSV tables in {}", a.out.display(), csv_dir.display());
    Ok(())
}

/// Ego at the origin heading +x, moving at the speed of the first segment.
fn default_ego(traj: &Trajectory<f64>) -> EgoStatus<f64> {
    let speed = traj.points.first().map_or(0.0, |p| p.x.hypot(p.y) / p.t.max(1e-9));
    EgoStatus::new([0.0, 0.0], 0.0, speed, 0.0)
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let traj: Trajectory<f64> = read_json(&a.trajectory)?;
    let scene: SceneContext<f64> = read_json(&a.scene)?;
    let weights = match &a.weights {
        Some(p) => read_json::<ScorerWeights<f64>>(p)?,
        None => ScorerWeights::default(),
    };
    let ego = match &a.ego {
        Some(p) => read_json(p)?,
        None => default_ego(&traj),
    };
    let costs = score_with(&traj, &scene, &ego, &weights, &ScorerConfig::default())?;
    println!("{}", serde_json::to_string_pretty(&costs)?);
    Ok(())
}

pub fn comfort(a: &ComfortArgs) -> Result<()> {
    let pred: Trajectory<f64> = read_json(&a.pred)?;
    let truth: Trajectory<f64> = read_json(&a.truth)?;
    let weights = match &a.weights {
        Some(p) => read_json::<ComfortWeights<f64>>(p)?,
        None => ComfortWeights::default(),
    };
    let ego = match &a.ego {
        Some(p) => read_json(p)?,
        None => default_ego(&truth),
    };
    let report = comfort_index(&pred, &truth, &ego, &weights, a.alpha)?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}
