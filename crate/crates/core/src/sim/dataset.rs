use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::checkpoint::Normalization;
use crate::diffusion::sampler::anchor_seed;
use crate::diffusion::train::label_normalization;
use crate::scene::{encode_condition, ConditionLayout, ConditionVector, HistoryBuffer};
use crate::traj::{EgoStatus, Trajectory, CANONICAL_DT, DEFAULT_WHEELBASE};

use super::scenario::{generate_scenario_with, ExpertConfig, Scenario, ScenarioKind, DEFAULT_DURATION};
use super::SimError;

pub const DATASET_MAGIC: &[u8; 8] = b"DPLNDS01";

pub type Sample = (ConditionVector<f64>, Trajectory<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub kinds: Vec<ScenarioKind>,
    /// Every `stride`-th tick of a scenario becomes a sample.
    pub stride: usize,
    pub duration: f64,
    pub layout: ConditionLayout,
    /// Probability that a sample is encoded with an empty plan history.
    pub history_dropout: f64,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            kinds: ScenarioKind::ALL.to_vec(),
            stride: 2,
            duration: DEFAULT_DURATION,
            layout: ConditionLayout::default(),
            history_dropout: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub layout: ConditionLayout,
    pub n_scenarios: usize,
    pub seed: u64,
    pub stride: usize,
    pub history_dropout: f64,
    pub records: usize,
    pub cond_len: usize,
    pub label_len: usize,
    pub label_dt: f64,
    pub normalization: Normalization<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

/// Seed of the `i`-th scenario of a dataset or benchmark.
pub fn scenario_seed(seed: u64, i: usize) -> u64 {
    anchor_seed(seed ^ 0x5CE7_A210, i)
}

/// The `n` scenarios used for `(n, seed)`, kinds cycling through `kinds`.
pub fn scenario_set(n: usize, seed: u64, kinds: &[ScenarioKind], duration: f64) -> Result<Vec<Scenario>, SimError> {
    if kinds.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    (0..n)
        .into_par_iter()
        .map(|i| generate_scenario_with(scenario_seed(seed, i), kinds[i % kinds.len()], duration, ExpertConfig::default()))
        .collect()
}

/// Conditions along the expert rollout, one per tick, with expert futures
/// as the plan history.
pub fn expert_conditions(sc: &Scenario, layout: &ConditionLayout) -> Result<Vec<(ConditionVector<f64>, EgoStatus<f64>)>, SimError> {
    expert_conditions_with(sc, layout, |_| false)
}

/// Like [`expert_conditions`], but ticks where `drop_history` holds are
/// encoded with an empty history.
pub fn expert_conditions_with(
    sc: &Scenario,
    layout: &ConditionLayout,
    mut drop_history: impl FnMut(usize) -> bool,
) -> Result<Vec<(ConditionVector<f64>, EgoStatus<f64>)>, SimError> {
    let empty = HistoryBuffer::new(layout.history);
    let mut history = HistoryBuffer::new(layout.history);
    let mut s = 0.0;
    let mut out = Vec::with_capacity(sc.n_ticks());
    for i in 0..sc.n_ticks() {
        let state = sc.expert[i];
        let ego = state.ego_status();
        s = sc.arc_length(state.position(), Some(s));
        let t = Scenario::tick_time(i);
        let scene = sc.scene_at(t, s);
        let h = if drop_history(i) { &empty } else { &history };
        out.push((encode_condition(&scene, &ego, h, layout), ego));
        history.push(t, sc.expert_future(i), &ego, DEFAULT_WHEELBASE)?;
    }
    Ok(out)
}

/// `(condition, ego-frame expert future)` pairs for the ticks of one scenario
/// congruent to `offset` modulo `stride`.
pub fn scenario_samples(sc: &Scenario, layout: &ConditionLayout, stride: usize, offset: usize) -> Result<Vec<Sample>, SimError> {
    samples_from(sc, expert_conditions(sc, layout)?, stride, offset)
}

/// [`scenario_samples`] with the history of each tick dropped with
/// probability `opts.history_dropout`.
pub fn scenario_samples_with(sc: &Scenario, opts: &DatasetOptions, offset: usize) -> Result<Vec<Sample>, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(anchor_seed(sc.seed, HISTORY_DROPOUT_STREAM));
    let p = opts.history_dropout.clamp(0.0, 1.0);
    let conds = expert_conditions_with(sc, &opts.layout, |_| rng.random_bool(p))?;
    samples_from(sc, conds, opts.stride, offset)
}

const HISTORY_DROPOUT_STREAM: usize = 0xD0;

fn samples_from(
    sc: &Scenario,
    conds: Vec<(ConditionVector<f64>, EgoStatus<f64>)>,
    stride: usize,
    offset: usize,
) -> Result<Vec<Sample>, SimError> {
    let stride = stride.max(1);
    Ok(conds
        .into_iter()
        .enumerate()
        .filter(|(i, _)| i % stride == offset % stride)
        .map(|(i, (cond, ego))| (cond, sc.expert_future(i).to_local(&ego.pose())))
        .collect())
}

pub fn build_dataset(n: usize, seed: u64) -> Result<Dataset, SimError> {
    build_dataset_with(n, seed, &DatasetOptions::default())
}

pub fn build_dataset_with(n: usize, seed: u64, opts: &DatasetOptions) -> Result<Dataset, SimError> {
    if n == 0 {
        return Err(SimError::EmptyDataset);
    }
    let scenarios = scenario_set(n, seed, &opts.kinds, opts.duration)?;
    let per: Vec<Vec<Sample>> = scenarios
        .par_iter()
        .enumerate()
        .map(|(i, sc)| scenario_samples_with(sc, opts, i))
        .collect::<Result<_, _>>()?;
    let mut samples: Vec<Sample> = per.into_iter().flatten().collect();
    samples.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    if samples.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let labels: Vec<Vec<f64>> = samples.iter().map(|(_, t)| t.points.iter().flat_map(|w| [w.x, w.y]).collect()).collect();
    let header = DatasetHeader {
        layout: opts.layout,
        n_scenarios: n,
        seed,
        stride: opts.stride,
        history_dropout: opts.history_dropout,
        records: samples.len(),
        cond_len: opts.layout.len(),
        label_len: labels[0].len(),
        label_dt: CANONICAL_DT,
        normalization: label_normalization(&labels),
    };
    Ok(Dataset { header, samples })
}

impl Dataset {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), SimError> {
        let header = serde_json::to_vec(&self.header).map_err(|e| SimError::Io(e.to_string()))?;
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        for (cond, label) in &self.samples {
            let n = cond.len() + 2 * label.len();
            w.write_u32::<LittleEndian>(n as u32)?;
            for &v in cond.as_slice() {
                w.write_f64::<LittleEndian>(v)?;
            }
            for p in &label.points {
                w.write_f64::<LittleEndian>(p.x)?;
                w.write_f64::<LittleEndian>(p.y)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, SimError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(SimError::Format("bad dataset magic".into()));
        }
        let len = r.read_u32::<LittleEndian>()? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let header: DatasetHeader = serde_json::from_slice(&buf).map_err(|e| SimError::Format(e.to_string()))?;
        let expected = header.cond_len + header.label_len;
        let mut samples = Vec::with_capacity(header.records);
        for i in 0..header.records {
            let n = r.read_u32::<LittleEndian>()? as usize;
            if n != expected {
                return Err(SimError::Format(format!("record {i} has {n} values, expected {expected}")));
            }
            let mut vals = vec![0.0; n];
            r.read_f64_into::<LittleEndian>(&mut vals)?;
            let label: Vec<[f64; 2]> = vals[header.cond_len..].chunks(2).map(|c| [c[0], c[1]]).collect();
            samples.push((ConditionVector(vals[..header.cond_len].to_vec()), Trajectory::from_xy(&label, header.label_dt)));
        }
        Ok(Dataset { header, samples })
    }

    pub fn save(&self, path: &Path) -> Result<(), SimError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}
