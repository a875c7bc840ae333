//! Batch subcommands: run a script, replay a record, train a monitor model.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use feeding_core::bridge::headless::record_scenario;
use feeding_core::bridge::{replay, run_headless, CommandScript, HeadlessRun, ReplayReport, SessionRecord};
use feeding_core::monitor::{train_from_sequences, FeatureSequence, NominalModel, TrainConfig};
use feeding_core::scenario::Scenario;
use feeding_core::task::Subtask;

/// Suffix of the feature file written next to a session record.
pub const FEATURES_SUFFIX: &str = ".features.json";

/// Loads a scenario file, or the standard layout when none is given.
pub fn load_scenario(path: Option<&Path>, seed: Option<u64>) -> Result<Scenario> {
    let s = match path {
        Some(p) => Scenario::load(p)?,
        None => Scenario::standard(),
    };
    Ok(match seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

pub fn features_path(record: &Path) -> PathBuf {
    let mut s = record.as_os_str().to_owned();
    s.push(FEATURES_SUFFIX);
    PathBuf::from(s)
}

/// Runs a script and writes the record plus its feature sequences.
pub fn run(scenario: &Scenario, script: &Path, out: Option<&Path>) -> Result<HeadlessRun> {
    let script = CommandScript::load(script)?;
    let run = run_headless(scenario, &script)?;
    if let Some(out) = out {
        run.record.save(out).with_context(|| format!("writing {}", out.display()))?;
        let features = serde_json::to_string(&run.features)?;
        let fp = features_path(out);
        std::fs::write(&fp, features).with_context(|| format!("writing {}", fp.display()))?;
    }
    Ok(run)
}

/// Replays a record against `scenario`, or the scenario file it names.
pub fn replay_record(record: &Path, scenario: Option<&Path>) -> Result<ReplayReport> {
    let rec = SessionRecord::load(record).with_context(|| format!("reading {}", record.display()))?;
    let sc = match scenario {
        Some(p) => Scenario::load(p)?,
        None => record_scenario(&rec)?,
    };
    Ok(replay(&rec, &sc)?)
}

pub struct Training {
    pub model: NominalModel,
    /// Sequences of the subtask found in the data.
    pub found: usize,
    /// Of those, the ones usable as nominal data.
    pub used: usize,
}

/// Reads every feature file under `dir`.
pub fn read_features(dir: &Path) -> Result<Vec<FeatureSequence>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(FEATURES_SUFFIX))
        .collect();
    files.sort();
    let mut out = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).with_context(|| format!("reading {}", f.display()))?;
        let seqs: Vec<FeatureSequence> = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        out.extend(seqs);
    }
    Ok(out)
}

/// Trains a nominal model for `subtask` from feature files under `dir`.
/// Failed, aborted and failure-labelled executions are left out.
pub fn train(dir: &Path, subtask: &str) -> Result<Training> {
    let Some(subtask) = Subtask::parse(subtask) else {
        bail!("unknown subtask {subtask:?}; expected scoop, wipe or deliver");
    };
    let seqs = read_features(dir)?;
    let found = seqs.iter().filter(|s| s.subtask == subtask).count();
    let used = seqs.iter().filter(|s| s.subtask == subtask && s.is_nominal()).count();
    let model = train_from_sequences(&seqs, subtask, &TrainConfig::default())?;
    Ok(Training { model, found, used })
}
