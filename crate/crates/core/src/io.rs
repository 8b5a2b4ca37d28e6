//! Run directories: per-wave artifacts, the wave chain, CSV readers and the
//! plot-ready report tables.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::GpEmulator;
use crate::implausibility::{AnalyticField, ImplausibilityMeasure, WaveChain, WaveEmulator, WaveRecord};
use crate::smc::{StopReason, TrainingRow, WaveArtifacts, WaveSink, WaveSummary};
use crate::space::ParameterSpace;

pub const CHAIN_FILE: &str = "chain.json";
pub const RUN_FILE: &str = "run.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARTICLES_FILE: &str = "particles.csv";
pub const TRAINING_FILE: &str = "training.csv";
pub const EMULATOR_FILE: &str = "emulator.bin";

pub fn wave_dir(root: &Path, wave: usize) -> PathBuf {
    root.join(format!("wave_{wave:03}"))
}

fn fmt(v: f64) -> String {
    v.to_string()
}

fn parse_field(s: &str, line: usize, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Format(format!("line {line}: bad {what} value {s:?}")))
}

pub fn write_particles_csv<W: Write>(w: W, names: &[String], rows: &[Vec<f64>]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(names)?;
    for r in rows {
        if r.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.len() });
        }
        out.write_record(r.iter().map(|v| fmt(*v)))?;
    }
    out.flush()?;
    Ok(())
}

/// Header of parameter names, then one finite row per particle.
pub fn read_particles_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(Error::Format("particles: empty column name".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row: Vec<f64> = rec.iter().map(|s| parse_field(s, i + 2, "parameter")).collect::<Result<_>>()?;
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format(format!("line {}: non-finite parameter", i + 2)));
        }
        rows.push(row);
    }
    Ok((names, rows))
}

pub fn write_training_csv<W: Write>(w: W, names: &[String], rows: &[TrainingRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = names.to_vec();
    header.extend(["raw", "output", "flagged"].map(String::from));
    out.write_record(&header)?;
    for r in rows {
        if r.theta.len() != names.len() {
            return Err(Error::DimensionMismatch { expected: names.len(), got: r.theta.len() });
        }
        let mut rec: Vec<String> = r.theta.iter().map(|v| fmt(*v)).collect();
        rec.push(fmt(r.raw));
        rec.push(fmt(r.output));
        rec.push(u8::from(r.flagged).to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_training_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<TrainingRow>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let n = header.len();
    if n < 4 || header[n - 3..] != ["raw", "output", "flagged"] {
        return Err(Error::Format("training: header must end with raw,output,flagged".into()));
    }
    let names = header[..n - 3].to_vec();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let theta: Vec<f64> = rec.iter().take(n - 3).map(|s| parse_field(s, line, "parameter")).collect::<Result<_>>()?;
        let flagged = match rec[n - 1].trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Format(format!("line {line}: flagged must be 0 or 1, got {other:?}"))),
        };
        rows.push(TrainingRow {
            theta,
            raw: parse_field(&rec[n - 3], line, "raw")?,
            output: parse_field(&rec[n - 2], line, "output")?,
            flagged,
        });
    }
    Ok((names, rows))
}

/// Where a wave's emulator comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EmulatorSource {
    /// Path relative to the directory holding the chain file.
    File { path: String },
    Analytic { field: AnalyticField },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainWave {
    pub index: usize,
    pub measure: ImplausibilityMeasure,
    pub cutoff: f64,
    pub emulator: EmulatorSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub space: ParameterSpace,
    pub waves: Vec<ChainWave>,
}

impl ChainFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let c: ChainFile = serde_json::from_str(text)?;
        for (k, w) in c.waves.iter().enumerate() {
            if w.index != k + 1 {
                return Err(Error::Format(format!("chain: wave {} listed at position {}", w.index, k + 1)));
            }
            if w.cutoff.is_nan() {
                return Err(Error::NonFinite("wave cutoff"));
            }
            if let EmulatorSource::File { path } = &w.emulator {
                let p = Path::new(path);
                if p.is_absolute() || p.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(Error::Format(format!("chain: emulator path {path:?} must stay inside the run")));
                }
            }
        }
        Ok(c)
    }

    /// Loads emulators relative to `dir`.
    pub fn into_chain(self, dir: &Path) -> Result<WaveChain> {
        let mut chain = WaveChain::new(self.space);
        for w in self.waves {
            let emulator = match w.emulator {
                EmulatorSource::File { path } => {
                    let bytes = fs::read(dir.join(&path))?;
                    WaveEmulator::Gp(Arc::new(GpEmulator::from_bytes(&bytes)?))
                }
                EmulatorSource::Analytic { field } => WaveEmulator::Analytic(field),
            };
            if let WaveEmulator::Gp(em) = &emulator {
                if em.dim() != chain.space().dim() {
                    return Err(Error::DimensionMismatch { expected: chain.space().dim(), got: em.dim() });
                }
            }
            chain.push(WaveRecord { index: w.index, emulator, measure: w.measure, cutoff: w.cutoff })?;
        }
        Ok(chain)
    }
}

/// Writes `chain.json`; `emulator_path(w)` names the file already holding
/// wave `w`'s emulator, relative to `dir`.
pub fn write_chain(dir: &Path, chain: &WaveChain, emulator_path: impl Fn(usize) -> String) -> Result<()> {
    let waves = chain
        .waves()
        .iter()
        .map(|r| ChainWave {
            index: r.index,
            measure: r.measure.clone(),
            cutoff: r.cutoff,
            emulator: match &r.emulator {
                WaveEmulator::Gp(_) => EmulatorSource::File { path: emulator_path(r.index) },
                WaveEmulator::Analytic(f) => EmulatorSource::Analytic { field: f.clone() },
            },
        })
        .collect();
    let file = ChainFile { space: chain.space().clone(), waves };
    fs::write(dir.join(CHAIN_FILE), serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn read_chain(dir: &Path) -> Result<WaveChain> {
    let text = fs::read_to_string(dir.join(CHAIN_FILE))?;
    ChainFile::from_json(&text)?.into_chain(dir)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub waves: usize,
    pub simulations: u64,
    pub stop: StopReason,
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Persists each wave under `root`.
pub struct RunWriter {
    root: PathBuf,
    names: Vec<String>,
}

impl RunWriter {
    pub fn create(root: &Path, space: &ParameterSpace) -> Result<Self> {
        fs::create_dir_all(root)?;
        Ok(RunWriter { root: root.to_path_buf(), names: space.names().iter().map(|s| s.to_string()).collect() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn write_wave(
        &self,
        wave: usize,
        particles: &[Vec<f64>],
        training: &[TrainingRow],
        summary: &impl Serialize,
        emulator: Option<&GpEmulator>,
    ) -> Result<()> {
        let dir = wave_dir(&self.root, wave);
        fs::create_dir_all(&dir)?;
        write_particles_csv(fs::File::create(dir.join(PARTICLES_FILE))?, &self.names, particles)?;
        if !training.is_empty() {
            write_training_csv(fs::File::create(dir.join(TRAINING_FILE))?, &self.names, training)?;
        }
        if let Some(em) = emulator {
            fs::write(dir.join(EMULATOR_FILE), em.to_bytes())?;
        }
        write_json(&dir.join(SUMMARY_FILE), summary)
    }
}

impl WaveSink for RunWriter {
    fn wave(&mut self, a: &WaveArtifacts<'_>) -> Result<()> {
        self.write_wave(a.wave, a.particles, a.training, a.summary, Some(a.emulator))
    }
}

/// Chain-file path of the engine's wave `w` emulator, fitted at wave `w-1`.
pub fn engine_emulator_path(w: usize) -> String {
    format!("wave_{:03}/{EMULATOR_FILE}", w - 1)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportCounts {
    pub runs: usize,
    pub trace_rows: usize,
    pub bivariate_files: usize,
    pub quantile_rows: usize,
}

struct RunData {
    id: String,
    names: Vec<String>,
    waves: Vec<(usize, WaveSummary, PathBuf)>,
}

fn load_run(dir: &Path) -> Result<RunData> {
    let mut waves = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().to_string();
        let Some(w) = name.strip_prefix("wave_").and_then(|s| s.parse::<usize>().ok()) else {
            continue;
        };
        let path = entry.path();
        match fs::read_to_string(path.join(SUMMARY_FILE)).map_err(Error::from).and_then(|t| Ok(serde_json::from_str(&t)?)) {
            Ok(s) => waves.push((w, s, path)),
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    waves.sort_by_key(|w| w.0);
    if waves.is_empty() {
        return Err(Error::Format(format!("{}: no completed waves", dir.display())));
    }
    let (names, _) = read_particles_csv(fs::File::open(waves[0].2.join(PARTICLES_FILE))?)?;
    let id = dir.file_name().map(|s| s.to_string_lossy().to_string()).unwrap_or_else(|| "run".into());
    Ok(RunData { id, names, waves })
}

/// Writes `acceptance_trace.csv`, `output_quantiles.csv` and
/// `bivariate_wave_{w}.csv` for the given run directories into `out`.
pub fn report(runs: &[PathBuf], out: &Path) -> Result<ReportCounts> {
    let mut loaded: Vec<RunData> = Vec::new();
    for dir in runs {
        match load_run(dir) {
            Ok(r) => loaded.push(r),
            Err(e) => warn!("skipping run {}: {e}", dir.display()),
        }
    }
    if loaded.is_empty() {
        return Err(Error::InvalidArgument("no completed run directories".into()));
    }
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for r in &mut loaded {
        let n = seen.entry(r.id.clone()).or_insert(0);
        *n += 1;
        if *n > 1 {
            r.id = format!("{}-{}", r.id, n);
        }
    }
    fs::create_dir_all(out)?;
    let mut counts = ReportCounts { runs: loaded.len(), ..Default::default() };

    let mut trace = csv::Writer::from_path(out.join("acceptance_trace.csv"))?;
    trace.write_record([
        "run_id", "wave", "cutoff", "survivors", "survivor_fraction", "ess", "p_acc", "repeats", "sweep_acceptance",
        "simulations",
    ])?;
    let mut quant = csv::Writer::from_path(out.join("output_quantiles.csv"))?;
    quant.write_record(["run_id", "wave", "min", "q1", "median", "q3", "max"])?;
    for r in &loaded {
        for (w, s, _) in &r.waves {
            let q = &s.output_quantiles;
            quant.write_record([r.id.clone(), w.to_string(), fmt(q.min), fmt(q.q1), fmt(q.median), fmt(q.q3), fmt(q.max)])?;
            counts.quantile_rows += 1;
            let (Some(c), Some(m)) = (s.cutoff, &s.moves) else {
                continue;
            };
            trace.write_record([
                r.id.clone(),
                w.to_string(),
                fmt(c),
                s.survivors.to_string(),
                fmt(s.survivor_fraction),
                fmt(s.ess),
                fmt(m.p_acc),
                m.repeats.to_string(),
                fmt(m.sweeps.p_acc),
                s.simulations.to_string(),
            ])?;
            counts.trace_rows += 1;
        }
    }
    trace.flush()?;
    quant.flush()?;

    let max_wave = loaded.iter().flat_map(|r| r.waves.iter().map(|w| w.0)).max().unwrap_or(0);
    for w in 0..=max_wave {
        let mut writer: Option<(csv::Writer<fs::File>, usize)> = None;
        for r in &loaded {
            let Some((_, _, dir)) = r.waves.iter().find(|x| x.0 == w) else {
                continue;
            };
            let (_, particles) = read_particles_csv(fs::File::open(dir.join(PARTICLES_FILE))?)?;
            let training = match fs::File::open(dir.join(TRAINING_FILE)) {
                Ok(f) => read_training_csv(f)?.1,
                Err(_) => Vec::new(),
            };
            if writer.is_none() {
                let mut wtr = csv::Writer::from_path(out.join(format!("bivariate_wave_{w}.csv")))?;
                let mut header = vec!["run_id".to_string(), "kind".to_string()];
                header.extend(r.names.iter().cloned());
                wtr.write_record(&header)?;
                writer = Some((wtr, r.names.len()));
                counts.bivariate_files += 1;
            }
            let (wtr, dim) = writer.as_mut().expect("created above");
            if r.names.len() != *dim {
                warn!("run {} has {} parameters, expected {dim}; omitted from bivariate_wave_{w}", r.id, r.names.len());
                continue;
            }
            let rows = particles.iter().map(|t| ("particle", t)).chain(training.iter().map(|t| ("training", &t.theta)));
            for (kind, t) in rows {
                let mut rec = vec![r.id.clone(), kind.to_string()];
                rec.extend(t.iter().map(|v| fmt(*v)));
                wtr.write_record(&rec)?;
            }
        }
        if let Some((mut wtr, _)) = writer {
            wtr.flush()?;
        }
    }
    Ok(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn training_round_trip() {
        let names = vec!["a".to_string(), "b".to_string()];
        let rows = vec![
            TrainingRow { theta: vec![0.1, 1e-300], raw: -3.5, output: 1.25, flagged: false },
            TrainingRow { theta: vec![2.0, -0.0], raw: f64::INFINITY, output: 0.3, flagged: true },
        ];
        let mut buf = Vec::new();
        write_training_csv(&mut buf, &names, &rows).unwrap();
        let (n, back) = read_training_csv(&buf[..]).unwrap();
        assert_eq!(n, names);
        assert_eq!(back, rows);
    }

    #[test]
    fn chain_json_rejects_escapes() {
        let space = serde_json::to_string(&ParameterSpace::uniform_box(&[(0.0, 1.0)]).unwrap()).unwrap();
        let text = format!(
            r#"{{"space":{space},"waves":[{{"index":1,"measure":{{"kind":"lcb","r":3.0}},"cutoff":1.0,"emulator":{{"source":"file","path":"../x.bin"}}}}]}}"#
        );
        assert!(ChainFile::from_json(&text).is_err());
        let ok = text.replace("../x.bin", "wave_000/emulator.bin");
        assert!(ChainFile::from_json(&ok).is_ok());
    }

    #[test]
    fn analytic_chain_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut chain = WaveChain::new(ParameterSpace::uniform_box(&[(0.0, 1.0), (0.0, 1.0)]).unwrap());
        chain.push(WaveRecord::analytic(1, AnalyticField::SquaredDistance { center: vec![0.5, 0.5] }, 0.09)).unwrap();
        write_chain(dir.path(), &chain, engine_emulator_path).unwrap();
        let back = read_chain(dir.path()).unwrap();
        assert_eq!(back.len(), 1);
        assert!(back.is_non_implausible(&[0.5, 0.6]).accepted);
        assert!(!back.is_non_implausible(&[0.9, 0.9]).accepted);
    }

    proptest! {
        #[test]
        fn particles_round_trip(rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 0..40)) {
            let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
            let mut buf = Vec::new();
            write_particles_csv(&mut buf, &names, &rows).unwrap();
            let (n, back) = read_particles_csv(&buf[..]).unwrap();
            prop_assert_eq!(n, names);
            prop_assert_eq!(back, rows);
        }
    }
}
