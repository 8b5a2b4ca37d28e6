use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::Serialize;

use histmatch::baselines::{
    adhoc_sampler, bayes_smc_anneal, brute_force_history_match, rejection_sampler, smc_optimisation, AbortRule,
};
use histmatch::config::{Model, ModelConfig, RunConfig};
use histmatch::io::{self, RunRecord, RunWriter};
use histmatch::mcmc::MapKind;
use histmatch::models::gene::{GeneData, INITIAL, TRUE_RATES};
use histmatch::models::rrm::{write_hydrology_csv, RrmModel, RrmOptions};
use histmatch::rng::StreamKey;
use histmatch::smc::{self, StopReason, WaveArtifacts, WaveSink};
use histmatch::Error;

#[derive(Parser)]
#[command(name = "histmatch", version, about = "History matching with emulators and sequential Monte Carlo")]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true, env = "HISTMATCH_THREADS")]
    threads: Option<usize>,
    /// Output directory, overriding the config file.
    #[arg(long, global = true, env = "HISTMATCH_OUTPUT")]
    output: Option<PathBuf>,
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// History match with the SMC sampler.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        max_waves: Option<usize>,
        #[arg(long)]
        particles: Option<usize>,
    },
    /// Brute-force history match over a QMC point set.
    Oracle {
        #[command(flatten)]
        common: Common,
    },
    /// Comparison samplers.
    Baseline {
        which: Baseline,
        #[command(flatten)]
        common: Common,
        /// Run or oracle directory holding chain.json (default: <output>/oracle).
        #[arg(long)]
        chain: Option<PathBuf>,
    },
    /// Plot-ready tables from completed runs.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic data set.
    GenData {
        #[command(subcommand)]
        which: GenData,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Rejection,
    AdhocLogit,
    AdhocKde,
    SmcOpt,
    BayesSmc,
}

impl Baseline {
    fn name(self) -> &'static str {
        match self {
            Baseline::Rejection => "rejection",
            Baseline::AdhocLogit => "adhoc_logit",
            Baseline::AdhocKde => "adhoc_kde",
            Baseline::SmcOpt => "smc_opt",
            Baseline::BayesSmc => "bayes_smc",
        }
    }
}

#[derive(Subcommand)]
enum GenData {
    /// Synthetic forcing with observed flow from the reference parameters.
    Hydrology {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 365)]
        days: usize,
        #[arg(long, default_value_t = 100)]
        burn_in: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Gene network observations at the true rates.
    Gene {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        observations: usize,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value_t = 10)]
        k: i64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_env("HISTMATCH_LOG").init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> histmatch::Result<()> {
    match &cli.command {
        Command::Run { common, max_waves, particles } => {
            let mut cfg = load(common)?;
            if let Some(w) = max_waves {
                cfg.smc.max_waves = *w;
            }
            if let Some(m) = particles {
                cfg.smc.particles = *m;
            }
            cfg.validate()?;
            cmd_run(&cfg, &output_dir(cli, &cfg))
        }
        Command::Oracle { common } => {
            let cfg = load(common)?;
            cmd_oracle(&cfg, &output_dir(cli, &cfg).join("oracle"))
        }
        Command::Baseline { which, common, chain } => {
            let cfg = load(common)?;
            let root = output_dir(cli, &cfg);
            let chain_dir = chain.clone().unwrap_or_else(|| root.join("oracle"));
            cmd_baseline(&cfg, *which, &chain_dir, &root.join(format!("baseline_{}", which.name())))
        }
        Command::Report { runs, out } => {
            let counts = io::report(runs, out)?;
            println!(
                "{} runs: {} trace rows, {} quantile rows, {} bivariate files in {}",
                counts.runs,
                counts.trace_rows,
                counts.quantile_rows,
                counts.bivariate_files,
                out.display()
            );
            Ok(())
        }
        Command::GenData { which } => cmd_gen_data(which),
    }
}

fn load(common: &Common) -> histmatch::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.set_seed(s);
    }
    Ok(cfg)
}

fn output_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    let name = match cfg.model {
        ModelConfig::Toy {} => "toy",
        ModelConfig::Hydrology(_) => "hydrology",
        ModelConfig::Gene(_) => "gene",
    };
    cli.output.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("runs").join(name))
}

struct Printing(RunWriter);

impl WaveSink for Printing {
    fn wave(&mut self, a: &WaveArtifacts<'_>) -> histmatch::Result<()> {
        self.0.wave(a)?;
        let s = a.summary;
        let (p, r) = s.moves.as_ref().map_or((f64::NAN, 0), |m| (m.p_acc, m.repeats));
        println!(
            "wave {:>3}  cutoff {:>14}  ess {:>8.1}  p_acc {:>6.3}  R {:>3}  sims {}",
            s.wave,
            s.cutoff.map_or("-".to_string(), |c| format!("{c:.6e}")),
            s.ess,
            p,
            r,
            s.simulations
        );
        Ok(())
    }
}

fn cmd_run(cfg: &RunConfig, root: &Path) -> histmatch::Result<()> {
    let model = Model::build(&cfg.model)?;
    let space = model.space();
    let mut smc_cfg = cfg.smc.clone();
    smc_cfg.gp = model.gp_defaults(&smc_cfg.gp);
    let mut sink = Printing(RunWriter::create(root, &space)?);
    let out = smc::run(model.simulator(), &space, &smc_cfg, &mut sink)?;
    io::write_chain(root, &out.chain, io::engine_emulator_path)?;
    let record =
        RunRecord { command: "run".into(), waves: out.chain.len(), simulations: out.simulations, stop: out.stop.clone() };
    io::write_json(&root.join(io::RUN_FILE), &record)?;
    println!("stopped: {:?}; {} simulations; output in {}", out.stop, out.simulations, root.display());
    if let StopReason::Failed(msg) = &out.stop {
        return Err(Error::InvalidArgument(format!("run ended early: {msg}")));
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleWave {
    wave: usize,
    cutoff: Option<f64>,
    survivors: usize,
    simulations: u64,
}

fn cmd_oracle(cfg: &RunConfig, root: &Path) -> histmatch::Result<()> {
    let model = Model::build(&cfg.model)?;
    let space = model.space();
    let mut oc = cfg.oracle.clone();
    oc.gp = model.gp_defaults(&oc.gp);
    let bf = brute_force_history_match(model.simulator(), &space, &oc)?;
    let writer = RunWriter::create(root, &space)?;
    for (w, idx) in bf.survivors.iter().enumerate() {
        let record = if w > 0 { Some(&bf.chain.waves()[w - 1]) } else { None };
        let summary = OracleWave {
            wave: w,
            cutoff: record.map(|r| r.cutoff),
            survivors: idx.len(),
            simulations: oc.training as u64 * w as u64,
        };
        let emulator = match record.map(|r| &r.emulator) {
            Some(histmatch::implausibility::WaveEmulator::Gp(em)) => Some(em.as_ref()),
            _ => None,
        };
        // wave 0 would be the whole point set
        let particles: Vec<Vec<f64>> = if w == 0 { Vec::new() } else { idx.iter().map(|&i| bf.points[i].clone()).collect() };
        writer.write_wave(w, &particles, &[], &summary, emulator)?;
        println!("oracle wave {w:>3}  cutoff {:>14}  survivors {}", summary.cutoff.map_or("-".into(), |c| format!("{c:.6e}")), idx.len());
    }
    io::write_chain(root, &bf.chain, |w| format!("wave_{w:03}/{}", io::EMULATOR_FILE))?;
    let stop = if bf.stopped_early { StopReason::NoSurvivors } else { StopReason::MaxWaves };
    io::write_json(&root.join(io::RUN_FILE), &RunRecord { command: "oracle".into(), waves: bf.chain.len(), simulations: bf.simulations, stop })
}

#[derive(Serialize)]
struct SamplerResult {
    samples: usize,
    proposals: u64,
    acceptance_rate: f64,
    complete: bool,
}

fn cmd_baseline(cfg: &RunConfig, which: Baseline, chain_dir: &Path, root: &Path) -> histmatch::Result<()> {
    let model = Model::build(&cfg.model)?;
    let space = model.space();
    let names: Vec<String> = space.names().iter().map(|s| s.to_string()).collect();
    fs::create_dir_all(root)?;
    let write_samples = |rows: &[Vec<f64>]| -> histmatch::Result<()> {
        io::write_particles_csv(fs::File::create(root.join("samples.csv"))?, &names, rows)
    };
    match which {
        Baseline::Rejection | Baseline::AdhocLogit | Baseline::AdhocKde => {
            let chain = io::read_chain(chain_dir)
                .map_err(|e| Error::Config(format!("cannot read chain from {}: {e}", chain_dir.display())))?;
            let out = match which {
                Baseline::Rejection => {
                    let rc = &cfg.rejection;
                    rejection_sampler(&chain, rc.samples, StreamKey::new(rc.seed), AbortRule::default())?
                }
                _ => {
                    let ac = &cfg.adhoc;
                    let key = StreamKey::new(ac.seed);
                    let prior = space.sample_prior(ac.samples, key.named("adhoc-prior"));
                    let kind = if matches!(which, Baseline::AdhocLogit) { MapKind::Logit } else { MapKind::Kde };
                    let (out, trace) = adhoc_sampler(&chain, prior, kind, ac.samples, key, AbortRule::default())?;
                    for t in &trace {
                        println!("adhoc wave {:>3}  acceptance {:.5}  proposals {}", t.wave, t.acceptance_rate, t.proposals);
                    }
                    out
                }
            };
            write_samples(&out.samples)?;
            let res = SamplerResult {
                samples: out.samples.len(),
                proposals: out.proposals,
                acceptance_rate: out.acceptance_rate,
                complete: out.complete,
            };
            println!("{} samples, acceptance {:.6}", res.samples, res.acceptance_rate);
            io::write_json(&root.join("result.json"), &res)?;
            if !out.complete {
                return Err(Error::AcceptanceTooLow {
                    threshold: AbortRule::default().min_acceptance,
                    proposals: out.proposals,
                    accepted: out.samples.len(),
                });
            }
        }
        Baseline::SmcOpt => {
            let out = smc_optimisation(model.simulator(), &space, &cfg.smc_opt)?;
            for w in &out.waves {
                println!(
                    "wave {:>3}  cutoff {:.6e}  mean {:.6e}  p_acc {:.3}  R {}  sims {}",
                    w.wave, w.cutoff, w.mean_distance, w.moves.p_acc, w.moves.repeats, w.simulations
                );
            }
            write_samples(&out.particles)?;
            io::write_json(&root.join("result.json"), &out.waves)?;
        }
        Baseline::BayesSmc => {
            let Model::Gene(gene) = &model else {
                return Err(Error::Config("bayes-smc needs a model with a likelihood (kind = \"gene\")".into()));
            };
            let out = bayes_smc_anneal(gene.as_ref(), &space, &cfg.bayes_smc)?;
            for s in &out.steps {
                println!("temperature {:.6}  ess {:.1}  p_acc {:.3}  R {}", s.temperature, s.ess, s.p_acc, s.repeats);
            }
            info!("{} likelihood evaluations", out.likelihood_evaluations);
            write_samples(&out.particles)?;
            io::write_json(&root.join("result.json"), &out.steps)?;
        }
    }
    println!("output in {}", root.display());
    Ok(())
}

fn create(path: &Path) -> histmatch::Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(fs::File::create(path)?)
}

fn cmd_gen_data(which: &GenData) -> histmatch::Result<()> {
    match which {
        GenData::Hydrology { out, days, burn_in, seed } => {
            if *days == 0 {
                return Err(Error::Config("--days must be positive".into()));
            }
            let options = RrmOptions { burn_in: *burn_in, ..Default::default() };
            let m = RrmModel::synthetic(*days, options, StreamKey::new(*seed))?;
            write_hydrology_csv(&m.forcing, Some(&m.observed), create(out)?)?;
            println!("wrote {} days to {}", m.observed.len(), out.display());
        }
        GenData::Gene { out, observations, dt, k, seed } => {
            if *observations == 0 || !(*dt > 0.0) {
                return Err(Error::Config("--observations and --dt must be positive".into()));
            }
            let data = GeneData::generate(&TRUE_RATES, *k, INITIAL, *dt, *observations, *seed);
            data.write_csv(create(out)?)?;
            println!("wrote {observations} observations to {}", out.display());
        }
    }
    Ok(())
}
