use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use dlcz_core::estimation::io::{write_counts, write_fringe, CountRow};
use dlcz_core::experiment::experiments::{CHSH_OUTCOME_IDS, CHSH_SETTING_IDS};
use dlcz_core::experiment::{
    calibrate, chsh_experiment, delay_choice_sweep, mode_matrix_experiment, run_trials, tomography_experiment,
    CalibrationTargets, ConfigDiagnostic, Engine, ExperimentConfig, Report, VerifyBasis,
};
use dlcz_core::lock::run_locked;
use dlcz_core::optics::{ClickPattern, DetectorId};
use dlcz_core::Error;

#[derive(Parser, Debug)]
#[command(name = "dlcz", version, about = "Heralded two-ensemble entanglement simulator")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; built-in defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// overrides the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// overrides the subcommand's workload (trials, pairs or samples)
    #[arg(long, global = true)]
    trials: Option<u64>,
    /// output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = EngineArg::Sampling)]
    engine: EngineArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum EngineArg {
    Exact,
    Sampling,
}

impl From<EngineArg> for Engine {
    fn from(e: EngineArg) -> Self {
        match e {
            EngineArg::Exact => Engine::Exact,
            EngineArg::Sampling => Engine::Sampling,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BasisArg {
    Modes,
    Interference,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Raw trials: herald, store, verify
    Run {
        #[arg(long, value_enum, default_value_t = BasisArg::Modes)]
        basis: BasisArg,
    },
    /// Phase sweep with fringe fits, plus the mode matrix and concurrence bound
    Fringe,
    /// Sixteen-setting polarization tomography of the Stokes/anti-Stokes pair
    Tomo,
    /// CHSH test on the Stokes/anti-Stokes pair
    Chsh,
    /// Storage-delay sweep with detection-order classification
    Delay,
    /// Interferometer phase lock
    Lock,
    /// Fit chi, retrieval efficiencies and phase jitter to target statistics
    Calibrate {
        #[arg(long, default_value_t = 3.1e-3)]
        p01: f64,
        #[arg(long, default_value_t = 3.5e-3)]
        p10: f64,
        #[arg(long, default_value_t = 5.5e-7)]
        p11: f64,
        #[arg(long, default_value_t = 0.875)]
        visibility: f64,
    },
}

#[derive(Serialize)]
struct ErrorBody {
    kind: String,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    column: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<String>,
}

enum Failure {
    Config(ConfigDiagnostic),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn load_config(common: &Common) -> Outcome<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(Error::from)?;
            ExperimentConfig::parse_with_diagnostics(&text).map_err(Failure::Config)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, report: &Report<T>) -> Outcome<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, report.to_json()? + "\n").map_err(Error::from)?;
    Ok(path)
}

fn csv_file(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name)).map_err(Error::from)?))
}

fn pattern_id(p: ClickPattern, ids: [DetectorId; 2]) -> String {
    match p {
        ClickPattern::None => "none".into(),
        ClickPattern::First => format!("{:?}", ids[0]),
        ClickPattern::Second => format!("{:?}", ids[1]),
        ClickPattern::Both => format!("{:?}+{:?}", ids[0], ids[1]),
    }
}

#[derive(Serialize)]
struct RunSummary {
    basis: VerifyBasis,
    trials: u64,
    heralds_d1: f64,
    /// `[none, D3 only, D4 only, both]` given a D1 click
    conditional_verify: [f64; 4],
    conditional_verify_exact: [f64; 4],
    probabilities: [[f64; 4]; 4],
}

fn conditional_row(table: &[[f64; 4]; 4]) -> ([f64; 4], f64) {
    let mut out = [0.0; 4];
    for h in [1, 3] {
        for v in 0..4 {
            out[v] += table[h][v];
        }
    }
    let total: f64 = out.iter().sum();
    if total > 0.0 {
        out.iter_mut().for_each(|x| *x /= total);
    }
    (out, total)
}

fn execute(cli: &Cli) -> Outcome<Vec<PathBuf>> {
    let mut cfg = load_config(&cli.common)?;
    let engine: Engine = cli.common.engine.into();
    let dir = &cli.common.out;
    fs::create_dir_all(dir).map_err(Error::from)?;
    let mut written = Vec::new();
    let trials = cli.common.trials;
    match &cli.command {
        Command::Run { basis } => {
            if let Some(n) = trials {
                cfg.trials = n;
            }
            let basis = match basis {
                BasisArg::Modes => VerifyBasis::Modes,
                BasisArg::Interference => VerifyBasis::Interference,
            };
            let run = run_trials(&cfg, engine, basis, true)?;
            let (exact_cond, _) = conditional_row(&run.probabilities);
            let table: [[f64; 4]; 4] = match &run.counts {
                Some(c) => c.table.map(|r| r.map(|x| x as f64)),
                None => run.probabilities.map(|r| r.map(|p| p * cfg.trials as f64)),
            };
            let (cond, heralds) = conditional_row(&table);
            let summary = RunSummary {
                basis,
                trials: cfg.trials,
                heralds_d1: heralds,
                conditional_verify: cond,
                conditional_verify_exact: exact_cond,
                probabilities: run.probabilities,
            };
            written.push(write_json(dir, "run.json", &Report::new("run", &cfg, engine, summary))?);
            let herald_ids = [DetectorId::D1, DetectorId::D2];
            let verify_ids = [DetectorId::D3, DetectorId::D4];
            let rows: Vec<CountRow> = ClickPattern::ALL
                .iter()
                .flat_map(|h| ClickPattern::ALL.iter().map(move |v| (*h, *v)))
                .map(|(h, v)| CountRow {
                    setting_id: pattern_id(h, herald_ids),
                    outcome_id: pattern_id(v, verify_ids),
                    counts: table[h.index()][v.index()],
                })
                .collect();
            write_counts(&rows, csv_file(dir, "counts.csv")?)?;
            written.push(dir.join("counts.csv"));
            if engine == Engine::Sampling {
                let mut w = csv::Writer::from_writer(csv_file(dir, "trials.csv")?);
                w.write_record(["trial", "herald", "phase", "verify"]).map_err(Error::from)?;
                for r in &run.records {
                    let ids = |ev: &[dlcz_core::optics::DetectionEvent]| {
                        ev.iter().map(|e| format!("{:?}", e.detector)).collect::<Vec<_>>().join("+")
                    };
                    w.write_record([r.trial.to_string(), ids(&r.herald), format!("{:.6}", r.phase), ids(&r.verify)])
                        .map_err(Error::from)?;
                }
                w.flush().map_err(Error::from)?;
                written.push(dir.join("trials.csv"));
            }
        }
        Command::Fringe => {
            if let Some(n) = trials {
                cfg.fringe.trials_per_point = n;
            }
            let (fringe, modes) = mode_matrix_experiment(&cfg, engine)?;
            write_fringe(&fringe.data, csv_file(dir, "fringe.csv")?)?;
            written.push(dir.join("fringe.csv"));
            #[derive(Serialize)]
            struct FringeOut {
                fringe: dlcz_core::experiment::FringeReport,
                mode_matrix: dlcz_core::experiment::ModeMatrixReport,
            }
            let out = FringeOut { fringe, mode_matrix: modes };
            written.push(write_json(dir, "fringe.json", &Report::new("fringe", &cfg, engine, out))?);
        }
        Command::Tomo => {
            if let Some(n) = trials {
                cfg.tomography.samples = n;
            }
            let r = tomography_experiment(&cfg, engine)?;
            let rows: Vec<CountRow> = r
                .counts
                .iter()
                .map(|c| CountRow {
                    setting_id: c.setting.to_string(),
                    outcome_id: "coincidence".into(),
                    counts: c.counts,
                })
                .collect();
            write_counts(&rows, csv_file(dir, "tomography_counts.csv")?)?;
            written.push(dir.join("tomography_counts.csv"));
            written.push(write_json(dir, "tomo.json", &Report::new("tomo", &cfg, engine, r))?);
        }
        Command::Chsh => {
            if let Some(n) = trials {
                cfg.chsh.pairs_per_setting = n;
            }
            let r = chsh_experiment(&cfg, engine)?;
            if let Some(c) = &r.counts {
                let rows: Vec<CountRow> = (0..4)
                    .flat_map(|s| (0..4).map(move |o| (s, o)))
                    .map(|(s, o)| CountRow {
                        setting_id: CHSH_SETTING_IDS[s].into(),
                        outcome_id: CHSH_OUTCOME_IDS[o].into(),
                        counts: c[s][o] as f64,
                    })
                    .collect();
                write_counts(&rows, csv_file(dir, "chsh_counts.csv")?)?;
                written.push(dir.join("chsh_counts.csv"));
            }
            written.push(write_json(dir, "chsh.json", &Report::new("chsh", &cfg, engine, r))?);
        }
        Command::Delay => {
            if let Some(n) = trials {
                cfg.delay.trials_per_point = n;
            }
            let r = delay_choice_sweep(&cfg, engine)?;
            let mut w = csv::Writer::from_writer(csv_file(dir, "delay.csv")?);
            w.write_record(["storage_ns", "order", "interval", "V", "V_err", "C_p", "C_p_err"]).map_err(Error::from)?;
            for p in &r.points {
                w.write_record([
                    p.storage_ns.to_string(),
                    p.order.to_string(),
                    format!("{:?}", p.interval).to_lowercase(),
                    p.visibility.to_string(),
                    p.visibility_err.to_string(),
                    p.concurrence.to_string(),
                    p.concurrence_err.to_string(),
                ])
                .map_err(Error::from)?;
            }
            w.flush().map_err(Error::from)?;
            written.push(dir.join("delay.csv"));
            written.push(write_json(dir, "delay.json", &Report::new("delay", &cfg, engine, r))?);
        }
        Command::Lock => {
            let l = &cfg.lock;
            let r = run_locked(&l.drift, &l.controller, l.duration_s, cfg.seed)?;
            r.write_csv(csv_file(dir, "lock_trajectory.csv")?)?;
            written.push(dir.join("lock_trajectory.csv"));
            written.push(write_json(dir, "lock.json", &Report::new("lock", &cfg, engine, r))?);
        }
        Command::Calibrate { p01, p10, p11, visibility } => {
            let targets = CalibrationTargets { p01: *p01, p10: *p10, p11: *p11, visibility: *visibility };
            let c = calibrate(&targets, &cfg.noise, &cfg.interferometer, cfg.schedule.storage_ns)?;
            let mut fitted = cfg.clone();
            fitted.noise = c.params.clone();
            fs::write(dir.join("calibrated.toml"), fitted.to_toml_string()?).map_err(Error::from)?;
            written.push(dir.join("calibrated.toml"));
            written.push(write_json(dir, "calibrate.json", &Report::new("calibrate", &cfg, Engine::Exact, c))?);
        }
    }
    Ok(written)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            let (code, body) = match f {
                Failure::Config(d) => (
                    2,
                    ErrorBody {
                        kind: "config".into(),
                        message: d.message.clone(),
                        line: d.line,
                        column: d.column,
                        field: d.field.clone(),
                    },
                ),
                Failure::Run(e) => {
                    let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
                    (
                        code,
                        ErrorBody {
                            kind: e.kind().into(),
                            message: e.to_string(),
                            line: None,
                            column: None,
                            field: None,
                        },
                    )
                }
            };
            let json = serde_json::json!({ "error": body });
            eprintln!("{json}");
            ExitCode::from(code)
        }
    }
}
