use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use carbonsched::carbon::synthetic::{self, DiurnalParams};
use carbonsched::experiment::{self, Experiment, ExperimentConfig, SweepAxis, TraceSource};
use carbonsched::policy::PolicySpec;
use carbonsched::workload::{self, DagModel, GeneratorParams};

#[derive(Parser)]
#[command(name = "carbonsched", version, about = "Carbon-aware DAG scheduling simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured policy and write a run directory per trial.
    Run {
        config: PathBuf,
        #[command(flatten)]
        over: Overrides,
        /// Output directory (defaults to config `output_dir`, then $CARBONSCHED_OUT).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Sweep one policy knob over a list of values and a list of trial seeds.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated knob values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Number of trials; trial i uses stream i of the config seed.
        #[arg(long, default_value_t = 1)]
        seeds: u32,
        #[command(flatten)]
        over: Overrides,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Compare a carbon-agnostic run directory with a carbon-aware one.
    Compare {
        baseline: PathBuf,
        aware: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics and bound checks for a run directory.
    Analyze {
        run_dir: PathBuf,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Generate a workload JSON file.
    GenWorkload {
        #[arg(long, value_enum, default_value_t = Model::Tpch)]
        model: Model,
        /// Full generator parameters as JSON or TOML; overrides --model.
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        jobs: u32,
        #[arg(long, default_value_t = 60.0)]
        mean_interarrival: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Load a trace CSV and print its summary statistics.
    ValidateTrace { path: PathBuf },
    /// Write a synthetic carbon trace CSV.
    GenTrace {
        #[command(subcommand)]
        shape: TraceShape,
    },
}

#[derive(Subcommand)]
enum TraceShape {
    /// Alternating low/high intensity.
    SquareWave {
        #[arg(long, default_value_t = 50.0)]
        low: f64,
        #[arg(long, default_value_t = 500.0)]
        high: f64,
        /// Steps per full period.
        #[arg(long, default_value_t = 6)]
        period: usize,
        #[arg(long, default_value_t = 720)]
        steps: usize,
        #[arg(long, default_value_t = 3600.0)]
        step_s: f64,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Daily and seasonal cycles with noise, hourly.
    Diurnal {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(short, long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Gamma,
    B,
    Theta,
}

#[derive(Clone, Copy, ValueEnum)]
enum Model {
    Tpch,
    Layered,
    Alibaba,
}

/// Point overrides applied on top of the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    #[arg(long)]
    executors: Option<u32>,
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long = "b")]
    b: Option<u32>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Disable the per-event log (events.jsonl stays empty).
    #[arg(long)]
    no_events: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.trials {
            cfg.trials.count = n;
        }
        if let Some(k) = self.executors {
            cfg.cluster.executors = k;
        }
        if let Some(p) = &self.trace {
            match &mut cfg.trace {
                TraceSource::File { path, .. } => *path = p.clone(),
                other => {
                    *other = TraceSource::File {
                        path: p.clone(),
                        step_s: None,
                        wrap: false,
                    }
                }
            }
        }
        if self.no_events {
            cfg.record_events = false;
        }
        let policy = &mut cfg.policy;
        if let Some(g) = self.gamma {
            match policy {
                PolicySpec::Pcaps { gamma, .. } => *gamma = g,
                _ => bail!("--gamma needs a pcaps policy, config has {}", policy.label()),
            }
        }
        if let Some(v) = self.b {
            match policy {
                PolicySpec::Cap { b, .. } => *b = v,
                _ => bail!("--b needs a cap policy, config has {}", policy.label()),
            }
        }
        if let Some(v) = self.theta {
            match policy {
                PolicySpec::GreenHadoop { theta, .. } => *theta = v,
                _ => bail!("--theta needs a greenhadoop policy, config has {}", policy.label()),
            }
        }
        if let Some(v) = self.tau {
            match policy {
                PolicySpec::Pb { tau } | PolicySpec::Pcaps { tau, .. } => *tau = v,
                PolicySpec::Cap { inner, .. } => match inner.as_mut() {
                    PolicySpec::Pb { tau } => *tau = v,
                    _ => bail!("--tau needs a pb or pcaps policy"),
                },
                _ => bail!("--tau needs a pb or pcaps policy, config has {}", policy.label()),
            }
        }
        Ok(())
    }
}

fn load_config(path: &Path, over: &Overrides) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path).with_context(|| format!("loading config {}", path.display()))?;
    over.apply(&mut cfg)?;
    Ok(cfg)
}

fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig, name: String) -> PathBuf {
    flag.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| {
        let root = std::env::var_os("CARBONSCHED_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(name)
    })
}

fn emit_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn run(config: PathBuf, over: Overrides, out: Option<PathBuf>) -> Result<()> {
    let cfg = load_config(&config, &over)?;
    let dir = output_dir(out, &cfg, format!("{}-seed{}", slug(&cfg.policy.label()), cfg.seed));
    let outcomes = experiment::run_to_dir(&cfg, &dir)?;
    for o in &outcomes {
        println!(
            "trial {} offset {}: footprint {:.3} g, ect {:.1} s, avg jct {:.1} s",
            o.setup.index, o.setup.offset, o.metrics.footprint_g, o.metrics.ect, o.metrics.avg_jct
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
        .collect()
}

fn sweep(
    config: PathBuf,
    axis: Axis,
    values: Vec<f64>,
    seeds: u32,
    over: Overrides,
    out: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(&config, &over)?;
    let axis = match axis {
        Axis::Gamma => SweepAxis::Gamma(values),
        Axis::Theta => SweepAxis::Theta(values),
        Axis::B => SweepAxis::B(
            values
                .iter()
                .map(|&v| {
                    if v >= 0.0 && v.fract() == 0.0 {
                        Ok(v as u32)
                    } else {
                        bail!("B values must be non-negative integers, got {v}")
                    }
                })
                .collect::<Result<_>>()?,
        ),
    };
    let dir = output_dir(out, &cfg, format!("sweep-{}-seed{}", axis.name(), cfg.seed));
    let exp = Experiment::prepare(cfg)?;
    let trials: Vec<u32> = (0..seeds).collect();
    let summary = exp.sweep(&axis, &trials)?;
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join("summary.csv");
    summary.write_csv(fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?)?;
    let p = dir.join("samples.csv");
    summary.write_samples_csv(fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?)?;
    emit_json(&summary, Some(&dir.join("summary.json")))?;
    println!("baseline {}", summary.baseline);
    for pt in &summary.points {
        println!(
            "{}={}: footprint {:.4} ± {:.4}, ect {:.4} ± {:.4} (normalized)",
            pt.axis, pt.value, pt.norm_footprint.mean, pt.norm_footprint.std, pt.norm_ect.mean, pt.norm_ect.std
        );
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn read_params(path: &Path) -> Result<GeneratorParams> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if path.extension().is_some_and(|e| e == "json") {
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    } else {
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn gen_workload(
    model: Model,
    params: Option<PathBuf>,
    jobs: u32,
    mean_interarrival: f64,
    seed: u64,
    out: Option<PathBuf>,
) -> Result<()> {
    let params = match params {
        Some(p) => read_params(&p)?,
        None => {
            let mut p = GeneratorParams::template_library(jobs, mean_interarrival);
            match model {
                Model::Tpch => {}
                Model::Layered => {
                    p.dag_model = DagModel::LayeredRandom {
                        max_layers: 5,
                        max_width: 4,
                        max_tasks: 8,
                        extra_edge_prob: 0.1,
                    }
                }
                Model::Alibaba => {
                    p.dag_model = serde_json::from_str(r#"{"kind":"alibaba-like"}"#)?;
                }
            }
            p
        }
    };
    let spec = workload::generate_workload(&params, seed)?;
    match out {
        Some(p) => {
            let f = fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
            workload::save_workload(&spec, io::BufWriter::new(f))?;
            println!(
                "{} jobs, {} tasks -> {}",
                spec.jobs.len(),
                spec.num_tasks(),
                p.display()
            );
        }
        None => workload::save_workload(&spec, io::stdout().lock())?,
    }
    Ok(())
}

fn write_trace(trace: &carbonsched::carbon::CarbonTrace, out: &Path) -> Result<()> {
    let f = fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
    trace.write_csv(io::BufWriter::new(f))?;
    let s = trace.stats();
    println!(
        "{} rows, min {} max {} mean {:.3} cv {:.4} -> {}",
        s.rows,
        s.min,
        s.max,
        s.mean,
        s.coeff_var,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, over, out } => run(config, over, out),
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            over,
            out,
        } => sweep(config, axis, values, seeds, over, out),
        Command::Compare { baseline, aware, out } => {
            let report = experiment::compare(&baseline, &aware)?;
            emit_json(&report, out.as_deref())
        }
        Command::Analyze { run_dir, out } => {
            let report = experiment::analyze(&run_dir)?;
            emit_json(&report, out.as_deref())
        }
        Command::GenWorkload {
            model,
            params,
            jobs,
            mean_interarrival,
            seed,
            out,
        } => gen_workload(model, params, jobs, mean_interarrival, seed, out),
        Command::ValidateTrace { path } => {
            let stats = experiment::validate_trace(&path)?;
            println!("ok");
            emit_json(&stats, None)
        }
        Command::GenTrace { shape } => match shape {
            TraceShape::SquareWave {
                low,
                high,
                period,
                steps,
                step_s,
                out,
            } => write_trace(&synthetic::square_wave(low, high, period, steps, step_s)?, &out),
            TraceShape::Diurnal { seed, steps, out } => {
                let mut p = DiurnalParams::default();
                if let Some(n) = steps {
                    p.n_steps = n;
                }
                write_trace(&synthetic::diurnal(&p, seed)?, &out)
            }
        },
    }
}
