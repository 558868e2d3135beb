use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mwp_core::config::Config;
use mwp_core::engine::{expand, solve, OracleScorer, ScorerKind};
use mwp_core::eval::{default_stop_grid, evaluate_dataset, evaluate_oracle, export_attention, sweep_stop_criteria, EvalConfig, EvalReport};
use mwp_core::model::{Model, Vocab};
use mwp_core::problem::{
    collect_constants, context_key, grouped_random_split, load_records, one_to_many_split, read_records, regroup_test_split, synth_records, write_records,
    Dialect, LoadReport, ProblemInstance, Record, SynthSpec,
};
use mwp_core::trainer::{fit, TrainState};
use mwp_core::{Error, Result};

#[derive(Parser)]
#[command(name = "mwp", version, about = "Math word problem solver by thought expansion")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the training seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model checkpoint.
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    /// Dataset file.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Dataset dialect: jsonl, svamp or mawps.
    #[arg(long, global = true, default_value = "jsonl")]
    dialect: String,
    /// Log verbosity (error, warn, info, debug).
    #[arg(long, global = true, default_value = "warn")]
    log: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Protocol {
    OneToMany,
    Grouped,
    /// One-to-many on `--data` as a test set, merged into the base splits.
    RegroupTest,
}

#[derive(Subcommand)]
enum Command {
    /// Writes a synthetic corpus as JSON lines.
    Synth {
        #[arg(long, default_value_t = 2000)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Splits a dataset by shared context.
    Split {
        #[arg(long, value_enum, default_value = "one-to-many")]
        protocol: Protocol,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value_t = 0.1)]
        validation_fraction: f64,
        /// Existing training split (regroup-test).
        #[arg(long)]
        base_train: Option<PathBuf>,
        /// Existing validation split (regroup-test).
        #[arg(long)]
        base_validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model; writes checkpoints and a report into `out`.
    Train {
        #[arg(long)]
        validation: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the state saved in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluates a checkpoint (or the oracle) on a dataset.
    Eval {
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solves one problem given as a JSON record (stdin when no input).
    Solve {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        oracle: bool,
    },
    /// Thought statistics of the symbolic oracle.
    OracleStats {
        /// Accept every candidate instead of gold sub-expressions only.
        #[arg(long)]
        accept_all: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Accuracy over a grid of stop criteria.
    Sweep {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Answer-layer attention over the problem tokens.
    VizAttn {
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        e if e.is_numeric() => 3,
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_new(&cli.log).unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config(cli: &Cli) -> Result<Config> {
    let mut c = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        c.train.seed = s;
    }
    Ok(c)
}

fn need<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("--{flag} is required")))
}

fn records(cli: &Cli) -> Result<Vec<Record>> {
    load_records(need(&cli.data, "data")?, cli.dialect.parse::<Dialect>()?)
}

fn report_skipped(r: &LoadReport) {
    if !r.skipped.is_empty() {
        eprintln!("skipped {} records", r.skipped.len());
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn load_model(cli: &Cli) -> Result<Model> {
    Model::load(need(&cli.checkpoint, "checkpoint")?)
}

fn model_problems(cli: &Cli, model: &Model) -> Result<Vec<ProblemInstance>> {
    let r = LoadReport::build(&records(cli)?, &model.constants);
    report_skipped(&r);
    Ok(r.problems)
}

fn print_report(r: &EvalReport) {
    println!("{}", r.summary_line());
    if let Some(s) = &r.stats {
        println!(
            "candidates total {:.2}±{:.2}, path length {:.2}±{:.2}, last depth {:.2}±{:.2}, path depth {:.2}±{:.2}",
            s.candidates_total.mean,
            s.candidates_total.se,
            s.path_length.mean,
            s.path_length.se,
            s.candidates_last.mean,
            s.candidates_last.se,
            s.path_depth.mean,
            s.path_depth.se
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::Synth { count, out } => {
            let recs = synth_records(&SynthSpec::default(), *count, cfg.train.seed)?;
            write_records(out, &recs)?;
            println!("wrote {} problems to {}", recs.len(), out.display());
        }
        Command::Split { protocol, train_fraction, validation_fraction, base_train, base_validation, out } => {
            let recs = records(cli)?;
            let key = |p: &ProblemInstance| context_key(&p.context);
            let split = if let Protocol::RegroupTest = protocol {
                let (Some(bt), Some(bv)) = (base_train, base_validation) else {
                    return Err(Error::Config("regroup-test needs --base-train and --base-validation".into()));
                };
                let dialect: Dialect = cli.dialect.parse()?;
                let (tr, va) = (load_records(bt, dialect)?, load_records(bv, dialect)?);
                let constants = collect_constants(&[tr.clone(), va.clone(), recs.clone()].concat());
                let parts: Vec<LoadReport> = [&tr, &va, &recs].iter().map(|r| LoadReport::build(r, &constants)).collect();
                parts.iter().for_each(report_skipped);
                let mut it = parts.into_iter().map(|r| r.problems);
                let (tr, va, te) = (it.next().unwrap_or_default(), it.next().unwrap_or_default(), it.next().unwrap_or_default());
                regroup_test_split(tr, va, te, &key, cfg.train.seed)?
            } else {
                let r = LoadReport::build(&recs, &collect_constants(&recs));
                report_skipped(&r);
                match protocol {
                    Protocol::Grouped => grouped_random_split(r.problems, &key, *train_fraction, *validation_fraction, cfg.train.seed)?,
                    _ => one_to_many_split(r.problems, &key, cfg.train.seed)?,
                }
            };
            std::fs::create_dir_all(out)?;
            for (name, part) in [("train", &split.train), ("validation", &split.validation), ("test", &split.test)] {
                let recs: Vec<Record> = part.iter().map(ProblemInstance::record).collect();
                write_records(&out.join(format!("{name}.jsonl")), &recs)?;
            }
            write_json(&out.join("manifest.json"), &split.manifest())?;
            let m = &split.meta;
            println!(
                "{}: train {} / validation {} / test {} ({} multi groups, {} singletons)",
                m.protocol, m.train, m.validation, m.test, m.multi_groups, m.singleton_groups
            );
        }
        Command::Train { validation, out, resume } => {
            let recs = records(cli)?;
            let constants = collect_constants(&recs);
            let train = LoadReport::build(&recs, &constants);
            report_skipped(&train);
            let valid = match validation {
                Some(p) => {
                    let r = LoadReport::build(&load_records(p, cli.dialect.parse()?)?, &constants);
                    report_skipped(&r);
                    r.problems
                }
                None => Vec::new(),
            };
            std::fs::create_dir_all(out)?;
            let (model, state) = if *resume {
                let state: TrainState = serde_json::from_str(&std::fs::read_to_string(out.join("state.json"))?)?;
                (Model::load(&out.join("last.json"))?, Some(state))
            } else {
                let vocab = Vocab::build(&train.problems);
                (Model::new(cfg.model.clone(), vocab, constants, cfg.train.seed)?, None)
            };
            let mut save = |m: &Model, s: &TrainState| -> Result<()> {
                m.save(&out.join("last.json"))?;
                write_json(&out.join("state.json"), s)?;
                let e = s.report.epochs.last().expect("epoch recorded");
                match e.validation_accuracy {
                    Some(a) => println!("epoch {:>3}  lr {:.2e}  loss {:.5}  validation {:.4}", e.epoch, e.lr, e.loss, a),
                    None => println!("epoch {:>3}  lr {:.2e}  loss {:.5}", e.epoch, e.lr, e.loss),
                }
                Ok(())
            };
            let outcome = fit(model, &train.problems, &valid, &cfg.train, &cfg.engine, state, &mut save)?;
            outcome.model.save(&out.join("last.json"))?;
            if let Some(swa) = &outcome.swa {
                swa.save(&out.join("swa.json"))?;
            }
            write_json(&out.join("report.json"), &outcome.state.report)?;
            write_json(&out.join("config.json"), &cfg)?;
            println!("saved checkpoints to {}", out.display());
        }
        Command::Eval { oracle, out } => {
            let report = if *oracle {
                let recs = records(cli)?;
                let r = LoadReport::build(&recs, &collect_constants(&recs));
                report_skipped(&r);
                evaluate_oracle(&r.problems, &cfg.engine, false, cfg.train.exec)?
            } else {
                let model = load_model(cli)?;
                let problems = model_problems(cli, &model)?;
                evaluate_dataset(&model, &problems, &cfg.eval())?
            };
            print_report(&report);
            if let Some(p) = out {
                write_json(p, &report)?;
            }
        }
        Command::Solve { input, oracle } => {
            let text = match input {
                Some(p) => std::fs::read_to_string(p)?,
                None => {
                    let mut s = String::new();
                    std::io::stdin().read_to_string(&mut s)?;
                    s
                }
            };
            let recs = read_records(&text, cli.dialect.parse()?)?;
            let rec = recs.first().ok_or_else(|| Error::EmptyInput("no problem given".into()))?;
            let (problem, trace) = if *oracle {
                let p = ProblemInstance::from_record(rec, &collect_constants(&recs))?;
                let mut scorer = OracleScorer::containment(&p);
                let t = expand(&mut scorer, &cfg.engine, None)?;
                (p, t)
            } else {
                let model = load_model(cli)?;
                let p = ProblemInstance::from_record(rec, &model.constants)?;
                let engine = mwp_core::engine::EngineConfig { scorer: ScorerKind::Neural, ..cfg.engine.clone() };
                let t = solve(&p, &model, &engine)?;
                (p, t)
            };
            let pred = trace.final_expr();
            let value = pred.evaluate(&problem.env)?;
            println!("{}", serde_json::to_string_pretty(&trace)?);
            eprintln!("{} = {}", pred.to_infix(&|l| problem.env.leaf_label(l)), value.literal());
        }
        Command::OracleStats { accept_all, out } => {
            let recs = records(cli)?;
            let r = LoadReport::build(&recs, &collect_constants(&recs));
            report_skipped(&r);
            let report = evaluate_oracle(&r.problems, &cfg.engine, *accept_all, cfg.train.exec)?;
            print_report(&report);
            let failed = report.examples.iter().filter(|e| e.error.is_some()).count();
            if failed > 0 {
                eprintln!("{failed} problems hit an engine limit");
            }
            if let Some(p) = out {
                write_json(p, &report)?;
            }
        }
        Command::Sweep { out } => {
            let model = load_model(cli)?;
            let problems = model_problems(cli, &model)?;
            let base = EvalConfig { engine: mwp_core::engine::EngineConfig { scorer: ScorerKind::Neural, ..cfg.engine.clone() }, exec: cfg.train.exec };
            let cells = sweep_stop_criteria(&model, &problems, &base, &default_stop_grid())?;
            for c in &cells {
                println!("t_f {:.2}  D {:>2}  accuracy {:.4}", c.confidence_threshold, c.max_depth, c.accuracy);
            }
            if let Some(p) = out {
                write_json(p, &cells)?;
            }
        }
        Command::VizAttn { id, out } => {
            let model = load_model(cli)?;
            let problems = model_problems(cli, &model)?;
            let p = problems.iter().find(|p| &p.id == id).ok_or_else(|| Error::EmptyInput(format!("no problem with id {id}")))?;
            let (_, export) = export_attention(&model, p, &cfg.engine)?;
            match out {
                Some(path) => write_json(path, &export)?,
                None => println!("{}", serde_json::to_string_pretty(&export)?),
            }
        }
    }
    Ok(())
}
