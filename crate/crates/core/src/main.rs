use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hazenet::ablation::{run_ablation, to_tsv};
use hazenet::cost::{count_cost, CostModule};
use hazenet::eval::{dehaze_image, evaluate};
use hazenet::gradcheck::{run_suite, TOLERANCE};
use hazenet::hazegen::{read_dataset, synthesize_dataset, SynthOptions};
use hazenet::io::{load_ppm, save_ppm};
use hazenet::metrics::colorjet_render;
use hazenet::training::{parse_run_config, train_loop, TrainConfig, TrainOutputs};
use hazenet::{Error, HazeNet, ModelConfig};

#[derive(Parser)]
#[command(name = "hazenet", version, about = "Density-aware single image dehazing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a procedural hazy/clean dataset.
    Synth {
        #[arg(long, default_value_t = 8)]
        scenes: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Train a model from a key=value run config.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Metrics log (defaults to the checkpoint path with a .tsv extension).
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Dehaze one PPM image.
    Dehaze {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the density map as a jet-colored PPM.
        #[arg(long)]
        emit_density: Option<PathBuf>,
        /// Write the shallow-stage image.
        #[arg(long)]
        emit_pseudo: Option<PathBuf>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value = "train")]
        split: String,
    },
    /// Print parameter and FLOP counts for a module.
    Count {
        #[arg(long)]
        module: String,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [64, 64])]
        hw: Vec<usize>,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train each rung of an ablation ladder and tabulate the results.
    Ablate {
        #[arg(long, value_parser = ["1", "3", "4"])]
        table: String,
        #[arg(long)]
        data: PathBuf,
        /// Run config applied to every rung.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: String,
    },
}

enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidArgument(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

fn load_run_config(path: Option<&Path>) -> Result<(ModelConfig, TrainConfig), Error> {
    match path {
        Some(p) => parse_run_config(&fs::read_to_string(require(p)?)?),
        None => Ok((ModelConfig::desk(), TrainConfig::default())),
    }
}

fn require(path: &Path) -> Result<&Path, Error> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(Error::MissingData(format!("{} does not exist", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text)?;
    Ok(())
}

fn run(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Synth { scenes, size, seed, out, split } => {
            let opts = SynthOptions {
                scenes,
                size,
                seed,
                split,
                ..SynthOptions::default()
            };
            let dir = synthesize_dataset(&out, &opts)?;
            println!("wrote {scenes} pairs to {}", dir.display());
        }
        Command::Train { data, config, out, log, split } => {
            let (model, cfg) = load_run_config(config.as_deref())?;
            let items = read_dataset(&data, &split)?;
            let log = log.unwrap_or_else(|| out.with_extension("tsv"));
            let outputs = TrainOutputs {
                checkpoint: Some(out.clone()),
                log: Some(log.clone()),
            };
            let r = train_loop(model, &items, &cfg, &outputs)?;
            println!("params\t{}", r.store.num_elements());
            println!("final_loss\t{:.6}", r.final_loss);
            println!("final_psnr\t{:.4}", r.final_psnr);
            println!("checkpoint\t{}", out.display());
            println!("log\t{}", log.display());
        }
        Command::Dehaze { ckpt, input, out, emit_density, emit_pseudo } => {
            let (net, store) = HazeNet::load(require(&ckpt)?)?;
            let img = load_ppm(require(&input)?)?;
            let res = dehaze_image(&net, &store, &img)?;
            save_ppm(&out, &res.final_image)?;
            if let Some(path) = emit_pseudo {
                save_ppm(path, &res.pseudo)?;
            }
            if let Some(path) = emit_density {
                let map = res
                    .density
                    .ok_or_else(|| Error::Config("checkpoint has no density module".into()))?;
                let jet = colorjet_render(&map)?;
                if jet.clamped > 0 {
                    eprintln!("warning: {} density values outside [0, 1] were clamped", jet.clamped);
                }
                save_ppm(path, &jet.image)?;
            }
        }
        Command::Eval { ckpt, data, report, split } => {
            let (net, store) = HazeNet::load(require(&ckpt)?)?;
            let items = read_dataset(&data, &split)?;
            let r = evaluate(&net, &store, &items)?;
            write_text(&report, &r.to_tsv())?;
            println!("images\t{}", r.rows.len());
            println!("psnr\t{}", hazenet::metrics::format_db(r.mean_psnr));
            println!("ssim\t{:.6}", r.mean_ssim);
        }
        Command::Count { module, channels, hw } => {
            let module: CostModule = module.parse()?;
            print!("{}", count_cost(module, channels, hw[0], hw[1])?.render());
        }
        Command::Gradcheck { module, seed } => {
            let results = run_suite(module.as_deref(), seed)?;
            println!("case\tmax_rel_err\tprobes\tskipped\tstatus");
            let mut failed = 0;
            for r in &results {
                let status = if r.passed() { "ok" } else { "FAIL" };
                failed += usize::from(!r.passed());
                println!("{}\t{:.3e}\t{}\t{}\t{status}", r.name, r.max_rel_err, r.probes, r.skipped);
            }
            let worst = results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max);
            println!("max_rel_err\t{worst:.3e}\ttolerance\t{TOLERANCE:e}");
            if failed > 0 {
                return Err(Failure::Runtime(Error::Config(format!("{failed} gradient check(s) failed"))));
            }
        }
        Command::Ablate { table, data, config, out, split } => {
            let (model, cfg) = load_run_config(config.as_deref())?;
            let items = read_dataset(&data, &split)?;
            let table: u8 = table.parse().map_err(|_| Failure::Usage(format!("bad table `{table}`")))?;
            let tsv = to_tsv(&run_ablation(table, model, &items, &cfg)?);
            match out {
                Some(path) => write_text(&path, &tsv)?,
                None => print!("{tsv}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
