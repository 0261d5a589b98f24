//! `meshcls` command line: dataset generation, augmentation, training,
//! evaluation, classification and gradient checks.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use meshcls::augment::Descriptor;
use meshcls::mesh_io::{load_manifest_file, parse_mesh, write_mesh};
use meshcls::models::gradcheck::{gradcheck_arch, DEFAULT_TOLERANCE};
use meshcls::models::{Arch, Checkpoint, PartInput};
use meshcls::synthgen::{generate_dataset, read_spec, spec_path};
use meshcls::train_eval::{build_variant_suite, evaluate, report, train, Dataset, OptimizerConfig, TrainConfig, DEFAULT_BATCH_SIZE};

#[derive(Parser)]
#[command(name = "meshcls", version, about = "Classify CAE part meshes with GCN, FCNN and PointNet models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ArchArg {
    Gcn,
    Fcnn,
    Pointnet,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Arch {
        match a {
            ArchArg::Gcn => Arch::Gcn,
            ArchArg::Fcnn => Arch::Fcnn,
            ArchArg::Pointnet => Arch::PointNet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic part catalog: one mesh and spec per class plus manifest.csv
    Gen {
        /// Number of classes (one part each)
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply one variant transform to a mesh
    Augment {
        #[arg(long)]
        mesh: PathBuf,
        /// Descriptor such as `rotate(az=1,deg=30)#0`; spec-driven kinds read
        /// the `.spec` file next to the mesh
        #[arg(long)]
        transform: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a manifest and write a checkpoint
    Train {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint path
        #[arg(long)]
        out: PathBuf,
        /// History CSV path [default: checkpoint path with .history.csv]
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_BATCH_SIZE)]
        batch_size: usize,
        #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
        optimizer: OptimizerArg,
        /// Learning rate [default: 0.01 for gcn, 0.001 otherwise]
        #[arg(long)]
        lr: Option<f64>,
        /// SGD momentum
        #[arg(long, default_value_t = 0.9)]
        momentum: f64,
        /// Keep manifest order in every epoch
        #[arg(long)]
        no_shuffle: bool,
    },
    /// Evaluate checkpoints on the variant suite of base parts
    Eval {
        #[arg(long = "ckpt", required = true, num_args = 1..)]
        ckpts: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        /// Base part name; repeat for several parts
        #[arg(long = "part", required = true, num_args = 1..)]
        parts: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Markdown report path [default: stdout]
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify one mesh
    Classify {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        mesh: PathBuf,
    },
    /// Finite-difference gradient check of a seeded toy model
    Gradcheck {
        #[arg(long, value_enum)]
        arch: ArchArg,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
    },
}

/// A domain failure, printed as `error: <code>: <detail>`.
struct Failure {
    code: &'static str,
    detail: String,
}

trait Coded: Display {
    fn code(&self) -> &'static str;
}

macro_rules! coded {
    ($($t:ty),*) => {$(
        impl Coded for $t {
            fn code(&self) -> &'static str {
                <$t>::code(self)
            }
        }
    )*};
}

coded!(
    meshcls::mesh_io::MeshError,
    meshcls::mesh_io::ManifestError,
    meshcls::models::ModelError,
    meshcls::augment::AugmentError,
    meshcls::synthgen::SynthError,
    meshcls::train_eval::TrainError
);

impl<E: Coded> From<E> for Failure {
    fn from(e: E) -> Failure {
        Failure { code: e.code(), detail: e.to_string() }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure { code: "io", detail: format!("{}: {e}", path.display()) }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| io_failure(path, e))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_failure(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Gen { classes, seed, out } => {
            let manifest = generate_dataset(classes, seed, &out)?;
            println!("wrote {} parts and {}", manifest.entries.len(), out.join("manifest.csv").display());
        }
        Command::Augment { mesh, transform, out } => {
            let d: Descriptor = transform.parse()?;
            let base = parse_mesh(&read(&mesh)?)?;
            let sidecar = spec_path(&mesh);
            let spec = if d.needs_spec() && sidecar.is_file() { Some(read_spec(&sidecar)?) } else { None };
            let variant = d.apply(&base, spec.as_ref())?;
            write(&out, &write_mesh(&variant))?;
            println!("{d} nodes={} elements={}", variant.node_count(), variant.element_count());
        }
        Command::Train { arch, manifest, epochs, seed, out, history, batch_size, optimizer, lr, momentum, no_shuffle } => {
            let manifest = load_manifest_file(&manifest)?;
            let data = Dataset::load(&manifest)?;
            let mut cfg = TrainConfig::default_for(arch.into(), &data, epochs, seed);
            cfg.batch_size = batch_size;
            cfg.shuffle = !no_shuffle;
            let lr = lr.unwrap_or(match cfg.optimizer {
                OptimizerConfig::Adam { lr } | OptimizerConfig::Sgd { lr, .. } => lr,
            });
            cfg.optimizer = match optimizer {
                OptimizerArg::Adam => OptimizerConfig::Adam { lr },
                OptimizerArg::Sgd => OptimizerConfig::Sgd { lr, momentum },
            };
            let (ck, hist) = train(&cfg, &data)?;
            ck.save(&out)?;
            let history = history.unwrap_or_else(|| out.with_extension("history.csv"));
            write(&history, &hist.to_csv())?;
            let last = hist.epochs.last().expect("epochs >= 1");
            println!("epochs={} loss={:.6} train_accuracy={:.4} checkpoint={}", last.epoch, last.loss, last.train_accuracy, out.display());
        }
        Command::Eval { ckpts, manifest, parts, seed, report: report_path } => {
            let manifest = load_manifest_file(&manifest)?;
            let mut suite = Vec::new();
            for p in &parts {
                suite.extend(build_variant_suite(&manifest, p, seed)?);
            }
            let mut results = Vec::with_capacity(ckpts.len());
            for path in &ckpts {
                results.push(evaluate(&Checkpoint::load(path)?, &suite));
            }
            let text = report(&results)?;
            match report_path {
                Some(path) => {
                    write(&path, &text)?;
                    for line in text.lines().filter(|l| l.contains("accuracy:")) {
                        println!("{}", line.trim_start_matches("- "));
                    }
                }
                None => print!("{text}"),
            }
        }
        Command::Classify { ckpt, mesh } => {
            let ck = Checkpoint::load(&ckpt)?;
            let input = PartInput::from_mesh(&parse_mesh(&read(&mesh)?)?)?;
            let p = ck.model.classify(&input)?;
            println!("label={} p={:.6} name={}", p.label, p.probability, ck.class_name(p.label));
        }
        Command::Gradcheck { arch, tolerance } => {
            let rep = gradcheck_arch(arch.into(), tolerance)?;
            println!("{rep}");
            if !rep.passed() {
                return Err(Failure {
                    code: "gradcheck_failed",
                    detail: format!("max relative error {:.3e} is not below {tolerance:.1e}", rep.max_rel_err()),
                });
            }
        }
    }
    Ok(())
}

/// Usage errors exit 2 and always show the synopsis of the subcommand
/// that was being parsed.
fn parse_args() -> Result<Cli, ExitCode> {
    let err = match Cli::try_parse() {
        Ok(cli) => return Ok(cli),
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => e,
    };
    let rendered = err.render().to_string();
    eprint!("{rendered}");
    if !rendered.contains("Usage:") {
        let mut cmd = Cli::command();
        cmd.build();
        let sub = std::env::args().nth(1).and_then(|name| cmd.find_subcommand(&name).map(|c| c.clone().render_usage()));
        eprintln!("\n{}", sub.unwrap_or_else(|| cmd.render_usage()));
    }
    Err(ExitCode::from(2))
}

fn main() -> ExitCode {
    let cli = match parse_args() {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.code, f.detail.replace('\n', " "));
            ExitCode::from(1)
        }
    }
}
