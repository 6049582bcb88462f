//! The `meshgrade` command line.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::dataset::{
    self, gen_base_grid, load_dataset, make_synthetic, DatasetError, Profile, SynthConfig,
};
use crate::graph::{
    build_element_graph_with, convert_batch, write_graph_binary, write_graph_json, DiagonalMode,
    GraphError, GraphMode,
};
use crate::mesh::{self, MeshError, StructuredMesh};
use crate::nn::NnError;
use crate::tensor::TensorError;
use crate::train::{
    evaluate, read_checkpoint, run_ablation, split_dataset, train, write_checkpoint, Checkpoint,
    RunConfig, Split, TrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<MeshError> for CliError {
    fn from(e: MeshError) -> Self {
        data(e)
    }
}

impl From<GraphError> for CliError {
    fn from(e: GraphError) -> Self {
        data(e)
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        data(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteLoss { .. }
            | TrainError::UnnormalizedInput(_)
            | TrainError::Tensor(_)
            | TrainError::Nn(NnError::Tensor(_)) => CliError::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::Nn(NnError::InvalidConfig(_)) => {
                CliError::Usage(e.to_string())
            }
            _ => data(e),
        }
    }
}

impl From<NnError> for CliError {
    fn from(e: NnError) -> Self {
        TrainError::Nn(e).into()
    }
}

impl From<TensorError> for CliError {
    fn from(e: TensorError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Parser)]
#[command(
    name = "meshgrade",
    version,
    about = "Structured mesh quality evaluation with graph attention networks"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Point,
    Element,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProfileArg {
    Rect,
    Annulus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert meshes (Plot3D, or native JSON when the extension is .json) to graph files.
    Convert {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Proximity radius for point mode; defaults to 1.5 times the shortest mesh edge.
        #[arg(long)]
        radius: Option<f64>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Write the compact binary format (.mqeg) instead of JSON.
        #[arg(long)]
        binary: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cell quality report as CSV.
    Metrics {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a balanced synthetic dataset with controlled defects.
    Synth {
        #[arg(long)]
        per_label: usize,
        /// Grid size in nodes, as WxH.
        #[arg(long, value_parser = parse_grid)]
        grid: (usize, usize),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = ProfileArg::Annulus)]
        profile: ProfileArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a classifier and write the best-validation checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// JSON document with `model` and `train` sections; missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Per-epoch CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Evaluate a checkpoint; writes confusion.csv and summary.csv into the output directory.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time element-graph conversion of one mesh on a single thread.
    BenchConvert {
        /// Mesh file; when absent a rect base grid of --grid nodes is used.
        input: Option<PathBuf>,
        #[arg(long, value_parser = parse_grid, default_value = "191x161")]
        grid: (usize, usize),
        #[arg(long, default_value_t = 5)]
        repeat: usize,
        /// Use a unit diagonal in the node adjacency.
        #[arg(long)]
        diag_ones: bool,
    },
    /// Test accuracy over every activation and pooling ratio, as CSV.
    Ablation {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_grid(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w = w.parse().map_err(|e| format!("{s:?}: {e}"))?;
    let h = h.parse().map_err(|e| format!("{s:?}: {e}"))?;
    Ok((w, h))
}

/// Tracks files written by a command so they can be removed if it fails.
#[derive(Default)]
struct Outputs(Vec<PathBuf>);

impl Outputs {
    fn write(&mut self, path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| data(format!("{}: {e}", parent.display())))?;
        }
        self.0.push(path.to_path_buf());
        fs::write(path, contents).map_err(|e| data(format!("{}: {e}", path.display())))
    }

    fn discard(&self) {
        for p in &self.0 {
            let _ = fs::remove_file(p);
        }
    }
}

pub fn read_mesh(path: &Path) -> Result<StructuredMesh> {
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let parsed = if path.extension().is_some_and(|e| e == "json") {
        mesh::parse_native(&text)
    } else {
        mesh::parse_plot3d(&text)
    };
    let mut m = parsed.map_err(|e| data(format!("{}: {e}", path.display())))?;
    if m.name().is_empty() {
        m.set_name(path.file_stem().unwrap_or_default().to_string_lossy());
    }
    Ok(m)
}

fn read_run_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load(dir: &Path) -> Result<dataset::LabeledGraphDataset> {
    let ds = load_dataset(dir)?;
    if !ds.skipped.is_empty() {
        eprintln!(
            "skipped {} of {} files",
            ds.skipped.len(),
            ds.skipped.len() + ds.len()
        );
        for (file, why) in &ds.skipped {
            eprintln!("  {file}: {why}");
        }
    }
    Ok(ds)
}

pub fn run(cli: Cli) -> Result<()> {
    let mut outputs = Outputs::default();
    let result = dispatch(cli.command, &mut outputs);
    if result.is_err() {
        outputs.discard();
    }
    result
}

fn dispatch(command: Command, outputs: &mut Outputs) -> Result<()> {
    match command {
        Command::Convert {
            mode,
            radius,
            jobs,
            binary,
            inputs,
            out,
        } => {
            if radius.is_some_and(|r| r <= 0.0) {
                return Err(CliError::Usage(format!(
                    "--radius must be positive, got {}",
                    radius.unwrap_or_default()
                )));
            }
            let meshes = inputs
                .iter()
                .map(|p| read_mesh(p))
                .collect::<Result<Vec<_>>>()?;
            let mode = match mode {
                ModeArg::Point => GraphMode::Point,
                ModeArg::Element => GraphMode::Element,
            };
            for (path, graph) in inputs
                .iter()
                .zip(convert_batch(&meshes, mode, radius, jobs))
            {
                let g = graph.map_err(|e| data(format!("{}: {e}", path.display())))?;
                let stem = path.file_stem().unwrap_or_default().to_string_lossy();
                if binary {
                    outputs.write(&out.join(format!("{stem}.mqeg")), write_graph_binary(&g))?;
                } else {
                    outputs.write(&out.join(format!("{stem}.json")), write_graph_json(&g))?;
                }
            }
            println!("converted {} meshes", inputs.len());
        }
        Command::Metrics { input, out } => {
            let report = mesh::mesh_quality_report(&read_mesh(&input)?)?;
            outputs.write(&out, report.to_csv())?;
        }
        Command::Synth {
            per_label,
            grid: (ni, nj),
            seed,
            profile,
            out,
        } => {
            if per_label == 0 {
                return Err(CliError::Usage("--per-label must be at least 1".into()));
            }
            let profile = match profile {
                ProfileArg::Rect => Profile::Rect,
                ProfileArg::Annulus => Profile::Annulus,
            };
            let ds = make_synthetic(&SynthConfig {
                per_label,
                ni,
                nj,
                seed,
                profile,
            })?;
            let written = dataset::write_dataset(&ds, &out);
            match written {
                Ok(paths) => outputs.0.extend(paths),
                Err(e) => {
                    let _ = fs::remove_dir_all(out.join("items"));
                    return Err(e.into());
                }
            }
            println!("wrote {} items to {}", ds.len(), out.display());
        }
        Command::Train {
            data: dir,
            config,
            out,
            log,
        } => {
            let cfg = read_run_config(config.as_deref())?;
            cfg.model.validate()?;
            cfg.train.validate()?;
            let ds = load(&dir)?;
            let split = split_dataset(&ds.labels(), cfg.train.seed)?;
            let outcome = train(&ds, &split, &cfg.model, &cfg.train)?;
            let ck = Checkpoint {
                model: outcome.model.clone(),
                train: Some(cfg.train.clone()),
                best_epoch: Some(outcome.best_epoch),
            };
            outputs.write(&out, write_checkpoint(&ck))?;
            if let Some(log) = log {
                outputs.write(&log, outcome.log_csv())?;
            }
            println!(
                "best epoch {} val loss {:.6}",
                outcome.best_epoch, outcome.best_val_loss
            );
        }
        Command::Eval {
            ckpt,
            data: dir,
            split,
            out,
        } => {
            let text =
                fs::read_to_string(&ckpt).map_err(|e| data(format!("{}: {e}", ckpt.display())))?;
            let ck = read_checkpoint(&text)?;
            let ds = load(&dir)?;
            let seed = ck
                .train
                .as_ref()
                .map_or(TrainConfig::default().seed, |t| t.seed);
            let Split { train, val, test } = split_dataset(&ds.labels(), seed)?;
            let idx = match split {
                SplitArg::Train => train,
                SplitArg::Val => val,
                SplitArg::Test => test,
            };
            let report = evaluate(&ck.model, &ds, &idx)?;
            outputs.write(&out.join("confusion.csv"), report.confusion_csv())?;
            outputs.write(&out.join("summary.csv"), report.summary_csv())?;
            print!("{}", report.summary_csv());
        }
        Command::BenchConvert {
            input,
            grid: (ni, nj),
            repeat,
            diag_ones,
        } => {
            if repeat == 0 {
                return Err(CliError::Usage("--repeat must be at least 1".into()));
            }
            let mesh = match input {
                Some(p) => read_mesh(&p)?,
                None => gen_base_grid(ni, nj, Profile::Rect)?,
            };
            let diag = if diag_ones {
                DiagonalMode::Ones
            } else {
                DiagonalMode::Zero
            };
            let (mean, std) = bench_convert(&mesh, diag, repeat)?;
            println!("cells,repeat,diagonal,mean_s,std_s");
            println!(
                "{},{repeat},{},{mean:.6},{std:.6}",
                mesh.cell_count(),
                if diag_ones { "ones" } else { "zero" }
            );
        }
        Command::Ablation {
            data: dir,
            config,
            out,
        } => {
            let cfg = read_run_config(config.as_deref())?;
            cfg.model.validate()?;
            cfg.train.validate()?;
            let ds = load(&dir)?;
            let split = split_dataset(&ds.labels(), cfg.train.seed)?;
            let grid = run_ablation(&ds, &split, &cfg.model, &cfg.train);
            outputs.write(&out, grid.to_csv())?;
            if !grid.all_ok() {
                let first = grid
                    .cells
                    .iter()
                    .flatten()
                    .find_map(|c| c.as_ref().err().cloned());
                return Err(CliError::Numeric(
                    first.unwrap_or_else(|| "non-finite accuracy".into()),
                ));
            }
        }
    }
    Ok(())
}

/// Mean and population standard deviation of the wall time, in seconds, of
/// `repeat` element-graph conversions.
pub fn bench_convert(
    mesh: &StructuredMesh,
    diag: DiagonalMode,
    repeat: usize,
) -> Result<(f64, f64)> {
    let mut times = Vec::with_capacity(repeat);
    for _ in 0..repeat {
        let t = Instant::now();
        std::hint::black_box(build_element_graph_with(std::hint::black_box(mesh), diag)?);
        times.push(t.elapsed().as_secs_f64());
    }
    let mean = times.iter().sum::<f64>() / repeat as f64;
    let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / repeat as f64;
    Ok((mean, var.sqrt()))
}
