use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use lscmf::io::{self, MatrixFormat};
use lscmf::simulate::{self, ReplicateRecord};
use lscmf::{Centering, EdgeKey, FitOptions, IntegrationResult, ViewLayout};
use rayon::prelude::*;
use serde::Serialize;

mod manifest;

use manifest::{Manifest, MatrixEntry};

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Validation(String),
    /// Anything else: exit code 1.
    Internal(String),
}

impl From<lscmf::Error> for CliError {
    fn from(e: lscmf::Error) -> Self {
        use lscmf::Error as E;
        match e {
            E::Layout(_)
            | E::NonFinite { .. }
            | E::Format(_)
            | E::Csv(_)
            | E::UnknownEdge(_)
            | E::InvalidScenario(_)
            | E::InvalidAspectRatio(_)
            | E::Degenerate(_) => CliError::Validation(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Internal(format!("{}: {e}", path.display()))
}

#[derive(Parser)]
#[command(name = "lscmf", version, about = "Large-scale collective matrix factorization")]
struct Cli {
    /// Worker threads (default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenterArg {
    Rows,
    Columns,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Bin,
}

impl From<FormatArg> for MatrixFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => MatrixFormat::Csv,
            FormatArg::Bin => MatrixFormat::Bin,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the matrices listed in a JSON manifest.
    Fit {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Center matrices before fitting.
        #[arg(long, value_enum)]
        center: Option<CenterArg>,
        /// Format of the factor and value files.
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
    /// Run replicates of a built-in scenario and append scores to a CSV file.
    Simulate {
        #[arg(long)]
        scenario: u32,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value_t = 25)]
        reps: u64,
        /// Seed of the first replicate; replicate `k` uses `seed + k`.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write one replicate of a built-in scenario as matrix files plus a
    /// manifest.
    Generate {
        #[arg(long)]
        scenario: u32,
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: FormatArg,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(1);
        }
    }
    let outcome = match cli.command {
        Command::Fit {
            manifest,
            out,
            center,
            format,
        } => cmd_fit(&manifest, &out, center, format.into()),
        Command::Simulate {
            scenario,
            scale,
            reps,
            seed,
            out,
        } => cmd_simulate(scenario, scale, reps, seed, &out),
        Command::Generate {
            scenario,
            scale,
            seed,
            out,
            format,
        } => cmd_generate(scenario, scale, seed, &out, format.into()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

fn values_stem(layout: &ViewLayout, edge: &EdgeKey) -> String {
    let mut s = format!(
        "values_{}_{}",
        file_stem(layout.view_name(edge.row_view)),
        file_stem(layout.view_name(edge.col_view))
    );
    if edge.layer != 0 {
        s.push_str(&format!("_L{}", edge.layer));
    }
    s
}

#[derive(Serialize)]
struct EdgeValues<'a> {
    row_view: &'a str,
    col_view: &'a str,
    layer: u32,
    values: &'a [f64],
}

fn write_outputs(dir: &Path, result: &IntegrationResult, format: MatrixFormat) -> Result<(), CliError> {
    let layout = &result.layout;
    let ext = format.extension();
    for (view, factors) in &result.factors {
        let path = dir.join(format!("factors_{}.{ext}", file_stem(layout.view_name(*view))));
        io::write_matrix(&path, factors.as_ref(), format)?;
    }
    for (edge, values) in &result.values {
        let path = dir.join(format!("{}.{ext}", values_stem(layout, edge)));
        let column = faer::Mat::from_fn(values.len(), 1, |i, _| values[i]);
        io::write_matrix(&path, column.as_ref(), format)?;
    }

    let mut graph = lscmf::fmgraph::graph_to_json(&result.graph, layout);
    let values: Vec<EdgeValues<'_>> = result
        .values
        .iter()
        .map(|(e, v)| EdgeValues {
            row_view: layout.view_name(e.row_view),
            col_view: layout.view_name(e.col_view),
            layer: e.layer,
            values: v,
        })
        .collect();
    graph["values"] = serde_json::to_value(values).map_err(|e| CliError::Internal(e.to_string()))?;
    write_json(&dir.join("graph.json"), &graph)?;
    write_json(&dir.join("diagnostics.json"), &result.diagnostics)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes into a fresh sibling directory first so that a failure leaves
/// `out` untouched, then moves the result into place.
fn write_atomically(out: &Path, fill: impl FnOnce(&Path) -> Result<(), CliError>) -> Result<(), CliError> {
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(io_err(&parent))?;
    let staging = tempfile::Builder::new()
        .prefix(".lscmf-")
        .tempdir_in(&parent)
        .map_err(io_err(&parent))?;
    fill(staging.path())?;
    if out.exists() {
        if !out.is_dir() {
            return Err(CliError::Validation(format!("`{}` exists and is not a directory", out.display())));
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(staging.path())
            .map_err(io_err(staging.path()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<Result<_, _>>()
            .map_err(io_err(staging.path()))?;
        entries.sort();
        for src in entries {
            let dst = out.join(src.file_name().expect("directory entry"));
            fs::rename(&src, &dst).map_err(io_err(&dst))?;
        }
    } else {
        let staged = staging.keep();
        fs::rename(&staged, out).map_err(io_err(out))?;
    }
    Ok(())
}

fn cmd_fit(manifest_path: &Path, out: &Path, center: Option<CenterArg>, format: MatrixFormat) -> Result<(), CliError> {
    let manifest = manifest::read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let (layout, matrices) = manifest::load(&manifest, base)?;
    let options = FitOptions {
        centering: center.map(|c| match c {
            CenterArg::Rows => Centering::Rows,
            CenterArg::Columns => Centering::Columns,
            CenterArg::Both => Centering::Both,
        }),
        ..FitOptions::default()
    };
    let result = lscmf::fit(&layout, matrices, &options)?;
    write_atomically(out, |dir| write_outputs(dir, &result, format))?;
    let counts = result.class_counts();
    println!(
        "{} factors: {}",
        result.n_factors(),
        simulate::partition_label(&counts, &layout)
    );
    Ok(())
}

fn cmd_simulate(scenario: u32, scale: usize, reps: u64, seed: u64, out: &Path) -> Result<(), CliError> {
    // reject bad arguments before doing any work
    simulate::builtin_scenario(scenario, scale, seed)?;
    let records: Vec<ReplicateRecord> = (0..reps)
        .into_par_iter()
        .map(|k| simulate::run_replicate(scenario, scale, seed.wrapping_add(k)))
        .collect::<Result<_, _>>()?;

    let header = fs::metadata(out).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(out)
        .map_err(io_err(out))?;
    if !records.is_empty() {
        simulate::write_records(file, &records, header)?;
    }

    if !records.is_empty() {
        let spec = simulate::builtin_scenario(scenario, scale, seed)?;
        let exact = records.iter().filter(|r| r.score.exact_match).count();
        let partitions: Vec<_> = records.iter().map(|r| r.score.estimated_partition.clone()).collect();
        let median = simulate::median_partition(&partitions);
        println!("exact matches: {exact}/{}", records.len());
        println!("median partition: {}", simulate::partition_label(&median, &spec.layout));
        println!(
            "true partition:   {}",
            simulate::partition_label(&simulate::true_partition(&spec), &spec.layout)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct Truth {
    seed: u64,
    noise_sd: Vec<(String, String, u32, f64)>,
    planted_values: Vec<(String, String, u32, Vec<f64>)>,
    partition: String,
}

fn cmd_generate(scenario: u32, scale: usize, seed: u64, out: &Path, format: MatrixFormat) -> Result<(), CliError> {
    let spec = simulate::builtin_scenario(scenario, scale, seed)?;
    let data = simulate::generate(&spec)?;
    let layout = &spec.layout;
    let names = |e: &EdgeKey| {
        (
            layout.view_name(e.row_view).to_string(),
            layout.view_name(e.col_view).to_string(),
            e.layer,
        )
    };
    write_atomically(out, |dir| {
        let mut entries = Vec::new();
        for m in &data.matrices {
            let file = format!("Y_{}_{}.{}", file_stem(layout.view_name(m.key.row_view)), file_stem(layout.view_name(m.key.col_view)), format.extension());
            io::write_matrix(&dir.join(&file), m.data().as_ref(), format)?;
            let (row_view, col_view, layer) = names(&m.key);
            entries.push(MatrixEntry {
                row_view,
                col_view,
                layer,
                path: PathBuf::from(file),
                format: Some(format),
            });
        }
        let manifest = Manifest {
            views: layout.view_ids().map(|v| (layout.view_name(v).to_string(), layout.dim(v))).collect(),
            matrices: entries,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        let truth = Truth {
            seed,
            noise_sd: data
                .noise_sd
                .iter()
                .map(|(e, s)| {
                    let (a, b, l) = names(e);
                    (a, b, l, *s)
                })
                .collect(),
            planted_values: spec
                .planted_values
                .iter()
                .map(|(e, x)| {
                    let (a, b, l) = names(e);
                    (a, b, l, x.clone())
                })
                .collect(),
            partition: simulate::partition_label(&simulate::true_partition(&spec), layout),
        };
        write_json(&dir.join("truth.json"), &truth)?;
        Ok(())
    })?;
    let mut stdout = std::io::stdout();
    writeln!(stdout, "wrote scenario {scenario} (scale {scale}, seed {seed}) to {}", out.display())
        .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}
