use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use blocksparse::bcsc::BCSC_MAGIC;
use blocksparse::bench::{self, BenchConfig, BenchShape};
use blocksparse::dense::DENSE_MAGIC;
use blocksparse::footprint::{gpu_calc, FootprintQuery, MlpShare};
use blocksparse::pruner::{simulate_regrowth, write_reports_csv};
use blocksparse::trainer::{train, DenseSide, TrainConfig};
use blocksparse::{BlockSparseMatrix, Error, Matrix, Result, SparsitySchedule};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "blocksparse", version, about = "Block-sparse kernels and prune-and-grow training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time the block-sparse product against the full-grid baseline.
    Bench(BenchArgs),
    /// Print the sparsity schedule, optionally with a regrowth simulation.
    Schedule(ScheduleArgs),
    /// GPUs needed to hold the weights, dense and with sparse MLPs.
    GpuCalc(GpuCalcArgs),
    /// Train a toy model from a config file.
    Train(TrainArgs),
    /// Convert between dense (DNSE) and BCSC matrix files.
    Convert(ConvertArgs),
}

#[derive(Clone, Copy, ValueEnum, PartialEq, Eq)]
enum OutFormat {
    Csv,
    Json,
}

#[derive(Args)]
struct Output {
    /// Output format.
    #[arg(long = "out", value_enum, default_value = "csv")]
    format: OutFormat,
    /// Write to this file instead of stdout.
    #[arg(long, short = 'o')]
    output: Option<PathBuf>,
}

impl Output {
    fn writer(&self) -> Result<Box<dyn Write>> {
        Ok(match &self.output {
            Some(p) => Box::new(BufWriter::new(File::create(p)?)),
            None => Box::new(io::stdout().lock()),
        })
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Comma-separated sizes, each N or MxNxK.
    #[arg(long, value_delimiter = ',', default_value = "1024")]
    sizes: Vec<BenchShape>,
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    block_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,0.7,0.9,0.95")]
    sparsities: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Kernel worker threads (0 = all cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = blocksparse::bspmm::DEFAULT_ROW_TILE)]
    row_tile: usize,
    /// Refuse shapes whose buffers exceed this many MiB.
    #[arg(long, default_value_t = bench::DEFAULT_MAX_BYTES >> 20)]
    max_mib: u64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct ScheduleArgs {
    /// TOML or JSON schedule file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    s_init: Option<f64>,
    #[arg(long)]
    s_max: Option<f64>,
    /// Total iterations m.
    #[arg(long, short = 'm')]
    iters: Option<usize>,
    /// Decay d.
    #[arg(long, short = 'd')]
    decay: Option<usize>,
    #[arg(long)]
    step_size: Option<usize>,
    /// Print every n-th iteration (the last one is always printed).
    #[arg(long, default_value_t = 1)]
    every: usize,
    /// Run prune-and-grow on a random weight at each refresh instead.
    #[arg(long)]
    simulate: bool,
    #[arg(long, default_value_t = 256)]
    rows: usize,
    #[arg(long, default_value_t = 256)]
    cols: usize,
    #[arg(long, default_value_t = 16)]
    block: usize,
    /// Gradient correlation with the weight in the simulation (1 = G equals W).
    #[arg(long, default_value_t = 0.5)]
    grad_correlation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct GpuCalcArgs {
    /// TOML or JSON query file (e.g. a model preset); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    params: Option<f64>,
    /// Fraction of parameters in sparsifiable MLP weights.
    #[arg(long, conflicts_with = "mlp_params")]
    mlp_fraction: Option<f64>,
    /// Explicit MLP parameter count.
    #[arg(long)]
    mlp_params: Option<f64>,
    /// Comma-separated sparsities; one output row each.
    #[arg(long, value_delimiter = ',')]
    sparsities: Vec<f64>,
    #[arg(long)]
    bytes_per_param: Option<f64>,
    #[arg(long)]
    hbm_bytes: Option<f64>,
    #[command(flatten)]
    out: Output,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML or JSON training config.
    #[arg(long)]
    config: PathBuf,
    /// Directory for the log, summary and final BCSC weights.
    #[arg(long, default_value = "train_out")]
    out_dir: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the final sparsity.
    #[arg(long)]
    s_max: Option<f64>,
    /// Override the iterations between mask refreshes.
    #[arg(long)]
    step_size: Option<usize>,
    /// Override the decay length `d`.
    #[arg(long)]
    decay: Option<usize>,
    /// Override the number of MLP blocks kept dense.
    #[arg(long)]
    dense_layers: Option<usize>,
    /// End of the stack the dense blocks sit on.
    #[arg(long, value_enum)]
    dense_side: Option<Side>,
    #[arg(long)]
    learning_rate: Option<f32>,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Side {
    Left,
    Right,
}

#[derive(Args)]
struct ConvertArgs {
    input: PathBuf,
    output: PathBuf,
    /// Block size for dense to BCSC; all-zero blocks are dropped.
    #[arg(long)]
    block: Option<usize>,
}

/// Leading `#` line of every CSV: tool version, seed and the full config.
fn csv_header_line<C: Serialize>(w: &mut dyn Write, seed: u64, config: &C) -> Result<()> {
    let cfg = serde_json::to_string(config).map_err(|e| Error::Config(e.to_string()))?;
    writeln!(w, "# blocksparse {VERSION} seed={seed} config={cfg}")?;
    Ok(())
}

#[derive(Serialize)]
struct Envelope<'a, C: Serialize, R: Serialize> {
    version: &'a str,
    seed: u64,
    config: &'a C,
    records: &'a [R],
}

fn emit<C: Serialize, R: Serialize>(
    out: &Output,
    seed: u64,
    config: &C,
    records: &[R],
    csv_body: impl FnOnce(&[R], &mut dyn Write) -> Result<()>,
) -> Result<()> {
    let mut w = out.writer()?;
    match out.format {
        OutFormat::Csv => {
            csv_header_line(&mut *w, seed, config)?;
            csv_body(records, &mut *w)?;
        }
        OutFormat::Json => {
            let env = Envelope { version: VERSION, seed, config, records };
            serde_json::to_writer_pretty(&mut *w, &env).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn serialize_rows<R: Serialize>(records: &[R], w: &mut dyn Write) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

fn read_config_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

/// TOML, or JSON when the text starts with `{`.
fn parse_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_config_text(path)?;
    let res = if text.trim_start().starts_with('{') {
        serde_json::from_str(&text).map_err(|e| format!("line {}, column {}: {e}", e.line(), e.column()))
    } else {
        toml::from_str(&text).map_err(|e| e.to_string())
    };
    res.map_err(|m| Error::Config(format!("{}: {m}", path.display())))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let cfg = BenchConfig {
        shapes: a.sizes,
        block_sizes: a.block_sizes,
        sparsities: a.sparsities,
        trials: a.trials,
        seed: a.seed,
        row_tile: a.row_tile,
        max_bytes: a.max_mib << 20,
    };
    cfg.validate()?;
    let records = bench::with_threads(a.threads, || bench::run_bench(&cfg))??;
    emit(&a.out, cfg.seed, &cfg, &records, |r, w| bench::write_csv(r, w))
}

#[derive(Serialize)]
struct ScheduleRow {
    iter: usize,
    s_target: f64,
    refresh: bool,
}

#[derive(Serialize)]
struct SimulationConfig {
    schedule: SparsitySchedule,
    rows: usize,
    cols: usize,
    block: usize,
    grad_correlation: f64,
}

fn cmd_schedule(a: ScheduleArgs) -> Result<()> {
    #[derive(serde::Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Partial {
        s_init: Option<f64>,
        s_max: Option<f64>,
        total_iters: Option<usize>,
        decay: Option<usize>,
        step_size: Option<usize>,
    }
    let base: Partial = match &a.config {
        Some(p) => parse_config(p)?,
        None => Partial::default(),
    };
    let sched = SparsitySchedule::new(
        a.s_init.or(base.s_init).unwrap_or(0.0),
        a.s_max.or(base.s_max).unwrap_or(0.8),
        a.iters.or(base.total_iters).unwrap_or(10_000),
        a.decay.or(base.decay).unwrap_or(0),
        a.step_size.or(base.step_size).unwrap_or(1),
    )?;
    if a.every == 0 {
        return Err(Error::InvalidArgument("--every must be at least 1".into()));
    }
    if a.simulate {
        let cfg = SimulationConfig {
            schedule: sched,
            rows: a.rows,
            cols: a.cols,
            block: a.block,
            grad_correlation: a.grad_correlation,
        };
        let reports = simulate_regrowth(&sched, a.rows, a.cols, a.block, a.grad_correlation, a.seed)?;
        return emit(&a.out, a.seed, &cfg, &reports, |r, w| write_reports_csv(r, w));
    }
    let m = sched.total_iters;
    let rows = (0..=m)
        .filter(|&i| i % a.every == 0 || i == m)
        .map(|i| {
            Ok(ScheduleRow { iter: i, s_target: sched.target_sparsity(i)?, refresh: i < m && sched.is_refresh(i) })
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&a.out, a.seed, &sched, &rows, |r, w| serialize_rows(r, w))
}

#[derive(Serialize)]
struct GpuRow {
    sparsity: f64,
    mlp_params: f64,
    dense_bytes: f64,
    sparse_bytes: f64,
    dense_gpus: u64,
    sparse_gpus: u64,
    reduction: f64,
    memory_ratio: f64,
}

fn cmd_gpu_calc(a: GpuCalcArgs) -> Result<()> {
    #[derive(serde::Deserialize, Default)]
    #[serde(deny_unknown_fields)]
    struct Partial {
        params: Option<f64>,
        mlp: Option<MlpShare>,
        #[serde(default)]
        sparsities: Vec<f64>,
        sparsity: Option<f64>,
        bytes_per_param: Option<f64>,
        hbm_bytes: Option<f64>,
    }
    let base: Partial = match &a.config {
        Some(p) => parse_config(p)?,
        None => Partial::default(),
    };
    let params = a
        .params
        .or(base.params)
        .ok_or_else(|| Error::InvalidArgument("--params (or a config with params) is required".into()))?;
    let mlp = match (a.mlp_fraction, a.mlp_params) {
        (Some(f), _) => MlpShare::Fraction(f),
        (None, Some(n)) => MlpShare::Count(n),
        (None, None) => base.mlp.ok_or_else(|| {
            Error::InvalidArgument("one of --mlp-fraction, --mlp-params or a config mlp entry is required".into())
        })?,
    };
    let mut sparsities = if !a.sparsities.is_empty() {
        a.sparsities
    } else if !base.sparsities.is_empty() {
        base.sparsities
    } else {
        base.sparsity.into_iter().collect()
    };
    if sparsities.is_empty() {
        sparsities = vec![0.0, 0.5, 0.7, 0.9, 0.95];
    }
    let mut template = FootprintQuery::new(params, mlp, 0.0);
    if let Some(b) = a.bytes_per_param.or(base.bytes_per_param) {
        template.bytes_per_param = b;
    }
    if let Some(h) = a.hbm_bytes.or(base.hbm_bytes) {
        template.hbm_bytes = h;
    }
    let rows = sparsities
        .iter()
        .map(|&s| {
            let q = FootprintQuery { sparsity: s, ..template };
            let r = gpu_calc(&q)?;
            Ok(GpuRow {
                sparsity: s,
                mlp_params: r.mlp_params,
                dense_bytes: r.dense_bytes,
                sparse_bytes: r.sparse_bytes,
                dense_gpus: r.dense_gpus,
                sparse_gpus: r.sparse_gpus,
                reduction: r.reduction,
                memory_ratio: r.dense_bytes / r.sparse_bytes,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    #[derive(Serialize)]
    struct Meta<'a> {
        params: f64,
        mlp: MlpShare,
        sparsities: &'a [f64],
        bytes_per_param: f64,
        hbm_bytes: f64,
    }
    let meta = Meta {
        params: template.params,
        mlp: template.mlp,
        sparsities: &sparsities,
        bytes_per_param: template.bytes_per_param,
        hbm_bytes: template.hbm_bytes,
    };
    emit(&a.out, 0, &meta, &rows, |r, w| serialize_rows(r, w))
}

#[derive(Serialize)]
struct PruneRow {
    iter: usize,
    layer: usize,
    matrix: usize,
    s_target: f64,
    kept: usize,
    regrown: usize,
    regrown_ratio: f64,
    s_achieved: f64,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = TrainConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.s_max {
        cfg.schedule.s_max = s;
    }
    if let Some(s) = a.step_size {
        cfg.schedule.step_size = s;
    }
    if let Some(d) = a.decay {
        cfg.schedule.decay = d;
    }
    if let Some(l) = a.dense_layers {
        cfg.dense_layers = l;
    }
    if let Some(side) = a.dense_side {
        cfg.dense_side = match side {
            Side::Left => DenseSide::Left,
            Side::Right => DenseSide::Right,
        };
    }
    if let Some(lr) = a.learning_rate {
        cfg.learning_rate = lr;
    }
    cfg.validate()?;

    let outcome = bench::with_threads(a.threads, || train(&cfg))??;
    std::fs::create_dir_all(&a.out_dir)?;

    let mut log = BufWriter::new(File::create(a.out_dir.join("train_log.csv"))?);
    csv_header_line(&mut log, cfg.seed, &cfg)?;
    outcome.log.write_csv(&mut log)?;
    log.flush()?;

    let mut prune = BufWriter::new(File::create(a.out_dir.join("prune_reports.csv"))?);
    csv_header_line(&mut prune, cfg.seed, &cfg)?;
    let rows: Vec<PruneRow> = outcome
        .log
        .prune_reports
        .iter()
        .map(|r| PruneRow {
            iter: r.report.iteration,
            layer: r.layer,
            matrix: r.matrix,
            s_target: r.report.s_target,
            kept: r.report.kept,
            regrown: r.report.regrown,
            regrown_ratio: r.report.regrown_ratio,
            s_achieved: r.report.s_achieved,
        })
        .collect();
    serialize_rows(&rows, &mut prune)?;
    prune.flush()?;

    let summary = outcome.summary(&cfg);
    let file = File::create(a.out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &summary).map_err(|e| Error::Config(e.to_string()))?;
    outcome.model.save_bcsc(&a.out_dir.join("model"))?;

    println!(
        "final loss {:.6}, eval loss {:.6}, sparsity {:?}, {} refreshes, wrote {}",
        summary.final_loss,
        summary.eval_loss,
        summary.final_sparsity,
        summary.refreshes,
        a.out_dir.display()
    );
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let mut bytes = Vec::new();
    File::open(&a.input)?.read_to_end(&mut bytes)?;
    let magic = bytes.get(..4).unwrap_or(&[]);
    let create = || File::create(&a.output).map(BufWriter::new);
    if magic == DENSE_MAGIC {
        let block = a.block.ok_or_else(|| Error::InvalidArgument("--block is required for dense to BCSC".into()))?;
        let dense = Matrix::from_dnse_bytes(&bytes)?;
        let w = BlockSparseMatrix::from_dense(&dense, block, None)?;
        w.write_to(create()?)?;
        eprintln!(
            "{}x{} -> BCSC b={block}, {} of {} blocks stored",
            w.rows(),
            w.cols(),
            w.nnzb(),
            w.grid_rows() * w.grid_cols()
        );
    } else if magic == BCSC_MAGIC {
        let w = BlockSparseMatrix::from_bytes(&bytes)?;
        let dense = w.to_dense();
        dense.write_dnse(create()?)?;
        eprintln!("BCSC {}x{} -> dense", w.rows(), w.cols());
    } else {
        return Err(Error::InvalidArgument(format!(
            "{}: not a DNSE or BCSC file (leading bytes {magic:02x?})",
            a.input.display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Bench(a) => cmd_bench(a),
        Command::Schedule(a) => cmd_schedule(a),
        Command::GpuCalc(a) => cmd_gpu_calc(a),
        Command::Train(a) => cmd_train(a),
        Command::Convert(a) => cmd_convert(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
