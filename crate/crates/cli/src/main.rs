//! `flowclock`: seeded, file-based runs of the library's pipelines.
//!
//! Every subcommand validates its flags, computes, then writes its
//! outputs plus a `run.meta` sidecar recording the resolved
//! configuration. Same flags and seed, same bytes; `--jobs` changes
//! only wall-clock time.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use flowclock::error::{Error, Result};
use flowclock::estimator::Branch;
use flowclock::io::{
    binned_mae_csv, clock_csv, decomposition_report_text, fmt_float, histogram_csv, metadata_text,
    ot_csv, read_matrix_auto, sweep_csv, write_fitted, write_text, METADATA_FILENAME,
};
use flowclock::model::{SpikedModel, TimeInterval, TimeMode};
use flowclock::ot::{coupling_cost_stats, CouplingCostStats, PairingMode};
use flowclock::pca::{fit_spiked, RankRule};
use flowclock::sweep::{binned_mae, clock_table, error_histogram, sweep_dk, SweepConfig};

const HISTOGRAM_BINS: usize = 50;

#[derive(Parser)]
#[command(
    name = "flowclock",
    version,
    about = "Spiked-model flow interpolant experiments"
)]
struct Cli {
    /// Cap concurrent workers; output bytes do not depend on this.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Critical-point table for a list of noise floors.
    Clock(ClockArgs),
    /// Time-estimation error statistics on a spiked model.
    Estimate(EstimateArgs),
    /// Variance decomposition of one model over a time interval.
    Decompose(DecomposeArgs),
    /// Decomposition across a (d, k) grid of models.
    Sweep(SweepArgs),
    /// Pairing costs under independent and minibatch-OT coupling.
    Ot(OtArgs),
    /// Fit a spiked model to a data matrix, optionally estimating time
    /// on interpolants built from its rows.
    Fit(FitArgs),
}

/// Spiked-model flags shared by the sampling subcommands.
#[derive(Args)]
struct ModelArgs {
    /// Ambient dimension.
    #[arg(long)]
    d: usize,

    /// Signal rank.
    #[arg(long, default_value_t = 0)]
    k: usize,

    /// Noise floor σ².
    #[arg(long, allow_negative_numbers = true)]
    sigma2: f64,

    /// Total spike variance; sets every excess to S − σ².
    #[arg(long = "S", conflicts_with = "lambdas", allow_negative_numbers = true)]
    s_total: Option<f64>,

    /// Comma-separated spike excesses, one per signal direction.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambdas: Option<Vec<f64>>,
}

impl ModelArgs {
    fn build(&self) -> Result<SpikedModel<f64>> {
        match (&self.s_total, &self.lambdas) {
            (Some(s), None) => SpikedModel::uniform_excess(self.d, self.k, *s, self.sigma2),
            (None, Some(l)) => SpikedModel::new(self.d, self.k, l.clone(), self.sigma2),
            (None, None) => SpikedModel::new(self.d, self.k, vec![], self.sigma2),
            (Some(_), Some(_)) => unreachable!("clap enforces the exclusion"),
        }
    }

    fn spec_label(&self) -> String {
        match (&self.s_total, &self.lambdas) {
            (Some(s), _) => format!("S={}", fmt_float(*s)),
            (_, Some(l)) => format!("lambdas={}", join_floats(l)),
            _ => "none".to_string(),
        }
    }

    fn push_metadata(&self, model: &SpikedModel<f64>, meta: &mut Vec<(String, String)>) {
        meta.push(("d".into(), self.d.to_string()));
        meta.push(("k".into(), self.k.to_string()));
        meta.push(("sigma2".into(), fmt_float(self.sigma2)));
        meta.push(("lambda_spec".into(), self.spec_label()));
        meta.push(("lambdas_resolved".into(), join_floats(model.lambdas())));
    }
}

#[derive(Args)]
struct ClockArgs {
    /// Comma-separated noise floors σ².
    #[arg(
        long,
        value_delimiter = ',',
        required = true,
        allow_negative_numbers = true
    )]
    sigma2: Vec<f64>,

    /// Output directory; prints the CSV to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Number of residual-statistic draws.
    #[arg(long)]
    n: usize,

    /// Fix the interpolation time; t ~ U[0, 1] when omitted.
    #[arg(long, allow_negative_numbers = true)]
    t: Option<f64>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecomposeArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Symmetric margin: integrate over [τ, 1 − τ].
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    tau: f64,

    /// Outer Monte-Carlo draws.
    #[arg(long, default_value_t = 20_000)]
    n_outer: usize,

    /// Time-grid resolution for the quadrature and the posterior.
    #[arg(long, default_value_t = 2000)]
    grid: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    /// Comma-separated ambient dimensions.
    #[arg(long, value_delimiter = ',', required = true)]
    d: Vec<usize>,

    /// Comma-separated signal ranks; cells with k ≥ d are skipped.
    #[arg(long, value_delimiter = ',', required = true)]
    k: Vec<usize>,

    /// Total spike variance shared by every cell.
    #[arg(long = "S", allow_negative_numbers = true)]
    s_total: f64,

    /// Noise floor σ² shared by every cell.
    #[arg(long, allow_negative_numbers = true)]
    sigma2: f64,

    /// Symmetric margin: integrate over [τ, 1 − τ].
    #[arg(long, default_value_t = 0.15, allow_negative_numbers = true)]
    tau: f64,

    /// Outer Monte-Carlo draws per cell.
    #[arg(long, default_value_t = 20_000)]
    n_outer: usize,

    /// Time-grid resolution per cell.
    #[arg(long, default_value_t = 2000)]
    grid: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OtArgs {
    #[command(flatten)]
    model: ModelArgs,

    /// Comma-separated batch sizes.
    #[arg(long, value_delimiter = ',', required = true)]
    batch: Vec<usize>,

    /// Batches averaged per (mode, batch size) row.
    #[arg(long, default_value_t = 500)]
    n_batches: usize,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory; prints the CSV to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// Input matrix, `.spkd` binary or CSV; rows are samples.
    #[arg(long)]
    input: PathBuf,

    /// `threshold:<fraction>` or `fixed:<rank>`.
    #[arg(long, default_value = "threshold:0.95")]
    rank_rule: String,

    /// Also run the time estimator on this many interpolants built
    /// from the (centered) input rows.
    #[arg(long)]
    then_estimate: Option<usize>,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: invalid parameter: --jobs {}: {}", jobs, e);
            return ExitCode::FAILURE;
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Clock(args) => run_clock(args),
        Command::Estimate(args) => run_estimate(args),
        Command::Decompose(args) => run_decompose(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Ot(args) => run_ot(args),
        Command::Fit(args) => run_fit(args),
    }
}

fn run_clock(args: ClockArgs) -> Result<()> {
    let rows = clock_table(&args.sigma2)?;
    let csv = clock_csv(&rows);
    match &args.out {
        None => {
            print!("{}", csv);
            Ok(())
        }
        Some(out) => {
            let meta = vec![
                ("subcommand".into(), "clock".into()),
                ("sigma2".into(), join_floats(&args.sigma2)),
            ];
            write_run(out, &[("clock.csv", csv)], meta)
        }
    }
}

fn run_estimate(args: EstimateArgs) -> Result<()> {
    let model = args.model.build()?;
    let t_mode = match args.t {
        Some(t) => TimeMode::Fixed(t),
        None => TimeMode::Uniform(TimeInterval::unit()),
    };
    let hist = error_histogram(
        &model,
        args.n,
        t_mode,
        Branch::Descending,
        HISTOGRAM_BINS,
        args.seed,
    )?;
    let mae = binned_mae(
        &model,
        args.n,
        HISTOGRAM_BINS,
        Branch::Descending,
        args.seed,
    )?;

    let total_weight: usize = mae.bin_counts.iter().sum();
    let overall_mae: f64 = mae
        .mae_per_bin
        .iter()
        .zip(&mae.bin_counts)
        .map(|(&m, &c)| m * c as f64)
        .sum::<f64>()
        / total_weight as f64;
    let summary = format!(
        "empirical_std={}\ntheory_std={}\nmae={}\ndiscard_rate={}\nn_used={}\nn_discarded={}\n",
        fmt_float(hist.empirical_std),
        fmt_float(hist.theory_std),
        fmt_float(overall_mae),
        fmt_float(hist.n_discarded as f64 / args.n as f64),
        hist.n_used,
        hist.n_discarded
    );

    let mut meta = vec![("subcommand".into(), "estimate".into())];
    args.model.push_metadata(&model, &mut meta);
    meta.push(("n".into(), args.n.to_string()));
    meta.push(("t_mode".into(), t_mode_label(args.t)));
    meta.push(("n_bins".into(), HISTOGRAM_BINS.to_string()));
    meta.push(("seed".into(), args.seed.to_string()));

    write_run(
        &args.out,
        &[
            ("histogram.csv", histogram_csv(&hist)),
            ("binned_mae.csv", binned_mae_csv(&mae)),
            ("summary.txt", summary),
        ],
        meta,
    )
}

fn run_decompose(args: DecomposeArgs) -> Result<()> {
    let model = args.model.build()?;
    let interval = TimeInterval::symmetric(args.tau)?;
    let report =
        flowclock::decomposition::decompose(&model, interval, args.n_outer, args.grid, args.seed)?;

    let mut meta = vec![("subcommand".into(), "decompose".into())];
    args.model.push_metadata(&model, &mut meta);
    meta.push(("tau".into(), fmt_float(args.tau)));
    meta.push(("interval_lo".into(), fmt_float(interval.lo())));
    meta.push(("interval_hi".into(), fmt_float(interval.hi())));
    meta.push(("n_outer".into(), args.n_outer.to_string()));
    meta.push(("grid_n".into(), args.grid.to_string()));
    meta.push(("seed".into(), args.seed.to_string()));

    write_run(
        &args.out,
        &[("report.txt", decomposition_report_text(&report))],
        meta,
    )
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let config = SweepConfig {
        s_total: args.s_total,
        sigma2: args.sigma2,
        interval: TimeInterval::symmetric(args.tau)?,
        n_outer: args.n_outer,
        grid_n: args.grid,
    };
    let table = sweep_dk(&args.d, &args.k, &config, args.seed)?;

    let skipped = table
        .skipped
        .iter()
        .map(|(d, k)| format!("{}:{}", d, k))
        .collect::<Vec<_>>()
        .join(";");
    let meta = vec![
        ("subcommand".into(), "sweep".into()),
        (
            "d_list".into(),
            args.d
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        (
            "k_list".into(),
            args.k
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        ),
        ("S".into(), fmt_float(args.s_total)),
        ("sigma2".into(), fmt_float(args.sigma2)),
        ("tau".into(), fmt_float(args.tau)),
        ("n_outer".into(), args.n_outer.to_string()),
        ("grid_n".into(), args.grid.to_string()),
        ("seed".into(), args.seed.to_string()),
        ("skipped_cells".into(), skipped),
    ];

    write_run(&args.out, &[("sweep.csv", sweep_csv(&table))], meta)
}

fn run_ot(args: OtArgs) -> Result<()> {
    let model = args.model.build()?;
    let mut stats: Vec<CouplingCostStats> = Vec::with_capacity(2 * args.batch.len());
    for &b in &args.batch {
        for mode in [PairingMode::Independent, PairingMode::MinibatchOt] {
            stats.push(coupling_cost_stats(
                &model,
                mode,
                b,
                args.n_batches,
                args.seed,
            )?);
        }
    }
    let csv = ot_csv(&stats);
    match &args.out {
        None => {
            print!("{}", csv);
            Ok(())
        }
        Some(out) => {
            let mut meta = vec![("subcommand".into(), "ot".into())];
            args.model.push_metadata(&model, &mut meta);
            meta.push((
                "batch_sizes".into(),
                args.batch
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join(","),
            ));
            meta.push(("n_batches".into(), args.n_batches.to_string()));
            meta.push(("seed".into(), args.seed.to_string()));
            write_run(out, &[("ot.csv", csv)], meta)
        }
    }
}

fn run_fit(args: FitArgs) -> Result<()> {
    let rule = parse_rank_rule(&args.rank_rule)?;
    let x = read_matrix_auto(&args.input)?;
    let fitted = fit_spiked(&x, rule)?;

    let mut meta = vec![
        ("subcommand".into(), "fit".into()),
        ("input".into(), args.input.display().to_string()),
        ("rank_rule".into(), args.rank_rule.clone()),
        ("seed".into(), args.seed.to_string()),
    ];

    let estimate_doc = match args.then_estimate {
        None => None,
        Some(n) => {
            meta.push(("then_estimate".into(), n.to_string()));
            let report = flowclock::pca::then_estimate(&fitted, &x, n, args.seed)?;
            Some(format!(
                "n_used={}\nn_discarded={}\nmae={}\ntheory_std={}\ntheory_mae={}\n",
                report.n_used,
                report.n_discarded,
                fmt_float(report.mae),
                fmt_float(report.theory_std),
                fmt_float(report.theory_mae)
            ))
        }
    };

    ensure_dir(&args.out)?;
    write_fitted(&args.out, &fitted)?;
    if let Some(doc) = estimate_doc {
        write_text(&args.out.join("then_estimate.txt"), &doc)?;
    }
    write_text(&args.out.join(METADATA_FILENAME), &metadata_text(&meta))
}

fn parse_rank_rule(spec: &str) -> Result<RankRule<f64>> {
    let err = || {
        Error::InvalidParameter(format!(
            "rank rule must be 'threshold:<fraction>' or 'fixed:<rank>', got '{}'",
            spec
        ))
    };
    let (kind, value) = spec.split_once(':').ok_or_else(err)?;
    match kind {
        "threshold" => value.parse().map(RankRule::Threshold).map_err(|_| err()),
        "fixed" => value.parse().map(RankRule::Fixed).map_err(|_| err()),
        _ => Err(err()),
    }
}

fn t_mode_label(t: Option<f64>) -> String {
    match t {
        Some(t) => format!("fixed:{}", fmt_float(t)),
        None => "uniform".to_string(),
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|&v| fmt_float(v))
        .collect::<Vec<_>>()
        .join(",")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

/// Creates the directory, writes every named file, then the sidecar.
fn write_run(out: &Path, files: &[(&str, String)], meta: Vec<(String, String)>) -> Result<()> {
    ensure_dir(out)?;
    for (name, content) in files {
        write_text(&out.join(name), content)?;
    }
    write_text(&out.join(METADATA_FILENAME), &metadata_text(&meta))
}
