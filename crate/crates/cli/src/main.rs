use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ncpoly::format::parse_problem;
use ncpoly::relaxation::assemble;
use ncpoly::report::{emit_report, run, ReportFormat, RunOptions};
use ncpoly::sdpa::export_sdpa;

const EXIT_PARSE: u8 = 2;
const EXIT_SOLVER: u8 = 3;

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

/// Moment/SOS relaxations of noncommutative polynomial optimization problems.
#[derive(Parser)]
#[command(name = "ncpoly", version)]
struct Args {
    /// Problem file, or `-` for stdin.
    file: PathBuf,
    /// Highest relaxation order.
    #[arg(short = 'k', long = "order", default_value_t = 2)]
    order: usize,
    /// Lowest relaxation order (default: half the largest degree, rounded up).
    #[arg(long)]
    min_order: Option<usize>,
    /// Solver gap and feasibility tolerance.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    /// Relative eigenvalue threshold for numeric ranks.
    #[arg(long, default_value_t = ncpoly::certify::DEFAULT_RANK_TOL)]
    rank_tol: f64,
    /// Write each order's SDP in SDPA sparse format; with several orders the
    /// order is appended to the file stem.
    #[arg(long, value_name = "PATH")]
    export_sdpa: Option<PathBuf>,
    /// Recover an SOS certificate at the highest solved order.
    #[arg(long)]
    certify: bool,
    /// Extract an optimizer at the first flat order.
    #[arg(long)]
    extract: bool,
    /// Stop at the first flat order.
    #[arg(long)]
    stop_on_flat: bool,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Seed for the random basis rotation in extraction.
    #[arg(long)]
    seed: Option<u64>,
    /// Solve orders concurrently, at most NCPOLY_THREADS at a time.
    #[arg(long)]
    parallel_orders: bool,
}

fn thread_cap() -> usize {
    std::env::var("NCPOLY_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0).unwrap_or(1)
}

fn sdpa_path(base: &Path, k: usize, several: bool) -> PathBuf {
    if !several {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match base.extension() {
        Some(ext) => format!("{stem}.k{k}.{}", ext.to_string_lossy()),
        None => format!("{stem}.k{k}"),
    };
    base.with_file_name(name)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = if args.file.as_os_str() == "-" {
        let mut s = String::new();
        std::io::stdin().read_to_string(&mut s).map(|_| s)
    } else {
        std::fs::read_to_string(&args.file)
    };
    let text = match text {
        Ok(t) => t,
        Err(e) => {
            eprintln!("ncpoly: {}: {e}", args.file.display());
            return ExitCode::from(EXIT_PARSE);
        }
    };
    let problem = match parse_problem(&text) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("ncpoly: {}: {e}", args.file.display());
            return ExitCode::from(EXIT_PARSE);
        }
    };

    let opts = RunOptions {
        k_min: args.min_order,
        k_max: args.order,
        tol: args.tol,
        rank_tol: args.rank_tol,
        certify: args.certify,
        extract: args.extract,
        stop_on_flat: args.stop_on_flat,
        seed: args.seed,
        threads: if args.parallel_orders { thread_cap() } else { 1 },
    };

    if let Some(base) = &args.export_sdpa {
        let k_min = opts.k_min.unwrap_or_else(|| problem.min_order()).max(1);
        let several = opts.k_max > k_min;
        for k in k_min..=opts.k_max {
            let rel = match assemble(&problem, k) {
                Ok(r) => r,
                Err(e) => {
                    eprintln!("ncpoly: order {k}: {e}");
                    return ExitCode::from(EXIT_SOLVER);
                }
            };
            let path = sdpa_path(base, k, several);
            if let Err(e) = std::fs::write(&path, export_sdpa(&rel.sdp)) {
                eprintln!("ncpoly: {}: {e}", path.display());
                return ExitCode::from(EXIT_SOLVER);
            }
        }
    }

    let report = run(&problem, &opts);
    let format = match args.format {
        Format::Json => ReportFormat::Json,
        Format::Table => ReportFormat::Table,
    };
    print!("{}", emit_report(&report, format));
    // the table already lists warnings
    if matches!(format, ReportFormat::Json) {
        for w in &report.warnings {
            eprintln!("ncpoly: warning: {w}");
        }
    }
    if report.records.iter().all(|r| r.solved()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SOLVER)
    }
}
