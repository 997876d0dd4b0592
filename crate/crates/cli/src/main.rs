use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use gcamusic::coarray::{covariance_to_coarray, spatial_smooth, SubspaceDecomposition};
use gcamusic::estimators::{estimate, Algorithm};
use gcamusic::geometry::{compose_type2, dof_bound, GeometryKind};
use gcamusic::harness::{summary, sweep_to_csv, trial_covariances, ExperimentConfig};

#[derive(Parser)]
#[command(name = "gcamusic", version, about = "Direction finding with partially-calibrated sparse subarrays")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print a Type-II layout, its DoF and weight functions.
    Geometry {
        #[arg(long)]
        kind: GeometryKind,
        /// Sensors per subarray.
        #[arg(long, default_value_t = 7)]
        n: usize,
        /// Nested inner level size (naq2/snaq2).
        #[arg(long, requires = "n2")]
        n1: Option<usize>,
        /// Nested outer level size (naq2/snaq2).
        #[arg(long, requires = "n1")]
        n2: Option<usize>,
        /// Number of subarrays.
        #[arg(long = "L", visible_alias = "subarrays", default_value_t = 3)]
        subarrays: usize,
        /// Gap between subarrays, in units of the minimum spacing.
        #[arg(long, default_value_t = 1)]
        mu: usize,
    },
    /// Run a single trial of one estimator.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        algorithm: Algorithm,
        /// Defaults to the first geometry in the config.
        #[arg(long)]
        geometry: Option<GeometryKind>,
        /// Defaults to the first SNR in the config.
        #[arg(long, allow_hyphen_values = true)]
        snr: Option<f64>,
        #[arg(long, default_value_t = 0)]
        trial: u64,
        /// Write the pseudo-spectrum as "theta<TAB>value" lines.
        #[arg(long)]
        dump_spectrum: Option<PathBuf>,
        /// Print coarray values and eigenvalues per subarray.
        #[arg(long)]
        dump_intermediates: bool,
    },
    /// Monte Carlo RMSE sweep to CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
        /// Overrides the master seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Geometry {
            kind,
            n,
            n1,
            n2,
            subarrays,
            mu,
        } => geometry(kind, n, n1.zip(n2), subarrays, mu),
        Command::Run {
            config,
            algorithm,
            geometry,
            snr,
            trial,
            dump_spectrum,
            dump_intermediates,
        } => run(&config, algorithm, geometry, snr, trial, dump_spectrum, dump_intermediates),
        Command::Sweep {
            config,
            out,
            workers,
            seed,
        } => sweep(&config, out, workers, seed),
    }
}

fn join(values: &[usize]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

fn geometry(
    kind: GeometryKind,
    n: usize,
    levels: Option<(usize, usize)>,
    subarrays: usize,
    mu: usize,
) -> Result<()> {
    let base = kind.build(n, levels)?;
    let layout = compose_type2(&base, subarrays, mu)?;
    let sub = base.coarray();
    let whole = layout.whole();
    let whole_c = whole.coarray();

    let mut out = std::io::stdout().lock();
    writeln!(out, "kind\t{kind}")?;
    writeln!(out, "positions\t{}", join(base.positions()))?;
    writeln!(out, "aperture\t{}", base.aperture())?;
    writeln!(out, "subarray_sdof\t{}", sub.sdof())?;
    writeln!(out, "subarray_hole_free\t{}", sub.is_hole_free())?;
    writeln!(out, "offsets\t{}", join(layout.offsets()))?;
    writeln!(out, "whole_positions\t{}", join(whole.positions()))?;
    writeln!(out, "whole_dof\t{}", whole_c.sdof())?;
    if base.aperture() > 0 {
        writeln!(
            out,
            "dof_bound\t{}",
            dof_bound(subarrays, sub.sdof(), mu, base.aperture())
        )?;
    }
    writeln!(out, "# subarray weight function")?;
    for (lag, w) in sub.lags().iter().zip(sub.weights()) {
        writeln!(out, "{lag}\t{w}")?;
    }
    writeln!(out, "# whole-array weight function")?;
    for (lag, w) in whole_c.lags().iter().zip(whole_c.weights()) {
        writeln!(out, "{lag}\t{w}")?;
    }
    Ok(())
}

fn run(
    config_path: &Path,
    algorithm: Algorithm,
    geometry: Option<GeometryKind>,
    snr: Option<f64>,
    trial: u64,
    dump_spectrum: Option<PathBuf>,
    dump_intermediates: bool,
) -> Result<()> {
    let cfg = ExperimentConfig::from_path(config_path)?;
    let kind = geometry.unwrap_or(cfg.geometries[0]);
    let snr_db = snr.unwrap_or(cfg.snr_db[0]);
    let layout = cfg.layout(kind)?;
    let covs = trial_covariances(&cfg, &layout, snr_db, trial)?;

    let mut out = std::io::stdout().lock();
    if dump_intermediates {
        for (l, r) in covs.iter().enumerate() {
            let x = covariance_to_coarray(r, layout.base(), cfg.dedup)?;
            writeln!(out, "# subarray {l} coarray (lag, re, im)")?;
            for (lag, v) in x.lags().iter().zip(x.values()) {
                writeln!(out, "{lag}\t{:.12e}\t{:.12e}", v.re, v.im)?;
            }
            let matrix = match algorithm {
                Algorithm::Gmusic => r.clone(),
                _ => spatial_smooth(&x, l)?.matrix,
            };
            // Eigenvalues only; a split is not needed here.
            let eig = SubspaceDecomposition::from_hermitian(&matrix, 1)
                .map(|s| s.eigenvalues)
                .unwrap_or_default();
            writeln!(out, "# subarray {l} eigenvalues")?;
            for b in eig {
                writeln!(out, "{b:.12e}")?;
            }
        }
    }

    let (spectrum, est) = estimate(
        algorithm,
        &covs,
        &layout,
        cfg.source_count(),
        cfg.dedup,
        &cfg.search_options(),
    )
    .with_context(|| format!("{algorithm} on {kind} at {snr_db} dB"))?;

    if let Some(path) = dump_spectrum {
        let mut w = BufWriter::new(
            File::create(&path).with_context(|| format!("creating {}", path.display()))?,
        );
        for (t, v) in spectrum.grid.iter().zip(&spectrum.values) {
            writeln!(w, "{t:.6}\t{v:.9e}")?;
        }
        w.flush()?;
    }

    writeln!(out, "algorithm\t{algorithm}")?;
    writeln!(out, "geometry\t{kind}")?;
    writeln!(out, "snr_db\t{snr_db}")?;
    writeln!(out, "degraded\t{}", est.degraded)?;
    for (i, (t, e)) in cfg.thetas.iter().zip(&est.thetas).enumerate() {
        writeln!(out, "source {i}\ttrue {t:.6}\testimate {e:.6}\terror {:.3e}", e - t)?;
    }
    Ok(())
}

fn sweep(config_path: &Path, out: Option<PathBuf>, workers: Option<usize>, seed: Option<u64>) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(config_path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let Some(path) = out.or_else(|| cfg.output.clone()) else {
        bail!("no output path: pass --out or set `output` in the config");
    };
    if workers == Some(0) {
        bail!("--workers must be at least 1");
    }
    let rows = sweep_to_csv(&cfg, &path, workers)
        .with_context(|| format!("sweep writing {}", path.display()))?;
    print!("{}", summary(&rows));
    eprintln!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}
