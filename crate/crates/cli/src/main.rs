use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use gff_cli::config::{ConfigKind, ExperimentConfig, Overrides};
use gff_cli::manifest::{Run, RESULTS_FILE};
use gff_cli::report::{read_results, report, series};
use gff_cli::CliError;
use gff_core::clusters::{ClusterLabeling, Sign};
use gff_core::gff::{open_edges, sample_field};
use gff_core::greens::{dirichlet_green, excursion_kernel, excursion_kernel_free, free_green, BoundaryCondition, GreenTable};
use gff_core::lattice::{BoxSpec, MetricPoint, Site};
use gff_core::montecarlo::verify::{verify_arcsin, verify_conditional, verify_density, DEFAULT_DENSITY_EDGES};
use gff_core::par::Execution;
use gff_core::rng::SeedPath;
use gff_core::stats::fit_proportions;

#[derive(Parser)]
#[command(name = "gfflab", version, about = "Sign clusters of the metric-graph Gaussian free field")]
struct Cli {
    /// Seed base for all random streams.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0: all cores, 1: sequential).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory or file.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// JSON experiment config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Grid {
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    trials: Option<u64>,
    /// Outer radii N, comma separated.
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    inner: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    chi: Option<Vec<f64>>,
    #[arg(long = "m-grid", value_delimiter = ',')]
    m_grid: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    thresholds: Option<Vec<f64>>,
    #[arg(long = "box-factor")]
    box_factor: Option<usize>,
    #[arg(long = "batch-size")]
    batch_size: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Green's function values.
    Green {
        #[arg(long, default_value_t = 3)]
        d: usize,
        /// Box radius; omit for the infinite lattice.
        #[arg(long)]
        radius: Option<usize>,
        #[arg(long)]
        x: String,
        #[arg(long)]
        y: String,
        /// Absorbing sites, `;` separated.
        #[arg(long)]
        absorbing: Option<String>,
        /// Also write the full table of the box to this file.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Samples one replica and writes the field.
    Sample {
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long)]
        radius: usize,
        #[arg(long, default_value_t = 0)]
        replica: u64,
    },
    /// Runs an estimation experiment into a run directory.
    Estimate {
        /// one-arm, two-arm, crossing, volume, four-point, captail or touching.
        kind: String,
        #[command(flatten)]
        grid: Grid,
        /// Stop after this many parameter points (resume continues).
        #[arg(long = "max-points", hide = true)]
        max_points: Option<usize>,
    },
    /// Runs a closed-form verification.
    Verify {
        /// arcsin, conditional, density or kernel.
        kind: String,
        #[arg(long, default_value_t = 3)]
        d: usize,
        #[arg(long, default_value_t = 3)]
        radius: usize,
        #[arg(long, default_value_t = 100_000)]
        trials: u64,
        /// Site pairs `x:y`, `;` separated (default: origin and e_1).
        #[arg(long)]
        pairs: Option<String>,
        /// Pin values `a:b`, `;` separated, for `conditional`.
        #[arg(long)]
        grid: Option<String>,
        /// Bin edges in units of G(v,v), for `density`.
        #[arg(long, value_delimiter = ',')]
        edges: Option<Vec<f64>>,
    },
    /// Fits exponents to the records of one experiment.
    Fit {
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        experiment: String,
    },
    /// Writes summary tables, fits and plot data.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Continues an interrupted run.
    Resume {
        /// Run directory or its manifest file.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long = "max-points", hide = true)]
        max_points: Option<usize>,
    },
}

fn site(s: &str, d: usize) -> Result<Site, CliError> {
    let coords: Result<Vec<i64>, _> = s.split(',').map(|c| c.trim().parse::<i64>()).collect();
    match coords {
        Ok(c) if c.len() == d => Ok(Site::new(c)),
        _ => Err(CliError::Validation {
            key: "site".into(),
            message: format!("`{s}` is not a site of Z^{d}"),
        }),
    }
}

fn pairs_of<T>(s: &str, key: &str, parse: impl Fn(&str) -> Result<T, CliError>) -> Result<Vec<(T, T)>, CliError> {
    s.split(';')
        .filter(|p| !p.trim().is_empty())
        .map(|p| match p.split_once(':') {
            Some((a, b)) => Ok((parse(a)?, parse(b)?)),
            None => Err(CliError::Validation {
                key: key.into(),
                message: format!("`{p}` is not of the form a:b"),
            }),
        })
        .collect()
}

fn number(s: &str) -> Result<f64, CliError> {
    s.trim().parse().map_err(|_| CliError::Validation {
        key: "grid".into(),
        message: format!("`{s}` is not a number"),
    })
}

fn load_config(cli: &Cli, kind: ConfigKind, experiments: Vec<String>, grid: &Grid) -> Result<ExperimentConfig, CliError> {
    let text = match &cli.config {
        Some(p) => fs::read_to_string(p)?,
        None => String::new(),
    };
    let flags = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        output: cli.out.as_ref().map(|p| p.display().to_string()),
        d: grid.d,
        trials: grid.trials,
        scales: grid.scales.clone(),
        inner: grid.inner.clone(),
        chi: grid.chi.clone(),
        m_grid: grid.m_grid.clone(),
        thresholds: grid.thresholds.clone(),
        box_factor: grid.box_factor,
        batch_size: grid.batch_size,
    };
    let (mut cfg, warnings) = ExperimentConfig::parse(&text, &flags)?;
    for w in warnings {
        log::warn!("{w}");
        eprintln!("warning: {w}");
    }
    if cfg.kind != ConfigKind::Sweep {
        cfg.kind = kind;
    }
    if !experiments.is_empty() {
        cfg.experiments = experiments;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    PathBuf::from(cfg.output.clone().unwrap_or_else(|| "gfflab-run".into()))
}

fn print_json(v: &impl serde::Serialize) -> Result<(), CliError> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let exec = Execution::threads(cli.threads.unwrap_or(0));
    let seed = cli.seed.unwrap_or(0);
    match &cli.command {
        Command::Green {
            d,
            radius,
            x,
            y,
            absorbing,
            table,
        } => {
            let (x, y) = (site(x, *d)?, site(y, *d)?);
            let absorbing = match absorbing {
                Some(a) => a.split(';').map(|s| site(s, *d)).collect::<Result<Vec<_>, _>>()?,
                None => Vec::new(),
            };
            let value = match radius {
                Some(r) => {
                    let b = BoxSpec::new(*d, *r)?;
                    if let Some(path) = table {
                        GreenTable::new(b, &absorbing)?.write(path)?;
                    }
                    dirichlet_green(&b, &absorbing, &x, &y)?
                }
                None => {
                    if !absorbing.is_empty() || table.is_some() {
                        return Err(CliError::Validation {
                            key: "radius".into(),
                            message: "absorbing sets and tables need a box radius".into(),
                        });
                    }
                    free_green(*d, &x, &y, 1e-10)?
                }
            };
            print_json(&serde_json::json!({"x": x, "y": y, "radius": radius, "green": value}))
        }
        Command::Sample { d, radius, replica } => {
            let b = BoxSpec::new(*d, *radius)?;
            let path = SeedPath::new(seed, 0, *replica);
            let f = sample_field(&b, path);
            let dump = cli.out.clone().unwrap_or_else(|| PathBuf::from("field.bin"));
            f.write(&dump)?;
            let l = ClusterLabeling::label(&f, &open_edges(&f, path))?;
            let largest = |s| l.components(s).iter().map(|c| c.volume).max().unwrap_or(0);
            print_json(&serde_json::json!({
                "dump": dump,
                "sites": b.site_count(),
                "plus_clusters": l.components(Sign::Plus).len(),
                "minus_clusters": l.components(Sign::Minus).len(),
                "largest_plus": largest(Sign::Plus),
                "largest_minus": largest(Sign::Minus),
            }))
        }
        Command::Estimate { kind, grid, max_points } => {
            let cfg = load_config(&cli, ConfigKind::Estimate, vec![kind.clone()], grid)?;
            let dir = out_dir(&cfg);
            let mut run = Run::create(&dir, &cfg)?;
            let ran = run.advance(*max_points)?;
            eprintln!("{ran} parameter points written to {}", dir.join(RESULTS_FILE).display());
            Ok(())
        }
        Command::Resume { manifest, max_points } => {
            let dir = if manifest.is_dir() {
                manifest.clone()
            } else {
                manifest.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let mut run = Run::open(&dir)?;
            if run.manifest.is_complete() {
                eprintln!("run is complete; nothing to do");
                return Ok(());
            }
            let ran = run.advance(*max_points)?;
            eprintln!("{ran} parameter points resumed");
            Ok(())
        }
        Command::Verify {
            kind,
            d,
            radius,
            trials,
            pairs,
            grid,
            edges,
        } => {
            let b = BoxSpec::new(*d, *radius)?;
            let pairs = match pairs {
                Some(p) => pairs_of(p, "pairs", |s| site(s, *d))?,
                None => vec![(Site::origin(*d), Site::unit(*d, 0))],
            };
            let (pass, value) = match kind.as_str() {
                "arcsin" => {
                    let r = verify_arcsin(&b, &pairs, *trials, seed, exec)?;
                    (r.pass, serde_json::to_value(r)?)
                }
                "conditional" => {
                    let g = match grid {
                        Some(g) => pairs_of(g, "grid", number)?,
                        None => [0.5, 1.0, 2.0]
                            .iter()
                            .flat_map(|&a| [0.5, 1.0, 2.0].map(|c| (a, c)))
                            .collect(),
                    };
                    let (v, w) = &pairs[0];
                    let r = verify_conditional(&b, v, w, &g, *trials, seed, exec)?;
                    (r.pass, serde_json::to_value(r)?)
                }
                "density" => {
                    let (v, w) = &pairs[0];
                    let e = edges.clone().unwrap_or_else(|| DEFAULT_DENSITY_EDGES.to_vec());
                    let r = verify_density(&b, v, w, &e, *trials, seed, exec)?;
                    (r.pass, serde_json::to_value(r)?)
                }
                "kernel" => {
                    let (v, w) = &pairs[0];
                    let (pv, pw) = (MetricPoint::at_site(v), MetricPoint::at_site(w));
                    let boxed = excursion_kernel(&b, BoundaryCondition::Grounded, &[], &pv, &pw)?;
                    let free = excursion_kernel_free(*d, &[], &pv, &pw, *radius, f64::INFINITY)?;
                    (
                        true,
                        serde_json::json!({"box": boxed.value, "free": free.value, "free_error": free.error_bound}),
                    )
                }
                other => {
                    return Err(CliError::Validation {
                        key: "kind".into(),
                        message: format!("unknown verification `{other}`"),
                    })
                }
            };
            print_json(&value)?;
            if let Some(out) = &cli.out {
                fs::write(out, serde_json::to_string_pretty(&value)?)?;
            }
            if pass {
                Ok(())
            } else {
                Err(CliError::CheckFailed(format!("{kind} verification")))
            }
        }
        Command::Fit { results, experiment } => {
            let (records, skipped) = read_results(results)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} malformed lines");
            }
            let mut fits = Vec::new();
            for s in series(&records).into_iter().filter(|s| &s.experiment == experiment) {
                let counts: Vec<(f64, u64, u64)> = s.points.iter().map(|(x, r)| (*x, r.successes, r.trials)).collect();
                fits.push(serde_json::json!({"group": s.group, "fit": fit_proportions(&counts)?}));
            }
            print_json(&fits)
        }
        Command::Report { results } => {
            let out = cli.out.clone().unwrap_or_else(|| {
                results.parent().map(|p| p.join("report")).unwrap_or_else(|| PathBuf::from("report"))
            });
            let (rows, skipped) = report(results, &out)?;
            if skipped > 0 {
                eprintln!("skipped {skipped} malformed lines");
            }
            println!("{:<12} {:<28} {:>9} {:>9} {:>7}", "experiment", "group", "slope", "predicted", "verdict");
            for r in &rows {
                let f = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.3}"));
                println!(
                    "{:<12} {:<28} {:>9} {:>9} {:>7}",
                    r.experiment,
                    r.group,
                    f(r.slope),
                    f(r.predicted),
                    r.verdict
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
