use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use greensplit_core::io::{self, ArtifactHeader, ErrorRow, OptimizeBody};
use greensplit_core::{
    assemble_modes, average_system, congestion_cost, output_map, run_distributed, scenarios,
    simulate_average, simulate_switching, uniform_schedule, Error, ModeSet, NetworkSpec, OptOptions,
    Result, Schedule,
};
use nalgebra::DMatrix;

/// Green-split analysis and optimization for signalized road networks.
#[derive(Parser, Debug)]
#[command(name = "greensplit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug, Clone)]
struct ScheduleArgs {
    /// Scenario file, or a bundled name: four_intersections, single_road, grid_RxC.
    scenario: String,
    /// Override the cycle time of the scenario.
    #[arg(long)]
    cycle_time: Option<f64>,
    /// Mode durations, comma separated (default: uniform phase splits).
    #[arg(long, value_delimiter = ',')]
    durations: Option<Vec<f64>>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum SimMode {
    Switching,
    Average,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a scenario and print its dimensions.
    Build {
        scenario: String,
        /// Only validate; print nothing but "ok".
        #[arg(long)]
        validate: bool,
        /// Write the canonical scenario document here.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Export the mode matrices as JSON.
    Modes {
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long, default_value = "modes.json")]
        out: PathBuf,
    },
    /// Simulate the switching or the averaged system.
    Simulate {
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long, value_enum, default_value = "switching")]
        mode: SimMode,
        /// Initial state: zeros, ones, or a state file.
        #[arg(long, default_value = "ones")]
        x0: String,
        #[arg(long, default_value_t = 600.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value = "traj.csv")]
        out: PathBuf,
    },
    /// Averaging error of the switching system for several cycle times.
    CompareAveraging {
        scenario: String,
        #[arg(long, value_delimiter = ',', default_value = "30,60,100,120")]
        cycles: Vec<f64>,
        #[arg(long, default_value = "ones")]
        x0: String,
        #[arg(long, default_value_t = 1200.0)]
        horizon: f64,
        #[arg(long, default_value_t = 1.0)]
        dt: f64,
        #[arg(long, default_value = "error.csv")]
        out: PathBuf,
    },
    /// Optimize the mode durations for a given initial state.
    Optimize {
        #[command(flatten)]
        sched: ScheduleArgs,
        #[arg(long, default_value = "ones")]
        x0: String,
        #[arg(long, default_value_t = 0.9)]
        mu: f64,
        #[arg(long, default_value_t = 0.05)]
        xi: f64,
        #[arg(long, default_value_t = 1)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
        /// Also write plot-ready CSV files into this directory.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
    },
    /// Solve the Gramian equation of the averaged system with cooperating agents.
    Distributed {
        #[command(flatten)]
        sched: ScheduleArgs,
        /// single, intersections, roads, path:N, complete:N or grid:RxC.
        #[arg(long, default_value = "intersections")]
        agents: String,
        /// Round limit (default: the diameter of the communication graph).
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long, default_value = "ones")]
        x0: String,
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
    },
}

/// Largest stacked unknown `(ν+1)·n²` accepted by `distributed`.
const MAX_STACKED: usize = 4096;

fn load(args: &ScheduleArgs) -> Result<(NetworkSpec, Schedule)> {
    let mut spec = scenarios::resolve(&args.scenario)?;
    if let Some(t) = args.cycle_time {
        spec = spec.with_cycle_time(t)?;
    }
    let sched = uniform_schedule(&spec);
    let sched = match &args.durations {
        Some(d) => sched.with_durations(d)?,
        None => sched,
    };
    Ok((spec, sched))
}

fn options(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

fn sched_options(sched: &Schedule) -> Vec<(&'static str, String)> {
    vec![("durations", format!("{:?}", sched.durations())), ("cycle_time", format!("{}", sched.cycle_time()))]
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Validation(format!("--{name} must be positive, got {v}")))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build {
            scenario,
            validate,
            export,
        } => {
            let spec = scenarios::resolve(&scenario)?;
            if let Some(path) = export {
                io::write_file(&path, &spec.to_document().to_toml_string())?;
            }
            if validate {
                println!("ok");
            } else {
                let sched = uniform_schedule(&spec);
                println!("name: {}", spec.name);
                println!("roads: {}", spec.n_roads());
                println!("intersections: {}", spec.intersections.len());
                println!("states: {}", spec.n_states());
                println!("modes: {}", sched.mode_count());
                println!("cycle_time: {}", spec.cycle_time);
            }
        }
        Command::Modes { sched: args, out } => {
            let (spec, sched) = load(&args)?;
            let ms: ModeSet<f64> = assemble_modes(&spec, &sched)?;
            let c = output_map::<f64>(&spec);
            let config = io::canonical_config("modes", &options(&sched_options(&sched)), &spec);
            let header = ArtifactHeader::new(0, &config);
            io::write_file(&out, &io::modes_json(&header, &spec, &ms, &c)?)?;
            println!("wrote {} modes ({}x{}) to {}", ms.mode_count(), ms.n(), ms.n(), out.display());
        }
        Command::Simulate {
            sched: args,
            mode,
            x0,
            horizon,
            dt,
            out,
        } => {
            check_positive("horizon", horizon)?;
            check_positive("dt", dt)?;
            let (spec, sched) = load(&args)?;
            let x = io::resolve_state(&spec, &x0)?;
            let ms: ModeSet<f64> = assemble_modes(&spec, &sched)?;
            let traj = match mode {
                SimMode::Switching => simulate_switching(&ms, &spec, &x, horizon, dt)?,
                SimMode::Average => simulate_average(&average_system(&ms, &spec)?, &x, horizon, dt)?,
            };
            let mut opts = sched_options(&sched);
            opts.extend([
                ("mode", format!("{mode:?}")),
                ("x0", format!("{:?}", x.as_slice())),
                ("horizon", horizon.to_string()),
                ("dt", dt.to_string()),
            ]);
            let header = ArtifactHeader::new(0, &io::canonical_config("simulate", &options(&opts), &spec));
            io::write_file(&out, &io::simulation_csv(&header, &spec, &traj))?;
            println!("wrote {} samples to {}", traj.len(), out.display());
        }
        Command::CompareAveraging {
            scenario,
            cycles,
            x0,
            horizon,
            dt,
            out,
        } => {
            check_positive("horizon", horizon)?;
            check_positive("dt", dt)?;
            for &t in &cycles {
                check_positive("cycles", t)?;
            }
            let base = scenarios::resolve(&scenario)?;
            let x = io::resolve_state(&base, &x0)?;
            let rows = cycles
                .iter()
                .map(|&t| {
                    let spec = base.with_cycle_time(t)?;
                    let ms: ModeSet<f64> = assemble_modes(&spec, &uniform_schedule(&spec))?;
                    let sys = average_system(&ms, &spec)?;
                    let rep = greensplit_core::averaging_error(&ms, &spec, &sys, &x, horizon, dt)?;
                    Ok(ErrorRow {
                        cycle_time: t,
                        horizon,
                        error_percent: rep.error_percent,
                        excluded_samples: rep.excluded_samples,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let opts = [
                ("cycles", format!("{cycles:?}")),
                ("x0", format!("{:?}", x.as_slice())),
                ("horizon", horizon.to_string()),
                ("dt", dt.to_string()),
            ];
            let header = ArtifactHeader::new(0, &io::canonical_config("compare-averaging", &options(&opts), &base));
            io::write_file(&out, &io::error_csv(&header, &rows))?;
            for r in &rows {
                println!("T = {:>8.3}  error = {:.4}%", r.cycle_time, r.error_percent);
            }
        }
        Command::Optimize {
            sched: args,
            x0,
            mu,
            xi,
            starts,
            seed,
            out,
            plot_dir,
        } => {
            let (spec, sched) = load(&args)?;
            let x = io::resolve_state(&spec, &x0)?;
            let ms: ModeSet<f64> = assemble_modes(&spec, &sched)?;
            let c = output_map::<f64>(&spec);
            let opts = OptOptions {
                mu,
                xi,
                starts,
                seed,
                ..OptOptions::default()
            };
            let uniform_cost = congestion_cost(&ms.average_matrix(&ms.durations)?, &c, &x);
            let report = greensplit_core::optimize(&ms, &c, &x, &opts)?;
            let mut config = sched_options(&sched);
            config.extend([
                ("x0", format!("{:?}", x.as_slice())),
                ("mu", mu.to_string()),
                ("xi", xi.to_string()),
                ("starts", starts.to_string()),
                ("seed", seed.to_string()),
            ]);
            let header = ArtifactHeader::new(seed, &io::canonical_config("optimize", &options(&config), &spec));
            let body = OptimizeBody {
                scenario: spec.name.clone(),
                cycle_time: ms.cycle_time,
                mode_count: ms.mode_count(),
                uniform_cost,
                uniform_d: ms.durations.clone(),
                report,
            };
            io::write_file(&out, &io::json_artifact(&header, &body))?;
            if let Some(dir) = plot_dir {
                for (name, text) in io::export_plotdata(&header, &body.report) {
                    io::write_file(dir.join(name), &text)?;
                }
            }
            println!("initial cost: {:.6e}", uniform_cost);
            println!("optimized cost: {:.6e}", body.report.cost);
            println!("d*: {:?}", body.report.d_star);
            println!("wrote {}", out.display());
        }
        Command::Distributed {
            sched: args,
            agents,
            rounds,
            x0,
            out,
        } => {
            let (spec, sched) = load(&args)?;
            let layout = io::agent_layout(&spec, &agents)?;
            let n = spec.n_states();
            let stacked = (layout.graph.agent_count() + 1) * n * n;
            if stacked > MAX_STACKED {
                return Err(Error::Validation(format!(
                    "stacked system has {stacked} unknowns (limit {MAX_STACKED}); use a smaller scenario or fewer agents"
                )));
            }
            let x = io::resolve_state(&spec, &x0)?;
            let ms: ModeSet<f64> = assemble_modes(&spec, &sched)?;
            let lambda = ms.average_matrix(&ms.durations)?;
            let d: DMatrix<f64> = &x * x.transpose();
            let max_rounds = rounds.unwrap_or_else(|| layout.graph.diameter().unwrap_or(0).max(1));
            let run = run_distributed(&lambda, &d, &layout.graph, &layout.assignment, max_rounds)?;
            let mut config = sched_options(&sched);
            config.extend([
                ("agents", agents.clone()),
                ("rounds", max_rounds.to_string()),
                ("x0", format!("{:?}", x.as_slice())),
            ]);
            let header = ArtifactHeader::new(0, &io::canonical_config("distributed", &options(&config), &spec));
            io::write_file(&out, &io::distributed_csv(&header, &run))?;
            println!("agents: {}, rounds: {}", layout.graph.agent_count(), run.rounds);
            println!("conservation error: {:.3e}", run.conservation_error(&d));
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GREENSPLIT_THREADS") {
        let threads: usize = v
            .parse()
            .ok()
            .filter(|&t| t > 0)
            .ok_or_else(|| Error::Validation(format!("GREENSPLIT_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match configure_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error class={}: {msg}", e.class());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
