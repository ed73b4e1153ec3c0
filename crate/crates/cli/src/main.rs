use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use coexsim::deflection::{snr_sweep, write_sweep_csv, McOptions, StaticDiffusionModel, VarianceMethod};
use coexsim::harness::{
    case_study, deflection_snr_grid, load_scenario, run, scheduler_gap_study, write_rows, ExperimentPreset,
    GapStudyOptions, OperationMode, PresetName, RunOptions, ScenarioInputs,
};
use coexsim::model::Scenario;
use coexsim::rng::{stream, Purpose};
use coexsim::sensing::{build_rem, read_rss_csv, write_weight_map_csv};

#[derive(Debug, Parser)]
#[command(name = "coexsim", version, about = "IoT / incumbent spectrum-sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment preset and write CSVs plus a manifest.
    Run {
        #[arg(long)]
        preset: String,
        /// Scenario JSON; the preset's built-in scenario when omitted.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Worker threads (0 = all cores).
        #[arg(long, default_value_t = 0)]
        parallelism: usize,
        /// Override the preset's realization count.
        #[arg(long)]
        realizations: Option<usize>,
        /// Realization exported as the per-block snapshot.
        #[arg(long, default_value_t = 0)]
        snapshot: u64,
    },
    /// Compare exact, LP-rounded, heuristic and random sensing assignments.
    ScheduleBench {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 48)]
        num_bs: usize,
        #[arg(long, default_value_t = 4)]
        bands: usize,
        #[arg(long, default_value_t = 2000.0)]
        area: f64,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Per-instance CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Deflection of the static-combiner filter versus SNR on a 3x3 grid.
    Deflection {
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0.1)]
        noise_power: f64,
        #[arg(long, default_value_t = 0.95)]
        smoothing: f64,
        /// expansion | expansion_exact_phi | joint_moments
        #[arg(long, default_value = "expansion")]
        method: String,
        #[arg(long, default_value_t = 16)]
        chains: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// CSV with `snr_db,delta_theory,delta_mc,delta_ed`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Radio environment map from an RSS grid with partial participation.
    Rem {
        #[arg(long)]
        rss: PathBuf,
        #[arg(long)]
        fraction: f64,
        #[arg(long, default_value_t = 2.0)]
        radius: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 0.95)]
        smoothing: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Weight map CSV (`node_id,x_m,y_m,w`).
        #[arg(long)]
        out: PathBuf,
    },
    /// Devices scheduled with access-point sites as incumbents.
    CaseStudy {
        #[arg(long)]
        aps: PathBuf,
        /// lte_m | nb_iot
        #[arg(long)]
        mode: String,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        realizations: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Per-scheme CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_method(s: &str) -> coexsim::Result<VarianceMethod> {
    [VarianceMethod::Expansion, VarianceMethod::ExpansionExactPhi, VarianceMethod::JointMoments]
        .into_iter()
        .find(|m| m.as_str() == s)
        .ok_or_else(|| coexsim::Error::InvalidArgument(format!("unknown variance method `{s}`")))
}

fn load_or(path: Option<&Path>, default: Scenario) -> coexsim::Result<Scenario> {
    match path {
        Some(p) => load_scenario(p),
        None => Ok(default),
    }
}

fn execute(cli: Cli) -> coexsim::Result<()> {
    match cli.command {
        Command::Run {
            preset,
            scenario,
            seed,
            out,
            parallelism,
            realizations,
            snapshot,
        } => {
            let preset = ExperimentPreset::get(PresetName::parse(&preset)?);
            let scenario = load_or(scenario.as_deref(), preset.base_scenario())?;
            let opts = RunOptions {
                seed,
                parallelism,
                realizations,
                snapshot_realization: snapshot,
            };
            let m = run(&preset, &scenario, &out, &opts)?;
            println!(
                "preset {} seed {} realizations {} finished in {:.1} s",
                m.preset, m.seed, m.realizations, m.wall_clock_s
            );
            for f in &m.files {
                println!("  {} {}", f.sha256, out.join(&f.path).display());
            }
        }
        Command::ScheduleBench {
            instances,
            num_bs,
            bands,
            area,
            restarts,
            seed,
            out,
        } => {
            let opts = GapStudyOptions {
                instances,
                num_bs,
                num_bands: bands,
                area_m: area,
                restarts,
            };
            let rows = scheduler_gap_study(&opts, seed)?;
            let n = rows.len() as f64;
            let within = |f: fn(&coexsim::harness::GapRow) -> f64| rows.iter().filter(|r| f(r) <= 1.05).count();
            let mean = |f: fn(&coexsim::harness::GapRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
            println!("method      mean_ratio_to_exact  within_5pct");
            println!("heuristic   {:<20.4} {}/{}", mean(|r| r.heuristic_ratio()), within(|r| r.heuristic_ratio()), rows.len());
            println!("lp_rounded  {:<20.4} {}/{}", mean(|r| r.lp_ratio()), within(|r| r.lp_ratio()), rows.len());
            println!("random      {:<20.4} {}/{}", mean(|r| r.random_ratio()), within(|r| r.random_ratio()), rows.len());
            println!("exact proven optimal on {}/{}", rows.iter().filter(|r| r.exact_proven).count(), rows.len());
            if let Some(p) = out {
                write_rows(&p, &rows)?;
            }
        }
        Command::Deflection {
            step,
            noise_power,
            smoothing,
            method,
            chains,
            samples,
            seed,
            out,
        } => {
            let method = parse_method(&method)?;
            let base = StaticDiffusionModel::grid(3, step, noise_power, 0.0, smoothing)?;
            let mc = McOptions {
                chains,
                samples_per_chain: samples,
                burn_in: None,
                seed,
            };
            let rows = snr_sweep(&base, &[step], &deflection_snr_grid(), method, &mc)?;
            println!("snr_db  delta_theory  delta_mc  delta_ed");
            for r in &rows {
                println!("{:>6}  {:>12.4}  {:>8.4}  {:>8.4}", r.snr_db, r.delta_theory, r.delta_mc, r.delta_ed);
            }
            if let Some(p) = out {
                write_sweep_csv(&p, &rows)?;
            }
        }
        Command::Rem {
            rss,
            fraction,
            radius,
            step,
            smoothing,
            seed,
            out,
        } => {
            let grid = read_rss_csv(&rss)?;
            let r = build_rem(&grid, fraction, radius, step, smoothing, &mut stream(seed, 0, Purpose::Misc))?;
            write_weight_map_csv(&out, &grid, &r.weights)?;
            println!(
                "{} of {} nodes participated; weight map written to {}",
                r.participating.iter().filter(|&&p| p).count(),
                grid.len(),
                out.display()
            );
        }
        Command::CaseStudy {
            aps,
            mode,
            scenario,
            realizations,
            seed,
            out,
        } => {
            let mode = OperationMode::parse(&mode)?;
            let mut s = load_or(scenario.as_deref(), coexsim::harness::case_study_base())?;
            s.incumbents.csv_path = Some(aps.display().to_string());
            if let Some(seed) = seed {
                s.rng_seed = seed;
            }
            let inputs = ScenarioInputs::load(&s)?;
            for w in inputs.incumbent_sites.iter().flat_map(|t| t.warnings.iter()) {
                eprintln!("warning: {w}");
            }
            let run = case_study(&s, &inputs, mode, realizations, s.rng_seed)?;
            let means = run.mean_devices_served();
            println!("mode {} ({} realizations)", mode.as_str(), realizations);
            for (scheme, v) in &means {
                println!("  {scheme:<24} {v:.1} devices scheduled");
            }
            if let Some(p) = out {
                #[derive(serde::Serialize)]
                struct Row<'a> {
                    mode: &'a str,
                    scheme: &'a str,
                    mean_devices_served: f64,
                }
                let rows: Vec<Row> = means
                    .iter()
                    .map(|(s, v)| Row {
                        mode: mode.as_str(),
                        scheme: s,
                        mean_devices_served: *v,
                    })
                    .collect();
                write_rows(&p, &rows)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
