use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use rorqual::harness::{
    loglog_slope, rounds_csv, run_scenario, summary_row, table1_configs, vertex_csv, AdversaryKind, Backend,
    RunOutcome, ScenarioConfig, SUMMARY_HEADER,
};
use rorqual::types::to_units;

#[derive(Parser)]
#[command(name = "rorqual", about = "Deterministic DAG mempool simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics, DAG dumps and optionally a trace.
    Run(Scenario),
    /// Run a scenario across committee sizes and seeds.
    Sweep {
        #[command(flatten)]
        scenario: Scenario,
        /// Committee sizes; f is set to the maximum for each.
        #[arg(long, value_delimiter = ',', default_value = "4,7,10,13,16")]
        ns: Vec<usize>,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Good and bad case latency and traffic for both backends.
    Table1 {
        #[arg(long, default_value_t = 4)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        f: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a scenario over several seeds and report invariant violations.
    CheckInvariants {
        #[command(flatten)]
        scenario: Scenario,
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
}

#[derive(Args)]
struct Scenario {
    /// TOML scenario file. Defaults apply when omitted.
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    f: Option<usize>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    gst: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    adversary: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Write a line trace of every network event.
    #[arg(long)]
    trace: bool,
}

impl Scenario {
    fn load(&self) -> Result<ScenarioConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
                ScenarioConfig::from_toml(&text).map_err(|e| e.to_string())?
            }
            None => ScenarioConfig::default(),
        };
        if let Some(n) = self.n {
            cfg.n = n;
        }
        if let Some(f) = self.f {
            cfg.f = f;
        }
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(g) = self.gst {
            cfg.gst = g;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(b) = &self.backend {
            cfg.backend = match b.as_str() {
                "rorqual" => Backend::Rorqual,
                "pull" => Backend::Pull,
                other => return Err(format!("unknown backend `{other}`")),
            };
        }
        if let Some(a) = &self.adversary {
            cfg.adversary.kind = a.parse::<AdversaryKind>().map_err(|e| e.to_string())?;
        }
        cfg.trace |= self.trace;
        cfg.validate().map_err(|e| e.to_string())?;
        Ok(cfg)
    }
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    fs::write(path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_run(out: &RunOutcome, dir: &Path) -> Result<(), String> {
    fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    write(&dir.join("summary.csv"), &format!("{SUMMARY_HEADER}\n{}\n", summary_row(out)))?;
    write(&dir.join("vertices.csv"), &vertex_csv(&out.metrics))?;
    write(&dir.join("rounds.csv"), &rounds_csv(&out.metrics))?;
    for node in &out.nodes {
        let mut buf = Vec::new();
        node.dag().write_edge_list(&mut buf).map_err(|e| e.to_string())?;
        fs::write(dir.join(format!("dag_{}.edges", node.id().0)), buf).map_err(|e| e.to_string())?;
    }
    if out.config.trace {
        write(&dir.join("trace.txt"), &out.log.trace)?;
    }
    Ok(())
}

fn report(out: &RunOutcome) -> bool {
    for v in &out.violations {
        eprintln!("violation (seed {}): {v}", out.config.seed);
    }
    out.violations.is_empty()
}

fn real_main() -> Result<bool, String> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(s) => {
            let cfg = s.load()?;
            let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
            write_run(&out, &s.out)?;
            println!("{SUMMARY_HEADER}\n{}", summary_row(&out));
            Ok(report(&out))
        }
        Command::Sweep { scenario, ns, seeds } => {
            let base = scenario.load()?;
            let mut cfgs = Vec::new();
            for &n in &ns {
                for seed in 0..seeds {
                    cfgs.push(ScenarioConfig { n, f: (n - 1) / 3, seed: base.seed + seed, ..base.clone() });
                }
            }
            let outs: Vec<RunOutcome> =
                cfgs.par_iter().map(run_scenario).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            let mut csv = format!("{SUMMARY_HEADER}\n");
            let mut ok = true;
            for o in &outs {
                csv.push_str(&summary_row(o));
                csv.push('\n');
                ok &= report(o);
            }
            fs::create_dir_all(&scenario.out).map_err(|e| e.to_string())?;
            write(&scenario.out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            let pts: Vec<(f64, f64)> = outs.iter().map(|o| (o.config.n as f64, o.metrics.bytes_per_vertex)).collect();
            if ns.len() > 1 {
                println!("bytes-per-vertex exponent: {:.3}", loglog_slope(&pts));
            }
            Ok(ok)
        }
        Command::Table1 { n, f, seed, out } => {
            let cases = table1_configs(n, f, seed);
            let outs: Vec<(String, RunOutcome)> = cases
                .par_iter()
                .map(|(case, cfg)| run_scenario(cfg).map(|o| (case.clone(), o)))
                .collect::<Result<_, _>>()
                .map_err(|e| e.to_string())?;
            let mut csv = String::from("variant,case,max_payload_latency,max_full_latency,max_cert_latency,bytes_per_vertex\n");
            let mut ok = true;
            for (case, o) in &outs {
                let m = &o.metrics;
                let units = |t: Option<u64>| t.map(|t| format!("{:.3}", to_units(t))).unwrap_or_default();
                let full = m.vertices.iter().filter_map(|v| v.full_latency).max();
                csv.push_str(&format!(
                    "{},{case},{},{},{},{:.1}\n",
                    o.config.backend.name(),
                    units(m.max_payload_latency()),
                    units(full),
                    units(m.max_cert_latency()),
                    m.bytes_per_vertex
                ));
                ok &= report(o);
            }
            fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            write(&out.join("table1.csv"), &csv)?;
            print!("{csv}");
            Ok(ok)
        }
        Command::CheckInvariants { scenario, seeds } => {
            let base = scenario.load()?;
            let cfgs: Vec<ScenarioConfig> =
                (0..seeds).map(|s| ScenarioConfig { seed: base.seed + s, ..base.clone() }).collect();
            let outs: Vec<RunOutcome> =
                cfgs.par_iter().map(run_scenario).collect::<Result<_, _>>().map_err(|e| e.to_string())?;
            let bad = outs.iter().filter(|o| !report(o)).count();
            println!("{} runs, {bad} with violations", outs.len());
            Ok(bad == 0)
        }
    }
}

fn main() -> ExitCode {
    match real_main() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
