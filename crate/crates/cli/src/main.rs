use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ra_iot_sim::harness::{
    emit, run_experiment, sweep, to_csv_string, to_json_string, Format, MetricsReport, Scenario,
};
use ra_iot_sim::workload::Protocol;
use ra_iot_sim::SimError;

#[derive(Parser)]
#[command(name = "ra-iot-sim", version, about = "CoAP and MQTT over a CRDSA satellite return link")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every replication of a scenario.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        out: Output,
    },
    /// Run a CoAP scenario once per NSTART value.
    Sweep {
        /// Scenario file; built-in CoAP defaults when omitted.
        scenario: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,10,100")]
        nstart: Vec<usize>,
        #[command(flatten)]
        out: Output,
    },
    /// Parse and check a scenario file without running it.
    Validate { scenario: PathBuf },
}

#[derive(Args)]
struct Output {
    /// Override the scenario seed; replication i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of replications.
    #[arg(long)]
    reps: Option<usize>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: Format,
}

impl Output {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(r) = self.reps {
            sc.replications = r;
        }
    }

    fn write(&self, reports: &[MetricsReport]) -> ra_iot_sim::Result<()> {
        match &self.out {
            Some(path) => emit(reports, self.format, path),
            None => {
                let text = match self.format {
                    Format::Csv => to_csv_string(reports)?,
                    Format::Json => to_json_string(reports)? + "\n",
                };
                std::io::stdout()
                    .write_all(text.as_bytes())
                    .map_err(|e| SimError::Io {
                        path: PathBuf::from("<stdout>"),
                        source: e,
                    })
            }
        }
    }
}

fn load(path: &Path) -> ra_iot_sim::Result<Scenario> {
    Scenario::from_file(path)
}

fn summarize(reports: &[MetricsReport]) {
    for r in reports {
        let s = &r.summary;
        let label = match r.nstart {
            Some(n) => format!("{} nstart={n}", r.protocol.as_str()),
            None => r.protocol.as_str().to_string(),
        };
        eprintln!(
            "{} seed={} {label}: goodput {:.2} kB/s, load {:.4} [{:.4}, {:.4}], {} flows, {} incomplete, {} hash mismatches",
            r.scenario,
            r.seed,
            s.goodput_bps / 1000.0,
            s.load_mean,
            s.load_p25,
            s.load_p75,
            s.measured_flows,
            s.incomplete_flows,
            s.hash_mismatches,
        );
    }
}

fn execute(cmd: Cmd) -> ra_iot_sim::Result<()> {
    match cmd {
        Cmd::Run { scenario, out } => {
            let mut sc = load(&scenario)?;
            out.apply(&mut sc);
            sc.validate()?;
            let reports = run_experiment(&sc)?;
            summarize(&reports);
            out.write(&reports)
        }
        Cmd::Sweep {
            scenario,
            nstart,
            out,
        } => {
            let mut sc = match scenario {
                Some(p) => load(&p)?,
                None => Scenario::new(Protocol::Coap),
            };
            out.apply(&mut sc);
            sc.validate()?;
            let reports = sweep(&sc, &nstart)?;
            summarize(&reports);
            out.write(&reports)
        }
        Cmd::Validate { scenario } => {
            let sc = load(&scenario)?;
            println!(
                "{}: ok ({} protocol, {} replications)",
                scenario.display(),
                sc.protocol.as_str(),
                sc.replications
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                SimError::Config { .. } | SimError::Parse { .. } | SimError::Io { .. } => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}
