//! `habs`: batch commands and the live service of the virtual trainer.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use habs_client::Client;
use habs_core::api::{CalibrateResponse, SimulateResponse, StepRequest};
use habs_core::io::{
    from_document, parse_calibration_points, parse_step_record, to_document, write_step_record,
};
use habs_core::{
    fit_cubic, identify_regions, run_closed_loop, run_open_loop_step, PlantConfig, RegionalModel,
    Scenario, StepRecord,
};
use habs_server::{serve, LiveConfig};
use tokio::net::TcpListener;

const DEFAULT_PORT: u16 = 8326;

#[derive(Debug, Parser)]
#[command(
    name = "habs",
    version,
    about = "Virtual hot-air-blower process trainer"
)]
struct Cli {
    /// Run batch commands on a running `habs serve` instead of in process.
    #[arg(long, global = true, env = "HABS_SERVER")]
    server: Option<String>,
    /// Default directory for output files.
    #[arg(long, global = true, env = "HABS_LOG_DIR", default_value = ".")]
    log_dir: PathBuf,
    #[command(subcommand)]
    command: Verb,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Fit the cubic calibration to a `T,V` points file.
    Calibrate {
        data: PathBuf,
        /// Output polynomial document [default: <log-dir>/calibration.json].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Record an open-loop step from `u0` to `u1` volts.
    Step {
        u0: f64,
        u1: f64,
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long, default_value_t = 0.1)]
        ts: f64,
        #[arg(long, default_value = "canonical")]
        preset: String,
        /// Output `t,u,T` file [default: <log-dir>/step_<u0>_<u1>.csv].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Identify regional first-order models from step records.
    Identify {
        #[arg(required = true, num_args = 1..)]
        records: Vec<PathBuf>,
        /// Also write the model document here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Run a closed-loop scenario and write its CSV log.
    Simulate {
        scenario: PathBuf,
        /// Output log [default: <log-dir>/<scenario stem>.csv].
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Serve the HTTP API and the paced live loop.
    Serve {
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: String,
        /// Scenario for the live loop [default: hold 35 °C].
        scenario: Option<PathBuf>,
        /// Wall-clock speed-up of the live loop.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn client(server: &Option<String>) -> Result<Option<Client>> {
    Ok(server.as_deref().map(Client::new).transpose()?)
}

async fn calibrate(cli: &Cli, data: &Path, out: Option<&Path>) -> Result<()> {
    let points = parse_calibration_points(&read(data)?)
        .with_context(|| format!("cannot parse {}", data.display()))?;
    let resp = match client(&cli.server)? {
        Some(c) => c.calibrate(points.clone()).await?,
        None => CalibrateResponse::new(fit_cubic(&points)?, &points),
    };
    let out = out.map_or_else(|| cli.log_dir.join("calibration.json"), Path::to_path_buf);
    write(&out, &to_document(&resp.poly)?)?;
    println!("{:>8} {:>9} {:>9}", "T", "V", "residual");
    for (p, r) in points.iter().zip(&resp.residuals) {
        println!("{:>8.2} {:>9.4} {:>+9.3}", p.temperature, p.voltage, r);
    }
    println!("rms {:.3} °C, wrote {}", resp.rms, out.display());
    Ok(())
}

async fn step(cli: &Cli, req: StepRequest, out: Option<&Path>) -> Result<()> {
    let record = match client(&cli.server)? {
        Some(c) => c.step(&req).await?,
        None => {
            let cfg = PlantConfig::preset(&req.preset)?;
            run_open_loop_step(req.u0, req.u1, req.duration, req.ts, &cfg)?
        }
    };
    let out = out.map_or_else(
        || cli.log_dir.join(format!("step_{}_{}.csv", req.u0, req.u1)),
        Path::to_path_buf,
    );
    write(&out, &write_step_record(&record))?;
    println!("wrote {} ({} samples)", out.display(), record.samples.len());
    Ok(())
}

async fn identify(cli: &Cli, paths: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let records = paths
        .iter()
        .map(|p| {
            parse_step_record(&read(p)?).with_context(|| format!("cannot parse {}", p.display()))
        })
        .collect::<Result<Vec<StepRecord>>>()?;
    let model: RegionalModel = match client(&cli.server)? {
        Some(c) => c.identify(records).await?,
        None => identify_regions(&records)?,
    };
    let doc = to_document(&model)?;
    if let Some(out) = out {
        write(out, &doc)?;
    }
    print!("{doc}");
    Ok(())
}

async fn simulate(cli: &Cli, path: &Path, out: Option<&Path>) -> Result<()> {
    let scenario: Scenario =
        from_document(&read(path)?).with_context(|| format!("cannot parse {}", path.display()))?;
    let resp = match client(&cli.server)? {
        Some(c) => c.simulate(&scenario).await?,
        None => SimulateResponse::from(&run_closed_loop(&scenario)?),
    };
    let out = out.map_or_else(
        || {
            let stem = path.file_stem().unwrap_or("scenario".as_ref());
            cli.log_dir.join(stem).with_extension("csv")
        },
        Path::to_path_buf,
    );
    write(&out, &resp.csv)?;
    print!("{}", to_document(&resp.summary)?);
    eprintln!("wrote {}", out.display());
    Ok(())
}

fn live_scenario() -> Scenario {
    Scenario {
        setpoints: vec![(0.0, 35.0)],
        ..Scenario::default()
    }
}

async fn run_server(bind: &str, port: u16, scenario: Option<&Path>, speed: f64) -> Result<()> {
    if !(speed > 0.0 && speed.is_finite()) {
        bail!("speed must be positive, got {speed}");
    }
    let scenario = match scenario {
        Some(p) => {
            from_document(&read(p)?).with_context(|| format!("cannot parse {}", p.display()))?
        }
        None => live_scenario(),
    };
    let period = std::time::Duration::from_secs_f64(scenario.ts / speed);
    let cfg = LiveConfig::new(scenario).with_period(period);
    let listener = TcpListener::bind((bind, port))
        .await
        .with_context(|| format!("cannot bind {bind}:{port}"))?;
    println!("listening on http://{}", listener.local_addr()?);
    serve(listener, cfg, async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}

async fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Verb::Calibrate { data, out } => calibrate(&cli, data, out.as_deref()).await,
        Verb::Step {
            u0,
            u1,
            duration,
            ts,
            preset,
            out,
        } => {
            let req = StepRequest {
                u0: *u0,
                u1: *u1,
                duration: *duration,
                ts: *ts,
                preset: preset.clone(),
            };
            step(&cli, req, out.as_deref()).await
        }
        Verb::Identify { records, out } => identify(&cli, records, out.as_deref()).await,
        Verb::Simulate { scenario, out } => simulate(&cli, scenario, out.as_deref()).await,
        Verb::Serve {
            port,
            bind,
            scenario,
            speed,
        } => run_server(bind, *port, scenario.as_deref(), *speed).await,
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| "habs=info,habs_server=info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    match run(Cli::parse()).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
