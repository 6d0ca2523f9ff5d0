use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::Parser;

use casss::bench::{self, Backend, Experiment, CSV_HEADER};
use casss::config::ConfigFile;
use casss::transport::net::{Cluster, Directory, NetConfig};

/// Runs a benchmark sweep, or hosts one node with `serve`.
#[derive(Parser, Debug)]
#[command(name = "bench", version)]
struct Args {
    /// readers, writers, servers, objsize, reset, overhead or serve
    experiment: String,
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "sim")]
    backend: Backend,
    /// Overrides `scenario.seed`.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, env = "CASSS_BENCH_OUT", default_value = "bench-out")]
    out: PathBuf,
    /// serve: server or client
    #[arg(long)]
    role: Option<String>,
    /// serve: position of this node among the servers or the clients
    #[arg(long)]
    index: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    match run(args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: Args) -> Result<bool, Box<dyn std::error::Error>> {
    let cfg = ConfigFile::load(&args.config)?;
    let mut base = cfg.scenario.clone();
    if let Some(seed) = args.seed {
        base.seed = seed;
    }
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, stop.clone())?;
    }
    if args.experiment == "serve" {
        return serve(&args, &cfg, base, &stop);
    }
    let exp: Experiment = args.experiment.parse()?;
    let reps = cfg.repetitions.unwrap_or(match args.backend {
        Backend::Sim => 50,
        Backend::Net => 20,
    });
    let summary = bench::run_experiment(exp, &base, args.backend, reps, &args.out, &stop)?;
    log::info!("{} rows written to {}", summary.rows.len(), args.out.join(format!("{exp}.csv")).display());
    Ok(summary.complete)
}

fn serve(args: &Args, cfg: &ConfigFile, base: casss::sim::ScenarioConfig, stop: &AtomicBool) -> Result<bool, Box<dyn std::error::Error>> {
    let dir = Directory::parse(&cfg.quorum().servers, &cfg.client_addrs)?;
    let index = args.index.ok_or("serve needs --index")?;
    let node = match args.role.as_deref() {
        Some("server") => index,
        Some("client") => dir.n() + index,
        _ => return Err("serve needs --role server|client".into()),
    };
    let cluster = Cluster::single(&base, dir, node, NetConfig::default())?;
    if node < cfg.quorum().n() {
        log::info!("server {index} listening on {}", cluster.directory().servers[index]);
        cluster.serve(stop);
        return Ok(true);
    }
    let r = cluster.run(stop);
    let sample = bench::sample(&r.history, 0, None);
    write_client_csv(&args.out, index, base.quorum.variant, &[sample], &r.history)?;
    Ok(r.finished)
}

fn write_client_csv(
    out: &Path,
    index: usize,
    variant: casss::Variant,
    samples: &[bench::Sample],
    history: &casss::History,
) -> std::io::Result<()> {
    std::fs::create_dir_all(out)?;
    let mut text = format!("{CSV_HEADER}\n");
    for row in bench::rows(index as u64, variant, samples) {
        text.push_str(&row.csv());
        text.push('\n');
    }
    std::fs::write(out.join(format!("client-{index}.csv")), text)?;
    std::fs::write(out.join(format!("client-{index}-ops.csv")), history.ops_csv())
}
