//! Experiment sweeps over either back-end, summarized as CSV rows and plots.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, Ordering};

use plotters::prelude::*;
use rayon::prelude::*;

use crate::history::{History, OpKind, Outcome};
use crate::node::{Micros, MS};
use crate::sim::{run_scenario, ScenarioConfig};
use crate::transport::net::{Cluster, NetConfig};
use crate::types::{QuorumConfig, Variant};
use crate::{Error, Result};

pub const CSV_HEADER: &str = "sweep,variant,op,mean_ms,stddev_ms,rounds,bytes,unsuccessful_reads";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Experiment {
    Readers,
    Writers,
    Servers,
    ObjSize,
    Reset,
    Overhead,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::Readers,
        Experiment::Writers,
        Experiment::Servers,
        Experiment::ObjSize,
        Experiment::Reset,
        Experiment::Overhead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Readers => "readers",
            Experiment::Writers => "writers",
            Experiment::Servers => "servers",
            Experiment::ObjSize => "objsize",
            Experiment::Reset => "reset",
            Experiment::Overhead => "overhead",
        }
    }

    /// Label of the swept parameter.
    pub fn axis(self) -> &'static str {
        match self {
            Experiment::Readers => "readers",
            Experiment::Writers => "writers",
            Experiment::Servers | Experiment::Reset | Experiment::Overhead => "servers",
            Experiment::ObjSize => "object size (KiB)",
        }
    }

    pub fn sweep(self) -> &'static [u64] {
        match self {
            Experiment::Readers | Experiment::Writers => &[5, 10, 15, 20, 30, 40],
            Experiment::Servers | Experiment::Overhead => &[5, 10, 15, 20, 30],
            Experiment::ObjSize => &[1, 32, 128, 512, 1024, 2048, 4096],
            Experiment::Reset => &[3, 5, 10, 15, 20],
        }
    }

    pub fn variants(self) -> &'static [Variant] {
        match self {
            Experiment::Reset => &[Variant::Casss],
            Experiment::Overhead => &[Variant::Cas, Variant::Casss],
            _ => &[Variant::MwAbd, Variant::Casss],
        }
    }

    /// The scenario for one sweep point: `base` supplies link model,
    /// operation counts, timing and seed; the experiment fixes the rest.
    pub fn scenario(self, base: &ScenarioConfig, x: u64, variant: Variant) -> ScenarioConfig {
        let x = x as usize;
        let (servers, f, writers, readers, object) = match self {
            Experiment::Readers => (10, 2, 10, x, 512 * 1024),
            Experiment::Writers => (10, 2, x, 10, 512 * 1024),
            Experiment::Servers => (x, 2, 10, 10, 512 * 1024),
            Experiment::ObjSize => (10, 2, 2, 3, x * 1024),
            Experiment::Reset => (x, 0, 1, 1, 256),
            Experiment::Overhead => (x, 2, 1, 1, 512 * 1024),
        };
        let mut sc = ScenarioConfig::new(variant, servers, f, writers + readers).with_roles(writers, readers);
        let mut q = QuorumConfig::new(servers, f, variant);
        q.clients = writers + readers;
        q.delta = base.quorum.delta;
        q.bounds = base.quorum.bounds;
        sc.quorum = q;
        sc.object_size = object;
        sc.link = base.link;
        sc.ops_per_client = base.ops_per_client;
        sc.inter_op_delay = base.inter_op_delay;
        sc.gossip_period = base.gossip_period;
        sc.inc_period = base.inc_period;
        sc.rto = base.rto;
        sc.phase_timeout = base.phase_timeout;
        sc.horizon = base.horizon;
        sc.warmup_ops = 1;
        if self == Experiment::Reset {
            sc.warmup_ops = 0;
            sc.overflow_write_at = Some(base.overflow_write_at.unwrap_or(2_000 * MS));
            sc.settle = 2_000 * MS;
        }
        sc
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| format!("unknown experiment `{s}` (readers, writers, servers, objsize, reset, overhead)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Sim,
    Net,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sim" => Ok(Backend::Sim),
            "net" => Ok(Backend::Net),
            _ => Err(format!("unknown backend `{s}` (sim, net)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub sweep: u64,
    pub variant: Variant,
    pub op: String,
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub rounds: f64,
    pub bytes: f64,
    pub unsuccessful_reads: u64,
}

impl Row {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{:.3},{:.3},{:.2},{:.0},{}",
            self.sweep, self.variant, self.op, self.mean_ms, self.stddev_ms, self.rounds, self.bytes, self.unsuccessful_reads
        )
    }
}

/// Drops exactly the fastest and the slowest sample; fewer than three
/// samples are kept as they are.
pub fn trim_extremes(samples: &[f64]) -> Vec<f64> {
    if samples.len() < 3 {
        return samples.to_vec();
    }
    let lo = (0..samples.len()).min_by(|&a, &b| samples[a].total_cmp(&samples[b])).expect("non-empty");
    let hi = (0..samples.len())
        .filter(|&i| i != lo)
        .max_by(|&a, &b| samples[a].total_cmp(&samples[b]))
        .expect("at least three samples");
    samples.iter().enumerate().filter(|(i, _)| *i != lo && *i != hi).map(|(_, s)| *s).collect()
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn stddev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// What one repetition contributes to a sweep point.
#[derive(Clone, Debug, Default)]
pub struct Sample {
    /// Trimmed mean latency (ms) per client, by operation kind.
    pub client_means: Vec<(OpKind, f64)>,
    /// (rounds, bytes) of every counted operation, by kind.
    pub costs: Vec<(OpKind, u64, u64)>,
    pub unsuccessful_reads: u64,
    /// Reset experiment: duration (ms), if the reset completed.
    pub reset_ms: Option<f64>,
    pub forced: Option<(u64, u64)>,
}

/// Summarizes the operations invoked at or after `from`.
pub fn sample(history: &History, from: Micros, forced_value: Option<u64>) -> Sample {
    let mut s = Sample::default();
    let mut clients: Vec<_> = history.ops.iter().map(|o| o.client).collect();
    clients.sort();
    clients.dedup();
    for c in clients {
        for kind in [OpKind::Read, OpKind::Write] {
            let mut lat = Vec::new();
            for o in history.ops.iter().filter(|o| o.client == c && o.kind == kind && o.invoke >= from) {
                if kind == OpKind::Write && Some(o.value) == forced_value {
                    s.forced = Some((o.rounds as u64, o.bytes));
                    continue;
                }
                match o.outcome {
                    Outcome::Ok => {
                        lat.push(o.latency().unwrap_or(0) as f64 / MS as f64);
                        s.costs.push((kind, o.rounds as u64, o.bytes));
                    }
                    Outcome::Unsuccessful => s.unsuccessful_reads += 1,
                    Outcome::Pending => {}
                }
            }
            if !lat.is_empty() {
                s.client_means.push((kind, mean(&trim_extremes(&lat))));
            }
        }
    }
    s
}

/// Rows for one sweep point and variant from all its repetitions.
pub fn rows(x: u64, variant: Variant, samples: &[Sample]) -> Vec<Row> {
    let mut out = Vec::new();
    for kind in [OpKind::Read, OpKind::Write] {
        let means: Vec<f64> = samples.iter().flat_map(|s| &s.client_means).filter(|(k, _)| *k == kind).map(|(_, m)| *m).collect();
        if means.is_empty() {
            continue;
        }
        let costs: Vec<(u64, u64)> =
            samples.iter().flat_map(|s| &s.costs).filter(|(k, _, _)| *k == kind).map(|(_, r, b)| (*r, *b)).collect();
        out.push(Row {
            sweep: x,
            variant,
            op: kind.name().to_string(),
            mean_ms: mean(&means),
            stddev_ms: stddev(&means),
            rounds: mean(&costs.iter().map(|c| c.0 as f64).collect::<Vec<_>>()),
            bytes: mean(&costs.iter().map(|c| c.1 as f64).collect::<Vec<_>>()),
            unsuccessful_reads: if kind == OpKind::Read { samples.iter().map(|s| s.unsuccessful_reads).sum() } else { 0 },
        });
    }
    let resets: Vec<f64> = samples.iter().filter_map(|s| s.reset_ms).collect();
    if !resets.is_empty() {
        let forced: Vec<(u64, u64)> = samples.iter().filter_map(|s| s.forced).collect();
        out.push(Row {
            sweep: x,
            variant,
            op: "reset".to_string(),
            mean_ms: mean(&resets),
            stddev_ms: stddev(&resets),
            rounds: mean(&forced.iter().map(|c| c.0 as f64).collect::<Vec<_>>()),
            bytes: mean(&forced.iter().map(|c| c.1 as f64).collect::<Vec<_>>()),
            unsuccessful_reads: 0,
        });
    }
    out
}

/// Runs one repetition of `sc` on `backend`.
pub fn run_once(sc: &ScenarioConfig, backend: Backend, stop: &AtomicBool) -> Result<Sample> {
    let (history, metrics, finished) = match backend {
        Backend::Sim => {
            let r = run_scenario(sc)?;
            (r.history, r.metrics, r.finished)
        }
        Backend::Net => {
            let r = Cluster::local(sc, NetConfig::default())?.run(stop);
            (r.history, r.metrics, r.finished)
        }
    };
    if !finished {
        return Err(Error::Incomplete(format!("seed {} stopped before every client finished", sc.seed)));
    }
    let from = metrics.barrier_at.unwrap_or(0);
    let mut s = sample(&history, from, metrics.overflow_value);
    s.reset_ms = metrics.reset_duration().map(|d| d as f64 / MS as f64);
    Ok(s)
}

/// Result of a sweep: the rows written and whether every point completed.
#[derive(Debug)]
pub struct Summary {
    pub rows: Vec<Row>,
    pub complete: bool,
}

/// Runs the sweep, appending each finished point to `<out>/<name>.csv` so
/// an interrupted run leaves its partial results behind, then plots them.
pub fn run_experiment(
    exp: Experiment,
    base: &ScenarioConfig,
    backend: Backend,
    repetitions: usize,
    out: &Path,
    stop: &AtomicBool,
) -> Result<Summary> {
    fs::create_dir_all(out)?;
    let csv = out.join(format!("{}.csv", exp.name()));
    let mut file = fs::File::create(&csv)?;
    writeln!(file, "{CSV_HEADER}")?;
    fs::write(out.join(format!("{}.meta", exp.name())), metadata(exp, base, backend, repetitions))?;
    let mut all = Vec::new();
    let mut complete = true;
    'sweep: for &x in exp.sweep() {
        for &variant in exp.variants() {
            if stop.load(Ordering::SeqCst) {
                complete = false;
                break 'sweep;
            }
            let scenarios: Vec<ScenarioConfig> = (0..repetitions)
                .map(|rep| {
                    let mut sc = exp.scenario(base, x, variant);
                    sc.seed = base.seed.wrapping_add(rep as u64);
                    sc
                })
                .collect();
            let results: Vec<Result<Sample>> = match backend {
                Backend::Sim => scenarios.par_iter().map(|sc| run_once(sc, backend, stop)).collect(),
                Backend::Net => scenarios.iter().map(|sc| run_once(sc, backend, stop)).collect(),
            };
            let mut samples = Vec::new();
            for r in results {
                match r {
                    Ok(s) => samples.push(s),
                    Err(e) => {
                        log::warn!("{exp} {variant} at {x}: {e}");
                        complete = false;
                    }
                }
            }
            for row in rows(x, variant, &samples) {
                writeln!(file, "{}", row.csv())?;
                all.push(row);
            }
            file.flush()?;
            log::info!("{exp} {variant} at {x}: {} repetitions", samples.len());
        }
    }
    plot(exp, &all, &out.join(format!("{}.svg", exp.name())))?;
    Ok(Summary { rows: all, complete })
}

fn metadata(exp: Experiment, base: &ScenarioConfig, backend: Backend, repetitions: usize) -> String {
    format!(
        "experiment {exp}\nbackend {backend:?}\nrepetitions {repetitions}\nseed {}\nops_per_client {}\n\
         inter_op_delay_ms uniform 0..{}\nlatency_ms triangular {} {} {}\nloss {}\ndup {}\nreorder {}\n",
        base.seed,
        base.ops_per_client,
        base.inter_op_delay as f64 / MS as f64,
        base.link.latency.min as f64 / MS as f64,
        base.link.latency.mode as f64 / MS as f64,
        base.link.latency.max as f64 / MS as f64,
        base.link.loss,
        base.link.dup,
        base.link.reorder,
    )
}

/// Mean latency against the swept parameter, one line per variant and operation.
pub fn plot(exp: Experiment, rows: &[Row], path: &Path) -> Result<()> {
    let plot_err = |e: &dyn fmt::Display| Error::Io(std::io::Error::other(e.to_string()));
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| plot_err(&e))?;
    let xs: Vec<f64> = rows.iter().map(|r| r.sweep as f64).collect();
    let x_max = xs.iter().copied().fold(1.0, f64::max);
    let y_max = rows.iter().map(|r| r.mean_ms + r.stddev_ms).fold(1.0, f64::max) * 1.1;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("{exp}: operation latency"), ("sans-serif", 20))
        .margin(15)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0f64..x_max * 1.05, 0f64..y_max)
        .map_err(|e| plot_err(&e))?;
    chart.configure_mesh().x_desc(exp.axis()).y_desc("latency (ms)").draw().map_err(|e| plot_err(&e))?;
    let mut series: Vec<(Variant, &str)> = rows.iter().map(|r| (r.variant, r.op.as_str())).collect();
    series.sort();
    series.dedup();
    for (i, (variant, op)) in series.into_iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let points: Vec<(f64, f64)> =
            rows.iter().filter(|r| r.variant == variant && r.op == op).map(|r| (r.sweep as f64, r.mean_ms)).collect();
        chart
            .draw_series(LineSeries::new(points, color.stroke_width(2)))
            .map_err(|e| plot_err(&e))?
            .label(format!("{variant} {op}"))
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart.configure_series_labels().background_style(WHITE).border_style(BLACK).draw().map_err(|e| plot_err(&e))?;
    root.present().map_err(|e| plot_err(&e))?;
    Ok(())
}
