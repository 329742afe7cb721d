//! Serialization of traces, event logs, and run summaries. Trajectory and
//! event files are delimited text with full-precision floats (Rust's
//! shortest round-trip formatting); the summary is a TOML document.

use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::dynamics::Params;
use crate::monitor::{MinDistanceDigest, MonitorReport};
use crate::trace::{Event, EventKind, WorldTrace};
use crate::AgentId;

pub const TRACE_HEADER: &str = "t,id,x,y,theta,v,omega,mode,temp_goal_x,temp_goal_y";
pub const EVENT_HEADER: &str = "t,id,from_mode,to_mode,reset_kind,new_temp_goal_x,new_temp_goal_y";

/// Writes the trajectory file: one row per (tick, agent), ordered by tick
/// then agent id.
pub fn write_trace<W: Write>(trace: &WorldTrace, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{TRACE_HEADER}")?;
    for row in &trace.rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            trace.time_of(row.tick),
            row.agent,
            row.pos.x,
            row.pos.y,
            row.heading,
            row.v,
            row.omega,
            row.mode.label(),
            row.temp_goal.x,
            row.temp_goal.y,
        )?;
    }
    w.flush()
}

/// Writes the event file: one row per switch or reset.
pub fn write_events<W: Write>(trace: &WorldTrace, out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "{EVENT_HEADER}")?;
    for e in &trace.events {
        let t = trace.time_of(e.tick);
        match &e.kind {
            EventKind::Switch {
                from,
                to,
                reset,
                new_goal,
            } => {
                let from = from.map_or("init", |m| m.label());
                let reset = reset.map_or("", |r| r.label());
                let (gx, gy) = match new_goal {
                    Some(g) => (format!("{}", g.x), format!("{}", g.y)),
                    None => (String::new(), String::new()),
                };
                writeln!(w, "{},{},{},{},{},{},{}", t, e.agent, from, to.label(), reset, gx, gy)?;
            }
            EventKind::LeaderSub { sub } => {
                writeln!(w, "{},{},q2,q2,{},,", t, e.agent, sub.label())?;
            }
        }
    }
    w.flush()
}

/// One parsed trajectory row, used for round-trip checks and external
/// tooling.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRow {
    pub t: f64,
    pub id: AgentId,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
    pub mode: String,
    pub temp_goal_x: f64,
    pub temp_goal_y: f64,
}

pub fn read_trace<R: BufRead>(reader: R) -> io::Result<Vec<ParsedRow>> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if lineno == 0 {
            if line != TRACE_HEADER {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidData,
                    format!("unexpected trajectory header: {line}"),
                ));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(io::Error::new(
                io::ErrorKind::InvalidData,
                format!("line {lineno}: expected 10 fields, got {}", fields.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| {
                io::Error::new(io::ErrorKind::InvalidData, format!("line {lineno}: {e}"))
            })
        };
        rows.push(ParsedRow {
            t: num(fields[0])?,
            id: fields[1]
                .parse()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{e}")))?,
            x: num(fields[2])?,
            y: num(fields[3])?,
            theta: num(fields[4])?,
            v: num(fields[5])?,
            omega: num(fields[6])?,
            mode: fields[7].to_string(),
            temp_goal_x: num(fields[8])?,
            temp_goal_y: num(fields[9])?,
        });
    }
    Ok(rows)
}

#[derive(Serialize)]
struct VerdictTable {
    safety: bool,
    bounds: bool,
    smoothness: bool,
    zeno: bool,
    convergence: bool,
}

#[derive(Serialize)]
struct SafetySummary {
    threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    min: Option<MinDistanceDigest>,
    /// Minimum of the per-tick series over each tenth of the run.
    decile_minima: Vec<f64>,
}

#[derive(Serialize)]
struct AgentSummary {
    id: AgentId,
    switches: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_dwell: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    converged_at: Option<f64>,
    final_mode: String,
    final_goal_distance: f64,
    max_excursion: f64,
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    seed: u64,
    dt: f64,
    ticks: u64,
    n_agents: usize,
    all_pass: bool,
    verdicts: VerdictTable,
    safety: SafetySummary,
    params: &'a Params,
    agents: Vec<AgentSummary>,
}

/// Renders the run summary (monitor verdicts, min-distance digest,
/// per-agent switch/dwell/convergence stats, parameter echo) as TOML.
pub fn summary_toml(trace: &WorldTrace, report: &MonitorReport) -> String {
    let series = &report.safety.series;
    let chunk = (series.len() / 10).max(1);
    let decile_minima = series
        .chunks(chunk)
        .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
        .take(10)
        .collect();

    let agents = trace
        .agents
        .iter()
        .enumerate()
        .map(|(k, meta)| {
            let zeno = &report.zeno.per_agent[k];
            let conv = &report.convergence.per_agent[k];
            AgentSummary {
                id: meta.id,
                switches: zeno.switches,
                min_dwell: zeno.min_dwell,
                converged_at: conv.converged_at,
                final_mode: conv.final_mode.label().to_string(),
                final_goal_distance: conv.final_goal_distance,
                max_excursion: conv.max_excursion,
            }
        })
        .collect();

    let doc = SummaryDoc {
        seed: trace.seed,
        dt: trace.dt,
        ticks: trace.ticks,
        n_agents: trace.n_agents(),
        all_pass: report.all_pass(),
        verdicts: VerdictTable {
            safety: report.safety.pass,
            bounds: report.bounds.pass,
            smoothness: report.smoothness.pass,
            zeno: report.zeno.pass,
            convergence: report.convergence.pass,
        },
        safety: SafetySummary {
            threshold: report.safety.threshold,
            min: report.safety.min,
            decile_minima,
        },
        params: &trace.params,
        agents,
    };
    toml::to_string(&doc).expect("summary serializes")
}

pub fn write_trace_file(trace: &WorldTrace, path: &Path) -> io::Result<()> {
    write_trace(trace, std::fs::File::create(path)?)
}

pub fn write_events_file(trace: &WorldTrace, path: &Path) -> io::Result<()> {
    write_events(trace, std::fs::File::create(path)?)
}

pub fn write_summary_file(
    trace: &WorldTrace,
    report: &MonitorReport,
    path: &Path,
) -> io::Result<()> {
    std::fs::write(path, summary_toml(trace, report))
}

/// Plot-ready delimited data mirroring the usual result figures: the
/// per-tick minimum pairwise distance alongside each agent's speed series.
pub fn write_mindist_series<W: Write>(trace: &WorldTrace, series: &[f64], out: W) -> io::Result<()> {
    let mut w = BufWriter::new(out);
    writeln!(w, "t,min_distance")?;
    for (tick, d) in series.iter().enumerate() {
        writeln!(w, "{},{}", trace.time_of(tick as u64), d)?;
    }
    w.flush()
}

/// All events of one agent, in time order (helper for event-log tooling).
pub fn events_of<'a>(trace: &'a WorldTrace, id: AgentId) -> Vec<&'a Event> {
    trace.events_for(id).collect()
}
