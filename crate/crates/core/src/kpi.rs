//! Per-flow KPIs (SMD, SMJ), shaper comparisons and result export.
//!
//! Delays are always emission to delivery. Offsets are not included.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{DelayBounds, FeasibilityReport, ValidationReport};
use crate::engine::TraceSet;
use crate::time::Nanos;
use crate::traffic::{FlowId, FlowSet, QueueSelector};

pub const DELAY_NOTE: &str = "# delay_us = delivery - emission; bounds exclude the flow offset";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowKpi {
    pub flow: FlowId,
    pub gid: u8,
    pub qid: Option<QueueSelector>,
    pub sw_num: usize,
    pub period_us: u64,
    /// `None` when nothing was delivered in the measured window.
    pub smd: Option<Nanos>,
    pub smj: Option<Nanos>,
    /// Rounded to the nearest nanosecond.
    pub mean: Option<Nanos>,
    pub min: Option<Nanos>,
    pub delivered: u64,
    pub dropped: u64,
    pub deadline_misses: u64,
}

impl FlowKpi {
    pub fn has_deliveries(&self) -> bool {
        self.delivered > 0
    }
}

/// Folds the measured window of `traces` into one KPI record per flow.
pub fn compute_kpis(traces: &TraceSet, flows: &FlowSet) -> Vec<FlowKpi> {
    flows
        .flows()
        .iter()
        .map(|flow| {
            let delays: Vec<Nanos> = traces.measured(flow.id).filter_map(|f| f.delay()).collect();
            let dropped = traces.flows.get(&flow.id).map_or(0, |t| {
                t.dropped.iter().filter(|f| f.emission >= traces.measure_from).count() as u64
            });
            let max = delays.iter().copied().max();
            let min = delays.iter().copied().min();
            let mean = (!delays.is_empty()).then(|| {
                let sum: i128 = delays.iter().map(|d| d.0 as i128).sum();
                let n = delays.len() as i128;
                Nanos(((2 * sum + n) / (2 * n)) as i64)
            });
            FlowKpi {
                flow: flow.id,
                gid: flow.gid,
                qid: flow.qid,
                sw_num: flow.sw_count(),
                period_us: flow.period_us,
                smd: max,
                smj: max.zip(min).map(|(a, b)| a - b),
                mean,
                min,
                delivered: delays.len() as u64,
                dropped,
                deadline_misses: delays.iter().filter(|&&d| d > flow.deadline()).count() as u64,
            }
        })
        .collect()
}

#[derive(Debug, Error)]
pub enum KpiError {
    #[error("KPI sets do not cover the same flows ({0})")]
    MismatchedFlowSets(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad value in column {column}: {value}")]
    BadValue { column: &'static str, value: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComparisonRow {
    pub flow: FlowId,
    pub gid: u8,
    pub sw_num: usize,
    /// One entry per label, in label order.
    pub smd: Vec<Option<Nanos>>,
    pub smj: Vec<Option<Nanos>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupSummary {
    pub gid: u8,
    pub flows: usize,
    pub max_smd: Vec<Option<Nanos>>,
    pub max_smj: Vec<Option<Nanos>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Comparison {
    pub labels: Vec<String>,
    /// Sorted by gid, then flow id.
    pub rows: Vec<ComparisonRow>,
    pub groups: Vec<GroupSummary>,
}

/// Side-by-side SMD/SMJ for runs of the same flows under different shapers.
/// Group membership is taken from the first set.
pub fn compare_shapers(sets: &[(String, Vec<FlowKpi>)]) -> Result<Comparison, KpiError> {
    let labels: Vec<String> = sets.iter().map(|(l, _)| l.clone()).collect();
    let Some((_, reference)) = sets.first() else {
        return Ok(Comparison { labels, rows: Vec::new(), groups: Vec::new() });
    };
    let ids: BTreeSet<FlowId> = reference.iter().map(|k| k.flow).collect();
    let indexed: Vec<BTreeMap<FlowId, &FlowKpi>> =
        sets.iter().map(|(_, kpis)| kpis.iter().map(|k| (k.flow, k)).collect()).collect();
    for ((label, kpis), map) in sets.iter().zip(&indexed) {
        if map.len() != kpis.len() || map.keys().copied().collect::<BTreeSet<_>>() != ids {
            return Err(KpiError::MismatchedFlowSets(format!("set '{label}' differs from '{}'", labels[0])));
        }
    }

    let mut rows: Vec<ComparisonRow> = reference
        .iter()
        .map(|k| ComparisonRow {
            flow: k.flow,
            gid: k.gid,
            sw_num: k.sw_num,
            smd: indexed.iter().map(|m| m[&k.flow].smd).collect(),
            smj: indexed.iter().map(|m| m[&k.flow].smj).collect(),
        })
        .collect();
    rows.sort_by_key(|r| (r.gid, r.flow));

    let mut groups: Vec<GroupSummary> = Vec::new();
    for row in &rows {
        if groups.last().is_none_or(|g| g.gid != row.gid) {
            groups.push(GroupSummary {
                gid: row.gid,
                flows: 0,
                max_smd: vec![None; labels.len()],
                max_smj: vec![None; labels.len()],
            });
        }
        let g = groups.last_mut().unwrap();
        g.flows += 1;
        for i in 0..labels.len() {
            g.max_smd[i] = g.max_smd[i].max(row.smd[i]);
            g.max_smj[i] = g.max_smj[i].max(row.smj[i]);
        }
    }
    Ok(Comparison { labels, rows, groups })
}

// ---- export ----

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    #[default]
    Csv,
    Json,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Json => "json",
        }
    }
}

impl std::str::FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "json" | "json-like" => Ok(ExportFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

pub const KPI_COLUMNS: [&str; 15] = [
    "flow_id",
    "gid",
    "qid",
    "sw_num",
    "period_us",
    "smd_us",
    "smj_us",
    "mean_us",
    "min_us",
    "wcd_us",
    "bcd_us",
    "delivered",
    "dropped",
    "deadline_misses",
    "bound_pass",
];

/// A KPI record joined with its analytic bounds and validation verdict.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KpiRow {
    #[serde(flatten)]
    pub kpi: FlowKpi,
    pub wcd: Option<Nanos>,
    pub bcd: Option<Nanos>,
    pub bound_pass: Option<bool>,
}

pub fn join_rows(kpis: &[FlowKpi], bounds: &[DelayBounds], validation: Option<&ValidationReport>) -> Vec<KpiRow> {
    let b: BTreeMap<FlowId, &DelayBounds> = bounds.iter().map(|b| (b.flow, b)).collect();
    let v: BTreeMap<FlowId, bool> =
        validation.map(|r| r.flows.iter().map(|f| (f.flow, f.pass)).collect()).unwrap_or_default();
    kpis.iter()
        .map(|k| KpiRow {
            kpi: k.clone(),
            wcd: b.get(&k.flow).map(|b| b.wcd),
            bcd: b.get(&k.flow).map(|b| b.bcd),
            bound_pass: v.get(&k.flow).copied(),
        })
        .collect()
}

fn us(v: Option<Nanos>) -> String {
    v.map(Nanos::to_us_string).unwrap_or_default()
}

fn parse_us(column: &'static str, s: &str) -> Result<Option<Nanos>, KpiError> {
    if s.is_empty() {
        return Ok(None);
    }
    Nanos::parse_us(s).map(Some).ok_or_else(|| KpiError::BadValue { column, value: s.into() })
}

fn parse_num<T: std::str::FromStr>(column: &'static str, s: &str) -> Result<T, KpiError> {
    s.parse().map_err(|_| KpiError::BadValue { column, value: s.into() })
}

pub fn write_kpis_csv<W: Write>(mut out: W, rows: &[KpiRow]) -> Result<(), KpiError> {
    writeln!(out, "{DELAY_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(KPI_COLUMNS)?;
    for r in rows {
        let k = &r.kpi;
        w.write_record([
            k.flow.0.to_string(),
            k.gid.to_string(),
            k.qid.map(|q| q.to_string()).unwrap_or_default(),
            k.sw_num.to_string(),
            k.period_us.to_string(),
            us(k.smd),
            us(k.smj),
            us(k.mean),
            us(k.min),
            us(r.wcd),
            us(r.bcd),
            k.delivered.to_string(),
            k.dropped.to_string(),
            k.deadline_misses.to_string(),
            r.bound_pass.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_kpis_csv<R: Read>(input: R) -> Result<Vec<KpiRow>, KpiError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let col = |i: usize| rec.get(i).unwrap_or("");
        let qid = match col(2) {
            "" => None,
            "normal" => Some(QueueSelector::Normal),
            "tolerating" => Some(QueueSelector::Tolerating),
            other => return Err(KpiError::BadValue { column: "qid", value: other.into() }),
        };
        rows.push(KpiRow {
            kpi: FlowKpi {
                flow: FlowId(parse_num("flow_id", col(0))?),
                gid: parse_num("gid", col(1))?,
                qid,
                sw_num: parse_num("sw_num", col(3))?,
                period_us: parse_num("period_us", col(4))?,
                smd: parse_us("smd_us", col(5))?,
                smj: parse_us("smj_us", col(6))?,
                mean: parse_us("mean_us", col(7))?,
                min: parse_us("min_us", col(8))?,
                delivered: parse_num("delivered", col(11))?,
                dropped: parse_num("dropped", col(12))?,
                deadline_misses: parse_num("deadline_misses", col(13))?,
            },
            wcd: parse_us("wcd_us", col(9))?,
            bcd: parse_us("bcd_us", col(10))?,
            bound_pass: match col(14) {
                "" => None,
                v => Some(parse_num("bound_pass", v)?),
            },
        });
    }
    Ok(rows)
}

pub fn write_comparison_csv<W: Write>(mut out: W, cmp: &Comparison) -> Result<(), KpiError> {
    writeln!(out, "{DELAY_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["flow_id".to_string(), "gid".into(), "sw_num".into()];
    header.extend(cmp.labels.iter().map(|l| format!("smd_{l}_us")));
    header.extend(cmp.labels.iter().map(|l| format!("smj_{l}_us")));
    w.write_record(&header)?;
    for row in &cmp.rows {
        let mut rec = vec![row.flow.0.to_string(), row.gid.to_string(), row.sw_num.to_string()];
        rec.extend(row.smd.iter().map(|v| us(*v)));
        rec.extend(row.smj.iter().map(|v| us(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_validation_csv<W: Write>(mut out: W, report: &ValidationReport) -> Result<(), KpiError> {
    writeln!(out, "{DELAY_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["flow_id", "delivered", "min_us", "mean_us", "max_us", "bcd_us", "wcd_us", "pass"])?;
    let f = |v: Option<f64>| v.map(|x| format!("{x:.3}")).unwrap_or_default();
    for v in &report.flows {
        w.write_record([
            v.flow.0.to_string(),
            v.delivered.to_string(),
            f(v.min_us),
            f(v.mean_us),
            f(v.max_us),
            format!("{:.3}", v.bcd_us),
            format!("{:.3}", v.wcd_us),
            v.pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_bounds_csv<W: Write>(mut out: W, bounds: &[DelayBounds]) -> Result<(), KpiError> {
    writeln!(out, "{DELAY_NOTE}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["flow_id", "gid", "sw_num", "slot_us", "d_queue_us", "xi_us", "phi_us", "wcd_us", "bcd_us"])?;
    for b in bounds {
        w.write_record([
            b.flow.0.to_string(),
            b.gid.to_string(),
            b.sw_num.to_string(),
            b.slot.to_us_string(),
            b.d_queue.to_us_string(),
            b.xi.to_us_string(),
            b.phi.to_us_string(),
            b.wcd.to_us_string(),
            b.bcd.to_us_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One row per violation; an empty body means the scenario passed.
pub fn write_feasibility_csv<W: Write>(out: W, report: &FeasibilityReport) -> Result<(), KpiError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["category", "node", "next", "gid", "slot", "flow_id", "detail"])?;
    for v in &report.offset_violations {
        let detail = format!("phi {} outside [0, {}]", v.phi.to_us_string(), v.period_us);
        w.write_record(["offset", "", "", "", "", &v.flow.0.to_string(), &detail])?;
    }
    for v in &report.queue_violations {
        let detail = format!("free {} < needed {} (limit {})", v.free, v.needed, v.limit);
        let (node, next, gid, slot, flow) =
            (v.node.0.to_string(), v.next.0.to_string(), v.gid.to_string(), v.slot.to_string(), v.flow.0.to_string());
        w.write_record(["queue", &node, &next, &gid, &slot, &flow, &detail])?;
    }
    for v in &report.bandwidth_violations {
        let detail = format!("busy {}us > slot {}us", v.busy.to_us_string(), v.slot_length.to_us_string());
        let (node, next, gid, slot) = (v.node.0.to_string(), v.next.0.to_string(), v.gid.to_string(), v.slot.to_string());
        w.write_record(["bandwidth", &node, &next, &gid, &slot, "", &detail])?;
    }
    for v in &report.late_arrivals {
        let detail = format!("arrives {}us into a {}us slot", v.arrival.to_us_string(), v.slot_length.to_us_string());
        let (node, next, gid, slot) = (v.node.0.to_string(), v.next.0.to_string(), v.gid.to_string(), v.slot.to_string());
        w.write_record(["late_arrival", &node, &next, &gid, &slot, "", &detail])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(mut out: W, value: &T) -> Result<(), KpiError> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// What to export.
pub enum Export<'a> {
    Kpis(&'a [KpiRow]),
    Comparison(&'a Comparison),
    Validation(&'a ValidationReport),
    Bounds(&'a [DelayBounds]),
    Feasibility(&'a FeasibilityReport),
}

pub fn export(what: Export<'_>, path: impl AsRef<Path>, format: ExportFormat) -> Result<(), KpiError> {
    let mut buf = Vec::new();
    match (what, format) {
        (Export::Kpis(rows), ExportFormat::Csv) => write_kpis_csv(&mut buf, rows)?,
        (Export::Kpis(rows), ExportFormat::Json) => write_json(&mut buf, rows)?,
        (Export::Comparison(c), ExportFormat::Csv) => write_comparison_csv(&mut buf, c)?,
        (Export::Comparison(c), ExportFormat::Json) => write_json(&mut buf, c)?,
        (Export::Validation(v), ExportFormat::Csv) => write_validation_csv(&mut buf, v)?,
        (Export::Validation(v), ExportFormat::Json) => write_json(&mut buf, v)?,
        (Export::Bounds(b), ExportFormat::Csv) => write_bounds_csv(&mut buf, b)?,
        (Export::Bounds(b), ExportFormat::Json) => write_json(&mut buf, b)?,
        (Export::Feasibility(r), ExportFormat::Csv) => write_feasibility_csv(&mut buf, r)?,
        (Export::Feasibility(r), ExportFormat::Json) => write_json(&mut buf, r)?,
    }
    std::fs::write(path, buf)?;
    Ok(())
}
