//! `cyclicsim` subcommands: generate, analyze, simulate, compare, validate.
//!
//! Exit codes: 0 pass, 1 domain failure (violations, bound breaks, drops),
//! 2 usage, parse or input validation errors.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use cyclicsim_core::analysis::{bounds_all, check_feasibility, validate_traces};
use cyclicsim_core::engine::run;
use cyclicsim_core::kpi::{compare_shapers, compute_kpis, export, join_rows, Export, ExportFormat};
use cyclicsim_core::scenario::{flows_to_string, load_scenario, GeneratorDoc, GeneratorKind, Scenario};
use cyclicsim_core::shaper::{GroupConfig, ShaperConfig, ShaperKind};
use cyclicsim_core::topology::{load_topology, topology_to_string, NetworkGraph};
use cyclicsim_core::traffic::{generate_flows, FlowGenParams};

#[derive(Debug, Parser)]
#[command(name = "cyclicsim", version, about = "Cyclic TSN shaper simulator and delay-bound analyzer")]
pub struct Cli {
    /// Seed for generators and for the run's clock offsets.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output root directory.
    #[arg(long, global = true, env = "CYCLICSIM_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Report format: csv or json.
    #[arg(long, global = true)]
    pub format: Option<ExportFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a topology or a flow file.
    Generate {
        #[command(subcommand)]
        what: Generate,
    },
    /// Closed-form bounds and static feasibility for a scenario.
    Analyze {
        scenario: PathBuf,
        #[command(flatten)]
        shaper: ShaperOverride,
    },
    /// Simulate a scenario, compute KPIs and check them against the bounds.
    Simulate {
        scenario: PathBuf,
        #[command(flatten)]
        shaper: ShaperOverride,
        #[arg(long)]
        hypercycles: Option<u64>,
        #[arg(long)]
        warmup: Option<u64>,
        /// Also write the full frame trace as JSON.
        #[arg(long)]
        traces: bool,
    },
    /// Run one scenario under several shapers and tabulate SMD/SMJ.
    Compare {
        scenario: PathBuf,
        /// Comma-separated shaper kinds.
        #[arg(long, value_delimiter = ',', default_value = "cqf,3q,mcqf")]
        shapers: Vec<ShaperKind>,
        #[arg(long)]
        hypercycles: Option<u64>,
    },
    /// Static validation of a scenario file.
    Validate { scenario: PathBuf },
}

#[derive(Debug, Clone, Default, Args)]
pub struct ShaperOverride {
    /// Replace the scenario's shaper kind.
    #[arg(long)]
    pub shaper: Option<ShaperKind>,
    /// Slot lengths in us: one for cqf/3q, one per group for mcqf.
    #[arg(long, value_delimiter = ',')]
    pub slots: Vec<u64>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct LinkArgs {
    #[arg(long)]
    pub rate_bps: Option<u64>,
    #[arg(long)]
    pub prop_delay_us: Option<f64>,
    /// Output file; defaults to `<out-dir>/<kind>.topo`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Generate {
    /// Single switch with N end stations.
    OneSwitch {
        #[arg(long)]
        end_stations: u32,
        #[command(flatten)]
        link: LinkArgs,
    },
    Ring {
        #[arg(long)]
        switches: u32,
        #[arg(long, default_value_t = 1)]
        es_per_switch: u32,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Erdos-Renyi switch backbone.
    Erg {
        #[arg(long)]
        switches: u32,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 1)]
        es_per_switch: u32,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Random regular switch backbone.
    Rrg {
        #[arg(long)]
        switches: u32,
        #[arg(long)]
        degree: u32,
        #[arg(long, default_value_t = 1)]
        es_per_switch: u32,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Barabasi-Albert switch backbone.
    Bag {
        #[arg(long)]
        switches: u32,
        #[arg(long)]
        m: u32,
        #[arg(long, default_value_t = 1)]
        es_per_switch: u32,
        #[command(flatten)]
        link: LinkArgs,
    },
    /// Random flows over an existing topology file.
    Flows {
        #[arg(long)]
        topology: PathBuf,
        #[arg(long)]
        count: usize,
        #[arg(long, value_delimiter = ',', default_value = "100,200,400")]
        periods: Vec<u64>,
        /// Payload range in bytes, `min,max`.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [55u32, 1500])]
        payload: Vec<u32>,
        #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
        gid_weights: Vec<u32>,
        /// Weights for normal and tolerating.
        #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [1u32, 0])]
        qid_weights: Vec<u32>,
        /// Output file; defaults to `<out-dir>/flows.json`.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

/// Result of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
}

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.error)
    }
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 2, error: error.into() }
}

fn domain(error: impl Into<anyhow::Error>) -> Failure {
    Failure { code: 1, error: error.into() }
}

pub type CmdResult = Result<Outcome, Failure>;

pub fn exit_code(result: &CmdResult) -> u8 {
    match result {
        Ok(Outcome::Pass) => 0,
        Ok(Outcome::Fail) => 1,
        Err(f) => f.code,
    }
}

/// Runs a parsed command line; progress goes to `log`.
pub fn execute(cli: &Cli, log: &mut String) -> CmdResult {
    match &cli.command {
        Command::Generate { what } => cmd_generate(cli, what, log),
        Command::Analyze { scenario, shaper } => cmd_analyze(cli, scenario, shaper, log),
        Command::Simulate { scenario, shaper, hypercycles, warmup, traces } => {
            cmd_simulate(cli, scenario, shaper, *hypercycles, *warmup, *traces, log)
        }
        Command::Compare { scenario, shapers, hypercycles } => cmd_compare(cli, scenario, shapers, *hypercycles, log),
        Command::Validate { scenario } => cmd_validate(scenario, log),
    }
}

fn out_root(cli: &Cli, scenario: Option<&Scenario>) -> PathBuf {
    cli.out_dir
        .clone()
        .or_else(|| scenario.and_then(|s| s.output_dir.clone()))
        .unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(domain)?;
    }
    Ok(())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    ensure_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display())).map_err(domain)
}

fn cmd_generate(cli: &Cli, what: &Generate, log: &mut String) -> CmdResult {
    let seed = cli.seed.unwrap_or(0);
    let (kind, link) = match what {
        Generate::Flows { topology, count, periods, payload, gid_weights, qid_weights, out } => {
            let graph = load_topology(topology).map_err(usage)?;
            let params = FlowGenParams {
                n_flows: *count,
                period_choices_us: periods.clone(),
                payload_range: (payload[0], payload[1]),
                gid_weights: gid_weights.clone(),
                qid_weights: (qid_weights[0], qid_weights[1]),
                seed,
            };
            let flows = generate_flows(&graph, &params).map_err(usage)?;
            let path = out.clone().unwrap_or_else(|| out_root(cli, None).join("flows.json"));
            write_file(&path, &flows_to_string(&flows))?;
            let _ = writeln!(log, "flows={} hypercycle_us={} -> {}", flows.len(), flows.hypercycle_us(), path.display());
            return Ok(Outcome::Pass);
        }
        Generate::OneSwitch { end_stations, link } => {
            let mut g = GeneratorDoc::new(GeneratorKind::OneSwitch);
            g.end_stations = Some(*end_stations);
            (("one_switch", g), link)
        }
        Generate::Ring { switches, es_per_switch, link } => {
            let mut g = GeneratorDoc::new(GeneratorKind::Ring);
            g.switches = Some(*switches);
            g.es_per_switch = Some(*es_per_switch);
            (("ring", g), link)
        }
        Generate::Erg { switches, p, es_per_switch, link } => {
            let mut g = GeneratorDoc::new(GeneratorKind::ErdosRenyi);
            (g.switches, g.p, g.es_per_switch) = (Some(*switches), Some(*p), Some(*es_per_switch));
            (("erg", g), link)
        }
        Generate::Rrg { switches, degree, es_per_switch, link } => {
            let mut g = GeneratorDoc::new(GeneratorKind::RandomRegular);
            (g.switches, g.degree, g.es_per_switch) = (Some(*switches), Some(*degree), Some(*es_per_switch));
            (("rrg", g), link)
        }
        Generate::Bag { switches, m, es_per_switch, link } => {
            let mut g = GeneratorDoc::new(GeneratorKind::BarabasiAlbert);
            (g.switches, g.m_attach, g.es_per_switch) = (Some(*switches), Some(*m), Some(*es_per_switch));
            (("bag", g), link)
        }
    };
    let ((name, mut doc), link) = (kind, link);
    doc.seed = Some(seed);
    doc.rate_bps = link.rate_bps;
    doc.prop_delay_us = link.prop_delay_us;
    let graph = doc.generate().map_err(usage)?;
    let path = link.out.clone().unwrap_or_else(|| out_root(cli, None).join(format!("{name}.topo")));
    write_file(&path, &topology_to_string(&graph))?;
    let _ = writeln!(log, "{}", summary(&graph, &path));
    Ok(Outcome::Pass)
}

fn summary(graph: &NetworkGraph, path: &Path) -> String {
    format!(
        "nodes={} switches={} end_stations={} links={} -> {}",
        graph.node_count(),
        graph.switches().len(),
        graph.end_stations().len(),
        graph.link_count(),
        path.display()
    )
}

/// Applies `--shaper`/`--slots`; flags win over the scenario file.
pub fn resolve_shaper(base: &ShaperConfig, over: &ShaperOverride) -> Result<ShaperConfig, Failure> {
    let kind = over.shaper.unwrap_or(base.kind);
    let mut cfg = if kind == base.kind { base.clone() } else { ShaperConfig::default_for(kind) };
    cfg.capacity = base.capacity;
    if !over.slots.is_empty() {
        match kind {
            ShaperKind::Cqf | ShaperKind::ThreeQueueCqf => {
                if over.slots.len() != 1 {
                    return Err(usage(anyhow!("--slots takes one value for {kind}")));
                }
                cfg.groups[0].slot_us = over.slots[0];
            }
            ShaperKind::Mcqf => {
                cfg.groups = over
                    .slots
                    .iter()
                    .enumerate()
                    .map(|(i, &slot_us)| GroupConfig {
                        gid: i as u8 + 1,
                        slot_us,
                        queue_count: if i == 0 { 3 } else { 2 },
                    })
                    .collect();
            }
        }
    }
    Ok(cfg)
}

fn load(path: &Path) -> Result<Scenario, Failure> {
    load_scenario(path).with_context(|| format!("loading {}", path.display())).map_err(usage)
}

fn prepare(cli: &Cli, path: &Path, over: &ShaperOverride, horizon: (Option<u64>, Option<u64>)) -> Result<Scenario, Failure> {
    let scenario = load(path)?;
    let shaper = resolve_shaper(&scenario.shaper, over)?;
    let mut scenario = scenario.with_shaper(shaper);
    if let Some(seed) = cli.seed {
        scenario.sim.seed = seed;
    }
    if let Some(h) = horizon.0 {
        scenario.sim.hypercycles = h;
    }
    if let Some(w) = horizon.1 {
        scenario.sim.warmup_hypercycles = w;
    }
    scenario.validate().map_err(usage)?;
    Ok(scenario)
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned())
}

fn format_of(cli: &Cli, scenario: &Scenario) -> ExportFormat {
    cli.format.unwrap_or(scenario.output_format)
}

fn emit(what: Export<'_>, path: &Path, format: ExportFormat, log: &mut String) -> Result<(), Failure> {
    ensure_parent(path)?;
    export(what, path, format).with_context(|| format!("writing {}", path.display())).map_err(domain)?;
    let _ = writeln!(log, "wrote {}", path.display());
    Ok(())
}

fn cmd_analyze(cli: &Cli, path: &Path, over: &ShaperOverride, log: &mut String) -> CmdResult {
    let s = prepare(cli, path, over, (None, None))?;
    let format = format_of(cli, &s);
    let dir = out_root(cli, Some(&s));
    let name = format!("{}_{}", stem(path), s.shaper.kind);
    let bounds = bounds_all(&s.flows, &s.graph, &s.shaper, &s.delays).map_err(usage)?;
    let report =
        check_feasibility(&s.graph, &s.flows, &s.shaper, &s.delays, s.sim.frame_overhead).map_err(usage)?;
    emit(Export::Bounds(&bounds), &dir.join(format!("{name}_bounds.{}", format.extension())), format, log)?;
    emit(Export::Feasibility(&report), &dir.join(format!("{name}_feasibility.{}", format.extension())), format, log)?;
    let _ = writeln!(
        log,
        "feasibility: {} (offset={} queue={} bandwidth={} late={})",
        if report.pass { "pass" } else { "FAIL" },
        report.offset_violations.len(),
        report.queue_violations.len(),
        report.bandwidth_violations.len(),
        report.late_arrivals.len()
    );
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_simulate(
    cli: &Cli,
    path: &Path,
    over: &ShaperOverride,
    hypercycles: Option<u64>,
    warmup: Option<u64>,
    write_traces: bool,
    log: &mut String,
) -> CmdResult {
    let s = prepare(cli, path, over, (hypercycles, warmup))?;

    let format = format_of(cli, &s);
    let dir = out_root(cli, Some(&s));
    let name = format!("{}_{}", stem(path), s.shaper.kind);
    let traces = run(&s.graph, &s.flows, &s.shaper, &s.delays, &s.sim).map_err(usage)?;
    let bounds = bounds_all(&s.flows, &s.graph, &s.shaper, &s.delays).map_err(usage)?;
    let validation = validate_traces(&traces, &bounds).map_err(domain)?;
    let kpis = compute_kpis(&traces, &s.flows);
    let rows = join_rows(&kpis, &bounds, Some(&validation));
    let ext = format.extension();
    emit(Export::Kpis(&rows), &dir.join(format!("{name}_kpis.{ext}")), format, log)?;
    emit(Export::Validation(&validation), &dir.join(format!("{name}_validation.{ext}")), format, log)?;
    if write_traces {
        let p = dir.join(format!("{name}_traces.json"));
        write_file(&p, &traces.to_json())?;
        let _ = writeln!(log, "wrote {}", p.display());
    }
    let failed = validation.flows.iter().filter(|f| !f.pass).count();
    let _ = writeln!(
        log,
        "flows={} bound_fail={} drops={} slot_overruns={}",
        kpis.len(),
        failed,
        traces.drops,
        traces.slot_overruns
    );
    Ok(if validation.pass && traces.drops == 0 { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_compare(cli: &Cli, path: &Path, kinds: &[ShaperKind], hypercycles: Option<u64>, log: &mut String) -> CmdResult {
    let base = load(path)?;
    let mut sets = Vec::new();
    let mut clean = true;
    for &kind in kinds {
        let over = ShaperOverride { shaper: Some(kind), slots: Vec::new() };
        let mut s = base.with_shaper(resolve_shaper(&base.shaper, &over)?);
        if let Some(h) = hypercycles {
            s.sim.hypercycles = h;
        }
        if let Some(seed) = cli.seed {
            s.sim.seed = seed;
        }
        s.validate().with_context(|| format!("under {kind}")).map_err(usage)?;
        let traces = run(&s.graph, &s.flows, &s.shaper, &s.delays, &s.sim).map_err(usage)?;
        clean &= traces.drops == 0;
        sets.push((kind.to_string(), compute_kpis(&traces, &s.flows)));
    }
    let cmp = compare_shapers(&sets).map_err(domain)?;
    let format = format_of(cli, &base);
    let file = out_root(cli, Some(&base)).join(format!("{}_compare.{}", stem(path), format.extension()));
    emit(Export::Comparison(&cmp), &file, format, log)?;
    for g in &cmp.groups {
        let cols: Vec<String> = cmp
            .labels
            .iter()
            .zip(&g.max_smd)
            .map(|(l, v)| format!("{l}={}", v.map_or("-".into(), |n| n.to_us_string())))
            .collect();
        let _ = writeln!(log, "gid {} ({} flows) max SMD us: {}", g.gid, g.flows, cols.join(" "));
    }
    Ok(if clean { Outcome::Pass } else { Outcome::Fail })
}

fn cmd_validate(path: &Path, log: &mut String) -> CmdResult {
    let s = load(path)?;
    let s = s.with_shaper(s.shaper.clone());
    match s.validate() {
        Ok(()) => {
            let _ = writeln!(
                log,
                "valid: {} nodes, {} flows, hypercycle {}us, shaper {}",
                s.graph.node_count(),
                s.flows.len(),
                s.flows.hypercycle_us(),
                s.shaper.kind
            );
            Ok(Outcome::Pass)
        }
        Err(e) => {
            let _ = writeln!(log, "invalid: {e}");
            Ok(Outcome::Fail)
        }
    }
}
