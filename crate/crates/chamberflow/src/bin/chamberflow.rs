//! Batch driver: one TOML config file, five subcommands, deterministic
//! file outputs. Human-readable progress goes to stdout; every structured
//! result is written into the output directory as JSON or CSV.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use chamberflow::classifier::LimitSummary;
use chamberflow::config::{Assembled, RunConfig};
use chamberflow::error::{Error, Result};
use chamberflow::flow::{Flow, RunStatus, Trajectory};
use chamberflow::report::{fmt_f64, to_json_17, trajectory_csv};
use chamberflow::{classifier, criterion};
use chamberflow::{CaseTag, ClassificationResult, CriterionPair, CriterionReport, NecessaryStatus};

#[derive(Parser)]
#[command(name = "chamberflow", version, about = "Existence criterion, flow runs, and limit classification on Weyl chambers", disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the soliton vector and test existence; writes criterion.json.
    Criterion(Common),
    /// Integrate the flow; writes trajectory.csv, trajectory.json,
    /// checkpoints.json, and report.json.
    Flow(FlowArgs),
    /// Classify a finished run; writes classification.json.
    Classify(ClassifyArgs),
    /// Degeneration data from an explicit drift vector; writes
    /// degeneration.json.
    Degenerate(DegenerateArgs),
    /// criterion, then flow, then classify, with cross-checks appended;
    /// writes pipeline.json on top of the per-stage files.
    Pipeline(FlowArgs),
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config's out_dir (default ".").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed recorded in every report; overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for field analysis (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    common: Common,
    /// Override the configured final time.
    #[arg(long = "t-final")]
    t_final: Option<f64>,
    /// Override the checkpoint cadence (accepted steps, 0 = final only).
    #[arg(long = "checkpoint-every")]
    checkpoint_every: Option<usize>,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    common: Common,
    /// Directory holding trajectory.json from a previous flow run;
    /// defaults to the output directory.
    #[arg(long)]
    run: Option<PathBuf>,
}

#[derive(Args)]
struct DegenerateArgs {
    #[command(flatten)]
    common: Common,
    /// Drift vector components, comma-separated (chamber coordinates).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, num_args = 1..)]
    y: Vec<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Criterion(c) => Ctx::new(&c, None, None).and_then(|ctx| {
            cmd_criterion(&ctx)?;
            Ok(true)
        }),
        Command::Flow(a) => {
            Ctx::new(&a.common, a.t_final, a.checkpoint_every).and_then(|ctx| {
                cmd_flow(&ctx)?;
                Ok(true)
            })
        }
        Command::Classify(a) => Ctx::new(&a.common, None, None).and_then(|ctx| {
            cmd_classify(&ctx, a.run.as_deref())?;
            Ok(true)
        }),
        Command::Degenerate(a) => Ctx::new(&a.common, None, None).and_then(|ctx| {
            cmd_degenerate(&ctx, &a.y)?;
            Ok(true)
        }),
        Command::Pipeline(a) => {
            Ctx::new(&a.common, a.t_final, a.checkpoint_every).and_then(cmd_pipeline)
        }
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    asm: Assembled,
    out: PathBuf,
}

impl Ctx {
    /// Parses the config, applies the command-line overrides to it (so the
    /// echoed config is what actually ran), builds the objects, and writes
    /// config.effective.toml into the output directory.
    fn new(common: &Common, t_final: Option<f64>, checkpoint_every: Option<usize>) -> Result<Ctx> {
        let mut cfg = RunConfig::parse(&common.config)?;
        if let Some(seed) = common.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &common.out {
            cfg.out_dir = Some(out.clone());
        }
        if let Some(t) = t_final {
            cfg.flow.t_final = t;
        }
        if let Some(n) = checkpoint_every {
            cfg.flow.checkpoint_every = n;
        }
        if let Some(n) = common.threads {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        }
        let asm = cfg.assemble()?;
        let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out)?;
        std::fs::write(out.join("config.effective.toml"), cfg.effective_toml()?)?;
        Ok(Ctx { cfg, asm, out })
    }

    /// Report envelope: artifact version, seed, and the effective config.
    /// out_dir is dropped from the embedded copy so a report's bytes do not
    /// depend on where it was written.
    fn report(&self, fields: Vec<(&str, Value)>) -> Result<Value> {
        let mut embed = self.cfg.clone();
        embed.out_dir = None;
        let mut map = serde_json::Map::new();
        map.insert(
            "artifact_version".into(),
            Value::String(env!("CARGO_PKG_VERSION").into()),
        );
        map.insert("seed".into(), Value::from(self.cfg.seed));
        map.insert("config".into(), to_value(&embed)?);
        for (k, v) in fields {
            map.insert(k.into(), v);
        }
        Ok(Value::Object(map))
    }

    fn write(&self, name: &str, value: &Value) -> Result<()> {
        std::fs::write(self.out.join(name), to_json_17(value)?)?;
        Ok(())
    }
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Numerical(format!("report serialization: {e}")))
}

fn cmd_criterion(ctx: &Ctx) -> Result<CriterionPair> {
    let pair = criterion::full_report(&ctx.asm.polytope, &ctx.asm.geometry)?;
    println!("-- test at the origin --");
    print_criterion(&pair.ke);
    println!("-- test at the solved soliton vector --");
    print_criterion(&pair.soliton);
    let v = ctx.report(vec![("criterion", to_value(&pair)?)])?;
    ctx.write("criterion.json", &v)?;
    Ok(pair)
}

fn print_criterion(rep: &CriterionReport) {
    println!("v0 = {}", fmt_f64(rep.v0));
    println!("x  = {:?}", rep.x);
    if rep.toric {
        println!(
            "toric test: |barycenter| = {} -> {}",
            fmt_f64(rep.bar_norm),
            if rep.exists { "existence holds" } else { "existence fails" }
        );
        return;
    }
    println!("{:>5}  {:>12}  {:>24}  {}", "root", "coeffs", "margin", "status");
    for m in &rep.margins {
        println!(
            "{:>5}  {:>12}  {:>24}  {:?}",
            m.root_index,
            format!("{:?}", m.simple_coeffs),
            fmt_f64(m.value),
            m.status
        );
    }
    let verdict = if rep.boundary {
        "boundary: numerically undecidable"
    } else if rep.exists {
        "existence holds"
    } else {
        "existence fails"
    };
    println!("{verdict}");
}

fn cmd_flow(ctx: &Ctx) -> Result<Trajectory> {
    let flow_cfg = ctx.asm.flow.clone().ok_or_else(|| {
        Error::Config("flow needs a [grid] block in the config".into())
    })?;
    let flow = Flow::new(ctx.asm.geometry.clone(), &ctx.asm.polytope, flow_cfg)?;
    let traj = flow.run()?;
    print_flow(&traj);
    std::fs::write(ctx.out.join("trajectory.csv"), trajectory_csv(&traj))?;
    let full = ctx.report(vec![("trajectory", to_value(&traj)?)])?;
    ctx.write("trajectory.json", &full)?;
    let cks = ctx.report(vec![("checkpoints", to_value(&traj.checkpoints)?)])?;
    ctx.write("checkpoints.json", &cks)?;
    let summary = flow_summary(&traj)?;
    let repv = ctx.report(vec![("flow", summary)])?;
    ctx.write("report.json", &repv)?;
    Ok(traj)
}

fn flow_summary(traj: &Trajectory) -> Result<Value> {
    let mut m = serde_json::Map::new();
    m.insert("status".into(), to_value(&traj.status)?);
    m.insert("steps".into(), Value::from(traj.steps));
    m.insert("records".into(), Value::from(traj.records.len()));
    m.insert("checkpoints".into(), Value::from(traj.checkpoints.len()));
    m.insert("v0".into(), to_value(&traj.v0)?);
    m.insert("y_total".into(), to_value(&traj.y_total)?);
    if let Some(last) = traj.records.last() {
        m.insert("final".into(), to_value(last)?);
    }
    Ok(Value::Object(m))
}

fn print_flow(traj: &Trajectory) {
    let status = match &traj.status {
        RunStatus::Converged { t } => format!("converged at t = {}", fmt_f64(*t)),
        RunStatus::ReachedTFinal => "reached t_final".into(),
        RunStatus::Escaped { t } => format!("escaped the box at t = {}", fmt_f64(*t)),
    };
    println!("flow: {status} after {} accepted steps", traj.steps);
    if let Some(last) = traj.records.last() {
        println!(
            "  t = {}  |x_t| sup-comp = {}  m_t = {}  conv_res = {}",
            fmt_f64(last.t),
            fmt_f64(last.x_t.iter().fold(0.0f64, |a, x| a.max(x.abs()))),
            fmt_f64(last.m_t),
            fmt_f64(last.conv_res),
        );
    }
}

fn cmd_classify(ctx: &Ctx, run: Option<&std::path::Path>) -> Result<ClassificationResult> {
    let dir = run.unwrap_or(&ctx.out);
    let path = dir.join("trajectory.json");
    let text = std::fs::read_to_string(&path).map_err(|e| {
        Error::Input(format!("cannot read {}: {e}", path.display()))
    })?;
    let parsed: Value = serde_json::from_str(&text)
        .map_err(|e| Error::Input(format!("{} is not valid JSON: {e}", path.display())))?;
    let traj_value = parsed.get("trajectory").cloned().ok_or_else(|| {
        Error::Input(format!("{} has no \"trajectory\" field", path.display()))
    })?;
    let traj: Trajectory = serde_json::from_value(traj_value)
        .map_err(|e| Error::Input(format!("bad trajectory in {}: {e}", path.display())))?;
    let result = classifier::classify(&ctx.asm.geometry, &traj, &ctx.cfg.thresholds)?;
    print_classification(&ctx.asm, &result);
    let v = ctx.report(vec![("classification", to_value(&result)?)])?;
    ctx.write("classification.json", &v)?;
    Ok(result)
}

fn print_classification(asm: &Assembled, r: &ClassificationResult) {
    println!("case: {}", r.case_tag);
    let labels: Vec<String> = r
        .phi_u
        .iter()
        .map(|&i| format!("{:?}", asm.rootsys.positive_roots[i].simple_coeffs))
        .collect();
    println!("phi_u ({} roots): {}", r.phi_u.len(), labels.join(" "));
    println!("x_infinity = {:?}", r.x_infinity);
    println!("a0 = {:?}  (residual {})", r.a0, fmt_f64(r.a0_residual));
    println!(
        "y_drift = {:?}  y_hfit = {:?}  angle = {}",
        r.y.y_drift,
        r.y.y_hfit,
        fmt_f64(r.y.angle)
    );
    if let Some(res) = &r.limit_residual {
        println!(
            "limit residual: sup = {} over {} samples (radius {})",
            fmt_f64(res.sup),
            res.samples,
            fmt_f64(res.radius_used)
        );
    }
}

fn cmd_degenerate(ctx: &Ctx, y: &[f64]) -> Result<()> {
    let r = ctx.asm.rootsys.dim();
    if y.len() != r {
        return Err(Error::Input(format!(
            "--y has {} components, the chamber has dimension {r}",
            y.len()
        )));
    }
    let (lie, limit_geom) = classifier::build_degeneration(
        &ctx.asm.rootsys,
        y,
        ctx.cfg.thresholds.tangency_tol,
    )?;
    println!(
        "tangent simple roots: {:?}",
        lie.tangent_simple
    );
    println!(
        "phi_u combinations: {} roots, remaining: {}",
        lie.tangent_combinations.len(),
        lie.remaining.len()
    );
    println!(
        "generators: {} in the isotropy block, {} in the complement",
        lie.h_generators.len(),
        lie.p_generators.len()
    );
    let v = ctx.report(vec![
        ("y", to_value(&y.to_vec())?),
        ("lie_data", to_value(&lie)?),
        ("limit", to_value(&LimitSummary::of(&limit_geom))?),
    ])?;
    ctx.write("degeneration.json", &v)?;
    Ok(())
}

#[derive(Serialize)]
struct StageOutcome {
    name: String,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

fn stage_ok(name: &str) -> StageOutcome {
    StageOutcome {
        name: name.into(),
        status: "ok".into(),
        error: None,
    }
}

fn stage_skipped(name: &str, why: &str) -> StageOutcome {
    StageOutcome {
        name: name.into(),
        status: "skipped".into(),
        error: Some(why.into()),
    }
}

fn stage_failed(name: &str, e: &Error) -> StageOutcome {
    StageOutcome {
        name: name.into(),
        status: "failed".into(),
        error: Some(e.to_string()),
    }
}

/// Full run: criterion, flow, classify, cross-checks. Stage failures are
/// recorded and later stages skipped; the pipeline report always gets
/// written. Returns false (exit 1) when any stage failed.
fn cmd_pipeline(ctx: Ctx) -> Result<bool> {
    let mut stages: Vec<StageOutcome> = Vec::new();
    let mut fields: Vec<(&str, Value)> = Vec::new();
    let mut failed = false;

    let crit = match cmd_criterion(&ctx) {
        Ok(rep) => {
            stages.push(stage_ok("criterion"));
            fields.push(("criterion", to_value(&rep)?));
            Some(rep)
        }
        Err(e) => {
            stages.push(stage_failed("criterion", &e));
            failed = true;
            None
        }
    };

    let flow_skip = if ctx.asm.flow.is_none() {
        Some("no [grid] block")
    } else if ctx.cfg.flow.t_final == 0.0 {
        Some("t_final = 0")
    } else {
        None
    };
    let traj = if failed {
        stages.push(stage_skipped("flow", "earlier stage failed"));
        None
    } else if let Some(why) = flow_skip {
        stages.push(stage_skipped("flow", why));
        None
    } else {
        match cmd_flow(&ctx) {
            Ok(t) => {
                stages.push(stage_ok("flow"));
                fields.push(("flow", flow_summary(&t)?));
                Some(t)
            }
            Err(e) => {
                stages.push(stage_failed("flow", &e));
                failed = true;
                None
            }
        }
    };

    let classification = match &traj {
        None => {
            let why = if failed { "earlier stage failed" } else { "no flow run" };
            stages.push(stage_skipped("classify", why));
            None
        }
        Some(traj) => {
            match classifier::classify(&ctx.asm.geometry, traj, &ctx.cfg.thresholds) {
                Ok(result) => {
                    print_classification(&ctx.asm, &result);
                    let v = ctx.report(vec![("classification", to_value(&result)?)])?;
                    ctx.write("classification.json", &v)?;
                    stages.push(stage_ok("classify"));
                    fields.push(("classification", to_value(&result)?));
                    Some(result)
                }
                Err(e) => {
                    stages.push(stage_failed("classify", &e));
                    failed = true;
                    None
                }
            }
        }
    };

    if let (Some(crit), Some(traj)) = (&crit, &traj) {
        match cross_checks(&ctx, crit, traj, classification.as_ref()) {
            Ok(v) => fields.push(("cross_checks", v)),
            Err(e) => {
                stages.push(stage_failed("cross-checks", &e));
                failed = true;
            }
        }
    }

    fields.push(("stages", to_value(&stages)?));
    let v = ctx.report(fields)?;
    ctx.write("pipeline.json", &v)?;
    println!(
        "pipeline: {}",
        if failed { "FAILED (see pipeline.json)" } else { "ok" }
    );
    Ok(!failed)
}

/// Post-run consistency: the necessary condition at the criterion's vector
/// (only conclusive after convergence) and the gap between the classifier's
/// drift vector and the criterion's soliton vector.
fn cross_checks(
    ctx: &Ctx,
    crit: &CriterionPair,
    traj: &Trajectory,
    classification: Option<&ClassificationResult>,
) -> Result<Value> {
    let converged = matches!(traj.status, RunStatus::Converged { .. });
    let x = &crit.soliton.x;
    let (status, margins) = criterion::necessary_check(
        &ctx.asm.polytope,
        &ctx.asm.geometry,
        x,
        Some(converged),
    )?;
    let mut m = serde_json::Map::new();
    m.insert("necessary_status".into(), to_value(&status)?);
    m.insert("necessary_margins".into(), to_value(&margins)?);
    m.insert(
        "necessary_consistent".into(),
        Value::Bool(status != NecessaryStatus::Fails),
    );
    if let Some(cls) = classification {
        let rs = &ctx.asm.rootsys;
        let y = match cls.case_tag {
            CaseTag::Case1 => vec![0.0; rs.dim()],
            _ => {
                if cls.residual_y_source.as_deref() == Some("drift") {
                    cls.y.y_drift.clone()
                } else {
                    cls.y.y_hfit.clone()
                }
            }
        };
        let diff: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
        let gap = rs.norm(&diff);
        let scale = rs.norm(x).max(1e-12);
        m.insert("y_used".into(), to_value(&y)?);
        m.insert("x_criterion".into(), to_value(x)?);
        m.insert("y_vs_x_gap".into(), to_value(&gap)?);
        m.insert("y_vs_x_rel".into(), to_value(&(gap / scale))?);
    }
    Ok(Value::Object(m))
}
