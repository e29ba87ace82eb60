//! Command-line pipeline over the core toolkit: generate sampled spaces,
//! compute chain quasimetrics and structure constants, run the regularity
//! and covering verification suites, solve modulus families, check disk
//! domains, and measure map distortion.  Artifacts are plain JSON/CSV/SVG
//! files; a fixed seed makes every byte reproducible.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use wmdm::chain::{
    self, all_pairs, connecting_continuum, q_matrix, q_space_from, separating_layer, ChainError,
    ChainGraph, ConstantLedger, Extremal, QMatrix, ReverseConstant,
};
use wmdm::circle::{
    alpha_constant, free_radii, free_radius_floor, pair_modulus_budget, separation_check,
    CircleDomain,
};
use wmdm::modulus::{modulus_solve, DomainGraph, PathFamily};
use wmdm::qs::{
    eta_estimate, normalize_map, weak_qs_constant, DiscreteMap, QsError, QsReport, TargetModel,
    TripleSample,
};
use wmdm::regularity::{
    ball_comparison_check, boundary_separation, doubling_constant, dyadic_sample, llc_constant,
    llc_sample, mass_power_fit, ComparisonConstants,
};
use wmdm::report::VerificationReport;
use wmdm::space::{generate, Density, Generator, Metric, MetricMeasureSpace};

// ─── Arguments ───

#[derive(Parser)]
#[command(name = "wmdm", version, about = "metric measure space verification pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a sampled space from --generator and write it out
    Gen(Io),
    /// Chain quasimetric matrix plus measured structure constants
    Qmetric(Io),
    /// Regularity and covering-inequality reports
    Verify(VerifyArgs),
    /// Modulus of the families declared by the space's boundary labels
    Modulus(Io),
    /// Disk-domain protection checks on a domain file
    Circle(CircleArgs),
    /// Distortion diagnostics on a map file
    Qs(Io),
    /// Full pipeline: qmetric, verify, modulus, and the deformation map
    All(VerifyArgs),
}

#[derive(Args, Clone)]
struct Io {
    /// Input file: space JSON (gen/qmetric/verify/modulus), domain JSON
    /// (circle), or map JSON (qs)
    #[arg(long)]
    input: Option<PathBuf>,

    /// Generator expression, e.g. "square(32)", "annulus(1,2,64)",
    /// "snowflake(1/2, square(32))", "weighted(square(16), stepx(0.5,1,3))"
    #[arg(long)]
    generator: Option<String>,

    /// Output directory for artifacts
    #[arg(long, default_value = "out")]
    out: PathBuf,

    /// Artifact formats (json is always sensible; csv/svg add views)
    #[arg(long, value_delimiter = ',', default_value = "json")]
    format: Vec<Format>,

    /// Seed for every sampling decision
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Pair/center sampling budget per measurement
    #[arg(long, default_value_t = 200)]
    samples: usize,

    /// Chain scales, comma-separated, strictly decreasing, in metric units
    /// (default: 8, 6, and 4 lattice steps)
    #[arg(long, value_delimiter = ',')]
    delta_schedule: Option<Vec<f64>>,

    /// Modulus solver sandwich tolerance
    #[arg(long, default_value_t = 0.02)]
    tol: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    io: Io,

    /// Override the measured lower structure constant
    #[arg(long)]
    force_c_w: Option<f64>,

    /// Override the measured doubling constant
    #[arg(long)]
    force_c_d: Option<f64>,
}

#[derive(Args)]
struct CircleArgs {
    #[command(flatten)]
    io: Io,

    /// Lower structure constant to derive the protection scale from
    #[arg(long, default_value_t = 1.0)]
    c_w: f64,

    /// Doubling constant
    #[arg(long, default_value_t = 1.0)]
    c_d: f64,

    /// Metric comparison constant
    #[arg(long, default_value_t = 1.0)]
    c_x: f64,

    /// Grid resolution for the pair-separation modulus checks
    #[arg(long, default_value_t = 48)]
    grid: usize,
}

#[derive(ValueEnum, Clone, Copy, PartialEq, Eq)]
enum Format {
    Json,
    Csv,
    Svg,
}

// ─── Entry ───

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("WMDM_THREADS") {
        match v.parse::<usize>() {
            Ok(k) if k > 0 => {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
            }
            _ => {
                eprintln!("error: WMDM_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(io) => run_gen(&io),
        Command::Qmetric(io) => run_qmetric(&io),
        Command::Verify(args) => run_verify(&args),
        Command::Modulus(io) => run_modulus(&io),
        Command::Circle(args) => run_circle(&args),
        Command::Qs(io) => run_qs(&io),
        Command::All(args) => run_all(&args),
    };
    match result {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("FAIL {f}");
            }
            eprintln!("{} check(s) failed", failures.len());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

// ─── Generator expressions ───

#[derive(Debug)]
enum Node {
    Num(f64),
    Call(String, Vec<Node>),
}

struct Scanner<'a> {
    text: &'a [u8],
    pos: usize,
}

impl<'a> Scanner<'a> {
    fn new(text: &'a str) -> Self {
        Scanner { text: text.as_bytes(), pos: 0 }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.text.len() && self.text[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.text.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), String> {
        match self.peek() {
            Some(got) if got == c => {
                self.pos += 1;
                Ok(())
            }
            got => Err(format!(
                "expected {:?} at byte {} of the generator expression, found {:?}",
                c as char,
                self.pos,
                got.map(|b| b as char)
            )),
        }
    }

    fn ident(&mut self) -> String {
        self.skip_ws();
        let start = self.pos;
        while self
            .text
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_alphabetic() || *b == b'_')
        {
            self.pos += 1;
        }
        String::from_utf8_lossy(&self.text[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<f64, String> {
        self.skip_ws();
        let start = self.pos;
        while self
            .text
            .get(self.pos)
            .is_some_and(|b| b.is_ascii_digit() || matches!(b, b'.' | b'-' | b'+' | b'e' | b'E' | b'/'))
        {
            self.pos += 1;
        }
        let raw = std::str::from_utf8(&self.text[start..self.pos]).unwrap();
        if let Some((num, den)) = raw.split_once('/') {
            let n: f64 = num.parse().map_err(|_| format!("bad number {num:?}"))?;
            let d: f64 = den.parse().map_err(|_| format!("bad number {den:?}"))?;
            if d == 0.0 {
                return Err(format!("zero denominator in {raw:?}"));
            }
            Ok(n / d)
        } else {
            raw.parse().map_err(|_| format!("bad number {raw:?}"))
        }
    }

    fn call(&mut self) -> Result<Node, String> {
        let name = self.ident();
        if name.is_empty() {
            return Err(format!("expected a name at byte {}", self.pos));
        }
        self.expect(b'(')?;
        let mut args = Vec::new();
        if self.peek() != Some(b')') {
            loop {
                let arg = if self.peek().is_some_and(|b| b.is_ascii_alphabetic()) {
                    self.call()?
                } else {
                    Node::Num(self.number()?)
                };
                args.push(arg);
                match self.peek() {
                    Some(b',') => {
                        self.pos += 1;
                    }
                    _ => break,
                }
            }
        }
        self.expect(b')')?;
        Ok(Node::Call(name, args))
    }
}

/// Parses a generator expression.  Bases nest — `snowflake(1/2, square(32))`
/// — or follow by juxtaposition as in `snowflake(1/2) square(32)`.
fn parse_generator(text: &str) -> Result<Generator, String> {
    let mut sc = Scanner::new(text);
    let mut node = sc.call()?;
    if sc.peek().is_some() {
        let base = sc.call()?;
        if sc.peek().is_some() {
            return Err("trailing input after the generator expression".into());
        }
        match &mut node {
            Node::Call(_, args) => args.push(base),
            Node::Num(_) => unreachable!("top level is a call"),
        }
    }
    node_to_generator(&node)
}

fn num(node: &Node, what: &str) -> Result<f64, String> {
    match node {
        Node::Num(v) => Ok(*v),
        Node::Call(name, _) => Err(format!("{what} must be a number, found {name}(...)")),
    }
}

fn node_to_generator(node: &Node) -> Result<Generator, String> {
    let Node::Call(name, args) = node else {
        return Err("a generator is a call like square(32)".into());
    };
    match (name.as_str(), args.len()) {
        ("square", 1) => {
            let n = num(&args[0], "square size")? as usize;
            Ok(Generator::Square { n })
        }
        ("annulus", 3) => Ok(Generator::Annulus {
            r: num(&args[0], "inner radius")?,
            big_r: num(&args[1], "outer radius")?,
            n: num(&args[2], "annulus grid")? as usize,
        }),
        ("snowflake", 2) => Ok(Generator::Snowflake {
            theta: num(&args[0], "snowflake exponent")?,
            base: Box::new(node_to_generator(&args[1])?),
        }),
        ("weighted", 2) => Ok(Generator::Weighted {
            base: Box::new(node_to_generator(&args[0])?),
            density: node_to_density(&args[1])?,
        }),
        _ => Err(format!(
            "unknown generator {name}({} args); expected square(n), annulus(r,R,n), \
             snowflake(theta, base), or weighted(base, density)",
            args.len()
        )),
    }
}

fn node_to_density(node: &Node) -> Result<Density, String> {
    let Node::Call(name, args) = node else {
        return Err("a density is uniform(), stepx(t,lo,hi), or radial(cx,cy,exp)".into());
    };
    match (name.as_str(), args.len()) {
        ("uniform", 0) => Ok(Density::Uniform),
        ("stepx", 3) => Ok(Density::StepX {
            threshold: num(&args[0], "threshold")?,
            low: num(&args[1], "low weight")?,
            high: num(&args[2], "high weight")?,
        }),
        ("radial", 3) => Ok(Density::RadialPower {
            center: [num(&args[0], "center x")?, num(&args[1], "center y")?],
            exponent: num(&args[2], "exponent")?,
        }),
        _ => Err(format!("unknown density {name}({} args)", args.len())),
    }
}

// ─── Artifact plumbing ───

struct Pipeline {
    out: PathBuf,
    formats: Vec<Format>,
    failures: Vec<String>,
}

impl Pipeline {
    fn new(io: &Io) -> Result<Self, String> {
        fs::create_dir_all(&io.out)
            .map_err(|e| format!("cannot create {}: {e}", io.out.display()))?;
        Ok(Pipeline { out: io.out.clone(), formats: io.format.clone(), failures: Vec::new() })
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn write(&self, name: &str, contents: &str) -> Result<PathBuf, String> {
        let path = self.out.join(name);
        fs::write(&path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        println!("wrote {}", path.display());
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<PathBuf, String> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| e.to_string())?;
        text.push('\n');
        self.write(name, &text)
    }

    /// Prints report summaries and tallies the failures under `artifact`.
    fn record(&mut self, artifact: &str, reports: &[VerificationReport]) {
        for r in reports {
            println!("  {}", r.summary());
            if !r.passed() {
                self.failures.push(format!("{artifact}: {}", r.inequality));
            }
        }
    }
}

fn read_to_string(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))
}

/// Loads the space from --input or builds it from --generator.
fn load_space(io: &Io) -> Result<MetricMeasureSpace, String> {
    match (&io.input, &io.generator) {
        (Some(path), None) => {
            MetricMeasureSpace::load_json(path).map_err(|e| format!("{}: {e}", path.display()))
        }
        (None, Some(expr)) => {
            let gen = parse_generator(expr)?;
            generate(&gen).map_err(|e| e.to_string())
        }
        (Some(_), Some(_)) => Err("pass either --input or --generator, not both".into()),
        (None, None) => Err("one of --input or --generator is required".into()),
    }
}

// ─── Chain measurement ───

/// The exponent pairing mass with distance on two-dimensional samplings.
const MASS_EXPONENT: f64 = 2.0;

fn resolve_schedule(space: &MetricMeasureSpace, io: &Io) -> Result<Vec<f64>, String> {
    if let Some(schedule) = &io.delta_schedule {
        if schedule.is_empty() {
            return Err("--delta-schedule must list at least one scale".into());
        }
        for w in schedule.windows(2) {
            if w[1] >= w[0] {
                return Err(format!(
                    "--delta-schedule must be strictly decreasing, got {} before {}",
                    w[0], w[1]
                ));
            }
        }
        if schedule[schedule.len() - 1] <= 0.0 {
            return Err("--delta-schedule entries must be positive".into());
        }
        return Ok(schedule.clone());
    }
    let steps = [8.0f64, 6.0, 4.0];
    match space.metric() {
        Metric::Euclidean => Ok(steps.iter().map(|m| m * space.pitch()).collect()),
        Metric::Snowflake { theta } => {
            Ok(steps.iter().map(|m| (m * space.pitch()).powf(*theta)).collect())
        }
        Metric::Explicit { .. } => {
            Err("explicit-matrix spaces need an explicit --delta-schedule".into())
        }
    }
}

/// Builds the chain graph at the finest schedule scale that keeps the
/// sample connected.
fn chain_at_finest(
    space: &MetricMeasureSpace,
    schedule: &[f64],
) -> Result<(f64, ChainGraph), String> {
    for &delta in schedule.iter().rev() {
        match ChainGraph::build(space, delta, MASS_EXPONENT) {
            Ok(g) => return Ok((delta, g)),
            Err(ChainError::Disconnected { .. }) => continue,
            Err(e) => return Err(e.to_string()),
        }
    }
    Err("no scale in the schedule connects the sample".into())
}

fn sampled_pairs(n: usize, budget: usize, seed: u64) -> Vec<(usize, usize)> {
    if n * (n - 1) / 2 <= budget {
        return all_pairs(n);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::with_capacity(budget);
    while pairs.len() < budget {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            pairs.push((a.min(b), a.max(b)));
        }
    }
    pairs
}

struct Measured {
    delta: f64,
    q: QMatrix,
    deformed: MetricMeasureSpace,
    ledger: ConstantLedger,
    extremal: Extremal,
    reverse: ReverseConstant,
    /// `(center, radius)` samples in the deformed space, shared between the
    /// reverse-constant radii and the ball-comparison checks.
    samples_q: Vec<(usize, f64)>,
}

fn measure(space: &MetricMeasureSpace, io: &Io) -> Result<Measured, String> {
    let schedule = resolve_schedule(space, io)?;
    let (delta, graph) = chain_at_finest(space, &schedule)?;
    let q = q_matrix(&graph);
    let deformed = q_space_from(space, &q);

    let pairs = sampled_pairs(space.len(), io.samples, io.seed);
    let extremal =
        chain::wmdm_constant(space, &q, &pairs, MASS_EXPONENT).map_err(|e| e.to_string())?;
    let doubling =
        doubling_constant(space, &dyadic_sample(space)).map_err(|e| e.to_string())?;
    let lambda =
        llc_constant(space, &llc_sample(space)).map_err(|e| e.to_string())?;

    let samples_q = dyadic_sample(&deformed);
    let mut centers: Vec<usize> = samples_q.iter().map(|s| s.0).collect();
    centers.sort_unstable();
    centers.dedup();
    let reverse = chain::reverse_constant(space, &q, &centers, MASS_EXPONENT);

    let ledger =
        ConstantLedger::new(extremal.value, doubling.c_d, lambda).with_c_s(reverse.c_s);
    Ok(Measured { delta, q, deformed, ledger, extremal, reverse, samples_q })
}

// ─── Subcommands ───

fn run_gen(io: &Io) -> Result<Vec<String>, String> {
    let space = load_space(io)?;
    let pipe = Pipeline::new(io)?;
    pipe.write("space.json", &space.to_json())?;
    if pipe.wants(Format::Csv) {
        pipe.write("space.csv", &space.to_csv().map_err(|e| e.to_string())?)?;
    }
    if pipe.wants(Format::Svg) {
        pipe.write("space.svg", &svg_scatter(&space))?;
    }
    println!(
        "{} points, diameter {:.6}, total mass {:.6}",
        space.len(),
        space.diameter(),
        space.total_mass()
    );
    Ok(pipe.failures)
}

fn run_qmetric(io: &Io) -> Result<Vec<String>, String> {
    let space = load_space(io)?;
    let m = measure(&space, io)?;
    let pipe = Pipeline::new(io)?;
    write_qmetric(&pipe, &space, &m)?;
    Ok(pipe.failures)
}

fn write_qmetric(pipe: &Pipeline, space: &MetricMeasureSpace, m: &Measured) -> Result<(), String> {
    pipe.write("qmatrix.csv", &m.q.to_csv())?;
    pipe.write_json("ledger.json", &m.ledger)?;
    pipe.write_json(
        "qmetric.json",
        &json!({
            "points": space.len(),
            "delta": m.delta,
            "mass_exponent": MASS_EXPONENT,
            "lower_constant": {"value": m.extremal.value, "pair": m.extremal.pair},
            "upper_constant": {"value": m.reverse.c_s, "pair": m.reverse.witness},
        }),
    )?;
    println!(
        "chain scale {:.6}: C_W {:.4}, C_S {:.4}, C_D {:.4}, lambda {:.4}",
        m.delta, m.ledger.c_w, m.reverse.c_s, m.ledger.c_d, m.ledger.lambda_measured
    );
    Ok(())
}

fn run_verify(args: &VerifyArgs) -> Result<Vec<String>, String> {
    let io = &args.io;
    let space = load_space(io)?;
    let m = measure(&space, io)?;
    let mut pipe = Pipeline::new(io)?;
    verify_stage(&mut pipe, &space, &m, args)?;
    Ok(pipe.failures)
}

fn verify_stage(
    pipe: &mut Pipeline,
    space: &MetricMeasureSpace,
    m: &Measured,
    args: &VerifyArgs,
) -> Result<(), String> {
    // overriding a measured constant rebuilds the derived ones
    let ledger = ConstantLedger::new(
        args.force_c_w.unwrap_or(m.ledger.c_w),
        args.force_c_d.unwrap_or(m.ledger.c_d),
        m.ledger.lambda_measured,
    )
    .with_c_s(m.reverse.c_s);

    let mut reports: Vec<VerificationReport> = Vec::new();
    reports.extend(mass_power_fit(space, ledger.c_d).reports);
    reports.extend(ball_comparison_check(
        &m.deformed,
        ComparisonConstants { c_w: ledger.c_w, c_s: m.reverse.c_s, c_d: ledger.c_d },
        &m.samples_q,
        &m.reverse.r_x,
        4.0 * m.deformed.metric_pitch(),
    ));

    // the covering constructions need room around their center; pick the
    // innermost sample and shrink the scale to fit, or report the skip
    let center = (0..space.len())
        .max_by(|&a, &b| {
            space
                .boundary_clearance(a)
                .total_cmp(&space.boundary_clearance(b))
                .then(b.cmp(&a))
        })
        .ok_or("empty space")?;
    let clearance = space.boundary_clearance(center);
    let r = 0.9 * clearance / (2.0 * ledger.lambda).powi(7);
    match separating_layer(space, &m.q, center, r, None, &ledger) {
        Ok(layer) => reports.extend(layer.reports),
        Err(ChainError::OutsideRegion { .. }) => reports.push(VerificationReport::skipped(
            "layer_cost",
            "no interior point has room for the annular cover at this resolution",
        )),
        Err(e) => return Err(e.to_string()),
    }

    // continuum pairs: nearest sample points at dyadically spread ranks
    let mut by_dist: Vec<usize> = (0..space.len()).filter(|&i| i != center).collect();
    by_dist.sort_by(|&a, &b| space.dist(center, a).total_cmp(&space.dist(center, b)).then(a.cmp(&b)));
    let mut continuum_ran = false;
    for rank in [0usize, 1, 3, 7, 15] {
        let Some(&y) = by_dist.get(rank) else { break };
        match connecting_continuum(space, &m.q, center, y, &ledger) {
            Ok(chain) => {
                continuum_ran = true;
                reports.extend(chain.reports);
            }
            Err(ChainError::OutsideRegion { .. }) => break,
            Err(e) => return Err(e.to_string()),
        }
    }
    if !continuum_ran {
        reports.push(VerificationReport::skipped(
            "endpoint_bound",
            "every candidate pair outruns the boundary clearance at this resolution",
        ));
    }

    let separation = boundary_separation(space).ok();
    let constants = json!({
        "c_w": ledger.c_w,
        "c_d": ledger.c_d,
        "c_s": m.reverse.c_s,
        "lambda": ledger.lambda_measured,
        "boundary_separation": separation,
        "forced": args.force_c_w.is_some() || args.force_c_d.is_some(),
    });
    pipe.write_json("verify.json", &json!({ "constants": constants, "reports": reports }))?;
    pipe.record("verify", &reports);
    Ok(())
}

fn run_modulus(io: &Io) -> Result<Vec<String>, String> {
    let space = load_space(io)?;
    let mut pipe = Pipeline::new(io)?;
    modulus_stage(&mut pipe, &space, io.tol)?;
    Ok(pipe.failures)
}

/// Boundary families declared by the space's labels, or synthesized
/// opposite-side strips when fewer than two labels exist.
fn declared_families(space: &MetricMeasureSpace) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let boundary = space.boundary();
    if boundary.len() >= 2 {
        let labels: Vec<&String> = boundary.keys().collect();
        let mut fams = Vec::new();
        for (i, a) in labels.iter().enumerate() {
            for b in labels.iter().skip(i + 1) {
                fams.push((
                    format!("{a}-{b}"),
                    boundary[*a].clone(),
                    boundary[*b].clone(),
                ));
            }
        }
        return fams;
    }
    // strips one cell deep along the bounding box
    let h = space.pitch();
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..space.len() {
        let p = space.point(i);
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let side = |axis: usize, at: f64| -> Vec<usize> {
        (0..space.len())
            .filter(|&i| (space.point(i)[axis] - at).abs() <= 0.75 * h)
            .collect()
    };
    vec![
        ("left-right".into(), side(0, lo[0]), side(0, hi[0])),
        ("bottom-top".into(), side(1, lo[1]), side(1, hi[1])),
    ]
}

fn modulus_stage(
    pipe: &mut Pipeline,
    space: &MetricMeasureSpace,
    tol: f64,
) -> Result<(), String> {
    // adjacency reach: kings moves on the base lattice without skipping to
    // second neighbors once the metric flattens steps together
    let reach = match space.metric() {
        Metric::Snowflake { .. } => 1.3 * space.metric_pitch(),
        _ => 1.5 * space.metric_pitch(),
    };
    let graph = DomainGraph::from_space(space, reach);
    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (name, a, b) in declared_families(space) {
        if a.is_empty() || b.is_empty() {
            return Err(format!("family {name}: a side has no sample points"));
        }
        let family = PathFamily::connecting(a, b);
        let sol = modulus_solve(&graph, &family, tol).map_err(|e| e.to_string())?;
        println!(
            "  {name}: modulus {:.6} in [{:.6}, {:.6}]{}",
            sol.modulus,
            sol.lower,
            sol.upper,
            if sol.converged { "" } else { "  (sandwich not closed)" }
        );
        if !sol.converged {
            failures.push(format!("modulus: {name} sandwich not closed"));
        }
        entries.push(json!({
            "family": name,
            "modulus": sol.modulus,
            "lower": sol.lower,
            "upper": sol.upper,
            "converged": sol.converged,
            "iterations": sol.iterations,
        }));
    }
    pipe.write_json("modulus.json", &json!({ "tol": tol, "families": entries }))?;
    pipe.failures.extend(failures);
    Ok(())
}

fn run_circle(args: &CircleArgs) -> Result<Vec<String>, String> {
    let io = &args.io;
    let path = io.input.as_ref().ok_or("circle needs --input pointing at a domain file")?;
    let dom: CircleDomain = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    dom.validate().map_err(|e| e.to_string())?;

    let m = dom.disk_count();
    let alpha = alpha_constant(args.c_w, args.c_d, args.c_x, m);
    let floor = free_radius_floor(alpha, m);
    let budget = pair_modulus_budget(args.c_w, args.c_d, args.c_x);
    let hypothesis = dom.min_relative_distance().map(|d| d >= alpha).unwrap_or(true);

    let mut reports = Vec::new();
    let mut free = Vec::new();
    for i in 0..m {
        let set = free_radii(&dom, i, alpha).map_err(|e| e.to_string())?;
        free.push(json!({ "disk": i, "measure": set.measure, "intervals": set.intervals }));
        if hypothesis {
            reports.push(
                VerificationReport::check(
                    "free_radius_measure",
                    floor,
                    set.measure,
                    json!({"disk": i}),
                )
                .with_constant("alpha", alpha),
            );
        } else {
            reports.push(VerificationReport::skipped(
                "free_radius_measure",
                "a disk pair sits closer than the protection scale",
            ));
        }
    }
    reports.extend(separation_check(&dom, budget, args.grid).map_err(|e| e.to_string())?);

    let mut pipe = Pipeline::new(io)?;
    pipe.write_json(
        "circle.json",
        &json!({
            "disks": m,
            "alpha": alpha,
            "free_radius_floor": floor,
            "modulus_budget": budget,
            "min_relative_distance": dom.min_relative_distance(),
            "free": free,
            "reports": reports,
        }),
    )?;
    if pipe.wants(Format::Svg) {
        pipe.write("domain.svg", &svg_domain(&dom))?;
    }
    pipe.record("circle", &reports);
    Ok(pipe.failures)
}

fn space_from_value(v: &Value, what: &str) -> Result<MetricMeasureSpace, String> {
    let text = serde_json::to_string(v).map_err(|e| e.to_string())?;
    MetricMeasureSpace::from_json(&text).map_err(|e| format!("{what}: {e}"))
}

fn run_qs(io: &Io) -> Result<Vec<String>, String> {
    let path = io.input.as_ref().ok_or("qs needs --input pointing at a map file")?;
    let v: Value = serde_json::from_str(&read_to_string(path)?)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let source = space_from_value(
        v.get("source").ok_or("map file: missing field \"source\"")?,
        "source",
    )?;
    let target = space_from_value(
        v.get("target").ok_or("map file: missing field \"target\"")?,
        "target",
    )?;
    let forward: Vec<usize> = serde_json::from_value(
        v.get("forward").ok_or("map file: missing field \"forward\"")?.clone(),
    )
    .map_err(|e| format!("map file: forward: {e}"))?;
    let map = DiscreteMap::new(forward).map_err(|e| e.to_string())?;
    let candidates: Option<Vec<usize>> = match v.get("candidates") {
        Some(c) => {
            Some(serde_json::from_value(c.clone()).map_err(|e| format!("candidates: {e}"))?)
        }
        None => None,
    };

    let mut pipe = Pipeline::new(io)?;
    qs_stage(&mut pipe, &source, &target, &map, candidates.as_deref(), io.seed)?;
    Ok(pipe.failures)
}

/// Caps an envelope for the artifact files; exhaustive runs otherwise keep
/// millions of near-duplicate breakpoints.  The envelope is monotone, so a
/// strided subsample that keeps the endpoints preserves its shape.
fn decimate(samples: &[(f64, f64)], cap: usize) -> Vec<(f64, f64)> {
    if samples.len() <= cap {
        return samples.to_vec();
    }
    let stride = samples.len().div_ceil(cap);
    let mut out: Vec<(f64, f64)> = samples.iter().copied().step_by(stride).collect();
    if out.last() != samples.last() {
        out.push(*samples.last().unwrap());
    }
    out
}

fn qs_stage(
    pipe: &mut Pipeline,
    source: &MetricMeasureSpace,
    target: &MetricMeasureSpace,
    map: &DiscreteMap,
    candidates: Option<&[usize]>,
    seed: u64,
) -> Result<(), String> {
    let sample = TripleSample::default_for(source.len(), seed);
    let eta = eta_estimate(source, target, map, sample).map_err(|e| e.to_string())?;
    let eta_view = decimate(&eta.samples, 4096);
    let norm = match candidates {
        Some(c) => {
            Some(normalize_map(source, target, map, c, TargetModel::Plane)
                .map_err(|e| e.to_string())?)
        }
        None => None,
    };
    match weak_qs_constant(source, target, map, sample) {
        Ok(weak) => {
            let mut report = QsReport::assemble(&weak, &eta, norm.as_ref());
            report.eta = eta_view.clone();
            println!(
                "t = {:.6} over {} admitted triples (witness {:?})",
                report.t, report.admitted_triples, report.witness
            );
            pipe.write_json("qs.json", &report)?;
        }
        Err(QsError::NoAdmissibleTriples) => {
            println!("no triple fits inside a tenth of the diameter at this resolution");
            pipe.write_json(
                "qs.json",
                &json!({
                    "t": null,
                    "note": "no admissible triples at this resolution",
                    "eta": eta_view,
                }),
            )?;
        }
        Err(e) => return Err(e.to_string()),
    }
    let mut csv = String::from("s,eta\n");
    for (s, e) in &eta_view {
        csv.push_str(&format!("{s},{e}\n"));
    }
    pipe.write("eta.csv", &csv)?;
    if pipe.wants(Format::Svg) {
        pipe.write("envelope.svg", &svg_envelope(&eta_view))?;
    }
    Ok(())
}

fn run_all(args: &VerifyArgs) -> Result<Vec<String>, String> {
    let io = &args.io;
    let space = load_space(io)?;
    let mut pipe = Pipeline::new(io)?;
    pipe.write("space.json", &space.to_json())?;

    println!("== chain metric ==");
    let m = measure(&space, io)?;
    write_qmetric(&pipe, &space, &m)?;
    pipe.write("deformed_space.json", &m.deformed.to_json())?;

    println!("== verification ==");
    verify_stage(&mut pipe, &space, &m, args)?;

    println!("== modulus ==");
    modulus_stage(&mut pipe, &space, io.tol)?;

    // the deformation direction the toolkit cares about: from the chain
    // re-metrization back to the original metric
    println!("== distortion ==");
    let map = DiscreteMap::identity(space.len());
    let map_file = json!({
        "source": serde_json::from_str::<Value>(&m.deformed.to_json()).unwrap(),
        "target": serde_json::from_str::<Value>(&space.to_json()).unwrap(),
        "forward": (0..space.len()).collect::<Vec<usize>>(),
    });
    pipe.write_json("map.json", &map_file)?;
    qs_stage(&mut pipe, &m.deformed, &space, &map, None, io.seed)?;

    pipe.write_json(
        "summary.json",
        &json!({
            "points": space.len(),
            "failures": pipe.failures,
        }),
    )?;
    Ok(pipe.failures)
}

// ─── SVG views ───

fn svg_head(x0: f64, y0: f64, w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"{x0} {y0} {w} {h}\" \
         width=\"640\" height=\"640\">\n"
    )
}

fn svg_scatter(space: &MetricMeasureSpace) -> String {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for i in 0..space.len() {
        let p = space.point(i);
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let h = space.pitch();
    let mut out = svg_head(
        lo[0] - h,
        lo[1] - h,
        (hi[0] - lo[0]) + 2.0 * h,
        (hi[1] - lo[1]) + 2.0 * h,
    );
    let w_max = (0..space.len()).map(|i| space.weight(i)).fold(0.0f64, f64::max);
    for i in 0..space.len() {
        let p = space.point(i);
        let r = 0.45 * h * (space.weight(i) / w_max).sqrt();
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"#1f77b4\"/>\n",
            p[0], p[1]
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn svg_domain(dom: &CircleDomain) -> String {
    let (c, r) = match &dom.outer {
        Some(o) => (o.center, o.radius),
        None => {
            let far = dom
                .disks
                .iter()
                .map(|d| (d.center[0].powi(2) + d.center[1].powi(2)).sqrt() + d.radius)
                .fold(1.0f64, f64::max);
            ([0.0, 0.0], 1.5 * far)
        }
    };
    let mut out = svg_head(c[0] - 1.1 * r, c[1] - 1.1 * r, 2.2 * r, 2.2 * r);
    out.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"{r}\" fill=\"#eef\" stroke=\"#333\" \
         stroke-width=\"{}\"/>\n",
        c[0],
        c[1],
        0.005 * r
    ));
    for d in &dom.disks {
        out.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"#fff\" stroke=\"#c33\" \
             stroke-width=\"{}\"/>\n",
            d.center[0],
            d.center[1],
            d.radius,
            0.005 * r
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn svg_envelope(samples: &[(f64, f64)]) -> String {
    let (w, h, pad) = (600.0, 440.0, 40.0);
    let mut out = svg_head(0.0, 0.0, w + 2.0 * pad, h + 2.0 * pad);
    let (smax, emax) = samples.iter().fold((1e-12f64, 1e-12f64), |(a, b), &(s, e)| {
        (a.max(s), b.max(e))
    });
    out.push_str(&format!(
        "<rect x=\"{pad}\" y=\"{pad}\" width=\"{w}\" height=\"{h}\" fill=\"none\" \
         stroke=\"#999\"/>\n"
    ));
    let mut points = String::new();
    for &(s, e) in samples {
        let x = pad + w * s / smax;
        let y = pad + h * (1.0 - e / emax);
        points.push_str(&format!("{x},{y} "));
    }
    out.push_str(&format!(
        "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/>\n",
        points.trim_end()
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"14\">input ratio (max {smax:.3})</text>\n",
        pad,
        h + 2.0 * pad - 10.0
    ));
    out.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-size=\"14\" transform=\"rotate(-90 14 {})\">\
         output ratio (max {emax:.3})</text>\n",
        pad + 14.0,
        pad + 14.0
    ));
    out.push_str("</svg>\n");
    out
}

// ─── Tests ───

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_expressions_parse() {
        assert!(matches!(
            parse_generator("square(8)"),
            Ok(Generator::Square { n: 8 })
        ));
        match parse_generator("snowflake(1/2, square(32))") {
            Ok(Generator::Snowflake { theta, base }) => {
                assert_eq!(theta, 0.5);
                assert!(matches!(*base, Generator::Square { n: 32 }));
            }
            other => panic!("{other:?}"),
        }
        // juxtaposed base, as the docs spell it
        match parse_generator("snowflake(1/2) square(32)") {
            Ok(Generator::Snowflake { theta, .. }) => assert_eq!(theta, 0.5),
            other => panic!("{other:?}"),
        }
        match parse_generator("weighted(square(16), stepx(0.5, 1, 3))") {
            Ok(Generator::Weighted { density, .. }) => {
                assert!(matches!(density, Density::StepX { .. }))
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_generator("annulus(1, 2, 64)").is_ok());
        assert!(parse_generator("cube(3)").is_err());
        assert!(parse_generator("square(8) extra(1) extra(2)").is_err());
        assert!(parse_generator("square(1/0)").is_err());
    }

    #[test]
    fn schedules_validate() {
        let s = generate(&Generator::Square { n: 8 }).unwrap();
        let io = |sched: Option<Vec<f64>>| Io {
            input: None,
            generator: None,
            out: PathBuf::from("out"),
            format: vec![Format::Json],
            seed: 0,
            samples: 10,
            delta_schedule: sched,
            tol: 0.02,
        };
        let default = resolve_schedule(&s, &io(None)).unwrap();
        assert_eq!(default.len(), 3);
        assert!(default.windows(2).all(|w| w[1] < w[0]));
        assert!(resolve_schedule(&s, &io(Some(vec![0.5, 0.5]))).is_err());
        assert!(resolve_schedule(&s, &io(Some(vec![0.5, 0.25]))).is_ok());
    }

    #[test]
    fn synthesized_side_families_cover_the_square_edges() {
        let s = generate(&Generator::Square { n: 8 }).unwrap();
        let fams = declared_families(&s);
        assert_eq!(fams.len(), 2);
        for (_, a, b) in &fams {
            assert_eq!(a.len(), 8);
            assert_eq!(b.len(), 8);
        }
    }

    #[test]
    fn annulus_uses_declared_labels() {
        let s = generate(&Generator::Annulus { r: 1.0, big_r: 2.0, n: 24 }).unwrap();
        let fams = declared_families(&s);
        assert_eq!(fams.len(), 1);
        assert_eq!(fams[0].0, "inner-outer");
    }
}
