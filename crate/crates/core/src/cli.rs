//! Batch front end behind the `geokernel` binary.

use std::cell::RefCell;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{FamilySpec, PieceName, RunConfig};
use crate::conjugacy::{conjugate_scan, Atlas};
use crate::error::{GeoError, Result};
use crate::generator::oracle::{torus_symbol, zonal_eigenvalue, OraclePiece};
use crate::generator::{partition_builder, Generator, Piece, TestField, Weight};
use crate::levy::{empirical_generator, simulate_paths, SimConfig};
use crate::manifold::{catalog_build, ChartPoint, ManifoldModel, ManifoldName};
use crate::symplectic::{atlas_pairs, write_pairs_csv};

const COLUMNS: &str = "\
Outputs (written to output.dir, names prefixed by output.prefix):
  atlas.csv            chart_id, x1..xn, v1..vn, s_star, order, regular, transversality, component_id
  pairs.csv            record, component_id, s_star, chart_id, x.., eta.., eta_tilde.., r1, r2, r3, scale, pass
  generator_apply.csv  point, chart_id, x1..xn, value
  generator_decompose.csv
                       point, chart_id, x1..xn, A, A1, A2, residual, c0, tail_bound
  generator_spectrum.csv
                       index, value, oracle, rel_error (comment line carries the fitted exponent)
  generator_pieces.csv point, chart_id, x1..xn, piece, value (pieces: one row per weight, then sum and unsplit)
  simulate.json        estimate, std_error, oracle, z_score, jump_rate, delta, ...
  paths.csv            path, t, chart_id, x1..xn
  manifest.json        resolved config, cutoff parameters, budgets, seeds, timestamps, outputs
Every CSV starts with a `# run_id=` comment matching the manifest.
Config keys can be overridden with --section.key=value (value parsed as JSON if possible).
Exit codes: 0 ok, 2 configuration error, 3 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "geokernel", version, about = "Stable-jump generators and conjugate points on closed manifolds", after_help = COLUMNS)]
struct Cli {
    /// JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// worker threads (fallback: GEOKERNEL_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Scan for conjugate pairs and write the atlas
    ConjugateScan,
    /// Evaluate the generator and its pieces
    Generator {
        #[command(subcommand)]
        mode: GenMode,
    },
    /// Covector pairs and lemma residuals for every scanned pair
    CanonicalPairs,
    /// Monte Carlo estimate of the generator
    Simulate,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum GenMode {
    Apply,
    Decompose,
    Spectrum,
    Pieces,
}

fn is_config_error(e: &GeoError) -> bool {
    matches!(e, GeoError::Config(_) | GeoError::BadParams(_) | GeoError::BadAlpha(_))
}

/// Splits `--a.b=value` overrides from the remaining arguments.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    let mut rest = Vec::new();
    let mut over = Vec::new();
    for a in args {
        if let Some(body) = a.strip_prefix("--") {
            if let Some((k, v)) = body.split_once('=') {
                if k.contains('.') {
                    over.push((k.to_string(), v.to_string()));
                    continue;
                }
            }
        }
        rest.push(a);
    }
    (rest, over)
}

/// Runs the command line `args` (including the program name) and returns
/// the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = split_overrides(args);
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli, &overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if is_config_error(&e) {
                2
            } else {
                3
            }
        }
    }
}

fn threads(cli: &Cli) -> Result<Option<usize>> {
    if let Some(t) = cli.threads {
        return Ok(Some(t));
    }
    match std::env::var("GEOKERNEL_THREADS") {
        Ok(s) => s
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| GeoError::Config(format!("GEOKERNEL_THREADS={s:?} is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

struct Run {
    cfg: RunConfig,
    run_id: String,
    m: ManifoldModel,
    outputs: RefCell<Vec<PathBuf>>,
    started: u64,
}

impl Run {
    fn path(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(format!("{}{}", self.cfg.output.prefix, name))
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p)?;
        self.outputs.borrow_mut().push(p);
        Ok(BufWriter::new(f))
    }

    fn point(&self, coords: &[f64]) -> Result<ChartPoint> {
        if coords.len() != self.m.dim() {
            return Err(GeoError::Config(format!("point {coords:?} has the wrong dimension")));
        }
        self.m.recenter(&ChartPoint::new(0, coords))
    }

    fn manifest(&self, command: &str, extra: Value) -> Result<()> {
        let r = self.cfg.generator.params.r_inj.unwrap_or(self.m.r_inj());
        let gen_cfg = &self.cfg.generator.params;
        let radial = Generator::new(&self.m, gen_cfg).map(|g| g.radial_nodes()).ok();
        let mut outputs: Vec<String> = self.outputs.borrow().iter().map(|p| p.display().to_string()).collect();
        let path = self.path("manifest.json");
        outputs.push(path.display().to_string());
        let doc = json!({
            "tool": "geokernel",
            "version": env!("CARGO_PKG_VERSION"),
            "run_id": self.run_id,
            "command": command,
            "config": self.cfg.to_value(),
            "manifold": {
                "spec": self.cfg.manifold,
                "dim": self.m.dim(),
                "r_inj": self.m.r_inj(),
            },
            "chi": {
                "profile": "1 - h((t - r^2/4) / (r^2/4)), h(x) = f(x) / (f(x) + f(1 - x)), f(x) = exp(-1/x)",
                "r_inj": r,
                "one_below": r * r / 4.0,
                "zero_above": r * r / 2.0,
            },
            "budgets": {
                "generator_budget": gen_cfg.budget,
                "radial_nodes": radial,
                "angular_nodes": gen_cfg.angular_nodes(&self.m),
            },
            "seeds": {
                "scan": self.cfg.scan.seed,
                "simulate": self.cfg.simulate.params.seed,
            },
            "started_unix": self.started,
            "finished_unix": now(),
            "outputs": outputs,
            "details": extra,
        });
        let mut f = File::create(&path)?;
        writeln!(f, "{}", serde_json::to_string_pretty(&doc).expect("json"))?;
        for o in &outputs {
            println!("{o}");
        }
        Ok(())
    }
}

fn execute(cli: &Cli, overrides: &[(String, String)]) -> Result<()> {
    let started = now();
    if let Some(t) = threads(cli)? {
        if t == 0 {
            return Err(GeoError::Config("thread count must be positive".into()));
        }
        // a pool may already exist when called in-process; keep it
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| GeoError::Config("--config is required".into()))?;
    let cfg = RunConfig::load(path, overrides)?;
    let m = catalog_build(&cfg.manifold)
        .map_err(|e| GeoError::Config(e.to_string()))?
        .with_switch_fraction(cfg.integration.switch_fraction);
    std::fs::create_dir_all(&cfg.output.dir)?;
    let mut run = Run {
        run_id: cfg.run_id(),
        cfg,
        m,
        outputs: RefCell::new(Vec::new()),
        started,
    };
    match &cli.cmd {
        Cmd::ConjugateScan => cmd_conjugate_scan(&mut run),
        Cmd::Generator { mode } => cmd_generator(&mut run, *mode),
        Cmd::CanonicalPairs => cmd_canonical_pairs(&mut run),
        Cmd::Simulate => cmd_simulate(&mut run),
    }
}

fn cmd_conjugate_scan(run: &mut Run) -> Result<()> {
    let atlas = conjugate_scan(&run.m, &run.cfg.scan)?;
    let mut out = run.create("atlas.csv")?;
    atlas.write_csv(&run.m, &mut out, &run.run_id)?;
    out.flush()?;
    let extra = json!({ "records": atlas.records.len(), "components": atlas.component_count() });
    run.manifest("conjugate-scan", extra)
}

fn cmd_canonical_pairs(run: &mut Run) -> Result<()> {
    let atlas = conjugate_scan(&run.m, &run.cfg.scan)?;
    let rows = atlas_pairs(&run.m, &atlas, &run.cfg.scan)?;
    let mut out = run.create("pairs.csv")?;
    write_pairs_csv(&run.m, &rows, &mut out, &run.run_id)?;
    out.flush()?;
    let failed = rows.iter().filter(|r| !r.2.pass).count();
    run.manifest("canonical-pairs", json!({ "pairs": rows.len(), "failed": failed }))
}

fn field(run: &Run, f: &Option<TestField>, section: &str) -> Result<TestField> {
    let u = f
        .clone()
        .ok_or_else(|| GeoError::Config(format!("{section}.field is required")))?;
    u.bind(&run.m).map_err(|e| GeoError::Config(e.to_string()))?;
    Ok(u)
}

fn eval_points(run: &Run, u: &TestField) -> Result<Vec<ChartPoint>> {
    if run.cfg.generator.points.is_empty() {
        Ok(vec![u.reference_point(&run.m)?])
    } else {
        run.cfg.generator.points.iter().map(|p| run.point(p)).collect()
    }
}

fn write_point_prefix<W: Write>(out: &mut W, i: usize, m: &ManifoldModel, x: &ChartPoint) -> Result<()> {
    let x0 = m.to_chart(x, 0).unwrap_or_else(|_| x.clone());
    write!(out, "{i},{}", x0.chart)?;
    for c in x0.coords.iter() {
        write!(out, ",{c:.16e}")?;
    }
    Ok(())
}

fn point_header(n: usize) -> String {
    let mut h = "point,chart_id".to_string();
    for i in 1..=n {
        h.push_str(&format!(",x{i}"));
    }
    h
}

fn fmt(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else {
        format!("{x:.16e}")
    }
}

fn cmd_generator(run: &mut Run, mode: GenMode) -> Result<()> {
    let gcfg = run.cfg.generator.clone();
    let g = Generator::new(&run.m, &gcfg.params)?;
    let n = run.m.dim();
    match mode {
        GenMode::Apply | GenMode::Decompose => {
            let u = field(run, &gcfg.field, "generator")?;
            let bound = u.bind(&run.m)?;
            let pts = eval_points(run, &u)?;
            let rows: Vec<(ChartPoint, Vec<f64>)> = pts
                .into_iter()
                .map(|x| {
                    let fan = g.fan(&x)?;
                    let vals = if matches!(mode, GenMode::Apply) {
                        vec![g.apply(&fan, &bound)]
                    } else {
                        let d = g.decompose(&fan, &bound);
                        vec![d.total, d.local, d.far, d.residual, d.c0, d.tail_bound]
                    };
                    Ok((x, vals))
                })
                .collect::<Result<_>>()?;
            let (name, cols) = match mode {
                GenMode::Apply => ("generator_apply.csv", ",value"),
                _ => ("generator_decompose.csv", ",A,A1,A2,residual,c0,tail_bound"),
            };
            let mut out = run.create(name)?;
            writeln!(out, "# run_id={}", run.run_id)?;
            writeln!(out, "{}{cols}", point_header(n))?;
            for (i, (x, vals)) in rows.iter().enumerate() {
                write_point_prefix(&mut out, i, &run.m, x)?;
                for v in vals {
                    write!(out, ",{}", fmt(*v))?;
                }
                writeln!(out)?;
            }
            out.flush()?;
            run.manifest(&format!("generator {mode:?}").to_lowercase(), json!({ "points": rows.len() }))
        }
        GenMode::Spectrum => {
            let fam = gcfg
                .family
                .clone()
                .ok_or_else(|| GeoError::Config("generator.family is required".into()))?;
            let fields = fam.fields();
            for u in &fields {
                u.bind(&run.m).map_err(|e| GeoError::Config(e.to_string()))?;
            }
            let piece = match gcfg.piece {
                PieceName::Full => Piece::Full,
                PieceName::Local => Piece::Local,
                PieceName::Far => Piece::Far,
                PieceName::Remainder => Piece::Remainder(Weight::one()),
            };
            let table = g.spectral_probe(&fields, &piece, gcfg.fit, (gcfg.window[0], gcfg.window[1]))?;
            let oracle = |u: &TestField| -> Result<f64> {
                Ok(match (u, gcfg.piece, run.m.name(), n) {
                    (TestField::TorusMode { k, sine: false }, PieceName::Full, ManifoldName::FlatTorus, _) => {
                        torus_symbol(k, run.m.torus_lengths().expect("torus"), gcfg.params.alpha)
                    }
                    (TestField::Zonal { l, .. }, p, ManifoldName::RoundSphere, 2) => {
                        let kind = match p {
                            PieceName::Full => OraclePiece::Full,
                            PieceName::Local => OraclePiece::Local,
                            PieceName::Remainder => OraclePiece::Remainder,
                            PieceName::Far => return Ok(f64::NAN),
                        };
                        let r = run.m.round_radius().expect("sphere");
                        zonal_eigenvalue(*l, gcfg.params.alpha, r, g.r_inj(), kind)?
                    }
                    _ => f64::NAN,
                })
            };
            let mut out = run.create("generator_spectrum.csv")?;
            writeln!(out, "# run_id={}", run.run_id)?;
            writeln!(out, "# exponent={}", table.exponent.map_or("nan".into(), fmt))?;
            writeln!(out, "index,value,oracle,rel_error")?;
            let mut worst: f64 = 0.0;
            for (u, row) in fields.iter().zip(&table.rows) {
                let o = oracle(u)?;
                let rel = if o.is_nan() {
                    f64::NAN
                } else if o == 0.0 {
                    row.value.abs()
                } else {
                    (row.value - o).abs() / o.abs()
                };
                if !rel.is_nan() {
                    worst = worst.max(rel);
                }
                writeln!(out, "{},{},{},{}", fmt(row.index), fmt(row.value), fmt(o), fmt(rel))?;
            }
            out.flush()?;
            run.manifest(
                "generator spectrum",
                json!({ "exponent": table.exponent, "max_rel_error": worst, "family": fam_label(&fam) }),
            )
        }
        GenMode::Pieces => {
            let atlas_path = gcfg
                .atlas
                .clone()
                .ok_or_else(|| GeoError::Config("atlas required: set generator.atlas to an atlas CSV".into()))?;
            let atlas = read_atlas(run, &atlas_path)?;
            let weights = partition_builder(&run.m, &atlas, gcfg.margin)?;
            let u = field(run, &gcfg.field, "generator")?;
            let bound = u.bind(&run.m)?;
            let pts = eval_points(run, &u)?;
            let mut out = run.create("generator_pieces.csv")?;
            writeln!(out, "# run_id={}", run.run_id)?;
            writeln!(out, "{},piece,value", point_header(n))?;
            for (i, x) in pts.iter().enumerate() {
                let fan = g.fan(x)?;
                let mut sum = 0.0;
                for w in &weights {
                    let v = g.remainder(&fan, &bound, w)?;
                    sum += v;
                    write_point_prefix(&mut out, i, &run.m, x)?;
                    writeln!(out, ",{},{}", w.label(), fmt(v))?;
                }
                let whole = g.remainder(&fan, &bound, &Weight::one())?;
                write_point_prefix(&mut out, i, &run.m, x)?;
                writeln!(out, ",sum,{}", fmt(sum))?;
                write_point_prefix(&mut out, i, &run.m, x)?;
                writeln!(out, ",unsplit,{}", fmt(whole))?;
            }
            out.flush()?;
            let labels: Vec<String> = weights.iter().map(|w| w.label()).collect();
            run.manifest("generator pieces", json!({ "weights": labels, "atlas": atlas_path }))
        }
    }
}

fn fam_label(f: &FamilySpec) -> Value {
    serde_json::to_value(f).expect("json")
}

fn read_atlas(run: &Run, path: &Path) -> Result<Atlas> {
    let f = File::open(path).map_err(|e| GeoError::Config(format!("atlas {}: {e}", path.display())))?;
    Atlas::read_csv(&run.m, BufReader::new(f), &run.cfg.scan)
}

fn cmd_simulate(run: &mut Run) -> Result<()> {
    let sec = run.cfg.simulate.clone();
    let u = field(run, &sec.field, "simulate")?;
    let x = match &sec.point {
        Some(p) => run.point(p)?,
        None => u.reference_point(&run.m)?,
    };
    let params: SimConfig = sec.params.clone();
    let rate = params.jump_rate(run.m.dim())?;
    let delta = sec.delta.unwrap_or(0.05 / rate);
    let est = empirical_generator(&run.m, &u, &x, &params, delta, params.n_paths)?;
    let gcfg = crate::generator::GeneratorConfig {
        alpha: params.alpha,
        ..run.cfg.generator.params.clone()
    };
    let oracle = crate::generator::truncated_generator(&run.m, &u, &x, &gcfg, params.eps, params.s_cap)?;
    let summary = json!({
        "run_id": run.run_id,
        "estimate": est.estimate,
        "std_error": est.std_error,
        "oracle": oracle,
        "z_score": (est.estimate - oracle) / est.std_error,
        "jump_rate": rate,
        "delta": delta,
        "n_paths": est.n_paths,
        "seed": params.seed,
        "eps": params.eps,
        "s_cap": params.s_cap,
        "truncation_bias_coefficient": params.truncation_bias_coefficient(run.m.dim())?,
    });
    let mut out = run.create("simulate.json")?;
    writeln!(out, "{}", serde_json::to_string_pretty(&summary).expect("json"))?;
    out.flush()?;
    if sec.dump_paths > 0 {
        let dump = SimConfig {
            n_paths: sec.dump_paths,
            ..params.clone()
        };
        let paths = simulate_paths(&run.m, &x, &dump)?;
        let mut out = run.create("paths.csv")?;
        writeln!(out, "# run_id={}", run.run_id)?;
        let mut h = "path,t,chart_id".to_string();
        for i in 1..=run.m.dim() {
            h.push_str(&format!(",x{i}"));
        }
        writeln!(out, "{h}")?;
        for p in &paths {
            p.write_csv(&mut out)?;
        }
        out.flush()?;
    }
    run.manifest("simulate", summary)
}
