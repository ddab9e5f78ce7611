//! `narrowfront`: shapes, spectral curves, front speeds and their numerical
//! cross-checks from the command line.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use narrowfront::acceptance;
use narrowfront::channel::{sample_channel, ChannelShape, GeneratorParams, Side};
use narrowfront::channel2d::{compare_graph, solve_2d, Grid2d, Solve2dConfig};
use narrowfront::frontpde::{self, SolveConfig, TrackConfig};
use narrowfront::graph::build_graph;
use narrowfront::ldp;
use narrowfront::output::{write_atomic, Table};
use narrowfront::reaction::Kpp;
use narrowfront::sturm::{hitting_transform, DepthPolicy};
use narrowfront::walker::{estimate_q_cellwise, WalkerConfig};
use narrowfront::Error;
use serde_json::json;

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "narrowfront", version, about = "KPP front speeds in narrow random channels")]
struct Cli {
    /// JSON file with defaults; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Option<Cmd>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    Default,
    Rectangular,
    Flat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Direction {
    Plus,
    Minus,
}

impl From<Direction> for Side {
    fn from(d: Direction) -> Side {
        match d {
            Direction::Plus => Side::Plus,
            Direction::Minus => Side::Minus,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct ShapeArgs {
    /// Channel file; otherwise a shape is generated from `--seed`.
    #[arg(long)]
    shape: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Cells per side when generating.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Sample a channel and write it as JSON.
    Generate {
        #[command(flatten)]
        shape: ShapeArgs,
        /// File name inside the output directory.
        #[arg(long, default_value = "shape.json")]
        name: String,
    },
    /// Build the metric graph; write its listing and edge measures.
    Graph {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Sample points per edge in the measures table.
        #[arg(long, default_value_t = 11)]
        points: usize,
    },
    /// Lyapunov exponent μ(λ) on the configured grid.
    Mu {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value = "plus")]
        direction: Direction,
    },
    /// Rate function I(a).
    Rate {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value = "plus")]
        direction: Direction,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0, 5.0, 10.0])]
        a: Vec<f64>,
    },
    /// Front speeds c*₊ and c*₋.
    Speed {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        fprime: Option<f64>,
    },
    /// KPP on the metric graph with front tracking.
    SolveGraph {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long)]
        t_end: Option<f64>,
        #[arg(long)]
        dx: Option<f64>,
    },
    /// KPP in the thin 2D channel and its distance to the graph solution.
    #[command(name = "solve-2d")]
    Solve2d {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_delimiter = ',')]
        eps: Option<Vec<f64>>,
        #[arg(long)]
        t_end: Option<f64>,
    },
    /// Monte Carlo hitting transforms against the ratio recursion.
    Mc {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value = "plus")]
        direction: Direction,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Run the acceptance suite.
    Validate {
        /// Only the fast criteria.
        #[arg(long)]
        quick: bool,
        /// Criterion numbers to run.
        #[arg(long, value_delimiter = ',')]
        only: Option<Vec<usize>>,
    },
    /// LDP-predicted against PDE-measured speeds over seeds.
    Report {
        #[arg(long, value_delimiter = ',', default_values_t = vec![1u64, 2, 3])]
        seeds: Vec<u64>,
        #[arg(long)]
        cells: Option<usize>,
        #[arg(long)]
        t_end: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

struct Ctx<'a> {
    cfg: RunConfig,
    out: &'a Path,
    quiet: bool,
    files: Vec<String>,
    inputs: Vec<String>,
    seeds: Vec<u64>,
}

impl Ctx<'_> {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Error> {
        write_atomic(&self.out.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<(), Error> {
        self.write(name, t.to_csv().as_bytes())
    }

    fn say(&self, s: &str) {
        if !self.quiet {
            println!("{s}");
        }
    }

    fn shape(&mut self, a: &ShapeArgs) -> Result<ChannelShape, Error> {
        if let Some(p) = &a.shape {
            self.inputs.push(p.display().to_string());
            return ChannelShape::read(p);
        }
        let seed = a.seed.unwrap_or(self.cfg.seed);
        let cells = a.cells.unwrap_or(self.cfg.cells);
        self.seeds.push(seed);
        let params = match a.preset {
            Some(Preset::Default) => GeneratorParams::default(),
            Some(Preset::Rectangular) => GeneratorParams::rectangular(),
            Some(Preset::Flat) => GeneratorParams::flat(1.0),
            None => self.cfg.generator.clone(),
        };
        sample_channel(&params, seed, cells)
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = match &cli.config {
        Some(p) => match std::fs::read_to_string(p).map_err(|e| e.to_string()).and_then(|s| serde_json::from_str::<RunConfig>(&s).map_err(|e| e.to_string())) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: config {}: {e}", p.display());
                return Ok(ExitCode::from(2));
            }
        },
        None => RunConfig::default(),
    };
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(ExitCode::SUCCESS);
    }
    let Some(cmd) = &cli.cmd else {
        eprintln!("error: a subcommand is required (see --help)");
        return Ok(ExitCode::from(2));
    };
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Param(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let mut ctx = Ctx { cfg, out: &cli.out, quiet: cli.quiet, files: Vec::new(), inputs: Vec::new(), seeds: Vec::new() };
    let started = std::time::SystemTime::now();
    let (name, ok) = dispatch(cmd, &mut ctx)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": name,
        "args": format!("{cmd:?}"),
        "inputs": ctx.inputs,
        "seeds": ctx.seeds,
        "outputs": ctx.files,
        "config": ctx.cfg,
    });
    ctx.write("manifest.json", serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    let stamp = started.duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let log = format!("started_unix {stamp}\nelapsed_s {:.3}\n", started.elapsed().map(|d| d.as_secs_f64()).unwrap_or(0.0));
    write_atomic(&cli.out.join("run.log"), log.as_bytes())?;
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn direction_tag(d: Direction) -> &'static str {
    match d {
        Direction::Plus => "plus",
        Direction::Minus => "minus",
    }
}

fn dispatch(cmd: &Cmd, ctx: &mut Ctx) -> Result<(&'static str, bool), Error> {
    match cmd {
        Cmd::Generate { shape, name } => {
            let s = ctx.shape(shape)?;
            ctx.write(name, s.to_json().as_bytes())?;
            let (a, b) = s.extent();
            ctx.say(&format!("{} cells per side on [{a:.3}, {b:.3}] -> {}", s.positive.len(), ctx.out.join(name).display()));
            Ok(("generate", true))
        }
        Cmd::Graph { shape, points } => {
            let s = ctx.shape(shape)?;
            let g = build_graph(&s)?;
            ctx.write("graph.json", g.dump().as_bytes())?;
            let t = g.measures_table(*points)?;
            ctx.table("measures.csv", &t)?;
            ctx.say(&format!("{} edges, {} vertices, junction defect {:.2e}", g.edges.len(), g.vertices.len(), g.max_junction_defect()));
            Ok(("graph", true))
        }
        Cmd::Mu { shape, direction } => {
            let s = ctx.shape(shape)?;
            let c = ldp::mu_curve(&s, &ctx.cfg.lambda_grid(), (*direction).into(), ctx.cfg.ldp_cells)?;
            let name = format!("mu_{}.csv", direction_tag(*direction));
            ctx.table(&name, &c.table())?;
            ctx.say(&format!("{} grid points, mean cell length {:.4} -> {name}", c.lambdas.len(), c.mean_length));
            Ok(("mu", true))
        }
        Cmd::Rate { shape, direction, a } => {
            let s = ctx.shape(shape)?;
            let c = ldp::mu_curve(&s, &ctx.cfg.lambda_grid(), (*direction).into(), ctx.cfg.ldp_cells)?;
            let t = ldp::rate_table(&c, a)?;
            let name = format!("rate_{}.csv", direction_tag(*direction));
            ctx.table(&name, &t)?;
            ctx.say(&t.to_csv());
            Ok(("rate", true))
        }
        Cmd::Speed { shape, fprime } => {
            let s = ctx.shape(shape)?;
            let grid = ctx.cfg.lambda_grid();
            let plus = ldp::mu_curve(&s, &grid, Side::Plus, ctx.cfg.ldp_cells)?;
            let minus = ldp::mu_curve(&s, &grid, Side::Minus, ctx.cfg.ldp_cells)?;
            let sp = ldp::speeds(&plus, &minus, fprime.unwrap_or(ctx.cfg.fprime))?;
            ctx.table("speed.csv", &sp.table())?;
            ctx.say(&format!("c*+ = {:.10}  c*- = {:.10}", sp.c_plus, sp.c_minus));
            Ok(("speed", true))
        }
        Cmd::SolveGraph { shape, t_end, dx } => {
            let s = ctx.shape(shape)?;
            let g = build_graph(&s)?;
            let p = &ctx.cfg.pde;
            let sc = SolveConfig {
                dx: dx.unwrap_or(p.dx),
                t_end: t_end.unwrap_or(p.t_end),
                snapshot_every: p.snapshot_every,
                ..Default::default()
            };
            let sol = frontpde::solve(&g, &config::initial, &Kpp { rate: ctx.cfg.fprime }, &sc)?;
            ctx.table("snapshots.csv", &sol.snapshot_table())?;
            let tr = frontpde::track(&sol.spine_profiles(), &TrackConfig::default())?;
            ctx.table("front.csv", &tr.table())?;
            ctx.table("front_summary.csv", &tr.summary())?;
            ctx.say(&format!("right speed {:.5} (R² {:.6}), left speed {:.5}; {} steps of {:.3e}", tr.speed_right, tr.r2_right, tr.speed_left, sol.steps, sol.dt));
            Ok(("solve-graph", true))
        }
        Cmd::Solve2d { shape, eps, t_end } => {
            let s = ctx.shape(shape)?;
            let q = ctx.cfg.two_d.clone();
            let t_end = t_end.unwrap_or(q.t_end);
            let eps = eps.clone().unwrap_or_else(|| q.eps.clone());
            let g = build_graph(&s)?;
            let reference = frontpde::solve(
                &g,
                &config::initial,
                &Kpp { rate: ctx.cfg.fprime },
                &SolveConfig { dx: 0.5 * q.dx, t_end, snapshot_every: q.snapshot_every, min_segments: 4, dt: None },
            )?;
            let mut errors = Table::new(&["eps", "t", "sup_error"]);
            for &e in &eps {
                let cfg2 = Solve2dConfig {
                    eps: e,
                    grid: Grid2d { dx: q.dx, dz: q.dz },
                    t_end,
                    snapshot_every: q.snapshot_every,
                    shear: q.shear,
                    dt: None,
                };
                let sol = solve_2d(&s, &config::initial, &Kpp { rate: ctx.cfg.fprime }, &cfg2)?;
                ctx.table(&format!("averages_eps{e}.csv"), &sol.average_table())?;
                let c = compare_graph(&sol, &reference)?;
                for w in &c.warnings {
                    eprintln!("warning: {w}");
                }
                for (t, v) in c.times.iter().zip(&c.errors) {
                    errors.push_f64(&[e, *t, *v]);
                }
                let u = &sol.snapshots.last().expect("snapshots").u;
                ctx.say(&format!(
                    "eps {e}: sup error {:.4e}, oscillation {:.3e}, spine gradient {:.3}",
                    c.sup,
                    sol.domain.oscillation(u),
                    sol.domain.spine_gradient(u, &sol.graph)
                ));
            }
            ctx.table("graph_limit.csv", &errors)?;
            Ok(("solve-2d", true))
        }
        Cmd::Mc { shape, direction, paths } => {
            let s = ctx.shape(shape)?;
            let m = ctx.cfg.mc.clone();
            let wc = WalkerConfig { dt: m.dt, horizon: m.horizon, seed: m.seed, max_censoring: m.max_censoring, ..Default::default() };
            let side: Side = (*direction).into();
            let ext = s.extended(m.cells + 64)?;
            let q = estimate_q_cellwise(&ext, side, m.cells, &m.lambdas, &wc, paths.unwrap_or(m.paths))?;
            ctx.seeds.push(m.seed);
            ctx.table("mc_cells.csv", &q.table())?;
            let mut t = Table::new(&["lambda", "log_q_mc", "log_se", "log_q_recursion", "z"]);
            for (i, &l) in m.lambdas.iter().enumerate() {
                let r = hitting_transform(&ext, l, side, &DepthPolicy { report: Some(m.cells), ..Default::default() })?;
                let z = (q.log_q[i] - r.log_sum) / q.log_se[i];
                t.push_f64(&[l, q.log_q[i], q.log_se[i], r.log_sum, z]);
            }
            ctx.table("mc_summary.csv", &t)?;
            ctx.say(&t.to_csv());
            Ok(("mc", true))
        }
        Cmd::Validate { quick, only } => {
            let ids: Vec<usize> = match only {
                Some(v) => v.clone(),
                None if *quick => acceptance::QUICK.to_vec(),
                None => (1..=acceptance::TITLES.len()).collect(),
            };
            let quiet = ctx.quiet;
            let res = acceptance::run_all(&ids, |r| {
                if !quiet {
                    println!("{r}");
                }
            });
            let mut t = Table::new(&["id", "title", "pass", "seconds", "detail"]);
            for r in &res {
                t.push(vec![r.id.to_string(), r.title.to_string(), r.pass.to_string(), format!("{:.3}", r.seconds), r.detail.clone()]);
            }
            ctx.table("validate.csv", &t)?;
            let passed = res.iter().filter(|r| r.pass).count();
            ctx.say(&format!("{passed} of {} criteria passed", res.len()));
            Ok(("validate", passed == res.len()))
        }
        Cmd::Report { seeds, cells, t_end } => {
            let cells = cells.unwrap_or(80);
            let t_end = t_end.unwrap_or(60.0);
            let mut t = Table::new(&["seed", "c_star_plus", "pde_speed_right", "rel_diff", "r2_right"]);
            for &seed in seeds {
                ctx.seeds.push(seed);
                let s = sample_channel(&ctx.cfg.generator, seed, cells)?;
                let curve = ldp::mu_curve(&s, &ctx.cfg.lambda_grid(), Side::Plus, ctx.cfg.ldp_cells)?;
                let (cstar, _) = ldp::speed(&curve, ctx.cfg.fprime)?;
                let sc = SolveConfig { dx: ctx.cfg.pde.dx, t_end, snapshot_every: ctx.cfg.pde.snapshot_every, ..Default::default() };
                let sol = frontpde::solve(&build_graph(&s)?, &config::initial, &Kpp { rate: ctx.cfg.fprime }, &sc)?;
                let tr = frontpde::track(&sol.spine_profiles(), &TrackConfig::default())?;
                let rel = (tr.speed_right - cstar) / cstar;
                t.push_f64(&[seed as f64, cstar, tr.speed_right, rel, tr.r2_right]);
                ctx.say(&format!("seed {seed}: c*+ {cstar:.5}, PDE {:.5} ({:+.2}%)", tr.speed_right, 100.0 * rel));
            }
            ctx.table("report.csv", &t)?;
            Ok(("report", true))
        }
    }
}
