use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use sfp_core::baseline::{brute_force_opt, gw_primal_dual, OracleBudget};
use sfp_core::cells::CellParams;
use sfp_core::decomposition::DecompositionParams;
use sfp_core::dp::DpCaps;
use sfp_core::driver::{solve, DriverConfig, Mode, ResultRecord, Threshold};
use sfp_core::gen::{generate, GeneratorKind, GeneratorSpec};
use sfp_core::instance::{is_feasible, Instance, InstanceFile};
use sfp_core::metric::{Dist, MetricSpace, NetHierarchy, DEFAULT_SCALE};
use sfp_core::validate;

#[derive(Parser)]
#[command(name = "sfp", about = "Steiner forest solvers for finite metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a generated instance as JSON.
    Gen {
        #[arg(long, default_value = "euclidean2d")]
        kind: GeneratorKind,
        #[arg(long, default_value_t = 3)]
        pairs: usize,
        #[arg(long, default_value_t = 20.0)]
        spread: f64,
        #[arg(long, default_value_t = 0)]
        extra: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve one instance and print the result record.
    Solve {
        instance: PathBuf,
        #[arg(long, value_enum, default_value = "ptas")]
        solver: Solver,
        #[command(flatten)]
        opts: SolveOpts,
    },
    /// Run every applicable solver on each instance and write a ratio table.
    Compare {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[command(flatten)]
        opts: SolveOpts,
    },
    /// Run the invariant suites on generated instances.
    Validate {
        #[arg(long, value_enum, default_value = "all")]
        suite: Suite,
        #[arg(long, default_value_t = 5)]
        instances: usize,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    Oracle,
    Gw,
    Ptas,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Suite {
    Nets,
    Cut,
    NearTerminal,
    LongChain,
    Refinement,
    All,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Theory,
    Practical,
}

#[derive(Args)]
struct SolveOpts {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5)]
    eps: f64,
    #[arg(long, default_value_t = 4)]
    s: u32,
    /// Doubling dimension; taken from the instance file when absent.
    #[arg(long)]
    k: Option<f64>,
    /// `auto`, `off`, or a positive number.
    #[arg(long, default_value = "auto")]
    q0: String,
    #[arg(long, default_value_t = 8)]
    trials: usize,
    #[arg(long = "caps.r")]
    caps_r: Option<usize>,
    #[arg(long = "caps.rho")]
    caps_rho: Option<usize>,
    #[arg(long = "caps.edges")]
    caps_edges: Option<usize>,
    #[arg(long, value_enum, default_value = "practical")]
    mode: ModeArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl SolveOpts {
    fn config(&self, file: &InstanceFile) -> Result<DriverConfig> {
        let q0 = match self.q0.as_str() {
            "auto" => Threshold::Calibrated { factor: 4.0 },
            "off" => Threshold::Disabled,
            v => Threshold::Fixed(v.parse().with_context(|| format!("bad --q0 value {v}"))?),
        };
        let mut caps = DpCaps::default();
        caps.r_cap = self.caps_r.unwrap_or(caps.r_cap);
        caps.rho_cap = self.caps_rho.unwrap_or(caps.rho_cap);
        caps.edge_cap = self.caps_edges.unwrap_or(caps.edge_cap);
        let cfg = DriverConfig {
            eps: self.eps,
            k: self.k.or(file.dim_bound).unwrap_or(2.0),
            s: self.s,
            q0,
            n_trials: self.trials,
            caps,
            mode: match self.mode {
                ModeArg::Theory => Mode::Theory,
                ModeArg::Practical => Mode::Practical,
            },
            seed: self.seed,
            ..DriverConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn load(path: &Path) -> Result<(InstanceFile, MetricSpace, Instance)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let file = InstanceFile::parse(&text)?;
    let (m, inst) = file.build(DEFAULT_SCALE)?;
    Ok((file, m, inst))
}

fn oracle_cost(m: &MetricSpace, inst: &Instance) -> Option<Dist> {
    brute_force_opt(m, inst, None, &OracleBudget::default()).ok().map(|f| f.weight(m))
}

fn run_solve(instance: &Path, solver: Solver, opts: &SolveOpts) -> Result<()> {
    let (file, m, inst) = load(instance)?;
    let cfg = opts.config(&file)?;
    let gw = gw_primal_dual(&m, &inst);
    let gw_cost = gw.weight(&m);
    let out = match solver {
        Solver::Ptas => solve(&m, &inst, &cfg)?,
        Solver::Gw | Solver::Oracle => {
            let forest = if solver == Solver::Gw {
                gw
            } else {
                brute_force_opt(&m, &inst, None, &OracleBudget::default())?
            };
            let feasible = is_feasible(&forest, &inst);
            if !feasible {
                bail!("solver returned an infeasible forest");
            }
            sfp_core::driver::AlgOutput { cost: forest.weight(&m), feasible, forest, ..Default::default() }
        }
    };
    let oracle = if solver == Solver::Oracle { Some(out.cost) } else { oracle_cost(&m, &inst) };
    let record = ResultRecord::new(&m, &out, gw_cost, oracle, &cfg);
    emit(opts.out.as_deref(), &(record.to_json() + "\n"))
}

fn run_compare(instances: &[PathBuf], opts: &SolveOpts) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "instance_id", "n_pairs", "|X|", "oracle_cost", "gw_cost", "ptas_cost", "gw_ratio", "ptas_ratio", "seed",
    ])?;
    for path in instances {
        let (file, m, inst) = load(path)?;
        let cfg = opts.config(&file)?;
        let id = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        info!("comparing on {id}");
        let gw = gw_primal_dual(&m, &inst).weight(&m);
        let ptas = solve(&m, &inst, &cfg)?.cost;
        let oracle = oracle_cost(&m, &inst);
        let ratio = |x: Dist| match oracle {
            Some(0) => "1".to_string(),
            Some(o) => format!("{:.6}", x as f64 / o as f64),
            None => String::new(),
        };
        w.write_record([
            id,
            inst.nontrivial().count().to_string(),
            m.len().to_string(),
            oracle.map_or_else(String::new, |o| format!("{:.6}", m.to_units(o))),
            format!("{:.6}", m.to_units(gw)),
            format!("{:.6}", m.to_units(ptas)),
            ratio(gw),
            ratio(ptas),
            cfg.seed.to_string(),
        ])?;
    }
    let text = String::from_utf8(w.into_inner()?)?;
    emit(opts.out.as_deref(), &text)
}

fn run_validate(suite: Suite, count: usize, samples: usize, seed: u64, out: Option<&Path>) -> Result<bool> {
    let mut reports: Vec<validate::SuiteReport> = Vec::new();
    let want = |s: Suite| suite == Suite::All || suite == s;
    let (k, s, eps) = (2.0, 4, 0.5);
    for j in 0..count as u64 {
        let spec = GeneratorSpec {
            kind: GeneratorKind::Euclidean2d,
            n_pairs: 2 + (j as usize % 2),
            spread: 24.0,
            seed: seed.wrapping_add(j),
            extra_points: 4,
        };
        let file = generate(&spec)?;
        let (m, inst) = file.build(DEFAULT_SCALE)?;
        let h = NetHierarchy::build(&m, s, NetHierarchy::auto_num_heights(&m, s))?;
        if want(Suite::Nets) {
            reports.push(validate::nets_suite(&m, &h, file.dim_bound));
        }
        if want(Suite::Cut) {
            reports.push(validate::cut_suite(&m, &h, k, DecompositionParams::default().c_cut, samples, spec.seed).0);
        }
        if want(Suite::NearTerminal) {
            reports.push(validate::near_terminal_suite(&m, &inst, k)?);
        }
        if want(Suite::LongChain) {
            reports.push(validate::long_chain_suite(&m, &h, &inst, eps)?);
        }
        if want(Suite::Refinement) {
            let cells = CellParams::from_eps(eps, k, s, h.top())?;
            let params = DecompositionParams::default();
            let rho = DpCaps::default().rho_cap;
            reports.push(validate::structure_suite(&m, &h, &inst, &params, &cells, rho, spec.seed)?.0);
        }
    }
    let ok = reports.iter().all(|r| r.ok());
    emit(out, &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SFP_LOG", "warn")).init();
    let cli = Cli::parse();
    let res = match cli.command {
        Command::Gen { kind, pairs, spread, extra, seed, out } => {
            let spec = GeneratorSpec { kind, n_pairs: pairs, spread, seed, extra_points: extra };
            generate(&spec).map_err(Into::into).and_then(|f| emit(out.as_deref(), &(f.to_json() + "\n")))
        }
        Command::Solve { instance, solver, opts } => run_solve(&instance, solver, &opts),
        Command::Compare { instances, opts } => run_compare(&instances, &opts),
        Command::Validate { suite, instances, samples, seed, out } => {
            match run_validate(suite, instances, samples, seed, out.as_deref()) {
                Ok(true) => Ok(()),
                Ok(false) => Err(anyhow::anyhow!("validation failed")),
                Err(e) => Err(e),
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
