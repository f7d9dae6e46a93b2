mod config;

use adl::bytecode::{parse, static_rand_scan, validate, Diagnostic, Program, Reg};
use adl::concrete::{Attacker, Echo, Guess, Scripted, Vm, MAX_EXHAUSTIVE_WIDTH};
use adl::cosp::{export_tree, Embedding};
use adl::crypto::{harmonize_check, program_model, LibSpec, ToyImpl, ToyLibrary};
use adl::equiv::{sym_equiv, tic_estimate, TicConfig, Verdict};
use adl::split::LibraryPts;
use adl::symbolic::{SymValue, SymVm};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::Config;
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(
    name = "adl",
    version,
    about = "Analyse Abstract Dalvik Language programs"
)]
struct Cli {
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Integer width in bits (2..=64).
    #[arg(long, global = true)]
    width: Option<u32>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Validate programs and their pre-compliance conditions.
    Check { files: Vec<PathBuf> },
    /// Run a program once.
    Run {
        file: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
    },
    /// Outcome distribution, exact or sampled.
    Dist {
        file: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
        /// Enumerate every random choice (width at most 8).
        #[arg(long)]
        exhaustive: bool,
        #[arg(long)]
        trials: Option<u64>,
    },
    /// Enumerate the symbolic views of a program.
    Symrun {
        file: PathBuf,
        #[command(flatten)]
        sym: SymArgs,
    },
    /// Export the protocol tree of a program.
    Embed {
        file: PathBuf,
        #[arg(long)]
        max_nodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long = "reg", value_parser = parse_reg)]
        regs: Vec<(Reg, i64)>,
    },
    /// Bounded symbolic equivalence of two programs.
    Equiv {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        sym: SymArgs,
    },
    /// Estimate the distinguishing advantage of an attacker.
    Tv {
        left: PathBuf,
        right: PathBuf,
        #[command(flatten)]
        exec: ExecArgs,
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value_t = 0.99)]
        confidence: f64,
    },
    /// Compare a library with the implementation of its specification.
    Harmonize {
        file: PathBuf,
        #[arg(long, value_enum, default_value_t = LibraryKind::Toy)]
        library: LibraryKind,
        /// Corrupt this output bit of the toy library.
        #[arg(long)]
        flip: Option<usize>,
        #[arg(long)]
        samples: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Args, Debug)]
struct ExecArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_steps: Option<u64>,
    /// `echo`, `guess` or a transcript file.
    #[arg(long)]
    attacker: Option<String>,
    /// Initial register value, `R=V`.
    #[arg(long = "reg", value_parser = parse_reg)]
    regs: Vec<(Reg, i64)>,
}

#[derive(Args, Debug)]
struct SymArgs {
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    recipe_depth: Option<usize>,
    #[arg(long = "reg", value_parser = parse_reg)]
    regs: Vec<(Reg, i64)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LibraryKind {
    /// The reference toy implementation.
    Toy,
    /// The program's own library methods.
    Bytecode,
}

fn parse_reg(s: &str) -> Result<(Reg, i64), String> {
    let (r, v) = s.split_once('=').ok_or("expected R=V")?;
    let r = r.trim().trim_start_matches('v');
    Ok((
        r.parse().map_err(|e| format!("register: {e}"))?,
        v.trim().parse().map_err(|e| format!("value: {e}"))?,
    ))
}

/// Exit status: success, negative verdict, usage or input error.
enum Status {
    Ok,
    Negative,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match Config::from_env().and_then(|c| dispatch(cli, c)) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Negative) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<Program> {
    let src =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse(&src).with_context(|| format!("parsing {}", path.display()))
}

fn attacker(spec: Option<&str>) -> Result<Option<Box<dyn Attacker>>> {
    Ok(match spec {
        None => None,
        Some("echo") => Some(Box::new(Echo)),
        Some("guess") => Some(Box::new(Guess)),
        Some(f) => {
            let src =
                std::fs::read_to_string(f).with_context(|| format!("reading attacker {f}"))?;
            Some(Box::new(
                Scripted::parse(&src).map_err(|e| anyhow!("attacker {f}: {e}"))?,
            ))
        }
    })
}

fn num_regs(regs: &[(Reg, i64)], w: u32) -> Result<BTreeMap<Reg, i64>> {
    for (r, v) in regs {
        if !adl::ops::fits(*v, w) {
            bail!("v{r}={v} does not fit in {w} bits");
        }
    }
    Ok(regs.iter().cloned().collect())
}

fn sym_regs(regs: &[(Reg, i64)], w: u32) -> Result<BTreeMap<Reg, SymValue>> {
    Ok(num_regs(regs, w)?
        .into_iter()
        .map(|(r, v)| (r, SymValue::Num(v)))
        .collect())
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn dispatch(cli: Cli, mut cfg: Config) -> Result<Status> {
    if let Some(w) = cli.width {
        cfg.width = w;
    }
    cfg.check()?;
    let w = cfg.width;
    let json = cli.json;
    match cli.cmd {
        Cmd::Check { files } => check(&files, json),
        Cmd::Run { file, exec } => {
            let p = load(&file)?;
            let adv = attacker(exec.attacker.as_deref())?;
            let vm = Vm::new(&p, w, adv.as_deref());
            let s = vm.initial(&num_regs(&exec.regs, w)?);
            let mut rng = adl::concrete::seeded(exec.seed.unwrap_or(cfg.seed));
            let run = vm.run(s, &mut rng, exec.max_steps.unwrap_or(cfg.max_steps));
            if json {
                print_json(&run)?;
            } else {
                for e in &run.trace {
                    println!("{}", serde_json::to_string(e)?);
                }
                println!("outcome: {}", run.outcome);
                println!("steps: {}", run.steps);
            }
            Ok(Status::Ok)
        }
        Cmd::Dist {
            file,
            exec,
            exhaustive,
            trials,
        } => {
            let p = load(&file)?;
            let adv = attacker(exec.attacker.as_deref())?;
            let vm = Vm::new(&p, w, adv.as_deref());
            let s = vm.initial(&num_regs(&exec.regs, w)?);
            let max_steps = exec.max_steps.unwrap_or(cfg.max_steps);
            let rows: Vec<(String, String)> = if exhaustive {
                if w > MAX_EXHAUSTIVE_WIDTH {
                    bail!("--exhaustive needs --width {MAX_EXHAUSTIVE_WIDTH} or less");
                }
                vm.exact_distribution(s, max_steps)?
                    .probs
                    .into_iter()
                    .map(|(o, q)| (o.to_string(), q.to_string()))
                    .collect()
            } else {
                let n = trials.unwrap_or(cfg.trials);
                vm.mc_distribution(&s, n, exec.seed.unwrap_or(cfg.seed), max_steps)
                    .probs
                    .into_iter()
                    .map(|(o, q)| (o.to_string(), format!("{q:.6}")))
                    .collect()
            };
            if json {
                let v: Vec<_> = rows
                    .iter()
                    .map(|(o, q)| json!({"outcome": o, "probability": q}))
                    .collect();
                print_json(&json!({"exact": exhaustive, "distribution": v}))?;
            } else {
                for (o, q) in rows {
                    println!("{q}\t{o}");
                }
            }
            Ok(Status::Ok)
        }
        Cmd::Symrun { file, sym } => {
            let p = load(&file)?;
            let vm = SymVm::new(
                &p,
                w,
                &sym_regs(&sym.regs, w)?,
                sym.recipe_depth.unwrap_or(cfg.recipe_depth),
            )?;
            let vs = vm.enumerate_views(sym.budget.unwrap_or(cfg.budget))?;
            if json {
                print_json(&vs)?;
            } else {
                for v in &vs.views {
                    println!("{}", serde_json::to_string(v)?);
                }
                println!(
                    "views: {} truncated: {} stuck: {}",
                    vs.views.len(),
                    vs.truncated,
                    vs.stuck
                );
            }
            Ok(Status::Ok)
        }
        Cmd::Embed {
            file,
            max_nodes,
            out,
            regs,
        } => {
            let p = load(&file)?;
            let emb = Embedding::new(&p, w, &sym_regs(&regs, w)?)?;
            let tree = export_tree(&emb, max_nodes.unwrap_or(cfg.max_nodes))?;
            let text = serde_json::to_string_pretty(&tree)?;
            match out {
                Some(f) => {
                    std::fs::write(&f, text + "\n")
                        .with_context(|| format!("writing {}", f.display()))?;
                    if !json {
                        println!(
                            "nodes: {} truncated: {} written: {}",
                            tree.nodes.len(),
                            tree.truncated,
                            f.display()
                        );
                    }
                }
                None => println!("{text}"),
            }
            Ok(Status::Ok)
        }
        Cmd::Equiv { left, right, sym } => {
            let (pl, pr) = (load(&left)?, load(&right)?);
            let regs = sym_regs(&sym.regs, w)?;
            let depth = sym.recipe_depth.unwrap_or(cfg.recipe_depth);
            let a = SymVm::new(&pl, w, &regs, depth)?;
            let b = SymVm::new(&pr, w, &regs, depth)?;
            let v = sym_equiv(&a, &b, sym.budget.unwrap_or(cfg.budget))?;
            if json {
                print_json(&v)?;
            } else {
                match &v {
                    Verdict::Equivalent { strategies, .. } => {
                        println!("equivalent ({strategies} strategies)")
                    }
                    Verdict::BoundExhausted {
                        strategies,
                        truncated,
                        ..
                    } => println!(
                        "no difference found; bound exhausted ({strategies} strategies, {truncated} truncated)"
                    ),
                    Verdict::Inequivalent { witness, .. } => print_json(witness)?,
                }
            }
            Ok(if v.is_inequivalent() {
                Status::Negative
            } else {
                Status::Ok
            })
        }
        Cmd::Tv {
            left,
            right,
            exec,
            trials,
            jobs,
            confidence,
        } => {
            if !(0.0 < confidence && confidence < 1.0) {
                bail!("--confidence must lie strictly between 0 and 1");
            }
            let (pl, pr) = (load(&left)?, load(&right)?);
            let adv =
                attacker(Some(exec.attacker.as_deref().unwrap_or("echo")))?.expect("an attacker");
            let regs = num_regs(&exec.regs, w)?;
            let tc = TicConfig {
                trials: trials.unwrap_or(cfg.trials),
                step_budget: exec.max_steps.unwrap_or(cfg.max_steps),
                seed: exec.seed.unwrap_or(cfg.seed),
                jobs: jobs.unwrap_or(cfg.jobs).max(1),
                confidence,
            };
            let e = tic_estimate((&pl, &regs), (&pr, &regs), w, adv.as_ref(), &tc);
            if json {
                print_json(&e)?;
            } else {
                println!("advantage: {:.4}", e.advantage);
                println!(
                    "interval: [{:.4}, {:.4}] at {}",
                    e.ci.0, e.ci.1, e.confidence
                );
                println!("pair: {} / {}", e.pair.0, e.pair.1);
            }
            Ok(Status::Ok)
        }
        Cmd::Harmonize {
            file,
            library,
            flip,
            samples,
            seed,
        } => {
            let p = load(&file)?;
            let spec = LibSpec::from_program(&p)?;
            let imp = ToyImpl { w };
            let samples = samples.unwrap_or(cfg.samples);
            let seed = seed.unwrap_or(cfg.seed);
            let r = match library {
                LibraryKind::Toy => {
                    let lib = ToyLibrary {
                        spec: spec.clone(),
                        imp: imp.clone(),
                        flip,
                    };
                    harmonize_check(&lib, &p, &spec, &imp, w, samples, seed)?
                }
                LibraryKind::Bytecode => {
                    if flip.is_some() {
                        bail!("--flip applies to the toy library only");
                    }
                    harmonize_check(&LibraryPts::new(&p, w), &p, &spec, &imp, w, samples, seed)?
                }
            };
            if json {
                print_json(&r)?;
            } else {
                for e in &r.entries {
                    println!(
                        "{}.{} => {}: {}",
                        e.class,
                        e.mid,
                        e.symop,
                        if !e.covered {
                            "uncovered".to_string()
                        } else {
                            format!("{} mismatches, tv {:.4}", e.mismatches, e.tv)
                        }
                    );
                }
                if let Some(c) = &r.counterexample {
                    println!("counterexample: {}", serde_json::to_string(c)?);
                }
                println!(
                    "{}",
                    if r.harmonizes {
                        "harmonizes"
                    } else {
                        "does not harmonize"
                    }
                );
            }
            Ok(if r.harmonizes {
                Status::Ok
            } else {
                Status::Negative
            })
        }
    }
}

#[derive(Serialize)]
struct FileReport {
    file: String,
    ok: bool,
    diagnostics: Vec<Diagnostic>,
}

fn diagnostics(path: &Path) -> Result<Vec<Diagnostic>> {
    let src =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let global = |code: &str, message: String| Diagnostic {
        code: code.into(),
        message,
        method: None,
        pc: None,
        line: None,
    };
    let p = match parse(&src) {
        Ok(p) => p,
        Err(e) => return Ok(vec![global("parse", e.to_string())]),
    };
    let mut d = validate(&p);
    d.extend(static_rand_scan(&p));
    if d.is_empty() {
        if let Err(e) = program_model(&p, 8) {
            d.push(global("libspec", e.to_string()));
        }
    }
    Ok(d)
}

fn check(files: &[PathBuf], json: bool) -> Result<Status> {
    if files.is_empty() {
        bail!("check needs at least one file");
    }
    let mut reports = Vec::new();
    for f in files {
        let diagnostics = diagnostics(f)?;
        reports.push(FileReport {
            file: f.display().to_string(),
            ok: diagnostics.is_empty(),
            diagnostics,
        });
    }
    if json {
        print_json(&reports)?;
    } else {
        for r in &reports {
            if r.ok {
                println!("{}: ok", r.file);
            }
            for d in &r.diagnostics {
                println!("{}: {d}", r.file);
            }
        }
    }
    Ok(if reports.iter().all(|r| r.ok) {
        Status::Ok
    } else {
        Status::Negative
    })
}
