use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use glrl_lab::analysis::{critical_point_spectrum, jacobian_at_zero_spectrum, scaling_slope, states_set_distance, EigenKind};
use glrl_lab::baselines::{nuclear_min, ProxConfig};
use glrl_lab::counterexamples::{build_4x4, deep_escape_demo, verify_gf_refutes_conjecture, DeepEscapeInstance};
use glrl_lab::dynamics::IntegratorConfig;
use glrl_lab::expcli::config::{ExperimentConfig, KEYS, OUT_ENV};
use glrl_lab::expcli::output::{fmt_f64, read_matrix, read_states, termination_label, write_matrix, write_table};
use glrl_lab::expcli::run::{build_problem, exit_code, EXIT_CONFIG};
use glrl_lab::expcli::{run, Algorithm};
use glrl_lab::{Error, LossSpec, Result};

fn flag(key: &str) -> &'static str {
    Box::leak(key.replace('_', "-").into_boxed_str())
}

/// `--config FILE`, `--set KEY=VALUE` and one flag per config key.
fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("config").long("config").value_name("FILE").value_parser(value_parser!(PathBuf)))
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("Override any config key"),
        );
    KEYS.iter().fold(cmd, |cmd, key| {
        let id: &'static str = key;
        cmd.arg(Arg::new(id).long(flag(key)).value_name("VALUE"))
    })
}

fn resolve_config(m: &ArgMatches, algorithm: Option<Algorithm>) -> Result<ExperimentConfig> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(a) = algorithm {
        cfg.algorithm = a;
    }
    for kv in m.get_many::<String>("set").into_iter().flatten() {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("expected KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v)?;
    }
    for key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            cfg.set(key, v)?;
        }
    }
    Ok(cfg)
}

fn out_dir(m: &ArgMatches, default_name: &str) -> PathBuf {
    if let Some(p) = m.get_one::<PathBuf>("out") {
        return p.clone();
    }
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs")).join(default_name)
}

fn out_arg() -> Arg {
    Arg::new("out").long("out").value_name("DIR").value_parser(value_parser!(PathBuf))
}

fn f64_list(m: &ArgMatches, id: &str) -> Vec<f64> {
    m.get_many::<f64>(id).map(|v| v.copied().collect()).unwrap_or_default()
}

fn cli() -> Command {
    let run_cmd = |name: &'static str, about: &'static str| config_args(Command::new(name).about(about));
    Command::new("glrl")
        .about("Greedy low-rank learning and gradient-flow experiments")
        .subcommand_required(true)
        .subcommand(run_cmd("gen", "Write the ground truth and loss of a random instance"))
        .subcommand(run_cmd("run-gd", "Gradient descent on factored parameters"))
        .subcommand(run_cmd("run-glrl", "Greedy low-rank learning"))
        .subcommand(run_cmd("run-deep-glrl", "Greedy low-rank learning with deep factors"))
        .subcommand(
            run_cmd("run-baseline", "R1MP or nuclear-norm minimization").arg(
                Arg::new("method")
                    .long("method")
                    .value_parser(["r1mp", "nuclear-min"])
                    .default_value("r1mp"),
            ),
        )
        .subcommand(run_cmd("kernel-depth", "Depth-L kernel dynamics in normalized time (depth 0 = infinite)"))
        .subcommand(
            Command::new("counterexample-4x4")
                .about("Nuclear norms, gradient flow and the nuclear-norm baseline on the 4x4 instance")
                .arg(Arg::new("r").long("r").value_parser(value_parser!(f64)).default_value("100"))
                .arg(
                    Arg::new("scales")
                        .long("scales")
                        .value_delimiter(',')
                        .value_parser(value_parser!(f64))
                        .default_value("1e-3,1e-6"),
                )
                .arg(Arg::new("step").long("step").value_parser(value_parser!(f64)).default_value("1e-4"))
                .arg(Arg::new("stop").long("stop").value_parser(value_parser!(f64)).default_value("1e-8"))
                .arg(out_arg()),
        )
        .subcommand(
            Command::new("deep-escape")
                .about("Blow-up ordering and noisy escape on the deep diagonal instance")
                .arg(Arg::new("alpha").long("alpha").value_parser(value_parser!(f64)).default_value("1e-8"))
                .arg(Arg::new("instance-seed").long("instance-seed").value_parser(value_parser!(u64)).default_value("0"))
                .arg(
                    Arg::new("noise")
                        .long("noise")
                        .value_delimiter(',')
                        .value_parser(value_parser!(f64))
                        .default_value("1e-3,1e-5"),
                )
                .arg(Arg::new("seeds").long("seeds").value_parser(value_parser!(u64)).default_value("5"))
                .arg(Arg::new("fraction").long("fraction").value_parser(value_parser!(f64)).default_value("1e-2"))
                .arg(out_arg()),
        )
        .subcommand(
            Command::new("analyze")
                .about("Post-process saved runs")
                .subcommand_required(true)
                .subcommand(
                    Command::new("distance")
                        .about("Distance of every saved state to the nearest reference state")
                        .arg(Arg::new("states").long("states").required(true).value_parser(value_parser!(PathBuf)))
                        .arg(
                            Arg::new("reference")
                                .long("reference")
                                .required(true)
                                .action(ArgAction::Append)
                                .value_parser(value_parser!(PathBuf))
                                .help("States CSV or matrix CSV; repeatable"),
                        )
                        .arg(out_arg()),
                )
                .subcommand(
                    Command::new("slope")
                        .about("Least-squares slope of log y against log x")
                        .arg(Arg::new("input").long("input").required(true).value_parser(value_parser!(PathBuf)))
                        .arg(Arg::new("x").long("x").required(true))
                        .arg(Arg::new("y").long("y").required(true)),
                )
                .subcommand(
                    Command::new("spectrum")
                        .about("Classified Jacobian spectrum at a critical point (or at 0)")
                        .arg(Arg::new("loss").long("loss").required(true).value_parser(value_parser!(PathBuf)))
                        .arg(Arg::new("point").long("point").value_parser(value_parser!(PathBuf)))
                        .arg(Arg::new("rank").long("rank").value_parser(value_parser!(usize)).default_value("0")),
                ),
        )
}

fn cmd_gen(m: &ArgMatches) -> Result<()> {
    let cfg = resolve_config(m, None)?;
    cfg.validate()?;
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir)?;
    let problem = build_problem(&cfg)?;
    std::fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    std::fs::write(dir.join("loss.txt"), problem.loss.to_text())?;
    if let Some(w) = &problem.w_star {
        write_matrix(&dir.join("ground_truth.csv"), w)?;
    }
    println!("{}", dir.display());
    Ok(())
}

fn cmd_run(m: &ArgMatches, algorithm: Algorithm) -> Result<()> {
    let cfg = resolve_config(m, Some(algorithm))?;
    let out = run(&cfg)?;
    for row in &out.summary {
        println!(
            "phase {:>2}  loss {:.6e}  nuclear {}  {}",
            row.phase,
            row.loss,
            row.nuclear_norm.map_or("-".into(), |n| format!("{n:.6e}")),
            row.termination
        );
    }
    println!("{}", out.dir.display());
    Ok(())
}

fn cmd_counterexample(m: &ArgMatches) -> Result<()> {
    let r = *m.get_one::<f64>("r").expect("default");
    let ce = build_4x4(r)?;
    let dir = out_dir(m, "counterexample-4x4");
    std::fs::create_dir_all(&dir)?;
    let cfg = IntegratorConfig::rk4(*m.get_one::<f64>("step").expect("default"))
        .with_stop_grad_norm(*m.get_one::<f64>("stop").expect("default"))
        .with_max_steps(10_000_000);
    let report = verify_gf_refutes_conjecture(&ce, &f64_list(m, "scales"), &cfg, f64::INFINITY)?;
    let prox = nuclear_min(&ce.loss, &ProxConfig::default())?;
    let mut rows = vec![
        vec!["m_norm".into(), String::new(), fmt_f64(ce.m_norm.nuclear_norm()?), "0".into(), String::new()],
        vec!["m_rank".into(), String::new(), fmt_f64(ce.m_rank.nuclear_norm()?), String::new(), "0".into()],
        vec![
            "nuclear_min".into(),
            String::new(),
            fmt_f64(prox.nuclear_norm),
            fmt_f64((&prox.estimate - &ce.m_norm).frobenius_norm()),
            fmt_f64((&prox.estimate - &ce.m_rank).frobenius_norm()),
        ],
    ];
    for run in &report.runs {
        rows.push(vec![
            format!("gf_{}", termination_label(&run.termination)),
            fmt_f64(run.scale),
            fmt_f64(run.nuclear_norm),
            fmt_f64(run.dist_to_norm),
            fmt_f64(run.dist_to_rank),
        ]);
        println!(
            "scale {:e}: nuclear {:.6}, |W - M_norm| {:.4e}, |W - M_rank| {:.4e}",
            run.scale, run.nuclear_norm, run.dist_to_norm, run.dist_to_rank
        );
    }
    write_table(&dir.join("summary.csv"), &["point", "scale", "nuclear_norm", "dist_to_norm", "dist_to_rank"], &rows)?;
    write_matrix(&dir.join("m_norm.csv"), &ce.m_norm)?;
    write_matrix(&dir.join("m_rank.csv"), &ce.m_rank)?;
    println!("nuclear_min: nuclear {:.6}", prox.nuclear_norm);
    println!("limit closer to M_rank with large nuclear norm: {}", report.pass);
    Ok(())
}

fn cmd_deep_escape(m: &ArgMatches) -> Result<()> {
    let inst = DeepEscapeInstance::new(
        *m.get_one::<f64>("alpha").expect("default"),
        *m.get_one::<u64>("instance-seed").expect("default"),
    )?;
    let seeds: Vec<u64> = (0..*m.get_one::<u64>("seeds").expect("default")).collect();
    let cfg = IntegratorConfig::relative_rk4(1e6, *m.get_one::<f64>("fraction").expect("default")).with_record_every(50);
    let report = deep_escape_demo(&inst, &f64_list(m, "noise"), &seeds, &cfg)?;
    let dir = out_dir(m, "deep-escape");
    std::fs::create_dir_all(&dir)?;
    let times: Vec<Vec<String>> = report
        .blow_up_times
        .iter()
        .enumerate()
        .map(|(i, t)| vec![(i + 1).to_string(), t.map(fmt_f64).unwrap_or_else(|| "inf".into())])
        .collect();
    write_table(&dir.join("blow_up_times.csv"), &["index", "time"], &times)?;
    let runs: Vec<Vec<String>> = report
        .runs
        .iter()
        .map(|r| {
            vec![
                fmt_f64(r.noise_eps),
                r.seed.to_string(),
                fmt_f64(r.final_alignment),
                fmt_f64(*r.growth.last().unwrap_or(&1.0)),
                termination_label(&r.termination).into(),
            ]
        })
        .collect();
    write_table(&dir.join("runs.csv"), &["noise_eps", "seed", "final_alignment", "growth", "termination"], &runs)?;
    println!("first to blow up: index {} (strict: {})", report.first_index + 1, report.first_is_strict);
    for r in &report.runs {
        println!("noise {:e} seed {}: e1 alignment {:.4}", r.noise_eps, r.seed, r.final_alignment);
    }
    Ok(())
}

fn load_reference(path: &Path) -> Result<Vec<glrl_lab::SymMat>> {
    match read_states(path) {
        Ok((_, states)) if !states.is_empty() => Ok(states),
        _ => Ok(vec![read_matrix(path)?]),
    }
}

fn cmd_analyze(m: &ArgMatches) -> Result<()> {
    match m.subcommand() {
        Some(("distance", m)) => {
            let (times, states) = read_states(m.get_one::<PathBuf>("states").expect("required"))?;
            let mut reference = Vec::new();
            for p in m.get_many::<PathBuf>("reference").expect("required") {
                reference.extend(load_reference(p)?);
            }
            let dist = states_set_distance(&states, &reference)?;
            let rows: Vec<Vec<String>> = times.iter().zip(&dist).map(|(t, d)| vec![fmt_f64(*t), fmt_f64(*d)]).collect();
            match m.get_one::<PathBuf>("out") {
                Some(p) => write_table(p, &["time", "dist_to_ref"], &rows)?,
                None => {
                    println!("time,dist_to_ref");
                    for r in rows {
                        println!("{}", r.join(","));
                    }
                }
            }
            println!("max {}", fmt_f64(dist.iter().copied().fold(0.0, f64::max)));
        }
        Some(("slope", m)) => {
            let path = m.get_one::<PathBuf>("input").expect("required");
            let mut r = csv::Reader::from_path(path).map_err(Error::from)?;
            let headers = r.headers().map_err(Error::from)?.clone();
            let col = |name: &String| {
                headers.iter().position(|h| h == name).ok_or_else(|| Error::Config(format!("no column '{name}'")))
            };
            let (ix, iy) = (col(m.get_one("x").expect("required"))?, col(m.get_one("y").expect("required"))?);
            let (mut xs, mut ys) = (Vec::new(), Vec::new());
            for rec in r.records() {
                let rec = rec.map_err(Error::from)?;
                let num = |i: usize| rec[i].trim().parse::<f64>().map_err(|_| Error::Config(format!("bad number '{}'", &rec[i])));
                xs.push(num(ix)?);
                ys.push(num(iy)?);
            }
            let fit = scaling_slope(&xs, &ys)?;
            println!("slope {:.6} intercept {:.6} r2 {:.6}", fit.slope, fit.intercept, fit.r2);
        }
        Some(("spectrum", m)) => {
            let text = std::fs::read_to_string(m.get_one::<PathBuf>("loss").expect("required"))?;
            let loss = LossSpec::from_text(&text)?;
            match m.get_one::<PathBuf>("point") {
                None => {
                    let z = jacobian_at_zero_spectrum(&loss)?;
                    println!("i,j,eigenvalue");
                    for p in &z.symmetric {
                        println!("{},{},{}", p.i + 1, p.j + 1, fmt_f64(p.value));
                    }
                    println!("antisymmetric zeros: {}", z.antisymmetric_zero_dim);
                }
                Some(p) => {
                    let w = read_matrix(p)?;
                    let s = critical_point_spectrum(&loss, &w, *m.get_one::<usize>("rank").expect("default"))?;
                    println!("kind,index,computed,expected");
                    for l in &s.labels {
                        let (kind, idx) = match l.kind {
                            EigenKind::Type1 { i, j } => ("type1", format!("{}-{}", i + 1, j + 1)),
                            EigenKind::Type2 { p } => ("type2", (p + 1).to_string()),
                        };
                        println!("{kind},{idx},{},{}", fmt_f64(l.computed), fmt_f64(l.expected));
                    }
                    println!("antisymmetric zeros: {}", s.antisymmetric_zero_count);
                }
            }
        }
        _ => unreachable!("subcommand required"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    let res = match matches.subcommand() {
        Some(("gen", m)) => cmd_gen(m),
        Some(("run-gd", m)) => cmd_run(m, Algorithm::Gd),
        Some(("run-glrl", m)) => cmd_run(m, Algorithm::Glrl),
        Some(("run-deep-glrl", m)) => cmd_run(m, Algorithm::DeepGlrl),
        Some(("run-baseline", m)) => {
            let alg = match m.get_one::<String>("method").map(String::as_str) {
                Some("nuclear-min") => Algorithm::NuclearMin,
                _ => Algorithm::R1mp,
            };
            cmd_run(m, alg)
        }
        Some(("kernel-depth", m)) => cmd_run(m, Algorithm::KernelDepth),
        Some(("counterexample-4x4", m)) => cmd_counterexample(m),
        Some(("deep-escape", m)) => cmd_deep_escape(m),
        Some(("analyze", m)) => cmd_analyze(m),
        _ => unreachable!("subcommand required"),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
