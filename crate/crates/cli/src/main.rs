use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Arg, ArgAction, ArgMatches, Command};

use emopro_core::backends::server::MockServer;
use emopro_core::config::{load_fixture, SelectionConfig, CONFIG_KEYS};
use emopro_core::corpus::{decode_audio, load_manifest, validate_candidate, EmotionLabel, ValidationLimits};
use emopro_core::pipeline::{load_result, run_dynamic, run_static, LoadError};
use emopro_core::report::render_report;

/// Error carrying the process exit code.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 2,
        error: error.into(),
    }
}

fn pipeline(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: 1,
        error: error.into(),
    }
}

fn key_args() -> Vec<Arg> {
    CONFIG_KEYS
        .iter()
        .map(|(key, help)| {
            let arg = Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help(*help)
                .help_heading("Config keys");
            if key.contains('_') {
                arg.alias(key.replace('_', "-"))
            } else {
                arg
            }
        })
        .collect()
}

fn cli() -> Command {
    let manifest_args = [
        Arg::new("manifest").long("manifest").required(true).value_name("FILE").help("JSONL manifest"),
        Arg::new("speaker").long("speaker").required(true),
        Arg::new("emotion").long("emotion").required(true).help("happy, sad, anger, surprised or comfort"),
    ];
    Command::new("emopro")
        .about("Emotional prompt selection for prompt-conditioned speech synthesis")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("ingest")
                .about("Load one speaker/emotion pool, decode it and report validation flags")
                .args(manifest_args.clone())
                .arg(Arg::new("json").long("json").action(ArgAction::SetTrue)),
        )
        .subcommand(
            Command::new("static")
                .about("Run the static selection stage and write a result file")
                .args(manifest_args)
                .arg(Arg::new("config").long("config").value_name("FILE").help("flat TOML config file"))
                .arg(Arg::new("out").long("out").required(true).value_name("FILE"))
                .args(key_args()),
        )
        .subcommand(
            Command::new("dynamic")
                .about("Pick the stored Top-k prompt most relevant to a target text")
                .arg(Arg::new("result").long("result").required(true).value_name("FILE"))
                .arg(Arg::new("text").long("text").required(true))
                .arg(Arg::new("json").long("json").action(ArgAction::SetTrue))
                .arg(Arg::new("config").long("config").value_name("FILE"))
                .args(key_args()),
        )
        .subcommand(
            Command::new("report")
                .about("Print the Top-k table of a result file")
                .arg(Arg::new("result").long("result").required(true).value_name("FILE")),
        )
        .subcommand(
            Command::new("mock-serve")
                .about("Serve the mock backends over HTTP")
                .arg(Arg::new("fixture").long("fixture").required(true).value_name("FILE"))
                .arg(Arg::new("port").long("port").default_value("0").value_parser(clap::value_parser!(u16)))
                .arg(Arg::new("host").long("host").default_value("127.0.0.1")),
        )
}

fn emotion_arg(m: &ArgMatches) -> Result<EmotionLabel, Failure> {
    m.get_one::<String>("emotion").expect("required").parse().map_err(usage)
}

fn path_arg(m: &ArgMatches, id: &str) -> PathBuf {
    PathBuf::from(m.get_one::<String>(id).expect("required"))
}

fn key_overrides(m: &ArgMatches) -> Vec<(String, String)> {
    CONFIG_KEYS
        .iter()
        .filter_map(|(key, _)| m.get_one::<String>(key).map(|v| (key.to_string(), v.clone())))
        .collect()
}

fn build_config(m: &ArgMatches) -> Result<SelectionConfig, Failure> {
    let mut cfg = SelectionConfig::default();
    if let Some(file) = m.get_one::<String>("config") {
        cfg.load_file(Path::new(file)).map_err(usage)?;
    }
    cfg.apply_env().map_err(usage)?;
    for (k, v) in key_overrides(m) {
        cfg.set(&k, &v).map_err(usage)?;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn cmd_ingest(m: &ArgMatches) -> Result<(), Failure> {
    let manifest = path_arg(m, "manifest");
    let speaker = m.get_one::<String>("speaker").expect("required");
    let pool = load_manifest(&manifest, speaker, emotion_arg(m)?).map_err(usage)?;
    let limits = ValidationLimits::default();
    let mut rows = Vec::new();
    for c in pool.candidates() {
        let mut c = c.clone();
        let row = match decode_audio(&mut c) {
            Ok(audio) => serde_json::json!({
                "id": c.id,
                "duration_s": c.duration_s,
                "flags": validate_candidate(&c, &audio, &limits).flags,
            }),
            Err(e) => serde_json::json!({"id": c.id, "error": e.to_string()}),
        };
        rows.push(row);
    }
    if m.get_flag("json") {
        println!("{}", serde_json::Value::Array(rows));
        return Ok(());
    }
    let undecodable = rows.iter().filter(|r| r.get("error").is_some()).count();
    let flagged = rows
        .iter()
        .filter(|r| r.get("flags").and_then(|f| f.as_array()).is_some_and(|f| !f.is_empty()))
        .count();
    println!("{} candidates, {undecodable} undecodable, {flagged} flagged", rows.len());
    for r in rows.iter().filter(|r| r.get("error").is_some() || r["flags"].as_array().is_some_and(|f| !f.is_empty())) {
        println!("  {r}");
    }
    Ok(())
}

fn cmd_static(m: &ArgMatches) -> Result<(), Failure> {
    let cfg = build_config(m)?;
    let manifest = path_arg(m, "manifest");
    let out = path_arg(m, "out");
    let speaker = m.get_one::<String>("speaker").expect("required");
    let result = run_static(&cfg, &manifest, speaker, emotion_arg(m)?, &out).map_err(|e| Failure {
        code: e.exit_code() as u8,
        error: e.into(),
    })?;
    let s = &result.stages;
    println!(
        "stages: pool {} -> pitch {} -> quality {} -> top-k {}",
        s.pool, s.post_pitch, s.post_quality, s.top_k
    );
    for e in &result.top_k {
        println!("Top{} {}", e.rank, e.candidate_id);
    }
    println!("result written to {}", out.display());
    Ok(())
}

fn cmd_dynamic(m: &ArgMatches) -> Result<(), Failure> {
    let mut overrides = Vec::new();
    if let Some(file) = m.get_one::<String>("config") {
        let mut cfg = SelectionConfig::default();
        cfg.load_file(Path::new(file)).map_err(usage)?;
        let defaults = SelectionConfig::default();
        overrides.extend(cfg.to_kv().into_iter().filter(|(k, v)| defaults.get(k).as_ref() != Some(v)));
    }
    overrides.extend(key_overrides(m));
    let text = m.get_one::<String>("text").expect("required");
    let selection = run_dynamic(&path_arg(m, "result"), text, &overrides).map_err(|e| Failure {
        code: e.exit_code() as u8,
        error: e.into(),
    })?;
    if m.get_flag("json") {
        println!("{}", serde_json::to_string(&selection).expect("selection serializes"));
    } else {
        println!("{}", selection.chosen);
        for s in &selection.scores {
            println!("  {} {:.4}", s.candidate_id, s.relevance);
        }
        if let Some(reason) = &selection.fallback {
            println!("  (static Top-1 fallback: {reason})");
        }
    }
    Ok(())
}

fn cmd_report(m: &ArgMatches) -> Result<(), Failure> {
    let result = load_result(&path_arg(m, "result")).map_err(|e| match e {
        LoadError::Io { .. } => usage(e),
        other => pipeline(other),
    })?;
    print!("{}", render_report(&result).map_err(pipeline)?);
    Ok(())
}

fn cmd_mock_serve(m: &ArgMatches) -> Result<(), Failure> {
    let fixture = load_fixture(&path_arg(m, "fixture")).map_err(usage)?;
    let addr = format!(
        "{}:{}",
        m.get_one::<String>("host").expect("defaulted"),
        m.get_one::<u16>("port").expect("defaulted")
    );
    let server = MockServer::start(fixture, &addr)
        .with_context(|| format!("binding {addr}"))
        .map_err(usage)?;
    println!("listening on {}", server.url());
    server.wait();
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = cli().get_matches();
    let outcome = match matches.subcommand() {
        Some(("ingest", m)) => cmd_ingest(m),
        Some(("static", m)) => cmd_static(m),
        Some(("dynamic", m)) => cmd_dynamic(m),
        Some(("report", m)) => cmd_report(m),
        Some(("mock-serve", m)) => cmd_mock_serve(m),
        _ => unreachable!("subcommand is required"),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
