use std::io::{self, BufRead, IsTerminal, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use mdb_core::algebra::Row;
use mdb_core::ingest::import_file;
use mdb_core::model::Datum;
use mdb_core::plan::Strategy;
use mdb_core::query::{run_query, QueryOptions, QueryOutput};
use mdb_core::storage::{Database, OpenOptions, DEFAULT_PAGE_SIZE};
use mdb_core::Error;
use serde_json::{json, Map, Value};

#[derive(Parser)]
#[command(name = "mdb", version, about = "Embedded domain-graph database")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Import a text graph file into a new database directory.
    Import {
        file: PathBuf,
        #[arg(long)]
        db: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PAGE_SIZE)]
        page_size: usize,
    },
    /// Run one query, given inline or with --file.
    Query {
        #[command(flatten)]
        config: Config,
        #[arg(required_unless_present = "file")]
        text: Option<String>,
        #[arg(long, conflicts_with = "text")]
        file: Option<PathBuf>,
    },
    /// Read `;`-terminated queries from standard input.
    Shell {
        #[command(flatten)]
        config: Config,
    },
}

#[derive(Args, Clone)]
struct Config {
    #[arg(long)]
    db: PathBuf,
    #[arg(long, env = "MDB_BUFFER_PAGES", default_value_t = 8192)]
    buffer_pages: usize,
    #[arg(long)]
    page_size: Option<usize>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    strategy: StrategyArg,
    /// Error out instead of falling back when the strategy cannot run.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    limit: Option<u64>,
    #[arg(long, value_enum, default_value_t = Output::Tsv)]
    output: Output,
    #[arg(long)]
    stats: bool,
}

#[derive(ValueEnum, Clone, Copy)]
enum StrategyArg {
    Auto,
    Lf,
    Nl,
}

#[derive(ValueEnum, Clone, Copy, PartialEq)]
enum Output {
    Tsv,
    Jsonl,
}

impl Config {
    fn open(&self) -> Result<Database, Error> {
        Database::open(
            &self.db,
            OpenOptions {
                buffer_pages: self.buffer_pages,
                page_size: self.page_size,
            },
        )
    }

    fn options(&self) -> QueryOptions {
        QueryOptions {
            strategy: match self.strategy {
                StrategyArg::Auto => Strategy::Auto,
                StrategyArg::Lf => Strategy::Leapfrog,
                StrategyArg::Nl => Strategy::NestedLoop,
            },
            strict: self.strict,
            limit: self.limit,
            ..QueryOptions::default()
        }
    }
}

/// 1 for errors in the query or input text, 2 for storage and I/O.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Storage { .. }
        | Error::Io(_)
        | Error::Corruption(_)
        | Error::InvalidDirectory { .. }
        | Error::PoolExhausted(_) => 2,
        _ => 1,
    }
}

fn fail(e: &anyhow::Error) -> ExitCode {
    match e.downcast_ref::<Error>() {
        Some(core) => {
            eprintln!("error: {core}");
            ExitCode::from(exit_code(core))
        }
        None => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn escape_tsv(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\\' => out.push_str("\\\\"),
            c => out.push(c),
        }
    }
    out
}

fn json_value(d: &Option<Datum>) -> Value {
    match d {
        None => Value::Null,
        Some(Datum::Int(i)) => json!(i),
        Some(d) => Value::String(d.to_string()),
    }
}

fn write_rows(out: &mut impl Write, columns: &[String], rows: &[Row], format: Output) -> io::Result<()> {
    match format {
        Output::Tsv => {
            let header: Vec<String> = columns.iter().map(|c| escape_tsv(c)).collect();
            writeln!(out, "{}", header.join("\t"))?;
            for row in rows {
                let fields: Vec<String> = row
                    .iter()
                    .map(|d| d.as_ref().map_or(String::new(), |d| escape_tsv(&d.to_string())))
                    .collect();
                writeln!(out, "{}", fields.join("\t"))?;
            }
        }
        Output::Jsonl => {
            for row in rows {
                let obj: Map<String, Value> = columns
                    .iter()
                    .zip(row)
                    .map(|(c, d)| (c.clone(), json_value(d)))
                    .collect();
                writeln!(out, "{}", Value::Object(obj))?;
            }
        }
    }
    Ok(())
}

fn print_output(output: &QueryOutput, config: &Config, stats: bool, started: Instant) -> anyhow::Result<()> {
    for note in &output.notes {
        eprintln!("warning: {note}");
    }
    let stdout = io::stdout();
    let mut out = stdout.lock();
    if let Some(plan) = &output.explain {
        write!(out, "{plan}")?;
        if !plan.ends_with('\n') {
            writeln!(out)?;
        }
        return Ok(());
    }
    write_rows(&mut out, &output.solutions.columns, &output.solutions.rows, config.output)?;
    if stats {
        let s = &output.stats;
        let line = json!({
            "rows": output.solutions.rows.len(),
            "elapsed_ms": started.elapsed().as_secs_f64() * 1000.0,
            "intermediate": s.intermediate,
            "pages_read": s.pages_read,
            "seeks": s.seeks,
        });
        writeln!(out, "{line}")?;
    }
    Ok(())
}

fn query(config: &Config, text: &str) -> anyhow::Result<()> {
    let db = config.open()?;
    let started = Instant::now();
    let output = run_query(&db, text, &config.options())?;
    print_output(&output, config, config.stats, started)
}

fn shell(config: &Config) -> anyhow::Result<()> {
    let db = config.open()?;
    let stdin = io::stdin();
    let interactive = stdin.is_terminal();
    let mut timing = config.stats;
    let mut buffer = String::new();
    let prompt = |continued: bool| {
        if interactive {
            print!("{}", if continued { "  ...> " } else { "mdb> " });
            let _ = io::stdout().flush();
        }
    };
    prompt(false);
    for line in stdin.lock().lines() {
        let line = line?;
        let trimmed = line.trim();
        if buffer.is_empty() {
            match trimmed {
                "" => {
                    prompt(false);
                    continue;
                }
                "\\q" => return Ok(()),
                "\\timing" => {
                    timing = !timing;
                    println!("timing {}", if timing { "on" } else { "off" });
                    prompt(false);
                    continue;
                }
                _ => {}
            }
        }
        buffer.push_str(&line);
        buffer.push('\n');
        if !trimmed.ends_with(';') {
            prompt(true);
            continue;
        }
        let text = std::mem::take(&mut buffer);
        let text = text.trim_end().trim_end_matches(';');
        let started = Instant::now();
        let result = run_query(&db, text, &config.options())
            .map_err(anyhow::Error::from)
            .and_then(|out| print_output(&out, config, timing, started));
        if let Err(e) = result {
            eprintln!("error: {e:#}");
        }
        prompt(false);
    }
    Ok(())
}

fn import(file: &Path, db: &Path, page_size: usize) -> anyhow::Result<()> {
    let stats = import_file(file, db, page_size)?;
    println!("{}", serde_json::to_string(&stats)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Import { file, db, page_size } => import(file, db, *page_size),
        Command::Query { config, text, file } => match (text, file) {
            (Some(t), _) => query(config, t),
            (None, Some(f)) => std::fs::read_to_string(f)
                .with_context(|| format!("cannot read {}", f.display()))
                .and_then(|t| query(config, &t)),
            (None, None) => unreachable!(),
        },
        Command::Shell { config } => shell(config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}
