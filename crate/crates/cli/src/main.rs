mod config;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use cardstack_core::cards::CardStatus;
use cardstack_core::graph::{build_graph, export_graph, find_routes, query_cards, CardQuery, ExportFormat, GraphFilter, DEFAULT_MAX_LENGTH};
use cardstack_core::ontology::{load_ontology_file, merge_ontologies, validate_ontology, OntologySpec};
use cardstack_core::pipeline::{self, RunSummary, Store};
use cardstack_core::time::{parse_instant, TimeRange};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use config::{FileConfig, Overrides, Settings};

#[derive(Parser, Debug)]
#[command(name = "cardstack", version, about = "Ontology-driven notes and criterion cards from text corpora")]
struct Cli {
    /// TOML config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Store root directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Machine-readable output.
    #[arg(long, global = true)]
    json: bool,
    /// Pinned clock (RFC 3339) for reproducible runs.
    #[arg(long, global = true)]
    now: Option<String>,
    /// Key for pseudonymizing subjects at ingest.
    #[arg(long, global = true)]
    mask_key_file: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ontology checks.
    Ontology {
        #[command(subcommand)]
        command: OntologyCommand,
    },
    /// Ingest corpora into the text store only.
    Ingest {
        #[arg(long = "corpus")]
        corpora: Vec<PathBuf>,
    },
    /// Run the whole pipeline.
    Run {
        #[arg(long = "ontology")]
        ontologies: Vec<PathBuf>,
        #[arg(long = "corpus")]
        corpora: Vec<PathBuf>,
    },
    /// Synthesized notes.
    Notes {
        #[command(subcommand)]
        command: NotesCommand,
    },
    /// Committed, expired and premature cards.
    Cards {
        #[command(subcommand)]
        command: CardsCommand,
    },
    /// One card.
    Card {
        #[command(subcommand)]
        command: CardCommand,
    },
    /// Export the card graph.
    Export {
        #[arg(long, value_enum, default_value = "dot")]
        format: Format,
        #[command(flatten)]
        filter: FilterArgs,
        /// Write here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simple paths between two graph nodes.
    Routes {
        start: String,
        end: String,
        #[arg(long, default_value_t = DEFAULT_MAX_LENGTH)]
        max: usize,
        #[command(flatten)]
        filter: FilterArgs,
    },
}

#[derive(Subcommand, Debug)]
enum OntologyCommand {
    Validate { paths: Vec<PathBuf> },
}

#[derive(Subcommand, Debug)]
enum NotesCommand {
    List {
        #[arg(long)]
        subject: Option<String>,
        /// Only late notes.
        #[arg(long)]
        late: bool,
    },
}

#[derive(Subcommand, Debug)]
enum CardsCommand {
    List {
        #[arg(long)]
        concept: Option<String>,
        #[arg(long, value_enum)]
        status: Option<Status>,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        min_met: Option<u32>,
        #[arg(long)]
        max_met: Option<u32>,
    },
}

#[derive(Subcommand, Debug)]
enum CardCommand {
    /// Drill down from a card to its source documents.
    Show { card_id: String },
}

#[derive(Args, Debug, Default)]
struct FilterArgs {
    #[arg(long = "subject")]
    subjects: Vec<String>,
    #[arg(long = "concept")]
    concepts: Vec<String>,
    /// Keep cards valid at some point in [from, to).
    #[arg(long, requires = "to")]
    from: Option<String>,
    #[arg(long, requires = "from")]
    to: Option<String>,
}

impl FilterArgs {
    fn filter(&self) -> Result<GraphFilter> {
        let time = match (&self.from, &self.to) {
            (Some(from), Some(to)) => {
                let range = TimeRange::new(parse_instant(from)?, parse_instant(to)?);
                if range.end <= range.start {
                    bail!("--to must be after --from");
                }
                Some(range)
            }
            _ => None,
        };
        Ok(GraphFilter {
            subjects: self.subjects.iter().cloned().collect::<BTreeSet<_>>(),
            concepts: self.concepts.iter().cloned().collect(),
            time,
        })
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Dot,
    Json,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Status {
    Premature,
    Committed,
    Expired,
    Superseded,
}

impl From<Status> for CardStatus {
    fn from(s: Status) -> Self {
        match s {
            Status::Premature => CardStatus::Premature,
            Status::Committed => CardStatus::Committed,
            Status::Expired => CardStatus::Expired,
            Status::Superseded => CardStatus::Superseded,
        }
    }
}

/// Success, or success with validation findings (exit 1).
enum Outcome {
    Clean,
    Findings,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Findings) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn settings(cli: &Cli, ontologies: &[PathBuf], corpora: &[PathBuf]) -> Result<Settings> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    Settings::resolve(
        file,
        Overrides {
            store: cli.store.as_deref(),
            now: cli.now.as_deref(),
            mask_key_file: cli.mask_key_file.as_deref(),
            ontologies,
            corpora,
        },
    )
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_spec(paths: &[PathBuf]) -> Result<OntologySpec> {
    let mut specs = paths
        .iter()
        .map(|p| load_ontology_file(p).with_context(|| format!("ontology {}", p.display())));
    let Some(first) = specs.next() else {
        bail!("no ontology given (use --ontology or `ontologies` in the config)");
    };
    specs.try_fold(first?, |acc, next| Ok(merge_ontologies(&acc, &next?)?))
}

fn open_store(path: &Path) -> Result<Store> {
    if !path.exists() {
        bail!("store {} does not exist", path.display());
    }
    Ok(Store::open(path)?)
}

fn print_summary(summary: &RunSummary, json: bool) -> Result<()> {
    if json {
        return print_json(summary);
    }
    let value = serde_json::to_value(summary)?;
    for (key, v) in value.as_object().expect("summary is an object") {
        println!("{:<20} {v}", key.replace('_', " "));
    }
    println!("{:<20} {} ms", "wall time", summary.wall_time_ms);
    Ok(())
}

fn execute(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Ontology {
            command: OntologyCommand::Validate { paths },
        } => validate(paths, cli.json),
        Command::Ingest { corpora } => {
            let s = settings(cli, &[], corpora)?;
            if s.corpora.is_empty() {
                bail!("no corpus given (use --corpus or `corpora` in the config)");
            }
            let now = s.now.unwrap_or_else(chrono::Utc::now);
            let summary = pipeline::ingest_only(&s.store, &s.corpora, &s.pipeline, now)?;
            print_summary(&summary, cli.json)?;
            Ok(Outcome::Clean)
        }
        Command::Run { ontologies, corpora } => {
            let s = settings(cli, ontologies, corpora)?;
            if s.corpora.is_empty() {
                bail!("no corpus given (use --corpus or `corpora` in the config)");
            }
            let spec = load_spec(&s.ontologies)?;
            let now = s.now.unwrap_or_else(chrono::Utc::now);
            let summary = pipeline::run(&s.store, &spec, &s.corpora, &s.pipeline, now)?;
            print_summary(&summary, cli.json)?;
            Ok(Outcome::Clean)
        }
        Command::Notes {
            command: NotesCommand::List { subject, late },
        } => {
            let store = open_store(&settings(cli, &[], &[])?.store)?;
            let notes: Vec<_> = store
                .notes
                .iter()
                .filter(|n| subject.as_ref().is_none_or(|s| *s == n.subject))
                .filter(|n| !late || n.late)
                .collect();
            if cli.json {
                print_json(&notes)?;
            } else {
                for n in notes {
                    let range = n
                        .time_range
                        .map_or("undated".to_string(), |r| format!("{} .. {}", r.start.date_naive(), r.end.date_naive()));
                    println!(
                        "{}  {} {}/{}  {:?} {:?}  events={}  {}{}",
                        &n.note_id[..n.note_id.len().min(12)],
                        n.subject,
                        n.action.entity,
                        n.action.relationship,
                        n.intensity,
                        n.confidence,
                        n.event_count,
                        range,
                        if n.late { "  late" } else { "" }
                    );
                }
            }
            Ok(Outcome::Clean)
        }
        Command::Cards {
            command:
                CardsCommand::List {
                    concept,
                    status,
                    subject,
                    min_met,
                    max_met,
                },
        } => {
            let store = open_store(&settings(cli, &[], &[])?.store)?;
            let query = CardQuery {
                concept: concept.clone(),
                status: status.map(CardStatus::from),
                subject: subject.clone(),
                min_met: *min_met,
                max_met: *max_met,
            };
            let mut cards = query_cards(&store.cards, &query);
            // Cards still accumulating evidence live with the maker.
            cards.extend(store.maker.premature().filter(|c| query.matches(c)).cloned());
            cards.sort_by(|a, b| a.card_id.cmp(&b.card_id));
            if cli.json {
                print_json(&cards)?;
            } else {
                for c in &cards {
                    let scores: Vec<String> = c.dimensions.values().map(|d| d.score.to_string()).collect();
                    println!(
                        "{}  {:?}  met {}/{}  scores ({}){}",
                        c.card_id,
                        c.status,
                        c.criteria_met,
                        c.threshold,
                        scores.join(","),
                        if c.flagged { "  flagged" } else { "" }
                    );
                }
            }
            Ok(Outcome::Clean)
        }
        Command::Card {
            command: CardCommand::Show { card_id },
        } => {
            let store = open_store(&settings(cli, &[], &[])?.store)?;
            let trace = store.trace_card(card_id)?;
            if cli.json {
                print_json(&trace)?;
                return Ok(Outcome::Clean);
            }
            let c = &trace.card;
            println!("{}  {:?}  met {}/{}", c.card_id, c.status, c.criteria_met, c.threshold);
            for (index, dim) in &c.dimensions {
                println!("  criterion {index}: score {}", dim.score);
            }
            for event in &c.reasoning_trail {
                println!("  event {:?} at {}", event.kind, event.timestamp.to_rfc3339());
            }
            for r in &trace.refined {
                println!("  refined {}", r.refined.refined_id);
                for n in &r.notes {
                    println!("    note {} {}/{}", n.note.note_id, n.note.action.entity, n.note.action.relationship);
                    for ch in &n.chunks {
                        println!("      chunk {}  doc {}  {:?}", ch.chunk.chunk_id, ch.document.meta.source_uri, ch.document.text);
                    }
                }
            }
            for d in &trace.dangling {
                println!("  dangling {d}");
            }
            Ok(Outcome::Clean)
        }
        Command::Export { format, filter, out } => {
            let store = open_store(&settings(cli, &[], &[])?.store)?;
            let graph = build_graph(store.cards.cards(), &filter.filter()?);
            let format = match format {
                Format::Dot => ExportFormat::Dot,
                Format::Json => ExportFormat::Json,
            };
            let text = export_graph(&graph, format);
            match out {
                Some(path) => std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(Outcome::Clean)
        }
        Command::Routes { start, end, max, filter } => {
            let store = open_store(&settings(cli, &[], &[])?.store)?;
            let graph = build_graph(store.cards.cards(), &filter.filter()?);
            let routes = find_routes(&graph, start, end, *max)?;
            if cli.json {
                print_json(&routes)?;
            } else {
                for r in routes {
                    println!("{}", r.join(" - "));
                }
            }
            Ok(Outcome::Clean)
        }
    }
}

#[derive(Serialize)]
struct ValidateEntry {
    path: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    load_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<cardstack_core::ontology::ValidationReport>,
}

fn validate(paths: &[PathBuf], json: bool) -> Result<Outcome> {
    if paths.is_empty() {
        bail!("no ontology paths given");
    }
    let mut entries = Vec::new();
    let mut findings = false;
    for path in paths {
        if !path.exists() {
            bail!("ontology {} does not exist", path.display());
        }
        let entry = match load_ontology_file(path) {
            Ok(spec) => {
                let report = validate_ontology(&spec);
                findings |= report.has_errors();
                ValidateEntry {
                    path: path.display().to_string(),
                    load_error: None,
                    report: Some(report),
                }
            }
            Err(e) => {
                findings = true;
                ValidateEntry {
                    path: path.display().to_string(),
                    load_error: Some(e.to_string()),
                    report: None,
                }
            }
        };
        entries.push(entry);
    }
    if json {
        print_json(&entries)?;
    } else {
        for e in &entries {
            match (&e.load_error, &e.report) {
                (Some(err), _) => println!("{}: invalid: {err}", e.path),
                (None, Some(r)) => {
                    let (errors, warnings) = (r.errors().count(), r.warnings().count());
                    println!("{}: {} ({errors} errors, {warnings} warnings)", e.path, r.ontology);
                    for f in &r.findings {
                        println!("  {:?} {:?} {}: {}", f.severity, f.check, f.subject, f.message);
                    }
                }
                (None, None) => {}
            }
        }
    }
    Ok(if findings { Outcome::Findings } else { Outcome::Clean })
}
