//! Review commands: thin wrappers over the service client.

use clap::Subcommand;
use movekit::corpus::{read_jsonl_file, AbstractId, MoveLabel, Span};
use movekit::review::wire::AbstractView;
use movekit::stats::Partition;
use movekit_client::Client;
use serde::Serialize;

use crate::{CliError, Format, ReviewArgs};

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// Take the oldest pending task.
    Next {
        #[arg(long)]
        reviewer: Option<String>,
    },
    /// Show one abstract with its spans and task state.
    Show { id: AbstractId },
    /// Relabel one sentence, or replace every span with a JSON list of triples.
    Correct {
        id: AbstractId,
        /// Sentence index (as listed by `show`).
        #[arg(long, requires = "label", conflicts_with = "spans")]
        sentence: Option<usize>,
        /// New label code for the sentence, e.g. MTD.
        #[arg(long)]
        label: Option<MoveLabel>,
        /// Full replacement, e.g. '[[0, 42, "BAC"], [43, 90, "PUR"]]'.
        #[arg(long, required_unless_present = "sentence")]
        spans: Option<String>,
        #[arg(long)]
        reviewer: Option<String>,
    },
    /// Accept the remaining machine labels and mark the abstract reviewed.
    Finalize {
        id: AbstractId,
        #[arg(long)]
        reviewer: Option<String>,
    },
    /// Queue a doccano JSON-Lines file; unlabeled abstracts are auto-annotated.
    Enqueue {
        #[arg(long = "in", value_name = "FILE")]
        input: std::path::PathBuf,
    },
    /// Old-to-new label counts over recent corrections.
    Confusion {
        #[arg(long)]
        last: Option<usize>,
    },
    /// Start retraining on the reviewed abstracts.
    Retrain {
        /// Block until the job has finished.
        #[arg(long)]
        wait: bool,
        /// Ignore the reviewed-abstract threshold.
        #[arg(long)]
        force: bool,
    },
    /// State of the retraining job.
    Status,
    /// Queue counts, active model and statistics of the reviewed abstracts.
    Stats {
        #[arg(long)]
        partition: Option<Partition>,
    },
    /// Per-word saliency of one sentence for its predicted label.
    Saliency { id: AbstractId, index: usize },
    /// Label codes, names and colours.
    Labels,
}

fn emit(
    format: Format,
    value: &impl Serialize,
    text: impl FnOnce() -> String,
) -> Result<(), CliError> {
    match format {
        Format::Json => println!(
            "{}",
            serde_json::to_string_pretty(value).map_err(CliError::data)?
        ),
        Format::Text => print!("{}", text()),
    }
    Ok(())
}

/// The serde name of a unit enum value, e.g. `in_review`.
fn wire_name(v: &impl Serialize) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        other => format!("{other:?}"),
    }
}

fn render_view(v: &AbstractView) -> String {
    let chars: Vec<char> = v.data.chars().collect();
    let mut out = format!(
        "abstract {}  status {}  task {} v{}{}\n",
        v.id,
        wire_name(&v.status),
        wire_name(&v.task.status),
        v.task.version,
        v.task
            .reviewer
            .as_deref()
            .map(|r| format!(" ({r})"))
            .unwrap_or_default()
    );
    for (i, s) in v.sentences.iter().enumerate() {
        let labels: Vec<String> = v
            .label
            .iter()
            .zip(&v.provenance)
            .filter(|(sp, _)| sp.overlaps(s.start, s.end))
            .map(|(sp, p)| format!("{} {}", sp.label.code(), wire_name(p)))
            .collect();
        let text: String = chars[s.start..s.end].iter().collect();
        out.push_str(&format!("{i:>3} [{}] {text}\n", labels.join(", ")));
    }
    out
}

/// Spans after relabelling sentence `[start, end)`: spans inside it are dropped and one
/// sentence-extent span takes their place.
fn relabel(spans: &[Span], start: usize, end: usize, label: MoveLabel) -> Vec<Span> {
    let mut out: Vec<Span> = spans
        .iter()
        .filter(|s| !s.overlaps(start, end))
        .copied()
        .collect();
    out.push(Span::new(start, end, label));
    out.sort_by_key(|s| (s.start, s.end));
    out
}

pub fn run(a: &ReviewArgs) -> Result<(), CliError> {
    let runtime = tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .map_err(CliError::data)?;
    runtime.block_on(dispatch(a))
}

async fn dispatch(a: &ReviewArgs) -> Result<(), CliError> {
    let client = Client::new(&a.service);
    let f = a.format;
    match &a.command {
        ReviewCommand::Next { reviewer } => match client.next_task(reviewer.as_deref()).await? {
            Some(v) => emit(f, &v, || render_view(&v)),
            None => emit(f, &serde_json::Value::Null, || "queue is empty\n".into()),
        },
        ReviewCommand::Show { id } => {
            let v = client.get_abstract(id).await?;
            emit(f, &v, || render_view(&v))
        }
        ReviewCommand::Correct {
            id,
            sentence,
            label,
            spans,
            reviewer,
        } => {
            let current = client.get_abstract(id).await?;
            let new_spans = match (sentence, label, spans) {
                (Some(i), Some(l), _) => {
                    let s = current.sentences.get(*i).ok_or_else(|| {
                        CliError::Usage(format!(
                            "abstract {id} has {} sentences; no sentence {i}",
                            current.sentences.len()
                        ))
                    })?;
                    relabel(&current.label, s.start, s.end, *l)
                }
                (_, _, Some(json)) => serde_json::from_str::<Vec<Span>>(json)
                    .map_err(|e| CliError::Usage(format!("--spans: {e}")))?,
                _ => {
                    return Err(CliError::Usage(
                        "give --sentence and --label, or --spans".into(),
                    ))
                }
            };
            let v = client
                .submit(id, new_spans, current.task.version, reviewer.as_deref())
                .await?;
            emit(f, &v, || render_view(&v))
        }
        ReviewCommand::Finalize { id, reviewer } => {
            let v = client.finalize(id, reviewer.as_deref()).await?;
            emit(f, &v, || render_view(&v))
        }
        ReviewCommand::Enqueue { input } => {
            let records = read_jsonl_file(input)
                .map_err(|e| CliError::Data(format!("{}: {e}", input.display())))?;
            let r = client.enqueue(&records).await?;
            emit(f, &r, || {
                format!(
                    "created {}, already queued {}, already labeled {}, failed {}, invalid {}\n",
                    r.report.created,
                    r.report.skipped_queued.len(),
                    r.report.skipped_labeled.len(),
                    r.report.failed.len(),
                    r.invalid.len()
                )
            })
        }
        ReviewCommand::Confusion { last } => {
            let r = client.confusion(*last).await?;
            emit(f, &r, || r.render_text())
        }
        ReviewCommand::Retrain { wait, force } => {
            let r = client.retrain(*wait, *force).await?;
            emit(f, &r, || {
                serde_json::to_string_pretty(&r).unwrap_or_default() + "\n"
            })
        }
        ReviewCommand::Status => {
            let r = client.retrain_status().await?;
            emit(f, &r, || {
                serde_json::to_string_pretty(&r).unwrap_or_default() + "\n"
            })
        }
        ReviewCommand::Stats { partition } => {
            let s = client.stats(*partition).await?;
            emit(f, &s, || {
                format!(
                    "tasks {:?}\nactive model {}\nreviewed {} ({} since training, threshold {})\n\n{}",
                    s.tasks,
                    s.active_model.as_deref().unwrap_or("none"),
                    s.reviewed_total,
                    s.reviewed_since_training,
                    s.retrain_threshold,
                    s.corpus.render_text()
                )
            })
        }
        ReviewCommand::Saliency { id, index } => {
            let s = client.saliency(id, *index).await?;
            emit(f, &s, || {
                let mut out = format!("saliency for {}\n", s.label.code());
                for (w, v) in s.words.iter().zip(&s.values) {
                    out.push_str(&format!("{v:>8.4}  {w}\n"));
                }
                out
            })
        }
        ReviewCommand::Labels => {
            let labels = client.labels().await?;
            emit(f, &labels, || {
                labels
                    .iter()
                    .map(|l| {
                        format!(
                            "{:<5}{:<14}{}  {}\n",
                            l.code.code(),
                            l.name,
                            l.color,
                            l.definition
                        )
                    })
                    .collect()
            })
        }
    }
}
