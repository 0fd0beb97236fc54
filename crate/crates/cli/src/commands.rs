//! Commands that work on local files.

use std::path::{Path, PathBuf};

use movekit::classifier::{
    examples_from_corpus, train as train_model, EncoderConfig, Model, ModelConfig, TrainConfig,
    Variant,
};
use movekit::corpus::{read_jsonl_file, validate, write_jsonl, AnnotatedAbstract};
use movekit::eval::{compare_variants, sentence_label_sets, EvalReport, SplitSpec};
use movekit::ingest::{parse_bib, parse_tabular_export, ColumnMap, SegmenterConfig};
use movekit::stats::corpus_stats;
use movekit_server::ServerConfig;
use serde::Serialize;

use crate::{
    AnnotateArgs, CliError, CompareArgs, EvalArgs, Format, HyperArgs, IngestArgs, ServeArgs,
    StatsArgs, TrainArgs,
};

pub fn segmenter(path: Option<&Path>) -> Result<SegmenterConfig, CliError> {
    match path {
        Some(p) => SegmenterConfig::from_json_file(p).map_err(CliError::data),
        None => Ok(SegmenterConfig::default()),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn read_corpus(path: &Path) -> Result<Vec<AnnotatedAbstract>, CliError> {
    read_jsonl_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_json(value: &impl Serialize) -> Result<(), CliError> {
    println!(
        "{}",
        serde_json::to_string_pretty(value).map_err(CliError::data)?
    );
    Ok(())
}

pub fn ingest(a: &IngestArgs) -> Result<(), CliError> {
    let (abstracts, read, skipped) = if let Some(path) = &a.bib {
        let import = parse_bib(&read_text(path)?, a.first_id)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for key in &import.skipped {
            tracing::warn!(entry = %key, "no abstract; skipped");
        }
        let skipped = import.skipped.len();
        (import.abstracts, import.entries, skipped)
    } else {
        let path = a.tabular.as_ref().expect("clap requires a source");
        let map: ColumnMap = a
            .map
            .as_deref()
            .expect("clap requires --map")
            .parse()
            .map_err(|e| CliError::Usage(format!("--map: {e}")))?;
        let import = parse_tabular_export(&read_text(path)?, &map, a.first_id)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        for line in &import.skipped_empty {
            tracing::warn!(line, "empty abstract; skipped");
        }
        for err in &import.row_errors {
            tracing::warn!(line = err.line, "{}", err.message);
        }
        let skipped = import.skipped_empty.len() + import.row_errors.len();
        (import.abstracts, import.rows, skipped)
    };
    println!(
        "read {read}, extracted {}, skipped {skipped}",
        abstracts.len()
    );
    if abstracts.is_empty() {
        return Err(CliError::Data(
            "no abstracts extracted; nothing written".into(),
        ));
    }
    let records: Vec<AnnotatedAbstract> = abstracts
        .into_iter()
        .map(AnnotatedAbstract::unlabeled)
        .collect();
    write_file(&a.out, &write_jsonl(&records))
}

fn configs(h: &HyperArgs, variant: Variant) -> Result<(TrainConfig, ModelConfig), CliError> {
    let mut tc = TrainConfig::default();
    if let Some(v) = h.epochs {
        tc.epochs = v;
    }
    if let Some(v) = h.batch_size {
        tc.batch_size = v;
    }
    if let Some(v) = h.learning_rate {
        tc.learning_rate = v;
    }
    if let Some(v) = h.seed {
        tc.seed = v;
    }
    let mut mc = match &h.model_config {
        Some(p) => serde_json::from_str::<ModelConfig>(&read_text(p)?)
            .map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?,
        None => ModelConfig::for_variant(variant),
    };
    if h.toy {
        mc.encoder = EncoderConfig::toy(mc.encoder.vocab_size.min(2000));
    }
    mc.variant = variant;
    tc.check().map_err(|e| CliError::Usage(e.to_string()))?;
    mc.check().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((tc, mc))
}

pub fn train(a: &TrainArgs, seg: &SegmenterConfig) -> Result<(), CliError> {
    let (tc, mc) = configs(&a.hyper, a.variant)?;
    let corpus = read_corpus(&a.input)?;
    let (examples, skipped) =
        examples_from_corpus(&corpus, seg, mc.context_window).map_err(CliError::data)?;
    tracing::info!(examples = examples.len(), skipped, "training set");
    let dev = match &a.dev {
        Some(p) => Some(
            examples_from_corpus(&read_corpus(p)?, seg, mc.context_window)
                .map_err(CliError::data)?
                .0,
        ),
        None => None,
    };
    let model = train_model(&examples, dev.as_deref(), &tc, &mc).map_err(CliError::data)?;
    model.save(&a.out).map_err(CliError::data)?;
    let last = model.history.last();
    println!(
        "trained {} on {} sentences; {} epochs, final loss {}; saved to {}",
        model.version,
        examples.len(),
        model.history.len(),
        last.map(|h| format!("{:.4}", h.loss))
            .unwrap_or_else(|| "-".into()),
        a.out.display()
    );
    Ok(())
}

pub fn annotate(a: &AnnotateArgs, seg: &SegmenterConfig) -> Result<(), CliError> {
    if !a.model.is_dir() {
        return Err(CliError::Data(format!(
            "no model at {}; train one with `movekit train --in CORPUS --out DIR`",
            a.model.display()
        )));
    }
    let model = Model::load(&a.model).map_err(|e| {
        CliError::Data(format!(
            "cannot load model from {}: {e}; train one with `movekit train --in CORPUS --out DIR`",
            a.model.display()
        ))
    })?;
    let corpus = read_corpus(&a.input)?;
    let mut out = Vec::with_capacity(corpus.len());
    for r in corpus {
        let prediction = model
            .predict_abstract(&r.doc, seg)
            .map_err(CliError::data)?;
        out.push(AnnotatedAbstract::new(r.doc, prediction.annotation));
    }
    if let Some(bad) = out.iter().find(|r| !validate(r).is_empty()) {
        return Err(CliError::Data(format!(
            "annotation of {} does not validate",
            bad.id()
        )));
    }
    write_file(&a.out, &write_jsonl(&out))?;
    println!("annotated {} abstracts with {}", out.len(), model.version);
    Ok(())
}

pub fn stats(a: &StatsArgs, seg: &SegmenterConfig) -> Result<(), CliError> {
    let corpus = read_corpus(&a.input)?;
    if corpus.is_empty() {
        return Err(CliError::Data(format!(
            "{}: the corpus is empty; no statistics to report",
            a.input.display()
        )));
    }
    let stats = corpus_stats(&corpus, a.partition, seg);
    match a.format {
        Format::Text => print!("{}", stats.render_text()),
        Format::Json => print_json(&stats)?,
    }
    Ok(())
}

pub fn eval(a: &EvalArgs, seg: &SegmenterConfig) -> Result<(), CliError> {
    let gold = read_corpus(&a.gold)?;
    let pred = read_corpus(&a.pred)?;
    let (g, p) = sentence_label_sets(&gold, &pred, seg).map_err(CliError::data)?;
    let report = EvalReport::from_keyed(&g, &p).map_err(CliError::data)?;
    match a.format {
        Format::Text => print!("{}", report.render_text()),
        Format::Json => print_json(&report)?,
    }
    Ok(())
}

pub fn compare(a: &CompareArgs, seg: &SegmenterConfig) -> Result<(), CliError> {
    if a.variants.is_empty() {
        return Err(CliError::Usage("--variants lists no variant".into()));
    }
    let (mut tc, base) = configs(&a.hyper, Variant::Plain)?;
    let seed = a.hyper.seed.unwrap_or(SplitSpec::default().seed);
    tc.seed = seed;
    let spec = SplitSpec {
        ratio: a.ratio,
        seed,
    };
    let corpus = read_corpus(&a.input)?;
    let report =
        compare_variants(&corpus, &a.variants, &spec, &tc, &base, seg).map_err(CliError::data)?;
    match a.format {
        Format::Text => print!("{}", report.render_text()),
        Format::Json => print_json(&report)?,
    }
    if report.aborted {
        return Err(CliError::Data(
            "a variant failed; later variants were not run".into(),
        ));
    }
    Ok(())
}

pub fn serve(a: &ServeArgs, segmenter: Option<PathBuf>) -> Result<(), CliError> {
    let mut config = match &a.config {
        Some(p) => ServerConfig::load(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => ServerConfig::default(),
    };
    if let Some(port) = a.port {
        config.port = port;
    }
    if config.segmenter.is_none() {
        config.segmenter = segmenter;
    }
    config.check().map_err(|e| CliError::Usage(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(CliError::data)?;
    runtime
        .block_on(movekit_server::run(config))
        .map_err(CliError::data)
}
