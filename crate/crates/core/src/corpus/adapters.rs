//! Source adapters: published dataset layouts in, unified examples out.
//!
//! Supported layouts:
//!
//! - **AmbigQA** (light JSON array or JSONL): `{id, question, annotations:
//!   [{type: "singleAnswer", answer: [..]} | {type: "multipleQAs", qaPairs:
//!   [{question, answer: [..]}]}], nq_answer: [..]}`.
//! - **AmbiEnt** (JSONL): `{id, premise, hypothesis, ambiguous_label,
//!   disambiguations: [{premise, hypothesis, label}]}`.
//! - **DiscourseMT** (JSONL): `{id?, sentence, contexts: [c1, c2],
//!   translations: [t1, t2]}`.
//!
//! Examples that fail intent matching are dropped and reported with a reason.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::matching::{match_nli_intent, match_qa_intent, MatchError};
use super::{
    write_jsonl, AmbiguousExample, CorpusError, Interpretation, NliLabel, NliPair, TaskKind,
    TaskOutput,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NoMatch,
    MultiMatch,
    MissingSourceIntent,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropRecord {
    pub id: String,
    pub line: usize,
    pub reason: DropReason,
    pub detail: String,
}

#[derive(Debug, Clone, Default)]
pub struct AdapterOutput {
    pub examples: Vec<AmbiguousExample>,
    pub dropped: Vec<DropRecord>,
}

impl AdapterOutput {
    fn drop_on(&mut self, id: &str, line: usize, err: MatchError) {
        let reason = match &err {
            MatchError::NoMatch => DropReason::NoMatch,
            MatchError::MultiMatch(_) => DropReason::MultiMatch,
            MatchError::Precondition(_) => DropReason::MissingSourceIntent,
        };
        self.dropped.push(DropRecord {
            id: id.to_owned(),
            line,
            reason,
            detail: err.to_string(),
        });
    }

    /// Writes the retained examples to `path` and the drop log next to it as
    /// `<stem>.dropped.jsonl`.
    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        write_jsonl(path, &self.examples)?;
        write_jsonl(&drop_report_path(path), &self.dropped)
    }
}

pub fn drop_report_path(corpus: &Path) -> std::path::PathBuf {
    let stem = corpus
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    corpus.with_file_name(format!("{stem}.dropped.jsonl"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceFormat {
    AmbigQa,
    AmbiEnt,
    DiscourseMt,
}

impl SourceFormat {
    pub fn task(self) -> TaskKind {
        match self {
            SourceFormat::AmbigQa => TaskKind::Qa,
            SourceFormat::AmbiEnt => TaskKind::Nli,
            SourceFormat::DiscourseMt => TaskKind::Mt,
        }
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "ambigqa" => Ok(SourceFormat::AmbigQa),
            "ambient" => Ok(SourceFormat::AmbiEnt),
            "discoursemt" => Ok(SourceFormat::DiscourseMt),
            other => Err(format!("unknown source format `{other}`")),
        }
    }
}

pub fn convert(path: &Path, format: SourceFormat) -> Result<AdapterOutput, CorpusError> {
    let display = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: display.clone(),
        source,
    })?;
    let source = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    let records = read_records(&text, &display)?;
    let mut out = AdapterOutput::default();
    for (line, value) in records {
        match format {
            SourceFormat::AmbigQa => ambigqa_record(&value, &source, &display, line, &mut out)?,
            SourceFormat::AmbiEnt => ambient_record(&value, &source, &display, line, &mut out)?,
            SourceFormat::DiscourseMt => {
                let record: DiscourseMtRecord = serde_json::from_value(value)
                    .map_err(|e| schema(&display, line, "<record>", e.to_string()))?;
                let derived = derive_mt_examples(&record, &source, line)
                    .map_err(|e| schema(&display, line, &e.field, e.message))?;
                out.examples.extend(derived);
            }
        }
    }
    let mut seen = std::collections::HashSet::new();
    for ex in &out.examples {
        if !seen.insert(ex.id.clone()) {
            return Err(CorpusError::DuplicateId {
                path: display,
                line: 0,
                id: ex.id.clone(),
            });
        }
    }
    Ok(out)
}

fn schema(path: &str, line: usize, field: &str, message: impl Into<String>) -> CorpusError {
    CorpusError::Schema {
        path: path.to_owned(),
        line,
        field: field.to_owned(),
        message: message.into(),
    }
}

/// Reads either a JSON array (line numbers become 1-based array positions) or
/// JSONL.
fn read_records(text: &str, path: &str) -> Result<Vec<(usize, Value)>, CorpusError> {
    if text.trim_start().starts_with('[') {
        let items: Vec<Value> =
            serde_json::from_str(text).map_err(|e| schema(path, 0, "<document>", e.to_string()))?;
        return Ok(items.into_iter().enumerate().map(|(i, v)| (i + 1, v)).collect());
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map(|v| (i + 1, v))
                .map_err(|e| schema(path, i + 1, "<record>", e.to_string()))
        })
        .collect()
}

fn record_id(value: &Value, source: &str, line: usize) -> String {
    match value.get("id") {
        Some(Value::String(s)) if !s.is_empty() => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => format!("{source}:{line}"),
    }
}

fn string_list(value: Option<&Value>) -> Option<Vec<String>> {
    match value? {
        Value::Array(items) => items.iter().map(|v| v.as_str().map(str::to_owned)).collect(),
        Value::String(s) => Some(vec![s.clone()]),
        _ => None,
    }
}

fn string_field<'a>(value: &'a Value, key: &str) -> Option<&'a str> {
    value.get(key).and_then(Value::as_str)
}

fn ambigqa_record(
    value: &Value,
    source: &str,
    path: &str,
    line: usize,
    out: &mut AdapterOutput,
) -> Result<(), CorpusError> {
    let id = record_id(value, source, line);
    let question = string_field(value, "question")
        .ok_or_else(|| schema(path, line, "question", "missing"))?
        .to_owned();
    let annotations = value
        .get("annotations")
        .and_then(Value::as_array)
        .filter(|a| !a.is_empty())
        .ok_or_else(|| schema(path, line, "annotations", "missing or empty"))?;

    let multi = annotations.iter().find_map(|a| {
        (string_field(a, "type") == Some("multipleQAs"))
            .then(|| a.get("qaPairs").and_then(Value::as_array))
            .flatten()
    });

    if let Some(pairs) = multi.filter(|p| p.len() >= 2) {
        let mut interpretations = Vec::with_capacity(pairs.len());
        for (i, pair) in pairs.iter().enumerate() {
            let dq = string_field(pair, "question")
                .ok_or_else(|| schema(path, line, "annotations", format!("qaPair {i} lacks question")))?;
            let answers = string_list(pair.get("answer"))
                .filter(|a| !a.is_empty())
                .ok_or_else(|| schema(path, line, "annotations", format!("qaPair {i} lacks answers")))?;
            interpretations.push(Interpretation {
                index: i,
                disambiguated_input: Some(dq.to_owned()),
                context: None,
                output: TaskOutput::Answers(answers),
            });
        }
        let Some(nq) = string_list(value.get("nq_answer")).filter(|a| !a.is_empty()) else {
            out.dropped.push(DropRecord {
                id,
                line,
                reason: DropReason::MissingSourceIntent,
                detail: "no nq_answer to sample the intent from".into(),
            });
            return Ok(());
        };
        match match_qa_intent(&nq, &interpretations) {
            Ok(gold) => out.examples.push(AmbiguousExample {
                id,
                task: TaskKind::Qa,
                input: question,
                interpretations,
                gold_index: Some(gold),
                is_ambiguous: true,
                exchange: None,
            }),
            Err(e) => out.drop_on(&id, line, e),
        }
        return Ok(());
    }

    let mut answers: Vec<String> = Vec::new();
    for a in annotations {
        let list = match string_field(a, "type") {
            Some("multipleQAs") => a
                .get("qaPairs")
                .and_then(Value::as_array)
                .and_then(|p| p.first())
                .and_then(|p| string_list(p.get("answer"))),
            _ => string_list(a.get("answer")),
        };
        for ans in list.unwrap_or_default() {
            if !answers.contains(&ans) {
                answers.push(ans);
            }
        }
    }
    if answers.is_empty() {
        return Err(schema(path, line, "annotations", "no answers"));
    }
    out.examples.push(AmbiguousExample {
        id,
        task: TaskKind::Qa,
        input: question.clone(),
        interpretations: vec![Interpretation {
            index: 0,
            disambiguated_input: Some(question),
            context: None,
            output: TaskOutput::Answers(answers),
        }],
        gold_index: Some(0),
        is_ambiguous: false,
        exchange: None,
    });
    Ok(())
}

fn ambient_record(
    value: &Value,
    source: &str,
    path: &str,
    line: usize,
    out: &mut AdapterOutput,
) -> Result<(), CorpusError> {
    let id = record_id(value, source, line);
    let premise = string_field(value, "premise").ok_or_else(|| schema(path, line, "premise", "missing"))?;
    let hypothesis =
        string_field(value, "hypothesis").ok_or_else(|| schema(path, line, "hypothesis", "missing"))?;
    let disambiguations = value
        .get("disambiguations")
        .and_then(Value::as_array)
        .filter(|d| !d.is_empty())
        .ok_or_else(|| schema(path, line, "disambiguations", "missing or empty"))?;

    let mut interpretations = Vec::with_capacity(disambiguations.len());
    let mut labels = Vec::with_capacity(disambiguations.len());
    for (i, d) in disambiguations.iter().enumerate() {
        let field = |key: &str| {
            string_field(d, key)
                .ok_or_else(|| schema(path, line, "disambiguations", format!("entry {i} lacks {key}")))
        };
        let label: NliLabel = field("label")?
            .parse()
            .map_err(|m: String| schema(path, line, "disambiguations", m))?;
        labels.push(label);
        interpretations.push(Interpretation {
            index: i,
            disambiguated_input: Some(NliPair::new(field("premise")?, field("hypothesis")?).join()),
            context: None,
            output: TaskOutput::Label(label),
        });
    }
    let input = NliPair::new(premise, hypothesis).join();

    if interpretations.len() == 1 {
        out.examples.push(AmbiguousExample {
            id,
            task: TaskKind::Nli,
            input,
            interpretations,
            gold_index: Some(0),
            is_ambiguous: false,
            exchange: None,
        });
        return Ok(());
    }

    let Some(raw_label) = string_field(value, "ambiguous_label") else {
        out.dropped.push(DropRecord {
            id,
            line,
            reason: DropReason::MissingSourceIntent,
            detail: "no ambiguous_label to sample the intent from".into(),
        });
        return Ok(());
    };
    let ambiguous_label: NliLabel = raw_label
        .parse()
        .map_err(|m: String| schema(path, line, "ambiguous_label", m))?;
    match match_nli_intent(ambiguous_label, &labels) {
        Ok(gold) => out.examples.push(AmbiguousExample {
            id,
            task: TaskKind::Nli,
            input,
            interpretations,
            gold_index: Some(gold),
            is_ambiguous: true,
            exchange: None,
        }),
        Err(e) => out.drop_on(&id, line, e),
    }
    Ok(())
}

/// One contrastive DiscourseMT item: an ambiguous sentence, the two context
/// sentences that disambiguate it, and the matching translations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscourseMtRecord {
    #[serde(default)]
    pub id: Option<String>,
    pub sentence: String,
    pub contexts: Vec<String>,
    pub translations: Vec<String>,
}

/// Splits one record into the context-free ambiguous example and one
/// unambiguous example per context.
///
/// The unambiguous examples keep the test sentence as input and carry their
/// context in the single interpretation, so a Direct prompt renders them with
/// the context prepended.
pub fn derive_mt_examples(
    record: &DiscourseMtRecord,
    source: &str,
    line: usize,
) -> Result<Vec<AmbiguousExample>, super::FieldError> {
    if record.sentence.trim().is_empty() {
        return Err(super::FieldError::new("sentence", "empty"));
    }
    if record.contexts.len() != 2 {
        return Err(super::FieldError::new(
            "contexts",
            format!("expected 2 contexts, found {}", record.contexts.len()),
        ));
    }
    if record.translations.len() != 2 {
        return Err(super::FieldError::new(
            "translations",
            format!("expected 2 translations, found {}", record.translations.len()),
        ));
    }
    if record.contexts.iter().chain(&record.translations).any(|s| s.trim().is_empty()) {
        return Err(super::FieldError::new("contexts", "empty context or translation"));
    }
    let base = record
        .id
        .clone()
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| format!("{source}:{line}"));
    let interp = |i: usize, index: usize| Interpretation {
        index,
        disambiguated_input: None,
        context: Some(record.contexts[i].clone()),
        output: TaskOutput::Translation(record.translations[i].clone()),
    };
    let mut out = vec![AmbiguousExample {
        id: base.clone(),
        task: TaskKind::Mt,
        input: record.sentence.clone(),
        interpretations: vec![interp(0, 0), interp(1, 1)],
        gold_index: None,
        is_ambiguous: true,
        exchange: None,
    }];
    for i in 0..2 {
        out.push(AmbiguousExample {
            id: format!("{base}#ctx{i}"),
            task: TaskKind::Mt,
            input: record.sentence.clone(),
            interpretations: vec![interp(i, 0)],
            gold_index: Some(0),
            is_ambiguous: false,
            exchange: None,
        });
    }
    for ex in &out {
        ex.validate()?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sweet() -> DiscourseMtRecord {
        DiscourseMtRecord {
            id: None,
            sentence: "That is so sweet!".into(),
            contexts: vec![
                "You've been so wonderful to me these past couple of months.".into(),
                "Try some - it's like a sugar explosion!".into(),
            ],
            translations: vec!["C'est tellement adorable.".into(), "C'est tellement sucré.".into()],
        }
    }

    #[test]
    fn sweet_record_yields_one_ambiguous_two_unambiguous() {
        let ex = derive_mt_examples(&sweet(), "discourse", 4).unwrap();
        assert_eq!(ex.len(), 3);
        assert!(ex[0].is_ambiguous);
        assert_eq!(ex[0].id, "discourse:4");
        assert_eq!(ex.iter().filter(|e| !e.is_ambiguous).count(), 2);
        let targets: Vec<_> = ex[0]
            .interpretations
            .iter()
            .map(|i| i.output.translation().unwrap())
            .collect();
        assert_eq!(targets, ["C'est tellement adorable.", "C'est tellement sucré."]);
        assert_eq!(ex[2].interpretations[0].output.translation(), Some("C'est tellement sucré."));
    }

    #[test]
    fn single_context_is_schema_error() {
        let mut r = sweet();
        r.contexts.pop();
        let err = derive_mt_examples(&r, "d", 1).unwrap_err();
        assert_eq!(err.field, "contexts");
    }

    #[test]
    fn ambigqa_layout_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dev_light.json");
        let doc = serde_json::json!([
            {"id": "dbs", "question": "When is episode 113 of dragon ball super coming out?",
             "nq_answer": ["October 29, 2017"],
             "annotations": [{"type": "multipleQAs", "qaPairs": [
                {"question": "When is episode 113 of dragon ball super coming out for its original airdate?", "answer": ["October 29, 2017"]},
                {"question": "When is episode 113 of dragon ball super coming out for its american airdate?", "answer": ["June 1, 2019"]}]}]},
            {"id": "erica", "question": "Who plays erica on the last man on earth?",
             "annotations": [{"type": "singleAnswer", "answer": ["Cleopatra Coleman"]}]},
            {"id": "gone", "question": "q?", "nq_answer": ["1900"],
             "annotations": [{"type": "multipleQAs", "qaPairs": [
                {"question": "a?", "answer": ["1901"]}, {"question": "b?", "answer": ["1902"]}]}]}
        ]);
        fs::write(&path, doc.to_string()).unwrap();
        let out = convert(&path, SourceFormat::AmbigQa).unwrap();
        assert_eq!(out.examples.len(), 2);
        assert_eq!(out.examples[0].gold_index, Some(0));
        assert!(!out.examples[1].is_ambiguous);
        assert_eq!(out.dropped.len(), 1);
        assert_eq!(out.dropped[0].reason, DropReason::NoMatch);

        let unified = dir.path().join("qa.jsonl");
        out.write(&unified).unwrap();
        let reloaded = super::super::load_corpus(&unified, TaskKind::Qa).unwrap();
        assert_eq!(reloaded, out.examples);
        assert!(drop_report_path(&unified).exists());
    }

    #[test]
    fn ambient_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ambient.jsonl");
        let lines = [
            serde_json::json!({"id": "et", "premise": "We have not been able to find any scientific evidence that extraterrestrial life exists.",
                "hypothesis": "There is no scientific evidence that extraterrestrial life exists.",
                "ambiguous_label": "neutral",
                "disambiguations": [
                    {"premise": "We have not been able to find any scientific evidence that extraterrestrial life exists.", "hypothesis": "There is no scientific evidence to be found that extraterrestrial life exists.", "label": "neutral"},
                    {"premise": "We have not been able to find any scientific evidence that extraterrestrial life exists.", "hypothesis": "There has been no scientific evidence collected that extraterrestrial life exists.", "label": "entailment"}]}),
            serde_json::json!({"id": "tie", "premise": "p", "hypothesis": "h", "ambiguous_label": "neutral",
                "disambiguations": [
                    {"premise": "p", "hypothesis": "h1", "label": "neutral"},
                    {"premise": "p", "hypothesis": "h2", "label": "neutral"}]}),
        ];
        fs::write(&path, lines.iter().map(|l| l.to_string()).collect::<Vec<_>>().join("\n")).unwrap();
        let out = convert(&path, SourceFormat::AmbiEnt).unwrap();
        assert_eq!(out.examples.len(), 1);
        assert_eq!(out.examples[0].gold_index, Some(0));
        assert_eq!(out.dropped[0].reason, DropReason::MultiMatch);
    }
}
