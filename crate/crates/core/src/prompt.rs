//! Prompt construction.
//!
//! Templates are plain text with `{name}` placeholders; `{{` and `}}` produce
//! literal braces. Rendering is a single pass over the parsed template, so
//! values containing brace syntax are inserted verbatim and never expanded.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashing::hex_digest;
use crate::task::{LabelSpec, LabeledSample, TaskKind, TaskSpec};

pub const PLACEHOLDERS: [&str; 5] = ["description", "label", "word", "first_sentence", "exemplars"];

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("template for stage {stage:?} is missing placeholder {{{name}}}")]
    MissingPlaceholder { stage: Stage, name: &'static str },
    #[error("template for stage {stage:?} must not use placeholder {{{name}}}")]
    ForbiddenPlaceholder { stage: Stage, name: String },
    #[error("template syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("task {task} has no {stage} template")]
    MissingTemplate { task: String, stage: &'static str },
    #[error("task {task} is {kind:?}, which does not support {what}")]
    WrongKind { task: String, kind: TaskKind, what: &'static str },
    #[error("first sentence is empty")]
    EmptyFirstSentence,
    #[error("task {0} has no task words")]
    NoTaskWords(String),
    #[error("exemplar list is empty")]
    NoExemplars,
    #[error("exemplar {index} has label id {label_id}, which the task does not define")]
    UnknownExemplarLabel { index: usize, label_id: u32 },
    #[error("more than one exemplar for label {0}")]
    DuplicateExemplarLabel(String),
    #[error("no exemplar for label {0}")]
    MissingExemplarLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Single,
    PairFirst,
    PairSecond,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub text: String,
    pub stage: Stage,
}

impl PromptTemplate {
    pub fn new(text: impl Into<String>, stage: Stage) -> Self {
        Self { text: text.into(), stage }
    }

    fn parse(&self) -> Result<Vec<Segment>, PromptError> {
        let mut segments = Vec::new();
        let mut lit = String::new();
        let mut chars = self.text.char_indices().peekable();
        while let Some((i, c)) = chars.next() {
            match c {
                '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                    chars.next();
                    lit.push('{');
                }
                '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                    chars.next();
                    lit.push('}');
                }
                '{' => {
                    let mut name = String::new();
                    let mut closed = false;
                    for (_, n) in chars.by_ref() {
                        if n == '}' {
                            closed = true;
                            break;
                        }
                        name.push(n);
                    }
                    if !closed {
                        return Err(PromptError::Syntax { offset: i, message: "unclosed placeholder".into() });
                    }
                    if !PLACEHOLDERS.contains(&name.as_str()) {
                        return Err(PromptError::Syntax {
                            offset: i,
                            message: format!("unknown placeholder {{{name}}}"),
                        });
                    }
                    if !lit.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut lit)));
                    }
                    segments.push(Segment::Slot(name));
                }
                '}' => {
                    return Err(PromptError::Syntax { offset: i, message: "unmatched '}'".into() });
                }
                _ => lit.push(c),
            }
        }
        if !lit.is_empty() {
            segments.push(Segment::Literal(lit));
        }
        Ok(segments)
    }

    /// Placeholder names referenced by the template.
    pub fn placeholders(&self) -> Result<Vec<String>, PromptError> {
        Ok(self
            .parse()?
            .into_iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n),
                Segment::Literal(_) => None,
            })
            .collect())
    }

    /// Checks placeholder usage for `stage`; `kadg` marks word-augmented use.
    pub fn validate(&self, stage: Stage, kadg: bool) -> Result<(), PromptError> {
        let names = self.placeholders()?;
        let has = |n: &str| names.iter().any(|x| x == n);
        let mut required: Vec<&'static str> = vec!["description"];
        let mut forbidden: Vec<&'static str> = Vec::new();
        match stage {
            Stage::Single => {
                required.push("label");
                forbidden.push("first_sentence");
            }
            Stage::PairFirst => forbidden.extend(["label", "first_sentence"]),
            Stage::PairSecond => required.extend(["label", "first_sentence"]),
        }
        if kadg {
            required.push("word");
        } else {
            forbidden.push("word");
        }
        for name in required {
            if !has(name) {
                return Err(PromptError::MissingPlaceholder { stage, name });
            }
        }
        for name in forbidden {
            if has(name) {
                return Err(PromptError::ForbiddenPlaceholder { stage, name: name.to_string() });
            }
        }
        Ok(())
    }

    /// Renders with the given values. Returns the text and, if the template
    /// has an `{exemplars}` slot, its byte offset (the slot renders empty).
    fn render(&self, values: &[(&str, &str)]) -> Result<(String, Option<usize>), PromptError> {
        let mut out = String::new();
        let mut slot = None;
        for seg in self.parse()? {
            match seg {
                Segment::Literal(l) => out.push_str(&l),
                Segment::Slot(name) if name == "exemplars" => {
                    slot.get_or_insert(out.len());
                }
                Segment::Slot(name) => {
                    let v = values
                        .iter()
                        .find(|(k, _)| *k == name)
                        .map(|(_, v)| *v)
                        .ok_or_else(|| PromptError::ForbiddenPlaceholder { stage: self.stage, name: name.clone() })?;
                    out.push_str(v);
                }
            }
        }
        Ok((out, slot))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_id: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kadg_word: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exemplar_ids: Vec<String>,
}

/// A rendered prompt with its stable digest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptText {
    pub rendered: String,
    pub digest: String,
    pub metadata: PromptMetadata,
    #[serde(skip)]
    exemplar_slot: Option<usize>,
}

impl PromptText {
    pub fn new(rendered: impl Into<String>, metadata: PromptMetadata) -> Self {
        let rendered = rendered.into();
        Self {
            digest: prompt_digest(&rendered),
            rendered,
            metadata,
            exemplar_slot: None,
        }
    }
}

/// 64-bit stable hash of the rendered UTF-8 bytes, as hex.
pub fn prompt_digest(rendered: &str) -> String {
    hex_digest(rendered.as_bytes())
}

fn template<'a>(
    t: &'a Option<PromptTemplate>,
    task: &TaskSpec,
    stage: &'static str,
) -> Result<&'a PromptTemplate, PromptError> {
    t.as_ref().ok_or_else(|| PromptError::MissingTemplate { task: task.task_id.clone(), stage })
}

fn finish(template: &PromptTemplate, values: &[(&str, &str)], metadata: PromptMetadata) -> Result<PromptText, PromptError> {
    let (rendered, slot) = template.render(values)?;
    let mut p = PromptText::new(rendered, metadata);
    p.exemplar_slot = slot;
    Ok(p)
}

pub fn build_single_prompt(task: &TaskSpec, label: &LabelSpec) -> Result<PromptText, PromptError> {
    if task.kind.is_pair() {
        return Err(PromptError::WrongKind {
            task: task.task_id.clone(),
            kind: task.kind,
            what: "single-sentence prompts",
        });
    }
    let t = template(&task.templates.single, task, "single")?;
    t.validate(Stage::Single, false)?;
    finish(
        t,
        &[("description", &task.description), ("label", &label.surface_form)],
        PromptMetadata { label_id: Some(label.label_id), ..Default::default() },
    )
}

/// First-stage pair prompt: task description only, no label.
pub fn build_pair_first_prompt(task: &TaskSpec) -> Result<PromptText, PromptError> {
    if !task.kind.is_pair() {
        return Err(PromptError::WrongKind {
            task: task.task_id.clone(),
            kind: task.kind,
            what: "sentence-pair prompts",
        });
    }
    let t = template(&task.templates.pair_first, task, "pair_first")?;
    t.validate(Stage::PairFirst, false)?;
    finish(t, &[("description", &task.description)], PromptMetadata::default())
}

pub fn build_pair_second_prompt(task: &TaskSpec, first_sentence: &str, label: &LabelSpec) -> Result<PromptText, PromptError> {
    if !task.kind.is_pair() {
        return Err(PromptError::WrongKind {
            task: task.task_id.clone(),
            kind: task.kind,
            what: "sentence-pair prompts",
        });
    }
    if first_sentence.trim().is_empty() {
        return Err(PromptError::EmptyFirstSentence);
    }
    let t = template(&task.templates.pair_second, task, "pair_second")?;
    t.validate(Stage::PairSecond, false)?;
    finish(
        t,
        &[
            ("description", &task.description),
            ("first_sentence", first_sentence),
            ("label", &label.surface_form),
        ],
        PromptMetadata { label_id: Some(label.label_id), ..Default::default() },
    )
}

/// Draws one task word uniformly with a seeded generator.
pub fn draw_task_word(words: &[String], rng_seed: u64) -> &str {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    &words[rng.gen_range(0..words.len())]
}

/// Label-conditional prompt augmented with one word drawn from the task's
/// word list.
pub fn build_kadg_prompt(task: &TaskSpec, label: &LabelSpec, rng_seed: u64) -> Result<PromptText, PromptError> {
    if task.kind.is_pair() {
        return Err(PromptError::WrongKind {
            task: task.task_id.clone(),
            kind: task.kind,
            what: "word-augmented prompts",
        });
    }
    let words = match &task.task_words {
        Some(w) if !w.is_empty() => w,
        _ => return Err(PromptError::NoTaskWords(task.task_id.clone())),
    };
    let t = template(&task.templates.kadg, task, "kadg")?;
    t.validate(Stage::Single, true)?;
    let word = draw_task_word(words, rng_seed);
    finish(
        t,
        &[
            ("description", &task.description),
            ("label", &label.surface_form),
            ("word", word),
        ],
        PromptMetadata {
            label_id: Some(label.label_id),
            kadg_word: Some(word.to_string()),
            ..Default::default()
        },
    )
}

/// Stable identifier of an exemplar, derived from its content.
pub fn exemplar_id(sample: &LabeledSample) -> String {
    let mut key = sample.text1.clone();
    key.push('\u{0}');
    key.push_str(sample.text2.as_deref().unwrap_or(""));
    key.push('\u{0}');
    key.push_str(&sample.label_id.to_string());
    hex_digest(key.as_bytes())
}

/// [`inject_few_shot_with`] in strict one-exemplar-per-label mode.
pub fn inject_few_shot(prompt: &PromptText, exemplars: &[LabeledSample], task: &TaskSpec) -> Result<PromptText, PromptError> {
    inject_few_shot_with(prompt, exemplars, task, true)
}

/// Adds an exemplar block in label order. The block goes into the
/// template's `{exemplars}` slot when there is one, otherwise before the
/// instruction. With `strict`, every label needs exactly one exemplar.
pub fn inject_few_shot_with(
    prompt: &PromptText,
    exemplars: &[LabeledSample],
    task: &TaskSpec,
    strict: bool,
) -> Result<PromptText, PromptError> {
    if exemplars.is_empty() {
        return Err(PromptError::NoExemplars);
    }
    let mut keyed = Vec::with_capacity(exemplars.len());
    for (index, ex) in exemplars.iter().enumerate() {
        let pos = task
            .label_index(ex.label_id)
            .ok_or(PromptError::UnknownExemplarLabel { index, label_id: ex.label_id })?;
        keyed.push((pos, index, ex));
    }
    keyed.sort_by_key(|&(pos, index, _)| (pos, index));
    if strict {
        for w in keyed.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(PromptError::DuplicateExemplarLabel(task.labels[w[0].0].name.clone()));
            }
        }
        for (pos, label) in task.labels.iter().enumerate() {
            if !keyed.iter().any(|k| k.0 == pos) {
                return Err(PromptError::MissingExemplarLabel(label.name.clone()));
            }
        }
    }
    let mut block = String::from("Examples:\n");
    for &(pos, _, ex) in &keyed {
        let label = &task.labels[pos].surface_form;
        match &ex.text2 {
            Some(t2) => block.push_str(&format!("- [{label}] {} / {}\n", ex.text1, t2)),
            None => block.push_str(&format!("- [{label}] {}\n", ex.text1)),
        }
    }
    let rendered = match prompt.exemplar_slot {
        Some(at) => {
            let mut r = prompt.rendered.clone();
            r.insert_str(at, &block);
            r
        }
        None => {
            block.push('\n');
            block + &prompt.rendered
        }
    };
    let mut metadata = prompt.metadata.clone();
    metadata.exemplar_ids = keyed.iter().map(|&(_, _, ex)| exemplar_id(ex)).collect();
    Ok(PromptText::new(rendered, metadata))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::Templates;

    fn label(id: u32, name: &str) -> LabelSpec {
        LabelSpec { label_id: id, name: name.into(), surface_form: name.into(), numeric_value: None }
    }

    fn sentiment() -> TaskSpec {
        TaskSpec {
            task_id: "marc".into(),
            kind: TaskKind::SingleClassification,
            description: "Amazon product reviews.".into(),
            labels: vec![label(1, "positive"), label(2, "negative")],
            task_words: Some(vec!["delivery".into(), "battery".into(), "price".into()]),
            exemplars: None,
            language: "en".into(),
            templates: Templates {
                single: Some(PromptTemplate::new("{description}\nWrite five {label} reviews.", Stage::Single)),
                kadg: Some(PromptTemplate::new("{description}\nWrite five {label} reviews about {word}.", Stage::Single)),
                ..Default::default()
            },
            max_chars: 2000,
        }
    }

    fn nli(id: &str, description: &str) -> TaskSpec {
        TaskSpec {
            task_id: id.into(),
            kind: TaskKind::PairClassification,
            description: description.into(),
            labels: vec![label(1, "entailment"), label(2, "contradiction"), label(3, "neutral")],
            task_words: None,
            exemplars: None,
            language: "en".into(),
            templates: Templates {
                pair_first: Some(PromptTemplate::new("{description}\nWrite a premise.", Stage::PairFirst)),
                pair_second: Some(PromptTemplate::new(
                    "{description}\nPremise: {first_sentence}\nWrite a hypothesis with relation {label}.",
                    Stage::PairSecond,
                )),
                ..Default::default()
            },
            max_chars: 2000,
        }
    }

    fn assert_no_placeholders(s: &str) {
        for p in PLACEHOLDERS {
            assert!(!s.contains(&format!("{{{p}}}")), "unexpanded {p} in {s:?}");
        }
    }

    #[test]
    fn single_prompt_contains_description_and_label() {
        let t = sentiment();
        let p = build_single_prompt(&t, &t.labels[0]).unwrap();
        assert!(p.rendered.contains("Amazon product reviews."));
        assert!(p.rendered.contains("positive"));
        assert_eq!(p.metadata.label_id, Some(1));
        assert_eq!(p, build_single_prompt(&t, &t.labels[0]).unwrap());
        assert_no_placeholders(&p.rendered);
    }

    #[test]
    fn single_template_without_label_is_rejected() {
        let mut t = sentiment();
        t.templates.single = Some(PromptTemplate::new("{description} write something", Stage::Single));
        assert_eq!(
            build_single_prompt(&t, &t.labels[0]).unwrap_err(),
            PromptError::MissingPlaceholder { stage: Stage::Single, name: "label" }
        );
    }

    #[test]
    fn pair_first_has_no_label() {
        let t = nli("jnli", "Natural language inference.");
        let p = build_pair_first_prompt(&t).unwrap();
        assert_eq!(p.metadata.label_id, None);
        for l in &t.labels {
            assert!(!p.rendered.contains(&l.surface_form));
        }
        let other = build_pair_first_prompt(&nli("jsick", "Compositional inference.")).unwrap();
        assert_ne!(p.digest, other.digest);
        assert!(matches!(build_pair_first_prompt(&sentiment()), Err(PromptError::WrongKind { .. })));
    }

    #[test]
    fn pair_second_inserts_first_sentence_verbatim() {
        let t = nli("jnli", "Natural language inference.");
        let p = build_pair_second_prompt(&t, "A couple walks.", &t.labels[0]).unwrap();
        assert!(p.rendered.contains("A couple walks."));
        assert!(p.rendered.contains("entailment"));
        assert_eq!(build_pair_second_prompt(&t, "  ", &t.labels[0]).unwrap_err(), PromptError::EmptyFirstSentence);
    }

    #[test]
    fn braces_in_first_sentence_are_not_expanded() {
        let t = nli("jnli", "NLI.");
        let p = build_pair_second_prompt(&t, "He typed {label} and {description}.", &t.labels[1]).unwrap();
        assert!(p.rendered.contains("He typed {label} and {description}."));
        assert_eq!(p.rendered.matches("contradiction").count(), 1);
    }

    #[test]
    fn kadg_word_is_uniform_over_seeds() {
        let t = sentiment();
        let words = t.task_words.clone().unwrap();
        let mut counts = [0usize; 3];
        for seed in 0..300 {
            let p = build_kadg_prompt(&t, &t.labels[0], seed).unwrap();
            let w = p.metadata.kadg_word.clone().unwrap();
            assert!(p.rendered.contains(&w));
            counts[words.iter().position(|x| *x == w).unwrap()] += 1;
        }
        for c in counts {
            assert!((c as f64 / 300.0 - 1.0 / 3.0).abs() <= 0.1, "{counts:?}");
        }
    }

    #[test]
    fn kadg_counts_stay_within_four_sigma_for_larger_lexicon() {
        let mut t = sentiment();
        let words: Vec<String> = (0..7).map(|i| format!("w{i}")).collect();
        t.task_words = Some(words.clone());
        let n = 2000usize;
        let mut counts = vec![0usize; words.len()];
        for seed in 0..n as u64 {
            let p = build_kadg_prompt(&t, &t.labels[1], seed).unwrap();
            let w = p.metadata.kadg_word.unwrap();
            counts[words.iter().position(|x| *x == w).unwrap()] += 1;
        }
        // 4 binomial standard deviations per word
        let k = words.len() as f64;
        let bound = 4.0 * (n as f64 * (1.0 / k) * (1.0 - 1.0 / k)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 / k).abs() <= bound);
        }
    }

    #[test]
    fn kadg_single_word_and_missing_words() {
        let mut t = sentiment();
        t.task_words = Some(vec!["battery".into()]);
        for seed in 0..20 {
            let p = build_kadg_prompt(&t, &t.labels[0], seed).unwrap();
            assert_eq!(p.metadata.kadg_word.as_deref(), Some("battery"));
        }
        t.task_words = None;
        assert!(matches!(build_kadg_prompt(&t, &t.labels[0], 0), Err(PromptError::NoTaskWords(_))));
    }

    #[test]
    fn few_shot_orders_by_label_and_prepends() {
        let t = sentiment();
        let base = build_single_prompt(&t, &t.labels[0]).unwrap();
        let ex = vec![
            LabeledSample::gold("Broke after a day.", None, 2),
            LabeledSample::gold("Works great!", None, 1),
        ];
        let p = inject_few_shot(&base, &ex, &t).unwrap();
        let a = p.rendered.find("Works great!").unwrap();
        let b = p.rendered.find("Broke after a day.").unwrap();
        let instr = p.rendered.find("Amazon product reviews.").unwrap();
        assert!(a < b && b < instr);
        assert_eq!(p.metadata.exemplar_ids.len(), 2);
        assert_eq!(p.metadata.exemplar_ids[0], exemplar_id(&ex[1]));
        assert_eq!(p.metadata.label_id, Some(1));
        assert_ne!(p.digest, base.digest);
    }

    #[test]
    fn few_shot_fills_exemplar_slot() {
        let mut t = sentiment();
        t.templates.single = Some(PromptTemplate::new("{description}\n{exemplars}Now write {label}.", Stage::Single));
        let base = build_single_prompt(&t, &t.labels[0]).unwrap();
        assert_no_placeholders(&base.rendered);
        let ex = vec![LabeledSample::gold("ok", None, 1), LabeledSample::gold("no", None, 2)];
        let p = inject_few_shot(&base, &ex, &t).unwrap();
        assert!(p.rendered.starts_with("Amazon product reviews.\nExamples:"));
    }

    #[test]
    fn few_shot_errors() {
        let t = sentiment();
        let base = build_single_prompt(&t, &t.labels[0]).unwrap();
        assert_eq!(inject_few_shot(&base, &[], &t).unwrap_err(), PromptError::NoExemplars);
        let dup = vec![LabeledSample::gold("a", None, 1), LabeledSample::gold("b", None, 1)];
        assert!(matches!(inject_few_shot(&base, &dup, &t), Err(PromptError::DuplicateExemplarLabel(_))));
        assert!(inject_few_shot_with(&base, &dup, &t, false).is_ok());
        let unknown = vec![LabeledSample::gold("a", None, 9)];
        assert!(matches!(
            inject_few_shot(&base, &unknown, &t),
            Err(PromptError::UnknownExemplarLabel { index: 0, label_id: 9 })
        ));
    }

    #[test]
    fn template_syntax_errors() {
        assert!(PromptTemplate::new("{description", Stage::Single).placeholders().is_err());
        assert!(PromptTemplate::new("{nope}", Stage::Single).placeholders().is_err());
        let t = PromptTemplate::new("{{literal}} {description} {label}", Stage::Single);
        let (r, _) = t.render(&[("description", "d"), ("label", "l")]).unwrap();
        assert_eq!(r, "{literal} d l");
    }

    #[test]
    fn word_only_allowed_for_kadg() {
        let t = PromptTemplate::new("{description} {label} {word}", Stage::Single);
        assert!(t.validate(Stage::Single, true).is_ok());
        assert!(t.validate(Stage::Single, false).is_err());
        let first = PromptTemplate::new("{description} {label}", Stage::PairFirst);
        assert!(first.validate(Stage::PairFirst, false).is_err());
    }
}
