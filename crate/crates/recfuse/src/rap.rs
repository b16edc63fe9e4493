//! Prompt assembly: a retrieved-items section, a most-recent-items section,
//! an injection placeholder sentence, and the binary question. Template
//! wording lives in a JSON file shipped with the crate so tests can pin
//! bytes while the strings stay editable.

use crate::dataset::Sample;
use crate::kb::{KbError, KnowledgeBase};
use crate::text::{split_tokens, PLACEHOLDER_TOKEN};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RapError {
    #[error("sample has empty history")]
    EmptyHistory,
    #[error("template file: {0}")]
    Template(#[from] serde_json::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Kb(#[from] KbError),
}

/// Link-prompt wording. `{user_features}`, `{title}`, `{rating}` are the
/// only substitution slots.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptTemplates {
    pub preamble: String,
    pub retrieved_header: String,
    pub recent_header: String,
    pub line_with_rating: String,
    pub line_without_rating: String,
    pub injection_sentence: String,
    pub question: String,
    pub answer_yes: String,
    pub answer_no: String,
}

impl PromptTemplates {
    pub fn shipped() -> Self {
        serde_json::from_str(include_str!("../templates/default.json"))
            .expect("shipped template file is valid")
    }

    pub fn from_file<P: AsRef<Path>>(path: P) -> Result<Self, RapError> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A tokenizable prompt with at most one injection slot and its gold answer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RapPrompt {
    pub text: String,
    /// Token position of the placeholder; `None` in plain mode.
    pub placeholder_index: Option<usize>,
    /// Token index where the question segment begins; truncation must never
    /// reach past it.
    #[serde(default)]
    pub question_start: usize,
    pub answer: String,
    pub retrieved_ids: Vec<String>,
    pub recent_ids: Vec<String>,
    /// Sample identifier: "user/target/target_ts".
    pub meta: String,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    Rap,
    Plain,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PromptConfig {
    pub mode: PromptMode,
    pub k_ret: usize,
    pub k_rec: usize,
    /// When false, history lines carry titles only; numerical ratings are
    /// left to the expert network.
    pub include_ratings: bool,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            mode: PromptMode::Rap,
            k_ret: 15,
            k_rec: 15,
            include_ratings: true,
        }
    }
}

fn render_user_features(sample: &Sample) -> String {
    if sample.user.features.is_empty() {
        return "unknown".to_string();
    }
    sample
        .user
        .features
        .iter()
        .map(|(f, v)| format!("{f} {v}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn render_line(t: &PromptTemplates, title: &str, rating: u8, include_rating: bool) -> String {
    if include_rating {
        t.line_with_rating
            .replace("{title}", title)
            .replace("{rating}", &rating.to_string())
    } else {
        t.line_without_rating.replace("{title}", title)
    }
}

fn section(header: &str, lines: &[String]) -> String {
    format!("{header} {}.", lines.join("; "))
}

/// History lines for an ordered id selection, chronological within the
/// section. Ratings come from the most recent occurrence of each item.
fn lines_for_ids(
    sample: &Sample,
    ids: &[String],
    t: &PromptTemplates,
    include_ratings: bool,
) -> Vec<String> {
    let mut out = Vec::with_capacity(ids.len());
    for id in ids {
        let ev = sample
            .history
            .iter()
            .rev()
            .find(|h| &h.item.item_id == id)
            .expect("selected id comes from the history");
        out.push(render_line(t, &ev.item.title, ev.rating, include_ratings));
    }
    out
}

/// Order a retrieved id set chronologically by each id's most recent
/// position in the history.
fn chronological(sample: &Sample, mut ids: Vec<String>) -> Vec<String> {
    let pos = |id: &str| {
        sample
            .history
            .iter()
            .rposition(|h| h.item.item_id == id)
            .unwrap_or(0)
    };
    ids.sort_by_key(|id| pos(id));
    ids
}

fn answer_for(t: &PromptTemplates, label: u8) -> String {
    if label == 1 {
        t.answer_yes.clone()
    } else {
        t.answer_no.clone()
    }
}

fn meta_for(sample: &Sample) -> String {
    format!(
        "{}/{}/{}",
        sample.user.user_id, sample.target.item_id, sample.target_ts
    )
}

/// Retrieval section + recent section + placeholder sentence + question.
pub fn build_rap_prompt(
    sample: &Sample,
    kb: &KnowledgeBase,
    cfg: &PromptConfig,
    t: &PromptTemplates,
) -> Result<RapPrompt, RapError> {
    if sample.history.is_empty() {
        return Err(RapError::EmptyHistory);
    }
    let history_ids: Vec<String> = sample
        .history
        .iter()
        .map(|h| h.item.item_id.clone())
        .collect();
    let retrieved = kb.retrieve_topk(&sample.target.item_id, &history_ids, cfg.k_ret)?;
    let retrieved_ids = chronological(sample, retrieved.into_iter().map(|(id, _)| id).collect());

    let recent_ids: Vec<String> = sample
        .recent_history(cfg.k_rec)
        .iter()
        .map(|h| h.item.item_id.clone())
        .collect();

    let mut segments = vec![t.preamble.replace("{user_features}", &render_user_features(sample))];
    segments.push(section(
        &t.retrieved_header,
        &lines_for_ids(sample, &retrieved_ids, t, cfg.include_ratings),
    ));
    segments.push(section(
        &t.recent_header,
        &lines_for_ids(sample, &recent_ids, t, cfg.include_ratings),
    ));
    segments.push(t.injection_sentence.clone());
    let question = t.question.replace("{title}", &sample.target.title);
    let q_tokens = split_tokens(&question).len();
    segments.push(question);
    let text = segments.join(" ");

    let tokens = split_tokens(&text);
    let placeholder_index = tokens.iter().position(|x| x == PLACEHOLDER_TOKEN);
    debug_assert_eq!(
        tokens.iter().filter(|x| *x == PLACEHOLDER_TOKEN).count(),
        1
    );

    Ok(RapPrompt {
        text,
        placeholder_index,
        question_start: tokens.len() - q_tokens,
        answer: answer_for(t, sample.label),
        retrieved_ids,
        recent_ids,
        meta: meta_for(sample),
        label: sample.label,
    })
}

/// Retrieval-only prompt with no placeholder.
pub fn build_plain_prompt(
    sample: &Sample,
    kb: &KnowledgeBase,
    k: usize,
    include_ratings: bool,
    t: &PromptTemplates,
) -> Result<RapPrompt, RapError> {
    if sample.history.is_empty() {
        return Err(RapError::EmptyHistory);
    }
    let history_ids: Vec<String> = sample
        .history
        .iter()
        .map(|h| h.item.item_id.clone())
        .collect();
    let retrieved = kb.retrieve_topk(&sample.target.item_id, &history_ids, k)?;
    let retrieved_ids = chronological(sample, retrieved.into_iter().map(|(id, _)| id).collect());

    let mut segments = vec![t.preamble.replace("{user_features}", &render_user_features(sample))];
    segments.push(section(
        &t.retrieved_header,
        &lines_for_ids(sample, &retrieved_ids, t, include_ratings),
    ));
    let question = t.question.replace("{title}", &sample.target.title);
    let q_tokens = split_tokens(&question).len();
    segments.push(question);
    let text = segments.join(" ");
    let total_tokens = split_tokens(&text).len();

    Ok(RapPrompt {
        text,
        placeholder_index: None,
        question_start: total_tokens - q_tokens,
        answer: answer_for(t, sample.label),
        retrieved_ids,
        recent_ids: Vec::new(),
        meta: meta_for(sample),
        label: sample.label,
    })
}

pub fn build_prompt(
    sample: &Sample,
    kb: &KnowledgeBase,
    cfg: &PromptConfig,
    t: &PromptTemplates,
) -> Result<RapPrompt, RapError> {
    match cfg.mode {
        PromptMode::Rap => build_rap_prompt(sample, kb, cfg, t),
        PromptMode::Plain => build_plain_prompt(sample, kb, cfg.k_ret, cfg.include_ratings, t),
    }
}

/// Token count under the whole-word splitter.
pub fn prompt_token_length(text: &str) -> usize {
    split_tokens(text).len()
}

pub fn write_prompts_jsonl<P: AsRef<Path>>(path: P, prompts: &[RapPrompt]) -> Result<(), RapError> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in prompts {
        serde_json::to_writer(&mut f, p)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_prompts_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<RapPrompt>, RapError> {
    use std::io::BufRead;
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}
