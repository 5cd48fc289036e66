//! Templated reasoning trajectories with embedded functional tokens.
//!
//! A trajectory is `Prompt · (transition · functional token)* · Answer`.
//! Rendering normalizes whitespace inside every payload and joins tokens
//! with single spaces, so the rendered text round-trips through the
//! whitespace tokenizer of [`Vocabulary`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{scan_functional_surfaces, FunctionalKind, TokenId, Vocabulary};

pub const ANSWER_OPEN: &str = "<answer>";
pub const ANSWER_CLOSE: &str = "</answer>";

/// Wraps `answer` in the answer envelope.
pub fn answer_envelope(answer: &str) -> String {
    format!("{ANSWER_OPEN}{}{ANSWER_CLOSE}", normalize_ws(answer))
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Versioned table of transition sentences, indexed by kind ordinal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateTable {
    pub version: u32,
    pub variants: [Vec<String>; 5],
}

const DEFAULT_TEMPLATES: &str = include_str!("../data/templates.json");

impl TemplateTable {
    /// The bundled default table.
    pub fn builtin() -> Self {
        Self::from_json(DEFAULT_TEMPLATES).expect("bundled template table is valid")
    }

    /// A table whose transitions are empty, so trajectories contain only the
    /// prompt, the functional tokens and the answer.
    pub fn bare() -> Self {
        TemplateTable {
            version: 0,
            variants: std::array::from_fn(|_| vec![String::new()]),
        }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let t: TemplateTable = serde_json::from_str(s)?;
        if t.variants.iter().any(Vec::is_empty) {
            return Err(Error::Config("every kind needs at least one template".into()));
        }
        Ok(t)
    }

    pub fn transition(&self, kind: FunctionalKind, seed: u64) -> &str {
        let v = &self.variants[kind.ordinal()];
        &v[(seed % v.len() as u64) as usize]
    }

    /// Transition text followed by the functional surface.
    pub fn render_transition(&self, kind: FunctionalKind, seed: u64) -> String {
        let lead = normalize_ws(self.transition(kind, seed));
        if lead.is_empty() {
            kind.surface().to_string()
        } else {
            format!("{lead} {}", kind.surface())
        }
    }
}

/// [`TemplateTable::render_transition`] over the bundled table.
pub fn render_transition(kind: FunctionalKind, seed: u64) -> String {
    TemplateTable::builtin().render_transition(kind, seed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Prompt(String),
    Reasoning(String),
    FunctionalToken(FunctionalKind),
    Answer(String),
}

impl Segment {
    fn text(&self) -> std::borrow::Cow<'_, str> {
        match self {
            Segment::Prompt(s) | Segment::Reasoning(s) | Segment::Answer(s) => s.as_str().into(),
            Segment::FunctionalToken(k) => k.surface().into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trajectory {
    pub segments: Vec<Segment>,
}

impl Trajectory {
    pub fn prompt(&self) -> &str {
        match &self.segments[0] {
            Segment::Prompt(p) => p,
            _ => unreachable!("first segment is always the prompt"),
        }
    }

    pub fn functional_kinds(&self) -> Vec<FunctionalKind> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::FunctionalToken(k) => Some(*k),
                _ => None,
            })
            .collect()
    }

    fn join(segments: &[Segment]) -> String {
        segments
            .iter()
            .map(Segment::text)
            .filter(|t| !t.is_empty())
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Full rendered text, prompt included.
    pub fn render(&self) -> String {
        Self::join(&self.segments)
    }

    /// Rendered text of everything after the prompt.
    pub fn render_response(&self) -> String {
        Self::join(&self.segments[1..])
    }
}

/// Builds a trajectory from a problem, an ordered list of operations and
/// the final answer.
pub fn build_trajectory(
    templates: &TemplateTable,
    problem: &str,
    ops: &[FunctionalKind],
    answer: &str,
    seed: u64,
) -> Trajectory {
    let mut segments = Vec::with_capacity(2 + 2 * ops.len());
    segments.push(Segment::Prompt(normalize_ws(problem)));
    for (i, &kind) in ops.iter().enumerate() {
        let lead = normalize_ws(templates.transition(kind, seed.wrapping_add(i as u64)));
        if !lead.is_empty() {
            segments.push(Segment::Reasoning(lead));
        }
        segments.push(Segment::FunctionalToken(kind));
    }
    segments.push(Segment::Answer(answer_envelope(answer)));
    Trajectory { segments }
}

/// Token view of the rendered response (prompt excluded).
pub fn tokenize_response(vocab: &Vocabulary, t: &Trajectory) -> Result<Vec<TokenId>> {
    vocab.encode(&t.render_response())
}

/// Token view of the whole rendered trajectory.
pub fn tokenize_trajectory(vocab: &Vocabulary, t: &Trajectory) -> Result<Vec<TokenId>> {
    vocab.encode(&t.render())
}

/// Every distinct whitespace token of `texts`, in first-seen order.
pub fn lexicon<'a>(texts: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::new();
    for t in texts {
        for w in t.split_whitespace() {
            if FunctionalKind::from_surface(w).is_none() && seen.insert(w) {
                out.push(w.to_string());
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub prompt: String,
    pub trajectory_text: String,
    pub functional_kinds: Vec<FunctionalKind>,
    pub gold_answer: String,
}

impl DatasetRecord {
    pub fn from_trajectory(id: &str, t: &Trajectory, gold_answer: &str) -> Self {
        DatasetRecord {
            id: id.to_string(),
            prompt: t.prompt().to_string(),
            trajectory_text: t.render_response(),
            functional_kinds: t.functional_kinds(),
            gold_answer: gold_answer.to_string(),
        }
    }

    /// Checks that the recorded kinds match a surface scan of the text.
    pub fn validate(&self) -> Result<()> {
        if scan_functional_surfaces(&self.trajectory_text) != self.functional_kinds {
            return Err(Error::Config(format!(
                "record `{}`: functional_kinds disagree with trajectory_text",
                self.id
            )));
        }
        Ok(())
    }
}

/// Parses a line-delimited dataset file, validating each record.
pub fn read_dataset(input: &str) -> Result<Vec<DatasetRecord>> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: DatasetRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(n + 1, e.to_string()))?;
        r.validate().map_err(|e| Error::parse(n + 1, e.to_string()))?;
        out.push(r);
    }
    Ok(out)
}

/// Which positions a cross-entropy loss averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CeMask {
    AllTokens,
    FunctionalOnly,
}

/// Mean negative log-probability over the masked positions.
///
/// `functional` flags which positions hold functional tokens; it is only
/// consulted for [`CeMask::FunctionalOnly`].
pub fn cross_entropy_loss(logprobs: &[f64], functional: &[bool], mask: CeMask) -> Result<f64> {
    if logprobs.len() != functional.len() {
        return Err(Error::LengthMismatch {
            what: "functional flags",
            expected: logprobs.len(),
            got: functional.len(),
        });
    }
    let (sum, n) = logprobs
        .iter()
        .zip(functional)
        .filter(|(_, &f)| mask == CeMask::AllTokens || f)
        .fold((0.0, 0usize), |(s, n), (lp, _)| (s - lp, n + 1));
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}
