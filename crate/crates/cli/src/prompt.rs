//! Free-text prompt normalisation.
//!
//! A prompt is a list of clauses separated by commas, semicolons or "and".
//! Each clause names one feature and one level, e.g. "many parks" or
//! "low sequestered carbon". Phrases outside the table are rejected.

use qdtile::dataset::Level;
use qdtile::features::{FEATURE_COUNT, FEATURE_NAMES};

/// Level words, longest first so "lots of" wins over "lots".
const LEVEL_WORDS: &[(&str, Level)] = &[
    ("a lot of", Level::High),
    ("lots of", Level::High),
    ("plenty of", Level::High),
    ("moderate", Level::Mid),
    ("average", Level::Mid),
    ("medium", Level::Mid),
    ("little", Level::Low),
    ("fewer", Level::Low),
    ("small", Level::Low),
    ("large", Level::High),
    ("great", Level::High),
    ("high", Level::High),
    ("many", Level::High),
    ("much", Level::High),
    ("more", Level::High),
    ("big", Level::High),
    ("low", Level::Low),
    ("few", Level::Low),
    ("less", Level::Low),
    ("mid", Level::Mid),
    ("some", Level::Mid),
];

/// Feature phrases, longest first.
const FEATURE_WORDS: &[(&str, usize)] = &[
    ("number of parks", 0),
    ("largest park", 1),
    ("park size", 1),
    ("sequestered carbon", 3),
    ("carbon sequestration", 3),
    ("total units", 2),
    ("housing units", 2),
    ("privacy", 4),
    ("parks", 0),
    ("units", 2),
    ("carbon", 3),
    ("park", 1),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptError {
    pub clause: String,
    pub message: String,
}

impl std::fmt::Display for PromptError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cannot read {:?}: {}", self.clause, self.message)
    }
}

impl std::error::Error for PromptError {}

fn suggestions() -> String {
    let canonical: Vec<String> = FEATURE_NAMES.iter().map(|n| format!("\"low|mid|high {n}\"")).collect();
    format!("try one of {}", canonical.join(", "))
}

fn strip_word<'a>(s: &'a str, word: &str) -> Option<&'a str> {
    let rest = s.strip_prefix(word)?;
    (rest.is_empty() || rest.starts_with(' ')).then(|| rest.trim_start())
}

fn parse_clause(clause: &str) -> Result<(usize, Level), PromptError> {
    let err = |message: String| PromptError {
        clause: clause.to_string(),
        message,
    };
    let mut rest = clause;
    for art in ["a ", "an ", "the "] {
        if let Some(r) = rest.strip_prefix(art) {
            rest = r;
        }
    }
    let (level, rest) = LEVEL_WORDS
        .iter()
        .find_map(|(w, l)| strip_word(rest, w).map(|r| (*l, r)))
        .ok_or_else(|| err(format!("no level word (low/mid/high, few/some/many); {}", suggestions())))?;
    let feature = FEATURE_WORDS
        .iter()
        .find_map(|(w, f)| (rest == *w).then_some(*f))
        .ok_or_else(|| err(format!("unknown feature {rest:?}; {}", suggestions())))?;
    Ok((feature, level))
}

/// Parses a prompt into per-feature levels; unmentioned features are `None`.
pub fn normalize_prompt(prompt: &str) -> Result<[Option<Level>; FEATURE_COUNT], PromptError> {
    let lower = prompt.to_lowercase();
    let mut out = [None; FEATURE_COUNT];
    for part in lower.split([',', ';']) {
        for clause in part.split(" and ") {
            let clause = clause.split_whitespace().collect::<Vec<_>>().join(" ");
            if clause.is_empty() {
                continue;
            }
            let (f, l) = parse_clause(&clause)?;
            if out[f].is_some_and(|prev| prev != l) {
                return Err(PromptError {
                    clause,
                    message: format!("conflicting levels for {}", FEATURE_NAMES[f]),
                });
            }
            out[f] = Some(l);
        }
    }
    Ok(out)
}
