//! Pseudonymization of roster PII before any text leaves the process.
//!
//! Matching is literal: every roster display name, email and student id is
//! replaced by the owning student's token (`S-` followed by four hex digits).
//! Names and ids match case-sensitively, emails ASCII case-insensitively.
//! Token occurrences are opaque: literals are only searched for in the
//! stretches of text between tokens, which keeps the operation idempotent.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::Path;
use std::sync::OnceLock;

use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::StudentRecord;

pub const TOKEN_PREFIX: &str = "S-";
const TOKEN_SPACE: usize = 1 << 16;

#[derive(Debug, Error)]
pub enum PrivacyError {
    #[error("duplicate student id {0:?}")]
    DuplicateStudentId(String),
    #[error("cannot allocate more than {TOKEN_SPACE} distinct tokens")]
    TooManyStudents,
    #[error("pseudonym file: {0}")]
    Io(#[from] std::io::Error),
    #[error("pseudonym file: {0}")]
    Json(#[from] serde_json::Error),
}

/// A place where a roster literal occurs in some text.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Finding {
    pub offset: usize,
    pub literal: String,
    pub student_id: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct PseudonymMap {
    /// student_id → token
    pub forward: BTreeMap<String, String>,
    /// student_id → `[display_name, email?, student_id]`
    pub pii_index: BTreeMap<String, Vec<String>>,
    #[serde(skip)]
    matcher: OnceLock<Matcher>,
}

impl Clone for PseudonymMap {
    fn clone(&self) -> Self {
        PseudonymMap {
            forward: self.forward.clone(),
            pii_index: self.pii_index.clone(),
            matcher: OnceLock::new(),
        }
    }
}

impl PartialEq for PseudonymMap {
    fn eq(&self, other: &Self) -> bool {
        self.forward == other.forward && self.pii_index == other.pii_index
    }
}

#[derive(Debug)]
struct Matcher {
    tokens: Option<AhoCorasick>,
    token_owner: Vec<String>,
    exact: Option<AhoCorasick>,
    exact_owner: Vec<(String, String)>,
    emails: Option<AhoCorasick>,
    email_owner: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy)]
struct Hit {
    start: usize,
    end: usize,
    email: bool,
    pattern: usize,
}

fn automaton(patterns: &[String], kind: MatchKind, ascii_ci: bool) -> Option<AhoCorasick> {
    if patterns.is_empty() {
        return None;
    }
    Some(
        AhoCorasickBuilder::new()
            .match_kind(kind)
            .ascii_case_insensitive(ascii_ci)
            .build(patterns)
            .expect("literal patterns always compile"),
    )
}

impl Matcher {
    fn build(map: &PseudonymMap) -> Self {
        let mut token_pats = Vec::new();
        let mut token_owner = Vec::new();
        for (student, token) in &map.forward {
            token_pats.push(token.clone());
            token_owner.push(student.clone());
        }

        // A literal shared by two students goes to the first owner in id order.
        let mut seen_exact = HashSet::new();
        let mut seen_email = HashSet::new();
        let (mut exact_pats, mut exact_owner) = (Vec::new(), Vec::new());
        let (mut email_pats, mut email_owner) = (Vec::new(), Vec::new());
        for (student, literals) in &map.pii_index {
            for literal in literals.iter().filter(|l| !l.is_empty()) {
                if is_email(literal) {
                    if seen_email.insert(literal.to_ascii_lowercase()) {
                        email_pats.push(literal.clone());
                        email_owner.push((student.clone(), literal.clone()));
                    }
                } else if seen_exact.insert(literal.clone()) {
                    exact_pats.push(literal.clone());
                    exact_owner.push((student.clone(), literal.clone()));
                }
            }
        }
        Matcher {
            tokens: automaton(&token_pats, MatchKind::LeftmostLongest, false),
            token_owner,
            exact: automaton(&exact_pats, MatchKind::Standard, false),
            exact_owner,
            emails: automaton(&email_pats, MatchKind::Standard, true),
            email_owner,
        }
    }

    /// Splits `text` into alternating (segment, Some(token owner)) pieces.
    fn segments<'t>(&self, text: &'t str) -> Vec<(&'t str, usize, Option<usize>)> {
        let mut out = Vec::new();
        let mut pos = 0;
        if let Some(tokens) = &self.tokens {
            for m in tokens.find_iter(text) {
                if m.start() > pos {
                    out.push((&text[pos..m.start()], pos, None));
                }
                out.push((&text[m.start()..m.end()], m.start(), Some(m.pattern().as_usize())));
                pos = m.end();
            }
        }
        if pos < text.len() {
            out.push((&text[pos..], pos, None));
        }
        out
    }

    /// All (possibly overlapping) literal hits inside one token-free segment.
    fn hits(&self, segment: &str) -> Vec<Hit> {
        let mut hits = Vec::new();
        if let Some(ac) = &self.exact {
            hits.extend(ac.find_overlapping_iter(segment).map(|m| Hit {
                start: m.start(),
                end: m.end(),
                email: false,
                pattern: m.pattern().as_usize(),
            }));
        }
        if let Some(ac) = &self.emails {
            hits.extend(ac.find_overlapping_iter(segment).map(|m| Hit {
                start: m.start(),
                end: m.end(),
                email: true,
                pattern: m.pattern().as_usize(),
            }));
        }
        hits.sort_by(|a, b| a.start.cmp(&b.start).then(b.end.cmp(&a.end)));
        hits
    }

    fn owner(&self, hit: &Hit) -> &(String, String) {
        if hit.email {
            &self.email_owner[hit.pattern]
        } else {
            &self.exact_owner[hit.pattern]
        }
    }
}

fn is_email(literal: &str) -> bool {
    literal.contains('@')
}

/// Builds a deterministic pseudonym map for the roster.
///
/// Tokens are drawn from a ChaCha8 stream seeded by `seed`, assigned in
/// student-id order so that roster order does not matter. A token is
/// rejected if it equals, contains, or is contained in any roster literal.
pub fn build_pseudonym_map(roster: &[StudentRecord], seed: u64) -> Result<PseudonymMap, PrivacyError> {
    let mut pii_index = BTreeMap::new();
    for student in roster {
        let mut literals = vec![student.display_name.clone()];
        if let Some(email) = student.email.as_ref().filter(|e| !e.is_empty()) {
            literals.push(email.clone());
        }
        literals.push(student.student_id.clone());
        if pii_index.insert(student.student_id.clone(), literals).is_some() {
            return Err(PrivacyError::DuplicateStudentId(student.student_id.clone()));
        }
    }
    if pii_index.len() > TOKEN_SPACE {
        return Err(PrivacyError::TooManyStudents);
    }

    let lowered: Vec<String> = pii_index
        .values()
        .flatten()
        .filter(|l| !l.is_empty())
        .map(|l| l.to_ascii_lowercase())
        .collect();
    let clashes = |token: &str| {
        let token = token.to_ascii_lowercase();
        lowered.iter().any(|l| l.contains(&token) || token.contains(l.as_str()))
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut used = BTreeSet::new();
    let mut forward = BTreeMap::new();
    for student_id in pii_index.keys() {
        let mut attempts = 0usize;
        let token = loop {
            let candidate = format!("{TOKEN_PREFIX}{:04x}", rng.gen::<u16>());
            if !used.contains(&candidate) && !clashes(&candidate) {
                break candidate;
            }
            attempts += 1;
            if attempts > 16 * TOKEN_SPACE {
                return Err(PrivacyError::TooManyStudents);
            }
        };
        used.insert(token.clone());
        forward.insert(student_id.clone(), token);
    }
    Ok(PseudonymMap {
        forward,
        pii_index,
        matcher: OnceLock::new(),
    })
}

impl PseudonymMap {
    fn matcher(&self) -> &Matcher {
        self.matcher.get_or_init(|| Matcher::build(self))
    }

    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    pub fn len(&self) -> usize {
        self.forward.len()
    }

    pub fn token_for(&self, student_id: &str) -> Option<&str> {
        self.forward.get(student_id).map(String::as_str)
    }

    pub fn display_name(&self, student_id: &str) -> Option<&str> {
        self.pii_index
            .get(student_id)
            .and_then(|l| l.first())
            .map(String::as_str)
    }

    /// Replaces every roster literal with its owner's token, longest match first.
    pub fn pseudonymize_text(&self, text: &str) -> String {
        let m = self.matcher();
        let mut out = String::with_capacity(text.len());
        for (segment, _, token) in m.segments(text) {
            if token.is_some() {
                out.push_str(segment);
                continue;
            }
            let mut pos = 0;
            for hit in m.hits(segment) {
                if hit.start < pos {
                    continue;
                }
                out.push_str(&segment[pos..hit.start]);
                let (owner, _) = m.owner(&hit);
                out.push_str(&self.forward[owner]);
                pos = hit.end;
            }
            out.push_str(&segment[pos..]);
        }
        out
    }

    /// Every place a roster literal appears outside a token. Empty means the
    /// text is safe to transmit.
    pub fn scan_for_pii(&self, text: &str) -> Vec<Finding> {
        let m = self.matcher();
        let mut findings = Vec::new();
        for (segment, base, token) in m.segments(text) {
            if token.is_some() {
                continue;
            }
            for hit in m.hits(segment) {
                let (owner, literal) = m.owner(&hit);
                findings.push(Finding {
                    offset: base + hit.start,
                    literal: literal.clone(),
                    student_id: owner.clone(),
                });
            }
        }
        findings.sort();
        findings
    }

    /// Replaces tokens with the owning student's display name.
    pub fn depseudonymize_text(&self, text: &str) -> String {
        let m = self.matcher();
        let mut out = String::with_capacity(text.len());
        for (segment, _, token) in m.segments(text) {
            match token {
                Some(i) => {
                    let owner = &m.token_owner[i];
                    out.push_str(self.display_name(owner).unwrap_or(segment));
                }
                None => out.push_str(segment),
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PrivacyError> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PrivacyError> {
        let bytes = std::fs::read(path)?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// True when every student in `roster` has a token and the same literals.
    pub fn covers(&self, roster: &[StudentRecord]) -> bool {
        roster.iter().all(|s| {
            self.forward.contains_key(&s.student_id)
                && self.display_name(&s.student_id) == Some(s.display_name.as_str())
        })
    }
}
