//! Partitioned token space.
//!
//! A [`Vocabulary`] is the disjoint union of ordinary text tokens, special
//! tokens and the five functional tokens. Ids are dense and assigned in
//! registration order: text first, then specials, then the functional tokens
//! in the fixed order `Manip, Shape, Line, Arrow, Text`.
//!
//! Surfaces are whitespace-free strings; the toy tokenizer used throughout
//! the crate is a plain whitespace split.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenId(pub usize);

impl TokenId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for TokenId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenClass {
    Text,
    Special,
    Functional,
}

impl TokenClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenClass::Text => "text",
            TokenClass::Special => "special",
            TokenClass::Functional => "functional",
        }
    }
}

impl FromStr for TokenClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(TokenClass::Text),
            "special" => Ok(TokenClass::Special),
            "functional" => Ok(TokenClass::Functional),
            other => Err(Error::parse(0, format!("unknown token class `{other}`"))),
        }
    }
}

/// The five internalized visual operations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FunctionalKind {
    Manip,
    Shape,
    Line,
    Arrow,
    Text,
}

impl FunctionalKind {
    /// All kinds in vocabulary order.
    pub const ALL: [FunctionalKind; 5] = [
        FunctionalKind::Manip,
        FunctionalKind::Shape,
        FunctionalKind::Line,
        FunctionalKind::Arrow,
        FunctionalKind::Text,
    ];

    pub fn surface(self) -> &'static str {
        match self {
            FunctionalKind::Manip => "<|Manip|>",
            FunctionalKind::Shape => "<|Shape|>",
            FunctionalKind::Line => "<|Line|>",
            FunctionalKind::Arrow => "<|Arrow|>",
            FunctionalKind::Text => "<|Text|>",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionalKind::Manip => "Manip",
            FunctionalKind::Shape => "Shape",
            FunctionalKind::Line => "Line",
            FunctionalKind::Arrow => "Arrow",
            FunctionalKind::Text => "Text",
        }
    }

    /// Position of this kind within the functional partition.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_surface(surface: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.surface() == surface)
    }
}

impl fmt::Display for FunctionalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s || k.surface() == s)
            .ok_or_else(|| Error::UnknownSurface(s.to_string()))
    }
}

/// Count of functional surfaces among the whitespace tokens of `text`.
pub fn count_functional_surfaces(text: &str) -> usize {
    text.split_whitespace()
        .filter(|w| FunctionalKind::from_surface(w).is_some())
        .count()
}

/// Functional kinds in order of appearance among the whitespace tokens of `text`.
pub fn scan_functional_surfaces(text: &str) -> Vec<FunctionalKind> {
    text.split_whitespace()
        .filter_map(FunctionalKind::from_surface)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    surfaces: Vec<String>,
    n_text: usize,
    n_special: usize,
    lookup: HashMap<String, TokenId>,
}

fn validate_surface(s: &str) -> Result<()> {
    if s.is_empty() || s.chars().any(char::is_whitespace) {
        return Err(Error::InvalidSurface(s.to_string()));
    }
    Ok(())
}

impl Vocabulary {
    /// Builds a vocabulary from text and special surfaces, appending the five
    /// functional tokens after the specials.
    pub fn build<S: AsRef<str>>(text_surfaces: &[S], special_surfaces: &[S]) -> Result<Self> {
        if text_surfaces.is_empty() {
            return Err(Error::EmptyText);
        }
        let mut surfaces = Vec::with_capacity(text_surfaces.len() + special_surfaces.len() + 5);
        let mut lookup = HashMap::new();
        let functional = FunctionalKind::ALL.iter().map(|k| k.surface());
        let all = text_surfaces
            .iter()
            .map(AsRef::as_ref)
            .chain(special_surfaces.iter().map(AsRef::as_ref));
        for s in all {
            validate_surface(s)?;
            if FunctionalKind::from_surface(s).is_some() || lookup.contains_key(s) {
                return Err(Error::DuplicateSurface(s.to_string()));
            }
            lookup.insert(s.to_string(), TokenId(surfaces.len()));
            surfaces.push(s.to_string());
        }
        for s in functional {
            lookup.insert(s.to_string(), TokenId(surfaces.len()));
            surfaces.push(s.to_string());
        }
        Ok(Vocabulary {
            surfaces,
            n_text: text_surfaces.len(),
            n_special: special_surfaces.len(),
            lookup,
        })
    }

    pub fn len(&self) -> usize {
        self.surfaces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.surfaces.is_empty()
    }

    pub fn text_len(&self) -> usize {
        self.n_text
    }

    pub fn special_len(&self) -> usize {
        self.n_special
    }

    fn check(&self, id: TokenId) -> Result<()> {
        if id.0 < self.len() {
            Ok(())
        } else {
            Err(Error::OutOfRange {
                id: id.0,
                size: self.len(),
            })
        }
    }

    pub fn classify(&self, id: TokenId) -> Result<TokenClass> {
        self.check(id)?;
        Ok(if id.0 < self.n_text {
            TokenClass::Text
        } else if id.0 < self.n_text + self.n_special {
            TokenClass::Special
        } else {
            TokenClass::Functional
        })
    }

    pub fn is_functional(&self, id: TokenId) -> bool {
        id.0 >= self.n_text + self.n_special && id.0 < self.len()
    }

    /// Functional kind of `id`, if it is a functional token.
    pub fn kind_of(&self, id: TokenId) -> Option<FunctionalKind> {
        if self.is_functional(id) {
            Some(FunctionalKind::ALL[id.0 - self.n_text - self.n_special])
        } else {
            None
        }
    }

    pub fn functional_id(&self, kind: FunctionalKind) -> TokenId {
        TokenId(self.n_text + self.n_special + kind.ordinal())
    }

    pub fn functional_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        FunctionalKind::ALL.into_iter().map(|k| self.functional_id(k))
    }

    pub fn id(&self, surface: &str) -> Result<TokenId> {
        self.lookup
            .get(surface)
            .copied()
            .ok_or_else(|| Error::UnknownSurface(surface.to_string()))
    }

    pub fn surface(&self, id: TokenId) -> Result<&str> {
        self.check(id)?;
        Ok(&self.surfaces[id.0])
    }

    /// Positions in `seq` holding functional tokens, strictly increasing.
    pub fn functional_positions(&self, seq: &[TokenId]) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        for (t, &id) in seq.iter().enumerate() {
            if self.classify(id)? == TokenClass::Functional {
                out.push(t);
            }
        }
        Ok(out)
    }

    /// Whitespace tokenization against the registered surfaces.
    pub fn encode(&self, text: &str) -> Result<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Joins surfaces with single spaces.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        let mut out = String::new();
        for (i, &id) in ids.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.surface(id)?);
        }
        Ok(out)
    }

    /// Serializes as one `surface<TAB>class` line per token, in id order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.surfaces.iter().enumerate() {
            let class = self.classify(TokenId(i)).expect("in range");
            out.push_str(s);
            out.push('\t');
            out.push_str(class.as_str());
            out.push('\n');
        }
        out
    }

    /// Parses the format written by [`Vocabulary::to_tsv`].
    ///
    /// Text lines must precede special lines, and the file must end with the
    /// five functional tokens in canonical order.
    pub fn from_tsv(input: &str) -> Result<Self> {
        let mut text = Vec::new();
        let mut special = Vec::new();
        let mut functional = Vec::new();
        for (n, line) in input.lines().enumerate() {
            let line_no = n + 1;
            if line.is_empty() {
                continue;
            }
            let (surface, class) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(line_no, "expected `surface<TAB>class`"))?;
            let class: TokenClass = class.parse().map_err(|_| {
                Error::parse(line_no, format!("unknown token class `{class}`"))
            })?;
            match class {
                TokenClass::Text if special.is_empty() && functional.is_empty() => {
                    text.push(surface)
                }
                TokenClass::Special if functional.is_empty() => special.push(surface),
                TokenClass::Functional => functional.push(surface),
                _ => return Err(Error::parse(line_no, "partitions out of order")),
            }
        }
        let canonical: Vec<&str> = FunctionalKind::ALL.iter().map(|k| k.surface()).collect();
        if functional != canonical {
            return Err(Error::parse(
                0,
                "functional partition must be exactly the five canonical tokens in order",
            ));
        }
        Vocabulary::build(&text, &special)
    }
}
