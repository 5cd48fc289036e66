//! Lexical extraction of visual operations from image-construction code.
//!
//! Matching is lexical, not syntactic. A call pattern matches its qualified
//! name exactly, followed by optional whitespace and `(`; the two
//! `add_patch` patterns additionally require the named constructor (with an
//! optional qualifier, e.g. `patches.Circle`) as the first argument. The
//! slice pattern matches `identifier[expr:expr, expr:expr]`.
//!
//! Every pattern must start at an identifier boundary, so `mycv2.line(` is
//! not a `cv2.line` call. Comments and string literals are not stripped.
//! Among candidates starting at the same byte the longest wins, then table
//! order; the scan resumes after the chosen match, so matches never overlap.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::FunctionalKind;

#[derive(Debug, Clone, Copy)]
enum Matcher {
    Call {
        name: &'static str,
        first_arg_ctor: Option<&'static str>,
    },
    Slice2d,
}

#[derive(Debug, Clone, Copy)]
pub struct CodePattern {
    pub id: &'static str,
    pub kind: FunctionalKind,
    matcher: Matcher,
}

const fn call(id: &'static str, kind: FunctionalKind) -> CodePattern {
    CodePattern {
        id,
        kind,
        matcher: Matcher::Call {
            name: id,
            first_arg_ctor: None,
        },
    }
}

/// Identifier of the 2-D slice pattern.
pub const SLICE_PATTERN_ID: &str = "img[y1:y2, x1:x2]";

use FunctionalKind as K;

/// The code-operation table, in table order.
pub static PATTERNS: [CodePattern; 23] = [
    call("np.pad", K::Manip),
    call("cv2.blur", K::Manip),
    call("cv2.GaussianBlur", K::Manip),
    call("scipy.signal.convolve", K::Manip),
    call("cv2.filter2D", K::Manip),
    call("plt.plot", K::Line),
    call("ax.plot", K::Line),
    call("cv2.line", K::Line),
    call("plt.arrow", K::Arrow),
    call("ax.arrow", K::Arrow),
    call("cv2.arrowedLine", K::Arrow),
    call("plt.fill", K::Shape),
    CodePattern {
        id: "ax.add_patch(Circle)",
        kind: K::Shape,
        matcher: Matcher::Call {
            name: "ax.add_patch",
            first_arg_ctor: Some("Circle"),
        },
    },
    CodePattern {
        id: "ax.add_patch(Rectangle)",
        kind: K::Shape,
        matcher: Matcher::Call {
            name: "ax.add_patch",
            first_arg_ctor: Some("Rectangle"),
        },
    },
    call("cv2.rectangle", K::Shape),
    call("cv2.polylines", K::Shape),
    CodePattern {
        id: SLICE_PATTERN_ID,
        kind: K::Shape,
        matcher: Matcher::Slice2d,
    },
    call("PIL.Image.crop", K::Shape),
    call("cv2.resize", K::Shape),
    call("torchvision.transforms.Resize", K::Shape),
    call("plt.text", K::Text),
    call("ax.text", K::Text),
    call("cv2.putText", K::Text),
];

/// Upper bound on the bytes a single slice expression may span.
const MAX_SLICE_BYTES: usize = 256;

/// Kind for a known pattern id.
pub fn map_operation(pattern_id: &str) -> Result<FunctionalKind> {
    PATTERNS
        .iter()
        .find(|p| p.id == pattern_id)
        .map(|p| p.kind)
        .ok_or_else(|| Error::UnknownPattern(pattern_id.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeOperation {
    pub pattern_id: String,
    /// Byte range `[start, end)` into the scanned snippet.
    pub source_span: (usize, usize),
    pub mapped_kind: FunctionalKind,
}

#[inline]
fn is_ident_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn skip_ws(s: &[u8], mut i: usize) -> usize {
    while i < s.len() && s[i].is_ascii_whitespace() {
        i += 1;
    }
    i
}

/// Parses a dotted identifier chain starting at `i`, returning its end and
/// the final segment's start.
fn dotted_ident(s: &[u8], i: usize) -> Option<(usize, usize)> {
    let mut j = i;
    loop {
        if j >= s.len() || !(s[j].is_ascii_alphabetic() || s[j] == b'_') {
            return None;
        }
        let last_start = j;
        while j < s.len() && is_ident_byte(s[j]) {
            j += 1;
        }
        if j + 1 < s.len() && s[j] == b'.' && (s[j + 1].is_ascii_alphabetic() || s[j + 1] == b'_') {
            j += 1;
            continue;
        }
        return Some((j, last_start));
    }
}

fn match_call(s: &[u8], i: usize, name: &str, ctor: Option<&str>) -> Option<usize> {
    let name = name.as_bytes();
    if !s[i..].starts_with(name) {
        return None;
    }
    let mut j = skip_ws(s, i + name.len());
    if s.get(j) != Some(&b'(') {
        return None;
    }
    j += 1;
    if let Some(ctor) = ctor {
        j = skip_ws(s, j);
        let (end, last) = dotted_ident(s, j)?;
        if &s[last..end] != ctor.as_bytes() {
            return None;
        }
        j = skip_ws(s, end);
        if s.get(j) != Some(&b'(') {
            return None;
        }
        j += 1;
    }
    Some(j)
}

/// Scans one slice component up to `stop` at bracket depth zero. Returns the
/// index of the stop byte when the component is non-blank.
fn slice_component(s: &[u8], start: usize, limit: usize, stop: u8) -> Option<usize> {
    let mut depth = 0usize;
    let mut j = start;
    while j < limit {
        let b = s[j];
        match b {
            b'\n' => return None,
            b'(' | b'[' | b'{' => depth += 1,
            b')' | b']' | b'}' if depth > 0 => depth -= 1,
            _ if depth == 0 && b == stop => {
                return if s[start..j].iter().all(u8::is_ascii_whitespace) {
                    None
                } else {
                    Some(j)
                };
            }
            b':' | b',' | b')' | b']' | b'}' if depth == 0 => return None,
            _ => {}
        }
        j += 1;
    }
    None
}

fn match_slice(s: &[u8], i: usize) -> Option<usize> {
    if !(s[i].is_ascii_alphabetic() || s[i] == b'_') {
        return None;
    }
    let mut j = i;
    while j < s.len() && is_ident_byte(s[j]) {
        j += 1;
    }
    j = skip_ws(s, j);
    if s.get(j) != Some(&b'[') {
        return None;
    }
    let limit = s.len().min(j + MAX_SLICE_BYTES);
    let mut k = j + 1;
    for stop in *b":,:]" {
        k = slice_component(s, k, limit, stop)? + 1;
    }
    Some(k)
}

fn match_at(s: &[u8], i: usize, p: &CodePattern) -> Option<usize> {
    match p.matcher {
        Matcher::Call {
            name,
            first_arg_ctor,
        } => match_call(s, i, name, first_arg_ctor),
        Matcher::Slice2d => match_slice(s, i),
    }
}

/// Extracts operations from `code` in source order.
pub fn scan_snippet(code: &str) -> Vec<CodeOperation> {
    let s = code.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < s.len() {
        let at_boundary = i == 0 || !is_ident_byte(s[i - 1]);
        if !at_boundary || !(s[i].is_ascii_alphabetic() || s[i] == b'_') {
            i += 1;
            continue;
        }
        let mut best: Option<(usize, &CodePattern)> = None;
        for p in PATTERNS.iter() {
            if let Some(end) = match_at(s, i, p) {
                if best.is_none_or(|(e, _)| end > e) {
                    best = Some((end, p));
                }
            }
        }
        match best {
            Some((end, p)) => {
                out.push(CodeOperation {
                    pattern_id: p.id.to_string(),
                    source_span: (i, end),
                    mapped_kind: p.kind,
                });
                i = end;
            }
            None => i += 1,
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceRecord {
    pub id: String,
    pub problem_text: String,
    pub code: String,
    pub answer: String,
}

/// A retained record with its extracted operation kinds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedRecord {
    pub id: String,
    pub problem_text: String,
    pub code: String,
    pub answer: String,
    pub ops: Vec<FunctionalKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    EmptyId,
    DuplicateId,
    TooFewOperations,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub total_records: usize,
    pub retained: usize,
    pub dropped: usize,
    pub drop_reasons: BTreeMap<DropReason, usize>,
    pub per_kind: BTreeMap<FunctionalKind, usize>,
}

/// Extracts operations from every record and keeps those with at least
/// `min_ops` operations. Output order follows input order.
pub fn parse_corpus(
    records: &[SourceRecord],
    min_ops: usize,
) -> Result<(Vec<ParsedRecord>, ExtractionReport)> {
    if min_ops == 0 {
        return Err(Error::Config("min_ops must be at least 1".into()));
    }
    let mut report = ExtractionReport {
        total_records: records.len(),
        per_kind: FunctionalKind::ALL.iter().map(|&k| (k, 0)).collect(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut retained = Vec::new();
    for r in records {
        let reason = if r.id.is_empty() {
            Some(DropReason::EmptyId)
        } else if !seen.insert(r.id.as_str()) {
            Some(DropReason::DuplicateId)
        } else {
            None
        };
        let ops: Vec<FunctionalKind> = match reason {
            Some(_) => Vec::new(),
            None => scan_snippet(&r.code).into_iter().map(|o| o.mapped_kind).collect(),
        };
        let reason = reason.or((ops.len() < min_ops).then_some(DropReason::TooFewOperations));
        if let Some(reason) = reason {
            report.dropped += 1;
            *report.drop_reasons.entry(reason).or_default() += 1;
            continue;
        }
        for &k in &ops {
            *report.per_kind.entry(k).or_default() += 1;
        }
        report.retained += 1;
        retained.push(ParsedRecord {
            id: r.id.clone(),
            problem_text: r.problem_text.clone(),
            code: r.code.clone(),
            answer: r.answer.clone(),
            ops,
        });
    }
    Ok((retained, report))
}

/// Parses one line-delimited corpus record.
pub fn parse_source_line(line: &str, line_no: usize) -> Result<SourceRecord> {
    serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))
}

/// Parses a line-delimited corpus, skipping blank lines.
pub fn read_corpus(input: &str) -> Result<Vec<SourceRecord>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse_source_line(l, n + 1))
        .collect()
}

/// Parses the line-delimited output of [`parse_corpus`].
pub fn read_parsed_corpus(input: &str) -> Result<Vec<ParsedRecord>> {
    input
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(n + 1, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(code: &str) -> Vec<FunctionalKind> {
        scan_snippet(code).into_iter().map(|o| o.mapped_kind).collect()
    }

    #[test]
    fn single_line_call() {
        let ops = scan_snippet("cv2.line(img, p1, p2)");
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].pattern_id, "cv2.line");
        assert_eq!(ops[0].mapped_kind, K::Line);
        assert_eq!(ops[0].source_span, (0, 9));
    }

    #[test]
    fn multi_pattern_order() {
        assert_eq!(
            kinds("ax.add_patch(Circle(...))\nplt.text(1,2,'h')"),
            vec![K::Shape, K::Text]
        );
        assert!(kinds("print('hello')").is_empty());
    }

    #[test]
    fn table_lookup() {
        assert_eq!(map_operation("cv2.GaussianBlur").unwrap(), K::Manip);
        assert_eq!(map_operation("plt.arrow").unwrap(), K::Arrow);
        assert_eq!(map_operation(SLICE_PATTERN_ID).unwrap(), K::Shape);
        assert!(matches!(map_operation("cv2.imshow"), Err(Error::UnknownPattern(_))));
        let count = |k| PATTERNS.iter().filter(|p| p.kind == k).count();
        assert_eq!(
            [K::Manip, K::Line, K::Arrow, K::Shape, K::Text].map(count),
            [5, 3, 3, 9, 3]
        );
    }

    #[test]
    fn boundaries_and_lookalikes() {
        assert!(kinds("mycv2.line(a, b, c)").is_empty());
        assert!(kinds("cv2.lines(a)").is_empty());
        assert!(kinds("scipy.signal.convolve2d(a, k)").is_empty());
        assert_eq!(kinds("x = cv2.line (img, a, b)"), vec![K::Line]);
        assert_eq!(kinds("# cv2.blur(img, (3, 3))"), vec![K::Manip]);
        assert!(kinds("ax.add_patch(Polygon(pts))").is_empty());
        assert_eq!(kinds("ax.add_patch(patches.Rectangle((0,0),1,1))"), vec![K::Shape]);
    }

    #[test]
    fn slice_forms() {
        assert_eq!(kinds("crop = img[y1:y2, x1:x2]"), vec![K::Shape]);
        assert_eq!(kinds("a[f(1, 2):3, b[0]:c]"), vec![K::Shape]);
        assert!(kinds("img[:, 1:2]").is_empty());
        assert!(kinds("img[1:2]").is_empty());
        assert!(kinds("img[1:2, 3:4, 5:6]").is_empty());
        assert!(kinds("d['a:b', 'c:d']").len() <= 1);
        let ops = scan_snippet("out = cv2.resize(img[0:10, 0:10], (5, 5))");
        let ids: Vec<&str> = ops.iter().map(|o| o.pattern_id.as_str()).collect();
        assert_eq!(ids, vec!["cv2.resize", SLICE_PATTERN_ID]);
    }

    #[test]
    fn longest_match_wins() {
        let ops = scan_snippet("ax.add_patch(Circle((1, 2), 3))");
        assert_eq!(ops.len(), 1);
        assert_eq!(ops[0].pattern_id, "ax.add_patch(Circle)");
    }

    #[test]
    fn corpus_counts() {
        let rec = |id: &str, code: &str| SourceRecord {
            id: id.into(),
            problem_text: "p".into(),
            code: code.into(),
            answer: "1".into(),
        };
        let records = vec![
            rec("a", "cv2.line(i, a, b)"),
            rec("b", "print(1)"),
            rec("c", "plt.text(0, 0, 's')"),
        ];
        let (kept, report) = parse_corpus(&records, 1).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!((report.retained, report.dropped), (2, 1));
        assert_eq!(report.drop_reasons[&DropReason::TooFewOperations], 1);

        let (kept, report) = parse_corpus(&[], 1).unwrap();
        assert!(kept.is_empty());
        assert_eq!((report.retained, report.dropped), (0, 0));

        let dup = vec![rec("a", "cv2.line(i)"), rec("a", "cv2.line(i)"), rec("", "cv2.line(i)")];
        let (_, report) = parse_corpus(&dup, 1).unwrap();
        assert_eq!(report.retained, 1);
        assert_eq!(report.drop_reasons[&DropReason::DuplicateId], 1);
        assert_eq!(report.drop_reasons[&DropReason::EmptyId], 1);
        assert!(parse_corpus(&dup, 0).is_err());
    }
}
