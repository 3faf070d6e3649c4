use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::table::Table;

pub const MAX_COARSE_CHARS: usize = 2000;
pub const MAX_FINE_CHARS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Coarse,
    Fine,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Coarse => "coarse",
            Level::Fine => "fine",
        }
    }

    pub fn from_name(s: &str) -> Option<Level> {
        match s {
            "coarse" => Some(Level::Coarse),
            "fine" => Some(Level::Fine),
            _ => None,
        }
    }
}

/// A coarse piece of text with its fine pieces. Both are byte ranges into the
/// source; fine ranges partition the coarse range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TextPiece {
    pub start: usize,
    pub end: usize,
    pub fine: Vec<(usize, usize)>,
}

fn char_boundary_at_most(text: &str, mut idx: usize) -> usize {
    while !text.is_char_boundary(idx) {
        idx -= 1;
    }
    idx
}

/// Splits into paragraphs. Blank-line separators stay attached to the
/// paragraph before them, so the pieces concatenate back to `text`.
fn paragraphs(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut saw_content = false;
    let mut in_separator = false;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let blank = line.trim().is_empty();
        if !blank && in_separator && saw_content {
            out.push((start, pos));
            start = pos;
            in_separator = false;
        }
        if blank {
            // a blank line only separates once the paragraph has content
            if saw_content {
                in_separator = true;
            }
        } else {
            saw_content = true;
        }
        pos += line.len();
    }
    if start < text.len() {
        out.push((start, text.len()));
    }
    out
}

/// Sentence or line pieces: a cut after every newline and after `.`, `!`
/// or `?` followed by whitespace (the whitespace run stays with the sentence).
fn sentences(text: &str, offset: usize) -> Vec<(usize, usize)> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        let mut cut = None;
        if b == b'\n' {
            cut = Some(i + 1);
        } else if matches!(b, b'.' | b'!' | b'?') && i + 1 < bytes.len() && bytes[i + 1].is_ascii_whitespace() {
            let mut j = i + 1;
            while j < bytes.len() && matches!(bytes[j], b' ' | b'\t' | b'\r') {
                j += 1;
            }
            if j < bytes.len() && bytes[j] == b'\n' {
                j += 1;
            }
            cut = Some(j);
        }
        match cut {
            Some(c) => {
                out.push((offset + start, offset + c));
                start = c;
                i = c;
            }
            None => i += 1,
        }
    }
    if start < bytes.len() {
        out.push((offset + start, offset + bytes.len()));
    }
    out
}

/// Hard split of a range into chunks of at most `max` chars.
fn hard_split(text: &str, (s, e): (usize, usize), max: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = s;
    let mut count = 0;
    for (i, _) in text[s..e].char_indices() {
        if count == max {
            out.push((start, s + i));
            start = s + i;
            count = 0;
        }
        count += 1;
    }
    if start < e {
        out.push((start, e));
    }
    out
}

fn chars(text: &str, (s, e): (usize, usize)) -> usize {
    text[s..e].chars().count()
}

/// Packs consecutive pieces greedily into chunks of at most `max` chars;
/// oversized pieces are hard split.
fn pack(text: &str, pieces: Vec<(usize, usize)>, max: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    let mut cur: Option<(usize, usize, usize)> = None;
    for p in pieces {
        let n = chars(text, p);
        if n > max {
            if let Some((s, e, _)) = cur.take() {
                out.push((s, e));
            }
            out.extend(hard_split(text, p, max));
            continue;
        }
        cur = match cur {
            Some((s, _, c)) if c + n <= max => Some((s, p.1, c + n)),
            Some((s, e, _)) => {
                out.push((s, e));
                Some((p.0, p.1, n))
            }
            None => Some((p.0, p.1, n)),
        };
    }
    if let Some((s, e, _)) = cur {
        out.push((s, e));
    }
    out
}

/// Whitespace-only pieces join their predecessor (or successor when first).
fn merge_blank(text: &str, pieces: Vec<(usize, usize)>, max: usize) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for p in pieces {
        let blank = text[p.0..p.1].trim().is_empty();
        match out.last_mut() {
            Some(last) if blank && chars(text, (last.0, p.1)) <= max => last.1 = p.1,
            Some(last) if text[last.0..last.1].trim().is_empty() && chars(text, (last.0, p.1)) <= max => last.1 = p.1,
            _ => out.push(p),
        }
    }
    out
}

fn fine_pieces(text: &str, (s, e): (usize, usize)) -> Vec<(usize, usize)> {
    let mut pieces = Vec::new();
    for sentence in sentences(&text[s..e], s) {
        pieces.extend(hard_split(text, sentence, MAX_FINE_CHARS));
    }
    merge_blank(text, pieces, MAX_FINE_CHARS)
}

fn coarse_pieces(text: &str, ranges: Vec<(usize, usize)>) -> Vec<TextPiece> {
    let mut coarse = Vec::new();
    for r in ranges {
        if chars(text, r) > MAX_COARSE_CHARS {
            coarse.extend(pack(text, sentences(&text[r.0..r.1], r.0), MAX_COARSE_CHARS));
        } else {
            coarse.push(r);
        }
    }
    coarse.into_iter().map(|(start, end)| TextPiece { start, end, fine: fine_pieces(text, (start, end)) }).collect()
}

/// Deterministic two-level segmentation: paragraphs (split further at
/// sentence boundaries above 2000 chars) and sentences or lines of at most
/// 400 chars. Lossless: coarse ranges partition the text.
pub fn segment_rule(text: &str) -> Vec<TextPiece> {
    coarse_pieces(text, paragraphs(text))
}

/// Segmentation from model-proposed coarse start offsets (in characters).
/// Returns `None` when the offsets are unusable.
pub fn segment_from_offsets(text: &str, response: &str) -> Option<Vec<TextPiece>> {
    let start = response.find('[')?;
    let end = response.rfind(']')?;
    let offsets: Vec<usize> = serde_json::from_str(response.get(start..=end)?).ok()?;
    if offsets.first() != Some(&0) || offsets.windows(2).any(|w| w[0] >= w[1]) {
        return None;
    }
    let total = text.chars().count();
    if offsets.iter().any(|o| *o >= total.max(1)) {
        return None;
    }
    let byte_at: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    let mut bounds: Vec<usize> = offsets.iter().map(|o| byte_at.get(*o).copied().unwrap_or(text.len())).collect();
    bounds.push(text.len());
    let ranges = bounds.windows(2).map(|w| (w[0], w[1])).collect();
    Some(coarse_pieces(text, ranges))
}

/// A table found inside free text.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    /// Byte range of the table lines in the source text.
    pub start: usize,
    pub end: usize,
    pub table: Table,
}

fn markdown_rule() -> Regex {
    Regex::new(r"^\s*\|?\s*:?-{2,}:?\s*(\|\s*:?-{2,}:?\s*)*\|?\s*$").expect("static regex")
}

fn split_cells(line: &str, delim: char) -> Vec<String> {
    let mut t = line.trim();
    if delim == '|' {
        t = t.strip_prefix('|').unwrap_or(t);
        t = t.strip_suffix('|').unwrap_or(t);
    }
    t.split(delim).map(|c| c.trim().to_string()).collect()
}

fn column_name(raw: &str, index: usize, taken: &[String]) -> String {
    let mut name: String = raw
        .trim()
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { '_' })
        .collect::<String>()
        .split('_')
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join("_");
    if name.is_empty() || name.starts_with(|c: char| c.is_ascii_digit()) {
        name = format!("col{}{}", index + 1, if name.is_empty() { String::new() } else { format!("_{name}") });
    }
    let base = name.clone();
    let mut k = 2;
    while taken.contains(&name) {
        name = format!("{base}_{k}");
        k += 1;
    }
    name
}

/// Finds runs of at least three consecutive lines that share the same nonzero
/// count of one delimiter (`|`, tab or comma). The first line of a run is the
/// header; markdown rule lines are dropped.
pub fn detect_tables(text: &str) -> Vec<TextTable> {
    let rule = markdown_rule();
    let mut lines: Vec<(usize, &str)> = Vec::new();
    let mut pos = 0;
    for l in text.split_inclusive('\n') {
        lines.push((pos, l.trim_end_matches(['\n', '\r'])));
        pos += l.len();
    }
    let mut out = Vec::new();
    let mut i = 0;
    while i < lines.len() {
        let mut found = None;
        for delim in ['|', '\t', ','] {
            let count = |s: &str| s.matches(delim).count();
            let n = count(lines[i].1);
            if n == 0 || lines[i].1.trim().is_empty() {
                continue;
            }
            let mut j = i + 1;
            while j < lines.len()
                && (count(lines[j].1) == n || (delim == '|' && rule.is_match(lines[j].1) && lines[j].1.contains('|')))
            {
                j += 1;
            }
            if j - i >= 3 {
                found = Some((delim, j));
                break;
            }
        }
        let Some((delim, j)) = found else {
            i += 1;
            continue;
        };
        let data: Vec<&str> = lines[i..j].iter().map(|(_, l)| *l).filter(|l| !rule.is_match(l)).collect();
        if data.len() >= 2 {
            let raw_headers = split_cells(data[0], delim);
            let mut headers: Vec<String> = Vec::new();
            for (k, h) in raw_headers.iter().enumerate() {
                let n = column_name(h, k, &headers);
                headers.push(n);
            }
            let cells: Vec<Vec<String>> = data[1..].iter().map(|l| split_cells(l, delim)).collect();
            if cells.iter().all(|r| r.len() == headers.len()) {
                if let Ok(table) = super::connector::typed_table(headers, cells) {
                    let end = lines.get(j).map(|(p, _)| *p).unwrap_or(text.len());
                    out.push(TextTable { start: lines[i].0, end: char_boundary_at_most(text, end), table });
                }
            }
        }
        i = j;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::Value;

    fn concat(text: &str, pieces: &[TextPiece]) -> String {
        pieces.iter().map(|p| &text[p.start..p.end]).collect()
    }

    #[test]
    fn three_paragraphs_three_coarse() {
        let text = "First para. Two sentences.\n\nSecond para\nhas two lines.\n\n\nThird.";
        let pieces = segment_rule(text);
        assert_eq!(pieces.len(), 3);
        assert_eq!(concat(text, &pieces), text);
        assert_eq!(&text[pieces[0].start..pieces[0].end], "First para. Two sentences.\n\n");
        for p in &pieces {
            let fine: String = p.fine.iter().map(|(s, e)| &text[*s..*e]).collect();
            assert_eq!(fine, &text[p.start..p.end]);
        }
        assert_eq!(pieces[0].fine.len(), 2);
    }

    #[test]
    fn long_paragraph_split_by_sentences() {
        let text = "This sentence has some words in it. ".repeat(140);
        assert!(text.len() >= 5000);
        let pieces = segment_rule(&text);
        assert!(pieces.len() >= 3);
        assert_eq!(concat(&text, &pieces), text);
        assert!(pieces.iter().all(|p| text[p.start..p.end].chars().count() <= MAX_COARSE_CHARS));
        assert!(pieces.iter().flat_map(|p| &p.fine).all(|(s, e)| text[*s..*e].chars().count() <= MAX_FINE_CHARS));
    }

    #[test]
    fn unbroken_text_is_hard_split() {
        let text = "x".repeat(4500);
        let pieces = segment_rule(&text);
        assert_eq!(pieces.len(), 3);
        assert_eq!(concat(&text, &pieces), text);
    }

    #[test]
    fn leading_blank_lines_stay_lossless() {
        let text = "\n\n  \nBody\n\n";
        let pieces = segment_rule(text);
        assert_eq!(pieces.len(), 1);
        assert_eq!(concat(text, &pieces), text);
    }

    #[test]
    fn offsets_from_model() {
        let text = "aaa bbb ccc";
        let p = segment_from_offsets(text, "Sections: [0, 4, 8]").unwrap();
        assert_eq!(p.iter().map(|p| (p.start, p.end)).collect::<Vec<_>>(), [(0, 4), (4, 8), (8, 11)]);
        assert!(segment_from_offsets(text, "[1, 4]").is_none());
        assert!(segment_from_offsets(text, "[0, 4, 4]").is_none());
        assert!(segment_from_offsets(text, "[0, 40]").is_none());
        assert!(segment_from_offsets(text, "no idea").is_none());
    }

    #[test]
    fn markdown_fee_table() {
        let text = "Fees apply as follows.\n\n| Card Type | Fee Rate |\n|---|---|\n| credit | 0.029 |\n| debit | 0.011 |\n\nEnd.";
        let tables = detect_tables(text);
        assert_eq!(tables.len(), 1);
        let t = &tables[0].table;
        assert_eq!(t.schema.to_string(), "[card_type:text, fee_rate:real]");
        assert_eq!(
            t.rows,
            vec![
                vec![Value::Text("credit".into()), Value::Real(0.029)],
                vec![Value::Text("debit".into()), Value::Real(0.011)],
            ]
        );
        assert!(text[tables[0].start..tables[0].end].starts_with("| Card Type"));
    }

    #[test]
    fn two_delimited_lines_are_not_a_table() {
        assert!(detect_tables("a,b\n1,2\nplain text\n").is_empty());
        assert_eq!(detect_tables("a\tb\n1\t2\n3\t4\n").len(), 1);
    }
}
