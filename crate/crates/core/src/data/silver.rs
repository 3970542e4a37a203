//! Paragraph references in decision text ("See paragraphs 2 and 4.").
//!
//! Patterns: `paragraph N`, `paragraphs N and M`, comma lists, ranges
//! `N-M` / `N–M`, and the abbreviations `para.` / `paras.`. Numbers are
//! 1-based in the text and 0-based in the result. References that point
//! into another instrument ("paragraph 1 of Article 6") or sit inside a
//! case-law citation ("Draci v. Russia, no. 1/05, paragraph 45") are ignored.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

/// Widest range expanded; wider spans are treated as noise.
const MAX_RANGE: usize = 200;

fn reference_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        let item = r"\d{1,4}(?:\s*[-–—]\s*\d{1,4})?";
        let sep = r"(?:\s*,\s*(?:and\s+)?|\s+and\s+|\s*&\s*)";
        Regex::new(&format!(r"(?i)\b(?:paragraphs?|paras?\.?)\s*({item}(?:{sep}{item})*)\b")).expect("valid regex")
    })
}

fn item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(\d{1,4})(?:\s*[-–—]\s*(\d{1,4}))?").expect("valid regex"))
}

fn foreign_target_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:of|in)\s+(?:the\s+)?(?:article|protocol|rule|convention|annex)\b").expect("valid regex")
    })
}

fn article_prefix_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\b(?:article|rule)\s+\d+\s*,?\s*$").expect("valid regex"))
}

fn citation_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bvs?\.\s|\bnos?\.\s*\d|\bECHR\s+\d{4}|\bReports\s+of\b|\bSeries\s+A\b|\bcited\s+above\b|\bjudgment\s+of\s+\d",
        )
        .expect("valid regex")
    })
}

const ABBREVIATIONS: [&str; 12] = ["v", "vs", "no", "nos", "cf", "e.g", "i.e", "ibid", "para", "paras", "p", "pp"];

/// Byte offset where the clause containing `end` starts: after the last
/// `;` or sentence-ending period that is not part of an abbreviation.
fn clause_start(text: &str, end: usize) -> usize {
    let bytes = text.as_bytes();
    let mut i = end;
    while i > 0 {
        i -= 1;
        match bytes[i] {
            b';' => return i + 1,
            b'.' | b'!' | b'?' if i + 1 < end && bytes[i + 1].is_ascii_whitespace() => {
                let word: String = text[..i]
                    .chars()
                    .rev()
                    .take_while(|c| c.is_alphanumeric() || *c == '.')
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .collect();
                let w = word.to_ascii_lowercase();
                if !ABBREVIATIONS.contains(&w.as_str()) && !(w.len() == 1 && w.chars().all(char::is_alphabetic)) {
                    return i + 1;
                }
            }
            _ => {}
        }
    }
    0
}

/// 0-based indices of the fact paragraphs referenced in `text`, dropping
/// references beyond `n_facts`.
pub fn extract_silver_rationales(text: &str, n_facts: usize) -> BTreeSet<usize> {
    let mut out = BTreeSet::new();
    for caps in reference_re().captures_iter(text) {
        let whole = caps.get(0).expect("match");
        if foreign_target_re().is_match(&text[whole.end()..]) {
            continue;
        }
        let before = &text[..whole.start()];
        if article_prefix_re().is_match(before) {
            continue;
        }
        let clause = &text[clause_start(text, whole.start())..whole.start()];
        if citation_re().is_match(clause) {
            continue;
        }
        let list = caps.get(1).expect("list group").as_str();
        for item in item_re().captures_iter(list) {
            let lo: usize = item[1].parse().expect("digits");
            let hi: usize = item.get(2).map_or(lo, |m| m.as_str().parse().expect("digits"));
            if lo == 0 {
                continue;
            }
            // A reversed or implausibly wide range keeps only its start.
            let hi = if hi < lo || hi - lo > MAX_RANGE { lo } else { hi };
            for p in lo..=hi {
                if p <= n_facts {
                    out.insert(p - 1);
                }
            }
        }
    }
    out
}

/// Renders 0-based indices as a reference sentence, compressing runs of
/// three or more into ranges: `{1, 3, 4, 5}` → "See paragraphs 2 and 4-6.".
pub fn render_reference(indices: &BTreeSet<usize>) -> String {
    let nums: Vec<usize> = indices.iter().map(|i| i + 1).collect();
    if nums.is_empty() {
        return String::new();
    }
    let mut items = Vec::new();
    let mut i = 0;
    while i < nums.len() {
        let mut j = i;
        while j + 1 < nums.len() && nums[j + 1] == nums[j] + 1 {
            j += 1;
        }
        if j - i >= 2 {
            items.push(format!("{}-{}", nums[i], nums[j]));
        } else {
            for n in &nums[i..=j] {
                items.push(n.to_string());
            }
        }
        i = j + 1;
    }
    let single = nums.len() == 1;
    let list = match items.len() {
        1 => items[0].clone(),
        n => format!("{} and {}", items[..n - 1].join(", "), items[n - 1]),
    };
    format!("See {} {list}.", if single { "paragraph" } else { "paragraphs" })
}
