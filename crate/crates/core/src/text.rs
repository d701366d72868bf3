//! Mention text normalization shared by the builder, parser and scorer.

/// Lowercase, trim and collapse internal whitespace. This is the key used for
/// deduplicating mentions and aligning gold with predictions.
pub fn normalize_mention(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for word in s.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Characters stripped from both ends of a mention, by rendering and by the
/// response parser alike.
pub(crate) const EDGE_JUNK: &[char] = &[
    '-', '\u{2013}', '\u{2014}', ':', '=', '>', '*', '\u{2022}', '"', '.', ' ',
];

/// Make a surface form safe to embed in a response list: the list and
/// entry separators (`,` `;` ` - `) and trailing periods are removed and
/// whitespace collapsed.
pub fn display_mention(s: &str) -> String {
    let replaced: String = s
        .chars()
        .map(|c| {
            if c == ',' || c == ';' || c == '\n' {
                ' '
            } else {
                c
            }
        })
        .collect();
    let collapsed = replaced.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed
        .replace(" - ", "-")
        .trim_matches(EDGE_JUNK)
        .to_string()
}
