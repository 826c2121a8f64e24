//! Whitespace tokenization with punctuation peeling and byte offsets.

use serde::{Deserialize, Serialize};

/// One token plus the byte range it occupies in the source text.
/// `text == &source[start..end]` always holds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Split on whitespace, then peel leading and trailing ASCII punctuation off
/// each chunk one character at a time; every peeled character is its own
/// token. Interior punctuation (hyphens, apostrophes) stays attached.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut chunk_start = None;
    for (i, ch) in text.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = chunk_start.take() {
                split_chunk(text, s, i, &mut tokens);
            }
        } else if chunk_start.is_none() {
            chunk_start = Some(i);
        }
    }
    if let Some(s) = chunk_start {
        split_chunk(text, s, text.len(), &mut tokens);
    }
    tokens
}

fn split_chunk(text: &str, start: usize, end: usize, out: &mut Vec<Token>) {
    let chunk = &text[start..end];
    let mut core_start = start;
    let mut core_end = end;
    let mut leading = Vec::new();
    for (i, ch) in chunk.char_indices() {
        if ch.is_ascii_punctuation() {
            leading.push(Token {
                text: ch.to_string(),
                start: start + i,
                end: start + i + 1,
            });
            core_start = start + i + 1;
        } else {
            break;
        }
    }
    let mut trailing = Vec::new();
    if core_start < core_end {
        for (i, ch) in text[core_start..core_end].char_indices().rev() {
            if ch.is_ascii_punctuation() {
                trailing.push(Token {
                    text: ch.to_string(),
                    start: core_start + i,
                    end: core_start + i + 1,
                });
                core_end = core_start + i;
            } else {
                break;
            }
        }
    }
    out.extend(leading);
    if core_start < core_end {
        out.push(Token {
            text: text[core_start..core_end].to_string(),
            start: core_start,
            end: core_end,
        });
    }
    out.extend(trailing.into_iter().rev());
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(tokens: &[Token]) -> Vec<&str> {
        tokens.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn sentence_final_period_is_its_own_token() {
        let toks = tokenize("No chest pain.");
        assert_eq!(texts(&toks), vec!["No", "chest", "pain", "."]);
    }

    #[test]
    fn empty_input_gives_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("   \t\n ").is_empty());
    }

    #[test]
    fn wrapping_punctuation_peels_in_text_order() {
        let toks = tokenize("(see note.)");
        assert_eq!(texts(&toks), vec!["(", "see", "note", ".", ")"]);
    }

    #[test]
    fn interior_punctuation_stays_attached() {
        let toks = tokenize("x-ray won't");
        assert_eq!(texts(&toks), vec!["x-ray", "won't"]);
    }

    #[test]
    fn all_punctuation_chunk_becomes_single_char_tokens() {
        let toks = tokenize("--");
        assert_eq!(texts(&toks), vec!["-", "-"]);
    }

    #[test]
    fn offsets_slice_the_source() {
        let text = "  No, pain (left).  ";
        for t in tokenize(text) {
            assert_eq!(&text[t.start..t.end], t.text);
        }
    }

    #[test]
    fn multibyte_text_keeps_valid_offsets() {
        let text = "café visit, naïve.";
        let toks = tokenize(text);
        assert_eq!(texts(&toks), vec!["café", "visit", ",", "naïve", "."]);
        for t in &toks {
            assert_eq!(&text[t.start..t.end], t.text);
        }
    }

    proptest! {
        #[test]
        fn every_token_slices_source_exactly(text in "[ a-zA-Z0-9.,;:()'\\-\u{e9}\u{4e16}]{0,60}") {
            let toks = tokenize(&text);
            for t in &toks {
                prop_assert_eq!(&text[t.start..t.end], t.text.as_str());
                prop_assert!(!t.text.is_empty());
                prop_assert!(!t.text.chars().any(|c| c.is_whitespace()));
            }
            for w in toks.windows(2) {
                prop_assert!(w[0].end <= w[1].start);
            }
        }

        #[test]
        fn concatenation_preserves_non_whitespace(text in "[ a-z.,()]{0,40}") {
            let joined: String = tokenize(&text).iter().map(|t| t.text.clone()).collect();
            let stripped: String = text.chars().filter(|c| !c.is_whitespace()).collect();
            prop_assert_eq!(joined, stripped);
        }
    }
}
