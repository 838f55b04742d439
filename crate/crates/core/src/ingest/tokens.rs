//! Reference tokenizer.
//!
//! One normative tokenization shared by chunking, budgeting and the n-gram
//! evaluator: a maximal run of alphanumerics and underscores is one token,
//! every other non-whitespace character is a token on its own, whitespace
//! is never a token. De-identification placeholders such as `___` are a
//! single underscore run and therefore a single token.

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Iterator over the reference tokens of a string, as borrowed slices.
#[derive(Debug, Clone)]
pub struct RefTokens<'a> {
    text: &'a str,
    pos: usize,
}

impl<'a> Iterator for RefTokens<'a> {
    type Item = &'a str;

    fn next(&mut self) -> Option<&'a str> {
        let rest = &self.text[self.pos..];
        let mut chars = rest.char_indices().skip_while(|(_, c)| c.is_whitespace());
        let (start, first) = chars.next()?;
        let end = if is_word_char(first) {
            chars
                .find(|(_, c)| !is_word_char(*c))
                .map_or(rest.len(), |(i, _)| i)
        } else {
            start + first.len_utf8()
        };
        self.pos += end;
        Some(&rest[start..end])
    }
}

/// Tokenize `text` under the reference rules.
pub fn ref_tokens(text: &str) -> RefTokens<'_> {
    RefTokens { text, pos: 0 }
}

/// Number of reference tokens in `text`.
pub fn count_ref_tokens(text: &str) -> usize {
    ref_tokens(text).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_words_and_punctuation() {
        assert_eq!(count_ref_tokens("Patient admitted with CHF."), 5);
        assert_eq!(count_ref_tokens(""), 0);
        assert_eq!(count_ref_tokens("   \n\t "), 0);
    }

    #[test]
    fn dotted_abbreviation_is_six_tokens() {
        let toks: Vec<_> = ref_tokens("b.i.d.").collect();
        assert_eq!(toks, ["b", ".", "i", ".", "d", "."]);
    }

    #[test]
    fn placeholder_is_one_token() {
        let toks: Vec<_> = ref_tokens("Admission Date: ___ Sex: F").collect();
        assert_eq!(toks, ["Admission", "Date", ":", "___", "Sex", ":", "F"]);
    }

    #[test]
    fn unicode_letters_and_symbols() {
        let toks: Vec<_> = ref_tokens("Temp 38.5°C, naïve→ok").collect();
        assert_eq!(
            toks,
            ["Temp", "38", ".", "5", "°", "C", ",", "naïve", "→", "ok"]
        );
    }
}
