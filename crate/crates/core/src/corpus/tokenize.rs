//! Word-level tokenizer: lowercase, whitespace split, punctuation detached,
//! English clitics (`'s`, `'m`, `'re`, `'ve`, `'ll`, `'d`, `n't`) split off.

const CLITICS: [&str; 6] = ["'s", "'m", "'re", "'ve", "'ll", "'d"];

pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let chunk = chunk.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
        let mut word = String::new();
        for ch in chunk.chars() {
            if is_split_punct(ch) {
                flush(&mut word, &mut out);
                out.push(ch.to_string());
            } else {
                word.push(ch);
            }
        }
        flush(&mut word, &mut out);
    }
    out
}

fn is_split_punct(ch: char) -> bool {
    (ch.is_ascii_punctuation() && ch != '\'' && ch != '-') || matches!(ch, '\u{201c}' | '\u{201d}' | '\u{2026}')
}

fn flush(word: &mut String, out: &mut Vec<String>) {
    if word.is_empty() {
        return;
    }
    let w = std::mem::take(word);
    if w.chars().all(|c| c == '-' || c == '\'') {
        out.extend(w.chars().map(String::from));
        return;
    }
    split_clitics(&w, out);
}

/// Peels clitics and trailing apostrophes off the end until none remain.
fn split_clitics(w: &str, out: &mut Vec<String>) {
    let mut tail = Vec::new();
    let mut rest = w;
    loop {
        if let Some(stem) = rest.strip_suffix('\'') {
            tail.push("'");
            rest = stem;
            continue;
        }
        match std::iter::once("n't").chain(CLITICS).find(|c| rest.ends_with(c)) {
            Some(c) => {
                tail.push(c);
                rest = &rest[..rest.len() - c.len()];
            }
            None => break,
        }
    }
    push_word(rest, out);
    out.extend(tail.into_iter().rev().map(String::from));
}

/// Splits stray apostrophes off the ends of a word.
fn push_word(w: &str, out: &mut Vec<String>) {
    let core = w.trim_matches('\'');
    let lead = w.len() - w.trim_start_matches('\'').len();
    let trail = w.len() - w.trim_end_matches('\'').len();
    out.extend(std::iter::repeat("'".to_string()).take(lead));
    if !core.is_empty() {
        out.push(core.to_string());
    }
    out.extend(std::iter::repeat("'".to_string()).take(trail));
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn clitics_and_punctuation() {
        assert_eq!(toks("I'm SO happy!"), ["i", "'m", "so", "happy", "!"]);
        assert_eq!(toks("Don't worry, it's fine."), ["do", "n't", "worry", ",", "it", "'s", "fine", "."]);
        assert_eq!(toks("We'll see... you've"), ["we", "'ll", "see", ".", ".", ".", "you", "'ve"]);
        assert_eq!(toks("  "), Vec::<String>::new());
        assert_eq!(toks("well-known 'quote'"), ["well-known", "'", "quote", "'"]);
    }

    proptest! {
        #[test]
        fn tokenizing_is_idempotent(s in "[a-zA-Z' ,.!?-]{0,40}") {
            let once = tokenize(&s);
            let twice = tokenize(&detokenize(&once));
            prop_assert_eq!(once, twice);
        }
    }
}
