//! Whole-word token splitting shared by the prompt builder (length
//! accounting, placeholder positions) and the LM tokenizer. Splitting is
//! independent of any vocabulary, so token positions computed at prompt
//! build time agree with the tokenizer's.

/// Reserved atomic token marking the soft-injection slot.
pub const PLACEHOLDER_TOKEN: &str = "<ExpertEmb>";

pub const PAD_TOKEN: &str = "<pad>";
pub const BOS_TOKEN: &str = "<bos>";
pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Split text into word, number, and punctuation tokens. Angle-bracketed
/// reserved tokens are kept atomic.
pub fn split_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c == '<' {
            // reserved tokens like <ExpertEmb> stay atomic
            if let Some(end) = chars[i..].iter().position(|&x| x == '>') {
                let candidate: String = chars[i..=i + end].iter().collect();
                if candidate.len() > 2
                    && candidate[1..candidate.len() - 1]
                        .chars()
                        .all(|x| x.is_alphanumeric())
                {
                    out.push(candidate);
                    i += end + 1;
                    continue;
                }
            }
        }
        if c.is_alphanumeric() || c == '\'' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '\'') {
                i += 1;
            }
            out.push(chars[start..i].iter().collect());
        } else {
            out.push(c.to_string());
            i += 1;
        }
    }
    out
}

/// Inverse of `split_tokens` up to whitespace normalization.
pub fn join_tokens(tokens: &[String]) -> String {
    tokens.join(" ")
}
