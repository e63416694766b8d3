//! Whitespace tokenization with detached punctuation.
//!
//! Every token remembers the whitespace that preceded it so that a token
//! sequence renders back to the exact input when nothing is replaced.

/// The reserved mask token. Always kept atomic by the tokenizer.
pub const MASK: &str = "[MASK]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Word,
    Punct,
    Mask,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token<'a> {
    pub text: &'a str,
    /// Whitespace between the previous token (or start of text) and this one.
    pub leading: &'a str,
    pub kind: TokenKind,
}

impl Token<'_> {
    /// Lowercased form used for keyword matching and vocabulary lookup.
    /// The mask token keeps its canonical spelling.
    pub fn normalized(&self) -> String {
        match self.kind {
            TokenKind::Mask => MASK.to_string(),
            _ => self.text.to_lowercase(),
        }
    }
}

/// A tokenized text plus the trailing whitespace needed for exact rendering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenized<'a> {
    pub tokens: Vec<Token<'a>>,
    pub trailing: &'a str,
}

pub fn is_punct(c: char) -> bool {
    !c.is_alphanumeric() && !c.is_whitespace()
}

/// Splits `text` on whitespace, then detaches leading and trailing
/// punctuation characters of each chunk as single-character tokens.
/// Occurrences of `[MASK]` are always emitted as one token.
pub fn tokenize(text: &str) -> Tokenized<'_> {
    let mut tokens = Vec::new();
    let mut pos = 0;
    let bytes_len = text.len();
    while pos < bytes_len {
        let rest = &text[pos..];
        let ws_len = rest
            .char_indices()
            .find(|(_, c)| !c.is_whitespace())
            .map(|(i, _)| i)
            .unwrap_or(rest.len());
        if ws_len == rest.len() {
            return Tokenized {
                tokens,
                trailing: rest,
            };
        }
        let leading = &rest[..ws_len];
        let chunk_start = pos + ws_len;
        let chunk_len = text[chunk_start..]
            .char_indices()
            .find(|(_, c)| c.is_whitespace())
            .map(|(i, _)| i)
            .unwrap_or(bytes_len - chunk_start);
        let chunk = &text[chunk_start..chunk_start + chunk_len];
        split_chunk(chunk, leading, &mut tokens);
        pos = chunk_start + chunk_len;
    }
    Tokenized {
        tokens,
        trailing: "",
    }
}

fn split_chunk<'a>(chunk: &'a str, leading: &'a str, out: &mut Vec<Token<'a>>) {
    let mut leading = leading;
    let mut rest = chunk;
    while !rest.is_empty() {
        let (piece, mask_follows) = match rest.find(MASK) {
            Some(i) => (&rest[..i], true),
            None => (rest, false),
        };
        split_piece(piece, &mut leading, out);
        rest = &rest[piece.len()..];
        if mask_follows {
            out.push(Token {
                text: &rest[..MASK.len()],
                leading,
                kind: TokenKind::Mask,
            });
            leading = "";
            rest = &rest[MASK.len()..];
        }
    }
}

fn split_piece<'a>(piece: &'a str, leading: &mut &'a str, out: &mut Vec<Token<'a>>) {
    if piece.is_empty() {
        return;
    }
    let first_alnum = piece.char_indices().find(|(_, c)| !is_punct(*c));
    let Some((start, _)) = first_alnum else {
        for (i, c) in piece.char_indices() {
            push_punct(&piece[i..i + c.len_utf8()], leading, out);
        }
        return;
    };
    let (last_idx, last_char) = piece
        .char_indices()
        .rev()
        .find(|(_, c)| !is_punct(*c))
        .expect("piece has an alphanumeric char");
    let end = last_idx + last_char.len_utf8();
    for (i, c) in piece[..start].char_indices() {
        push_punct(&piece[i..i + c.len_utf8()], leading, out);
    }
    out.push(Token {
        text: &piece[start..end],
        leading,
        kind: TokenKind::Word,
    });
    *leading = "";
    for (i, c) in piece[end..].char_indices() {
        let at = end + i;
        push_punct(&piece[at..at + c.len_utf8()], leading, out);
    }
}

fn push_punct<'a>(text: &'a str, leading: &mut &'a str, out: &mut Vec<Token<'a>>) {
    out.push(Token {
        text,
        leading,
        kind: TokenKind::Punct,
    });
    *leading = "";
}

/// Joins `(leading whitespace, text)` pairs and the trailing whitespace.
pub fn render<'a>(tokens: impl IntoIterator<Item = (&'a str, &'a str)>, trailing: &str) -> String {
    let mut out = String::new();
    for (leading, text) in tokens {
        out.push_str(leading);
        out.push_str(text);
    }
    out.push_str(trailing);
    out
}

/// Lowercased token strings, the unit of the toy encoder's vocabulary.
pub fn normalized_tokens(text: &str) -> Vec<String> {
    tokenize(text).tokens.iter().map(Token::normalized).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<&str> {
        tokenize(s).tokens.iter().map(|t| t.text).collect()
    }

    #[test]
    fn detaches_punctuation() {
        assert_eq!(
            texts("records! Should we?"),
            vec!["records", "!", "Should", "we", "?"]
        );
        assert_eq!(texts("\"don't\""), vec!["\"", "don't", "\""]);
        assert_eq!(texts("#SemST ..."), vec!["#", "SemST", ".", ".", "."]);
    }

    #[test]
    fn mask_is_atomic() {
        let t = tokenize("is [MASK], a[MASK]b");
        let kinds: Vec<_> = t.tokens.iter().map(|t| (t.text, t.kind)).collect();
        assert_eq!(
            kinds,
            vec![
                ("is", TokenKind::Word),
                ("[MASK]", TokenKind::Mask),
                (",", TokenKind::Punct),
                ("a", TokenKind::Word),
                ("[MASK]", TokenKind::Mask),
                ("b", TokenKind::Word),
            ]
        );
    }

    #[test]
    fn renders_exactly() {
        for s in ["  a  b,c ! ", "", "   ", "x[MASK]y  [MASK].", "héllo wörld…"] {
            let t = tokenize(s);
            let rendered = render(t.tokens.iter().map(|t| (t.leading, t.text)), t.trailing);
            assert_eq!(rendered, s);
        }
    }

    #[test]
    fn normalized_lowercases_but_keeps_mask() {
        assert_eq!(normalized_tokens("Hi [MASK] THERE"), vec!["hi", "[MASK]", "there"]);
    }
}
