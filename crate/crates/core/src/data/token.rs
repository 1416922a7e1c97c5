use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single lowercase word or punctuation unit.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Token(String);

impl Token {
    pub fn new(surface: impl Into<String>) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::Precondition(format!("invalid token {surface:?}")));
        }
        Ok(Token(surface))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when every character is punctuation or a symbol.
    pub fn is_punctuation(&self) -> bool {
        self.0.chars().all(is_punct)
    }
}

impl TryFrom<String> for Token {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Token::new(s)
    }
}

impl From<Token> for String {
    fn from(t: Token) -> String {
        t.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for Token {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Non-empty ordered sequence of tokens.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Token>", into = "Vec<Token>")]
pub struct Utterance(Vec<Token>);

impl Utterance {
    pub fn new(tokens: Vec<Token>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Utterance(tokens))
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Copy of this utterance with the token at `position` replaced.
    ///
    /// Panics if `position` is out of range.
    pub fn with_replacement(&self, position: usize, token: Token) -> Utterance {
        let mut tokens = self.0.clone();
        tokens[position] = token;
        Utterance(tokens)
    }

    /// Tokens joined with single spaces; `tokenize` maps this back to `self`.
    pub fn text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.0.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(t.as_str());
        }
        out
    }
}

impl TryFrom<Vec<Token>> for Utterance {
    type Error = Error;
    fn try_from(v: Vec<Token>) -> Result<Self> {
        Utterance::new(v)
    }
}

impl From<Utterance> for Vec<Token> {
    fn from(u: Utterance) -> Self {
        u.0
    }
}

impl fmt::Display for Utterance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text())
    }
}

const CLITICS: [&str; 7] = ["n't", "'s", "'re", "'ve", "'ll", "'d", "'m"];

fn is_punct(c: char) -> bool {
    !c.is_alphanumeric()
}

/// Lowercases, splits on whitespace, and detaches leading/trailing
/// punctuation and English clitics (`what's` → `what`, `'s`).
pub fn tokenize(text: &str) -> Result<Utterance> {
    let lowered = text.to_lowercase().replace(['\u{2019}', '\u{2018}'], "'");
    let mut tokens = Vec::new();
    for chunk in lowered.split_whitespace() {
        split_chunk(chunk, &mut tokens);
    }
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(Utterance(tokens.into_iter().map(Token).collect()))
}

fn split_chunk(s: &str, out: &mut Vec<String>) {
    if s.is_empty() {
        return;
    }
    if CLITICS.contains(&s) {
        out.push(s.to_string());
        return;
    }
    let first = s.chars().next().unwrap();
    if is_punct(first) {
        out.push(first.to_string());
        split_chunk(&s[first.len_utf8()..], out);
        return;
    }
    let last = s.chars().next_back().unwrap();
    if is_punct(last) {
        split_chunk(&s[..s.len() - last.len_utf8()], out);
        out.push(last.to_string());
        return;
    }
    if let Some(clitic) = CLITICS.iter().find(|c| s.len() > c.len() && s.ends_with(*c)) {
        split_chunk(&s[..s.len() - clitic.len()], out);
        out.push(clitic.to_string());
        return;
    }
    out.push(s.to_string());
}
