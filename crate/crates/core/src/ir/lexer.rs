//! Tokenizer for `.bir` sources.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::{Diagnostic, Pos};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    /// `@word`
    Annot(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

const PUNCT: [&str; 30] = [
    "==", "!=", "<=", ">=", "<<", ">>", "&&", "||", "(", ")", "{", "}", "[", "]", ";", ",", "=", "<", ">", "+", "-",
    "*", "&", "|", "^", "!", "~", "/", "%", ".",
];

pub fn lex(src: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let bytes = src.as_bytes();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    while i < bytes.len() {
        let c = bytes[i];
        let pos = Pos { line, col };
        if c == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        let word = |i: &mut usize| {
            while *i < bytes.len() && (bytes[*i].is_ascii_alphanumeric() || bytes[*i] == b'_') {
                *i += 1;
            }
        };
        let tok = if c.is_ascii_alphabetic() || c == b'_' {
            word(&mut i);
            Tok::Ident(src[start..i].into())
        } else if c == b'@' {
            i += 1;
            word(&mut i);
            Tok::Annot(src[start + 1..i].into())
        } else if c.is_ascii_digit() {
            word(&mut i);
            let text = &src[start..i];
            let v = match text.strip_prefix("0x") {
                Some(h) => u64::from_str_radix(h, 16).ok(),
                None => text.parse::<u64>().ok(),
            };
            match v {
                Some(v) => Tok::Int(v as i64),
                None => return Err(Diagnostic::error("E_SYNTAX", pos, format!("bad integer literal `{text}`"))),
            }
        } else if let Some(p) = PUNCT.iter().find(|p| src[i..].starts_with(**p)) {
            i += p.len();
            Tok::Punct(p)
        } else {
            let ch = src[i..].chars().next().unwrap_or('?');
            return Err(Diagnostic::error("E_SYNTAX", pos, format!("unexpected character `{ch}`")));
        };
        col += (i - start) as u32;
        out.push(Token { tok, pos });
    }
    out.push(Token { tok: Tok::Eof, pos: Pos { line, col } });
    Ok(out)
}
