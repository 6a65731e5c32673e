//! Hand-rolled lexer for the `.dsg` surface syntax.

use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(String),
    LBrace,
    RBrace,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Colon,
    Question,
    Star,
    Bar,
    Amp,
    Bang,
    Eq,
    EqEq,
    Le,
    Lt,
    Ge,
    Gt,
    Plus,
    Minus,
    Slash,
    Arrow,
    DotDot,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(s) => write!(f, "integer `{s}`"),
            Tok::LBrace => write!(f, "`{{`"),
            Tok::RBrace => write!(f, "`}}`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Question => write!(f, "`?`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Bar => write!(f, "`|`"),
            Tok::Amp => write!(f, "`&`"),
            Tok::Bang => write!(f, "`!`"),
            Tok::Eq => write!(f, "`=`"),
            Tok::EqEq => write!(f, "`==`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Ge => write!(f, "`>=`"),
            Tok::Gt => write!(f, "`>`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Slash => write!(f, "`/`"),
            Tok::Arrow => write!(f, "`->`"),
            Tok::DotDot => write!(f, "`..`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

/// A token plus its source position (1-based line and column).
#[derive(Debug, Clone)]
pub struct Spanned {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

pub fn lex(text: &str) -> Result<Vec<Spanned>, LexError> {
    let mut out = Vec::new();
    let chars: Vec<char> = text.chars().collect();
    let mut i = 0;
    let mut line = 1;
    let mut col = 1;
    macro_rules! push {
        ($tok:expr, $len:expr) => {{
            out.push(Spanned { tok: $tok, line, col });
            i += $len;
            col += $len;
        }};
    }
    while i < chars.len() {
        let c = chars[i];
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '/' if i + 1 < chars.len() && chars[i + 1] == '/' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '{' => push!(Tok::LBrace, 1),
            '}' => push!(Tok::RBrace, 1),
            '(' => push!(Tok::LParen, 1),
            ')' => push!(Tok::RParen, 1),
            '[' => push!(Tok::LBracket, 1),
            ']' => push!(Tok::RBracket, 1),
            ',' => push!(Tok::Comma, 1),
            ';' => push!(Tok::Semi, 1),
            ':' => push!(Tok::Colon, 1),
            '?' => push!(Tok::Question, 1),
            '*' => push!(Tok::Star, 1),
            '|' => push!(Tok::Bar, 1),
            '&' => push!(Tok::Amp, 1),
            '!' => push!(Tok::Bang, 1),
            '+' => push!(Tok::Plus, 1),
            '/' => push!(Tok::Slash, 1),
            '=' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push!(Tok::EqEq, 2);
                } else {
                    push!(Tok::Eq, 1);
                }
            }
            '<' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push!(Tok::Le, 2);
                } else {
                    push!(Tok::Lt, 1);
                }
            }
            '>' => {
                if i + 1 < chars.len() && chars[i + 1] == '=' {
                    push!(Tok::Ge, 2);
                } else {
                    push!(Tok::Gt, 1);
                }
            }
            '-' => {
                if i + 1 < chars.len() && chars[i + 1] == '>' {
                    push!(Tok::Arrow, 2);
                } else {
                    push!(Tok::Minus, 1);
                }
            }
            '.' => {
                if i + 1 < chars.len() && chars[i + 1] == '.' {
                    push!(Tok::DotDot, 2);
                } else {
                    return Err(LexError {
                        line,
                        col,
                        msg: "unexpected `.`".into(),
                    });
                }
            }
            _ if c.is_ascii_digit() => {
                let start = i;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Spanned {
                    tok: Tok::Int(s),
                    line,
                    col,
                });
                col += i - start;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                out.push(Spanned {
                    tok: Tok::Ident(s),
                    line,
                    col,
                });
                col += i - start;
            }
            _ => {
                return Err(LexError {
                    line,
                    col,
                    msg: format!("unexpected character `{c}`"),
                })
            }
        }
    }
    out.push(Spanned {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}
