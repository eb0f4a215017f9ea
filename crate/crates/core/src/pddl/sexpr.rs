//! Tokenizer and s-expression reader with source positions.

use std::fmt;

use super::PddlError;

/// 1-based line and column of a token in the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default)]
pub struct Pos {
    pub line: usize,
    pub col: usize,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sexpr {
    Atom { text: String, pos: Pos },
    List { items: Vec<Sexpr>, pos: Pos },
}

impl Sexpr {
    pub fn pos(&self) -> Pos {
        match self {
            Sexpr::Atom { pos, .. } | Sexpr::List { pos, .. } => *pos,
        }
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            Sexpr::Atom { text, .. } => Some(text),
            Sexpr::List { .. } => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Sexpr]> {
        match self {
            Sexpr::List { items, .. } => Some(items),
            Sexpr::Atom { .. } => None,
        }
    }

    /// True when this is an atom equal to `kw`, ignoring ASCII case.
    pub fn is_keyword(&self, kw: &str) -> bool {
        self.as_atom().is_some_and(|t| t.eq_ignore_ascii_case(kw))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Open(Pos),
    Close(Pos),
    Word(String, Pos),
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut line = 1;
    let mut col = 1;
    let mut word = String::new();
    let mut word_pos = Pos::default();
    let mut in_comment = false;

    let flush = |word: &mut String, word_pos: Pos, tokens: &mut Vec<Token>| {
        if !word.is_empty() {
            tokens.push(Token::Word(std::mem::take(word), word_pos));
        }
    };

    for ch in text.chars() {
        let here = Pos { line, col };
        if in_comment {
            if ch == '\n' {
                in_comment = false;
            }
        } else {
            match ch {
                ';' => {
                    flush(&mut word, word_pos, &mut tokens);
                    in_comment = true;
                }
                '(' => {
                    flush(&mut word, word_pos, &mut tokens);
                    tokens.push(Token::Open(here));
                }
                ')' => {
                    flush(&mut word, word_pos, &mut tokens);
                    tokens.push(Token::Close(here));
                }
                c if c.is_whitespace() => flush(&mut word, word_pos, &mut tokens),
                c => {
                    if word.is_empty() {
                        word_pos = here;
                    }
                    word.push(c);
                }
            }
        }
        if ch == '\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    flush(&mut word, word_pos, &mut tokens);
    tokens
}

fn end_pos(text: &str) -> Pos {
    let line = text.matches('\n').count() + 1;
    let col = text.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    Pos { line, col }
}

/// Reads exactly one top-level s-expression; trailing tokens are an error.
pub fn read_one(text: &str) -> Result<Sexpr, PddlError> {
    let tokens = tokenize(text);
    let eof = end_pos(text);
    let mut idx = 0;
    let expr = read_expr(&tokens, &mut idx, eof)?;
    if let Some(tok) = tokens.get(idx) {
        let pos = match tok {
            Token::Open(p) | Token::Close(p) | Token::Word(_, p) => *p,
        };
        return Err(PddlError::Syntax {
            pos,
            expected: "end of input".into(),
        });
    }
    Ok(expr)
}

fn read_expr(tokens: &[Token], idx: &mut usize, eof: Pos) -> Result<Sexpr, PddlError> {
    match tokens.get(*idx) {
        None => Err(PddlError::Syntax {
            pos: eof,
            expected: "`(`".into(),
        }),
        Some(Token::Close(pos)) => Err(PddlError::Syntax {
            pos: *pos,
            expected: "expression".into(),
        }),
        Some(Token::Word(text, pos)) => {
            *idx += 1;
            Ok(Sexpr::Atom {
                text: text.clone(),
                pos: *pos,
            })
        }
        Some(Token::Open(pos)) => {
            let open = *pos;
            *idx += 1;
            let mut items = Vec::new();
            loop {
                match tokens.get(*idx) {
                    None => {
                        return Err(PddlError::Syntax {
                            pos: eof,
                            expected: format!("`)` closing list opened at {open}"),
                        })
                    }
                    Some(Token::Close(_)) => {
                        *idx += 1;
                        return Ok(Sexpr::List { items, pos: open });
                    }
                    Some(_) => items.push(read_expr(tokens, idx, eof)?),
                }
            }
        }
    }
}
