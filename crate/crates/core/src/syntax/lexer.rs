use super::SyntaxError;

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Tok {
    LParen,
    RParen,
    Int(i64),
    Char(char),
    Bool(bool),
    Sym(String),
    Eof,
}

impl Tok {
    pub(crate) fn describe(&self) -> String {
        match self {
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Int(i) => format!("integer {i}"),
            Tok::Char(c) => format!("character '{}'", super::escape_char(*c)),
            Tok::Bool(b) => format!("boolean {}", if *b { "#t" } else { "#f" }),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

fn is_delim(c: char) -> bool {
    c.is_whitespace() || c == '(' || c == ')' || c == ';'
}

pub(crate) fn lex(src: &str) -> Result<Vec<Token>, SyntaxError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let invalid = |line, col, message: String| SyntaxError::Invalid { line, col, message };
    while i < chars.len() {
        let c = chars[i];
        let (tl, tc) = (line, col);
        let mut advance = |n: usize, i: &mut usize| {
            for _ in 0..n {
                if chars[*i] == '\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                *i += 1;
            }
        };
        if c == ';' {
            while i < chars.len() && chars[i] != '\n' {
                advance(1, &mut i);
            }
            continue;
        }
        if c.is_whitespace() {
            advance(1, &mut i);
            continue;
        }
        let tok = match c {
            '(' => {
                advance(1, &mut i);
                Tok::LParen
            }
            ')' => {
                advance(1, &mut i);
                Tok::RParen
            }
            '\'' => {
                let (ch, len) = lex_char(&chars[i..])
                    .ok_or_else(|| invalid(tl, tc, "malformed character literal".into()))?;
                advance(len, &mut i);
                Tok::Char(ch)
            }
            _ => {
                let start = i;
                while i < chars.len() && !is_delim(chars[i]) {
                    advance(1, &mut i);
                }
                let word: String = chars[start..i].iter().collect();
                classify(&word).map_err(|m| invalid(tl, tc, m))?
            }
        };
        out.push(Token {
            tok,
            line: tl,
            col: tc,
        });
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        col,
    });
    Ok(out)
}

fn classify(word: &str) -> Result<Tok, String> {
    match word {
        "#t" => return Ok(Tok::Bool(true)),
        "#f" => return Ok(Tok::Bool(false)),
        _ => {}
    }
    let digits = word.strip_prefix('-').unwrap_or(word);
    if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
        return word
            .parse::<i64>()
            .map(Tok::Int)
            .map_err(|_| format!("integer literal `{word}` out of range"));
    }
    if word.starts_with('#') {
        return Err(format!("unknown literal `{word}`"));
    }
    Ok(Tok::Sym(word.to_string()))
}

/// Lexes `'c'` at the start of `s`; returns the character and consumed length.
fn lex_char(s: &[char]) -> Option<(char, usize)> {
    if s.first() != Some(&'\'') {
        return None;
    }
    let (c, body_len) = match *s.get(1)? {
        '\\' => match *s.get(2)? {
            '\\' => ('\\', 2),
            '\'' => ('\'', 2),
            'n' => ('\n', 2),
            't' => ('\t', 2),
            'r' => ('\r', 2),
            '0' => ('\0', 2),
            'u' => {
                if *s.get(3)? != '{' {
                    return None;
                }
                let close = s[4..].iter().position(|&c| c == '}')?;
                let hex: String = s[4..4 + close].iter().collect();
                if hex.is_empty() || hex.len() > 6 {
                    return None;
                }
                let code = u32::from_str_radix(&hex, 16).ok()?;
                (char::from_u32(code)?, 4 + close)
            }
            _ => return None,
        },
        '\n' => return None,
        c => (c, 1),
    };
    if *s.get(1 + body_len)? != '\'' {
        return None;
    }
    Some((c, body_len + 2))
}
