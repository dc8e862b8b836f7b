//! Java tokenizer. Comments are dropped; `>` is always emitted alone so the
//! parser can split `>>` in generic type arguments.

use super::ast::Span;
use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokKind {
    Ident,
    Keyword,
    Int,
    Float,
    Char,
    Str,
    TextBlock,
    Punct,
    Eof,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub kind: TokKind,
    pub text: String,
    pub span: Span,
    /// Byte offsets into the source.
    pub start: usize,
    pub end: usize,
}

const KEYWORDS: &[&str] = &[
    "abstract", "assert", "boolean", "break", "byte", "case", "catch", "char", "class", "const",
    "continue", "default", "do", "double", "else", "enum", "extends", "final", "finally", "float",
    "for", "goto", "if", "implements", "import", "instanceof", "int", "interface", "long",
    "native", "new", "package", "private", "protected", "public", "return", "short", "static",
    "strictfp", "super", "switch", "synchronized", "this", "throw", "throws", "transient", "try",
    "void", "volatile", "while", "true", "false", "null",
];

// longest first
const PUNCT: &[&str] = &[
    "<<=", "...", "->", "::", "++", "--", "&&", "||", "==", "!=", "<=", "+=", "-=", "*=", "/=",
    "%=", "&=", "|=", "^=", "<<", "(", ")", "{", "}", "[", "]", ";", ",", ".", "@", "=", ">",
    "<", "!", "~", "?", ":", "+", "-", "*", "/", "&", "|", "^", "%",
];

pub fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: usize,
    col: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.src[self.pos..].chars().nth(n)
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, message: impl Into<String>) -> ParseError {
        ParseError::Syntax {
            line: self.line,
            col: self.col,
            message: message.into(),
        }
    }
}

fn is_ident_start(c: char) -> bool {
    c.is_alphabetic() || c == '_' || c == '$'
}

fn is_ident_part(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

pub fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let mut cur = Cursor {
        src,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    loop {
        // whitespace and comments
        loop {
            match cur.peek() {
                Some(c) if c.is_whitespace() || c == '\u{feff}' => {
                    cur.bump();
                }
                Some('/') if cur.peek_at(1) == Some('/') => {
                    while let Some(c) = cur.peek() {
                        if c == '\n' {
                            break;
                        }
                        cur.bump();
                    }
                }
                Some('/') if cur.peek_at(1) == Some('*') => {
                    let (l, c) = (cur.line, cur.col);
                    cur.bump();
                    cur.bump();
                    loop {
                        match cur.peek() {
                            None => {
                                return Err(ParseError::Syntax {
                                    line: l,
                                    col: c,
                                    message: "unterminated block comment".into(),
                                })
                            }
                            Some('*') if cur.peek_at(1) == Some('/') => {
                                cur.bump();
                                cur.bump();
                                break;
                            }
                            _ => {
                                cur.bump();
                            }
                        }
                    }
                }
                _ => break,
            }
        }
        let (line, col, start) = (cur.line, cur.col, cur.pos);
        let Some(c) = cur.peek() else {
            out.push(Token {
                kind: TokKind::Eof,
                text: String::new(),
                span: Span::new(line, col, line, col),
                start,
                end: start,
            });
            return Ok(out);
        };
        let kind = if is_ident_start(c) {
            while cur.peek().is_some_and(is_ident_part) {
                cur.bump();
            }
            if is_keyword(&src[start..cur.pos]) {
                TokKind::Keyword
            } else {
                TokKind::Ident
            }
        } else if c.is_ascii_digit() || (c == '.' && cur.peek_at(1).is_some_and(|d| d.is_ascii_digit())) {
            lex_number(&mut cur)?
        } else if c == '"' {
            if cur.rest().starts_with("\"\"\"") {
                lex_text_block(&mut cur)?;
                TokKind::TextBlock
            } else {
                lex_quoted(&mut cur, '"')?;
                TokKind::Str
            }
        } else if c == '\'' {
            lex_quoted(&mut cur, '\'')?;
            TokKind::Char
        } else if let Some(p) = PUNCT.iter().find(|p| cur.rest().starts_with(**p)) {
            for _ in 0..p.len() {
                cur.bump();
            }
            TokKind::Punct
        } else {
            return Err(cur.err(format!("unexpected character {c:?}")));
        };
        // end column is inclusive: the column of the last char
        let text = &src[start..cur.pos];
        let (end_line, end_col) = last_position(line, col, text);
        out.push(Token {
            kind,
            text: text.to_string(),
            span: Span::new(line, col, end_line, end_col),
            start,
            end: cur.pos,
        });
    }
}

fn last_position(line: usize, col: usize, text: &str) -> (usize, usize) {
    let (mut l, mut c) = (line, col);
    let mut first = true;
    for ch in text.chars() {
        if first {
            first = false;
            continue;
        }
        if ch == '\n' {
            l += 1;
            c = 0;
        } else {
            c += 1;
        }
    }
    (l, c.max(1))
}

fn lex_number(cur: &mut Cursor) -> Result<TokKind, ParseError> {
    let mut float = false;
    let rest = cur.rest();
    if rest.starts_with("0x") || rest.starts_with("0X") || rest.starts_with("0b") || rest.starts_with("0B") {
        cur.bump();
        cur.bump();
        while cur.peek().is_some_and(|c| c.is_ascii_hexdigit() || c == '_') {
            cur.bump();
        }
        // hex floating point is rare enough to reject
        if cur.peek() == Some('.') || cur.peek().is_some_and(|c| c == 'p' || c == 'P') {
            return Err(cur.err("hexadecimal floating point literals are not supported"));
        }
    } else {
        while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
            cur.bump();
        }
        if cur.peek() == Some('.') && cur.peek_at(1).map_or(true, |c| !is_ident_start(c) && c != '.') {
            float = true;
            cur.bump();
            while cur.peek().is_some_and(|c| c.is_ascii_digit() || c == '_') {
                cur.bump();
            }
        }
        if cur.peek().is_some_and(|c| c == 'e' || c == 'E') {
            float = true;
            cur.bump();
            if cur.peek().is_some_and(|c| c == '+' || c == '-') {
                cur.bump();
            }
            while cur.peek().is_some_and(|c| c.is_ascii_digit()) {
                cur.bump();
            }
        }
    }
    match cur.peek() {
        Some('l' | 'L') => {
            cur.bump();
        }
        Some('f' | 'F' | 'd' | 'D') => {
            float = true;
            cur.bump();
        }
        _ => {}
    }
    if cur.peek().is_some_and(is_ident_part) {
        return Err(cur.err("malformed number literal"));
    }
    Ok(if float { TokKind::Float } else { TokKind::Int })
}

fn lex_quoted(cur: &mut Cursor, quote: char) -> Result<(), ParseError> {
    let (line, col) = (cur.line, cur.col);
    cur.bump();
    loop {
        match cur.bump() {
            None | Some('\n') => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    message: "unterminated literal".into(),
                })
            }
            Some('\\') => {
                cur.bump();
            }
            Some(c) if c == quote => return Ok(()),
            _ => {}
        }
    }
}

fn lex_text_block(cur: &mut Cursor) -> Result<(), ParseError> {
    let (line, col) = (cur.line, cur.col);
    for _ in 0..3 {
        cur.bump();
    }
    loop {
        if cur.rest().starts_with("\"\"\"") {
            for _ in 0..3 {
                cur.bump();
            }
            return Ok(());
        }
        match cur.bump() {
            None => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    message: "unterminated text block".into(),
                })
            }
            Some('\\') => {
                cur.bump();
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<(TokKind, String)> {
        tokenize(src)
            .unwrap()
            .into_iter()
            .map(|t| (t.kind, t.text))
            .collect()
    }

    #[test]
    fn comments_are_skipped() {
        let toks = kinds("a /* x\n y */ b // c\n d");
        let texts: Vec<_> = toks.iter().map(|t| t.1.as_str()).collect();
        assert_eq!(texts, ["a", "b", "d", ""]);
    }

    #[test]
    fn numbers_and_literals() {
        let toks = kinds(r#"1 2L 3.5f .5 0xFF 1e-3 'a' '\'' "s\"t""#);
        let ks: Vec<_> = toks.iter().map(|t| t.0).collect();
        use TokKind::*;
        assert_eq!(ks, [Int, Int, Float, Float, Int, Float, Char, Char, Str, Eof]);
    }

    #[test]
    fn shift_is_split() {
        let toks = kinds("a >>= b");
        let texts: Vec<_> = toks.iter().map(|t| t.1.as_str()).collect();
        assert_eq!(texts, ["a", ">", ">", "=", "b", ""]);
    }

    #[test]
    fn spans_are_one_based() {
        let toks = tokenize("ab\n  cd").unwrap();
        assert_eq!(toks[0].span, Span::new(1, 1, 1, 2));
        assert_eq!(toks[1].span, Span::new(2, 3, 2, 4));
    }

    #[test]
    fn member_access_on_int_is_not_float() {
        let toks = kinds("1..2");
        assert_eq!(toks[0].1, "1");
    }

    #[test]
    fn unterminated_string_fails() {
        assert!(tokenize("\"abc").is_err());
    }
}
