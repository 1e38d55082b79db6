use crate::syntax::{line_col, ParseError, Span};

/// Lexer options. `tab_width` controls how tabs advance the indentation
/// column (default 8, i.e. tabs align to the next multiple of 8).
#[derive(Debug, Clone, Copy)]
pub struct LexOptions {
    pub tab_width: usize,
}

impl Default for LexOptions {
    fn default() -> Self {
        LexOptions { tab_width: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TokKind {
    Name,
    Number,
    Str,
    Op(&'static str),
    Keyword(&'static str),
    Newline,
    Indent,
    Dedent,
    Eof,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub kind: TokKind,
    pub span: Span,
}

pub(crate) struct LexOutput {
    pub tokens: Vec<Token>,
    /// Byte spans of whitespace, comments and newlines, in source order.
    pub trivia: Vec<Span>,
}

const KEYWORDS: &[&str] = &[
    "def", "return", "if", "elif", "else", "for", "while", "with", "as", "try", "except",
    "finally", "pass", "break", "continue", "and", "or", "not", "in", "is", "True", "False",
    "None",
];

// longest first so that e.g. `**` wins over `*`
const OPS: &[&str] = &[
    "**", "//", "==", "!=", "<=", ">=", "+=", "-=", "*=", "/=", "(", ")", "[", "]", ",", ":",
    ".", "=", "+", "-", "*", "/", "%", "<", ">",
];

pub(crate) fn lex(src: &str, opts: LexOptions) -> Result<LexOutput, ParseError> {
    Lexer {
        src,
        bytes: src.as_bytes(),
        pos: 0,
        opts,
        tokens: Vec::new(),
        trivia: Vec::new(),
        indents: Vec::new(),
        paren_depth: 0,
        line_has_token: false,
        at_line_start: true,
    }
    .run()
}

struct Lexer<'s> {
    src: &'s str,
    bytes: &'s [u8],
    pos: usize,
    opts: LexOptions,
    tokens: Vec<Token>,
    trivia: Vec<Span>,
    indents: Vec<usize>,
    paren_depth: usize,
    line_has_token: bool,
    at_line_start: bool,
}

impl<'s> Lexer<'s> {
    fn err(&self, offset: usize, message: impl Into<String>) -> ParseError {
        let (line, col) = line_col(self.src, offset);
        ParseError { message: message.into(), line, col, offset }
    }

    fn push_trivia(&mut self, start: usize, end: usize) {
        if end > start {
            self.trivia.push(Span::new(start, end));
        }
    }

    fn emit(&mut self, kind: TokKind, start: usize, end: usize) {
        self.tokens.push(Token { kind, span: Span::new(start, end) });
    }

    fn run(mut self) -> Result<LexOutput, ParseError> {
        while self.pos < self.bytes.len() {
            if self.at_line_start && self.paren_depth == 0 {
                self.handle_line_start()?;
                continue;
            }
            let b = self.bytes[self.pos];
            match b {
                b' ' | b'\t' => {
                    let start = self.pos;
                    while self.pos < self.bytes.len()
                        && matches!(self.bytes[self.pos], b' ' | b'\t')
                    {
                        self.pos += 1;
                    }
                    self.push_trivia(start, self.pos);
                }
                b'#' => {
                    let start = self.pos;
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                    self.push_trivia(start, self.pos);
                }
                b'\n' => {
                    self.push_trivia(self.pos, self.pos + 1);
                    if self.paren_depth == 0 {
                        if self.line_has_token {
                            self.emit(TokKind::Newline, self.pos, self.pos + 1);
                            self.line_has_token = false;
                        }
                        self.at_line_start = true;
                    }
                    self.pos += 1;
                }
                b'"' | b'\'' => self.lex_string()?,
                b'0'..=b'9' => self.lex_number(),
                b'_' | b'a'..=b'z' | b'A'..=b'Z' => self.lex_name(),
                _ => {
                    if let Some(op) = OPS.iter().find(|op| self.src[self.pos..].starts_with(**op))
                    {
                        let start = self.pos;
                        self.pos += op.len();
                        match *op {
                            "(" | "[" => self.paren_depth += 1,
                            ")" | "]" => self.paren_depth = self.paren_depth.saturating_sub(1),
                            _ => {}
                        }
                        self.emit(TokKind::Op(op), start, self.pos);
                        self.line_has_token = true;
                    } else {
                        let ch = self.src[self.pos..].chars().next().unwrap_or('?');
                        return Err(self.err(self.pos, format!("unsupported character {ch:?}")));
                    }
                }
            }
        }

        // EOF: close the last logical line and drain open indentation levels.
        if self.line_has_token {
            self.emit(TokKind::Newline, self.pos, self.pos);
        }
        while self.indents.len() > 1 {
            self.indents.pop();
            self.emit(TokKind::Dedent, self.pos, self.pos);
        }
        self.emit(TokKind::Eof, self.pos, self.pos);
        Ok(LexOutput { tokens: self.tokens, trivia: self.trivia })
    }

    /// Measures indentation, skips blank/comment-only lines, and emits
    /// Indent/Dedent tokens. The first logical line sets the base level, so
    /// uniformly indented fragments (extracted statements) lex fine.
    fn handle_line_start(&mut self) -> Result<(), ParseError> {
        let line_start = self.pos;
        let mut col = 0usize;
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' => {
                    col += 1;
                    self.pos += 1;
                }
                b'\t' => {
                    col = (col / self.opts.tab_width + 1) * self.opts.tab_width;
                    self.pos += 1;
                }
                _ => break,
            }
        }
        // blank line or comment-only line: all trivia, no indent bookkeeping
        if self.pos >= self.bytes.len() {
            self.push_trivia(line_start, self.pos);
            return Ok(());
        }
        match self.bytes[self.pos] {
            b'\n' => {
                self.push_trivia(line_start, self.pos + 1);
                self.pos += 1;
                return Ok(());
            }
            b'#' => {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                if self.pos < self.bytes.len() {
                    self.pos += 1; // the newline
                }
                self.push_trivia(line_start, self.pos);
                return Ok(());
            }
            _ => {}
        }
        self.push_trivia(line_start, self.pos);
        if self.indents.is_empty() {
            self.indents.push(col);
        } else {
            let top = *self.indents.last().unwrap();
            if col > top {
                self.indents.push(col);
                self.emit(TokKind::Indent, self.pos, self.pos);
            } else if col < top {
                while self.indents.len() > 1 && *self.indents.last().unwrap() > col {
                    self.indents.pop();
                    self.emit(TokKind::Dedent, self.pos, self.pos);
                }
                if *self.indents.last().unwrap() != col {
                    return Err(self.err(self.pos, "inconsistent dedent"));
                }
            }
        }
        self.at_line_start = false;
        Ok(())
    }

    fn lex_name(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && matches!(self.bytes[self.pos], b'_' | b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9')
        {
            self.pos += 1;
        }
        let text = &self.src[start..self.pos];
        let kind = match KEYWORDS.iter().find(|k| **k == text) {
            Some(k) => TokKind::Keyword(k),
            None => TokKind::Name,
        };
        self.emit(kind, start, self.pos);
        self.line_has_token = true;
    }

    fn lex_number(&mut self) {
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && self.bytes[self.pos] == b'.' {
            self.pos += 1;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
        }
        self.emit(TokKind::Number, start, self.pos);
        self.line_has_token = true;
    }

    fn lex_string(&mut self) -> Result<(), ParseError> {
        let start = self.pos;
        let quote = self.bytes[self.pos];
        let triple = self.src[self.pos..].starts_with(if quote == b'"' { "\"\"\"" } else { "'''" });
        let closer_len = if triple { 3 } else { 1 };
        self.pos += closer_len;
        loop {
            if self.pos >= self.bytes.len() {
                return Err(self.err(start, "unterminated string literal"));
            }
            let b = self.bytes[self.pos];
            if b == b'\\' {
                self.pos += 2;
                continue;
            }
            if !triple && b == b'\n' {
                return Err(self.err(start, "unterminated string literal"));
            }
            if b == quote {
                if !triple {
                    self.pos += 1;
                    break;
                }
                if self.src[self.pos..].as_bytes().starts_with(&[quote, quote, quote]) {
                    self.pos += 3;
                    break;
                }
                self.pos += 1;
                continue;
            }
            self.pos += 1;
        }
        if self.pos > self.bytes.len() {
            return Err(self.err(start, "unterminated string literal"));
        }
        self.emit(TokKind::Str, start, self.pos);
        self.line_has_token = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(src: &str) -> Vec<TokKind> {
        lex(src, LexOptions::default())
            .unwrap()
            .tokens
            .into_iter()
            .map(|t| t.kind)
            .collect()
    }

    #[test]
    fn simple_line() {
        assert_eq!(
            kinds("x = 1\n"),
            vec![
                TokKind::Name,
                TokKind::Op("="),
                TokKind::Number,
                TokKind::Newline,
                TokKind::Eof
            ]
        );
    }

    #[test]
    fn indent_dedent_pairing() {
        let ks = kinds("if x:\n    y = 1\nz = 2\n");
        let indents = ks.iter().filter(|k| **k == TokKind::Indent).count();
        let dedents = ks.iter().filter(|k| **k == TokKind::Dedent).count();
        assert_eq!(indents, 1);
        assert_eq!(dedents, 1);
    }

    #[test]
    fn blank_and_comment_lines_are_trivia() {
        let out = lex("x = 1\n\n# comment\n    \ny = 2\n", LexOptions::default()).unwrap();
        let newlines = out.tokens.iter().filter(|t| t.kind == TokKind::Newline).count();
        assert_eq!(newlines, 2, "blank/comment lines emit no Newline");
    }

    #[test]
    fn parens_join_lines() {
        let ks = kinds("x = f(1,\n      2)\n");
        let newlines = ks.iter().filter(|k| **k == TokKind::Newline).count();
        assert_eq!(newlines, 1);
    }

    #[test]
    fn missing_final_newline_still_closes_line() {
        let ks = kinds("x = 1");
        assert_eq!(ks.last(), Some(&TokKind::Eof));
        assert!(ks.contains(&TokKind::Newline));
    }

    #[test]
    fn multi_char_ops_win() {
        let ks = kinds("a **= 1\n"); // `**=` isn't an operator: lexes as `**`, `=`
        assert!(ks.contains(&TokKind::Op("**")));
        let ks = kinds("a //b\n");
        assert!(ks.contains(&TokKind::Op("//")));
    }

    #[test]
    fn strings_with_escapes_and_triples() {
        let out = lex("s = \"a\\\"b\"\nd = '''x\ny'''\n", LexOptions::default()).unwrap();
        let strs: Vec<_> = out.tokens.iter().filter(|t| t.kind == TokKind::Str).collect();
        assert_eq!(strs.len(), 2);
        assert!(lex("s = 'oops\n", LexOptions::default()).is_err());
        assert!(lex("s = '''never closed\n", LexOptions::default()).is_err());
    }

    #[test]
    fn trivia_covers_all_gaps() {
        let src = "x = 1  # note\n\nif x:\n    y = 2\n";
        let out = lex(src, LexOptions::default()).unwrap();
        let mut covered = vec![false; src.len()];
        for t in &out.tokens {
            if matches!(t.kind, TokKind::Newline | TokKind::Indent | TokKind::Dedent | TokKind::Eof)
            {
                continue;
            }
            for c in &mut covered[t.span.start..t.span.end] {
                *c = true;
            }
        }
        for sp in &out.trivia {
            for c in &mut covered[sp.start..sp.end] {
                assert!(!*c, "trivia overlaps token");
                *c = true;
            }
        }
        assert!(covered.iter().all(|&c| c));
    }
}
