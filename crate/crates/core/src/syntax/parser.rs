use crate::syntax::lexer::{lex, LexOptions, TokKind, Token};
use crate::syntax::{line_col, NodeData, NodeId, ParseError, Span, SyntaxTree};

pub(crate) fn parse_with_options(src: &str, opts: LexOptions) -> Result<SyntaxTree, ParseError> {
    let out = lex(src, opts)?;
    let mut line_starts = vec![0usize];
    for (i, b) in src.bytes().enumerate() {
        if b == b'\n' {
            line_starts.push(i + 1);
        }
    }
    let mut p = Parser { src, toks: out.tokens, pos: 0, nodes: Vec::new(), line_starts };
    let root = p.module()?;
    let mut leaves: Vec<NodeId> = (0..p.nodes.len())
        .map(NodeId)
        .filter(|&n| p.nodes[n.0].children.is_empty() && n != root)
        .collect();
    leaves.sort_by_key(|&n| p.nodes[n.0].span.start);
    Ok(SyntaxTree {
        src_len: src.len(),
        nodes: p.nodes,
        root,
        leaves,
        trivia: out.trivia,
    })
}

struct Parser<'s> {
    src: &'s str,
    toks: Vec<Token>,
    pos: usize,
    nodes: Vec<NodeData>,
    line_starts: Vec<usize>,
}

impl<'s> Parser<'s> {
    // ----- token helpers ----------------------------------------------------

    fn peek(&self) -> &TokKind {
        &self.toks[self.pos].kind
    }

    fn peek2(&self) -> &TokKind {
        &self.toks[(self.pos + 1).min(self.toks.len() - 1)].kind
    }

    fn here(&self) -> Span {
        self.toks[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, offset: usize, message: impl Into<String>) -> ParseError {
        let (line, col) = line_col(self.src, offset);
        ParseError { message: message.into(), line, col, offset }
    }

    fn err_here(&self, message: impl Into<String>) -> ParseError {
        self.err_at(self.here().start, message)
    }

    // ----- node construction ------------------------------------------------

    fn leaf(&mut self, kind: &'static str, span: Span) -> NodeId {
        self.nodes.push(NodeData { kind, span, parent: None, children: Vec::new() });
        NodeId(self.nodes.len() - 1)
    }

    fn hull(&self, children: &[NodeId]) -> Span {
        let start = self.nodes[children[0].0].span.start;
        let end = self.nodes[children.last().unwrap().0].span.end;
        Span::new(start, end)
    }

    fn interior(&mut self, kind: &'static str, children: Vec<NodeId>) -> NodeId {
        debug_assert!(!children.is_empty());
        let span = self.hull(&children);
        self.finish(kind, span, children)
    }

    /// Interior node whose span is widened to the start of its first line, so
    /// extracted statements keep their indentation.
    fn statement_node(&mut self, kind: &'static str, children: Vec<NodeId>) -> NodeId {
        let mut span = self.hull(&children);
        span.start = self.line_start_of(span.start);
        self.finish(kind, span, children)
    }

    fn finish(&mut self, kind: &'static str, span: Span, children: Vec<NodeId>) -> NodeId {
        self.nodes.push(NodeData { kind, span, parent: None, children: children.clone() });
        let id = NodeId(self.nodes.len() - 1);
        for c in children {
            self.nodes[c.0].parent = Some(id);
        }
        id
    }

    fn line_start_of(&self, offset: usize) -> usize {
        match self.line_starts.binary_search(&offset) {
            Ok(i) => self.line_starts[i],
            Err(i) => self.line_starts[i - 1],
        }
    }

    // ----- expectations -----------------------------------------------------

    fn expect_op(&mut self, op: &'static str) -> Result<NodeId, ParseError> {
        match self.peek() {
            TokKind::Op(o) if *o == op => {
                let t = self.bump();
                Ok(self.leaf(op, t.span))
            }
            _ => Err(self.err_here(format!("expected {op:?}"))),
        }
    }

    fn expect_kw(&mut self, kw: &'static str) -> Result<NodeId, ParseError> {
        match self.peek() {
            TokKind::Keyword(k) if *k == kw => {
                let t = self.bump();
                Ok(self.leaf(kw, t.span))
            }
            _ => Err(self.err_here(format!("expected keyword {kw:?}"))),
        }
    }

    fn expect_name(&mut self) -> Result<NodeId, ParseError> {
        match self.peek() {
            TokKind::Name => {
                let t = self.bump();
                Ok(self.leaf("identifier", t.span))
            }
            _ => Err(self.err_here("expected a name")),
        }
    }

    fn expect_newline(&mut self) -> Result<(), ParseError> {
        match self.peek() {
            TokKind::Newline => {
                self.bump();
                Ok(())
            }
            _ => Err(self.err_here("expected end of line")),
        }
    }

    fn at_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), TokKind::Keyword(k) if *k == kw)
    }

    fn at_op(&self, op: &str) -> bool {
        matches!(self.peek(), TokKind::Op(o) if *o == op)
    }

    // ----- grammar ----------------------------------------------------------

    fn module(&mut self) -> Result<NodeId, ParseError> {
        let mut children = Vec::new();
        while !matches!(self.peek(), TokKind::Eof) {
            children.push(self.statement()?);
        }
        let span = Span::new(0, self.src.len());
        Ok(self.finish("module", span, children))
    }

    fn statement(&mut self) -> Result<NodeId, ParseError> {
        match self.peek() {
            TokKind::Keyword("def") => self.def_stmt(),
            TokKind::Keyword("if") => self.if_stmt(),
            TokKind::Keyword("while") => self.while_stmt(),
            TokKind::Keyword("for") => self.for_stmt(),
            TokKind::Keyword("with") => self.with_stmt(),
            TokKind::Keyword("try") => self.try_stmt(),
            TokKind::Keyword("return") => {
                let kw = self.expect_kw("return")?;
                let mut children = vec![kw];
                if !matches!(self.peek(), TokKind::Newline) {
                    children.push(self.expression()?);
                }
                self.expect_newline()?;
                Ok(self.statement_node("return_statement", children))
            }
            TokKind::Keyword(k @ ("pass" | "break" | "continue")) => {
                let kind: &'static str = match *k {
                    "pass" => "pass_statement",
                    "break" => "break_statement",
                    _ => "continue_statement",
                };
                let kw = self.expect_kw(match kind {
                    "pass_statement" => "pass",
                    "break_statement" => "break",
                    _ => "continue",
                })?;
                self.expect_newline()?;
                Ok(self.statement_node(kind, vec![kw]))
            }
            TokKind::Keyword(k) => Err(self.err_here(format!("unexpected keyword {k:?}"))),
            TokKind::Indent => Err(self.err_here("unexpected indent")),
            TokKind::Dedent | TokKind::Newline | TokKind::Eof => {
                Err(self.err_here("expected a statement"))
            }
            _ => self.expr_or_assign(),
        }
    }

    fn block(&mut self) -> Result<NodeId, ParseError> {
        self.expect_newline()?;
        if !matches!(self.peek(), TokKind::Indent) {
            return Err(self.err_here("expected an indented block"));
        }
        self.bump();
        let mut stmts = Vec::new();
        while !matches!(self.peek(), TokKind::Dedent) {
            if matches!(self.peek(), TokKind::Eof) {
                return Err(self.err_here("unexpected end of file inside block"));
            }
            stmts.push(self.statement()?);
        }
        self.bump(); // dedent
        Ok(self.interior("block", stmts))
    }

    fn def_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("def")?];
        c.push(self.expect_name()?);
        c.push(self.expect_op("(")?);
        if !self.at_op(")") {
            c.push(self.expect_name()?);
            while self.at_op(",") {
                c.push(self.expect_op(",")?);
                if self.at_op(")") {
                    break;
                }
                c.push(self.expect_name()?);
            }
        }
        c.push(self.expect_op(")")?);
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        Ok(self.statement_node("function_definition", c))
    }

    fn if_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("if")?];
        c.push(self.expression()?);
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        while self.at_kw("elif") {
            let mut e = vec![self.expect_kw("elif")?];
            e.push(self.expression()?);
            e.push(self.expect_op(":")?);
            e.push(self.block()?);
            c.push(self.statement_node("elif_clause", e));
        }
        if self.at_kw("else") {
            let mut e = vec![self.expect_kw("else")?];
            e.push(self.expect_op(":")?);
            e.push(self.block()?);
            c.push(self.statement_node("else_clause", e));
        }
        Ok(self.statement_node("if_statement", c))
    }

    fn while_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("while")?];
        c.push(self.expression()?);
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        Ok(self.statement_node("while_statement", c))
    }

    fn for_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("for")?];
        c.push(self.expect_name()?);
        c.push(self.expect_kw("in")?);
        c.push(self.expression()?);
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        Ok(self.statement_node("for_statement", c))
    }

    fn with_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("with")?];
        c.push(self.expression()?);
        if self.at_kw("as") {
            c.push(self.expect_kw("as")?);
            c.push(self.expect_name()?);
        }
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        Ok(self.statement_node("with_statement", c))
    }

    fn try_stmt(&mut self) -> Result<NodeId, ParseError> {
        let mut c = vec![self.expect_kw("try")?];
        c.push(self.expect_op(":")?);
        c.push(self.block()?);
        let mut handled = false;
        while self.at_kw("except") {
            handled = true;
            let mut e = vec![self.expect_kw("except")?];
            if !self.at_op(":") {
                e.push(self.expression()?);
                if self.at_kw("as") {
                    e.push(self.expect_kw("as")?);
                    e.push(self.expect_name()?);
                }
            }
            e.push(self.expect_op(":")?);
            e.push(self.block()?);
            c.push(self.statement_node("except_clause", e));
        }
        if self.at_kw("finally") {
            handled = true;
            let mut e = vec![self.expect_kw("finally")?];
            e.push(self.expect_op(":")?);
            e.push(self.block()?);
            c.push(self.statement_node("finally_clause", e));
        }
        if !handled {
            return Err(self.err_here("expected except or finally"));
        }
        Ok(self.statement_node("try_statement", c))
    }

    fn expr_or_assign(&mut self) -> Result<NodeId, ParseError> {
        let e = self.expression()?;
        let assign_op = match self.peek() {
            TokKind::Op(o @ ("=" | "+=" | "-=" | "*=" | "/=")) => Some(*o),
            _ => None,
        };
        if let Some(op) = assign_op {
            let target_kind = self.nodes[e.0].kind;
            if !matches!(target_kind, "identifier" | "subscript" | "attribute") {
                let at = self.nodes[e.0].span.start;
                return Err(self.err_at(at, format!("invalid assignment target ({target_kind})")));
            }
            let op_leaf = self.expect_op(op)?;
            let value = self.expression()?;
            if self.at_op("=") {
                return Err(self.err_here("chained assignment is not supported"));
            }
            self.expect_newline()?;
            Ok(self.statement_node("assignment_statement", vec![e, op_leaf, value]))
        } else {
            self.expect_newline()?;
            Ok(self.statement_node("expression_statement", vec![e]))
        }
    }

    // expressions, loosest binding first
    fn expression(&mut self) -> Result<NodeId, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.and_expr()?;
        while self.at_kw("or") {
            let op = self.expect_kw("or")?;
            let rhs = self.and_expr()?;
            lhs = self.interior("boolean_operator", vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.not_expr()?;
        while self.at_kw("and") {
            let op = self.expect_kw("and")?;
            let rhs = self.not_expr()?;
            lhs = self.interior("boolean_operator", vec![lhs, op, rhs]);
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<NodeId, ParseError> {
        if self.at_kw("not") && !matches!(self.peek2(), TokKind::Keyword("in")) {
            let op = self.expect_kw("not")?;
            let operand = self.not_expr()?;
            return Ok(self.interior("unary_operator", vec![op, operand]));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<NodeId, ParseError> {
        let first = self.arith()?;
        let mut children = vec![first];
        loop {
            match self.peek() {
                TokKind::Op(o @ ("==" | "!=" | "<" | ">" | "<=" | ">=")) => {
                    let o = *o;
                    children.push(self.expect_op(o)?);
                }
                TokKind::Keyword("in") => children.push(self.expect_kw("in")?),
                TokKind::Keyword("not") if matches!(self.peek2(), TokKind::Keyword("in")) => {
                    children.push(self.expect_kw("not")?);
                    children.push(self.expect_kw("in")?);
                }
                TokKind::Keyword("is") => {
                    children.push(self.expect_kw("is")?);
                    if self.at_kw("not") {
                        children.push(self.expect_kw("not")?);
                    }
                }
                _ => break,
            }
            children.push(self.arith()?);
        }
        if children.len() == 1 {
            Ok(children.pop().unwrap())
        } else {
            Ok(self.interior("comparison", children))
        }
    }

    fn arith(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                TokKind::Op(o @ ("+" | "-")) => *o,
                _ => break,
            };
            let op_leaf = self.expect_op(op)?;
            let rhs = self.term()?;
            lhs = self.interior("binary_operator", vec![lhs, op_leaf, rhs]);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<NodeId, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                TokKind::Op(o @ ("*" | "/" | "//" | "%")) => *o,
                _ => break,
            };
            let op_leaf = self.expect_op(op)?;
            let rhs = self.factor()?;
            lhs = self.interior("binary_operator", vec![lhs, op_leaf, rhs]);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<NodeId, ParseError> {
        if let TokKind::Op(o @ ("-" | "+")) = self.peek() {
            let o = *o;
            let op = self.expect_op(o)?;
            let operand = self.factor()?;
            return Ok(self.interior("unary_operator", vec![op, operand]));
        }
        self.power()
    }

    fn power(&mut self) -> Result<NodeId, ParseError> {
        let base = self.postfix()?;
        if self.at_op("**") {
            let op = self.expect_op("**")?;
            let exp = self.factor()?; // right associative
            return Ok(self.interior("binary_operator", vec![base, op, exp]));
        }
        Ok(base)
    }

    fn postfix(&mut self) -> Result<NodeId, ParseError> {
        let mut e = self.atom()?;
        loop {
            if self.at_op("(") {
                let mut c = vec![e, self.expect_op("(")?];
                if !self.at_op(")") {
                    c.push(self.expression()?);
                    while self.at_op(",") {
                        c.push(self.expect_op(",")?);
                        if self.at_op(")") {
                            break;
                        }
                        c.push(self.expression()?);
                    }
                }
                c.push(self.expect_op(")")?);
                e = self.interior("function_call", c);
            } else if self.at_op("[") {
                let mut c = vec![e, self.expect_op("[")?];
                c.push(self.expression()?);
                c.push(self.expect_op("]")?);
                e = self.interior("subscript", c);
            } else if self.at_op(".") {
                let dot = self.expect_op(".")?;
                let name = self.expect_name()?;
                e = self.interior("attribute", vec![e, dot, name]);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn atom(&mut self) -> Result<NodeId, ParseError> {
        match self.peek() {
            TokKind::Name => self.expect_name(),
            TokKind::Number => {
                let t = self.bump();
                Ok(self.leaf("number", t.span))
            }
            TokKind::Str => {
                let t = self.bump();
                Ok(self.leaf("string", t.span))
            }
            TokKind::Keyword(k @ ("True" | "False" | "None")) => {
                let k = *k;
                self.expect_kw(k)
            }
            TokKind::Op("(") => {
                let open = self.expect_op("(")?;
                let inner = self.expression()?;
                let close = self.expect_op(")")?;
                Ok(self.interior("parenthesized_expression", vec![open, inner, close]))
            }
            TokKind::Op("[") => {
                let mut c = vec![self.expect_op("[")?];
                if !self.at_op("]") {
                    c.push(self.expression()?);
                    while self.at_op(",") {
                        c.push(self.expect_op(",")?);
                        if self.at_op("]") {
                            break;
                        }
                        c.push(self.expression()?);
                    }
                }
                c.push(self.expect_op("]")?);
                Ok(self.interior("list", c))
            }
            _ => Err(self.err_here("expected an expression")),
        }
    }
}
