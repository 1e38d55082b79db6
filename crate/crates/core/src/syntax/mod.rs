//! Indentation-sensitive parsing of a Python subset into concrete syntax
//! trees with byte spans.
//!
//! Supported: `def`, `if`/`elif`/`else`, `for`, `while`, `with`,
//! `try`/`except`/`finally`, `return`/`pass`/`break`/`continue`, assignments
//! (plain and augmented), expression statements, calls, subscripts,
//! attributes, the usual operators, list literals, comments, and
//! string/number literals (including triple-quoted docstrings).
//!
//! Every lexical token becomes a leaf node; whitespace, newlines and comments
//! are recorded as trivia spans, so leaves plus trivia tile the source
//! exactly. Statement spans start at the beginning of their first line
//! (including the indentation), which keeps multi-clause statements
//! re-parseable after extraction: the lexer treats the indentation of the
//! first logical line as the base level rather than requiring column zero.

mod lexer;
mod parser;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use lexer::LexOptions;

/// Half-open byte range into a source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, other: &Span) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

/// A source text plus the id it is referred to by.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceText {
    pub id: String,
    pub text: String,
}

impl SourceText {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        SourceText { id: id.into(), text: text.into() }
    }
}

/// Set of node-kind names, e.g. `{"for_statement", "if_statement"}`.
pub type NodeTypeSet = BTreeSet<String>;

/// Builds a [`NodeTypeSet`] from kind names.
pub fn node_type_set(kinds: &[&str]) -> NodeTypeSet {
    kinds.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
struct NodeData {
    kind: &'static str,
    span: Span,
    parent: Option<NodeId>,
    children: Vec<NodeId>,
}

/// Concrete syntax tree over one source text. Nodes live in an arena indexed
/// by [`NodeId`]; the root covers the full byte range.
#[derive(Debug, Clone)]
pub struct SyntaxTree {
    src_len: usize,
    nodes: Vec<NodeData>,
    root: NodeId,
    leaves: Vec<NodeId>,
    trivia: Vec<Span>,
}

impl SyntaxTree {
    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn kind(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].kind
    }

    pub fn span(&self, id: NodeId) -> Span {
        self.nodes[id.0].span
    }

    pub fn parent(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    pub fn children(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].children
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].children.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// All leaf nodes in source order.
    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    /// Whitespace/comment/newline spans not owned by any leaf, in source order.
    pub fn trivia(&self) -> &[Span] {
        &self.trivia
    }

    /// Walks `id`, then its parent, up to and including the root.
    pub fn ancestors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        std::iter::successors(self.parent(id), move |&n| self.parent(n))
    }

    /// The source text of a node.
    pub fn text<'a>(&self, src: &'a str, id: NodeId) -> &'a str {
        let sp = self.span(id);
        &src[sp.start..sp.end]
    }

    /// Source length this tree was parsed from.
    pub fn src_len(&self) -> usize {
        self.src_len
    }

    /// True when `kind` names a statement-level node.
    pub fn is_statement(&self, id: NodeId) -> bool {
        STATEMENT_KINDS.contains(&self.kind(id))
    }
}

/// Node kinds that are statements (insertion points for generated code,
/// members of block bodies).
pub const STATEMENT_KINDS: &[&str] = &[
    "function_definition",
    "if_statement",
    "while_statement",
    "for_statement",
    "with_statement",
    "try_statement",
    "return_statement",
    "pass_statement",
    "break_statement",
    "continue_statement",
    "assignment_statement",
    "expression_statement",
];

/// Parse failure with 1-based line/column.
#[derive(Debug, Clone, Error, PartialEq, Eq)]
#[error("ParseError at line {line}, column {col}: {message}")]
pub struct ParseError {
    pub message: String,
    pub line: usize,
    pub col: usize,
    pub offset: usize,
}

/// Anything that can produce a [`SyntaxTree`] for a source text. The built-in
/// recursive-descent parser is the only implementation shipped; the seam
/// exists so an external grammar could be swapped in without touching pair
/// generation.
pub trait SyntaxTreeProvider {
    fn parse_source(&self, src: &SourceText) -> Result<SyntaxTree, ParseError>;
}

/// The built-in subset parser.
#[derive(Debug, Clone, Default)]
pub struct SubsetParser {
    pub options: LexOptions,
}

impl SyntaxTreeProvider for SubsetParser {
    fn parse_source(&self, src: &SourceText) -> Result<SyntaxTree, ParseError> {
        parser::parse_with_options(&src.text, self.options)
    }
}

/// Parses `src` with default options (tab stop of 8 columns).
pub fn parse(src: &str) -> Result<SyntaxTree, ParseError> {
    parser::parse_with_options(src, LexOptions::default())
}

/// All leaves having at least one ancestor whose kind is in `set`, in source
/// order. Each leaf appears at most once.
pub fn eligible_leaves(tree: &SyntaxTree, set: &NodeTypeSet) -> Vec<NodeId> {
    tree.leaves()
        .iter()
        .copied()
        .filter(|&leaf| tree.ancestors(leaf).any(|a| set.contains(tree.kind(a))))
        .collect()
}

/// 1-based (line, column) of a byte offset.
pub fn line_col(src: &str, offset: usize) -> (usize, usize) {
    let mut line = 1;
    let mut col = 1;
    for (i, b) in src.bytes().enumerate() {
        if i >= offset {
            break;
        }
        if b == b'\n' {
            line += 1;
            col = 1;
        } else {
            col += 1;
        }
    }
    (line, col)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BUBBLE: &str = "def bubble_sort(arr):\n    n = len(arr)\n    for i in range(n):\n        for j in range(n - i - 1):\n            if arr[j] > arr[j + 1]:\n                tmp = arr[j]\n                arr[j] = arr[j + 1]\n                arr[j + 1] = tmp\n    return arr\n";

    fn find_nodes<'t>(tree: &'t SyntaxTree, kind: &str) -> Vec<NodeId> {
        (0..tree.node_count())
            .map(NodeId)
            .filter(|&n| tree.kind(n) == kind)
            .collect()
    }

    #[test]
    fn bubble_sort_has_for_containing_if() {
        let tree = parse(BUBBLE).unwrap();
        assert_eq!(tree.kind(tree.root()), "module");
        assert_eq!(tree.span(tree.root()), Span::new(0, BUBBLE.len()));
        let fors = find_nodes(&tree, "for_statement");
        assert_eq!(fors.len(), 2);
        let ifs = find_nodes(&tree, "if_statement");
        assert_eq!(ifs.len(), 1);
        // the if sits inside both for loops
        assert!(tree
            .ancestors(ifs[0])
            .any(|a| tree.kind(a) == "for_statement"));
        assert!(tree.span(fors[0]).contains(&tree.span(ifs[0])));
    }

    #[test]
    fn leaves_and_trivia_tile_the_source_exactly() {
        for src in [
            BUBBLE,
            "x = 1\n",
            "# only a comment\n",
            "def f(a, b):\n    \"\"\"doc\"\"\"\n    return a + b\n",
            "if x:\n    y = foo(x, 2)\nelse:\n    y = 0\n",
            "",
            "x = 1",
        ] {
            let tree = parse(src).unwrap();
            let mut covered = vec![false; src.len()];
            for &leaf in tree.leaves() {
                let sp = tree.span(leaf);
                for c in &mut covered[sp.start..sp.end] {
                    assert!(!*c, "leaf overlap in {src:?}");
                    *c = true;
                }
            }
            for sp in tree.trivia() {
                for c in &mut covered[sp.start..sp.end] {
                    assert!(!*c, "trivia overlap in {src:?}");
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "uncovered bytes in {src:?}");

            // reconstruction: leaf texts + trivia in offset order == source
            let mut pieces: Vec<Span> = tree.leaves().iter().map(|&l| tree.span(l)).collect();
            pieces.extend_from_slice(tree.trivia());
            pieces.sort_by_key(|s| s.start);
            let rebuilt: String = pieces.iter().map(|s| &src[s.start..s.end]).collect();
            assert_eq!(rebuilt, src);
        }
    }

    #[test]
    fn child_spans_nest_and_siblings_are_ordered() {
        let tree = parse(BUBBLE).unwrap();
        for idx in 0..tree.node_count() {
            let n = NodeId(idx);
            let sp = tree.span(n);
            let mut prev_end = sp.start;
            for &c in tree.children(n) {
                let cs = tree.span(c);
                assert!(sp.contains(&cs), "child escapes parent at node {idx}");
                assert!(cs.start >= prev_end, "siblings overlap at node {idx}");
                assert_eq!(tree.parent(c), Some(n));
                prev_end = cs.end;
            }
        }
    }

    #[test]
    fn statement_spans_reparse_standalone() {
        let tree = parse(BUBBLE).unwrap();
        for kind in ["for_statement", "if_statement", "assignment_statement"] {
            for n in find_nodes(&tree, kind) {
                let text = tree.text(BUBBLE, n);
                parse(text).unwrap_or_else(|e| panic!("{kind} failed re-parse: {e}\n{text}"));
            }
        }
    }

    #[test]
    fn if_else_extraction_keeps_clauses_aligned() {
        let src = "def f(x):\n    if x > 0:\n        y = 1\n    else:\n        y = 2\n    return y\n";
        let tree = parse(src).unwrap();
        let ifs = find_nodes(&tree, "if_statement");
        assert_eq!(ifs.len(), 1);
        let text = tree.text(src, ifs[0]);
        assert!(text.starts_with("    if x > 0:"));
        assert!(text.contains("\n    else:"));
        parse(text).unwrap();
    }

    #[test]
    fn eligible_leaves_set_semantics() {
        let src = "for i in range(3):\n    if i > 1:\n        total = total + i\n";
        let tree = parse(src).unwrap();
        let only_if = eligible_leaves(&tree, &node_type_set(&["if_statement"]));
        let both = eligible_leaves(&tree, &node_type_set(&["if_statement", "for_statement"]));
        // every leaf under the if is listed once, and the outer-for leaves
        // join only when for_statement is in the set
        assert!(!only_if.is_empty());
        assert!(both.len() > only_if.len());
        assert_eq!(both.len(), tree.leaves().len());
        let mut seen = std::collections::HashSet::new();
        for l in &both {
            assert!(seen.insert(l.index()), "leaf listed twice");
        }
        // source order
        for w in both.windows(2) {
            assert!(tree.span(w[0]).start < tree.span(w[1]).start);
        }
    }

    #[test]
    fn eligible_leaves_empty_for_return_only_function() {
        let src = "def f(x):\n    return x\n";
        let tree = parse(src).unwrap();
        let set = node_type_set(&[
            "for_statement",
            "while_statement",
            "if_statement",
            "with_statement",
            "try_statement",
            "assignment_statement",
            "function_call",
        ]);
        assert!(eligible_leaves(&tree, &set).is_empty());
    }

    #[test]
    fn parse_is_deterministic() {
        let a = format!("{:?}", parse(BUBBLE).unwrap());
        let b = format!("{:?}", parse(BUBBLE).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn errors_carry_line_and_column() {
        let err = parse("def f(:\n    pass\n").unwrap_err();
        assert_eq!(err.line, 1);
        assert!(err.col > 1);
        let err = parse("x = 1\n  y = 2\n").unwrap_err();
        assert_eq!(err.line, 2, "unexpected indent should point at line 2: {err}");
    }

    #[test]
    fn inconsistent_dedent_is_an_error() {
        let err = parse("if x:\n        y = 1\n    z = 2\n").unwrap_err();
        assert!(err.message.contains("dedent"), "{err}");
    }

    #[test]
    fn nonzero_base_indentation_is_accepted() {
        // extracted statements keep their original indentation; the first
        // logical line sets the base level
        let src = "        if arr[j] > arr[j + 1]:\n            tmp = arr[j]\n";
        let tree = parse(src).unwrap();
        assert_eq!(find_nodes(&tree, "if_statement").len(), 1);
    }

    #[test]
    fn with_try_and_while_parse() {
        let src = "try:\n    with open(path) as f:\n        data = f.read()\nexcept ValueError as e:\n    data = None\nfinally:\n    done = True\nwhile not done:\n    done = check()\n";
        let tree = parse(src).unwrap();
        for kind in ["try_statement", "with_statement", "while_statement", "except_clause", "finally_clause"] {
            assert_eq!(find_nodes(&tree, kind).len(), 1, "{kind}");
        }
    }

    #[test]
    fn tabs_expand_to_eight_columns() {
        // tab then 8 spaces are the same level; mixing is tolerated via
        // column arithmetic
        let src = "if x:\n\ty = 1\n        z = 2\n";
        let tree = parse(src).unwrap();
        let blocks = find_nodes(&tree, "block");
        assert_eq!(blocks.len(), 1);
        assert_eq!(tree.children(blocks[0]).len(), 2);
    }

    #[test]
    fn triple_quoted_docstrings_are_single_string_leaves() {
        let src = "def f():\n    \"\"\"multi\n    line doc\"\"\"\n    return 1\n";
        let tree = parse(src).unwrap();
        let strings = find_nodes(&tree, "string");
        assert_eq!(strings.len(), 1);
        assert!(tree.text(src, strings[0]).starts_with("\"\"\"multi"));
    }

    #[test]
    fn call_statements_and_nested_calls() {
        let src = "log(compute(x), 2)\n";
        let tree = parse(src).unwrap();
        assert_eq!(find_nodes(&tree, "function_call").len(), 2);
    }

    #[test]
    fn unsupported_syntax_is_rejected() {
        for bad in ["class A:\n    pass\n", "x = {1: 2}\n", "lambda x: x\n", "def f(*args):\n    pass\n"] {
            assert!(parse(bad).is_err(), "expected error for {bad:?}");
        }
    }

    #[test]
    fn line_col_math() {
        let src = "ab\ncd\n";
        assert_eq!(line_col(src, 0), (1, 1));
        assert_eq!(line_col(src, 1), (1, 2));
        assert_eq!(line_col(src, 3), (2, 1));
        assert_eq!(line_col(src, 4), (2, 2));
    }
}
