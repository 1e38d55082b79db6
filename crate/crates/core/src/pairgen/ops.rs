//! The five positive-pair construction strategies, plus the splice/strip
//! helpers their reconstruction invariants are stated in terms of.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::rng::{fnv1a, rng_for};
use crate::syntax::{self, NodeId, ParseError, Span, SyntaxTree};

use super::{
    AnchorKind, AsstConfig, FunctionRecord, PairGenError, PositivePair, Provenance, Strategy,
};

/// Marker appended to every inserted dead-code line. Removing all lines that
/// end with it restores the original source byte-exactly.
pub const DEAD_CODE_MARK: &str = "# :dead:";

/// Sentinel spliced into the context when [`AsstConfig::sentinel`] is set.
/// Reserved in the tokenizer vocabulary.
pub const EXTRACTED_SENTINEL: &str = "<extracted>";

/// A `function_call` does not qualify for extraction while any ancestor has
/// one of these kinds; the call is then an indivisible part of that statement.
pub const INDIVISIBLE_KINDS: &[&str] = &["assignment_statement", "return_statement"];

/// The full dead-code pool: two unused assignments and two never-entered
/// blocks. Fixed so corpus outputs stay auditable.
pub const DEAD_CODE_TEMPLATES: &[&str] = &[
    "_unused_var = 0",
    "_unused_str = \"dead\"",
    "if False:\n    pass",
    "while False:\n    pass",
];

/// Inserts `extracted` into `context` at byte `offset`. For pairs built by
/// removal, `splice(positive, anchor, removal_offset)` equals the original.
pub fn splice(context: &str, extracted: &str, offset: usize) -> String {
    let mut out = String::with_capacity(context.len() + extracted.len());
    out.push_str(&context[..offset]);
    out.push_str(extracted);
    out.push_str(&context[offset..]);
    out
}

/// (docstring, code-without-docstring) when the record has a docstring of at
/// least three whitespace-delimited tokens; `None` otherwise.
pub fn comment_pair(rec: &FunctionRecord) -> Option<PositivePair> {
    let doc = rec.docstring.as_deref()?;
    if doc.split_whitespace().count() < 3 {
        return None;
    }
    let (positive, _) = strip_docstring(&rec.code);
    if doc == positive {
        return None;
    }
    Some(PositivePair {
        anchor: doc.to_string(),
        positive,
        strategy: Strategy::Comment,
        anchor_kind: AnchorKind::Text,
        provenance: Provenance { record_id: rec.id.clone(), removal_offset: None, detail: None },
    })
}

/// Removes the leading docstring statement (of the first function definition,
/// or of the module when no function exists). Returns the code unchanged when
/// there is nothing to strip or it does not parse. When the docstring is the
/// body's only statement it is replaced by `pass` so the result still parses.
/// The returned span covers the removed bytes in the original.
pub fn strip_docstring(code: &str) -> (String, Option<Span>) {
    let Ok(tree) = syntax::parse(code) else {
        return (code.to_string(), None);
    };
    let Some((stmt, only_stmt)) = docstring_statement(&tree) else {
        return (code.to_string(), None);
    };
    let sp = tree.span(stmt);
    let mut end = sp.end;
    if code[end..].starts_with('\n') {
        end += 1;
    }
    let ws = code[sp.start..].bytes().take_while(|b| matches!(b, b' ' | b'\t')).count();
    let replacement = if only_stmt {
        format!("{}pass\n", &code[sp.start..sp.start + ws])
    } else {
        String::new()
    };
    let stripped = format!("{}{}{}", &code[..sp.start], replacement, &code[end..]);
    (stripped, Some(Span::new(sp.start, end)))
}

fn docstring_statement(tree: &SyntaxTree) -> Option<(NodeId, bool)> {
    let mut defs: Vec<NodeId> = (0..tree.node_count())
        .map(NodeId)
        .filter(|&n| tree.kind(n) == "function_definition")
        .collect();
    defs.sort_by_key(|&n| tree.span(n).start);
    let body = match defs.first() {
        Some(&d) => *tree.children(d).last()?,
        None => tree.root(),
    };
    let &first = tree.children(body).first()?;
    if tree.kind(first) != "expression_statement" {
        return None;
    }
    let kids = tree.children(first);
    if kids.len() == 1 && tree.kind(kids[0]) == "string" {
        Some((first, tree.children(body).len() == 1))
    } else {
        None
    }
}

/// Samples a leaf under the configured node types, climbs to the nearest
/// ancestor that has an eligible kind and at least `l_min` bytes of text, and
/// splits the code into (subtree text, remaining context).
pub fn extract_asst_pair(
    rec: &FunctionRecord,
    cfg: &AsstConfig,
) -> Result<PositivePair, PairGenError> {
    let tree = syntax::parse(&rec.code)?;
    let leaves = syntax::eligible_leaves(&tree, &cfg.node_types);
    if leaves.is_empty() {
        return Err(PairGenError::NoEligibleNode { record_id: rec.id.clone() });
    }
    let mut rng = rng_for(cfg.seed, "pairgen/asst", &[fnv1a(rec.id.as_bytes())]);
    let mut node = Some(leaves[rng.gen_range(0..leaves.len())]);
    let mut chosen = None;
    while let Some(n) = node {
        let kind = tree.kind(n);
        let kind_ok = cfg.node_types.contains(kind)
            && (kind != "function_call" || !under_indivisible(&tree, n));
        if kind_ok && tree.span(n).len() >= cfg.l_min {
            chosen = Some(n);
            break;
        }
        node = tree.parent(n);
    }
    let Some(n) = chosen else {
        return Err(PairGenError::NoEligibleNode { record_id: rec.id.clone() });
    };
    let sp = tree.span(n);
    let anchor = rec.code[sp.start..sp.end].to_string();
    let positive = if cfg.sentinel {
        format!("{}{}{}", &rec.code[..sp.start], EXTRACTED_SENTINEL, &rec.code[sp.end..])
    } else {
        format!("{}{}", &rec.code[..sp.start], &rec.code[sp.end..])
    };
    if anchor == positive {
        return Err(PairGenError::DegeneratePair { record_id: rec.id.clone() });
    }
    Ok(PositivePair {
        anchor,
        positive,
        strategy: Strategy::Asst,
        anchor_kind: AnchorKind::Code,
        provenance: Provenance {
            record_id: rec.id.clone(),
            removal_offset: Some(sp.start),
            detail: Some(tree.kind(n).to_string()),
        },
    })
}

fn under_indivisible(tree: &SyntaxTree, n: NodeId) -> bool {
    tree.ancestors(n).any(|a| INDIVISIBLE_KINDS.contains(&tree.kind(a)))
}

/// Names bound in the code (parameters, assignment targets, loop variables,
/// `as` names) in order of first renameable occurrence. These are the
/// identifiers [`apply_rename`] replaces.
pub fn bound_identifier_order(code: &str) -> Result<Vec<String>, ParseError> {
    let tree = syntax::parse(code)?;
    Ok(bound_names(&tree, code))
}

fn bound_names(tree: &SyntaxTree, code: &str) -> Vec<String> {
    let mut bound: BTreeSet<&str> = BTreeSet::new();
    for idx in 0..tree.node_count() {
        let n = NodeId(idx);
        let kids = tree.children(n);
        match tree.kind(n) {
            // children: def name ( p , p ... ) : block — skip the function name
            "function_definition" => {
                for &c in kids.iter().skip(2) {
                    if tree.kind(c) == "identifier" {
                        bound.insert(tree.text(code, c));
                    }
                }
            }
            "assignment_statement" => {
                if tree.kind(kids[0]) == "identifier" {
                    bound.insert(tree.text(code, kids[0]));
                }
            }
            "for_statement" => {
                if tree.kind(kids[1]) == "identifier" {
                    bound.insert(tree.text(code, kids[1]));
                }
            }
            "with_statement" | "except_clause" => {
                for w in kids.windows(2) {
                    if tree.kind(w[0]) == "as" && tree.kind(w[1]) == "identifier" {
                        bound.insert(tree.text(code, w[1]));
                    }
                }
            }
            _ => {}
        }
    }
    let mut order: Vec<String> = Vec::new();
    for &leaf in tree.leaves() {
        if tree.kind(leaf) != "identifier" || !renameable(tree, leaf) {
            continue;
        }
        let name = tree.text(code, leaf);
        if bound.contains(name) && !order.iter().any(|o| o == name) {
            order.push(name.to_string());
        }
    }
    order
}

/// Attribute names after `.` keep their spelling; everything else may rename.
fn renameable(tree: &SyntaxTree, leaf: NodeId) -> bool {
    match tree.parent(leaf) {
        Some(p) if tree.kind(p) == "attribute" => tree.children(p)[2] != leaf,
        _ => true,
    }
}

/// Replaces the i-th bound identifier (first-occurrence order) with
/// `var_{perm[i]}` at every renameable occurrence. `perm` must be a
/// permutation of `0..k` where `k` is the bound-identifier count.
pub fn apply_rename(code: &str, perm: &[usize]) -> Result<String, ParseError> {
    let tree = syntax::parse(code)?;
    let order = bound_names(&tree, code);
    assert_eq!(
        perm.len(),
        order.len(),
        "permutation length must equal the bound-identifier count"
    );
    let map: BTreeMap<&str, String> =
        order.iter().zip(perm).map(|(n, &p)| (n.as_str(), format!("var_{p}"))).collect();
    let mut out = String::with_capacity(code.len());
    let mut last = 0;
    for &leaf in tree.leaves() {
        if tree.kind(leaf) != "identifier" || !renameable(&tree, leaf) {
            continue;
        }
        if let Some(new_name) = map.get(tree.text(code, leaf)) {
            let sp = tree.span(leaf);
            out.push_str(&code[last..sp.start]);
            out.push_str(new_name);
            last = sp.end;
        }
    }
    out.push_str(&code[last..]);
    Ok(out)
}

/// Consistently renames all bound identifiers to fresh `var_*` names in a
/// seed-permuted order; pair = (original, renamed).
pub fn transform_rename_variables(
    rec: &FunctionRecord,
    seed: u64,
) -> Result<PositivePair, PairGenError> {
    let order = bound_identifier_order(&rec.code)?;
    if order.is_empty() {
        return Err(PairGenError::TransformNoop { record_id: rec.id.clone() });
    }
    let mut perm: Vec<usize> = (0..order.len()).collect();
    perm.shuffle(&mut rng_for(seed, "pairgen/rename", &[fnv1a(rec.id.as_bytes())]));
    let renamed = apply_rename(&rec.code, &perm)?;
    if renamed == rec.code {
        return Err(PairGenError::TransformNoop { record_id: rec.id.clone() });
    }
    let detail = order
        .iter()
        .zip(&perm)
        .map(|(name, p)| format!("{name}->var_{p}"))
        .collect::<Vec<_>>()
        .join(";");
    Ok(PositivePair {
        anchor: rec.code.clone(),
        positive: renamed,
        strategy: Strategy::Transform,
        anchor_kind: AnchorKind::Code,
        provenance: Provenance {
            record_id: rec.id.clone(),
            removal_offset: None,
            detail: Some(detail),
        },
    })
}

/// Inserts one dead-code template at a seed-chosen statement boundary, every
/// inserted line tagged with [`DEAD_CODE_MARK`]; pair = (original, modified).
pub fn transform_insert_dead_code(
    rec: &FunctionRecord,
    seed: u64,
) -> Result<PositivePair, PairGenError> {
    if rec.code.contains(DEAD_CODE_MARK) {
        return Err(PairGenError::TransformNoop { record_id: rec.id.clone() });
    }
    let tree = syntax::parse(&rec.code)?;
    let mut boundaries: Vec<(usize, &str)> = Vec::new();
    for idx in 0..tree.node_count() {
        let n = NodeId(idx);
        let in_body = tree.is_statement(n)
            && matches!(tree.parent(n).map(|p| tree.kind(p)), Some("module" | "block"));
        if !in_body {
            continue;
        }
        let start = tree.span(n).start; // statement spans begin at line start
        let ws = rec.code[start..].bytes().take_while(|b| matches!(b, b' ' | b'\t')).count();
        boundaries.push((start, &rec.code[start..start + ws]));
    }
    if boundaries.is_empty() {
        return Err(PairGenError::TransformNoop { record_id: rec.id.clone() });
    }
    boundaries.sort_by_key(|&(offset, _)| offset);
    if rec.code.ends_with('\n') {
        // appending at the very end continues the last statement's block
        let &(_, last_indent) = boundaries.last().unwrap();
        boundaries.push((rec.code.len(), last_indent));
    }
    let mut rng = rng_for(seed, "pairgen/deadcode", &[fnv1a(rec.id.as_bytes())]);
    let (offset, indent) = boundaries[rng.gen_range(0..boundaries.len())];
    let template_idx = rng.gen_range(0..DEAD_CODE_TEMPLATES.len());
    let inserted: String = DEAD_CODE_TEMPLATES[template_idx]
        .lines()
        .map(|l| format!("{indent}{l}  {DEAD_CODE_MARK}\n"))
        .collect();
    let positive = splice(&rec.code, &inserted, offset);
    syntax::parse(&positive)?; // closure property; failing here is an internal bug
    Ok(PositivePair {
        anchor: rec.code.clone(),
        positive,
        strategy: Strategy::Transform,
        anchor_kind: AnchorKind::Code,
        provenance: Provenance {
            record_id: rec.id.clone(),
            removal_offset: Some(offset),
            detail: Some(format!("template_{template_idx}")),
        },
    })
}

/// Removes every line tagged by [`DEAD_CODE_MARK`]; inverse of
/// [`transform_insert_dead_code`] on its outputs.
pub fn strip_dead_code(code: &str) -> String {
    code.split_inclusive('\n')
        .filter(|line| !line.trim_end().ends_with(DEAD_CODE_MARK))
        .collect()
}

/// Removes a contiguous run of `span_len` lexical tokens (the removed text is
/// the byte hull of those tokens); pair = (removed, remainder). The removed
/// fragment need not be grammatical.
pub fn ict_token_split(
    rec: &FunctionRecord,
    seed: u64,
    span_len: usize,
) -> Result<PositivePair, PairGenError> {
    let tree = syntax::parse(&rec.code)?;
    let leaves = tree.leaves();
    if span_len == 0 || leaves.len() <= span_len {
        return Err(PairGenError::TooShort {
            record_id: rec.id.clone(),
            detail: format!("{} tokens, need more than span_len={span_len}", leaves.len()),
        });
    }
    let mut rng = rng_for(seed, "pairgen/ict_token", &[fnv1a(rec.id.as_bytes())]);
    let start = rng.gen_range(0..=leaves.len() - span_len);
    let a = tree.span(leaves[start]).start;
    let b = tree.span(leaves[start + span_len - 1]).end;
    finish_ict(
        rec,
        a,
        b,
        Strategy::IctToken,
        format!("tokens_{start}_{}", start + span_len),
    )
}

/// Removes `line_cnt` consecutive lines (terminators included); pair =
/// (removed, remainder).
pub fn ict_line_split(
    rec: &FunctionRecord,
    seed: u64,
    line_cnt: usize,
) -> Result<PositivePair, PairGenError> {
    let lines: Vec<&str> = rec.code.split_inclusive('\n').collect();
    if line_cnt == 0 || lines.len() <= line_cnt {
        return Err(PairGenError::TooShort {
            record_id: rec.id.clone(),
            detail: format!("{} lines, need more than line_cnt={line_cnt}", lines.len()),
        });
    }
    let mut rng = rng_for(seed, "pairgen/ict_line", &[fnv1a(rec.id.as_bytes())]);
    let start = rng.gen_range(0..=lines.len() - line_cnt);
    let a: usize = lines[..start].iter().map(|l| l.len()).sum();
    let b = a + lines[start..start + line_cnt].iter().map(|l| l.len()).sum::<usize>();
    finish_ict(
        rec,
        a,
        b,
        Strategy::IctLine,
        format!("lines_{start}_{}", start + line_cnt),
    )
}

fn finish_ict(
    rec: &FunctionRecord,
    a: usize,
    b: usize,
    strategy: Strategy,
    detail: String,
) -> Result<PositivePair, PairGenError> {
    let anchor = rec.code[a..b].to_string();
    let positive = format!("{}{}", &rec.code[..a], &rec.code[b..]);
    if anchor == positive {
        return Err(PairGenError::DegeneratePair { record_id: rec.id.clone() });
    }
    Ok(PositivePair {
        anchor,
        positive,
        strategy,
        anchor_kind: AnchorKind::Code,
        provenance: Provenance {
            record_id: rec.id.clone(),
            removal_offset: Some(a),
            detail: Some(detail),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    const BUBBLE: &str = "def bubble_sort(arr):\n    n = len(arr)\n    for i in range(n):\n        for j in range(n - i - 1):\n            if arr[j] > arr[j + 1]:\n                tmp = arr[j]\n                arr[j] = arr[j + 1]\n                arr[j + 1] = tmp\n    return arr\n";

    fn rec(id: &str, code: &str) -> FunctionRecord {
        FunctionRecord {
            id: id.to_string(),
            language: "python".to_string(),
            code: code.to_string(),
            docstring: None,
        }
    }

    fn rec_doc(id: &str, code: &str, doc: &str) -> FunctionRecord {
        FunctionRecord { docstring: Some(doc.to_string()), ..rec(id, code) }
    }

    #[test]
    fn comment_pair_strips_the_embedded_docstring() {
        let code = "def add_all(xs):\n    \"\"\"sum the input values\"\"\"\n    total = 0\n    for x in xs:\n        total += x\n    return total\n";
        let pair = comment_pair(&rec_doc("r1", code, "sum the input values")).unwrap();
        assert_eq!(pair.anchor, "sum the input values");
        assert_eq!(pair.anchor_kind, AnchorKind::Text);
        assert!(!pair.positive.contains("\"\"\""));
        assert!(pair.positive.contains("total = 0"));
        syntax::parse(&pair.positive).unwrap();
    }

    #[test]
    fn comment_pair_requires_three_tokens() {
        let code = "def f():\n    return 1\n";
        assert!(comment_pair(&rec("r", code)).is_none());
        assert!(comment_pair(&rec_doc("r", code, "ok")).is_none());
        assert!(comment_pair(&rec_doc("r", code, "two words")).is_none());
        assert!(comment_pair(&rec_doc("r", code, "now three words")).is_some());
    }

    #[test]
    fn strip_docstring_keeps_single_statement_bodies_parseable() {
        let (stripped, span) = strip_docstring("def f():\n    \"\"\"only a doc\"\"\"\n");
        assert_eq!(stripped, "def f():\n    pass\n");
        assert!(span.is_some());
        syntax::parse(&stripped).unwrap();

        // nothing to strip: unchanged
        let (same, span) = strip_docstring("def f():\n    return 1\n");
        assert_eq!(same, "def f():\n    return 1\n");
        assert!(span.is_none());
    }

    #[test]
    fn asst_pairs_reconstruct_and_reparse() {
        // A climb can legitimately fail when the sampled leaf sits in a short
        // statement with no larger eligible ancestor (e.g. `n = len(arr)`),
        // so count successes instead of expecting one per seed.
        let mut successes = 0;
        for seed in 0..40u64 {
            let cfg = AsstConfig { seed, ..AsstConfig::default() };
            let pair = match extract_asst_pair(&rec("bubble", BUBBLE), &cfg) {
                Ok(pair) => pair,
                Err(PairGenError::NoEligibleNode { .. }) => continue,
                Err(other) => panic!("seed {seed}: unexpected error {other}"),
            };
            let offset = pair.provenance.removal_offset.unwrap();
            assert_eq!(splice(&pair.positive, &pair.anchor, offset), BUBBLE);
            assert!(pair.anchor.len() >= cfg.l_min);
            syntax::parse(&pair.anchor)
                .unwrap_or_else(|e| panic!("seed {seed}: extracted span must re-parse: {e}"));
            successes += 1;
        }
        assert!(successes >= 25, "only {successes}/40 seeds produced a pair");
    }

    #[test]
    fn asst_can_select_the_if_block() {
        let pairs: Vec<PositivePair> = (0..60u64)
            .filter_map(|seed| {
                let cfg = AsstConfig { seed, ..AsstConfig::default() };
                extract_asst_pair(&rec("bubble", BUBBLE), &cfg).ok()
            })
            .collect();
        let kinds: BTreeSet<&str> =
            pairs.iter().map(|p| p.provenance.detail.as_deref().unwrap()).collect();
        assert!(kinds.contains("if_statement"), "selected kinds: {kinds:?}");
        // and when the if statement is selected, the span is the if block
        let if_pair = pairs
            .iter()
            .find(|p| p.provenance.detail.as_deref() == Some("if_statement"))
            .unwrap();
        assert!(if_pair.anchor.trim_start().starts_with("if arr[j]"));
    }

    #[test]
    fn asst_rejects_return_only_functions() {
        let err = extract_asst_pair(&rec("r", "def f(x):\n    return x\n"), &AsstConfig::default())
            .unwrap_err();
        assert!(matches!(err, PairGenError::NoEligibleNode { .. }), "{err}");
    }

    #[test]
    fn asst_calls_under_assignments_are_indivisible() {
        // the only call sits under an assignment, so the assignment wins
        let code = "def f(xs):\n    n = len(xs, extra_padding_argument)\n    return n\n";
        for seed in 0..20u64 {
            let cfg = AsstConfig { seed, ..AsstConfig::default() };
            let pair = extract_asst_pair(&rec("r", code), &cfg).unwrap();
            assert_eq!(pair.provenance.detail.as_deref(), Some("assignment_statement"));
        }
        // a bare call statement is extractable as function_call
        let code = "def f(xs):\n    log_every_value(xs, 1, 2, 3)\n    return xs\n";
        let kinds: BTreeSet<String> = (0..40u64)
            .map(|seed| {
                let cfg = AsstConfig { seed, ..AsstConfig::default() };
                extract_asst_pair(&rec("r", code), &cfg).unwrap().provenance.detail.unwrap()
            })
            .collect();
        assert!(kinds.contains("function_call"), "{kinds:?}");
    }

    #[test]
    fn asst_sentinel_mode_marks_the_removal_site() {
        let cfg = AsstConfig { sentinel: true, seed: 3, ..AsstConfig::default() };
        let pair = extract_asst_pair(&rec("bubble", BUBBLE), &cfg).unwrap();
        assert!(pair.positive.contains(EXTRACTED_SENTINEL));
    }

    #[test]
    fn rename_identity_permutation_matches_hand_oracle() {
        assert_eq!(bound_identifier_order("x = 1\ny = x\n").unwrap(), vec!["x", "y"]);
        assert_eq!(apply_rename("x = 1\ny = x\n", &[0, 1]).unwrap(), "var_0 = 1\nvar_1 = var_0\n");
        assert_eq!(apply_rename("x = 1\ny = x\n", &[1, 0]).unwrap(), "var_1 = 1\nvar_0 = var_1\n");
    }

    #[test]
    fn rename_skips_attributes_strings_and_free_names() {
        let code = "def g(f):\n    data = f.read()\n    label = \"f data\"\n    return helper(data)\n";
        assert_eq!(bound_identifier_order(code).unwrap(), vec!["f", "data", "label"]);
        let renamed = apply_rename(code, &[0, 1, 2]).unwrap();
        assert_eq!(
            renamed,
            "def g(var_0):\n    var_1 = var_0.read()\n    var_2 = \"f data\"\n    return helper(var_1)\n"
        );
    }

    #[test]
    fn rename_transform_normalizes_consistently() {
        let record = rec("bubble", BUBBLE);
        let pair = transform_rename_variables(&record, 11).unwrap();
        assert_eq!(pair.anchor, BUBBLE);
        assert_ne!(pair.positive, BUBBLE);
        syntax::parse(&pair.positive).unwrap();
        // determinism
        assert_eq!(pair, transform_rename_variables(&record, 11).unwrap());
        // renaming is a bijection: canonicalizing either side gives the same code
        let k = bound_identifier_order(BUBBLE).unwrap().len();
        let identity: Vec<usize> = (0..k).collect();
        assert_eq!(
            apply_rename(&pair.positive, &identity).unwrap(),
            apply_rename(BUBBLE, &identity).unwrap()
        );
        // no-op input
        let err = transform_rename_variables(&rec("p", "pass\n"), 0).unwrap_err();
        assert!(matches!(err, PairGenError::TransformNoop { .. }));
    }

    #[test]
    fn dead_code_inserts_round_trip_and_cover_the_pool() {
        let record = rec("bubble", BUBBLE);
        let mut templates = BTreeSet::new();
        let mut offsets = BTreeSet::new();
        for seed in 0..60u64 {
            let pair = transform_insert_dead_code(&record, seed).unwrap();
            assert_ne!(pair.positive, BUBBLE);
            syntax::parse(&pair.positive).unwrap();
            assert_eq!(strip_dead_code(&pair.positive), BUBBLE);
            templates.insert(pair.provenance.detail.clone().unwrap());
            offsets.insert(pair.provenance.removal_offset.unwrap());
        }
        assert_eq!(templates.len(), DEAD_CODE_TEMPLATES.len(), "{templates:?}");
        assert!(offsets.len() > 3, "{offsets:?}");
        assert!(offsets.contains(&BUBBLE.len()), "end-of-file boundary never chosen");
    }

    #[test]
    fn ict_token_reconstructs_and_can_break_grammar() {
        let record = rec("bubble", BUBBLE);
        let mut failures = 0;
        for seed in 0..80u64 {
            let pair = ict_token_split(&record, seed, 3).unwrap();
            let offset = pair.provenance.removal_offset.unwrap();
            assert_eq!(splice(&pair.positive, &pair.anchor, offset), BUBBLE);
            if syntax::parse(&pair.anchor).is_err() {
                failures += 1;
            }
        }
        assert!(failures > 0, "every 3-token span re-parsed; expected ungrammatical fragments");
        let err = ict_token_split(&record, 0, 10_000).unwrap_err();
        assert!(matches!(err, PairGenError::TooShort { .. }));
    }

    #[test]
    fn ict_line_covers_both_splits_of_a_two_line_file() {
        let record = rec("two", "x = 1\ny = 2\n");
        let mut outcomes = BTreeSet::new();
        for seed in 0..20u64 {
            let pair = ict_line_split(&record, seed, 1).unwrap();
            let offset = pair.provenance.removal_offset.unwrap();
            assert_eq!(splice(&pair.positive, &pair.anchor, offset), record.code);
            outcomes.insert((pair.anchor.clone(), pair.positive.clone()));
        }
        let expected: BTreeSet<(String, String)> = [
            ("x = 1\n".to_string(), "y = 2\n".to_string()),
            ("y = 2\n".to_string(), "x = 1\n".to_string()),
        ]
        .into_iter()
        .collect();
        assert_eq!(outcomes, expected);
        let err = ict_line_split(&record, 0, 2).unwrap_err();
        assert!(matches!(err, PairGenError::TooShort { .. }));
    }

    #[test]
    fn degenerate_splits_are_rejected() {
        let record = rec("dup", "x = 1\nx = 1\n");
        let err = ict_line_split(&record, 0, 1).unwrap_err();
        assert!(matches!(err, PairGenError::DegeneratePair { .. }), "{err}");
    }
}
