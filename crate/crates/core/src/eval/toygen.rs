//! Synthetic function corpus for end-to-end retrieval runs.
//!
//! Six semantic families (sort, sum, max, reverse, count, filter), each
//! instantiated many times with renamed variables, alternate loop styles,
//! reordered setup lines, and paraphrased docstrings. Instances are built so
//! that every statement is long enough for subtree extraction to succeed no
//! matter which leaf is sampled: the record corpus is usable by every pair
//! strategy without skips.
//!
//! The last ~20% of instances per family are held out and turned into two
//! retrieval tasks over the held-out pool: docstring → own code
//! (comment_to_code) and code → same family (code_to_code).

use rand::Rng;

use super::{EvalError, EvalQuery, EvalTask, PoolEntry, TaskKind};
use crate::pairgen::{strip_docstring, FunctionRecord};
use crate::rng::rng_for;

/// Family labels, in generation order. `gen_toy_corpus` uses the first `F`.
/// Short-bodied families come first so that small corpora keep anchor and
/// candidate both visible in pair encodings at moderate sequence lengths.
pub const TOY_FAMILIES: [&str; 6] = ["sum", "max", "reverse", "count", "filter", "sort"];

// Scalar-name pools are family-specific on purpose: filler statements like
// index increments would otherwise be byte-identical across families, which
// makes extracted statements ambiguous about where they came from. The main
// working variables additionally embed the function's qualifier noun (the way
// real code reuses its domain vocabulary: `total_receipts` accumulates into
// `receipts_running_total`), so statements deep in the body stay lexically
// tied to the instance they come from.
const ARRAY_NAMES: [&str; 4] = ["values", "items", "numbers", "entries"];
const SUM_INDEXES: [&str; 3] = ["running_index", "sum_position", "adding_cursor"];
const MAX_INDEXES: [&str; 3] = ["probe_position", "compare_index", "scan_cursor"];
const REVERSE_INDEXES: [&str; 3] = ["back_position", "mirror_cursor", "reverse_index"];
const SORT_INDEXES: [&str; 3] = ["swap_position", "pass_index", "bubble_cursor"];
const TOTAL_NAMES: [&str; 3] = ["running_total", "summed_amount", "accumulated_value"];
const REVERSE_OUTS: [&str; 3] = ["reversed_items", "backward_list", "mirrored_values"];
const FILTER_OUTS: [&str; 3] = ["kept_entries", "passing_items", "filtered_values"];
const BEST_NAMES: [&str; 3] = ["largest_so_far", "current_maximum", "best_candidate"];
const COUNT_NAMES: [&str; 3] = ["match_counter", "occurrence_tally", "matching_count"];
const LEN_NAMES: [&str; 3] = ["element_count", "total_length", "item_quantity"];

const SORT_VERBS: [&str; 4] = ["sort", "order", "arrange", "rank"];
const SUM_VERBS: [&str; 4] = ["sum", "total", "add_up", "combine"];
const MAX_VERBS: [&str; 4] = ["largest", "peak", "biggest", "top"];
const REVERSE_VERBS: [&str; 4] = ["reverse", "flip", "mirror", "invert"];
const COUNT_VERBS: [&str; 4] = ["count", "tally", "occurrences", "frequency"];
const FILTER_VERBS: [&str; 4] = ["keep", "select", "retain", "pick"];
const SUM_QUALIFIERS: [&str; 4] = ["amounts", "figures", "receipts", "balances"];
const MAX_QUALIFIERS: [&str; 4] = ["readings", "scores", "heights", "weights"];
const REVERSE_QUALIFIERS: [&str; 4] = ["sequence", "chain", "lineup", "queue"];
const COUNT_QUALIFIERS: [&str; 4] = ["stamps", "labels", "markers", "badges"];
const FILTER_QUALIFIERS: [&str; 4] = ["candidates", "samples", "offers", "bids"];
const SORT_QUALIFIERS: [&str; 4] = ["cards", "tickets", "folders", "parcels"];

const SORT_DOCS: [&str; 5] = [
    "{fn} sorts {arr} in place in ascending order.",
    "{fn} orders the elements of {arr} from smallest to largest.",
    "{fn} bubble sorts {arr} until no swaps remain.",
    "{fn} arranges the values of {arr} in increasing order.",
    "{fn} returns {arr} sorted ascending.",
];
const SUM_DOCS: [&str; 5] = [
    "{fn} adds up every element of {arr}.",
    "{fn} returns the total of all values in {arr}.",
    "{fn} computes the sum of the numbers in {arr}.",
    "{fn} accumulates {arr} into a single total.",
    "{fn} sums the elements of {arr} and returns the result.",
];
const MAX_DOCS: [&str; 5] = [
    "{fn} returns the largest element of {arr}.",
    "{fn} finds the maximum value in {arr}.",
    "{fn} scans {arr} and keeps the biggest entry.",
    "{fn} picks the greatest number seen in {arr}.",
    "{fn} computes the maximum of {arr}.",
];
const REVERSE_DOCS: [&str; 5] = [
    "{fn} returns {arr} in reverse order.",
    "{fn} builds a new list with the elements of {arr} backwards.",
    "{fn} walks {arr} from the end and collects each item.",
    "{fn} produces the mirror image of {arr}.",
    "{fn} copies {arr} back to front.",
];
const COUNT_DOCS: [&str; 5] = [
    "{fn} counts how many entries of {arr} equal the target.",
    "{fn} returns the number of occurrences of the target in {arr}.",
    "{fn} tallies the elements of {arr} matching the given value.",
    "{fn} counts matches of the wanted value in {arr}.",
    "{fn} returns how often the value appears in {arr}.",
];
const FILTER_DOCS: [&str; 5] = [
    "{fn} keeps the elements of {arr} below the limit.",
    "{fn} returns the values of {arr} smaller than the threshold.",
    "{fn} filters out entries of {arr} at or above the limit.",
    "{fn} collects the items of {arr} under the bound.",
    "{fn} drops everything in {arr} not below the given cutoff.",
];

fn pick<'a>(rng: &mut impl Rng, pool: &[&'a str]) -> &'a str {
    pool[rng.gen_range(0..pool.len())]
}

/// `(params, body lines, doc)` for one instance of one family, with the
/// function's qualifier noun `q` woven into the working-variable names. Setup
/// lines that do not depend on each other are emitted in a random order.
fn family_body(family: usize, q: &str, rng: &mut impl Rng) -> (String, Vec<String>, String) {
    let arr = pick(rng, &ARRAY_NAMES);
    let each = format!("{q}_entry");
    match TOY_FAMILIES[family] {
        "sort" => {
            let n = format!("{q}_{}", pick(rng, &LEN_NAMES));
            let held = format!("{q}_held_for_swap");
            let outer = "outer_position";
            let inner = pick(rng, &SORT_INDEXES);
            let mut setup =
                vec![format!("    {n} = len({arr})"), format!("    {outer} = 0")];
            if rng.gen_bool(0.5) {
                setup.reverse();
            }
            let mut lines = setup;
            lines.extend([
                format!("    while {outer} < {n}:"),
                format!("        {inner} = 0"),
                format!("        while {inner} < {n} - {outer} - 1:"),
                format!("            if {arr}[{inner}] > {arr}[{inner} + 1]:"),
                format!("                {held} = {arr}[{inner}]"),
                format!("                {arr}[{inner}] = {arr}[{inner} + 1]"),
                format!("                {arr}[{inner} + 1] = {held}"),
                format!("            {inner} = {inner} + 1"),
                format!("        {outer} = {outer} + 1"),
                format!("    return {arr}"),
            ]);
            (arr.to_string(), lines, pick(rng, &SORT_DOCS).replace("{arr}", arr))
        }
        "sum" => {
            let total = format!("{q}_{}", pick(rng, &TOTAL_NAMES));
            let lines = if rng.gen_bool(0.5) {
                vec![
                    format!("    {total} = 0"),
                    format!("    for {each} in {arr}:"),
                    format!("        {total} = {total} + {each}"),
                    format!("    return {total}"),
                ]
            } else {
                let i = pick(rng, &SUM_INDEXES);
                let mut setup = vec![format!("    {total} = 0"), format!("    {i} = 0")];
                if rng.gen_bool(0.5) {
                    setup.reverse();
                }
                let mut lines = setup;
                lines.extend([
                    format!("    while {i} < len({arr}):"),
                    format!("        {total} = {total} + {arr}[{i}]"),
                    format!("        {i} = {i} + 1"),
                    format!("    return {total}"),
                ]);
                lines
            };
            (arr.to_string(), lines, pick(rng, &SUM_DOCS).replace("{arr}", arr))
        }
        "max" => {
            let best = format!("{q}_{}", pick(rng, &BEST_NAMES));
            let lines = if rng.gen_bool(0.5) {
                vec![
                    format!("    {best} = {arr}[0]"),
                    format!("    for {each} in {arr}:"),
                    format!("        if {each} > {best}:"),
                    format!("            {best} = {each}"),
                    format!("    return {best}"),
                ]
            } else {
                let i = pick(rng, &MAX_INDEXES);
                vec![
                    format!("    {best} = {arr}[0]"),
                    format!("    {i} = 1"),
                    format!("    while {i} < len({arr}):"),
                    format!("        if {arr}[{i}] > {best}:"),
                    format!("            {best} = {arr}[{i}]"),
                    format!("        {i} = {i} + 1"),
                    format!("    return {best}"),
                ]
            };
            (arr.to_string(), lines, pick(rng, &MAX_DOCS).replace("{arr}", arr))
        }
        "reverse" => {
            let out = format!("{q}_{}", pick(rng, &REVERSE_OUTS));
            let i = pick(rng, &REVERSE_INDEXES);
            let mut setup = vec![
                format!("    {out} = []"),
                format!("    {i} = len({arr}) - 1"),
            ];
            if rng.gen_bool(0.5) {
                setup.reverse();
            }
            let mut lines = setup;
            lines.extend([
                format!("    while {i} >= 0:"),
                format!("        {out}.append({arr}[{i}])"),
                format!("        {i} = {i} - 1"),
                format!("    return {out}"),
            ]);
            (arr.to_string(), lines, pick(rng, &REVERSE_DOCS).replace("{arr}", arr))
        }
        "count" => {
            let cnt = format!("{q}_{}", pick(rng, &COUNT_NAMES));
            let lines = vec![
                format!("    {cnt} = 0"),
                format!("    for {each} in {arr}:"),
                format!("        if {each} == target:"),
                format!("            {cnt} = {cnt} + 1"),
                format!("    return {cnt}"),
            ];
            (format!("{arr}, target"), lines, pick(rng, &COUNT_DOCS).replace("{arr}", arr))
        }
        "filter" => {
            let out = format!("{q}_{}", pick(rng, &FILTER_OUTS));
            let lines = vec![
                format!("    {out} = []"),
                format!("    for {each} in {arr}:"),
                format!("        if {each} < limit:"),
                format!("            {out}.append({each})"),
                format!("    return {out}"),
            ];
            (format!("{arr}, limit"), lines, pick(rng, &FILTER_DOCS).replace("{arr}", arr))
        }
        other => unreachable!("unknown family {other}"),
    }
}

fn name_parts(family: usize, rng: &mut impl Rng) -> (&'static str, &'static str) {
    match TOY_FAMILIES[family] {
        "sort" => (pick(rng, &SORT_VERBS), pick(rng, &SORT_QUALIFIERS)),
        "sum" => (pick(rng, &SUM_VERBS), pick(rng, &SUM_QUALIFIERS)),
        "max" => (pick(rng, &MAX_VERBS), pick(rng, &MAX_QUALIFIERS)),
        "reverse" => (pick(rng, &REVERSE_VERBS), pick(rng, &REVERSE_QUALIFIERS)),
        "count" => (pick(rng, &COUNT_VERBS), pick(rng, &COUNT_QUALIFIERS)),
        "filter" => (pick(rng, &FILTER_VERBS), pick(rng, &FILTER_QUALIFIERS)),
        other => unreachable!("unknown family {other}"),
    }
}

fn gen_instance(family: usize, idx: usize, seed: u64, salt: u64) -> FunctionRecord {
    let mut rng = rng_for(seed, "eval/toygen", &[family as u64, idx as u64, salt]);
    let (verb, qualifier) = name_parts(family, &mut rng);
    let (params, lines, doc) = family_body(family, qualifier, &mut rng);
    let name = format!("{verb}_{qualifier}");
    let doc = doc.replace("{fn}", &name);
    let mut code = format!("def {name}({params}):\n    \"\"\"{doc}\"\"\"\n");
    for line in &lines {
        code.push_str(line);
        code.push('\n');
    }
    FunctionRecord {
        id: format!("{}_{idx:03}", TOY_FAMILIES[family]),
        language: "python".to_string(),
        code,
        docstring: Some(doc),
    }
}

/// Generated records split into train / held-out, plus the two retrieval
/// tasks built over the held-out pool.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCorpus {
    pub train: Vec<FunctionRecord>,
    pub held_out: Vec<FunctionRecord>,
    pub comment_to_code: EvalTask,
    pub code_to_code: EvalTask,
}

impl ToyCorpus {
    /// Train records followed by held-out records.
    pub fn all_records(&self) -> Vec<FunctionRecord> {
        self.train.iter().chain(&self.held_out).cloned().collect()
    }
}

/// Generates `families * per_family` records; the last `ceil(per_family/5)`
/// instances of each family are held out for evaluation. Instance content
/// depends only on `(family, instance, seed)`.
pub fn gen_toy_corpus(
    families: usize,
    per_family: usize,
    seed: u64,
) -> Result<ToyCorpus, EvalError> {
    if !(2..=TOY_FAMILIES.len()).contains(&families) {
        return Err(EvalError::BadTask {
            message: format!(
                "families must be between 2 and {}, got {families}",
                TOY_FAMILIES.len()
            ),
        });
    }
    if per_family < 2 {
        return Err(EvalError::BadTask {
            message: format!("per_family must be at least 2, got {per_family}"),
        });
    }
    let holdout_n = per_family.div_ceil(5);
    let mut train = Vec::new();
    let mut held = Vec::new(); // (family, record)
    let mut seen = std::collections::BTreeSet::new();
    for family in 0..families {
        for idx in 0..per_family {
            // Instances draw from a finite pool of name/style/doc choices;
            // retry with a fresh salt until this instance's (function name,
            // array parameter) key — the handle a query uses to single out
            // one instance — is distinct from everything generated so far.
            let mut rec = None;
            for salt in 0..64 {
                let candidate = gen_instance(family, idx, seed, salt);
                let header: String =
                    candidate.code.lines().next().unwrap_or_default().to_string();
                if seen.insert(header) {
                    rec = Some(candidate);
                    break;
                }
            }
            let rec = rec.ok_or_else(|| EvalError::BadTask {
                message: format!(
                    "family {} ran out of distinct instances at {idx} of {per_family}",
                    TOY_FAMILIES[family]
                ),
            })?;
            if idx >= per_family - holdout_n {
                held.push((family, rec));
            } else {
                train.push(rec);
            }
        }
    }

    let pool: Vec<PoolEntry> = held
        .iter()
        .map(|(_, r)| PoolEntry { id: r.id.clone(), code: strip_docstring(&r.code).0 })
        .collect();
    let comment_queries: Vec<EvalQuery> = held
        .iter()
        .map(|(_, r)| EvalQuery {
            id: r.id.clone(),
            text: r.docstring.clone().expect("generated records always carry a docstring"),
            relevant: vec![r.id.clone()],
        })
        .collect();
    let code_queries: Vec<EvalQuery> = held
        .iter()
        .enumerate()
        .filter_map(|(i, (family, r))| {
            let relevant: Vec<String> = held
                .iter()
                .enumerate()
                .filter(|(j, (f, _))| *f == *family && *j != i)
                .map(|(_, (_, other))| other.id.clone())
                .collect();
            if relevant.is_empty() {
                return None;
            }
            Some(EvalQuery {
                id: r.id.clone(),
                text: strip_docstring(&r.code).0,
                relevant,
            })
        })
        .collect();

    let comment_to_code =
        EvalTask { kind: TaskKind::CommentToCode, queries: comment_queries, pool: pool.clone() };
    let code_to_code =
        EvalTask { kind: TaskKind::CodeToCode, queries: code_queries, pool };
    comment_to_code.validate()?;
    code_to_code.validate()?;
    Ok(ToyCorpus {
        train,
        held_out: held.into_iter().map(|(_, r)| r).collect(),
        comment_to_code,
        code_to_code,
    })
}
