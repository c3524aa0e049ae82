//! Helpers shared by the integration tests of several crates: random trees
//! with their node table kept on the side, a brute-force answer oracle that
//! only looks at that table, and fixture paths.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::Rng;

use spanqa_core::corpus::{AnnotatedSentence, NerSpan};
use spanqa_core::extension::AnswerType;
use spanqa_core::question::QAInstance;
use spanqa_core::tree::parse_bracketed_tree;

pub fn fixture(name: &str) -> PathBuf {
    // Works from this crate and from crates that include this file by path.
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../core/tests/fixtures")).join(name)
}

/// Answer-type counts of the reference dataset, in NE, NP, ADJP, VP, S order.
pub const REFERENCE_TYPE_COUNTS: [u64; 5] = [716_716, 161_178, 2_563, 23_420, 4_634];

const PHRASES: [&str; 10] = ["NP", "VP", "PP", "S", "SBAR", "ADJP", "ADVP", "NP-SBJ", "QP", "S-TPC"];
const TAGS: [&str; 6] = ["NN", "NNP", "VBD", "IN", "DT", "JJ"];

#[derive(Debug, Clone)]
pub struct NodeInfo {
    pub label: String,
    pub start: usize,
    pub end: usize,
    pub depth: usize,
    pub preterminal: bool,
}

#[derive(Debug, Clone)]
pub struct RandomTree {
    pub text: String,
    pub tokens: Vec<String>,
    pub nodes: Vec<NodeInfo>,
}

/// A random bracketing with at most `max_depth` levels and `max_tokens`
/// leaves. Tokens are unique (`w0`, `w1`, ...).
pub fn random_tree<R: Rng>(rng: &mut R, max_depth: usize, max_tokens: usize) -> RandomTree {
    assert!(max_depth >= 2 && max_tokens >= 1);
    let mut t = RandomTree {
        text: String::new(),
        tokens: Vec::new(),
        nodes: Vec::new(),
    };
    let budget = rng.gen_range(1..=max_tokens);
    let mut left = budget;
    grow(rng, &mut t, 1, max_depth, &mut left, true, "S");
    t
}

fn grow<R: Rng>(
    rng: &mut R,
    t: &mut RandomTree,
    depth: usize,
    max_depth: usize,
    left: &mut usize,
    root: bool,
    label: &str,
) {
    let start = t.tokens.len();
    let idx = t.nodes.len();
    t.nodes.push(NodeInfo {
        label: label.to_string(),
        start,
        end: start,
        depth,
        preterminal: false,
    });
    // Leaves must be pre-terminals, so a phrase needs room for one more level.
    let must_be_preterminal = depth >= max_depth || *left == 0;
    let make_preterminal = !root && (must_be_preterminal || (*left <= 1 && rng.gen_bool(0.6)) || rng.gen_bool(0.2));
    if make_preterminal || depth >= max_depth {
        let tag = *TAGS.choose(rng).unwrap();
        let word = format!("w{start}");
        t.text.push_str(&format!("({tag} {word})"));
        let node = &mut t.nodes[idx];
        node.label = tag.to_string();
        node.preterminal = true;
        node.end = start + 1;
        t.tokens.push(word);
        *left = left.saturating_sub(1);
        return;
    }
    t.text.push_str(&format!("({label}"));
    let kids = if root {
        rng.gen_range(1..=4)
    } else {
        rng.gen_range(1..=3)
    };
    for k in 0..kids {
        if k > 0 && *left == 0 {
            break;
        }
        t.text.push(' ');
        let child = *PHRASES.choose(rng).unwrap();
        grow(rng, t, depth + 1, max_depth, left, false, child);
    }
    t.text.push(')');
    t.nodes[idx].end = t.tokens.len();
}

impl RandomTree {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// A random contiguous span of one to three tokens.
    pub fn random_span<R: Rng>(&self, rng: &mut R) -> (usize, usize) {
        let n = self.len();
        let len = rng.gen_range(1..=n.min(3));
        let s = rng.gen_range(0..=n - len);
        (s, s + len)
    }

    pub fn sentence(&self, id: &str, nes: Vec<NerSpan>) -> AnnotatedSentence {
        AnnotatedSentence {
            id: id.to_string(),
            passage: None,
            tokens: self.tokens.clone(),
            ner_spans: nes,
            tree: parse_bracketed_tree(&self.text).expect("generated tree parses"),
        }
    }
}

fn oracle_label(label: &str, candidates: &BTreeSet<String>) -> Option<AnswerType> {
    let bare = label.split(['-', '=']).next().unwrap_or(label);
    if !candidates.contains(bare) {
        return None;
    }
    match bare {
        "NP" => Some(AnswerType::NP),
        "ADJP" => Some(AnswerType::ADJP),
        "VP" => Some(AnswerType::VP),
        "S" | "SBAR" => Some(AnswerType::S),
        _ => None,
    }
}

/// Largest candidate node covering `ne` whose length is within `omega`
/// percent of the sentence; the outermost one on ties. The NE itself when
/// nothing qualifies or the winner covers exactly the NE.
pub fn oracle_extension(
    tree: &RandomTree,
    ne: (usize, usize),
    omega: f64,
    candidates: &BTreeSet<String>,
) -> (AnswerType, (usize, usize)) {
    let n = tree.len() as f64;
    let mut best: Option<(usize, usize, AnswerType, usize)> = None;
    for node in tree.nodes.iter().filter(|x| !x.preterminal) {
        let Some(t) = oracle_label(&node.label, candidates) else {
            continue;
        };
        if node.start > ne.0 || ne.1 > node.end {
            continue;
        }
        let len = node.end - node.start;
        if len as f64 * 100.0 > omega * n {
            continue;
        }
        let better = match best {
            None => true,
            Some((s, e, _, d)) => len > e - s || (len == e - s && node.depth < d),
        };
        if better {
            best = Some((node.start, node.end, t, node.depth));
        }
    }
    match best {
        Some((s, e, t, _)) if (s, e) != ne => (t, (s, e)),
        _ => (AnswerType::NE, ne),
    }
}

pub fn default_candidates() -> BTreeSet<String> {
    ["NP", "ADJP", "VP", "S", "SBAR"]
        .into_iter()
        .map(String::from)
        .collect()
}

/// A consistent instance over a short synthetic context.
pub fn simple_instance(id: &str, context: &str, span: (usize, usize), t: AnswerType) -> QAInstance {
    let context: Vec<String> = context.split(' ').map(str::to_string).collect();
    QAInstance {
        id: id.into(),
        answer_text: context[span.0..span.1].join(" "),
        context,
        question: vec!["Who".into(), "was".into(), "there".into()],
        answer_start: span.0,
        answer_end: span.1,
        answer_type: t,
        pseudo_ner_label: "PERSON".into(),
        origin: None,
    }
}
