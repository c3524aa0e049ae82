//! Small built-in sentences used by tests, docs and the CLI smoke checks.

use crate::corpus::{AnnotatedSentence, NerSpan};
use crate::tree::parse_bracketed_tree;

pub const ESTILL_TEXT: &str = "The Town of Estill is located in the southern half of Hampton County .";

pub const ESTILL_TREE: &str = "(S (NP (NP (DT The) (NNP Town)) (PP (IN of) (NP (NNP Estill)))) \
(VP (VBZ is) (VBN located) (PP (IN in) (NP (DT the) (JJ southern) (NN half) (IN of) \
(NP (NNP Hampton) (NNP County))))) (. .))";

/// The Estill sentence with one NE, "Hampton County" (GPE) at tokens 11..13.
pub fn estill_sentence() -> AnnotatedSentence {
    AnnotatedSentence {
        id: "estill-0".into(),
        passage: None,
        tokens: ESTILL_TEXT.split(' ').map(str::to_string).collect(),
        ner_spans: vec![NerSpan::new(11, 13, "GPE")],
        tree: parse_bracketed_tree(ESTILL_TREE).expect("built-in tree parses"),
    }
}
