//! Synthetic extractive-QA data with answers beyond named entities.
//!
//! The pipeline reads sentences annotated with NER spans and constituency
//! trees ([`corpus`]), grows each named entity into a larger constituent
//! ([`extension`]), turns the sentence into a wh-question with the answer
//! masked out ([`question`]), and assembles, summarizes and splits the
//! resulting dataset ([`dataset`]). [`filter`] keeps the instances a QA
//! model agrees with and drives the iterative self-training loop.

pub mod corpus;
pub mod dataset;
pub mod extension;
pub mod filter;
pub mod question;
pub mod rng;
pub mod samples;
pub mod tree;

pub use corpus::{load_corpus, validate_sentence, AnnotatedSentence, NerSpan, ValidationReport};
pub use dataset::{
    build_dataset, compute_length_histogram, compute_type_distribution, export_squad, import_squad,
    random_extension_dataset, split_dataset, AnswerTypePrior, BuildMode, BuildOptions, QADataset, SplitPlan,
};
pub use extension::{classify_label, extend_answer, extract_all_answers, AnswerType, ExtendedAnswer, ExtensionConfig};
pub use filter::{
    filter_part, run_training_procedure, substring_keep, top_k_keep, FilterConfig, FilterDecision, ModelAdapter,
    PredictionRecord,
};
pub use question::{
    build_cloze, cloze_to_natural, high_level_mask, make_instance, wh_word_for, ClozeQuestion, MaskCategory, QAInstance,
};
pub use tree::{parse_bracketed_tree, ParseTree, Span};
