//! Penn-Treebank style bracketed constituency trees.
//!
//! A tree is parsed from strings such as
//! `(S (NP (DT The) (NN town)) (VP (VBZ is) (ADJP (JJ small))))`.
//! Every node records the half-open token span it covers, computed bottom-up
//! while parsing. Pre-terminals (`(NN town)`) carry exactly one token.

use std::fmt;

use thiserror::Error;

/// Half-open token interval `[start, end)`.
pub type Span = (usize, usize);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TreeError {
    #[error("unbalanced brackets at byte {0}")]
    UnbalancedBrackets(usize),
    #[error("constituent with no children at byte {0}")]
    EmptyConstituent(usize),
    #[error("unexpected token {token:?} at byte {offset}")]
    UnexpectedToken { token: String, offset: usize },
    #[error("span ({0}, {1}) is outside the tree bounds ({2}, {3})")]
    SpanOutOfBounds(usize, usize, usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Children {
    /// Pre-terminal: the node dominates a single token.
    Token(String),
    Nodes(Vec<ParseTree>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseTree {
    label: String,
    children: Children,
    span: Span,
}

impl ParseTree {
    /// Builds a pre-terminal node covering token `index`.
    pub fn leaf(label: impl Into<String>, token: impl Into<String>, index: usize) -> Self {
        ParseTree {
            label: label.into(),
            children: Children::Token(token.into()),
            span: (index, index + 1),
        }
    }

    /// Builds an internal node. Children must be contiguous and in order.
    pub fn node(label: impl Into<String>, children: Vec<ParseTree>) -> Result<Self, TreeError> {
        let (first, last) = match (children.first(), children.last()) {
            (Some(f), Some(l)) => (f.span, l.span),
            _ => return Err(TreeError::EmptyConstituent(0)),
        };
        for pair in children.windows(2) {
            if pair[0].span.1 != pair[1].span.0 {
                return Err(TreeError::UnexpectedToken {
                    token: pair[1].label.clone(),
                    offset: 0,
                });
            }
        }
        Ok(ParseTree {
            label: label.into(),
            children: Children::Nodes(children),
            span: (first.0, last.1),
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Label with functional suffixes removed: `NP-SBJ-1` -> `NP`, `NP=2` -> `NP`.
    /// Labels that start with a hyphen (`-NONE-`, `-LRB-`) are returned as is.
    pub fn bare_label(&self) -> &str {
        bare_label(&self.label)
    }

    pub fn span(&self) -> Span {
        self.span
    }

    pub fn len(&self) -> usize {
        self.span.1 - self.span.0
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn children(&self) -> &Children {
        &self.children
    }

    pub fn is_preterminal(&self) -> bool {
        matches!(self.children, Children::Token(_))
    }

    /// Child nodes; empty for pre-terminals.
    pub fn child_nodes(&self) -> &[ParseTree] {
        match &self.children {
            Children::Nodes(nodes) => nodes,
            Children::Token(_) => &[],
        }
    }

    /// Leaf tokens, left to right.
    pub fn tokens(&self) -> Vec<&str> {
        let mut out = Vec::with_capacity(self.len());
        self.collect_tokens(&mut out);
        out
    }

    fn collect_tokens<'a>(&'a self, out: &mut Vec<&'a str>) {
        match &self.children {
            Children::Token(t) => out.push(t),
            Children::Nodes(nodes) => nodes.iter().for_each(|n| n.collect_tokens(out)),
        }
    }

    /// Pre-order traversal of every node, pre-terminals included.
    pub fn nodes(&self) -> Vec<&ParseTree> {
        let mut out = Vec::new();
        let mut stack = vec![self];
        while let Some(node) = stack.pop() {
            out.push(node);
            stack.extend(node.child_nodes().iter().rev());
        }
        out
    }

    /// All nodes whose span contains `span`, innermost first.
    ///
    /// Containing nodes form a single root-to-node path, so the result is a
    /// chain ordered by increasing span length; unary chains are listed
    /// deepest node first.
    pub fn constituents_containing(&self, span: Span) -> Result<Vec<&ParseTree>, TreeError> {
        let (start, end) = span;
        if start >= end || start < self.span.0 || end > self.span.1 {
            return Err(TreeError::SpanOutOfBounds(start, end, self.span.0, self.span.1));
        }
        let mut chain = vec![self];
        let mut current = self;
        while let Some(next) = current
            .child_nodes()
            .iter()
            .find(|c| c.span.0 <= start && end <= c.span.1)
        {
            chain.push(next);
            current = next;
        }
        chain.reverse();
        Ok(chain)
    }

    /// Renders the tree back to bracketed form with single spaces.
    pub fn render(&self) -> String {
        let mut out = String::new();
        self.render_into(&mut out);
        out
    }

    fn render_into(&self, out: &mut String) {
        out.push('(');
        out.push_str(&self.label);
        match &self.children {
            Children::Token(t) => {
                out.push(' ');
                out.push_str(t);
            }
            Children::Nodes(nodes) => {
                for n in nodes {
                    out.push(' ');
                    n.render_into(out);
                }
            }
        }
        out.push(')');
    }
}

impl fmt::Display for ParseTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}

pub fn bare_label(label: &str) -> &str {
    if label.starts_with('-') {
        return label;
    }
    match label.find(['-', '=']) {
        Some(i) if i > 0 => &label[..i],
        _ => label,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Lexeme<'a> {
    Open(usize),
    Close(usize),
    Atom(&'a str, usize),
}

fn lex(text: &str) -> Vec<Lexeme<'_>> {
    let mut out = Vec::new();
    let mut atom_start: Option<usize> = None;
    for (i, ch) in text.char_indices() {
        let boundary = ch == '(' || ch == ')' || ch.is_whitespace();
        if boundary {
            if let Some(s) = atom_start.take() {
                out.push(Lexeme::Atom(&text[s..i], s));
            }
            match ch {
                '(' => out.push(Lexeme::Open(i)),
                ')' => out.push(Lexeme::Close(i)),
                _ => {}
            }
        } else if atom_start.is_none() {
            atom_start = Some(i);
        }
    }
    if let Some(s) = atom_start {
        out.push(Lexeme::Atom(&text[s..], s));
    }
    out
}

/// Parses one bracketed tree.
///
/// An unlabeled outer bracket, as in `( (S ...) )`, is kept as a node with an
/// empty label.
pub fn parse_bracketed_tree(text: &str) -> Result<ParseTree, TreeError> {
    let lexemes = lex(text);
    let mut pos = 0;
    let mut next_token = 0;
    let tree = parse_node(&lexemes, &mut pos, &mut next_token, text.len())?;
    if let Some(extra) = lexemes.get(pos) {
        return Err(match extra {
            Lexeme::Close(o) => TreeError::UnbalancedBrackets(*o),
            Lexeme::Open(o) => TreeError::UnexpectedToken {
                token: "(".into(),
                offset: *o,
            },
            Lexeme::Atom(a, o) => TreeError::UnexpectedToken {
                token: (*a).into(),
                offset: *o,
            },
        });
    }
    Ok(tree)
}

fn parse_node(
    lexemes: &[Lexeme<'_>],
    pos: &mut usize,
    next_token: &mut usize,
    text_len: usize,
) -> Result<ParseTree, TreeError> {
    let open_at = match lexemes.get(*pos) {
        Some(Lexeme::Open(o)) => *o,
        Some(Lexeme::Close(o)) => return Err(TreeError::UnbalancedBrackets(*o)),
        Some(Lexeme::Atom(a, o)) => {
            return Err(TreeError::UnexpectedToken {
                token: (*a).into(),
                offset: *o,
            })
        }
        None => return Err(TreeError::UnbalancedBrackets(text_len)),
    };
    *pos += 1;
    let label = match lexemes.get(*pos) {
        Some(Lexeme::Atom(a, _)) => {
            *pos += 1;
            (*a).to_string()
        }
        _ => String::new(),
    };
    // Pre-terminal: `(LABEL token)`.
    if let (Some(Lexeme::Atom(tok, _)), Some(Lexeme::Close(_))) = (lexemes.get(*pos), lexemes.get(*pos + 1)) {
        let leaf = ParseTree::leaf(label, *tok, *next_token);
        *next_token += 1;
        *pos += 2;
        return Ok(leaf);
    }
    let mut children = Vec::new();
    loop {
        match lexemes.get(*pos) {
            Some(Lexeme::Close(_)) => {
                *pos += 1;
                break;
            }
            Some(Lexeme::Open(_)) => children.push(parse_node(lexemes, pos, next_token, text_len)?),
            Some(Lexeme::Atom(a, o)) => {
                return Err(TreeError::UnexpectedToken {
                    token: (*a).into(),
                    offset: *o,
                })
            }
            None => return Err(TreeError::UnbalancedBrackets(text_len)),
        }
    }
    if children.is_empty() {
        return Err(TreeError::EmptyConstituent(open_at));
    }
    ParseTree::node(label, children)
}
