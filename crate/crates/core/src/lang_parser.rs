//! Parser for the controlled instruction grammar, the inverse of
//! [`TemplateBank::render_with`](crate::spatial_lang::TemplateBank::render_with).
//!
//! Matching is case-insensitive, articles (`the`, `a`, `an`) are optional
//! anywhere, trailing punctuation on words is ignored, and multi-word names
//! (verbs, cells, directions, objects) bind longest-first.

use std::fmt;
use std::ops::Range;

use thiserror::Error;

use crate::scene::{Direction8, GridCell, Scene};
use crate::semantics_eval::PlacementRegion;
use crate::spatial_lang::{
    Intent, PlacementSpec, TemplateBank, ThresholdConfig, CELL_SLOT, DIRECTION_SLOT, REFERENCE_SLOT,
};

const ARTICLES: [&str; 3] = ["the", "a", "an"];

/// Words that may not appear inside object names.
pub const RESERVED_WORDS: [&str; 5] = ["the", "a", "an", "and", "it"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParseErrorKind {
    UnknownVerb,
    UnknownObject,
    UnknownCell,
    UnknownDirection,
    MalformedStructure,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParseErrorKind::UnknownVerb => "unknown verb",
            ParseErrorKind::UnknownObject => "unknown object",
            ParseErrorKind::UnknownCell => "unknown cell",
            ParseErrorKind::UnknownDirection => "unknown direction",
            ParseErrorKind::MalformedStructure => "malformed structure",
        })
    }
}

/// Failure to parse an instruction. `span` is a character range into the
/// input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at {}..{}: {message}", span.start, span.end)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub span: Range<usize>,
    pub message: String,
}

#[derive(Debug, Clone)]
struct Token {
    word: String,
    span: Range<usize>,
}

fn tokenize(text: &str) -> (Vec<Token>, usize) {
    let mut tokens = Vec::new();
    let mut start = None;
    let mut count = 0;
    let chars: Vec<char> = text.chars().collect();
    let push = |s: usize, e: usize, tokens: &mut Vec<Token>| {
        let raw: String = chars[s..e].iter().collect();
        let trimmed = raw.trim_end_matches(|c: char| ".,!?;:".contains(c));
        if trimmed.is_empty() {
            return;
        }
        let len = trimmed.chars().count();
        tokens.push(Token {
            word: trimmed.to_lowercase(),
            span: s..s + len,
        });
    };
    for (i, &c) in chars.iter().enumerate() {
        count = i + 1;
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                push(s, i, &mut tokens);
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        push(s, count, &mut tokens);
    }
    tokens.retain(|t| !ARTICLES.contains(&t.word.as_str()));
    (tokens, count)
}

fn words(phrase: &str) -> Vec<String> {
    phrase
        .split_whitespace()
        .map(str::to_lowercase)
        .filter(|w| !ARTICLES.contains(&w.as_str()))
        .collect()
}

/// A vocabulary entry: its word sequence and the value it denotes.
#[derive(Debug, Clone)]
struct Lexicon<T> {
    entries: Vec<(Vec<String>, T)>,
}

impl<T: Clone> Lexicon<T> {
    fn new(items: impl IntoIterator<Item = (String, T)>) -> Self {
        let mut entries: Vec<(Vec<String>, T)> = items
            .into_iter()
            .map(|(s, v)| (words(&s), v))
            .filter(|(w, _)| !w.is_empty())
            .collect();
        // longest first; stable, so equal lengths keep declaration order
        entries.sort_by_key(|e| std::cmp::Reverse(e.0.len()));
        Self { entries }
    }

    /// Longest entry matching at `pos`, returning its value and length.
    fn longest(&self, tokens: &[Token], pos: usize) -> Option<(T, usize)> {
        self.entries.iter().find_map(|(ws, v)| {
            let end = pos + ws.len();
            (end <= tokens.len() && tokens[pos..end].iter().zip(ws).all(|(t, w)| &t.word == w))
                .then(|| (v.clone(), ws.len()))
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum FramePart {
    Word(String),
    Cell,
    Direction,
    Reference,
}

fn frame_parts(template: &str) -> Vec<FramePart> {
    template
        .split_whitespace()
        .filter_map(|w| match w {
            CELL_SLOT => Some(FramePart::Cell),
            DIRECTION_SLOT => Some(FramePart::Direction),
            REFERENCE_SLOT => Some(FramePart::Reference),
            w if ARTICLES.contains(&w) => None,
            w => Some(FramePart::Word(w.to_lowercase())),
        })
        .collect()
}

/// Parser bound to a template bank and an object catalog.
#[derive(Debug, Clone)]
pub struct Parser {
    pick_verbs: Lexicon<()>,
    place_verbs: Lexicon<()>,
    objects: Lexicon<String>,
    cells: Lexicon<GridCell>,
    directions: Lexicon<Direction8>,
    frames: Vec<Vec<FramePart>>,
}

impl Parser {
    pub fn new(bank: TemplateBank, catalog: impl IntoIterator<Item = String>) -> Self {
        let mut cells: Vec<(String, GridCell)> = GridCell::ALL
            .iter()
            .map(|c| (c.name().to_owned(), *c))
            .collect();
        cells.push((
            "middle center".to_owned(),
            "center".parse().expect("canonical cell"),
        ));
        Self {
            pick_verbs: Lexicon::new(bank.pick_verbs.into_iter().map(|v| (v, ()))),
            place_verbs: Lexicon::new(bank.place_verbs.into_iter().map(|v| (v, ()))),
            objects: Lexicon::new(catalog.into_iter().map(|n| (n.clone(), n))),
            cells: Lexicon::new(cells),
            directions: Lexicon::new(Direction8::ALL.iter().map(|d| (d.name().to_owned(), *d))),
            frames: bank
                .absolute_frames
                .iter()
                .chain(&bank.relative_frames)
                .map(|f| frame_parts(f))
                .collect(),
        }
    }

    /// Parser over the default template bank.
    pub fn with_catalog(catalog: &[String]) -> Self {
        Self::new(TemplateBank::default(), catalog.iter().cloned())
    }

    pub fn parse(&self, text: &str) -> Result<Intent, ParseError> {
        let (tokens, len) = tokenize(text);
        let span_at = |pos: usize| -> Range<usize> {
            tokens.get(pos).map(|t| t.span.clone()).unwrap_or(len..len)
        };
        let span_until = |pos: usize, stop: &str| -> Range<usize> {
            let start = span_at(pos).start;
            let end = tokens[pos.min(tokens.len())..]
                .iter()
                .take_while(|t| t.word != stop)
                .last()
                .map(|t| t.span.end)
                .unwrap_or(start);
            start..end
        };
        let fail = |kind, span, message: String| {
            Err(ParseError {
                kind,
                span,
                message,
            })
        };

        let mut pos = 0;
        let Some((_, n)) = self.pick_verbs.longest(&tokens, pos) else {
            return fail(
                ParseErrorKind::UnknownVerb,
                span_at(pos),
                "expected a pick verb".into(),
            );
        };
        pos += n;
        let Some((pick_target, n)) = self.objects.longest(&tokens, pos) else {
            return fail(
                ParseErrorKind::UnknownObject,
                span_until(pos, "and"),
                "expected an object from the catalog".into(),
            );
        };
        pos += n;
        if tokens.get(pos).map(|t| t.word.as_str()) != Some("and") {
            return fail(
                ParseErrorKind::MalformedStructure,
                span_at(pos),
                "expected `and`".into(),
            );
        }
        pos += 1;
        let Some((_, n)) = self.place_verbs.longest(&tokens, pos) else {
            return fail(
                ParseErrorKind::UnknownVerb,
                span_at(pos),
                "expected a place verb".into(),
            );
        };
        pos += n;
        if tokens.get(pos).map(|t| t.word.as_str()) == Some("it") {
            pos += 1;
        }

        let mut best_err: Option<(usize, ParseError)> = None;
        for frame in &self.frames {
            match self.match_frame(frame, &tokens, pos, len) {
                Ok(placement) => {
                    return Ok(Intent {
                        pick_target,
                        placement,
                    })
                }
                Err((depth, err)) => {
                    if best_err.as_ref().is_none_or(|(d, _)| depth > *d) {
                        best_err = Some((depth, err));
                    }
                }
            }
        }
        Err(best_err.map(|(_, e)| e).unwrap_or(ParseError {
            kind: ParseErrorKind::MalformedStructure,
            span: span_at(pos),
            message: "no placement frame".into(),
        }))
    }

    fn match_frame(
        &self,
        frame: &[FramePart],
        tokens: &[Token],
        mut pos: usize,
        len: usize,
    ) -> Result<PlacementSpec, (usize, ParseError)> {
        let span_at = |pos: usize| tokens.get(pos).map(|t| t.span.clone()).unwrap_or(len..len);
        let err = |depth: usize, kind, pos: usize, message: String| {
            Err((
                depth,
                ParseError {
                    kind,
                    span: span_at(pos),
                    message,
                },
            ))
        };
        let mut cell = None;
        let mut direction = None;
        let mut reference = None;
        for (depth, part) in frame.iter().enumerate() {
            match part {
                FramePart::Word(w) => {
                    if tokens.get(pos).map(|t| &t.word) != Some(w) {
                        return err(
                            depth,
                            ParseErrorKind::MalformedStructure,
                            pos,
                            format!("expected `{w}`"),
                        );
                    }
                    pos += 1;
                }
                FramePart::Cell => match self.cells.longest(tokens, pos) {
                    Some((c, n)) => {
                        cell = Some(c);
                        pos += n;
                    }
                    None => {
                        return err(
                            depth,
                            ParseErrorKind::UnknownCell,
                            pos,
                            "expected a grid cell".into(),
                        )
                    }
                },
                FramePart::Direction => match self.directions.longest(tokens, pos) {
                    Some((d, n)) => {
                        direction = Some(d);
                        pos += n;
                    }
                    None => {
                        return err(
                            depth,
                            ParseErrorKind::UnknownDirection,
                            pos,
                            "expected a direction".into(),
                        )
                    }
                },
                FramePart::Reference => match self.objects.longest(tokens, pos) {
                    Some((r, n)) => {
                        reference = Some(r);
                        pos += n;
                    }
                    None => {
                        return err(
                            depth,
                            ParseErrorKind::UnknownObject,
                            pos,
                            "expected a reference object from the catalog".into(),
                        )
                    }
                },
            }
        }
        if pos != tokens.len() {
            return err(
                frame.len(),
                ParseErrorKind::MalformedStructure,
                pos,
                "unexpected trailing words".into(),
            );
        }
        match (cell, direction, reference) {
            (Some(cell), None, None) => Ok(PlacementSpec::Absolute { cell }),
            (None, Some(direction), Some(reference)) => Ok(PlacementSpec::Relative {
                direction,
                reference,
            }),
            _ => err(
                frame.len(),
                ParseErrorKind::MalformedStructure,
                pos,
                "frame mixes slot kinds".into(),
            ),
        }
    }
}

/// Parses with the default template bank.
pub fn parse(text: &str, catalog: &[String]) -> Result<Intent, ParseError> {
    Parser::with_catalog(catalog).parse(text)
}

/// Whether a catalog name can be bound unambiguously by the grammar.
pub fn is_parse_safe(name: &str) -> bool {
    !name.is_empty()
        && name
            .split_whitespace()
            .all(|w| !RESERVED_WORDS.contains(&w))
}

/// Ground-truth consistency between two intents in the same scene.
///
/// Same pick target and either identical placements or an absolute/relative
/// pair whose placement regions overlap. Reflexive and symmetric but not
/// transitive.
pub fn intents_equivalent(
    a: &Intent,
    b: &Intent,
    scene: &Scene,
    thresholds: &ThresholdConfig,
) -> bool {
    intents_equivalent_with(a, b, scene, thresholds, |ra, rb| ra.intersects(rb))
}

/// As [`intents_equivalent`] with a caller-supplied region intersection test.
pub fn intents_equivalent_with(
    a: &Intent,
    b: &Intent,
    scene: &Scene,
    thresholds: &ThresholdConfig,
    intersects: impl FnOnce(&PlacementRegion, &PlacementRegion) -> bool,
) -> bool {
    if a.pick_target != b.pick_target {
        return false;
    }
    if a.placement == b.placement {
        return true;
    }
    if a.placement.kind() == b.placement.kind() {
        return false;
    }
    match (
        PlacementRegion::of(scene, &a.placement, thresholds),
        PlacementRegion::of(scene, &b.placement, thresholds),
    ) {
        (Ok(ra), Ok(rb)) => intersects(&ra, &rb),
        _ => false,
    }
}
