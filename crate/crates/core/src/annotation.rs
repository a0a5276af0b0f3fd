//! Anchored, attributed annotations: creation, follow-up threads, reuse
//! lineage and re-anchoring of fragment anchors against edited text.
//!
//! Fragment offsets count Unicode scalar values (chars), not bytes, and are
//! relative to the segment addressed by `segment_path`. Segments are
//! paragraphs (separated by a blank line) at the first level and lines within
//! a paragraph at the second level; an empty path addresses the whole body.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::Document;
use crate::error::{Error, Result};
use crate::ids::{ActorId, AnnotationId, DocUri, DpId};
use crate::repository::TemporalStamp;

/// Characters of context captured on each side of a fragment.
pub const CONTEXT_WINDOW: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "id", rename_all = "snake_case")]
pub enum AnchorTarget {
    Document(DocUri),
    Annotation(AnnotationId),
}

impl std::fmt::Display for AnchorTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AnchorTarget::Document(uri) => write!(f, "{uri}"),
            AnchorTarget::Annotation(id) => write!(f, "{id}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContextQuote {
    #[serde(default)]
    pub prefix: String,
    pub exact: String,
    #[serde(default)]
    pub suffix: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FragmentLocator {
    #[serde(default)]
    pub segment_path: Vec<usize>,
    pub start_offset: usize,
    pub end_offset: usize,
    pub context_quote: ContextQuote,
}

impl FragmentLocator {
    /// Builds a locator over `text` (the addressed segment) with the standard
    /// context window.
    pub fn capture(text: &str, segment_path: Vec<usize>, start: usize, end: usize) -> Result<Self> {
        let chars: Vec<char> = text.chars().collect();
        check_offsets(start, end, chars.len())?;
        Ok(Self {
            segment_path,
            start_offset: start,
            end_offset: end,
            context_quote: quote_at(&chars, start, end),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Anchor {
    pub target: AnchorTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fragment: Option<FragmentLocator>,
}

impl Anchor {
    pub fn whole_document(uri: DocUri) -> Self {
        Self {
            target: AnchorTarget::Document(uri),
            fragment: None,
        }
    }

    pub fn whole_annotation(id: AnnotationId) -> Self {
        Self {
            target: AnchorTarget::Annotation(id),
            fragment: None,
        }
    }

    pub fn fragment(target: AnchorTarget, locator: FragmentLocator) -> Self {
        Self {
            target,
            fragment: Some(locator),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AttributePair {
    pub attribute: String,
    pub value: String,
}

impl AttributePair {
    pub fn new(attribute: impl Into<String>, value: impl Into<String>) -> Self {
        Self {
            attribute: attribute.into(),
            value: value.into(),
        }
    }

    /// Key used for matching: trimmed and lowercased. The stored key is kept
    /// verbatim.
    pub fn match_key(&self) -> String {
        normalize_key(&self.attribute)
    }
}

pub fn normalize_key(key: &str) -> String {
    key.trim().to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: AnnotationId,
    pub author: ActorId,
    pub t_a: TemporalStamp,
    pub anchor: Anchor,
    pub body: String,
    pub attributes: Vec<AttributePair>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parent: Option<AnnotationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub derived_from: Option<AnnotationId>,
    pub dp_id: DpId,
}

impl Annotation {
    pub fn attribute(&self, key: &str) -> Option<&str> {
        let key = normalize_key(key);
        self.attributes
            .iter()
            .find(|a| a.match_key() == key)
            .map(|a| a.value.as_str())
    }
}

/// Result of re-anchoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResolvedSpan {
    WholeDocument,
    Span {
        segment_path: Vec<usize>,
        start_offset: usize,
        end_offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreadNode {
    pub annotation: Annotation,
    pub children: Vec<ThreadNode>,
}

impl ThreadNode {
    pub fn len(&self) -> usize {
        1 + self.children.iter().map(ThreadNode::len).sum::<usize>()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn depth(&self) -> usize {
        self.children.iter().map(|c| 1 + c.depth()).max().unwrap_or(0)
    }

    /// Pre-order traversal.
    pub fn flatten(&self) -> Vec<&Annotation> {
        let mut out = vec![&self.annotation];
        for child in &self.children {
            out.extend(child.flatten());
        }
        out
    }
}

/// Content of a new annotation before the store assigns id and stamp.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotationDraft {
    pub body: String,
    #[serde(default)]
    pub attributes: Vec<AttributePair>,
}

impl AnnotationDraft {
    pub fn new(body: impl Into<String>) -> Self {
        Self {
            body: body.into(),
            attributes: Vec::new(),
        }
    }

    pub fn with_attribute(mut self, attribute: &str, value: &str) -> Self {
        self.attributes.push(AttributePair::new(attribute, value));
        self
    }

    fn check(&self) -> Result<()> {
        if self
            .attributes
            .iter()
            .any(|a| a.attribute.trim().is_empty())
        {
            return Err(Error::EmptyField("attribute"));
        }
        if self.body.trim().is_empty() && self.attributes.is_empty() {
            return Err(Error::EmptyAnnotation);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationStore {
    annotations: BTreeMap<AnnotationId, Annotation>,
    /// Child ids per parent in t_a order.
    replies: BTreeMap<AnnotationId, Vec<AnnotationId>>,
    /// Insertion (log) order.
    order: Vec<AnnotationId>,
}

impl AnnotationStore {
    pub fn get(&self, id: &AnnotationId) -> Option<&Annotation> {
        self.annotations.get(id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// All annotations in creation order.
    pub fn iter(&self) -> impl Iterator<Item = &Annotation> {
        self.order.iter().map(|id| &self.annotations[id])
    }

    /// Text a fragment of `target` is measured against.
    pub fn target_text<'a>(
        &'a self,
        documents: &'a BTreeMap<DocUri, Document>,
        target: &AnchorTarget,
    ) -> Result<&'a str> {
        match target {
            AnchorTarget::Document(uri) => documents
                .get(uri)
                .map(|d| d.content.as_str())
                .ok_or_else(|| Error::DanglingAnchor(uri.to_string())),
            AnchorTarget::Annotation(id) => self
                .annotations
                .get(id)
                .map(|a| a.body.as_str())
                .ok_or_else(|| Error::DanglingAnchor(id.to_string())),
        }
    }

    /// Checks an anchor at creation time and returns it with a canonical
    /// context quote: `exact` must equal the addressed text, prefix and
    /// suffix are recaptured from the target.
    pub fn check_anchor(
        &self,
        documents: &BTreeMap<DocUri, Document>,
        anchor: &Anchor,
    ) -> Result<Anchor> {
        let text = self.target_text(documents, &anchor.target)?;
        let Some(fragment) = &anchor.fragment else {
            return Ok(anchor.clone());
        };
        let segment = segment_text(text, &fragment.segment_path).ok_or_else(|| {
            Error::InvalidFragment(format!(
                "segment path {:?} does not exist",
                fragment.segment_path
            ))
        })?;
        let chars: Vec<char> = segment.chars().collect();
        check_offsets(fragment.start_offset, fragment.end_offset, chars.len())?;
        let found: String = chars[fragment.start_offset..fragment.end_offset]
            .iter()
            .collect();
        if found != fragment.context_quote.exact {
            return Err(Error::QuoteMismatch {
                expected: fragment.context_quote.exact.clone(),
                found,
            });
        }
        let mut fragment = fragment.clone();
        fragment.context_quote = quote_at(&chars, fragment.start_offset, fragment.end_offset);
        Ok(Anchor {
            target: anchor.target.clone(),
            fragment: Some(fragment),
        })
    }

    #[allow(clippy::too_many_arguments)]
    pub fn plan_create(
        &self,
        documents: &BTreeMap<DocUri, Document>,
        id: AnnotationId,
        author: ActorId,
        dp_id: DpId,
        anchor: &Anchor,
        draft: AnnotationDraft,
        t_a: TemporalStamp,
    ) -> Result<Annotation> {
        if let Some(fragment) = &anchor.fragment {
            check_offsets(fragment.start_offset, fragment.end_offset, usize::MAX)?;
        }
        let anchor = self.check_anchor(documents, anchor)?;
        draft.check()?;
        Ok(Annotation {
            annotation_id: id,
            author,
            t_a,
            anchor,
            body: draft.body,
            attributes: draft.attributes,
            parent: None,
            derived_from: None,
            dp_id,
        })
    }

    pub fn plan_follow_up(
        &self,
        id: AnnotationId,
        author: ActorId,
        parent: &AnnotationId,
        draft: AnnotationDraft,
        t_a: TemporalStamp,
    ) -> Result<Annotation> {
        let parent_ann = self
            .annotations
            .get(parent)
            .ok_or_else(|| Error::DanglingAnchor(parent.to_string()))?;
        draft.check()?;
        Ok(Annotation {
            annotation_id: id,
            author,
            t_a,
            anchor: Anchor::whole_annotation(parent.clone()),
            body: draft.body,
            attributes: draft.attributes,
            parent: Some(parent.clone()),
            derived_from: None,
            dp_id: parent_ann.dp_id.clone(),
        })
    }

    /// Copies `source` onto a new anchor, applying any edits. The source is
    /// left untouched.
    #[allow(clippy::too_many_arguments)]
    pub fn plan_reuse(
        &self,
        documents: &BTreeMap<DocUri, Document>,
        id: AnnotationId,
        author: ActorId,
        source: &AnnotationId,
        new_anchor: &Anchor,
        edited_body: Option<String>,
        edited_attributes: Option<Vec<AttributePair>>,
        t_a: TemporalStamp,
    ) -> Result<Annotation> {
        let src = self
            .annotations
            .get(source)
            .ok_or_else(|| Error::DanglingAnchor(source.to_string()))?;
        let anchor = self.check_anchor(documents, new_anchor)?;
        let draft = AnnotationDraft {
            body: edited_body.unwrap_or_else(|| src.body.clone()),
            attributes: edited_attributes.unwrap_or_else(|| src.attributes.clone()),
        };
        draft.check()?;
        let dp_id = match &anchor.target {
            AnchorTarget::Document(uri) => documents
                .get(uri)
                .and_then(|d| d.dp_id.clone())
                .unwrap_or_else(|| src.dp_id.clone()),
            AnchorTarget::Annotation(target) => self.annotations[target].dp_id.clone(),
        };
        Ok(Annotation {
            annotation_id: id,
            author,
            t_a,
            anchor,
            body: draft.body,
            attributes: draft.attributes,
            parent: None,
            derived_from: Some(source.clone()),
            dp_id,
        })
    }

    pub fn apply(&mut self, annotation: Annotation) -> Result<(), String> {
        if self.annotations.contains_key(&annotation.annotation_id) {
            return Err(format!("duplicate annotation {}", annotation.annotation_id));
        }
        for link in [&annotation.parent, &annotation.derived_from].into_iter().flatten() {
            let linked = self
                .annotations
                .get(link)
                .ok_or_else(|| format!("{} links to unknown {link}", annotation.annotation_id))?;
            if linked.t_a >= annotation.t_a {
                return Err(format!("{} is not newer than {link}", annotation.annotation_id));
            }
        }
        if let Some(parent) = &annotation.parent {
            self.replies
                .entry(parent.clone())
                .or_default()
                .push(annotation.annotation_id.clone());
        }
        self.order.push(annotation.annotation_id.clone());
        self.annotations
            .insert(annotation.annotation_id.clone(), annotation);
        Ok(())
    }

    pub fn list_thread(&self, root: &AnnotationId) -> Result<ThreadNode> {
        let annotation = self
            .annotations
            .get(root)
            .ok_or_else(|| Error::DanglingAnchor(root.to_string()))?
            .clone();
        let mut children: Vec<ThreadNode> = self
            .replies
            .get(root)
            .map(|ids| ids.iter().map(|id| self.list_thread(id)).collect::<Result<_>>())
            .transpose()?
            .unwrap_or_default();
        children.sort_by_key(|c| c.annotation.t_a);
        Ok(ThreadNode {
            annotation,
            children,
        })
    }

    /// `[id, source, source's source, ...]` following `derived_from`.
    pub fn lineage(&self, id: &AnnotationId) -> Result<Vec<Annotation>> {
        let mut out = Vec::new();
        let mut cursor = Some(id.clone());
        while let Some(current) = cursor {
            let ann = self
                .annotations
                .get(&current)
                .ok_or_else(|| Error::UnknownAnnotation(current.clone()))?;
            cursor = ann.derived_from.clone();
            out.push(ann.clone());
        }
        Ok(out)
    }
}

fn check_offsets(start: usize, end: usize, len: usize) -> Result<()> {
    if start >= end {
        return Err(Error::InvalidFragment(format!(
            "start offset {start} must be below end offset {end}"
        )));
    }
    if end > len {
        return Err(Error::InvalidFragment(format!(
            "end offset {end} exceeds segment length {len}"
        )));
    }
    Ok(())
}

fn quote_at(chars: &[char], start: usize, end: usize) -> ContextQuote {
    let before = start.saturating_sub(CONTEXT_WINDOW);
    let after = (end + CONTEXT_WINDOW).min(chars.len());
    ContextQuote {
        prefix: chars[before..start].iter().collect(),
        exact: chars[start..end].iter().collect(),
        suffix: chars[end..after].iter().collect(),
    }
}

/// Text of the segment addressed by `path`, or `None` when the path does not
/// exist. Paths deeper than two levels are not addressable.
pub fn segment_text<'a>(content: &'a str, path: &[usize]) -> Option<&'a str> {
    match path {
        [] => Some(content),
        [paragraph] => content.split("\n\n").nth(*paragraph),
        [paragraph, line] => content
            .split("\n\n")
            .nth(*paragraph)
            .and_then(|p| p.split('\n').nth(*line)),
        _ => None,
    }
}

/// Char offset of the addressed segment within `content`.
fn segment_origin(content: &str, path: &[usize]) -> Option<usize> {
    let segment = segment_text(content, path)?;
    let byte = segment.as_ptr() as usize - content.as_ptr() as usize;
    Some(content[..byte].chars().count())
}

/// Char positions at which `needle` starts in `hay`, overlapping matches
/// included.
fn find_all(hay: &str, needle: &str) -> Vec<usize> {
    if needle.is_empty() {
        return Vec::new();
    }
    hay.char_indices()
        .enumerate()
        .filter(|(_, (byte, _))| hay[*byte..].starts_with(needle))
        .map(|(char_idx, _)| char_idx)
        .collect()
}

fn nearest(candidates: &[usize], origin: usize) -> Option<usize> {
    // Candidates are ascending, so `min_by_key` keeps the earlier one on ties.
    candidates
        .iter()
        .copied()
        .min_by_key(|&c| c.abs_diff(origin))
}

fn context_matches(chars: &[char], fragment: &FragmentLocator) -> bool {
    let quote = &fragment.context_quote;
    let prefix_len = quote.prefix.chars().count();
    let suffix_len = quote.suffix.chars().count();
    let (start, end) = (fragment.start_offset, fragment.end_offset);
    if start < prefix_len || end + suffix_len > chars.len() || start >= end {
        return false;
    }
    let window: String = chars[start - prefix_len..end + suffix_len].iter().collect();
    window == format!("{}{}{}", quote.prefix, quote.exact, quote.suffix)
}

fn exact_matches(chars: &[char], fragment: &FragmentLocator) -> bool {
    let (start, end) = (fragment.start_offset, fragment.end_offset);
    start < end
        && end <= chars.len()
        && chars[start..end].iter().collect::<String>() == fragment.context_quote.exact
}

/// Locates `anchor` in the current content of its target.
///
/// Order of attempts: the stored offsets with their full context, a search for
/// `prefix‖exact‖suffix` within the addressed segment, the same search over the
/// whole body, and finally the stored offsets if `exact` alone still matches
/// there. Among several context matches the one nearest the stored start wins,
/// the earlier one on ties.
pub fn resolve_anchor(anchor: &Anchor, current_content: &str) -> Result<ResolvedSpan> {
    let Some(fragment) = &anchor.fragment else {
        return Ok(ResolvedSpan::WholeDocument);
    };
    let quote = &fragment.context_quote;
    let needle = format!("{}{}{}", quote.prefix, quote.exact, quote.suffix);
    let prefix_len = quote.prefix.chars().count();
    let exact_len = quote.exact.chars().count();
    let span = |path: &[usize], start: usize| ResolvedSpan::Span {
        segment_path: path.to_vec(),
        start_offset: start,
        end_offset: start + exact_len,
    };

    let segment = segment_text(current_content, &fragment.segment_path);
    if let Some(segment) = segment {
        let chars: Vec<char> = segment.chars().collect();
        if context_matches(&chars, fragment) {
            return Ok(span(&fragment.segment_path, fragment.start_offset));
        }
        let hits = find_all(segment, &needle);
        if let Some(hit) = nearest(&hits, fragment.start_offset.saturating_sub(prefix_len)) {
            return Ok(span(&fragment.segment_path, hit + prefix_len));
        }
    }
    if !fragment.segment_path.is_empty() {
        let origin = segment_origin(current_content, &fragment.segment_path).unwrap_or(0)
            + fragment.start_offset.saturating_sub(prefix_len);
        let hits = find_all(current_content, &needle);
        if let Some(hit) = nearest(&hits, origin) {
            return Ok(span(&[], hit + prefix_len));
        }
    }
    if let Some(segment) = segment {
        let chars: Vec<char> = segment.chars().collect();
        if exact_matches(&chars, fragment) {
            return Ok(span(&fragment.segment_path, fragment.start_offset));
        }
    }
    Err(Error::Orphaned)
}

/// Text covered by a resolved span in `content`.
pub fn span_text(content: &str, span: &ResolvedSpan) -> Option<String> {
    match span {
        ResolvedSpan::WholeDocument => Some(content.to_owned()),
        ResolvedSpan::Span {
            segment_path,
            start_offset,
            end_offset,
        } => {
            let segment = segment_text(content, segment_path)?;
            let chars: Vec<char> = segment.chars().collect();
            (*end_offset <= chars.len() && start_offset < end_offset)
                .then(|| chars[*start_offset..*end_offset].iter().collect())
        }
    }
}
