//! Main-text extraction for fetched pages.
//!
//! Boilerplate containers (scripts, navigation, headers, footers, sidebars,
//! forms) are skipped. Remaining `<p>` elements are grouped by their parent
//! and the parent holding the most paragraph text wins; its paragraphs are
//! returned separated by blank lines. Pages without paragraphs fall back to
//! the visible body text.

use scraper::{ElementRef, Html, Node, Selector};
use std::collections::HashMap;

const SKIPPED_TAGS: &[&str] = &[
    "script", "style", "noscript", "nav", "header", "footer", "aside", "form", "iframe", "svg",
    "template", "button", "select", "head",
];

const BOILERPLATE_HINTS: &[&str] = &[
    "nav", "menu", "footer", "sidebar", "comment", "advert", "cookie", "banner", "share", "related",
];

/// Paragraphs with more link text than this share are treated as link lists.
const MAX_LINK_DENSITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ExtractedPage {
    pub title: String,
    pub text: String,
}

/// Document-to-text strategy used by the grounding pipeline.
pub trait Extractor: Send + Sync {
    fn extract(&self, html: &str) -> ExtractedPage;
}

/// Default [`Extractor`] backed by [`extract_main_text`].
#[derive(Debug, Default, Clone, Copy)]
pub struct DensityExtractor;

impl Extractor for DensityExtractor {
    fn extract(&self, html: &str) -> ExtractedPage {
        let doc = Html::parse_document(html);
        ExtractedPage {
            title: title_of(&doc),
            text: main_text_of(&doc),
        }
    }
}

pub fn extract_main_text(html: &str) -> String {
    if html.trim().is_empty() {
        return String::new();
    }
    main_text_of(&Html::parse_document(html))
}

pub fn extract_title(html: &str) -> String {
    title_of(&Html::parse_document(html))
}

fn title_of(doc: &Html) -> String {
    let sel = Selector::parse("title").expect("static selector");
    doc.select(&sel)
        .next()
        .map(|t| collapse(&t.text().collect::<String>()))
        .unwrap_or_default()
}

fn main_text_of(doc: &Html) -> String {
    let p_sel = Selector::parse("p").expect("static selector");
    let mut groups: Vec<(Vec<String>, usize)> = Vec::new();
    let mut slot = HashMap::new();

    for p in doc.select(&p_sel) {
        if in_boilerplate(&p) {
            continue;
        }
        let (text, link_chars) = paragraph_text(&p);
        let len = text.chars().count();
        if len == 0 || link_chars as f64 / len as f64 > MAX_LINK_DENSITY {
            continue;
        }
        let parent = p.parent().map(|n| n.id()).unwrap_or_else(|| p.id());
        let idx = *slot.entry(parent).or_insert_with(|| {
            groups.push((Vec::new(), 0));
            groups.len() - 1
        });
        groups[idx].0.push(text);
        groups[idx].1 += len;
    }

    // first group wins ties, so earlier content is preferred
    let best = groups
        .into_iter()
        .fold(None::<(Vec<String>, usize)>, |best, (paras, score)| match best {
            Some((_, s)) if s >= score => best,
            _ => Some((paras, score)),
        });
    match best {
        Some((paras, _)) => paras.join("\n\n"),
        None => fallback_text(doc),
    }
}

fn is_boilerplate_element(el: &ElementRef<'_>) -> bool {
    let value = el.value();
    if SKIPPED_TAGS.contains(&value.name()) {
        return true;
    }
    let marker = format!(
        "{} {}",
        value.id().unwrap_or_default(),
        value.attr("class").unwrap_or_default()
    )
    .to_lowercase();
    marker
        .split(|c: char| !c.is_ascii_alphanumeric())
        .any(|token| BOILERPLATE_HINTS.contains(&token))
}

fn in_boilerplate(el: &ElementRef<'_>) -> bool {
    std::iter::once(*el)
        .chain(el.ancestors().filter_map(ElementRef::wrap))
        .any(|e| is_boilerplate_element(&e))
}

/// Collapsed text of a paragraph and how many of its characters sit in links.
fn paragraph_text(p: &ElementRef<'_>) -> (String, usize) {
    let mut raw = String::new();
    let mut link_raw = String::new();
    collect_text(p, false, &mut raw, &mut link_raw);
    let text = collapse(&raw);
    let link_chars = collapse(&link_raw).chars().count();
    (text, link_chars)
}

fn collect_text(el: &ElementRef<'_>, in_link: bool, out: &mut String, link_out: &mut String) {
    for child in el.children() {
        match child.value() {
            Node::Text(t) => {
                out.push_str(t);
                if in_link {
                    link_out.push_str(t);
                    link_out.push(' ');
                }
            }
            Node::Element(_) => {
                let child_el = ElementRef::wrap(child).expect("element node");
                if is_boilerplate_element(&child_el) {
                    continue;
                }
                let link = in_link || child_el.value().name() == "a";
                if child_el.value().name() == "br" {
                    out.push(' ');
                }
                collect_text(&child_el, link, out, link_out);
            }
            _ => {}
        }
    }
}

fn fallback_text(doc: &Html) -> String {
    let body_sel = Selector::parse("body").expect("static selector");
    let Some(body) = doc.select(&body_sel).next() else {
        return String::new();
    };
    let mut raw = String::new();
    let mut sink = String::new();
    collect_text(&body, false, &mut raw, &mut sink);
    collapse(&raw)
}

fn collapse(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}
