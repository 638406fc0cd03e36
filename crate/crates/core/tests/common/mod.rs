#![allow(dead_code)]

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use chorus::annotation::{normalize_keyword, SpanKind};
use chorus::clock::LogicalClock;
use chorus::engine::Engine;
use chorus::prompts::PromptCatalog;
use chorus::provider::ScriptedProvider;
use chorus::store::{KeywordKind, MessageKind, Session, SessionConfig};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

pub const TENNIS_TURN: &str = include_str!("../../fixtures/tennis_turn.txt");
pub const REPLAY: &str = include_str!("../../fixtures/replay_camera.json");

pub const CAMERA_TURN1: &str = "@{Alex}(opinion): As a professional photographer, I value %{image quality}, %{durability} and %{battery life}. That's why I chose the &{Canon EOS 5D Mark IV}.%%%\n\n@{Jamie}(opinion): I prefer a camera that's %{lightweight}, %{easy to use} and has good %{autofocus}. I've been using the &{Sony Alpha a6000}.%%%\n\n@{Taylor}(opinion): For me %{portability}, %{battery life} and %{price} are key. I use the &{Fujifilm X-T3}.%%%";

/// `n` introductions named P1..Pn, each with three criteria and one option.
pub fn intros(names: &[&str]) -> String {
    names
        .iter()
        .map(|n| format!("@{{{n}}}(opinion): I am {n}. I value %{{{n} quality}}, %{{price}} and %{{weight}}, so I chose &{{{n} Camera}}.%%%"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub fn reply(name: &str, text: &str) -> String {
    format!("@{{{name}}}(opinion): {text}%%%")
}

pub fn names(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn scripted(completions: &[String]) -> (Engine, Arc<ScriptedProvider>) {
    let provider = Arc::new(ScriptedProvider::new(completions.iter().cloned()));
    let engine = Engine::new(PromptCatalog::builtin(), provider.clone(), Arc::new(LogicalClock::new(1_000, 1)));
    (engine, provider)
}

pub fn new_session() -> Session {
    Session::new("test", 1_000, SessionConfig::default())
}

/// Independent recount of the history index: for each keyword, the number
/// of committed persona messages whose raw content mentions it.
pub fn brute_force_counts(session: &Session) -> BTreeMap<(KeywordKind, String), u32> {
    let mut counts = BTreeMap::new();
    for m in session.messages.iter().filter(|m| m.kind == MessageKind::Persona) {
        let mut seen: BTreeSet<(KeywordKind, String)> = BTreeSet::new();
        for (sigil, kind) in [('%', KeywordKind::Criterion), ('&', KeywordKind::Option)] {
            let pattern = format!("{sigil}{{");
            let mut rest = m.content.as_str();
            while let Some(pos) = rest.find(&pattern) {
                let after = &rest[pos + 2..];
                let close = after.find('}').expect("closed annotation");
                seen.insert((kind, normalize_keyword(&after[..close]).unwrap()));
                rest = &after[close + 1..];
            }
        }
        for key in seen {
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

pub fn index_counts(session: &Session) -> BTreeMap<(KeywordKind, String), u32> {
    session
        .index
        .iter()
        .map(|(r, e)| ((r.kind, r.key.clone()), e.count))
        .collect()
}

pub fn span_kind_of(kind: KeywordKind) -> SpanKind {
    match kind {
        KeywordKind::Criterion => SpanKind::Criterion,
        KeywordKind::Option => SpanKind::Option,
    }
}

#[derive(Clone, Default)]
pub struct ServedPage {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl ServedPage {
    pub fn ok(body: impl Into<String>) -> Self {
        Self {
            status: 200,
            body: body.into(),
            delay: Duration::ZERO,
        }
    }

    pub fn slow(delay: Duration) -> Self {
        Self {
            status: 200,
            body: "<p>late</p>".into(),
            delay,
        }
    }
}

/// Local HTTP server for grounding tests. Counts every request it serves.
pub struct FixtureServer {
    pub base: String,
    pub hits: Arc<AtomicUsize>,
    _runtime: tokio::runtime::Runtime,
}

impl FixtureServer {
    pub fn start(pages: HashMap<String, ServedPage>) -> Self {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
            .unwrap();
        let hits = Arc::new(AtomicUsize::new(0));
        let state = (Arc::new(pages), hits.clone());
        let listener = runtime
            .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
            .unwrap();
        let addr = listener.local_addr().unwrap();
        let app = Router::new().route("/{*path}", get(serve_page)).with_state(state);
        runtime.spawn(async move {
            axum::serve(listener, app).await.unwrap();
        });
        Self {
            base: format!("http://{addr}"),
            hits,
            _runtime: runtime,
        }
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base, path.trim_start_matches('/'))
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::SeqCst)
    }
}

type ServerState = (Arc<HashMap<String, ServedPage>>, Arc<AtomicUsize>);

async fn serve_page(State((pages, hits)): State<ServerState>, Path(path): Path<String>) -> Response {
    hits.fetch_add(1, Ordering::SeqCst);
    match pages.get(&path) {
        Some(page) => {
            if !page.delay.is_zero() {
                tokio::time::sleep(page.delay).await;
            }
            (StatusCode::from_u16(page.status).unwrap(), Html(page.body.clone())).into_response()
        }
        None => StatusCode::NOT_FOUND.into_response(),
    }
}
