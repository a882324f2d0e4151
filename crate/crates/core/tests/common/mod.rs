#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use synthgen_core::prompt::{PromptTemplate, Stage};
use synthgen_core::task::Templates;
use synthgen_core::{LabelSpec, LabeledSample, TaskKind, TaskSpec};

pub fn label(id: u32, name: &str) -> LabelSpec {
    LabelSpec { label_id: id, name: name.into(), surface_form: name.into(), numeric_value: None }
}

/// Single-sentence task with `n` labels, zero-shot, word-augmented and
/// few-shot templates, task words and one exemplar per label.
pub fn single_task(id: &str, n: u32, words: &[&str]) -> TaskSpec {
    let labels: Vec<LabelSpec> = (0..n).map(|i| label(i, &format!("class{i}"))).collect();
    let exemplars = labels
        .iter()
        .map(|l| LabeledSample::gold(format!("an example of {}", l.name), None, l.label_id))
        .collect();
    TaskSpec {
        task_id: id.into(),
        kind: TaskKind::SingleClassification,
        description: "Short texts.".into(),
        labels,
        task_words: Some(words.iter().map(|w| w.to_string()).collect()),
        exemplars: Some(exemplars),
        language: "en".into(),
        templates: Templates {
            single: Some(PromptTemplate::new("{description}\n{exemplars}\nWrite 5 {label} texts.", Stage::Single)),
            kadg: Some(PromptTemplate::new("{description}\n{exemplars}\nWrite 5 {label} texts about {word}.", Stage::Single)),
            ..Default::default()
        },
        max_chars: 2000,
    }
}

/// Six-class discretized similarity task over sentence pairs.
pub fn regression_task() -> TaskSpec {
    let labels = (0..6u32)
        .map(|i| LabelSpec {
            label_id: i,
            name: i.to_string(),
            surface_form: format!("similarity {i}"),
            numeric_value: Some(f64::from(i)),
        })
        .collect();
    TaskSpec {
        task_id: "similarity".into(),
        kind: TaskKind::PairRegressionDiscretized,
        description: "Caption pairs.".into(),
        labels,
        task_words: None,
        exemplars: None,
        language: "en".into(),
        templates: Templates {
            pair_first: Some(PromptTemplate::new("{description}\nWrite 5 captions.", Stage::PairFirst)),
            pair_second: Some(PromptTemplate::new(
                "{description}\nCaption: {first_sentence}\nWrite a caption with {label}.",
                Stage::PairSecond,
            )),
            ..Default::default()
        },
        max_chars: 2000,
    }
}

/// Scripted HTTP server: answers each request with the next `(status,
/// body)` pair (repeating the last one), optionally after a delay, and
/// tracks how many requests are being handled at once.
pub struct FakeServer {
    pub url: String,
    pub requests: Arc<AtomicUsize>,
    pub max_concurrent: Arc<AtomicUsize>,
    pub bodies: Arc<Mutex<Vec<String>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<String> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).ok()? == 0 {
            return None;
        }
        let lower = line.to_ascii_lowercase();
        if let Some(v) = lower.strip_prefix("content-length:") {
            content_length = v.trim().parse().ok()?;
        }
        if line == "\r\n" {
            break;
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    String::from_utf8(body).ok()
}

impl FakeServer {
    pub fn start(script: Vec<(u16, String)>, delay: Duration) -> FakeServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let requests = Arc::new(AtomicUsize::new(0));
        let current = Arc::new(AtomicUsize::new(0));
        let max_concurrent = Arc::new(AtomicUsize::new(0));
        let bodies = Arc::new(Mutex::new(Vec::new()));
        let (r, m, b) = (requests.clone(), max_concurrent.clone(), bodies.clone());
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { continue };
                let (r, c, m, b, script) = (r.clone(), current.clone(), m.clone(), b.clone(), script.clone());
                thread::spawn(move || {
                    let Some(body) = read_request(&mut stream) else { return };
                    let now = c.fetch_add(1, Ordering::SeqCst) + 1;
                    m.fetch_max(now, Ordering::SeqCst);
                    let idx = r.fetch_add(1, Ordering::SeqCst);
                    b.lock().unwrap().push(body);
                    thread::sleep(delay);
                    let (status, payload) = script[idx.min(script.len() - 1)].clone();
                    c.fetch_sub(1, Ordering::SeqCst);
                    let reason = if status == 200 { "OK" } else { "Error" };
                    let resp = format!(
                        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                        payload.len()
                    );
                    let _ = stream.write_all(resp.as_bytes());
                    let _ = stream.flush();
                });
            }
        });
        FakeServer { url, requests, max_concurrent, bodies }
    }
}

pub fn chat_body(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string()
}
