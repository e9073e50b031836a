#![allow(dead_code)]

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabprep::eval::{Outcome, Prediction};
use tabprep::model::{DataInstance, Label, Record, Task};
use tabprep::parser::AnswerValue;
use tabprep::prompt::question_body;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(rel)
}

pub fn golden(name: &str) -> String {
    std::fs::read_to_string(fixture(&format!("golden/{name}"))).unwrap()
}

// ---------------------------------------------------------------------------
// Record text grammar
//
//   record := "[" cell ("," " " cell)* "]"
//   cell   := name ":" " " (quoted | "???")
//   quoted := '"' (escape | any char but '"' and '\')* '"'
//   escape := "\\\"" | "\\\\"

pub type Cells = Vec<(String, Option<String>)>;

/// Hand-written recursive descent over the grammar above. Attribute names
/// must not contain `:`.
pub fn parse_record_text(text: &str) -> Result<Cells, String> {
    let mut chars = text.chars().peekable();
    let expect = |chars: &mut std::iter::Peekable<std::str::Chars>, c: char| match chars.next() {
        Some(got) if got == c => Ok(()),
        other => Err(format!("expected {c:?}, got {other:?}")),
    };
    expect(&mut chars, '[')?;
    let mut cells = Vec::new();
    loop {
        let mut name = String::new();
        loop {
            match chars.next() {
                Some(':') => break,
                Some(c) => name.push(c),
                None => return Err("unterminated name".into()),
            }
        }
        expect(&mut chars, ' ')?;
        let value = if chars.peek() == Some(&'"') {
            chars.next();
            let mut v = String::new();
            loop {
                match chars.next() {
                    Some('"') => break,
                    Some('\\') => match chars.next() {
                        Some(c @ ('"' | '\\')) => v.push(c),
                        other => return Err(format!("bad escape {other:?}")),
                    },
                    Some(c) => v.push(c),
                    None => return Err("unterminated value".into()),
                }
            }
            Some(v)
        } else {
            for c in "???".chars() {
                expect(&mut chars, c)?;
            }
            None
        };
        cells.push((name, value));
        match chars.next() {
            Some(']') => break,
            Some(',') => expect(&mut chars, ' ')?,
            other => return Err(format!("expected `,` or `]`, got {other:?}")),
        }
    }
    if chars.next().is_some() {
        return Err("trailing input".into());
    }
    Ok(cells)
}

/// Independent writer for the same grammar, used to build expected prompt text.
pub fn write_record_text(cells: &[(&str, Option<&str>)]) -> String {
    let parts: Vec<String> = cells
        .iter()
        .map(|(name, value)| match value {
            Some(v) => format!(
                "{name}: \"{}\"",
                v.replace('\\', "\\\\").replace('"', "\\\"")
            ),
            None => format!("{name}: ???"),
        })
        .collect();
    format!("[{}]", parts.join(", "))
}

const VALUE_ALPHABET: &[&str] = &[
    "a", "Z", "0", "9", " ", ",", ":", "[", "]", "\"", "\\", "?", "???", "é", "ß", "日本", "🙂",
    "\t", "'", "\\\"", "-", "/", "null",
];

pub fn random_value(rng: &mut impl Rng) -> String {
    let len = rng.gen_range(0..12);
    (0..len)
        .map(|_| VALUE_ALPHABET[rng.gen_range(0..VALUE_ALPHABET.len())])
        .collect()
}

pub fn random_name(rng: &mut impl Rng, index: usize) -> String {
    const LETTERS: &[u8] = b"abcdefghijklmnopqrstuvwxyz_";
    let len = rng.gen_range(1..8);
    let stem: String = (0..len)
        .map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char)
        .collect();
    // record attribute names must be unique
    format!("{stem}{index}")
}

pub fn random_cells(rng: &mut impl Rng) -> Cells {
    let width = rng.gen_range(1..10);
    (0..width)
        .map(|i| {
            let value = if rng.gen_bool(0.2) {
                None
            } else {
                Some(random_value(rng))
            };
            (random_name(rng, i), value)
        })
        .collect()
}

pub fn record_from_cells(id: &str, cells: &Cells) -> Record {
    Record::from_pairs(id, cells.iter().map(|(n, v)| (n.as_str(), v.as_deref()))).unwrap()
}

// ---------------------------------------------------------------------------
// Brute-force metrics

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OracleMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Tallies every (prediction, gold) cell of a confusion matrix in which a
/// missing or unusable answer is treated as the wrong class.
pub fn oracle_metrics(preds: &[Prediction], gold: &BTreeMap<String, Label>) -> OracleMetrics {
    let mut matrix = [[0u64; 2]; 2]; // [said positive][is positive]
    let mut right = 0u64;
    for p in preds {
        let truth = &gold[&p.instance_id];
        match truth {
            Label::Boolean(t) => {
                let said = match &p.outcome {
                    Outcome::Answer(AnswerValue::Boolean(b)) => *b,
                    _ => !*t,
                };
                matrix[said as usize][*t as usize] += 1;
            }
            Label::Value(t) => {
                if let Outcome::Answer(AnswerValue::Value(v)) = &p.outcome {
                    let norm = |s: &str| {
                        s.to_lowercase()
                            .split_whitespace()
                            .collect::<Vec<_>>()
                            .join(" ")
                    };
                    if norm(v) == norm(t) {
                        right += 1;
                    }
                }
            }
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let tp = matrix[1][1];
    let precision = div(tp, matrix[1][1] + matrix[1][0]);
    let recall = div(tp, matrix[1][1] + matrix[0][1]);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    OracleMetrics {
        accuracy: div(right, preds.len() as u64),
        precision,
        recall,
        f1,
    }
}

// ---------------------------------------------------------------------------
// Census-style corpus

pub const ADULT_TARGET: &str = "age";

const WORKCLASS: &[&str] = &[
    "Private",
    "State-gov",
    "Self-emp-not-inc",
    "Federal-gov",
    "Local-gov",
];
const EDUCATION: &[&str] = &[
    "Bachelors",
    "HS-grad",
    "Masters",
    "Some-college",
    "Doctorate",
    "11th",
];
const OCCUPATION: &[&str] = &[
    "Adm-clerical",
    "Exec-managerial",
    "Tech-support",
    "Sales",
    "Craft-repair",
];
const COUNTRY: &[&str] = &["United-States", "Mexico", "Germany", "India", "Canada"];

pub fn adult_cells(rng: &mut impl Rng) -> Vec<(&'static str, String)> {
    let age = if rng.gen_bool(0.1) {
        rng.gen_range(150..999)
    } else {
        rng.gen_range(17..90)
    };
    vec![
        ("age", age.to_string()),
        (
            "workclass",
            WORKCLASS[rng.gen_range(0..WORKCLASS.len())].to_owned(),
        ),
        (
            "education",
            EDUCATION[rng.gen_range(0..EDUCATION.len())].to_owned(),
        ),
        (
            "occupation",
            OCCUPATION[rng.gen_range(0..OCCUPATION.len())].to_owned(),
        ),
        ("hoursperweek", rng.gen_range(1..99).to_string()),
        (
            "nativecountry",
            COUNTRY[rng.gen_range(0..COUNTRY.len())].to_owned(),
        ),
        (
            "income",
            if rng.gen_bool(0.25) { ">50K" } else { "<=50K" }.to_owned(),
        ),
    ]
}

/// `n` error-detection instances on `age`. Every question body has a byte
/// length that is not a multiple of four, so `Question k: ` prefixes with one
/// or two digit numbers round to the same token count.
pub fn adult_corpus(n: usize, seed: u64) -> Vec<DataInstance> {
    let task = Task::error_detection(ADULT_TARGET);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let cells = adult_cells(&mut rng);
        let age: u32 = cells[0].1.parse().unwrap();
        let record = Record::from_pairs(
            format!("adult:{}", out.len()),
            cells.iter().map(|(k, v)| (*k, Some(v.as_str()))),
        )
        .unwrap();
        let instance = DataInstance::tuple(format!("adult.csv:{}", out.len()), record)
            .with_gold(Label::Boolean(age > 120));
        if !question_body(&instance, &task)
            .unwrap()
            .len()
            .is_multiple_of(4)
        {
            out.push(instance);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Stub chat-completions server

pub struct StubServer {
    pub base_url: String,
    requests: Arc<Mutex<Vec<CapturedRequest>>>,
}

#[derive(Debug, Clone)]
pub struct CapturedRequest {
    pub request_line: String,
    pub headers: Vec<(String, String)>,
    pub body: String,
}

impl StubServer {
    /// Answers successive requests with `(status, body)` from `script`; the
    /// last entry repeats once the script runs out.
    pub fn start(script: Vec<(u16, String)>) -> StubServer {
        assert!(!script.is_empty());
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for (i, stream) in listener.incoming().enumerate() {
                let Ok(mut stream) = stream else { return };
                let Some(captured) = read_request(&mut stream) else {
                    continue;
                };
                seen.lock().unwrap().push(captured);
                let (status, body) = &script[i.min(script.len() - 1)];
                let reply = format!(
                    "HTTP/1.1 {status} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                );
                let _ = stream.write_all(reply.as_bytes());
            }
        });
        StubServer { base_url, requests }
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

fn read_request(stream: &mut std::net::TcpStream) -> Option<CapturedRequest> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut headers = Vec::new();
    let mut length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let (k, v) = (k.trim().to_owned(), v.trim().to_owned());
            if k.eq_ignore_ascii_case("content-length") {
                length = v.parse().ok()?;
            }
            headers.push((k, v));
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).ok()?;
    Some(CapturedRequest {
        request_line: request_line.trim_end().to_owned(),
        headers,
        body: String::from_utf8_lossy(&body).into_owned(),
    })
}

pub fn completion_body(content: &str, prompt_tokens: u64, completion_tokens: u64) -> String {
    serde_json::json!({
        "id": "chatcmpl-stub",
        "object": "chat.completion",
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}, "finish_reason": "stop"}],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": completion_tokens,
            "total_tokens": prompt_tokens + completion_tokens
        }
    })
    .to_string()
}
