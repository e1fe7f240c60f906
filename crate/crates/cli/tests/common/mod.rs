#![allow(dead_code)]

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_reshare"))
}

pub fn run_bin(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

pub fn bundled_corpus() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/corpus/corpus.ndjson")
}

/// A tiny OpenAI-compatible chat server on localhost. Every 37th request
/// gets a 429 so the client's retry path is exercised.
pub struct FakeChatServer {
    pub addr: SocketAddr,
    pub requests: Arc<AtomicUsize>,
    pub auth_headers: Arc<Mutex<HashSet<String>>>,
    pub image_requests: Arc<AtomicUsize>,
}

impl FakeChatServer {
    pub fn start() -> FakeChatServer {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let server = FakeChatServer {
            addr: listener.local_addr().unwrap(),
            requests: Arc::default(),
            auth_headers: Arc::default(),
            image_requests: Arc::default(),
        };
        let (requests, auth, images) = (
            server.requests.clone(),
            server.auth_headers.clone(),
            server.image_requests.clone(),
        );
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (requests, auth, images) = (requests.clone(), auth.clone(), images.clone());
                std::thread::spawn(move || serve(stream, &requests, &auth, &images));
            }
        });
        server
    }

    pub fn base_url(&self) -> String {
        format!("http://{}/v1", self.addr)
    }
}

fn serve(stream: TcpStream, requests: &AtomicUsize, auth: &Mutex<HashSet<String>>, images: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut out = stream;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let mut len = 0usize;
        let mut close = false;
        loop {
            let mut h = String::new();
            if reader.read_line(&mut h).unwrap_or(0) == 0 {
                return;
            }
            let h = h.trim_end();
            if h.is_empty() {
                break;
            }
            let (k, v) = h.split_once(':').unwrap_or((h, ""));
            let (k, v) = (k.trim().to_ascii_lowercase(), v.trim());
            match k.as_str() {
                "content-length" => len = v.parse().unwrap_or(0),
                "connection" => close = v.eq_ignore_ascii_case("close"),
                "authorization" => {
                    auth.lock().unwrap().insert(v.to_string());
                }
                _ => {}
            }
        }
        let mut body = vec![0u8; len];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        let n = requests.fetch_add(1, Ordering::SeqCst);
        let (status, payload) = if n % 37 == 5 {
            ("429 Too Many Requests", json!({"error": {"message": "slow down"}}))
        } else {
            let req: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
            let has_image = req.to_string().contains("image_url");
            if has_image {
                images.fetch_add(1, Ordering::SeqCst);
            }
            // Spread ratings over the scale, tilted upward when an image is attached.
            let mut level = 1 + (body.iter().map(|&b| b as usize).sum::<usize>() + n) % 5;
            if has_image && n.is_multiple_of(3) {
                level = (level + 1).min(5);
            }
            (
                "200 OK",
                json!({
                    "choices": [{
                        "message": {"role": "assistant", "content": format!("The user weighs the claim.\n\nL{level}")},
                        "finish_reason": "stop"
                    }],
                    "usage": {"prompt_tokens": 100, "completion_tokens": 8}
                }),
            )
        };
        let text = payload.to_string();
        let resp = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{text}",
            text.len()
        );
        if out.write_all(resp.as_bytes()).is_err() || close {
            return;
        }
    }
}

/// Exact rational in i128, enough for small hand-computed tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frac {
    pub num: i128,
    pub den: i128,
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl Frac {
    pub fn new(num: i128, den: i128) -> Frac {
        assert!(den != 0);
        let g = gcd(num, den).max(1) * den.signum();
        Frac { num: num / g, den: den / g }
    }
    pub fn int(n: i128) -> Frac {
        Frac::new(n, 1)
    }
    pub fn add(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den + o.num * self.den, self.den * o.den)
    }
    pub fn sub(self, o: Frac) -> Frac {
        self.add(Frac::new(-o.num, o.den))
    }
    pub fn mul(self, o: Frac) -> Frac {
        Frac::new(self.num * o.num, self.den * o.den)
    }
    pub fn div(self, o: Frac) -> Frac {
        Frac::new(self.num * o.den, self.den * o.num)
    }
    pub fn to_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}
