#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use ctmap::envmodel::{generate_random_environment, GenParams};
use ctmap::gridgraph::DEFAULT_EPSILON;
use ctmap::{build_graph, compute_coverage, CellId, CoverageMap, GridGraph, PropagationParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small seeded city: 15x15 m at 1 m cells, a few blocks, two stations.
pub fn small_city(seed: u64) -> (CoverageMap, GridGraph) {
    let params = GenParams {
        width_m: 15.0,
        height_m: 15.0,
        blocks: 5,
        block_min_m: 2.0,
        block_max_m: 4.0,
        stations: 2,
    };
    let (env, stations) = generate_random_environment(seed, &params).expect("generate");
    let map = compute_coverage(&env, &stations, &PropagationParams::default()).expect("coverage");
    let graph = build_graph(&map, DEFAULT_EPSILON).expect("graph");
    (map, graph)
}

/// A random pair of distinct nodes in the same connected component.
pub fn reachable_pair(graph: &GridGraph, seed: u64) -> Option<(CellId, CellId)> {
    let labels = graph.component_labels();
    let nodes: Vec<CellId> = (0..graph.cols() * graph.rows())
        .map(|i| graph.cell(i))
        .filter(|&c| graph.is_node(c))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..1000 {
        let s = nodes[rng.random_range(0..nodes.len())];
        let d = nodes[rng.random_range(0..nodes.len())];
        if s != d && labels[graph.index(s)] == labels[graph.index(d)] {
            return Some((s, d));
        }
    }
    None
}

/// Canned HTTP reply for the stub server.
#[derive(Clone)]
pub struct Reply {
    pub status: u16,
    pub body: String,
    pub delay: Duration,
}

impl Reply {
    pub fn ok_content(content: &str) -> Self {
        let body = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        });
        Self {
            status: 200,
            body: body.to_string(),
            delay: Duration::ZERO,
        }
    }

    pub fn status(status: u16) -> Self {
        Self {
            status,
            body: "{}".into(),
            delay: Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Seen {
    pub authorization: Option<String>,
    pub content_type: Option<String>,
    pub body: String,
}

/// One-shot scripted HTTP server. Each connection gets the next reply; the
/// last reply repeats once the script runs out.
pub struct StubServer {
    pub url: String,
    pub requests: Arc<Mutex<Vec<Seen>>>,
}

impl StubServer {
    pub fn start(script: Vec<Reply>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let requests = Arc::new(Mutex::new(Vec::new()));
        let seen = Arc::clone(&requests);
        thread::spawn(move || {
            for (n, stream) in listener.incoming().enumerate() {
                let Ok(stream) = stream else { continue };
                let reply = script[n.min(script.len() - 1)].clone();
                let seen = Arc::clone(&seen);
                thread::spawn(move || serve(stream, reply, seen));
            }
        });
        Self { url, requests }
    }

    pub fn hits(&self) -> usize {
        self.requests.lock().unwrap().len()
    }
}

fn serve(stream: TcpStream, reply: Reply, seen: Arc<Mutex<Vec<Seen>>>) {
    let mut reader = BufReader::new(stream.try_clone().expect("clone"));
    let mut length = 0usize;
    let mut authorization = None;
    let mut content_type = None;
    loop {
        let mut line = String::new();
        if reader.read_line(&mut line).unwrap_or(0) == 0 {
            return;
        }
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            let v = v.trim().to_string();
            match k.to_ascii_lowercase().as_str() {
                "content-length" => length = v.parse().unwrap_or(0),
                "authorization" => authorization = Some(v),
                "content-type" => content_type = Some(v),
                _ => {}
            }
        }
    }
    let mut body = vec![0u8; length];
    if reader.read_exact(&mut body).is_err() {
        return;
    }
    seen.lock().unwrap().push(Seen {
        authorization,
        content_type,
        body: String::from_utf8_lossy(&body).into_owned(),
    });
    thread::sleep(reply.delay);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {} Stub\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        reply.status,
        reply.body.len(),
        reply.body
    );
    let _ = stream.flush();
}
