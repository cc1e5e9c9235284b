#![allow(dead_code)]


use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use editbench_core::dataset::TaskId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn editbench() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_editbench"));
    cmd.env_remove("RUST_LOG");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    editbench().args(args).output().expect("binary runs")
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

pub fn lines(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

pub fn write_jsonl(path: &Path, rows: &[Value]) {
    let mut f = fs::File::create(path).unwrap();
    for row in rows {
        writeln!(f, "{row}").unwrap();
    }
}

pub fn write_png(path: &Path, size: u32, seed: u32) {
    let img = image::RgbImage::from_fn(size, size, |x, y| {
        image::Rgb([
            ((x * 7 + y * 3 + seed * 11) % 256) as u8,
            ((x * y + seed * 5) % 256) as u8,
            ((x + 2 * y + seed) % 256) as u8,
        ])
    });
    img.save(path).unwrap();
}

pub fn manifest_row(id: &str, model: &str, task: TaskId, src: &str, edit: &str) -> Value {
    json!({
        "item_id": id,
        "source_image": src,
        "edited_image": edit,
        "editing_model": model,
        "task": task.as_str(),
        "instruction": format!("edit {id}"),
        "source_description": "",
        "target_description": "",
        "qa_question": "Was the edit applied?",
    })
}

pub fn rating_row(subject: &str, item: &str, scores: [f64; 3], yes: bool) -> Value {
    json!({
        "subject_id": subject,
        "item_id": item,
        "quality": scores[0],
        "alignment": scores[1],
        "preservation": scores[2],
        "qa_answer": yes,
        "submitted_at": "2025-03-01T12:00:00Z",
    })
}

/// A small study on disk: distinct 16x16 image pairs, four models, and a
/// full panel of seeded ratings.
pub struct Study {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub ratings: PathBuf,
    pub items: Vec<String>,
}

impl Study {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn arg(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

pub fn study(items: usize, subjects: usize, seed: u64) -> Study {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut manifest = Vec::new();
    let mut ids = Vec::new();
    for i in 0..items {
        let id = format!("it{i:03}");
        let (src, edit) = (format!("{id}_src.png"), format!("{id}_edit.png"));
        write_png(&dir.path().join(&src), 16, i as u32);
        write_png(&dir.path().join(&edit), 16, (i as u32) * 3 + 1);
        manifest.push(manifest_row(&id, &format!("model-{}", i % 4), TaskId::ALL[i % 21], &src, &edit));
        ids.push(id);
    }
    let manifest_path = dir.path().join("manifest.jsonl");
    write_jsonl(&manifest_path, &manifest);

    let levels: Vec<[f64; 3]> = (0..items)
        .map(|_| [rng.random_range(1.5..4.5), rng.random_range(1.5..4.5), rng.random_range(1.5..4.5)])
        .collect();
    let mut ratings = Vec::new();
    for s in 0..subjects {
        let bias: f64 = rng.random_range(-0.4..0.4);
        for (id, level) in ids.iter().zip(&levels) {
            let mut scores = [0.0; 3];
            for d in 0..3 {
                let v = level[d] + bias + rng.random_range(-0.3..0.3);
                scores[d] = (v.clamp(1.0, 5.0) * 1000.0).round() / 1000.0;
            }
            ratings.push(rating_row(&format!("s{s:02}"), id, scores, rng.random_bool(0.6)));
        }
    }
    let ratings_path = dir.path().join("ratings.jsonl");
    write_jsonl(&ratings_path, &ratings);
    Study {
        dir,
        manifest: manifest_path,
        ratings: ratings_path,
        items: ids,
    }
}

/// Runs `mos` on the study, leaving mos.jsonl and qa.jsonl beside it.
pub fn with_mos(study: &Study) {
    let out = run(&[
        "mos",
        "--ratings",
        study.ratings.to_str().unwrap(),
        "--mos-out",
        &study.arg("mos.jsonl"),
        "--qa-out",
        &study.arg("qa.jsonl"),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

/// A long-running subcommand whose first stdout line announces its URL.
pub struct Server {
    pub child: Child,
    pub url: String,
}

impl Server {
    pub fn start(mut cmd: Command) -> Result<Server, Output> {
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::piped()).spawn().unwrap();
        let mut first = String::new();
        BufReader::new(child.stdout.as_mut().unwrap()).read_line(&mut first).unwrap();
        if first.is_empty() {
            return Err(child.wait_with_output().unwrap());
        }
        let line: Value = serde_json::from_str(&first).unwrap();
        assert_eq!(line["kind"], "listening");
        let url = line["url"].as_str().unwrap().to_string();
        Ok(Server { child, url })
    }

    /// Sends SIGTERM and waits for the exit status.
    pub fn stop(mut self) -> std::process::ExitStatus {
        let pid = self.child.id().to_string();
        Command::new("kill").args(["-TERM", &pid]).status().unwrap();
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
    }
}

/// Minimal blocking HTTP/1.1 client: one request per connection, bodies
/// with a content length only.
pub fn http(method: &str, url: &str, body: Option<&Value>) -> (u16, String) {
    use std::io::Read;
    let rest = url.strip_prefix("http://").unwrap();
    let (host, path) = match rest.find('/') {
        Some(i) => (&rest[..i], &rest[i..]),
        None => (rest, "/"),
    };
    let payload = body.map(|b| b.to_string()).unwrap_or_default();
    let mut stream = std::net::TcpStream::connect(host).unwrap();
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: {host}\r\nConnection: close\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{payload}",
        payload.len()
    )
    .unwrap();
    let mut buf = String::new();
    stream.read_to_string(&mut buf).unwrap();
    let status = buf.split_whitespace().nth(1).unwrap().parse().unwrap();
    let body = buf.split_once("\r\n\r\n").map(|(_, b)| b.to_string()).unwrap_or_default();
    (status, body)
}

pub fn http_get(url: &str) -> (u16, String) {
    http("GET", url, None)
}
